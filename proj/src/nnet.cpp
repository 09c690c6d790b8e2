#include "prefsearch/nnet.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace prefsearch::nnet {

DenseNet::DenseNet(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const auto& l = layers_[i];
        if (l.bias.size() != l.out_dim()) throw std::invalid_argument("DenseNet: bias size mismatch in layer " + std::to_string(i));
        if (i > 0 && layers_[i - 1].out_dim() != l.in_dim()) {
            throw std::invalid_argument("DenseNet: layer " + std::to_string(i) + " expects " + std::to_string(l.in_dim()) +
                                        " inputs, previous layer emits " + std::to_string(layers_[i - 1].out_dim()));
        }
    }
}

DenseNet DenseNet::glorot(Eigen::Index input_dim, const std::vector<LayerSpec>& specs, std::mt19937_64& rng) {
    std::vector<DenseLayer> layers;
    Eigen::Index in = input_dim;
    for (const auto& spec : specs) {
        const double limit = std::sqrt(6.0 / static_cast<double>(in + spec.out_dim));
        std::uniform_real_distribution<double> u(-limit, limit);
        DenseLayer layer;
        layer.weight.resize(spec.out_dim, in);
        for (Eigen::Index c = 0; c < in; ++c) {
            for (Eigen::Index r = 0; r < spec.out_dim; ++r) layer.weight(r, c) = u(rng);
        }
        layer.bias = Vector::Zero(spec.out_dim);
        layer.activation = spec.activation;
        layers.push_back(std::move(layer));
        in = spec.out_dim;
    }
    return DenseNet(std::move(layers));
}

Eigen::Index DenseNet::parameter_count() const {
    Eigen::Index n = 0;
    for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
    return n;
}

bool DenseNet::all_finite() const {
    return std::all_of(layers_.begin(), layers_.end(),
                       [](const DenseLayer& l) { return l.weight.allFinite() && l.bias.allFinite(); });
}

bool DenseNet::operator==(const DenseNet& other) const {
    if (layers_.size() != other.layers_.size()) return false;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const auto &a = layers_[i], &b = other.layers_[i];
        if (a.activation != b.activation || a.weight.rows() != b.weight.rows() || a.weight.cols() != b.weight.cols() ||
            a.weight != b.weight || a.bias != b.bias) {
            return false;
        }
    }
    return true;
}

GradientSet GradientSet::zeros_like(const DenseNet& net) {
    GradientSet g;
    for (const auto& l : net.layers()) {
        g.layers.push_back({Matrix::Zero(l.weight.rows(), l.weight.cols()), Vector::Zero(l.bias.size())});
    }
    return g;
}

GradientSet& GradientSet::operator+=(const GradientSet& other) {
    if (other.layers.size() != layers.size()) throw std::invalid_argument("GradientSet: shape mismatch");
    for (std::size_t i = 0; i < layers.size(); ++i) {
        layers[i].weight += other.layers[i].weight;
        layers[i].bias += other.layers[i].bias;
    }
    return *this;
}

double GradientSet::squared_norm() const {
    double s = 0.0;
    for (const auto& l : layers) s += l.weight.squaredNorm() + l.bias.squaredNorm();
    return s;
}

ForwardResult forward(const DenseNet& net, const Matrix& input) {
    if (input.rows() != net.input_dim()) {
        throw std::invalid_argument("forward: input has " + std::to_string(input.rows()) + " rows, network expects " +
                                    std::to_string(net.input_dim()));
    }
    ForwardResult result;
    Matrix x = input;
    for (const auto& layer : net.layers()) {
        Matrix pre = layer.weight * x;
        pre.colwise() += layer.bias;
        result.cache.inputs.push_back(std::move(x));
        x = layer.activation == Activation::Relu ? Matrix(pre.cwiseMax(0.0)) : pre;
        result.cache.preactivations.push_back(std::move(pre));
    }
    result.output = std::move(x);
    return result;
}

BackwardResult backward(const DenseNet& net, const ForwardCache& cache, const Matrix& output_gradient) {
    const auto& layers = net.layers();
    if (cache.inputs.size() != layers.size() || cache.preactivations.size() != layers.size()) {
        throw std::invalid_argument("backward: cache does not match network depth");
    }
    if (!layers.empty() && (output_gradient.rows() != net.output_dim() ||
                            output_gradient.cols() != cache.preactivations.back().cols())) {
        throw std::invalid_argument("backward: output gradient shape does not match cached forward pass");
    }
    BackwardResult result;
    result.grads.layers.resize(layers.size());
    Matrix grad = output_gradient;
    for (std::size_t k = layers.size(); k-- > 0;) {
        const auto& layer = layers[k];
        const Matrix& pre = cache.preactivations[k];
        const Matrix& in = cache.inputs[k];
        if (pre.rows() != layer.out_dim() || in.rows() != layer.in_dim() || pre.cols() != grad.cols()) {
            throw std::invalid_argument("backward: stale cache at layer " + std::to_string(k));
        }
        if (layer.activation == Activation::Relu) grad = grad.cwiseProduct((pre.array() > 0.0).cast<double>().matrix());
        result.grads.layers[k].weight.noalias() = grad * in.transpose();
        result.grads.layers[k].bias = grad.rowwise().sum();
        Matrix next = layer.weight.transpose() * grad;
        grad = std::move(next);
    }
    result.input_gradient = std::move(grad);
    return result;
}

AdamState AdamState::for_net(const DenseNet& net, double learning_rate, double beta1, double beta2, double epsilon) {
    AdamState s;
    s.learning_rate = learning_rate;
    s.beta1 = beta1;
    s.beta2 = beta2;
    s.epsilon = epsilon;
    s.first_moment = GradientSet::zeros_like(net);
    s.second_moment = GradientSet::zeros_like(net);
    return s;
}

namespace {

template <typename Param, typename Grad>
void adam_block(Param& param, const Grad& g, Grad& m, Grad& v, const AdamState& s, double c1, double c2) {
    m = s.beta1 * m + (1.0 - s.beta1) * g;
    v = s.beta2 * v + (1.0 - s.beta2) * g.cwiseAbs2();
    param.array() -= s.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + s.epsilon);
}

}  // namespace

void adam_step(DenseNet& net, const GradientSet& grads, AdamState& state) {
    auto& layers = net.layers();
    if (grads.layers.size() != layers.size() || state.first_moment.layers.size() != layers.size()) {
        throw std::invalid_argument("adam_step: gradient/state shape mismatch");
    }
    ++state.step;
    const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < layers.size(); ++i) {
        adam_block(layers[i].weight, grads.layers[i].weight, state.first_moment.layers[i].weight,
                   state.second_moment.layers[i].weight, state, c1, c2);
        adam_block(layers[i].bias, grads.layers[i].bias, state.first_moment.layers[i].bias,
                   state.second_moment.layers[i].bias, state, c1, c2);
    }
}

std::vector<ParameterProbe> sample_probes(DenseNet& net, const GradientSet& grads, std::size_t count,
                                          std::mt19937_64& rng) {
    std::vector<ParameterProbe> all;
    auto& layers = net.layers();
    for (std::size_t i = 0; i < layers.size(); ++i) {
        for (Eigen::Index k = 0; k < layers[i].weight.size(); ++k) {
            all.push_back({layers[i].weight.data() + k, grads.layers[i].weight.data()[k]});
        }
        for (Eigen::Index k = 0; k < layers[i].bias.size(); ++k) {
            all.push_back({layers[i].bias.data() + k, grads.layers[i].bias.data()[k]});
        }
    }
    if (all.size() <= count) return all;
    std::vector<ParameterProbe> picked;
    std::sample(all.begin(), all.end(), std::back_inserter(picked), count, rng);
    return picked;
}

double grad_check(const std::function<double()>& loss_fn, const std::vector<ParameterProbe>& probes, double h,
                  double floor) {
    double worst = 0.0;
    for (const auto& probe : probes) {
        const double saved = *probe.value;
        *probe.value = saved + h;
        const double up = loss_fn();
        *probe.value = saved - h;
        const double down = loss_fn();
        *probe.value = saved;
        const double numeric = (up - down) / (2.0 * h);
        const double denom = std::max({std::abs(probe.analytic), std::abs(numeric), floor});
        worst = std::max(worst, std::abs(probe.analytic - numeric) / denom);
    }
    return worst;
}

nlohmann::json to_json(const DenseNet& net) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : net.layers()) {
        std::vector<double> w(l.weight.size());
        // Row-major so the JSON reads as out rows of in weights.
        Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(w.data(), l.weight.rows(),
                                                                                           l.weight.cols()) = l.weight;
        layers.push_back({{"in", l.in_dim()},
                          {"out", l.out_dim()},
                          {"activation", l.activation == Activation::Relu ? "relu" : "identity"},
                          {"weight", w},
                          {"bias", std::vector<double>(l.bias.data(), l.bias.data() + l.bias.size())}});
    }
    return layers;
}

DenseNet dense_net_from_json(const nlohmann::json& j) {
    std::vector<DenseLayer> layers;
    for (const auto& jl : j) {
        const auto in = jl.at("in").get<Eigen::Index>();
        const auto out = jl.at("out").get<Eigen::Index>();
        const auto act = jl.at("activation").get<std::string>();
        if (act != "relu" && act != "identity") throw std::invalid_argument("unknown activation '" + act + "'");
        const auto w = jl.at("weight").get<std::vector<double>>();
        const auto b = jl.at("bias").get<std::vector<double>>();
        if (static_cast<Eigen::Index>(w.size()) != in * out || static_cast<Eigen::Index>(b.size()) != out) {
            throw std::invalid_argument("checkpoint layer parameter count does not match its shape");
        }
        DenseLayer l;
        l.weight = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(w.data(), out, in);
        l.bias = Eigen::Map<const Vector>(b.data(), out);
        l.activation = act == "relu" ? Activation::Relu : Activation::Identity;
        layers.push_back(std::move(l));
    }
    return DenseNet(std::move(layers));
}

}  // namespace prefsearch::nnet
