#pragma once

// Dense feed-forward networks with hand-written reverse mode and Adam.
// Batches are column-major: one sample per column.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <random>
#include <vector>

#include <Eigen/Core>

#include <json.hpp>

namespace prefsearch::nnet {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Activation { Relu, Identity };

struct DenseLayer {
    Matrix weight;  // out x in
    Vector bias;    // out
    Activation activation = Activation::Identity;

    Eigen::Index in_dim() const { return weight.cols(); }
    Eigen::Index out_dim() const { return weight.rows(); }
};

struct LayerSpec {
    Eigen::Index out_dim;
    Activation activation;
};

class DenseNet {
public:
    DenseNet() = default;
    explicit DenseNet(std::vector<DenseLayer> layers);

    /// Glorot-uniform weights in +-sqrt(6/(fan_in+fan_out)), zero biases.
    static DenseNet glorot(Eigen::Index input_dim, const std::vector<LayerSpec>& specs, std::mt19937_64& rng);

    const std::vector<DenseLayer>& layers() const { return layers_; }
    std::vector<DenseLayer>& layers() { return layers_; }

    Eigen::Index input_dim() const { return layers_.empty() ? 0 : layers_.front().in_dim(); }
    Eigen::Index output_dim() const { return layers_.empty() ? 0 : layers_.back().out_dim(); }
    Eigen::Index parameter_count() const;
    bool all_finite() const;

    bool operator==(const DenseNet& other) const;

private:
    std::vector<DenseLayer> layers_;
};

struct ForwardCache {
    std::vector<Matrix> inputs;          // input to each layer
    std::vector<Matrix> preactivations;  // affine output of each layer
};

struct ForwardResult {
    Matrix output;
    ForwardCache cache;
};

struct LayerGradient {
    Matrix weight;
    Vector bias;
};

struct GradientSet {
    std::vector<LayerGradient> layers;

    static GradientSet zeros_like(const DenseNet& net);
    GradientSet& operator+=(const GradientSet& other);
    double squared_norm() const;
};

struct BackwardResult {
    GradientSet grads;
    Matrix input_gradient;
};

ForwardResult forward(const DenseNet& net, const Matrix& input);
BackwardResult backward(const DenseNet& net, const ForwardCache& cache, const Matrix& output_gradient);

struct AdamState {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::int64_t step = 0;
    GradientSet first_moment;
    GradientSet second_moment;

    static AdamState for_net(const DenseNet& net, double learning_rate, double beta1 = 0.9, double beta2 = 0.999,
                             double epsilon = 1e-8);
};

void adam_step(DenseNet& net, const GradientSet& grads, AdamState& state);

/// One coordinate to probe: the parameter's storage and its analytic gradient.
struct ParameterProbe {
    double* value;
    double analytic;
};

/// Picks up to `count` coordinates uniformly (without replacement) across all
/// parameter blocks of `net`, pairing each with its entry in `grads`.
std::vector<ParameterProbe> sample_probes(DenseNet& net, const GradientSet& grads, std::size_t count,
                                          std::mt19937_64& rng);

/// Central differences on every probe; returns the max relative error
/// |analytic - numeric| / max(|analytic|, |numeric|, floor). Parameters are
/// restored on return.
double grad_check(const std::function<double()>& loss_fn, const std::vector<ParameterProbe>& probes, double h = 1e-4,
                  double floor = 1e-6);

nlohmann::json to_json(const DenseNet& net);
DenseNet dense_net_from_json(const nlohmann::json& j);

}  // namespace prefsearch::nnet
