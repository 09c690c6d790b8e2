#include "prefsearch/vae.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "prefsearch/dataio.hpp"

namespace prefsearch::vae {

using nlohmann::json;

std::string to_string(Objective o) {
    switch (o) {
        case Objective::Bayesian: return "bayesian";
        case Objective::Traditional: return "traditional";
        case Objective::Unsupervised: return "unsupervised";
    }
    return "unknown";
}

Objective objective_from_string(const std::string& name) {
    std::string s = name;
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (s == "bayesian") return Objective::Bayesian;
    if (s == "traditional") return Objective::Traditional;
    if (s == "unsupervised") return Objective::Unsupervised;
    throw std::invalid_argument("unknown objective '" + name + "'");
}

void LatentSplit::validate() const {
    if (r_dim < 1) throw std::invalid_argument("LatentSplit: r_dim must be >= 1");
    if (z_dim < 0) throw std::invalid_argument("LatentSplit: z_dim must be >= 0");
}

void VaeShape::validate() const {
    latent.validate();
    if (image_dim < 1) throw std::invalid_argument("VaeShape: image_dim must be >= 1");
    for (int h : hidden) {
        if (h < 1) throw std::invalid_argument("VaeShape: hidden sizes must be >= 1");
    }
}

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw std::invalid_argument("TrainConfig: learning_rate must be > 0");
    if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
    if (batch_size < 1 || triplet_batch_size < 1) throw std::invalid_argument("TrainConfig: batch sizes must be >= 1");
    if (!(kl_beta >= 0.0) || !(triplet_beta >= 0.0)) throw std::invalid_argument("TrainConfig: betas must be >= 0");
    if (!(triplet_margin >= 0.0)) throw std::invalid_argument("TrainConfig: triplet_margin must be >= 0");
}

void to_json(json& j, const TrainConfig& c) {
    j = json{{"learning_rate", c.learning_rate}, {"epochs", c.epochs},
             {"batch_size", c.batch_size},       {"triplet_batch_size", c.triplet_batch_size},
             {"kl_beta", c.kl_beta},             {"triplet_beta", c.triplet_beta},
             {"triplet_margin", c.triplet_margin}, {"objective", to_string(c.objective)},
             {"kl_reduction", c.kl_reduction == KlReduction::MeanOverDims ? "mean" : "sum"},
             {"seed", c.seed}};
}

void from_json(const json& j, TrainConfig& c) {
    TrainConfig d;
    c.learning_rate = j.value("learning_rate", d.learning_rate);
    c.epochs = j.value("epochs", d.epochs);
    c.batch_size = j.value("batch_size", d.batch_size);
    c.triplet_batch_size = j.value("triplet_batch_size", d.triplet_batch_size);
    c.kl_beta = j.value("kl_beta", d.kl_beta);
    c.triplet_beta = j.value("triplet_beta", d.triplet_beta);
    c.triplet_margin = j.value("triplet_margin", d.triplet_margin);
    c.objective = objective_from_string(j.value("objective", to_string(d.objective)));
    c.seed = j.value("seed", d.seed);
    const auto reduction = j.value("kl_reduction", std::string("mean"));
    if (reduction != "mean" && reduction != "sum") throw std::invalid_argument("kl_reduction must be 'mean' or 'sum'");
    c.kl_reduction = reduction == "mean" ? KlReduction::MeanOverDims : KlReduction::SumOverDims;
}

VaeModel VaeModel::initialize(const VaeShape& shape, Rng& rng) {
    shape.validate();
    using nnet::Activation;
    const int latent = shape.latent.total();
    std::vector<nnet::LayerSpec> enc, dec;
    for (int h : shape.hidden) enc.push_back({h, Activation::Relu});
    enc.push_back({2 * latent, Activation::Identity});
    for (auto it = shape.hidden.rbegin(); it != shape.hidden.rend(); ++it) dec.push_back({*it, Activation::Relu});
    dec.push_back({shape.image_dim, Activation::Identity});

    VaeModel m;
    m.shape = shape;
    m.encoder = nnet::DenseNet::glorot(shape.image_dim, enc, rng);
    m.decoder = nnet::DenseNet::glorot(latent, dec, rng);
    return m;
}

namespace {

Matrix sigmoid(const Matrix& logits) { return (1.0 / (1.0 + (-logits.array()).exp())).matrix(); }

Eigen::VectorXd image_column(const Image& img) { return img.as_vector(); }

}  // namespace

Encoding encode_full(const VaeModel& model, const Image& img) {
    const int r = model.shape.latent.r_dim, z = model.shape.latent.z_dim, l = model.shape.latent.total();
    const Matrix out = nnet::forward(model.encoder, image_column(img)).output;
    const Eigen::VectorXd mu = out.col(0).head(l);
    const Eigen::VectorXd sigma = (0.5 * out.col(0).segment(l, l).array()).exp().matrix();
    return Encoding{GaussianEmbedding(mu.head(r), sigma.head(r)), GaussianEmbedding(mu.tail(z), sigma.tail(z))};
}

GaussianEmbedding encode(const VaeModel& model, const Image& img) { return encode_full(model, img).r; }

Matrix encode_means(const VaeModel& model, const Matrix& images) {
    return nnet::forward(model.encoder, images).output.topRows(model.shape.latent.r_dim);
}

Eigen::VectorXd reparameterize(const GaussianEmbedding& e, Rng& rng) {
    std::normal_distribution<double> z(0.0, 1.0);
    Eigen::VectorXd out(e.dim());
    for (Eigen::Index d = 0; d < e.dim(); ++d) out[d] = e.mu[d] + e.sigma[d] * z(rng);
    return out;
}

Matrix decode_batch(const VaeModel& model, const Matrix& latents) {
    return sigmoid(nnet::forward(model.decoder, latents).output);
}

Image decode(const VaeModel& model, const Eigen::VectorXd& r, const Eigen::VectorXd& z) {
    if (r.size() != model.shape.latent.r_dim || z.size() != model.shape.latent.z_dim) {
        throw std::invalid_argument("decode: expected r of size " + std::to_string(model.shape.latent.r_dim) +
                                    " and z of size " + std::to_string(model.shape.latent.z_dim));
    }
    if (model.shape.image_dim != kImagePixels) throw std::invalid_argument("decode: model does not emit 28x28 images");
    Eigen::VectorXd latent(r.size() + z.size());
    latent << r, z;
    const Matrix px = decode_batch(model, latent);
    Image img;
    for (int i = 0; i < kImagePixels; ++i) img.pixels()[i] = std::clamp(px(i, 0), 0.0, 1.0);
    return img;
}

double kl_term(const GaussianEmbedding& e) {
    const auto var = e.sigma.array().square();
    return 0.5 * (var + e.mu.array().square() - 1.0 - var.log()).sum();
}

double traditional_triplet_loss(const Eigen::VectorXd& mu_a, const Eigen::VectorXd& mu_p, const Eigen::VectorXd& mu_n,
                                double margin) {
    if (mu_a.size() != mu_p.size() || mu_a.size() != mu_n.size()) {
        throw std::invalid_argument("traditional_triplet_loss: dimension mismatch");
    }
    return std::max(0.0, (mu_a - mu_p).squaredNorm() - (mu_a - mu_n).squaredNorm() + margin);
}

double bayesian_triplet_nll(const GaussianEmbedding& a, const GaussianEmbedding& p, const GaussianEmbedding& n,
                            double margin, BtlGradient* grad) {
    TauMomentGradient mg;
    const TauMoments tau = tau_moments(a, p, n, grad ? &mg : nullptr);
    const double prob = gaussian_tau_probability(tau, margin);
    const double sd = tau.stddev();
    double value;
    double dl_dz = 0.0;
    if (prob <= kProbabilityFloor) {
        value = -std::log(kProbabilityFloor);
    } else if (sd > 0.0) {
        const double z = (-margin - tau.mean) / sd;
        value = -log_normal_cdf(z);
        dl_dz = -normal_hazard_ratio(z);
    } else {
        value = -std::log(prob);
    }
    if (grad) {
        double dl_dmean = 0.0, dl_dvar = 0.0;
        if (sd > 0.0 && dl_dz != 0.0) {
            const double z = (-margin - tau.mean) / sd;
            dl_dmean = dl_dz * (-1.0 / sd);
            dl_dvar = dl_dz * (-z / (2.0 * tau.variance));
        }
        grad->a_mu = dl_dmean * mg.mean_d_star_mu + dl_dvar * mg.var_d_star_mu;
        grad->a_sigma = dl_dmean * mg.mean_d_star_sigma + dl_dvar * mg.var_d_star_sigma;
        grad->p_mu = dl_dmean * mg.mean_d_p_mu + dl_dvar * mg.var_d_p_mu;
        grad->p_sigma = dl_dmean * mg.mean_d_p_sigma + dl_dvar * mg.var_d_p_sigma;
        grad->n_mu = dl_dmean * mg.mean_d_n_mu + dl_dvar * mg.var_d_n_mu;
        grad->n_sigma = dl_dmean * mg.mean_d_n_sigma + dl_dvar * mg.var_d_n_sigma;
    }
    return value;
}

namespace {

/// Triplet term and its gradient with respect to the encoder outputs
/// ([mu; logvar] rows) of the stacked [anchors | positives | negatives].
double triplet_term(const Matrix& enc_out, Eigen::Index t_count, int r_dim, int latent, const TrainConfig& config,
                    Matrix& d_enc_out) {
    d_enc_out = Matrix::Zero(enc_out.rows(), enc_out.cols());
    if (t_count == 0 || config.objective == Objective::Unsupervised) return 0.0;
    double total = 0.0;
    const double scale = 1.0 / static_cast<double>(t_count);
    for (Eigen::Index t = 0; t < t_count; ++t) {
        const Eigen::Index ia = t, ip = t_count + t, in = 2 * t_count + t;
        if (config.objective == Objective::Traditional) {
            const Eigen::VectorXd a = enc_out.col(ia).head(r_dim);
            const Eigen::VectorXd p = enc_out.col(ip).head(r_dim);
            const Eigen::VectorXd n = enc_out.col(in).head(r_dim);
            const double loss = traditional_triplet_loss(a, p, n, config.triplet_margin);
            total += loss;
            if (loss > 0.0) {
                d_enc_out.col(ia).head(r_dim) = scale * 2.0 * (n - p);
                d_enc_out.col(ip).head(r_dim) = scale * -2.0 * (a - p);
                d_enc_out.col(in).head(r_dim) = scale * 2.0 * (a - n);
            }
        } else {
            auto gaussian = [&](Eigen::Index col) {
                return GaussianEmbedding(enc_out.col(col).head(r_dim),
                                         (0.5 * enc_out.col(col).segment(latent, r_dim).array()).exp().matrix());
            };
            const GaussianEmbedding a = gaussian(ia), p = gaussian(ip), n = gaussian(in);
            BtlGradient g;
            total += bayesian_triplet_nll(a, p, n, config.triplet_margin, &g);
            // d sigma / d logvar = sigma / 2
            d_enc_out.col(ia).head(r_dim) = scale * g.a_mu;
            d_enc_out.col(ia).segment(latent, r_dim) = scale * 0.5 * g.a_sigma.cwiseProduct(a.sigma);
            d_enc_out.col(ip).head(r_dim) = scale * g.p_mu;
            d_enc_out.col(ip).segment(latent, r_dim) = scale * 0.5 * g.p_sigma.cwiseProduct(p.sigma);
            d_enc_out.col(in).head(r_dim) = scale * g.n_mu;
            d_enc_out.col(in).segment(latent, r_dim) = scale * 0.5 * g.n_sigma.cwiseProduct(n.sigma);
        }
    }
    return total * scale;
}

}  // namespace

ObjectiveResult vae_objective(const VaeModel& model, const Matrix& images, const TripletBatch& triplets,
                              const TrainConfig& config, const Matrix& noise) {
    const int latent = model.shape.latent.total();
    const int r_dim = model.shape.latent.r_dim;
    const Eigen::Index batch = images.cols();
    if (batch < 1) throw std::invalid_argument("vae_objective: empty image batch");
    if (noise.rows() != latent || noise.cols() != batch) throw std::invalid_argument("vae_objective: noise shape mismatch");

    ObjectiveResult result;

    // Reconstruction + KL on the image batch.
    const auto enc = nnet::forward(model.encoder, images);
    const Matrix mu = enc.output.topRows(latent);
    const Matrix logvar = enc.output.bottomRows(latent);
    const Matrix sigma = (0.5 * logvar.array()).exp().matrix();
    const Matrix sample = mu + sigma.cwiseProduct(noise);

    const auto dec = nnet::forward(model.decoder, sample);
    const Matrix recon = sigmoid(dec.output);
    const Matrix diff = recon - images;
    const double pixel_scale = 1.0 / (static_cast<double>(images.rows()) * static_cast<double>(batch));
    result.parts.recon = diff.squaredNorm() * pixel_scale;

    const double b_scale = 1.0 / static_cast<double>(batch);
    // Weight on the per-sample KL (summed over dims) inside the objective.
    const double klw = config.kl_reduction == KlReduction::MeanOverDims ? 1.0 / latent : 1.0;
    result.parts.kl = 0.5 * (logvar.array().exp() + mu.array().square() - 1.0 - logvar.array()).sum() * b_scale;

    const Matrix d_logits = (2.0 * pixel_scale) * diff.cwiseProduct(recon.cwiseProduct((1.0 - recon.array()).matrix()));
    auto dec_back = nnet::backward(model.decoder, dec.cache, d_logits);
    result.grads.decoder = std::move(dec_back.grads);
    const Matrix& d_sample = dec_back.input_gradient;

    Matrix d_enc(2 * latent, batch);
    d_enc.topRows(latent) = d_sample + (klw * config.kl_beta * b_scale) * mu;
    d_enc.bottomRows(latent) = 0.5 * d_sample.cwiseProduct(noise).cwiseProduct(sigma) +
                               (klw * config.kl_beta * b_scale * 0.5) * (logvar.array().exp() - 1.0).matrix();
    result.grads.encoder = nnet::backward(model.encoder, enc.cache, d_enc).grads;

    // Triplet term on an independent batch.
    const Eigen::Index t_count = triplets.size();
    if (config.objective != Objective::Unsupervised && t_count == 0) {
        throw std::invalid_argument("vae_objective: supervised objective needs a non-empty triplet batch");
    }
    if (config.objective != Objective::Unsupervised) {
        Matrix stacked(images.rows(), 3 * t_count);
        stacked << triplets.anchors, triplets.positives, triplets.negatives;
        const auto tenc = nnet::forward(model.encoder, stacked);
        Matrix d_tout;
        result.parts.triplet = triplet_term(tenc.output, t_count, r_dim, latent, config, d_tout);
        d_tout *= config.triplet_beta;
        result.grads.encoder += nnet::backward(model.encoder, tenc.cache, d_tout).grads;
    }

    result.parts.total = result.parts.recon + klw * config.kl_beta * result.parts.kl + config.triplet_beta * result.parts.triplet;
    return result;
}

Matrix images_to_matrix(const std::vector<Image>& images) {
    Matrix m(kImagePixels, static_cast<Eigen::Index>(images.size()));
    for (std::size_t i = 0; i < images.size(); ++i) m.col(static_cast<Eigen::Index>(i)) = images[i].as_vector();
    return m;
}

TrainResult train(const Matrix& images, const std::vector<Triplet>& triplets, const TrainConfig& config,
                  const VaeShape& shape) {
    config.validate();
    if (images.cols() == 0) throw std::invalid_argument("train: empty dataset");
    if (images.rows() != shape.image_dim) throw std::invalid_argument("train: image size does not match the model");
    const bool supervised = config.objective != Objective::Unsupervised;
    if (supervised && triplets.empty()) {
        throw std::invalid_argument("train: " + to_string(config.objective) + " objective needs a non-empty triplet list");
    }
    for (const auto& t : triplets) {
        const auto n = static_cast<std::size_t>(images.cols());
        if (t.anchor >= n || t.positive >= n || t.negative >= n) throw std::invalid_argument("train: triplet index out of range");
    }

    Rng rng(config.seed);
    TrainResult result;
    result.model = VaeModel::initialize(shape, rng);
    auto& model = result.model;
    auto enc_state = nnet::AdamState::for_net(model.encoder, config.learning_rate);
    auto dec_state = nnet::AdamState::for_net(model.decoder, config.learning_rate);

    const Eigen::Index n = images.cols();
    const int latent = shape.latent.total();
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> pick_triplet(0, triplets.empty() ? 0 : triplets.size() - 1);

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        LossParts sums;
        for (Eigen::Index start = 0; start < n; start += config.batch_size) {
            const Eigen::Index b = std::min<Eigen::Index>(config.batch_size, n - start);
            Matrix batch(images.rows(), b);
            for (Eigen::Index i = 0; i < b; ++i) batch.col(i) = images.col(order[static_cast<std::size_t>(start + i)]);
            Matrix noise(latent, b);
            for (Eigen::Index c = 0; c < b; ++c) {
                for (int r = 0; r < latent; ++r) noise(r, c) = normal(rng);
            }
            TripletBatch tb;
            if (supervised) {
                const Eigen::Index t = config.triplet_batch_size;
                tb.anchors.resize(images.rows(), t);
                tb.positives.resize(images.rows(), t);
                tb.negatives.resize(images.rows(), t);
                for (Eigen::Index i = 0; i < t; ++i) {
                    const Triplet& tr = triplets[pick_triplet(rng)];
                    tb.anchors.col(i) = images.col(static_cast<Eigen::Index>(tr.anchor));
                    tb.positives.col(i) = images.col(static_cast<Eigen::Index>(tr.positive));
                    tb.negatives.col(i) = images.col(static_cast<Eigen::Index>(tr.negative));
                }
            }
            const auto obj = vae_objective(model, batch, tb, config, noise);
            nnet::adam_step(model.encoder, obj.grads.encoder, enc_state);
            nnet::adam_step(model.decoder, obj.grads.decoder, dec_state);
            const double w = static_cast<double>(b);
            sums.recon += w * obj.parts.recon;
            sums.kl += w * obj.parts.kl;
            sums.triplet += w * obj.parts.triplet;
            sums.total += w * obj.parts.total;
        }
        const double inv = 1.0 / static_cast<double>(n);
        result.history.push_back({epoch, {sums.recon * inv, sums.kl * inv, sums.triplet * inv, sums.total * inv}});
    }
    return result;
}

double eval_triplet_satisfaction(const VaeModel& model, const Matrix& images, const std::vector<Triplet>& triplets) {
    if (triplets.empty()) return 0.0;
    const Matrix mu = encode_means(model, images);
    std::size_t ok = 0;
    for (const auto& t : triplets) {
        const auto a = mu.col(static_cast<Eigen::Index>(t.anchor));
        const double dp = (a - mu.col(static_cast<Eigen::Index>(t.positive))).squaredNorm();
        const double dn = (a - mu.col(static_cast<Eigen::Index>(t.negative))).squaredNorm();
        ok += dp < dn ? 1 : 0;
    }
    return 100.0 * static_cast<double>(ok) / static_cast<double>(triplets.size());
}

double eval_reconstruction(const VaeModel& model, const Matrix& images) {
    if (images.cols() == 0) throw std::invalid_argument("eval_reconstruction: no images");
    const int latent = model.shape.latent.total();
    const Matrix mu = nnet::forward(model.encoder, images).output.topRows(latent);
    const Matrix recon = decode_batch(model, mu);
    return (recon - images).squaredNorm() / static_cast<double>(images.size());
}

void write_training_csv(const std::vector<EpochMetrics>& history, const std::filesystem::path& path) {
    std::ostringstream out;
    out << "epoch,recon,kl,triplet,total\n";
    out.precision(10);
    for (const auto& e : history) {
        out << e.epoch << ',' << e.loss.recon << ',' << e.loss.kl << ',' << e.loss.triplet << ',' << e.loss.total << '\n';
    }
    write_text_file(path, out.str());
}

json checkpoint_json(const VaeModel& model, const json& metadata) {
    return json{{"format", "prefsearch.vae_checkpoint"},
                {"version", 1},
                {"image_dim", model.shape.image_dim},
                {"hidden", model.shape.hidden},
                {"r_dim", model.shape.latent.r_dim},
                {"z_dim", model.shape.latent.z_dim},
                {"metadata", metadata},
                {"encoder", nnet::to_json(model.encoder)},
                {"decoder", nnet::to_json(model.decoder)}};
}

VaeModel model_from_checkpoint(const json& j) {
    if (j.value("format", "") != "prefsearch.vae_checkpoint") throw std::invalid_argument("not a VAE checkpoint");
    if (j.value("version", 0) != 1) throw std::invalid_argument("unsupported checkpoint version");
    VaeModel m;
    m.shape.image_dim = j.at("image_dim").get<int>();
    m.shape.hidden = j.at("hidden").get<std::vector<int>>();
    m.shape.latent.r_dim = j.at("r_dim").get<int>();
    m.shape.latent.z_dim = j.at("z_dim").get<int>();
    m.shape.validate();
    m.encoder = nnet::dense_net_from_json(j.at("encoder"));
    m.decoder = nnet::dense_net_from_json(j.at("decoder"));
    const int latent = m.shape.latent.total();
    if (m.encoder.input_dim() != m.shape.image_dim || m.encoder.output_dim() != 2 * latent ||
        m.decoder.input_dim() != latent || m.decoder.output_dim() != m.shape.image_dim) {
        throw std::invalid_argument("checkpoint network shapes do not match its header");
    }
    return m;
}

void save_checkpoint(const VaeModel& model, const std::filesystem::path& path, const json& metadata) {
    write_text_file(path, checkpoint_json(model, metadata).dump());
}

VaeModel load_checkpoint(const std::filesystem::path& path) {
    return model_from_checkpoint(json::parse(read_text_file(path)));
}

}  // namespace prefsearch::vae
