#pragma once

// Conditional VAE over (r, z): the encoder emits a Gaussian over the
// relative-attribute dims r and reconstructive dims z, the decoder maps a
// latent sample back to a 28x28 image. Training adds an optional triplet
// term on the r dims (traditional hinge on means, or Bayesian NLL on the
// Gaussians).

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

#include <json.hpp>

#include "prefsearch/nnet.hpp"
#include "prefsearch/response.hpp"
#include "prefsearch/synthworld.hpp"

namespace prefsearch::vae {

using nnet::Matrix;
using nnet::Vector;

enum class Objective { Bayesian, Traditional, Unsupervised };

std::string to_string(Objective o);
Objective objective_from_string(const std::string& name);

struct LatentSplit {
    int r_dim = 6;
    int z_dim = 0;
    int total() const { return r_dim + z_dim; }
    void validate() const;
    bool operator==(const LatentSplit&) const = default;
};

struct VaeShape {
    int image_dim = kImagePixels;
    std::vector<int> hidden = {256, 64};  // decoder mirrors this
    LatentSplit latent;
    void validate() const;
    bool operator==(const VaeShape&) const = default;
};

/// How the KL term enters the objective. MeanOverDims divides the per-sample
/// KL by the latent size, matching the per-pixel mean of the reconstruction
/// term; SumOverDims uses it as is.
enum class KlReduction { MeanOverDims, SumOverDims };

struct TrainConfig {
    double learning_rate = 1e-4;
    int epochs = 100;
    int batch_size = 256;
    int triplet_batch_size = 256;
    double kl_beta = 0.01;
    double triplet_beta = 0.1;
    double triplet_margin = 0.1;
    Objective objective = Objective::Bayesian;
    KlReduction kl_reduction = KlReduction::MeanOverDims;
    std::uint64_t seed = 0;

    void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct VaeModel {
    VaeShape shape;
    nnet::DenseNet encoder;  // image -> [mu; log-variance], 2 * latent rows
    nnet::DenseNet decoder;  // latent -> pixel logits

    static VaeModel initialize(const VaeShape& shape, Rng& rng);
    bool operator==(const VaeModel&) const = default;
};

struct Encoding {
    GaussianEmbedding r;
    GaussianEmbedding z;
};

Encoding encode_full(const VaeModel& model, const Image& img);
GaussianEmbedding encode(const VaeModel& model, const Image& img);

/// Means of the r dims for a batch of images (one per column).
Matrix encode_means(const VaeModel& model, const Matrix& images);

Eigen::VectorXd reparameterize(const GaussianEmbedding& e, Rng& rng);

Image decode(const VaeModel& model, const Eigen::VectorXd& r, const Eigen::VectorXd& z);
/// Decodes a batch of latent columns into pixel columns.
Matrix decode_batch(const VaeModel& model, const Matrix& latents);

/// KL(N(mu, sigma^2) || N(0, I)) summed over dims.
double kl_term(const GaussianEmbedding& e);

double traditional_triplet_loss(const Eigen::VectorXd& mu_a, const Eigen::VectorXd& mu_p, const Eigen::VectorXd& mu_n,
                                double margin);

inline constexpr double kProbabilityFloor = 1e-12;

struct BtlGradient {
    Eigen::VectorXd a_mu, a_sigma, p_mu, p_sigma, n_mu, n_sigma;
};

/// -log P(tau < -margin) with the anchor in the ideal-point role, using the
/// Gaussian approximation of tau. The probability is floored before the log.
double bayesian_triplet_nll(const GaussianEmbedding& a, const GaussianEmbedding& p, const GaussianEmbedding& n,
                            double margin, BtlGradient* grad = nullptr);

struct TripletBatch {
    Matrix anchors, positives, negatives;  // image columns
    Eigen::Index size() const { return anchors.cols(); }
};

struct LossParts {
    double recon = 0.0;
    double kl = 0.0;  // per-sample KL summed over dims, batch mean
    double triplet = 0.0;
    double total = 0.0;
};

struct VaeGradients {
    nnet::GradientSet encoder;
    nnet::GradientSet decoder;
};

struct ObjectiveResult {
    LossParts parts;
    VaeGradients grads;
};

/// Objective for one step. `noise` holds the standard-normal draws of the
/// reparameterized sample (latent x batch), so the value is a deterministic
/// function of the parameters.
ObjectiveResult vae_objective(const VaeModel& model, const Matrix& images, const TripletBatch& triplets,
                              const TrainConfig& config, const Matrix& noise);

struct EpochMetrics {
    int epoch = 0;
    LossParts loss;
};

struct TrainResult {
    VaeModel model;
    std::vector<EpochMetrics> history;
};

/// `images` holds training images as columns; triplets index those columns.
TrainResult train(const Matrix& images, const std::vector<Triplet>& triplets, const TrainConfig& config,
                  const VaeShape& shape = {});

Matrix images_to_matrix(const std::vector<Image>& images);

/// Percentage (0-100) of triplets with |mu_a - mu_p|^2 < |mu_a - mu_n|^2.
double eval_triplet_satisfaction(const VaeModel& model, const Matrix& images, const std::vector<Triplet>& triplets);

/// Mean per-pixel squared error of reconstructions from the mean latent.
double eval_reconstruction(const VaeModel& model, const Matrix& images);

void write_training_csv(const std::vector<EpochMetrics>& history, const std::filesystem::path& path);

nlohmann::json checkpoint_json(const VaeModel& model, const nlohmann::json& metadata = nlohmann::json::object());
VaeModel model_from_checkpoint(const nlohmann::json& j);
void save_checkpoint(const VaeModel& model, const std::filesystem::path& path,
                     const nlohmann::json& metadata = nlohmann::json::object());
VaeModel load_checkpoint(const std::filesystem::path& path);

}  // namespace prefsearch::vae
