#pragma once

// Localization sessions (query, answer, posterior, decode), the ablation
// grid over objectives x response models x noise, and Table-1 style
// model evaluation.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include <json.hpp>

#include "prefsearch/dataio.hpp"
#include "prefsearch/inference.hpp"
#include "prefsearch/response.hpp"
#include "prefsearch/synthworld.hpp"
#include "prefsearch/vae.hpp"

namespace prefsearch {

/// splitmix64 of `a` mixed with `b`; used to fan one seed out into streams.
std::uint64_t derive_seed(std::uint64_t a, std::uint64_t b);

void to_json(nlohmann::json& j, const McmcConfig& c);
void from_json(const nlohmann::json& j, McmcConfig& c);
void to_json(nlohmann::json& j, const ResponseConfig& c);
void from_json(const nlohmann::json& j, ResponseConfig& c);

struct SessionConfig {
    ResponseConfig response;
    McmcConfig mcmc;  // its seed is ignored, each step derives one from `seed`
    int budget = 30;
    std::uint64_t seed = 0;

    void validate() const;
};

void to_json(nlohmann::json& j, const SessionConfig& c);
void from_json(const nlohmann::json& j, SessionConfig& c);

/// Immutable data a session searches over: the model plus a candidate pool of
/// dataset items with their encodings and clean standardized metadata.
class SearchSpace {
public:
    SearchSpace(std::shared_ptr<const vae::VaeModel> model, std::shared_ptr<const Dataset> dataset,
                std::vector<std::size_t> pool);

    /// Pool = the dataset's test split.
    static std::shared_ptr<const SearchSpace> over_test_split(std::shared_ptr<const vae::VaeModel> model,
                                                             std::shared_ptr<const Dataset> dataset);

    const vae::VaeModel& model() const { return *model_; }
    const Dataset& dataset() const { return *dataset_; }
    const std::vector<std::size_t>& pool() const { return pool_; }
    std::size_t pool_size() const { return pool_.size(); }

    const Image& image(std::size_t item) const { return dataset_->items.at(item).image; }
    const GaussianEmbedding& embedding(std::size_t item) const;
    const MetaVec& metadata(std::size_t item) const;  // clean, standardized
    /// Encoder means of the pool, one column per pool position.
    const Eigen::MatrixXd& pool_means() const { return pool_means_; }
    const Standardizer& standardizer() const { return dataset_->standardizer; }
    int r_dim() const { return model_->shape.latent.r_dim; }

    /// Largest pool distance to `target` in standardized metadata space.
    double max_pool_loss(const MetaVec& target) const;

private:
    std::size_t position(std::size_t item) const;

    std::shared_ptr<const vae::VaeModel> model_;
    std::shared_ptr<const Dataset> dataset_;
    std::vector<std::size_t> pool_;
    std::map<std::size_t, std::size_t> position_;
    std::vector<GaussianEmbedding> embeddings_;
    std::vector<MetaVec> metadata_;
    Eigen::MatrixXd pool_means_;
};

/// l2 distance between the measured metadata of `estimate` and the
/// ground-truth metadata, both in standardized space. Throws EmptyInk.
double metadata_loss(const Image& estimate, const MetaVec& ground_truth, const Standardizer& standardizer);

/// Same, but an empty decode scores `sentinel`.
double metadata_loss_or(const Image& estimate, const MetaVec& ground_truth, const Standardizer& standardizer,
                        double sentinel);

/// Pool item whose encoder mean is closest to `r`. Ties go to the lowest id.
std::size_t nearest_neighbor_estimate(const Eigen::VectorXd& r, const SearchSpace& space);

/// Decode with the arbitrary reconstructive part: empty at z_dim 0,
/// otherwise a standard-normal draw from `seed`.
Image decode_estimate(const vae::VaeModel& model, const Eigen::VectorXd& r, std::uint64_t seed);

struct QueryPair {
    std::size_t a = 0;
    std::size_t b = 0;
    bool operator==(const QueryPair&) const = default;
};

struct SessionStep {
    QueryPair pair;
    Choice choice = Choice::A;
    Eigen::VectorXd mean;
    Eigen::VectorXd stddev;
    double acceptance_rate = 0.0;
    Image estimate;
};

class SessionFinished : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// One search, advanced one answer at a time. Query pairs are fixed by the
/// seed at construction, so a session is a pure function of
/// (space, config, answers).
class LocalizationSession {
public:
    LocalizationSession(std::shared_ptr<const SearchSpace> space, SessionConfig config);

    const SessionConfig& config() const { return config_; }
    const SearchSpace& space() const { return *space_; }
    bool finished() const { return static_cast<int>(steps_.size()) >= config_.budget; }
    int answered() const { return static_cast<int>(steps_.size()); }
    /// Throws SessionFinished once the budget is spent.
    const QueryPair& current_query() const;
    const std::vector<QueryPair>& planned_queries() const { return pairs_; }

    /// Records the answer to current_query(), reruns the sampler and decodes
    /// the new posterior mean.
    const SessionStep& answer(Choice choice);

    const std::vector<SessionStep>& steps() const { return steps_; }
    std::vector<Choice> choices() const;
    /// Prior mean and std before any answer.
    Eigen::VectorXd posterior_mean() const;
    Eigen::VectorXd posterior_std() const;
    /// Decoded posterior mean (the prior mean before any answer).
    Image estimate() const;
    const PosteriorSamples& last_samples() const { return last_samples_; }

    /// Config plus answers so far; enough to rebuild the session.
    nlohmann::json state_json() const;
    static LocalizationSession resume(std::shared_ptr<const SearchSpace> space, const nlohmann::json& state);

private:
    std::shared_ptr<const SearchSpace> space_;
    SessionConfig config_;
    std::vector<QueryPair> pairs_;
    std::vector<AnsweredQuery> answers_;
    std::vector<SessionStep> steps_;
    PosteriorSamples last_samples_;
    Image prior_estimate_;
};

class OracleTimeout : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class Oracle {
public:
    virtual ~Oracle() = default;
    virtual Choice answer(const SearchSpace& space, const QueryPair& pair, int query_index) = 0;
};

/// Simulated user: prefers the candidate whose clean standardized metadata
/// is closer to the target's.
class SyntheticOracle : public Oracle {
public:
    explicit SyntheticOracle(MetaVec target) : target_(std::move(target)) {}
    Choice answer(const SearchSpace& space, const QueryPair& pair, int query_index) override;

private:
    MetaVec target_;
};

/// Replays recorded answers in order.
class ScriptedOracle : public Oracle {
public:
    explicit ScriptedOracle(std::vector<Choice> choices) : choices_(std::move(choices)) {}
    Choice answer(const SearchSpace& space, const QueryPair& pair, int query_index) override;

private:
    std::vector<Choice> choices_;
    std::size_t next_ = 0;
};

/// Returns the next input line, or nullopt on timeout. Throws on end of input.
using LineSource = std::function<std::optional<std::string>()>;

LineSource stream_line_source(std::istream& in);
/// Reads from a file descriptor, waiting at most `timeout` per line.
LineSource fd_line_source(int fd, std::chrono::milliseconds timeout);

/// Human in the loop: shows both candidates as text art and reads "a" or "b".
/// Unrecognized input is re-prompted; a timeout throws OracleTimeout.
class InteractiveOracle : public Oracle {
public:
    InteractiveOracle(LineSource input, std::ostream& out) : input_(std::move(input)), out_(out) {}
    Choice answer(const SearchSpace& space, const QueryPair& pair, int query_index) override;

private:
    LineSource input_;
    std::ostream& out_;
};

std::string ascii_art(const Image& img);

using Trajectory = RunRecord;

/// Trajectory of a (possibly partial) session. With a ground truth the
/// metadata losses are filled in, including the query-0 baseline.
Trajectory make_trajectory(const LocalizationSession& session, std::optional<std::size_t> ground_truth);

enum class SessionStatus { Finished, Suspended };

/// Asks until the budget is spent. An OracleTimeout leaves the session
/// suspended at the unanswered query; resume with state_json()/resume().
SessionStatus drive_session(LocalizationSession& session, Oracle& oracle);

/// Uniform draw from the pool, fixed by `seed`.
std::size_t pick_ground_truth(const SearchSpace& space, std::uint64_t seed);

/// Full synthetic session toward `ground_truth`.
Trajectory run_session(std::shared_ptr<const SearchSpace> space, const SessionConfig& config, std::size_t ground_truth);

// ---- ablation grid

struct ExperimentCell {
    vae::Objective objective = vae::Objective::Bayesian;
    ResponseKind response = ResponseKind::Btrm;
    bool noisy = false;

    std::string name() const;  // "bayesian/btrm/noisy"
    static ExperimentCell parse(const std::string& name);
    bool operator==(const ExperimentCell&) const = default;
};

std::vector<ExperimentCell> full_grid();

/// Key into the model registry for the model serving an objective/noise pair.
std::string model_key(vae::Objective objective, bool noisy);

using ModelRegistry = std::map<std::string, std::shared_ptr<const vae::VaeModel>>;

struct ExperimentConfig {
    int trials = 20;
    int budget = 30;
    ResponseConfig response;  // kind is overridden per cell
    McmcConfig mcmc;
    std::uint64_t seed = 0;
    unsigned threads = 0;  // 0 = hardware concurrency
    std::vector<ExperimentCell> cells = full_grid();

    void validate() const;
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);

struct LossRow {
    ExperimentCell cell;
    int trial = 0;
    int query_index = 0;  // 0 = decoded prior mean
    double metadata_loss = 0.0;
};

struct SummaryRow {
    ExperimentCell cell;
    int query_index = 0;
    double median = 0.0;
    double q25 = 0.0;
    double q75 = 0.0;
};

struct ExperimentResult {
    std::vector<LossRow> rows;
    std::vector<SummaryRow> summary;  // query indices 1..budget
    std::vector<std::pair<ExperimentCell, std::vector<Trajectory>>> trajectories;

    /// Median loss of a cell at a query index; throws if absent.
    double median(const ExperimentCell& cell, int query_index) const;
};

/// Runs every cell. Trial t of every cell shares its ground truth and query
/// pairs, so cells differ only in model and response model.
ExperimentResult run_experiment(const ModelRegistry& models, std::shared_ptr<const Dataset> dataset,
                                const ExperimentConfig& config,
                                const std::function<void(const std::string&)>& progress = {});

/// Linear-interpolation quantile of unsorted values, q in [0,1].
double quantile(std::vector<double> values, double q);

/// `objective,response_model,noise,trial,query_index,metadata_loss`
void write_experiment_csv(const ExperimentResult& result, const std::filesystem::path& path);
/// `objective,response_model,noise,query_index,median,q25,q75`
void write_summary_csv(const ExperimentResult& result, const std::filesystem::path& path);
/// One run record per cell and trial under dir/<objective>_<response>_<noise>/.
void write_trajectories(const ExperimentResult& result, const std::filesystem::path& dir);

// ---- training data and evaluation

struct TrainingData {
    vae::Matrix images;  // train split, one column per item
    std::vector<Triplet> triplets;  // index columns of `images`
};

/// Triplets from the train split's standardized metadata, with additive
/// Gaussian noise of `noise_sigma` on the labels first.
TrainingData make_training_data(const Dataset& dataset, std::size_t triplet_count, double noise_sigma,
                                std::uint64_t seed);

struct EvalReport {
    double triplet_satisfaction = 0.0;  // percent, clean test triplets
    double reconstruction_error = 0.0;  // per-pixel MSE on the test split
};

EvalReport evaluate_model(const vae::VaeModel& model, const Dataset& dataset, std::size_t triplet_count,
                          std::uint64_t seed);

}  // namespace prefsearch
