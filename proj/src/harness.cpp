#include "prefsearch/harness.hpp"

#include <poll.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <exception>
#include <iomanip>
#include <iostream>
#include <limits>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>

namespace prefsearch {

using nlohmann::json;

namespace {

// Stream tags for derive_seed.
constexpr std::uint64_t kPairStream = 0x70616972;   // query pairs
constexpr std::uint64_t kMcmcStream = 0x6d636d63;   // + query index
constexpr std::uint64_t kZStream = 0x7a7a7a7a;      // reconstructive draw
constexpr std::uint64_t kTruthStream = 0x74727468;  // ground-truth pick

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::vector<double> to_std(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace

std::uint64_t derive_seed(std::uint64_t a, std::uint64_t b) { return splitmix64(splitmix64(a) ^ b); }

void to_json(json& j, const McmcConfig& c) {
    j = json{{"iterations", c.iterations},
             {"burn_in", c.burn_in},
             {"initial_proposal_std", c.initial_proposal_std},
             {"target_acceptance", c.target_acceptance},
             {"seed", c.seed}};
}

void from_json(const json& j, McmcConfig& c) {
    McmcConfig d;
    c.iterations = j.value("iterations", d.iterations);
    c.burn_in = j.value("burn_in", d.burn_in);
    c.initial_proposal_std = j.value("initial_proposal_std", d.initial_proposal_std);
    c.target_acceptance = j.value("target_acceptance", d.target_acceptance);
    c.seed = j.value("seed", d.seed);
}

void to_json(json& j, const ResponseConfig& c) {
    j = json{{"kind", to_string(c.kind)}, {"k", c.k}, {"margin", c.margin}, {"star_sigma", c.star_sigma}};
}

void from_json(const json& j, ResponseConfig& c) {
    ResponseConfig d;
    c.kind = j.contains("kind") ? response_kind_from_string(j.at("kind").get<std::string>()) : d.kind;
    c.k = j.value("k", d.k);
    c.margin = j.value("margin", d.margin);
    c.star_sigma = j.value("star_sigma", d.star_sigma);
}

void SessionConfig::validate() const {
    if (budget < 1) throw std::invalid_argument("SessionConfig: budget must be >= 1");
    response.validate();
    mcmc.validate();
}

void to_json(json& j, const SessionConfig& c) {
    j = json{{"response", c.response}, {"mcmc", c.mcmc}, {"budget", c.budget}, {"seed", c.seed}};
}

void from_json(const json& j, SessionConfig& c) {
    SessionConfig d;
    c.response = j.contains("response") ? j.at("response").get<ResponseConfig>() : d.response;
    c.mcmc = j.contains("mcmc") ? j.at("mcmc").get<McmcConfig>() : d.mcmc;
    c.budget = j.value("budget", d.budget);
    c.seed = j.value("seed", d.seed);
}

// ---- SearchSpace

SearchSpace::SearchSpace(std::shared_ptr<const vae::VaeModel> model, std::shared_ptr<const Dataset> dataset,
                         std::vector<std::size_t> pool)
    : model_(std::move(model)), dataset_(std::move(dataset)), pool_(std::move(pool)) {
    if (!model_ || !dataset_) throw std::invalid_argument("SearchSpace: null model or dataset");
    if (pool_.size() < 2) throw std::invalid_argument("SearchSpace: pool needs at least 2 items");
    std::vector<Image> images;
    images.reserve(pool_.size());
    for (std::size_t i = 0; i < pool_.size(); ++i) {
        const std::size_t item = pool_[i];
        if (item >= dataset_->items.size()) throw std::invalid_argument("SearchSpace: pool item out of range");
        if (!position_.emplace(item, i).second) throw std::invalid_argument("SearchSpace: duplicate pool item");
        images.push_back(dataset_->items[item].image);
        metadata_.push_back(dataset_->standardizer.apply(dataset_->items[item].metadata));
    }
    for (const auto& img : images) embeddings_.push_back(vae::encode(*model_, img));
    pool_means_ = vae::encode_means(*model_, vae::images_to_matrix(images));
}

std::shared_ptr<const SearchSpace> SearchSpace::over_test_split(std::shared_ptr<const vae::VaeModel> model,
                                                               std::shared_ptr<const Dataset> dataset) {
    auto pool = dataset->test;
    return std::make_shared<const SearchSpace>(std::move(model), std::move(dataset), std::move(pool));
}

std::size_t SearchSpace::position(std::size_t item) const {
    const auto it = position_.find(item);
    if (it == position_.end()) throw std::out_of_range("SearchSpace: item " + std::to_string(item) + " not in pool");
    return it->second;
}

const GaussianEmbedding& SearchSpace::embedding(std::size_t item) const { return embeddings_[position(item)]; }
const MetaVec& SearchSpace::metadata(std::size_t item) const { return metadata_[position(item)]; }

double SearchSpace::max_pool_loss(const MetaVec& target) const {
    double worst = 0.0;
    for (const auto& m : metadata_) worst = std::max(worst, (m - target).norm());
    return worst;
}

double metadata_loss(const Image& estimate, const MetaVec& ground_truth, const Standardizer& standardizer) {
    return (standardizer.apply(measure_metadata(estimate)) - ground_truth).norm();
}

double metadata_loss_or(const Image& estimate, const MetaVec& ground_truth, const Standardizer& standardizer,
                        double sentinel) {
    try {
        return metadata_loss(estimate, ground_truth, standardizer);
    } catch (const EmptyInk&) {
        return sentinel;
    }
}

std::size_t nearest_neighbor_estimate(const Eigen::VectorXd& r, const SearchSpace& space) {
    const auto& means = space.pool_means();
    if (r.size() != means.rows()) throw std::invalid_argument("nearest_neighbor_estimate: dimension mismatch");
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < means.cols(); ++i) {
        const double d = (means.col(i) - r).squaredNorm();
        const std::size_t item = space.pool()[static_cast<std::size_t>(i)];
        if (d < best_d || (d == best_d && item < best)) {
            best_d = d;
            best = item;
        }
    }
    return best;
}

Image decode_estimate(const vae::VaeModel& model, const Eigen::VectorXd& r, std::uint64_t seed) {
    Eigen::VectorXd z(model.shape.latent.z_dim);
    if (z.size() > 0) {
        Rng rng(seed);
        std::normal_distribution<double> normal(0.0, 1.0);
        for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = normal(rng);
    }
    return vae::decode(model, r, z);
}

// ---- LocalizationSession

LocalizationSession::LocalizationSession(std::shared_ptr<const SearchSpace> space, SessionConfig config)
    : space_(std::move(space)), config_(std::move(config)) {
    if (!space_) throw std::invalid_argument("LocalizationSession: null search space");
    config_.validate();
    Rng rng(derive_seed(config_.seed, kPairStream));
    std::uniform_int_distribution<std::size_t> pick(0, space_->pool_size() - 1);
    const auto& pool = space_->pool();
    for (int i = 0; i < config_.budget; ++i) {
        const std::size_t a = pick(rng);
        std::size_t b = pick(rng);
        while (b == a) b = pick(rng);
        pairs_.push_back({pool[a], pool[b]});
    }
    prior_estimate_ = decode_estimate(space_->model(), Eigen::VectorXd::Zero(space_->r_dim()),
                                      derive_seed(config_.seed, kZStream));
}

const QueryPair& LocalizationSession::current_query() const {
    if (finished()) throw SessionFinished("session finished: all " + std::to_string(config_.budget) + " queries answered");
    return pairs_[steps_.size()];
}

const SessionStep& LocalizationSession::answer(Choice choice) {
    const QueryPair pair = current_query();
    const std::size_t preferred = choice == Choice::A ? pair.a : pair.b;
    const std::size_t rejected = choice == Choice::A ? pair.b : pair.a;
    answers_.push_back({space_->embedding(preferred), space_->embedding(rejected), preferred, rejected});

    McmcConfig mcmc = config_.mcmc;
    mcmc.seed = derive_seed(config_.seed, kMcmcStream + answers_.size());
    const auto& answers = answers_;
    const auto& response = config_.response;
    last_samples_ = run_mcmc([&](const Eigen::VectorXd& r) { return log_posterior(r, answers, response); },
                             space_->r_dim(), mcmc);

    SessionStep step;
    step.pair = pair;
    step.choice = choice;
    step.mean = last_samples_.mean;
    step.stddev = last_samples_.stddev;
    step.acceptance_rate = last_samples_.acceptance_rate;
    step.estimate = decode_estimate(space_->model(), step.mean, derive_seed(config_.seed, kZStream));
    steps_.push_back(std::move(step));
    return steps_.back();
}

std::vector<Choice> LocalizationSession::choices() const {
    std::vector<Choice> out;
    for (const auto& s : steps_) out.push_back(s.choice);
    return out;
}

Eigen::VectorXd LocalizationSession::posterior_mean() const {
    return steps_.empty() ? Eigen::VectorXd::Zero(space_->r_dim()) : steps_.back().mean;
}

Eigen::VectorXd LocalizationSession::posterior_std() const {
    return steps_.empty() ? Eigen::VectorXd::Ones(space_->r_dim()) : steps_.back().stddev;
}

Image LocalizationSession::estimate() const { return steps_.empty() ? prior_estimate_ : steps_.back().estimate; }

json LocalizationSession::state_json() const {
    json choices = json::array();
    for (const auto& s : steps_) choices.push_back(s.choice == Choice::A ? "a" : "b");
    return json{{"format", "prefsearch.session_state"}, {"version", 1}, {"config", config_}, {"choices", choices}};
}

LocalizationSession LocalizationSession::resume(std::shared_ptr<const SearchSpace> space, const json& state) {
    if (state.value("format", "") != "prefsearch.session_state") {
        throw std::invalid_argument("session state: unexpected format");
    }
    LocalizationSession session(std::move(space), state.at("config").get<SessionConfig>());
    for (const auto& c : state.at("choices")) {
        const auto s = c.get<std::string>();
        if (s != "a" && s != "b") throw std::invalid_argument("session state: choice must be 'a' or 'b'");
        session.answer(s == "a" ? Choice::A : Choice::B);
    }
    return session;
}

// ---- oracles

Choice SyntheticOracle::answer(const SearchSpace& space, const QueryPair& pair, int) {
    return oracle_answer(target_, space.metadata(pair.a), space.metadata(pair.b));
}

Choice ScriptedOracle::answer(const SearchSpace&, const QueryPair&, int query_index) {
    if (next_ >= choices_.size()) {
        throw std::out_of_range("ScriptedOracle: no recorded answer for query " + std::to_string(query_index));
    }
    return choices_[next_++];
}

LineSource stream_line_source(std::istream& in) {
    return [&in]() -> std::optional<std::string> {
        std::string line;
        if (!std::getline(in, line)) throw std::runtime_error("input closed");
        return line;
    };
}

LineSource fd_line_source(int fd, std::chrono::milliseconds timeout) {
    auto pending = std::make_shared<std::string>();
    return [fd, timeout, pending]() -> std::optional<std::string> {
        const auto deadline = std::chrono::steady_clock::now() + timeout;
        for (;;) {
            const auto nl = pending->find('\n');
            if (nl != std::string::npos) {
                std::string line = pending->substr(0, nl);
                pending->erase(0, nl + 1);
                if (!line.empty() && line.back() == '\r') line.pop_back();
                return line;
            }
            const auto left =
                std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
            if (left.count() <= 0) return std::nullopt;
            pollfd p{fd, POLLIN, 0};
            const int ready = ::poll(&p, 1, static_cast<int>(left.count()));
            if (ready < 0) {
                if (errno == EINTR) continue;
                throw std::runtime_error(std::string("poll: ") + std::strerror(errno));
            }
            if (ready == 0) return std::nullopt;
            char buf[256];
            const ssize_t n = ::read(fd, buf, sizeof buf);
            if (n < 0) {
                if (errno == EINTR) continue;
                throw std::runtime_error(std::string("read: ") + std::strerror(errno));
            }
            if (n == 0) {
                if (pending->empty()) throw std::runtime_error("input closed");
                std::string line = std::move(*pending);
                pending->clear();
                return line;
            }
            pending->append(buf, static_cast<std::size_t>(n));
        }
    };
}

std::string ascii_art(const Image& img) {
    static constexpr char kRamp[] = " .:-=+*#%@";
    std::string out;
    for (int r = 0; r < kImageSide; ++r) {
        for (int c = 0; c < kImageSide; ++c) {
            const double v = std::clamp(img.at(r, c), 0.0, 1.0);
            out += kRamp[static_cast<int>(std::lround(v * 9.0))];
        }
        out += '\n';
    }
    return out;
}

Choice InteractiveOracle::answer(const SearchSpace& space, const QueryPair& pair, int query_index) {
    std::istringstream a(ascii_art(space.image(pair.a)));
    std::istringstream b(ascii_art(space.image(pair.b)));
    out_ << "\nQuery " << query_index << ": which is closer to what you have in mind?\n";
    out_ << std::string(12, ' ') << "a" << std::string(31, ' ') << "b\n";
    std::string la, lb;
    while (std::getline(a, la) && std::getline(b, lb)) out_ << '|' << la << "|  |" << lb << "|\n";
    for (;;) {
        out_ << "answer [a/b]: " << std::flush;
        const auto line = input_();
        if (!line) throw OracleTimeout("no answer to query " + std::to_string(query_index) + " before the timeout");
        std::string s;
        for (char ch : *line) {
            if (!std::isspace(static_cast<unsigned char>(ch))) s += static_cast<char>(std::tolower(ch));
        }
        if (s == "a") return Choice::A;
        if (s == "b") return Choice::B;
        out_ << "please type a or b\n";
    }
}

// ---- sessions

Trajectory make_trajectory(const LocalizationSession& session, std::optional<std::size_t> ground_truth) {
    const auto& space = session.space();
    Trajectory t;
    t.config = session.config();
    t.seed = session.config().seed;
    t.queries_asked = session.answered();
    t.ground_truth = ground_truth;

    std::optional<MetaVec> target;
    double sentinel = 0.0;
    if (ground_truth) {
        target = space.standardizer().apply(space.dataset().items.at(*ground_truth).metadata);
        sentinel = space.max_pool_loss(*target);
        const Image prior = decode_estimate(space.model(), Eigen::VectorXd::Zero(space.r_dim()),
                                            derive_seed(session.config().seed, kZStream));
        t.baseline_metadata_loss = metadata_loss_or(prior, *target, space.standardizer(), sentinel);
    }
    int index = 0;
    for (const auto& step : session.steps()) {
        QueryRecord q;
        q.query_index = ++index;
        q.item_a = step.pair.a;
        q.item_b = step.pair.b;
        q.choice = step.choice;
        q.posterior_mean = to_std(step.mean);
        q.posterior_std = to_std(step.stddev);
        if (target) q.metadata_loss = metadata_loss_or(step.estimate, *target, space.standardizer(), sentinel);
        t.queries.push_back(std::move(q));
    }
    const Image final_image = session.estimate();
    t.final_estimate.assign(final_image.pixels().begin(), final_image.pixels().end());
    t.nearest_neighbor = nearest_neighbor_estimate(session.posterior_mean(), space);
    t.validate();
    return t;
}

SessionStatus drive_session(LocalizationSession& session, Oracle& oracle) {
    while (!session.finished()) {
        Choice choice;
        try {
            choice = oracle.answer(session.space(), session.current_query(), session.answered() + 1);
        } catch (const OracleTimeout&) {
            return SessionStatus::Suspended;
        }
        session.answer(choice);
    }
    return SessionStatus::Finished;
}

std::size_t pick_ground_truth(const SearchSpace& space, std::uint64_t seed) {
    Rng rng(derive_seed(seed, kTruthStream));
    std::uniform_int_distribution<std::size_t> pick(0, space.pool_size() - 1);
    return space.pool()[pick(rng)];
}

Trajectory run_session(std::shared_ptr<const SearchSpace> space, const SessionConfig& config,
                       std::size_t ground_truth) {
    LocalizationSession session(space, config);
    SyntheticOracle oracle(space->standardizer().apply(space->dataset().items.at(ground_truth).metadata));
    drive_session(session, oracle);
    return make_trajectory(session, ground_truth);
}

// ---- experiment

std::string ExperimentCell::name() const {
    return vae::to_string(objective) + "/" + to_string(response) + "/" + (noisy ? "noisy" : "clean");
}

ExperimentCell ExperimentCell::parse(const std::string& name) {
    const auto s1 = name.find('/');
    const auto s2 = s1 == std::string::npos ? s1 : name.find('/', s1 + 1);
    if (s2 == std::string::npos) throw std::invalid_argument("experiment cell '" + name + "': expected a/b/c");
    ExperimentCell cell;
    cell.objective = vae::objective_from_string(name.substr(0, s1));
    cell.response = response_kind_from_string(name.substr(s1 + 1, s2 - s1 - 1));
    const auto noise = name.substr(s2 + 1);
    if (noise != "clean" && noise != "noisy") {
        throw std::invalid_argument("experiment cell '" + name + "': noise must be clean or noisy");
    }
    cell.noisy = noise == "noisy";
    return cell;
}

std::vector<ExperimentCell> full_grid() {
    std::vector<ExperimentCell> cells;
    for (bool noisy : {false, true}) {
        for (auto objective : {vae::Objective::Bayesian, vae::Objective::Traditional, vae::Objective::Unsupervised}) {
            for (auto response : {ResponseKind::Logistic, ResponseKind::Btrm}) {
                cells.push_back({objective, response, noisy});
            }
        }
    }
    return cells;
}

std::string model_key(vae::Objective objective, bool noisy) {
    return vae::to_string(objective) + (noisy ? "_noisy" : "_clean");
}

void ExperimentConfig::validate() const {
    if (trials < 1) throw std::invalid_argument("ExperimentConfig: trials must be >= 1");
    if (budget < 1) throw std::invalid_argument("ExperimentConfig: budget must be >= 1");
    if (cells.empty()) throw std::invalid_argument("ExperimentConfig: no cells");
    response.validate();
    mcmc.validate();
}

void to_json(json& j, const ExperimentConfig& c) {
    json cells = json::array();
    for (const auto& cell : c.cells) cells.push_back(cell.name());
    j = json{{"trials", c.trials}, {"budget", c.budget}, {"response", c.response}, {"mcmc", c.mcmc},
             {"seed", c.seed},     {"threads", c.threads}, {"cells", cells}};
}

void from_json(const json& j, ExperimentConfig& c) {
    ExperimentConfig d;
    c.trials = j.value("trials", d.trials);
    c.budget = j.value("budget", d.budget);
    c.response = j.contains("response") ? j.at("response").get<ResponseConfig>() : d.response;
    c.mcmc = j.contains("mcmc") ? j.at("mcmc").get<McmcConfig>() : d.mcmc;
    c.seed = j.value("seed", d.seed);
    c.threads = j.value("threads", d.threads);
    if (j.contains("cells")) {
        c.cells.clear();
        for (const auto& name : j.at("cells")) c.cells.push_back(ExperimentCell::parse(name.get<std::string>()));
    } else {
        c.cells = d.cells;
    }
}

double quantile(std::vector<double> values, double q) {
    if (values.empty()) throw std::invalid_argument("quantile: no values");
    if (!(q >= 0.0 && q <= 1.0)) throw std::invalid_argument("quantile: q must be in [0,1]");
    std::sort(values.begin(), values.end());
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

double ExperimentResult::median(const ExperimentCell& cell, int query_index) const {
    std::vector<double> v;
    for (const auto& r : rows) {
        if (r.cell == cell && r.query_index == query_index) v.push_back(r.metadata_loss);
    }
    if (v.empty()) throw std::out_of_range("no results for " + cell.name() + " at query " + std::to_string(query_index));
    return quantile(std::move(v), 0.5);
}

ExperimentResult run_experiment(const ModelRegistry& models, std::shared_ptr<const Dataset> dataset,
                                const ExperimentConfig& config,
                                const std::function<void(const std::string&)>& progress) {
    config.validate();
    if (!dataset) throw std::invalid_argument("run_experiment: null dataset");

    std::map<std::string, std::shared_ptr<const SearchSpace>> spaces;
    for (const auto& cell : config.cells) {
        const auto key = model_key(cell.objective, cell.noisy);
        if (spaces.contains(key)) continue;
        const auto it = models.find(key);
        if (it == models.end() || !it->second) {
            throw std::runtime_error("run_experiment: missing checkpoint for cell " + cell.name() + " (model '" + key +
                                     "')");
        }
        spaces[key] = SearchSpace::over_test_split(it->second, dataset);
    }

    const std::size_t n_cells = config.cells.size();
    const auto trials = static_cast<std::size_t>(config.trials);
    std::vector<std::vector<Trajectory>> results(n_cells, std::vector<Trajectory>(trials));

    std::atomic<std::size_t> next{0};
    std::atomic<std::size_t> done{0};
    std::mutex error_mutex, progress_mutex;
    std::exception_ptr error;
    auto worker = [&] {
        for (;;) {
            const std::size_t job = next.fetch_add(1);
            if (job >= n_cells * trials) return;
            const std::size_t c = job / trials;
            const std::size_t t = job % trials;
            try {
                const auto& cell = config.cells[c];
                const auto& space = spaces.at(model_key(cell.objective, cell.noisy));
                SessionConfig sc;
                sc.response = config.response;
                sc.response.kind = cell.response;
                sc.mcmc = config.mcmc;
                sc.budget = config.budget;
                sc.seed = derive_seed(config.seed, t);
                results[c][t] = run_session(space, sc, pick_ground_truth(*space, sc.seed));
                const std::size_t finished = ++done;
                if (progress) {
                    std::lock_guard lock(progress_mutex);
                    progress(cell.name() + " trial " + std::to_string(t) + " (" + std::to_string(finished) + "/" +
                             std::to_string(n_cells * trials) + ")");
                }
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
                next = n_cells * trials;
                return;
            }
        }
    };
    unsigned threads = config.threads ? config.threads : std::max(1u, std::thread::hardware_concurrency());
    threads = static_cast<unsigned>(std::min<std::size_t>(threads, n_cells * trials));
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (unsigned i = 0; i < threads; ++i) pool.emplace_back(worker);
    }
    if (error) std::rethrow_exception(error);

    ExperimentResult out;
    for (std::size_t c = 0; c < n_cells; ++c) {
        const auto& cell = config.cells[c];
        for (std::size_t t = 0; t < trials; ++t) {
            const auto& traj = results[c][t];
            out.rows.push_back({cell, static_cast<int>(t), 0, traj.baseline_metadata_loss.value()});
            for (const auto& q : traj.queries) {
                out.rows.push_back({cell, static_cast<int>(t), q.query_index, q.metadata_loss.value()});
            }
        }
        for (int qi = 1; qi <= config.budget; ++qi) {
            std::vector<double> v;
            for (const auto& traj : results[c]) v.push_back(traj.queries[static_cast<std::size_t>(qi - 1)].metadata_loss.value());
            out.summary.push_back({cell, qi, quantile(v, 0.5), quantile(v, 0.25), quantile(v, 0.75)});
        }
        out.trajectories.emplace_back(cell, std::move(results[c]));
    }
    return out;
}

namespace {

std::string cell_columns(const ExperimentCell& cell) {
    return vae::to_string(cell.objective) + "," + to_string(cell.response) + "," + (cell.noisy ? "noisy" : "clean");
}

}  // namespace

void write_experiment_csv(const ExperimentResult& result, const std::filesystem::path& path) {
    std::ostringstream out;
    out.precision(std::numeric_limits<double>::max_digits10);
    out << "objective,response_model,noise,trial,query_index,metadata_loss\n";
    for (const auto& r : result.rows) {
        out << cell_columns(r.cell) << ',' << r.trial << ',' << r.query_index << ',' << r.metadata_loss << '\n';
    }
    write_text_file(path, out.str());
}

void write_summary_csv(const ExperimentResult& result, const std::filesystem::path& path) {
    std::ostringstream out;
    out.precision(std::numeric_limits<double>::max_digits10);
    out << "objective,response_model,noise,query_index,median,q25,q75\n";
    for (const auto& s : result.summary) {
        out << cell_columns(s.cell) << ',' << s.query_index << ',' << s.median << ',' << s.q25 << ',' << s.q75 << '\n';
    }
    write_text_file(path, out.str());
}

void write_trajectories(const ExperimentResult& result, const std::filesystem::path& dir) {
    for (const auto& [cell, trajs] : result.trajectories) {
        auto name = cell.name();
        std::replace(name.begin(), name.end(), '/', '_');
        const auto sub = dir / name;
        std::filesystem::create_directories(sub);
        for (std::size_t t = 0; t < trajs.size(); ++t) {
            std::ostringstream file;
            file << "trial_" << std::setw(2) << std::setfill('0') << t << ".json";
            write_run_record(trajs[t], sub / file.str());
        }
    }
}

// ---- training data and evaluation

TrainingData make_training_data(const Dataset& dataset, std::size_t triplet_count, double noise_sigma,
                                std::uint64_t seed) {
    Rng rng(seed);
    std::vector<Image> images;
    std::vector<MetaVec> labels;
    for (std::size_t i : dataset.train) {
        images.push_back(dataset.items[i].image);
        labels.push_back(add_metadata_noise(dataset.standardizer.apply(dataset.items[i].metadata), noise_sigma, rng));
    }
    TrainingData out;
    out.images = vae::images_to_matrix(images);
    out.triplets = make_triplets(labels, triplet_count, rng);
    return out;
}

EvalReport evaluate_model(const vae::VaeModel& model, const Dataset& dataset, std::size_t triplet_count,
                          std::uint64_t seed) {
    std::vector<Image> images;
    std::vector<MetaVec> labels;
    for (std::size_t i : dataset.test) {
        images.push_back(dataset.items[i].image);
        labels.push_back(dataset.standardizer.apply(dataset.items[i].metadata));
    }
    Rng rng(seed);
    const auto triplets = make_triplets(labels, triplet_count, rng);
    const auto matrix = vae::images_to_matrix(images);
    return {vae::eval_triplet_satisfaction(model, matrix, triplets), vae::eval_reconstruction(model, matrix)};
}

}  // namespace prefsearch
