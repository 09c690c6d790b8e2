// Acceptance checks, one per criterion: `acceptance --criterion N`.
// Prints a single PASS/FAIL line and exits non-zero on failure.
// Trained models and experiment outputs are cached under --artifacts.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "prefsearch/dataio.hpp"
#include "prefsearch/harness.hpp"
#include "prefsearch/inference.hpp"
#include "prefsearch/response.hpp"
#include "prefsearch/service.hpp"
#include "prefsearch/vae.hpp"

// After Eigen: resolv.h, pulled in by httplib, defines a macro named _res.
#include <httplib.h>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace prefsearch;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int precision = 4) {
    std::ostringstream s;
    s.precision(precision);
    s << v;
    return s.str();
}

void log(const std::string& msg) { std::cerr << "  " << msg << std::endl; }

// ---- shared artifacts

constexpr std::uint64_t kDataSeed = 20240601;
constexpr std::uint64_t kTrainSeed = 77;
constexpr std::size_t kTrainItems = 10000;
constexpr std::size_t kTestItems = 500;
constexpr std::size_t kTrainTriplets = 50000;
constexpr std::size_t kEvalTriplets = 10000;
constexpr double kNoiseSigma = 0.5;

std::shared_ptr<const Dataset> artifact_dataset(const fs::path& root) {
    const auto dir = root / "data";
    if (!fs::exists(dir / "splits.json")) {
        log("generating dataset");
        export_dataset(generate_synthetic_dataset(kTrainItems, kTestItems, kDataSeed), dir, false);
    }
    // Always go through the exported files so every consumer sees the same 8-bit images.
    return std::make_shared<const Dataset>(import_dataset(dir));
}

std::shared_ptr<const vae::VaeModel> artifact_model(const fs::path& root, const Dataset& ds, vae::Objective objective,
                                                    bool noisy) {
    // Triplets do not enter the unsupervised objective, so one model serves both conditions.
    if (objective == vae::Objective::Unsupervised) noisy = false;
    const auto key = model_key(objective, noisy);
    const auto path = root / "models" / (key + ".json");
    if (fs::exists(path)) return std::make_shared<const vae::VaeModel>(vae::load_checkpoint(path));

    vae::TrainConfig cfg;
    cfg.objective = objective;
    cfg.seed = kTrainSeed;
    const auto data = make_training_data(ds, kTrainTriplets, noisy ? kNoiseSigma : 0.0, derive_seed(kTrainSeed, 1));
    log("training " + key + " (" + std::to_string(cfg.epochs) + " epochs)");
    const auto t0 = Clock::now();
    auto result = vae::train(data.images, data.triplets, cfg);
    log(key + " trained in " + fmt(seconds_since(t0), 4) + " s");
    fs::create_directories(path.parent_path());
    vae::save_checkpoint(result.model, path, json{{"train_config", cfg}, {"noise", noisy ? kNoiseSigma : 0.0}});
    vae::write_training_csv(result.history, root / "models" / (key + "_training.csv"));
    return std::make_shared<const vae::VaeModel>(std::move(result.model));
}

ModelRegistry artifact_models(const fs::path& root, const Dataset& ds) {
    ModelRegistry models;
    for (bool noisy : {false, true}) {
        for (auto obj : {vae::Objective::Bayesian, vae::Objective::Traditional, vae::Objective::Unsupervised}) {
            models[model_key(obj, noisy)] = artifact_model(root, ds, obj, noisy);
        }
    }
    return models;
}

// ---- 1. closed form vs Monte Carlo

Outcome closed_form_vs_monte_carlo() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(1234);
    std::uniform_real_distribution<double> mean(-2.0, 2.0), stddev(0.05, 1.5);
    auto draw = [&] {
        Eigen::VectorXd m(6), s(6);
        for (int d = 0; d < 6; ++d) {
            m[d] = mean(rng);
            s[d] = stddev(rng);
        }
        return GaussianEmbedding(m, s);
    };
    double worst_p = 0.0, worst_mean_z = 0.0, worst_std_z = 0.0;
    int p_fail = 0, moment_fail = 0;
    for (int i = 0; i < 50; ++i) {
        const auto star = draw(), p = draw(), n = draw();
        const auto tau = tau_moments(star, p, n);
        const double closed = gaussian_tau_probability(tau, 0.0);
        std::mt19937_64 mc_rng(derive_seed(99, static_cast<std::uint64_t>(i)));
        const auto mc = mc_tau_summary(star, p, n, 0.0, 1'000'000, mc_rng);
        const double dp = std::abs(closed - mc.probability);
        const double zm = std::abs(mc.mean - tau.mean) / mc.mean_stderr;
        const double zs = std::abs(std::sqrt(mc.variance) - tau.stddev()) / mc.stddev_stderr;
        worst_p = std::max(worst_p, dp);
        worst_mean_z = std::max(worst_mean_z, zm);
        worst_std_z = std::max(worst_std_z, zs);
        p_fail += dp > 0.02;
        moment_fail += (zm > 3.0 || zs > 3.0);
    }
    const double secs = seconds_since(t0);
    const bool pass = p_fail == 0 && moment_fail == 0 && secs < 60.0;
    return {pass, "probability max |closed - MC| " + fmt(worst_p) + " (" + std::to_string(p_fail) +
                      "/50 draws over 0.02); tau moments worst " + fmt(worst_mean_z, 3) + " SE (mean), " +
                      fmt(worst_std_z, 3) + " SE (std), " + std::to_string(moment_fail) + "/50 over 3 SE; " +
                      fmt(secs, 3) + " s"};
}

// ---- 2. gradient suite

Outcome gradient_suite() {
    const auto ds = generate_synthetic_dataset(64, 2, 5);
    const auto data = make_training_data(ds, 16, 0.0, 3);
    const vae::Matrix images = data.images.leftCols(16);
    vae::TripletBatch batch;
    batch.anchors.resize(kImagePixels, 16);
    batch.positives.resize(kImagePixels, 16);
    batch.negatives.resize(kImagePixels, 16);
    for (int i = 0; i < 16; ++i) {
        const auto& t = data.triplets[static_cast<std::size_t>(i)];
        batch.anchors.col(i) = data.images.col(static_cast<Eigen::Index>(t.anchor));
        batch.positives.col(i) = data.images.col(static_cast<Eigen::Index>(t.positive));
        batch.negatives.col(i) = data.images.col(static_cast<Eigen::Index>(t.negative));
    }
    // h = 1e-5 keeps the central difference clear of ReLU and hinge kinks.
    constexpr double kStep = 1e-5;
    std::string detail;
    bool pass = true;
    for (auto obj : {vae::Objective::Unsupervised, vae::Objective::Traditional, vae::Objective::Bayesian}) {
        double worst = 0.0;
        for (int s = 0; s < 5; ++s) {
            Rng rng(100 + static_cast<std::uint64_t>(s));
            auto model = vae::VaeModel::initialize({}, rng);
            vae::TrainConfig cfg;
            cfg.objective = obj;
            std::normal_distribution<double> normal;
            vae::Matrix noise(model.shape.latent.total(), images.cols());
            for (Eigen::Index i = 0; i < noise.size(); ++i) noise.data()[i] = normal(rng);
            const auto result = vae::vae_objective(model, images, batch, cfg, noise);
            auto loss = [&] { return vae::vae_objective(model, images, batch, cfg, noise).parts.total; };
            const auto enc = nnet::sample_probes(model.encoder, result.grads.encoder, 60, rng);
            const auto dec = nnet::sample_probes(model.decoder, result.grads.decoder, 60, rng);
            worst = std::max({worst, nnet::grad_check(loss, enc, kStep), nnet::grad_check(loss, dec, kStep)});
        }
        pass = pass && worst <= 1e-4;
        detail += (detail.empty() ? "" : ", ") + vae::to_string(obj) + " " + fmt(worst, 3);
    }
    return {pass, "max relative error over 5 inits x 120 probes: " + detail + " (limit 1e-4)"};
}

// ---- 3. Table 1 pattern

Outcome table_one(const fs::path& root) {
    const auto t0 = Clock::now();
    const auto ds = artifact_dataset(root);
    const auto models = artifact_models(root, *ds);
    json table = json::object();
    auto report = [&](vae::Objective obj, bool noisy) {
        const auto key = model_key(obj, noisy);
        const auto r = evaluate_model(*models.at(key), *ds, kEvalTriplets, 4242);
        table[key] = {{"triplet_satisfaction", r.triplet_satisfaction}, {"reconstruction_error", r.reconstruction_error}};
        return r;
    };
    const auto bay = report(vae::Objective::Bayesian, false);
    const auto tra = report(vae::Objective::Traditional, false);
    const auto uns = report(vae::Objective::Unsupervised, false);
    const auto bay_n = report(vae::Objective::Bayesian, true);
    const auto tra_n = report(vae::Objective::Traditional, true);
    write_text_file(root / "table1.json", table.dump(2) + "\n");

    const bool a = bay.triplet_satisfaction >= 85.0 && tra.triplet_satisfaction >= 85.0 &&
                   bay.triplet_satisfaction >= uns.triplet_satisfaction + 5.0 &&
                   tra.triplet_satisfaction >= uns.triplet_satisfaction + 5.0;
    const bool b = bay_n.triplet_satisfaction < bay.triplet_satisfaction &&
                   tra_n.triplet_satisfaction < tra.triplet_satisfaction;
    const bool c = uns.reconstruction_error <= std::min({bay.reconstruction_error, tra.reconstruction_error,
                                                          bay_n.reconstruction_error, tra_n.reconstruction_error});
    std::string detail = "satisfaction clean B/T/U " + fmt(bay.triplet_satisfaction, 3) + "/" +
                         fmt(tra.triplet_satisfaction, 3) + "/" + fmt(uns.triplet_satisfaction, 3) + ", noisy B/T " +
                         fmt(bay_n.triplet_satisfaction, 3) + "/" + fmt(tra_n.triplet_satisfaction, 3) +
                         "; recon U " + fmt(uns.reconstruction_error, 3) + " vs B/T " +
                         fmt(bay.reconstruction_error, 3) + "/" + fmt(tra.reconstruction_error, 3) + " clean, " +
                         fmt(bay_n.reconstruction_error, 3) + "/" + fmt(tra_n.reconstruction_error, 3) + " noisy; (a) " +
                         (a ? "ok" : "no") + " (b) " + (b ? "ok" : "no") + " (c) " + (c ? "ok" : "no") + "; " +
                         fmt(seconds_since(t0), 4) + " s";
    return {a && b && c, detail};
}

// ---- 4. Fig. 3 pattern

Outcome figure_three(const fs::path& root) {
    const auto t0 = Clock::now();
    const auto ds = artifact_dataset(root);
    const auto models = artifact_models(root, *ds);
    const auto train_secs = seconds_since(t0);
    const auto t1 = Clock::now();
    ExperimentConfig cfg;
    cfg.seed = 31337;
    const auto result = run_experiment(models, ds, cfg);
    const double secs = seconds_since(t1);
    const auto dir = root / "experiment";
    fs::create_directories(dir);
    write_experiment_csv(result, dir / "trials.csv");
    write_summary_csv(result, dir / "summary.csv");
    write_trajectories(result, dir / "runs");

    using vae::Objective;
    auto med = [&](Objective o, ResponseKind r, bool noisy, int q) { return result.median({o, r, noisy}, q); };
    const int T = cfg.budget;
    bool a = true, c = true;
    std::string detail;
    for (bool noisy : {false, true}) {
        const double base = med(Objective::Bayesian, ResponseKind::Btrm, noisy, 0);
        const double fin = med(Objective::Bayesian, ResponseKind::Btrm, noisy, T);
        const double uns = med(Objective::Unsupervised, ResponseKind::Btrm, noisy, T);
        a = a && fin < 0.5 * base;
        c = c && fin <= uns;
        detail += std::string(noisy ? "noisy" : "clean") + ": B+BTRM " + fmt(base, 3) + " -> " + fmt(fin, 3) +
                  ", U+BTRM " + fmt(uns, 3) + ", B+Logistic " +
                  fmt(med(Objective::Bayesian, ResponseKind::Logistic, noisy, T), 3) + "; ";
    }
    const bool b = med(Objective::Bayesian, ResponseKind::Btrm, true, T) <
                   med(Objective::Bayesian, ResponseKind::Logistic, true, T);
    detail += std::string("(a) ") + (a ? "ok" : "no") + " (b) " + (b ? "ok" : "no") + " (c) " + (c ? "ok" : "no") +
              "; grid " + fmt(secs, 4) + " s (+" + fmt(train_secs, 4) + " s loading/training)";
    return {a && b && c && secs < 1200.0, detail};
}

// ---- 5. MCMC correctness

Outcome mcmc_correctness() {
    McmcConfig cfg;
    cfg.seed = 5;
    const auto prior = run_mcmc([](const Eigen::VectorXd& r) { return log_standard_normal(r); }, 6, cfg);
    const double mean_err = prior.mean.cwiseAbs().maxCoeff();
    const double std_err = (prior.stddev.array() - 1.0).abs().maxCoeff();
    const bool prior_ok = mean_err <= 0.05 && std_err <= 0.1;

    // 1-dim posterior under two logistic queries against a dense grid.
    auto point = [](double x) { return GaussianEmbedding::point(Eigen::VectorXd::Constant(1, x)); };
    const std::vector<AnsweredQuery> queries = {{point(1.0), point(-0.5), 0, 1}, {point(0.2), point(1.5), 2, 3}};
    ResponseConfig rc;
    rc.kind = ResponseKind::Logistic;
    rc.k = 2.0;
    auto lp = [&](const Eigen::VectorXd& r) { return log_posterior(r, queries, rc); };
    double num = 0.0, den = 0.0;
    for (int i = 0; i <= 200000; ++i) {
        const double x = -10.0 + 20.0 * i / 200000.0;
        const double w = std::exp(lp(Eigen::VectorXd::Constant(1, x)));
        num += w * x;
        den += w;
    }
    const double grid_mean = num / den;
    const auto post = run_mcmc(lp, 1, cfg);
    const double quad_err = std::abs(post.mean[0] - grid_mean);
    const bool quad_ok = quad_err <= 0.05;

    // Same prior check on a long chain, to separate sampler bias from Monte Carlo error.
    McmcConfig long_cfg = cfg;
    long_cfg.iterations = 201000;
    const auto long_run = run_mcmc([](const Eigen::VectorXd& r) { return log_standard_normal(r); }, 6, long_cfg);

    return {prior_ok && quad_ok,
            "prior recovery (4000 kept draws, 6 dims): max |mean| " + fmt(mean_err, 3) + " (limit 0.05), max |std - 1| " +
                fmt(std_err, 3) + " (limit 0.1) -> " + (prior_ok ? "ok" : "no") + "; 1-dim quadrature: mcmc " +
                fmt(post.mean[0], 4) + " vs grid " + fmt(grid_mean, 4) + " (|diff| " + fmt(quad_err, 3) + ") -> " +
                (quad_ok ? "ok" : "no") + "; acceptance " + fmt(prior.acceptance_rate, 3) +
                "; 200k-draw chain: max |mean| " + fmt(long_run.mean.cwiseAbs().maxCoeff(), 3) + ", max |std - 1| " +
                fmt((long_run.stddev.array() - 1.0).abs().maxCoeff(), 3)};
}

// ---- 6. replay determinism

Outcome replay_determinism(const fs::path& root) {
    const auto dir = root / "replay";
    fs::create_directories(dir);
    const auto ds = std::make_shared<const Dataset>(generate_synthetic_dataset(1000, 100, 8));

    // Checkpoints written to disk and read back, so the check covers serialization.
    ModelRegistry models;
    std::uint64_t index = 0;
    for (bool noisy : {false, true}) {
        for (auto obj : {vae::Objective::Bayesian, vae::Objective::Traditional, vae::Objective::Unsupervised}) {
            const auto key = model_key(obj, noisy);
            Rng rng(derive_seed(11, index++));
            vae::save_checkpoint(vae::VaeModel::initialize({}, rng), dir / (key + ".json"));
            models[key] = std::make_shared<const vae::VaeModel>(vae::load_checkpoint(dir / (key + ".json")));
        }
    }
    const auto space = SearchSpace::over_test_split(models.at(model_key(vae::Objective::Bayesian, false)), ds);
    SessionConfig sc;
    sc.seed = 2024;
    sc.budget = 12;
    const auto gt = pick_ground_truth(*space, sc.seed);
    const auto first = run_session(space, sc, gt);
    const auto second = run_session(space, sc, gt);
    const bool session_ok = first == second && json(first).dump() == json(second).dump();

    ExperimentConfig ec;
    ec.trials = 3;
    ec.budget = 5;
    ec.seed = 99;
    ec.threads = 1;
    const auto e1 = run_experiment(models, ds, ec);
    ec.threads = 4;
    const auto e2 = run_experiment(models, ds, ec);
    write_experiment_csv(e1, dir / "run1.csv");
    write_experiment_csv(e2, dir / "run2.csv");
    const bool experiment_ok = read_text_file(dir / "run1.csv") == read_text_file(dir / "run2.csv");

    // Service path: same seed, answers from the synthetic oracle, over HTTP.
    ServiceOptions options;
    options.defaults = sc;
    SessionService service(options);
    service.add_model("bayesian", space);
    HttpServer server(service);
    const int port = server.bind("127.0.0.1", 0);
    std::thread serving([&] { server.run(); });
    bool service_ok = true;
    std::string service_note;
    {
        httplib::Client client("127.0.0.1", port);
        auto created = client.Post("/sessions",
                                   json{{"model_id", "bayesian"}, {"response_model", "btrm"}, {"budget", sc.budget},
                                        {"seed", sc.seed}}
                                       .dump(),
                                   "application/json");
        if (!created || created->status != 201) {
            service_ok = false;
            service_note = "session creation failed";
        } else {
            const auto id = json::parse(created->body).at("session_id").get<std::string>();
            for (const auto& q : first.queries) {
                auto res = client.Post("/sessions/" + id + "/answer",
                                       json{{"choice", q.choice == Choice::A ? "a" : "b"}}.dump(), "application/json");
                if (!res || res->status != 200) {
                    service_ok = false;
                    service_note = "answer rejected";
                    break;
                }
            }
            auto snap = client.Get("/sessions/" + id);
            if (service_ok && snap && snap->status == 200) {
                const auto body = json::parse(snap->body);
                const auto& answers = body.at("answers");
                service_ok = answers.size() == first.queries.size() && body.at("state") == "finished";
                for (std::size_t i = 0; service_ok && i < answers.size(); ++i) {
                    service_ok = answers[i].at("posterior_mean").get<std::vector<double>>() ==
                                     first.queries[i].posterior_mean &&
                                 answers[i].at("a_id").get<std::size_t>() == first.queries[i].item_a &&
                                 answers[i].at("b_id").get<std::size_t>() == first.queries[i].item_b;
                }
                if (!service_ok) service_note = "posterior means differ";
            } else if (service_ok) {
                service_ok = false;
                service_note = "snapshot failed";
            }
        }
    }
    server.stop();
    serving.join();

    return {session_ok && experiment_ok && service_ok,
            std::string("run_session repeat ") + (session_ok ? "identical" : "DIFFERS") + "; run_experiment (12 cells, 1 vs 4 threads) " +
                (experiment_ok ? "identical" : "DIFFERS") + "; service replay " +
                (service_ok ? "matches library posterior means bit for bit" : "mismatch: " + service_note)};
}

const char* kNames[] = {"",
                        "closed-form vs Monte Carlo",
                        "gradient suite",
                        "Table 1 pattern",
                        "Fig. 3 pattern",
                        "MCMC correctness",
                        "replay determinism"};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance checks"};
    int criterion = 0;
    std::string artifacts = "artifacts";
    app.add_option("--criterion", criterion, "1-6")->required()->check(CLI::Range(1, 6));
    app.add_option("--artifacts", artifacts, "Directory for cached models and outputs");
    CLI11_PARSE(app, argc, argv);

    const fs::path root(artifacts);
    fs::create_directories(root);
    Outcome outcome;
    try {
        switch (criterion) {
            case 1: outcome = closed_form_vs_monte_carlo(); break;
            case 2: outcome = gradient_suite(); break;
            case 3: outcome = table_one(root); break;
            case 4: outcome = figure_three(root); break;
            case 5: outcome = mcmc_correctness(); break;
            case 6: outcome = replay_determinism(root); break;
        }
    } catch (const std::exception& e) {
        outcome = {false, std::string("error: ") + e.what()};
    }
    std::cout << (outcome.pass ? "PASS" : "FAIL") << " criterion " << criterion << " (" << kNames[criterion]
              << "): " << outcome.detail << std::endl;
    return outcome.pass ? 0 : 1;
}
