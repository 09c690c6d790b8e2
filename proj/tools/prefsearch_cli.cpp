// prefsearch: data generation, training, evaluation, localization sessions,
// the ablation grid and the HTTP service.

#include <unistd.h>

#include <chrono>
#include <csignal>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "prefsearch/dataio.hpp"
#include "prefsearch/harness.hpp"
#include "prefsearch/service.hpp"
#include "prefsearch/vae.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace prefsearch;

namespace {

json load_config(const std::string& path) {
    if (path.empty()) return json::object();
    return json::parse(read_text_file(path));
}

fs::path ensure_dir(const std::string& dir) {
    fs::path p = dir.empty() ? fs::path(".") : fs::path(dir);
    fs::create_directories(p);
    return p;
}

std::shared_ptr<const Dataset> load_dataset(const std::string& dir) {
    return std::make_shared<const Dataset>(import_dataset(dir));
}

HttpServer* g_server = nullptr;

void handle_signal(int) {
    if (g_server) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Preference-guided image search over a conditional VAE"};
    app.require_subcommand(1);

    std::string config_path, out_dir = ".";
    std::optional<std::uint64_t> seed;
    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON config file");
        sub->add_option("--seed", seed, "Random seed");
        sub->add_option("--out-dir", out_dir, "Output directory");
    };

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "Render a synthetic stroke dataset");
    common(gen);
    std::size_t train_count = 10000, test_count = 500;
    bool write_pgms = true;
    gen->add_option("--train", train_count, "Training items");
    gen->add_option("--test", test_count, "Held-out items (the query pool)");
    gen->add_flag("!--no-pgm", write_pgms, "Skip the per-image PGM files");

    // train
    auto* train = app.add_subcommand("train", "Train one objective/noise cell");
    common(train);
    std::string data_dir, objective_name = "bayesian";
    double noise = 0.0;
    std::size_t triplet_count = 50000;
    std::optional<int> epochs;
    train->add_option("--data", data_dir, "Dataset directory")->required();
    train->add_option("--objective", objective_name, "bayesian | traditional | unsupervised");
    train->add_option("--noise", noise, "Std of label noise before triplet generation (0.5 for the noisy cell)");
    train->add_option("--triplets", triplet_count, "Training triplets");
    train->add_option("--epochs", epochs, "Override the epoch count");

    // eval
    auto* eval = app.add_subcommand("eval", "Triplet satisfaction and reconstruction error on the test split");
    common(eval);
    std::string model_path;
    std::size_t eval_triplets = 10000;
    eval->add_option("--data", data_dir, "Dataset directory")->required();
    eval->add_option("--model", model_path, "Checkpoint")->required();
    eval->add_option("--triplets", eval_triplets, "Evaluation triplets");

    // localize
    auto* localize = app.add_subcommand("localize", "Run one localization session");
    common(localize);
    std::string response_name, resume_path;
    std::optional<int> budget;
    std::optional<std::size_t> ground_truth;
    bool interactive = false;
    double timeout_s = 600.0;
    localize->add_option("--data", data_dir, "Dataset directory")->required();
    localize->add_option("--model", model_path, "Checkpoint")->required();
    localize->add_option("--response", response_name, "btrm | logistic");
    localize->add_option("--budget", budget, "Number of queries");
    localize->add_option("--ground-truth", ground_truth, "Target item for the synthetic oracle (default: random)");
    localize->add_flag("--interactive", interactive, "Answer queries on stdin");
    localize->add_option("--timeout", timeout_s, "Seconds to wait for each interactive answer");
    localize->add_option("--resume", resume_path, "Session state written by a suspended interactive run");

    // experiment
    auto* experiment = app.add_subcommand("experiment", "Run the objective x response x noise grid");
    common(experiment);
    std::string models_dir;
    std::optional<int> trials;
    experiment->add_option("--data", data_dir, "Dataset directory")->required();
    experiment->add_option("--models", models_dir, "Directory of <objective>_<clean|noisy>.json checkpoints")
        ->required();
    experiment->add_option("--trials", trials, "Trials per cell");
    experiment->add_option("--budget", budget, "Queries per trial");

    // serve
    auto* serve = app.add_subcommand("serve", "Start the HTTP session service");
    common(serve);
    std::vector<std::string> model_specs;
    std::string host = "127.0.0.1";
    int port = 8080;
    serve->add_option("--data", data_dir, "Dataset directory")->required();
    serve->add_option("--model", model_specs, "id=checkpoint, repeatable")->required();
    serve->add_option("--host", host, "Listen address");
    serve->add_option("--port", port, "Listen port");

    CLI11_PARSE(app, argc, argv);

    try {
        const json config = load_config(config_path);

        if (*gen) {
            const auto dir = ensure_dir(out_dir);
            const auto ds = generate_synthetic_dataset(train_count, test_count, seed.value_or(0));
            export_dataset(ds, dir, write_pgms);
            std::cout << "wrote " << ds.items.size() << " items to " << dir << "\n";
        } else if (*train) {
            auto cfg = config.get<vae::TrainConfig>();
            cfg.objective = vae::objective_from_string(objective_name);
            if (seed) cfg.seed = *seed;
            if (epochs) cfg.epochs = *epochs;
            const auto ds = import_dataset(data_dir);
            const auto data = make_training_data(ds, triplet_count, noise, derive_seed(cfg.seed, 1));
            const auto t0 = std::chrono::steady_clock::now();
            const auto result = vae::train(data.images, data.triplets, cfg);
            const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            const auto dir = ensure_dir(out_dir);
            const auto name = model_key(cfg.objective, noise > 0.0);
            vae::save_checkpoint(result.model, dir / (name + ".json"),
                                 json{{"train_config", cfg}, {"noise", noise}, {"triplets", triplet_count}});
            vae::write_training_csv(result.history, dir / (name + "_training.csv"));
            const auto report = evaluate_model(result.model, ds, 10000, derive_seed(cfg.seed, 2));
            std::cout << name << ": trained in " << secs << " s, satisfaction " << report.triplet_satisfaction
                      << "%, reconstruction " << report.reconstruction_error << "\n";
        } else if (*eval) {
            const auto ds = import_dataset(data_dir);
            const auto model = vae::load_checkpoint(model_path);
            const auto report = evaluate_model(model, ds, eval_triplets, seed.value_or(0));
            const json j{{"model", model_path},
                         {"triplet_satisfaction", report.triplet_satisfaction},
                         {"reconstruction_error", report.reconstruction_error}};
            std::cout << j.dump(2) << "\n";
            write_text_file(ensure_dir(out_dir) / "eval.json", j.dump(2) + "\n");
        } else if (*localize) {
            auto ds = load_dataset(data_dir);
            auto model = std::make_shared<const vae::VaeModel>(vae::load_checkpoint(model_path));
            const auto space = SearchSpace::over_test_split(model, ds);
            const auto dir = ensure_dir(out_dir);

            std::optional<LocalizationSession> session;
            if (!resume_path.empty()) {
                session.emplace(LocalizationSession::resume(space, json::parse(read_text_file(resume_path))));
            } else {
                auto cfg = config.get<SessionConfig>();
                if (seed) cfg.seed = *seed;
                if (budget) cfg.budget = *budget;
                if (!response_name.empty()) cfg.response.kind = response_kind_from_string(response_name);
                session.emplace(space, cfg);
            }

            std::optional<std::size_t> target;
            std::unique_ptr<Oracle> oracle;
            if (interactive) {
                oracle = std::make_unique<InteractiveOracle>(
                    fd_line_source(STDIN_FILENO, std::chrono::milliseconds(static_cast<long>(timeout_s * 1000))),
                    std::cout);
            } else {
                target = ground_truth ? *ground_truth : pick_ground_truth(*space, session->config().seed);
                oracle = std::make_unique<SyntheticOracle>(ds->standardizer.apply(ds->items.at(*target).metadata));
            }
            const auto status = drive_session(*session, *oracle);
            const auto trajectory = make_trajectory(*session, target);
            write_run_record(trajectory, dir / "run_record.json");
            write_pgm(session->estimate(), dir / "estimate.pgm");
            if (status == SessionStatus::Suspended) {
                write_text_file(dir / "session_state.json", session->state_json().dump(2) + "\n");
                std::cout << "\nsuspended after " << session->answered() << " answers; resume with --resume "
                          << (dir / "session_state.json").string() << "\n";
                return 3;
            }
            std::cout << "finished " << session->answered() << " queries; nearest neighbor item "
                      << trajectory.nearest_neighbor.value();
            if (target) {
                std::cout << ", ground truth item " << *target << ", metadata loss "
                          << *trajectory.baseline_metadata_loss << " -> "
                          << trajectory.queries.back().metadata_loss.value();
            }
            std::cout << "\n";
        } else if (*experiment) {
            auto cfg = config.get<ExperimentConfig>();
            if (seed) cfg.seed = *seed;
            if (trials) cfg.trials = *trials;
            if (budget) cfg.budget = *budget;
            auto ds = load_dataset(data_dir);
            ModelRegistry models;
            for (const auto& cell : cfg.cells) {
                const auto key = model_key(cell.objective, cell.noisy);
                const auto path = fs::path(models_dir) / (key + ".json");
                // Unsupervised training ignores triplets, so one checkpoint serves both noise conditions.
                const auto fallback = fs::path(models_dir) / (model_key(cell.objective, false) + ".json");
                if (models.contains(key)) continue;
                if (fs::exists(path)) {
                    models[key] = std::make_shared<const vae::VaeModel>(vae::load_checkpoint(path));
                } else if (cell.objective == vae::Objective::Unsupervised && fs::exists(fallback)) {
                    models[key] = std::make_shared<const vae::VaeModel>(vae::load_checkpoint(fallback));
                }
            }
            const auto result =
                run_experiment(models, ds, cfg, [](const std::string& msg) { std::cerr << msg << "\n"; });
            const auto dir = ensure_dir(out_dir);
            write_experiment_csv(result, dir / "trials.csv");
            write_summary_csv(result, dir / "summary.csv");
            write_trajectories(result, dir / "runs");
            write_text_file(dir / "experiment_config.json", json(cfg).dump(2) + "\n");
            std::cout << "wrote " << result.rows.size() << " loss rows to " << (dir / "trials.csv").string() << "\n";
        } else if (*serve) {
            ServiceOptions options;
            options.defaults = config.get<SessionConfig>();
            options.seed = seed.value_or(0);
            SessionService service(options);
            auto ds = load_dataset(data_dir);
            for (const auto& spec : model_specs) {
                const auto eq = spec.find('=');
                if (eq == std::string::npos) throw std::invalid_argument("--model expects id=checkpoint, got " + spec);
                auto model = std::make_shared<const vae::VaeModel>(vae::load_checkpoint(spec.substr(eq + 1)));
                service.add_model(spec.substr(0, eq), SearchSpace::over_test_split(model, ds));
            }
            HttpServer server(service);
            const int bound = server.bind(host, port);
            g_server = &server;
            std::signal(SIGINT, handle_signal);
            std::signal(SIGTERM, handle_signal);
            std::cout << "listening on http://" << host << ":" << bound << std::endl;
            server.run();
            g_server = nullptr;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
