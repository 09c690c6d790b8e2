#include "prefsearch/service.hpp"

#include <iomanip>
#include <mutex>
#include <sstream>
#include <stdexcept>

#include <httplib.h>

namespace prefsearch {

using nlohmann::json;

json image_to_json(const Image& img) {
    json rows = json::array();
    for (int r = 0; r < kImageSide; ++r) {
        json row = json::array();
        for (int c = 0; c < kImageSide; ++c) row.push_back(img.at(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

Image image_from_json(const json& rows) {
    if (!rows.is_array() || rows.size() != kImageSide) throw std::invalid_argument("image: expected 28 rows");
    std::vector<double> px;
    px.reserve(kImagePixels);
    for (const auto& row : rows) {
        if (!row.is_array() || row.size() != kImageSide) throw std::invalid_argument("image: expected 28 columns");
        for (const auto& v : row) px.push_back(v.get<double>());
    }
    return Image(px);
}

namespace {

ServiceResponse error(int status, const std::string& message) { return {status, json{{"error", message}}}; }

json vec_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

json query_json(const LocalizationSession& s) {
    if (s.finished()) return nullptr;
    const auto& q = s.current_query();
    return json{{"index", s.answered() + 1},
                {"a_id", q.a},
                {"b_id", q.b},
                {"a", image_to_json(s.space().image(q.a))},
                {"b", image_to_json(s.space().image(q.b))}};
}

const char* state_name(const LocalizationSession& s) { return s.finished() ? "finished" : "awaiting_answer"; }

}  // namespace

struct SessionService::Entry {
    std::string id;
    std::string model_id;
    mutable std::mutex mutex;
    LocalizationSession session;

    Entry(std::string id_, std::string model, LocalizationSession s)
        : id(std::move(id_)), model_id(std::move(model)), session(std::move(s)) {}
};

SessionService::SessionService(ServiceOptions options) : options_(std::move(options)) {}
SessionService::~SessionService() = default;

void SessionService::add_model(const std::string& id, std::shared_ptr<const SearchSpace> space) {
    if (!space) throw std::invalid_argument("add_model: null search space");
    models_[id] = std::move(space);
}

std::vector<std::string> SessionService::model_ids() const {
    std::vector<std::string> ids;
    for (const auto& [id, _] : models_) ids.push_back(id);
    return ids;
}

ServiceResponse SessionService::list_models() const { return {200, json{{"models", model_ids()}}}; }

std::shared_ptr<SessionService::Entry> SessionService::find(const std::string& id) const {
    std::shared_lock lock(sessions_mutex_);
    const auto it = sessions_.find(id);
    return it == sessions_.end() ? nullptr : it->second;
}

ServiceResponse SessionService::create_session(const std::string& body) {
    json req;
    try {
        req = json::parse(body);
    } catch (const json::parse_error&) {
        return error(400, "body is not valid JSON");
    }
    if (!req.is_object()) return error(400, "body must be a JSON object");
    if (!req.contains("model_id") || !req["model_id"].is_string()) return error(400, "model_id (string) is required");
    if (!req.contains("response_model") || !req["response_model"].is_string()) {
        return error(400, "response_model (\"btrm\" or \"logistic\") is required");
    }
    const auto model_id = req["model_id"].get<std::string>();
    const auto model = models_.find(model_id);
    if (model == models_.end()) return error(404, "unknown model '" + model_id + "'");

    SessionConfig cfg = options_.defaults;
    try {
        cfg.response.kind = response_kind_from_string(req["response_model"].get<std::string>());
    } catch (const std::invalid_argument& e) {
        return error(400, e.what());
    }
    if (req.contains("budget")) {
        if (!req["budget"].is_number_integer()) return error(400, "budget must be an integer");
        const auto budget = req["budget"].get<std::int64_t>();
        if (budget < 1 || budget > options_.max_budget) {
            return error(400, "budget must be between 1 and " + std::to_string(options_.max_budget));
        }
        cfg.budget = static_cast<int>(budget);
    }
    const std::uint64_t n = counter_.fetch_add(1);
    if (req.contains("seed")) {
        if (!req["seed"].is_number_unsigned() && !req["seed"].is_number_integer()) {
            return error(400, "seed must be a non-negative integer");
        }
        if (req["seed"].is_number_integer() && req["seed"].get<std::int64_t>() < 0) {
            return error(400, "seed must be a non-negative integer");
        }
        cfg.seed = req["seed"].get<std::uint64_t>();
    } else {
        cfg.seed = derive_seed(options_.seed, n);
    }

    std::ostringstream id;
    id << std::hex << std::setw(16) << std::setfill('0') << derive_seed(options_.seed ^ 0x5e55, n);
    auto entry = std::make_shared<Entry>(id.str(), model_id, LocalizationSession(model->second, cfg));
    {
        std::unique_lock lock(sessions_mutex_);
        if (sessions_.size() >= options_.max_sessions) return error(503, "session limit reached");
        sessions_[entry->id] = entry;
    }
    const auto& s = entry->session;
    return {201, json{{"session_id", entry->id},
                      {"model_id", model_id},
                      {"budget", cfg.budget},
                      {"seed", cfg.seed},
                      {"state", state_name(s)},
                      {"query", query_json(s)}}};
}

ServiceResponse SessionService::answer(const std::string& session_id, const std::string& body) {
    const auto entry = find(session_id);
    if (!entry) return error(404, "unknown session '" + session_id + "'");

    json req;
    try {
        req = json::parse(body);
    } catch (const json::parse_error&) {
        return error(400, "body is not valid JSON");
    }
    if (!req.is_object() || !req.contains("choice") || !req["choice"].is_string()) {
        return error(400, "choice (\"a\" or \"b\") is required");
    }
    const auto choice = req["choice"].get<std::string>();
    if (choice != "a" && choice != "b") return error(400, "choice must be \"a\" or \"b\"");

    std::unique_lock lock(entry->mutex, std::try_to_lock);
    if (!lock.owns_lock()) return error(409, "another answer for this session is in progress");
    auto& s = entry->session;
    if (s.finished()) return error(409, "session is finished");

    const auto& step = s.answer(choice == "a" ? Choice::A : Choice::B);
    return {200, json{{"query_index", s.answered()},
                      {"state", state_name(s)},
                      {"next_query", query_json(s)},
                      {"estimate", image_to_json(step.estimate)},
                      {"posterior", {{"mean", vec_json(step.mean)}, {"std", vec_json(step.stddev)}}},
                      {"acceptance_rate", step.acceptance_rate}}};
}

ServiceResponse SessionService::snapshot(const std::string& session_id) const {
    const auto entry = find(session_id);
    if (!entry) return error(404, "unknown session '" + session_id + "'");
    std::lock_guard lock(entry->mutex);
    const auto& s = entry->session;
    json answers = json::array();
    int index = 0;
    for (const auto& step : s.steps()) {
        answers.push_back(json{{"query_index", ++index},
                               {"a_id", step.pair.a},
                               {"b_id", step.pair.b},
                               {"choice", step.choice == Choice::A ? "a" : "b"},
                               {"posterior_mean", vec_json(step.mean)},
                               {"posterior_std", vec_json(step.stddev)},
                               {"acceptance_rate", step.acceptance_rate}});
    }
    json out{{"session_id", entry->id},
             {"model_id", entry->model_id},
             {"state", state_name(s)},
             {"budget", s.config().budget},
             {"seed", s.config().seed},
             {"config", s.config()},
             {"answered", s.answered()},
             {"answers", answers},
             {"current_query", query_json(s)},
             {"estimate", image_to_json(s.estimate())},
             {"posterior", {{"mean", vec_json(s.posterior_mean())}, {"std", vec_json(s.posterior_std())}}}};
    if (s.finished()) {
        out["final_estimate"] = out["estimate"];
        out["nearest_neighbor"] = nearest_neighbor_estimate(s.posterior_mean(), s.space());
    }
    return {200, out};
}

ServiceResponse SessionService::record(const std::string& session_id) const {
    const auto entry = find(session_id);
    if (!entry) return error(404, "unknown session '" + session_id + "'");
    std::lock_guard lock(entry->mutex);
    return {200, json(make_trajectory(entry->session, std::nullopt))};
}

// ---- HTTP

struct HttpServer::Impl {
    SessionService& service;
    httplib::Server server;

    explicit Impl(SessionService& s) : service(s) {}

    static void send(httplib::Response& res, const ServiceResponse& r) {
        res.status = r.status;
        res.set_content(r.body.dump(), "application/json");
    }
};

HttpServer::HttpServer(SessionService& service) : impl_(std::make_unique<Impl>(service)) {
    auto& srv = impl_->server;
    auto& svc = impl_->service;
    srv.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                             {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                             {"Access-Control-Allow-Headers", "Content-Type"}});
    srv.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
    srv.Get("/health", [](const httplib::Request&, httplib::Response& res) {
        res.set_content(R"({"status":"ok"})", "application/json");
    });
    srv.Get("/models", [&svc](const httplib::Request&, httplib::Response& res) { Impl::send(res, svc.list_models()); });
    srv.Post("/sessions", [&svc](const httplib::Request& req, httplib::Response& res) {
        Impl::send(res, svc.create_session(req.body));
    });
    srv.Post(R"(/sessions/([0-9a-zA-Z_-]+)/answer)", [&svc](const httplib::Request& req, httplib::Response& res) {
        Impl::send(res, svc.answer(req.matches[1], req.body));
    });
    srv.Get(R"(/sessions/([0-9a-zA-Z_-]+))", [&svc](const httplib::Request& req, httplib::Response& res) {
        Impl::send(res, svc.snapshot(req.matches[1]));
    });
    srv.Get(R"(/sessions/([0-9a-zA-Z_-]+)/record)", [&svc](const httplib::Request& req, httplib::Response& res) {
        Impl::send(res, svc.record(req.matches[1]));
    });
    srv.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
        std::string what = "internal error";
        try {
            std::rethrow_exception(ep);
        } catch (const std::exception& e) {
            what = e.what();
        } catch (...) {
        }
        res.status = 500;
        res.set_content(json{{"error", what}}.dump(), "application/json");
    });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
    if (port == 0) {
        const int bound = impl_->server.bind_to_any_port(host);
        if (bound < 0) throw std::runtime_error("cannot bind " + host);
        return bound;
    }
    if (!impl_->server.bind_to_port(host, port)) {
        throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
    }
    return port;
}

void HttpServer::run() { impl_->server.listen_after_bind(); }

void HttpServer::stop() {
    if (impl_) impl_->server.stop();
}

}  // namespace prefsearch
