#pragma once

// HTTP/JSON front end for interactive localization sessions.
//
//   GET  /models                 registered model ids
//   POST /sessions               {model_id, response_model, budget?, seed?}
//   POST /sessions/{id}/answer   {choice: "a" | "b"}
//   GET  /sessions/{id}          snapshot, safe to poll
//   GET  /sessions/{id}/record   run record of the session so far
//
// Images travel as 28 rows of 28 numbers in [0,1].

#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <shared_mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "prefsearch/harness.hpp"

namespace prefsearch {

nlohmann::json image_to_json(const Image& img);
Image image_from_json(const nlohmann::json& rows);

struct ServiceOptions {
    SessionConfig defaults;      // response kind and budget come from each request
    std::uint64_t seed = 0;      // session seeds derive from this unless given
    int max_budget = 1000;
    std::size_t max_sessions = 10000;
};

struct ServiceResponse {
    int status = 200;
    nlohmann::json body;
};

/// Transport-free session store. Each session is guarded by its own mutex;
/// a request that finds it held gets 409 instead of waiting.
class SessionService {
public:
    explicit SessionService(ServiceOptions options = {});
    ~SessionService();

    void add_model(const std::string& id, std::shared_ptr<const SearchSpace> space);
    std::vector<std::string> model_ids() const;

    ServiceResponse list_models() const;
    ServiceResponse create_session(const std::string& body);
    ServiceResponse answer(const std::string& session_id, const std::string& body);
    ServiceResponse snapshot(const std::string& session_id) const;
    ServiceResponse record(const std::string& session_id) const;

private:
    struct Entry;
    std::shared_ptr<Entry> find(const std::string& id) const;

    ServiceOptions options_;
    std::map<std::string, std::shared_ptr<const SearchSpace>> models_;
    mutable std::shared_mutex sessions_mutex_;
    std::map<std::string, std::shared_ptr<Entry>> sessions_;
    std::atomic<std::uint64_t> counter_{0};
};

/// Binds SessionService to an HTTP listener with permissive CORS.
class HttpServer {
public:
    explicit HttpServer(SessionService& service);
    ~HttpServer();

    /// Port 0 picks a free port. Returns the bound port or throws.
    int bind(const std::string& host, int port);
    /// Blocks until stop().
    void run();
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace prefsearch
