#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ibet/betting.hpp"
#include "ibet/dataset.hpp"
#include "ibet/error.hpp"
#include "ibet/models.hpp"

namespace ibet::service {

/// Error carrying a structured payload for the client (field name, legal bet interval, ...).
class ServiceError : public Error {
public:
    ServiceError(ErrorCode code, const std::string& what, nlohmann::json detail = nlohmann::json::object())
        : Error(code, what), detail_(std::move(detail)) {}

    const nlohmann::json& detail() const noexcept { return detail_; }

private:
    nlohmann::json detail_;
};

struct ModelConfig {
    DesignSpec design = DesignSpec::linear_with_interactions();
    EmOptions em;
};

nlohmann::json to_json(const ModelConfig& m);
/// Accepts {"design": {...}, "max_iter": k, "tol": t}. Unknown fields are rejected.
ModelConfig model_config_from_json(const nlohmann::json& j);

struct ServiceOptions {
    /// Directory for event logs, snapshots and sealed assignments; in-memory when empty.
    std::optional<std::string> data_dir;
    /// Snapshot cadence in events.
    std::size_t snapshot_every = 20;
};

/// Pushed to subscribers after every state change, in log order.
struct SessionEvent {
    std::string session_id;
    std::uint64_t seq = 0;
    std::string type;
    nlohmann::json delta;

    nlohmann::json to_json() const;
};

using Listener = std::function<void(const SessionEvent&)>;

/// Live interactive sessions behind the HTTP API. Requests and responses are
/// JSON documents; the sealed assignments stay inside the service and only
/// leave it one reveal at a time.
class SessionService {
public:
    explicit SessionService(ServiceOptions options = {});
    ~SessionService();

    SessionService(const SessionService&) = delete;
    SessionService& operator=(const SessionService&) = delete;

    /// {"csv": "...", "alpha", "gamma", "model"?, "seed"?, "fixed_treated"?}
    nlohmann::json create_session(const nlohmann::json& request);
    nlohmann::json get_session(const std::string& id) const;
    /// {"subject", "w"}
    nlohmann::json commit_bet(const std::string& id, const nlohmann::json& request);
    nlohmann::json reveal(const std::string& id);
    /// {"model": {...}} or a bare model config.
    nlohmann::json refit_model(const std::string& id, const nlohmann::json& request);
    /// {"csv": "...", "fixed_treated"?}
    nlohmann::json extend_session(const std::string& id, const nlohmann::json& request);
    /// [{step, logM, p}, ...] starting at step 0.
    nlohmann::json wealth(const std::string& id) const;

    std::vector<std::string> list_sessions() const;
    bool has_session(const std::string& id) const;

    std::uint64_t subscribe(const std::string& id, Listener listener);
    void unsubscribe(const std::string& id, std::uint64_t token);

    /// Appended event log lines of a session (empty when running in memory).
    std::vector<nlohmann::json> event_log(const std::string& id) const;

    /// Sessions restored from `data_dir` at construction.
    std::size_t restored() const noexcept { return restored_; }

    struct Session;

private:
    std::shared_ptr<Session> find(const std::string& id) const;
    void persist_event(Session& s, nlohmann::json event);
    void write_snapshot(const Session& s) const;
    void write_sealed(const Session& s) const;
    void restore_all();
    std::shared_ptr<Session> restore(const std::string& dir);
    void publish(Session& s, const std::string& type, nlohmann::json delta);

    ServiceOptions options_;
    mutable std::mutex map_mutex_;
    std::map<std::string, std::shared_ptr<Session>> sessions_;
    std::size_t restored_ = 0;
};

/// Maps error codes onto HTTP status codes.
int http_status_for(ErrorCode code);

}  // namespace ibet::service
