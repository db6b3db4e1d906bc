#include "ibet/service/session_service.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <unistd.h>

#include "ibet/rng.hpp"

namespace ibet::service {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::int64_t now_ms() {
    return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch()).count();
}

std::string random_token() {
    std::random_device rd;
    std::uint64_t hi = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
    std::uint64_t lo = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
    char buf[33];
    std::snprintf(buf, sizeof buf, "%016llx%016llx", static_cast<unsigned long long>(hi), static_cast<unsigned long long>(lo));
    return buf;
}

std::uint64_t random_seed() {
    std::random_device rd;
    return (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
}

json subject_json(const MaskedSubject& s) { return {{"y", s.y}, {"x", s.x}, {"mu", s.mu}}; }

MaskedSubject subject_from_json(const json& j, std::size_t id) {
    MaskedSubject s;
    s.id = id;
    s.y = j.at("y").get<double>();
    s.x = j.at("x").get<std::vector<double>>();
    s.mu = j.at("mu").get<double>();
    return s;
}

template <class T>
T field(const json& j, const char* name) {
    if (!j.contains(name)) throw ServiceError(ErrorCode::schema, std::string("missing field '") + name + "'", {{"field", name}});
    try {
        return j.at(name).get<T>();
    } catch (const json::exception&) {
        throw ServiceError(ErrorCode::schema, std::string("field '") + name + "' has the wrong type", {{"field", name}});
    }
}

void require_object(const json& j) {
    if (!j.is_object()) throw ServiceError(ErrorCode::schema, "request body must be a JSON object");
}

void reject_unknown(const json& j, std::initializer_list<const char*> allowed) {
    for (const auto& [k, v] : j.items()) {
        if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return k == a; }))
            throw ServiceError(ErrorCode::schema, "unknown field '" + k + "'", {{"field", k}});
    }
}

Dataset parse_upload(const json& request) {
    const std::string csv = field<std::string>(request, "csv");
    std::istringstream in(csv);
    try {
        return read_dataset_csv(in);
    } catch (const Error& e) {
        throw ServiceError(e.code(), e.what(), {{"field", "csv"}});
    }
}

void append_line(const std::string& path, const std::string& line) {
    std::FILE* f = std::fopen(path.c_str(), "ab");
    if (!f) fail(ErrorCode::io, "cannot open " + path);
    const bool ok = std::fwrite(line.data(), 1, line.size(), f) == line.size() && std::fputc('\n', f) != EOF &&
                    std::fflush(f) == 0 && ::fsync(fileno(f)) == 0;
    std::fclose(f);
    if (!ok) fail(ErrorCode::io, "failed appending to " + path);
}

void write_atomic(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) fail(ErrorCode::io, "cannot write " + tmp);
        out << content;
        out.flush();
        if (!out) fail(ErrorCode::io, "failed writing " + tmp);
    }
    fs::rename(tmp, path);
}

}  // namespace

json to_json(const ModelConfig& m) {
    return {{"design", to_json(m.design)}, {"max_iter", m.em.max_iter}, {"tol", m.em.tol}};
}

ModelConfig model_config_from_json(const json& j) {
    if (!j.is_object()) throw ServiceError(ErrorCode::config, "model config must be an object", {{"field", "model"}});
    ModelConfig m;
    for (const auto& [k, v] : j.items()) {
        try {
            if (k == "design") m.design = design_from_json(v);
            else if (k == "max_iter") m.em.max_iter = v.get<int>();
            else if (k == "tol") m.em.tol = v.get<double>();
            else throw ServiceError(ErrorCode::config, "unknown model field '" + k + "'", {{"field", "model." + k}});
        } catch (const json::exception& e) {
            throw ServiceError(ErrorCode::config, "model field '" + k + "': " + e.what(), {{"field", "model." + k}});
        } catch (const ServiceError&) {
            throw;
        } catch (const Error& e) {
            throw ServiceError(e.code(), e.what(), {{"field", "model." + k}});
        }
    }
    if (m.em.max_iter < 1) throw ServiceError(ErrorCode::config, "max_iter must be positive", {{"field", "model.max_iter"}});
    if (!(m.em.tol > 0.0)) throw ServiceError(ErrorCode::config, "tol must be positive", {{"field", "model.tol"}});
    return m;
}

json SessionEvent::to_json() const { return {{"session", session_id}, {"seq", seq}, {"type", type}, {"delta", delta}}; }

int http_status_for(ErrorCode code) {
    switch (code) {
        case ErrorCode::not_found: return 404;
        case ErrorCode::protocol_violation:
        case ErrorCode::already_revealed:
        case ErrorCode::already_rejected:
        case ErrorCode::exhausted: return 409;
        case ErrorCode::io: return 500;
        default: return 400;
    }
}

// ---------------------------------------------------------------------------

struct SessionService::Session {
    std::string id;
    std::mutex mutex;
    std::optional<BettingSession> betting;
    /// Assignments of every subject; never serialized into a client view.
    std::vector<int> sealed;
    ModelConfig model;
    std::vector<double> q;
    std::vector<std::string> warnings;
    double gamma = 0.0;
    std::uint64_t seed = 0;
    std::int64_t created_ms = 0;
    std::int64_t updated_ms = 0;
    std::uint64_t seq = 0;
    std::string dir;
    std::vector<json> log;
    std::map<std::uint64_t, Listener> listeners;
    std::uint64_t next_listener = 1;

    void refresh_suggestions();
    json view() const;
    json wealth_series() const;
    std::vector<json> apply(const json& event);
};

void SessionService::Session::refresh_suggestions() {
    const BettingSession& b = *betting;
    std::vector<std::optional<int>> revealed(b.size());
    for (std::size_t i = 0; i < b.size(); ++i) revealed[i] = b.revealed_assignment(i);
    warnings.clear();
    try {
        const WorkingModelFit fit = b.support().is_binary()
                                        ? fit_em(b.subjects(), revealed, model.design, model.em)
                                        : fit_em_multiarm(b.subjects(), revealed, b.support().max_value(), model.design, model.em);
        q = fit.q;
        warnings = fit.warnings;
    } catch (const Error& e) {
        q.assign(b.size(), 0.0);
        for (std::size_t i = 0; i < b.size(); ++i) q[i] = b.subject(i).mu;
        warnings.push_back(std::string("model fit failed: ") + e.what());
    }
}

json SessionService::Session::view() const {
    const BettingSession& b = *betting;
    json subjects = json::array();
    for (std::size_t i = 0; i < b.size(); ++i) {
        const MaskedSubject& s = b.subject(i);
        const auto a = b.revealed_assignment(i);
        json row{{"id", i}, {"y", s.y}, {"x", s.x}, {"mu", s.mu}, {"revealed", a.has_value()}, {"a", nullptr},
                 {"q", i < q.size() ? q[i] : s.mu}};
        if (a) row["a"] = *a;
        if (!a && b.status() == SessionStatus::betting) {
            const BetBounds bb = b.bounds_for(i);
            row["bounds"] = {bb.lower, bb.upper};
        }
        subjects.push_back(std::move(row));
    }
    json pending = nullptr;
    if (b.pending()) pending = {{"subject", b.pending()->subject}, {"w", b.pending()->w}, {"step", b.pending()->committed_at}};
    return {{"id", id},
            {"status", to_string(b.status())},
            {"alpha", b.alpha()},
            {"gamma", gamma},
            {"seed", seed},
            {"mode", to_string(b.mode())},
            {"support", b.support().values},
            {"n", b.size()},
            {"created_ms", created_ms},
            {"updated_ms", updated_ms},
            {"seq", seq},
            {"model", to_json(model)},
            {"warnings", warnings},
            {"wealth",
             {{"log_wealth", static_cast<double>(b.log_wealth())},
              {"anytime_p", b.anytime_p()},
              {"steps", b.steps()},
              {"threshold_log", std::log(1.0 / b.alpha())}}},
            {"pending", pending},
            {"holdout", b.holdout()},
            {"subjects", subjects},
            {"snapshot", b.to_json()}};
}

json SessionService::Session::wealth_series() const {
    const BettingSession& b = *betting;
    json out = json::array();
    long double max_log = 0.0L;
    const auto& path = b.log_wealth_path();
    for (std::size_t t = 0; t < path.size(); ++t) {
        max_log = std::max(max_log, path[t]);
        out.push_back({{"step", t}, {"logM", static_cast<double>(path[t])}, {"p", std::min(1.0, static_cast<double>(std::exp(-max_log)))}});
    }
    return out;
}

/// Applies one logged event to the in-memory state. Live requests and log
/// replay both go through here. Returns forced reveals for reveal events.
std::vector<json> SessionService::Session::apply(const json& ev) {
    const std::string type = ev.at("type").get<std::string>();
    const std::int64_t ts = ev.value("ts", std::int64_t{0});
    std::vector<json> extra;
    if (type == "create") {
        std::vector<MaskedSubject> subjects;
        for (const auto& s : ev.at("subjects")) subjects.push_back(subject_from_json(s, subjects.size()));
        AssignmentSupport support;
        support.values = ev.at("support").get<std::vector<int>>();
        std::optional<std::size_t> m;
        if (ev.contains("fixed_treated") && !ev.at("fixed_treated").is_null()) m = ev.at("fixed_treated").get<std::size_t>();
        betting.emplace(std::move(subjects), support, ev.at("alpha").get<double>(),
                        m ? RandomizationMode::fixed_sum : RandomizationMode::bernoulli_mu, m);
        gamma = ev.at("gamma").get<double>();
        seed = ev.at("seed").get<std::uint64_t>();
        model = model_config_from_json(ev.at("model"));
        created_ms = ts;
        for (const auto& h : ev.at("holdout")) {
            const std::size_t id = h.at("id").get<std::size_t>();
            const int a = h.at("a").get<int>();
            if (sealed.at(id) != a) fail(ErrorCode::schema, "holdout assignment disagrees with the sealed data");
            betting->reveal_holdout(id, a, ts);
        }
        betting->start_betting(ts);
    } else if (type == "commit") {
        betting->commit(ev.at("subject").get<std::size_t>(), ev.at("w").get<double>(), ts);
    } else if (type == "reveal") {
        const std::size_t id = ev.at("subject").get<std::size_t>();
        const int a = ev.at("a").get<int>();
        if (!betting->pending() || betting->pending()->subject != id)
            fail(ErrorCode::protocol_violation, "reveal does not match the pending bet");
        if (sealed.at(id) != a) fail(ErrorCode::schema, "revealed assignment disagrees with the sealed data");
        const StepOutcome o = betting->reveal(a, ts);
        for (std::size_t f : o.forced) extra.push_back({{"subject", f}, {"a", *betting->revealed_assignment(f)}});
    } else if (type == "model") {
        model = model_config_from_json(ev.at("model"));
    } else if (type == "extend") {
        std::vector<MaskedSubject> more;
        for (const auto& s : ev.at("subjects")) more.push_back(subject_from_json(s, 0));
        std::optional<std::size_t> m;
        if (ev.contains("fixed_treated") && !ev.at("fixed_treated").is_null()) m = ev.at("fixed_treated").get<std::size_t>();
        if (sealed.size() < betting->size() + more.size()) fail(ErrorCode::schema, "sealed data does not cover the extension");
        const auto forced = betting->extend(std::move(more), m, ts);
        for (std::size_t f : forced) extra.push_back({{"subject", f}, {"a", *betting->revealed_assignment(f)}});
    } else {
        fail(ErrorCode::schema, "unknown event type '" + type + "'");
    }
    updated_ms = ts;
    return extra;
}

// ---------------------------------------------------------------------------

SessionService::SessionService(ServiceOptions options) : options_(std::move(options)) {
    if (options_.snapshot_every == 0) options_.snapshot_every = 1;
    if (options_.data_dir) {
        fs::create_directories(*options_.data_dir);
        restore_all();
    }
}

SessionService::~SessionService() = default;

std::shared_ptr<SessionService::Session> SessionService::find(const std::string& id) const {
    std::lock_guard lock(map_mutex_);
    const auto it = sessions_.find(id);
    if (it == sessions_.end()) throw ServiceError(ErrorCode::not_found, "no session '" + id + "'");
    return it->second;
}

bool SessionService::has_session(const std::string& id) const {
    std::lock_guard lock(map_mutex_);
    return sessions_.count(id) > 0;
}

std::vector<std::string> SessionService::list_sessions() const {
    std::lock_guard lock(map_mutex_);
    std::vector<std::string> ids;
    for (const auto& [id, s] : sessions_) ids.push_back(id);
    return ids;
}

void SessionService::persist_event(Session& s, json event) {
    event["seq"] = ++s.seq;
    if (!s.dir.empty()) {
        append_line(s.dir + "/events.jsonl", event.dump());
        if (s.seq % options_.snapshot_every == 0) write_snapshot(s);
    }
    s.log.push_back(std::move(event));
}

void SessionService::write_snapshot(const Session& s) const {
    if (s.dir.empty()) return;
    json snap = s.view();
    snap["events"] = s.seq;
    write_atomic(s.dir + "/snapshot.json", snap.dump());
}

void SessionService::write_sealed(const Session& s) const {
    if (s.dir.empty()) return;
    write_atomic(s.dir + "/sealed.json", json{{"assignments", s.sealed}}.dump());
}

void SessionService::publish(Session& s, const std::string& type, json delta) {
    const SessionEvent ev{s.id, s.seq, type, std::move(delta)};
    for (auto& [token, listener] : s.listeners) listener(ev);
}

json SessionService::create_session(const json& request) {
    require_object(request);
    reject_unknown(request, {"csv", "alpha", "gamma", "model", "seed", "fixed_treated"});
    const Dataset data = parse_upload(request);
    const double alpha = request.contains("alpha") ? field<double>(request, "alpha") : 0.05;
    if (!(alpha > 0.0 && alpha < 1.0)) throw ServiceError(ErrorCode::config, "alpha must lie in (0,1)", {{"field", "alpha"}});
    const double gamma = request.contains("gamma") ? field<double>(request, "gamma") : 0.1;
    if (!(gamma >= 0.0 && gamma < 1.0)) throw ServiceError(ErrorCode::config, "gamma must lie in [0,1)", {{"field", "gamma"}});
    ModelConfig model;
    if (request.contains("model")) model = model_config_from_json(request.at("model"));
    try {
        model.design.validate(data.covariate_dim());
    } catch (const Error& e) {
        throw ServiceError(e.code(), e.what(), {{"field", "model.design"}});
    }
    std::optional<std::size_t> m;
    if (request.contains("fixed_treated") && !request.at("fixed_treated").is_null()) {
        m = field<std::size_t>(request, "fixed_treated");
        std::size_t treated = 0;
        for (const Subject& s : data.subjects) treated += static_cast<std::size_t>(s.a == 1);
        if (treated != *m)
            throw ServiceError(ErrorCode::schema, "assignments do not sum to fixed_treated", {{"field", "fixed_treated"}});
    }
    const std::uint64_t seed = request.contains("seed") ? field<std::uint64_t>(request, "seed") : random_seed();

    auto s = std::make_shared<Session>();
    s->id = random_token();
    s->sealed = data.assignments();

    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    CounterRng rng(seed);
    rng.shuffle(order);
    const auto holdout_n = static_cast<std::size_t>(std::floor(gamma * static_cast<double>(data.size())));
    json holdout = json::array();
    for (std::size_t k = 0; k < holdout_n; ++k) holdout.push_back({{"id", order[k]}, {"a", s->sealed[order[k]]}});

    json subjects = json::array();
    for (const MaskedSubject& ms : data.masked()) subjects.push_back(subject_json(ms));
    json ev{{"type", "create"},  {"ts", now_ms()},      {"alpha", alpha},       {"gamma", gamma},     {"seed", seed},
            {"model", to_json(model)}, {"support", data.support.values}, {"subjects", subjects}, {"holdout", holdout}};
    if (m) ev["fixed_treated"] = *m;
    s->apply(ev);
    s->refresh_suggestions();

    if (options_.data_dir) {
        s->dir = *options_.data_dir + "/" + s->id;
        fs::create_directories(s->dir);
        write_sealed(*s);
    }
    persist_event(*s, std::move(ev));
    write_snapshot(*s);
    json out = s->view();
    {
        std::lock_guard lock(map_mutex_);
        sessions_[s->id] = s;
    }
    return out;
}

json SessionService::get_session(const std::string& id) const {
    auto s = find(id);
    std::lock_guard lock(s->mutex);
    return s->view();
}

json SessionService::wealth(const std::string& id) const {
    auto s = find(id);
    std::lock_guard lock(s->mutex);
    return s->wealth_series();
}

json SessionService::commit_bet(const std::string& id, const json& request) {
    require_object(request);
    reject_unknown(request, {"subject", "w"});
    const auto subject = field<std::size_t>(request, "subject");
    const auto w = field<double>(request, "w");
    auto s = find(id);
    std::lock_guard lock(s->mutex);
    BettingSession& b = *s->betting;
    if (subject >= b.size()) throw ServiceError(ErrorCode::not_found, "no subject " + std::to_string(subject), {{"field", "subject"}});
    if (b.status() == SessionStatus::betting && !b.is_revealed(subject)) {
        const BetBounds bb = b.bounds_for(subject);
        if (!std::isfinite(w) || !bb.contains(w)) {
            char msg[160];
            std::snprintf(msg, sizeof msg, "bet %.17g outside the legal interval [%.17g, %.17g]", w, bb.lower, bb.upper);
            throw ServiceError(ErrorCode::bet_range, msg, {{"field", "w"}, {"bounds", {bb.lower, bb.upper}}});
        }
    }
    json ev{{"type", "commit"}, {"ts", now_ms()}, {"subject", subject}, {"w", w}};
    s->apply(ev);
    persist_event(*s, ev);
    const Bet& bet = *b.pending();
    json receipt{{"session", s->id}, {"seq", s->seq}, {"step", bet.committed_at}, {"subject", bet.subject}, {"w", bet.w},
                 {"committed_ms", ev["ts"]}};
    json out{{"receipt", receipt}, {"status", to_string(b.status())}};
    publish(*s, "commit", receipt);
    return out;
}

json SessionService::reveal(const std::string& id) {
    auto s = find(id);
    std::lock_guard lock(s->mutex);
    BettingSession& b = *s->betting;
    if (!b.pending()) throw ServiceError(ErrorCode::protocol_violation, "no committed bet to reveal");
    const std::size_t subject = b.pending()->subject;
    json ev{{"type", "reveal"}, {"ts", now_ms()}, {"subject", subject}, {"a", s->sealed.at(subject)}};
    const auto forced = s->apply(ev);
    persist_event(*s, ev);
    s->refresh_suggestions();
    const StepRecord& step = b.step_records()[b.steps() - 1 - forced.size()];
    json out{{"subject", subject},
             {"a", step.a},
             {"w", step.w},
             {"mu", step.mu},
             {"factor", step.factor},
             {"step", step.step},
             {"log_wealth", static_cast<double>(b.log_wealth())},
             {"anytime_p", b.anytime_p()},
             {"rejected", b.status() == SessionStatus::rejected},
             {"status", to_string(b.status())},
             {"forced", forced}};
    json delta = out;
    delta["wealth_point"] = s->wealth_series().back();
    json q = json::array();
    for (std::size_t i = 0; i < b.size(); ++i)
        if (!b.is_revealed(i)) q.push_back({{"id", i}, {"q", s->q[i]}});
    delta["suggestions"] = q;
    publish(*s, "reveal", delta);
    return out;
}

json SessionService::refit_model(const std::string& id, const json& request) {
    require_object(request);
    const json& body = request.contains("model") ? request.at("model") : request;
    const ModelConfig model = model_config_from_json(body);
    auto s = find(id);
    std::lock_guard lock(s->mutex);
    try {
        model.design.validate(s->betting->subjects().empty() ? 0 : s->betting->subject(0).x.size());
    } catch (const Error& e) {
        throw ServiceError(e.code(), e.what(), {{"field", "model.design"}});
    }
    json ev{{"type", "model"}, {"ts", now_ms()}, {"model", to_json(model)}};
    const ModelConfig previous = s->model;
    s->apply(ev);
    s->refresh_suggestions();
    persist_event(*s, ev);
    json q = json::array();
    for (std::size_t i = 0; i < s->q.size(); ++i) q.push_back(s->q[i]);
    json out{{"model", to_json(s->model)}, {"q", q}, {"warnings", s->warnings}};
    publish(*s, "model", out);
    return out;
}

json SessionService::extend_session(const std::string& id, const json& request) {
    require_object(request);
    reject_unknown(request, {"csv", "fixed_treated"});
    const Dataset more = parse_upload(request);
    std::optional<std::size_t> m;
    if (request.contains("fixed_treated") && !request.at("fixed_treated").is_null()) m = field<std::size_t>(request, "fixed_treated");
    auto s = find(id);
    std::lock_guard lock(s->mutex);
    BettingSession& b = *s->betting;
    if (more.support != b.support()) throw ServiceError(ErrorCode::schema, "extension assignments use a different support", {{"field", "csv"}});
    if (m) {
        std::size_t treated = 0;
        for (const Subject& x : more.subjects) treated += static_cast<std::size_t>(x.a == 1);
        if (treated != *m) throw ServiceError(ErrorCode::schema, "assignments do not sum to fixed_treated", {{"field", "fixed_treated"}});
    }
    json subjects = json::array();
    for (const MaskedSubject& ms : more.masked()) subjects.push_back(subject_json(ms));
    json ev{{"type", "extend"}, {"ts", now_ms()}, {"subjects", subjects}};
    if (m) ev["fixed_treated"] = *m;
    const std::size_t before = s->sealed.size();
    const auto new_a = more.assignments();
    s->sealed.insert(s->sealed.end(), new_a.begin(), new_a.end());
    try {
        s->apply(ev);
    } catch (...) {
        s->sealed.resize(before);
        throw;
    }
    write_sealed(*s);
    persist_event(*s, ev);
    s->refresh_suggestions();
    json out = s->view();
    publish(*s, "extend", {{"added", more.size()}, {"n", b.size()}, {"status", to_string(b.status())}});
    return out;
}

std::uint64_t SessionService::subscribe(const std::string& id, Listener listener) {
    auto s = find(id);
    std::lock_guard lock(s->mutex);
    const std::uint64_t token = s->next_listener++;
    s->listeners.emplace(token, std::move(listener));
    return token;
}

void SessionService::unsubscribe(const std::string& id, std::uint64_t token) {
    std::shared_ptr<Session> s;
    {
        std::lock_guard lock(map_mutex_);
        const auto it = sessions_.find(id);
        if (it == sessions_.end()) return;
        s = it->second;
    }
    std::lock_guard lock(s->mutex);
    s->listeners.erase(token);
}

std::vector<json> SessionService::event_log(const std::string& id) const {
    auto s = find(id);
    std::lock_guard lock(s->mutex);
    return s->log;
}

void SessionService::restore_all() {
    for (const auto& entry : fs::directory_iterator(*options_.data_dir)) {
        if (!entry.is_directory() || !fs::exists(entry.path() / "events.jsonl")) continue;
        auto s = restore(entry.path().string());
        std::lock_guard lock(map_mutex_);
        sessions_[s->id] = s;
        ++restored_;
    }
}

std::shared_ptr<SessionService::Session> SessionService::restore(const std::string& dir) {
    auto s = std::make_shared<Session>();
    s->id = fs::path(dir).filename().string();
    s->dir = dir;
    std::ifstream sealed_in(dir + "/sealed.json");
    if (!sealed_in) fail(ErrorCode::io, "missing sealed assignments in " + dir);
    s->sealed = json::parse(sealed_in).at("assignments").get<std::vector<int>>();
    const std::string log_path = dir + "/events.jsonl";
    std::vector<std::string> lines;
    {
        std::ifstream events(log_path, std::ios::binary);
        std::string line;
        while (std::getline(events, line)) lines.push_back(line);
    }
    std::uintmax_t good_bytes = 0;
    for (std::size_t k = 0; k < lines.size(); ++k) {
        const std::string& line = lines[k];
        json ev;
        try {
            ev = json::parse(line);
        } catch (const json::parse_error&) {
            // A torn final line is an append cut short by a crash; drop it so
            // later appends start on a clean line.
            if (k + 1 == lines.size()) {
                fs::resize_file(log_path, good_bytes);
                break;
            }
            fail(ErrorCode::schema, "corrupt event log line " + std::to_string(k + 1) + " in " + dir);
        }
        good_bytes += line.size() + 1;
        if (line.empty()) continue;
        s->apply(ev);
        s->seq = ev.at("seq").get<std::uint64_t>();
        s->log.push_back(std::move(ev));
    }
    if (!s->betting) fail(ErrorCode::schema, "event log of " + dir + " has no create event");
    s->refresh_suggestions();
    // A snapshot written at the same point of the log must agree with the replay.
    std::ifstream snap_in(dir + "/snapshot.json");
    if (snap_in) {
        const json snap = json::parse(snap_in);
        if (snap.value("events", std::uint64_t{0}) == s->seq) {
            const json replayed = s->betting->to_json();
            if (snap.at("snapshot").at("log_wealth") != replayed.at("log_wealth"))
                fail(ErrorCode::schema, "snapshot of " + dir + " disagrees with its event log");
        }
    }
    return s;
}

}  // namespace ibet::service
