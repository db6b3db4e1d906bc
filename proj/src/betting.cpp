#include "ibet/betting.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>

#include <nlohmann/json.hpp>

#include "ibet/error.hpp"

namespace ibet {

BetBounds bet_bounds(double mu, const AssignmentSupport& support) {
    if (support.is_binary()) {
        if (!(mu > 0.0 && mu < 1.0)) fail(ErrorCode::invalid_randomization, "mu must lie in (0,1) for binary assignments");
        return {-mu / (1.0 - mu), 1.0};
    }
    if (!(mu > 0.0 && mu > support.min_value() && mu < support.max_value()))
        fail(ErrorCode::invalid_randomization, "mu must lie strictly inside the assignment support");
    BetBounds b{-std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
    for (int a : support.values) {
        const double slope = a / mu - 1.0;
        if (slope > 0.0) b.lower = std::max(b.lower, -1.0 / slope);
        else if (slope < 0.0) b.upper = std::min(b.upper, -1.0 / slope);
    }
    return b;
}

double bet_factor(double w, int a, double mu, const AssignmentSupport& support) {
    const BetBounds b = bet_bounds(mu, support);
    if (!b.contains(w)) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "bet %.17g outside legal interval [%.17g, %.17g]", w, b.lower, b.upper);
        fail(ErrorCode::bet_range, buf);
    }
    if (!support.contains(a)) fail(ErrorCode::protocol_violation, "revealed assignment outside support");
    // Boundary bets within the slack can produce a factor of -1e-12; that is zero wealth.
    return std::max(0.0, 1.0 + w * (a / mu - 1.0));
}

double fixed_sum_mu(std::size_t m_total, std::size_t treated_revealed, std::size_t n, std::size_t revealed) {
    if (revealed >= n) fail(ErrorCode::exhausted, "no unrevealed subjects left in the fixed-sum stratum");
    if (treated_revealed > m_total) fail(ErrorCode::protocol_violation, "more treated revealed than the fixed total");
    const std::size_t remaining_treated = m_total - treated_revealed;
    const std::size_t remaining = n - revealed;
    if (remaining_treated > remaining) fail(ErrorCode::protocol_violation, "fixed treated total no longer attainable");
    return static_cast<double>(remaining_treated) / static_cast<double>(remaining);
}

// ---------------------------------------------------------------------------
// Wealth

void Wealth::multiply(long double factor) {
    if (factor < 0.0L) fail(ErrorCode::bet_range, "negative wealth factor");
    if (is_zero()) return;
    if (factor == 0.0L) {
        mantissa_ = 0.0L;
        exponent_ = 0;
        return;
    }
    int e = 0;
    mantissa_ = std::frexp(mantissa_ * factor, &e);
    exponent_ += e;
}

long double Wealth::log() const noexcept {
    if (is_zero()) return -std::numeric_limits<long double>::infinity();
    return std::log(mantissa_) + static_cast<long double>(exponent_) * std::numbers::ln2_v<long double>;
}

double Wealth::value() const noexcept {
    if (is_zero()) return 0.0;
    return static_cast<double>(std::ldexp(mantissa_, static_cast<int>(std::clamp<long>(exponent_, -20000, 20000))));
}

bool Wealth::at_least(long double threshold) const noexcept {
    if (threshold <= 0.0L) return true;
    if (is_zero()) return false;
    int te = 0;
    const long double tm = std::frexp(threshold, &te);
    if (exponent_ != te) return exponent_ > te;
    return mantissa_ >= tm;
}

bool operator<(const Wealth& l, const Wealth& r) noexcept {
    if (l.is_zero() || r.is_zero()) return l.is_zero() && !r.is_zero();
    if (l.exponent_ != r.exponent_) return l.exponent_ < r.exponent_;
    return l.mantissa_ < r.mantissa_;
}

// ---------------------------------------------------------------------------
// names

std::string to_string(SessionStatus s) {
    switch (s) {
        case SessionStatus::warmup: return "warmup";
        case SessionStatus::betting: return "betting";
        case SessionStatus::bet_committed: return "bet-committed";
        case SessionStatus::rejected: return "rejected";
        case SessionStatus::exhausted: return "exhausted";
    }
    return "unknown";
}

SessionStatus session_status_from_string(const std::string& s) {
    for (auto st : {SessionStatus::warmup, SessionStatus::betting, SessionStatus::bet_committed,
                    SessionStatus::rejected, SessionStatus::exhausted})
        if (to_string(st) == s) return st;
    fail(ErrorCode::schema, "unknown session status '" + s + "'");
}

std::string to_string(RandomizationMode m) {
    return m == RandomizationMode::bernoulli_mu ? "bernoulli-mu" : "fixed-sum";
}

std::string to_string(AuditEntry::Kind k) {
    switch (k) {
        case AuditEntry::Kind::holdout: return "holdout";
        case AuditEntry::Kind::start: return "start";
        case AuditEntry::Kind::commit: return "commit";
        case AuditEntry::Kind::reveal: return "reveal";
        case AuditEntry::Kind::forced: return "forced";
        case AuditEntry::Kind::extension: return "extension";
        case AuditEntry::Kind::note: return "note";
    }
    return "note";
}

std::string format_log_wealth(long double v) {
    if (std::isinf(v)) return v < 0 ? "-inf" : "inf";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.21Lg", v);
    return buf;
}

long double parse_log_wealth(const std::string& s) {
    if (s == "-inf") return -std::numeric_limits<long double>::infinity();
    if (s == "inf") return std::numeric_limits<long double>::infinity();
    try {
        return std::stold(s);
    } catch (const std::exception&) {
        fail(ErrorCode::schema, "bad log-wealth value '" + s + "'");
    }
}

// ---------------------------------------------------------------------------
// BettingSession

BettingSession::BettingSession(std::vector<MaskedSubject> subjects, AssignmentSupport support, double alpha,
                               RandomizationMode mode, std::optional<std::size_t> fixed_treated)
    : subjects_(std::move(subjects)), support_(std::move(support)), alpha_(alpha), mode_(mode) {
    if (!(alpha_ > 0.0 && alpha_ < 1.0)) fail(ErrorCode::config, "alpha must lie in (0,1)");
    if (mode_ == RandomizationMode::fixed_sum) {
        if (!support_.is_binary()) fail(ErrorCode::unsupported, "fixed-sum randomization requires binary assignments");
        if (!fixed_treated) fail(ErrorCode::config, "fixed-sum mode needs the treated total");
        if (*fixed_treated > subjects_.size()) fail(ErrorCode::config, "treated total exceeds n");
        strata_.push_back({subjects_.size(), *fixed_treated, 0, 0});
    }
    for (std::size_t i = 0; i < subjects_.size(); ++i) {
        if (subjects_[i].id != i) fail(ErrorCode::schema, "subject ids must be 0..n-1 in order");
        if (mode_ == RandomizationMode::bernoulli_mu) bet_bounds(subjects_[i].mu, support_);
    }
    revealed_.assign(subjects_.size(), std::nullopt);
    stratum_of_.assign(subjects_.size(), 0);
}

const MaskedSubject& BettingSession::subject(std::size_t id) const {
    check_subject(id);
    return subjects_[id];
}

void BettingSession::check_subject(std::size_t id) const {
    if (id >= subjects_.size()) fail(ErrorCode::not_found, "no subject with id " + std::to_string(id));
}

bool BettingSession::is_revealed(std::size_t id) const {
    check_subject(id);
    return revealed_[id].has_value();
}

std::optional<int> BettingSession::revealed_assignment(std::size_t id) const {
    check_subject(id);
    return revealed_[id];
}

std::vector<std::size_t> BettingSession::unrevealed() const {
    std::vector<std::size_t> out;
    out.reserve(subjects_.size() - revealed_count_);
    for (std::size_t i = 0; i < subjects_.size(); ++i)
        if (!revealed_[i]) out.push_back(i);
    return out;
}

std::vector<std::size_t> BettingSession::ordering() const {
    std::vector<std::size_t> out;
    out.reserve(steps_.size());
    for (const StepRecord& s : steps_) out.push_back(s.subject);
    return out;
}

double BettingSession::current_mu(std::size_t id) const {
    check_subject(id);
    if (mode_ == RandomizationMode::bernoulli_mu) return subjects_[id].mu;
    const Stratum& s = strata_[stratum_of_[id]];
    return fixed_sum_mu(s.treated, s.treated_revealed, s.size, s.revealed);
}

BetBounds BettingSession::bounds_for(std::size_t id) const { return bet_bounds(current_mu(id), support_); }

double BettingSession::anytime_p() const noexcept {
    if (max_wealth_.is_zero()) return 1.0;
    const long double lm = max_wealth_.log();
    if (lm <= 0.0L) return 1.0;
    return static_cast<double>(std::exp(-lm));
}

void BettingSession::append_audit(AuditEntry e) {
    e.seq = ++seq_;
    audit_.push_back(std::move(e));
}

void BettingSession::record_reveal(std::size_t id, int a) {
    if (!support_.contains(a)) fail(ErrorCode::protocol_violation, "revealed assignment outside support");
    if (mode_ == RandomizationMode::fixed_sum) {
        Stratum& s = strata_[stratum_of_[id]];
        const std::size_t treated_left = s.treated - s.treated_revealed;
        const std::size_t left = s.size - s.revealed;
        if ((a == 1 && treated_left == 0) || (a == 0 && treated_left == left))
            fail(ErrorCode::protocol_violation, "revealed assignment contradicts the fixed treated total");
        ++s.revealed;
        s.treated_revealed += static_cast<std::size_t>(a == 1);
    }
    revealed_[id] = a;
    ++revealed_count_;
}

void BettingSession::reveal_holdout(std::size_t subject, int a, std::int64_t timestamp_ms) {
    check_subject(subject);
    if (status_ != SessionStatus::warmup) fail(ErrorCode::protocol_violation, "holdout reveals are only legal during warmup");
    if (revealed_[subject]) fail(ErrorCode::already_revealed, "subject " + std::to_string(subject) + " already revealed");
    record_reveal(subject, a);
    holdout_.push_back(subject);
    AuditEntry e;
    e.kind = AuditEntry::Kind::holdout;
    e.subject = subject;
    e.a = a;
    e.timestamp_ms = timestamp_ms;
    append_audit(std::move(e));
}

std::vector<std::size_t> BettingSession::start_betting(std::int64_t timestamp_ms) {
    if (status_ != SessionStatus::warmup) fail(ErrorCode::protocol_violation, "betting already started");
    status_ = SessionStatus::betting;
    AuditEntry e;
    e.kind = AuditEntry::Kind::start;
    e.timestamp_ms = timestamp_ms;
    append_audit(std::move(e));
    auto forced = reveal_forced(timestamp_ms);
    refresh_status();
    return forced;
}

void BettingSession::refresh_status() {
    if (status_ == SessionStatus::rejected || status_ == SessionStatus::warmup) return;
    if (pending_) {
        status_ = SessionStatus::bet_committed;
        return;
    }
    status_ = revealed_count_ == subjects_.size() ? SessionStatus::exhausted : SessionStatus::betting;
}

const Bet& BettingSession::commit(std::size_t subject, double w, std::int64_t timestamp_ms) {
    check_subject(subject);
    switch (status_) {
        case SessionStatus::warmup: fail(ErrorCode::protocol_violation, "betting has not started");
        case SessionStatus::bet_committed: fail(ErrorCode::protocol_violation, "a bet is already pending");
        case SessionStatus::rejected: fail(ErrorCode::already_rejected, "the null was already rejected");
        case SessionStatus::exhausted: fail(ErrorCode::exhausted, "every subject has been revealed");
        case SessionStatus::betting: break;
    }
    if (revealed_[subject]) fail(ErrorCode::already_revealed, "subject " + std::to_string(subject) + " already revealed");
    const BetBounds b = bounds_for(subject);
    if (!b.contains(w)) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "bet %.17g outside legal interval [%.17g, %.17g]", w, b.lower, b.upper);
        fail(ErrorCode::bet_range, buf);
    }
    pending_ = Bet{subject, w, steps_.size() + 1};
    AuditEntry e;
    e.kind = AuditEntry::Kind::commit;
    e.step = pending_->committed_at;
    e.subject = subject;
    e.w = w;
    e.timestamp_ms = timestamp_ms;
    append_audit(std::move(e));
    pending_seq_ = seq_;
    status_ = SessionStatus::bet_committed;
    return *pending_;
}

StepOutcome BettingSession::reveal(int a, std::int64_t timestamp_ms) {
    if (!pending_) fail(ErrorCode::protocol_violation, "reveal requires a committed bet");
    const Bet bet = *pending_;
    if (revealed_[bet.subject]) fail(ErrorCode::already_revealed, "subject already revealed");
    const double mu = current_mu(bet.subject);
    const double factor = bet_factor(bet.w, a, mu, support_);
    record_reveal(bet.subject, a);
    pending_.reset();

    wealth_.multiply(factor);
    if (max_wealth_ < wealth_) max_wealth_ = wealth_;
    log_path_.push_back(wealth_.log());

    AuditEntry e;
    e.kind = AuditEntry::Kind::reveal;
    e.step = bet.committed_at;
    e.subject = bet.subject;
    e.w = bet.w;
    e.a = a;
    e.factor = factor;
    e.timestamp_ms = timestamp_ms;
    append_audit(std::move(e));
    steps_.push_back({bet.committed_at, bet.subject, bet.w, mu, a, factor, false, pending_seq_, seq_, timestamp_ms});

    StepOutcome out;
    out.step = bet.committed_at;
    out.subject = bet.subject;
    out.a = a;
    out.factor = factor;
    if (wealth_.at_least(1.0L / static_cast<long double>(alpha_))) {
        status_ = SessionStatus::rejected;
    } else {
        status_ = SessionStatus::betting;
        out.forced = reveal_forced(timestamp_ms);
        refresh_status();
    }
    out.log_wealth = static_cast<double>(log_wealth());
    out.anytime_p = anytime_p();
    out.rejected = status_ == SessionStatus::rejected;
    return out;
}

std::vector<std::size_t> BettingSession::reveal_forced(std::int64_t timestamp_ms) {
    std::vector<std::size_t> forced;
    if (mode_ != RandomizationMode::fixed_sum) return forced;
    for (std::size_t id = 0; id < subjects_.size(); ++id) {
        if (revealed_[id]) continue;
        const double mu = current_mu(id);
        if (mu != 0.0 && mu != 1.0) continue;
        const int a = mu == 1.0 ? 1 : 0;
        record_reveal(id, a);
        log_path_.push_back(log_path_.back());
        AuditEntry e;
        e.kind = AuditEntry::Kind::forced;
        e.step = steps_.size() + 1;
        e.subject = id;
        e.a = a;
        e.timestamp_ms = timestamp_ms;
        append_audit(std::move(e));
        steps_.push_back({steps_.size() + 1, id, 0.0, mu, a, 1.0, true, seq_, seq_, timestamp_ms});
        forced.push_back(id);
    }
    return forced;
}

std::vector<std::size_t> BettingSession::extend(std::vector<MaskedSubject> more, std::optional<std::size_t> fixed_treated,
                                                std::int64_t timestamp_ms) {
    if (status_ == SessionStatus::rejected) fail(ErrorCode::already_rejected, "cannot extend a rejected session");
    if (status_ == SessionStatus::bet_committed) fail(ErrorCode::protocol_violation, "resolve the pending bet before extending");
    if (more.empty()) return {};
    if (mode_ == RandomizationMode::fixed_sum) {
        if (!fixed_treated || *fixed_treated > more.size())
            fail(ErrorCode::config, "fixed-sum extension needs a feasible treated total");
    }
    const std::size_t dim = subjects_.empty() ? more.front().x.size() : subjects_.front().x.size();
    for (MaskedSubject& s : more) {
        if (s.x.size() != dim) fail(ErrorCode::schema, "extension covariate dimension mismatch");
        if (mode_ == RandomizationMode::bernoulli_mu) bet_bounds(s.mu, support_);
    }
    const std::size_t count = more.size();
    const std::size_t stratum = strata_.size();
    if (mode_ == RandomizationMode::fixed_sum) strata_.push_back({count, *fixed_treated, 0, 0});
    for (MaskedSubject& s : more) {
        s.id = subjects_.size();
        subjects_.push_back(std::move(s));
        revealed_.push_back(std::nullopt);
        stratum_of_.push_back(stratum);
    }
    extensions_.push_back({steps_.size(), count, fixed_treated});

    AuditEntry e;
    e.kind = AuditEntry::Kind::extension;
    e.step = steps_.size();
    e.count = count;
    e.fixed_treated = fixed_treated;
    e.timestamp_ms = timestamp_ms;
    e.note = "extended with " + std::to_string(count) + " subjects";
    append_audit(std::move(e));

    std::vector<std::size_t> forced;
    if (status_ != SessionStatus::warmup) {
        status_ = SessionStatus::betting;
        forced = reveal_forced(timestamp_ms);
        refresh_status();
    }
    return forced;
}

void BettingSession::add_note(std::string note, std::int64_t timestamp_ms) {
    AuditEntry e;
    e.kind = AuditEntry::Kind::note;
    e.step = steps_.size();
    e.timestamp_ms = timestamp_ms;
    e.note = std::move(note);
    append_audit(std::move(e));
}

// ---------------------------------------------------------------------------
// JSON


// ---------------------------------------------------------------------------
// JSON

namespace {

AuditEntry::Kind audit_kind_from_string(const std::string& s) {
    for (auto k : {AuditEntry::Kind::holdout, AuditEntry::Kind::start, AuditEntry::Kind::commit, AuditEntry::Kind::reveal,
                   AuditEntry::Kind::forced, AuditEntry::Kind::extension, AuditEntry::Kind::note})
        if (to_string(k) == s) return k;
    fail(ErrorCode::schema, "unknown audit entry kind '" + s + "'");
}

std::string hex64(std::uint64_t v) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace

nlohmann::json BettingSession::to_json() const {
    using nlohmann::json;
    json j;
    j["version"] = 1;
    j["dataset_digest"] = hex64(digest());
    j["alpha"] = alpha_;
    j["support"] = support_.values;
    j["mode"] = to_string(mode_);
    std::size_t initial = subjects_.size();
    for (const Extension& e : extensions_) initial -= e.count;
    j["initial_size"] = initial;
    if (mode_ == RandomizationMode::fixed_sum) j["fixed_treated"] = strata_.front().treated;
    j["status"] = to_string(status_);

    json holdout = json::array();
    for (std::size_t id : holdout_) holdout.push_back({{"id", id}, {"a", *revealed_[id]}});
    j["holdout"] = std::move(holdout);
    j["ordering"] = ordering();

    json bets = json::array();
    for (const StepRecord& s : steps_) {
        bets.push_back({{"step", s.step}, {"subject", s.subject}, {"w", s.w}, {"mu", s.mu}, {"a", s.a},
                        {"factor", s.factor}, {"forced", s.forced}});
    }
    j["bets"] = std::move(bets);
    if (pending_) j["pending"] = {{"subject", pending_->subject}, {"w", pending_->w}, {"step", pending_->committed_at}};

    json path = json::array();
    for (long double v : log_path_) path.push_back(format_log_wealth(v));
    j["log_wealth"] = std::move(path);
    j["anytime_p"] = anytime_p();

    json audit = json::array();
    for (const AuditEntry& e : audit_) {
        json a = {{"kind", to_string(e.kind)}, {"seq", e.seq}, {"step", e.step}, {"timestamp_ms", e.timestamp_ms}};
        switch (e.kind) {
            case AuditEntry::Kind::holdout:
            case AuditEntry::Kind::forced:
                a["subject"] = e.subject;
                a["a"] = e.a;
                break;
            case AuditEntry::Kind::commit:
                a["subject"] = e.subject;
                a["w"] = e.w;
                break;
            case AuditEntry::Kind::reveal:
                a["subject"] = e.subject;
                a["w"] = e.w;
                a["a"] = e.a;
                a["factor"] = e.factor;
                break;
            case AuditEntry::Kind::extension:
                a["count"] = e.count;
                if (e.fixed_treated) a["fixed_treated"] = *e.fixed_treated;
                break;
            case AuditEntry::Kind::start:
            case AuditEntry::Kind::note: break;
        }
        if (!e.note.empty()) a["note"] = e.note;
        audit.push_back(std::move(a));
    }
    j["audit"] = std::move(audit);
    return j;
}

BettingSession BettingSession::from_json(const nlohmann::json& j, std::vector<MaskedSubject> subjects) {
    try {
        if (j.at("version").get<int>() != 1) fail(ErrorCode::schema, "unsupported session version");
        AssignmentSupport support;
        support.values = j.at("support").get<std::vector<int>>();
        const std::string mode_name = j.at("mode").get<std::string>();
        const RandomizationMode mode =
            mode_name == "fixed-sum" ? RandomizationMode::fixed_sum : RandomizationMode::bernoulli_mu;
        const auto initial = j.at("initial_size").get<std::size_t>();
        if (initial > subjects.size()) fail(ErrorCode::schema, "session references more subjects than supplied");

        std::vector<MaskedSubject> first(subjects.begin(), subjects.begin() + static_cast<std::ptrdiff_t>(initial));
        std::optional<std::size_t> fixed;
        if (j.contains("fixed_treated")) fixed = j.at("fixed_treated").get<std::size_t>();
        BettingSession s(std::move(first), support, j.at("alpha").get<double>(), mode, fixed);

        std::size_t next_subject = initial;
        for (const auto& a : j.at("audit")) {
            const auto kind = audit_kind_from_string(a.at("kind").get<std::string>());
            const auto ts = a.value("timestamp_ms", std::int64_t{0});
            switch (kind) {
                case AuditEntry::Kind::holdout:
                    s.reveal_holdout(a.at("subject").get<std::size_t>(), a.at("a").get<int>(), ts);
                    break;
                case AuditEntry::Kind::start: s.start_betting(ts); break;
                case AuditEntry::Kind::commit: s.commit(a.at("subject").get<std::size_t>(), a.at("w").get<double>(), ts); break;
                case AuditEntry::Kind::reveal: s.reveal(a.at("a").get<int>(), ts); break;
                case AuditEntry::Kind::forced: break;  // regenerated by the replay
                case AuditEntry::Kind::extension: {
                    const auto count = a.at("count").get<std::size_t>();
                    if (next_subject + count > subjects.size()) fail(ErrorCode::schema, "extension exceeds supplied subjects");
                    std::vector<MaskedSubject> more(subjects.begin() + static_cast<std::ptrdiff_t>(next_subject),
                                                    subjects.begin() + static_cast<std::ptrdiff_t>(next_subject + count));
                    next_subject += count;
                    std::optional<std::size_t> ft;
                    if (a.contains("fixed_treated")) ft = a.at("fixed_treated").get<std::size_t>();
                    s.extend(std::move(more), ft, ts);
                    break;
                }
                case AuditEntry::Kind::note: s.add_note(a.value("note", std::string()), ts); break;
            }
        }
        if (hex64(s.digest()) != j.at("dataset_digest").get<std::string>())
            fail(ErrorCode::schema, "dataset digest does not match the session document");
        const auto& path = j.at("log_wealth");
        if (path.size() != s.log_path_.size()) fail(ErrorCode::schema, "replayed wealth path length differs");
        for (std::size_t t = 0; t < path.size(); ++t) {
            const long double stored = parse_log_wealth(path[t].get<std::string>());
            const long double replayed = s.log_path_[t];
            const bool same = (std::isinf(stored) && std::isinf(replayed)) ||
                              std::fabs(stored - replayed) <= 1e-15L * (1.0L + std::fabs(stored));
            if (!same) fail(ErrorCode::schema, "replayed wealth differs at step " + std::to_string(t));
        }
        const auto& bets = j.at("bets");
        if (bets.size() != s.steps_.size()) fail(ErrorCode::schema, "bet list length differs from the audit trail");
        for (std::size_t t = 0; t < bets.size(); ++t) {
            const StepRecord& r = s.steps_[t];
            if (bets[t].at("subject").get<std::size_t>() != r.subject || bets[t].at("a").get<int>() != r.a ||
                bets[t].at("w").get<double>() != r.w || bets[t].at("forced").get<bool>() != r.forced)
                fail(ErrorCode::schema, "bet list disagrees with the audit trail at step " + std::to_string(t + 1));
        }
        if (to_string(s.status()) != j.at("status").get<std::string>())
            fail(ErrorCode::schema, "replayed status differs from the stored status");
        return s;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::schema, std::string("malformed session document: ") + e.what());
    }
}

// ---------------------------------------------------------------------------

BettingSession update_wealth(BettingSession session, const Bet& bet, int revealed_a) {
    if (!session.pending() || session.pending()->subject != bet.subject)
        fail(ErrorCode::protocol_violation, "no committed bet for subject " + std::to_string(bet.subject));
    if (session.pending()->w != bet.w) fail(ErrorCode::protocol_violation, "bet differs from the committed bet");
    session.reveal(revealed_a);
    return session;
}

BettingSession continue_session(BettingSession session, std::vector<MaskedSubject> new_subjects,
                                std::optional<std::size_t> fixed_treated) {
    session.extend(std::move(new_subjects), fixed_treated);
    return session;
}

double anytime_p(const BettingSession& session) { return session.anytime_p(); }

}  // namespace ibet
