#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "ibet/dataset.hpp"

namespace ibet {

/// Absolute slack when checking a bet against its interval, so boundary bets
/// that went through a decimal round trip are still accepted.
inline constexpr double kBoundSlack = 1e-12;

/// Closed interval of legal bets.
struct BetBounds {
    double lower = 0.0;
    double upper = 0.0;

    bool contains(double w) const noexcept { return w >= lower - kBoundSlack && w <= upper + kBoundSlack; }
    double clamp(double w) const noexcept { return w < lower ? lower : (w > upper ? upper : w); }
};

/// Maximal interval of w with 1 + w (a / mu - 1) >= 0 for every a in the support.
/// Binary support gives [-mu / (1 - mu), 1].
BetBounds bet_bounds(double mu, const AssignmentSupport& support);

/// 1 + w (a / mu - 1). Out-of-range bets throw ErrorCode::bet_range; never clamps.
double bet_factor(double w, int a, double mu, const AssignmentSupport& support = AssignmentSupport::binary());

/// Conditional treatment probability of the next reveal in a completely
/// randomized design: (m - treated revealed) / (n - revealed).
double fixed_sum_mu(std::size_t m_total, std::size_t treated_revealed, std::size_t n, std::size_t revealed);

/// Nonnegative wealth held as mantissa * 2^exponent in extended precision.
/// Products of a few dozen factors stay exact to 64 mantissa bits and values
/// like 1e300 * 1e300 do not overflow.
class Wealth {
public:
    Wealth() = default;

    void multiply(long double factor);
    bool is_zero() const noexcept { return mantissa_ == 0.0L; }
    /// -inf for zero wealth.
    long double log() const noexcept;
    double value() const noexcept;
    bool at_least(long double threshold) const noexcept;
    friend bool operator<(const Wealth& l, const Wealth& r) noexcept;

private:
    long double mantissa_ = 0.5L;  // value is 1 = 0.5 * 2^1
    long exponent_ = 1;
};

enum class SessionStatus { warmup, betting, bet_committed, rejected, exhausted };
enum class RandomizationMode { bernoulli_mu, fixed_sum };

std::string to_string(SessionStatus s);
std::string to_string(RandomizationMode m);
SessionStatus session_status_from_string(const std::string& s);

struct Bet {
    std::size_t subject = 0;
    double w = 0.0;
    std::size_t committed_at = 0;  // 1-based step the bet belongs to
};

/// One betting step after its reveal.
struct StepRecord {
    std::size_t step = 0;
    std::size_t subject = 0;
    double w = 0.0;
    double mu = 0.5;
    int a = 0;
    double factor = 1.0;
    bool forced = false;
    std::uint64_t commit_seq = 0;
    std::uint64_t reveal_seq = 0;
    std::int64_t timestamp_ms = 0;
};

struct AuditEntry {
    enum class Kind { holdout, start, commit, reveal, forced, extension, note };
    Kind kind = Kind::note;
    std::uint64_t seq = 0;
    std::size_t step = 0;
    std::size_t subject = 0;
    double w = 0.0;
    int a = 0;
    double factor = 1.0;
    std::int64_t timestamp_ms = 0;
    std::size_t count = 0;  // extension size
    std::optional<std::size_t> fixed_treated;
    std::string note;
};

std::string to_string(AuditEntry::Kind k);

struct StepOutcome {
    std::size_t step = 0;
    std::size_t subject = 0;
    int a = 0;
    double factor = 1.0;
    double log_wealth = 0.0;
    double anytime_p = 1.0;
    bool rejected = false;
    /// Subjects auto-revealed afterwards because their assignment became forced.
    std::vector<std::size_t> forced;
};

/// A live interactive test: the filtration (outcomes, covariates and the
/// assignments revealed so far) plus the wealth process built from the bets.
///
/// The session never sees an assignment before it is revealed; the caller that
/// holds the sealed data supplies it through `reveal`. Policies get a
/// `const BettingSession&` and can therefore only condition on the filtration.
class BettingSession {
public:
    BettingSession(std::vector<MaskedSubject> subjects, AssignmentSupport support, double alpha,
                   RandomizationMode mode = RandomizationMode::bernoulli_mu,
                   std::optional<std::size_t> fixed_treated = std::nullopt);

    /// Reveal a holdout subject without a bet. Only legal during warmup.
    void reveal_holdout(std::size_t subject, int a, std::int64_t timestamp_ms = 0);
    /// Ends warmup; forced assignments (fixed-sum) are revealed immediately.
    std::vector<std::size_t> start_betting(std::int64_t timestamp_ms = 0);

    const Bet& commit(std::size_t subject, double w, std::int64_t timestamp_ms = 0);
    StepOutcome reveal(int a, std::int64_t timestamp_ms = 0);

    /// Optional continuation: append new subjects and keep betting from the
    /// current wealth. In fixed-sum mode the new subjects form their own
    /// randomization stratum with `fixed_treated` treated.
    std::vector<std::size_t> extend(std::vector<MaskedSubject> more,
                                    std::optional<std::size_t> fixed_treated = std::nullopt,
                                    std::int64_t timestamp_ms = 0);

    void add_note(std::string note, std::int64_t timestamp_ms = 0);

    // Filtration queries.
    std::size_t size() const noexcept { return subjects_.size(); }
    const std::vector<MaskedSubject>& subjects() const noexcept { return subjects_; }
    const MaskedSubject& subject(std::size_t id) const;
    const AssignmentSupport& support() const noexcept { return support_; }
    bool is_revealed(std::size_t id) const;
    std::optional<int> revealed_assignment(std::size_t id) const;
    std::vector<std::size_t> unrevealed() const;
    std::size_t revealed_count() const noexcept { return revealed_count_; }
    std::size_t holdout_size() const noexcept { return holdout_.size(); }
    const std::vector<std::size_t>& holdout() const noexcept { return holdout_; }

    /// mu in force for the next reveal of `id` (conditional mu in fixed-sum mode).
    double current_mu(std::size_t id) const;
    BetBounds bounds_for(std::size_t id) const;

    // Wealth process.
    std::size_t steps() const noexcept { return steps_.size(); }
    const std::vector<StepRecord>& step_records() const noexcept { return steps_; }
    std::vector<std::size_t> ordering() const;
    const std::vector<long double>& log_wealth_path() const noexcept { return log_path_; }
    long double log_wealth() const noexcept { return log_path_.back(); }
    double wealth() const noexcept { return wealth_.value(); }
    double anytime_p() const noexcept;
    double alpha() const noexcept { return alpha_; }
    SessionStatus status() const noexcept { return status_; }
    RandomizationMode mode() const noexcept { return mode_; }
    const std::optional<Bet>& pending() const noexcept { return pending_; }
    const std::vector<AuditEntry>& audit() const noexcept { return audit_; }
    std::size_t extensions() const noexcept { return extensions_.size(); }

    std::uint64_t digest() const { return masked_digest(subjects_); }

    nlohmann::json to_json() const;
    /// Rebuilds a session by replaying the recorded holdout, bets and
    /// extensions against `subjects`, then checks the stored log-wealth path.
    static BettingSession from_json(const nlohmann::json& j, std::vector<MaskedSubject> subjects);

private:
    struct Stratum {
        std::size_t size = 0;
        std::size_t treated = 0;
        std::size_t revealed = 0;
        std::size_t treated_revealed = 0;
    };
    struct Extension {
        std::size_t at_step = 0;
        std::size_t count = 0;
        std::optional<std::size_t> fixed_treated;
    };

    void check_subject(std::size_t id) const;
    void record_reveal(std::size_t id, int a);
    std::vector<std::size_t> reveal_forced(std::int64_t timestamp_ms);
    void refresh_status();
    void append_audit(AuditEntry e);

    std::vector<MaskedSubject> subjects_;
    AssignmentSupport support_;
    double alpha_;
    RandomizationMode mode_;
    std::vector<std::optional<int>> revealed_;
    std::vector<std::size_t> stratum_of_;
    std::vector<Stratum> strata_;
    std::size_t revealed_count_ = 0;
    std::vector<std::size_t> holdout_;
    std::vector<StepRecord> steps_;
    std::vector<long double> log_path_{0.0L};
    Wealth wealth_;
    Wealth max_wealth_;
    std::optional<Bet> pending_;
    std::uint64_t pending_seq_ = 0;
    SessionStatus status_ = SessionStatus::warmup;
    std::vector<AuditEntry> audit_;
    std::uint64_t seq_ = 0;
    std::vector<Extension> extensions_;
};

// Value-style wrappers mirroring the protocol operations.
BettingSession update_wealth(BettingSession session, const Bet& bet, int revealed_a);
BettingSession continue_session(BettingSession session, std::vector<MaskedSubject> new_subjects,
                                std::optional<std::size_t> fixed_treated = std::nullopt);
double anytime_p(const BettingSession& session);

/// Decimal string for a log-wealth value ("-inf" for absorbed wealth).
std::string format_log_wealth(long double v);
long double parse_log_wealth(const std::string& s);

}  // namespace ibet
