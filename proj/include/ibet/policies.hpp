#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "ibet/betting.hpp"
#include "ibet/dataset.hpp"
#include "ibet/models.hpp"

namespace ibet {

struct AutoPolicyConfig {
    double gamma = 0.1;
    double bet_magnitude = 0.4;
    /// Steps between model refits; defaults to floor(n / 5).
    std::optional<std::size_t> refit_every;
    DesignSpec design = DesignSpec::linear_with_interactions();
    EmOptions em;
    double alpha = 0.05;
    std::uint64_t seed = 0;

    void validate(std::size_t n) const;
    std::size_t holdout_size(std::size_t n) const;
    std::size_t cadence(std::size_t n) const;
};

struct RunStep {
    std::size_t step = 0;
    std::size_t subject = 0;
    double q = 0.5;
    double w = 0.0;
    int a = 0;
    double factor = 1.0;
    double log_wealth = 0.0;
    double anytime_p = 1.0;
    bool forced = false;
};

struct RunRecord {
    std::string test;
    std::size_t n = 0;
    std::size_t holdout_size = 0;
    bool rejected = false;
    /// Betting steps taken (forced reveals included) when the run stopped.
    std::size_t stop_step = 0;
    double anytime_p = 1.0;
    std::vector<long double> log_wealth;
    std::vector<std::size_t> ordering;
    std::vector<RunStep> steps;
    std::vector<std::string> warnings;

    /// Reveals consumed including the holdout.
    std::size_t stop_time() const noexcept { return holdout_size + stop_step; }
    double final_log_wealth() const { return log_wealth.empty() ? 0.0 : static_cast<double>(log_wealth.back()); }

    nlohmann::json to_json() const;
    /// Per-step rows: step,logM,p,bet,correct
    void write_csv(std::ostream& out) const;
};

/// argmax |q - 0.5| with ties to the lowest id.
std::size_t select_next(const std::map<std::size_t, double>& posteriors);

/// Same rule over the unrevealed subjects of a session, measuring distance from `center`.
std::size_t select_most_confident(const BettingSession& session, const std::vector<double>& score, double center = 0.5);

/// Picks the subject and bet for the next step given the latest model scores.
struct BetChoice {
    std::size_t subject = 0;
    double w = 0.0;
    double q = 0.5;
};
using RefitFn = std::function<std::vector<double>(const BettingSession&)>;
using ChooseFn = std::function<BetChoice(const BettingSession&, const std::vector<double>&)>;

struct InteractiveRun {
    std::vector<MaskedSubject> masked;
    /// Assignments known only to the driver; handed to the session one reveal at a time.
    std::vector<int> sealed;
    AssignmentSupport support;
    RandomizationMode mode = RandomizationMode::bernoulli_mu;
    std::optional<std::size_t> fixed_treated;
    double alpha = 0.05;
    std::size_t holdout = 0;
    std::size_t cadence = 1;
    std::uint64_t seed = 0;
    std::string test = "auto-ibet";
};

/// Draws the holdout, then alternates refit / choose / commit / reveal until
/// rejection or exhaustion. Refits happen at step 1 and whenever the step
/// number is a multiple of the cadence.
RunRecord run_interactive(const InteractiveRun& run, const RefitFn& refit, const ChooseFn& choose);

/// Binary bet 0.4 (2 1{q > 1/2} - 1) clipped into the legal interval.
double sign_bet(double q, double magnitude, const BetBounds& bounds, double center = 0.5);

RunRecord run_auto_ibet(const Dataset& data, const AutoPolicyConfig& config);

/// Feeds subjects one at a time and hands out each assignment only after the
/// caller has committed its inclusion and bet for that subject.
class MaskedStream {
public:
    explicit MaskedStream(Dataset data);

    bool has_next() const noexcept { return next_ < data_.size(); }
    MaskedSubject arrive();
    void commit(bool include, double w);
    int reveal();

    std::size_t size() const noexcept { return data_.size(); }

private:
    enum class Phase { idle, arrived, committed };
    Dataset data_;
    std::size_t next_ = 0;
    Phase phase_ = Phase::idle;
};

enum class InclusionPolicy { include_all, include_none };

struct SeqBetConfig {
    std::size_t warmup = 50;
    double bet_magnitude = 0.4;
    std::size_t refit_every = 25;
    InclusionPolicy inclusion = InclusionPolicy::include_all;
    DesignSpec design = DesignSpec::linear_with_interactions();
};

RunRecord run_seq_bet(MaskedStream& stream, double alpha, const SeqBetConfig& config = {});

}  // namespace ibet
