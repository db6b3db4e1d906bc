#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ibet/betting.hpp"
#include "ibet/rng.hpp"
#include "ibet/simulation.hpp"

namespace ibet {

struct CalibrationCheck {
    std::string name;
    bool pass = false;
    double observed = 0.0;
    double bound = 0.0;
    std::size_t reps = 0;
    nlohmann::json detail = nlohmann::json::object();

    nlohmann::json to_json() const;
};

/// Upper limit alpha + 3 sqrt(alpha (1 - alpha) / reps) for a null rejection rate.
double null_rate_bound(double alpha, std::size_t reps);

/// Filtration-measurable betting rule used by the Monte-Carlo suites: visits the
/// largest |Y| first and bets +-magnitude on the sign suggested by the revealed
/// treated/control mean difference, falling back to the last revealed assignment.
struct AdaptiveSignPolicy {
    double magnitude = 0.5;

    std::pair<std::size_t, double> next(const BettingSession& session) const;
};

/// Null subjects with Y ~ N(0,1), mu drawn from {0.3, 0.5, 0.7}, A ~ Bernoulli(mu).
/// `a` receives the sealed assignments.
std::vector<MaskedSubject> null_subjects(std::size_t n, CounterRng& rng, std::vector<int>& a, bool vary_mu = true);

/// Mean of M_t over replications stays within 1 +- 3 MC-SE for t <= horizon.
CalibrationCheck check_martingale(std::size_t reps, std::size_t horizon, std::uint64_t seed, std::size_t jobs = 1);

/// Fraction of null wealth paths that ever reach 1/alpha.
CalibrationCheck check_ville(std::size_t reps, std::size_t n, double alpha, std::uint64_t seed, std::size_t jobs = 1);

/// Extends the experiment by `extra` subjects whenever the wealth ends in
/// (1, 1/alpha) and keeps betting; the overall rejection rate must stay bounded.
CalibrationCheck check_optional_continuation(std::size_t reps, std::size_t n, std::size_t extra, double alpha,
                                             std::uint64_t seed, std::size_t jobs = 1);

/// Default null roster: auto-ibet, seq-bet, i-friedman, i-kw, covadj (B = 200), linear-cate.
std::vector<TestSpec> default_null_roster();

/// One check per test in the roster at s_delta = 0.
std::vector<CalibrationCheck> check_type_one(const std::vector<TestSpec>& roster, std::size_t n, std::size_t reps, double alpha,
                                             std::uint64_t seed, std::size_t jobs = 1);

struct CalibrationOptions {
    std::size_t reps = 500;
    std::size_t n = 500;
    double alpha = 0.05;
    std::uint64_t seed = 0;
    std::size_t jobs = 1;
    std::size_t martingale_reps = 10000;
    std::size_t ville_reps = 2000;
    std::size_t continuation_reps = 1000;
    std::function<void(const CalibrationCheck&)> progress;
};

struct CalibrationReport {
    std::vector<CalibrationCheck> checks;

    bool all_pass() const;
    nlohmann::json to_json() const;
};

CalibrationReport run_calibration(const CalibrationOptions& options);

}  // namespace ibet
