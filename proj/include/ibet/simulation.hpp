#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "ibet/classic.hpp"
#include "ibet/dataset.hpp"
#include "ibet/extensions.hpp"
#include "ibet/policies.hpp"
#include "ibet/rng.hpp"

namespace ibet {

/// Columns X(1), X(2) binary with cell counts n0 at (1,1) and (0,0) and
/// n/2 - n0 at the off-diagonal cells; X(3) iid N(0, 1). Rows shuffled.
Eigen::MatrixXd generate_population(std::size_t n, std::size_t n0, CounterRng& rng);

enum class EffectTag { none, linear, dense_weak, strong_one, quadratic, strong_weak, sparse_both, weak_both };
enum class ControlTag { bell, skewed, zero };
enum class NoiseTag { gaussian, cauchy, none };

std::string to_string(EffectTag t);
std::string to_string(ControlTag t);
std::string to_string(NoiseTag t);
EffectTag effect_from_string(const std::string& s);
ControlTag control_from_string(const std::string& s);
NoiseTag noise_from_string(const std::string& s);

/// Treatment effect Delta(x) at scale s_delta. `x` holds X(1), X(2), X(3).
double effect_value(EffectTag tag, double s_delta, const double* x);
double control_value(ControlTag tag, const double* x);

/// Y = Delta(X) A + f(X) + U for binary A.
std::vector<double> generate_outcomes(const Eigen::MatrixXd& x, const std::vector<int>& a, EffectTag effect, double s_delta,
                                      ControlTag control, NoiseTag noise, CounterRng& rng);

/// Multi-level version: the effect enters as Delta(X) (A - 1) / (k - 1).
std::vector<double> generate_outcomes_levels(const Eigen::MatrixXd& x, const std::vector<int>& a, int k, EffectTag effect,
                                             double s_delta, ControlTag control, NoiseTag noise, CounterRng& rng);

/// Which kind of experiment a test consumes.
enum class DesignKind { two_sample, paired, blocks, three_arm };

struct TestSpec {
    std::string label;
    /// auto-ibet, seq-bet, covadj, linear-cate, signed-rank, i-friedman, i-kw, paired-ibet
    std::string kind = "auto-ibet";
    AutoPolicyConfig policy;
    SeqBetConfig seq;
    /// Working model for covadj.
    DesignSpec design = DesignSpec::linear_with_interactions();
    std::optional<DesignSpec> cate_design;
    SignedRankConfig signed_rank;
    std::size_t b = 200;

    DesignKind design_kind() const;
    bool is_betting() const;
};

TestSpec test_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TestSpec& spec);

struct SimulationConfig {
    std::size_t n = 500;
    std::size_t n0 = 30;
    EffectTag effect = EffectTag::linear;
    std::vector<double> s_delta{0.0};
    ControlTag control = ControlTag::bell;
    NoiseTag noise = NoiseTag::gaussian;
    double mu = 0.5;
    /// Completely randomized design with exactly this many treated.
    std::optional<std::size_t> fixed_treated;
    std::vector<TestSpec> tests;
    std::size_t reps = 500;
    double alpha = 0.05;
    std::uint64_t seed = 0;

    void validate() const;
};

SimulationConfig simulation_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SimulationConfig& c);

/// One simulated experiment. Only the member matching the test's design is filled.
struct Experiment {
    Dataset two_sample;
    std::vector<PairedRecord> pairs;
    std::vector<BlockRecord> blocks;
    Dataset three_arm;
};

Experiment generate_experiment(const SimulationConfig& config, DesignKind kind, double s_delta, CounterRng& rng);

/// Two-sample dataset following the config's randomization (Bernoulli mu or fixed sum).
Dataset generate_two_sample(const SimulationConfig& config, double s_delta, CounterRng& rng);
std::vector<PairedRecord> generate_pairs(std::size_t n_pairs, std::size_t n0, EffectTag effect, double s_delta,
                                         ControlTag control, NoiseTag noise, CounterRng& rng);
std::vector<BlockRecord> generate_blocks(std::size_t n_blocks, std::size_t n0, EffectTag effect, double s_delta,
                                         ControlTag control, NoiseTag noise, CounterRng& rng);
Dataset generate_three_arm(std::size_t n, std::size_t n0, EffectTag effect, double s_delta, ControlTag control,
                           NoiseTag noise, CounterRng& rng);

struct RepOutcome {
    bool reject = false;
    std::optional<double> stop_time;
};

RepOutcome run_test(const TestSpec& spec, const Experiment& experiment, double alpha, std::uint64_t seed);

struct PowerRow {
    std::string test;
    double s_delta = 0.0;
    double power = 0.0;
    double se = 0.0;
    std::optional<double> mean_stop_time;
    std::size_t reps = 0;
    std::uint64_t seed = 0;
    std::size_t excluded = 0;
};

struct PowerTable {
    std::vector<PowerRow> rows;

    const PowerRow* find(const std::string& test, double s_delta) const;
    std::vector<double> grid() const;
};

struct PowerOptions {
    std::size_t jobs = 1;
    /// Called after each finished (test, grid point) cell.
    std::function<void(const PowerRow&)> progress;
};

/// Every test sees the same experiments: repetition r at grid point g draws its
/// data from master.split(g).split(r).
PowerTable estimate_power(const SimulationConfig& config, const PowerOptions& options = {});

/// CSV `test,s_delta,power,se,mean_stop_time,reps,seed`.
void export_results(const PowerTable& table, std::ostream& out);
void export_results_file(const PowerTable& table, const std::string& path);
PowerTable read_power_csv(std::istream& in);

/// Runs `fn(rep)` for rep in [0, reps) on `jobs` threads. Results are
/// collected by index so the output never depends on scheduling.
void parallel_for(std::size_t reps, std::size_t jobs, const std::function<void(std::size_t)>& fn);

}  // namespace ibet
