#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "ibet/dataset.hpp"
#include "ibet/models.hpp"

namespace ibet {

/// Ranks starting at 1; tied values share their average rank.
std::vector<double> average_ranks(std::span<const double> v);

/// Common result record for the non-sequential tests.
struct TestResult {
    std::string test;
    bool reject = false;
    double p_value = 1.0;
    double statistic = 0.0;
    std::optional<double> threshold;
    std::vector<std::string> warnings;
    nlohmann::json diagnostics = nlohmann::json::object();

    nlohmann::json to_json() const;
};

struct PermutationResult {
    double observed = 0.0;
    /// W^1..W^B; the first entry is the observed statistic.
    std::vector<double> permuted;
    double p_value = 1.0;
    bool reject = false;
    bool exhaustive = false;
};

struct PermutationOptions {
    enum class Mode { automatic, sampled, exhaustive };
    std::size_t b = 200;
    double alpha = 0.05;
    std::uint64_t seed = 0;
    Mode mode = Mode::automatic;
};

using AssignmentStatistic = std::function<double(const std::vector<int>&)>;

/// Largest n whose n! relabelings are enumerated in automatic mode.
inline constexpr std::size_t kExhaustiveMaxN = 8;

/// Permutes the assignment vector. Sampled mode draws B - 1 uniform
/// permutations; exhaustive mode visits every distinct arrangement once (each
/// stands for the same number of the n! relabelings). Rejects iff W exceeds
/// the floor(alpha B)-th largest of the W^b.
PermutationResult permutation_test(const AssignmentStatistic& statistic, const std::vector<int>& a,
                                   const PermutationOptions& options = {});

/// Applies the rejection rule and p-value to W^1..W^B. Each entry stands for
/// `multiplicity` relabelings when the list holds distinct arrangements only.
void finish_permutation(PermutationResult& r, double alpha, std::uint64_t multiplicity = 1);

/// sum (2 A_i - 1) rank(R_i)
double covadj_wilcoxon(std::span<const double> residuals, std::span<const int> a);
double covadj_wilcoxon(const Dataset& data, const DesignSpec& design);
TestResult covadj_wilcoxon_test(const Dataset& data, const DesignSpec& design, const PermutationOptions& options = {});

/// sum sign(E_i) rank(|E_i|)
double signed_rank_statistic(std::span<const double> e);

enum class EStatVariant { r_of_x, r_of_x_false_a, r_minus_rhat_false_a, diff_in_pred_error, signed_diff_in_pred_error };

std::string to_string(EStatVariant v);
EStatVariant e_stat_variant_from_string(const std::string& s);
inline constexpr EStatVariant kAllEStatVariants[] = {EStatVariant::r_of_x, EStatVariant::r_of_x_false_a,
                                                     EStatVariant::r_minus_rhat_false_a, EStatVariant::diff_in_pred_error,
                                                     EStatVariant::signed_diff_in_pred_error};

/// Model predictions at A = 0 and A = 1 for every subject.
struct ArmPredictions {
    std::vector<double> at0;
    std::vector<double> at1;

    double under(std::size_t i, int a) const { return a == 1 ? at1[i] : at0[i]; }
    static ArmPredictions from_model(const ArmModel& m, const Eigen::MatrixXd& x);
};

/// Per-subject E_i. `yhat` is an outcome model on (X, A) (needed by the
/// false-assignment outcome variant); `rhat` is the residual model R-hat(X, A)
/// used by the last three variants.
std::vector<double> compute_e_stats(EStatVariant variant, std::span<const int> a, std::span<const double> y,
                                    std::span<const double> r, const ArmPredictions* yhat, const ArmPredictions* rhat);

struct SignedRankConfig {
    EStatVariant variant = EStatVariant::r_of_x;
    /// Regression of Y on X giving R.
    DesignSpec residual_design = DesignSpec::linear_with_interactions();
    /// Per-arm regression for R-hat(X, A) and Y-hat(X, A).
    DesignSpec arm_design = DesignSpec::linear_with_interactions();
};

/// Signed-rank statistic as a function of the assignment vector, with the
/// residuals fixed and the arm models refitted for every relabeling.
class SignedRankStatistic {
public:
    SignedRankStatistic(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const SignedRankConfig& config);

    double operator()(const std::vector<int>& a) const;
    std::vector<double> e_stats(const std::vector<int>& a) const;
    const std::vector<double>& residuals() const noexcept { return r_; }

private:
    ArmPredictions fit_arms(const Eigen::VectorXd& target, const std::vector<int>& a) const;

    SignedRankConfig config_;
    Eigen::MatrixXd z_;
    Eigen::VectorXd yv_;
    Eigen::VectorXd rv_;
    std::vector<double> y_;
    std::vector<double> r_;
};

TestResult signed_rank_test(const Dataset& data, const SignedRankConfig& config, const PermutationOptions& options = {});

/// Chi-squared test of a linear CATE built from X' = covariates plus pairwise
/// interactions. Requires mu = 1/2 for every subject.
TestResult linear_cate_test(const Dataset& data, double alpha, const std::optional<DesignSpec>& xprime = std::nullopt);

/// X' default: covariates and pairwise interactions without an intercept.
DesignSpec default_cate_design();

double kruskal_wallis_stat(std::span<const double> y, std::span<const int> a);
TestResult kruskal_wallis_test(const Dataset& data, const PermutationOptions& options = {});

/// Blocks of k outcomes; assignments[b][j] is the treatment (1..k) of subject j in block b.
double friedman_stat(const std::vector<std::vector<double>>& outcomes, const std::vector<std::vector<int>>& assignments);
TestResult friedman_test(const std::vector<std::vector<double>>& outcomes, const std::vector<std::vector<int>>& assignments,
                         const PermutationOptions& options = {});

}  // namespace ibet
