#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "ibet/dataset.hpp"

namespace ibet {

enum class Estimator { least_squares, huber };

std::string to_string(Estimator e);
Estimator estimator_from_string(const std::string& s);

struct PowerTerm {
    std::size_t column = 0;  // 0-based covariate index
    int power = 2;
};

/// max(0, x[column] - knot)
struct HingeTerm {
    std::size_t column = 0;
    double knot = 0.0;
};

/// Which regressors a working model uses and how it is fitted.
struct DesignSpec {
    /// 0-based covariate columns; nullopt means every covariate.
    std::optional<std::vector<std::size_t>> columns;
    bool intercept = true;
    /// Pairwise products of the selected columns.
    bool interactions = false;
    std::vector<PowerTerm> powers;
    std::vector<HingeTerm> hinges;
    Estimator estimator = Estimator::least_squares;
    double huber_c = 1.345;

    void validate(std::size_t covariate_dim) const;

    /// Linear terms plus pairwise interactions, least squares.
    static DesignSpec linear_with_interactions();
};

/// JSON form uses 1-based column numbers matching the x1..xd CSV headers.
nlohmann::json to_json(const DesignSpec& spec);
DesignSpec design_from_json(const nlohmann::json& j);

struct DesignTerm {
    enum class Kind { intercept, linear, interaction, power, hinge };
    Kind kind = Kind::intercept;
    std::size_t j = 0;
    std::size_t k = 0;
    int power = 1;
    double knot = 0.0;

    double eval(std::span<const double> x) const;
    std::string name() const;
};

/// The expanded regressors of a DesignSpec after linearly dependent columns
/// have been dropped for a particular covariate sample.
class DesignBasis {
public:
    DesignBasis() = default;

    /// Expands `x` (n x d) and drops every term that is a linear combination
    /// of earlier ones, recording a warning for each.
    static DesignBasis build(const DesignSpec& spec, const Eigen::MatrixXd& x, std::vector<std::string>* warnings = nullptr);

    Eigen::MatrixXd expand(const Eigen::MatrixXd& x) const;
    Eigen::RowVectorXd expand_row(std::span<const double> x) const;

    std::size_t size() const noexcept { return terms_.size(); }
    std::size_t input_dim() const noexcept { return input_dim_; }
    const std::vector<DesignTerm>& terms() const noexcept { return terms_; }

private:
    std::vector<DesignTerm> terms_;
    std::size_t input_dim_ = 0;
};

Eigen::MatrixXd covariate_matrix(const std::vector<MaskedSubject>& subjects);
Eigen::MatrixXd covariate_matrix(const Dataset& data);

/// Solves min sum w_i (y_i - z_i b)^2. Rank-deficient weighted Gram matrices
/// get the minimum-norm solution.
Eigen::VectorXd weighted_least_squares(const Eigen::MatrixXd& z, const Eigen::VectorXd& y, const Eigen::VectorXd& w);

/// Weighted Huber M-estimate by IRLS, rescaling residuals by the weighted
/// MAD (divided by 0.6745) at every iteration.
Eigen::VectorXd huber_regression(const Eigen::MatrixXd& z, const Eigen::VectorXd& y, const Eigen::VectorXd& w, double c,
                                 const Eigen::VectorXd* start = nullptr, int max_iter = 100, double tol = 1e-10);

Eigen::VectorXd fit_coefficients(const Eigen::MatrixXd& z, const Eigen::VectorXd& y, const Eigen::VectorXd& w,
                                 const DesignSpec& spec, const Eigen::VectorXd* start = nullptr);

struct ResidualFit {
    DesignBasis basis;
    Eigen::VectorXd coef;
    std::vector<double> residuals;
    std::vector<std::string> warnings;

    double predict(std::span<const double> x) const;
};

/// R_i = Y_i - Yhat(X_i) from a regression on the covariates only.
ResidualFit fit_residuals(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const DesignSpec& spec);
ResidualFit fit_residuals(const Dataset& data, const DesignSpec& spec);

/// One regression per assignment value on a shared basis; the R-hat(X, A)
/// model of the signed-rank statistics.
struct ArmModel {
    DesignBasis basis;
    std::vector<int> arms;
    std::vector<Eigen::VectorXd> coef;

    double predict(std::span<const double> x, int a) const;
};

ArmModel fit_by_arm(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const std::vector<int>& a,
                    const std::vector<int>& arms, const DesignSpec& spec);

/// A group of subjects whose joint assignment is one of `configs`, each
/// listing one arm value per member. Plain two-sample subjects are units of
/// size one with configs {0} and {1}; Friedman blocks are units of size k
/// with the k! permutations.
struct MixtureUnit {
    std::vector<std::size_t> members;
    std::vector<std::vector<int>> configs;
    std::vector<double> prior;
    /// Index of the realized config when the unit is revealed.
    std::optional<std::size_t> known;
};

struct EmOptions {
    int max_iter = 100;
    double tol = 1e-6;
    /// Estimate a common noise scale instead of the unit variance of the working model.
    bool estimate_sigma = false;
    /// Extra two-sample starts (an outcome-median split); the fit with the
    /// higher likelihood wins. 0 keeps the single default start.
    int restarts = 1;
    /// Starting P(A = 1) per subject for two-sample fits; overrides the default start.
    std::optional<std::vector<double>> init_q;
    /// Starting config probabilities per unit for general fits.
    std::optional<std::vector<std::vector<double>>> init_posterior;
};

struct WorkingModelFit {
    DesignBasis basis;
    std::vector<int> arms;
    std::vector<Eigen::VectorXd> theta;
    /// Two-sample fits: P(A_i = 1 | F). Multi-arm fits: E(A_i | F).
    std::vector<double> q;
    /// [subject][arm index] posterior marginals.
    std::vector<std::vector<double>> arm_probability;
    /// [unit][config] posteriors.
    std::vector<std::vector<double>> unit_posterior;
    int iterations = 0;
    bool converged = false;
    double sigma = 1.0;
    std::vector<double> log_likelihood;
    std::vector<std::string> warnings;

    const Eigen::VectorXd& theta_for(int a) const;
    double predict(std::span<const double> x, int a) const;
};

/// EM for the Gaussian mixture working model with means theta_a(X).
/// Revealed units keep their realized config with probability one.
WorkingModelFit fit_mixture_em(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const std::vector<MixtureUnit>& units,
                               const std::vector<int>& arms, const DesignSpec& spec, const EmOptions& options = {});

/// Two-sample EM. `revealed[i]` holds A_i for subjects in the filtration.
WorkingModelFit fit_em(const std::vector<MaskedSubject>& subjects, const std::vector<std::optional<int>>& revealed,
                       const DesignSpec& spec, const EmOptions& options = {});

/// k-sample EM over arms 1..k with uniform prior.
WorkingModelFit fit_em_multiarm(const std::vector<MaskedSubject>& subjects, const std::vector<std::optional<int>>& revealed,
                                int k, const DesignSpec& spec, const EmOptions& options = {});

/// Observed-data log-likelihood of a two-sample fit with unit variance; the
/// quantity EM climbs.
double two_sample_log_likelihood(const Eigen::MatrixXd& z, const Eigen::VectorXd& y, const std::vector<double>& mu,
                                 const std::vector<std::optional<int>>& revealed, const Eigen::VectorXd& theta0,
                                 const Eigen::VectorXd& theta1);

/// Prediction of a fitted outcome model under a possibly counterfactual assignment.
double predict_outcome(const WorkingModelFit& fit, std::span<const double> x, int a);
double predict_outcome(const ArmModel& fit, std::span<const double> x, int a);

/// Logistic regression by Newton steps with a small ridge on the slopes.
Eigen::VectorXd logistic_regression(const Eigen::MatrixXd& z, const Eigen::VectorXd& a, double ridge = 1e-3, int max_iter = 50);

}  // namespace ibet
