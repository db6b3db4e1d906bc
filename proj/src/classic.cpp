#include "ibet/classic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <boost/math/distributions/chi_squared.hpp>

#include "ibet/error.hpp"
#include "ibet/rng.hpp"

namespace ibet {

std::vector<double> average_ranks(std::span<const double> v) {
    const std::size_t n = v.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t l, std::size_t r) { return v[l] < v[r]; });
    std::vector<double> ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i + 1;
        while (j < n && v[idx[j]] == v[idx[i]]) ++j;
        const double avg = 0.5 * static_cast<double>(i + 1 + j);
        for (std::size_t t = i; t < j; ++t) ranks[idx[t]] = avg;
        i = j;
    }
    return ranks;
}

nlohmann::json TestResult::to_json() const {
    nlohmann::json j;
    j["test"] = test;
    j["reject"] = reject;
    j["p_value"] = p_value;
    j["statistic"] = statistic;
    if (threshold) j["threshold"] = *threshold;
    if (!warnings.empty()) j["warnings"] = warnings;
    if (!diagnostics.empty()) j["diagnostics"] = diagnostics;
    return j;
}

// ---------------------------------------------------------------------------
// permutation framework

void finish_permutation(PermutationResult& r, double alpha, std::uint64_t multiplicity) {
    const std::size_t b = r.permuted.size();
    if (b == 0) fail(ErrorCode::config, "permutation test needs at least one statistic");
    const double w = r.observed;
    const double slack = 1e-12 * (1.0 + std::abs(w));
    const auto at_least = static_cast<std::size_t>(
        std::count_if(r.permuted.begin(), r.permuted.end(), [&](double v) { return v >= w - slack; }));
    r.p_value = static_cast<double>(at_least) / static_cast<double>(b);
    // Threshold order statistic counted over b * multiplicity relabelings.
    const auto total = static_cast<double>(b) * static_cast<double>(multiplicity);
    const auto k_total = static_cast<std::uint64_t>(std::floor(alpha * total + 1e-9));
    const auto k = static_cast<std::size_t>((k_total + multiplicity - 1) / multiplicity);
    if (k == 0) {
        r.reject = false;
        return;
    }
    std::vector<double> sorted = r.permuted;
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k - 1), sorted.end(), std::greater<>());
    r.reject = w > sorted[k - 1] + slack;
}

PermutationResult permutation_test(const AssignmentStatistic& statistic, const std::vector<int>& a,
                                   const PermutationOptions& options) {
    if (!(options.alpha > 0.0 && options.alpha < 1.0)) fail(ErrorCode::config, "alpha must lie in (0,1)");
    const std::size_t n = a.size();
    bool exhaustive = options.mode == PermutationOptions::Mode::exhaustive;
    if (options.mode == PermutationOptions::Mode::automatic) exhaustive = n <= kExhaustiveMaxN;
    if (exhaustive && n > 10) fail(ErrorCode::config, "exhaustive enumeration is limited to n <= 10");
    if (!exhaustive && options.b < 20) fail(ErrorCode::config, "permutation test needs B >= 20");

    PermutationResult r;
    r.exhaustive = exhaustive;
    r.observed = statistic(a);
    if (exhaustive) {
        std::vector<int> perm = a;
        std::sort(perm.begin(), perm.end());
        do {
            r.permuted.push_back(perm == a ? r.observed : statistic(perm));
        } while (std::next_permutation(perm.begin(), perm.end()));
        // Keep the observed arrangement first, matching the sampled layout.
        const auto it = std::find(r.permuted.begin(), r.permuted.end(), r.observed);
        std::iter_swap(r.permuted.begin(), it);
    } else {
        CounterRng rng(options.seed);
        r.permuted.reserve(options.b);
        r.permuted.push_back(r.observed);
        std::vector<int> perm = a;
        for (std::size_t b = 1; b < options.b; ++b) {
            rng.shuffle(perm);
            r.permuted.push_back(statistic(perm));
        }
    }
    std::uint64_t multiplicity = 1;
    if (exhaustive) {
        std::uint64_t fact = 1;
        for (std::uint64_t i = 2; i <= n; ++i) fact *= i;
        multiplicity = fact / r.permuted.size();
    }
    finish_permutation(r, options.alpha, multiplicity);
    return r;
}

// ---------------------------------------------------------------------------
// CovAdj Wilcoxon

double covadj_wilcoxon(std::span<const double> residuals, std::span<const int> a) {
    if (residuals.size() != a.size()) fail(ErrorCode::config, "residual and assignment lengths differ");
    const std::vector<double> rk = average_ranks(residuals);
    double w = 0.0;
    for (std::size_t i = 0; i < rk.size(); ++i) w += (2.0 * a[i] - 1.0) * rk[i];
    return w;
}

double covadj_wilcoxon(const Dataset& data, const DesignSpec& design) {
    const ResidualFit fit = fit_residuals(data, design);
    const std::vector<int> a = data.assignments();
    return covadj_wilcoxon(fit.residuals, a);
}

TestResult covadj_wilcoxon_test(const Dataset& data, const DesignSpec& design, const PermutationOptions& options) {
    data.validate();
    if (!data.support.is_binary()) fail(ErrorCode::unsupported, "CovAdj Wilcoxon needs binary assignments");
    const ResidualFit fit = fit_residuals(data, design);
    const std::vector<double> rk = average_ranks(fit.residuals);
    const AssignmentStatistic stat = [&](const std::vector<int>& a) {
        double w = 0.0;
        for (std::size_t i = 0; i < rk.size(); ++i) w += (2.0 * a[i] - 1.0) * rk[i];
        return w;
    };
    const PermutationResult pr = permutation_test(stat, data.assignments(), options);
    TestResult t;
    t.test = "covadj";
    t.reject = pr.reject;
    t.p_value = pr.p_value;
    t.statistic = pr.observed;
    t.warnings = fit.warnings;
    t.diagnostics["permutations"] = pr.permuted.size();
    t.diagnostics["exhaustive"] = pr.exhaustive;
    return t;
}

// ---------------------------------------------------------------------------
// signed-rank family

double signed_rank_statistic(std::span<const double> e) {
    std::vector<double> mag(e.size());
    for (std::size_t i = 0; i < e.size(); ++i) mag[i] = std::abs(e[i]);
    const std::vector<double> rk = average_ranks(mag);
    double w = 0.0;
    for (std::size_t i = 0; i < e.size(); ++i) w += (e[i] > 0.0 ? 1.0 : (e[i] < 0.0 ? -1.0 : 0.0)) * rk[i];
    return w;
}

std::string to_string(EStatVariant v) {
    switch (v) {
        case EStatVariant::r_of_x: return "R_of_X";
        case EStatVariant::r_of_x_false_a: return "R_of_X_falseA";
        case EStatVariant::r_minus_rhat_false_a: return "R_minus_Rhat_falseA";
        case EStatVariant::diff_in_pred_error: return "diff_in_pred_error";
        case EStatVariant::signed_diff_in_pred_error: return "signed_diff_in_pred_error";
    }
    return "?";
}

EStatVariant e_stat_variant_from_string(const std::string& s) {
    for (EStatVariant v : kAllEStatVariants)
        if (to_string(v) == s) return v;
    fail(ErrorCode::config, "unknown E-statistic variant '" + s + "'");
}

ArmPredictions ArmPredictions::from_model(const ArmModel& m, const Eigen::MatrixXd& x) {
    ArmPredictions p;
    const Eigen::MatrixXd z = m.basis.expand(x);
    const Eigen::VectorXd v0 = z * m.coef.at(0);
    const Eigen::VectorXd v1 = z * m.coef.at(1);
    p.at0.assign(v0.data(), v0.data() + v0.size());
    p.at1.assign(v1.data(), v1.data() + v1.size());
    return p;
}

std::vector<double> compute_e_stats(EStatVariant variant, std::span<const int> a, std::span<const double> y,
                                    std::span<const double> r, const ArmPredictions* yhat, const ArmPredictions* rhat) {
    const std::size_t n = a.size();
    std::vector<double> e(n);
    const bool needs_rhat = variant == EStatVariant::r_minus_rhat_false_a || variant == EStatVariant::diff_in_pred_error ||
                            variant == EStatVariant::signed_diff_in_pred_error;
    if (variant == EStatVariant::r_of_x_false_a && !yhat) fail(ErrorCode::config, to_string(variant) + " needs an outcome model");
    if (needs_rhat && !rhat) fail(ErrorCode::config, to_string(variant) + " needs a residual model");
    if (variant != EStatVariant::r_of_x_false_a && r.size() != n) fail(ErrorCode::config, "residual length differs");
    for (std::size_t i = 0; i < n; ++i) {
        const int ai = a[i];
        const double s = 2.0 * ai - 1.0;
        switch (variant) {
            case EStatVariant::r_of_x: e[i] = s * r[i]; break;
            case EStatVariant::r_of_x_false_a: e[i] = s * (y[i] - yhat->under(i, 1 - ai)); break;
            case EStatVariant::r_minus_rhat_false_a: e[i] = s * (r[i] - rhat->under(i, 1 - ai)); break;
            case EStatVariant::diff_in_pred_error:
            case EStatVariant::signed_diff_in_pred_error: {
                const double t_false = rhat->under(i, 1 - ai);
                const double t_true = rhat->under(i, ai);
                const double diff = std::abs(t_false - r[i]) - std::abs(t_true - r[i]);
                if (variant == EStatVariant::diff_in_pred_error) {
                    e[i] = diff;
                } else {
                    const bool s1 = s * (r[i] - t_false) >= 0.0;
                    const bool s2 = s * (t_true - t_false) >= 0.0;
                    e[i] = (s1 || s2 ? 1.0 : -1.0) * diff;
                }
                break;
            }
        }
    }
    return e;
}

namespace {

Eigen::VectorXd solve_gram(const Eigen::MatrixXd& gram, const Eigen::VectorXd& rhs) {
    Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
    if (ldlt.info() == Eigen::Success && ldlt.isPositive()) {
        const Eigen::VectorXd d = ldlt.vectorD();
        const double dmax = d.cwiseAbs().maxCoeff();
        if (dmax > 0.0 && d.minCoeff() > 1e-12 * dmax) return ldlt.solve(rhs);
    }
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(gram);
    cod.setThreshold(1e-12);
    return cod.solve(rhs);
}

}  // namespace

SignedRankStatistic::SignedRankStatistic(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const SignedRankConfig& config)
    : config_(config), yv_(y) {
    const ResidualFit rf = fit_residuals(x, y, config.residual_design);
    r_ = rf.residuals;
    y_.assign(y.data(), y.data() + y.size());
    rv_ = Eigen::Map<const Eigen::VectorXd>(r_.data(), static_cast<Eigen::Index>(r_.size()));
    if (config.variant != EStatVariant::r_of_x) {
        const DesignBasis basis = DesignBasis::build(config.arm_design, x);
        z_ = basis.expand(x);
    }
}

ArmPredictions SignedRankStatistic::fit_arms(const Eigen::VectorXd& target, const std::vector<int>& a) const {
    const Eigen::Index p = z_.cols();
    Eigen::MatrixXd g1 = Eigen::MatrixXd::Zero(p, p), g0 = Eigen::MatrixXd::Zero(p, p);
    Eigen::VectorXd b1 = Eigen::VectorXd::Zero(p), b0 = Eigen::VectorXd::Zero(p);
    for (Eigen::Index i = 0; i < z_.rows(); ++i) {
        const auto zi = z_.row(i);
        if (a[static_cast<std::size_t>(i)] == 1) {
            g1.selfadjointView<Eigen::Lower>().rankUpdate(zi.transpose());
            b1 += target(i) * zi.transpose();
        } else {
            g0.selfadjointView<Eigen::Lower>().rankUpdate(zi.transpose());
            b0 += target(i) * zi.transpose();
        }
    }
    g1 = g1.selfadjointView<Eigen::Lower>();
    g0 = g0.selfadjointView<Eigen::Lower>();
    const Eigen::VectorXd c1 = solve_gram(g1, b1);
    const Eigen::VectorXd c0 = solve_gram(g0, b0);
    ArmPredictions out;
    const Eigen::VectorXd v0 = z_ * c0, v1 = z_ * c1;
    out.at0.assign(v0.data(), v0.data() + v0.size());
    out.at1.assign(v1.data(), v1.data() + v1.size());
    return out;
}

std::vector<double> SignedRankStatistic::e_stats(const std::vector<int>& a) const {
    switch (config_.variant) {
        case EStatVariant::r_of_x: return compute_e_stats(config_.variant, a, y_, r_, nullptr, nullptr);
        case EStatVariant::r_of_x_false_a: {
            const ArmPredictions yhat = fit_arms(yv_, a);
            return compute_e_stats(config_.variant, a, y_, r_, &yhat, nullptr);
        }
        default: {
            const ArmPredictions rhat = fit_arms(rv_, a);
            return compute_e_stats(config_.variant, a, y_, r_, nullptr, &rhat);
        }
    }
}

double SignedRankStatistic::operator()(const std::vector<int>& a) const { return signed_rank_statistic(e_stats(a)); }

TestResult signed_rank_test(const Dataset& data, const SignedRankConfig& config, const PermutationOptions& options) {
    data.validate();
    if (!data.support.is_binary()) fail(ErrorCode::unsupported, "signed-rank tests need binary assignments");
    const std::vector<double> y = data.outcomes();
    const SignedRankStatistic stat(covariate_matrix(data),
                                   Eigen::Map<const Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(y.size())), config);
    const PermutationResult pr = permutation_test(std::cref(stat), data.assignments(), options);
    TestResult t;
    t.test = "signed-rank:" + to_string(config.variant);
    t.reject = pr.reject;
    t.p_value = pr.p_value;
    t.statistic = pr.observed;
    t.diagnostics["permutations"] = pr.permuted.size();
    t.diagnostics["exhaustive"] = pr.exhaustive;
    return t;
}

// ---------------------------------------------------------------------------
// linear CATE

DesignSpec default_cate_design() {
    DesignSpec s;
    s.intercept = false;
    s.interactions = true;
    return s;
}

TestResult linear_cate_test(const Dataset& data, double alpha, const std::optional<DesignSpec>& xprime) {
    data.validate();
    if (!(alpha > 0.0 && alpha < 1.0)) fail(ErrorCode::config, "alpha must lie in (0,1)");
    if (!data.support.is_binary()) fail(ErrorCode::unsupported, "linear-CATE test needs binary assignments");
    for (const Subject& s : data.subjects)
        if (s.mu != 0.5) fail(ErrorCode::unsupported, "linear-CATE test is defined for mu = 1/2 designs only");

    TestResult t;
    t.test = "linear-cate";
    DesignSpec spec = xprime.value_or(default_cate_design());
    spec.intercept = false;
    const Eigen::MatrixXd x = covariate_matrix(data);
    const DesignBasis basis = DesignBasis::build(spec, x, &t.warnings);
    const Eigen::MatrixXd xp = basis.expand(x);
    const Eigen::Index n = xp.rows(), p = xp.cols();
    if (n <= p + 1) fail(ErrorCode::degenerate_design, "need more subjects than CATE terms");

    // beta-hat from Y on [1, X'] without A.
    Eigen::MatrixXd z(n, p + 1);
    z.col(0).setOnes();
    z.rightCols(p) = xp;
    const std::vector<double> yv = data.outcomes();
    const Eigen::Map<const Eigen::VectorXd> y(yv.data(), n);
    const Eigen::VectorXd beta = weighted_least_squares(z, y, Eigen::VectorXd::Ones(n));
    const Eigen::VectorXd resid = y - z * beta;

    Eigen::MatrixXd b(n, p);
    for (Eigen::Index i = 0; i < n; ++i) b.row(i) = (data.subjects[static_cast<std::size_t>(i)].a - 0.5) * resid(i) * xp.row(i);
    const Eigen::VectorXd mean = b.colwise().mean().transpose();
    const Eigen::MatrixXd centered = b.rowwise() - mean.transpose();
    const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n - 1);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    const Eigen::VectorXd ev = es.eigenvalues();
    const double emax = ev.cwiseAbs().maxCoeff();
    std::size_t rank = 0;
    double s = 0.0;
    if (emax > 0.0) {
        const Eigen::VectorXd proj = es.eigenvectors().transpose() * mean;
        const bool ill = ev.minCoeff() <= emax / 1e12;
        for (Eigen::Index j = 0; j < p; ++j) {
            if (ev(j) > emax / 1e12) {
                s += proj(j) * proj(j) / ev(j);
                ++rank;
            }
        }
        if (ill) t.warnings.push_back("covariance of b is ill-conditioned; used a pseudo-inverse");
    }
    s *= static_cast<double>(n);
    t.statistic = s;
    const boost::math::chi_squared dist(static_cast<double>(p));
    t.threshold = boost::math::quantile(dist, 1.0 - alpha);
    t.p_value = s > 0.0 ? boost::math::cdf(boost::math::complement(dist, s)) : 1.0;
    const bool full_rank = rank == static_cast<std::size_t>(p);
    t.reject = full_rank && s > *t.threshold;
    if (!full_rank && emax > 0.0) t.warnings.push_back("covariance of b is rank-deficient; not rejecting");
    t.diagnostics["df"] = p;
    t.diagnostics["rank"] = rank;
    return t;
}

// ---------------------------------------------------------------------------
// Kruskal-Wallis and Friedman

double kruskal_wallis_stat(std::span<const double> y, std::span<const int> a) {
    if (y.size() != a.size()) fail(ErrorCode::config, "outcome and assignment lengths differ");
    const std::size_t n = y.size();
    if (n < 2) fail(ErrorCode::config, "Kruskal-Wallis needs at least two subjects");
    const std::vector<double> rk = average_ranks(y);
    const double mean = 0.5 * static_cast<double>(n + 1);
    double denom = 0.0;
    for (double r : rk) denom += (r - mean) * (r - mean);
    if (denom == 0.0) return 0.0;
    std::vector<int> groups(a.begin(), a.end());
    std::sort(groups.begin(), groups.end());
    groups.erase(std::unique(groups.begin(), groups.end()), groups.end());
    if (groups.size() < 2) fail(ErrorCode::config, "Kruskal-Wallis needs at least two nonempty groups");
    double num = 0.0;
    for (int g : groups) {
        double sum = 0.0;
        std::size_t cnt = 0;
        for (std::size_t i = 0; i < n; ++i)
            if (a[i] == g) {
                sum += rk[i];
                ++cnt;
            }
        const double m = sum / static_cast<double>(cnt);
        num += static_cast<double>(cnt) * (m - mean) * (m - mean);
    }
    return static_cast<double>(n - 1) * num / denom;
}

TestResult kruskal_wallis_test(const Dataset& data, const PermutationOptions& options) {
    data.validate();
    const std::vector<double> y = data.outcomes();
    const AssignmentStatistic stat = [&](const std::vector<int>& a) { return kruskal_wallis_stat(y, a); };
    const PermutationResult pr = permutation_test(stat, data.assignments(), options);
    TestResult t;
    t.test = "kruskal-wallis";
    t.reject = pr.reject;
    t.p_value = pr.p_value;
    t.statistic = pr.observed;
    t.diagnostics["permutations"] = pr.permuted.size();
    return t;
}

double friedman_stat(const std::vector<std::vector<double>>& outcomes, const std::vector<std::vector<int>>& assignments) {
    if (outcomes.empty() || outcomes.size() != assignments.size()) fail(ErrorCode::config, "block outcome/assignment mismatch");
    const std::size_t k = outcomes.front().size();
    if (k < 2) fail(ErrorCode::config, "Friedman blocks need at least two treatments");
    std::vector<double> rank_sum(k, 0.0);
    for (std::size_t b = 0; b < outcomes.size(); ++b) {
        if (outcomes[b].size() != k || assignments[b].size() != k) fail(ErrorCode::schema, "blocks must all have k subjects");
        std::vector<int> sorted = assignments[b];
        std::sort(sorted.begin(), sorted.end());
        for (std::size_t j = 0; j < k; ++j)
            if (sorted[j] != static_cast<int>(j + 1))
                fail(ErrorCode::schema, "block " + std::to_string(b) + " is not a permutation of treatments 1..k");
        const std::vector<double> rk = average_ranks(outcomes[b]);
        for (std::size_t j = 0; j < k; ++j) rank_sum[static_cast<std::size_t>(assignments[b][j] - 1)] += rk[j];
    }
    const double center = 0.5 * static_cast<double>(1 + k);
    double f = 0.0;
    for (double s : rank_sum) {
        const double m = s / static_cast<double>(outcomes.size());
        f += (m - center) * (m - center);
    }
    return f;
}

TestResult friedman_test(const std::vector<std::vector<double>>& outcomes, const std::vector<std::vector<int>>& assignments,
                         const PermutationOptions& options) {
    if (options.b < 20) fail(ErrorCode::config, "permutation test needs B >= 20");
    PermutationResult pr;
    pr.observed = friedman_stat(outcomes, assignments);
    pr.permuted.push_back(pr.observed);
    CounterRng rng(options.seed);
    std::vector<std::vector<int>> perm = assignments;
    for (std::size_t b = 1; b < options.b; ++b) {
        for (auto& block : perm) rng.shuffle(block);
        pr.permuted.push_back(friedman_stat(outcomes, perm));
    }
    finish_permutation(pr, options.alpha);
    TestResult t;
    t.test = "friedman";
    t.reject = pr.reject;
    t.p_value = pr.p_value;
    t.statistic = pr.observed;
    t.diagnostics["permutations"] = pr.permuted.size();
    return t;
}

}  // namespace ibet
