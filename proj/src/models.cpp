#include "ibet/models.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include <nlohmann/json.hpp>

#include "ibet/error.hpp"

namespace ibet {

namespace {

constexpr double kDependenceTol = 1e-9;
const double kLogSqrt2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

double log_phi(double r) { return -0.5 * r * r - kLogSqrt2Pi; }

double log_sum_exp(const std::vector<double>& v) {
    const double m = *std::max_element(v.begin(), v.end());
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
}

double weighted_median(std::vector<std::pair<double, double>> vw) {
    vw.erase(std::remove_if(vw.begin(), vw.end(), [](const auto& p) { return !(p.second > 0.0); }), vw.end());
    if (vw.empty()) return 0.0;
    std::sort(vw.begin(), vw.end());
    double total = 0.0;
    for (const auto& p : vw) total += p.second;
    double acc = 0.0;
    for (const auto& p : vw) {
        acc += p.second;
        if (acc >= 0.5 * total) return p.first;
    }
    return vw.back().first;
}

}  // namespace

std::string to_string(Estimator e) { return e == Estimator::huber ? "huber" : "ls"; }

Estimator estimator_from_string(const std::string& s) {
    if (s == "ls" || s == "least-squares") return Estimator::least_squares;
    if (s == "huber" || s == "huber-robust") return Estimator::huber;
    fail(ErrorCode::config, "unknown estimator '" + s + "' (expected ls or huber)");
}

void DesignSpec::validate(std::size_t covariate_dim) const {
    if (!(huber_c > 0.0)) fail(ErrorCode::config, "huber constant must be positive");
    auto check = [&](std::size_t c) {
        if (c >= covariate_dim)
            fail(ErrorCode::config, "design references x" + std::to_string(c + 1) + " but data has " +
                                        std::to_string(covariate_dim) + " covariates");
    };
    if (columns)
        for (std::size_t c : *columns) check(c);
    for (const PowerTerm& p : powers) {
        check(p.column);
        if (p.power < 1) fail(ErrorCode::config, "power terms need a positive exponent");
    }
    for (const HingeTerm& h : hinges) {
        check(h.column);
        if (!std::isfinite(h.knot)) fail(ErrorCode::config, "hinge knot must be finite");
    }
}

DesignSpec DesignSpec::linear_with_interactions() {
    DesignSpec s;
    s.interactions = true;
    return s;
}

nlohmann::json to_json(const DesignSpec& spec) {
    nlohmann::json j;
    if (spec.columns) {
        std::vector<std::size_t> cols;
        for (std::size_t c : *spec.columns) cols.push_back(c + 1);
        j["columns"] = cols;
    }
    j["intercept"] = spec.intercept;
    j["interactions"] = spec.interactions;
    nlohmann::json powers = nlohmann::json::array();
    for (const PowerTerm& p : spec.powers) powers.push_back({{"column", p.column + 1}, {"power", p.power}});
    j["powers"] = powers;
    nlohmann::json hinges = nlohmann::json::array();
    for (const HingeTerm& h : spec.hinges) hinges.push_back({{"column", h.column + 1}, {"knot", h.knot}});
    j["hinges"] = hinges;
    j["estimator"] = to_string(spec.estimator);
    j["huber_c"] = spec.huber_c;
    return j;
}

DesignSpec design_from_json(const nlohmann::json& j) {
    DesignSpec s;
    if (!j.is_object()) fail(ErrorCode::config, "design must be a JSON object");
    auto column = [](const nlohmann::json& v) -> std::size_t {
        const auto c = v.get<long long>();
        if (c < 1) fail(ErrorCode::config, "design columns are numbered from 1");
        return static_cast<std::size_t>(c - 1);
    };
    try {
        for (const auto& [key, value] : j.items()) {
            if (key == "columns") {
                std::vector<std::size_t> cols;
                for (const auto& c : value) cols.push_back(column(c));
                s.columns = cols;
            } else if (key == "intercept") {
                s.intercept = value.get<bool>();
            } else if (key == "interactions") {
                s.interactions = value.get<bool>();
            } else if (key == "powers") {
                for (const auto& p : value) s.powers.push_back({column(p.at("column")), p.at("power").get<int>()});
            } else if (key == "hinges") {
                for (const auto& h : value) s.hinges.push_back({column(h.at("column")), h.at("knot").get<double>()});
            } else if (key == "estimator") {
                s.estimator = estimator_from_string(value.get<std::string>());
            } else if (key == "huber_c") {
                s.huber_c = value.get<double>();
            } else {
                fail(ErrorCode::config, "unknown design field '" + key + "'");
            }
        }
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::config, std::string("malformed design: ") + e.what());
    }
    if (!(s.huber_c > 0.0)) fail(ErrorCode::config, "huber constant must be positive");
    return s;
}

// ---------------------------------------------------------------------------
// basis

double DesignTerm::eval(std::span<const double> x) const {
    switch (kind) {
        case Kind::intercept: return 1.0;
        case Kind::linear: return x[j];
        case Kind::interaction: return x[j] * x[k];
        case Kind::power: return std::pow(x[j], power);
        case Kind::hinge: return std::max(0.0, x[j] - knot);
    }
    return 0.0;
}

std::string DesignTerm::name() const {
    const std::string xj = "x" + std::to_string(j + 1);
    switch (kind) {
        case Kind::intercept: return "1";
        case Kind::linear: return xj;
        case Kind::interaction: return xj + "*x" + std::to_string(k + 1);
        case Kind::power: return xj + "^" + std::to_string(power);
        case Kind::hinge: {
            char buf[64];
            std::snprintf(buf, sizeof buf, "max(0,%s-%g)", xj.c_str(), knot);
            return buf;
        }
    }
    return "?";
}

DesignBasis DesignBasis::build(const DesignSpec& spec, const Eigen::MatrixXd& x, std::vector<std::string>* warnings) {
    const auto d = static_cast<std::size_t>(x.cols());
    spec.validate(d);
    std::vector<std::size_t> cols;
    if (spec.columns) {
        cols = *spec.columns;
    } else {
        cols.resize(d);
        std::iota(cols.begin(), cols.end(), 0);
    }

    using K = DesignTerm::Kind;
    std::vector<DesignTerm> candidates;
    if (spec.intercept) candidates.push_back({K::intercept});
    for (std::size_t c : cols) candidates.push_back({K::linear, c});
    if (spec.interactions)
        for (std::size_t a = 0; a < cols.size(); ++a)
            for (std::size_t b = a + 1; b < cols.size(); ++b) candidates.push_back({K::interaction, cols[a], cols[b]});
    for (const PowerTerm& p : spec.powers) candidates.push_back({K::power, p.column, 0, p.power});
    for (const HingeTerm& h : spec.hinges) candidates.push_back({K::hinge, h.column, 0, 1, h.knot});

    DesignBasis basis;
    basis.input_dim_ = d;
    const Eigen::Index n = x.rows();
    Eigen::MatrixXd q(n, 0);
    for (const DesignTerm& t : candidates) {
        Eigen::VectorXd v(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const Eigen::RowVectorXd row = x.row(i);
            v(i) = t.eval(std::span<const double>(row.data(), d));
        }
        const double norm0 = v.norm();
        Eigen::VectorXd r = v;
        if (q.cols() > 0) {
            r -= q * (q.transpose() * r);
            r -= q * (q.transpose() * r);
        }
        const double norm = r.norm();
        if (!(norm0 > 0.0) || !std::isfinite(norm0) || norm <= kDependenceTol * norm0) {
            if (warnings) warnings->push_back("dropped design term " + t.name() + ": linearly dependent on earlier terms");
            continue;
        }
        q.conservativeResize(Eigen::NoChange, q.cols() + 1);
        q.col(q.cols() - 1) = r / norm;
        basis.terms_.push_back(t);
    }
    if (basis.terms_.empty()) fail(ErrorCode::degenerate_design, "design has no usable terms");
    return basis;
}

Eigen::MatrixXd DesignBasis::expand(const Eigen::MatrixXd& x) const {
    if (static_cast<std::size_t>(x.cols()) != input_dim_) fail(ErrorCode::config, "covariate dimension mismatch");
    Eigen::MatrixXd z(x.rows(), static_cast<Eigen::Index>(terms_.size()));
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const Eigen::RowVectorXd row = x.row(i);
        const std::span<const double> s(row.data(), input_dim_);
        for (std::size_t t = 0; t < terms_.size(); ++t) z(i, static_cast<Eigen::Index>(t)) = terms_[t].eval(s);
    }
    return z;
}

Eigen::RowVectorXd DesignBasis::expand_row(std::span<const double> x) const {
    if (x.size() != input_dim_) fail(ErrorCode::config, "covariate dimension mismatch");
    Eigen::RowVectorXd z(static_cast<Eigen::Index>(terms_.size()));
    for (std::size_t t = 0; t < terms_.size(); ++t) z(static_cast<Eigen::Index>(t)) = terms_[t].eval(x);
    return z;
}

Eigen::MatrixXd covariate_matrix(const std::vector<MaskedSubject>& subjects) {
    const std::size_t d = subjects.empty() ? 0 : subjects.front().x.size();
    Eigen::MatrixXd x(static_cast<Eigen::Index>(subjects.size()), static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < subjects.size(); ++i)
        for (std::size_t j = 0; j < d; ++j) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = subjects[i].x[j];
    return x;
}

Eigen::MatrixXd covariate_matrix(const Dataset& data) { return covariate_matrix(data.masked()); }

// ---------------------------------------------------------------------------
// estimators

Eigen::VectorXd weighted_least_squares(const Eigen::MatrixXd& z, const Eigen::VectorXd& y, const Eigen::VectorXd& w) {
    const Eigen::MatrixXd gram = z.transpose() * w.asDiagonal() * z;
    const Eigen::VectorXd rhs = z.transpose() * w.cwiseProduct(y);
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

Eigen::VectorXd huber_regression(const Eigen::MatrixXd& z, const Eigen::VectorXd& y, const Eigen::VectorXd& w, double c,
                                 const Eigen::VectorXd* start, int max_iter, double tol) {
    if (!(c > 0.0)) fail(ErrorCode::config, "huber constant must be positive");
    Eigen::VectorXd beta = start && start->size() == z.cols() ? *start : weighted_least_squares(z, y, w);
    std::vector<std::pair<double, double>> abs_res(static_cast<std::size_t>(y.size()));
    Eigen::VectorXd hw(y.size());
    for (int it = 0; it < max_iter; ++it) {
        const Eigen::VectorXd r = y - z * beta;
        for (Eigen::Index i = 0; i < y.size(); ++i) abs_res[static_cast<std::size_t>(i)] = {std::abs(r(i)), w(i)};
        const double scale = weighted_median(abs_res) / 0.6745;
        if (!(scale > 1e-300)) break;
        for (Eigen::Index i = 0; i < y.size(); ++i) {
            const double u = std::abs(r(i)) / scale;
            hw(i) = w(i) * (u <= c ? 1.0 : c / u);
        }
        const Eigen::VectorXd next = weighted_least_squares(z, y, hw);
        const double change = (next - beta).cwiseAbs().maxCoeff();
        beta = next;
        if (change <= tol * (1.0 + beta.cwiseAbs().maxCoeff())) break;
    }
    return beta;
}

Eigen::VectorXd fit_coefficients(const Eigen::MatrixXd& z, const Eigen::VectorXd& y, const Eigen::VectorXd& w,
                                 const DesignSpec& spec, const Eigen::VectorXd* start) {
    if (spec.estimator == Estimator::huber) return huber_regression(z, y, w, spec.huber_c, start, 50, 1e-8);
    return weighted_least_squares(z, y, w);
}

double ResidualFit::predict(std::span<const double> x) const { return basis.expand_row(x).dot(coef); }

ResidualFit fit_residuals(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const DesignSpec& spec) {
    ResidualFit fit;
    fit.basis = DesignBasis::build(spec, x, &fit.warnings);
    if (static_cast<std::size_t>(x.rows()) <= fit.basis.size())
        fail(ErrorCode::degenerate_design, "need more subjects than design terms");
    const Eigen::MatrixXd z = fit.basis.expand(x);
    const Eigen::VectorXd w = Eigen::VectorXd::Ones(y.size());
    fit.coef = spec.estimator == Estimator::huber ? huber_regression(z, y, w, spec.huber_c) : weighted_least_squares(z, y, w);
    const Eigen::VectorXd r = y - z * fit.coef;
    fit.residuals.assign(r.data(), r.data() + r.size());
    return fit;
}

ResidualFit fit_residuals(const Dataset& data, const DesignSpec& spec) {
    const std::vector<double> y = data.outcomes();
    return fit_residuals(covariate_matrix(data), Eigen::Map<const Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(y.size())),
                         spec);
}

double ArmModel::predict(std::span<const double> x, int a) const {
    const auto it = std::find(arms.begin(), arms.end(), a);
    if (it == arms.end()) fail(ErrorCode::config, "no fitted arm for assignment " + std::to_string(a));
    return basis.expand_row(x).dot(coef[static_cast<std::size_t>(it - arms.begin())]);
}

ArmModel fit_by_arm(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const std::vector<int>& a, const std::vector<int>& arms,
                    const DesignSpec& spec) {
    ArmModel m;
    m.basis = DesignBasis::build(spec, x);
    m.arms = arms;
    const Eigen::MatrixXd z = m.basis.expand(x);
    for (int arm : arms) {
        Eigen::VectorXd w(y.size());
        for (Eigen::Index i = 0; i < y.size(); ++i) w(i) = a[static_cast<std::size_t>(i)] == arm ? 1.0 : 0.0;
        if (w.sum() == 0.0) fail(ErrorCode::singular_fit, "arm " + std::to_string(arm) + " has no subjects");
        m.coef.push_back(fit_coefficients(z, y, w, spec));
    }
    return m;
}

// ---------------------------------------------------------------------------
// EM

const Eigen::VectorXd& WorkingModelFit::theta_for(int a) const {
    const auto it = std::find(arms.begin(), arms.end(), a);
    if (it == arms.end()) fail(ErrorCode::config, "no fitted arm for assignment " + std::to_string(a));
    return theta[static_cast<std::size_t>(it - arms.begin())];
}

double WorkingModelFit::predict(std::span<const double> x, int a) const { return basis.expand_row(x).dot(theta_for(a)); }

double predict_outcome(const WorkingModelFit& fit, std::span<const double> x, int a) { return fit.predict(x, a); }
double predict_outcome(const ArmModel& fit, std::span<const double> x, int a) { return fit.predict(x, a); }

Eigen::VectorXd logistic_regression(const Eigen::MatrixXd& z, const Eigen::VectorXd& a, double ridge, int max_iter) {
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(z.cols());
    Eigen::VectorXd pen = Eigen::VectorXd::Constant(z.cols(), ridge);
    pen(0) = 0.0;
    for (int it = 0; it < max_iter; ++it) {
        const Eigen::VectorXd eta = (z * beta).cwiseMax(-30.0).cwiseMin(30.0);
        const Eigen::VectorXd p = eta.unaryExpr([](double e) { return 1.0 / (1.0 + std::exp(-e)); });
        const Eigen::VectorXd g = z.transpose() * (a - p) - pen.cwiseProduct(beta);
        const Eigen::VectorXd wv = p.cwiseProduct(Eigen::VectorXd::Ones(p.size()) - p);
        Eigen::MatrixXd h = z.transpose() * wv.asDiagonal() * z;
        h.diagonal() += pen + Eigen::VectorXd::Constant(z.cols(), 1e-10);
        const Eigen::VectorXd step = h.ldlt().solve(g);
        beta += step;
        if (step.cwiseAbs().maxCoeff() < 1e-8) break;
    }
    return beta;
}

WorkingModelFit fit_mixture_em(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const std::vector<MixtureUnit>& units,
                               const std::vector<int>& arms, const DesignSpec& spec, const EmOptions& options) {
    const auto n = static_cast<std::size_t>(y.size());
    const std::size_t k = arms.size();
    if (k < 2) fail(ErrorCode::config, "mixture needs at least two arms");
    if (options.max_iter < 1 || !(options.tol > 0.0)) fail(ErrorCode::config, "EM needs max_iter >= 1 and tol > 0");

    auto arm_index = [&](int a) {
        const auto it = std::find(arms.begin(), arms.end(), a);
        if (it == arms.end()) fail(ErrorCode::config, "config uses an assignment outside the arms");
        return static_cast<std::size_t>(it - arms.begin());
    };
    // Per unit, per config, the arm index of each member.
    std::vector<std::vector<std::vector<std::size_t>>> cfg_arm(units.size());
    std::vector<char> covered(n, 0);
    for (std::size_t u = 0; u < units.size(); ++u) {
        const MixtureUnit& unit = units[u];
        if (unit.configs.empty() || unit.prior.size() != unit.configs.size())
            fail(ErrorCode::config, "mixture unit needs configs with matching priors");
        if (unit.known && *unit.known >= unit.configs.size()) fail(ErrorCode::config, "known config out of range");
        for (std::size_t m : unit.members) {
            if (m >= n || covered[m]) fail(ErrorCode::config, "mixture units must partition the subjects");
            covered[m] = 1;
        }
        for (const auto& cfg : unit.configs) {
            if (cfg.size() != unit.members.size()) fail(ErrorCode::config, "config length differs from unit size");
            std::vector<std::size_t> idx;
            for (int a : cfg) idx.push_back(arm_index(a));
            cfg_arm[u].push_back(std::move(idx));
        }
    }
    if (std::find(covered.begin(), covered.end(), 0) != covered.end())
        fail(ErrorCode::config, "mixture units must cover every subject");

    WorkingModelFit fit;
    fit.arms = arms;
    fit.basis = DesignBasis::build(spec, x, &fit.warnings);
    const Eigen::MatrixXd z = fit.basis.expand(x);
    const auto p = static_cast<Eigen::Index>(fit.basis.size());

    // Posterior over configs per unit.
    std::vector<std::vector<double>> post(units.size());
    auto set_known = [&]() {
        for (std::size_t u = 0; u < units.size(); ++u) {
            if (!units[u].known) continue;
            post[u].assign(units[u].configs.size(), 0.0);
            post[u][*units[u].known] = 1.0;
        }
    };

    Eigen::MatrixXd weights(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
    auto fill_weights = [&]() {
        weights.setZero();
        for (std::size_t u = 0; u < units.size(); ++u)
            for (std::size_t c = 0; c < post[u].size(); ++c) {
                if (post[u][c] == 0.0) continue;
                for (std::size_t m = 0; m < units[u].members.size(); ++m)
                    weights(static_cast<Eigen::Index>(units[u].members[m]), static_cast<Eigen::Index>(cfg_arm[u][c][m])) +=
                        post[u][c];
            }
    };

    std::vector<Eigen::VectorXd> theta(k, Eigen::VectorXd::Zero(p));
    std::vector<bool> have_theta(k, false);
    Eigen::VectorXd pooled;
    bool collapse_warned = false;
    auto m_step = [&]() {
        fill_weights();
        for (std::size_t a = 0; a < k; ++a) {
            const Eigen::VectorXd w = weights.col(static_cast<Eigen::Index>(a));
            if (w.sum() < 1e-8 * static_cast<double>(n) + 1e-12) {
                if (!collapse_warned) {
                    fit.warnings.push_back("arm " + std::to_string(arms[a]) + " collapsed; using the pooled fit");
                    collapse_warned = true;
                }
                if (pooled.size() == 0)
                    pooled = fit_coefficients(z, y, Eigen::VectorXd::Ones(static_cast<Eigen::Index>(n)), spec);
                theta[a] = pooled;
            } else {
                theta[a] = fit_coefficients(z, y, w, spec, have_theta[a] ? &theta[a] : nullptr);
            }
            have_theta[a] = true;
        }
    };

    double sigma = 1.0;
    auto update_sigma = [&]() {
        if (!options.estimate_sigma) return;
        double ss = 0.0;
        for (std::size_t a = 0; a < k; ++a) {
            const Eigen::VectorXd r = y - z * theta[a];
            ss += weights.col(static_cast<Eigen::Index>(a)).dot(r.cwiseProduct(r));
        }
        sigma = std::max(std::sqrt(ss / static_cast<double>(n)), 1e-8);
    };

    // E-step; returns the observed-data log-likelihood at the current theta.
    Eigen::MatrixXd pred(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
    std::vector<double> scratch;
    auto e_step = [&]() {
        for (std::size_t a = 0; a < k; ++a) pred.col(static_cast<Eigen::Index>(a)) = z * theta[a];
        const double log_sigma = std::log(sigma);
        double ll = 0.0;
        for (std::size_t u = 0; u < units.size(); ++u) {
            const MixtureUnit& unit = units[u];
            auto config_ll = [&](std::size_t c) {
                double s = 0.0;
                for (std::size_t m = 0; m < unit.members.size(); ++m) {
                    const auto i = static_cast<Eigen::Index>(unit.members[m]);
                    s += log_phi((y(i) - pred(i, static_cast<Eigen::Index>(cfg_arm[u][c][m]))) / sigma) - log_sigma;
                }
                return s;
            };
            if (unit.known) {
                ll += config_ll(*unit.known);
                continue;
            }
            scratch.resize(unit.configs.size());
            for (std::size_t c = 0; c < unit.configs.size(); ++c)
                scratch[c] = unit.prior[c] > 0.0 ? std::log(unit.prior[c]) + config_ll(c) : -INFINITY;
            const double lse = log_sum_exp(scratch);
            ll += lse;
            post[u].resize(unit.configs.size());
            for (std::size_t c = 0; c < unit.configs.size(); ++c) post[u][c] = std::exp(scratch[c] - lse);
        }
        return ll;
    };

    // Starting posteriors.
    if (options.init_posterior) {
        if (options.init_posterior->size() != units.size()) fail(ErrorCode::config, "initial posterior size mismatch");
        for (std::size_t u = 0; u < units.size(); ++u) {
            post[u] = (*options.init_posterior)[u];
            if (post[u].size() != units[u].configs.size()) fail(ErrorCode::config, "initial posterior size mismatch");
        }
        set_known();
    } else {
        std::vector<std::size_t> revealed_per_arm(k, 0);
        for (std::size_t u = 0; u < units.size(); ++u)
            if (units[u].known)
                for (std::size_t a : cfg_arm[u][*units[u].known]) ++revealed_per_arm[a];
        const bool enough = *std::min_element(revealed_per_arm.begin(), revealed_per_arm.end()) >= 6;
        if (enough) {
            // Fit each arm on the revealed subjects only, then take one E-step.
            for (std::size_t u = 0; u < units.size(); ++u) post[u].assign(units[u].configs.size(), 0.0);
            set_known();
            m_step();
            e_step();
        } else {
            const double mean = y.mean();
            const double sd = std::sqrt((y.array() - mean).square().sum() / std::max<double>(1.0, static_cast<double>(n) - 1.0));
            const double center = 0.5 * (arms.front() + arms.back());
            const double half = 0.5 * (arms.back() - arms.front());
            for (std::size_t u = 0; u < units.size(); ++u) {
                const MixtureUnit& unit = units[u];
                post[u].assign(unit.configs.size(), 0.0);
                double total = 0.0;
                for (std::size_t c = 0; c < unit.configs.size(); ++c) {
                    double tilt = 0.0;
                    for (std::size_t m = 0; m < unit.members.size(); ++m) {
                        const double zy = sd > 0.0 ? (y(static_cast<Eigen::Index>(unit.members[m])) - mean) / sd : 0.0;
                        tilt += zy * (unit.configs[c][m] - center) / half;
                    }
                    post[u][c] = unit.prior[c] * std::max(1e-3, 1.0 + 0.02 * tilt);
                    total += post[u][c];
                }
                for (double& v : post[u]) v /= total;
            }
            set_known();
        }
    }

    for (int it = 1; it <= options.max_iter; ++it) {
        const std::vector<Eigen::VectorXd> previous = theta;
        const bool had = have_theta[0];
        m_step();
        update_sigma();
        fit.log_likelihood.push_back(e_step());
        fit.iterations = it;
        if (had) {
            double change = 0.0;
            for (std::size_t a = 0; a < k; ++a) change = std::max(change, (theta[a] - previous[a]).cwiseAbs().maxCoeff());
            if (change < options.tol) {
                fit.converged = true;
                break;
            }
        }
    }

    fit.theta = theta;
    fit.sigma = sigma;
    fit.unit_posterior = post;
    fill_weights();
    fit.arm_probability.assign(n, std::vector<double>(k, 0.0));
    fit.q.assign(n, 0.0);
    const bool binary = k == 2 && arms[0] == 0 && arms[1] == 1;
    for (std::size_t i = 0; i < n; ++i) {
        double ea = 0.0;
        for (std::size_t a = 0; a < k; ++a) {
            const double v = weights(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(a));
            fit.arm_probability[i][a] = v;
            ea += v * arms[a];
        }
        fit.q[i] = binary ? fit.arm_probability[i][1] : ea;
    }
    return fit;
}

namespace {

Eigen::VectorXd outcome_vector(const std::vector<MaskedSubject>& subjects) {
    Eigen::VectorXd y(static_cast<Eigen::Index>(subjects.size()));
    for (std::size_t i = 0; i < subjects.size(); ++i) y(static_cast<Eigen::Index>(i)) = subjects[i].y;
    return y;
}

}  // namespace

WorkingModelFit fit_em(const std::vector<MaskedSubject>& subjects, const std::vector<std::optional<int>>& revealed,
                       const DesignSpec& spec, const EmOptions& options) {
    const std::size_t n = subjects.size();
    if (revealed.size() != n) fail(ErrorCode::config, "revealed vector length differs from subject count");
    const Eigen::MatrixXd x = covariate_matrix(subjects);
    const Eigen::VectorXd y = outcome_vector(subjects);

    std::vector<MixtureUnit> units(n);
    std::size_t revealed_treated = 0, revealed_control = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double mu = subjects[i].mu;
        if (!(mu > 0.0 && mu < 1.0)) fail(ErrorCode::invalid_randomization, "mu must lie in (0,1)");
        units[i].members = {i};
        units[i].configs = {{0}, {1}};
        units[i].prior = {1.0 - mu, mu};
        if (revealed[i]) {
            if (*revealed[i] != 0 && *revealed[i] != 1) fail(ErrorCode::config, "two-sample EM needs binary assignments");
            units[i].known = static_cast<std::size_t>(*revealed[i]);
            (*revealed[i] == 1 ? revealed_treated : revealed_control) += 1;
        }
    }

    std::vector<double> q0(n, 0.5);
    if (options.init_q) {
        if (options.init_q->size() != n) fail(ErrorCode::config, "initial q size mismatch");
        q0 = *options.init_q;
    } else if (revealed_treated >= 6 && revealed_control >= 6) {
        // Logistic fit of A on (Y, design terms) among revealed subjects, standardized.
        std::vector<std::string> ignored;
        const DesignBasis basis = DesignBasis::build(spec, x, &ignored);
        const Eigen::MatrixXd zx = basis.expand(x);
        Eigen::MatrixXd f(static_cast<Eigen::Index>(n), zx.cols() + 2);
        f.col(0).setOnes();
        f.col(1) = y;
        f.rightCols(zx.cols()) = zx;
        for (Eigen::Index c = 1; c < f.cols(); ++c) {
            const double m = f.col(c).mean();
            const double sd = std::sqrt((f.col(c).array() - m).square().mean());
            if (sd > 1e-12)
                f.col(c) = ((f.col(c).array() - m) / sd).matrix();
            else
                f.col(c).setZero();
        }
        const Eigen::Index r = static_cast<Eigen::Index>(revealed_treated + revealed_control);
        Eigen::MatrixXd fr(r, f.cols());
        Eigen::VectorXd ar(r);
        Eigen::Index row = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (!revealed[i]) continue;
            fr.row(row) = f.row(static_cast<Eigen::Index>(i));
            ar(row++) = *revealed[i];
        }
        const Eigen::VectorXd beta = logistic_regression(fr, ar, 1.0);
        for (std::size_t i = 0; i < n; ++i) {
            const double eta = std::clamp(f.row(static_cast<Eigen::Index>(i)).dot(beta), -30.0, 30.0);
            q0[i] = std::clamp(1.0 / (1.0 + std::exp(-eta)), 0.02, 0.98);
        }
    } else {
        const double mean = y.mean();
        const double sd = std::sqrt((y.array() - mean).square().sum() / std::max<double>(1.0, static_cast<double>(n) - 1.0));
        for (std::size_t i = 0; i < n; ++i) {
            const double zy = sd > 0.0 ? (y(static_cast<Eigen::Index>(i)) - mean) / sd : 0.0;
            q0[i] = std::clamp(0.5 + 0.01 * zy, 0.01, 0.99);
        }
    }

    auto run_from = [&](const std::vector<double>& start) {
        EmOptions opts = options;
        std::vector<std::vector<double>> init(n);
        for (std::size_t i = 0; i < n; ++i) init[i] = {1.0 - start[i], start[i]};
        opts.init_posterior = std::move(init);
        opts.init_q.reset();
        return fit_mixture_em(x, y, units, {0, 1}, spec, opts);
    };
    WorkingModelFit best = run_from(q0);
    if (options.init_q || options.restarts == 0) return best;

    // A second start splitting at the outcome median guards against the
    // symmetric start settling on a poor mode.
    std::vector<double> sorted(y.data(), y.data() + y.size());
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(n / 2), sorted.end());
    const double median = sorted[n / 2];
    std::vector<double> split(n);
    for (std::size_t i = 0; i < n; ++i) split[i] = y(static_cast<Eigen::Index>(i)) > median ? 0.8 : 0.2;
    WorkingModelFit alt = run_from(split);
    const double lb = best.log_likelihood.empty() ? -INFINITY : best.log_likelihood.back();
    const double la = alt.log_likelihood.empty() ? -INFINITY : alt.log_likelihood.back();
    if (la > lb + 1e-9) return alt;
    return best;
}

WorkingModelFit fit_em_multiarm(const std::vector<MaskedSubject>& subjects, const std::vector<std::optional<int>>& revealed,
                                int k, const DesignSpec& spec, const EmOptions& options) {
    if (k < 2) fail(ErrorCode::config, "need at least two arms");
    const std::size_t n = subjects.size();
    if (revealed.size() != n) fail(ErrorCode::config, "revealed vector length differs from subject count");
    std::vector<int> arms(static_cast<std::size_t>(k));
    std::iota(arms.begin(), arms.end(), 1);
    std::vector<MixtureUnit> units(n);
    for (std::size_t i = 0; i < n; ++i) {
        units[i].members = {i};
        for (int a : arms) units[i].configs.push_back({a});
        units[i].prior.assign(static_cast<std::size_t>(k), 1.0 / k);
        if (revealed[i]) {
            if (*revealed[i] < 1 || *revealed[i] > k) fail(ErrorCode::config, "assignment outside 1..k");
            units[i].known = static_cast<std::size_t>(*revealed[i] - 1);
        }
    }
    return fit_mixture_em(covariate_matrix(subjects), outcome_vector(subjects), units, arms, spec, options);
}

double two_sample_log_likelihood(const Eigen::MatrixXd& z, const Eigen::VectorXd& y, const std::vector<double>& mu,
                                 const std::vector<std::optional<int>>& revealed, const Eigen::VectorXd& theta0,
                                 const Eigen::VectorXd& theta1) {
    const Eigen::VectorXd p0 = z * theta0;
    const Eigen::VectorXd p1 = z * theta1;
    double ll = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        const double l0 = log_phi(y(i) - p0(i));
        const double l1 = log_phi(y(i) - p1(i));
        const auto& r = revealed[static_cast<std::size_t>(i)];
        if (r) {
            ll += *r == 1 ? l1 : l0;
        } else {
            const double m = mu[static_cast<std::size_t>(i)];
            ll += log_sum_exp({std::log(m) + l1, std::log(1.0 - m) + l0});
        }
    }
    return ll;
}

}  // namespace ibet
