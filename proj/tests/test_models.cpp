#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include <nlohmann/json.hpp>

#include "doctest.h"
#include "helpers.hpp"
#include "ibet/error.hpp"
#include "ibet/models.hpp"

using namespace ibet;

namespace {

// Normal equations solved by Gaussian elimination with partial pivoting.
std::vector<double> gauss_wls(const std::vector<std::vector<double>>& z, const std::vector<double>& y,
                              const std::vector<double>& w) {
    const std::size_t p = z[0].size();
    std::vector<std::vector<double>> m(p, std::vector<double>(p + 1, 0.0));
    for (std::size_t i = 0; i < z.size(); ++i)
        for (std::size_t r = 0; r < p; ++r) {
            for (std::size_t c = 0; c < p; ++c) m[r][c] += w[i] * z[i][r] * z[i][c];
            m[r][p] += w[i] * z[i][r] * y[i];
        }
    for (std::size_t col = 0; col < p; ++col) {
        std::size_t piv = col;
        for (std::size_t r = col + 1; r < p; ++r)
            if (std::abs(m[r][col]) > std::abs(m[piv][col])) piv = r;
        std::swap(m[col], m[piv]);
        for (std::size_t r = 0; r < p; ++r) {
            if (r == col) continue;
            const double f = m[r][col] / m[col][col];
            for (std::size_t c = col; c <= p; ++c) m[r][c] -= f * m[col][c];
        }
    }
    std::vector<double> b(p);
    for (std::size_t r = 0; r < p; ++r) b[r] = m[r][p] / m[r][r];
    return b;
}

double log_phi(double r) { return -0.5 * r * r - 0.5 * std::log(2 * std::numbers::pi); }

struct MixtureFixture {
    std::vector<double> x, y, mu;
    std::vector<std::optional<int>> revealed;
};

// Twelve subjects: arm 1 mean 3 + x, arm 0 mean -1 + 0.5 x; four revealed.
MixtureFixture twelve() {
    MixtureFixture f;
    const double xs[] = {-1.5, -1.1, -0.7, -0.4, -0.1, 0.0, 0.2, 0.5, 0.8, 1.0, 1.3, 1.7};
    const int as[] = {1, 0, 0, 1, 1, 0, 1, 0, 1, 0, 1, 0};
    const double noise[] = {0.3, -0.2, 0.5, -0.6, 0.1, 0.4, -0.3, 0.2, -0.1, -0.5, 0.6, 0.0};
    for (int i = 0; i < 12; ++i) {
        f.x.push_back(xs[i]);
        f.y.push_back((as[i] ? 3.0 + xs[i] : -1.0 + 0.5 * xs[i]) + noise[i]);
        f.mu.push_back(i % 3 == 0 ? 0.4 : 0.5);
        f.revealed.push_back(i < 4 ? std::optional<int>(as[i]) : std::nullopt);
    }
    return f;
}

// Observed-data log-likelihood written from scratch, theta = (a0, b0, a1, b1).
double oracle_loglik(const MixtureFixture& f, const double* t) {
    double ll = 0;
    for (std::size_t i = 0; i < f.x.size(); ++i) {
        const double m0 = t[0] + t[1] * f.x[i];
        const double m1 = t[2] + t[3] * f.x[i];
        if (f.revealed[i]) {
            ll += log_phi(f.y[i] - (*f.revealed[i] ? m1 : m0));
        } else {
            ll += std::log(f.mu[i] * std::exp(log_phi(f.y[i] - m1)) + (1 - f.mu[i]) * std::exp(log_phi(f.y[i] - m0)));
        }
    }
    return ll;
}

std::array<double, 4> grid_maximize(const MixtureFixture& f) {
    std::array<double, 4> best{0, 0, 0, 0};
    double best_ll = -1e300;
    double lo[4] = {-6, -6, -6, -6};
    double step = 0.25;
    int half = 24;
    for (int level = 0; level < 4; ++level) {
        std::array<double, 4> centre = best;
        for (int i0 = 0; i0 <= 2 * half; ++i0)
            for (int i1 = 0; i1 <= 2 * half; ++i1)
                for (int i2 = 0; i2 <= 2 * half; ++i2)
                    for (int i3 = 0; i3 <= 2 * half; ++i3) {
                        double t[4];
                        const int idx[4] = {i0, i1, i2, i3};
                        for (int k = 0; k < 4; ++k)
                            t[k] = level == 0 ? lo[k] + step * idx[k] : centre[k] + step * (idx[k] - half);
                        const double ll = oracle_loglik(f, t);
                        if (ll > best_ll) {
                            best_ll = ll;
                            best = {t[0], t[1], t[2], t[3]};
                        }
                    }
        half = 10;
        step /= 8.0;
    }
    return best;
}

}  // namespace

TEST_CASE("design basis expands linear terms and interactions") {
    auto d = testutil::null_data(40, 3, 2);
    const auto x = covariate_matrix(d);
    const auto basis = DesignBasis::build(DesignSpec::linear_with_interactions(), x);
    CHECK(basis.size() == 7);
    const auto row = basis.expand_row(d.subjects[5].x);
    const auto& xv = d.subjects[5].x;
    CHECK(row(0) == 1.0);
    CHECK(row(1) == xv[0]);
    double sum = 0;
    for (Eigen::Index k = 0; k < row.size(); ++k) sum += row(k);
    CHECK(sum == doctest::Approx(1 + xv[0] + xv[1] + xv[2] + xv[0] * xv[1] + xv[0] * xv[2] + xv[1] * xv[2]));

    DesignSpec s;
    s.columns = std::vector<std::size_t>{2};
    s.powers = {{2, 2}};
    s.hinges = {{2, 0.5}};
    const auto b2 = DesignBasis::build(s, x);
    REQUIRE(b2.size() == 4);
    const auto r2 = b2.expand_row(xv);
    CHECK(r2(2) == doctest::Approx(xv[2] * xv[2]));
    CHECK(r2(3) == doctest::Approx(std::max(0.0, xv[2] - 0.5)));
}

TEST_CASE("linearly dependent design terms are dropped with a warning") {
    auto d = testutil::null_data(30, 2, 3);
    for (auto& s : d.subjects) s.x[1] = 2.0 * s.x[0] - 1.0;
    std::vector<std::string> warnings;
    DesignSpec s;
    const auto basis = DesignBasis::build(s, covariate_matrix(d), &warnings);
    CHECK(basis.size() == 2);
    CHECK(warnings.size() == 1);
}

TEST_CASE("design json uses one-based columns and rejects bad input") {
    DesignSpec s;
    s.columns = std::vector<std::size_t>{0, 2};
    s.interactions = true;
    s.hinges = {{2, -1.5}};
    s.estimator = Estimator::huber;
    const auto j = to_json(s);
    CHECK(j["columns"] == nlohmann::json::array({1, 3}));
    const auto back = design_from_json(j);
    CHECK(to_json(back) == j);
    CHECK_THROWS_AS(design_from_json(nlohmann::json{{"bogus", 1}}), Error);
    CHECK_THROWS_AS(design_from_json(nlohmann::json{{"columns", {0}}}), Error);
    CHECK_THROWS_AS(design_from_json(nlohmann::json{{"estimator", "forest"}}), Error);
    DesignSpec bad;
    bad.columns = std::vector<std::size_t>{5};
    CHECK_THROWS_AS(bad.validate(3), Error);
}

TEST_CASE("weighted least squares matches the normal equations") {
    CounterRng rng(8);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 25, p = 4;
        Eigen::MatrixXd z(n, p);
        Eigen::VectorXd y(n), w(n);
        std::vector<std::vector<double>> zz(n, std::vector<double>(p));
        std::vector<double> yy(n), ww(n);
        for (int i = 0; i < n; ++i) {
            for (int k = 0; k < p; ++k) zz[i][k] = z(i, k) = k == 0 ? 1.0 : rng.normal();
            yy[i] = y(i) = rng.normal() * 3;
            ww[i] = w(i) = rng.uniform() + 0.1;
        }
        const auto b = weighted_least_squares(z, y, w);
        const auto ref = gauss_wls(zz, yy, ww);
        for (int k = 0; k < p; ++k) CHECK(b(k) == doctest::Approx(ref[k]).epsilon(1e-9));
    }
}

TEST_CASE("rank-deficient least squares returns the minimum-norm solution") {
    Eigen::MatrixXd z(4, 2);
    z << 1, 1, 1, 1, 1, 1, 1, 1;
    Eigen::VectorXd y(4);
    y << 1, 2, 3, 4;
    const auto b = weighted_least_squares(z, y, Eigen::VectorXd::Ones(4));
    CHECK(b(0) == doctest::Approx(1.25));
    CHECK(b(1) == doctest::Approx(1.25));
}

TEST_CASE("huber fit solves its estimating equation and resists outliers") {
    CounterRng rng(12);
    const int n = 101;
    Eigen::MatrixXd z(n, 2);
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) {
        z(i, 0) = 1;
        z(i, 1) = rng.normal();
        y(i) = 1.0 + 2.0 * z(i, 1) + 0.5 * rng.normal();
        if (i % 10 == 0) y(i) += 60.0;
    }
    const double c = 1.345;
    const auto b = huber_regression(z, y, Eigen::VectorXd::Ones(n), c, nullptr, 500, 1e-14);
    std::vector<double> absr(n);
    Eigen::VectorXd r = y - z * b;
    for (int i = 0; i < n; ++i) absr[i] = std::abs(r(i));
    std::nth_element(absr.begin(), absr.begin() + n / 2, absr.end());
    const double s = absr[n / 2] / 0.6745;
    double g0 = 0, g1 = 0;
    for (int i = 0; i < n; ++i) {
        const double u = r(i) / s;
        const double psi = std::clamp(u, -c, c);
        g0 += psi;
        g1 += psi * z(i, 1);
    }
    CHECK(std::abs(g0) < 1e-6);
    CHECK(std::abs(g1) < 1e-6);
    CHECK(b(1) == doctest::Approx(2.0).epsilon(0.1));
    const auto ls = weighted_least_squares(z, y, Eigen::VectorXd::Ones(n));
    CHECK(std::abs(ls(0) - 1.0) > std::abs(b(0) - 1.0));
}

TEST_CASE("residual fit regresses on covariates only") {
    auto d = testutil::null_data(50, 2, 5);
    for (auto& s : d.subjects) s.y = 2 + s.x[0] - 3 * s.x[1];
    DesignSpec spec;
    const auto fit = fit_residuals(d, spec);
    for (double r : fit.residuals) CHECK(std::abs(r) < 1e-9);
    CHECK(fit.predict(std::vector<double>{1.0, 1.0}) == doctest::Approx(0.0).epsilon(1e-9));
    auto tiny = testutil::null_data(3, 2, 5);
    CHECK_THROWS_AS(fit_residuals(tiny, DesignSpec::linear_with_interactions()), Error);
}

TEST_CASE("logistic regression recovers a known slope") {
    CounterRng rng(14);
    const int n = 4000;
    Eigen::MatrixXd z(n, 2);
    Eigen::VectorXd a(n);
    for (int i = 0; i < n; ++i) {
        z(i, 0) = 1;
        z(i, 1) = rng.normal();
        const double p = 1 / (1 + std::exp(-(0.5 + 1.5 * z(i, 1))));
        a(i) = rng.bernoulli(p) ? 1 : 0;
    }
    const auto b = logistic_regression(z, a);
    CHECK(b(0) == doctest::Approx(0.5).epsilon(0.3));
    CHECK(b(1) == doctest::Approx(1.5).epsilon(0.15));
}

TEST_CASE("EM reaches the maximum likelihood found by grid search") {
    const auto f = twelve();
    std::vector<MaskedSubject> subjects;
    for (std::size_t i = 0; i < f.x.size(); ++i) subjects.push_back({i, f.y[i], {f.x[i]}, f.mu[i]});
    DesignSpec spec;
    EmOptions opt;
    opt.max_iter = 5000;
    opt.tol = 1e-12;
    const auto fit = fit_em(subjects, f.revealed, spec, opt);
    const auto best = grid_maximize(f);
    const auto& t0 = fit.theta_for(0);
    const auto& t1 = fit.theta_for(1);
    CHECK(std::abs(t0(0) - best[0]) < 0.02);
    CHECK(std::abs(t0(1) - best[1]) < 0.02);
    CHECK(std::abs(t1(0) - best[2]) < 0.02);
    CHECK(std::abs(t1(1) - best[3]) < 0.02);

    // The EM objective agrees with the oracle likelihood up to a constant.
    Eigen::MatrixXd z(12, 2);
    Eigen::VectorXd y(12);
    for (int i = 0; i < 12; ++i) {
        z(i, 0) = 1;
        z(i, 1) = f.x[i];
        y(i) = f.y[i];
    }
    const double ta[4] = {0, 0, 1, 1}, tb[4] = {-1, 0.5, 3, 1};
    Eigen::Vector2d a0(0, 0), a1(1, 1), b0(-1, 0.5), b1(3, 1);
    const double lib = two_sample_log_likelihood(z, y, f.mu, f.revealed, b0, b1) -
                       two_sample_log_likelihood(z, y, f.mu, f.revealed, a0, a1);
    CHECK(lib == doctest::Approx(oracle_loglik(f, tb) - oracle_loglik(f, ta)).epsilon(1e-9));
}

TEST_CASE("EM never decreases the observed-data likelihood") {
    CounterRng rng(3);
    for (int trial = 0; trial < 10; ++trial) {
        auto d = testutil::null_data(60, 2, 100 + trial);
        for (auto& s : d.subjects) s.y += 2.0 * s.a * s.x[0];
        std::vector<std::optional<int>> rev(60);
        for (int i = 0; i < 6; ++i) rev[i] = d.subjects[i].a;
        const auto fit = fit_em(d.masked(), rev, DesignSpec::linear_with_interactions());
        for (std::size_t k = 1; k < fit.log_likelihood.size(); ++k)
            CHECK(fit.log_likelihood[k] >= fit.log_likelihood[k - 1] - 1e-8);
        for (double q : fit.q) {
            CHECK(q >= 0.0);
            CHECK(q <= 1.0);
        }
        for (int i = 0; i < 6; ++i) CHECK(fit.q[i] == static_cast<double>(*rev[i]));
    }
}

TEST_CASE("separated clusters give near-certain posteriors") {
    const auto d = testutil::separated(30, 10.0);
    std::vector<std::optional<int>> rev(30);
    rev[0] = 0;
    rev[1] = 1;
    const auto fit = fit_em(d.masked(), rev, DesignSpec::linear_with_interactions());
    for (std::size_t i = 2; i < 30; ++i) {
        if (d.subjects[i].a == 1) CHECK(fit.q[i] > 0.999);
        else CHECK(fit.q[i] < 0.001);
    }
}

TEST_CASE("multi-arm EM returns expected assignments in range") {
    CounterRng rng(9);
    std::vector<MaskedSubject> subjects;
    std::vector<std::optional<int>> rev;
    std::vector<int> truth;
    for (std::size_t i = 0; i < 45; ++i) {
        const int a = static_cast<int>(i % 3) + 1;
        truth.push_back(a);
        subjects.push_back({i, 6.0 * (a - 2) + 0.3 * rng.normal(), {rng.normal()}, 2.0});
        rev.push_back(i < 6 ? std::optional<int>(a) : std::nullopt);
    }
    DesignSpec spec;
    const auto fit = fit_em_multiarm(subjects, rev, 3, spec);
    for (std::size_t i = 6; i < 45; ++i) {
        CHECK(fit.q[i] >= 1.0);
        CHECK(fit.q[i] <= 3.0);
        CHECK(std::abs(fit.q[i] - truth[i]) < 0.05);
    }
}
