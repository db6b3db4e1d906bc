#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "helpers.hpp"
#include "ibet/classic.hpp"
#include "ibet/error.hpp"

using namespace ibet;

namespace {

std::vector<double> oracle_ranks(const std::vector<double>& v) {
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        double below = 0, equal = 0;
        for (double u : v) {
            if (u < v[i]) ++below;
            if (u == v[i]) ++equal;
        }
        r[i] = below + (equal + 1) / 2.0;
    }
    return r;
}

struct OracleResult {
    double p;
    bool reject;
};

// Every one of the n! relabelings of the assignment vector, enumerated by index permutation.
OracleResult oracle_exhaustive(const AssignmentStatistic& stat, const std::vector<int>& a, double alpha) {
    std::vector<std::size_t> idx(a.size());
    std::iota(idx.begin(), idx.end(), 0);
    const double w = stat(a);
    std::vector<double> all;
    do {
        std::vector<int> p(a.size());
        for (std::size_t i = 0; i < a.size(); ++i) p[i] = a[idx[i]];
        all.push_back(stat(p));
    } while (std::next_permutation(idx.begin(), idx.end()));
    double ge = 0;
    for (double v : all)
        if (v >= w - 1e-12 * (1 + std::abs(w))) ++ge;
    std::sort(all.begin(), all.end(), std::greater<>());
    const auto k = static_cast<std::size_t>(std::floor(alpha * all.size() + 1e-9));
    const bool reject = k > 0 && w > all[k - 1] + 1e-12 * (1 + std::abs(w));
    return {ge / all.size(), reject};
}

}  // namespace

TEST_CASE("average ranks match a counting oracle") {
    CounterRng rng(4);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> v;
        for (int i = 0; i < 30; ++i) v.push_back(std::floor(rng.uniform() * 8));
        CHECK(average_ranks(v) == oracle_ranks(v));
    }
    const std::vector<double> v{3, 1, 3, 2};
    CHECK(average_ranks(v) == std::vector<double>{3.5, 1, 3.5, 2});
}

TEST_CASE("exhaustive permutation test agrees with n! enumeration") {
    CounterRng rng(6);
    for (std::size_t n : {5u, 6u, 7u}) {
        for (int trial = 0; trial < 6; ++trial) {
            std::vector<double> r;
            std::vector<int> a;
            for (std::size_t i = 0; i < n; ++i) {
                a.push_back(i < n / 2 ? 1 : 0);
                r.push_back(rng.normal() + (a.back() ? 1.5 * trial / 5.0 : 0.0));
            }
            rng.shuffle(a);
            const AssignmentStatistic stat = [&](const std::vector<int>& x) { return covadj_wilcoxon(r, x); };
            for (double alpha : {0.05, 0.1, 0.25}) {
                PermutationOptions o;
                o.alpha = alpha;
                o.mode = PermutationOptions::Mode::exhaustive;
                const auto got = permutation_test(stat, a, o);
                const auto ref = oracle_exhaustive(stat, a, alpha);
                CHECK(got.exhaustive);
                CHECK(got.p_value == doctest::Approx(ref.p).epsilon(1e-12));
                CHECK(got.reject == ref.reject);
            }
        }
    }
}

TEST_CASE("sampled permutation p-values approach the exhaustive value") {
    CounterRng rng(16);
    std::vector<double> r;
    std::vector<int> a{1, 0, 1, 1, 0, 0, 1};
    for (int i = 0; i < 7; ++i) r.push_back(rng.normal() + 0.8 * a[i]);
    const AssignmentStatistic stat = [&](const std::vector<int>& x) { return covadj_wilcoxon(r, x); };
    PermutationOptions ex;
    ex.mode = PermutationOptions::Mode::exhaustive;
    const double exact = permutation_test(stat, a, ex).p_value;
    PermutationOptions s;
    s.mode = PermutationOptions::Mode::sampled;
    s.b = 5000;
    s.seed = 3;
    const auto sampled = permutation_test(stat, a, s);
    CHECK(sampled.permuted.size() == 5000);
    CHECK(sampled.permuted.front() == sampled.observed);
    CHECK(std::abs(sampled.p_value - exact) < 0.03);
}

TEST_CASE("permutation rejection rule uses the floor(alpha B) largest statistic") {
    PermutationResult r;
    r.observed = 10;
    r.permuted = {10, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9.5, 0, 0, 0, 0, 0, 0, 0, 0, 0};
    finish_permutation(r, 0.05);  // k = 1: the largest is the observed itself
    CHECK_FALSE(r.reject);
    finish_permutation(r, 0.1);  // k = 2: 9.5
    CHECK(r.reject);
    CHECK(r.p_value == doctest::Approx(1.0 / 20));
    CHECK_THROWS_AS(permutation_test([](const std::vector<int>&) { return 0.0; }, {0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 0, 1},
                                     PermutationOptions{5, 0.05, 0, PermutationOptions::Mode::sampled}),
                    Error);
}

TEST_CASE("covadj wilcoxon is the signed rank sum of residuals") {
    const std::vector<double> r{0.3, -1.2, 2.0, 0.1};
    const std::vector<int> a{1, 0, 1, 0};
    // Ranks 3, 1, 4, 2.
    CHECK(covadj_wilcoxon(r, a) == doctest::Approx(3 - 1 + 4 - 2));
    auto d = testutil::null_data(40, 2, 8);
    for (auto& s : d.subjects) s.y = s.x[0] + (s.a ? 5.0 : 0.0);
    PermutationOptions o;
    o.seed = 1;
    const auto t = covadj_wilcoxon_test(d, DesignSpec{}, o);
    CHECK(t.reject);
    CHECK(t.p_value == doctest::Approx(1.0 / 200));
}

TEST_CASE("signed rank statistic and e-stat variants") {
    CHECK(signed_rank_statistic(std::vector<double>{1.0, -2.0, 3.0}) == doctest::Approx(1 - 2 + 3));
    CHECK(signed_rank_statistic(std::vector<double>{-0.5, -0.1}) == doctest::Approx(-3));

    const std::vector<int> a{1, 0};
    const std::vector<double> y{2.0, -1.0}, r{0.5, -0.5};
    ArmPredictions yh{{0.0, -0.8}, {1.5, 0.2}};
    ArmPredictions rh{{-0.2, -0.4}, {0.6, 0.1}};
    auto e = compute_e_stats(EStatVariant::r_of_x, a, y, r, nullptr, nullptr);
    CHECK(e == std::vector<double>{0.5, 0.5});
    e = compute_e_stats(EStatVariant::r_of_x_false_a, a, y, r, &yh, nullptr);
    CHECK(e[0] == doctest::Approx(2.0 - 0.0));
    CHECK(e[1] == doctest::Approx(-(-1.0 - 0.2)));
    e = compute_e_stats(EStatVariant::r_minus_rhat_false_a, a, y, r, nullptr, &rh);
    CHECK(e[0] == doctest::Approx(0.5 - (-0.2)));
    CHECK(e[1] == doctest::Approx(-(-0.5 - 0.1)));
    e = compute_e_stats(EStatVariant::diff_in_pred_error, a, y, r, nullptr, &rh);
    CHECK(e[0] == doctest::Approx(std::abs(-0.2 - 0.5) - std::abs(0.6 - 0.5)));
    CHECK(e[1] == doctest::Approx(std::abs(0.1 + 0.5) - std::abs(-0.4 + 0.5)));
    CHECK_THROWS_AS(compute_e_stats(EStatVariant::diff_in_pred_error, a, y, r, nullptr, nullptr), Error);
    for (auto v : kAllEStatVariants) CHECK(e_stat_variant_from_string(to_string(v)) == v);
}

TEST_CASE("difference in prediction error ignores the sign of a symmetric effect") {
    CounterRng rng(30);
    auto d = testutil::null_data(60, 3, 31);
    std::vector<double> noise;
    for (auto& s : d.subjects) {
        noise.push_back(rng.normal());
        s.y = (s.a ? 1.0 : 0.0) * std::sin(3 * s.x[2]) + noise.back();
    }
    auto flipped = d;
    for (auto& s : flipped.subjects) s.y = -s.y;
    SignedRankConfig c;
    c.variant = EStatVariant::diff_in_pred_error;
    const std::vector<double> y1 = d.outcomes(), y2 = flipped.outcomes();
    const auto x = covariate_matrix(d);
    const SignedRankStatistic s1(x, Eigen::Map<const Eigen::VectorXd>(y1.data(), 60), c);
    const SignedRankStatistic s2(x, Eigen::Map<const Eigen::VectorXd>(y2.data(), 60), c);
    const auto e1 = s1.e_stats(d.assignments()), e2 = s2.e_stats(d.assignments());
    for (std::size_t i = 0; i < 60; ++i) CHECK(e1[i] == doctest::Approx(e2[i]).epsilon(1e-9));
    c.variant = EStatVariant::r_of_x;
    const SignedRankStatistic s3(x, Eigen::Map<const Eigen::VectorXd>(y1.data(), 60), c);
    const SignedRankStatistic s4(x, Eigen::Map<const Eigen::VectorXd>(y2.data(), 60), c);
    CHECK(s3(d.assignments()) == doctest::Approx(-s4(d.assignments())));
}

TEST_CASE("linear CATE statistic matches a hand-built chi-squared form") {
    auto d = testutil::null_data(80, 3, 40);
    for (auto& s : d.subjects) s.y = s.x[0] - s.x[1] + (s.a ? 1.5 * s.x[0] * s.x[1] + s.x[2] : 0.0) + 0.5 * s.y;
    const auto t = linear_cate_test(d, 0.05);

    const std::size_t n = d.size(), p = 6;
    std::vector<std::vector<double>> xp, z;
    std::vector<double> y;
    for (const auto& s : d.subjects) {
        const auto& v = s.x;
        xp.push_back({v[0], v[1], v[2], v[0] * v[1], v[0] * v[2], v[1] * v[2]});
        std::vector<double> row{1.0};
        row.insert(row.end(), xp.back().begin(), xp.back().end());
        z.push_back(row);
        y.push_back(s.y);
    }
    std::vector<std::vector<double>> g(p + 1, std::vector<double>(p + 1, 0.0));
    std::vector<double> rhs(p + 1, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t r = 0; r <= p; ++r) {
            rhs[r] += z[i][r] * y[i];
            for (std::size_t c = 0; c <= p; ++c) g[r][c] += z[i][r] * z[i][c];
        }
    const auto beta = testutil::solve_dense(g, rhs);
    std::vector<std::vector<double>> b(n, std::vector<double>(p));
    std::vector<double> mean(p, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double fit = 0;
        for (std::size_t r = 0; r <= p; ++r) fit += z[i][r] * beta[r];
        for (std::size_t j = 0; j < p; ++j) {
            b[i][j] = (d.subjects[i].a - 0.5) * (y[i] - fit) * xp[i][j];
            mean[j] += b[i][j] / n;
        }
    }
    std::vector<std::vector<double>> cov(p, std::vector<double>(p, 0.0));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < p; ++j)
            for (std::size_t k = 0; k < p; ++k) cov[j][k] += (b[i][j] - mean[j]) * (b[i][k] - mean[k]) / (n - 1);
    const auto sol = testutil::solve_dense(cov, mean);
    double s = 0;
    for (std::size_t j = 0; j < p; ++j) s += mean[j] * sol[j];
    s *= n;
    CHECK(t.statistic == doctest::Approx(s).epsilon(1e-8));
    CHECK(*t.threshold == doctest::Approx(12.591587243743977).epsilon(1e-10));
    CHECK(t.reject == (s > 12.591587243743977));

    auto bad = d;
    bad.subjects[0].mu = 0.4;
    CHECK_THROWS_AS(linear_cate_test(bad, 0.05), Error);
}

TEST_CASE("Kruskal-Wallis statistic matches the textbook formula without ties") {
    CounterRng rng(50);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> y;
        std::vector<int> a;
        for (int i = 0; i < 24; ++i) {
            a.push_back(i % 3 + 1);
            y.push_back(rng.normal() + 0.3 * a.back());
        }
        const auto rk = oracle_ranks(y);
        double sum_sq = 0;
        for (int g = 1; g <= 3; ++g) {
            double rs = 0, cnt = 0;
            for (int i = 0; i < 24; ++i)
                if (a[i] == g) {
                    rs += rk[i];
                    ++cnt;
                }
            sum_sq += rs * rs / cnt;
        }
        const double h = 12.0 / (24 * 25) * sum_sq - 3 * 25;
        CHECK(kruskal_wallis_stat(y, a) == doctest::Approx(h).epsilon(1e-10));
    }
}

TEST_CASE("Friedman statistic is a rescaled textbook Q") {
    CounterRng rng(51);
    const std::size_t nb = 15, k = 3;
    std::vector<std::vector<double>> y(nb);
    std::vector<std::vector<int>> a(nb);
    for (std::size_t b = 0; b < nb; ++b) {
        a[b] = {1, 2, 3};
        rng.shuffle(a[b]);
        for (std::size_t j = 0; j < k; ++j) y[b].push_back(rng.normal() + 0.5 * a[b][j]);
    }
    std::vector<double> rsum(k, 0.0);
    for (std::size_t b = 0; b < nb; ++b) {
        const auto rk = oracle_ranks(y[b]);
        for (std::size_t j = 0; j < k; ++j) rsum[a[b][j] - 1] += rk[j];
    }
    double q = 0;
    for (double r : rsum) q += r * r;
    q = 12.0 / (nb * k * (k + 1)) * q - 3.0 * nb * (k + 1);
    CHECK(friedman_stat(y, a) * 12.0 * nb / (k * (k + 1)) == doctest::Approx(q).epsilon(1e-10));
    auto broken = a;
    broken[0] = {1, 1, 3};
    CHECK_THROWS_AS(friedman_stat(y, broken), Error);
}
