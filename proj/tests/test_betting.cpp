#include <cmath>

#include <nlohmann/json.hpp>

#include "doctest.h"
#include "helpers.hpp"
#include "ibet/betting.hpp"
#include "ibet/error.hpp"

using namespace ibet;

namespace {

std::vector<MaskedSubject> masked(std::size_t n, double mu = 0.5) {
    std::vector<MaskedSubject> v;
    for (std::size_t i = 0; i < n; ++i) v.push_back({i, static_cast<double>(i), {0.0}, mu});
    return v;
}

ErrorCode code_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected an ibet::Error");
    return ErrorCode::not_found;
}

}  // namespace

TEST_CASE("binary bet bounds and factors") {
    const auto b = bet_bounds(0.5, AssignmentSupport::binary());
    CHECK(b.lower == -1.0);
    CHECK(b.upper == 1.0);
    const auto c = bet_bounds(0.2, AssignmentSupport::binary());
    CHECK(c.lower == doctest::Approx(-0.25));
    CHECK(c.upper == 1.0);
    CHECK(bet_factor(0.4, 1, 0.5) == doctest::Approx(1.4));
    CHECK(bet_factor(0.4, 0, 0.5) == doctest::Approx(0.6));
    CHECK(bet_factor(0.5, 1, 0.25) == doctest::Approx(2.5));
    CHECK(bet_factor(1.0, 0, 0.5) == 0.0);
    CHECK(code_of([] { bet_factor(1.01, 1, 0.5); }) == ErrorCode::bet_range);
    CHECK(code_of([] { bet_factor(-0.3, 1, 0.2); }) == ErrorCode::bet_range);
    CHECK(code_of([] { bet_bounds(1.0, AssignmentSupport::binary()); }) == ErrorCode::invalid_randomization);
}

TEST_CASE("three-level bet bounds") {
    const auto b = bet_bounds(2.0, AssignmentSupport::levels(3));
    CHECK(b.lower == doctest::Approx(-2.0));
    CHECK(b.upper == doctest::Approx(2.0));
    CHECK(bet_factor(0.8, 3, 2.0, AssignmentSupport::levels(3)) == doctest::Approx(1.4));
    CHECK(bet_factor(0.8, 2, 2.0, AssignmentSupport::levels(3)) == doctest::Approx(1.0));
    CHECK(bet_factor(0.8, 1, 2.0, AssignmentSupport::levels(3)) == doctest::Approx(0.6));
}

TEST_CASE("every legal bet is fair under the null") {
    CounterRng rng(21);
    for (int trial = 0; trial < 2000; ++trial) {
        const double mu = 0.01 + 0.98 * rng.uniform();
        const auto b = bet_bounds(mu, AssignmentSupport::binary());
        const double w = b.lower + (b.upper - b.lower) * rng.uniform();
        const double mean = mu * bet_factor(w, 1, mu) + (1 - mu) * bet_factor(w, 0, mu);
        CHECK(mean == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(bet_factor(w, 0, mu) >= -1e-12);
        CHECK(bet_factor(w, 1, mu) >= -1e-12);
    }
    const auto s3 = AssignmentSupport::levels(3);
    for (int trial = 0; trial < 500; ++trial) {
        // Any law on {1,2,3} with mean 2: P(1) = P(3) = p.
        const double p = 0.5 * rng.uniform();
        const auto b = bet_bounds(2.0, s3);
        const double w = b.lower + (b.upper - b.lower) * rng.uniform();
        const double mean = p * bet_factor(w, 1, 2.0, s3) + (1 - 2 * p) * bet_factor(w, 2, 2.0, s3) + p * bet_factor(w, 3, 2.0, s3);
        CHECK(mean == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("nine correct 0.4 bets reject at alpha 0.05, eight do not") {
    BettingSession s(masked(20), AssignmentSupport::binary(), 0.05);
    s.start_betting();
    long double expected = 1.0L;
    for (std::size_t k = 1; k <= 9; ++k) {
        s.commit(k - 1, 0.4);
        const auto out = s.reveal(1);
        expected *= 1.4L;
        CHECK(static_cast<double>(std::exp(s.log_wealth())) == doctest::Approx(static_cast<double>(expected)).epsilon(1e-14));
        if (k == 8) {
            CHECK_FALSE(out.rejected);
            CHECK(s.status() == SessionStatus::betting);
            CHECK(s.wealth() == doctest::Approx(14.75789056));
            CHECK(s.wealth() < 20.0);
        }
        if (k == 9) {
            CHECK(out.rejected);
            CHECK(s.status() == SessionStatus::rejected);
            CHECK(s.wealth() == doctest::Approx(20.661046784));
        }
    }
    CHECK(s.anytime_p() == doctest::Approx(1.0 / 20.661046784));
    CHECK(code_of([&] { s.commit(10, 0.4); }) == ErrorCode::already_rejected);
}

TEST_CASE("wealth of 15 times a 1.4 factor reaches 21 and rejects") {
    BettingSession s(masked(10), AssignmentSupport::binary(), 0.05);
    s.start_betting();
    for (std::size_t i = 0; i < 3; ++i) {
        s.commit(i, 1.0);
        s.reveal(1);
    }
    s.commit(3, 0.875);
    s.reveal(1);
    CHECK(s.wealth() == doctest::Approx(15.0));
    CHECK(s.status() == SessionStatus::betting);
    s.commit(4, 0.4);
    const auto out = s.reveal(1);
    CHECK(s.wealth() == doctest::Approx(21.0));
    CHECK(out.rejected);
}

TEST_CASE("anytime p-value is one over the running maximum") {
    BettingSession s(masked(6), AssignmentSupport::binary(), 0.05);
    s.start_betting();
    s.commit(0, 0.5);
    s.reveal(1);  // 1.5
    CHECK(s.anytime_p() == doctest::Approx(1 / 1.5));
    s.commit(1, 0.5);
    s.reveal(0);  // 0.75
    CHECK(s.anytime_p() == doctest::Approx(1 / 1.5));
    s.commit(2, -0.5);
    s.reveal(0);  // 1.125
    CHECK(s.anytime_p() == doctest::Approx(1 / 1.5));
}

TEST_CASE("wealth survives extreme magnitudes") {
    Wealth w;
    for (int i = 0; i < 4000; ++i) w.multiply(2.0L);
    CHECK(static_cast<double>(w.log()) == doctest::Approx(4000 * std::log(2.0)));
    CHECK(w.at_least(1e300L));
    Wealth z;
    z.multiply(0.0L);
    CHECK(z.is_zero());
    CHECK(std::isinf(static_cast<double>(z.log())));
}

TEST_CASE("fixed-sum conditional treatment probability") {
    CHECK(fixed_sum_mu(2, 1, 4, 1) == doctest::Approx(1.0 / 3.0));
    CHECK(fixed_sum_mu(2, 2, 4, 2) == 0.0);
    CHECK(fixed_sum_mu(2, 0, 4, 2) == 1.0);
    CHECK(fixed_sum_mu(5, 0, 10, 0) == 0.5);
    CHECK(code_of([] { fixed_sum_mu(2, 0, 4, 4); }) == ErrorCode::exhausted);
}

TEST_CASE("fixed-sum session uses conditional mu and auto-reveals forced subjects") {
    BettingSession s(masked(4), AssignmentSupport::binary(), 0.05, RandomizationMode::fixed_sum, 2);
    s.reveal_holdout(0, 1);
    s.start_betting();
    CHECK(s.current_mu(1) == doctest::Approx(1.0 / 3.0));
    s.commit(1, 0.5);
    const auto out = s.reveal(1);
    // mu = 1/3 so factor = 1 + 0.5 * (3 - 1) = 2.
    CHECK(out.factor == doctest::Approx(2.0));
    REQUIRE(out.forced.size() == 2);
    CHECK(s.status() == SessionStatus::exhausted);
    CHECK(s.steps() == 3);
    for (const auto& r : s.step_records())
        if (r.forced) {
            CHECK(r.a == 0);
            CHECK(r.factor == 1.0);
        }
    CHECK(s.wealth() == doctest::Approx(2.0));
}

TEST_CASE("fixed-sum session rejects reveals that break the treated total") {
    BettingSession s(masked(4), AssignmentSupport::binary(), 0.05, RandomizationMode::fixed_sum, 1);
    s.start_betting();
    s.commit(0, 0.1);
    s.reveal(1);
    // Remaining three are forced to control.
    CHECK(s.status() == SessionStatus::exhausted);
    BettingSession t(masked(4), AssignmentSupport::binary(), 0.05, RandomizationMode::fixed_sum, 1);
    t.start_betting();
    t.commit(0, 0.1);
    t.reveal(0);
    t.commit(1, 0.1);
    t.reveal(0);
    // Only subjects 2 and 3 remain; one of them is treated.
    CHECK(t.current_mu(2) == doctest::Approx(0.5));
}

TEST_CASE("protocol ordering is enforced") {
    BettingSession s(masked(5), AssignmentSupport::binary(), 0.05);
    CHECK(code_of([&] { s.commit(0, 0.1); }) == ErrorCode::protocol_violation);
    s.reveal_holdout(4, 0);
    CHECK(code_of([&] { s.reveal_holdout(4, 0); }) == ErrorCode::already_revealed);
    s.start_betting();
    CHECK(code_of([&] { s.reveal_holdout(3, 0); }) == ErrorCode::protocol_violation);
    CHECK(code_of([&] { s.reveal(1); }) == ErrorCode::protocol_violation);
    CHECK(code_of([&] { s.commit(4, 0.1); }) == ErrorCode::already_revealed);
    CHECK(code_of([&] { s.commit(0, 1.5); }) == ErrorCode::bet_range);
    CHECK(code_of([&] { s.commit(99, 0.1); }) == ErrorCode::not_found);
    s.commit(0, 0.1);
    CHECK(s.status() == SessionStatus::bet_committed);
    CHECK(code_of([&] { s.commit(1, 0.1); }) == ErrorCode::protocol_violation);
    CHECK(code_of([&] { s.reveal(2); }) == ErrorCode::protocol_violation);
    s.reveal(0);
    for (std::size_t i = 1; i < 4; ++i) {
        s.commit(i, 0.0);
        s.reveal(0);
    }
    CHECK(s.status() == SessionStatus::exhausted);
    CHECK(code_of([&] { s.commit(1, 0.1); }) == ErrorCode::exhausted);
}

TEST_CASE("boundary bets are legal and a lost all-in absorbs wealth at zero") {
    BettingSession s(masked(4, 0.2), AssignmentSupport::binary(), 0.05);
    s.start_betting();
    s.commit(0, -0.25);
    s.reveal(1);
    CHECK(s.wealth() == 0.0);
    s.commit(1, 0.5);
    s.reveal(1);
    CHECK(s.wealth() == 0.0);
    CHECK(s.anytime_p() == 1.0);
}

TEST_CASE("optional continuation keeps the wealth and extends the horizon") {
    BettingSession s(masked(2), AssignmentSupport::binary(), 0.05);
    s.start_betting();
    s.commit(0, 0.5);
    s.reveal(1);
    s.commit(1, 0.5);
    s.reveal(1);
    CHECK(s.status() == SessionStatus::exhausted);
    const double before = s.wealth();
    auto more = masked(4);
    const auto forced = s.extend({more[2], more[3]});
    CHECK(forced.empty());
    CHECK(s.size() == 4);
    CHECK(s.status() == SessionStatus::betting);
    CHECK(s.wealth() == doctest::Approx(before));
    s.commit(2, 0.5);
    s.reveal(1);
    CHECK(s.wealth() == doctest::Approx(before * 1.5));
    CHECK(s.extensions() == 1);
}

TEST_CASE("fixed-sum extensions form their own stratum") {
    BettingSession s(masked(2), AssignmentSupport::binary(), 0.05, RandomizationMode::fixed_sum, 1);
    s.start_betting();
    s.commit(0, 0.2);
    s.reveal(0);  // subject 1 forced treated
    CHECK(s.status() == SessionStatus::exhausted);
    auto more = masked(5);
    s.extend({more[2], more[3], more[4]}, 1);
    CHECK(s.current_mu(2) == doctest::Approx(1.0 / 3.0));
    CHECK(code_of([&] { s.extend({more[2]}, 5); }) == ErrorCode::config);
}

TEST_CASE("sessions replay from their json document") {
    auto subjects = masked(12);
    BettingSession s(subjects, AssignmentSupport::binary(), 0.05);
    s.reveal_holdout(11, 1);
    s.start_betting();
    CounterRng rng(2);
    for (std::size_t i = 0; i < 6; ++i) {
        s.commit(i, 0.9 * rng.uniform() - 0.45);
        s.reveal(rng.bernoulli(0.5) ? 1 : 0);
    }
    s.commit(6, 0.3);
    const auto doc = s.to_json();
    const auto back = BettingSession::from_json(doc, subjects);
    CHECK(back.log_wealth_path() == s.log_wealth_path());
    CHECK(back.ordering() == s.ordering());
    REQUIRE(back.pending().has_value());
    CHECK(back.pending()->subject == 6);
    CHECK(back.to_json() == doc);

    auto other = subjects;
    other[3].y += 1.0;
    CHECK(code_of([&] { BettingSession::from_json(doc, other); }) == ErrorCode::schema);

    auto tampered = doc;
    tampered["log_wealth"][3] = "0.123";
    CHECK(code_of([&] { BettingSession::from_json(tampered, subjects); }) == ErrorCode::schema);
    auto flipped = doc;
    flipped["bets"][0]["a"] = 1 - flipped["bets"][0]["a"].get<int>();
    CHECK(code_of([&] { BettingSession::from_json(flipped, subjects); }) == ErrorCode::schema);
    auto audit_flip = doc;
    for (auto& e : audit_flip["audit"])
        if (e["kind"] == "reveal") {
            e["a"] = 1 - e["a"].get<int>();
            break;
        }
    CHECK(code_of([&] { BettingSession::from_json(audit_flip, subjects); }) == ErrorCode::schema);
}

TEST_CASE("fixed-sum replay reproduces forced reveals and treated totals") {
    auto subjects = masked(6);
    BettingSession s(subjects, AssignmentSupport::binary(), 0.05, RandomizationMode::fixed_sum, 3);
    s.start_betting();
    const int seq[] = {1, 1, 1};
    for (std::size_t i = 0; i < 3; ++i) {
        s.commit(i, 0.3);
        s.reveal(seq[i]);
    }
    CHECK(s.status() == SessionStatus::exhausted);
    int treated = 0;
    for (std::size_t i = 0; i < 6; ++i) treated += *s.revealed_assignment(i);
    CHECK(treated == 3);
    const auto back = BettingSession::from_json(s.to_json(), subjects);
    CHECK(back.log_wealth_path() == s.log_wealth_path());
    CHECK(back.steps() == 6);
}

TEST_CASE("value-style wrappers mirror the protocol") {
    BettingSession s(masked(3), AssignmentSupport::binary(), 0.05);
    s.start_betting();
    s.commit(0, 0.4);
    const Bet bet = *s.pending();
    auto next = update_wealth(s, bet, 1);
    CHECK(next.wealth() == doctest::Approx(1.4));
    CHECK(anytime_p(next) == doctest::Approx(1 / 1.4));
    CHECK(code_of([&] { update_wealth(s, Bet{1, 0.4, 1}, 1); }) == ErrorCode::protocol_violation);
    CHECK(format_log_wealth(-std::numeric_limits<long double>::infinity()) == "-inf");
    CHECK(parse_log_wealth(format_log_wealth(0.25L)) == 0.25L);
}
