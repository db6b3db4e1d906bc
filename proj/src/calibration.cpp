#include "ibet/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ibet/error.hpp"

namespace ibet {

nlohmann::json CalibrationCheck::to_json() const {
    return {{"name", name}, {"pass", pass}, {"observed", observed}, {"bound", bound}, {"reps", reps}, {"detail", detail}};
}

double null_rate_bound(double alpha, std::size_t reps) {
    if (reps == 0) fail(ErrorCode::config, "reps must be positive");
    return alpha + 3.0 * std::sqrt(alpha * (1.0 - alpha) / static_cast<double>(reps));
}

std::pair<std::size_t, double> AdaptiveSignPolicy::next(const BettingSession& s) const {
    double sum1 = 0.0, sum0 = 0.0, sum_all = 0.0;
    std::size_t n1 = 0, n0 = 0;
    std::optional<int> last;
    for (const StepRecord& r : s.step_records()) last = r.a;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const auto a = s.revealed_assignment(i);
        if (!a) continue;
        const double y = s.subject(i).y;
        sum_all += y;
        if (*a == 1) {
            sum1 += y;
            ++n1;
        } else {
            sum0 += y;
            ++n0;
        }
    }
    std::size_t best = std::numeric_limits<std::size_t>::max();
    double best_abs = -1.0;
    for (std::size_t id : s.unrevealed()) {
        const double v = std::abs(s.subject(id).y);
        if (v > best_abs) {
            best_abs = v;
            best = id;
        }
    }
    if (best == std::numeric_limits<std::size_t>::max()) fail(ErrorCode::exhausted, "no unrevealed subject");
    double sign = 1.0;
    if (n1 > 0 && n0 > 0) {
        const double diff = sum1 / static_cast<double>(n1) - sum0 / static_cast<double>(n0);
        const double center = sum_all / static_cast<double>(n1 + n0);
        sign = ((s.subject(best).y - center) * diff >= 0.0) ? 1.0 : -1.0;
    } else if (last) {
        sign = *last == 1 ? 1.0 : -1.0;
    }
    return {best, s.bounds_for(best).clamp(sign * magnitude)};
}

std::vector<MaskedSubject> null_subjects(std::size_t n, CounterRng& rng, std::vector<int>& a, bool vary_mu) {
    static constexpr double kMus[] = {0.3, 0.5, 0.7};
    std::vector<MaskedSubject> out(n);
    a.assign(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        out[i].id = i;
        out[i].y = rng.normal();
        out[i].x = {rng.normal()};
        out[i].mu = vary_mu ? kMus[rng.below(3)] : 0.5;
        a[i] = rng.bernoulli(out[i].mu) ? 1 : 0;
    }
    return out;
}

namespace {

/// Bets until rejection or exhaustion; returns the wealth path M_0..M_t.
std::vector<double> play(BettingSession& session, const std::vector<int>& sealed, const AdaptiveSignPolicy& policy,
                         std::size_t max_steps) {
    std::vector<double> path{session.wealth()};
    while (session.status() == SessionStatus::betting && path.size() <= max_steps) {
        const auto [id, w] = policy.next(session);
        session.commit(id, w);
        session.reveal(sealed[id]);
        path.push_back(session.wealth());
    }
    return path;
}

}  // namespace

CalibrationCheck check_martingale(std::size_t reps, std::size_t horizon, std::uint64_t seed, std::size_t jobs) {
    if (reps < 2) fail(ErrorCode::config, "martingale check needs at least two replications");
    const CounterRng master(seed);
    // A vanishing alpha keeps every path running to the horizon.
    std::vector<std::vector<double>> paths(reps);
    parallel_for(reps, jobs, [&](std::size_t r) {
        CounterRng rng = master.split(r);
        std::vector<int> sealed;
        auto subjects = null_subjects(horizon, rng, sealed);
        BettingSession s(std::move(subjects), AssignmentSupport::binary(), 1e-300);
        s.start_betting();
        paths[r] = play(s, sealed, AdaptiveSignPolicy{0.5}, horizon);
    });
    CalibrationCheck c;
    c.name = "martingale-mean";
    c.reps = reps;
    c.pass = true;
    double worst = 0.0;
    nlohmann::json per_step = nlohmann::json::array();
    for (std::size_t t = 1; t <= horizon; ++t) {
        double sum = 0.0, sum2 = 0.0;
        for (const auto& p : paths) {
            const double m = p.at(t);
            sum += m;
            sum2 += m * m;
        }
        const double mean = sum / static_cast<double>(reps);
        const double var = std::max(0.0, (sum2 - static_cast<double>(reps) * mean * mean) / static_cast<double>(reps - 1));
        const double se = std::sqrt(var / static_cast<double>(reps));
        const double z = se > 0.0 ? std::abs(mean - 1.0) / se : (mean == 1.0 ? 0.0 : std::numeric_limits<double>::infinity());
        worst = std::max(worst, z);
        if (z > 3.0) c.pass = false;
        per_step.push_back({{"t", t}, {"mean", mean}, {"se", se}});
    }
    c.observed = worst;
    c.bound = 3.0;
    c.detail = {{"horizon", horizon}, {"max_abs_z", worst}, {"steps", per_step}};
    return c;
}

CalibrationCheck check_ville(std::size_t reps, std::size_t n, double alpha, std::uint64_t seed, std::size_t jobs) {
    const CounterRng master(seed);
    std::vector<char> crossed(reps, 0);
    parallel_for(reps, jobs, [&](std::size_t r) {
        CounterRng rng = master.split(r);
        std::vector<int> sealed;
        auto subjects = null_subjects(n, rng, sealed);
        BettingSession s(std::move(subjects), AssignmentSupport::binary(), alpha);
        s.start_betting();
        play(s, sealed, AdaptiveSignPolicy{0.4}, n);
        crossed[r] = s.status() == SessionStatus::rejected;
    });
    CalibrationCheck c;
    c.name = "ville-crossing";
    c.reps = reps;
    c.observed = static_cast<double>(std::count(crossed.begin(), crossed.end(), 1)) / static_cast<double>(reps);
    c.bound = null_rate_bound(alpha, reps);
    c.pass = c.observed <= c.bound;
    c.detail = {{"n", n}, {"threshold", 1.0 / alpha}};
    return c;
}

CalibrationCheck check_optional_continuation(std::size_t reps, std::size_t n, std::size_t extra, double alpha,
                                             std::uint64_t seed, std::size_t jobs) {
    const CounterRng master(seed);
    std::vector<char> rejected(reps, 0), extended(reps, 0);
    parallel_for(reps, jobs, [&](std::size_t r) {
        CounterRng rng = master.split(r);
        std::vector<int> sealed;
        auto subjects = null_subjects(n, rng, sealed);
        BettingSession s(std::move(subjects), AssignmentSupport::binary(), alpha);
        s.start_betting();
        const AdaptiveSignPolicy policy{0.15};
        play(s, sealed, policy, n);
        const double m = s.wealth();
        if (s.status() == SessionStatus::exhausted && m > 1.0 && m < 1.0 / alpha) {
            extended[r] = 1;
            std::vector<int> more_a;
            auto more = null_subjects(extra, rng, more_a);
            s.extend(std::move(more));
            sealed.insert(sealed.end(), more_a.begin(), more_a.end());
            play(s, sealed, policy, n + extra);
        }
        rejected[r] = s.status() == SessionStatus::rejected;
    });
    CalibrationCheck c;
    c.name = "optional-continuation";
    c.reps = reps;
    c.observed = static_cast<double>(std::count(rejected.begin(), rejected.end(), 1)) / static_cast<double>(reps);
    c.bound = null_rate_bound(alpha, reps);
    c.pass = c.observed <= c.bound;
    c.detail = {{"n", n},
                {"extra", extra},
                {"extended", std::count(extended.begin(), extended.end(), 1)}};
    return c;
}

std::vector<TestSpec> default_null_roster() {
    std::vector<TestSpec> roster;
    for (const char* name : {"auto-ibet", "seq-bet", "i-friedman", "i-kw", "covadj", "linear-cate"}) {
        TestSpec t = test_spec_from_json(nlohmann::json{{"test", name}});
        t.b = 200;
        roster.push_back(std::move(t));
    }
    return roster;
}

std::vector<CalibrationCheck> check_type_one(const std::vector<TestSpec>& roster, std::size_t n, std::size_t reps, double alpha,
                                             std::uint64_t seed, std::size_t jobs) {
    SimulationConfig config;
    config.n = n;
    config.n0 = std::min<std::size_t>(30, n / 4);
    config.effect = EffectTag::linear;
    config.s_delta = {0.0};
    config.tests = roster;
    config.reps = reps;
    config.alpha = alpha;
    config.seed = seed;
    PowerOptions options;
    options.jobs = jobs;
    const PowerTable table = estimate_power(config, options);
    std::vector<CalibrationCheck> out;
    for (const PowerRow& row : table.rows) {
        CalibrationCheck c;
        c.name = "type-one:" + row.test;
        c.reps = row.reps;
        c.observed = row.power;
        c.bound = row.reps > 0 ? null_rate_bound(alpha, row.reps) : 0.0;
        c.pass = row.reps > 0 && row.power <= c.bound && row.excluded * 10 <= reps;
        c.detail = {{"n", n}, {"excluded", row.excluded}};
        if (row.mean_stop_time) c.detail["mean_stop_time"] = *row.mean_stop_time;
        out.push_back(std::move(c));
    }
    return out;
}

bool CalibrationReport::all_pass() const {
    return std::all_of(checks.begin(), checks.end(), [](const CalibrationCheck& c) { return c.pass; });
}

nlohmann::json CalibrationReport::to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& c : checks) arr.push_back(c.to_json());
    return {{"pass", all_pass()}, {"checks", arr}};
}

CalibrationReport run_calibration(const CalibrationOptions& o) {
    if (o.reps == 0) fail(ErrorCode::config, "reps must be positive");
    if (!(o.alpha > 0.0 && o.alpha < 1.0)) fail(ErrorCode::config, "alpha must lie in (0,1)");
    CalibrationReport report;
    auto add = [&](CalibrationCheck c) {
        if (o.progress) o.progress(c);
        report.checks.push_back(std::move(c));
    };
    const CounterRng master(o.seed);
    add(check_martingale(o.martingale_reps, 20, master.split(1).next_u64(), o.jobs));
    add(check_ville(o.ville_reps, 200, o.alpha, master.split(2).next_u64(), o.jobs));
    add(check_optional_continuation(o.continuation_reps, 100, 100, o.alpha, master.split(3).next_u64(), o.jobs));
    for (auto& c : check_type_one(default_null_roster(), o.n, o.reps, o.alpha, master.split(4).next_u64(), o.jobs)) add(std::move(c));
    return report;
}

}  // namespace ibet
