#include "ibet/policies.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include <nlohmann/json.hpp>

#include "ibet/error.hpp"
#include "ibet/rng.hpp"

namespace ibet {

void AutoPolicyConfig::validate(std::size_t n) const {
    if (!(gamma >= 0.0 && gamma < 1.0)) fail(ErrorCode::config, "holdout ratio must lie in [0,1)");
    if (gamma > 0.0 && gamma * static_cast<double>(n) < 1.0) fail(ErrorCode::config, "holdout ratio selects no subjects");
    if (!(alpha > 0.0 && alpha < 1.0)) fail(ErrorCode::config, "alpha must lie in (0,1)");
    if (!(bet_magnitude >= 0.0)) fail(ErrorCode::config, "bet magnitude must be nonnegative");
    if (refit_every && *refit_every == 0) fail(ErrorCode::config, "refit cadence must be positive");
}

std::size_t AutoPolicyConfig::holdout_size(std::size_t n) const {
    return static_cast<std::size_t>(std::floor(gamma * static_cast<double>(n) + 1e-9));
}

std::size_t AutoPolicyConfig::cadence(std::size_t n) const {
    if (refit_every) return *refit_every;
    return std::max<std::size_t>(1, n / 5);
}

nlohmann::json RunRecord::to_json() const {
    nlohmann::json j;
    j["test"] = test;
    j["n"] = n;
    j["holdout"] = holdout_size;
    j["reject"] = rejected;
    j["stop_step"] = stop_step;
    j["stop_time"] = stop_time();
    j["p_value"] = anytime_p;
    j["final_log_wealth"] = final_log_wealth();
    j["ordering"] = ordering;
    nlohmann::json rows = nlohmann::json::array();
    for (const RunStep& s : steps) {
        rows.push_back({{"step", s.step}, {"subject", s.subject}, {"q", s.q}, {"w", s.w}, {"a", s.a},
                        {"factor", s.factor}, {"log_wealth", s.log_wealth}, {"p", s.anytime_p}, {"forced", s.forced}});
    }
    j["steps"] = rows;
    if (!warnings.empty()) j["warnings"] = warnings;
    return j;
}

void RunRecord::write_csv(std::ostream& out) const {
    out << "step,logM,p,bet,correct\n";
    char buf[128];
    for (const RunStep& s : steps) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%d\n", s.step, s.log_wealth, s.anytime_p, s.w,
                      s.factor > 1.0 ? 1 : 0);
        out << buf;
    }
}

std::size_t select_next(const std::map<std::size_t, double>& posteriors) {
    if (posteriors.empty()) fail(ErrorCode::exhausted, "no unrevealed subjects to choose from");
    std::size_t best = posteriors.begin()->first;
    double best_conf = -1.0;
    for (const auto& [id, q] : posteriors) {
        const double conf = std::abs(q - 0.5);
        if (conf > best_conf) {
            best_conf = conf;
            best = id;
        }
    }
    return best;
}

std::size_t select_most_confident(const BettingSession& session, const std::vector<double>& score, double center) {
    std::optional<std::size_t> best;
    double best_conf = -1.0;
    for (std::size_t i = 0; i < session.size(); ++i) {
        if (session.is_revealed(i)) continue;
        const double conf = i < score.size() ? std::abs(score[i] - center) : 0.0;
        if (conf > best_conf) {
            best_conf = conf;
            best = i;
        }
    }
    if (!best) fail(ErrorCode::exhausted, "no unrevealed subjects to choose from");
    return *best;
}

double sign_bet(double q, double magnitude, const BetBounds& bounds, double center) {
    const double w = magnitude * (q > center ? 1.0 : -1.0);
    return bounds.clamp(w);
}

RunRecord run_interactive(const InteractiveRun& run, const RefitFn& refit, const ChooseFn& choose) {
    const std::size_t n = run.masked.size();
    if (run.sealed.size() != n) fail(ErrorCode::config, "sealed assignments do not match subjects");
    if (run.holdout > n) fail(ErrorCode::config, "holdout larger than the sample");
    if (run.cadence == 0) fail(ErrorCode::config, "refit cadence must be positive");

    BettingSession session(run.masked, run.support, run.alpha, run.mode, run.fixed_treated);
    RunRecord rec;
    rec.test = run.test;
    rec.n = n;
    rec.holdout_size = run.holdout;

    CounterRng rng(run.seed);
    std::vector<std::size_t> ids(n);
    std::iota(ids.begin(), ids.end(), 0);
    rng.shuffle(ids);
    for (std::size_t h = 0; h < run.holdout; ++h) session.reveal_holdout(ids[h], run.sealed[ids[h]]);
    if (session.size() == session.revealed_count()) fail(ErrorCode::config, "no subjects left to bet on");

    auto record_forced = [&](const std::vector<std::size_t>& forced) {
        for (std::size_t id : forced) {
            (void)id;
            const StepRecord& s = session.step_records()[rec.steps.size()];
            rec.steps.push_back({s.step, s.subject, s.mu, 0.0, s.a, 1.0, static_cast<double>(session.log_wealth_path()[s.step]),
                                 session.anytime_p(), true});
        }
    };
    record_forced(session.start_betting());

    std::vector<double> scores;
    bool fitted = false;
    while (session.status() == SessionStatus::betting) {
        const std::size_t t = session.steps() + 1;
        if (!fitted || t % run.cadence == 0) {
            scores = refit(session);
            fitted = true;
        }
        const BetChoice choice = choose(session, scores);
        session.commit(choice.subject, choice.w);
        const StepOutcome out = session.reveal(run.sealed[choice.subject]);
        rec.steps.push_back({out.step, out.subject, choice.q, choice.w, out.a, out.factor, out.log_wealth, out.anytime_p, false});
        record_forced(out.forced);
    }

    rec.rejected = session.status() == SessionStatus::rejected;
    rec.stop_step = session.steps();
    rec.anytime_p = session.anytime_p();
    rec.log_wealth = session.log_wealth_path();
    rec.ordering = session.ordering();
    return rec;
}

namespace {

std::vector<std::optional<int>> filtration(const BettingSession& session) {
    std::vector<std::optional<int>> r(session.size());
    for (std::size_t i = 0; i < session.size(); ++i) r[i] = session.revealed_assignment(i);
    return r;
}

}  // namespace

RunRecord run_auto_ibet(const Dataset& data, const AutoPolicyConfig& config) {
    data.validate();
    if (!data.support.is_binary()) fail(ErrorCode::unsupported, "auto i-bet needs binary assignments");
    const std::size_t n = data.size();
    config.validate(n);
    config.design.validate(data.covariate_dim());

    InteractiveRun run;
    run.masked = data.masked();
    run.sealed = data.assignments();
    run.support = data.support;
    if (data.fixed_treated) {
        run.mode = RandomizationMode::fixed_sum;
        run.fixed_treated = data.fixed_treated;
    }
    run.alpha = config.alpha;
    run.holdout = config.holdout_size(n);
    run.cadence = config.cadence(n);
    run.seed = config.seed;
    run.test = "auto-ibet";

    std::vector<std::string> warnings;
    const RefitFn refit = [&](const BettingSession& s) {
        WorkingModelFit fit = fit_em(s.subjects(), filtration(s), config.design, config.em);
        for (auto& w : fit.warnings)
            if (std::find(warnings.begin(), warnings.end(), w) == warnings.end()) warnings.push_back(std::move(w));
        return fit.q;
    };
    const ChooseFn choose = [&](const BettingSession& s, const std::vector<double>& q) {
        const std::size_t id = select_most_confident(s, q);
        return BetChoice{id, sign_bet(q[id], config.bet_magnitude, s.bounds_for(id)), q[id]};
    };
    RunRecord rec = run_interactive(run, refit, choose);
    rec.warnings = std::move(warnings);
    return rec;
}

// ---------------------------------------------------------------------------
// seq-bet

MaskedStream::MaskedStream(Dataset data) : data_(std::move(data)) {
    data_.validate();
    if (!data_.support.is_binary()) fail(ErrorCode::unsupported, "seq-bet streams carry binary assignments");
}

MaskedSubject MaskedStream::arrive() {
    if (phase_ != Phase::idle) fail(ErrorCode::protocol_violation, "previous subject has not been revealed");
    if (!has_next()) fail(ErrorCode::exhausted, "stream exhausted");
    phase_ = Phase::arrived;
    const Subject& s = data_.subjects[next_];
    return {s.id, s.y, s.x, s.mu};
}

void MaskedStream::commit(bool include, double w) {
    (void)include;
    (void)w;
    if (phase_ != Phase::arrived) fail(ErrorCode::protocol_violation, "no arrived subject to commit on");
    phase_ = Phase::committed;
}

int MaskedStream::reveal() {
    if (phase_ != Phase::committed) fail(ErrorCode::protocol_violation, "assignment requested before the bet was committed");
    phase_ = Phase::idle;
    return data_.subjects[next_++].a;
}

RunRecord run_seq_bet(MaskedStream& stream, double alpha, const SeqBetConfig& config) {
    if (config.refit_every == 0) fail(ErrorCode::config, "refit cadence must be positive");
    BettingSession session({}, AssignmentSupport::binary(), alpha);
    RunRecord rec;
    rec.test = "seq-bet";

    // Revealed history for the working model.
    std::vector<std::vector<double>> xs;
    std::vector<double> ys;
    std::vector<int> as;

    std::size_t arrivals = 0;
    while (stream.has_next() && arrivals < config.warmup) {
        MaskedSubject s = stream.arrive();
        stream.commit(false, 0.0);
        const int a = stream.reveal();
        xs.push_back(s.x);
        ys.push_back(s.y);
        as.push_back(a);
        const std::size_t id = session.size();
        session.extend({s});
        session.reveal_holdout(id, a);
        ++arrivals;
    }
    rec.holdout_size = arrivals;
    session.start_betting();

    std::optional<ArmModel> model;
    std::size_t since_fit = 0;
    auto refit = [&]() {
        model.reset();
        if (ys.empty()) return;
        const std::size_t treated = static_cast<std::size_t>(std::count(as.begin(), as.end(), 1));
        if (treated == 0 || treated == as.size()) return;
        Eigen::MatrixXd x(static_cast<Eigen::Index>(xs.size()), static_cast<Eigen::Index>(xs.front().size()));
        for (std::size_t i = 0; i < xs.size(); ++i)
            for (std::size_t j = 0; j < xs[i].size(); ++j) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = xs[i][j];
        const Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(ys.data(), static_cast<Eigen::Index>(ys.size()));
        try {
            model = fit_by_arm(x, y, as, {0, 1}, config.design);
        } catch (const Error& e) {
            rec.warnings.push_back(std::string("seq-bet refit skipped: ") + e.what());
        }
    };

    while (stream.has_next() && session.status() != SessionStatus::rejected) {
        if (!model || since_fit >= config.refit_every) {
            refit();
            since_fit = 0;
        }
        MaskedSubject s = stream.arrive();
        const bool include = config.inclusion == InclusionPolicy::include_all;
        double q = 0.5;
        if (model) {
            const double r1 = s.y - model->predict(s.x, 1);
            const double r0 = s.y - model->predict(s.x, 0);
            const double l1 = std::log(s.mu) - 0.5 * r1 * r1;
            const double l0 = std::log(1.0 - s.mu) - 0.5 * r0 * r0;
            q = 1.0 / (1.0 + std::exp(std::clamp(l0 - l1, -700.0, 700.0)));
        }
        const std::size_t id = session.size();
        session.extend({s});
        const double w = include && model ? sign_bet(q, config.bet_magnitude, session.bounds_for(id)) : 0.0;
        session.commit(id, w);
        stream.commit(include, w);
        const int a = stream.reveal();
        const StepOutcome out = session.reveal(a);
        rec.steps.push_back({out.step, id, q, w, a, out.factor, out.log_wealth, out.anytime_p, false});
        xs.push_back(std::move(s.x));
        ys.push_back(s.y);
        as.push_back(a);
        ++since_fit;
        ++arrivals;
    }

    rec.n = arrivals;
    rec.rejected = session.status() == SessionStatus::rejected;
    rec.stop_step = session.steps();
    rec.anytime_p = session.anytime_p();
    rec.log_wealth = session.log_wealth_path();
    rec.ordering = session.ordering();
    return rec;
}

}  // namespace ibet
