#include "ibet/simulation.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <mutex>
#include <numeric>
#include <ostream>
#include <set>
#include <thread>

#include "ibet/error.hpp"

namespace ibet {

Eigen::MatrixXd generate_population(std::size_t n, std::size_t n0, CounterRng& rng) {
    if (n % 2 != 0) fail(ErrorCode::config, "population size must be even");
    if (n0 > n / 2) fail(ErrorCode::config, "n0 must not exceed n/2");
    const std::size_t off = n / 2 - n0;
    std::vector<std::pair<int, int>> cells;
    cells.reserve(n);
    cells.insert(cells.end(), n0, {1, 1});
    cells.insert(cells.end(), off, {1, 0});
    cells.insert(cells.end(), off, {0, 1});
    cells.insert(cells.end(), n0, {0, 0});
    rng.shuffle(cells);
    Eigen::MatrixXd x(static_cast<Eigen::Index>(n), 3);
    for (std::size_t i = 0; i < n; ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        x(r, 0) = cells[i].first;
        x(r, 1) = cells[i].second;
        x(r, 2) = rng.normal();
    }
    return x;
}

namespace {

template <class E>
struct TagName {
    E tag;
    const char* name;
};

constexpr TagName<EffectTag> kEffects[] = {
    {EffectTag::none, "none"},
    {EffectTag::linear, "linear"},
    {EffectTag::dense_weak, "dense-weak"},
    {EffectTag::strong_one, "strong-one"},
    {EffectTag::quadratic, "quadratic"},
    {EffectTag::strong_weak, "strong-weak"},
    {EffectTag::sparse_both, "sparse-both"},
    {EffectTag::weak_both, "weak-both"},
};
constexpr TagName<ControlTag> kControls[] = {
    {ControlTag::bell, "bell"}, {ControlTag::skewed, "skewed"}, {ControlTag::zero, "zero"}};
constexpr TagName<NoiseTag> kNoises[] = {
    {NoiseTag::gaussian, "gaussian"}, {NoiseTag::cauchy, "cauchy"}, {NoiseTag::none, "none"}};

template <class E, std::size_t N>
std::string name_of(const TagName<E> (&table)[N], E tag) {
    for (const auto& t : table)
        if (t.tag == tag) return t.name;
    return "?";
}

template <class E, std::size_t N>
E parse_tag(const TagName<E> (&table)[N], const std::string& s, const char* what) {
    for (const auto& t : table)
        if (s == t.name) return t.tag;
    std::string known;
    for (const auto& t : table) known += (known.empty() ? "" : ", ") + std::string(t.name);
    fail(ErrorCode::config, "unknown " + std::string(what) + " '" + s + "' (known: " + known + ")");
}

double noise_draw(NoiseTag noise, CounterRng& rng) {
    switch (noise) {
        case NoiseTag::gaussian: return rng.normal();
        case NoiseTag::cauchy: return rng.cauchy();
        case NoiseTag::none: return 0.0;
    }
    return 0.0;
}

}  // namespace

std::string to_string(EffectTag t) { return name_of(kEffects, t); }
std::string to_string(ControlTag t) { return name_of(kControls, t); }
std::string to_string(NoiseTag t) { return name_of(kNoises, t); }
EffectTag effect_from_string(const std::string& s) { return parse_tag(kEffects, s, "effect"); }
ControlTag control_from_string(const std::string& s) { return parse_tag(kControls, s, "control"); }
NoiseTag noise_from_string(const std::string& s) { return parse_tag(kNoises, s, "noise"); }

double effect_value(EffectTag tag, double s, const double* x) {
    const double x1 = x[0], x2 = x[1], x3 = x[2];
    switch (tag) {
        case EffectTag::none: return 0.0;
        case EffectTag::linear: return s * (x1 * x2 + x3);
        case EffectTag::dense_weak: return s * (1.0 - std::abs(std::sin(3.0 * x3)));
        case EffectTag::strong_one: return x3 > 1.5 ? s * 2.0 * std::exp(x3) : 0.0;
        case EffectTag::quadratic: return s * 0.6 * (x3 * x3 - 1.0);
        case EffectTag::strong_weak: return s * ((x3 > 2.0 ? std::exp(x3) : 0.0) - x1 / 2.0);
        case EffectTag::sparse_both: return std::abs(x3) > 1.0 ? s * x3 * x3 * x3 : 0.0;
        case EffectTag::weak_both: return s * 0.4 * std::sin(3.0 * x3);
    }
    return 0.0;
}

double control_value(ControlTag tag, const double* x) {
    switch (tag) {
        case ControlTag::bell: return 5.0 * (x[0] + x[1] + x[2]);
        case ControlTag::skewed: return x[2] < -2.0 ? 2.0 * std::exp(-2.0 * x[2]) : 0.0;
        case ControlTag::zero: return 0.0;
    }
    return 0.0;
}

namespace {

std::array<double, 3> row3(const Eigen::MatrixXd& x, std::size_t i) {
    const auto r = static_cast<Eigen::Index>(i);
    return {x(r, 0), x(r, 1), x(r, 2)};
}

std::vector<double> row_vec(const Eigen::MatrixXd& x, std::size_t i) {
    const auto r = static_cast<Eigen::Index>(i);
    return {x(r, 0), x(r, 1), x(r, 2)};
}

}  // namespace

std::vector<double> generate_outcomes(const Eigen::MatrixXd& x, const std::vector<int>& a, EffectTag effect, double s_delta,
                                      ControlTag control, NoiseTag noise, CounterRng& rng) {
    if (x.cols() != 3) fail(ErrorCode::config, "outcome generators expect three covariates");
    if (static_cast<std::size_t>(x.rows()) != a.size()) fail(ErrorCode::config, "assignment count differs from population size");
    std::vector<double> y(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        const auto xi = row3(x, i);
        y[i] = effect_value(effect, s_delta, xi.data()) * a[i] + control_value(control, xi.data()) + noise_draw(noise, rng);
    }
    return y;
}

std::vector<double> generate_outcomes_levels(const Eigen::MatrixXd& x, const std::vector<int>& a, int k, EffectTag effect,
                                             double s_delta, ControlTag control, NoiseTag noise, CounterRng& rng) {
    if (x.cols() != 3) fail(ErrorCode::config, "outcome generators expect three covariates");
    if (k < 2) fail(ErrorCode::config, "need at least two levels");
    std::vector<double> y(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        const auto xi = row3(x, i);
        const double dose = static_cast<double>(a[i] - 1) / static_cast<double>(k - 1);
        y[i] = effect_value(effect, s_delta, xi.data()) * dose + control_value(control, xi.data()) + noise_draw(noise, rng);
    }
    return y;
}

// ---------------------------------------------------------------------------
// Test roster

DesignKind TestSpec::design_kind() const {
    if (kind == "i-friedman") return DesignKind::blocks;
    if (kind == "i-kw") return DesignKind::three_arm;
    if (kind == "paired-ibet") return DesignKind::paired;
    return DesignKind::two_sample;
}

bool TestSpec::is_betting() const {
    return kind == "auto-ibet" || kind == "seq-bet" || kind == "i-friedman" || kind == "i-kw" || kind == "paired-ibet";
}

namespace {

const std::set<std::string> kKinds{"auto-ibet", "seq-bet", "covadj", "linear-cate", "signed-rank", "i-friedman", "i-kw", "paired-ibet"};

}  // namespace

TestSpec test_spec_from_json(const nlohmann::json& j) {
    if (j.is_string()) return test_spec_from_json(nlohmann::json{{"test", j}});
    if (!j.is_object()) fail(ErrorCode::schema, "test spec must be an object or a name");
    static const std::set<std::string> allowed{"test",        "label",      "design",          "gamma",      "bet_magnitude",
                                               "refit_every", "em_max_iter", "estimate_sigma", "warmup",     "b",
                                               "variant",     "arm_design", "residual_design", "cate_design"};
    for (const auto& [k, v] : j.items())
        if (!allowed.count(k)) fail(ErrorCode::schema, "unknown test field '" + k + "'");
    TestSpec s;
    if (!j.contains("test")) fail(ErrorCode::schema, "test spec needs 'test'");
    s.kind = j.at("test").get<std::string>();
    if (s.kind.rfind("signed-rank:", 0) == 0) {
        s.signed_rank.variant = e_stat_variant_from_string(s.kind.substr(12));
        s.kind = "signed-rank";
    }
    if (!kKinds.count(s.kind)) fail(ErrorCode::schema, "unknown test '" + s.kind + "'");
    s.label = j.value("label", j.at("test").get<std::string>());
    if (j.contains("design")) {
        s.design = design_from_json(j.at("design"));
        s.policy.design = s.design;
        s.seq.design = s.design;
        s.signed_rank.residual_design = s.design;
    }
    if (j.contains("gamma")) s.policy.gamma = j.at("gamma").get<double>();
    if (j.contains("bet_magnitude")) {
        s.policy.bet_magnitude = j.at("bet_magnitude").get<double>();
        s.seq.bet_magnitude = s.policy.bet_magnitude;
    }
    if (j.contains("refit_every")) {
        s.policy.refit_every = j.at("refit_every").get<std::size_t>();
        s.seq.refit_every = *s.policy.refit_every;
    }
    if (j.contains("em_max_iter")) s.policy.em.max_iter = j.at("em_max_iter").get<int>();
    if (j.contains("estimate_sigma")) s.policy.em.estimate_sigma = j.at("estimate_sigma").get<bool>();
    if (j.contains("warmup")) s.seq.warmup = j.at("warmup").get<std::size_t>();
    if (j.contains("b")) s.b = j.at("b").get<std::size_t>();
    if (j.contains("variant")) s.signed_rank.variant = e_stat_variant_from_string(j.at("variant").get<std::string>());
    if (j.contains("arm_design")) s.signed_rank.arm_design = design_from_json(j.at("arm_design"));
    if (j.contains("residual_design")) s.signed_rank.residual_design = design_from_json(j.at("residual_design"));
    if (j.contains("cate_design")) s.cate_design = design_from_json(j.at("cate_design"));
    if (s.policy.gamma < 0.0 || s.policy.gamma >= 1.0) fail(ErrorCode::config, "gamma must lie in [0,1)");
    if (!(s.policy.bet_magnitude >= 0.0 && s.policy.bet_magnitude <= 1.0)) fail(ErrorCode::config, "bet_magnitude must lie in [0,1]");
    return s;
}

nlohmann::json to_json(const TestSpec& s) {
    nlohmann::json j{{"test", s.kind}, {"label", s.label}};
    if (s.kind == "signed-rank") j["variant"] = to_string(s.signed_rank.variant);
    if (s.kind == "auto-ibet" || s.kind == "paired-ibet" || s.kind == "i-friedman" || s.kind == "i-kw") {
        j["design"] = to_json(s.policy.design);
        j["gamma"] = s.policy.gamma;
        j["bet_magnitude"] = s.policy.bet_magnitude;
        if (s.policy.refit_every) j["refit_every"] = *s.policy.refit_every;
    } else if (s.kind == "seq-bet") {
        j["design"] = to_json(s.seq.design);
        j["warmup"] = s.seq.warmup;
        j["refit_every"] = s.seq.refit_every;
        j["bet_magnitude"] = s.seq.bet_magnitude;
    } else if (s.kind == "covadj") {
        j["design"] = to_json(s.design);
        j["b"] = s.b;
    } else if (s.kind == "signed-rank") {
        j["residual_design"] = to_json(s.signed_rank.residual_design);
        j["arm_design"] = to_json(s.signed_rank.arm_design);
        j["b"] = s.b;
    } else if (s.kind == "linear-cate" && s.cate_design) {
        j["cate_design"] = to_json(*s.cate_design);
    }
    return j;
}

void SimulationConfig::validate() const {
    if (n == 0 || n % 2 != 0) fail(ErrorCode::config, "n must be positive and even");
    if (n0 > n / 2) fail(ErrorCode::config, "n0 must not exceed n/2");
    if (s_delta.empty()) fail(ErrorCode::config, "s_delta grid must not be empty");
    if (reps == 0) fail(ErrorCode::config, "reps must be positive");
    if (!(alpha > 0.0 && alpha < 1.0)) fail(ErrorCode::config, "alpha must lie in (0,1)");
    if (!(mu > 0.0 && mu < 1.0)) fail(ErrorCode::config, "mu must lie in (0,1)");
    if (fixed_treated && (*fixed_treated == 0 || *fixed_treated >= n)) fail(ErrorCode::config, "fixed treated count must lie in (0, n)");
    if (tests.empty()) fail(ErrorCode::config, "test roster must not be empty");
    std::set<std::string> labels;
    for (const TestSpec& t : tests)
        if (!labels.insert(t.label).second) fail(ErrorCode::config, "duplicate test label '" + t.label + "'");
}

SimulationConfig simulation_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) fail(ErrorCode::schema, "simulation config must be a JSON object");
    static const std::set<std::string> allowed{"n", "n0", "effect", "s_delta", "control", "noise", "mu", "fixed_treated",
                                               "tests", "reps", "alpha", "seed"};
    for (const auto& [k, v] : j.items())
        if (!allowed.count(k)) fail(ErrorCode::schema, "unknown config field '" + k + "'");
    SimulationConfig c;
    try {
        c.n = j.value("n", c.n);
        c.n0 = j.value("n0", c.n0);
        if (j.contains("effect")) c.effect = effect_from_string(j.at("effect").get<std::string>());
        if (j.contains("s_delta")) {
            const auto& g = j.at("s_delta");
            c.s_delta = g.is_array() ? g.get<std::vector<double>>() : std::vector<double>{g.get<double>()};
        }
        if (j.contains("control")) c.control = control_from_string(j.at("control").get<std::string>());
        if (j.contains("noise")) c.noise = noise_from_string(j.at("noise").get<std::string>());
        c.mu = j.value("mu", c.mu);
        if (j.contains("fixed_treated") && !j.at("fixed_treated").is_null()) c.fixed_treated = j.at("fixed_treated").get<std::size_t>();
        c.reps = j.value("reps", c.reps);
        c.alpha = j.value("alpha", c.alpha);
        c.seed = j.value("seed", c.seed);
        c.tests.clear();
        if (j.contains("tests"))
            for (const auto& t : j.at("tests")) c.tests.push_back(test_spec_from_json(t));
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::schema, std::string("simulation config: ") + e.what());
    }
    c.validate();
    return c;
}

nlohmann::json to_json(const SimulationConfig& c) {
    nlohmann::json tests = nlohmann::json::array();
    for (const TestSpec& t : c.tests) tests.push_back(to_json(t));
    nlohmann::json j{{"n", c.n},           {"n0", c.n0},       {"effect", to_string(c.effect)}, {"s_delta", c.s_delta},
                     {"control", to_string(c.control)}, {"noise", to_string(c.noise)}, {"mu", c.mu},
                     {"tests", tests},     {"reps", c.reps},   {"alpha", c.alpha},              {"seed", c.seed}};
    if (c.fixed_treated) j["fixed_treated"] = *c.fixed_treated;
    return j;
}

// ---------------------------------------------------------------------------
// Experiments

Dataset generate_two_sample(const SimulationConfig& c, double s_delta, CounterRng& rng) {
    const Eigen::MatrixXd x = generate_population(c.n, c.n0, rng);
    std::vector<int> a(c.n, 0);
    double mu = c.mu;
    if (c.fixed_treated) {
        std::fill(a.begin(), a.begin() + static_cast<std::ptrdiff_t>(*c.fixed_treated), 1);
        rng.shuffle(a);
        mu = static_cast<double>(*c.fixed_treated) / static_cast<double>(c.n);
    } else {
        for (int& v : a) v = rng.bernoulli(c.mu) ? 1 : 0;
    }
    const auto y = generate_outcomes(x, a, c.effect, s_delta, c.control, c.noise, rng);
    Dataset d;
    d.fixed_treated = c.fixed_treated;
    d.subjects.resize(c.n);
    for (std::size_t i = 0; i < c.n; ++i) d.subjects[i] = Subject{i, y[i], a[i], row_vec(x, i), mu};
    return d;
}

std::vector<PairedRecord> generate_pairs(std::size_t n_pairs, std::size_t n0, EffectTag effect, double s_delta,
                                         ControlTag control, NoiseTag noise, CounterRng& rng) {
    const Eigen::MatrixXd x = generate_population(2 * n_pairs, std::min(n0, n_pairs), rng);
    std::vector<int> a(2 * n_pairs);
    for (std::size_t p = 0; p < n_pairs; ++p) {
        const int first = rng.bernoulli(0.5) ? 1 : 0;
        a[2 * p] = first;
        a[2 * p + 1] = 1 - first;
    }
    const auto y = generate_outcomes(x, a, effect, s_delta, control, noise, rng);
    std::vector<PairedRecord> out(n_pairs);
    for (std::size_t p = 0; p < n_pairs; ++p)
        out[p] = PairedRecord{p, y[2 * p], y[2 * p + 1], a[2 * p], a[2 * p + 1], row_vec(x, 2 * p), row_vec(x, 2 * p + 1)};
    return out;
}

std::vector<BlockRecord> generate_blocks(std::size_t n_blocks, std::size_t n0, EffectTag effect, double s_delta,
                                         ControlTag control, NoiseTag noise, CounterRng& rng) {
    std::size_t pop = 3 * n_blocks + (3 * n_blocks) % 2;
    const Eigen::MatrixXd x = generate_population(pop, std::min(n0, pop / 2), rng);
    std::vector<int> a(pop, 1);
    for (std::size_t b = 0; b < n_blocks; ++b) {
        std::vector<int> perm{1, 2, 3};
        rng.shuffle(perm);
        std::copy(perm.begin(), perm.end(), a.begin() + static_cast<std::ptrdiff_t>(3 * b));
    }
    const auto y = generate_outcomes_levels(x, a, 3, effect, s_delta, control, noise, rng);
    std::vector<BlockRecord> out(n_blocks);
    for (std::size_t b = 0; b < n_blocks; ++b) {
        out[b].block_id = b;
        for (std::size_t j = 0; j < 3; ++j) {
            out[b].y.push_back(y[3 * b + j]);
            out[b].a.push_back(a[3 * b + j]);
            out[b].x.push_back(row_vec(x, 3 * b + j));
        }
    }
    return out;
}

Dataset generate_three_arm(std::size_t n, std::size_t n0, EffectTag effect, double s_delta, ControlTag control,
                           NoiseTag noise, CounterRng& rng) {
    const Eigen::MatrixXd x = generate_population(n, n0, rng);
    std::vector<int> a(n);
    for (int& v : a) v = 1 + static_cast<int>(rng.below(3));
    const auto y = generate_outcomes_levels(x, a, 3, effect, s_delta, control, noise, rng);
    Dataset d;
    d.support = AssignmentSupport::levels(3);
    d.subjects.resize(n);
    for (std::size_t i = 0; i < n; ++i) d.subjects[i] = Subject{i, y[i], a[i], row_vec(x, i), 2.0};
    return d;
}

Experiment generate_experiment(const SimulationConfig& c, DesignKind kind, double s_delta, CounterRng& rng) {
    Experiment e;
    switch (kind) {
        case DesignKind::two_sample: e.two_sample = generate_two_sample(c, s_delta, rng); break;
        case DesignKind::paired: e.pairs = generate_pairs(c.n / 2, c.n0 / 2, c.effect, s_delta, c.control, c.noise, rng); break;
        case DesignKind::blocks: e.blocks = generate_blocks(c.n / 3, c.n0, c.effect, s_delta, c.control, c.noise, rng); break;
        case DesignKind::three_arm: e.three_arm = generate_three_arm(c.n, c.n0, c.effect, s_delta, c.control, c.noise, rng); break;
    }
    return e;
}

RepOutcome run_test(const TestSpec& spec, const Experiment& e, double alpha, std::uint64_t seed) {
    RepOutcome out;
    AutoPolicyConfig policy = spec.policy;
    policy.alpha = alpha;
    policy.seed = seed;
    PermutationOptions perm;
    perm.b = spec.b;
    perm.alpha = alpha;
    perm.seed = seed;
    perm.mode = PermutationOptions::Mode::sampled;
    auto from_record = [&](const RunRecord& r) {
        out.reject = r.rejected;
        out.stop_time = static_cast<double>(r.stop_time());
    };
    if (spec.kind == "auto-ibet") {
        from_record(run_auto_ibet(e.two_sample, policy));
    } else if (spec.kind == "paired-ibet") {
        from_record(run_auto_ibet(pair_to_pseudo(e.pairs), policy));
    } else if (spec.kind == "seq-bet") {
        MaskedStream stream(e.two_sample);
        const RunRecord r = run_seq_bet(stream, alpha, spec.seq);
        out.reject = r.rejected;
        out.stop_time = static_cast<double>(r.stop_step);
    } else if (spec.kind == "i-friedman") {
        from_record(run_i_friedman(e.blocks, policy));
    } else if (spec.kind == "i-kw") {
        from_record(run_i_kruskal_wallis(e.three_arm, policy));
    } else if (spec.kind == "covadj") {
        out.reject = covadj_wilcoxon_test(e.two_sample, spec.design, perm).reject;
    } else if (spec.kind == "linear-cate") {
        out.reject = linear_cate_test(e.two_sample, alpha, spec.cate_design).reject;
    } else if (spec.kind == "signed-rank") {
        out.reject = signed_rank_test(e.two_sample, spec.signed_rank, perm).reject;
    } else {
        fail(ErrorCode::config, "unknown test '" + spec.kind + "'");
    }
    return out;
}

// ---------------------------------------------------------------------------
// Power

const PowerRow* PowerTable::find(const std::string& test, double s_delta) const {
    for (const PowerRow& r : rows)
        if (r.test == test && r.s_delta == s_delta) return &r;
    return nullptr;
}

std::vector<double> PowerTable::grid() const {
    std::vector<double> g;
    for (const PowerRow& r : rows)
        if (std::find(g.begin(), g.end(), r.s_delta) == g.end()) g.push_back(r.s_delta);
    return g;
}

void parallel_for(std::size_t reps, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
    jobs = std::max<std::size_t>(1, std::min(jobs, reps));
    if (jobs == 1) {
        for (std::size_t r = 0; r < reps; ++r) fn(r);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < jobs; ++t) {
        pool.emplace_back([&] {
            for (std::size_t r = next++; r < reps; r = next++) {
                try {
                    fn(r);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!first_error) first_error = std::current_exception();
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
}

PowerTable estimate_power(const SimulationConfig& config, const PowerOptions& options) {
    config.validate();
    const CounterRng master(config.seed);
    const std::size_t nt = config.tests.size();
    PowerTable table;
    for (std::size_t g = 0; g < config.s_delta.size(); ++g) {
        const double s = config.s_delta[g];
        const CounterRng cell = master.split(g);
        // outcomes[rep][test]; 0 = accept, 1 = reject, -1 = failed run
        std::vector<std::vector<int>> verdict(config.reps, std::vector<int>(nt, -1));
        std::vector<std::vector<double>> stop(config.reps, std::vector<double>(nt, 0.0));
        parallel_for(config.reps, options.jobs, [&](std::size_t rep) {
            const CounterRng rep_rng = cell.split(rep);
            std::map<DesignKind, Experiment> experiments;
            for (std::size_t t = 0; t < nt; ++t) {
                const TestSpec& spec = config.tests[t];
                const DesignKind kind = spec.design_kind();
                try {
                    auto it = experiments.find(kind);
                    if (it == experiments.end()) {
                        CounterRng data_rng = rep_rng.split(static_cast<std::uint64_t>(kind));
                        it = experiments.emplace(kind, generate_experiment(config, kind, s, data_rng)).first;
                    }
                    const std::uint64_t test_seed = rep_rng.split(1000 + t).next_u64();
                    const RepOutcome o = run_test(spec, it->second, config.alpha, test_seed);
                    verdict[rep][t] = o.reject ? 1 : 0;
                    if (o.stop_time) stop[rep][t] = *o.stop_time;
                } catch (const Error&) {
                    verdict[rep][t] = -1;
                }
            }
        });
        for (std::size_t t = 0; t < nt; ++t) {
            PowerRow row;
            row.test = config.tests[t].label;
            row.s_delta = s;
            row.seed = config.seed;
            std::size_t rejections = 0;
            double stop_sum = 0.0;
            for (std::size_t rep = 0; rep < config.reps; ++rep) {
                if (verdict[rep][t] < 0) {
                    ++row.excluded;
                    continue;
                }
                ++row.reps;
                rejections += static_cast<std::size_t>(verdict[rep][t]);
                stop_sum += stop[rep][t];
            }
            if (row.reps > 0) {
                row.power = static_cast<double>(rejections) / static_cast<double>(row.reps);
                row.se = std::sqrt(row.power * (1.0 - row.power) / static_cast<double>(row.reps));
                if (config.tests[t].is_betting()) row.mean_stop_time = stop_sum / static_cast<double>(row.reps);
            }
            if (options.progress) options.progress(row);
            table.rows.push_back(std::move(row));
        }
    }
    return table;
}

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

void export_results(const PowerTable& table, std::ostream& out) {
    out << "test,s_delta,power,se,mean_stop_time,reps,seed\n";
    for (const PowerRow& r : table.rows) {
        out << r.test << ',' << fmt(r.s_delta) << ',' << fmt(r.power) << ',' << fmt(r.se) << ','
            << (r.mean_stop_time ? fmt(*r.mean_stop_time) : std::string()) << ',' << r.reps << ',' << r.seed << '\n';
    }
}

void export_results_file(const PowerTable& table, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) fail(ErrorCode::io, "cannot open '" + path + "' for writing");
    export_results(table, f);
    f.flush();
    if (!f) fail(ErrorCode::io, "failed writing '" + path + "'");
}

PowerTable read_power_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line != "test,s_delta,power,se,mean_stop_time,reps,seed")
        fail(ErrorCode::schema, "power table header mismatch");
    PowerTable t;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        const auto f = split_csv_line(line);
        if (f.size() != 7) fail(ErrorCode::schema, "power table row " + std::to_string(row) + ": expected 7 fields");
        const std::string ctx = "power table row " + std::to_string(row);
        PowerRow r;
        r.test = f[0];
        r.s_delta = parse_double(f[1], ctx);
        r.power = parse_double(f[2], ctx);
        r.se = parse_double(f[3], ctx);
        if (!f[4].empty()) r.mean_stop_time = parse_double(f[4], ctx);
        r.reps = static_cast<std::size_t>(std::stoull(f[5]));
        r.seed = std::stoull(f[6]);
        t.rows.push_back(std::move(r));
    }
    return t;
}

}  // namespace ibet
