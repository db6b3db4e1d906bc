#include <csignal>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ibet/calibration.hpp"
#include "ibet/classic.hpp"
#include "ibet/error.hpp"
#include "ibet/extensions.hpp"
#include "ibet/policies.hpp"
#include "ibet/service/http_server.hpp"
#include "ibet/service/session_service.hpp"
#include "ibet/simulation.hpp"

using nlohmann::json;
using namespace ibet;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DesignFlags {
    std::string estimator = "ls";
    bool no_interactions = false;
    bool no_intercept = false;
    std::vector<std::string> powers;
    std::vector<std::string> hinges;
    std::string design_json;
    double huber_c = 1.345;

    void add(CLI::App* cmd) {
        cmd->add_option("--estimator", estimator, "Working-model estimator: ls or huber")->check(CLI::IsMember({"ls", "huber"}));
        cmd->add_flag("--no-interactions", no_interactions, "Drop pairwise covariate interactions from the working model");
        cmd->add_flag("--no-intercept", no_intercept, "Drop the intercept from the working model");
        cmd->add_option("--power", powers, "Extra term COLUMN:POWER, e.g. 3:2 for X3 squared (repeatable)");
        cmd->add_option("--hinge", hinges, "Extra term COLUMN:KNOT giving max(X - knot, 0) (repeatable)");
        cmd->add_option("--huber-c", huber_c, "Huber tuning constant");
        cmd->add_option("--design-json", design_json, "Full working-model design as JSON; overrides the other design flags");
    }

    DesignSpec build() const {
        if (!design_json.empty()) {
            try {
                return design_from_json(json::parse(design_json));
            } catch (const json::parse_error& e) {
                throw UsageError(std::string("--design-json: ") + e.what());
            }
        }
        DesignSpec d = DesignSpec::linear_with_interactions();
        d.interactions = !no_interactions;
        d.intercept = !no_intercept;
        d.estimator = estimator_from_string(estimator);
        d.huber_c = huber_c;
        auto split = [](const std::string& s, const char* flag) {
            const auto colon = s.find(':');
            if (colon == std::string::npos) throw UsageError(std::string(flag) + " expects COLUMN:VALUE, got '" + s + "'");
            try {
                const long col = std::stol(s.substr(0, colon));
                if (col < 1) throw UsageError(std::string(flag) + ": columns are numbered from 1");
                return std::pair<std::size_t, double>{static_cast<std::size_t>(col - 1), std::stod(s.substr(colon + 1))};
            } catch (const std::logic_error&) {
                throw UsageError(std::string(flag) + " expects COLUMN:VALUE, got '" + s + "'");
            }
        };
        for (const auto& p : powers) {
            const auto [c, v] = split(p, "--power");
            d.powers.push_back({c, static_cast<int>(v)});
        }
        for (const auto& h : hinges) {
            const auto [c, v] = split(h, "--hinge");
            d.hinges.push_back({c, v});
        }
        return d;
    }
};

const std::vector<std::string> kTestTags{"auto-ibet", "seq-bet",    "covadj",   "linear-cate", "signed-rank", "i-kw",
                                         "i-friedman", "paired-ibet", "kruskal-wallis", "friedman"};

json run_record_summary(const RunRecord& r) {
    json j{{"test", r.test},
           {"reject", r.rejected},
           {"p_value", r.anytime_p},
           {"statistic", r.final_log_wealth()},
           {"stop_time", r.stop_time()},
           {"holdout", r.holdout_size},
           {"n", r.n}};
    if (!r.warnings.empty()) j["warnings"] = r.warnings;
    return j;
}

json test_result_summary(const TestResult& r) {
    json j{{"test", r.test}, {"reject", r.reject}, {"p_value", r.p_value}, {"statistic", r.statistic}};
    if (r.threshold) j["threshold"] = *r.threshold;
    if (!r.warnings.empty()) j["warnings"] = r.warnings;
    return j;
}

std::ifstream open_input(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::io, "cannot open " + path);
    return in;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sequential randomization tests by betting: interactive i-bet, automated policies, classical baselines "
                 "and power simulations."};
    app.require_subcommand(1);

    // test
    auto* test = app.add_subcommand("test", "Run one test on a CSV file and print a JSON result line.");
    std::string file, tag;
    double alpha = 0.05, gamma = 0.1, bet_magnitude = 0.4;
    std::uint64_t seed = 0;
    std::size_t b = 200, warmup = 50, seq_refit = 25;
    std::optional<std::size_t> refit_every;
    std::string variant = "R_of_X";
    DesignFlags design_flags, arm_flags;
    test->add_option("--file", file, "Input CSV. Two-sample: y,a,x1..xd[,mu]. Paired: y1,y2,a1,a2,x1_*,x2_*. "
                                     "Blocks: block_id,y,a,x_*")
        ->required();
    test->add_option("--test", tag, "Test to run")->required()->check(CLI::IsMember(kTestTags));
    test->add_option("--alpha", alpha, "Type-I error level");
    test->add_option("--seed", seed, "Seed for holdout draws and permutations");
    test->add_option("--gamma", gamma, "Holdout fraction for automated i-bet tests");
    test->add_option("--bet-magnitude", bet_magnitude, "Bet size of the automated policies");
    test->add_option("--refit-every", refit_every, "Steps between working-model refits (default n/5)");
    test->add_option("--b", b, "Permutation count for permutation tests");
    test->add_option("--variant", variant, "Signed-rank statistic: R_of_X, R_of_X_falseA, R_minus_Rhat_falseA, "
                                           "diff_in_pred_error, signed_diff_in_pred_error");
    test->add_option("--warmup", warmup, "seq-bet warmup subjects");
    test->add_option("--seq-refit-every", seq_refit, "seq-bet arrivals between refits");
    design_flags.add(test);
    test->add_option("--arm-design-json", arm_flags.design_json, "Per-arm design for signed-rank statistics as JSON");

    // simulate
    auto* simulate = app.add_subcommand("simulate", "Estimate power over an effect-size grid and write a CSV table.");
    std::string config_path, out_path;
    std::size_t jobs = 1;
    simulate->add_option("--config", config_path, "Simulation config JSON")->required();
    simulate->add_option("--out", out_path, "Output CSV path")->required();
    simulate->add_option("--jobs", jobs, "Worker threads");

    // serve
    auto* serve = app.add_subcommand("serve", "Serve the interactive session API over HTTP and WebSocket.");
    service::ServerOptions server_options;
    std::optional<std::string> data_dir;
    serve->add_option("--address", server_options.address, "Listen address");
    serve->add_option("--port", server_options.port, "Listen port (0 picks a free one)");
    serve->add_option("--token", server_options.token, "Require this bearer token on every request");
    serve->add_option("--threads", server_options.threads, "I/O threads");
    serve->add_option("--data-dir", data_dir, "Directory for event logs and snapshots; sessions are kept in memory if omitted");

    // calibrate
    auto* calibrate = app.add_subcommand("calibrate", "Run the null-calibration suites and print a pass/fail report.");
    std::size_t reps = 500, n = 500;
    bool fast = false;
    calibrate->add_option("--reps", reps, "Replications of the type-I suite");
    calibrate->add_option("--n", n, "Subjects per simulated experiment");
    calibrate->add_option("--alpha", alpha, "Type-I error level");
    calibrate->add_option("--seed", seed, "Master seed");
    calibrate->add_option("--jobs", jobs, "Worker threads");
    calibrate->add_flag("--fast", fast, "Desk-scale suite: n = 200, 200 type-I replications");
    std::size_t martingale_reps = 10000, ville_reps = 2000, continuation_reps = 1000;
    calibrate->add_option("--martingale-reps", martingale_reps, "Replications of the wealth-mean check");
    calibrate->add_option("--ville-reps", ville_reps, "Replications of the maximal-inequality check");
    calibrate->add_option("--continuation-reps", continuation_reps, "Replications of the optional-continuation check");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }

    try {
        if (*test) {
            if (!(alpha > 0.0 && alpha < 1.0)) throw UsageError("--alpha must lie in (0,1)");
            AutoPolicyConfig policy;
            policy.alpha = alpha;
            policy.gamma = gamma;
            policy.bet_magnitude = bet_magnitude;
            policy.refit_every = refit_every;
            policy.design = design_flags.build();
            policy.seed = seed;
            PermutationOptions perm;
            perm.b = b;
            perm.alpha = alpha;
            perm.seed = seed;
            json out;
            if (tag == "paired-ibet") {
                auto in = open_input(file);
                out = run_record_summary(run_auto_ibet(pair_to_pseudo(read_paired_csv(in)), policy));
                out["test"] = "paired-ibet";
            } else if (tag == "i-friedman" || tag == "friedman") {
                auto in = open_input(file);
                const auto blocks = read_block_csv(in);
                if (tag == "i-friedman") {
                    out = run_record_summary(run_i_friedman(blocks, policy));
                } else {
                    std::vector<std::vector<double>> ys;
                    std::vector<std::vector<int>> as;
                    for (const auto& blk : blocks) {
                        ys.push_back(blk.y);
                        as.push_back(blk.a);
                    }
                    out = test_result_summary(friedman_test(ys, as, perm));
                }
            } else {
                const Dataset data = read_dataset_csv_file(file);
                if (tag == "auto-ibet") {
                    out = run_record_summary(run_auto_ibet(data, policy));
                } else if (tag == "seq-bet") {
                    SeqBetConfig sc;
                    sc.warmup = warmup;
                    sc.bet_magnitude = bet_magnitude;
                    sc.refit_every = seq_refit;
                    sc.design = policy.design;
                    MaskedStream stream(data);
                    out = run_record_summary(run_seq_bet(stream, alpha, sc));
                } else if (tag == "i-kw") {
                    out = run_record_summary(run_i_kruskal_wallis(data, policy));
                } else if (tag == "covadj") {
                    out = test_result_summary(covadj_wilcoxon_test(data, policy.design, perm));
                } else if (tag == "linear-cate") {
                    std::optional<DesignSpec> xprime;
                    if (!design_flags.design_json.empty()) xprime = policy.design;
                    out = test_result_summary(linear_cate_test(data, alpha, xprime));
                } else if (tag == "signed-rank") {
                    SignedRankConfig sr;
                    sr.variant = e_stat_variant_from_string(variant);
                    sr.residual_design = policy.design;
                    if (!arm_flags.design_json.empty()) sr.arm_design = arm_flags.build();
                    out = test_result_summary(signed_rank_test(data, sr, perm));
                } else if (tag == "kruskal-wallis") {
                    out = test_result_summary(kruskal_wallis_test(data, perm));
                }
            }
            std::cout << out.dump() << std::endl;
            return 0;
        }

        if (*simulate) {
            std::ifstream in(config_path);
            if (!in) fail(ErrorCode::io, "cannot open " + config_path);
            json cfg;
            try {
                cfg = json::parse(in);
            } catch (const json::parse_error& e) {
                fail(ErrorCode::schema, std::string("config is not valid JSON: ") + e.what());
            }
            const SimulationConfig config = simulation_config_from_json(cfg);
            PowerOptions options;
            options.jobs = jobs;
            options.progress = [](const PowerRow& r) {
                std::cerr << r.test << " s_delta=" << r.s_delta << " power=" << r.power << " se=" << r.se << "\n";
            };
            const PowerTable table = estimate_power(config, options);
            export_results_file(table, out_path);
            std::size_t excluded = 0;
            for (const auto& r : table.rows) excluded += r.excluded;
            std::cout << json{{"out", out_path}, {"rows", table.rows.size()}, {"excluded", excluded}}.dump() << std::endl;
            return 0;
        }

        if (*serve) {
            sigset_t signals;
            sigemptyset(&signals);
            sigaddset(&signals, SIGINT);
            sigaddset(&signals, SIGTERM);
            pthread_sigmask(SIG_BLOCK, &signals, nullptr);
            service::ServiceOptions so;
            so.data_dir = data_dir;
            service::SessionService svc(so);
            service::HttpServer server(svc, server_options);
            const unsigned short port = server.start();
            std::cout << json{{"listening", server_options.address}, {"port", port}, {"restored", svc.restored()}}.dump()
                      << std::endl;
            int sig = 0;
            sigwait(&signals, &sig);
            server.stop();
            return 0;
        }

        if (*calibrate) {
            if (reps == 0 || martingale_reps == 0 || ville_reps == 0 || continuation_reps == 0)
                throw UsageError("replication counts must be positive");
            CalibrationOptions o;
            o.reps = fast ? 200 : reps;
            o.n = fast ? 200 : n;
            o.alpha = alpha;
            o.seed = seed;
            o.jobs = jobs;
            o.martingale_reps = martingale_reps;
            o.ville_reps = ville_reps;
            o.continuation_reps = continuation_reps;
            o.progress = [](const CalibrationCheck& c) {
                std::cerr << (c.pass ? "PASS " : "FAIL ") << c.name << " observed=" << c.observed << " bound=" << c.bound << "\n";
            };
            std::cout << run_calibration(o).to_json().dump() << std::endl;
            return 0;
        }
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const Error& e) {
        std::cerr << "error [" << to_string(e.code()) << "]: " << e.what() << "\n";
        return (e.code() == ErrorCode::schema || e.code() == ErrorCode::config) ? kExitUsage : kExitRuntime;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return 0;
}
