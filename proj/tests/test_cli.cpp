#include <csignal>
#include <cstdio>
#include <string>

#include <sys/wait.h>

#include <nlohmann/json.hpp>

#include "doctest.h"
#include "helpers.hpp"
#include "ibet/simulation.hpp"
// After the Eigen-based headers: resolv.h, pulled in here, defines a _res macro.
#include "httplib.h"

using nlohmann::json;

namespace {

struct Run {
    int status = -1;
    std::string out;
};

Run run(const std::string& args) {
    const std::string cmd = std::string(IBET_CLI_PATH) + " " + args + " 2>/dev/null";
    Run r;
    FILE* p = popen(cmd.c_str(), "r");
    REQUIRE(p != nullptr);
    char buf[4096];
    std::size_t got;
    while ((got = fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, got);
    const int st = pclose(p);
    r.status = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
    return r;
}

}  // namespace

TEST_CASE("cli test rejects separated clusters after nine bets") {
    const auto dir = testutil::temp_dir("cli");
    testutil::write_file(dir / "sep.csv", testutil::to_csv(testutil::separated(40)));
    const auto r = run("test --file " + (dir / "sep.csv").string() + " --test auto-ibet --seed 4");
    REQUIRE(r.status == 0);
    const auto j = json::parse(r.out);
    CHECK(j["reject"] == true);
    CHECK(j["stop_time"] == 13);
    CHECK(j["holdout"] == 4);
    std::filesystem::remove_all(dir);
}

TEST_CASE("cli test on a null fixture does not reject") {
    const auto dir = testutil::temp_dir("cli");
    testutil::write_file(dir / "null.csv", testutil::to_csv(testutil::null_data(200, 2, 8)));
    for (const char* t : {"auto-ibet", "covadj", "linear-cate"}) {
        const auto r = run("test --file " + (dir / "null.csv").string() + " --test " + t + " --seed 1");
        REQUIRE(r.status == 0);
        const auto j = json::parse(r.out);
        CHECK(j["reject"] == false);
        CHECK(j["p_value"].get<double>() > 0.05);
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("cli exit codes distinguish usage errors from runtime failures") {
    const auto dir = testutil::temp_dir("cli");
    testutil::write_file(dir / "null.csv", testutil::to_csv(testutil::null_data(30, 1, 2)));
    testutil::write_file(dir / "bad.csv", "y,a\n1,maybe\n");
    CHECK(run("test --file " + (dir / "null.csv").string() + " --test bogus").status == 2);
    CHECK(run("test --file " + (dir / "bad.csv").string() + " --test covadj").status == 2);
    CHECK(run("test --file " + (dir / "missing.csv").string() + " --test covadj").status == 1);
    CHECK(run("test --file " + (dir / "null.csv").string() + " --test auto-ibet --gamma 2").status == 2);
    CHECK(run("calibrate --reps 0").status == 2);
    CHECK(run("").status == 2);
    CHECK(run("frobnicate").status == 2);
    std::filesystem::remove_all(dir);
}

TEST_CASE("cli simulate is reproducible across runs and thread counts") {
    const auto dir = testutil::temp_dir("cli");
    ibet::SimulationConfig c;
    c.n = 80;
    c.n0 = 10;
    c.reps = 6;
    c.s_delta = {0.0, 1.0};
    c.seed = 42;
    c.tests = {ibet::test_spec_from_json("covadj"), ibet::test_spec_from_json("auto-ibet")};
    testutil::write_file(dir / "cfg.json", ibet::to_json(c).dump());
    const auto cfg = (dir / "cfg.json").string();
    const auto a = run("simulate --config " + cfg + " --out " + (dir / "a.csv").string());
    const auto b = run("simulate --config " + cfg + " --out " + (dir / "b.csv").string() + " --jobs 2");
    REQUIRE(a.status == 0);
    REQUIRE(b.status == 0);
    CHECK(json::parse(a.out)["rows"] == 4);
    const auto text = testutil::read_file(dir / "a.csv");
    CHECK(text == testutil::read_file(dir / "b.csv"));
    CHECK(text.rfind("test,s_delta,power,se,mean_stop_time,reps,seed\n", 0) == 0);
    testutil::write_file(dir / "bad.json", "{\"n\": 80, \"wat\": 1}");
    CHECK(run("simulate --config " + (dir / "bad.json").string() + " --out " + (dir / "c.csv").string()).status == 2);
    std::filesystem::remove_all(dir);
}

TEST_CASE("cli calibrate is reproducible for a fixed seed") {
    const std::string args =
        "calibrate --reps 20 --n 60 --martingale-reps 40 --ville-reps 40 --continuation-reps 40 --seed 9";
    const auto a = run(args);
    const auto b = run(args + " --jobs 2");
    REQUIRE(a.status == 0);
    CHECK(a.out == b.out);
    const auto j = json::parse(a.out);
    CHECK(j.contains("pass"));
    CHECK(j["checks"].size() >= 9);
}

TEST_CASE("cli serve answers health checks and stops on SIGTERM") {
    const std::string cmd = "sh -c 'echo $$; exec " + std::string(IBET_CLI_PATH) + " serve --port 0' 2>/dev/null";
    FILE* p = popen(cmd.c_str(), "r");
    REQUIRE(p != nullptr);
    char line[512];
    REQUIRE(fgets(line, sizeof line, p) != nullptr);
    const pid_t pid = static_cast<pid_t>(std::stol(line));
    REQUIRE(fgets(line, sizeof line, p) != nullptr);
    const auto hello = json::parse(line);
    const int port = hello["port"];
    httplib::Client cli("127.0.0.1", port);
    const auto res = cli.Get("/health");
    REQUIRE(res);
    CHECK(res->status == 200);
    kill(pid, SIGTERM);
    const int st = pclose(p);
    CHECK(WIFEXITED(st));
    CHECK(WEXITSTATUS(st) == 0);
}
