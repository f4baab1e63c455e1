#include "doctest.h"

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "helpers.hpp"
#include "tmlecom/serialize.hpp"

using namespace tmlecom;
namespace fs = std::filesystem;

namespace {

int run_cli(const std::string& args) {
    const std::string cmd = std::string(TMLECOM_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    const int st = std::system(cmd.c_str());
    return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

// Dataset plus config for a shift on a continuous exposure.
fs::path setup(const std::string& name, Json extra = Json::object()) {
    const auto dir = testutil::temp_dir(name);
    write_csv(testutil::continuous_dataset(300, 5), dir / "data.csv");
    Json j = {{"data", "data.csv"},
              {"ynode", "Y"},
              {"anodes", "A"},
              {"wenodes", {"W1", "W2"}},
              {"f_gstar1", {{"type", "shift_truncate"}, {"shift", 1}, {"trunc_bound", 5}, {"mean", 0}}},
              {"n_mc_sims", 2},
              {"seed", 3}};
    for (auto& [k, v] : extra.items()) j[k] = v;
    write_json_file(j, dir / "config.json");
    return dir;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

}  // namespace

TEST_CASE("cli estimate writes its outputs and the echoed config reproduces the run") {
    const auto dir = setup("cli_estimate");
    REQUIRE(run_cli("estimate --config " + q(dir / "config.json") + " --out " + q(dir / "a")) == 0);
    CHECK(fs::exists(dir / "a" / "report.json"));
    CHECK(fs::exists(dir / "a" / "config.resolved.json"));
    REQUIRE(run_cli("estimate --config " + q(dir / "a" / "config.resolved.json") + " --out " + q(dir / "b")) == 0);
    CHECK(slurp(dir / "a" / "report.json") == slurp(dir / "b" / "report.json"));
    CHECK(slurp(dir / "a" / "config.resolved.json") == slurp(dir / "b" / "config.resolved.json"));
    // a different seed changes the MC draws
    REQUIRE(run_cli("estimate --seed 4 --config " + q(dir / "config.json") + " --out " + q(dir / "c")) == 0);
    CHECK(slurp(dir / "a" / "report.json") != slurp(dir / "c" / "report.json"));
}

TEST_CASE("cli density-fit output can be reused by estimate") {
    const auto dir = setup("cli_density");
    REQUIRE(run_cli("density-fit --config " + q(dir / "config.json") + " --out " + q(dir / "d")) == 0);
    REQUIRE(fs::exists(dir / "d" / "density.json"));
    REQUIRE(run_cli("estimate --config " + q(dir / "config.json") + " --out " + q(dir / "inline")) == 0);
    Json j = read_json_file(dir / "config.json");
    j["h_g0_model"] = (dir / "d" / "density.json").string();
    write_json_file(j, dir / "reuse.json");
    REQUIRE(run_cli("estimate --config " + q(dir / "reuse.json") + " --out " + q(dir / "reuse")) == 0);
    auto a = read_json_file(dir / "inline" / "report.json");
    auto b = read_json_file(dir / "reuse" / "report.json");
    CHECK(a["gstar1"].dump() == b["gstar1"].dump());
}

TEST_CASE("cli exit codes") {
    const auto dir = setup("cli_codes");
    CHECK(run_cli("") == 2);
    CHECK(run_cli("estimate") == 2);
    CHECK(run_cli("estimate --config " + q(dir / "missing.json")) != 0);

    Json bad = read_json_file(dir / "config.json");
    bad["colour"] = "blue";
    write_json_file(bad, dir / "bad.json");
    CHECK(run_cli("estimate --config " + q(dir / "bad.json") + " --out " + q(dir / "x")) == 2);

    Json nodata = read_json_file(dir / "config.json");
    nodata["data"] = "nope.csv";
    write_json_file(nodata, dir / "nodata.json");
    CHECK(run_cli("estimate --config " + q(dir / "nodata.json") + " --out " + q(dir / "x")) == 3);

    Json nocol = read_json_file(dir / "config.json");
    nocol["wenodes"] = {"W1", "W9"};
    write_json_file(nocol, dir / "nocol.json");
    CHECK(run_cli("estimate --config " + q(dir / "nocol.json") + " --out " + q(dir / "x")) == 3);

    CHECK(run_cli("simulate --study nowhere --out " + q(dir / "x")) == 2);
}

TEST_CASE("cli simulate is reproducible and writes one row per replicate and estimator") {
    const auto dir = testutil::temp_dir("cli_sim");
    Json j = {{"study", "sim3"}, {"J", 200}, {"reps", 20}, {"seed", 9}};
    write_json_file(j, dir / "sim.json");
    REQUIRE(run_cli("simulate --config " + q(dir / "sim.json") + " --out " + q(dir / "a")) == 0);
    REQUIRE(run_cli("simulate --config " + q(dir / "sim.json") + " --out " + q(dir / "b")) == 0);
    for (const char* f : {"metrics.json", "metrics.txt", "reps.csv", "config.resolved.json"}) {
        CHECK(fs::exists(dir / "a" / f));
        CHECK(slurp(dir / "a" / f) == slurp(dir / "b" / f));
    }
    std::istringstream csv(slurp(dir / "a" / "reps.csv"));
    std::string line;
    std::size_t rows = 0;
    std::getline(csv, line);
    CHECK(line == "rep,estimator,ok,estimate,se,ci_lo,ci_hi,covered");
    while (std::getline(csv, line)) rows += !line.empty();
    CHECK(rows == 20 * 9);
    const auto m = read_json_file(dir / "a" / "metrics.json");
    CHECK(m["truth_se"] == 0.0);
}
