#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "stemdeg/cli.hpp"
#include "stemdeg/io.hpp"

using namespace stemdeg;
namespace fs = std::filesystem;

namespace {

int run(const std::vector<std::string>& args) {
    std::vector<const char*> argv;
    argv.push_back("stemdeg");
    for (const auto& a : args) argv.push_back(a.c_str());
    return run_cli(static_cast<int>(argv.size()), argv.data());
}

fs::path fresh_dir(const char* name) {
    const fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(f),
                       std::istreambuf_iterator<char>());
}

} // namespace

TEST_CASE("unknown subcommand is a usage error") {
    CHECK(run({"frobnicate"}) == 1);
    CHECK(run({}) == 1);
}

TEST_CASE("missing input file is an I/O error") {
    const auto dir = fresh_dir("stemdeg_cli_io");
    CHECK(run({"estimate", "--ref", (dir / "nope.atdf").string(), "--target",
               (dir / "nope.atdf").string(), "--out", (dir / "est.json").string()}) ==
          2);
    fs::remove_all(dir);
}

TEST_CASE("gen-atoms then simulate then estimate round trip") {
    const auto dir = fresh_dir("stemdeg_cli_e2e");
    const auto atoms = (dir / "atoms.atdf").string();
    REQUIRE(run({"gen-atoms", "--out", atoms, "--size", "96", "--seed", "5"}) == 0);
    CHECK(fs::exists(atoms));
    CHECK(fs::exists(atoms + ".manifest.json"));

    const auto sim = (dir / "sim").string();
    REQUIRE(run({"simulate", "--in", atoms, "--theta", "4", "--tx", "6", "--ty", "-3",
                 "--steps", "4", "--min-survival", "0.5", "--noise", "none",
                 "--out-dir", sim, "--seed", "2"}) == 0);
    CHECK(fs::exists(fs::path(sim) / "x0.atdf"));
    CHECK(fs::exists(fs::path(sim) / "xT.atdf"));
    CHECK(fs::exists(fs::path(sim) / "xt_002.atdf"));
    CHECK(fs::exists(fs::path(sim) / "lambda_004.atdf"));
    CHECK(fs::exists(fs::path(sim) / "spec.json"));

    // estimating against the halfway frame recovers half the drift
    const auto est_path = (dir / "est.json").string();
    REQUIRE(run({"estimate", "--ref", (fs::path(sim) / "x0.atdf").string(), "--target",
                 (fs::path(sim) / "xt_002.atdf").string(), "--out", est_path}) == 0);
    const Estimate est = read_estimate(est_path);
    CHECK(std::abs(est.affine.theta_deg - 2.0) < 0.25);
    CHECK(std::abs(est.affine.tx_px - 3.0) < 0.5);
    CHECK(std::abs(est.affine.ty_px - (-1.5)) < 0.5);

    // flow map from the estimate
    const auto flow_path = (dir / "flow.atdf").string();
    REQUIRE(run({"flow", "--est", est_path, "--size", "64", "--stride", "8", "--out",
                 flow_path}) == 0);
    const FrameTensor flow = read_atdf(flow_path);
    CHECK(flow.channels == 2);
    CHECK(flow.height == 8);

    fs::remove_all(dir);
}

TEST_CASE("identical seeded runs are byte-identical") {
    const auto dir = fresh_dir("stemdeg_cli_seed");
    const auto a = (dir / "a.atdf").string();
    const auto b = (dir / "b.atdf").string();
    REQUIRE(run({"gen-atoms", "--out", a, "--size", "64", "--seed", "9"}) == 0);
    REQUIRE(run({"gen-atoms", "--out", b, "--size", "64", "--seed", "9"}) == 0);
    CHECK(slurp(a) == slurp(b));

    // rerun the exact same argv and compare against a snapshot of the first run
    const auto sim = dir / "sim";
    const std::vector<std::string> argv{"simulate", "--in",      a,     "--theta",
                                        "3",        "--tx",      "2",   "--ty",
                                        "1",        "--steps",   "3",   "--out-dir",
                                        sim.string(), "--seed",  "4"};
    REQUIRE(run(argv) == 0);
    const auto snapshot = dir / "snapshot";
    fs::copy(sim, snapshot, fs::copy_options::recursive);
    REQUIRE(run(argv) == 0);
    for (const auto& entry : fs::directory_iterator(snapshot)) {
        const auto rerun = sim / entry.path().filename();
        REQUIRE(fs::exists(rerun));
        CHECK(slurp(entry.path()) == slurp(rerun));
    }
    fs::remove_all(dir);
}

TEST_CASE("bench-drift writes the aggregated CSV") {
    const auto dir = fresh_dir("stemdeg_cli_bench");
    const auto out = (dir / "drift.csv").string();
    REQUIRE(run({"bench-drift", "--rot", "2", "--drift", "2", "--crop", "96",
                 "--trials", "2", "--out", out, "--seed", "3"}) == 0);
    const std::string csv = slurp(out);
    CHECK(csv.find("rot_set_deg,drift_set_px,mean_drift_err_px,mean_rot_err_deg") !=
          std::string::npos);
    CHECK(csv.find("\n2,2,") != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("bench-damage writes one row per trial") {
    const auto dir = fresh_dir("stemdeg_cli_dmg");
    const auto out = (dir / "dmg.csv").string();
    REQUIRE(run({"bench-damage", "--noise-type", "perlin", "--frames", "6",
                 "--max-intensity", "0.9", "--trials", "2", "--size", "64", "--out",
                 out, "--seed", "1"}) == 0);
    const std::string csv = slurp(out);
    CHECK(csv.find("noise_type,mae,mse,rmse,r2,var") != std::string::npos);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);  // header + 2 trials
    CHECK(run({"bench-damage", "--noise-type", "bogus", "--out", out}) == 1);
    fs::remove_all(dir);
}

TEST_CASE("infer writes a frame sequence") {
    const auto dir = fresh_dir("stemdeg_cli_infer");
    const auto atoms = (dir / "atoms.atdf").string();
    REQUIRE(run({"gen-atoms", "--out", atoms, "--size", "64", "--seed", "6"}) == 0);
    const auto sim = (dir / "sim").string();
    REQUIRE(run({"simulate", "--in", atoms, "--theta", "2", "--tx", "3", "--ty", "-1",
                 "--steps", "5", "--noise", "none", "--out-dir", sim, "--seed",
                 "7"}) == 0);
    const auto inf = (dir / "inf").string();
    REQUIRE(run({"infer", "--ref", (fs::path(sim) / "x0.atdf").string(), "--target",
                 (fs::path(sim) / "xT.atdf").string(), "--n", "3", "--steps", "5",
                 "--out-dir", inf}) == 0);
    CHECK(fs::exists(fs::path(inf) / "frame_000.atdf"));
    CHECK(fs::exists(fs::path(inf) / "frame_003.atdf"));
    CHECK(fs::exists(fs::path(inf) / "lambda_003.atdf"));
    CHECK(fs::exists(fs::path(inf) / "sequence.json"));
    fs::remove_all(dir);
}
