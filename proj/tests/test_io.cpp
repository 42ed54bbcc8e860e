#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

#include "stemdeg/io.hpp"
#include "stemdeg/rng.hpp"
#include "stemdeg/synth.hpp"

using namespace stemdeg;
namespace fs = std::filesystem;

namespace {

fs::path tmp_file(const char* name) {
    return fs::temp_directory_path() / name;
}

ImageGrid random_image(int h, int w, std::uint64_t seed) {
    ImageGrid img(h, w);
    Rng rng(seed);
    for (float& v : img.data) v = static_cast<float>(rng.uniform());
    return img;
}

} // namespace

TEST_CASE("ATDF image round trip is bit-exact") {
    const ImageGrid img = random_image(7, 5, 1);
    const auto path = tmp_file("stemdeg_io_a.atdf").string();
    write_atdf_image(path, img);
    const ImageGrid back = read_atdf_image(path);
    CHECK(back.height == 7);
    CHECK(back.width == 5);
    CHECK(back.data == img.data);
    fs::remove(path);
}

TEST_CASE("ATDF two-channel round trip") {
    FrameTensor t;
    t.height = 4;
    t.width = 6;
    t.channels = 2;
    t.data.resize(48);
    Rng rng(2);
    for (float& v : t.data) v = static_cast<float>(rng.uniform(-3.0, 3.0));
    const auto path = tmp_file("stemdeg_io_b.atdf").string();
    write_atdf(path, t);
    const FrameTensor back = read_atdf(path);
    CHECK(back.channels == 2);
    CHECK(back.data == t.data);
    fs::remove(path);
}

TEST_CASE("ATDF rejects bad magic and truncation") {
    const auto path = tmp_file("stemdeg_io_bad.atdf").string();
    {
        std::ofstream f(path, std::ios::binary);
        f << "WRONG\n3 3 1\n";
    }
    CHECK_THROWS_AS(read_atdf(path), FormatError);
    {
        std::ofstream f(path, std::ios::binary);
        f << "ATDF1\n3 3 1\nxx";  // payload too short
    }
    CHECK_THROWS_AS(read_atdf(path), FormatError);
    fs::remove(path);
    CHECK_THROWS_AS(read_atdf(path), FormatError);  // missing file
}

TEST_CASE("PGM quantization bounds") {
    const auto path = tmp_file("stemdeg_io_c.pgm").string();
    ImageGrid img(3, 3, 0.0f);
    img.at(0, 0) = 1.0f;
    img.at(0, 1) = 0.3f;
    img.at(1, 1) = 0.5f;
    write_pgm16(path, img);
    const ImageGrid back = read_pgm16(path);
    CHECK(back.at(0, 0) == 1.0f);
    CHECK(std::abs(back.at(0, 1) - 0.3f) <= 0.5f / 65535.0f);
    for (std::size_t i = 0; i < img.data.size(); ++i)
        CHECK(std::abs(back.data[i] - img.data[i]) <= 0.5f / 65535.0f);
    fs::remove(path);
}

TEST_CASE("PGM round trip over random data stays within half a level") {
    const ImageGrid img = random_image(17, 23, 3);
    const auto path = tmp_file("stemdeg_io_d.pgm").string();
    write_pgm16(path, img);
    const ImageGrid back = read_pgm16(path);
    for (std::size_t i = 0; i < img.data.size(); ++i)
        CHECK(std::abs(back.data[i] - img.data[i]) <= 0.5f / 65535.0f);
    fs::remove(path);
}

TEST_CASE("PGM rejects non-P5 input") {
    const auto path = tmp_file("stemdeg_io_e.pgm").string();
    {
        std::ofstream f(path, std::ios::binary);
        f << "P2\n3 3\n65535\n";
    }
    CHECK_THROWS_AS(read_pgm16(path), FormatError);
    {
        std::ofstream f(path, std::ios::binary);
        f << "P5\n3 3\n255\n";  // 8-bit maxval unsupported
    }
    CHECK_THROWS_AS(read_pgm16(path), FormatError);
    fs::remove(path);
}

TEST_CASE("estimate file uses the exact key set") {
    Estimate est;
    est.affine = {5.5, 1.25, -2.5};
    est.decay = DecayMap(6, 6, 0.75f);
    est.residual = 0.0125;
    est.converged = true;
    est.iterations = 17;
    est.valid_fraction = 0.5;
    const auto dir = fs::temp_directory_path();
    const auto jpath = (dir / "stemdeg_est.json").string();
    const auto dpath = (dir / "stemdeg_est_decay.atdf").string();
    write_estimate(jpath, est, dpath);

    std::ifstream f(jpath);
    nlohmann::json j;
    f >> j;
    std::set<std::string> keys;
    for (auto it = j.begin(); it != j.end(); ++it) keys.insert(it.key());
    CHECK(keys == std::set<std::string>{"theta_deg", "tx_px", "ty_px", "residual",
                                        "converged", "iterations", "valid_fraction",
                                        "decay_path"});

    const Estimate back = read_estimate(jpath);
    CHECK(back.affine.theta_deg == est.affine.theta_deg);
    CHECK(back.affine.tx_px == est.affine.tx_px);
    CHECK(back.affine.ty_px == est.affine.ty_px);
    CHECK(back.residual == est.residual);
    CHECK(back.converged == est.converged);
    CHECK(back.iterations == est.iterations);
    CHECK(back.valid_fraction == est.valid_fraction);
    CHECK(back.decay.data == est.decay.data);
    fs::remove(jpath);
    fs::remove(dpath);
}

TEST_CASE("degradation spec JSON round trip") {
    DegradationSpecFile s;
    s.affine_T = {-7.0, 2.5, 3.5};
    s.total_steps = 12;
    s.min_survival = 0.15;
    s.decay_cells = 5;
    s.decay_octaves = 3;
    s.noise.dose = 321.0;
    s.noise.jitter_enabled = false;
    s.seed = 99;
    s.lambda_path = "lambda_012.atdf";
    const auto path = tmp_file("stemdeg_spec.json").string();
    write_spec_json(path, s);
    const DegradationSpecFile back = read_spec_json(path);
    CHECK(back.affine_T.theta_deg == s.affine_T.theta_deg);
    CHECK(back.total_steps == s.total_steps);
    CHECK(back.min_survival == s.min_survival);
    CHECK(back.decay_cells == s.decay_cells);
    CHECK(back.noise.dose == s.noise.dose);
    CHECK(back.noise.jitter_enabled == false);
    CHECK(back.seed == 99);
    CHECK(back.lambda_path == s.lambda_path);
    fs::remove(path);
}
