#include <doctest.h>

#include <cmath>

#include "stemdeg/metrics.hpp"
#include "stemdeg/rng.hpp"
#include "stemdeg/synth.hpp"

using namespace stemdeg;

namespace {

double lag1_autocorr(const ImageGrid& img) {
    double mean = 0.0;
    for (float v : img.data) mean += v;
    mean /= static_cast<double>(img.size());
    double num = 0.0, den = 0.0;
    for (int r = 0; r < img.height; ++r) {
        for (int c = 0; c + 1 < img.width; ++c) {
            num += (img.at(r, c) - mean) * (img.at(r, c + 1) - mean);
        }
    }
    for (float v : img.data) den += (v - mean) * (v - mean);
    return num / den;
}

} // namespace

TEST_CASE("gen_atom_map zero amplitude gives a zero image") {
    AtomMapSpec spec;
    spec.amp_lo = spec.amp_hi = 0.0;
    const ImageGrid img = gen_atom_map(spec, 48, 48);
    for (float v : img.data) CHECK(v == 0.0f);
}

TEST_CASE("gen_atom_map single centered blob peaks at one") {
    AtomMapSpec spec;
    spec.a1x = 1000.0;
    spec.a1y = 0.0;
    spec.a2x = 0.0;
    spec.a2y = 1000.0;
    spec.amp_lo = spec.amp_hi = 1.0;
    spec.width_lo = spec.width_hi = 2.0;
    spec.jitter_sigma = 0.0;
    const ImageGrid img = gen_atom_map(spec, 65, 65);
    CHECK(img.at(32, 32) == 1.0f);
    CHECK(img.at(32, 34) == doctest::Approx(std::exp(-4.0 / 8.0)).epsilon(1e-5));
    CHECK(img.at(0, 0) == 0.0f);
}

TEST_CASE("gen_atom_map is deterministic per seed") {
    AtomMapSpec spec;
    spec.seed = 42;
    const ImageGrid a = gen_atom_map(spec, 64, 64);
    const ImageGrid b = gen_atom_map(spec, 64, 64);
    CHECK(a.data == b.data);
    spec.seed = 43;
    CHECK(gen_atom_map(spec, 64, 64).data != a.data);
}

TEST_CASE("gen_atom_map rejects bad specs") {
    AtomMapSpec spec;
    CHECK_THROWS_AS(gen_atom_map(spec, 16, 64), InvalidParameterError);
    spec.a2x = spec.a1x * 2;  // parallel lattice vectors
    spec.a2y = spec.a1y * 2;
    CHECK_THROWS_AS(gen_atom_map(spec, 64, 64), InvalidParameterError);
}

TEST_CASE("perlin_field spans [0,1] and is deterministic") {
    const ImageGrid f = perlin_field(40, 40, 1, 1, 5);
    float mn = 2.0f, mx = -1.0f;
    for (float v : f.data) {
        mn = std::min(mn, v);
        mx = std::max(mx, v);
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
    CHECK(mn == 0.0f);
    CHECK(mx == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(perlin_field(40, 40, 1, 1, 5).data == f.data);
}

TEST_CASE("perlin_field is smoother than white noise") {
    const ImageGrid f = perlin_field(64, 64, 4, 2, 9);
    ImageGrid white(64, 64);
    Rng rng(9);
    for (float& v : white.data) v = static_cast<float>(rng.uniform());
    CHECK(lag1_autocorr(f) > lag1_autocorr(white));
}

TEST_CASE("perlin_field validates parameters") {
    CHECK_THROWS_AS(perlin_field(32, 32, 0, 1, 0), InvalidParameterError);
    CHECK_THROWS_AS(perlin_field(32, 32, 1, 0, 0), InvalidParameterError);
}

TEST_CASE("make_final_decay maps the field affinely") {
    ImageGrid field(8, 8, 0.5f);
    CHECK(make_final_decay(field, 0.1).at(0, 0) == doctest::Approx(0.55).epsilon(1e-6));
    ImageGrid zeros(8, 8, 0.0f);
    CHECK(make_final_decay(zeros, 0.0).at(0, 0) == 0.0f);
    const DecayMap near_one = make_final_decay(field, 1.0 - 1e-9);
    CHECK(near_one.at(0, 0) == doctest::Approx(1.0).epsilon(1e-8));
    CHECK_THROWS_AS(make_final_decay(field, 1.0), InvalidParameterError);
    CHECK_THROWS_AS(make_final_decay(field, -0.1), InvalidParameterError);
}

TEST_CASE("interpolate_decay anchors and monotonicity") {
    const DecayMap lam_T = make_final_decay(perlin_field(32, 32, 2, 2, 3), 0.1);
    const double T = 10.0;
    SUBCASE("t = 0 gives all ones") {
        for (float v : interpolate_decay(lam_T, 0.0, T).data) CHECK(v == 1.0f);
    }
    SUBCASE("t = T reproduces lambda_T exactly") {
        CHECK(interpolate_decay(lam_T, T, T).data == lam_T.data);
    }
    SUBCASE("midpoint value") {
        DecayMap flat(4, 4, 0.4f);
        CHECK(interpolate_decay(flat, 5.0, T).at(0, 0) ==
              doctest::Approx(0.7).epsilon(1e-6));
    }
    SUBCASE("pointwise non-increasing in t") {
        DecayMap prev = interpolate_decay(lam_T, 0.0, T);
        for (int t = 1; t <= 10; ++t) {
            const DecayMap cur = interpolate_decay(lam_T, t, T);
            for (std::size_t i = 0; i < cur.data.size(); ++i)
                CHECK(cur.data[i] <= prev.data[i]);
            prev = cur;
        }
    }
    SUBCASE("t out of range") {
        CHECK_THROWS_AS(interpolate_decay(lam_T, 11.0, T), InvalidParameterError);
        CHECK_THROWS_AS(interpolate_decay(lam_T, -1.0, T), InvalidParameterError);
    }
}

TEST_CASE("interpolate_affine scales parameters") {
    const AffineParams pT{10.0, 8.0, -4.0};
    const AffineParams p0 = interpolate_affine(pT, 0.0, 10.0);
    CHECK(p0.theta_deg == 0.0);
    CHECK(p0.tx_px == 0.0);
    CHECK(p0.ty_px == 0.0);
    const AffineParams pq = interpolate_affine(pT, 2.5, 10.0);
    CHECK(pq.theta_deg == doctest::Approx(2.5));
    CHECK(pq.tx_px == doctest::Approx(2.0));
    CHECK(pq.ty_px == doctest::Approx(-1.0));
    const AffineParams pend = interpolate_affine(pT, 10.0, 10.0);
    CHECK(pend.theta_deg == pT.theta_deg);
    CHECK(pend.tx_px == pT.tx_px);
    CHECK(pend.ty_px == pT.ty_px);
}

TEST_CASE("interpolated transforms keep det-1 rotation blocks") {
    Rng rng(31);
    for (int i = 0; i < 100; ++i) {
        const AffineParams pT{rng.uniform(-60.0, 60.0), rng.uniform(-30.0, 30.0),
                              rng.uniform(-30.0, 30.0)};
        const double t = rng.uniform(0.0, 10.0);
        const AffineMatrix m = build_affine_matrix(interpolate_affine(pT, t, 10.0));
        CHECK(std::abs(m.det2x2() - 1.0) < 1e-9);
    }
}

TEST_CASE("add_noise with everything disabled is the identity") {
    const ImageGrid x = gen_atom_map(AtomMapSpec{}, 48, 48);
    CHECK(add_noise(x, NoiseConfig::disabled(), 3).data == x.data);
}

TEST_CASE("add_noise at a huge dose approaches the clean image") {
    const ImageGrid x = gen_atom_map(AtomMapSpec{}, 64, 64);
    NoiseConfig cfg = NoiseConfig::disabled();
    cfg.poisson_enabled = true;
    cfg.dose = 1e9;
    const ImageGrid y = add_noise(x, cfg, 1);
    double mae = 0.0;
    for (std::size_t i = 0; i < x.data.size(); ++i)
        mae += std::abs(static_cast<double>(y.data[i]) - x.data[i]);
    mae /= static_cast<double>(x.size());
    CHECK(mae < 1e-3);
}

TEST_CASE("Poisson variance matches mean over dose") {
    ImageGrid x(256, 256, 0.5f);
    NoiseConfig cfg = NoiseConfig::disabled();
    cfg.poisson_enabled = true;
    cfg.dose = 100.0;
    const ImageGrid y = add_noise(x, cfg, 7);
    double mean = 0.0;
    for (float v : y.data) mean += v;
    mean /= static_cast<double>(y.size());
    double var = 0.0;
    for (float v : y.data) var += (v - mean) * (v - mean);
    var /= static_cast<double>(y.size() - 1);
    CHECK(var == doctest::Approx(0.005).epsilon(0.2));
}

TEST_CASE("add_noise is deterministic and seed-sensitive") {
    const ImageGrid x = gen_atom_map(AtomMapSpec{}, 48, 48);
    NoiseConfig cfg;  // defaults: everything on
    CHECK(add_noise(x, cfg, 5).data == add_noise(x, cfg, 5).data);
    CHECK(add_noise(x, cfg, 5).data != add_noise(x, cfg, 6).data);
}

TEST_CASE("gen_sequence_sample endpoints") {
    const ImageGrid x0 = gen_atom_map(AtomMapSpec{}, 64, 64);
    DegradationSpec spec;
    spec.lambda_T = make_final_decay(perlin_field(64, 64, 3, 2, 2), 0.3);
    spec.affine_T = {6.0, 4.0, -3.0};
    spec.total_steps = 10;
    spec.noise = NoiseConfig::disabled();

    SUBCASE("t = 0 reproduces x0 bit-exactly") {
        const SequenceSample s = gen_sequence_sample(x0, spec, 0.0, 1);
        CHECK(s.xt_clean.data == x0.data);
        CHECK(s.x0_noisy.data == x0.data);
    }
    SUBCASE("t = T matches the direct forward model bit-exactly") {
        const SequenceSample s = gen_sequence_sample(x0, spec, 10.0, 1);
        CHECK(s.xt_clean.data ==
              degrade_forward(x0, spec.lambda_T, spec.affine_T).data);
        CHECK(s.xT_noisy.data == s.xt_clean.data);
    }
    SUBCASE("total intensity is non-increasing in t for in-frame drift") {
        DegradationSpec gentle = spec;
        gentle.affine_T = {2.0, 1.5, -1.0};
        double prev = 1e300;
        for (int t = 0; t <= 10; ++t) {
            const SequenceSample s = gen_sequence_sample(x0, gentle, t, 1);
            double sum = 0.0;
            for (float v : s.xt_clean.data) sum += v;
            CHECK(sum <= prev + 1e-3);
            prev = sum;
        }
    }
}

TEST_CASE("gen_damage_benchmark ramps intensity linearly and exactly") {
    const ImageGrid x0 = gen_atom_map(AtomMapSpec{}, 96, 96);
    for (const auto type : {DamageNoiseType::gaussian_blackhole,
                            DamageNoiseType::perlin, DamageNoiseType::random}) {
        const auto frames = gen_damage_benchmark(x0, type, 10, 0.9, 17);
        REQUIRE(frames.size() == 10);
        for (float v : frames[0].lambda.data) CHECK(v == 1.0f);
        CHECK(frames[0].delta == 0.0);
        for (int k = 0; k < 10; ++k) {
            CHECK(frames[k].delta == doctest::Approx(0.1 * k).epsilon(1e-12));
            CHECK(std::abs(damage_intensity(frames[k].lambda) - frames[k].delta) <
                  1e-6);
            validate_decay(frames[k].lambda);
        }
    }
}

TEST_CASE("gen_damage_benchmark validates inputs") {
    const ImageGrid x0 = gen_atom_map(AtomMapSpec{}, 48, 48);
    CHECK_THROWS_AS(gen_damage_benchmark(x0, DamageNoiseType::perlin, 1, 0.9, 0),
                    InvalidParameterError);
    CHECK_THROWS_AS(gen_damage_benchmark(x0, DamageNoiseType::perlin, 10, 0.0, 0),
                    InvalidParameterError);
}

TEST_CASE("gen_drift_benchmark with zero ranges is the identity pair") {
    const ImageGrid img = gen_atom_map(AtomMapSpec{}, 160, 160);
    const DriftSample s = gen_drift_benchmark(img, 0.0, 0.0, 128, 3);
    CHECK(s.truth.theta_deg == 0.0);
    CHECK(s.truth.tx_px == 0.0);
    CHECK(s.truth.ty_px == 0.0);
    CHECK(s.xT.data == s.x0.data);
}

TEST_CASE("gen_drift_benchmark draws inside the configured boxes") {
    const ImageGrid img = gen_atom_map(AtomMapSpec{}, 200, 200);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const DriftSample s = gen_drift_benchmark(img, 5.0, 5.0, 128, seed);
        CHECK(std::abs(s.truth.theta_deg) <= 5.0);
        CHECK(std::abs(s.truth.tx_px) <= 5.0);
        CHECK(std::abs(s.truth.ty_px) <= 5.0);
        CHECK(s.x0.height == 128);
        CHECK(s.xT.width == 128);
    }
}

TEST_CASE("gen_drift_benchmark needs margin") {
    const ImageGrid img = gen_atom_map(AtomMapSpec{}, 140, 140);
    CHECK_THROWS_AS(gen_drift_benchmark(img, 5.0, 10.0, 128, 0), DimensionError);
}

TEST_CASE("sample source is deterministic per index") {
    SampleSourceConfig cfg;
    cfg.noise = NoiseConfig::disabled();
    const SampleSource src = make_sample_source(cfg, 123);
    const SequenceSample a = src(4);
    const SequenceSample b = src(4);
    CHECK(a.x0_noisy.data == b.x0_noisy.data);
    CHECK(a.xt_clean.data == b.xt_clean.data);
    CHECK(a.t == b.t);
    const SequenceSample c = src(5);
    CHECK(a.x0_noisy.data != c.x0_noisy.data);
    CHECK(a.t >= 1.0);
    CHECK(a.t <= cfg.total_steps);
}
