#include <doctest.h>

#include <cmath>

#include "stemdeg/metrics.hpp"
#include "stemdeg/rng.hpp"
#include "stemdeg/synth.hpp"

using namespace stemdeg;

TEST_CASE("damage_intensity basics") {
    CHECK(damage_intensity(DecayMap(8, 8, 1.0f)) == doctest::Approx(0.0));
    CHECK(damage_intensity(DecayMap(8, 8, 0.1f)) == doctest::Approx(0.9).epsilon(1e-6));
    CHECK_THROWS_AS(damage_intensity(DecayMap()), DimensionError);
}

TEST_CASE("damage_intensity is affine in the decay map") {
    const DecayMap lam = make_final_decay(perlin_field(32, 32, 2, 2, 5), 0.2);
    const double base = damage_intensity(lam);
    for (double c : {0.0, 0.25, 0.5, 1.0}) {
        DecayMap scaled(32, 32);
        for (std::size_t i = 0; i < lam.data.size(); ++i)
            scaled.data[i] = static_cast<float>(1.0 - c * (1.0 - lam.data[i]));
        CHECK(damage_intensity(scaled) == doctest::Approx(c * base).epsilon(1e-5));
    }
}

TEST_CASE("regression_report on a perfect prediction") {
    const std::vector<double> gt{0.0, 0.1, 0.2, 0.3};
    const RegressionReport r = regression_report(gt, gt);
    CHECK(r.mae == 0.0);
    CHECK(r.mse == 0.0);
    CHECK(r.rmse == 0.0);
    CHECK(r.r2 == 1.0);
    CHECK(r.var_err == 0.0);
}

TEST_CASE("regression_report with a constant bias") {
    const std::vector<double> gt{0.0, 0.1, 0.2, 0.3, 0.4};
    std::vector<double> pred = gt;
    for (double& v : pred) v += 0.1;
    const RegressionReport r = regression_report(pred, gt);
    CHECK(r.mae == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(r.mse == doctest::Approx(0.01).epsilon(1e-12));
    CHECK(r.rmse == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(r.var_err == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(r.rmse == doctest::Approx(std::sqrt(r.mse)).epsilon(1e-12));
    CHECK(r.mae <= r.rmse + 1e-12);
    CHECK(r.r2 <= 1.0);
}

TEST_CASE("regression_report rejects degenerate input") {
    CHECK_THROWS_AS(regression_report({1.0, 2.0}, {0.5, 0.5}), DegenerateInputError);
    CHECK_THROWS_AS(regression_report({1.0}, {0.5}), DimensionError);
    CHECK_THROWS_AS(regression_report({1.0, 2.0}, {0.5, 0.6, 0.7}), DimensionError);
}

TEST_CASE("drift_error is an L1 translation distance") {
    CHECK(drift_error({0, 3, -1}, {0, 1, 1}) == doctest::Approx(4.0));
    CHECK(drift_error({5, 2, 2}, {9, 2, 2}) == 0.0);
    // symmetry and positivity
    Rng rng(3);
    for (int i = 0; i < 20; ++i) {
        const AffineParams a{0, rng.uniform(-9, 9), rng.uniform(-9, 9)};
        const AffineParams b{0, rng.uniform(-9, 9), rng.uniform(-9, 9)};
        CHECK(drift_error(a, b) == doctest::Approx(drift_error(b, a)));
        CHECK(drift_error(a, b) >= 0.0);
    }
}

TEST_CASE("rotation_error wraps into [0, 180]") {
    CHECK(rotation_error({10.5, 0, 0}, {10.0, 0, 0}) == doctest::Approx(0.5));
    CHECK(rotation_error({179.0, 0, 0}, {-179.0, 0, 0}) == doctest::Approx(2.0));
    CHECK(rotation_error({3.0, 0, 0}, {3.0, 0, 0}) == 0.0);
    CHECK(rotation_error({-170.0, 0, 0}, {170.0, 0, 0}) == doctest::Approx(20.0));
}

TEST_CASE("side_profile raw extraction and constants") {
    ImageGrid a(4, 6, 0.0f), b(4, 6, 0.25f);
    for (int c = 0; c < 6; ++c) a.at(2, c) = static_cast<float>(c);
    SUBCASE("sigma 0 returns raw rows") {
        const auto [pa, pb] = side_profile(a, b, 2, 0.0);
        for (int c = 0; c < 6; ++c) {
            CHECK(pa[c] == doctest::Approx(c));
            CHECK(pb[c] == doctest::Approx(0.25));
        }
    }
    SUBCASE("constant rows are invariant under smoothing") {
        const auto [pa, pb] = side_profile(b, b, 1, 2.0);
        for (double v : pa) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));
    }
    SUBCASE("row out of range") {
        CHECK_THROWS_AS(side_profile(a, b, 4, 1.0), DimensionError);
    }
}

TEST_CASE("smoothing preserves the sum of an interior profile") {
    ImageGrid a(3, 64, 0.0f);
    for (int c = 20; c < 44; ++c)
        a.at(1, c) = static_cast<float>(std::exp(-(c - 32) * (c - 32) / 18.0));
    const auto [raw, _] = side_profile(a, a, 1, 0.0);
    const auto [smooth, __] = side_profile(a, a, 1, 2.0);
    double sum_raw = 0.0, sum_smooth = 0.0;
    for (double v : raw) sum_raw += v;
    for (double v : smooth) sum_smooth += v;
    CHECK(std::abs(sum_raw - sum_smooth) < 1e-6);
}

TEST_CASE("aligned profiles correlate at zero lag") {
    const ImageGrid img = gen_atom_map(AtomMapSpec{}, 64, 64);
    const auto [pa, pb] = side_profile(img, img, 32, 1.0);
    // cross-correlation peak over lags in [-8, 8]
    int best_lag = -99;
    double best = -1e300;
    for (int lag = -8; lag <= 8; ++lag) {
        double acc = 0.0;
        for (int c = 8; c < 56; ++c) acc += pa[c] * pb[c + lag];
        if (acc > best) {
            best = acc;
            best_lag = lag;
        }
    }
    CHECK(best_lag == 0);
}
