#include <doctest.h>

#include <cmath>

#include "stemdeg/image.hpp"
#include "stemdeg/rng.hpp"
#include "stemdeg/synth.hpp"

using namespace stemdeg;

namespace {

ImageGrid impulse(int h, int w, int row, int col) {
    ImageGrid img(h, w, 0.0f);
    img.at(row, col) = 1.0f;
    return img;
}

std::pair<int, int> argmax(const ImageGrid& img) {
    int br = 0, bc = 0;
    float best = img.at(0, 0);
    for (int r = 0; r < img.height; ++r)
        for (int c = 0; c < img.width; ++c)
            if (img.at(r, c) > best) {
                best = img.at(r, c);
                br = r;
                bc = c;
            }
    return {br, bc};
}

/// Band-limited test image: Gaussian blobs confined to the central region so
/// that moderate warps lose no mass.
ImageGrid interior_blobs(int size, std::uint64_t seed) {
    ImageGrid img(size, size, 0.0f);
    Rng rng(seed);
    for (int k = 0; k < 12; ++k) {
        const double cx = size / 2.0 + rng.uniform(-size / 5.0, size / 5.0);
        const double cy = size / 2.0 + rng.uniform(-size / 5.0, size / 5.0);
        const double amp = rng.uniform(0.4, 1.0);
        const double sig = rng.uniform(2.0, 4.0);
        for (int r = 0; r < size; ++r)
            for (int c = 0; c < size; ++c) {
                const double d2 = (r - cy) * (r - cy) + (c - cx) * (c - cx);
                img.at(r, c) += static_cast<float>(amp * std::exp(-d2 / (2 * sig * sig)));
            }
    }
    for (float& v : img.data) v = std::min(v, 1.0f);
    return img;
}

} // namespace

TEST_CASE("build_affine_matrix identity") {
    const AffineMatrix m = build_affine_matrix({0.0, 0.0, 0.0});
    CHECK(m.a == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(m.b == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(m.c == 0.0);
    CHECK(m.d == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(m.e == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(m.f == 0.0);
}

TEST_CASE("build_affine_matrix quarter turn") {
    const AffineMatrix m = build_affine_matrix({90.0, 0.0, 0.0});
    CHECK(std::abs(m.a) < 1e-12);
    CHECK(m.b == doctest::Approx(-1.0));
    CHECK(m.d == doctest::Approx(1.0));
    CHECK(std::abs(m.e) < 1e-12);
}

TEST_CASE("build_affine_matrix 5 degrees with translation") {
    const AffineMatrix m = build_affine_matrix({5.0, 5.0, 5.0});
    CHECK(m.a == doctest::Approx(0.99619470).epsilon(1e-7));
    CHECK(m.b == doctest::Approx(-0.08715574).epsilon(1e-7));
    CHECK(m.c == 5.0);
    CHECK(m.d == doctest::Approx(0.08715574).epsilon(1e-7));
    CHECK(m.e == doctest::Approx(0.99619470).epsilon(1e-7));
    CHECK(m.f == 5.0);
}

TEST_CASE("build_affine_matrix rejects non-finite input") {
    CHECK_THROWS_AS(build_affine_matrix({std::nan(""), 0.0, 0.0}),
                    InvalidParameterError);
    CHECK_THROWS_AS(build_affine_matrix({0.0, INFINITY, 0.0}), InvalidParameterError);
}

TEST_CASE("rotation block stays orthonormal") {
    Rng rng(7);
    for (int i = 0; i < 100; ++i) {
        const AffineParams p{rng.uniform(-179.0, 179.0), rng.uniform(-50.0, 50.0),
                             rng.uniform(-50.0, 50.0)};
        const AffineMatrix m = build_affine_matrix(p);
        CHECK(std::abs(m.det2x2() - 1.0) < 1e-9);
    }
}

TEST_CASE("parameter read-back inverts build_affine_matrix") {
    Rng rng(11);
    for (int i = 0; i < 100; ++i) {
        const AffineParams p{rng.uniform(-179.0, 179.0), rng.uniform(-30.0, 30.0),
                             rng.uniform(-30.0, 30.0)};
        const AffineParams q = params_from_matrix(build_affine_matrix(p));
        CHECK(std::abs(q.theta_deg - p.theta_deg) < 1e-9);
        CHECK(std::abs(q.tx_px - p.tx_px) < 1e-9);
        CHECK(std::abs(q.ty_px - p.ty_px) < 1e-9);
    }
}

TEST_CASE("invert_affine identity and translation") {
    const AffineMatrix id = invert_affine(AffineMatrix::identity());
    CHECK(id.a == doctest::Approx(1.0));
    CHECK(id.c == doctest::Approx(0.0));

    const AffineMatrix t = invert_affine(build_affine_matrix({0.0, 3.0, -2.0}));
    CHECK(t.c == doctest::Approx(-3.0));
    CHECK(t.f == doctest::Approx(2.0));
}

TEST_CASE("invert_affine composes to identity") {
    const AffineMatrix m = build_affine_matrix({30.0, 4.0, 1.0});
    const AffineMatrix c = compose_affine(m, invert_affine(m));
    CHECK(std::abs(c.a - 1.0) < 1e-9);
    CHECK(std::abs(c.b) < 1e-9);
    CHECK(std::abs(c.c) < 1e-9);
    CHECK(std::abs(c.d) < 1e-9);
    CHECK(std::abs(c.e - 1.0) < 1e-9);
    CHECK(std::abs(c.f) < 1e-9);
}

TEST_CASE("invert_affine rejects singular block") {
    AffineMatrix m;
    m.a = m.b = m.d = m.e = 0.0;
    CHECK_THROWS_AS(invert_affine(m), SingularTransformError);
}

TEST_CASE("warp identity is bit-exact") {
    const ImageGrid x = interior_blobs(48, 3);
    const ImageGrid y = warp(x, AffineMatrix::identity(), 0.0f);
    CHECK(y.data == x.data);
}

TEST_CASE("warp integer translation moves an impulse exactly") {
    const ImageGrid x = impulse(33, 33, 16, 16);
    const ImageGrid y = warp(x, build_affine_matrix({0.0, 3.0, 0.0}), 0.0f);
    CHECK(argmax(y) == std::pair(16, 19));
    CHECK(y.at(16, 19) == 1.0f);
    CHECK(y.at(16, 16) == 0.0f);
}

TEST_CASE("warp quarter turn maps coordinates through the matrix") {
    // impulse at centered coords (u, v) = (10, 0)
    const int n = 33, ctr = 16;
    const ImageGrid x = impulse(n, n, ctr, ctr + 10);
    const ImageGrid y = warp(x, build_affine_matrix({90.0, 0.0, 0.0}), 0.0f);
    // the matrix sends (10, 0) -> (0, 10): column ctr, row ctr + 10
    CHECK(argmax(y) == std::pair(ctr + 10, ctr));
}

TEST_CASE("warp round trip restores band-limited content") {
    const ImageGrid x = interior_blobs(96, 5);
    const AffineMatrix m = build_affine_matrix({10.0, 4.0, -3.0});
    const ImageGrid back = warp(warp(x, m, 0.0f), invert_affine(m), 0.0f);
    double mae = 0.0;
    for (std::size_t i = 0; i < x.data.size(); ++i)
        mae += std::abs(static_cast<double>(back.data[i]) - x.data[i]);
    mae /= static_cast<double>(x.size());
    CHECK(mae < 0.02);
}

TEST_CASE("warp round trip is exact for integer translations") {
    const ImageGrid x = impulse(33, 33, 16, 16);
    const AffineMatrix m = build_affine_matrix({0.0, 5.0, -7.0});
    const ImageGrid back = warp(warp(x, m, 0.0f), invert_affine(m), 0.0f);
    CHECK(back.data == x.data);
}

TEST_CASE("attenuate multiplies pointwise") {
    ImageGrid img(4, 4, 0.8f);
    SUBCASE("all-ones map is the identity") {
        const DecayMap lam(4, 4, 1.0f);
        CHECK(attenuate(img, lam).data == img.data);
    }
    SUBCASE("all-zero map blanks the image") {
        const DecayMap lam(4, 4, 0.0f);
        for (float v : attenuate(img, lam).data) CHECK(v == 0.0f);
    }
    SUBCASE("scalar product") {
        DecayMap lam(4, 4, 1.0f);
        lam.at(1, 2) = 0.25f;
        CHECK(attenuate(img, lam).at(1, 2) == doctest::Approx(0.2).epsilon(1e-6));
    }
    SUBCASE("shape mismatch is an error") {
        const DecayMap lam(4, 5, 1.0f);
        CHECK_THROWS_AS(attenuate(img, lam), DimensionError);
    }
}

TEST_CASE("attenuate is linear in the image and monotone in the map") {
    const ImageGrid x = interior_blobs(32, 9);
    DecayMap lam1(32, 32, 0.4f), lam2(32, 32, 0.7f);
    const ImageGrid a1 = attenuate(x, lam1);
    const ImageGrid a2 = attenuate(x, lam2);
    ImageGrid x2 = x;
    for (float& v : x2.data) v *= 2.0f;
    const ImageGrid a1x2 = attenuate(x2, lam1);
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        CHECK(a1.data[i] <= a2.data[i]);  // monotone in lambda
        CHECK(a1x2.data[i] == doctest::Approx(2.0 * a1.data[i]).epsilon(1e-6));
    }
}

TEST_CASE("degrade_forward with identity factors is bit-exact") {
    const ImageGrid x = interior_blobs(48, 13);
    const DecayMap ones(48, 48, 1.0f);
    CHECK(degrade_forward(x, ones, {0.0, 0.0, 0.0}).data == x.data);
}

TEST_CASE("degrade_forward scales by a uniform map") {
    const ImageGrid x = interior_blobs(48, 17);
    const DecayMap half(48, 48, 0.5f);
    const ImageGrid y = degrade_forward(x, half, {0.0, 0.0, 0.0});
    for (std::size_t i = 0; i < x.data.size(); ++i)
        CHECK(y.data[i] == 0.5f * x.data[i]);
}

TEST_CASE("degrade_forward equals the manual composition") {
    const ImageGrid x = interior_blobs(64, 19);
    const ImageGrid field = perlin_field(64, 64, 3, 2, 21);
    const DecayMap lam = make_final_decay(field, 0.2);
    const AffineParams p{7.0, 3.5, -2.25};
    const ImageGrid direct = degrade_forward(x, lam, p, 0.0f);
    const ImageGrid manual = warp(attenuate(x, lam), build_affine_matrix(p), 0.0f);
    CHECK(direct.data == manual.data);
}

TEST_CASE("validate_image rejects bad data") {
    ImageGrid img(4, 4, 0.5f);
    img.data[3] = -0.1f;
    CHECK_THROWS_AS(validate_image(img), InvalidParameterError);
    img.data[3] = std::nanf("");
    CHECK_THROWS_AS(validate_image(img), InvalidParameterError);
    img.data[3] = 0.1f;
    img.data.pop_back();
    CHECK_THROWS_AS(validate_image(img), DimensionError);
}

TEST_CASE("gaussian kernel is normalized and symmetric") {
    const auto k = gaussian_kernel_1d(2.0);
    double sum = 0.0;
    for (double v : k) sum += v;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    for (std::size_t i = 0; i < k.size() / 2; ++i)
        CHECK(k[i] == doctest::Approx(k[k.size() - 1 - i]).epsilon(1e-12));
    CHECK(gaussian_kernel_1d(0.0).size() == 1);
}
