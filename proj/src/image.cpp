#include "stemdeg/image.hpp"

#include <cmath>
#include <cstddef>

namespace stemdeg {

namespace {
constexpr double kPi = 3.14159265358979323846;

bool finite(double v) { return std::isfinite(v); }
} // namespace

void validate_image(const ImageGrid& img, const char* what) {
    if (img.height <= 0 || img.width <= 0)
        throw DimensionError(std::string(what) + ": empty dimensions");
    if (img.data.size() != static_cast<std::size_t>(img.height) * img.width)
        throw DimensionError(std::string(what) + ": data length does not match height*width");
    for (float v : img.data) {
        if (!std::isfinite(v) || v < 0.0f)
            throw InvalidParameterError(std::string(what) + ": values must be finite and >= 0");
    }
}

void validate_decay(const DecayMap& lam) {
    validate_image(lam, "decay map");
    for (float v : lam.data) {
        if (v > 1.0f)
            throw InvalidParameterError("decay map: values must lie in [0, 1]");
    }
}

AffineMatrix build_affine_matrix(const AffineParams& p) {
    if (!finite(p.theta_deg) || !finite(p.tx_px) || !finite(p.ty_px))
        throw InvalidParameterError("affine parameters must be finite");
    const double t = p.theta_deg * kPi / 180.0;
    const double ct = std::cos(t);
    const double st = std::sin(t);
    return {ct, -st, p.tx_px, st, ct, p.ty_px};
}

AffineParams params_from_matrix(const AffineMatrix& m) {
    AffineParams p;
    p.theta_deg = std::atan2(m.d, m.a) * 180.0 / kPi;
    p.tx_px = m.c;
    p.ty_px = m.f;
    return p;
}

AffineMatrix invert_affine(const AffineMatrix& m) {
    const double det = m.det2x2();
    if (std::abs(det) <= 1e-12)
        throw SingularTransformError("affine 2x2 block is singular");
    const double ia = m.e / det;
    const double ib = -m.b / det;
    const double id = -m.d / det;
    const double ie = m.a / det;
    // translation of the inverse: -B^-1 t
    return {ia, ib, -(ia * m.c + ib * m.f), id, ie, -(id * m.c + ie * m.f)};
}

AffineMatrix compose_affine(const AffineMatrix& m1, const AffineMatrix& m2) {
    return {m1.a * m2.a + m1.b * m2.d,
            m1.a * m2.b + m1.b * m2.e,
            m1.a * m2.c + m1.b * m2.f + m1.c,
            m1.d * m2.a + m1.e * m2.d,
            m1.d * m2.b + m1.e * m2.e,
            m1.d * m2.c + m1.e * m2.f + m1.f};
}

double bilinear_sample(const ImageGrid& img, double x, double y, double fill) {
    const int w = img.width;
    const int h = img.height;
    if (x < 0.0 || y < 0.0 || x > w - 1 || y > h - 1) return fill;
    int ix = static_cast<int>(std::floor(x));
    int iy = static_cast<int>(std::floor(y));
    if (ix == w - 1) --ix; // sample exactly on the last column/row stays exact
    if (iy == h - 1) --iy;
    const double fx = x - ix;
    const double fy = y - iy;
    const double v00 = img.at(iy, ix);
    const double v01 = img.at(iy, ix + 1);
    const double v10 = img.at(iy + 1, ix);
    const double v11 = img.at(iy + 1, ix + 1);
    return (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01) +
           fy * ((1.0 - fx) * v10 + fx * v11);
}

namespace {

ImageGrid warp_impl(const ImageGrid& img, const AffineMatrix& m, float fill,
                    std::vector<std::uint8_t>* mask) {
    validate_image(img);
    const AffineMatrix inv = invert_affine(m);
    const int h = img.height;
    const int w = img.width;
    const double cx = (w - 1) / 2.0;
    const double cy = (h - 1) / 2.0;
    ImageGrid out(h, w);
    if (mask) mask->assign(static_cast<std::size_t>(h) * w, 0);
    for (int r = 0; r < h; ++r) {
        const double v = r - cy;
        for (int c = 0; c < w; ++c) {
            const double u = c - cx;
            double su, sv;
            apply_affine(inv, u, v, su, sv);
            const double x = su + cx;
            const double y = sv + cy;
            const bool inside = x >= 0.0 && y >= 0.0 && x <= w - 1 && y <= h - 1;
            out.at(r, c) = inside
                               ? static_cast<float>(bilinear_sample(img, x, y, fill))
                               : fill;
            if (mask && inside) (*mask)[static_cast<std::size_t>(r) * w + c] = 1;
        }
    }
    return out;
}

} // namespace

ImageGrid warp(const ImageGrid& img, const AffineMatrix& m, float fill) {
    return warp_impl(img, m, fill, nullptr);
}

ImageGrid warp_with_mask(const ImageGrid& img, const AffineMatrix& m, float fill,
                         std::vector<std::uint8_t>& mask) {
    return warp_impl(img, m, fill, &mask);
}

ImageGrid attenuate(const ImageGrid& img, const DecayMap& lam) {
    if (!img.same_shape(lam))
        throw DimensionError("attenuate: image and decay map shapes differ");
    ImageGrid out(img.height, img.width);
    for (std::size_t i = 0; i < img.data.size(); ++i)
        out.data[i] = img.data[i] * lam.data[i];
    return out;
}

ImageGrid degrade_forward(const ImageGrid& x0, const DecayMap& lam,
                          const AffineParams& params, float fill) {
    return warp(attenuate(x0, lam), build_affine_matrix(params), fill);
}

std::vector<double> gaussian_kernel_1d(double sigma) {
    if (sigma <= 0.0) return {1.0};
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k(2 * radius + 1);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        const double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
        k[i + radius] = v;
        sum += v;
    }
    for (double& v : k) v /= sum;
    return k;
}

ImageGrid gaussian_blur(const ImageGrid& img, double sigma) {
    if (sigma <= 0.0) return img;
    const auto k = gaussian_kernel_1d(sigma);
    const int radius = static_cast<int>(k.size() / 2);
    const int h = img.height;
    const int w = img.width;
    ImageGrid tmp(h, w);
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i) {
                const int cc = c + i;
                if (cc >= 0 && cc < w) acc += k[i + radius] * img.at(r, cc);
            }
            tmp.at(r, c) = static_cast<float>(acc);
        }
    }
    ImageGrid out(h, w);
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i) {
                const int rr = r + i;
                if (rr >= 0 && rr < h) acc += k[i + radius] * tmp.at(rr, c);
            }
            out.at(r, c) = static_cast<float>(acc);
        }
    }
    return out;
}

} // namespace stemdeg
