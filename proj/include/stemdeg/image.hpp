#pragma once

#include <cstdint>
#include <vector>

#include "stemdeg/errors.hpp"

namespace stemdeg {

/// H x W grayscale intensity field, row-major float32 storage.
/// Values are dimensionless, non-negative, nominally in [0, 1].
struct ImageGrid {
    int height = 0;
    int width = 0;
    std::vector<float> data;

    ImageGrid() = default;
    ImageGrid(int h, int w, float fill = 0.0f)
        : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}

    float& at(int row, int col) { return data[static_cast<std::size_t>(row) * width + col]; }
    float at(int row, int col) const { return data[static_cast<std::size_t>(row) * width + col]; }
    std::size_t size() const { return data.size(); }
    bool same_shape(const ImageGrid& o) const { return height == o.height && width == o.width; }
};

/// Per-pixel survival coefficients in [0, 1]; same layout as ImageGrid.
using DecayMap = ImageGrid;

/// Rigid drift parameterization: in-plane rotation (degrees) plus translation
/// (pixels). Positive angles sweep the +x axis toward +y (rows increase
/// downward).
struct AffineParams {
    double theta_deg = 0.0;
    double tx_px = 0.0;
    double ty_px = 0.0;
};

/// 2x3 affine transform [[a,b,c],[d,e,f]] mapping centered source coordinates
/// (u, v) = (col - (W-1)/2, row - (H-1)/2) to centered destination
/// coordinates.
struct AffineMatrix {
    double a = 1.0, b = 0.0, c = 0.0;
    double d = 0.0, e = 1.0, f = 0.0;

    static AffineMatrix identity() { return {}; }
    double det2x2() const { return a * e - b * d; }
};

/// Rotation+translation matrix from parameters:
///   [[cos t, -sin t, tx], [sin t, cos t, ty]], t in radians from theta_deg.
/// Throws InvalidParameterError on non-finite input.
AffineMatrix build_affine_matrix(const AffineParams& params);

/// Reads (theta_deg, tx, ty) back from a rotation+translation matrix.
AffineParams params_from_matrix(const AffineMatrix& m);

/// Inverse transform. Throws SingularTransformError when |det| <= 1e-12.
AffineMatrix invert_affine(const AffineMatrix& m);

/// compose(m1, m2): the transform applying m2 first, then m1.
AffineMatrix compose_affine(const AffineMatrix& m1, const AffineMatrix& m2);

/// Applies m to a centered coordinate (u, v).
inline void apply_affine(const AffineMatrix& m, double u, double v,
                         double& out_u, double& out_v) {
    out_u = m.a * u + m.b * v + m.c;
    out_v = m.d * u + m.e * v + m.f;
}

/// Bilinear sample at pixel coordinates (x = column, y = row).
/// Returns `fill` outside [0, W-1] x [0, H-1]. Integer coordinates reproduce
/// stored values exactly.
double bilinear_sample(const ImageGrid& img, double x, double y, double fill);

/// Resamples img under the forward transform m by inverse mapping: every
/// output pixel pulls the bilinear sample of img at m^-1(p) in centered
/// coordinates. Out-of-range samples take `fill`.
/// Throws SingularTransformError when m is not invertible.
ImageGrid warp(const ImageGrid& img, const AffineMatrix& m, float fill);

/// Same as warp but also reports, per output pixel, whether the sample
/// position fell inside the source image (1) or was filled (0).
ImageGrid warp_with_mask(const ImageGrid& img, const AffineMatrix& m, float fill,
                         std::vector<std::uint8_t>& mask);

/// Elementwise product img * lam. Throws DimensionError on shape mismatch.
ImageGrid attenuate(const ImageGrid& img, const DecayMap& lam);

/// Forward degradation: decay strictly before drift,
/// warp(attenuate(x0, lam), build_affine_matrix(params), fill).
ImageGrid degrade_forward(const ImageGrid& x0, const DecayMap& lam,
                          const AffineParams& params, float fill = 0.0f);

/// Symmetric 1D Gaussian kernel truncated at 3 sigma and renormalized.
/// sigma <= 0 yields the identity kernel {1}.
std::vector<double> gaussian_kernel_1d(double sigma);

/// Separable Gaussian blur with zero-padded borders.
ImageGrid gaussian_blur(const ImageGrid& img, double sigma);

/// Throws InvalidParameterError / DimensionError when an ImageGrid violates
/// its invariants (length mismatch, non-finite or negative values).
void validate_image(const ImageGrid& img, const char* what = "image");

/// Validates a decay map: image invariants plus values within [0, 1].
void validate_decay(const DecayMap& lam);

} // namespace stemdeg
