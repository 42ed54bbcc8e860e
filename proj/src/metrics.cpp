#include "stemdeg/metrics.hpp"

#include <cmath>
#include <cstddef>

namespace stemdeg {

double damage_intensity(const DecayMap& lam) {
    if (lam.data.empty()) throw DimensionError("damage_intensity: empty map");
    double acc = 0.0;
    for (float v : lam.data) acc += 1.0 - v;
    return acc / static_cast<double>(lam.data.size());
}

RegressionReport regression_report(const std::vector<double>& pred,
                                   const std::vector<double>& gt) {
    if (pred.size() != gt.size())
        throw DimensionError("regression_report: series lengths differ");
    const std::size_t n = gt.size();
    if (n < 2) throw DimensionError("regression_report: need at least 2 samples");

    double gt_mean = 0.0;
    for (double v : gt) gt_mean += v;
    gt_mean /= static_cast<double>(n);

    double ss_tot = 0.0;
    for (double v : gt) ss_tot += (v - gt_mean) * (v - gt_mean);
    if (ss_tot == 0.0)
        throw DegenerateInputError("regression_report: constant ground truth, R^2 undefined");

    double abs_sum = 0.0, sq_sum = 0.0, err_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double e = pred[i] - gt[i];
        abs_sum += std::abs(e);
        sq_sum += e * e;
        err_sum += e;
    }
    const double err_mean = err_sum / static_cast<double>(n);
    double var_acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = (pred[i] - gt[i]) - err_mean;
        var_acc += d * d;
    }

    RegressionReport r;
    r.mae = abs_sum / static_cast<double>(n);
    r.mse = sq_sum / static_cast<double>(n);
    r.rmse = std::sqrt(r.mse);
    r.r2 = 1.0 - sq_sum / ss_tot;
    r.var_err = var_acc / static_cast<double>(n - 1);
    return r;
}

double drift_error(const AffineParams& pred, const AffineParams& gt) {
    return std::abs(pred.tx_px - gt.tx_px) + std::abs(pred.ty_px - gt.ty_px);
}

double rotation_error(const AffineParams& pred, const AffineParams& gt) {
    double d = std::fmod(std::abs(pred.theta_deg - gt.theta_deg), 360.0);
    if (d > 180.0) d = 360.0 - d;
    return d;
}

namespace {

std::vector<double> smooth_profile(const std::vector<double>& row, double sigma) {
    if (sigma <= 0.0) return row;
    const auto k = gaussian_kernel_1d(sigma);
    const int radius = static_cast<int>(k.size() / 2);
    const int n = static_cast<int>(row.size());
    std::vector<double> out(row.size(), 0.0);
    for (int i = 0; i < n; ++i) {
        double acc = 0.0, wsum = 0.0;
        for (int j = -radius; j <= radius; ++j) {
            const int ii = i + j;
            if (ii < 0 || ii >= n) continue;
            acc += k[j + radius] * row[ii];
            wsum += k[j + radius];
        }
        out[i] = wsum > 0.0 ? acc / wsum : 0.0;
    }
    return out;
}

} // namespace

std::pair<std::vector<double>, std::vector<double>> side_profile(
    const ImageGrid& a, const ImageGrid& b, int row, double sigma) {
    if (!a.same_shape(b)) throw DimensionError("side_profile: image shapes differ");
    if (row < 0 || row >= a.height) throw DimensionError("side_profile: row out of range");
    if (sigma < 0.0) throw InvalidParameterError("side_profile: sigma must be >= 0");
    std::vector<double> ra(a.width), rb(b.width);
    for (int c = 0; c < a.width; ++c) {
        ra[c] = a.at(row, c);
        rb[c] = b.at(row, c);
    }
    return {smooth_profile(ra, sigma), smooth_profile(rb, sigma)};
}

} // namespace stemdeg
