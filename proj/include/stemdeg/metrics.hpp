#pragma once

#include <utility>
#include <vector>

#include "stemdeg/image.hpp"

namespace stemdeg {

/// Regression statistics for a predicted-vs-truth series.
struct RegressionReport {
    double mae = 0.0;
    double mse = 0.0;
    double rmse = 0.0;
    double r2 = 0.0;
    double var_err = 0.0;  // sample variance (n-1) of pred - gt
};

/// Mean damage intensity of a decay map: mean(1 - lambda), in [0, 1].
double damage_intensity(const DecayMap& lam);

/// MAE / MSE / RMSE / R^2 / error variance of pred against gt.
/// R^2 = 1 - SS_res / SS_tot with SS_tot about the mean of gt.
/// Throws DegenerateInputError for constant gt (R^2 undefined) and
/// DimensionError for length mismatch or n < 2.
RegressionReport regression_report(const std::vector<double>& pred,
                                   const std::vector<double>& gt);

/// Sum of absolute translation errors |dtx| + |dty| in pixels.
double drift_error(const AffineParams& pred, const AffineParams& gt);

/// Absolute angular difference in degrees, wrapped into [0, 180].
double rotation_error(const AffineParams& pred, const AffineParams& gt);

/// Extracts row `row` from both images and smooths each with a 1D Gaussian
/// (truncated at 3 sigma, renormalized). sigma = 0 returns the raw rows.
std::pair<std::vector<double>, std::vector<double>> side_profile(
    const ImageGrid& a, const ImageGrid& b, int row, double sigma);

} // namespace stemdeg
