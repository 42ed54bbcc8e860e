#pragma once

#include <vector>

#include "stemdeg/estimate.hpp"
#include "stemdeg/image.hpp"

namespace stemdeg {

/// One synthesized intermediate state.
struct InferenceFrame {
    double t = 0.0;
    DecayMap lambda;
    AffineParams affine;
    ImageGrid frame;
};

/// Strictly time-ordered sequence of synthesized states; the last entry is
/// the end state t = T.
struct InferenceResult {
    std::vector<InferenceFrame> frames;
    Estimate end_state;
};

enum class InferenceMode {
    interpolate_endstate,  // interpolate the single end-state estimate
    per_time_query,        // re-query a time-conditioned estimator at each t
};

/// Synthesizes intermediate degradation states at t_k = k*T/(n_steps+1),
/// k = 1..n_steps, plus the end state at t = T. In interpolate mode the
/// estimator runs once at t = T and the factors are interpolated; per-time
/// mode requires an estimator that supports time queries.
InferenceResult infer_sequence(const ImageGrid& x0, const ImageGrid& xT,
                               const Estimator& estimator, int n_steps, double T,
                               InferenceMode mode = InferenceMode::interpolate_endstate);

/// Drift-corrected overlay: 0.5 * x0 + 0.5 * warp(xT, m^-1, 0), i.e. xT
/// pulled back into x0's frame and blended.
ImageGrid align_overlay(const ImageGrid& x0, const ImageGrid& xT,
                        const AffineParams& affine);

/// Displacement field of the drift, sampled every `stride` pixels:
/// v(p) = T(p) - p in centered coordinates.
struct FlowField {
    int rows = 0, cols = 0;  // number of sample points per axis
    int stride = 1;
    std::vector<float> dx;   // row-major, rows x cols
    std::vector<float> dy;
};
FlowField flow_map(const AffineParams& affine, int h, int w, int stride);

} // namespace stemdeg
