#pragma once

#include "stemdeg/image.hpp"

namespace stemdeg {

/// Recovered degradation factors with solver diagnostics. Produced by both
/// the deterministic solver and the learned predictor so downstream
/// consumers are estimator-agnostic.
struct Estimate {
    AffineParams affine;
    DecayMap decay;
    double residual = 0.0;  // registration cost or reconstruction mismatch
    bool converged = false;
    int iterations = 0;
    double valid_fraction = 0.0;  // pixels where decay was directly identifiable
};

/// Common estimator interface: recover the degradation between two frames.
/// Implementations that are time-conditioned may be queried at intermediate
/// t; the others only produce end-state estimates.
class Estimator {
public:
    virtual ~Estimator() = default;
    virtual Estimate estimate(const ImageGrid& x0, const ImageGrid& xT, double t,
                              double T) const = 0;
    virtual bool supports_time_queries() const { return false; }
};

} // namespace stemdeg
