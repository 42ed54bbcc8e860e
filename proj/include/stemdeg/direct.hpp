#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "stemdeg/estimate.hpp"
#include "stemdeg/image.hpp"

namespace stemdeg {

/// Tuning knobs of the deterministic inverse solver.
struct DirectConfig {
    int pyramid_levels = 3;       // clamped so the coarsest level stays >= 32 px
    int max_gn_iters = 30;        // Gauss-Newton iterations per level
    double param_tol_px = 0.01;   // convergence threshold on translation update
    double param_tol_deg = 0.01;  // convergence threshold on rotation update
    std::vector<double> rotation_starts = {-15.0, -7.5, 0.0, 7.5, 15.0};
    double max_shift_px = 64.0;   // expected |t| bound, sizes the coarse search
    double eps_denom = 0.05;      // minimum x0 intensity for decay identifiability
    double lambda_smooth_sigma = 2.0;  // px, fill/smoothing kernel for the decay field
    bool final_smooth = false;    // optional smoothing of the recovered decay field
    int max_alternations = 3;
};

enum class MatchCost { ssd, ncc };

struct TranslationSearchResult {
    int tx = 0;
    int ty = 0;
    double cost = 0.0;
};

/// Exhaustive integer-shift search over [-radius, radius]^2 under the model
/// xt(p) = x0(p - t). Costs are means over the overlap region; ties break by
/// smaller |t|, then lexicographically on (tx, ty).
/// Requires radius <= min(H, W) / 4.
TranslationSearchResult grid_search_translation(const ImageGrid& x0,
                                                const ImageGrid& xt, int radius_px,
                                                MatchCost cost = MatchCost::ssd);

struct RegistrationResult {
    AffineParams params;
    double residual = 0.0;
    bool converged = false;
    int iterations = 0;  // Gauss-Newton iterations spent on the winning start
};

/// Estimates the rigid transform mapping x0 onto xt by multi-start,
/// coarse-to-fine Gauss-Newton minimization of 1 - NCC over pixels valid in
/// both frames. Throws DegenerateInputError for constant input.
RegistrationResult register_affine(const ImageGrid& x0, const ImageGrid& xt,
                                   const DirectConfig& cfg = {});

/// Registration cost 1 - NCC(warp(x0, m(p)), xt) and its analytic gradient
/// with respect to (theta_deg, tx_px, ty_px), evaluated at full resolution.
/// Exposed so the gradient can be validated against finite differences.
struct RegistrationCostEval {
    double cost = 0.0;
    std::array<double, 3> grad{};  // d(cost)/d(theta_deg, tx, ty)
    std::size_t valid_count = 0;
};
RegistrationCostEval registration_cost_and_gradient(const ImageGrid& x0,
                                                    const ImageGrid& xt,
                                                    const AffineParams& p);

/// Closed-form decay recovery: undo the drift, divide by x0 where x0 carries
/// signal, and fill the unconstrained remainder by normalized convolution
/// (default 1 where no valid sample lies within the kernel's reach).
/// Returns the decay map and the directly identifiable pixel fraction.
std::pair<DecayMap, double> decay_from_pair(const ImageGrid& x0, const ImageGrid& xt,
                                            const AffineParams& affine,
                                            const DirectConfig& cfg = {});

/// Full inverse solve: alternates drift registration (decay-compensated after
/// the first pass) with decay recovery until the affine update falls below
/// the parameter tolerance. Deterministic for fixed inputs and config.
Estimate estimate_direct(const ImageGrid& x0, const ImageGrid& xt,
                         const DirectConfig& cfg = {});

/// Estimator-interface adapter around estimate_direct. The time arguments are
/// ignored: the solver always explains the full pair.
class DirectEstimator final : public Estimator {
public:
    explicit DirectEstimator(DirectConfig cfg = {}) : cfg_(std::move(cfg)) {}
    Estimate estimate(const ImageGrid& x0, const ImageGrid& xT, double,
                      double) const override {
        return estimate_direct(x0, xT, cfg_);
    }

private:
    DirectConfig cfg_;
};

} // namespace stemdeg
