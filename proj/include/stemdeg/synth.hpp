#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "stemdeg/image.hpp"

namespace stemdeg {

/// Acquisition noise model: Poisson shot noise at a given electron dose,
/// per-scanline horizontal jitter, additive Gaussian readout noise.
struct NoiseConfig {
    double dose = 200.0;          // expected counts per unit intensity
    double jitter_sigma = 0.5;    // px, std-dev of per-row horizontal offset
    double readout_sigma = 0.01;  // intensity units
    bool poisson_enabled = true;
    bool jitter_enabled = true;
    bool readout_enabled = true;

    static NoiseConfig disabled() {
        NoiseConfig c;
        c.poisson_enabled = c.jitter_enabled = c.readout_enabled = false;
        return c;
    }
};

/// Final-state degradation defining a whole synthetic sequence: the decay
/// field and drift reached at step T, plus the noise applied to the inputs.
struct DegradationSpec {
    DecayMap lambda_T;
    AffineParams affine_T;
    int total_steps = 10;
    NoiseConfig noise;
};

/// Synthetic atom-map generator parameters: Gaussian blobs on a jittered
/// 2D lattice anchored at the image center.
struct AtomMapSpec {
    double a1x = 11.8817204, a1y = 1.6697794;   // lattice vector 1 (px)
    double a2x = -1.6697794, a2y = 11.8817204;  // lattice vector 2 (px)
    double amp_lo = 0.55, amp_hi = 1.0;         // blob amplitude range
    double width_lo = 1.8, width_hi = 2.6;      // blob Gaussian sigma (px)
    double jitter_sigma = 0.35;                 // positional jitter (px)
    std::uint64_t seed = 0;
};

/// One training triple: noisy endpoint frames, the clean intermediate
/// supervision target, and the ground-truth factors that produced it.
struct SequenceSample {
    ImageGrid x0_noisy;
    ImageGrid xT_noisy;
    ImageGrid xt_clean;
    double t = 0.0;
    int total_steps = 1;
    DecayMap lambda_t;
    AffineParams affine_t;
};

/// Decay-field flavors for the damage benchmark.
enum class DamageNoiseType { gaussian_blackhole, perlin, random };

/// One benchmark frame with its ground truth.
struct DamageFrame {
    ImageGrid frame;
    DecayMap lambda;
    double delta = 0.0;  // ground-truth mean damage intensity
};

/// One drift-benchmark trial.
struct DriftSample {
    ImageGrid x0;
    ImageGrid xT;
    AffineParams truth;
};

/// Sum of Gaussian blobs on a jittered lattice, clipped to [0,1].
/// Deterministic per spec.seed. Throws InvalidParameterError for h,w < 32,
/// a degenerate (parallel) lattice, or out-of-range blob parameters.
ImageGrid gen_atom_map(const AtomMapSpec& spec, int h, int w);

/// Multi-octave gradient-lattice (Perlin) noise, persistence 0.5 and
/// lacunarity 2, rescaled so min -> 0 and max -> 1. Deterministic per seed.
ImageGrid perlin_field(int h, int w, int cells_per_axis, int octaves,
                       std::uint64_t seed);

/// Maps a [0,1] field into a survival map spanning [s_min, 1]:
/// lambda_T = s_min + (1 - s_min) * field.
DecayMap make_final_decay(const ImageGrid& field, double min_survival);

/// lambda_t = 1 - (t/T) * (1 - lambda_T). t=0 gives all-ones, t=T gives
/// lambda_T exactly; pointwise non-increasing in t.
DecayMap interpolate_decay(const DecayMap& lambda_T, double t, double T);

/// (theta, tx, ty)_t = (t/T) * (theta, tx, ty)_T. The rebuilt matrix keeps an
/// orthonormal rotation block for every t.
AffineParams interpolate_affine(const AffineParams& affine_T, double t, double T);

/// Applies, in order: Poisson shot noise, per-row jitter, readout noise;
/// clips at zero. Each component draws from its own stream derived from
/// `seed`, so toggling one leaves the others' draws unchanged. All components
/// disabled returns the input bit-exactly.
ImageGrid add_noise(const ImageGrid& img, const NoiseConfig& cfg,
                    std::uint64_t seed);

/// Builds the training triple for time index t: interpolated factors, clean
/// intermediate state, independently noised endpoint frames.
SequenceSample gen_sequence_sample(const ImageGrid& x0, const DegradationSpec& spec,
                                   double t, std::uint64_t seed);

/// Degradation-only sequence: n_frames decay maps whose mean damage intensity
/// ramps linearly from 0 to max_intensity, one per frame, no geometric
/// transform. Each frame is x0 attenuated by its map. The maps share one
/// seeded base pattern per trial and are renormalized so that
/// mean(1 - lambda_k) hits the target intensity exactly.
std::vector<DamageFrame> gen_damage_benchmark(const ImageGrid& x0,
                                              DamageNoiseType type, int n_frames,
                                              double max_intensity,
                                              std::uint64_t seed);

/// Drift-only trial: random crop of `img`, rigid transform with
/// theta ~ U(-rot_max, rot_max) and t ~ U(-drift_max, drift_max)^2,
/// xT = warp(x0, matrix, 0), attenuation disabled.
DriftSample gen_drift_benchmark(const ImageGrid& img, double rot_max_deg,
                                double drift_max_px, int crop_size,
                                std::uint64_t seed);

/// Ranges from which the training sampler draws per-sample degradations.
struct SampleSourceConfig {
    int image_size = 64;
    AtomMapSpec atom;
    int total_steps = 10;
    double theta_max_deg = 10.0;
    double shift_max_px = 6.0;
    double min_survival_lo = 0.2;
    double min_survival_hi = 0.7;
    int decay_cells = 3;
    int decay_octaves = 2;
    NoiseConfig noise;
};

using SampleSource = std::function<SequenceSample(std::uint64_t index)>;

/// Deterministic per-index sample stream: index i always yields the same
/// sample for a given master seed, independent of evaluation order.
SampleSource make_sample_source(const SampleSourceConfig& cfg,
                                std::uint64_t master_seed);

} // namespace stemdeg
