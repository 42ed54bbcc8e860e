#include "stemdeg/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>

#include "stemdeg/rng.hpp"

namespace stemdeg {

namespace {

double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

double mean_damage(const DecayMap& lam) {
    double acc = 0.0;
    for (float v : lam.data) acc += 1.0 - v;
    return acc / static_cast<double>(lam.data.size());
}

} // namespace

ImageGrid gen_atom_map(const AtomMapSpec& spec, int h, int w) {
    if (h < 32 || w < 32)
        throw InvalidParameterError("gen_atom_map: image must be at least 32x32");
    if (spec.width_lo <= 0.0 || spec.width_hi < spec.width_lo)
        throw InvalidParameterError("gen_atom_map: blob widths must be positive");
    if (spec.amp_lo < 0.0 || spec.amp_hi > 1.0 || spec.amp_hi < spec.amp_lo)
        throw InvalidParameterError("gen_atom_map: amplitudes must lie in [0, 1]");
    const double cross = spec.a1x * spec.a2y - spec.a1y * spec.a2x;
    const double n1 = std::hypot(spec.a1x, spec.a1y);
    const double n2 = std::hypot(spec.a2x, spec.a2y);
    if (n1 <= 0.0 || n2 <= 0.0 || std::abs(cross) < 1e-9 * n1 * n2)
        throw InvalidParameterError("gen_atom_map: degenerate lattice (parallel vectors)");

    const double cx = (w - 1) / 2.0;
    const double cy = (h - 1) / 2.0;
    const double pad = 4.0 * spec.width_hi + 6.0 * spec.jitter_sigma;

    // lattice index ranges covering the padded image: transform the four
    // padded corners into lattice coordinates via the inverse basis
    const double inv_a = spec.a2y / cross, inv_b = -spec.a2x / cross;
    const double inv_c = -spec.a1y / cross, inv_d = spec.a1x / cross;
    double imin = 0, imax = 0, jmin = 0, jmax = 0;
    bool first = true;
    for (double px : {-pad - cx, w - 1 + pad - cx}) {
        for (double py : {-pad - cy, h - 1 + pad - cy}) {
            const double li = inv_a * px + inv_b * py;
            const double lj = inv_c * px + inv_d * py;
            if (first) {
                imin = imax = li;
                jmin = jmax = lj;
                first = false;
            } else {
                imin = std::min(imin, li);
                imax = std::max(imax, li);
                jmin = std::min(jmin, lj);
                jmax = std::max(jmax, lj);
            }
        }
    }

    ImageGrid out(h, w, 0.0f);
    std::vector<double> acc(out.size(), 0.0);
    for (long long i = static_cast<long long>(std::floor(imin)) - 1;
         i <= static_cast<long long>(std::ceil(imax)) + 1; ++i) {
        for (long long j = static_cast<long long>(std::floor(jmin)) - 1;
             j <= static_cast<long long>(std::ceil(jmax)) + 1; ++j) {
            const std::uint64_t key =
                (static_cast<std::uint64_t>(static_cast<std::uint32_t>(i)) << 32) |
                static_cast<std::uint64_t>(static_cast<std::uint32_t>(j));
            Rng rng(derive_seed(spec.seed, key));
            const double amp = rng.uniform(spec.amp_lo, spec.amp_hi);
            const double sig = rng.uniform(spec.width_lo, spec.width_hi);
            const double jx = spec.jitter_sigma * rng.normal();
            const double jy = spec.jitter_sigma * rng.normal();
            const double px = cx + i * spec.a1x + j * spec.a2x + jx;
            const double py = cy + i * spec.a1y + j * spec.a2y + jy;
            if (amp == 0.0) continue;
            const int radius = static_cast<int>(std::ceil(4.0 * sig));
            const int r0 = std::max(0, static_cast<int>(std::floor(py)) - radius);
            const int r1 = std::min(h - 1, static_cast<int>(std::ceil(py)) + radius);
            const int c0 = std::max(0, static_cast<int>(std::floor(px)) - radius);
            const int c1 = std::min(w - 1, static_cast<int>(std::ceil(px)) + radius);
            const double inv2s2 = 1.0 / (2.0 * sig * sig);
            for (int r = r0; r <= r1; ++r) {
                const double dy = r - py;
                for (int c = c0; c <= c1; ++c) {
                    const double dx = c - px;
                    acc[static_cast<std::size_t>(r) * w + c] +=
                        amp * std::exp(-(dx * dx + dy * dy) * inv2s2);
                }
            }
        }
    }
    for (std::size_t k = 0; k < acc.size(); ++k)
        out.data[k] = static_cast<float>(clamp01(acc[k]));
    return out;
}

namespace {

double perlin_fade(double t) { return t * t * t * (t * (t * 6.0 - 15.0) + 10.0); }

/// Single-octave gradient noise on a cells x cells lattice covering the image.
void perlin_octave(std::vector<double>& acc, int h, int w, int cells,
                   double amplitude, std::uint64_t seed) {
    const int gw = cells + 1;
    std::vector<double> gx(static_cast<std::size_t>(gw) * gw);
    std::vector<double> gy(gx.size());
    Rng rng(seed);
    for (std::size_t i = 0; i < gx.size(); ++i) {
        const double a = rng.uniform(0.0, 6.283185307179586);
        gx[i] = std::cos(a);
        gy[i] = std::sin(a);
    }
    auto dot_corner = [&](int gi, int gj, double dx, double dy) {
        const std::size_t k = static_cast<std::size_t>(gj) * gw + gi;
        return gx[k] * dx + gy[k] * dy;
    };
    for (int r = 0; r < h; ++r) {
        const double y = (r + 0.5) / h * cells;
        int j0 = static_cast<int>(y);
        if (j0 >= cells) j0 = cells - 1;
        const double fy = y - j0;
        const double uy = perlin_fade(fy);
        for (int c = 0; c < w; ++c) {
            const double x = (c + 0.5) / w * cells;
            int i0 = static_cast<int>(x);
            if (i0 >= cells) i0 = cells - 1;
            const double fx = x - i0;
            const double ux = perlin_fade(fx);
            const double n00 = dot_corner(i0, j0, fx, fy);
            const double n10 = dot_corner(i0 + 1, j0, fx - 1.0, fy);
            const double n01 = dot_corner(i0, j0 + 1, fx, fy - 1.0);
            const double n11 = dot_corner(i0 + 1, j0 + 1, fx - 1.0, fy - 1.0);
            const double nx0 = n00 + ux * (n10 - n00);
            const double nx1 = n01 + ux * (n11 - n01);
            acc[static_cast<std::size_t>(r) * w + c] += amplitude * (nx0 + uy * (nx1 - nx0));
        }
    }
}

} // namespace

ImageGrid perlin_field(int h, int w, int cells_per_axis, int octaves,
                       std::uint64_t seed) {
    if (h <= 0 || w <= 0) throw DimensionError("perlin_field: empty dimensions");
    if (cells_per_axis < 1 || octaves < 1)
        throw InvalidParameterError("perlin_field: cells_per_axis and octaves must be >= 1");
    std::vector<double> acc(static_cast<std::size_t>(h) * w, 0.0);
    double amplitude = 1.0;
    int cells = cells_per_axis;
    for (int o = 0; o < octaves; ++o) {
        perlin_octave(acc, h, w, cells, amplitude, derive_seed(seed, o));
        amplitude *= 0.5; // persistence
        cells *= 2;       // lacunarity
    }
    const auto [mn, mx] = std::minmax_element(acc.begin(), acc.end());
    const double lo = *mn, hi = *mx;
    ImageGrid out(h, w);
    if (hi - lo < 1e-12) {
        std::fill(out.data.begin(), out.data.end(), 0.5f);
        return out;
    }
    const double scale = 1.0 / (hi - lo);
    for (std::size_t k = 0; k < acc.size(); ++k)
        out.data[k] = static_cast<float>((acc[k] - lo) * scale);
    return out;
}

DecayMap make_final_decay(const ImageGrid& field, double min_survival) {
    if (min_survival < 0.0 || min_survival >= 1.0)
        throw InvalidParameterError("make_final_decay: min_survival must lie in [0, 1)");
    validate_image(field, "decay field");
    DecayMap lam(field.height, field.width);
    for (std::size_t k = 0; k < field.data.size(); ++k) {
        const double v = field.data[k];
        if (v > 1.0)
            throw InvalidParameterError("make_final_decay: field values must lie in [0, 1]");
        lam.data[k] = static_cast<float>(min_survival + (1.0 - min_survival) * v);
    }
    return lam;
}

DecayMap interpolate_decay(const DecayMap& lambda_T, double t, double T) {
    if (T < 1.0) throw InvalidParameterError("interpolate_decay: T must be >= 1");
    if (t < 0.0 || t > T)
        throw InvalidParameterError("interpolate_decay: t out of range [0, T]");
    const double ratio = t / T;
    DecayMap out(lambda_T.height, lambda_T.width);
    for (std::size_t k = 0; k < lambda_T.data.size(); ++k) {
        const double lT = lambda_T.data[k];
        out.data[k] = static_cast<float>(1.0 - ratio * (1.0 - lT));
    }
    return out;
}

AffineParams interpolate_affine(const AffineParams& affine_T, double t, double T) {
    if (T < 1.0) throw InvalidParameterError("interpolate_affine: T must be >= 1");
    if (t < 0.0 || t > T)
        throw InvalidParameterError("interpolate_affine: t out of range [0, T]");
    const double ratio = t / T;
    return {affine_T.theta_deg * ratio, affine_T.tx_px * ratio, affine_T.ty_px * ratio};
}

ImageGrid add_noise(const ImageGrid& img, const NoiseConfig& cfg, std::uint64_t seed) {
    validate_image(img);
    if (cfg.poisson_enabled && cfg.dose <= 0.0)
        throw InvalidParameterError("add_noise: dose must be > 0 when Poisson is enabled");
    if (cfg.jitter_sigma < 0.0 || cfg.readout_sigma < 0.0)
        throw InvalidParameterError("add_noise: noise sigmas must be >= 0");
    if (!cfg.poisson_enabled && !cfg.jitter_enabled && !cfg.readout_enabled)
        return img;

    const int h = img.height, w = img.width;
    std::vector<double> buf(img.data.begin(), img.data.end());

    if (cfg.poisson_enabled) {
        Rng rng(derive_seed(seed, 1));
        for (double& v : buf)
            v = static_cast<double>(rng.poisson(cfg.dose * v)) / cfg.dose;
    }
    if (cfg.jitter_enabled && cfg.jitter_sigma > 0.0) {
        Rng rng(derive_seed(seed, 2));
        std::vector<double> row(w);
        for (int r = 0; r < h; ++r) {
            const double delta = cfg.jitter_sigma * rng.normal();
            double* p = buf.data() + static_cast<std::size_t>(r) * w;
            for (int c = 0; c < w; ++c) {
                const double x = c - delta; // content shifted right by delta
                if (x < 0.0 || x > w - 1) {
                    row[c] = 0.0;
                    continue;
                }
                int ix = static_cast<int>(std::floor(x));
                if (ix == w - 1) --ix;
                const double fx = x - ix;
                row[c] = (1.0 - fx) * p[ix] + fx * p[ix + 1];
            }
            std::copy(row.begin(), row.end(), p);
        }
    }
    if (cfg.readout_enabled && cfg.readout_sigma > 0.0) {
        Rng rng(derive_seed(seed, 3));
        for (double& v : buf) v += cfg.readout_sigma * rng.normal();
    }

    ImageGrid out(h, w);
    for (std::size_t k = 0; k < buf.size(); ++k)
        out.data[k] = static_cast<float>(std::max(0.0, buf[k]));
    return out;
}

SequenceSample gen_sequence_sample(const ImageGrid& x0, const DegradationSpec& spec,
                                   double t, std::uint64_t seed) {
    if (spec.total_steps < 1)
        throw InvalidParameterError("gen_sequence_sample: total_steps must be >= 1");
    validate_decay(spec.lambda_T);
    const double T = spec.total_steps;
    SequenceSample s;
    s.t = t;
    s.total_steps = spec.total_steps;
    s.lambda_t = interpolate_decay(spec.lambda_T, t, T);
    s.affine_t = interpolate_affine(spec.affine_T, t, T);
    s.xt_clean = degrade_forward(x0, s.lambda_t, s.affine_t, 0.0f);
    const ImageGrid xT_clean = degrade_forward(x0, spec.lambda_T, spec.affine_T, 0.0f);
    s.x0_noisy = add_noise(x0, spec.noise, derive_seed(seed, 100));
    s.xT_noisy = add_noise(xT_clean, spec.noise, derive_seed(seed, 101));
    return s;
}

namespace {

/// Solves for the shift s such that mean(1 - clip(base - s, 0, 1)) == target,
/// evaluating the objective on the quantized float map that will be returned.
DecayMap shift_to_intensity(const DecayMap& base, double target) {
    DecayMap out(base.height, base.width);
    if (target <= 0.0) {
        std::fill(out.data.begin(), out.data.end(), 1.0f);
        return out;
    }
    auto eval = [&](double s) {
        for (std::size_t k = 0; k < base.data.size(); ++k)
            out.data[k] = static_cast<float>(clamp01(base.data[k] - s));
        return mean_damage(out);
    };
    double lo = -1.0, hi = 1.0;
    for (int it = 0; it < 80; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (eval(mid) < target)
            lo = mid;
        else
            hi = mid;
    }
    eval(hi);
    return out;
}

DecayMap damage_base_map(int h, int w, DamageNoiseType type, std::uint64_t seed) {
    DecayMap lam(h, w);
    switch (type) {
        case DamageNoiseType::gaussian_blackhole: {
            Rng rng(derive_seed(seed, 11));
            const int wells = 1 + static_cast<int>(rng.below(3));
            std::vector<double> px(wells), py(wells), amp(wells), inv2s2(wells);
            for (int k = 0; k < wells; ++k) {
                px[k] = rng.uniform(0.0, w - 1.0);
                py[k] = rng.uniform(0.0, h - 1.0);
                amp[k] = rng.uniform(0.5, 1.0);
                const double sig = rng.uniform(8.0, 32.0);
                inv2s2[k] = 1.0 / (2.0 * sig * sig);
            }
            Rng field(derive_seed(seed, 12));
            for (int r = 0; r < h; ++r) {
                for (int c = 0; c < w; ++c) {
                    double v = 1.0;
                    for (int k = 0; k < wells; ++k) {
                        const double dx = c - px[k], dy = r - py[k];
                        v -= amp[k] * std::exp(-(dx * dx + dy * dy) * inv2s2[k]);
                    }
                    v += 0.05 * field.normal();
                    lam.at(r, c) = static_cast<float>(clamp01(v));
                }
            }
            break;
        }
        case DamageNoiseType::perlin: {
            const ImageGrid f = perlin_field(h, w, 3, 2, derive_seed(seed, 21));
            lam.data = f.data;
            break;
        }
        case DamageNoiseType::random: {
            Rng rng(derive_seed(seed, 31));
            ImageGrid noise(h, w);
            for (float& v : noise.data) v = static_cast<float>(rng.uniform());
            const ImageGrid smooth = gaussian_blur(noise, 1.0);
            for (std::size_t k = 0; k < lam.data.size(); ++k)
                lam.data[k] = static_cast<float>(clamp01(1.0 - smooth.data[k]));
            break;
        }
    }
    return lam;
}

} // namespace

std::vector<DamageFrame> gen_damage_benchmark(const ImageGrid& x0, DamageNoiseType type,
                                              int n_frames, double max_intensity,
                                              std::uint64_t seed) {
    validate_image(x0, "x0");
    if (n_frames < 2)
        throw InvalidParameterError("gen_damage_benchmark: n_frames must be >= 2");
    if (max_intensity <= 0.0 || max_intensity > 1.0)
        throw InvalidParameterError("gen_damage_benchmark: max_intensity must lie in (0, 1]");
    const DecayMap base = damage_base_map(x0.height, x0.width, type, seed);
    std::vector<DamageFrame> frames;
    frames.reserve(n_frames);
    for (int k = 0; k < n_frames; ++k) {
        DamageFrame f;
        f.delta = max_intensity * k / static_cast<double>(n_frames - 1);
        f.lambda = shift_to_intensity(base, f.delta);
        f.frame = attenuate(x0, f.lambda);
        frames.push_back(std::move(f));
    }
    return frames;
}

DriftSample gen_drift_benchmark(const ImageGrid& img, double rot_max_deg,
                                double drift_max_px, int crop_size,
                                std::uint64_t seed) {
    validate_image(img, "source image");
    if (crop_size < 8) throw InvalidParameterError("gen_drift_benchmark: crop too small");
    if (rot_max_deg < 0.0 || drift_max_px < 0.0)
        throw InvalidParameterError("gen_drift_benchmark: ranges must be >= 0");
    const int margin = static_cast<int>(std::ceil(drift_max_px));
    if (img.width < crop_size + 2 * margin || img.height < crop_size + 2 * margin)
        throw DimensionError("gen_drift_benchmark: image too small for crop plus margin");

    Rng rng(seed);
    const int max_r = img.height - crop_size - 2 * margin;
    const int max_c = img.width - crop_size - 2 * margin;
    const int r0 = margin + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_r) + 1));
    const int c0 = margin + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_c) + 1));

    DriftSample s;
    s.truth.theta_deg = rng.uniform(-rot_max_deg, rot_max_deg);
    s.truth.tx_px = rng.uniform(-drift_max_px, drift_max_px);
    s.truth.ty_px = rng.uniform(-drift_max_px, drift_max_px);

    s.x0 = ImageGrid(crop_size, crop_size);
    for (int r = 0; r < crop_size; ++r)
        for (int c = 0; c < crop_size; ++c)
            s.x0.at(r, c) = img.at(r0 + r, c0 + c);
    s.xT = warp(s.x0, build_affine_matrix(s.truth), 0.0f);
    return s;
}

SampleSource make_sample_source(const SampleSourceConfig& cfg, std::uint64_t master_seed) {
    if (cfg.image_size < 32)
        throw InvalidParameterError("make_sample_source: image_size must be >= 32");
    if (cfg.total_steps < 1)
        throw InvalidParameterError("make_sample_source: total_steps must be >= 1");
    return [cfg, master_seed](std::uint64_t index) -> SequenceSample {
        const std::uint64_t s = derive_seed(master_seed, index);
        Rng rng(derive_seed(s, 0));
        DegradationSpec spec;
        spec.total_steps = cfg.total_steps;
        spec.noise = cfg.noise;
        spec.affine_T.theta_deg = rng.uniform(-cfg.theta_max_deg, cfg.theta_max_deg);
        spec.affine_T.tx_px = rng.uniform(-cfg.shift_max_px, cfg.shift_max_px);
        spec.affine_T.ty_px = rng.uniform(-cfg.shift_max_px, cfg.shift_max_px);
        const double s_min = rng.uniform(cfg.min_survival_lo, cfg.min_survival_hi);
        const double t = 1.0 + static_cast<double>(rng.below(cfg.total_steps));

        AtomMapSpec atom = cfg.atom;
        atom.seed = derive_seed(s, 1);
        const ImageGrid x0 = gen_atom_map(atom, cfg.image_size, cfg.image_size);
        spec.lambda_T = make_final_decay(
            perlin_field(cfg.image_size, cfg.image_size, cfg.decay_cells,
                         cfg.decay_octaves, derive_seed(s, 2)),
            s_min);
        return gen_sequence_sample(x0, spec, t, derive_seed(s, 3));
    };
}

} // namespace stemdeg
