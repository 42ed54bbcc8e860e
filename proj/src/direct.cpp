#include "stemdeg/direct.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace stemdeg {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kInf = std::numeric_limits<double>::infinity();

struct PlaneD {
    int h = 0, w = 0;
    std::vector<double> v;
    double at(int r, int c) const { return v[static_cast<std::size_t>(r) * w + c]; }
};

PlaneD to_plane(const ImageGrid& img) {
    PlaneD p{img.height, img.width, {}};
    p.v.assign(img.data.begin(), img.data.end());
    return p;
}

/// Gaussian blur (sigma 1) followed by 2x decimation.
PlaneD downsample(const PlaneD& in) {
    static const double k[5] = {0.054488684549642945, 0.24420134200323332,
                                0.4026199468927075, 0.24420134200323332,
                                0.054488684549642945};
    PlaneD tmp{in.h, in.w, std::vector<double>(in.v.size(), 0.0)};
    for (int r = 0; r < in.h; ++r) {
        for (int c = 0; c < in.w; ++c) {
            double acc = 0.0, wsum = 0.0;
            for (int i = -2; i <= 2; ++i) {
                const int cc = c + i;
                if (cc < 0 || cc >= in.w) continue;
                acc += k[i + 2] * in.at(r, cc);
                wsum += k[i + 2];
            }
            tmp.v[static_cast<std::size_t>(r) * in.w + c] = acc / wsum;
        }
    }
    PlaneD blurred{in.h, in.w, std::vector<double>(in.v.size(), 0.0)};
    for (int r = 0; r < in.h; ++r) {
        for (int c = 0; c < in.w; ++c) {
            double acc = 0.0, wsum = 0.0;
            for (int i = -2; i <= 2; ++i) {
                const int rr = r + i;
                if (rr < 0 || rr >= in.h) continue;
                acc += k[i + 2] * tmp.at(rr, c);
                wsum += k[i + 2];
            }
            blurred.v[static_cast<std::size_t>(r) * in.w + c] = acc / wsum;
        }
    }
    PlaneD out{in.h / 2, in.w / 2, {}};
    out.v.resize(static_cast<std::size_t>(out.h) * out.w);
    for (int r = 0; r < out.h; ++r)
        for (int c = 0; c < out.w; ++c)
            out.v[static_cast<std::size_t>(r) * out.w + c] = blurred.at(2 * r, 2 * c);
    return out;
}

std::vector<PlaneD> build_pyramid(const ImageGrid& img, int levels) {
    std::vector<PlaneD> pyr;
    pyr.push_back(to_plane(img));
    for (int l = 1; l < levels; ++l) {
        if (pyr.back().h / 2 < 32 || pyr.back().w / 2 < 32) break;
        pyr.push_back(downsample(pyr.back()));
    }
    return pyr;
}

/// Gaussian blur with border renormalization; used to widen the basin of
/// attraction at the bootstrap stage.
PlaneD plane_blur(const PlaneD& in, double sigma) {
    const auto k = gaussian_kernel_1d(sigma);
    const int radius = static_cast<int>(k.size() / 2);
    PlaneD tmp{in.h, in.w, std::vector<double>(in.v.size(), 0.0)};
    for (int r = 0; r < in.h; ++r)
        for (int c = 0; c < in.w; ++c) {
            double acc = 0.0, wsum = 0.0;
            for (int i = -radius; i <= radius; ++i) {
                const int cc = c + i;
                if (cc < 0 || cc >= in.w) continue;
                acc += k[i + radius] * in.at(r, cc);
                wsum += k[i + radius];
            }
            tmp.v[static_cast<std::size_t>(r) * in.w + c] = acc / wsum;
        }
    PlaneD out{in.h, in.w, std::vector<double>(in.v.size(), 0.0)};
    for (int r = 0; r < in.h; ++r)
        for (int c = 0; c < in.w; ++c) {
            double acc = 0.0, wsum = 0.0;
            for (int i = -radius; i <= radius; ++i) {
                const int rr = r + i;
                if (rr < 0 || rr >= in.h) continue;
                acc += k[i + radius] * tmp.at(rr, c);
                wsum += k[i + radius];
            }
            out.v[static_cast<std::size_t>(r) * in.w + c] = acc / wsum;
        }
    return out;
}

/// One-pass accumulation of the NCC cost, its exact gradient, and the
/// Gauss-Newton normal matrix at parameters (theta_rad, tx, ty) in the
/// pixel units of the given planes.
struct CostAccum {
    double cost = kInf;
    double grad[3] = {0, 0, 0};  // d cost / d(theta_rad, tx, ty)
    double hess[3][3] = {{0, 0, 0}, {0, 0, 0}, {0, 0, 0}};
    std::size_t n = 0;
};

CostAccum eval_cost(const PlaneD& ref, const PlaneD& tgt, double theta_rad,
                    double tx, double ty, bool with_derivs) {
    const int h = tgt.h, w = tgt.w;
    const double cx = (w - 1) / 2.0;
    const double cy = (h - 1) / 2.0;
    const double ct = std::cos(theta_rad), st = std::sin(theta_rad);
    // inverse map: q = R(-theta) (p - t)
    // dq/dtheta = [[-st, ct], [-ct, -st]] (p - t); dq/dtx = (-ct, st); dq/dty = (-st, -ct)

    double Sa = 0, Sb = 0, Saa = 0, Sbb = 0, Sab = 0;
    double SJ[3] = {0, 0, 0}, SJa[3] = {0, 0, 0}, SJb[3] = {0, 0, 0};
    double SJJ[6] = {0, 0, 0, 0, 0, 0};
    std::size_t n = 0;

    for (int r = 0; r < h; ++r) {
        const double pv = r - cy - ty;
        for (int c = 0; c < w; ++c) {
            const double pu = c - cx - tx;
            const double qu = ct * pu + st * pv;
            const double qv = -st * pu + ct * pv;
            const double x = qu + cx;
            const double y = qv + cy;
            if (x < 0.0 || y < 0.0 || x > ref.w - 1 || y > ref.h - 1) continue;
            int ix = static_cast<int>(x);
            int iy = static_cast<int>(y);
            if (ix == ref.w - 1) --ix;
            if (iy == ref.h - 1) --iy;
            const double fx = x - ix;
            const double fy = y - iy;
            const double v00 = ref.at(iy, ix), v01 = ref.at(iy, ix + 1);
            const double v10 = ref.at(iy + 1, ix), v11 = ref.at(iy + 1, ix + 1);
            const double a = (1 - fy) * ((1 - fx) * v00 + fx * v01) +
                             fy * ((1 - fx) * v10 + fx * v11);
            const double b = tgt.at(r, c);
            Sa += a;
            Sb += b;
            Saa += a * a;
            Sbb += b * b;
            Sab += a * b;
            ++n;
            if (!with_derivs) continue;
            const double gx = (1 - fy) * (v01 - v00) + fy * (v11 - v10);
            const double gy = (1 - fx) * (v10 - v00) + fx * (v11 - v01);
            const double dq_th_u = -st * pu + ct * pv;
            const double dq_th_v = -ct * pu - st * pv;
            const double J0 = gx * dq_th_u + gy * dq_th_v;
            const double J1 = gx * -ct + gy * st;
            const double J2 = gx * -st + gy * -ct;
            SJ[0] += J0;
            SJ[1] += J1;
            SJ[2] += J2;
            SJa[0] += J0 * a;
            SJa[1] += J1 * a;
            SJa[2] += J2 * a;
            SJb[0] += J0 * b;
            SJb[1] += J1 * b;
            SJb[2] += J2 * b;
            SJJ[0] += J0 * J0;
            SJJ[1] += J0 * J1;
            SJJ[2] += J0 * J2;
            SJJ[3] += J1 * J1;
            SJJ[4] += J1 * J2;
            SJJ[5] += J2 * J2;
        }
    }

    CostAccum out;
    out.n = n;
    if (n < 32) return out;  // too little overlap to say anything
    const double nd = static_cast<double>(n);
    const double am = Sa / nd, bm = Sb / nd;
    const double Saa_c = Saa - nd * am * am;
    const double Sbb_c = Sbb - nd * bm * bm;
    const double Sab_c = Sab - nd * am * bm;
    if (Saa_c <= 1e-12 || Sbb_c <= 1e-12) return out;
    const double na = std::sqrt(Saa_c), nb = std::sqrt(Sbb_c);
    const double rho = Sab_c / (na * nb);
    out.cost = 1.0 - rho;
    if (!with_derivs) return out;

    double u[3], v[3];
    for (int j = 0; j < 3; ++j) {
        u[j] = SJb[j] - bm * SJ[j];  // <J_j, b - mean(b)>
        v[j] = SJa[j] - am * SJ[j];  // <J_j, a - mean(a)>
        out.grad[j] = -(u[j] / (na * nb) - rho * v[j] / Saa_c);
    }
    const int idx[3][3] = {{0, 1, 2}, {1, 3, 4}, {2, 4, 5}};
    for (int j = 0; j < 3; ++j)
        for (int k = 0; k < 3; ++k) {
            const double jj = SJJ[idx[j][k]] - SJ[j] * SJ[k] / nd;
            out.hess[j][k] = (jj - v[j] * v[k] / Saa_c) / Saa_c;
        }
    return out;
}

/// Solves the damped 3x3 system (H + mu diag) d = -g. Returns false when the
/// matrix is not positive definite enough to factor.
bool solve3(const double H[3][3], const double g[3], double mu, double d[3]) {
    double A[3][3];
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) A[i][j] = H[i][j];
    for (int i = 0; i < 3; ++i) A[i][i] += mu * std::max(H[i][i], 1e-12) + 1e-14;
    double L[3][3] = {{0, 0, 0}, {0, 0, 0}, {0, 0, 0}};
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j <= i; ++j) {
            double s = A[i][j];
            for (int k = 0; k < j; ++k) s -= L[i][k] * L[j][k];
            if (i == j) {
                if (s <= 0.0) return false;
                L[i][i] = std::sqrt(s);
            } else {
                L[i][j] = s / L[j][j];
            }
        }
    }
    double y[3];
    for (int i = 0; i < 3; ++i) {
        double s = -g[i];
        for (int k = 0; k < i; ++k) s -= L[i][k] * y[k];
        y[i] = s / L[i][i];
    }
    for (int i = 2; i >= 0; --i) {
        double s = y[i];
        for (int k = i + 1; k < 3; ++k) s -= L[k][i] * d[k];
        d[i] = s / L[i][i];
    }
    return true;
}

struct LevelFit {
    double theta_rad, tx, ty;
    double cost = kInf;
    bool converged = false;
    int iterations = 0;
};

LevelFit refine_level(const PlaneD& ref, const PlaneD& tgt, double theta_rad,
                      double tx, double ty, const DirectConfig& cfg) {
    LevelFit fit{theta_rad, tx, ty, kInf, false, 0};
    const double tol_rad = cfg.param_tol_deg * kPi / 180.0;
    CostAccum cur = eval_cost(ref, tgt, fit.theta_rad, fit.tx, fit.ty, true);
    fit.cost = cur.cost;
    if (!std::isfinite(cur.cost)) return fit;
    for (int it = 0; it < cfg.max_gn_iters; ++it) {
        ++fit.iterations;
        double d[3];
        double mu = 0.0;
        if (!solve3(cur.hess, cur.grad, mu, d)) {
            mu = 1e-6;
            if (!solve3(cur.hess, cur.grad, mu, d)) break;
        }
        // backtracking on the Gauss-Newton step
        double step = 1.0;
        CostAccum next;
        bool improved = false;
        for (int half = 0; half < 20; ++half) {
            next = eval_cost(ref, tgt, fit.theta_rad + step * d[0],
                             fit.tx + step * d[1], fit.ty + step * d[2], true);
            if (std::isfinite(next.cost) && next.cost < cur.cost) {
                improved = true;
                break;
            }
            step *= 0.5;
        }
        if (!improved) {
            fit.converged = true;  // no descent direction improves: at a minimum
            break;
        }
        const double dth = std::abs(step * d[0]);
        const double dt = std::hypot(step * d[1], step * d[2]);
        fit.theta_rad += step * d[0];
        fit.tx += step * d[1];
        fit.ty += step * d[2];
        cur = next;
        fit.cost = cur.cost;
        if (dth < tol_rad && dt < cfg.param_tol_px) {
            fit.converged = true;
            break;
        }
    }
    return fit;
}

double shift_cost(const PlaneD& a, const PlaneD& b, int tx, int ty, MatchCost kind) {
    const int h = a.h, w = a.w;
    const int r0 = std::max(0, ty), r1 = std::min(h, h + ty);
    const int c0 = std::max(0, tx), c1 = std::min(w, w + tx);
    const long long cnt = static_cast<long long>(r1 - r0) * (c1 - c0);
    if (cnt < 16) return kInf;
    if (kind == MatchCost::ssd) {
        double acc = 0.0;
        for (int r = r0; r < r1; ++r)
            for (int c = c0; c < c1; ++c) {
                const double d = a.at(r - ty, c - tx) - b.at(r, c);
                acc += d * d;
            }
        return acc / static_cast<double>(cnt);
    }
    double Sa = 0, Sb = 0, Saa = 0, Sbb = 0, Sab = 0;
    for (int r = r0; r < r1; ++r)
        for (int c = c0; c < c1; ++c) {
            const double av = a.at(r - ty, c - tx);
            const double bv = b.at(r, c);
            Sa += av;
            Sb += bv;
            Saa += av * av;
            Sbb += bv * bv;
            Sab += av * bv;
        }
    const double nd = static_cast<double>(cnt);
    const double va = Saa - Sa * Sa / nd;
    const double vb = Sbb - Sb * Sb / nd;
    if (va <= 1e-12 || vb <= 1e-12) return kInf;
    return 1.0 - (Sab - Sa * Sb / nd) / std::sqrt(va * vb);
}

bool shift_before(const TranslationSearchResult& x, const TranslationSearchResult& y) {
    if (x.cost != y.cost) return x.cost < y.cost;
    const long long nx = static_cast<long long>(x.tx) * x.tx +
                         static_cast<long long>(x.ty) * x.ty;
    const long long ny = static_cast<long long>(y.tx) * y.tx +
                         static_cast<long long>(y.ty) * y.ty;
    if (nx != ny) return nx < ny;
    return std::pair(x.tx, x.ty) < std::pair(y.tx, y.ty);
}

/// Integer-shift search between two equally sized planes under
/// b(p) = a(p - t); costs averaged over the overlap.
TranslationSearchResult shift_search(const PlaneD& a, const PlaneD& b, int radius,
                                     MatchCost kind) {
    TranslationSearchResult best;
    best.cost = kInf;
    for (int ty = -radius; ty <= radius; ++ty)
        for (int tx = -radius; tx <= radius; ++tx) {
            const TranslationSearchResult cand{tx, ty,
                                               shift_cost(a, b, tx, ty, kind)};
            if (!std::isfinite(cand.cost)) continue;
            if (!std::isfinite(best.cost) || shift_before(cand, best)) best = cand;
        }
    return best;
}

/// The k best well-separated shifts (greedy pick with a minimum spacing), in
/// cost order. Used to seed several basins when the cost surface aliases.
std::vector<TranslationSearchResult> shift_search_topk(const PlaneD& a,
                                                       const PlaneD& b, int radius,
                                                       MatchCost kind, int k,
                                                       int min_sep) {
    std::vector<TranslationSearchResult> all;
    all.reserve(static_cast<std::size_t>(2 * radius + 1) * (2 * radius + 1));
    for (int ty = -radius; ty <= radius; ++ty)
        for (int tx = -radius; tx <= radius; ++tx) {
            const double c = shift_cost(a, b, tx, ty, kind);
            if (std::isfinite(c)) all.push_back({tx, ty, c});
        }
    std::sort(all.begin(), all.end(), shift_before);
    std::vector<TranslationSearchResult> picked;
    for (const auto& cand : all) {
        if (static_cast<int>(picked.size()) >= k) break;
        bool ok = true;
        for (const auto& p : picked) {
            if (std::abs(p.tx - cand.tx) < min_sep && std::abs(p.ty - cand.ty) < min_sep)
                ok = false;
        }
        if (ok) picked.push_back(cand);
    }
    if (picked.empty()) picked.push_back({0, 0, kInf});
    return picked;
}

/// Rotates a plane about its center (bilinear, zero fill).
PlaneD rotate_plane(const PlaneD& in, double theta_rad) {
    PlaneD out{in.h, in.w, std::vector<double>(in.v.size(), 0.0)};
    const double cx = (in.w - 1) / 2.0;
    const double cy = (in.h - 1) / 2.0;
    const double ct = std::cos(theta_rad), st = std::sin(theta_rad);
    for (int r = 0; r < in.h; ++r) {
        const double pv = r - cy;
        for (int c = 0; c < in.w; ++c) {
            const double pu = c - cx;
            const double x = ct * pu + st * pv + cx;
            const double y = -st * pu + ct * pv + cy;
            if (x < 0.0 || y < 0.0 || x > in.w - 1 || y > in.h - 1) continue;
            int ix = static_cast<int>(x);
            int iy = static_cast<int>(y);
            if (ix == in.w - 1) --ix;
            if (iy == in.h - 1) --iy;
            const double fx = x - ix, fy = y - iy;
            out.v[static_cast<std::size_t>(r) * in.w + c] =
                (1 - fy) * ((1 - fx) * in.at(iy, ix) + fx * in.at(iy, ix + 1)) +
                fy * ((1 - fx) * in.at(iy + 1, ix) + fx * in.at(iy + 1, ix + 1));
        }
    }
    return out;
}

bool is_constant(const ImageGrid& img) {
    for (float v : img.data)
        if (v != img.data[0]) return false;
    return true;
}

} // namespace

TranslationSearchResult grid_search_translation(const ImageGrid& x0,
                                                const ImageGrid& xt, int radius_px,
                                                MatchCost cost) {
    if (!x0.same_shape(xt))
        throw DimensionError("grid_search_translation: image shapes differ");
    if (radius_px < 0 || radius_px > std::min(x0.height, x0.width) / 4)
        throw InvalidParameterError("grid_search_translation: radius must lie in [0, min(H,W)/4]");
    return shift_search(to_plane(x0), to_plane(xt), radius_px, cost);
}

RegistrationCostEval registration_cost_and_gradient(const ImageGrid& x0,
                                                    const ImageGrid& xt,
                                                    const AffineParams& p) {
    if (!x0.same_shape(xt))
        throw DimensionError("registration cost: image shapes differ");
    const CostAccum acc = eval_cost(to_plane(x0), to_plane(xt),
                                    p.theta_deg * kPi / 180.0, p.tx_px, p.ty_px, true);
    RegistrationCostEval out;
    out.cost = acc.cost;
    out.grad = {acc.grad[0] * kPi / 180.0, acc.grad[1], acc.grad[2]};
    out.valid_count = acc.n;
    return out;
}

RegistrationResult register_affine(const ImageGrid& x0, const ImageGrid& xt,
                                   const DirectConfig& cfg) {
    validate_image(x0, "x0");
    validate_image(xt, "xt");
    if (!x0.same_shape(xt)) throw DimensionError("register_affine: image shapes differ");
    if (is_constant(x0) || is_constant(xt))
        throw DegenerateInputError("register_affine: constant image, NCC undefined");

    const auto pyr_ref = build_pyramid(x0, cfg.pyramid_levels);
    const auto pyr_tgt = build_pyramid(xt, cfg.pyramid_levels);
    const int levels = static_cast<int>(pyr_ref.size());

    // Bootstrap stage: a heavily blurred copy of the coarsest level. Atom
    // features are near-Nyquist after decimation, so the unblurred NCC peak
    // is too narrow for an integer grid search and can lose against lattice
    // aliases; the blur widens the basin while the zero-fill borders keep
    // the true optimum global.
    const double boot_sigma = 2.5;
    const PlaneD boot_ref = plane_blur(pyr_ref[levels - 1], boot_sigma);
    const PlaneD boot_tgt = plane_blur(pyr_tgt[levels - 1], boot_sigma);

    std::vector<double> starts = cfg.rotation_starts;
    if (starts.empty()) starts.push_back(0.0);

    struct StartResult {
        LevelFit fit;
        int iterations = 0;
    };
    std::vector<StartResult> results(starts.size());

#pragma omp parallel for schedule(dynamic)
    for (int s = 0; s < static_cast<int>(starts.size()); ++s) {
        const double theta0 = starts[s] * kPi / 180.0;
        const double scale = static_cast<double>(1 << (levels - 1));
        const int radius = std::min(std::min(boot_ref.h, boot_ref.w) / 4,
                                    static_cast<int>(std::ceil(cfg.max_shift_px / scale)) + 2);
        const PlaneD rotated = rotate_plane(boot_ref, theta0);
        const auto seeds = shift_search_topk(rotated, boot_tgt, std::max(radius, 0),
                                             MatchCost::ncc, 3, 3);

        // refine each seed on the blurred stage, then rank basins by their
        // cost on the sharp coarsest level (it cleanly separates lattice
        // aliases that the blurred stage cannot)
        int total_iters = 0;
        double theta = theta0, tx = 0.0, ty = 0.0;
        double best_sharp = kInf;
        for (const auto& seed : seeds) {
            const LevelFit boot =
                refine_level(boot_ref, boot_tgt, theta0, seed.tx, seed.ty, cfg);
            total_iters += boot.iterations;
            const double sharp =
                eval_cost(pyr_ref[levels - 1], pyr_tgt[levels - 1], boot.theta_rad,
                          boot.tx, boot.ty, false)
                    .cost;
            if (sharp < best_sharp) {
                best_sharp = sharp;
                theta = boot.theta_rad;
                tx = boot.tx;
                ty = boot.ty;
            }
        }

        LevelFit fit;
        for (int l = levels - 1; l >= 0; --l) {
            fit = refine_level(pyr_ref[l], pyr_tgt[l], theta, tx, ty, cfg);
            total_iters += fit.iterations;
            theta = fit.theta_rad;
            tx = fit.tx;
            ty = fit.ty;
            if (l > 0) {
                tx *= 2.0;
                ty *= 2.0;
            }
        }
        results[s].fit = fit;
        results[s].iterations = total_iters;
    }

    // total order: cost, then |theta|, then |t|, then start index
    int best = -1;
    for (int s = 0; s < static_cast<int>(results.size()); ++s) {
        if (best < 0) {
            best = s;
            continue;
        }
        const LevelFit& a = results[s].fit;
        const LevelFit& b = results[best].fit;
        const auto key = [](const LevelFit& f) {
            return std::tuple(f.cost, std::abs(f.theta_rad), std::hypot(f.tx, f.ty));
        };
        if (key(a) < key(b)) best = s;
    }

    const LevelFit& fb = results[best].fit;
    RegistrationResult out;
    out.params = {fb.theta_rad * 180.0 / kPi, fb.tx, fb.ty};
    out.residual = fb.cost;
    out.converged = fb.converged && std::isfinite(fb.cost);
    out.iterations = results[best].iterations;
    if (!std::isfinite(fb.cost))
        throw DegenerateInputError("register_affine: no start produced a valid overlap");
    return out;
}

std::pair<DecayMap, double> decay_from_pair(const ImageGrid& x0, const ImageGrid& xt,
                                            const AffineParams& affine,
                                            const DirectConfig& cfg) {
    validate_image(x0, "x0");
    validate_image(xt, "xt");
    if (!x0.same_shape(xt)) throw DimensionError("decay_from_pair: image shapes differ");

    const AffineMatrix m = build_affine_matrix(affine);
    std::vector<std::uint8_t> warp_mask;
    const ImageGrid y = warp_with_mask(xt, invert_affine(m), 0.0f, warp_mask);

    const int h = x0.height, w = x0.width;
    DecayMap lam(h, w, 1.0f);
    std::vector<std::uint8_t> valid(lam.size(), 0);
    std::size_t n_valid = 0;
    for (std::size_t i = 0; i < lam.size(); ++i) {
        if (warp_mask[i] && x0.data[i] > cfg.eps_denom) {
            double ratio = static_cast<double>(y.data[i]) / x0.data[i];
            ratio = std::clamp(ratio, 0.0, 1.0);
            lam.data[i] = static_cast<float>(ratio);
            valid[i] = 1;
            ++n_valid;
        }
    }

    // normalized convolution fills pixels where decay is unobservable
    const auto k = gaussian_kernel_1d(cfg.lambda_smooth_sigma);
    const int radius = static_cast<int>(k.size() / 2);
    auto blur_weighted = [&](const std::vector<double>& src) {
        std::vector<double> tmp(src.size(), 0.0), dst(src.size(), 0.0);
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c) {
                double acc = 0.0;
                for (int i = -radius; i <= radius; ++i) {
                    const int cc = c + i;
                    if (cc < 0 || cc >= w) continue;
                    acc += k[i + radius] * src[static_cast<std::size_t>(r) * w + cc];
                }
                tmp[static_cast<std::size_t>(r) * w + c] = acc;
            }
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c) {
                double acc = 0.0;
                for (int i = -radius; i <= radius; ++i) {
                    const int rr = r + i;
                    if (rr < 0 || rr >= h) continue;
                    acc += k[i + radius] * tmp[static_cast<std::size_t>(rr) * w + c];
                }
                dst[static_cast<std::size_t>(r) * w + c] = acc;
            }
        return dst;
    };

    std::vector<double> num(lam.size(), 0.0), den(lam.size(), 0.0);
    for (std::size_t i = 0; i < lam.size(); ++i) {
        if (valid[i]) {
            num[i] = lam.data[i];
            den[i] = 1.0;
        }
    }
    num = blur_weighted(num);
    den = blur_weighted(den);
    for (std::size_t i = 0; i < lam.size(); ++i) {
        if (valid[i]) continue;
        lam.data[i] = den[i] > 1e-8 ? static_cast<float>(
                                          std::clamp(num[i] / den[i], 0.0, 1.0))
                                    : 1.0f;
    }

    if (cfg.final_smooth && cfg.lambda_smooth_sigma > 0.0) {
        std::vector<double> field(lam.data.begin(), lam.data.end());
        std::vector<double> ones(lam.size(), 1.0);
        const auto fnum = blur_weighted(field);
        const auto fden = blur_weighted(ones);
        for (std::size_t i = 0; i < lam.size(); ++i)
            lam.data[i] = static_cast<float>(std::clamp(fnum[i] / fden[i], 0.0, 1.0));
    }

    return {std::move(lam), static_cast<double>(n_valid) / static_cast<double>(lam.size())};
}

Estimate estimate_direct(const ImageGrid& x0, const ImageGrid& xt,
                         const DirectConfig& cfg) {
    Estimate est;
    RegistrationResult reg = register_affine(x0, xt, cfg);
    est.iterations = reg.iterations;
    auto [lam, vf] = decay_from_pair(x0, xt, reg.params, cfg);

    bool alternation_settled = cfg.max_alternations <= 1;
    for (int round = 1; round < cfg.max_alternations; ++round) {
        const ImageGrid compensated = attenuate(x0, lam);
        RegistrationResult next = register_affine(compensated, xt, cfg);
        est.iterations += next.iterations;
        const double dth = std::abs(next.params.theta_deg - reg.params.theta_deg);
        const double dt = std::hypot(next.params.tx_px - reg.params.tx_px,
                                     next.params.ty_px - reg.params.ty_px);
        reg = next;
        std::tie(lam, vf) = decay_from_pair(x0, xt, reg.params, cfg);
        if (dth < cfg.param_tol_deg && dt < cfg.param_tol_px) {
            alternation_settled = true;
            break;
        }
    }

    est.affine = reg.params;
    est.decay = std::move(lam);
    est.residual = reg.residual;
    est.converged = reg.converged && alternation_settled;
    est.valid_fraction = vf;
    return est;
}

} // namespace stemdeg
