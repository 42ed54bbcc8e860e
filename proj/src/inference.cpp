#include "stemdeg/inference.hpp"

#include "stemdeg/synth.hpp"

namespace stemdeg {

InferenceResult infer_sequence(const ImageGrid& x0, const ImageGrid& xT,
                               const Estimator& estimator, int n_steps, double T,
                               InferenceMode mode) {
    if (n_steps < 1)
        throw InvalidParameterError("infer_sequence: n_steps must be >= 1");
    if (T < 1.0) throw InvalidParameterError("infer_sequence: T must be >= 1");
    if (!x0.same_shape(xT))
        throw DimensionError("infer_sequence: frame shapes differ");
    if (mode == InferenceMode::per_time_query && !estimator.supports_time_queries())
        throw InvalidParameterError(
            "infer_sequence: per-time queries need a time-conditioned estimator");

    InferenceResult result;
    result.end_state = estimator.estimate(x0, xT, T, T);

    auto render = [&](double t) {
        InferenceFrame f;
        f.t = t;
        if (mode == InferenceMode::per_time_query && t < T) {
            const Estimate e = estimator.estimate(x0, xT, t, T);
            f.lambda = e.decay;
            f.affine = e.affine;
        } else {
            f.lambda = interpolate_decay(result.end_state.decay, t, T);
            f.affine = interpolate_affine(result.end_state.affine, t, T);
        }
        f.frame = degrade_forward(x0, f.lambda, f.affine, 0.0f);
        return f;
    };

    result.frames.reserve(n_steps + 1);
    for (int k = 1; k <= n_steps; ++k)
        result.frames.push_back(render(k * T / (n_steps + 1)));
    result.frames.push_back(render(T));
    return result;
}

ImageGrid align_overlay(const ImageGrid& x0, const ImageGrid& xT,
                        const AffineParams& affine) {
    if (!x0.same_shape(xT)) throw DimensionError("align_overlay: frame shapes differ");
    const ImageGrid pulled = warp(xT, invert_affine(build_affine_matrix(affine)), 0.0f);
    ImageGrid out(x0.height, x0.width);
    for (std::size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = 0.5f * x0.data[i] + 0.5f * pulled.data[i];
    return out;
}

FlowField flow_map(const AffineParams& affine, int h, int w, int stride) {
    if (stride < 1) throw InvalidParameterError("flow_map: stride must be >= 1");
    if (h <= 0 || w <= 0) throw DimensionError("flow_map: empty dimensions");
    const AffineMatrix m = build_affine_matrix(affine);
    FlowField f;
    f.stride = stride;
    f.rows = (h + stride - 1) / stride;
    f.cols = (w + stride - 1) / stride;
    f.dx.resize(static_cast<std::size_t>(f.rows) * f.cols);
    f.dy.resize(f.dx.size());
    const double cx = (w - 1) / 2.0;
    const double cy = (h - 1) / 2.0;
    std::size_t i = 0;
    for (int r = 0; r < h; r += stride) {
        const double v = r - cy;
        for (int c = 0; c < w; c += stride, ++i) {
            const double u = c - cx;
            double tu, tv;
            apply_affine(m, u, v, tu, tv);
            f.dx[i] = static_cast<float>(tu - u);
            f.dy[i] = static_cast<float>(tv - v);
        }
    }
    return f;
}

} // namespace stemdeg
