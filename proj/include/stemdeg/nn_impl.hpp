#pragma once

// Template definitions for the nn:: layer machinery declared in model.hpp.
// Instantiated with float for training and double for finite-difference
// gradient validation.

#include <algorithm>
#include <cmath>
#include <type_traits>

#include "stemdeg/rng.hpp"

namespace stemdeg {
namespace nn {

inline constexpr double kSquashEps = 1.0 / 16777216.0;  // 2^-24, exact in float
inline constexpr double kPiNN = 3.14159265358979323846;

// ---------------------------------------------------------------------------
// primitive layers
// ---------------------------------------------------------------------------

/// 3x3 convolution, padding 1, stride 1 or 2. Weights laid out
/// [oc][ic][ky][kx], output size h/stride x w/stride (h, w even for stride 2).
template <class T>
void conv3_forward(const Tensor<T>& in, const std::vector<T>& w,
                   const std::vector<T>& b, int oc_n, int stride, Tensor<T>& out) {
    const int h = in.h, wd = in.w;
    const int oh = (stride == 1) ? h : h / 2;
    const int ow = (stride == 1) ? wd : wd / 2;
    out = Tensor<T>(oc_n, oh, ow);
    for (int oc = 0; oc < oc_n; ++oc) {
        T* op = out.plane(oc);
        const T bias = b[oc];
        for (int i = 0; i < oh * ow; ++i) op[i] = bias;
        for (int ic = 0; ic < in.c; ++ic) {
            const T* ip = in.plane(ic);
            const T* wp = &w[(static_cast<std::size_t>(oc) * in.c + ic) * 9];
            for (int ky = 0; ky < 3; ++ky) {
                for (int kx = 0; kx < 3; ++kx) {
                    const T wv = wp[ky * 3 + kx];
                    if (stride == 1) {
                        const int y0 = std::max(0, 1 - ky);
                        const int y1 = h - std::max(0, ky - 1);
                        const int x0 = std::max(0, 1 - kx);
                        const int x1 = wd - std::max(0, kx - 1);
                        for (int y = y0; y < y1; ++y) {
                            const T* irow = ip + static_cast<std::size_t>(y + ky - 1) * wd + (kx - 1);
                            T* orow = op + static_cast<std::size_t>(y) * ow;
                            for (int x = x0; x < x1; ++x) orow[x] += wv * irow[x];
                        }
                    } else {
                        for (int y = 0; y < oh; ++y) {
                            const int sy = 2 * y + ky - 1;
                            if (sy < 0 || sy >= h) continue;
                            const T* irow = ip + static_cast<std::size_t>(sy) * wd;
                            T* orow = op + static_cast<std::size_t>(y) * ow;
                            for (int x = 0; x < ow; ++x) {
                                const int sx = 2 * x + kx - 1;
                                if (sx < 0 || sx >= wd) continue;
                                orow[x] += wv * irow[sx];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Backward of conv3_forward. Accumulates into dw/db; overwrites din when
/// non-null.
template <class T>
void conv3_backward(const Tensor<T>& in, const std::vector<T>& w, int oc_n,
                    int stride, const Tensor<T>& dout, std::vector<T>& dw,
                    std::vector<T>& db, std::type_identity_t<Tensor<T>>* din) {
    const int h = in.h, wd = in.w;
    const int oh = dout.h, ow = dout.w;
    if (din) *din = Tensor<T>(in.c, h, wd);
    for (int oc = 0; oc < oc_n; ++oc) {
        const T* dop = dout.plane(oc);
        T acc = T(0);
        for (int i = 0; i < oh * ow; ++i) acc += dop[i];
        db[oc] += acc;
        for (int ic = 0; ic < in.c; ++ic) {
            const T* ip = in.plane(ic);
            T* dip = din ? din->plane(ic) : nullptr;
            T* dwp = &dw[(static_cast<std::size_t>(oc) * in.c + ic) * 9];
            const T* wp = &w[(static_cast<std::size_t>(oc) * in.c + ic) * 9];
            for (int ky = 0; ky < 3; ++ky) {
                for (int kx = 0; kx < 3; ++kx) {
                    T wgrad = T(0);
                    const T wv = wp[ky * 3 + kx];
                    if (stride == 1) {
                        const int y0 = std::max(0, 1 - ky);
                        const int y1 = h - std::max(0, ky - 1);
                        const int x0 = std::max(0, 1 - kx);
                        const int x1 = wd - std::max(0, kx - 1);
                        for (int y = y0; y < y1; ++y) {
                            const T* irow = ip + static_cast<std::size_t>(y + ky - 1) * wd + (kx - 1);
                            const T* drow = dop + static_cast<std::size_t>(y) * ow;
                            if (dip) {
                                T* dirow = dip + static_cast<std::size_t>(y + ky - 1) * wd + (kx - 1);
                                for (int x = x0; x < x1; ++x) {
                                    wgrad += drow[x] * irow[x];
                                    dirow[x] += wv * drow[x];
                                }
                            } else {
                                for (int x = x0; x < x1; ++x) wgrad += drow[x] * irow[x];
                            }
                        }
                    } else {
                        for (int y = 0; y < oh; ++y) {
                            const int sy = 2 * y + ky - 1;
                            if (sy < 0 || sy >= h) continue;
                            const T* irow = ip + static_cast<std::size_t>(sy) * wd;
                            const T* drow = dop + static_cast<std::size_t>(y) * ow;
                            T* dirow = dip ? dip + static_cast<std::size_t>(sy) * wd : nullptr;
                            for (int x = 0; x < ow; ++x) {
                                const int sx = 2 * x + kx - 1;
                                if (sx < 0 || sx >= wd) continue;
                                wgrad += drow[x] * irow[sx];
                                if (dirow) dirow[sx] += wv * drow[x];
                            }
                        }
                    }
                    dwp[ky * 3 + kx] += wgrad;
                }
            }
        }
    }
}

template <class T>
void relu_inplace(Tensor<T>& t) {
    for (T& v : t.v) v = v > T(0) ? v : T(0);
}

/// Backward through ReLU given the post-activation values.
template <class T>
void relu_backward_inplace(const Tensor<T>& post, Tensor<T>& d) {
    for (std::size_t i = 0; i < d.v.size(); ++i)
        if (post.v[i] <= T(0)) d.v[i] = T(0);
}

template <class T>
Tensor<T> upsample2(const Tensor<T>& in) {
    Tensor<T> out(in.c, in.h * 2, in.w * 2);
    for (int c = 0; c < in.c; ++c) {
        const T* ip = in.plane(c);
        T* op = out.plane(c);
        for (int y = 0; y < out.h; ++y) {
            const T* irow = ip + static_cast<std::size_t>(y / 2) * in.w;
            T* orow = op + static_cast<std::size_t>(y) * out.w;
            for (int x = 0; x < out.w; ++x) orow[x] = irow[x / 2];
        }
    }
    return out;
}

template <class T>
Tensor<T> upsample2_backward(const Tensor<T>& dout, int in_h, int in_w) {
    Tensor<T> din(dout.c, in_h, in_w);
    for (int c = 0; c < dout.c; ++c) {
        const T* dop = dout.plane(c);
        T* dip = din.plane(c);
        for (int y = 0; y < dout.h; ++y)
            for (int x = 0; x < dout.w; ++x)
                dip[static_cast<std::size_t>(y / 2) * in_w + x / 2] +=
                    dop[static_cast<std::size_t>(y) * dout.w + x];
    }
    return din;
}

template <class T>
Tensor<T> concat_channels(const std::vector<const Tensor<T>*>& parts) {
    int c_total = 0;
    for (const auto* p : parts) c_total += p->c;
    Tensor<T> out(c_total, parts[0]->h, parts[0]->w);
    int off = 0;
    for (const auto* p : parts) {
        std::copy(p->v.begin(), p->v.end(), out.plane(off));
        off += p->c;
    }
    return out;
}

/// Dense layer y = W x + b with W laid out [out][in].
template <class T>
void dense_forward(const std::vector<T>& x, const std::vector<T>& w,
                   const std::vector<T>& b, int out_n, std::vector<T>& y) {
    const int in_n = static_cast<int>(x.size());
    y.assign(out_n, T(0));
    for (int o = 0; o < out_n; ++o) {
        T acc = b[o];
        const T* wr = &w[static_cast<std::size_t>(o) * in_n];
        for (int i = 0; i < in_n; ++i) acc += wr[i] * x[i];
        y[o] = acc;
    }
}

template <class T>
void dense_backward(const std::vector<T>& x, const std::vector<T>& w, int out_n,
                    const std::vector<T>& dy, std::vector<T>& dw, std::vector<T>& db,
                    std::type_identity_t<std::vector<T>>* dx) {
    const int in_n = static_cast<int>(x.size());
    if (dx) dx->assign(in_n, T(0));
    for (int o = 0; o < out_n; ++o) {
        db[o] += dy[o];
        const T* wr = &w[static_cast<std::size_t>(o) * in_n];
        T* dwr = &dw[static_cast<std::size_t>(o) * in_n];
        for (int i = 0; i < in_n; ++i) {
            dwr[i] += dy[o] * x[i];
            if (dx) (*dx)[i] += wr[i] * dy[o];
        }
    }
}

// ---------------------------------------------------------------------------
// network
// ---------------------------------------------------------------------------

template <class T>
Network<T>::Network(const ModelConfig& cfg, std::uint64_t seed)
    : cfg_(cfg), seed_(seed) {
    if (cfg.base_channels < 1 || cfg.depth < 1)
        throw InvalidParameterError("model config: base_channels and depth must be >= 1");
    if (cfg.time_embed_dim < 2 || cfg.time_embed_dim % 2 != 0)
        throw InvalidParameterError("model config: time_embed_dim must be even and >= 2");
    if (cfg.input_size % (1 << cfg.depth) != 0)
        throw InvalidParameterError("model config: input_size must be divisible by 2^depth");
    if (cfg.theta_max_deg <= 0.0 || cfg.shift_max_px <= 0.0)
        throw InvalidParameterError("model config: squashing ranges must be positive");

    auto add = [&](const std::string& name, std::vector<int> shape, bool zero) {
        ParamTensor<T> p;
        p.name = name;
        p.shape = std::move(shape);
        std::size_t n = 1;
        for (int s : p.shape) n *= static_cast<std::size_t>(s);
        p.value.assign(n, T(0));
        if (!zero) {
            // centered uniform fan-in init; fan-in = product of all dims but
            // the first (conv [oc][ic][ky][kx], dense [out][in])
            std::size_t fan_in = n / static_cast<std::size_t>(p.shape[0]);
            const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
            Rng rng(derive_seed(seed_, params_.size() + 1));
            for (T& v : p.value) v = static_cast<T>(rng.uniform(-scale, scale));
        }
        params_.push_back(std::move(p));
        return static_cast<int>(params_.size() - 1);
    };

    const int D = cfg.depth;
    int ch = 1;
    for (int s = 0; s < D; ++s) {
        const int cs = stage_channels(s);
        enc_w_.push_back(add("enc" + std::to_string(s) + ".w", {cs, ch, 3, 3}, false));
        enc_b_.push_back(add("enc" + std::to_string(s) + ".b", {cs}, true));
        down_w_.push_back(add("down" + std::to_string(s) + ".w",
                              {stage_channels(s + 1), cs, 3, 3}, false));
        down_b_.push_back(add("down" + std::to_string(s) + ".b",
                              {stage_channels(s + 1)}, true));
        ch = stage_channels(s + 1);
    }
    const int cb = bott_channels();
    const int E = cfg.time_embed_dim;
    time_w_ = add("time.w", {E, E}, false);
    time_b_ = add("time.b", {E}, true);
    film_s_w_ = add("film_scale.w", {2 * cb, E}, false);
    film_s_b_ = add("film_scale.b", {2 * cb}, true);
    film_b_w_ = add("film_shift.w", {2 * cb, E}, false);
    film_b_b_ = add("film_shift.b", {2 * cb}, true);
    bott1_w_ = add("bott1.w", {cb, 2 * cb, 3, 3}, false);
    bott1_b_ = add("bott1.b", {cb}, true);
    bott2_w_ = add("bott2.w", {cb, cb, 3, 3}, false);
    bott2_b_ = add("bott2.b", {cb}, true);
    head1_w_ = add("head1.w", {cb, cb}, false);
    head1_b_ = add("head1.b", {cb}, true);
    head2_w_ = add("head2.w", {3, cb}, true);  // zero init: identity-ish start
    head2_b_ = add("head2.b", {3}, true);
    int prev = cb;
    dec_w_.assign(D, -1);
    dec_b_.assign(D, -1);
    for (int s = D - 1; s >= 0; --s) {
        const int cs = stage_channels(s);
        const int in_ch = prev + 2 * cs;
        dec_w_[s] = add("dec" + std::to_string(s) + ".w", {cs, in_ch, 3, 3}, false);
        dec_b_[s] = add("dec" + std::to_string(s) + ".b", {cs}, true);
        prev = cs;
    }
    out_w_ = add("out.w", {1, prev, 3, 3}, true);  // zero init: lambda starts at 0.5
    out_b_ = add("out.b", {1}, true);
}

template <class T>
std::size_t Network<T>::param_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.count();
    return n;
}

template <class T>
T Network<T>::get_flat(std::size_t i) const {
    for (const auto& p : params_) {
        if (i < p.count()) return p.value[i];
        i -= p.count();
    }
    throw InvalidParameterError("get_flat: index out of range");
}

template <class T>
void Network<T>::set_flat(std::size_t i, T v) {
    for (auto& p : params_) {
        if (i < p.count()) {
            p.value[i] = v;
            return;
        }
        i -= p.count();
    }
    throw InvalidParameterError("set_flat: index out of range");
}

template <class T>
GradStore<T> Network<T>::make_grad_store() const {
    GradStore<T> g(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i)
        g[i].assign(params_[i].count(), T(0));
    return g;
}

template <class T>
void sin_embedding(int dim, double t, double T_steps, std::vector<T>& out) {
    const int half = dim / 2;
    out.assign(dim, T(0));
    const double tau = t / T_steps;
    for (int i = 0; i < half; ++i) {
        const double freq =
            2.0 * kPiNN * std::pow(64.0, half > 1 ? static_cast<double>(i) / (half - 1) : 0.0);
        out[i] = static_cast<T>(std::sin(freq * tau));
        out[half + i] = static_cast<T>(std::cos(freq * tau));
    }
}

template <class T>
void Network<T>::forward(const Tensor<T>& x0, const Tensor<T>& xT, double t,
                         double T_steps, Workspace<T>& ws) const {
    if (x0.c != 1 || xT.c != 1 || x0.h != cfg_.input_size || x0.w != cfg_.input_size ||
        xT.h != cfg_.input_size || xT.w != cfg_.input_size)
        throw DimensionError("model forward: inputs must be 1 x input_size x input_size");
    const int D = cfg_.depth;
    const int cb = bott_channels();

    // shared-weight encoder over both streams
    const Tensor<T>* streams[2] = {&x0, &xT};
    for (int st = 0; st < 2; ++st) {
        ws.enc_in[st].assign(D, Tensor<T>());
        ws.enc_skip[st].assign(D, Tensor<T>());
        ws.enc_down[st].assign(D, Tensor<T>());
        const Tensor<T>* cur = streams[st];
        for (int s = 0; s < D; ++s) {
            ws.enc_in[st][s] = *cur;
            conv3_forward(ws.enc_in[st][s], params_[enc_w_[s]].value,
                          params_[enc_b_[s]].value, stage_channels(s), 1,
                          ws.enc_skip[st][s]);
            relu_inplace(ws.enc_skip[st][s]);
            conv3_forward(ws.enc_skip[st][s], params_[down_w_[s]].value,
                          params_[down_b_[s]].value, stage_channels(s + 1), 2,
                          ws.enc_down[st][s]);
            relu_inplace(ws.enc_down[st][s]);
            cur = &ws.enc_down[st][s];
        }
    }

    // time embedding and FiLM coefficients
    sin_embedding<T>(cfg_.time_embed_dim, t, T_steps, ws.emb_raw);
    dense_forward(ws.emb_raw, params_[time_w_].value, params_[time_b_].value,
                  cfg_.time_embed_dim, ws.emb_pre);
    ws.emb = ws.emb_pre;
    for (T& v : ws.emb) v = v > T(0) ? v : T(0);
    dense_forward(ws.emb, params_[film_s_w_].value, params_[film_s_b_].value, 2 * cb,
                  ws.film_scale);
    dense_forward(ws.emb, params_[film_b_w_].value, params_[film_b_b_].value, 2 * cb,
                  ws.film_shift);

    // bottleneck: concat, feature-wise modulation, two convolutions
    ws.bott_in = concat_channels<T>({&ws.enc_down[0][D - 1], &ws.enc_down[1][D - 1]});
    ws.bott_mod = ws.bott_in;
    for (int c = 0; c < ws.bott_mod.c; ++c) {
        T* p = ws.bott_mod.plane(c);
        const T s = ws.film_scale[c];
        const T b = ws.film_shift[c];
        const int n = ws.bott_mod.h * ws.bott_mod.w;
        for (int i = 0; i < n; ++i) p[i] = (T(1) + s) * p[i] + b;
    }
    conv3_forward(ws.bott_mod, params_[bott1_w_].value, params_[bott1_b_].value, cb, 1,
                  ws.bott_a1);
    relu_inplace(ws.bott_a1);
    conv3_forward(ws.bott_a1, params_[bott2_w_].value, params_[bott2_b_].value, cb, 1,
                  ws.bott_a2);
    relu_inplace(ws.bott_a2);

    // affine head: global average pool, two dense layers, squashed outputs
    ws.gap.assign(cb, T(0));
    const int bn = ws.bott_a2.h * ws.bott_a2.w;
    for (int c = 0; c < cb; ++c) {
        const T* p = ws.bott_a2.plane(c);
        T acc = T(0);
        for (int i = 0; i < bn; ++i) acc += p[i];
        ws.gap[c] = acc / static_cast<T>(bn);
    }
    dense_forward(ws.gap, params_[head1_w_].value, params_[head1_b_].value, cb,
                  ws.head_h);
    for (T& v : ws.head_h) v = v > T(0) ? v : T(0);
    dense_forward(ws.head_h, params_[head2_w_].value, params_[head2_b_].value, 3,
                  ws.head_o);
    auto squash = [](double x) {
        const double th = std::tanh(x);
        return std::clamp(th, -(1.0 - kSquashEps), 1.0 - kSquashEps);
    };
    ws.affine[0] = cfg_.theta_max_deg * squash(static_cast<double>(ws.head_o[0]));
    ws.affine[1] = cfg_.shift_max_px * squash(static_cast<double>(ws.head_o[1]));
    ws.affine[2] = cfg_.shift_max_px * squash(static_cast<double>(ws.head_o[2]));

    // decay decoder with skip connections from both encoder streams
    ws.dec_up.assign(D, Tensor<T>());
    ws.dec_cat.assign(D, Tensor<T>());
    ws.dec_out.assign(D, Tensor<T>());
    const Tensor<T>* cur = &ws.bott_a2;
    for (int s = D - 1; s >= 0; --s) {
        ws.dec_up[s] = upsample2(*cur);
        ws.dec_cat[s] = concat_channels<T>(
            {&ws.dec_up[s], &ws.enc_skip[0][s], &ws.enc_skip[1][s]});
        conv3_forward(ws.dec_cat[s], params_[dec_w_[s]].value, params_[dec_b_[s]].value,
                      stage_channels(s), 1, ws.dec_out[s]);
        relu_inplace(ws.dec_out[s]);
        cur = &ws.dec_out[s];
    }
    conv3_forward(*cur, params_[out_w_].value, params_[out_b_].value, 1, 1, ws.logits);
    ws.lambda = Tensor<T>(1, ws.logits.h, ws.logits.w);
    for (std::size_t i = 0; i < ws.logits.v.size(); ++i) {
        const double sig = 1.0 / (1.0 + std::exp(-static_cast<double>(ws.logits.v[i])));
        ws.lambda.v[i] =
            static_cast<T>(std::clamp(sig, kSquashEps, 1.0 - kSquashEps));
    }
}

template <class T>
void Network<T>::backward(const Tensor<T>& x0, const Tensor<T>& xT,
                          const Workspace<T>& ws, const Tensor<T>& dlambda,
                          const std::array<double, 3>& daffine,
                          GradStore<T>& grads) const {
    (void)x0;
    (void)xT;
    const int D = cfg_.depth;
    const int cb = bott_channels();

    // lambda head
    Tensor<T> dlogits(1, ws.logits.h, ws.logits.w);
    for (std::size_t i = 0; i < dlogits.v.size(); ++i) {
        const double s = static_cast<double>(ws.lambda.v[i]);
        dlogits.v[i] = static_cast<T>(static_cast<double>(dlambda.v[i]) * s * (1.0 - s));
    }
    Tensor<T> d_dec;
    conv3_backward(ws.dec_out[0], params_[out_w_].value, 1, 1, dlogits,
                   grads[out_w_], grads[out_b_], &d_dec);

    // decoder chain, accumulating gradients into the skips and bottleneck
    std::array<std::vector<Tensor<T>>, 2> d_skip;
    d_skip[0].assign(D, Tensor<T>());
    d_skip[1].assign(D, Tensor<T>());
    Tensor<T> d_bott_a2(cb, ws.bott_a2.h, ws.bott_a2.w);
    for (int s = 0; s < D; ++s) {
        relu_backward_inplace(ws.dec_out[s], d_dec);
        Tensor<T> d_cat;
        conv3_backward(ws.dec_cat[s], params_[dec_w_[s]].value, stage_channels(s), 1,
                       d_dec, grads[dec_w_[s]], grads[dec_b_[s]], &d_cat);
        // split the concatenation
        const int up_c = ws.dec_up[s].c;
        const int sk_c = ws.enc_skip[0][s].c;
        Tensor<T> d_up(up_c, d_cat.h, d_cat.w);
        std::copy(d_cat.plane(0), d_cat.plane(up_c), d_up.plane(0));
        for (int st = 0; st < 2; ++st) {
            Tensor<T> dsk(sk_c, d_cat.h, d_cat.w);
            std::copy(d_cat.plane(up_c + st * sk_c), d_cat.plane(up_c + (st + 1) * sk_c),
                      dsk.plane(0));
            d_skip[st][s] = std::move(dsk);
        }
        Tensor<T> d_lower =
            upsample2_backward(d_up, d_cat.h / 2, d_cat.w / 2);
        if (s == D - 1) {
            d_bott_a2 = std::move(d_lower);
        } else {
            d_dec = std::move(d_lower);
        }
    }

    // affine head joins at the pooled bottleneck
    auto dsquash = [](double x, double range, double upstream) {
        const double th = std::tanh(x);
        if (std::abs(th) >= 1.0 - kSquashEps) return 0.0;  // clamped region
        return upstream * range * (1.0 - th * th);
    };
    std::vector<T> d_head_o(3);
    d_head_o[0] = static_cast<T>(
        dsquash(static_cast<double>(ws.head_o[0]), cfg_.theta_max_deg, daffine[0]));
    d_head_o[1] = static_cast<T>(
        dsquash(static_cast<double>(ws.head_o[1]), cfg_.shift_max_px, daffine[1]));
    d_head_o[2] = static_cast<T>(
        dsquash(static_cast<double>(ws.head_o[2]), cfg_.shift_max_px, daffine[2]));
    std::vector<T> d_head_h;
    dense_backward(ws.head_h, params_[head2_w_].value, 3, d_head_o, grads[head2_w_],
                   grads[head2_b_], &d_head_h);
    for (std::size_t i = 0; i < d_head_h.size(); ++i)
        if (ws.head_h[i] <= T(0)) d_head_h[i] = T(0);
    std::vector<T> d_gap;
    dense_backward(ws.gap, params_[head1_w_].value, cb, d_head_h, grads[head1_w_],
                   grads[head1_b_], &d_gap);
    const int bn = ws.bott_a2.h * ws.bott_a2.w;
    for (int c = 0; c < cb; ++c) {
        T* p = d_bott_a2.plane(c);
        const T g = d_gap[c] / static_cast<T>(bn);
        for (int i = 0; i < bn; ++i) p[i] += g;
    }

    // bottleneck convolutions
    relu_backward_inplace(ws.bott_a2, d_bott_a2);
    Tensor<T> d_bott_a1;
    conv3_backward(ws.bott_a1, params_[bott2_w_].value, cb, 1, d_bott_a2,
                   grads[bott2_w_], grads[bott2_b_], &d_bott_a1);
    relu_backward_inplace(ws.bott_a1, d_bott_a1);
    Tensor<T> d_bott_mod;
    conv3_backward(ws.bott_mod, params_[bott1_w_].value, cb, 1, d_bott_a1,
                   grads[bott1_w_], grads[bott1_b_], &d_bott_mod);

    // FiLM: h_mod = (1 + s) h + b
    std::vector<T> d_scale(2 * cb, T(0)), d_shift(2 * cb, T(0));
    Tensor<T> d_bott_in(d_bott_mod.c, d_bott_mod.h, d_bott_mod.w);
    const int bn2 = d_bott_mod.h * d_bott_mod.w;
    for (int c = 0; c < 2 * cb; ++c) {
        const T* dm = d_bott_mod.plane(c);
        const T* hin = ws.bott_in.plane(c);
        T* dip = d_bott_in.plane(c);
        const T s = ws.film_scale[c];
        T acc_s = T(0), acc_b = T(0);
        for (int i = 0; i < bn2; ++i) {
            acc_s += dm[i] * hin[i];
            acc_b += dm[i];
            dip[i] = (T(1) + s) * dm[i];
        }
        d_scale[c] = acc_s;
        d_shift[c] = acc_b;
    }
    std::vector<T> d_emb_a, d_emb_b;
    dense_backward(ws.emb, params_[film_s_w_].value, 2 * cb, d_scale, grads[film_s_w_],
                   grads[film_s_b_], &d_emb_a);
    dense_backward(ws.emb, params_[film_b_w_].value, 2 * cb, d_shift, grads[film_b_w_],
                   grads[film_b_b_], &d_emb_b);
    std::vector<T> d_emb(d_emb_a.size());
    for (std::size_t i = 0; i < d_emb.size(); ++i) {
        d_emb[i] = d_emb_a[i] + d_emb_b[i];
        if (ws.emb_pre[i] <= T(0)) d_emb[i] = T(0);
    }
    dense_backward(ws.emb_raw, params_[time_w_].value, cfg_.time_embed_dim, d_emb,
                   grads[time_w_], grads[time_b_], nullptr);

    // encoder streams (shared weights: gradients accumulate across streams)
    for (int st = 0; st < 2; ++st) {
        Tensor<T> d_down(cb, ws.enc_down[st][D - 1].h, ws.enc_down[st][D - 1].w);
        std::copy(d_bott_in.plane(st * cb), d_bott_in.plane((st + 1) * cb),
                  d_down.plane(0));
        for (int s = D - 1; s >= 0; --s) {
            relu_backward_inplace(ws.enc_down[st][s], d_down);
            Tensor<T> d_skip_total;
            conv3_backward(ws.enc_skip[st][s], params_[down_w_[s]].value,
                           stage_channels(s + 1), 2, d_down, grads[down_w_[s]],
                           grads[down_b_[s]], &d_skip_total);
            for (std::size_t i = 0; i < d_skip_total.v.size(); ++i)
                d_skip_total.v[i] += d_skip[st][s].v[i];
            relu_backward_inplace(ws.enc_skip[st][s], d_skip_total);
            if (s > 0) {
                conv3_backward(ws.enc_in[st][s], params_[enc_w_[s]].value,
                               stage_channels(s), 1, d_skip_total, grads[enc_w_[s]],
                               grads[enc_b_[s]], &d_down);
            } else {
                conv3_backward(ws.enc_in[st][s], params_[enc_w_[s]].value,
                               stage_channels(s), 1, d_skip_total, grads[enc_w_[s]],
                               grads[enc_b_[s]], nullptr);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// differentiable rendering and loss
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> render_prediction(const Tensor<T>& x0, const Tensor<T>& lambda,
                            const std::array<double, 3>& affine) {
    const int h = x0.h, w = x0.w;
    Tensor<T> attenuated(1, h, w);
    for (std::size_t i = 0; i < attenuated.v.size(); ++i)
        attenuated.v[i] = x0.v[i] * lambda.v[i];

    Tensor<T> out(1, h, w);
    const double theta = affine[0] * kPiNN / 180.0;
    const double ct = std::cos(theta), st = std::sin(theta);
    const double cx = (w - 1) / 2.0, cy = (h - 1) / 2.0;
    for (int r = 0; r < h; ++r) {
        const double pv = r - cy - affine[2];
        for (int c = 0; c < w; ++c) {
            const double pu = c - cx - affine[1];
            const double x = ct * pu + st * pv + cx;
            const double y = -st * pu + ct * pv + cy;
            if (x < 0.0 || y < 0.0 || x > w - 1 || y > h - 1) continue;
            int ix = static_cast<int>(x);
            int iy = static_cast<int>(y);
            if (ix == w - 1) --ix;
            if (iy == h - 1) --iy;
            const double fx = x - ix, fy = y - iy;
            const T* p = attenuated.plane(0);
            const double v00 = p[static_cast<std::size_t>(iy) * w + ix];
            const double v01 = p[static_cast<std::size_t>(iy) * w + ix + 1];
            const double v10 = p[static_cast<std::size_t>(iy + 1) * w + ix];
            const double v11 = p[static_cast<std::size_t>(iy + 1) * w + ix + 1];
            out.v[static_cast<std::size_t>(r) * w + c] =
                static_cast<T>((1 - fy) * ((1 - fx) * v00 + fx * v01) +
                               fy * ((1 - fx) * v10 + fx * v11));
        }
    }
    return out;
}

template <class T>
void render_prediction_backward(const Tensor<T>& x0, const Tensor<T>& lambda,
                                const std::array<double, 3>& affine,
                                const Tensor<T>& dout, Tensor<T>& dlambda,
                                std::array<double, 3>& daffine) {
    const int h = x0.h, w = x0.w;
    Tensor<T> attenuated(1, h, w);
    for (std::size_t i = 0; i < attenuated.v.size(); ++i)
        attenuated.v[i] = x0.v[i] * lambda.v[i];
    Tensor<T> datt(1, h, w);
    daffine = {0.0, 0.0, 0.0};

    const double theta = affine[0] * kPiNN / 180.0;
    const double ct = std::cos(theta), st = std::sin(theta);
    const double cx = (w - 1) / 2.0, cy = (h - 1) / 2.0;
    double dth = 0.0, dtx = 0.0, dty = 0.0;
    const T* p = attenuated.plane(0);
    for (int r = 0; r < h; ++r) {
        const double pv = r - cy - affine[2];
        for (int c = 0; c < w; ++c) {
            const double g = static_cast<double>(dout.v[static_cast<std::size_t>(r) * w + c]);
            if (g == 0.0) continue;
            const double pu = c - cx - affine[1];
            const double x = ct * pu + st * pv + cx;
            const double y = -st * pu + ct * pv + cy;
            if (x < 0.0 || y < 0.0 || x > w - 1 || y > h - 1) continue;
            int ix = static_cast<int>(x);
            int iy = static_cast<int>(y);
            if (ix == w - 1) --ix;
            if (iy == h - 1) --iy;
            const double fx = x - ix, fy = y - iy;
            const double v00 = p[static_cast<std::size_t>(iy) * w + ix];
            const double v01 = p[static_cast<std::size_t>(iy) * w + ix + 1];
            const double v10 = p[static_cast<std::size_t>(iy + 1) * w + ix];
            const double v11 = p[static_cast<std::size_t>(iy + 1) * w + ix + 1];
            // scatter into the attenuated image
            datt.v[static_cast<std::size_t>(iy) * w + ix] +=
                static_cast<T>(g * (1 - fy) * (1 - fx));
            datt.v[static_cast<std::size_t>(iy) * w + ix + 1] +=
                static_cast<T>(g * (1 - fy) * fx);
            datt.v[static_cast<std::size_t>(iy + 1) * w + ix] +=
                static_cast<T>(g * fy * (1 - fx));
            datt.v[static_cast<std::size_t>(iy + 1) * w + ix + 1] +=
                static_cast<T>(g * fy * fx);
            // chain through the sample position
            const double gx = (1 - fy) * (v01 - v00) + fy * (v11 - v10);
            const double gy = (1 - fx) * (v10 - v00) + fx * (v11 - v01);
            const double dq_th_u = -st * pu + ct * pv;
            const double dq_th_v = -ct * pu - st * pv;
            dth += g * (gx * dq_th_u + gy * dq_th_v);
            dtx += g * (gx * -ct + gy * st);
            dty += g * (gx * -st + gy * -ct);
        }
    }
    daffine[0] = dth * kPiNN / 180.0;  // theta is carried in degrees
    daffine[1] = dtx;
    daffine[2] = dty;
    dlambda = Tensor<T>(1, h, w);
    for (std::size_t i = 0; i < dlambda.v.size(); ++i)
        dlambda.v[i] = datt.v[i] * x0.v[i];
}

template <class T>
double mse_loss(const Tensor<T>& pred, const Tensor<T>& target) {
    if (pred.v.size() != target.v.size())
        throw DimensionError("mse_loss: shape mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.v.size(); ++i) {
        const double d = static_cast<double>(pred.v[i]) - static_cast<double>(target.v[i]);
        acc += d * d;
    }
    return acc / static_cast<double>(pred.v.size());
}

template <class T>
double mse_loss_backward(const Tensor<T>& pred, const Tensor<T>& target,
                         Tensor<T>& dpred) {
    if (pred.v.size() != target.v.size())
        throw DimensionError("mse_loss: shape mismatch");
    dpred = Tensor<T>(pred.c, pred.h, pred.w);
    double acc = 0.0;
    const double scale = 2.0 / static_cast<double>(pred.v.size());
    for (std::size_t i = 0; i < pred.v.size(); ++i) {
        const double d = static_cast<double>(pred.v[i]) - static_cast<double>(target.v[i]);
        acc += d * d;
        dpred.v[i] = static_cast<T>(scale * d);
    }
    return acc / static_cast<double>(pred.v.size());
}

template <class T>
Tensor<T> to_tensor(const ImageGrid& img) {
    Tensor<T> t(1, img.height, img.width);
    for (std::size_t i = 0; i < img.data.size(); ++i)
        t.v[i] = static_cast<T>(img.data[i]);
    return t;
}

template <class T>
ImageGrid to_image(const Tensor<T>& t) {
    ImageGrid img(t.h, t.w);
    for (std::size_t i = 0; i < img.data.size(); ++i)
        img.data[i] = static_cast<float>(t.v[i]);
    return img;
}

/// Core pipeline: forward -> render -> MSE; optional full backward.
template <class T>
double pipeline_loss(const Network<T>& net, const Tensor<T>& x0, const Tensor<T>& xT,
                     const Tensor<T>& target, double t, double T_steps,
                     Workspace<T>& ws, std::type_identity_t<GradStore<T>>* grads) {
    net.forward(x0, xT, t, T_steps, ws);
    const Tensor<T> pred = render_prediction(x0, ws.lambda, ws.affine);
    if (!grads) return mse_loss(pred, target);
    Tensor<T> dpred;
    const double loss = mse_loss_backward(pred, target, dpred);
    Tensor<T> dlambda;
    std::array<double, 3> daffine{};
    render_prediction_backward(x0, ws.lambda, ws.affine, dpred, dlambda, daffine);
    net.backward(x0, xT, ws, dlambda, daffine, *grads);
    return loss;
}

template <class T>
double sample_loss(const Network<T>& net, const SequenceSample& sample,
                   Workspace<T>& ws, std::type_identity_t<GradStore<T>>* grads) {
    const Tensor<T> x0 = to_tensor<T>(sample.x0_noisy);
    const Tensor<T> xT = to_tensor<T>(sample.xT_noisy);
    const Tensor<T> target = to_tensor<T>(sample.xt_clean);
    return pipeline_loss(net, x0, xT, target, sample.t,
                         static_cast<double>(sample.total_steps), ws, grads);
}

} // namespace nn
} // namespace stemdeg
