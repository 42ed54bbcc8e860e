#pragma once

#include <array>
#include <cmath>
#include <type_traits>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "stemdeg/estimate.hpp"
#include "stemdeg/image.hpp"
#include "stemdeg/synth.hpp"

namespace stemdeg {

/// Architecture of the time-conditioned dual-stream encoder-decoder.
struct ModelConfig {
    int base_channels = 8;
    int depth = 2;              // down/upsampling stages
    int time_embed_dim = 32;    // must be even
    double theta_max_deg = 30.0;
    double shift_max_px = 64.0;
    int input_size = 64;        // must be divisible by 2^depth
};

/// Optimization settings for the toy training loop.
struct TrainConfig {
    int batch_size = 32;
    int steps = 2000;
    double lr = 1e-4;
    double weight_decay = 1e-4;
    bool cosine_schedule = true;
    std::uint64_t seed = 0;
    int val_batches = 2;    // fixed validation batches drawn once
    int val_interval = 20;  // validation cadence; every step inside final_window
    int final_window = 100;
    SampleSourceConfig sampler;
};

namespace nn {

template <class T>
struct Tensor {
    int c = 0, h = 0, w = 0;
    std::vector<T> v;

    Tensor() = default;
    Tensor(int c_, int h_, int w_)
        : c(c_), h(h_), w(w_),
          v(static_cast<std::size_t>(c_) * h_ * w_, T(0)) {}

    T* plane(int ch) { return v.data() + static_cast<std::size_t>(ch) * h * w; }
    const T* plane(int ch) const {
        return v.data() + static_cast<std::size_t>(ch) * h * w;
    }
    std::size_t size() const { return v.size(); }
};

template <class T>
struct ParamTensor {
    std::string name;
    std::vector<int> shape;
    std::vector<T> value;

    std::size_t count() const { return value.size(); }
};

/// Per-sample activation storage kept for the backward pass.
template <class T>
struct Workspace {
    // encoder activations, per stream
    std::array<std::vector<Tensor<T>>, 2> enc_in;    // stage inputs
    std::array<std::vector<Tensor<T>>, 2> enc_skip;  // post-conv skip sources
    std::array<std::vector<Tensor<T>>, 2> enc_down;  // post-downsample
    Tensor<T> bott_in;       // concatenated streams
    Tensor<T> bott_mod;      // after FiLM
    Tensor<T> bott_a1, bott_a2;
    std::vector<T> gap, head_h, head_o;   // pooled features, hidden, 3 raw outputs
    std::vector<T> emb_raw, emb_pre, emb; // sinusoid, pre-activation, embedding
    std::vector<T> film_scale, film_shift;
    std::vector<Tensor<T>> dec_up, dec_cat, dec_out;
    Tensor<T> logits;
    Tensor<T> lambda;
    std::array<double, 3> affine{};  // theta_deg, tx, ty
};

/// Gradient buffers aligned with the parameter list.
template <class T>
using GradStore = std::vector<std::vector<T>>;

template <class T>
class Network {
public:
    Network() = default;
    Network(const ModelConfig& cfg, std::uint64_t seed);

    const ModelConfig& config() const { return cfg_; }
    std::uint64_t seed() const { return seed_; }

    std::vector<ParamTensor<T>>& params() { return params_; }
    const std::vector<ParamTensor<T>>& params() const { return params_; }
    std::size_t param_count() const;
    T get_flat(std::size_t i) const;
    void set_flat(std::size_t i, T v);

    GradStore<T> make_grad_store() const;

    /// Dual-stream forward pass. x0 and xT must be input_size x input_size.
    void forward(const Tensor<T>& x0, const Tensor<T>& xT, double t, double T_steps,
                 Workspace<T>& ws) const;

    /// Backward pass for upstream gradients on lambda and the affine triple.
    /// Accumulates parameter gradients into `grads`.
    void backward(const Tensor<T>& x0, const Tensor<T>& xT, const Workspace<T>& ws,
                  const Tensor<T>& dlambda, const std::array<double, 3>& daffine,
                  GradStore<T>& grads) const;

private:
    ModelConfig cfg_;
    std::uint64_t seed_ = 0;
    std::vector<ParamTensor<T>> params_;

    // parameter indices, resolved at construction
    std::vector<int> enc_w_, enc_b_, down_w_, down_b_;
    std::vector<int> dec_w_, dec_b_;
    int bott1_w_ = -1, bott1_b_ = -1, bott2_w_ = -1, bott2_b_ = -1;
    int time_w_ = -1, time_b_ = -1;
    int film_s_w_ = -1, film_s_b_ = -1, film_b_w_ = -1, film_b_b_ = -1;
    int head1_w_ = -1, head1_b_ = -1, head2_w_ = -1, head2_b_ = -1;
    int out_w_ = -1, out_b_ = -1;

    int stage_channels(int s) const { return cfg_.base_channels << s; }
    int bott_channels() const { return cfg_.base_channels << cfg_.depth; }

    friend struct NetworkAccess;
};

/// Differentiable decay-then-drift rendering of the prediction.
/// Forward matches degrade_forward; backward yields gradients with respect to
/// the decay map and (theta_deg, tx, ty). Out-of-bounds samples contribute
/// zero gradient.
template <class T>
Tensor<T> render_prediction(const Tensor<T>& x0, const Tensor<T>& lambda,
                            const std::array<double, 3>& affine);

template <class T>
void render_prediction_backward(const Tensor<T>& x0, const Tensor<T>& lambda,
                                const std::array<double, 3>& affine,
                                const Tensor<T>& dout, Tensor<T>& dlambda,
                                std::array<double, 3>& daffine);

/// Mean squared error and its gradient with respect to `pred`.
template <class T>
double mse_loss(const Tensor<T>& pred, const Tensor<T>& target);
template <class T>
double mse_loss_backward(const Tensor<T>& pred, const Tensor<T>& target,
                         Tensor<T>& dpred);

template <class T>
Tensor<T> to_tensor(const ImageGrid& img);
template <class T>
ImageGrid to_image(const Tensor<T>& t);

/// Full training pipeline: forward, render, loss; optionally backpropagates
/// into `grads`.
template <class T>
double pipeline_loss(const Network<T>& net, const Tensor<T>& x0, const Tensor<T>& xT,
                     const Tensor<T>& target, double t, double T_steps,
                     Workspace<T>& ws, std::type_identity_t<GradStore<T>>* grads);

template <class T>
double sample_loss(const Network<T>& net, const SequenceSample& sample,
                   Workspace<T>& ws, std::type_identity_t<GradStore<T>>* grads);

} // namespace nn

/// Learnable state: config, seed, and every tensor, in manifest order.
using ModelParams = nn::Network<float>;

/// Creates a freshly initialized model (centered uniform fan-in weights, zero
/// final decay layer and affine output layer).
ModelParams init_model(const ModelConfig& cfg, std::uint64_t seed);

/// Predicted decay map and drift parameters for a frame pair at time t of T.
std::pair<DecayMap, AffineParams> forward(const ModelParams& params,
                                          const ImageGrid& x0, const ImageGrid& xT,
                                          double t, double T);

/// Renders the prediction through the shared forward kernel:
/// degrade_forward(x0, lambda, affine, 0).
ImageGrid reconstruct(const ImageGrid& x0, const DecayMap& lambda,
                      const AffineParams& affine);

/// Mean squared error over pixels.
double loss_rec(const ImageGrid& pred, const ImageGrid& target);

/// One recorded training step.
struct TrainStep {
    int step = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double val_loss = std::numeric_limits<double>::quiet_NaN();  // NaN = not evaluated
};

struct TrainResult {
    ModelParams params;
    std::vector<TrainStep> history;
    double identity_baseline = 0.0;   // identity-predictor loss on the val set
    double final_val_mean = 0.0;      // mean val loss over the final window
};

/// AdamW + cosine-schedule training on dynamically generated samples.
/// Deterministic for fixed configs and seed. Throws NumericalError when the
/// loss stops being finite.
TrainResult train(const TrainConfig& train_cfg, const ModelConfig& model_cfg,
                  const SampleSource& sample_source);

/// Forward pass wrapped into the common Estimate record. The residual is the
/// reconstruction loss against xT (meaningful when t = T).
Estimate predict(const ModelParams& params, const ImageGrid& x0,
                 const ImageGrid& xT, double t, double T);

/// Estimator-interface adapter; supports intermediate-time queries.
class LearnedEstimator final : public Estimator {
public:
    explicit LearnedEstimator(ModelParams params) : params_(std::move(params)) {}
    Estimate estimate(const ImageGrid& x0, const ImageGrid& xT, double t,
                      double T) const override {
        return predict(params_, x0, xT, t, T);
    }
    bool supports_time_queries() const override { return true; }

private:
    ModelParams params_;
};

/// Model file: "ATDM1\n", one-line JSON header (config, seed, tensor
/// manifest), then raw float32 little-endian payloads in manifest order.
void save_model(const ModelParams& params, const std::string& path);
ModelParams load_model(const std::string& path);

} // namespace stemdeg

#include "stemdeg/nn_impl.hpp"
