#include "stemdeg/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "stemdeg/estimate.hpp"

static_assert(std::endian::native == std::endian::little,
              "model serialization assumes a little-endian host");

namespace stemdeg {

using nlohmann::json;

ModelParams init_model(const ModelConfig& cfg, std::uint64_t seed) {
    return ModelParams(cfg, seed);
}

std::pair<DecayMap, AffineParams> forward(const ModelParams& params,
                                          const ImageGrid& x0, const ImageGrid& xT,
                                          double t, double T) {
    nn::Workspace<float> ws;
    params.forward(nn::to_tensor<float>(x0), nn::to_tensor<float>(xT), t, T, ws);
    AffineParams affine{ws.affine[0], ws.affine[1], ws.affine[2]};
    return {nn::to_image(ws.lambda), affine};
}

ImageGrid reconstruct(const ImageGrid& x0, const DecayMap& lambda,
                      const AffineParams& affine) {
    return degrade_forward(x0, lambda, affine, 0.0f);
}

double loss_rec(const ImageGrid& pred, const ImageGrid& target) {
    if (!pred.same_shape(target)) throw DimensionError("loss_rec: shape mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        const double d = static_cast<double>(pred.data[i]) - target.data[i];
        acc += d * d;
    }
    return acc / static_cast<double>(pred.data.size());
}

Estimate predict(const ModelParams& params, const ImageGrid& x0, const ImageGrid& xT,
                 double t, double T) {
    auto [lambda, affine] = forward(params, x0, xT, t, T);
    Estimate est;
    est.decay = std::move(lambda);
    est.affine = affine;
    est.residual = loss_rec(reconstruct(x0, est.decay, est.affine), xT);
    est.converged = true;
    est.iterations = 1;
    est.valid_fraction = 1.0;
    return est;
}

namespace {

double cosine_lr(const TrainConfig& cfg, int step) {
    if (!cfg.cosine_schedule) return cfg.lr;
    const double progress = static_cast<double>(step - 1) / std::max(1, cfg.steps);
    return cfg.lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

} // namespace

TrainResult train(const TrainConfig& train_cfg, const ModelConfig& model_cfg,
                  const SampleSource& sample_source) {
    if (train_cfg.batch_size < 1)
        throw InvalidParameterError("train: batch_size must be >= 1");
    if (train_cfg.steps < 1) throw InvalidParameterError("train: steps must be >= 1");
    if (train_cfg.lr < 0.0) throw InvalidParameterError("train: lr must be >= 0");

    TrainResult result;
    result.params = ModelParams(model_cfg, train_cfg.seed);
    ModelParams& net = result.params;

    // fixed validation set on a reserved index range
    const std::uint64_t kValBase = 1ull << 40;
    const int n_val = std::max(1, train_cfg.val_batches) * train_cfg.batch_size;
    std::vector<SequenceSample> val(n_val);
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < n_val; ++i) val[i] = sample_source(kValBase + i);

    {
        double acc = 0.0;
        for (const auto& s : val) acc += loss_rec(s.x0_noisy, s.xt_clean);
        result.identity_baseline = acc / n_val;
    }

    auto eval_val = [&]() {
        std::vector<double> losses(val.size());
#pragma omp parallel for schedule(dynamic)
        for (int i = 0; i < static_cast<int>(val.size()); ++i) {
            nn::Workspace<float> ws;
            losses[i] = nn::sample_loss(net, val[i], ws, nullptr);
        }
        double acc = 0.0;
        for (double l : losses) acc += l;
        return acc / static_cast<double>(losses.size());
    };

    // AdamW state, aligned with the parameter tensors
    std::vector<std::vector<float>> m(net.params().size()), v(net.params().size());
    for (std::size_t i = 0; i < net.params().size(); ++i) {
        m[i].assign(net.params()[i].count(), 0.0f);
        v[i].assign(net.params()[i].count(), 0.0f);
    }
    const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    const int B = train_cfg.batch_size;
    std::vector<nn::GradStore<float>> grads(B);
    std::vector<nn::Workspace<float>> ws(B);
    std::vector<double> losses(B);
    for (int b = 0; b < B; ++b) grads[b] = net.make_grad_store();

    result.history.reserve(train_cfg.steps);
    double final_acc = 0.0;
    int final_count = 0;

    for (int step = 1; step <= train_cfg.steps; ++step) {
        const double lr = cosine_lr(train_cfg, step);

#pragma omp parallel for schedule(dynamic)
        for (int b = 0; b < B; ++b) {
            for (auto& g : grads[b]) std::fill(g.begin(), g.end(), 0.0f);
            const SequenceSample s =
                sample_source(static_cast<std::uint64_t>(step - 1) * B + b);
            losses[b] = nn::sample_loss(net, s, ws[b], &grads[b]);
        }
        double loss = 0.0;
        for (double l : losses) loss += l;
        loss /= B;
        if (!std::isfinite(loss))
            throw NumericalError("train: loss diverged at step " + std::to_string(step));

        const double bc1 = 1.0 - std::pow(beta1, step);
        const double bc2 = 1.0 - std::pow(beta2, step);
        for (std::size_t pi = 0; pi < net.params().size(); ++pi) {
            auto& value = net.params()[pi].value;
            auto& mi = m[pi];
            auto& vi = v[pi];
            for (std::size_t j = 0; j < value.size(); ++j) {
                double g = 0.0;
                for (int b = 0; b < B; ++b) g += grads[b][pi][j];
                g /= B;
                const double mn = beta1 * mi[j] + (1.0 - beta1) * g;
                const double vn = beta2 * vi[j] + (1.0 - beta2) * g * g;
                mi[j] = static_cast<float>(mn);
                vi[j] = static_cast<float>(vn);
                const double update = (mn / bc1) / (std::sqrt(vn / bc2) + eps) +
                                      train_cfg.weight_decay * value[j];
                value[j] = static_cast<float>(value[j] - lr * update);
            }
        }

        TrainStep rec;
        rec.step = step;
        rec.lr = lr;
        rec.train_loss = loss;
        const bool in_final_window = step > train_cfg.steps - train_cfg.final_window;
        if (in_final_window ||
            (train_cfg.val_interval > 0 && step % train_cfg.val_interval == 0)) {
            rec.val_loss = eval_val();
            if (in_final_window) {
                final_acc += rec.val_loss;
                ++final_count;
            }
        }
        result.history.push_back(rec);
    }
    result.final_val_mean = final_count > 0 ? final_acc / final_count
                                            : eval_val();
    return result;
}

void save_model(const ModelParams& params, const std::string& path) {
    json header;
    header["config"] = {{"base_channels", params.config().base_channels},
                        {"depth", params.config().depth},
                        {"time_embed_dim", params.config().time_embed_dim},
                        {"theta_max_deg", params.config().theta_max_deg},
                        {"shift_max_px", params.config().shift_max_px},
                        {"input_size", params.config().input_size}};
    header["seed"] = params.seed();
    json manifest = json::array();
    for (const auto& p : params.params())
        manifest.push_back({{"name", p.name}, {"shape", p.shape}});
    header["tensors"] = manifest;

    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError("save_model: cannot open " + path);
    f << "ATDM1\n" << header.dump() << "\n";
    for (const auto& p : params.params())
        f.write(reinterpret_cast<const char*>(p.value.data()),
                static_cast<std::streamsize>(p.value.size() * sizeof(float)));
    if (!f) throw FormatError("save_model: write failed for " + path);
}

ModelParams load_model(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("load_model: cannot open " + path);
    std::string magic;
    if (!std::getline(f, magic) || magic != "ATDM1")
        throw FormatError("load_model: bad magic", 0);
    std::string header_line;
    if (!std::getline(f, header_line))
        throw FormatError("load_model: missing header", 6);
    json header;
    try {
        header = json::parse(header_line);
    } catch (const json::exception& e) {
        throw FormatError(std::string("load_model: bad header JSON: ") + e.what(), 6);
    }

    ModelConfig cfg;
    const auto& jc = header.at("config");
    cfg.base_channels = jc.at("base_channels").get<int>();
    cfg.depth = jc.at("depth").get<int>();
    cfg.time_embed_dim = jc.at("time_embed_dim").get<int>();
    cfg.theta_max_deg = jc.at("theta_max_deg").get<double>();
    cfg.shift_max_px = jc.at("shift_max_px").get<double>();
    cfg.input_size = jc.at("input_size").get<int>();

    ModelParams params(cfg, header.at("seed").get<std::uint64_t>());
    const auto& manifest = header.at("tensors");
    if (manifest.size() != params.params().size())
        throw FormatError("load_model: tensor manifest does not match the config");
    for (std::size_t i = 0; i < params.params().size(); ++i) {
        auto& p = params.params()[i];
        if (manifest[i].at("name").get<std::string>() != p.name ||
            manifest[i].at("shape").get<std::vector<int>>() != p.shape)
            throw FormatError("load_model: manifest entry mismatch for " + p.name);
        f.read(reinterpret_cast<char*>(p.value.data()),
               static_cast<std::streamsize>(p.value.size() * sizeof(float)));
        if (!f)
            throw FormatError("load_model: truncated payload at tensor " + p.name,
                              static_cast<long>(f.tellg()));
    }
    for (const auto& p : params.params())
        for (float x : p.value)
            if (!std::isfinite(x))
                throw FormatError("load_model: non-finite value in tensor payload");
    return params;
}

} // namespace stemdeg
