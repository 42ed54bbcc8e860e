#include "stemdeg/cli.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "stemdeg/direct.hpp"
#include "stemdeg/inference.hpp"
#include "stemdeg/io.hpp"
#include "stemdeg/metrics.hpp"
#include "stemdeg/model.hpp"
#include "stemdeg/rng.hpp"
#include "stemdeg/synth.hpp"

namespace stemdeg {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string fmt6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

void write_manifest(const std::string& path, const json& j) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot write manifest " + path);
    f << j.dump(2) << "\n";
}

/// "dose=200,jitter=0.5,readout=0.01" or "none"; a component with value 0 is
/// disabled.
NoiseConfig parse_noise(const std::string& text) {
    NoiseConfig cfg;
    if (text.empty()) return cfg;
    if (text == "none") return NoiseConfig::disabled();
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto eq = item.find('=');
        if (eq == std::string::npos)
            throw InvalidParameterError("noise spec: expected key=value, got '" + item + "'");
        const std::string key = item.substr(0, eq);
        const double value = std::stod(item.substr(eq + 1));
        if (key == "dose") {
            cfg.dose = value;
            cfg.poisson_enabled = value > 0.0;
        } else if (key == "jitter") {
            cfg.jitter_sigma = value;
            cfg.jitter_enabled = value > 0.0;
        } else if (key == "readout") {
            cfg.readout_sigma = value;
            cfg.readout_enabled = value > 0.0;
        } else {
            throw InvalidParameterError("noise spec: unknown key '" + key + "'");
        }
    }
    return cfg;
}

json noise_to_json(const NoiseConfig& n) {
    return {{"dose", n.dose},
            {"jitter_sigma", n.jitter_sigma},
            {"readout_sigma", n.readout_sigma},
            {"poisson_enabled", n.poisson_enabled},
            {"jitter_enabled", n.jitter_enabled},
            {"readout_enabled", n.readout_enabled}};
}

AtomMapSpec atom_spec_from(double lattice_const, double lattice_angle_deg,
                           double amp_lo, double amp_hi, double width_lo,
                           double width_hi, double jitter, std::uint64_t seed) {
    AtomMapSpec s;
    const double a = lattice_angle_deg * 3.14159265358979323846 / 180.0;
    s.a1x = lattice_const * std::cos(a);
    s.a1y = lattice_const * std::sin(a);
    s.a2x = -lattice_const * std::sin(a);
    s.a2y = lattice_const * std::cos(a);
    s.amp_lo = amp_lo;
    s.amp_hi = amp_hi;
    s.width_lo = width_lo;
    s.width_hi = width_hi;
    s.jitter_sigma = jitter;
    s.seed = seed;
    return s;
}

std::string frame_name(const char* stem, int idx) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s_%03d.atdf", stem, idx);
    return buf;
}

struct EstimatorChoice {
    std::string method = "direct";
    std::string model_path;
    double t = -1.0;  // learned query time; defaults to steps
    int steps = 10;
};

Estimate run_estimate(const EstimatorChoice& ch, const ImageGrid& ref,
                      const ImageGrid& target) {
    if (ch.method == "direct") return estimate_direct(ref, target);
    if (ch.method != "model")
        throw InvalidParameterError("method must be 'direct' or 'model'");
    if (ch.model_path.empty())
        throw InvalidParameterError("--model is required for method 'model'");
    const ModelParams params = load_model(ch.model_path);
    const double t = ch.t >= 0.0 ? ch.t : static_cast<double>(ch.steps);
    return predict(params, ref, target, t, static_cast<double>(ch.steps));
}

// ---------------------------------------------------------------------------
// subcommands
// ---------------------------------------------------------------------------

int cmd_gen_atoms(const std::string& out, int size, std::uint64_t seed,
                  double lattice_const, double lattice_angle, double amp_lo,
                  double amp_hi, double width_lo, double width_hi, double jitter) {
    const AtomMapSpec spec = atom_spec_from(lattice_const, lattice_angle, amp_lo,
                                            amp_hi, width_lo, width_hi, jitter, seed);
    const ImageGrid img = gen_atom_map(spec, size, size);
    write_image_auto(out, img);
    json manifest = {{"command", "gen-atoms"},
                     {"out", out},
                     {"size", size},
                     {"seed", seed},
                     {"lattice_const", lattice_const},
                     {"lattice_angle_deg", lattice_angle},
                     {"amp", {amp_lo, amp_hi}},
                     {"width", {width_lo, width_hi}},
                     {"pos_jitter", jitter}};
    write_manifest(out + ".manifest.json", manifest);
    return 0;
}

int cmd_simulate(const std::string& in, double theta, double tx, double ty, int steps,
                 int decay_cells, int decay_octaves, double min_survival,
                 const std::string& noise_text, const std::string& out_dir,
                 std::uint64_t seed) {
    const ImageGrid x0 = read_image_auto(in);
    const NoiseConfig noise = parse_noise(noise_text);
    fs::create_directories(out_dir);

    DegradationSpec spec;
    spec.affine_T = {theta, tx, ty};
    spec.total_steps = steps;
    spec.noise = noise;
    spec.lambda_T = make_final_decay(
        perlin_field(x0.height, x0.width, decay_cells, decay_octaves,
                     derive_seed(seed, 1)),
        min_survival);

    const fs::path dir(out_dir);
    write_atdf_image((dir / "x0.atdf").string(), x0);
    for (int t = 0; t <= steps; ++t) {
        const SequenceSample s = gen_sequence_sample(x0, spec, t, derive_seed(seed, 2));
        write_atdf_image((dir / frame_name("xt", t)).string(), s.xt_clean);
        write_atdf_image((dir / frame_name("lambda", t)).string(), s.lambda_t);
        if (t == steps) {
            write_atdf_image((dir / "xT.atdf").string(), s.xt_clean);
            write_atdf_image((dir / "x0_noisy.atdf").string(), s.x0_noisy);
            write_atdf_image((dir / "xT_noisy.atdf").string(), s.xT_noisy);
        }
    }

    DegradationSpecFile sf;
    sf.affine_T = spec.affine_T;
    sf.total_steps = steps;
    sf.min_survival = min_survival;
    sf.decay_cells = decay_cells;
    sf.decay_octaves = decay_octaves;
    sf.noise = noise;
    sf.seed = seed;
    sf.lambda_path = frame_name("lambda", steps);
    write_spec_json((dir / "spec.json").string(), sf);

    json manifest = {{"command", "simulate"}, {"in", in},
                     {"theta_deg", theta},   {"tx_px", tx},
                     {"ty_px", ty},          {"steps", steps},
                     {"decay_cells", decay_cells}, {"decay_octaves", decay_octaves},
                     {"min_survival", min_survival}, {"noise", noise_to_json(noise)},
                     {"out_dir", out_dir},   {"seed", seed}};
    write_manifest((dir / "manifest.json").string(), manifest);
    return 0;
}

int cmd_estimate(const std::string& ref_path, const std::string& target_path,
                 const EstimatorChoice& ch, const std::string& out,
                 std::uint64_t seed) {
    const ImageGrid ref = read_image_auto(ref_path);
    const ImageGrid target = read_image_auto(target_path);
    const Estimate est = run_estimate(ch, ref, target);

    fs::path outp(out);
    const std::string stem = (outp.parent_path() / outp.stem()).string();
    write_estimate(out, est, stem + "_decay.atdf");
    json manifest = {{"command", "estimate"},
                     {"ref", ref_path},
                     {"target", target_path},
                     {"method", ch.method},
                     {"model", ch.model_path},
                     {"t", ch.t},
                     {"steps", ch.steps},
                     {"out", out},
                     {"seed", seed}};
    write_manifest(stem + "_manifest.json", manifest);
    std::cout << "theta_deg=" << fmt6(est.affine.theta_deg)
              << " tx_px=" << fmt6(est.affine.tx_px)
              << " ty_px=" << fmt6(est.affine.ty_px)
              << " residual=" << fmt6(est.residual)
              << " converged=" << (est.converged ? "true" : "false") << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& out,
              const std::string& history_path) {
    TrainConfig tc;
    ModelConfig mc;
    if (!config_path.empty()) {
        std::ifstream f(config_path);
        if (!f) throw FormatError("train: cannot open config " + config_path);
        json j;
        try {
            f >> j;
        } catch (const json::exception& e) {
            throw FormatError(std::string("train: bad config JSON: ") + e.what());
        }
        tc.batch_size = j.value("batch_size", tc.batch_size);
        tc.steps = j.value("steps", tc.steps);
        tc.lr = j.value("lr", tc.lr);
        tc.weight_decay = j.value("weight_decay", tc.weight_decay);
        tc.cosine_schedule = j.value("cosine_schedule", tc.cosine_schedule);
        tc.seed = j.value("seed", tc.seed);
        tc.val_batches = j.value("val_batches", tc.val_batches);
        tc.val_interval = j.value("val_interval", tc.val_interval);
        tc.final_window = j.value("final_window", tc.final_window);
        if (j.contains("model")) {
            const auto& m = j["model"];
            mc.base_channels = m.value("base_channels", mc.base_channels);
            mc.depth = m.value("depth", mc.depth);
            mc.time_embed_dim = m.value("time_embed_dim", mc.time_embed_dim);
            mc.theta_max_deg = m.value("theta_max_deg", mc.theta_max_deg);
            mc.shift_max_px = m.value("shift_max_px", mc.shift_max_px);
            mc.input_size = m.value("input_size", mc.input_size);
        }
        if (j.contains("sampler")) {
            const auto& s = j["sampler"];
            tc.sampler.image_size = s.value("image_size", tc.sampler.image_size);
            tc.sampler.total_steps = s.value("total_steps", tc.sampler.total_steps);
            tc.sampler.theta_max_deg = s.value("theta_max_deg", tc.sampler.theta_max_deg);
            tc.sampler.shift_max_px = s.value("shift_max_px", tc.sampler.shift_max_px);
            tc.sampler.min_survival_lo =
                s.value("min_survival_lo", tc.sampler.min_survival_lo);
            tc.sampler.min_survival_hi =
                s.value("min_survival_hi", tc.sampler.min_survival_hi);
            tc.sampler.decay_cells = s.value("decay_cells", tc.sampler.decay_cells);
            tc.sampler.decay_octaves = s.value("decay_octaves", tc.sampler.decay_octaves);
            if (s.contains("noise"))
                tc.sampler.noise = parse_noise(s["noise"].get<std::string>());
        }
    }
    tc.sampler.image_size = mc.input_size;
    tc.sampler.shift_max_px = std::min(tc.sampler.shift_max_px, mc.shift_max_px);
    tc.sampler.theta_max_deg = std::min(tc.sampler.theta_max_deg, mc.theta_max_deg);

    const TrainResult result = train(tc, mc, make_sample_source(tc.sampler, tc.seed));
    save_model(result.params, out);

    if (!history_path.empty()) {
        std::ofstream h(history_path, std::ios::binary);
        if (!h) throw FormatError("train: cannot write history " + history_path);
        h << "step,lr,train_loss,val_loss\n";
        for (const auto& s : result.history) {
            h << s.step << "," << fmt6(s.lr) << "," << fmt6(s.train_loss) << ",";
            if (std::isfinite(s.val_loss)) h << fmt6(s.val_loss);
            h << "\n";
        }
    }
    json manifest = {{"command", "train"},
                     {"config", config_path},
                     {"out", out},
                     {"history", history_path},
                     {"steps", tc.steps},
                     {"batch_size", tc.batch_size},
                     {"lr", tc.lr},
                     {"seed", tc.seed},
                     {"identity_baseline", result.identity_baseline},
                     {"final_val_mean", result.final_val_mean}};
    write_manifest(out + ".manifest.json", manifest);
    std::cout << "identity_baseline=" << fmt6(result.identity_baseline)
              << " final_val_mean=" << fmt6(result.final_val_mean) << "\n";
    return 0;
}

int cmd_bench_damage(const std::string& noise_type, int frames, double max_intensity,
                     int trials, const EstimatorChoice& ch, int size,
                     const std::string& out, std::uint64_t seed) {
    DamageNoiseType type;
    if (noise_type == "gaussian")
        type = DamageNoiseType::gaussian_blackhole;
    else if (noise_type == "perlin")
        type = DamageNoiseType::perlin;
    else if (noise_type == "random")
        type = DamageNoiseType::random;
    else
        throw InvalidParameterError("bench-damage: unknown noise type '" + noise_type + "'");

    std::optional<ModelParams> model;
    if (ch.method == "model") {
        if (ch.model_path.empty())
            throw InvalidParameterError("--model is required for method 'model'");
        model = load_model(ch.model_path);
        size = model->config().input_size;
    }

    std::vector<RegressionReport> reports(trials);
#pragma omp parallel for schedule(dynamic)
    for (int trial = 0; trial < trials; ++trial) {
        AtomMapSpec spec;
        spec.seed = derive_seed(seed, trial);
        const ImageGrid x0 = gen_atom_map(spec, size, size);
        const auto bench = gen_damage_benchmark(x0, type, frames, max_intensity,
                                                derive_seed(seed, 1000 + trial));
        std::vector<double> pred, gt;
        for (const auto& f : bench) {
            Estimate est;
            if (model)
                est = predict(*model, x0, f.frame, ch.steps, ch.steps);
            else
                est = estimate_direct(x0, f.frame);
            pred.push_back(damage_intensity(est.decay));
            gt.push_back(f.delta);
        }
        reports[trial] = regression_report(pred, gt);
    }

    std::ofstream f(out, std::ios::binary);
    if (!f) throw FormatError("bench-damage: cannot write " + out);
    f << "noise_type,mae,mse,rmse,r2,var\n";
    RegressionReport mean{};
    for (const auto& r : reports) {
        f << noise_type << "," << fmt6(r.mae) << "," << fmt6(r.mse) << ","
          << fmt6(r.rmse) << "," << fmt6(r.r2) << "," << fmt6(r.var_err) << "\n";
        mean.mae += r.mae / trials;
        mean.mse += r.mse / trials;
        mean.rmse += r.rmse / trials;
        mean.r2 += r.r2 / trials;
        mean.var_err += r.var_err / trials;
    }
    json manifest = {{"command", "bench-damage"}, {"noise_type", noise_type},
                     {"frames", frames},          {"max_intensity", max_intensity},
                     {"trials", trials},          {"method", ch.method},
                     {"model", ch.model_path},    {"size", size},
                     {"out", out},                {"seed", seed}};
    write_manifest(out + ".manifest.json", manifest);
    std::cout << noise_type << " mean: mae=" << fmt6(mean.mae)
              << " mse=" << fmt6(mean.mse) << " rmse=" << fmt6(mean.rmse)
              << " r2=" << fmt6(mean.r2) << " var=" << fmt6(mean.var_err) << "\n";
    return 0;
}

int cmd_bench_drift(const std::string& image_path, double rot, double drift, int crop,
                    int trials, const std::string& out, std::uint64_t seed) {
    ImageGrid source;
    if (!image_path.empty()) {
        source = read_image_auto(image_path);
    } else {
        AtomMapSpec spec;
        spec.seed = derive_seed(seed, 77);
        const int margin = static_cast<int>(std::ceil(drift)) + 8;
        const int side = std::max(512, crop + 2 * margin);
        source = gen_atom_map(spec, side, side);
    }

    DirectConfig cfg;
    cfg.max_shift_px = std::max(64.0, 1.5 * drift);
    std::vector<double> derr(trials), rerr(trials);
#pragma omp parallel for schedule(dynamic)
    for (int trial = 0; trial < trials; ++trial) {
        const DriftSample s =
            gen_drift_benchmark(source, rot, drift, crop, derive_seed(seed, trial));
        const RegistrationResult reg = register_affine(s.x0, s.xT, cfg);
        derr[trial] = drift_error(reg.params, s.truth);
        rerr[trial] = rotation_error(reg.params, s.truth);
    }
    double mean_drift = 0.0, mean_rot = 0.0;
    for (int i = 0; i < trials; ++i) {
        mean_drift += derr[i] / trials;
        mean_rot += rerr[i] / trials;
    }

    std::ofstream f(out, std::ios::binary);
    if (!f) throw FormatError("bench-drift: cannot write " + out);
    f << "rot_set_deg,drift_set_px,mean_drift_err_px,mean_rot_err_deg\n";
    f << fmt6(rot) << "," << fmt6(drift) << "," << fmt6(mean_drift) << ","
      << fmt6(mean_rot) << "\n";
    json manifest = {{"command", "bench-drift"}, {"image", image_path},
                     {"rot", rot},               {"drift", drift},
                     {"crop", crop},             {"trials", trials},
                     {"out", out},               {"seed", seed}};
    write_manifest(out + ".manifest.json", manifest);
    std::cout << "mean_drift_err_px=" << fmt6(mean_drift)
              << " mean_rot_err_deg=" << fmt6(mean_rot) << "\n";
    return 0;
}

int cmd_infer(const std::string& ref_path, const std::string& target_path, int n,
              const EstimatorChoice& ch, const std::string& mode,
              const std::string& out_dir, std::uint64_t seed) {
    const ImageGrid ref = read_image_auto(ref_path);
    const ImageGrid target = read_image_auto(target_path);

    std::optional<DirectEstimator> direct;
    std::optional<LearnedEstimator> learned;
    const Estimator* estimator = nullptr;
    if (ch.method == "direct") {
        direct.emplace();
        estimator = &*direct;
    } else if (ch.method == "model") {
        if (ch.model_path.empty())
            throw InvalidParameterError("--model is required for method 'model'");
        learned.emplace(load_model(ch.model_path));
        estimator = &*learned;
    } else {
        throw InvalidParameterError("method must be 'direct' or 'model'");
    }
    const InferenceMode imode = mode == "per-t" ? InferenceMode::per_time_query
                                                : InferenceMode::interpolate_endstate;
    const InferenceResult result =
        infer_sequence(ref, target, *estimator, n, ch.steps, imode);

    fs::create_directories(out_dir);
    const fs::path dir(out_dir);
    json seq = json::array();
    for (std::size_t k = 0; k < result.frames.size(); ++k) {
        const auto& fr = result.frames[k];
        const std::string fname = frame_name("frame", static_cast<int>(k));
        const std::string lname = frame_name("lambda", static_cast<int>(k));
        write_atdf_image((dir / fname).string(), fr.frame);
        write_atdf_image((dir / lname).string(), fr.lambda);
        seq.push_back({{"t", fr.t},
                       {"theta_deg", fr.affine.theta_deg},
                       {"tx_px", fr.affine.tx_px},
                       {"ty_px", fr.affine.ty_px},
                       {"frame", fname},
                       {"lambda", lname}});
    }
    std::ofstream sf((dir / "sequence.json").string(), std::ios::binary);
    sf << seq.dump(2) << "\n";

    json manifest = {{"command", "infer"},  {"ref", ref_path},
                     {"target", target_path}, {"n", n},
                     {"method", ch.method}, {"model", ch.model_path},
                     {"steps", ch.steps},   {"mode", mode},
                     {"out_dir", out_dir},  {"seed", seed}};
    write_manifest((dir / "manifest.json").string(), manifest);
    return 0;
}

int cmd_flow(const std::string& est_path, int size, int stride,
             const std::string& out) {
    const Estimate est = read_estimate(est_path);
    const FlowField f = flow_map(est.affine, size, size, stride);
    FrameTensor t;
    t.height = f.rows;
    t.width = f.cols;
    t.channels = 2;
    t.data.resize(f.dx.size() * 2);
    for (std::size_t i = 0; i < f.dx.size(); ++i) {
        t.data[2 * i] = f.dx[i];
        t.data[2 * i + 1] = f.dy[i];
    }
    write_atdf(out, t);
    json manifest = {{"command", "flow"},
                     {"est", est_path},
                     {"size", size},
                     {"stride", stride},
                     {"out", out}};
    write_manifest(out + ".manifest.json", manifest);
    return 0;
}

} // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"Time-resolved STEM degradation simulator and inverse solver"};
    app.require_subcommand(1);

    // gen-atoms
    auto* gen = app.add_subcommand("gen-atoms", "Generate a synthetic atom map");
    std::string gen_out;
    int gen_size = 256;
    std::uint64_t gen_seed = 0;
    double lattice_const = 12.0, lattice_angle = 8.0;
    double amp_lo = 0.55, amp_hi = 1.0, width_lo = 1.8, width_hi = 2.6, jitter = 0.35;
    gen->add_option("--out", gen_out, "Output image (.atdf or .pgm)")->required();
    gen->add_option("--size", gen_size, "Image side length");
    gen->add_option("--seed", gen_seed, "RNG seed");
    gen->add_option("--lattice-const", lattice_const, "Lattice constant (px)");
    gen->add_option("--lattice-angle", lattice_angle, "Lattice rotation (deg)");
    gen->add_option("--amp-lo", amp_lo, "Blob amplitude lower bound");
    gen->add_option("--amp-hi", amp_hi, "Blob amplitude upper bound");
    gen->add_option("--width-lo", width_lo, "Blob sigma lower bound (px)");
    gen->add_option("--width-hi", width_hi, "Blob sigma upper bound (px)");
    gen->add_option("--pos-jitter", jitter, "Positional jitter sigma (px)");

    // simulate
    auto* sim = app.add_subcommand("simulate", "Render a degradation sequence");
    std::string sim_in, sim_noise = "dose=200,jitter=0.5,readout=0.01", sim_dir;
    double sim_theta = 0.0, sim_tx = 0.0, sim_ty = 0.0, sim_minsurv = 0.2;
    int sim_steps = 10, sim_cells = 4, sim_octaves = 2;
    std::uint64_t sim_seed = 0;
    sim->add_option("--in", sim_in, "Clean reference image")->required();
    sim->add_option("--theta", sim_theta, "Final rotation (deg)");
    sim->add_option("--tx", sim_tx, "Final x translation (px)");
    sim->add_option("--ty", sim_ty, "Final y translation (px)");
    sim->add_option("--steps", sim_steps, "Total steps T");
    sim->add_option("--decay-cells", sim_cells, "Decay field cells per axis");
    sim->add_option("--decay-octaves", sim_octaves, "Decay field octaves");
    sim->add_option("--min-survival", sim_minsurv, "Decay field floor");
    sim->add_option("--noise", sim_noise, "dose=..,jitter=..,readout=.. or 'none'");
    sim->add_option("--out-dir", sim_dir, "Output directory")->required();
    sim->add_option("--seed", sim_seed, "RNG seed");

    // estimate
    auto* est = app.add_subcommand("estimate", "Recover drift and decay from a pair");
    std::string est_ref, est_target, est_out;
    EstimatorChoice est_ch;
    std::uint64_t est_seed = 0;
    est->add_option("--ref", est_ref, "Reference frame")->required();
    est->add_option("--target", est_target, "Degraded frame")->required();
    est->add_option("--method", est_ch.method, "direct|model");
    est->add_option("--model", est_ch.model_path, "Model file for method 'model'");
    est->add_option("--t", est_ch.t, "Query time for the learned estimator");
    est->add_option("--steps", est_ch.steps, "Total steps T");
    est->add_option("--out", est_out, "Output estimate JSON")->required();
    est->add_option("--seed", est_seed, "RNG seed");

    // train
    auto* tr = app.add_subcommand("train", "Train the learned estimator");
    std::string tr_config, tr_out = "model.atdm", tr_history = "history.csv";
    tr->add_option("--config", tr_config, "Training config JSON");
    tr->add_option("--out", tr_out, "Output model file");
    tr->add_option("--history", tr_history, "Loss history CSV");

    // bench-damage
    auto* bd = app.add_subcommand("bench-damage", "Damage-intensity benchmark");
    std::string bd_type = "gaussian", bd_out;
    int bd_frames = 10, bd_trials = 10, bd_size = 256;
    double bd_max = 0.9;
    EstimatorChoice bd_ch;
    std::uint64_t bd_seed = 0;
    bd->add_option("--noise-type", bd_type, "gaussian|perlin|random");
    bd->add_option("--frames", bd_frames, "Frames per sequence");
    bd->add_option("--max-intensity", bd_max, "Final damage intensity");
    bd->add_option("--trials", bd_trials, "Seeded trials");
    bd->add_option("--method", bd_ch.method, "direct|model");
    bd->add_option("--model", bd_ch.model_path, "Model file for method 'model'");
    bd->add_option("--size", bd_size, "Image side length (direct method)");
    bd->add_option("--out", bd_out, "Report CSV")->required();
    bd->add_option("--seed", bd_seed, "RNG seed");

    // bench-drift
    auto* bdr = app.add_subcommand("bench-drift", "Drift-recovery benchmark");
    std::string bdr_image, bdr_out;
    double bdr_rot = 5.0, bdr_drift = 5.0;
    int bdr_crop = 256, bdr_trials = 50;
    std::uint64_t bdr_seed = 0;
    bdr->add_option("--image", bdr_image, "Source image (synthesized when omitted)");
    bdr->add_option("--rot", bdr_rot, "Rotation range (deg)");
    bdr->add_option("--drift", bdr_drift, "Drift range (px)");
    bdr->add_option("--crop", bdr_crop, "Crop size");
    bdr->add_option("--trials", bdr_trials, "Trials");
    bdr->add_option("--out", bdr_out, "Report CSV")->required();
    bdr->add_option("--seed", bdr_seed, "RNG seed");

    // infer
    auto* inf = app.add_subcommand("infer", "Synthesize intermediate states");
    std::string inf_ref, inf_target, inf_dir, inf_mode = "interp";
    int inf_n = 8;
    EstimatorChoice inf_ch;
    std::uint64_t inf_seed = 0;
    inf->add_option("--ref", inf_ref, "Reference frame")->required();
    inf->add_option("--target", inf_target, "Degraded frame")->required();
    inf->add_option("--n", inf_n, "Intermediate steps");
    inf->add_option("--method", inf_ch.method, "direct|model");
    inf->add_option("--model", inf_ch.model_path, "Model file for method 'model'");
    inf->add_option("--steps", inf_ch.steps, "Total steps T");
    inf->add_option("--mode", inf_mode, "interp|per-t");
    inf->add_option("--out-dir", inf_dir, "Output directory")->required();
    inf->add_option("--seed", inf_seed, "RNG seed");

    // flow
    auto* fl = app.add_subcommand("flow", "Drift flow map from an estimate");
    std::string fl_est, fl_out;
    int fl_size = 256, fl_stride = 8;
    fl->add_option("--est", fl_est, "Estimate JSON")->required();
    fl->add_option("--size", fl_size, "Field side length (px)");
    fl->add_option("--stride", fl_stride, "Sample stride (px)");
    fl->add_option("--out", fl_out, "Output flow ATDF (2 channels)")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n" << app.help();
        return 1;
    }

    try {
        if (gen->parsed())
            return cmd_gen_atoms(gen_out, gen_size, gen_seed, lattice_const,
                                 lattice_angle, amp_lo, amp_hi, width_lo, width_hi,
                                 jitter);
        if (sim->parsed())
            return cmd_simulate(sim_in, sim_theta, sim_tx, sim_ty, sim_steps, sim_cells,
                                sim_octaves, sim_minsurv, sim_noise, sim_dir, sim_seed);
        if (est->parsed())
            return cmd_estimate(est_ref, est_target, est_ch, est_out, est_seed);
        if (tr->parsed()) return cmd_train(tr_config, tr_out, tr_history);
        if (bd->parsed())
            return cmd_bench_damage(bd_type, bd_frames, bd_max, bd_trials, bd_ch,
                                    bd_size, bd_out, bd_seed);
        if (bdr->parsed())
            return cmd_bench_drift(bdr_image, bdr_rot, bdr_drift, bdr_crop, bdr_trials,
                                   bdr_out, bdr_seed);
        if (inf->parsed())
            return cmd_infer(inf_ref, inf_target, inf_n, inf_ch, inf_mode, inf_dir,
                             inf_seed);
        if (fl->parsed()) return cmd_flow(fl_est, fl_size, fl_stride, fl_out);
    } catch (const InvalidParameterError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const DimensionError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::ios_base::failure& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {  // numerical: degenerate input, divergence
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}

} // namespace stemdeg
