#pragma once

// File-level workflow behind the CLI: generate datasets, train, run MC-dropout
// inference, evaluate and solve the linear-Gaussian posterior. Paths are
// resolved relative to the current working directory.

#include <cstdio>
#include <filesystem>
#include <string>

#include "json.hpp"

#include "bpinn/config.hpp"
#include "bpinn/datagen.hpp"
#include "bpinn/io.hpp"
#include "bpinn/linear_bayes.hpp"
#include "bpinn/metrics.hpp"
#include "bpinn/training.hpp"
#include "bpinn/uq.hpp"

namespace bpinn {

namespace fs = std::filesystem;

inline nlohmann::json json_number(double v) {
    if (std::isfinite(v)) return v;
    if (std::isnan(v)) return "nan";
    return v > 0 ? "inf" : "-inf";
}

inline void json_write(const fs::path& path, const nlohmann::json& j) {
    write_bytes_atomic(path, j.dump(2) + "\n");
}

inline std::string sample_file(std::size_t i, const char* kind) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%05zu_%s.bpif", i, kind);
    return buf;
}

inline nlohmann::json dataset_manifest(const ExperimentConfig& cfg, const DatasetSplits& d) {
    const auto& s = cfg.scene;
    nlohmann::json m;
    m["format"] = "bpinn-dataset";
    m["version"] = 1;
    m["rng"] = std::string(kRngAlgorithm);
    m["seed"] = cfg.data_seed;
    m["operator"] = cfg.forward_operator().describe();
    m["v_eps"] = cfg.v_eps;
    m["v_f"] = cfg.v_f ? nlohmann::json(*cfg.v_f) : nlohmann::json(nullptr);
    m["supervised"] = cfg.v_f.has_value();
    m["scene"] = {{"width", s.width},
                  {"height", s.height},
                  {"n_blobs_min", s.n_blobs_min},
                  {"n_blobs_max", s.n_blobs_max},
                  {"blob_amplitude_min", s.amplitude_min},
                  {"blob_amplitude_max", s.amplitude_max},
                  {"blob_sigma_min", s.sigma_min},
                  {"blob_sigma_max", s.sigma_max},
                  {"background", s.background}};
    m["splits"] = {{"train", d.train.size()}, {"val", d.val.size()}, {"test", d.test.size()}};
    return m;
}

inline void write_split(const fs::path& dir, const Dataset& d) {
    fs::create_directories(dir);
    for (std::size_t i = 0; i < d.size(); ++i) {
        const auto& s = d.samples[i];
        field_write(dir / sample_file(i, "g"), s.g);
        if (s.label) field_write(dir / sample_file(i, "label"), *s.label);
        if (s.truth) field_write(dir / sample_file(i, "truth"), *s.truth);
    }
}

inline DatasetSplits gen_data(const ExperimentConfig& cfg) {
    const auto A = cfg.forward_operator();
    auto d = make_dataset(cfg.scene, A, cfg.n_train, cfg.n_val, cfg.n_test, cfg.v_eps, cfg.v_f, cfg.data_seed);
    write_split(cfg.data_dir / "train", d.train);
    write_split(cfg.data_dir / "val", d.val);
    write_split(cfg.data_dir / "test", d.test);
    json_write(cfg.data_dir / "manifest.json", dataset_manifest(cfg, d));
    return d;
}

inline nlohmann::json read_manifest(const fs::path& data_dir) {
    const auto p = data_dir / "manifest.json";
    if (!fs::exists(p)) throw FormatError("dataset manifest not found: '" + p.string() + "' (run gen-data first)");
    const auto bytes = read_bytes(p);
    try {
        return nlohmann::json::parse(bytes.begin(), bytes.end());
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("corrupt dataset manifest: " + std::string(e.what()));
    }
}

inline Dataset load_split(const ExperimentConfig& cfg, const std::string& split) {
    const auto m = read_manifest(cfg.data_dir);
    const auto A = cfg.forward_operator();
    if (m.value("operator", std::string{}) != A.describe())
        throw ValidationError("dataset in '" + cfg.data_dir.string() +
                              "' was generated with a different forward operator than the config describes");
    Dataset d;
    d.split = split;
    d.op = A;
    d.v_eps = m.at("v_eps").get<double>();
    if (!m.at("v_f").is_null()) d.v_f = m.at("v_f").get<double>();
    d.seed = m.at("seed").get<std::uint64_t>();
    const auto n = m.at("splits").at(split).get<std::size_t>();
    const auto dir = cfg.data_dir / split;
    for (std::size_t i = 0; i < n; ++i) {
        Sample s;
        s.g = field_read(dir / sample_file(i, "g"));
        if (fs::exists(dir / sample_file(i, "label"))) s.label = field_read(dir / sample_file(i, "label"));
        if (fs::exists(dir / sample_file(i, "truth"))) s.truth = field_read(dir / sample_file(i, "truth"));
        d.samples.push_back(std::move(s));
    }
    return d;
}

inline TrainResult<float> train_from_config(const ExperimentConfig& cfg, const EpochCallback& on_epoch = {}) {
    const Dataset tr = load_split(cfg, "train");
    const Dataset va = load_split(cfg, "val");
    if (cfg.train.mode == TrainMode::Supervised && !tr.v_f)
        throw ValidationError("supervised training needs a labelled dataset; regenerate with v_f set");
    auto res = train<float>(tr, va, cfg.arch, cfg.forward_operator(), cfg.train, on_epoch);
    checkpoint_write(cfg.checkpoint, res.params);
    train_log_write(cfg.log_csv, res.log);
    return res;
}

inline nlohmann::json quality_json(const Field& pred, const Field& ref) {
    require_same_shape(pred, ref, "evaluation");
    nlohmann::json j;
    j["mse"] = mse(pred, ref);
    const double range = data_range_of(ref);
    j["data_range"] = range;
    j["psnr"] = range > 0.0 ? json_number(psnr(pred, ref)) : nlohmann::json(nullptr);
    j["ssim"] = pred.width() >= kSsimWindow && pred.height() >= kSsimWindow ? json_number(ssim(pred, ref))
                                                                            : nlohmann::json(nullptr);
    return j;
}

struct InferOutputs {
    UqResult uq;
    fs::path mean_path, std_path, summary_path;
};

inline InferOutputs infer_from_config(const ExperimentConfig& cfg, const fs::path& input,
                                      std::optional<std::size_t> samples = {},
                                      const std::optional<fs::path>& reference = {}) {
    const auto params = checkpoint_read(cfg.checkpoint);
    const Field g = field_read(input);
    if (g.shape() != params.arch.input)
        throw ShapeError("input field " + to_string(g.shape()) + " does not match network input " +
                         to_string(params.arch.input));
    const auto A = cfg.forward_operator();
    const std::size_t T = samples.value_or(cfg.mc_samples);
    const double rate = params.arch.dropout_rate;
    InferOutputs out;
    out.uq = mc_dropout_infer(params, g, T, rate, cfg.mc_seed, &A, T >= 2);

    Field sd = out.uq.var_diag;
    for (auto& v : sd.values()) v = std::sqrt(v);
    const std::string stem = input.stem().string();
    out.mean_path = cfg.output_dir / (stem + "_mean.bpif");
    out.std_path = cfg.output_dir / (stem + "_std.bpif");
    out.summary_path = cfg.output_dir / (stem + "_uq.json");
    field_write(out.mean_path, out.uq.mean);
    field_write(out.std_path, sd);
    pgm_write(cfg.output_dir / (stem + "_mean.pgm"), out.uq.mean);
    pgm_write(cfg.output_dir / (stem + "_std.pgm"), sd);

    nlohmann::json j;
    j["samples"] = T;
    j["dropout_rate"] = rate;
    j["seed"] = cfg.mc_seed;
    j["consistency"] = json_number(out.uq.consistency.value_or(0.0));
    j["mean_variance"] = mean(out.uq.var_diag);
    j["mean_field"] = out.mean_path.string();
    j["std_field"] = out.std_path.string();
    if (reference) j["reference"] = quality_json(out.uq.mean, field_read(*reference));
    json_write(out.summary_path, j);
    return out;
}

inline GaussianPosterior solve_analytic_from_config(const ExperimentConfig& cfg, const fs::path& input,
                                                    fs::path* mean_path = nullptr, fs::path* var_path = nullptr) {
    if (!cfg.v_f) throw ValidationError("solve-analytic requires 'v_f' in the config (lambda = v_eps / v_f)");
    const auto A = cfg.forward_operator();
    if (!A.is_linear())
        throw ValidationError("solve-analytic requires a linear emissivity (identity or scale)");
    const Field g = field_read(input);
    if (g.shape() != A.output_shape())
        throw ShapeError("input field " + to_string(g.shape()) + " does not match operator output " +
                         to_string(A.output_shape()));
    GaussParams p;
    p.v_eps = cfg.v_eps;
    p.v_f = cfg.v_f;
    p.f_bar = Field(A.input_shape(), cfg.scene.background);
    VarianceOptions vopt;
    vopt.n_probe = cfg.variance_probes;
    vopt.seed = cfg.mc_seed;
    const auto post = posterior_eq5(A, g, p, CgOptions{cfg.cg_tol, cfg.cg_max_iter}, vopt);

    const std::string stem = input.stem().string();
    const auto mp = cfg.output_dir / (stem + "_post_mean.bpif");
    const auto vp = cfg.output_dir / (stem + "_post_var.bpif");
    field_write(mp, post.mean);
    field_write(vp, post.var_diag);
    pgm_write(cfg.output_dir / (stem + "_post_mean.pgm"), post.mean);
    nlohmann::json j;
    j["solver_residual"] = post.solver_residual;
    j["converged"] = post.converged;
    j["lambda"] = cfg.v_eps / *cfg.v_f;
    j["mean_field"] = mp.string();
    j["variance_field"] = vp.string();
    json_write(cfg.output_dir / (stem + "_post.json"), j);
    if (mean_path) *mean_path = mp;
    if (var_path) *var_path = vp;
    return post;
}

}  // namespace bpinn
