#pragma once

// Experiment configuration: one flat JSON object. Unknown keys, duplicate keys
// and type mismatches are rejected; semantic checks report every violation at
// once. Defaults are listed in README.md.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "bpinn/datagen.hpp"
#include "bpinn/neural.hpp"
#include "bpinn/operators.hpp"
#include "bpinn/training.hpp"

namespace bpinn {

class ConfigParseError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

enum class Problem { Restore, SuperRes };

struct ExperimentConfig {
    Problem problem = Problem::Restore;
    std::size_t superres_factor = 2;
    double psf_sigma = 1.5;
    std::size_t psf_size = 7;
    EmissivityMap emissivity;
    SceneSpec scene;
    double v_eps = 1e-3;
    std::optional<double> v_f;
    std::optional<double> v_prior;
    std::size_t n_train = 128;
    std::size_t n_val = 32;
    std::size_t n_test = 32;
    std::uint64_t data_seed = 1;
    TrainConfig train;
    ArchSpec arch;
    std::size_t mc_samples = 30;
    std::uint64_t mc_seed = 11;
    double cg_tol = 1e-8;
    std::size_t cg_max_iter = 0;
    std::size_t variance_probes = 64;
    std::filesystem::path data_dir = "data";
    std::filesystem::path checkpoint = "model.bpnn";
    std::filesystem::path log_csv = "train_log.csv";
    std::filesystem::path output_dir = "out";

    [[nodiscard]] Shape hr_shape() const { return scene.shape(); }

    [[nodiscard]] ForwardOperator forward_operator() const {
        const auto psf = PsfKernel::gaussian(psf_sigma, psf_size);
        if (problem == Problem::SuperRes)
            return ForwardOperator::super_resolution(hr_shape(), superres_factor, psf, emissivity);
        return ForwardOperator::restoration(hr_shape(), psf, emissivity);
    }
};

namespace detail {

inline std::string line_col(const std::string& text, std::size_t byte) {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i + 1 < byte && i < text.size(); ++i) {
        if (text[i] == '\n') {
            ++line;
            col = 1;
        } else {
            ++col;
        }
    }
    return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

inline nlohmann::json parse_strict_json(const std::string& text) {
    using nlohmann::json;
    std::vector<std::set<std::string>> scopes;
    json::parser_callback_t cb = [&](int, json::parse_event_t ev, json& parsed) {
        switch (ev) {
            case json::parse_event_t::object_start: scopes.emplace_back(); break;
            case json::parse_event_t::object_end:
                if (!scopes.empty()) scopes.pop_back();
                break;
            case json::parse_event_t::key: {
                const auto k = parsed.get<std::string>();
                if (!scopes.empty() && !scopes.back().insert(k).second)
                    throw ConfigParseError("config parse error: duplicate key '" + k + "'");
                break;
            }
            default: break;
        }
        return true;
    };
    try {
        return json::parse(text, cb);
    } catch (const json::parse_error& e) {
        throw ConfigParseError("config parse error at " + line_col(text, e.byte) + ": " + e.what());
    }
}

}  // namespace detail

inline ExperimentConfig config_from_json_text(const std::string& text) {
    using nlohmann::json;
    const json doc = detail::parse_strict_json(text);
    if (!doc.is_object()) throw ConfigParseError("config parse error: top level must be a JSON object");

    ExperimentConfig cfg;
    std::vector<std::string> errs;
    std::string mode, arch_kind = "mlp", emiss = "identity";
    double emiss_a = 1.0, emiss_c = 1.0;
    bool have_problem = false;
    std::vector<std::size_t> hidden{256, 256, 256};
    std::size_t base = 8, depth = 2;

    auto num = [&](const json& v, const std::string& k, double& out) {
        if (!v.is_number()) return errs.push_back("'" + k + "' must be a number");
        out = v.get<double>();
    };
    auto opt_num = [&](const json& v, const std::string& k, std::optional<double>& out) {
        if (v.is_null()) return out.reset();
        double d = 0;
        num(v, k, d);
        out = d;
    };
    auto count = [&](const json& v, const std::string& k, std::size_t& out) {
        if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
            return errs.push_back("'" + k + "' must be a non-negative integer");
        out = v.get<std::size_t>();
    };
    auto seed = [&](const json& v, const std::string& k, std::uint64_t& out) {
        if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
            return errs.push_back("'" + k + "' must be a non-negative integer");
        out = v.get<std::uint64_t>();
    };
    auto str = [&](const json& v, const std::string& k, std::string& out) {
        if (!v.is_string()) return errs.push_back("'" + k + "' must be a string");
        out = v.get<std::string>();
    };
    auto path = [&](const json& v, const std::string& k, std::filesystem::path& out) {
        std::string s;
        str(v, k, s);
        out = s;
    };

    using Setter = std::function<void(const json&, const std::string&)>;
    const std::map<std::string, Setter> keys{
        {"problem", [&](const json& v, const std::string& k) {
             std::string s;
             str(v, k, s);
             have_problem = true;
             if (s == "restore") cfg.problem = Problem::Restore;
             else if (s == "superres") cfg.problem = Problem::SuperRes;
             else errs.push_back("'problem' must be \"restore\" or \"superres\"");
         }},
        {"superres_factor", [&](const json& v, const std::string& k) { count(v, k, cfg.superres_factor); }},
        {"psf_sigma", [&](const json& v, const std::string& k) { num(v, k, cfg.psf_sigma); }},
        {"psf_size", [&](const json& v, const std::string& k) { count(v, k, cfg.psf_size); }},
        {"emissivity", [&](const json& v, const std::string& k) { str(v, k, emiss); }},
        {"emissivity_a", [&](const json& v, const std::string& k) { num(v, k, emiss_a); }},
        {"emissivity_c", [&](const json& v, const std::string& k) { num(v, k, emiss_c); }},
        {"width", [&](const json& v, const std::string& k) { count(v, k, cfg.scene.width); }},
        {"height", [&](const json& v, const std::string& k) { count(v, k, cfg.scene.height); }},
        {"n_blobs_min", [&](const json& v, const std::string& k) { count(v, k, cfg.scene.n_blobs_min); }},
        {"n_blobs_max", [&](const json& v, const std::string& k) { count(v, k, cfg.scene.n_blobs_max); }},
        {"blob_amplitude_min", [&](const json& v, const std::string& k) { num(v, k, cfg.scene.amplitude_min); }},
        {"blob_amplitude_max", [&](const json& v, const std::string& k) { num(v, k, cfg.scene.amplitude_max); }},
        {"blob_sigma_min", [&](const json& v, const std::string& k) { num(v, k, cfg.scene.sigma_min); }},
        {"blob_sigma_max", [&](const json& v, const std::string& k) { num(v, k, cfg.scene.sigma_max); }},
        {"background", [&](const json& v, const std::string& k) { num(v, k, cfg.scene.background); }},
        {"v_eps", [&](const json& v, const std::string& k) { num(v, k, cfg.v_eps); }},
        {"v_f", [&](const json& v, const std::string& k) { opt_num(v, k, cfg.v_f); }},
        {"v_prior", [&](const json& v, const std::string& k) { opt_num(v, k, cfg.v_prior); }},
        {"n_train", [&](const json& v, const std::string& k) { count(v, k, cfg.n_train); }},
        {"n_val", [&](const json& v, const std::string& k) { count(v, k, cfg.n_val); }},
        {"n_test", [&](const json& v, const std::string& k) { count(v, k, cfg.n_test); }},
        {"data_seed", [&](const json& v, const std::string& k) { seed(v, k, cfg.data_seed); }},
        {"mode", [&](const json& v, const std::string& k) { str(v, k, mode); }},
        {"gamma_w", [&](const json& v, const std::string& k) { num(v, k, cfg.train.gamma_w); }},
        {"beta_w", [&](const json& v, const std::string& k) { num(v, k, cfg.train.beta_w); }},
        {"smooth_delta", [&](const json& v, const std::string& k) { num(v, k, cfg.train.smooth_delta); }},
        {"learning_rate", [&](const json& v, const std::string& k) { num(v, k, cfg.train.learning_rate); }},
        {"batch_size", [&](const json& v, const std::string& k) { count(v, k, cfg.train.batch_size); }},
        {"max_epochs", [&](const json& v, const std::string& k) { count(v, k, cfg.train.max_epochs); }},
        {"dropout_rate", [&](const json& v, const std::string& k) { num(v, k, cfg.train.dropout_rate); }},
        {"train_seed", [&](const json& v, const std::string& k) { seed(v, k, cfg.train.seed); }},
        {"early_stop_patience", [&](const json& v, const std::string& k) { count(v, k, cfg.train.early_stop_patience); }},
        {"image_prior_gamma", [&](const json& v, const std::string& k) { num(v, k, cfg.train.image_prior_gamma); }},
        {"image_prior_beta", [&](const json& v, const std::string& k) { num(v, k, cfg.train.image_prior_beta); }},
        {"arch", [&](const json& v, const std::string& k) { str(v, k, arch_kind); }},
        {"hidden_sizes", [&](const json& v, const std::string& k) {
             if (!v.is_array()) return errs.push_back("'" + k + "' must be an array of positive integers");
             hidden.clear();
             for (const auto& e : v) {
                 std::size_t h = 0;
                 count(e, k, h);
                 hidden.push_back(h);
             }
         }},
        {"base_channels", [&](const json& v, const std::string& k) { count(v, k, base); }},
        {"depth", [&](const json& v, const std::string& k) { count(v, k, depth); }},
        {"mc_samples", [&](const json& v, const std::string& k) { count(v, k, cfg.mc_samples); }},
        {"mc_seed", [&](const json& v, const std::string& k) { seed(v, k, cfg.mc_seed); }},
        {"cg_tol", [&](const json& v, const std::string& k) { num(v, k, cfg.cg_tol); }},
        {"cg_max_iter", [&](const json& v, const std::string& k) { count(v, k, cfg.cg_max_iter); }},
        {"variance_probes", [&](const json& v, const std::string& k) { count(v, k, cfg.variance_probes); }},
        {"data_dir", [&](const json& v, const std::string& k) { path(v, k, cfg.data_dir); }},
        {"checkpoint", [&](const json& v, const std::string& k) { path(v, k, cfg.checkpoint); }},
        {"log_csv", [&](const json& v, const std::string& k) { path(v, k, cfg.log_csv); }},
        {"output_dir", [&](const json& v, const std::string& k) { path(v, k, cfg.output_dir); }},
    };

    for (const auto& [k, v] : doc.items()) {
        const auto it = keys.find(k);
        if (it == keys.end()) {
            errs.push_back("unknown key '" + k + "'");
            continue;
        }
        it->second(v, k);
    }

    if (!have_problem) errs.emplace_back("'problem' is required");

    // Semantic checks, collected rather than thrown one at a time.
    auto check = [&](auto&& fn) {
        try {
            fn();
        } catch (const Error& e) {
            errs.emplace_back(e.what());
        }
    };
    const auto& sc = cfg.scene;
    check([&] { sc.validate(); });
    if (cfg.problem == Problem::SuperRes) {
        if (cfg.superres_factor < 1) errs.emplace_back("'superres_factor' must be >= 1");
        else if (sc.width % cfg.superres_factor != 0 || sc.height % cfg.superres_factor != 0)
            errs.push_back("'superres_factor' " + std::to_string(cfg.superres_factor) +
                           " must divide the scene dimensions " + to_string(sc.shape()));
    }
    if (!(cfg.psf_sigma > 0.0)) errs.emplace_back("'psf_sigma' must be positive");
    if (cfg.psf_size % 2 == 0 || cfg.psf_size > 9) errs.emplace_back("'psf_size' must be odd and at most 9");
    check([&] {
        if (emiss == "identity") cfg.emissivity = EmissivityMap::identity();
        else if (emiss == "scale") cfg.emissivity = EmissivityMap::scale(emiss_a);
        else if (emiss == "smooth_saturate") cfg.emissivity = EmissivityMap::smooth_saturate(emiss_a, emiss_c);
        else throw ValidationError("'emissivity' must be identity, scale or smooth_saturate");
    });
    if (!(cfg.v_eps > 0.0)) errs.emplace_back("'v_eps' must be positive");
    if (cfg.v_f && !(*cfg.v_f > 0.0)) errs.emplace_back("'v_f' must be positive when present");
    if (cfg.v_prior && !(*cfg.v_prior > 0.0)) errs.emplace_back("'v_prior' must be positive when present");

    if (mode.empty()) cfg.train.mode = cfg.v_f ? TrainMode::Supervised : TrainMode::Unsupervised;
    else if (mode == "supervised") cfg.train.mode = TrainMode::Supervised;
    else if (mode == "unsupervised") cfg.train.mode = TrainMode::Unsupervised;
    else errs.emplace_back("'mode' must be \"supervised\" or \"unsupervised\"");
    cfg.train.v_eps = cfg.v_eps;
    cfg.train.v_f = cfg.v_f;
    check([&] { cfg.train.validate(); });

    const bool shapes_ok = sc.width > 0 && sc.height > 0 &&
                           (cfg.problem == Problem::Restore ||
                            (cfg.superres_factor > 0 && sc.width % cfg.superres_factor == 0 &&
                             sc.height % cfg.superres_factor == 0));
    if (shapes_ok) {
        check([&] {
            const Shape out = sc.shape();
            const Shape in = cfg.problem == Problem::SuperRes
                                 ? Shape{sc.width / cfg.superres_factor, sc.height / cfg.superres_factor}
                                 : out;
            if (arch_kind == "mlp") cfg.arch = ArchSpec::mlp(in, out, hidden, cfg.train.dropout_rate);
            else if (arch_kind == "conv_ed") cfg.arch = ArchSpec::conv_ed(in, out, base, depth, cfg.train.dropout_rate);
            else throw ValidationError("'arch' must be \"mlp\" or \"conv_ed\"");
        });
        if (cfg.psf_sigma > 0.0 && cfg.psf_size % 2 == 1) check([&] { (void)cfg.forward_operator(); });
    }
    if (cfg.mc_samples < 1) errs.emplace_back("'mc_samples' must be >= 1");
    if (!(cfg.cg_tol > 0.0)) errs.emplace_back("'cg_tol' must be positive");
    if (cfg.variance_probes < 1) errs.emplace_back("'variance_probes' must be >= 1");
    for (const auto* p : {&cfg.data_dir, &cfg.checkpoint, &cfg.log_csv, &cfg.output_dir})
        if (p->empty()) errs.emplace_back("path settings must be non-empty");

    if (!errs.empty()) {
        std::string msg = "invalid configuration:";
        for (const auto& e : errs) msg += "\n  - " + e;
        throw ValidationError(msg);
    }
    return cfg;
}

inline ExperimentConfig config_load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot read config file '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return config_from_json_text(ss.str());
}

}  // namespace bpinn
