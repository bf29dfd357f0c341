// Copyright 2026 The sdlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "sdlab/diffusion.hpp"
#include "sdlab/distill.hpp"
#include "sdlab/errors.hpp"
#include "sdlab/io.hpp"

namespace sdlab {

enum class Task { Toy1d, Texture2d, Class2d };

inline std::string to_string(Task t) {
    switch (t) {
        case Task::Toy1d: return "toy1d";
        case Task::Texture2d: return "texture2d";
        default: return "class2d";
    }
}

inline Task parse_task(const std::string& s) {
    if (s == "toy1d") return Task::Toy1d;
    if (s == "texture2d") return Task::Texture2d;
    if (s == "class2d") return Task::Class2d;
    throw ConfigError("unknown task '" + s + "'");
}

struct DataConfig {
    std::size_t n_samples = 2048;
    std::size_t signal_length = 64;  // toy1d
    std::vector<std::pair<double, double>> mixture{{3.0, 0.2}, {5.0, 0.8}};  // toy1d (frequency, probability)
    std::size_t image_size = 16;                                          // texture2d / class2d
    double amplitude = 1.0;
    double exponent = 2.0;                            // texture2d
    std::vector<double> class_exponents{1.5, 3.0};  // class2d
    std::string path;                                 // dataset archive; empty regenerates from the seed
};

struct ScheduleConfig {
    int T = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;
};

struct OptimizerConfig {
    double lr = 1e-3;
    double weight_decay = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::int64_t steps = 1000;
    std::size_t batch = 16;
    std::string decay = "linear";  // linear | none
};

struct DistillSection {
    std::string teacher_checkpoint;
    DistillConfig loss;
};

struct ExperimentConfig {
    Task task = Task::Texture2d;
    nlohmann::json model = {{"kind", "wg_unet"}, {"in_channels", 1}, {"widths", {4, 8}}, {"time_dim", 32}, {"n_classes", 0}};
    ScheduleConfig schedule;
    OptimizerConfig optimizer;
    DataConfig data;
    SamplerConfig sampler;
    std::optional<DistillSection> distill;
    std::int64_t checkpoint_every = 0;
    double cfg_dropout = 0.1;
    std::uint64_t seed = 0;
    std::string output_dir = "run";
};

namespace detail {

inline void check_keys(const nlohmann::json& j, const std::string& where, std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw ConfigError(where + ": expected an object");
    const std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [k, v] : j.items())
        if (!ok.count(k)) throw ConfigError(where + ": unknown key '" + k + "'");
}

template <typename T>
void read_opt(const nlohmann::json& j, const char* key, T& out, const std::string& where) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(where + "." + key + ": " + e.what());
    }
}

inline void validate_model(const nlohmann::json& m) {
    if (!m.is_object() || !m.contains("kind")) throw ConfigError("model: missing 'kind'");
    const std::string kind = m.at("kind").get<std::string>();
    if (kind == "mlp") {
        check_keys(m, "model", {"kind", "signal_length", "hidden", "time_dim"});
        for (const char* k : {"signal_length", "hidden", "time_dim"})
            if (!m.contains(k)) throw ConfigError(std::string("model: missing '") + k + "'");
    } else if (kind == "wg_unet" || kind == "plain_unet") {
        check_keys(m, "model", {"kind", "in_channels", "widths", "time_dim", "n_classes"});
        for (const char* k : {"in_channels", "widths", "time_dim"})
            if (!m.contains(k)) throw ConfigError(std::string("model: missing '") + k + "'");
    } else {
        throw ConfigError("model: unknown kind '" + kind + "'");
    }
}

inline std::string sampler_kind_str(SamplerKind k) { return k == SamplerKind::Ddim ? "ddim" : "ancestral"; }
inline std::string sigma_str(SigmaChoice s) { return s == SigmaChoice::Beta ? "beta" : "posterior"; }

}  // namespace detail

inline nlohmann::json to_json(const ExperimentConfig& c) {
    nlohmann::json mix = nlohmann::json::array();
    for (const auto& [f, p] : c.data.mixture) mix.push_back({f, p});
    nlohmann::json j = {
        {"task", to_string(c.task)},
        {"model", c.model},
        {"schedule", {{"T", c.schedule.T}, {"beta_start", c.schedule.beta_start}, {"beta_end", c.schedule.beta_end}}},
        {"optimizer",
         {{"lr", c.optimizer.lr},
          {"weight_decay", c.optimizer.weight_decay},
          {"beta1", c.optimizer.beta1},
          {"beta2", c.optimizer.beta2},
          {"eps", c.optimizer.eps},
          {"steps", c.optimizer.steps},
          {"batch", c.optimizer.batch},
          {"decay", c.optimizer.decay}}},
        {"data",
         {{"n_samples", c.data.n_samples},
          {"signal_length", c.data.signal_length},
          {"mixture", mix},
          {"image_size", c.data.image_size},
          {"amplitude", c.data.amplitude},
          {"exponent", c.data.exponent},
          {"class_exponents", c.data.class_exponents},
          {"path", c.data.path}}},
        {"sampler",
         {{"kind", detail::sampler_kind_str(c.sampler.kind)},
          {"steps", c.sampler.steps},
          {"eta", c.sampler.eta},
          {"guidance", c.sampler.guidance},
          {"sigma", detail::sigma_str(c.sampler.sigma)}}},
        {"distill", nullptr},
        {"checkpoint_every", c.checkpoint_every},
        {"cfg_dropout", c.cfg_dropout},
        {"seed", c.seed},
        {"output_dir", c.output_dir},
    };
    if (c.distill) {
        const auto& d = *c.distill;
        nlohmann::json pairs = nlohmann::json::array();
        for (const auto& [t, s] : d.loss.pairs) pairs.push_back({t, s});
        j["distill"] = {{"teacher_checkpoint", d.teacher_checkpoint},
                        {"lambda_s", d.loss.lambda_s},
                        {"lambda_f", d.loss.lambda_f},
                        {"alpha_w", d.loss.alpha_w},
                        {"eps_w", d.loss.eps_w},
                        {"normalize", d.loss.normalize},
                        {"pairs", pairs}};
    }
    return j;
}

/// Parses and validates a config. Unknown keys anywhere are rejected;
/// missing keys take the documented defaults.
inline ExperimentConfig config_from_json(const nlohmann::json& j) {
    using detail::read_opt;
    detail::check_keys(j, "config",
                       {"task", "model", "schedule", "optimizer", "data", "sampler", "distill", "checkpoint_every",
                        "cfg_dropout", "seed", "output_dir"});
    ExperimentConfig c;
    std::string task = to_string(c.task);
    read_opt(j, "task", task, "config");
    c.task = parse_task(task);
    if (j.contains("model")) c.model = j.at("model");
    if (c.task == Task::Toy1d && !j.contains("model"))
        c.model = {{"kind", "mlp"}, {"signal_length", 64}, {"hidden", 64}, {"time_dim", 32}};
    detail::validate_model(c.model);

    if (j.contains("schedule")) {
        const auto& s = j.at("schedule");
        detail::check_keys(s, "schedule", {"T", "beta_start", "beta_end"});
        read_opt(s, "T", c.schedule.T, "schedule");
        read_opt(s, "beta_start", c.schedule.beta_start, "schedule");
        read_opt(s, "beta_end", c.schedule.beta_end, "schedule");
    }
    if (j.contains("optimizer")) {
        const auto& o = j.at("optimizer");
        detail::check_keys(o, "optimizer", {"lr", "weight_decay", "beta1", "beta2", "eps", "steps", "batch", "decay"});
        read_opt(o, "lr", c.optimizer.lr, "optimizer");
        read_opt(o, "weight_decay", c.optimizer.weight_decay, "optimizer");
        read_opt(o, "beta1", c.optimizer.beta1, "optimizer");
        read_opt(o, "beta2", c.optimizer.beta2, "optimizer");
        read_opt(o, "eps", c.optimizer.eps, "optimizer");
        read_opt(o, "steps", c.optimizer.steps, "optimizer");
        read_opt(o, "batch", c.optimizer.batch, "optimizer");
        read_opt(o, "decay", c.optimizer.decay, "optimizer");
        if (c.optimizer.decay != "linear" && c.optimizer.decay != "none")
            throw ConfigError("optimizer.decay must be 'linear' or 'none'");
    }
    if (j.contains("data")) {
        const auto& d = j.at("data");
        detail::check_keys(d, "data",
                           {"n_samples", "signal_length", "mixture", "image_size", "amplitude", "exponent",
                            "class_exponents", "path"});
        read_opt(d, "n_samples", c.data.n_samples, "data");
        read_opt(d, "signal_length", c.data.signal_length, "data");
        if (d.contains("mixture")) {
            c.data.mixture.clear();
            for (const auto& m : d.at("mixture")) {
                if (!m.is_array() || m.size() != 2) throw ConfigError("data.mixture: entries must be [frequency, probability]");
                c.data.mixture.emplace_back(m[0].get<double>(), m[1].get<double>());
            }
        }
        read_opt(d, "image_size", c.data.image_size, "data");
        read_opt(d, "amplitude", c.data.amplitude, "data");
        read_opt(d, "exponent", c.data.exponent, "data");
        read_opt(d, "class_exponents", c.data.class_exponents, "data");
        read_opt(d, "path", c.data.path, "data");
    }
    if (j.contains("sampler")) {
        const auto& s = j.at("sampler");
        detail::check_keys(s, "sampler", {"kind", "steps", "eta", "guidance", "sigma"});
        std::string kind = detail::sampler_kind_str(c.sampler.kind), sigma = detail::sigma_str(c.sampler.sigma);
        read_opt(s, "kind", kind, "sampler");
        read_opt(s, "sigma", sigma, "sampler");
        if (kind == "ddim") c.sampler.kind = SamplerKind::Ddim;
        else if (kind == "ancestral") c.sampler.kind = SamplerKind::Ancestral;
        else throw ConfigError("sampler.kind must be 'ddim' or 'ancestral'");
        if (sigma == "beta") c.sampler.sigma = SigmaChoice::Beta;
        else if (sigma == "posterior") c.sampler.sigma = SigmaChoice::PosteriorVariance;
        else throw ConfigError("sampler.sigma must be 'beta' or 'posterior'");
        read_opt(s, "steps", c.sampler.steps, "sampler");
        read_opt(s, "eta", c.sampler.eta, "sampler");
        read_opt(s, "guidance", c.sampler.guidance, "sampler");
    }
    if (j.contains("distill") && !j.at("distill").is_null()) {
        const auto& d = j.at("distill");
        detail::check_keys(d, "distill", {"teacher_checkpoint", "lambda_s", "lambda_f", "alpha_w", "eps_w", "normalize", "pairs"});
        DistillSection ds;
        read_opt(d, "teacher_checkpoint", ds.teacher_checkpoint, "distill");
        read_opt(d, "lambda_s", ds.loss.lambda_s, "distill");
        read_opt(d, "lambda_f", ds.loss.lambda_f, "distill");
        read_opt(d, "alpha_w", ds.loss.alpha_w, "distill");
        read_opt(d, "eps_w", ds.loss.eps_w, "distill");
        read_opt(d, "normalize", ds.loss.normalize, "distill");
        if (d.contains("pairs"))
            for (const auto& p : d.at("pairs")) {
                if (!p.is_array() || p.size() != 2) throw ConfigError("distill.pairs: entries must be [teacher, student]");
                ds.loss.pairs.emplace_back(p[0].get<std::size_t>(), p[1].get<std::size_t>());
            }
        ds.loss.validate();
        c.distill = ds;
    }
    read_opt(j, "checkpoint_every", c.checkpoint_every, "config");
    read_opt(j, "cfg_dropout", c.cfg_dropout, "config");
    read_opt(j, "seed", c.seed, "config");
    read_opt(j, "output_dir", c.output_dir, "config");

    if (c.schedule.T < 1) throw ConfigError("schedule.T must be >= 1");
    if (c.optimizer.steps < 0) throw ConfigError("optimizer.steps must be >= 0");
    if (c.optimizer.batch == 0) throw ConfigError("optimizer.batch must be >= 1");
    if (c.cfg_dropout < 0.0 || c.cfg_dropout >= 1.0) throw ConfigError("cfg_dropout must lie in [0, 1)");
    if (c.data.n_samples == 0) throw ConfigError("data.n_samples must be >= 1");
    return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    } catch (const Error& e) {
        throw ConfigError(e.what());
    }
    return config_from_json(j);
}

/// FNV-1a 64 of the canonical (sorted-key) JSON, ignoring output_dir.
inline std::uint64_t config_hash(const ExperimentConfig& c) {
    nlohmann::json j = to_json(c);
    j.erase("output_dir");
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : j.dump()) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace sdlab
