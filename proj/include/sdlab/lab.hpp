// Copyright 2026 The sdlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sdlab/analysis.hpp"
#include "sdlab/config.hpp"
#include "sdlab/diffusion.hpp"
#include "sdlab/distill.hpp"
#include "sdlab/io.hpp"
#include "sdlab/models.hpp"
#include "sdlab/optim.hpp"
#include "sdlab/spectral.hpp"

namespace sdlab {

// Independent random streams derived from the experiment seed.
inline constexpr std::uint64_t kInitStream = 1;
inline constexpr std::uint64_t kTrainStream = 2;
inline constexpr std::uint64_t kDataStream = 3;
inline constexpr std::uint64_t kSampleStream = 4;
inline constexpr std::uint64_t kHeldOutStream = 5;

namespace fs = std::filesystem;

// ------------------------------------------------------------------ datasets

struct Dataset {
    Task task = Task::Texture2d;
    Tensor samples;           // [n, L] for toy1d, [n, 1, S, S] otherwise
    std::vector<int> labels;  // toy1d: frequency; class2d: class index; texture2d: 0

    std::size_t size() const { return samples.size(0); }

    /// Shape of one example with a leading batch dim of n.
    Shape batch_shape(std::size_t n) const {
        Shape s = samples.shape();
        s[0] = n;
        return s;
    }

    Tensor rows(std::span<const std::size_t> idx) const {
        const std::size_t per = samples.numel() / size();
        std::vector<double> out(idx.size() * per);
        for (std::size_t i = 0; i < idx.size(); ++i)
            std::copy_n(samples.values().begin() + static_cast<std::ptrdiff_t>(idx[i] * per), per,
                        out.begin() + static_cast<std::ptrdiff_t>(i * per));
        return Tensor(batch_shape(idx.size()), std::move(out));
    }
};

inline std::vector<double> toy1d_signal(double freq, std::size_t n) {
    std::vector<double> s(n);
    for (std::size_t i = 0; i < n; ++i)
        s[i] = std::cos(freq * 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
    return s;
}

/// Synthesises the task's dataset from `rng` alone.
inline Dataset generate_dataset(Task task, const DataConfig& d, std::size_t n, Rng& rng) {
    Dataset ds;
    ds.task = task;
    if (task == Task::Toy1d) {
        if (d.mixture.empty()) throw ConfigError("data.mixture must not be empty");
        double total = 0;
        for (const auto& [f, p] : d.mixture) total += p;
        std::vector<double> out;
        out.reserve(n * d.signal_length);
        for (std::size_t i = 0; i < n; ++i) {
            const double u = rng.uniform() * total;
            double acc = 0;
            std::size_t k = 0;
            for (; k + 1 < d.mixture.size(); ++k) {
                acc += d.mixture[k].second;
                if (u < acc) break;
            }
            const double freq = d.mixture[k].first;
            const auto s = toy1d_signal(freq, d.signal_length);
            out.insert(out.end(), s.begin(), s.end());
            ds.labels.push_back(static_cast<int>(std::lround(freq)));
        }
        ds.samples = Tensor({n, d.signal_length}, std::move(out));
        return ds;
    }
    const std::size_t S = d.image_size;
    std::vector<double> out;
    out.reserve(n * S * S);
    for (std::size_t i = 0; i < n; ++i) {
        double exponent = d.exponent;
        int label = 0;
        if (task == Task::Class2d) {
            if (d.class_exponents.empty()) throw ConfigError("data.class_exponents must not be empty");
            label = static_cast<int>(rng.uniform_int(0, static_cast<std::int64_t>(d.class_exponents.size()) - 1));
            exponent = d.class_exponents[static_cast<std::size_t>(label)];
        }
        const Tensor f = sample_power_law_field({d.amplitude, exponent}, S, S, rng);
        out.insert(out.end(), f.values().begin(), f.values().end());
        ds.labels.push_back(label);
    }
    ds.samples = Tensor({n, 1, S, S}, std::move(out));
    return ds;
}

inline Dataset gen_data(const ExperimentConfig& cfg) {
    Rng rng(cfg.seed, kDataStream);
    return generate_dataset(cfg.task, cfg.data, cfg.data.n_samples, rng);
}

inline void save_dataset(const fs::path& path, const Dataset& ds) {
    Archive a;
    a.header = {{"kind", "dataset"}, {"task", to_string(ds.task)}};
    a.add("samples", ds.samples);
    std::vector<double> labels(ds.labels.begin(), ds.labels.end());
    a.add("labels", Shape{labels.size()}, labels);
    save_archive(path, a);
}

inline Dataset load_dataset(const fs::path& path) {
    const Archive a = load_archive(path);
    if (a.header.value("kind", "") != "dataset") throw ConfigError(path.string() + " is not a dataset archive");
    Dataset ds;
    ds.task = parse_task(a.header.at("task").get<std::string>());
    const auto& s = a.at("samples");
    ds.samples = Tensor(s.shape, s.data);
    for (double l : a.at("labels").data) ds.labels.push_back(static_cast<int>(l));
    return ds;
}

/// The configured dataset file if set, otherwise a fresh generation from the seed.
inline Dataset dataset_for(const ExperimentConfig& cfg) {
    if (!cfg.data.path.empty()) {
        Dataset ds = load_dataset(cfg.data.path);
        if (ds.task != cfg.task) throw ConfigError("dataset task '" + to_string(ds.task) + "' does not match config");
        return ds;
    }
    return gen_data(cfg);
}

inline NoiseSchedule schedule_for(const ExperimentConfig& cfg) {
    return make_linear_schedule(cfg.schedule.T, cfg.schedule.beta_start, cfg.schedule.beta_end);
}

/// Class-conditional models see class labels; toy1d frequencies are not classes.
inline bool uses_labels(const ExperimentConfig& cfg, const Denoiser& model) {
    return cfg.task == Task::Class2d && model.null_label() >= 0;
}

/// Replaces each label by the null token with probability p.
inline void apply_label_dropout(std::vector<int>& labels, double p, int null_label, Rng& rng) {
    for (auto& l : labels)
        if (rng.uniform() < p) l = null_label;
}

// --------------------------------------------------------------- checkpoints

struct LoadedModel {
    std::unique_ptr<Denoiser> model;
    ExperimentConfig config;
    Archive archive;
};

inline LoadedModel load_model(const fs::path& path) {
    LoadedModel lm;
    lm.archive = load_archive(path);
    if (lm.archive.header.value("kind", "") != "checkpoint") throw ConfigError(path.string() + " is not a checkpoint");
    lm.config = config_from_json(lm.archive.header.at("config"));
    Rng scratch(0);
    lm.model = make_denoiser(lm.archive.header.at("model"), scratch);
    restore_parameters(lm.model->parameters(), lm.archive);
    return lm;
}

// ------------------------------------------------------------------- trainer

struct TrainResult {
    std::int64_t steps_done = 0;
    double first_loss_mean = 0.0;  // mean total loss over the first 10% of steps run
    double last_loss_mean = 0.0;   // and over the last 10%
    std::vector<DistillLosses> losses;
};

/// DDPM training, optionally with distillation from a frozen teacher.
/// Writes `losses.csv` and `checkpoint.bin` under the output directory.
class Trainer {
public:
    explicit Trainer(ExperimentConfig cfg) : Trainer(cfg, dataset_for(cfg)) {}

    Trainer(ExperimentConfig cfg, Dataset data)
        : cfg_(std::move(cfg)),
          data_(std::move(data)),
          sched_(schedule_for(cfg_)),
          train_rng_(cfg_.seed, kTrainStream),
          opt_(AdamWConfig{cfg_.optimizer.lr, cfg_.optimizer.beta1, cfg_.optimizer.beta2, cfg_.optimizer.eps,
                           cfg_.optimizer.weight_decay}) {
        if (data_.task != cfg_.task) throw ConfigError("dataset does not match task");
        Rng init(cfg_.seed, kInitStream);
        model_ = make_denoiser(cfg_.model, init);
        check_data_shape();
        for (const auto& p : model_->parameters().items()) trainable_.add(p.name, p.value);
        if (cfg_.distill) {
            const auto& d = *cfg_.distill;
            if (d.teacher_checkpoint.empty()) throw ConfigError("distill.teacher_checkpoint is required");
            teacher_ = load_model(d.teacher_checkpoint).model;
            teacher_->parameters().set_requires_grad(false);
            auto* tu = dynamic_cast<WgUnet*>(teacher_.get());
            auto* su = dynamic_cast<WgUnet*>(model_.get());
            if (!tu || !su) throw ConfigError("distillation needs UNet teacher and student");
            auto pairs = d.loss.pairs;
            if (pairs.empty()) pairs = AdapterSet::same_index_pairs(su->feature_channels().size());
            adapters_ = std::make_unique<AdapterSet>(tu->feature_channels(), su->feature_channels(), pairs, init);
            for (const auto& p : adapters_->parameters().items()) trainable_.add("adapter/" + p.name, p.value);
        }
        fs::create_directories(cfg_.output_dir);
    }

    /// Continues from a checkpoint written by this configuration. Loss rows
    /// logged after the checkpoint are discarded.
    void resume(const fs::path& checkpoint) {
        const Archive a = load_archive(checkpoint);
        if (a.config_hash != config_hash(cfg_)) throw ConfigError("checkpoint was written by a different config");
        restore_parameters(trainable_, a);
        restore_optimizer(opt_, trainable_, a, static_cast<std::int64_t>(a.step));
        train_rng_.restore(a.header.at("rng").get<std::string>());
        step_ = static_cast<std::int64_t>(a.step);
        truncate_csv(loss_csv_path(), static_cast<std::size_t>(step_));
    }

    /// Trains to the configured step count, or stops after `stop_after`
    /// total steps without writing a final checkpoint (a simulated kill).
    TrainResult run(std::optional<std::int64_t> stop_after = std::nullopt) {
        const std::int64_t total = cfg_.optimizer.steps;
        const std::int64_t end = stop_after ? std::min(*stop_after, total) : total;
        CsvWriter csv(loss_csv_path(), {"step", "l_ddpm", "l_spatial", "l_freq", "total"}, step_ > 0);
        TrainResult res;
        while (step_ < end) {
            const DistillLosses l = train_step();
            ++step_;
            csv.row(step_, l.l_ddpm, l.l_spatial, l.l_freq, l.total);
            res.losses.push_back(l);
            if (cfg_.checkpoint_every > 0 && step_ % cfg_.checkpoint_every == 0) save_checkpoint(checkpoint_path());
        }
        if (!stop_after || end == total) save_checkpoint(checkpoint_path());
        res.steps_done = step_;
        const std::size_t n = res.losses.size(), k = std::max<std::size_t>(1, n / 10);
        if (n) {
            for (std::size_t i = 0; i < k; ++i) {
                res.first_loss_mean += res.losses[i].total / static_cast<double>(k);
                res.last_loss_mean += res.losses[n - k + i].total / static_cast<double>(k);
            }
        }
        return res;
    }

    DistillLosses train_step() {
        const std::size_t B = cfg_.optimizer.batch;
        std::vector<std::size_t> idx(B);
        for (auto& i : idx) i = static_cast<std::size_t>(train_rng_.uniform_int(0, static_cast<std::int64_t>(data_.size()) - 1));
        const Tensor x0 = data_.rows(idx);
        std::vector<int> labels;
        if (uses_labels(cfg_, *model_)) {
            for (auto i : idx) labels.push_back(data_.labels[i]);
            apply_label_dropout(labels, cfg_.cfg_dropout, model_->null_label(), train_rng_);
        }
        const double lr = cfg_.optimizer.decay == "linear" ? linear_decay_lr(cfg_.optimizer.lr, step_, cfg_.optimizer.steps)
                                                           : cfg_.optimizer.lr;
        if (teacher_) {
            const auto& t = static_cast<const WgUnet&>(*teacher_);
            const auto& s = static_cast<const WgUnet&>(*model_);
            try {
                return distill_train_step(t, s, *adapters_, trainable_, opt_, lr, x0, labels, sched_, cfg_.distill->loss,
                                          train_rng_);
            } catch (const NumericalDivergence&) {
                throw NumericalDivergence(step_ + 1, "distillation loss is not finite");
            }
        }
        Tensor loss = ddpm_loss(*model_, x0, sched_, train_rng_, labels);
        const double v = loss.item();
        if (!std::isfinite(v)) throw NumericalDivergence(step_ + 1, "training loss is not finite");
        loss.backward();
        opt_.step(trainable_, lr);
        return {v, 0.0, 0.0, v};
    }

    void save_checkpoint(const fs::path& path) const {
        Archive a;
        a.config_hash = config_hash(cfg_);
        a.step = static_cast<std::uint64_t>(step_);
        a.header = {{"kind", "checkpoint"},
                    {"model", model_->descriptor()},
                    {"config", to_json(cfg_)},
                    {"rng", train_rng_.state()},
                    {"optimizer_steps", opt_.steps()},
                    {"parameter_count", model_->parameters().scalar_count()}};
        store_parameters(a, trainable_);
        store_optimizer(a, opt_);
        save_archive(path, a);
    }

    fs::path checkpoint_path() const { return fs::path(cfg_.output_dir) / "checkpoint.bin"; }
    fs::path loss_csv_path() const { return fs::path(cfg_.output_dir) / "losses.csv"; }

    Denoiser& model() { return *model_; }
    const Denoiser& model() const { return *model_; }
    const Denoiser* teacher() const { return teacher_.get(); }
    const AdapterSet* adapters() const { return adapters_.get(); }
    const ExperimentConfig& config() const { return cfg_; }
    const Dataset& data() const { return data_; }
    const NoiseSchedule& schedule() const { return sched_; }
    std::int64_t step() const { return step_; }

private:
    void check_data_shape() const {
        const Shape s = data_.samples.shape();
        const auto& d = cfg_.model;
        const std::string kind = d.at("kind").get<std::string>();
        if (kind == "mlp") {
            if (s.size() != 2 || s[1] != d.at("signal_length").get<std::size_t>())
                throw ConfigError("dataset shape " + shape_str(s) + " does not fit the MLP signal length");
        } else if (s.size() != 4 || s[1] != d.at("in_channels").get<std::size_t>()) {
            throw ConfigError("dataset shape " + shape_str(s) + " does not fit the UNet input channels");
        }
    }

    ExperimentConfig cfg_;
    Dataset data_;
    NoiseSchedule sched_;
    Rng train_rng_;
    AdamW opt_;
    std::unique_ptr<Denoiser> model_;
    std::unique_ptr<Denoiser> teacher_;
    std::unique_ptr<AdapterSet> adapters_;
    ParameterSet trainable_;
    std::int64_t step_ = 0;
};

// ------------------------------------------------------------------ sampling

/// Draws n samples with the config's sampler. Class-conditional models get
/// labels cycling over the classes unless `labels` is given.
inline Tensor generate(const Denoiser& model, const ExperimentConfig& cfg, std::size_t n, Rng& rng,
                       std::vector<int> labels = {}, SampleTrace* trace = nullptr) {
    Shape shape;
    if (cfg.task == Task::Toy1d) {
        shape = {n, cfg.data.signal_length};
    } else {
        shape = {n, cfg.model.at("in_channels").get<std::size_t>(), cfg.data.image_size, cfg.data.image_size};
    }
    SamplerConfig sc = cfg.sampler;
    if (uses_labels(cfg, model) && labels.empty()) {
        const std::size_t k = cfg.data.class_exponents.size();
        for (std::size_t i = 0; i < n; ++i) labels.push_back(static_cast<int>(i % k));
    }
    if (!uses_labels(cfg, model)) labels.clear();
    sc.steps = std::min(sc.steps, cfg.schedule.T);
    return sample(model, schedule_for(cfg), sc, shape, rng, labels, trace);
}

/// Raw samples to an archive plus up to 16 PGM previews (images only).
inline void write_samples(const fs::path& dir, const Tensor& samples) {
    Archive a;
    a.header = {{"kind", "samples"}};
    a.add("samples", samples);
    save_archive(dir / "samples.bin", a);
    if (samples.rank() == 4) {
        const std::size_t H = samples.size(2), W = samples.size(3);
        const std::size_t n = std::min<std::size_t>(16, samples.size(0));
        for (std::size_t i = 0; i < n; ++i)
            write_pgm(dir / ("sample_" + std::to_string(i) + ".pgm"), samples.data().subspan(i * samples.size(1) * H * W, H * W),
                      H, W);
    }
}

/// Trajectory frames as PGMs with an index CSV `step,t,file`.
inline void write_trajectory(const fs::path& dir, const SampleTrace& trace) {
    fs::create_directories(dir);
    CsvWriter idx(dir / "frames.csv", {"step", "t", "file"});
    for (const auto& s : trace.snapshots) {
        const std::string file = "frame_" + std::to_string(s.step) + ".pgm";
        if (s.x0_hat.rank() == 4) {
            const std::size_t H = s.x0_hat.size(2), W = s.x0_hat.size(3);
            write_pgm(dir / file, s.x0_hat.data().subspan(0, H * W), H, W);
        }
        idx.row(s.step, s.t, file);
    }
}

// --------------------------------------------------------------------- toy1d

struct Toy1dReport {
    std::size_t hidden = 0;
    std::vector<double> generated_hist;  // mean |DFT| per bin 0..L/2 of generated signals
    std::vector<double> real_hist;       // same for the training data
    std::vector<std::size_t> top_bins;   // two largest generated bins, descending
    std::map<int, double> mass_ratio;    // per mixture frequency: generated / real mass at that bin
    std::map<int, double> fidelity;      // min(ratio, 1 / ratio); 1 is a perfect match
    int minority = 0;                    // mixture frequency with the lowest probability
    double final_loss = 0.0;

    nlohmann::json to_json() const {
        nlohmann::json f = nlohmann::json::object(), r = nlohmann::json::object();
        for (const auto& [k, v] : fidelity) f[std::to_string(k)] = v;
        for (const auto& [k, v] : mass_ratio) r[std::to_string(k)] = v;
        return {{"hidden", hidden},     {"top_bins", top_bins},     {"fidelity", f},
                {"mass_ratio", r},      {"minority", minority},     {"final_loss", final_loss}};
    }
};

/// Mean |DFT| over rows of [n, L], bins 0..L/2.
inline std::vector<double> mean_dft_histogram(const Tensor& signals) {
    const std::size_t n = signals.size(0), L = signals.size(1);
    std::vector<double> h(L / 2 + 1, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const auto F = dft1(signals.data().subspan(i * L, L));
        for (std::size_t k = 0; k <= L / 2; ++k) h[k] += std::abs(F[k]) / static_cast<double>(n);
    }
    return h;
}

/// Trains the MLP on the cosine mixture, generates `n_generate` signals with
/// the ancestral sampler and compares their spectra with the data.
inline Toy1dReport run_toy1d(const ExperimentConfig& cfg_in, std::size_t n_generate = 300) {
    ExperimentConfig cfg = cfg_in;
    if (cfg.task != Task::Toy1d) throw ConfigError("toy1d needs task 'toy1d'");
    Trainer trainer(cfg);
    const TrainResult tr = trainer.run();

    ExperimentConfig scfg = cfg;
    scfg.sampler.kind = SamplerKind::Ancestral;
    Rng rng(cfg.seed, kSampleStream);
    const Tensor gen = generate(trainer.model(), scfg, n_generate, rng);

    Toy1dReport rep;
    rep.hidden = cfg.model.value("hidden", std::size_t{0});
    rep.final_loss = tr.last_loss_mean;
    rep.generated_hist = mean_dft_histogram(gen);
    rep.real_hist = mean_dft_histogram(trainer.data().samples);
    std::vector<std::size_t> order(rep.generated_hist.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return rep.generated_hist[a] > rep.generated_hist[b]; });
    rep.top_bins = {order[0], order[1]};
    double pmin = 2.0;
    for (const auto& [f, p] : cfg.data.mixture) {
        const auto k = static_cast<std::size_t>(std::lround(f));
        const double ratio = rep.generated_hist.at(k) / rep.real_hist.at(k);
        rep.mass_ratio[static_cast<int>(k)] = ratio;
        rep.fidelity[static_cast<int>(k)] = std::min(ratio, 1.0 / ratio);
        if (p < pmin) {
            pmin = p;
            rep.minority = static_cast<int>(k);
        }
    }

    const fs::path out = cfg.output_dir;
    CsvWriter h(out / "toy1d_histogram.csv", {"bin", "generated", "real"});
    for (std::size_t k = 0; k < rep.generated_hist.size(); ++k) h.row(k, rep.generated_hist[k], rep.real_hist[k]);
    CsvWriter per(out / "toy1d_generated_dft.csv", {"sample", "bin", "magnitude"});
    const std::size_t L = gen.size(1);
    for (std::size_t i = 0; i < gen.size(0); ++i) {
        const auto F = dft1(gen.data().subspan(i * L, L));
        for (std::size_t k = 0; k <= L / 2; ++k) per.row(i, k, std::abs(F[k]));
    }
    write_file(out / "toy1d_report.json", rep.to_json().dump(2) + "\n");
    return rep;
}

// ------------------------------------------------------------------- analyze

/// Per-(t, layer) gate statistics across sampled trajectories.
struct GatingRow {
    int t = 0;
    int layer = 0;
    std::string direction;
    double mean[4] = {0, 0, 0, 0};
    double std[4] = {0, 0, 0, 0};
};

inline std::vector<GatingRow> gating_dynamics(const WgUnet& model, const ExperimentConfig& cfg, std::size_t n_traj,
                                              Rng& rng) {
    GateRecorder rec;
    model.set_gate_recorder(&rec);
    try {
        generate(model, cfg, n_traj, rng);
    } catch (...) {
        model.set_gate_recorder(nullptr);
        throw;
    }
    model.set_gate_recorder(nullptr);
    // With classifier-free guidance two passes record per step; both are pooled.
    std::map<std::tuple<int, int, bool>, std::vector<const GateRecord*>> groups;
    for (const auto& r : rec.records) groups[{-r.t.front(), r.layer, r.up}].push_back(&r);
    std::vector<GatingRow> rows;
    for (const auto& [key, recs] : groups) {
        GatingRow row;
        row.t = -std::get<0>(key);
        row.layer = std::get<1>(key);
        row.direction = std::get<2>(key) ? "up" : "down";
        for (int b = 0; b < 4; ++b) {
            double s = 0, s2 = 0;
            std::size_t n = 0;
            for (const GateRecord* r : recs)
                for (std::size_t i = 0; i < r->t.size(); ++i) {
                    const double v = r->band_means[i * 4 + static_cast<std::size_t>(b)];
                    s += v;
                    s2 += v * v;
                    ++n;
                }
            const double m = s / static_cast<double>(n);
            row.mean[b] = m;
            row.std[b] = std::sqrt(std::max(0.0, s2 / static_cast<double>(n) - m * m));
        }
        rows.push_back(row);
    }
    return rows;
}

inline void write_gating_csv(const fs::path& path, const std::vector<GatingRow>& rows) {
    CsvWriter csv(path, {"t", "layer", "direction", "ll_mean", "ll_std", "lh_mean", "lh_std", "hl_mean", "hl_std", "hh_mean",
                         "hh_std"});
    for (const auto& r : rows)
        csv.row(r.t, r.layer, r.direction, r.mean[0], r.std[0], r.mean[1], r.std[1], r.mean[2], r.std[2], r.mean[3],
                r.std[3]);
}

/// Held-out real images drawn from the data distribution on a separate stream.
inline Tensor held_out_real(const ExperimentConfig& cfg, std::size_t n) {
    Rng rng(cfg.seed, kHeldOutStream);
    return generate_dataset(cfg.task, cfg.data, n, rng).samples;
}

struct AnalyzeOptions {
    std::string analysis;  // evolution | gating | freq_error | freq_diff
    std::size_t n_samples = 64;
    int n_snapshots = 20;
    std::size_t n_bins = 8;
    std::string other_checkpoint;  // freq_diff: the model trained without the frequency term
};

/// Mean over samples of |F_a - F_b| per coefficient for paired batches.
inline std::vector<double> dft_difference_map(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw ShapeError("dft_difference_map", a.shape(), b.shape());
    const std::size_t H = a.size(a.rank() - 2), W = a.size(a.rank() - 1), P = H * W;
    const std::size_t n = a.numel() / P;
    std::vector<double> out(P, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const auto fa = dft2(a.data().subspan(i * P, P), H, W);
        const auto fb = dft2(b.data().subspan(i * P, P), H, W);
        for (std::size_t k = 0; k < P; ++k) out[k] += std::abs(fa.coefficients[k] - fb.coefficients[k]) / static_cast<double>(n);
    }
    return out;
}

/// Runs one analysis on a checkpoint and writes its report under `out`.
/// Returns a small JSON summary.
inline nlohmann::json analyze(const fs::path& checkpoint, const AnalyzeOptions& opt, const fs::path& out) {
    LoadedModel lm = load_model(checkpoint);
    const ExperimentConfig& cfg = lm.config;
    if (cfg.task == Task::Toy1d) throw ConfigError("analyze expects a 2D image checkpoint");
    fs::create_directories(out);
    Rng rng(cfg.seed, kSampleStream);
    nlohmann::json summary = {{"analysis", opt.analysis}};
    if (opt.analysis == "evolution") {
        const std::size_t S = cfg.data.image_size;
        SamplerConfig sc = cfg.sampler;
        sc.steps = std::min(sc.steps, cfg.schedule.T);
        const Shape shape{opt.n_samples, cfg.model.at("in_channels").get<std::size_t>(), S, S};
        std::vector<int> labels;
        if (uses_labels(cfg, *lm.model))
            for (std::size_t i = 0; i < opt.n_samples; ++i) labels.push_back(static_cast<int>(i % cfg.data.class_exponents.size()));
        const EvolutionReport rep =
            frequency_evolution_report(*lm.model, schedule_for(cfg), sc, shape, rng, opt.n_snapshots, opt.n_bins, labels);
        std::ofstream f(out / "evolution.csv");
        rep.write_csv(f);
        const std::size_t q = std::max<std::size_t>(1, opt.n_bins / 4);
        summary["low_converged_snapshot"] = rep.convergence_snapshot(0, q);
        summary["high_converged_snapshot"] = rep.convergence_snapshot(opt.n_bins - q, opt.n_bins);
    } else if (opt.analysis == "gating") {
        const auto* u = dynamic_cast<const WgUnet*>(lm.model.get());
        if (!u || u->config().resampler != Resampler::Wavelet) throw ConfigError("gating analysis needs a wg_unet checkpoint");
        const auto rows = gating_dynamics(*u, cfg, opt.n_samples, rng);
        write_gating_csv(out / "gating.csv", rows);
        summary["rows"] = rows.size();
    } else if (opt.analysis == "freq_error") {
        const Tensor gen = generate(*lm.model, cfg, opt.n_samples, rng);
        const Tensor real = held_out_real(cfg, opt.n_samples);
        const FreqErrorReport rep = freq_error(real, gen, scaled_cutoff(cfg.data.image_size));
        std::ofstream f(out / "freq_error.csv");
        rep.write_csv(f);
        summary["low_error"] = rep.low_error;
        summary["high_error"] = rep.high_error;
    } else if (opt.analysis == "freq_diff") {
        if (opt.other_checkpoint.empty()) throw ConfigError("freq_diff needs a second checkpoint");
        LoadedModel other = load_model(opt.other_checkpoint);
        Rng rb(cfg.seed, kSampleStream);
        const Tensor a = generate(*lm.model, cfg, opt.n_samples, rng);
        const Tensor b = generate(*other.model, other.config, opt.n_samples, rb);
        const auto diff = dft_difference_map(a, b);
        const std::size_t S = cfg.data.image_size;
        CsvWriter csv(out / "freq_diff.csv", {"u", "v", "value"});
        double mx = 0;
        for (std::size_t u = 0; u < S; ++u)
            for (std::size_t v = 0; v < S; ++v) {
                csv.row(u, v, diff[u * S + v]);
                mx = std::max(mx, diff[u * S + v]);
            }
        std::vector<double> img(diff.size());
        for (std::size_t k = 0; k < diff.size(); ++k) img[k] = mx > 0 ? 2.0 * diff[k] / mx - 1.0 : -1.0;
        write_pgm(out / "freq_diff.pgm", img, S, S);
        summary["max"] = mx;
    } else {
        throw ConfigError("unknown analysis '" + opt.analysis + "'");
    }
    write_file(out / (opt.analysis + "_summary.json"), summary.dump(2) + "\n");
    return summary;
}

// -------------------------------------------------------------- wiener report

struct WienerReportOptions {
    PowerLawSpectrum spectrum{1.0, 2.0};
    std::vector<double> alpha_bars{0.01, 0.1, 0.5, 0.9, 0.99};
    std::size_t n_freqs = 64;
    double f_max = 16.0;
    bool oracle = false;
    std::size_t image_size = 32;
    std::size_t oracle_samples = 10000;
    std::size_t n_bins = 8;
    std::uint64_t seed = 0;
};

/// Closed-form responses on a regular grid of (0, f_max], plus optional
/// least-squares oracle columns on radial bins.
inline void wiener_report(const WienerReportOptions& o, const fs::path& out) {
    if (o.alpha_bars.empty()) throw InvalidArgument("wiener_report: alpha_bar list is empty");
    std::vector<double> freqs;
    for (std::size_t i = 1; i <= o.n_freqs; ++i) freqs.push_back(o.f_max * static_cast<double>(i) / static_cast<double>(o.n_freqs));
    CsvWriter csv(out / "wiener.csv", {"alpha_bar", "freq", "wiener", "recon_caption", "recon_text"});
    for (double ab : o.alpha_bars) {
        const WienerResponse w = wiener_response(o.spectrum, freqs, ab);
        const auto cap = reconstruction_response(w, ReconstructionVariant::Caption);
        const auto txt = reconstruction_response(w, ReconstructionVariant::Text);
        for (std::size_t i = 0; i < freqs.size(); ++i) csv.row(ab, freqs[i], w.response[i], cap[i], txt[i]);
    }
    if (!o.oracle) return;
    Rng rng(o.seed, kDataStream);
    std::vector<Tensor> fields;
    for (std::size_t i = 0; i < o.oracle_samples; ++i)
        fields.push_back(sample_power_law_field(o.spectrum, o.image_size, o.image_size, rng));
    CsvWriter oc(out / "wiener_oracle.csv", {"alpha_bar", "bin_center", "fitted", "closed_form", "rel_error"});
    for (double ab : o.alpha_bars) {
        if (ab >= 1.0) continue;
        Rng fr(o.seed, kTrainStream);
        const FittedFilter fit = fit_optimal_linear_filter(fields, ab, fr, o.n_bins);
        for (std::size_t b = 0; b < o.n_bins; ++b)
            oc.row(ab, fit.bins.bin_center(b), fit.response[b], fit.closed_form[b],
                   std::abs(fit.response[b] - fit.closed_form[b]) / fit.closed_form[b]);
    }
}

// ------------------------------------------------------------------- metrics

/// Summary of a finished run directory: loss trend and parameter counts.
inline nlohmann::json run_metrics(const fs::path& run_dir) {
    const std::string csv = read_file(run_dir / "losses.csv");
    std::vector<double> totals;
    std::size_t pos = csv.find('\n');
    while (pos != std::string::npos && pos + 1 < csv.size()) {
        const std::size_t nl = csv.find('\n', pos + 1);
        const std::string line = csv.substr(pos + 1, nl == std::string::npos ? std::string::npos : nl - pos - 1);
        if (!line.empty()) totals.push_back(std::stod(line.substr(line.rfind(',') + 1)));
        pos = nl;
    }
    nlohmann::json m = {{"steps", totals.size()}};
    if (!totals.empty()) {
        const std::size_t k = std::max<std::size_t>(1, totals.size() / 10);
        double a = 0, b = 0;
        for (std::size_t i = 0; i < k; ++i) {
            a += totals[i] / static_cast<double>(k);
            b += totals[totals.size() - k + i] / static_cast<double>(k);
        }
        m["loss_first_10pct"] = a;
        m["loss_last_10pct"] = b;
    }
    if (fs::exists(run_dir / "checkpoint.bin")) {
        LoadedModel lm = load_model(run_dir / "checkpoint.bin");
        m["parameter_count"] = lm.model->parameters().scalar_count();
        if (const auto* u = dynamic_cast<const WgUnet*>(lm.model.get()))
            m["resampler_parameter_count"] = u->resampler_parameter_count();
    }
    return m;
}

}  // namespace sdlab
