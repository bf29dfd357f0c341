// Copyright 2026 The sdlab Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line front end: sdlab <subcommand> [flags]. Exit codes: 0 success,
// 2 configuration error, 3 numerical divergence, 1 anything else.

#include <spawn.h>
#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sdlab.hpp"

extern char** environ;

namespace {

namespace fs = std::filesystem;
using namespace sdlab;

constexpr int kExitConfig = 2;
constexpr int kExitDivergence = 3;

struct RunFlags {
    std::vector<std::string> configs;
    std::optional<std::uint64_t> seed;
    std::string out;
    int jobs = 1;
};

void add_run_flags(CLI::App* cmd, RunFlags& f, bool multi) {
    if (multi)
        cmd->add_option("--config", f.configs, "Experiment config (JSON); repeat for a batch")->required();
    else
        cmd->add_option("--config", f.configs, "Experiment config (JSON)")->required()->expected(1);
    cmd->add_option("--seed", f.seed, "Override the config seed");
    cmd->add_option("--out", f.out, "Override the output directory");
    if (multi) cmd->add_option("--jobs", f.jobs, "Parallel processes for a batch of configs")->check(CLI::PositiveNumber);
}

ExperimentConfig resolve(const std::string& path, const RunFlags& f) {
    ExperimentConfig c = load_config(path);
    if (f.seed) c.seed = *f.seed;
    if (!f.out.empty()) c.output_dir = f.out;
    return c;
}

int worker_cap(int jobs) {
    if (const char* env = std::getenv("SDLAB_THREADS")) {
        const int cap = std::atoi(env);
        if (cap > 0) jobs = std::min(jobs, cap);
    }
    return std::max(jobs, 1);
}

/// Re-invokes this binary once per config, at most `jobs` at a time.
int run_batch(const std::string& self, const std::string& sub, const RunFlags& f) {
    const int cap = worker_cap(f.jobs);
    std::vector<pid_t> running;
    int worst = 0;
    auto reap_one = [&] {
        int status = 0;
        const pid_t pid = wait(&status);
        running.erase(std::remove(running.begin(), running.end(), pid), running.end());
        const int code = WIFEXITED(status) ? WEXITSTATUS(status) : 1;
        worst = std::max(worst, code);
    };
    for (const auto& cfg : f.configs) {
        while (static_cast<int>(running.size()) >= cap) reap_one();
        std::vector<std::string> args{self, sub, "--config", cfg};
        if (f.seed) args.insert(args.end(), {"--seed", std::to_string(*f.seed)});
        if (!f.out.empty()) args.insert(args.end(), {"--out", (fs::path(f.out) / fs::path(cfg).stem()).string()});
        std::vector<char*> argv;
        for (auto& a : args) argv.push_back(a.data());
        argv.push_back(nullptr);
        pid_t pid;
        if (posix_spawn(&pid, self.c_str(), nullptr, nullptr, argv.data(), environ) != 0) {
            std::cerr << "sdlab: failed to start worker for " << cfg << "\n";
            worst = std::max(worst, 1);
            continue;
        }
        running.push_back(pid);
    }
    while (!running.empty()) reap_one();
    return worst;
}

void print_json(const nlohmann::json& j) { std::cout << j.dump(2) << "\n"; }

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"sdlab: spectral diffusion lab"};
    app.require_subcommand(1);

    RunFlags gen_f, train_f, distill_f, toy_f;
    auto* gen = app.add_subcommand("gen-data", "Synthesise the configured dataset");
    add_run_flags(gen, gen_f, false);

    std::string resume;
    std::optional<std::int64_t> stop_after;
    auto* train = app.add_subcommand("train", "Train a denoiser");
    add_run_flags(train, train_f, true);
    train->add_option("--resume", resume, "Continue from this checkpoint");
    train->add_option("--stop-after", stop_after, "Stop after this many total steps");

    auto* distill = app.add_subcommand("distill", "Train a student with spectrum-aware distillation");
    add_run_flags(distill, distill_f, true);
    distill->add_option("--resume", resume, "Continue from this checkpoint");

    std::string ckpt, out, trajectory;
    std::size_t n = 16;
    std::optional<std::uint64_t> sample_seed;
    auto* samp = app.add_subcommand("sample", "Generate samples from a checkpoint");
    samp->add_option("--checkpoint", ckpt, "Checkpoint file")->required();
    samp->add_option("--n", n, "Number of samples");
    samp->add_option("--out", out, "Output directory")->required();
    samp->add_option("--seed", sample_seed, "Sampling seed (defaults to the run seed)");
    samp->add_option("--trajectory", trajectory, "Also write x0-estimate frames to this directory");

    std::size_t n_generate = 300;
    auto* toy = app.add_subcommand("toy1d", "Cosine-mixture frequency-bias experiment");
    add_run_flags(toy, toy_f, false);
    toy->add_option("--n-generate", n_generate, "Signals to generate");

    AnalyzeOptions aopt;
    auto* an = app.add_subcommand("analyze", "Reports on a trained checkpoint");
    an->add_option("--checkpoint", ckpt, "Checkpoint file")->required();
    an->add_option("analysis", aopt.analysis, "evolution | gating | freq_error | freq_diff")
        ->required()
        ->check(CLI::IsMember({"evolution", "gating", "freq_error", "freq_diff"}));
    an->add_option("--out", out, "Output directory")->required();
    an->add_option("--n", aopt.n_samples, "Samples or trajectories");
    an->add_option("--snapshots", aopt.n_snapshots, "Evolution snapshots");
    an->add_option("--bins", aopt.n_bins, "Radial bins");
    an->add_option("--other", aopt.other_checkpoint, "freq_diff: checkpoint trained without the frequency term");

    WienerReportOptions wopt;
    auto* wr = app.add_subcommand("wiener-report", "Tabulate optimal linear filter responses");
    wr->add_option("--out", out, "Output directory")->required();
    wr->add_option("--amplitude", wopt.spectrum.amplitude, "Power-law amplitude");
    wr->add_option("--exponent", wopt.spectrum.exponent, "Power-law exponent");
    wr->add_option("--alpha-bars", wopt.alpha_bars, "Signal-retention levels");
    wr->add_flag("--oracle", wopt.oracle, "Append least-squares oracle columns");
    wr->add_option("--oracle-samples", wopt.oracle_samples, "Fields for the oracle fit");
    wr->add_option("--seed", wopt.seed, "Oracle seed");

    std::string run_dir;
    auto* met = app.add_subcommand("metrics", "Summarise a run directory");
    met->add_option("--run", run_dir, "Run directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    try {
        if (gen->parsed()) {
            const ExperimentConfig c = resolve(gen_f.configs.front(), gen_f);
            const fs::path path = fs::path(c.output_dir) / "dataset.bin";
            save_dataset(path, gen_data(c));
            std::cout << path.string() << "\n";
        } else if (train->parsed() || distill->parsed()) {
            RunFlags& f = train->parsed() ? train_f : distill_f;
            const std::string sub = train->parsed() ? "train" : "distill";
            if (f.configs.size() > 1) {
                if (!resume.empty() || stop_after) throw ConfigError("--resume/--stop-after take a single config");
                std::error_code ec;
                const fs::path self = fs::read_symlink("/proc/self/exe", ec);
                return run_batch(ec ? std::string(argv[0]) : self.string(), sub, f);
            }
            const ExperimentConfig c = resolve(f.configs.front(), f);
            if (distill->parsed() && !c.distill) throw ConfigError("distill needs a 'distill' section in the config");
            Trainer trainer(c);
            if (!resume.empty()) trainer.resume(resume);
            const TrainResult r = trainer.run(stop_after);
            print_json({{"steps", r.steps_done},
                        {"loss_first_10pct", r.first_loss_mean},
                        {"loss_last_10pct", r.last_loss_mean},
                        {"checkpoint", trainer.checkpoint_path().string()}});
        } else if (samp->parsed()) {
            LoadedModel lm = load_model(ckpt);
            Rng rng(sample_seed.value_or(lm.config.seed), kSampleStream);
            SampleTrace trace{trajectory.empty() ? 0 : 20, {}};
            const Tensor s = generate(*lm.model, lm.config, n, rng, {}, trajectory.empty() ? nullptr : &trace);
            write_samples(out, s);
            if (!trajectory.empty()) write_trajectory(trajectory, trace);
            std::cout << (fs::path(out) / "samples.bin").string() << "\n";
        } else if (toy->parsed()) {
            const ExperimentConfig c = resolve(toy_f.configs.front(), toy_f);
            print_json(run_toy1d(c, n_generate).to_json());
        } else if (an->parsed()) {
            print_json(analyze(ckpt, aopt, out));
        } else if (wr->parsed()) {
            fs::create_directories(out);
            wiener_report(wopt, out);
            std::cout << (fs::path(out) / "wiener.csv").string() << "\n";
        } else if (met->parsed()) {
            const nlohmann::json m = run_metrics(run_dir);
            write_file(fs::path(run_dir) / "metrics.json", m.dump(2) + "\n");
            print_json(m);
        }
    } catch (const ConfigError& e) {
        std::cerr << "sdlab: config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const NumericalDivergence& e) {
        std::cerr << "sdlab: " << e.what() << "\n";
        return kExitDivergence;
    } catch (const std::exception& e) {
        std::cerr << "sdlab: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
