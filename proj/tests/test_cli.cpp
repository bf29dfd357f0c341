// Copyright 2026 The sdlab Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>

#include "test_util.hpp"

using namespace sdlab;
using sdlab::testing::scratch_dir;
namespace fs = std::filesystem;

namespace {

int cli(const std::string& args, const fs::path& log) {
    const std::string cmd = std::string(SDLAB_CLI) + " " + args + " > " + (log / "stdout.txt").string() + " 2> " +
                            (log / "stderr.txt").string();
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path write_config(const fs::path& dir, const std::string& name, const ExperimentConfig& c) {
    const fs::path p = dir / name;
    write_file(p, to_json(c).dump(2));
    return p;
}

ExperimentConfig small_run(const fs::path& out, std::int64_t steps) {
    ExperimentConfig c;
    c.model = {{"kind", "wg_unet"}, {"in_channels", 1}, {"widths", {4, 8}}, {"time_dim", 8}, {"n_classes", 0}};
    c.schedule = {50, 1e-4, 0.04};
    c.optimizer.steps = steps;
    c.optimizer.batch = 4;
    c.data.n_samples = 16;
    c.data.image_size = 8;
    c.sampler.steps = 5;
    c.seed = 1;
    c.output_dir = out.string();
    return c;
}

TEST(Cli, PipelineSucceeds) {
    const fs::path d = scratch_dir("cli_pipeline");
    const fs::path cfg = write_config(d, "run.json", small_run(d / "run", 6));
    ASSERT_EQ(cli("gen-data --config " + cfg.string(), d), 0);
    EXPECT_TRUE(fs::exists(d / "run" / "dataset.bin"));
    ASSERT_EQ(cli("train --config " + cfg.string(), d), 0);
    EXPECT_NE(read_file(d / "stdout.txt").find("\"steps\": 6"), std::string::npos);
    const std::string ckpt = (d / "run" / "checkpoint.bin").string();
    EXPECT_EQ(cli("sample --checkpoint " + ckpt + " --n 2 --out " + (d / "s").string() + " --trajectory " +
                      (d / "traj").string(),
                  d),
              0);
    EXPECT_TRUE(fs::exists(d / "s" / "samples.bin"));
    EXPECT_TRUE(fs::exists(d / "traj" / "frames.csv"));
    EXPECT_EQ(cli("analyze gating --checkpoint " + ckpt + " --n 2 --out " + (d / "a").string(), d), 0);
    EXPECT_TRUE(fs::exists(d / "a" / "gating.csv"));
    EXPECT_EQ(cli("wiener-report --out " + (d / "w").string(), d), 0);
    EXPECT_TRUE(fs::exists(d / "w" / "wiener.csv"));
    EXPECT_EQ(cli("metrics --run " + (d / "run").string(), d), 0);
    EXPECT_TRUE(fs::exists(d / "run" / "metrics.json"));
}

TEST(Cli, ConfigErrorsExitTwo) {
    const fs::path d = scratch_dir("cli_config_errors");
    nlohmann::json bad = to_json(small_run(d / "run", 2));
    bad["optimizer"]["learning_rate"] = 0.1;
    write_file(d / "bad.json", bad.dump());
    EXPECT_EQ(cli("train --config " + (d / "bad.json").string(), d), 2);
    EXPECT_NE(read_file(d / "stderr.txt").find("learning_rate"), std::string::npos);
    EXPECT_EQ(cli("train --config " + (d / "missing.json").string(), d), 2);
    EXPECT_EQ(cli("train", d), 2);
    EXPECT_EQ(cli("transmogrify", d), 2);
    EXPECT_EQ(cli("analyze fid --checkpoint x --out " + d.string(), d), 2);
    const fs::path plain = write_config(d, "plain.json", small_run(d / "run", 2));
    EXPECT_EQ(cli("distill --config " + plain.string(), d), 2);
}

TEST(Cli, DivergenceExitsThree) {
    const fs::path d = scratch_dir("cli_divergence");
    ExperimentConfig c = small_run(d / "run", 20);
    c.optimizer.lr = 1e200;
    c.optimizer.decay = "none";
    const fs::path cfg = write_config(d, "blowup.json", c);
    EXPECT_EQ(cli("train --config " + cfg.string(), d), 3);
    EXPECT_NE(read_file(d / "stderr.txt").find("step"), std::string::npos);
}

TEST(Cli, StopAndResumeMatchesFullRun) {
    const fs::path d = scratch_dir("cli_resume");
    ExperimentConfig full = small_run(d / "full", 12), part = small_run(d / "part", 12);
    full.checkpoint_every = part.checkpoint_every = 4;
    const fs::path cf = write_config(d, "full.json", full), cp = write_config(d, "part.json", part);
    ASSERT_EQ(cli("train --config " + cf.string(), d), 0);
    ASSERT_EQ(cli("train --config " + cp.string() + " --stop-after 7", d), 0);
    ASSERT_EQ(cli("train --config " + cp.string() + " --resume " + (d / "part" / "checkpoint.bin").string(), d), 0);
    EXPECT_EQ(read_file(d / "full" / "losses.csv"), read_file(d / "part" / "losses.csv"));
}

TEST(Cli, BatchRunsEachConfig) {
    const fs::path d = scratch_dir("cli_batch");
    const fs::path a = write_config(d, "a.json", small_run(d / "unused", 3));
    ExperimentConfig cb = small_run(d / "unused", 3);
    cb.seed = 2;
    const fs::path b = write_config(d, "b.json", cb);
    ASSERT_EQ(cli("train --jobs 2 --out " + (d / "out").string() + " --config " + a.string() + " --config " + b.string(), d),
              0);
    EXPECT_TRUE(fs::exists(d / "out" / "a" / "losses.csv"));
    EXPECT_TRUE(fs::exists(d / "out" / "b" / "losses.csv"));
    EXPECT_NE(read_file(d / "out" / "a" / "losses.csv"), read_file(d / "out" / "b" / "losses.csv"));
}

TEST(Cli, SeedOverrideChangesData) {
    const fs::path d = scratch_dir("cli_seed");
    const fs::path cfg = write_config(d, "c.json", small_run(d / "x", 1));
    ASSERT_EQ(cli("gen-data --config " + cfg.string() + " --out " + (d / "s1").string(), d), 0);
    ASSERT_EQ(cli("gen-data --config " + cfg.string() + " --out " + (d / "s1b").string(), d), 0);
    ASSERT_EQ(cli("gen-data --config " + cfg.string() + " --seed 9 --out " + (d / "s9").string(), d), 0);
    EXPECT_EQ(read_file(d / "s1" / "dataset.bin"), read_file(d / "s1b" / "dataset.bin"));
    EXPECT_NE(read_file(d / "s1" / "dataset.bin"), read_file(d / "s9" / "dataset.bin"));
}

TEST(Cli, ShippedConfigsParse) {
    std::size_t n = 0;
    for (const auto& e : fs::directory_iterator(SDLAB_CONFIG_DIR)) {
        if (e.path().extension() != ".json") continue;
        ++n;
        EXPECT_NO_THROW(load_config(e.path())) << e.path();
    }
    EXPECT_GE(n, 5u);
}

}  // namespace
