#include <cstdlib>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "doctest.h"
#include "flowsteer/image.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
    int code = -1;
    std::string out;
};

Run run(const std::string& args, const std::string& env = "") {
    const auto log = fs::temp_directory_path() / "flowsteer_cli_stdout.txt";
    const std::string cmd = env + " " + FLOWSTEER_CLI + std::string(" ") + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    std::ifstream in(log);
    std::stringstream ss;
    ss << in.rdbuf();
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

std::string read_text(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

const char* kMiniConfig = R"(# tiny dual transformer
model = dual_transformer
image_h = 16
image_w = 16
seq_len = 3
feature_dim = 8
heads = 2
encoder_layers = 1
ff_dim = 16
fused_dim = 4
backbone_channels = 4
stem_kernel = 3
stem_stride = 1
epochs = 2
decay_epochs = 1
batch_size = 4
lr0 = 1e-3
seed = 11
flow_iters = 10
data = data/index.csv
out_dir = out
)";

fs::path mini_run(const std::string& name, std::size_t frames = 14) {
    const auto dir = test_util::scratch_dir("cli_" + name);
    REQUIRE(run("synth --track mixed --seed 2 --frames " + std::to_string(frames) + " --out " + (dir / "data").string())
                .code == 0);
    std::ofstream(dir / "run.cfg") << kMiniConfig;
    return dir;
}

}  // namespace

TEST_CASE("synth") {
    const auto dir = test_util::scratch_dir("cli_synth");
    CHECK(run("synth --track straight --frames 10 --out " + (dir / "a").string()).code == 0);
    std::size_t ppm = 0;
    for (auto& e : fs::directory_iterator(dir / "a")) ppm += e.path().extension() == ".ppm";
    CHECK(ppm == 10);
    CHECK(fs::exists(dir / "a" / "index.csv"));

    CHECK(run("synth --track straight --frames 10 --out " + (dir / "b").string()).code == 0);
    for (const char* f : {"index.csv", "frame_00000.ppm", "frame_00009.ppm"})
        CHECK(test_util::read_bytes(dir / "a" / f) == test_util::read_bytes(dir / "b" / f));

    CHECK(run("synth --track straight --frames 1 --out " + (dir / "c").string()).code == 2);
    CHECK(run("synth --track 'k:zz' --frames 4 --out " + (dir / "d").string()).code == 2);
    CHECK(run("synth --frames 4").code == 2);
    CHECK(run("").code == 2);
}

TEST_CASE("train and evaluate") {
    const auto dir = mini_run("train");
    const std::string cfg = (dir / "run.cfg").string();
    auto r = run("train --config " + cfg);
    REQUIRE_MESSAGE(r.code == 0, r.out);
    for (const char* f : {"model.ckpt", "metrics.csv", "config.txt"}) CHECK(fs::exists(dir / "out" / f));
    // the resolved config is itself a valid config
    CHECK(read_text(dir / "out" / "config.txt").find("model = dual_transformer") != std::string::npos);

    const std::string ckpt = (dir / "out" / "model.ckpt").string();
    r = run("evaluate --config " + cfg + " --checkpoint " + ckpt + " --smooth 1.0");
    REQUIRE_MESSAGE(r.code == 0, r.out);
    std::istringstream lines(r.out);
    for (std::string split, raw, smoothed; lines >> split >> raw >> smoothed;) CHECK(raw == smoothed);
    CHECK(fs::exists(dir / "out" / "eval" / "predictions_train.csv"));
    CHECK(fs::exists(dir / "out" / "eval" / "attention_train" / "layer0_rgb_head0.ppm"));

    r = run("evaluate --config " + cfg + " --checkpoint " + ckpt + " --smooth 0.35");
    REQUIRE(r.code == 0);
    std::istringstream lines35(r.out);
    std::string split, raw, smoothed;
    lines35 >> split >> raw >> smoothed;
    CHECK(split == "train");
    CHECK(raw != smoothed);

    CHECK(run("evaluate --config " + cfg + " --checkpoint " + ckpt + " --model simple_transformer").code == 4);
    CHECK(run("evaluate --config " + cfg + " --checkpoint " + (dir / "none.ckpt").string()).code == 2);
}

TEST_CASE("train config errors") {
    const auto dir = mini_run("errors", 6);
    std::ofstream(dir / "unknown.cfg") << kMiniConfig << "warp_drive = 1\n";
    CHECK(run("train --config " + (dir / "unknown.cfg").string()).code == 2);
    std::ofstream(dir / "missing.cfg") << kMiniConfig << "data = nowhere/index.csv\n";
    auto r = run("train --config " + (dir / "missing.cfg").string());
    CHECK(r.code == 2);
    CHECK(r.out.find("nowhere") != std::string::npos);
    CHECK(run("train --config " + (dir / "absent.cfg").string()).code == 2);
    // a learning rate this large drives the loss to infinity
    std::ofstream(dir / "nan.cfg") << kMiniConfig << "lr0 = 1e300\nout_dir = nan_out\n";
    CHECK(run("train --config " + (dir / "nan.cfg").string()).code == 3);
}

TEST_CASE("simple_transformer ablation and output override") {
    const auto dir = mini_run("ablation", 8);
    const auto override_dir = dir / "elsewhere";
    auto r = run("train --config " + (dir / "run.cfg").string() + " --model simple_transformer",
                 "FLOWSTEER_OUT_DIR=" + override_dir.string());
    REQUIRE_MESSAGE(r.code == 0, r.out);
    CHECK(fs::exists(override_dir / "model.ckpt"));
    CHECK_FALSE(fs::exists(dir / "out"));
    const auto resolved = read_text(override_dir / "config.txt");
    CHECK(resolved.find("model = simple_transformer") != std::string::npos);
    CHECK(resolved.find("predict_speed = 0") != std::string::npos);
    // no speed head, so the speed column is empty
    CHECK(read_text(override_dir / "metrics.csv").find("0,train,") != std::string::npos);
    CHECK(read_text(override_dir / "metrics.csv").find(",,") != std::string::npos);
}

TEST_CASE("flow and augment previews") {
    const auto dir = test_util::scratch_dir("cli_preview");
    flowsteer::write_ppm(test_util::smooth_pattern(24, 20, 0, 0), dir / "a.ppm");
    flowsteer::write_ppm(test_util::smooth_pattern(24, 20, 1.5, 0), dir / "b.ppm");
    flowsteer::write_ppm(test_util::smooth_pattern(16, 20, 0, 0), dir / "small.ppm");
    const auto a = (dir / "a.ppm").string(), b = (dir / "b.ppm").string();

    REQUIRE(run("flow --a " + a + " --b " + a + " --out " + (dir / "same.ppm").string()).code == 0);
    auto same = flowsteer::read_ppm(dir / "same.ppm");
    for (double v : same.pixels) CHECK(v == 0.0);
    REQUIRE(run("flow --a " + a + " --b " + b + " --out " + (dir / "moved.ppm").string()).code == 0);
    auto moved = flowsteer::read_ppm(dir / "moved.ppm");
    double total = 0.0;
    for (double v : moved.pixels) total += v;
    CHECK(total > 0.0);
    CHECK(run("flow --a " + a + " --b " + (dir / "small.ppm").string() + " --out " + (dir / "x.ppm").string()).code == 2);
    CHECK(run("flow --a " + (dir / "none.ppm").string() + " --b " + a + " --out " + (dir / "x.ppm").string()).code == 2);

    for (const char* name : {"aug1.ppm", "aug2.ppm"})
        REQUIRE(run("augment --in " + a + " --seed 9 --out " + (dir / name).string()).code == 0);
    CHECK(test_util::read_bytes(dir / "aug1.ppm") == test_util::read_bytes(dir / "aug2.ppm"));
    REQUIRE(run("augment --in " + a + " --seed 10 --out " + (dir / "aug3.ppm").string()).code == 0);
    CHECK(test_util::read_bytes(dir / "aug1.ppm") != test_util::read_bytes(dir / "aug3.ppm"));
    CHECK(run("augment --in " + (dir / "none.ppm").string() + " --seed 1 --out " + (dir / "x.ppm").string()).code == 2);
}
