#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <random>

#include "CLI11.hpp"
#include "flowsteer/augment.hpp"
#include "flowsteer/checkpoint.hpp"
#include "flowsteer/dataset.hpp"
#include "flowsteer/errors.hpp"
#include "flowsteer/evaluation.hpp"
#include "flowsteer/flow.hpp"
#include "flowsteer/training.hpp"
#include "run_config.hpp"

namespace fs = std::filesystem;
using namespace flowsteer;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitCheckpoint = 4;

std::string real(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

cli::RunConfig resolve_config(const fs::path& path, const std::string& model_override) {
    auto cfg = cli::load_run_config(path);
    if (!model_override.empty()) cfg.set_model_kind(parse_model_kind(model_override));
    if (const char* env = std::getenv("FLOWSTEER_OUT_DIR"); env && *env) cfg.out_dir = env;
    cfg.finalize();
    return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
}

DriveIndex require_index(const fs::path& path, const std::string& camera) {
    if (!fs::exists(path)) throw IoError("dataset index not found: " + path.string());
    auto idx = load_index(path, camera);
    if (idx.size() == 0) throw ContractError("dataset index " + path.string() + " has no rows for camera '" + camera + "'");
    return idx;
}

struct Splits {
    std::vector<std::pair<std::string, SequenceSet>> sets;  // train first
};

Splits load_splits(const cli::RunConfig& cfg, bool with_test) {
    Splits s;
    const auto opts = cfg.dataset_options();
    auto all = require_index(cfg.data, cfg.camera);
    if (cfg.val_data) {
        s.sets.emplace_back("train", make_sequences(all, opts));
        s.sets.emplace_back("val", make_sequences(require_index(*cfg.val_data, cfg.camera), opts));
    } else if (cfg.train_frac < 1.0) {
        auto [tr, va] = split_index(all, cfg.train_frac);
        s.sets.emplace_back("train", make_sequences(tr, opts));
        s.sets.emplace_back("val", make_sequences(va, opts));
    } else {
        s.sets.emplace_back("train", make_sequences(all, opts));
    }
    if (with_test && cfg.test_data)
        s.sets.emplace_back("test", make_sequences(require_index(*cfg.test_data, cfg.camera), opts));
    return s;
}

int cmd_synth(const std::string& track_text, std::size_t frames, const fs::path& out, std::uint64_t seed,
              std::size_t width, std::size_t height) {
    TrackSpec track = parse_track(track_text, seed);
    track.width = width;
    track.height = height;
    auto idx = generate_synthetic(track, frames, out);
    std::cout << "wrote " << idx.size() << " frames to " << out.string() << '\n';
    return kExitOk;
}

int cmd_train(const fs::path& config_path, const std::string& model_override) {
    auto cfg = resolve_config(config_path, model_override);
    write_text(cfg.out_dir / "config.txt", cfg.resolved_text());
    auto splits = load_splits(cfg, false);
    const SequenceSet& train_set = splits.sets[0].second;
    const SequenceSet* val_set = splits.sets.size() > 1 && splits.sets[1].second.size() > 0 ? &splits.sets[1].second : nullptr;

    auto model = make_model(cfg.model);
    std::cout << "model " << to_string(cfg.model.kind) << ", " << model->parameters().scalar_count()
              << " parameters, " << train_set.size() << " train sequences";
    if (val_set) std::cout << ", " << val_set->size() << " val sequences";
    std::cout << '\n';

    auto result = train(*model, train_set, val_set, cfg.train, cfg.augment, TrainOutputs{cfg.out_dir},
                        [](const EpochReport& r) {
                            std::cout << "epoch " << r.epoch << " lr " << r.lr << " train " << r.train_angle;
                            if (r.val_angle) std::cout << " val " << *r.val_angle;
                            std::cout << std::endl;
                            return true;
                        });
    std::cout << "checkpoint " << result.checkpoint->string() << '\n';
    return kExitOk;
}

int cmd_evaluate(const fs::path& config_path, const fs::path& checkpoint, std::optional<double> smooth,
                 const std::string& model_override) {
    auto cfg = resolve_config(config_path, model_override);
    if (smooth) {
        cfg.smooth = smooth;
        cfg.finalize();
    }
    if (!fs::exists(checkpoint)) throw IoError("checkpoint not found: " + checkpoint.string());
    auto model = make_model(cfg.model);
    load_checkpoint(checkpoint, *model);

    const fs::path out = cfg.out_dir / "eval";
    write_text(out / "config.txt", cfg.resolved_text());
    auto splits = load_splits(cfg, true);
    for (const auto& [name, set] : splits.sets) {
        if (set.size() == 0) continue;
        auto result = evaluate(*model, set);
        emit_plot_data(result.series, out / ("predictions_" + name + ".csv"));
        std::cout << name << ' ' << real(result.rmse);
        if (cfg.smooth) std::cout << ' ' << real(rmse(exp_smooth(result.series.predictions(), *cfg.smooth), result.series.targets()));
        std::cout << '\n';
        if (model->has_attention()) {
            const std::size_t first = 0;
            auto batch = prepare_batch(*model, set, std::span(&first, 1));
            export_attention(model->forward_batch(batch.input).front(), out / ("attention_" + name));
        }
    }
    return kExitOk;
}

int cmd_flow(const fs::path& a, const fs::path& b, const fs::path& out, const FlowParams& params, double mag_cap) {
    const Frame fa = read_ppm(a), fb = read_ppm(b);
    if (!fa.same_size(fb)) throw DimensionError("flow inputs differ in size");
    write_ppm(encode_flow_hsv(compute_dense_flow(fa, fb, params), mag_cap), out);
    return kExitOk;
}

int cmd_augment(const fs::path& in, std::uint64_t seed, const fs::path& out, double angle) {
    AugmentPolicy policy;
    policy.seed = seed;
    std::mt19937_64 rng(seed);
    auto [frame, label] = augment(read_ppm(in), angle, policy, rng);
    write_ppm(frame, out);
    std::cout << "label " << real(label) << '\n';
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"flowsteer: steering-angle regression from RGB and optical flow"};
    app.require_subcommand(1);

    std::string track = "straight";
    std::size_t frames = 0, width = 64, height = 64;
    std::uint64_t seed = 0;
    fs::path out, config, checkpoint, in, a, b;
    std::string model_kind;
    std::optional<double> smooth;
    double angle = 0.0, mag_cap = kDefaultMagCap;
    FlowParams flow_params;

    auto* synth = app.add_subcommand("synth", "render a synthetic drive");
    synth->add_option("--track", track, "straight | curve50 | mixed | k:len,k:len,...")->required();
    synth->add_option("--frames", frames, "frame count (>= 2)")->required();
    synth->add_option("--out", out, "output directory")->required();
    synth->add_option("--seed", seed, "seed for the mixed preset and sensor noise");
    synth->add_option("--width", width);
    synth->add_option("--height", height);

    auto* train_cmd = app.add_subcommand("train", "train a model from a run config");
    train_cmd->add_option("--config", config)->required();
    train_cmd->add_option("--model", model_kind, "override the configured model kind");

    auto* eval_cmd = app.add_subcommand("evaluate", "score a checkpoint on every configured split");
    eval_cmd->add_option("--config", config)->required();
    eval_cmd->add_option("--checkpoint", checkpoint)->required();
    eval_cmd->add_option("--smooth", smooth, "smoothing factor f in (0,1]");
    eval_cmd->add_option("--model", model_kind);

    auto* flow_cmd = app.add_subcommand("flow", "HSV-encoded dense flow between two frames");
    flow_cmd->add_option("--a", a)->required();
    flow_cmd->add_option("--b", b)->required();
    flow_cmd->add_option("--out", out)->required();
    flow_cmd->add_option("--mag-cap", mag_cap);
    flow_cmd->add_option("--levels", flow_params.levels);
    flow_cmd->add_option("--iters", flow_params.iters);
    flow_cmd->add_option("--alpha", flow_params.alpha);

    auto* aug_cmd = app.add_subcommand("augment", "apply one seeded augmentation draw");
    aug_cmd->add_option("--in", in)->required();
    aug_cmd->add_option("--seed", seed)->required();
    aug_cmd->add_option("--out", out)->required();
    aug_cmd->add_option("--angle", angle, "label to carry through the augmentation");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (synth->parsed()) return cmd_synth(track, frames, out, seed, width, height);
        if (train_cmd->parsed()) return cmd_train(config, model_kind);
        if (eval_cmd->parsed()) return cmd_evaluate(config, checkpoint, smooth, model_kind);
        if (flow_cmd->parsed()) return cmd_flow(a, b, out, flow_params, mag_cap);
        if (aug_cmd->parsed()) return cmd_augment(in, seed, out, angle);
    } catch (const NumericError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const CheckpointMismatch& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitCheckpoint;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    }
    return kExitUsage;
}
