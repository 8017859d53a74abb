#pragma once

// Flat `key = value` run configuration shared by the train and evaluate
// commands. Blank lines and lines starting with '#' are ignored; relative
// paths resolve against the config file's directory.

#include <filesystem>
#include <optional>
#include <string>

#include "flowsteer/augment.hpp"
#include "flowsteer/dataset.hpp"
#include "flowsteer/models.hpp"
#include "flowsteer/training.hpp"

namespace flowsteer::cli {

struct RunConfig {
    ModelConfig model;
    bool predict_speed_set = false;  // simple_transformer defaults to no speed head
    TrainConfig train;
    AugmentPolicy augment;

    std::filesystem::path data;                    // index CSV
    std::optional<std::filesystem::path> val_data; // separate validation index; otherwise split
    std::optional<std::filesystem::path> test_data;
    double train_frac = 0.8;
    std::string camera = "center";
    std::size_t stride = 1;
    FlowParams flow;
    double flow_mag_cap = kDefaultMagCap;
    std::optional<std::filesystem::path> flow_cache;
    std::filesystem::path out_dir = "runs/default";
    std::optional<double> smooth;

    /// Throws ParseError for an unknown key or a malformed value.
    void set(const std::string& key, const std::string& value, const std::filesystem::path& base = {});
    void set_model_kind(ModelKind kind);
    /// Fills defaults that depend on other keys and validates everything.
    void finalize();
    std::string resolved_text() const;
    DatasetOptions dataset_options() const;
};

RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace flowsteer::cli
