#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "flowsteer/dataset.hpp"
#include "flowsteer/models.hpp"

namespace flowsteer {

struct PredictionRow {
    std::int64_t timestamp_ns = 0;
    double target = 0.0;
    double prediction = 0.0;
    std::optional<double> speed_prediction;
};

struct PredictionSeries {
    std::vector<PredictionRow> rows;

    std::size_t size() const { return rows.size(); }
    std::vector<double> predictions() const;
    std::vector<double> targets() const;
};

struct EvaluationResult {
    PredictionSeries series;
    double rmse = 0.0;
};

/// Runs every window without augmentation; the last-step prediction is
/// assigned to the window's last frame.
EvaluationResult evaluate(const Model& model, const SequenceSet& data, std::size_t batch_size = 16);

/// Root mean squared error of two equally long series.
double rmse(std::span<const double> predictions, std::span<const double> targets);

/// s_0 = y_0, s_t = f y_t + (1 - f) s_{t-1}; f in (0,1].
std::vector<double> exp_smooth(std::span<const double> series, double factor);

/// One L x L grayscale PPM and one CSV per (layer, branch, head), named
/// layer<l>_<rgb|flow>_head<h>.{ppm,csv}. Returns the files written.
std::vector<std::filesystem::path> export_attention(const ModelOutput& output, const std::filesystem::path& out_dir);

/// CSV `timestamp,target,prediction[,speed_pred]`.
void emit_plot_data(const PredictionSeries& series, const std::filesystem::path& path);
PredictionSeries read_plot_data(const std::filesystem::path& path);

}  // namespace flowsteer
