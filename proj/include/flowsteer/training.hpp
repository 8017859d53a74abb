#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "flowsteer/augment.hpp"
#include "flowsteer/dataset.hpp"
#include "flowsteer/models.hpp"

namespace flowsteer {

struct TrainConfig {
    double lr0 = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::vector<std::size_t> decay_epochs{30, 90, 150};
    double decay_factor = 10.0;
    std::size_t epochs = 160;
    std::size_t batch_size = 8;
    double speed_loss_weight = 0.1;  // lambda
    double smooth_l1_beta = 1.0;
    std::uint64_t seed = 0;
    std::size_t checkpoint_every = 0;  // epochs; 0 writes only the final checkpoint
    bool augment = true;

    void validate() const;
};

// ---- losses ----

/// sqrt(mean((pred - target)^2)); the gradient at zero residual is zero.
Tensor rmse_loss(const Tensor& pred, const Tensor& target);
/// Mean over elements of 0.5 d^2 / beta (|d| < beta) or |d| - 0.5 beta.
Tensor smooth_l1_loss(const Tensor& pred, const Tensor& target, double beta = 1.0);

struct LossTerms {
    Tensor total;
    double angle = 0.0;
    std::optional<double> speed;
};

/// L_angle (RMSE) + lambda * L_speed (smooth L1). The speed term is skipped
/// when the output has no speed head.
LossTerms combined_loss(std::span<const ModelOutput> outputs, std::span<const std::vector<double>> angle_targets,
                        std::span<const std::vector<double>> speed_targets, double lambda, double beta = 1.0);

// ---- optimizer ----

struct AdamState {
    std::vector<std::vector<double>> m, v;
    std::uint64_t t = 0;
};

/// One bias-corrected Adam update of every tensor in `params` from its
/// accumulated gradient (missing gradient counts as zero).
void adam_step(std::span<Tensor> params, AdamState& state, double lr, const TrainConfig& cfg);

/// lr0 / decay_factor^k, k = number of decay epochs <= epoch, as one division
double lr_at(std::size_t epoch, const TrainConfig& cfg);

// ---- batching ----

/// Builds a BatchInput for the given windows of `data`, sharing frames across
/// overlapping windows. With `augment`, each window gets one augmentation draw
/// applied to all of its RGB frames; flow images are never augmented.
struct PreparedBatch {
    BatchInput input;
    std::vector<std::vector<double>> angles;  // per sample, model output length
    std::vector<std::vector<double>> speeds;
};
PreparedBatch prepare_batch(const Model& model, const SequenceSet& data, std::span<const std::size_t> samples,
                            const AugmentPolicy* augment = nullptr, std::uint64_t augment_seed = 0);

// ---- loop ----

struct EpochReport {
    std::size_t epoch = 0;
    double lr = 0.0;
    double train_angle = 0.0;
    std::optional<double> train_speed;
    std::optional<double> val_angle;
    std::optional<double> val_speed;
};

struct TrainOutputs {
    std::filesystem::path dir;  // metrics.csv and model.ckpt go here
};

/// Return false to stop after the current epoch.
using EpochCallback = std::function<bool(const EpochReport&)>;

struct TrainResult {
    std::vector<EpochReport> epochs;
    std::optional<std::filesystem::path> checkpoint;
    std::optional<std::filesystem::path> metrics;
};

/// Seeded shuffle per epoch, Adam with the step schedule, epoch-mean losses
/// logged as `epoch,split,loss_angle,loss_speed,lr`. Throws NumericError with
/// epoch and batch on a non-finite loss.
TrainResult train(Model& model, const SequenceSet& train_set, const SequenceSet* val_set, const TrainConfig& cfg,
                  const AugmentPolicy& policy, const std::optional<TrainOutputs>& outputs = std::nullopt,
                  const EpochCallback& on_epoch = {});

/// Angle and speed loss over a whole set without augmentation or updates.
std::pair<double, std::optional<double>> evaluate_loss(const Model& model, const SequenceSet& data,
                                                       const TrainConfig& cfg);

}  // namespace flowsteer
