#include "flowsteer/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <random>

#include "flowsteer/checkpoint.hpp"
#include "flowsteer/errors.hpp"

namespace flowsteer {

void TrainConfig::validate() const {
    if (!(lr0 >= 0.0)) throw ContractError("lr0 must be non-negative");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
        throw ContractError("Adam betas must lie in [0,1)");
    if (!(adam_eps > 0.0)) throw ContractError("adam_eps must be positive");
    if (epochs == 0) throw ContractError("epochs must be positive");
    if (batch_size == 0) throw ContractError("batch_size must be positive");
    for (std::size_t i = 0; i < decay_epochs.size(); ++i) {
        if (i > 0 && decay_epochs[i] <= decay_epochs[i - 1])
            throw ContractError("decay_epochs must be strictly increasing");
        if (decay_epochs[i] >= epochs) throw ContractError("decay epochs must be < epochs");
    }
    if (!(decay_factor >= 1.0)) throw ContractError("decay_factor must be >= 1");
    if (!(speed_loss_weight >= 0.0)) throw ContractError("speed_loss_weight must be non-negative");
    if (!(smooth_l1_beta > 0.0)) throw ContractError("smooth_l1_beta must be positive");
}

// ---------------------------------------------------------------- losses

Tensor rmse_loss(const Tensor& pred, const Tensor& target) {
    if (pred.numel() == 0 || pred.shape() != target.shape())
        throw ContractError("rmse_loss: prediction " + shape_str(pred.shape()) + " and target " +
                            shape_str(target.shape()) + " differ");
    return sqrt(mean(square(sub(pred, target))));
}

Tensor smooth_l1_loss(const Tensor& pred, const Tensor& target, double beta) {
    if (!(beta > 0.0)) throw ContractError("smooth_l1_loss: beta must be positive");
    if (pred.numel() == 0 || pred.shape() != target.shape())
        throw ContractError("smooth_l1_loss: prediction " + shape_str(pred.shape()) + " and target " +
                            shape_str(target.shape()) + " differ");
    const std::size_t n = pred.numel();
    std::vector<double> slope(n);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = pred[i] - target[i];
        if (std::abs(d) < beta) {
            total += 0.5 * d * d / beta;
            slope[i] = d / beta;
        } else {
            total += std::abs(d) - 0.5 * beta;
            slope[i] = d > 0 ? 1.0 : -1.0;
        }
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    return Tensor::make_result({}, {total * inv_n}, {pred, target},
                               [pred, target, slope = std::move(slope), inv_n](std::span<const double> g) {
                                   const double scale_g = g[0] * inv_n;
                                   if (pred.requires_grad()) {
                                       auto gp = pred.grad_buffer();
                                       for (std::size_t i = 0; i < slope.size(); ++i) gp[i] += scale_g * slope[i];
                                   }
                                   if (target.requires_grad()) {
                                       auto gt = target.grad_buffer();
                                       for (std::size_t i = 0; i < slope.size(); ++i) gt[i] -= scale_g * slope[i];
                                   }
                               });
}

namespace {

Tensor flatten_targets(std::span<const std::vector<double>> targets) {
    std::vector<double> v;
    for (const auto& t : targets) v.insert(v.end(), t.begin(), t.end());
    const std::size_t n = v.size();
    return Tensor::from({n}, std::move(v));
}

}  // namespace

LossTerms combined_loss(std::span<const ModelOutput> outputs, std::span<const std::vector<double>> angle_targets,
                        std::span<const std::vector<double>> speed_targets, double lambda, double beta) {
    if (outputs.empty() || outputs.size() != angle_targets.size())
        throw ContractError("combined_loss: outputs and angle targets differ in count");
    std::vector<Tensor> angles;
    for (const auto& o : outputs) angles.push_back(o.angle);
    LossTerms terms;
    terms.total = rmse_loss(concat(angles, 0), flatten_targets(angle_targets));
    terms.angle = terms.total.item();

    const bool has_speed = outputs.front().speed.has_value();
    if (has_speed && lambda > 0.0) {
        if (speed_targets.size() != outputs.size()) throw ContractError("combined_loss: speed labels missing");
        std::vector<Tensor> speeds;
        for (const auto& o : outputs) speeds.push_back(*o.speed);
        Tensor speed_loss = smooth_l1_loss(concat(speeds, 0), flatten_targets(speed_targets), beta);
        terms.speed = speed_loss.item();
        terms.total = add(terms.total, scale(speed_loss, lambda));
    }
    return terms;
}

// ---------------------------------------------------------------- optimizer

void adam_step(std::span<Tensor> params, AdamState& state, double lr, const TrainConfig& cfg) {
    if (state.m.empty()) {
        for (const auto& p : params) {
            state.m.emplace_back(p.numel(), 0.0);
            state.v.emplace_back(p.numel(), 0.0);
        }
    }
    if (state.m.size() != params.size()) throw ContractError("adam_step: optimizer state does not match parameters");
    ++state.t;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor p = params[k];
        auto& m = state.m[k];
        auto& v = state.v[k];
        if (m.size() != p.numel()) throw ContractError("adam_step: optimizer state shape mismatch");
        const std::vector<double> g = p.has_grad() ? p.grad() : std::vector<double>(p.numel(), 0.0);
        auto w = p.mutable_data();
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            w[i] -= lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
        }
    }
}

double lr_at(std::size_t epoch, const TrainConfig& cfg) {
    int passed = 0;
    for (auto d : cfg.decay_epochs) passed += epoch >= d;
    return passed ? cfg.lr0 / std::pow(cfg.decay_factor, passed) : cfg.lr0;
}

// ---------------------------------------------------------------- batching

namespace {

std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

void append_planar(std::vector<double>& out, const Frame& f) {
    const std::size_t plane = f.width * f.height;
    const std::size_t base = out.size();
    out.resize(base + 3 * plane);
    for (std::size_t i = 0; i < plane; ++i)
        for (std::size_t c = 0; c < 3; ++c) out[base + c * plane + i] = f.pixels[i * 3 + c];
}

Tensor frame_table(const std::vector<const Frame*>& frames) {
    const Frame& first = *frames.front();
    std::vector<double> data;
    data.reserve(frames.size() * 3 * first.width * first.height);
    for (const Frame* f : frames) append_planar(data, *f);
    return Tensor::from({frames.size(), 3, first.height, first.width}, std::move(data));
}

// Maps global frame ids to rows of a compact table.
struct TableBuilder {
    std::map<std::size_t, std::size_t> row_of;
    std::vector<const Frame*> frames;

    std::size_t add(std::size_t id, const Frame* f) {
        auto [it, inserted] = row_of.emplace(id, frames.size());
        if (inserted) frames.push_back(f);
        return it->second;
    }
    std::size_t push(const Frame* f) {
        frames.push_back(f);
        return frames.size() - 1;
    }
};

}  // namespace

PreparedBatch prepare_batch(const Model& model, const SequenceSet& data, std::span<const std::size_t> samples,
                            const AugmentPolicy* augment, std::uint64_t augment_seed) {
    if (samples.empty()) throw ContractError("prepare_batch: no samples");
    const bool sequence = model.config().is_sequence_model();
    const bool flow = model.config().uses_flow();
    PreparedBatch pb;
    TableBuilder rgb, flows;
    std::vector<Frame> augmented;  // owns augmented frames; reserve keeps pointers stable
    if (augment) augmented.reserve(samples.size() * data.windows.at(samples.front()).size());

    for (std::size_t s : samples) {
        const auto& win = data.windows.at(s);
        std::vector<std::size_t> rgb_rows;
        double label_shift = 0.0;
        if (augment) {
            std::mt19937_64 rng(splitmix(augment_seed ^ splitmix(s)));
            const Frame& ref = data.frames[win.front()];
            const AugmentDraw draw = draw_augmentation(*augment, ref.width, ref.height, rng);
            if (augment->adjust_label_on_translate) label_shift = augment->label_per_px * draw.dx;
            for (std::size_t id : win) {
                augmented.push_back(apply_augmentation(data.frames[id], draw));
                rgb_rows.push_back(rgb.push(&augmented.back()));
            }
        } else {
            for (std::size_t id : win) rgb_rows.push_back(rgb.add(id, &data.frames[id]));
        }
        pb.input.rgb_windows.push_back(std::move(rgb_rows));
        if (flow) {
            std::vector<std::size_t> rows;
            for (std::size_t id : data.flow_window(s)) rows.push_back(flows.add(id, &data.flow_images[id]));
            pb.input.flow_windows.push_back(std::move(rows));
        }
        std::vector<double> angles, speeds;
        if (sequence) {
            for (std::size_t id : win) {
                angles.push_back(data.angles[id] + label_shift);
                speeds.push_back(data.speeds[id]);
            }
        } else {
            angles.push_back(data.angles[win.back()] + label_shift);
            speeds.push_back(data.speeds[win.back()]);
        }
        pb.angles.push_back(std::move(angles));
        pb.speeds.push_back(std::move(speeds));
    }
    pb.input.rgb_frames = frame_table(rgb.frames);
    if (flow) pb.input.flow_frames = frame_table(flows.frames);
    return pb;
}

// ---------------------------------------------------------------- loop

namespace {

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

}  // namespace

std::pair<double, std::optional<double>> evaluate_loss(const Model& model, const SequenceSet& data,
                                                       const TrainConfig& cfg) {
    if (data.size() == 0) throw ContractError("evaluate_loss: empty set");
    double sq = 0.0, speed_total = 0.0;
    std::size_t count = 0;
    bool has_speed = false;
    for (std::size_t start = 0; start < data.size(); start += cfg.batch_size) {
        std::vector<std::size_t> idx;
        for (std::size_t i = start; i < std::min(data.size(), start + cfg.batch_size); ++i) idx.push_back(i);
        const PreparedBatch pb = prepare_batch(model, data, idx);
        const auto outs = model.forward_batch(pb.input);
        for (std::size_t b = 0; b < outs.size(); ++b) {
            for (std::size_t t = 0; t < pb.angles[b].size(); ++t) {
                const double d = outs[b].angle[t] - pb.angles[b][t];
                sq += d * d;
                if (outs[b].speed) {
                    has_speed = true;
                    const double e = std::abs((*outs[b].speed)[t] - pb.speeds[b][t]);
                    speed_total += e < cfg.smooth_l1_beta ? 0.5 * e * e / cfg.smooth_l1_beta : e - 0.5 * cfg.smooth_l1_beta;
                }
            }
            count += pb.angles[b].size();
        }
    }
    std::optional<double> speed;
    if (has_speed) speed = speed_total / static_cast<double>(count);
    return {std::sqrt(sq / static_cast<double>(count)), speed};
}

TrainResult train(Model& model, const SequenceSet& train_set, const SequenceSet* val_set, const TrainConfig& cfg,
                  const AugmentPolicy& policy, const std::optional<TrainOutputs>& outputs,
                  const EpochCallback& on_epoch) {
    cfg.validate();
    if (cfg.augment) policy.validate();
    if (train_set.size() == 0) throw ContractError("training set has no sequences");
    const double lambda = model.config().has_speed_head() ? cfg.speed_loss_weight : 0.0;

    TrainResult result;
    std::ofstream metrics;
    if (outputs) {
        std::filesystem::create_directories(outputs->dir);
        result.metrics = outputs->dir / "metrics.csv";
        metrics.open(*result.metrics, std::ios::binary | std::ios::trunc);
        if (!metrics) throw IoError("cannot write " + result.metrics->string());
        metrics << "epoch,split,loss_angle,loss_speed,lr\n";
    }

    std::vector<Tensor> params = model.parameters().tensors();
    AdamState state;
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = lr_at(epoch, cfg);
        std::mt19937_64 shuffle_rng(splitmix(cfg.seed) ^ splitmix(epoch + 1));
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        const std::uint64_t augment_seed = splitmix(policy.seed ^ splitmix(cfg.seed + 0x51ed) ^ splitmix(epoch));

        double angle_sum = 0.0, speed_sum = 0.0;
        std::size_t seen = 0, batch_no = 0;
        bool any_speed = false;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_no) {
            const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
            std::span<const std::size_t> idx(order.data() + start, stop - start);
            const PreparedBatch pb = prepare_batch(model, train_set, idx, cfg.augment ? &policy : nullptr, augment_seed);
            const auto outs = model.forward_batch(pb.input);
            LossTerms loss = combined_loss(outs, pb.angles, pb.speeds, lambda, cfg.smooth_l1_beta);
            const double total = loss.total.item();
            if (!std::isfinite(total))
                throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + " batch " +
                                   std::to_string(batch_no) + " (angle " + fmt(loss.angle) + ", speed " +
                                   fmt(loss.speed) + ")");
            model.parameters().zero_grad();
            loss.total.backward();
            adam_step(params, state, lr, cfg);

            const double n = static_cast<double>(idx.size());
            angle_sum += loss.angle * n;
            if (loss.speed) {
                any_speed = true;
                speed_sum += *loss.speed * n;
            }
            seen += idx.size();
        }
        model.parameters().zero_grad();

        EpochReport report;
        report.epoch = epoch;
        report.lr = lr;
        report.train_angle = angle_sum / static_cast<double>(seen);
        if (any_speed) report.train_speed = speed_sum / static_cast<double>(seen);
        if (val_set && val_set->size() > 0) {
            auto [a, s] = evaluate_loss(model, *val_set, cfg);
            report.val_angle = a;
            if (model.config().has_speed_head()) report.val_speed = s;
        }
        result.epochs.push_back(report);

        if (outputs) {
            metrics << epoch << ",train," << fmt(report.train_angle) << ',' << fmt(report.train_speed) << ','
                    << fmt(lr) << '\n';
            if (report.val_angle)
                metrics << epoch << ",val," << fmt(*report.val_angle) << ',' << fmt(report.val_speed) << ','
                        << fmt(lr) << '\n';
            metrics.flush();
            if (cfg.checkpoint_every && (epoch + 1) % cfg.checkpoint_every == 0)
                save_checkpoint(outputs->dir / ("model_epoch" + std::to_string(epoch + 1) + ".ckpt"), model);
        }
        if (on_epoch && !on_epoch(report)) break;
    }

    if (outputs) {
        result.checkpoint = outputs->dir / "model.ckpt";
        save_checkpoint(*result.checkpoint, model);
    }
    return result;
}

}  // namespace flowsteer
