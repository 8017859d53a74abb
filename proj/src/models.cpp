#include "flowsteer/models.hpp"

#include <cmath>
#include <sstream>

#include "flowsteer/errors.hpp"

namespace flowsteer {

namespace {

constexpr std::size_t kMinBackboneExtent = 8;

std::string join_sizes(const std::vector<std::size_t>& values) {
    std::string out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(values[i]);
    }
    return out;
}

Tensor reshape_to_vector(const Tensor& column) { return reshape(column, {column.numel()}); }

}  // namespace

std::string to_string(ModelKind kind) {
    switch (kind) {
        case ModelKind::dave2: return "dave2";
        case ModelKind::resnet_reg: return "resnet_reg";
        case ModelKind::cnn_lstm: return "cnn_lstm";
        case ModelKind::dual_transformer: return "dual_transformer";
        case ModelKind::simple_transformer: return "simple_transformer";
    }
    return "?";
}

ModelKind parse_model_kind(const std::string& text) {
    for (auto k : {ModelKind::dave2, ModelKind::resnet_reg, ModelKind::cnn_lstm, ModelKind::dual_transformer,
                   ModelKind::simple_transformer})
        if (to_string(k) == text) return k;
    throw ContractError("unknown model kind '" + text + "'");
}

// ---- config ----

void ModelConfig::validate() const {
    if (seq_len < 1) throw ContractError("seq_len must be >= 1");
    if (feature_dim == 0 || heads == 0) throw ContractError("feature_dim and heads must be positive");
    if (feature_dim % heads != 0)
        throw ContractError("feature_dim " + std::to_string(feature_dim) + " not divisible by heads " +
                            std::to_string(heads));
    if (kind == ModelKind::simple_transformer && predict_speed)
        throw ContractError("simple_transformer has no speed head; set predict_speed=false");
    if (encoder_layers == 0 || ff_dim == 0 || fused_dim == 0) throw ContractError("transformer sizes must be positive");
    if (lstm_hidden == 0 || lstm_layers == 0) throw ContractError("lstm sizes must be positive");
    if (backbone_channels.empty()) throw ContractError("backbone_channels must not be empty");
    for (auto c : backbone_channels)
        if (c == 0) throw ContractError("backbone channel width must be positive");
    if (stem_kernel == 0 || stem_stride == 0) throw ContractError("stem kernel and stride must be positive");
    if (image_h == 0 || image_w == 0) throw ContractError("image size must be positive");
}

std::string ModelConfig::canonical() const {
    std::ostringstream os;
    os << "kind=" << to_string(kind) << ";seq_len=" << seq_len << ";feature_dim=" << feature_dim
       << ";heads=" << heads << ";encoder_layers=" << encoder_layers << ";ff_dim=" << ff_dim
       << ";fused_dim=" << fused_dim << ";lstm_hidden=" << lstm_hidden << ";lstm_layers=" << lstm_layers
       << ";backbone_channels=" << join_sizes(backbone_channels) << ";stem_kernel=" << stem_kernel
       << ";stem_stride=" << stem_stride << ";image_h=" << image_h << ";image_w=" << image_w
       << ";predict_speed=" << (predict_speed ? 1 : 0) << ";positional_encoding=" << (positional_encoding ? 1 : 0);
    return os.str();
}

std::uint64_t ModelConfig::hash() const {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char ch : canonical()) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    return h;
}

namespace {

std::size_t parse_size(const std::string& key, const std::string& value) {
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
        v = std::stoull(value, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != value.size() || value.front() == '-')
        throw ParseError("invalid non-negative integer for " + key + ": '" + value + "'", 0);
    return static_cast<std::size_t>(v);
}

bool parse_flag(const std::string& key, const std::string& value) {
    if (value == "1" || value == "true") return true;
    if (value == "0" || value == "false") return false;
    throw ParseError("invalid flag for " + key + ": '" + value + "'", 0);
}

}  // namespace

bool set_model_field(ModelConfig& c, const std::string& key, const std::string& value) {
    if (key == "kind") c.kind = parse_model_kind(value);
    else if (key == "seq_len") c.seq_len = parse_size(key, value);
    else if (key == "feature_dim") c.feature_dim = parse_size(key, value);
    else if (key == "heads") c.heads = parse_size(key, value);
    else if (key == "encoder_layers") c.encoder_layers = parse_size(key, value);
    else if (key == "ff_dim") c.ff_dim = parse_size(key, value);
    else if (key == "fused_dim") c.fused_dim = parse_size(key, value);
    else if (key == "lstm_hidden") c.lstm_hidden = parse_size(key, value);
    else if (key == "lstm_layers") c.lstm_layers = parse_size(key, value);
    else if (key == "stem_kernel") c.stem_kernel = parse_size(key, value);
    else if (key == "stem_stride") c.stem_stride = parse_size(key, value);
    else if (key == "image_h") c.image_h = parse_size(key, value);
    else if (key == "image_w") c.image_w = parse_size(key, value);
    else if (key == "predict_speed") c.predict_speed = parse_flag(key, value);
    else if (key == "positional_encoding") c.positional_encoding = parse_flag(key, value);
    else if (key == "init_seed") c.init_seed = parse_size(key, value);
    else if (key == "backbone_channels") {
        c.backbone_channels.clear();
        std::stringstream ss(value);
        std::string item;
        while (std::getline(ss, item, ',')) c.backbone_channels.push_back(parse_size(key, item));
    } else return false;
    return true;
}

ModelConfig parse_model_config(const std::string& canonical) {
    ModelConfig c;
    std::stringstream ss(canonical);
    std::string item;
    while (std::getline(ss, item, ';')) {
        const auto eq = item.find('=');
        if (eq == std::string::npos) throw ParseError("model config entry without '=': '" + item + "'", 0);
        const std::string key = item.substr(0, eq);
        if (!set_model_field(c, key, item.substr(eq + 1))) throw ParseError("unknown model config key '" + key + "'", 0);
    }
    return c;
}

bool ModelConfig::is_sequence_model() const {
    return kind == ModelKind::cnn_lstm || kind == ModelKind::dual_transformer ||
           kind == ModelKind::simple_transformer;
}

// ---- backbone ----

ResidualBackbone::ResidualBackbone(ParameterSet& params, const std::string& name, const ModelConfig& config,
                                   std::mt19937_64& rng) {
    const auto& ch = config.backbone_channels;
    stem_ = Conv::create(params, name + ".stem", 3, ch[0], config.stem_kernel, config.stem_stride,
                         config.stem_kernel / 2, rng);
    for (std::size_t s = 0; s < ch.size(); ++s) {
        if (s > 0) downsample_.push_back(Conv::create(params, name + ".down" + std::to_string(s), ch[s - 1], ch[s], 3, 2, 1, rng));
        const std::string prefix = name + ".block" + std::to_string(s);
        blocks_.push_back({Conv::create(params, prefix + ".conv1", ch[s], ch[s], 3, 1, 1, rng),
                           Conv::create(params, prefix + ".conv2", ch[s], ch[s], 3, 1, 1, rng)});
    }
    project_ = Linear::create(params, name + ".proj", ch.back(), config.feature_dim, rng);
}

Tensor ResidualBackbone::residual_block(const Tensor& x, const Block& block) {
    return relu(add(x, block.second(relu(block.first(x)))));
}

Tensor ResidualBackbone::operator()(const Tensor& frames) const {
    if (frames.rank() != 4 || frames.dim(1) != 3)
        throw DimensionError("backbone expects [N,3,H,W], got " + shape_str(frames.shape()));
    if (frames.dim(2) < kMinBackboneExtent || frames.dim(3) < kMinBackboneExtent)
        throw DimensionError("backbone input " + shape_str(frames.shape()) + " is smaller than 8x8");
    Tensor x = relu(stem_(frames));
    for (std::size_t s = 0; s < blocks_.size(); ++s) {
        if (s > 0) x = relu(downsample_[s - 1](x));
        x = residual_block(x, blocks_[s]);
    }
    return project_(global_avg_pool(x));
}

// ---- LSTM ----

LstmWeights LstmWeights::create(ParameterSet& params, const std::string& name, std::size_t in, std::size_t hidden,
                                std::mt19937_64& rng) {
    LstmWeights w;
    w.input = params.add(name + ".wx", uniform_inv_sqrt({in, 4 * hidden}, hidden, rng));
    w.recurrent = params.add(name + ".wh", uniform_inv_sqrt({hidden, 4 * hidden}, hidden, rng));
    w.bias = params.add(name + ".b", Tensor::zeros({4 * hidden}));
    return w;
}

std::pair<Tensor, Tensor> lstm_cell(const Tensor& x, const Tensor& h, const Tensor& c, const LstmWeights& w) {
    const std::size_t H = w.hidden();
    if (x.rank() != 2 || x.dim(1) != w.input.dim(0))
        throw DimensionError("lstm input " + shape_str(x.shape()) + " does not match weights " +
                             shape_str(w.input.shape()));
    if (h.shape() != Shape{x.dim(0), H} || c.shape() != Shape{x.dim(0), H})
        throw DimensionError("lstm state shape mismatch");
    Tensor z = add_bias(add(matmul(x, w.input), matmul(h, w.recurrent)), w.bias);
    Tensor i = sigmoid(slice(z, 1, 0, H));
    Tensor f = sigmoid(slice(z, 1, H, 2 * H));
    Tensor g = tanh(slice(z, 1, 2 * H, 3 * H));
    Tensor o = sigmoid(slice(z, 1, 3 * H, 4 * H));
    Tensor c_next = add(mul(f, c), mul(i, g));
    Tensor h_next = mul(o, tanh(c_next));
    return {h_next, c_next};
}

// ---- attention ----

StreamBlock StreamBlock::create(ParameterSet& params, const std::string& name, std::size_t width,
                                std::size_t ff_dim, std::mt19937_64& rng) {
    StreamBlock b;
    b.attention.query = Linear::create(params, name + ".q", width, width, rng);
    b.attention.key = Linear::create(params, name + ".k", width, width, rng);
    b.attention.value = Linear::create(params, name + ".v", width, width, rng);
    b.attention.out = Linear::create(params, name + ".o", width, width, rng);
    b.norm1 = LayerNorm::create(params, name + ".norm1", width);
    b.ff_inner = Linear::create(params, name + ".ff1", width, ff_dim, rng);
    b.ff_outer = Linear::create(params, name + ".ff2", ff_dim, width, rng);
    b.norm2 = LayerNorm::create(params, name + ".norm2", width);
    return b;
}

std::pair<Tensor, std::vector<Tensor>> multi_head_attention(const Tensor& qk_source, const Tensor& value_source,
                                                            const AttentionWeights& w, std::size_t heads) {
    if (qk_source.rank() != 2 || value_source.shape() != qk_source.shape())
        throw DimensionError("attention inputs must share shape [L,F]: " + shape_str(qk_source.shape()) + " vs " +
                             shape_str(value_source.shape()));
    const std::size_t width = qk_source.dim(1);
    if (heads == 0 || width % heads != 0) throw DimensionError("width not divisible by heads");
    const std::size_t dh = width / heads;
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));

    Tensor q = w.query(qk_source);
    Tensor k = w.key(qk_source);
    Tensor v = w.value(value_source);
    std::vector<Tensor> per_head, weights;
    for (std::size_t hd = 0; hd < heads; ++hd) {
        Tensor qh = slice(q, 1, hd * dh, (hd + 1) * dh);
        Tensor kh = slice(k, 1, hd * dh, (hd + 1) * dh);
        Tensor vh = slice(v, 1, hd * dh, (hd + 1) * dh);
        Tensor a = softmax(scale(matmul(qh, transpose(kh)), inv_scale), 1);
        per_head.push_back(matmul(a, vh));
        weights.push_back(a);
    }
    return {w.out(concat(per_head, 1)), weights};
}

namespace {

Tensor finish_stream(const Tensor& input, const Tensor& attended, const StreamBlock& b) {
    Tensor x = b.norm1(add(input, attended));
    return b.norm2(add(x, b.ff_outer(relu(b.ff_inner(x)))));
}

}  // namespace

EncoderLayerOutput cross_modal_encoder_layer(const Tensor& rgb, const std::optional<Tensor>& flow,
                                             const EncoderLayerWeights& w, std::size_t heads) {
    if (rgb.rank() != 2 || rgb.dim(0) < 1) throw DimensionError("encoder expects [L,F], got " + shape_str(rgb.shape()));
    if (flow.has_value() != w.flow.has_value())
        throw ContractError(flow ? "flow input given to a single-stream encoder layer"
                                 : "dual-stream encoder layer requires a flow input");
    EncoderLayerOutput out;
    auto [rgb_att, rgb_weights] = multi_head_attention(rgb, rgb, w.rgb.attention, heads);
    out.rgb = finish_stream(rgb, rgb_att, w.rgb);
    out.attn_rgb = std::move(rgb_weights);
    if (flow) {
        auto [flow_att, flow_weights] = multi_head_attention(rgb, *flow, w.flow->attention, heads);
        out.flow = finish_stream(*flow, flow_att, *w.flow);
        out.attn_flow = std::move(flow_weights);
    }
    return out;
}

Tensor positional_encoding(std::size_t length, std::size_t width) {
    std::vector<double> v(length * width);
    for (std::size_t p = 0; p < length; ++p)
        for (std::size_t i = 0; i < width; ++i) {
            const double freq = std::pow(10000.0, -static_cast<double>(i - i % 2) / static_cast<double>(width));
            const double angle = static_cast<double>(p) * freq;
            v[p * width + i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
        }
    return Tensor::from({length, width}, std::move(v));
}

// ---- DAVE-2 ----

namespace {

struct Dave2Layer {
    std::size_t filters, kernel, stride;
};
constexpr Dave2Layer kDave2Convs[] = {{24, 5, 2}, {36, 5, 2}, {48, 5, 2}, {64, 3, 1}, {64, 3, 1}};
constexpr std::size_t kDave2Dense[] = {100, 50, 10};

}  // namespace

Dave2Shapes dave2_shapes(std::size_t h, std::size_t w) {
    Dave2Shapes out;
    for (const auto& layer : kDave2Convs) {
        if (h < layer.kernel || w < layer.kernel)
            throw DimensionError("input too small for the DAVE-2 conv stack");
        h = conv_out_extent(h, layer.kernel, layer.stride);
        w = conv_out_extent(w, layer.kernel, layer.stride);
        out.conv_outputs.push_back({layer.filters, h, w});
    }
    out.flatten = shape_numel(out.conv_outputs.back());
    return out;
}

// ---- models ----

ModelOutput Model::forward(const Tensor& rgb, const std::optional<Tensor>& flow) const {
    if (rgb.rank() != 4) throw DimensionError("forward expects [L,3,H,W], got " + shape_str(rgb.shape()));
    BatchInput batch;
    batch.rgb_frames = rgb;
    std::vector<std::size_t> window(rgb.dim(0));
    for (std::size_t i = 0; i < window.size(); ++i) window[i] = i;
    batch.rgb_windows.push_back(window);
    if (flow) {
        if (flow->rank() != 4 || flow->dim(0) != rgb.dim(0))
            throw DimensionError("flow sequence " + shape_str(flow->shape()) + " does not match rgb " +
                                 shape_str(rgb.shape()));
        batch.flow_frames = *flow;
        batch.flow_windows.push_back(window);
    }
    return forward_batch(batch).front();
}

std::size_t Model::output_steps() const { return config_.is_sequence_model() ? config_.seq_len : 1; }

bool Model::has_attention() const {
    return config_.kind == ModelKind::dual_transformer || config_.kind == ModelKind::simple_transformer;
}

void Model::check_batch(const BatchInput& batch) const {
    auto check_frames = [](const Tensor& t, const char* what) {
        if (t.rank() != 4 || t.dim(1) != 3)
            throw DimensionError(std::string(what) + " frames must be [N,3,H,W], got " + shape_str(t.shape()));
    };
    check_frames(batch.rgb_frames, "rgb");
    if (batch.rgb_windows.empty()) throw ContractError("empty batch");
    auto check_windows = [&](const std::vector<std::vector<std::size_t>>& windows, std::size_t table,
                             const char* what) {
        for (const auto& win : windows) {
            if (win.empty()) throw DimensionError(std::string(what) + " window is empty");
            if (config_.is_sequence_model() && win.size() != config_.seq_len)
                throw DimensionError(std::string(what) + " window length " + std::to_string(win.size()) +
                                     " != seq_len " + std::to_string(config_.seq_len));
            for (auto idx : win)
                if (idx >= table) throw ContractError(std::string(what) + " window index out of range");
        }
    };
    check_windows(batch.rgb_windows, batch.rgb_frames.dim(0), "rgb");
    if (config_.uses_flow()) {
        if (!batch.flow_frames) throw ContractError("dual_transformer requires flow input");
        check_frames(*batch.flow_frames, "flow");
        if (batch.flow_windows.size() != batch.rgb_windows.size())
            throw ContractError("flow and rgb window counts differ");
        check_windows(batch.flow_windows, batch.flow_frames->dim(0), "flow");
    } else if (batch.flow_frames || !batch.flow_windows.empty()) {
        throw ContractError(to_string(config_.kind) + " does not accept flow input");
    }
}

namespace {

std::vector<std::size_t> last_frames(const BatchInput& batch) {
    std::vector<std::size_t> idx;
    for (const auto& w : batch.rgb_windows) idx.push_back(w.back());
    return idx;
}

std::vector<ModelOutput> split_scalar_rows(const Tensor& column) {
    std::vector<ModelOutput> out;
    for (std::size_t b = 0; b < column.dim(0); ++b) out.push_back({reshape_to_vector(slice(column, 0, b, b + 1)), {}, {}});
    return out;
}

class Dave2 final : public Model {
public:
    explicit Dave2(const ModelConfig& config) : Model(config) {
        std::mt19937_64 rng(config.init_seed);
        const auto shapes = dave2_shapes(config.image_h, config.image_w);
        std::size_t in = 3;
        for (std::size_t i = 0; i < std::size(kDave2Convs); ++i) {
            const auto& layer = kDave2Convs[i];
            convs_.push_back(Conv::create(params_, "conv" + std::to_string(i + 1), in, layer.filters, layer.kernel,
                                          layer.stride, 0, rng));
            in = layer.filters;
        }
        in = shapes.flatten;
        for (std::size_t i = 0; i < std::size(kDave2Dense); ++i) {
            dense_.push_back(Linear::create(params_, "fc" + std::to_string(i + 1), in, kDave2Dense[i], rng));
            in = kDave2Dense[i];
        }
        dense_.push_back(Linear::create(params_, "angle_head", in, 1, rng));
    }

    std::vector<ModelOutput> forward_batch(const BatchInput& batch) const override {
        check_batch(batch);
        const Tensor& frames = batch.rgb_frames;
        if (frames.dim(2) != config_.image_h || frames.dim(3) != config_.image_w)
            throw DimensionError("DAVE-2 expects 3x" + std::to_string(config_.image_h) + "x" +
                                 std::to_string(config_.image_w) + " input, got " + shape_str(frames.shape()));
        const auto idx = last_frames(batch);
        Tensor x = scale(add_scalar(gather_rows(frames, idx), -0.5), 2.0);
        for (const auto& conv : convs_) x = relu(conv(x));
        x = reshape(x, {idx.size(), x.numel() / idx.size()});
        for (std::size_t i = 0; i + 1 < dense_.size(); ++i) x = relu(dense_[i](x));
        return split_scalar_rows(dense_.back()(x));
    }

private:
    std::vector<Conv> convs_;
    std::vector<Linear> dense_;
};

class ResnetRegressor final : public Model {
public:
    explicit ResnetRegressor(const ModelConfig& config) : Model(config) {
        std::mt19937_64 rng(config.init_seed);
        backbone_ = ResidualBackbone(params_, "rgb_backbone", config, rng);
        head_ = Linear::create(params_, "angle_head", config.feature_dim, 1, rng);
    }

    std::vector<ModelOutput> forward_batch(const BatchInput& batch) const override {
        check_batch(batch);
        const auto idx = last_frames(batch);
        return split_scalar_rows(head_(backbone_(gather_rows(batch.rgb_frames, idx))));
    }

private:
    ResidualBackbone backbone_;
    Linear head_;
};

class CnnLstm final : public Model {
public:
    explicit CnnLstm(const ModelConfig& config) : Model(config) {
        std::mt19937_64 rng(config.init_seed);
        backbone_ = ResidualBackbone(params_, "rgb_backbone", config, rng);
        std::size_t in = config.feature_dim;
        for (std::size_t l = 0; l < config.lstm_layers; ++l) {
            layers_.push_back(LstmWeights::create(params_, "lstm" + std::to_string(l), in, config.lstm_hidden, rng));
            in = config.lstm_hidden;
        }
        head_ = Linear::create(params_, "angle_head", config.lstm_hidden, 1, rng);
    }

    std::vector<ModelOutput> forward_batch(const BatchInput& batch) const override {
        check_batch(batch);
        const std::size_t B = batch.size(), L = config_.seq_len, H = config_.lstm_hidden;
        Tensor features = backbone_(batch.rgb_frames);
        std::vector<Tensor> h(layers_.size(), Tensor::zeros({B, H})), c(layers_.size(), Tensor::zeros({B, H}));
        std::vector<Tensor> step_outputs;
        for (std::size_t t = 0; t < L; ++t) {
            std::vector<std::size_t> idx(B);
            for (std::size_t b = 0; b < B; ++b) idx[b] = batch.rgb_windows[b][t];
            Tensor x = gather_rows(features, idx);
            for (std::size_t l = 0; l < layers_.size(); ++l) {
                std::tie(h[l], c[l]) = lstm_cell(x, h[l], c[l], layers_[l]);
                x = h[l];
            }
            step_outputs.push_back(head_(x));  // [B,1]
        }
        Tensor angles = concat(step_outputs, 1);  // [B,L]
        std::vector<ModelOutput> out;
        for (std::size_t b = 0; b < B; ++b) out.push_back({reshape(slice(angles, 0, b, b + 1), {L}), {}, {}});
        return out;
    }

private:
    ResidualBackbone backbone_;
    std::vector<LstmWeights> layers_;
    Linear head_;
};

class Transformer final : public Model {
public:
    explicit Transformer(const ModelConfig& config) : Model(config), dual_(config.uses_flow()) {
        std::mt19937_64 rng(config.init_seed);
        const std::size_t F = config.feature_dim;
        rgb_backbone_ = ResidualBackbone(params_, "rgb_backbone", config, rng);
        if (dual_) flow_backbone_ = ResidualBackbone(params_, "flow_backbone", config, rng);
        for (std::size_t l = 0; l < config.encoder_layers; ++l) {
            const std::string prefix = "encoder." + std::to_string(l);
            EncoderLayerWeights w{StreamBlock::create(params_, prefix + ".rgb", F, config.ff_dim, rng), std::nullopt};
            if (dual_) w.flow = StreamBlock::create(params_, prefix + ".flow", F, config.ff_dim, rng);
            encoder_.push_back(std::move(w));
        }
        fuse_ = Linear::create(params_, "fuse", dual_ ? 2 * F : F, F, rng);
        reduce_ = Linear::create(params_, "reduce", F, config.fused_dim, rng);
        angle_head_ = Linear::create(params_, "angle_head", config.fused_dim, 1, rng);
        if (config.has_speed_head()) speed_head_ = Linear::create(params_, "speed_head", config.fused_dim, 1, rng);
        if (config.positional_encoding) pe_ = positional_encoding(config.seq_len, F);
    }

    std::vector<ModelOutput> forward_batch(const BatchInput& batch) const override {
        check_batch(batch);
        Tensor rgb_features = rgb_backbone_(batch.rgb_frames);
        std::optional<Tensor> flow_features;
        if (dual_) flow_features = flow_backbone_(*batch.flow_frames);

        std::vector<ModelOutput> out;
        for (std::size_t b = 0; b < batch.size(); ++b) {
            Tensor rgb = gather_rows(rgb_features, batch.rgb_windows[b]);
            std::optional<Tensor> flow;
            if (dual_) flow = gather_rows(*flow_features, batch.flow_windows[b]);
            if (pe_) {
                rgb = add(rgb, *pe_);
                if (flow) flow = add(*flow, *pe_);
            }
            ModelOutput result;
            for (const auto& layer : encoder_) {
                auto enc = cross_modal_encoder_layer(rgb, flow, layer, config_.heads);
                rgb = enc.rgb;
                flow = enc.flow;
                result.attention.push_back({std::move(enc.attn_rgb), std::move(enc.attn_flow)});
            }
            Tensor fused = flow ? concat({rgb, *flow}, 1) : rgb;
            Tensor reduced = relu(reduce_(relu(fuse_(fused))));
            result.angle = reshape_to_vector(angle_head_(reduced));
            if (speed_head_) result.speed = reshape_to_vector(speed_head_->operator()(reduced));
            out.push_back(std::move(result));
        }
        return out;
    }

private:
    bool dual_;
    ResidualBackbone rgb_backbone_, flow_backbone_;
    std::vector<EncoderLayerWeights> encoder_;
    Linear fuse_, reduce_, angle_head_;
    std::optional<Linear> speed_head_;
    std::optional<Tensor> pe_;
};

}  // namespace

std::unique_ptr<Model> make_model(const ModelConfig& config) {
    config.validate();
    switch (config.kind) {
        case ModelKind::dave2: return std::make_unique<Dave2>(config);
        case ModelKind::resnet_reg: return std::make_unique<ResnetRegressor>(config);
        case ModelKind::cnn_lstm: return std::make_unique<CnnLstm>(config);
        case ModelKind::dual_transformer:
        case ModelKind::simple_transformer: return std::make_unique<Transformer>(config);
    }
    throw ContractError("unhandled model kind");
}

}  // namespace flowsteer
