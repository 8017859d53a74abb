#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "flowsteer/nn.hpp"
#include "flowsteer/tensor.hpp"

namespace flowsteer {

enum class ModelKind { dave2, resnet_reg, cnn_lstm, dual_transformer, simple_transformer };

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& text);

struct ModelConfig {
    ModelKind kind = ModelKind::dual_transformer;
    std::size_t seq_len = 5;
    std::size_t feature_dim = 512;
    std::size_t heads = 4;
    std::size_t encoder_layers = 2;
    std::size_t ff_dim = 2048;
    std::size_t fused_dim = 128;
    std::size_t lstm_hidden = 256;
    std::size_t lstm_layers = 2;
    std::vector<std::size_t> backbone_channels{64, 128, 256, 512};
    std::size_t stem_kernel = 7;
    std::size_t stem_stride = 2;
    std::size_t image_h = 224;
    std::size_t image_w = 224;
    bool predict_speed = true;
    bool positional_encoding = true;
    std::uint64_t init_seed = 0;

    /// Throws ContractError on inconsistent settings.
    void validate() const;
    /// Stable text form of every architecture-relevant field.
    std::string canonical() const;
    /// FNV-1a over canonical(); stored in checkpoints.
    std::uint64_t hash() const;
    bool is_sequence_model() const;
    bool uses_flow() const { return kind == ModelKind::dual_transformer; }
    bool has_speed_head() const { return kind == ModelKind::dual_transformer && predict_speed; }
};

/// Attention weights for one encoder layer: one [L,L] matrix per head, rows
/// are query positions. `flow` is empty for single-stream models.
struct AttentionMaps {
    std::vector<Tensor> rgb;
    std::vector<Tensor> flow;
};

struct ModelOutput {
    Tensor angle;                 // [L] for sequence models, [1] otherwise
    std::optional<Tensor> speed;  // [L], present iff the model has a speed head
    std::vector<AttentionMaps> attention;
};

/// A minibatch expressed as a table of distinct frames plus per-sample windows
/// into it, so frames shared by overlapping windows run through a backbone once.
struct BatchInput {
    Tensor rgb_frames;                  // [U,3,H,W]
    std::optional<Tensor> flow_frames;  // [V,3,H,W] HSV-encoded flow images
    std::vector<std::vector<std::size_t>> rgb_windows;
    std::vector<std::vector<std::size_t>> flow_windows;

    std::size_t size() const { return rgb_windows.size(); }
};

class Model {
public:
    explicit Model(ModelConfig config) : config_(std::move(config)) {}
    virtual ~Model() = default;
    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;

    const ModelConfig& config() const { return config_; }
    ParameterSet& parameters() { return params_; }
    const ParameterSet& parameters() const { return params_; }

    virtual std::vector<ModelOutput> forward_batch(const BatchInput& batch) const = 0;
    /// Single sequence: rgb is [L,3,H,W], flow (dual model only) is [L,3,H,W].
    ModelOutput forward(const Tensor& rgb, const std::optional<Tensor>& flow = std::nullopt) const;

    /// Length of ModelOutput::angle.
    std::size_t output_steps() const;
    bool has_attention() const;

protected:
    void check_batch(const BatchInput& batch) const;

    ModelConfig config_;
    ParameterSet params_;
};

std::unique_ptr<Model> make_model(const ModelConfig& config);

/// Sets one field from its text form (keys as in canonical()). Returns false
/// for an unknown key; throws ParseError for a malformed value.
bool set_model_field(ModelConfig& config, const std::string& key, const std::string& value);
/// Inverse of ModelConfig::canonical().
ModelConfig parse_model_config(const std::string& canonical);

// ---- building blocks, exposed for direct testing ----

/// Stem conv, one residual block per stage with stride-2 downsampling between
/// stages, global average pooling, and a linear map to feature_dim.
class ResidualBackbone {
public:
    ResidualBackbone() = default;
    ResidualBackbone(ParameterSet& params, const std::string& name, const ModelConfig& config,
                     std::mt19937_64& rng);

    /// [N,3,H,W] -> [N,feature_dim]
    Tensor operator()(const Tensor& frames) const;

    struct Block {
        Conv first, second;
    };
    /// relu(x + conv2(relu(conv1(x))))
    static Tensor residual_block(const Tensor& x, const Block& block);

private:
    Conv stem_;
    std::vector<Conv> downsample_;
    std::vector<Block> blocks_;
    Linear project_;
};

struct LstmWeights {
    Tensor input;      // [in, 4H], gate blocks ordered i, f, g, o
    Tensor recurrent;  // [H, 4H]
    Tensor bias;       // [4H]

    static LstmWeights create(ParameterSet& params, const std::string& name, std::size_t in, std::size_t hidden,
                              std::mt19937_64& rng);
    std::size_t hidden() const { return recurrent.dim(0); }
};

/// One step on row vectors: x [1,in], h and c [1,H]. Returns (h', c').
std::pair<Tensor, Tensor> lstm_cell(const Tensor& x, const Tensor& h, const Tensor& c, const LstmWeights& w);

struct AttentionWeights {
    Linear query, key, value, out;
};

/// Post-norm encoder block for one stream.
struct StreamBlock {
    AttentionWeights attention;
    LayerNorm norm1;
    Linear ff_inner, ff_outer;
    LayerNorm norm2;

    static StreamBlock create(ParameterSet& params, const std::string& name, std::size_t width, std::size_t ff_dim,
                              std::mt19937_64& rng);
};

struct EncoderLayerWeights {
    StreamBlock rgb;
    std::optional<StreamBlock> flow;  // absent in the single-stream encoder
};

struct EncoderLayerOutput {
    Tensor rgb;
    std::optional<Tensor> flow;
    std::vector<Tensor> attn_rgb;   // per head [L,L]
    std::vector<Tensor> attn_flow;  // per head [L,L]
};

/// Multi-head attention; returns the projected output and per-head weights.
/// Queries and keys come from `qk_source`, values from `value_source`.
std::pair<Tensor, std::vector<Tensor>> multi_head_attention(const Tensor& qk_source, const Tensor& value_source,
                                                            const AttentionWeights& w, std::size_t heads);

/// RGB stream: self-attention. Flow stream: queries and keys projected from the
/// RGB input, values from the flow input, so the flow attention weights depend
/// on RGB alone. Both streams then apply residual + norm + feedforward +
/// residual + norm.
EncoderLayerOutput cross_modal_encoder_layer(const Tensor& rgb, const std::optional<Tensor>& flow,
                                             const EncoderLayerWeights& w, std::size_t heads);

/// Sinusoidal table [L, width]: sin on even columns, cos on odd.
Tensor positional_encoding(std::size_t length, std::size_t width);

/// Layer-by-layer output shapes of the DAVE-2 conv stack for a 3 x h x w input:
/// (channels, height, width) after each conv, then the flatten length.
struct Dave2Shapes {
    std::vector<Shape> conv_outputs;
    std::size_t flatten = 0;
};
Dave2Shapes dave2_shapes(std::size_t h, std::size_t w);

}  // namespace flowsteer
