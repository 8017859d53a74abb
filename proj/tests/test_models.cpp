#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "flowsteer/checkpoint.hpp"
#include "flowsteer/errors.hpp"
#include "flowsteer/models.hpp"
#include "model_fixtures.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace flowsteer;
using fixtures::miniature;
using fixtures::random_frames;

namespace {

std::size_t valid_extent(std::size_t n, std::size_t k, std::size_t s) { return (n - k) / s + 1; }

Tensor random_tensor(const Shape& shape, std::mt19937_64& rng) {
    return Tensor::from(shape, oracle::random_values(shape_numel(shape), rng));
}

// Weighted sum of every model output, so the gradient check sees all heads.
Tensor probe_loss(const ModelOutput& out) {
    Tensor loss = sum(mul(out.angle, Tensor::from(out.angle.shape(), std::vector<double>(out.angle.numel(), 0.7))));
    if (out.speed) loss = add(loss, scale(sum(*out.speed), -0.4));
    return loss;
}

void check_attention_rows(const Tensor& a) {
    REQUIRE(a.rank() == 2);
    for (std::size_t r = 0; r < a.dim(0); ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < a.dim(1); ++c) {
            CHECK(a.at({r, c}) >= 0.0);
            s += a.at({r, c});
        }
        CHECK(std::abs(s - 1.0) < 1e-9);
    }
}

}  // namespace

TEST_CASE("model config invariants") {
    ModelConfig c = miniature(ModelKind::dual_transformer);
    CHECK_NOTHROW(c.validate());
    c.heads = 3;
    CHECK_THROWS_AS(c.validate(), ContractError);
    c = miniature(ModelKind::simple_transformer);
    c.predict_speed = true;
    CHECK_THROWS_AS(make_model(c), ContractError);
    c.seq_len = 0;
    c.predict_speed = false;
    CHECK_THROWS_AS(c.validate(), ContractError);

    ModelConfig d = miniature(ModelKind::cnn_lstm);
    CHECK(parse_model_config(d.canonical()).canonical() == d.canonical());
    CHECK(parse_model_config(d.canonical()).hash() == d.hash());
    ModelConfig e = d;
    e.lstm_hidden = 5;
    CHECK(e.hash() != d.hash());
    CHECK_THROWS_AS(parse_model_config("kind=dave2;bogus=1"), ParseError);
}

TEST_CASE("dave2 conv stack shapes follow valid-conv arithmetic") {
    // Independent arithmetic: floor((n-k)/s)+1 through 5x5/2 x3 then 3x3/1 x2.
    auto oracle_flatten = [](std::size_t h, std::size_t w) {
        const std::size_t ks[] = {5, 5, 5, 3, 3}, ss[] = {2, 2, 2, 1, 1};
        for (int i = 0; i < 5; ++i) {
            h = valid_extent(h, ks[i], ss[i]);
            w = valid_extent(w, ks[i], ss[i]);
        }
        return std::pair{64 * h * w, std::pair{h, w}};
    };
    const auto s120 = dave2_shapes(120, 320);
    const auto [flat120, hw120] = oracle_flatten(120, 320);
    CHECK(s120.flatten == flat120);
    CHECK(s120.conv_outputs.back() == Shape{64, hw120.first, hw120.second});
    CHECK(s120.conv_outputs.back() == Shape{64, 8, 33});
    CHECK(s120.flatten == 16896);

    // The classic 66x200 input is the one that yields 64 x 1 x 18 = 1152.
    const auto s66 = dave2_shapes(66, 200);
    CHECK(s66.conv_outputs.back() == Shape{64, 1, 18});
    CHECK(s66.flatten == 1152);
    CHECK(s66.flatten == oracle_flatten(66, 200).first);
}

TEST_CASE("dave2 forward") {
    ModelConfig c;
    c.kind = ModelKind::dave2;
    c.image_h = 120;
    c.image_w = 320;
    c.predict_speed = false;
    auto model = make_model(c);
    std::mt19937_64 rng(3);
    Tensor frames = random_frames(3, 120, 320, rng);

    SUBCASE("shape contract") {
        auto single = model->forward(slice(frames, 0, 0, 1));
        CHECK(single.angle.shape() == Shape{1});
        BatchInput batch{frames, std::nullopt, {{0}, {1}, {2}}, {}};
        auto outs = model->forward_batch(batch);
        REQUIRE(outs.size() == 3);
        for (auto& o : outs) CHECK(o.angle.shape() == Shape{1});
        CHECK(std::isfinite(outs[0].angle.item()));
    }
    SUBCASE("zero weights give zero output") {
        fixtures::fill_params(*model, [](const std::string&) { return true; }, 0.0);
        CHECK(model->forward(slice(frames, 0, 1, 2)).angle.item() == 0.0);
    }
    SUBCASE("wrong input size") {
        CHECK_THROWS_AS(model->forward(random_frames(1, 66, 200, rng)), DimensionError);
    }
}

TEST_CASE("residual backbone") {
    ModelConfig c = miniature(ModelKind::resnet_reg);
    c.backbone_channels = {4, 6};
    c.stem_kernel = 5;
    c.stem_stride = 2;
    ParameterSet params;
    std::mt19937_64 rng(5);
    ResidualBackbone backbone(params, "bb", c, rng);

    for (auto [h, w] : {std::pair{8, 8}, std::pair{12, 20}, std::pair{32, 32}, std::pair{33, 17}}) {
        Tensor out = backbone(random_frames(2, h, w, rng));
        CHECK(out.shape() == Shape{2, c.feature_dim});
    }
    CHECK_THROWS_AS(backbone(random_frames(1, 7, 16, rng)), DimensionError);

    SUBCASE("zero final linear gives zero features") {
        for (auto& [name, t] : params.entries())
            if (fixtures::starts_with(name, "bb.proj")) {
                Tensor p = t;
                for (auto& x : p.mutable_data()) x = 0.0;
            }
        Tensor features = backbone(random_frames(1, 16, 16, rng));
        for (double v : features.data()) CHECK(v == 0.0);
    }
    SUBCASE("identity skip with zero conv weights") {
        ParameterSet local;
        ResidualBackbone::Block block{Conv::create(local, "a", 3, 3, 3, 1, 1, rng),
                                      Conv::create(local, "b", 3, 3, 3, 1, 1, rng)};
        for (auto& [name, t] : local.entries()) {
            Tensor p = t;
            for (auto& x : p.mutable_data()) x = 0.0;
        }
        Tensor x = Tensor::from({3, 5, 5}, oracle::random_values(75, rng));
        Tensor y = ResidualBackbone::residual_block(x, block);
        for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y[i] == std::max(0.0, x[i]));
    }
}

TEST_CASE("lstm cell") {
    std::mt19937_64 rng(11);
    const std::size_t in = 5, H = 3;
    ParameterSet params;
    LstmWeights w = LstmWeights::create(params, "l", in, H, rng);

    SUBCASE("zero weights, zero state, zero input") {
        for (auto& [name, t] : params.entries()) {
            Tensor p = t;
            for (auto& x : p.mutable_data()) x = 0.0;
        }
        auto [h, c] = lstm_cell(Tensor::zeros({1, in}), Tensor::zeros({1, H}), Tensor::zeros({1, H}), w);
        for (double v : h.data()) CHECK(v == 0.0);
        for (double v : c.data()) CHECK(v == 0.0);
    }
    SUBCASE("memory carry with f=1, i=0") {
        for (auto& x : w.input.mutable_data()) x = 0.0;
        for (auto& x : w.recurrent.mutable_data()) x = 0.0;
        auto b = w.bias.mutable_data();
        for (std::size_t u = 0; u < H; ++u) {
            b[u] = -60.0;      // i
            b[H + u] = 60.0;   // f
        }
        Tensor c0 = Tensor::from({1, H}, {0.3, -1.2, 2.5});
        auto [h, c] = lstm_cell(random_tensor({1, in}, rng), random_tensor({1, H}, rng), c0, w);
        for (std::size_t u = 0; u < H; ++u) CHECK(std::abs(c[u] - c0[u]) < 1e-12);
    }
    SUBCASE("random step matches equation-by-equation oracle") {
        for (int trial = 0; trial < 5; ++trial) {
            for (auto& x : w.bias.mutable_data()) x = std::uniform_real_distribution<double>(-1, 1)(rng);
            Tensor x = random_tensor({1, in}, rng), h0 = random_tensor({1, H}, rng), c0 = random_tensor({1, H}, rng);
            auto [h, c] = lstm_cell(x, h0, c0, w);
            auto ref = oracle::lstm_step(x.values(), h0.values(), c0.values(), w.input.values(), w.recurrent.values(),
                                         w.bias.values());
            for (std::size_t u = 0; u < H; ++u) {
                CHECK(std::abs(h[u] - ref.h[u]) < 1e-12);
                CHECK(std::abs(c[u] - ref.c[u]) < 1e-12);
            }
        }
    }
    CHECK_THROWS_AS(lstm_cell(Tensor::zeros({1, in + 1}), Tensor::zeros({1, H}), Tensor::zeros({1, H}), w),
                    DimensionError);
}

TEST_CASE("cnn-lstm") {
    ModelConfig c = miniature(ModelKind::cnn_lstm, 4);
    auto model = make_model(c);
    std::mt19937_64 rng(13);
    Tensor seq = random_frames(4, 8, 8, rng);
    auto out = model->forward(seq);
    CHECK(out.angle.shape() == Shape{4});

    SUBCASE("per-step causality") {
        for (std::size_t t = 0; t < 4; ++t) {
            std::vector<double> v = seq.values();
            const std::size_t frame = 3 * 8 * 8;
            for (std::size_t i = t * frame; i < (t + 1) * frame; ++i) v[i] = 1.0 - v[i];
            auto changed = model->forward(Tensor::from(seq.shape(), v));
            for (std::size_t s = 0; s < t; ++s) CHECK(changed.angle[s] == out.angle[s]);
            for (std::size_t s = t; s < 4; ++s) CHECK(changed.angle[s] != out.angle[s]);
        }
    }
    SUBCASE("zero head weights") {
        fixtures::fill_params(*model, [](const std::string& n) { return fixtures::starts_with(n, "angle_head"); }, 0.0);
        const auto zeroed = model->forward(seq);
        for (double v : zeroed.angle.data()) CHECK(v == 0.0);
    }
    CHECK_THROWS_AS(model->forward(random_frames(3, 8, 8, rng)), DimensionError);
}

TEST_CASE("cross-modal encoder layer") {
    std::mt19937_64 rng(17);
    const std::size_t F = 8, heads = 4;
    ParameterSet params;
    EncoderLayerWeights w{StreamBlock::create(params, "rgb", F, 16, rng), StreamBlock::create(params, "flow", F, 16, rng)};

    SUBCASE("L=1 gives [[1]] and flow' depends on the flow value alone") {
        Tensor rgb = random_tensor({1, F}, rng), flow = random_tensor({1, F}, rng);
        auto out = cross_modal_encoder_layer(rgb, flow, w, heads);
        REQUIRE(out.attn_rgb.size() == heads);
        REQUIRE(out.attn_flow.size() == heads);
        for (std::size_t h = 0; h < heads; ++h) {
            CHECK(out.attn_rgb[h].shape() == Shape{1, 1});
            CHECK(out.attn_rgb[h].item() == 1.0);
            CHECK(out.attn_flow[h].item() == 1.0);
        }
        const StreamBlock& b = *w.flow;
        Tensor attended = b.attention.out(b.attention.value(flow));
        Tensor x = b.norm1(add(flow, attended));
        Tensor expect = b.norm2(add(x, b.ff_outer(relu(b.ff_inner(x)))));
        for (std::size_t i = 0; i < F; ++i) CHECK(std::abs(out.flow->data()[i] - expect[i]) < 1e-12);
    }
    SUBCASE("identical rgb positions give uniform attention in both branches") {
        const std::size_t L = 4;
        Tensor row = random_tensor({1, F}, rng);
        Tensor rgb = concat({row, row, row, row}, 0);
        auto out = cross_modal_encoder_layer(rgb, random_tensor({L, F}, rng), w, heads);
        for (std::size_t h = 0; h < heads; ++h)
            for (const Tensor* a : {&out.attn_rgb[h], &out.attn_flow[h]})
                for (double v : a->data()) CHECK(std::abs(v - 0.25) < 1e-12);
    }
    SUBCASE("flow attention is invariant to the flow input") {
        const std::size_t L = 5;
        Tensor rgb = random_tensor({L, F}, rng);
        auto a = cross_modal_encoder_layer(rgb, random_tensor({L, F}, rng), w, heads);
        auto b = cross_modal_encoder_layer(rgb, random_tensor({L, F}, rng), w, heads);
        for (std::size_t h = 0; h < heads; ++h) {
            CHECK(a.attn_flow[h].values() == b.attn_flow[h].values());
            CHECK(a.attn_rgb[h].values() == b.attn_rgb[h].values());
            check_attention_rows(a.attn_rgb[h]);
            check_attention_rows(a.attn_flow[h]);
        }
        CHECK(a.flow->values() != b.flow->values());
    }
    SUBCASE("gradient check through one full dual-branch layer") {
        const std::size_t L = 3;
        Tensor rgb = random_tensor({L, F}, rng), flow = random_tensor({L, F}, rng);
        rgb.set_requires_grad(true);
        flow.set_requires_grad(true);
        Tensor mix_r = random_tensor({L, F}, rng), mix_f = random_tensor({L, F}, rng);
        auto f = [&] {
            auto out = cross_modal_encoder_layer(rgb, flow, w, heads);
            return add(sum(mul(out.rgb, mix_r)), sum(mul(*out.flow, mix_f)));
        };
        std::vector<Tensor> all = params.tensors();
        all.push_back(rgb);
        all.push_back(flow);
        CHECK(grad_check(f, all) < 1e-4);
    }
    CHECK_THROWS_AS(cross_modal_encoder_layer(random_tensor({2, F}, rng), std::nullopt, w, heads), ContractError);
}

TEST_CASE("positional encoding") {
    Tensor pe = positional_encoding(3, 4);
    CHECK(pe.at({0, 0}) == 0.0);
    CHECK(pe.at({0, 1}) == 1.0);
    CHECK(std::abs(pe.at({2, 0}) - std::sin(2.0)) < 1e-15);
    CHECK(std::abs(pe.at({2, 3}) - std::cos(2.0 / 100.0)) < 1e-15);
}

TEST_CASE("dual and simple transformers") {
    std::mt19937_64 rng(19);
    const std::size_t L = 3;
    auto dual = make_model(miniature(ModelKind::dual_transformer, L));
    ModelConfig sc = miniature(ModelKind::simple_transformer, L);
    auto simple = make_model(sc);
    Tensor rgb = random_frames(L, 8, 8, rng), flow = random_frames(L, 8, 8, rng);

    SUBCASE("shape contract") {
        auto out = dual->forward(rgb, flow);
        CHECK(out.angle.shape() == Shape{L});
        REQUIRE(out.speed);
        CHECK(out.speed->shape() == Shape{L});
        REQUIRE(out.attention.size() == 2);
        for (const auto& layer : out.attention) {
            REQUIRE(layer.rgb.size() == 4);
            REQUIRE(layer.flow.size() == 4);
            for (const auto& a : layer.rgb) check_attention_rows(a);
            for (const auto& a : layer.flow) check_attention_rows(a);
            CHECK(layer.rgb[0].shape() == Shape{L, L});
        }
        auto s = simple->forward(rgb);
        CHECK(s.angle.shape() == Shape{L});
        CHECK_FALSE(s.speed);
        CHECK(s.attention.size() == 2);
        CHECK(s.attention[0].flow.empty());
    }
    SUBCASE("flow input rules") {
        CHECK_THROWS_AS(simple->forward(rgb, flow), ContractError);
        CHECK_THROWS_AS(dual->forward(rgb), ContractError);
    }
    SUBCASE("zero heads give zero outputs") {
        auto heads = [](const std::string& n) {
            return fixtures::starts_with(n, "angle_head") || fixtures::starts_with(n, "speed_head");
        };
        fixtures::fill_params(*dual, heads, 0.0);
        fixtures::fill_params(*simple, heads, 0.0);
        auto out = dual->forward(rgb, flow);
        for (double v : out.angle.data()) CHECK(v == 0.0);
        for (double v : out.speed->data()) CHECK(v == 0.0);
        const auto simple_out = simple->forward(rgb);
        for (double v : simple_out.angle.data()) CHECK(v == 0.0);
    }
    SUBCASE("simple model is strictly smaller") {
        CHECK(simple->parameters().scalar_count() < dual->parameters().scalar_count());
    }
    SUBCASE("weight surgery makes dual angle equal simple angle") {
        const std::size_t F = sc.feature_dim;
        for (const auto& [name, t] : simple->parameters().entries()) {
            Tensor dst = t;
            Tensor src = dual->parameters().get(name);
            auto d = dst.mutable_data();
            if (name == "fuse.w") {
                // simple fuse is [F,F]; dual fuse is [2F,F] with the rgb half first
                std::copy(src.data().begin(), src.data().begin() + F * F, d.begin());
            } else {
                REQUIRE(src.shape() == dst.shape());
                std::copy(src.data().begin(), src.data().end(), d.begin());
            }
        }
        Tensor fuse = dual->parameters().get("fuse.w");
        auto fw = fuse.mutable_data();
        std::fill(fw.begin() + F * F, fw.end(), 0.0);

        auto a = dual->forward(rgb, flow).angle;
        auto b = simple->forward(rgb).angle;
        for (std::size_t i = 0; i < L; ++i) CHECK(std::abs(a[i] - b[i]) < 1e-9);
    }
}

TEST_CASE("all five kinds pass gradient checks on miniature configs") {
    for (auto kind : {ModelKind::dave2, ModelKind::resnet_reg, ModelKind::cnn_lstm, ModelKind::dual_transformer,
                      ModelKind::simple_transformer}) {
        CAPTURE(to_string(kind));
        ModelConfig c = miniature(kind);
        auto model = make_model(c);
        std::mt19937_64 rng(23);
        const std::size_t n = c.is_sequence_model() ? c.seq_len : 1;
        Tensor rgb = random_frames(n, c.image_h, c.image_w, rng);
        std::optional<Tensor> flow;
        if (c.uses_flow()) flow = random_frames(n, c.image_h, c.image_w, rng);
        auto f = [&] { return probe_loss(model->forward(rgb, flow)); };
        std::vector<Tensor> params = model->parameters().tensors();
        // DAVE-2 has ~140k weights at its smallest legal input; probe a spread
        // of coordinates per tensor instead of every one.
        const std::size_t per_tensor = kind == ModelKind::dave2 ? 6 : 0;
        CHECK(grad_check(f, params, 1e-6, per_tensor) < 1e-4);
    }
}

TEST_CASE("batch order does not leak between samples") {
    for (auto kind : {ModelKind::resnet_reg, ModelKind::cnn_lstm, ModelKind::dual_transformer}) {
        CAPTURE(to_string(kind));
        ModelConfig c = miniature(kind, 3);
        auto model = make_model(c);
        std::mt19937_64 rng(29);
        // five distinct frames; windows overlap
        Tensor table = random_frames(5, 8, 8, rng);
        std::vector<std::vector<std::size_t>> windows{{0, 1, 2}, {1, 2, 3}, {2, 3, 4}};
        BatchInput forward_order{table, std::nullopt, windows, {}};
        BatchInput reversed{table, std::nullopt, {windows[2], windows[1], windows[0]}, {}};
        if (c.uses_flow()) {
            Tensor flows = random_frames(5, 8, 8, rng);
            forward_order.flow_frames = reversed.flow_frames = flows;
            forward_order.flow_windows = windows;
            reversed.flow_windows = reversed.rgb_windows;
        }
        auto a = model->forward_batch(forward_order);
        auto b = model->forward_batch(reversed);
        for (std::size_t i = 0; i < 3; ++i) {
            CHECK(a[i].angle.values() == b[2 - i].angle.values());
            if (a[i].speed) CHECK(a[i].speed->values() == b[2 - i].speed->values());
        }
        // a window evaluated alone agrees with its batched result
        BatchInput alone{table, forward_order.flow_frames, {windows[1]}, {}};
        if (c.uses_flow()) alone.flow_windows = {windows[1]};
        auto single = model->forward_batch(alone);
        for (std::size_t s = 0; s < a[1].angle.numel(); ++s)
            CHECK(std::abs(single[0].angle[s] - a[1].angle[s]) < 1e-12);
    }
}

TEST_CASE("forward is deterministic for a fixed seed") {
    ModelConfig c = miniature(ModelKind::dual_transformer);
    auto m1 = make_model(c), m2 = make_model(c);
    std::mt19937_64 rng(31);
    Tensor rgb = random_frames(2, 8, 8, rng), flow = random_frames(2, 8, 8, rng);
    CHECK(m1->forward(rgb, flow).angle.values() == m2->forward(rgb, flow).angle.values());
    CHECK(m1->forward(rgb, flow).angle.values() == m1->forward(rgb, flow).angle.values());
}

TEST_CASE("checkpoint round trip and mismatch detection") {
    const auto dir = test_util::scratch_dir("checkpoint");
    ModelConfig c = miniature(ModelKind::cnn_lstm);
    auto model = make_model(c);
    const auto path = dir / "m.ckpt";
    save_checkpoint(path, *model);

    ModelConfig other_seed = c;
    other_seed.init_seed = 99;
    auto restored = make_model(other_seed);
    CHECK(restored->parameters().entries()[0].second.values() != model->parameters().entries()[0].second.values());
    load_checkpoint(path, *restored);
    for (std::size_t i = 0; i < model->parameters().entries().size(); ++i)
        CHECK(restored->parameters().entries()[i].second.values() == model->parameters().entries()[i].second.values());

    CHECK(read_checkpoint_config(path).canonical() == c.canonical());

    ModelConfig wider = c;
    wider.lstm_hidden = 6;
    auto mismatched = make_model(wider);
    CHECK_THROWS_AS(load_checkpoint(path, *mismatched), CheckpointMismatch);

    auto bytes = test_util::read_bytes(path);
    {
        std::ofstream f(dir / "cut.ckpt", std::ios::binary);
        f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size() - 5));
    }
    CHECK_THROWS_AS(load_checkpoint(dir / "cut.ckpt", *restored), ParseError);
    CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt", *restored), IoError);
}
