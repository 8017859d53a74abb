#include "run_config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "flowsteer/errors.hpp"

namespace flowsteer::cli {
namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

double parse_real(const std::string& key, const std::string& value) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(value, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != value.size()) throw ParseError("invalid number for " + key + ": '" + value + "'", 0);
    return v;
}

std::size_t parse_count(const std::string& key, const std::string& value) {
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

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "1" || value == "true") return true;
    if (value == "0" || value == "false") return false;
    throw ParseError("invalid flag for " + key + ": '" + value + "'", 0);
}

fs::path resolve(const fs::path& base, const std::string& value) {
    fs::path p(value);
    return p.is_absolute() || base.empty() ? p : base / p;
}

std::string real(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string sizes(const std::vector<std::size_t>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
    return out;
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value, const fs::path& base) {
    if (key == "model") {
        model.kind = parse_model_kind(value);
        return;
    }
    if (key == "kind") throw ParseError("unknown key 'kind' (use 'model')", 0);
    if (set_model_field(model, key, value)) {
        if (key == "predict_speed") predict_speed_set = true;
        return;
    }
    // training
    if (key == "lr0") train.lr0 = parse_real(key, value);
    else if (key == "beta1") train.beta1 = parse_real(key, value);
    else if (key == "beta2") train.beta2 = parse_real(key, value);
    else if (key == "adam_eps") train.adam_eps = parse_real(key, value);
    else if (key == "decay_epochs") {
        train.decay_epochs.clear();
        std::stringstream ss(value);
        for (std::string item; std::getline(ss, item, ',');) train.decay_epochs.push_back(parse_count(key, trim(item)));
    } else if (key == "decay_factor") train.decay_factor = parse_real(key, value);
    else if (key == "epochs") train.epochs = parse_count(key, value);
    else if (key == "batch_size") train.batch_size = parse_count(key, value);
    else if (key == "speed_loss_weight") train.speed_loss_weight = parse_real(key, value);
    else if (key == "smooth_l1_beta") train.smooth_l1_beta = parse_real(key, value);
    else if (key == "seed") train.seed = parse_count(key, value);
    else if (key == "checkpoint_every") train.checkpoint_every = parse_count(key, value);
    else if (key == "augment") train.augment = parse_bool(key, value);
    // augmentation
    else if (key == "aug_brightness_min") augment.brightness_min = parse_real(key, value);
    else if (key == "aug_brightness_max") augment.brightness_max = parse_real(key, value);
    else if (key == "aug_shadow_prob") augment.shadow_prob = parse_real(key, value);
    else if (key == "aug_shadow_dim") augment.shadow_dim = parse_real(key, value);
    else if (key == "aug_translate_px") augment.translate_px = static_cast<int>(parse_count(key, value));
    else if (key == "aug_rotate_deg") augment.rotate_deg = parse_real(key, value);
    else if (key == "aug_blur_kernel") augment.blur_kernel = static_cast<int>(parse_count(key, value));
    else if (key == "aug_blur_prob") augment.blur_prob = parse_real(key, value);
    else if (key == "aug_seed") augment.seed = parse_count(key, value);
    else if (key == "aug_adjust_label") augment.adjust_label_on_translate = parse_bool(key, value);
    else if (key == "aug_label_per_px") augment.label_per_px = parse_real(key, value);
    // data
    else if (key == "data") data = resolve(base, value);
    else if (key == "val_data") val_data = value.empty() ? std::nullopt : std::optional(resolve(base, value));
    else if (key == "test_data") test_data = value.empty() ? std::nullopt : std::optional(resolve(base, value));
    else if (key == "train_frac") train_frac = parse_real(key, value);
    else if (key == "camera") camera = value;
    else if (key == "stride") stride = parse_count(key, value);
    else if (key == "flow_levels") flow.levels = static_cast<int>(parse_count(key, value));
    else if (key == "flow_iters") flow.iters = static_cast<int>(parse_count(key, value));
    else if (key == "flow_alpha") flow.alpha = parse_real(key, value);
    else if (key == "flow_warps") flow.warps = static_cast<int>(parse_count(key, value));
    else if (key == "flow_mag_cap") flow_mag_cap = parse_real(key, value);
    else if (key == "flow_cache") flow_cache = value.empty() ? std::nullopt : std::optional(resolve(base, value));
    // outputs
    else if (key == "out_dir") out_dir = resolve(base, value);
    else if (key == "smooth") smooth = value.empty() ? std::nullopt : std::optional(parse_real(key, value));
    else throw ParseError("unknown config key '" + key + "'", 0);
}

void RunConfig::set_model_kind(ModelKind kind) { model.kind = kind; }

void RunConfig::finalize() {
    if (!predict_speed_set) model.predict_speed = model.kind != ModelKind::simple_transformer;
    model.validate();
    train.validate();
    if (train.augment) augment.validate();
    if (data.empty()) throw ContractError("config key 'data' is required");
    if (!val_data && !(train_frac > 0.0 && train_frac <= 1.0))
        throw ContractError("train_frac must lie in (0,1]");
    if (stride == 0) throw ContractError("stride must be positive");
    if (!(flow_mag_cap > 0.0)) throw ContractError("flow_mag_cap must be positive");
    if (smooth && !(*smooth > 0.0 && *smooth <= 1.0)) throw ContractError("smooth must lie in (0,1]");
}

std::string RunConfig::resolved_text() const {
    std::ostringstream os;
    auto kv = [&](const std::string& k, const std::string& v) { os << k << " = " << v << '\n'; };
    os << "# model\n";
    kv("model", to_string(model.kind));
    kv("seq_len", std::to_string(model.seq_len));
    kv("feature_dim", std::to_string(model.feature_dim));
    kv("heads", std::to_string(model.heads));
    kv("encoder_layers", std::to_string(model.encoder_layers));
    kv("ff_dim", std::to_string(model.ff_dim));
    kv("fused_dim", std::to_string(model.fused_dim));
    kv("lstm_hidden", std::to_string(model.lstm_hidden));
    kv("lstm_layers", std::to_string(model.lstm_layers));
    kv("backbone_channels", sizes(model.backbone_channels));
    kv("stem_kernel", std::to_string(model.stem_kernel));
    kv("stem_stride", std::to_string(model.stem_stride));
    kv("image_h", std::to_string(model.image_h));
    kv("image_w", std::to_string(model.image_w));
    kv("predict_speed", model.predict_speed ? "1" : "0");
    kv("positional_encoding", model.positional_encoding ? "1" : "0");
    kv("init_seed", std::to_string(model.init_seed));
    os << "# training\n";
    kv("lr0", real(train.lr0));
    kv("beta1", real(train.beta1));
    kv("beta2", real(train.beta2));
    kv("adam_eps", real(train.adam_eps));
    kv("decay_epochs", sizes(train.decay_epochs));
    kv("decay_factor", real(train.decay_factor));
    kv("epochs", std::to_string(train.epochs));
    kv("batch_size", std::to_string(train.batch_size));
    kv("speed_loss_weight", real(train.speed_loss_weight));
    kv("smooth_l1_beta", real(train.smooth_l1_beta));
    kv("seed", std::to_string(train.seed));
    kv("checkpoint_every", std::to_string(train.checkpoint_every));
    kv("augment", train.augment ? "1" : "0");
    os << "# augmentation\n";
    kv("aug_brightness_min", real(augment.brightness_min));
    kv("aug_brightness_max", real(augment.brightness_max));
    kv("aug_shadow_prob", real(augment.shadow_prob));
    kv("aug_shadow_dim", real(augment.shadow_dim));
    kv("aug_translate_px", std::to_string(augment.translate_px));
    kv("aug_rotate_deg", real(augment.rotate_deg));
    kv("aug_blur_kernel", std::to_string(augment.blur_kernel));
    kv("aug_blur_prob", real(augment.blur_prob));
    kv("aug_seed", std::to_string(augment.seed));
    kv("aug_adjust_label", augment.adjust_label_on_translate ? "1" : "0");
    kv("aug_label_per_px", real(augment.label_per_px));
    os << "# data\n";
    kv("data", data.string());
    kv("val_data", val_data ? val_data->string() : "");
    kv("test_data", test_data ? test_data->string() : "");
    kv("train_frac", real(train_frac));
    kv("camera", camera);
    kv("stride", std::to_string(stride));
    kv("flow_levels", std::to_string(flow.levels));
    kv("flow_iters", std::to_string(flow.iters));
    kv("flow_alpha", real(flow.alpha));
    kv("flow_warps", std::to_string(flow.warps));
    kv("flow_mag_cap", real(flow_mag_cap));
    kv("flow_cache", flow_cache ? flow_cache->string() : "");
    os << "# outputs\n";
    kv("out_dir", out_dir.string());
    kv("smooth", smooth ? real(*smooth) : "");
    return os.str();
}

DatasetOptions RunConfig::dataset_options() const {
    DatasetOptions o;
    o.seq_len = model.is_sequence_model() ? model.seq_len : 1;
    o.stride = stride;
    o.image_h = model.image_h;
    o.image_w = model.image_w;
    o.flow = flow;
    o.flow_mag_cap = flow_mag_cap;
    o.cache_dir = flow_cache;
    o.compute_flow = model.uses_flow();
    return o;
}

RunConfig load_run_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config " + path.string());
    RunConfig cfg;
    const fs::path base = path.parent_path();
    std::size_t line_no = 0;
    for (std::string line; std::getline(in, line);) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty() || t.front() == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ParseError(path.string() + " line " + std::to_string(line_no) + ": expected 'key = value'", line_no);
        try {
            cfg.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)), base);
        } catch (const ParseError& e) {
            throw ParseError(path.string() + " line " + std::to_string(line_no) + ": " + e.what(), line_no);
        }
    }
    return cfg;
}

}  // namespace flowsteer::cli
