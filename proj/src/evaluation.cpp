#include "flowsteer/evaluation.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "flowsteer/errors.hpp"
#include "flowsteer/image.hpp"
#include "flowsteer/training.hpp"

namespace flowsteer {

namespace fs = std::filesystem;

std::vector<double> PredictionSeries::predictions() const {
    std::vector<double> v;
    for (const auto& r : rows) v.push_back(r.prediction);
    return v;
}

std::vector<double> PredictionSeries::targets() const {
    std::vector<double> v;
    for (const auto& r : rows) v.push_back(r.target);
    return v;
}

double rmse(std::span<const double> predictions, std::span<const double> targets) {
    if (predictions.empty() || predictions.size() != targets.size())
        throw ContractError("rmse: series must be nonempty and equally long");
    double sq = 0.0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const double d = predictions[i] - targets[i];
        sq += d * d;
    }
    return std::sqrt(sq / static_cast<double>(predictions.size()));
}

EvaluationResult evaluate(const Model& model, const SequenceSet& data, std::size_t batch_size) {
    if (data.size() == 0) throw ContractError("evaluate: no sequences");
    if (batch_size == 0) throw ContractError("evaluate: batch_size must be positive");
    EvaluationResult result;
    for (std::size_t start = 0; start < data.size(); start += batch_size) {
        std::vector<std::size_t> idx;
        for (std::size_t i = start; i < std::min(data.size(), start + batch_size); ++i) idx.push_back(i);
        const PreparedBatch pb = prepare_batch(model, data, idx);
        const auto outs = model.forward_batch(pb.input);
        for (std::size_t b = 0; b < outs.size(); ++b) {
            const std::size_t last_frame = data.windows[idx[b]].back();
            const std::size_t last_step = outs[b].angle.numel() - 1;
            PredictionRow row;
            row.timestamp_ns = data.timestamps[last_frame];
            row.target = data.angles[last_frame];
            row.prediction = outs[b].angle[last_step];
            if (outs[b].speed) row.speed_prediction = (*outs[b].speed)[last_step];
            result.series.rows.push_back(row);
        }
    }
    result.rmse = rmse(result.series.predictions(), result.series.targets());
    return result;
}

std::vector<double> exp_smooth(std::span<const double> series, double factor) {
    if (!(factor > 0.0 && factor <= 1.0)) throw ContractError("smoothing factor must lie in (0,1]");
    if (series.empty()) throw ContractError("exp_smooth: empty series");
    std::vector<double> out(series.begin(), series.end());
    if (factor == 1.0) return out;
    // increment form keeps constant runs exact
    for (std::size_t t = 1; t < out.size(); ++t) out[t] = out[t - 1] + factor * (series[t] - out[t - 1]);
    return out;
}

namespace {

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void write_matrix(const Tensor& a, const fs::path& stem, std::vector<fs::path>& written) {
    const std::size_t rows = a.dim(0), cols = a.dim(1);
    Frame img = Frame::filled(cols, rows, 0.0, 0.0, 0.0);
    std::ofstream csv(fs::path(stem) += ".csv", std::ios::binary | std::ios::trunc);
    if (!csv) throw IoError("cannot write " + stem.string() + ".csv");
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            const double w = a.at({r, c});
            for (std::size_t ch = 0; ch < 3; ++ch) img.at(r, c, ch) = w;
            csv << (c ? "," : "") << fmt(w);
        }
        csv << '\n';
    }
    write_ppm(img, fs::path(stem) += ".ppm");
    written.push_back(fs::path(stem) += ".ppm");
    written.push_back(fs::path(stem) += ".csv");
}

}  // namespace

std::vector<fs::path> export_attention(const ModelOutput& output, const fs::path& out_dir) {
    if (output.attention.empty()) throw ContractError("export_attention: model output carries no attention");
    fs::create_directories(out_dir);
    std::vector<fs::path> written;
    for (std::size_t l = 0; l < output.attention.size(); ++l) {
        const auto& layer = output.attention[l];
        for (std::size_t h = 0; h < layer.rgb.size(); ++h)
            write_matrix(layer.rgb[h], out_dir / ("layer" + std::to_string(l) + "_rgb_head" + std::to_string(h)), written);
        for (std::size_t h = 0; h < layer.flow.size(); ++h)
            write_matrix(layer.flow[h], out_dir / ("layer" + std::to_string(l) + "_flow_head" + std::to_string(h)), written);
    }
    return written;
}

void emit_plot_data(const PredictionSeries& series, const fs::path& path) {
    const bool speed = !series.rows.empty() && series.rows.front().speed_prediction.has_value();
    std::error_code ec;
    if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << "timestamp,target,prediction" << (speed ? ",speed_pred" : "") << '\n';
    for (const auto& r : series.rows) {
        out << r.timestamp_ns << ',' << fmt(r.target) << ',' << fmt(r.prediction);
        if (speed) out << ',' << fmt(r.speed_prediction.value_or(std::nan("")));
        out << '\n';
    }
    if (!out) throw IoError("short write to " + path.string());
}

PredictionSeries read_plot_data(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw ParseError("empty prediction file", 0);
    const bool speed = line == "timestamp,target,prediction,speed_pred";
    if (!speed && line != "timestamp,target,prediction") throw ParseError("unexpected prediction header", 1);
    PredictionSeries s;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string field;
        std::vector<std::string> f;
        while (std::getline(ss, field, ',')) f.push_back(field);
        if (f.size() != (speed ? 4u : 3u)) throw ParseError("wrong field count on line " + std::to_string(line_no), line_no);
        auto real = [&](const std::string& t) {
            double v = 0.0;
            auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
            if (ec != std::errc() || p != t.data() + t.size())
                throw ParseError("bad number on line " + std::to_string(line_no), line_no);
            return v;
        };
        PredictionRow r;
        auto [p, ec] = std::from_chars(f[0].data(), f[0].data() + f[0].size(), r.timestamp_ns);
        if (ec != std::errc() || p != f[0].data() + f[0].size())
            throw ParseError("bad timestamp on line " + std::to_string(line_no), line_no);
        r.target = real(f[1]);
        r.prediction = real(f[2]);
        if (speed) r.speed_prediction = real(f[3]);
        s.rows.push_back(r);
    }
    return s;
}

}  // namespace flowsteer
