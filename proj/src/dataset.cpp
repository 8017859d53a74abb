#include "flowsteer/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "flowsteer/errors.hpp"

namespace flowsteer {

namespace fs = std::filesystem;

// ---------------------------------------------------------------- index CSV

namespace {

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(ch);
        }
    }
    out.push_back(cur);
    for (auto& f : out) {
        const auto b = f.find_first_not_of(" \t");
        const auto e = f.find_last_not_of(" \t");
        f = b == std::string::npos ? std::string() : f.substr(b, e - b + 1);
    }
    return out;
}

ParseError line_error(std::size_t line, const std::string& what) {
    return ParseError("line " + std::to_string(line) + ": " + what, line);
}

double parse_real(const std::string& text, std::size_t line, const char* column) {
    double v = 0.0;
    const char* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (text.empty() || ec != std::errc() || ptr != end)
        throw line_error(line, std::string("cannot parse ") + column + " '" + text + "'");
    if (!std::isfinite(v)) throw line_error(line, std::string(column) + " is not finite");
    return v;
}

std::int64_t parse_int(const std::string& text, std::size_t line, const char* column) {
    std::int64_t v = 0;
    const char* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (text.empty() || ec != std::errc() || ptr != end)
        throw line_error(line, std::string("cannot parse ") + column + " '" + text + "'");
    return v;
}

std::string format_real(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

DriveIndex load_index(const fs::path& csv_path, const std::string& camera_filter) {
    std::ifstream in(csv_path);
    if (!in) throw IoError("cannot open index " + csv_path.string());
    const fs::path base = csv_path.parent_path();

    std::string line;
    std::size_t line_no = 0;
    auto next_line = [&]() -> bool {
        if (!std::getline(in, line)) return false;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return true;
    };
    if (!next_line()) throw line_error(1, "missing header row");
    const auto header = split_fields(line);
    const char* names[] = {"timestamp", "camera", "filename", "angle", "torque", "speed"};
    std::size_t col[6];
    for (int i = 0; i < 6; ++i) {
        auto it = std::find(header.begin(), header.end(), names[i]);
        if (it == header.end()) throw line_error(1, std::string("missing column '") + names[i] + "'");
        col[i] = static_cast<std::size_t>(it - header.begin());
    }

    DriveIndex index;
    while (next_line()) {
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        const auto f = split_fields(line);
        if (f.size() != header.size())
            throw line_error(line_no, "expected " + std::to_string(header.size()) + " fields, found " +
                                          std::to_string(f.size()));
        IndexRow row;
        row.timestamp_ns = parse_int(f[col[0]], line_no, "timestamp");
        row.camera = f[col[1]];
        if (f[col[2]].empty()) throw line_error(line_no, "empty filename");
        row.filename = base / f[col[2]];
        row.angle = parse_real(f[col[3]], line_no, "angle");
        row.torque = parse_real(f[col[4]], line_no, "torque");
        row.speed = parse_real(f[col[5]], line_no, "speed");
        if (!camera_filter.empty() && row.camera != camera_filter && row.camera != camera_filter + "_camera") continue;
        index.rows.push_back(std::move(row));
    }
    std::stable_sort(index.rows.begin(), index.rows.end(),
                     [](const IndexRow& a, const IndexRow& b) { return a.timestamp_ns < b.timestamp_ns; });
    return index;
}

void write_index(const DriveIndex& index, const fs::path& csv_path) {
    if (csv_path.has_parent_path()) fs::create_directories(csv_path.parent_path());
    std::ofstream out(csv_path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write index " + csv_path.string());
    out << kIndexHeader << '\n';
    const fs::path base = csv_path.parent_path();
    for (const auto& r : index.rows) {
        fs::path rel = r.filename.lexically_relative(base.empty() ? fs::path(".") : base);
        if (rel.empty()) rel = r.filename;
        out << r.timestamp_ns << ',' << r.camera << ',' << rel.generic_string() << ',' << format_real(r.angle) << ','
            << format_real(r.torque) << ',' << format_real(r.speed) << '\n';
    }
    if (!out) throw IoError("short write to " + csv_path.string());
}

std::pair<DriveIndex, DriveIndex> split_index(const DriveIndex& index, double train_frac) {
    if (!(train_frac > 0.0 && train_frac < 1.0)) throw ContractError("train_frac must lie in (0,1)");
    const auto cut = static_cast<std::size_t>(std::llround(static_cast<double>(index.size()) * train_frac));
    DriveIndex train, val;
    train.rows.assign(index.rows.begin(), index.rows.begin() + static_cast<std::ptrdiff_t>(cut));
    val.rows.assign(index.rows.begin() + static_cast<std::ptrdiff_t>(cut), index.rows.end());
    return {train, val};
}

// ---------------------------------------------------------------- sequences

std::vector<std::vector<std::size_t>> make_windows(std::size_t n, std::size_t seq_len, std::size_t stride) {
    if (seq_len < 1 || stride < 1) throw ContractError("seq_len and stride must be >= 1");
    std::vector<std::vector<std::size_t>> out;
    if (n < seq_len) return out;
    for (std::size_t start = 0; start + seq_len <= n; start += stride) {
        std::vector<std::size_t> w(seq_len);
        for (std::size_t i = 0; i < seq_len; ++i) w[i] = start + i;
        out.push_back(std::move(w));
    }
    return out;
}

std::vector<std::size_t> SequenceSet::flow_window(std::size_t i) const {
    std::vector<std::size_t> w = windows.at(i);
    w[0] = 0;
    return w;
}

SequenceSample SequenceSet::sample(std::size_t i) const {
    SequenceSample s;
    const auto& w = windows.at(i);
    for (std::size_t p = 0; p < w.size(); ++p) {
        s.frames.push_back(frames[w[p]]);
        s.flows.push_back(p == 0 ? FlowField::zeros(frames[w[p]].width, frames[w[p]].height) : flows[w[p]]);
        s.angles.push_back(angles[w[p]]);
        s.speeds.push_back(speeds[w[p]]);
    }
    return s;
}

namespace {

void fnv_mix(std::uint64_t& h, const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
}

FlowField quantize_fp32(FlowField f) {
    for (auto& x : f.u) x = static_cast<double>(static_cast<float>(x));
    for (auto& x : f.v) x = static_cast<double>(static_cast<float>(x));
    return f;
}

}  // namespace

std::string flow_cache_key(const Frame& prev, const Frame& next, const FlowParams& params) {
    std::uint64_t h = 14695981039346656037ull;
    const std::uint64_t dims[] = {prev.width, prev.height, next.width, next.height};
    fnv_mix(h, dims, sizeof dims);
    fnv_mix(h, prev.pixels.data(), prev.pixels.size() * sizeof(double));
    fnv_mix(h, next.pixels.data(), next.pixels.size() * sizeof(double));
    const std::int64_t ints[] = {params.levels, params.iters, params.warps};
    fnv_mix(h, ints, sizeof ints);
    fnv_mix(h, &params.alpha, sizeof params.alpha);
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

FlowField cached_flow(const Frame& prev, const Frame& next, const FlowParams& params,
                      const std::optional<fs::path>& cache_dir) {
    if (!cache_dir) return quantize_fp32(compute_dense_flow(prev, next, params));
    const fs::path file = *cache_dir / (flow_cache_key(prev, next, params) + ".fsfl");
    if (fs::exists(file)) {
        try {
            FlowField f = read_flow_file(file);
            if (f.width == next.width && f.height == next.height) return f;
        } catch (const std::exception&) {
            // unreadable entry: fall through and overwrite it
        }
    }
    FlowField f = quantize_fp32(compute_dense_flow(prev, next, params));
    write_flow_file(f, file);
    return f;
}

SequenceSet make_sequences(const DriveIndex& index, const DatasetOptions& options) {
    SequenceSet set;
    for (std::size_t i = 0; i < index.size(); ++i) {
        const auto& row = index.rows[i];
        if (i > 0 && row.timestamp_ns <= index.rows[i - 1].timestamp_ns)
            throw ContractError("timestamps must be strictly increasing (row " + std::to_string(i) + ")");
        Frame f = read_ppm(row.filename);
        if (options.image_h && options.image_w) f = resize_bilinear(f, options.image_h, options.image_w);
        if (!set.frames.empty() && !f.same_size(set.frames.front()))
            throw DimensionError("frame " + row.filename.string() + " differs in size from the first frame");
        set.timestamps.push_back(row.timestamp_ns);
        set.angles.push_back(row.angle);
        set.speeds.push_back(row.speed);
        set.frames.push_back(std::move(f));
    }
    if (options.cache_dir && options.compute_flow) fs::create_directories(*options.cache_dir);
    for (std::size_t i = 0; i < set.frames.size(); ++i) {
        const auto& f = set.frames[i];
        set.flows.push_back(i == 0 || !options.compute_flow ? FlowField::zeros(f.width, f.height)
                                   : cached_flow(set.frames[i - 1], f, options.flow, options.cache_dir));
        set.flow_images.push_back(encode_flow_hsv(set.flows.back(), options.flow_mag_cap));
    }
    set.windows = make_windows(set.frames.size(), options.seq_len, options.stride);
    return set;
}

// ---------------------------------------------------------------- synthetic

void TrackSpec::validate() const {
    if (segments.empty()) throw ContractError("track has no segments");
    for (const auto& s : segments) {
        if (!(s.length > 0.0)) throw ContractError("track segment length must be positive");
        if (std::abs(std::atan(kWheelbase * s.curvature)) > kMaxSteer)
            throw ContractError("curvature " + format_real(s.curvature) + " exceeds the steering range");
    }
    if (!(fps > 0.0)) throw ContractError("fps must be positive");
    if (!(speed - std::abs(speed_amplitude) > 0.0)) throw ContractError("speed profile must stay positive");
    if (!(speed_period > 0.0)) throw ContractError("speed period must be positive");
    if (!(camera_height > 0.0)) throw ContractError("camera height must be positive");
    if (!(fov_deg > 0.0 && fov_deg < 170.0)) throw ContractError("fov must lie in (0,170) degrees");
    if (width < 8 || height < 8) throw ContractError("synthetic frames must be at least 8x8");
    if (!(noise >= 0.0)) throw ContractError("noise must be non-negative");
}

double TrackSpec::total_length() const {
    double s = 0.0;
    for (const auto& seg : segments) s += seg.length;
    return s;
}

double TrackSpec::curvature_at(double s) const {
    for (const auto& seg : segments) {
        if (s < seg.length) return seg.curvature;
        s -= seg.length;
    }
    return segments.back().curvature;
}

TrackSpec parse_track(const std::string& text, std::uint64_t seed) {
    TrackSpec t;
    t.seed = seed;
    if (text == "straight") {
        t.segments = {{0.0, 5000.0}};
    } else if (text == "curve50") {
        t.segments = {{1.0 / 50.0, 5000.0}};
    } else if (text == "mixed") {
        std::mt19937_64 rng(seed ^ 0x5eedf00dull);
        std::uniform_real_distribution<double> straight_len(15.0, 40.0), curve_len(25.0, 60.0),
            radius(35.0, 120.0), coin(0.0, 1.0);
        double total = 0.0;
        while (total < 5000.0) {
            const double a = straight_len(rng);
            const double k = (coin(rng) < 0.5 ? -1.0 : 1.0) / radius(rng);
            const double b = curve_len(rng);
            t.segments.push_back({0.0, a});
            t.segments.push_back({k, b});
            total += a + b;
        }
    } else {
        std::stringstream ss(text);
        std::string item;
        std::size_t pos = 0;
        while (std::getline(ss, item, ',')) {
            const auto colon = item.find(':');
            if (colon == std::string::npos)
                throw ParseError("track segment '" + item + "' is not curvature:length", pos);
            auto number = [&](const std::string& s, std::size_t at) {
                double v = 0.0;
                auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
                if (s.empty() || ec != std::errc() || p != s.data() + s.size())
                    throw ParseError("bad number '" + s + "' in track spec", at);
                return v;
            };
            t.segments.push_back({number(item.substr(0, colon), pos), number(item.substr(colon + 1), pos + colon + 1)});
            pos += item.size() + 1;
        }
        if (t.segments.empty()) throw ParseError("empty track spec", 0);
    }
    t.validate();
    return t;
}

namespace {

struct Pose {
    double x = 0, y = 0, heading = 0;
};

Pose advance(Pose p, double k, double len) {
    if (std::abs(k) < 1e-12) {
        p.x += len * std::cos(p.heading);
        p.y += len * std::sin(p.heading);
    } else {
        const double h1 = p.heading + k * len;
        p.x += (std::sin(h1) - std::sin(p.heading)) / k;
        p.y += -(std::cos(h1) - std::cos(p.heading)) / k;
        p.heading = h1;
    }
    return p;
}

// Centerline pose at arc length s; the last segment extends indefinitely.
Pose pose_at(const TrackSpec& track, double s) {
    Pose p;
    for (std::size_t i = 0; i < track.segments.size(); ++i) {
        const auto& seg = track.segments[i];
        const bool last = i + 1 == track.segments.size();
        if (s <= seg.length || last) return advance(p, seg.curvature, s);
        p = advance(p, seg.curvature, seg.length);
        s -= seg.length;
    }
    return p;
}

double speed_at(const TrackSpec& track, std::size_t t) {
    return track.speed +
           track.speed_amplitude * std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / track.speed_period);
}

double distance_at(const TrackSpec& track, std::size_t t) {
    double s = 0.0;
    for (std::size_t k = 0; k < t; ++k) s += speed_at(track, k) / track.fps;
    return s;
}

constexpr double kLaneWidth = 3.6;
constexpr double kLineWidth = 0.15;
constexpr double kDashPeriod = 6.0;
constexpr double kFarClip = 70.0;
constexpr double kSampleStep = 0.5;

double ground_texture(double wx, double wy) {
    return 0.5 + 0.22 * std::sin(1.3 * wx) * std::sin(1.7 * wy) + 0.18 * std::sin(0.37 * wx + 0.61 * wy) +
           0.1 * std::sin(4.1 * wx - 2.3 * wy);
}

}  // namespace

SyntheticFrame render_synthetic(const TrackSpec& track, std::size_t t) {
    const double s_cam = distance_at(track, t);
    const Pose centre = pose_at(track, s_cam);
    const double fx = std::cos(centre.heading), fy = std::sin(centre.heading);
    const double rx = fy, ry = -fx;  // right-hand direction
    // drive in the right lane
    const double cam_x = centre.x + rx * kLaneWidth / 2.0, cam_y = centre.y + ry * kLaneWidth / 2.0;

    // centerline samples ahead of the camera
    struct Sample {
        double x, y, s;
    };
    std::vector<Sample> line;
    for (double ds = -5.0; ds <= kFarClip + 20.0; ds += kSampleStep) {
        const Pose p = pose_at(track, std::max(0.0, s_cam + ds));
        line.push_back({p.x, p.y, s_cam + ds});
    }

    const std::size_t W = track.width, H = track.height;
    const double focal = (static_cast<double>(W) / 2.0) / std::tan(track.fov_deg * std::numbers::pi / 360.0);
    const double cx = static_cast<double>(W) / 2.0, horizon = 0.4 * static_cast<double>(H);
    std::mt19937_64 rng(track.seed * 0x9e3779b97f4a7c15ull + t);
    std::normal_distribution<double> gauss(0.0, 1.0);

    SyntheticFrame out;
    out.frame = Frame::filled(W, H, 0.0, 0.0, 0.0);
    out.angle = std::atan(kWheelbase * track.curvature_at(s_cam));
    out.speed = speed_at(track, t);
    out.frame.timestamp_ns = static_cast<std::int64_t>(std::llround(static_cast<double>(t) * 1e9 / track.fps));

    constexpr int kSuper = 2;
    for (std::size_t py = 0; py < H; ++py)
        for (std::size_t px = 0; px < W; ++px) {
            double acc[3] = {0, 0, 0};
            for (int sy = 0; sy < kSuper; ++sy)
                for (int sx = 0; sx < kSuper; ++sx) {
                    const double u = static_cast<double>(px) + (sx + 0.5) / kSuper;
                    const double v = static_cast<double>(py) + (sy + 0.5) / kSuper;
                    double rgb[3];
                    if (v <= horizon + 1e-9) {
                        const double g = v / horizon;
                        rgb[0] = 0.55 + 0.25 * g;
                        rgb[1] = 0.7 + 0.15 * g;
                        rgb[2] = 0.95;
                    } else {
                        const double Z = track.camera_height * focal / (v - horizon);
                        const double X = (u - cx) * Z / focal;
                        const double wx = cam_x + Z * fx + X * rx, wy = cam_y + Z * fy + X * ry;
                        // nearest centerline sample, then project onto the local chord
                        std::size_t best = 0;
                        double best_d2 = 1e300;
                        for (std::size_t j = 0; j < line.size(); ++j) {
                            const double dx = wx - line[j].x, dy = wy - line[j].y;
                            const double d2 = dx * dx + dy * dy;
                            if (d2 < best_d2) {
                                best_d2 = d2;
                                best = j;
                            }
                        }
                        const std::size_t j0 = best + 1 < line.size() ? best : best - 1;
                        const double tx = line[j0 + 1].x - line[j0].x, ty = line[j0 + 1].y - line[j0].y;
                        const double tl = std::hypot(tx, ty);
                        const double qx = wx - line[j0].x, qy = wy - line[j0].y;
                        const double along = (qx * tx + qy * ty) / tl;
                        const double lateral = (tx * qy - ty * qx) / tl;  // positive to the left
                        const double arc = line[j0].s + along;
                        const double d = std::abs(lateral);
                        const double tex = ground_texture(wx, wy);
                        if (d < kLineWidth / 2.0 && std::fmod(std::fmod(arc, kDashPeriod) + kDashPeriod, kDashPeriod) < kDashPeriod / 2.0) {
                            rgb[0] = 0.9, rgb[1] = 0.8, rgb[2] = 0.2;
                        } else if (d > kLaneWidth - kLineWidth && d < kLaneWidth) {
                            rgb[0] = rgb[1] = rgb[2] = 0.92;
                        } else if (d < kLaneWidth) {
                            const double g = 0.36 + 0.08 * tex;
                            rgb[0] = rgb[1] = rgb[2] = g;
                        } else {
                            rgb[0] = 0.18 + 0.15 * tex;
                            rgb[1] = 0.38 + 0.2 * tex;
                            rgb[2] = 0.12 + 0.08 * tex;
                        }
                        const double haze = std::clamp((Z - 0.5 * kFarClip) / (0.5 * kFarClip), 0.0, 1.0);
                        const double haze_rgb[3] = {0.75, 0.82, 0.9};
                        for (int c = 0; c < 3; ++c) rgb[c] = (1.0 - haze) * rgb[c] + haze * haze_rgb[c];
                    }
                    for (int c = 0; c < 3; ++c) acc[c] += rgb[c];
                }
            for (int c = 0; c < 3; ++c) {
                double value = acc[c] / (kSuper * kSuper);
                if (track.noise > 0.0) value += track.noise * gauss(rng);
                out.frame.pixels[(py * W + px) * 3 + c] = std::clamp(value, 0.0, 1.0);
            }
        }
    return out;
}

DriveIndex generate_synthetic(const TrackSpec& track, std::size_t n_frames, const fs::path& out_dir) {
    track.validate();
    if (n_frames < 2) throw ContractError("synthetic recording needs at least 2 frames");
    if (distance_at(track, n_frames) > track.total_length())
        throw ContractError("track of " + format_real(track.total_length()) + " m is too short for " +
                            std::to_string(n_frames) + " frames");
    fs::create_directories(out_dir);
    DriveIndex index;
    for (std::size_t t = 0; t < n_frames; ++t) {
        SyntheticFrame sf = render_synthetic(track, t);
        char name[32];
        std::snprintf(name, sizeof name, "frame_%05zu.ppm", t);
        write_ppm(sf.frame, out_dir / name);
        index.rows.push_back({sf.frame.timestamp_ns, "center", out_dir / name, sf.angle, 0.0, sf.speed});
    }
    write_index(index, out_dir / "index.csv");
    return index;
}

}  // namespace flowsteer
