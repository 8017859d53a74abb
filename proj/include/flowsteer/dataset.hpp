#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "flowsteer/flow.hpp"
#include "flowsteer/image.hpp"

namespace flowsteer {

// ---- drive index ----

struct IndexRow {
    std::int64_t timestamp_ns = 0;
    std::string camera;
    std::filesystem::path filename;  // resolved against the CSV's directory
    double angle = 0.0;              // radians
    double torque = 0.0;             // carried, unused
    double speed = 0.0;              // m/s
};

struct DriveIndex {
    std::vector<IndexRow> rows;
    std::size_t size() const { return rows.size(); }
};

inline const char* const kIndexHeader = "timestamp,camera,filename,angle,torque,speed";

/// Parses `timestamp,camera,filename,angle,torque,speed` (any column order).
/// Rows of other cameras are dropped unless camera_filter is empty; the result
/// is stable-sorted by timestamp. Errors carry the 1-based line number.
DriveIndex load_index(const std::filesystem::path& csv_path, const std::string& camera_filter = "center");

/// Writes filenames relative to the CSV's directory.
void write_index(const DriveIndex& index, const std::filesystem::path& csv_path);

/// Contiguous split: the first round(n * train_frac) rows train, the rest validate.
std::pair<DriveIndex, DriveIndex> split_index(const DriveIndex& index, double train_frac);

// ---- sequences ----

/// Start-aligned windows of consecutive indices; floor((n - L)/stride) + 1 of
/// them when n >= L, none otherwise.
std::vector<std::vector<std::size_t>> make_windows(std::size_t n, std::size_t seq_len, std::size_t stride);

struct SequenceSample {
    std::vector<Frame> frames;
    std::vector<FlowField> flows;  // flows[0] is zero
    std::vector<double> angles;
    std::vector<double> speeds;
};

struct DatasetOptions {
    std::size_t seq_len = 5;
    std::size_t stride = 1;
    std::size_t image_h = 0;  // 0 keeps the stored size
    std::size_t image_w = 0;
    FlowParams flow;
    double flow_mag_cap = kDefaultMagCap;
    std::optional<std::filesystem::path> cache_dir;  // flow cache; none disables
    bool compute_flow = true;  // false leaves every flow at zero
};

/// Frames of one contiguous recording plus the derived flow and windows.
/// Flow i is from frame i-1 to frame i; flow 0 is the zero field.
struct SequenceSet {
    std::vector<std::int64_t> timestamps;
    std::vector<Frame> frames;
    std::vector<FlowField> flows;
    std::vector<Frame> flow_images;  // HSV-encoded flows
    std::vector<double> angles;
    std::vector<double> speeds;
    std::vector<std::vector<std::size_t>> windows;

    std::size_t size() const { return windows.size(); }
    /// Flow-table indices for window i; position 0 maps to the zero field.
    std::vector<std::size_t> flow_window(std::size_t i) const;
    SequenceSample sample(std::size_t i) const;
};

/// Loads frames, resizes them, computes (or reads cached) flow for each
/// consecutive pair, and cuts windows.
SequenceSet make_sequences(const DriveIndex& index, const DatasetOptions& options);

/// Flow between two frames through the on-disk cache. Computed fields are
/// rounded to fp32 so hits and misses return identical values.
FlowField cached_flow(const Frame& prev, const Frame& next, const FlowParams& params,
                      const std::optional<std::filesystem::path>& cache_dir);
std::string flow_cache_key(const Frame& prev, const Frame& next, const FlowParams& params);

// ---- synthetic road corridor ----

inline constexpr double kWheelbase = 2.85;  // m
inline constexpr double kMaxSteer = 0.6;    // rad

struct TrackSegment {
    double curvature = 0.0;  // 1/m, positive turns left
    double length = 0.0;     // m
};

struct TrackSpec {
    std::vector<TrackSegment> segments;
    double speed = 8.0;           // m/s mean
    double speed_amplitude = 2.0; // m/s sinusoidal variation
    double speed_period = 40.0;   // frames
    double fps = 10.0;
    double camera_height = 1.4;   // m
    double fov_deg = 70.0;        // horizontal
    std::size_t width = 64;
    std::size_t height = 64;
    double noise = 0.01;          // per-pixel gaussian sigma
    std::uint64_t seed = 0;

    void validate() const;
    double total_length() const;
    double curvature_at(double s) const;
};

/// Presets "straight", "curve50", "mixed" (random segments from the seed), or an
/// inline list "k:len,k:len,..." with curvature in 1/m and length in m.
TrackSpec parse_track(const std::string& text, std::uint64_t seed = 0);

struct SyntheticFrame {
    Frame frame;
    double angle = 0.0;
    double speed = 0.0;
};

/// Renders frame `t` of the track deterministically.
SyntheticFrame render_synthetic(const TrackSpec& track, std::size_t t);

/// Writes frame_%05d.ppm and index.csv into out_dir; returns the index.
DriveIndex generate_synthetic(const TrackSpec& track, std::size_t n_frames, const std::filesystem::path& out_dir);

}  // namespace flowsteer
