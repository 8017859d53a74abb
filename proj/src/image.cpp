#include "flowsteer/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

#include "flowsteer/errors.hpp"

namespace flowsteer {

Frame Frame::filled(std::size_t width, std::size_t height, double r, double g, double b) {
    Frame f;
    f.width = width;
    f.height = height;
    f.pixels.resize(width * height * 3);
    for (std::size_t i = 0; i < width * height; ++i) {
        f.pixels[i * 3] = r;
        f.pixels[i * 3 + 1] = g;
        f.pixels[i * 3 + 2] = b;
    }
    return f;
}

void Frame::clamp() {
    for (auto& v : pixels) v = std::clamp(v, 0.0, 1.0);
}

// ---------------------------------------------------------------- PPM

namespace {

class HeaderReader {
public:
    explicit HeaderReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    void skip_space_and_comments() {
        while (pos_ < bytes_.size()) {
            if (bytes_[pos_] == '#') {
                while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
            } else if (std::isspace(bytes_[pos_])) {
                ++pos_;
            } else {
                return;
            }
        }
    }

    std::size_t number(const char* what) {
        skip_space_and_comments();
        const std::size_t start = pos_;
        std::size_t value = 0;
        while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
            value = value * 10 + static_cast<std::size_t>(bytes_[pos_] - '0');
            if (value > 1'000'000) throw ParseError(std::string("PPM ") + what + " too large", start);
            ++pos_;
        }
        if (pos_ == start)
            throw ParseError(std::string("PPM header: expected ") + what + " at byte " + std::to_string(start),
                             start);
        return value;
    }

    std::size_t pos() const { return pos_; }
    void advance(std::size_t n) { pos_ += n; }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

std::uint8_t quantize(double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

Frame decode_ppm(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6')
        throw ParseError("not a binary PPM: magic 'P6' missing at byte 0", 0);
    HeaderReader reader(bytes);
    reader.advance(2);
    const std::size_t width = reader.number("width");
    const std::size_t height = reader.number("height");
    const std::size_t maxval_at = reader.pos();
    const std::size_t maxval = reader.number("maxval");
    if (maxval != 255)
        throw ParseError("PPM maxval " + std::to_string(maxval) + " unsupported (only 255) near byte " +
                             std::to_string(maxval_at),
                         maxval_at);
    if (width == 0 || height == 0) throw ParseError("PPM has zero extent", maxval_at);
    if (reader.pos() >= bytes.size() || !std::isspace(bytes[reader.pos()]))
        throw ParseError("PPM header: missing whitespace after maxval at byte " + std::to_string(reader.pos()),
                         reader.pos());
    reader.advance(1);
    const std::size_t payload = width * height * 3;
    if (bytes.size() - reader.pos() < payload)
        throw ParseError("PPM payload truncated: expected " + std::to_string(payload) + " bytes from byte " +
                             std::to_string(reader.pos()) + ", found " +
                             std::to_string(bytes.size() - reader.pos()),
                         bytes.size());
    Frame f;
    f.width = width;
    f.height = height;
    f.pixels.resize(payload);
    const auto* src = bytes.data() + reader.pos();
    for (std::size_t i = 0; i < payload; ++i) f.pixels[i] = src[i] / 255.0;
    return f;
}

std::vector<std::uint8_t> encode_ppm(const Frame& frame) {
    const std::string header =
        "P6\n" + std::to_string(frame.width) + " " + std::to_string(frame.height) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.reserve(out.size() + frame.pixels.size());
    for (double v : frame.pixels) out.push_back(quantize(v));
    return out;
}

Frame read_ppm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return decode_ppm(bytes);
    } catch (const ParseError& e) {
        throw ParseError(path.string() + ": " + e.what(), e.position());
    }
}

void write_ppm(const Frame& frame, const std::filesystem::path& path) {
    const auto bytes = encode_ppm(frame);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + path.string());
}

// ---------------------------------------------------------------- colour

Hsv rgb_to_hsv(double r, double g, double b) {
    const double mx = std::max({r, g, b});
    const double mn = std::min({r, g, b});
    const double delta = mx - mn;
    Hsv out{0.0, mx > 0.0 ? delta / mx : 0.0, mx};
    if (delta > 0.0) {
        double h;
        if (mx == r) h = std::fmod((g - b) / delta, 6.0);
        else if (mx == g) h = (b - r) / delta + 2.0;
        else h = (r - g) / delta + 4.0;
        h *= 60.0;
        if (h < 0.0) h += 360.0;
        out.h = h;
    }
    return out;
}

void hsv_to_rgb(const Hsv& hsv, double& r, double& g, double& b) {
    double h = std::fmod(hsv.h, 360.0);
    if (h < 0.0) h += 360.0;
    const double c = hsv.v * hsv.s;
    const double hp = h / 60.0;
    const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
    const double m = hsv.v - c;
    double r1 = 0.0, g1 = 0.0, b1 = 0.0;
    switch (static_cast<int>(hp)) {
        case 0: r1 = c; g1 = x; break;
        case 1: r1 = x; g1 = c; break;
        case 2: g1 = c; b1 = x; break;
        case 3: g1 = x; b1 = c; break;
        case 4: r1 = x; b1 = c; break;
        default: r1 = c; b1 = x; break;
    }
    r = r1 + m;
    g = g1 + m;
    b = b1 + m;
}

// ---------------------------------------------------------------- resampling

Frame resize_bilinear(const Frame& frame, std::size_t out_h, std::size_t out_w) {
    if (out_h < 2 || out_w < 2) throw DimensionError("resize_bilinear: output extents must be >= 2");
    if (out_h == frame.height && out_w == frame.width) return frame;
    Frame out;
    out.width = out_w;
    out.height = out_h;
    out.timestamp_ns = frame.timestamp_ns;
    out.pixels.resize(out_w * out_h * 3);
    const double sy = static_cast<double>(frame.height) / static_cast<double>(out_h);
    const double sx = static_cast<double>(frame.width) / static_cast<double>(out_w);
    const auto last_y = static_cast<double>(frame.height - 1);
    const auto last_x = static_cast<double>(frame.width - 1);
    for (std::size_t y = 0; y < out_h; ++y) {
        const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, last_y);
        const auto y0 = static_cast<std::size_t>(fy);
        const std::size_t y1 = std::min(y0 + 1, frame.height - 1);
        const double wy = fy - static_cast<double>(y0);
        for (std::size_t x = 0; x < out_w; ++x) {
            const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, last_x);
            const auto x0 = static_cast<std::size_t>(fx);
            const std::size_t x1 = std::min(x0 + 1, frame.width - 1);
            const double wx = fx - static_cast<double>(x0);
            for (std::size_t c = 0; c < 3; ++c) {
                const double top = frame.at(y0, x0, c) * (1.0 - wx) + frame.at(y0, x1, c) * wx;
                const double bottom = frame.at(y1, x0, c) * (1.0 - wx) + frame.at(y1, x1, c) * wx;
                out.at(y, x, c) = top * (1.0 - wy) + bottom * wy;
            }
        }
    }
    return out;
}

std::vector<double> luminance(const Frame& frame) {
    std::vector<double> out(frame.width * frame.height);
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = 0.299 * frame.pixels[i * 3] + 0.587 * frame.pixels[i * 3 + 1] + 0.114 * frame.pixels[i * 3 + 2];
    return out;
}

Tensor to_tensor(const Frame& frame) {
    const std::size_t plane = frame.width * frame.height;
    std::vector<double> data(plane * 3);
    for (std::size_t i = 0; i < plane; ++i)
        for (std::size_t c = 0; c < 3; ++c) data[c * plane + i] = frame.pixels[i * 3 + c];
    return Tensor::from({3, frame.height, frame.width}, std::move(data));
}

}  // namespace flowsteer
