#include "flowsteer/flow.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <iostream>
#include <iterator>
#include <numbers>

#include "flowsteer/errors.hpp"

namespace flowsteer {

FlowField FlowField::zeros(std::size_t width, std::size_t height) {
    return constant(width, height, 0.0, 0.0);
}

FlowField FlowField::constant(std::size_t width, std::size_t height, double u, double v) {
    FlowField f;
    f.width = width;
    f.height = height;
    f.u.assign(width * height, u);
    f.v.assign(width * height, v);
    return f;
}

namespace {

struct Plane {
    std::size_t w = 0, h = 0;
    std::vector<double> d;

    Plane() = default;
    Plane(std::size_t width, std::size_t height, double fill = 0.0) : w(width), h(height), d(width * height, fill) {}

    double& operator()(std::size_t x, std::size_t y) { return d[y * w + x]; }
    double operator()(std::size_t x, std::size_t y) const { return d[y * w + x]; }

    double clamped(std::ptrdiff_t x, std::ptrdiff_t y) const {
        x = std::clamp<std::ptrdiff_t>(x, 0, static_cast<std::ptrdiff_t>(w) - 1);
        y = std::clamp<std::ptrdiff_t>(y, 0, static_cast<std::ptrdiff_t>(h) - 1);
        return d[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)];
    }

    double bilinear(double x, double y) const {
        x = std::clamp(x, 0.0, static_cast<double>(w - 1));
        y = std::clamp(y, 0.0, static_cast<double>(h - 1));
        const auto x0 = static_cast<std::ptrdiff_t>(std::floor(x));
        const auto y0 = static_cast<std::ptrdiff_t>(std::floor(y));
        const double ax = x - static_cast<double>(x0);
        const double ay = y - static_cast<double>(y0);
        const double top = clamped(x0, y0) * (1 - ax) + clamped(x0 + 1, y0) * ax;
        const double bot = clamped(x0, y0 + 1) * (1 - ax) + clamped(x0 + 1, y0 + 1) * ax;
        return top * (1 - ay) + bot * ay;
    }
};

// Separable binomial [1 4 6 4 1]/16 smoothing with replicated borders.
Plane smooth(const Plane& in) {
    static constexpr std::array<double, 5> taps{1.0 / 16, 4.0 / 16, 6.0 / 16, 4.0 / 16, 1.0 / 16};
    Plane tmp(in.w, in.h), out(in.w, in.h);
    for (std::size_t y = 0; y < in.h; ++y)
        for (std::size_t x = 0; x < in.w; ++x) {
            double acc = 0.0;
            for (int k = -2; k <= 2; ++k)
                acc += taps[static_cast<std::size_t>(k + 2)] *
                       in.clamped(static_cast<std::ptrdiff_t>(x) + k, static_cast<std::ptrdiff_t>(y));
            tmp(x, y) = acc;
        }
    for (std::size_t y = 0; y < in.h; ++y)
        for (std::size_t x = 0; x < in.w; ++x) {
            double acc = 0.0;
            for (int k = -2; k <= 2; ++k)
                acc += taps[static_cast<std::size_t>(k + 2)] *
                       tmp.clamped(static_cast<std::ptrdiff_t>(x), static_cast<std::ptrdiff_t>(y) + k);
            out(x, y) = acc;
        }
    return out;
}

Plane downsample(const Plane& in) {
    const Plane blurred = smooth(smooth(in));
    Plane out(in.w / 2, in.h / 2);
    for (std::size_t y = 0; y < out.h; ++y)
        for (std::size_t x = 0; x < out.w; ++x)
            out(x, y) = 0.25 * (blurred(2 * x, 2 * y) + blurred(2 * x + 1, 2 * y) + blurred(2 * x, 2 * y + 1) +
                                blurred(2 * x + 1, 2 * y + 1));
    return out;
}

// Resamples a coarse flow component onto a finer grid and rescales its magnitude.
Plane upsample_flow(const Plane& coarse, std::size_t w, std::size_t h, double scale) {
    Plane out(w, h);
    const double sx = static_cast<double>(coarse.w) / static_cast<double>(w);
    const double sy = static_cast<double>(coarse.h) / static_cast<double>(h);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            out(x, y) = scale * coarse.bilinear((static_cast<double>(x) + 0.5) * sx - 0.5,
                                                (static_cast<double>(y) + 0.5) * sy - 0.5);
    return out;
}

// Horn-Schunck neighbourhood average: 1/6 on edges, 1/12 on corners.
double neighbour_mean(const Plane& p, std::size_t x, std::size_t y) {
    const auto ix = static_cast<std::ptrdiff_t>(x);
    const auto iy = static_cast<std::ptrdiff_t>(y);
    const double edges = p.clamped(ix - 1, iy) + p.clamped(ix + 1, iy) + p.clamped(ix, iy - 1) + p.clamped(ix, iy + 1);
    const double corners = p.clamped(ix - 1, iy - 1) + p.clamped(ix + 1, iy - 1) + p.clamped(ix - 1, iy + 1) +
                           p.clamped(ix + 1, iy + 1);
    return edges / 6.0 + corners / 12.0;
}

void refine_level(const Plane& first, const Plane& second, Plane& u, Plane& v, const FlowParams& params) {
    const std::size_t w = first.w, h = first.h;
    const double alpha2 = params.alpha * params.alpha;
    Plane ix(w, h), iy(w, h), it(w, h), warped(w, h);
    for (int warp = 0; warp < params.warps; ++warp) {
        std::vector<bool> inside(w * h);
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                const double tx = static_cast<double>(x) + u(x, y);
                const double ty = static_cast<double>(y) + v(x, y);
                inside[y * w + x] = tx >= 0.0 && ty >= 0.0 && tx <= static_cast<double>(w - 1) &&
                                    ty <= static_cast<double>(h - 1);
                warped(x, y) = second.bilinear(tx, ty);
            }
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                const auto sx = static_cast<std::ptrdiff_t>(x);
                const auto sy = static_cast<std::ptrdiff_t>(y);
                if (!inside[y * w + x]) {
                    ix(x, y) = iy(x, y) = it(x, y) = 0.0;
                    continue;
                }
                ix(x, y) = 0.25 * (first.clamped(sx + 1, sy) - first.clamped(sx - 1, sy) +
                                   warped.clamped(sx + 1, sy) - warped.clamped(sx - 1, sy));
                iy(x, y) = 0.25 * (first.clamped(sx, sy + 1) - first.clamped(sx, sy - 1) +
                                   warped.clamped(sx, sy + 1) - warped.clamped(sx, sy - 1));
                it(x, y) = warped(x, y) - first(x, y);
            }
        const Plane u0 = u, v0 = v;
        Plane next_u(w, h), next_v(w, h);
        for (int iter = 0; iter < params.iters; ++iter) {
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < w; ++x) {
                    const double ub = neighbour_mean(u, x, y);
                    const double vb = neighbour_mean(v, x, y);
                    const double gx = ix(x, y), gy = iy(x, y);
                    const double num = gx * (ub - u0(x, y)) + gy * (vb - v0(x, y)) + it(x, y);
                    const double k = num / (alpha2 + gx * gx + gy * gy);
                    next_u(x, y) = ub - gx * k;
                    next_v(x, y) = vb - gy * k;
                }
            std::swap(u.d, next_u.d);
            std::swap(v.d, next_v.d);
        }
    }
}

Plane luminance_plane(const Frame& frame) {
    Plane p(frame.width, frame.height);
    p.d = luminance(frame);
    for (auto& x : p.d) x *= 255.0;
    return p;
}

}  // namespace

FlowField compute_dense_flow(const Frame& prev, const Frame& next, const FlowParams& params) {
    if (!prev.same_size(next))
        throw DimensionError("compute_dense_flow: frame sizes differ (" + std::to_string(prev.width) + "x" +
                             std::to_string(prev.height) + " vs " + std::to_string(next.width) + "x" +
                             std::to_string(next.height) + ")");
    if (prev.width < 2 || prev.height < 2) throw DimensionError("compute_dense_flow: frames too small");
    if (params.levels < 1 || params.iters < 0 || params.warps < 1 || !(params.alpha > 0.0))
        throw ContractError("compute_dense_flow: invalid parameters");

    std::vector<Plane> first{smooth(luminance_plane(prev))};
    std::vector<Plane> second{smooth(luminance_plane(next))};
    while (static_cast<int>(first.size()) < params.levels && first.back().w / 2 >= 8 && first.back().h / 2 >= 8) {
        first.push_back(downsample(first.back()));
        second.push_back(downsample(second.back()));
    }

    Plane u(first.back().w, first.back().h), v(first.back().w, first.back().h);
    for (std::size_t level = first.size(); level-- > 0;) {
        const Plane& a = first[level];
        if (u.w != a.w || u.h != a.h) {
            u = upsample_flow(u, a.w, a.h, static_cast<double>(a.w) / static_cast<double>(u.w));
            v = upsample_flow(v, a.w, a.h, static_cast<double>(a.h) / static_cast<double>(v.h));
        }
        refine_level(a, second[level], u, v, params);
    }

    FlowField out;
    out.width = prev.width;
    out.height = prev.height;
    out.u = std::move(u.d);
    out.v = std::move(v.d);
    return out;
}

Frame encode_flow_hsv(const FlowField& flow, double mag_cap) {
    if (!(mag_cap > 0.0)) throw ContractError("encode_flow_hsv: mag_cap must be positive");
    Frame out;
    out.width = flow.width;
    out.height = flow.height;
    out.pixels.resize(flow.width * flow.height * 3);
    for (std::size_t i = 0; i < flow.u.size(); ++i) {
        const double u = flow.u[i], v = flow.v[i];
        double hue = std::atan2(v, u) * 180.0 / std::numbers::pi;
        if (hue < 0.0) hue += 360.0;
        const double value = std::min(std::hypot(u, v) / mag_cap, 1.0);
        hsv_to_rgb({hue, 1.0, value}, out.pixels[i * 3], out.pixels[i * 3 + 1], out.pixels[i * 3 + 2]);
    }
    return out;
}

FlowField weighted_flow_average(std::span<const FlowField> flows, std::span<const double> weights) {
    if (flows.empty()) throw ContractError("weighted_flow_average: no flow fields");
    if (weights.size() != flows.size())
        throw ContractError("weighted_flow_average: " + std::to_string(flows.size()) + " fields but " +
                            std::to_string(weights.size()) + " weights");
    double total = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0)) throw ContractError("weighted_flow_average: weights must be nonnegative");
        total += w;
    }
    if (!(total > 0.0)) throw ContractError("weighted_flow_average: weights sum to zero");
    if (std::abs(total - 1.0) > 1e-12)
        std::cerr << "warning: flow weights sum to " << total << ", renormalizing\n";
    FlowField out = FlowField::zeros(flows.front().width, flows.front().height);
    for (std::size_t k = 0; k < flows.size(); ++k) {
        if (flows[k].width != out.width || flows[k].height != out.height)
            throw DimensionError("weighted_flow_average: field sizes differ");
        const double w = weights[k] / total;
        for (std::size_t i = 0; i < out.u.size(); ++i) {
            out.u[i] += w * flows[k].u[i];
            out.v[i] += w * flows[k].v[i];
        }
    }
    return out;
}

std::vector<double> exponential_flow_weights(std::size_t k) {
    std::vector<double> w(k);
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) total += (w[j] = std::pow(0.5, static_cast<double>(j)));
    for (auto& x : w) x /= total;
    return w;
}

// ---------------------------------------------------------------- cache files

namespace {

constexpr std::array<char, 4> kFlowMagic{'F', 'S', 'F', 'L'};

void put_u32(std::vector<char>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(const std::vector<char>& in, std::size_t at) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
    return v;
}

}  // namespace

void write_flow_file(const FlowField& flow, const std::filesystem::path& path) {
    std::vector<char> bytes(kFlowMagic.begin(), kFlowMagic.end());
    put_u32(bytes, static_cast<std::uint32_t>(flow.height));
    put_u32(bytes, static_cast<std::uint32_t>(flow.width));
    for (const auto* plane : {&flow.u, &flow.v})
        for (double x : *plane) put_u32(bytes, std::bit_cast<std::uint32_t>(static_cast<float>(x)));

    // Write-then-rename so concurrent readers never observe a partial file.
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

FlowField read_flow_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < 12 || !std::equal(kFlowMagic.begin(), kFlowMagic.end(), bytes.begin()))
        throw ParseError(path.string() + ": bad flow file magic", 0);
    FlowField f;
    f.height = get_u32(bytes, 4);
    f.width = get_u32(bytes, 8);
    const std::size_t n = f.width * f.height;
    if (bytes.size() != 12 + 8 * n)
        throw ParseError(path.string() + ": flow payload size mismatch", bytes.size());
    f.u.resize(n);
    f.v.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        f.u[i] = std::bit_cast<float>(get_u32(bytes, 12 + 4 * i));
        f.v[i] = std::bit_cast<float>(get_u32(bytes, 12 + 4 * (n + i)));
    }
    return f;
}

}  // namespace flowsteer
