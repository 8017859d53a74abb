#include "flowsteer/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "flowsteer/errors.hpp"
#include "gemm.hpp"

namespace flowsteer {

std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

namespace {

void check_shape(const Shape& shape) {
    for (auto e : shape)
        if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
}

// Splits a shape around `axis` into (outer, extent, inner) counts.
struct AxisSplit {
    std::size_t outer, extent, inner;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
    AxisSplit s{1, shape[axis], 1};
    for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
    return s;
}

template <class F>
Tensor unary(const Tensor& x, F value_and_slope) {
    const auto in = x.data();
    std::vector<double> out(in.size());
    std::vector<double> slope(x.requires_grad() ? in.size() : 0);
    for (std::size_t i = 0; i < in.size(); ++i) {
        auto [v, d] = value_and_slope(in[i]);
        out[i] = v;
        if (!slope.empty()) slope[i] = d;
    }
    return Tensor::make_result(x.shape(), std::move(out), {x},
                               [x, slope = std::move(slope)](std::span<const double> g) mutable {
                                   auto gx = x.grad_buffer();
                                   for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * slope[i];
                               });
}

}  // namespace

// ---------------------------------------------------------------- Tensor

Tensor::Tensor() : node_(std::make_shared<TensorNode>()) {
    node_->data.assign(1, 0.0);
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
    return full(shape, 0.0, requires_grad);
}

Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
    check_shape(shape);
    return from(shape, std::vector<double>(shape_numel(shape), value), requires_grad);
}

Tensor Tensor::from(const Shape& shape, std::vector<double> values, bool requires_grad) {
    check_shape(shape);
    if (shape_numel(shape) != values.size())
        throw DimensionError("tensor of shape " + shape_str(shape) + " needs " +
                             std::to_string(shape_numel(shape)) + " values, got " +
                             std::to_string(values.size()));
    auto node = std::make_shared<TensorNode>();
    node->shape = shape;
    node->data = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from({}, {value}, requires_grad);
}

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= rank())
        throw DimensionError("axis " + std::to_string(axis) + " out of range for " +
                             shape_str(shape()));
    return node_->shape[axis];
}

double Tensor::item() const {
    if (numel() != 1)
        throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
    if (index.size() != rank()) throw DimensionError("index rank does not match " + shape_str(shape()));
    std::size_t flat = 0, axis = 0;
    for (auto i : index) {
        if (i >= node_->shape[axis]) throw DimensionError("index out of range");
        flat = flat * node_->shape[axis++] + i;
    }
    return node_->data[flat];
}

void Tensor::set_requires_grad(bool flag) {
    if (!node_->is_leaf()) throw ContractError("requires_grad can only be set on leaf tensors");
    node_->requires_grad = flag;
}

std::vector<double> Tensor::grad() const {
    if (node_->grad.empty()) return std::vector<double>(numel(), 0.0);
    return node_->grad;
}

std::span<double> Tensor::grad_buffer() const {
    if (node_->grad.empty()) node_->grad.assign(numel(), 0.0);
    return node_->grad;
}

Tensor Tensor::detach() const {
    return from(shape(), node_->data, false);
}

Tensor Tensor::make_result(Shape shape, std::vector<double> data, const std::vector<Tensor>& inputs,
                           BackwardFn backward) {
    auto node = std::make_shared<TensorNode>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    for (const auto& in : inputs)
        if (in.requires_grad()) node->parents.push_back(in.node_);
    if (!node->parents.empty()) {
        node->requires_grad = true;
        node->backward = std::move(backward);
    }
    return Tensor(std::move(node));
}

void Tensor::backward() const {
    if (numel() != 1)
        throw ContractError("backward() needs a scalar root, got " + shape_str(shape()));
    if (!requires_grad()) throw ContractError("backward() on a tensor that is not part of a graph");

    // Iterative post-order DFS gives a topological order (parents first).
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> seen;
    std::vector<std::pair<TensorNode*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            TensorNode* p = node->parents[next++].get();
            if (seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (auto* n : order)
        if (!n->is_leaf()) n->grad.assign(n->data.size(), 0.0);
    if (node_->grad.empty()) node_->grad.assign(1, 0.0);
    node_->grad[0] += 1.0;

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode* n = *it;
        if (n->backward) n->backward(n->grad);
    }
}

// ---------------------------------------------------------------- elementwise

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape("add", a, b);
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
    return Tensor::make_result(a.shape(), std::move(out), {a, b},
                               [a, b](std::span<const double> g) mutable {
                                   if (a.requires_grad()) {
                                       auto ga = a.grad_buffer();
                                       for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                                   }
                                   if (b.requires_grad()) {
                                       auto gb = b.grad_buffer();
                                       for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
                                   }
                               });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape("sub", a, b);
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
    return Tensor::make_result(a.shape(), std::move(out), {a, b},
                               [a, b](std::span<const double> g) mutable {
                                   if (a.requires_grad()) {
                                       auto ga = a.grad_buffer();
                                       for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                                   }
                                   if (b.requires_grad()) {
                                       auto gb = b.grad_buffer();
                                       for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                                   }
                               });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape("mul", a, b);
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
    return Tensor::make_result(a.shape(), std::move(out), {a, b},
                               [a, b](std::span<const double> g) mutable {
                                   if (a.requires_grad()) {
                                       auto ga = a.grad_buffer();
                                       for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b[i];
                                   }
                                   if (b.requires_grad()) {
                                       auto gb = b.grad_buffer();
                                       for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a[i];
                                   }
                               });
}

Tensor scale(const Tensor& a, double factor) {
    return unary(a, [factor](double v) { return std::pair{v * factor, factor}; });
}

Tensor add_scalar(const Tensor& a, double offset) {
    return unary(a, [offset](double v) { return std::pair{v + offset, 1.0}; });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
    if (bias.rank() != 1 || x.rank() == 0 || x.shape().back() != bias.dim(0))
        throw DimensionError("add_bias: cannot broadcast " + shape_str(bias.shape()) + " over " +
                             shape_str(x.shape()));
    const std::size_t n = bias.dim(0);
    std::vector<double> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + bias[i % n];
    return Tensor::make_result(x.shape(), std::move(out), {x, bias},
                               [x, bias, n](std::span<const double> g) mutable {
                                   if (x.requires_grad()) {
                                       auto gx = x.grad_buffer();
                                       for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                                   }
                                   if (bias.requires_grad()) {
                                       auto gb = bias.grad_buffer();
                                       for (std::size_t i = 0; i < g.size(); ++i) gb[i % n] += g[i];
                                   }
                               });
}

// ---------------------------------------------------------------- structural

Tensor reshape(const Tensor& a, const Shape& shape) {
    if (shape_numel(shape) != a.numel())
        throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    return Tensor::make_result(shape, a.values(), {a}, [a](std::span<const double> g) mutable {
        auto ga = a.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
}

Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) throw DimensionError("transpose: rank-2 tensor required, got " + shape_str(a.shape()));
    const std::size_t r = a.dim(0), c = a.dim(1);
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a[i * c + j];
    return Tensor::make_result({c, r}, std::move(out), {a}, [a, r, c](std::span<const double> g) mutable {
        auto ga = a.grad_buffer();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
    });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw ContractError("concat: no inputs");
    const Shape& first = parts.front().shape();
    if (axis >= first.size()) throw DimensionError("concat: axis out of range for " + shape_str(first));
    Shape out_shape = first;
    out_shape[axis] = 0;
    for (const auto& p : parts) {
        Shape s = p.shape();
        if (s.size() != first.size()) throw DimensionError("concat: rank mismatch");
        for (std::size_t i = 0; i < s.size(); ++i)
            if (i != axis && s[i] != first[i])
                throw DimensionError("concat: shape mismatch " + shape_str(first) + " vs " + shape_str(s));
        out_shape[axis] += s[axis];
    }
    const auto split = split_axis(out_shape, axis);
    std::vector<double> out(shape_numel(out_shape));
    std::vector<std::size_t> offsets;
    std::size_t offset = 0;
    for (const auto& p : parts) {
        offsets.push_back(offset);
        const std::size_t chunk = p.dim(axis) * split.inner;
        for (std::size_t o = 0; o < split.outer; ++o)
            std::copy_n(p.data().begin() + o * chunk, chunk,
                        out.begin() + o * split.extent * split.inner + offset);
        offset += chunk;
    }
    return Tensor::make_result(out_shape, std::move(out), parts,
                               [parts, offsets, split, axis](std::span<const double> g) mutable {
                                   for (std::size_t k = 0; k < parts.size(); ++k) {
                                       if (!parts[k].requires_grad()) continue;
                                       auto gp = parts[k].grad_buffer();
                                       const std::size_t chunk = parts[k].dim(axis) * split.inner;
                                       for (std::size_t o = 0; o < split.outer; ++o) {
                                           const double* src = g.data() + o * split.extent * split.inner + offsets[k];
                                           for (std::size_t i = 0; i < chunk; ++i) gp[o * chunk + i] += src[i];
                                       }
                                   }
                               });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
    if (axis >= a.rank() || begin >= end || end > a.dim(axis))
        throw DimensionError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                             ") invalid for axis " + std::to_string(axis) + " of " + shape_str(a.shape()));
    Shape out_shape = a.shape();
    out_shape[axis] = end - begin;
    const auto split = split_axis(a.shape(), axis);
    const std::size_t chunk = (end - begin) * split.inner;
    std::vector<double> out(shape_numel(out_shape));
    for (std::size_t o = 0; o < split.outer; ++o)
        std::copy_n(a.data().begin() + (o * split.extent + begin) * split.inner, chunk,
                    out.begin() + o * chunk);
    return Tensor::make_result(out_shape, std::move(out), {a},
                               [a, split, begin, chunk](std::span<const double> g) mutable {
                                   auto ga = a.grad_buffer();
                                   for (std::size_t o = 0; o < split.outer; ++o) {
                                       double* dst = ga.data() + (o * split.extent + begin) * split.inner;
                                       for (std::size_t i = 0; i < chunk; ++i) dst[i] += g[o * chunk + i];
                                   }
                               });
}

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> indices) {
    if (a.rank() == 0 || indices.empty()) throw DimensionError("gather_rows: empty selection");
    const std::size_t rows = a.dim(0);
    const std::size_t width = a.numel() / rows;
    std::vector<std::size_t> idx(indices.begin(), indices.end());
    Shape out_shape = a.shape();
    out_shape[0] = idx.size();
    std::vector<double> out(idx.size() * width);
    for (std::size_t r = 0; r < idx.size(); ++r) {
        if (idx[r] >= rows) throw DimensionError("gather_rows: index " + std::to_string(idx[r]) + " out of range");
        std::copy_n(a.data().begin() + idx[r] * width, width, out.begin() + r * width);
    }
    return Tensor::make_result(out_shape, std::move(out), {a},
                               [a, idx = std::move(idx), width](std::span<const double> g) mutable {
                                   auto ga = a.grad_buffer();
                                   for (std::size_t r = 0; r < idx.size(); ++r)
                                       for (std::size_t i = 0; i < width; ++i) ga[idx[r] * width + i] += g[r * width + i];
                               });
}

Tensor stack(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ContractError("stack: no inputs");
    std::vector<Tensor> rows;
    rows.reserve(parts.size());
    for (const auto& p : parts) {
        if (p.shape() != parts.front().shape())
            throw DimensionError("stack: shape mismatch " + shape_str(parts.front().shape()) + " vs " +
                                 shape_str(p.shape()));
        Shape s{1};
        s.insert(s.end(), p.shape().begin(), p.shape().end());
        rows.push_back(reshape(p, s));
    }
    return concat(rows, 0);
}

// ---------------------------------------------------------------- matmul

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<double> out(m * n, 0.0);
    detail::gemm_nn(m, n, k, a.data().data(), b.data().data(), out.data());
    return Tensor::make_result({m, n}, std::move(out), {a, b},
                               [a, b, m, k, n](std::span<const double> g) mutable {
                                   if (a.requires_grad())
                                       detail::gemm_nt(m, k, n, g.data(), b.data().data(), a.grad_buffer().data());
                                   if (b.requires_grad())
                                       detail::gemm_tn(k, n, m, a.data().data(), g.data(), b.grad_buffer().data());
                               });
}

// ---------------------------------------------------------------- pointwise

Tensor relu(const Tensor& x) {
    return unary(x, [](double v) { return v > 0.0 ? std::pair{v, 1.0} : std::pair{0.0, 0.0}; });
}

Tensor tanh(const Tensor& x) {
    return unary(x, [](double v) {
        const double t = std::tanh(v);
        return std::pair{t, 1.0 - t * t};
    });
}

Tensor sigmoid(const Tensor& x) {
    return unary(x, [](double v) {
        const double s = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
        return std::pair{s, s * (1.0 - s)};
    });
}

Tensor square(const Tensor& x) {
    return unary(x, [](double v) { return std::pair{v * v, 2.0 * v}; });
}

Tensor sqrt(const Tensor& x) {
    return unary(x, [](double v) {
        if (v < 0.0) throw ContractError("sqrt of negative value");
        const double r = std::sqrt(v);
        return std::pair{r, r > 0.0 ? 0.5 / r : 0.0};
    });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
    if (axis >= x.rank()) throw DimensionError("softmax: axis out of range for " + shape_str(x.shape()));
    const auto s = split_axis(x.shape(), axis);
    std::vector<double> out(x.numel());
    for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t i = 0; i < s.inner; ++i) {
            const std::size_t base = o * s.extent * s.inner + i;
            double mx = x[base];
            for (std::size_t e = 1; e < s.extent; ++e) mx = std::max(mx, x[base + e * s.inner]);
            double total = 0.0;
            for (std::size_t e = 0; e < s.extent; ++e) {
                const double v = std::exp(x[base + e * s.inner] - mx);
                out[base + e * s.inner] = v;
                total += v;
            }
            for (std::size_t e = 0; e < s.extent; ++e) out[base + e * s.inner] /= total;
        }
    }
    auto saved = out;
    return Tensor::make_result(x.shape(), std::move(out), {x},
                               [x, s, y = std::move(saved)](std::span<const double> g) mutable {
                                   auto gx = x.grad_buffer();
                                   for (std::size_t o = 0; o < s.outer; ++o) {
                                       for (std::size_t i = 0; i < s.inner; ++i) {
                                           const std::size_t base = o * s.extent * s.inner + i;
                                           double dot = 0.0;
                                           for (std::size_t e = 0; e < s.extent; ++e)
                                               dot += g[base + e * s.inner] * y[base + e * s.inner];
                                           for (std::size_t e = 0; e < s.extent; ++e) {
                                               const std::size_t k = base + e * s.inner;
                                               gx[k] += y[k] * (g[k] - dot);
                                           }
                                       }
                                   }
                               });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift, double eps) {
    if (x.rank() == 0) throw DimensionError("layer_norm: rank-0 input");
    const std::size_t n = x.shape().back();
    if (n < 2) throw DimensionError("layer_norm: last axis must have length >= 2");
    if (gain.shape() != Shape{n} || shift.shape() != Shape{n})
        throw DimensionError("layer_norm: gain/shift must be [" + std::to_string(n) + "]");
    const std::size_t rows = x.numel() / n;
    std::vector<double> xhat(x.numel()), inv_std(rows), out(x.numel());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = x.data().data() + r * n;
        double mu = 0.0;
        for (std::size_t i = 0; i < n; ++i) mu += row[i];
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t i = 0; i < n; ++i) var += (row[i] - mu) * (row[i] - mu);
        var /= static_cast<double>(n);
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t i = 0; i < n; ++i) {
            xhat[r * n + i] = (row[i] - mu) * inv_std[r];
            out[r * n + i] = xhat[r * n + i] * gain[i] + shift[i];
        }
    }
    return Tensor::make_result(
        x.shape(), std::move(out), {x, gain, shift},
        [x, gain, shift, xhat = std::move(xhat), inv_std = std::move(inv_std), n, rows](
            std::span<const double> g) mutable {
            if (gain.requires_grad()) {
                auto gg = gain.grad_buffer();
                for (std::size_t k = 0; k < g.size(); ++k) gg[k % n] += g[k] * xhat[k];
            }
            if (shift.requires_grad()) {
                auto gs = shift.grad_buffer();
                for (std::size_t k = 0; k < g.size(); ++k) gs[k % n] += g[k];
            }
            if (!x.requires_grad()) return;
            auto gx = x.grad_buffer();
            std::vector<double> dxhat(n);
            for (std::size_t r = 0; r < rows; ++r) {
                double mean_d = 0.0, mean_dx = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    dxhat[i] = g[r * n + i] * gain[i];
                    mean_d += dxhat[i];
                    mean_dx += dxhat[i] * xhat[r * n + i];
                }
                mean_d /= static_cast<double>(n);
                mean_dx /= static_cast<double>(n);
                for (std::size_t i = 0; i < n; ++i)
                    gx[r * n + i] += inv_std[r] * (dxhat[i] - mean_d - xhat[r * n + i] * mean_dx);
            }
        });
}

Tensor sum(const Tensor& x) {
    double total = 0.0;
    for (double v : x.data()) total += v;
    return Tensor::make_result({}, {total}, {x}, [x](std::span<const double> g) mutable {
        auto gx = x.grad_buffer();
        for (auto& v : gx) v += g[0];
    });
}

Tensor mean(const Tensor& x) {
    return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

// ---------------------------------------------------------------- convolution

std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding) {
    if (stride == 0) throw DimensionError("convolution stride must be positive");
    if (kernel > in + 2 * padding)
        throw DimensionError("kernel extent " + std::to_string(kernel) + " exceeds padded input extent " +
                             std::to_string(in + 2 * padding));
    return (in + 2 * padding - kernel) / stride + 1;
}

namespace {

struct ConvGeometry {
    std::size_t channels, height, width, kh, kw, stride, padding, out_h, out_w;
    std::size_t patch() const { return channels * kh * kw; }
    std::size_t positions() const { return out_h * out_w; }
};

void im2col(const ConvGeometry& geo, const double* image, double* cols) {
    const std::size_t positions = geo.positions();
    for (std::size_t c = 0; c < geo.channels; ++c)
        for (std::size_t ki = 0; ki < geo.kh; ++ki)
            for (std::size_t kj = 0; kj < geo.kw; ++kj) {
                double* row = cols + ((c * geo.kh + ki) * geo.kw + kj) * positions;
                for (std::size_t oy = 0; oy < geo.out_h; ++oy) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * geo.stride + ki) -
                                    static_cast<std::ptrdiff_t>(geo.padding);
                    for (std::size_t ox = 0; ox < geo.out_w; ++ox) {
                        const auto ix = static_cast<std::ptrdiff_t>(ox * geo.stride + kj) -
                                        static_cast<std::ptrdiff_t>(geo.padding);
                        const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(geo.height) &&
                                            ix < static_cast<std::ptrdiff_t>(geo.width);
                        row[oy * geo.out_w + ox] =
                            inside ? image[(c * geo.height + static_cast<std::size_t>(iy)) * geo.width +
                                           static_cast<std::size_t>(ix)]
                                   : 0.0;
                    }
                }
            }
}

void col2im_add(const ConvGeometry& geo, const double* cols, double* image) {
    const std::size_t positions = geo.positions();
    for (std::size_t c = 0; c < geo.channels; ++c)
        for (std::size_t ki = 0; ki < geo.kh; ++ki)
            for (std::size_t kj = 0; kj < geo.kw; ++kj) {
                const double* row = cols + ((c * geo.kh + ki) * geo.kw + kj) * positions;
                for (std::size_t oy = 0; oy < geo.out_h; ++oy) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * geo.stride + ki) -
                                    static_cast<std::ptrdiff_t>(geo.padding);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(geo.height)) continue;
                    for (std::size_t ox = 0; ox < geo.out_w; ++ox) {
                        const auto ix = static_cast<std::ptrdiff_t>(ox * geo.stride + kj) -
                                        static_cast<std::ptrdiff_t>(geo.padding);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(geo.width)) continue;
                        image[(c * geo.height + static_cast<std::size_t>(iy)) * geo.width +
                              static_cast<std::size_t>(ix)] += row[oy * geo.out_w + ox];
                    }
                }
            }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernels, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
    if (input.rank() != 3 && input.rank() != 4)
        throw DimensionError("conv2d: input must be [C,H,W] or [N,C,H,W], got " + shape_str(input.shape()));
    if (kernels.rank() != 4)
        throw DimensionError("conv2d: kernels must be [Cout,Cin,kh,kw], got " + shape_str(kernels.shape()));
    const bool batched = input.rank() == 4;
    const std::size_t batch = batched ? input.dim(0) : 1;
    const std::size_t off = batched ? 1 : 0;
    ConvGeometry geo{};
    geo.channels = input.dim(off);
    geo.height = input.dim(off + 1);
    geo.width = input.dim(off + 2);
    const std::size_t out_c = kernels.dim(0);
    if (kernels.dim(1) != geo.channels)
        throw DimensionError("conv2d: kernel channels " + shape_str(kernels.shape()) +
                             " do not match input " + shape_str(input.shape()));
    if (bias.shape() != Shape{out_c})
        throw DimensionError("conv2d: bias must be [" + std::to_string(out_c) + "], got " +
                             shape_str(bias.shape()));
    geo.kh = kernels.dim(2);
    geo.kw = kernels.dim(3);
    geo.stride = stride;
    geo.padding = padding;
    if (geo.kh > geo.height + 2 * padding || geo.kw > geo.width + 2 * padding)
        throw DimensionError("conv2d: kernel " + shape_str(kernels.shape()) + " larger than input " +
                             shape_str(input.shape()));
    geo.out_h = conv_out_extent(geo.height, geo.kh, stride, padding);
    geo.out_w = conv_out_extent(geo.width, geo.kw, stride, padding);

    const std::size_t in_size = geo.channels * geo.height * geo.width;
    const std::size_t positions = geo.positions();
    const std::size_t patch = geo.patch();
    const std::size_t out_size = out_c * positions;

    auto cols = std::make_shared<std::vector<double>>(batch * patch * positions);
    std::vector<double> out(batch * out_size);
    for (std::size_t n = 0; n < batch; ++n) {
        double* cn = cols->data() + n * patch * positions;
        im2col(geo, input.data().data() + n * in_size, cn);
        double* on = out.data() + n * out_size;
        for (std::size_t oc = 0; oc < out_c; ++oc) std::fill_n(on + oc * positions, positions, bias[oc]);
        detail::gemm_nn(out_c, positions, patch, kernels.data().data(), cn, on);
    }

    Shape out_shape = batched ? Shape{batch, out_c, geo.out_h, geo.out_w} : Shape{out_c, geo.out_h, geo.out_w};
    return Tensor::make_result(
        out_shape, std::move(out), {input, kernels, bias},
        [input, kernels, bias, geo, cols, batch, out_c, in_size, out_size, patch, positions](
            std::span<const double> g) mutable {
            std::vector<double> dcols;
            if (input.requires_grad()) dcols.resize(patch * positions);
            for (std::size_t n = 0; n < batch; ++n) {
                const double* gn = g.data() + n * out_size;
                const double* cn = cols->data() + n * patch * positions;
                if (bias.requires_grad()) {
                    auto gb = bias.grad_buffer();
                    for (std::size_t oc = 0; oc < out_c; ++oc) {
                        double acc = 0.0;
                        for (std::size_t p = 0; p < positions; ++p) acc += gn[oc * positions + p];
                        gb[oc] += acc;
                    }
                }
                if (kernels.requires_grad())
                    detail::gemm_nt(out_c, patch, positions, gn, cn, kernels.grad_buffer().data());
                if (input.requires_grad()) {
                    std::fill(dcols.begin(), dcols.end(), 0.0);
                    detail::gemm_tn(patch, positions, out_c, kernels.data().data(), gn, dcols.data());
                    col2im_add(geo, dcols.data(), input.grad_buffer().data() + n * in_size);
                }
            }
        });
}

Tensor global_avg_pool(const Tensor& x) {
    if (x.rank() != 3 && x.rank() != 4)
        throw DimensionError("global_avg_pool: expected [C,H,W] or [N,C,H,W], got " + shape_str(x.shape()));
    const std::size_t plane = x.shape()[x.rank() - 1] * x.shape()[x.rank() - 2];
    const std::size_t maps = x.numel() / plane;
    Shape out_shape(x.shape().begin(), x.shape().end() - 2);
    std::vector<double> out(maps);
    for (std::size_t m = 0; m < maps; ++m) {
        double acc = 0.0;
        for (std::size_t p = 0; p < plane; ++p) acc += x[m * plane + p];
        out[m] = acc / static_cast<double>(plane);
    }
    return Tensor::make_result(out_shape, std::move(out), {x}, [x, plane, maps](std::span<const double> g) mutable {
        auto gx = x.grad_buffer();
        const double inv = 1.0 / static_cast<double>(plane);
        for (std::size_t m = 0; m < maps; ++m)
            for (std::size_t p = 0; p < plane; ++p) gx[m * plane + p] += g[m] * inv;
    });
}

// ---------------------------------------------------------------- gradient check

namespace {

double relative_gap(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max({1.0, std::abs(analytic), std::abs(numeric)});
}

}  // namespace

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h) {
    Tensor leaf = x.detach();
    leaf.set_requires_grad(true);
    std::vector<Tensor> params{leaf};
    return grad_check([&] { return f(leaf); }, params, h);
}

double grad_check(const std::function<Tensor()>& f, std::span<Tensor> params, double h,
                  std::size_t max_per_tensor) {
    for (auto& p : params) p.zero_grad();
    f().backward();
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (auto& p : params) analytic.push_back(p.grad());

    double worst = 0.0;
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto values = params[k].mutable_data();
        std::vector<std::size_t> probe;
        const std::size_t n = values.size();
        if (max_per_tensor == 0 || n <= max_per_tensor) {
            for (std::size_t i = 0; i < n; ++i) probe.push_back(i);
        } else if (max_per_tensor == 1) {
            probe.push_back(n - 1);
        } else {
            for (std::size_t j = 0; j < max_per_tensor; ++j) probe.push_back(j * (n - 1) / (max_per_tensor - 1));
        }
        for (std::size_t i : probe) {
            const double saved = values[i];
            values[i] = saved + h;
            const double up = f().item();
            values[i] = saved - h;
            const double down = f().item();
            values[i] = saved;
            worst = std::max(worst, relative_gap(analytic[k][i], (up - down) / (2.0 * h)));
        }
    }
    for (auto& p : params) p.zero_grad();
    return worst;
}

}  // namespace flowsteer
