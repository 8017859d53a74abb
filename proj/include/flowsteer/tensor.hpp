#pragma once

// Dense fp64 tensors with reverse-mode automatic differentiation.
//
// Every op that has at least one input with requires_grad() records its
// inputs and a backward closure on the result. Calling backward() on a scalar
// result sorts the recorded graph topologically and replays the closures in
// reverse order. Leaf gradients accumulate across calls until zero_grad().
//
// A Tensor is a cheap handle: copies share storage. Use clone() for a deep
// copy and detach() to cut a value out of its graph.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace flowsteer {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor;

/// Receives the gradient of the op's output and accumulates into its inputs.
using BackwardFn = std::function<void(std::span<const double> out_grad)>;

struct TensorNode {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    BackwardFn backward;

    bool is_leaf() const { return parents.empty(); }
};

class Tensor {
public:
    Tensor();  // scalar zero

    static Tensor zeros(const Shape& shape, bool requires_grad = false);
    static Tensor full(const Shape& shape, double value, bool requires_grad = false);
    static Tensor from(const Shape& shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const { return node_->data.size(); }

    std::span<const double> data() const { return node_->data; }
    /// Writable view. Intended for leaves (parameters, inputs); writing into an
    /// interior node invalidates any backward pass that reads it.
    std::span<double> mutable_data() { return node_->data; }
    std::vector<double> values() const { return node_->data; }

    double item() const;
    double operator[](std::size_t flat_index) const { return node_->data[flat_index]; }
    double at(std::initializer_list<std::size_t> index) const;

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool flag);

    bool has_grad() const { return !node_->grad.empty(); }
    /// Gradient accumulator; zeros if nothing has been accumulated yet.
    std::vector<double> grad() const;
    std::span<double> grad_buffer() const;
    void zero_grad() { node_->grad.clear(); }

    void backward() const;

    Tensor detach() const;
    Tensor clone() const { return detach(); }

    bool same_node(const Tensor& other) const { return node_ == other.node_; }
    const std::shared_ptr<TensorNode>& node() const { return node_; }

    /// Builds an op result. Inputs that do not require gradients are dropped
    /// from the record; when none require them the backward closure is discarded.
    static Tensor make_result(Shape shape, std::vector<double> data,
                              const std::vector<Tensor>& inputs, BackwardFn backward);

private:
    explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}
    std::shared_ptr<TensorNode> node_;
};

// ---- elementwise and structural ops ----

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double offset);
/// x[..., n] + bias[n], broadcast over all leading axes.
Tensor add_bias(const Tensor& x, const Tensor& bias);

Tensor reshape(const Tensor& a, const Shape& shape);
Tensor transpose(const Tensor& a);  // rank 2 only
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end);
/// Rows of `a` along axis 0 in the order given; indices may repeat.
Tensor gather_rows(const Tensor& a, std::span<const std::size_t> indices);
/// Stacks equal-shaped tensors along a new leading axis.
Tensor stack(const std::vector<Tensor>& parts);

Tensor matmul(const Tensor& a, const Tensor& b);

Tensor relu(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor square(const Tensor& x);
/// Square root; the derivative at exactly 0 is taken as 0.
Tensor sqrt(const Tensor& x);

Tensor softmax(const Tensor& x, std::size_t axis);
inline constexpr double kLayerNormEps = 1e-5;
/// Normalizes the last axis to zero mean and unit variance, then applies gain and shift.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift,
                  double eps = kLayerNormEps);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// Cross-correlation. input is [C,H,W] or [N,C,H,W]; kernels [Cout,C,kh,kw];
/// bias [Cout]. Output extent is floor((H + 2*padding - kh)/stride) + 1.
Tensor conv2d(const Tensor& input, const Tensor& kernels, const Tensor& bias,
              std::size_t stride, std::size_t padding = 0);
/// [C,H,W] -> [C], [N,C,H,W] -> [N,C].
Tensor global_avg_pool(const Tensor& x);

/// Output extent of a convolution along one axis.
std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                            std::size_t padding = 0);

// ---- finite-difference oracle ----

/// max_i |analytic_i - numeric_i| / max(1, |analytic_i|, |numeric_i|) using
/// central differences of step h. `f` must return a scalar.
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                  double h = 1e-6);

/// Same measure over the coordinates of every tensor in `params`, which are
/// perturbed in place and restored. `f` rebuilds the graph on each call.
/// With max_per_tensor > 0, at most that many evenly spaced coordinates of
/// each tensor are probed (always including the first and last).
double grad_check(const std::function<Tensor()>& f, std::span<Tensor> params,
                  double h = 1e-6, std::size_t max_per_tensor = 0);

}  // namespace flowsteer
