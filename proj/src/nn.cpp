#include "flowsteer/nn.hpp"

#include <algorithm>
#include <cmath>

#include "flowsteer/errors.hpp"

namespace flowsteer {

Tensor ParameterSet::add(std::string name, Tensor value) {
    if (contains(name)) throw ContractError("duplicate parameter name '" + name + "'");
    value.set_requires_grad(true);
    entries_.emplace_back(std::move(name), value);
    return value;
}

Tensor ParameterSet::get(std::string_view name) const {
    for (const auto& [n, t] : entries_)
        if (n == name) return t;
    throw ContractError("no parameter named '" + std::string(name) + "'");
}

bool ParameterSet::contains(std::string_view name) const {
    return std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) { return e.first == name; });
}

std::vector<Tensor> ParameterSet::tensors() const {
    std::vector<Tensor> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(e.second);
    return out;
}

std::size_t ParameterSet::scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.second.numel();
    return n;
}

void ParameterSet::zero_grad() {
    for (auto& e : entries_) e.second.zero_grad();
}

namespace {

Tensor uniform(const Shape& shape, double bound, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = dist(rng);
    return Tensor::from(shape, std::move(v));
}

}  // namespace

Tensor kaiming_uniform(const Shape& shape, std::size_t fan_in, std::mt19937_64& rng) {
    return uniform(shape, std::sqrt(6.0 / static_cast<double>(fan_in)), rng);
}

Tensor uniform_inv_sqrt(const Shape& shape, std::size_t fan_in, std::mt19937_64& rng) {
    return uniform(shape, 1.0 / std::sqrt(static_cast<double>(fan_in)), rng);
}

Linear Linear::create(ParameterSet& params, const std::string& name, std::size_t in, std::size_t out,
                      std::mt19937_64& rng) {
    Linear l;
    l.weight = params.add(name + ".w", kaiming_uniform({in, out}, in, rng));
    l.bias = params.add(name + ".b", Tensor::zeros({out}));
    return l;
}

Tensor Linear::operator()(const Tensor& x) const {
    return add_bias(matmul(x, weight), bias);
}

Conv Conv::create(ParameterSet& params, const std::string& name, std::size_t in, std::size_t out,
                  std::size_t kernel, std::size_t stride, std::size_t padding, std::mt19937_64& rng) {
    Conv c;
    c.kernels = params.add(name + ".w", kaiming_uniform({out, in, kernel, kernel}, in * kernel * kernel, rng));
    c.bias = params.add(name + ".b", Tensor::zeros({out}));
    c.stride = stride;
    c.padding = padding;
    return c;
}

LayerNorm LayerNorm::create(ParameterSet& params, const std::string& name, std::size_t n) {
    LayerNorm ln;
    ln.gain = params.add(name + ".gain", Tensor::full({n}, 1.0));
    ln.shift = params.add(name + ".shift", Tensor::zeros({n}));
    return ln;
}

}  // namespace flowsteer
