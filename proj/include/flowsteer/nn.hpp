#pragma once

// Named parameter storage and the small layer helpers the models are built from.

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "flowsteer/tensor.hpp"

namespace flowsteer {

class ParameterSet {
public:
    /// Registers a leaf tensor under a unique name and marks it trainable.
    Tensor add(std::string name, Tensor value);
    Tensor get(std::string_view name) const;
    bool contains(std::string_view name) const;

    const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
    std::vector<Tensor> tensors() const;
    std::size_t scalar_count() const;
    void zero_grad();

private:
    std::vector<std::pair<std::string, Tensor>> entries_;
};

/// Kaiming-uniform for conv/linear weights: U(-sqrt(6/fan_in), sqrt(6/fan_in)).
Tensor kaiming_uniform(const Shape& shape, std::size_t fan_in, std::mt19937_64& rng);
/// U(-1/sqrt(fan_in), 1/sqrt(fan_in)), used for recurrent weights.
Tensor uniform_inv_sqrt(const Shape& shape, std::size_t fan_in, std::mt19937_64& rng);

struct Linear {
    Tensor weight;  // [in, out]
    Tensor bias;    // [out]

    static Linear create(ParameterSet& params, const std::string& name, std::size_t in, std::size_t out,
                         std::mt19937_64& rng);
    /// x is [n, in]; returns [n, out].
    Tensor operator()(const Tensor& x) const;
};

struct Conv {
    Tensor kernels;  // [out, in, k, k]
    Tensor bias;     // [out]
    std::size_t stride = 1;
    std::size_t padding = 0;

    static Conv create(ParameterSet& params, const std::string& name, std::size_t in, std::size_t out,
                       std::size_t kernel, std::size_t stride, std::size_t padding, std::mt19937_64& rng);
    Tensor operator()(const Tensor& x) const { return conv2d(x, kernels, bias, stride, padding); }
};

struct LayerNorm {
    Tensor gain;   // [n], ones at init
    Tensor shift;  // [n], zeros at init

    static LayerNorm create(ParameterSet& params, const std::string& name, std::size_t n);
    Tensor operator()(const Tensor& x) const { return layer_norm(x, gain, shift); }
};

}  // namespace flowsteer
