#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "kdl/ops.hpp"
#include "kdl/parameters.hpp"

namespace kdl {

// Uniform in +-sqrt(6 / (fan_in + fan_out)).
template <typename T>
void glorot_uniform(Tensor<T>& weight, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng);

// y = x W + b, W is [in, out].
template <typename T>
struct Dense {
    Tensor<T> weight;
    Tensor<T> bias;

    static Dense create(std::size_t in, std::size_t out, std::mt19937_64& rng);
    std::size_t in_features() const { return weight.dim(0); }
    std::size_t out_features() const { return weight.dim(1); }
    Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x) const;
    void register_into(ParameterSet<T>& params, const std::string& prefix, bool frozen = false) const;
};

template <typename T>
struct Conv2d {
    Tensor<T> weight;  // [out, in, k, k]
    Tensor<T> bias;    // [out]
    ops::Conv2dAttrs attrs;

    static Conv2d create(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
                         std::size_t padding, std::mt19937_64& rng);
    std::size_t in_channels() const { return weight.dim(1); }
    std::size_t out_channels() const { return weight.dim(0); }
    Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x) const;
    void register_into(ParameterSet<T>& params, const std::string& prefix, bool frozen = false) const;
};

}  // namespace kdl
