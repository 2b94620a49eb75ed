#include "kdl/layers.hpp"

#include <cmath>

namespace kdl {

template <typename T>
void glorot_uniform(Tensor<T>& weight, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (auto& w : weight.data()) w = static_cast<T>(dist(rng));
}

template <typename T>
Dense<T> Dense<T>::create(std::size_t in, std::size_t out, std::mt19937_64& rng) {
    Dense d{Tensor<T>({in, out}), Tensor<T>({out})};
    glorot_uniform(d.weight, in, out, rng);
    return d;
}

template <typename T>
Tensor<T> Dense<T>::forward(Tape<T>& tape, const Tensor<T>& x) const {
    return ops::add(tape, ops::matmul(tape, x, weight), bias);
}

template <typename T>
void Dense<T>::register_into(ParameterSet<T>& params, const std::string& prefix, bool frozen) const {
    params.add(prefix + ".weight", weight, frozen);
    params.add(prefix + ".bias", bias, frozen);
}

template <typename T>
Conv2d<T> Conv2d<T>::create(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
                            std::size_t padding, std::mt19937_64& rng) {
    Conv2d c{Tensor<T>({out, in, kernel, kernel}), Tensor<T>({out}), ops::Conv2dAttrs{stride, padding}};
    glorot_uniform(c.weight, in * kernel * kernel, out * kernel * kernel, rng);
    return c;
}

template <typename T>
Tensor<T> Conv2d<T>::forward(Tape<T>& tape, const Tensor<T>& x) const {
    return ops::conv2d(tape, x, weight, bias, attrs);
}

template <typename T>
void Conv2d<T>::register_into(ParameterSet<T>& params, const std::string& prefix, bool frozen) const {
    params.add(prefix + ".weight", weight, frozen);
    params.add(prefix + ".bias", bias, frozen);
}

template void glorot_uniform(Tensor<float>&, std::size_t, std::size_t, std::mt19937_64&);
template void glorot_uniform(Tensor<double>&, std::size_t, std::size_t, std::mt19937_64&);
template struct Dense<float>;
template struct Dense<double>;
template struct Conv2d<float>;
template struct Conv2d<double>;

}  // namespace kdl
