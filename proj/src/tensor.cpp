#include "kdl/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <functional>
#include <numeric>

#include "kdl/error.hpp"

namespace kdl {

namespace {

std::uint64_t next_tensor_id() {
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1, std::memory_order_relaxed);
}

void check_shape(const Shape& shape) {
    if (shape.empty()) throw Error(ErrorCode::kShapeMismatch, "tensor shape must have rank >= 1");
    for (std::size_t d : shape) {
        if (d == 0) throw Error(ErrorCode::kShapeMismatch, "zero dimension in " + shape_to_string(shape));
    }
}

}  // namespace

std::size_t shape_numel(const Shape& shape) noexcept {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_to_string(const Shape& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : impl_(std::make_shared<Impl>()) {
    check_shape(shape);
    impl_->data.assign(shape_numel(shape), fill);
    impl_->shape = std::move(shape);
    impl_->id = next_tensor_id();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : impl_(std::make_shared<Impl>()) {
    check_shape(shape);
    if (shape_numel(shape) != data.size()) {
        throw Error(ErrorCode::kShapeMismatch, "shape " + shape_to_string(shape) + " needs " +
                                                   std::to_string(shape_numel(shape)) +
                                                   " elements, got " + std::to_string(data.size()));
    }
    impl_->shape = std::move(shape);
    impl_->data.assign(data.begin(), data.end());
    impl_->id = next_tensor_id();
}

template <typename T>
T Tensor<T>::item() const {
    if (numel() != 1) throw Error(ErrorCode::kNotScalar, "item() on " + shape_to_string(shape()));
    return impl_->data[0];
}

template <typename T>
std::span<T> Tensor<T>::grad() const {
    if (impl_->grad.size() != impl_->data.size()) impl_->grad.assign(impl_->data.size(), T(0));
    return impl_->grad;
}

template <typename T>
void Tensor<T>::zero_grad() const {
    impl_->grad.assign(impl_->data.size(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
    Tensor<T> copy(impl_->shape);
    std::copy(impl_->data.begin(), impl_->data.end(), copy.impl_->data.begin());
    return copy;
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace kdl
