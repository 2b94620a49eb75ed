#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace kdl {

using Shape = std::vector<std::size_t>;

// 64-byte aligned storage. Vectorised kernels peel differently depending on
// the start address, so alignment keeps results independent of heap layout.
template <typename T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t kAlign{64};

    AlignedAllocator() = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

    template <typename U>
    bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

std::size_t shape_numel(const Shape& shape) noexcept;
std::string shape_to_string(const Shape& shape);

// Dense row-major array with an optional gradient buffer. Tensor is a handle:
// copies share storage, so a parameter held by a layer and by a ParameterSet is
// the same object. The shape is fixed at construction.
template <typename T>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T(0));
    Tensor(Shape shape, std::vector<T> data);

    bool defined() const noexcept { return impl_ != nullptr; }

    const Shape& shape() const noexcept { return impl_->shape; }
    std::size_t rank() const noexcept { return impl_->shape.size(); }
    std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
    std::size_t numel() const noexcept { return impl_->data.size(); }
    std::uint64_t id() const noexcept { return impl_->id; }

    std::span<T> data() noexcept { return impl_->data; }
    std::span<const T> data() const noexcept { return impl_->data; }
    T item() const;

    bool requires_grad() const noexcept { return impl_->requires_grad; }
    void set_requires_grad(bool value) noexcept { impl_->requires_grad = value; }

    bool has_grad() const noexcept { return !impl_->grad.empty(); }
    // Allocates a zero-filled buffer on first access. Const like the rest of
    // the handle: gradients are written through shared handles during backward.
    std::span<T> grad() const;
    void zero_grad() const;
    void clear_grad() const noexcept { impl_->grad.clear(); impl_->grad.shrink_to_fit(); }

    // Deep copy of data only; the copy has no gradient and a fresh id.
    Tensor clone() const;

private:
    struct Impl {
        Shape shape;
        AlignedVector<T> data;
        AlignedVector<T> grad;
        bool requires_grad = false;
        std::uint64_t id = 0;
    };
    std::shared_ptr<Impl> impl_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace kdl
