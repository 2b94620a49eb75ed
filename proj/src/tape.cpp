#include "kdl/tape.hpp"

#include <algorithm>

#include "kdl/error.hpp"

namespace kdl {

template <typename T>
bool Tape<T>::needs_grad(std::initializer_list<const Tensor<T>*> inputs) const noexcept {
    if (!recording()) return false;
    return std::any_of(inputs.begin(), inputs.end(),
                       [](const Tensor<T>* t) { return t && t->defined() && t->requires_grad(); });
}

template <typename T>
bool Tape<T>::needs_grad(std::span<const Tensor<T>> inputs) const noexcept {
    if (!recording()) return false;
    return std::any_of(inputs.begin(), inputs.end(),
                       [](const Tensor<T>& t) { return t.defined() && t.requires_grad(); });
}

template <typename T>
void Tape<T>::record(std::string op, std::vector<std::uint64_t> input_ids, Tensor<T> output,
                     BackwardFn backward) {
    output.set_requires_grad(true);
    Record rec;
    rec.op = std::move(op);
    rec.input_ids = std::move(input_ids);
    rec.output_id = output.id();
    rec.output = std::move(output);
    rec.backward = std::move(backward);
    records_.push_back(std::move(rec));
}

template <typename T>
void Tape<T>::backward(Tensor<T> loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw Error(ErrorCode::kNotScalar,
                    "backward needs a single-element loss, got " +
                        (loss.defined() ? shape_to_string(loss.shape()) : std::string("undefined")));
    }
    auto it = std::find_if(records_.rbegin(), records_.rend(),
                           [&](const Record& r) { return r.output_id == loss.id(); });
    if (it == records_.rend()) {
        throw Error(ErrorCode::kEmptyTape, "loss was not produced by any recorded operation");
    }
    loss.grad()[0] += T(1);
    for (; it != records_.rend(); ++it) {
        if (it->output.has_grad()) it->backward();
    }
}

template class Tape<float>;
template class Tape<double>;

}  // namespace kdl
