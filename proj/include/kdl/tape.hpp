#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "kdl/tensor.hpp"

namespace kdl {

// Records differentiable operations in execution order. backward() replays the
// records once each, newest first, accumulating into input gradients.
//
// A tape in inference mode records nothing, so forward passes on it keep no
// intermediates alive. One tape per forward/backward pass; tapes are not
// shared between threads.
template <typename T>
class Tape {
public:
    enum class Mode { kRecord, kInference };
    using BackwardFn = std::function<void()>;

    struct Record {
        std::string op;
        std::vector<std::uint64_t> input_ids;
        std::uint64_t output_id = 0;
        Tensor<T> output;
        BackwardFn backward;
    };

    explicit Tape(Mode mode = Mode::kRecord) : mode_(mode) {}

    bool recording() const noexcept { return mode_ == Mode::kRecord; }

    // True when an op over these inputs must be recorded.
    bool needs_grad(std::initializer_list<const Tensor<T>*> inputs) const noexcept;
    bool needs_grad(std::span<const Tensor<T>> inputs) const noexcept;

    // Marks output as requiring grad and appends the record.
    void record(std::string op, std::vector<std::uint64_t> input_ids, Tensor<T> output,
                BackwardFn backward);

    // Seeds d(loss)/d(loss) = 1 and runs every record up to and including the
    // one that produced loss, in reverse order.
    void backward(Tensor<T> loss);

    std::size_t size() const noexcept { return records_.size(); }
    std::span<const Record> records() const noexcept { return records_; }
    void clear() noexcept { records_.clear(); }

private:
    Mode mode_;
    std::vector<Record> records_;
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace kdl
