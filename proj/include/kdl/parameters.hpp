#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "kdl/tensor.hpp"

namespace kdl {

// Ordered, path-addressed collection of parameter tensors with a frozen flag
// per entry. Frozen tensors have requires_grad == false, so backward never
// accumulates into them; zero_grad() still gives them a zero-filled gradient.
template <typename T>
class ParameterSet {
public:
    struct Entry {
        std::string path;
        Tensor<T> tensor;
        bool frozen = false;
    };

    // Throws BadConfig on a duplicate path.
    void add(std::string path, Tensor<T> tensor, bool frozen = false);
    // Re-prefixes and appends every entry of other.
    void merge(std::string_view prefix, const ParameterSet& other);

    bool contains(std::string_view path) const;
    Tensor<T>& at(std::string_view path);
    const Tensor<T>& at(std::string_view path) const;

    bool is_frozen(std::string_view path) const;
    void set_frozen(std::string_view path, bool frozen);
    void freeze_prefix(std::string_view prefix, bool frozen = true);

    std::size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }
    const std::vector<Entry>& entries() const noexcept { return entries_; }
    std::vector<std::string> paths() const;

    // Views sharing the same tensors.
    ParameterSet trainable() const;
    ParameterSet frozen() const;
    ParameterSet with_prefix(std::string_view prefix) const;

    void zero_grad();
    std::size_t element_count() const;

private:
    std::size_t index_of(std::string_view path) const;

    std::vector<Entry> entries_;
    std::map<std::string, std::size_t, std::less<>> index_;
};

// FNV-1a over the raw bytes of every entry's path and data, in order.
template <typename T>
std::uint64_t checksum(const ParameterSet<T>& params);

// Copies values for every path of src into dst (shapes must match).
template <typename T>
void assign_values(ParameterSet<T>& dst, const ParameterSet<T>& src);

enum class OptimizerKind { kSgd, kSgdMomentum, kAdam };

OptimizerKind parse_optimizer_kind(std::string_view name);
std::string_view optimizer_kind_name(OptimizerKind kind) noexcept;

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::kAdam;
    double lr = 1e-3;
    double momentum = 0.9;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

// Updates non-frozen entries in place from their gradients. Per-parameter
// state (velocity, Adam moments) is keyed by path and survives across calls.
template <typename T>
class Optimizer {
public:
    explicit Optimizer(OptimizerConfig config);

    // Throws MissingGrad if a trainable parameter has no gradient buffer.
    void step(ParameterSet<T>& params);

    const OptimizerConfig& config() const noexcept { return config_; }
    std::uint64_t steps_taken() const noexcept { return steps_; }

private:
    struct State {
        std::vector<T> first;
        std::vector<T> second;
    };

    OptimizerConfig config_;
    std::uint64_t steps_ = 0;
    std::map<std::string, State, std::less<>> state_;
};

extern template class ParameterSet<float>;
extern template class ParameterSet<double>;
extern template class Optimizer<float>;
extern template class Optimizer<double>;

}  // namespace kdl
