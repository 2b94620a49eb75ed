#include "kdl/parameters.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "kdl/error.hpp"

namespace kdl {

template <typename T>
void ParameterSet<T>::add(std::string path, Tensor<T> tensor, bool frozen) {
    if (index_.count(path)) throw Error(ErrorCode::kBadConfig, "duplicate parameter path '" + path + "'");
    tensor.set_requires_grad(!frozen);
    index_.emplace(path, entries_.size());
    entries_.push_back(Entry{std::move(path), std::move(tensor), frozen});
}

template <typename T>
void ParameterSet<T>::merge(std::string_view prefix, const ParameterSet& other) {
    for (const auto& e : other.entries_) add(std::string(prefix) + e.path, e.tensor, e.frozen);
}

template <typename T>
std::size_t ParameterSet<T>::index_of(std::string_view path) const {
    auto it = index_.find(path);
    if (it == index_.end()) throw Error(ErrorCode::kBadConfig, "unknown parameter '" + std::string(path) + "'");
    return it->second;
}

template <typename T>
bool ParameterSet<T>::contains(std::string_view path) const {
    return index_.find(path) != index_.end();
}

template <typename T>
Tensor<T>& ParameterSet<T>::at(std::string_view path) {
    return entries_[index_of(path)].tensor;
}

template <typename T>
const Tensor<T>& ParameterSet<T>::at(std::string_view path) const {
    return entries_[index_of(path)].tensor;
}

template <typename T>
bool ParameterSet<T>::is_frozen(std::string_view path) const {
    return entries_[index_of(path)].frozen;
}

template <typename T>
void ParameterSet<T>::set_frozen(std::string_view path, bool frozen) {
    auto& e = entries_[index_of(path)];
    e.frozen = frozen;
    e.tensor.set_requires_grad(!frozen);
}

template <typename T>
void ParameterSet<T>::freeze_prefix(std::string_view prefix, bool frozen) {
    for (auto& e : entries_) {
        if (std::string_view(e.path).starts_with(prefix)) {
            e.frozen = frozen;
            e.tensor.set_requires_grad(!frozen);
        }
    }
}

template <typename T>
std::vector<std::string> ParameterSet<T>::paths() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(e.path);
    return out;
}

template <typename T>
ParameterSet<T> ParameterSet<T>::trainable() const {
    ParameterSet out;
    for (const auto& e : entries_) {
        if (!e.frozen) {
            out.index_.emplace(e.path, out.entries_.size());
            out.entries_.push_back(e);
        }
    }
    return out;
}

template <typename T>
ParameterSet<T> ParameterSet<T>::frozen() const {
    ParameterSet out;
    for (const auto& e : entries_) {
        if (e.frozen) {
            out.index_.emplace(e.path, out.entries_.size());
            out.entries_.push_back(e);
        }
    }
    return out;
}

template <typename T>
ParameterSet<T> ParameterSet<T>::with_prefix(std::string_view prefix) const {
    ParameterSet out;
    for (const auto& e : entries_) {
        if (std::string_view(e.path).starts_with(prefix)) {
            out.index_.emplace(e.path, out.entries_.size());
            out.entries_.push_back(e);
        }
    }
    return out;
}

template <typename T>
void ParameterSet<T>::zero_grad() {
    for (auto& e : entries_) e.tensor.zero_grad();
}

template <typename T>
std::size_t ParameterSet<T>::element_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.tensor.numel();
    return n;
}

template <typename T>
std::uint64_t checksum(const ParameterSet<T>& params) {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](const void* p, std::size_t n) {
        const auto* bytes = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= bytes[i];
            h *= 1099511628211ULL;
        }
    };
    for (const auto& e : params.entries()) {
        mix(e.path.data(), e.path.size());
        mix(e.tensor.data().data(), e.tensor.numel() * sizeof(T));
    }
    return h;
}

template <typename T>
void assign_values(ParameterSet<T>& dst, const ParameterSet<T>& src) {
    for (const auto& e : src.entries()) {
        if (!dst.contains(e.path)) {
            throw Error(ErrorCode::kBadConfig, "parameter '" + e.path + "' not present in model");
        }
        auto& target = dst.at(e.path);
        if (target.shape() != e.tensor.shape()) {
            throw Error(ErrorCode::kShapeMismatch, "parameter '" + e.path + "': " +
                                                       shape_to_string(target.shape()) + " vs " +
                                                       shape_to_string(e.tensor.shape()));
        }
        std::copy(e.tensor.data().begin(), e.tensor.data().end(), target.data().begin());
    }
}

OptimizerKind parse_optimizer_kind(std::string_view name) {
    if (name == "sgd") return OptimizerKind::kSgd;
    if (name == "sgd_momentum") return OptimizerKind::kSgdMomentum;
    if (name == "adam") return OptimizerKind::kAdam;
    throw Error(ErrorCode::kBadConfig, "unknown optimizer '" + std::string(name) + "'");
}

std::string_view optimizer_kind_name(OptimizerKind kind) noexcept {
    switch (kind) {
        case OptimizerKind::kSgd: return "sgd";
        case OptimizerKind::kSgdMomentum: return "sgd_momentum";
        case OptimizerKind::kAdam: return "adam";
    }
    return "adam";
}

template <typename T>
Optimizer<T>::Optimizer(OptimizerConfig config) : config_(config) {
    if (!(config_.lr >= 0.0) || !std::isfinite(config_.lr)) {
        throw Error(ErrorCode::kBadConfig, "learning rate must be finite and >= 0");
    }
}

template <typename T>
void Optimizer<T>::step(ParameterSet<T>& params) {
    for (const auto& e : params.entries()) {
        if (!e.frozen && !e.tensor.has_grad()) {
            throw Error(ErrorCode::kMissingGrad, "trainable parameter '" + e.path + "' has no gradient");
        }
    }
    ++steps_;
    const double t = static_cast<double>(steps_);
    const double bias1 = 1.0 - std::pow(config_.beta1, t);
    const double bias2 = 1.0 - std::pow(config_.beta2, t);
    for (auto e : params.entries()) {
        if (e.frozen) continue;
        auto w = e.tensor.data();
        auto g = e.tensor.grad();
        switch (config_.kind) {
            case OptimizerKind::kSgd: {
                const T lr = static_cast<T>(config_.lr);
                for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * g[i];
                break;
            }
            case OptimizerKind::kSgdMomentum: {
                auto& st = state_[e.path];
                st.first.resize(w.size(), T(0));
                const T lr = static_cast<T>(config_.lr);
                const T mu = static_cast<T>(config_.momentum);
                for (std::size_t i = 0; i < w.size(); ++i) {
                    st.first[i] = mu * st.first[i] + g[i];
                    w[i] -= lr * st.first[i];
                }
                break;
            }
            case OptimizerKind::kAdam: {
                auto& st = state_[e.path];
                st.first.resize(w.size(), T(0));
                st.second.resize(w.size(), T(0));
                const T b1 = static_cast<T>(config_.beta1);
                const T b2 = static_cast<T>(config_.beta2);
                const T step = static_cast<T>(config_.lr / bias1);
                const T inv_sqrt_bias2 = static_cast<T>(1.0 / std::sqrt(bias2));
                const T eps = static_cast<T>(config_.epsilon);
                for (std::size_t i = 0; i < w.size(); ++i) {
                    st.first[i] = b1 * st.first[i] + (T(1) - b1) * g[i];
                    st.second[i] = b2 * st.second[i] + (T(1) - b2) * g[i] * g[i];
                    w[i] -= step * st.first[i] / (std::sqrt(st.second[i]) * inv_sqrt_bias2 + eps);
                }
                break;
            }
        }
    }
}

template class ParameterSet<float>;
template class ParameterSet<double>;
template class Optimizer<float>;
template class Optimizer<double>;

template std::uint64_t checksum(const ParameterSet<float>&);
template std::uint64_t checksum(const ParameterSet<double>&);
template void assign_values(ParameterSet<float>&, const ParameterSet<float>&);
template void assign_values(ParameterSet<double>&, const ParameterSet<double>&);

}  // namespace kdl
