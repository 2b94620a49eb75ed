#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "kdl/tape.hpp"
#include "kdl/tensor.hpp"

// Differentiable operations. Every op validates shapes (ShapeMismatch) and
// attributes (UnsupportedAttr), computes its output eagerly and, when the tape
// is recording and an input requires grad, records a backward rule.
//
// Layout conventions: images are NCHW, dense activations are [batch, features],
// dense weights are [in, out], conv kernels are [out, in, kh, kw]. conv2d is a
// cross-correlation with zero padding.
namespace kdl::ops {

struct Conv2dAttrs {
    std::size_t stride = 1;
    std::size_t padding = 0;
};

struct Pool2dAttrs {
    std::size_t kernel = 2;
    std::size_t stride = 2;
};

// [M,K] x [K,N] -> [M,N]
template <typename T>
Tensor<T> matmul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);

// Elementwise a + b. b may also be a 1-D tensor matching a's last dimension
// (row broadcast), which is how dense biases are applied.
template <typename T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(Tape<T>& tape, const Tensor<T>& x, T factor);

// Gradient is 0 for x <= 0.
template <typename T>
Tensor<T> relu(Tape<T>& tape, const Tensor<T>& x);

// bias may be an undefined Tensor.
template <typename T>
Tensor<T> conv2d(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& kernel,
                 const Tensor<T>& bias, Conv2dAttrs attrs);

template <typename T>
Tensor<T> max_pool2d(Tape<T>& tape, const Tensor<T>& x, Pool2dAttrs attrs);

template <typename T>
Tensor<T> avg_pool2d(Tape<T>& tape, const Tensor<T>& x, Pool2dAttrs attrs);

// [N,C,H,W] -> [N,C]
template <typename T>
Tensor<T> global_avg_pool(Tape<T>& tape, const Tensor<T>& x);

template <typename T>
Tensor<T> concat(Tape<T>& tape, std::span<const Tensor<T>> inputs, std::size_t axis);

// Half-open range [begin, end) along axis.
template <typename T>
Tensor<T> slice(Tape<T>& tape, const Tensor<T>& x, std::size_t axis, std::size_t begin,
                std::size_t end);

template <typename T>
Tensor<T> reshape(Tape<T>& tape, const Tensor<T>& x, Shape shape);

// Along the last axis, max-subtracted.
template <typename T>
Tensor<T> softmax(Tape<T>& tape, const Tensor<T>& x);

template <typename T>
Tensor<T> log_softmax(Tape<T>& tape, const Tensor<T>& x);

// Scalar reductions, output shape [1].
template <typename T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& x);

template <typename T>
Tensor<T> sum_squares(Tape<T>& tape, const Tensor<T>& x);

// Mean over the batch of -log softmax(logits)[label]. logits is [B,C].
template <typename T>
Tensor<T> cross_entropy(Tape<T>& tape, const Tensor<T>& logits, std::span<const int> labels);

}  // namespace kdl::ops
