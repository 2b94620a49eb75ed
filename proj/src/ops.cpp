#include "kdl/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "kdl/error.hpp"

namespace kdl::ops {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

[[noreturn]] void shape_error(const std::string& op, const std::string& detail) {
    throw Error(ErrorCode::kShapeMismatch, op + ": " + detail);
}

template <typename T>
std::string shapes_of(const Tensor<T>& a, const Tensor<T>& b) {
    return shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape());
}

template <typename T>
ConstMatMap<T> as_matrix(const Tensor<T>& t, std::size_t rows, std::size_t cols) {
    return ConstMatMap<T>(t.data().data(), static_cast<Eigen::Index>(rows),
                          static_cast<Eigen::Index>(cols));
}

template <typename T>
ConstMatMap<T> as_matrix(std::span<const T> s, std::size_t rows, std::size_t cols) {
    return ConstMatMap<T>(s.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

template <typename T>
MatMap<T> as_matrix(std::span<T> s, std::size_t rows, std::size_t cols) {
    return MatMap<T>(s.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

struct ConvGeometry {
    std::size_t n, c, h, w;
    std::size_t f, kh, kw;
    std::size_t stride, pad;
    std::size_t out_h, out_w;

    std::size_t patch() const { return c * kh * kw; }
    std::size_t pixels() const { return out_h * out_w; }
    bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

// Output columns ox whose input column ox * stride + j - pad lies inside
// [0, w): [lo, hi).
inline void valid_range(const ConvGeometry& g, std::size_t j, std::size_t& lo, std::size_t& hi) {
    const auto pad = static_cast<std::ptrdiff_t>(g.pad);
    const auto stride = static_cast<std::ptrdiff_t>(g.stride);
    const auto off = static_cast<std::ptrdiff_t>(j) - pad;
    std::ptrdiff_t l = off >= 0 ? 0 : (-off + stride - 1) / stride;
    std::ptrdiff_t h = (static_cast<std::ptrdiff_t>(g.w) - 1 - off) / stride + 1;
    if (static_cast<std::ptrdiff_t>(g.w) - 1 - off < 0) h = 0;
    h = std::min<std::ptrdiff_t>(h, static_cast<std::ptrdiff_t>(g.out_w));
    lo = static_cast<std::size_t>(std::max<std::ptrdiff_t>(l, 0));
    hi = static_cast<std::size_t>(std::max<std::ptrdiff_t>(h, static_cast<std::ptrdiff_t>(lo)));
}

template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* col) {
    const std::size_t p = g.pixels();
    for (std::size_t c = 0; c < g.c; ++c) {
        const T* plane = x + c * g.h * g.w;
        for (std::size_t i = 0; i < g.kh; ++i) {
            for (std::size_t j = 0; j < g.kw; ++j) {
                T* row = col + ((c * g.kh + i) * g.kw + j) * p;
                std::size_t lo, hi;
                valid_range(g, j, lo, hi);
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + i) -
                                    static_cast<std::ptrdiff_t>(g.pad);
                    T* dst = row + oy * g.out_w;
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
                        std::fill(dst, dst + g.out_w, T(0));
                        continue;
                    }
                    const T* src = plane + static_cast<std::size_t>(iy) * g.w;
                    std::fill(dst, dst + lo, T(0));
                    if (g.stride == 1) {
                        if (hi > lo) std::copy(src + (lo + j - g.pad), src + (hi + j - g.pad), dst + lo);
                    } else {
                        for (std::size_t ox = lo; ox < hi; ++ox) dst[ox] = src[ox * g.stride + j - g.pad];
                    }
                    std::fill(dst + hi, dst + g.out_w, T(0));
                }
            }
        }
    }
}

template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, T* dx) {
    const std::size_t p = g.pixels();
    for (std::size_t c = 0; c < g.c; ++c) {
        T* plane = dx + c * g.h * g.w;
        for (std::size_t i = 0; i < g.kh; ++i) {
            for (std::size_t j = 0; j < g.kw; ++j) {
                const T* row = col + ((c * g.kh + i) * g.kw + j) * p;
                std::size_t lo, hi;
                valid_range(g, j, lo, hi);
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + i) -
                                    static_cast<std::ptrdiff_t>(g.pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
                    T* dst = plane + static_cast<std::size_t>(iy) * g.w;
                    const T* src = row + oy * g.out_w;
                    for (std::size_t ox = lo; ox < hi; ++ox) dst[ox * g.stride + j - g.pad] += src[ox];
                }
            }
        }
    }
}

struct PoolGeometry {
    std::size_t n, c, h, w, out_h, out_w, kernel, stride;
};

template <typename T>
PoolGeometry pool_geometry(const std::string& op, const Tensor<T>& x, Pool2dAttrs attrs) {
    if (attrs.kernel == 0 || attrs.stride == 0) {
        throw Error(ErrorCode::kUnsupportedAttr, op + ": kernel and stride must be >= 1");
    }
    if (x.rank() != 4) shape_error(op, "expects [N,C,H,W], got " + shape_to_string(x.shape()));
    PoolGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), 0, 0, attrs.kernel, attrs.stride};
    if (g.h < g.kernel || g.w < g.kernel) {
        shape_error(op, "kernel " + std::to_string(g.kernel) + " larger than input " +
                            shape_to_string(x.shape()));
    }
    g.out_h = (g.h - g.kernel) / g.stride + 1;
    g.out_w = (g.w - g.kernel) / g.stride + 1;
    return g;
}

// Row-wise log-sum-exp over a [rows, cols] buffer.
template <typename T>
void row_log_softmax(const T* x, std::size_t rows, std::size_t cols, T* out) {
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = x + r * cols;
        T* yr = out + r * cols;
        const T mx = *std::max_element(xr, xr + cols);
        T total = 0;
        for (std::size_t j = 0; j < cols; ++j) total += std::exp(xr[j] - mx);
        const T lse = mx + std::log(total);
        for (std::size_t j = 0; j < cols; ++j) yr[j] = xr[j] - lse;
    }
}

}  // namespace

template <typename T>
Tensor<T> matmul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        shape_error("matmul", shapes_of(a, b));
    }
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor<T> out({m, n});
    as_matrix(out.data(), m, n).noalias() = as_matrix(a, m, k) * as_matrix(b, k, n);
    if (tape.needs_grad({&a, &b})) {
        tape.record("matmul", {a.id(), b.id()}, out, [a, b, out, m, k, n]() mutable {
            ConstMatMap<T> dout(out.grad().data(), static_cast<Eigen::Index>(m),
                                static_cast<Eigen::Index>(n));
            if (a.requires_grad()) as_matrix(a.grad(), m, k).noalias() += dout * as_matrix(std::as_const(b), k, n).transpose();
            if (b.requires_grad()) as_matrix(b.grad(), k, n).noalias() += as_matrix(std::as_const(a), m, k).transpose() * dout;
        });
    }
    return out;
}

template <typename T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
    const bool same = a.shape() == b.shape();
    const bool row_broadcast = !same && b.rank() == 1 && b.dim(0) == a.shape().back();
    if (!same && !row_broadcast) shape_error("add", shapes_of(a, b));
    Tensor<T> out(a.shape());
    auto y = out.data();
    auto av = a.data();
    auto bv = b.data();
    const std::size_t width = bv.size();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] + bv[same ? i : i % width];
    if (tape.needs_grad({&a, &b})) {
        tape.record("add", {a.id(), b.id()}, out, [a, b, out, same, width]() mutable {
            auto dy = out.grad();
            if (a.requires_grad()) {
                auto da = a.grad();
                for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
            }
            if (b.requires_grad()) {
                auto db = b.grad();
                for (std::size_t i = 0; i < dy.size(); ++i) db[same ? i : i % width] += dy[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) shape_error("mul", shapes_of(a, b));
    Tensor<T> out(a.shape());
    auto y = out.data();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] * b.data()[i];
    if (tape.needs_grad({&a, &b})) {
        tape.record("mul", {a.id(), b.id()}, out, [a, b, out]() mutable {
            auto dy = out.grad();
            if (a.requires_grad()) {
                auto da = a.grad();
                for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * b.data()[i];
            }
            if (b.requires_grad()) {
                auto db = b.grad();
                for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i] * a.data()[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> scale(Tape<T>& tape, const Tensor<T>& x, T factor) {
    Tensor<T> out(x.shape());
    auto y = out.data();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = factor * x.data()[i];
    if (tape.needs_grad({&x})) {
        tape.record("scale", {x.id()}, out, [x, out, factor]() mutable {
            auto dy = out.grad();
            auto dx = x.grad();
            for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += factor * dy[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> relu(Tape<T>& tape, const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    auto y = out.data();
    auto xv = x.data();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = xv[i] > T(0) ? xv[i] : T(0);
    if (tape.needs_grad({&x})) {
        tape.record("relu", {x.id()}, out, [x, out]() mutable {
            auto dy = out.grad();
            auto dx = x.grad();
            auto xv = x.data();
            for (std::size_t i = 0; i < dy.size(); ++i) {
                if (xv[i] > T(0)) dx[i] += dy[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> conv2d(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& kernel,
                 const Tensor<T>& bias, Conv2dAttrs attrs) {
    if (attrs.stride == 0) throw Error(ErrorCode::kUnsupportedAttr, "conv2d: stride must be >= 1");
    if (input.rank() != 4 || kernel.rank() != 4 || input.dim(1) != kernel.dim(1)) {
        shape_error("conv2d", "input " + shape_to_string(input.shape()) + " kernel " +
                                  shape_to_string(kernel.shape()));
    }
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != kernel.dim(0))) {
        shape_error("conv2d", "bias " + shape_to_string(bias.shape()) + " for kernel " +
                                  shape_to_string(kernel.shape()));
    }
    ConvGeometry g{input.dim(0), input.dim(1), input.dim(2), input.dim(3),
                   kernel.dim(0), kernel.dim(2), kernel.dim(3), attrs.stride, attrs.padding, 0, 0};
    if (g.h + 2 * g.pad < g.kh || g.w + 2 * g.pad < g.kw) {
        shape_error("conv2d", "kernel " + shape_to_string(kernel.shape()) +
                                  " does not fit padded input " + shape_to_string(input.shape()));
    }
    g.out_h = (g.h + 2 * g.pad - g.kh) / g.stride + 1;
    g.out_w = (g.w + 2 * g.pad - g.kw) / g.stride + 1;

    const std::size_t ck = g.patch();
    const std::size_t p = g.pixels();
    const std::size_t in_stride = g.c * g.h * g.w;
    const std::size_t out_stride = g.f * p;

    Tensor<T> out({g.n, g.f, g.out_h, g.out_w});
    auto wmat = as_matrix(kernel, g.f, ck);
    AlignedVector<T> col(g.pointwise() ? 0 : ck * p);
    for (std::size_t n = 0; n < g.n; ++n) {
        const T* xn = input.data().data() + n * in_stride;
        if (!g.pointwise()) im2col(xn, g, col.data());
        ConstMatMap<T> cols(g.pointwise() ? xn : col.data(), static_cast<Eigen::Index>(ck),
                            static_cast<Eigen::Index>(p));
        auto yn = as_matrix(out.data().subspan(n * out_stride, out_stride), g.f, p);
        yn.noalias() = wmat * cols;
        if (bias.defined()) {
            for (std::size_t f = 0; f < g.f; ++f) yn.row(static_cast<Eigen::Index>(f)).array() += bias.data()[f];
        }
    }

    if (tape.needs_grad({&input, &kernel, &bias})) {
        tape.record("conv2d", {input.id(), kernel.id(), bias.defined() ? bias.id() : 0}, out,
                    [input, kernel, bias, out, g]() mutable {
            const std::size_t ck = g.patch();
            const std::size_t p = g.pixels();
            const std::size_t in_stride = g.c * g.h * g.w;
            const std::size_t out_stride = g.f * p;
            auto dy_all = out.grad();
            AlignedVector<T> col(g.pointwise() ? 0 : ck * p);
            AlignedVector<T> dcol(ck * p);
            auto wmat = as_matrix(std::as_const(kernel), g.f, ck);
            const bool want_dx = input.requires_grad();
            const bool want_dw = kernel.requires_grad();
            const bool want_db = bias.defined() && bias.requires_grad();
            std::span<T> dw_span = want_dw ? kernel.grad() : std::span<T>{};
            std::span<T> db_span = want_db ? bias.grad() : std::span<T>{};
            std::span<T> dx_span = want_dx ? input.grad() : std::span<T>{};
            for (std::size_t n = 0; n < g.n; ++n) {
                ConstMatMap<T> dy(dy_all.data() + n * out_stride, static_cast<Eigen::Index>(g.f),
                                  static_cast<Eigen::Index>(p));
                if (want_db) {
                    for (std::size_t f = 0; f < g.f; ++f) db_span[f] += dy.row(static_cast<Eigen::Index>(f)).sum();
                }
                const T* xn = input.data().data() + n * in_stride;
                if (want_dw) {
                    if (!g.pointwise()) im2col(xn, g, col.data());
                    ConstMatMap<T> cols(g.pointwise() ? xn : col.data(),
                                        static_cast<Eigen::Index>(ck), static_cast<Eigen::Index>(p));
                    as_matrix(dw_span, g.f, ck).noalias() += dy * cols.transpose();
                }
                if (want_dx) {
                    T* dxn = dx_span.data() + n * in_stride;
                    if (g.pointwise()) {
                        as_matrix(std::span<T>(dxn, in_stride), ck, p).noalias() += wmat.transpose() * dy;
                    } else {
                        as_matrix(std::span<T>(dcol), ck, p).noalias() = wmat.transpose() * dy;
                        col2im_add(dcol.data(), g, dxn);
                    }
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> max_pool2d(Tape<T>& tape, const Tensor<T>& x, Pool2dAttrs attrs) {
    const PoolGeometry g = pool_geometry("max_pool2d", x, attrs);
    Tensor<T> out({g.n, g.c, g.out_h, g.out_w});
    std::vector<std::size_t> argmax(out.numel());
    auto xv = x.data();
    auto y = out.data();
    std::size_t o = 0;
    for (std::size_t plane = 0; plane < g.n * g.c; ++plane) {
        const std::size_t base = plane * g.h * g.w;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
            for (std::size_t ox = 0; ox < g.out_w; ++ox, ++o) {
                std::size_t best = base + oy * g.stride * g.w + ox * g.stride;
                for (std::size_t i = 0; i < g.kernel; ++i) {
                    for (std::size_t j = 0; j < g.kernel; ++j) {
                        const std::size_t idx = base + (oy * g.stride + i) * g.w + ox * g.stride + j;
                        if (xv[idx] > xv[best]) best = idx;
                    }
                }
                argmax[o] = best;
                y[o] = xv[best];
            }
        }
    }
    if (tape.needs_grad({&x})) {
        tape.record("max_pool2d", {x.id()}, out, [x, out, argmax = std::move(argmax)]() mutable {
            auto dy = out.grad();
            auto dx = x.grad();
            for (std::size_t i = 0; i < dy.size(); ++i) dx[argmax[i]] += dy[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> avg_pool2d(Tape<T>& tape, const Tensor<T>& x, Pool2dAttrs attrs) {
    const PoolGeometry g = pool_geometry("avg_pool2d", x, attrs);
    Tensor<T> out({g.n, g.c, g.out_h, g.out_w});
    const T inv = T(1) / static_cast<T>(g.kernel * g.kernel);
    auto xv = x.data();
    auto y = out.data();
    std::size_t o = 0;
    for (std::size_t plane = 0; plane < g.n * g.c; ++plane) {
        const std::size_t base = plane * g.h * g.w;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
            for (std::size_t ox = 0; ox < g.out_w; ++ox, ++o) {
                T acc = 0;
                for (std::size_t i = 0; i < g.kernel; ++i)
                    for (std::size_t j = 0; j < g.kernel; ++j)
                        acc += xv[base + (oy * g.stride + i) * g.w + ox * g.stride + j];
                y[o] = acc * inv;
            }
        }
    }
    if (tape.needs_grad({&x})) {
        tape.record("avg_pool2d", {x.id()}, out, [x, out, g, inv]() mutable {
            auto dy = out.grad();
            auto dx = x.grad();
            std::size_t o = 0;
            for (std::size_t plane = 0; plane < g.n * g.c; ++plane) {
                const std::size_t base = plane * g.h * g.w;
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    for (std::size_t ox = 0; ox < g.out_w; ++ox, ++o) {
                        const T share = dy[o] * inv;
                        for (std::size_t i = 0; i < g.kernel; ++i)
                            for (std::size_t j = 0; j < g.kernel; ++j)
                                dx[base + (oy * g.stride + i) * g.w + ox * g.stride + j] += share;
                    }
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> global_avg_pool(Tape<T>& tape, const Tensor<T>& x) {
    if (x.rank() != 4) shape_error("global_avg_pool", "expects [N,C,H,W], got " + shape_to_string(x.shape()));
    const std::size_t planes = x.dim(0) * x.dim(1);
    const std::size_t area = x.dim(2) * x.dim(3);
    Tensor<T> out({x.dim(0), x.dim(1)});
    const T inv = T(1) / static_cast<T>(area);
    auto xv = x.data();
    auto y = out.data();
    for (std::size_t pl = 0; pl < planes; ++pl) {
        T acc = 0;
        for (std::size_t i = 0; i < area; ++i) acc += xv[pl * area + i];
        y[pl] = acc * inv;
    }
    if (tape.needs_grad({&x})) {
        tape.record("global_avg_pool", {x.id()}, out, [x, out, planes, area, inv]() mutable {
            auto dy = out.grad();
            auto dx = x.grad();
            for (std::size_t pl = 0; pl < planes; ++pl) {
                const T share = dy[pl] * inv;
                for (std::size_t i = 0; i < area; ++i) dx[pl * area + i] += share;
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> concat(Tape<T>& tape, std::span<const Tensor<T>> inputs, std::size_t axis) {
    if (inputs.empty()) shape_error("concat", "no inputs");
    const Shape& first = inputs[0].shape();
    if (axis >= first.size()) {
        throw Error(ErrorCode::kUnsupportedAttr, "concat: axis " + std::to_string(axis) +
                                                     " out of range for " + shape_to_string(first));
    }
    Shape out_shape = first;
    out_shape[axis] = 0;
    for (const auto& t : inputs) {
        bool ok = t.rank() == first.size();
        for (std::size_t d = 0; ok && d < first.size(); ++d) ok = d == axis || t.dim(d) == first[d];
        if (!ok) shape_error("concat", shape_to_string(first) + " vs " + shape_to_string(t.shape()));
        out_shape[axis] += t.dim(axis);
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
    for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];

    Tensor<T> out(out_shape);
    const std::size_t out_block = out_shape[axis] * inner;
    auto y = out.data();
    std::size_t offset = 0;
    std::vector<std::size_t> offsets;
    for (const auto& t : inputs) {
        offsets.push_back(offset);
        const std::size_t block = t.dim(axis) * inner;
        auto src = t.data();
        for (std::size_t o = 0; o < outer; ++o) {
            std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(o * block), block,
                        y.begin() + static_cast<std::ptrdiff_t>(o * out_block + offset));
        }
        offset += block;
    }
    if (tape.needs_grad(inputs)) {
        std::vector<Tensor<T>> kept(inputs.begin(), inputs.end());
        std::vector<std::uint64_t> ids;
        for (const auto& t : kept) ids.push_back(t.id());
        tape.record("concat", std::move(ids), out,
                    [kept, out, offsets, outer, inner, out_block, axis]() mutable {
            auto dy = out.grad();
            for (std::size_t k = 0; k < kept.size(); ++k) {
                if (!kept[k].requires_grad()) continue;
                const std::size_t block = kept[k].dim(axis) * inner;
                auto dx = kept[k].grad();
                for (std::size_t o = 0; o < outer; ++o) {
                    const T* src = dy.data() + o * out_block + offsets[k];
                    T* dst = dx.data() + o * block;
                    for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> slice(Tape<T>& tape, const Tensor<T>& x, std::size_t axis, std::size_t begin,
                std::size_t end) {
    if (axis >= x.rank()) {
        throw Error(ErrorCode::kUnsupportedAttr, "slice: axis " + std::to_string(axis) +
                                                     " out of range for " + shape_to_string(x.shape()));
    }
    if (begin >= end || end > x.dim(axis)) {
        throw Error(ErrorCode::kUnsupportedAttr, "slice: range [" + std::to_string(begin) + "," +
                                                     std::to_string(end) + ") invalid for " +
                                                     shape_to_string(x.shape()));
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= x.dim(d);
    for (std::size_t d = axis + 1; d < x.rank(); ++d) inner *= x.dim(d);
    Shape out_shape = x.shape();
    out_shape[axis] = end - begin;
    Tensor<T> out(out_shape);
    const std::size_t in_block = x.dim(axis) * inner;
    const std::size_t out_block = (end - begin) * inner;
    const std::size_t offset = begin * inner;
    auto xv = x.data();
    auto y = out.data();
    for (std::size_t o = 0; o < outer; ++o) {
        std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>(o * in_block + offset), out_block,
                    y.begin() + static_cast<std::ptrdiff_t>(o * out_block));
    }
    if (tape.needs_grad({&x})) {
        tape.record("slice", {x.id()}, out, [x, out, outer, in_block, out_block, offset]() mutable {
            auto dy = out.grad();
            auto dx = x.grad();
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t i = 0; i < out_block; ++i) dx[o * in_block + offset + i] += dy[o * out_block + i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> reshape(Tape<T>& tape, const Tensor<T>& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        shape_error("reshape", shape_to_string(x.shape()) + " to " + shape_to_string(shape));
    }
    Tensor<T> out(std::move(shape), std::vector<T>(x.data().begin(), x.data().end()));
    if (tape.needs_grad({&x})) {
        tape.record("reshape", {x.id()}, out, [x, out]() mutable {
            auto dy = out.grad();
            auto dx = x.grad();
            for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> softmax(Tape<T>& tape, const Tensor<T>& x) {
    const std::size_t cols = x.shape().back();
    const std::size_t rows = x.numel() / cols;
    Tensor<T> out(x.shape());
    auto y = out.data();
    row_log_softmax(x.data().data(), rows, cols, y.data());
    for (auto& v : y) v = std::exp(v);
    if (tape.needs_grad({&x})) {
        tape.record("softmax", {x.id()}, out, [x, out, rows, cols]() mutable {
            auto dy = out.grad();
            auto dx = x.grad();
            auto y = out.data();
            for (std::size_t r = 0; r < rows; ++r) {
                T dot = 0;
                for (std::size_t j = 0; j < cols; ++j) dot += dy[r * cols + j] * y[r * cols + j];
                for (std::size_t j = 0; j < cols; ++j)
                    dx[r * cols + j] += y[r * cols + j] * (dy[r * cols + j] - dot);
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> log_softmax(Tape<T>& tape, const Tensor<T>& x) {
    const std::size_t cols = x.shape().back();
    const std::size_t rows = x.numel() / cols;
    Tensor<T> out(x.shape());
    row_log_softmax(x.data().data(), rows, cols, out.data().data());
    if (tape.needs_grad({&x})) {
        tape.record("log_softmax", {x.id()}, out, [x, out, rows, cols]() mutable {
            auto dy = out.grad();
            auto dx = x.grad();
            auto y = out.data();
            for (std::size_t r = 0; r < rows; ++r) {
                T total = 0;
                for (std::size_t j = 0; j < cols; ++j) total += dy[r * cols + j];
                for (std::size_t j = 0; j < cols; ++j)
                    dx[r * cols + j] += dy[r * cols + j] - std::exp(y[r * cols + j]) * total;
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& x) {
    T acc = 0;
    for (T v : x.data()) acc += v;
    Tensor<T> out({1}, acc);
    if (tape.needs_grad({&x})) {
        tape.record("sum", {x.id()}, out, [x, out]() mutable {
            const T g = out.grad()[0];
            for (auto& d : x.grad()) d += g;
        });
    }
    return out;
}

template <typename T>
Tensor<T> sum_squares(Tape<T>& tape, const Tensor<T>& x) {
    T acc = 0;
    for (T v : x.data()) acc += v * v;
    Tensor<T> out({1}, acc);
    if (tape.needs_grad({&x})) {
        tape.record("sum_squares", {x.id()}, out, [x, out]() mutable {
            const T g = out.grad()[0];
            auto dx = x.grad();
            auto xv = x.data();
            for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += T(2) * xv[i] * g;
        });
    }
    return out;
}

template <typename T>
Tensor<T> cross_entropy(Tape<T>& tape, const Tensor<T>& logits, std::span<const int> labels) {
    if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
        shape_error("cross_entropy", "logits " + shape_to_string(logits.shape()) + " with " +
                                         std::to_string(labels.size()) + " labels");
    }
    const std::size_t rows = logits.dim(0), cols = logits.dim(1);
    for (int label : labels) {
        if (label < 0 || static_cast<std::size_t>(label) >= cols) {
            throw Error(ErrorCode::kLabelOutOfRange, "label " + std::to_string(label) + " not in [0," +
                                                         std::to_string(cols) + ")");
        }
    }
    AlignedVector<T> logp(rows * cols);
    row_log_softmax(logits.data().data(), rows, cols, logp.data());
    T total = 0;
    for (std::size_t r = 0; r < rows; ++r) total -= logp[r * cols + static_cast<std::size_t>(labels[r])];
    Tensor<T> out({1}, total / static_cast<T>(rows));
    if (tape.needs_grad({&logits})) {
        std::vector<int> kept(labels.begin(), labels.end());
        tape.record("cross_entropy", {logits.id()}, out,
                    [logits, out, logp = std::move(logp), kept = std::move(kept), rows, cols]() mutable {
            const T g = out.grad()[0] / static_cast<T>(rows);
            auto dx = logits.grad();
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t j = 0; j < cols; ++j) {
                    const T target = static_cast<std::size_t>(kept[r]) == j ? T(1) : T(0);
                    dx[r * cols + j] += g * (std::exp(logp[r * cols + j]) - target);
                }
            }
        });
    }
    return out;
}

#define KDL_INSTANTIATE_OPS(T)                                                                     \
    template Tensor<T> matmul(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                        \
    template Tensor<T> add(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                           \
    template Tensor<T> mul(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                           \
    template Tensor<T> scale(Tape<T>&, const Tensor<T>&, T);                                        \
    template Tensor<T> relu(Tape<T>&, const Tensor<T>&);                                            \
    template Tensor<T> conv2d(Tape<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,       \
                              Conv2dAttrs);                                                         \
    template Tensor<T> max_pool2d(Tape<T>&, const Tensor<T>&, Pool2dAttrs);                         \
    template Tensor<T> avg_pool2d(Tape<T>&, const Tensor<T>&, Pool2dAttrs);                         \
    template Tensor<T> global_avg_pool(Tape<T>&, const Tensor<T>&);                                 \
    template Tensor<T> concat(Tape<T>&, std::span<const Tensor<T>>, std::size_t);                   \
    template Tensor<T> slice(Tape<T>&, const Tensor<T>&, std::size_t, std::size_t, std::size_t);    \
    template Tensor<T> reshape(Tape<T>&, const Tensor<T>&, Shape);                                  \
    template Tensor<T> softmax(Tape<T>&, const Tensor<T>&);                                         \
    template Tensor<T> log_softmax(Tape<T>&, const Tensor<T>&);                                     \
    template Tensor<T> sum(Tape<T>&, const Tensor<T>&);                                             \
    template Tensor<T> sum_squares(Tape<T>&, const Tensor<T>&);                                     \
    template Tensor<T> cross_entropy(Tape<T>&, const Tensor<T>&, std::span<const int>);

KDL_INSTANTIATE_OPS(float)
KDL_INSTANTIATE_OPS(double)

#undef KDL_INSTANTIATE_OPS

}  // namespace kdl::ops
