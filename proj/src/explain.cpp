#include "kdl/explain.hpp"

#include <algorithm>
#include <cmath>

#include "kdl/error.hpp"
#include "kdl/ops.hpp"
#include "kdl/training.hpp"

namespace kdl {

template <typename T>
Heatmap grad_cam(const CamForward<T>& forward, const Tensor<T>& input, int target_class) {
    if (input.rank() != 4 || input.dim(0) != 1) {
        throw Error(ErrorCode::kShapeMismatch, "grad_cam expects a [1,3,h,w] input, got " +
                                                   shape_to_string(input.shape()));
    }
    Tensor<T> x = input.clone();
    x.set_requires_grad(true);
    Tape<T> tape;
    auto [logits, acts] = forward(tape, x);
    if (!acts.defined() || acts.rank() != 4) {
        throw Error(ErrorCode::kNoConvLayer, "model exposes no convolutional activations");
    }
    const auto classes = static_cast<int>(logits.dim(1));
    if (target_class < 0 || target_class >= classes) {
        throw Error(ErrorCode::kClassOutOfRange, "class " + std::to_string(target_class) + " outside [0, " +
                                                     std::to_string(classes) + ")");
    }

    const std::size_t k = acts.dim(1), h = acts.dim(2), w = acts.dim(3), hw = h * w;
    std::vector<double> raw(hw, 0.0);
    if (logits.requires_grad()) {
        const auto c = static_cast<std::size_t>(target_class);
        Tensor<T> score = ops::sum(tape, ops::slice(tape, logits, 1, c, c + 1));
        tape.backward(score);
        if (acts.has_grad()) {
            const auto a = acts.data();
            const auto g = acts.grad();
            for (std::size_t ch = 0; ch < k; ++ch) {
                double weight = 0;
                for (std::size_t i = 0; i < hw; ++i) weight += static_cast<double>(g[ch * hw + i]);
                weight /= static_cast<double>(hw);
                if (weight == 0) continue;
                for (std::size_t i = 0; i < hw; ++i) raw[i] += weight * static_cast<double>(a[ch * hw + i]);
            }
        }
    }
    for (auto& v : raw) v = std::max(v, 0.0);

    Heatmap out;
    out.height = input.dim(2);
    out.width = input.dim(3);
    out.target_class = target_class;
    out.values = bilinear_resize(raw, h, w, out.height, out.width);
    const double peak = *std::max_element(out.values.begin(), out.values.end());
    if (peak > 0) {
        for (auto& v : out.values) v /= peak;
    }
    return out;
}

template <typename T>
Heatmap grad_cam(const KdlModel<T>& model, const Tensor<T>& input, int target_class) {
    CamForward<T> fn = [&model](Tape<T>& tape, const Tensor<T>& x) {
        auto out = model.forward(tape, x);
        return std::make_pair(out.logits, out.student_features);
    };
    return grad_cam(fn, input, target_class);
}

int predicted_class(const Classifier<float>& model, const Tensor<float>& input) {
    Tape<float> tape(Tape<float>::Mode::kInference);
    const Tensor<float> logits = model.logits(tape, input);
    return static_cast<int>(argmax(logits.data().subspan(0, logits.dim(1))));
}

std::vector<double> bilinear_resize(std::span<const double> src, std::size_t src_h, std::size_t src_w,
                                    std::size_t dst_h, std::size_t dst_w) {
    std::vector<double> out(dst_h * dst_w);
    auto coord = [](std::size_t i, std::size_t src_n, std::size_t dst_n, std::size_t& i0, std::size_t& i1,
                    double& f) {
        double s = (static_cast<double>(i) + 0.5) * static_cast<double>(src_n) / static_cast<double>(dst_n) - 0.5;
        s = std::clamp(s, 0.0, static_cast<double>(src_n - 1));
        i0 = static_cast<std::size_t>(std::floor(s));
        i1 = std::min(i0 + 1, src_n - 1);
        f = s - static_cast<double>(i0);
    };
    for (std::size_t y = 0; y < dst_h; ++y) {
        std::size_t y0, y1;
        double fy;
        coord(y, src_h, dst_h, y0, y1, fy);
        for (std::size_t x = 0; x < dst_w; ++x) {
            std::size_t x0, x1;
            double fx;
            coord(x, src_w, dst_w, x0, x1, fx);
            const double top = src[y0 * src_w + x0] * (1 - fx) + src[y0 * src_w + x1] * fx;
            const double bottom = src[y1 * src_w + x0] * (1 - fx) + src[y1 * src_w + x1] * fx;
            out[y * dst_w + x] = top * (1 - fy) + bottom * fy;
        }
    }
    return out;
}

std::array<double, 3> jet(double v) {
    static constexpr std::array<std::array<double, 3>, 5> kStops{{
        {0, 0, 1}, {0, 1, 1}, {0, 1, 0}, {1, 1, 0}, {1, 0, 0},
    }};
    v = std::clamp(v, 0.0, 1.0);
    const double s = v * 4.0;
    const auto i = std::min<std::size_t>(3, static_cast<std::size_t>(s));
    const double f = s - static_cast<double>(i);
    std::array<double, 3> rgb{};
    for (std::size_t c = 0; c < 3; ++c) rgb[c] = kStops[i][c] * (1 - f) + kStops[i + 1][c] * f;
    return rgb;
}

Image heatmap_gray(const Heatmap& map) {
    Image img(map.width, map.height, 1);
    for (std::size_t i = 0; i < map.values.size(); ++i) {
        img.pixels[i] = static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(map.values[i], 0.0, 1.0)));
    }
    return img;
}

Image heatmap_overlay(const Heatmap& map, const Image& base) {
    if (!base.is_gray()) throw Error(ErrorCode::kNotGrayscale, "overlay base must be a grayscale image");
    if (base.width != map.width || base.height != map.height) {
        throw Error(ErrorCode::kDimMismatch, "overlay base and heatmap sizes differ");
    }
    Image img(map.width, map.height, 3);
    for (std::size_t i = 0; i < map.values.size(); ++i) {
        const double v = std::clamp(map.values[i], 0.0, 1.0);
        const auto rgb = jet(v);
        for (std::size_t c = 0; c < 3; ++c) {
            const double mixed = 0.5 * base.pixels[i] + 0.5 * v * 255.0 * rgb[c];
            img.pixels[i * 3 + c] = static_cast<std::uint8_t>(std::lround(std::clamp(mixed, 0.0, 255.0)));
        }
    }
    return img;
}

void render_heatmap(const Heatmap& map, const Image& base, const std::string& prefix) {
    write_pnm(std::filesystem::path(prefix + "_gray.pgm"), heatmap_gray(map));
    write_pnm(std::filesystem::path(prefix + "_color.ppm"), heatmap_overlay(map, base));
}

template Heatmap grad_cam(const CamForward<float>&, const Tensor<float>&, int);
template Heatmap grad_cam(const CamForward<double>&, const Tensor<double>&, int);
template Heatmap grad_cam(const KdlModel<float>&, const Tensor<float>&, int);
template Heatmap grad_cam(const KdlModel<double>&, const Tensor<double>&, int);

}  // namespace kdl
