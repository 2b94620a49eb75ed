#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "kdl/image.hpp"
#include "kdl/model.hpp"

namespace kdl {

// Values in [0, 1], row-major height x width.
struct Heatmap {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> values;
    int target_class = 0;
};

// Maps a [1,3,h,w] input to ([1,C] logits, [1,K,h',w'] activations of the
// layer to explain). Activations may be undefined when the network has no
// such layer.
template <typename T>
using CamForward = std::function<std::pair<Tensor<T>, Tensor<T>>(Tape<T>&, const Tensor<T>&)>;

// Channel weights are the spatial mean of d logit[target] / dA; the map is
// relu(sum_k weight_k * A_k), bilinearly upsampled to h x w and divided by its
// maximum (left at zero when the maximum is zero). Throws ClassOutOfRange and
// NoConvLayer.
template <typename T>
Heatmap grad_cam(const CamForward<T>& forward, const Tensor<T>& input, int target_class);

// Explains the final logits of a composite model at the student's last block.
template <typename T>
Heatmap grad_cam(const KdlModel<T>& model, const Tensor<T>& input, int target_class);

// The composite's argmax for a single [1,3,h,w] input.
int predicted_class(const Classifier<float>& model, const Tensor<float>& input);

// Bilinear resampling with half-pixel centres and edge clamping.
std::vector<double> bilinear_resize(std::span<const double> src, std::size_t src_h, std::size_t src_w,
                                    std::size_t dst_h, std::size_t dst_w);

// Five-stop colour ramp: blue, cyan, green, yellow, red at 0, .25, .5, .75, 1.
std::array<double, 3> jet(double v);

Image heatmap_gray(const Heatmap& map);
// 0.5 * base + 0.5 * v * jet(v) per pixel, so cold regions show the dimmed
// base image. base must be gray and match the map size.
Image heatmap_overlay(const Heatmap& map, const Image& base);
// Writes <prefix>_gray.pgm and <prefix>_color.ppm.
void render_heatmap(const Heatmap& map, const Image& base, const std::string& prefix);

extern template Heatmap grad_cam(const CamForward<float>&, const Tensor<float>&, int);
extern template Heatmap grad_cam(const CamForward<double>&, const Tensor<double>&, int);
extern template Heatmap grad_cam(const KdlModel<float>&, const Tensor<float>&, int);
extern template Heatmap grad_cam(const KdlModel<double>&, const Tensor<double>&, int);

}  // namespace kdl
