#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "kdl/image.hpp"

// Texture-enhancing preprocessing: grayscale, LBP and Haar DWT renderings of
// one photo stacked as a three-channel sample.
namespace kdl::imageproc {

// ITU-R BT.601 luma, rounded. Throws NotRGB.
Image to_grayscale(const Image& rgb);
// Replicates a gray image into three equal channels. Throws NotGrayscale.
Image gray_to_rgb(const Image& gray);

// 8-neighbour radius-1 LBP. Neighbours are visited clockwise starting at the
// top-left; the top-left comparison is bit 7 and the left neighbour is bit 0.
// A bit is set when neighbour >= centre. Borders replicate the edge pixel.
// Throws NotGrayscale.
Image lbp(const Image& gray);

// Float-domain single-level Haar transform, averaging normalisation. Each of
// the four subbands is (height/2) x (width/2), row-major.
struct HaarBands {
    std::size_t width = 0;   // of the (even) source
    std::size_t height = 0;
    std::vector<double> ll, lh, hl, hh;
};

// width and height must be even.
HaarBands haar_forward(std::span<const double> pixels, std::size_t width, std::size_t height);
std::vector<double> haar_inverse(const HaarBands& bands);

// Quadrant image: LL top-left, LH top-right, HL bottom-left, HH bottom-right.
// LL is rounded; details are shifted by +127.5 and rounded. Odd sizes are
// edge-replicated by one row/column first and the output keeps the padded
// size. Throws NotGrayscale.
Image dwt_haar(const Image& gray);

// Nearest-neighbour resampling, source index floor(i * src / dst).
// Throws BadDims if out_width or out_height < 2.
Image resize_nearest(const Image& img, std::size_t out_width, std::size_t out_height);

// [3, height, width] floats in [0,1]: channel 0 gray, 1 LBP, 2 DWT.
struct StackedSample {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<float> values;

    std::span<const float> channel(std::size_t c) const {
        return std::span<const float>(values).subspan(c * height * width, height * width);
    }
    friend bool operator==(const StackedSample&, const StackedSample&) = default;
};

// Throws DimMismatch when sizes differ or an input is not grayscale.
StackedSample stack_channels(const Image& gray, const Image& lbp_img, const Image& dwt_img);
// Inverse of stack_channels up to the 1/255 scaling.
std::array<Image, 3> unstack(const StackedSample& sample);

// Full pipeline: grayscale (if RGB), resize to size x size, then LBP/DWT and
// stacking. size must be even.
StackedSample preprocess(const Image& img, std::size_t size);

// ".olt" cache: magic "OLT1", u32 height, u32 width, 3*h*w little-endian f32.
void write_olt(const std::filesystem::path& path, const StackedSample& sample);
StackedSample read_olt(const std::filesystem::path& path);

}  // namespace kdl::imageproc
