#include "kdl/imageproc.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <string>

#include "kdl/error.hpp"

namespace kdl::imageproc {

namespace {

void require_gray(const Image& img, const char* op) {
    if (img.channels != 1) throw Error(ErrorCode::kNotGrayscale, std::string(op) + " expects a 1-channel image");
}

std::uint8_t clamp_round(double v) {
    return static_cast<std::uint8_t>(std::clamp(std::round(v), 0.0, 255.0));
}

Image pad_to_even(const Image& gray) {
    const std::size_t w = gray.width + (gray.width % 2);
    const std::size_t h = gray.height + (gray.height % 2);
    if (w == gray.width && h == gray.height) return gray;
    Image out(w, h, 1);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            out.at(x, y) = gray.at(std::min(x, gray.width - 1), std::min(y, gray.height - 1));
    return out;
}

}  // namespace

Image to_grayscale(const Image& rgb) {
    if (rgb.channels != 3) throw Error(ErrorCode::kNotRgb, "to_grayscale expects a 3-channel image");
    Image out(rgb.width, rgb.height, 1);
    for (std::size_t i = 0; i < rgb.width * rgb.height; ++i) {
        const unsigned r = rgb.pixels[3 * i], g = rgb.pixels[3 * i + 1], b = rgb.pixels[3 * i + 2];
        // Integer form of round(0.299 R + 0.587 G + 0.114 B), halves rounded up.
        out.pixels[i] = static_cast<std::uint8_t>(std::min(255u, (299 * r + 587 * g + 114 * b + 500) / 1000));
    }
    return out;
}

Image gray_to_rgb(const Image& gray) {
    require_gray(gray, "gray_to_rgb");
    Image out(gray.width, gray.height, 3);
    for (std::size_t i = 0; i < gray.pixels.size(); ++i) {
        out.pixels[3 * i] = out.pixels[3 * i + 1] = out.pixels[3 * i + 2] = gray.pixels[i];
    }
    return out;
}

Image lbp(const Image& gray) {
    require_gray(gray, "lbp");
    // Clockwise from top-left.
    static constexpr int kDx[8] = {-1, 0, 1, 1, 1, 0, -1, -1};
    static constexpr int kDy[8] = {-1, -1, -1, 0, 1, 1, 1, 0};
    const auto w = static_cast<int>(gray.width);
    const auto h = static_cast<int>(gray.height);
    Image out(gray.width, gray.height, 1);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const std::uint8_t centre = gray.at(static_cast<std::size_t>(x), static_cast<std::size_t>(y));
            unsigned code = 0;
            for (int i = 0; i < 8; ++i) {
                const int nx = std::clamp(x + kDx[i], 0, w - 1);
                const int ny = std::clamp(y + kDy[i], 0, h - 1);
                if (gray.at(static_cast<std::size_t>(nx), static_cast<std::size_t>(ny)) >= centre) {
                    code |= 1u << (7 - i);
                }
            }
            out.at(static_cast<std::size_t>(x), static_cast<std::size_t>(y)) = static_cast<std::uint8_t>(code);
        }
    }
    return out;
}

HaarBands haar_forward(std::span<const double> pixels, std::size_t width, std::size_t height) {
    if (width % 2 || height % 2 || width == 0 || height == 0 || pixels.size() != width * height) {
        throw Error(ErrorCode::kBadDims, "haar_forward needs even, non-empty dimensions");
    }
    HaarBands bands;
    bands.width = width;
    bands.height = height;
    const std::size_t bw = width / 2, bh = height / 2;
    for (auto* band : {&bands.ll, &bands.lh, &bands.hl, &bands.hh}) band->resize(bw * bh);
    for (std::size_t by = 0; by < bh; ++by) {
        for (std::size_t bx = 0; bx < bw; ++bx) {
            const double a = pixels[(2 * by) * width + 2 * bx];
            const double b = pixels[(2 * by) * width + 2 * bx + 1];
            const double c = pixels[(2 * by + 1) * width + 2 * bx];
            const double d = pixels[(2 * by + 1) * width + 2 * bx + 1];
            const std::size_t i = by * bw + bx;
            bands.ll[i] = (a + b + c + d) / 4.0;
            bands.lh[i] = (a - b + c - d) / 4.0;
            bands.hl[i] = (a + b - c - d) / 4.0;
            bands.hh[i] = (a - b - c + d) / 4.0;
        }
    }
    return bands;
}

std::vector<double> haar_inverse(const HaarBands& bands) {
    const std::size_t width = bands.width, bw = bands.width / 2, bh = bands.height / 2;
    std::vector<double> pixels(bands.width * bands.height);
    for (std::size_t by = 0; by < bh; ++by) {
        for (std::size_t bx = 0; bx < bw; ++bx) {
            const std::size_t i = by * bw + bx;
            const double ll = bands.ll[i], lh = bands.lh[i], hl = bands.hl[i], hh = bands.hh[i];
            pixels[(2 * by) * width + 2 * bx] = ll + lh + hl + hh;
            pixels[(2 * by) * width + 2 * bx + 1] = ll - lh + hl - hh;
            pixels[(2 * by + 1) * width + 2 * bx] = ll + lh - hl - hh;
            pixels[(2 * by + 1) * width + 2 * bx + 1] = ll - lh - hl + hh;
        }
    }
    return pixels;
}

Image dwt_haar(const Image& gray) {
    require_gray(gray, "dwt_haar");
    const Image src = pad_to_even(gray);
    std::vector<double> pixels(src.pixels.begin(), src.pixels.end());
    const HaarBands bands = haar_forward(pixels, src.width, src.height);
    const std::size_t bw = src.width / 2, bh = src.height / 2;
    Image out(src.width, src.height, 1);
    for (std::size_t by = 0; by < bh; ++by) {
        for (std::size_t bx = 0; bx < bw; ++bx) {
            const std::size_t i = by * bw + bx;
            out.at(bx, by) = clamp_round(bands.ll[i]);
            out.at(bx + bw, by) = clamp_round(bands.lh[i] + 127.5);
            out.at(bx, by + bh) = clamp_round(bands.hl[i] + 127.5);
            out.at(bx + bw, by + bh) = clamp_round(bands.hh[i] + 127.5);
        }
    }
    return out;
}

Image resize_nearest(const Image& img, std::size_t out_width, std::size_t out_height) {
    if (out_width < 2 || out_height < 2) {
        throw Error(ErrorCode::kBadDims, "resize target must be at least 2x2");
    }
    Image out(out_width, out_height, img.channels);
    for (std::size_t y = 0; y < out_height; ++y) {
        const std::size_t sy = y * img.height / out_height;
        for (std::size_t x = 0; x < out_width; ++x) {
            const std::size_t sx = x * img.width / out_width;
            for (std::size_t c = 0; c < img.channels; ++c) out.at(x, y, c) = img.at(sx, sy, c);
        }
    }
    return out;
}

StackedSample stack_channels(const Image& gray, const Image& lbp_img, const Image& dwt_img) {
    for (const Image* img : {&gray, &lbp_img, &dwt_img}) {
        if (img->channels != 1 || img->width != gray.width || img->height != gray.height) {
            throw Error(ErrorCode::kDimMismatch, "stack_channels needs three grayscale images of equal size");
        }
    }
    StackedSample s;
    s.height = gray.height;
    s.width = gray.width;
    s.values.reserve(3 * gray.pixels.size());
    for (const Image* img : {&gray, &lbp_img, &dwt_img}) {
        for (std::uint8_t p : img->pixels) s.values.push_back(static_cast<float>(p) / 255.0f);
    }
    return s;
}

std::array<Image, 3> unstack(const StackedSample& sample) {
    std::array<Image, 3> out{Image(sample.width, sample.height, 1), Image(sample.width, sample.height, 1),
                             Image(sample.width, sample.height, 1)};
    for (std::size_t c = 0; c < 3; ++c) {
        auto ch = sample.channel(c);
        for (std::size_t i = 0; i < ch.size(); ++i) out[c].pixels[i] = clamp_round(ch[i] * 255.0);
    }
    return out;
}

StackedSample preprocess(const Image& img, std::size_t size) {
    if (size < 2 || size % 2) throw Error(ErrorCode::kBadDims, "working resolution must be even and >= 2");
    const Image gray = img.is_gray() ? img : to_grayscale(img);
    const Image resized = resize_nearest(gray, size, size);
    return stack_channels(resized, lbp(resized), dwt_haar(resized));
}

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
    const char bytes[4] = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                           static_cast<char>((v >> 16) & 0xFF), static_cast<char>((v >> 24) & 0xFF)};
    out.write(bytes, 4);
}

std::uint32_t get_u32(std::istream& in) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw Error(ErrorCode::kIoError, "truncated .olt file");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void write_olt(const std::filesystem::path& path, const StackedSample& sample) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIoError, "cannot open '" + path.string() + "' for writing");
    out.write("OLT1", 4);
    put_u32(out, static_cast<std::uint32_t>(sample.height));
    put_u32(out, static_cast<std::uint32_t>(sample.width));
    for (float v : sample.values) put_u32(out, std::bit_cast<std::uint32_t>(v));
    if (!out) throw Error(ErrorCode::kIoError, "failed writing '" + path.string() + "'");
}

StackedSample read_olt(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::kIoError, "cannot open '" + path.string() + "'");
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, "OLT1", 4) != 0) {
        throw Error(ErrorCode::kIoError, "'" + path.string() + "' is not an OLT1 file");
    }
    StackedSample s;
    s.height = get_u32(in);
    s.width = get_u32(in);
    s.values.resize(3 * s.height * s.width);
    for (auto& v : s.values) v = std::bit_cast<float>(get_u32(in));
    return s;
}

}  // namespace kdl::imageproc
