#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

namespace kdl {

// 8-bit raster, row-major, channel-interleaved when channels == 3.
struct Image {
    std::size_t width = 0;
    std::size_t height = 0;
    std::size_t channels = 1;
    std::vector<std::uint8_t> pixels;

    Image() = default;
    // Throws BadDims unless width, height >= 2 and channels is 1 or 3.
    Image(std::size_t width, std::size_t height, std::size_t channels, std::uint8_t fill = 0);

    bool is_gray() const noexcept { return channels == 1; }
    std::uint8_t& at(std::size_t x, std::size_t y, std::size_t c = 0) {
        return pixels[(y * width + x) * channels + c];
    }
    std::uint8_t at(std::size_t x, std::size_t y, std::size_t c = 0) const {
        return pixels[(y * width + x) * channels + c];
    }

    friend bool operator==(const Image&, const Image&) = default;
};

// Binary netpbm: P5 (gray) and P6 (RGB), maxval <= 255. Header comments are
// skipped. Errors are reported as ImageLoadError / IoError.
Image read_pnm(std::istream& in);
Image read_pnm(const std::filesystem::path& path);
void write_pnm(std::ostream& out, const Image& img);
void write_pnm(const std::filesystem::path& path, const Image& img);

}  // namespace kdl
