#include "kdl/image.hpp"

#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "kdl/error.hpp"

namespace kdl {

Image::Image(std::size_t w, std::size_t h, std::size_t c, std::uint8_t fill)
    : width(w), height(h), channels(c) {
    if (w < 2 || h < 2) {
        throw Error(ErrorCode::kBadDims, "image must be at least 2x2, got " + std::to_string(w) + "x" +
                                             std::to_string(h));
    }
    if (c != 1 && c != 3) throw Error(ErrorCode::kBadDims, "image channels must be 1 or 3");
    pixels.assign(w * h * c, fill);
}

namespace {

// Skips whitespace and '#' comments, then reads an unsigned decimal.
std::size_t read_header_value(std::istream& in) {
    for (;;) {
        const int ch = in.peek();
        if (ch == '#') {
            std::string ignored;
            std::getline(in, ignored);
        } else if (ch == ' ' || ch == '\t' || ch == '\n' || ch == '\r') {
            in.get();
        } else {
            break;
        }
    }
    std::size_t value = 0;
    if (!(in >> value)) throw Error(ErrorCode::kImageLoadError, "malformed netpbm header");
    return value;
}

}  // namespace

Image read_pnm(std::istream& in) {
    char magic[2] = {0, 0};
    if (!in.read(magic, 2) || magic[0] != 'P' || (magic[1] != '5' && magic[1] != '6')) {
        throw Error(ErrorCode::kImageLoadError, "not a binary PGM/PPM (P5/P6) file");
    }
    const std::size_t channels = magic[1] == '5' ? 1 : 3;
    const std::size_t width = read_header_value(in);
    const std::size_t height = read_header_value(in);
    const std::size_t maxval = read_header_value(in);
    if (maxval == 0 || maxval > 255) {
        throw Error(ErrorCode::kImageLoadError, "only 8-bit netpbm supported (maxval " + std::to_string(maxval) + ")");
    }
    in.get();  // single whitespace before the raster
    Image img(width, height, channels);
    if (!in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()))) {
        throw Error(ErrorCode::kImageLoadError, "truncated raster");
    }
    if (maxval != 255) {
        for (auto& p : img.pixels) p = static_cast<std::uint8_t>((p * 255 + maxval / 2) / maxval);
    }
    return img;
}

Image read_pnm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::kImageLoadError, path.string() + ": cannot open");
    try {
        return read_pnm(in);
    } catch (const Error& e) {
        throw Error(ErrorCode::kImageLoadError, path.string() + ": " + e.what());
    }
}

void write_pnm(std::ostream& out, const Image& img) {
    out << (img.channels == 1 ? "P5" : "P6") << '\n' << img.width << ' ' << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
    if (!out) throw Error(ErrorCode::kIoError, "failed writing image");
}

void write_pnm(const std::filesystem::path& path, const Image& img) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIoError, "cannot open '" + path.string() + "' for writing");
    write_pnm(out, img);
}

}  // namespace kdl
