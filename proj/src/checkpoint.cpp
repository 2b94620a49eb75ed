#include "kdl/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "kdl/error.hpp"

namespace kdl {

namespace {

constexpr std::array<char, 4> kMagic{'K', 'D', 'L', 'W'};

template <typename U>
void put_le(std::ostream& out, U value) {
    std::array<char, sizeof(U)> bytes{};
    for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFF);
    out.write(bytes.data(), bytes.size());
}

template <typename U>
U get_le(std::istream& in) {
    std::array<unsigned char, sizeof(U)> bytes{};
    if (!in.read(reinterpret_cast<char*>(bytes.data()), bytes.size())) {
        throw Error(ErrorCode::kIoError, "truncated checkpoint");
    }
    U value = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(static_cast<U>(bytes[i]) << (8 * i));
    return value;
}

}  // namespace

void write_checkpoint(std::ostream& out, const ParameterSet<float>& params) {
    out.write(kMagic.data(), kMagic.size());
    put_le<std::uint16_t>(out, kCheckpointVersion);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
    for (const auto& e : params.entries()) {
        if (e.path.size() > 0xFFFF) throw Error(ErrorCode::kIoError, "parameter path too long");
        put_le<std::uint16_t>(out, static_cast<std::uint16_t>(e.path.size()));
        out.write(e.path.data(), static_cast<std::streamsize>(e.path.size()));
        put_le<std::uint8_t>(out, static_cast<std::uint8_t>(e.tensor.rank()));
        for (std::size_t d : e.tensor.shape()) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
        for (float v : e.tensor.data()) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
    }
    if (!out) throw Error(ErrorCode::kIoError, "failed writing checkpoint");
}

void write_checkpoint(const std::filesystem::path& path, const ParameterSet<float>& params) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIoError, "cannot open '" + path.string() + "' for writing");
    write_checkpoint(out, params);
}

ParameterSet<float> read_checkpoint(std::istream& in) {
    std::array<char, 4> magic{};
    if (!in.read(magic.data(), magic.size()) || magic != kMagic) {
        throw Error(ErrorCode::kIoError, "not a KDLW checkpoint");
    }
    const auto version = get_le<std::uint16_t>(in);
    if (version != kCheckpointVersion) {
        throw Error(ErrorCode::kIoError, "unsupported checkpoint version " + std::to_string(version));
    }
    const auto count = get_le<std::uint32_t>(in);
    ParameterSet<float> params;
    for (std::uint32_t p = 0; p < count; ++p) {
        const auto len = get_le<std::uint16_t>(in);
        std::string path(len, '\0');
        if (!in.read(path.data(), len)) throw Error(ErrorCode::kIoError, "truncated checkpoint");
        const auto rank = get_le<std::uint8_t>(in);
        Shape shape(rank);
        for (auto& d : shape) d = get_le<std::uint32_t>(in);
        std::vector<float> data(shape_numel(shape));
        for (auto& v : data) v = std::bit_cast<float>(get_le<std::uint32_t>(in));
        params.add(std::move(path), Tensor<float>(std::move(shape), std::move(data)));
    }
    return params;
}

ParameterSet<float> read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::kIoError, "cannot open '" + path.string() + "'");
    return read_checkpoint(in);
}

}  // namespace kdl
