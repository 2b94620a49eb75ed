#pragma once

#include <filesystem>
#include <iosfwd>

#include "kdl/parameters.hpp"

// Binary parameter checkpoint ("KDLW"):
//   magic "KDLW", u16 format version, u32 parameter count, then per parameter
//   u16 path length, UTF-8 path bytes, u8 rank, rank x u32 dims, little-endian
//   f32 data. All integers little-endian.
namespace kdl {

inline constexpr std::uint16_t kCheckpointVersion = 1;

void write_checkpoint(std::ostream& out, const ParameterSet<float>& params);
void write_checkpoint(const std::filesystem::path& path, const ParameterSet<float>& params);

// Loaded entries are all unfrozen; freezing is a property of the model.
ParameterSet<float> read_checkpoint(std::istream& in);
ParameterSet<float> read_checkpoint(const std::filesystem::path& path);

}  // namespace kdl
