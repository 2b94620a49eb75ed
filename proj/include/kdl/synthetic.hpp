#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "kdl/image.hpp"

// Procedural texture classes standing in for photographed specimens. Class k
// is a sinusoidal grating with a class-specific orientation and frequency,
// drawn at high contrast inside a disc covering a quarter of the image (the
// "blob", at a random position). Outside the blob a lower-contrast grating of
// random orientation and frequency acts as clutter. Phases are random per
// specimen and Gaussian noise is added per pixel. The second view of every
// specimen is the first rotated by 180 degrees.
namespace kdl::synthetic {

struct SyntheticSpec {
    std::size_t num_classes = 10;
    std::size_t specimens_per_class = 150;
    std::size_t image_size = 64;
    std::uint64_t seed = 7;
    double noise_sigma = 40.0;
    double blob_amplitude = 60.0;
    double background_amplitude = 30.0;
};

struct Specimen {
    Image views[2];
    // 1 inside the blob, per view, row-major image_size^2.
    std::vector<std::uint8_t> blob_masks[2];
};

// Pure function of (spec, class_id, specimen_index).
Specimen render_specimen(const SyntheticSpec& spec, std::size_t class_id, std::size_t specimen_index);

// Fraction of the image covered by the blob.
inline constexpr double kBlobAreaFraction = 0.25;

// Writes images/<id>_v<view>.pgm and manifest.csv (splits 80/10/10 by
// specimen, seeded by spec.seed) under out_dir. Returns the manifest path.
std::filesystem::path generate(const SyntheticSpec& spec, const std::filesystem::path& out_dir);

std::string specimen_id(std::size_t class_id, std::size_t specimen_index);
// Inverse of specimen_id; returns false for ids not produced by it.
bool parse_specimen_id(const std::string& id, std::size_t& class_id, std::size_t& specimen_index);

}  // namespace kdl::synthetic
