#include "kdl/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "kdl/dataset.hpp"
#include "kdl/error.hpp"

namespace kdl::synthetic {

namespace {

constexpr double kLowFrequency = 0.10;   // cycles per pixel
constexpr double kHighFrequency = 0.14;

}  // namespace

std::string specimen_id(std::size_t class_id, std::size_t specimen_index) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "c%03zu_s%04zu", class_id, specimen_index);
    return buf;
}

bool parse_specimen_id(const std::string& id, std::size_t& class_id, std::size_t& specimen_index) {
    int consumed = 0;
    return std::sscanf(id.c_str(), "c%zu_s%zu%n", &class_id, &specimen_index, &consumed) == 2 &&
           static_cast<std::size_t>(consumed) == id.size();
}

Specimen render_specimen(const SyntheticSpec& spec, std::size_t class_id, std::size_t specimen_index) {
    const std::size_t n = spec.image_size;
    std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                      static_cast<std::uint32_t>(class_id), static_cast<std::uint32_t>(specimen_index)};
    std::mt19937_64 rng(seq);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, spec.noise_sigma);

    const double theta = std::numbers::pi * static_cast<double>(class_id) / static_cast<double>(spec.num_classes);
    const double freq = class_id % 2 ? kHighFrequency : kLowFrequency;
    const double phase = 2.0 * std::numbers::pi * unit(rng);
    const double radius = static_cast<double>(n) * std::sqrt(kBlobAreaFraction / std::numbers::pi);
    const double span = static_cast<double>(n) - 2.0 * radius;
    const double cx = radius + span * unit(rng);
    const double cy = radius + span * unit(rng);
    const double kx = 2.0 * std::numbers::pi * freq * std::cos(theta);
    const double ky = 2.0 * std::numbers::pi * freq * std::sin(theta);
    // Clutter outside the blob: a grating unrelated to the class.
    const double clutter_theta = std::numbers::pi * unit(rng);
    const double clutter_freq = unit(rng) < 0.5 ? kLowFrequency : kHighFrequency;
    const double clutter_phase = 2.0 * std::numbers::pi * unit(rng);
    const double cx_k = 2.0 * std::numbers::pi * clutter_freq * std::cos(clutter_theta);
    const double cy_k = 2.0 * std::numbers::pi * clutter_freq * std::sin(clutter_theta);

    Specimen s;
    s.views[0] = Image(n, n, 1);
    s.blob_masks[0].assign(n * n, 0);
    for (std::size_t y = 0; y < n; ++y) {
        for (std::size_t x = 0; x < n; ++x) {
            const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
            const bool inside = (px - cx) * (px - cx) + (py - cy) * (py - cy) <= radius * radius;
            const double texture = inside ? spec.blob_amplitude * std::sin(kx * px + ky * py + phase)
                                          : spec.background_amplitude * std::sin(cx_k * px + cy_k * py + clutter_phase);
            const double v = 128.0 + texture + noise(rng);
            s.views[0].at(x, y) = static_cast<std::uint8_t>(std::clamp(std::round(v), 0.0, 255.0));
            s.blob_masks[0][y * n + x] = inside ? 1 : 0;
        }
    }
    s.views[1] = Image(n, n, 1);
    s.blob_masks[1].assign(n * n, 0);
    for (std::size_t y = 0; y < n; ++y) {
        for (std::size_t x = 0; x < n; ++x) {
            s.views[1].at(n - 1 - x, n - 1 - y) = s.views[0].at(x, y);
            s.blob_masks[1][(n - 1 - y) * n + (n - 1 - x)] = s.blob_masks[0][y * n + x];
        }
    }
    return s;
}

std::filesystem::path generate(const SyntheticSpec& spec, const std::filesystem::path& out_dir) {
    if (spec.num_classes < 2 || spec.specimens_per_class < 2) {
        throw Error(ErrorCode::kBadConfig, "synthetic dataset needs >= 2 classes and >= 2 specimens per class");
    }
    if (spec.image_size < 8) throw Error(ErrorCode::kBadConfig, "synthetic image size must be >= 8");
    std::error_code ec;
    std::filesystem::create_directories(out_dir / "images", ec);
    if (ec) throw Error(ErrorCode::kIoError, "cannot create '" + (out_dir / "images").string() + "': " + ec.message());

    std::vector<ManifestRecord> records;
    records.reserve(spec.num_classes * spec.specimens_per_class * 2);
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
        char name[32];
        std::snprintf(name, sizeof name, "class_%02zu", c);
        for (std::size_t i = 0; i < spec.specimens_per_class; ++i) {
            const Specimen sp = render_specimen(spec, c, i);
            const std::string id = specimen_id(c, i);
            for (int v = 0; v < 2; ++v) {
                const std::string rel = "images/" + id + "_v" + std::to_string(v) + ".pgm";
                write_pnm(out_dir / rel, sp.views[v]);
                records.push_back(ManifestRecord{rel, static_cast<int>(c), name, id, v, Split::kUnassigned});
            }
        }
    }
    if (spec.specimens_per_class >= 3) records = split_by_specimen(std::move(records), {0.8, 0.1, 0.1}, spec.seed);
    const auto manifest = out_dir / "manifest.csv";
    write_manifest(manifest, records);
    return manifest;
}

}  // namespace kdl::synthetic
