#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kdl/tensor.hpp"

namespace kdl {

enum class Split { kUnassigned, kTrain, kVal, kTest };

std::string_view split_name(Split split) noexcept;
// Accepts "train", "val", "test" and "" (unassigned). Throws ParseError.
Split parse_split(std::string_view name);

struct ManifestRecord {
    std::string path;  // relative to the manifest's directory
    int class_id = 0;
    std::string class_name;
    std::string specimen_id;
    int view = 0;
    Split split = Split::kUnassigned;

    friend bool operator==(const ManifestRecord&, const ManifestRecord&) = default;
};

struct Manifest {
    std::filesystem::path root;
    std::vector<ManifestRecord> records;

    std::size_t num_classes() const;
    // Indexed by class id; the name of the first record of each class.
    std::vector<std::string> class_names() const;
    std::vector<ManifestRecord> split(Split which) const;
};

// CSV with header path,class_id,class_name,specimen_id,view,split. Validates
// duplicate paths (ParseError), contiguous class ids (NonContiguousClasses),
// consistent specimen classes and specimen/split leakage (SpecimenSplitLeak).
Manifest parse_manifest(std::istream& in, std::filesystem::path root = {});
Manifest load_manifest(const std::filesystem::path& path);
void validate_records(std::span<const ManifestRecord> records);
void write_manifest(const std::filesystem::path& path, std::span<const ManifestRecord> records);

// Assigns splits per class by shuffling specimen ids with seed and cutting at
// the cumulative fractions. Both views follow their specimen. Throws
// TooFewSpecimens when a class has fewer than 3 specimens.
std::vector<ManifestRecord> split_by_specimen(std::vector<ManifestRecord> records,
                                              std::array<double, 3> fractions, std::uint64_t seed);

// Preprocessed samples held in memory, [N,3,h,w] contiguous.
struct SampleSet {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t num_classes = 0;
    std::vector<float> inputs;
    std::vector<int> labels;
    std::vector<std::string> paths;

    std::size_t size() const noexcept { return labels.size(); }
    std::size_t sample_size() const noexcept { return 3 * height * width; }
    std::span<const float> sample(std::size_t i) const {
        return std::span<const float>(inputs).subspan(i * sample_size(), sample_size());
    }
};

struct LoadOptions {
    std::size_t image_size = 64;
    std::size_t threads = 0;  // 0: hardware concurrency
    std::optional<std::filesystem::path> cache_dir;  // .olt files, read if present
};

// Loads and preprocesses records (ImageLoadError on failure). Preprocessing is
// spread over worker threads; output order is record order.
SampleSet load_samples(const Manifest& manifest, std::span<const ManifestRecord> records,
                       const LoadOptions& options, std::size_t num_classes);

struct Batch {
    Tensor<float> inputs;  // [B,3,h,w]
    std::vector<int> labels;
    std::vector<std::size_t> indices;  // into the SampleSet
};

// Epoch-wise mini-batches over a SampleSet. Without a shuffle seed the order
// is the sample order; with one it is a permutation fixed by (seed, epoch).
class BatchStream {
public:
    BatchStream(const SampleSet& samples, std::size_t batch_size, std::optional<std::uint64_t> shuffle_seed);

    std::size_t batches_per_epoch() const noexcept;
    std::vector<std::size_t> epoch_order(std::size_t epoch) const;
    Batch make_batch(std::span<const std::size_t> indices) const;
    void for_each_batch(std::size_t epoch, const std::function<void(const Batch&)>& fn) const;

private:
    const SampleSet* samples_;
    std::size_t batch_size_;
    std::optional<std::uint64_t> shuffle_seed_;
};

}  // namespace kdl
