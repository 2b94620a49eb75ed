#include "kdl/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "kdl/error.hpp"
#include "kdl/image.hpp"
#include "kdl/imageproc.hpp"

namespace kdl {

namespace {

constexpr std::string_view kManifestHeader = "path,class_id,class_name,specimen_id,view,split";

std::vector<std::string> split_csv(std::string_view line) {
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (;;) {
        const auto comma = line.find(',', start);
        fields.emplace_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return fields;
}

int parse_int_field(const std::string& s, std::size_t line_no, const char* what) {
    try {
        std::size_t used = 0;
        const int v = std::stoi(s, &used);
        if (used == s.size()) return v;
    } catch (const std::exception&) {
    }
    throw Error(ErrorCode::kParseError, "manifest line " + std::to_string(line_no) + ": bad " + what + " '" + s + "'");
}

}  // namespace

std::string_view split_name(Split split) noexcept {
    switch (split) {
        case Split::kTrain: return "train";
        case Split::kVal: return "val";
        case Split::kTest: return "test";
        case Split::kUnassigned: return "";
    }
    return "";
}

Split parse_split(std::string_view name) {
    if (name == "train") return Split::kTrain;
    if (name == "val") return Split::kVal;
    if (name == "test") return Split::kTest;
    if (name.empty()) return Split::kUnassigned;
    throw Error(ErrorCode::kParseError, "unknown split '" + std::string(name) + "'");
}

std::size_t Manifest::num_classes() const {
    int top = -1;
    for (const auto& r : records) top = std::max(top, r.class_id);
    return static_cast<std::size_t>(top + 1);
}

std::vector<std::string> Manifest::class_names() const {
    std::vector<std::string> names(num_classes());
    std::vector<bool> seen(names.size(), false);
    for (const auto& r : records) {
        const auto c = static_cast<std::size_t>(r.class_id);
        if (!seen[c]) {
            names[c] = r.class_name;
            seen[c] = true;
        }
    }
    return names;
}

std::vector<ManifestRecord> Manifest::split(Split which) const {
    std::vector<ManifestRecord> out;
    std::copy_if(records.begin(), records.end(), std::back_inserter(out),
                 [which](const ManifestRecord& r) { return r.split == which; });
    return out;
}

void validate_records(std::span<const ManifestRecord> records) {
    std::set<std::string, std::less<>> paths;
    std::set<int> classes;
    std::map<std::string, std::pair<int, Split>, std::less<>> specimens;
    for (const auto& r : records) {
        if (!paths.insert(r.path).second) throw Error(ErrorCode::kParseError, "duplicate path '" + r.path + "'");
        if (r.class_id < 0) throw Error(ErrorCode::kParseError, "negative class id for '" + r.path + "'");
        if (r.view != 0 && r.view != 1) throw Error(ErrorCode::kParseError, "view must be 0 or 1 for '" + r.path + "'");
        classes.insert(r.class_id);
        auto [it, fresh] = specimens.emplace(r.specimen_id, std::make_pair(r.class_id, r.split));
        if (!fresh) {
            if (it->second.first != r.class_id) {
                throw Error(ErrorCode::kParseError, "specimen '" + r.specimen_id + "' has views in two classes");
            }
            if (it->second.second != r.split) {
                throw Error(ErrorCode::kSpecimenSplitLeak, "specimen '" + r.specimen_id + "' appears in splits '" +
                                                               std::string(split_name(it->second.second)) + "' and '" +
                                                               std::string(split_name(r.split)) + "'");
            }
        }
    }
    int expected = 0;
    for (int c : classes) {
        if (c != expected) {
            throw Error(ErrorCode::kNonContiguousClasses,
                        "class ids must be 0..C-1; missing " + std::to_string(expected));
        }
        ++expected;
    }
}

Manifest parse_manifest(std::istream& in, std::filesystem::path root) {
    Manifest m;
    m.root = std::move(root);
    std::string line;
    std::size_t line_no = 0;
    if (!std::getline(in, line)) throw Error(ErrorCode::kParseError, "manifest line 1: empty file");
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kManifestHeader) {
        throw Error(ErrorCode::kParseError, "manifest line 1: expected header '" + std::string(kManifestHeader) + "'");
    }
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto f = split_csv(line);
        if (f.size() != 6) {
            throw Error(ErrorCode::kParseError, "manifest line " + std::to_string(line_no) + ": expected 6 fields, got " +
                                                    std::to_string(f.size()));
        }
        ManifestRecord r;
        r.path = f[0];
        r.class_id = parse_int_field(f[1], line_no, "class_id");
        r.class_name = f[2];
        r.specimen_id = f[3];
        r.view = parse_int_field(f[4], line_no, "view");
        try {
            r.split = parse_split(f[5]);
        } catch (const Error&) {
            throw Error(ErrorCode::kParseError, "manifest line " + std::to_string(line_no) + ": bad split '" + f[5] + "'");
        }
        if (r.path.empty()) throw Error(ErrorCode::kParseError, "manifest line " + std::to_string(line_no) + ": empty path");
        m.records.push_back(std::move(r));
    }
    validate_records(m.records);
    return m;
}

Manifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::kIoError, "cannot open manifest '" + path.string() + "'");
    return parse_manifest(in, path.parent_path());
}

void write_manifest(const std::filesystem::path& path, std::span<const ManifestRecord> records) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIoError, "cannot write manifest '" + path.string() + "'");
    out << kManifestHeader << '\n';
    for (const auto& r : records) {
        out << r.path << ',' << r.class_id << ',' << r.class_name << ',' << r.specimen_id << ',' << r.view << ','
            << split_name(r.split) << '\n';
    }
    if (!out) throw Error(ErrorCode::kIoError, "failed writing manifest '" + path.string() + "'");
}

std::vector<ManifestRecord> split_by_specimen(std::vector<ManifestRecord> records, std::array<double, 3> fractions,
                                              std::uint64_t seed) {
    const double total = fractions[0] + fractions[1] + fractions[2];
    if (fractions[0] <= 0 || fractions[1] <= 0 || fractions[2] <= 0 || std::abs(total - 1.0) > 1e-9) {
        throw Error(ErrorCode::kBadConfig, "split fractions must be positive and sum to 1");
    }
    // Specimens per class, in first-appearance order.
    std::map<int, std::vector<std::string>> per_class;
    std::set<std::string, std::less<>> seen;
    for (const auto& r : records) {
        if (seen.insert(r.specimen_id).second) per_class[r.class_id].push_back(r.specimen_id);
    }
    std::mt19937_64 rng(seed);
    std::map<std::string, Split, std::less<>> assignment;
    for (auto& [cls, specimens] : per_class) {
        const std::size_t n = specimens.size();
        if (n < 3) {
            throw Error(ErrorCode::kTooFewSpecimens, "class " + std::to_string(cls) + " has " + std::to_string(n) +
                                                         " specimens; at least 3 are needed");
        }
        std::shuffle(specimens.begin(), specimens.end(), rng);
        const auto cut = [n](double q) { return static_cast<std::size_t>(std::llround(q * static_cast<double>(n))); };
        const std::size_t train_end = std::clamp<std::size_t>(cut(fractions[0]), 1, n - 2);
        const std::size_t val_end = std::clamp<std::size_t>(cut(fractions[0] + fractions[1]), train_end + 1, n - 1);
        for (std::size_t i = 0; i < n; ++i) {
            assignment[specimens[i]] = i < train_end ? Split::kTrain : (i < val_end ? Split::kVal : Split::kTest);
        }
    }
    for (auto& r : records) r.split = assignment.at(r.specimen_id);
    return records;
}

SampleSet load_samples(const Manifest& manifest, std::span<const ManifestRecord> records, const LoadOptions& options,
                       std::size_t num_classes) {
    SampleSet set;
    set.height = set.width = options.image_size;
    set.num_classes = num_classes;
    set.inputs.resize(records.size() * set.sample_size());
    set.labels.resize(records.size());
    set.paths.resize(records.size());

    const auto load_one = [&](std::size_t i) {
        const auto& r = records[i];
        if (r.class_id < 0 || static_cast<std::size_t>(r.class_id) >= num_classes) {
            throw Error(ErrorCode::kLabelOutOfRange, "record '" + r.path + "' has class " + std::to_string(r.class_id));
        }
        imageproc::StackedSample sample;
        bool cached = false;
        if (options.cache_dir) {
            const auto cache_path = *options.cache_dir / (r.path + ".olt");
            if (std::filesystem::exists(cache_path)) {
                sample = imageproc::read_olt(cache_path);
                cached = sample.height == options.image_size && sample.width == options.image_size;
            }
        }
        if (!cached) {
            const auto full = manifest.root / r.path;
            try {
                sample = imageproc::preprocess(read_pnm(full), options.image_size);
            } catch (const Error& e) {
                if (e.code() == ErrorCode::kImageLoadError) throw;
                throw Error(ErrorCode::kImageLoadError, full.string() + ": " + e.what());
            }
        }
        std::copy(sample.values.begin(), sample.values.end(),
                  set.inputs.begin() + static_cast<std::ptrdiff_t>(i * set.sample_size()));
        set.labels[i] = r.class_id;
        set.paths[i] = r.path;
    };

    std::size_t threads = options.threads ? options.threads : std::max(1u, std::thread::hardware_concurrency());
    threads = std::min(threads, std::max<std::size_t>(1, records.size()));
    if (threads <= 1) {
        for (std::size_t i = 0; i < records.size(); ++i) load_one(i);
        return set;
    }
    std::vector<std::exception_ptr> failures(threads);
    std::vector<std::thread> workers;
    for (std::size_t t = 0; t < threads; ++t) {
        workers.emplace_back([&, t] {
            try {
                for (std::size_t i = t; i < records.size(); i += threads) load_one(i);
            } catch (...) {
                failures[t] = std::current_exception();
            }
        });
    }
    for (auto& w : workers) w.join();
    for (auto& f : failures) {
        if (f) std::rethrow_exception(f);
    }
    return set;
}

BatchStream::BatchStream(const SampleSet& samples, std::size_t batch_size, std::optional<std::uint64_t> shuffle_seed)
    : samples_(&samples), batch_size_(batch_size), shuffle_seed_(shuffle_seed) {
    if (batch_size == 0) throw Error(ErrorCode::kBadConfig, "batch size must be >= 1");
}

std::size_t BatchStream::batches_per_epoch() const noexcept {
    return (samples_->size() + batch_size_ - 1) / batch_size_;
}

std::vector<std::size_t> BatchStream::epoch_order(std::size_t epoch) const {
    std::vector<std::size_t> order(samples_->size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (shuffle_seed_) {
        std::seed_seq seq{static_cast<std::uint32_t>(*shuffle_seed_), static_cast<std::uint32_t>(*shuffle_seed_ >> 32),
                          static_cast<std::uint32_t>(epoch)};
        std::mt19937_64 rng(seq);
        std::shuffle(order.begin(), order.end(), rng);
    }
    return order;
}

Batch BatchStream::make_batch(std::span<const std::size_t> indices) const {
    const std::size_t per = samples_->sample_size();
    Batch b;
    b.inputs = Tensor<float>({indices.size(), 3, samples_->height, samples_->width});
    auto dst = b.inputs.data();
    for (std::size_t k = 0; k < indices.size(); ++k) {
        auto src = samples_->sample(indices[k]);
        std::copy(src.begin(), src.end(), dst.begin() + static_cast<std::ptrdiff_t>(k * per));
        b.labels.push_back(samples_->labels[indices[k]]);
    }
    b.indices.assign(indices.begin(), indices.end());
    return b;
}

void BatchStream::for_each_batch(std::size_t epoch, const std::function<void(const Batch&)>& fn) const {
    const auto order = epoch_order(epoch);
    for (std::size_t start = 0; start < order.size(); start += batch_size_) {
        const std::size_t end = std::min(order.size(), start + batch_size_);
        fn(make_batch(std::span<const std::size_t>(order).subspan(start, end - start)));
    }
}

}  // namespace kdl
