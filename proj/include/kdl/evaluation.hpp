#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "kdl/dataset.hpp"
#include "kdl/image.hpp"
#include "kdl/model.hpp"

namespace kdl {

// Square count matrix; rows are true classes, columns predicted classes.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(std::vector<std::string> class_names);

    // Throws LabelOutOfRange.
    void add(int truth, int predicted, std::size_t count = 1);

    std::size_t num_classes() const noexcept { return names_.size(); }
    const std::vector<std::string>& class_names() const noexcept { return names_; }
    std::size_t at(std::size_t truth, std::size_t predicted) const { return counts_.at(truth * num_classes() + predicted); }
    std::size_t row_sum(std::size_t truth) const;
    std::size_t col_sum(std::size_t predicted) const;
    std::size_t trace() const;
    std::size_t total() const;
    // trace / total. Throws EmptySplit when total == 0.
    double accuracy() const;

    friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

private:
    std::vector<std::string> names_;
    std::vector<std::size_t> counts_;
};

// Class names default to "0".."C-1" when names is empty. Throws EmptySplit.
ConfusionMatrix confusion(const Classifier<float>& model, const SampleSet& samples,
                          std::vector<std::string> names = {});

// CSV with the class names as first row and first column.
void write_confusion_csv(std::ostream& out, const ConfusionMatrix& cm);
void write_confusion_csv(const std::filesystem::path& path, const ConfusionMatrix& cm);
ConfusionMatrix read_confusion_csv(std::istream& in);
ConfusionMatrix read_confusion_csv(const std::filesystem::path& path);

// Grayscale cells of cell_px pixels, intensity round(255 * count / row max);
// rows without samples render black.
Image confusion_image(const ConfusionMatrix& cm, std::size_t cell_px = 16);

struct ClassReport {
    std::string name;
    double precision = 0;  // 0 when the class is never predicted
    double recall = 0;     // 0 when the class has no samples
    std::size_t support = 0;
};

std::vector<ClassReport> per_class_report(const ConfusionMatrix& cm);
// Header class,precision,recall,support.
void write_report_csv(const std::filesystem::path& path, const std::vector<ClassReport>& report);

// confusion.csv, confusion.ppm and report.csv under out_dir.
void write_evaluation(const std::filesystem::path& out_dir, const ConfusionMatrix& cm);

}  // namespace kdl
