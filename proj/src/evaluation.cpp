#include "kdl/evaluation.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "kdl/error.hpp"
#include "kdl/training.hpp"

namespace kdl {

ConfusionMatrix::ConfusionMatrix(std::vector<std::string> class_names)
    : names_(std::move(class_names)), counts_(names_.size() * names_.size(), 0) {
    if (names_.empty()) throw Error(ErrorCode::kBadConfig, "confusion matrix needs at least one class");
}

void ConfusionMatrix::add(int truth, int predicted, std::size_t count) {
    const auto c = static_cast<int>(num_classes());
    if (truth < 0 || truth >= c || predicted < 0 || predicted >= c) {
        throw Error(ErrorCode::kLabelOutOfRange, "class pair (" + std::to_string(truth) + ", " +
                                                     std::to_string(predicted) + ") outside [0, " +
                                                     std::to_string(c) + ")");
    }
    counts_[static_cast<std::size_t>(truth) * num_classes() + static_cast<std::size_t>(predicted)] += count;
}

std::size_t ConfusionMatrix::row_sum(std::size_t truth) const {
    std::size_t s = 0;
    for (std::size_t j = 0; j < num_classes(); ++j) s += at(truth, j);
    return s;
}

std::size_t ConfusionMatrix::col_sum(std::size_t predicted) const {
    std::size_t s = 0;
    for (std::size_t i = 0; i < num_classes(); ++i) s += at(i, predicted);
    return s;
}

std::size_t ConfusionMatrix::trace() const {
    std::size_t s = 0;
    for (std::size_t i = 0; i < num_classes(); ++i) s += at(i, i);
    return s;
}

std::size_t ConfusionMatrix::total() const {
    std::size_t s = 0;
    for (auto v : counts_) s += v;
    return s;
}

double ConfusionMatrix::accuracy() const {
    const std::size_t n = total();
    if (n == 0) throw Error(ErrorCode::kEmptySplit, "confusion matrix is empty");
    return static_cast<double>(trace()) / static_cast<double>(n);
}

ConfusionMatrix confusion(const Classifier<float>& model, const SampleSet& samples, std::vector<std::string> names) {
    if (samples.size() == 0) throw Error(ErrorCode::kEmptySplit, "cannot evaluate an empty split");
    if (names.empty()) {
        for (std::size_t c = 0; c < model.num_classes(); ++c) names.push_back(std::to_string(c));
    }
    ConfusionMatrix cm(std::move(names));
    const auto predictions = predict(model, samples);
    for (std::size_t i = 0; i < predictions.size(); ++i) cm.add(samples.labels[i], predictions[i]);
    return cm;
}

void write_confusion_csv(std::ostream& out, const ConfusionMatrix& cm) {
    out << "truth\\predicted";
    for (const auto& n : cm.class_names()) out << ',' << n;
    out << '\n';
    for (std::size_t i = 0; i < cm.num_classes(); ++i) {
        out << cm.class_names()[i];
        for (std::size_t j = 0; j < cm.num_classes(); ++j) out << ',' << cm.at(i, j);
        out << '\n';
    }
}

void write_confusion_csv(const std::filesystem::path& path, const ConfusionMatrix& cm) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIoError, "cannot write '" + path.string() + "'");
    write_confusion_csv(out, cm);
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

}  // namespace

ConfusionMatrix read_confusion_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw Error(ErrorCode::kParseError, "confusion csv: empty");
    auto header = split_csv(line);
    if (header.size() < 2) throw Error(ErrorCode::kParseError, "confusion csv line 1: no classes");
    std::vector<std::string> names(header.begin() + 1, header.end());
    ConfusionMatrix cm(names);
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (!std::getline(in, line)) throw Error(ErrorCode::kParseError, "confusion csv: missing rows");
        auto cells = split_csv(line);
        if (cells.size() != names.size() + 1 || cells[0] != names[i]) {
            throw Error(ErrorCode::kParseError, "confusion csv line " + std::to_string(i + 2));
        }
        for (std::size_t j = 0; j < names.size(); ++j) {
            try {
                cm.add(static_cast<int>(i), static_cast<int>(j), std::stoull(cells[j + 1]));
            } catch (const std::logic_error&) {
                throw Error(ErrorCode::kParseError, "confusion csv line " + std::to_string(i + 2) + ": bad count");
            }
        }
    }
    return cm;
}

ConfusionMatrix read_confusion_csv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::kIoError, "cannot open '" + path.string() + "'");
    return read_confusion_csv(in);
}

Image confusion_image(const ConfusionMatrix& cm, std::size_t cell_px) {
    const std::size_t c = cm.num_classes();
    const std::size_t side = std::max<std::size_t>(2, c * cell_px);
    Image img(side, side, 3, 0);
    for (std::size_t i = 0; i < c; ++i) {
        std::size_t row_max = 0;
        for (std::size_t j = 0; j < c; ++j) row_max = std::max(row_max, cm.at(i, j));
        for (std::size_t j = 0; j < c; ++j) {
            std::uint8_t v = 0;
            if (row_max > 0) {
                v = static_cast<std::uint8_t>(
                    std::lround(255.0 * static_cast<double>(cm.at(i, j)) / static_cast<double>(row_max)));
            }
            for (std::size_t y = i * cell_px; y < (i + 1) * cell_px; ++y) {
                for (std::size_t x = j * cell_px; x < (j + 1) * cell_px; ++x) {
                    for (std::size_t ch = 0; ch < 3; ++ch) img.at(x, y, ch) = v;
                }
            }
        }
    }
    return img;
}

std::vector<ClassReport> per_class_report(const ConfusionMatrix& cm) {
    std::vector<ClassReport> out;
    for (std::size_t k = 0; k < cm.num_classes(); ++k) {
        ClassReport r;
        r.name = cm.class_names()[k];
        r.support = cm.row_sum(k);
        const std::size_t predicted = cm.col_sum(k);
        const auto tp = static_cast<double>(cm.at(k, k));
        r.precision = predicted ? tp / static_cast<double>(predicted) : 0.0;
        r.recall = r.support ? tp / static_cast<double>(r.support) : 0.0;
        out.push_back(r);
    }
    return out;
}

void write_report_csv(const std::filesystem::path& path, const std::vector<ClassReport>& report) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIoError, "cannot write '" + path.string() + "'");
    out << "class,precision,recall,support\n";
    char buf[64];
    for (const auto& r : report) {
        std::snprintf(buf, sizeof buf, ",%.6f,%.6f,%zu\n", r.precision, r.recall, r.support);
        out << r.name << buf;
    }
}

void write_evaluation(const std::filesystem::path& out_dir, const ConfusionMatrix& cm) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw Error(ErrorCode::kIoError, "cannot create '" + out_dir.string() + "'");
    write_confusion_csv(out_dir / "confusion.csv", cm);
    write_pnm(out_dir / "confusion.ppm", confusion_image(cm));
    write_report_csv(out_dir / "report.csv", per_class_report(cm));
}

}  // namespace kdl
