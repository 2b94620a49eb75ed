#pragma once

#include <doctest.h>

#include <filesystem>
#include <string>
#include <vector>

#include "kdl/dataset.hpp"
#include "kdl/error.hpp"
#include "kdl/model.hpp"

namespace testing {

template <typename Fn>
kdl::ErrorCode code_of(Fn&& fn) {
    try {
        fn();
    } catch (const kdl::Error& e) {
        return e.code();
    }
    FAIL("expected kdl::Error");
    return kdl::ErrorCode::kBadConfig;
}

inline std::filesystem::path scratch(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("kdl_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

// Logits are one-hot on the class stored in the first value of each sample,
// or constant when that value is negative.
class LookupClassifier : public kdl::Classifier<float> {
public:
    explicit LookupClassifier(std::size_t classes) : classes_(classes) {}

    kdl::Tensor<float> logits(kdl::Tape<float>&, const kdl::Tensor<float>& inputs) const override {
        const std::size_t b = inputs.dim(0);
        const std::size_t stride = inputs.numel() / b;
        kdl::Tensor<float> out({b, classes_}, 0.0f);
        for (std::size_t i = 0; i < b; ++i) {
            const float v = inputs.data()[i * stride];
            if (v >= 0) out.data()[i * classes_ + static_cast<std::size_t>(v)] = 1.0f;
        }
        return out;
    }
    kdl::ParameterSet<float>& parameters() override { return params_; }
    const kdl::ParameterSet<float>& parameters() const override { return params_; }
    std::size_t num_classes() const override { return classes_; }

private:
    std::size_t classes_;
    kdl::ParameterSet<float> params_;
};

// 2x2 samples whose first value is the class the lookup classifier predicts.
inline kdl::SampleSet lookup_samples(std::size_t classes, const std::vector<int>& labels,
                                     const std::vector<int>& predicted) {
    kdl::SampleSet s;
    s.height = 2;
    s.width = 2;
    s.num_classes = classes;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        s.labels.push_back(labels[i]);
        s.inputs.push_back(static_cast<float>(predicted[i]));
        for (int k = 1; k < 12; ++k) s.inputs.push_back(0.0f);
        s.paths.push_back("s" + std::to_string(i));
    }
    return s;
}

}  // namespace testing
