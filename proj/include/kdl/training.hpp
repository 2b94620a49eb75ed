#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "kdl/dataset.hpp"
#include "kdl/model.hpp"
#include "kdl/parameters.hpp"

namespace kdl {

// lambda * sum of squares over trainable parameters whose path does not end
// in ".bias". Returns an undefined tensor when lambda == 0 or nothing is
// covered.
template <typename T>
Tensor<T> l2_penalty(Tape<T>& tape, const ParameterSet<T>& params, double lambda);

// Mean cross-entropy plus l2_penalty. Throws LabelOutOfRange.
template <typename T>
Tensor<T> regularized_loss(Tape<T>& tape, const Tensor<T>& logits, std::span<const int> labels,
                           const ParameterSet<T>& params, double lambda);

struct TrainConfig {
    std::size_t epochs = 30;
    std::size_t batch_size = 32;
    OptimizerConfig optimizer;
    double l2 = 1e-4;
    std::uint64_t seed = 1;
    std::size_t eval_every = 1;
};

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0;
    double val_accuracy = 0;
    double wall_seconds = 0;
};

struct TrainingCurve {
    std::vector<EpochRecord> records;
};

// Header epoch,train_loss,val_accuracy,wall_seconds. Values use 17
// significant digits so files are reproducible for a fixed seed.
void write_metrics_csv(const std::filesystem::path& path, const TrainingCurve& curve);
TrainingCurve read_metrics_csv(const std::filesystem::path& path);

struct TrainResult {
    TrainingCurve curve;
    // Copy of the parameters at the epoch with the best validation accuracy
    // (the final epoch when there is no validation set).
    ParameterSet<float> best_parameters;
    std::size_t best_epoch = 0;
    double best_val_accuracy = 0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Minimises the regularised objective with mini-batches from train. After
// each epoch records the mean objective and the validation accuracy (carried
// forward on epochs skipped by eval_every). Throws Diverged on a non-finite
// loss. Frozen parameters are never modified.
TrainResult train(Classifier<float>& model, const SampleSet& train_set, const SampleSet& val_set,
                  const TrainConfig& config, const EpochCallback& on_epoch = {});

// Index of the largest value; ties go to the lowest index.
std::size_t argmax(std::span<const float> values);

// Predicted class per sample, in sample order.
std::vector<int> predict(const Classifier<float>& model, const SampleSet& samples, std::size_t batch_size = 64);

// Fraction of samples whose argmax equals the label. Throws EmptySplit.
double evaluate_accuracy(const Classifier<float>& model, const SampleSet& samples, std::size_t batch_size = 64);

ParameterSet<float> snapshot(const ParameterSet<float>& params);

struct PretrainResult {
    Expert<float> expert;
    TrainingCurve curve;
    double val_accuracy = 0;
};

// Trains a freshly initialised expert (all parameters) on a pretext task,
// then freezes its backbone. The head keeps the pretext classes; it is
// replaced when the expert joins a composite model.
PretrainResult pretrain_expert(ExpertVariant variant, const SampleSet& train_set, const SampleSet& val_set,
                               const TrainConfig& config, std::uint64_t init_seed);

extern template Tensor<float> l2_penalty(Tape<float>&, const ParameterSet<float>&, double);
extern template Tensor<double> l2_penalty(Tape<double>&, const ParameterSet<double>&, double);
extern template Tensor<float> regularized_loss(Tape<float>&, const Tensor<float>&, std::span<const int>,
                                               const ParameterSet<float>&, double);
extern template Tensor<double> regularized_loss(Tape<double>&, const Tensor<double>&, std::span<const int>,
                                                const ParameterSet<double>&, double);

}  // namespace kdl
