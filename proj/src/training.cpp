#include "kdl/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "kdl/error.hpp"
#include "kdl/seed.hpp"

namespace kdl {

template <typename T>
Tensor<T> l2_penalty(Tape<T>& tape, const ParameterSet<T>& params, double lambda) {
    if (lambda == 0.0) return {};
    std::vector<Tensor<T>> terms;
    for (const auto& e : params.entries()) {
        if (e.frozen || std::string_view(e.path).ends_with(".bias")) continue;
        terms.push_back(ops::sum_squares(tape, e.tensor));
    }
    if (terms.empty()) return {};
    Tensor<T> total = terms[0];
    for (std::size_t i = 1; i < terms.size(); ++i) total = ops::add(tape, total, terms[i]);
    return ops::scale(tape, total, static_cast<T>(lambda));
}

template <typename T>
Tensor<T> regularized_loss(Tape<T>& tape, const Tensor<T>& logits, std::span<const int> labels,
                           const ParameterSet<T>& params, double lambda) {
    Tensor<T> loss = ops::cross_entropy(tape, logits, labels);
    Tensor<T> penalty = l2_penalty(tape, params, lambda);
    return penalty.defined() ? ops::add(tape, loss, penalty) : loss;
}

void write_metrics_csv(const std::filesystem::path& path, const TrainingCurve& curve) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIoError, "cannot write '" + path.string() + "'");
    out << "epoch,train_loss,val_accuracy,wall_seconds\n";
    char buf[128];
    for (const auto& r : curve.records) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.3f\n", r.epoch, r.train_loss, r.val_accuracy,
                      r.wall_seconds);
        out << buf;
    }
}

TrainingCurve read_metrics_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::kIoError, "cannot open '" + path.string() + "'");
    std::string line;
    std::getline(in, line);
    if (line != "epoch,train_loss,val_accuracy,wall_seconds") {
        throw Error(ErrorCode::kParseError, "metrics line 1: unexpected header");
    }
    TrainingCurve curve;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        EpochRecord r;
        if (std::sscanf(line.c_str(), "%zu,%lf,%lf,%lf", &r.epoch, &r.train_loss, &r.val_accuracy,
                        &r.wall_seconds) != 4) {
            throw Error(ErrorCode::kParseError, "metrics line " + std::to_string(line_no));
        }
        curve.records.push_back(r);
    }
    return curve;
}

std::size_t argmax(std::span<const float> values) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i) {
        if (values[i] > values[best]) best = i;
    }
    return best;
}

std::vector<int> predict(const Classifier<float>& model, const SampleSet& samples, std::size_t batch_size) {
    std::vector<int> out;
    out.reserve(samples.size());
    BatchStream stream(samples, batch_size, std::nullopt);
    stream.for_each_batch(0, [&](const Batch& batch) {
        Tape<float> tape(Tape<float>::Mode::kInference);
        const Tensor<float> logits = model.logits(tape, batch.inputs);
        const std::size_t c = logits.dim(1);
        for (std::size_t i = 0; i < batch.labels.size(); ++i) {
            out.push_back(static_cast<int>(argmax(logits.data().subspan(i * c, c))));
        }
    });
    return out;
}

double evaluate_accuracy(const Classifier<float>& model, const SampleSet& samples, std::size_t batch_size) {
    if (samples.size() == 0) throw Error(ErrorCode::kEmptySplit, "cannot evaluate accuracy on an empty split");
    const auto predictions = predict(model, samples, batch_size);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i) correct += predictions[i] == samples.labels[i];
    return static_cast<double>(correct) / static_cast<double>(samples.size());
}

ParameterSet<float> snapshot(const ParameterSet<float>& params) {
    ParameterSet<float> copy;
    for (const auto& e : params.entries()) copy.add(e.path, e.tensor.clone(), e.frozen);
    return copy;
}

TrainResult train(Classifier<float>& model, const SampleSet& train_set, const SampleSet& val_set,
                  const TrainConfig& config, const EpochCallback& on_epoch) {
    if (train_set.size() == 0) throw Error(ErrorCode::kEmptySplit, "training split is empty");
    if (config.epochs == 0 || config.batch_size == 0 || config.eval_every == 0) {
        throw Error(ErrorCode::kBadConfig, "epochs, batch_size and eval_every must be >= 1");
    }
    if (config.l2 < 0) throw Error(ErrorCode::kBadConfig, "l2 weight must be >= 0");

    auto& params = model.parameters();
    const std::uint64_t frozen_before = checksum(params.frozen());
    Optimizer<float> optimizer(config.optimizer);
    const BatchStream stream(train_set, config.batch_size, derive_seed(config.seed, 7));
    const auto started = std::chrono::steady_clock::now();

    TrainResult result;
    double last_val = 0;
    bool have_best = false;
    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        double loss_sum = 0;
        stream.for_each_batch(epoch, [&](const Batch& batch) {
            Tape<float> tape;
            const Tensor<float> logits = model.logits(tape, batch.inputs);
            const Tensor<float> loss = regularized_loss(tape, logits, batch.labels, params, config.l2);
            const double value = loss.item();
            if (!std::isfinite(value)) {
                throw Error(ErrorCode::kDiverged, "non-finite loss in epoch " + std::to_string(epoch));
            }
            params.zero_grad();
            tape.backward(loss);
            optimizer.step(params);
            loss_sum += value * static_cast<double>(batch.labels.size());
        });

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / static_cast<double>(train_set.size());
        const bool evaluate = val_set.size() > 0 && (epoch % config.eval_every == 0 || epoch == config.epochs);
        if (evaluate) last_val = evaluate_accuracy(model, val_set);
        rec.val_accuracy = last_val;
        rec.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        result.curve.records.push_back(rec);

        const bool improved = val_set.size() == 0 ? true : (evaluate && (!have_best || last_val > result.best_val_accuracy));
        if (improved) {
            result.best_parameters = snapshot(params);
            result.best_epoch = epoch;
            result.best_val_accuracy = last_val;
            have_best = true;
        }
        if (on_epoch) on_epoch(rec);
    }
    for (const auto& e : params.entries()) e.tensor.clear_grad();
    if (checksum(params.frozen()) != frozen_before) {
        throw Error(ErrorCode::kBadConfig, "frozen parameters changed during training");
    }
    return result;
}

PretrainResult pretrain_expert(ExpertVariant variant, const SampleSet& train_set, const SampleSet& val_set,
                               const TrainConfig& config, std::uint64_t init_seed) {
    Expert<float> expert(variant, train_set.num_classes, init_seed);
    TrainResult run = train(expert, train_set, val_set, config);
    PretrainResult out{std::move(expert), std::move(run.curve), 0.0};
    if (val_set.size() > 0) out.val_accuracy = evaluate_accuracy(out.expert, val_set);
    out.expert.freeze_backbone();
    return out;
}

template Tensor<float> l2_penalty(Tape<float>&, const ParameterSet<float>&, double);
template Tensor<double> l2_penalty(Tape<double>&, const ParameterSet<double>&, double);
template Tensor<float> regularized_loss(Tape<float>&, const Tensor<float>&, std::span<const int>,
                                        const ParameterSet<float>&, double);
template Tensor<double> regularized_loss(Tape<double>&, const Tensor<double>&, std::span<const int>,
                                         const ParameterSet<double>&, double);

}  // namespace kdl
