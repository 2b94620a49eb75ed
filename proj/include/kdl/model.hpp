#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "kdl/config.hpp"
#include "kdl/layers.hpp"
#include "kdl/parameters.hpp"

namespace kdl {

// Anything trained and evaluated as an image classifier over [B,3,h,w].
template <typename T>
class Classifier {
public:
    virtual ~Classifier() = default;
    virtual Tensor<T> logits(Tape<T>& tape, const Tensor<T>& inputs) const = 0;
    virtual ParameterSet<T>& parameters() = 0;
    virtual const ParameterSet<T>& parameters() const = 0;
    virtual std::size_t num_classes() const = 0;
};

// ---------------------------------------------------------------------------
// Experts

enum class ExpertVariant { kA, kB, kC };

ExpertVariant parse_expert_variant(std::string_view name);
char expert_variant_name(ExpertVariant v) noexcept;
// Output channels of each conv stage: A has 2 stages, B 3, C 4.
std::vector<std::size_t> expert_stage_channels(ExpertVariant v);

// Small CNN backbone (conv3x3 + ReLU stages, 2x2 max pool between stages,
// global average pool) followed by a single dense head. Parameter paths are
// "backbone.conv<i>.{weight,bias}" and "head.{weight,bias}".
template <typename T>
class Expert : public Classifier<T> {
public:
    Expert(ExpertVariant variant, std::size_t num_classes, std::uint64_t seed);
    Expert(Expert&&) noexcept = default;
    Expert& operator=(Expert&&) noexcept = default;

    Expert clone() const;

    // [B, feature_width()]; the input of the head.
    Tensor<T> features(Tape<T>& tape, const Tensor<T>& inputs) const;
    Tensor<T> head_logits(Tape<T>& tape, const Tensor<T>& features) const;
    Tensor<T> logits(Tape<T>& tape, const Tensor<T>& inputs) const override;

    // Fresh head for num_classes outputs; backbone untouched.
    void reset_head(std::size_t num_classes, std::uint64_t seed);
    void freeze_backbone(bool frozen = true);
    bool backbone_frozen() const noexcept { return backbone_frozen_; }

    ExpertVariant variant() const noexcept { return variant_; }
    std::size_t feature_width() const { return convs_.back().out_channels(); }
    std::size_t num_classes() const override { return head_.out_features(); }
    ParameterSet<T>& parameters() override { return params_; }
    const ParameterSet<T>& parameters() const override { return params_; }

private:
    Expert() = default;
    void rebuild_parameters();

    ExpertVariant variant_ = ExpertVariant::kA;
    std::vector<Conv2d<T>> convs_;
    Dense<T> head_;
    bool backbone_frozen_ = false;
    ParameterSet<T> params_;
};

// ---------------------------------------------------------------------------
// Student

struct StudentConfig {
    std::size_t stem_channels = 16;
    std::size_t stem_stride = 2;
    bool stem_pool = true;
    std::size_t blocks = 2;
    std::size_t layers_per_block = 4;
    std::size_t growth = 12;
};

// DenseNet-style network. Within a block every layer (conv3x3 + ReLU) sees the
// channel concatenation of the block input and all earlier layer outputs.
// Blocks are joined by a 1x1 conv halving the channels plus 2x2 average pool.
template <typename T>
class StudentDenseNet : public Classifier<T> {
public:
    struct Output {
        Tensor<T> logits;
        // Output of the last dense block, [B, K, h', w']; the Grad-CAM layer.
        Tensor<T> final_features;
        // Channels entering each conv layer, block by block.
        std::vector<std::vector<std::size_t>> layer_input_channels;
    };

    StudentDenseNet(const StudentConfig& config, std::size_t num_classes, std::uint64_t seed);
    StudentDenseNet(StudentDenseNet&&) noexcept = default;
    StudentDenseNet& operator=(StudentDenseNet&&) noexcept = default;

    Output forward(Tape<T>& tape, const Tensor<T>& inputs) const;
    Tensor<T> logits(Tape<T>& tape, const Tensor<T>& inputs) const override;

    const StudentConfig& config() const noexcept { return config_; }
    std::size_t final_channels() const noexcept { return final_channels_; }
    std::size_t num_classes() const override { return head_.out_features(); }
    ParameterSet<T>& parameters() override { return params_; }
    const ParameterSet<T>& parameters() const override { return params_; }

private:
    StudentConfig config_;
    Conv2d<T> stem_;
    std::vector<std::vector<Conv2d<T>>> blocks_;
    std::vector<Conv2d<T>> transitions_;
    Dense<T> head_;
    std::size_t final_channels_ = 0;
    ParameterSet<T> params_;
};

// ---------------------------------------------------------------------------
// Knowledge-driven composite

enum class FusionBInput { kInterpretation, kRawExperts };

FusionBInput parse_fusion_b_input(std::string_view name);
std::string_view fusion_b_input_name(FusionBInput v) noexcept;

struct KdlConfig {
    std::size_t num_classes = 10;
    std::size_t image_size = 64;
    std::array<ExpertVariant, 3> expert_variants{ExpertVariant::kA, ExpertVariant::kB, ExpertVariant::kC};
    StudentConfig student;
    std::size_t fusion_hidden = 64;
    FusionBInput fusion_b_input = FusionBInput::kInterpretation;
};

template <typename T>
struct ExpertFeatureCache;

// Three dense layers, ReLU between them and none after the last.
template <typename T>
struct FusionNet {
    std::array<Dense<T>, 3> layers;

    static FusionNet create(std::size_t in, std::size_t hidden, std::size_t out, std::mt19937_64& rng);
    Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x) const;
    void register_into(ParameterSet<T>& params, const std::string& prefix) const;
};

// Frozen-backbone experts, whose concatenated logits are interpreted by
// fusion_a, plus a from-scratch student; fusion_b maps the concatenation of
// the student logits and the interpretation (or the raw expert logits) to the
// final logits. Parameter prefixes: expert<i>., fusion_a.<l>., student.,
// fusion_b.<l>.
template <typename T>
class KdlModel : public Classifier<T> {
public:
    struct Outputs {
        Tensor<T> logits;
        std::array<Tensor<T>, 3> expert_logits;
        Tensor<T> fusion_a;
        Tensor<T> student_logits;
        Tensor<T> student_features;
    };

    // Experts get fresh heads for config.num_classes and frozen backbones.
    KdlModel(const KdlConfig& config, std::array<Expert<T>, 3> experts, std::uint64_t seed);
    // Randomly initialised experts (for loading checkpoints and tests).
    KdlModel(const KdlConfig& config, std::uint64_t seed);

    Outputs forward(Tape<T>& tape, const Tensor<T>& inputs) const;
    Tensor<T> logits(Tape<T>& tape, const Tensor<T>& inputs) const override;

    // Expert heads, fusion nets and the whole student; never expert backbones.
    ParameterSet<T> trainable_parameters() const { return params_.trainable(); }

    const KdlConfig& config() const noexcept { return config_; }
    const Expert<T>& expert(std::size_t i) const { return experts_.at(i); }
    const StudentDenseNet<T>& student() const noexcept { return student_; }
    const FusionNet<T>& fusion_a() const noexcept { return fusion_a_; }
    const FusionNet<T>& fusion_b() const noexcept { return fusion_b_; }
    std::size_t num_classes() const override { return config_.num_classes; }

    // Frozen backbones map each sample to fixed features, so forward() memoises
    // them per sample (keyed by a hash of its values, flushed whenever the
    // backbone weights change). Bypassed while inputs require gradients or a
    // backbone is unfrozen. On by default.
    void set_expert_feature_cache(bool enabled) noexcept { cache_enabled_ = enabled; }
    std::size_t expert_feature_cache_size() const;
    ParameterSet<T>& parameters() override { return params_; }
    const ParameterSet<T>& parameters() const override { return params_; }

private:
    void assemble(std::uint64_t seed);
    bool can_use_cache(const Tensor<T>& inputs) const;
    std::array<Tensor<T>, 3> cached_expert_features(const Tensor<T>& inputs) const;

    KdlConfig config_;
    std::array<Expert<T>, 3> experts_;
    FusionNet<T> fusion_a_;
    StudentDenseNet<T> student_;
    FusionNet<T> fusion_b_;
    ParameterSet<T> params_;
    bool cache_enabled_ = true;
    std::shared_ptr<ExpertFeatureCache<T>> feature_cache_;
};

// ---------------------------------------------------------------------------
// Baseline

struct BaselineConfig {
    std::size_t width = 28;
    std::size_t blocks = 2;
    std::size_t stem_stride = 2;
    bool stem_pool = true;
    bool use_skip = true;
};

// Stem conv, residual blocks relu(x + conv(relu(conv(x)))), global average
// pool, dense head.
template <typename T>
class BaselineResNetSmall : public Classifier<T> {
public:
    BaselineResNetSmall(const BaselineConfig& config, std::size_t num_classes, std::uint64_t seed);

    Tensor<T> logits(Tape<T>& tape, const Tensor<T>& inputs) const override;

    const BaselineConfig& config() const noexcept { return config_; }
    void set_use_skip(bool use_skip) noexcept { config_.use_skip = use_skip; }
    std::size_t num_classes() const override { return head_.out_features(); }
    ParameterSet<T>& parameters() override { return params_; }
    const ParameterSet<T>& parameters() const override { return params_; }

private:
    BaselineConfig config_;
    Conv2d<T> stem_;
    std::vector<std::array<Conv2d<T>, 2>> blocks_;
    Dense<T> head_;
    ParameterSet<T> params_;
};

// ---------------------------------------------------------------------------
// Persistence: KDLW weights plus a key=value sidecar "<checkpoint>.cfg".

enum class Architecture { kKdl, kBaseline, kExpert };

struct ModelSpec {
    Architecture arch = Architecture::kKdl;
    std::size_t num_classes = 10;
    std::size_t image_size = 64;
    KdlConfig kdl;
    BaselineConfig baseline;
    ExpertVariant expert_variant = ExpertVariant::kA;

    KeyValueConfig to_config() const;
    static ModelSpec from_config(const KeyValueConfig& cfg);
};

std::unique_ptr<Classifier<float>> build_model(const ModelSpec& spec, std::uint64_t seed);
void save_model(const std::filesystem::path& checkpoint, const ModelSpec& spec, const ParameterSet<float>& params);
// Reads the sidecar, builds the architecture and loads the weights.
std::unique_ptr<Classifier<float>> load_model(const std::filesystem::path& checkpoint, ModelSpec* spec_out = nullptr);

extern template class Expert<float>;
extern template class Expert<double>;
extern template class StudentDenseNet<float>;
extern template class StudentDenseNet<double>;
extern template struct FusionNet<float>;
extern template struct FusionNet<double>;
extern template class KdlModel<float>;
extern template class KdlModel<double>;
extern template class BaselineResNetSmall<float>;
extern template class BaselineResNetSmall<double>;

}  // namespace kdl
