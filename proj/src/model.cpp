#include "kdl/model.hpp"

#include <cstring>
#include <filesystem>
#include <mutex>
#include <span>
#include <unordered_map>
#include <sstream>

#include "kdl/checkpoint.hpp"
#include "kdl/error.hpp"
#include "kdl/seed.hpp"

namespace kdl {

ExpertVariant parse_expert_variant(std::string_view name) {
    if (name == "A" || name == "a") return ExpertVariant::kA;
    if (name == "B" || name == "b") return ExpertVariant::kB;
    if (name == "C" || name == "c") return ExpertVariant::kC;
    throw Error(ErrorCode::kBadConfig, "expert variant must be A, B or C, got '" + std::string(name) + "'");
}

char expert_variant_name(ExpertVariant v) noexcept {
    switch (v) {
        case ExpertVariant::kA: return 'A';
        case ExpertVariant::kB: return 'B';
        case ExpertVariant::kC: return 'C';
    }
    return 'A';
}

std::vector<std::size_t> expert_stage_channels(ExpertVariant v) {
    switch (v) {
        case ExpertVariant::kA: return {8, 16};
        case ExpertVariant::kB: return {8, 16, 32};
        case ExpertVariant::kC: return {8, 16, 32, 48};
    }
    return {8, 16};
}

FusionBInput parse_fusion_b_input(std::string_view name) {
    if (name == "interpretation") return FusionBInput::kInterpretation;
    if (name == "raw_experts") return FusionBInput::kRawExperts;
    throw Error(ErrorCode::kBadConfig, "fusion_b_input must be interpretation or raw_experts, got '" +
                                           std::string(name) + "'");
}

std::string_view fusion_b_input_name(FusionBInput v) noexcept {
    return v == FusionBInput::kInterpretation ? "interpretation" : "raw_experts";
}

// ---------------------------------------------------------------------------

template <typename T>
Expert<T>::Expert(ExpertVariant variant, std::size_t num_classes, std::uint64_t seed) : variant_(variant) {
    std::mt19937_64 rng(seed);
    std::size_t in = 3;
    for (std::size_t out : expert_stage_channels(variant)) {
        convs_.push_back(Conv2d<T>::create(in, out, 3, 1, 1, rng));
        in = out;
    }
    head_ = Dense<T>::create(in, num_classes, rng);
    rebuild_parameters();
}

template <typename T>
Expert<T> Expert<T>::clone() const {
    Expert copy;
    copy.variant_ = variant_;
    for (const auto& c : convs_) copy.convs_.push_back(Conv2d<T>{c.weight.clone(), c.bias.clone(), c.attrs});
    copy.head_ = Dense<T>{head_.weight.clone(), head_.bias.clone()};
    copy.backbone_frozen_ = backbone_frozen_;
    copy.rebuild_parameters();
    return copy;
}

template <typename T>
void Expert<T>::rebuild_parameters() {
    params_ = ParameterSet<T>();
    for (std::size_t i = 0; i < convs_.size(); ++i) {
        convs_[i].register_into(params_, "backbone.conv" + std::to_string(i), backbone_frozen_);
    }
    head_.register_into(params_, "head");
}

template <typename T>
Tensor<T> Expert<T>::features(Tape<T>& tape, const Tensor<T>& inputs) const {
    Tensor<T> x = inputs;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
        x = ops::relu(tape, convs_[i].forward(tape, x));
        if (i + 1 < convs_.size()) x = ops::max_pool2d(tape, x, {2, 2});
    }
    return ops::global_avg_pool(tape, x);
}

template <typename T>
Tensor<T> Expert<T>::head_logits(Tape<T>& tape, const Tensor<T>& features) const {
    return head_.forward(tape, features);
}

template <typename T>
Tensor<T> Expert<T>::logits(Tape<T>& tape, const Tensor<T>& inputs) const {
    return head_logits(tape, features(tape, inputs));
}

template <typename T>
void Expert<T>::reset_head(std::size_t num_classes, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    head_ = Dense<T>::create(feature_width(), num_classes, rng);
    rebuild_parameters();
}

template <typename T>
void Expert<T>::freeze_backbone(bool frozen) {
    backbone_frozen_ = frozen;
    params_.freeze_prefix("backbone.", frozen);
}

// ---------------------------------------------------------------------------

template <typename T>
StudentDenseNet<T>::StudentDenseNet(const StudentConfig& config, std::size_t num_classes, std::uint64_t seed)
    : config_(config) {
    if (config.blocks == 0 || config.layers_per_block == 0 || config.growth == 0 || config.stem_channels == 0 ||
        config.stem_stride == 0) {
        throw Error(ErrorCode::kBadConfig, "student sizes must all be >= 1");
    }
    std::mt19937_64 rng(seed);
    stem_ = Conv2d<T>::create(3, config.stem_channels, 3, config.stem_stride, 1, rng);
    stem_.register_into(params_, "stem");
    std::size_t channels = config.stem_channels;
    for (std::size_t b = 0; b < config.blocks; ++b) {
        std::vector<Conv2d<T>> layers;
        for (std::size_t l = 0; l < config.layers_per_block; ++l) {
            layers.push_back(Conv2d<T>::create(channels + l * config.growth, config.growth, 3, 1, 1, rng));
            layers.back().register_into(params_, "block" + std::to_string(b) + ".layer" + std::to_string(l));
        }
        blocks_.push_back(std::move(layers));
        channels += config.layers_per_block * config.growth;
        if (b + 1 < config.blocks) {
            const std::size_t reduced = std::max<std::size_t>(1, channels / 2);
            transitions_.push_back(Conv2d<T>::create(channels, reduced, 1, 1, 0, rng));
            transitions_.back().register_into(params_, "transition" + std::to_string(b));
            channels = reduced;
        }
    }
    final_channels_ = channels;
    head_ = Dense<T>::create(channels, num_classes, rng);
    head_.register_into(params_, "head");
}

template <typename T>
typename StudentDenseNet<T>::Output StudentDenseNet<T>::forward(Tape<T>& tape, const Tensor<T>& inputs) const {
    Output out;
    Tensor<T> x = ops::relu(tape, stem_.forward(tape, inputs));
    if (config_.stem_pool) x = ops::max_pool2d(tape, x, {2, 2});
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
        std::vector<Tensor<T>> features{x};
        std::vector<std::size_t> widths;
        for (const auto& layer : blocks_[b]) {
            Tensor<T> joined = features.size() == 1 ? features[0] : ops::concat<T>(tape, features, 1);
            widths.push_back(joined.dim(1));
            features.push_back(ops::relu(tape, layer.forward(tape, joined)));
        }
        x = ops::concat<T>(tape, features, 1);
        out.layer_input_channels.push_back(std::move(widths));
        if (b < transitions_.size()) {
            x = ops::relu(tape, transitions_[b].forward(tape, x));
            x = ops::avg_pool2d(tape, x, {2, 2});
        }
    }
    out.final_features = x;
    out.logits = head_.forward(tape, ops::global_avg_pool(tape, x));
    return out;
}

template <typename T>
Tensor<T> StudentDenseNet<T>::logits(Tape<T>& tape, const Tensor<T>& inputs) const {
    return forward(tape, inputs).logits;
}

// ---------------------------------------------------------------------------

template <typename T>
FusionNet<T> FusionNet<T>::create(std::size_t in, std::size_t hidden, std::size_t out, std::mt19937_64& rng) {
    FusionNet net;
    net.layers[0] = Dense<T>::create(in, hidden, rng);
    net.layers[1] = Dense<T>::create(hidden, hidden, rng);
    net.layers[2] = Dense<T>::create(hidden, out, rng);
    return net;
}

template <typename T>
Tensor<T> FusionNet<T>::forward(Tape<T>& tape, const Tensor<T>& x) const {
    Tensor<T> h = ops::relu(tape, layers[0].forward(tape, x));
    h = ops::relu(tape, layers[1].forward(tape, h));
    return layers[2].forward(tape, h);
}

template <typename T>
void FusionNet<T>::register_into(ParameterSet<T>& params, const std::string& prefix) const {
    for (std::size_t i = 0; i < layers.size(); ++i) layers[i].register_into(params, prefix + "." + std::to_string(i));
}

namespace {

template <typename T>
std::array<Expert<T>, 3> random_experts(const KdlConfig& config, std::uint64_t seed) {
    return {Expert<T>(config.expert_variants[0], config.num_classes, derive_seed(seed, 101)),
            Expert<T>(config.expert_variants[1], config.num_classes, derive_seed(seed, 102)),
            Expert<T>(config.expert_variants[2], config.num_classes, derive_seed(seed, 103))};
}

}  // namespace

template <typename T>
struct ExpertFeatureCache {
    std::mutex mutex;
    std::uint64_t backbone_hash = 0;
    std::unordered_map<std::uint64_t, std::array<std::vector<T>, 3>> entries;
};

namespace {

constexpr std::size_t kMaxCachedSamples = 1u << 18;

template <typename T>
std::uint64_t hash_values(std::span<const T> values, std::uint64_t h) {
    for (const T v : values) {
        std::uint64_t bits = 0;
        std::memcpy(&bits, &v, sizeof(T));
        h = (h ^ bits) * 0x9E3779B97F4A7C15ULL;
        h ^= h >> 29;
    }
    return derive_seed(h, 0);
}

}  // namespace

template <typename T>
KdlModel<T>::KdlModel(const KdlConfig& config, std::array<Expert<T>, 3> experts, std::uint64_t seed)
    : config_(config),
      experts_(std::move(experts)),
      student_(config.student, config.num_classes, derive_seed(seed, 2)),
      feature_cache_(std::make_shared<ExpertFeatureCache<T>>()) {
    assemble(seed);
}

template <typename T>
std::size_t KdlModel<T>::expert_feature_cache_size() const {
    std::lock_guard lock(feature_cache_->mutex);
    return feature_cache_->entries.size();
}

template <typename T>
bool KdlModel<T>::can_use_cache(const Tensor<T>& inputs) const {
    if (!cache_enabled_ || inputs.requires_grad()) return false;
    for (const auto& e : params_.entries()) {
        if (e.path.find(".backbone.") != std::string::npos && !e.frozen) return false;
    }
    return true;
}

template <typename T>
std::array<Tensor<T>, 3> KdlModel<T>::cached_expert_features(const Tensor<T>& inputs) const {
    auto& cache = *feature_cache_;
    std::lock_guard lock(cache.mutex);
    std::uint64_t weights_hash = 0x6B64;
    for (const auto& e : params_.entries()) {
        if (e.path.find(".backbone.") != std::string::npos) weights_hash = hash_values(e.tensor.data(), weights_hash);
    }
    if (weights_hash != cache.backbone_hash) {
        cache.entries.clear();
        cache.backbone_hash = weights_hash;
    }

    const std::size_t batch = inputs.dim(0);
    const std::size_t per = inputs.numel() / batch;
    std::vector<std::uint64_t> keys(batch);
    std::vector<std::size_t> misses;
    for (std::size_t b = 0; b < batch; ++b) {
        keys[b] = hash_values(inputs.data().subspan(b * per, per), 0x4B444C);
        if (!cache.entries.count(keys[b])) misses.push_back(b);
    }

    std::array<std::vector<T>, 3> computed;
    if (!misses.empty()) {
        Shape sub_shape = inputs.shape();
        sub_shape[0] = misses.size();
        Tensor<T> sub(sub_shape);
        for (std::size_t m = 0; m < misses.size(); ++m) {
            const auto src = inputs.data().subspan(misses[m] * per, per);
            std::copy(src.begin(), src.end(), sub.data().begin() + static_cast<std::ptrdiff_t>(m * per));
        }
        Tape<T> tape(Tape<T>::Mode::kInference);
        for (std::size_t i = 0; i < 3; ++i) {
            const Tensor<T> f = experts_[i].features(tape, sub);
            computed[i].assign(f.data().begin(), f.data().end());
        }
    }

    std::array<Tensor<T>, 3> out;
    for (std::size_t i = 0; i < 3; ++i) out[i] = Tensor<T>({batch, experts_[i].feature_width()});
    std::size_t m = 0;
    for (std::size_t b = 0; b < batch; ++b) {
        const bool missed = m < misses.size() && misses[m] == b;
        for (std::size_t i = 0; i < 3; ++i) {
            const std::size_t width = experts_[i].feature_width();
            const T* src = missed ? computed[i].data() + m * width : cache.entries.at(keys[b])[i].data();
            std::copy(src, src + width, out[i].data().begin() + static_cast<std::ptrdiff_t>(b * width));
        }
        if (missed) {
            if (cache.entries.size() < kMaxCachedSamples) {
                std::array<std::vector<T>, 3> row;
                for (std::size_t i = 0; i < 3; ++i) {
                    const std::size_t width = experts_[i].feature_width();
                    row[i].assign(computed[i].begin() + static_cast<std::ptrdiff_t>(m * width),
                                  computed[i].begin() + static_cast<std::ptrdiff_t>((m + 1) * width));
                }
                cache.entries.emplace(keys[b], std::move(row));
            }
            ++m;
        }
    }
    return out;
}

template <typename T>
KdlModel<T>::KdlModel(const KdlConfig& config, std::uint64_t seed)
    : KdlModel(config, random_experts<T>(config, seed), seed) {}

template <typename T>
void KdlModel<T>::assemble(std::uint64_t seed) {
    const std::size_t c = config_.num_classes;
    if (c < 2) throw Error(ErrorCode::kBadConfig, "KDL model needs at least 2 classes");
    for (std::size_t i = 0; i < experts_.size(); ++i) {
        experts_[i].reset_head(c, derive_seed(seed, 10 + i));
        experts_[i].freeze_backbone(true);
        config_.expert_variants[i] = experts_[i].variant();
    }
    std::mt19937_64 rng(derive_seed(seed, 1));
    fusion_a_ = FusionNet<T>::create(3 * c, config_.fusion_hidden, c, rng);
    const std::size_t b_in = c + (config_.fusion_b_input == FusionBInput::kInterpretation ? c : 3 * c);
    fusion_b_ = FusionNet<T>::create(b_in, config_.fusion_hidden, c, rng);

    params_ = ParameterSet<T>();
    for (std::size_t i = 0; i < experts_.size(); ++i) {
        params_.merge("expert" + std::to_string(i) + ".", experts_[i].parameters());
    }
    fusion_a_.register_into(params_, "fusion_a");
    params_.merge("student.", student_.parameters());
    fusion_b_.register_into(params_, "fusion_b");
}

template <typename T>
typename KdlModel<T>::Outputs KdlModel<T>::forward(Tape<T>& tape, const Tensor<T>& inputs) const {
    if (inputs.rank() != 4 || inputs.dim(1) != 3 || inputs.dim(2) != config_.image_size ||
        inputs.dim(3) != config_.image_size) {
        throw Error(ErrorCode::kShapeMismatch, "KDL model expects [B,3," + std::to_string(config_.image_size) + "," +
                                                   std::to_string(config_.image_size) + "], got " +
                                                   shape_to_string(inputs.shape()));
    }
    Outputs out;
    if (can_use_cache(inputs)) {
        const auto features = cached_expert_features(inputs);
        for (std::size_t i = 0; i < experts_.size(); ++i) out.expert_logits[i] = experts_[i].head_logits(tape, features[i]);
    } else {
        for (std::size_t i = 0; i < experts_.size(); ++i) out.expert_logits[i] = experts_[i].logits(tape, inputs);
    }
    const Tensor<T> experts_joined = ops::concat<T>(tape, out.expert_logits, 1);
    out.fusion_a = fusion_a_.forward(tape, experts_joined);
    auto student = student_.forward(tape, inputs);
    out.student_logits = student.logits;
    out.student_features = student.final_features;
    const std::array<Tensor<T>, 2> b_inputs{
        out.student_logits,
        config_.fusion_b_input == FusionBInput::kInterpretation ? out.fusion_a : experts_joined};
    out.logits = fusion_b_.forward(tape, ops::concat<T>(tape, b_inputs, 1));
    return out;
}

template <typename T>
Tensor<T> KdlModel<T>::logits(Tape<T>& tape, const Tensor<T>& inputs) const {
    return forward(tape, inputs).logits;
}

// ---------------------------------------------------------------------------

template <typename T>
BaselineResNetSmall<T>::BaselineResNetSmall(const BaselineConfig& config, std::size_t num_classes,
                                            std::uint64_t seed)
    : config_(config) {
    if (config.width == 0 || config.stem_stride == 0) throw Error(ErrorCode::kBadConfig, "baseline sizes must be >= 1");
    std::mt19937_64 rng(seed);
    stem_ = Conv2d<T>::create(3, config.width, 3, config.stem_stride, 1, rng);
    stem_.register_into(params_, "stem");
    for (std::size_t b = 0; b < config.blocks; ++b) {
        std::array<Conv2d<T>, 2> convs{Conv2d<T>::create(config.width, config.width, 3, 1, 1, rng),
                                       Conv2d<T>::create(config.width, config.width, 3, 1, 1, rng)};
        convs[0].register_into(params_, "block" + std::to_string(b) + ".conv0");
        convs[1].register_into(params_, "block" + std::to_string(b) + ".conv1");
        blocks_.push_back(std::move(convs));
    }
    head_ = Dense<T>::create(config.width, num_classes, rng);
    head_.register_into(params_, "head");
}

template <typename T>
Tensor<T> BaselineResNetSmall<T>::logits(Tape<T>& tape, const Tensor<T>& inputs) const {
    Tensor<T> x = ops::relu(tape, stem_.forward(tape, inputs));
    if (config_.stem_pool) x = ops::max_pool2d(tape, x, {2, 2});
    for (const auto& block : blocks_) {
        Tensor<T> h = ops::relu(tape, block[0].forward(tape, x));
        h = block[1].forward(tape, h);
        x = ops::relu(tape, config_.use_skip ? ops::add(tape, x, h) : h);
    }
    return head_.forward(tape, ops::global_avg_pool(tape, x));
}

// ---------------------------------------------------------------------------

namespace {

std::string_view architecture_name(Architecture a) {
    switch (a) {
        case Architecture::kKdl: return "kdl";
        case Architecture::kBaseline: return "baseline";
        case Architecture::kExpert: return "expert";
    }
    return "kdl";
}

Architecture parse_architecture(std::string_view s) {
    if (s == "kdl") return Architecture::kKdl;
    if (s == "baseline") return Architecture::kBaseline;
    if (s == "expert") return Architecture::kExpert;
    throw Error(ErrorCode::kBadConfig, "unknown architecture '" + std::string(s) + "'");
}

std::filesystem::path sidecar_path(const std::filesystem::path& checkpoint) {
    return std::filesystem::path(checkpoint.string() + ".cfg");
}

}  // namespace

KeyValueConfig ModelSpec::to_config() const {
    KeyValueConfig cfg;
    cfg.set("arch", std::string(architecture_name(arch)));
    cfg.set("num_classes", std::to_string(num_classes));
    cfg.set("image_size", std::to_string(image_size));
    switch (arch) {
        case Architecture::kKdl: {
            std::string variants;
            for (auto v : kdl.expert_variants) {
                if (!variants.empty()) variants += ",";
                variants += expert_variant_name(v);
            }
            cfg.set("expert_variants", variants);
            cfg.set("student_stem_channels", std::to_string(kdl.student.stem_channels));
            cfg.set("student_stem_stride", std::to_string(kdl.student.stem_stride));
            cfg.set("student_stem_pool", kdl.student.stem_pool ? "1" : "0");
            cfg.set("student_blocks", std::to_string(kdl.student.blocks));
            cfg.set("student_layers", std::to_string(kdl.student.layers_per_block));
            cfg.set("student_growth", std::to_string(kdl.student.growth));
            cfg.set("fusion_hidden", std::to_string(kdl.fusion_hidden));
            cfg.set("fusion_b_input", std::string(fusion_b_input_name(kdl.fusion_b_input)));
            break;
        }
        case Architecture::kBaseline:
            cfg.set("baseline_width", std::to_string(baseline.width));
            cfg.set("baseline_blocks", std::to_string(baseline.blocks));
            cfg.set("baseline_stem_stride", std::to_string(baseline.stem_stride));
            cfg.set("baseline_stem_pool", baseline.stem_pool ? "1" : "0");
            break;
        case Architecture::kExpert:
            cfg.set("expert_variant", std::string(1, expert_variant_name(expert_variant)));
            break;
    }
    return cfg;
}

ModelSpec ModelSpec::from_config(const KeyValueConfig& cfg) {
    ModelSpec spec;
    spec.arch = parse_architecture(cfg.get_string("arch"));
    spec.num_classes = static_cast<std::size_t>(cfg.get_int("num_classes"));
    spec.image_size = static_cast<std::size_t>(cfg.get_int("image_size"));
    spec.kdl.num_classes = spec.num_classes;
    spec.kdl.image_size = spec.image_size;
    if (spec.arch == Architecture::kKdl) {
        std::stringstream variants(cfg.get_string("expert_variants"));
        std::string item;
        std::size_t i = 0;
        while (std::getline(variants, item, ',')) {
            if (i >= 3) throw Error(ErrorCode::kBadConfig, "expert_variants must list exactly 3 variants");
            spec.kdl.expert_variants[i++] = parse_expert_variant(item);
        }
        if (i != 3) throw Error(ErrorCode::kBadConfig, "expert_variants must list exactly 3 variants");
        auto& s = spec.kdl.student;
        s.stem_channels = static_cast<std::size_t>(cfg.get_int("student_stem_channels"));
        s.stem_stride = static_cast<std::size_t>(cfg.get_int("student_stem_stride"));
        s.stem_pool = cfg.get_int("student_stem_pool") != 0;
        s.blocks = static_cast<std::size_t>(cfg.get_int("student_blocks"));
        s.layers_per_block = static_cast<std::size_t>(cfg.get_int("student_layers"));
        s.growth = static_cast<std::size_t>(cfg.get_int("student_growth"));
        spec.kdl.fusion_hidden = static_cast<std::size_t>(cfg.get_int("fusion_hidden"));
        spec.kdl.fusion_b_input = parse_fusion_b_input(cfg.get_string("fusion_b_input"));
    } else if (spec.arch == Architecture::kBaseline) {
        spec.baseline.width = static_cast<std::size_t>(cfg.get_int("baseline_width"));
        spec.baseline.blocks = static_cast<std::size_t>(cfg.get_int("baseline_blocks"));
        spec.baseline.stem_stride = static_cast<std::size_t>(cfg.get_int("baseline_stem_stride"));
        spec.baseline.stem_pool = cfg.get_int("baseline_stem_pool") != 0;
    } else {
        spec.expert_variant = parse_expert_variant(cfg.get_string("expert_variant"));
    }
    return spec;
}

std::unique_ptr<Classifier<float>> build_model(const ModelSpec& spec, std::uint64_t seed) {
    switch (spec.arch) {
        case Architecture::kKdl: {
            KdlConfig cfg = spec.kdl;
            cfg.num_classes = spec.num_classes;
            cfg.image_size = spec.image_size;
            return std::make_unique<KdlModel<float>>(cfg, seed);
        }
        case Architecture::kBaseline:
            return std::make_unique<BaselineResNetSmall<float>>(spec.baseline, spec.num_classes, seed);
        case Architecture::kExpert:
            return std::make_unique<Expert<float>>(spec.expert_variant, spec.num_classes, seed);
    }
    return nullptr;
}

void save_model(const std::filesystem::path& checkpoint, const ModelSpec& spec, const ParameterSet<float>& params) {
    write_checkpoint(checkpoint, params);
    spec.to_config().save(sidecar_path(checkpoint));
}

std::unique_ptr<Classifier<float>> load_model(const std::filesystem::path& checkpoint, ModelSpec* spec_out) {
    const ModelSpec spec = ModelSpec::from_config(KeyValueConfig::load(sidecar_path(checkpoint)));
    auto model = build_model(spec, 0);
    const auto loaded = read_checkpoint(checkpoint);
    if (loaded.size() != model->parameters().size()) {
        throw Error(ErrorCode::kBadConfig, "checkpoint '" + checkpoint.string() + "' has " +
                                               std::to_string(loaded.size()) + " parameters, architecture expects " +
                                               std::to_string(model->parameters().size()));
    }
    assign_values(model->parameters(), loaded);
    if (spec_out) *spec_out = spec;
    return model;
}

template class Expert<float>;
template class Expert<double>;
template class StudentDenseNet<float>;
template class StudentDenseNet<double>;
template struct FusionNet<float>;
template struct FusionNet<double>;
template class KdlModel<float>;
template class KdlModel<double>;
template class BaselineResNetSmall<float>;
template class BaselineResNetSmall<double>;

}  // namespace kdl
