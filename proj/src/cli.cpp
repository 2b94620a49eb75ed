#include "kdl/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

#include "kdl/checkpoint.hpp"
#include "kdl/config.hpp"
#include "kdl/dataset.hpp"
#include "kdl/error.hpp"
#include "kdl/evaluation.hpp"
#include "kdl/explain.hpp"
#include "kdl/imageproc.hpp"
#include "kdl/model.hpp"
#include "kdl/seed.hpp"
#include "kdl/synthetic.hpp"
#include "kdl/training.hpp"

namespace kdl::cli {

namespace fs = std::filesystem;

namespace {

// Config keys accepted by train, compare and pretrain.
const std::vector<std::string_view> kConfigKeys = {
    "epochs", "batch_size", "lr",        "optimizer",      "momentum",  "l2",
    "seed",   "eval_every", "image_size", "fusion_b_input", "arch",      "experts",
    "threads", "cache_dir",
};

struct RunSettings {
    TrainConfig train;
    std::size_t image_size = 64;
    std::size_t threads = 0;
    std::optional<fs::path> cache_dir;
    Architecture arch = Architecture::kKdl;
    FusionBInput fusion_b_input = FusionBInput::kInterpretation;
    std::vector<std::string> experts;
};

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> items;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) items.push_back(item);
    }
    return items;
}

Architecture parse_arch(const std::string& name) {
    if (name == "kdl") return Architecture::kKdl;
    if (name == "baseline") return Architecture::kBaseline;
    throw Error(ErrorCode::kBadConfig, "arch must be kdl or baseline, got '" + name + "'");
}

std::size_t positive(const KeyValueConfig& cfg, std::string_view key, std::size_t fallback) {
    const long long v = cfg.get_int(key, static_cast<long long>(fallback));
    if (v < 1) throw Error(ErrorCode::kBadConfig, std::string(key) + " must be >= 1");
    return static_cast<std::size_t>(v);
}

RunSettings settings_from(const KeyValueConfig& cfg) {
    cfg.require_known(kConfigKeys);
    RunSettings s;
    s.train.epochs = positive(cfg, "epochs", s.train.epochs);
    s.train.batch_size = positive(cfg, "batch_size", s.train.batch_size);
    s.train.eval_every = positive(cfg, "eval_every", s.train.eval_every);
    s.train.optimizer.kind = parse_optimizer_kind(cfg.get_string("optimizer", "adam"));
    s.train.optimizer.lr = cfg.get_double("lr", s.train.optimizer.lr);
    s.train.optimizer.momentum = cfg.get_double("momentum", s.train.optimizer.momentum);
    s.train.l2 = cfg.get_double("l2", s.train.l2);
    const long long seed = cfg.get_int("seed", 1);
    if (seed < 0) throw Error(ErrorCode::kBadConfig, "seed must be >= 0");
    s.train.seed = static_cast<std::uint64_t>(seed);
    s.image_size = positive(cfg, "image_size", s.image_size);
    s.threads = static_cast<std::size_t>(std::max(0LL, cfg.get_int("threads", 0)));
    if (cfg.contains("cache_dir")) s.cache_dir = fs::path(cfg.get_string("cache_dir"));
    s.arch = parse_arch(cfg.get_string("arch", "kdl"));
    s.fusion_b_input = parse_fusion_b_input(cfg.get_string("fusion_b_input", "interpretation"));
    s.experts = split_list(cfg.get_string("experts", ""));
    if (s.train.l2 < 0) throw Error(ErrorCode::kBadConfig, "l2 must be >= 0");
    return s;
}

KeyValueConfig load_config(const std::string& path) {
    return path.empty() ? KeyValueConfig{} : KeyValueConfig::load(path);
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw Error(ErrorCode::kIoError, "cannot create directory '" + dir.string() + "': " + ec.message());
}

SampleSet load_split(const Manifest& manifest, Split which, const RunSettings& s) {
    const auto records = manifest.split(which);
    LoadOptions options;
    options.image_size = s.image_size;
    options.threads = s.threads;
    options.cache_dir = s.cache_dir;
    return load_samples(manifest, records, options, manifest.num_classes());
}

Expert<float> load_expert(const fs::path& path) {
    auto model = load_model(path);
    auto* expert = dynamic_cast<Expert<float>*>(model.get());
    if (!expert) throw Error(ErrorCode::kBadConfig, "'" + path.string() + "' is not an expert checkpoint");
    return std::move(*expert);
}

struct BuiltModel {
    ModelSpec spec;
    std::unique_ptr<Classifier<float>> model;
};

BuiltModel build_for_training(const RunSettings& s, std::size_t num_classes, std::uint64_t seed) {
    BuiltModel built;
    built.spec.arch = s.arch;
    built.spec.num_classes = num_classes;
    built.spec.image_size = s.image_size;
    built.spec.kdl.num_classes = num_classes;
    built.spec.kdl.image_size = s.image_size;
    built.spec.kdl.fusion_b_input = s.fusion_b_input;
    const std::uint64_t model_seed = derive_seed(seed, 1);
    if (s.arch == Architecture::kBaseline) {
        built.model = std::make_unique<BaselineResNetSmall<float>>(built.spec.baseline, num_classes, model_seed);
        return built;
    }
    if (s.experts.size() != 3) {
        throw Error(ErrorCode::kBadConfig, "the kdl architecture needs exactly three expert checkpoints");
    }
    std::array<Expert<float>, 3> experts{load_expert(s.experts[0]), load_expert(s.experts[1]),
                                         load_expert(s.experts[2])};
    for (std::size_t i = 0; i < 3; ++i) built.spec.kdl.expert_variants[i] = experts[i].variant();
    built.model = std::make_unique<KdlModel<float>>(built.spec.kdl, std::move(experts), model_seed);
    return built;
}

struct TrainOutcome {
    TrainResult result;
    double seconds = 0;
};

TrainOutcome train_into(const RunSettings& s, const Manifest& manifest, const SampleSet& train_set,
                        const SampleSet& val_set, const fs::path& out_dir, std::ostream& out) {
    const auto started = std::chrono::steady_clock::now();
    BuiltModel built = build_for_training(s, manifest.num_classes(), s.train.seed);
    ensure_dir(out_dir);
    TrainOutcome outcome;
    outcome.result = train(*built.model, train_set, val_set, s.train, [&out](const EpochRecord& r) {
        char line[160];
        std::snprintf(line, sizeof line, "epoch %zu loss %.6f val_accuracy %.4f (%.1fs)\n", r.epoch,
                      r.train_loss, r.val_accuracy, r.wall_seconds);
        out << line << std::flush;
    });
    save_model(out_dir / "model.kdlw", built.spec, built.model->parameters());
    save_model(out_dir / "best.kdlw", built.spec, outcome.result.best_parameters);
    write_metrics_csv(out_dir / "metrics.csv", outcome.result.curve);
    outcome.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return outcome;
}

int usage_error(std::ostream& err, const std::string& message, const std::string& usage) {
    err << "error: " << message << '\n';
    if (!usage.empty()) err << usage;
    return kUsage;
}

int code_for(const Error& e) {
    switch (e.code()) {
        case ErrorCode::kDiverged: return kDiverged;
        case ErrorCode::kBadConfig: return kUsage;
        default: return kDataError;
    }
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Knowledge-driven image classification toolkit", "kdl"};
    app.require_subcommand(1);
    app.fallthrough();
    std::size_t threads = 0;
    app.add_option("--threads", threads, "Worker threads for preprocessing (0: all cores)");

    // synth
    auto* synth = app.add_subcommand("synth", "Generate a synthetic texture dataset");
    synthetic::SyntheticSpec synth_spec;
    std::string synth_out;
    synth->add_option("--classes", synth_spec.num_classes, "Number of classes")->required();
    synth->add_option("--per-class", synth_spec.specimens_per_class, "Specimens per class")->required();
    synth->add_option("--size", synth_spec.image_size, "Image side in pixels")->required();
    synth->add_option("--seed", synth_spec.seed, "Generation seed")->required();
    synth->add_option("--out", synth_out, "Output directory")->required();

    // preprocess
    auto* prep = app.add_subcommand("preprocess", "Write the .olt cache for every manifest record");
    std::string prep_manifest, prep_cache;
    std::size_t prep_size = 64;
    prep->add_option("--manifest", prep_manifest, "Manifest CSV")->required();
    prep->add_option("--out-cache", prep_cache, "Cache directory")->required();
    prep->add_option("--size", prep_size, "Image side after resizing");

    // pretrain
    auto* pre = app.add_subcommand("pretrain", "Pretrain one expert backbone on a pretext dataset");
    std::string pre_variant, pre_manifest, pre_out, pre_config;
    std::size_t pre_epochs = 0;
    std::optional<std::uint64_t> pre_seed;
    pre->add_option("--variant", pre_variant, "Expert variant A, B or C")->required();
    pre->add_option("--pretext-manifest", pre_manifest, "Pretext manifest CSV")->required();
    pre->add_option("--epochs", pre_epochs, "Training epochs")->required();
    pre->add_option("--out", pre_out, "Output checkpoint")->required();
    pre->add_option("--config", pre_config, "key = value config file");
    pre->add_option("--seed", pre_seed, "Initialisation and shuffling seed");

    // train
    auto* tr = app.add_subcommand("train", "Train the kdl model or the baseline");
    std::string tr_manifest, tr_experts, tr_config, tr_out, tr_arch, tr_fusion;
    std::optional<std::uint64_t> tr_seed;
    std::optional<std::size_t> tr_epochs;
    tr->add_option("--manifest", tr_manifest, "Manifest CSV")->required();
    tr->add_option("--experts", tr_experts, "Three expert checkpoints, comma separated");
    tr->add_option("--config", tr_config, "key = value config file");
    tr->add_option("--out-dir", tr_out, "Output directory")->required();
    tr->add_option("--arch", tr_arch, "kdl or baseline");
    tr->add_option("--fusion-b-input", tr_fusion, "interpretation or raw_experts");
    tr->add_option("--seed", tr_seed, "Seed (overrides config)");
    tr->add_option("--epochs", tr_epochs, "Epochs (overrides config)");

    // eval
    auto* ev = app.add_subcommand("eval", "Confusion matrix and per-class report");
    std::string ev_ckpt, ev_manifest, ev_split, ev_out;
    ev->add_option("--checkpoint", ev_ckpt, "Model checkpoint")->required();
    ev->add_option("--manifest", ev_manifest, "Manifest CSV")->required();
    ev->add_option("--split", ev_split, "train, val or test")->required();
    ev->add_option("--out-dir", ev_out, "Output directory")->required();

    // gradcam
    auto* gc = app.add_subcommand("gradcam", "Grad-CAM heatmap for one image");
    std::string gc_ckpt, gc_image, gc_manifest, gc_class = "pred", gc_prefix;
    std::optional<std::size_t> gc_index;
    gc->add_option("--checkpoint", gc_ckpt, "kdl model checkpoint")->required();
    auto* gc_image_opt = gc->add_option("--image", gc_image, "Image file (PGM/PPM)");
    gc->add_option("--manifest", gc_manifest, "Manifest CSV (with --index)");
    gc->add_option("--index", gc_index, "Record index into the manifest");
    gc->add_option("--class", gc_class, "pred, true or a class index");
    gc->add_option("--out-prefix", gc_prefix, "Output prefix")->required();
    (void)gc_image_opt;

    // compare
    auto* cmp = app.add_subcommand("compare", "Train kdl and baseline under identical seeds");
    std::string cmp_manifest, cmp_config, cmp_seeds, cmp_out, cmp_experts;
    cmp->add_option("--manifest", cmp_manifest, "Manifest CSV")->required();
    cmp->add_option("--config", cmp_config, "key = value config file");
    cmp->add_option("--seeds", cmp_seeds, "Comma separated seeds")->required();
    cmp->add_option("--out-dir", cmp_out, "Output directory")->required();
    cmp->add_option("--experts", cmp_experts, "Three expert checkpoints (overrides config)");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kOk;
    } catch (const CLI::ParseError& e) {
        std::string usage = app.help();
        for (auto* sub : app.get_subcommands()) usage = sub->help();
        return usage_error(err, e.what(), usage);
    }

    try {
        if (*synth) {
            if (synth_spec.num_classes < 1 || synth_spec.image_size < 2) {
                return usage_error(err, "synth needs --classes >= 1 and --size >= 2", synth->help());
            }
            const fs::path manifest = synthetic::generate(synth_spec, synth_out);
            out << manifest.string() << '\n';
            return kOk;
        }

        if (*prep) {
            const Manifest manifest = load_manifest(prep_manifest);
            ensure_dir(prep_cache);
            for (const auto& r : manifest.records) {
                const Image img = read_pnm(manifest.root / r.path);
                const fs::path target = fs::path(prep_cache) / (r.path + ".olt");
                ensure_dir(target.parent_path());
                imageproc::write_olt(target, imageproc::preprocess(img, prep_size));
            }
            out << manifest.records.size() << " samples cached\n";
            return kOk;
        }

        if (*pre) {
            KeyValueConfig cfg = load_config(pre_config);
            cfg.set("epochs", std::to_string(pre_epochs));
            if (pre_seed) cfg.set("seed", std::to_string(*pre_seed));
            if (threads) cfg.set("threads", std::to_string(threads));
            const RunSettings s = settings_from(cfg);
            const ExpertVariant variant = parse_expert_variant(pre_variant);
            const Manifest manifest = load_manifest(pre_manifest);
            const SampleSet train_set = load_split(manifest, Split::kTrain, s);
            const SampleSet val_set = load_split(manifest, Split::kVal, s);
            PretrainResult r = pretrain_expert(variant, train_set, val_set, s.train, derive_seed(s.train.seed, 1));
            ModelSpec spec;
            spec.arch = Architecture::kExpert;
            spec.expert_variant = variant;
            spec.num_classes = manifest.num_classes();
            spec.image_size = s.image_size;
            const fs::path target(pre_out);
            if (target.has_parent_path()) ensure_dir(target.parent_path());
            save_model(target, spec, r.expert.parameters());
            char line[96];
            std::snprintf(line, sizeof line, "pretext val_accuracy %.4f\n", r.val_accuracy);
            out << line;
            return kOk;
        }

        if (*tr) {
            KeyValueConfig cfg = load_config(tr_config);
            if (!tr_experts.empty()) cfg.set("experts", tr_experts);
            if (!tr_arch.empty()) cfg.set("arch", tr_arch);
            if (!tr_fusion.empty()) cfg.set("fusion_b_input", tr_fusion);
            if (tr_seed) cfg.set("seed", std::to_string(*tr_seed));
            if (tr_epochs) cfg.set("epochs", std::to_string(*tr_epochs));
            if (threads) cfg.set("threads", std::to_string(threads));
            const RunSettings s = settings_from(cfg);
            if (s.arch == Architecture::kKdl && s.experts.size() != 3) {
                return usage_error(err, "train --arch kdl needs --experts e1,e2,e3", tr->help());
            }
            const Manifest manifest = load_manifest(tr_manifest);
            const SampleSet train_set = load_split(manifest, Split::kTrain, s);
            const SampleSet val_set = load_split(manifest, Split::kVal, s);
            const auto outcome = train_into(s, manifest, train_set, val_set, tr_out, out);
            ensure_dir(tr_out);
            cfg.save(fs::path(tr_out) / "train.cfg");
            return kOk;
        }

        if (*ev) {
            const Split split = parse_split(ev_split);
            if (split == Split::kUnassigned) return usage_error(err, "--split must be train, val or test", ev->help());
            ModelSpec spec;
            const auto model = load_model(ev_ckpt, &spec);
            const Manifest manifest = load_manifest(ev_manifest);
            if (manifest.num_classes() != model->num_classes()) {
                throw Error(ErrorCode::kLabelOutOfRange, "manifest has " + std::to_string(manifest.num_classes()) +
                                                             " classes, model " +
                                                             std::to_string(model->num_classes()));
            }
            RunSettings s;
            s.image_size = spec.image_size;
            s.threads = threads;
            const SampleSet samples = load_split(manifest, split, s);
            const ConfusionMatrix cm = confusion(*model, samples, manifest.class_names());
            write_evaluation(ev_out, cm);
            char line[64];
            std::snprintf(line, sizeof line, "accuracy %.6f (%zu/%zu)\n", cm.accuracy(), cm.trace(), cm.total());
            out << line;
            return kOk;
        }

        if (*gc) {
            const bool by_image = !gc_image.empty();
            const bool by_index = !gc_manifest.empty() && gc_index.has_value();
            if (by_image == by_index) {
                return usage_error(err, "gradcam needs either --image or --manifest with --index", gc->help());
            }
            ModelSpec spec;
            const auto model = load_model(gc_ckpt, &spec);
            const auto* kdl = dynamic_cast<const KdlModel<float>*>(model.get());
            if (!kdl) throw Error(ErrorCode::kNoConvLayer, "gradcam needs a kdl checkpoint (student conv layer)");

            Image img;
            std::optional<int> truth;
            if (by_image) {
                img = read_pnm(fs::path(gc_image));
            } else {
                const Manifest manifest = load_manifest(gc_manifest);
                if (*gc_index >= manifest.records.size()) {
                    return usage_error(err, "--index beyond the manifest's " +
                                                std::to_string(manifest.records.size()) + " records", gc->help());
                }
                const auto& r = manifest.records[*gc_index];
                img = read_pnm(manifest.root / r.path);
                truth = r.class_id;
            }
            const auto sample = imageproc::preprocess(img, spec.image_size);
            const Tensor<float> input({1, 3, sample.height, sample.width}, sample.values);

            int target = 0;
            if (gc_class == "pred") {
                target = predicted_class(*model, input);
            } else if (gc_class == "true") {
                if (!truth) return usage_error(err, "--class true needs --manifest and --index", gc->help());
                target = *truth;
            } else {
                try {
                    std::size_t used = 0;
                    target = std::stoi(gc_class, &used);
                    if (used != gc_class.size()) throw std::invalid_argument(gc_class);
                } catch (const std::logic_error&) {
                    return usage_error(err, "--class must be pred, true or an integer", gc->help());
                }
            }
            const Heatmap map = grad_cam(*kdl, input, target);
            const fs::path prefix(gc_prefix);
            if (prefix.has_parent_path()) ensure_dir(prefix.parent_path());
            render_heatmap(map, imageproc::unstack(sample)[0], gc_prefix);
            out << "class " << target << '\n';
            return kOk;
        }

        if (*cmp) {
            KeyValueConfig cfg = load_config(cmp_config);
            if (!cmp_experts.empty()) cfg.set("experts", cmp_experts);
            if (threads) cfg.set("threads", std::to_string(threads));
            RunSettings base = settings_from(cfg);
            std::vector<std::uint64_t> seeds;
            for (const auto& item : split_list(cmp_seeds)) {
                try {
                    seeds.push_back(std::stoull(item));
                } catch (const std::logic_error&) {
                    return usage_error(err, "--seeds must be comma separated integers", cmp->help());
                }
            }
            if (seeds.empty()) return usage_error(err, "--seeds is empty", cmp->help());
            if (base.experts.size() != 3) {
                return usage_error(err, "compare needs three expert checkpoints (--experts or config key experts)",
                                   cmp->help());
            }
            const Manifest manifest = load_manifest(cmp_manifest);
            const SampleSet train_set = load_split(manifest, Split::kTrain, base);
            const SampleSet val_set = load_split(manifest, Split::kVal, base);
            ensure_dir(cmp_out);
            std::ofstream curves(fs::path(cmp_out) / "compare.csv", std::ios::binary | std::ios::trunc);
            std::ofstream summary(fs::path(cmp_out) / "summary.csv", std::ios::binary | std::ios::trunc);
            if (!curves || !summary) throw Error(ErrorCode::kIoError, "cannot write into '" + cmp_out + "'");
            curves << "seed,arch,epoch,train_loss,val_accuracy,wall_seconds\n";
            summary << "seed,arch,final_val_accuracy,run_seconds\n";
            char line[192];
            for (const std::uint64_t seed : seeds) {
                for (const Architecture arch : {Architecture::kKdl, Architecture::kBaseline}) {
                    RunSettings s = base;
                    s.arch = arch;
                    s.train.seed = seed;
                    const std::string arch_name = arch == Architecture::kKdl ? "kdl" : "baseline";
                    out << "== seed " << seed << ' ' << arch_name << '\n';
                    const fs::path run_dir = fs::path(cmp_out) / (arch_name + "_seed" + std::to_string(seed));
                    const auto outcome = train_into(s, manifest, train_set, val_set, run_dir, out);
                    for (const auto& r : outcome.result.curve.records) {
                        std::snprintf(line, sizeof line, "%llu,%s,%zu,%.17g,%.17g,%.3f\n",
                                      static_cast<unsigned long long>(seed), arch_name.c_str(), r.epoch,
                                      r.train_loss, r.val_accuracy, r.wall_seconds);
                        curves << line;
                    }
                    std::snprintf(line, sizeof line, "%llu,%s,%.17g,%.3f\n", static_cast<unsigned long long>(seed),
                                  arch_name.c_str(), outcome.result.curve.records.back().val_accuracy,
                                  outcome.seconds);
                    summary << line;
                    curves.flush();
                    summary.flush();
                }
            }
            return kOk;
        }
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return code_for(e);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kDataError;
    }
    return usage_error(err, "no command given", app.help());
}

}  // namespace kdl::cli
