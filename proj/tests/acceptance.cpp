// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits non-zero if any criterion fails. Artifacts stay under the work
// directory (first argument, default ./acceptance_work) for inspection.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "kdl/checkpoint.hpp"
#include "kdl/cli.hpp"
#include "kdl/dataset.hpp"
#include "kdl/error.hpp"
#include "kdl/evaluation.hpp"
#include "kdl/explain.hpp"
#include "kdl/imageproc.hpp"
#include "kdl/layers.hpp"
#include "kdl/model.hpp"
#include "kdl/synthetic.hpp"
#include "kdl/training.hpp"

using namespace kdl;
namespace fs = std::filesystem;

namespace {

// Pinned thresholds.
constexpr double kMinTestAccuracy = 0.85;
constexpr double kMaxKdlSeconds = 600.0;
constexpr double kMinMedianGap = 0.01;
constexpr double kGradTolerance = 1e-6;
constexpr double kMaxGradSeconds = 60.0;
constexpr double kMaxReconstructionError = 1e-12;
constexpr double kMaxEnergyError = 1e-9;
constexpr int kRandomImages = 100;
constexpr std::size_t kCamSamples = 50;
constexpr double kMinBlobMassRatio = 2.0;
constexpr double kMaxOverfitLoss = 0.01;
constexpr std::size_t kOverfitSamples = 8;
constexpr std::size_t kOverfitEpochs = 200;
constexpr double kMaxLinearAccuracy = 0.60;

// Benchmark and pretext protocol.
constexpr std::uint64_t kBenchmarkSeed = 7;
const std::vector<std::uint64_t> kCompareSeeds{7, 8, 9};
constexpr std::uint64_t kPretextSeed = 1001;
constexpr std::size_t kPretextClasses = 8;
constexpr std::size_t kPretextPerClass = 150;
constexpr std::size_t kPretextEpochs = 30;
constexpr std::size_t kEpochs = 30;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

struct Line {
    int id;
    bool pass;
    std::string detail;
};

std::vector<Line> g_lines;

void report(int id, bool pass, const std::string& detail) {
    g_lines.push_back({id, pass, detail});
    std::printf("%s criterion %d: %s\n", pass ? "PASS" : "FAIL", id, detail.c_str());
    std::fflush(stdout);
}

void note(const std::string& text) {
    std::fprintf(stderr, "[acceptance] %s\n", text.c_str());
    std::fflush(stderr);
}

std::string fmt(const char* f, double a) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

void cli_or_throw(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    if (code != cli::kOk) throw std::runtime_error("kdl " + args[0] + " exited " + std::to_string(code) + ": " + err.str());
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
    std::ifstream in(path);
    std::vector<std::vector<std::string>> rows;
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        rows.push_back(cells);
    }
    return rows;
}

std::string strip_wall_column(const fs::path& metrics) {
    std::ifstream in(metrics);
    std::string out, line;
    while (std::getline(in, line)) out += line.substr(0, line.rfind(',')) + '\n';
    return out;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v.size() % 2 ? v[v.size() / 2] : 0.5 * (v[v.size() / 2 - 1] + v[v.size() / 2]);
}

SampleSet load_split(const Manifest& m, Split split, const fs::path& cache) {
    LoadOptions options;
    options.cache_dir = cache;
    return load_samples(m, m.split(split), options, m.num_classes());
}

// ---------------------------------------------------------------------------
// Shared pipeline: benchmark, pretext, experts and the seed comparison.

struct Pipeline {
    fs::path root;
    fs::path manifest;
    fs::path cache;
    std::vector<fs::path> experts;
    fs::path compare_dir;
    std::map<std::pair<std::uint64_t, std::string>, double> final_val;
    std::map<std::pair<std::uint64_t, std::string>, double> run_seconds;
};

Pipeline run_pipeline(const fs::path& root) {
    Pipeline p;
    p.root = root;
    const synthetic::SyntheticSpec bench;
    auto t = Clock::now();
    cli_or_throw({"synth", "--classes", std::to_string(bench.num_classes), "--per-class",
                  std::to_string(bench.specimens_per_class), "--size", std::to_string(bench.image_size), "--seed",
                  std::to_string(kBenchmarkSeed), "--out", (root / "benchmark").string()});
    cli_or_throw({"synth", "--classes", std::to_string(kPretextClasses), "--per-class",
                  std::to_string(kPretextPerClass), "--size", std::to_string(bench.image_size), "--seed",
                  std::to_string(kPretextSeed), "--out", (root / "pretext").string()});
    p.manifest = root / "benchmark" / "manifest.csv";
    p.cache = root / "cache";
    cli_or_throw({"preprocess", "--manifest", p.manifest.string(), "--out-cache", p.cache.string()});
    cli_or_throw({"preprocess", "--manifest", (root / "pretext" / "manifest.csv").string(), "--out-cache",
                  (root / "pretext_cache").string()});
    note("datasets ready in " + fmt("%.1f s", seconds_since(t)));

    {
        std::ofstream cfg(root / "pretrain.cfg");
        cfg << "cache_dir = " << (root / "pretext_cache").string() << "\n";
    }
    std::string expert_list;
    for (const char* v : {"A", "B", "C"}) {
        t = Clock::now();
        const fs::path out = root / "experts" / (std::string(v) + ".kdlw");
        std::ostringstream o, e;
        const int code = cli::run({"pretrain", "--variant", v, "--pretext-manifest",
                                   (root / "pretext" / "manifest.csv").string(), "--epochs",
                                   std::to_string(kPretextEpochs), "--out", out.string(), "--config",
                                   (root / "pretrain.cfg").string(), "--seed", "3"},
                                  o, e);
        if (code != cli::kOk) throw std::runtime_error("pretrain " + std::string(v) + ": " + e.str());
        note(std::string("expert ") + v + ": " + o.str().substr(0, o.str().size() - 1) + " in " +
             fmt("%.1f s", seconds_since(t)));
        p.experts.push_back(out);
        expert_list += (expert_list.empty() ? "" : ",") + out.string();
    }

    {
        std::ofstream cfg(root / "compare.cfg");
        cfg << "epochs = " << kEpochs << "\nbatch_size = 32\nlr = 0.001\noptimizer = adam\nl2 = 0.0001\n"
            << "image_size = " << bench.image_size << "\ncache_dir = " << p.cache.string() << "\n";
    }
    std::string seeds;
    for (auto s : kCompareSeeds) seeds += (seeds.empty() ? "" : ",") + std::to_string(s);
    p.compare_dir = root / "compare";
    t = Clock::now();
    cli_or_throw({"compare", "--manifest", p.manifest.string(), "--config", (root / "compare.cfg").string(),
                  "--seeds", seeds, "--experts", expert_list, "--out-dir", p.compare_dir.string()});
    note("compare finished in " + fmt("%.1f s", seconds_since(t)));
    for (const auto& row : read_csv(p.compare_dir / "summary.csv")) {
        const auto key = std::make_pair(std::stoull(row[0]), row[1]);
        p.final_val[key] = std::stod(row[2]);
        p.run_seconds[key] = std::stod(row[3]);
        note("seed " + row[0] + " " + row[1] + " final val " + row[2] + " in " + row[3] + " s");
    }
    return p;
}

fs::path run_dir(const Pipeline& p, const std::string& arch, std::uint64_t seed) {
    return p.compare_dir / (arch + "_seed" + std::to_string(seed));
}

// ---------------------------------------------------------------------------

void criterion1(const Pipeline& p) {
    const auto model = load_model(run_dir(p, "kdl", kBenchmarkSeed) / "model.kdlw");
    const Manifest m = load_manifest(p.manifest);
    const double acc = evaluate_accuracy(*model, load_split(m, Split::kTest, p.cache));
    const double secs = p.run_seconds.at({kBenchmarkSeed, "kdl"});
    report(1, acc >= kMinTestAccuracy && secs < kMaxKdlSeconds,
           "KDL test accuracy " + fmt("%.4f", acc) + " (>= " + fmt("%.2f", kMinTestAccuracy) + ") after " +
               std::to_string(kEpochs) + " epochs, training " + fmt("%.1f", secs) + " s (< " +
               fmt("%.0f", kMaxKdlSeconds) + " s)");
}

void criterion2(const Pipeline& p) {
    std::vector<double> kdl, base;
    std::string per_seed;
    for (auto s : kCompareSeeds) {
        kdl.push_back(p.final_val.at({s, "kdl"}));
        base.push_back(p.final_val.at({s, "baseline"}));
        per_seed += " seed " + std::to_string(s) + ": " + fmt("%.4f", kdl.back()) + "/" + fmt("%.4f", base.back()) + ";";
    }
    const double mk = median(kdl), mb = median(base);
    report(2, mk >= mb + kMinMedianGap,
           "median final val accuracy kdl " + fmt("%.4f", mk) + " vs baseline " + fmt("%.4f", mb) +
               " (needs gap >= " + fmt("%.3f", kMinMedianGap) + "; kdl/baseline" + per_seed + ")");
}

void criterion3() {
    const auto t = Clock::now();
    double worst = 0;
    std::string worst_name;
    for (auto& c : testing::op_cases(2024)) {
        const double e = testing::max_relative_error(c.fn, c.inputs, 99);
        if (e > worst) {
            worst = e;
            worst_name = c.name;
        }
    }
    KdlConfig cfg;
    cfg.num_classes = 3;
    cfg.image_size = 8;
    cfg.student.stem_channels = 4;
    cfg.student.stem_stride = 1;
    cfg.student.stem_pool = false;
    cfg.student.blocks = 1;
    cfg.student.layers_per_block = 2;
    cfg.student.growth = 3;
    cfg.fusion_hidden = 6;
    KdlModel<double> model(cfg, 12);
    std::mt19937_64 rng(4);
    const Tensor<double> x = testing::random_tensor({2, 3, 8, 8}, rng, 0.0, 1.0);
    std::vector<Tensor<double>> params;
    std::vector<bool> which;
    for (const auto& e : model.parameters().entries()) {
        params.push_back(e.tensor);
        which.push_back(!e.frozen);
    }
    const testing::Fn f = [&](Tape<double>& tape, const std::vector<Tensor<double>>&) { return model.logits(tape, x); };
    const double model_error = testing::max_relative_error(f, params, 5, which);
    bool frozen_zero = true;
    for (const auto& e : model.parameters().entries()) {
        if (!e.frozen || !e.tensor.has_grad()) continue;
        for (double g : e.tensor.grad()) frozen_zero = frozen_zero && g == 0.0;
    }
    const double secs = seconds_since(t);
    report(3, worst < kGradTolerance && model_error < kGradTolerance && frozen_zero && secs < kMaxGradSeconds,
           "worst op relative error " + fmt("%.2e", worst) + " (" + worst_name + "), tiny KDL model " +
               fmt("%.2e", model_error) + " (< " + fmt("%.0e", kGradTolerance) + "), frozen grads " +
               (frozen_zero ? "zero" : "NON-ZERO") + ", " + fmt("%.2f", secs) + " s (< 60 s)");
}

void criterion4() {
    std::mt19937_64 rng(44);
    std::uniform_real_distribution<double> u(0.0, 255.0);
    double worst_recon = 0, worst_energy = 0;
    for (int i = 0; i < kRandomImages; ++i) {
        std::vector<double> img(64 * 64);
        for (auto& v : img) v = u(rng);
        const auto bands = imageproc::haar_forward(img, 64, 64);
        const auto back = imageproc::haar_inverse(bands);
        double energy_in = 0, energy_out = 0;
        for (std::size_t k = 0; k < img.size(); ++k) {
            worst_recon = std::max(worst_recon, std::abs(back[k] - img[k]));
            energy_in += img[k] * img[k];
        }
        // Averaging bands times 2 are the orthonormal coefficients.
        for (const auto* band : {&bands.ll, &bands.lh, &bands.hl, &bands.hh}) {
            for (double c : *band) energy_out += (2 * c) * (2 * c);
        }
        worst_energy = std::max(worst_energy, std::abs(energy_out - energy_in) / energy_in);
    }
    report(4, worst_recon < kMaxReconstructionError && worst_energy < kMaxEnergyError,
           "max reconstruction error " + fmt("%.2e", worst_recon) + " (< 1e-12), max relative energy error " +
               fmt("%.2e", worst_energy) + " (< 1e-9) over " + std::to_string(kRandomImages) + " images");
}

void criterion5() {
    std::mt19937_64 rng(55);
    int identical = 0;
    for (int i = 0; i < kRandomImages; ++i) {
        const std::size_t w = 8 + rng() % 57, h = 8 + rng() % 57;
        Image img(w, h, 1);
        for (auto& px : img.pixels) px = static_cast<std::uint8_t>(rng() % 200);
        // Random strictly increasing map of 0..199 into 0..255.
        std::vector<int> levels(256);
        std::iota(levels.begin(), levels.end(), 0);
        std::shuffle(levels.begin(), levels.end(), rng);
        levels.resize(200);
        std::sort(levels.begin(), levels.end());
        Image remapped = img;
        for (auto& px : remapped.pixels) px = static_cast<std::uint8_t>(levels[px]);
        identical += imageproc::lbp(img) == imageproc::lbp(remapped);
    }
    report(5, identical == kRandomImages,
           std::to_string(identical) + "/" + std::to_string(kRandomImages) +
               " remapped images give bit-identical LBP codes");
}

void criterion6(const Pipeline& p) {
    std::vector<ParameterSet<float>> experts;
    for (const auto& path : p.experts) experts.push_back(read_checkpoint(path));
    bool all_equal = true;
    std::size_t checked = 0;
    for (auto s : kCompareSeeds) {
        const auto trained = read_checkpoint(run_dir(p, "kdl", s) / "model.kdlw");
        for (std::size_t i = 0; i < 3; ++i) {
            ParameterSet<float> before, after;
            for (const auto& e : experts[i].entries()) {
                if (e.path.rfind("backbone.", 0) != 0) continue;
                before.add(e.path, e.tensor);
                after.add(e.path, trained.at("expert" + std::to_string(i) + "." + e.path));
            }
            all_equal = all_equal && checksum(before) == checksum(after);
            ++checked;
        }
    }
    report(6, all_equal,
           std::to_string(checked) + " expert backbone checksums (3 experts x " + std::to_string(kCompareSeeds.size()) +
               " full train runs) " + (all_equal ? "identical" : "CHANGED") + " before and after training");
}

void criterion7(const Pipeline& p) {
    const Manifest m = load_manifest(p.manifest);
    const SampleSet test = load_split(m, Split::kTest, p.cache);
    std::vector<std::size_t> histogram(m.num_classes(), 0);
    for (int y : test.labels) ++histogram[static_cast<std::size_t>(y)];
    bool ok = true;
    std::size_t runs = 0;
    for (auto s : kCompareSeeds) {
        for (const char* arch : {"kdl", "baseline"}) {
            const auto model = load_model(run_dir(p, arch, s) / "model.kdlw");
            const ConfusionMatrix cm = confusion(*model, test, m.class_names());
            for (std::size_t c = 0; c < m.num_classes(); ++c) ok = ok && cm.row_sum(c) == histogram[c];
            ok = ok && cm.accuracy() == evaluate_accuracy(*model, test);
            ++runs;
        }
    }
    // The eval command output must agree too.
    const fs::path eval_dir = p.root / "eval_kdl_seed7";
    cli_or_throw({"eval", "--checkpoint", (run_dir(p, "kdl", kBenchmarkSeed) / "model.kdlw").string(), "--manifest",
                  p.manifest.string(), "--split", "test", "--out-dir", eval_dir.string()});
    const ConfusionMatrix written = read_confusion_csv(eval_dir / "confusion.csv");
    for (std::size_t c = 0; c < m.num_classes(); ++c) ok = ok && written.row_sum(c) == histogram[c];
    report(7, ok,
           std::to_string(runs) + " trained models: row sums equal the test histogram and trace/total equals "
           "evaluate_accuracy exactly" + (ok ? "" : " -- MISMATCH"));
}

void criterion8(const Pipeline& p) {
    const auto loaded = load_model(run_dir(p, "kdl", kBenchmarkSeed) / "model.kdlw");
    auto* model = dynamic_cast<KdlModel<float>*>(loaded.get());
    const Manifest m = load_manifest(p.manifest);
    const auto records = m.split(Split::kTest);
    const synthetic::SyntheticSpec spec;
    double mass_sum = 0;
    std::size_t student_correct = 0;
    for (std::size_t i = 0; i < kCamSamples; ++i) {
        const auto& r = records[i * records.size() / kCamSamples];
        std::size_t cls = 0, index = 0;
        if (!synthetic::parse_specimen_id(r.specimen_id, cls, index)) throw std::runtime_error("bad specimen id");
        const auto specimen = synthetic::render_specimen(spec, cls, index);
        const auto& mask = specimen.blob_masks[r.view];
        const auto sample = imageproc::preprocess(read_pnm(m.root / r.path), spec.image_size);
        const Tensor<float> x({1, 3, sample.height, sample.width}, sample.values);
        const Heatmap map = grad_cam(*model, x, predicted_class(*model, x));
        {
            // How much the student alone knows, for diagnosis.
            Tape<float> tape(Tape<float>::Mode::kInference);
            const auto out = model->forward(tape, x);
            const auto s = out.student_logits.data();
            student_correct += static_cast<int>(std::max_element(s.begin(), s.end()) - s.begin()) == r.class_id;
        }
        double inside = 0, total = 0;
        for (std::size_t k = 0; k < map.values.size(); ++k) {
            total += map.values[k];
            if (mask[k]) inside += map.values[k];
        }
        mass_sum += total > 0 ? inside / total : 0.0;
    }
    const double mass = mass_sum / static_cast<double>(kCamSamples);
    const double needed = kMinBlobMassRatio * synthetic::kBlobAreaFraction;

    // A model whose logits ignore the student gives zero maps.
    for (const char* path : {"fusion_b.2.weight"}) {
        auto d = model->parameters().at(path).data();
        std::fill(d.begin(), d.end(), 0.0f);
    }
    bool zero_maps = true;
    for (std::size_t i = 0; i < 5; ++i) {
        const auto sample = imageproc::preprocess(read_pnm(m.root / records[i].path), spec.image_size);
        const Tensor<float> x({1, 3, sample.height, sample.width}, sample.values);
        const Heatmap map = grad_cam(*model, x, 0);
        zero_maps = zero_maps && std::all_of(map.values.begin(), map.values.end(), [](double v) { return v == 0.0; });
    }
    report(8, mass >= needed && zero_maps,
           "mean heatmap mass inside the blob " + fmt("%.4f", mass) + " over " + std::to_string(kCamSamples) +
               " test samples (>= " + fmt("%.2f", needed) + "), zero-gradient model maps " +
               (zero_maps ? "all zero" : "NOT zero") + "; student logits alone correct on " +
               std::to_string(student_correct) + "/" + std::to_string(kCamSamples));
}

void criterion9(const Pipeline& p) {
    const fs::path root = p.root / "determinism";
    cli_or_throw({"synth", "--classes", "3", "--per-class", "10", "--size", "32", "--seed", "11", "--out",
                  (root / "data").string()});
    {
        std::ofstream cfg(root / "run.cfg");
        cfg << "epochs = 3\nbatch_size = 8\nimage_size = 32\nseed = 21\n";
    }
    std::string experts;
    for (const auto& e : p.experts) experts += (experts.empty() ? "" : ",") + e.string();
    bool ok = true;
    for (const char* arch : {"kdl", "baseline"}) {
        for (const char* run : {"a", "b"}) {
            std::vector<std::string> args{"train", "--manifest", (root / "data" / "manifest.csv").string(), "--config",
                                          (root / "run.cfg").string(), "--arch", arch, "--out-dir",
                                          (root / (std::string(arch) + "_" + run)).string()};
            if (std::string(arch) == "kdl") {
                args.push_back("--experts");
                args.push_back(experts);
            }
            cli_or_throw(args);
        }
        const fs::path a = root / (std::string(arch) + "_a"), b = root / (std::string(arch) + "_b");
        for (const char* f : {"model.kdlw", "best.kdlw", "model.kdlw.cfg"}) ok = ok && slurp(a / f) == slurp(b / f);
        ok = ok && strip_wall_column(a / "metrics.csv") == strip_wall_column(b / "metrics.csv");
    }
    report(9, ok, std::string("two identical train runs (kdl and baseline) give ") +
                      (ok ? "bit-identical" : "DIFFERENT") + " checkpoints and metrics (wall_seconds excluded)");
}

void criterion10(const Pipeline& p) {
    const Manifest m = load_manifest(p.manifest);
    auto records = m.split(Split::kTrain);
    records.resize(kOverfitSamples);
    LoadOptions options;
    options.cache_dir = p.cache;
    const SampleSet tiny = load_samples(m, records, options, m.num_classes());

    auto build = [&] {
        std::array<Expert<float>, 3> experts{
            std::move(dynamic_cast<Expert<float>&>(*load_model(p.experts[0]))),
            std::move(dynamic_cast<Expert<float>&>(*load_model(p.experts[1]))),
            std::move(dynamic_cast<Expert<float>&>(*load_model(p.experts[2])))};
        return KdlModel<float>(KdlConfig{}, std::move(experts), 5);
    };
    TrainConfig cfg;
    cfg.epochs = kOverfitEpochs;
    cfg.batch_size = kOverfitSamples;
    cfg.l2 = 0.0;
    KdlModel<float> model = build();
    const auto t = Clock::now();
    const auto result = train(model, tiny, SampleSet{}, cfg);
    const double loss = result.curve.records.back().train_loss;

    // The default regulariser alone, for reference.
    Tape<float> tape(Tape<float>::Mode::kInference);
    const double penalty = l2_penalty(tape, model.parameters(), 1e-4).item();
    report(10, loss < kMaxOverfitLoss,
           "KDL model on " + std::to_string(kOverfitSamples) + " samples, " + std::to_string(kOverfitEpochs) +
               " epochs, l2 = 0: final train loss " + fmt("%.3e", loss) + " (< " + fmt("%.2f", kMaxOverfitLoss) +
               ") in " + fmt("%.1f", seconds_since(t)) + " s; the default l2 term alone would add " +
               fmt("%.4f", penalty));
}

// Raw pixels through one dense layer: the benchmark must not be linearly easy.
void linear_probe(const Pipeline& p) {
    const Manifest m = load_manifest(p.manifest);
    auto raw = [&](Split split) {
        SampleSet s;
        s.height = s.width = 64;
        s.num_classes = m.num_classes();
        for (const auto& r : m.split(split)) {
            const Image img = read_pnm(m.root / r.path);
            for (auto px : img.pixels) s.inputs.push_back(static_cast<float>(px) / 255.0f);
            s.inputs.resize(s.inputs.size() + 2 * 64 * 64, 0.0f);
            s.labels.push_back(r.class_id);
            s.paths.push_back(r.path);
        }
        return s;
    };
    struct Linear : Classifier<float> {
        Dense<float> dense;
        ParameterSet<float> params;
        Linear(std::size_t in, std::size_t classes) {
            std::mt19937_64 rng(3);
            dense = Dense<float>::create(in, classes, rng);
            dense.register_into(params, "dense");
        }
        Tensor<float> logits(Tape<float>& tape, const Tensor<float>& x) const override {
            return dense.forward(tape, ops::reshape(tape, x, {x.dim(0), x.numel() / x.dim(0)}));
        }
        ParameterSet<float>& parameters() override { return params; }
        const ParameterSet<float>& parameters() const override { return params; }
        std::size_t num_classes() const override { return dense.out_features(); }
    };
    const SampleSet tr = raw(Split::kTrain), va = raw(Split::kVal);
    Linear model(3 * 64 * 64, m.num_classes());
    TrainConfig cfg;
    cfg.epochs = kEpochs;
    const auto result = train(model, tr, va, cfg);
    const double best = result.best_val_accuracy;
    const bool pass = best < kMaxLinearAccuracy;
    g_lines.push_back({0, pass, ""});
    std::printf("%s extra (dataset): raw-pixel linear classifier best val accuracy %.4f (< %.2f)\n",
                pass ? "PASS" : "FAIL", best, kMaxLinearAccuracy);
    std::fflush(stdout);
}

}  // namespace

int main(int argc, char** argv) {
    const fs::path root = argc > 1 ? fs::path(argv[1]) : fs::path("acceptance_work");
    fs::remove_all(root);
    fs::create_directories(root);
    const auto started = Clock::now();
    try {
        criterion3();
        criterion4();
        criterion5();
        const Pipeline p = run_pipeline(root);
        criterion1(p);
        criterion2(p);
        criterion6(p);
        criterion7(p);
        criterion8(p);
        criterion9(p);
        criterion10(p);
        linear_probe(p);
    } catch (const std::exception& e) {
        std::printf("FAIL acceptance aborted: %s\n", e.what());
        return 1;
    }
    std::size_t failed = 0;
    for (const auto& l : g_lines) failed += !l.pass;
    std::printf("%zu/%zu checks passed in %.1f s\n", g_lines.size() - failed, g_lines.size(), seconds_since(started));
    return failed == 0 ? 0 : 1;
}
