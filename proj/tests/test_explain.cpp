#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <random>

#include "common.hpp"
#include "kdl/explain.hpp"
#include "kdl/ops.hpp"

using namespace kdl;
using testing::code_of;

namespace {

KdlConfig tiny_config() {
    KdlConfig c;
    c.num_classes = 3;
    c.image_size = 16;
    c.student.stem_channels = 4;
    c.student.stem_stride = 1;
    c.student.stem_pool = false;
    c.student.blocks = 1;
    c.student.layers_per_block = 2;
    c.student.growth = 4;
    c.fusion_hidden = 8;
    return c;
}

template <typename T>
Tensor<T> random_input(std::size_t h, std::size_t w, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Tensor<T> x({1, 3, h, w});
    for (auto& v : x.data()) v = static_cast<T>(u(rng));
    return x;
}

// Activations [1,2,4,4] with one hot pixel in channel 0 at (row 1, col 2);
// class 0 scores the mean of channel 0, class 1 is that score times zero.
CamForward<double> hot_pixel_forward() {
    return [](Tape<double>& tape, const Tensor<double>&) {
        Tensor<double> acts({1, 2, 4, 4}, 0.0);
        acts.data()[1 * 4 + 2] = 5.0;
        acts.data()[16 + 7] = 9.0;
        acts.set_requires_grad(true);
        const auto score = ops::reshape(
            tape, ops::scale(tape, ops::sum(tape, ops::slice(tape, acts, 1, 0, 1)), 1.0 / 16.0), {1, 1});
        const std::vector<Tensor<double>> parts{score, ops::scale(tape, score, 0.0)};
        return std::make_pair(ops::concat<double>(tape, parts, 1), acts);
    };
}

void check_bounds(const Heatmap& map) {
    double peak = 0;
    for (double v : map.values) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        peak = std::max(peak, v);
    }
    CHECK((peak == 1.0 || peak == 0.0));
}

}  // namespace

TEST_CASE("zero gradient gives an all-zero map") {
    const Tensor<double> x = random_input<double>(8, 8, 1);
    auto hot = hot_pixel_forward();
    const Heatmap zero = grad_cam<double>(hot, x, 1);
    CHECK(std::all_of(zero.values.begin(), zero.values.end(), [](double v) { return v == 0.0; }));

    // Logits that do not depend on anything.
    CamForward<double> constant = [](Tape<double>&, const Tensor<double>&) {
        return std::make_pair(Tensor<double>({1, 2}, 1.0), Tensor<double>({1, 2, 4, 4}, 1.0));
    };
    const Heatmap flat = grad_cam<double>(constant, x, 0);
    CHECK(flat.values.size() == 64);
    CHECK(std::all_of(flat.values.begin(), flat.values.end(), [](double v) { return v == 0.0; }));
}

TEST_CASE("hot pixel lands at the peak of the map") {
    const Tensor<double> x = random_input<double>(16, 16, 1);
    auto hot = hot_pixel_forward();
    const Heatmap map = grad_cam<double>(hot, x, 0);
    REQUIRE(map.values.size() == 256);
    const auto peak = static_cast<std::size_t>(std::max_element(map.values.begin(), map.values.end()) - map.values.begin());
    // Source pixel (1,2) of 4x4 covers rows 4..7 and columns 8..11 of 16x16.
    CHECK(peak / 16 >= 4);
    CHECK(peak / 16 < 8);
    CHECK(peak % 16 >= 8);
    CHECK(peak % 16 < 12);
    CHECK(map.values[peak] == 1.0);
    CHECK(map.target_class == 0);
}

TEST_CASE("bilinear resize: identity, constants and half-pixel centres") {
    const std::vector<double> src{0, 1, 2, 3};
    CHECK(bilinear_resize(src, 2, 2, 2, 2) == src);
    const auto up = bilinear_resize(std::vector<double>(4, 7.0), 2, 2, 5, 3);
    CHECK(std::all_of(up.begin(), up.end(), [](double v) { return v == 7.0; }));
    const auto row = bilinear_resize(std::vector<double>{0, 4}, 1, 2, 1, 4);
    CHECK(row == std::vector<double>{0, 1, 3, 4});
}

TEST_CASE("scaling the final layer by 3 leaves the map unchanged") {
    KdlModel<double> model(tiny_config(), 21);
    const Tensor<double> x = random_input<double>(16, 16, 4);
    for (int cls = 0; cls < 3; ++cls) {
        const Heatmap before = grad_cam(model, x, cls);
        CHECK(*std::max_element(before.values.begin(), before.values.end()) == 1.0);
        KdlModel<double> scaled(tiny_config(), 21);
        for (const char* path : {"fusion_b.2.weight", "fusion_b.2.bias"}) {
            for (auto& v : scaled.parameters().at(path).data()) v *= 3.0;
        }
        const Heatmap after = grad_cam(scaled, x, cls);
        for (std::size_t i = 0; i < before.values.size(); ++i) {
            CHECK(std::abs(after.values[i] - before.values[i]) < 1e-5);
        }
    }
}

TEST_CASE("bounds hold over 100 random model, input and class triples") {
    std::mt19937_64 rng(99);
    for (int trial = 0; trial < 100; ++trial) {
        KdlModel<float> model(tiny_config(), rng());
        const Tensor<float> x = random_input<float>(16, 16, rng());
        const int cls = static_cast<int>(rng() % 3);
        const Heatmap map = grad_cam(model, x, cls);
        CHECK(map.values.size() == 256);
        check_bounds(map);
    }
}

TEST_CASE("errors") {
    KdlModel<float> model(tiny_config(), 3);
    const Tensor<float> x = random_input<float>(16, 16, 1);
    CHECK(code_of([&] { grad_cam(model, x, 3); }) == ErrorCode::kClassOutOfRange);
    CHECK(code_of([&] { grad_cam(model, x, -1); }) == ErrorCode::kClassOutOfRange);
    CamForward<float> no_conv = [](Tape<float>&, const Tensor<float>&) {
        return std::make_pair(Tensor<float>({1, 2}, 1.0f), Tensor<float>());
    };
    CHECK(code_of([&] { grad_cam<float>(no_conv, x, 0); }) == ErrorCode::kNoConvLayer);
    CHECK(predicted_class(model, x) >= 0);
}

TEST_CASE("colormap endpoints") {
    CHECK(jet(1.0) == std::array<double, 3>{1, 0, 0});
    CHECK(jet(0.0) == std::array<double, 3>{0, 0, 1});
    CHECK(jet(0.5) == std::array<double, 3>{0, 1, 0});
}

TEST_CASE("rendering") {
    Image base(8, 6, 1);
    for (std::size_t i = 0; i < base.pixels.size(); ++i) base.pixels[i] = static_cast<std::uint8_t>(i * 5);
    Heatmap zero{6, 8, std::vector<double>(48, 0.0), 0};
    const Image overlay = heatmap_overlay(zero, base);
    for (std::size_t i = 0; i < 48; ++i) {
        for (std::size_t c = 0; c < 3; ++c) {
            CHECK(overlay.pixels[i * 3 + c] == static_cast<std::uint8_t>(std::lround(0.5 * base.pixels[i])));
        }
    }
    const Image gray = heatmap_gray(zero);
    CHECK(std::all_of(gray.pixels.begin(), gray.pixels.end(), [](std::uint8_t v) { return v == 0; }));

    Heatmap hot{6, 8, std::vector<double>(48, 0.0), 0};
    hot.values[0] = 1.0;
    CHECK(heatmap_overlay(hot, Image(8, 6, 1, 0)).at(0, 0, 0) == 128);
    CHECK(heatmap_overlay(hot, Image(8, 6, 1, 0)).at(0, 0, 1) == 0);

    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Heatmap random{6, 8, {}, 1};
    for (int i = 0; i < 48; ++i) random.values.push_back(u(rng));
    const auto dir = testing::scratch("explain");
    render_heatmap(random, base, (dir / "m").string());
    const Image back = read_pnm(dir / "m_gray.pgm");
    for (std::size_t i = 0; i < 48; ++i) CHECK(std::abs(back.pixels[i] / 255.0 - random.values[i]) <= 0.5 / 255.0);
    CHECK(read_pnm(dir / "m_color.ppm").channels == 3);
    std::filesystem::remove_all(dir);

    CHECK(code_of([&] { heatmap_overlay(zero, Image(8, 6, 3)); }) == ErrorCode::kNotGrayscale);
    CHECK(code_of([&] { heatmap_overlay(zero, Image(6, 8, 1)); }) == ErrorCode::kDimMismatch);
}
