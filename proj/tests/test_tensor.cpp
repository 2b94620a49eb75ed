#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "gradcheck.hpp"
#include "kdl/checkpoint.hpp"
#include "kdl/config.hpp"
#include "kdl/error.hpp"
#include "kdl/ops.hpp"
#include "kdl/parameters.hpp"

using namespace kdl;
using testing::max_relative_error;
using testing::random_tensor;

namespace {

constexpr double kGradTol = 1e-6;

template <typename Fn>
ErrorCode code_of(Fn&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected kdl::Error");
    return ErrorCode::kBadConfig;
}

// Direct 6-loop convolution, the reference for the im2col implementation.
std::vector<double> naive_conv(const Tensor<double>& x, const Tensor<double>& k, const Tensor<double>& b,
                               std::size_t stride, std::size_t pad, std::size_t& oh, std::size_t& ow) {
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t f = k.dim(0), kh = k.dim(2), kw = k.dim(3);
    oh = (h + 2 * pad - kh) / stride + 1;
    ow = (w + 2 * pad - kw) / stride + 1;
    std::vector<double> y(n * f * oh * ow, 0.0);
    for (std::size_t in = 0; in < n; ++in)
        for (std::size_t of = 0; of < f; ++of)
            for (std::size_t oy = 0; oy < oh; ++oy)
                for (std::size_t ox = 0; ox < ow; ++ox) {
                    double s = b.defined() ? b.data()[of] : 0.0;
                    for (std::size_t ic = 0; ic < c; ++ic)
                        for (std::size_t i = 0; i < kh; ++i)
                            for (std::size_t j = 0; j < kw; ++j) {
                                const long iy = long(oy * stride + i) - long(pad);
                                const long ix = long(ox * stride + j) - long(pad);
                                if (iy < 0 || ix < 0 || iy >= long(h) || ix >= long(w)) continue;
                                s += x.data()[((in * c + ic) * h + iy) * w + ix] *
                                     k.data()[((of * c + ic) * kh + i) * kw + j];
                            }
                    y[((in * f + of) * oh + oy) * ow + ox] = s;
                }
    return y;
}

}  // namespace

TEST_SUITE("tensor") {
    TEST_CASE("construction rejects empty and zero dimensions") {
        CHECK(code_of([] { Tensor<float> t(Shape{}, 0.f); }) == ErrorCode::kShapeMismatch);
        CHECK(code_of([] { Tensor<float> t(Shape{2, 0}, 0.f); }) == ErrorCode::kShapeMismatch);
        CHECK(code_of([] { Tensor<float> t(Shape{2, 2}, std::vector<float>{1, 2, 3}); }) ==
              ErrorCode::kShapeMismatch);
        Tensor<float> t({2, 3}, 1.5f);
        CHECK(t.numel() == 6);
        CHECK(t.rank() == 2);
        CHECK(code_of([&] { (void)t.item(); }) == ErrorCode::kNotScalar);
    }

    TEST_CASE("handles share storage, clone does not") {
        Tensor<float> a({2}, 1.f);
        Tensor<float> b = a;
        b.data()[0] = 7.f;
        CHECK(a.data()[0] == 7.f);
        Tensor<float> c = a.clone();
        c.data()[0] = 3.f;
        CHECK(a.data()[0] == 7.f);
        CHECK(c.id() != a.id());
    }
}

TEST_SUITE("ops forward") {
    TEST_CASE("matmul small example") {
        Tape<float> tape;
        Tensor<float> a({2, 2}, std::vector<float>{1, 2, 3, 4});
        Tensor<float> b({2, 2}, std::vector<float>{5, 6, 7, 8});
        const auto c = ops::matmul(tape, a, b);
        CHECK(std::vector<float>(c.data().begin(), c.data().end()) == std::vector<float>{19, 22, 43, 50});
        CHECK(code_of([&] { ops::matmul(tape, a, Tensor<float>({3, 2}, 1.f)); }) == ErrorCode::kShapeMismatch);
    }

    TEST_CASE("add broadcasts a bias row and rejects other shapes") {
        Tape<float> tape;
        Tensor<float> a({2, 3}, std::vector<float>{1, 2, 3, 4, 5, 6});
        Tensor<float> b({3}, std::vector<float>{10, 20, 30});
        const auto c = ops::add(tape, a, b);
        CHECK(std::vector<float>(c.data().begin(), c.data().end()) == std::vector<float>{11, 22, 33, 14, 25, 36});
        CHECK(code_of([&] { ops::add(tape, a, Tensor<float>({2}, 1.f)); }) == ErrorCode::kShapeMismatch);
    }

    TEST_CASE("relu passes positives and has zero gradient at zero") {
        Tape<double> tape;
        Tensor<double> x({4}, std::vector<double>{-1, 0, 2, 0.5});
        x.set_requires_grad(true);
        const auto y = ops::relu(tape, x);
        CHECK(std::vector<double>(y.data().begin(), y.data().end()) == std::vector<double>{0, 0, 2, 0.5});
        tape.backward(ops::sum(tape, y));
        CHECK(std::vector<double>(x.grad().begin(), x.grad().end()) == std::vector<double>{0, 0, 1, 1});
    }

    TEST_CASE("conv2d with all-ones kernel and zero padding counts neighbours") {
        Tape<float> tape;
        Tensor<float> x({1, 1, 3, 3}, 1.f);
        Tensor<float> k({1, 1, 3, 3}, 1.f);
        const auto y = ops::conv2d(tape, x, k, Tensor<float>{}, {1, 1});
        CHECK(std::vector<float>(y.data().begin(), y.data().end()) ==
              std::vector<float>{4, 6, 4, 6, 9, 6, 4, 6, 4});
    }

    TEST_CASE("conv2d is cross-correlation") {
        Tape<float> tape;
        Tensor<float> x({1, 1, 1, 3}, std::vector<float>{1, 2, 3});
        Tensor<float> k({1, 1, 1, 2}, std::vector<float>{1, 10});
        const auto y = ops::conv2d(tape, x, k, Tensor<float>{}, {1, 0});
        CHECK(std::vector<float>(y.data().begin(), y.data().end()) == std::vector<float>{21, 32});
    }

    TEST_CASE("conv2d matches a direct convolution across strides and paddings") {
        std::mt19937_64 rng(11);
        for (std::size_t stride : {1, 2, 3}) {
            for (std::size_t pad : {0, 1, 2}) {
                for (std::size_t kernel : {1, 3}) {
                    auto x = random_tensor({2, 3, 7, 6}, rng);
                    auto k = random_tensor({4, 3, kernel, kernel}, rng);
                    auto b = random_tensor({4}, rng);
                    Tape<double> tape;
                    const auto y = ops::conv2d(tape, x, k, b, {stride, pad});
                    std::size_t oh = 0, ow = 0;
                    const auto ref = naive_conv(x, k, b, stride, pad, oh, ow);
                    REQUIRE(y.shape() == Shape{2, 4, oh, ow});
                    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(y.data()[i] == doctest::Approx(ref[i]).epsilon(1e-12));
                }
            }
        }
    }

    TEST_CASE("conv2d rejects bad attributes and shapes") {
        Tape<float> tape;
        Tensor<float> x({1, 2, 4, 4}, 1.f);
        CHECK(code_of([&] { ops::conv2d(tape, x, Tensor<float>({1, 2, 3, 3}, 1.f), Tensor<float>{}, {0, 0}); }) ==
              ErrorCode::kUnsupportedAttr);
        CHECK(code_of([&] { ops::conv2d(tape, x, Tensor<float>({1, 3, 3, 3}, 1.f), Tensor<float>{}, {1, 0}); }) ==
              ErrorCode::kShapeMismatch);
        CHECK(code_of([&] { ops::conv2d(tape, x, Tensor<float>({1, 2, 5, 5}, 1.f), Tensor<float>{}, {1, 0}); }) ==
              ErrorCode::kShapeMismatch);
    }

    TEST_CASE("pooling examples") {
        Tape<float> tape;
        Tensor<float> x({1, 1, 2, 4}, std::vector<float>{1, 5, 2, 2, 3, 4, 8, 0});
        const auto mx = ops::max_pool2d(tape, x, {2, 2});
        const auto av = ops::avg_pool2d(tape, x, {2, 2});
        CHECK(std::vector<float>(mx.data().begin(), mx.data().end()) == std::vector<float>{5, 8});
        CHECK(std::vector<float>(av.data().begin(), av.data().end()) == std::vector<float>{3.25f, 3});
        const auto gap = ops::global_avg_pool(tape, x);
        CHECK(gap.shape() == Shape{1, 1});
        CHECK(gap.data()[0] == doctest::Approx(3.125));
        CHECK(code_of([&] { ops::max_pool2d(tape, x, {0, 1}); }) == ErrorCode::kUnsupportedAttr);
    }

    TEST_CASE("softmax is stable for large logits and rows sum to one") {
        Tape<double> tape;
        Tensor<double> x({2, 2}, std::vector<double>{1000, 1000, -1000, 0});
        const auto p = ops::softmax(tape, x);
        CHECK(p.data()[0] == doctest::Approx(0.5));
        CHECK(p.data()[1] == doctest::Approx(0.5));
        CHECK(p.data()[2] == doctest::Approx(0.0));
        CHECK(p.data()[3] == doctest::Approx(1.0));
        std::mt19937_64 rng(3);
        for (int trial = 0; trial < 50; ++trial) {
            const auto y = ops::softmax(tape, random_tensor({3, 7}, rng, -50, 50));
            for (std::size_t r = 0; r < 3; ++r) {
                double s = 0;
                for (std::size_t c = 0; c < 7; ++c) s += y.data()[r * 7 + c];
                CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
            }
        }
    }

    TEST_CASE("cross entropy of uniform logits is ln C") {
        Tape<double> tape;
        Tensor<double> logits({2, 4}, 0.25);
        const std::vector<int> labels{0, 3};
        CHECK(ops::cross_entropy(tape, logits, labels).item() == doctest::Approx(std::log(4.0)).epsilon(1e-12));
        const std::vector<int> bad{0, 4};
        CHECK(code_of([&] { ops::cross_entropy(tape, logits, bad); }) == ErrorCode::kLabelOutOfRange);
    }

    TEST_CASE("concat then slice recovers the parts") {
        std::mt19937_64 rng(5);
        for (std::size_t axis : {0, 1, 2}) {
            Tape<double> tape;
            Shape sa{2, 3, 4}, sb{2, 3, 4};
            sb[axis] = 5;
            const auto a = random_tensor(sa, rng);
            const auto b = random_tensor(sb, rng);
            const std::vector<Tensor<double>> parts{a, b};
            const auto joined = ops::concat<double>(tape, parts, axis);
            CHECK(joined.dim(axis) == sa[axis] + sb[axis]);
            const auto ra = ops::slice(tape, joined, axis, 0, sa[axis]);
            const auto rb = ops::slice(tape, joined, axis, sa[axis], sa[axis] + sb[axis]);
            CHECK(std::equal(ra.data().begin(), ra.data().end(), a.data().begin()));
            CHECK(std::equal(rb.data().begin(), rb.data().end(), b.data().begin()));
        }
    }
}

TEST_SUITE("tape") {
    TEST_CASE("backward requires a recorded scalar") {
        Tape<double> tape;
        Tensor<double> x({2}, 1.0);
        x.set_requires_grad(true);
        const auto y = ops::scale(tape, x, 2.0);
        CHECK(code_of([&] { tape.backward(y); }) == ErrorCode::kNotScalar);
        Tape<double> other;
        CHECK(code_of([&] { other.backward(Tensor<double>({1}, 1.0)); }) == ErrorCode::kEmptyTape);
    }

    TEST_CASE("gradients accumulate over reuse") {
        Tape<double> tape;
        Tensor<double> x({3}, std::vector<double>{1, 2, 3});
        x.set_requires_grad(true);
        const auto y = ops::add(tape, ops::mul(tape, x, x), x);
        tape.backward(ops::sum(tape, y));
        CHECK(std::vector<double>(x.grad().begin(), x.grad().end()) == std::vector<double>{3, 5, 7});
    }

    TEST_CASE("inference mode and constant inputs record nothing") {
        Tape<float> inference(Tape<float>::Mode::kInference);
        Tensor<float> w({2, 2}, 1.f);
        w.set_requires_grad(true);
        ops::matmul(inference, w, w);
        CHECK(inference.size() == 0);
        Tape<float> tape;
        Tensor<float> c({2, 2}, 1.f);
        ops::matmul(tape, c, c);
        CHECK(tape.size() == 0);
    }
}

TEST_SUITE("gradient oracle") {
    TEST_CASE("every differentiable op matches central differences") {
        for (auto& c : testing::op_cases(2024)) {
            CAPTURE(c.name);
            CHECK(max_relative_error(c.fn, c.inputs, 99) < kGradTol);
        }
    }
}

TEST_SUITE("parameters") {
    TEST_CASE("freezing clears requires_grad and duplicate paths are rejected") {
        ParameterSet<float> p;
        p.add("a.weight", Tensor<float>({2}, 1.f));
        p.add("b.weight", Tensor<float>({2}, 1.f), true);
        CHECK(p.at("a.weight").requires_grad());
        CHECK_FALSE(p.at("b.weight").requires_grad());
        CHECK(p.trainable().size() == 1);
        CHECK(p.frozen().paths() == std::vector<std::string>{"b.weight"});
        p.freeze_prefix("a.");
        CHECK(p.is_frozen("a.weight"));
        CHECK(code_of([&] { p.add("a.weight", Tensor<float>({1}, 0.f)); }) == ErrorCode::kBadConfig);
    }

    TEST_CASE("sgd step is w - lr * g and frozen entries never move") {
        ParameterSet<double> p;
        p.add("w", Tensor<double>({2}, std::vector<double>{1.0, -2.0}));
        p.add("f", Tensor<double>({1}, std::vector<double>{5.0}), true);
        p.zero_grad();
        p.at("w").grad()[0] = 0.5;
        p.at("w").grad()[1] = -1.0;
        OptimizerConfig cfg;
        cfg.kind = OptimizerKind::kSgd;
        cfg.lr = 0.1;
        Optimizer<double> opt(cfg);
        opt.step(p);
        CHECK(p.at("w").data()[0] == doctest::Approx(0.95));
        CHECK(p.at("w").data()[1] == doctest::Approx(-1.9));
        CHECK(p.at("f").data()[0] == 5.0);
    }

    TEST_CASE("adam first step moves each weight by lr against the gradient sign") {
        ParameterSet<double> p;
        p.add("w", Tensor<double>({3}, std::vector<double>{0.0, 0.0, 0.0}));
        p.zero_grad();
        p.at("w").grad()[0] = 3.0;
        p.at("w").grad()[1] = -0.001;
        OptimizerConfig cfg;
        cfg.lr = 0.01;
        Optimizer<double> opt(cfg);
        opt.step(p);
        CHECK(p.at("w").data()[0] == doctest::Approx(-0.01).epsilon(1e-6));
        CHECK(p.at("w").data()[1] == doctest::Approx(0.01).epsilon(1e-4));
        CHECK(p.at("w").data()[2] == 0.0);
    }

    TEST_CASE("step without gradients and invalid learning rates are rejected") {
        ParameterSet<float> p;
        p.add("w", Tensor<float>({1}, 1.f));
        Optimizer<float> opt(OptimizerConfig{});
        CHECK(code_of([&] { opt.step(p); }) == ErrorCode::kMissingGrad);
        OptimizerConfig bad;
        bad.lr = -1;
        CHECK(code_of([&] { Optimizer<float> o(bad); }) == ErrorCode::kBadConfig);
        CHECK(parse_optimizer_kind("sgd_momentum") == OptimizerKind::kSgdMomentum);
        CHECK(code_of([] { parse_optimizer_kind("rmsprop"); }) == ErrorCode::kBadConfig);
    }
}

TEST_SUITE("checkpoint") {
    TEST_CASE("byte layout of a one-parameter file") {
        ParameterSet<float> p;
        p.add("w", Tensor<float>({1, 2}, std::vector<float>{1.0f, -2.0f}));
        std::ostringstream out;
        write_checkpoint(out, p);
        const std::string bytes = out.str();
        const std::string expected = std::string("KDLW") + std::string("\x01\x00", 2) +
                                     std::string("\x01\x00\x00\x00", 4) + std::string("\x01\x00", 2) + "w" +
                                     std::string("\x02", 1) + std::string("\x01\x00\x00\x00", 4) +
                                     std::string("\x02\x00\x00\x00", 4) + std::string("\x00\x00\x80\x3f", 4) +
                                     std::string("\x00\x00\x00\xc0", 4);
        CHECK(bytes == expected);
    }

    TEST_CASE("round trip is bit exact") {
        std::mt19937_64 rng(8);
        std::uniform_real_distribution<float> u(-1e6f, 1e6f);
        ParameterSet<float> p;
        for (int i = 0; i < 5; ++i) {
            Tensor<float> t({static_cast<std::size_t>(i + 1), 3, 2}, 0.f);
            for (auto& v : t.data()) v = u(rng);
            p.add("layer" + std::to_string(i) + ".weight", t);
        }
        p.at("layer0.weight").data()[0] = -0.0f;
        p.at("layer0.weight").data()[1] = std::numeric_limits<float>::denorm_min();
        std::stringstream buf;
        write_checkpoint(buf, p);
        const auto q = read_checkpoint(buf);
        REQUIRE(q.paths() == p.paths());
        for (const auto& e : p.entries()) {
            const auto& t = q.at(e.path);
            CHECK(t.shape() == e.tensor.shape());
            CHECK(std::memcmp(t.data().data(), e.tensor.data().data(), t.numel() * sizeof(float)) == 0);
        }
        CHECK(checksum(p) == checksum(q));
    }

    TEST_CASE("corrupt input is rejected") {
        std::istringstream bad_magic("KDLX\x01\x00");
        CHECK(code_of([&] { read_checkpoint(bad_magic); }) == ErrorCode::kIoError);
        ParameterSet<float> p;
        p.add("w", Tensor<float>({4}, 1.f));
        std::ostringstream out;
        write_checkpoint(out, p);
        std::istringstream truncated(out.str().substr(0, out.str().size() - 3));
        CHECK(code_of([&] { read_checkpoint(truncated); }) == ErrorCode::kIoError);
    }
}

TEST_SUITE("config") {
    TEST_CASE("key = value parsing with comments") {
        const auto cfg = KeyValueConfig::parse("# comment\nepochs = 12\n\nlr=0.5\nname = a b\n");
        CHECK(cfg.get_int("epochs") == 12);
        CHECK(cfg.get_double("lr") == 0.5);
        CHECK(cfg.get_string("name") == "a b");
        CHECK(cfg.get_int("missing", 3) == 3);
        CHECK(code_of([&] { cfg.require_known({"epochs", "lr"}); }) == ErrorCode::kBadConfig);
        CHECK(code_of([&] { (void)cfg.get_int("lr"); }) == ErrorCode::kBadConfig);
    }

    TEST_CASE("malformed lines report their line number") {
        try {
            KeyValueConfig::parse("a = 1\nnot a pair\n");
            FAIL("expected ParseError");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::kParseError);
            CHECK(std::string(e.what()).find("line 2") != std::string::npos);
        }
    }

    TEST_CASE("to_string round trips") {
        KeyValueConfig cfg;
        cfg.set("b", "2");
        cfg.set("a", "x");
        const auto back = KeyValueConfig::parse(cfg.to_string());
        CHECK(back.values() == cfg.values());
    }
}
