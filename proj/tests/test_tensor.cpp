#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <vector>

#include "tinydetr/adam.hpp"
#include "tinydetr/checkpoint.hpp"
#include "tinydetr/errors.hpp"
#include "tinydetr/gradcheck.hpp"
#include "tinydetr/rng.hpp"
#include "tinydetr/tensor.hpp"

using namespace tinydetr;

namespace {

Tensor make_random(Shape shape, std::uint64_t seed, bool requires_grad, double away_from = 0.0) {
    Rng rng(seed);
    std::vector<double> values(shape_size(shape));
    for (double& v : values) {
        v = rng.normal();
        if (away_from > 0.0 && std::abs(v) < away_from) {
            v = v < 0.0 ? v - away_from : v + away_from;
        }
    }
    return Tensor(std::move(shape), std::move(values), requires_grad);
}

Tensor make_positive(Shape shape, std::uint64_t seed, bool requires_grad) {
    Rng rng(seed);
    std::vector<double> values(shape_size(shape));
    for (double& v : values) {
        v = 0.2 + rng.uniform(0.0, 2.0);
    }
    return Tensor(std::move(shape), std::move(values), requires_grad);
}

void expect_grad_ok(const std::function<Tensor()>& forward,
                    const std::vector<std::pair<std::string, Tensor>>& params) {
    const auto report = check_gradients(forward, params);
    CAPTURE(report.worst_parameter);
    CAPTURE(report.worst_index);
    CAPTURE(report.analytic_at_worst);
    CAPTURE(report.numeric_at_worst);
    CHECK(report.passed);
    CHECK(report.max_rel_error < 1e-4);
}

}  // namespace

TEST_CASE("tensor construction and aliasing") {
    Tensor t(Shape{2, 3}, 1.5);
    CHECK(t.shape() == Shape{2, 3});
    CHECK(t.size() == 6);
    CHECK(t.at({1, 2}) == 1.5);

    Tensor alias = t;
    alias.data()[0] = 9.0;
    CHECK(t.data()[0] == 9.0);

    Tensor deep = t.clone();
    deep.data()[0] = -1.0;
    CHECK(t.data()[0] == 9.0);

    CHECK_THROWS_AS(Tensor(Shape{2, 2}, std::vector<double>{1.0}), std::invalid_argument);
    CHECK(Tensor::scalar(4.0).item() == 4.0);
    CHECK_THROWS_AS(t.item(), std::invalid_argument);
}

TEST_CASE("rng determinism and stream separation") {
    Rng a(123), b(123), c(124);
    for (int i = 0; i < 16; ++i) {
        const double va = a.normal();
        CHECK(va == b.normal());
        CHECK(va != c.normal());
    }
    CHECK(derive_seed(7, "shuffle", 0) != derive_seed(7, "shuffle", 1));
    CHECK(derive_seed(7, "shuffle", 0) != derive_seed(7, "scene", 0));
    CHECK(derive_seed(7, "shuffle", 3) == derive_seed(7, "shuffle", 3));
}

TEST_CASE("elementwise forward and broadcast suffix rule") {
    Tensor a(Shape{2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
    Tensor row(Shape{3}, std::vector<double>{10, 20, 30});
    Tensor s = add(a, row);
    CHECK(s.at({0, 0}) == 11);
    CHECK(s.at({1, 2}) == 36);

    Tensor p = mul(a, Tensor::scalar(2.0));
    CHECK(p.at({1, 0}) == 8);

    CHECK(sub(a, 1.0).at({0, 0}) == 0);
    CHECK(sub(1.0, a).at({0, 0}) == 0);
    CHECK(div(a, 2.0).at({1, 2}) == 3);

    Tensor bad(Shape{2}, std::vector<double>{1, 2});
    CHECK_THROWS_WITH_AS(add(a, bad), doctest::Contains("[2,3]"), std::invalid_argument);
    // broadcasting is one-directional: the suffix operand must come second
    CHECK_THROWS_AS(add(row, a), std::invalid_argument);
}

TEST_CASE("elementwise dispatcher mirrors the named ops") {
    Tensor a(Shape{3}, std::vector<double>{-1.0, 0.5, 2.0});
    Tensor b(Shape{3}, std::vector<double>{3.0, 3.0, 3.0});
    CHECK(elementwise(EwKind::add, a, &b).at({1}) == 3.5);
    CHECK(elementwise(EwKind::mul, a, &b).at({2}) == 6.0);
    CHECK(elementwise(EwKind::relu, a).at({0}) == 0.0);
    CHECK(elementwise(EwKind::sigmoid, a).at({1}) == doctest::Approx(1.0 / (1.0 + std::exp(-0.5))));
    CHECK_THROWS_AS(elementwise(EwKind::add, a), std::invalid_argument);
}

TEST_CASE("matmul matches a hand computation and batches") {
    Tensor a(Shape{2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
    Tensor b(Shape{3, 2}, std::vector<double>{7, 8, 9, 10, 11, 12});
    Tensor c = matmul(a, b);
    CHECK(c.shape() == Shape{2, 2});
    CHECK(c.at({0, 0}) == 58);
    CHECK(c.at({0, 1}) == 64);
    CHECK(c.at({1, 0}) == 139);
    CHECK(c.at({1, 1}) == 154);

    Tensor ba = make_random({4, 3, 5}, 1, false);
    Tensor bb = make_random({4, 5, 2}, 2, false);
    Tensor bc = matmul(ba, bb);
    CHECK(bc.shape() == Shape{4, 3, 2});
    for (std::size_t l = 0; l < 4; ++l) {
        for (std::size_t i = 0; i < 3; ++i) {
            for (std::size_t j = 0; j < 2; ++j) {
                double acc = 0.0;
                for (std::size_t k = 0; k < 5; ++k) {
                    acc += ba.at({l, i, k}) * bb.at({l, k, j});
                }
                CHECK(bc.at({l, i, j}) == doctest::Approx(acc).epsilon(1e-12));
            }
        }
    }

    CHECK_THROWS_AS(matmul(a, Tensor(Shape{2, 2}, 0.0)), std::invalid_argument);
    CHECK_THROWS_AS(matmul(ba, make_random({3, 5, 2}, 3, false)), std::invalid_argument);
}

TEST_CASE("transpose and reshape") {
    Tensor a(Shape{2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
    Tensor t = transpose(a, 0, 1);
    CHECK(t.shape() == Shape{3, 2});
    CHECK(t.at({2, 0}) == 3);
    CHECK(t.at({0, 1}) == 4);

    Tensor b = make_random({2, 3, 4}, 9, false);
    Tensor bt = transpose(b, 1, 2);
    CHECK(bt.shape() == Shape{2, 4, 3});
    CHECK(bt.at({1, 3, 2}) == b.at({1, 2, 3}));

    Tensor r = reshape(a, Shape{3, 2});
    CHECK(r.at({0, 1}) == 2);
    CHECK_THROWS_AS(reshape(a, Shape{4}), std::invalid_argument);
}

TEST_CASE("reductions") {
    Tensor a(Shape{2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
    CHECK(sum(a).item() == 21);
    CHECK(mean(a).item() == doctest::Approx(3.5));
    Tensor s0 = sum_axis(a, 0);
    CHECK(s0.shape() == Shape{3});
    CHECK(s0.at({0}) == 5);
    Tensor s1 = sum_axis(a, 1);
    CHECK(s1.shape() == Shape{2});
    CHECK(s1.at({1}) == 15);
    CHECK_THROWS_AS(sum_axis(a, 2), std::invalid_argument);
}

TEST_CASE("softmax rows sum to one and survive large logits") {
    Tensor x(Shape{2, 4}, std::vector<double>{1000, 1001, 1002, 1003, -1000, 0, 1, 2});
    Tensor s = softmax(x, 1);
    for (std::size_t r = 0; r < 2; ++r) {
        double total = 0.0;
        for (std::size_t c = 0; c < 4; ++c) {
            const double v = s.at({r, c});
            CHECK(std::isfinite(v));
            CHECK(v >= 0.0);
            total += v;
        }
        CHECK(std::abs(total - 1.0) < 1e-12);
    }
    // monotone logits keep their order after softmax
    CHECK(s.at({0, 3}) > s.at({0, 2}));

    Tensor bad(Shape{2}, std::vector<double>{0.0, std::nan("")});
    CHECK_THROWS_AS(softmax(bad, 0), NumericError);
}

TEST_CASE("softmax along a middle axis") {
    Tensor x = make_random({2, 3, 4}, 17, false);
    Tensor s = softmax(x, 1);
    for (std::size_t o = 0; o < 2; ++o) {
        for (std::size_t in = 0; in < 4; ++in) {
            double total = 0.0;
            for (std::size_t t = 0; t < 3; ++t) {
                total += s.at({o, t, in});
            }
            CHECK(std::abs(total - 1.0) < 1e-12);
        }
    }
}

TEST_CASE("layer norm normalizes and applies gain and bias") {
    Tensor x = make_random({3, 8}, 5, false);
    Tensor gain(Shape{8}, 1.0);
    Tensor bias(Shape{8}, 0.0);
    Tensor y = layer_norm(x, gain, bias, 1);
    for (std::size_t r = 0; r < 3; ++r) {
        double mu = 0.0, var = 0.0;
        for (std::size_t c = 0; c < 8; ++c) {
            mu += y.at({r, c});
        }
        mu /= 8.0;
        for (std::size_t c = 0; c < 8; ++c) {
            var += (y.at({r, c}) - mu) * (y.at({r, c}) - mu);
        }
        var /= 8.0;
        CHECK(std::abs(mu) < 1e-12);
        CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
    }

    Tensor gain2(Shape{8}, 2.0);
    Tensor bias2(Shape{8}, 0.5);
    Tensor y2 = layer_norm(x, gain2, bias2, 1);
    CHECK(y2.at({0, 0}) == doctest::Approx(2.0 * y.at({0, 0}) + 0.5).epsilon(1e-12));

    CHECK_THROWS_AS(layer_norm(x, Tensor(Shape{4}, 1.0), bias, 1), std::invalid_argument);
}

TEST_CASE("constant input layer norm stays finite through the epsilon") {
    Tensor x(Shape{1, 4}, 3.0);
    Tensor y = layer_norm(x, Tensor(Shape{4}, 1.0), Tensor(Shape{4}, 0.0), 1);
    for (std::size_t c = 0; c < 4; ++c) {
        CHECK(y.at({0, c}) == 0.0);
    }
}

TEST_CASE("indexing ops") {
    Tensor a(Shape{3, 4},
             std::vector<double>{0, 1, 2, 3, 10, 11, 12, 13, 20, 21, 22, 23});
    const std::size_t rows[] = {2, 0, 2};
    Tensor r = select_rows(a, rows);
    CHECK(r.shape() == Shape{3, 4});
    CHECK(r.at({0, 1}) == 21);
    CHECK(r.at({1, 1}) == 1);
    CHECK(r.at({2, 3}) == 23);

    Tensor c = select_col(a, 2);
    CHECK(c.shape() == Shape{3});
    CHECK(c.at({1}) == 12);

    const std::size_t cols[] = {3, 0, 1};
    Tensor g = gather_per_row(a, cols);
    CHECK(g.at({0}) == 3);
    CHECK(g.at({1}) == 10);
    CHECK(g.at({2}) == 21);

    const std::size_t bad_rows[] = {5};
    CHECK_THROWS_AS(select_rows(a, bad_rows), std::out_of_range);
    CHECK_THROWS_AS(select_col(a, 9), std::out_of_range);
}

TEST_CASE("cross entropy matches the log softmax identity") {
    Tensor logits(Shape{2, 3}, std::vector<double>{1.0, 2.0, 0.5, -1.0, 0.0, 3.0});
    const std::size_t targets[] = {1, 2};
    const double weights[] = {1.0, 0.1};
    Tensor loss = cross_entropy_rows(logits, targets, weights);

    double expected = 0.0;
    for (std::size_t r = 0; r < 2; ++r) {
        double denom = 0.0;
        for (std::size_t c = 0; c < 3; ++c) {
            denom += std::exp(logits.at({r, c}));
        }
        expected -= weights[r] * std::log(std::exp(logits.at({r, targets[r]})) / denom);
    }
    CHECK(loss.item() == doctest::Approx(expected).epsilon(1e-12));

    const std::size_t bad[] = {1, 7};
    CHECK_THROWS_AS(cross_entropy_rows(logits, bad, weights), std::out_of_range);
}

TEST_CASE("image to patches layout and padding hint") {
    // 3x4x4 image, patch 2 -> 4 tokens of 12 features
    std::vector<double> img(3 * 4 * 4);
    for (std::size_t i = 0; i < img.size(); ++i) {
        img[i] = static_cast<double>(i);
    }
    Tensor image(Shape{3, 4, 4}, img);
    Tensor tokens = image_to_patches(image, 2);
    CHECK(tokens.shape() == Shape{4, 12});
    // token 0 covers rows 0..1, cols 0..1 of each channel plane
    CHECK(tokens.at({0, 0}) == image.at({0, 0, 0}));
    CHECK(tokens.at({0, 1}) == image.at({0, 0, 1}));
    CHECK(tokens.at({0, 2}) == image.at({0, 1, 0}));
    CHECK(tokens.at({0, 4}) == image.at({1, 0, 0}));
    // token 3 covers the bottom-right patch
    CHECK(tokens.at({3, 0}) == image.at({0, 2, 2}));

    Tensor odd(Shape{3, 5, 4}, 0.0);
    CHECK_THROWS_WITH_AS(image_to_patches(odd, 2), doctest::Contains("pad"),
                         std::invalid_argument);
}

TEST_CASE("no active tape means forward only") {
    Tensor a = make_random({2, 2}, 3, true);
    Tensor b = mul(a, a);
    CHECK_FALSE(b.requires_grad());
    CHECK(Tape::active() == nullptr);
}

TEST_CASE("tape backward error semantics") {
    Tensor a = make_random({2, 2}, 4, true);

    {
        Tape tape;
        TapeScope scope(tape);
        Tensor v = mul(a, a);
        CHECK_THROWS_WITH_AS(tape.backward(v), doctest::Contains("scalar"),
                             std::invalid_argument);
    }
    {
        Tape tape;
        CHECK_THROWS_WITH_AS(tape.backward(Tensor::scalar(1.0, true)),
                             doctest::Contains("empty"), std::runtime_error);
    }
    {
        Tape tape;
        TapeScope scope(tape);
        Tensor loss = sum(mul(a, a));
        tape.backward(loss);
        CHECK(tape.consumed());
        CHECK_THROWS_WITH_AS(tape.backward(loss), doctest::Contains("already"),
                             std::runtime_error);
        tape.clear();
        CHECK_FALSE(tape.consumed());
        CHECK(tape.size() == 0);
    }
    {
        Tape tape;
        TapeScope scope(tape);
        Tensor plain = make_random({2}, 5, false);
        Tensor loss = sum(plain);
        CHECK_FALSE(loss.requires_grad());
        CHECK_THROWS_AS(tape.backward(loss), std::runtime_error);
    }
    CHECK_THROWS_AS(backward(Tensor::scalar(1.0, true)), std::runtime_error);
}

TEST_CASE("gradients accumulate across uses of the same tensor") {
    Tensor a = Tensor::scalar(3.0, true);
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = add(mul(a, a), a);  // a^2 + a -> d/da = 2a + 1 = 7
    tape.backward(loss);
    CHECK(a.grad()[0] == doctest::Approx(7.0).epsilon(1e-12));
}

TEST_CASE("maximum and minimum route tie gradients to the first operand") {
    Tensor a = Tensor::scalar(2.0, true);
    Tensor b = Tensor::scalar(2.0, true);
    {
        Tape tape;
        TapeScope scope(tape);
        tape.backward(maximum(a, b));
        CHECK(a.grad()[0] == 1.0);
        CHECK(b.grad()[0] == 0.0);
    }
    a.zero_grad();
    b.zero_grad();
    {
        Tape tape;
        TapeScope scope(tape);
        tape.backward(minimum(a, b));
        CHECK(a.grad()[0] == 1.0);
        CHECK(b.grad()[0] == 0.0);
    }
}

TEST_CASE("finite difference check over the op set") {
    SUBCASE("add sub mul div with broadcast") {
        Tensor a = make_random({3, 4}, 11, true);
        Tensor b = make_random({4}, 12, true, 0.3);
        expect_grad_ok(
            [&] { return sum(div(mul(add(a, b), sub(a, b)), b)); },
            {{"a", a}, {"b", b}});
    }
    SUBCASE("unary chain") {
        Tensor x = make_random({2, 5}, 13, true, 0.2);
        expect_grad_ok(
            [&] { return sum(add(relu(x), add(sigmoid(x), abs(x)))); }, {{"x", x}});
    }
    SUBCASE("exp log") {
        Tensor x = make_positive({6}, 14, true);
        expect_grad_ok([&] { return sum(mul(log(x), exp(neg(x)))); }, {{"x", x}});
    }
    SUBCASE("maximum minimum") {
        Tensor a = make_random({7}, 15, true);
        Tensor b = make_random({7}, 16, true);
        expect_grad_ok(
            [&] { return sum(add(maximum(a, b), mul(minimum(a, b), 0.5))); },
            {{"a", a}, {"b", b}});
    }
    SUBCASE("matmul") {
        Tensor a = make_random({3, 4}, 17, true);
        Tensor b = make_random({4, 2}, 18, true);
        expect_grad_ok([&] { return sum(matmul(a, b)); }, {{"a", a}, {"b", b}});
    }
    SUBCASE("batched matmul") {
        Tensor a = make_random({2, 3, 4}, 19, true);
        Tensor b = make_random({2, 4, 2}, 20, true);
        expect_grad_ok([&] { return sum(mul(matmul(a, b), matmul(a, b))); },
                       {{"a", a}, {"b", b}});
    }
    SUBCASE("transpose reshape") {
        Tensor a = make_random({2, 3, 4}, 21, true);
        expect_grad_ok(
            [&] {
                Tensor t = transpose(a, 0, 2);
                return sum(mul(reshape(t, Shape{6, 4}), 1.5));
            },
            {{"a", a}});
    }
    SUBCASE("sum axis and mean") {
        Tensor a = make_random({3, 4, 2}, 22, true);
        expect_grad_ok([&] { return mean(mul(sum_axis(a, 1), sum_axis(a, 1))); }, {{"a", a}});
    }
    SUBCASE("softmax") {
        Tensor x = make_random({3, 5}, 23, true);
        Tensor w = make_random({3, 5}, 24, false);
        expect_grad_ok([&] { return sum(mul(softmax(x, 1), w)); }, {{"x", x}});
    }
    SUBCASE("layer norm") {
        Tensor x = make_random({4, 6}, 25, true);
        Tensor gain = make_random({6}, 26, true, 0.3);
        Tensor bias = make_random({6}, 27, true);
        Tensor w = make_random({4, 6}, 28, false);
        expect_grad_ok([&] { return sum(mul(layer_norm(x, gain, bias, 1), w)); },
                       {{"x", x}, {"gain", gain}, {"bias", bias}});
    }
    SUBCASE("indexing") {
        Tensor a = make_random({5, 4}, 29, true);
        const std::vector<std::size_t> rows = {4, 0, 0, 2};
        const std::vector<std::size_t> cols = {1, 3, 0, 2, 2};
        expect_grad_ok(
            [&] {
                Tensor picked = select_rows(a, rows);
                Tensor col = select_col(a, 1);
                Tensor diag = gather_per_row(a, cols);
                return add(sum(mul(picked, picked)), add(sum(col), sum(mul(diag, 2.0))));
            },
            {{"a", a}});
    }
    SUBCASE("cross entropy") {
        Tensor logits = make_random({4, 5}, 30, true);
        const std::vector<std::size_t> targets = {0, 4, 2, 2};
        const std::vector<double> weights = {1.0, 0.1, 1.0, 0.5};
        expect_grad_ok([&] { return cross_entropy_rows(logits, targets, weights); },
                       {{"logits", logits}});
    }
    SUBCASE("image to patches") {
        Tensor image = make_random({3, 4, 4}, 31, true);
        Tensor w = make_random({4, 12}, 32, false);
        expect_grad_ok([&] { return sum(mul(image_to_patches(image, 2), w)); },
                       {{"image", image}});
    }
    SUBCASE("composite expression reusing intermediates") {
        Tensor a = make_random({3, 3}, 33, true);
        Tensor b = make_random({3, 3}, 34, true);
        expect_grad_ok(
            [&] {
                Tensor h = matmul(a, b);
                Tensor s = softmax(h, 1);
                Tensor v = matmul(s, b);
                return mean(mul(v, v));
            },
            {{"a", a}, {"b", b}});
    }
}

TEST_CASE("adam takes a bias-corrected first step of size lr") {
    Tensor p(Shape{2}, std::vector<double>{1.0, -2.0}, true);
    Adam adam({{"all", 0.1, {{"p", p}}}});
    // constant gradient of 0.5 and -0.25: first update is lr * sign(g)
    // up to the eps term, because mhat/sqrt(vhat) == g/|g| at t=1
    p.grad()[0] = 0.5;
    p.grad()[1] = -0.25;
    adam.step();
    CHECK(p.data()[0] == doctest::Approx(1.0 - 0.1).epsilon(1e-6));
    CHECK(p.data()[1] == doctest::Approx(-2.0 + 0.1).epsilon(1e-6));
    CHECK(adam.step_count() == 1);
    // gradients were consumed
    CHECK(p.grad()[0] == 0.0);
    CHECK(p.grad()[1] == 0.0);
}

TEST_CASE("adam second step matches a hand computation") {
    const double lr = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    Tensor p(Shape{1}, std::vector<double>{0.4}, true);
    Adam adam({{"all", lr, {{"p", p}}}}, b1, b2, eps);

    double m = 0.0, v = 0.0, x = 0.4;
    const double g1 = 0.3, g2 = -0.7;
    for (int t = 1; t <= 2; ++t) {
        const double g = (t == 1) ? g1 : g2;
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        x -= lr * (m / (1 - std::pow(b1, t))) / (std::sqrt(v / (1 - std::pow(b2, t))) + eps);
    }

    p.grad()[0] = g1;
    adam.step();
    p.grad()[0] = g2;
    adam.step();
    CHECK(p.data()[0] == doctest::Approx(x).epsilon(1e-14));
}

TEST_CASE("adam rejects non-finite gradients by parameter name") {
    Tensor good(Shape{1}, std::vector<double>{0.0}, true);
    Tensor bad(Shape{1}, std::vector<double>{0.0}, true);
    Adam adam({{"all", 0.1, {{"fine", good}, {"broken.weight", bad}}}});
    bad.grad()[0] = std::nan("");
    CHECK_THROWS_WITH_AS(adam.step(), doctest::Contains("broken.weight"), NumericError);
}

TEST_CASE("adam per-group learning rates") {
    Tensor slow(Shape{1}, std::vector<double>{0.0}, true);
    Tensor fast(Shape{1}, std::vector<double>{0.0}, true);
    Adam adam({{"backbone", 0.001, {{"slow", slow}}}, {"main", 0.1, {{"fast", fast}}}});
    slow.grad()[0] = 1.0;
    fast.grad()[0] = 1.0;
    adam.step();
    CHECK(std::abs(slow.data()[0]) < 0.0011);
    CHECK(std::abs(fast.data()[0]) > 0.09);
}

TEST_CASE("gradient clipping rescales the global norm") {
    Tensor a(Shape{2}, std::vector<double>{0.0, 0.0}, true);
    Tensor b(Shape{1}, std::vector<double>{0.0}, true);
    Adam adam({{"all", 0.1, {{"a", a}, {"b", b}}}});
    a.grad()[0] = 3.0;
    a.grad()[1] = 0.0;
    b.grad()[0] = 4.0;
    const double norm = adam.clip_grad_norm(0.1);
    CHECK(norm == doctest::Approx(5.0).epsilon(1e-12));
    const double clipped =
        std::sqrt(a.grad()[0] * a.grad()[0] + a.grad()[1] * a.grad()[1] +
                  b.grad()[0] * b.grad()[0]);
    CHECK(clipped == doctest::Approx(0.1).epsilon(1e-9));
    // below the threshold nothing changes
    const double norm2 = adam.clip_grad_norm(10.0);
    CHECK(norm2 == doctest::Approx(0.1).epsilon(1e-9));
    CHECK(a.grad()[0] == doctest::Approx(3.0 * 0.1 / 5.0).epsilon(1e-9));
}

TEST_CASE("adam state round-trips") {
    Tensor p(Shape{2}, std::vector<double>{1.0, 2.0}, true);
    Adam adam({{"all", 0.05, {{"p", p}}}});
    p.grad()[0] = 0.1;
    p.grad()[1] = -0.2;
    adam.step();

    Tensor q(Shape{2}, std::vector<double>{p.data()[0], p.data()[1]}, true);
    Adam restored({{"all", 0.05, {{"p", q}}}});
    restored.load_state(adam.state(), adam.step_count());

    p.grad()[0] = 0.3;
    p.grad()[1] = 0.4;
    q.grad()[0] = 0.3;
    q.grad()[1] = 0.4;
    adam.step();
    restored.step();
    CHECK(p.data()[0] == q.data()[0]);
    CHECK(p.data()[1] == q.data()[1]);

    Adam incomplete({{"all", 0.05, {{"other", Tensor(Shape{2}, 0.0, true)}}}});
    CHECK_THROWS_AS(incomplete.load_state(adam.state(), 1), DataError);
}

TEST_CASE("checkpoint round-trip is bit exact") {
    namespace fs = std::filesystem;
    const fs::path path = fs::temp_directory_path() / "tinydetr_ckpt_test.ckpt";

    Checkpoint ck;
    ck["model.weight"] = CheckpointEntry{{2, 3}, {1.0, -2.5, 3.25, 1e-300, 1e300, 0.1}};
    ck["model.bias"] = CheckpointEntry{{3}, {0.0, -0.0, 42.0}};
    put_scalar(ck, "trainer.step", 17.0);
    put_scalar(ck, "config.lr", 1e-3);
    save_checkpoint(path.string(), ck);

    Checkpoint back = load_checkpoint(path.string());
    CHECK(back.size() == 4);
    CHECK(back.at("model.weight").shape == Shape{2, 3});
    for (std::size_t i = 0; i < 6; ++i) {
        CHECK(back.at("model.weight").values[i] == ck.at("model.weight").values[i]);
    }
    CHECK(get_scalar(back, "trainer.step") == 17.0);
    CHECK(get_scalar(back, "config.lr") == 1e-3);
    CHECK(has_entry(back, "model.bias"));
    CHECK_FALSE(has_entry(back, "model.missing"));
    CHECK_THROWS_AS(get_scalar(back, "model.missing"), DataError);
    CHECK_THROWS_AS(get_scalar(back, "model.weight"), DataError);

    fs::remove(path);
}

TEST_CASE("checkpoint loader rejects junk") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path();

    const fs::path junk = dir / "tinydetr_junk.ckpt";
    {
        std::FILE* f = std::fopen(junk.string().c_str(), "wb");
        std::fputs("not a checkpoint", f);
        std::fclose(f);
    }
    CHECK_THROWS_WITH_AS(load_checkpoint(junk.string()), doctest::Contains("magic"), DataError);

    const fs::path truncated = dir / "tinydetr_trunc.ckpt";
    {
        Checkpoint ck;
        ck["w"] = CheckpointEntry{{64}, std::vector<double>(64, 1.0)};
        save_checkpoint(truncated.string(), ck);
        fs::resize_file(truncated, 40);
    }
    CHECK_THROWS_WITH_AS(load_checkpoint(truncated.string()), doctest::Contains("truncated"),
                         DataError);

    CHECK_THROWS_AS(load_checkpoint((dir / "tinydetr_absent.ckpt").string()), DataError);

    fs::remove(junk);
    fs::remove(truncated);
}
