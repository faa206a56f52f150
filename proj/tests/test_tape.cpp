// Copyright (C) 2026 emkit project
// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode tape: every differentiable op is checked against central
// differences through scalar functionals; structural ops are checked for
// exact value/adjoint behaviour; error contracts are exercised by name.

#include <catch2/catch_amalgamated.hpp>

#include "emkit/grad_check.hpp"
#include "emkit/tape.hpp"

using namespace emkit;

namespace {

// Builds f(x) = mean(build(tape, x)) and its tape gradient, then runs the
// central-difference comparison. build() must return a scalar-shaped var or
// we reduce it with mean_all here.
template <class Build>
double check_through_tape(const Tensor<double>& x0, Build&& build, double eps = 1e-5) {
    auto value_fn = [&](const Tensor<double>& x) {
        Tape<double> t;
        auto vx = t.input(x, false);
        auto out = build(t, vx);
        return t.value(t.mean_all(out))[0];
    };
    auto grad_fn = [&](const Tensor<double>& x) {
        Tape<double> t;
        auto vx = t.input(x, true);
        auto out = build(t, vx);
        auto m = t.mean_all(out);
        t.backward(m, Tensor<double>({1}, {1.0}));
        return t.grad(vx);
    };
    return grad_check(value_fn, grad_fn, x0, eps);
}

}  // namespace

TEST_CASE("add accumulates both consumers exactly") {
    Tape<double> t;
    auto x = t.input(Tensor<double>({3}, {1, 2, 3}), true);
    auto y = t.add(x, x);  // y = 2x
    t.backward(y, Tensor<double>({3}, {1, 1, 1}));
    auto g = t.grad(x);
    for (int i = 0; i < 3; ++i) REQUIRE(g[i] == 2.0);
}

TEST_CASE("mul gradient routes the opposite operand") {
    auto x0 = seeded_tensor<double>({2, 3}, 1, Dist::Normal);
    auto other = seeded_tensor<double>({2, 3}, 2, Dist::Normal);
    REQUIRE(check_through_tape(x0, [&](Tape<double>& t, auto vx) {
                return t.mul(vx, t.constant(other));
            }) < 1e-9);
    // both operands from the same var: d(x*x) = 2x
    Tape<double> t;
    auto x = t.input(Tensor<double>({2}, {3.0, -4.0}), true);
    auto y = t.mul(x, x);
    t.backward(y, Tensor<double>({2}, {1.0, 1.0}));
    REQUIRE(t.grad(x)[0] == 6.0);
    REQUIRE(t.grad(x)[1] == -8.0);
}

TEST_CASE("scale and mean gradients are exact") {
    Tape<double> t;
    auto x = t.input(Tensor<double>({4}, {1, 2, 3, 4}), true);
    auto m = t.mean_all(t.scale(x, 3.0));
    t.backward(m, Tensor<double>({1}, {1.0}));
    for (int i = 0; i < 4; ++i) REQUIRE(t.grad(x)[i] == 0.75);
}

TEST_CASE("matmul gradients match central differences for all flag pairs") {
    for (bool ta : {false, true})
        for (bool tb : {false, true}) {
            // effective product [4,3]x[3,5]
            const Shape sa = ta ? Shape{3, 4} : Shape{4, 3};
            const Shape sb = tb ? Shape{5, 3} : Shape{3, 5};
            auto a0 = seeded_tensor<double>(sa, 10 + ta, Dist::Normal);
            auto b0 = seeded_tensor<double>(sb, 20 + tb, Dist::Normal);
            REQUIRE(check_through_tape(a0, [&](Tape<double>& t, auto va) {
                        return t.matmul(va, t.constant(b0), ta, tb);
                    }) < 1e-9);
            REQUIRE(check_through_tape(b0, [&](Tape<double>& t, auto vb) {
                        return t.matmul(t.constant(a0), vb, ta, tb);
                    }) < 1e-9);
        }
}

TEST_CASE("batched rank-3 matmul differentiates per slice") {
    auto a0 = seeded_tensor<double>({3, 2, 4}, 31, Dist::Normal);
    auto b0 = seeded_tensor<double>({3, 4, 2}, 32, Dist::Normal);
    REQUIRE(check_through_tape(a0, [&](Tape<double>& t, auto va) {
                return t.matmul(va, t.constant(b0));
            }) < 1e-9);
    auto c0 = seeded_tensor<double>({3, 5, 4}, 33, Dist::Normal);
    REQUIRE(check_through_tape(c0, [&](Tape<double>& t, auto vc) {
                return t.matmul(t.constant(a0), vc, false, true);  // [2,4] x [5,4]^T
            }) < 1e-9);
}

TEST_CASE("softmax gradient matches central differences") {
    auto x0 = seeded_tensor<double>({3, 5}, 41, Dist::Normal);
    auto r = seeded_tensor<double>({3, 5}, 42, Dist::Uniform);
    REQUIRE(check_through_tape(x0, [&](Tape<double>& t, auto vx) {
                return t.mul(t.softmax(vx), t.constant(r));
            }) < 1e-9);
}

TEST_CASE("layer_norm gradients for input, gamma and beta") {
    auto x0 = seeded_tensor<double>({4, 6}, 51, Dist::Normal);
    auto g0 = seeded_tensor<double>({6}, 52, Dist::Normal);
    auto b0 = seeded_tensor<double>({6}, 53, Dist::Normal);
    auto r = seeded_tensor<double>({4, 6}, 54, Dist::Uniform);
    auto weighted = [&](Tape<double>& t, Tape<double>::Var ln) { return t.mul(ln, t.constant(r)); };

    REQUIRE(check_through_tape(x0, [&](Tape<double>& t, auto vx) {
                return weighted(t, t.layer_norm(vx, t.constant(g0), t.constant(b0)));
            }) < 1e-7);
    REQUIRE(check_through_tape(g0, [&](Tape<double>& t, auto vg) {
                return weighted(t, t.layer_norm(t.constant(x0), vg, t.constant(b0)));
            }) < 1e-8);
    REQUIRE(check_through_tape(b0, [&](Tape<double>& t, auto vb) {
                return weighted(t, t.layer_norm(t.constant(x0), t.constant(g0), vb));
            }) < 1e-8);
}

TEST_CASE("gelu gradient matches central differences") {
    auto x0 = seeded_tensor<double>({3, 4}, 61, Dist::Normal);
    REQUIRE(check_through_tape(x0, [&](Tape<double>& t, auto vx) { return t.gelu(vx); }) < 1e-9);
}

TEST_CASE("linear gradients for input, weight and bias") {
    auto x0 = seeded_tensor<double>({5, 3}, 71, Dist::Normal);
    auto w0 = seeded_tensor<double>({3, 4}, 72, Dist::Normal);
    auto b0 = seeded_tensor<double>({4}, 73, Dist::Normal);
    REQUIRE(check_through_tape(x0, [&](Tape<double>& t, auto vx) {
                return t.linear(vx, t.constant(w0), t.constant(b0));
            }) < 1e-9);
    REQUIRE(check_through_tape(w0, [&](Tape<double>& t, auto vw) {
                return t.linear(t.constant(x0), vw, t.constant(b0));
            }) < 1e-9);
    REQUIRE(check_through_tape(b0, [&](Tape<double>& t, auto vb) {
                return t.linear(t.constant(x0), t.constant(w0), vb);
            }) < 1e-9);
}

TEST_CASE("multiconv tape op differentiates tokens and kernels") {
    const int64_t B = 1, H = 4, W = 4, C = 3;
    auto tok0 = seeded_tensor<double>({B * H * W, C}, 81, Dist::Normal);
    auto set = seeded_kernel_set<double>(C, C, 82, 0.4);
    auto r = seeded_tensor<double>({B * H * W, C}, 83, Dist::Uniform);

    REQUIRE(check_through_tape(tok0, [&](Tape<double>& t, auto vx) {
                auto y = t.multiconv(vx, t.constant(set.k1), t.constant(set.k3),
                                     t.constant(set.k5), B, H, W);
                return t.mul(y, t.constant(r));
            }) < 1e-8);

    REQUIRE(check_through_tape(set.k3, [&](Tape<double>& t, auto vk3) {
                auto y = t.multiconv(t.constant(tok0), t.constant(set.k1), vk3,
                                     t.constant(set.k5), B, H, W);
                return t.mul(y, t.constant(r));
            }) < 1e-8);

    REQUIRE(check_through_tape(set.k5, [&](Tape<double>& t, auto vk5) {
                auto y = t.multiconv(t.constant(tok0), t.constant(set.k1), t.constant(set.k3),
                                     vk5, B, H, W);
                return t.mul(y, t.constant(r));
            }) < 1e-8);
}

TEST_CASE("index_rows selects values and scatter-adds its adjoint") {
    Tape<double> t;
    auto x = t.input(Tensor<double>({3, 2}, {1, 2, 3, 4, 5, 6}), true);
    auto y = t.index_rows(x, {2, 0, 2});
    REQUIRE(t.value(y).shape() == Shape{3, 2});
    REQUIRE(t.value(y)[0] == 5.0);
    REQUIRE(t.value(y)[2] == 1.0);
    t.backward(y, Tensor<double>({3, 2}, {1, 1, 1, 1, 1, 1}));
    auto g = t.grad(x);
    REQUIRE(g.at(0, 0) == 1.0);  // picked once
    REQUIRE(g.at(1, 0) == 0.0);  // never picked
    REQUIRE(g.at(2, 0) == 2.0);  // picked twice
}

TEST_CASE("a permutation and its inverse round-trip values and gradients") {
    auto x0 = seeded_tensor<double>({6, 3}, 91, Dist::Normal);
    std::vector<int64_t> perm{3, 1, 4, 0, 5, 2};
    std::vector<int64_t> inv(perm.size());
    for (size_t i = 0; i < perm.size(); ++i) inv[static_cast<size_t>(perm[i])] = static_cast<int64_t>(i);

    Tape<double> t;
    auto x = t.input(x0, true);
    auto back = t.index_rows(t.index_rows(x, perm), inv);
    REQUIRE(max_abs_diff(t.value(back), x0) == 0.0);
    auto seed = seeded_tensor<double>({6, 3}, 92, Dist::Normal);
    t.backward(back, seed);
    REQUIRE(max_abs_diff(t.grad(x), seed) == 0.0);
}

TEST_CASE("concat_rows splits its gradient at the seam") {
    Tape<double> t;
    auto a = t.input(Tensor<double>({2, 2}, {1, 2, 3, 4}), true);
    auto b = t.input(Tensor<double>({1, 2}, {5, 6}), true);
    auto y = t.concat_rows(a, b);
    REQUIRE(t.value(y).shape() == Shape{3, 2});
    t.backward(y, Tensor<double>({3, 2}, {1, 2, 3, 4, 5, 6}));
    REQUIRE(t.grad(a).at(1, 1) == 4.0);
    REQUIRE(t.grad(b).at(0, 0) == 5.0);
}

TEST_CASE("reshape is transparent to gradients") {
    auto x0 = seeded_tensor<double>({2, 6}, 95, Dist::Normal);
    REQUIRE(check_through_tape(x0, [&](Tape<double>& t, auto vx) {
                auto r = t.reshape(vx, {4, 3});
                return t.gelu(r);
            }) < 1e-9);
}

TEST_CASE("two-layer MLP composite gradient survives the chain rule") {
    auto x0 = seeded_tensor<double>({3, 4}, 101, Dist::Normal);
    auto w1 = seeded_tensor<double>({4, 8}, 102, Dist::Normal);
    auto b1 = seeded_tensor<double>({8}, 103, Dist::Normal);
    auto w2 = seeded_tensor<double>({8, 2}, 104, Dist::Normal);
    REQUIRE(check_through_tape(x0, [&](Tape<double>& t, auto vx) {
                auto h = t.gelu(t.linear(vx, t.constant(w1), t.constant(b1)));
                return t.linear(h, t.constant(w2));
            }) < 1e-8);
}

TEST_CASE("constants block gradient flow") {
    Tape<double> t;
    auto x = t.constant(Tensor<double>({2}, {1, 2}));
    auto y = t.scale(x, 2.0);
    REQUIRE_FALSE(t.requires_grad(y));
    t.backward(y, Tensor<double>({2}, {1, 1}));
    REQUIRE(t.grad(x).numel() == 2);
    REQUIRE(t.grad(x)[0] == 0.0);  // zero: nothing flowed
}

TEST_CASE("tape rejects malformed programs by name") {
    Tape<double> t;
    auto a = t.input(Tensor<double>({2, 3}), true);
    auto b = t.input(Tensor<double>({3, 2}), true);
    REQUIRE_THROWS_AS(t.add(a, b), ShapeError);
    REQUIRE_THROWS_AS(t.matmul(a, a), ShapeError);
    REQUIRE_THROWS_AS(t.index_rows(a, {5}), ShapeError);
    REQUIRE_THROWS_AS(t.backward(a, Tensor<double>({1}, {1.0})), ShapeError);
    REQUIRE_THROWS_AS(t.value(99), TapeError);
    REQUIRE_THROWS_AS(t.value(-7), TapeError);
}

TEST_CASE("tape: column slicing and concatenation round-trip with exact adjoints") {
    auto x0 = seeded_tensor<double>({4, 6}, 901, Dist::Normal);

    // Values: slice picks the right columns; concat of the two slices
    // restores the input bitwise.
    Tape<double> t;
    auto x = t.input(x0, true);
    auto left = t.slice_cols(x, 0, 2);
    auto right = t.slice_cols(x, 2, 4);
    auto glued = t.concat_cols(left, right);
    REQUIRE(max_abs_diff(t.value(glued), x0) == 0.0);
    REQUIRE(t.value(left).shape() == Shape({4, 2}));
    REQUIRE(t.value(right).at(0, 0) == x0.at(0, 2));

    CHECK_THROWS_AS(t.slice_cols(x, 5, 2), ShapeError);
    CHECK_THROWS_AS(t.slice_cols(x, 0, 0), ShapeError);
    CHECK_THROWS_AS(t.concat_cols(x, t.constant(Tensor<double>({3, 2}))), ShapeError);

    // Gradients through slice, concat and a mixing matmul.
    REQUIRE(check_through_tape(x0, [&](Tape<double>& tp, auto vx) {
                auto a = tp.slice_cols(vx, 1, 3);
                auto b = tp.slice_cols(vx, 3, 3);
                auto c = tp.concat_cols(a, tp.gelu(b));
                return tp.matmul(c, c, true, false);
            }) < 1e-8);
}

TEST_CASE("tape: repeat_rows broadcasts and sums per-copy gradients") {
    auto p0 = seeded_tensor<double>({3, 2}, 902, Dist::Normal);

    Tape<double> t;
    auto p = t.input(p0, true);
    auto tiled = t.repeat_rows(p, 4);
    REQUIRE(t.value(tiled).shape() == Shape({12, 2}));
    REQUIRE(t.value(tiled).at(7, 1) == p0.at(1, 1));
    t.backward(t.mean_all(tiled), Tensor<double>({1}, {1.0}));
    // Each element appears 4 times among 24; d mean / d p = 4/24.
    for (int64_t i = 0; i < p0.numel(); ++i)
        REQUIRE(t.grad(p)[i] == Catch::Approx(4.0 / 24.0).epsilon(1e-15));

    REQUIRE(check_through_tape(p0, [&](Tape<double>& tp, auto vp) {
                auto tiles = tp.repeat_rows(vp, 3);
                return tp.mul(tiles, tiles);
            }) < 1e-9);
}
