#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "swinseg/ops.hpp"
#include "swinseg/rng.hpp"
#include "testutil.hpp"

using namespace swinseg;
namespace tu = testutil;

// ---------------------------------------------------------------------------
// Tensor and graph plumbing
// ---------------------------------------------------------------------------

TEST_CASE("tensor: construction and shape checks") {
    auto t = make_tensor<float>({2, 3, 4});
    CHECK(t->numel() == 24);
    CHECK(t->shape == Shape{2, 3, 4});
    CHECK_FALSE(t->requires_grad);

    CHECK_THROWS_AS(make_tensor<float>({2, 2}, std::vector<float>{1, 2, 3}), DimError);
    CHECK(shape_str(Shape{2, 3}) == "(2, 3)");
    CHECK(shape_numel(Shape{}) == 1);
}

TEST_CASE("graph: backward contract") {
    Graph<double> g;
    auto a = make_tensor<double>({2, 2}, {1, 2, 3, 4}, true);
    auto b = make_tensor<double>({2, 2}, {1, 1, 1, 1});
    auto y = add(g, a, b);
    CHECK_THROWS_AS(g.backward(y), ContractError);  // non-scalar loss

    Graph<double> g2;
    auto c = make_tensor<double>({1}, std::vector<double>{3.0});  // no grad anywhere
    auto d = add_scalar(g2, c, 1.0);
    CHECK_THROWS_AS(g2.backward(d), ContractError);
}

TEST_CASE("graph: gradient accumulation across shared inputs") {
    Graph<double> g;
    auto x = make_tensor<double>({3}, {1.0, 2.0, 3.0}, true);
    auto y = add(g, x, x);  // dy/dx = 2
    auto loss = sum_all(g, y);
    g.backward(loss);
    for (int i = 0; i < 3; ++i) CHECK(x->grad[i] == doctest::Approx(2.0));
}

TEST_CASE("rng: determinism and ranges") {
    Rng a(123), b(123);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

    Rng r(7);
    for (int i = 0; i < 1000; ++i) {
        const double u = r.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        const int64_t k = r.uniform_int(17);
        CHECK(k >= 0);
        CHECK(k < 17);
    }
    for (int i = 0; i < 1000; ++i) CHECK(std::fabs(r.trunc_normal(0.02)) <= 0.04 + 1e-12);

    CHECK(Rng::mix(1, 2) != Rng::mix(2, 1));
    CHECK(Rng::mix(0, 0) != Rng::mix(0, 1));
}

TEST_CASE("rng: moments are sane") {
    Rng r(99);
    double s = 0, s2 = 0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const double z = r.normal();
        s += z;
        s2 += z * z;
    }
    CHECK(std::fabs(s / n) < 0.05);
    CHECK(std::fabs(s2 / n - 1.0) < 0.05);
}

// ---------------------------------------------------------------------------
// Forward-value sanity
// ---------------------------------------------------------------------------

TEST_CASE("forward: softmax rows normalize") {
    Graph<double> g(false);
    Rng rng(1);
    auto x = tu::rand_leaf(rng, {4, 7}, -3, 3, false);
    auto y = softmax(g, x);
    for (int r = 0; r < 4; ++r) {
        double s = 0;
        for (int j = 0; j < 7; ++j) s += y->data[r * 7 + j];
        CHECK(s == doctest::Approx(1.0));
    }
}

TEST_CASE("forward: layer_norm standardizes rows") {
    Graph<double> g(false);
    Rng rng(2);
    auto x = tu::rand_leaf(rng, {5, 16}, -2, 5, false);
    auto gamma = full_like_shape<double>({16}, 1.0);
    auto beta = make_tensor<double>({16});
    auto y = layer_norm(g, x, gamma, beta);
    for (int r = 0; r < 5; ++r) {
        double mu = 0, var = 0;
        for (int j = 0; j < 16; ++j) mu += y->data[r * 16 + j];
        mu /= 16;
        for (int j = 0; j < 16; ++j) {
            const double d = y->data[r * 16 + j] - mu;
            var += d * d;
        }
        var /= 16;
        CHECK(std::fabs(mu) < 1e-9);
        CHECK(var == doctest::Approx(1.0).epsilon(1e-4));
    }
}

TEST_CASE("forward: window partition/reverse roundtrip") {
    Graph<double> g(false);
    Rng rng(3);
    for (int64_t hw : {8, 16}) {
        for (int64_t win : {2, 4, 8}) {
            auto x = tu::rand_leaf(rng, {hw, hw, 3}, -1, 1, false);
            auto wins = window_partition(g, x, win);
            CHECK(wins->shape == Shape{(hw / win) * (hw / win), win, win, 3});
            auto back = window_reverse(g, wins, win, hw, hw);
            REQUIRE(back->numel() == x->numel());
            for (int64_t i = 0; i < x->numel(); ++i) CHECK(back->data[i] == x->data[i]);
        }
    }
}

TEST_CASE("forward: roll shifts cyclically") {
    Graph<double> g(false);
    auto x = make_tensor<double>({2, 3, 1}, {0, 1, 2, 3, 4, 5});
    auto y = roll_hw(g, x, 1, 1);  // out[i][j] = x[i-1][j-1]
    // row0 of out = row1 of x rolled right: [5,3,4]; row1 = row0 rolled: [2,0,1]
    CHECK(y->data == std::vector<double>{5, 3, 4, 2, 0, 1});
    auto z = roll_hw(g, y, -1, -1);
    CHECK(z->data == x->data);
}

TEST_CASE("forward: space_to_depth2 layout") {
    Graph<double> g(false);
    // 4x4 single channel counting grid
    std::vector<double> v(16);
    for (int i = 0; i < 16; ++i) v[i] = i;
    auto x = make_tensor<double>({4, 4, 1}, std::move(v));
    auto y = space_to_depth2(g, x);
    CHECK(y->shape == Shape{2, 2, 4});
    // output (0,0): inputs (0,0),(1,0),(0,1),(1,1) = 0,4,1,5
    CHECK(y->data[0] == 0);
    CHECK(y->data[1] == 4);
    CHECK(y->data[2] == 1);
    CHECK(y->data[3] == 5);
    // output (1,1): inputs (2,2),(3,2),(2,3),(3,3) = 10,14,11,15
    CHECK(y->data[12] == 10);
    CHECK(y->data[13] == 14);
    CHECK(y->data[14] == 11);
    CHECK(y->data[15] == 15);
}

TEST_CASE("forward: conv2d matches a hand-computed example") {
    Graph<double> g(false);
    // 1x3x3 input, 1x1x2x2 kernel, stride 1, no pad
    auto x = make_tensor<double>({1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    auto w = make_tensor<double>({1, 1, 2, 2}, {1, 0, 0, 1});
    auto y = conv2d<double>(g, x, w, nullptr, 1, 0);
    CHECK(y->shape == Shape{1, 2, 2});
    CHECK(y->data == std::vector<double>{1 + 5, 2 + 6, 4 + 8, 5 + 9});
}

TEST_CASE("forward: conv_transpose2d_k2s2 scatters blocks") {
    Graph<double> g(false);
    auto x = make_tensor<double>({1, 1, 1}, std::vector<double>{2.0});
    auto w = make_tensor<double>({1, 1, 2, 2}, {1, 2, 3, 4});
    auto y = conv_transpose2d_k2s2<double>(g, x, w, nullptr);
    CHECK(y->shape == Shape{1, 2, 2});
    CHECK(y->data == std::vector<double>{2, 4, 6, 8});
}

TEST_CASE("forward: avgpool2d averages blocks") {
    Graph<double> g(false);
    auto x = make_tensor<double>({1, 2, 4}, {1, 3, 5, 7, 5, 7, 9, 11});
    auto y = avgpool2d(g, x, 2);
    CHECK(y->shape == Shape{1, 1, 2});
    CHECK(y->data == std::vector<double>{4, 8});
}

TEST_CASE("forward: bilinear_resize identity and exact midpoint") {
    Graph<double> g(false);
    auto x = make_tensor<double>({1, 2, 2}, {0, 1, 2, 3});
    auto same = bilinear_resize(g, x, 2, 2);
    CHECK(same->data == x->data);
    auto up = bilinear_resize(g, x, 4, 4);
    CHECK(up->shape == Shape{1, 4, 4});
    // center 2x2 of the upsample are the quarter-points between neighbors
    CHECK(up->data[5] == doctest::Approx(0.75));   // (1,1)
    CHECK(up->data[10] == doctest::Approx(2.25));  // (2,2)
}

TEST_CASE("forward: dim errors are reported") {
    Graph<double> g(false);
    auto a = make_tensor<double>({2, 3});
    auto b = make_tensor<double>({2, 3});
    CHECK_THROWS_AS(matmul(g, a, b), DimError);
    auto x = make_tensor<double>({3, 5, 5});
    CHECK_THROWS_AS(window_partition(g, permute(g, x, {1, 2, 0}), 3), DimError);
    auto w = make_tensor<double>({4, 2, 3, 3});
    CHECK_THROWS_AS(conv2d<double>(g, x, w, nullptr, 1, 1), DimError);
}

// ---------------------------------------------------------------------------
// Gradient checks, one per op family
// ---------------------------------------------------------------------------

TEST_CASE("grad: elementwise ops") {
    Rng rng(11);
    auto a = tu::rand_leaf(rng, {3, 4});
    auto b = tu::rand_leaf(rng, {3, 4});
    CHECK(tu::gradcheck([&](Graph<double>& g) { return tu::weighted_sum(g, add(g, a, b)); },
                        {a, b}) < 1e-3);
    CHECK(tu::gradcheck([&](Graph<double>& g) { return tu::weighted_sum(g, mul(g, a, b), 1); },
                        {a, b}) < 1e-3);
    CHECK(tu::gradcheck([&](Graph<double>& g) { return tu::weighted_sum(g, sub(g, a, b), 2); },
                        {a, b}) < 1e-3);
    CHECK(tu::gradcheck(
              [&](Graph<double>& g) { return tu::weighted_sum(g, add_scalar(g, a, 0.37), 3); },
              {a}) < 1e-3);
    CHECK(tu::gradcheck(
              [&](Graph<double>& g) { return tu::weighted_sum(g, mul_scalar(g, a, -1.7), 4); },
              {a}) < 1e-3);

    auto denom = tu::rand_leaf(rng, {3, 4}, 0.5, 1.5);
    CHECK(tu::gradcheck([&](Graph<double>& g) { return tu::weighted_sum(g, div(g, a, denom), 5); },
                        {a, denom}) < 1e-3);

    auto s = tu::rand_leaf_signed(rng, {4, 4});
    CHECK(tu::gradcheck([&](Graph<double>& g) { return tu::weighted_sum(g, abs_op(g, s), 6); },
                        {s}) < 1e-3);
}

TEST_CASE("grad: matmul and matmul chain") {
    Rng rng(12);
    auto a = tu::rand_leaf(rng, {3, 4});
    auto b = tu::rand_leaf(rng, {4, 5});
    auto c = tu::rand_leaf(rng, {5, 2});
    CHECK(tu::gradcheck([&](Graph<double>& g) { return tu::weighted_sum(g, matmul(g, a, b)); },
                        {a, b}) < 1e-3);
    // chain: (A B) C
    CHECK(tu::gradcheck(
              [&](Graph<double>& g) {
                  return tu::weighted_sum(g, matmul(g, matmul(g, a, b), c), 7);
              },
              {a, b, c}) < 1e-3);
}

TEST_CASE("grad: bmm both variants") {
    Rng rng(13);
    auto a = tu::rand_leaf(rng, {2, 3, 4});
    auto b = tu::rand_leaf(rng, {2, 4, 5});
    auto bt = tu::rand_leaf(rng, {2, 5, 4});
    CHECK(tu::gradcheck([&](Graph<double>& g) { return tu::weighted_sum(g, bmm(g, a, b)); },
                        {a, b}) < 1e-3);
    CHECK(tu::gradcheck(
              [&](Graph<double>& g) { return tu::weighted_sum(g, bmm(g, a, bt, true), 1); },
              {a, bt}) < 1e-3);
}

TEST_CASE("grad: linear and bias") {
    Rng rng(14);
    auto x = tu::rand_leaf(rng, {5, 3});
    auto w = tu::rand_leaf(rng, {3, 4});
    auto b = tu::rand_leaf(rng, {4});
    CHECK(tu::gradcheck([&](Graph<double>& g) { return tu::weighted_sum(g, linear(g, x, w, b)); },
                        {x, w, b}) < 1e-3);
}

TEST_CASE("grad: shape ops") {
    Rng rng(15);
    auto x = tu::rand_leaf(rng, {2, 3, 4});
    CHECK(tu::gradcheck(
              [&](Graph<double>& g) { return tu::weighted_sum(g, reshape(g, x, {6, 4})); },
              {x}) < 1e-3);
    CHECK(tu::gradcheck(
              [&](Graph<double>& g) { return tu::weighted_sum(g, permute(g, x, {2, 0, 1}), 1); },
              {x}) < 1e-3);
    CHECK(tu::gradcheck(
              [&](Graph<double>& g) { return tu::weighted_sum(g, slice_lastdim(g, x, 1, 2), 2); },
              {x}) < 1e-3);

    auto p = tu::rand_leaf(rng, {2, 4});
    auto q = tu::rand_leaf(rng, {3, 4});
    CHECK(tu::gradcheck(
              [&](Graph<double>& g) {
                  return tu::weighted_sum(g, concat_rows<double>(g, {p, q}), 3);
              },
              {p, q}) < 1e-3);

    auto c1 = tu::rand_leaf(rng, {2, 3, 3});
    auto c2 = tu::rand_leaf(rng, {4, 3, 3});
    CHECK(tu::gradcheck(
              [&](Graph<double>& g) {
                  return tu::weighted_sum(g, concat_channels<double>(g, {c1, c2}), 4);
              },
              {c1, c2}) < 1e-3);
}

TEST_CASE("grad: window and spatial ops") {
    Rng rng(16);
    auto x = tu::rand_leaf(rng, {8, 8, 3});
    CHECK(tu::gradcheck(
              [&](Graph<double>& g) { return tu::weighted_sum(g, window_partition(g, x, 4)); },
              {x}) < 1e-3);
    auto wins = tu::rand_leaf(rng, {4, 4, 4, 2});
    CHECK(tu::gradcheck(
              [&](Graph<double>& g) {
                  return tu::weighted_sum(g, window_reverse(g, wins, 4, 8, 8), 1);
              },
              {wins}) < 1e-3);
    CHECK(tu::gradcheck(
              [&](Graph<double>& g) { return tu::weighted_sum(g, roll_hw(g, x, -2, 3), 2); },
              {x}) < 1e-3);
    CHECK(tu::gradcheck(
              [&](Graph<double>& g) { return tu::weighted_sum(g, pad_hw(g, x, 2, 1), 3); },
              {x}) < 1e-3);
    CHECK(tu::gradcheck(
              [&](Graph<double>& g) { return tu::weighted_sum(g, crop_hw(g, x, 5, 6), 4); },
              {x}) < 1e-3);
    CHECK(tu::gradcheck(
              [&](Graph<double>& g) { return tu::weighted_sum(g, space_to_depth2(g, x), 5); },
              {x}) < 1e-3);
}

TEST_CASE("grad: conv2d variants") {
    Rng rng(17);
    auto x = tu::rand_leaf(rng, {3, 6, 6});
    auto w1 = tu::rand_leaf(rng, {4, 3, 3, 3});
    auto b1 = tu::rand_leaf(rng, {4});
    CHECK(tu::gradcheck(
              [&](Graph<double>& g) { return tu::weighted_sum(g, conv2d(g, x, w1, b1, 1, 1)); },
              {x, w1, b1}) < 1e-3);
    CHECK(tu::gradcheck(
              [&](Graph<double>& g) { return tu::weighted_sum(g, conv2d(g, x, w1, b1, 2, 1), 1); },
              {x, w1, b1}) < 1e-3);
    auto w2 = tu::rand_leaf(rng, {2, 3, 1, 1});
    CHECK(tu::gradcheck(
              [&](Graph<double>& g) {
                  return tu::weighted_sum(g, conv2d<double>(g, x, w2, nullptr, 1, 0), 2);
              },
              {x, w2}) < 1e-3);
}

TEST_CASE("grad: conv_transpose and pooling") {
    Rng rng(18);
    auto x = tu::rand_leaf(rng, {3, 4, 4});
    auto w = tu::rand_leaf(rng, {3, 2, 2, 2});
    auto b = tu::rand_leaf(rng, {2});
    CHECK(tu::gradcheck(
              [&](Graph<double>& g) {
                  return tu::weighted_sum(g, conv_transpose2d_k2s2(g, x, w, b));
              },
              {x, w, b}) < 1e-3);
    CHECK(tu::gradcheck(
              [&](Graph<double>& g) { return tu::weighted_sum(g, avgpool2d(g, x, 2), 1); },
              {x}) < 1e-3);
    CHECK(tu::gradcheck(
              [&](Graph<double>& g) { return tu::weighted_sum(g, bilinear_resize(g, x, 8, 8), 2); },
              {x}) < 1e-3);
    CHECK(tu::gradcheck(
              [&](Graph<double>& g) { return tu::weighted_sum(g, bilinear_resize(g, x, 3, 3), 3); },
              {x}) < 1e-3);
}

TEST_CASE("grad: normalizations") {
    Rng rng(19);
    auto x = tu::rand_leaf(rng, {4, 6});
    auto gamma = tu::rand_leaf(rng, {6}, 0.5, 1.5);
    auto beta = tu::rand_leaf(rng, {6}, -0.2, 0.2);
    CHECK(tu::gradcheck(
              [&](Graph<double>& g) { return tu::weighted_sum(g, layer_norm(g, x, gamma, beta)); },
              {x, gamma, beta}) < 1e-3);

    auto xc = tu::rand_leaf(rng, {6, 3, 3});
    CHECK(tu::gradcheck(
              [&](Graph<double>& g) {
                  return tu::weighted_sum(g, layer_norm_chw(g, xc, gamma, beta), 1);
              },
              {xc, gamma, beta}) < 1e-3);

    auto xb = tu::rand_leaf(rng, {3, 4, 4});
    auto bg = tu::rand_leaf(rng, {3}, 0.5, 1.5);
    auto bb = tu::rand_leaf(rng, {3}, -0.2, 0.2);
    auto rm = make_tensor<double>({3});
    auto rv = full_like_shape<double>({3}, 1.0);
    CHECK(tu::gradcheck(
              [&](Graph<double>& g) {
                  return tu::weighted_sum(g, batch_norm2d(g, xb, bg, bb, rm, rv, true), 2);
              },
              {xb, bg, bb}) < 1e-3);
    // eval mode with fixed buffers
    rm->data = {0.1, -0.2, 0.05};
    rv->data = {1.3, 0.8, 1.1};
    CHECK(tu::gradcheck(
              [&](Graph<double>& g) {
                  return tu::weighted_sum(g, batch_norm2d(g, xb, bg, bb, rm, rv, false), 3);
              },
              {xb, bg, bb}) < 1e-3);
}

TEST_CASE("grad: activations and reductions") {
    Rng rng(20);
    auto x = tu::rand_leaf(rng, {3, 5}, -2, 2);
    CHECK(tu::gradcheck([&](Graph<double>& g) { return tu::weighted_sum(g, softmax(g, x)); },
                        {x}) < 1e-3);
    CHECK(tu::gradcheck([&](Graph<double>& g) { return tu::weighted_sum(g, gelu(g, x), 1); },
                        {x}) < 1e-3);
    CHECK(tu::gradcheck([&](Graph<double>& g) { return tu::weighted_sum(g, sigmoid(g, x), 2); },
                        {x}) < 1e-3);
    CHECK(tu::gradcheck([&](Graph<double>& g) { return mean_all(g, x); }, {x}) < 1e-3);

    std::vector<double> target;
    Rng tr(21);
    for (int i = 0; i < 15; ++i) target.push_back(tr.bernoulli(0.5) ? 1.0 : 0.0);
    CHECK(tu::gradcheck([&](Graph<double>& g) { return bce_with_logits_mean(g, x, target); },
                        {x}) < 1e-3);
}

TEST_CASE("grad: attention helpers") {
    Rng rng(22);
    auto table = tu::rand_leaf(rng, {2, 9});  // 2 heads, (2*2-1)^2 entries
    auto idx = std::make_shared<std::vector<int64_t>>(std::vector<int64_t>{4, 3, 1, 0, 5, 4, 2, 1,
                                                                           7, 6, 4, 3, 8, 7, 5, 4});
    CHECK(tu::gradcheck(
              [&](Graph<double>& g) {
                  return tu::weighted_sum(g, attn_bias_gather(g, table, idx, 4));
              },
              {table}) < 1e-3);

    auto attn = tu::rand_leaf(rng, {6, 4, 4});  // 3 windows x 2 heads
    auto bias = tu::rand_leaf(rng, {2, 4, 4});
    CHECK(tu::gradcheck(
              [&](Graph<double>& g) {
                  return tu::weighted_sum(g, add_window_bias(g, attn, bias), 1);
              },
              {attn, bias}) < 1e-3);

    auto v = tu::rand_leaf(rng, {5});
    CHECK(tu::gradcheck(
              [&](Graph<double>& g) { return tu::weighted_sum(g, broadcast_vec_grid(g, v, 3), 2); },
              {v}) < 1e-3);
}

TEST_CASE("grad: composite conv -> layer_norm -> softmax -> sum") {
    Rng rng(23);
    auto x = tu::rand_leaf(rng, {2, 5, 5});
    auto w = tu::rand_leaf(rng, {3, 2, 3, 3});
    auto b = tu::rand_leaf(rng, {3});
    auto gamma = tu::rand_leaf(rng, {3}, 0.5, 1.5);
    auto beta = tu::rand_leaf(rng, {3}, -0.2, 0.2);
    auto f = [&](Graph<double>& g) {
        auto y = conv2d(g, x, w, b, 1, 1);            // (3,5,5)
        auto hwc = permute(g, y, {1, 2, 0});          // (5,5,3)
        auto n = layer_norm(g, hwc, gamma, beta);     // rows of 3
        auto sm = softmax(g, n);
        return tu::weighted_sum(g, sm, 9);
    };
    CHECK(tu::gradcheck(f, {x, w, b, gamma, beta}) < 1e-3);
}

TEST_CASE("grad: shifted window attention pattern") {
    // Mimics the windowed-attention data flow end to end: roll, partition,
    // per-window attention with a learned bias, reverse, unroll.
    Rng rng(24);
    const int64_t h = 4, w = 4, c = 4, win = 2, heads = 2, hd = c / heads;
    auto x = tu::rand_leaf(rng, {h, w, c});
    auto wq = tu::rand_leaf(rng, {c, c});
    auto table = tu::rand_leaf(rng, {heads, 9});
    auto idx = std::make_shared<std::vector<int64_t>>(std::vector<int64_t>{4, 3, 1, 0, 5, 4, 2, 1,
                                                                           7, 6, 4, 3, 8, 7, 5, 4});
    auto f = [&](Graph<double>& g) {
        auto shifted = roll_hw(g, x, -1, -1);
        auto wins = window_partition(g, shifted, win);    // (4,2,2,4)
        const int64_t nw = wins->shape[0], m = win * win;
        auto tok = reshape(g, wins, {nw * m, c});
        auto q = matmul(g, tok, wq);
        auto qh = permute(g, reshape(g, q, {nw, m, heads, hd}), {0, 2, 1, 3});
        auto qb = reshape(g, qh, {nw * heads, m, hd});
        auto attn = bmm(g, qb, qb, true);
        auto biased = add_window_bias(g, attn, attn_bias_gather(g, table, idx, m));
        auto p = softmax(g, biased);
        auto o = bmm(g, p, qb);
        auto oh = permute(g, reshape(g, o, {nw, heads, m, hd}), {0, 2, 1, 3});
        auto om = reshape(g, oh, {nw, win, win, c});
        auto back = window_reverse(g, om, win, h, w);
        auto y = roll_hw(g, back, 1, 1);
        return tu::weighted_sum(g, y, 31);
    };
    CHECK(tu::gradcheck(f, {x, wq, table}) < 1e-3);
}
