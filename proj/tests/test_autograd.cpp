// Copyright (c) 2026 gbmbench contributors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "gradcheck.hpp"

namespace {

using namespace gbmtest;
using gbmbench::grad_enabled;
using gbmbench::prof::Recorder;
using gbmbench::prof::RecordScope;

TEST(Autograd, UnaryOps) {
    Rng rng(11);
    struct Case {
        const char* name;
        std::function<Var(const Var&)> fn;
    };
    const std::vector<Case> cases = {
        {"relu", [](const Var& x) { return ops::relu(x); }},
        {"sigmoid", [](const Var& x) { return ops::sigmoid(x); }},
        {"tanh", [](const Var& x) { return ops::tanh_(x); }},
        {"gelu", [](const Var& x) { return ops::gelu(x); }},
        {"silu", [](const Var& x) { return ops::silu(x); }},
        {"softplus", [](const Var& x) { return ops::softplus(x); }},
        {"exp", [](const Var& x) { return ops::exp_(x); }},
        {"neg", [](const Var& x) { return ops::neg(x); }},
        {"scale", [](const Var& x) { return ops::scale(x, 1.7f); }},
        {"add_scalar", [](const Var& x) { return ops::add_scalar(x, 0.3f); }},
    };
    for (const auto& c : cases) {
        SCOPED_TRACE(c.name);
        check_grads([&](std::vector<Var>& v) { return c.fn(v[0]); },
                    {rand_tensor_offzero(rng, {3, 7})});
    }
}

TEST(Autograd, BinaryBroadcast) {
    Rng rng(12);
    check_grads([](std::vector<Var>& v) { return ops::add(v[0], v[1]); },
                {rand_tensor(rng, {2, 3, 4}), rand_tensor(rng, {2, 3, 4})});
    check_grads([](std::vector<Var>& v) { return ops::sub(v[0], v[1]); },
                {rand_tensor(rng, {2, 3, 4}), rand_tensor(rng, {3, 1})});
    check_grads([](std::vector<Var>& v) { return ops::mul(v[0], v[1]); },
                {rand_tensor(rng, {2, 3, 4}), rand_tensor(rng, {4})});
    check_grads([](std::vector<Var>& v) { return ops::mul(v[0], v[1]); },
                {rand_tensor(rng, {1, 3, 1}), rand_tensor(rng, {2, 3, 4})});
}

TEST(Autograd, ShapeOps) {
    Rng rng(13);
    check_grads([](std::vector<Var>& v) { return ops::reshape(v[0], {4, -1}); },
                {rand_tensor(rng, {2, 3, 4})});
    check_grads([](std::vector<Var>& v) { return ops::permute(v[0], {2, 0, 1}); },
                {rand_tensor(rng, {2, 3, 4})});
    check_grads([](std::vector<Var>& v) { return ops::slice(v[0], 1, 1, 3); },
                {rand_tensor(rng, {2, 5, 3})});
    check_grads([](std::vector<Var>& v) { return ops::concat({v[0], v[1], v[0]}, 1); },
                {rand_tensor(rng, {2, 2, 3}), rand_tensor(rng, {2, 4, 3})});
    check_grads([](std::vector<Var>& v) { return ops::flip(v[0], 1); }, {rand_tensor(rng, {2, 5, 3})});
    check_grads([](std::vector<Var>& v) { return ops::roll(v[0], 2, -2); },
                {rand_tensor(rng, {2, 3, 5})});
    check_grads([](std::vector<Var>& v) { return ops::repeat_axis0(v[0], 3); },
                {rand_tensor(rng, {1, 4, 2})});
    check_grads([](std::vector<Var>& v) { return ops::index_select(v[0], 1, {4, 0, 2, 2}); },
                {rand_tensor(rng, {2, 5, 3})});
}

TEST(Autograd, Reductions) {
    Rng rng(14);
    check_grads([](std::vector<Var>& v) { return ops::sum_axis(v[0], 1, false); },
                {rand_tensor(rng, {3, 5, 2})});
    check_grads([](std::vector<Var>& v) { return ops::sum_axis(v[0], 2, true); },
                {rand_tensor(rng, {3, 5, 2})});
    check_grads([](std::vector<Var>& v) { return ops::mean_axis(v[0], 0, false); },
                {rand_tensor(rng, {4, 3})});
}

TEST(Autograd, DenseAlgebra) {
    Rng rng(15);
    check_grads([](std::vector<Var>& v) { return ops::matmul2d(v[0], v[1]); },
                {rand_tensor(rng, {4, 3}), rand_tensor(rng, {3, 5})});
    check_grads([](std::vector<Var>& v) { return ops::linear(v[0], v[1], v[2]); },
                {rand_tensor(rng, {2, 3, 4}), rand_tensor(rng, {5, 4}), rand_tensor(rng, {5})});
    check_grads([](std::vector<Var>& v) { return ops::linear(v[0], v[1], Var()); },
                {rand_tensor(rng, {6, 4}), rand_tensor(rng, {5, 4})});
    check_grads([](std::vector<Var>& v) { return ops::bmm(v[0], v[1]); },
                {rand_tensor(rng, {3, 2, 4}), rand_tensor(rng, {3, 4, 5})});
}

TEST(Autograd, SoftmaxAndLosses) {
    Rng rng(16);
    check_grads([](std::vector<Var>& v) { return ops::softmax_lastdim(v[0]); },
                {rand_tensor(rng, {4, 5})});
    const std::vector<int64_t> labels = {2, 0, 1, 1};
    check_grads([&](std::vector<Var>& v) { return ops::cross_entropy(v[0], labels); },
                {rand_tensor(rng, {4, 3}, -2.0f, 2.0f)});
    Tensor target = rand_tensor(rng, {3, 4});
    check_grads([&](std::vector<Var>& v) { return ops::mse_loss(v[0], target); },
                {rand_tensor(rng, {3, 4})});
}

TEST(Autograd, Convolutions) {
    Rng rng(17);
    check_grads(
        [](std::vector<Var>& v) { return ops::conv3d(v[0], v[1], v[2], {1, 1, 1}, {1, 1, 1}); },
        {rand_tensor(rng, {2, 2, 4, 5, 4}), rand_tensor(rng, {3, 2, 3, 3, 3}),
         rand_tensor(rng, {3})});
    check_grads(
        [](std::vector<Var>& v) { return ops::conv3d(v[0], v[1], Var(), {2, 1, 2}, {1, 1, 1}); },
        {rand_tensor(rng, {1, 2, 5, 6, 4}), rand_tensor(rng, {3, 2, 3, 3, 3})});
    check_grads([](std::vector<Var>& v) { return ops::conv2d(v[0], v[1], v[2], {1, 1}, {1, 1}); },
                {rand_tensor(rng, {2, 3, 5, 6}), rand_tensor(rng, {4, 3, 3, 3}), rand_tensor(rng, {4})});
    check_grads([](std::vector<Var>& v) { return ops::conv2d(v[0], v[1], Var(), {2, 2}, {0, 0}); },
                {rand_tensor(rng, {2, 1, 6, 6}), rand_tensor(rng, {2, 1, 2, 2})});
    check_grads([](std::vector<Var>& v) { return ops::dwconv1d_causal(v[0], v[1], v[2]); },
                {rand_tensor(rng, {2, 6, 3}), rand_tensor(rng, {3, 4}), rand_tensor(rng, {3})});
}

TEST(Autograd, Pools) {
    Rng rng(18);
    check_grads([](std::vector<Var>& v) { return ops::maxpool3d(v[0], {2, 2, 2}, {2, 2, 2}); },
                {rand_distinct(rng, {2, 2, 4, 4, 4})});
    check_grads([](std::vector<Var>& v) { return ops::maxpool3d(v[0], {1, 2, 2}, {1, 2, 2}); },
                {rand_distinct(rng, {1, 2, 3, 4, 4})});
    check_grads([](std::vector<Var>& v) { return ops::adaptive_avg_pool3d(v[0], {3, 2, 4}); },
                {rand_tensor(rng, {2, 2, 5, 7, 6})});
    check_grads([](std::vector<Var>& v) { return ops::adaptive_avg_pool2d(v[0], {2, 2}); },
                {rand_tensor(rng, {2, 3, 5, 6})});
    check_grads([](std::vector<Var>& v) { return ops::upsample_nearest3d(v[0], 2); },
                {rand_tensor(rng, {2, 2, 2, 3, 2})});
}

TEST(Autograd, Norms) {
    Rng rng(19);
    Tensor rm({3}), rv({3});
    rm.fill(0.0f);
    rv.fill(1.0f);
    check_grads(
        [&](std::vector<Var>& v) {
            return ops::batchnorm(v[0], v[1], v[2], rm, rv, /*training=*/true);
        },
        {rand_tensor(rng, {4, 3, 2, 2, 2}), rand_tensor(rng, {3}, 0.5f, 1.5f), rand_tensor(rng, {3})});
    check_grads(
        [&](std::vector<Var>& v) {
            return ops::batchnorm(v[0], v[1], v[2], rm, rv, /*training=*/false);
        },
        {rand_tensor(rng, {4, 3, 2, 2}), rand_tensor(rng, {3}, 0.5f, 1.5f), rand_tensor(rng, {3})});
    check_grads(
        [](std::vector<Var>& v) { return ops::layernorm_lastdim(v[0], v[1], v[2]); },
        {rand_tensor(rng, {3, 4, 6}), rand_tensor(rng, {6}, 0.5f, 1.5f), rand_tensor(rng, {6})});
}

TEST(Autograd, ResizeMaskScan) {
    Rng rng(20);
    check_grads([](std::vector<Var>& v) { return ops::resize_bilinear2d(v[0], 7, 5); },
                {rand_tensor(rng, {2, 2, 4, 6})});
    check_grads([](std::vector<Var>& v) { return ops::resize_bilinear2d(v[0], 3, 3); },
                {rand_tensor(rng, {1, 1, 6, 6})});
    Tensor mask = rand_tensor(rng, {2, 3, 3});
    check_grads([&](std::vector<Var>& v) { return ops::add_window_mask(v[0], mask, 2); },
                {rand_tensor(rng, {8, 3, 3})});

    const int64_t B = 2, L = 5, D = 3, N = 4;
    Tensor u = rand_tensor(rng, {B, L, D});
    Tensor delta = rand_tensor(rng, {B, L, D}, 0.1f, 0.6f);
    Tensor A = rand_tensor(rng, {D, N}, -1.0f, -0.1f);
    Tensor Bm = rand_tensor(rng, {B, L, N});
    Tensor Cm = rand_tensor(rng, {B, L, N});
    Tensor Dm = rand_tensor(rng, {D});
    check_grads(
        [](std::vector<Var>& v) {
            return ops::selective_scan(v[0], v[1], v[2], v[3], v[4], v[5]);
        },
        {u, delta, A, Bm, Cm, Dm});
}

TEST(Autograd, ComposedNetwork) {
    // conv -> bn -> silu -> pool -> linear -> cross entropy, all grads at once.
    // silu rather than relu: normalized activations sit near zero, where a
    // relu kink would poison the central difference.
    Rng rng(21);
    Tensor rm({2}), rv({2});
    rm.fill(0.0f);
    rv.fill(1.0f);
    const std::vector<int64_t> labels = {1, 0};
    check_grads(
        [&](std::vector<Var>& v) {
            Var h = ops::conv3d(v[0], v[1], v[2], {1, 1, 1}, {1, 1, 1});
            h = ops::batchnorm(h, v[3], v[4], rm, rv, true);
            h = ops::silu(h);
            h = ops::adaptive_avg_pool3d(h, {2, 2, 2});
            h = ops::flatten_from(h, 1);
            return ops::cross_entropy(ops::linear(h, v[5], v[6]), labels);
        },
        {rand_tensor(rng, {2, 1, 4, 4, 4}), rand_tensor(rng, {2, 1, 3, 3, 3}), rand_tensor(rng, {2}),
         rand_tensor(rng, {2}, 0.5f, 1.5f), rand_tensor(rng, {2}), rand_tensor(rng, {3, 16}),
         rand_tensor(rng, {3})},
        3e-2, 4e-3);
}

TEST(Autograd, ConvMatchesNaiveOracle) {
    Rng rng(22);
    Tensor x = rand_tensor(rng, {2, 2, 5, 4, 6});
    Tensor w = rand_tensor(rng, {3, 2, 3, 2, 3});
    Tensor b = rand_tensor(rng, {3});
    const std::array<int64_t, 3> stride = {2, 1, 2}, pad = {1, 0, 1};
    Var out = ops::conv3d(Var(x), Var(w), Var(b), stride, pad);
    const int64_t oD = (5 + 2 - 3) / 2 + 1, oH = (4 + 0 - 2) / 1 + 1, oW = (6 + 2 - 3) / 2 + 1;
    ASSERT_EQ(out.shape(), (Shape{2, 3, oD, oH, oW}));
    for (int64_t n = 0; n < 2; ++n)
        for (int64_t co = 0; co < 3; ++co)
            for (int64_t od = 0; od < oD; ++od)
                for (int64_t oh = 0; oh < oH; ++oh)
                    for (int64_t ow = 0; ow < oW; ++ow) {
                        double acc = b.data()[co];
                        for (int64_t ci = 0; ci < 2; ++ci)
                            for (int64_t kz = 0; kz < 3; ++kz)
                                for (int64_t ky = 0; ky < 2; ++ky)
                                    for (int64_t kx = 0; kx < 3; ++kx) {
                                        const int64_t z = od * stride[0] - pad[0] + kz;
                                        const int64_t y = oh * stride[1] - pad[1] + ky;
                                        const int64_t xx = ow * stride[2] - pad[2] + kx;
                                        if (z < 0 || z >= 5 || y < 0 || y >= 4 || xx < 0 || xx >= 6)
                                            continue;
                                        acc += static_cast<double>(
                                                   w.data()[(((co * 2 + ci) * 3 + kz) * 2 + ky) * 3 +
                                                            kx]) *
                                               x.data()[(((n * 2 + ci) * 5 + z) * 4 + y) * 6 + xx];
                                    }
                        const float got =
                            out.val().data()[(((n * 3 + co) * oD + od) * oH + oh) * oW + ow];
                        EXPECT_NEAR(got, acc, 1e-4) << n << "," << co;
                    }
}

TEST(Autograd, SoftmaxRowsSumToOne) {
    Rng rng(23);
    Var y = ops::softmax_lastdim(Var(rand_tensor(rng, {6, 5}, -4.0f, 4.0f)));
    for (int64_t r = 0; r < 6; ++r) {
        double s = 0.0;
        for (int64_t j = 0; j < 5; ++j) s += y.val().data()[r * 5 + j];
        EXPECT_NEAR(s, 1.0, 1e-6);
    }
}

TEST(Autograd, BatchnormTracksRunningStats) {
    Rng rng(24);
    Tensor rm({2}), rv({2});
    rm.fill(0.0f);
    rv.fill(1.0f);
    Tensor x = rand_tensor(rng, {8, 2, 4}, 1.0f, 3.0f);
    Var g(Tensor({2}), false), b(Tensor({2}), false);
    g.val().fill(1.0f);
    b.val().fill(0.0f);
    ops::batchnorm(Var(x), g, b, rm, rv, true, 0.1f);
    for (int64_t c = 0; c < 2; ++c) {
        double s = 0.0, s2 = 0.0;
        for (int64_t n = 0; n < 8; ++n)
            for (int64_t i = 0; i < 4; ++i) {
                const double v = x.data()[(n * 2 + c) * 4 + i];
                s += v;
                s2 += v * v;
            }
        const double m = s / 32.0;
        const double var = (s2 / 32.0 - m * m) * 32.0 / 31.0;
        EXPECT_NEAR(rm.data()[c], 0.1 * m, 1e-5);
        EXPECT_NEAR(rv.data()[c], 0.9 + 0.1 * var, 1e-4);
    }
    // Eval mode normalizes with the running buffers, not batch stats.
    Var ye = ops::batchnorm(Var(x), g, b, rm, rv, false);
    const float expect0 =
        (x.data()[0] - rm.data()[0]) / std::sqrt(rv.data()[0] + 1e-5f);
    EXPECT_NEAR(ye.val().data()[0], expect0, 1e-5);
}

TEST(Autograd, GraphMechanics) {
    // A var consumed twice accumulates both branch gradients.
    Tensor t({2});
    t.data()[0] = 1.0f;
    t.data()[1] = 2.0f;
    Var x(t, true);
    Var y = ops::add(ops::mul(x, x), x);  // y = x^2 + x, dy/dx = 2x + 1
    Var loss = ops::sum_axis(ops::reshape(y, {1, 2}), 1);
    loss.backward();
    EXPECT_FLOAT_EQ(x.grad().data()[0], 3.0f);
    EXPECT_FLOAT_EQ(x.grad().data()[1], 5.0f);

    // NoGrad suppresses graph construction entirely.
    {
        NoGrad ng;
        EXPECT_FALSE(grad_enabled());
        Var z = ops::mul(x, x);
        EXPECT_FALSE(z.requires_grad());
    }
    EXPECT_TRUE(grad_enabled());

    // Backward from a non-scalar root is an error.
    Var v(Tensor({3}), true);
    v.val().fill(1.0f);
    EXPECT_THROW(ops::relu(v).backward(), gbmbench::Error);
}

TEST(Autograd, DryModePropagatesShapesAndMacs) {
    Recorder rec;
    {
        RecordScope scope(rec);
        Var x(Tensor::dry({2, 1, 8, 8, 8}), false);
        Var w(Tensor::dry({4, 1, 3, 3, 3}), false);
        Var h = ops::conv3d(x, w, Var(), {1, 1, 1}, {1, 1, 1});
        ASSERT_EQ(h.shape(), (Shape{2, 4, 8, 8, 8}));
        ASSERT_TRUE(h.is_dry());
        Var p = ops::adaptive_avg_pool3d(h, {2, 2, 2});
        Var f = ops::flatten_from(p, 1);
        Var wl(Tensor::dry({3, 32}), false);
        Var o = ops::linear(f, wl, Var());
        ASSERT_EQ(o.shape(), (Shape{2, 3}));
    }
    // conv: N*Cout*P*K = 2*4*512*27; linear: rows*din*dout = 2*32*3.
    const double expect = 2.0 * 4 * 512 * 27 + 2.0 * 32 * 3;
    EXPECT_DOUBLE_EQ(rec.total_macs(), expect);
    EXPECT_DOUBLE_EQ(rec.total_flops(), 2.0 * expect);
    EXPECT_TRUE(rec.uncounted().empty());
}

}  // namespace
