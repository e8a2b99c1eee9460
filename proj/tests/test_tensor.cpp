#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "gradcheck.hpp"
#include "ipldm/adam.hpp"
#include "ipldm/conv.hpp"
#include "ipldm/ops.hpp"

using namespace ipldm;

namespace {

// Direct sliding-window convolution, the independent oracle for conv2d.
template <typename T>
std::vector<T> conv_oracle(const TensorT<T>& x, const TensorT<T>& k, int stride, int pad) {
    int64_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
    int64_t cout = k.dim(0), kh = k.dim(2), kw = k.dim(3);
    int64_t ho = (h + 2 * pad - kh) / stride + 1;
    int64_t wo = (w + 2 * pad - kw) / stride + 1;
    std::vector<T> out(static_cast<std::size_t>(n * cout * ho * wo), T(0));
    for (int64_t s = 0; s < n; ++s)
        for (int64_t oc = 0; oc < cout; ++oc)
            for (int64_t oy = 0; oy < ho; ++oy)
                for (int64_t ox = 0; ox < wo; ++ox) {
                    double acc = 0.0;
                    for (int64_t ic = 0; ic < cin; ++ic)
                        for (int64_t i = 0; i < kh; ++i)
                            for (int64_t j = 0; j < kw; ++j) {
                                int64_t y = oy * stride - pad + i;
                                int64_t xx = ox * stride - pad + j;
                                if (y < 0 || y >= h || xx < 0 || xx >= w) continue;
                                acc += static_cast<double>(
                                           x.data()[((s * cin + ic) * h + y) * w + xx]) *
                                       static_cast<double>(
                                           k.data()[((oc * cin + ic) * kh + i) * kw + j]);
                            }
                    out[static_cast<std::size_t>(((s * cout + oc) * ho + oy) * wo + ox)] =
                        static_cast<T>(acc);
                }
    return out;
}

}  // namespace

TEST_CASE("conv2d identity kernel reproduces the input") {
    Rng rng(7);
    auto x = Tensor::randn({1, 1, 3, 3}, rng);
    auto k = Tensor::full({1, 1, 1, 1}, 1.0f);
    auto y = conv2d(x, k, 1, 0);
    REQUIRE(y.shape() == Shape{1, 1, 3, 3});
    for (int64_t i = 0; i < 9; ++i) CHECK(y.data()[i] == doctest::Approx(x.data()[i]));
}

TEST_CASE("conv2d zero kernel gives zero output") {
    Rng rng(8);
    auto x = Tensor::randn({2, 3, 5, 4}, rng);
    auto k = Tensor::zeros({2, 3, 3, 3});
    auto y = conv2d(x, k, 1, 1);
    for (int64_t i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == 0.0f);
}

TEST_CASE("conv2d ramp input with averaging kernel matches the brute-force oracle") {
    std::vector<float> ramp(16);
    for (int i = 0; i < 16; ++i) ramp[static_cast<std::size_t>(i)] = static_cast<float>(i);
    auto x = Tensor::from({1, 1, 4, 4}, ramp);
    auto k = Tensor::full({1, 1, 3, 3}, 1.0f / 9.0f);
    auto y = conv2d(x, k, 1, 0);
    auto expect = conv_oracle(x, k, 1, 0);
    REQUIRE(y.numel() == static_cast<int64_t>(expect.size()));
    for (int64_t i = 0; i < y.numel(); ++i)
        CHECK(y.data()[i] == doctest::Approx(expect[static_cast<std::size_t>(i)]).epsilon(1e-6));
}

TEST_CASE("conv2d random cases match the oracle, including stride and padding") {
    Rng rng(9);
    for (auto [stride, pad] : std::vector<std::pair<int, int>>{{1, 0}, {1, 1}, {2, 1}, {2, 0}}) {
        auto x = Tensor::randn({2, 3, 8, 7}, rng);
        auto k = Tensor::randn({4, 3, 3, 3}, rng);
        auto y = conv2d(x, k, stride, pad);
        auto expect = conv_oracle(x, k, stride, pad);
        for (int64_t i = 0; i < y.numel(); ++i)
            CHECK(y.data()[i] ==
                  doctest::Approx(expect[static_cast<std::size_t>(i)]).epsilon(1e-4));
    }
}

TEST_CASE("conv2d rejects channel mismatch and oversized kernels") {
    Rng rng(10);
    auto x = Tensor::randn({1, 2, 4, 4}, rng);
    CHECK_THROWS_AS(conv2d(x, Tensor::randn({1, 3, 3, 3}, rng), 1, 0), DimError);
    CHECK_THROWS_AS(conv2d(x, Tensor::randn({1, 2, 5, 5}, rng), 1, 0), DimError);
}

TEST_CASE("conv2d circular padding wraps around") {
    // Single-pixel impulse; with circular padding the 3x3 sum sees the wrap.
    auto x = Tensor::zeros({1, 1, 4, 4});
    x.data()[0] = 1.0f;  // top-left corner
    auto k = Tensor::full({1, 1, 3, 3}, 1.0f);
    auto y = conv2d(x, k, Tensor{}, 1, 1, PadMode::Circular);
    // Output at the opposite corner picks up the wrapped impulse.
    CHECK(y.data()[3 * 4 + 3] == doctest::Approx(1.0f));
    CHECK(y.data()[0] == doctest::Approx(1.0f));
}

TEST_CASE("attention with a single key returns V rows verbatim") {
    Rng rng(11);
    auto q = Tensor::randn({3, 4}, rng);
    auto k = Tensor::randn({1, 4}, rng);
    auto v = Tensor::randn({1, 4}, rng);
    auto y = attention(q, k, v);
    for (int64_t r = 0; r < 3; ++r)
        for (int64_t c = 0; c < 4; ++c)
            CHECK(y.data()[r * 4 + c] == doctest::Approx(v.data()[c]));
}

TEST_CASE("attention with zero queries averages V rows") {
    Rng rng(12);
    auto q = Tensor::zeros({2, 3});
    auto k = Tensor::randn({5, 3}, rng);
    auto v = Tensor::randn({5, 3}, rng);
    auto y = attention(q, k, v);
    for (int64_t c = 0; c < 3; ++c) {
        float m = 0.0f;
        for (int64_t r = 0; r < 5; ++r) m += v.data()[r * 3 + c];
        m /= 5.0f;
        CHECK(y.data()[c] == doctest::Approx(m).epsilon(1e-5));
        CHECK(y.data()[3 + c] == doctest::Approx(m).epsilon(1e-5));
    }
}

TEST_CASE("attention 2x2 case matches a hand evaluation") {
    auto q = Tensor::from({2, 2}, {1.0f, 0.0f, 0.0f, 1.0f});
    auto k = Tensor::from({2, 2}, {1.0f, 1.0f, -1.0f, 0.0f});
    auto v = Tensor::from({2, 2}, {2.0f, 0.0f, 0.0f, 4.0f});
    auto y = attention(q, k, v);
    // Independent scalar evaluation of softmax(QK^T/sqrt(2)) V.
    double s = 1.0 / std::sqrt(2.0);
    double logits[2][2] = {{1 * s, -1 * s}, {1 * s, 0 * s}};
    for (int r = 0; r < 2; ++r) {
        double e0 = std::exp(logits[r][0]), e1 = std::exp(logits[r][1]);
        double w0 = e0 / (e0 + e1), w1 = e1 / (e0 + e1);
        double out0 = w0 * 2.0 + w1 * 0.0;
        double out1 = w0 * 0.0 + w1 * 4.0;
        CHECK(y.data()[r * 2 + 0] == doctest::Approx(out0).epsilon(1e-6));
        CHECK(y.data()[r * 2 + 1] == doctest::Approx(out1).epsilon(1e-6));
    }
}

TEST_CASE("attention weights sum to one and outputs stay in the hull of V") {
    Rng rng(13);
    for (int trial = 0; trial < 20; ++trial) {
        auto q = Tensor::randn({4, 6}, rng);
        auto k = Tensor::randn({5, 6}, rng);
        auto v = Tensor::randn({5, 6}, rng);
        auto scores = mul_scalar(matmul(q, transpose2d(k)), 1.0f / std::sqrt(6.0f));
        auto w = softmax_rows(scores);
        for (int64_t r = 0; r < 4; ++r) {
            float srow = 0.0f;
            for (int64_t c = 0; c < 5; ++c) srow += w.data()[r * 5 + c];
            CHECK(std::abs(srow - 1.0f) < 1e-6f);
        }
        auto y = attention(q, k, v);
        for (int64_t c = 0; c < 6; ++c) {
            float lo = v.data()[c], hi = v.data()[c];
            for (int64_t r = 1; r < 5; ++r) {
                lo = std::min(lo, v.data()[r * 6 + c]);
                hi = std::max(hi, v.data()[r * 6 + c]);
            }
            for (int64_t r = 0; r < 4; ++r) {
                CHECK(y.data()[r * 6 + c] >= lo - 1e-5f);
                CHECK(y.data()[r * 6 + c] <= hi + 1e-5f);
            }
        }
    }
}

TEST_CASE("attention rejects zero feature dimension") {
    auto q = Tensor::zeros({2, 0});
    auto k = Tensor::zeros({2, 0});
    auto v = Tensor::zeros({2, 0});
    CHECK_THROWS_AS(attention(q, k, v), DimError);
}

TEST_CASE("relu clamps negatives") {
    auto x = Tensor::from({3}, {-1.0f, 0.0f, 2.0f});
    auto y = relu(x);
    CHECK(y.data()[0] == 0.0f);
    CHECK(y.data()[1] == 0.0f);
    CHECK(y.data()[2] == 2.0f);
}

TEST_CASE("instance norm maps a constant channel to zeros before affine") {
    auto x = Tensor::full({1, 1, 4, 4}, 3.7f);
    auto gamma = Tensor::full({1}, 1.0f);
    auto beta = Tensor::zeros({1});
    auto y = instance_norm(x, gamma, beta);
    for (int64_t i = 0; i < y.numel(); ++i) CHECK(std::abs(y.data()[i]) < 1e-4f);
}

TEST_CASE("group norm output has mean 0 and variance 1 per group") {
    Rng rng(14);
    auto x = Tensor::randn({2, 8, 5, 5}, rng, 2.5f);
    auto gamma = Tensor::full({8}, 1.0f);
    auto beta = Tensor::zeros({8});
    auto y = group_norm(x, 4, gamma, beta);
    int64_t plane = 25, cg = 2, m = cg * plane;
    for (int64_t n = 0; n < 2; ++n)
        for (int64_t g = 0; g < 4; ++g) {
            double mu = 0.0, var = 0.0;
            int64_t off = (n * 4 + g) * m;
            for (int64_t j = 0; j < m; ++j) mu += y.data()[off + j];
            mu /= static_cast<double>(m);
            for (int64_t j = 0; j < m; ++j) {
                double d = y.data()[off + j] - mu;
                var += d * d;
            }
            var /= static_cast<double>(m);
            CHECK(std::abs(mu) < 1e-4);
            CHECK(std::abs(var - 1.0) < 1e-3);
        }
}

TEST_CASE("backward of sum of squares") {
    auto x = Tensor::from({1}, {3.0f});
    x.set_requires_grad();
    auto loss = sum(square(x));
    backward(loss);
    CHECK(x.grad_data()[0] == doctest::Approx(6.0f));
}

TEST_CASE("backward leaves untouched parameters with zero gradient") {
    auto x = Tensor::from({2}, {1.0f, 2.0f});
    auto p = Tensor::from({2}, {5.0f, 5.0f});
    x.set_requires_grad();
    p.set_requires_grad();
    p.ensure_grad();
    auto loss = sum(square(x));
    backward(loss);
    CHECK(p.grad_data()[0] == 0.0f);
    CHECK(p.grad_data()[1] == 0.0f);
}

TEST_CASE("backward accumulates across calls until zero_grad") {
    auto x = Tensor::from({1}, {2.0f});
    x.set_requires_grad();
    backward(sum(square(x)));
    backward(sum(square(x)));
    CHECK(x.grad_data()[0] == doctest::Approx(8.0f));
    x.zero_grad();
    backward(sum(square(x)));
    CHECK(x.grad_data()[0] == doctest::Approx(4.0f));
}

TEST_CASE("backward rejects non-scalar losses") {
    auto x = Tensor::from({2}, {1.0f, 2.0f});
    x.set_requires_grad();
    auto y = square(x);
    CHECK_THROWS_AS(backward(y), ContractError);
}

// Finite-difference sweep across every exported differentiable op, float64
// verification mode (h = 1e-5, rel err < 1e-4).
TEST_CASE("gradients match central finite differences in float64 mode") {
    using T64 = Tensor64;
    Rng rng(100);
    const double h = 1e-5, tol = 1e-4;

    auto rnd = [&](Shape s) { return T64::randn(std::move(s), rng); };
    // Keep values away from relu/l1 kinks.
    auto rnd_off = [&](Shape s) {
        auto t = T64::randn(std::move(s), rng);
        for (int64_t i = 0; i < t.numel(); ++i)
            if (std::abs(t.data()[i]) < 0.1) t.data()[i] += (t.data()[i] >= 0 ? 0.2 : -0.2);
        return t;
    };

    auto run = [&](const char* name,
                   std::function<TensorT<double>(std::vector<TensorT<double>>&)> fn,
                   std::vector<TensorT<double>> inputs) {
        auto res = gradcheck<double>(fn, std::move(inputs), h, tol);
        INFO(name << ": " << res.detail);
        CHECK(res.ok);
    };

    for (int rep = 0; rep < 5; ++rep) {
        int64_t n = 1 + rng.uniform_int(1, 2);
        int64_t c = 1 + rng.uniform_int(0, 2);
        int64_t hh = 4 + rng.uniform_int(0, 3);
        int64_t ww = 4 + rng.uniform_int(0, 3);

        run("add+mul", [](auto& in) { return sum(mul(add(in[0], in[1]), in[1])); },
            {rnd({3, 4}), rnd({3, 4})});
        run("div", [](auto& in) { return sum(div(in[0], in[1])); },
            {rnd({6}), rnd_off({6})});
        run("square+sqrt", [](auto& in) { return sum(sqrt(add_scalar(square(in[0]), 1.0))); },
            {rnd({5})});
        run("relu", [](auto& in) { return sum(relu(in[0])); }, {rnd_off({2, 7})});
        run("silu", [](auto& in) { return sum(silu(in[0])); }, {rnd({2, 7})});
        run("clamp01",
            [](auto& in) { return sum(clamp01(in[0])); },
            {[&] {
                auto t = rnd({9});
                for (int64_t i = 0; i < t.numel(); ++i)
                    t.data()[i] = 0.15 + 0.7 * std::abs(std::sin(static_cast<double>(i + rep)));
                return t;
            }()});
        run("matmul", [](auto& in) { return sum(matmul(in[0], in[1])); },
            {rnd({3, 4}), rnd({4, 2})});
        run("transpose", [](auto& in) { return sum(square(transpose2d(in[0]))); },
            {rnd({3, 5})});
        run("linear", [](auto& in) { return sum(square(linear(in[0], in[1], in[2]))); },
            {rnd({3, 4}), rnd({2, 4}), rnd({2})});
        run("softmax", [](auto& in) { return sum(square(softmax_rows(in[0]))); },
            {rnd({3, 5})});
        run("attention",
            [](auto& in) { return sum(square(attention(in[0], in[1], in[2]))); },
            {rnd({3, 4}), rnd({2, 4}), rnd({2, 4})});
        run("conv2d",
            [](auto& in) { return sum(square(conv2d(in[0], in[1], in[2], 2, 1))); },
            {rnd({n, c, hh, ww}), rnd({2, c, 3, 3}), rnd({2})});
        run("conv2d_circular",
            [](auto& in) {
                return sum(square(conv2d(in[0], in[1], TensorT<double>{}, 1, 1,
                                         PadMode::Circular)));
            },
            {rnd({1, c, hh, ww}), rnd({2, c, 3, 3})});
        run("group_norm",
            [](auto& in) { return sum(square(group_norm(in[0], 2, in[1], in[2]))); },
            {rnd({2, 4, 3, 3}), rnd({4}), rnd({4})});
        run("instance_norm_2d",
            [](auto& in) { return sum(square(instance_norm(in[0], in[1], in[2]))); },
            {rnd({3, 6}), rnd({6}), rnd({6})});
        run("upsample", [](auto& in) { return sum(square(upsample_nearest2(in[0]))); },
            {rnd({1, 2, 3, 3})});
        run("avg_pool", [](auto& in) { return sum(square(avg_pool2d(in[0], 2))); },
            {rnd({1, 2, 4, 4})});
        run("concat_channels",
            [](auto& in) { return sum(square(concat_channels(in[0], in[1]))); },
            {rnd({2, 2, 3, 3}), rnd({2, 3, 3, 3})});
        run("add_spatial", [](auto& in) { return sum(square(add_spatial(in[0], in[1]))); },
            {rnd({2, 3, 4, 4}), rnd({2, 3})});
        run("diff_h+diff_v",
            [](auto& in) { return add(sum(square(diff_h(in[0]))), sum(square(diff_v(in[0])))); },
            {rnd({1, 2, 4, 5})});
        run("mse", [](auto& in) { return mse_loss(in[0], in[1]); }, {rnd({7}), rnd({7})});
        run("l1", [](auto& in) { return l1_loss(in[0], in[1]); },
            {rnd_off({7}), TensorT<double>::zeros({7})});
        run("sum_rows", [](auto& in) { return sum(square(sum_rows(in[0]))); }, {rnd({3, 4})});
        run("standardize_cols",
            [](auto& in) { return sum(square(standardize_cols(in[0]))); }, {rnd({4, 3})});
        run("reshape+select+stack",
            [](auto& in) {
                auto r = reshape(in[0], {4, 6});
                auto s0 = select_batch(r, 1);
                auto s1 = select_batch(r, 3);
                return sum(square(stack_batch<double>({s0, s1})));
            },
            {rnd({2, 2, 2, 3})});
    }
}

TEST_CASE("float32 gradients pass the looser finite-difference check") {
    Rng rng(200);
    auto x = Tensor::randn({2, 3, 6, 6}, rng);
    auto k = Tensor::randn({4, 3, 3, 3}, rng);
    auto b = Tensor::zeros({4});
    auto res = gradcheck<float>(
        [](std::vector<Tensor>& in) {
            return mean(square(conv2d(in[0], in[1], in[2], 1, 1)));
        },
        {x, k, b}, 1e-3f, 1e-2f);
    INFO(res.detail);
    CHECK(res.ok);
}

TEST_CASE("adam leaves parameters unchanged under zero gradients") {
    auto p = Tensor::from({3}, {1.0f, -2.0f, 0.5f});
    p.set_requires_grad();
    p.ensure_grad();
    Adam opt({p});
    opt.step();
    CHECK(p.data()[0] == 1.0f);
    CHECK(p.data()[1] == -2.0f);
    CHECK(p.data()[2] == 0.5f);
}

TEST_CASE("adam first step moves by ~lr against the gradient sign") {
    auto p = Tensor::from({2}, {1.0f, 1.0f});
    p.set_requires_grad();
    p.ensure_grad();
    p.grad_data()[0] = 0.3f;
    p.grad_data()[1] = -2.0f;
    AdamConfig cfg;
    cfg.lr = 1e-2;
    Adam opt({p}, cfg);
    opt.step();
    // Bias-corrected first step: delta = -lr * g / (|g| + eps) ~ -lr*sign(g).
    CHECK(p.data()[0] == doctest::Approx(1.0f - 0.01f).epsilon(1e-4));
    CHECK(p.data()[1] == doctest::Approx(1.0f + 0.01f).epsilon(1e-4));
}

TEST_CASE("adam two steps with constant gradient match the scalar recurrence") {
    const double lr = 1e-3, b1 = 0.9, b2 = 0.999, eps = 1e-8, g = 0.7;
    auto p = Tensor::from({1}, {0.25f});
    p.set_requires_grad();
    p.ensure_grad();
    AdamConfig cfg;
    cfg.lr = lr;
    Adam opt({p}, cfg);

    double ref = 0.25, m = 0.0, v = 0.0;
    for (int t = 1; t <= 2; ++t) {
        p.zero_grad();
        p.grad_data()[0] = static_cast<float>(g);
        opt.step();
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        double mhat = m / (1 - std::pow(b1, t));
        double vhat = v / (1 - std::pow(b2, t));
        ref -= lr * mhat / (std::sqrt(vhat) + eps);
    }
    CHECK(std::abs(static_cast<double>(p.data()[0]) - ref) < 1e-7);
    CHECK(opt.step_count() == 2);
}

TEST_CASE("adam rejects missing gradients") {
    auto p = Tensor::from({2}, {1.0f, 2.0f});
    p.set_requires_grad();
    Adam opt({p});
    CHECK_THROWS_AS(opt.step(), ContractError);
}

TEST_CASE("forward and backward are bit-deterministic for a fixed seed") {
    auto run = [](uint64_t seed) {
        Rng rng(seed);
        auto x = Tensor::randn({4, 3, 8, 8}, rng);
        auto k = Tensor::randn({6, 3, 3, 3}, rng);
        auto b = Tensor::randn({6}, rng);
        k.set_requires_grad();
        b.set_requires_grad();
        auto y = conv2d(x, k, b, 1, 1);
        auto g = Tensor::full({6}, 1.0f);
        auto gm = Tensor::zeros({6});
        auto loss = mse_loss(group_norm(y, 2, g, gm), Tensor::zeros(y.shape()));
        backward(loss);
        std::vector<float> out;
        out.push_back(loss.item());
        out.insert(out.end(), k.grad_data(), k.grad_data() + k.numel());
        out.insert(out.end(), b.grad_data(), b.grad_data() + b.numel());
        return out;
    };
    auto a = run(42), b = run(42);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}
