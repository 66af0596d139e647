#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "cascade/adam.hpp"
#include "cascade/grad_check.hpp"
#include "cascade/ops.hpp"
#include "cascade/rng.hpp"
#include "support/op_checks.hpp"
#include "support/oracles.hpp"

using namespace cascade;

namespace {

Tensor<double> tensor4(Shape shape, std::initializer_list<double> vals) {
    return Tensor<double>(std::move(shape), std::vector<double>(vals));
}

}  // namespace

TEST_CASE("tensor shape and gradient invariants") {
    Tensor<double> t(Shape{2, 3});
    CHECK(t.size() == 6);
    CHECK_THROWS_AS(Tensor<double>(Shape{1, 0, 4, 4}), ShapeError);
    CHECK_THROWS_AS(Tensor<double>(Shape{2, 2}, std::vector<double>{1.0}), ShapeError);

    CHECK_FALSE(t.has_grad());
    t.ensure_grad();
    CHECK(t.has_grad());
    CHECK(t.g().size() == t.size());

    Tensor<double> alias = t;
    alias.v()[0] = 7.0;
    CHECK(t.v()[0] == 7.0);
    Tensor<double> deep = t.clone();
    deep.v()[0] = 9.0;
    CHECK(t.v()[0] == 7.0);
}

TEST_CASE("strict mode rejects non-finite results") {
    set_strict_mode(true);
    Tensor<double> x(Shape{1, 1, 1, 1}, std::vector<double>{1e308});
    Tensor<double> y = x.clone();
    CHECK_THROWS_AS(mul<double>(nullptr, x, y), ValueError);
    set_strict_mode(false);
    CHECK_NOTHROW(mul<double>(nullptr, x, y));
}

TEST_CASE("backward visits nodes once, in reverse, and accumulates leaves") {
    // y = x^2 at x = 3 -> dy/dx = 6
    Tensor<double> x = Tensor<double>::scalar(3.0);
    x.set_needs_grad(true);
    Tape<double> tape;
    Tensor<double> y = mul(&tape, x, x);
    tape.backward(y);
    CHECK(y.item() == 9.0);
    CHECK(x.g()[0] == doctest::Approx(6.0).epsilon(1e-12));

    // second backward without reset accumulates exactly 2x
    tape.backward(y);
    CHECK(x.g()[0] == doctest::Approx(12.0).epsilon(1e-12));
}

TEST_CASE("backward requires a scalar differentiable loss") {
    Tensor<double> x(Shape{2, 2}, 1.0);
    Tape<double> tape;
    CHECK_THROWS_AS(tape.backward(x), ShapeError);
    Tensor<double> s = Tensor<double>::scalar(1.0);
    CHECK_THROWS_AS(tape.backward(s), ValueError);  // nothing needs gradients
}

// --- conv2d ---------------------------------------------------------------

TEST_CASE("conv2d identity kernel") {
    Rng rng(3);
    Tensor<double> x = checks::random_tensor({1, 1, 4, 4}, rng);
    Tensor<double> w(Shape{1, 1, 1, 1}, std::vector<double>{1.0});
    Tensor<double> b(Shape{1});
    Tensor<double> y = conv2d<double>(nullptr, x, w, b);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(y.v()[i] == doctest::Approx(x.v()[i]));
}

TEST_CASE("conv2d all-ones 3x3 on all-ones 3x3 input") {
    Tensor<double> x(Shape{1, 1, 3, 3}, 1.0);
    Tensor<double> w(Shape{1, 1, 3, 3}, 1.0);
    Tensor<double> b(Shape{1});
    Tensor<double> y = conv2d<double>(nullptr, x, w, b);
    CHECK(y.v()[y.index4(0, 0, 1, 1)] == doctest::Approx(9.0));
    CHECK(y.v()[y.index4(0, 0, 0, 0)] == doctest::Approx(4.0));
    CHECK(y.v()[y.index4(0, 0, 2, 2)] == doctest::Approx(4.0));
    CHECK(y.v()[y.index4(0, 0, 0, 1)] == doctest::Approx(6.0));
}

TEST_CASE("conv2d matches the sliding-window reference") {
    Rng rng(17);
    auto x = checks::random_tensor({2, 3, 6, 7}, rng);
    auto w = checks::random_tensor({4, 3, 3, 3}, rng);
    auto b = checks::random_tensor({4}, rng);
    auto got = conv2d<double>(nullptr, x, w, b);
    auto want = oracle::conv2d_reference(x, w, b);
    for (std::size_t i = 0; i < got.size(); ++i)
        CHECK(got.v()[i] == doctest::Approx(want.v()[i]).epsilon(1e-10));
}

TEST_CASE("conv2d shape errors are descriptive") {
    Tensor<double> x(Shape{1, 2, 4, 4});
    Tensor<double> w(Shape{3, 5, 3, 3});
    Tensor<double> b(Shape{3});
    CHECK_THROWS_AS(conv2d<double>(nullptr, x, w, b), ShapeError);
    Tensor<double> even(Shape{3, 2, 2, 2});
    CHECK_THROWS_AS(conv2d<double>(nullptr, x, even, b), ShapeError);
}

TEST_CASE("conv2d gradients match finite differences over 10 seeds") {
    for (std::uint64_t seed = 0; seed < 10; ++seed)
        CHECK(checks::check_conv2d(seed) < 1e-4);
}

// --- batch norm -------------------------------------------------------------

TEST_CASE("batch_norm passes through already-normalized input") {
    Rng rng(5);
    Tensor<double> x(Shape{1, 1, 4, 4});
    double mean = 0.0;
    for (auto& v : x.v()) {
        v = rng.normal();
        mean += v;
    }
    mean /= 16.0;
    double var = 0.0;
    for (auto& v : x.v()) {
        v -= mean;
        var += v * v;
    }
    var /= 16.0;
    for (auto& v : x.v()) v /= std::sqrt(var);

    Tensor<double> gamma(Shape{1}, 1.0);
    Tensor<double> beta(Shape{1});
    BatchNormState<double> st;
    auto y = batch_norm<double>(nullptr, x, gamma, beta, st, true, true);
    for (std::size_t i = 0; i < x.size(); ++i)
        CHECK(std::abs(y.v()[i] - x.v()[i]) < 1e-4);
}

TEST_CASE("batch_norm collapses constant input to beta") {
    Tensor<double> x(Shape{2, 1, 3, 3}, 4.2);
    Tensor<double> gamma(Shape{1}, 1.0);
    Tensor<double> beta(Shape{1}, 0.5);
    BatchNormState<double> st;
    auto y = batch_norm<double>(nullptr, x, gamma, beta, st, true, true);
    for (double v : y.v()) CHECK(v == doctest::Approx(0.5).epsilon(1e-6));
}

TEST_CASE("batch_norm eval before train errors; after train it uses running stats") {
    Tensor<double> x(Shape{1, 2, 2, 2}, 1.0);
    Tensor<double> gamma(Shape{2}, 1.0);
    Tensor<double> beta(Shape{2});
    BatchNormState<double> st;
    CHECK_THROWS_AS(batch_norm<double>(nullptr, x, gamma, beta, st, false, false), ValueError);
    batch_norm<double>(nullptr, x, gamma, beta, st, true, true);
    CHECK(st.initialized);
    CHECK_NOTHROW(batch_norm<double>(nullptr, x, gamma, beta, st, false, false));
}

TEST_CASE("batch_norm running statistics blend with momentum 0.9") {
    Tensor<double> gamma(Shape{1}, 1.0);
    Tensor<double> beta(Shape{1});
    BatchNormState<double> st;
    Tensor<double> a(Shape{1, 1, 2, 2}, 2.0);
    batch_norm<double>(nullptr, a, gamma, beta, st, true, true);
    CHECK(st.running_mean[0] == doctest::Approx(2.0));
    Tensor<double> b(Shape{1, 1, 2, 2}, 4.0);
    batch_norm<double>(nullptr, b, gamma, beta, st, true, true);
    CHECK(st.running_mean[0] == doctest::Approx(0.9 * 2.0 + 0.1 * 4.0));
    // frozen layers do not advance the statistics
    batch_norm<double>(nullptr, b, gamma, beta, st, true, false);
    CHECK(st.running_mean[0] == doctest::Approx(0.9 * 2.0 + 0.1 * 4.0));
}

TEST_CASE("batch_norm gradients match finite differences over 10 seeds") {
    for (std::uint64_t seed = 0; seed < 10; ++seed)
        CHECK(checks::check_batch_norm(seed) < 1e-4);
}

// --- relu / pooling -----------------------------------------------------------

TEST_CASE("relu basics and zero-input gradient") {
    auto x = tensor4({1, 1, 1, 3}, {-1.0, 0.0, 2.0});
    x.set_needs_grad(true);
    Tape<double> tape;
    auto y = relu(&tape, x);
    CHECK(y.v()[0] == 0.0);
    CHECK(y.v()[1] == 0.0);
    CHECK(y.v()[2] == 2.0);
    auto s = sum(&tape, y);
    tape.backward(s);
    CHECK(x.g()[0] == 0.0);
    CHECK(x.g()[1] == 0.0);  // subgradient at 0 is 0
    CHECK(x.g()[2] == 1.0);

    auto neg = tensor4({1, 1, 1, 2}, {-3.0, -0.5});
    auto yn = relu<double>(nullptr, neg);
    CHECK(yn.v()[0] == 0.0);
    CHECK(yn.v()[1] == 0.0);
}

TEST_CASE("relu gradient check avoiding the kink") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) CHECK(checks::check_relu(seed) < 1e-4);
}

TEST_CASE("max_pool single window and odd-extent error") {
    auto x = tensor4({1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
    auto y = max_pool_2x2<double>(nullptr, x);
    CHECK(y.size() == 1);
    CHECK(y.v()[0] == 4.0);
    Tensor<double> odd(Shape{1, 1, 3, 4});
    CHECK_THROWS_AS(max_pool_2x2<double>(nullptr, odd), ShapeError);
}

TEST_CASE("max_pool tie routes gradient to the first element in row-major order") {
    Tensor<double> x(Shape{1, 1, 2, 2}, 5.0);
    x.set_needs_grad(true);
    Tape<double> tape;
    auto y = max_pool_2x2(&tape, x);
    auto s = sum(&tape, y);
    tape.backward(s);
    CHECK(x.g()[0] == 1.0);
    CHECK(x.g()[1] == 0.0);
    CHECK(x.g()[2] == 0.0);
    CHECK(x.g()[3] == 0.0);
}

TEST_CASE("max_pool matches the exhaustive window oracle") {
    Rng rng(23);
    auto x = checks::random_tensor({2, 3, 8, 8}, rng);
    auto got = max_pool_2x2<double>(nullptr, x);
    auto want = oracle::max_pool_reference(x);
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(got.v()[i] == want.v()[i]);
}

TEST_CASE("max_pool gradient check") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) CHECK(checks::check_max_pool(seed) < 1e-4);
}

// --- transposed conv ------------------------------------------------------------

TEST_CASE("transposed_conv on a 1x1 input reproduces the scaled kernel") {
    Tensor<double> x(Shape{1, 1, 1, 1}, std::vector<double>{2.5});
    auto w = tensor4({1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
    auto y = transposed_conv_2x2<double>(nullptr, x, w);
    CHECK(y.shape() == Shape{1, 1, 2, 2});
    CHECK(y.v()[0] == doctest::Approx(2.5));
    CHECK(y.v()[1] == doctest::Approx(5.0));
    CHECK(y.v()[2] == doctest::Approx(7.5));
    CHECK(y.v()[3] == doctest::Approx(10.0));
}

TEST_CASE("transposed_conv equals the zero-interleave reference") {
    Rng rng(29);
    auto x = checks::random_tensor({2, 3, 4, 5}, rng);
    auto w = checks::random_tensor({3, 2, 2, 2}, rng);
    auto got = transposed_conv_2x2<double>(nullptr, x, w);
    auto want = oracle::tconv_reference(x, w);
    REQUIRE(got.shape() == want.shape());
    for (std::size_t i = 0; i < got.size(); ++i)
        CHECK(got.v()[i] == doctest::Approx(want.v()[i]).epsilon(1e-10));
}

TEST_CASE("transposed_conv gradient check") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) CHECK(checks::check_tconv(seed) < 1e-4);
}

// --- concat ----------------------------------------------------------------------

TEST_CASE("concat_channels shapes and gradient split") {
    Tensor<double> a(Shape{1, 2, 4, 4}, 1.0);
    Tensor<double> b(Shape{1, 3, 4, 4}, 2.0);
    auto y = concat_channels<double>(nullptr, a, b);
    CHECK(y.shape() == Shape{1, 5, 4, 4});

    CHECK_THROWS_AS(Tensor<double>(Shape{1, 0, 4, 4}), ShapeError);  // empty-channel tensor

    a.set_needs_grad(true);
    b.set_needs_grad(true);
    Tape<double> tape;
    auto cat = concat_channels(&tape, a, b);
    Tensor<double> coeffs(cat.shape());
    Rng rng(31);
    for (auto& c : coeffs.v()) c = rng.uniform(-1.0, 1.0);
    auto s = weighted_sum(&tape, cat, coeffs);
    tape.backward(s);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.g()[i] == coeffs.v()[i]);
    for (std::size_t i = 0; i < b.size(); ++i) CHECK(b.g()[i] == coeffs.v()[a.size() + i]);
}

TEST_CASE("concat gradient check") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) CHECK(checks::check_concat(seed) < 1e-4);
}

// --- softmax -----------------------------------------------------------------------

TEST_CASE("softmax uniform, hand case, and extreme stability") {
    Tensor<double> zeros(Shape{1, 3, 2, 2});
    auto u = softmax_pixelwise<double>(nullptr, zeros);
    for (double v : u.v()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

    auto logits = tensor4({1, 3, 1, 1}, {0.0, std::log(2.0), std::log(3.0)});
    auto p = softmax_pixelwise<double>(nullptr, logits);
    CHECK(p.v()[0] == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
    CHECK(p.v()[1] == doctest::Approx(2.0 / 6.0).epsilon(1e-12));
    CHECK(p.v()[2] == doctest::Approx(3.0 / 6.0).epsilon(1e-12));

    auto extreme = tensor4({1, 2, 1, 1}, {1e4, -1e4});
    auto pe = softmax_pixelwise<double>(nullptr, extreme);
    CHECK(std::isfinite(pe.v()[0]));
    CHECK(std::isfinite(pe.v()[1]));
    CHECK(pe.v()[0] == doctest::Approx(1.0));
}

TEST_CASE("softmax channels sum to one on random logits") {
    Rng rng(37);
    for (int rep = 0; rep < 20; ++rep) {
        const std::size_t K = 2 + rng.uniform_index(4);
        Tensor<double> logits({1, K, 3, 3});
        for (auto& v : logits.v()) v = rng.uniform(-50.0, 50.0);
        auto p = softmax_pixelwise<double>(nullptr, logits);
        for (std::size_t i = 0; i < 9; ++i) {
            double s = 0.0;
            for (std::size_t k = 0; k < K; ++k) s += p.v()[k * 9 + i];
            CHECK(std::abs(s - 1.0) < 1e-6);
        }
    }
}

TEST_CASE("softmax gradient check") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) CHECK(checks::check_softmax(seed) < 1e-4);
}

// --- weighted cross-entropy -----------------------------------------------------------

TEST_CASE("wce perfect prediction gives zero loss") {
    Tensor<double> probs(Shape{1, 2, 2, 2});
    Tensor<double> onehot(Shape{1, 2, 2, 2});
    for (std::size_t i = 0; i < 4; ++i) {
        probs.v()[i] = 1.0;   // class 0 everywhere
        onehot.v()[i] = 1.0;
    }
    const std::vector<double> w{1.0, 1.0};
    auto loss = weighted_cross_entropy<double>(nullptr, probs, onehot, w);
    CHECK(loss.item() == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("wce single pixel, half probability, weight two equals 2 ln 2") {
    auto probs = tensor4({1, 2, 1, 1}, {0.5, 0.5});
    auto onehot = tensor4({1, 2, 1, 1}, {1.0, 0.0});
    const std::vector<double> w{2.0, 1.0};
    auto loss = weighted_cross_entropy<double>(nullptr, probs, onehot, w);
    CHECK(std::abs(loss.item() - 2.0 * std::log(2.0)) < 1e-9);
}

TEST_CASE("wce matches the per-pixel loop oracle on random instances") {
    Rng rng(41);
    for (int rep = 0; rep < 30; ++rep) {
        const std::size_t K = 2 + rng.uniform_index(4);
        const std::size_t H = 1 + rng.uniform_index(8), W = 1 + rng.uniform_index(8);
        Tensor<double> probs({1, K, H, W});
        for (auto& v : probs.v()) v = rng.uniform(1e-9, 1.0);
        Tensor<double> onehot({1, K, H, W});
        for (std::size_t i = 0; i < H * W; ++i)
            onehot.v()[rng.uniform_index(K) * H * W + i] = 1.0;
        std::vector<double> w(K);
        for (auto& x : w) x = rng.uniform(0.1, 3.0);
        auto loss = weighted_cross_entropy<double>(nullptr, probs, onehot, w);
        CHECK(std::abs(loss.item() - oracle::wce_reference(probs, onehot, w)) < 1e-6);
    }
}

TEST_CASE("wce rejects bad weights and non-one-hot labels") {
    Tensor<double> probs(Shape{1, 2, 1, 1}, 0.5);
    Tensor<double> onehot = tensor4({1, 2, 1, 1}, {1.0, 0.0});
    const std::vector<double> bad{1.0, 1.0, 1.0};
    CHECK_THROWS_AS(weighted_cross_entropy<double>(nullptr, probs, onehot, bad), ConfigError);
    auto not_onehot = tensor4({1, 2, 1, 1}, {1.0, 1.0});
    const std::vector<double> w{1.0, 1.0};
    CHECK_THROWS_AS(weighted_cross_entropy<double>(nullptr, probs, not_onehot, w), ValueError);
}

TEST_CASE("loss gradient checks (probs input and softmax chain)") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        CHECK(checks::check_wce(seed) < 1e-4);
        CHECK(checks::check_softmax_wce(seed) < 1e-4);
    }
}

// --- adam -------------------------------------------------------------------------------

TEST_CASE("adam first step moves by about -lr * sign(g)") {
    Parameter<double> p("p", 1, Tensor<double>(Shape{3}, std::vector<double>{1.0, -2.0, 0.5}));
    p.value.ensure_grad();
    p.value.g()[0] = 0.3;
    p.value.g()[1] = -1.7;
    p.value.g()[2] = 0.0004;
    AdamState<double> st;
    std::vector<Parameter<double>*> params{&p};
    adam_step<double>(params, st, 0.01);
    CHECK(st.t == 1);
    // bias correction at t=1 gives delta = -lr * g / (|g| + eps')
    CHECK(p.value.v()[0] == doctest::Approx(1.0 - 0.01).epsilon(1e-6));
    CHECK(p.value.v()[1] == doctest::Approx(-2.0 + 0.01).epsilon(1e-6));
    CHECK(p.value.v()[2] < 0.5);
}

TEST_CASE("adam skips frozen parameters bit-exactly") {
    Parameter<double> frozen("a", 1, Tensor<double>(Shape{4}, 1.25));
    Parameter<double> live("b", 2, Tensor<double>(Shape{4}, 1.25));
    frozen.set_trainable(false);
    live.value.ensure_grad();
    for (auto& g : live.value.g()) g = 1.0;
    AdamState<double> st;
    std::vector<Parameter<double>*> params{&frozen, &live};
    adam_step<double>(params, st, 0.1);
    for (double v : frozen.value.v()) CHECK(v == 1.25);  // bit-identical
    for (double v : live.value.v()) CHECK(v != 1.25);
}

TEST_CASE("adam three-step scalar trace matches the hand-computed reference") {
    // L = theta^2 / 2 so g = theta; lr = 0.1, start at 1.0
    Parameter<double> p("theta", 1, Tensor<double>::scalar(1.0));
    AdamState<double> st;
    std::vector<Parameter<double>*> params{&p};

    // independent direct evaluation of the update equations
    double theta = 1.0, m = 0.0, v = 0.0;
    const double frozen_trace[3] = {0.900000001, 0.8004122297123382, 0.701586274504415};
    for (int t = 1; t <= 3; ++t) {
        const double g = theta;
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        const double mh = m / (1.0 - std::pow(0.9, t));
        const double vh = v / (1.0 - std::pow(0.999, t));
        theta -= 0.1 * mh / (std::sqrt(vh) + 1e-8);

        p.value.ensure_grad();
        p.value.g()[0] = p.value.v()[0];
        adam_step<double>(params, st, 0.1);
        p.value.zero_grad();
        CHECK(p.value.v()[0] == doctest::Approx(theta).epsilon(1e-12));
        CHECK(p.value.v()[0] == doctest::Approx(frozen_trace[t - 1]).epsilon(1e-9));
    }
    CHECK(st.t == 3);
}

TEST_CASE("adam requires a positive learning rate") {
    Parameter<double> p("p", 1, Tensor<double>::scalar(1.0));
    AdamState<double> st;
    std::vector<Parameter<double>*> params{&p};
    CHECK_THROWS_AS(adam_step<double>(params, st, 0.0), ValueError);
}

// --- grad_check harness ---------------------------------------------------------------------

TEST_CASE("grad_check on a linear function reports ~0") {
    Tensor<double> x(Shape{2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
    x.set_needs_grad(true);
    Tensor<double> coeffs(Shape{2, 3}, std::vector<double>{0.5, -1, 2, 0.25, 3, -0.75});
    std::vector<Tensor<double>> in{x};
    CheckedFn<double> fn = [coeffs](Tape<double>* tape, std::vector<Tensor<double>>& v) {
        return weighted_sum(tape, v[0], coeffs);
    };
    CHECK(grad_check(fn, in) < 1e-9);
}

TEST_CASE("grad_check flags a backward that is wrong by 2x") {
    Tensor<double> x = Tensor<double>::scalar(1.5);
    x.set_needs_grad(true);
    std::vector<Tensor<double>> in{x};
    CheckedFn<double> fn = [](Tape<double>* tape, std::vector<Tensor<double>>& v) {
        Tensor<double> out = Tensor<double>::scalar(3.0 * v[0].item());
        if (tape) {
            out.set_needs_grad(true);
            Tensor<double> xc = v[0];
            xc.ensure_grad();
            Tensor<double> oc = out;
            tape->record(out, [xc, oc]() mutable {
                xc.g()[0] += 6.0 * oc.g()[0];  // deliberately 2x the true 3.0
            });
        }
        return out;
    };
    const double err = grad_check(fn, in);
    CHECK(err == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("tiny end-to-end network passes the directional check") {
    CHECK(checks::check_unet_end_to_end(0, 4) < 1e-3);
}
