#pragma once

// Finite-difference gradient checks for every differentiable op and a tiny
// end-to-end network, shared between the unit tests and the acceptance suite.
// All checks run in 64-bit.

#include <cstdint>
#include <vector>

#include "cascade/grad_check.hpp"
#include "cascade/rng.hpp"
#include "cascade/unet.hpp"

namespace checks {

using cascade::CheckedFn;
using cascade::GradCheckOptions;
using cascade::Rng;
using cascade::Shape;
using cascade::Tape;
using cascade::Tensor;

inline Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor<double> t(std::move(shape));
    for (auto& v : t.v()) v = rng.uniform(lo, hi);
    return t;
}

inline GradCheckOptions opts(std::uint64_t seed) {
    GradCheckOptions o;
    o.seed = seed;
    return o;
}

inline double check_conv2d(std::uint64_t seed) {
    Rng rng(cascade::mix64(seed, 1));
    std::vector<Tensor<double>> in{random_tensor({2, 2, 5, 5}, rng),
                                   random_tensor({3, 2, 3, 3}, rng),
                                   random_tensor({3}, rng)};
    for (auto& t : in) t.set_needs_grad(true);
    CheckedFn<double> fn = [](Tape<double>* tape, std::vector<Tensor<double>>& v) {
        return cascade::conv2d(tape, v[0], v[1], v[2]);
    };
    return cascade::grad_check(fn, in, opts(seed));
}

inline double check_batch_norm(std::uint64_t seed) {
    Rng rng(cascade::mix64(seed, 2));
    std::vector<Tensor<double>> in{random_tensor({2, 3, 4, 4}, rng),
                                   random_tensor({3}, rng, 0.5, 1.5),
                                   random_tensor({3}, rng)};
    for (auto& t : in) t.set_needs_grad(true);
    CheckedFn<double> fn = [](Tape<double>* tape, std::vector<Tensor<double>>& v) {
        cascade::BatchNormState<double> state;  // train mode, no running update
        return cascade::batch_norm(tape, v[0], v[1], v[2], state, true, false);
    };
    return cascade::grad_check(fn, in, opts(seed));
}

inline double check_relu(std::uint64_t seed) {
    Rng rng(cascade::mix64(seed, 3));
    Tensor<double> x({2, 2, 4, 4});
    // keep inputs away from the kink
    for (auto& v : x.v()) {
        v = rng.uniform(-1.0, 1.0);
        if (v >= 0.0 && v < 1e-3) v += 1e-3;
        if (v < 0.0 && v > -1e-3) v -= 1e-3;
    }
    x.set_needs_grad(true);
    std::vector<Tensor<double>> in{x};
    CheckedFn<double> fn = [](Tape<double>* tape, std::vector<Tensor<double>>& v) {
        return cascade::relu(tape, v[0]);
    };
    return cascade::grad_check(fn, in, opts(seed));
}

inline double check_max_pool(std::uint64_t seed) {
    Rng rng(cascade::mix64(seed, 4));
    std::vector<Tensor<double>> in{random_tensor({1, 2, 8, 8}, rng)};
    in[0].set_needs_grad(true);
    CheckedFn<double> fn = [](Tape<double>* tape, std::vector<Tensor<double>>& v) {
        return cascade::max_pool_2x2(tape, v[0]);
    };
    return cascade::grad_check(fn, in, opts(seed));
}

inline double check_tconv(std::uint64_t seed) {
    Rng rng(cascade::mix64(seed, 5));
    std::vector<Tensor<double>> in{random_tensor({2, 3, 4, 4}, rng),
                                   random_tensor({3, 2, 2, 2}, rng)};
    for (auto& t : in) t.set_needs_grad(true);
    CheckedFn<double> fn = [](Tape<double>* tape, std::vector<Tensor<double>>& v) {
        return cascade::transposed_conv_2x2(tape, v[0], v[1]);
    };
    return cascade::grad_check(fn, in, opts(seed));
}

inline double check_concat(std::uint64_t seed) {
    Rng rng(cascade::mix64(seed, 6));
    std::vector<Tensor<double>> in{random_tensor({2, 2, 3, 3}, rng),
                                   random_tensor({2, 3, 3, 3}, rng)};
    for (auto& t : in) t.set_needs_grad(true);
    CheckedFn<double> fn = [](Tape<double>* tape, std::vector<Tensor<double>>& v) {
        return cascade::concat_channels(tape, v[0], v[1]);
    };
    return cascade::grad_check(fn, in, opts(seed));
}

inline double check_softmax(std::uint64_t seed) {
    Rng rng(cascade::mix64(seed, 7));
    std::vector<Tensor<double>> in{random_tensor({1, 4, 3, 3}, rng, -2.0, 2.0)};
    in[0].set_needs_grad(true);
    CheckedFn<double> fn = [](Tape<double>* tape, std::vector<Tensor<double>>& v) {
        return cascade::softmax_pixelwise(tape, v[0]);
    };
    return cascade::grad_check(fn, in, opts(seed));
}

/// softmax -> weighted cross-entropy chain on logits (covers the loss
/// backward through the clamp and the softmax Jacobian).
inline double check_softmax_wce(std::uint64_t seed) {
    Rng rng(cascade::mix64(seed, 8));
    const std::size_t K = 3, H = 4, W = 4;
    Tensor<double> logits = random_tensor({1, K, H, W}, rng, -2.0, 2.0);
    logits.set_needs_grad(true);
    Tensor<double> onehot({1, K, H, W});
    for (std::size_t i = 0; i < H * W; ++i)
        onehot.v()[rng.uniform_index(K) * H * W + i] = 1.0;
    auto weights = std::make_shared<std::vector<double>>();
    for (std::size_t k = 0; k < K; ++k) weights->push_back(rng.uniform(0.5, 2.0));

    std::vector<Tensor<double>> in{logits};
    CheckedFn<double> fn = [onehot, weights](Tape<double>* tape, std::vector<Tensor<double>>& v) {
        auto probs = cascade::softmax_pixelwise(tape, v[0]);
        return cascade::weighted_cross_entropy<double>(tape, probs, onehot, *weights);
    };
    return cascade::grad_check(fn, in, opts(seed));
}

/// Direct check of the loss backward with probs as the input.
inline double check_wce(std::uint64_t seed) {
    Rng rng(cascade::mix64(seed, 9));
    const std::size_t K = 4, H = 3, W = 3;
    Tensor<double> probs({1, K, H, W});
    for (auto& v : probs.v()) v = rng.uniform(0.05, 1.0);
    probs.set_needs_grad(true);
    Tensor<double> onehot({1, K, H, W});
    for (std::size_t i = 0; i < H * W; ++i)
        onehot.v()[rng.uniform_index(K) * H * W + i] = 1.0;
    auto weights = std::make_shared<std::vector<double>>();
    for (std::size_t k = 0; k < K; ++k) weights->push_back(rng.uniform(0.5, 2.0));

    std::vector<Tensor<double>> in{probs};
    CheckedFn<double> fn = [onehot, weights](Tape<double>* tape, std::vector<Tensor<double>>& v) {
        return cascade::weighted_cross_entropy<double>(tape, v[0], onehot, *weights);
    };
    return cascade::grad_check(fn, in, opts(seed));
}

/// Tiny end-to-end network: every parameter plus the input image, checked
/// along random directions (directional central differences).
inline double check_unet_end_to_end(std::uint64_t seed, int directions = 8) {
    cascade::UNetConfig cfg;
    cfg.base_filters = 1;
    cfg.num_classes = 3;
    cfg.input_size = 16;
    cfg.seed = seed;
    auto model = cascade::UNet<double>::build(cfg);

    Rng rng(cascade::mix64(seed, 10));
    Tensor<double> image = random_tensor({1, 1, 16, 16}, rng);
    image.set_needs_grad(true);
    Tensor<double> onehot({1, 3, 16, 16});
    for (std::size_t i = 0; i < 16 * 16; ++i) onehot.v()[rng.uniform_index(3) * 16 * 16 + i] = 1.0;
    auto weights = std::make_shared<std::vector<double>>(std::vector<double>{1.0, 1.3, 0.7});

    std::vector<Tensor<double>> in;
    for (auto* p : model.parameters()) in.push_back(p->value);  // shared handles
    in.push_back(image);

    auto model_ptr = std::make_shared<cascade::UNet<double>>(std::move(model));
    CheckedFn<double> fn = [model_ptr, onehot, weights](Tape<double>* tape,
                                                        std::vector<Tensor<double>>& v) {
        // keep the call pure: snapshot and restore the BN running statistics
        auto buffers = model_ptr->buffers();
        std::vector<cascade::BatchNormState<double>> saved;
        for (auto& b : buffers) saved.push_back(*b.state);
        auto logits = model_ptr->forward(tape, v.back(), true);
        auto probs = cascade::softmax_pixelwise(tape, logits);
        auto loss = cascade::weighted_cross_entropy<double>(tape, probs, onehot, *weights);
        for (std::size_t i = 0; i < buffers.size(); ++i) *buffers[i].state = saved[i];
        return loss;
    };
    return cascade::grad_check_directional(fn, in, directions, opts(seed));
}

}  // namespace checks
