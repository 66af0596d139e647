#pragma once

#include <span>
#include <vector>

#include "cascade/tape.hpp"
#include "cascade/tensor.hpp"

namespace cascade {

/// Per-channel running statistics owned by a batch-norm layer. Populated by
/// the first train-mode call with updates enabled, then blended with
/// momentum 0.9 (running = 0.9 * running + 0.1 * batch).
template <typename T>
struct BatchNormState {
    std::vector<T> running_mean;
    std::vector<T> running_var;
    bool initialized = false;
};

// All ops take the tape as the first argument; pass nullptr to run without
// recording (inference). A backward node is recorded only when some input
// has needs_grad set.

/// Same-padded stride-1 2-D convolution.
/// x: [N,C,H,W], w: [F,C,k,k] with k odd, b: [F] -> [N,F,H,W].
template <typename T>
Tensor<T> conv2d(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);

/// Batch normalization over N*H*W per channel, epsilon 1e-5.
/// Train mode normalizes with batch statistics; eval mode uses `state` and
/// throws ValueError if it was never populated. `update_running` is honored
/// only in train mode (callers clear it for frozen layers).
template <typename T>
Tensor<T> batch_norm(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta, BatchNormState<T>& state, bool training,
                     bool update_running);

/// Elementwise max(x, 0). Subgradient at 0 is 0.
template <typename T>
Tensor<T> relu(Tape<T>* tape, const Tensor<T>& x);

/// 2x2 max pooling with stride 2; H and W must be even.
/// Backward routes the gradient to the first maximal element in row-major
/// window order, so tie handling is deterministic.
template <typename T>
Tensor<T> max_pool_2x2(Tape<T>* tape, const Tensor<T>& x);

/// Learned 2x upsampling: stride-2 transposed convolution with a 2x2 kernel.
/// x: [N,C,H,W], w: [C,F,2,2] -> [N,F,2H,2W].
template <typename T>
Tensor<T> transposed_conv_2x2(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& w);

/// Channel concatenation: [N,C1,H,W] + [N,C2,H,W] -> [N,C1+C2,H,W].
template <typename T>
Tensor<T> concat_channels(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b);

/// Per-pixel softmax over the channel axis, computed with max subtraction.
template <typename T>
Tensor<T> softmax_pixelwise(Tape<T>* tape, const Tensor<T>& logits);

/// Mean over pixels of -w_c * log(max(P_c, 1e-7)) at each pixel's true class.
/// `onehot` must be exactly one-hot per pixel; `weights` must have K entries.
template <typename T>
Tensor<T> weighted_cross_entropy(Tape<T>* tape, const Tensor<T>& probs, const Tensor<T>& onehot,
                                 std::span<const T> weights);

/// Scalar sum of all elements.
template <typename T>
Tensor<T> sum(Tape<T>* tape, const Tensor<T>& x);

/// Scalar dot product <coeffs, x> of two same-shape tensors. Used to reduce
/// multi-element outputs to a scalar in gradient checks.
template <typename T>
Tensor<T> weighted_sum(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& coeffs);

/// Elementwise product of two same-shape tensors.
template <typename T>
Tensor<T> mul(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b);

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kLogClamp = 1e-7;

}  // namespace cascade
