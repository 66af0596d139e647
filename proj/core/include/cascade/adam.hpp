#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cascade/tensor.hpp"

namespace cascade {

/// Trainable-flagged tensor tagged with the model block that owns it.
/// Freezing toggles `trainable`; the optimizer skips non-trainable parameters
/// entirely, and set_trainable also clears needs_grad so no gradient work is
/// spent on them.
template <typename T>
struct Parameter {
    std::string name;
    int block_id = 0;
    Tensor<T> value;
    bool trainable = true;

    Parameter() = default;
    Parameter(std::string n, int block, Tensor<T> v) : name(std::move(n)), block_id(block), value(std::move(v)) {
        value.set_needs_grad(true);
    }

    void set_trainable(bool flag) {
        trainable = flag;
        value.set_needs_grad(flag);
    }
};

/// Adam accumulators: one pair of moment tensors per parameter plus the
/// shared step counter. Moments are allocated lazily on the first step.
template <typename T>
struct AdamState {
    struct Moments {
        Tensor<T> m;
        Tensor<T> v;
    };
    std::vector<Moments> moments;
    std::int64_t t = 0;
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

/// One Adam step with bias correction over `params` (in the given order,
/// which must stay stable across steps for `state` to stay aligned).
/// Parameters with trainable == false are left bit-identical, moments
/// included. Each call advances state.t by exactly 1.
template <typename T>
void adam_step(std::span<Parameter<T>* const> params, AdamState<T>& state, T lr);

}  // namespace cascade
