#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "cascade/ops.hpp"

namespace cascade {

/// Function under gradient test. Must be pure: repeated calls on the same
/// inputs produce the same output (batch-norm callers pass
/// update_running = false). A null tape means "do not record".
template <typename T>
using CheckedFn = std::function<Tensor<T>(Tape<T>*, std::vector<Tensor<T>>&)>;

struct GradCheckOptions {
    double step = 1e-5;        // central-difference half step
    std::uint64_t seed = 0;    // output-projection / direction draws
    double denom_floor = 1e-4; // relative-error denominator floor
};

/// Central finite-difference check of every element of every input that has
/// needs_grad set. Multi-element outputs are reduced to a scalar through a
/// fixed random projection so the full Jacobian is exercised.
///
/// Returns max over elements of |analytic - fd| / max(|fd|, denom_floor):
/// ~0 for a correct backward, ~1 for a backward that is wrong by 2x.
template <typename T>
double grad_check(const CheckedFn<T>& fn, std::vector<Tensor<T>>& inputs,
                  const GradCheckOptions& opt = {});

/// Directional variant for large parameter vectors: compares the analytic
/// directional derivative <grad, v> against a central difference along
/// `directions` random unit directions spanning all checked inputs.
template <typename T>
double grad_check_directional(const CheckedFn<T>& fn, std::vector<Tensor<T>>& inputs,
                              int directions, const GradCheckOptions& opt = {});

}  // namespace cascade
