#include "cascade/adam.hpp"

#include <cmath>

namespace cascade {

template <typename T>
void adam_step(std::span<Parameter<T>* const> params, AdamState<T>& state, T lr) {
    if (!(lr > T(0))) throw ValueError("adam_step: learning rate must be positive");
    if (state.moments.empty()) {
        state.moments.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            state.moments[i].m = Tensor<T>(params[i]->value.shape());
            state.moments[i].v = Tensor<T>(params[i]->value.shape());
        }
    }
    if (state.moments.size() != params.size())
        throw ShapeError("adam_step: state holds " + std::to_string(state.moments.size()) +
                         " moment pairs for " + std::to_string(params.size()) + " parameters");

    state.t += 1;
    const T b1 = static_cast<T>(kAdamBeta1);
    const T b2 = static_cast<T>(kAdamBeta2);
    const T eps = static_cast<T>(kAdamEps);
    const T bc1 = T(1) - static_cast<T>(std::pow(kAdamBeta1, static_cast<double>(state.t)));
    const T bc2 = T(1) - static_cast<T>(std::pow(kAdamBeta2, static_cast<double>(state.t)));

    for (std::size_t i = 0; i < params.size(); ++i) {
        Parameter<T>& p = *params[i];
        if (!p.trainable) continue;
        if (!p.value.has_grad())
            throw ValueError("adam_step: trainable parameter '" + p.name + "' has no gradient");
        if (!shape_eq(state.moments[i].m.shape(), p.value.shape()))
            throw ShapeError("adam_step: moment shape mismatch for parameter '" + p.name + "'");

        T* theta = p.value.data();
        const T* g = p.value.g().data();
        T* m = state.moments[i].m.data();
        T* v = state.moments[i].v.data();
        const std::size_t n = p.value.size();
        for (std::size_t j = 0; j < n; ++j) {
            m[j] = b1 * m[j] + (T(1) - b1) * g[j];
            v[j] = b2 * v[j] + (T(1) - b2) * g[j] * g[j];
            const T mhat = m[j] / bc1;
            const T vhat = v[j] / bc2;
            theta[j] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

template void adam_step<float>(std::span<Parameter<float>* const>, AdamState<float>&, float);
template void adam_step<double>(std::span<Parameter<double>* const>, AdamState<double>&, double);

}  // namespace cascade
