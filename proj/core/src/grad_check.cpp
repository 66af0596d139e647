#include "cascade/grad_check.hpp"

#include <cmath>

#include "cascade/rng.hpp"

namespace cascade {

namespace {

template <typename T>
struct Projection {
    Tensor<T> coeffs;  // undefined when the output is already scalar

    double apply(const Tensor<T>& out) const {
        if (!coeffs.defined()) return static_cast<double>(out.item());
        double acc = 0.0;
        const T* o = out.data();
        const T* c = coeffs.data();
        for (std::size_t i = 0; i < out.size(); ++i)
            acc += static_cast<double>(o[i]) * static_cast<double>(c[i]);
        return acc;
    }
};

template <typename T>
double rel_error(double analytic, double fd, double floor) {
    return std::abs(analytic - fd) / std::max(std::abs(fd), floor);
}

/// Runs fn with a tape, reduces to a scalar, backpropagates, and returns the
/// projection used so finite-difference evaluations can reuse it.
template <typename T>
Projection<T> backward_pass(const CheckedFn<T>& fn, std::vector<Tensor<T>>& inputs,
                            const GradCheckOptions& opt) {
    for (auto& in : inputs)
        if (in.needs_grad()) in.zero_grad();
    Tape<T> tape;
    Tensor<T> out = fn(&tape, inputs);
    Projection<T> proj;
    Tensor<T> scalar = out;
    if (out.size() > 1) {
        Rng rng(mix64(opt.seed, 0x70726f6aULL));
        proj.coeffs = Tensor<T>(out.shape());
        for (auto& c : proj.coeffs.v()) c = static_cast<T>(rng.uniform(-1.0, 1.0));
        scalar = weighted_sum(&tape, out, proj.coeffs);
    }
    tape.backward(scalar);
    return proj;
}

template <typename T>
double fd_scalar(const CheckedFn<T>& fn, std::vector<Tensor<T>>& inputs,
                 const Projection<T>& proj) {
    Tensor<T> out = fn(nullptr, inputs);
    return proj.apply(out);
}

}  // namespace

template <typename T>
double grad_check(const CheckedFn<T>& fn, std::vector<Tensor<T>>& inputs,
                  const GradCheckOptions& opt) {
    const Projection<T> proj = backward_pass(fn, inputs, opt);
    const T h = static_cast<T>(opt.step);
    double max_err = 0.0;
    for (auto& in : inputs) {
        if (!in.needs_grad()) continue;
        std::vector<T> analytic(in.g().begin(), in.g().end());
        T* v = in.data();
        for (std::size_t j = 0; j < in.size(); ++j) {
            const T saved = v[j];
            v[j] = saved + h;
            const double plus = fd_scalar(fn, inputs, proj);
            v[j] = saved - h;
            const double minus = fd_scalar(fn, inputs, proj);
            v[j] = saved;
            const double fd = (plus - minus) / (2.0 * static_cast<double>(h));
            max_err = std::max(max_err,
                               rel_error<T>(static_cast<double>(analytic[j]), fd, opt.denom_floor));
        }
    }
    return max_err;
}

template <typename T>
double grad_check_directional(const CheckedFn<T>& fn, std::vector<Tensor<T>>& inputs,
                              int directions, const GradCheckOptions& opt) {
    const Projection<T> proj = backward_pass(fn, inputs, opt);

    std::vector<Tensor<T>*> checked;
    std::size_t total = 0;
    for (auto& in : inputs)
        if (in.needs_grad()) {
            checked.push_back(&in);
            total += in.size();
        }
    if (total == 0) return 0.0;

    std::vector<double> grad;
    grad.reserve(total);
    for (auto* in : checked)
        for (T gv : in->g()) grad.push_back(static_cast<double>(gv));

    Rng rng(mix64(opt.seed, 0x64697273ULL));
    const T h = static_cast<T>(opt.step);
    double max_err = 0.0;
    std::vector<double> dir(total);
    for (int d = 0; d < directions; ++d) {
        double norm2 = 0.0;
        for (auto& e : dir) {
            e = rng.normal();
            norm2 += e * e;
        }
        const double inv_norm = 1.0 / std::sqrt(norm2);
        for (auto& e : dir) e *= inv_norm;

        double analytic = 0.0;
        for (std::size_t i = 0; i < total; ++i) analytic += grad[i] * dir[i];

        auto nudge = [&](double scale) {
            std::size_t off = 0;
            for (auto* in : checked) {
                T* v = in->data();
                for (std::size_t j = 0; j < in->size(); ++j, ++off)
                    v[j] += static_cast<T>(scale * static_cast<double>(h) * dir[off]);
            }
        };
        nudge(+1.0);
        const double plus = fd_scalar(fn, inputs, proj);
        nudge(-2.0);
        const double minus = fd_scalar(fn, inputs, proj);
        nudge(+1.0);

        const double fd = (plus - minus) / (2.0 * static_cast<double>(h));
        max_err = std::max(max_err, rel_error<T>(analytic, fd, opt.denom_floor));
    }
    return max_err;
}

template double grad_check<float>(const CheckedFn<float>&, std::vector<Tensor<float>>&,
                                  const GradCheckOptions&);
template double grad_check<double>(const CheckedFn<double>&, std::vector<Tensor<double>>&,
                                   const GradCheckOptions&);
template double grad_check_directional<float>(const CheckedFn<float>&,
                                              std::vector<Tensor<float>>&, int,
                                              const GradCheckOptions&);
template double grad_check_directional<double>(const CheckedFn<double>&,
                                               std::vector<Tensor<double>>&, int,
                                               const GradCheckOptions&);

}  // namespace cascade
