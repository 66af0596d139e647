#include "cascade/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>

namespace cascade {

namespace {

using i64 = std::int64_t;

template <typename T>
void require_rank(const Tensor<T>& t, std::size_t rank, const char* op, const char* name) {
    if (!t.defined() || t.ndim() != rank)
        throw ShapeError(std::string(op) + ": " + name + " must have rank " +
                         std::to_string(rank) + ", got " +
                         (t.defined() ? shape_str(t.shape()) : std::string("<undefined>")));
}

/// Deterministic 4-way unrolled dot product (fixed summation order).
template <typename T>
T dotn(const T* a, const T* b, i64 n) {
    T s0 = 0, s1 = 0, s2 = 0, s3 = 0;
    i64 i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    T s = (s0 + s2) + (s1 + s3);
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

template <typename T>
T sumn(const T* a, i64 n) {
    T s0 = 0, s1 = 0, s2 = 0, s3 = 0;
    i64 i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += a[i];
        s1 += a[i + 1];
        s2 += a[i + 2];
        s3 += a[i + 3];
    }
    T s = (s0 + s2) + (s1 + s3);
    for (; i < n; ++i) s += a[i];
    return s;
}

template <typename T>
bool any_needs_grad(std::initializer_list<const Tensor<T>*> ts) {
    for (const auto* t : ts)
        if ((*t).needs_grad()) return true;
    return false;
}

template <typename T>
void prepare_grads(std::initializer_list<Tensor<T>*> ts) {
    for (auto* t : ts)
        if (t->needs_grad()) t->ensure_grad();
}

}  // namespace

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> conv2d(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    require_rank(x, 4, "conv2d", "input");
    require_rank(w, 4, "conv2d", "kernel");
    require_rank(b, 1, "conv2d", "bias");
    const i64 N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const i64 F = w.dim(0), K = w.dim(2);
    if (w.dim(1) != static_cast<std::size_t>(C))
        throw ShapeError("conv2d: kernel channels " + shape_str(w.shape()) +
                         " do not match input " + shape_str(x.shape()));
    if (w.dim(3) != static_cast<std::size_t>(K) || K % 2 == 0)
        throw ShapeError("conv2d: kernel must be square with odd extent, got " +
                         shape_str(w.shape()));
    if (b.dim(0) != static_cast<std::size_t>(F))
        throw ShapeError("conv2d: bias " + shape_str(b.shape()) + " does not match filters " +
                         std::to_string(F));

    const i64 p = K / 2;
    Tensor<T> out(Shape{static_cast<std::size_t>(N), static_cast<std::size_t>(F),
                        static_cast<std::size_t>(H), static_cast<std::size_t>(W)});
    const T* xv = x.data();
    const T* wv = w.data();
    const T* bv = b.data();
    T* ov = out.data();
    const i64 HW = H * W;

    for (i64 n = 0; n < N; ++n) {
        for (i64 f = 0; f < F; ++f) {
            T* oplane = ov + (n * F + f) * HW;
            std::fill(oplane, oplane + HW, bv[f]);
            for (i64 c = 0; c < C; ++c) {
                const T* xplane = xv + (n * C + c) * HW;
                const T* wbase = wv + (f * C + c) * K * K;
                for (i64 ky = 0; ky < K; ++ky) {
                    const i64 dy = ky - p;
                    const i64 oy_lo = std::max<i64>(0, -dy), oy_hi = std::min<i64>(H, H - dy);
                    for (i64 kx = 0; kx < K; ++kx) {
                        const T wk = wbase[ky * K + kx];
                        const i64 dx = kx - p;
                        const i64 ox_lo = std::max<i64>(0, -dx), ox_hi = std::min<i64>(W, W - dx);
                        for (i64 oy = oy_lo; oy < oy_hi; ++oy) {
                            const T* xrow = xplane + (oy + dy) * W + dx;
                            T* orow = oplane + oy * W;
                            for (i64 ox = ox_lo; ox < ox_hi; ++ox) orow[ox] += wk * xrow[ox];
                        }
                    }
                }
            }
        }
    }
    if (strict_mode()) check_finite(out, "conv2d");

    if (tape && any_needs_grad<T>({&x, &w, &b})) {
        out.set_needs_grad(true);
        Tensor<T> xc = x, wc = w, bc = b;
        prepare_grads<T>({&xc, &wc, &bc});
        Tensor<T> oc = out;
        tape->record(out, [xc, wc, bc, oc, N, C, H, W, F, K, p]() mutable {
            const i64 HW = H * W;
            const T* go = oc.g().data();
            if (bc.needs_grad()) {
                T* db = bc.g().data();
                for (i64 n = 0; n < N; ++n)
                    for (i64 f = 0; f < F; ++f) db[f] += sumn(go + (n * F + f) * HW, HW);
            }
            if (wc.needs_grad()) {
                const T* xv = xc.data();
                T* dw = wc.g().data();
                for (i64 n = 0; n < N; ++n)
                    for (i64 f = 0; f < F; ++f) {
                        const T* goplane = go + (n * F + f) * HW;
                        for (i64 c = 0; c < C; ++c) {
                            const T* xplane = xv + (n * C + c) * HW;
                            T* dwbase = dw + (f * C + c) * K * K;
                            for (i64 ky = 0; ky < K; ++ky) {
                                const i64 dy = ky - p;
                                const i64 oy_lo = std::max<i64>(0, -dy);
                                const i64 oy_hi = std::min<i64>(H, H - dy);
                                for (i64 kx = 0; kx < K; ++kx) {
                                    const i64 dx = kx - p;
                                    const i64 ox_lo = std::max<i64>(0, -dx);
                                    const i64 ox_hi = std::min<i64>(W, W - dx);
                                    T acc = 0;
                                    for (i64 oy = oy_lo; oy < oy_hi; ++oy)
                                        acc += dotn(xplane + (oy + dy) * W + dx + ox_lo,
                                                    goplane + oy * W + ox_lo, ox_hi - ox_lo);
                                    dwbase[ky * K + kx] += acc;
                                }
                            }
                        }
                    }
            }
            if (xc.needs_grad()) {
                const T* wv = wc.data();
                T* dx_all = xc.g().data();
                for (i64 n = 0; n < N; ++n)
                    for (i64 c = 0; c < C; ++c) {
                        T* dxplane = dx_all + (n * C + c) * HW;
                        for (i64 f = 0; f < F; ++f) {
                            const T* goplane = go + (n * F + f) * HW;
                            const T* wbase = wv + (f * C + c) * K * K;
                            for (i64 ky = 0; ky < K; ++ky) {
                                const i64 dy = ky - p;
                                const i64 oy_lo = std::max<i64>(0, -dy);
                                const i64 oy_hi = std::min<i64>(H, H - dy);
                                for (i64 kx = 0; kx < K; ++kx) {
                                    const T wk = wbase[ky * K + kx];
                                    const i64 dx = kx - p;
                                    const i64 ox_lo = std::max<i64>(0, -dx);
                                    const i64 ox_hi = std::min<i64>(W, W - dx);
                                    for (i64 oy = oy_lo; oy < oy_hi; ++oy) {
                                        T* dxrow = dxplane + (oy + dy) * W + dx;
                                        const T* gorow = goplane + oy * W;
                                        for (i64 ox = ox_lo; ox < ox_hi; ++ox)
                                            dxrow[ox] += wk * gorow[ox];
                                    }
                                }
                            }
                        }
                    }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// batch_norm
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> batch_norm(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta, BatchNormState<T>& state, bool training,
                     bool update_running) {
    require_rank(x, 4, "batch_norm", "input");
    require_rank(gamma, 1, "batch_norm", "gamma");
    require_rank(beta, 1, "batch_norm", "beta");
    const i64 N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (gamma.dim(0) != static_cast<std::size_t>(C) || beta.dim(0) != static_cast<std::size_t>(C))
        throw ShapeError("batch_norm: gamma/beta extent must equal channel count " +
                         std::to_string(C));
    if (!training && !state.initialized)
        throw ValueError("batch_norm: eval mode requires running statistics populated by a "
                         "train-mode call");
    if (state.initialized && state.running_mean.size() != static_cast<std::size_t>(C))
        throw ShapeError("batch_norm: running statistics extent " +
                         std::to_string(state.running_mean.size()) +
                         " does not match channel count " + std::to_string(C));

    const i64 HW = H * W;
    const i64 m = N * HW;
    const T eps = static_cast<T>(kBatchNormEps);

    std::vector<T> mean(C), var(C);
    if (training) {
        for (i64 c = 0; c < C; ++c) {
            T acc = 0;
            for (i64 n = 0; n < N; ++n) acc += sumn(x.data() + (n * C + c) * HW, HW);
            mean[c] = acc / static_cast<T>(m);
        }
        for (i64 c = 0; c < C; ++c) {
            T acc = 0;
            for (i64 n = 0; n < N; ++n) {
                const T* xp = x.data() + (n * C + c) * HW;
                T s0 = 0;
                for (i64 i = 0; i < HW; ++i) {
                    const T d = xp[i] - mean[c];
                    s0 += d * d;
                }
                acc += s0;
            }
            var[c] = acc / static_cast<T>(m);
        }
        if (update_running) {
            if (!state.initialized) {
                state.running_mean = mean;
                state.running_var = var;
                state.initialized = true;
            } else {
                for (i64 c = 0; c < C; ++c) {
                    state.running_mean[c] = T(0.9) * state.running_mean[c] + T(0.1) * mean[c];
                    state.running_var[c] = T(0.9) * state.running_var[c] + T(0.1) * var[c];
                }
            }
        }
    } else {
        mean = state.running_mean;
        var = state.running_var;
    }

    std::vector<T> invstd(C);
    for (i64 c = 0; c < C; ++c) invstd[c] = T(1) / std::sqrt(var[c] + eps);

    Tensor<T> xhat(x.shape());
    Tensor<T> out(x.shape());
    {
        const T* xv = x.data();
        const T* gv = gamma.data();
        const T* bv = beta.data();
        T* hv = xhat.data();
        T* ov = out.data();
        for (i64 n = 0; n < N; ++n)
            for (i64 c = 0; c < C; ++c) {
                const i64 off = (n * C + c) * HW;
                const T mu = mean[c], is = invstd[c], ga = gv[c], be = bv[c];
                for (i64 i = 0; i < HW; ++i) {
                    const T h = (xv[off + i] - mu) * is;
                    hv[off + i] = h;
                    ov[off + i] = ga * h + be;
                }
            }
    }
    if (strict_mode()) check_finite(out, "batch_norm");

    if (tape && any_needs_grad<T>({&x, &gamma, &beta})) {
        out.set_needs_grad(true);
        Tensor<T> xc = x, gc = gamma, bc = beta;
        prepare_grads<T>({&xc, &gc, &bc});
        Tensor<T> oc = out;
        tape->record(out, [xc, gc, bc, oc, xhat, invstd, training, N, C, HW, m]() mutable {
            const T* go = oc.g().data();
            const T* hv = xhat.data();
            for (i64 c = 0; c < C; ++c) {
                T sum_dy = 0, sum_dyh = 0;
                for (i64 n = 0; n < N; ++n) {
                    const i64 off = (n * C + c) * HW;
                    sum_dy += sumn(go + off, HW);
                    sum_dyh += dotn(go + off, hv + off, HW);
                }
                if (gc.needs_grad()) gc.g()[c] += sum_dyh;
                if (bc.needs_grad()) bc.g()[c] += sum_dy;
                if (xc.needs_grad()) {
                    T* dx = xc.g().data();
                    const T ga_is = gc.data()[c] * invstd[c];
                    if (training) {
                        const T mean_dy = sum_dy / static_cast<T>(m);
                        const T mean_dyh = sum_dyh / static_cast<T>(m);
                        for (i64 n = 0; n < N; ++n) {
                            const i64 off = (n * C + c) * HW;
                            for (i64 i = 0; i < HW; ++i)
                                dx[off + i] +=
                                    ga_is * (go[off + i] - mean_dy - hv[off + i] * mean_dyh);
                        }
                    } else {
                        for (i64 n = 0; n < N; ++n) {
                            const i64 off = (n * C + c) * HW;
                            for (i64 i = 0; i < HW; ++i) dx[off + i] += ga_is * go[off + i];
                        }
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// relu
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> relu(Tape<T>* tape, const Tensor<T>& x) {
    if (!x.defined()) throw ShapeError("relu: undefined input");
    Tensor<T> out(x.shape());
    const T* xv = x.data();
    T* ov = out.data();
    const std::size_t n = x.size();
    for (std::size_t i = 0; i < n; ++i) ov[i] = xv[i] > T(0) ? xv[i] : T(0);
    if (strict_mode()) check_finite(out, "relu");

    if (tape && x.needs_grad()) {
        out.set_needs_grad(true);
        Tensor<T> xc = x;
        xc.ensure_grad();
        Tensor<T> oc = out;
        tape->record(out, [xc, oc]() mutable {
            const T* go = oc.g().data();
            const T* xv = xc.data();
            T* dx = xc.g().data();
            const std::size_t n = xc.size();
            for (std::size_t i = 0; i < n; ++i)
                if (xv[i] > T(0)) dx[i] += go[i];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// max_pool_2x2
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> max_pool_2x2(Tape<T>* tape, const Tensor<T>& x) {
    require_rank(x, 4, "max_pool_2x2", "input");
    const i64 N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (H % 2 != 0 || W % 2 != 0)
        throw ShapeError("max_pool_2x2: spatial extents must be even, got " + shape_str(x.shape()));
    const i64 Ho = H / 2, Wo = W / 2;
    Tensor<T> out(Shape{static_cast<std::size_t>(N), static_cast<std::size_t>(C),
                        static_cast<std::size_t>(Ho), static_cast<std::size_t>(Wo)});
    auto argmax = std::make_shared<std::vector<std::uint32_t>>(out.size());

    const T* xv = x.data();
    T* ov = out.data();
    std::uint32_t* am = argmax->data();
    i64 o = 0;
    for (i64 n = 0; n < N; ++n)
        for (i64 c = 0; c < C; ++c) {
            const i64 plane = (n * C + c) * H * W;
            for (i64 oy = 0; oy < Ho; ++oy)
                for (i64 ox = 0; ox < Wo; ++ox, ++o) {
                    const i64 i00 = plane + (2 * oy) * W + 2 * ox;
                    // first maximal element in row-major window order wins ties
                    i64 best = i00;
                    T bv = xv[i00];
                    if (xv[i00 + 1] > bv) { best = i00 + 1; bv = xv[i00 + 1]; }
                    if (xv[i00 + W] > bv) { best = i00 + W; bv = xv[i00 + W]; }
                    if (xv[i00 + W + 1] > bv) { best = i00 + W + 1; bv = xv[i00 + W + 1]; }
                    ov[o] = bv;
                    am[o] = static_cast<std::uint32_t>(best);
                }
        }
    if (strict_mode()) check_finite(out, "max_pool_2x2");

    if (tape && x.needs_grad()) {
        out.set_needs_grad(true);
        Tensor<T> xc = x;
        xc.ensure_grad();
        Tensor<T> oc = out;
        tape->record(out, [xc, oc, argmax]() mutable {
            const T* go = oc.g().data();
            T* dx = xc.g().data();
            const std::size_t n = oc.size();
            const std::uint32_t* am = argmax->data();
            for (std::size_t i = 0; i < n; ++i) dx[am[i]] += go[i];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// transposed_conv_2x2
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> transposed_conv_2x2(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& w) {
    require_rank(x, 4, "transposed_conv_2x2", "input");
    require_rank(w, 4, "transposed_conv_2x2", "kernel");
    const i64 N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (w.dim(0) != static_cast<std::size_t>(C) || w.dim(2) != 2 || w.dim(3) != 2)
        throw ShapeError("transposed_conv_2x2: kernel must be [C,F,2,2] with C=" +
                         std::to_string(C) + ", got " + shape_str(w.shape()));
    const i64 F = w.dim(1);
    const i64 Ho = 2 * H, Wo = 2 * W;
    Tensor<T> out(Shape{static_cast<std::size_t>(N), static_cast<std::size_t>(F),
                        static_cast<std::size_t>(Ho), static_cast<std::size_t>(Wo)});

    const T* xv = x.data();
    const T* wv = w.data();
    T* ov = out.data();
    for (i64 n = 0; n < N; ++n)
        for (i64 f = 0; f < F; ++f) {
            T* oplane = ov + (n * F + f) * Ho * Wo;
            for (i64 c = 0; c < C; ++c) {
                const T* xplane = xv + (n * C + c) * H * W;
                const T* wk = wv + (c * F + f) * 4;
                for (i64 y = 0; y < H; ++y) {
                    const T* xrow = xplane + y * W;
                    T* orow0 = oplane + (2 * y) * Wo;
                    T* orow1 = orow0 + Wo;
                    for (i64 xx = 0; xx < W; ++xx) {
                        const T v = xrow[xx];
                        orow0[2 * xx] += v * wk[0];
                        orow0[2 * xx + 1] += v * wk[1];
                        orow1[2 * xx] += v * wk[2];
                        orow1[2 * xx + 1] += v * wk[3];
                    }
                }
            }
        }
    if (strict_mode()) check_finite(out, "transposed_conv_2x2");

    if (tape && any_needs_grad<T>({&x, &w})) {
        out.set_needs_grad(true);
        Tensor<T> xc = x, wc = w;
        prepare_grads<T>({&xc, &wc});
        Tensor<T> oc = out;
        tape->record(out, [xc, wc, oc, N, C, H, W, F, Ho, Wo]() mutable {
            const T* go = oc.g().data();
            if (wc.needs_grad()) {
                const T* xv = xc.data();
                T* dw = wc.g().data();
                for (i64 n = 0; n < N; ++n)
                    for (i64 c = 0; c < C; ++c) {
                        const T* xplane = xv + (n * C + c) * H * W;
                        for (i64 f = 0; f < F; ++f) {
                            const T* goplane = go + (n * F + f) * Ho * Wo;
                            T a0 = 0, a1 = 0, a2 = 0, a3 = 0;
                            for (i64 y = 0; y < H; ++y) {
                                const T* xrow = xplane + y * W;
                                const T* gr0 = goplane + (2 * y) * Wo;
                                const T* gr1 = gr0 + Wo;
                                for (i64 xx = 0; xx < W; ++xx) {
                                    const T v = xrow[xx];
                                    a0 += v * gr0[2 * xx];
                                    a1 += v * gr0[2 * xx + 1];
                                    a2 += v * gr1[2 * xx];
                                    a3 += v * gr1[2 * xx + 1];
                                }
                            }
                            T* dwk = dw + (c * F + f) * 4;
                            dwk[0] += a0;
                            dwk[1] += a1;
                            dwk[2] += a2;
                            dwk[3] += a3;
                        }
                    }
            }
            if (xc.needs_grad()) {
                const T* wv = wc.data();
                T* dx = xc.g().data();
                for (i64 n = 0; n < N; ++n)
                    for (i64 c = 0; c < C; ++c) {
                        T* dxplane = dx + (n * C + c) * H * W;
                        for (i64 f = 0; f < F; ++f) {
                            const T* goplane = go + (n * F + f) * Ho * Wo;
                            const T* wk = wv + (c * F + f) * 4;
                            for (i64 y = 0; y < H; ++y) {
                                T* dxrow = dxplane + y * W;
                                const T* gr0 = goplane + (2 * y) * Wo;
                                const T* gr1 = gr0 + Wo;
                                for (i64 xx = 0; xx < W; ++xx)
                                    dxrow[xx] += wk[0] * gr0[2 * xx] + wk[1] * gr0[2 * xx + 1] +
                                                 wk[2] * gr1[2 * xx] + wk[3] * gr1[2 * xx + 1];
                            }
                        }
                    }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// concat_channels
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> concat_channels(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
    require_rank(a, 4, "concat_channels", "first input");
    require_rank(b, 4, "concat_channels", "second input");
    const i64 N = a.dim(0), C1 = a.dim(1), H = a.dim(2), W = a.dim(3);
    const i64 C2 = b.dim(1);
    if (b.dim(0) != static_cast<std::size_t>(N) || b.dim(2) != static_cast<std::size_t>(H) ||
        b.dim(3) != static_cast<std::size_t>(W))
        throw ShapeError("concat_channels: inputs " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " differ outside the channel axis");

    Tensor<T> out(Shape{static_cast<std::size_t>(N), static_cast<std::size_t>(C1 + C2),
                        static_cast<std::size_t>(H), static_cast<std::size_t>(W)});
    const i64 HW = H * W;
    T* ov = out.data();
    for (i64 n = 0; n < N; ++n) {
        std::copy_n(a.data() + n * C1 * HW, C1 * HW, ov + n * (C1 + C2) * HW);
        std::copy_n(b.data() + n * C2 * HW, C2 * HW, ov + (n * (C1 + C2) + C1) * HW);
    }
    if (strict_mode()) check_finite(out, "concat_channels");

    if (tape && any_needs_grad<T>({&a, &b})) {
        out.set_needs_grad(true);
        Tensor<T> ac = a, bc = b;
        prepare_grads<T>({&ac, &bc});
        Tensor<T> oc = out;
        tape->record(out, [ac, bc, oc, N, C1, C2, HW]() mutable {
            const T* go = oc.g().data();
            for (i64 n = 0; n < N; ++n) {
                if (ac.needs_grad()) {
                    T* da = ac.g().data() + n * C1 * HW;
                    const T* g = go + n * (C1 + C2) * HW;
                    for (i64 i = 0; i < C1 * HW; ++i) da[i] += g[i];
                }
                if (bc.needs_grad()) {
                    T* db = bc.g().data() + n * C2 * HW;
                    const T* g = go + (n * (C1 + C2) + C1) * HW;
                    for (i64 i = 0; i < C2 * HW; ++i) db[i] += g[i];
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// softmax_pixelwise
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> softmax_pixelwise(Tape<T>* tape, const Tensor<T>& logits) {
    require_rank(logits, 4, "softmax_pixelwise", "logits");
    const i64 N = logits.dim(0), K = logits.dim(1), H = logits.dim(2), W = logits.dim(3);
    const i64 HW = H * W;
    Tensor<T> out(logits.shape());
    const T* lv = logits.data();
    T* ov = out.data();
    std::vector<T> mx(HW), sm(HW);
    for (i64 n = 0; n < N; ++n) {
        const i64 base = n * K * HW;
        std::copy_n(lv + base, HW, mx.data());
        for (i64 k = 1; k < K; ++k) {
            const T* row = lv + base + k * HW;
            for (i64 i = 0; i < HW; ++i) mx[i] = std::max(mx[i], row[i]);
        }
        std::fill(sm.begin(), sm.end(), T(0));
        for (i64 k = 0; k < K; ++k) {
            const T* row = lv + base + k * HW;
            T* orow = ov + base + k * HW;
            for (i64 i = 0; i < HW; ++i) {
                const T e = std::exp(row[i] - mx[i]);
                orow[i] = e;
                sm[i] += e;
            }
        }
        for (i64 k = 0; k < K; ++k) {
            T* orow = ov + base + k * HW;
            for (i64 i = 0; i < HW; ++i) orow[i] /= sm[i];
        }
    }
    if (strict_mode()) check_finite(out, "softmax_pixelwise");

    if (tape && logits.needs_grad()) {
        out.set_needs_grad(true);
        Tensor<T> lc = logits;
        lc.ensure_grad();
        Tensor<T> oc = out;
        tape->record(out, [lc, oc, N, K, HW]() mutable {
            const T* go = oc.g().data();
            const T* pv = oc.data();
            T* dl = lc.g().data();
            std::vector<T> t(HW);
            for (i64 n = 0; n < N; ++n) {
                const i64 base = n * K * HW;
                std::fill(t.begin(), t.end(), T(0));
                for (i64 k = 0; k < K; ++k) {
                    const T* g = go + base + k * HW;
                    const T* p = pv + base + k * HW;
                    for (i64 i = 0; i < HW; ++i) t[i] += g[i] * p[i];
                }
                for (i64 k = 0; k < K; ++k) {
                    const T* g = go + base + k * HW;
                    const T* p = pv + base + k * HW;
                    T* d = dl + base + k * HW;
                    for (i64 i = 0; i < HW; ++i) d[i] += p[i] * (g[i] - t[i]);
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// weighted_cross_entropy
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> weighted_cross_entropy(Tape<T>* tape, const Tensor<T>& probs, const Tensor<T>& onehot,
                                 std::span<const T> weights) {
    require_rank(probs, 4, "weighted_cross_entropy", "probs");
    require_rank(onehot, 4, "weighted_cross_entropy", "labels");
    if (!shape_eq(probs.shape(), onehot.shape()))
        throw ShapeError("weighted_cross_entropy: probs " + shape_str(probs.shape()) +
                         " and labels " + shape_str(onehot.shape()) + " differ");
    const i64 N = probs.dim(0), K = probs.dim(1), H = probs.dim(2), W = probs.dim(3);
    if (weights.size() != static_cast<std::size_t>(K))
        throw ConfigError("weighted_cross_entropy: got " + std::to_string(weights.size()) +
                          " class weights for " + std::to_string(K) + " classes");

    const i64 HW = H * W;
    const i64 npix = N * HW;
    const T clamp = static_cast<T>(kLogClamp);

    // one-hot validation: entries in {0,1}, exactly one per pixel
    {
        const T* yv = onehot.data();
        std::vector<T> colsum(HW);
        for (i64 n = 0; n < N; ++n) {
            std::fill(colsum.begin(), colsum.end(), T(0));
            for (i64 k = 0; k < K; ++k) {
                const T* row = yv + (n * K + k) * HW;
                for (i64 i = 0; i < HW; ++i) {
                    if (row[i] != T(0) && row[i] != T(1))
                        throw ValueError("weighted_cross_entropy: labels are not one-hot");
                    colsum[i] += row[i];
                }
            }
            for (i64 i = 0; i < HW; ++i)
                if (colsum[i] != T(1))
                    throw ValueError("weighted_cross_entropy: labels are not one-hot");
        }
    }

    double acc = 0.0;
    {
        const T* pv = probs.data();
        const T* yv = onehot.data();
        for (i64 n = 0; n < N; ++n)
            for (i64 k = 0; k < K; ++k) {
                const T* p = pv + (n * K + k) * HW;
                const T* y = yv + (n * K + k) * HW;
                const double wk = static_cast<double>(weights[k]);
                for (i64 i = 0; i < HW; ++i)
                    if (y[i] == T(1))
                        acc -= wk * std::log(static_cast<double>(std::max(p[i], clamp)));
            }
    }
    Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc / static_cast<double>(npix)));
    if (strict_mode()) check_finite(out, "weighted_cross_entropy");

    if (tape && probs.needs_grad()) {
        out.set_needs_grad(true);
        Tensor<T> pc = probs, yc = onehot;
        pc.ensure_grad();
        Tensor<T> oc = out;
        std::vector<T> wcopy(weights.begin(), weights.end());
        tape->record(out, [pc, yc, oc, wcopy, N, K, HW, npix, clamp]() mutable {
            const T g = oc.g()[0];
            const T* pv = pc.data();
            const T* yv = yc.data();
            T* dp = pc.g().data();
            const T inv_npix = T(1) / static_cast<T>(npix);
            for (i64 n = 0; n < N; ++n)
                for (i64 k = 0; k < K; ++k) {
                    const i64 off = (n * K + k) * HW;
                    const T wk = wcopy[static_cast<std::size_t>(k)];
                    for (i64 i = 0; i < HW; ++i)
                        if (yv[off + i] == T(1) && pv[off + i] > clamp)
                            dp[off + i] -= g * wk * inv_npix / pv[off + i];
                }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// reductions / elementwise helpers
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum(Tape<T>* tape, const Tensor<T>& x) {
    if (!x.defined()) throw ShapeError("sum: undefined input");
    double acc = 0.0;
    for (T v : x.v()) acc += static_cast<double>(v);
    Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc));
    if (tape && x.needs_grad()) {
        out.set_needs_grad(true);
        Tensor<T> xc = x;
        xc.ensure_grad();
        Tensor<T> oc = out;
        tape->record(out, [xc, oc]() mutable {
            const T g = oc.g()[0];
            T* dx = xc.g().data();
            const std::size_t n = xc.size();
            for (std::size_t i = 0; i < n; ++i) dx[i] += g;
        });
    }
    return out;
}

template <typename T>
Tensor<T> weighted_sum(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& coeffs) {
    if (!x.defined() || !coeffs.defined() || !shape_eq(x.shape(), coeffs.shape()))
        throw ShapeError("weighted_sum: inputs must share one shape");
    double acc = 0.0;
    const T* xv = x.data();
    const T* cv = coeffs.data();
    for (std::size_t i = 0; i < x.size(); ++i)
        acc += static_cast<double>(xv[i]) * static_cast<double>(cv[i]);
    Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc));
    if (tape && any_needs_grad<T>({&x, &coeffs})) {
        out.set_needs_grad(true);
        Tensor<T> xc = x, cc = coeffs;
        prepare_grads<T>({&xc, &cc});
        Tensor<T> oc = out;
        tape->record(out, [xc, cc, oc]() mutable {
            const T g = oc.g()[0];
            const std::size_t n = xc.size();
            if (xc.needs_grad()) {
                T* dx = xc.g().data();
                const T* cv = cc.data();
                for (std::size_t i = 0; i < n; ++i) dx[i] += g * cv[i];
            }
            if (cc.needs_grad()) {
                T* dc = cc.g().data();
                const T* xv = xc.data();
                for (std::size_t i = 0; i < n; ++i) dc[i] += g * xv[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> mul(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
    if (!a.defined() || !b.defined() || !shape_eq(a.shape(), b.shape()))
        throw ShapeError("mul: inputs must share one shape");
    Tensor<T> out(a.shape());
    const T* av = a.data();
    const T* bv = b.data();
    T* ov = out.data();
    for (std::size_t i = 0; i < a.size(); ++i) ov[i] = av[i] * bv[i];
    if (strict_mode()) check_finite(out, "mul");
    if (tape && any_needs_grad<T>({&a, &b})) {
        out.set_needs_grad(true);
        Tensor<T> ac = a, bc = b;
        prepare_grads<T>({&ac, &bc});
        Tensor<T> oc = out;
        tape->record(out, [ac, bc, oc]() mutable {
            const T* go = oc.g().data();
            const std::size_t n = ac.size();
            if (ac.needs_grad()) {
                T* da = ac.g().data();
                const T* bv = bc.data();
                for (std::size_t i = 0; i < n; ++i) da[i] += go[i] * bv[i];
            }
            if (bc.needs_grad()) {
                T* db = bc.g().data();
                const T* av = ac.data();
                for (std::size_t i = 0; i < n; ++i) db[i] += go[i] * av[i];
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------

#define CASCADE_INSTANTIATE_OPS(T)                                                              \
    template Tensor<T> conv2d<T>(Tape<T>*, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&); \
    template Tensor<T> batch_norm<T>(Tape<T>*, const Tensor<T>&, const Tensor<T>&,             \
                                     const Tensor<T>&, BatchNormState<T>&, bool, bool);        \
    template Tensor<T> relu<T>(Tape<T>*, const Tensor<T>&);                                    \
    template Tensor<T> max_pool_2x2<T>(Tape<T>*, const Tensor<T>&);                            \
    template Tensor<T> transposed_conv_2x2<T>(Tape<T>*, const Tensor<T>&, const Tensor<T>&);   \
    template Tensor<T> concat_channels<T>(Tape<T>*, const Tensor<T>&, const Tensor<T>&);       \
    template Tensor<T> softmax_pixelwise<T>(Tape<T>*, const Tensor<T>&);                       \
    template Tensor<T> weighted_cross_entropy<T>(Tape<T>*, const Tensor<T>&, const Tensor<T>&, \
                                                 std::span<const T>);                          \
    template Tensor<T> sum<T>(Tape<T>*, const Tensor<T>&);                                     \
    template Tensor<T> weighted_sum<T>(Tape<T>*, const Tensor<T>&, const Tensor<T>&);          \
    template Tensor<T> mul<T>(Tape<T>*, const Tensor<T>&, const Tensor<T>&);

CASCADE_INSTANTIATE_OPS(float)
CASCADE_INSTANTIATE_OPS(double)

#undef CASCADE_INSTANTIATE_OPS

}  // namespace cascade
