#pragma once

// Independent reference implementations used as test oracles. These stay
// deliberately naive (direct loops over definitions) and must not call into
// the library paths they check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <queue>
#include <span>
#include <vector>

#include "cascade/grid.hpp"
#include "cascade/tensor.hpp"

namespace oracle {

/// Sliding-window same-padded correlation, direct per-output-pixel sums.
template <typename T>
cascade::Tensor<T> conv2d_reference(const cascade::Tensor<T>& x, const cascade::Tensor<T>& w,
                                    const cascade::Tensor<T>& b) {
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t F = w.dim(0), K = w.dim(2);
    const long p = static_cast<long>(K / 2);
    cascade::Tensor<T> out(cascade::Shape{N, F, H, W});
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t f = 0; f < F; ++f)
            for (std::size_t oy = 0; oy < H; ++oy)
                for (std::size_t ox = 0; ox < W; ++ox) {
                    double acc = b.v()[f];
                    for (std::size_t c = 0; c < C; ++c)
                        for (std::size_t ky = 0; ky < K; ++ky)
                            for (std::size_t kx = 0; kx < K; ++kx) {
                                const long iy = static_cast<long>(oy + ky) - p;
                                const long ix = static_cast<long>(ox + kx) - p;
                                if (iy < 0 || ix < 0 || iy >= static_cast<long>(H) ||
                                    ix >= static_cast<long>(W))
                                    continue;
                                acc += static_cast<double>(
                                           x.v()[x.index4(n, c, static_cast<std::size_t>(iy),
                                                          static_cast<std::size_t>(ix))]) *
                                       static_cast<double>(w.v()[((f * C + c) * K + ky) * K + kx]);
                            }
                    out.v()[out.index4(n, f, oy, ox)] = static_cast<T>(acc);
                }
    return out;
}

/// Exhaustive 2x2 window maxima.
template <typename T>
cascade::Tensor<T> max_pool_reference(const cascade::Tensor<T>& x) {
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    cascade::Tensor<T> out(cascade::Shape{N, C, H / 2, W / 2});
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t y = 0; y < H / 2; ++y)
                for (std::size_t xx = 0; xx < W / 2; ++xx) {
                    T m = x.v()[x.index4(n, c, 2 * y, 2 * xx)];
                    m = std::max(m, x.v()[x.index4(n, c, 2 * y, 2 * xx + 1)]);
                    m = std::max(m, x.v()[x.index4(n, c, 2 * y + 1, 2 * xx)]);
                    m = std::max(m, x.v()[x.index4(n, c, 2 * y + 1, 2 * xx + 1)]);
                    out.v()[out.index4(n, c, y, xx)] = m;
                }
    return out;
}

/// Transposed conv as zero interleaving followed by a flipped-kernel sum:
/// out[p,q] = sum_{a,b} Z[p-a, q-b] * w[a,b] with Z the dilated input.
template <typename T>
cascade::Tensor<T> tconv_reference(const cascade::Tensor<T>& x, const cascade::Tensor<T>& w) {
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t F = w.dim(1);
    cascade::Tensor<T> out(cascade::Shape{N, F, 2 * H, 2 * W});
    auto z_at = [&](std::size_t n, std::size_t c, long y, long xx) -> double {
        if (y < 0 || xx < 0 || y >= 2 * static_cast<long>(H) || xx >= 2 * static_cast<long>(W))
            return 0.0;
        if (y % 2 != 0 || xx % 2 != 0) return 0.0;
        return x.v()[x.index4(n, c, static_cast<std::size_t>(y / 2),
                              static_cast<std::size_t>(xx / 2))];
    };
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t f = 0; f < F; ++f)
            for (long p = 0; p < 2 * static_cast<long>(H); ++p)
                for (long q = 0; q < 2 * static_cast<long>(W); ++q) {
                    double acc = 0.0;
                    for (long a = 0; a < 2; ++a)
                        for (long b = 0; b < 2; ++b)
                            for (std::size_t c = 0; c < C; ++c)
                                acc += z_at(n, c, p - a, q - b) *
                                       static_cast<double>(
                                           w.v()[((c * F + f) * 2 + a) * 2 + b]);
                    out.v()[out.index4(n, f, static_cast<std::size_t>(p),
                                       static_cast<std::size_t>(q))] = static_cast<T>(acc);
                }
    return out;
}

/// Per-pixel loop over the weighted cross-entropy definition.
template <typename T>
double wce_reference(const cascade::Tensor<T>& probs, const cascade::Tensor<T>& onehot,
                     std::span<const T> weights, double clamp = 1e-7) {
    const std::size_t N = probs.dim(0), K = probs.dim(1), H = probs.dim(2), W = probs.dim(3);
    double acc = 0.0;
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t xx = 0; xx < W; ++xx)
                for (std::size_t k = 0; k < K; ++k)
                    if (onehot.v()[onehot.index4(n, k, y, xx)] == T(1))
                        acc -= static_cast<double>(weights[k]) *
                               std::log(std::max(
                                   static_cast<double>(probs.v()[probs.index4(n, k, y, xx)]),
                                   clamp));
    return acc / static_cast<double>(N * H * W);
}

// --- segmentation metric oracles (set counting) -------------------------------

struct MaskCounts {
    std::size_t pred = 0, gt = 0, inter = 0;
};

inline MaskCounts count_masks(const cascade::MaskGrid& pred, const cascade::MaskGrid& gt) {
    MaskCounts c;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        c.pred += pred.v[i] != 0;
        c.gt += gt.v[i] != 0;
        c.inter += pred.v[i] != 0 && gt.v[i] != 0;
    }
    return c;
}

inline double dice_reference(const cascade::MaskGrid& pred, const cascade::MaskGrid& gt) {
    const MaskCounts c = count_masks(pred, gt);
    if (c.pred + c.gt == 0) return 1.0;
    return 2.0 * static_cast<double>(c.inter) / static_cast<double>(c.pred + c.gt);
}

/// BFS flood fill (8-connectivity) keeping the largest component; ties keep
/// the component whose first pixel appears earliest in scan order.
inline cascade::MaskGrid largest_component_reference(const cascade::MaskGrid& mask) {
    cascade::MaskGrid out(mask.h, mask.w, 0);
    std::vector<int> comp(mask.size(), -1);
    int next = 0;
    std::size_t best_size = 0;
    int best = -1;
    for (std::size_t start = 0; start < mask.size(); ++start) {
        if (mask.v[start] == 0 || comp[start] >= 0) continue;
        std::queue<std::size_t> q;
        q.push(start);
        comp[start] = next;
        std::size_t size = 0;
        while (!q.empty()) {
            const std::size_t i = q.front();
            q.pop();
            ++size;
            const long y = static_cast<long>(i / mask.w), x = static_cast<long>(i % mask.w);
            for (long dy = -1; dy <= 1; ++dy)
                for (long dx = -1; dx <= 1; ++dx) {
                    const long ny = y + dy, nx = x + dx;
                    if ((dy == 0 && dx == 0) || ny < 0 || nx < 0 ||
                        ny >= static_cast<long>(mask.h) || nx >= static_cast<long>(mask.w))
                        continue;
                    const std::size_t ni = static_cast<std::size_t>(ny) * mask.w +
                                           static_cast<std::size_t>(nx);
                    if (mask.v[ni] != 0 && comp[ni] < 0) {
                        comp[ni] = next;
                        q.push(ni);
                    }
                }
        }
        if (size > best_size) {
            best_size = size;
            best = next;
        }
        ++next;
    }
    for (std::size_t i = 0; i < mask.size(); ++i) out.v[i] = comp[i] == best && best >= 0 ? 1 : 0;
    return out;
}

/// 26-connected 3-D variant.
inline std::vector<cascade::MaskGrid> largest_component_3d_reference(
    const std::vector<cascade::MaskGrid>& vol) {
    if (vol.empty()) return {};
    const std::size_t d = vol.size(), h = vol[0].h, w = vol[0].w, hw = h * w;
    std::vector<int> comp(d * hw, -1);
    int next = 0, best = -1;
    std::size_t best_size = 0;
    auto at = [&](std::size_t i) { return vol[i / hw].v[i % hw]; };
    for (std::size_t start = 0; start < d * hw; ++start) {
        if (at(start) == 0 || comp[start] >= 0) continue;
        std::queue<std::size_t> q;
        q.push(start);
        comp[start] = next;
        std::size_t size = 0;
        while (!q.empty()) {
            const std::size_t i = q.front();
            q.pop();
            ++size;
            const long z = static_cast<long>(i / hw);
            const long y = static_cast<long>((i % hw) / w);
            const long x = static_cast<long>(i % w);
            for (long dz = -1; dz <= 1; ++dz)
                for (long dy = -1; dy <= 1; ++dy)
                    for (long dx = -1; dx <= 1; ++dx) {
                        if (dz == 0 && dy == 0 && dx == 0) continue;
                        const long nz = z + dz, ny = y + dy, nx = x + dx;
                        if (nz < 0 || ny < 0 || nx < 0 || nz >= static_cast<long>(d) ||
                            ny >= static_cast<long>(h) || nx >= static_cast<long>(w))
                            continue;
                        const std::size_t ni = static_cast<std::size_t>(nz) * hw +
                                               static_cast<std::size_t>(ny) * w +
                                               static_cast<std::size_t>(nx);
                        if (at(ni) != 0 && comp[ni] < 0) {
                            comp[ni] = next;
                            q.push(ni);
                        }
                    }
        }
        if (size > best_size) {
            best_size = size;
            best = next;
        }
        ++next;
    }
    std::vector<cascade::MaskGrid> out(d, cascade::MaskGrid(h, w, 0));
    for (std::size_t i = 0; i < d * hw; ++i)
        if (comp[i] == best && best >= 0) out[i / hw].v[i % hw] = 1;
    return out;
}

}  // namespace oracle
