#include "cascade/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "cascade/common.hpp"
#include "cascade/rng.hpp"

namespace cascade {

namespace {

struct Draw {
    double theta = 0.0;   // radians
    double zoom = 1.0;
    bool flip = false;
    double shift_x = 0.0, shift_y = 0.0;  // pixels
    double scale = 1.0, shift_i = 0.0;    // intensity
    double noise_sigma = 0.0;

    bool geometric_identity() const {
        return theta == 0.0 && zoom == 1.0 && !flip && shift_x == 0.0 && shift_y == 0.0;
    }
};

Draw draw_transform(const Sample& s, const AugConfig& cfg, std::uint64_t epoch, Rng& rng) {
    Draw d;
    d.theta = rng.uniform(-cfg.rotate_deg, cfg.rotate_deg) * std::numbers::pi / 180.0;
    d.zoom = rng.uniform(cfg.zoom_lo, cfg.zoom_hi);
    d.flip = rng.bernoulli(cfg.flip_prob);
    d.shift_x = rng.uniform(-cfg.shift_frac, cfg.shift_frac) * static_cast<double>(s.image.w);
    d.shift_y = rng.uniform(-cfg.shift_frac, cfg.shift_frac) * static_cast<double>(s.image.h);
    d.scale = rng.uniform(cfg.intensity_scale_lo, cfg.intensity_scale_hi);
    d.shift_i = rng.uniform(-cfg.intensity_shift, cfg.intensity_shift);
    d.noise_sigma = cfg.noise_sigma;
    (void)epoch;
    return d;
}

/// dst -> src mapping for dst = C + t + R(theta) * zoom * Flip * (src - C).
struct InverseMap {
    double cx, cy, tx, ty, cos_t, sin_t, inv_zoom;
    bool flip;

    void operator()(double dx, double dy, double& sx, double& sy) const {
        const double ux = dx - cx - tx;
        const double uy = dy - cy - ty;
        double vx = (ux * cos_t + uy * sin_t) * inv_zoom;   // R(-theta) / zoom
        const double vy = (-ux * sin_t + uy * cos_t) * inv_zoom;
        if (flip) vx = -vx;
        sx = vx + cx;
        sy = vy + cy;
    }
};

float bilinear(const ImageGrid& g, double sx, double sy, float fill) {
    const long x0 = static_cast<long>(std::floor(sx));
    const long y0 = static_cast<long>(std::floor(sy));
    const double fx = sx - static_cast<double>(x0);
    const double fy = sy - static_cast<double>(y0);
    auto px = [&](long y, long x) -> double {
        if (y < 0 || x < 0 || y >= static_cast<long>(g.h) || x >= static_cast<long>(g.w))
            return fill;
        return g.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x));
    };
    const double top = px(y0, x0) * (1.0 - fx) + px(y0, x0 + 1) * fx;
    const double bot = px(y0 + 1, x0) * (1.0 - fx) + px(y0 + 1, x0 + 1) * fx;
    return static_cast<float>(top * (1.0 - fy) + bot * fy);
}

std::uint8_t nearest(const MaskGrid& g, double sx, double sy) {
    const long x = static_cast<long>(std::lround(sx));
    const long y = static_cast<long>(std::lround(sy));
    if (y < 0 || x < 0 || y >= static_cast<long>(g.h) || x >= static_cast<long>(g.w)) return 0;
    return g.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x));
}

}  // namespace

AugConfig identity_aug() {
    AugConfig c;
    c.rotate_deg = 0.0;
    c.zoom_lo = c.zoom_hi = 1.0;
    c.shift_frac = 0.0;
    c.flip_prob = 0.0;
    c.noise_sigma = 0.0;
    c.intensity_scale_lo = c.intensity_scale_hi = 1.0;
    c.intensity_shift = 0.0;
    return c;
}

Sample augment(const Sample& s, const AugConfig& cfg, std::uint64_t epoch) {
    if (cfg.zoom_lo > cfg.zoom_hi || cfg.intensity_scale_lo > cfg.intensity_scale_hi ||
        cfg.zoom_lo <= 0.0)
        throw ConfigError("augment: degenerate ranges");

    Rng rng(mix64(cfg.master_seed, hash_str(s.id), epoch));
    const Draw d = draw_transform(s, cfg, epoch, rng);

    Sample out = s;
    if (!d.geometric_identity()) {
        const InverseMap inv{(static_cast<double>(s.image.w) - 1.0) / 2.0,
                             (static_cast<double>(s.image.h) - 1.0) / 2.0,
                             d.shift_x,
                             d.shift_y,
                             std::cos(d.theta),
                             std::sin(d.theta),
                             1.0 / d.zoom,
                             d.flip};
        float fill = s.image.v.empty() ? 0.0f : *std::min_element(s.image.v.begin(), s.image.v.end());
        for (std::size_t y = 0; y < s.image.h; ++y)
            for (std::size_t x = 0; x < s.image.w; ++x) {
                double sx, sy;
                inv(static_cast<double>(x), static_cast<double>(y), sx, sy);
                out.image.at(y, x) = bilinear(s.image, sx, sy, fill);
                out.liver_mask.at(y, x) = nearest(s.liver_mask, sx, sy);
                out.label_map.at(y, x) = nearest(s.label_map, sx, sy);
            }
        // a lesion shifted outside the liver crop would break containment;
        // nearest-neighbor on both masks moves them together, so labels stay
        // wherever the liver went
    }

    const bool intensity_identity = d.scale == 1.0 && d.shift_i == 0.0 && d.noise_sigma == 0.0;
    if (!intensity_identity) {
        for (auto& v : out.image.v) {
            double nv = static_cast<double>(v) * d.scale + d.shift_i;
            if (d.noise_sigma > 0.0) nv += rng.normal(0.0, d.noise_sigma);
            v = static_cast<float>(nv);
        }
    }
    return out;
}

}  // namespace cascade
