#include "cascade/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "cascade/common.hpp"
#include "cascade/rng.hpp"

namespace cascade {

namespace {

constexpr double kBackgroundHu = 40.0;
constexpr double kLiverHu = 100.0;
constexpr double kCystHu = 0.0;
constexpr double kHemangiomaInteriorHu = 60.0;
constexpr double kHemangiomaRimHu = 140.0;
constexpr double kMetastasisHu = 30.0;
constexpr double kMetastasisSpeckleSigma = 22.0;
constexpr double kGlobalNoiseSigma = 5.0;

struct Ellipse {
    double cx, cy, a, b, angle;

    bool contains(double x, double y) const {
        const double dx = x - cx, dy = y - cy;
        const double ca = std::cos(angle), sa = std::sin(angle);
        const double u = dx * ca + dy * sa;
        const double v = -dx * sa + dy * ca;
        return (u * u) / (a * a) + (v * v) / (b * b) <= 1.0;
    }
};

struct SubjectGeometry {
    Ellipse liver;
    std::vector<Ellipse> organs;
    std::vector<double> organ_hu;
    double texture_amp, texture_fx, texture_fy, texture_phase;
};

SubjectGeometry draw_geometry(Rng& rng, double s) {
    SubjectGeometry g;
    g.liver.cx = rng.uniform(0.38, 0.62) * s;
    g.liver.cy = rng.uniform(0.38, 0.62) * s;
    g.liver.a = rng.uniform(0.23, 0.33) * s;
    g.liver.b = rng.uniform(0.23, 0.33) * s;
    g.liver.angle = rng.uniform(0.0, std::numbers::pi);

    const int n_organs = 3 + static_cast<int>(rng.uniform_index(4));
    for (int i = 0; i < n_organs; ++i) {
        Ellipse e;
        e.cx = rng.uniform(0.0, s);
        e.cy = rng.uniform(0.0, s);
        e.a = rng.uniform(0.08, 0.25) * s;
        e.b = rng.uniform(0.08, 0.25) * s;
        e.angle = rng.uniform(0.0, std::numbers::pi);
        g.organs.push_back(e);
        g.organ_hu.push_back(rng.uniform(-25.0, 45.0));
    }
    g.texture_amp = rng.uniform(4.0, 8.0);
    g.texture_fx = rng.uniform(0.5, 1.5) / s;
    g.texture_fy = rng.uniform(0.5, 1.5) / s;
    g.texture_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    return g;
}

SubjectGeometry jitter_geometry(const SubjectGeometry& base, Rng& rng) {
    SubjectGeometry g = base;
    g.liver.a *= rng.uniform(0.95, 1.05);
    g.liver.b *= rng.uniform(0.95, 1.05);
    return g;
}

/// Lesion footprint: a disk whose radius is optionally modulated by angular
/// harmonics (irregular metastasis boundary).
struct LesionShape {
    double cx = 0, cy = 0, r = 0;
    bool irregular = false;
    double amp[3] = {0, 0, 0};    // harmonics 2..4
    double phase[3] = {0, 0, 0};

    double radius_at(double theta) const {
        if (!irregular) return r;
        double m = 1.0;
        for (int k = 0; k < 3; ++k) m += amp[k] * std::sin((k + 2) * theta + phase[k]);
        return r * m;
    }

    bool contains(double x, double y) const {
        const double dx = x - cx, dy = y - cy;
        const double d = std::sqrt(dx * dx + dy * dy);
        if (d == 0.0) return true;
        return d <= radius_at(std::atan2(dy, dx));
    }
};

bool footprint_inside_liver(const LesionShape& le, const MaskGrid& liver) {
    const double rmax = le.r * (le.irregular ? 1.5 : 1.0);
    const long y0 = static_cast<long>(std::floor(le.cy - rmax)) - 1;
    const long y1 = static_cast<long>(std::ceil(le.cy + rmax)) + 1;
    const long x0 = static_cast<long>(std::floor(le.cx - rmax)) - 1;
    const long x1 = static_cast<long>(std::ceil(le.cx + rmax)) + 1;
    for (long y = y0; y <= y1; ++y)
        for (long x = x0; x <= x1; ++x) {
            if (!le.contains(static_cast<double>(x), static_cast<double>(y))) continue;
            if (y < 0 || x < 0 || y >= static_cast<long>(liver.h) || x >= static_cast<long>(liver.w))
                return false;
            if (liver.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) == 0)
                return false;
        }
    return true;
}

Sample make_slice(const PhantomSpec& spec, const SubjectGeometry& geo, int lesion_class,
                  Rng& rng) {
    const std::size_t s = spec.image_size;
    Sample out;
    out.lesion_class = spec.collapse_lesions && lesion_class != 0 ? kLabelLesion : lesion_class;
    out.image = ImageGrid(s, s, static_cast<float>(kBackgroundHu));
    out.liver_mask = MaskGrid(s, s, 0);
    out.label_map = MaskGrid(s, s, kLabelBackground);

    for (std::size_t y = 0; y < s; ++y)
        for (std::size_t x = 0; x < s; ++x) {
            const double xd = static_cast<double>(x), yd = static_cast<double>(y);
            double hu = kBackgroundHu;
            for (std::size_t i = 0; i < geo.organs.size(); ++i)
                if (geo.organs[i].contains(xd, yd)) hu += geo.organ_hu[i];
            if (geo.liver.contains(xd, yd)) {
                hu = kLiverHu +
                     geo.texture_amp *
                         std::sin(2.0 * std::numbers::pi *
                                      (geo.texture_fx * xd + geo.texture_fy * yd) +
                                  geo.texture_phase);
                out.liver_mask.at(y, x) = 1;
                out.label_map.at(y, x) = kLabelLiver;
            }
            out.image.at(y, x) = static_cast<float>(hu);
        }

    if (lesion_class != 0) {
        LesionShape le;
        le.r = rng.uniform(0.08, 0.16) * static_cast<double>(s);
        le.irregular = lesion_class == kLabelMetastasis;
        if (le.irregular)
            for (int k = 0; k < 3; ++k) {
                le.amp[k] = rng.uniform(0.05, 0.15);
                le.phase[k] = rng.uniform(0.0, 2.0 * std::numbers::pi);
            }
        bool placed = false;
        for (int attempt = 0; attempt < spec.placement_retries; ++attempt) {
            le.cx = geo.liver.cx + rng.uniform(-geo.liver.a, geo.liver.a);
            le.cy = geo.liver.cy + rng.uniform(-geo.liver.b, geo.liver.b);
            if (footprint_inside_liver(le, out.liver_mask)) {
                placed = true;
                break;
            }
        }
        if (!placed)
            throw ValueError("synth_generate: could not place a lesion inside the liver after " +
                             std::to_string(spec.placement_retries) + " attempts");

        const std::uint8_t label =
            spec.collapse_lesions ? kLabelLesion : static_cast<std::uint8_t>(lesion_class);
        for (std::size_t y = 0; y < s; ++y)
            for (std::size_t x = 0; x < s; ++x) {
                const double xd = static_cast<double>(x), yd = static_cast<double>(y);
                if (!le.contains(xd, yd)) continue;
                double hu = 0.0;
                switch (lesion_class) {
                    case kLabelCyst:
                        hu = kCystHu;
                        break;
                    case kLabelHemangioma: {
                        const double dx = xd - le.cx, dy = yd - le.cy;
                        const double d = std::sqrt(dx * dx + dy * dy);
                        hu = d >= 0.7 * le.r ? kHemangiomaRimHu : kHemangiomaInteriorHu;
                        break;
                    }
                    case kLabelMetastasis:
                        hu = kMetastasisHu + rng.normal(0.0, kMetastasisSpeckleSigma);
                        break;
                    default:
                        throw ValueError("synth_generate: unknown lesion class " +
                                         std::to_string(lesion_class));
                }
                out.image.at(y, x) = static_cast<float>(hu);
                out.label_map.at(y, x) = label;
            }
    }

    for (auto& v : out.image.v) {
        v += static_cast<float>(rng.normal(0.0, kGlobalNoiseSigma));
        v = std::clamp(v, -1000.0f, 1000.0f);
    }
    return out;
}

}  // namespace

SliceDataset synth_generate(const PhantomSpec& spec) {
    if (spec.image_size == 0 || spec.image_size % 16 != 0)
        throw ConfigError("synth_generate: image_size must be a positive multiple of 16");
    if (spec.healthy < 0 || spec.cysts < 0 || spec.hemangiomas < 0 || spec.metastases < 0)
        throw ConfigError("synth_generate: class counts must be non-negative");
    if (spec.slices_per_subject < 1)
        throw ConfigError("synth_generate: slices_per_subject must be positive");

    SliceDataset ds;
    ds.num_label_classes = spec.collapse_lesions ? 3 : 5;

    const std::pair<int, int> groups[] = {{0, spec.healthy},
                                          {kLabelCyst, spec.cysts},
                                          {kLabelHemangioma, spec.hemangiomas},
                                          {kLabelMetastasis, spec.metastases}};
    std::uint64_t subject_index = 0;
    for (const auto& [cls, count] : groups) {
        int made = 0;
        while (made < count) {
            const std::string subject =
                "subj_" + lesion_class_name(cls) + "_" + std::to_string(subject_index);
            Rng subj_rng(mix64(spec.seed, 0x67656f6dULL, subject_index));
            const SubjectGeometry base = draw_geometry(subj_rng, static_cast<double>(spec.image_size));
            for (int j = 0; j < spec.slices_per_subject && made < count; ++j, ++made) {
                Rng slice_rng(mix64(spec.seed, subject_index, static_cast<std::uint64_t>(j) + 1));
                const SubjectGeometry geo = j == 0 ? base : jitter_geometry(base, slice_rng);
                Sample sample = make_slice(spec, geo, cls, slice_rng);
                sample.subject_id = subject;
                sample.id = subject + "_s" + std::to_string(j);
                validate_sample(sample, ds.num_label_classes);
                ds.samples.push_back(std::move(sample));
            }
            ++subject_index;
        }
    }
    return ds;
}

}  // namespace cascade
