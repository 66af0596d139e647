#include "cascade/cascade.hpp"

#include <algorithm>
#include <array>
#include <map>

#include "cascade/common.hpp"

namespace cascade {

namespace {

struct Bbox {
    std::size_t top, left, bottom, right;  // inclusive
};

std::optional<Bbox> tight_bbox(const MaskGrid& mask) {
    std::optional<Bbox> box;
    for (std::size_t y = 0; y < mask.h; ++y)
        for (std::size_t x = 0; x < mask.w; ++x) {
            if (mask.at(y, x) == 0) continue;
            if (!box) {
                box = Bbox{y, x, y, x};
            } else {
                box->top = std::min(box->top, y);
                box->left = std::min(box->left, x);
                box->bottom = std::max(box->bottom, y);
                box->right = std::max(box->right, x);
            }
        }
    return box;
}

std::size_t ceil16(std::size_t v) { return (v + 15) / 16 * 16; }
std::size_t floor16(std::size_t v) { return v / 16 * 16; }

RoiBox finalize_box(const std::optional<Bbox>& bbox, std::size_t h, std::size_t w,
                    std::size_t margin) {
    RoiBox out;
    out.margin = margin;
    if (!bbox) {
        log_warn("extract_roi: empty liver mask, falling back to the full image");
        out.top = 0;
        out.left = 0;
        out.height = floor16(h) == 0 ? h : floor16(h);
        out.width = floor16(w) == 0 ? w : floor16(w);
        return out;
    }
    const std::size_t top = bbox->top > margin ? bbox->top - margin : 0;
    const std::size_t left = bbox->left > margin ? bbox->left - margin : 0;
    const std::size_t bottom = std::min(h - 1, bbox->bottom + margin);
    const std::size_t right = std::min(w - 1, bbox->right + margin);

    std::size_t bh = ceil16(bottom - top + 1);
    std::size_t bw = ceil16(right - left + 1);
    if (bh > floor16(h)) bh = floor16(h);
    if (bw > floor16(w)) bw = floor16(w);
    out.height = bh;
    out.width = bw;
    out.top = std::min(top, h - bh);
    out.left = std::min(left, w - bw);
    return out;
}

template <typename T>
Grid<T> crop_grid(const Grid<T>& g, const RoiBox& box) {
    if (box.top + box.height > g.h || box.left + box.width > g.w)
        throw ShapeError("crop: box exceeds image bounds");
    Grid<T> out(box.height, box.width);
    for (std::size_t y = 0; y < box.height; ++y)
        for (std::size_t x = 0; x < box.width; ++x)
            out.at(y, x) = g.at(box.top + y, box.left + x);
    return out;
}

}  // namespace

RoiBox extract_roi(const MaskGrid& mask, std::size_t margin) {
    return finalize_box(tight_bbox(mask), mask.h, mask.w, margin);
}

RoiBox extract_roi_union(std::span<const MaskGrid> masks, std::size_t margin) {
    if (masks.empty()) throw ValueError("extract_roi_union: no masks given");
    std::optional<Bbox> merged;
    for (const auto& m : masks) {
        if (m.h != masks[0].h || m.w != masks[0].w)
            throw ShapeError("extract_roi_union: masks must share one shape");
        const auto b = tight_bbox(m);
        if (!b) continue;
        if (!merged) {
            merged = b;
        } else {
            merged->top = std::min(merged->top, b->top);
            merged->left = std::min(merged->left, b->left);
            merged->bottom = std::max(merged->bottom, b->bottom);
            merged->right = std::max(merged->right, b->right);
        }
    }
    return finalize_box(merged, masks[0].h, masks[0].w, margin);
}

MaskGrid refine_liver_mask(const MaskGrid& mask) {
    MaskGrid out(mask.h, mask.w, 0);
    if (mask.size() == 0) return out;

    std::vector<std::int32_t> label(mask.size(), -1);
    std::vector<std::size_t> stack;
    std::int32_t best_label = -1;
    std::size_t best_size = 0;
    std::int32_t next = 0;

    for (std::size_t start = 0; start < mask.size(); ++start) {
        if (mask.v[start] == 0 || label[start] >= 0) continue;
        std::size_t size = 0;
        stack.push_back(start);
        label[start] = next;
        while (!stack.empty()) {
            const std::size_t i = stack.back();
            stack.pop_back();
            ++size;
            const long y = static_cast<long>(i / mask.w);
            const long x = static_cast<long>(i % mask.w);
            for (long dy = -1; dy <= 1; ++dy)
                for (long dx = -1; dx <= 1; ++dx) {
                    if (dy == 0 && dx == 0) continue;
                    const long ny = y + dy, nx = x + dx;
                    if (ny < 0 || nx < 0 || ny >= static_cast<long>(mask.h) ||
                        nx >= static_cast<long>(mask.w))
                        continue;
                    const std::size_t ni =
                        static_cast<std::size_t>(ny) * mask.w + static_cast<std::size_t>(nx);
                    if (mask.v[ni] == 0 || label[ni] >= 0) continue;
                    label[ni] = next;
                    stack.push_back(ni);
                }
        }
        if (size > best_size) {  // scan order breaks ties toward the first component
            best_size = size;
            best_label = next;
        }
        ++next;
    }
    if (best_label >= 0)
        for (std::size_t i = 0; i < mask.size(); ++i)
            if (label[i] == best_label) out.v[i] = 1;
    return out;
}

std::vector<MaskGrid> refine_liver_volume(const std::vector<MaskGrid>& slices) {
    if (slices.empty()) return {};
    const std::size_t h = slices[0].h, w = slices[0].w, d = slices.size();
    for (const auto& s : slices)
        if (s.h != h || s.w != w)
            throw ShapeError("refine_liver_volume: slices must share one shape");

    const std::size_t hw = h * w;
    auto flat = [&](std::size_t z, std::size_t y, std::size_t x) { return z * hw + y * w + x; };

    std::vector<std::int32_t> label(d * hw, -1);
    std::vector<std::size_t> stack;
    std::int32_t best_label = -1;
    std::size_t best_size = 0;
    std::int32_t next = 0;

    auto voxel = [&](std::size_t i) -> std::uint8_t { return slices[i / hw].v[i % hw]; };

    for (std::size_t start = 0; start < d * hw; ++start) {
        if (voxel(start) == 0 || label[start] >= 0) continue;
        std::size_t size = 0;
        stack.push_back(start);
        label[start] = next;
        while (!stack.empty()) {
            const std::size_t i = stack.back();
            stack.pop_back();
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
                        const std::size_t ni = flat(static_cast<std::size_t>(nz),
                                                    static_cast<std::size_t>(ny),
                                                    static_cast<std::size_t>(nx));
                        if (voxel(ni) == 0 || label[ni] >= 0) continue;
                        label[ni] = next;
                        stack.push_back(ni);
                    }
        }
        if (size > best_size) {
            best_size = size;
            best_label = next;
        }
        ++next;
    }

    std::vector<MaskGrid> out(d, MaskGrid(h, w, 0));
    if (best_label >= 0)
        for (std::size_t i = 0; i < d * hw; ++i)
            if (label[i] == best_label) out[i / hw].v[i % hw] = 1;
    return out;
}

ImageGrid crop(const ImageGrid& g, const RoiBox& box) { return crop_grid(g, box); }
MaskGrid crop(const MaskGrid& g, const RoiBox& box) { return crop_grid(g, box); }

int majority_lesion_class(const MaskGrid& label_map) {
    std::array<std::size_t, 256> counts{};
    for (std::uint8_t lbl : label_map.v)
        if (lbl >= kLabelLesion) ++counts[lbl];
    int best = 0;
    std::size_t best_count = 0;
    for (int cls = kLabelLesion; cls < 256; ++cls)
        if (counts[cls] > best_count) {  // strict: ties keep the smaller id
            best_count = counts[cls];
            best = cls;
        }
    return best;
}

MaskGrid predict_liver(UNet<float>& liver_model, const Sample& sample,
                       const NormStats& liver_stats) {
    const ImageGrid prepped = standardize(hu_window(sample.image), liver_stats);
    Tensor<float> logits = liver_model.forward(nullptr, image_to_tensor(prepped), false);
    MaskGrid arg = argmax_labels(logits);
    MaskGrid liver(arg.h, arg.w, 0);
    for (std::size_t i = 0; i < arg.size(); ++i) liver.v[i] = arg.v[i] == kLabelLiver ? 1 : 0;
    return refine_liver_mask(liver);
}

CascadeOutput run_cascade(const Sample& sample, UNet<float>& liver_model,
                          const NormStats& liver_stats, UNet<float>& lesion_model,
                          const NormStats& lesion_stats, std::size_t margin,
                          const RoiBox* fixed_box) {
    CascadeOutput out;
    out.liver_mask = predict_liver(liver_model, sample, liver_stats);
    out.box = fixed_box ? *fixed_box : extract_roi(out.liver_mask, margin);

    const ImageGrid prepped = standardize(hu_window(sample.image), lesion_stats);
    const ImageGrid roi_image = crop(prepped, out.box);
    Tensor<float> logits = lesion_model.forward(nullptr, image_to_tensor(roi_image), false);
    const MaskGrid roi_labels = argmax_labels(logits);

    // outside the box: stage-1 background/liver; inside: stage-2 labels
    out.label_map = MaskGrid(sample.image.h, sample.image.w, kLabelBackground);
    for (std::size_t i = 0; i < out.liver_mask.size(); ++i)
        if (out.liver_mask.v[i]) out.label_map.v[i] = kLabelLiver;
    for (std::size_t y = 0; y < out.box.height; ++y)
        for (std::size_t x = 0; x < out.box.width; ++x)
            out.label_map.at(out.box.top + y, out.box.left + x) = roi_labels.at(y, x);

    out.majority_class = majority_lesion_class(out.label_map);
    return out;
}

}  // namespace cascade
