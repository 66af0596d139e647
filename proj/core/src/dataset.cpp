#include "cascade/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>

#include <json.hpp>

#include "cascade/common.hpp"
#include "cascade/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace cascade {

std::string lesion_class_name(int label) {
    switch (label) {
        case 0: return "none";
        case kLabelCyst: return "cyst";
        case kLabelHemangioma: return "hemangioma";
        case kLabelMetastasis: return "metastasis";
        default: return "label" + std::to_string(label);
    }
}

void validate_sample(const Sample& s, int num_label_classes) {
    if (s.image.h != s.liver_mask.h || s.image.w != s.liver_mask.w ||
        s.image.h != s.label_map.h || s.image.w != s.label_map.w)
        throw ValueError("sample '" + s.id + "': image and mask shapes differ");
    for (std::size_t i = 0; i < s.label_map.size(); ++i) {
        const std::uint8_t lbl = s.label_map.v[i];
        if (lbl >= num_label_classes)
            throw ValueError("sample '" + s.id + "': label " + std::to_string(lbl) +
                             " outside domain of " + std::to_string(num_label_classes) + " classes");
        if (lbl >= kLabelLesion && s.liver_mask.v[i] == 0)
            throw ValueError("sample '" + s.id + "': lesion pixel outside the liver mask");
    }
    if (s.lesion_class == 0)
        for (std::uint8_t lbl : s.label_map.v)
            if (lbl >= kLabelLesion)
                throw ValueError("sample '" + s.id + "': healthy slice contains lesion pixels");
}

// --- pre-processing ---------------------------------------------------------

ImageGrid hu_window(const ImageGrid& image) {
    ImageGrid out = image;
    for (auto& v : out.v) v = std::clamp(v, kHuWindowLo, kHuWindowHi);
    return out;
}

NormStats compute_liver_stats(std::span<const Sample> samples) {
    double sum = 0.0, sum2 = 0.0;
    std::size_t n = 0;
    for (const auto& s : samples) {
        for (std::size_t i = 0; i < s.image.size(); ++i) {
            if (s.liver_mask.v[i] == 0) continue;
            const double v = std::clamp(s.image.v[i], kHuWindowLo, kHuWindowHi);
            sum += v;
            sum2 += v * v;
            ++n;
        }
    }
    if (n == 0) throw ValueError("compute_liver_stats: no liver pixels in the given samples");
    NormStats st;
    st.mean = sum / static_cast<double>(n);
    st.stddev = std::sqrt(std::max(0.0, sum2 / static_cast<double>(n) - st.mean * st.mean));
    return st;
}

ImageGrid standardize(const ImageGrid& image, const NormStats& stats) {
    if (!(stats.stddev > 0.0)) throw ValueError("standardize: stddev must be positive");
    ImageGrid out = image;
    const float mean = static_cast<float>(stats.mean);
    const float inv = static_cast<float>(1.0 / stats.stddev);
    for (auto& v : out.v) v = (v - mean) * inv;
    return out;
}

std::vector<double> compute_class_weights(const SliceDataset& ds, int num_classes) {
    if (num_classes < 1) throw ConfigError("compute_class_weights: num_classes must be positive");
    std::vector<std::size_t> counts(num_classes, 0);
    std::size_t total = 0;
    for (const auto& s : ds.samples)
        for (std::uint8_t lbl : s.label_map.v) {
            if (lbl >= num_classes)
                throw ValueError("compute_class_weights: label " + std::to_string(lbl) +
                                 " outside domain");
            ++counts[lbl];
            ++total;
        }
    if (total == 0) throw ValueError("compute_class_weights: dataset has no pixels");

    std::vector<double> inv(num_classes);
    for (int c = 0; c < num_classes; ++c) {
        double ratio = static_cast<double>(counts[c]) / static_cast<double>(total);
        if (ratio <= 0.0) {
            log_warn("compute_class_weights: class " + std::to_string(c) +
                     " has no pixels; clamping its ratio to 1e-6");
            ratio = 1e-6;
        }
        inv[c] = 1.0 / ratio;
    }
    double inv_sum = 0.0;
    for (double x : inv) inv_sum += x;
    std::vector<double> w(num_classes);
    for (int c = 0; c < num_classes; ++c)
        w[c] = inv[c] / inv_sum * static_cast<double>(num_classes);
    return w;
}

// --- folds -------------------------------------------------------------------

FoldSplit make_folds(const SliceDataset& ds, int k, std::uint64_t seed) {
    if (k < 2) throw ConfigError("make_folds: k must be at least 2");
    // subject -> class, in first-appearance order
    std::vector<std::pair<std::string, int>> subjects;
    std::map<std::string, std::size_t> seen;
    for (const auto& s : ds.samples) {
        auto [it, inserted] = seen.emplace(s.subject_id, subjects.size());
        if (inserted)
            subjects.emplace_back(s.subject_id, s.lesion_class);
        else if (subjects[it->second].second != s.lesion_class)
            throw ValueError("make_folds: subject '" + s.subject_id + "' mixes lesion classes");
    }
    if (subjects.size() < static_cast<std::size_t>(k))
        throw ValueError("make_folds: fewer subjects than folds");

    // stratified round-robin deal, class by class
    std::map<int, std::vector<std::string>> by_class;
    for (const auto& [id, cls] : subjects) by_class[cls].push_back(id);

    FoldSplit split;
    split.fold_subjects.resize(k);
    std::size_t next_fold = 0;
    for (auto& [cls, ids] : by_class) {
        Rng rng(mix64(seed, 0x666f6c64ULL, static_cast<std::uint64_t>(cls)));
        rng.shuffle(ids);
        for (const auto& id : ids) {
            split.fold_subjects[next_fold % k].push_back(id);
            ++next_fold;
        }
    }
    return split;
}

std::vector<int> fold_of_samples(const SliceDataset& ds, const FoldSplit& split) {
    std::map<std::string, int> fold_of;
    for (std::size_t f = 0; f < split.fold_subjects.size(); ++f)
        for (const auto& id : split.fold_subjects[f]) fold_of[id] = static_cast<int>(f);
    std::vector<int> out;
    out.reserve(ds.samples.size());
    for (const auto& s : ds.samples) {
        auto it = fold_of.find(s.subject_id);
        out.push_back(it == fold_of.end() ? -1 : it->second);
    }
    return out;
}

// --- container format --------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'C', 'S', 'C', 'S', 'L', 'I', 'C', 'E'};
constexpr std::uint32_t kSliceVersion = 1;
constexpr std::uint32_t kDtypeF32 = 1;
constexpr std::uint32_t kDtypeU8 = 2;
constexpr int kManifestVersion = 1;

void write_slice_file(const std::string& path, std::uint32_t dtype, std::uint32_t h,
                      std::uint32_t w, const void* payload, std::size_t bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + path + " for writing");
    f.write(kMagic, 8);
    f.write(reinterpret_cast<const char*>(&kSliceVersion), 4);
    f.write(reinterpret_cast<const char*>(&dtype), 4);
    f.write(reinterpret_cast<const char*>(&h), 4);
    f.write(reinterpret_cast<const char*>(&w), 4);
    f.write(reinterpret_cast<const char*>(payload), static_cast<std::streamsize>(bytes));
    if (!f) throw IoError("short write to " + path);
}

struct SliceHeader {
    std::uint32_t dtype = 0, h = 0, w = 0;
};

SliceHeader read_slice_header(std::ifstream& f, const std::string& path) {
    char magic[8];
    std::uint32_t version = 0;
    SliceHeader hd;
    f.read(magic, 8);
    f.read(reinterpret_cast<char*>(&version), 4);
    f.read(reinterpret_cast<char*>(&hd.dtype), 4);
    if (!f || std::memcmp(magic, kMagic, 8) != 0)
        throw IoError(path + ": corrupt slice header");
    if (version != kSliceVersion)
        throw IoError(path + ": incompatible slice format version " + std::to_string(version) +
                      " (expected " + std::to_string(kSliceVersion) + ")");
    f.read(reinterpret_cast<char*>(&hd.h), 4);
    f.read(reinterpret_cast<char*>(&hd.w), 4);
    if (!f) throw IoError(path + ": corrupt slice header");
    return hd;
}

}  // namespace

void write_image_file(const std::string& path, const ImageGrid& g) {
    write_slice_file(path, kDtypeF32, static_cast<std::uint32_t>(g.h),
                     static_cast<std::uint32_t>(g.w), g.v.data(), g.v.size() * sizeof(float));
}

void write_mask_file(const std::string& path, const MaskGrid& g) {
    write_slice_file(path, kDtypeU8, static_cast<std::uint32_t>(g.h),
                     static_cast<std::uint32_t>(g.w), g.v.data(), g.v.size());
}

ImageGrid read_image_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    const SliceHeader hd = read_slice_header(f, path);
    if (hd.dtype != kDtypeF32) throw IoError(path + ": expected a float32 image file");
    ImageGrid g(hd.h, hd.w);
    f.read(reinterpret_cast<char*>(g.v.data()),
           static_cast<std::streamsize>(g.v.size() * sizeof(float)));
    if (!f) throw IoError(path + ": truncated payload");
    return g;
}

MaskGrid read_mask_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    const SliceHeader hd = read_slice_header(f, path);
    if (hd.dtype != kDtypeU8) throw IoError(path + ": expected a uint8 mask file");
    MaskGrid g(hd.h, hd.w);
    f.read(reinterpret_cast<char*>(g.v.data()), static_cast<std::streamsize>(g.v.size()));
    if (!f) throw IoError(path + ": truncated payload");
    return g;
}

void write_dataset(const SliceDataset& ds, const std::string& dir,
                   const std::optional<NormStats>& train_stats) {
    fs::create_directories(dir);
    json manifest;
    manifest["format"] = "cascade-dataset";
    manifest["format_version"] = kManifestVersion;
    manifest["num_label_classes"] = ds.num_label_classes;

    std::map<std::string, int> class_counts;
    json jsamples = json::array();
    for (const auto& s : ds.samples) {
        validate_sample(s, ds.num_label_classes);
        const std::string img = s.id + ".image.bin";
        const std::string liv = s.id + ".liver.bin";
        const std::string lbl = s.id + ".labels.bin";
        write_image_file((fs::path(dir) / img).string(), s.image);
        write_mask_file((fs::path(dir) / liv).string(), s.liver_mask);
        write_mask_file((fs::path(dir) / lbl).string(), s.label_map);
        jsamples.push_back(json{{"id", s.id},
                                {"subject_id", s.subject_id},
                                {"lesion_class", s.lesion_class},
                                {"role", s.role},
                                {"image", img},
                                {"liver_mask", liv},
                                {"label_map", lbl}});
        ++class_counts[lesion_class_name(s.lesion_class)];
    }
    manifest["samples"] = jsamples;
    manifest["class_counts"] = class_counts;
    if (train_stats)
        manifest["train_liver_stats"] = json{{"mean", train_stats->mean},
                                             {"std", train_stats->stddev}};

    std::ofstream mf(fs::path(dir) / "manifest.json", std::ios::trunc);
    if (!mf) throw IoError("cannot write " + (fs::path(dir) / "manifest.json").string());
    mf << manifest.dump(2) << "\n";
}

LoadedDataset read_dataset(const std::string& dir) {
    const fs::path mpath = fs::path(dir) / "manifest.json";
    std::ifstream mf(mpath);
    if (!mf) throw IoError("cannot open " + mpath.string());
    json manifest;
    try {
        manifest = json::parse(mf);
    } catch (const json::exception& e) {
        throw IoError(mpath.string() + ": " + e.what());
    }
    if (manifest.value("format", "") != "cascade-dataset")
        throw IoError(mpath.string() + ": not a dataset manifest");
    if (manifest.value("format_version", -1) != kManifestVersion)
        throw IoError(mpath.string() + ": incompatible manifest version " +
                      std::to_string(manifest.value("format_version", -1)));

    LoadedDataset out;
    out.data.num_label_classes = manifest.at("num_label_classes").get<int>();
    for (const auto& js : manifest.at("samples")) {
        Sample s;
        s.id = js.at("id").get<std::string>();
        s.subject_id = js.at("subject_id").get<std::string>();
        s.lesion_class = js.at("lesion_class").get<int>();
        s.role = js.value("role", "");
        s.image = read_image_file((fs::path(dir) / js.at("image").get<std::string>()).string());
        s.liver_mask =
            read_mask_file((fs::path(dir) / js.at("liver_mask").get<std::string>()).string());
        s.label_map =
            read_mask_file((fs::path(dir) / js.at("label_map").get<std::string>()).string());
        validate_sample(s, out.data.num_label_classes);
        out.data.samples.push_back(std::move(s));
    }
    if (manifest.contains("train_liver_stats"))
        out.train_stats = NormStats{manifest["train_liver_stats"].at("mean").get<double>(),
                                    manifest["train_liver_stats"].at("std").get<double>()};
    return out;
}

bool dataset_exists(const std::string& dir) {
    return fs::exists(fs::path(dir) / "manifest.json");
}

// --- tensor bridging ----------------------------------------------------------

Tensor<float> image_to_tensor(const ImageGrid& g) {
    return Tensor<float>(Shape{1, 1, g.h, g.w}, g.v);
}

Tensor<float> batch_to_tensor(std::span<const ImageGrid> images) {
    if (images.empty()) throw ValueError("batch_to_tensor: empty batch");
    const std::size_t h = images[0].h, w = images[0].w;
    Tensor<float> out(Shape{images.size(), 1, h, w});
    float* dst = out.data();
    for (const auto& img : images) {
        if (img.h != h || img.w != w)
            throw ShapeError("batch_to_tensor: images in a batch must share one shape");
        std::copy(img.v.begin(), img.v.end(), dst);
        dst += h * w;
    }
    return out;
}

Tensor<float> labels_to_onehot(std::span<const MaskGrid> labels, int num_classes) {
    if (labels.empty()) throw ValueError("labels_to_onehot: empty batch");
    const std::size_t h = labels[0].h, w = labels[0].w;
    Tensor<float> out(Shape{labels.size(), static_cast<std::size_t>(num_classes), h, w});
    float* dst = out.data();
    const std::size_t hw = h * w;
    for (std::size_t n = 0; n < labels.size(); ++n) {
        const auto& lm = labels[n];
        if (lm.h != h || lm.w != w)
            throw ShapeError("labels_to_onehot: label maps must share one shape");
        for (std::size_t i = 0; i < hw; ++i) {
            const std::uint8_t lbl = lm.v[i];
            if (lbl >= num_classes)
                throw ValueError("labels_to_onehot: label " + std::to_string(lbl) +
                                 " outside domain of " + std::to_string(num_classes) + " classes");
            dst[(n * num_classes + lbl) * hw + i] = 1.0f;
        }
    }
    return out;
}

MaskGrid argmax_labels(const Tensor<float>& logits) {
    if (logits.ndim() != 4 || logits.dim(0) != 1)
        throw ShapeError("argmax_labels: expected a [1,K,H,W] tensor");
    const std::size_t k = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
    const std::size_t hw = h * w;
    MaskGrid out(h, w);
    const float* v = logits.data();
    for (std::size_t i = 0; i < hw; ++i) {
        std::size_t best = 0;
        float bv = v[i];
        for (std::size_t c = 1; c < k; ++c)
            if (v[c * hw + i] > bv) {
                bv = v[c * hw + i];
                best = c;
            }
        out.v[i] = static_cast<std::uint8_t>(best);
    }
    return out;
}

}  // namespace cascade
