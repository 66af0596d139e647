#include "cascade/checkpoint.hpp"

#include <bit>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "cascade/common.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace fs = std::filesystem;
using nlohmann::json;

namespace cascade {

namespace {

constexpr int kFormatVersion = 1;

void write_f32(const fs::path& path, std::span<const float> data) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + path.string() + " for writing");
    f.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(float)));
    if (!f) throw IoError("short write to " + path.string());
}

std::vector<float> read_f32(const fs::path& path, std::size_t expected) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path.string());
    f.seekg(0, std::ios::end);
    const auto bytes = static_cast<std::size_t>(f.tellg());
    if (bytes != expected * sizeof(float))
        throw IoError(path.string() + ": expected " + std::to_string(expected * sizeof(float)) +
                      " bytes, found " + std::to_string(bytes));
    f.seekg(0);
    std::vector<float> out(expected);
    f.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(bytes));
    if (!f) throw IoError("short read from " + path.string());
    return out;
}

json config_to_json(const UNetConfig& c) {
    return json{{"in_channels", c.in_channels},   {"base_filters", c.base_filters},
                {"encoder_blocks", c.encoder_blocks}, {"num_classes", c.num_classes},
                {"input_size", c.input_size},     {"seed", c.seed}};
}

UNetConfig config_from_json(const json& j) {
    UNetConfig c;
    c.in_channels = j.at("in_channels").get<std::size_t>();
    c.base_filters = j.at("base_filters").get<std::size_t>();
    c.encoder_blocks = j.at("encoder_blocks").get<std::size_t>();
    c.num_classes = j.at("num_classes").get<std::size_t>();
    c.input_size = j.at("input_size").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

}  // namespace

void save_checkpoint(const std::string& dir, UNet<float>& model, const AdamState<float>* adam,
                     const std::string& extra_json) {
    fs::create_directories(dir);
    json manifest;
    manifest["format"] = "cascade-checkpoint";
    manifest["format_version"] = kFormatVersion;
    manifest["model"] = config_to_json(model.config());
    manifest["extra"] = json::parse(extra_json);

    auto params = model.parameters();
    json jparams = json::array();
    for (const auto* p : params) {
        write_f32(fs::path(dir) / (p->name + ".bin"), p->value.v());
        jparams.push_back(json{{"name", p->name},
                               {"shape", p->value.shape()},
                               {"block_id", p->block_id},
                               {"trainable", p->trainable},
                               {"file", p->name + ".bin"}});
    }
    manifest["params"] = jparams;

    json jbuffers = json::array();
    for (auto& b : model.buffers()) {
        json entry{{"name", b.name}, {"initialized", b.state->initialized}};
        if (b.state->initialized) {
            write_f32(fs::path(dir) / (b.name + ".mean.bin"), b.state->running_mean);
            write_f32(fs::path(dir) / (b.name + ".var.bin"), b.state->running_var);
            entry["mean_file"] = b.name + ".mean.bin";
            entry["var_file"] = b.name + ".var.bin";
            entry["channels"] = b.state->running_mean.size();
        }
        jbuffers.push_back(entry);
    }
    manifest["buffers"] = jbuffers;

    if (adam) {
        if (!adam->moments.empty() && adam->moments.size() != params.size())
            throw ShapeError("save_checkpoint: Adam state does not match parameter list");
        json jadam{{"t", adam->t}, {"moments_present", !adam->moments.empty()}};
        for (std::size_t i = 0; i < adam->moments.size(); ++i) {
            write_f32(fs::path(dir) / (params[i]->name + ".adam_m.bin"), adam->moments[i].m.v());
            write_f32(fs::path(dir) / (params[i]->name + ".adam_v.bin"), adam->moments[i].v.v());
        }
        manifest["adam"] = jadam;
    }

    std::ofstream mf(fs::path(dir) / "manifest.json", std::ios::trunc);
    if (!mf) throw IoError("cannot write " + (fs::path(dir) / "manifest.json").string());
    mf << manifest.dump(2) << "\n";
}

LoadedCheckpoint load_checkpoint(const std::string& dir) {
    const fs::path mpath = fs::path(dir) / "manifest.json";
    std::ifstream mf(mpath);
    if (!mf) throw IoError("cannot open " + mpath.string());
    json manifest;
    try {
        manifest = json::parse(mf);
    } catch (const json::exception& e) {
        throw IoError(mpath.string() + ": " + e.what());
    }
    if (manifest.value("format", "") != "cascade-checkpoint")
        throw IoError(mpath.string() + ": not a checkpoint manifest");
    if (manifest.value("format_version", -1) != kFormatVersion)
        throw IoError(mpath.string() + ": unsupported checkpoint format version " +
                      std::to_string(manifest.value("format_version", -1)));

    LoadedCheckpoint out{UNet<float>::build(config_from_json(manifest.at("model"))), {}, false,
                         manifest.value("extra", json::object()).dump()};

    auto params = out.model.parameters();
    const auto& jparams = manifest.at("params");
    if (jparams.size() != params.size())
        throw IoError(mpath.string() + ": manifest lists " + std::to_string(jparams.size()) +
                      " parameters, model has " + std::to_string(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& jp = jparams[i];
        Parameter<float>* p = params[i];
        if (jp.at("name").get<std::string>() != p->name)
            throw IoError(mpath.string() + ": parameter order mismatch at '" + p->name + "'");
        if (jp.at("shape").get<Shape>() != p->value.shape())
            throw IoError(mpath.string() + ": shape mismatch for '" + p->name + "'");
        auto vals = read_f32(fs::path(dir) / jp.at("file").get<std::string>(), p->value.size());
        std::copy(vals.begin(), vals.end(), p->value.v().begin());
        p->set_trainable(jp.at("trainable").get<bool>());
    }

    for (auto& b : out.model.buffers()) {
        bool found = false;
        for (const auto& jb : manifest.at("buffers")) {
            if (jb.at("name").get<std::string>() != b.name) continue;
            found = true;
            b.state->initialized = jb.at("initialized").get<bool>();
            if (b.state->initialized) {
                const auto ch = jb.at("channels").get<std::size_t>();
                b.state->running_mean = read_f32(fs::path(dir) / jb.at("mean_file").get<std::string>(), ch);
                b.state->running_var = read_f32(fs::path(dir) / jb.at("var_file").get<std::string>(), ch);
            }
        }
        if (!found) throw IoError(mpath.string() + ": missing buffer entry '" + b.name + "'");
    }

    if (manifest.contains("adam")) {
        out.has_adam = true;
        out.adam.t = manifest["adam"].at("t").get<std::int64_t>();
        if (manifest["adam"].value("moments_present", false)) {
            out.adam.moments.resize(params.size());
            for (std::size_t i = 0; i < params.size(); ++i) {
                auto m = read_f32(fs::path(dir) / (params[i]->name + ".adam_m.bin"),
                                  params[i]->value.size());
                auto v = read_f32(fs::path(dir) / (params[i]->name + ".adam_v.bin"),
                                  params[i]->value.size());
                out.adam.moments[i].m = Tensor<float>(params[i]->value.shape(), std::move(m));
                out.adam.moments[i].v = Tensor<float>(params[i]->value.shape(), std::move(v));
            }
        }
    }
    return out;
}

bool checkpoint_exists(const std::string& dir) {
    return fs::exists(fs::path(dir) / "manifest.json");
}

}  // namespace cascade
