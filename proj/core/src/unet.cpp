#include "cascade/unet.hpp"

#include <cmath>

#include "cascade/common.hpp"
#include "cascade/rng.hpp"

namespace cascade {

namespace {

template <typename T>
Tensor<T> kaiming_conv(Rng& rng, std::size_t f, std::size_t c, std::size_t k) {
    Tensor<T> w(Shape{f, c, k, k});
    const double stddev = std::sqrt(2.0 / static_cast<double>(c * k * k));
    for (auto& v : w.v()) v = static_cast<T>(rng.normal(0.0, stddev));
    return w;
}

template <typename T>
ConvUnit<T> make_unit(Rng& rng, const std::string& prefix, int block, std::size_t c_in,
                      std::size_t c_out) {
    ConvUnit<T> u;
    u.conv.w = Parameter<T>(prefix + ".conv.w", block, kaiming_conv<T>(rng, c_out, c_in, 3));
    u.conv.b = Parameter<T>(prefix + ".conv.b", block, Tensor<T>(Shape{c_out}));
    u.bn.gamma = Parameter<T>(prefix + ".bn.gamma", block, Tensor<T>(Shape{c_out}, T(1)));
    u.bn.beta = Parameter<T>(prefix + ".bn.beta", block, Tensor<T>(Shape{c_out}));
    return u;
}

}  // namespace

void validate_unet_config(const UNetConfig& c) {
    if (c.encoder_blocks != 5)
        throw ConfigError("unet: encoder_blocks must be 5, got " +
                          std::to_string(c.encoder_blocks));
    if (c.num_classes != 3 && c.num_classes != 5)
        throw ConfigError("unet: num_classes must be 3 or 5, got " +
                          std::to_string(c.num_classes));
    if (c.in_channels == 0) throw ConfigError("unet: in_channels must be positive");
    if (c.base_filters == 0) throw ConfigError("unet: base_filters must be positive");
    const std::size_t div = std::size_t(1) << (c.encoder_blocks - 1);
    if (c.input_size == 0 || c.input_size % div != 0)
        throw ConfigError("unet: input_size " + std::to_string(c.input_size) +
                          " is not a positive multiple of " + std::to_string(div));
}

template <typename T>
UNet<T> UNet<T>::build(const UNetConfig& config) {
    validate_unet_config(config);
    UNet<T> net;
    net.cfg_ = config;
    Rng rng(mix64(config.seed, 0x756e6574ULL));

    const std::size_t nb = config.encoder_blocks;
    std::size_t c_in = config.in_channels;
    for (std::size_t k = 0; k < nb; ++k) {
        const int block = static_cast<int>(k + 1);
        const std::size_t c_out = config.base_filters << k;
        const std::string prefix = "enc" + std::to_string(block);
        EncoderBlock<T> eb;
        eb.c1 = make_unit<T>(rng, prefix + ".u1", block, c_in, c_out);
        eb.c2 = make_unit<T>(rng, prefix + ".u2", block, c_out, c_out);
        eb.pooled = k + 1 < nb;
        net.encoder_.push_back(std::move(eb));
        c_in = c_out;
    }
    for (std::size_t j = 0; j < nb - 1; ++j) {
        const int block = static_cast<int>(nb + 1 + j);  // 6..9
        const std::size_t ch_in = config.base_filters << (nb - 1 - j);
        const std::size_t ch_out = ch_in / 2;
        const std::string prefix = "dec" + std::to_string(block);
        DecoderBlock<T> db;
        // [C, F, 2, 2] transposed-conv kernel; stride equals kernel size, so
        // each output pixel sees one tap per input channel.
        Tensor<T> up(Shape{ch_in, ch_out, 2, 2});
        {
            const double stddev = std::sqrt(2.0 / static_cast<double>(ch_in));
            for (auto& v : up.v()) v = static_cast<T>(rng.normal(0.0, stddev));
        }
        db.up = Parameter<T>(prefix + ".up.w", block, std::move(up));
        db.c1 = make_unit<T>(rng, prefix + ".u1", block, ch_in, ch_out);  // concat doubles ch_out
        db.c2 = make_unit<T>(rng, prefix + ".u2", block, ch_out, ch_out);
        net.decoder_.push_back(std::move(db));
    }
    net.head_.w = Parameter<T>("head.w", kHeadBlockId,
                               kaiming_conv<T>(rng, config.num_classes, config.base_filters, 1));
    net.head_.b = Parameter<T>("head.b", kHeadBlockId, Tensor<T>(Shape{config.num_classes}));
    return net;
}

template <typename T>
Tensor<T> UNet<T>::conv_unit(Tape<T>* tape, const Tensor<T>& x, ConvUnit<T>& unit, bool training) {
    Tensor<T> h = conv2d(tape, x, unit.conv.w.value, unit.conv.b.value);
    const bool update_running = training && unit.bn.gamma.trainable;
    h = batch_norm(tape, h, unit.bn.gamma.value, unit.bn.beta.value, unit.bn.state, training,
                   update_running);
    return relu(tape, h);
}

template <typename T>
Tensor<T> UNet<T>::forward(Tape<T>* tape, const Tensor<T>& batch, bool training,
                           ForwardTrace* trace) {
    if (!batch.defined() || batch.ndim() != 4)
        throw ShapeError("unet forward: batch must be [N,C,H,W]");
    if (batch.dim(1) != cfg_.in_channels)
        throw ShapeError("unet forward: batch has " + std::to_string(batch.dim(1)) +
                         " channels, model expects " + std::to_string(cfg_.in_channels));
    const std::size_t div = std::size_t(1) << (cfg_.encoder_blocks - 1);
    if (batch.dim(2) % div != 0 || batch.dim(3) % div != 0 || batch.dim(2) == 0 ||
        batch.dim(3) == 0)
        throw ShapeError("unet forward: spatial extents of " + shape_str(batch.shape()) +
                         " must be positive multiples of " + std::to_string(div));

    std::vector<Tensor<T>> skips;
    Tensor<T> h = batch;
    for (auto& eb : encoder_) {
        h = conv_unit(tape, h, eb.c1, training);
        h = conv_unit(tape, h, eb.c2, training);
        if (trace) trace->encoder_shapes.push_back(h.shape());
        if (eb.pooled) {
            skips.push_back(h);
            h = max_pool_2x2(tape, h);
        }
    }
    for (std::size_t j = 0; j < decoder_.size(); ++j) {
        auto& db = decoder_[j];
        h = transposed_conv_2x2(tape, h, db.up.value);
        h = concat_channels(tape, h, skips[skips.size() - 1 - j]);
        h = conv_unit(tape, h, db.c1, training);
        h = conv_unit(tape, h, db.c2, training);
    }
    return conv2d(tape, h, head_.w.value, head_.b.value);
}

template <typename T>
void UNet<T>::swap_head(std::size_t new_num_classes, std::uint64_t seed) {
    if (cfg_.num_classes == new_num_classes) {
        log_warn("swap_head: model already has " + std::to_string(new_num_classes) +
                 " classes; nothing to do");
        return;
    }
    if (cfg_.num_classes != 3 || new_num_classes != 5)
        throw ConfigError("swap_head: only the 3 -> 5 class expansion is supported");

    Rng rng(mix64(seed, 0x68656164ULL));
    const std::size_t f = cfg_.base_filters;
    Tensor<T> w(Shape{new_num_classes, f, 1, 1});
    Tensor<T> b(Shape{new_num_classes});
    // channels 0 (background) and 1 (liver) keep the segmentation head
    for (std::size_t k = 0; k < 2; ++k) {
        for (std::size_t c = 0; c < f; ++c) w.v()[k * f + c] = head_.w.value.v()[k * f + c];
        b.v()[k] = head_.b.value.v()[k];
    }
    for (std::size_t k = 2; k < new_num_classes; ++k)
        for (std::size_t c = 0; c < f; ++c)
            w.v()[k * f + c] = static_cast<T>(rng.normal(0.0, 0.01));

    const bool was_trainable = head_.w.trainable;
    head_.w = Parameter<T>("head.w", kHeadBlockId, std::move(w));
    head_.b = Parameter<T>("head.b", kHeadBlockId, std::move(b));
    head_.w.set_trainable(was_trainable);
    head_.b.set_trainable(was_trainable);
    cfg_.num_classes = new_num_classes;
}

template <typename T>
void UNet<T>::set_block_trainable(int block_id, bool flag) {
    bool found = false;
    for (auto* p : parameters())
        if (p->block_id == block_id) {
            p->set_trainable(flag);
            found = true;
        }
    if (!found)
        throw ConfigError("set_block_trainable: unknown block id " + std::to_string(block_id));
}

template <typename T>
void UNet<T>::set_frozen_blocks(const std::set<int>& frozen) {
    for (int id : frozen)
        if (id < 1 || id > kHeadBlockId)
            throw ConfigError("set_frozen_blocks: unknown block id " + std::to_string(id));
    for (int id : block_ids()) set_block_trainable(id, frozen.find(id) == frozen.end());
}

template <typename T>
std::vector<Parameter<T>*> UNet<T>::parameters() {
    std::vector<Parameter<T>*> out;
    auto add_unit = [&out](ConvUnit<T>& u) {
        out.push_back(&u.conv.w);
        out.push_back(&u.conv.b);
        out.push_back(&u.bn.gamma);
        out.push_back(&u.bn.beta);
    };
    for (auto& eb : encoder_) {
        add_unit(eb.c1);
        add_unit(eb.c2);
    }
    for (auto& db : decoder_) {
        out.push_back(&db.up);
        add_unit(db.c1);
        add_unit(db.c2);
    }
    out.push_back(&head_.w);
    out.push_back(&head_.b);
    return out;
}

template <typename T>
std::vector<const Parameter<T>*> UNet<T>::parameters() const {
    auto mut = const_cast<UNet<T>*>(this)->parameters();
    return std::vector<const Parameter<T>*>(mut.begin(), mut.end());
}

template <typename T>
std::vector<BufferRef<T>> UNet<T>::buffers() {
    std::vector<BufferRef<T>> out;
    for (std::size_t k = 0; k < encoder_.size(); ++k) {
        const std::string prefix = "enc" + std::to_string(k + 1);
        out.push_back({prefix + ".u1.bn", &encoder_[k].c1.bn.state});
        out.push_back({prefix + ".u2.bn", &encoder_[k].c2.bn.state});
    }
    for (std::size_t j = 0; j < decoder_.size(); ++j) {
        const std::string prefix = "dec" + std::to_string(cfg_.encoder_blocks + 1 + j);
        out.push_back({prefix + ".u1.bn", &decoder_[j].c1.bn.state});
        out.push_back({prefix + ".u2.bn", &decoder_[j].c2.bn.state});
    }
    return out;
}

template <typename T>
std::size_t UNet<T>::parameter_count() const {
    std::size_t n = 0;
    for (const auto* p : parameters()) n += p->value.size();
    return n;
}

template <typename T>
std::vector<int> UNet<T>::block_ids() const {
    std::vector<int> ids;
    for (std::size_t k = 1; k <= cfg_.encoder_blocks; ++k) ids.push_back(static_cast<int>(k));
    for (std::size_t j = 0; j < decoder_.size(); ++j)
        ids.push_back(static_cast<int>(cfg_.encoder_blocks + 1 + j));
    ids.push_back(kHeadBlockId);
    return ids;
}

template class UNet<float>;
template class UNet<double>;

}  // namespace cascade
