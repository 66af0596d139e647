#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "cascade/adam.hpp"
#include "cascade/ops.hpp"

namespace cascade {

struct UNetConfig {
    std::size_t in_channels = 1;
    std::size_t base_filters = 16;
    std::size_t encoder_blocks = 5;  // fixed-depth architecture
    std::size_t num_classes = 3;     // 3 (segmentation) or 5 (classification)
    std::size_t input_size = 96;     // nominal H = W; must be a multiple of 16
    std::uint64_t seed = 0;
};

/// Shapes of the per-block encoder activations of one forward pass
/// (pre-pooling), deepest last. Filled on request for inspection.
struct ForwardTrace {
    std::vector<Shape> encoder_shapes;
};

template <typename T>
struct Conv2dLayer {
    Parameter<T> w;
    Parameter<T> b;
};

template <typename T>
struct BatchNormLayer {
    Parameter<T> gamma;
    Parameter<T> beta;
    BatchNormState<T> state;
};

/// conv -> batch norm -> ReLU
template <typename T>
struct ConvUnit {
    Conv2dLayer<T> conv;
    BatchNormLayer<T> bn;
};

template <typename T>
struct EncoderBlock {
    ConvUnit<T> c1, c2;
    bool pooled = true;  // blocks 1-4 pool; block 5 is the bottleneck
};

template <typename T>
struct DecoderBlock {
    Parameter<T> up;  // 2x2 stride-2 transposed-conv kernel, no bias
    ConvUnit<T> c1, c2;
};

/// Named handle to one batch-norm running-statistics record.
template <typename T>
struct BufferRef {
    std::string name;
    BatchNormState<T>* state;
};

inline constexpr int kHeadBlockId = 10;

/// Encoder-decoder segmentation network with skip connections.
///
/// Blocks are addressable by id: 1-5 encoder (5 = bottleneck), 6-9 decoder
/// (6 deepest), 10 the 1x1 classification head. Filter counts double per
/// encoder block from base_filters; the decoder mirrors them. Each block is
/// two conv->BN->ReLU units; encoder blocks 1-4 are followed by 2x2 max
/// pooling and decoder blocks start with a learned 2x upsampling whose output
/// is concatenated with the opposing encoder activation.
template <typename T>
class UNet {
public:
    /// Deterministic construction: two builds from the same config are
    /// bit-identical. Conv kernels use fan-in scaled normal init, biases 0,
    /// gamma 1, beta 0.
    static UNet build(const UNetConfig& config);

    /// batch: [N, in_channels, H, W] with H, W positive multiples of 16.
    /// Returns logits [N, num_classes, H, W]. Train mode normalizes with
    /// batch statistics and updates running statistics of unfrozen layers.
    Tensor<T> forward(Tape<T>* tape, const Tensor<T>& batch, bool training,
                      ForwardTrace* trace = nullptr);

    /// Replaces the 3-class head with a 5-class head: background and liver
    /// channels are copied, the three lesion channels start near zero
    /// (weights N(0, 0.01), biases 0). No other parameter changes.
    /// Calling on an already 5-class model warns and does nothing.
    void swap_head(std::size_t new_num_classes, std::uint64_t seed);

    /// Sets the trainable flag of every parameter of one block, including
    /// batch-norm gamma/beta. Frozen batch-norm layers also stop updating
    /// their running statistics. Unknown ids throw ConfigError.
    void set_block_trainable(int block_id, bool flag);

    /// Marks exactly `frozen` as non-trainable and everything else trainable.
    void set_frozen_blocks(const std::set<int>& frozen);

    /// Stable parameter order (encoder, decoder, head); the same order is
    /// used by the optimizer and the checkpoint format.
    std::vector<Parameter<T>*> parameters();
    std::vector<const Parameter<T>*> parameters() const;

    std::vector<BufferRef<T>> buffers();

    std::size_t parameter_count() const;
    const UNetConfig& config() const { return cfg_; }
    std::vector<int> block_ids() const;

private:
    UNetConfig cfg_;
    std::vector<EncoderBlock<T>> encoder_;
    std::vector<DecoderBlock<T>> decoder_;
    Conv2dLayer<T> head_;

    Tensor<T> conv_unit(Tape<T>* tape, const Tensor<T>& x, ConvUnit<T>& unit, bool training);
};

void validate_unet_config(const UNetConfig& config);

using UNetF = UNet<float>;

}  // namespace cascade
