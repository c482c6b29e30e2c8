#pragma once

#include <cstdint>
#include <vector>

#include "ftnn/rng.hpp"
#include "ftnn/tensor.hpp"

namespace ftnn {

enum class Activation : std::uint8_t { identity = 0, relu = 1 };

enum class Mode : std::uint8_t { train = 0, eval = 1 };

/// Fully-connected map y = act(x W^T + b).
struct DenseLayer {
    Tensor weights;  // [out x in]
    Tensor biases;   // [out]
    Activation activation = Activation::relu;

    std::size_t in_width() const { return weights.dim(1); }
    std::size_t out_width() const { return weights.dim(0); }
};

/// Bank of 3x3 same-padded filters, stride 1, ReLU.
struct ConvLayer {
    Tensor filters;  // [F x C x 3 x 3]
    Tensor biases;   // [F]

    std::size_t filter_count() const { return filters.dim(0); }
    std::size_t in_channels() const { return filters.dim(1); }
};

/// Linear classifier with a row-wise softmax on top.
struct OutputHead {
    Tensor weights;  // [n_classes x in]
    Tensor biases;   // [n_classes]

    std::size_t in_width() const { return weights.dim(1); }
    std::size_t n_classes() const { return weights.dim(0); }
};

/// Inverted-dropout rate; 0 disables the op entirely.
struct DropoutSpec {
    double rate = 0.0;
};

/// Scaled uniform init with bound sqrt(6 / (fan_in + fan_out)).
DenseLayer make_dense_layer(std::size_t in, std::size_t out, Activation act, SeededRng& rng);
ConvLayer make_conv_layer(std::size_t in_channels, std::size_t filters, SeededRng& rng);
OutputHead make_output_head(std::size_t in, std::size_t n_classes, SeededRng& rng);

/// x [batch x in] -> act(x W^T + b) [batch x out].
Tensor dense_forward(const DenseLayer& layer, const Tensor& x);
/// Same map without the activation (backward pass needs the pre-activation).
Tensor dense_preactivation(const DenseLayer& layer, const Tensor& x);

/// x [B x C x H x W] -> relu(conv(x) + b) [B x F x H x W], zero same-padding.
/// Convolution is cross-correlation (no kernel flip).
Tensor conv_forward(const ConvLayer& layer, const Tensor& x);
Tensor conv_preactivation(const ConvLayer& layer, const Tensor& x);

/// Patch matrix for the 3x3 same-padded convolution: one row per output
/// position, ordered (b, r, c); columns ordered (channel, kr, kc).
Tensor im2col_3x3(const Tensor& x);
/// [B x F x H x W] -> position-major rows [(B*H*W) x F], the layout the
/// im2col-based filter gradient expects.
Tensor to_position_major(const Tensor& x);
/// Adjoint of im2col_3x3: scatter patch-gradient rows back onto an image.
Tensor col2im_3x3(const Tensor& cols, std::size_t batch, std::size_t channels, std::size_t height,
                  std::size_t width);

struct MaxPoolResult {
    Tensor output;                      // [B x C x H/2 x W/2]
    std::vector<std::uint32_t> argmax;  // flat input index per output element
};

/// Non-overlapping 2x2 maxima; odd trailing row/column dropped.  Ties go to
/// the first element in row-major window order.
Tensor maxpool_2x2(const Tensor& x);
MaxPoolResult maxpool_2x2_with_argmax(const Tensor& x);

struct DropoutResult {
    Tensor output;
    Tensor mask;  // entries in {0,1}; output == input * mask / (1-rate)
};

/// Inverted dropout: train mode zeroes each element with probability rate and
/// scales survivors by 1/(1-rate); eval mode is the identity (all-ones mask).
DropoutResult dropout_forward(const Tensor& x, const DropoutSpec& spec, SeededRng& rng, Mode mode);

/// Row-wise softmax(x W^T + b), max-subtracted for stability.
Tensor softmax_forward(const OutputHead& head, const Tensor& x);
Tensor head_logits(const OutputHead& head, const Tensor& x);
Tensor softmax_rows(const Tensor& logits);

}  // namespace ftnn
