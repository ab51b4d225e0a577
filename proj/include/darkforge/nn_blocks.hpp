#pragma once

// Differentiable building blocks over NCHW tensors.

#include <cstddef>
#include <random>
#include <vector>

#include "darkforge/tensor.hpp"

namespace darkforge::nn {

/// Convolution parameters. For conv2d the weight is [C_out, C_in, k, k];
/// for transposed_conv2 it is [C_in, C_out, 2, 2].
struct Conv2dParams {
  Tensor weight;
  Tensor bias;
  std::size_t stride = 1;
  std::size_t padding = 0;
};

/// Squeeze-excitation channel attention: w_reduce [C/r, C], w_expand [C, C/r].
struct CAParams {
  Tensor w_reduce;
  Tensor b_reduce;
  Tensor w_expand;
  Tensor b_expand;

  std::size_t channels() const { return w_reduce.dim(1); }
  std::size_t reduction() const { return w_reduce.dim(1) / w_reduce.dim(0); }
};

/// Cross-correlation with zero padding. Output extent (H + 2p - k) / s + 1.
Tensor conv2d(const Tensor& x, const Conv2dParams& p);

/// Stride-2, 2x2 transposed convolution (exact adjoint of the matching
/// stride-2 conv); doubles H and W.
Tensor transposed_conv2(const Tensor& x, const Conv2dParams& p);

/// 2x2 non-overlapping max pool. Ties route the gradient to the first element
/// of the tile in row-major order.
Tensor maxpool2(const Tensor& x);

Tensor leaky_relu(const Tensor& x, double slope = 0.2);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

/// [N, C*s*s, H, W] -> [N, C, s*H, s*W]; channel c*s*s + i*s + j lands at
/// row offset i, column offset j.
Tensor depth_to_space(const Tensor& x, std::size_t s);
/// Inverse of depth_to_space.
Tensor space_to_depth(const Tensor& x, std::size_t s);

/// Concatenation along the channel axis.
Tensor concat_channels(const std::vector<Tensor>& parts);

/// [N, C, H, W] -> [N, C] spatial mean.
Tensor global_avg_pool(const Tensor& x);

/// [N, C_in] x W[C_out, C_in]^T + b -> [N, C_out].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// out[n, c, :, :] = s[n, c] * x[n, c, :, :].
Tensor scale_channels(const Tensor& x, const Tensor& s);

/// Per-(sample, channel) gates from the global average, applied multiplicatively.
Tensor channel_attention(const Tensor& x, const CAParams& p);

/// Bilinear 2x upsampling with half-pixel centres and edge clamping.
Tensor upsample_bilinear2x(const Tensor& x);

// Initialisation ------------------------------------------------------------

/// Reduction ratio for C channels: the largest divisor r <= 16 of C with
/// C / r >= 4 (1 when C < 4).
std::size_t ca_reduction(std::size_t channels);

/// He-style uniform init (bound sqrt(6 / fan_in)), zero bias.
Conv2dParams make_conv(std::size_t c_in, std::size_t c_out, std::size_t k, std::size_t stride,
                       std::size_t padding, std::mt19937_64& rng);
Conv2dParams make_transposed_conv2(std::size_t c_in, std::size_t c_out, std::mt19937_64& rng);
CAParams make_channel_attention(std::size_t channels, std::size_t reduction, std::mt19937_64& rng);

std::size_t param_count(const Conv2dParams& p);
std::size_t param_count(const CAParams& p);

}  // namespace darkforge::nn
