#pragma once

#include "beatflow/nn/autograd.hpp"

#include <span>
#include <vector>

namespace beatflow::nn {

// Differentiable tensor operations. Layout conventions:
//   images   [B, C, H, W]
//   volumes  [B, T, C, H, W]   (frames first, so a volume reshapes to a batch of images for free)
//   vectors  [B, D]
// Every function is instantiated for float and double.

template <typename S> Var<S> add(const Var<S>& a, const Var<S>& b);
template <typename S> Var<S> sub(const Var<S>& a, const Var<S>& b);
template <typename S> Var<S> mul(const Var<S>& a, const Var<S>& b);
template <typename S> Var<S> scale(const Var<S>& a, S factor);
template <typename S> Var<S> add_scalar(const Var<S>& a, S value);

template <typename S> Var<S> relu(const Var<S>& x);
template <typename S> Var<S> silu(const Var<S>& x);
template <typename S> Var<S> sigmoid(const Var<S>& x);
template <typename S> Var<S> tanh(const Var<S>& x);

template <typename S> Var<S> sum(const Var<S>& x);
template <typename S> Var<S> mean(const Var<S>& x);

/// x + b with b of shape [x.dim(axis)] broadcast over every other axis.
template <typename S> Var<S> add_bias(const Var<S>& x, const Var<S>& bias, int axis);
/// x + e where e is [B, C] and C = x.dim(axis); broadcast over the remaining axes.
template <typename S> Var<S> add_per_sample(const Var<S>& x, const Var<S>& e, int axis);
/// x * g where g is [B, C] and C = x.dim(axis).
template <typename S> Var<S> mul_per_sample(const Var<S>& x, const Var<S>& g, int axis);
/// x [B, C, H, W] * m [B, 1, H, W].
template <typename S> Var<S> mul_mask(const Var<S>& x, const Var<S>& mask);
/// [B, C, H, W] -> [B, T, C, H, W] by repetition along the new frame axis.
template <typename S> Var<S> repeat_frames(const Var<S>& x, int frames);

template <typename S> Var<S> reshape(const Var<S>& x, Shape shape);
template <typename S> Var<S> concat(const std::vector<Var<S>>& parts, int axis);
template <typename S> Var<S> slice(const Var<S>& x, int axis, int begin, int end);
template <typename S> Var<S> transpose(const Var<S>& x);

/// 2D convolution with zero padding. weight [Co, Ci, k, k]; bias [Co] or undefined.
template <typename S>
Var<S> conv2d(const Var<S>& x, const Var<S>& weight, const Var<S>& bias, int stride, int pad);
/// Convolution along the frame axis of a volume. weight [k, Co, Ci]; "same" zero padding.
template <typename S> Var<S> conv_time(const Var<S>& x, const Var<S>& weight, const Var<S>& bias);
template <typename S> Var<S> upsample2x(const Var<S>& x);
/// x [B, In] -> [B, Out]; weight [Out, In].
template <typename S> Var<S> linear(const Var<S>& x, const Var<S>& weight, const Var<S>& bias);
/// a [B, D] times b [K, D] transposed -> [B, K].
template <typename S> Var<S> matmul_nt(const Var<S>& a, const Var<S>& b);

/// Group normalisation with per-channel affine; channel axis 1 for images, 2 for volumes.
/// Statistics pool every axis after the batch axis within a group.
template <typename S>
Var<S> group_norm(const Var<S>& x, const Var<S>& gamma, const Var<S>& beta, int groups, int channel_axis, S eps = S(1e-5));

/// [B, C, H, W] -> [B, C].
template <typename S> Var<S> global_avg_pool(const Var<S>& x);
/// Row-wise L2 normalisation of [B, D].
template <typename S> Var<S> l2_normalize(const Var<S>& x, S eps = S(1e-12));

/// Mean softmax cross-entropy of logits [B, K].
template <typename S> Var<S> cross_entropy(const Var<S>& logits, std::span<const int> labels);
template <typename S> Var<S> mse(const Var<S>& a, const Var<S>& b);
/// Sum over channels of the per-channel mean |a - b|, for [B, C, ...] tensors.
template <typename S> Var<S> channel_l1(const Var<S>& a, const Var<S>& b);

/// Backward bilinear sampling. z [B, C, H, W], flow [B, 2, H, W] in normalised
/// coordinates (-1..1 spans the grid, corners aligned). Output cell p reads z at
/// p + flow(p); sample positions outside the grid are clamped to the border.
template <typename S> Var<S> grid_sample(const Var<S>& z, const Var<S>& flow);

}  // namespace beatflow::nn
