#pragma once

#include <cstddef>
#include <vector>

#include "despoof/autograd.hpp"

// Differentiable ops over Var<T>. Image tensors are [C,H,W] or batched
// [B,C,H,W]; every op that takes images accepts both and returns the same rank.
namespace despoof {

struct ConvGeometry {
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t padding = 0;
};

/// Output extent of a zero-padded convolution along one axis.
std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding);

template <class T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <class T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <class T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <class T> Var<T> scale(const Var<T>& a, T s);
template <class T> Var<T> add_scalar(const Var<T>& a, T s);
template <class T> Var<T> square(const Var<T>& a);
template <class T> Var<T> sum(const Var<T>& a);
template <class T> Var<T> mean(const Var<T>& a);
template <class T> Var<T> relu(const Var<T>& a);
template <class T> Var<T> silu(const Var<T>& a);
template <class T> Var<T> sigmoid(const Var<T>& a);
template <class T> Var<T> reshape(const Var<T>& a, Shape shape);
/// Multiplies sample b of a batched tensor by s[b].
template <class T> Var<T> scale_batch(const Var<T>& a, std::vector<T> s);

/// mean((a - b)^2)
template <class T> Var<T> mse(const Var<T>& a, const Var<T>& b);

/// Zero-padded cross-correlation. kernel: [C_out, C_in, k, k], k odd.
template <class T> Var<T> conv2d(const Var<T>& input, const Var<T>& kernel, std::size_t stride, std::size_t padding);

/// Central difference convolution:
///   y(p0) = sum_pn w(pn) x(p0 + pn) - theta * x(p0) * sum_pn w(pn)
/// theta in [0, 1]; theta = 0 is exactly conv2d.
template <class T>
Var<T> cdc2d(const Var<T>& input, const Var<T>& kernel, T theta, std::size_t stride, std::size_t padding);

/// Adds bias[c] to every pixel of channel c.
template <class T> Var<T> add_channel_bias(const Var<T>& x, const Var<T>& bias);

/// x: [B,C,H,W], shift: [B,C]. Adds shift[b,c] to every pixel of (b, c).
template <class T> Var<T> add_channel_shift(const Var<T>& x, const Var<T>& shift);

/// x: [B,In], weight: [Out,In], bias: [Out] -> [B,Out]
template <class T> Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias);

/// Concatenates along the channel axis.
template <class T> Var<T> concat_channels(const Var<T>& a, const Var<T>& b);

/// 2x2 max pooling, stride 2. H and W must be even.
template <class T> Var<T> max_pool2(const Var<T>& x);

/// Nearest-neighbour 2x upsampling.
template <class T> Var<T> upsample_nearest2(const Var<T>& x);

/// Bilinear resize with half-pixel centres and edge clamping.
template <class T> Var<T> resize_bilinear(const Var<T>& x, std::size_t out_h, std::size_t out_w);

}  // namespace despoof
