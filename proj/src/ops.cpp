#include "despoof/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <utility>
#include <string>

namespace despoof {

namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using CMapMat = Eigen::Map<const RowMat<T>>;

template <class T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
}

/// Batch view of an image tensor: [C,H,W] is treated as B = 1.
struct ImageDims {
  std::size_t b, c, h, w;
  bool batched;
};

ImageDims image_dims(const Shape& s, const char* op) {
  if (s.size() == 4) return {s[0], s[1], s[2], s[3], true};
  if (s.size() == 3) return {1, s[0], s[1], s[2], false};
  throw std::invalid_argument(std::string(op) + ": expected [C,H,W] or [B,C,H,W], got " + shape_str(s));
}

Shape image_shape(const ImageDims& d, std::size_t c, std::size_t h, std::size_t w) {
  if (d.batched) return {d.b, c, h, w};
  return {c, h, w};
}

template <class T, class F>
Var<T> unary(const Var<T>& a, F&& f, std::function<void(Node<T>&)> back) {
  BasicTensor<T> out(a.shape());
  const auto& in = a.value();
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  return make_result<T>(std::move(out), {a}, std::move(back));
}

// Output columns [lo, hi) whose input column oj*stride + offset lies inside [0, w).
inline std::pair<std::size_t, std::size_t> valid_range(std::size_t wo, std::size_t stride, std::ptrdiff_t offset,
                                                       std::size_t w) {
  const auto s = static_cast<std::ptrdiff_t>(stride);
  std::ptrdiff_t lo = offset >= 0 ? 0 : (-offset + s - 1) / s;
  std::ptrdiff_t hi = (static_cast<std::ptrdiff_t>(w) - 1 - offset) / s + 1;
  if (static_cast<std::ptrdiff_t>(w) - 1 - offset < 0) hi = 0;
  lo = std::clamp<std::ptrdiff_t>(lo, 0, static_cast<std::ptrdiff_t>(wo));
  hi = std::clamp<std::ptrdiff_t>(hi, lo, static_cast<std::ptrdiff_t>(wo));
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

// Column matrix rows (C*k*k of them, row stride ld) holding Ho*Wo entries for one image.
template <class T>
void im2col(const T* x, std::size_t c, std::size_t h, std::size_t w, const ConvGeometry& g, std::size_t ho,
            std::size_t wo, T* col, std::size_t ld) {
  const std::size_t k = g.kernel;
  const auto pad = static_cast<std::ptrdiff_t>(g.padding);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        T* row = col + ((ch * k + ki) * k + kj) * ld;
        const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(kj) - pad;
        const auto [lo, hi] = valid_range(wo, g.stride, off, w);
        for (std::size_t oi = 0; oi < ho; ++oi) {
          const auto ii = static_cast<std::ptrdiff_t>(oi * g.stride + ki) - pad;
          T* dst = row + oi * wo;
          if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(h)) {
            std::fill(dst, dst + wo, T{0});
            continue;
          }
          const T* src = x + (ch * h + static_cast<std::size_t>(ii)) * w;
          std::fill(dst, dst + lo, T{0});
          if (g.stride == 1) {
            std::copy(src + (static_cast<std::ptrdiff_t>(lo) + off), src + (static_cast<std::ptrdiff_t>(hi) + off),
                      dst + lo);
          } else {
            for (std::size_t oj = lo; oj < hi; ++oj) dst[oj] = src[static_cast<std::ptrdiff_t>(oj * g.stride) + off];
          }
          std::fill(dst + hi, dst + wo, T{0});
        }
      }
    }
  }
}

template <class T>
void col2im_add(const T* col, std::size_t c, std::size_t h, std::size_t w, const ConvGeometry& g, std::size_t ho,
                std::size_t wo, T* x, std::size_t ld) {
  const std::size_t k = g.kernel;
  const auto pad = static_cast<std::ptrdiff_t>(g.padding);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        const T* row = col + ((ch * k + ki) * k + kj) * ld;
        const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(kj) - pad;
        const auto [lo, hi] = valid_range(wo, g.stride, off, w);
        for (std::size_t oi = 0; oi < ho; ++oi) {
          const auto ii = static_cast<std::ptrdiff_t>(oi * g.stride + ki) - pad;
          if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(h)) continue;
          T* dst = x + (ch * h + static_cast<std::size_t>(ii)) * w;
          const T* src = row + oi * wo;
          for (std::size_t oj = lo; oj < hi; ++oj) dst[static_cast<std::ptrdiff_t>(oj * g.stride) + off] += src[oj];
        }
      }
    }
  }
}

// x(p0) for every output position p0 of a k-wide window, zero outside the image.
template <class T>
Var<T> center_sample(const Var<T>& x, const ConvGeometry& g) {
  const auto d = image_dims(x.shape(), "cdc2d");
  const std::size_t ho = conv_out_extent(d.h, g.kernel, g.stride, g.padding);
  const std::size_t wo = conv_out_extent(d.w, g.kernel, g.stride, g.padding);
  const auto off = static_cast<std::ptrdiff_t>(g.kernel / 2) - static_cast<std::ptrdiff_t>(g.padding);
  // Flat source index per output element, -1 when the centre falls in padding.
  auto index = std::make_shared<std::vector<std::ptrdiff_t>>(d.b * d.c * ho * wo);
  BasicTensor<T> out(image_shape(d, d.c, ho, wo));
  const auto& in = x.value();
  std::size_t o = 0;
  for (std::size_t bc = 0; bc < d.b * d.c; ++bc) {
    for (std::size_t i = 0; i < ho; ++i) {
      const auto ii = static_cast<std::ptrdiff_t>(i * g.stride) + off;
      for (std::size_t j = 0; j < wo; ++j, ++o) {
        const auto jj = static_cast<std::ptrdiff_t>(j * g.stride) + off;
        if (ii < 0 || jj < 0 || ii >= static_cast<std::ptrdiff_t>(d.h) || jj >= static_cast<std::ptrdiff_t>(d.w)) {
          (*index)[o] = -1;
          out[o] = T{0};
        } else {
          const auto src = static_cast<std::ptrdiff_t>((bc * d.h + ii) * d.w) + jj;
          (*index)[o] = src;
          out[o] = in[static_cast<std::size_t>(src)];
        }
      }
    }
  }
  return make_result<T>(std::move(out), {x}, [index](Node<T>& self) {
    auto& px = *self.parents[0];
    if (!px.requires_grad) return;
    auto& gx = px.grad_buffer();
    for (std::size_t i = 0; i < index->size(); ++i) {
      if ((*index)[i] >= 0) gx[static_cast<std::size_t>((*index)[i])] += self.grad[i];
    }
  });
}

// [C_out, C_in, k, k] -> [C_out, C_in, 1, 1] summed over the window.
template <class T>
Var<T> kernel_window_sum(const Var<T>& w) {
  const auto& s = w.shape();
  const std::size_t kk = s[2] * s[3];
  BasicTensor<T> out(Shape{s[0], s[1], 1, 1});
  const auto& in = w.value();
  for (std::size_t i = 0; i < out.size(); ++i) {
    T acc{0};
    for (std::size_t j = 0; j < kk; ++j) acc += in[i * kk + j];
    out[i] = acc;
  }
  return make_result<T>(std::move(out), {w}, [kk](Node<T>& self) {
    auto& pw = *self.parents[0];
    if (!pw.requires_grad) return;
    auto& gw = pw.grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      for (std::size_t j = 0; j < kk; ++j) gw[i * kk + j] += self.grad[i];
    }
  });
}

}  // namespace

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding) {
  if (stride == 0) throw std::invalid_argument("conv stride must be >= 1");
  if (in + 2 * padding < kernel) throw std::invalid_argument("conv kernel larger than padded input");
  return (in + 2 * padding - kernel) / stride + 1;
}

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "add");
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    self.parents[0]->accumulate(self.grad);
    self.parents[1]->accumulate(self.grad);
  });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "sub");
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    self.parents[0]->accumulate(self.grad);
    auto& pb = *self.parents[1];
    if (!pb.requires_grad) return;
    auto& gb = pb.grad_buffer();
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= self.grad[i];
  });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "mul");
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = pa.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value[i];
    }
  });
}

template <class T>
Var<T> scale(const Var<T>& a, T s) {
  return unary<T>(a, [s](T v) { return v * s; }, [s](Node<T>& self) {
    auto& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    auto& g = pa.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * s;
  });
}

template <class T>
Var<T> scale_batch(const Var<T>& a, std::vector<T> s) {
  const auto& x = a.value();
  if (x.rank() < 2 || x.dim(0) != s.size()) {
    throw std::invalid_argument("scale_batch: need one factor per sample, got " + std::to_string(s.size()) + " for " +
                                shape_str(x.shape()));
  }
  const std::size_t per = x.size() / s.size();
  BasicTensor<T> out(x.shape());
  for (std::size_t b = 0; b < s.size(); ++b) {
    for (std::size_t i = 0; i < per; ++i) out[b * per + i] = x[b * per + i] * s[b];
  }
  return make_result<T>(std::move(out), {a}, [s = std::move(s), per](Node<T>& self) {
    auto& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    auto& g = pa.grad_buffer();
    for (std::size_t b = 0; b < s.size(); ++b) {
      for (std::size_t i = 0; i < per; ++i) g[b * per + i] += self.grad[b * per + i] * s[b];
    }
  });
}

template <class T>
Var<T> add_scalar(const Var<T>& a, T s) {
  return unary<T>(a, [s](T v) { return v + s; }, [](Node<T>& self) { self.parents[0]->accumulate(self.grad); });
}

template <class T>
Var<T> square(const Var<T>& a) {
  return unary<T>(a, [](T v) { return v * v; }, [](Node<T>& self) {
    auto& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    auto& g = pa.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += T{2} * pa.value[i] * self.grad[i];
  });
}

template <class T>
Var<T> sum(const Var<T>& a) {
  T acc{0};
  for (auto v : a.value().vec()) acc += v;
  return make_result<T>(BasicTensor<T>::scalar(acc), {a}, [](Node<T>& self) {
    auto& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    auto& g = pa.grad_buffer();
    const T s = self.grad[0];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s;
  });
}

template <class T>
Var<T> mean(const Var<T>& a) {
  return scale(sum(a), T{1} / static_cast<T>(a.value().size()));
}

template <class T>
Var<T> mse(const Var<T>& a, const Var<T>& b) {
  return mean(square(sub(a, b)));
}

template <class T>
Var<T> relu(const Var<T>& a) {
  return unary<T>(a, [](T v) { return v > T{0} ? v : T{0}; }, [](Node<T>& self) {
    auto& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    auto& g = pa.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (pa.value[i] > T{0}) g[i] += self.grad[i];
    }
  });
}

template <class T>
Var<T> silu(const Var<T>& a) {
  return unary<T>(a, [](T v) { return v / (T{1} + std::exp(-v)); }, [](Node<T>& self) {
    auto& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    auto& g = pa.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T v = pa.value[i];
      const T s = T{1} / (T{1} + std::exp(-v));
      g[i] += self.grad[i] * s * (T{1} + v * (T{1} - s));
    }
  });
}

template <class T>
Var<T> sigmoid(const Var<T>& a) {
  return unary<T>(a, [](T v) { return T{1} / (T{1} + std::exp(-v)); }, [](Node<T>& self) {
    auto& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    auto& g = pa.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T s = self.value[i];
      g[i] += self.grad[i] * s * (T{1} - s);
    }
  });
}

template <class T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  auto out = a.value().reshaped(std::move(shape));
  return make_result<T>(std::move(out), {a}, [](Node<T>& self) {
    auto& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    auto& g = pa.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

// Per-thread scratch reused across conv calls; contents are unspecified on entry.
template <class T>
T* scratch(int slot, std::size_t n) {
  thread_local std::vector<T> buffers[2];
  auto& buf = buffers[slot];
  if (buf.size() < n) buf.resize(n);
  return buf.data();
}

// Batch elements per GEMM: keeps the column buffer near 4M entries.
std::size_t conv_chunk(std::size_t batch, std::size_t kdim, std::size_t npix) {
  const std::size_t per = std::max<std::size_t>(1, kdim * npix);
  return std::clamp<std::size_t>((std::size_t{1} << 16) / per, 1, batch);
}

template <class T>
Var<T> conv2d(const Var<T>& input, const Var<T>& kernel, std::size_t stride, std::size_t padding) {
  const auto d = image_dims(input.shape(), "conv2d");
  const auto& ks = kernel.shape();
  if (ks.size() != 4 || ks[2] != ks[3]) {
    throw std::invalid_argument("conv2d: kernel must be [C_out,C_in,k,k], got " + shape_str(ks));
  }
  if (ks[2] % 2 == 0) throw std::invalid_argument("conv2d: kernel size must be odd");
  if (ks[1] != d.c) {
    throw std::invalid_argument("conv2d: input has " + std::to_string(d.c) + " channels, kernel expects " +
                                std::to_string(ks[1]));
  }
  const ConvGeometry g{ks[2], stride, padding};
  const std::size_t cout = ks[0];
  const std::size_t ho = conv_out_extent(d.h, g.kernel, stride, padding);
  const std::size_t wo = conv_out_extent(d.w, g.kernel, stride, padding);
  const std::size_t kdim = d.c * g.kernel * g.kernel;
  const std::size_t npix = ho * wo;
  const std::size_t in_size = d.c * d.h * d.w;
  const std::size_t chunk = conv_chunk(d.b, kdim, npix);

  BasicTensor<T> out(image_shape(d, cout, ho, wo));
  T* col = scratch<T>(0, kdim * chunk * npix);
  T* res = scratch<T>(1, cout * chunk * npix);
  CMapMat<T> wmat(kernel.value().data(), cout, kdim);
  for (std::size_t b0 = 0; b0 < d.b; b0 += chunk) {
    const std::size_t nb = std::min(chunk, d.b - b0);
    const std::size_t ld = nb * npix;
    for (std::size_t i = 0; i < nb; ++i) {
      im2col(input.value().data() + (b0 + i) * in_size, d.c, d.h, d.w, g, ho, wo, col + i * npix, ld);
    }
    MapMat<T> rmat(res, cout, ld);
    rmat.noalias() = wmat * CMapMat<T>(col, kdim, ld);
    for (std::size_t i = 0; i < nb; ++i) {
      for (std::size_t o = 0; o < cout; ++o) {
        std::copy_n(res + o * ld + i * npix, npix, out.data() + ((b0 + i) * cout + o) * npix);
      }
    }
  }

  return make_result<T>(std::move(out), {input, kernel}, [d, g, cout, ho, wo, kdim, npix, in_size, chunk](Node<T>& self) {
    auto& px = *self.parents[0];
    auto& pw = *self.parents[1];
    CMapMat<T> wmat(pw.value.data(), cout, kdim);
    T* col = scratch<T>(0, kdim * chunk * npix);
    T* gy = scratch<T>(1, cout * chunk * npix);
    T* gw = pw.requires_grad ? pw.grad_buffer().data() : nullptr;
    T* gx = px.requires_grad ? px.grad_buffer().data() : nullptr;
    for (std::size_t b0 = 0; b0 < d.b; b0 += chunk) {
      const std::size_t nb = std::min(chunk, d.b - b0);
      const std::size_t ld = nb * npix;
      for (std::size_t i = 0; i < nb; ++i) {
        for (std::size_t o = 0; o < cout; ++o) {
          std::copy_n(self.grad.data() + ((b0 + i) * cout + o) * npix, npix, gy + o * ld + i * npix);
        }
      }
      CMapMat<T> gym(gy, cout, ld);
      if (gw) {
        for (std::size_t i = 0; i < nb; ++i) {
          im2col(px.value.data() + (b0 + i) * in_size, d.c, d.h, d.w, g, ho, wo, col + i * npix, ld);
        }
        MapMat<T> gwm(gw, cout, kdim);
        gwm.noalias() += gym * CMapMat<T>(col, kdim, ld).transpose();
      }
      if (gx) {
        MapMat<T> dcm(col, kdim, ld);
        dcm.noalias() = wmat.transpose() * gym;
        for (std::size_t i = 0; i < nb; ++i) {
          col2im_add(col + i * npix, d.c, d.h, d.w, g, ho, wo, gx + (b0 + i) * in_size, ld);
        }
      }
    }
  });
}

template <class T>
Var<T> cdc2d(const Var<T>& input, const Var<T>& kernel, T theta, std::size_t stride, std::size_t padding) {
  if (!(theta >= T{0} && theta <= T{1})) {
    throw std::invalid_argument("cdc2d: theta must lie in [0, 1], got " + std::to_string(theta));
  }
  auto vanilla = conv2d(input, kernel, stride, padding);
  if (theta == T{0}) return vanilla;
  const ConvGeometry g{kernel.dim(2), stride, padding};
  auto centre = center_sample(input, g);
  auto diff = conv2d(centre, kernel_window_sum(kernel), 1, 0);
  return sub(vanilla, scale(diff, theta));
}

template <class T>
Var<T> add_channel_bias(const Var<T>& x, const Var<T>& bias) {
  const auto d = image_dims(x.shape(), "add_channel_bias");
  if (bias.value().size() != d.c) throw std::invalid_argument("add_channel_bias: bias length != channels");
  const std::size_t hw = d.h * d.w;
  BasicTensor<T> out = x.value();
  for (std::size_t b = 0; b < d.b; ++b) {
    for (std::size_t c = 0; c < d.c; ++c) {
      T* p = out.data() + (b * d.c + c) * hw;
      const T v = bias.value()[c];
      for (std::size_t i = 0; i < hw; ++i) p[i] += v;
    }
  }
  return make_result<T>(std::move(out), {x, bias}, [d, hw](Node<T>& self) {
    self.parents[0]->accumulate(self.grad);
    auto& pb = *self.parents[1];
    if (!pb.requires_grad) return;
    auto& gb = pb.grad_buffer();
    for (std::size_t b = 0; b < d.b; ++b) {
      for (std::size_t c = 0; c < d.c; ++c) {
        const T* p = self.grad.data() + (b * d.c + c) * hw;
        T acc{0};
        for (std::size_t i = 0; i < hw; ++i) acc += p[i];
        gb[c] += acc;
      }
    }
  });
}

template <class T>
Var<T> add_channel_shift(const Var<T>& x, const Var<T>& shift) {
  const auto& s = x.shape();
  if (s.size() != 4 || shift.shape() != Shape{s[0], s[1]}) {
    throw std::invalid_argument("add_channel_shift: expected x [B,C,H,W] and shift [B,C], got " + shape_str(s) +
                                " and " + shape_str(shift.shape()));
  }
  const std::size_t bc = s[0] * s[1];
  const std::size_t hw = s[2] * s[3];
  BasicTensor<T> out = x.value();
  for (std::size_t i = 0; i < bc; ++i) {
    const T v = shift.value()[i];
    for (std::size_t j = 0; j < hw; ++j) out[i * hw + j] += v;
  }
  return make_result<T>(std::move(out), {x, shift}, [bc, hw](Node<T>& self) {
    self.parents[0]->accumulate(self.grad);
    auto& ps = *self.parents[1];
    if (!ps.requires_grad) return;
    auto& gs = ps.grad_buffer();
    for (std::size_t i = 0; i < bc; ++i) {
      T acc{0};
      for (std::size_t j = 0; j < hw; ++j) acc += self.grad[i * hw + j];
      gs[i] += acc;
    }
  });
}

template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  const auto& xs = x.shape();
  const auto& ws = weight.shape();
  if (xs.size() != 2 || ws.size() != 2 || ws[1] != xs[1] || bias.value().size() != ws[0]) {
    throw std::invalid_argument("linear: incompatible shapes x" + shape_str(xs) + " w" + shape_str(ws));
  }
  const std::size_t n = xs[0], in = xs[1], outd = ws[0];
  BasicTensor<T> out(Shape{n, outd});
  {
    CMapMat<T> xm(x.value().data(), n, in);
    CMapMat<T> wm(weight.value().data(), outd, in);
    MapMat<T> om(out.data(), n, outd);
    om.noalias() = xm * wm.transpose();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t o = 0; o < outd; ++o) om(i, o) += bias.value()[o];
    }
  }
  return make_result<T>(std::move(out), {x, weight, bias}, [n, in, outd](Node<T>& self) {
    auto& px = *self.parents[0];
    auto& pw = *self.parents[1];
    auto& pb = *self.parents[2];
    CMapMat<T> gy(self.grad.data(), n, outd);
    if (px.requires_grad) {
      MapMat<T> gx(px.grad_buffer().data(), n, in);
      gx.noalias() += gy * CMapMat<T>(pw.value.data(), outd, in);
    }
    if (pw.requires_grad) {
      MapMat<T> gw(pw.grad_buffer().data(), outd, in);
      gw.noalias() += gy.transpose() * CMapMat<T>(px.value.data(), n, in);
    }
    if (pb.requires_grad) {
      auto& gb = pb.grad_buffer();
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t o = 0; o < outd; ++o) gb[o] += gy(i, o);
      }
    }
  });
}

template <class T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
  const auto da = image_dims(a.shape(), "concat_channels");
  const auto db = image_dims(b.shape(), "concat_channels");
  if (da.batched != db.batched || da.b != db.b || da.h != db.h || da.w != db.w) {
    throw std::invalid_argument("concat_channels: incompatible shapes " + shape_str(a.shape()) + " and " +
                                shape_str(b.shape()));
  }
  const std::size_t hw = da.h * da.w;
  const std::size_t na = da.c * hw, nb = db.c * hw;
  BasicTensor<T> out(image_shape(da, da.c + db.c, da.h, da.w));
  for (std::size_t i = 0; i < da.b; ++i) {
    std::copy_n(a.value().data() + i * na, na, out.data() + i * (na + nb));
    std::copy_n(b.value().data() + i * nb, nb, out.data() + i * (na + nb) + na);
  }
  return make_result<T>(std::move(out), {a, b}, [na, nb, batch = da.b](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    T* ga = pa.requires_grad ? pa.grad_buffer().data() : nullptr;
    T* gb = pb.requires_grad ? pb.grad_buffer().data() : nullptr;
    for (std::size_t i = 0; i < batch; ++i) {
      const T* g = self.grad.data() + i * (na + nb);
      if (ga) {
        for (std::size_t j = 0; j < na; ++j) ga[i * na + j] += g[j];
      }
      if (gb) {
        for (std::size_t j = 0; j < nb; ++j) gb[i * nb + j] += g[na + j];
      }
    }
  });
}

template <class T>
Var<T> max_pool2(const Var<T>& x) {
  const auto d = image_dims(x.shape(), "max_pool2");
  if (d.h % 2 || d.w % 2) throw std::invalid_argument("max_pool2: spatial dims must be even");
  const std::size_t ho = d.h / 2, wo = d.w / 2;
  BasicTensor<T> out(image_shape(d, d.c, ho, wo));
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  const auto& in = x.value();
  std::size_t o = 0;
  for (std::size_t bc = 0; bc < d.b * d.c; ++bc) {
    for (std::size_t i = 0; i < ho; ++i) {
      for (std::size_t j = 0; j < wo; ++j, ++o) {
        std::size_t best = (bc * d.h + 2 * i) * d.w + 2 * j;
        for (std::size_t di = 0; di < 2; ++di) {
          for (std::size_t dj = 0; dj < 2; ++dj) {
            const std::size_t idx = (bc * d.h + 2 * i + di) * d.w + 2 * j + dj;
            if (in[idx] > in[best]) best = idx;
          }
        }
        (*argmax)[o] = best;
        out[o] = in[best];
      }
    }
  }
  return make_result<T>(std::move(out), {x}, [argmax](Node<T>& self) {
    auto& px = *self.parents[0];
    if (!px.requires_grad) return;
    auto& g = px.grad_buffer();
    for (std::size_t i = 0; i < argmax->size(); ++i) g[(*argmax)[i]] += self.grad[i];
  });
}

template <class T>
Var<T> upsample_nearest2(const Var<T>& x) {
  const auto d = image_dims(x.shape(), "upsample_nearest2");
  const std::size_t ho = d.h * 2, wo = d.w * 2;
  BasicTensor<T> out(image_shape(d, d.c, ho, wo));
  const auto& in = x.value();
  for (std::size_t bc = 0; bc < d.b * d.c; ++bc) {
    for (std::size_t i = 0; i < ho; ++i) {
      for (std::size_t j = 0; j < wo; ++j) {
        out[(bc * ho + i) * wo + j] = in[(bc * d.h + i / 2) * d.w + j / 2];
      }
    }
  }
  return make_result<T>(std::move(out), {x}, [d, ho, wo](Node<T>& self) {
    auto& px = *self.parents[0];
    if (!px.requires_grad) return;
    auto& g = px.grad_buffer();
    for (std::size_t bc = 0; bc < d.b * d.c; ++bc) {
      for (std::size_t i = 0; i < ho; ++i) {
        for (std::size_t j = 0; j < wo; ++j) {
          g[(bc * d.h + i / 2) * d.w + j / 2] += self.grad[(bc * ho + i) * wo + j];
        }
      }
    }
  });
}

namespace {

struct LerpTap {
  std::size_t lo, hi;
  double frac;  // weight of hi
};

std::vector<LerpTap> bilinear_taps(std::size_t in, std::size_t out) {
  std::vector<LerpTap> taps(out);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * ratio - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto lo = static_cast<std::size_t>(std::floor(src));
    const std::size_t hi = std::min(lo + 1, in - 1);
    taps[i] = {lo, hi, src - static_cast<double>(lo)};
  }
  return taps;
}

}  // namespace

template <class T>
Var<T> resize_bilinear(const Var<T>& x, std::size_t out_h, std::size_t out_w) {
  const auto d = image_dims(x.shape(), "resize_bilinear");
  if (out_h == 0 || out_w == 0) throw std::invalid_argument("resize_bilinear: empty output size");
  auto ty = bilinear_taps(d.h, out_h);
  auto tx = bilinear_taps(d.w, out_w);
  BasicTensor<T> out(image_shape(d, d.c, out_h, out_w));
  const auto& in = x.value();
  for (std::size_t bc = 0; bc < d.b * d.c; ++bc) {
    const T* src = in.data() + bc * d.h * d.w;
    for (std::size_t i = 0; i < out_h; ++i) {
      const auto& a = ty[i];
      for (std::size_t j = 0; j < out_w; ++j) {
        const auto& b = tx[j];
        const T fy = static_cast<T>(a.frac), fx = static_cast<T>(b.frac);
        const T top = src[a.lo * d.w + b.lo] * (T{1} - fx) + src[a.lo * d.w + b.hi] * fx;
        const T bot = src[a.hi * d.w + b.lo] * (T{1} - fx) + src[a.hi * d.w + b.hi] * fx;
        out[(bc * out_h + i) * out_w + j] = top * (T{1} - fy) + bot * fy;
      }
    }
  }
  return make_result<T>(std::move(out), {x}, [d, out_h, out_w, ty, tx](Node<T>& self) {
    auto& px = *self.parents[0];
    if (!px.requires_grad) return;
    auto& g = px.grad_buffer();
    for (std::size_t bc = 0; bc < d.b * d.c; ++bc) {
      T* dst = g.data() + bc * d.h * d.w;
      for (std::size_t i = 0; i < out_h; ++i) {
        const auto& a = ty[i];
        for (std::size_t j = 0; j < out_w; ++j) {
          const auto& b = tx[j];
          const T fy = static_cast<T>(a.frac), fx = static_cast<T>(b.frac);
          const T go = self.grad[(bc * out_h + i) * out_w + j];
          dst[a.lo * d.w + b.lo] += go * (T{1} - fy) * (T{1} - fx);
          dst[a.lo * d.w + b.hi] += go * (T{1} - fy) * fx;
          dst[a.hi * d.w + b.lo] += go * fy * (T{1} - fx);
          dst[a.hi * d.w + b.hi] += go * fy * fx;
        }
      }
    }
  });
}

#define DESPOOF_INSTANTIATE_OPS(T)                                                               \
  template Var<T> add(const Var<T>&, const Var<T>&);                                             \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                             \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                             \
  template Var<T> scale(const Var<T>&, T);                                                       \
  template Var<T> scale_batch(const Var<T>&, std::vector<T>);                                     \
  template Var<T> add_scalar(const Var<T>&, T);                                                  \
  template Var<T> square(const Var<T>&);                                                         \
  template Var<T> sum(const Var<T>&);                                                            \
  template Var<T> mean(const Var<T>&);                                                           \
  template Var<T> mse(const Var<T>&, const Var<T>&);                                             \
  template Var<T> relu(const Var<T>&);                                                           \
  template Var<T> silu(const Var<T>&);                                                           \
  template Var<T> sigmoid(const Var<T>&);                                                        \
  template Var<T> reshape(const Var<T>&, Shape);                                                 \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, std::size_t, std::size_t);               \
  template Var<T> cdc2d(const Var<T>&, const Var<T>&, T, std::size_t, std::size_t);              \
  template Var<T> add_channel_bias(const Var<T>&, const Var<T>&);                                \
  template Var<T> add_channel_shift(const Var<T>&, const Var<T>&);                               \
  template Var<T> linear(const Var<T>&, const Var<T>&, const Var<T>&);                           \
  template Var<T> concat_channels(const Var<T>&, const Var<T>&);                                 \
  template Var<T> max_pool2(const Var<T>&);                                                      \
  template Var<T> upsample_nearest2(const Var<T>&);                                              \
  template Var<T> resize_bilinear(const Var<T>&, std::size_t, std::size_t);

DESPOOF_INSTANTIATE_OPS(float)
DESPOOF_INSTANTIATE_OPS(double)

}  // namespace despoof
