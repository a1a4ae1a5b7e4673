#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>

#include "st4d/rng.hpp"
#include "st4d/tensor.hpp"

namespace st4d {

// Geometry of a 3-D convolution. Axis order (depth, height, width) everywhere.
struct ConvSpec {
  std::array<int, 3> kernel{3, 3, 3};
  std::array<int, 3> stride{1, 1, 1};
  std::array<int, 3> padding{0, 0, 0};
  int in_channels = 1;
  int out_channels = 1;
};

struct Conv1dSpec {
  int kernel = 3;
  int stride = 1;
  int padding = 0;
  int in_channels = 1;
  int out_channels = 1;
};

// floor((n + 2p - k)/s) + 1; rejects combinations with no valid output.
inline int conv_out_extent(int extent, int kernel, int stride, int padding) {
  if (extent < 1 || kernel < 1 || stride < 1 || padding < 0) {
    throw std::invalid_argument("bad convolution geometry: extent=" + std::to_string(extent) +
                                " kernel=" + std::to_string(kernel) + " stride=" +
                                std::to_string(stride) + " padding=" + std::to_string(padding));
  }
  const int span = extent + 2 * padding - kernel;
  if (span < 0) {
    throw std::invalid_argument("kernel " + std::to_string(kernel) + " exceeds padded extent " +
                                std::to_string(extent + 2 * padding));
  }
  return span / stride + 1;
}

inline std::array<int, 3> conv3d_output_spatial(const std::array<int, 3>& in,
                                                const ConvSpec& spec) {
  return {conv_out_extent(in[0], spec.kernel[0], spec.stride[0], spec.padding[0]),
          conv_out_extent(in[1], spec.kernel[1], spec.stride[1], spec.padding[1]),
          conv_out_extent(in[2], spec.kernel[2], spec.stride[2], spec.padding[2])};
}

namespace detail {

inline int div_ceil(int a, int b) { return a >= 0 ? (a + b - 1) / b : -((-a) / b); }
inline int div_floor(int a, int b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }

// Output index range [lo, hi] such that idx*stride + tap - padding lands in [0, extent).
inline void tap_range(int out_extent, int in_extent, int stride, int padding, int tap,
                      int& lo, int& hi) {
  lo = std::max(0, div_ceil(padding - tap, stride));
  hi = std::min(out_extent - 1, div_floor(in_extent - 1 + padding - tap, stride));
}

template <typename T>
void check_conv3d_args(const TensorT<T>& input, const TensorT<T>& weights, const TensorT<T>* bias,
                       const ConvSpec& spec) {
  if (input.rank() != 4) {
    throw std::invalid_argument("conv3d input must be [C,D,H,W], got " + shape_str(input.dims()));
  }
  if (weights.rank() != 5) {
    throw std::invalid_argument("conv3d weights must be [Cout,Cin,kd,kh,kw], got " +
                                shape_str(weights.dims()));
  }
  const bool weights_ok = weights.dim(0) == spec.out_channels && weights.dim(1) == spec.in_channels &&
                          weights.dim(2) == spec.kernel[0] && weights.dim(3) == spec.kernel[1] &&
                          weights.dim(4) == spec.kernel[2];
  if (input.dim(0) != spec.in_channels || !weights_ok) {
    throw std::invalid_argument(
        "conv3d shape mismatch: input " + shape_str(input.dims()) + ", weights " +
        shape_str(weights.dims()) + ", spec expects in_channels=" + std::to_string(spec.in_channels) +
        " out_channels=" + std::to_string(spec.out_channels) + " kernel=[" +
        std::to_string(spec.kernel[0]) + ", " + std::to_string(spec.kernel[1]) + ", " +
        std::to_string(spec.kernel[2]) + "]");
  }
  if (bias && (bias->rank() != 1 || bias->dim(0) != spec.out_channels)) {
    throw std::invalid_argument("conv3d bias must be [" + std::to_string(spec.out_channels) +
                                "], got " + shape_str(bias->dims()));
  }
}

// Patch matrix for im2col-style convolution: row (c,i,j,k), column = output
// voxel, zeros where a tap falls outside the input.
template <typename T>
void conv3d_im2col(const TensorT<T>& input, const ConvSpec& spec,
                   const std::array<int, 3>& out_sp, std::vector<T>& cols) {
  const int D = input.dim(1), H = input.dim(2), W = input.dim(3);
  const int OD = out_sp[0], OH = out_sp[1], OW = out_sp[2];
  const int C = spec.in_channels;
  const int kd = spec.kernel[0], kh = spec.kernel[1], kw = spec.kernel[2];
  const int sd = spec.stride[0], sh = spec.stride[1], sw = spec.stride[2];
  const int pd = spec.padding[0], ph = spec.padding[1], pw = spec.padding[2];
  const std::size_t out_vox = static_cast<std::size_t>(OD) * OH * OW;

  cols.assign(static_cast<std::size_t>(C) * kd * kh * kw * out_vox, T(0));
  const T* in = input.data();
  T* row = cols.data();
  for (int c = 0; c < C; ++c) {
    for (int i = 0; i < kd; ++i) {
      int zlo, zhi;
      detail::tap_range(OD, D, sd, pd, i, zlo, zhi);
      for (int j = 0; j < kh; ++j) {
        int ylo, yhi;
        detail::tap_range(OH, H, sh, ph, j, ylo, yhi);
        for (int k = 0; k < kw; ++k, row += out_vox) {
          int xlo, xhi;
          detail::tap_range(OW, W, sw, pw, k, xlo, xhi);
          const int base = k - pw;
          for (int z = zlo; z <= zhi; ++z) {
            const int zi = z * sd + i - pd;
            for (int y = ylo; y <= yhi; ++y) {
              const int yi = y * sh + j - ph;
              const T* in_row = in + ((static_cast<std::size_t>(c) * D + zi) * H + yi) * W;
              T* dst = row + (static_cast<std::size_t>(z) * OH + y) * OW;
              if (sw == 1) {
                for (int x = xlo; x <= xhi; ++x) dst[x] = in_row[x + base];
              } else {
                for (int x = xlo; x <= xhi; ++x) dst[x] = in_row[x * sw + base];
              }
            }
          }
        }
      }
    }
  }
}

}  // namespace detail

// out[o,z,y,x] = bias[o] + sum_{c,i,j,k} weights[o,c,i,j,k] * padded_input[...], zeros
// outside bounds. Accumulation order per output element is (c, i, j, k), the
// same order as the defining sum.
template <typename T>
TensorT<T> conv3d_forward(const TensorT<T>& input, const TensorT<T>& weights,
                          const TensorT<T>& bias, const ConvSpec& spec) {
  detail::check_conv3d_args(input, weights, &bias, spec);
  const int D = input.dim(1), H = input.dim(2), W = input.dim(3);
  const auto out_sp = conv3d_output_spatial({D, H, W}, spec);
  const int OD = out_sp[0], OH = out_sp[1], OW = out_sp[2];
  const int C = spec.in_channels, O = spec.out_channels;
  const int taps = C * spec.kernel[0] * spec.kernel[1] * spec.kernel[2];
  const std::size_t out_vox = static_cast<std::size_t>(OD) * OH * OW;

  std::vector<T> cols;
  detail::conv3d_im2col(input, spec, out_sp, cols);

  TensorT<T> out({O, OD, OH, OW});
  const T* w = weights.data();
  for (int o = 0; o < O; ++o) {
    T* dst = out.data() + static_cast<std::size_t>(o) * out_vox;
    const T b = bias[static_cast<std::size_t>(o)];
    for (std::size_t v = 0; v < out_vox; ++v) dst[v] = b;
    const T* w_row = w + static_cast<std::size_t>(o) * taps;
    const T* col = cols.data();
    for (int t = 0; t < taps; ++t, col += out_vox) {
      const T wv = w_row[t];
      for (std::size_t v = 0; v < out_vox; ++v) dst[v] += wv * col[v];
    }
  }
  return out;
}

template <typename T>
struct Conv3dGrads {
  TensorT<T> input;
  TensorT<T> weights;
  TensorT<T> bias;
};

// Exact gradients of sum(grad_out . forward(input, weights, bias)) w.r.t. each argument.
template <typename T>
Conv3dGrads<T> conv3d_backward(const TensorT<T>& input, const TensorT<T>& weights,
                               const ConvSpec& spec, const TensorT<T>& grad_out) {
  detail::check_conv3d_args<T>(input, weights, nullptr, spec);
  const int D = input.dim(1), H = input.dim(2), W = input.dim(3);
  const auto out_sp = conv3d_output_spatial({D, H, W}, spec);
  const int OD = out_sp[0], OH = out_sp[1], OW = out_sp[2];
  if (grad_out.rank() != 4 || grad_out.dim(0) != spec.out_channels || grad_out.dim(1) != OD ||
      grad_out.dim(2) != OH || grad_out.dim(3) != OW) {
    throw std::invalid_argument("conv3d grad_out must be [" + std::to_string(spec.out_channels) +
                                ", " + std::to_string(OD) + ", " + std::to_string(OH) + ", " +
                                std::to_string(OW) + "], got " + shape_str(grad_out.dims()));
  }
  const int C = spec.in_channels, O = spec.out_channels;
  const int kd = spec.kernel[0], kh = spec.kernel[1], kw = spec.kernel[2];
  const int sd = spec.stride[0], sh = spec.stride[1], sw = spec.stride[2];
  const int pd = spec.padding[0], ph = spec.padding[1], pw = spec.padding[2];
  const int taps = C * kd * kh * kw;
  const std::size_t out_vox = static_cast<std::size_t>(OD) * OH * OW;

  Conv3dGrads<T> g{TensorT<T>(input.dims()), TensorT<T>(weights.dims()),
                   TensorT<T>(Shape{O})};

  std::vector<T> cols;
  detail::conv3d_im2col(input, spec, out_sp, cols);

  const T* w = weights.data();
  std::vector<T> dcols(cols.size(), T(0));
  for (int o = 0; o < O; ++o) {
    const T* go = grad_out.data() + static_cast<std::size_t>(o) * out_vox;
    T acc = 0;
    for (std::size_t v = 0; v < out_vox; ++v) acc += go[v];
    g.bias[static_cast<std::size_t>(o)] = acc;

    const T* w_row = w + static_cast<std::size_t>(o) * taps;
    T* gw_row = g.weights.data() + static_cast<std::size_t>(o) * taps;
    const T* col = cols.data();
    T* dcol = dcols.data();
    for (int t = 0; t < taps; ++t, col += out_vox, dcol += out_vox) {
      T wacc = 0;
      const T wv = w_row[t];
      for (std::size_t v = 0; v < out_vox; ++v) {
        wacc += go[v] * col[v];
        dcol[v] += wv * go[v];
      }
      gw_row[t] = wacc;
    }
  }

  // col2im: scatter the patch-matrix gradient back onto input positions.
  T* gin = g.input.data();
  const T* dcol = dcols.data();
  for (int c = 0; c < C; ++c) {
    for (int i = 0; i < kd; ++i) {
      int zlo, zhi;
      detail::tap_range(OD, D, sd, pd, i, zlo, zhi);
      for (int j = 0; j < kh; ++j) {
        int ylo, yhi;
        detail::tap_range(OH, H, sh, ph, j, ylo, yhi);
        for (int k = 0; k < kw; ++k, dcol += out_vox) {
          int xlo, xhi;
          detail::tap_range(OW, W, sw, pw, k, xlo, xhi);
          const int base = k - pw;
          for (int z = zlo; z <= zhi; ++z) {
            const int zi = z * sd + i - pd;
            for (int y = ylo; y <= yhi; ++y) {
              const int yi = y * sh + j - ph;
              T* gin_row = gin + ((static_cast<std::size_t>(c) * D + zi) * H + yi) * W;
              const T* src = dcol + (static_cast<std::size_t>(z) * OH + y) * OW;
              if (sw == 1) {
                for (int x = xlo; x <= xhi; ++x) gin_row[x + base] += src[x];
              } else {
                for (int x = xlo; x <= xhi; ++x) gin_row[x * sw + base] += src[x];
              }
            }
          }
        }
      }
    }
  }
  return g;
}

// 1-D analogues over [C, T] rows.
template <typename T>
TensorT<T> conv1d_forward(const TensorT<T>& input, const TensorT<T>& weights,
                          const TensorT<T>& bias, const Conv1dSpec& spec) {
  if (input.rank() != 2 || input.dim(0) != spec.in_channels) {
    throw std::invalid_argument("conv1d input must be [" + std::to_string(spec.in_channels) +
                                ", T], got " + shape_str(input.dims()));
  }
  if (weights.rank() != 3 || weights.dim(0) != spec.out_channels ||
      weights.dim(1) != spec.in_channels || weights.dim(2) != spec.kernel) {
    throw std::invalid_argument("conv1d weights must be [" + std::to_string(spec.out_channels) +
                                ", " + std::to_string(spec.in_channels) + ", " +
                                std::to_string(spec.kernel) + "], got " + shape_str(weights.dims()));
  }
  if (bias.rank() != 1 || bias.dim(0) != spec.out_channels) {
    throw std::invalid_argument("conv1d bias must be [" + std::to_string(spec.out_channels) +
                                "], got " + shape_str(bias.dims()));
  }
  const int N = input.dim(1);
  const int ON = conv_out_extent(N, spec.kernel, spec.stride, spec.padding);
  TensorT<T> out({spec.out_channels, ON});
  for (int o = 0; o < spec.out_channels; ++o) {
    T* dst = out.data() + static_cast<std::size_t>(o) * ON;
    for (int t = 0; t < ON; ++t) dst[t] = bias[static_cast<std::size_t>(o)];
    for (int c = 0; c < spec.in_channels; ++c) {
      const T* src = input.data() + static_cast<std::size_t>(c) * N;
      const T* w_oc = weights.data() +
                      (static_cast<std::size_t>(o) * spec.in_channels + c) * spec.kernel;
      for (int k = 0; k < spec.kernel; ++k) {
        int lo, hi;
        detail::tap_range(ON, N, spec.stride, spec.padding, k, lo, hi);
        const T wv = w_oc[k];
        for (int t = lo; t <= hi; ++t) dst[t] += wv * src[t * spec.stride + k - spec.padding];
      }
    }
  }
  return out;
}

template <typename T>
struct Conv1dGrads {
  TensorT<T> input;
  TensorT<T> weights;
  TensorT<T> bias;
};

template <typename T>
Conv1dGrads<T> conv1d_backward(const TensorT<T>& input, const TensorT<T>& weights,
                               const Conv1dSpec& spec, const TensorT<T>& grad_out) {
  const int N = input.dim(1);
  const int ON = conv_out_extent(N, spec.kernel, spec.stride, spec.padding);
  if (grad_out.rank() != 2 || grad_out.dim(0) != spec.out_channels || grad_out.dim(1) != ON) {
    throw std::invalid_argument("conv1d grad_out must be [" + std::to_string(spec.out_channels) +
                                ", " + std::to_string(ON) + "], got " + shape_str(grad_out.dims()));
  }
  Conv1dGrads<T> g{TensorT<T>(input.dims()), TensorT<T>(weights.dims()),
                   TensorT<T>(Shape{spec.out_channels})};
  for (int o = 0; o < spec.out_channels; ++o) {
    const T* go = grad_out.data() + static_cast<std::size_t>(o) * ON;
    T acc = 0;
    for (int t = 0; t < ON; ++t) acc += go[t];
    g.bias[static_cast<std::size_t>(o)] = acc;
    for (int c = 0; c < spec.in_channels; ++c) {
      const T* src = input.data() + static_cast<std::size_t>(c) * N;
      T* gin = g.input.data() + static_cast<std::size_t>(c) * N;
      const std::size_t w_base = (static_cast<std::size_t>(o) * spec.in_channels + c) * spec.kernel;
      for (int k = 0; k < spec.kernel; ++k) {
        int lo, hi;
        detail::tap_range(ON, N, spec.stride, spec.padding, k, lo, hi);
        const T wv = weights[w_base + static_cast<std::size_t>(k)];
        T wacc = 0;
        for (int t = lo; t <= hi; ++t) {
          const int ti = t * spec.stride + k - spec.padding;
          wacc += go[t] * src[ti];
          gin[ti] += wv * go[t];
        }
        g.weights[w_base + static_cast<std::size_t>(k)] = wacc;
      }
    }
  }
  return g;
}

// ---- elementwise ----

template <typename T>
TensorT<T> sigmoid(const TensorT<T>& x) {
  TensorT<T> out(x.dims());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = T(1) / (T(1) + std::exp(-x[i]));
  return out;
}

// d/dx from the forward output y = sigmoid(x).
template <typename T>
TensorT<T> sigmoid_backward(const TensorT<T>& y, const TensorT<T>& grad) {
  if (!y.same_dims(grad)) {
    throw std::invalid_argument("sigmoid_backward dims mismatch: " + shape_str(y.dims()) + " vs " +
                                shape_str(grad.dims()));
  }
  TensorT<T> out(y.dims());
  for (std::size_t i = 0; i < y.size(); ++i) out[i] = grad[i] * y[i] * (T(1) - y[i]);
  return out;
}

template <typename T>
TensorT<T> tanh(const TensorT<T>& x) {
  TensorT<T> out(x.dims());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::tanh(x[i]);
  return out;
}

template <typename T>
TensorT<T> tanh_backward(const TensorT<T>& y, const TensorT<T>& grad) {
  if (!y.same_dims(grad)) {
    throw std::invalid_argument("tanh_backward dims mismatch: " + shape_str(y.dims()) + " vs " +
                                shape_str(grad.dims()));
  }
  TensorT<T> out(y.dims());
  for (std::size_t i = 0; i < y.size(); ++i) out[i] = grad[i] * (T(1) - y[i] * y[i]);
  return out;
}

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
  if (!a.same_dims(b)) {
    throw std::invalid_argument("add dims mismatch: " + shape_str(a.dims()) + " vs " +
                                shape_str(b.dims()));
  }
  TensorT<T> out(a.dims());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

template <typename T>
void add_inplace(TensorT<T>& dst, const TensorT<T>& src) {
  if (!dst.same_dims(src)) {
    throw std::invalid_argument("add dims mismatch: " + shape_str(dst.dims()) + " vs " +
                                shape_str(src.dims()));
  }
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

template <typename T>
TensorT<T> hadamard(const TensorT<T>& a, const TensorT<T>& b) {
  if (!a.same_dims(b)) {
    throw std::invalid_argument("hadamard dims mismatch: " + shape_str(a.dims()) + " vs " +
                                shape_str(b.dims()));
  }
  TensorT<T> out(a.dims());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return out;
}

template <typename T>
TensorT<T> scale(const TensorT<T>& a, T factor) {
  TensorT<T> out(a.dims());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * factor;
  return out;
}

// ---- pooling ----

// Mean over all spatial positions of a [C,D,H,W] tensor, per channel.
template <typename T>
TensorT<T> global_spatial_avg_pool(const TensorT<T>& input) {
  if (input.rank() != 4) {
    throw std::invalid_argument("global_spatial_avg_pool needs [C,D,H,W], got " +
                                shape_str(input.dims()));
  }
  const int C = input.dim(0);
  const std::size_t plane = input.size() / static_cast<std::size_t>(C);
  TensorT<T> out({C});
  for (int c = 0; c < C; ++c) {
    const T* src = input.data() + static_cast<std::size_t>(c) * plane;
    T acc = 0;
    for (std::size_t i = 0; i < plane; ++i) acc += src[i];
    out[static_cast<std::size_t>(c)] = acc / static_cast<T>(plane);
  }
  return out;
}

template <typename T>
TensorT<T> global_spatial_avg_pool_backward(const TensorT<T>& grad, const Shape& input_dims) {
  if (input_dims.size() != 4 || grad.rank() != 1 || grad.dim(0) != input_dims[0]) {
    throw std::invalid_argument("pool backward shape mismatch: grad " + shape_str(grad.dims()) +
                                " vs input " + shape_str(input_dims));
  }
  TensorT<T> out(input_dims);
  const int C = input_dims[0];
  const std::size_t plane = out.size() / static_cast<std::size_t>(C);
  for (int c = 0; c < C; ++c) {
    const T g = grad[static_cast<std::size_t>(c)] / static_cast<T>(plane);
    T* dst = out.data() + static_cast<std::size_t>(c) * plane;
    for (std::size_t i = 0; i < plane; ++i) dst[i] = g;
  }
  return out;
}

// ---- dropout ----

template <typename T>
struct DropoutResult {
  TensorT<T> output;
  TensorT<T> mask;  // 0 for dropped scalars, 1/(1-rate) for survivors
};

// Inverted dropout: survivors scaled at train time, eval is the identity.
template <typename T>
DropoutResult<T> dropout_forward(const TensorT<T>& input, double rate, Rng& rng, bool training) {
  if (rate < 0.0 || rate >= 1.0) {
    throw std::invalid_argument("dropout rate must be in [0, 1), got " + std::to_string(rate));
  }
  if (!training || rate == 0.0) {
    return {input, TensorT<T>::full(input.dims(), T(1))};
  }
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  DropoutResult<T> r{TensorT<T>(input.dims()), TensorT<T>(input.dims())};
  for (std::size_t i = 0; i < input.size(); ++i) {
    const bool keep = rng.uniform() >= rate;
    r.mask[i] = keep ? keep_scale : T(0);
    r.output[i] = input[i] * r.mask[i];
  }
  return r;
}

template <typename T>
TensorT<T> dropout_backward(const TensorT<T>& mask, const TensorT<T>& grad) {
  return hadamard(mask, grad);
}

}  // namespace st4d
