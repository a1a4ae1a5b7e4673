#pragma once

// Brute-force reference implementations used only by tests. These are written
// directly from the operation definitions, with plain nested loops and scalar
// math, independent of the library kernels they check.

#include <cmath>
#include <functional>
#include <vector>

#include "st4d/ops.hpp"
#include "st4d/tensor.hpp"

namespace oracle {

// Seven nested loops, explicit zero padding.
inline st4d::Tensord naive_conv3d(const st4d::Tensord& input, const st4d::Tensord& weights,
                                  const st4d::Tensord& bias, const st4d::ConvSpec& spec) {
  const int C = spec.in_channels, O = spec.out_channels;
  const int D = input.dim(1), H = input.dim(2), W = input.dim(3);
  const int kd = spec.kernel[0], kh = spec.kernel[1], kw = spec.kernel[2];
  const int sd = spec.stride[0], sh = spec.stride[1], sw = spec.stride[2];
  const int pd = spec.padding[0], ph = spec.padding[1], pw = spec.padding[2];
  const int OD = (D + 2 * pd - kd) / sd + 1;
  const int OH = (H + 2 * ph - kh) / sh + 1;
  const int OW = (W + 2 * pw - kw) / sw + 1;
  st4d::Tensord out({O, OD, OH, OW});
  for (int o = 0; o < O; ++o)
    for (int z = 0; z < OD; ++z)
      for (int y = 0; y < OH; ++y)
        for (int x = 0; x < OW; ++x) {
          double sum = bias[static_cast<std::size_t>(o)];
          for (int c = 0; c < C; ++c)
            for (int i = 0; i < kd; ++i)
              for (int j = 0; j < kh; ++j)
                for (int k = 0; k < kw; ++k) {
                  const int zi = z * sd + i - pd;
                  const int yi = y * sh + j - ph;
                  const int xi = x * sw + k - pw;
                  if (zi < 0 || zi >= D || yi < 0 || yi >= H || xi < 0 || xi >= W) continue;
                  sum += weights.at({o, c, i, j, k}) * input.at({c, zi, yi, xi});
                }
          out.at({o, z, y, x}) = sum;
        }
  return out;
}

inline st4d::Tensord naive_conv1d(const st4d::Tensord& input, const st4d::Tensord& weights,
                                  const st4d::Tensord& bias, const st4d::Conv1dSpec& spec) {
  const int C = spec.in_channels, O = spec.out_channels;
  const int N = input.dim(1);
  const int ON = (N + 2 * spec.padding - spec.kernel) / spec.stride + 1;
  st4d::Tensord out({O, ON});
  for (int o = 0; o < O; ++o)
    for (int t = 0; t < ON; ++t) {
      double sum = bias[static_cast<std::size_t>(o)];
      for (int c = 0; c < C; ++c)
        for (int k = 0; k < spec.kernel; ++k) {
          const int ti = t * spec.stride + k - spec.padding;
          if (ti < 0 || ti >= N) continue;
          sum += weights.at({o, c, k}) * input.at({c, ti});
        }
      out.at({o, t}) = sum;
    }
  return out;
}

inline double scalar_sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// One C-LSTM timestep evaluated scalar-by-scalar from the gate equations:
//   i = sig(Wxi*X + Whi*H + bi)       f = sig(Wxf*X + Whf*H + bf)
//   o = sig(Wxo*X + Who*H + bo)       g = tanh(Wxc*X + Whc*H + bc)
//   C' = f.C + i.g                    H' = o.tanh(C')
// Convolutions are stride-1 with zero same-padding of (k-1)/2.
struct ScalarClstmResult {
  st4d::Tensord i, f, o, g, c, h;
};

inline ScalarClstmResult scalar_convlstm_step(
    const st4d::Tensord& x, const st4d::Tensord& h_prev, const st4d::Tensord& c_prev,
    const st4d::Tensord& w_xi, const st4d::Tensord& w_xf, const st4d::Tensord& w_xo,
    const st4d::Tensord& w_xc, const st4d::Tensord& w_hi, const st4d::Tensord& w_hf,
    const st4d::Tensord& w_ho, const st4d::Tensord& w_hc, const st4d::Tensord& b_i,
    const st4d::Tensord& b_f, const st4d::Tensord& b_o, const st4d::Tensord& b_c) {
  const int hidden = w_xi.dim(0);
  const int cin = w_xi.dim(1);
  const int k = w_xi.dim(2);
  const int p = (k - 1) / 2;
  const int D = x.dim(1), H = x.dim(2), W = x.dim(3);

  auto conv_at = [&](const st4d::Tensord& src, const st4d::Tensord& w, int channels, int u,
                     int z, int y, int xx) {
    double sum = 0.0;
    for (int c = 0; c < channels; ++c)
      for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j)
          for (int l = 0; l < k; ++l) {
            const int zi = z + i - p, yi = y + j - p, xi = xx + l - p;
            if (zi < 0 || zi >= D || yi < 0 || yi >= H || xi < 0 || xi >= W) continue;
            sum += w.at({u, c, i, j, l}) * src.at({c, zi, yi, xi});
          }
    return sum;
  };

  ScalarClstmResult r{st4d::Tensord({hidden, D, H, W}), st4d::Tensord({hidden, D, H, W}),
                      st4d::Tensord({hidden, D, H, W}), st4d::Tensord({hidden, D, H, W}),
                      st4d::Tensord({hidden, D, H, W}), st4d::Tensord({hidden, D, H, W})};
  for (int u = 0; u < hidden; ++u)
    for (int z = 0; z < D; ++z)
      for (int y = 0; y < H; ++y)
        for (int xx = 0; xx < W; ++xx) {
          const double ai = conv_at(x, w_xi, cin, u, z, y, xx) +
                            conv_at(h_prev, w_hi, hidden, u, z, y, xx) +
                            b_i[static_cast<std::size_t>(u)];
          const double af = conv_at(x, w_xf, cin, u, z, y, xx) +
                            conv_at(h_prev, w_hf, hidden, u, z, y, xx) +
                            b_f[static_cast<std::size_t>(u)];
          const double ao = conv_at(x, w_xo, cin, u, z, y, xx) +
                            conv_at(h_prev, w_ho, hidden, u, z, y, xx) +
                            b_o[static_cast<std::size_t>(u)];
          const double ac = conv_at(x, w_xc, cin, u, z, y, xx) +
                            conv_at(h_prev, w_hc, hidden, u, z, y, xx) +
                            b_c[static_cast<std::size_t>(u)];
          const double iv = scalar_sigmoid(ai);
          const double fv = scalar_sigmoid(af);
          const double ov = scalar_sigmoid(ao);
          const double gv = std::tanh(ac);
          const double cv = fv * c_prev.at({u, z, y, xx}) + iv * gv;
          r.i.at({u, z, y, xx}) = iv;
          r.f.at({u, z, y, xx}) = fv;
          r.o.at({u, z, y, xx}) = ov;
          r.g.at({u, z, y, xx}) = gv;
          r.c.at({u, z, y, xx}) = cv;
          r.h.at({u, z, y, xx}) = ov * std::tanh(cv);
        }
  return r;
}

// Guarded relative error; the floor turns it into an absolute check for
// near-zero pairs so central-difference roundoff does not trip it.
inline double rel_err(double a, double b, double floor = 1e-4) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Central finite difference of a scalar function along one coordinate.
inline double central_diff(const std::function<double()>& f, double& coord, double h = 1e-5) {
  const double saved = coord;
  coord = saved + h;
  const double fp = f();
  coord = saved - h;
  const double fm = f();
  coord = saved;
  return (fp - fm) / (2.0 * h);
}

// Max guarded relative error between an analytic gradient tensor and central
// differences of `loss` over all (or `samples` rng-chosen) coordinates of `param`.
inline double check_grad(st4d::Tensord& param, const st4d::Tensord& analytic,
                         const std::function<double()>& loss, st4d::Rng& rng, int samples = 0,
                         double h = 1e-5) {
  double worst = 0.0;
  const std::size_t n = param.size();
  std::vector<std::size_t> idx;
  if (samples <= 0 || static_cast<std::size_t>(samples) >= n) {
    for (std::size_t i = 0; i < n; ++i) idx.push_back(i);
  } else {
    for (int s = 0; s < samples; ++s)
      idx.push_back(static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n) - 1)));
  }
  for (std::size_t i : idx) {
    const double fd = central_diff(loss, param[i], h);
    worst = std::max(worst, rel_err(analytic[i], fd));
  }
  return worst;
}

inline st4d::Tensord random_tensor(st4d::Shape dims, st4d::Rng& rng, double lo = -1.0,
                                   double hi = 1.0) {
  st4d::Tensord t(std::move(dims));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

}  // namespace oracle
