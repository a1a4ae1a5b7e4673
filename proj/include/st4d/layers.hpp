#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "st4d/ops.hpp"
#include "st4d/tensor.hpp"

namespace st4d {

// One trainable 3-D convolution: weight [Cout,Cin,kd,kh,kw], bias [Cout].
template <typename T>
struct Conv3dLayerT {
  ConvSpec spec;
  TensorT<T> weight;
  TensorT<T> bias;
};

template <typename T>
struct Conv1dLayerT {
  Conv1dSpec spec;
  TensorT<T> weight;  // [Cout, Cin, k]
  TensorT<T> bias;    // [Cout]
};

// C-LSTM cell parameters. Input-to-gate kernels are [hidden, Cin, k, k, k],
// hidden-to-gate kernels [hidden, hidden, k, k, k], biases [hidden]. All
// convolutions run at stride 1 with zero same-padding, so hidden and cell
// states keep the input's spatial extents.
template <typename T>
struct ConvLstmParamsT {
  TensorT<T> w_xi, w_xf, w_xo, w_xc;
  TensorT<T> w_hi, w_hf, w_ho, w_hc;
  TensorT<T> b_i, b_f, b_o, b_c;

  int hidden_channels() const { return w_hi.dim(0); }
  int input_channels() const { return w_xi.dim(1); }
  int kernel() const { return w_xi.dim(2); }

  ConvSpec input_spec() const {
    const int k = kernel(), p = (k - 1) / 2;
    return ConvSpec{{k, k, k}, {1, 1, 1}, {p, p, p}, input_channels(), hidden_channels()};
  }
  ConvSpec hidden_spec() const {
    const int k = kernel(), p = (k - 1) / 2;
    return ConvSpec{{k, k, k}, {1, 1, 1}, {p, p, p}, hidden_channels(), hidden_channels()};
  }
};

template <typename T>
struct ConvLstmStateT {
  TensorT<T> h;  // hidden state, [hidden, D, H, W]
  TensorT<T> c;  // cell state, same dims
};

// Gate outputs of one step: i, f, o in (0,1), candidate g in (-1,1).
template <typename T>
struct GateActivationsT {
  TensorT<T> i, f, o, g;
};

template <typename T>
struct ConvLstmStepResultT {
  ConvLstmStateT<T> state;
  GateActivationsT<T> gates;
};

namespace detail {

template <typename T>
void check_convlstm_params(const ConvLstmParamsT<T>& p) {
  const int hidden = p.w_xi.dim(0);
  const int cin = p.w_xi.dim(1);
  const int k = p.w_xi.dim(2);
  if (k % 2 == 0) {
    throw std::invalid_argument("C-LSTM kernel extent must be odd for same-padding, got " +
                                std::to_string(k));
  }
  auto want_x = Shape{hidden, cin, k, k, k};
  auto want_h = Shape{hidden, hidden, k, k, k};
  auto want_b = Shape{hidden};
  for (const TensorT<T>* w : {&p.w_xi, &p.w_xf, &p.w_xo, &p.w_xc}) {
    if (w->dims() != want_x)
      throw std::invalid_argument("C-LSTM input kernel shape " + shape_str(w->dims()) +
                                  " != " + shape_str(want_x));
  }
  for (const TensorT<T>* w : {&p.w_hi, &p.w_hf, &p.w_ho, &p.w_hc}) {
    if (w->dims() != want_h)
      throw std::invalid_argument("C-LSTM hidden kernel shape " + shape_str(w->dims()) +
                                  " != " + shape_str(want_h));
  }
  for (const TensorT<T>* b : {&p.b_i, &p.b_f, &p.b_o, &p.b_c}) {
    if (b->dims() != want_b)
      throw std::invalid_argument("C-LSTM bias shape " + shape_str(b->dims()) +
                                  " != " + shape_str(want_b));
  }
}

}  // namespace detail

template <typename T>
ConvLstmStateT<T> zero_state(const ConvLstmParamsT<T>& params, const std::array<int, 3>& spatial) {
  Shape dims{params.hidden_channels(), spatial[0], spatial[1], spatial[2]};
  return {TensorT<T>(dims), TensorT<T>(dims)};
}

// One C-LSTM timestep:
//   i = sig(Wxi*X + Whi*H + bi), f and o alike, g = tanh(Wxc*X + Whc*H + bc)
//   C' = f.C + i.g,  H' = o.tanh(C')
template <typename T>
ConvLstmStepResultT<T> convlstm_step(const TensorT<T>& x, const ConvLstmStateT<T>& prev,
                                     const ConvLstmParamsT<T>& params) {
  detail::check_convlstm_params(params);
  if (x.rank() != 4 || x.dim(0) != params.input_channels()) {
    throw std::invalid_argument("C-LSTM input must be [" +
                                std::to_string(params.input_channels()) + ",D,H,W], got " +
                                shape_str(x.dims()));
  }
  const Shape state_dims{params.hidden_channels(), x.dim(1), x.dim(2), x.dim(3)};
  if (prev.h.dims() != state_dims || prev.c.dims() != state_dims) {
    throw std::invalid_argument("C-LSTM state shape " + shape_str(prev.h.dims()) +
                                " does not match input-derived shape " + shape_str(state_dims));
  }
  const ConvSpec sx = params.input_spec();
  const ConvSpec sh = params.hidden_spec();
  const TensorT<T> zero_bias(Shape{params.hidden_channels()});

  auto gate_pre = [&](const TensorT<T>& wx, const TensorT<T>& wh, const TensorT<T>& b) {
    TensorT<T> a = conv3d_forward(x, wx, b, sx);
    add_inplace(a, conv3d_forward(prev.h, wh, zero_bias, sh));
    return a;
  };

  GateActivationsT<T> gates;
  gates.i = sigmoid(gate_pre(params.w_xi, params.w_hi, params.b_i));
  gates.f = sigmoid(gate_pre(params.w_xf, params.w_hf, params.b_f));
  gates.o = sigmoid(gate_pre(params.w_xo, params.w_ho, params.b_o));
  gates.g = st4d::tanh(gate_pre(params.w_xc, params.w_hc, params.b_c));

  ConvLstmStateT<T> next;
  next.c = add(hadamard(gates.f, prev.c), hadamard(gates.i, gates.g));
  next.h = hadamard(gates.o, st4d::tanh(next.c));
  return {std::move(next), std::move(gates)};
}

// Forward-pass record for backpropagation through time.
template <typename T>
struct ConvLstmSeqCacheT {
  std::vector<ConvLstmStateT<T>> states;   // state after each step
  std::vector<GateActivationsT<T>> gates;  // gate outputs of each step
};

// Runs t = 0..T-1 from a zero initial state over a [T,Cin,D,H,W] sequence.
template <typename T>
ConvLstmSeqCacheT<T> convlstm_forward(const TensorT<T>& sequence,
                                      const ConvLstmParamsT<T>& params) {
  if (sequence.rank() != 5) {
    throw std::invalid_argument("C-LSTM sequence must be [T,C,D,H,W], got " +
                                shape_str(sequence.dims()));
  }
  const int steps = sequence.dim(0);
  ConvLstmSeqCacheT<T> cache;
  cache.states.reserve(steps);
  cache.gates.reserve(steps);
  ConvLstmStateT<T> state =
      zero_state(params, {sequence.dim(2), sequence.dim(3), sequence.dim(4)});
  for (int t = 0; t < steps; ++t) {
    auto step = convlstm_step(slice_axis0(sequence, t), state, params);
    state = step.state;
    cache.states.push_back(std::move(step.state));
    cache.gates.push_back(std::move(step.gates));
  }
  return cache;
}

template <typename T>
struct ConvLstmBpttResultT {
  TensorT<T> grad_sequence;    // [T, Cin, D, H, W]
  ConvLstmParamsT<T> grads;    // same shapes as the parameters
};

template <typename T>
ConvLstmParamsT<T> zero_like(const ConvLstmParamsT<T>& p) {
  return {TensorT<T>(p.w_xi.dims()), TensorT<T>(p.w_xf.dims()), TensorT<T>(p.w_xo.dims()),
          TensorT<T>(p.w_xc.dims()), TensorT<T>(p.w_hi.dims()), TensorT<T>(p.w_hf.dims()),
          TensorT<T>(p.w_ho.dims()), TensorT<T>(p.w_hc.dims()), TensorT<T>(p.b_i.dims()),
          TensorT<T>(p.b_f.dims()),  TensorT<T>(p.b_o.dims()),  TensorT<T>(p.b_c.dims())};
}

// Exact gradients of sum_t <grad_out[t], H_t> w.r.t. the sequence and all 12
// parameter tensors, accumulated across timesteps.
template <typename T>
ConvLstmBpttResultT<T> convlstm_backward_through_time(const TensorT<T>& sequence,
                                                      const ConvLstmParamsT<T>& params,
                                                      const ConvLstmSeqCacheT<T>& cache,
                                                      const TensorT<T>& grad_out) {
  const int steps = sequence.dim(0);
  if (static_cast<int>(cache.states.size()) != steps ||
      static_cast<int>(cache.gates.size()) != steps) {
    throw std::logic_error("C-LSTM cache covers " + std::to_string(cache.states.size()) +
                           " steps but the sequence has " + std::to_string(steps));
  }
  if (grad_out.rank() != 5 || grad_out.dim(0) != steps) {
    throw std::invalid_argument("grad_out must be [T,hidden,D,H,W] with T=" +
                                std::to_string(steps) + ", got " + shape_str(grad_out.dims()));
  }

  const ConvSpec sx = params.input_spec();
  const ConvSpec sh = params.hidden_spec();
  const std::array<int, 3> spatial{sequence.dim(2), sequence.dim(3), sequence.dim(4)};

  ConvLstmBpttResultT<T> result{TensorT<T>(sequence.dims()), zero_like(params)};
  ConvLstmStateT<T> zero = zero_state(params, spatial);
  TensorT<T> dh_next(zero.h.dims());
  TensorT<T> dc_next(zero.c.dims());

  for (int t = steps - 1; t >= 0; --t) {
    const auto& gate = cache.gates[static_cast<std::size_t>(t)];
    const TensorT<T>& c_t = cache.states[static_cast<std::size_t>(t)].c;
    const TensorT<T>& h_prev = t > 0 ? cache.states[static_cast<std::size_t>(t - 1)].h : zero.h;
    const TensorT<T>& c_prev = t > 0 ? cache.states[static_cast<std::size_t>(t - 1)].c : zero.c;
    const TensorT<T> x_t = slice_axis0(sequence, t);

    TensorT<T> dh = add(slice_axis0(grad_out, t), dh_next);
    const TensorT<T> tanh_c = st4d::tanh(c_t);

    // H = o . tanh(C)
    TensorT<T> d_o = hadamard(dh, tanh_c);
    TensorT<T> dct = add(dc_next, tanh_backward(tanh_c, hadamard(dh, gate.o)));

    // C = f . C_prev + i . g
    TensorT<T> d_f = hadamard(dct, c_prev);
    TensorT<T> d_i = hadamard(dct, gate.g);
    TensorT<T> d_g = hadamard(dct, gate.i);
    dc_next = hadamard(dct, gate.f);

    const TensorT<T> da_i = sigmoid_backward(gate.i, d_i);
    const TensorT<T> da_f = sigmoid_backward(gate.f, d_f);
    const TensorT<T> da_o = sigmoid_backward(gate.o, d_o);
    const TensorT<T> da_g = tanh_backward(gate.g, d_g);

    TensorT<T> dx(x_t.dims());
    TensorT<T> dhp(zero.h.dims());

    struct GateSlot {
      const TensorT<T>* da;
      const TensorT<T>* wx;
      const TensorT<T>* wh;
      TensorT<T>* gwx;
      TensorT<T>* gwh;
      TensorT<T>* gb;
    };
    const GateSlot slots[4] = {
        {&da_i, &params.w_xi, &params.w_hi, &result.grads.w_xi, &result.grads.w_hi,
         &result.grads.b_i},
        {&da_f, &params.w_xf, &params.w_hf, &result.grads.w_xf, &result.grads.w_hf,
         &result.grads.b_f},
        {&da_o, &params.w_xo, &params.w_ho, &result.grads.w_xo, &result.grads.w_ho,
         &result.grads.b_o},
        {&da_g, &params.w_xc, &params.w_hc, &result.grads.w_xc, &result.grads.w_hc,
         &result.grads.b_c},
    };
    for (const auto& s : slots) {
      auto gx = conv3d_backward(x_t, *s.wx, sx, *s.da);
      add_inplace(dx, gx.input);
      add_inplace(*s.gwx, gx.weights);
      add_inplace(*s.gb, gx.bias);
      auto gh = conv3d_backward(h_prev, *s.wh, sh, *s.da);
      add_inplace(dhp, gh.input);
      add_inplace(*s.gwh, gh.weights);
    }
    dh_next = std::move(dhp);
    std::copy_n(dx.data(), dx.size(),
                result.grad_sequence.data() + static_cast<std::size_t>(t) * dx.size());
  }
  return result;
}

// ---- bidirectional wrapper ----

template <typename T>
struct BidirConvLstmParamsT {
  ConvLstmParamsT<T> fwd;
  ConvLstmParamsT<T> bwd;
};

template <typename T>
struct BidirCacheT {
  ConvLstmSeqCacheT<T> fwd;
  ConvLstmSeqCacheT<T> bwd;  // computed over the time-reversed sequence
};

template <typename T>
TensorT<T> reverse_axis0(const TensorT<T>& seq) {
  TensorT<T> out(seq.dims());
  const int steps = seq.dim(0);
  const std::size_t stride = seq.size() / static_cast<std::size_t>(steps);
  for (int t = 0; t < steps; ++t) {
    std::copy_n(seq.data() + static_cast<std::size_t>(t) * stride, stride,
                out.data() + static_cast<std::size_t>(steps - 1 - t) * stride);
  }
  return out;
}

template <typename T>
struct BidirForwardResultT {
  TensorT<T> output;  // [T, 2*hidden, D, H, W]
  BidirCacheT<T> cache;
};

// Forward direction runs t = 1..T, backward direction runs the reversed
// sequence, both from zero state. Output at t concatenates the forward hidden
// state H_t with the backward hidden state H'_{T+1-t} along channels.
template <typename T>
BidirForwardResultT<T> bidirectional_forward(const TensorT<T>& sequence,
                                             const BidirConvLstmParamsT<T>& params) {
  if (sequence.rank() != 5 || sequence.dim(0) < 1) {
    throw std::invalid_argument("bidirectional C-LSTM needs a non-empty [T,C,D,H,W] sequence, got " +
                                shape_str(sequence.dims()));
  }
  if (params.fwd.hidden_channels() != params.bwd.hidden_channels()) {
    throw std::invalid_argument("bidirectional halves disagree on hidden channels: " +
                                std::to_string(params.fwd.hidden_channels()) + " vs " +
                                std::to_string(params.bwd.hidden_channels()));
  }
  const int steps = sequence.dim(0);
  const int hidden = params.fwd.hidden_channels();
  const int D = sequence.dim(2), H = sequence.dim(3), W = sequence.dim(4);

  BidirForwardResultT<T> r{TensorT<T>({steps, 2 * hidden, D, H, W}), {}};
  r.cache.fwd = convlstm_forward(sequence, params.fwd);
  r.cache.bwd = convlstm_forward(reverse_axis0(sequence), params.bwd);

  const std::size_t half = static_cast<std::size_t>(hidden) * D * H * W;
  for (int t = 0; t < steps; ++t) {
    T* dst = r.output.data() + static_cast<std::size_t>(t) * 2 * half;
    std::copy_n(r.cache.fwd.states[static_cast<std::size_t>(t)].h.data(), half, dst);
    std::copy_n(r.cache.bwd.states[static_cast<std::size_t>(steps - 1 - t)].h.data(), half,
                dst + half);
  }
  return r;
}

template <typename T>
struct BidirBackwardResultT {
  TensorT<T> grad_sequence;
  BidirConvLstmParamsT<T> grads;
};

template <typename T>
BidirBackwardResultT<T> bidirectional_backward(const TensorT<T>& sequence,
                                               const BidirConvLstmParamsT<T>& params,
                                               const BidirCacheT<T>& cache,
                                               const TensorT<T>& grad_out) {
  const int steps = sequence.dim(0);
  const int hidden = params.fwd.hidden_channels();
  const int D = sequence.dim(2), H = sequence.dim(3), W = sequence.dim(4);
  if (grad_out.rank() != 5 || grad_out.dim(0) != steps || grad_out.dim(1) != 2 * hidden) {
    throw std::invalid_argument("bidirectional grad_out must be [T, 2*hidden, D, H, W], got " +
                                shape_str(grad_out.dims()));
  }
  const std::size_t half = static_cast<std::size_t>(hidden) * D * H * W;
  TensorT<T> g_fwd({steps, hidden, D, H, W});
  TensorT<T> g_bwd({steps, hidden, D, H, W});
  for (int t = 0; t < steps; ++t) {
    const T* src = grad_out.data() + static_cast<std::size_t>(t) * 2 * half;
    std::copy_n(src, half, g_fwd.data() + static_cast<std::size_t>(t) * half);
    std::copy_n(src + half, half,
                g_bwd.data() + static_cast<std::size_t>(steps - 1 - t) * half);
  }
  auto rf = convlstm_backward_through_time(sequence, params.fwd, cache.fwd, g_fwd);
  const TensorT<T> reversed = reverse_axis0(sequence);
  auto rb = convlstm_backward_through_time(reversed, params.bwd, cache.bwd, g_bwd);
  TensorT<T> grad_seq = std::move(rf.grad_sequence);
  add_inplace(grad_seq, reverse_axis0(rb.grad_sequence));
  return {std::move(grad_seq), {std::move(rf.grads), std::move(rb.grads)}};
}

// ---- dense head ----

template <typename T>
TensorT<T> dense_forward(const TensorT<T>& input, const TensorT<T>& weights,
                         const TensorT<T>& bias) {
  if (input.rank() != 1 || weights.rank() != 2 || weights.dim(1) != input.dim(0) ||
      bias.dim(0) != weights.dim(0)) {
    throw std::invalid_argument("dense shape mismatch: input " + shape_str(input.dims()) +
                                ", weights " + shape_str(weights.dims()) + ", bias " +
                                shape_str(bias.dims()));
  }
  const int K = weights.dim(0), F = weights.dim(1);
  TensorT<T> out({K});
  for (int k = 0; k < K; ++k) {
    T acc = bias[static_cast<std::size_t>(k)];
    const T* row = weights.data() + static_cast<std::size_t>(k) * F;
    for (int f = 0; f < F; ++f) acc += row[f] * input[static_cast<std::size_t>(f)];
    out[static_cast<std::size_t>(k)] = acc;
  }
  return out;
}

template <typename T>
struct DenseGrads {
  TensorT<T> input;
  TensorT<T> weights;
  TensorT<T> bias;
};

template <typename T>
DenseGrads<T> dense_backward(const TensorT<T>& input, const TensorT<T>& weights,
                             const TensorT<T>& grad_out) {
  const int K = weights.dim(0), F = weights.dim(1);
  if (grad_out.rank() != 1 || grad_out.dim(0) != K) {
    throw std::invalid_argument("dense grad_out must be [" + std::to_string(K) + "], got " +
                                shape_str(grad_out.dims()));
  }
  DenseGrads<T> g{TensorT<T>(input.dims()), TensorT<T>(weights.dims()), TensorT<T>(Shape{K})};
  for (int k = 0; k < K; ++k) {
    const T go = grad_out[static_cast<std::size_t>(k)];
    g.bias[static_cast<std::size_t>(k)] = go;
    const T* row = weights.data() + static_cast<std::size_t>(k) * F;
    T* grow = g.weights.data() + static_cast<std::size_t>(k) * F;
    for (int f = 0; f < F; ++f) {
      grow[f] = go * input[static_cast<std::size_t>(f)];
      g.input[static_cast<std::size_t>(f)] += go * row[f];
    }
  }
  return g;
}

// ---- temporal pooling ----

// Arithmetic mean over the time axis of a [T, F] tensor.
template <typename T>
TensorT<T> temporal_mean_pool(const TensorT<T>& sequence) {
  if (sequence.rank() != 2) {
    throw std::invalid_argument("temporal_mean_pool needs [T, F], got " +
                                shape_str(sequence.dims()));
  }
  const int steps = sequence.dim(0), F = sequence.dim(1);
  TensorT<T> out({F});
  for (int t = 0; t < steps; ++t) {
    const T* row = sequence.data() + static_cast<std::size_t>(t) * F;
    for (int f = 0; f < F; ++f) out[static_cast<std::size_t>(f)] += row[f];
  }
  for (int f = 0; f < F; ++f) out[static_cast<std::size_t>(f)] /= static_cast<T>(steps);
  return out;
}

template <typename T>
TensorT<T> temporal_mean_pool_backward(const TensorT<T>& grad, int steps) {
  if (grad.rank() != 1 || steps < 1) {
    throw std::invalid_argument("temporal_mean_pool_backward needs [F] grad and T >= 1");
  }
  const int F = grad.dim(0);
  TensorT<T> out({steps, F});
  for (int t = 0; t < steps; ++t) {
    T* row = out.data() + static_cast<std::size_t>(t) * F;
    for (int f = 0; f < F; ++f) row[f] = grad[static_cast<std::size_t>(f)] / static_cast<T>(steps);
  }
  return out;
}

}  // namespace st4d
