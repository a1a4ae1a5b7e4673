#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "st4d/errors.hpp"
#include "st4d/layers.hpp"
#include "st4d/ops.hpp"
#include "st4d/rng.hpp"
#include "st4d/tensor.hpp"

namespace st4d {

enum class ModelVariant { kClstm, kConv1d };

inline std::string variant_name(ModelVariant v) {
  return v == ModelVariant::kClstm ? "clstm" : "conv1d";
}

inline ModelVariant variant_from_name(const std::string& name) {
  if (name == "clstm") return ModelVariant::kClstm;
  if (name == "conv1d") return ModelVariant::kConv1d;
  throw ConfigError("unknown model variant '" + name + "' (expected clstm or conv1d)");
}

// One CNN stage layer: cubic kernel, isotropic stride/padding.
struct ConvLayerSpec {
  int out_channels = 8;
  int kernel = 3;
  int stride = 2;
  int padding = 1;
  double dropout = 0.2;
};

struct ModelConfig {
  ModelVariant variant = ModelVariant::kClstm;
  std::array<int, 3> input_spatial{45, 54, 45};
  int input_channels = 1;
  int crop_length = 20;
  std::vector<ConvLayerSpec> spatial_cnn;
  int clstm_hidden = 32;
  int clstm_layers = 2;
  int clstm_kernel = 3;
  std::vector<ConvLayerSpec> head_cnn;
  int temporal_channels = 64;  // conv1d variant
  int temporal_kernel = 3;     // conv1d variant; 1 disables temporal mixing
  int num_classes = 2;

  // Full-size profile: four stride-2 spatial layers on the 45x54x45 grid,
  // two bidirectional C-LSTM layers, two head layers down to 1x1x1.
  static ModelConfig full(ModelVariant v) {
    ModelConfig c;
    c.variant = v;
    c.spatial_cnn = {{8, 3, 2, 1, 0.2}, {16, 3, 2, 1, 0.2}, {32, 3, 2, 1, 0.2}, {32, 3, 2, 1, 0.2}};
    c.clstm_hidden = 32;
    c.clstm_layers = 2;
    c.head_cnn = {{64, 3, 2, 1, 0.2}, {64, 3, 2, 1, 0.2}};
    c.temporal_channels = 64;
    return c;
  }

  // Reduced profile sized for CPU runs on the 12x14x12 synthetic grid.
  static ModelConfig desk_scale(ModelVariant v) {
    ModelConfig c;
    c.variant = v;
    c.input_spatial = {12, 14, 12};
    c.spatial_cnn = {{8, 3, 2, 1, 0.2}, {16, 3, 2, 1, 0.2}};
    c.clstm_hidden = 16;
    c.clstm_layers = 1;
    c.head_cnn = {{32, 3, 2, 1, 0.2}, {32, 3, 2, 1, 0.2}};
    c.temporal_channels = 32;
    return c;
  }
};

// Spatial extents at every stage, derived purely from the config.
struct ShapeChain {
  std::vector<std::array<int, 3>> spatial;  // after each spatial_cnn layer
  std::array<int, 3> clstm_spatial{};       // C-LSTM operating grid
  std::vector<std::array<int, 3>> head;     // after each head_cnn layer
  int feature_count = 0;                    // flattened per-timestep features (clstm)
  int pooled_features = 0;                  // channels after global pool (conv1d)
  int dense_inputs = 0;
};

ShapeChain validate_config(const ModelConfig& config);
std::size_t parameter_count(const ModelConfig& config);

template <typename T>
struct ModelParamsT {
  ModelConfig config;
  std::vector<Conv3dLayerT<T>> spatial;
  std::vector<BidirConvLstmParamsT<T>> clstm;
  std::vector<Conv3dLayerT<T>> head;
  Conv1dLayerT<T> temporal;
  TensorT<T> dense_w;
  TensorT<T> dense_b;

  // Visits every trainable tensor in a fixed order with its stable path.
  template <typename Fn>
  void for_each(Fn&& fn) {
    visit(*this, fn);
  }
  template <typename Fn>
  void for_each(Fn&& fn) const {
    visit(const_cast<ModelParamsT&>(*this),
          [&](const std::string& path, TensorT<T>& t) { fn(path, static_cast<const TensorT<T>&>(t)); });
  }

  std::vector<std::string> parameter_paths() const {
    std::vector<std::string> out;
    for_each([&](const std::string& p, const TensorT<T>&) { out.push_back(p); });
    return out;
  }

  TensorT<T>* find(const std::string& path) {
    TensorT<T>* hit = nullptr;
    for_each([&](const std::string& p, TensorT<T>& t) {
      if (p == path) hit = &t;
    });
    return hit;
  }

 private:
  template <typename Fn>
  static void visit(ModelParamsT& m, Fn&& fn) {
    for (std::size_t l = 0; l < m.spatial.size(); ++l) {
      fn("spatial." + std::to_string(l) + ".weight", m.spatial[l].weight);
      fn("spatial." + std::to_string(l) + ".bias", m.spatial[l].bias);
    }
    for (std::size_t l = 0; l < m.clstm.size(); ++l) {
      const std::string base = "clstm." + std::to_string(l);
      for (auto dir : {std::pair<std::string, ConvLstmParamsT<T>*>{".fwd.", &m.clstm[l].fwd},
                       std::pair<std::string, ConvLstmParamsT<T>*>{".bwd.", &m.clstm[l].bwd}}) {
        ConvLstmParamsT<T>& p = *dir.second;
        fn(base + dir.first + "w_xi", p.w_xi);
        fn(base + dir.first + "w_xf", p.w_xf);
        fn(base + dir.first + "w_xo", p.w_xo);
        fn(base + dir.first + "w_xc", p.w_xc);
        fn(base + dir.first + "w_hi", p.w_hi);
        fn(base + dir.first + "w_hf", p.w_hf);
        fn(base + dir.first + "w_ho", p.w_ho);
        fn(base + dir.first + "w_hc", p.w_hc);
        fn(base + dir.first + "b_i", p.b_i);
        fn(base + dir.first + "b_f", p.b_f);
        fn(base + dir.first + "b_o", p.b_o);
        fn(base + dir.first + "b_c", p.b_c);
      }
    }
    for (std::size_t l = 0; l < m.head.size(); ++l) {
      fn("head." + std::to_string(l) + ".weight", m.head[l].weight);
      fn("head." + std::to_string(l) + ".bias", m.head[l].bias);
    }
    if (m.config.variant == ModelVariant::kConv1d) {
      fn("temporal.weight", m.temporal.weight);
      fn("temporal.bias", m.temporal.bias);
    }
    fn("dense.weight", m.dense_w);
    fn("dense.bias", m.dense_b);
  }
};

using ModelParamsF = ModelParamsT<float>;
using ModelParamsD = ModelParamsT<double>;

template <typename T>
using GradMap = std::map<std::string, TensorT<T>>;

namespace detail {

template <typename T>
void init_uniform(TensorT<T>& t, double scale, Rng& rng) {
  for (std::size_t i = 0; i < t.size(); ++i)
    t[i] = static_cast<T>(rng.uniform(-scale, scale));
}

template <typename T>
ConvLstmParamsT<T> init_convlstm(int in_channels, int hidden, int kernel, Rng& rng) {
  const Shape wx{hidden, in_channels, kernel, kernel, kernel};
  const Shape wh{hidden, hidden, kernel, kernel, kernel};
  const Shape b{hidden};
  ConvLstmParamsT<T> p{TensorT<T>(wx), TensorT<T>(wx), TensorT<T>(wx), TensorT<T>(wx),
                       TensorT<T>(wh), TensorT<T>(wh), TensorT<T>(wh), TensorT<T>(wh),
                       TensorT<T>(b),  TensorT<T>(b),  TensorT<T>(b),  TensorT<T>(b)};
  const double sx = 1.0 / std::sqrt(static_cast<double>(in_channels) * kernel * kernel * kernel);
  const double sh = 1.0 / std::sqrt(static_cast<double>(hidden) * kernel * kernel * kernel);
  for (TensorT<T>* w : {&p.w_xi, &p.w_xf, &p.w_xo, &p.w_xc}) init_uniform(*w, sx, rng);
  for (TensorT<T>* w : {&p.w_hi, &p.w_hf, &p.w_ho, &p.w_hc}) init_uniform(*w, sh, rng);
  // Forget gate starts open; other biases zero.
  for (std::size_t i = 0; i < p.b_f.size(); ++i) p.b_f[i] = T(1);
  return p;
}

}  // namespace detail

// Deterministic initialization: kernels from centered uniform with scale
// 1/sqrt(fan_in), forget-gate bias 1, every other bias 0. Identical
// (config, seed) pairs produce bit-identical parameters.
template <typename T>
ModelParamsT<T> build_model(const ModelConfig& config, std::uint64_t seed) {
  const ShapeChain chain = validate_config(config);
  Rng rng(derive_seed(seed, 0x494e4954ULL));
  ModelParamsT<T> m;
  m.config = config;

  int cin = config.input_channels;
  for (const auto& l : config.spatial_cnn) {
    Conv3dLayerT<T> layer;
    layer.spec = ConvSpec{{l.kernel, l.kernel, l.kernel},
                          {l.stride, l.stride, l.stride},
                          {l.padding, l.padding, l.padding},
                          cin,
                          l.out_channels};
    layer.weight = TensorT<T>({l.out_channels, cin, l.kernel, l.kernel, l.kernel});
    layer.bias = TensorT<T>(Shape{l.out_channels});
    detail::init_uniform(layer.weight,
                         1.0 / std::sqrt(static_cast<double>(cin) * l.kernel * l.kernel * l.kernel),
                         rng);
    m.spatial.push_back(std::move(layer));
    cin = l.out_channels;
  }

  if (config.variant == ModelVariant::kClstm) {
    int lstm_in = cin;
    for (int l = 0; l < config.clstm_layers; ++l) {
      BidirConvLstmParamsT<T> layer{
          detail::init_convlstm<T>(lstm_in, config.clstm_hidden, config.clstm_kernel, rng),
          detail::init_convlstm<T>(lstm_in, config.clstm_hidden, config.clstm_kernel, rng)};
      m.clstm.push_back(std::move(layer));
      lstm_in = 2 * config.clstm_hidden;
    }
    cin = lstm_in;
    for (const auto& l : config.head_cnn) {
      Conv3dLayerT<T> layer;
      layer.spec = ConvSpec{{l.kernel, l.kernel, l.kernel},
                            {l.stride, l.stride, l.stride},
                            {l.padding, l.padding, l.padding},
                            cin,
                            l.out_channels};
      layer.weight = TensorT<T>({l.out_channels, cin, l.kernel, l.kernel, l.kernel});
      layer.bias = TensorT<T>(Shape{l.out_channels});
      detail::init_uniform(
          layer.weight, 1.0 / std::sqrt(static_cast<double>(cin) * l.kernel * l.kernel * l.kernel),
          rng);
      m.head.push_back(std::move(layer));
      cin = l.out_channels;
    }
  } else {
    m.temporal.spec = Conv1dSpec{config.temporal_kernel, 1, (config.temporal_kernel - 1) / 2, cin,
                                 config.temporal_channels};
    m.temporal.weight = TensorT<T>({config.temporal_channels, cin, config.temporal_kernel});
    m.temporal.bias = TensorT<T>(Shape{config.temporal_channels});
    detail::init_uniform(m.temporal.weight,
                         1.0 / std::sqrt(static_cast<double>(cin) * config.temporal_kernel), rng);
  }

  m.dense_w = TensorT<T>({config.num_classes, chain.dense_inputs});
  m.dense_b = TensorT<T>(Shape{config.num_classes});
  detail::init_uniform(m.dense_w, 1.0 / std::sqrt(static_cast<double>(chain.dense_inputs)), rng);
  return m;
}

// ---- forward / backward ----

// Per-layer, per-timestep record of one tied-weight CNN stage.
template <typename T>
struct CnnStageCacheT {
  std::vector<std::vector<TensorT<T>>> act;   // tanh outputs
  std::vector<std::vector<TensorT<T>>> mask;  // dropout masks
  std::vector<std::vector<TensorT<T>>> out;   // act . mask, the next stage's input
};

template <typename T>
struct ForwardCacheT {
  bool training = false;
  TensorT<T> input;  // [T, C, D, H, W]
  CnnStageCacheT<T> spatial;
  // clstm variant
  std::vector<TensorT<T>> clstm_inputs;    // per stacked layer
  std::vector<BidirCacheT<T>> clstm_caches;
  TensorT<T> clstm_output;                 // last layer output [T, 2*hidden, d, h, w]
  CnnStageCacheT<T> head;
  // conv1d variant
  TensorT<T> pooled_rows;  // [T, F]
  TensorT<T> conv1d_in;    // [F, T]
  TensorT<T> conv1d_act;   // tanh output [C2, T]
  // shared tail
  TensorT<T> features;  // [T, F'] rows entering the temporal mean pool
  TensorT<T> pooled;    // [F']
  TensorT<T> logits;
};

template <typename T>
struct ForwardResultT {
  TensorT<T> logits;
  ForwardCacheT<T> cache;
};

namespace detail {

// Applies one tied-weight CNN stage (conv, tanh, dropout per layer) to each
// timestep. `rng` is only consumed in training mode.
template <typename T>
std::vector<TensorT<T>> run_cnn_stage(const std::vector<Conv3dLayerT<T>>& layers,
                                      const std::vector<ConvLayerSpec>& specs,
                                      std::vector<TensorT<T>> frames, CnnStageCacheT<T>& cache,
                                      bool training, Rng* rng) {
  const std::size_t steps = frames.size();
  cache.act.assign(layers.size(), {});
  cache.mask.assign(layers.size(), {});
  cache.out.assign(layers.size(), {});
  for (std::size_t l = 0; l < layers.size(); ++l) {
    cache.act[l].reserve(steps);
    cache.mask[l].reserve(steps);
    cache.out[l].reserve(steps);
    for (std::size_t t = 0; t < steps; ++t) {
      TensorT<T> z = conv3d_forward(frames[t], layers[l].weight, layers[l].bias, layers[l].spec);
      TensorT<T> a = st4d::tanh(z);
      Rng dummy(0);
      auto drop = dropout_forward(a, specs[l].dropout, rng ? *rng : dummy, training);
      cache.act[l].push_back(std::move(a));
      cache.mask[l].push_back(std::move(drop.mask));
      cache.out[l].push_back(drop.output);
      frames[t] = std::move(drop.output);
    }
  }
  return frames;
}

// Backward through a tied-weight CNN stage. grad_frames holds d/d(stage output)
// per timestep; returns d/d(stage input) and accumulates parameter grads.
template <typename T>
std::vector<TensorT<T>> cnn_stage_backward(const std::vector<Conv3dLayerT<T>>& layers,
                                           const CnnStageCacheT<T>& cache,
                                           const std::vector<TensorT<T>>& stage_inputs,
                                           std::vector<TensorT<T>> grad_frames,
                                           const std::string& path_base, GradMap<T>& grads) {
  const std::size_t steps = grad_frames.size();
  for (std::size_t l = layers.size(); l-- > 0;) {
    TensorT<T>& gw = grads.at(path_base + "." + std::to_string(l) + ".weight");
    TensorT<T>& gb = grads.at(path_base + "." + std::to_string(l) + ".bias");
    for (std::size_t t = 0; t < steps; ++t) {
      const TensorT<T>& conv_in = l == 0 ? stage_inputs[t] : cache.out[l - 1][t];
      TensorT<T> ga = dropout_backward(cache.mask[l][t], grad_frames[t]);
      TensorT<T> gz = tanh_backward(cache.act[l][t], ga);
      auto g = conv3d_backward(conv_in, layers[l].weight, layers[l].spec, gz);
      add_inplace(gw, g.weights);
      add_inplace(gb, g.bias);
      grad_frames[t] = std::move(g.input);
    }
  }
  return grad_frames;
}

template <typename T>
TensorT<T> flatten(const TensorT<T>& t) {
  return TensorT<T>(Shape{static_cast<int>(t.size())},
                    std::vector<T>(t.data(), t.data() + t.size()));
}

}  // namespace detail

template <typename T>
ForwardResultT<T> forward(const ModelParamsT<T>& params, const TensorT<T>& sequence,
                          bool training, Rng* rng = nullptr);

template <typename T>
GradMap<T> backward(const ModelParamsT<T>& params, const ForwardCacheT<T>& cache,
                    const TensorT<T>& grad_logits);

// ---- implementation ----

template <typename T>
ForwardResultT<T> forward(const ModelParamsT<T>& params, const TensorT<T>& sequence,
                          bool training, Rng* rng) {
  const ModelConfig& cfg = params.config;
  if (sequence.rank() != 5) {
    throw std::invalid_argument("model input must be [T,C,D,H,W], got " +
                                shape_str(sequence.dims()));
  }
  if (sequence.dim(1) != cfg.input_channels || sequence.dim(2) != cfg.input_spatial[0] ||
      sequence.dim(3) != cfg.input_spatial[1] || sequence.dim(4) != cfg.input_spatial[2]) {
    throw std::invalid_argument(
        "model input " + shape_str(sequence.dims()) + " does not match configured channels/grid [" +
        std::to_string(cfg.input_channels) + ", " + std::to_string(cfg.input_spatial[0]) + ", " +
        std::to_string(cfg.input_spatial[1]) + ", " + std::to_string(cfg.input_spatial[2]) + "]");
  }
  if (training && rng == nullptr) {
    throw std::invalid_argument("training-mode forward needs an rng for dropout");
  }
  const int steps = sequence.dim(0);

  ForwardResultT<T> r;
  ForwardCacheT<T>& c = r.cache;
  c.training = training;
  c.input = sequence;

  std::vector<TensorT<T>> frames;
  frames.reserve(static_cast<std::size_t>(steps));
  for (int t = 0; t < steps; ++t) frames.push_back(slice_axis0(sequence, t));
  frames = detail::run_cnn_stage(params.spatial, cfg.spatial_cnn, std::move(frames), c.spatial,
                                 training, rng);

  if (cfg.variant == ModelVariant::kClstm) {
    TensorT<T> seq = stack_axis0(frames);
    for (std::size_t l = 0; l < params.clstm.size(); ++l) {
      c.clstm_inputs.push_back(seq);
      auto bid = bidirectional_forward(seq, params.clstm[l]);
      c.clstm_caches.push_back(std::move(bid.cache));
      seq = std::move(bid.output);
    }
    c.clstm_output = seq;

    std::vector<TensorT<T>> head_frames;
    head_frames.reserve(static_cast<std::size_t>(steps));
    for (int t = 0; t < steps; ++t) head_frames.push_back(slice_axis0(seq, t));
    head_frames = detail::run_cnn_stage(params.head, cfg.head_cnn, std::move(head_frames), c.head,
                                        training, rng);

    std::vector<TensorT<T>> rows;
    rows.reserve(head_frames.size());
    for (auto& f : head_frames) rows.push_back(detail::flatten(f));
    c.features = stack_axis0(rows);
  } else {
    std::vector<TensorT<T>> rows;
    rows.reserve(frames.size());
    for (auto& f : frames) rows.push_back(global_spatial_avg_pool(f));
    c.pooled_rows = stack_axis0(rows);  // [T, F]

    const int F = c.pooled_rows.dim(1);
    c.conv1d_in = TensorT<T>({F, steps});
    for (int t = 0; t < steps; ++t)
      for (int f = 0; f < F; ++f) c.conv1d_in.at({f, t}) = c.pooled_rows.at({t, f});

    TensorT<T> z = conv1d_forward(c.conv1d_in, params.temporal.weight, params.temporal.bias,
                                  params.temporal.spec);
    c.conv1d_act = st4d::tanh(z);  // [C2, T]

    const int C2 = c.conv1d_act.dim(0);
    c.features = TensorT<T>({steps, C2});
    for (int t = 0; t < steps; ++t)
      for (int f = 0; f < C2; ++f) c.features.at({t, f}) = c.conv1d_act.at({f, t});
  }

  c.pooled = temporal_mean_pool(c.features);
  c.logits = dense_forward(c.pooled, params.dense_w, params.dense_b);
  r.logits = c.logits;
  return r;
}

template <typename T>
GradMap<T> backward(const ModelParamsT<T>& params, const ForwardCacheT<T>& cache,
                    const TensorT<T>& grad_logits) {
  if (!cache.training) {
    throw std::logic_error("backward needs a training-mode forward cache (dropout masks)");
  }
  const ModelConfig& cfg = params.config;
  const int steps = cache.input.dim(0);

  GradMap<T> grads;
  params.for_each([&](const std::string& path, const TensorT<T>& t) {
    grads.emplace(path, TensorT<T>(t.dims()));
  });

  auto gd = dense_backward(cache.pooled, params.dense_w, grad_logits);
  add_inplace(grads.at("dense.weight"), gd.weights);
  add_inplace(grads.at("dense.bias"), gd.bias);
  TensorT<T> g_features = temporal_mean_pool_backward(gd.input, steps);  // [T, F']

  std::vector<TensorT<T>> g_frames;  // gradient w.r.t. spatial-stage output per timestep
  if (cfg.variant == ModelVariant::kClstm) {
    const auto head_out_dims = cache.head.out.empty() ? cache.clstm_output.dims()
                                                      : cache.head.out.back().front().dims();
    std::vector<TensorT<T>> g_head;
    g_head.reserve(static_cast<std::size_t>(steps));
    for (int t = 0; t < steps; ++t) {
      TensorT<T> row = slice_axis0(g_features, t);
      Shape dims = cfg.head_cnn.empty() ? Shape(head_out_dims.begin() + 1, head_out_dims.end())
                                        : cache.head.out.back()[static_cast<std::size_t>(t)].dims();
      g_head.push_back(TensorT<T>(dims, std::vector<T>(row.data(), row.data() + row.size())));
    }

    std::vector<TensorT<T>> head_inputs;
    head_inputs.reserve(static_cast<std::size_t>(steps));
    for (int t = 0; t < steps; ++t) head_inputs.push_back(slice_axis0(cache.clstm_output, t));
    g_head = detail::cnn_stage_backward(params.head, cache.head, head_inputs, std::move(g_head),
                                        "head", grads);

    TensorT<T> g_seq = stack_axis0(g_head);
    for (std::size_t l = params.clstm.size(); l-- > 0;) {
      auto gb = bidirectional_backward(cache.clstm_inputs[l], params.clstm[l],
                                       cache.clstm_caches[l], g_seq);
      const std::string base = "clstm." + std::to_string(l);
      auto store = [&](const std::string& dir, ConvLstmParamsT<T>& src) {
        add_inplace(grads.at(base + dir + "w_xi"), src.w_xi);
        add_inplace(grads.at(base + dir + "w_xf"), src.w_xf);
        add_inplace(grads.at(base + dir + "w_xo"), src.w_xo);
        add_inplace(grads.at(base + dir + "w_xc"), src.w_xc);
        add_inplace(grads.at(base + dir + "w_hi"), src.w_hi);
        add_inplace(grads.at(base + dir + "w_hf"), src.w_hf);
        add_inplace(grads.at(base + dir + "w_ho"), src.w_ho);
        add_inplace(grads.at(base + dir + "w_hc"), src.w_hc);
        add_inplace(grads.at(base + dir + "b_i"), src.b_i);
        add_inplace(grads.at(base + dir + "b_f"), src.b_f);
        add_inplace(grads.at(base + dir + "b_o"), src.b_o);
        add_inplace(grads.at(base + dir + "b_c"), src.b_c);
      };
      store(".fwd.", gb.grads.fwd);
      store(".bwd.", gb.grads.bwd);
      g_seq = std::move(gb.grad_sequence);
    }
    g_frames.reserve(static_cast<std::size_t>(steps));
    for (int t = 0; t < steps; ++t) g_frames.push_back(slice_axis0(g_seq, t));
  } else {
    const int C2 = cache.conv1d_act.dim(0);
    TensorT<T> g_act({C2, steps});
    for (int t = 0; t < steps; ++t)
      for (int f = 0; f < C2; ++f) g_act.at({f, t}) = g_features.at({t, f});
    TensorT<T> g_z = tanh_backward(cache.conv1d_act, g_act);
    auto gc = conv1d_backward(cache.conv1d_in, params.temporal.weight, params.temporal.spec, g_z);
    add_inplace(grads.at("temporal.weight"), gc.weights);
    add_inplace(grads.at("temporal.bias"), gc.bias);

    const int F = cache.pooled_rows.dim(1);
    g_frames.reserve(static_cast<std::size_t>(steps));
    for (int t = 0; t < steps; ++t) {
      TensorT<T> g_row({F});
      for (int f = 0; f < F; ++f) g_row[static_cast<std::size_t>(f)] = gc.input.at({f, t});
      const Shape frame_dims = cache.spatial.out.back()[static_cast<std::size_t>(t)].dims();
      g_frames.push_back(global_spatial_avg_pool_backward(g_row, frame_dims));
    }
  }

  std::vector<TensorT<T>> stage_inputs;
  stage_inputs.reserve(static_cast<std::size_t>(steps));
  for (int t = 0; t < steps; ++t) stage_inputs.push_back(slice_axis0(cache.input, t));
  detail::cnn_stage_backward(params.spatial, cache.spatial, stage_inputs, std::move(g_frames),
                             "spatial", grads);
  return grads;
}

}  // namespace st4d
