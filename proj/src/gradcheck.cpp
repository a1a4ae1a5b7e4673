#include "st4d/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "st4d/layers.hpp"
#include "st4d/ops.hpp"
#include "st4d/optim.hpp"
#include "st4d/rng.hpp"

namespace st4d {

namespace {

double guarded_rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-4});
}

Tensord random_tensor(Shape dims, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensord t(std::move(dims));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

double dot(const Tensord& a, const Tensord& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// One finite-difference problem: named parameter tensors, a scalar loss
// closure reading them, and the analytic gradient per name.
struct Problem {
  std::vector<std::pair<std::string, Tensord*>> params;
  std::function<double()> loss;
  GradMap<double> analytic;
};

double max_fd_error(Problem& p, const GradCheckOptions& opt, Rng& pick) {
  double worst = 0.0;
  for (auto& [name, tensor] : p.params) {
    const Tensord& grad = p.analytic.at(name);
    const std::size_t n = tensor->size();
    std::vector<std::size_t> idx;
    if (opt.samples_per_tensor <= 0 || static_cast<std::size_t>(opt.samples_per_tensor) >= n) {
      for (std::size_t i = 0; i < n; ++i) idx.push_back(i);
    } else {
      for (int s = 0; s < opt.samples_per_tensor; ++s) {
        idx.push_back(
            static_cast<std::size_t>(pick.uniform_int(0, static_cast<std::int64_t>(n) - 1)));
      }
    }
    for (std::size_t i : idx) {
      double& coord = (*tensor)[i];
      const double saved = coord;
      coord = saved + opt.step;
      const double fp = p.loss();
      coord = saved - opt.step;
      const double fm = p.loss();
      coord = saved;
      const double fd = (fp - fm) / (2.0 * opt.step);
      worst = std::max(worst, guarded_rel_err(grad[i], fd));
    }
  }
  return worst;
}

ConvLstmParamsT<double> random_convlstm(int cin, int hidden, int k, Rng& rng) {
  const Shape wx{hidden, cin, k, k, k};
  const Shape wh{hidden, hidden, k, k, k};
  const Shape b{hidden};
  return {random_tensor(wx, rng, -0.4, 0.4), random_tensor(wx, rng, -0.4, 0.4),
          random_tensor(wx, rng, -0.4, 0.4), random_tensor(wx, rng, -0.4, 0.4),
          random_tensor(wh, rng, -0.4, 0.4), random_tensor(wh, rng, -0.4, 0.4),
          random_tensor(wh, rng, -0.4, 0.4), random_tensor(wh, rng, -0.4, 0.4),
          random_tensor(b, rng, -0.4, 0.4),  random_tensor(b, rng, -0.4, 0.4),
          random_tensor(b, rng, -0.4, 0.4),  random_tensor(b, rng, -0.4, 0.4)};
}

void add_convlstm_params(Problem& p, const std::string& prefix, ConvLstmParamsT<double>& lstm,
                         const ConvLstmParamsT<double>& grads) {
  const std::pair<std::string, Tensord*> items[] = {
      {"w_xi", &lstm.w_xi}, {"w_xf", &lstm.w_xf}, {"w_xo", &lstm.w_xo}, {"w_xc", &lstm.w_xc},
      {"w_hi", &lstm.w_hi}, {"w_hf", &lstm.w_hf}, {"w_ho", &lstm.w_ho}, {"w_hc", &lstm.w_hc},
      {"b_i", &lstm.b_i},   {"b_f", &lstm.b_f},   {"b_o", &lstm.b_o},   {"b_c", &lstm.b_c}};
  const Tensord* grad_items[] = {&grads.w_xi, &grads.w_xf, &grads.w_xo, &grads.w_xc,
                                 &grads.w_hi, &grads.w_hf, &grads.w_ho, &grads.w_hc,
                                 &grads.b_i,  &grads.b_f,  &grads.b_o,  &grads.b_c};
  for (std::size_t i = 0; i < 12; ++i) {
    p.params.emplace_back(prefix + items[i].first, items[i].second);
    p.analytic.emplace(prefix + items[i].first, *grad_items[i]);
  }
}

double check_conv3d(const GradCheckOptions& opt) {
  Rng rng(derive_seed(opt.seed, 1));
  struct Geometry {
    Shape in;
    int cout, k, s, p;
  };
  const Geometry cases[] = {{{2, 3, 3, 3}, 2, 3, 1, 1},
                            {{1, 4, 3, 2}, 2, 2, 2, 1},
                            {{2, 2, 2, 2}, 1, 1, 1, 0}};
  double worst = 0.0;
  for (const auto& c : cases) {
    ConvSpec spec{{c.k, c.k, c.k}, {c.s, c.s, c.s}, {c.p, c.p, c.p}, c.in[0], c.cout};
    Tensord x = random_tensor(c.in, rng);
    Tensord w = random_tensor({c.cout, c.in[0], c.k, c.k, c.k}, rng);
    Tensord b = random_tensor({c.cout}, rng);
    const auto osp = conv3d_output_spatial({c.in[1], c.in[2], c.in[3]}, spec);
    Tensord r = random_tensor({c.cout, osp[0], osp[1], osp[2]}, rng);
    auto g = conv3d_backward(x, w, spec, r);
    Problem p;
    p.params = {{"input", &x}, {"weights", &w}, {"bias", &b}};
    p.analytic.emplace("input", std::move(g.input));
    p.analytic.emplace("weights", std::move(g.weights));
    p.analytic.emplace("bias", std::move(g.bias));
    p.loss = [&]() { return dot(conv3d_forward(x, w, b, spec), r); };
    if (opt.corrupt) opt.corrupt("conv3d", p.analytic);
    worst = std::max(worst, max_fd_error(p, opt, rng));
  }
  return worst;
}

double check_conv1d(const GradCheckOptions& opt) {
  Rng rng(derive_seed(opt.seed, 2));
  Conv1dSpec spec{3, 2, 1, 3, 2};
  Tensord x = random_tensor({3, 9}, rng);
  Tensord w = random_tensor({2, 3, 3}, rng);
  Tensord b = random_tensor({2}, rng);
  Tensord r = random_tensor({2, conv_out_extent(9, 3, 2, 1)}, rng);
  auto g = conv1d_backward(x, w, spec, r);
  Problem p;
  p.params = {{"input", &x}, {"weights", &w}, {"bias", &b}};
  p.analytic.emplace("input", std::move(g.input));
  p.analytic.emplace("weights", std::move(g.weights));
  p.analytic.emplace("bias", std::move(g.bias));
  p.loss = [&]() { return dot(conv1d_forward(x, w, b, spec), r); };
  if (opt.corrupt) opt.corrupt("conv1d", p.analytic);
  return max_fd_error(p, opt, rng);
}

double check_elementwise(const GradCheckOptions& opt) {
  Rng rng(derive_seed(opt.seed, 3));
  Tensord x = random_tensor({3, 4}, rng, -2.0, 2.0);
  Tensord y = random_tensor({3, 4}, rng, -2.0, 2.0);
  Tensord r1 = random_tensor({3, 4}, rng);
  Tensord r2 = random_tensor({3, 4}, rng);

  // loss = <r1, sig(x).tanh(y)> + <r2, x + x.y>
  auto loss = [&]() {
    return dot(hadamard(sigmoid(x), st4d::tanh(y)), r1) + dot(add(x, hadamard(x, y)), r2);
  };
  const Tensord s = sigmoid(x);
  const Tensord t = st4d::tanh(y);
  Tensord dx = sigmoid_backward(s, hadamard(r1, t));
  add_inplace(dx, r2);
  add_inplace(dx, hadamard(r2, y));
  Tensord dy = tanh_backward(t, hadamard(r1, s));
  add_inplace(dy, hadamard(r2, x));

  Problem p;
  p.params = {{"x", &x}, {"y", &y}};
  p.analytic.emplace("x", std::move(dx));
  p.analytic.emplace("y", std::move(dy));
  p.loss = loss;
  if (opt.corrupt) opt.corrupt("elementwise", p.analytic);
  return max_fd_error(p, opt, rng);
}

double check_pool(const GradCheckOptions& opt) {
  Rng rng(derive_seed(opt.seed, 4));
  Tensord x = random_tensor({3, 2, 3, 2}, rng);
  Tensord r = random_tensor({3}, rng);
  Problem p;
  p.params = {{"input", &x}};
  p.analytic.emplace("input", global_spatial_avg_pool_backward(r, x.dims()));
  p.loss = [&]() { return dot(global_spatial_avg_pool(x), r); };
  if (opt.corrupt) opt.corrupt("pool", p.analytic);
  return max_fd_error(p, opt, rng);
}

double check_dropout(const GradCheckOptions& opt) {
  Rng rng(derive_seed(opt.seed, 5));
  Tensord x = random_tensor({4, 5}, rng);
  Rng mask_rng(derive_seed(opt.seed, 55));
  const Tensord mask = dropout_forward(x, 0.3, mask_rng, true).mask;
  Tensord r = random_tensor({4, 5}, rng);
  Problem p;
  p.params = {{"input", &x}};
  p.analytic.emplace("input", dropout_backward(mask, r));
  p.loss = [&]() { return dot(hadamard(x, mask), r); };
  if (opt.corrupt) opt.corrupt("dropout", p.analytic);
  return max_fd_error(p, opt, rng);
}

double check_dense(const GradCheckOptions& opt) {
  Rng rng(derive_seed(opt.seed, 6));
  Tensord x = random_tensor({6}, rng);
  Tensord w = random_tensor({3, 6}, rng);
  Tensord b = random_tensor({3}, rng);
  Tensord r = random_tensor({3}, rng);
  auto g = dense_backward(x, w, r);
  Problem p;
  p.params = {{"input", &x}, {"weights", &w}, {"bias", &b}};
  p.analytic.emplace("input", std::move(g.input));
  p.analytic.emplace("weights", std::move(g.weights));
  p.analytic.emplace("bias", std::move(g.bias));
  p.loss = [&]() { return dot(dense_forward(x, w, b), r); };
  if (opt.corrupt) opt.corrupt("dense", p.analytic);
  return max_fd_error(p, opt, rng);
}

double check_temporal_pool(const GradCheckOptions& opt) {
  Rng rng(derive_seed(opt.seed, 7));
  Tensord x = random_tensor({4, 5}, rng);
  Tensord r = random_tensor({5}, rng);
  Problem p;
  p.params = {{"input", &x}};
  p.analytic.emplace("input", temporal_mean_pool_backward(r, 4));
  p.loss = [&]() { return dot(temporal_mean_pool(x), r); };
  if (opt.corrupt) opt.corrupt("temporal_pool", p.analytic);
  return max_fd_error(p, opt, rng);
}

double check_convlstm(const GradCheckOptions& opt) {
  Rng rng(derive_seed(opt.seed, 8));
  double worst = 0.0;
  for (int steps : {1, 3}) {
    const int hidden = 2, cin = 2;
    ConvLstmParamsT<double> lstm = random_convlstm(cin, hidden, 3, rng);
    Tensord seq = random_tensor({steps, cin, 2, 2, 2}, rng);
    Tensord r = random_tensor({steps, hidden, 2, 2, 2}, rng);

    auto loss = [&]() {
      const auto cache = convlstm_forward(seq, lstm);
      double s = 0.0;
      for (int t = 0; t < steps; ++t) {
        const auto& h = cache.states[static_cast<std::size_t>(t)].h;
        for (std::size_t i = 0; i < h.size(); ++i)
          s += h[i] * r[static_cast<std::size_t>(t) * h.size() + i];
      }
      return s;
    };
    const auto cache = convlstm_forward(seq, lstm);
    auto bptt = convlstm_backward_through_time(seq, lstm, cache, r);

    Problem p;
    p.params.emplace_back("sequence", &seq);
    p.analytic.emplace("sequence", std::move(bptt.grad_sequence));
    add_convlstm_params(p, "", lstm, bptt.grads);
    p.loss = loss;
    if (opt.corrupt) opt.corrupt("convlstm", p.analytic);
    worst = std::max(worst, max_fd_error(p, opt, rng));
  }
  return worst;
}

double check_bidirectional(const GradCheckOptions& opt) {
  Rng rng(derive_seed(opt.seed, 9));
  const int hidden = 2, cin = 1, steps = 3;
  BidirConvLstmParamsT<double> lstm{random_convlstm(cin, hidden, 3, rng),
                                    random_convlstm(cin, hidden, 3, rng)};
  Tensord seq = random_tensor({steps, cin, 2, 2, 2}, rng);
  Tensord r = random_tensor({steps, 2 * hidden, 2, 2, 2}, rng);

  auto loss = [&]() { return dot(bidirectional_forward(seq, lstm).output, r); };
  auto fwd = bidirectional_forward(seq, lstm);
  auto g = bidirectional_backward(seq, lstm, fwd.cache, r);

  Problem p;
  p.params.emplace_back("sequence", &seq);
  p.analytic.emplace("sequence", std::move(g.grad_sequence));
  add_convlstm_params(p, "fwd.", lstm.fwd, g.grads.fwd);
  add_convlstm_params(p, "bwd.", lstm.bwd, g.grads.bwd);
  p.loss = loss;
  if (opt.corrupt) opt.corrupt("bidirectional", p.analytic);
  return max_fd_error(p, opt, rng);
}

ModelConfig tiny_config(ModelVariant variant) {
  ModelConfig c;
  c.variant = variant;
  c.input_spatial = {6, 6, 6};
  c.input_channels = 1;
  c.crop_length = 4;
  c.spatial_cnn = {{4, 3, 2, 1, 0.0}};  // dropout off keeps the loss smooth for FD
  c.clstm_hidden = 2;
  c.clstm_layers = 1;
  c.clstm_kernel = 3;
  c.head_cnn = {{4, 3, 2, 1, 0.0}};
  c.temporal_channels = 3;
  c.temporal_kernel = 3;
  c.num_classes = 2;
  return c;
}

double check_model(ModelVariant variant, const std::string& name, const GradCheckOptions& opt) {
  Rng rng(derive_seed(opt.seed, variant == ModelVariant::kClstm ? 10 : 11));
  ModelParamsT<double> params = build_model<double>(tiny_config(variant), opt.seed);
  Tensord seq = random_tensor({4, 1, 6, 6, 6}, rng);
  const int label = 1;

  Rng fwd_rng(0);
  auto loss = [&]() {
    Rng r(0);
    const auto out = forward(params, seq, /*training=*/true, &r);
    return softmax_cross_entropy(out.logits, label).loss;
  };
  const auto out = forward(params, seq, /*training=*/true, &fwd_rng);
  const auto ce = softmax_cross_entropy(out.logits, label);
  GradMap<double> analytic = backward(params, out.cache, ce.grad_logits);

  Problem p;
  params.for_each([&](const std::string& path, Tensord& t) { p.params.emplace_back(path, &t); });
  p.analytic = std::move(analytic);
  p.loss = loss;
  if (opt.corrupt) opt.corrupt(name, p.analytic);
  return max_fd_error(p, opt, rng);
}

}  // namespace

std::vector<std::string> gradcheck_component_names() {
  return {"conv3d",        "conv1d", "elementwise",   "pool",        "dropout",     "dense",
          "temporal_pool", "convlstm", "bidirectional", "model_clstm", "model_conv1d"};
}

std::vector<GradCheckResult> run_gradcheck(const std::vector<std::string>& components,
                                           const GradCheckOptions& options) {
  const auto known = gradcheck_component_names();
  std::vector<std::string> wanted = components.empty() ? known : components;
  for (const auto& name : wanted) {
    if (std::find(known.begin(), known.end(), name) == known.end()) {
      std::string valid;
      for (const auto& k : known) valid += valid.empty() ? k : ", " + k;
      throw ConfigError("unknown gradcheck component '" + name + "' (valid: " + valid + ")");
    }
  }

  std::vector<GradCheckResult> results;
  for (const auto& name : wanted) {
    double err = 0.0;
    if (name == "conv3d") err = check_conv3d(options);
    else if (name == "conv1d") err = check_conv1d(options);
    else if (name == "elementwise") err = check_elementwise(options);
    else if (name == "pool") err = check_pool(options);
    else if (name == "dropout") err = check_dropout(options);
    else if (name == "dense") err = check_dense(options);
    else if (name == "temporal_pool") err = check_temporal_pool(options);
    else if (name == "convlstm") err = check_convlstm(options);
    else if (name == "bidirectional") err = check_bidirectional(options);
    else if (name == "model_clstm") err = check_model(ModelVariant::kClstm, name, options);
    else if (name == "model_conv1d") err = check_model(ModelVariant::kConv1d, name, options);
    results.push_back({name, err, options.tolerance, err <= options.tolerance});
  }
  return results;
}

}  // namespace st4d
