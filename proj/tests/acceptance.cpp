// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Every tolerance is pinned here. Optional argv names restrict the
// run to matching criteria (useful while iterating).

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "st4d/data.hpp"
#include "st4d/gradcheck.hpp"
#include "st4d/model.hpp"
#include "st4d/optim.hpp"
#include "st4d/training.hpp"

using namespace st4d;

namespace {

struct Criterion {
  std::string name;
  std::function<bool(std::string&)> check;  // fills a detail string
};

double now_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

// ---- 1. oracle equivalence ----

bool oracle_equivalence(std::string& detail) {
  Rng rng(0xACCE01);
  double worst = 0.0;
  int cases = 0;

  for (int trial = 0; trial < 100; ++trial) {
    const int cin = 1 + static_cast<int>(rng.uniform_int(0, 2));
    const int cout = 1 + static_cast<int>(rng.uniform_int(0, 2));
    const int k = 1 + static_cast<int>(rng.uniform_int(0, 2));
    const int s = 1 + static_cast<int>(rng.uniform_int(0, 1));
    const int p = static_cast<int>(rng.uniform_int(0, 1));
    Shape in{cin, k + static_cast<int>(rng.uniform_int(0, 3)),
             k + static_cast<int>(rng.uniform_int(0, 3)),
             k + static_cast<int>(rng.uniform_int(0, 3))};
    ConvSpec spec{{k, k, k}, {s, s, s}, {p, p, p}, cin, cout};
    Tensord x = oracle::random_tensor(in, rng);
    Tensord w = oracle::random_tensor({cout, cin, k, k, k}, rng);
    Tensord b = oracle::random_tensor({cout}, rng);
    const Tensord got = conv3d_forward(x, w, b, spec);
    const Tensord want = oracle::naive_conv3d(x, w, b, spec);
    for (std::size_t i = 0; i < got.size(); ++i) {
      worst = std::max(worst, oracle::rel_err(got[i], want[i]));
    }
    ++cases;
  }

  for (int trial = 0; trial < 100; ++trial) {
    const int cin = 1 + static_cast<int>(rng.uniform_int(0, 1));
    const int hidden = 1 + static_cast<int>(rng.uniform_int(0, 1));
    const int k = rng.uniform() < 0.5 ? 1 : 3;
    const int d = 1 + static_cast<int>(rng.uniform_int(0, 1));
    const int h = 1 + static_cast<int>(rng.uniform_int(0, 1));
    const int w = 1 + static_cast<int>(rng.uniform_int(0, 1));
    const Shape wx{hidden, cin, k, k, k};
    const Shape wh{hidden, hidden, k, k, k};
    const Shape bs{hidden};
    ConvLstmParamsT<double> params{
        oracle::random_tensor(wx, rng), oracle::random_tensor(wx, rng),
        oracle::random_tensor(wx, rng), oracle::random_tensor(wx, rng),
        oracle::random_tensor(wh, rng), oracle::random_tensor(wh, rng),
        oracle::random_tensor(wh, rng), oracle::random_tensor(wh, rng),
        oracle::random_tensor(bs, rng), oracle::random_tensor(bs, rng),
        oracle::random_tensor(bs, rng), oracle::random_tensor(bs, rng)};
    Tensord x = oracle::random_tensor({cin, d, h, w}, rng);
    ConvLstmStateT<double> prev{oracle::random_tensor({hidden, d, h, w}, rng),
                                oracle::random_tensor({hidden, d, h, w}, rng)};
    const auto got = convlstm_step(x, prev, params);
    const auto want = oracle::scalar_convlstm_step(
        x, prev.h, prev.c, params.w_xi, params.w_xf, params.w_xo, params.w_xc, params.w_hi,
        params.w_hf, params.w_ho, params.w_hc, params.b_i, params.b_f, params.b_o, params.b_c);
    for (std::size_t i = 0; i < got.state.h.size(); ++i) {
      worst = std::max({worst, oracle::rel_err(got.state.h[i], want.h[i]),
                        oracle::rel_err(got.state.c[i], want.c[i]),
                        oracle::rel_err(got.gates.i[i], want.i[i]),
                        oracle::rel_err(got.gates.f[i], want.f[i]),
                        oracle::rel_err(got.gates.o[i], want.o[i]),
                        oracle::rel_err(got.gates.g[i], want.g[i])});
    }
    ++cases;
  }

  char buf[128];
  std::snprintf(buf, sizeof(buf), "%d instances, max rel err %.3e (limit 1e-12)", cases, worst);
  detail = buf;
  return worst <= 1e-12;
}

// ---- 2. gradient suite ----

bool gradient_suite(std::string& detail) {
  GradCheckOptions options;
  options.seed = 0xACCE02;
  options.samples_per_tensor = 20;
  options.tolerance = 1e-5;
  const auto results = run_gradcheck({}, options);
  double worst = 0.0;
  bool pass = true;
  for (const auto& r : results) {
    worst = std::max(worst, r.max_rel_err);
    pass = pass && r.pass;
  }
  char buf[128];
  std::snprintf(buf, sizeof(buf), "%zu components, max rel err %.3e (limit 1e-5)", results.size(),
                worst);
  detail = buf;
  return pass;
}

// ---- 3. gate ranges and spatial preservation ----

bool gate_invariants(std::string& detail) {
  Rng rng(0xACCE03);
  for (int trial = 0; trial < 1000; ++trial) {
    const int cin = 1 + static_cast<int>(rng.uniform_int(0, 2));
    const int hidden = 1 + static_cast<int>(rng.uniform_int(0, 2));
    const int d = 1 + static_cast<int>(rng.uniform_int(0, 2));
    const int h = 1 + static_cast<int>(rng.uniform_int(0, 2));
    const int w = 1 + static_cast<int>(rng.uniform_int(0, 2));
    // Bounded magnitudes: pre-activations stay far from the level where the
    // saturating nonlinearities round to exactly +-1 in floating point.
    const Shape wx{hidden, cin, 3, 3, 3};
    const Shape wh{hidden, hidden, 3, 3, 3};
    const Shape bs{hidden};
    ConvLstmParamsT<double> params{
        oracle::random_tensor(wx, rng, -0.25, 0.25), oracle::random_tensor(wx, rng, -0.25, 0.25),
        oracle::random_tensor(wx, rng, -0.25, 0.25), oracle::random_tensor(wx, rng, -0.25, 0.25),
        oracle::random_tensor(wh, rng, -0.25, 0.25), oracle::random_tensor(wh, rng, -0.25, 0.25),
        oracle::random_tensor(wh, rng, -0.25, 0.25), oracle::random_tensor(wh, rng, -0.25, 0.25),
        oracle::random_tensor(bs, rng, -1.5, 1.5),   oracle::random_tensor(bs, rng, -1.5, 1.5),
        oracle::random_tensor(bs, rng, -1.5, 1.5),   oracle::random_tensor(bs, rng, -1.5, 1.5)};
    Tensord x = oracle::random_tensor({cin, d, h, w}, rng, -1.0, 1.0);
    ConvLstmStateT<double> prev{oracle::random_tensor({hidden, d, h, w}, rng),
                                oracle::random_tensor({hidden, d, h, w}, rng)};
    const auto r = convlstm_step(x, prev, params);
    if (r.state.h.dims() != Shape{hidden, d, h, w}) {
      detail = "spatial dims changed at trial " + std::to_string(trial);
      return false;
    }
    for (std::size_t i = 0; i < r.gates.i.size(); ++i) {
      const bool ok = r.gates.i[i] > 0.0 && r.gates.i[i] < 1.0 && r.gates.f[i] > 0.0 &&
                      r.gates.f[i] < 1.0 && r.gates.o[i] > 0.0 && r.gates.o[i] < 1.0 &&
                      r.gates.g[i] > -1.0 && r.gates.g[i] < 1.0 && r.state.h[i] > -1.0 &&
                      r.state.h[i] < 1.0;
      if (!ok) {
        detail = "gate range violated at trial " + std::to_string(trial);
        return false;
      }
    }
  }
  detail = "1000 random steps in range, spatial dims preserved";
  return true;
}

// ---- 4. shape chain ----

bool shape_chain(std::string& detail) {
  const ModelConfig c = ModelConfig::full(ModelVariant::kClstm);
  const ShapeChain chain = validate_config(c);
  const std::vector<std::array<int, 3>> expect{{23, 27, 23}, {12, 14, 12}, {6, 7, 6}, {3, 4, 3}};
  if (chain.spatial != expect || chain.clstm_spatial != std::array<int, 3>{3, 4, 3}) {
    detail = "full-grid chain mismatch";
    return false;
  }
  ModelConfig bad = c;
  bad.spatial_cnn.push_back({8, 7, 1, 0, 0.2});  // kernel 7 on a 3-wide grid
  bool rejected = false;
  try {
    validate_config(bad);
  } catch (const ConfigError&) {
    rejected = true;
  }
  ModelConfig tiny_classes = c;
  tiny_classes.num_classes = 1;
  bool rejected2 = false;
  try {
    validate_config(tiny_classes);
  } catch (const ConfigError&) {
    rejected2 = true;
  }
  detail = "45x54x45 -> 23x27x23 -> 12x14x12 -> 6x7x6 -> 3x4x3; invalid configs rejected";
  return rejected && rejected2;
}

// ---- 5. learning separation ----

struct RunSpec {
  SignalMode mode;
  ModelVariant variant;
  int temporal_kernel;  // conv1d variant only
  int epochs;
  double lr;
};

double run_desk_training(const RunSpec& rs, std::string& info) {
  SyntheticSpec spec;
  spec.subjects = 40;
  spec.mode = rs.mode;
  spec.seed = 2024;
  const auto subjects = generate(spec);

  std::vector<int> labels;
  for (const auto& s : subjects) labels.push_back(s.label);
  const auto splits = kfold_split(labels, 5, 11);
  const auto& split = splits.front();

  ModelConfig config = ModelConfig::desk_scale(rs.variant);
  config.temporal_kernel = rs.temporal_kernel;
  validate_config(config);

  TrainConfig tc;
  tc.epochs = rs.epochs;
  tc.batch_size = 8;
  tc.crop_length = 20;
  tc.validate_every = 10;
  tc.lr = rs.lr;
  tc.seed = 315;
  tc.workers = 2;

  auto params = build_model<float>(config, 91);
  const auto result = train(params, subjects, split.train, split.val, tc);

  std::vector<int> predicted, truth;
  for (int idx : split.test) {
    const auto& s = subjects[static_cast<std::size_t>(idx)];
    predicted.push_back(argmax_class(evaluate_subject(result.best_params, s.series, 20)));
    truth.push_back(s.label);
  }
  const auto m = compute_metrics(predicted, truth);
  info += " best_val=" + std::to_string(result.report.best_val_accuracy);
  return m.accuracy;
}

bool learning_separation(std::string& detail) {
  std::string info;
  const double t0 = now_seconds();

  const double clstm_st =
      run_desk_training({SignalMode::kSpatiotemporal, ModelVariant::kClstm, 3, 200, 1e-3}, info);
  const double degenerate_st =
      run_desk_training({SignalMode::kSpatiotemporal, ModelVariant::kConv1d, 1, 200, 1e-3}, info);
  const double clstm_sp =
      run_desk_training({SignalMode::kSpatial, ModelVariant::kClstm, 3, 120, 1e-3}, info);
  const double conv1d_sp =
      run_desk_training({SignalMode::kSpatial, ModelVariant::kConv1d, 3, 120, 1e-3}, info);

  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "spatiotemporal: clstm %.3f (need >=0.90), conv1d-k1 %.3f (need <=0.65); "
                "spatial: clstm %.3f, conv1d %.3f (need >=0.80); %.0f s",
                clstm_st, degenerate_st, clstm_sp, conv1d_sp, now_seconds() - t0);
  detail = buf;
  return clstm_st >= 0.90 && degenerate_st <= 0.65 && clstm_sp >= 0.80 && conv1d_sp >= 0.80;
}

// ---- 6. protocol fidelity ----

bool protocol_fidelity(std::string& detail) {
  // Crop-averaged inference equals the mean of per-crop softmax bit-exactly.
  {
    ModelConfig c = ModelConfig::desk_scale(ModelVariant::kClstm);
    c.input_spatial = {6, 6, 6};
    c.spatial_cnn = {{4, 3, 2, 1, 0.2}};
    c.clstm_hidden = 2;
    c.head_cnn = {{4, 3, 2, 1, 0.2}};
    auto params = build_model<float>(c, 17);
    Rng rng(0xACCE06);
    Tensorf series = oracle::random_tensor({50, 1, 6, 6, 6}, rng).cast<float>();
    const auto got = evaluate_subject(params, series, 20);

    const auto starts = evaluation_crop_starts(50, 20);
    if (starts != std::vector<int>{0, 20, 30}) {
      detail = "tiling mismatch for T=50, L=20";
      return false;
    }
    std::vector<double> manual(2, 0.0);
    for (int s : starts) {
      const auto crop = crop_time(series, s, 20);
      const auto probs = softmax(forward(params, crop, false).logits);
      for (std::size_t i = 0; i < manual.size(); ++i) manual[i] += static_cast<double>(probs[i]);
    }
    for (auto& v : manual) v /= static_cast<double>(starts.size());
    if (got != manual) {
      detail = "crop-averaged inference is not bit-exact";
      return false;
    }
  }

  // Stratified 5-fold structure over 40 subjects.
  {
    std::vector<int> labels;
    for (int i = 0; i < 40; ++i) labels.push_back(i % 2);
    const auto splits = kfold_split(labels, 5, 99);
    std::set<int> all;
    for (const auto& s : splits) {
      int pos = 0;
      for (int i : s.test) {
        if (!all.insert(i).second) {
          detail = "test folds overlap";
          return false;
        }
        pos += labels[static_cast<std::size_t>(i)];
      }
      if (std::abs(pos - static_cast<int>(s.test.size()) / 2) > 1) {
        detail = "fold not label-balanced within 1";
        return false;
      }
      std::set<int> fold_union(s.train.begin(), s.train.end());
      fold_union.insert(s.val.begin(), s.val.end());
      fold_union.insert(s.test.begin(), s.test.end());
      if (fold_union.size() != labels.size()) {
        detail = "fold partition not exhaustive";
        return false;
      }
    }
    if (all.size() != labels.size()) {
      detail = "test folds not exhaustive";
      return false;
    }
  }

  // Fixed seeds reproduce TrainReports bit-identically across runs and
  // worker counts.
  {
    SyntheticSpec spec;
    spec.subjects = 8;
    spec.spatial = {6, 6, 6};
    spec.t_min = 8;
    spec.t_max = 12;
    spec.mode = SignalMode::kSpatial;
    spec.seed = 5;
    const auto subjects = generate(spec);
    ModelConfig c;
    c.variant = ModelVariant::kClstm;
    c.input_spatial = {6, 6, 6};
    c.crop_length = 4;
    c.spatial_cnn = {{4, 3, 2, 1, 0.2}};
    c.clstm_hidden = 2;
    c.clstm_layers = 1;
    c.head_cnn = {{4, 3, 2, 1, 0.2}};
    auto params = build_model<float>(c, 21);
    TrainConfig tc;
    tc.epochs = 6;
    tc.batch_size = 3;
    tc.crop_length = 4;
    tc.validate_every = 3;
    tc.lr = 1e-3;
    tc.seed = 77;
    tc.workers = 1;
    const auto a = train(params, subjects, {0, 1, 2, 3, 4}, {5, 6, 7}, tc);
    const auto b = train(params, subjects, {0, 1, 2, 3, 4}, {5, 6, 7}, tc);
    tc.workers = 2;
    const auto c2 = train(params, subjects, {0, 1, 2, 3, 4}, {5, 6, 7}, tc);
    tc.workers = 4;
    const auto d = train(params, subjects, {0, 1, 2, 3, 4}, {5, 6, 7}, tc);
    const std::string ra = format_train_report(a.report);
    if (ra != format_train_report(b.report) || ra != format_train_report(c2.report) ||
        ra != format_train_report(d.report)) {
      detail = "train report differs across runs or worker counts";
      return false;
    }
  }

  detail = "bit-exact crop averaging, valid stratified folds, reproducible reports (workers 1/2/4)";
  return true;
}

// ---- 7. Adam first step and cross entropy ----

bool adam_crossentropy(std::string& detail) {
  Tensord logits({2}, {1.25, 1.25});
  const auto ce = softmax_cross_entropy(logits, 0);
  const double ln2_err = std::abs(ce.loss - 0.69314718055994530942);

  ModelConfig c;
  c.variant = ModelVariant::kConv1d;
  c.input_spatial = {4, 4, 4};
  c.spatial_cnn = {{1, 3, 2, 1, 0.0}};
  c.temporal_channels = 1;
  c.temporal_kernel = 1;
  auto params = build_model<double>(c, 1);
  params.dense_b[0] = 0.5;
  params.dense_b[1] = 0.5;
  GradMap<double> grads;
  params.for_each([&](const std::string& p, const Tensord& t) { grads.emplace(p, Tensord(t.dims())); });
  auto& gb = grads.at("dense.bias");
  gb[0] = 1.0;
  gb[1] = 1.0;
  AdamT<double> adam(AdamConfig{1e-4, 0.9, 0.999, 1e-8});
  adam.step(params, grads);
  const double expect = 0.5 - 1e-4 / (1.0 + 1e-8);
  const double adam_err = std::abs(params.dense_b[0] - expect);

  char buf[128];
  std::snprintf(buf, sizeof(buf), "ln2 err %.2e, first-step err %.2e (limits 1e-12)", ln2_err,
                adam_err);
  detail = buf;
  return ln2_err <= 1e-12 && adam_err <= 1e-12;
}

// ---- 8. container format ----

bool file_format(std::string& detail) {
  Rng rng(0xACCE08);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<TensorEntry> entries;
    const int n = 1 + static_cast<int>(rng.uniform_int(0, 3));
    for (int i = 0; i < n; ++i) {
      Shape dims;
      const int rank = 1 + static_cast<int>(rng.uniform_int(0, 4));
      for (int d = 0; d < rank; ++d) dims.push_back(1 + static_cast<int>(rng.uniform_int(0, 3)));
      const std::string name = "t" + std::to_string(i);
      if (rng.uniform() < 0.5) {
        Tensorf t(dims);
        for (std::size_t s = 0; s < t.size(); ++s) t[s] = static_cast<float>(rng.normal());
        entries.push_back(TensorEntry::from(name, t));
      } else {
        Tensord t(dims);
        for (std::size_t s = 0; s < t.size(); ++s) t[s] = rng.normal();
        entries.push_back(TensorEntry::from(name, t));
      }
    }
    const auto bytes = encode_tensor_container(entries);
    const auto back = decode_tensor_container(bytes);
    if (back.size() != entries.size()) {
      detail = "round-trip entry count mismatch at trial " + std::to_string(trial);
      return false;
    }
    for (std::size_t i = 0; i < entries.size(); ++i) {
      if (back[i].name != entries[i].name || back[i].dtype != entries[i].dtype ||
          back[i].dims != entries[i].dims || back[i].raw != entries[i].raw) {
        detail = "round-trip not bitwise at trial " + std::to_string(trial);
        return false;
      }
    }
  }

  // Every truncated prefix of a fixture is rejected, with an offset available.
  Tensorf a({3, 2});
  Tensord b({2, 2, 2});
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = static_cast<float>(i) * 0.5f;
  for (std::size_t i = 0; i < b.size(); ++i) b[i] = static_cast<double>(i) - 3.0;
  const auto bytes =
      encode_tensor_container({TensorEntry::from("first", a), TensorEntry::from("second", b)});
  for (std::size_t len = 0; len < bytes.size(); ++len) {
    std::vector<std::uint8_t> prefix(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(len));
    bool located = false;
    try {
      decode_tensor_container(prefix);
    } catch (const FormatError& e) {
      located = e.offset() <= len;
    }
    if (!located) {
      detail = "truncation at " + std::to_string(len) + " bytes not rejected with an offset";
      return false;
    }
  }
  auto corrupted = bytes;
  corrupted[1] = 'X';
  bool bad_magic = false;
  try {
    decode_tensor_container(corrupted);
  } catch (const FormatError& e) {
    bad_magic = e.offset() == 0;
  }
  if (!bad_magic) {
    detail = "corrupted magic not rejected at offset 0";
    return false;
  }
  detail = "1000 round-trips bitwise; all truncations and corruptions rejected with offsets";
  return true;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<Criterion> criteria{
      {"oracle-equivalence", oracle_equivalence},
      {"gradient-suite", gradient_suite},
      {"gate-invariants", gate_invariants},
      {"shape-chain", shape_chain},
      {"learning-separation", learning_separation},
      {"protocol-fidelity", protocol_fidelity},
      {"adam-crossentropy", adam_crossentropy},
      {"file-format", file_format},
  };

  std::vector<std::string> filter;
  for (int i = 1; i < argc; ++i) filter.emplace_back(argv[i]);

  int failures = 0;
  for (auto& c : criteria) {
    if (!filter.empty()) {
      bool wanted = false;
      for (const auto& f : filter) wanted = wanted || c.name.find(f) != std::string::npos;
      if (!wanted) continue;
    }
    const double t0 = now_seconds();
    std::string detail;
    bool pass = false;
    try {
      pass = c.check(detail);
    } catch (const std::exception& e) {
      detail = std::string("exception: ") + e.what();
    }
    std::printf("%-4s %-21s %6.1fs  %s\n", pass ? "PASS" : "FAIL", c.name.c_str(),
                now_seconds() - t0, detail.c_str());
    std::fflush(stdout);
    if (!pass) ++failures;
  }
  return failures == 0 ? 0 : 1;
}
