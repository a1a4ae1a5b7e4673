#pragma once

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>

#include "st4d/model.hpp"
#include "st4d/tensor.hpp"

namespace st4d {

// Softmax with max-subtraction, accumulated in double regardless of T.
template <typename T>
TensorT<T> softmax(const TensorT<T>& logits) {
  if (logits.rank() != 1) {
    throw std::invalid_argument("softmax expects a logits vector, got " + shape_str(logits.dims()));
  }
  double m = logits[0];
  for (std::size_t i = 1; i < logits.size(); ++i) m = std::max(m, static_cast<double>(logits[i]));
  double denom = 0.0;
  TensorT<T> out(logits.dims());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double e = std::exp(static_cast<double>(logits[i]) - m);
    out[i] = static_cast<T>(e);
    denom += e;
  }
  for (std::size_t i = 0; i < logits.size(); ++i)
    out[i] = static_cast<T>(static_cast<double>(out[i]) / denom);
  return out;
}

template <typename T>
struct CrossEntropyResultT {
  double loss = 0.0;
  TensorT<T> probs;
  TensorT<T> grad_logits;  // softmax - onehot(label)
};

// loss = -log softmax(logits)[label].
template <typename T>
CrossEntropyResultT<T> softmax_cross_entropy(const TensorT<T>& logits, int label) {
  if (logits.rank() != 1) {
    throw std::invalid_argument("cross entropy expects a logits vector, got " +
                                shape_str(logits.dims()));
  }
  const int K = logits.dim(0);
  if (label < 0 || label >= K) {
    throw std::invalid_argument("label " + std::to_string(label) + " out of range for " +
                                std::to_string(K) + " classes");
  }
  double m = logits[0];
  for (std::size_t i = 1; i < logits.size(); ++i) m = std::max(m, static_cast<double>(logits[i]));
  double denom = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i)
    denom += std::exp(static_cast<double>(logits[i]) - m);

  CrossEntropyResultT<T> r;
  r.probs = TensorT<T>(logits.dims());
  r.grad_logits = TensorT<T>(logits.dims());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double p = std::exp(static_cast<double>(logits[i]) - m) / denom;
    r.probs[i] = static_cast<T>(p);
    r.grad_logits[i] = static_cast<T>(p - (static_cast<int>(i) == label ? 1.0 : 0.0));
  }
  r.loss = std::log(denom) - (static_cast<double>(logits[static_cast<std::size_t>(label)]) - m);
  return r;
}

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adam with bias correction:
//   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2
//   p <- p - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
template <typename T>
class AdamT {
 public:
  explicit AdamT(AdamConfig config = {}) : config_(config) {}

  const AdamConfig& config() const { return config_; }
  int step_count() const { return step_; }

  void step(ModelParamsT<T>& params, const GradMap<T>& grads) {
    std::size_t param_count = 0;
    params.for_each([&](const std::string&, const TensorT<T>&) { ++param_count; });
    if (grads.size() != param_count) {
      throw std::invalid_argument("gradient map holds " + std::to_string(grads.size()) +
                                  " tensors, parameters hold " + std::to_string(param_count));
    }
    ++step_;
    const double bc1 = 1.0 - std::pow(config_.beta1, step_);
    const double bc2 = 1.0 - std::pow(config_.beta2, step_);
    params.for_each([&](const std::string& path, TensorT<T>& p) {
      auto it = grads.find(path);
      if (it == grads.end()) {
        throw std::invalid_argument("missing gradient for parameter '" + path + "'");
      }
      const TensorT<T>& g = it->second;
      if (!g.same_dims(p)) {
        throw std::invalid_argument("gradient shape " + shape_str(g.dims()) +
                                    " != parameter shape " + shape_str(p.dims()) + " at '" + path +
                                    "'");
      }
      TensorT<T>& m = moment(m_, path, p);
      TensorT<T>& v = moment(v_, path, p);
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double gi = g[i];
        const double mi = config_.beta1 * static_cast<double>(m[i]) + (1.0 - config_.beta1) * gi;
        const double vi =
            config_.beta2 * static_cast<double>(v[i]) + (1.0 - config_.beta2) * gi * gi;
        m[i] = static_cast<T>(mi);
        v[i] = static_cast<T>(vi);
        const double update = config_.lr * (mi / bc1) / (std::sqrt(vi / bc2) + config_.epsilon);
        p[i] = static_cast<T>(static_cast<double>(p[i]) - update);
      }
    });
  }

 private:
  TensorT<T>& moment(std::map<std::string, TensorT<T>>& store, const std::string& path,
                     const TensorT<T>& like) {
    auto it = store.find(path);
    if (it == store.end()) it = store.emplace(path, TensorT<T>(like.dims())).first;
    return it->second;
  }

  AdamConfig config_;
  int step_ = 0;
  std::map<std::string, TensorT<T>> m_, v_;
};

}  // namespace st4d
