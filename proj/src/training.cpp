#include "st4d/training.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <mutex>
#include <thread>

namespace st4d {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string format_train_report(const TrainReport& report) {
  std::string out;
  for (const auto& e : report.epochs) {
    out += "epoch " + std::to_string(e.epoch) + " loss " + format_double(e.mean_loss);
    if (e.val_accuracy) out += " val_acc " + format_double(*e.val_accuracy);
    out += "\n";
  }
  out += "best_epoch " + std::to_string(report.best_epoch) + "\n";
  out += "best_val_acc " + format_double(report.best_val_accuracy) + "\n";
  return out;
}

std::string format_fold_summary(const std::vector<FoldMetrics>& folds) {
  std::string out = "folds " + std::to_string(folds.size()) + "\n";
  auto stats = [&](auto get) {
    double mean = 0.0;
    for (const auto& f : folds) mean += get(f);
    mean /= static_cast<double>(folds.size());
    double var = 0.0;
    for (const auto& f : folds) {
      const double d = get(f) - mean;
      var += d * d;
    }
    // Sample standard deviation, zero for a single fold.
    const double sd = folds.size() > 1 ? std::sqrt(var / static_cast<double>(folds.size() - 1)) : 0.0;
    return std::pair<double, double>(mean, sd);
  };
  for (const auto& f : folds) {
    const std::string base = "fold." + std::to_string(f.fold) + ".";
    out += base + "accuracy " + format_double(f.accuracy) + "\n";
    out += base + "f1 " + format_double(f.f1) + "\n";
    out += base + "best_epoch " + std::to_string(f.best_epoch) + "\n";
  }
  const auto acc = stats([](const FoldMetrics& f) { return f.accuracy; });
  const auto f1 = stats([](const FoldMetrics& f) { return f.f1; });
  out += "mean.accuracy " + format_double(acc.first) + "\n";
  out += "std.accuracy " + format_double(acc.second) + "\n";
  out += "mean.f1 " + format_double(f1.first) + "\n";
  out += "std.f1 " + format_double(f1.second) + "\n";
  return out;
}

int sample_crop(int series_length, int crop_length, Rng& rng) {
  if (crop_length < 1) throw std::invalid_argument("crop_length must be >= 1");
  if (series_length < crop_length) {
    throw DataError("series of length " + std::to_string(series_length) +
                    " is shorter than the crop length " + std::to_string(crop_length));
  }
  return static_cast<int>(rng.uniform_int(0, series_length - crop_length));
}

std::vector<int> evaluation_crop_starts(int series_length, int crop_length) {
  if (crop_length < 1) throw std::invalid_argument("crop_length must be >= 1");
  if (series_length < crop_length) {
    throw DataError("series of length " + std::to_string(series_length) +
                    " is shorter than the crop length " + std::to_string(crop_length));
  }
  std::vector<int> starts;
  for (int s = 0; s + crop_length <= series_length; s += crop_length) starts.push_back(s);
  if (series_length % crop_length != 0) starts.push_back(series_length - crop_length);
  return starts;
}

std::vector<FoldSplit> kfold_split(const std::vector<int>& labels, int k, std::uint64_t seed,
                                   bool stratify) {
  const int n = static_cast<int>(labels.size());
  if (k < 2) throw std::invalid_argument("k must be >= 2, got " + std::to_string(k));
  if (n < k) {
    throw DataError("cannot split " + std::to_string(n) + " subjects into " + std::to_string(k) +
                    " folds");
  }
  std::vector<std::vector<int>> folds(static_cast<std::size_t>(k));
  auto deal = [&](std::vector<int>& idx, std::uint64_t stream) {
    Rng rng(derive_seed(seed, 0xf01d5ULL, stream));
    for (std::size_t i = idx.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
      std::swap(idx[i - 1], idx[j]);
    }
    for (std::size_t i = 0; i < idx.size(); ++i)
      folds[i % static_cast<std::size_t>(k)].push_back(idx[i]);
  };

  if (stratify) {
    for (int cls : {0, 1}) {
      std::vector<int> idx;
      for (int i = 0; i < n; ++i)
        if (labels[static_cast<std::size_t>(i)] == cls) idx.push_back(i);
      if (!idx.empty() && static_cast<int>(idx.size()) < k) {
        throw DataError("class " + std::to_string(cls) + " has " + std::to_string(idx.size()) +
                        " subjects, fewer than the " + std::to_string(k) + " folds");
      }
      deal(idx, static_cast<std::uint64_t>(cls));
    }
  } else {
    std::vector<int> idx(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
    deal(idx, 7);
  }

  for (auto& f : folds) std::sort(f.begin(), f.end());
  std::vector<FoldSplit> splits;
  for (int i = 0; i < k; ++i) {
    FoldSplit s;
    s.test = folds[static_cast<std::size_t>(i)];
    s.val = folds[static_cast<std::size_t>((i + 1) % k)];
    for (int j = 0; j < k; ++j) {
      if (j == i || j == (i + 1) % k) continue;
      s.train.insert(s.train.end(), folds[static_cast<std::size_t>(j)].begin(),
                     folds[static_cast<std::size_t>(j)].end());
    }
    std::sort(s.train.begin(), s.train.end());
    splits.push_back(std::move(s));
  }
  return splits;
}

int argmax_class(const std::vector<double>& probs) {
  if (probs.empty()) throw std::invalid_argument("empty probability vector");
  int best = 0;
  for (int i = 1; i < static_cast<int>(probs.size()); ++i) {
    if (probs[static_cast<std::size_t>(i)] > probs[static_cast<std::size_t>(best)]) best = i;
  }
  return best;
}

MetricsResult compute_metrics(const std::vector<int>& predicted, const std::vector<int>& labels) {
  if (predicted.size() != labels.size() || predicted.empty()) {
    throw std::invalid_argument("predictions (" + std::to_string(predicted.size()) +
                                ") and labels (" + std::to_string(labels.size()) +
                                ") must have equal non-zero length");
  }
  int correct = 0, tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (predicted[i] == labels[i]) ++correct;
    if (predicted[i] == 1 && labels[i] == 1) ++tp;
    if (predicted[i] == 1 && labels[i] != 1) ++fp;
    if (predicted[i] != 1 && labels[i] == 1) ++fn;
  }
  MetricsResult r;
  r.accuracy = static_cast<double>(correct) / static_cast<double>(labels.size());
  const double precision = tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
  const double recall = tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
  r.f1 = precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
  return r;
}

void parallel_for(int n, int workers, const std::function<void(int)>& fn) {
  if (n <= 0) return;
  if (workers <= 1 || n == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto body = [&]() {
    for (;;) {
      const int i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  const int count = std::min(workers, n);
  pool.reserve(static_cast<std::size_t>(count));
  for (int w = 0; w < count; ++w) pool.emplace_back(body);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

template <typename T>
std::vector<double> evaluate_subject(const ModelParamsT<T>& params, const Tensorf& series,
                                     int crop_length) {
  const auto starts = evaluation_crop_starts(series.dim(0), crop_length);
  std::vector<double> mean(static_cast<std::size_t>(params.config.num_classes), 0.0);
  for (int s : starts) {
    TensorT<T> crop = crop_time(series, s, crop_length).template cast<T>();
    const auto fwd = forward(params, crop, /*training=*/false);
    const auto probs = softmax(fwd.logits);
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += static_cast<double>(probs[i]);
  }
  for (auto& v : mean) v /= static_cast<double>(starts.size());
  return mean;
}

namespace {

template <typename T>
double validation_accuracy(const ModelParamsT<T>& params,
                           const std::vector<SubjectRecord>& subjects,
                           const std::vector<int>& val_idx, int crop_length, int workers) {
  std::vector<int> predicted(val_idx.size());
  parallel_for(static_cast<int>(val_idx.size()), workers, [&](int i) {
    const auto& subject = subjects[static_cast<std::size_t>(val_idx[static_cast<std::size_t>(i)])];
    predicted[static_cast<std::size_t>(i)] =
        argmax_class(evaluate_subject(params, subject.series, crop_length));
  });
  int correct = 0;
  for (std::size_t i = 0; i < val_idx.size(); ++i) {
    if (predicted[i] == subjects[static_cast<std::size_t>(val_idx[i])].label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(val_idx.size());
}

}  // namespace

template <typename T>
TrainResultT<T> train(const ModelParamsT<T>& initial, const std::vector<SubjectRecord>& subjects,
                      const std::vector<int>& train_idx, const std::vector<int>& val_idx,
                      const TrainConfig& config) {
  if (train_idx.empty() || val_idx.empty()) {
    throw std::invalid_argument("train and validation subject sets must be non-empty");
  }
  if (config.epochs < 1 || config.batch_size < 1 || config.validate_every < 1) {
    throw std::invalid_argument("epochs, batch_size and validate_every must be >= 1");
  }
  {
    std::string short_subjects;
    for (const auto& set : {&train_idx, &val_idx}) {
      for (int i : *set) {
        const auto& s = subjects.at(static_cast<std::size_t>(i));
        if (s.series.dim(0) < config.crop_length) {
          short_subjects += short_subjects.empty() ? s.id : ", " + s.id;
        }
      }
    }
    if (!short_subjects.empty()) {
      throw DataError("subjects shorter than crop length " + std::to_string(config.crop_length) +
                      ": " + short_subjects);
    }
  }

  ModelParamsT<T> params = initial;
  AdamT<T> adam(AdamConfig{config.lr, 0.9, 0.999, 1e-8});

  TrainReport report;
  report.instances_per_epoch = static_cast<int>(train_idx.size());
  ModelParamsT<T> best = params;
  double best_acc = -1.0;
  int best_epoch = -1;

  struct SampleOut {
    double loss = 0.0;
    GradMap<T> grads;
  };

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::vector<int> order = train_idx;
    Rng shuffle_rng(derive_seed(config.seed, 0x53484f46ULL, static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i) {
      const auto j =
          static_cast<std::size_t>(shuffle_rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
      std::swap(order[i - 1], order[j]);
    }

    double loss_sum = 0.0;
    for (std::size_t batch_start = 0; batch_start < order.size();
         batch_start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t batch_end =
          std::min(order.size(), batch_start + static_cast<std::size_t>(config.batch_size));
      const int batch_n = static_cast<int>(batch_end - batch_start);
      std::vector<SampleOut> outs(static_cast<std::size_t>(batch_n));

      parallel_for(batch_n, config.workers, [&](int bi) {
        const int si = order[batch_start + static_cast<std::size_t>(bi)];
        const auto& subject = subjects[static_cast<std::size_t>(si)];
        // One stream per (seed, epoch, subject): crop choice then dropout.
        // Worker scheduling cannot influence it.
        Rng rng(derive_seed(config.seed, static_cast<std::uint64_t>(epoch),
                            static_cast<std::uint64_t>(si)));
        const int start = sample_crop(subject.series.dim(0), config.crop_length, rng);
        const TensorT<T> crop =
            crop_time(subject.series, start, config.crop_length).template cast<T>();
        auto fwd = forward(params, crop, /*training=*/true, &rng);
        auto ce = softmax_cross_entropy(fwd.logits, subject.label);
        auto grads = backward(params, fwd.cache, ce.grad_logits);
        outs[static_cast<std::size_t>(bi)] = {ce.loss, std::move(grads)};
      });

      // Mean-reduce gradients in batch order; the reduction order is fixed so
      // results match across worker counts.
      GradMap<T> mean_grads = std::move(outs[0].grads);
      loss_sum += outs[0].loss;
      for (int bi = 1; bi < batch_n; ++bi) {
        loss_sum += outs[static_cast<std::size_t>(bi)].loss;
        for (auto& [path, g] : mean_grads) {
          add_inplace(g, outs[static_cast<std::size_t>(bi)].grads.at(path));
        }
      }
      const T inv = T(1) / static_cast<T>(batch_n);
      for (auto& [path, g] : mean_grads) {
        for (std::size_t i = 0; i < g.size(); ++i) g[i] *= inv;
      }
      adam.step(params, mean_grads);
    }

    const double mean_loss = loss_sum / static_cast<double>(order.size());
    if (!std::isfinite(mean_loss)) {
      throw DivergenceError("non-finite training loss " + format_double(mean_loss) + " at epoch " +
                            std::to_string(epoch));
    }
    EpochLog log{epoch, mean_loss, std::nullopt};
    if (epoch % config.validate_every == 0) {
      const double acc =
          validation_accuracy(params, subjects, val_idx, config.crop_length, config.workers);
      log.val_accuracy = acc;
      if (acc > best_acc) {
        best_acc = acc;
        best = params;
        best_epoch = epoch;
      }
    }
    report.epochs.push_back(log);
  }

  if (best_epoch < 0) {
    // No validation point was scheduled; fall back to the final parameters.
    best = params;
    best_epoch = config.epochs;
    best_acc = 0.0;
  }
  report.best_epoch = best_epoch;
  report.best_val_accuracy = best_acc;
  return {std::move(best), std::move(report)};
}

template std::vector<double> evaluate_subject<float>(const ModelParamsT<float>&, const Tensorf&,
                                                     int);
template std::vector<double> evaluate_subject<double>(const ModelParamsT<double>&, const Tensorf&,
                                                      int);
template TrainResultT<float> train<float>(const ModelParamsT<float>&,
                                          const std::vector<SubjectRecord>&,
                                          const std::vector<int>&, const std::vector<int>&,
                                          const TrainConfig&);
template TrainResultT<double> train<double>(const ModelParamsT<double>&,
                                            const std::vector<SubjectRecord>&,
                                            const std::vector<int>&, const std::vector<int>&,
                                            const TrainConfig&);

}  // namespace st4d
