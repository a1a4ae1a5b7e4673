#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "st4d/data.hpp"
#include "st4d/errors.hpp"
#include "st4d/model.hpp"
#include "st4d/optim.hpp"
#include "st4d/rng.hpp"

namespace st4d {

struct TrainConfig {
  int epochs = 500;
  int batch_size = 8;
  int crop_length = 20;
  int validate_every = 10;
  double lr = 1e-4;
  std::uint64_t seed = 0;
  int workers = 1;
};

struct EpochLog {
  int epoch = 0;
  double mean_loss = 0.0;
  std::optional<double> val_accuracy;
};

struct TrainReport {
  std::vector<EpochLog> epochs;
  int instances_per_epoch = 0;
  int best_epoch = 0;
  double best_val_accuracy = 0.0;
};

// Formats a double so that re-parsing reproduces the exact bits.
std::string format_double(double v);

// Line-oriented log: "epoch N loss L[ val_acc A]".
std::string format_train_report(const TrainReport& report);

struct FoldMetrics {
  int fold = 0;
  double accuracy = 0.0;
  double f1 = 0.0;
  std::vector<std::vector<double>> probabilities;  // per test subject
  std::vector<int> labels;
  int best_epoch = 0;
};

// Key-value summary of per-fold metrics with mean and sample standard deviation.
std::string format_fold_summary(const std::vector<FoldMetrics>& folds);

// Uniform start index in {0, ..., series_length - crop_length}.
int sample_crop(int series_length, int crop_length, Rng& rng);

// Deterministic inference tiling: starts 0, L, 2L, ... plus a tail crop
// [T-L, T) when T mod L != 0.
std::vector<int> evaluation_crop_starts(int series_length, int crop_length);

struct FoldSplit {
  std::vector<int> train;
  std::vector<int> val;
  std::vector<int> test;
};

// Label-stratified shuffled partition; fold i tests, fold (i+1) mod k
// validates, the rest trains.
std::vector<FoldSplit> kfold_split(const std::vector<int>& labels, int k, std::uint64_t seed,
                                   bool stratify = true);

struct MetricsResult {
  double accuracy = 0.0;
  double f1 = 0.0;
};

// Argmax with ties resolved to the lower class index.
int argmax_class(const std::vector<double>& probs);

// Accuracy over argmax predictions; F1 for the positive class (label 1),
// zero when precision + recall is zero.
MetricsResult compute_metrics(const std::vector<int>& predicted, const std::vector<int>& labels);

// Fixed-order parallel map: fn(i) runs on up to `workers` threads, results
// land in index order, so reductions do not depend on scheduling.
void parallel_for(int n, int workers, const std::function<void(int)>& fn);

// [start, start+length) timesteps of a [T,...] series.
template <typename T>
TensorT<T> crop_time(const TensorT<T>& series, int start, int length) {
  if (start < 0 || length < 1 || start + length > series.dim(0)) {
    throw std::invalid_argument("crop [" + std::to_string(start) + ", " +
                                std::to_string(start + length) + ") outside series of length " +
                                std::to_string(series.dim(0)));
  }
  Shape dims = series.dims();
  dims[0] = length;
  TensorT<T> out(dims);
  const std::size_t stride = series.size() / static_cast<std::size_t>(series.dim(0));
  std::copy_n(series.data() + static_cast<std::size_t>(start) * stride,
              static_cast<std::size_t>(length) * stride, out.data());
  return out;
}

// Mean of per-crop softmax outputs over the deterministic tiling.
template <typename T>
std::vector<double> evaluate_subject(const ModelParamsT<T>& params, const Tensorf& series,
                                     int crop_length);

template <typename T>
struct TrainResultT {
  ModelParamsT<T> best_params;
  TrainReport report;
};

// The crop-based training loop: per epoch, shuffle training subjects, draw one
// fresh crop per subject, run batches through Adam; every validate_every
// epochs score the validation subjects with crop-averaged inference and keep
// the snapshot with the highest accuracy (earliest epoch wins ties).
template <typename T>
TrainResultT<T> train(const ModelParamsT<T>& initial, const std::vector<SubjectRecord>& subjects,
                      const std::vector<int>& train_idx, const std::vector<int>& val_idx,
                      const TrainConfig& config);

extern template std::vector<double> evaluate_subject<float>(const ModelParamsT<float>&,
                                                            const Tensorf&, int);
extern template std::vector<double> evaluate_subject<double>(const ModelParamsT<double>&,
                                                             const Tensorf&, int);
extern template TrainResultT<float> train<float>(const ModelParamsT<float>&,
                                                 const std::vector<SubjectRecord>&,
                                                 const std::vector<int>&, const std::vector<int>&,
                                                 const TrainConfig&);
extern template TrainResultT<double> train<double>(const ModelParamsT<double>&,
                                                   const std::vector<SubjectRecord>&,
                                                   const std::vector<int>&, const std::vector<int>&,
                                                   const TrainConfig&);

}  // namespace st4d
