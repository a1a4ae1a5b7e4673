// st4d command line: synthetic dataset generation, crop-based training with
// k-fold evaluation, checkpoint evaluation, and the finite-difference
// gradient check suite.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "st4d/data.hpp"
#include "st4d/errors.hpp"
#include "st4d/gradcheck.hpp"
#include "st4d/model.hpp"
#include "st4d/training.hpp"
#include "st4d/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Exit codes: 0 success, 2 configuration/flag error, 3 data/format error,
// 4 numeric divergence, 5 gradcheck failure, 1 anything unexpected.
enum ExitCode {
  kOk = 0,
  kUnexpected = 1,
  kConfigError = 2,
  kDataError = 3,
  kDivergence = 4,
  kGradcheckFailure = 5,
};

struct GenerateFlags {
  std::string out;
  int subjects = 40;
  std::string mode = "spatiotemporal";
  std::vector<int> grid{12, 14, 12};
  int channels = 1;
  int t_min = 60;
  int t_max = 120;
  double snr = 3.0;
  int sites = 1;
  double site_shift = 0.0;
  std::uint64_t seed = 0;
  bool force = false;
  std::string from_manifest;
};

struct TrainFlags {
  std::string data;
  std::string out;
  std::string variant = "clstm";
  int epochs = 500;
  int batch = 8;
  int crop_length = 20;
  int validate_every = 10;
  double lr = 1e-4;
  int folds = 5;
  std::uint64_t seed = 0;
  int workers = 1;
  bool desk_scale = false;
  std::string precision = "f32";
  int temporal_kernel = 3;
  std::string from_manifest;
};

struct EvalFlags {
  std::string checkpoint;
  std::string data;
  std::string out;
  int workers = 1;
  std::string from_manifest;
};

struct GradcheckFlags {
  std::vector<std::string> components;
  std::uint64_t seed = 99;
  int samples = 20;
  double tolerance = 1e-5;
};

json load_manifest_flags(const std::string& path, const std::string& expected_command) {
  std::ifstream in(path);
  if (!in) throw st4d::DataError("cannot open run manifest '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw st4d::DataError("bad run manifest '" + path + "': " + e.what());
  }
  if (j.value("command", "") != expected_command) {
    throw st4d::ConfigError("run manifest '" + path + "' was written by command '" +
                            j.value("command", "?") + "', not '" + expected_command + "'");
  }
  return j.at("flags");
}

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw st4d::DataError("cannot write '" + path.string() + "'");
  out << text;
}

fs::path resolve_manifest_path(const std::string& data) {
  fs::path p(data);
  if (fs::is_directory(p)) return p / "manifest.csv";
  return p;
}

// Merge stored flag values for options the user did not pass explicitly.
template <typename T>
void merge_flag(const CLI::App* cmd, const std::string& name, const json& flags,
                const std::string& key, T& target) {
  if (cmd->count(name) == 0 && flags.contains(key)) target = flags.at(key).get<T>();
}

int run_generate(const CLI::App* cmd, GenerateFlags f) {
  if (!f.from_manifest.empty()) {
    const json flags = load_manifest_flags(f.from_manifest, "generate");
    merge_flag(cmd, "--out", flags, "out", f.out);
    merge_flag(cmd, "--subjects", flags, "subjects", f.subjects);
    merge_flag(cmd, "--mode", flags, "mode", f.mode);
    merge_flag(cmd, "--grid", flags, "grid", f.grid);
    merge_flag(cmd, "--channels", flags, "channels", f.channels);
    merge_flag(cmd, "--t-min", flags, "t_min", f.t_min);
    merge_flag(cmd, "--t-max", flags, "t_max", f.t_max);
    merge_flag(cmd, "--snr", flags, "snr", f.snr);
    merge_flag(cmd, "--sites", flags, "sites", f.sites);
    merge_flag(cmd, "--site-shift", flags, "site_shift", f.site_shift);
    merge_flag(cmd, "--seed", flags, "seed", f.seed);
  }
  if (f.out.empty()) throw st4d::ConfigError("--out is required");
  if (f.grid.size() != 3) throw st4d::ConfigError("--grid needs three extents");

  const fs::path out_dir(f.out);
  if (fs::exists(out_dir) && !fs::is_empty(out_dir) && !f.force) {
    throw st4d::ConfigError("output directory '" + f.out +
                            "' exists and is not empty (pass --force to overwrite)");
  }

  st4d::SyntheticSpec spec;
  spec.subjects = f.subjects;
  spec.mode = st4d::signal_mode_from_name(f.mode);
  spec.spatial = {f.grid[0], f.grid[1], f.grid[2]};
  spec.channels = f.channels;
  spec.t_min = f.t_min;
  spec.t_max = f.t_max;
  spec.snr = f.snr;
  spec.sites = f.sites;
  spec.site_shift = f.site_shift;
  spec.seed = f.seed;

  const auto records = st4d::generate(spec);
  fs::create_directories(out_dir);

  json manifest;
  manifest["command"] = "generate";
  manifest["tool_version"] = st4d::kVersion;
  manifest["seed"] = f.seed;
  manifest["flags"] = {{"out", f.out},
                       {"subjects", f.subjects},
                       {"mode", f.mode},
                       {"grid", f.grid},
                       {"channels", f.channels},
                       {"t_min", f.t_min},
                       {"t_max", f.t_max},
                       {"snr", f.snr},
                       {"sites", f.sites},
                       {"site_shift", f.site_shift},
                       {"seed", f.seed}};
  manifest["artifacts"] = {{"manifest", "manifest.csv"}};
  write_text_file(out_dir / "run_manifest.json", manifest.dump(2) + "\n");

  st4d::write_dataset(out_dir, records);
  std::cout << "wrote " << records.size() << " subjects to " << out_dir.string() << "\n";
  return kOk;
}

st4d::ModelConfig make_train_config(const TrainFlags& f, const st4d::Shape& series_dims) {
  const auto variant = st4d::variant_from_name(f.variant);
  st4d::ModelConfig config =
      f.desk_scale ? st4d::ModelConfig::desk_scale(variant) : st4d::ModelConfig::full(variant);
  config.input_channels = series_dims[1];
  config.input_spatial = {series_dims[2], series_dims[3], series_dims[4]};
  config.crop_length = f.crop_length;
  config.temporal_kernel = f.temporal_kernel;
  st4d::validate_config(config);
  return config;
}

template <typename T>
int run_train_typed(const TrainFlags& f, const st4d::ModelConfig& config,
                    const std::vector<st4d::SubjectRecord>& subjects, const fs::path& out_dir) {
  std::vector<int> labels;
  labels.reserve(subjects.size());
  for (const auto& s : subjects) labels.push_back(s.label);
  const auto splits = st4d::kfold_split(labels, f.folds, f.seed);

  st4d::TrainConfig tc;
  tc.epochs = f.epochs;
  tc.batch_size = f.batch;
  tc.crop_length = f.crop_length;
  tc.validate_every = f.validate_every;
  tc.lr = f.lr;
  tc.seed = f.seed;
  tc.workers = f.workers;

  std::vector<st4d::FoldMetrics> folds;
  for (int fold = 0; fold < f.folds; ++fold) {
    const auto& split = splits[static_cast<std::size_t>(fold)];
    const std::uint64_t fold_seed = st4d::derive_seed(f.seed, 0xf01dULL, fold);
    auto params = st4d::build_model<T>(config, fold_seed);
    st4d::TrainConfig fold_tc = tc;
    fold_tc.seed = st4d::derive_seed(f.seed, 0x7261ULL, fold);
    auto result = st4d::train(params, subjects, split.train, split.val, fold_tc);

    st4d::FoldMetrics metrics;
    metrics.fold = fold;
    metrics.best_epoch = result.report.best_epoch;
    std::vector<int> predicted;
    for (int idx : split.test) {
      const auto& subject = subjects[static_cast<std::size_t>(idx)];
      auto probs = st4d::evaluate_subject(result.best_params, subject.series, f.crop_length);
      predicted.push_back(st4d::argmax_class(probs));
      metrics.probabilities.push_back(std::move(probs));
      metrics.labels.push_back(subject.label);
    }
    const auto m = st4d::compute_metrics(predicted, metrics.labels);
    metrics.accuracy = m.accuracy;
    metrics.f1 = m.f1;
    folds.push_back(metrics);

    const std::string ckpt = "ckpt_fold" + std::to_string(fold) + ".st4d";
    st4d::save_checkpoint(out_dir / ckpt, result.best_params, fold_seed);
    write_text_file(out_dir / ("report_fold" + std::to_string(fold) + ".log"),
                    st4d::format_train_report(result.report));
    std::cout << "fold " << fold << " accuracy " << st4d::format_double(metrics.accuracy)
              << " f1 " << st4d::format_double(metrics.f1) << " (best epoch "
              << metrics.best_epoch << ")\n";
  }

  const std::string summary = st4d::format_fold_summary(folds);
  write_text_file(out_dir / "summary.txt", summary);
  std::cout << summary;
  return kOk;
}

int run_train(const CLI::App* cmd, TrainFlags f) {
  if (!f.from_manifest.empty()) {
    const json flags = load_manifest_flags(f.from_manifest, "train");
    merge_flag(cmd, "--data", flags, "data", f.data);
    merge_flag(cmd, "--out", flags, "out", f.out);
    merge_flag(cmd, "--variant", flags, "variant", f.variant);
    merge_flag(cmd, "--epochs", flags, "epochs", f.epochs);
    merge_flag(cmd, "--batch", flags, "batch", f.batch);
    merge_flag(cmd, "--crop-length", flags, "crop_length", f.crop_length);
    merge_flag(cmd, "--validate-every", flags, "validate_every", f.validate_every);
    merge_flag(cmd, "--lr", flags, "lr", f.lr);
    merge_flag(cmd, "--folds", flags, "folds", f.folds);
    merge_flag(cmd, "--seed", flags, "seed", f.seed);
    merge_flag(cmd, "--workers", flags, "workers", f.workers);
    merge_flag(cmd, "--desk-scale", flags, "desk_scale", f.desk_scale);
    merge_flag(cmd, "--precision", flags, "precision", f.precision);
    merge_flag(cmd, "--temporal-kernel", flags, "temporal_kernel", f.temporal_kernel);
  }
  if (f.data.empty() || f.out.empty()) throw st4d::ConfigError("--data and --out are required");
  if (f.precision != "f32" && f.precision != "f64") {
    throw st4d::ConfigError("--precision must be f32 or f64, got '" + f.precision + "'");
  }

  const auto manifest_path = resolve_manifest_path(f.data);
  const auto subjects = st4d::load_dataset(manifest_path);
  if (subjects.empty()) throw st4d::DataError("dataset is empty");
  {
    std::string short_subjects;
    for (const auto& s : subjects) {
      if (s.series.dim(0) < f.crop_length)
        short_subjects += short_subjects.empty() ? s.id : ", " + s.id;
    }
    if (!short_subjects.empty()) {
      throw st4d::DataError("subjects shorter than crop length " + std::to_string(f.crop_length) +
                            ": " + short_subjects);
    }
  }

  st4d::Shape series_dims = subjects.front().series.dims();
  const st4d::ModelConfig config = make_train_config(f, series_dims);

  const fs::path out_dir(f.out);
  fs::create_directories(out_dir);

  // The run manifest is written before any training happens.
  json manifest;
  manifest["command"] = "train";
  manifest["tool_version"] = st4d::kVersion;
  manifest["seed"] = f.seed;
  manifest["flags"] = {{"data", f.data},
                       {"out", f.out},
                       {"variant", f.variant},
                       {"epochs", f.epochs},
                       {"batch", f.batch},
                       {"crop_length", f.crop_length},
                       {"validate_every", f.validate_every},
                       {"lr", f.lr},
                       {"folds", f.folds},
                       {"seed", f.seed},
                       {"workers", f.workers},
                       {"desk_scale", f.desk_scale},
                       {"precision", f.precision},
                       {"temporal_kernel", f.temporal_kernel}};
  manifest["model_config"] = json::parse(st4d::model_config_to_json(config));
  json artifact_list = json::array();
  for (int fold = 0; fold < f.folds; ++fold) {
    artifact_list.push_back({{"checkpoint", "ckpt_fold" + std::to_string(fold) + ".st4d"},
                             {"report", "report_fold" + std::to_string(fold) + ".log"}});
  }
  manifest["artifacts"] = {{"folds", artifact_list}, {"summary", "summary.txt"}};
  write_text_file(out_dir / "run_manifest.json", manifest.dump(2) + "\n");

  if (f.precision == "f64") return run_train_typed<double>(f, config, subjects, out_dir);
  return run_train_typed<float>(f, config, subjects, out_dir);
}

template <typename T>
int run_eval_typed(const EvalFlags& f, const st4d::CheckpointInfo& info) {
  auto params = st4d::load_checkpoint<T>(f.checkpoint);
  const auto manifest_path = resolve_manifest_path(f.data);
  const auto subjects = st4d::load_dataset(manifest_path);
  if (subjects.empty()) throw st4d::DataError("dataset is empty");

  const auto& dims = subjects.front().series.dims();
  const auto& cfg = info.config;
  if (dims[1] != cfg.input_channels || dims[2] != cfg.input_spatial[0] ||
      dims[3] != cfg.input_spatial[1] || dims[4] != cfg.input_spatial[2]) {
    throw st4d::DataError(
        "checkpoint expects grid [" + std::to_string(cfg.input_channels) + ", " +
        std::to_string(cfg.input_spatial[0]) + ", " + std::to_string(cfg.input_spatial[1]) + ", " +
        std::to_string(cfg.input_spatial[2]) + "], dataset series are " + st4d::shape_str(dims));
  }

  std::vector<std::vector<double>> probs(subjects.size());
  st4d::parallel_for(static_cast<int>(subjects.size()), f.workers, [&](int i) {
    probs[static_cast<std::size_t>(i)] = st4d::evaluate_subject(
        params, subjects[static_cast<std::size_t>(i)].series, cfg.crop_length);
  });

  std::vector<int> predicted, labels;
  std::string out = "subjects " + std::to_string(subjects.size()) + "\n";
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    const auto& s = subjects[i];
    predicted.push_back(st4d::argmax_class(probs[i]));
    labels.push_back(s.label);
    out += "subject." + s.id + ".label " + std::to_string(s.label) + "\n";
    for (std::size_t k = 0; k < probs[i].size(); ++k) {
      out += "subject." + s.id + ".prob." + std::to_string(k) + " " +
             st4d::format_double(probs[i][k]) + "\n";
    }
    out += "subject." + s.id + ".pred " + std::to_string(predicted.back()) + "\n";
  }
  const auto m = st4d::compute_metrics(predicted, labels);
  out += "accuracy " + st4d::format_double(m.accuracy) + "\n";
  out += "f1 " + st4d::format_double(m.f1) + "\n";

  std::cout << out;
  if (!f.out.empty()) write_text_file(f.out, out);
  return kOk;
}

int run_eval(const CLI::App* cmd, EvalFlags f) {
  if (!f.from_manifest.empty()) {
    const json flags = load_manifest_flags(f.from_manifest, "eval");
    merge_flag(cmd, "--checkpoint", flags, "checkpoint", f.checkpoint);
    merge_flag(cmd, "--data", flags, "data", f.data);
    merge_flag(cmd, "--out", flags, "out", f.out);
    merge_flag(cmd, "--workers", flags, "workers", f.workers);
  }
  if (f.checkpoint.empty() || f.data.empty()) {
    throw st4d::ConfigError("--checkpoint and --data are required");
  }
  const auto info = st4d::read_checkpoint_info(f.checkpoint);
  if (!f.out.empty()) {
    json manifest;
    manifest["command"] = "eval";
    manifest["tool_version"] = st4d::kVersion;
    manifest["seed"] = info.seed;
    manifest["flags"] = {{"checkpoint", f.checkpoint},
                         {"data", f.data},
                         {"out", f.out},
                         {"workers", f.workers}};
    write_text_file(f.out + ".manifest.json", manifest.dump(2) + "\n");
  }
  if (info.dtype == st4d::DType::kF64) return run_eval_typed<double>(f, info);
  return run_eval_typed<float>(f, info);
}

int run_gradcheck(const GradcheckFlags& f) {
  st4d::GradCheckOptions options;
  options.seed = f.seed;
  options.samples_per_tensor = f.samples;
  options.tolerance = f.tolerance;
  const auto results = st4d::run_gradcheck(f.components, options);
  bool all_pass = true;
  for (const auto& r : results) {
    std::printf("%-14s max_rel_err %.3e  %s\n", r.component.c_str(), r.max_rel_err,
                r.pass ? "PASS" : "FAIL");
    all_pass = all_pass && r.pass;
  }
  std::printf("overall: %s\n", all_pass ? "PASS" : "FAIL");
  return all_pass ? kOk : kGradcheckFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"4-D spatio-temporal sequence classifier (3DCNN + bidirectional C-LSTM)"};
  app.set_version_flag("--version", std::string("st4d ") + st4d::kVersion);
  app.require_subcommand(1);

  GenerateFlags gen;
  auto* cmd_gen = app.add_subcommand("generate", "Generate a synthetic 4-D dataset");
  cmd_gen->add_option("--out", gen.out, "Output directory");
  cmd_gen->add_option("--subjects", gen.subjects, "Cohort size (labels alternate)");
  cmd_gen->add_option("--mode", gen.mode, "spatial | temporal | spatiotemporal");
  cmd_gen->add_option("--grid", gen.grid, "Spatial extents D H W")->expected(3);
  cmd_gen->add_option("--channels", gen.channels, "Channels per volume");
  cmd_gen->add_option("--t-min", gen.t_min, "Minimum series length");
  cmd_gen->add_option("--t-max", gen.t_max, "Maximum series length");
  cmd_gen->add_option("--snr", gen.snr, "Signal amplitude over unit noise");
  cmd_gen->add_option("--sites", gen.sites, "Number of synthetic sites");
  cmd_gen->add_option("--site-shift", gen.site_shift, "Intensity offset per site index");
  cmd_gen->add_option("--seed", gen.seed, "Generation seed");
  cmd_gen->add_flag("--force", gen.force, "Write into a non-empty directory");
  cmd_gen->add_option("--from-manifest", gen.from_manifest, "Re-run from a run_manifest.json");

  TrainFlags tr;
  auto* cmd_tr = app.add_subcommand("train", "Train with k-fold cross validation");
  cmd_tr->add_option("--data", tr.data, "Dataset manifest.csv (or its directory)");
  cmd_tr->add_option("--out", tr.out, "Output directory for checkpoints and reports");
  cmd_tr->add_option("--variant", tr.variant, "clstm | conv1d");
  cmd_tr->add_option("--epochs", tr.epochs, "Training epochs");
  cmd_tr->add_option("--batch", tr.batch, "Batch size");
  cmd_tr->add_option("--crop-length", tr.crop_length, "Temporal crop length")
      ->check(CLI::PositiveNumber);
  cmd_tr->add_option("--validate-every", tr.validate_every, "Validation cadence in epochs");
  cmd_tr->add_option("--lr", tr.lr, "Adam learning rate");
  cmd_tr->add_option("--folds", tr.folds, "Cross-validation folds");
  cmd_tr->add_option("--seed", tr.seed, "Run seed");
  cmd_tr->add_option("--workers", tr.workers, "Concurrent per-sample workers");
  cmd_tr->add_flag("--desk-scale", tr.desk_scale, "Reduced CPU-sized architecture");
  cmd_tr->add_option("--precision", tr.precision, "f32 | f64");
  cmd_tr->add_option("--temporal-kernel", tr.temporal_kernel,
                     "conv1d variant temporal kernel (odd; 1 disables temporal mixing)");
  cmd_tr->add_option("--from-manifest", tr.from_manifest, "Re-run from a run_manifest.json");

  EvalFlags ev;
  auto* cmd_ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  cmd_ev->add_option("--checkpoint", ev.checkpoint, "Checkpoint file");
  cmd_ev->add_option("--data", ev.data, "Dataset manifest.csv (or its directory)");
  cmd_ev->add_option("--out", ev.out, "Summary output file");
  cmd_ev->add_option("--workers", ev.workers, "Concurrent subject workers");
  cmd_ev->add_option("--from-manifest", ev.from_manifest, "Re-run from a manifest");

  GradcheckFlags gc;
  auto* cmd_gc = app.add_subcommand("gradcheck", "Finite-difference gradient verification");
  cmd_gc->add_option("--component", gc.components, "Restrict to named components");
  cmd_gc->add_option("--seed", gc.seed, "Instance seed");
  cmd_gc->add_option("--samples", gc.samples, "Probes per tensor");
  cmd_gc->add_option("--tolerance", gc.tolerance, "Max relative error");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help / --version
    app.exit(e);
    return kConfigError;
  }

  try {
    if (cmd_gen->parsed()) return run_generate(cmd_gen, gen);
    if (cmd_tr->parsed()) return run_train(cmd_tr, tr);
    if (cmd_ev->parsed()) return run_eval(cmd_ev, ev);
    if (cmd_gc->parsed()) return run_gradcheck(gc);
  } catch (const st4d::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const st4d::FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kDataError;
  } catch (const st4d::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const st4d::DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return kDivergence;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid argument: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUnexpected;
  }
  return kUnexpected;
}
