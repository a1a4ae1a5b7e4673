#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "st4d/errors.hpp"
#include "st4d/model.hpp"
#include "st4d/tensor.hpp"

namespace st4d {

// ---- ST4D tensor container ----
//
// Layout, all integers little-endian:
//   magic "ST4D" | version u16 | entry count u32 | entries...
// Entry:
//   name length u16 | name bytes | dtype u8 (0=f32, 1=f64) | rank u8 |
//   extents u32 x rank | raw scalar data

enum class DType : std::uint8_t { kF32 = 0, kF64 = 1 };

inline std::size_t dtype_size(DType d) { return d == DType::kF32 ? 4 : 8; }

struct TensorEntry {
  std::string name;
  DType dtype = DType::kF32;
  Shape dims;
  std::vector<std::uint8_t> raw;  // little-endian scalars

  static TensorEntry from(const std::string& name, const Tensorf& t);
  static TensorEntry from(const std::string& name, const Tensord& t);

  // Strict: the stored dtype must match T.
  template <typename T>
  TensorT<T> to() const;

  // Converts f32<->f64 as needed.
  Tensorf as_f32() const;
  Tensord as_f64() const;
};

void write_tensor_file(const std::filesystem::path& path, const std::vector<TensorEntry>& entries);
std::vector<TensorEntry> read_tensor_file(const std::filesystem::path& path);

// In-memory codec used by the file functions (and fuzz-style tests).
std::vector<std::uint8_t> encode_tensor_container(const std::vector<TensorEntry>& entries);
std::vector<TensorEntry> decode_tensor_container(const std::vector<std::uint8_t>& bytes);

struct TensorEntryInfo {
  std::string name;
  DType dtype = DType::kF32;
  Shape dims;
};

// Header-only scan: validates structure and skips payloads.
std::vector<TensorEntryInfo> read_tensor_file_info(const std::filesystem::path& path);

// ---- subjects and manifests ----

struct SubjectRecord {
  std::string id;
  Tensorf series;  // [T, C, D, H, W]
  int label = 0;   // 0 or 1
  std::string site;
};

struct ManifestEntry {
  std::string subject_id;
  std::filesystem::path tensor_file;  // resolved against the manifest directory
  int label = 0;
  std::string site;
  Shape series_dims;  // [T, C, D, H, W]
};

// Parses and validates manifest.csv (columns subject_id,tensor_file,label,site).
// Reads every referenced file's headers; reports all offending rows at once.
std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path);

SubjectRecord load_subject(const ManifestEntry& entry);
std::vector<SubjectRecord> load_dataset(const std::filesystem::path& manifest_path);

// Writes <id>.st4d files plus manifest.csv into an existing directory.
void write_dataset(const std::filesystem::path& dir, const std::vector<SubjectRecord>& records);

// ---- synthetic generation ----

enum class SignalMode { kSpatial, kTemporal, kSpatiotemporal };

std::string signal_mode_name(SignalMode m);
SignalMode signal_mode_from_name(const std::string& name);

struct SyntheticSpec {
  int subjects = 40;  // labels alternate 0,1,0,1,...
  std::array<int, 3> spatial{12, 14, 12};
  int channels = 1;
  int t_min = 60;
  int t_max = 120;
  SignalMode mode = SignalMode::kSpatiotemporal;
  double snr = 3.0;  // signal amplitude relative to unit background noise
  int sites = 1;
  double site_shift = 0.0;  // constant intensity offset per site index
  std::uint64_t seed = 0;
};

// Deterministic cohort: smooth unit-variance background noise everywhere, plus
// a class signal per mode:
//   SPATIAL         class 1 carries a static blob at the volume center
//   TEMPORAL        global oscillation, frequency differs by class
//   SPATIOTEMPORAL  a blob orbits the volume center; direction differs by
//                   class, phase is random, so per-timestep statistics match
//                   across classes and only the ordering separates them
std::vector<SubjectRecord> generate(const SyntheticSpec& spec);

// ---- checkpoints ----
//
// "STCK" | version u16 | seed u64 | config JSON length u32 | JSON bytes |
// embedded ST4D container with one entry per parameter path.

std::string model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const std::string& json);

struct CheckpointInfo {
  ModelConfig config;
  std::uint64_t seed = 0;
  DType dtype = DType::kF32;
};

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ModelParamsT<T>& params,
                     std::uint64_t seed);

CheckpointInfo read_checkpoint_info(const std::filesystem::path& path);

template <typename T>
ModelParamsT<T> load_checkpoint(const std::filesystem::path& path);

}  // namespace st4d
