#include "st4d/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "st4d/rng.hpp"

namespace st4d {

namespace {

constexpr char kMagic[4] = {'S', 'T', '4', 'D'};
constexpr std::uint16_t kFormatVersion = 1;
constexpr char kCheckpointMagic[4] = {'S', 'T', 'C', 'K'};
constexpr std::uint16_t kCheckpointVersion = 1;

void put_u16(std::vector<std::uint8_t>& b, std::uint16_t v) {
  b.push_back(static_cast<std::uint8_t>(v & 0xff));
  b.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

void put_u64(std::vector<std::uint8_t>& b, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) b.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

struct Cursor {
  const std::uint8_t* p;
  std::size_t n;
  std::size_t off = 0;

  void need(std::size_t k, const std::string& what) {
    if (off + k > n) throw FormatError("truncated while reading " + what, off);
  }
  std::uint8_t u8(const std::string& what) {
    need(1, what);
    return p[off++];
  }
  std::uint16_t u16(const std::string& what) {
    need(2, what);
    std::uint16_t v = static_cast<std::uint16_t>(p[off] | (p[off + 1] << 8));
    off += 2;
    return v;
  }
  std::uint32_t u32(const std::string& what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[off + i]) << (8 * i);
    off += 4;
    return v;
  }
  std::uint64_t u64(const std::string& what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[off + i]) << (8 * i);
    off += 8;
    return v;
  }
  void bytes(void* dst, std::size_t k, const std::string& what) {
    need(k, what);
    std::memcpy(dst, p + off, k);
    off += k;
  }
};

// Shared header walk for the full decoder and the header-only scan.
struct EntryHeader {
  std::string name;
  DType dtype;
  Shape dims;
  std::size_t data_bytes;
};

EntryHeader decode_entry_header(Cursor& c, std::set<std::string>& seen) {
  const std::size_t name_off = c.off;
  const std::uint16_t name_len = c.u16("entry name length");
  if (name_len == 0) throw FormatError("empty entry name", name_off);
  EntryHeader h;
  h.name.resize(name_len);
  c.bytes(h.name.data(), name_len, "entry name");
  if (!seen.insert(h.name).second) {
    throw FormatError("duplicate entry name '" + h.name + "'", name_off);
  }
  const std::size_t dtype_off = c.off;
  const std::uint8_t dtype = c.u8("dtype code");
  if (dtype > 1) {
    throw FormatError("unknown dtype code " + std::to_string(dtype), dtype_off);
  }
  h.dtype = static_cast<DType>(dtype);
  const std::size_t rank_off = c.off;
  const std::uint8_t rank = c.u8("rank");
  if (rank < 1 || rank > kMaxRank) {
    throw FormatError("rank " + std::to_string(rank) + " outside 1.." + std::to_string(kMaxRank),
                      rank_off);
  }
  for (int i = 0; i < rank; ++i) {
    const std::size_t dim_off = c.off;
    const std::uint32_t d = c.u32("extent");
    if (d == 0 || d > 0x7fffffffu) throw FormatError("invalid extent " + std::to_string(d), dim_off);
    h.dims.push_back(static_cast<int>(d));
  }
  std::size_t volume = 0;
  try {
    volume = shape_volume(h.dims);
  } catch (const std::invalid_argument& e) {
    throw FormatError(e.what(), rank_off);
  }
  h.data_bytes = volume * dtype_size(h.dtype);
  return h;
}

void validate_entries_for_write(const std::vector<TensorEntry>& entries) {
  std::set<std::string> seen;
  for (const auto& e : entries) {
    if (e.name.empty()) throw std::invalid_argument("tensor entry name must be non-empty");
    if (e.name.size() > 0xffff) throw std::invalid_argument("tensor entry name too long");
    if (!seen.insert(e.name).second) {
      throw std::invalid_argument("duplicate tensor entry name '" + e.name + "'");
    }
    if (shape_volume(e.dims) * dtype_size(e.dtype) != e.raw.size()) {
      throw std::invalid_argument("entry '" + e.name + "' raw size " +
                                  std::to_string(e.raw.size()) + " does not match shape " +
                                  shape_str(e.dims));
    }
  }
  if (entries.size() > 0xffffffffu) throw std::invalid_argument("too many tensor entries");
}

}  // namespace

TensorEntry TensorEntry::from(const std::string& name, const Tensorf& t) {
  TensorEntry e;
  e.name = name;
  e.dtype = DType::kF32;
  e.dims = t.dims();
  e.raw.resize(t.size() * 4);
  std::memcpy(e.raw.data(), t.data(), e.raw.size());
  return e;
}

TensorEntry TensorEntry::from(const std::string& name, const Tensord& t) {
  TensorEntry e;
  e.name = name;
  e.dtype = DType::kF64;
  e.dims = t.dims();
  e.raw.resize(t.size() * 8);
  std::memcpy(e.raw.data(), t.data(), e.raw.size());
  return e;
}

template <>
Tensorf TensorEntry::to<float>() const {
  if (dtype != DType::kF32) throw std::invalid_argument("entry '" + name + "' is not f32");
  Tensorf t(dims);
  std::memcpy(t.data(), raw.data(), raw.size());
  return t;
}

template <>
Tensord TensorEntry::to<double>() const {
  if (dtype != DType::kF64) throw std::invalid_argument("entry '" + name + "' is not f64");
  Tensord t(dims);
  std::memcpy(t.data(), raw.data(), raw.size());
  return t;
}

Tensorf TensorEntry::as_f32() const {
  return dtype == DType::kF32 ? to<float>() : to<double>().cast<float>();
}

Tensord TensorEntry::as_f64() const {
  return dtype == DType::kF64 ? to<double>() : to<float>().cast<double>();
}

std::vector<std::uint8_t> encode_tensor_container(const std::vector<TensorEntry>& entries) {
  validate_entries_for_write(entries);
  std::vector<std::uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + 4);
  put_u16(out, kFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    put_u16(out, static_cast<std::uint16_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    out.push_back(static_cast<std::uint8_t>(e.dtype));
    out.push_back(static_cast<std::uint8_t>(e.dims.size()));
    for (int d : e.dims) put_u32(out, static_cast<std::uint32_t>(d));
    out.insert(out.end(), e.raw.begin(), e.raw.end());
  }
  return out;
}

std::vector<TensorEntry> decode_tensor_container(const std::vector<std::uint8_t>& bytes) {
  Cursor c{bytes.data(), bytes.size()};
  char magic[4];
  c.bytes(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("bad magic, expected ST4D", 0);
  const std::size_t version_off = c.off;
  const std::uint16_t version = c.u16("format version");
  if (version != kFormatVersion) {
    throw FormatError("unsupported format version " + std::to_string(version), version_off);
  }
  const std::uint32_t count = c.u32("entry count");
  std::vector<TensorEntry> entries;
  std::set<std::string> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    EntryHeader h = decode_entry_header(c, seen);
    TensorEntry e;
    e.name = std::move(h.name);
    e.dtype = h.dtype;
    e.dims = std::move(h.dims);
    e.raw.resize(h.data_bytes);
    c.bytes(e.raw.data(), h.data_bytes, "tensor data of '" + e.name + "'");
    entries.push_back(std::move(e));
  }
  if (c.off != bytes.size()) {
    throw FormatError("trailing bytes after last entry", c.off);
  }
  return entries;
}

namespace {

std::vector<std::uint8_t> read_all_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return bytes;
}

}  // namespace

void write_tensor_file(const std::filesystem::path& path, const std::vector<TensorEntry>& entries) {
  const auto bytes = encode_tensor_container(entries);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for '" + path.string() + "'");
}

std::vector<TensorEntry> read_tensor_file(const std::filesystem::path& path) {
  return decode_tensor_container(read_all_bytes(path));
}

std::vector<TensorEntryInfo> read_tensor_file_info(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  const std::uint64_t file_size = std::filesystem::file_size(path);

  std::size_t off = 0;
  auto read_exact = [&](void* dst, std::size_t k, const std::string& what) {
    if (off + k > file_size) throw FormatError("truncated while reading " + what, off);
    in.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(k));
    if (static_cast<std::size_t>(in.gcount()) != k) {
      throw FormatError("truncated while reading " + what, off);
    }
    off += k;
  };
  char magic[4];
  read_exact(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("bad magic, expected ST4D", 0);
  std::uint8_t buf[8];
  const std::size_t version_off = off;
  read_exact(buf, 2, "format version");
  const std::uint16_t version = static_cast<std::uint16_t>(buf[0] | (buf[1] << 8));
  if (version != kFormatVersion) {
    throw FormatError("unsupported format version " + std::to_string(version), version_off);
  }
  read_exact(buf, 4, "entry count");
  std::uint32_t count = 0;
  for (int i = 0; i < 4; ++i) count |= static_cast<std::uint32_t>(buf[i]) << (8 * i);

  std::vector<TensorEntryInfo> info;
  std::set<std::string> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t name_off = off;
    read_exact(buf, 2, "entry name length");
    const std::uint16_t name_len = static_cast<std::uint16_t>(buf[0] | (buf[1] << 8));
    if (name_len == 0) throw FormatError("empty entry name", name_off);
    std::string name(name_len, '\0');
    read_exact(name.data(), name_len, "entry name");
    if (!seen.insert(name).second) {
      throw FormatError("duplicate entry name '" + name + "'", name_off);
    }
    const std::size_t dtype_off = off;
    read_exact(buf, 1, "dtype code");
    if (buf[0] > 1) throw FormatError("unknown dtype code " + std::to_string(buf[0]), dtype_off);
    const DType dtype = static_cast<DType>(buf[0]);
    const std::size_t rank_off = off;
    read_exact(buf, 1, "rank");
    const std::uint8_t rank = buf[0];
    if (rank < 1 || rank > kMaxRank) {
      throw FormatError("rank " + std::to_string(rank) + " outside 1.." + std::to_string(kMaxRank),
                        rank_off);
    }
    Shape dims;
    for (int d = 0; d < rank; ++d) {
      const std::size_t dim_off = off;
      read_exact(buf, 4, "extent");
      std::uint32_t v = 0;
      for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(buf[b]) << (8 * b);
      if (v == 0 || v > 0x7fffffffu) {
        throw FormatError("invalid extent " + std::to_string(v), dim_off);
      }
      dims.push_back(static_cast<int>(v));
    }
    std::size_t volume = 0;
    try {
      volume = shape_volume(dims);
    } catch (const std::invalid_argument& e) {
      throw FormatError(e.what(), rank_off);
    }
    const std::size_t data_bytes = volume * dtype_size(dtype);
    if (off + data_bytes > file_size) {
      throw FormatError("truncated while reading tensor data of '" + name + "'", off);
    }
    in.seekg(static_cast<std::streamoff>(data_bytes), std::ios::cur);
    off += data_bytes;
    info.push_back({std::move(name), dtype, std::move(dims)});
  }
  if (off != file_size) throw FormatError("trailing bytes after last entry", off);
  return info;
}

// ---- manifests ----

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  fields.push_back(cur);
  return fields;
}

std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

}  // namespace

std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest '" + path.string() + "'");
  const auto dir = path.parent_path();

  std::string line;
  if (!std::getline(in, line)) throw DataError("manifest '" + path.string() + "' is empty");
  if (strip_cr(line) != "subject_id,tensor_file,label,site") {
    throw DataError("manifest header must be 'subject_id,tensor_file,label,site', got '" +
                    strip_cr(line) + "'");
  }

  std::vector<ManifestEntry> entries;
  std::vector<std::string> problems;
  std::set<std::string> seen_ids;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    line = strip_cr(line);
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != 4 || fields[0].empty()) {
      problems.push_back("row " + std::to_string(row) + ": expected 4 fields, got '" + line + "'");
      continue;
    }
    ManifestEntry e;
    e.subject_id = fields[0];
    e.tensor_file = dir / fields[1];
    e.site = fields[3];
    if (fields[2] != "0" && fields[2] != "1") {
      problems.push_back("subject " + e.subject_id + ": label '" + fields[2] +
                         "' is not 0 or 1");
      continue;
    }
    e.label = fields[2] == "1" ? 1 : 0;
    if (!seen_ids.insert(e.subject_id).second) {
      problems.push_back("duplicate subject id '" + e.subject_id + "'");
      continue;
    }
    if (!std::filesystem::exists(e.tensor_file)) {
      problems.push_back("subject " + e.subject_id + ": missing tensor file '" +
                         e.tensor_file.string() + "'");
      continue;
    }
    try {
      const auto info = read_tensor_file_info(e.tensor_file);
      const auto it = std::find_if(info.begin(), info.end(),
                                   [](const TensorEntryInfo& i) { return i.name == "series"; });
      if (it == info.end()) {
        problems.push_back("subject " + e.subject_id + ": no 'series' entry in '" +
                           e.tensor_file.string() + "'");
        continue;
      }
      if (it->dims.size() != 5) {
        problems.push_back("subject " + e.subject_id + ": series must be [T,C,D,H,W], got " +
                           shape_str(it->dims));
        continue;
      }
      e.series_dims = it->dims;
    } catch (const std::exception& ex) {
      problems.push_back("subject " + e.subject_id + ": " + ex.what());
      continue;
    }
    entries.push_back(std::move(e));
  }

  // All series in one dataset share (C, D, H, W); T may differ.
  const ManifestEntry* ref = entries.empty() ? nullptr : &entries.front();
  for (const auto& e : entries) {
    if (!std::equal(e.series_dims.begin() + 1, e.series_dims.end(),
                    ref->series_dims.begin() + 1)) {
      problems.push_back("subject " + e.subject_id + ": series shape " +
                         shape_str(e.series_dims) + " differs from subject " + ref->subject_id +
                         " " + shape_str(ref->series_dims));
    }
  }

  if (!problems.empty()) {
    std::string msg = "manifest '" + path.string() + "' has " +
                      std::to_string(problems.size()) + " problem(s):";
    for (const auto& p : problems) msg += "\n  - " + p;
    throw DataError(msg);
  }
  return entries;
}

SubjectRecord load_subject(const ManifestEntry& entry) {
  const auto entries = read_tensor_file(entry.tensor_file);
  const auto it = std::find_if(entries.begin(), entries.end(),
                               [](const TensorEntry& e) { return e.name == "series"; });
  if (it == entries.end()) {
    throw DataError("no 'series' entry in '" + entry.tensor_file.string() + "'");
  }
  return {entry.subject_id, it->as_f32(), entry.label, entry.site};
}

std::vector<SubjectRecord> load_dataset(const std::filesystem::path& manifest_path) {
  std::vector<SubjectRecord> records;
  for (const auto& e : load_manifest(manifest_path)) records.push_back(load_subject(e));
  return records;
}

void write_dataset(const std::filesystem::path& dir, const std::vector<SubjectRecord>& records) {
  if (records.empty()) throw std::invalid_argument("no subject records to write");
  std::set<std::string> seen;
  for (const auto& r : records) {
    if (!seen.insert(r.id).second) throw std::invalid_argument("duplicate subject id " + r.id);
  }
  std::filesystem::create_directories(dir);
  std::string manifest = "subject_id,tensor_file,label,site\n";
  for (const auto& r : records) {
    const std::string file = r.id + ".st4d";
    write_tensor_file(dir / file, {TensorEntry::from("series", r.series)});
    manifest += r.id + "," + file + "," + std::to_string(r.label) + "," + r.site + "\n";
  }
  std::ofstream out(dir / "manifest.csv", std::ios::trunc);
  if (!out) throw DataError("cannot write manifest in '" + dir.string() + "'");
  out << manifest;
}

// ---- synthetic generation ----

std::string signal_mode_name(SignalMode m) {
  switch (m) {
    case SignalMode::kSpatial:
      return "spatial";
    case SignalMode::kTemporal:
      return "temporal";
    case SignalMode::kSpatiotemporal:
      return "spatiotemporal";
  }
  return "?";
}

SignalMode signal_mode_from_name(const std::string& name) {
  if (name == "spatial") return SignalMode::kSpatial;
  if (name == "temporal") return SignalMode::kTemporal;
  if (name == "spatiotemporal") return SignalMode::kSpatiotemporal;
  throw std::invalid_argument("unknown signal mode '" + name +
                              "' (expected spatial, temporal or spatiotemporal)");
}

namespace {

constexpr double kBlobSigma = 1.0;
constexpr double kBlobCutoff = 3.0;
constexpr double kOrbitPeriod = 16.0;

// One (1,2,1)/4 pass along each spatial axis, zero beyond the borders,
// rescaled so interior voxels keep unit variance.
void smooth_volume(float* v, int D, int H, int W, std::vector<float>& scratch) {
  const std::size_t n = static_cast<std::size_t>(D) * H * W;
  scratch.resize(n);
  auto idx = [&](int z, int y, int x) {
    return (static_cast<std::size_t>(z) * H + y) * W + x;
  };
  for (int z = 0; z < D; ++z)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        float acc = 2.0f * v[idx(z, y, x)];
        if (z > 0) acc += v[idx(z - 1, y, x)];
        if (z + 1 < D) acc += v[idx(z + 1, y, x)];
        scratch[idx(z, y, x)] = 0.25f * acc;
      }
  for (int z = 0; z < D; ++z)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        float acc = 2.0f * scratch[idx(z, y, x)];
        if (y > 0) acc += scratch[idx(z, y - 1, x)];
        if (y + 1 < H) acc += scratch[idx(z, y + 1, x)];
        v[idx(z, y, x)] = 0.25f * acc;
      }
  for (int z = 0; z < D; ++z)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        float acc = 2.0f * v[idx(z, y, x)];
        if (x > 0) acc += v[idx(z, y, x - 1)];
        if (x + 1 < W) acc += v[idx(z, y, x + 1)];
        scratch[idx(z, y, x)] = 0.25f * acc;
      }
  const float rescale = static_cast<float>(std::pow(16.0 / 6.0, 1.5));
  for (std::size_t i = 0; i < n; ++i) v[i] = scratch[i] * rescale;
}

void add_blob(float* v, int D, int H, int W, double cd, double ch, double cw, double amplitude) {
  const int zlo = std::max(0, static_cast<int>(std::ceil(cd - kBlobCutoff)));
  const int zhi = std::min(D - 1, static_cast<int>(std::floor(cd + kBlobCutoff)));
  const int ylo = std::max(0, static_cast<int>(std::ceil(ch - kBlobCutoff)));
  const int yhi = std::min(H - 1, static_cast<int>(std::floor(ch + kBlobCutoff)));
  const int xlo = std::max(0, static_cast<int>(std::ceil(cw - kBlobCutoff)));
  const int xhi = std::min(W - 1, static_cast<int>(std::floor(cw + kBlobCutoff)));
  for (int z = zlo; z <= zhi; ++z)
    for (int y = ylo; y <= yhi; ++y)
      for (int x = xlo; x <= xhi; ++x) {
        const double dz = z - cd, dy = y - ch, dx = x - cw;
        const double d2 = dz * dz + dy * dy + dx * dx;
        if (d2 > kBlobCutoff * kBlobCutoff) continue;
        v[(static_cast<std::size_t>(z) * H + y) * W + x] +=
            static_cast<float>(amplitude * std::exp(-d2 / (2.0 * kBlobSigma * kBlobSigma)));
      }
}

}  // namespace

std::vector<SubjectRecord> generate(const SyntheticSpec& spec) {
  if (spec.subjects < 4) {
    throw std::invalid_argument("need at least 2 subjects per class, got " +
                                std::to_string(spec.subjects) + " total");
  }
  if (spec.snr <= 0.0) throw std::invalid_argument("snr must be > 0");
  if (spec.channels < 1) throw std::invalid_argument("channels must be >= 1");
  if (spec.t_min < 1 || spec.t_max < spec.t_min) {
    throw std::invalid_argument("bad T range [" + std::to_string(spec.t_min) + ", " +
                                std::to_string(spec.t_max) + "]");
  }
  if (spec.sites < 1) throw std::invalid_argument("sites must be >= 1");
  const int D = spec.spatial[0], H = spec.spatial[1], W = spec.spatial[2];
  for (int e : spec.spatial) {
    if (e < 4) throw std::invalid_argument("spatial extents must be >= 4, got " + shape_str({D, H, W}));
  }
  const double orbit_center_h = (H - 1) / 2.0;
  const double orbit_center_w = (W - 1) / 2.0;
  const double radius =
      std::min(orbit_center_h, orbit_center_w) - kBlobCutoff - 0.5;
  if (spec.mode == SignalMode::kSpatiotemporal && radius < 1.0) {
    throw std::invalid_argument("grid " + shape_str({D, H, W}) +
                                " too small for a drifting blob orbit");
  }

  std::vector<SubjectRecord> records;
  records.reserve(static_cast<std::size_t>(spec.subjects));
  const std::size_t plane = static_cast<std::size_t>(D) * H * W;
  std::vector<float> scratch;

  for (int i = 0; i < spec.subjects; ++i) {
    Rng rng(derive_seed(spec.seed, 0x5347454eULL, static_cast<std::uint64_t>(i)));
    const int label = i % 2;
    const int site_index = (i / 2) % spec.sites;
    const int steps = static_cast<int>(rng.uniform_int(spec.t_min, spec.t_max));

    SubjectRecord rec;
    char idbuf[16];
    std::snprintf(idbuf, sizeof(idbuf), "sub%03d", i);
    rec.id = idbuf;
    rec.label = label;
    rec.site = "site" + std::to_string(site_index);
    rec.series = Tensorf({steps, spec.channels, D, H, W});

    for (std::size_t s = 0; s < rec.series.size(); ++s)
      rec.series[s] = static_cast<float>(rng.normal());
    for (int t = 0; t < steps; ++t)
      for (int c = 0; c < spec.channels; ++c)
        smooth_volume(rec.series.data() + (static_cast<std::size_t>(t) * spec.channels + c) * plane,
                      D, H, W, scratch);

    const double phase = rng.uniform();
    const double amp = spec.snr;
    for (int t = 0; t < steps; ++t) {
      for (int c = 0; c < spec.channels; ++c) {
        float* vol =
            rec.series.data() + (static_cast<std::size_t>(t) * spec.channels + c) * plane;
        switch (spec.mode) {
          case SignalMode::kSpatial:
            if (label == 1) {
              add_blob(vol, D, H, W, (D - 1) / 2.0, orbit_center_h, orbit_center_w, amp);
            }
            break;
          case SignalMode::kTemporal: {
            const double freq = label == 0 ? 1.0 / 16.0 : 1.0 / 8.0;
            const float shift = static_cast<float>(
                amp * std::sin(2.0 * 3.14159265358979323846 * (freq * t + phase)));
            for (std::size_t s = 0; s < plane; ++s) vol[s] += shift;
            break;
          }
          case SignalMode::kSpatiotemporal: {
            const double direction = label == 0 ? 1.0 : -1.0;
            const double theta =
                2.0 * 3.14159265358979323846 * (direction * t / kOrbitPeriod + phase);
            add_blob(vol, D, H, W, (D - 1) / 2.0, orbit_center_h + radius * std::cos(theta),
                     orbit_center_w + radius * std::sin(theta), amp);
            break;
          }
        }
        if (spec.site_shift != 0.0) {
          const float shift = static_cast<float>(site_index * spec.site_shift);
          for (std::size_t s = 0; s < plane; ++s) vol[s] += shift;
        }
      }
    }
    records.push_back(std::move(rec));
  }
  return records;
}

// ---- model config JSON / checkpoints ----

std::string model_config_to_json(const ModelConfig& config) {
  nlohmann::json j;
  j["variant"] = variant_name(config.variant);
  j["input_spatial"] = config.input_spatial;
  j["input_channels"] = config.input_channels;
  j["crop_length"] = config.crop_length;
  auto layers_to_json = [](const std::vector<ConvLayerSpec>& layers) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& l : layers) {
      arr.push_back({{"out_channels", l.out_channels},
                     {"kernel", l.kernel},
                     {"stride", l.stride},
                     {"padding", l.padding},
                     {"dropout", l.dropout}});
    }
    return arr;
  };
  j["spatial_cnn"] = layers_to_json(config.spatial_cnn);
  j["clstm_hidden"] = config.clstm_hidden;
  j["clstm_layers"] = config.clstm_layers;
  j["clstm_kernel"] = config.clstm_kernel;
  j["head_cnn"] = layers_to_json(config.head_cnn);
  j["temporal_channels"] = config.temporal_channels;
  j["temporal_kernel"] = config.temporal_kernel;
  j["num_classes"] = config.num_classes;
  return j.dump();
}

ModelConfig model_config_from_json(const std::string& json) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad model config JSON: ") + e.what());
  }
  try {
    ModelConfig c;
    c.variant = variant_from_name(j.at("variant").get<std::string>());
    const auto sp = j.at("input_spatial");
    c.input_spatial = {sp.at(0).get<int>(), sp.at(1).get<int>(), sp.at(2).get<int>()};
    c.input_channels = j.at("input_channels").get<int>();
    c.crop_length = j.at("crop_length").get<int>();
    auto layers_from_json = [](const nlohmann::json& arr) {
      std::vector<ConvLayerSpec> layers;
      for (const auto& l : arr) {
        layers.push_back({l.at("out_channels").get<int>(), l.at("kernel").get<int>(),
                          l.at("stride").get<int>(), l.at("padding").get<int>(),
                          l.at("dropout").get<double>()});
      }
      return layers;
    };
    c.spatial_cnn = layers_from_json(j.at("spatial_cnn"));
    c.clstm_hidden = j.at("clstm_hidden").get<int>();
    c.clstm_layers = j.at("clstm_layers").get<int>();
    c.clstm_kernel = j.at("clstm_kernel").get<int>();
    c.head_cnn = layers_from_json(j.at("head_cnn"));
    c.temporal_channels = j.at("temporal_channels").get<int>();
    c.temporal_kernel = j.at("temporal_kernel").get<int>();
    c.num_classes = j.at("num_classes").get<int>();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad model config JSON: ") + e.what());
  }
}

namespace {

struct CheckpointHeader {
  ModelConfig config;
  std::uint64_t seed;
  std::size_t container_offset;
};

CheckpointHeader parse_checkpoint_header(const std::vector<std::uint8_t>& bytes) {
  Cursor c{bytes.data(), bytes.size()};
  char magic[4];
  c.bytes(magic, 4, "checkpoint magic");
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw FormatError("bad magic, expected STCK", 0);
  }
  const std::size_t version_off = c.off;
  const std::uint16_t version = c.u16("checkpoint version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version), version_off);
  }
  CheckpointHeader h;
  h.seed = c.u64("seed");
  const std::uint32_t json_len = c.u32("config length");
  std::string json(json_len, '\0');
  c.bytes(json.data(), json_len, "config JSON");
  h.config = model_config_from_json(json);
  h.container_offset = c.off;
  return h;
}

}  // namespace

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ModelParamsT<T>& params,
                     std::uint64_t seed) {
  std::vector<TensorEntry> entries;
  params.for_each([&](const std::string& p, const TensorT<T>& t) {
    entries.push_back(TensorEntry::from(p, t));
  });
  const std::string json = model_config_to_json(params.config);
  std::vector<std::uint8_t> bytes;
  bytes.insert(bytes.end(), kCheckpointMagic, kCheckpointMagic + 4);
  put_u16(bytes, kCheckpointVersion);
  put_u64(bytes, seed);
  put_u32(bytes, static_cast<std::uint32_t>(json.size()));
  bytes.insert(bytes.end(), json.begin(), json.end());
  const auto container = encode_tensor_container(entries);
  bytes.insert(bytes.end(), container.begin(), container.end());

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for '" + path.string() + "'");
}

CheckpointInfo read_checkpoint_info(const std::filesystem::path& path) {
  const auto bytes = read_all_bytes(path);
  const auto header = parse_checkpoint_header(bytes);
  std::vector<std::uint8_t> container(bytes.begin() + static_cast<std::ptrdiff_t>(header.container_offset),
                                      bytes.end());
  const auto entries = decode_tensor_container(container);
  CheckpointInfo info{header.config, header.seed,
                      entries.empty() ? DType::kF32 : entries.front().dtype};
  return info;
}

template <typename T>
ModelParamsT<T> load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_all_bytes(path);
  const auto header = parse_checkpoint_header(bytes);
  std::vector<std::uint8_t> container(bytes.begin() + static_cast<std::ptrdiff_t>(header.container_offset),
                                      bytes.end());
  auto entries = decode_tensor_container(container);

  ModelParamsT<T> params = build_model<T>(header.config, header.seed);
  std::set<std::string> used;
  params.for_each([&](const std::string& p, TensorT<T>& t) {
    const auto it = std::find_if(entries.begin(), entries.end(),
                                 [&](const TensorEntry& e) { return e.name == p; });
    if (it == entries.end()) throw DataError("checkpoint missing parameter '" + p + "'");
    TensorT<T> loaded;
    if constexpr (std::is_same_v<T, float>) {
      loaded = it->as_f32();
    } else {
      loaded = it->as_f64();
    }
    if (!loaded.same_dims(t)) {
      throw DataError("checkpoint parameter '" + p + "' has shape " + shape_str(loaded.dims()) +
                      ", model expects " + shape_str(t.dims()));
    }
    t = std::move(loaded);
    used.insert(p);
  });
  if (used.size() != entries.size()) {
    for (const auto& e : entries) {
      if (!used.count(e.name)) throw DataError("checkpoint has unknown parameter '" + e.name + "'");
    }
  }
  return params;
}

template void save_checkpoint<float>(const std::filesystem::path&, const ModelParamsT<float>&,
                                     std::uint64_t);
template void save_checkpoint<double>(const std::filesystem::path&, const ModelParamsT<double>&,
                                      std::uint64_t);
template ModelParamsT<float> load_checkpoint<float>(const std::filesystem::path&);
template ModelParamsT<double> load_checkpoint<double>(const std::filesystem::path&);

}  // namespace st4d
