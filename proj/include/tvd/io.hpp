#pragma once

// TVT1 tensor files, JSON manifests and reports, CSV tables.
//
// TVT1 layout (little-endian):
//   "TVT1"
//   per tensor: u32 name_len, name bytes, u32 ndim, u64 dims[ndim], u8 dtype (0 = f64),
//               f64 payload[prod(dims)] row-major
//   u64 tensor count
//   u32 CRC-32 of every preceding byte

#include <zlib.h>
#include <openssl/evp.h>

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tvd/angles.hpp"
#include "tvd/decompose.hpp"
#include "tvd/error.hpp"
#include "tvd/synth.hpp"
#include "tvd/tensor.hpp"
#include "tvd/toylab.hpp"

namespace tvd::io {

using Bytes = std::vector<std::uint8_t>;
using json = nlohmann::ordered_json;

inline constexpr std::string_view kToolkitName = "tvd";
inline constexpr std::string_view kToolkitVersion = "0.1.0";
inline constexpr char kMagic[4] = {'T', 'V', 'T', '1'};
inline constexpr std::uint8_t kDtypeF64 = 0;

inline std::uint32_t crc32(const std::uint8_t* data, std::size_t n) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = ::crc32(crc, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

inline std::string sha256_hex(const std::uint8_t* data, std::size_t n) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data, n, digest, &len, EVP_sha256(), nullptr) != 1) throw Error(ErrorCode::IoError, "SHA-256 failed");
  std::ostringstream out;
  for (unsigned int i = 0; i < len; ++i) out << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  return out.str();
}

inline std::string sha256_hex(const Bytes& b) { return sha256_hex(b.data(), b.size()); }
inline std::string sha256_hex(std::string_view s) {
  return sha256_hex(reinterpret_cast<const std::uint8_t*>(s.data()), s.size());
}

namespace detail {

template <typename T>
void put(Bytes& out, T v) {
  static_assert(std::is_unsigned_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  Reader(const Bytes& b, std::size_t end) : b_(b), end_(end) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(b_[pos_ + i]) << (8 * i);
    pos_ += sizeof(T);
    return v;
  }

  std::string text(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  void need(std::size_t n) const {
    if (n > end_ - pos_) throw Error(ErrorCode::Truncated, "tensor file ends inside a record");
  }

  std::size_t pos() const { return pos_; }
  void seek(std::size_t p) { pos_ = p; }

 private:
  const Bytes& b_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

struct Record {
  std::string name;
  Tensor tensor;
};

// Walks the records between the magic and the 12-byte trailer.
inline std::vector<Record> parse_records(const Bytes& b) {
  const std::size_t end = b.size() - 12;
  Reader r(b, end);
  r.seek(4);
  std::vector<Record> out;
  while (r.pos() < end) {
    Record rec;
    rec.name = r.text(r.get<std::uint32_t>());
    const std::uint32_t ndim = r.get<std::uint32_t>();
    r.need(std::size_t{ndim} * 8);
    Shape shape(ndim);
    std::uint64_t count = 1;
    for (auto& d : shape) {
      d = r.get<std::uint64_t>();
      if (d != 0 && count > std::numeric_limits<std::uint64_t>::max() / d) {
        throw Error(ErrorCode::Truncated, "tensor '" + rec.name + "' dims overflow");
      }
      count *= d;
    }
    const auto dtype = r.get<std::uint8_t>();
    if (dtype != kDtypeF64) throw Error(ErrorCode::IoError, "tensor '" + rec.name + "' has unsupported dtype " + std::to_string(dtype));
    if (count > (end - r.pos()) / 8) throw Error(ErrorCode::Truncated, "tensor '" + rec.name + "' payload cut short");
    std::vector<double> values(count);
    for (auto& v : values) v = std::bit_cast<double>(r.get<std::uint64_t>());
    rec.tensor = Tensor(std::move(shape), std::move(values));
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace detail

/// Serializes tensors in the given order. Names must be unique.
inline Bytes encode_tensors(std::span<const std::pair<std::string, Tensor>> tensors) {
  Bytes out(kMagic, kMagic + 4);
  std::set<std::string> seen;
  for (const auto& [name, t] : tensors) {
    if (!seen.insert(name).second) throw Error(ErrorCode::DuplicateName, "duplicate tensor name '" + name + "'");
    if (name.size() > std::numeric_limits<std::uint32_t>::max()) throw Error(ErrorCode::InvalidArgument, "tensor name too long");
    detail::put(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    detail::put(out, static_cast<std::uint32_t>(t.shape.size()));
    for (std::uint64_t d : t.shape) detail::put(out, d);
    out.push_back(kDtypeF64);
    for (double v : t.values) detail::put(out, std::bit_cast<std::uint64_t>(v));
  }
  detail::put(out, static_cast<std::uint64_t>(tensors.size()));
  detail::put(out, crc32(out.data(), out.size()));
  return out;
}

inline Bytes encode_tensors(const TaskVector& tensors) {
  std::vector<std::pair<std::string, Tensor>> ordered(tensors.begin(), tensors.end());
  return encode_tensors(ordered);
}

/// Parses a TVT1 image. A file cut short reports Truncated; any other
/// damage that the checksum catches reports ChecksumMismatch.
inline TaskVector decode_tensors(const Bytes& b) {
  if (b.size() < 4) throw Error(ErrorCode::Truncated, "tensor file shorter than its magic");
  if (std::memcmp(b.data(), kMagic, 4) != 0) throw Error(ErrorCode::BadMagic, "not a TVT1 file");
  if (b.size() < 16) throw Error(ErrorCode::Truncated, "tensor file shorter than its trailer");

  detail::Reader trailer(b, b.size());
  trailer.seek(b.size() - 12);
  const auto count = trailer.get<std::uint64_t>();
  const auto stored_crc = trailer.get<std::uint32_t>();
  if (crc32(b.data(), b.size() - 4) != stored_crc) {
    try {
      (void)detail::parse_records(b);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::Truncated) throw;
    }
    throw Error(ErrorCode::ChecksumMismatch, "tensor file checksum mismatch");
  }

  std::vector<detail::Record> records = detail::parse_records(b);
  if (records.size() != count) {
    throw Error(ErrorCode::Truncated, "tensor count " + std::to_string(count) + " but " + std::to_string(records.size()) +
                                          " records present");
  }
  TaskVector out;
  for (auto& rec : records) {
    const std::string name = rec.name;
    if (!out.emplace(name, std::move(rec.tensor)).second) {
      throw Error(ErrorCode::DuplicateName, "duplicate tensor name '" + name + "'");
    }
  }
  return out;
}

inline Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  Bytes b((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw Error(ErrorCode::IoError, "read failed: " + path.string());
  return b;
}

inline void write_file(const std::filesystem::path& path, std::string_view data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot create " + path.string());
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw Error(ErrorCode::IoError, "write failed: " + path.string());
}

inline void write_file(const std::filesystem::path& path, const Bytes& data) {
  write_file(path, std::string_view(reinterpret_cast<const char*>(data.data()), data.size()));
}

inline void write_tensor_file(const std::filesystem::path& path, const TaskVector& tensors) {
  write_file(path, encode_tensors(tensors));
}

inline TaskVector read_tensor_file(const std::filesystem::path& path) { return decode_tensors(read_file(path)); }

// ---------------------------------------------------------------- manifest

struct ManifestEntry {
  std::string name;
  std::string path;                 // as written in the manifest
  std::filesystem::path resolved;   // relative paths resolve against the manifest's directory
};

struct Manifest {
  std::optional<ManifestEntry> base_model;
  std::vector<ManifestEntry> task_vectors;
  double tau = kDefaultTau;
  double rank_tol = kDefaultRankTol;
  Eigen::Index max_rank = 0;
  DecomposeMode mode = DecomposeMode::chain;
  std::filesystem::path output_dir;
  std::uint64_t seed = 0;

  DecomposeOptions options() const {
    DecomposeOptions opt;
    opt.tau = tau;
    opt.rank_tol = rank_tol;
    opt.max_rank = max_rank;
    opt.mode = mode;
    opt.seed = seed;
    return opt;
  }
};

/// Names end up in file names and component identifiers.
inline bool valid_name(std::string_view name) {
  static const std::regex re("[A-Za-z0-9_-]+");
  return std::regex_match(name.begin(), name.end(), re);
}

inline DecomposeMode parse_mode(std::string_view s) {
  if (s == "chain") return DecomposeMode::chain;
  if (s == "pairwise") return DecomposeMode::pairwise;
  throw Error(ErrorCode::InvalidArgument, "mode must be 'chain' or 'pairwise', got '" + std::string(s) + "'");
}

namespace detail {

inline std::filesystem::path resolve(const std::filesystem::path& base_dir, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() ? path : (base_dir / path).lexically_normal();
}

template <typename T>
T field(const json& j, std::string_view key, std::string_view what) {
  try {
    return j.at(std::string(key)).get<T>();
  } catch (const json::exception&) {
    throw Error(ErrorCode::InvalidArgument, "manifest field '" + std::string(key) + "' must be " + std::string(what));
  }
}

}  // namespace detail

/// Parses manifest JSON. Unknown keys are rejected so typos do not pass silently.
inline Manifest parse_manifest(std::string_view text, const std::filesystem::path& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("manifest is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw Error(ErrorCode::InvalidArgument, "manifest must be a JSON object");
  static const std::set<std::string> known = {"base_model", "task_vectors", "tau",    "rank_tol",
                                              "max_rank",   "mode",         "output_dir", "seed"};
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw Error(ErrorCode::InvalidArgument, "unknown manifest field '" + key + "'");
  }

  Manifest m;
  if (j.contains("base_model") && !j["base_model"].is_null()) {
    const auto p = detail::field<std::string>(j, "base_model", "a path string");
    m.base_model = ManifestEntry{"base", p, detail::resolve(base_dir, p)};
  }
  if (!j.contains("task_vectors") || !j["task_vectors"].is_array()) {
    throw Error(ErrorCode::InvalidArgument, "manifest needs a 'task_vectors' array");
  }
  std::set<std::string> names;
  for (const json& e : j["task_vectors"]) {
    if (!e.is_object()) throw Error(ErrorCode::InvalidArgument, "task_vectors entries must be objects");
    ManifestEntry entry;
    entry.name = detail::field<std::string>(e, "name", "a string");
    entry.path = detail::field<std::string>(e, "path", "a string");
    if (!valid_name(entry.name)) throw Error(ErrorCode::InvalidArgument, "task vector name '" + entry.name + "' must match [A-Za-z0-9_-]+");
    if (!names.insert(entry.name).second) throw Error(ErrorCode::DuplicateName, "task vector '" + entry.name + "' listed twice");
    entry.resolved = detail::resolve(base_dir, entry.path);
    m.task_vectors.push_back(std::move(entry));
  }
  if (j.contains("tau")) m.tau = detail::field<double>(j, "tau", "a number");
  check_tau(m.tau);
  if (j.contains("rank_tol")) m.rank_tol = detail::field<double>(j, "rank_tol", "a number");
  if (!(m.rank_tol >= 0.0) || !std::isfinite(m.rank_tol)) throw Error(ErrorCode::InvalidArgument, "rank_tol must be >= 0");
  if (j.contains("max_rank")) {
    if (!j["max_rank"].is_number_integer()) throw Error(ErrorCode::InvalidArgument, "manifest field 'max_rank' must be an integer");
    const auto r = j["max_rank"].get<std::int64_t>();
    if (r < 0) throw Error(ErrorCode::InvalidArgument, "max_rank must be >= 0");
    m.max_rank = static_cast<Eigen::Index>(r);
  }
  if (j.contains("mode")) m.mode = parse_mode(detail::field<std::string>(j, "mode", "a string"));
  m.output_dir = detail::resolve(base_dir, j.contains("output_dir") ? detail::field<std::string>(j, "output_dir", "a path string")
                                                                    : std::string("out"));
  if (j.contains("seed")) {
    if (!j["seed"].is_number_unsigned()) throw Error(ErrorCode::InvalidArgument, "manifest field 'seed' must be a nonnegative integer");
    m.seed = j["seed"].get<std::uint64_t>();
  }
  return m;
}

inline Manifest load_manifest(const std::filesystem::path& path) {
  const Bytes b = read_file(path);
  return parse_manifest(std::string_view(reinterpret_cast<const char*>(b.data()), b.size()),
                        path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path());
}

struct LoadedInput {
  ManifestEntry entry;
  std::string sha256;
  TaskVector tensors;
};

inline LoadedInput load_input(const ManifestEntry& entry) {
  const Bytes b = read_file(entry.resolved);
  return LoadedInput{entry, sha256_hex(b), decode_tensors(b)};
}

// ------------------------------------------------------------------ report

/// Digest over the ordered (name, content hash) pairs of every input file,
/// the base model first when there is one.
inline std::string input_digest(std::span<const LoadedInput> inputs, const std::optional<LoadedInput>& base) {
  std::string joined;
  if (base) joined += "base_model" + std::string(1, '\0') + base->sha256 + '\n';
  for (const LoadedInput& in : inputs) joined += in.entry.name + '\0' + in.sha256 + '\n';
  return sha256_hex(joined);
}

inline json report_json(const Manifest& m, std::span<const LoadedInput> inputs, const std::optional<LoadedInput>& base,
                        const DecompositionResult& dec, std::span<const std::string> outputs) {
  auto member_names = [&](const std::vector<std::size_t>& idx) {
    json a = json::array();
    for (std::size_t i : idx) a.push_back(inputs[i].entry.name);
    return a;
  };

  json r;
  r["toolkit"] = {{"name", kToolkitName}, {"version", kToolkitVersion}};
  json ins = json::array();
  for (const LoadedInput& in : inputs) {
    ins.push_back({{"name", in.entry.name}, {"path", in.entry.path}, {"sha256", in.sha256}, {"layers", in.tensors.size()}});
  }
  r["inputs"] = ins;
  r["base_model"] = base ? json{{"path", base->entry.path}, {"sha256", base->sha256}} : json(nullptr);
  r["input_digest"] = input_digest(inputs, base);
  r["options"] = {{"tau", m.tau},
                  {"rank_tol", m.rank_tol},
                  {"max_rank", m.max_rank},
                  {"mode", to_string(m.mode)},
                  {"chain_form", "gram"},
                  {"seed", m.seed}};
  json layers = json::array();
  for (const LayerSummary& l : dec.layers) {
    json lj;
    lj["name"] = l.name;
    lj["shape"] = l.shape;
    lj["decomposed"] = l.decomposed;
    json groups = json::array();
    for (const GroupSummary& g : l.groups) {
      groups.push_back({{"members", member_names(g.members)},
                        {"r_shared", g.r_shared},
                        {"retained_eigenvalues", g.retained},
                        {"spectrum", g.spectrum}});
    }
    lj["groups"] = groups;
    lj["reconstruction_residuals"] = l.reconstruction_residuals;
    lj["orthogonality_residuals"] = l.orthogonality_residuals;
    lj["order_drift"] = l.order_drift ? json(*l.order_drift) : json(nullptr);
    layers.push_back(std::move(lj));
  }
  r["layers"] = layers;
  r["undecomposed_layers"] = dec.undecomposed;
  r["outputs"] = outputs;
  return r;
}

/// Wall-clock data lives apart from the report so reports stay reproducible.
inline json timing_json(const DecompositionResult& dec, double total_seconds) {
  json layers = json::array();
  for (const LayerSummary& l : dec.layers) layers.push_back({{"name", l.name}, {"seconds", l.seconds}});
  return {{"total_seconds", total_seconds}, {"layers", layers}};
}

inline json angles_json(const AngleReport& a) {
  return {{"angles_rad", a.angles_rad}, {"mean_rad", a.mean_rad}, {"max_rad", a.max_rad}, {"p", a.p}, {"q", a.q}};
}

inline json cross_check_json(const CrossCheck& c) {
  return {{"outcome", to_string(c.outcome)},
          {"max_rad", c.max_rad()},
          {"mean_rad", c.outcome == CrossOutcome::compared ? c.agreement.mean_rad : c.max_rad()},
          {"chain_dim", c.chain_dim},
          {"angle_dim", c.angle_dim},
          {"opposite_side_max_rad", c.opposite_side_max_rad}};
}

inline std::string dump(const json& j) { return j.dump(2) + "\n"; }

// --------------------------------------------------------------------- csv

/// Shortest text that reads back to the same double.
inline std::string fmt(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline void write_sweep_csv(std::ostream& out, const SweepResult& r) {
  out << "sigma,trial,mean_angle_rad,max_angle_rad,recovered_dim\n";
  for (const TrialRecord& t : r.records) {
    out << fmt(t.sigma) << ',' << t.trial << ',' << fmt(t.report.mean_angle_rad) << ',' << fmt(t.report.max_angle_rad)
        << ',' << t.report.recovered_dim << '\n';
  }
}

inline void write_sweep_summary_csv(std::ostream& out, const SweepResult& r) {
  out << "sigma,trials,mean_angle_rad,max_angle_rad,mean_recovered_dim\n";
  for (const SigmaSummary& s : r.per_sigma) {
    out << fmt(s.sigma) << ',' << s.trials << ',' << fmt(s.mean_angle_rad) << ',' << fmt(s.max_angle_rad) << ','
        << fmt(s.mean_recovered_dim) << '\n';
  }
}

inline void write_histogram_csv(std::ostream& out, const Histogram& h) {
  out << "bin_lo,bin_hi,count\n";
  for (std::size_t i = 0; i < h.counts.size(); ++i) {
    out << fmt(h.bin_edges[i]) << ',' << fmt(h.bin_edges[i + 1]) << ',' << h.counts[i] << '\n';
  }
}

inline void write_curve_csv(std::ostream& out, const toy::SweepCurve& curve, std::span<const std::string> component_ids) {
  out << "component_id,lambda,accuracy,loss\n";
  for (const toy::CurvePoint& p : curve.points) {
    out << component_ids[p.component] << ',' << fmt(p.lambda) << ',' << fmt(p.accuracy) << ',' << fmt(p.loss) << '\n';
  }
}

}  // namespace tvd::io
