#include <gtest/gtest.h>

#include <bit>
#include <cmath>
#include <filesystem>
#include <limits>
#include <sstream>

#include "test_util.hpp"
#include "tvd/io.hpp"

namespace tvd::io {
namespace {

namespace fs = std::filesystem;

// Bitwise CRC-32 (reflected, polynomial 0xEDB88320), independent of zlib.
std::uint32_t slow_crc32(const Bytes& b, std::size_t n) {
  std::uint32_t crc = 0xFFFFFFFFu;
  for (std::size_t i = 0; i < n; ++i) {
    crc ^= b[i];
    for (int k = 0; k < 8; ++k) crc = (crc >> 1) ^ (0xEDB88320u & (0u - (crc & 1u)));
  }
  return ~crc;
}

ErrorCode decode_error(const Bytes& b) {
  try {
    (void)decode_tensors(b);
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::InvalidArgument;  // sentinel: nothing thrown
}

TaskVector sample() {
  TaskVector v;
  v.emplace("layer.weight", Tensor::from_matrix(make_matrix(2, 3, {1, -2, 3.5, 0.25, -0.0, 1e-300})));
  v.emplace("layer.bias", Tensor({3}, {0.1, 0.2, 0.3}));
  v.emplace("scalar", Tensor({}, {42.0}));
  v.emplace("conv", Tensor({2, 1, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8}));
  return v;
}

bool bitwise_same(const TaskVector& a, const TaskVector& b) {
  if (a.size() != b.size()) return false;
  for (const auto& [name, t] : a) {
    auto it = b.find(name);
    if (it == b.end() || it->second.shape != t.shape) return false;
    for (std::size_t i = 0; i < t.values.size(); ++i) {
      if (std::bit_cast<std::uint64_t>(t.values[i]) != std::bit_cast<std::uint64_t>(it->second.values[i])) return false;
    }
  }
  return true;
}

TEST(Tvt, IdentityRoundTrip) {
  TaskVector v;
  v.emplace("eye", Tensor::from_matrix(Matrix::Identity(3, 3)));
  const TaskVector back = decode_tensors(encode_tensors(v));
  EXPECT_TRUE(bitwise_same(v, back));
}

TEST(Tvt, MixedRanksAndSpecialValuesRoundTrip) {
  TaskVector v = sample();
  v.emplace("odd", Tensor({4}, {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::infinity(),
                                 std::numeric_limits<double>::denorm_min(), -0.0}));
  EXPECT_TRUE(bitwise_same(v, decode_tensors(encode_tensors(v))));
}

TEST(Tvt, RandomRoundTrip) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    TaskVector v;
    for (int l = 0; l < 3; ++l) {
      v.emplace("l" + std::to_string(l), Tensor::from_matrix(testing::gaussian(1 + trial, 2 + l, rng)));
    }
    EXPECT_TRUE(bitwise_same(v, decode_tensors(encode_tensors(v))));
  }
}

TEST(Tvt, EmptyMap) {
  const Bytes b = encode_tensors(TaskVector{});
  ASSERT_EQ(b.size(), 16u);
  EXPECT_TRUE(decode_tensors(b).empty());
}

TEST(Tvt, ExactByteLayout) {
  TaskVector v;
  v.emplace("ab", Tensor({1, 2}, {1.0, -2.0}));
  Bytes expect = {'T', 'V', 'T', '1',
                  2, 0, 0, 0, 'a', 'b',                // name
                  2, 0, 0, 0,                          // ndim
                  1, 0, 0, 0, 0, 0, 0, 0,              // dims
                  2, 0, 0, 0, 0, 0, 0, 0,
                  0,                                   // dtype f64
                  0, 0, 0, 0, 0, 0, 0xF0, 0x3F,        // 1.0
                  0, 0, 0, 0, 0, 0, 0x00, 0xC0,        // -2.0
                  1, 0, 0, 0, 0, 0, 0, 0};             // count
  const std::uint32_t crc = slow_crc32(expect, expect.size());
  for (int i = 0; i < 4; ++i) expect.push_back(static_cast<std::uint8_t>(crc >> (8 * i)));
  EXPECT_EQ(encode_tensors(v), expect);
}

TEST(Tvt, ZlibCrcMatchesReference) {
  const Bytes b = encode_tensors(sample());
  EXPECT_EQ(crc32(b.data(), b.size() - 4), slow_crc32(b, b.size() - 4));
  const Bytes check = {'1', '2', '3', '4', '5', '6', '7', '8', '9'};
  EXPECT_EQ(crc32(check.data(), check.size()), 0xCBF43926u);
}

TEST(Tvt, FlippedPayloadByteIsChecksumMismatch) {
  const Bytes good = encode_tensors(sample());
  // Every byte after the magic and before the CRC; the last 4 are the CRC itself.
  for (std::size_t i = 4; i < good.size(); ++i) {
    Bytes bad = good;
    bad[i] ^= 0x01;
    const ErrorCode code = decode_error(bad);
    EXPECT_TRUE(code == ErrorCode::ChecksumMismatch || code == ErrorCode::Truncated) << "byte " << i;
  }
  // A payload byte specifically (last value of the last record).
  Bytes bad = good;
  bad[good.size() - 13] ^= 0x80;
  EXPECT_EQ(decode_error(bad), ErrorCode::ChecksumMismatch);
}

TEST(Tvt, BadMagic) {
  Bytes b = encode_tensors(sample());
  b[3] = '2';
  EXPECT_EQ(decode_error(b), ErrorCode::BadMagic);
  EXPECT_EQ(decode_error(Bytes{'P', 'K', 3, 4, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0}), ErrorCode::BadMagic);
}

TEST(Tvt, EveryTruncationRejected) {
  const Bytes good = encode_tensors(sample());
  std::size_t truncated = 0;
  for (std::size_t n = 0; n < good.size(); ++n) {
    const Bytes cut(good.begin(), good.begin() + static_cast<std::ptrdiff_t>(n));
    const ErrorCode code = decode_error(cut);
    EXPECT_TRUE(code == ErrorCode::Truncated || code == ErrorCode::ChecksumMismatch) << "length " << n;
    truncated += code == ErrorCode::Truncated;
  }
  EXPECT_GT(truncated, good.size() * 9 / 10);
  EXPECT_EQ(decode_error(Bytes(good.begin(), good.begin() + 40)), ErrorCode::Truncated);
}

TEST(Tvt, DuplicateNames) {
  const std::vector<std::pair<std::string, Tensor>> dup = {{"x", Tensor({1}, {1.0})}, {"x", Tensor({1}, {2.0})}};
  try {
    (void)encode_tensors(dup);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DuplicateName);
  }
  // Hand-built file with a repeated name and a valid checksum.
  Bytes b(kMagic, kMagic + 4);
  for (int rep = 0; rep < 2; ++rep) {
    const Bytes rec = {1, 0, 0, 0, 'x', 1, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0xF0, 0x3F};
    b.insert(b.end(), rec.begin(), rec.end());
  }
  const Bytes tail = {2, 0, 0, 0, 0, 0, 0, 0};
  b.insert(b.end(), tail.begin(), tail.end());
  const std::uint32_t crc = slow_crc32(b, b.size());
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>(crc >> (8 * i)));
  EXPECT_EQ(decode_error(b), ErrorCode::DuplicateName);
}

TEST(Tvt, CountMismatchRejected) {
  Bytes b = encode_tensors(sample());
  b[b.size() - 12] += 1;
  const std::uint32_t crc = slow_crc32(b, b.size() - 4);
  for (int i = 0; i < 4; ++i) b[b.size() - 4 + static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(crc >> (8 * i));
  EXPECT_EQ(decode_error(b), ErrorCode::Truncated);
}

TEST(Tvt, FileRoundTrip) {
  const fs::path dir = fs::temp_directory_path() / "tvd_io_test";
  fs::create_directories(dir);
  const TaskVector v = sample();
  write_tensor_file(dir / "a.tvt", v);
  EXPECT_TRUE(bitwise_same(v, read_tensor_file(dir / "a.tvt")));
  try {
    (void)read_tensor_file(dir / "missing.tvt");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::IoError);
  }
  fs::remove_all(dir);
}

TEST(Digest, Sha256KnownVectors) {
  EXPECT_EQ(sha256_hex(std::string_view("abc")), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  EXPECT_EQ(sha256_hex(std::string_view("")), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST(Format, ShortestRoundTrip) {
  for (double v : {0.1, 1.0 / 3.0, 1e-300, -2.5, 0.0, 123456789.125}) {
    EXPECT_EQ(std::stod(fmt(v)), v);
  }
  EXPECT_EQ(fmt(0.1), "0.1");
  EXPECT_EQ(fmt(2.0), "2");
}

TEST(Manifest, DefaultsAndResolution) {
  const Manifest m = parse_manifest(R"({"task_vectors":[{"name":"a","path":"x/a.tvt"},{"name":"b","path":"/abs/b.tvt"}]})",
                                    "/data/run");
  EXPECT_EQ(m.tau, 0.85);
  EXPECT_EQ(m.rank_tol, 1e-10);
  EXPECT_EQ(m.mode, DecomposeMode::chain);
  EXPECT_EQ(m.seed, 0u);
  EXPECT_EQ(m.max_rank, 0);
  EXPECT_FALSE(m.base_model.has_value());
  ASSERT_EQ(m.task_vectors.size(), 2u);
  EXPECT_EQ(m.task_vectors[0].resolved, fs::path("/data/run/x/a.tvt"));
  EXPECT_EQ(m.task_vectors[1].resolved, fs::path("/abs/b.tvt"));
  EXPECT_EQ(m.output_dir, fs::path("/data/run/out"));
}

TEST(Manifest, AllFields) {
  const Manifest m = parse_manifest(R"({"base_model":"base.tvt","task_vectors":[{"name":"a","path":"a.tvt"}],
      "tau":0.9,"rank_tol":1e-8,"max_rank":5,"mode":"pairwise","output_dir":"res","seed":7})",
                                    "/d");
  ASSERT_TRUE(m.base_model.has_value());
  EXPECT_EQ(m.base_model->resolved, fs::path("/d/base.tvt"));
  EXPECT_EQ(m.tau, 0.9);
  EXPECT_EQ(m.rank_tol, 1e-8);
  EXPECT_EQ(m.max_rank, 5);
  EXPECT_EQ(m.mode, DecomposeMode::pairwise);
  EXPECT_EQ(m.output_dir, fs::path("/d/res"));
  EXPECT_EQ(m.seed, 7u);
  const DecomposeOptions opt = m.options();
  EXPECT_EQ(opt.tau, 0.9);
  EXPECT_EQ(opt.mode, DecomposeMode::pairwise);
}

TEST(Manifest, Rejections) {
  auto code_of = [](std::string_view text) {
    try {
      (void)parse_manifest(text, "/d");
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::IoError;  // sentinel
  };
  EXPECT_EQ(code_of("not json"), ErrorCode::InvalidArgument);
  EXPECT_EQ(code_of("[]"), ErrorCode::InvalidArgument);
  EXPECT_EQ(code_of(R"({"task_vectors":[],"taus":0.8})"), ErrorCode::InvalidArgument);
  EXPECT_EQ(code_of(R"({"task_vectors":[],"tau":0})"), ErrorCode::InvalidThreshold);
  EXPECT_EQ(code_of(R"({"task_vectors":[],"tau":1.5})"), ErrorCode::InvalidThreshold);
  EXPECT_EQ(code_of(R"({"task_vectors":[],"tau":"high"})"), ErrorCode::InvalidArgument);
  EXPECT_EQ(code_of(R"({"task_vectors":[],"mode":"tree"})"), ErrorCode::InvalidArgument);
  EXPECT_EQ(code_of(R"({"task_vectors":[{"name":"a","path":"1"},{"name":"a","path":"2"}]})"), ErrorCode::DuplicateName);
  EXPECT_EQ(code_of(R"({"task_vectors":[{"name":"a b","path":"1"}]})"), ErrorCode::InvalidArgument);
  EXPECT_EQ(code_of(R"({"task_vectors":[{"path":"1"}]})"), ErrorCode::InvalidArgument);
  EXPECT_EQ(code_of(R"({"task_vectors":[],"max_rank":-1})"), ErrorCode::InvalidArgument);
  EXPECT_EQ(code_of(R"({"task_vectors":[],"seed":-3})"), ErrorCode::InvalidArgument);
}

TEST(Csv, SweepFormats) {
  SweepResult r;
  r.records.push_back(TrialRecord{0.1, 0, RecoveryReport{0.5, 0.75, 3, 4, 0.1}});
  r.per_sigma.push_back(SigmaSummary{0.1, 1, 0.5, 0.75, 3.0});
  std::ostringstream a, b, h;
  write_sweep_csv(a, r);
  write_sweep_summary_csv(b, r);
  write_histogram_csv(h, Histogram{{0.0, 0.5, 1.0}, {2, 3}});
  EXPECT_EQ(a.str(), "sigma,trial,mean_angle_rad,max_angle_rad,recovered_dim\n0.1,0,0.5,0.75,3\n");
  EXPECT_EQ(b.str(), "sigma,trials,mean_angle_rad,max_angle_rad,mean_recovered_dim\n0.1,1,0.5,0.75,3\n");
  EXPECT_EQ(h.str(), "bin_lo,bin_hi,count\n0,0.5,2\n0.5,1,3\n");
}

TEST(Csv, CurveFormat) {
  toy::SweepCurve c;
  c.points.push_back(toy::CurvePoint{1, -0.25, 0.5, 1.25});
  const std::vector<std::string> ids = {"merged_shared", "unique.a"};
  std::ostringstream o;
  write_curve_csv(o, c, ids);
  EXPECT_EQ(o.str(), "component_id,lambda,accuracy,loss\nunique.a,-0.25,0.5,1.25\n");
}

}  // namespace
}  // namespace tvd::io
