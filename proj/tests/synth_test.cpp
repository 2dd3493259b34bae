#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "test_util.hpp"
#include "tvd/synth.hpp"

namespace tvd {
namespace {

PlantSpec small_spec() {
  PlantSpec s;
  s.ambient_dim = 60;
  s.cols = 50;
  s.shared_dim = 8;
  s.unique_dim_per_vector = 10;
  return s;
}

TEST(Plant, TinySpecContainsSharedDirection) {
  PlantSpec s{4, 4, 1, 1, 2, 1.0};
  for (std::uint64_t seed : {0u, 1u, 99u}) {
    const PlantedInstance inst = plant(s, seed);
    const Matrix z = inst.truth_shared.col(0);
    for (const Matrix& v : inst.vectors) {
      const Projector p = column_projector(v);
      EXPECT_LE((p.p * z - z).norm(), 1e-8);
    }
  }
}

TEST(Plant, TruthBasesAreOrthonormalAndDisjoint) {
  const PlantedInstance inst = plant(small_spec(), 3);
  EXPECT_LE(orthonormality_error(inst.truth_shared), 1e-12);
  std::vector<Matrix> bases{inst.truth_shared};
  for (const Matrix& u : inst.truth_uniques) bases.push_back(u);
  for (std::size_t i = 0; i < bases.size(); ++i)
    for (std::size_t j = i + 1; j < bases.size(); ++j)
      EXPECT_LE((bases[i].transpose() * bases[j]).cwiseAbs().maxCoeff(), 1e-8);
  for (std::size_t i = 0; i < inst.vectors.size(); ++i) {
    Matrix span(60, 18);
    span << inst.truth_shared, inst.truth_uniques[i];
    const Matrix& v = inst.vectors[i];
    EXPECT_LE((v - span * (span.transpose() * v)).norm(), 1e-8 * v.norm());
  }
}

TEST(Plant, DeterministicGivenSeed) {
  const PlantedInstance a = plant(small_spec(), 42);
  const PlantedInstance b = plant(small_spec(), 42);
  const PlantedInstance c = plant(small_spec(), 43);
  for (std::size_t i = 0; i < a.vectors.size(); ++i) EXPECT_TRUE(testing::bitwise_equal(a.vectors[i], b.vectors[i]));
  EXPECT_TRUE(testing::bitwise_equal(a.truth_shared, b.truth_shared));
  EXPECT_FALSE(testing::bitwise_equal(a.vectors[0], c.vectors[0]));
}

TEST(Plant, InvalidSpecs) {
  PlantSpec s = small_spec();
  s.shared_dim = 50;  // 50 + 2*10 > 60
  EXPECT_THROW(plant(s, 0), Error);
  s = small_spec();
  s.num_vectors = 1;
  EXPECT_THROW(plant(s, 0), Error);
  s = small_spec();
  s.cols = 0;
  EXPECT_THROW(plant(s, 0), Error);
}

TEST(Plant, NothingSharedWhenNothingPlanted) {
  PlantSpec s = small_spec();
  s.shared_dim = 0;
  const PlantedInstance inst = plant(s, 5);
  const LayerDecomposition d = decompose_layer(inst.vectors, LayerOptions{});
  EXPECT_EQ(d.basis.dim(), 0);
  const RecoveryReport rep = recovery_report(inst, d.basis, 0.0);
  EXPECT_EQ(rep.mean_angle_rad, 0.0);
}

TEST(AddNoise, ZeroSigmaIsBitwiseIdentity) {
  std::mt19937_64 rng(1);
  const Matrix m = testing::gaussian(7, 5, rng);
  EXPECT_TRUE(testing::bitwise_equal(add_noise(m, 0.0, 3), m));
}

TEST(AddNoise, SampleStandardDeviation) {
  const Matrix m = Matrix::Zero(1000, 1000);
  const Matrix noisy = add_noise(m, 1.0, 17);
  const double mean = noisy.mean();
  const double sd = std::sqrt((noisy.array() - mean).square().sum() / static_cast<double>(noisy.size() - 1));
  EXPECT_NEAR(sd, 1.0, 0.05);
  EXPECT_NEAR(mean, 0.0, 0.01);
}

TEST(AddNoise, SeedsDifferAndNegativeSigmaFails) {
  const Matrix m = Matrix::Zero(4, 4);
  EXPECT_FALSE(testing::bitwise_equal(add_noise(m, 1.0, 1), add_noise(m, 1.0, 2)));
  EXPECT_TRUE(testing::bitwise_equal(add_noise(m, 1.0, 1), add_noise(m, 1.0, 1)));
  try {
    add_noise(m, -0.1, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvalidSpec);
  }
}

TEST(RecoveryReport, TruthAndEmptyCases) {
  const PlantedInstance inst = plant(small_spec(), 1);
  const RecoveryReport exact = recovery_report(inst, SharedBasis{inst.truth_shared, 0.85, Vector::Ones(8)}, 0.0);
  EXPECT_LE(exact.mean_angle_rad, 1e-12);
  EXPECT_LE(exact.max_angle_rad, 1e-12);
  EXPECT_EQ(exact.recovered_dim, 8u);
  const RecoveryReport empty = recovery_report(inst, SharedBasis{Matrix(60, 0), 0.85, Vector()}, 0.0);
  EXPECT_DOUBLE_EQ(empty.mean_angle_rad, std::numbers::pi / 2);
  EXPECT_DOUBLE_EQ(empty.max_angle_rad, std::numbers::pi / 2);
  EXPECT_THROW(recovery_report(inst, SharedBasis{Matrix::Identity(5, 1), 0.85, Vector::Ones(1)}, 0.0), Error);
}

TEST(EigHistogram, Examples) {
  const std::vector<double> ones(7, 1.0);
  const Histogram h = eig_histogram(ones, 10);
  EXPECT_EQ(h.counts.back(), 7u);
  EXPECT_EQ(h.bin_edges.size(), 11u);
  const std::vector<double> ends{0.0, 1.0};
  EXPECT_EQ(eig_histogram(ends, 2).counts, (std::vector<std::size_t>{1, 1}));
  EXPECT_THROW(eig_histogram(ends, 1), Error);
  const std::vector<double> wide{-0.5, 0.2, 1.5};
  const Histogram w = eig_histogram(wide, 4);
  EXPECT_DOUBLE_EQ(w.bin_edges.front(), -0.5);
  EXPECT_DOUBLE_EQ(w.bin_edges.back(), 1.5);
  std::size_t total = 0;
  for (auto c : w.counts) total += c;
  EXPECT_EQ(total, 3u);
}

TEST(NoiseSweep, NoiseFreeSmallSpecRecoversExactly) {
  const std::vector<double> sigmas{0.0};
  const SweepResult r = noise_sweep(small_spec(), sigmas, 2, 7, RecoveryOptions{}, 10);
  ASSERT_EQ(r.records.size(), 2u);
  for (const TrialRecord& t : r.records) {
    EXPECT_EQ(t.report.recovered_dim, 8u);
    EXPECT_LE(t.report.mean_angle_rad, 1e-6);
  }
  ASSERT_EQ(r.histograms.size(), 1u);
  EXPECT_EQ(r.histograms[0].counts.back(), 8u);
  EXPECT_EQ(r.histograms[0].counts.front(), 52u);
}

TEST(NoiseSweep, DeterministicAndValidated) {
  const std::vector<double> sigmas{0.1, 0.2};
  const SweepResult a = noise_sweep(small_spec(), sigmas, 2, 3);
  const SweepResult b = noise_sweep(small_spec(), sigmas, 2, 3);
  ASSERT_EQ(a.records.size(), 4u);
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    EXPECT_EQ(a.records[i].report.mean_angle_rad, b.records[i].report.mean_angle_rad);
  }
  EXPECT_THROW(noise_sweep(small_spec(), sigmas, 0, 3), Error);
  const std::vector<double> neg{-1.0};
  EXPECT_THROW(noise_sweep(small_spec(), neg, 1, 3), Error);
}

TEST(CrossValidatePlanted, NoiseFreeAgreement) {
  const std::vector<CrossCheck> checks = cross_validate_planted(small_spec(), 0.0, 3, 11);
  for (const CrossCheck& c : checks) {
    EXPECT_EQ(c.chain_dim, 8u);
    EXPECT_LE(c.max_rad(), 1e-6);
  }
}

}  // namespace
}  // namespace tvd
