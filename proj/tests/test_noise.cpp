#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "spdelab/noise.hpp"

using namespace spdelab;

TEST(Noise, SameSeedSamePath) {
  const NoiseConfig cfg{3, 200, 1.0, 0.0};
  const WienerPath a = sample_path(cfg, 42, 5);
  const WienerPath b = sample_path(cfg, 42, 5);
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t j = 0; j < 200; ++j) EXPECT_EQ(a.increment(k, j), b.increment(k, j));
}

TEST(Noise, IndicesGiveDifferentPaths) {
  const NoiseConfig cfg{1, 50, 1.0, 0.0};
  const WienerPath a = sample_path(cfg, 42, 0);
  const WienerPath b = sample_path(cfg, 42, 1);
  const WienerPath c = sample_path(cfg, 43, 0);
  EXPECT_NE(a.cumulative(0, 50), b.cumulative(0, 50));
  EXPECT_NE(a.cumulative(0, 50), c.cumulative(0, 50));
}

TEST(Noise, CumulativeIsRunningSum) {
  const NoiseConfig cfg{2, 64, 0.5, 0.0};
  const WienerPath w = sample_path(cfg, 7, 0);
  for (std::size_t k = 0; k < 2; ++k) {
    EXPECT_EQ(w.cumulative(k, 0), 0.0);
    double acc = 0.0;
    for (std::size_t j = 0; j < 64; ++j) {
      acc += w.increment(k, j);
      EXPECT_EQ(w.cumulative(k, j + 1), acc);
    }
  }
}

TEST(Noise, IncrementMoments) {
  // E ΔW = 0, E ΔW² = dt; 4 x 50000 draws put both within a few standard errors
  const NoiseConfig cfg{4, 50000, 2.0, 0.0};
  const WienerPath w = sample_path(cfg, 11, 0);
  const double dt = cfg.dt();
  const double n = 4.0 * 50000.0;
  double s1 = 0.0, s2 = 0.0, s4 = 0.0;
  for (std::size_t k = 0; k < 4; ++k)
    for (std::size_t j = 0; j < 50000; ++j) {
      const double z = w.increment(k, j) / std::sqrt(dt);
      s1 += z;
      s2 += z * z;
      s4 += z * z * z * z;
    }
  EXPECT_LT(std::abs(s1 / n), 5.0 / std::sqrt(n));
  EXPECT_LT(std::abs(s2 / n - 1.0), 5.0 * std::sqrt(2.0 / n));
  EXPECT_LT(std::abs(s4 / n - 3.0), 5.0 * std::sqrt(96.0 / n));
}

TEST(Noise, ModesUncorrelated) {
  const NoiseConfig cfg{2, 40000, 1.0, 0.0};
  const WienerPath w = sample_path(cfg, 3, 0);
  double cross = 0.0;
  for (std::size_t j = 0; j < 40000; ++j) cross += w.increment(0, j) * w.increment(1, j) / cfg.dt();
  EXPECT_LT(std::abs(cross / 40000.0), 5.0 / std::sqrt(40000.0));
}

TEST(Noise, ViewRefusesFuture) {
  const NoiseConfig cfg{1, 100, 1.0, 0.0};
  const WienerPath w = sample_path(cfg, 1, 0);
  const PathView v = restrict(w, 0.5);
  EXPECT_EQ(v.value(0, 0.5), w.cumulative(0, 50));
  EXPECT_EQ(v.value(0, 0.25), w.cumulative(0, 25));
  EXPECT_THROW(v.value(0, 0.51), AdaptednessViolation);
  EXPECT_THROW(v.at_step(0, 51), AdaptednessViolation);
  EXPECT_THROW(PathView().value(0, 0.0), ArgumentError);
  EXPECT_THROW(restrict(w, 1.5), ArgumentError);
}

TEST(Noise, OuCompanionRecursion) {
  const NoiseConfig cfg{1, 100, 1.0, 2.0};
  const WienerPath w = sample_path(cfg, 9, 0);
  const double decay = std::exp(-2.0 * 0.01);
  double y = 0.0;
  for (std::size_t j = 0; j < 100; ++j) {
    y = decay * y + w.increment(0, j);
    EXPECT_NEAR(w.ou(0, j + 1), y, 1e-15);
  }
  const WienerPath plain = sample_path(NoiseConfig{1, 10, 1.0, 0.0}, 9, 0);
  EXPECT_THROW(plain.ou(0, 1), ArgumentError);
}

TEST(Noise, InvalidConfig) {
  EXPECT_THROW(sample_path(NoiseConfig{0, 10, 1.0, 0.0}, 1, 0), ArgumentError);
  EXPECT_THROW(sample_path(NoiseConfig{1, 0, 1.0, 0.0}, 1, 0), ArgumentError);
  EXPECT_THROW(sample_path(NoiseConfig{1, 10, -1.0, 0.0}, 1, 0), ArgumentError);
  EXPECT_THROW(WienerPath(NoiseConfig{1, 10, 1.0, 0.0}, std::vector<double>(9)), ArgumentError);
}

TEST(Noise, PathCsvHasHeaderAndRows) {
  const WienerPath w = sample_path(NoiseConfig{2, 4, 1.0, 0.0}, 1, 0);
  std::ostringstream out;
  write_path_csv(w, out);
  std::istringstream in(out.str());
  std::string line;
  std::size_t rows = 0;
  std::getline(in, line);
  EXPECT_EQ(line, "step,t,W1,W2");
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 5u);
}
