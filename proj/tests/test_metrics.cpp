// Copyright 2026 The scotlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include <numbers>

namespace scotlab {
namespace {

Matrix row(double a, double b) { return (Matrix(1, 2) << a, b).finished(); }

/// Frechet distance with the matrix square root taken by eigendecomposition.
double frechet_by_eigen(const Gaussian2& a, const Gaussian2& b) {
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> ea(a.cov);
  const Eigen::Matrix2d ra = ea.eigenvectors() * ea.eigenvalues().cwiseSqrt().asDiagonal() *
                             ea.eigenvectors().transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> em(ra * b.cov * ra);
  const double tr_sqrt = em.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  return (a.mean - b.mean).squaredNorm() + a.cov.trace() + b.cov.trace() - 2.0 * tr_sqrt;
}

Eigen::Matrix2d spd(std::uint64_t seed) {
  const Matrix m = testing::uniform_matrix(2, 2, seed);
  return m * m.transpose() + 0.1 * Eigen::Matrix2d::Identity();
}

TEST(SlicedWasserstein, IdenticalSetsAreZero) {
  const Matrix a = sample_noise(256, 2, 1);
  EXPECT_EQ(sliced_wasserstein(a, a, 64, 2), 0.0);
}

TEST(SlicedWasserstein, PointMassesAverageAbsCosine) {
  const Matrix a = Matrix::Zero(50, 2);
  const Matrix b = row(1, 0).replicate(50, 1);
  const double d = sliced_wasserstein(a, b, 20000, 3);
  EXPECT_GT(d, 0.0);
  EXPECT_LE(d, 1.0);
  EXPECT_NEAR(d, 2.0 / std::numbers::pi, 0.01);
}

TEST(SlicedWasserstein, Symmetric) {
  const Matrix a = sample_noise(200, 2, 4);
  const Matrix b = sample_dataset({DatasetName::Ring8, 1.0, 5}, 200);
  EXPECT_EQ(sliced_wasserstein(a, b, 32, 6), sliced_wasserstein(b, a, 32, 6));
}

TEST(SlicedWasserstein, TranslationEqualsProjectedShift) {
  const Matrix a = sample_noise(100, 2, 7);
  const Matrix b = a.rowwise() + Eigen::RowVector2d(0.0, 2.0);
  EXPECT_NEAR(sliced_wasserstein(a, b, 20000, 8), 2.0 * 2.0 / std::numbers::pi, 0.02);
}

TEST(SlicedWasserstein, RejectsBadInputs) {
  const Matrix a = sample_noise(10, 2, 9);
  EXPECT_THROW(sliced_wasserstein(a, sample_noise(11, 2, 9), 4, 1), std::invalid_argument);
  EXPECT_THROW(sliced_wasserstein(a, a, 0, 1), std::invalid_argument);
  EXPECT_THROW(sliced_wasserstein(a.topRows(1), a.topRows(1), 4, 1), std::invalid_argument);
}

TEST(GaussianFrechet, IdenticalIsZero) {
  const Gaussian2 g{Eigen::Vector2d(0.3, -1.0), spd(10)};
  EXPECT_NEAR(gaussian_frechet(g, g), 0.0, 1e-12);
}

TEST(GaussianFrechet, MeanOffsetWithEqualCovariance) {
  const Eigen::Matrix2d c = spd(11);
  const Gaussian2 a{Eigen::Vector2d(0.0, 0.0), c};
  const Gaussian2 b{Eigen::Vector2d(3.0, 4.0), c};
  EXPECT_NEAR(gaussian_frechet(a, b), 25.0, 1e-8);
}

TEST(GaussianFrechet, IsotropicScales) {
  for (auto [s1, s2] : {std::pair{1.0, 2.0}, std::pair{0.3, 0.8}, std::pair{1.5, 1.5}}) {
    const Gaussian2 a{Eigen::Vector2d::Zero(), s1 * s1 * Eigen::Matrix2d::Identity()};
    const Gaussian2 b{Eigen::Vector2d::Zero(), s2 * s2 * Eigen::Matrix2d::Identity()};
    EXPECT_NEAR(gaussian_frechet(a, b), 2.0 * (s1 - s2) * (s1 - s2), 1e-8);
    EXPECT_NEAR(frechet_by_eigen(a, b), 2.0 * (s1 - s2) * (s1 - s2), 1e-12);
  }
}

TEST(GaussianFrechet, MatchesEigendecompositionOracle) {
  for (std::uint64_t k = 0; k < 50; ++k) {
    const Gaussian2 a{testing::uniform_matrix(2, 1, 100 + k).col(0), spd(200 + k)};
    const Gaussian2 b{testing::uniform_matrix(2, 1, 300 + k).col(0), spd(400 + k)};
    EXPECT_NEAR(gaussian_frechet(a, b), frechet_by_eigen(a, b), 1e-7) << k;
  }
}

TEST(GaussianFrechet, FitFromSamples) {
  const Matrix pts = (Matrix(4, 2) << 0, 0, 2, 0, 0, 2, 2, 2).finished();
  const Gaussian2 g = fit_gaussian(pts);
  EXPECT_DOUBLE_EQ(g.mean(0), 1.0);
  EXPECT_DOUBLE_EQ(g.cov(0, 0), 4.0 / 3.0);
  EXPECT_DOUBLE_EQ(g.cov(0, 1), 0.0);
  EXPECT_THROW(fit_gaussian(pts.topRows(2)), std::invalid_argument);
}

TEST(Straightness, CollinearIsZero) {
  const Matrix p = (Matrix(4, 2) << 0, 0, 1, 1, 2, 2, 3, 3).finished();
  EXPECT_NEAR(straightness(p), 0.0, 1e-15);
}

TEST(Straightness, TriangleExample) {
  const Matrix p = (Matrix(3, 2) << 0, 0, 0.5, 0.5, 1, 0).finished();
  EXPECT_DOUBLE_EQ(straightness(p), 0.5);
}

TEST(Straightness, RejectsDegeneratePaths) {
  EXPECT_THROW(straightness(Matrix::Zero(2, 2)), std::invalid_argument);
  EXPECT_THROW(straightness(Matrix::Zero(3, 2)), std::invalid_argument);
}

TEST(Straightness, MeanOverTrajectoryBatch) {
  Trajectory tr;
  tr.times = {1.0, 0.5, 0.0};
  tr.states = {Matrix::Zero(2, 2), (Matrix(2, 2) << 0.5, 0.5, 0.5, 0.0).finished(),
               (Matrix(2, 2) << 1, 0, 1, 0).finished()};
  EXPECT_DOUBLE_EQ(mean_straightness(tr), 0.25);
}

TEST(ConsistencyGap, ExactMapIsZero) {
  // Constant field c: the exact map is G(x, t, s) = x - (t - s) c.
  const Matrix c = row(0.4, -0.9);
  const ConstantField teacher(c);
  const AnalyticProjection map([c](const Matrix& x, const Column& t, const Column&) {
    return Matrix(x - t * c);
  });
  const ConsistencyTriples tr = make_consistency_triples(teacher, 256, 18, 1, 5);
  EXPECT_LT(consistency_gap(map, teacher, tr, 1), 1e-12);
}

TEST(ConsistencyGap, TargetAtEarlierTimeIsTrackingError) {
  const ParamSet p = testing::random_params(testing::small_arch(NetRole::Student), 12, 0.5);
  const StudentProjection map(p, {});
  const ParamSet tp = testing::random_params(testing::small_arch(NetRole::Teacher), 13, 0.5);
  const NeuralField teacher(tp);
  ConsistencyTriples tr = make_consistency_triples(teacher, 64, 18, 5, 14);
  tr.s = tr.t1;
  const Matrix x_t1 = solver_between(teacher, tr.x_t2, tr.t2, tr.t1, 5);
  const double expect = (x_t1 - map.project(tr.x_t2, tr.t2, tr.t1)).squaredNorm() / 64.0;
  EXPECT_DOUBLE_EQ(consistency_gap(map, teacher, tr, 5), expect);
}

TEST(ConsistencyGap, TriplesRespectOrdering) {
  const ConstantField teacher(row(1, 1));
  const ConsistencyTriples tr = make_consistency_triples(teacher, 500, 18, 1, 15);
  for (Eigen::Index i = 0; i < 500; ++i) {
    ASSERT_LT(tr.t1(i), tr.t2(i));
    ASSERT_LE(tr.s(i), tr.t1(i));
    ASSERT_GE(tr.s(i), 0.0);
    ASSERT_GE(tr.t1(i), 1.0 / 18 - 1e-15);
  }
  EXPECT_THROW(consistency_gap(AnalyticProjection([](const Matrix& x, const Column&,
                                                     const Column&) { return x; }),
                               teacher,
                               ConsistencyTriples{tr.x_t2, tr.t1, tr.t1, tr.s}, 1),
               std::invalid_argument);
}

}  // namespace
}  // namespace scotlab
