// Copyright 2026 The scotlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Distribution distances and trajectory diagnostics for 2-D point sets.

#pragma once

#include "scotlab/data.hpp"
#include "scotlab/sampler.hpp"
#include "scotlab/scot.hpp"
#include "scotlab/teacher.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace scotlab {

/// Mean over n_proj random unit directions of the 1-D 2-Wasserstein distance
/// between the projected samples.
inline double sliced_wasserstein(const Matrix& a, const Matrix& b, int n_proj, std::uint64_t seed) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument("sliced_wasserstein: point sets must have equal size and dim");
  }
  if (a.rows() < 2) throw std::invalid_argument("sliced_wasserstein: needs at least 2 points");
  if (n_proj < 1) throw std::invalid_argument("sliced_wasserstein: n_proj must be >= 1");
  const Matrix dirs = sample_noise(n_proj, a.cols(), seed);
  std::vector<double> pa(static_cast<std::size_t>(a.rows()));
  std::vector<double> pb(pa.size());
  double total = 0.0;
  for (int p = 0; p < n_proj; ++p) {
    const Column u = dirs.row(p).transpose().normalized();
    Eigen::Map<Column>(pa.data(), a.rows()) = a * u;
    Eigen::Map<Column>(pb.data(), b.rows()) = b * u;
    std::sort(pa.begin(), pa.end());
    std::sort(pb.begin(), pb.end());
    double sq = 0.0;
    for (std::size_t i = 0; i < pa.size(); ++i) sq += (pa[i] - pb[i]) * (pa[i] - pb[i]);
    total += std::sqrt(sq / static_cast<double>(pa.size()));
  }
  return total / n_proj;
}

struct Gaussian2 {
  Eigen::Vector2d mean;
  Eigen::Matrix2d cov;
};

/// Sample mean and unbiased covariance of an n x 2 set.
inline Gaussian2 fit_gaussian(const Matrix& pts) {
  if (pts.cols() != 2) throw std::invalid_argument("fit_gaussian: expects 2-D points");
  if (pts.rows() < 3) throw std::invalid_argument("fit_gaussian: needs at least 3 points");
  Gaussian2 g;
  g.mean = pts.colwise().mean().transpose();
  const Matrix centered = pts.rowwise() - g.mean.transpose();
  g.cov = (centered.transpose() * centered) / static_cast<double>(pts.rows() - 1);
  return g;
}

/// ||mu_a - mu_b||^2 + tr(Ca + Cb - 2 (Ca Cb)^{1/2}) for 2x2 covariances,
/// using tr sqrt(M) = sqrt(tr M + 2 sqrt(det M)).
inline double gaussian_frechet(const Gaussian2& a, const Gaussian2& b) {
  const Eigen::Matrix2d ca = a.cov + 1e-9 * Eigen::Matrix2d::Identity();
  const Eigen::Matrix2d cb = b.cov + 1e-9 * Eigen::Matrix2d::Identity();
  const Eigen::Matrix2d m = ca * cb;
  const double det = std::max(0.0, ca.determinant() * cb.determinant());
  const double tr_sqrt = std::sqrt(std::max(0.0, m.trace() + 2.0 * std::sqrt(det)));
  const double value = (a.mean - b.mean).squaredNorm() + ca.trace() + cb.trace() - 2.0 * tr_sqrt;
  return std::max(0.0, value);
}

inline double gaussian_frechet(const Matrix& a, const Matrix& b) {
  return gaussian_frechet(fit_gaussian(a), fit_gaussian(b));
}

/// Largest perpendicular distance of an interior state from the chord joining
/// the first and last states, over the chord length. `path` is len x d.
inline double straightness(const Matrix& path) {
  if (path.rows() < 3) throw std::invalid_argument("straightness: needs at least 3 states");
  const Eigen::RowVectorXd start = path.row(0);
  const Eigen::RowVectorXd chord = path.row(path.rows() - 1) - start;
  const double len = chord.norm();
  if (len < 1e-12) throw std::invalid_argument("straightness: degenerate chord");
  const Eigen::RowVectorXd u = chord / len;
  double worst = 0.0;
  for (Eigen::Index k = 1; k + 1 < path.rows(); ++k) {
    const Eigen::RowVectorXd d = path.row(k) - start;
    worst = std::max(worst, (d - d.dot(u) * u).norm());
  }
  return worst / len;
}

/// Mean straightness over every item of a traced batch.
inline double mean_straightness(const Trajectory& tr) {
  const Eigen::Index items = tr.states.front().rows();
  double sum = 0.0;
  for (Eigen::Index i = 0; i < items; ++i) sum += straightness(tr.path(i));
  return sum / static_cast<double>(items);
}

/// Points x_t2 at times t2 with an earlier time t1 and a target s <= t1.
struct ConsistencyTriples {
  Matrix x_t2;
  Column t2, t1, s;
};

/// mean || G(x_t1, t1, s) - G(x_t2, t2, s) ||^2 with x_t1 obtained from x_t2
/// by the teacher solver. No stop-gradient: a measurement, not a loss.
inline double consistency_gap(const ProjectionMap& map, const VelocityField& teacher,
                              const ConsistencyTriples& tr, int solver_steps) {
  const Eigen::Index n = tr.x_t2.rows();
  if (tr.t2.size() != n || tr.t1.size() != n || tr.s.size() != n) {
    throw std::invalid_argument("consistency_gap: time columns must match the batch");
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(tr.s(i) >= 0.0 && tr.s(i) <= tr.t1(i) && tr.t1(i) < tr.t2(i))) {
      throw std::invalid_argument("consistency_gap: requires 0 <= s <= t1 < t2");
    }
  }
  const Matrix x_t1 = solver_between(teacher, tr.x_t2, tr.t2, tr.t1, solver_steps);
  const Matrix from_t1 = map.project(x_t1, tr.t1, tr.s);
  const Matrix from_t2 = map.project(tr.x_t2, tr.t2, tr.s);
  return (from_t1 - from_t2).squaredNorm() / static_cast<double>(n);
}

/// Random grid triples on teacher trajectories: k2 in [2, N], k1 in [1, k2-1],
/// s-index in [0, k1]; x_t2 integrates the teacher from fresh noise.
inline ConsistencyTriples make_consistency_triples(const VelocityField& teacher, Eigen::Index n,
                                                   int grid_steps, int solver_steps,
                                                   std::uint64_t seed) {
  if (grid_steps < 2) throw std::invalid_argument("consistency triples need N >= 2");
  ConsistencyTriples tr;
  tr.t2.resize(n);
  tr.t1.resize(n);
  tr.s.resize(n);
  const CounterRng rng(derive_seed(seed, "triple-times"));
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto c = static_cast<std::uint64_t>(i) * 4;
    const long k2 = rng.uniform_int(c, 2, grid_steps);
    const long k1 = rng.uniform_int(c + 1, 1, k2 - 1);
    const long ks = rng.uniform_int(c + 2, 0, k1);
    tr.t2(i) = grid_time(static_cast<int>(k2), grid_steps);
    tr.t1(i) = grid_time(static_cast<int>(k1), grid_steps);
    tr.s(i) = grid_time(static_cast<int>(ks), grid_steps);
  }
  const Matrix x1 = sample_noise(n, 2, derive_seed(seed, "triple-noise"));
  tr.x_t2 = solver_between(teacher, x1, Column::Ones(n), tr.t2, solver_steps);
  return tr;
}

}  // namespace scotlab
