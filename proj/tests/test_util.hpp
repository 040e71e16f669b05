// Copyright 2026 The scotlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Shared oracles for the test suites: finite-difference gradients, random
// parameter fills and relative errors.

#pragma once

#include "scotlab/scotlab.hpp"

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>

namespace scotlab::testing {

/// ||a - b|| / max(||a||, ||b||); 0 when both vanish.
inline double rel_err(const Matrix& a, const Matrix& b) {
  const double scale = std::max(a.norm(), b.norm());
  if (scale == 0.0) return 0.0;
  return (a - b).norm() / scale;
}

inline double rel_err(double a, double b) {
  const double scale = std::max(std::abs(a), std::abs(b));
  if (scale == 0.0) return 0.0;
  return std::abs(a - b) / scale;
}

/// Worst per-array relative error.
inline double max_rel_err(const NamedArrays& a, const NamedArrays& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, rel_err(a[i].value, b[i].value));
  return worst;
}

inline Matrix uniform_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed,
                             double lo = -1.0, double hi = 1.0) {
  const CounterRng rng(seed);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    m.data()[i] = lo + (hi - lo) * rng.uniform(static_cast<std::uint64_t>(i));
  }
  return m;
}

inline Column uniform_column(Eigen::Index n, std::uint64_t seed, double lo, double hi) {
  return uniform_matrix(n, 1, seed, lo, hi).col(0);
}

/// Every array (final layer and biases included) drawn uniformly with the
/// fan-in bound times `gain`, so no gradient path is trivially zero.
inline ParamSet random_params(const Architecture& arch, std::uint64_t seed, double gain = 1.0) {
  ParamSet p = init_params(arch, seed);
  for (std::size_t i = 0; i < p.arrays.size(); ++i) {
    Matrix& m = p.arrays[i].value;
    const double fan_in = i % 2 == 0 ? static_cast<double>(m.rows()) : 1.0;
    const double bound = gain * std::sqrt(3.0 / fan_in);
    m = uniform_matrix(m.rows(), m.cols(), derive_seed(seed, i), -bound, bound);
  }
  return p;
}

inline Architecture small_arch(NetRole role, std::vector<int> hidden = {12, 12, 12},
                               Activation act = Activation::Silu) {
  Architecture a = role == NetRole::Student ? Architecture::student_default()
                                            : Architecture::teacher_default();
  a.hidden = std::move(hidden);
  a.activation = act;
  a.embedding.num_frequencies = 8;  // high frequencies stress the derivative paths
  return a;
}

/// Central-difference gradient of a scalar function of parameter arrays.
inline NamedArrays fd_gradient(const std::function<double(const NamedArrays&)>& f,
                               const NamedArrays& params, double h = 1e-5) {
  NamedArrays work = params;
  NamedArrays out = zeros_like(params);
  for (std::size_t a = 0; a < work.size(); ++a) {
    Matrix& m = work[a].value;
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      const double orig = m.data()[i];
      m.data()[i] = orig + h;
      const double up = f(work);
      m.data()[i] = orig - h;
      const double down = f(work);
      m.data()[i] = orig;
      out[a].value.data()[i] = (up - down) / (2.0 * h);
    }
  }
  return out;
}

/// Central-difference gradient with respect to a single matrix.
inline Matrix fd_gradient(const std::function<double(const Matrix&)>& f, const Matrix& x,
                          double h = 1e-5) {
  Matrix work = x;
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double orig = work.data()[i];
    work.data()[i] = orig + h;
    const double up = f(work);
    work.data()[i] = orig - h;
    const double down = f(work);
    work.data()[i] = orig;
    out.data()[i] = (up - down) / (2.0 * h);
  }
  return out;
}

}  // namespace scotlab::testing
