// Copyright 2026 The scotlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Flow-matching teacher: the interpolant x_t = t x1 + (1 - t) x0, the
// regression loss, explicit ODE solvers and noise -> data pair generation.

#pragma once

#include "scotlab/nets.hpp"
#include "scotlab/tensor_ad.hpp"

#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace scotlab {

/// v(x, t) for a batch; t holds one time per row.
class VelocityField {
 public:
  virtual ~VelocityField() = default;
  [[nodiscard]] virtual Matrix velocity(const Matrix& x, const Column& t) const = 0;
};

/// Teacher network as a field. Holds a reference: `params` must outlive it.
class NeuralField final : public VelocityField {
 public:
  explicit NeuralField(const ParamSet& params) : params_(params) {
    if (params.arch.role != NetRole::Teacher) {
      throw std::invalid_argument("NeuralField: expects a teacher network");
    }
  }
  [[nodiscard]] Matrix velocity(const Matrix& x, const Column& t) const override {
    return mlp_evaluate(params_, x, t);
  }
  [[nodiscard]] const ParamSet& params() const { return params_; }

 private:
  const ParamSet& params_;
};

/// v = c. `c` is either one row (shared) or one row per batch item.
class ConstantField final : public VelocityField {
 public:
  explicit ConstantField(Matrix c) : c_(std::move(c)) {}
  [[nodiscard]] Matrix velocity(const Matrix& x, const Column&) const override {
    if (c_.rows() == 1) return c_.replicate(x.rows(), 1);
    if (c_.rows() != x.rows() || c_.cols() != x.cols()) {
      throw std::invalid_argument("ConstantField: per-item velocities do not match the batch");
    }
    return c_;
  }

 private:
  Matrix c_;
};

/// v = -x
class LinearContractionField final : public VelocityField {
 public:
  [[nodiscard]] Matrix velocity(const Matrix& x, const Column&) const override { return -x; }
};

/// Straight field carrying each x1 to its anchor a: v = x1 - a per item.
class ChordField final : public VelocityField {
 public:
  ChordField(const Matrix& x1, const Matrix& anchors) : v_(x1 - anchors) {}
  [[nodiscard]] Matrix velocity(const Matrix& x, const Column& t) const override {
    return ConstantField(v_).velocity(x, t);
  }

 private:
  Matrix v_;
};

// -- interpolant and loss -------------------------------------------------------

inline Matrix interpolate(const Matrix& x0, const Matrix& x1, const Column& t) {
  if (x0.rows() != x1.rows() || x0.cols() != x1.cols() || t.size() != x0.rows()) {
    throw std::invalid_argument("interpolate: shape mismatch");
  }
  for (Eigen::Index i = 0; i < t.size(); ++i) check_time(t(i), "interpolate");
  return (x1.array().colwise() * t.array() + x0.array().colwise() * (1.0 - t.array())).matrix();
}

inline Matrix interpolate(const Matrix& x0, const Matrix& x1, double t) {
  return interpolate(x0, x1, Column::Constant(x0.rows(), t));
}

/// mean_i || (x1_i - x0_i) - v(x_t_i, t_i) ||^2 on the tape.
inline ad::Var fm_loss(ad::Tape& tape, const ad::ParamBinding& theta, const Architecture& arch,
                       const Matrix& x0, const Matrix& x1, const Column& t) {
  if (x0.rows() < 1) throw std::invalid_argument("fm_loss: empty batch");
  ad::Var xt = tape.constant(interpolate(x0, x1, t));
  ad::Var v = mlp_forward(tape, theta, arch, xt, tape.constant_column(t));
  ad::Var target = tape.constant(x1 - x0);
  return tape.mean_squared_norm(tape.sub(target, v));
}

/// Same loss for any field, off-tape.
inline double fm_loss(const VelocityField& field, const Matrix& x0, const Matrix& x1,
                      const Column& t) {
  if (x0.rows() < 1) throw std::invalid_argument("fm_loss: empty batch");
  const Matrix residual = (x1 - x0) - field.velocity(interpolate(x0, x1, t), t);
  return residual.squaredNorm() / static_cast<double>(x0.rows());
}

// -- solvers --------------------------------------------------------------------

enum class SolverKind { Heun, Euler };

inline void check_finite_state(const Matrix& x, double t, const char* where) {
  if (!x.allFinite()) {
    throw std::runtime_error(std::string(where) + ": non-finite state near t = " +
                             format_double(t));
  }
}

namespace detail {

inline Matrix integrate(const VelocityField& field, const Matrix& x, const Column& t_from,
                        const Column& t_to, int n_steps, SolverKind kind,
                        std::vector<std::pair<double, Matrix>>* states) {
  if (n_steps < 1) throw std::invalid_argument("heun_integrate: n_steps must be >= 1");
  if (t_from.size() != x.rows() || t_to.size() != x.rows()) {
    throw std::invalid_argument("heun_integrate: time columns must match the batch");
  }
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    check_time(t_from(i), "heun_integrate");
    check_time(t_to(i), "heun_integrate");
  }
  const Column span = t_to - t_from;
  const Column h = span / static_cast<double>(n_steps);
  Matrix state = x;
  Column t = t_from;
  for (int k = 0; k < n_steps; ++k) {
    const Column t_next = t_from + span * (static_cast<double>(k + 1) / n_steps);
    const Matrix k1 = field.velocity(state, t);
    if (kind == SolverKind::Euler) {
      state += (k1.array().colwise() * h.array()).matrix();
    } else {
      const Matrix predictor = state + (k1.array().colwise() * h.array()).matrix();
      const Matrix k2 = field.velocity(predictor, t_next);
      state += ((k1 + k2).array().colwise() * (0.5 * h).array()).matrix();
    }
    check_finite_state(state, t_next(0), "heun_integrate");
    t = t_next;
    if (states) states->emplace_back(t_next(0), state);
  }
  return state;
}

}  // namespace detail

/// Integrates dx/dt = v(x, t) from t_from to t_to (per row, either direction)
/// with n_steps uniform steps.
inline Matrix heun_integrate(const VelocityField& field, const Matrix& x, const Column& t_from,
                             const Column& t_to, int n_steps,
                             SolverKind kind = SolverKind::Heun) {
  return detail::integrate(field, x, t_from, t_to, n_steps, kind, nullptr);
}

inline Matrix heun_integrate(const VelocityField& field, const Matrix& x, double t_from,
                             double t_to, int n_steps, SolverKind kind = SolverKind::Heun) {
  return heun_integrate(field, x, Column::Constant(x.rows(), t_from),
                        Column::Constant(x.rows(), t_to), n_steps, kind);
}

/// Noise point, the teacher's clean endpoint, and optionally the states at
/// every solver step.
struct TrajectoryPair {
  Matrix x1;
  Matrix x0_hat;
  int solver_steps = 0;
  std::vector<std::pair<double, Matrix>> states;
};

/// x0_hat = x1 + int_1^0 v dt with n_steps Heun steps.
inline TrajectoryPair gen_pair(const VelocityField& field, const Matrix& x1, int n_steps,
                               bool keep_states = false) {
  if (n_steps < 1) throw std::invalid_argument("gen_pair: n_steps must be >= 1");
  TrajectoryPair pair;
  pair.x1 = x1;
  pair.solver_steps = n_steps;
  if (!keep_states) {
    pair.x0_hat = heun_integrate(field, x1, 1.0, 0.0, n_steps);
    return pair;
  }
  pair.states.emplace_back(1.0, x1);
  const Eigen::Index n = x1.rows();
  pair.x0_hat = detail::integrate(field, x1, Column::Constant(n, 1.0), Column::Zero(n), n_steps,
                                  SolverKind::Heun, &pair.states);
  return pair;
}

/// Teacher ODE from t2 down to t1 (per row). Rows with t1 == t2 pass through
/// unchanged; all-degenerate batches skip integration entirely.
inline Matrix solver_between(const VelocityField& field, const Matrix& x_t2, const Column& t2,
                             const Column& t1, int n_steps) {
  if (t2.size() != x_t2.rows() || t1.size() != x_t2.rows()) {
    throw std::invalid_argument("solver_between: time columns must match the batch");
  }
  bool degenerate = true;
  for (Eigen::Index i = 0; i < t2.size(); ++i) {
    if (t1(i) > t2(i)) {
      throw std::invalid_argument("solver_between: requires t1 <= t2 (got t1 = " +
                                  format_double(t1(i)) + ", t2 = " + format_double(t2(i)) + ")");
    }
    degenerate = degenerate && t1(i) == t2(i);
  }
  if (degenerate) return x_t2;
  return heun_integrate(field, x_t2, t2, t1, n_steps);
}

inline Matrix solver_between(const VelocityField& field, const Matrix& x_t2, double t2, double t1,
                             int n_steps) {
  return solver_between(field, x_t2, Column::Constant(x_t2.rows(), t2),
                        Column::Constant(x_t2.rows(), t1), n_steps);
}

}  // namespace scotlab
