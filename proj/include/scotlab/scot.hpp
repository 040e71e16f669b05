// Copyright 2026 The scotlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Straight-consistent student. The projection
//
//   G(x, t, s) = (s/t) x + (1 - s/t) g(x, t, s),   G(x, t, t) = x,
//
// maps a state at time t to time s <= t. Training combines a velocity loss on
// dG/ds (straightness), a soft-consistency loss against a stop-gradient EMA
// shadow (consistency) and an optional denoising regression.

#pragma once

#include "scotlab/data.hpp"
#include "scotlab/nets.hpp"
#include "scotlab/teacher.hpp"
#include "scotlab/tensor_ad.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace scotlab {

enum class DerivativeMode { Exact, FiniteDifference };

inline const char* to_string(DerivativeMode m) {
  return m == DerivativeMode::Exact ? "exact" : "finite-difference";
}

inline DerivativeMode parse_derivative_mode(const std::string& s) {
  if (s == "exact") return DerivativeMode::Exact;
  if (s == "finite-difference") return DerivativeMode::FiniteDifference;
  throw std::invalid_argument("unknown derivative_mode '" + s + "'");
}

struct ProjectionConfig {
  double t_min = 1e-3;
  DerivativeMode derivative_mode = DerivativeMode::Exact;
  double fd_step = 1e-4;

  void validate() const {
    if (!(t_min > 0.0 && t_min < 1.0)) throw std::invalid_argument("t_min must lie in (0, 1)");
    if (!(fd_step > 0.0)) throw std::invalid_argument("fd_step must be positive");
  }
};

/// g callable backed by a student network bound on a tape.
struct StudentNet {
  const ad::ParamBinding& params;
  const Architecture& arch;

  ad::Var operator()(ad::Tape& tape, const ad::Var& x, const ad::Var& t, const ad::Var& s) const {
    return mlp_forward(tape, params, arch, x, t, s);
  }
};

/// x_s = G(x, t, s) on the tape, per row. Rows with s == t return x exactly
/// without touching g's output.
template <class GFn>
ad::Var project(ad::Tape& tape, const GFn& g, const ad::Var& x, const Column& t, const ad::Var& s,
                const ProjectionConfig& cfg) {
  const Eigen::Index n = x.rows();
  const Matrix& sv = s.value();
  if (t.size() != n || sv.rows() != n || sv.cols() != 1) {
    throw std::invalid_argument("project: time columns must match the batch");
  }
  Column mask(n), inv_t(n);
  bool any_guard = false;
  bool all_guard = true;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double si = sv(i, 0);
    const double ti = t(i);
    if (si > ti) {
      throw std::invalid_argument("project: target time s = " + format_double(si) +
                                  " exceeds source time t = " + format_double(ti));
    }
    const bool guard = si == ti;
    if (!guard && ti < cfg.t_min) {
      throw std::invalid_argument("project: source time t = " + format_double(ti) +
                                  " below t_min");
    }
    mask(i) = guard ? 1.0 : 0.0;
    inv_t(i) = guard ? 1.0 : 1.0 / ti;
    any_guard = any_guard || guard;
    all_guard = all_guard && guard;
  }
  if (all_guard) return x;

  ad::Var ratio = tape.scale_rows(s, tape.constant_column(inv_t));
  ad::Var gv = g(tape, x, tape.constant_column(t), s);
  ad::Var out = tape.sub(tape.add(tape.scale_rows(x, ratio), gv), tape.scale_rows(gv, ratio));
  if (any_guard) {
    out = tape.add(tape.scale_rows(x, tape.constant_column(mask)),
                   tape.scale_rows(out, tape.constant_column(Column::Ones(n) - mask)));
  }
  return out;
}

/// Off-tape projection through a student network.
inline Matrix project_values(const ParamSet& params, const Matrix& x, const Column& t,
                             const Column& s, const ProjectionConfig& cfg) {
  ad::Tape tape;
  const ad::ParamBinding b = tape.bind(params.arrays, false);
  return project(tape, StudentNet{b, params.arch}, tape.constant_view(x), t,
                 tape.constant_column(s), cfg)
      .value();
}

// -- projection maps used by sampling and metrics ------------------------------

class ProjectionMap {
 public:
  virtual ~ProjectionMap() = default;
  [[nodiscard]] virtual Matrix project(const Matrix& x, const Column& t, const Column& s) const = 0;
};

class StudentProjection final : public ProjectionMap {
 public:
  StudentProjection(const ParamSet& params, ProjectionConfig cfg) : params_(params), cfg_(cfg) {
    if (params.arch.role != NetRole::Student) {
      throw std::invalid_argument("StudentProjection: expects a student network");
    }
  }
  [[nodiscard]] Matrix project(const Matrix& x, const Column& t, const Column& s) const override {
    return project_values(params_, x, t, s, cfg_);
  }

 private:
  const ParamSet& params_;
  ProjectionConfig cfg_;
};

/// G built from a closed-form g(x, t, s) through the same projection code.
class AnalyticProjection final : public ProjectionMap {
 public:
  using GFunction = std::function<Matrix(const Matrix& x, const Column& t, const Column& s)>;

  explicit AnalyticProjection(GFunction g, ProjectionConfig cfg = {})
      : g_(std::move(g)), cfg_(cfg) {}

  [[nodiscard]] Matrix project(const Matrix& x, const Column& t, const Column& s) const override {
    ad::Tape tape;
    auto g = [this](ad::Tape& tp, const ad::Var& xv, const ad::Var& tv, const ad::Var& sv) {
      return tp.constant(g_(xv.value(), tv.value().col(0), sv.value().col(0)));
    };
    return scotlab::project(tape, g, tape.constant_view(x), t, tape.constant_column(s), cfg_)
        .value();
  }

 private:
  GFunction g_;
  ProjectionConfig cfg_;
};

// -- losses ---------------------------------------------------------------------

/// mean || dG(x_t, t, s)/ds - sign (x1 - x0_hat) ||^2 with x_t on the chord
/// between x0_hat and x1. sign = +1 makes the exact chord interpolant a zero of
/// the loss.
template <class GFn>
ad::Var velocity_loss(ad::Tape& tape, const GFn& g, const Matrix& x1, const Matrix& x0_hat,
                      const Column& t, const Column& s, const ProjectionConfig& cfg,
                      double target_sign = 1.0) {
  const Eigen::Index n = x1.rows();
  if (t.size() != n || s.size() != n) {
    throw std::invalid_argument("velocity_loss: time columns must match the batch");
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(s(i) >= cfg.t_min && s(i) < t(i) && t(i) <= 1.0)) {
      throw std::invalid_argument("velocity_loss: requires t_min <= s < t <= 1");
    }
  }
  ad::Var xt = tape.constant(interpolate(x0_hat, x1, t));
  ad::Var dG;
  if (cfg.derivative_mode == DerivativeMode::Exact) {
    ad::Var s_leaf = tape.constant_column(s);
    ad::Var G = project(tape, g, xt, t, s_leaf, cfg);
    dG = tape.lift_tangent(G, s_leaf);
  } else {
    auto G_of = [&](const ad::Var& s_col) { return project(tape, g, xt, t, s_col, cfg); };
    dG = ad::fd_derivative(tape, G_of, s, cfg.fd_step, Column::Zero(n), t);
  }
  if (!dG.value().allFinite()) {
    throw std::runtime_error("velocity_loss: non-finite dG/ds");
  }
  ad::Var target = tape.constant(target_sign * (x1 - x0_hat));
  return tape.mean_squared_norm(tape.sub(dG, target));
}

struct ConsistencyTerms {
  ad::Var loss;
  Matrix x_est;
  Matrix x_target;
};

/// D(x_target, x_est) with D = mean squared L2 and
///   x_est    = G_sg(G_phi(x_t2, t2, s), s, 0)
///   x_target = G_sg(G_sg(Solver(x_t2, t2 -> t1), t1, s), s, 0).
/// Only the inner G_phi application sees trainable parameters.
template <class GPhi, class GShadow>
ConsistencyTerms consistency_terms(ad::Tape& tape, const GPhi& g_phi, const GShadow& g_shadow,
                                   const VelocityField& teacher, const Matrix& x_t2,
                                   const Column& t2, const Column& t1, const Column& s,
                                   int solver_steps, const ProjectionConfig& cfg) {
  const Eigen::Index n = x_t2.rows();
  if (t2.size() != n || t1.size() != n || s.size() != n) {
    throw std::invalid_argument("consistency_loss: time columns must match the batch");
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (s(i) < 0.0) throw std::invalid_argument("consistency_loss: s below the time grid");
    if (!(s(i) <= t1(i) && t1(i) <= t2(i) && t2(i) <= 1.0)) {
      throw std::invalid_argument("consistency_loss: requires s <= t1 <= t2 <= 1");
    }
  }
  const Column zero = Column::Zero(n);
  ad::Var s_col = tape.constant_column(s);
  ad::Var zero_col = tape.constant_column(zero);

  const Matrix x_t1 = solver_between(teacher, x_t2, t2, t1, solver_steps);
  ad::Var target_s = project(tape, g_shadow, tape.constant(x_t1), t1, s_col, cfg);
  ad::Var target = project(tape, g_shadow, target_s, s, zero_col, cfg);
  ad::Var target_const = tape.constant(target.value());

  ad::Var est_s = project(tape, g_phi, tape.constant(x_t2), t2, s_col, cfg);
  ad::Var est = project(tape, g_shadow, est_s, s, zero_col, cfg);

  return {tape.mean_squared_norm(tape.sub(est, target_const)), est.value(), target.value()};
}

template <class GPhi, class GShadow>
ad::Var consistency_loss(ad::Tape& tape, const GPhi& g_phi, const GShadow& g_shadow,
                         const VelocityField& teacher, const Matrix& x_t2, const Column& t2,
                         const Column& t1, const Column& s, int solver_steps,
                         const ProjectionConfig& cfg) {
  return consistency_terms(tape, g_phi, g_shadow, teacher, x_t2, t2, t1, s, solver_steps, cfg)
      .loss;
}

/// Where the denoising regression reads the network.
///   ToZero:     || G(x_tau, tau, 0) - x0_hat ||^2 = || g(x_tau, tau, 0) - x0_hat ||^2
///   AtSource:   || g(x_tau, tau, tau) - x0_hat ||^2 (the free output at s = t)
enum class DsmTarget { ToZero, AtSource };

inline const char* to_string(DsmTarget d) { return d == DsmTarget::ToZero ? "zero" : "source"; }

inline DsmTarget parse_dsm_target(const std::string& s) {
  if (s == "zero") return DsmTarget::ToZero;
  if (s == "source") return DsmTarget::AtSource;
  throw std::invalid_argument("unknown dsm_target '" + s + "'");
}

/// Clean-target regression from x_tau = tau * noise + (1 - tau) * x0_hat.
template <class GFn>
ad::Var dsm_loss(ad::Tape& tape, const GFn& g, const Matrix& x0_hat, const Column& tau,
                 const Matrix& fresh_noise, const ProjectionConfig& cfg,
                 DsmTarget target = DsmTarget::ToZero) {
  const Eigen::Index n = x0_hat.rows();
  if (tau.size() != n) throw std::invalid_argument("dsm_loss: time column must match the batch");
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(tau(i) >= cfg.t_min && tau(i) <= 1.0)) {
      throw std::invalid_argument("dsm_loss: tau must lie in [t_min, 1]");
    }
  }
  ad::Var x_tau = tape.constant(interpolate(x0_hat, fresh_noise, tau));
  ad::Var out;
  if (target == DsmTarget::ToZero) {
    out = project(tape, g, x_tau, tau, tape.constant_column(Column::Zero(n)), cfg);
  } else {
    ad::Var tau_col = tape.constant_column(tau);
    out = g(tape, x_tau, tau_col, tau_col);
  }
  return tape.mean_squared_norm(tape.sub(out, tape.constant(x0_hat)));
}

// -- weighting ------------------------------------------------------------------

enum class WeightStrategy { Adaptive, Fixed, Normalized };

inline const char* to_string(WeightStrategy w) {
  switch (w) {
    case WeightStrategy::Adaptive: return "adaptive";
    case WeightStrategy::Fixed: return "fixed";
    case WeightStrategy::Normalized: return "normalized";
  }
  return "?";
}

inline WeightStrategy parse_strategy(const std::string& s) {
  if (s == "adaptive") return WeightStrategy::Adaptive;
  if (s == "fixed") return WeightStrategy::Fixed;
  if (s == "normalized") return WeightStrategy::Normalized;
  throw std::invalid_argument("unknown weighting strategy '" + s + "'");
}

struct LossWeights {
  double lambda_vel = 1.0;
  double lambda_con = 1.0;  // initial value; adaptive strategies overwrite it unless 0
  double lambda_dsm = 1.0;
  WeightStrategy strategy = WeightStrategy::Normalized;
  double clip_lo = 0.01;
  double clip_hi = 10.0;
  int refresh_every = 25;
  double eps = 1e-8;

  void validate() const {
    if (lambda_vel < 0 || lambda_con < 0 || lambda_dsm < 0) {
      throw std::invalid_argument("loss weights must be non-negative");
    }
    if (!(clip_lo < clip_hi)) throw std::invalid_argument("clip range requires lo < hi");
    if (clip_lo <= 0) throw std::invalid_argument("clip range lower bound must be positive");
    if (refresh_every < 1) throw std::invalid_argument("refresh_every must be >= 1");
  }
};

/// New lambda_con from the velocity / consistency gradient-norm ratio.
inline double lambda_update(WeightStrategy strategy, double grad_norm_vel, double grad_norm_con,
                            double current, const LossWeights& w = {}) {
  if (grad_norm_vel < 0 || grad_norm_con < 0) {
    throw std::invalid_argument("lambda_update: gradient norms must be non-negative");
  }
  const double ratio = grad_norm_vel / (grad_norm_con + w.eps);
  switch (strategy) {
    case WeightStrategy::Fixed: return current;
    case WeightStrategy::Adaptive: return ratio;
    case WeightStrategy::Normalized: return std::clamp(ratio, w.clip_lo, w.clip_hi);
  }
  return current;
}

// -- combined objective and the training step -----------------------------------

/// How the velocity-loss times are drawn. Grid draws t, s from k / N like the
/// other losses; continuous draws t ~ U(1/N, 1] and s ~ U[t_min, t).
enum class VelocityTimes { Grid, Continuous };

inline const char* to_string(VelocityTimes v) {
  return v == VelocityTimes::Grid ? "grid" : "continuous";
}

inline VelocityTimes parse_velocity_times(const std::string& s) {
  if (s == "grid") return VelocityTimes::Grid;
  if (s == "continuous") return VelocityTimes::Continuous;
  throw std::invalid_argument("unknown velocity_times '" + s + "'");
}

struct DistillHyper {
  int grid_steps = 18;
  VelocityTimes velocity_times = VelocityTimes::Continuous;
  int pair_solver_steps = 50;
  int consistency_solver_steps = 1;
  double velocity_target_sign = 1.0;
  DsmTarget dsm_target = DsmTarget::ToZero;
  ProjectionConfig projection{};
  AdamHyper adam{};
  double grad_clip_norm = 10.0;

  void validate() const {
    if (grid_steps < 2) throw std::invalid_argument("distillation grid needs N >= 2");
    if (pair_solver_steps < 1 || consistency_solver_steps < 1) {
      throw std::invalid_argument("solver step counts must be >= 1");
    }
    if (velocity_target_sign != 1.0 && velocity_target_sign != -1.0) {
      throw std::invalid_argument("velocity_target_sign must be +1 or -1");
    }
    if (!(grad_clip_norm > 0)) throw std::invalid_argument("grad_clip_norm must be positive");
    if (!(adam.lr > 0)) throw std::invalid_argument("learning rate must be positive");
    projection.validate();
  }
};

struct DistillState {
  ParamSet student;
  EmaShadow shadow;
  AdamMoments moments;
  long step = 0;
  LossWeights weights;
  double lambda_con = 1.0;
  std::uint64_t seed = 0;

  static DistillState create(ParamSet student, const LossWeights& weights, double mu,
                             std::uint64_t seed) {
    if (student.arch.role != NetRole::Student) {
      throw std::invalid_argument("DistillState: expects a student network");
    }
    weights.validate();
    DistillState st;
    st.shadow = EmaShadow::of(student.arrays, mu);
    st.moments = AdamMoments::zeros_for(student.arrays);
    st.student = std::move(student);
    st.weights = weights;
    st.lambda_con = weights.lambda_con;
    st.seed = seed;
    return st;
  }
};

/// Unweighted components plus the effective weights used for the total.
struct LossRecord {
  double loss_vel = 0.0;
  double loss_con = 0.0;
  double loss_dsm = 0.0;
  double lambda_vel = 0.0;
  double lambda_con = 0.0;
  double lambda_dsm = 0.0;
  double total = 0.0;
};

struct LossTerms {
  ad::Var velocity;
  ad::Var consistency;
  ad::Var dsm;
};

/// Grid time k / N read from the schedule-equivalent grid.
inline double grid_time(int k, int n) {
  return static_cast<double>(k) / static_cast<double>(n);
}

/// Per-item training times drawn on the grid 0, 1/N, ..., 1.
struct TrainingTimes {
  Column vel_t, vel_s;         // grid: t in [2/N, 1], s in [1/N, t)
  Column con_t2, con_t1, con_s;  // t1 = t2 - 1/N, s in [0, t1]
  Column dsm_tau;              // tau in [1/N, 1]
};

inline TrainingTimes draw_training_times(Eigen::Index batch, int grid_steps, std::uint64_t key,
                                         VelocityTimes velocity = VelocityTimes::Grid,
                                         double t_min = 1e-3) {
  const CounterRng rng(key);
  const int n = grid_steps;
  TrainingTimes tt;
  tt.vel_t.resize(batch);
  tt.vel_s.resize(batch);
  tt.con_t2.resize(batch);
  tt.con_t1.resize(batch);
  tt.con_s.resize(batch);
  tt.dsm_tau.resize(batch);
  for (Eigen::Index i = 0; i < batch; ++i) {
    const auto c = static_cast<std::uint64_t>(i) * 8;
    const long kt = rng.uniform_int(c + 0, 2, n);
    const long ks = rng.uniform_int(c + 1, 1, kt - 1);
    const long k2 = rng.uniform_int(c + 2, 1, n);
    const long k1 = k2 - 1;
    const long kc = rng.uniform_int(c + 3, 0, k1);
    const long kd = rng.uniform_int(c + 4, 1, n);
    if (velocity == VelocityTimes::Grid) {
      tt.vel_t(i) = grid_time(static_cast<int>(kt), n);
      tt.vel_s(i) = grid_time(static_cast<int>(ks), n);
    } else {
      const double lo = 1.0 / n;
      tt.vel_t(i) = 1.0 - (1.0 - lo) * rng.uniform(c + 5);
      tt.vel_s(i) = t_min + (tt.vel_t(i) - t_min) * rng.uniform(c + 6);
    }
    tt.con_t2(i) = grid_time(static_cast<int>(k2), n);
    tt.con_t1(i) = grid_time(static_cast<int>(k1), n);
    tt.con_s(i) = grid_time(static_cast<int>(kc), n);
    tt.dsm_tau(i) = grid_time(static_cast<int>(kd), n);
  }
  return tt;
}

/// Builds the three unweighted loss terms for one batch of noise. Pairs are
/// generated on the fly by the teacher.
inline LossTerms loss_terms(ad::Tape& tape, const ad::ParamBinding& phi,
                            const ad::ParamBinding& shadow, const Architecture& arch,
                            const VelocityField& teacher, const Matrix& x1,
                            const DistillHyper& hp, std::uint64_t step_key) {
  const TrajectoryPair pair = gen_pair(teacher, x1, hp.pair_solver_steps);
  const TrainingTimes tt = draw_training_times(x1.rows(), hp.grid_steps, step_key,
                                               hp.velocity_times, hp.projection.t_min);
  const StudentNet g_phi{phi, arch};
  const StudentNet g_shadow{shadow, arch};

  LossTerms terms;
  terms.velocity = velocity_loss(tape, g_phi, pair.x1, pair.x0_hat, tt.vel_t, tt.vel_s,
                                 hp.projection, hp.velocity_target_sign);
  const Matrix x_t2 = interpolate(pair.x0_hat, pair.x1, tt.con_t2);
  terms.consistency = consistency_loss(tape, g_phi, g_shadow, teacher, x_t2, tt.con_t2,
                                       tt.con_t1, tt.con_s, hp.consistency_solver_steps,
                                       hp.projection);
  const Matrix fresh = sample_noise(x1.rows(), x1.cols(), derive_seed(step_key, "dsm-noise"));
  terms.dsm = dsm_loss(tape, g_phi, pair.x0_hat, tt.dsm_tau, fresh, hp.projection, hp.dsm_target);
  return terms;
}

/// lambda_vel L_vel + lambda_con L_con + lambda_dsm L_dsm; zero-weight terms
/// are left out of the graph.
inline ad::Var combine(ad::Tape& tape, const LossTerms& terms, double lambda_vel,
                       double lambda_con, double lambda_dsm) {
  std::optional<ad::Var> total;
  auto add_term = [&](const ad::Var& term, double lambda) {
    if (lambda == 0.0) return;
    ad::Var w = tape.scale(term, lambda);
    total = total ? tape.add(*total, w) : w;
  };
  add_term(terms.velocity, lambda_vel);
  add_term(terms.consistency, lambda_con);
  add_term(terms.dsm, lambda_dsm);
  if (!total) return tape.scale(terms.velocity, 0.0);
  return *total;
}

inline LossRecord record_of(const LossTerms& terms, const ad::Var& total, double lambda_vel,
                            double lambda_con, double lambda_dsm) {
  LossRecord r;
  r.loss_vel = terms.velocity.value()(0, 0);
  r.loss_con = terms.consistency.value()(0, 0);
  r.loss_dsm = terms.dsm.value()(0, 0);
  r.lambda_vel = lambda_vel;
  r.lambda_con = lambda_con;
  r.lambda_dsm = lambda_dsm;
  r.total = total.value()(0, 0);
  return r;
}

inline std::uint64_t step_key(const DistillState& state, long step) {
  return derive_seed(derive_seed(state.seed, "distill-step"), static_cast<std::uint64_t>(step));
}

/// Loss values at the current parameters for the batch of a given step, with
/// no update. Uses the same random draws distill_step would.
inline LossRecord combined_loss(const DistillState& state, const VelocityField& teacher,
                                const Matrix& x1, const DistillHyper& hp) {
  ad::Tape tape;
  const ad::ParamBinding phi = tape.bind(state.student.arrays, false);
  const ad::ParamBinding shadow = tape.bind(state.shadow.arrays, false);
  const LossTerms terms =
      loss_terms(tape, phi, shadow, state.student.arch, teacher, x1, hp, step_key(state, state.step));
  const auto& w = state.weights;
  ad::Var total = combine(tape, terms, w.lambda_vel, state.lambda_con, w.lambda_dsm);
  return record_of(terms, total, w.lambda_vel, state.lambda_con, w.lambda_dsm);
}

struct StepRecord {
  long step = 0;
  LossRecord losses;
  double grad_norm = 0.0;
  bool skipped = false;
  std::string note;
};

/// Norm of the final layer's weight-gradient.
inline double final_layer_norm(const NamedArrays& grads) {
  return grads.at(grads.size() - 2).value.norm();
}

/// One optimizer step on the combined objective.
inline StepRecord distill_step(DistillState& state, const VelocityField& teacher, const Matrix& x1,
                               const DistillHyper& hp) {
  StepRecord rec;
  rec.step = state.step;
  ad::Tape tape;
  const ad::ParamBinding phi = tape.bind(state.student.arrays, true);
  const ad::ParamBinding shadow = tape.bind(state.shadow.arrays, false);
  LossTerms terms;
  try {
    terms = loss_terms(tape, phi, shadow, state.student.arch, teacher, x1, hp,
                       step_key(state, state.step));
  } catch (const std::runtime_error& e) {
    rec.skipped = true;
    rec.note = e.what();
    state.step += 1;
    return rec;
  }

  const LossWeights& w = state.weights;
  const bool adaptive = w.strategy != WeightStrategy::Fixed && w.lambda_vel > 0.0 && w.lambda_con > 0.0;
  if (adaptive && state.step % w.refresh_every == 0) {
    const double gv = final_layer_norm(tape.grad(terms.velocity, phi));
    const double gc = final_layer_norm(tape.grad(terms.consistency, phi));
    if (std::isfinite(gv) && std::isfinite(gc)) {
      state.lambda_con = lambda_update(w.strategy, gv, gc, state.lambda_con, w);
    }
  }

  ad::Var total = combine(tape, terms, w.lambda_vel, state.lambda_con, w.lambda_dsm);
  rec.losses = record_of(terms, total, w.lambda_vel, state.lambda_con, w.lambda_dsm);
  if (!std::isfinite(rec.losses.total)) {
    rec.skipped = true;
    state.step += 1;
    return rec;
  }

  NamedArrays grads = tape.grad(total, phi);
  rec.grad_norm = global_norm(grads);
  if (!std::isfinite(rec.grad_norm)) {
    rec.skipped = true;
    state.step += 1;
    return rec;
  }
  if (rec.grad_norm > hp.grad_clip_norm) {
    const double factor = hp.grad_clip_norm / rec.grad_norm;
    for (auto& g : grads) g.value *= factor;
  }
  if (!adam_step(state.student.arrays, grads, state.moments, hp.adam, state.step + 1)) {
    rec.skipped = true;
    state.step += 1;
    return rec;
  }
  ema_update(state.shadow, state.student.arrays);
  state.step += 1;
  return rec;
}

}  // namespace scotlab
