// Copyright 2026 The scotlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "scotlab/data.hpp"
#include "scotlab/scot.hpp"
#include "scotlab/teacher.hpp"

#include <cmath>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace scotlab {

enum class ScheduleKind { Uniform, Custom };

/// Strictly decreasing times from 1 down to 0.
struct StepSchedule {
  std::vector<double> times;
  ScheduleKind kind = ScheduleKind::Uniform;

  [[nodiscard]] int steps() const { return static_cast<int>(times.size()) - 1; }

  void validate() const {
    if (times.size() < 2) throw std::invalid_argument("schedule: needs at least two times");
    if (times.front() != 1.0 || times.back() != 0.0) {
      throw std::invalid_argument("schedule: must start at 1 and end at 0");
    }
    for (std::size_t i = 1; i < times.size(); ++i) {
      if (!(times[i] < times[i - 1])) {
        throw std::invalid_argument("schedule: times must be strictly decreasing");
      }
    }
  }
};

/// N + 1 uniform times i / N, i = N..0.
inline StepSchedule make_schedule(int n) {
  if (n < 1) throw std::invalid_argument("make_schedule: N must be >= 1");
  StepSchedule s;
  s.kind = ScheduleKind::Uniform;
  s.times.reserve(static_cast<std::size_t>(n) + 1);
  for (int i = n; i >= 0; --i) s.times.push_back(static_cast<double>(i) / n);
  return s;
}

inline StepSchedule make_schedule(std::vector<double> times) {
  StepSchedule s{std::move(times), ScheduleKind::Custom};
  s.validate();
  return s;
}

struct SampleResult {
  Matrix x0;
  int nfe = 0;
};

/// Few-step generation: x_{t_{n-1}} = G(x_{t_n}, t_n, t_{n-1}) down the schedule.
inline SampleResult sample(const ProjectionMap& map, const Matrix& x1, const StepSchedule& schedule) {
  schedule.validate();
  SampleResult r;
  r.x0 = x1;
  const Eigen::Index n = x1.rows();
  for (std::size_t i = 1; i < schedule.times.size(); ++i) {
    r.x0 = map.project(r.x0, Column::Constant(n, schedule.times[i - 1]),
                       Column::Constant(n, schedule.times[i]));
    ++r.nfe;
  }
  return r;
}

/// Anything that can move a batch of states from one time to an earlier one.
class TrajectoryMap {
 public:
  virtual ~TrajectoryMap() = default;
  [[nodiscard]] virtual Matrix advance(const Matrix& x, double t_from, double t_to) const = 0;
};

class ProjectionTrajectory final : public TrajectoryMap {
 public:
  explicit ProjectionTrajectory(const ProjectionMap& map) : map_(map) {}
  [[nodiscard]] Matrix advance(const Matrix& x, double t_from, double t_to) const override {
    return map_.project(x, Column::Constant(x.rows(), t_from), Column::Constant(x.rows(), t_to));
  }

 private:
  const ProjectionMap& map_;
};

/// Teacher ODE between schedule times, with ceil(steps_per_unit * dt) Heun
/// steps per interval.
class TeacherTrajectory final : public TrajectoryMap {
 public:
  TeacherTrajectory(const VelocityField& field, int steps_per_unit)
      : field_(field), steps_per_unit_(steps_per_unit) {
    if (steps_per_unit < 1) throw std::invalid_argument("TeacherTrajectory: steps must be >= 1");
  }
  [[nodiscard]] Matrix advance(const Matrix& x, double t_from, double t_to) const override {
    const int n = std::max(1, static_cast<int>(std::ceil(steps_per_unit_ * std::abs(t_from - t_to) - 1e-9)));
    return heun_integrate(field_, x, t_from, t_to, n);
  }

 private:
  const VelocityField& field_;
  int steps_per_unit_;
};

/// Batch of trajectories: states[k] is the (B x d) batch at times[k].
struct Trajectory {
  std::vector<double> times;
  std::vector<Matrix> states;

  [[nodiscard]] std::size_t size() const { return times.size(); }

  /// Path of one item as a (len x d) matrix.
  [[nodiscard]] Matrix path(Eigen::Index item) const {
    Matrix p(static_cast<Eigen::Index>(states.size()), states.front().cols());
    for (std::size_t k = 0; k < states.size(); ++k) {
      p.row(static_cast<Eigen::Index>(k)) = states[k].row(item);
    }
    return p;
  }
};

inline Trajectory trace_trajectory(const TrajectoryMap& map, const Matrix& x1,
                                   const StepSchedule& schedule) {
  schedule.validate();
  Trajectory tr;
  tr.times = schedule.times;
  tr.states.reserve(schedule.times.size());
  tr.states.push_back(x1);
  for (std::size_t i = 1; i < schedule.times.size(); ++i) {
    tr.states.push_back(map.advance(tr.states.back(), schedule.times[i - 1], schedule.times[i]));
  }
  return tr;
}

inline void write_trajectory_header(std::ostream& os) { os << "traj_id,t,x0,x1\n"; }

/// One row per recorded state; traj_id is `<tag>_<item>` (or just the item
/// index when `tag` is empty).
inline void write_trajectory_rows(std::ostream& os, const Trajectory& tr, const std::string& tag) {
  if (tr.states.empty()) return;
  const Eigen::Index items = tr.states.front().rows();
  for (Eigen::Index i = 0; i < items; ++i) {
    const std::string id = tag.empty() ? std::to_string(i) : tag + "_" + std::to_string(i);
    for (std::size_t k = 0; k < tr.times.size(); ++k) {
      os << id << ',' << format_double(tr.times[k]) << ',' << format_double(tr.states[k](i, 0))
         << ',' << format_double(tr.states[k](i, 1)) << '\n';
    }
  }
}

}  // namespace scotlab
