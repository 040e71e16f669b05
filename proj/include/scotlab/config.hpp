// Copyright 2026 The scotlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: one JSON document with a mandatory format_version.
// Every field has a default; unknown keys are rejected so typos surface.

#pragma once

#include "scotlab/data.hpp"
#include "scotlab/nets.hpp"
#include "scotlab/sampler.hpp"
#include "scotlab/scot.hpp"

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace scotlab {

inline constexpr int kConfigFormatVersion = 1;

/// Raised for configurations that are malformed or out of range.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class LrSchedule { Constant, Cosine };

inline const char* to_string(LrSchedule s) { return s == LrSchedule::Constant ? "constant" : "cosine"; }

inline LrSchedule parse_lr_schedule(const std::string& s) {
  if (s == "constant") return LrSchedule::Constant;
  if (s == "cosine") return LrSchedule::Cosine;
  throw std::invalid_argument("unknown lr_schedule '" + s + "'");
}

/// Learning rate at 0-based step k of `total`; cosine decays to lr_final.
inline double scheduled_lr(LrSchedule kind, double lr, double lr_final, long k, long total) {
  if (kind == LrSchedule::Constant || total <= 1) return lr;
  const double frac = static_cast<double>(k) / static_cast<double>(total - 1);
  return lr_final + 0.5 * (lr - lr_final) * (1.0 + std::cos(3.14159265358979323846 * frac));
}

struct TeacherConfig {
  Architecture arch = Architecture::teacher_default();
  double lr = 1e-3;
  double lr_final = 1e-5;
  LrSchedule lr_schedule = LrSchedule::Cosine;
  int batch = 256;
  int iters = 5000;
  double ema = 0.999;  // 0 stores the raw weights
  int log_every = 1;
};

struct DistillConfig {
  double lr = 4e-4;
  double lr_final = 4e-6;
  LrSchedule lr_schedule = LrSchedule::Cosine;
  int batch = 256;
  int iters = 4000;
  int grid_steps = 18;
  VelocityTimes velocity_times = VelocityTimes::Continuous;
  double lambda_vel = 1.0;
  double lambda_con = 1.0;
  double lambda_dsm = 0.0;
  WeightStrategy strategy = WeightStrategy::Normalized;
  double clip_lo = 0.01;
  double clip_hi = 10.0;
  int refresh_every = 25;
  DerivativeMode derivative_mode = DerivativeMode::Exact;
  double fd_step = 1e-4;
  int pair_solver_steps = 50;
  int consistency_solver_steps = 1;
  double mu = 0.999;
  double t_min = 1e-3;
  double grad_clip_norm = 10.0;
  double velocity_target_sign = 1.0;
  DsmTarget dsm_target = DsmTarget::ToZero;
  int eval_every = 500;
};

struct EvalConfig {
  std::vector<int> nfe{1, 2};
  std::vector<double> schedule;  // optional custom inference times, replaces nfe
  int n_samples = 4096;
  int n_proj = 128;
  int n_trajectories = 64;
  int n_gap_triples = 1024;
  int teacher_solver_steps = 50;
};

struct CompareConfig {
  std::vector<std::string> strategies{"adaptive", "fixed", "normalized"};
  std::vector<int> checkpoints{250, 500, 750, 1000};
  std::string metric = "sw2";
  int nfe = 1;
};

struct ExportConfig {
  int n = 4;
  int grid_steps = 18;
};

struct PathsConfig {
  std::string teacher_checkpoint;
  std::string student_checkpoint;
};

struct RunConfig {
  std::uint64_t seed = 0;
  DatasetSpec dataset{DatasetName::Ring8, 1.0, 0};
  TeacherConfig teacher;
  Architecture student_arch = Architecture::student_default();
  DistillConfig distill;
  EvalConfig eval;
  CompareConfig compare;
  ExportConfig export_cfg;
  PathsConfig paths;
};

inline const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names{"sw2", "gfd", "straightness", "consistency_gap"};
  return names;
}

// -- derived hyperparameters ----------------------------------------------------

inline ProjectionConfig projection_config(const DistillConfig& d) {
  return {d.t_min, d.derivative_mode, d.fd_step};
}

inline LossWeights loss_weights(const DistillConfig& d) {
  LossWeights w;
  w.lambda_vel = d.lambda_vel;
  w.lambda_con = d.lambda_con;
  w.lambda_dsm = d.lambda_dsm;
  w.strategy = d.strategy;
  w.clip_lo = d.clip_lo;
  w.clip_hi = d.clip_hi;
  w.refresh_every = d.refresh_every;
  return w;
}

inline DistillHyper distill_hyper(const DistillConfig& d) {
  DistillHyper hp;
  hp.grid_steps = d.grid_steps;
  hp.velocity_times = d.velocity_times;
  hp.pair_solver_steps = d.pair_solver_steps;
  hp.consistency_solver_steps = d.consistency_solver_steps;
  hp.velocity_target_sign = d.velocity_target_sign;
  hp.dsm_target = d.dsm_target;
  hp.projection = projection_config(d);
  hp.adam.lr = d.lr;
  hp.grad_clip_norm = d.grad_clip_norm;
  return hp;
}

/// Inference schedules: the custom list when given, otherwise one uniform
/// schedule per NFE.
inline std::vector<StepSchedule> eval_schedules(const EvalConfig& e) {
  std::vector<StepSchedule> out;
  if (!e.schedule.empty()) {
    out.push_back(make_schedule(e.schedule));
    return out;
  }
  for (int n : e.nfe) out.push_back(make_schedule(n));
  return out;
}

// -- validation -----------------------------------------------------------------

namespace detail {

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ValidationError("config: " + what);
}

}  // namespace detail

inline void validate(const RunConfig& c) {
  using detail::require;
  require(c.dataset.scale > 0, "dataset.scale must be positive");
  try {
    c.teacher.arch.validate();
    c.student_arch.validate();
  } catch (const std::invalid_argument& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  require(c.teacher.arch.role == NetRole::Teacher, "teacher.arch must be a teacher architecture");
  require(c.student_arch.role == NetRole::Student, "student.arch must be a student architecture");
  require(c.teacher.arch.data_dim == 2 && c.student_arch.data_dim == 2,
          "data_dim must be 2 for the toy datasets");
  require(c.teacher.lr > 0 && c.teacher.lr_final > 0, "teacher learning rates must be positive");
  require(c.teacher.batch >= 1 && c.teacher.iters >= 1, "teacher batch and iters must be >= 1");
  require(c.teacher.ema >= 0 && c.teacher.ema < 1, "teacher.ema must lie in [0, 1)");
  require(c.teacher.log_every >= 1, "teacher.log_every must be >= 1");

  const DistillConfig& d = c.distill;
  require(d.lr > 0 && d.lr_final > 0, "distill learning rates must be positive");
  require(d.batch >= 1 && d.iters >= 1, "distill batch and iters must be >= 1");
  require(d.grid_steps >= 2, "distill.grid_steps (N) must be >= 2");
  require(d.lambda_vel >= 0 && d.lambda_con >= 0 && d.lambda_dsm >= 0,
          "loss weights must be non-negative");
  require(d.lambda_vel + d.lambda_con + d.lambda_dsm > 0, "at least one loss weight must be > 0");
  require(d.clip_lo > 0 && d.clip_lo < d.clip_hi, "clip range must satisfy 0 < lo < hi");
  require(d.refresh_every >= 1, "distill.refresh_every must be >= 1");
  require(d.fd_step > 0, "distill.fd_step must be positive");
  require(d.pair_solver_steps >= 1, "distill.pair_solver_steps must be >= 1");
  require(d.consistency_solver_steps >= 1, "distill.consistency_solver_steps must be >= 1");
  require(d.mu >= 0 && d.mu <= 1, "distill.mu must lie in [0, 1]");
  require(d.t_min > 0 && d.t_min < 1, "distill.t_min must lie in (0, 1)");
  require(d.t_min < 1.0 / d.grid_steps, "distill.t_min must lie below the first grid time");
  require(d.grad_clip_norm > 0, "distill.grad_clip_norm must be positive");
  require(d.velocity_target_sign == 1.0 || d.velocity_target_sign == -1.0,
          "distill.velocity_target_sign must be +1 or -1");
  require(d.eval_every >= 1, "distill.eval_every must be >= 1");

  const EvalConfig& e = c.eval;
  require(!e.nfe.empty() || !e.schedule.empty(), "eval needs nfe values or a schedule");
  for (int n : e.nfe) {
    require(n >= 1, "eval.nfe values must be >= 1");
    require(d.t_min <= 1.0 / n, "eval.nfe too large for t_min");
  }
  if (!e.schedule.empty()) {
    try {
      make_schedule(e.schedule);
    } catch (const std::invalid_argument& ex) {
      throw ValidationError(std::string("config: eval.") + ex.what());
    }
    for (std::size_t i = 0; i + 1 < e.schedule.size(); ++i) {
      require(e.schedule[i] >= d.t_min, "eval.schedule source times must be >= t_min");
    }
  }
  require(e.n_samples >= 3, "eval.n_samples must be >= 3");
  require(e.n_proj >= 1, "eval.n_proj must be >= 1");
  require(e.n_trajectories >= 1, "eval.n_trajectories must be >= 1");
  require(e.n_gap_triples >= 1, "eval.n_gap_triples must be >= 1");
  require(e.teacher_solver_steps >= 1, "eval.teacher_solver_steps must be >= 1");

  const CompareConfig& m = c.compare;
  require(!m.strategies.empty(), "compare.strategies must not be empty");
  std::set<std::string> seen;
  for (const auto& s : m.strategies) {
    try {
      parse_strategy(s);
    } catch (const std::invalid_argument& ex) {
      throw ValidationError(std::string("config: compare.") + ex.what());
    }
    require(seen.insert(s).second, "compare.strategies must be distinct");
  }
  require(!m.checkpoints.empty(), "compare.checkpoints must not be empty");
  for (std::size_t i = 0; i < m.checkpoints.size(); ++i) {
    require(m.checkpoints[i] >= 1, "compare.checkpoints must be >= 1");
    require(i == 0 || m.checkpoints[i] > m.checkpoints[i - 1],
            "compare.checkpoints must be strictly increasing");
  }
  bool known = false;
  for (const auto& n : metric_names()) known = known || n == m.metric;
  require(known, "compare.metric must be one of sw2, gfd, straightness, consistency_gap");
  require(m.nfe >= 1, "compare.nfe must be >= 1");

  require(c.export_cfg.n >= 1, "export.n must be >= 1");
  require(c.export_cfg.grid_steps >= 2, "export.grid_steps must be >= 2");
  require(d.t_min < 1.0 / c.export_cfg.grid_steps, "export.grid_steps too fine for t_min");
}

// -- serialization --------------------------------------------------------------

inline Json to_json(const RunConfig& c) {
  Json j;
  j["format_version"] = kConfigFormatVersion;
  j["seed"] = c.seed;
  j["dataset"] = {{"name", dataset_name(c.dataset.name)}, {"scale", c.dataset.scale}};
  const TeacherConfig& t = c.teacher;
  j["teacher"] = {{"arch", to_json(t.arch)},       {"lr", t.lr},
                  {"lr_final", t.lr_final},        {"lr_schedule", to_string(t.lr_schedule)},
                  {"batch", t.batch},              {"iters", t.iters},
                  {"ema", t.ema},                  {"log_every", t.log_every}};
  j["student"] = {{"arch", to_json(c.student_arch)}};
  const DistillConfig& d = c.distill;
  j["distill"] = {{"lr", d.lr},
                  {"lr_final", d.lr_final},
                  {"lr_schedule", to_string(d.lr_schedule)},
                  {"batch", d.batch},
                  {"iters", d.iters},
                  {"grid_steps", d.grid_steps},
                  {"velocity_times", to_string(d.velocity_times)},
                  {"lambda_vel", d.lambda_vel},
                  {"lambda_con", d.lambda_con},
                  {"lambda_dsm", d.lambda_dsm},
                  {"strategy", to_string(d.strategy)},
                  {"clip_lo", d.clip_lo},
                  {"clip_hi", d.clip_hi},
                  {"refresh_every", d.refresh_every},
                  {"derivative_mode", to_string(d.derivative_mode)},
                  {"fd_step", d.fd_step},
                  {"pair_solver_steps", d.pair_solver_steps},
                  {"consistency_solver_steps", d.consistency_solver_steps},
                  {"mu", d.mu},
                  {"t_min", d.t_min},
                  {"grad_clip_norm", d.grad_clip_norm},
                  {"velocity_target_sign", d.velocity_target_sign},
                  {"dsm_target", to_string(d.dsm_target)},
                  {"eval_every", d.eval_every}};
  const EvalConfig& e = c.eval;
  j["eval"] = {{"nfe", e.nfe},
               {"schedule", e.schedule},
               {"n_samples", e.n_samples},
               {"n_proj", e.n_proj},
               {"n_trajectories", e.n_trajectories},
               {"n_gap_triples", e.n_gap_triples},
               {"teacher_solver_steps", e.teacher_solver_steps}};
  j["compare"] = {{"strategies", c.compare.strategies},
                  {"checkpoints", c.compare.checkpoints},
                  {"metric", c.compare.metric},
                  {"nfe", c.compare.nfe}};
  j["export"] = {{"n", c.export_cfg.n}, {"grid_steps", c.export_cfg.grid_steps}};
  j["paths"] = {{"teacher_checkpoint", c.paths.teacher_checkpoint},
                {"student_checkpoint", c.paths.student_checkpoint}};
  return j;
}

namespace detail {

/// Reads optional keys from one JSON object and rejects anything unread.
class Section {
 public:
  Section(const Json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j.is_object()) throw ValidationError("config: '" + name_ + "' must be an object");
  }

  ~Section() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& item : j_.items()) {
      if (!read_.count(item.key())) {
        throw ValidationError("config: unknown key '" + name_ + "." + item.key() + "'");
      }
    }
  }
  Section(const Section&) = delete;
  Section& operator=(const Section&) = delete;

  template <class T>
  void get(const char* key, T& out) {
    read_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ValidationError("config: '" + name_ + "." + key + "' has the wrong type");
    }
  }

  template <class Parse, class T>
  void get_enum(const char* key, T& out, Parse parse) {
    std::string text;
    get(key, text);
    if (text.empty()) return;
    try {
      out = parse(text);
    } catch (const std::invalid_argument& e) {
      throw ValidationError("config: " + name_ + "." + key + ": " + e.what());
    }
  }

  [[nodiscard]] const Json* child(const char* key) {
    read_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

 private:
  const Json& j_;
  std::string name_;
  std::set<std::string> read_;
};

inline Architecture arch_from(const Json* j, Architecture fallback, NetRole role) {
  if (!j) return fallback;
  Architecture a;
  try {
    a = architecture_from_json(*j);
  } catch (const std::exception& e) {
    throw ValidationError(std::string("config: bad architecture: ") + e.what());
  }
  if (a.role != role) {
    throw ValidationError(std::string("config: architecture role must be ") + to_string(role));
  }
  return a;
}

}  // namespace detail

/// Parses and validates a configuration document; absent keys keep defaults.
inline RunConfig config_from_json(const Json& j) {
  RunConfig c;
  {
    detail::Section root(j, "config");
    int version = 0;
    if (!j.contains("format_version")) throw ValidationError("config: format_version is required");
    root.get("format_version", version);
    if (version != kConfigFormatVersion) {
      throw ValidationError("config: unsupported format_version " + std::to_string(version));
    }
    root.get("seed", c.seed);
    if (const Json* ds = root.child("dataset")) {
      detail::Section s(*ds, "dataset");
      s.get_enum("name", c.dataset.name, [](const std::string& v) { return parse_dataset_name(v); });
      s.get("scale", c.dataset.scale);
    }
    if (const Json* tj = root.child("teacher")) {
      detail::Section s(*tj, "teacher");
      c.teacher.arch = detail::arch_from(s.child("arch"), c.teacher.arch, NetRole::Teacher);
      s.get("lr", c.teacher.lr);
      s.get("lr_final", c.teacher.lr_final);
      s.get_enum("lr_schedule", c.teacher.lr_schedule, parse_lr_schedule);
      s.get("batch", c.teacher.batch);
      s.get("iters", c.teacher.iters);
      s.get("ema", c.teacher.ema);
      s.get("log_every", c.teacher.log_every);
    }
    if (const Json* sj = root.child("student")) {
      detail::Section s(*sj, "student");
      c.student_arch = detail::arch_from(s.child("arch"), c.student_arch, NetRole::Student);
    }
    if (const Json* dj = root.child("distill")) {
      detail::Section s(*dj, "distill");
      DistillConfig& d = c.distill;
      s.get("lr", d.lr);
      s.get("lr_final", d.lr_final);
      s.get_enum("lr_schedule", d.lr_schedule, parse_lr_schedule);
      s.get("batch", d.batch);
      s.get("iters", d.iters);
      s.get("grid_steps", d.grid_steps);
      s.get_enum("velocity_times", d.velocity_times, parse_velocity_times);
      s.get("lambda_vel", d.lambda_vel);
      s.get("lambda_con", d.lambda_con);
      s.get("lambda_dsm", d.lambda_dsm);
      s.get_enum("strategy", d.strategy, parse_strategy);
      s.get("clip_lo", d.clip_lo);
      s.get("clip_hi", d.clip_hi);
      s.get("refresh_every", d.refresh_every);
      s.get_enum("derivative_mode", d.derivative_mode, parse_derivative_mode);
      s.get("fd_step", d.fd_step);
      s.get("pair_solver_steps", d.pair_solver_steps);
      s.get("consistency_solver_steps", d.consistency_solver_steps);
      s.get("mu", d.mu);
      s.get("t_min", d.t_min);
      s.get("grad_clip_norm", d.grad_clip_norm);
      s.get("velocity_target_sign", d.velocity_target_sign);
      s.get_enum("dsm_target", d.dsm_target, parse_dsm_target);
      s.get("eval_every", d.eval_every);
    }
    if (const Json* ej = root.child("eval")) {
      detail::Section s(*ej, "eval");
      s.get("nfe", c.eval.nfe);
      s.get("schedule", c.eval.schedule);
      s.get("n_samples", c.eval.n_samples);
      s.get("n_proj", c.eval.n_proj);
      s.get("n_trajectories", c.eval.n_trajectories);
      s.get("n_gap_triples", c.eval.n_gap_triples);
      s.get("teacher_solver_steps", c.eval.teacher_solver_steps);
    }
    if (const Json* mj = root.child("compare")) {
      detail::Section s(*mj, "compare");
      s.get("strategies", c.compare.strategies);
      s.get("checkpoints", c.compare.checkpoints);
      s.get("metric", c.compare.metric);
      s.get("nfe", c.compare.nfe);
    }
    if (const Json* xj = root.child("export")) {
      detail::Section s(*xj, "export");
      s.get("n", c.export_cfg.n);
      s.get("grid_steps", c.export_cfg.grid_steps);
    }
    if (const Json* pj = root.child("paths")) {
      detail::Section s(*pj, "paths");
      s.get("teacher_checkpoint", c.paths.teacher_checkpoint);
      s.get("student_checkpoint", c.paths.student_checkpoint);
    }
  }
  c.dataset.seed = derive_seed(c.seed, "dataset");
  validate(c);
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("config: cannot open " + path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  return config_from_json(j);
}

/// 16 hex digits of FNV-1a over the canonical serialization.
inline std::string config_hash(const RunConfig& c) {
  const std::uint64_t h = fnv1a64(to_json(c).dump());
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << h;
  return os.str();
}

}  // namespace scotlab
