// Copyright 2026 The scotlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Experiment drivers behind the command-line verbs. Every random draw derives
// from the config's root seed by component name, so reruns of the same config
// write byte-identical files.

#pragma once

#include "scotlab/config.hpp"
#include "scotlab/data.hpp"
#include "scotlab/metrics.hpp"
#include "scotlab/nets.hpp"
#include "scotlab/sampler.hpp"
#include "scotlab/scot.hpp"
#include "scotlab/teacher.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace scotlab {

inline constexpr const char* kVersion = "0.1.0";

namespace fs = std::filesystem;

// -- files ----------------------------------------------------------------------

inline void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create directory " + dir.string() + ": " + ec.message());
}

inline std::ofstream open_output(const fs::path& path) {
  ensure_dir(path.parent_path().empty() ? fs::path(".") : path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  return out;
}

inline void write_json(const fs::path& path, const Json& j) {
  std::ofstream out = open_output(path);
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

inline Json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

inline ParamSet load_checkpoint(const fs::path& path, NetRole role) {
  const Json j = read_json(path);
  try {
    return params_from_checkpoint(j, role);
  } catch (const std::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

inline Json manifest_json(const std::string& command, const RunConfig& cfg) {
  Json j;
  j["command"] = command;
  j["config_hash"] = config_hash(cfg);
  j["seed"] = cfg.seed;
  j["versions"] = {{"scotlab", kVersion},
                   {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." +
                                 std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                 std::to_string(EIGEN_MINOR_VERSION)},
                   {"checkpoint_format", kCheckpointFormatVersion},
                   {"config_format", kConfigFormatVersion}};
  j["config"] = to_json(cfg);
  return j;
}

// -- seeds ----------------------------------------------------------------------

inline std::uint64_t stream(const RunConfig& cfg, const char* name) {
  return derive_seed(cfg.seed, name);
}

inline DatasetSpec dataset_stream(const RunConfig& cfg, const char* name) {
  DatasetSpec d = cfg.dataset;
  d.seed = derive_seed(cfg.dataset.seed, name);
  return d;
}

// -- teacher --------------------------------------------------------------------

struct TeacherRun {
  ParamSet params;  // EMA weights when teacher.ema > 0
  std::vector<double> losses;
};

inline TeacherRun train_teacher(const RunConfig& cfg, std::ostream* log = nullptr) {
  const TeacherConfig& tc = cfg.teacher;
  TeacherRun run;
  ParamSet theta = init_params(tc.arch, stream(cfg, "teacher-init"));
  AdamMoments moments = AdamMoments::zeros_for(theta.arrays);
  EmaShadow ema = EmaShadow::of(theta.arrays, tc.ema);
  const std::uint64_t noise_root = stream(cfg, "teacher-noise");
  const std::uint64_t time_root = stream(cfg, "teacher-time");
  run.losses.reserve(static_cast<std::size_t>(tc.iters));
  AdamHyper hp;
  for (long k = 0; k < tc.iters; ++k) {
    DatasetSpec ds = dataset_stream(cfg, "teacher-data");
    ds.seed = derive_seed(ds.seed, static_cast<std::uint64_t>(k));
    const Matrix x0 = sample_dataset(ds, tc.batch);
    const Matrix x1 = sample_noise(tc.batch, 2, derive_seed(noise_root, static_cast<std::uint64_t>(k)));
    const CounterRng trng(derive_seed(time_root, static_cast<std::uint64_t>(k)));
    Column t(tc.batch);
    for (Eigen::Index i = 0; i < t.size(); ++i) t(i) = trng.uniform(static_cast<std::uint64_t>(i));

    ad::Tape tape;
    const ad::ParamBinding b = tape.bind(theta.arrays, true);
    const ad::Var loss = fm_loss(tape, b, tc.arch, x0, x1, t);
    const double value = loss.value()(0, 0);
    if (!std::isfinite(value)) {
      throw std::runtime_error("teacher training diverged at step " + std::to_string(k));
    }
    run.losses.push_back(value);
    hp.lr = scheduled_lr(tc.lr_schedule, tc.lr, tc.lr_final, k, tc.iters);
    if (!adam_step(theta.arrays, tape.grad(loss, b), moments, hp, k + 1)) {
      throw std::runtime_error("teacher training: non-finite gradient at step " + std::to_string(k));
    }
    ema_update(ema, theta.arrays);
    if (log && (k + 1) % 500 == 0) {
      *log << "teacher step " << (k + 1) << " fm_loss " << format_double(value) << '\n';
    }
  }
  if (tc.ema > 0) theta.arrays = ema.arrays;
  run.params = std::move(theta);
  return run;
}

// -- evaluation -----------------------------------------------------------------

/// Fixed evaluation inputs shared by every evaluation of one run.
struct EvalContext {
  Matrix data;        // held-out reference samples
  Matrix noise;       // generator inputs
  Matrix traj_noise;  // starting points of traced trajectories
  ConsistencyTriples triples;
  StepSchedule grid;  // schedule used for straightness traces
  std::vector<StepSchedule> schedules;
  int n_proj = 128;
  std::uint64_t proj_seed = 0;
  int teacher_solver_steps = 50;
  ProjectionConfig projection;
};

inline EvalContext make_eval_context(const RunConfig& cfg, const VelocityField& teacher) {
  const EvalConfig& e = cfg.eval;
  EvalContext ctx;
  ctx.data = sample_dataset(dataset_stream(cfg, "eval-data"), e.n_samples);
  ctx.noise = sample_noise(e.n_samples, 2, stream(cfg, "eval-noise"));
  ctx.traj_noise = sample_noise(e.n_trajectories, 2, stream(cfg, "eval-trajectories"));
  ctx.triples = make_consistency_triples(teacher, e.n_gap_triples, cfg.distill.grid_steps,
                                         e.teacher_solver_steps, stream(cfg, "eval-triples"));
  ctx.grid = make_schedule(cfg.distill.grid_steps);
  ctx.schedules = eval_schedules(e);
  ctx.n_proj = e.n_proj;
  ctx.proj_seed = stream(cfg, "eval-projections");
  ctx.teacher_solver_steps = e.teacher_solver_steps;
  ctx.projection = projection_config(cfg.distill);
  return ctx;
}

struct SampleMetrics {
  double sw2 = 0.0;
  double gfd = 0.0;
};

inline SampleMetrics sample_metrics(const Matrix& samples, const EvalContext& ctx) {
  return {sliced_wasserstein(samples, ctx.data, ctx.n_proj, ctx.proj_seed),
          gaussian_frechet(samples, ctx.data)};
}

struct EvalRow {
  long step = 0;
  int nfe = 0;
  double sw2 = 0.0;
  double gfd = 0.0;
  double straightness = 0.0;
  double consistency_gap = 0.0;
};

/// One row per inference schedule. Straightness and the consistency gap do
/// not depend on the schedule and repeat across rows.
inline std::vector<EvalRow> evaluate_student(const ParamSet& student, const VelocityField& teacher,
                                             const EvalContext& ctx, long step) {
  const StudentProjection map(student, ctx.projection);
  const double straight =
      mean_straightness(trace_trajectory(ProjectionTrajectory(map), ctx.traj_noise, ctx.grid));
  const double gap = consistency_gap(map, teacher, ctx.triples, ctx.teacher_solver_steps);
  std::vector<EvalRow> rows;
  for (const auto& schedule : ctx.schedules) {
    const SampleResult r = sample(map, ctx.noise, schedule);
    const SampleMetrics m = sample_metrics(r.x0, ctx);
    rows.push_back({step, r.nfe, m.sw2, m.gfd, straight, gap});
  }
  return rows;
}

struct TeacherMetrics {
  double sw2 = 0.0;
  double gfd = 0.0;
  double straightness = 0.0;
  double sw2_floor = 0.0;
};

inline TeacherMetrics evaluate_teacher(const VelocityField& teacher, const RunConfig& cfg,
                                       const EvalContext& ctx) {
  TeacherMetrics tm;
  const Matrix samples = heun_integrate(teacher, ctx.noise, 1.0, 0.0, ctx.teacher_solver_steps);
  const SampleMetrics m = sample_metrics(samples, ctx);
  tm.sw2 = m.sw2;
  tm.gfd = m.gfd;
  tm.straightness = mean_straightness(trace_trajectory(
      TeacherTrajectory(teacher, ctx.teacher_solver_steps), ctx.traj_noise, ctx.grid));
  const Matrix a = sample_dataset(dataset_stream(cfg, "floor-a"), ctx.data.rows());
  const Matrix b = sample_dataset(dataset_stream(cfg, "floor-b"), ctx.data.rows());
  tm.sw2_floor = sliced_wasserstein(a, b, ctx.n_proj, ctx.proj_seed);
  return tm;
}

inline Json to_json(const TeacherMetrics& m) {
  return {{"sw2", m.sw2}, {"gfd", m.gfd}, {"straightness", m.straightness}, {"sw2_floor", m.sw2_floor}};
}

inline Json to_json(const EvalRow& r) {
  return {{"step", r.step},
          {"nfe", r.nfe},
          {"sw2", r.sw2},
          {"gfd", r.gfd},
          {"straightness", r.straightness},
          {"consistency_gap", r.consistency_gap}};
}

inline double metric_of(const EvalRow& r, const std::string& name) {
  if (name == "sw2") return r.sw2;
  if (name == "gfd") return r.gfd;
  if (name == "straightness") return r.straightness;
  if (name == "consistency_gap") return r.consistency_gap;
  throw std::invalid_argument("unknown metric '" + name + "'");
}

// -- distillation ---------------------------------------------------------------

struct MetricsRow {
  EvalRow eval;
  LossRecord losses;
};

struct DistillRun {
  DistillState state;
  std::vector<StepRecord> log;
  std::vector<MetricsRow> metrics;
};

inline Matrix distill_batch(const RunConfig& cfg, long step) {
  return sample_noise(cfg.distill.batch, 2,
                      derive_seed(stream(cfg, "distill-noise"), static_cast<std::uint64_t>(step)));
}

/// Runs cfg.distill.iters steps, evaluating before the first step and after
/// every step listed in eval_steps.
inline DistillRun distill_loop(const RunConfig& cfg, const ParamSet& teacher_params,
                               const EvalContext& ctx, const std::vector<long>& eval_steps,
                               std::ostream* log = nullptr) {
  const DistillConfig& dc = cfg.distill;
  const NeuralField teacher(teacher_params);
  DistillHyper hp = distill_hyper(dc);
  hp.validate();
  DistillRun run{DistillState::create(init_params(cfg.student_arch, stream(cfg, "student-init")),
                                      loss_weights(dc), dc.mu, stream(cfg, "distill")),
                 {}, {}};
  DistillState& st = run.state;

  auto evaluate = [&]() {
    const LossRecord losses = combined_loss(st, teacher, distill_batch(cfg, st.step), hp);
    for (const EvalRow& row : evaluate_student(st.student, teacher, ctx, st.step)) {
      run.metrics.push_back({row, losses});
      if (log) {
        *log << "step " << row.step << " nfe " << row.nfe << " sw2 " << format_double(row.sw2)
             << " gap " << format_double(row.consistency_gap) << " straight "
             << format_double(row.straightness) << '\n';
      }
    }
  };

  evaluate();
  run.log.reserve(static_cast<std::size_t>(dc.iters));
  for (long k = 0; k < dc.iters; ++k) {
    hp.adam.lr = scheduled_lr(dc.lr_schedule, dc.lr, dc.lr_final, k, dc.iters);
    run.log.push_back(distill_step(st, teacher, distill_batch(cfg, k), hp));
    if (std::find(eval_steps.begin(), eval_steps.end(), st.step) != eval_steps.end()) evaluate();
  }
  return run;
}

/// Every eval_every steps plus the final step.
inline std::vector<long> periodic_steps(const DistillConfig& dc) {
  std::vector<long> steps;
  for (long s = dc.eval_every; s <= dc.iters; s += dc.eval_every) steps.push_back(s);
  if (steps.empty() || steps.back() != dc.iters) steps.push_back(dc.iters);
  return steps;
}

inline void write_metrics_csv(std::ostream& os, const std::vector<MetricsRow>& rows) {
  os << "step,nfe,loss_vel,loss_con,loss_dsm,lambda_con,sw2,gfd,straightness,consistency_gap\n";
  for (const auto& r : rows) {
    os << r.eval.step << ',' << r.eval.nfe << ',' << format_double(r.losses.loss_vel) << ','
       << format_double(r.losses.loss_con) << ',' << format_double(r.losses.loss_dsm) << ','
       << format_double(r.losses.lambda_con) << ',' << format_double(r.eval.sw2) << ','
       << format_double(r.eval.gfd) << ',' << format_double(r.eval.straightness) << ','
       << format_double(r.eval.consistency_gap) << '\n';
  }
}

inline void write_distill_log(std::ostream& os, const std::vector<StepRecord>& log) {
  os << "step,loss_vel,loss_con,loss_dsm,lambda_con,total,grad_norm,skipped\n";
  for (const auto& r : log) {
    os << r.step << ',' << format_double(r.losses.loss_vel) << ','
       << format_double(r.losses.loss_con) << ',' << format_double(r.losses.loss_dsm) << ','
       << format_double(r.losses.lambda_con) << ',' << format_double(r.losses.total) << ','
       << format_double(r.grad_norm) << ',' << (r.skipped ? 1 : 0) << '\n';
  }
}

inline void write_eval_csv(std::ostream& os, const std::vector<EvalRow>& rows) {
  os << "step,nfe,sw2,gfd,straightness,consistency_gap\n";
  for (const auto& r : rows) {
    os << r.step << ',' << r.nfe << ',' << format_double(r.sw2) << ',' << format_double(r.gfd)
       << ',' << format_double(r.straightness) << ',' << format_double(r.consistency_gap) << '\n';
  }
}

inline Json student_checkpoint_json(const DistillState& st, const std::string& hash) {
  Json j = checkpoint_json(st.student, st.step);
  j["config_hash"] = hash;
  j["strategy"] = to_string(st.weights.strategy);
  j["lambda_con"] = st.lambda_con;
  return j;
}

// -- commands -------------------------------------------------------------------

struct Checkpoints {
  fs::path teacher;
  fs::path student;
};

/// --flag value, then the config path, then the conventional file in `out`.
inline fs::path resolve_checkpoint(const std::string& flag, const std::string& configured,
                                   const fs::path& out, const char* fallback, const char* what) {
  fs::path p = !flag.empty() ? fs::path(flag) : !configured.empty() ? fs::path(configured)
                                                                    : out / fallback;
  if (!fs::exists(p)) {
    throw ValidationError(std::string(what) + " checkpoint not found: " + p.string());
  }
  return p;
}

inline void run_train_teacher(const RunConfig& cfg, const fs::path& out, std::ostream* log = nullptr) {
  ensure_dir(out);
  const std::string hash = config_hash(cfg);
  const TeacherRun run = train_teacher(cfg, log);

  Json ckpt = checkpoint_json(run.params, cfg.teacher.iters);
  ckpt["config_hash"] = hash;
  write_json(out / "teacher.json", ckpt);

  std::ofstream csv = open_output(out / "teacher_loss.csv");
  csv << "step,fm_loss\n";
  for (std::size_t k = 0; k < run.losses.size(); k += static_cast<std::size_t>(cfg.teacher.log_every)) {
    csv << k << ',' << format_double(run.losses[k]) << '\n';
  }

  const NeuralField field(run.params);
  const EvalContext ctx = make_eval_context(cfg, field);
  const TeacherMetrics tm = evaluate_teacher(field, cfg, ctx);
  const std::size_t window = std::min<std::size_t>(100, run.losses.size());
  auto mean_of = [&](std::size_t from) {
    return std::accumulate(run.losses.begin() + static_cast<std::ptrdiff_t>(from),
                           run.losses.begin() + static_cast<std::ptrdiff_t>(from + window), 0.0) /
           static_cast<double>(window);
  };
  Json summary = to_json(tm);
  summary["fm_loss_initial"] = mean_of(0);
  summary["fm_loss_final"] = mean_of(run.losses.size() - window);
  write_json(out / "teacher_summary.json", summary);
  write_json(out / "manifest.json", manifest_json("train-teacher", cfg));
}

inline void run_distill(const RunConfig& cfg, const fs::path& teacher_path, const fs::path& out,
                        std::ostream* log = nullptr) {
  ensure_dir(out);
  const std::string hash = config_hash(cfg);
  const ParamSet teacher = load_checkpoint(teacher_path, NetRole::Teacher);
  const NeuralField field(teacher);
  const EvalContext ctx = make_eval_context(cfg, field);
  const DistillRun run = distill_loop(cfg, teacher, ctx, periodic_steps(cfg.distill), log);

  std::ofstream metrics = open_output(out / "metrics.csv");
  write_metrics_csv(metrics, run.metrics);
  std::ofstream steps = open_output(out / "distill_log.csv");
  write_distill_log(steps, run.log);
  write_json(out / "student.json", student_checkpoint_json(run.state, hash));

  Json summary;
  summary["teacher"] = to_json(evaluate_teacher(field, cfg, ctx));
  Json initial = Json::array();
  Json final_rows = Json::array();
  for (const auto& r : run.metrics) {
    if (r.eval.step == 0) initial.push_back(to_json(r.eval));
    if (r.eval.step == run.state.step) final_rows.push_back(to_json(r.eval));
  }
  summary["initial"] = initial;
  summary["final"] = final_rows;
  long skipped = 0;
  for (const auto& r : run.log) skipped += r.skipped ? 1 : 0;
  summary["skipped_steps"] = skipped;
  write_json(out / "summary.json", summary);
  write_json(out / "manifest.json", manifest_json("distill", cfg));
}

inline std::vector<EvalRow> run_eval(const RunConfig& cfg, const Checkpoints& ck, const fs::path& out) {
  ensure_dir(out);
  const ParamSet teacher = load_checkpoint(ck.teacher, NetRole::Teacher);
  const ParamSet student = load_checkpoint(ck.student, NetRole::Student);
  const Json header = read_json(ck.student);
  const long step = header.value("step", 0L);
  const NeuralField field(teacher);
  const EvalContext ctx = make_eval_context(cfg, field);
  const std::vector<EvalRow> rows = evaluate_student(student, field, ctx, step);
  std::ofstream csv = open_output(out / "eval.csv");
  write_eval_csv(csv, rows);
  write_json(out / "manifest.json", manifest_json("eval", cfg));
  return rows;
}

/// compare.csv: one row per strategy, one column per checkpoint step.
inline void run_compare(const RunConfig& cfg, const fs::path& teacher_path, const fs::path& out,
                        std::ostream* log = nullptr) {
  ensure_dir(out);
  const ParamSet teacher = load_checkpoint(teacher_path, NetRole::Teacher);
  const NeuralField field(teacher);
  RunConfig base = cfg;
  base.distill.iters = cfg.compare.checkpoints.back();
  base.eval.nfe = {cfg.compare.nfe};
  base.eval.schedule.clear();
  const EvalContext ctx = make_eval_context(base, field);
  const std::vector<long> steps(cfg.compare.checkpoints.begin(), cfg.compare.checkpoints.end());

  std::ofstream csv = open_output(out / "compare.csv");
  csv << "strategy";
  for (long s : steps) csv << ',' << s;
  csv << '\n';
  for (const auto& name : cfg.compare.strategies) {
    RunConfig arm = base;
    arm.distill.strategy = parse_strategy(name);
    if (log) *log << "compare arm " << name << '\n';
    const DistillRun run = distill_loop(arm, teacher, ctx, steps, log);
    csv << name;
    for (long s : steps) {
      const auto it = std::find_if(run.metrics.begin(), run.metrics.end(),
                                   [&](const MetricsRow& r) { return r.eval.step == s; });
      if (it == run.metrics.end()) throw std::runtime_error("compare: missing checkpoint row");
      csv << ',' << format_double(metric_of(it->eval, cfg.compare.metric));
    }
    csv << '\n';
    std::ofstream arm_metrics = open_output(out / name / "metrics.csv");
    write_metrics_csv(arm_metrics, run.metrics);
    std::ofstream arm_log = open_output(out / name / "distill_log.csv");
    write_distill_log(arm_log, run.log);
  }
  write_json(out / "manifest.json", manifest_json("compare", cfg));
}

/// trajectories.csv with export.n teacher and export.n student paths over the
/// uniform export grid.
inline void export_trajectories(const RunConfig& cfg, const Checkpoints& ck, const fs::path& out) {
  ensure_dir(out);
  const ParamSet teacher = load_checkpoint(ck.teacher, NetRole::Teacher);
  const ParamSet student = load_checkpoint(ck.student, NetRole::Student);
  const NeuralField field(teacher);
  const StudentProjection map(student, projection_config(cfg.distill));
  const StepSchedule schedule = make_schedule(cfg.export_cfg.grid_steps);
  const Matrix x1 = sample_noise(cfg.export_cfg.n, 2, stream(cfg, "export-noise"));
  std::ofstream csv = open_output(out / "trajectories.csv");
  write_trajectory_header(csv);
  write_trajectory_rows(
      csv, trace_trajectory(TeacherTrajectory(field, cfg.eval.teacher_solver_steps), x1, schedule),
      "teacher");
  write_trajectory_rows(csv, trace_trajectory(ProjectionTrajectory(map), x1, schedule), "student");
  write_json(out / "manifest.json", manifest_json("export-traj", cfg));
}

}  // namespace scotlab
