// Copyright 2026 The scotlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "scotlab/scotlab.hpp"

#include <gtest/gtest.h>

#include <fstream>

namespace scotlab {
namespace {

Json base() { return Json{{"format_version", 1}}; }

Json with(const char* section, const char* key, Json value) {
  Json j = base();
  j[section][key] = std::move(value);
  return j;
}

void expect_rejected(const Json& j, const std::string& fragment) {
  try {
    (void)config_from_json(j);
    ADD_FAILURE() << "accepted: " << j.dump();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find(fragment), std::string::npos) << e.what();
  }
}

TEST(Config, DefaultsAreValid) {
  const RunConfig c = config_from_json(base());
  EXPECT_EQ(c.distill.grid_steps, 18);
  EXPECT_EQ(c.distill.strategy, WeightStrategy::Normalized);
  EXPECT_EQ(c.distill.clip_lo, 0.01);
  EXPECT_EQ(c.distill.clip_hi, 10.0);
  EXPECT_EQ(c.teacher.iters, 5000);
  EXPECT_EQ(c.distill.iters, 4000);
  EXPECT_EQ(c.distill.lambda_dsm, 0.0);
  EXPECT_EQ(c.student_arch.embedding.num_frequencies, 1);
  EXPECT_EQ(c.teacher.arch.embedding.num_frequencies, 8);
  EXPECT_EQ(c.eval.nfe, (std::vector<int>{1, 2}));
  EXPECT_EQ(c.compare.checkpoints.size(), 4u);
  EXPECT_EQ(c.dataset.seed, derive_seed(c.seed, "dataset"));
}

TEST(Config, RoundTripIsUnchanged) {
  Json j = base();
  j["seed"] = 17;
  j["dataset"] = {{"name", "two-moons"}, {"scale", 1.5}};
  j["distill"] = {{"strategy", "adaptive"}, {"lambda_dsm", 0.5}, {"derivative_mode", "finite-difference"},
                  {"dsm_target", "source"}, {"velocity_times", "grid"}};
  j["eval"] = {{"schedule", {1.0, 0.6, 0.0}}};
  const RunConfig a = config_from_json(j);
  const RunConfig b = config_from_json(to_json(a));
  EXPECT_EQ(to_json(a).dump(), to_json(b).dump());
  EXPECT_EQ(config_hash(a), config_hash(b));
  EXPECT_EQ(b.dataset.name, DatasetName::TwoMoons);
  EXPECT_EQ(b.distill.derivative_mode, DerivativeMode::FiniteDifference);
  EXPECT_EQ(b.distill.velocity_times, VelocityTimes::Grid);
}

TEST(Config, HashTracksContent) {
  const RunConfig a = config_from_json(base());
  const RunConfig b = config_from_json(with("distill", "lr", 1e-3));
  EXPECT_EQ(config_hash(a).size(), 16u);
  EXPECT_EQ(config_hash(a), config_hash(config_from_json(base())));
  EXPECT_NE(config_hash(a), config_hash(b));
}

TEST(Config, RequiresFormatVersion) {
  expect_rejected(Json::object(), "format_version");
  expect_rejected(Json{{"format_version", 2}}, "format_version");
}

TEST(Config, RejectsUnknownKeys) {
  expect_rejected(with("distill", "lambda_consistency", 1.0), "distill.lambda_consistency");
  Json j = base();
  j["extra"] = 1;
  expect_rejected(j, "config.extra");
}

TEST(Config, RejectsWrongTypes) {
  expect_rejected(with("distill", "iters", "many"), "wrong type");
}

TEST(Config, RejectsOutOfRangeValues) {
  expect_rejected(with("distill", "grid_steps", 1), "grid_steps");
  expect_rejected(with("distill", "t_min", 0.1), "t_min");
  expect_rejected(with("distill", "mu", 1.5), "mu");
  expect_rejected(with("distill", "lr", 0.0), "learning rates");
  expect_rejected(with("distill", "clip_lo", 20.0), "clip range");
  expect_rejected(with("distill", "velocity_target_sign", 0.5), "velocity_target_sign");
  expect_rejected(with("distill", "strategy", "balanced"), "strategy");
  expect_rejected(with("teacher", "ema", 1.0), "teacher.ema");
  expect_rejected(with("eval", "nfe", Json::array({0})), "eval.nfe");
  expect_rejected(with("eval", "nfe", Json::array({2000})), "t_min");
  expect_rejected(with("eval", "schedule", {1.0, 0.5, 0.5, 0.0}), "schedule");
  expect_rejected(with("compare", "checkpoints", {500, 250}), "increasing");
  expect_rejected(with("compare", "metric", "fid"), "compare.metric");
  expect_rejected(with("compare", "strategies", {"fixed", "fixed"}), "distinct");
  expect_rejected(with("dataset", "name", "ring9"), "dataset");
  Json weights = base();
  weights["distill"] = {{"lambda_vel", 0.0}, {"lambda_con", 0.0}, {"lambda_dsm", 0.0}};
  expect_rejected(weights, "loss weight");
}

TEST(Config, RejectsArchitectureRoleMismatch) {
  Json j = base();
  j["student"]["arch"] = to_json(Architecture::teacher_default());
  expect_rejected(j, "role");
}

TEST(Config, LoadReportsMissingAndMalformedFiles) {
  EXPECT_THROW(load_config("/nonexistent/config.json"), ValidationError);
  const auto path = std::filesystem::temp_directory_path() / "scotlab_bad_config.json";
  std::ofstream(path) << "{ not json";
  EXPECT_THROW(load_config(path), ValidationError);
  std::filesystem::remove(path);
}

TEST(Config, DerivedHyperparameters) {
  Json j = base();
  j["distill"] = {{"lr", 2e-4}, {"t_min", 5e-3}, {"fd_step", 1e-5}, {"refresh_every", 7}};
  const RunConfig c = config_from_json(j);
  const DistillHyper hp = distill_hyper(c.distill);
  EXPECT_EQ(hp.adam.lr, 2e-4);
  EXPECT_EQ(hp.projection.t_min, 5e-3);
  EXPECT_EQ(hp.projection.fd_step, 1e-5);
  EXPECT_EQ(loss_weights(c.distill).refresh_every, 7);
}

TEST(Config, EvalSchedules) {
  EXPECT_EQ(eval_schedules(EvalConfig{}).size(), 2u);
  EvalConfig e;
  e.schedule = {1.0, 0.3, 0.0};
  const auto s = eval_schedules(e);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s[0].kind, ScheduleKind::Custom);
  EXPECT_EQ(s[0].steps(), 2);
}

TEST(LrSchedule, CosineEndpoints) {
  EXPECT_DOUBLE_EQ(scheduled_lr(LrSchedule::Cosine, 1e-3, 1e-5, 0, 100), 1e-3);
  EXPECT_DOUBLE_EQ(scheduled_lr(LrSchedule::Cosine, 1e-3, 1e-5, 99, 100), 1e-5);
  EXPECT_NEAR(scheduled_lr(LrSchedule::Cosine, 1e-3, 1e-5, 0, 3) +
                  scheduled_lr(LrSchedule::Cosine, 1e-3, 1e-5, 2, 3),
              2.0 * scheduled_lr(LrSchedule::Cosine, 1e-3, 1e-5, 1, 3), 1e-15);
  EXPECT_EQ(scheduled_lr(LrSchedule::Constant, 1e-3, 1e-5, 50, 100), 1e-3);
}

TEST(ShippedConfigs, DefaultFileMatchesBuiltInDefaults) {
  const fs::path dir = fs::path(SCOTLAB_SOURCE_DIR) / "configs";
  EXPECT_EQ(to_json(load_config(dir / "default.json")).dump(), to_json(config_from_json(base())).dump());
  EXPECT_NO_THROW((void)load_config(dir / "smoke.json"));
}

}  // namespace
}  // namespace scotlab
