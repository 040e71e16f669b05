// Copyright 2026 The scotlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "ad_checks.hpp"

#include <gtest/gtest.h>

#include <numbers>

namespace scotlab {
namespace {

TEST(TimeEmbed, ZeroTimeGivesSinZeroCosOne) {
  const TimeEmbeddingSpec spec{};
  const Column e = time_embed(0.0, spec);
  ASSERT_EQ(e.size(), 16);
  for (int k = 0; k < 8; ++k) {
    EXPECT_EQ(e(k), 0.0);
    EXPECT_EQ(e(8 + k), 1.0);
  }
}

TEST(TimeEmbed, QuarterPeriod) {
  const TimeEmbeddingSpec spec{1, 3.0, false};
  const Column e = time_embed(0.25, spec);
  EXPECT_NEAR(e(0), 1.0, 1e-15);
  EXPECT_NEAR(e(1), 0.0, 1e-15);
}

TEST(TimeEmbed, FrequenciesArePowersOfBase) {
  const TimeEmbeddingSpec spec{4, 2.0, false};
  const Matrix f = frequency_row(spec);
  for (int k = 0; k < 4; ++k) EXPECT_DOUBLE_EQ(f(0, k), 2.0 * std::numbers::pi * std::pow(2.0, k));
}

TEST(TimeEmbed, RejectsTimeOutsideUnitInterval) {
  EXPECT_THROW(time_embed(1.01, {}), std::invalid_argument);
  EXPECT_THROW(time_embed(-0.01, {}), std::invalid_argument);
  EXPECT_NO_THROW(time_embed(1.0 + 1e-12, {}));
}

TEST(TimeEmbed, TangentMatchesCentralDifference) {
  const TimeEmbeddingSpec spec{};
  for (double tau : {0.05, 0.3, 0.61, 0.97}) {
    ad::Tape tape;
    const ad::Var tv = tape.constant(Matrix::Constant(1, 1, tau));
    const ad::Var e = time_embed(tape, tv, spec);
    const Matrix tangent = tape.lift_tangent(e, tv).value();
    const Matrix fd = ad::fd_derivative(
        [&](double v) { return Matrix(time_embed(v, spec).transpose()); }, tau, 1e-6);
    EXPECT_LT(testing::rel_err(tangent, fd), 1e-6) << tau;
  }
}

TEST(TimeEmbed, TapeAndScalarVersionsAgree) {
  const TimeEmbeddingSpec spec{};
  ad::Tape tape;
  Column taus(3);
  taus << 0.0, 0.4, 1.0;
  const Matrix e = time_embed(tape, tape.constant_column(taus), spec).value();
  for (int i = 0; i < 3; ++i) {
    EXPECT_LT((e.row(i).transpose() - time_embed(taus(i), spec)).cwiseAbs().maxCoeff(), 1e-15);
  }
}

TEST(Mlp, ZeroFinalLayerOutputsFinalBias) {
  const Architecture arch = testing::small_arch(NetRole::Teacher);
  ParamSet p = init_params(arch, 3);
  p.arrays.back().value << 0.25, -1.5;
  const Matrix x = testing::uniform_matrix(5, 2, 4);
  const Matrix out = mlp_evaluate(p, x, Column::Constant(5, 0.3));
  for (Eigen::Index i = 0; i < 5; ++i) {
    EXPECT_EQ(out(i, 0), 0.25);
    EXPECT_EQ(out(i, 1), -1.5);
  }
}

TEST(Mlp, SingleLayerNetIsItsAffineMap) {
  Architecture arch = Architecture::teacher_default();
  arch.hidden = {};
  arch.embedding.num_frequencies = 1;
  ParamSet p = init_params(arch, 1);
  ASSERT_EQ(p.arrays.size(), 2u);
  Matrix w = Matrix::Zero(4, 2);
  w(0, 0) = 2.0;
  w(1, 1) = -1.0;
  w(3, 0) = 0.5;  // cos(2 pi t)
  p.arrays[0].value = w;
  p.arrays[1].value << 1.0, 3.0;
  Matrix x(1, 2);
  x << 0.7, 0.2;
  const Matrix out = mlp_evaluate(p, x, Column::Constant(1, 0.0));
  EXPECT_DOUBLE_EQ(out(0, 0), 2.0 * 0.7 + 0.5 + 1.0);
  EXPECT_DOUBLE_EQ(out(0, 1), -0.2 + 3.0);
}

TEST(Mlp, RejectsShapeAndRoleMismatches) {
  const Architecture teacher = testing::small_arch(NetRole::Teacher);
  const Architecture student = testing::small_arch(NetRole::Student);
  const ParamSet tp = init_params(teacher, 1);
  const ParamSet sp = init_params(student, 1);
  const Column t = Column::Constant(2, 0.5);
  EXPECT_THROW(mlp_evaluate(tp, Matrix::Zero(2, 3), t), std::invalid_argument);
  EXPECT_THROW(mlp_evaluate(tp, Matrix::Zero(2, 2), t, &t), std::invalid_argument);
  EXPECT_THROW(mlp_evaluate(sp, Matrix::Zero(2, 2), t), std::invalid_argument);
  EXPECT_THROW(mlp_evaluate(tp, Matrix::Zero(3, 2), t), std::invalid_argument);
}

TEST(Mlp, GradientsMatchCentralDifference) {
  EXPECT_LT(testing::network_check(testing::small_arch(NetRole::Student, {9, 7}), 17), 1e-6);
  EXPECT_LT(testing::network_check(testing::small_arch(NetRole::Teacher, {9, 7}, Activation::Tanh), 18),
            1e-6);
}

TEST(Init, DeterministicAndBounded) {
  const Architecture arch = Architecture::student_default();
  const ParamSet a = init_params(arch, 42);
  const ParamSet b = init_params(arch, 42);
  ASSERT_EQ(a.arrays.size(), 2 * arch.num_layers());
  for (std::size_t i = 0; i < a.arrays.size(); ++i) {
    EXPECT_EQ(a.arrays[i].name, b.arrays[i].name);
    EXPECT_EQ(a.arrays[i].value, b.arrays[i].value);
  }
  EXPECT_EQ(a.weight(arch.num_layers() - 1), Matrix::Zero(arch.hidden.back(), 2));
  EXPECT_EQ(a.bias(arch.num_layers() - 1), Matrix::Zero(1, 2));
  for (std::size_t l = 0; l + 1 < arch.num_layers(); ++l) {
    const double bound = std::sqrt(6.0 / static_cast<double>(a.weight(l).rows()));
    EXPECT_LE(a.weight(l).cwiseAbs().maxCoeff(), bound);
    EXPECT_GT(a.weight(l).cwiseAbs().maxCoeff(), 0.5 * bound);
  }
  EXPECT_NE(init_params(arch, 43).arrays[0].value, a.arrays[0].value);
}

TEST(Init, ArrayOrderAndShapes) {
  const Architecture arch = Architecture::teacher_default();
  const ParamSet p = init_params(arch, 0);
  EXPECT_EQ(p.arrays[0].name, "layer0.weight");
  EXPECT_EQ(p.arrays[1].name, "layer0.bias");
  EXPECT_EQ(p.weight(0).rows(), 2 + 16);
  EXPECT_EQ(p.weight(0).cols(), 128);
  EXPECT_EQ(init_params(Architecture::student_default(), 0).weight(0).rows(), 2 + 4);
}

TEST(Adam, ZeroGradientWithZeroMomentsLeavesParameters) {
  NamedArrays p{{"p", Matrix::Constant(1, 2, 0.5)}};
  AdamMoments m = AdamMoments::zeros_for(p);
  ASSERT_TRUE(adam_step(p, zeros_like(p), m, AdamHyper{}, 3));
  EXPECT_EQ(p[0].value, Matrix::Constant(1, 2, 0.5));
  EXPECT_EQ(m.m[0].value, Matrix::Zero(1, 2));
}

TEST(Adam, ZeroGradientDecaysMomentsAndUsesBiasCorrection) {
  NamedArrays p{{"p", Matrix::Constant(1, 2, 0.5)}};
  AdamMoments m = AdamMoments::zeros_for(p);
  m.m[0].value.setConstant(0.2);
  m.v[0].value.setConstant(0.4);
  const AdamHyper hp{};
  ASSERT_TRUE(adam_step(p, zeros_like(p), m, hp, 3));
  EXPECT_DOUBLE_EQ(m.m[0].value(0, 0), 0.9 * 0.2);
  EXPECT_DOUBLE_EQ(m.v[0].value(0, 0), 0.999 * 0.4);
  const double mh = 0.9 * 0.2 / (1.0 - std::pow(0.9, 3));
  const double vh = 0.999 * 0.4 / (1.0 - std::pow(0.999, 3));
  EXPECT_NEAR(p[0].value(0, 0), 0.5 - hp.lr * mh / (std::sqrt(vh) + hp.eps), 1e-15);
}

TEST(Adam, FirstStepMovesByLearningRateTimesSign) {
  NamedArrays p{{"p", Matrix::Zero(1, 3)}};
  NamedArrays g{{"p", (Matrix(1, 3) << 3.0, -0.01, 250.0).finished()}};
  AdamMoments m = AdamMoments::zeros_for(p);
  AdamHyper hp;
  hp.lr = 0.01;
  ASSERT_TRUE(adam_step(p, g, m, hp, 1));
  EXPECT_NEAR(p[0].value(0, 0), -0.01, 1e-9);
  EXPECT_NEAR(p[0].value(0, 1), 0.01, 1e-8);
  EXPECT_NEAR(p[0].value(0, 2), -0.01, 1e-9);
}

TEST(Adam, ScalarQuadraticSimulation) {
  // Reference: the same ten steps of bias-corrected Adam on f(p) = p^2 written
  // out with plain scalars.
  double ref = 1.0, mr = 0.0, vr = 0.0;
  for (int k = 1; k <= 10; ++k) {
    const double g = 2.0 * ref;
    mr = 0.9 * mr + 0.1 * g;
    vr = 0.999 * vr + 0.001 * g * g;
    ref -= 0.1 * (mr / (1 - std::pow(0.9, k))) / (std::sqrt(vr / (1 - std::pow(0.999, k))) + 1e-8);
  }
  NamedArrays p{{"p", Matrix::Constant(1, 1, 1.0)}};
  AdamMoments m = AdamMoments::zeros_for(p);
  AdamHyper hp;
  hp.lr = 0.1;
  for (int k = 1; k <= 10; ++k) {
    NamedArrays g{{"p", 2.0 * p[0].value}};
    ASSERT_TRUE(adam_step(p, g, m, hp, k));
  }
  EXPECT_LT(std::abs(p[0].value(0, 0)), 1.0);
  EXPECT_NEAR(p[0].value(0, 0), ref, 1e-15);
}

TEST(Adam, NonFiniteGradientSkipsStep) {
  NamedArrays p{{"p", Matrix::Constant(1, 2, 0.5)}};
  NamedArrays g{{"p", (Matrix(1, 2) << 1.0, std::nan("")).finished()}};
  AdamMoments m = AdamMoments::zeros_for(p);
  EXPECT_FALSE(adam_step(p, g, m, {}, 1));
  EXPECT_EQ(p[0].value, Matrix::Constant(1, 2, 0.5));
  EXPECT_EQ(m.m[0].value, Matrix::Zero(1, 2));
  EXPECT_THROW(adam_step(p, g, m, {}, 0), std::invalid_argument);
}

TEST(Ema, DecayExtremesAndPaperValue) {
  const NamedArrays params{{"p", Matrix::Ones(2, 2)}};
  EmaShadow keep = EmaShadow::of(zeros_like(params), 1.0);
  ema_update(keep, params);
  EXPECT_EQ(keep.arrays[0].value, Matrix::Zero(2, 2));

  EmaShadow copy = EmaShadow::of(zeros_like(params), 0.0);
  ema_update(copy, params);
  EXPECT_EQ(copy.arrays[0].value, Matrix::Ones(2, 2));

  EmaShadow slow = EmaShadow::of(zeros_like(params), 0.9999);
  ema_update(slow, params);
  EXPECT_NEAR(slow.arrays[0].value(0, 0), 0.0001, 1e-16);
}

TEST(Ema, FixedPointWhenEqualAndShapeChecked) {
  const NamedArrays params{{"p", Matrix::Constant(1, 3, 0.3)}};
  EmaShadow same = EmaShadow::of(params, 0.7);
  ema_update(same, params);
  EXPECT_EQ(same.arrays[0].value, params[0].value);
  const NamedArrays other{{"p", Matrix::Ones(2, 2)}};
  EXPECT_THROW(ema_update(same, other), std::invalid_argument);
  EXPECT_THROW(EmaShadow::of(params, 1.5), std::invalid_argument);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const ParamSet p = testing::random_params(testing::small_arch(NetRole::Student), 9);
  const std::string text = checkpoint_json(p, 12).dump();
  const ParamSet q = params_from_checkpoint(Json::parse(text), NetRole::Student);
  EXPECT_EQ(q.arch, p.arch);
  EXPECT_EQ(q.seed, p.seed);
  for (std::size_t i = 0; i < p.arrays.size(); ++i) {
    EXPECT_EQ(q.arrays[i].name, p.arrays[i].name);
    EXPECT_EQ(q.arrays[i].value, p.arrays[i].value);
  }
  EXPECT_EQ(checkpoint_json(q, 12).dump(), text);
}

TEST(Checkpoint, RejectsWrongRoleAndShape) {
  const ParamSet p = init_params(testing::small_arch(NetRole::Teacher), 1);
  Json j = checkpoint_json(p, 0);
  EXPECT_THROW(params_from_checkpoint(j, NetRole::Student), std::invalid_argument);
  j["arrays"]["layer0.weight"] = matrix_to_json(Matrix::Zero(2, 2));
  EXPECT_THROW(params_from_checkpoint(j, NetRole::Teacher), std::invalid_argument);
}

TEST(Architecture, RoleAndEmbeddingMustAgree) {
  Architecture a = Architecture::teacher_default();
  a.embedding.embed_s = true;
  EXPECT_THROW(a.validate(), std::invalid_argument);
  Architecture b = Architecture::student_default();
  b.embedding.embed_s = false;
  EXPECT_THROW(b.validate(), std::invalid_argument);
  EXPECT_NE(Architecture::teacher_default(), Architecture::student_default());
}

}  // namespace
}  // namespace scotlab
