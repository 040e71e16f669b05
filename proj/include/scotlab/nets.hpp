// Copyright 2026 The scotlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Time-conditioned MLPs for the teacher velocity field v(x, t) and the
// student network g(x, t, s), plus initialization, Adam, EMA shadows and the
// JSON checkpoint format.

#pragma once

#include "scotlab/data.hpp"
#include "scotlab/tensor_ad.hpp"

#include "json.hpp"

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace scotlab {

using Json = nlohmann::ordered_json;

inline constexpr int kCheckpointFormatVersion = 1;

struct TimeEmbeddingSpec {
  int num_frequencies = 8;
  double base = 2.0;
  bool embed_s = false;

  [[nodiscard]] int width() const { return 2 * num_frequencies; }
  bool operator==(const TimeEmbeddingSpec&) const = default;
};

enum class Activation { Silu, Tanh };
enum class NetRole { Teacher, Student };

inline const char* to_string(Activation a) { return a == Activation::Silu ? "silu" : "tanh"; }
inline const char* to_string(NetRole r) { return r == NetRole::Teacher ? "teacher" : "student"; }

inline Activation parse_activation(const std::string& s) {
  if (s == "silu") return Activation::Silu;
  if (s == "tanh") return Activation::Tanh;
  throw std::invalid_argument("unknown activation '" + s + "'");
}

inline NetRole parse_role(const std::string& s) {
  if (s == "teacher") return NetRole::Teacher;
  if (s == "student") return NetRole::Student;
  throw std::invalid_argument("unknown network role '" + s + "'");
}

struct Architecture {
  NetRole role = NetRole::Teacher;
  int data_dim = 2;
  std::vector<int> hidden{128, 128, 128};
  Activation activation = Activation::Silu;
  TimeEmbeddingSpec embedding{};

  [[nodiscard]] int input_dim() const {
    return data_dim + embedding.width() * (embedding.embed_s ? 2 : 1);
  }
  [[nodiscard]] std::size_t num_layers() const { return hidden.size() + 1; }

  void validate() const {
    if (data_dim < 1) throw std::invalid_argument("architecture: data_dim must be >= 1");
    if (embedding.num_frequencies < 1) {
      throw std::invalid_argument("architecture: num_frequencies must be >= 1");
    }
    for (int w : hidden) {
      if (w < 1) throw std::invalid_argument("architecture: widths must be >= 1");
    }
    if ((role == NetRole::Student) != embedding.embed_s) {
      throw std::invalid_argument("architecture: student nets embed s, teacher nets do not");
    }
  }

  bool operator==(const Architecture&) const = default;

  static Architecture teacher_default() { return {}; }
  static Architecture student_default() {
    Architecture a;
    a.role = NetRole::Student;
    a.embedding.num_frequencies = 1;
    a.embedding.embed_s = true;
    return a;
  }
};

struct ParamSet {
  Architecture arch;
  std::uint64_t seed = 0;
  NamedArrays arrays;

  [[nodiscard]] const Matrix& weight(std::size_t layer) const { return arrays.at(2 * layer).value; }
  [[nodiscard]] const Matrix& bias(std::size_t layer) const { return arrays.at(2 * layer + 1).value; }
};

// -- time embedding -------------------------------------------------------------

inline constexpr double kTimeSlack = 1e-9;

inline void check_time(double tau, const char* where) {
  if (!(tau >= -kTimeSlack && tau <= 1.0 + kTimeSlack)) {
    throw std::invalid_argument(std::string(where) + ": time " + format_double(tau) +
                                " outside [0, 1]");
  }
}

inline Matrix frequency_row(const TimeEmbeddingSpec& spec) {
  Matrix row(1, spec.num_frequencies);
  double f = 1.0;
  for (int k = 0; k < spec.num_frequencies; ++k) {
    row(0, k) = 2.0 * std::numbers::pi * f;
    f *= spec.base;
  }
  return row;
}

/// [sin(2 pi f_k tau) ..., cos(2 pi f_k tau) ...] with f_k = base^(k-1).
inline Column time_embed(double tau, const TimeEmbeddingSpec& spec) {
  check_time(tau, "time_embed");
  if (spec.num_frequencies < 1) throw std::invalid_argument("time_embed: K must be >= 1");
  const Matrix freq = frequency_row(spec);
  const int k = spec.num_frequencies;
  Column out(2 * k);
  for (int i = 0; i < k; ++i) {
    out(i) = std::sin(freq(0, i) * tau);
    out(k + i) = std::cos(freq(0, i) * tau);
  }
  return out;
}

/// On-tape embedding of a B x 1 time column; differentiable w.r.t. tau.
inline ad::Var time_embed(ad::Tape& tape, const ad::Var& tau, const TimeEmbeddingSpec& spec) {
  const Matrix& tv = tau.value();
  if (tv.cols() != 1) throw std::invalid_argument("time_embed: expected a B x 1 time column");
  for (Eigen::Index i = 0; i < tv.rows(); ++i) check_time(tv(i, 0), "time_embed");
  ad::Var phase = tape.affine(tau, tape.constant(frequency_row(spec)));
  return tape.concat({tape.sin(phase), tape.cos(phase)});
}

// -- parameters -----------------------------------------------------------------

/// Hidden layers: uniform(-sqrt(6/fan_in), sqrt(6/fan_in)); biases zero;
/// final layer all zero.
inline ParamSet init_params(const Architecture& arch, std::uint64_t seed) {
  arch.validate();
  ParamSet p;
  p.arch = arch;
  p.seed = seed;
  int fan_in = arch.input_dim();
  const std::size_t layers = arch.num_layers();
  for (std::size_t l = 0; l < layers; ++l) {
    const bool last = l + 1 == layers;
    const int fan_out = last ? arch.data_dim : arch.hidden[l];
    const std::string prefix = "layer" + std::to_string(l);
    Matrix w = Matrix::Zero(fan_in, fan_out);
    if (!last) {
      const double bound = std::sqrt(6.0 / fan_in);
      const CounterRng rng(derive_seed(seed, prefix + ".weight"));
      for (Eigen::Index r = 0; r < w.rows(); ++r) {
        for (Eigen::Index c = 0; c < w.cols(); ++c) {
          const auto k = static_cast<std::uint64_t>(r * w.cols() + c);
          w(r, c) = bound * (2.0 * rng.uniform(k) - 1.0);
        }
      }
    }
    p.arrays.push_back({prefix + ".weight", std::move(w)});
    p.arrays.push_back({prefix + ".bias", Matrix::Zero(1, fan_out)});
    fan_in = fan_out;
  }
  return p;
}

/// Network output for x (B x d) at times t (B x 1) and, for students, s.
inline ad::Var mlp_forward(ad::Tape& tape, const ad::ParamBinding& params, const Architecture& arch,
                           const ad::Var& x, const ad::Var& t,
                           std::optional<ad::Var> s = std::nullopt) {
  if (x.cols() != arch.data_dim) {
    throw std::invalid_argument("mlp_forward: input has " + std::to_string(x.cols()) +
                                " features, architecture expects " +
                                std::to_string(arch.data_dim));
  }
  if (t.rows() != x.rows() || (s && s->rows() != x.rows())) {
    throw std::invalid_argument("mlp_forward: time columns must match the batch size");
  }
  if (s.has_value() != arch.embedding.embed_s) {
    throw std::invalid_argument(arch.embedding.embed_s
                                    ? "mlp_forward: student network requires s"
                                    : "mlp_forward: s supplied to a t-only network");
  }
  if (params.size() != 2 * arch.num_layers()) {
    throw std::invalid_argument("mlp_forward: parameter count does not match architecture");
  }
  std::vector<ad::Var> features{x, time_embed(tape, t, arch.embedding)};
  if (s) features.push_back(time_embed(tape, *s, arch.embedding));
  ad::Var h = tape.concat(std::span<const ad::Var>(features));
  const std::size_t layers = arch.num_layers();
  for (std::size_t l = 0; l < layers; ++l) {
    h = tape.affine(h, params[2 * l], params[2 * l + 1]);
    if (l + 1 < layers) {
      h = arch.activation == Activation::Silu ? tape.silu(h) : tape.tanh(h);
    }
  }
  return h;
}

/// Off-tape evaluation convenience: fresh tape, parameters as constants.
inline Matrix mlp_evaluate(const ParamSet& params, const Matrix& x, const Column& t,
                           const Column* s = nullptr) {
  ad::Tape tape;
  const ad::ParamBinding b = tape.bind(params.arrays, false);
  std::optional<ad::Var> sv;
  if (s) sv = tape.constant_column(*s);
  return mlp_forward(tape, b, params.arch, tape.constant_view(x), tape.constant_column(t), sv)
      .value();
}

// -- optimizer ------------------------------------------------------------------

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamMoments {
  NamedArrays m;
  NamedArrays v;

  static AdamMoments zeros_for(const NamedArrays& params) {
    return {zeros_like(params), zeros_like(params)};
  }
};

/// Bias-corrected Adam. Returns false (and leaves everything untouched) when
/// any gradient entry is non-finite.
inline bool adam_step(NamedArrays& params, const NamedArrays& grads, AdamMoments& moments,
                      const AdamHyper& hp, long step) {
  if (step < 1) throw std::invalid_argument("adam_step: step must be >= 1");
  if (!same_layout(params, grads) || !same_layout(params, moments.m) ||
      !same_layout(params, moments.v)) {
    throw std::invalid_argument("adam_step: parameter, gradient and moment layouts differ");
  }
  if (!all_finite(grads)) return false;
  const double c1 = 1.0 - std::pow(hp.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(hp.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto m = moments.m[i].value.array();
    auto v = moments.v[i].value.array();
    const auto g = grads[i].value.array();
    m = hp.beta1 * m + (1.0 - hp.beta1) * g;
    v = hp.beta2 * v + (1.0 - hp.beta2) * g.square();
    params[i].value.array() -= hp.lr * (m / c1) / ((v / c2).sqrt() + hp.eps);
  }
  return true;
}

// -- EMA ------------------------------------------------------------------------

struct EmaShadow {
  NamedArrays arrays;
  double mu = 0.9999;

  static EmaShadow of(const NamedArrays& params, double mu) {
    if (!(mu >= 0.0 && mu <= 1.0)) throw std::invalid_argument("EmaShadow: mu must be in [0, 1]");
    return {params, mu};
  }
};

/// shadow <- mu * shadow + (1 - mu) * params
inline void ema_update(EmaShadow& shadow, const NamedArrays& params) {
  if (!same_layout(shadow.arrays, params)) {
    throw std::invalid_argument("ema_update: shadow and parameter layouts differ");
  }
  const double mu = shadow.mu;
  for (std::size_t i = 0; i < params.size(); ++i) {
    shadow.arrays[i].value = mu * shadow.arrays[i].value + (1.0 - mu) * params[i].value;
  }
}

// -- checkpoints ----------------------------------------------------------------

inline Json to_json(const Architecture& a) {
  Json j;
  j["role"] = to_string(a.role);
  j["data_dim"] = a.data_dim;
  j["hidden"] = a.hidden;
  j["activation"] = to_string(a.activation);
  j["embedding"] = {{"num_frequencies", a.embedding.num_frequencies},
                    {"base", a.embedding.base},
                    {"embed_s", a.embedding.embed_s}};
  return j;
}

inline Architecture architecture_from_json(const Json& j) {
  Architecture a;
  a.role = parse_role(j.at("role").get<std::string>());
  a.data_dim = j.at("data_dim").get<int>();
  a.hidden = j.at("hidden").get<std::vector<int>>();
  a.activation = parse_activation(j.at("activation").get<std::string>());
  const Json& e = j.at("embedding");
  a.embedding.num_frequencies = e.at("num_frequencies").get<int>();
  a.embedding.base = e.at("base").get<double>();
  a.embedding.embed_s = e.at("embed_s").get<bool>();
  a.validate();
  return a;
}

inline Json matrix_to_json(const Matrix& m) {
  Json rows = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    Json row = Json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Matrix matrix_from_json(const Json& j) {
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows ? static_cast<Eigen::Index>(j.at(0).size()) : 0;
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const Json& row = j.at(static_cast<std::size_t>(r));
    if (static_cast<Eigen::Index>(row.size()) != cols) {
      throw std::invalid_argument("checkpoint: ragged array");
    }
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = row.at(static_cast<std::size_t>(c)).get<double>();
  }
  return m;
}

inline Json arrays_to_json(const NamedArrays& arrays) {
  Json j = Json::object();
  for (const auto& a : arrays) j[a.name] = matrix_to_json(a.value);
  return j;
}

/// {format_version, arch, seed, step, arrays}; callers add extra header keys.
inline Json checkpoint_json(const ParamSet& p, long step) {
  Json j;
  j["format_version"] = kCheckpointFormatVersion;
  j["arch"] = to_json(p.arch);
  j["seed"] = p.seed;
  j["step"] = step;
  j["arrays"] = arrays_to_json(p.arrays);
  return j;
}

/// Parses a checkpoint, rejecting a role or layout that does not match.
inline ParamSet params_from_checkpoint(const Json& j, NetRole expected) {
  if (j.at("format_version").get<int>() != kCheckpointFormatVersion) {
    throw std::invalid_argument("checkpoint: unsupported format_version");
  }
  ParamSet p;
  p.arch = architecture_from_json(j.at("arch"));
  if (p.arch.role != expected) {
    throw std::invalid_argument(std::string("checkpoint: expected a ") + to_string(expected) +
                                " network, found " + to_string(p.arch.role));
  }
  p.seed = j.at("seed").get<std::uint64_t>();
  const ParamSet reference = init_params(p.arch, p.seed);
  const Json& arrays = j.at("arrays");
  if (arrays.size() != reference.arrays.size()) {
    throw std::invalid_argument("checkpoint: array count does not match architecture");
  }
  for (const auto& ref : reference.arrays) {
    Matrix m = matrix_from_json(arrays.at(ref.name));
    if (m.rows() != ref.value.rows() || m.cols() != ref.value.cols()) {
      throw std::invalid_argument("checkpoint: array '" + ref.name + "' has the wrong shape");
    }
    p.arrays.push_back({ref.name, std::move(m)});
  }
  return p;
}

}  // namespace scotlab
