// Copyright 2026 The scotlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense reverse-mode automatic differentiation over a per-step tape.
//
// Every node is a batch x dim matrix of doubles. A node may additionally
// carry a tangent: the directional derivative of its values with respect to
// one designated leaf (lift_tangent). Tangents are themselves ordinary tape
// nodes built from the same primitives, so a loss that depends on a tangent
// can be differentiated by backward() (forward-over-reverse).

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

namespace scotlab {

using Matrix = Eigen::MatrixXd;
using Column = Eigen::VectorXd;

/// A named, ordered list of arrays. Order is part of the contract: it fixes
/// iteration, serialization and optimizer state layout.
struct NamedArray {
  std::string name;
  Matrix value;
};
using NamedArrays = std::vector<NamedArray>;

inline NamedArrays zeros_like(const NamedArrays& arrays) {
  NamedArrays out;
  out.reserve(arrays.size());
  for (const auto& a : arrays) {
    out.push_back({a.name, Matrix::Zero(a.value.rows(), a.value.cols())});
  }
  return out;
}

inline bool same_layout(const NamedArrays& a, const NamedArrays& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].name != b[i].name || a[i].value.rows() != b[i].value.rows() ||
        a[i].value.cols() != b[i].value.cols()) {
      return false;
    }
  }
  return true;
}

inline double global_norm(const NamedArrays& arrays) {
  double sq = 0.0;
  for (const auto& a : arrays) sq += a.value.squaredNorm();
  return std::sqrt(sq);
}

inline bool all_finite(const NamedArrays& arrays) {
  return std::all_of(arrays.begin(), arrays.end(),
                     [](const NamedArray& a) { return a.value.allFinite(); });
}

namespace ad {

enum class Op : std::uint8_t {
  Leaf,
  Affine,
  Add,
  Sub,
  Mul,
  Scale,
  ScaleRows,
  BroadcastCols,
  Tanh,
  Silu,
  SiluDeriv,
  Sin,
  Cos,
  Concat,
  Sum,
  Mean,
  MeanSquaredNorm,
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Affine: return "affine";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Scale: return "scale";
    case Op::ScaleRows: return "scale_rows";
    case Op::BroadcastCols: return "broadcast_cols";
    case Op::Tanh: return "tanh";
    case Op::Silu: return "silu";
    case Op::SiluDeriv: return "silu_deriv";
    case Op::Sin: return "sin";
    case Op::Cos: return "cos";
    case Op::Concat: return "concat";
    case Op::Sum: return "sum";
    case Op::Mean: return "mean";
    case Op::MeanSquaredNorm: return "mean_squared_norm";
  }
  return "?";
}

class Tape;

/// Handle to a node on a tape. Cheap to copy; only valid while the tape lives.
class Var {
 public:
  Var() = default;

  [[nodiscard]] Tape* tape() const { return tape_; }
  [[nodiscard]] std::size_t id() const { return id_; }
  [[nodiscard]] bool valid() const { return tape_ != nullptr; }

  [[nodiscard]] const Matrix& value() const;
  [[nodiscard]] std::optional<Var> tangent() const;
  [[nodiscard]] Eigen::Index rows() const { return value().rows(); }
  [[nodiscard]] Eigen::Index cols() const { return value().cols(); }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// A NamedArrays registered on a tape as leaves.
struct ParamBinding {
  std::uint64_t tape_id = 0;
  bool trainable = false;
  std::vector<std::string> names;
  std::vector<Var> vars;

  [[nodiscard]] const Var& operator[](std::size_t i) const { return vars.at(i); }
  [[nodiscard]] std::size_t size() const { return vars.size(); }
};

/// Adjoints of every node reachable backwards from a scalar loss.
class Adjoints {
 public:
  /// Gradient of the loss w.r.t. `v`; zeros when `v` is off the path.
  [[nodiscard]] Matrix of(const Var& v) const;

 private:
  friend class Tape;
  std::uint64_t tape_id_ = 0;
  std::vector<Matrix> adj_;
  std::vector<char> present_;
};

class Tape {
 public:
  Tape() : id_(next_id()) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = delete;
  Tape& operator=(Tape&&) = delete;

  [[nodiscard]] std::uint64_t id() const { return id_; }
  [[nodiscard]] std::size_t size() const { return entries_.size(); }
  [[nodiscard]] Op op(const Var& v) const { return entry(v).op; }

  // -- leaves ---------------------------------------------------------------

  Var constant(Matrix value) { return push_leaf(std::move(value), nullptr, false); }
  Var variable(Matrix value) { return push_leaf(std::move(value), nullptr, true); }

  /// Leaf referring to external storage without copying. The referent must
  /// outlive the tape and stay unmodified while the tape is in use.
  Var constant_view(const Matrix& value) { return push_leaf({}, &value, false); }
  Var variable_view(const Matrix& value) { return push_leaf({}, &value, true); }

  Var constant_column(const Column& c) { return constant(Matrix(c)); }

  ParamBinding bind(const NamedArrays& arrays, bool trainable) {
    ParamBinding b;
    b.tape_id = id_;
    b.trainable = trainable;
    b.names.reserve(arrays.size());
    b.vars.reserve(arrays.size());
    for (const auto& a : arrays) {
      b.names.push_back(a.name);
      b.vars.push_back(trainable ? variable_view(a.value) : constant_view(a.value));
    }
    return b;
  }

  // -- primitives -----------------------------------------------------------

  /// x (B x in) * w (in x out) [+ b (1 x out) broadcast over rows].
  Var affine(const Var& x, const Var& w, std::optional<Var> b = std::nullopt) {
    check_mine(x);
    check_mine(w);
    const Matrix& xv = x.value();
    const Matrix& wv = w.value();
    if (xv.cols() != wv.rows()) shape_error("affine", xv, wv);
    Matrix out;
    out.noalias() = xv * wv;
    std::vector<std::size_t> in{x.id(), w.id()};
    if (b) {
      check_mine(*b);
      const Matrix& bv = b->value();
      if (bv.rows() != 1 || bv.cols() != wv.cols()) shape_error("affine bias", wv, bv);
      out.rowwise() += bv.row(0);
      in.push_back(b->id());
    }
    return push_op(Op::Affine, std::move(in), std::move(out));
  }

  Var add(const Var& a, const Var& b) {
    check_same(Op::Add, a, b);
    return push_op(Op::Add, {a.id(), b.id()}, a.value() + b.value());
  }
  Var sub(const Var& a, const Var& b) {
    check_same(Op::Sub, a, b);
    return push_op(Op::Sub, {a.id(), b.id()}, a.value() - b.value());
  }
  Var mul(const Var& a, const Var& b) {
    check_same(Op::Mul, a, b);
    return push_op(Op::Mul, {a.id(), b.id()}, a.value().cwiseProduct(b.value()));
  }

  /// a * c for a compile-time-constant scalar c.
  Var scale(const Var& a, double c) {
    check_mine(a);
    Var v = push_op(Op::Scale, {a.id()}, a.value() * c);
    entries_[v.id()].scalar = c;
    return v;
  }

  Var neg(const Var& a) { return scale(a, -1.0); }

  /// Row i of `a` multiplied by col(i); col is B x 1.
  Var scale_rows(const Var& a, const Var& col) {
    check_mine(a);
    check_mine(col);
    const Matrix& av = a.value();
    const Matrix& cv = col.value();
    if (cv.cols() != 1 || cv.rows() != av.rows()) shape_error("scale_rows", av, cv);
    Matrix out = av.array().colwise() * cv.col(0).array();
    return push_op(Op::ScaleRows, {a.id(), col.id()}, std::move(out));
  }

  /// B x 1 column replicated into B x k.
  Var broadcast_cols(const Var& col, Eigen::Index k) {
    check_mine(col);
    const Matrix& cv = col.value();
    if (cv.cols() != 1 || k < 1) {
      throw std::invalid_argument("broadcast_cols: expected a column and k >= 1");
    }
    Matrix out = cv.col(0).replicate(1, k);
    Var v = push_op(Op::BroadcastCols, {col.id()}, std::move(out));
    entries_[v.id()].count = k;
    return v;
  }

  Var tanh(const Var& a) {
    check_mine(a);
    return push_op(Op::Tanh, {a.id()}, a.value().array().tanh().matrix());
  }

  Var silu(const Var& a) {
    check_mine(a);
    const auto x = a.value().array();
    Matrix out = x / (1.0 + (-x).exp());
    return push_op(Op::Silu, {a.id()}, std::move(out));
  }

  /// Elementwise d silu(x) / dx. Has a reverse partial but no tangent rule.
  Var silu_deriv(const Var& a) {
    check_mine(a);
    return push_op(Op::SiluDeriv, {a.id()}, silu_prime(a.value()));
  }

  Var sin(const Var& a) {
    check_mine(a);
    return push_op(Op::Sin, {a.id()}, a.value().array().sin().matrix());
  }

  Var cos(const Var& a) {
    check_mine(a);
    return push_op(Op::Cos, {a.id()}, a.value().array().cos().matrix());
  }

  /// Concatenation along the feature (column) axis.
  Var concat(std::span<const Var> parts) {
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    const Eigen::Index rows = parts.front().rows();
    Eigen::Index cols = 0;
    for (const auto& p : parts) {
      check_mine(p);
      if (p.rows() != rows) shape_error("concat", parts.front().value(), p.value());
      cols += p.cols();
    }
    Matrix out(rows, cols);
    std::vector<std::size_t> in;
    in.reserve(parts.size());
    Eigen::Index offset = 0;
    for (const auto& p : parts) {
      out.middleCols(offset, p.cols()) = p.value();
      offset += p.cols();
      in.push_back(p.id());
    }
    return push_op(Op::Concat, std::move(in), std::move(out));
  }

  Var concat(std::initializer_list<Var> parts) {
    std::vector<Var> v(parts);
    return concat(std::span<const Var>(v));
  }

  Var sum(const Var& a) {
    check_mine(a);
    Matrix out(1, 1);
    out(0, 0) = a.value().sum();
    return push_op(Op::Sum, {a.id()}, std::move(out));
  }

  Var mean(const Var& a) {
    check_mine(a);
    Matrix out(1, 1);
    out(0, 0) = a.value().mean();
    return push_op(Op::Mean, {a.id()}, std::move(out));
  }

  /// Batch mean of squared row norms: (1/B) sum_i ||a_i||^2.
  Var mean_squared_norm(const Var& a) {
    check_mine(a);
    Matrix out(1, 1);
    out(0, 0) = a.value().squaredNorm() / static_cast<double>(a.rows());
    return push_op(Op::MeanSquaredNorm, {a.id()}, std::move(out));
  }

  // -- access ---------------------------------------------------------------

  [[nodiscard]] const Matrix& value(const Var& v) const { return value_of(entry(v)); }

  [[nodiscard]] std::optional<Var> tangent(const Var& v) const {
    const auto& e = entry(v);
    if (!e.tangent) return std::nullopt;
    return Var(const_cast<Tape*>(this), *e.tangent);
  }

  [[nodiscard]] bool requires_grad(const Var& v) const { return entry(v).requires_grad; }
  [[nodiscard]] bool is_leaf(const Var& v) const { return entry(v).op == Op::Leaf; }

  // -- differentiation ------------------------------------------------------

  /// Reverse sweep from a 1 x 1 node.
  [[nodiscard]] Adjoints backward(const Var& loss) const {
    check_mine(loss);
    if (loss.rows() != 1 || loss.cols() != 1) {
      throw std::invalid_argument("backward: loss must be a 1x1 scalar node");
    }
    Adjoints out;
    out.tape_id_ = id_;
    const std::size_t n = loss.id() + 1;
    out.adj_.resize(n);
    out.present_.assign(n, 0);
    out.adj_[loss.id()] = Matrix::Ones(1, 1);
    out.present_[loss.id()] = 1;

    auto accumulate = [&](std::size_t i, auto&& contribution) {
      if (!entries_[i].requires_grad) return;
      if (out.present_[i]) {
        out.adj_[i] += contribution;
      } else {
        out.adj_[i] = contribution;
        out.present_[i] = 1;
      }
    };

    for (std::size_t k = n; k-- > 0;) {
      const Entry& e = entries_[k];
      if (!out.present_[k] || !e.requires_grad || e.op == Op::Leaf) continue;
      const Matrix& g = out.adj_[k];
      const auto& in = e.inputs;
      switch (e.op) {
        case Op::Leaf:
          break;
        case Op::Affine: {
          const Matrix& x = value_of(entries_[in[0]]);
          const Matrix& w = value_of(entries_[in[1]]);
          if (entries_[in[0]].requires_grad) accumulate(in[0], (g * w.transpose()).eval());
          if (entries_[in[1]].requires_grad) accumulate(in[1], (x.transpose() * g).eval());
          if (in.size() == 3) accumulate(in[2], g.colwise().sum().eval());
          break;
        }
        case Op::Add:
          accumulate(in[0], g);
          accumulate(in[1], g);
          break;
        case Op::Sub:
          accumulate(in[0], g);
          accumulate(in[1], (-g).eval());
          break;
        case Op::Mul: {
          const Matrix& a = value_of(entries_[in[0]]);
          const Matrix& b = value_of(entries_[in[1]]);
          accumulate(in[0], g.cwiseProduct(b).eval());
          accumulate(in[1], g.cwiseProduct(a).eval());
          break;
        }
        case Op::Scale:
          accumulate(in[0], (g * e.scalar).eval());
          break;
        case Op::ScaleRows: {
          const Matrix& a = value_of(entries_[in[0]]);
          const Matrix& c = value_of(entries_[in[1]]);
          if (entries_[in[0]].requires_grad) {
            accumulate(in[0], Matrix(g.array().colwise() * c.col(0).array()));
          }
          if (entries_[in[1]].requires_grad) {
            accumulate(in[1], Matrix(g.cwiseProduct(a).rowwise().sum()));
          }
          break;
        }
        case Op::BroadcastCols:
          accumulate(in[0], Matrix(g.rowwise().sum()));
          break;
        case Op::Tanh: {
          const Matrix& y = e.value;
          accumulate(in[0], Matrix(g.array() * (1.0 - y.array().square())));
          break;
        }
        case Op::Silu:
          accumulate(in[0], Matrix(g.array() * silu_prime(value_of(entries_[in[0]])).array()));
          break;
        case Op::SiluDeriv:
          accumulate(in[0], Matrix(g.array() * silu_second(value_of(entries_[in[0]])).array()));
          break;
        case Op::Sin:
          accumulate(in[0], Matrix(g.array() * value_of(entries_[in[0]]).array().cos()));
          break;
        case Op::Cos:
          accumulate(in[0], Matrix(-g.array() * value_of(entries_[in[0]]).array().sin()));
          break;
        case Op::Concat: {
          Eigen::Index offset = 0;
          for (std::size_t j : in) {
            const Eigen::Index c = value_of(entries_[j]).cols();
            accumulate(j, Matrix(g.middleCols(offset, c)));
            offset += c;
          }
          break;
        }
        case Op::Sum: {
          const Matrix& a = value_of(entries_[in[0]]);
          accumulate(in[0], Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
          break;
        }
        case Op::Mean: {
          const Matrix& a = value_of(entries_[in[0]]);
          accumulate(in[0], Matrix::Constant(a.rows(), a.cols(),
                                             g(0, 0) / static_cast<double>(a.size())));
          break;
        }
        case Op::MeanSquaredNorm: {
          const Matrix& a = value_of(entries_[in[0]]);
          accumulate(in[0], (a * (2.0 * g(0, 0) / static_cast<double>(a.rows()))).eval());
          break;
        }
      }
    }
    return out;
  }

  /// Gradients of `loss` w.r.t. every array of `params`, same order and
  /// shapes. Arrays bound as constants, or off the path, get zeros.
  [[nodiscard]] NamedArrays grad(const Var& loss, const ParamBinding& params) const {
    if (params.tape_id != id_) {
      throw std::invalid_argument("grad: parameters are not registered on this tape");
    }
    const Adjoints adj = backward(loss);
    NamedArrays out;
    out.reserve(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      out.push_back({params.names[i], adj.of(params.vars[i])});
    }
    return out;
  }

  /// Seeds `seed` (a leaf) with tangent 1 and propagates tangents to every
  /// node between it and `root`. Afterwards root.tangent() is d root / d seed.
  /// Nodes that do not depend on the seed carry no tangent (implicit zero);
  /// the root always ends up with one.
  Var lift_tangent(const Var& root, const Var& seed) {
    check_mine(root);
    check_mine(seed);
    if (!is_leaf(seed)) {
      throw std::invalid_argument("lift_tangent: seed must be a leaf");
    }
    const std::size_t r = root.id();
    const std::size_t s = seed.id();

    // Restrict the work to ancestors of the root.
    std::vector<char> needed(r + 1, 0);
    needed[r] = 1;
    for (std::size_t k = r + 1; k-- > 0;) {
      if (!needed[k]) continue;
      for (std::size_t j : entries_[k].inputs) needed[j] = 1;
    }

    // Clear stale tangents from an earlier lift.
    for (std::size_t k = 0; k <= r; ++k) {
      if (needed[k]) entries_[k].tangent.reset();
    }

    if (s <= r && needed[s]) {
      const Matrix& sv = value_of(entries_[s]);
      Var one = constant(Matrix::Ones(sv.rows(), sv.cols()));
      entries_[s].tangent = one.id();
      for (std::size_t k = s + 1; k <= r; ++k) {
        if (!needed[k] || entries_[k].op == Op::Leaf) continue;
        bool any = false;
        for (std::size_t j : entries_[k].inputs) any = any || entries_[j].tangent.has_value();
        if (!any) continue;
        Var t = tangent_rule(k);
        entries_[k].tangent = t.id();
      }
    }
    if (!entries_[r].tangent) {
      const Matrix& rv = value_of(entries_[r]);
      Var zero = constant(Matrix::Zero(rv.rows(), rv.cols()));
      entries_[r].tangent = zero.id();
    }
    return Var(this, *entries_[r].tangent);
  }

 private:
  struct Entry {
    Op op = Op::Leaf;
    std::vector<std::size_t> inputs;
    Matrix value;
    const Matrix* view = nullptr;
    double scalar = 0.0;
    Eigen::Index count = 0;
    bool requires_grad = false;
    std::optional<std::size_t> tangent;
  };

  static std::uint64_t next_id() {
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1, std::memory_order_relaxed);
  }

  static const Matrix& value_of(const Entry& e) { return e.view ? *e.view : e.value; }

  static Matrix silu_prime(const Matrix& x) {
    const Eigen::ArrayXXd sig = 1.0 / (1.0 + (-x.array()).exp());
    return (sig * (1.0 + x.array() * (1.0 - sig))).matrix();
  }

  static Matrix silu_second(const Matrix& x) {
    const Eigen::ArrayXXd sig = 1.0 / (1.0 + (-x.array()).exp());
    return (sig * (1.0 - sig) * (2.0 + x.array() * (1.0 - 2.0 * sig))).matrix();
  }

  [[noreturn]] static void shape_error(const char* what, const Matrix& a, const Matrix& b) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch (" +
                                std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                                " vs " + std::to_string(b.rows()) + "x" +
                                std::to_string(b.cols()) + ")");
  }

  const Entry& entry(const Var& v) const {
    check_mine(v);
    return entries_[v.id()];
  }

  void check_mine(const Var& v) const {
    if (v.tape() != this || v.id() >= entries_.size()) {
      throw std::invalid_argument("tape: variable does not belong to this tape");
    }
  }

  Var push_leaf(Matrix value, const Matrix* view, bool requires_grad) {
    Entry e;
    e.op = Op::Leaf;
    e.value = std::move(value);
    e.view = view;
    e.requires_grad = requires_grad;
    entries_.push_back(std::move(e));
    return Var(this, entries_.size() - 1);
  }

  Var push_op(Op op, std::vector<std::size_t> inputs, Matrix value) {
    Entry e;
    e.op = op;
    e.requires_grad = std::any_of(inputs.begin(), inputs.end(),
                                  [&](std::size_t j) { return entries_[j].requires_grad; });
    e.inputs = std::move(inputs);
    e.value = std::move(value);
    entries_.push_back(std::move(e));
    return Var(this, entries_.size() - 1);
  }

  void check_same(Op op, const Var& a, const Var& b) const {
    check_mine(a);
    check_mine(b);
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
      shape_error(op_name(op), a.value(), b.value());
    }
  }

  Var node(std::size_t i) { return Var(this, i); }

  std::optional<Var> tangent_of(std::size_t i) {
    const auto& t = entries_[i].tangent;
    if (!t) return std::nullopt;
    return Var(this, *t);
  }

  Var tangent_or_zero(std::size_t i) {
    if (auto t = tangent_of(i)) return *t;
    const Matrix& v = value_of(entries_[i]);
    return constant(Matrix::Zero(v.rows(), v.cols()));
  }

  static Var sum_terms(Tape& tape, std::optional<Var> a, std::optional<Var> b) {
    if (a && b) return tape.add(*a, *b);
    return a ? *a : *b;
  }

  // Builds the tangent of entry k from the tangents of its inputs. Inputs are
  // copied out first because appending may reallocate entries_.
  Var tangent_rule(std::size_t k) {
    const Op op = entries_[k].op;
    const std::vector<std::size_t> in = entries_[k].inputs;
    const double scalar = entries_[k].scalar;
    const Eigen::Index count = entries_[k].count;
    switch (op) {
      case Op::Affine: {
        std::optional<Var> term_x, term_w;
        if (auto tx = tangent_of(in[0])) term_x = affine(*tx, node(in[1]));
        const bool w_has = tangent_of(in[1]).has_value();
        const bool b_has = in.size() == 3 && tangent_of(in[2]).has_value();
        if (w_has || b_has) {
          Var tw = tangent_or_zero(in[1]);
          if (b_has) {
            term_w = affine(node(in[0]), tw, *tangent_of(in[2]));
          } else {
            term_w = affine(node(in[0]), tw);
          }
        }
        return sum_terms(*this, term_x, term_w);
      }
      case Op::Add:
      case Op::Sub: {
        auto ta = tangent_of(in[0]);
        auto tb = tangent_of(in[1]);
        if (op == Op::Add) return sum_terms(*this, ta, tb);
        if (ta && tb) return sub(*ta, *tb);
        return ta ? *ta : neg(*tb);
      }
      case Op::Mul: {
        std::optional<Var> t0, t1;
        if (auto ta = tangent_of(in[0])) t0 = mul(*ta, node(in[1]));
        if (auto tb = tangent_of(in[1])) t1 = mul(node(in[0]), *tb);
        return sum_terms(*this, t0, t1);
      }
      case Op::Scale:
        return scale(*tangent_of(in[0]), scalar);
      case Op::ScaleRows: {
        std::optional<Var> t0, t1;
        if (auto ta = tangent_of(in[0])) t0 = scale_rows(*ta, node(in[1]));
        if (auto tc = tangent_of(in[1])) t1 = scale_rows(node(in[0]), *tc);
        return sum_terms(*this, t0, t1);
      }
      case Op::BroadcastCols:
        return broadcast_cols(*tangent_of(in[0]), count);
      case Op::Tanh: {
        // (1 - y^2) * da
        Var y = node(k);
        Var da = *tangent_of(in[0]);
        return sub(da, mul(mul(y, y), da));
      }
      case Op::Silu:
        return mul(silu_deriv(node(in[0])), *tangent_of(in[0]));
      case Op::Sin:
        return mul(cos(node(in[0])), *tangent_of(in[0]));
      case Op::Cos:
        return neg(mul(sin(node(in[0])), *tangent_of(in[0])));
      case Op::Concat: {
        std::vector<Var> parts;
        parts.reserve(in.size());
        for (std::size_t j : in) parts.push_back(tangent_or_zero(j));
        return concat(std::span<const Var>(parts));
      }
      case Op::Sum:
        return sum(*tangent_of(in[0]));
      case Op::Mean:
        return mean(*tangent_of(in[0]));
      case Op::MeanSquaredNorm: {
        const double b = static_cast<double>(value_of(entries_[in[0]]).rows());
        return scale(sum(mul(node(in[0]), *tangent_of(in[0]))), 2.0 / b);
      }
      case Op::SiluDeriv:
      case Op::Leaf:
        break;
    }
    throw std::logic_error(std::string("lift_tangent: primitive '") + op_name(op) +
                           "' has no tangent rule");
  }

  std::uint64_t id_;
  std::vector<Entry> entries_;
};

inline const Matrix& Var::value() const {
  if (tape_ == nullptr) throw std::logic_error("Var::value: empty handle");
  return tape_->value(*this);
}

inline std::optional<Var> Var::tangent() const {
  if (tape_ == nullptr) throw std::logic_error("Var::tangent: empty handle");
  return tape_->tangent(*this);
}

inline Matrix Adjoints::of(const Var& v) const {
  if (v.tape() == nullptr || v.tape()->id() != tape_id_) {
    throw std::invalid_argument("Adjoints::of: variable belongs to another tape");
  }
  if (v.id() < present_.size() && present_[v.id()]) return adj_[v.id()];
  return Matrix::Zero(v.rows(), v.cols());
}

inline Var operator+(const Var& a, const Var& b) { return a.tape()->add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return a.tape()->sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return a.tape()->mul(a, b); }
inline Var operator*(double c, const Var& a) { return a.tape()->scale(a, c); }
inline Var operator-(const Var& a) { return a.tape()->neg(a); }

/// Central difference (f(hi) - f(lo)) / (hi - lo) with hi = min(s + h, upper)
/// and lo = max(s - h, lower).
template <class F>
auto fd_derivative(F&& f, double s, double h, double lower = 0.0, double upper = 1.0) {
  if (!(h > 0.0)) throw std::invalid_argument("fd_derivative: step must be positive");
  const double hi = std::min(s + h, upper);
  const double lo = std::max(s - h, lower);
  if (!(hi > lo)) throw std::invalid_argument("fd_derivative: empty stencil");
  auto fh = f(hi);
  auto fl = f(lo);
  if constexpr (std::is_arithmetic_v<decltype(fh)>) {
    return (fh - fl) / (hi - lo);
  } else {
    return ((fh - fl) / (hi - lo)).eval();
  }
}

/// Per-row central difference recorded on the tape. `f` maps a B x 1 constant
/// column of times to a B x d node. Both evaluations stay on the tape, so the
/// result is differentiable w.r.t. whatever `f` closes over.
template <class F>
Var fd_derivative(Tape& tape, F&& f, const Column& s, double h, const Column& lower,
                  const Column& upper) {
  if (!(h > 0.0)) throw std::invalid_argument("fd_derivative: step must be positive");
  const Eigen::Index n = s.size();
  Column hi(n), lo(n), inv(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    hi(i) = std::min(s(i) + h, upper(i));
    lo(i) = std::max(s(i) - h, lower(i));
    if (!(hi(i) > lo(i))) throw std::invalid_argument("fd_derivative: empty stencil");
    inv(i) = 1.0 / (hi(i) - lo(i));
  }
  Var f_hi = f(tape.constant_column(hi));
  Var f_lo = f(tape.constant_column(lo));
  return tape.scale_rows(tape.sub(f_hi, f_lo), tape.constant_column(inv));
}

}  // namespace ad
}  // namespace scotlab
