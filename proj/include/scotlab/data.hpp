// Copyright 2026 The scotlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "scotlab/tensor_ad.hpp"

#include <charconv>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>

namespace scotlab {

// -- seeding ------------------------------------------------------------------

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline constexpr std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : text) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Stream seed for a named component: splitmix64(root ^ fnv1a64(name)).
inline constexpr std::uint64_t derive_seed(std::uint64_t root, std::string_view component) {
  return splitmix64(root ^ fnv1a64(component));
}

/// Sub-stream seed for an index (step, item, trajectory, ...).
inline constexpr std::uint64_t derive_seed(std::uint64_t root, std::uint64_t index) {
  return splitmix64(splitmix64(root) ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

/// Counter-based generator: draw k is a pure function of (key, k), so items
/// can be generated in any order and still agree bitwise.
class CounterRng {
 public:
  explicit constexpr CounterRng(std::uint64_t key) : key_(key) {}

  [[nodiscard]] constexpr std::uint64_t key() const { return key_; }

  [[nodiscard]] constexpr std::uint64_t bits(std::uint64_t counter) const {
    return splitmix64(key_ ^ splitmix64(counter));
  }

  /// Uniform in [0, 1) with 53 random bits.
  [[nodiscard]] double uniform(std::uint64_t counter) const {
    return static_cast<double>(bits(counter) >> 11) * 0x1.0p-53;
  }

  /// Standard normal via Box-Muller on draws 2k and 2k+1 (cosine branch only).
  [[nodiscard]] double normal(std::uint64_t k) const {
    const double u1 = 1.0 - uniform(2 * k);  // (0, 1]
    const double u2 = uniform(2 * k + 1);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Uniform integer in [lo, hi].
  [[nodiscard]] long uniform_int(std::uint64_t counter, long lo, long hi) const {
    const auto span = static_cast<std::uint64_t>(hi - lo + 1);
    return lo + static_cast<long>(bits(counter) % span);
  }

 private:
  std::uint64_t key_;
};

// -- datasets -----------------------------------------------------------------

enum class DatasetName { Ring8, TwoMoons, Checkerboard, Spiral };

inline DatasetName parse_dataset_name(std::string_view name) {
  if (name == "ring8") return DatasetName::Ring8;
  if (name == "two-moons") return DatasetName::TwoMoons;
  if (name == "checkerboard") return DatasetName::Checkerboard;
  if (name == "spiral") return DatasetName::Spiral;
  throw std::invalid_argument("unknown dataset '" + std::string(name) + "'");
}

inline const char* dataset_name(DatasetName name) {
  switch (name) {
    case DatasetName::Ring8: return "ring8";
    case DatasetName::TwoMoons: return "two-moons";
    case DatasetName::Checkerboard: return "checkerboard";
    case DatasetName::Spiral: return "spiral";
  }
  return "?";
}

struct DatasetSpec {
  DatasetName name = DatasetName::Ring8;
  double scale = 1.0;
  std::uint64_t seed = 0;
};

/// n x 2 draw. Item i depends only on (spec, i).
inline Matrix sample_dataset(const DatasetSpec& spec, Eigen::Index n) {
  if (n < 1) throw std::invalid_argument("sample_dataset: n must be >= 1");
  constexpr double pi = std::numbers::pi;
  Matrix out(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    const CounterRng rng(derive_seed(spec.seed, static_cast<std::uint64_t>(i)));
    double x = 0.0, y = 0.0;
    switch (spec.name) {
      case DatasetName::Ring8: {
        // 8 modes on the unit circle, std 0.1 each.
        const double mode = std::floor(rng.uniform(0) * 8.0);
        const double angle = 2.0 * pi * mode / 8.0;
        x = std::cos(angle) + 0.1 * rng.normal(1);
        y = std::sin(angle) + 0.1 * rng.normal(2);
        break;
      }
      case DatasetName::TwoMoons: {
        const double a = pi * rng.uniform(1);
        if (rng.uniform(0) < 0.5) {
          x = std::cos(a);
          y = std::sin(a);
        } else {
          x = 1.0 - std::cos(a);
          y = 0.5 - std::sin(a);
        }
        x = x - 0.5 + 0.05 * rng.normal(2);
        y = y - 0.25 + 0.05 * rng.normal(3);
        break;
      }
      case DatasetName::Checkerboard: {
        // 4x4 board on [-2, 2]^2 with alternating occupied squares, halved.
        const double u = rng.uniform(0) * 4.0 - 2.0;
        const double v = rng.uniform(1) - std::floor(rng.uniform(2) * 2.0) * 2.0;
        const double shift = static_cast<double>(static_cast<long>(std::floor(u)) & 1L);
        x = 0.5 * u;
        y = 0.5 * (v + shift);
        break;
      }
      case DatasetName::Spiral: {
        const double r = std::sqrt(rng.uniform(0));
        const double a = 3.0 * pi * r;
        x = r * std::cos(a) + 0.03 * rng.normal(1);
        y = r * std::sin(a) + 0.03 * rng.normal(2);
        break;
      }
    }
    out(i, 0) = spec.scale * x;
    out(i, 1) = spec.scale * y;
  }
  return out;
}

/// n x dim standard normal draws.
inline Matrix sample_noise(Eigen::Index n, Eigen::Index dim, std::uint64_t seed) {
  if (n < 1 || dim < 1) throw std::invalid_argument("sample_noise: n and dim must be >= 1");
  Matrix out(n, dim);
  for (Eigen::Index i = 0; i < n; ++i) {
    const CounterRng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    for (Eigen::Index j = 0; j < dim; ++j) out(i, j) = rng.normal(static_cast<std::uint64_t>(j));
  }
  return out;
}

// -- csv ----------------------------------------------------------------------

/// Shortest round-trip decimal form of a double.
inline std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

/// `x0,x1` header then one row per point.
inline void write_points_csv(std::ostream& os, const Matrix& points) {
  os << "x0,x1\n";
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    os << format_double(points(i, 0)) << ',' << format_double(points(i, 1)) << '\n';
  }
}

}  // namespace scotlab
