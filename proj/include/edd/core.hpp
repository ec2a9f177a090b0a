#pragma once

// Shared vocabulary: matrix aliases, error types and the seeded RNG.

#include <Eigen/Dense>

#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace edd {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Invalid argument: bad dimensions, out-of-range parameters, non-finite data.
class DomainError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Learning rate outside the stable region gamma * lambda_max < 2.
class StabilityError : public std::runtime_error {
 public:
  StabilityError(const std::string& what, double gamma, double gamma_max)
      : std::runtime_error(what), gamma_(gamma), gamma_max_(gamma_max) {}

  double gamma() const noexcept { return gamma_; }
  double gamma_max() const noexcept { return gamma_max_; }

 private:
  double gamma_;
  double gamma_max_;
};

/// Unreadable or ill-formed input file.
class IoError : public std::runtime_error {
 public:
  IoError(const std::string& path, std::size_t line, const std::string& message)
      : std::runtime_error(path + (line > 0 ? ":" + std::to_string(line) : std::string()) +
                           ": " + message),
        path_(path),
        line_(line) {}

  const std::string& path() const noexcept { return path_; }
  std::size_t line() const noexcept { return line_; }

 private:
  std::string path_;
  std::size_t line_;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw DomainError(message);
}

// ---------------------------------------------------------------------------
// Random numbers
//
// Every stochastic operation takes an explicit 64-bit seed. Streams are
// std::mt19937_64 engines whose seed is passed through the SplitMix64
// finalizer; independent sub-streams come from derive_seed(master, index),
// which is stable across runs and platforms.
// ---------------------------------------------------------------------------

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) noexcept {
  return splitmix64(master ^ splitmix64(index));
}

inline Rng make_rng(std::uint64_t seed) { return Rng(splitmix64(seed)); }

/// Fills column by column with N(0, stddev^2) draws.
inline void fill_normal(Matrix& m, Rng& rng, double stddev = 1.0) {
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Index j = 0; j < m.cols(); ++j)
    for (Index i = 0; i < m.rows(); ++i) m(i, j) = stddev * normal(rng);
}

namespace detail {

/// Shortest representation that parses back to the same double.
inline std::string format_double(double v) {
  std::array<char, 32> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  if (ec != std::errc()) throw std::runtime_error("number formatting failed");
  return std::string(buf.data(), ptr);
}

}  // namespace detail

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

inline std::string dims(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

}  // namespace edd
