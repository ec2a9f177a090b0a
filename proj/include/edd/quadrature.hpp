#pragma once

// Gauss-Legendre rules on [-1, 1] from the Golub-Welsch eigenproblem of the
// Jacobi matrix, cached per order.

#include "edd/core.hpp"

#include <Eigen/Eigenvalues>

#include <map>
#include <mutex>

namespace edd {

struct GaussRule {
  Vector nodes;
  Vector weights;
};

inline GaussRule compute_gauss_legendre(Index order) {
  require(order >= 1, "Gauss-Legendre order must be positive");
  GaussRule rule;
  if (order == 1) {
    rule.nodes = Vector::Zero(1);
    rule.weights = Vector::Constant(1, 2.0);
    return rule;
  }
  // Jacobi matrix: zero diagonal, off-diagonal k / sqrt(4k^2 - 1).
  Vector diag = Vector::Zero(order);
  Vector sub(order - 1);
  for (Index k = 1; k < order; ++k) {
    const double kd = static_cast<double>(k);
    sub(k - 1) = kd / std::sqrt(4.0 * kd * kd - 1.0);
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es;
  es.computeFromTridiagonal(diag, sub, Eigen::ComputeEigenvectors);
  rule.nodes = es.eigenvalues();
  rule.weights = 2.0 * es.eigenvectors().row(0).transpose().array().square();
  return rule;
}

/// Thread-safe cached rule; references stay valid for the program lifetime.
inline const GaussRule& gauss_legendre(Index order) {
  static std::mutex mutex;
  static std::map<Index, GaussRule> cache;
  std::lock_guard<std::mutex> lock(mutex);
  auto it = cache.find(order);
  if (it == cache.end()) it = cache.emplace(order, compute_gauss_legendre(order)).first;
  return it->second;
}

}  // namespace edd
