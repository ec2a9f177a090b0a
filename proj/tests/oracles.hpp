#pragma once

// Reference implementations used only by the tests. Each one takes a route
// that shares no code with the library path it checks.

#include "edd/core.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <vector>

namespace oracle {

using edd::Index;
using edd::Matrix;
using edd::Vector;

/// Cyclic Jacobi rotations on a symmetric matrix; eigenvalues sorted descending.
inline Vector jacobi_eigenvalues(Matrix a, double tol = 1e-15, int max_sweeps = 100) {
  const Index n = a.rows();
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (Index p = 0; p < n; ++p)
      for (Index q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (off <= tol * tol * std::max(1.0, a.squaredNorm())) break;
    for (Index p = 0; p < n; ++p)
      for (Index q = p + 1; q < n; ++q) {
        if (a(p, q) == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (Index k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (Index k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
      }
  }
  Vector ev = a.diagonal();
  std::sort(ev.data(), ev.data() + ev.size(), std::greater<>());
  return ev;
}

/// Minimises ||w Phi - y||_F^2 by plain gradient descent from w = 0, which
/// converges to the minimum-norm solution.
inline Matrix gd_least_squares(const Matrix& phi, const Matrix& y, int max_steps = 2000000, double tol = 1e-15) {
  const Matrix gram = phi * phi.transpose();
  const double lmax = jacobi_eigenvalues(gram)(0);
  const double rate = 1.0 / lmax;
  Matrix w = Matrix::Zero(y.rows(), phi.rows());
  const Matrix target = y * phi.transpose();
  for (int s = 0; s < max_steps; ++s) {
    const Matrix step = rate * (target - w * gram);
    w += step;
    if (step.cwiseAbs().maxCoeff() < tol) break;
  }
  return w;
}

/// Double-exponential (tanh-sinh) quadrature of g on [lo, hi]. g receives
/// x together with x - lo and hi - x computed without cancellation.
inline double tanh_sinh(const std::function<double(double, double, double)>& g, double lo, double hi,
                        double h = 1.0 / 128.0, double s_max = 4.5) {
  const double half = 0.5 * (hi - lo);
  double sum = 0.0;
  for (double s = -s_max; s <= s_max + 1e-12; s += h) {
    const double u = 0.5 * std::numbers::pi * std::sinh(s);
    const double ch = std::cosh(u);
    const double weight = 0.5 * std::numbers::pi * std::cosh(s) / (ch * ch);
    // x - lo = half (1 + tanh u) = 2 half / (1 + e^{-2u}); hi - x likewise.
    const double from_lo = 2.0 * half / (1.0 + std::exp(-2.0 * u));
    const double to_hi = 2.0 * half / (1.0 + std::exp(2.0 * u));
    if (from_lo <= 0.0 || to_hi <= 0.0) continue;
    sum += weight * g(lo + from_lo, from_lo, to_hi);
  }
  return sum * half * h;
}

/// Expected test loss computed in x with the MP density written out, split
/// at the threshold, each piece by tanh-sinh.
inline double expected_loss(std::uint64_t t, double lambda, double sigma, double gamma, double tau = 1.0) {
  const double r = std::sqrt(lambda);
  const double a = (1.0 - r) * (1.0 - r), b = (1.0 + r) * (1.0 + r);
  const double mass0 = std::max(0.0, 1.0 - 1.0 / lambda);
  auto piece = [&](double lo, double hi, bool noisy) {
    return tanh_sinh(
        [&](double x, double, double) {
          const double dens = std::sqrt(std::max(0.0, (b - x) * (x - a))) / (2.0 * std::numbers::pi * lambda * x);
          const double f = std::pow(1.0 - gamma * x, static_cast<double>(t));
          double v = f * f;
          if (noisy) v += sigma / x * (1.0 - f) * (1.0 - f);
          return v * dens;
        },
        lo, hi);
  };
  double integral;
  if (tau <= a)
    integral = piece(a, b, true);
  else if (tau >= b)
    integral = piece(a, b, false);
  else
    integral = piece(a, tau, false) + piece(tau, b, true);
  return 0.5 * (integral + mass0);
}

/// Relative Frobenius error, with an absolute floor for near-zero references.
inline double rel_err(const Matrix& a, const Matrix& b) {
  return (a - b).norm() / std::max(1e-300, std::max(b.norm(), 1e-12));
}

}  // namespace oracle
