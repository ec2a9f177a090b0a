#pragma once

// Random-matrix utilities: Gaussian data, spectral decompositions of
// Phi Phi^T / N, the Moore-Penrose solve built on them, and the
// Marchenko-Pastur law for the eigenvalues of X X^T / N.

#include "edd/core.hpp"

#include <Eigen/SVD>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <limits>
#include <numbers>
#include <numeric>
#include <vector>

namespace edd {

// ---------------------------------------------------------------------------
// Marchenko-Pastur
// ---------------------------------------------------------------------------

struct MPParams {
  double aspect_ratio = 1.0;  // lambda = D / N
  double support_low = 0.0;   // (1 - sqrt(lambda))^2
  double support_high = 4.0;  // (1 + sqrt(lambda))^2
  double point_mass_at_zero = 0.0;

  /// Mass of the continuous part, min(1, 1/lambda).
  double continuous_mass() const { return 1.0 - point_mass_at_zero; }
};

inline MPParams mp_params(double lambda) {
  require(lambda > 0.0 && std::isfinite(lambda), "aspect ratio must be positive and finite");
  const double r = std::sqrt(lambda);
  MPParams p;
  p.aspect_ratio = lambda;
  p.support_low = (1.0 - r) * (1.0 - r);
  p.support_high = (1.0 + r) * (1.0 + r);
  p.point_mass_at_zero = std::max(0.0, 1.0 - 1.0 / lambda);
  return p;
}

/// Continuous part of the MP density. The atom at zero (lambda > 1) is not included.
inline double mp_density(double x, double lambda) {
  const MPParams p = mp_params(lambda);
  require(std::isfinite(x), "mp_density: x must be finite");
  if (x <= p.support_low || x >= p.support_high || x <= 0.0) return 0.0;
  return std::sqrt((p.support_high - x) * (x - p.support_low)) /
         (2.0 * std::numbers::pi * lambda * x);
}

// ---------------------------------------------------------------------------
// Data
// ---------------------------------------------------------------------------

/// D x N matrix of i.i.d. N(0, 1) entries.
inline Matrix sample_gaussian_data(Index samples, Index features, std::uint64_t seed) {
  require(samples >= 1 && features >= 1, "sample_gaussian_data: dimensions must be positive");
  Rng rng = make_rng(seed);
  Matrix x(features, samples);
  fill_normal(x, rng);
  return x;
}

// ---------------------------------------------------------------------------
// Spectral decomposition
// ---------------------------------------------------------------------------

/// Thin factorisation Phi / sqrt(N) = U diag(sqrt(eigenvalues)) V^T.
///
/// eigenvalues are those of Phi Phi^T / N, sorted descending, and only the
/// ones above the rank cutoff are kept, so U is F x r and V is N x r.
struct SpectralDecomp {
  Matrix left_vectors;   // U, F x r
  Vector eigenvalues;    // r values, descending
  Matrix right_vectors;  // V, N x r
  Index rows = 0;        // F
  Index cols = 0;        // N

  Index rank() const { return eigenvalues.size(); }
  double max_eigenvalue() const { return rank() > 0 ? eigenvalues(0) : 0.0; }

  /// U diag(sqrt(Lambda)) V^T sqrt(N).
  Matrix reconstruct() const {
    if (rank() == 0) return Matrix::Zero(rows, cols);
    return left_vectors * eigenvalues.cwiseSqrt().asDiagonal() * right_vectors.transpose() *
           std::sqrt(static_cast<double>(cols));
  }
};

/// Eigenvalues below this are treated as zero: eps * max(F, N) * lambda_max.
inline double rank_cutoff(double max_eigenvalue, Index rows, Index cols) {
  return std::numeric_limits<double>::epsilon() * static_cast<double>(std::max(rows, cols)) *
         max_eigenvalue;
}

inline SpectralDecomp decompose(const Matrix& phi) {
  require(all_finite(phi), "decompose: matrix has non-finite entries");
  SpectralDecomp out;
  out.rows = phi.rows();
  out.cols = phi.cols();
  const Index k = std::min(phi.rows(), phi.cols());
  if (k == 0) {
    out.left_vectors.resize(phi.rows(), 0);
    out.right_vectors.resize(phi.cols(), 0);
    return out;
  }

  Eigen::BDCSVD<Matrix> svd(phi, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const double n = static_cast<double>(phi.cols());
  Vector eig = svd.singularValues().array().square() / n;

  // Stable order: descending, ties broken by original index.
  std::vector<Index> order(static_cast<std::size_t>(eig.size()));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Index a, Index b) { return eig(a) > eig(b); });

  const double lmax = eig(order.front());
  const double cutoff = rank_cutoff(lmax, phi.rows(), phi.cols());
  Index r = 0;
  while (r < static_cast<Index>(order.size()) && eig(order[r]) > cutoff && eig(order[r]) > 0.0) ++r;

  out.eigenvalues.resize(r);
  out.left_vectors.resize(phi.rows(), r);
  out.right_vectors.resize(phi.cols(), r);
  for (Index i = 0; i < r; ++i) {
    out.eigenvalues(i) = eig(order[i]);
    out.left_vectors.col(i) = svd.matrixU().col(order[i]);
    out.right_vectors.col(i) = svd.matrixV().col(order[i]);
  }
  return out;
}

/// y Phi^T (Phi Phi^T)^+ from an existing decomposition of Phi.
inline Matrix pseudo_solve(const SpectralDecomp& d, const Matrix& y) {
  require(y.cols() == d.cols, "pseudo_solve: labels are " + dims(y) + " but Phi has " +
                                  std::to_string(d.cols) + " columns");
  if (d.rank() == 0) return Matrix::Zero(y.rows(), d.rows);
  // y V Lambda^{-1/2} U^T / sqrt(N)
  const Vector scale = d.eigenvalues.cwiseSqrt().cwiseInverse() /
                       std::sqrt(static_cast<double>(d.cols));
  return ((y * d.right_vectors) * scale.asDiagonal()) * d.left_vectors.transpose();
}

inline Matrix pseudo_solve(const Matrix& phi, const Matrix& y) {
  require(y.cols() == phi.cols(), "pseudo_solve: labels are " + dims(y) + " but Phi is " + dims(phi));
  return pseudo_solve(decompose(phi), y);
}

/// Projector onto the null space of Phi Phi^T applied from the right: w (I - U U^T).
inline Matrix frozen_component(const SpectralDecomp& d, const Matrix& w) {
  require(w.cols() == d.rows, "frozen_component: weights are " + dims(w) + " but Phi has " +
                                  std::to_string(d.rows) + " rows");
  if (d.rank() == 0) return w;
  return w - (w * d.left_vectors) * d.left_vectors.transpose();
}

// ---------------------------------------------------------------------------
// Wishart spectrum without forming X
// ---------------------------------------------------------------------------

/// Nonzero eigenvalues of X X^T / N for a D x N standard Gaussian X, drawn
/// from the real Laguerre bidiagonal model: with m = min(D, N) and
/// n = max(D, N), B is m x m lower bidiagonal with B_ii ~ chi(n - i) and
/// B_{i+1,i} ~ chi(m - 1 - i), and B B^T has the law of the m x m Wishart
/// Gram matrix. Costs O(m^2) instead of O(m^2 n). Returned descending.
inline Vector sample_wishart_spectrum(Index samples, Index features, Rng& rng) {
  require(samples >= 1 && features >= 1, "sample_wishart_spectrum: dimensions must be positive");
  const Index m = std::min(samples, features);
  const Index n = std::max(samples, features);
  Vector diag_b(m), sub_b(std::max<Index>(m - 1, 0));
  for (Index i = 0; i < m; ++i) {
    std::chi_squared_distribution<double> chi2(static_cast<double>(n - i));
    diag_b(i) = std::sqrt(chi2(rng));
    if (i + 1 < m) {
      std::chi_squared_distribution<double> chi2_sub(static_cast<double>(m - 1 - i));
      sub_b(i) = std::sqrt(chi2_sub(rng));
    }
  }
  // T = B B^T: T_ii = B_ii^2 + B_{i,i-1}^2, T_{i+1,i} = B_{i+1,i} B_ii.
  Vector diag_t(m), sub_t(std::max<Index>(m - 1, 0));
  for (Index i = 0; i < m; ++i) {
    diag_t(i) = diag_b(i) * diag_b(i) + (i > 0 ? sub_b(i - 1) * sub_b(i - 1) : 0.0);
    if (i + 1 < m) sub_t(i) = sub_b(i) * diag_b(i);
  }
  Vector eig(m);
  if (m == 1) {
    eig(0) = diag_t(0);
  } else {
    Eigen::SelfAdjointEigenSolver<Matrix> es;
    es.computeFromTridiagonal(diag_t, sub_t, Eigen::EigenvaluesOnly);
    eig = es.eigenvalues();
  }
  eig /= static_cast<double>(samples);
  std::sort(eig.data(), eig.data() + eig.size(), std::greater<>());
  return eig.cwiseMax(0.0);
}

}  // namespace edd
