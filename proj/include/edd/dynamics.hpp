#pragma once

// Full-batch gradient descent for linear models w (C x F) on features
// Phi (F x N): single steps for MSE, the exact softmax cross entropy and its
// high-temperature linearisation, plus the closed-form trajectory
//
//   w(t) = w_inf + (w_0 - w_inf) U (I - gamma Lambda)^t U^T,
//
// where Phi Phi^T / N = U Lambda U^T.

#include "edd/core.hpp"
#include "edd/spectra.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace edd {

enum class LossKind { mse, xent_linearized };

inline std::string to_string(LossKind k) { return k == LossKind::mse ? "mse" : "xent_linearized"; }

inline LossKind parse_loss_kind(const std::string& s) {
  if (s == "mse") return LossKind::mse;
  if (s == "xent_linearized") return LossKind::xent_linearized;
  throw DomainError("unknown loss kind '" + s + "'");
}

// ---------------------------------------------------------------------------
// Labels
// ---------------------------------------------------------------------------

enum class LabelKind { real_valued, one_hot };

inline bool is_one_hot(const Matrix& p) {
  for (Index j = 0; j < p.cols(); ++j) {
    int ones = 0;
    for (Index i = 0; i < p.rows(); ++i) {
      const double v = p(i, j);
      if (v == 1.0)
        ++ones;
      else if (v != 0.0)
        return false;
    }
    if (ones != 1) return false;
  }
  return true;
}

struct LabelMatrix {
  Matrix values;  // C x N
  LabelKind kind = LabelKind::real_valued;

  static LabelMatrix real_valued(Matrix y) { return {std::move(y), LabelKind::real_valued}; }

  static LabelMatrix one_hot(Matrix p) {
    require(is_one_hot(p), "labels are not one-hot");
    return {std::move(p), LabelKind::one_hot};
  }

  static LabelMatrix from_indices(const std::vector<Index>& classes, Index class_count) {
    require(class_count >= 1, "class count must be positive");
    Matrix p = Matrix::Zero(class_count, static_cast<Index>(classes.size()));
    for (std::size_t j = 0; j < classes.size(); ++j) {
      require(classes[j] >= 0 && classes[j] < class_count,
              "class index " + std::to_string(classes[j]) + " out of range");
      p(classes[j], static_cast<Index>(j)) = 1.0;
    }
    return {std::move(p), LabelKind::one_hot};
  }

  Index classes() const { return values.rows(); }
  Index samples() const { return values.cols(); }
};

/// C P_L - 1: zero mean across classes in every column.
inline Matrix xent_target(const Matrix& one_hot) {
  require(is_one_hot(one_hot), "xent_target: labels are not one-hot");
  return static_cast<double>(one_hot.rows()) * one_hot -
         Matrix::Ones(one_hot.rows(), one_hot.cols());
}

// ---------------------------------------------------------------------------
// M = I_C - 1_{CC} / C, applied without materialising it.
// ---------------------------------------------------------------------------

struct MMatrix {
  Index classes = 1;

  /// Removes the mean across classes (rows) from every column.
  Matrix apply(const Matrix& w) const {
    require(w.rows() == classes, "MMatrix: expected " + std::to_string(classes) + " rows, got " +
                                     std::to_string(w.rows()));
    return w.rowwise() - w.colwise().mean();
  }

  /// The class-mean part (1/C) 1_{CC} w, the complement of apply().
  Matrix class_mean(const Matrix& w) const {
    require(w.rows() == classes, "MMatrix: row count mismatch");
    return Matrix::Ones(classes, 1) * w.colwise().mean();
  }

  Matrix dense() const {
    const double c = static_cast<double>(classes);
    return Matrix::Identity(classes, classes) - Matrix::Constant(classes, classes, 1.0 / c);
  }
};

// ---------------------------------------------------------------------------
// Single steps
// ---------------------------------------------------------------------------

namespace detail {

inline void check_step_dims(const Matrix& w, const Matrix& phi, const Matrix& y, const char* who) {
  require(w.cols() == phi.rows(), std::string(who) + ": weights " + dims(w) +
                                      " incompatible with features " + dims(phi));
  require(y.cols() == phi.cols() && y.rows() == w.rows(),
          std::string(who) + ": labels " + dims(y) + " incompatible with weights " + dims(w) +
              " and features " + dims(phi));
}

inline void check_rate(double gamma, const char* who) {
  require(gamma >= 0.0 && std::isfinite(gamma), std::string(who) + ": learning rate must be >= 0");
}

}  // namespace detail

/// w - (gamma/N) w Phi Phi^T + (gamma/N) y Phi^T
inline Matrix gd_step_mse(const Matrix& w, const Matrix& phi, const Matrix& y, double gamma) {
  detail::check_step_dims(w, phi, y, "gd_step_mse");
  detail::check_rate(gamma, "gd_step_mse");
  const double n = static_cast<double>(phi.cols());
  return w - (gamma / n) * ((w * phi - y) * phi.transpose());
}

/// High-temperature recursion with beta^2/C absorbed into gamma and beta = alpha:
/// w - (gamma/N) [M w Phi - (C P_L - 1)] Phi^T
inline Matrix gd_step_xent_linearized(const Matrix& w, const Matrix& phi, const Matrix& one_hot,
                                      double gamma) {
  detail::check_step_dims(w, phi, one_hot, "gd_step_xent_linearized");
  detail::check_rate(gamma, "gd_step_xent_linearized");
  const Matrix target = xent_target(one_hot);
  const MMatrix m{w.rows()};
  const double n = static_cast<double>(phi.cols());
  return w - (gamma / n) * ((m.apply(w) * phi - target) * phi.transpose());
}

/// Column-wise softmax of beta * logits.
inline Matrix softmax_columns(const Matrix& logits, double beta = 1.0) {
  Matrix p(logits.rows(), logits.cols());
  for (Index j = 0; j < logits.cols(); ++j) {
    const Vector z = beta * logits.col(j);
    const double zmax = z.maxCoeff();
    const Vector e = (z.array() - zmax).exp();
    p.col(j) = e / e.sum();
  }
  return p;
}

/// Exact softmax cross-entropy step with inverse temperature beta and label
/// smoothing alpha: w - (gamma beta / N) (P_M - P~_L) Phi^T.
inline Matrix gd_step_xent_exact(const Matrix& w, const Matrix& phi, const Matrix& one_hot,
                                 double gamma, double beta, double alpha) {
  detail::check_step_dims(w, phi, one_hot, "gd_step_xent_exact");
  detail::check_rate(gamma, "gd_step_xent_exact");
  require(alpha >= 0.0 && alpha <= 1.0, "gd_step_xent_exact: alpha must lie in [0, 1]");
  require(beta > 0.0 && std::isfinite(beta), "gd_step_xent_exact: beta must be positive");
  require(is_one_hot(one_hot), "gd_step_xent_exact: labels are not one-hot");
  const double c = static_cast<double>(w.rows());
  const double n = static_cast<double>(phi.cols());
  const Matrix pm = softmax_columns(w * phi, beta);
  const Matrix smoothed =
      alpha * one_hot + Matrix::Constant(one_hot.rows(), one_hot.cols(), (1.0 - alpha) / c);
  return w - (gamma * beta / n) * ((pm - smoothed) * phi.transpose());
}

// ---------------------------------------------------------------------------
// Closed-form trajectories
// ---------------------------------------------------------------------------

struct TrajectorySolution {
  Matrix w_infinity;  // C x F
  Matrix w_initial;   // C x F
  SpectralDecomp decomp;
  double learning_rate = 0.0;
  LossKind loss_kind = LossKind::mse;

  Index classes() const { return w_initial.rows(); }
  Index features() const { return w_initial.cols(); }
};

/// Largest stable learning rate, 2 / lambda_max (infinite for rank 0).
inline double max_stable_rate(const SpectralDecomp& d) {
  return d.max_eigenvalue() > 0.0 ? 2.0 / d.max_eigenvalue()
                                  : std::numeric_limits<double>::infinity();
}

/// Default rate 1 / lambda_max, so every factor (1 - gamma lambda_i) lies in [0, 1).
inline double default_rate(const SpectralDecomp& d) {
  return d.max_eigenvalue() > 0.0 ? 1.0 / d.max_eigenvalue() : 1.0;
}

inline void check_stability(const SpectralDecomp& d, double gamma) {
  require(gamma > 0.0 && std::isfinite(gamma), "learning rate must be positive");
  const double gmax = max_stable_rate(d);
  if (!(gamma < gmax))
    throw StabilityError("learning rate " + detail::format_double(gamma) + " is unstable; gamma_max = 2/lambda_max = " +
                             detail::format_double(gmax),
                         gamma, gmax);
}

/// Infinite-time weights. For MSE: y Phi^T (Phi Phi^T)^+ + w0 (I - U U^T).
/// For the linearised cross entropy only M w is fixed by the dynamics; the
/// class mean is conserved, so it is set to the class mean of w0.
inline Matrix infinite_time_weights(const SpectralDecomp& d, const LabelMatrix& labels,
                                    const Matrix& w0, LossKind kind) {
  require(w0.cols() == d.rows, "initial weights " + dims(w0) + " incompatible with " +
                                   std::to_string(d.rows) + " features");
  require(labels.samples() == d.cols, "labels have " + std::to_string(labels.samples()) +
                                          " columns but Phi has " + std::to_string(d.cols));
  require(labels.classes() == w0.rows(), "labels have " + std::to_string(labels.classes()) +
                                             " classes but weights have " +
                                             std::to_string(w0.rows()) + " rows");
  if (kind == LossKind::mse) return pseudo_solve(d, labels.values) + frozen_component(d, w0);

  require(labels.kind == LabelKind::one_hot, "cross-entropy dynamics need one-hot labels");
  const MMatrix m{w0.rows()};
  const Matrix fit = pseudo_solve(d, xent_target(labels.values));
  return fit + m.apply(frozen_component(d, w0)) + m.class_mean(w0);
}

inline TrajectorySolution solve_trajectory(const Matrix& phi, const LabelMatrix& labels,
                                           const Matrix& w0, double gamma, LossKind kind) {
  TrajectorySolution s;
  s.decomp = decompose(phi);
  check_stability(s.decomp, gamma);
  s.w_infinity = infinite_time_weights(s.decomp, labels, w0, kind);
  s.w_initial = w0;
  s.learning_rate = gamma;
  s.loss_kind = kind;
  return s;
}

/// Per-mode decay factors (1 - gamma lambda_i)^t.
inline Vector decay_factors(const Vector& eigenvalues, double gamma, std::uint64_t t) {
  Vector f(eigenvalues.size());
  const double td = static_cast<double>(t);
  for (Index i = 0; i < eigenvalues.size(); ++i)
    f(i) = t == 0 ? 1.0 : std::pow(1.0 - gamma * eigenvalues(i), td);
  return f;
}

/// Weights after exactly t full-batch steps.
inline Matrix evaluate_at(const TrajectorySolution& s, std::uint64_t t) {
  if (t == 0) return s.w_initial;
  const SpectralDecomp& d = s.decomp;
  if (d.rank() == 0) return s.w_infinity;
  const Vector f = decay_factors(d.eigenvalues, s.learning_rate, t);
  const Matrix delta = (s.w_initial - s.w_infinity) * d.left_vectors;  // C x r
  return s.w_infinity + (delta * f.asDiagonal()) * d.left_vectors.transpose();
}

inline Matrix converged_xent_weights(const Matrix& phi, const Matrix& one_hot, const Matrix& w0) {
  require(phi.cols() == one_hot.cols(), "converged_xent_weights: features " + dims(phi) +
                                            " and labels " + dims(one_hot) + " disagree on N");
  require(w0.rows() == one_hot.rows() && w0.cols() == phi.rows(),
          "converged_xent_weights: initial weights " + dims(w0) + " incompatible");
  return infinite_time_weights(decompose(phi), LabelMatrix::one_hot(one_hot), w0,
                               LossKind::xent_linearized);
}

/// Row index of the largest score in every column of w Phi (first on ties).
inline std::vector<Index> predict_classes(const Matrix& w, const Matrix& phi) {
  require(w.cols() == phi.rows(), "predict_classes: weights " + dims(w) + " vs features " + dims(phi));
  const Matrix scores = w * phi;
  std::vector<Index> out(static_cast<std::size_t>(scores.cols()));
  for (Index j = 0; j < scores.cols(); ++j) {
    Index best = 0;
    scores.col(j).maxCoeff(&best);
    out[static_cast<std::size_t>(j)] = best;
  }
  return out;
}

inline double top1_accuracy(const Matrix& w, const Matrix& phi, const Matrix& one_hot) {
  const auto pred = predict_classes(w, phi);
  if (pred.empty()) return 0.0;
  Index hits = 0;
  for (Index j = 0; j < one_hot.cols(); ++j) hits += one_hot(pred[static_cast<std::size_t>(j)], j) == 1.0;
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

}  // namespace edd
