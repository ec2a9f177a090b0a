#pragma once

// Finite-size Monte Carlo of the linear teacher-student model and the two
// interventions built on it: PCA removal of small-eigenvalue input
// directions, and replacing a classifier head by its converged weights.
//
// Per realization: X (D x N) with N(0, 1) entries, teacher w_T (C x D) with
// N(0, 1/D) entries, labels y = w_T X + eps, student trained from w0 = 0 by
// full-batch gradient descent. The test loss on isotropic test points is
// ||w(t) - w_T||_F^2 / (2C), which starts at 1/2 on average.
//
// Label noise is generated with per-entry variance sigma * N / D in the
// right-singular basis. Then the infinite-time error of mode j is
// eta_j / sqrt(N lambda_j) with variance sigma / (D lambda_j), and the
// average over the D teacher directions gives exactly the sigma / x term
// of the theory.
//
// Two engines produce the same loss curves in distribution:
//   full:     samples X, decomposes it, trains via the closed-form trajectory
//             and evaluates ||w(t) - w_T||^2 literally. Cost O(D N min(D, N)).
//   spectral: uses that the loss only depends on the eigenvalues of X X^T / N
//             and on the teacher and noise coordinates in the singular
//             bases. By rotational invariance those coordinates are i.i.d.
//             Gaussian and independent of the eigenvalues, which come from
//             the tridiagonal Laguerre model. Cost O(min(D, N)^2).

#include "edd/core.hpp"
#include "edd/dynamics.hpp"
#include "edd/noise.hpp"
#include "edd/parallel.hpp"
#include "edd/spectra.hpp"
#include "edd/theory.hpp"

#include <algorithm>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace edd {

enum class Engine { spectral, full };

inline std::string to_string(Engine e) { return e == Engine::spectral ? "spectral" : "full"; }

inline Engine parse_engine(const std::string& s) {
  if (s == "spectral") return Engine::spectral;
  if (s == "full") return Engine::full;
  throw DomainError("unknown engine '" + s + "' (expected spectral or full)");
}

/// Training-input filter for the full engine: keep the principal components
/// of the centered training inputs whose covariance eigenvalue exceeds
/// `threshold`, or the top `components` if that is set.
struct InputFilter {
  double threshold = 1.0;
  std::optional<Index> components;
};

struct ExperimentConfig {
  Index samples = 4000;   // N
  Index features = 4000;  // D
  Index classes = 1;      // C
  NoiseSpec noise;
  std::optional<double> learning_rate;  // default 1 / lambda_plus(D / N)
  std::vector<std::uint64_t> times = time_grid(1000000, 200);
  std::vector<std::uint64_t> seeds;
  Engine engine = Engine::spectral;
  std::optional<InputFilter> input_filter;  // full engine only

  double aspect_ratio() const { return static_cast<double>(features) / static_cast<double>(samples); }
  double gamma() const { return learning_rate ? *learning_rate : 1.0 / mp_params(aspect_ratio()).support_high; }

  /// Per-entry variance of the label noise in the right-singular basis.
  double label_noise_variance() const { return noise.sigma / aspect_ratio(); }

  void validate() const {
    require(samples >= 1 && features >= 1 && classes >= 1, "experiment dimensions must be positive");
    noise.validate();
    require(!seeds.empty(), "experiment needs at least one seed");
    require(std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() == seeds.size(), "experiment seeds must be distinct");
    require(!times.empty() && std::is_sorted(times.begin(), times.end()) &&
                std::adjacent_find(times.begin(), times.end()) == times.end(),
            "experiment time grid must be strictly ascending");
    require(gamma() > 0.0 && std::isfinite(gamma()), "learning rate must be positive");
    require(!input_filter || engine == Engine::full, "input filtering requires the full engine");
  }
};

inline std::vector<std::uint64_t> seed_range(std::uint64_t first, std::uint64_t count) {
  std::vector<std::uint64_t> s(count);
  for (std::uint64_t i = 0; i < count; ++i) s[i] = first + i;
  return s;
}

// Sub-streams of one realization.
inline std::uint64_t data_stream(std::uint64_t seed) { return derive_seed(seed, 0); }
inline std::uint64_t teacher_stream(std::uint64_t seed) { return derive_seed(seed, 1); }
inline std::uint64_t noise_stream(std::uint64_t seed, std::uint64_t spec_seed) {
  return derive_seed(derive_seed(seed, 2), spec_seed);
}

// ---------------------------------------------------------------------------
// Mode representation of one realization
// ---------------------------------------------------------------------------

/// Everything the test loss depends on: eigenvalues of X X^T / N, teacher
/// coordinates q = w_T U, label-noise coordinates eta = eps V and the squared
/// norm of the teacher outside the column space of U.
struct ModeRealization {
  Vector eigenvalues;   // r
  Matrix teacher;       // C x r
  Matrix noise;         // C x r
  double null_norm2 = 0.0;
  Index samples = 0;

  Index classes() const { return teacher.rows(); }
};

/// (1/2C) [ sum_{c,j} (-q f_j + eta (1 - f_j) / sqrt(N lambda_j))^2 + null_norm2 ]
inline double realization_loss(const ModeRealization& m, double gamma, std::uint64_t t) {
  const double n = static_cast<double>(m.samples);
  const double td = static_cast<double>(t);
  double sum = m.null_norm2;
  for (Index j = 0; j < m.eigenvalues.size(); ++j) {
    const double l = m.eigenvalues(j);
    const double f = t == 0 ? 1.0 : std::pow(1.0 - gamma * l, td);
    const double amp = (1.0 - f) / std::sqrt(n * l);
    for (Index c = 0; c < m.teacher.rows(); ++c) {
      const double e = -m.teacher(c, j) * f + m.noise(c, j) * amp;
      sum += e * e;
    }
  }
  return sum / (2.0 * static_cast<double>(m.classes()));
}

inline void check_realization_stability(double max_eigenvalue, double gamma, std::uint64_t seed) {
  const double gmax = max_eigenvalue > 0.0 ? 2.0 / max_eigenvalue : std::numeric_limits<double>::infinity();
  if (!(gamma < gmax))
    throw StabilityError("seed " + std::to_string(seed) + ": learning rate " + detail::format_double(gamma) +
                             " is unstable for this realization; gamma_max = 2/lambda_max = " +
                             detail::format_double(gmax),
                         gamma, gmax);
}

inline ModeRealization sample_spectral_realization(const ExperimentConfig& cfg, std::uint64_t seed) {
  const Index n = cfg.samples, d = cfg.features, c = cfg.classes;
  ModeRealization m;
  m.samples = n;
  Rng data_rng = make_rng(data_stream(seed));
  m.eigenvalues = sample_wishart_spectrum(n, d, data_rng);
  const Index r = m.eigenvalues.size();

  Rng teacher_rng = make_rng(teacher_stream(seed));
  const double teacher_std = 1.0 / std::sqrt(static_cast<double>(d));
  m.teacher.resize(c, r);
  fill_normal(m.teacher, teacher_rng, teacher_std);
  Matrix null_part(c, d - r);
  fill_normal(null_part, teacher_rng, teacher_std);
  m.null_norm2 = null_part.squaredNorm();

  Rng noise_rng = make_rng(noise_stream(seed, cfg.noise.seed));
  const double var = cfg.label_noise_variance();
  switch (cfg.noise.family) {
    case NoiseFamily::eigen_thresholded:
      m.noise = draw_thresholded_coefficients(m.eigenvalues, var, cfg.noise.threshold, c, noise_rng);
      break;
    case NoiseFamily::uniform:
      m.noise.resize(c, r);
      fill_normal(m.noise, noise_rng, std::sqrt(var));
      if (var == 0.0) m.noise.setZero();
      break;
    case NoiseFamily::none:
      m.noise = Matrix::Zero(c, r);
      break;
  }
  return m;
}

// ---------------------------------------------------------------------------
// Full pipeline
// ---------------------------------------------------------------------------

struct PcaResult {
  Matrix filtered;     // D x N
  Matrix components;   // D x k, orthonormal, by decreasing variance
  Vector mean;         // D
  Vector eigenvalues;  // all covariance eigenvalues (centered, divided by N), descending
  double explained_variance_ratio = 1.0;
};

/// Centers the columns, keeps the top-k principal components, maps back to
/// the original D-dimensional space and re-adds the mean.
inline PcaResult pca_filter(const Matrix& x, Index k) {
  require(all_finite(x), "pca_filter: input has non-finite entries");
  require(x.rows() >= 1 && x.cols() >= 1, "pca_filter: input is empty");
  require(k >= 0 && k <= x.rows(), "pca_filter: k = " + std::to_string(k) + " must lie in [0, " +
                                       std::to_string(x.rows()) + "]");
  PcaResult out;
  out.mean = x.rowwise().mean();
  const Matrix centered = x.colwise() - out.mean;
  const SpectralDecomp d = decompose(centered);
  out.eigenvalues = Vector::Zero(x.rows());
  out.eigenvalues.head(d.rank()) = d.eigenvalues;

  const Index kept = std::min(k, d.rank());
  out.components = Matrix::Zero(x.rows(), k);
  out.components.leftCols(kept) = d.left_vectors.leftCols(kept);
  if (k > kept) {
    // Zero-variance directions: complete the basis so components stay orthonormal.
    const Matrix q = Eigen::HouseholderQR<Matrix>(d.left_vectors.leftCols(kept)).householderQ();
    out.components.rightCols(k - kept) = q.middleCols(kept, k - kept);
  }
  const Matrix u = d.left_vectors.leftCols(kept);
  out.filtered = (u * (u.transpose() * centered)).colwise() + out.mean;
  const double total = d.eigenvalues.sum();
  out.explained_variance_ratio = total > 0.0 ? d.eigenvalues.head(kept).sum() / total : 1.0;
  return out;
}

/// Number of centered-covariance eigenvalues strictly above the threshold.
inline Index components_above(const Matrix& x, double threshold) {
  const Matrix centered = x.colwise() - x.rowwise().mean();
  const SpectralDecomp d = decompose(centered);
  Index k = 0;
  while (k < d.rank() && d.eigenvalues(k) > threshold) ++k;
  return k;
}

struct FullRealization {
  Matrix inputs;    // X, D x N
  Matrix features;  // training features (X or its PCA filtering)
  Matrix teacher;   // C x D
  Matrix noise;     // C x N
  TrajectorySolution trajectory;
};

inline FullRealization sample_full_realization(const ExperimentConfig& cfg, std::uint64_t seed) {
  FullRealization r;
  r.inputs = sample_gaussian_data(cfg.samples, cfg.features, data_stream(seed));
  Rng teacher_rng = make_rng(teacher_stream(seed));
  r.teacher.resize(cfg.classes, cfg.features);
  fill_normal(r.teacher, teacher_rng, 1.0 / std::sqrt(static_cast<double>(cfg.features)));

  // Noise lives in the singular basis of the raw inputs, whatever the student sees.
  const SpectralDecomp raw = decompose(r.inputs);
  NoiseSpec spec = cfg.noise;
  spec.sigma = cfg.label_noise_variance();
  spec.seed = noise_stream(seed, cfg.noise.seed);
  if (spec.family == NoiseFamily::uniform) {
    // Uniform noise is generated in label space; only its projection on V matters.
    r.noise = make_uniform_noise(cfg.samples, cfg.classes, spec.sigma, spec.seed);
  } else {
    r.noise = make_noise(raw, spec, cfg.classes);
  }

  if (cfg.input_filter) {
    const Index k = cfg.input_filter->components ? *cfg.input_filter->components
                                                 : components_above(r.inputs, cfg.input_filter->threshold);
    r.features = pca_filter(r.inputs, k).filtered;
  } else {
    r.features = r.inputs;
  }

  const LabelMatrix labels = LabelMatrix::real_valued(r.teacher * r.inputs + r.noise);
  const Matrix w0 = Matrix::Zero(cfg.classes, cfg.features);
  const double gamma = cfg.gamma();
  const SpectralDecomp fd = cfg.input_filter ? decompose(r.features) : raw;
  check_realization_stability(fd.max_eigenvalue(), gamma, seed);
  r.trajectory.decomp = fd;
  r.trajectory.w_initial = w0;
  r.trajectory.w_infinity = infinite_time_weights(fd, labels, w0, LossKind::mse);
  r.trajectory.learning_rate = gamma;
  r.trajectory.loss_kind = LossKind::mse;
  return r;
}

inline double teacher_loss(const Matrix& w, const Matrix& teacher) {
  return (w - teacher).squaredNorm() / (2.0 * static_cast<double>(teacher.rows()));
}

/// Mode coordinates of a full realization trained on its raw inputs.
inline ModeRealization modes_of(const FullRealization& r) {
  const SpectralDecomp& d = r.trajectory.decomp;
  ModeRealization m;
  m.samples = d.cols;
  m.eigenvalues = d.eigenvalues;
  m.teacher = r.teacher * d.left_vectors;
  m.noise = noise_mode_coefficients(r.noise, d);
  m.null_norm2 = frozen_component(d, r.teacher).squaredNorm();
  return m;
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

struct CurveStats {
  std::vector<std::uint64_t> times;
  std::vector<std::uint64_t> seeds;
  Matrix per_seed;  // seeds x times
  Vector mean;
  Vector std;       // sample standard deviation (n - 1)
  Vector stderr_;   // std / sqrt(#seeds)

  LossCurve mean_curve(double lambda, double sigma, double gamma, double threshold = 1.0) const {
    LossCurve c;
    c.times = times;
    c.losses.assign(mean.data(), mean.data() + mean.size());
    c.lambda = lambda;
    c.sigma = sigma;
    c.gamma = gamma;
    c.threshold = threshold;
    return c;
  }
};

inline CurveStats aggregate(const std::vector<std::uint64_t>& times, const std::vector<std::uint64_t>& seeds,
                            const Matrix& per_seed) {
  CurveStats s;
  s.times = times;
  s.seeds = seeds;
  s.per_seed = per_seed;
  const double n = static_cast<double>(per_seed.rows());
  s.mean = per_seed.colwise().sum().transpose() / n;
  s.std = Vector::Zero(per_seed.cols());
  if (per_seed.rows() > 1) {
    for (Index k = 0; k < per_seed.cols(); ++k)
      s.std(k) = std::sqrt((per_seed.col(k).array() - s.mean(k)).square().sum() / (n - 1.0));
  }
  s.stderr_ = s.std / std::sqrt(n);
  return s;
}

/// Loss curve of one realization on cfg.times.
inline std::vector<double> realization_curve(const ExperimentConfig& cfg, std::uint64_t seed) {
  std::vector<double> out(cfg.times.size());
  const double gamma = cfg.gamma();
  if (cfg.engine == Engine::spectral) {
    const ModeRealization m = sample_spectral_realization(cfg, seed);
    check_realization_stability(m.eigenvalues.size() > 0 ? m.eigenvalues(0) : 0.0, gamma, seed);
    for (std::size_t k = 0; k < cfg.times.size(); ++k) out[k] = realization_loss(m, gamma, cfg.times[k]);
  } else {
    const FullRealization r = sample_full_realization(cfg, seed);
    for (std::size_t k = 0; k < cfg.times.size(); ++k)
      out[k] = teacher_loss(evaluate_at(r.trajectory, cfg.times[k]), r.teacher);
  }
  return out;
}

inline CurveStats run_teacher_student(const ExperimentConfig& cfg) {
  cfg.validate();
  Matrix per_seed(static_cast<Index>(cfg.seeds.size()), static_cast<Index>(cfg.times.size()));
  parallel_for(cfg.seeds.size(), [&](std::size_t i) {
    const auto curve = realization_curve(cfg, cfg.seeds[i]);
    for (std::size_t k = 0; k < curve.size(); ++k) per_seed(static_cast<Index>(i), static_cast<Index>(k)) = curve[k];
  });
  return aggregate(cfg.times, cfg.seeds, per_seed);
}

// ---------------------------------------------------------------------------
// Theory comparison and ablation
// ---------------------------------------------------------------------------

/// Absolute accuracy of the theory curves, added to the k * stderr band.
inline constexpr double kQuadratureSlack = 1e-8;

struct TheoryComparison {
  std::vector<std::uint64_t> times;
  Vector mc_mean, mc_stderr, theory, z;
  double max_abs_z = 0.0;
  bool within(double k, double absolute_slack = kQuadratureSlack) const {
    for (Index i = 0; i < theory.size(); ++i)
      if (std::abs(mc_mean(i) - theory(i)) > k * mc_stderr(i) + absolute_slack) return false;
    return true;
  }
};

inline TheoryComparison compare_with_theory(const CurveStats& stats, const ExperimentConfig& cfg) {
  require(cfg.noise.family != NoiseFamily::uniform, "theory curves describe thresholded (or no) noise only");
  const double sigma = cfg.noise.family == NoiseFamily::none ? 0.0 : cfg.noise.sigma;
  const LossTermsCurve terms = loss_terms_curve(cfg.aspect_ratio(), cfg.gamma(), stats.times, cfg.noise.threshold);
  TheoryComparison out;
  out.times = stats.times;
  out.mc_mean = stats.mean;
  out.mc_stderr = stats.stderr_;
  const Index n = stats.mean.size();
  out.theory.resize(n);
  out.z.resize(n);
  for (Index i = 0; i < n; ++i) {
    out.theory(i) = terms.terms[static_cast<std::size_t>(i)].loss(sigma);
    const double diff = stats.mean(i) - out.theory(i);
    // Differences within the quadrature accuracy count as exact agreement.
    if (std::abs(diff) <= kQuadratureSlack)
      out.z(i) = 0.0;
    else
      out.z(i) = stats.stderr_(i) > 0.0 ? diff / stats.stderr_(i) : std::copysign(INFINITY, diff);
    out.max_abs_z = std::max(out.max_abs_z, std::abs(out.z(i)));
  }
  return out;
}

struct AblationEntry {
  NoiseFamily family = NoiseFamily::none;
  PhaseCell cell;
  CurveStats stats;
  bool edd() const { return has_edd(cell.phase); }
  bool monotone() const {
    for (Index i = 1; i < stats.mean.size(); ++i)
      if (stats.mean(i) > stats.mean(i - 1)) return false;
    return true;
  }
};

struct AblationReport {
  ExperimentConfig config;
  double rise_tol = 1e-3;
  double es_tol = 1e-3;
  std::vector<AblationEntry> entries;
};

/// run_teacher_student once per family at the same sigma and seeds, and
/// classify each mean curve.
inline AblationReport edd_ablation_suite(const ExperimentConfig& cfg, const std::vector<NoiseFamily>& families,
                                         double rise_tol = 1e-3, double es_tol = 1e-3) {
  require(!families.empty(), "ablation needs at least one noise family");
  AblationReport report;
  report.config = cfg;
  report.rise_tol = rise_tol;
  report.es_tol = es_tol;
  for (NoiseFamily f : families) {
    ExperimentConfig c = cfg;
    c.noise.family = f;
    AblationEntry e;
    e.family = f;
    e.stats = run_teacher_student(c);
    e.cell = classify_phase(e.stats.mean_curve(c.aspect_ratio(), c.noise.sigma, c.gamma(), c.noise.threshold),
                            rise_tol, es_tol);
    report.entries.push_back(std::move(e));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Converged last layer
// ---------------------------------------------------------------------------

struct ConvergedHead {
  Matrix weights;
  double accuracy_before = 0.0;
  double accuracy_after = 0.0;
};

/// Replaces a linear head by the infinite-time weights of the linearised
/// cross-entropy dynamics on the given features.
inline ConvergedHead converged_last_layer(const Matrix& features, const Matrix& one_hot, const Matrix& w0) {
  require(all_finite(features), "converged_last_layer: features have non-finite entries");
  require(is_one_hot(one_hot), "converged_last_layer: labels are not one-hot");
  ConvergedHead out;
  out.weights = converged_xent_weights(features, one_hot, w0);
  out.accuracy_before = top1_accuracy(w0, features, one_hot);
  out.accuracy_after = top1_accuracy(out.weights, features, one_hot);
  return out;
}

}  // namespace edd
