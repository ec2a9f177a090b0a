#pragma once

// Label-noise models. Eigen-thresholded noise lives in the right-singular
// basis of the training data: z (C x r) is nonzero only on modes whose
// eigenvalue exceeds the threshold, and eps = z V^T. Uniform noise is i.i.d.
// in label space. sigma is the variance of the individual noise entries.

#include "edd/core.hpp"
#include "edd/spectra.hpp"

#include "json.hpp"

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

namespace edd {

enum class NoiseFamily { eigen_thresholded, uniform, none };

inline std::string to_string(NoiseFamily f) {
  switch (f) {
    case NoiseFamily::eigen_thresholded: return "eigen_thresholded";
    case NoiseFamily::uniform: return "uniform";
    case NoiseFamily::none: return "none";
  }
  return "none";
}

inline NoiseFamily parse_noise_family(const std::string& s) {
  if (s == "eigen_thresholded" || s == "thresholded") return NoiseFamily::eigen_thresholded;
  if (s == "uniform") return NoiseFamily::uniform;
  if (s == "none") return NoiseFamily::none;
  throw DomainError("unknown noise family '" + s + "' (expected eigen_thresholded, uniform or none)");
}

struct NoiseSpec {
  NoiseFamily family = NoiseFamily::eigen_thresholded;
  double sigma = 0.0;  // variance of each z entry
  double threshold = 1.0;
  std::uint64_t seed = 0;

  void validate() const {
    require(sigma >= 0.0 && std::isfinite(sigma), "noise sigma must be finite and >= 0");
    require(std::isfinite(threshold), "noise threshold must be finite");
  }
};

inline void to_json(nlohmann::json& j, const NoiseSpec& s) {
  j = nlohmann::json{{"family", to_string(s.family)},
                     {"sigma", s.sigma},
                     {"threshold", s.threshold},
                     {"seed", s.seed}};
}

inline void from_json(const nlohmann::json& j, NoiseSpec& s) {
  s.family = parse_noise_family(j.at("family").get<std::string>());
  s.sigma = j.at("sigma").get<double>();
  s.threshold = j.value("threshold", 1.0);
  s.seed = j.value("seed", std::uint64_t{0});
  s.validate();
}

/// Mode mask of eigen-thresholded noise: strictly above the threshold.
inline std::vector<bool> noisy_modes(const Vector& eigenvalues, double threshold) {
  std::vector<bool> mask(static_cast<std::size_t>(eigenvalues.size()));
  for (Index j = 0; j < eigenvalues.size(); ++j) mask[static_cast<std::size_t>(j)] = eigenvalues(j) > threshold;
  return mask;
}

/// z entries for the r modes of `eigenvalues`: N(0, sigma) where the mode is
/// noisy, exactly zero elsewhere. All C x r normals are always drawn so the
/// stream does not depend on the threshold.
inline Matrix draw_thresholded_coefficients(const Vector& eigenvalues, double sigma, double threshold,
                                            Index classes, Rng& rng) {
  Matrix z(classes, eigenvalues.size());
  fill_normal(z, rng, std::sqrt(sigma));
  const auto mask = noisy_modes(eigenvalues, threshold);
  for (Index j = 0; j < z.cols(); ++j)
    if (!mask[static_cast<std::size_t>(j)] || sigma == 0.0) z.col(j).setZero();
  return z;
}

/// eps = z V^T with z drawn per mode. Zero for sigma = 0, rank 0, or when no
/// eigenvalue exceeds the threshold.
inline Matrix make_thresholded_noise(const SpectralDecomp& d, const NoiseSpec& spec, Index classes) {
  spec.validate();
  require(spec.family == NoiseFamily::eigen_thresholded,
          "make_thresholded_noise: spec family is " + to_string(spec.family));
  require(classes >= 1, "make_thresholded_noise: class count must be positive");
  if (d.rank() == 0 || spec.sigma == 0.0) return Matrix::Zero(classes, d.cols);
  Rng rng = make_rng(spec.seed);
  const Matrix z = draw_thresholded_coefficients(d.eigenvalues, spec.sigma, spec.threshold, classes, rng);
  return z * d.right_vectors.transpose();
}

/// C x N matrix of i.i.d. N(0, sigma) entries.
inline Matrix make_uniform_noise(Index samples, Index classes, double sigma, std::uint64_t seed) {
  require(sigma >= 0.0 && std::isfinite(sigma), "make_uniform_noise: sigma must be >= 0");
  require(samples >= 1 && classes >= 1, "make_uniform_noise: dimensions must be positive");
  Matrix eps = Matrix::Zero(classes, samples);
  if (sigma == 0.0) return eps;
  Rng rng = make_rng(seed);
  fill_normal(eps, rng, std::sqrt(sigma));
  return eps;
}

/// Dispatches on the family; NONE yields an exact zero matrix.
inline Matrix make_noise(const SpectralDecomp& d, const NoiseSpec& spec, Index classes) {
  spec.validate();
  switch (spec.family) {
    case NoiseFamily::eigen_thresholded: return make_thresholded_noise(d, spec, classes);
    case NoiseFamily::uniform: return make_uniform_noise(d.cols, classes, spec.sigma, spec.seed);
    case NoiseFamily::none: return Matrix::Zero(classes, d.cols);
  }
  return Matrix::Zero(classes, d.cols);
}

/// eta = eps V, the noise in the right-singular basis.
inline Matrix noise_mode_coefficients(const Matrix& eps, const SpectralDecomp& d) {
  require(eps.cols() == d.cols, "noise_mode_coefficients: noise is " + dims(eps) + " but data has " +
                                    std::to_string(d.cols) + " samples");
  return eps * d.right_vectors;
}

// ---------------------------------------------------------------------------
// Label permutation noise
// ---------------------------------------------------------------------------

/// Diagonal 0/1 matrix F stored as the sorted set of its nonzero indices.
struct PermutationMask {
  Index size = 0;
  std::vector<Index> indices;
  double fraction = 0.0;

  static PermutationMask random(Index n, double fraction, std::uint64_t seed) {
    require(n >= 1, "PermutationMask: size must be positive");
    require(fraction >= 0.0 && fraction <= 1.0, "PermutationMask: fraction must lie in [0, 1]");
    const auto ones = static_cast<Index>(std::llround(fraction * static_cast<double>(n)));
    std::vector<Index> all(static_cast<std::size_t>(n));
    std::iota(all.begin(), all.end(), Index{0});
    Rng rng = make_rng(seed);
    std::shuffle(all.begin(), all.end(), rng);
    PermutationMask m;
    m.size = n;
    m.fraction = fraction;
    m.indices.assign(all.begin(), all.begin() + ones);
    std::sort(m.indices.begin(), m.indices.end());
    return m;
  }

  Vector diagonal() const {
    Vector d = Vector::Zero(size);
    for (Index i : indices) d(i) = 1.0;
    return d;
  }

  Matrix dense() const { return Matrix(diagonal().asDiagonal()); }
};

/// The two parts of F X^T in the full right-singular basis of X = U S V^T
/// (V is N x N, S^T is N x D):
///
///   F X^T = V F S^T U^T + [F, V] S^T U^T,   [F, V] = F V - V F = V o D,
///
/// with D_ij = F_ii - F_jj. The commutator is formed with dense products so
/// the elementwise identity is checked, not assumed.
struct PermutationDecomposition {
  Matrix coupled;          // V F S^T U^T, N x D
  Matrix commutator_term;  // [F, V] S^T U^T, N x D
  Matrix commutator;       // F V - V F, N x N
  Matrix d_matrix;         // N x N
  Matrix right_vectors;    // V, N x N
  double identity_error = 0.0;  // max |[F, V] - V o D|
};

inline PermutationDecomposition permutation_noise_decomposition(const Matrix& x, const PermutationMask& mask) {
  require(mask.size == x.cols(), "permutation_noise_decomposition: mask has size " + std::to_string(mask.size) +
                                     " but X has " + std::to_string(x.cols()) + " columns");
  require(all_finite(x), "permutation_noise_decomposition: X has non-finite entries");
  const Index n = x.cols();
  const Index dim = x.rows();

  Eigen::JacobiSVD<Matrix> svd(x, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Matrix& u = svd.matrixU();
  const Matrix& v = svd.matrixV();
  Matrix st = Matrix::Zero(n, dim);
  for (Index i = 0; i < svd.singularValues().size(); ++i) st(i, i) = svd.singularValues()(i);

  const Matrix f = mask.dense();
  const Vector fd = mask.diagonal();

  PermutationDecomposition out;
  out.right_vectors = v;
  out.d_matrix = fd.replicate(1, n) - fd.transpose().replicate(n, 1);
  out.commutator = f * v - v * f;
  out.identity_error = (out.commutator - v.cwiseProduct(out.d_matrix)).cwiseAbs().maxCoeff();
  const Matrix tail = st * u.transpose();
  out.coupled = v * f * tail;
  out.commutator_term = out.commutator * tail;
  return out;
}

}  // namespace edd
