#pragma once

// Expected test loss of gradient descent on a linear teacher-student model as
// a function of training time, averaged over the Marchenko-Pastur spectrum:
//
//   L(t) = 1/2 [ int_{x>tau} (f^2 + (sigma/x)(1-f)^2) p(x) dx
//              + int_{x<=tau} f^2 p(x) dx + mass_0 ],    f = (1 - gamma x)^t.
//
// L is affine in sigma, so it is computed as base(t) + sigma * slope(t) and
// a single pass over t serves every sigma. On top of that: time grids, the
// four-way phase classification, early-stopping statistics, (lambda, sigma)
// sweeps and bisection for the critical noise levels.

#include "edd/core.hpp"
#include "edd/parallel.hpp"
#include "edd/quadrature.hpp"
#include "edd/spectra.hpp"

#include <algorithm>
#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

namespace edd {

// ---------------------------------------------------------------------------
// Quadrature against the MP law
// ---------------------------------------------------------------------------

struct LossTerms {
  double base = 0.0;   // sigma-independent part
  double slope = 0.0;  // coefficient of sigma
  double error = 0.0;  // estimated absolute quadrature error of base and slope combined

  double loss(double sigma) const { return base + sigma * slope; }
};

/// Integrals of g(x) p_MP(x) over the continuous support, split at the noise
/// threshold. The support is mapped by x = a + (b - a) sin^2(phi / 2), which
/// turns the square-root edges into smooth factors; each piece is cut into
/// panels graded geometrically toward both ends so that the sharp features
/// of (1 - gamma x)^t near an endpoint at large t are resolved. Every panel
/// gets an n-point Gauss-Legendre rule and n is doubled until two successive
/// estimates agree.
class MPQuadrature {
 public:
  static constexpr int kGradingLevels = 30;
  static constexpr Index kFirstOrder = 16;
  static constexpr Index kMaxOrder = 512;

  explicit MPQuadrature(double lambda, double threshold = 1.0, double tolerance = 1e-9)
      : params_(mp_params(lambda)), threshold_(threshold), tolerance_(tolerance) {
    require(std::isfinite(threshold), "noise threshold must be finite");
    require(tolerance > 0.0, "quadrature tolerance must be positive");
    const double a = params_.support_low, b = params_.support_high;
    if (threshold <= a || threshold >= b) {
      segments_.push_back({0.0, std::numbers::pi, threshold <= a});
    } else {
      const double phi_tau = 2.0 * std::asin(std::sqrt((threshold - a) / (b - a)));
      segments_.push_back({0.0, phi_tau, false});
      segments_.push_back({phi_tau, std::numbers::pi, true});
    }
  }

  const MPParams& params() const { return params_; }
  double threshold() const { return threshold_; }

  /// Generic adaptive integral of g over the continuous part. g receives x
  /// and whether x lies above the threshold.
  double integrate(const std::function<double(double, bool)>& g, double* error = nullptr) const {
    double previous = accumulate(kFirstOrder, g);
    for (Index n = 2 * kFirstOrder; n <= kMaxOrder; n *= 2) {
      const double current = accumulate(n, g);
      const double diff = std::abs(current - previous);
      previous = current;
      if (diff < tolerance_) {
        if (error) *error = diff;
        return current;
      }
      if (error) *error = diff;
    }
    return previous;
  }

  /// base and slope of the expected test loss at time t.
  LossTerms terms(double gamma, std::uint64_t t) const {
    const double td = static_cast<double>(t);
    auto eval = [&](Index order) {
      std::array<double, 2> sum{0.0, 0.0};
      const Nodes& nodes = nodes_for(order);
      for (std::size_t i = 0; i < nodes.x.size(); ++i) {
        const double x = nodes.x[i];
        const double f = t == 0 ? 1.0 : std::pow(1.0 - gamma * x, td);
        sum[0] += nodes.w[i] * f * f;
        if (nodes.noisy[i]) sum[1] += nodes.w[i] * (1.0 - f) * (1.0 - f) / x;
      }
      return sum;
    };
    std::array<double, 2> previous = eval(kFirstOrder);
    double err = 0.0;
    for (Index n = 2 * kFirstOrder; n <= kMaxOrder; n *= 2) {
      const std::array<double, 2> current = eval(n);
      err = std::max(std::abs(current[0] - previous[0]), std::abs(current[1] - previous[1]));
      previous = current;
      if (err < tolerance_) break;
    }
    LossTerms out;
    out.base = 0.5 * (previous[0] + params_.point_mass_at_zero);
    out.slope = 0.5 * previous[1];
    out.error = 0.5 * err;
    return out;
  }

 private:
  struct Segment {
    double phi_lo, phi_hi;
    bool noisy;
  };
  struct Nodes {
    std::vector<double> x, w;
    std::vector<char> noisy;
  };

  static std::vector<double> graded_breakpoints() {
    std::vector<double> u{0.0};
    for (int k = kGradingLevels; k >= 2; --k) u.push_back(std::ldexp(1.0, -k));
    u.push_back(0.5);
    for (int k = 2; k <= kGradingLevels; ++k) u.push_back(1.0 - std::ldexp(1.0, -k));
    u.push_back(1.0);
    return u;
  }

  const Nodes& nodes_for(Index order) const {
    std::lock_guard<std::mutex> lock(*mutex_);
    auto it = cache_.find(order);
    if (it != cache_.end()) return *it->second;
    auto nodes = std::make_unique<Nodes>();
    const GaussRule& rule = gauss_legendre(order);
    const double a = params_.support_low, b = params_.support_high;
    const double lambda = params_.aspect_ratio;
    const double width = b - a;
    const auto u = graded_breakpoints();
    for (const Segment& seg : segments_) {
      const double span = seg.phi_hi - seg.phi_lo;
      for (std::size_t p = 0; p + 1 < u.size(); ++p) {
        const double lo = seg.phi_lo + span * u[p];
        const double hi = seg.phi_lo + span * u[p + 1];
        const double mid = 0.5 * (lo + hi), half = 0.5 * (hi - lo);
        for (Index k = 0; k < rule.nodes.size(); ++k) {
          const double phi = mid + half * rule.nodes(k);
          const double s = std::sin(0.5 * phi), c = std::cos(0.5 * phi);
          const double x = a + width * s * s;
          // p(x) dx = (b - a)^2 s^2 c^2 / (2 pi lambda x) dphi
          const double jac = width * width * s * s * c * c / (2.0 * std::numbers::pi * lambda * x);
          nodes->x.push_back(x);
          nodes->w.push_back(half * rule.weights(k) * jac);
          nodes->noisy.push_back(seg.noisy ? 1 : 0);
        }
      }
    }
    return *cache_.emplace(order, std::move(nodes)).first->second;
  }

  double accumulate(Index order, const std::function<double(double, bool)>& g) const {
    const Nodes& nodes = nodes_for(order);
    double sum = 0.0;
    for (std::size_t i = 0; i < nodes.x.size(); ++i) sum += nodes.w[i] * g(nodes.x[i], nodes.noisy[i] != 0);
    return sum;
  }

  MPParams params_;
  double threshold_;
  double tolerance_;
  std::vector<Segment> segments_;
  mutable std::unique_ptr<std::mutex> mutex_ = std::make_unique<std::mutex>();
  mutable std::map<Index, std::unique_ptr<Nodes>> cache_;
};

// ---------------------------------------------------------------------------
// Learning rate
// ---------------------------------------------------------------------------

/// gamma = scale / lambda_plus unless a fixed value is given.
struct GammaRule {
  double scale = 1.0;
  std::optional<double> fixed;

  double rate(double lambda) const { return fixed ? *fixed : scale / mp_params(lambda).support_high; }
  std::string describe() const {
    return fixed ? "fixed " + detail::format_double(*fixed)
                 : detail::format_double(scale) + " / lambda_plus";
  }
};

inline void check_theory_stability(double lambda, double gamma) {
  require(gamma > 0.0 && std::isfinite(gamma), "learning rate must be positive");
  const double gmax = 2.0 / mp_params(lambda).support_high;
  if (!(gamma < gmax))
    throw StabilityError("learning rate " + detail::format_double(gamma) +
                             " is unstable on the MP support; gamma_max = 2/lambda_plus = " +
                             detail::format_double(gmax),
                         gamma, gmax);
}

inline double expected_test_loss(std::uint64_t t, double lambda, double sigma, double gamma,
                                 double threshold = 1.0) {
  require(sigma >= 0.0 && std::isfinite(sigma), "sigma must be finite and >= 0");
  check_theory_stability(lambda, gamma);
  return MPQuadrature(lambda, threshold).terms(gamma, t).loss(sigma);
}

// ---------------------------------------------------------------------------
// Curves
// ---------------------------------------------------------------------------

/// {0} plus round(t_max^(i / (points - 2))) for i = 0 .. points - 2,
/// deduplicated; always contains 0, 1 and t_max.
inline std::vector<std::uint64_t> time_grid(std::uint64_t t_max, Index points) {
  require(points >= 2, "time grid needs at least 2 points");
  require(t_max >= 1, "t_max must be at least 1");
  std::vector<std::uint64_t> grid{0};
  if (points == 2) {
    grid.push_back(t_max);
    return grid;
  }
  const double log_max = std::log(static_cast<double>(t_max));
  const Index steps = points - 2;
  for (Index i = 0; i <= steps; ++i) {
    const double v = i == steps ? static_cast<double>(t_max)
                                : std::round(std::exp(log_max * static_cast<double>(i) / static_cast<double>(steps)));
    const auto t = static_cast<std::uint64_t>(v);
    if (t != grid.back()) grid.push_back(t);
  }
  return grid;
}

struct TheoryOptions {
  std::uint64_t t_max = 1000000;
  Index points = 200;
  double rise_tol = 1e-3;
  double es_tol = 1e-3;
  double threshold = 1.0;
};

struct LossCurve {
  std::vector<std::uint64_t> times;
  std::vector<double> losses;
  double lambda = 1.0;
  double sigma = 0.0;
  double gamma = 0.0;
  double threshold = 1.0;

  void validate() const {
    require(times.size() == losses.size(), "loss curve: times and losses differ in length");
    require(!times.empty(), "loss curve is empty");
    for (std::size_t i = 1; i < times.size(); ++i)
      require(times[i] > times[i - 1], "loss curve times must be strictly ascending");
    for (double l : losses) require(std::isfinite(l) && l >= 0.0, "loss curve has negative or non-finite values");
  }
};

/// base and slope on a grid; at_sigma() turns it into a LossCurve.
struct LossTermsCurve {
  std::vector<std::uint64_t> times;
  std::vector<LossTerms> terms;
  double lambda = 1.0;
  double gamma = 0.0;
  double threshold = 1.0;

  LossCurve at_sigma(double sigma) const {
    require(sigma >= 0.0 && std::isfinite(sigma), "sigma must be finite and >= 0");
    LossCurve c;
    c.times = times;
    c.losses.reserve(terms.size());
    for (const auto& t : terms) c.losses.push_back(t.loss(sigma));
    c.lambda = lambda;
    c.sigma = sigma;
    c.gamma = gamma;
    c.threshold = threshold;
    return c;
  }
};

inline LossTermsCurve loss_terms_curve(double lambda, double gamma, const std::vector<std::uint64_t>& times,
                                       double threshold = 1.0) {
  check_theory_stability(lambda, gamma);
  const MPQuadrature quad(lambda, threshold);
  LossTermsCurve out;
  out.times = times;
  out.lambda = lambda;
  out.gamma = gamma;
  out.threshold = threshold;
  out.terms.reserve(times.size());
  for (std::uint64_t t : times) out.terms.push_back(quad.terms(gamma, t));
  return out;
}

inline LossCurve loss_curve(double lambda, double sigma, double gamma, std::uint64_t t_max = 1000000,
                            Index points = 200, double threshold = 1.0) {
  require(sigma >= 0.0 && std::isfinite(sigma), "sigma must be finite and >= 0");
  return loss_terms_curve(lambda, gamma, time_grid(t_max, points), threshold).at_sigma(sigma);
}

// ---------------------------------------------------------------------------
// Phases
// ---------------------------------------------------------------------------

enum class Phase { ndd_nes, ndd_es, edd_nes, edd_es };

inline std::string to_string(Phase p) {
  switch (p) {
    case Phase::ndd_nes: return "NDD_NES";
    case Phase::ndd_es: return "NDD_ES";
    case Phase::edd_nes: return "EDD_NES";
    case Phase::edd_es: return "EDD_ES";
  }
  return "NDD_NES";
}

inline Phase parse_phase(const std::string& s) {
  for (Phase p : {Phase::ndd_nes, Phase::ndd_es, Phase::edd_nes, Phase::edd_es})
    if (to_string(p) == s) return p;
  throw DomainError("unknown phase '" + s + "'");
}

inline bool has_edd(Phase p) { return p == Phase::edd_nes || p == Phase::edd_es; }
inline bool has_es(Phase p) { return p == Phase::ndd_es || p == Phase::edd_es; }

struct EarlyStopping {
  std::uint64_t t_early_stop = 0;
  double loss_early_stop = 0.0;
  double loss_final = 0.0;
  double es_gap = 0.0;
};

/// Global minimum over the grid (first occurrence) against the last point.
inline EarlyStopping early_stopping_analysis(const LossCurve& curve) {
  curve.validate();
  const auto it = std::min_element(curve.losses.begin(), curve.losses.end());
  EarlyStopping out;
  out.t_early_stop = curve.times[static_cast<std::size_t>(it - curve.losses.begin())];
  out.loss_early_stop = *it;
  out.loss_final = curve.losses.back();
  out.es_gap = out.loss_final - out.loss_early_stop;
  return out;
}

/// Largest rise-then-fall: max over j of
/// min(L[j] - min(L[..j)), L[j] - min(L(j..])), the height of the bump at j
/// above the lower of its two sides. Zero when the curve has no interior bump.
inline double edd_bump_height(const std::vector<double>& losses) {
  const std::size_t n = losses.size();
  if (n < 3) return 0.0;
  std::vector<double> suffix_min(n);
  suffix_min[n - 1] = losses[n - 1];
  for (std::size_t k = n - 1; k-- > 0;) suffix_min[k] = std::min(losses[k], suffix_min[k + 1]);
  double prefix_min = losses[0];
  double best = 0.0;
  for (std::size_t j = 1; j + 1 < n; ++j) {
    best = std::max(best, std::min(losses[j] - prefix_min, losses[j] - suffix_min[j + 1]));
    prefix_min = std::min(prefix_min, losses[j]);
  }
  return best;
}

struct PhaseCell {
  double lambda = 1.0;
  double sigma = 0.0;
  Phase phase = Phase::ndd_nes;
  std::uint64_t t_early_stop = 0;
  double loss_early_stop = 0.0;
  double loss_final = 0.0;
  double es_gap = 0.0;
  double bump_height = 0.0;
};

/// EDD iff some grid point rises at least rise_tol * L[0] above an earlier
/// point and a later point lies at least as far below it. ES iff the global
/// minimum undercuts the final loss by at least es_tol * L[0].
inline PhaseCell classify_phase(const LossCurve& curve, double rise_tol = 1e-3, double es_tol = 1e-3) {
  curve.validate();
  require(curve.losses.size() >= 3, "classify_phase needs at least 3 points");
  require(rise_tol > 0.0 && es_tol > 0.0, "classify_phase tolerances must be positive");
  const double scale = curve.losses.front();
  const EarlyStopping es = early_stopping_analysis(curve);
  PhaseCell cell;
  cell.lambda = curve.lambda;
  cell.sigma = curve.sigma;
  cell.t_early_stop = es.t_early_stop;
  cell.loss_early_stop = es.loss_early_stop;
  cell.loss_final = es.loss_final;
  cell.es_gap = es.es_gap;
  cell.bump_height = edd_bump_height(curve.losses);
  const bool edd = scale > 0.0 && cell.bump_height >= rise_tol * scale;
  const bool early = scale > 0.0 && es.es_gap >= es_tol * scale;
  cell.phase = edd ? (early ? Phase::edd_es : Phase::edd_nes) : (early ? Phase::ndd_es : Phase::ndd_nes);
  return cell;
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

struct PhaseDiagram {
  std::vector<double> lambdas;
  std::vector<double> sigmas;
  std::vector<PhaseCell> cells;  // sigma-major: cells[i_sigma * |lambdas| + i_lambda]
  Matrix loss_final;             // rows = sigma, cols = lambda
  Matrix loss_early_stop;
  Matrix es_gap;

  const PhaseCell& at(std::size_t i_sigma, std::size_t i_lambda) const {
    return cells[i_sigma * lambdas.size() + i_lambda];
  }

  std::map<Phase, std::size_t> counts() const {
    std::map<Phase, std::size_t> out{{Phase::ndd_nes, 0}, {Phase::ndd_es, 0}, {Phase::edd_nes, 0}, {Phase::edd_es, 0}};
    for (const auto& c : cells) ++out[c.phase];
    return out;
  }
};

inline std::vector<double> linear_grid(double lo, double hi, Index steps) {
  require(steps >= 1, "grid needs at least one step");
  require(std::isfinite(lo) && std::isfinite(hi) && lo <= hi, "grid range must satisfy lo <= hi");
  if (steps == 1) return {lo};
  std::vector<double> g(static_cast<std::size_t>(steps));
  for (Index i = 0; i < steps; ++i)
    g[static_cast<std::size_t>(i)] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(steps - 1);
  return g;
}

inline PhaseDiagram phase_diagram(const std::vector<double>& lambdas, const std::vector<double>& sigmas,
                                  const GammaRule& gamma_rule = {}, const TheoryOptions& opt = {}) {
  require(!lambdas.empty() && !sigmas.empty(), "phase diagram grids must be nonempty");
  require(std::is_sorted(lambdas.begin(), lambdas.end()) && std::is_sorted(sigmas.begin(), sigmas.end()),
          "phase diagram grids must be ascending");
  for (double s : sigmas) require(s >= 0.0 && std::isfinite(s), "sigma grid values must be >= 0");
  for (double l : lambdas) check_theory_stability(l, gamma_rule.rate(l));

  const auto times = time_grid(opt.t_max, opt.points);
  const std::size_t nl = lambdas.size(), ns = sigmas.size();
  PhaseDiagram out;
  out.lambdas = lambdas;
  out.sigmas = sigmas;
  out.cells.resize(nl * ns);
  parallel_for(nl, [&](std::size_t il) {
    const LossTermsCurve terms = loss_terms_curve(lambdas[il], gamma_rule.rate(lambdas[il]), times, opt.threshold);
    for (std::size_t is = 0; is < ns; ++is)
      out.cells[is * nl + il] = classify_phase(terms.at_sigma(sigmas[is]), opt.rise_tol, opt.es_tol);
  });
  out.loss_final.resize(static_cast<Index>(ns), static_cast<Index>(nl));
  out.loss_early_stop.resizeLike(out.loss_final);
  out.es_gap.resizeLike(out.loss_final);
  for (std::size_t is = 0; is < ns; ++is)
    for (std::size_t il = 0; il < nl; ++il) {
      const PhaseCell& c = out.at(is, il);
      const auto r = static_cast<Index>(is), k = static_cast<Index>(il);
      out.loss_final(r, k) = c.loss_final;
      out.loss_early_stop(r, k) = c.loss_early_stop;
      out.es_gap(r, k) = c.es_gap;
    }
  return out;
}

struct CriticalSigma {
  double below = 0.0;  // predicate false here
  double above = 0.0;  // predicate true here
  double estimate() const { return 0.5 * (below + above); }
};

/// Bisection on sigma for the point where `predicate(phase)` switches from
/// false to true, using one precomputed base/slope curve. Requires the
/// predicate to be false at lo and true at hi.
inline CriticalSigma bisect_critical_sigma(const LossTermsCurve& terms, const std::function<bool(Phase)>& predicate,
                                           double lo, double hi, double tolerance, const TheoryOptions& opt = {}) {
  require(lo < hi && tolerance > 0.0, "bisection needs lo < hi and a positive tolerance");
  auto eval = [&](double s) { return predicate(classify_phase(terms.at_sigma(s), opt.rise_tol, opt.es_tol).phase); };
  require(!eval(lo), "bisection: predicate already holds at the lower bracket");
  require(eval(hi), "bisection: predicate does not hold at the upper bracket");
  CriticalSigma out{lo, hi};
  while (out.above - out.below > tolerance) {
    const double mid = out.estimate();
    (eval(mid) ? out.above : out.below) = mid;
  }
  return out;
}

}  // namespace edd
