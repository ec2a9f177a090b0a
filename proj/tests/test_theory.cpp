#include "edd/theory.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

using namespace edd;

namespace {

double gamma_for(double lambda) { return 1.0 / mp_params(lambda).support_high; }

}  // namespace

TEST(GaussLegendre, IntegratesPolynomialsExactly) {
  for (Index n : {1, 2, 5, 16, 64}) {
    const GaussRule& r = gauss_legendre(n);
    EXPECT_NEAR(r.weights.sum(), 2.0, 1e-13);
    for (int k = 0; k <= 2 * n - 1; ++k) {
      double s = 0.0;
      for (Index i = 0; i < n; ++i) s += r.weights(i) * std::pow(r.nodes(i), k);
      const double exact = k % 2 ? 0.0 : 2.0 / (k + 1);
      EXPECT_NEAR(s, exact, 1e-13) << "n=" << n << " k=" << k;
    }
  }
}

TEST(ExpectedTestLoss, StartsAtOneHalf) {
  for (double lambda : {0.25, 0.5, 1.0, 2.0, 4.0})
    for (double sigma : {0.0, 0.5, 1.0, 3.0, 5.0}) EXPECT_NEAR(expected_test_loss(0, lambda, sigma, gamma_for(lambda)), 0.5, 1e-7);
}

TEST(ExpectedTestLoss, LongTimeLimits) {
  EXPECT_NEAR(expected_test_loss(1000000, 2.0, 0.0, gamma_for(2.0)), 0.25, 1e-6);
  EXPECT_LE(expected_test_loss(1000000, 0.5, 0.0, gamma_for(0.5)), 1e-6);
}

TEST(ExpectedTestLoss, MatchesTanhSinhOracle) {
  for (double lambda : {0.3, 0.5, 1.0, 1.7, 3.0})
    for (std::uint64_t t : {1u, 3u, 10u, 100u, 1000u})
      for (double sigma : {0.0, 1.0, 4.0}) {
        const double g = gamma_for(lambda);
        EXPECT_NEAR(expected_test_loss(t, lambda, sigma, g), oracle::expected_loss(t, lambda, sigma, g), 1e-8)
            << "lambda=" << lambda << " t=" << t << " sigma=" << sigma;
      }
}

TEST(ExpectedTestLoss, NonDefaultThresholdAndRate) {
  for (double tau : {0.1, 2.5, 10.0}) {
    const double g = 0.7 * gamma_for(1.5);
    EXPECT_NEAR(expected_test_loss(20, 1.5, 2.0, g, tau), oracle::expected_loss(20, 1.5, 2.0, g, tau), 1e-8);
  }
}

TEST(ExpectedTestLoss, UnstableRateThrows) {
  try {
    expected_test_loss(5, 1.0, 0.0, 0.51);
    FAIL() << "expected StabilityError";
  } catch (const StabilityError& e) {
    EXPECT_DOUBLE_EQ(e.gamma_max(), 0.5);
  }
  EXPECT_THROW(expected_test_loss(5, 1.0, -1.0, 0.2), DomainError);
}

TEST(ExpectedTestLoss, StableUnderNodeDoubling) {
  for (double lambda : {0.5, 1.0, 2.0})
    for (std::uint64_t t : {0u, 7u, 1000u, 1000000u}) {
      const MPQuadrature coarse(lambda, 1.0, 1e-9);
      const MPQuadrature fine(lambda, 1.0, 1e-13);
      const auto a = coarse.terms(gamma_for(lambda), t), b = fine.terms(gamma_for(lambda), t);
      EXPECT_NEAR(a.base, b.base, 1e-8);
      EXPECT_NEAR(a.slope, b.slope, 1e-8);
    }
}

TEST(ExpectedTestLoss, LipschitzInSigma) {
  for (double lambda : {0.5, 1.0, 2.0})
    for (std::uint64_t t : {10u, 10000u}) {
      const double g = gamma_for(lambda);
      const double k = MPQuadrature(lambda).terms(g, t).slope;
      const double d = 1e-4;
      EXPECT_LE(std::abs(expected_test_loss(t, lambda, 1.0 + d, g) - expected_test_loss(t, lambda, 1.0, g)),
                k * d * (1 + 1e-6) + 1e-12);
    }
}

TEST(ExpectedTestLoss, NoiselessLossNeverIncreases) {
  for (double lambda : {0.5, 1.0, 2.0})
    for (double scale : {0.5, 1.0, 1.9}) {
      const LossCurve c = loss_curve(lambda, 0.0, scale * gamma_for(lambda), 100000, 80);
      for (std::size_t i = 1; i < c.losses.size(); ++i) EXPECT_LE(c.losses[i], c.losses[i - 1] + 1e-12);
    }
}

TEST(ExpectedTestLoss, FrozenSubspaceFloor) {
  for (double lambda : {1.5, 3.0})
    for (double sigma : {0.0, 2.0}) {
      const LossCurve c = loss_curve(lambda, sigma, gamma_for(lambda), 1000000, 60);
      for (double l : c.losses) EXPECT_GE(l, (1.0 - 1.0 / lambda) / 2.0 - 1e-10);
    }
}

TEST(TimeGrid, ContainsEndpointsAndIsDeduplicated) {
  const auto g = time_grid(1000000, 200);
  EXPECT_EQ(g.front(), 0u);
  EXPECT_EQ(g[1], 1u);
  EXPECT_EQ(g.back(), 1000000u);
  for (std::size_t i = 1; i < g.size(); ++i) EXPECT_GT(g[i], g[i - 1]);
  EXPECT_EQ(time_grid(10, 2), (std::vector<std::uint64_t>{0, 10}));
  EXPECT_THROW(time_grid(10, 1), DomainError);
  EXPECT_THROW(time_grid(0, 5), DomainError);
}

TEST(LossCurve, ShapesAtTheAnchors) {
  const LossCurve clean = loss_curve(0.5, 0.0, gamma_for(0.5), 100000, 50);
  EXPECT_NEAR(clean.losses.front(), 0.5, 1e-9);
  for (std::size_t i = 1; i < clean.losses.size(); ++i) {
    // Strictly decreasing until the loss underflows to zero.
    if (clean.losses[i - 1] > 1e-300) EXPECT_LT(clean.losses[i], clean.losses[i - 1]);
    else EXPECT_EQ(clean.losses[i], 0.0);
  }
  const PhaseCell noisy = classify_phase(loss_curve(1.0, 4.0, gamma_for(1.0)));
  EXPECT_TRUE(has_edd(noisy.phase));
}

TEST(LossCurve, DoublingPointsKeepsSharedValues) {
  const LossCurve a = loss_curve(1.0, 2.0, gamma_for(1.0), 100000, 50);
  const LossCurve b = loss_curve(1.0, 2.0, gamma_for(1.0), 100000, 100);
  std::size_t shared = 0;
  for (std::size_t i = 0; i < a.times.size(); ++i) {
    const auto it = std::find(b.times.begin(), b.times.end(), a.times[i]);
    if (it == b.times.end()) continue;
    ++shared;
    EXPECT_NEAR(a.losses[i], b.losses[static_cast<std::size_t>(it - b.times.begin())], 1e-10);
  }
  EXPECT_GE(shared, 3u);
}

namespace {

LossCurve synthetic(std::vector<double> losses) {
  LossCurve c;
  for (std::size_t i = 0; i < losses.size(); ++i) c.times.push_back(i * 10);
  c.losses = std::move(losses);
  return c;
}

}  // namespace

TEST(ClassifyPhase, SyntheticShapes) {
  EXPECT_EQ(classify_phase(synthetic({0.5, 0.4, 0.3, 0.2, 0.1})).phase, Phase::ndd_nes);
  EXPECT_EQ(classify_phase(synthetic({0.5, 0.2, 0.3, 0.35})).phase, Phase::ndd_es);
  EXPECT_EQ(classify_phase(synthetic({0.5, 0.2, 0.3, 0.1})).phase, Phase::edd_nes);
  EXPECT_EQ(classify_phase(synthetic({0.5, 0.1, 0.3, 0.2})).phase, Phase::edd_es);
  // Bumps below the tolerance are ignored.
  EXPECT_EQ(classify_phase(synthetic({0.5, 0.2, 0.2002, 0.1})).phase, Phase::ndd_nes);
  EXPECT_THROW(classify_phase(synthetic({0.5, 0.4})), DomainError);
}

TEST(ClassifyPhase, InvariantUnderScaling) {
  for (double sigma : {0.0, 1.0, 2.5, 4.0, 8.0}) {
    LossCurve c = loss_curve(1.0, sigma, gamma_for(1.0), 1000000, 120);
    const Phase p = classify_phase(c).phase;
    for (double& l : c.losses) l *= 7.3;
    EXPECT_EQ(classify_phase(c).phase, p) << "sigma " << sigma;
  }
}

TEST(ClassifyPhase, CleanDataAtCriticalParameterisation) {
  EXPECT_EQ(classify_phase(loss_curve(1.0, 0.0, gamma_for(1.0))).phase, Phase::ndd_nes);
}

TEST(EarlyStopping, Statistics) {
  const EarlyStopping mono = early_stopping_analysis(synthetic({0.5, 0.4, 0.3}));
  EXPECT_EQ(mono.t_early_stop, 20u);
  EXPECT_EQ(mono.es_gap, 0.0);
  const EarlyStopping interior = early_stopping_analysis(synthetic({0.5, 0.1, 0.3, 0.1}));
  EXPECT_EQ(interior.t_early_stop, 10u);  // first occurrence of the minimum
  EXPECT_GT(early_stopping_analysis(synthetic({0.5, 0.1, 0.3})).es_gap, 0.0);
  EXPECT_NEAR(early_stopping_analysis(loss_curve(1.0, 0.0, gamma_for(1.0))).es_gap, 0.0, 1e-12);
}

TEST(PhaseDiagram, CellCountAndNoiselessRow) {
  const auto lambdas = linear_grid(0.2, 5.0, 10), sigmas = linear_grid(0.0, 5.0, 10);
  const TheoryOptions opt{100000, 100};
  const PhaseDiagram pd = phase_diagram(lambdas, sigmas, GammaRule{}, opt);
  EXPECT_EQ(pd.cells.size(), 100u);
  EXPECT_EQ(pd.loss_final.rows(), 10);
  EXPECT_EQ(pd.loss_final.cols(), 10);
  for (std::size_t il = 0; il < lambdas.size(); ++il) EXPECT_EQ(pd.at(0, il).phase, Phase::ndd_nes);
  for (const auto& c : pd.cells) EXPECT_GE(c.es_gap, -1e-12);
}

TEST(PhaseDiagram, AllFourPhasesOnTheDefaultRanges) {
  const PhaseDiagram pd = phase_diagram(linear_grid(0.2, 5.0, 20), linear_grid(0.0, 5.0, 20));
  for (const auto& [phase, count] : pd.counts()) EXPECT_GT(count, 0u) << to_string(phase);
}

TEST(PhaseDiagram, IndependentOfThreadCount) {
  const auto lambdas = linear_grid(0.5, 2.0, 4), sigmas = linear_grid(0.0, 4.0, 3);
  const TheoryOptions opt{10000, 40};
  setenv("EDD_THREADS", "1", 1);
  const PhaseDiagram a = phase_diagram(lambdas, sigmas, GammaRule{}, opt);
  setenv("EDD_THREADS", "3", 1);
  const PhaseDiagram b = phase_diagram(lambdas, sigmas, GammaRule{}, opt);
  unsetenv("EDD_THREADS");
  EXPECT_TRUE(a.loss_final == b.loss_final);
  EXPECT_TRUE(a.es_gap == b.es_gap);
}

TEST(PhaseDiagram, SequenceAlongSigmaAtCriticalParameterisation) {
  const auto times = time_grid(1000000, 200);
  const LossTermsCurve terms = loss_terms_curve(1.0, gamma_for(1.0), times);
  const CriticalSigma c1 = bisect_critical_sigma(terms, has_edd, 0.0, 5.0, 0.05);
  const CriticalSigma c2 = bisect_critical_sigma(terms, has_es, 0.0, 5.0, 0.05);
  EXPECT_GT(c1.below, 0.0);
  EXPECT_GT(c2.estimate(), c1.estimate());
  // The boundaries are clean: no EDD below sigma_c1, EDD above it; ES only above sigma_c2.
  for (int i = 0; i <= 120; ++i) {
    const double s = 0.05 * i;
    const Phase p = classify_phase(terms.at_sigma(s)).phase;
    EXPECT_TRUE(s <= c1.below ? !has_edd(p) : s < c1.above || has_edd(p)) << "sigma " << s;
    EXPECT_TRUE(s <= c2.below ? !has_es(p) : s < c2.above || has_es(p)) << "sigma " << s;
  }
}

TEST(GammaRule, DefaultsToInverseUpperEdge) {
  EXPECT_DOUBLE_EQ(GammaRule{}.rate(1.0), 0.25);
  EXPECT_DOUBLE_EQ((GammaRule{0.5, std::nullopt}.rate(4.0)), 0.5 / 9.0);
  EXPECT_DOUBLE_EQ((GammaRule{1.0, 0.1}.rate(4.0)), 0.1);
}
