#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "gsm/hbt.hpp"
#include "gsm/metrics.hpp"
#include "oracles.hpp"

using namespace gsm;

namespace {
constexpr double kLambda = 632.8e-9;
const SchellModel kModel = SchellModel::from_beta(2.3e-3, 0.24, kLambda);
const double kC = derive_kernel_params(kModel).c;
const double kQ = eigenvalue_ratio_q(0.24);
const DetectionOptics kOptics = matched_optics(kModel, 3.69e-6);

// Geometric spectrum and coherent-state overlaps sum in closed form:
//   g² = 1 + (q c r²)^m / m! · exp(-q c r²).
double scan_closed_form(unsigned m, double r) {
  const double u = kQ * kC * r * r;
  return 1.0 + std::pow(u, m) / std::tgamma(m + 1.0) * std::exp(-u);
}

Ensemble ensemble_1d(std::size_t n, std::uint64_t seed = 11) {
  return Ensemble(kModel, {n, 58, seed, GridSpec::for_model(kModel, 5.0, 64)}, FieldDims::one);
}

bool within(const Estimate& e, double target, double sigmas = 5.0) {
  return std::abs(e.value - target) <= sigmas * e.std_error;
}
}  // namespace

TEST(IdealG2, KroneckerValues) {
  EXPECT_EQ(g2_ideal({1, 2}, {1, 2}), 2.0);
  EXPECT_EQ(g2_ideal({1, 2}, {2, 1}), 1.0);
  EXPECT_NEAR(visibility(g2_ideal({0, 0}, {0, 0}), g2_ideal({0, 0}, {1, 0})), 1.0 / 3.0, 1e-15);
  const G2Matrix g = ideal_g2_matrix(ideal_filters(2), ideal_filters(2));
  EXPECT_EQ(g.values.size(), 36u);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 6; ++j) EXPECT_EQ(g.at(i, j).value, i == j ? 2.0 : 1.0);
  EXPECT_EQ(g.order(0, 5), 2u);
}

TEST(AnalyticG2, IdealPairsReduceToKronecker) {
  for (unsigned a = 0; a < 4; ++a)
    for (unsigned b = 0; b < 4; ++b)
      EXPECT_NEAR(g2_analytic(kModel, IdealProjector{{a, 0}}, IdealProjector{{b, 0}}), a == b ? 2.0 : 1.0, 1e-15);
}

TEST(AnalyticG2, ArmExchangeSymmetric) {
  const ModeFilter f1 = default_step_mask({3, 0}, kC);
  const ModeFilter f2 = GaussianBucket{{0.4e-3, 0.0}};
  EXPECT_DOUBLE_EQ(g2_analytic(kModel, f1, f2), g2_analytic(kModel, f2, f1));
}

TEST(AnalyticG2, StepMaskAgainstIdealIsBetweenOneAndTwo) {
  const double g = g2_analytic(kModel, default_step_mask({3, 0}, kC), IdealProjector{{1, 0}});
  EXPECT_GT(g, 1.0);
  EXPECT_LT(g, 2.0);
}

TEST(Scan, CentredFiberGivesOneForHigherModes) {
  const std::vector<double> zero{0.0};
  EXPECT_NEAR(g2_scan(kModel, {0, 0}, zero).g2[0], 2.0, 1e-12);
  for (unsigned m = 1; m <= 6; ++m) EXPECT_NEAR(g2_scan(kModel, {m, 0}, zero).g2[0], 1.0, 1e-12) << m;
}

TEST(Scan, MatchesClosedForm) {
  std::vector<double> r;
  for (double u = -3.0; u <= 3.0; u += 0.25) r.push_back(u / std::sqrt(kC));
  for (unsigned m : {0u, 1u, 2u, 4u}) {
    const ScanCurve curve = g2_scan(kModel, {m, 0}, r);
    EXPECT_TRUE(curve.warnings.empty());
    for (std::size_t i = 0; i < r.size(); ++i) EXPECT_NEAR(curve.g2[i], scan_closed_form(m, r[i]), 1e-9) << m << " " << r[i];
  }
}

TEST(Scan, FundamentalIsEvenAndDecreasing) {
  std::vector<double> r;
  for (int i = -40; i <= 40; ++i) r.push_back(i * 0.1 / std::sqrt(kC));
  const ScanCurve curve = g2_scan(kModel, {0, 0}, r);
  for (std::size_t i = 0; i < r.size(); ++i) EXPECT_NEAR(curve.g2[i], curve.g2[r.size() - 1 - i], 1e-12);
  for (std::size_t i = 41; i < r.size(); ++i) EXPECT_LT(curve.g2[i], curve.g2[i - 1]);
  EXPECT_LT(curve.g2.back(), 1.1);
}

TEST(Scan, FirstOrderHasTwoSymmetricMaximaBelowTwo) {
  std::vector<double> r;
  for (int i = -600; i <= 600; ++i) r.push_back(i * 0.005 / std::sqrt(kC));
  const ScanCurve curve = g2_scan(kModel, {1, 0}, r);
  std::size_t left = 0, right = 600;
  for (std::size_t i = 0; i < 600; ++i)
    if (curve.g2[i] > curve.g2[left]) left = i;
  for (std::size_t i = 600; i < r.size(); ++i)
    if (curve.g2[i] > curve.g2[right]) right = i;
  EXPECT_NEAR(r[left], -r[right], 1e-12);
  const double peak_oracle = oracle::grid_argmin([](double x) { return -scan_closed_form(1, x); }, 0.0, 3.0 / std::sqrt(kC), 600);
  EXPECT_NEAR(r[right], peak_oracle, 0.006 / std::sqrt(kC));
  EXPECT_LT(curve.g2[right], 2.0);
  EXPECT_NEAR(curve.g2[right], 1.0 + std::exp(-1.0), 1e-4);
}

TEST(Scan, RejectsNonFiniteDisplacement) {
  const std::vector<double> r{NAN};
  EXPECT_THROW(g2_scan(kModel, {1, 0}, r), std::invalid_argument);
}

TEST(Witness, OneOnlyWhenMatched) {
  EXPECT_NEAR(mode_mismatch_witness(kModel, 2, kC), 1.0, 1e-12);
  EXPECT_GT(mode_mismatch_witness(kModel, 2, 2.0 * kC), 1.0 + 1e-3);
  double previous = 10.0;
  for (double ratio : {0.25, 0.5, 0.8, 1.0}) {
    const double w = mode_mismatch_witness(kModel, 4, ratio * kC);
    EXPECT_LT(w, previous);
    previous = w;
  }
  for (double ratio : {1.25, 2.0, 4.0}) {
    const double w = mode_mismatch_witness(kModel, 4, ratio * kC);
    EXPECT_GT(w, previous);
    previous = w;
  }
  EXPECT_THROW(mode_mismatch_witness(kModel, 3, kC), std::invalid_argument);
  EXPECT_THROW(mode_mismatch_witness(kModel, 0, kC), std::invalid_argument);
}

TEST(FiberConvolution, FundamentalMatchedIsGaussian) {
  std::vector<double> x;
  for (double u = -2.0; u <= 2.0; u += 0.1) x.push_back(u / std::sqrt(kC));
  const auto v = fiber_convolution(0, kC, kC, x);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(v[i], std::exp(-kC * x[i] * x[i]), 1e-12);
}

TEST(FiberConvolution, OddModesVanishAtCentre) {
  const std::vector<double> x{-0.8 / std::sqrt(kC), 0.0, 0.8 / std::sqrt(kC)};
  for (unsigned m : {1u, 3u}) {
    const auto v = fiber_convolution(m, kC, 2.0 * kC, x);
    EXPECT_NEAR(v[1], 0.0, 1e-14);
    EXPECT_NEAR(v[0], v[2], 1e-13);
    EXPECT_GT(v[0], 1e-3);
  }
}

TEST(FiberConvolution, EvenModesSurviveAtCentreWhenWaistsDiffer) {
  const std::vector<double> x{0.0};
  EXPECT_GT(fiber_convolution(2, kC, 2.0 * kC, x)[0], 1e-3);
  EXPECT_NEAR(fiber_convolution(2, kC, kC, x)[0], 0.0, 1e-14);
  EXPECT_THROW(fiber_convolution(2, kC, 0.0, x), std::invalid_argument);
}

TEST(PartialIntensity, AnalyticRatios) {
  EXPECT_NEAR(partial_intensity(kModel, {1, 0}) / partial_intensity(kModel, {0, 0}), 0.7870781764093279, 1e-14);
  EXPECT_NEAR(partial_intensity(kModel, {2, 3}) / partial_intensity(kModel, {0, 0}), std::pow(kQ, 5), 1e-14);
}

TEST(PartialIntensity, MonteCarloAgreesWithAnalytic) {
  const Ensemble e(kModel, {100000, 58, 5, GridSpec::for_model(kModel, 5.0, 64)}, FieldDims::two);
  for (ModeIndex idx : {ModeIndex{0, 0}, ModeIndex{1, 0}, ModeIndex{2, 1}})
    EXPECT_TRUE(within(partial_intensity(e, IdealProjector{idx}), partial_intensity(kModel, idx))) << to_string(idx);
}

TEST(MeasuredSpectrum, RelativeToFundamental) {
  const Ensemble e(kModel, {100000, 58, 5, GridSpec::for_model(kModel, 5.0, 64)}, FieldDims::two);
  const MeasuredSpectrum s = measure_spectrum(e, 3);
  EXPECT_EQ(s.spectrum.eigenvalues.size(), 10u);
  EXPECT_EQ(s.spectrum.at({0, 0}), 1.0);
  for (const auto& [idx, v] : s.spectrum.eigenvalues) {
    if (idx == ModeIndex{0, 0}) continue;
    const double expected = std::pow(kQ, idx.order());
    EXPECT_LT(std::abs(v - expected), 5.0 * s.std_error.at(idx)) << to_string(idx);
  }
}

TEST(MonteCarloG2, IdealFiltersGiveKronecker) {
  const Ensemble e = ensemble_1d(100000);
  HbtOptions opt;
  EXPECT_TRUE(within(g2_monte_carlo(e, IdealProjector{{0, 0}}, IdealProjector{{0, 0}}, kOptics, opt), 2.0));
  EXPECT_TRUE(within(g2_monte_carlo(e, IdealProjector{{0, 0}}, IdealProjector{{1, 0}}, kOptics, opt), 1.0));
  EXPECT_TRUE(within(g2_monte_carlo(e, IdealProjector{{3, 0}}, IdealProjector{{3, 0}}, kOptics, opt), 2.0));
}

TEST(MonteCarloG2, StepMaskMatchesAnalytic) {
  const Ensemble e = ensemble_1d(100000);
  const ModeFilter step = default_step_mask({3, 0}, kC);
  const Estimate g = g2_monte_carlo(e, step, IdealProjector{{1, 0}}, kOptics);
  const double expected = g2_analytic(kModel, step, IdealProjector{{1, 0}});
  EXPECT_TRUE(within(g, expected)) << g.value << " vs " << expected;
  EXPECT_GT(g.value, 1.0);
  EXPECT_LT(g.value, 2.0);
}

TEST(MonteCarloG2, BucketScanPointMatchesClosedForm) {
  const Ensemble e = ensemble_1d(100000);
  const double r = 1.0 / std::sqrt(kQ * kC);
  const Estimate g = g2_monte_carlo(e, IdealProjector{{1, 0}}, GaussianBucket{{r, 0.0}}, kOptics);
  EXPECT_TRUE(within(g, scan_closed_form(1, r))) << g.value;
}

TEST(MonteCarloG2, ArmExchangeIsExact) {
  const Ensemble e = ensemble_1d(20000);
  const ModeFilter a = default_step_mask({2, 0}, kC), b = GaussianBucket{{0.3e-3, 0.0}};
  const Estimate ab = g2_monte_carlo(e, a, b, kOptics), ba = g2_monte_carlo(e, b, a, kOptics);
  EXPECT_DOUBLE_EQ(ab.value, ba.value);
  EXPECT_NEAR(ab.std_error, ba.std_error, 1e-15);
}

TEST(MonteCarloG2, IndependentOfThreadCount) {
  const Ensemble e = ensemble_1d(5003);
  const std::vector<ModeFilter> arm = {IdealProjector{{0, 0}}, default_step_mask({1, 0}, kC), GaussianBucket{{1e-4, 0.0}}};
  HbtOptions one, many;
  many.threads = 4;
  const G2Matrix g1 = g2_matrix_monte_carlo(e, arm, arm, kOptics, one);
  const G2Matrix g4 = g2_matrix_monte_carlo(e, arm, arm, kOptics, many);
  for (const auto& [key, est] : g1.values) {
    EXPECT_EQ(est.value, g4.values.at(key).value);
    EXPECT_EQ(est.std_error, g4.values.at(key).std_error);
  }
}

TEST(MonteCarloG2, VisibilityBoundedForIdealFilters) {
  const Ensemble e = ensemble_1d(50000);
  const Estimate same = g2_monte_carlo(e, IdealProjector{{0, 0}}, IdealProjector{{0, 0}}, kOptics);
  const Estimate cross = g2_monte_carlo(e, IdealProjector{{0, 0}}, IdealProjector{{1, 0}}, kOptics);
  const Estimate v = visibility(same, cross);
  EXPECT_LE(v.value, 1.0 / 3.0 + 5.0 * v.std_error);
}

TEST(MonteCarloG2, RejectsUnmatchedOpticsUnlessAllowed) {
  const Ensemble e = ensemble_1d(200);
  const DetectionOptics off(3.69e-6, 1.2 * kOptics.focal_length, kOptics.wavenumber);
  EXPECT_THROW(g2_monte_carlo(e, IdealProjector{{0, 0}}, GaussianBucket{}, off), std::invalid_argument);
  HbtOptions opt;
  opt.allow_mismatch = true;
  EXPECT_NO_THROW(g2_monte_carlo(e, IdealProjector{{0, 0}}, GaussianBucket{}, off, opt));
}

TEST(MonteCarloG2, OddMaskOnSingleModeFieldDetectsNothing) {
  const Ensemble e(kModel, {500, 1, 3, GridSpec::for_model(kModel, 5.0, 64)}, FieldDims::one);
  EXPECT_THROW(g2_monte_carlo(e, default_step_mask({1, 0}, kC), IdealProjector{{0, 0}}, kOptics), ZeroPowerError);
}

TEST(MonteCarloG2, MatrixDistanceToIdealIsStatistical) {
  const Ensemble e = ensemble_1d(100000);
  std::vector<ModeFilter> arm;
  for (unsigned m = 0; m <= 3; ++m) arm.push_back(IdealProjector{{m, 0}});
  const G2Matrix mc = g2_matrix_monte_carlo(e, arm, arm, kOptics);
  const G2Matrix ideal = ideal_g2_matrix(arm, arm);
  double var = 0.0;
  for (const auto& [_, est] : mc.values) var += est.std_error * est.std_error;
  EXPECT_LT(g2_distance(mc, ideal), 5.0 * std::sqrt(var));
}
