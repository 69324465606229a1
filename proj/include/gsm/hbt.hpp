#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "gsm/errors.hpp"
#include "gsm/filters.hpp"
#include "gsm/jackknife.hpp"
#include "gsm/mode_spectrum.hpp"
#include "gsm/parallel.hpp"
#include "gsm/speckle.hpp"

namespace gsm {

/// Normalized g² for ideal projectors: 1 + delta, delta = 1 iff both indices match.
inline double g2_ideal(ModeIndex a, ModeIndex b) { return a == b ? 2.0 : 1.0; }

/// Normalized g² over all pairs (row from arm 1, column from arm 2).
struct G2Matrix {
  std::vector<ModeFilter> arm1;
  std::vector<ModeFilter> arm2;
  std::map<std::pair<std::size_t, std::size_t>, Estimate> values;

  const Estimate& at(std::size_t i, std::size_t j) const { return values.at({i, j}); }

  /// Highest total mode order the two filters of an entry target.
  unsigned order(std::size_t i, std::size_t j) const {
    return std::max(target_index(arm1.at(i)).order(), target_index(arm2.at(j)).order());
  }
};

/// 1 + delta for every pair of filters, keyed by their target indices. Exact, zero error.
inline G2Matrix ideal_g2_matrix(std::vector<ModeFilter> arm1, std::vector<ModeFilter> arm2) {
  G2Matrix g{std::move(arm1), std::move(arm2), {}};
  for (std::size_t i = 0; i < g.arm1.size(); ++i)
    for (std::size_t j = 0; j < g.arm2.size(); ++j)
      g.values[{i, j}] = {g2_ideal(target_index(g.arm1[i]), target_index(g.arm2[j])), 0.0};
  return g;
}

/// Filters projecting onto every HG_{mn} with m + n <= max_order, in (m, n) order.
inline std::vector<ModeFilter> ideal_filters(unsigned max_order) {
  std::vector<ModeFilter> out;
  for (unsigned m = 0; m <= max_order; ++m)
    for (unsigned n = 0; m + n <= max_order; ++n) out.push_back(IdealProjector{{m, n}});
  return out;
}

inline constexpr double kNegligibleOverlap = 1e-13;

struct HbtOptions {
  bool allow_mismatch = false;   // accept optics that are not mode-matched
  double match_tolerance = kModeMatchTolerance;
  unsigned threads = 1;
  std::size_t realizations = 0;  // 0 uses the whole ensemble
};

namespace detail {

inline double checked_detection_c(const DetectionOptics& optics, double c, const HbtOptions& opt) {
  if (!optics.is_matched(c, opt.match_tolerance) && !opt.allow_mismatch)
    throw std::invalid_argument("detection optics are not mode-matched (k^2 w_f^2 / 4 f^2 = " +
                                std::to_string(optics.detection_c()) + ", c = " + std::to_string(c) +
                                "); set allow_mismatch to override");
  return optics.detection_c();
}

// Sparse linear functional sum_{(k,l)} w_kl e_kl describing what one filter detects.
struct Projection {
  std::vector<std::size_t> slots;  // positions in the shared coefficient list
  std::vector<double> weights;
};

}  // namespace detail

/// Detected power |sum e_kl o_kl|² of every filter for every realization.
struct DetectedPowers {
  std::vector<ModeFilter> filters;
  std::vector<std::vector<double>> power;  // [filter][realization]
  std::vector<double> expected;            // analytic mean power per filter
};

inline DetectedPowers detect_powers(const Ensemble& ensemble, const std::vector<ModeFilter>& filters, double c_det,
                                    unsigned threads = 1, std::size_t realizations = 0, Warnings* warnings = nullptr) {
  const std::size_t count = realizations ? std::min(realizations, ensemble.size()) : ensemble.size();
  const unsigned nc = ensemble.cutoff();
  const bool two_d = ensemble.dims() == FieldDims::two;
  const double c = ensemble.kernel().c;
  const OverlapOptions oopt{c_det, 0.0};

  std::vector<double> lambda(nc);
  for (unsigned k = 0; k < nc; ++k) lambda[k] = eigenvalue(ensemble.kernel(), ensemble.model().amplitude(), k);

  std::map<ModeIndex, std::size_t> slot_of;
  std::vector<ModeIndex> slots;
  std::vector<detail::Projection> proj(filters.size());
  DetectedPowers out{filters, {}, std::vector<double>(filters.size(), 0.0)};

  for (std::size_t f = 0; f < filters.size(); ++f) {
    validate(filters[f]);
    const std::vector<double> ox = axis_overlaps(axis_filter(filters[f], 0), c, nc, oopt, warnings);
    std::vector<double> oy(nc, 0.0);
    if (two_d) oy = axis_overlaps(axis_filter(filters[f], 1), c, nc, oopt, warnings);
    else oy[0] = 1.0;
    // Overlaps are bounded by 1; anything this small is quadrature noise on a null.
    for (unsigned k = 0; k < nc; ++k)
      for (unsigned l = 0; l < (two_d ? nc : 1u); ++l) {
        const double w = ox[k] * oy[l];
        if (std::abs(w) <= kNegligibleOverlap) continue;
        auto [it, inserted] = slot_of.try_emplace({k, l}, slots.size());
        if (inserted) slots.push_back({k, l});
        proj[f].slots.push_back(it->second);
        proj[f].weights.push_back(w);
        const double lam = two_d ? lambda[k] * lambda[l] / ensemble.model().amplitude() : lambda[k];
        out.expected[f] += lam * w * w;
      }
  }

  out.power.assign(filters.size(), std::vector<double>(count));
  parallel_for(count, threads, [&](std::size_t begin, std::size_t end) {
    std::vector<cplx> e(slots.size());
    for (std::size_t r = begin; r < end; ++r) {
      for (std::size_t s = 0; s < slots.size(); ++s) e[s] = ensemble.coefficient(r, slots[s].m, slots[s].n);
      for (std::size_t f = 0; f < filters.size(); ++f) {
        cplx amp{0.0, 0.0};
        for (std::size_t q = 0; q < proj[f].slots.size(); ++q) amp += proj[f].weights[q] * e[proj[f].slots[q]];
        out.power[f][r] = std::norm(amp);
      }
    }
  });
  return out;
}

namespace detail {

inline Estimate g2_from_powers(const std::vector<double>& p1, const std::vector<double>& p2) {
  double s1 = 0.0, s2 = 0.0;
  for (double v : p1) s1 += v;
  for (double v : p2) s2 += v;
  if (!(s1 > 0.0) || !(s2 > 0.0)) throw ZeroPowerError("g2: an arm detects zero average power");
  std::vector<std::vector<double>> cols{p1, p2, std::vector<double>(p1.size())};
  for (std::size_t r = 0; r < p1.size(); ++r) cols[2][r] = p1[r] * p2[r];
  return jackknife(std::span<const std::vector<double>>(cols),
                   [](std::span<const double> m) { return m[2] / (m[0] * m[1]); });
}

}  // namespace detail

/// Monte Carlo <P1 P2> / (<P1><P2>) for one filter pair, with jackknife error.
inline Estimate g2_monte_carlo(const Ensemble& ensemble, const ModeFilter& filter1, const ModeFilter& filter2,
                               const DetectionOptics& optics, const HbtOptions& opt = {}, Warnings* warnings = nullptr) {
  const double c_det = detail::checked_detection_c(optics, ensemble.kernel().c, opt);
  const DetectedPowers p = detect_powers(ensemble, {filter1, filter2}, c_det, opt.threads, opt.realizations, warnings);
  if (p.power[0].empty()) throw InsufficientSamplesError("g2_monte_carlo: empty ensemble");
  return detail::g2_from_powers(p.power[0], p.power[1]);
}

/// Monte Carlo g² for every (arm 1, arm 2) filter pair. Powers are computed once per filter.
inline G2Matrix g2_matrix_monte_carlo(const Ensemble& ensemble, const std::vector<ModeFilter>& arm1,
                                      const std::vector<ModeFilter>& arm2, const DetectionOptics& optics,
                                      const HbtOptions& opt = {}, Warnings* warnings = nullptr) {
  const double c_det = detail::checked_detection_c(optics, ensemble.kernel().c, opt);
  std::vector<ModeFilter> all = arm1;
  all.insert(all.end(), arm2.begin(), arm2.end());
  const DetectedPowers p = detect_powers(ensemble, all, c_det, opt.threads, opt.realizations, warnings);
  G2Matrix g{arm1, arm2, {}};
  for (std::size_t i = 0; i < arm1.size(); ++i)
    for (std::size_t j = 0; j < arm2.size(); ++j)
      g.values[{i, j}] = detail::g2_from_powers(p.power[i], p.power[arm1.size() + j]);
  return g;
}

inline constexpr unsigned kScanMaxOrder = 80;
inline constexpr double kScanTailTolerance = 1e-10;

/// Exact thermal-light g² for an arbitrary filter pair:
///   g² = 1 + (sum λ o1 o2)² / (sum λ o1² · sum λ o2²), separably in x and y.
inline double g2_analytic(const SchellModel& model, const ModeFilter& filter1, const ModeFilter& filter2,
                          double c_det = 0.0, unsigned max_order = kScanMaxOrder, Warnings* warnings = nullptr) {
  const KernelParams k = derive_kernel_params(model);
  const OverlapOptions oopt{c_det, 0.0};
  double ratio = 1.0;
  for (int axis = 0; axis < 2; ++axis) {
    const auto o1 = axis_overlaps(axis_filter(filter1, axis), k.c, max_order + 1, oopt, warnings);
    const auto o2 = axis_overlaps(axis_filter(filter2, axis), k.c, max_order + 1, oopt, warnings);
    double s12 = 0.0, s11 = 0.0, s22 = 0.0;
    for (unsigned n = 0; n <= max_order; ++n) {
      const double lam = eigenvalue(k, 1.0, n);
      s12 += lam * o1[n] * o2[n];
      s11 += lam * o1[n] * o1[n];
      s22 += lam * o2[n] * o2[n];
    }
    if (!(s11 > 0.0) || !(s22 > 0.0)) throw ZeroPowerError("g2_analytic: an arm detects zero average power");
    ratio *= s12 * s12 / (s11 * s22);
  }
  return 1.0 + ratio;
}

struct ScanOptions {
  double c_det = 0.0;  // 0: mode matched
  unsigned max_order = kScanMaxOrder;
  double tail_tolerance = kScanTailTolerance;
};

struct ScanCurve {
  std::vector<double> displacements;  // fiber offset along x, metres
  std::vector<double> g2;
  Warnings warnings;
};

namespace detail {

// lambda_m |alpha_m(r)|² / sum_k lambda_k |alpha_k(r)|² along one axis. Because the
// alpha_k are coefficients of a normalized function and lambda decreases, the tail
// after order n is bounded by lambda_{n+1} (1 - sum_{k<=n} alpha_k²); the series stops
// once that bound drops below tail_tolerance of the partial sum.
inline double scan_axis_factor(const KernelParams& k, unsigned m, double r, const ScanOptions& opt, Warnings& warnings) {
  AxisFilter bucket;
  bucket.displacement = r;
  const unsigned count = std::max(opt.max_order, m) + 1;
  const auto alpha = axis_overlaps(bucket, k.c, count, {opt.c_det, 0.0}, &warnings);
  double sum = 0.0;
  double captured = 0.0;
  bool converged = false;
  for (unsigned n = 0; n < count; ++n) {
    sum += eigenvalue(k, 1.0, n) * alpha[n] * alpha[n];
    captured += alpha[n] * alpha[n];
    const double tail = eigenvalue(k, 1.0, n + 1) * std::max(0.0, 1.0 - captured);
    if (n >= m && tail < opt.tail_tolerance * sum) {
      converged = true;
      break;
    }
  }
  if (!converged)
    warnings.push_back("g2_scan: series tail bound not reached by order " + std::to_string(count - 1) +
                       " at displacement " + std::to_string(r));
  if (!(sum > 0.0)) throw ZeroPowerError("g2_scan: fiber detects zero average power");
  return eigenvalue(k, 1.0, m) * alpha[m] * alpha[m] / sum;
}

}  // namespace detail

/// g²_{(m,n)}(r_f) with an ideal projector on HG_{mn} in one arm and a bare fiber
/// displaced by r_f along x in the other:
///   g² = 1 + λ_m|α_m(r_f)|² / Σ_k λ_k|α_k(r_f)|²  (times the y-axis factor at 0).
inline ScanCurve g2_scan(const SchellModel& model, ModeIndex mask_index, std::span<const double> displacements,
                         const ScanOptions& opt = {}) {
  const KernelParams k = derive_kernel_params(model);
  ScanCurve out{{displacements.begin(), displacements.end()}, {}, {}};
  const double fy = detail::scan_axis_factor(k, mask_index.n, 0.0, opt, out.warnings);
  for (double r : displacements) {
    if (!std::isfinite(r)) throw std::invalid_argument("g2_scan: displacement must be finite");
    out.g2.push_back(1.0 + detail::scan_axis_factor(k, mask_index.m, r, opt, out.warnings) * fy);
  }
  return out;
}

/// g²_{(m,0)}(0) when the detection fundamental has width parameter c_det instead of c.
/// Equals 1 only when c_det = c.
inline double mode_mismatch_witness(const SchellModel& model, unsigned m, double c_det) {
  if (m < 2 || m % 2 != 0) throw std::invalid_argument("mode_mismatch_witness: m must be even and >= 2");
  if (!(c_det > 0.0)) throw std::invalid_argument("mode_mismatch_witness: c_det must be positive");
  const double zero = 0.0;
  ScanOptions opt;
  opt.c_det = c_det;
  return g2_scan(model, {m, 0}, std::span<const double>(&zero, 1), opt).g2.front();
}

/// Analytic single-arm power through an ideal projector on HG_{mn}: λ_{mn}.
inline double partial_intensity(const SchellModel& model, ModeIndex index) {
  const KernelParams k = derive_kernel_params(model);
  return eigenvalue(k, model.amplitude(), index.m) * eigenvalue(k, model.amplitude(), index.n) / model.amplitude();
}

/// Monte Carlo mean detected power through an ideal projector.
inline Estimate partial_intensity(const Ensemble& ensemble, const IdealProjector& filter, unsigned threads = 1) {
  const DetectedPowers p = detect_powers(ensemble, {filter}, ensemble.kernel().c, threads);
  return jackknife(std::span<const std::vector<double>>(p.power), [](std::span<const double> m) { return m[0]; });
}

struct MeasuredSpectrum {
  ModeSpectrum spectrum;  // relative to the (0,0) power
  std::map<ModeIndex, double> std_error;
};

/// Partial intensities of every HG_{mn}, m + n <= max_order, normalized to HG_00, as
/// a bucket detector behind ideal projectors would measure them.
inline MeasuredSpectrum measure_spectrum(const Ensemble& ensemble, unsigned max_order, unsigned threads = 1,
                                         std::size_t realizations = 0) {
  const auto filters = ideal_filters(max_order);
  const DetectedPowers p = detect_powers(ensemble, filters, ensemble.kernel().c, threads, realizations);
  MeasuredSpectrum out{{ensemble.kernel().c, {}, Normalization::relative_to_lambda00}, {}};
  for (std::size_t f = 0; f < filters.size(); ++f) {
    const ModeIndex idx = target_index(filters[f]);
    std::vector<std::vector<double>> cols{p.power[f], p.power[0]};
    const Estimate e = jackknife(std::span<const std::vector<double>>(cols),
                                 [](std::span<const double> m) { return m[0] / m[1]; });
    out.spectrum.eigenvalues[idx] = e.value;
    out.std_error[idx] = e.std_error;
  }
  return out;
}

/// |∫ HG_m(ξ; c) HG_0(x_f - ξ; c_fiber) dξ|² at each fiber position x_f.
inline std::vector<double> fiber_convolution(unsigned m, double c, double c_fiber, std::span<const double> x_f) {
  if (!(c > 0.0) || !(c_fiber > 0.0)) throw std::invalid_argument("fiber_convolution: waists must be positive");
  std::vector<double> out;
  out.reserve(x_f.size());
  for (double x : x_f) {
    AxisFilter bucket;
    bucket.displacement = x;
    const double a = axis_overlaps(bucket, c, m + 1, {c_fiber, 0.0})[m];
    out.push_back(a * a);
  }
  return out;
}

}  // namespace gsm
