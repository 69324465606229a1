#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdio>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Eigenvalues>

#include "gsm/errors.hpp"
#include "gsm/hermite.hpp"
#include "gsm/mode_spectrum.hpp"
#include "gsm/quadrature.hpp"
#include "gsm/schell_model.hpp"

namespace gsm {

// ---------------------------------------------------------------------------
// Detection optics

/// Fourier lens of focal length f in front of a single-mode fiber of waist w_f.
struct DetectionOptics {
  double fiber_waist = 0.0;
  double focal_length = 0.0;
  double wavenumber = 0.0;

  DetectionOptics() = default;
  DetectionOptics(double fiber_waist, double focal_length, double wavenumber)
      : fiber_waist(fiber_waist), focal_length(focal_length), wavenumber(wavenumber) {
    if (!(fiber_waist > 0.0) || !(focal_length > 0.0) || !(wavenumber > 0.0))
      throw std::invalid_argument("DetectionOptics: all parameters must be positive");
  }

  /// Width parameter of the fiber mode back-projected to the source plane, k²w_f²/(4f²).
  double detection_c() const {
    return wavenumber * wavenumber * fiber_waist * fiber_waist / (4.0 * focal_length * focal_length);
  }

  bool is_matched(double c, double tolerance = 1e-9) const { return std::abs(detection_c() / c - 1.0) < tolerance; }
};

inline constexpr double kModeMatchTolerance = 1e-9;

/// Focal length that makes the back-projected fiber mode coincide with the eigenmodes.
inline double matched_focal_length(const SchellModel& model, double fiber_waist) {
  if (!(fiber_waist > 0.0)) throw std::invalid_argument("matched_focal_length: fiber waist must be positive");
  const double c = derive_kernel_params(model).c;
  return model.wavenumber() * fiber_waist / (2.0 * std::sqrt(c));
}

inline DetectionOptics matched_optics(const SchellModel& model, double fiber_waist) {
  return {fiber_waist, matched_focal_length(model, fiber_waist), model.wavenumber()};
}

// ---------------------------------------------------------------------------
// Filters

/// Exact projector onto eigenmode `index`.
struct IdealProjector {
  ModeIndex index;
};

/// Binary {0, pi} phase screen for HG_{index}. steps[0] / steps[1] hold the sign
/// change positions along x / y in metres, strictly increasing. The phase on the far
/// left of each axis matches the sign of H_order there, i.e. (-1)^order.
struct StepPhaseMask {
  ModeIndex index;
  std::array<std::vector<double>, 2> steps;
};

/// Bare fiber (no mask) with its tip displaced by `displacement` (source-plane units).
struct GaussianBucket {
  std::array<double, 2> displacement{0.0, 0.0};
};

using ModeFilter = std::variant<IdealProjector, StepPhaseMask, GaussianBucket>;

/// Compact label, also used as the CSV representation: ideal:m:n, step:m:n, bucket:x:y.
inline std::string describe(const ModeFilter& f) {
  return std::visit(
      [](const auto& v) -> std::string {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, IdealProjector>)
          return "ideal:" + std::to_string(v.index.m) + ":" + std::to_string(v.index.n);
        else if constexpr (std::is_same_v<T, StepPhaseMask>)
          return "step:" + std::to_string(v.index.m) + ":" + std::to_string(v.index.n);
        else {
          char buf[96];
          std::snprintf(buf, sizeof buf, "bucket:%.17g:%.17g", v.displacement[0], v.displacement[1]);
          return buf;
        }
      },
      f);
}

/// Mode index a filter targets, if any (the bucket targets the fundamental).
inline ModeIndex target_index(const ModeFilter& f) {
  if (auto* p = std::get_if<IdealProjector>(&f)) return p->index;
  if (auto* p = std::get_if<StepPhaseMask>(&f)) return p->index;
  return {0, 0};
}

/// Zeros of H_order(sqrt(2c) x), ascending, in metres: eigenvalues of the Jacobi
/// matrix of the Hermite recurrence.
inline std::vector<double> hermite_zeros(unsigned order, double c) {
  if (order == 0) return {};
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(order, order);
  for (unsigned k = 1; k < order; ++k)
    jacobi(k - 1, k) = jacobi(k, k - 1) = std::sqrt(static_cast<double>(k) / 2.0);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(jacobi, Eigen::EigenvaluesOnly);
  std::vector<double> zeros(order);
  const double scale = 1.0 / std::sqrt(2.0 * c);
  for (unsigned k = 0; k < order; ++k) {
    const double z = solver.eigenvalues()(k);
    zeros[k] = (std::abs(z) < 1e-14 ? 0.0 : z) * scale;
  }
  return zeros;
}

/// Step mask with sign changes at the Hermite zeros on both axes.
inline StepPhaseMask default_step_mask(ModeIndex index, double c) {
  return {index, {hermite_zeros(index.m, c), hermite_zeros(index.n, c)}};
}

inline void validate(const ModeFilter& f) {
  if (auto* mask = std::get_if<StepPhaseMask>(&f)) {
    for (const auto& axis : mask->steps) {
      for (double s : axis)
        if (!std::isfinite(s)) throw std::invalid_argument("StepPhaseMask: step positions must be finite");
      for (std::size_t i = 1; i < axis.size(); ++i)
        if (!(axis[i] > axis[i - 1]))
          throw std::invalid_argument("StepPhaseMask: step positions must be strictly increasing");
    }
  }
  if (auto* b = std::get_if<GaussianBucket>(&f))
    if (!std::isfinite(b->displacement[0]) || !std::isfinite(b->displacement[1]))
      throw std::invalid_argument("GaussianBucket: displacement must be finite");
}

// ---------------------------------------------------------------------------
// One-dimensional overlaps

/// What a filter does along one axis.
struct AxisFilter {
  enum class Kind { projector, mask } kind = Kind::mask;
  unsigned order = 0;          // projector target or mask order
  std::vector<double> steps;   // mask sign changes
  double displacement = 0.0;   // fiber tip offset
};

inline AxisFilter axis_filter(const ModeFilter& f, int axis) {
  AxisFilter a;
  if (auto* p = std::get_if<IdealProjector>(&f)) {
    a.kind = AxisFilter::Kind::projector;
    a.order = axis == 0 ? p->index.m : p->index.n;
  } else if (auto* m = std::get_if<StepPhaseMask>(&f)) {
    a.order = axis == 0 ? m->index.m : m->index.n;
    a.steps = m->steps[axis];
  } else {
    a.displacement = std::get<GaussianBucket>(f).displacement[axis];
  }
  return a;
}

struct OverlapOptions {
  double c_det = 0.0;        // detection-mode width parameter; 0 means c (mode matched)
  double panel_width = 0.0;  // 0 chooses one automatically
};

inline constexpr double kMinNodesPerOscillation = 8.0;

namespace detail {

/// Local period of phi_k near the origin, in x.
inline double hg_period(double c, unsigned k) {
  return 2.0 * std::numbers::pi / (std::sqrt(2.0 * c) * std::sqrt(2.0 * k + 1.0));
}

inline double mask_sign(const AxisFilter& a, double x) {
  // Sign of H_order on the far left is (-1)^order; each step flips it.
  double s = (a.order % 2 == 0) ? 1.0 : -1.0;
  for (double step : a.steps)
    if (x > step) s = -s;
  return s;
}

}  // namespace detail

/// o_k = ∫ phi_k(x; c) t(x) phi_0(x - r; c_det) dx for k = 0..count-1, where t is the
/// axis mask transmission (±1, or 1 without a mask) and r the fiber displacement.
/// Projectors return Kronecker deltas.
inline std::vector<double> axis_overlaps(const AxisFilter& a, double c, std::size_t count,
                                         const OverlapOptions& opt = {}, Warnings* warnings = nullptr) {
  std::vector<double> out(count, 0.0);
  if (count == 0) return out;
  if (a.kind == AxisFilter::Kind::projector) {
    if (a.order < count) out[a.order] = 1.0;
    return out;
  }
  const double c_det = opt.c_det > 0.0 ? opt.c_det : c;
  const auto top = static_cast<unsigned>(count - 1);
  const double period = detail::hg_period(c, top);
  const double panel = opt.panel_width > 0.0 ? opt.panel_width : std::min(period, 1.0 / std::sqrt(2.0 * c));
  const double nodes_per_period = kGaussPoints * period / panel;
  if (warnings && nodes_per_period < kMinNodesPerOscillation)
    warnings->push_back("overlap quadrature: " + std::to_string(nodes_per_period) + " nodes per oscillation of mode " +
                        std::to_string(top) + " (< 8)");

  // The detection Gaussian bounds the integrand: exp(-c_det d²) < 1e-17 beyond d = 6.3/sqrt(c_det).
  const double reach = 6.3 / std::sqrt(c_det);
  const QuadratureRule rule =
      QuadratureRule::composite(a.displacement - reach, a.displacement + reach, a.steps, panel);

  const double g_norm = std::pow(2.0 * c_det / std::numbers::pi, 0.25);
  std::vector<double> phi(count);
  for (std::size_t q = 0; q < rule.nodes.size(); ++q) {
    const double x = rule.nodes[q];
    const double d = x - a.displacement;
    const double weight = rule.weights[q] * detail::mask_sign(a, x) * g_norm * std::exp(-c_det * d * d);
    hg_modes(c, x, phi);
    for (std::size_t k = 0; k < count; ++k) out[k] += weight * phi[k];
  }
  return out;
}

/// Amplitude with which eigenmode `mode` couples into the detected fiber mode.
inline std::complex<double> filter_overlap(const ModeFilter& f, ModeIndex mode, double c, const OverlapOptions& opt = {},
                                           Warnings* warnings = nullptr) {
  validate(f);
  const double ox = axis_overlaps(axis_filter(f, 0), c, mode.m + 1, opt, warnings)[mode.m];
  const double oy = axis_overlaps(axis_filter(f, 1), c, mode.n + 1, opt, warnings)[mode.n];
  return {ox * oy, 0.0};
}

/// Power a step mask of order `order` sends into eigenmodes other than its target,
/// sum_{k != order} |o_k|². Since |t| = 1 and the fiber mode is normalized, the
/// overlaps over all k sum to one, so this is 1 - |o_order|² without truncation.
inline double mask_cross_talk(const StepPhaseMask& mask, double c, int axis = 0) {
  const AxisFilter a = axis_filter(mask, axis);
  const double own = axis_overlaps(a, c, a.order + 1)[a.order];
  return 1.0 - own * own;
}

// ---------------------------------------------------------------------------
// Mask calibration

struct CalibrationOptions {
  unsigned max_sweeps = 200;
  double position_tolerance = 1e-10;  // in units of 1/sqrt(2c)
};

/// Leakage below this is indistinguishable from quadrature roundoff.
inline constexpr double kLeakageFloor = 1e-24;

struct CalibrationResult {
  StepPhaseMask mask;
  double objective = 0.0;           // leakage |o_0|² of the fundamental
  double initial_objective = 0.0;
  unsigned sweeps = 0;
};

/// Leakage of the fundamental through one mask axis into the centred fiber, |o_0|².
inline double fundamental_leakage(unsigned order, std::span<const double> steps, double c) {
  AxisFilter a;
  a.order = order;
  a.steps.assign(steps.begin(), steps.end());
  const double o = axis_overlaps(a, c, 1)[0];
  return o * o;
}

namespace detail {

template <class F>
double golden_section(F&& f, double lo, double hi, double tol) {
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double x1 = hi - inv_phi * (hi - lo), x2 = lo + inv_phi * (hi - lo);
  double f1 = f(x1), f2 = f(x2);
  while (hi - lo > tol) {
    if (f1 <= f2) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - inv_phi * (hi - lo);
      f1 = f(x1);
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + inv_phi * (hi - lo);
      f2 = f(x2);
    }
  }
  return 0.5 * (lo + hi);
}

// A mask axis kept symmetric about `center`: sign changes at center ± half[j]
// (half ascending), plus one at `center` itself for odd orders.
struct SymmetricSteps {
  double center = 0.0;
  std::vector<double> half;
  bool odd = false;

  static SymmetricSteps from(std::span<const double> steps) {
    SymmetricSteps s;
    const std::size_t m = steps.size();
    s.odd = m % 2 == 1;
    s.center = 0.5 * (steps.front() + steps.back());
    for (std::size_t j = m / 2; j-- > 0;) s.half.push_back(0.5 * (steps[m - 1 - j] - steps[j]));
    return s;
  }

  std::vector<double> positions() const {
    std::vector<double> out;
    for (auto it = half.rbegin(); it != half.rend(); ++it) out.push_back(center - *it);
    if (odd) out.push_back(center);
    for (double h : half) out.push_back(center + h);
    return out;
  }
};

inline std::vector<double> calibrate_axis(unsigned order, std::span<const double> initial, double c,
                                          const CalibrationOptions& opt, unsigned& sweeps) {
  if (initial.size() != order)
    throw std::invalid_argument("calibrate_mask: number of steps must equal the mode order");
  const double unit = 1.0 / std::sqrt(2.0 * c);
  const double tol = opt.position_tolerance * unit;
  const double margin = 1e-9 * unit;
  SymmetricSteps p = SymmetricSteps::from(initial);
  // Coordinate j < half.size() is a pair half-width; the last coordinate is the centre.
  auto coord = [](SymmetricSteps& s, std::size_t j) -> double& { return j < s.half.size() ? s.half[j] : s.center; };
  auto leakage_with = [&](std::size_t j, double v) {
    SymmetricSteps trial = p;
    coord(trial, j) = v;
    return fundamental_leakage(order, trial.positions(), c);
  };

  for (unsigned sweep = 1; sweep <= opt.max_sweeps; ++sweep) {
    double largest_move = 0.0;
    // Pair widths first; the centre moves only if symmetric adjustment cannot null the leakage.
    // Leakage is a single condition, so once it reaches the quadrature floor nothing else moves.
    for (std::size_t j = 0; j <= p.half.size(); ++j) {
      if (fundamental_leakage(order, p.positions(), c) <= kLeakageFloor) break;
      double lo, hi;
      if (j == p.half.size()) {
        lo = p.center - 2.0 * unit;
        hi = p.center + 2.0 * unit;
      } else {
        lo = j == 0 ? margin : p.half[j - 1] + margin;
        hi = j + 1 == p.half.size() ? p.half[j] + 2.0 * unit : p.half[j + 1] - margin;
      }
      const double start = coord(p, j);
      const double best = golden_section([&](double v) { return leakage_with(j, v); }, lo, hi, 0.1 * tol);
      if (leakage_with(j, best) < leakage_with(j, start)) {
        largest_move = std::max(largest_move, std::abs(best - start));
        coord(p, j) = best;
      }
    }
    sweeps = std::max(sweeps, sweep);
    if (largest_move < tol) return p.positions();
  }
  throw ConvergenceError("calibrate_mask: step positions did not converge within " + std::to_string(opt.max_sweeps) +
                         " sweeps");
}

}  // namespace detail

/// Coordinate descent with golden-section line searches, minimising the fundamental's
/// leakage into the centred fiber (the operational calibration criterion). Each axis
/// is calibrated independently and kept symmetric about a common centre; the
/// coordinates are the symmetric half-widths followed by the centre.
inline CalibrationResult calibrate_mask(const StepPhaseMask& initial, double c, const CalibrationOptions& opt = {}) {
  validate(initial);
  CalibrationResult r{initial, 0.0, 0.0, 0};
  const unsigned orders[2] = {initial.index.m, initial.index.n};
  double before = 1.0, after = 1.0;
  for (int axis = 0; axis < 2; ++axis) {
    if (orders[axis] == 0) continue;
    before *= fundamental_leakage(orders[axis], initial.steps[axis], c);
    r.mask.steps[axis] = detail::calibrate_axis(orders[axis], initial.steps[axis], c, opt, r.sweeps);
    after *= fundamental_leakage(orders[axis], r.mask.steps[axis], c);
  }
  r.initial_objective = before;
  r.objective = after;
  return r;
}

inline CalibrationResult calibrate_mask(ModeIndex index, double c, const CalibrationOptions& opt = {}) {
  return calibrate_mask(default_step_mask(index, c), c, opt);
}

}  // namespace gsm
