#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "gsm/errors.hpp"
#include "gsm/hbt.hpp"
#include "gsm/mode_spectrum.hpp"

namespace gsm {

struct MissingIndexError : std::out_of_range {
  using std::out_of_range::out_of_range;
};

/// Bhattacharyya overlap of two spectra over the indices selected by `in_window`:
///   F = Σ sqrt(λ_th λ_exp) / sqrt(Σ λ_th · Σ λ_exp).
/// Both spectra are normalized implicitly, so overall scale does not matter.
inline double fidelity_window(const ModeSpectrum& exp, const ModeSpectrum& th,
                              const std::function<bool(ModeIndex)>& in_window) {
  double cross = 0.0, sum_exp = 0.0, sum_th = 0.0;
  auto visit = [&](const ModeSpectrum& s, const ModeSpectrum& other) {
    for (const auto& [idx, _] : s.eigenvalues)
      if (in_window(idx) && !other.contains(idx))
        throw MissingIndexError("fidelity: index " + to_string(idx) + " missing from one spectrum");
  };
  visit(exp, th);
  visit(th, exp);
  for (const auto& [idx, le] : exp.eigenvalues) {
    if (!in_window(idx)) continue;
    const double lt = th.at(idx);
    if (le < 0.0 || lt < 0.0) throw std::invalid_argument("fidelity: negative eigenvalue at " + to_string(idx));
    cross += std::sqrt(le * lt);
    sum_exp += le;
    sum_th += lt;
  }
  if (!(sum_exp > 0.0) || !(sum_th > 0.0)) throw std::domain_error("fidelity: a spectrum is zero over the window");
  return std::min(1.0, cross / std::sqrt(sum_exp * sum_th));
}

/// Fidelity over the rectangle m <= M, n <= N; every index in it must be present in both.
inline double fidelity(const ModeSpectrum& exp, const ModeSpectrum& th, unsigned M, unsigned N) {
  for (unsigned m = 0; m <= M; ++m)
    for (unsigned n = 0; n <= N; ++n)
      if (!exp.contains({m, n}) || !th.contains({m, n}))
        throw MissingIndexError("fidelity: index " + to_string({m, n}) + " missing");
  return fidelity_window(exp, th, [=](ModeIndex i) { return i.m <= M && i.n <= N; });
}

/// Fidelity over the triangle m + n <= order.
inline double fidelity_by_order(const ModeSpectrum& exp, const ModeSpectrum& th, unsigned order) {
  for (unsigned m = 0; m <= order; ++m)
    for (unsigned n = 0; m + n <= order; ++n)
      if (!exp.contains({m, n}) || !th.contains({m, n}))
        throw MissingIndexError("fidelity: index " + to_string({m, n}) + " missing");
  return fidelity_window(exp, th, [=](ModeIndex i) { return i.order() <= order; });
}

/// Euclidean norm of elementwise g² differences; both matrices must have the same entries.
inline double g2_distance(const G2Matrix& a, const G2Matrix& b, std::optional<unsigned> max_order = std::nullopt) {
  if (a.values.size() != b.values.size())
    throw IndexMismatchError("g2_distance: matrices have different index sets");
  double ss = 0.0;
  for (const auto& [key, est] : a.values) {
    auto it = b.values.find(key);
    if (it == b.values.end()) throw IndexMismatchError("g2_distance: matrices have different index sets");
    if (max_order && a.order(key.first, key.second) > *max_order) continue;
    const double d = est.value - it->second.value;
    ss += d * d;
  }
  return std::sqrt(ss);
}

/// Participation ratio K = (Σλ)² / Σλ².
inline double schmidt_number(std::span<const double> lambda) {
  double s = 0.0, s2 = 0.0;
  for (double l : lambda) {
    if (l < 0.0) throw std::invalid_argument("schmidt_number: negative eigenvalue");
    s += l;
    s2 += l * l;
  }
  if (!(s2 > 0.0)) throw std::domain_error("schmidt_number: spectrum is identically zero");
  return s * s / s2;
}

inline double schmidt_number(const ModeSpectrum& spectrum) {
  std::vector<double> v;
  v.reserve(spectrum.eigenvalues.size());
  for (const auto& [_, l] : spectrum.eigenvalues) v.push_back(l);
  return schmidt_number(v);
}

/// (g_same - g_cross) / (g_same + g_cross); 1/3 for ideal thermal values (2, 1).
inline double visibility(double g2_same, double g2_cross) {
  if (!(g2_same > 0.0) || !(g2_cross > 0.0)) throw std::invalid_argument("visibility: g2 values must be positive");
  return (g2_same - g2_cross) / (g2_same + g2_cross);
}

/// Visibility with first-order error propagation from independent errors on its inputs.
inline Estimate visibility(const Estimate& same, const Estimate& cross) {
  const double v = visibility(same.value, cross.value);
  const double denom = (same.value + cross.value) * (same.value + cross.value);
  const double ds = 2.0 * cross.value / denom;
  const double dc = -2.0 * same.value / denom;
  return {v, std::hypot(ds * same.std_error, dc * cross.std_error)};
}

struct ComparisonReport {
  double fidelity = 1.0;
  double distance = 0.0;
  std::pair<unsigned, unsigned> max_order_used{0, 0};
  std::vector<std::pair<unsigned, double>> fidelity_curve;  // (M + N, F over m + n <= M + N)
  std::vector<std::pair<unsigned, double>> distance_curve;  // (M + N, D over entries of order <= M + N)
};

/// Fidelity (and, if both matrices are given, g² distance) as a function of the
/// maximal total order taken into account. Headline values use the full window.
inline ComparisonReport compare(const ModeSpectrum& exp, const ModeSpectrum& th, unsigned max_order,
                                const G2Matrix* g2_exp = nullptr, const G2Matrix* g2_th = nullptr) {
  ComparisonReport r;
  r.max_order_used = {max_order, max_order};
  for (unsigned s = 0; s <= max_order; ++s) r.fidelity_curve.emplace_back(s, fidelity_by_order(exp, th, s));
  r.fidelity = r.fidelity_curve.back().second;
  if (g2_exp && g2_th) {
    for (unsigned s = 0; s <= max_order; ++s) r.distance_curve.emplace_back(s, g2_distance(*g2_exp, *g2_th, s));
    r.distance = r.distance_curve.back().second;
  }
  return r;
}

}  // namespace gsm
