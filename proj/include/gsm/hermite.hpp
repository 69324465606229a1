#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "gsm/errors.hpp"

namespace gsm {

inline constexpr unsigned kMaxHermiteOrder = 200;

namespace detail {

inline void check_order(unsigned n) {
  if (n > kMaxHermiteOrder)
    throw HermiteOrderError("Hermite-Gaussian order " + std::to_string(n) + " exceeds supported maximum " +
                            std::to_string(kMaxHermiteOrder));
}

}  // namespace detail

/// Fills out[k] = phi_k(x) for k = 0..out.size()-1, where
///   phi_k(x) = (2c/pi)^{1/4} / sqrt(2^k k!) H_k(x sqrt(2c)) exp(-c x²).
///
/// Uses the recurrence of the orthonormal Hermite functions
///   psi_{k+1}(s) = sqrt(2/(k+1)) s psi_k(s) - sqrt(k/(k+1)) psi_{k-1}(s),
/// with phi_k(x) = (2c)^{1/4} psi_k(x sqrt(2c)); the normalization never forms 2^k k!.
inline void hg_modes(double c, double x, std::span<double> out) {
  if (out.empty()) return;
  detail::check_order(static_cast<unsigned>(out.size() - 1));
  const double s = x * std::sqrt(2.0 * c);
  const double scale = std::pow(2.0 * c, 0.25);
  double prev = 0.0;
  double cur = std::pow(std::numbers::pi, -0.25) * std::exp(-0.5 * s * s);
  out[0] = scale * cur;
  for (std::size_t k = 0; k + 1 < out.size(); ++k) {
    const double kk = static_cast<double>(k);
    const double next = std::sqrt(2.0 / (kk + 1.0)) * s * cur - std::sqrt(kk / (kk + 1.0)) * prev;
    prev = cur;
    cur = next;
    out[k + 1] = scale * cur;
  }
}

inline std::vector<double> hg_modes(double c, unsigned max_order, double x) {
  std::vector<double> out(max_order + 1);
  hg_modes(c, x, out);
  return out;
}

/// Single Hermite-Gaussian eigenmode phi_n(x) of width parameter c.
inline double hg_mode(double c, unsigned n, double x) {
  detail::check_order(n);
  return hg_modes(c, n, x)[n];
}

/// Cramér's bound: sup_x |phi_n(x)|² <= sqrt(2c/pi) for every n.
inline double hg_mode_sup_squared(double c) { return std::sqrt(2.0 * c / std::numbers::pi); }

}  // namespace gsm
