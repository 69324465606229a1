#pragma once

#include <compare>
#include <map>
#include <stdexcept>
#include <string>

#include "gsm/schell_model.hpp"

namespace gsm {

/// HG_{mn}: m is the x order, n the y order.
struct ModeIndex {
  unsigned m = 0;
  unsigned n = 0;

  unsigned order() const { return m + n; }
  auto operator<=>(const ModeIndex&) const = default;
};

inline std::string to_string(ModeIndex i) { return "(" + std::to_string(i.m) + "," + std::to_string(i.n) + ")"; }

enum class Normalization { raw, relative_to_lambda00, unit_trace };

/// Ordered eigenvalues lambda_{mn}. 1D spectra use n = 0 throughout.
struct ModeSpectrum {
  double c = 0.0;
  std::map<ModeIndex, double> eigenvalues;
  Normalization normalization = Normalization::raw;

  double at(ModeIndex i) const {
    auto it = eigenvalues.find(i);
    if (it == eigenvalues.end()) throw std::out_of_range("ModeSpectrum: missing index " + to_string(i));
    return it->second;
  }
  bool contains(ModeIndex i) const { return eigenvalues.contains(i); }

  double sum() const {
    double s = 0.0;
    for (const auto& [_, v] : eigenvalues) s += v;
    return s;
  }

  ModeSpectrum normalized(Normalization target) const {
    ModeSpectrum out = *this;
    out.normalization = target;
    double scale = 1.0;
    if (target == Normalization::relative_to_lambda00) scale = at({0, 0});
    if (target == Normalization::unit_trace) scale = sum();
    if (target != Normalization::raw) {
      if (!(scale > 0.0)) throw std::domain_error("ModeSpectrum: cannot normalize by a non-positive value");
      for (auto& [_, v] : out.eigenvalues) v /= scale;
    }
    return out;
  }
};

inline constexpr unsigned kDefaultMaxOrder = 20;

/// Separable 2D spectrum lambda_{mn} = lambda_m lambda_n / A for all m + n <= max_order.
inline ModeSpectrum analytic_spectrum_2d(const SchellModel& model, unsigned max_order = kDefaultMaxOrder,
                                         Normalization norm = Normalization::relative_to_lambda00) {
  const KernelParams k = derive_kernel_params(model);
  ModeSpectrum s{k.c, {}, Normalization::raw};
  for (unsigned m = 0; m <= max_order; ++m)
    for (unsigned n = 0; m + n <= max_order; ++n)
      s.eigenvalues[{m, n}] = eigenvalue(k, model.amplitude(), m) * eigenvalue(k, model.amplitude(), n) /
                              model.amplitude();
  return s.normalized(norm);
}

/// 1D spectrum lambda_n stored under (n, 0).
inline ModeSpectrum analytic_spectrum_1d(const SchellModel& model, unsigned max_order = kDefaultMaxOrder,
                                         Normalization norm = Normalization::relative_to_lambda00) {
  const KernelParams k = derive_kernel_params(model);
  ModeSpectrum s{k.c, {}, Normalization::raw};
  for (unsigned n = 0; n <= max_order; ++n) s.eigenvalues[{n, 0}] = eigenvalue(k, model.amplitude(), n);
  return s.normalized(norm);
}

}  // namespace gsm
