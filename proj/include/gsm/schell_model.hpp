#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace gsm {

/// Gaussian Schell-model source: Gaussian intensity profile of rms width sigma_I
/// and Gaussian degree of coherence of rms width sigma_mu. Lengths in metres.
class SchellModel {
 public:
  SchellModel(double sigma_I, double sigma_mu, double wavelength, double amplitude = 1.0)
      : sigma_I_(sigma_I), sigma_mu_(sigma_mu), wavelength_(wavelength), amplitude_(amplitude) {
    check_positive(sigma_I, "sigma_I");
    check_positive(sigma_mu, "sigma_mu");
    check_positive(wavelength, "wavelength");
    check_positive(amplitude, "amplitude");
  }

  static SchellModel from_beta(double sigma_I, double beta, double wavelength, double amplitude = 1.0) {
    check_positive(beta, "beta");
    return SchellModel(sigma_I, beta * sigma_I, wavelength, amplitude);
  }

  double sigma_I() const { return sigma_I_; }
  double sigma_mu() const { return sigma_mu_; }
  double wavelength() const { return wavelength_; }
  double amplitude() const { return amplitude_; }
  double beta() const { return sigma_mu_ / sigma_I_; }
  double wavenumber() const { return 2.0 * std::numbers::pi / wavelength_; }

  bool operator==(const SchellModel&) const = default;

 private:
  static void check_positive(double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v))
      throw std::invalid_argument(std::string("SchellModel: ") + name + " must be finite and positive");
  }

  double sigma_I_;
  double sigma_mu_;
  double wavelength_;
  double amplitude_;
};

/// Exponent coefficients of the kernel A·exp(-a(x1²+x2²) - b(x1-x2)²) and the
/// eigenmode width parameter c (modes go as exp(-c x²)).
struct KernelParams {
  double a;
  double b;
  double c;
};

/// sigma_mu may be +inf (fully coherent limit, b = 0).
inline KernelParams kernel_params(double sigma_I, double sigma_mu) {
  const double a = 1.0 / (4.0 * sigma_I * sigma_I);
  // mu = exp(-(x1-x2)^2 / 2 sigma_mu^2), so the (x1-x2)^2 coefficient is 1/(2 sigma_mu^2).
  const double b = std::isinf(sigma_mu) ? 0.0 : 1.0 / (2.0 * sigma_mu * sigma_mu);
  return {a, b, std::sqrt(a * a + 2.0 * a * b)};
}

inline KernelParams derive_kernel_params(const SchellModel& model) {
  return kernel_params(model.sigma_I(), model.sigma_mu());
}

/// 1D eigenvalue lambda_n of the Schell kernel with amplitude A.
inline double eigenvalue(const KernelParams& k, double amplitude, unsigned n) {
  const double s = k.a + k.b + k.c;
  return amplitude * std::sqrt(std::numbers::pi / s) * std::pow(k.b / s, static_cast<double>(n));
}

inline double eigenvalue(const SchellModel& model, unsigned n) {
  return eigenvalue(derive_kernel_params(model), model.amplitude(), n);
}

/// Common ratio lambda_{n+1}/lambda_n of the geometric spectrum, written in terms of beta only.
inline double eigenvalue_ratio_q(double beta) {
  if (!(beta > 0.0)) throw std::invalid_argument("eigenvalue_ratio: beta must be positive");
  return 1.0 / (0.5 * beta * beta + 1.0 + beta * std::sqrt(0.25 * beta * beta + 1.0));
}

/// lambda_n / lambda_0 from beta alone; independent of the kernel-parameter route.
inline double eigenvalue_ratio(double beta, unsigned n) {
  return std::pow(eigenvalue_ratio_q(beta), static_cast<double>(n));
}

/// Mean intensity profile I(x) = A exp(-x²/2σ_I²).
inline double intensity(const SchellModel& model, double x) {
  return model.amplitude() * std::exp(-x * x / (2.0 * model.sigma_I() * model.sigma_I()));
}

/// Degree of spatial coherence mu(dx) = exp(-dx²/2σ_μ²).
inline double coherence_degree(const SchellModel& model, double dx) {
  return std::exp(-dx * dx / (2.0 * model.sigma_mu() * model.sigma_mu()));
}

/// First-order coherence G1(x1, x2) = sqrt(I(x1) I(x2)) mu(x1 - x2). Real for this model.
inline double g1_kernel(const SchellModel& model, double x1, double x2) {
  return std::sqrt(intensity(model, x1) * intensity(model, x2)) * coherence_degree(model, x1 - x2);
}

/// Intensity correlation <I(x1) I(x2)> of thermal light via the Siegert relation.
inline double siegert_g2(const SchellModel& model, double x1, double x2) {
  const double g1 = g1_kernel(model, x1, x2);
  return intensity(model, x1) * intensity(model, x2) + g1 * g1;
}

/// siegert_g2 divided by <I(x1)><I(x2)>, i.e. 1 + |mu|².
inline double siegert_g2_normalized(const SchellModel& model, double x1, double x2) {
  return siegert_g2(model, x1, x2) / (intensity(model, x1) * intensity(model, x2));
}

}  // namespace gsm
