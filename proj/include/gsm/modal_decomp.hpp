#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "gsm/errors.hpp"
#include "gsm/hermite.hpp"
#include "gsm/parallel.hpp"
#include "gsm/schell_model.hpp"

namespace gsm {

/// Uniform grid on [-half_width, half_width] with `points` samples including both ends.
struct GridSpec {
  double half_width = 0.0;
  std::size_t points = 0;

  GridSpec() = default;
  GridSpec(double half_width, std::size_t points) : half_width(half_width), points(points) { validate(); }

  /// Default discretization: L = 5 sigma_I, N = 512.
  static GridSpec for_model(const SchellModel& model, double sigmas = 5.0, std::size_t points = 512) {
    return GridSpec(sigmas * model.sigma_I(), points);
  }

  void validate() const {
    if (points < 16) throw std::invalid_argument("GridSpec: at least 16 points required");
    if (!(half_width > 0.0) || !std::isfinite(half_width))
      throw std::invalid_argument("GridSpec: half_width must be finite and positive");
  }

  double spacing() const { return 2.0 * half_width / static_cast<double>(points - 1); }
  double x(std::size_t i) const { return -half_width + spacing() * static_cast<double>(i); }

  /// Relative intensity left at the domain edge, exp(-L²/2σ_I²).
  double envelope_at_edge(const SchellModel& model) const {
    return std::exp(-half_width * half_width / (2.0 * model.sigma_I() * model.sigma_I()));
  }

  bool operator==(const GridSpec&) const = default;
};

inline constexpr double kDefaultTruncationTolerance = 1e-8;

using KernelMatrix = Eigen::MatrixXd;

/// Nyström matrix K_ij = G1(x_i, x_j) Δx with uniform weights. Rows are assembled in
/// parallel; the result does not depend on `threads`.
inline KernelMatrix discretize_kernel(const SchellModel& model, const GridSpec& grid, Warnings* warnings = nullptr,
                                      unsigned threads = 1, double truncation_tolerance = kDefaultTruncationTolerance) {
  grid.validate();
  const double edge = grid.envelope_at_edge(model);
  if (warnings && edge > truncation_tolerance)
    warnings->push_back("envelope at grid edge exp(-L^2/2 sigma_I^2) = " + std::to_string(edge) +
                        " exceeds truncation tolerance " + std::to_string(truncation_tolerance));

  const std::size_t n = grid.points;
  const double dx = grid.spacing();
  KernelMatrix k(n, n);
  parallel_for(n, threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const double xi = grid.x(i);
      for (std::size_t j = 0; j < n; ++j) k(i, j) = g1_kernel(model, xi, grid.x(j)) * dx;
    }
  });
  const KernelMatrix sym = 0.5 * (k + k.transpose());
  return sym;
}

struct NumericalSpectrum {
  std::vector<double> eigenvalues;               // descending
  std::vector<std::vector<double>> eigenvectors;  // grid samples, ∫|v|² dx = 1
  GridSpec grid;
};

namespace detail {

// Flip so the leftmost significant local maximum of |v| is positive.
inline void fix_sign(std::vector<double>& v) {
  double peak = 0.0;
  for (double e : v) peak = std::max(peak, std::abs(e));
  if (peak == 0.0) return;
  const double floor = 0.1 * peak;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double a = std::abs(v[i]);
    if (a < floor) continue;
    if (i + 1 == v.size() || std::abs(v[i + 1]) <= a) {
      if (v[i] < 0.0)
        for (double& e : v) e = -e;
      return;
    }
  }
}

}  // namespace detail

/// Top `count` eigenpairs of a symmetric Nyström matrix, eigenvectors rescaled to
/// approximate continuum functions.
inline NumericalSpectrum eigendecompose(const KernelMatrix& kernel, const GridSpec& grid, std::size_t count) {
  grid.validate();
  const auto n = static_cast<std::size_t>(kernel.rows());
  if (kernel.cols() != kernel.rows() || n != grid.points)
    throw std::invalid_argument("eigendecompose: kernel shape does not match grid");
  if (count == 0 || count > n) throw std::invalid_argument("eigendecompose: count must be in [1, N]");

  Eigen::SelfAdjointEigenSolver<KernelMatrix> solver(kernel);
  if (solver.info() != Eigen::Success) throw SolverError("eigendecompose: symmetric eigensolver failed");

  const double inv_sqrt_dx = 1.0 / std::sqrt(grid.spacing());
  NumericalSpectrum out{{}, {}, grid};
  out.eigenvalues.reserve(count);
  out.eigenvectors.reserve(count);
  // Eigen returns ascending order.
  for (std::size_t r = 0; r < count; ++r) {
    const auto col = static_cast<Eigen::Index>(n - 1 - r);
    out.eigenvalues.push_back(std::max(0.0, solver.eigenvalues()(col)));
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = solver.eigenvectors()(static_cast<Eigen::Index>(i), col) * inv_sqrt_dx;
    detail::fix_sign(v);
    out.eigenvectors.push_back(std::move(v));
  }
  return out;
}

/// Analytic eigenpairs sampled on `grid`, in NumericalSpectrum form.
inline NumericalSpectrum sample_analytic_spectrum(const SchellModel& model, const GridSpec& grid, std::size_t count) {
  const KernelParams k = derive_kernel_params(model);
  NumericalSpectrum out{{}, std::vector<std::vector<double>>(count, std::vector<double>(grid.points)), grid};
  std::vector<double> phi(count);
  for (std::size_t i = 0; i < grid.points; ++i) {
    hg_modes(k.c, grid.x(i), phi);
    for (std::size_t n = 0; n < count; ++n) out.eigenvectors[n][i] = phi[n];
  }
  for (std::size_t n = 0; n < count; ++n) out.eigenvalues.push_back(eigenvalue(model, static_cast<unsigned>(n)));
  return out;
}

struct ModeComparison {
  std::vector<double> eigenvalue_rel_error;
  std::vector<double> mode_l2_error;  // after sign alignment

  double max_eigenvalue_error() const {
    double m = 0.0;
    for (double e : eigenvalue_rel_error) m = std::max(m, e);
    return m;
  }
  double max_mode_error() const {
    double m = 0.0;
    for (double e : mode_l2_error) m = std::max(m, e);
    return m;
  }
};

inline ModeComparison compare_to_analytic(const NumericalSpectrum& spectrum, const SchellModel& model,
                                          std::size_t count) {
  if (count > spectrum.eigenvalues.size() || count > spectrum.eigenvectors.size())
    throw std::invalid_argument("compare_to_analytic: count exceeds available modes");
  const KernelParams k = derive_kernel_params(model);
  const GridSpec& grid = spectrum.grid;
  const double dx = grid.spacing();

  ModeComparison out;
  std::vector<double> phi(count);
  std::vector<double> plus(count, 0.0), minus(count, 0.0);
  for (std::size_t i = 0; i < grid.points; ++i) {
    hg_modes(k.c, grid.x(i), phi);
    for (std::size_t n = 0; n < count; ++n) {
      const double v = spectrum.eigenvectors[n][i];
      plus[n] += (v - phi[n]) * (v - phi[n]);
      minus[n] += (v + phi[n]) * (v + phi[n]);
    }
  }
  for (std::size_t n = 0; n < count; ++n) {
    const double exact = eigenvalue(k, model.amplitude(), static_cast<unsigned>(n));
    out.eigenvalue_rel_error.push_back(std::abs(spectrum.eigenvalues[n] - exact) / exact);
    out.mode_l2_error.push_back(std::sqrt(std::min(plus[n], minus[n]) * dx));
  }
  return out;
}

}  // namespace gsm
