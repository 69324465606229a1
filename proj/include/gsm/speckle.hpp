#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "gsm/errors.hpp"
#include "gsm/hermite.hpp"
#include "gsm/jackknife.hpp"
#include "gsm/modal_decomp.hpp"
#include "gsm/parallel.hpp"
#include "gsm/philox.hpp"
#include "gsm/schell_model.hpp"

namespace gsm {

using cplx = std::complex<double>;

inline constexpr double kCutoffTolerance = 1e-6;

/// Smallest n with lambda_n / lambda_0 < tol.
inline unsigned recommended_cutoff(double beta, double tol = kCutoffTolerance) {
  const double q = eigenvalue_ratio_q(beta);
  return static_cast<unsigned>(std::floor(std::log(tol) / std::log(q))) + 1;
}

struct EnsembleConfig {
  std::size_t realizations = 1;
  unsigned mode_cutoff = 1;  // synthesis modes per axis
  std::uint64_t seed = 0;
  GridSpec grid;

  void validate(const SchellModel& model, Warnings* warnings = nullptr) const {
    if (realizations < 1) throw std::invalid_argument("EnsembleConfig: realizations must be >= 1");
    if (mode_cutoff < 1) throw std::invalid_argument("EnsembleConfig: mode_cutoff must be >= 1");
    if (mode_cutoff > kMaxHermiteOrder + 1) throw HermiteOrderError("EnsembleConfig: mode_cutoff exceeds supported order");
    grid.validate();
    const double tail = eigenvalue_ratio(model.beta(), mode_cutoff);
    if (warnings && tail >= kCutoffTolerance)
      warnings->push_back("mode_cutoff " + std::to_string(mode_cutoff) + " leaves lambda_cutoff/lambda_0 = " +
                          std::to_string(tail) + " >= " + std::to_string(kCutoffTolerance));
  }
};

enum class FieldDims { one = 1, two = 2 };

/// One frozen speckle field. `modal` holds e_n (1D) or e_{mn} at m*cutoff + n (2D);
/// `amplitudes` holds E on the grid (row index x, column index y for 2D).
struct FieldRealization {
  std::size_t index = 0;
  FieldDims dims = FieldDims::one;
  unsigned cutoff = 0;
  GridSpec grid;
  std::vector<cplx> modal;
  std::vector<cplx> amplitudes;

  cplx at(std::size_t i) const { return amplitudes.at(i); }
  cplx at(std::size_t i, std::size_t j) const { return amplitudes.at(i * grid.points + j); }
};

/// Pseudothermal ensemble synthesised from the coherent-mode expansion,
///   E(x) = sum_{n<cutoff} sqrt(lambda_n) c_n phi_n(x),
/// with c_n circular complex Gaussians drawn from a Philox stream keyed by
/// (seed, realization, m, n). Any coefficient of any realization can be produced
/// independently, so consumers only pay for the modes they project onto.
class Ensemble {
 public:
  Ensemble(const SchellModel& model, const EnsembleConfig& config, FieldDims dims, Warnings* warnings = nullptr)
      : model_(model), config_(config), dims_(dims), kernel_(derive_kernel_params(model)) {
    config.validate(model, warnings);
    sqrt_lambda_.resize(config.mode_cutoff);
    for (unsigned n = 0; n < config.mode_cutoff; ++n)
      sqrt_lambda_[n] = std::sqrt(eigenvalue(kernel_, model.amplitude(), n));
    inv_sqrt_amplitude_ = 1.0 / std::sqrt(model.amplitude());
  }

  const SchellModel& model() const { return model_; }
  const EnsembleConfig& config() const { return config_; }
  FieldDims dims() const { return dims_; }
  const KernelParams& kernel() const { return kernel_; }
  std::size_t size() const { return config_.realizations; }
  unsigned cutoff() const { return config_.mode_cutoff; }

  /// Modal amplitude e_{mn} of realization i; zero beyond the cutoff (and for n > 0 in 1D).
  cplx coefficient(std::size_t i, unsigned m, unsigned n = 0) const {
    if (m >= cutoff() || n >= cutoff()) return {0.0, 0.0};
    if (dims_ == FieldDims::one && n != 0) return {0.0, 0.0};
    const double weight = dims_ == FieldDims::one ? sqrt_lambda_[m] : sqrt_lambda_[m] * sqrt_lambda_[n] * inv_sqrt_amplitude_;
    return weight * circular_gaussian(config_.seed, i, m, n);
  }

  /// Field value at x (1D) or (x, y) (2D) of realization i.
  cplx evaluate(std::size_t i, double x, double y = 0.0) const {
    std::vector<double> px(cutoff()), py(cutoff());
    hg_modes(kernel_.c, x, px);
    hg_modes(kernel_.c, y, py);
    cplx e{0.0, 0.0};
    for (unsigned m = 0; m < cutoff(); ++m) {
      if (dims_ == FieldDims::one) {
        e += coefficient(i, m) * px[m];
        continue;
      }
      cplx row{0.0, 0.0};
      for (unsigned n = 0; n < cutoff(); ++n) row += coefficient(i, m, n) * py[n];
      e += row * px[m];
    }
    return e;
  }

  FieldRealization realization(std::size_t i) const {
    if (i >= size()) throw std::out_of_range("Ensemble: realization index out of range");
    const GridSpec& g = config_.grid;
    const unsigned nc = cutoff();
    FieldRealization f{i, dims_, nc, g, {}, {}};

    Eigen::MatrixXd phi(static_cast<Eigen::Index>(g.points), nc);
    std::vector<double> row(nc);
    for (std::size_t p = 0; p < g.points; ++p) {
      hg_modes(kernel_.c, g.x(p), row);
      for (unsigned n = 0; n < nc; ++n) phi(static_cast<Eigen::Index>(p), n) = row[n];
    }

    if (dims_ == FieldDims::one) {
      Eigen::VectorXcd coeff(nc);
      for (unsigned n = 0; n < nc; ++n) {
        coeff(n) = coefficient(i, n);
        f.modal.push_back(coeff(n));
      }
      const Eigen::VectorXcd e = phi.cast<cplx>() * coeff;
      f.amplitudes.assign(e.data(), e.data() + e.size());
      return f;
    }

    Eigen::MatrixXcd coeff(nc, nc);
    for (unsigned m = 0; m < nc; ++m)
      for (unsigned n = 0; n < nc; ++n) {
        coeff(m, n) = coefficient(i, m, n);
        f.modal.push_back(coeff(m, n));
      }
    const Eigen::MatrixXcd phic = phi.cast<cplx>();
    const Eigen::MatrixXcd e = phic * coeff * phic.transpose();
    f.amplitudes.resize(g.points * g.points);
    for (std::size_t a = 0; a < g.points; ++a)
      for (std::size_t b = 0; b < g.points; ++b)
        f.amplitudes[a * g.points + b] = e(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
    return f;
  }

 private:
  SchellModel model_;
  EnsembleConfig config_;
  FieldDims dims_;
  KernelParams kernel_;
  std::vector<double> sqrt_lambda_;
  double inv_sqrt_amplitude_ = 1.0;
};

inline FieldRealization sample_field(const SchellModel& model, const EnsembleConfig& config, std::size_t index,
                                     FieldDims dims = FieldDims::one, Warnings* warnings = nullptr) {
  return Ensemble(model, config, dims, warnings).realization(index);
}

/// Field values of every realization at a set of probe points (x axis, y = 0 in 2D).
struct PointSamples {
  std::vector<double> points;
  std::size_t realizations = 0;
  std::vector<cplx> values;  // realization-major

  cplx value(std::size_t r, std::size_t p) const { return values[r * points.size() + p]; }
};

inline PointSamples sample_points(const Ensemble& ensemble, std::span<const double> xs, unsigned threads = 1,
                                  std::size_t realizations = 0) {
  const std::size_t count = realizations ? std::min(realizations, ensemble.size()) : ensemble.size();
  const unsigned nc = ensemble.cutoff();
  const std::size_t np = xs.size();
  std::vector<double> phi(np * nc);
  for (std::size_t p = 0; p < np; ++p)
    hg_modes(ensemble.kernel().c, xs[p], std::span<double>(phi.data() + p * nc, nc));
  std::vector<double> phi_y0(nc);
  hg_modes(ensemble.kernel().c, 0.0, phi_y0);

  PointSamples out{{xs.begin(), xs.end()}, count, std::vector<cplx>(count * np)};
  parallel_for(count, threads, [&](std::size_t begin, std::size_t end) {
    std::vector<cplx> e(nc);
    for (std::size_t r = begin; r < end; ++r) {
      for (unsigned m = 0; m < nc; ++m) {
        if (ensemble.dims() == FieldDims::one) {
          e[m] = ensemble.coefficient(r, m);
          continue;
        }
        cplx s{0.0, 0.0};
        for (unsigned n = 0; n < nc; ++n) s += ensemble.coefficient(r, m, n) * phi_y0[n];
        e[m] = s;
      }
      for (std::size_t p = 0; p < np; ++p) {
        cplx s{0.0, 0.0};
        for (unsigned m = 0; m < nc; ++m) s += e[m] * phi[p * nc + m];
        out.values[r * np + p] = s;
      }
    }
  });
  return out;
}

struct G1Estimate {
  cplx value;
  double std_error_real = 0.0;
  double std_error_imag = 0.0;
};

/// Sample mean of E*(x1) E(x2) over the ensemble, with jackknife errors.
inline G1Estimate estimate_g1(const PointSamples& s, std::size_t p1, std::size_t p2) {
  if (s.realizations < 2) throw InsufficientSamplesError("estimate_g1: at least 2 realizations required");
  std::vector<std::vector<double>> cols(2, std::vector<double>(s.realizations));
  for (std::size_t r = 0; r < s.realizations; ++r) {
    const cplx v = std::conj(s.value(r, p1)) * s.value(r, p2);
    cols[0][r] = v.real();
    cols[1][r] = v.imag();
  }
  const std::span<const std::vector<double>> all(cols);
  const Estimate re = jackknife(all, [](std::span<const double> m) { return m[0]; });
  const Estimate im = jackknife(all, [](std::span<const double> m) { return m[1]; });
  return {{re.value, im.value}, re.std_error, im.std_error};
}

inline G1Estimate estimate_g1(const Ensemble& ensemble, double x1, double x2, unsigned threads = 1) {
  const std::array<double, 2> xs{x1, x2};
  return estimate_g1(sample_points(ensemble, xs, threads), 0, 1);
}

struct SiegertReport {
  double lhs = 0.0;  // <I1 I2>
  double rhs = 0.0;  // <I1><I2> + |G1|²
  double discrepancy_std_error = 0.0;
  double discrepancy_sigmas = 0.0;  // |lhs - rhs| / std error
  Estimate g2;                      // <I1 I2> / (<I1><I2>)
  bool violated = false;            // discrepancy beyond the threshold
};

inline constexpr double kSiegertThresholdSigmas = 5.0;
inline constexpr std::size_t kSiegertMinRealizations = 100;

/// Estimates both sides of the Siegert relation independently from one ensemble.
inline SiegertReport verify_siegert(const PointSamples& s, std::size_t p1, std::size_t p2,
                                    double threshold_sigmas = kSiegertThresholdSigmas) {
  if (s.realizations < kSiegertMinRealizations)
    throw InsufficientSamplesError("verify_siegert: at least 100 realizations required");
  std::vector<std::vector<double>> cols(5, std::vector<double>(s.realizations));
  for (std::size_t r = 0; r < s.realizations; ++r) {
    const cplx e1 = s.value(r, p1), e2 = s.value(r, p2);
    const double i1 = std::norm(e1), i2 = std::norm(e2);
    const cplx g = std::conj(e1) * e2;
    cols[0][r] = i1;
    cols[1][r] = i2;
    cols[2][r] = i1 * i2;
    cols[3][r] = g.real();
    cols[4][r] = g.imag();
  }
  const std::span<const std::vector<double>> all(cols);
  auto rhs_of = [](std::span<const double> m) { return m[0] * m[1] + m[3] * m[3] + m[4] * m[4]; };
  const Estimate diff = jackknife(all, [&](std::span<const double> m) { return m[2] - rhs_of(m); });
  const Estimate g2 = jackknife(all, [](std::span<const double> m) { return m[2] / (m[0] * m[1]); });

  SiegertReport rep;
  double sums[5] = {0, 0, 0, 0, 0};
  for (std::size_t j = 0; j < 5; ++j)
    for (double v : cols[j]) sums[j] += v;
  double means[5];
  for (std::size_t j = 0; j < 5; ++j) means[j] = sums[j] / static_cast<double>(s.realizations);
  rep.lhs = means[2];
  rep.rhs = rhs_of(means);
  rep.discrepancy_std_error = diff.std_error;
  rep.discrepancy_sigmas = diff.sigmas_from(0.0);
  rep.g2 = g2;
  rep.violated = !(rep.discrepancy_sigmas < threshold_sigmas);
  return rep;
}

}  // namespace gsm
