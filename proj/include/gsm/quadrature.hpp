#pragma once

#include <boost/math/quadrature/gauss.hpp>

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

namespace gsm {

inline constexpr unsigned kGaussPoints = 20;

/// Composite Gauss-Legendre rule on [lo, hi], split at `breaks` (integrand may jump
/// there) and subdivided into panels no wider than `panel_width`. Returns node/weight
/// pairs so several integrands can share one set of evaluations.
struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;

  static QuadratureRule composite(double lo, double hi, std::span<const double> breaks, double panel_width) {
    using Gauss = boost::math::quadrature::gauss<double, kGaussPoints>;
    std::vector<double> edges{lo};
    for (double b : breaks)
      if (b > lo && b < hi) edges.push_back(b);
    edges.push_back(hi);
    std::sort(edges.begin(), edges.end());

    // boost stores the non-negative abscissae of the symmetric rule only.
    std::vector<double> x, w;
    const auto& abscissa = Gauss::abscissa();
    const auto& weight = Gauss::weights();
    for (std::size_t i = 0; i < abscissa.size(); ++i) {
      if (abscissa[i] == 0.0) {
        x.push_back(0.0);
        w.push_back(weight[i]);
        continue;
      }
      x.push_back(abscissa[i]);
      w.push_back(weight[i]);
      x.push_back(-abscissa[i]);
      w.push_back(weight[i]);
    }

    QuadratureRule rule;
    for (std::size_t s = 0; s + 1 < edges.size(); ++s) {
      const double a = edges[s], b = edges[s + 1];
      if (!(b > a)) continue;
      const auto panels = static_cast<std::size_t>(std::max(1.0, std::ceil((b - a) / panel_width)));
      const double h = (b - a) / static_cast<double>(panels);
      for (std::size_t p = 0; p < panels; ++p) {
        const double mid = a + (static_cast<double>(p) + 0.5) * h;
        for (std::size_t i = 0; i < x.size(); ++i) {
          rule.nodes.push_back(mid + 0.5 * h * x[i]);
          rule.weights.push_back(0.5 * h * w[i]);
        }
      }
    }
    return rule;
  }
};

}  // namespace gsm
