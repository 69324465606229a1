#pragma once

#include <cmath>
#include <cstdio>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gsm/errors.hpp"
#include "gsm/filters.hpp"
#include "gsm/hbt.hpp"
#include "gsm/metrics.hpp"
#include "gsm/modal_decomp.hpp"
#include "gsm/mode_spectrum.hpp"

// CSV: comma separated, header row, LF line endings. Reals use 17 significant digits
// so every binary64 value round-trips and reruns are byte-identical.

namespace gsm::io {

inline std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Writers

inline void write_spectrum_csv(std::ostream& os, const ModeSpectrum& s,
                               const std::map<ModeIndex, double>* std_error = nullptr) {
  const double l00 = s.at({0, 0});
  os << "m,n,eigenvalue,relative_to_lambda0";
  if (std_error) os << ",std_error";
  os << '\n';
  for (const auto& [idx, v] : s.eigenvalues) {
    os << idx.m << ',' << idx.n << ',' << fmt(v) << ',' << fmt(v / l00);
    if (std_error) os << ',' << fmt(std_error->count(idx) ? std_error->at(idx) : 0.0);
    os << '\n';
  }
}

inline void write_numerical_spectrum_csv(std::ostream& os, const NumericalSpectrum& s) {
  os << "index,eigenvalue,relative_to_lambda0\n";
  for (std::size_t n = 0; n < s.eigenvalues.size(); ++n)
    os << n << ',' << fmt(s.eigenvalues[n]) << ',' << fmt(s.eigenvalues[n] / s.eigenvalues[0]) << '\n';
}

inline void write_mode_samples_csv(std::ostream& os, const NumericalSpectrum& s) {
  os << 'x';
  for (std::size_t n = 0; n < s.eigenvectors.size(); ++n) os << ",phi_" << n;
  os << '\n';
  for (std::size_t i = 0; i < s.grid.points; ++i) {
    os << fmt(s.grid.x(i));
    for (const auto& v : s.eigenvectors) os << ',' << fmt(v[i]);
    os << '\n';
  }
}

inline void write_comparison_csv(std::ostream& os, const ModeComparison& c) {
  os << "index,eigenvalue_rel_error,mode_l2_error\n";
  for (std::size_t n = 0; n < c.eigenvalue_rel_error.size(); ++n)
    os << n << ',' << fmt(c.eigenvalue_rel_error[n]) << ',' << fmt(c.mode_l2_error[n]) << '\n';
}

inline void write_g2_csv(std::ostream& os, const G2Matrix& g) {
  os << "row,col,arm1,arm2,order,g2,std_error\n";
  for (const auto& [key, e] : g.values)
    os << key.first << ',' << key.second << ',' << describe(g.arm1[key.first]) << ',' << describe(g.arm2[key.second])
       << ',' << g.order(key.first, key.second) << ',' << fmt(e.value) << ',' << fmt(e.std_error) << '\n';
}

inline nlohmann::ordered_json g2_json(const G2Matrix& g) {
  nlohmann::ordered_json j;
  j["arm1"] = nlohmann::json::array();
  j["arm2"] = nlohmann::json::array();
  for (const auto& f : g.arm1) j["arm1"].push_back(describe(f));
  for (const auto& f : g.arm2) j["arm2"].push_back(describe(f));
  j["entries"] = nlohmann::json::array();
  for (const auto& [key, e] : g.values)
    j["entries"].push_back({{"row", key.first},
                            {"col", key.second},
                            {"order", g.order(key.first, key.second)},
                            {"g2", e.value},
                            {"std_error", e.std_error},
                            {"excess", e.value - g2_ideal(target_index(g.arm1[key.first]), target_index(g.arm2[key.second]))}});
  return j;
}

struct ScanPoint {
  double displacement;
  double g2_analytic;
  std::optional<Estimate> g2_mc;
};

inline void write_scan_csv(std::ostream& os, const std::vector<ScanPoint>& pts) {
  os << "r_f,g2_analytic,g2_mc,std_error\n";
  for (const auto& p : pts) {
    os << fmt(p.displacement) << ',' << fmt(p.g2_analytic) << ',';
    if (p.g2_mc) os << fmt(p.g2_mc->value) << ',' << fmt(p.g2_mc->std_error);
    else os << ',';
    os << '\n';
  }
}

inline void write_report_csv(std::ostream& os, const ComparisonReport& r) {
  os << "order,fidelity,distance\n";
  for (std::size_t i = 0; i < r.fidelity_curve.size(); ++i) {
    os << r.fidelity_curve[i].first << ',' << fmt(r.fidelity_curve[i].second) << ',';
    if (i < r.distance_curve.size()) os << fmt(r.distance_curve[i].second);
    os << '\n';
  }
}

inline nlohmann::ordered_json report_json(const ComparisonReport& r) {
  nlohmann::ordered_json j;
  j["fidelity"] = r.fidelity;
  j["distance"] = r.distance;
  j["max_order_used"] = {r.max_order_used.first, r.max_order_used.second};
  j["fidelity_curve"] = nlohmann::json::array();
  for (const auto& [o, f] : r.fidelity_curve) j["fidelity_curve"].push_back({{"order", o}, {"fidelity", f}});
  j["distance_curve"] = nlohmann::json::array();
  for (const auto& [o, d] : r.distance_curve) j["distance_curve"].push_back({{"order", o}, {"distance", d}});
  return j;
}

/// Step positions are stored in units of 1/sqrt(2c), the natural Hermite coordinate.
inline nlohmann::ordered_json mask_json(const StepPhaseMask& mask, double c) {
  const double unit = 1.0 / std::sqrt(2.0 * c);
  nlohmann::ordered_json j;
  j["index"] = {mask.index.m, mask.index.n};
  j["unit"] = "1/sqrt(2c)";
  j["c"] = c;
  j["axes"] = nlohmann::json::array();
  const char* names[2] = {"x", "y"};
  for (int a = 0; a < 2; ++a) {
    std::vector<double> scaled;
    for (double s : mask.steps[a]) scaled.push_back(s / unit);
    j["axes"].push_back({{"axis", names[a]}, {"steps", scaled}});
  }
  return j;
}

inline StepPhaseMask mask_from_json(const nlohmann::json& j) {
  const double unit = 1.0 / std::sqrt(2.0 * j.at("c").get<double>());
  StepPhaseMask mask{{j.at("index").at(0).get<unsigned>(), j.at("index").at(1).get<unsigned>()}, {}};
  for (const auto& axis : j.at("axes")) {
    const int a = axis.at("axis").get<std::string>() == "x" ? 0 : 1;
    for (double s : axis.at("steps")) mask.steps[a].push_back(s * unit);
  }
  validate(mask);
  return mask;
}

// ---------------------------------------------------------------------------
// Readers

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline double parse_real(const std::string& s, std::size_t line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw FormatError("invalid number '" + s + "'", line);
  }
}

inline unsigned parse_index(const std::string& s, std::size_t line) {
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos)
    throw FormatError("invalid index '" + s + "'", line);
  return static_cast<unsigned>(std::stoul(s));
}

inline std::vector<std::string> read_header(std::istream& is, const std::vector<std::string>& required) {
  std::string line;
  if (!std::getline(is, line)) throw FormatError("empty file", 1);
  auto cols = split_csv(line);
  for (std::size_t i = 0; i < required.size(); ++i)
    if (i >= cols.size() || cols[i] != required[i])
      throw FormatError("header must start with column '" + required[i] + "'", 1);
  return cols;
}

}  // namespace detail

/// Reads the (m, n, eigenvalue, ...) spectrum format. Extra columns are ignored.
inline ModeSpectrum read_spectrum_csv(std::istream& is) {
  const auto header = detail::read_header(is, {"m", "n", "eigenvalue"});
  ModeSpectrum s;
  std::string line;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = detail::split_csv(line);
    if (cells.size() != header.size())
      throw FormatError("expected " + std::to_string(header.size()) + " columns, got " + std::to_string(cells.size()),
                        lineno);
    const ModeIndex idx{detail::parse_index(cells[0], lineno), detail::parse_index(cells[1], lineno)};
    const double v = detail::parse_real(cells[2], lineno);
    if (!(v >= 0.0) || !std::isfinite(v)) throw FormatError("eigenvalue must be finite and non-negative", lineno);
    if (!s.eigenvalues.emplace(idx, v).second) throw FormatError("duplicate index " + to_string(idx), lineno);
  }
  if (s.eigenvalues.empty()) throw FormatError("no data rows", lineno);
  return s;
}

inline ModeFilter parse_filter_label(const std::string& label, std::size_t line = 0) {
  std::vector<std::string> parts;
  std::string part;
  std::istringstream ss(label);
  while (std::getline(ss, part, ':')) parts.push_back(part);
  if (parts.size() != 3) throw FormatError("invalid filter label '" + label + "'", line);
  if (parts[0] == "ideal")
    return IdealProjector{{detail::parse_index(parts[1], line), detail::parse_index(parts[2], line)}};
  if (parts[0] == "step")
    return StepPhaseMask{{detail::parse_index(parts[1], line), detail::parse_index(parts[2], line)}, {}};
  if (parts[0] == "bucket")
    return GaussianBucket{{detail::parse_real(parts[1], line), detail::parse_real(parts[2], line)}};
  throw FormatError("unknown filter kind '" + parts[0] + "'", line);
}

/// Reads the g² matrix CSV. Step masks come back without their step positions.
inline G2Matrix read_g2_csv(std::istream& is) {
  detail::read_header(is, {"row", "col", "arm1", "arm2", "order", "g2", "std_error"});
  G2Matrix g;
  std::map<std::size_t, ModeFilter> arm1, arm2;
  std::string line;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = detail::split_csv(line);
    if (cells.size() != 7) throw FormatError("expected 7 columns, got " + std::to_string(cells.size()), lineno);
    const std::size_t row = detail::parse_index(cells[0], lineno);
    const std::size_t col = detail::parse_index(cells[1], lineno);
    arm1.insert_or_assign(row, parse_filter_label(cells[2], lineno));
    arm2.insert_or_assign(col, parse_filter_label(cells[3], lineno));
    const Estimate e{detail::parse_real(cells[5], lineno), detail::parse_real(cells[6], lineno)};
    if (!g.values.emplace(std::pair{row, col}, e).second) throw FormatError("duplicate entry", lineno);
  }
  if (g.values.empty()) throw FormatError("no data rows", lineno);
  for (std::size_t i = 0; i < arm1.size(); ++i) {
    if (!arm1.count(i)) throw FormatError("arm1 filter indices are not contiguous");
    g.arm1.push_back(arm1.at(i));
  }
  for (std::size_t i = 0; i < arm2.size(); ++i) {
    if (!arm2.count(i)) throw FormatError("arm2 filter indices are not contiguous");
    g.arm2.push_back(arm2.at(i));
  }
  return g;
}

}  // namespace gsm::io
