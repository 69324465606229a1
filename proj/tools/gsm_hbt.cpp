// gsm-hbt: command-line driver for the Gaussian Schell-model mode decomposition and
// the simulated mode-filtered HBT interferometer.

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "gsm.hpp"
#include "gsm/ensemble_io.hpp"
#include "gsm/export.hpp"

extern char** environ;

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

enum ExitCode : int {
  kOk = 0,
  kInternal = 1,
  kConfigError = 2,
  kNumericalError = 3,
  kInputFormatError = 4,
  kOutputError = 5,
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct OutputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

constexpr const char* kEnvPrefix = "GSM_";
constexpr const char* kManifestFormat = "gsm-hbt-manifest";

// ---------------------------------------------------------------------------
// Configuration

// Every accepted key with its default. null marks keys without a default.
json config_schema() {
  return json::parse(R"({
    "model": {"sigma_I": null, "beta": null, "sigma_mu": null, "wavelength": null, "amplitude": 1.0},
    "grid": {"sigmas": 5.0, "points": 512},
    "ensemble": {"realizations": 100000, "mode_cutoff": 0, "seed": 0, "dims": 2, "dump_realizations": 16,
                 "dump_dtype": "complex128"},
    "optics": {"fiber_waist": 3.69e-6, "focal_length": 0.0, "allow_mismatch": false},
    "filters": {"arm1": [], "arm2": [], "max_order": 4, "calibrate": true},
    "spectrum": {"max_order": 8, "numerical_modes": 10, "mode_samples": 5, "monte_carlo_max_order": 8},
    "scan": {"m": 0, "n": 0, "r_min": -1.0e-3, "r_max": 1.0e-3, "points": 101, "c_det_ratio": 1.0,
             "monte_carlo": false},
    "report": {"experimental": "", "theory": "", "g2_experimental": "", "g2_theory": "", "max_order": 8},
    "output": {"dir": "out", "format": "csv"}
  })");
}

std::string line_col(const std::string& text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return std::to_string(line) + ":" + std::to_string(col);
}

bool compatible(const json& schema_value, const json& v) {
  if (schema_value.is_null()) return v.is_number() || v.is_null();
  if (schema_value.is_number_float()) return v.is_number();
  if (schema_value.is_number()) return v.is_number_integer() || v.is_number_unsigned();
  if (schema_value.is_boolean()) return v.is_boolean();
  if (schema_value.is_string()) return v.is_string();
  if (schema_value.is_array()) return v.is_array();
  return false;
}

void merge_into(json& target, const json& schema, const json& source, const std::string& prefix, const std::string& origin) {
  if (!source.is_object()) throw ConfigError(origin + ": '" + prefix + "' must be an object");
  for (const auto& [key, value] : source.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!schema.contains(key)) throw ConfigError(origin + ": unknown config key '" + path + "'");
    if (schema[key].is_object()) {
      merge_into(target[key], schema[key], value, path, origin);
      continue;
    }
    if (!compatible(schema[key], value))
      throw ConfigError(origin + ": config key '" + path + "' has the wrong type (" + value.type_name() + ")");
    target[key] = value;
  }
}

json read_config_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  json j;
  try {
    j = json::parse(text, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ":" + line_col(text, e.byte) + ": syntax error: " + e.what());
  }
  // A run manifest carries its resolved config and can be replayed directly.
  if (j.is_object() && j.value("format", "") == kManifestFormat) return j.at("config");
  return j;
}

// GSM_MODEL__BETA=0.3 sets model.beta. Values are parsed as JSON, falling back to a string.
void apply_environment(json& config, const json& schema) {
  const std::string prefix = kEnvPrefix;
  std::vector<std::pair<std::string, std::string>> vars;
  for (char** e = environ; *e; ++e) {
    const std::string entry = *e;
    if (entry.rfind(prefix, 0) != 0) continue;
    const auto eq = entry.find('=');
    vars.emplace_back(entry.substr(prefix.size(), eq - prefix.size()), entry.substr(eq + 1));
  }
  std::sort(vars.begin(), vars.end());
  for (const auto& [name, raw] : vars) {
    std::vector<std::string> parts;
    std::string lowered;
    for (char ch : name) lowered += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    std::size_t start = 0;
    while (true) {
      const auto sep = lowered.find("__", start);
      parts.push_back(lowered.substr(start, sep - start));
      if (sep == std::string::npos) break;
      start = sep + 2;
    }
    json value;
    try {
      value = json::parse(raw);
    } catch (const json::parse_error&) {
      value = raw;
    }
    json patch = value;
    for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = json{{*it, patch}};
    merge_into(config, schema, patch, "", "environment " + prefix + name);
  }
}

struct RunConfig {
  json resolved;
  std::optional<gsm::SchellModel> model;
  gsm::GridSpec grid;
  gsm::EnsembleConfig ensemble;
  gsm::FieldDims dims = gsm::FieldDims::two;
  std::optional<gsm::DetectionOptics> optics;
  bool allow_mismatch = false;
  fs::path out_dir;
  bool csv = true;
  bool json_out = false;
  unsigned threads = 1;
};

double number_at(const json& section, const char* key, const std::string& path) {
  const json& v = section.at(key);
  if (v.is_null()) throw ConfigError("missing required config key '" + path + "'");
  return v.get<double>();
}

void require_positive(double v, const std::string& path) {
  if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError("config key '" + path + "' must be finite and positive");
}

gsm::SchellModel build_model(const json& m) {
  const double sigma_I = number_at(m, "sigma_I", "model.sigma_I");
  const double wavelength = number_at(m, "wavelength", "model.wavelength");
  const double amplitude = m.at("amplitude").get<double>();
  require_positive(sigma_I, "model.sigma_I");
  require_positive(wavelength, "model.wavelength");
  require_positive(amplitude, "model.amplitude");
  const bool has_beta = !m.at("beta").is_null(), has_mu = !m.at("sigma_mu").is_null();
  if (has_beta && has_mu) throw ConfigError("config keys 'model.beta' and 'model.sigma_mu' are mutually exclusive");
  if (!has_beta && !has_mu) throw ConfigError("missing required config key 'model.beta' (or 'model.sigma_mu')");
  if (has_beta) {
    const double beta = m.at("beta").get<double>();
    require_positive(beta, "model.beta");
    return gsm::SchellModel::from_beta(sigma_I, beta, wavelength, amplitude);
  }
  const double sigma_mu = m.at("sigma_mu").get<double>();
  require_positive(sigma_mu, "model.sigma_mu");
  return gsm::SchellModel(sigma_I, sigma_mu, wavelength, amplitude);
}

struct CommonFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  unsigned threads = 1;
  std::optional<std::string> format;
};

RunConfig resolve_config(const CommonFlags& flags, bool need_model) {
  const json schema = config_schema();
  json config = schema;
  if (!flags.config_path.empty()) merge_into(config, schema, read_config_file(flags.config_path), "", flags.config_path);
  apply_environment(config, schema);
  if (flags.seed) config["ensemble"]["seed"] = *flags.seed;
  if (flags.out) config["output"]["dir"] = *flags.out;
  if (flags.format) config["output"]["format"] = *flags.format;

  RunConfig rc;
  rc.resolved = config;
  rc.threads = std::max(1u, flags.threads);

  const std::string format = config["output"]["format"];
  if (format != "csv" && format != "json" && format != "both")
    throw ConfigError("config key 'output.format' must be one of csv, json, both");
  rc.csv = format != "json";
  rc.json_out = format != "csv";
  rc.out_dir = config["output"]["dir"].get<std::string>();
  if (rc.out_dir.empty()) throw ConfigError("config key 'output.dir' must not be empty");

  const json& e = config["ensemble"];
  const json& g = config["grid"];
  const json& o = config["optics"];
  for (const char* key : {"realizations", "seed", "dump_realizations", "mode_cutoff"})
    if (e.at(key).get<double>() < 0) throw ConfigError(std::string("config key 'ensemble.") + key + "' must be >= 0");
  const int dims = e.at("dims").get<int>();
  if (dims != 1 && dims != 2) throw ConfigError("config key 'ensemble.dims' must be 1 or 2");
  rc.dims = dims == 1 ? gsm::FieldDims::one : gsm::FieldDims::two;
  const std::string dtype = e.at("dump_dtype");
  if (dtype != "complex64" && dtype != "complex128")
    throw ConfigError("config key 'ensemble.dump_dtype' must be complex64 or complex128");
  if (g.at("points").get<long long>() < 16) throw ConfigError("config key 'grid.points' must be >= 16");
  require_positive(g.at("sigmas").get<double>(), "grid.sigmas");

  if (!need_model) return rc;
  rc.model = build_model(config["model"]);
  rc.grid = gsm::GridSpec::for_model(*rc.model, g.at("sigmas").get<double>(), g.at("points").get<std::size_t>());
  rc.ensemble.realizations = e.at("realizations").get<std::size_t>();
  if (rc.ensemble.realizations < 1) throw ConfigError("config key 'ensemble.realizations' must be >= 1");
  const unsigned cutoff = e.at("mode_cutoff").get<unsigned>();
  rc.ensemble.mode_cutoff = cutoff ? cutoff : gsm::recommended_cutoff(rc.model->beta());
  if (rc.ensemble.mode_cutoff > gsm::kMaxHermiteOrder + 1)
    throw ConfigError("config key 'ensemble.mode_cutoff' exceeds the supported order " +
                      std::to_string(gsm::kMaxHermiteOrder + 1) + "; increase beta or set the cutoff explicitly");
  rc.ensemble.seed = e.at("seed").get<std::uint64_t>();
  rc.ensemble.grid = rc.grid;

  const double waist = o.at("fiber_waist").get<double>();
  require_positive(waist, "optics.fiber_waist");
  const double f = o.at("focal_length").get<double>();
  if (f < 0.0) throw ConfigError("config key 'optics.focal_length' must be >= 0 (0 selects the matched value)");
  rc.optics = f > 0.0 ? gsm::DetectionOptics(waist, f, rc.model->wavenumber()) : gsm::matched_optics(*rc.model, waist);
  rc.allow_mismatch = o.at("allow_mismatch").get<bool>();
  return rc;
}

// ---------------------------------------------------------------------------
// Output handling

std::string sha256_hex(const std::string& data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw OutputError("SHA-256 computation failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw gsm::FormatError("cannot open " + p.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_atomic(const fs::path& path, const std::string& content) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw OutputError("cannot write " + tmp.string());
    out << content;
    if (!out.flush()) throw OutputError("cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

/// Exclusive per-directory lock, released on destruction.
class DirectoryLock {
 public:
  explicit DirectoryLock(const fs::path& dir) : path_(dir / ".gsm-hbt.lock") {
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0)
      throw OutputError("output directory " + dir.string() + " is locked by another run (" + path_.string() +
                        "); remove the file if no run is active");
    const std::string pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
    ::close(fd);
  }
  ~DirectoryLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;

 private:
  fs::path path_;
};

/// Results are staged in memory (or in a temporary file for binary dumps) and only
/// published once the whole command has succeeded.
class RunOutputs {
 public:
  RunOutputs(std::string command, const RunConfig& rc) : command_(std::move(command)), rc_(rc) {}

  void add(const std::string& name, std::string content) { files_[name] = std::move(content); }
  void add_json(const std::string& name, const json& j) { add(name, j.dump(2) + "\n"); }
  void add_staged(const std::string& name, const fs::path& staged) { staged_[name] = staged; }
  void add_input(const fs::path& p) { inputs_.push_back({{"path", p.string()}, {"sha256", sha256_hex(read_file(p))}}); }
  void warn(const std::string& w) {
    std::cerr << "warning: " << w << "\n";
    warnings_.push_back(w);
  }
  void warn_all(const gsm::Warnings& ws) {
    for (const auto& w : ws) warn(w);
  }

  void publish() {
    json outputs = json::array();
    for (const auto& [name, content] : files_) {
      write_atomic(rc_.out_dir / name, content);
      outputs.push_back({{"file", name}, {"bytes", content.size()}, {"sha256", sha256_hex(content)}});
    }
    for (const auto& [name, staged] : staged_) {
      fs::rename(staged, rc_.out_dir / name);
      const std::string content = read_file(rc_.out_dir / name);
      outputs.push_back({{"file", name}, {"bytes", content.size()}, {"sha256", sha256_hex(content)}});
    }
    json m;
    m["format"] = kManifestFormat;
    m["tool"] = "gsm-hbt";
    m["version"] = GSM_VERSION;
    m["command"] = command_;
    m["seed"] = rc_.resolved["ensemble"]["seed"];
    m["threads"] = rc_.threads;
    m["config"] = rc_.resolved;
    m["inputs"] = inputs_;
    m["outputs"] = outputs;
    m["warnings"] = warnings_;
    write_atomic(rc_.out_dir / "manifest.json", m.dump(2) + "\n");
  }

 private:
  std::string command_;
  const RunConfig& rc_;
  std::map<std::string, std::string> files_;
  std::map<std::string, fs::path> staged_;
  json inputs_ = json::array();
  json warnings_ = json::array();
};

template <class Writer>
std::string to_text(Writer&& w) {
  std::ostringstream os;
  w(os);
  return os.str();
}

json spectrum_to_json(const gsm::ModeSpectrum& s, const std::map<gsm::ModeIndex, double>* err = nullptr) {
  json rows = json::array();
  const double l00 = s.at({0, 0});
  for (const auto& [idx, v] : s.eigenvalues) {
    json r{{"m", idx.m}, {"n", idx.n}, {"eigenvalue", v}, {"relative_to_lambda0", v / l00}};
    if (err) r["std_error"] = err->count(idx) ? err->at(idx) : 0.0;
    rows.push_back(r);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Filters

std::vector<gsm::ModeFilter> build_arm(const json& labels, unsigned max_order, double c, bool calibrate,
                                       std::map<std::string, json>& masks, const std::string& arm) {
  std::vector<gsm::ModeFilter> out;
  if (labels.empty()) return gsm::ideal_filters(max_order);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const std::string path = "filters." + arm + "[" + std::to_string(i) + "]";
    if (!labels[i].is_string()) throw ConfigError("config key '" + path + "' must be a filter label string");
    gsm::ModeFilter f;
    try {
      f = gsm::io::parse_filter_label(labels[i].get<std::string>());
    } catch (const gsm::FormatError& e) {
      throw ConfigError("config key '" + path + "': " + e.what());
    }
    if (auto* mask = std::get_if<gsm::StepPhaseMask>(&f)) {
      gsm::StepPhaseMask m = gsm::default_step_mask(mask->index, c);
      if (calibrate) m = gsm::calibrate_mask(m, c).mask;
      masks[gsm::describe(m)] = gsm::io::mask_json(m, c);
      f = m;
    }
    out.push_back(f);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Subcommands

struct SpectrumFlags {
  bool numerical = false;
  bool monte_carlo = false;
};

void cmd_spectrum(const RunConfig& rc, const SpectrumFlags& sf, RunOutputs& out) {
  const gsm::SchellModel& model = *rc.model;
  const json& sc = rc.resolved["spectrum"];
  const unsigned max_order = sc["max_order"].get<unsigned>();
  const gsm::ModeSpectrum th = gsm::analytic_spectrum_2d(model, max_order, gsm::Normalization::relative_to_lambda00);
  json summary{{"beta", model.beta()},
               {"c", gsm::derive_kernel_params(model).c},
               {"q", gsm::eigenvalue_ratio_q(model.beta())},
               {"max_order", max_order},
               {"schmidt_number_1d", gsm::schmidt_number(gsm::analytic_spectrum_1d(model, gsm::kMaxHermiteOrder))}};
  if (rc.csv) out.add("spectrum.csv", to_text([&](std::ostream& os) { gsm::io::write_spectrum_csv(os, th); }));
  if (rc.json_out) summary["spectrum"] = spectrum_to_json(th);

  if (sf.numerical) {
    gsm::Warnings w;
    const std::size_t count = sc["numerical_modes"].get<std::size_t>();
    if (count < 1 || count > rc.grid.points) throw ConfigError("config key 'spectrum.numerical_modes' must be in [1, grid.points]");
    const gsm::KernelMatrix k = gsm::discretize_kernel(model, rc.grid, &w, rc.threads);
    const gsm::NumericalSpectrum ns = gsm::eigendecompose(k, rc.grid, count);
    const gsm::ModeComparison cmp = gsm::compare_to_analytic(ns, model, count);
    out.warn_all(w);
    gsm::NumericalSpectrum shapes = ns;
    shapes.eigenvectors.resize(std::min<std::size_t>(count, sc["mode_samples"].get<std::size_t>()));
    if (rc.csv) {
      out.add("numerical_spectrum.csv", to_text([&](std::ostream& os) { gsm::io::write_numerical_spectrum_csv(os, ns); }));
      out.add("modes.csv", to_text([&](std::ostream& os) { gsm::io::write_mode_samples_csv(os, shapes); }));
      out.add("comparison.csv", to_text([&](std::ostream& os) { gsm::io::write_comparison_csv(os, cmp); }));
    }
    summary["numerical"] = {{"grid_points", rc.grid.points},
                            {"half_width", rc.grid.half_width},
                            {"modes", count},
                            {"max_eigenvalue_rel_error", cmp.max_eigenvalue_error()},
                            {"max_mode_l2_error", cmp.max_mode_error()},
                            {"eigenvalues", ns.eigenvalues},
                            {"eigenvalue_rel_error", cmp.eigenvalue_rel_error},
                            {"mode_l2_error", cmp.mode_l2_error}};
    std::cout << "numerical cross-check: max eigenvalue rel error " << gsm::io::fmt(cmp.max_eigenvalue_error())
              << ", max mode L2 error " << gsm::io::fmt(cmp.max_mode_error()) << "\n";
  }

  if (sf.monte_carlo) {
    gsm::Warnings w;
    const gsm::Ensemble ens(model, rc.ensemble, gsm::FieldDims::two, &w);
    out.warn_all(w);
    const unsigned mc_order = sc["monte_carlo_max_order"].get<unsigned>();
    const gsm::MeasuredSpectrum ms = gsm::measure_spectrum(ens, mc_order, rc.threads);
    const gsm::ModeSpectrum th_mc = gsm::analytic_spectrum_2d(model, mc_order, gsm::Normalization::relative_to_lambda00);
    const double f = gsm::fidelity_by_order(ms.spectrum, th_mc, mc_order);
    if (rc.csv)
      out.add("spectrum_mc.csv",
              to_text([&](std::ostream& os) { gsm::io::write_spectrum_csv(os, ms.spectrum, &ms.std_error); }));
    summary["monte_carlo"] = {{"realizations", ens.size()},
                              {"mode_cutoff", ens.cutoff()},
                              {"max_order", mc_order},
                              {"fidelity", f}};
    if (rc.json_out) summary["monte_carlo"]["spectrum"] = spectrum_to_json(ms.spectrum, &ms.std_error);
    std::cout << "monte carlo spectrum: fidelity " << gsm::io::fmt(f) << " over m+n <= " << mc_order << "\n";
  }
  out.add_json("spectrum.json", summary);
}

void cmd_hbt(const RunConfig& rc, bool dump_ensemble, RunOutputs& out) {
  const gsm::SchellModel& model = *rc.model;
  const double c = gsm::derive_kernel_params(model).c;
  const json& fc = rc.resolved["filters"];
  const unsigned max_order = fc["max_order"].get<unsigned>();
  const bool calibrate = fc["calibrate"].get<bool>();
  std::map<std::string, json> masks;
  const auto arm1 = build_arm(fc["arm1"], max_order, c, calibrate, masks, "arm1");
  const auto arm2 = build_arm(fc["arm2"], max_order, c, calibrate, masks, "arm2");

  gsm::Warnings w;
  const gsm::Ensemble ens(model, rc.ensemble, rc.dims, &w);
  gsm::HbtOptions opt;
  opt.allow_mismatch = rc.allow_mismatch;
  opt.threads = rc.threads;
  const gsm::G2Matrix g = gsm::g2_matrix_monte_carlo(ens, arm1, arm2, *rc.optics, opt, &w);
  out.warn_all(w);

  if (rc.csv) out.add("g2.csv", to_text([&](std::ostream& os) { gsm::io::write_g2_csv(os, g); }));
  if (rc.json_out) out.add_json("g2.json", gsm::io::g2_json(g));
  if (!masks.empty()) {
    json mj = json::object();
    for (const auto& [label, m] : masks) mj[label] = m;
    out.add_json("masks.json", mj);
  }

  const gsm::G2Matrix ideal = gsm::ideal_g2_matrix(arm1, arm2);
  json summary{{"realizations", ens.size()},
               {"mode_cutoff", ens.cutoff()},
               {"focal_length", rc.optics->focal_length},
               {"detection_c", rc.optics->detection_c()},
               {"c", c},
               {"distance_to_ideal", gsm::g2_distance(g, ideal)}};
  // Off-diagonal excess g² - 1 grouped by the higher target order of each pair.
  std::map<unsigned, std::pair<double, unsigned>> excess;
  for (const auto& [key, e] : g.values) {
    if (gsm::target_index(arm1[key.first]) == gsm::target_index(arm2[key.second])) continue;
    auto& [sum, count] = excess[g.order(key.first, key.second)];
    sum += e.value - 1.0;
    ++count;
  }
  summary["off_diagonal_excess"] = json::array();
  for (const auto& [order, sc] : excess)
    summary["off_diagonal_excess"].push_back({{"order", order}, {"mean_excess", sc.first / sc.second}, {"pairs", sc.second}});
  out.add_json("hbt_summary.json", summary);

  if (dump_ensemble) {
    const std::size_t count = rc.resolved["ensemble"]["dump_realizations"].get<std::size_t>();
    const auto type = rc.resolved["ensemble"]["dump_dtype"] == "complex64" ? gsm::io::SampleType::complex64
                                                                           : gsm::io::SampleType::complex128;
    const fs::path staging = rc.out_dir / ".staging-ensemble";
    const json side = gsm::io::write_ensemble_dump(staging, ens, count, type);
    fs::path bin = staging, js = staging;
    bin += ".bin";
    js += ".json";
    json fixed = side;
    fixed["data_file"] = "ensemble.bin";
    fs::remove(js);
    out.add_staged("ensemble.bin", bin);
    out.add_json("ensemble.json", fixed);
  }
  std::cout << "g2 matrix " << arm1.size() << "x" << arm2.size() << ", distance to 1+delta "
            << gsm::io::fmt(summary["distance_to_ideal"].get<double>()) << "\n";
}

void cmd_scan(const RunConfig& rc, RunOutputs& out) {
  const gsm::SchellModel& model = *rc.model;
  const json& s = rc.resolved["scan"];
  const gsm::ModeIndex idx{s["m"].get<unsigned>(), s["n"].get<unsigned>()};
  const std::size_t points = s["points"].get<std::size_t>();
  const double r_min = s["r_min"].get<double>(), r_max = s["r_max"].get<double>();
  const double ratio = s["c_det_ratio"].get<double>();
  if (points < 1) throw ConfigError("config key 'scan.points' must be >= 1");
  if (!(r_max >= r_min)) throw ConfigError("config keys 'scan.r_min' and 'scan.r_max' must satisfy r_min <= r_max");
  require_positive(ratio, "scan.c_det_ratio");

  std::vector<double> r(points);
  for (std::size_t i = 0; i < points; ++i)
    r[i] = points == 1 ? r_min : r_min + (r_max - r_min) * static_cast<double>(i) / static_cast<double>(points - 1);
  const double c = gsm::derive_kernel_params(model).c;
  gsm::ScanOptions opt;
  opt.c_det = ratio * c;
  const gsm::ScanCurve curve = gsm::g2_scan(model, idx, r, opt);
  out.warn_all(curve.warnings);

  std::vector<gsm::io::ScanPoint> pts;
  for (std::size_t i = 0; i < points; ++i) pts.push_back({r[i], curve.g2[i], std::nullopt});

  if (s["monte_carlo"].get<bool>()) {
    gsm::Warnings w;
    const gsm::Ensemble ens(model, rc.ensemble, rc.dims, &w);
    std::vector<gsm::ModeFilter> arm1{gsm::IdealProjector{idx}}, arm2;
    for (double x : r) arm2.push_back(gsm::GaussianBucket{{x, 0.0}});
    gsm::HbtOptions hopt;
    hopt.threads = rc.threads;
    hopt.allow_mismatch = true;
    const gsm::DetectionOptics scan_optics(rc.optics->fiber_waist,
                                           rc.optics->focal_length / std::sqrt(ratio * c / rc.optics->detection_c()),
                                           rc.optics->wavenumber);
    const gsm::G2Matrix g = gsm::g2_matrix_monte_carlo(ens, arm1, arm2, scan_optics, hopt, &w);
    out.warn_all(w);
    for (std::size_t i = 0; i < points; ++i) pts[i].g2_mc = g.at(0, i);
  }

  if (rc.csv) out.add("scan.csv", to_text([&](std::ostream& os) { gsm::io::write_scan_csv(os, pts); }));
  if (rc.json_out) {
    json j{{"mask", {idx.m, idx.n}}, {"c", c}, {"c_det", opt.c_det}, {"points", json::array()}};
    for (const auto& p : pts) {
      json row{{"r_f", p.displacement}, {"g2_analytic", p.g2_analytic}};
      if (p.g2_mc) row["g2_mc"] = {{"value", p.g2_mc->value}, {"std_error", p.g2_mc->std_error}};
      j["points"].push_back(row);
    }
    out.add_json("scan.json", j);
  }
}

gsm::ModeSpectrum load_spectrum(const fs::path& p, RunOutputs& out) {
  std::ifstream in(p);
  if (!in) throw gsm::FormatError("cannot open spectrum file " + p.string());
  try {
    gsm::ModeSpectrum s = gsm::io::read_spectrum_csv(in);
    out.add_input(p);
    return s;
  } catch (const gsm::FormatError& e) {
    throw gsm::FormatError(p.string() + ": " + e.what());
  }
}

gsm::G2Matrix load_g2(const fs::path& p, RunOutputs& out) {
  std::ifstream in(p);
  if (!in) throw gsm::FormatError("cannot open g2 file " + p.string());
  try {
    gsm::G2Matrix g = gsm::io::read_g2_csv(in);
    out.add_input(p);
    return g;
  } catch (const gsm::FormatError& e) {
    throw gsm::FormatError(p.string() + ": " + e.what());
  }
}

void cmd_report(const RunConfig& rc, RunOutputs& out) {
  const json& r = rc.resolved["report"];
  const std::string exp_path = r["experimental"], th_path = r["theory"];
  const std::string g2e_path = r["g2_experimental"], g2t_path = r["g2_theory"];
  const unsigned max_order = r["max_order"].get<unsigned>();
  if (exp_path.empty()) throw ConfigError("missing required config key 'report.experimental' (or --experimental)");

  const gsm::ModeSpectrum exp = load_spectrum(exp_path, out);
  const gsm::ModeSpectrum th =
      th_path.empty() ? gsm::analytic_spectrum_2d(build_model(rc.resolved["model"]), max_order, gsm::Normalization::relative_to_lambda00)
                      : load_spectrum(th_path, out);

  std::optional<gsm::G2Matrix> g2e, g2t;
  if (!g2e_path.empty()) {
    g2e = load_g2(g2e_path, out);
    g2t = g2t_path.empty() ? gsm::ideal_g2_matrix(g2e->arm1, g2e->arm2) : load_g2(g2t_path, out);
  }
  gsm::ComparisonReport rep;
  try {
    rep = gsm::compare(exp, th, max_order, g2e ? &*g2e : nullptr, g2t ? &*g2t : nullptr);
  } catch (const gsm::MissingIndexError& e) {
    throw gsm::FormatError(std::string("spectra do not cover the requested window: ") + e.what());
  } catch (const gsm::IndexMismatchError& e) {
    throw gsm::FormatError(e.what());
  }
  if (rc.csv) out.add("report.csv", to_text([&](std::ostream& os) { gsm::io::write_report_csv(os, rep); }));
  if (rc.json_out) out.add_json("report.json", gsm::io::report_json(rep));
  std::cout << "fidelity " << gsm::io::fmt(rep.fidelity) << " over m+n <= " << max_order;
  if (g2e) std::cout << ", g2 distance " << gsm::io::fmt(rep.distance);
  std::cout << "\n";
}

void add_common(CLI::App* app, CommonFlags& f) {
  app->add_option("--config", f.config_path, "Config file (JSON, comments allowed) or a run manifest");
  app->add_option("--seed", f.seed, "Ensemble seed (overrides ensemble.seed)");
  app->add_option("--out", f.out, "Output directory (overrides output.dir)");
  app->add_option("--threads", f.threads, "Worker threads; results do not depend on it")->check(CLI::PositiveNumber);
  app->add_option("--format", f.format, "Output format")->check(CLI::IsMember({"csv", "json", "both"}));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gaussian Schell-model mode decomposition and mode-filtered HBT simulator"};
  app.set_version_flag("--version", std::string("gsm-hbt ") + GSM_VERSION);
  app.require_subcommand(1);

  CommonFlags flags;
  SpectrumFlags sf;
  bool dump = false;
  std::string experimental, theory, g2e, g2t;

  auto* spectrum = app.add_subcommand("spectrum", "Analytic eigenvalue table, optional numerical and Monte Carlo checks");
  add_common(spectrum, flags);
  spectrum->add_flag("--numerical", sf.numerical, "Add the Nystrom cross-check report");
  spectrum->add_flag("--monte-carlo", sf.monte_carlo, "Add the Monte Carlo partial-intensity spectrum");

  auto* hbt = app.add_subcommand("hbt", "Monte Carlo g2 matrix over all filter pairs");
  add_common(hbt, flags);
  hbt->add_flag("--dump-ensemble", dump, "Also write sampled field realizations");

  auto* scan = app.add_subcommand("scan", "g2 against fiber displacement");
  add_common(scan, flags);

  auto* report = app.add_subcommand("report", "Fidelity and g2 distance against theory");
  add_common(report, flags);
  report->add_option("--experimental", experimental, "Measured spectrum CSV");
  report->add_option("--theory", theory, "Theory spectrum CSV (default: analytic from the model)");
  report->add_option("--g2-experimental", g2e, "Measured g2 CSV");
  report->add_option("--g2-theory", g2t, "Theory g2 CSV (default: 1 + delta)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    const std::string command = app.get_subcommands().front()->get_name();
    RunConfig rc = resolve_config(flags, command != "report");
    if (command == "report") {
      if (!experimental.empty()) rc.resolved["report"]["experimental"] = experimental;
      if (!theory.empty()) rc.resolved["report"]["theory"] = theory;
      if (!g2e.empty()) rc.resolved["report"]["g2_experimental"] = g2e;
      if (!g2t.empty()) rc.resolved["report"]["g2_theory"] = g2t;
    }

    std::error_code ec;
    fs::create_directories(rc.out_dir, ec);
    if (ec) throw OutputError("cannot create output directory " + rc.out_dir.string() + ": " + ec.message());
    DirectoryLock lock(rc.out_dir);
    RunOutputs out(command, rc);
    if (command == "spectrum") cmd_spectrum(rc, sf, out);
    else if (command == "hbt") cmd_hbt(rc, dump, out);
    else if (command == "scan") cmd_scan(rc, out);
    else cmd_report(rc, out);
    out.publish();
    return kOk;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const gsm::FormatError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kInputFormatError;
  } catch (const gsm::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kNumericalError;
  } catch (const OutputError& e) {
    std::cerr << "output error: " << e.what() << "\n";
    return kOutputError;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "output error: " << e.what() << "\n";
    return kOutputError;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::out_of_range& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInternal;
  }
}
