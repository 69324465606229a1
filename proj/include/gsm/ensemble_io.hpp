#pragma once

#include <bit>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gsm/errors.hpp"
#include "gsm/speckle.hpp"

// Ensemble dump: <base>.bin holds little-endian interleaved (re, im) samples,
// realization-major, each realization a 1D grid or a row-major (x, y) 2D grid.
// <base>.json describes it.

namespace gsm::io {

inline constexpr int kEnsembleFormatVersion = 1;

enum class SampleType { complex64, complex128 };

inline nlohmann::ordered_json model_json(const SchellModel& m) {
  return {{"sigma_I", m.sigma_I()},
          {"sigma_mu", m.sigma_mu()},
          {"beta", m.beta()},
          {"wavelength", m.wavelength()},
          {"amplitude", m.amplitude()}};
}

/// Writes realizations [0, count) of `ensemble` sampled on its grid. Returns the sidecar.
inline nlohmann::ordered_json write_ensemble_dump(const std::filesystem::path& base, const Ensemble& ensemble,
                                                  std::size_t count, SampleType type = SampleType::complex128) {
  static_assert(std::endian::native == std::endian::little, "ensemble dump assumes a little-endian host");
  count = std::min(count, ensemble.size());
  const GridSpec& g = ensemble.config().grid;
  const bool two_d = ensemble.dims() == FieldDims::two;

  std::filesystem::path bin = base;
  bin += ".bin";
  std::ofstream out(bin, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + bin.string());
  for (std::size_t r = 0; r < count; ++r) {
    const FieldRealization f = ensemble.realization(r);
    for (const cplx& v : f.amplitudes) {
      if (type == SampleType::complex128) {
        const double d[2] = {v.real(), v.imag()};
        out.write(reinterpret_cast<const char*>(d), sizeof d);
      } else {
        const float d[2] = {static_cast<float>(v.real()), static_cast<float>(v.imag())};
        out.write(reinterpret_cast<const char*>(d), sizeof d);
      }
    }
  }
  if (!out) throw std::runtime_error("failed writing " + bin.string());

  nlohmann::ordered_json side;
  side["format"] = "gsm-ensemble";
  side["version"] = kEnsembleFormatVersion;
  side["dtype"] = type == SampleType::complex128 ? "complex128" : "complex64";
  side["byte_order"] = "little";
  side["data_file"] = bin.filename().string();
  side["model"] = model_json(ensemble.model());
  side["grid"] = {{"half_width", g.half_width}, {"points", g.points}};
  side["dims"] = two_d ? nlohmann::json{count, g.points, g.points} : nlohmann::json{count, g.points};
  side["seed"] = ensemble.config().seed;
  side["mode_cutoff"] = ensemble.cutoff();
  side["realizations_in_ensemble"] = ensemble.size();

  std::filesystem::path js = base;
  js += ".json";
  std::ofstream(js) << side.dump(2) << '\n';
  return side;
}

struct EnsembleDump {
  nlohmann::json sidecar;
  std::vector<std::size_t> dims;
  std::vector<cplx> samples;
};

inline EnsembleDump read_ensemble_dump(const std::filesystem::path& sidecar_path) {
  std::ifstream in(sidecar_path);
  if (!in) throw FormatError("cannot open " + sidecar_path.string());
  EnsembleDump d;
  try {
    d.sidecar = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("ensemble sidecar: ") + e.what());
  }
  if (d.sidecar.value("format", "") != "gsm-ensemble") throw FormatError("not an ensemble sidecar");
  if (d.sidecar.value("version", 0) != kEnsembleFormatVersion)
    throw FormatError("unsupported ensemble format version");
  d.dims = d.sidecar.at("dims").get<std::vector<std::size_t>>();
  std::size_t total = 1;
  for (auto n : d.dims) total *= n;
  const bool wide = d.sidecar.at("dtype") == "complex128";

  std::ifstream bin(sidecar_path.parent_path() / d.sidecar.at("data_file").get<std::string>(), std::ios::binary);
  if (!bin) throw FormatError("cannot open ensemble data file");
  d.samples.resize(total);
  for (std::size_t i = 0; i < total; ++i) {
    if (wide) {
      double v[2];
      bin.read(reinterpret_cast<char*>(v), sizeof v);
      d.samples[i] = {v[0], v[1]};
    } else {
      float v[2];
      bin.read(reinterpret_cast<char*>(v), sizeof v);
      d.samples[i] = {v[0], v[1]};
    }
    if (!bin) throw FormatError("ensemble data file is truncated");
  }
  return d;
}

}  // namespace gsm::io
