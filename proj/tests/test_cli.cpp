#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "cli_support.hpp"
#include "gsm/ensemble_io.hpp"
#include "gsm/export.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::string kModel = R"("model": {"sigma_I": 2.3e-3, "beta": 0.24, "wavelength": 632.8e-9})";

std::string sha256(const std::string& data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr);
  std::string out;
  char buf[3];
  for (unsigned i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", md[i]);
    out += buf;
  }
  return out;
}

std::map<std::string, std::vector<std::string>> read_csv(const fs::path& p) {
  std::istringstream in(cli::slurp(p));
  std::string line;
  std::getline(in, line);
  std::vector<std::string> header;
  std::stringstream hs(line);
  for (std::string c; std::getline(hs, c, ',');) header.push_back(c);
  std::map<std::string, std::vector<std::string>> cols;
  while (std::getline(in, line)) {
    std::stringstream ls(line);
    std::size_t i = 0;
    std::string cell;
    for (; std::getline(ls, cell, ','); ++i) cols[header.at(i)].push_back(cell);
    if (!line.empty() && line.back() == ',') cols[header.at(i)].push_back("");
  }
  return cols;
}

double relative_entry(const fs::path& csv, unsigned m, unsigned n) {
  auto cols = read_csv(csv);
  for (std::size_t i = 0; i < cols["m"].size(); ++i)
    if (cols["m"][i] == std::to_string(m) && cols["n"][i] == std::to_string(n)) return std::stod(cols["relative_to_lambda0"][i]);
  return NAN;
}

}  // namespace

TEST(CliSpectrum, ReferenceTable) {
  const fs::path d = cli::scratch("spectrum");
  cli::write(d / "c.json", "{" + kModel + ", \"spectrum\": {\"max_order\": 8}}");
  const auto r = cli::run(d, {"spectrum", "--config", "c.json", "--out", "o"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NEAR(relative_entry(d / "o/spectrum.csv", 1, 0), 0.7871, 5e-5);
  const std::string text = cli::slurp(d / "o/spectrum.csv");
  EXPECT_EQ(text.rfind("m,n,eigenvalue,relative_to_lambda0\n", 0), 0u);
  EXPECT_EQ(text.find('\r'), std::string::npos);
  EXPECT_EQ(read_csv(d / "o/spectrum.csv")["m"].size(), 45u);
  EXPECT_FALSE(fs::exists(d / "o/.gsm-hbt.lock"));
}

TEST(CliSpectrum, NumericalCrossCheck) {
  const fs::path d = cli::scratch("numerical");
  cli::write(d / "c.json", "{" + kModel + "}");
  const auto r = cli::run(d, {"spectrum", "--numerical", "--config", "c.json", "--out", "o"});
  ASSERT_EQ(r.code, 0) << r.err;
  const json s = json::parse(cli::slurp(d / "o/spectrum.json"));
  EXPECT_LT(s["numerical"]["max_eigenvalue_rel_error"].get<double>(), 1e-6);
  EXPECT_EQ(s["numerical"]["grid_points"], 512);
  const auto cmp = read_csv(d / "o/comparison.csv");
  ASSERT_EQ(cmp.at("eigenvalue_rel_error").size(), 10u);
  for (const auto& v : cmp.at("eigenvalue_rel_error")) EXPECT_LT(std::stod(v), 1e-6);
  EXPECT_EQ(read_csv(d / "o/modes.csv").size(), 6u);
  // L = 5 sigma_I leaves exp(-12.5) of the envelope at the edge.
  EXPECT_NE(r.err.find("warning"), std::string::npos);
}

TEST(CliConfig, MissingBetaNamesTheKey) {
  const fs::path d = cli::scratch("missing");
  cli::write(d / "c.json", R"({"model": {"sigma_I": 2.3e-3, "wavelength": 632.8e-9}})");
  const auto r = cli::run(d, {"spectrum", "--config", "c.json", "--out", "o"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("model.beta"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(d / "o/manifest.json"));
}

TEST(CliConfig, UnknownKeyRejected) {
  const fs::path d = cli::scratch("unknown");
  cli::write(d / "c.json", "{" + kModel + R"(, "grid": {"point": 64}})");
  const auto r = cli::run(d, {"spectrum", "--config", "c.json", "--out", "o"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("grid.point"), std::string::npos) << r.err;
}

TEST(CliConfig, SyntaxErrorReportsLine) {
  const fs::path d = cli::scratch("syntax");
  cli::write(d / "c.json", "// comment\n{\n  \"model\": {\"sigma_I\": 2.3e-3,,}\n}\n");
  const auto r = cli::run(d, {"spectrum", "--config", "c.json", "--out", "o"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("c.json:3:"), std::string::npos) << r.err;
}

TEST(CliConfig, WrongTypeRejected) {
  const fs::path d = cli::scratch("type");
  cli::write(d / "c.json", "{" + kModel + R"(, "ensemble": {"realizations": "many"}})");
  const auto r = cli::run(d, {"spectrum", "--config", "c.json", "--out", "o"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("ensemble.realizations"), std::string::npos) << r.err;
}

TEST(CliConfig, EnvironmentOverridesFile) {
  const fs::path d = cli::scratch("env");
  cli::write(d / "c.json", "{" + kModel + "}");
  const auto r = cli::run(d, {"spectrum", "--config", "c.json", "--out", "o"}, {"GSM_MODEL__BETA=2"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NEAR(relative_entry(d / "o/spectrum.csv", 1, 0), 0.1715728752538099, 1e-15);
  const json m = json::parse(cli::slurp(d / "o/manifest.json"));
  EXPECT_EQ(m["config"]["model"]["beta"], 2);

  const auto bad = cli::run(d, {"spectrum", "--config", "c.json", "--out", "o2"}, {"GSM_MODEL__BETTA=2"});
  EXPECT_EQ(bad.code, 2);
  EXPECT_NE(bad.err.find("model.betta"), std::string::npos) << bad.err;
}

TEST(CliConfig, BadFormatFlag) {
  const fs::path d = cli::scratch("flag");
  EXPECT_EQ(cli::run(d, {"spectrum", "--format", "xml"}).code, 2);
  EXPECT_EQ(cli::run(d, {}).code, 2);
}

TEST(CliHbt, DeterministicAcrossRunsAndThreads) {
  const fs::path d = cli::scratch("hbt");
  cli::write(d / "c.json", "{" + kModel + R"(, "ensemble": {"realizations": 3000, "dims": 2},
                                             "filters": {"max_order": 2}})");
  std::string first;
  for (const std::string threads : {"1", "3", "1"}) {
    const fs::path out = "o" + threads + std::to_string(first.size());
    const auto r = cli::run(d, {"hbt", "--config", "c.json", "--seed", "42", "--threads", threads, "--out", out.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    const std::string csv = cli::slurp(d / out / "g2.csv");
    if (first.empty()) first = csv;
    else EXPECT_EQ(csv, first);
  }
  const auto other = cli::run(d, {"hbt", "--config", "c.json", "--seed", "43", "--out", "seed43"});
  ASSERT_EQ(other.code, 0);
  EXPECT_NE(cli::slurp(d / "seed43/g2.csv"), first);
  EXPECT_EQ(read_csv(d / "seed43/g2.csv")["g2"].size(), 36u);
}

TEST(CliHbt, ManifestDigestsAndReplay) {
  const fs::path d = cli::scratch("manifest");
  cli::write(d / "c.json", "{" + kModel + R"(, "ensemble": {"realizations": 2000, "dims": 1},
                                             "filters": {"arm1": ["step:2:0", "ideal:1:0"], "arm2": ["bucket:0:0"]}})");
  ASSERT_EQ(cli::run(d, {"hbt", "--config", "c.json", "--seed", "5", "--format", "both", "--out", "a"}).code, 0);
  const json m = json::parse(cli::slurp(d / "a/manifest.json"));
  EXPECT_EQ(m["format"], "gsm-hbt-manifest");
  EXPECT_EQ(m["seed"], 5);
  EXPECT_FALSE(m["version"].get<std::string>().empty());
  std::set<std::string> names;
  for (const auto& o : m["outputs"]) {
    names.insert(o["file"].get<std::string>());
    EXPECT_EQ(o["sha256"], sha256(cli::slurp(d / "a" / o["file"].get<std::string>()))) << o["file"];
  }
  EXPECT_TRUE(names.count("g2.csv") && names.count("g2.json") && names.count("masks.json"));

  ASSERT_EQ(cli::run(d, {"hbt", "--config", "a/manifest.json", "--out", "b"}).code, 0);
  const json replay = json::parse(cli::slurp(d / "b/manifest.json"));
  for (std::size_t i = 0; i < m["outputs"].size(); ++i) EXPECT_EQ(replay["outputs"][i]["sha256"], m["outputs"][i]["sha256"]);
}

TEST(CliHbt, StepMasksShowOffDiagonalExcess) {
  const fs::path d = cli::scratch("steps");
  cli::write(d / "c.json", "{" + kModel + R"(, "ensemble": {"realizations": 20000, "dims": 1},
      "filters": {"arm1": ["step:0:0", "step:1:0", "step:2:0", "step:3:0", "step:4:0"],
                  "arm2": ["ideal:0:0", "ideal:1:0", "ideal:2:0", "ideal:3:0", "ideal:4:0"]}})");
  const auto r = cli::run(d, {"hbt", "--config", "c.json", "--seed", "1", "--out", "o"});
  ASSERT_EQ(r.code, 0) << r.err;
  const json s = json::parse(cli::slurp(d / "o/hbt_summary.json"));
  unsigned checked = 0;
  for (const auto& e : s["off_diagonal_excess"])
    if (e["order"].get<unsigned>() >= 3) {
      EXPECT_GT(e["mean_excess"].get<double>(), 0.0) << e.dump();
      ++checked;
    }
  EXPECT_EQ(checked, 2u);
}

TEST(CliHbt, EnsembleDumpReadable) {
  const fs::path d = cli::scratch("dump");
  cli::write(d / "c.json", "{" + kModel + R"(, "grid": {"points": 32}, "ensemble": {"realizations": 50, "dims": 2,
      "dump_realizations": 3, "dump_dtype": "complex64"}, "filters": {"max_order": 1}})");
  ASSERT_EQ(cli::run(d, {"hbt", "--dump-ensemble", "--config", "c.json", "--out", "o"}).code, 0);
  const gsm::io::EnsembleDump dump = gsm::io::read_ensemble_dump(d / "o/ensemble.json");
  EXPECT_EQ(dump.dims, (std::vector<std::size_t>{3, 32, 32}));
  EXPECT_EQ(dump.sidecar["dtype"], "complex64");
  EXPECT_FALSE(fs::exists(d / "o/.staging-ensemble.bin"));
}

TEST(CliHbt, LockedDirectoryRefused) {
  const fs::path d = cli::scratch("lock");
  cli::write(d / "c.json", "{" + kModel + "}");
  fs::create_directories(d / "o");
  cli::write(d / "o/.gsm-hbt.lock", "1\n");
  const auto r = cli::run(d, {"spectrum", "--config", "c.json", "--out", "o"});
  EXPECT_EQ(r.code, 5);
  EXPECT_NE(r.err.find("locked"), std::string::npos);
  EXPECT_TRUE(fs::exists(d / "o/.gsm-hbt.lock"));
  EXPECT_FALSE(fs::exists(d / "o/spectrum.csv"));
}

TEST(CliHbt, NumericalFailureLeavesNoPartialOutput) {
  const fs::path d = cli::scratch("zero");
  cli::write(d / "c.json", "{" + kModel + R"(, "ensemble": {"realizations": 200, "mode_cutoff": 1, "dims": 1},
      "filters": {"arm1": ["step:1:0"], "arm2": ["ideal:0:0"]}})");
  const auto r = cli::run(d, {"hbt", "--config", "c.json", "--out", "o"});
  EXPECT_EQ(r.code, 3) << r.err;
  EXPECT_FALSE(fs::exists(d / "o/g2.csv"));
  EXPECT_FALSE(fs::exists(d / "o/manifest.json"));
}

TEST(CliScan, LimitsAndMismatch) {
  const fs::path d = cli::scratch("scan");
  auto centre = [&](const std::string& scan, const std::string& out) {
    cli::write(d / (out + ".json"), "{" + kModel + ", \"scan\": " + scan + "}");
    const auto r = cli::run(d, {"scan", "--config", out + ".json", "--out", out});
    EXPECT_EQ(r.code, 0) << r.err;
    return read_csv(d / out / "scan.csv");
  };
  auto m0 = centre(R"({"m": 0, "r_min": -8e-3, "r_max": 8e-3, "points": 41})", "m0");
  EXPECT_NEAR(std::stod(m0["g2_analytic"][20]), 2.0, 1e-12);
  EXPECT_LT(std::stod(m0["g2_analytic"][0]), 1.01);
  EXPECT_TRUE(m0["g2_mc"][0].empty());
  auto m2 = centre(R"({"m": 2, "r_min": 0, "r_max": 0, "points": 1})", "m2");
  EXPECT_NEAR(std::stod(m2["g2_analytic"][0]), 1.0, 1e-12);
  auto mis = centre(R"({"m": 2, "r_min": 0, "r_max": 0, "points": 1, "c_det_ratio": 2.0})", "mis");
  EXPECT_GT(std::stod(mis["g2_analytic"][0]), 1.0 + 1e-3);
}

TEST(CliScan, MonteCarloColumnsFilled) {
  const fs::path d = cli::scratch("scanmc");
  cli::write(d / "c.json", "{" + kModel + R"(, "ensemble": {"realizations": 5000, "dims": 1},
      "scan": {"m": 1, "r_min": -2e-3, "r_max": 2e-3, "points": 5, "monte_carlo": true}})");
  ASSERT_EQ(cli::run(d, {"scan", "--config", "c.json", "--out", "o"}).code, 0);
  auto cols = read_csv(d / "o/scan.csv");
  ASSERT_EQ(cols["g2_mc"].size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) {
    const double a = std::stod(cols["g2_analytic"][i]), v = std::stod(cols["g2_mc"][i]), e = std::stod(cols["std_error"][i]);
    EXPECT_LT(std::abs(v - a), 5.0 * e) << i;
  }
}

TEST(CliReport, TheoryAgainstTheoryIsOne) {
  const fs::path d = cli::scratch("report");
  cli::write(d / "c.json", "{" + kModel + "}");
  ASSERT_EQ(cli::run(d, {"spectrum", "--config", "c.json", "--out", "s"}).code, 0);
  const auto r = cli::run(d, {"report", "--experimental", "s/spectrum.csv", "--theory", "s/spectrum.csv", "--out", "r"});
  ASSERT_EQ(r.code, 0) << r.err;
  auto cols = read_csv(d / "r/report.csv");
  ASSERT_EQ(cols["fidelity"].size(), 9u);
  for (const auto& f : cols["fidelity"]) EXPECT_EQ(std::stod(f), 1.0);
  const json m = json::parse(cli::slurp(d / "r/manifest.json"));
  EXPECT_EQ(m["inputs"].size(), 2u);
}

TEST(CliReport, MonteCarloSpectrumAgainstModel) {
  const fs::path d = cli::scratch("reportmc");
  cli::write(d / "c.json", "{" + kModel + R"(, "ensemble": {"realizations": 20000}})");
  ASSERT_EQ(cli::run(d, {"spectrum", "--monte-carlo", "--config", "c.json", "--out", "s"}).code, 0);
  const auto r = cli::run(d, {"report", "--config", "c.json", "--experimental", "s/spectrum_mc.csv", "--format", "both", "--out", "r"});
  ASSERT_EQ(r.code, 0) << r.err;
  const json rep = json::parse(cli::slurp(d / "r/report.json"));
  EXPECT_GT(rep["fidelity"].get<double>(), 0.99);
}

TEST(CliReport, G2DistanceAgainstIdeal) {
  const fs::path d = cli::scratch("reportg2");
  cli::write(d / "c.json", "{" + kModel + R"(, "ensemble": {"realizations": 4000, "dims": 1}, "filters": {"max_order": 3},
      "report": {"max_order": 3}})");
  ASSERT_EQ(cli::run(d, {"hbt", "--config", "c.json", "--out", "h"}).code, 0);
  ASSERT_EQ(cli::run(d, {"spectrum", "--config", "c.json", "--out", "s"}).code, 0);
  const auto r = cli::run(d, {"report", "--config", "c.json", "--experimental", "s/spectrum.csv", "--g2-experimental", "h/g2.csv",
                              "--out", "r"});
  ASSERT_EQ(r.code, 0) << r.err;
  auto cols = read_csv(d / "r/report.csv");
  ASSERT_EQ(cols["distance"].size(), 4u);
  EXPECT_GT(std::stod(cols["distance"][3]), 0.0);
}

TEST(CliReport, CorruptedCsvFailsWithLine) {
  const fs::path d = cli::scratch("corrupt");
  cli::write(d / "bad.csv", "m,n,eigenvalue\n0,0,1\n1,0,oops\n");
  const auto r = cli::run(d, {"report", "--experimental", "bad.csv", "--theory", "bad.csv", "--out", "r"});
  EXPECT_EQ(r.code, 4);
  EXPECT_NE(r.err.find("line 3"), std::string::npos) << r.err;
  EXPECT_EQ(cli::run(d, {"report", "--experimental", "missing.csv", "--theory", "bad.csv", "--out", "r"}).code, 4);
}

TEST(CliConfigs, ShippedConfigsParse) {
  const fs::path d = cli::scratch("shipped");
  for (const char* name : {"reference.json", "step_masks.json", "scan.json"}) {
    const auto r = cli::run(d, {"spectrum", "--config", std::string(GSM_SOURCE_DIR) + "/configs/" + name, "--out", "o"});
    EXPECT_EQ(r.code, 0) << name << " " << r.err;
  }
}
