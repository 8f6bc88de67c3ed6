// Config parsing, worker pool, plots, manifests and the command-line tool.

#include "koopquad/bench/config.hpp"
#include "koopquad/bench/experiments.hpp"
#include "koopquad/bench/manifest.hpp"
#include "koopquad/bench/pool.hpp"
#include "koopquad/bench/svg.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace fs = std::filesystem;
using namespace koopquad;
using namespace koopquad::bench;

namespace {

json small_config() {
  return json::parse(R"({
    "grid": [2, 3],
    "t_final": 0.5,
    "dt": 0.001,
    "seed": 7,
    "report_times": [0.5],
    "lifted_csv_stride": 50,
    "baseline": {"trajectories": 2, "horizon": 0.5},
    "recovery": {"horizon": 0.5, "samples": 5, "perturbations": 10, "grid": [2, 3]},
    "audit": {"samples": 200, "k_max": 10, "consistency_horizon": 1.0, "b_samples": 20,
              "controllability_grid": [2]}
  })");
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("koopquad_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

fs::path write_config(const fs::path& dir, const json& j) {
  const fs::path p = dir / "config.json";
  std::ofstream(p) << j.dump(2);
  return p;
}

// NaN-aware: undefined samples must match too
bool bitwise_equal(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(KOOPQUAD_BENCH_EXE) + " " + args + " > /dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

}  // namespace

// ---------------------------------------------------------------------------
// config

TEST(Config, DefaultsMatchLibrary) {
  const ExperimentConfig c = parse_config(json::object());
  EXPECT_EQ(c.grid, (std::vector<int>{5, 15, 25}));
  EXPECT_EQ(c.dt, 1e-3);
  EXPECT_EQ(c.t_final, 30.0);
  EXPECT_EQ(c.reference, ReferenceModel::force_free);
  EXPECT_EQ(c.params.mass, QuadrotorParams{}.mass);
  EXPECT_EQ(c.initial.omega, Vec3::Constant(0.05));
  EXPECT_EQ(c.initial.velocity, Vec3::Constant(0.1));
}

TEST(Config, ShippedConfigsLoad) {
  for (const char* name : {"default.json", "experiment.json"}) {
    EXPECT_NO_THROW((void)load_config(std::string(KOOPQUAD_CONFIG_DIR) + "/" + name)) << name;
  }
  const ExperimentConfig e = load_config(std::string(KOOPQUAD_CONFIG_DIR) + "/experiment.json");
  EXPECT_EQ(e.params.mass, 4.34);
  EXPECT_EQ(e.params.inertia(2, 2), 0.1377);
}

TEST(Config, FieldsAreRead) {
  json j = small_config();
  j["quadrotor"] = {{"mass", 1.5}, {"inertia", {0.01, 0, 0, 0, 0.02, 0, 0, 0, 0.03}}};
  j["lift"] = {{"n1", 4}, {"n2", 6}, {"normalized", true}, {"omega0", 0.4}, {"v0", 0.6},
               {"b_construction", "closed_form"}, {"chain_scaling", "transposed"},
               {"inertia_coupling", "literal"}, {"g_shift", "full_identity"}};
  j["reference_model"] = "simplified";
  j["audit"]["tamper_a"] = {10, 26};
  const ExperimentConfig c = parse_config(j);
  EXPECT_EQ(c.params.mass, 1.5);
  EXPECT_EQ(c.params.inertia(1, 1), 0.02);
  EXPECT_EQ(c.lift.n2, 6);
  EXPECT_FALSE(c.auto_normalization);
  EXPECT_EQ(c.lift.b_construction, BConstruction::closed_form);
  EXPECT_EQ(c.lift.scaling, ChainScaling::transposed);
  EXPECT_EQ(c.lift.inertia, InertiaCoupling::literal);
  EXPECT_EQ(c.lift.g_shift, GChainShift::full_identity);
  EXPECT_EQ(c.reference, ReferenceModel::simplified);
  ASSERT_TRUE(c.audit.tamper_a.has_value());
  EXPECT_EQ(c.audit.tamper_a->second, 26);
  EXPECT_EQ(c.seed, 7u);
}

TEST(Config, UnknownKeysRejectedAtEveryLevel) {
  for (const char* path : {"", "quadrotor", "lift", "signal", "initial_state", "baseline", "recovery", "audit"}) {
    json j = small_config();
    if (std::string(path).empty()) {
      j["bogus"] = 1;
    } else {
      if (!j.contains(path)) j[path] = json::object();
      j[path]["bogus"] = 1;
    }
    EXPECT_THROW((void)parse_config(j), ConfigError) << path;
  }
}

TEST(Config, SemanticErrors) {
  const std::vector<std::pair<std::string, json>> bad = {
      {"/dt", -1.0},
      {"/t_final", 0.0},
      {"/grid", json::array()},
      {"/grid", {0, 3}},
      {"/quadrotor", {{"mass", -1.0}}},
      {"/lift", {{"b_construction", "sideways"}}},
      {"/lift", {{"normalized", true}, {"omega0", -1.0}}},
      {"/signal", {{"hold", 0.0}}},
      {"/reference_model", "quantum"},
      {"/seed", "seven"},
      {"/initial_state", {{"rotation", {1, 0, 0, 0, 1, 0, 0, 0, -1}}}},
      {"/audit", {{"tamper_a", {1}}}},
      {"/lifted_csv_stride", 0},
  };
  for (const auto& [ptr, value] : bad) {
    json j = small_config();
    j[json::json_pointer(ptr)] = value;
    EXPECT_THROW((void)parse_config(j), ConfigError) << ptr << " = " << value.dump();
  }
}

TEST(Config, HashIsStableAndKeyOrderFree) {
  const json a = json::parse(R"({"seed": 1, "dt": 0.001})");
  const json b = json::parse(R"({"dt": 0.001, "seed": 1})");
  EXPECT_EQ(config_hash(a), config_hash(b));
  EXPECT_NE(config_hash(a), config_hash(json::parse(R"({"seed": 2, "dt": 0.001})")));
  EXPECT_EQ(config_hash(a).size(), 16u);
}

// ---------------------------------------------------------------------------
// pool and plots

TEST(Pool, ResultsIndependentOfThreadCount) {
  const std::function<double(std::size_t)> fn = [](std::size_t i) {
    double s = 0.0;
    for (std::size_t k = 0; k < 1000 * (i % 7 + 1); ++k) s += std::sin(static_cast<double>(k + i));
    return s;
  };
  const auto a = parallel_map<double>(37, 1, fn);
  const auto b = parallel_map<double>(37, 4, fn);
  EXPECT_EQ(a, b);
  EXPECT_TRUE(parallel_map<double>(0, 4, fn).empty());
}

TEST(Pool, RethrowsTaskException) {
  const std::function<int(std::size_t)> fn = [](std::size_t i) -> int {
    if (i == 5) throw std::runtime_error("boom");
    return static_cast<int>(i);
  };
  EXPECT_THROW((void)parallel_map<int>(10, 3, fn), std::runtime_error);
}

TEST(Plot, LogScaleSkipsNonPositive) {
  std::ostringstream os;
  write_log_plot(os, {"t<1>"}, {{"a", {0, 1, 2, 3}, {1e-3, 0.0, NAN, 1e-1}}, {"b", {0, 1}, {1e-5, 1e-4}}});
  const std::string s = os.str();
  EXPECT_NE(s.find("<svg"), std::string::npos);
  EXPECT_NE(s.find("t&lt;1&gt;"), std::string::npos);
  EXPECT_NE(s.find("1e-5"), std::string::npos);
  EXPECT_EQ(s.find("nan"), std::string::npos);
  // two path segments for series a (the gap breaks it) plus one for b
  std::size_t moves = 0;
  for (std::size_t p = s.find(" M"); p != std::string::npos; p = s.find(" M", p + 1)) ++moves;
  EXPECT_EQ(moves, 3u);
}

// ---------------------------------------------------------------------------
// experiment drivers

TEST(Experiments, SweepIsDeterministicAcrossJobs) {
  const ExperimentConfig c = parse_config(small_config());
  const SweepResult a = sweep(c, 0.5, 1);
  const SweepResult b = sweep(c, 0.5, 2);
  ASSERT_EQ(a.runs.size(), 2u);
  for (std::size_t i = 0; i < a.runs.size(); ++i) {
    EXPECT_TRUE(bitwise_equal(a.runs[i].errors.velocity, b.runs[i].errors.velocity));
    EXPECT_TRUE(bitwise_equal(a.runs[i].errors.euler, b.runs[i].errors.euler));
  }
}

TEST(Experiments, AuditPassesAndCatchesTamper) {
  const ExperimentConfig c = parse_config(small_config());
  const AuditReport r = run_audit(c);
  for (const auto& e : r.entries) EXPECT_TRUE(e.passed || e.informational) << e.name << ": " << e.detail;
  EXPECT_TRUE(r.passed());
  json j = small_config();
  j["audit"]["tamper_a"] = {4 + 16 * 15, 4 + 16 * 15 + 3};  // f0 -> f1 link at default n1=n2=15
  const AuditReport t = run_audit(parse_config(j));
  EXPECT_FALSE(t.passed());
  j["audit"].erase("tamper_a");
  j["audit"]["omega_bar"] = 0.8;
  const AuditReport d = run_audit(parse_config(j));
  bool flagged = false;
  for (const auto& e : d.entries) {
    if (e.name == "monotone_decay") flagged = e.informational && e.detail.find("domain") != std::string::npos;
  }
  EXPECT_TRUE(flagged);
}

// ---------------------------------------------------------------------------
// command-line tool

TEST(Cli, ExitCodesForConfigErrors) {
  const fs::path dir = scratch("cfgerr");
  json j = small_config();
  j["nonsense"] = true;
  EXPECT_EQ(run_cli("audit --config " + write_config(dir, j).string()), 2);
  EXPECT_EQ(run_cli("audit --config " + (dir / "missing.json").string()), 2);
  EXPECT_EQ(run_cli("audit --reference-model quantum"), 2);
  EXPECT_EQ(run_cli("frobnicate"), 2);
  std::ofstream(dir / "broken.json") << "{ not json";
  EXPECT_EQ(run_cli("audit --config " + (dir / "broken.json").string()), 2);
}

TEST(Cli, AuditExitCodes) {
  const fs::path dir = scratch("audit");
  json j = small_config();
  j["output_dir"] = (dir / "ok").string();
  EXPECT_EQ(run_cli("audit --config " + write_config(dir, j).string()), 0);
  EXPECT_TRUE(fs::exists(dir / "ok" / "audit.json"));
  j["output_dir"] = (dir / "tampered").string();
  j["audit"]["tamper_a"] = {4 + 16 * 15, 4 + 16 * 15 + 3};
  EXPECT_EQ(run_cli("audit --config " + write_config(dir, j).string()), 1);
}

TEST(Cli, MissingBaselineFitIsReported) {
  const fs::path dir = scratch("nofit");
  json j = small_config();
  j["baseline"] = {{"trajectories", 1}, {"horizon", 0.01}};
  j["output_dir"] = (dir / "out").string();
  EXPECT_EQ(run_cli("compare-baseline --config " + write_config(dir, j).string()), 1);
  EXPECT_NE(read_file(dir / "out" / "error_table.csv").find("not fitted"), std::string::npos);
}

TEST(Cli, DeterministicOutputsAndManifests) {
  const fs::path dir = scratch("determinism");
  const fs::path cfg = write_config(dir, small_config());
  const std::vector<std::string> cmds = {"simulate", "sweep", "compare-baseline", "controllability", "recover-input"};
  for (const auto& [sub, jobs] : {std::pair{"a", 1}, std::pair{"b", 3}}) {
    for (const auto& c : cmds) {
      EXPECT_EQ(run_cli(c + " --config " + cfg.string() + " --out " + (dir / sub).string() +
                        " --jobs " + std::to_string(jobs)),
                0)
          << c;
    }
  }
  std::map<std::string, int> referenced;
  for (const auto& entry : fs::directory_iterator(dir / "a")) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("manifest_", 0) == 0) {
      const json m = json::parse(read_file(entry.path()));
      EXPECT_EQ(m["seed"], 7);
      EXPECT_EQ(m["tool_version"], kToolVersion);
      EXPECT_EQ(m["config_hash"].get<std::string>().size(), 16u);
      for (const auto& o : m["outputs"]) ++referenced[o.get<std::string>()];
      continue;
    }
    EXPECT_EQ(read_file(entry.path()), read_file(dir / "b" / name)) << name;
  }
  std::size_t files = 0;
  for (const auto& entry : fs::directory_iterator(dir / "a")) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("manifest_", 0) == 0) continue;
    ++files;
    EXPECT_EQ(referenced[name], 1) << name;
  }
  EXPECT_EQ(referenced.size(), files);
  EXPECT_TRUE(fs::exists(dir / "a" / "error_velocity.svg"));
  EXPECT_TRUE(fs::exists(dir / "a" / "lifted_state_N3.csv"));
}

TEST(Cli, SeedOverrideChangesOutputs) {
  const fs::path dir = scratch("seed");
  const fs::path cfg = write_config(dir, small_config());
  ASSERT_EQ(run_cli("sweep --config " + cfg.string() + " --out " + (dir / "s7").string()), 0);
  ASSERT_EQ(run_cli("sweep --config " + cfg.string() + " --seed 8 --out " + (dir / "s8").string()), 0);
  EXPECT_NE(read_file(dir / "s7" / "errors_N2.csv"), read_file(dir / "s8" / "errors_N2.csv"));
  const json m = json::parse(read_file(dir / "s8" / "manifest_sweep.json"));
  EXPECT_EQ(m["seed"], 8);
}

TEST(Cli, SinglePointGrid) {
  const fs::path dir = scratch("single");
  json j = small_config();
  j["grid"] = {3};
  ASSERT_EQ(run_cli("sweep --config " + write_config(dir, j).string() + " --out " + (dir / "o").string()), 0);
  const std::string s = read_file(dir / "o" / "summary.csv");
  EXPECT_NE(s.find("t,quantity,N1=N2=3\n"), std::string::npos);
}
