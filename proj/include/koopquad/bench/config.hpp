// Experiment configuration: JSON schema, validation and defaults.
// Every object rejects keys it does not know.

#pragma once

#include "koopquad/lift.hpp"
#include "koopquad/quadrotor.hpp"
#include "koopquad/signal.hpp"

#include "json.hpp"

#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace koopquad::bench {

using json = nlohmann::json;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct BaselineSpec {
  int trajectories = 20;
  double horizon = 10.0;        // s per training trajectory
  double omega_spread = 0.05;   // uniform perturbation of the initial w, per axis
  double velocity_spread = 0.1; // uniform perturbation of the initial v, per axis
  std::uint64_t seed_offset = 1000;
};

struct RecoverySpec {
  double u_star_range = 30.0;  // U* ~ U[-range, range]^N
  double horizon = 10.0;
  int samples = 100;           // states visited along the run
  int perturbations = 100;
  std::vector<int> grid{15, 25};
};

struct AuditSpec {
  long samples = 10000;
  int k_max = 30;
  double omega_bar = 0.6 / 1.4142135623730951;
  double v_bar = 0.9;
  double consistency_horizon = 10.0;
  double consistency_hold = 0.1;
  double consistency_tolerance = 1e-4;
  long b_samples = 1000;
  std::vector<int> controllability_grid{2, 3, 5};
  std::optional<std::pair<int, int>> tamper_a;  // flip the sign of A(row, col)
};

struct ExperimentConfig {
  QuadrotorParams params;
  LiftConfig lift;
  bool auto_normalization = true;  // w0, v0 from the reference envelope
  std::vector<int> grid{5, 15, 25};
  double t_final = 30.0;
  double dt = 1e-3;
  SineGammaSpec signal;
  QuadrotorState initial;
  ReferenceModel reference = ReferenceModel::force_free;
  std::uint64_t seed = 1;
  std::string output_dir = "out";
  std::vector<double> report_times{30.0, 60.0};
  int lifted_csv_stride = 100;
  bool export_model = true;
  BaselineSpec baseline;
  RecoverySpec recovery;
  AuditSpec audit;

  ExperimentConfig() {
    initial.omega = Vec3::Constant(0.05);
    initial.velocity = Vec3::Constant(0.1);
  }
};

namespace detail {

inline void check_keys(const json& j, const std::string& where,
                       std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [k, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || k == a;
    if (!ok) throw ConfigError(where + ": unknown key '" + k + "'");
  }
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

inline Vec3 read_vec3(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 3) throw ConfigError(where + ": expected 3 numbers");
  Vec3 v;
  for (int i = 0; i < 3; ++i) {
    if (!j[i].is_number()) throw ConfigError(where + ": expected 3 numbers");
    v(i) = j[i].get<double>();
  }
  return v;
}

inline Mat3 read_mat3(const json& j, const std::string& where) {
  if (j.is_array() && j.size() == 3 && j[0].is_number()) return read_vec3(j, where).asDiagonal();
  if (!j.is_array() || j.size() != 9) throw ConfigError(where + ": expected 3 (diagonal) or 9 numbers");
  Mat3 m;
  for (int i = 0; i < 9; ++i) {
    if (!j[i].is_number()) throw ConfigError(where + ": expected numbers");
    m(i / 3, i % 3) = j[i].get<double>();
  }
  return m;
}

template <typename E>
E read_enum(const json& j, const std::string& where,
            std::initializer_list<std::pair<const char*, E>> options) {
  if (!j.is_string()) throw ConfigError(where + ": expected a string");
  const auto s = j.get<std::string>();
  for (const auto& [name, value] : options) {
    if (s == name) return value;
  }
  throw ConfigError(where + ": unknown value '" + s + "'");
}

}  // namespace detail

[[nodiscard]] inline ExperimentConfig parse_config(const json& j) {
  using namespace detail;
  ExperimentConfig c;
  check_keys(j, "config",
             {"quadrotor", "lift", "grid", "t_final", "dt", "signal", "initial_state",
              "reference_model", "seed", "output_dir", "report_times", "lifted_csv_stride",
              "export_model", "baseline", "recovery", "audit"});
  if (j.contains("quadrotor")) {
    const auto& q = j["quadrotor"];
    check_keys(q, "quadrotor",
               {"mass", "inertia", "thrust_coeff", "moment_coeff", "arm_length", "gravity"});
    read(q, "mass", c.params.mass, "quadrotor");
    if (q.contains("inertia")) c.params.inertia = read_mat3(q["inertia"], "quadrotor.inertia");
    read(q, "thrust_coeff", c.params.thrust_coeff, "quadrotor");
    read(q, "moment_coeff", c.params.moment_coeff, "quadrotor");
    read(q, "arm_length", c.params.arm_length, "quadrotor");
    read(q, "gravity", c.params.gravity, "quadrotor");
  }
  if (j.contains("lift")) {
    const auto& l = j["lift"];
    check_keys(l, "lift",
               {"n1", "n2", "normalized", "omega0", "v0", "b_construction", "chain_scaling",
                "inertia_coupling", "g_shift"});
    read(l, "n1", c.lift.n1, "lift");
    read(l, "n2", c.lift.n2, "lift");
    read(l, "normalized", c.lift.normalized, "lift");
    const bool has_w0 = l.contains("omega0"), has_v0 = l.contains("v0");
    if (has_w0 != has_v0) throw ConfigError("lift: give both omega0 and v0 or neither");
    if (has_w0) {
      read(l, "omega0", c.lift.omega0, "lift");
      read(l, "v0", c.lift.v0, "lift");
      c.auto_normalization = false;
    }
    if (l.contains("b_construction")) {
      c.lift.b_construction = read_enum<BConstruction>(
          l["b_construction"], "lift.b_construction",
          {{"columnwise", BConstruction::columnwise}, {"closed_form", BConstruction::closed_form}});
    }
    if (l.contains("chain_scaling")) {
      c.lift.scaling = read_enum<ChainScaling>(
          l["chain_scaling"], "lift.chain_scaling",
          {{"derived", ChainScaling::derived}, {"transposed", ChainScaling::transposed}});
    }
    if (l.contains("inertia_coupling")) {
      c.lift.inertia = read_enum<InertiaCoupling>(
          l["inertia_coupling"], "lift.inertia_coupling",
          {{"inverse", InertiaCoupling::inverse}, {"literal", InertiaCoupling::literal}});
    }
    if (l.contains("g_shift")) {
      c.lift.g_shift = read_enum<GChainShift>(
          l["g_shift"], "lift.g_shift",
          {{"drift_compensated", GChainShift::drift_compensated},
           {"full_identity", GChainShift::full_identity}});
    }
  }
  read(j, "grid", c.grid, "config");
  read(j, "t_final", c.t_final, "config");
  read(j, "dt", c.dt, "config");
  if (j.contains("signal")) {
    const auto& s = j["signal"];
    check_keys(s, "signal", {"amplitude", "frequency", "gamma_min", "gamma_max", "hold", "channel4"});
    read(s, "amplitude", c.signal.amplitude, "signal");
    read(s, "frequency", c.signal.frequency, "signal");
    read(s, "gamma_min", c.signal.gamma_min, "signal");
    read(s, "gamma_max", c.signal.gamma_max, "signal");
    read(s, "hold", c.signal.hold, "signal");
    read(s, "channel4", c.signal.channel4, "signal");
  }
  if (j.contains("initial_state")) {
    const auto& s = j["initial_state"];
    check_keys(s, "initial_state", {"rotation", "position", "omega", "velocity"});
    if (s.contains("rotation")) {
      const json& r = s["rotation"];
      if (!r.is_array() || r.size() != 9) throw ConfigError("initial_state.rotation: expected 9 numbers");
      c.initial.pose.rotation = read_mat3(r, "initial_state.rotation");
    }
    if (s.contains("position")) c.initial.pose.position = read_vec3(s["position"], "initial_state.position");
    if (s.contains("omega")) c.initial.omega = read_vec3(s["omega"], "initial_state.omega");
    if (s.contains("velocity")) c.initial.velocity = read_vec3(s["velocity"], "initial_state.velocity");
  }
  if (j.contains("reference_model")) {
    try {
      c.reference = parse_reference_model(j["reference_model"].get<std::string>());
    } catch (const std::exception& e) {
      throw ConfigError(std::string("reference_model: ") + e.what());
    }
  }
  read(j, "seed", c.seed, "config");
  read(j, "output_dir", c.output_dir, "config");
  read(j, "report_times", c.report_times, "config");
  read(j, "lifted_csv_stride", c.lifted_csv_stride, "config");
  read(j, "export_model", c.export_model, "config");
  if (j.contains("baseline")) {
    const auto& b = j["baseline"];
    check_keys(b, "baseline", {"trajectories", "horizon", "omega_spread", "velocity_spread", "seed_offset"});
    read(b, "trajectories", c.baseline.trajectories, "baseline");
    read(b, "horizon", c.baseline.horizon, "baseline");
    read(b, "omega_spread", c.baseline.omega_spread, "baseline");
    read(b, "velocity_spread", c.baseline.velocity_spread, "baseline");
    read(b, "seed_offset", c.baseline.seed_offset, "baseline");
  }
  if (j.contains("recovery")) {
    const auto& r = j["recovery"];
    check_keys(r, "recovery", {"u_star_range", "horizon", "samples", "perturbations", "grid"});
    read(r, "u_star_range", c.recovery.u_star_range, "recovery");
    read(r, "horizon", c.recovery.horizon, "recovery");
    read(r, "samples", c.recovery.samples, "recovery");
    read(r, "perturbations", c.recovery.perturbations, "recovery");
    read(r, "grid", c.recovery.grid, "recovery");
  }
  if (j.contains("audit")) {
    const auto& a = j["audit"];
    check_keys(a, "audit",
               {"samples", "k_max", "omega_bar", "v_bar", "consistency_horizon", "consistency_hold",
                "consistency_tolerance", "b_samples", "controllability_grid", "tamper_a"});
    read(a, "samples", c.audit.samples, "audit");
    read(a, "k_max", c.audit.k_max, "audit");
    read(a, "omega_bar", c.audit.omega_bar, "audit");
    read(a, "v_bar", c.audit.v_bar, "audit");
    read(a, "consistency_horizon", c.audit.consistency_horizon, "audit");
    read(a, "consistency_hold", c.audit.consistency_hold, "audit");
    read(a, "consistency_tolerance", c.audit.consistency_tolerance, "audit");
    read(a, "b_samples", c.audit.b_samples, "audit");
    read(a, "controllability_grid", c.audit.controllability_grid, "audit");
    if (a.contains("tamper_a")) {
      const auto& t = a["tamper_a"];
      if (!t.is_array() || t.size() != 2 || !t[0].is_number_integer() || !t[1].is_number_integer()) {
        throw ConfigError("audit.tamper_a: expected [row, col]");
      }
      c.audit.tamper_a = std::make_pair(t[0].get<int>(), t[1].get<int>());
    }
  }

  // semantic checks
  try {
    c.params.validate();
    c.lift.validate();
    c.signal.validate();
  } catch (const DomainError& e) {
    throw ConfigError(e.what());
  }
  if (!is_rotation(c.initial.pose.rotation, 1e-9)) throw ConfigError("initial_state.rotation is not a rotation");
  if (!(c.dt > 0.0) || !(c.t_final > 0.0)) throw ConfigError("dt and t_final must be positive");
  if (c.grid.empty()) throw ConfigError("grid must not be empty");
  for (int n : c.grid) {
    if (n < 1) throw ConfigError("grid entries must be >= 1");
  }
  if (c.lifted_csv_stride < 1) throw ConfigError("lifted_csv_stride must be >= 1");
  if (c.baseline.trajectories < 1 || !(c.baseline.horizon > 0.0)) {
    throw ConfigError("baseline: need at least one trajectory and a positive horizon");
  }
  if (c.recovery.samples < 1 || c.recovery.perturbations < 0 || c.recovery.grid.empty()) {
    throw ConfigError("recovery: invalid sample counts or grid");
  }
  return c;
}

[[nodiscard]] inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  json j;
  try {
    j = json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw ConfigError("config '" + path + "': " + e.what());
  }
  return parse_config(j);
}

/// LiftConfig for truncation order n, normalization resolved against the
/// observed envelope when configured as automatic.
[[nodiscard]] inline LiftConfig lift_for(const ExperimentConfig& c, int n, double max_omega,
                                         double max_v) {
  LiftConfig l = c.lift;
  l.n1 = l.n2 = n;
  if (l.normalized && c.auto_normalization) {
    const auto [w0, v0] = default_normalization(max_omega, max_v);
    l.omega0 = w0;
    l.v0 = v0;
  }
  return l;
}

}  // namespace koopquad::bench
