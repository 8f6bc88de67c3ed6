// koopquad-bench: simulate, sweep, compare-baseline, audit, controllability,
// recover-input. Exit codes: 0 ok, 1 audit failure, 2 configuration error.

#include "koopquad/bench/config.hpp"
#include "koopquad/bench/experiments.hpp"
#include "koopquad/bench/manifest.hpp"
#include "koopquad/bench/svg.hpp"

#include "CLI11.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace koopquad;
using namespace koopquad::bench;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitAudit = 1;
constexpr int kExitConfig = 2;

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> reference;
  unsigned jobs = 1;
};

struct Context {
  ExperimentConfig cfg;
  json raw;
  fs::path out;
  unsigned jobs = 1;
  std::string hash;
};

Context load(const Options& o) {
  Context ctx;
  if (!o.config_path.empty()) {
    std::ifstream in(o.config_path);
    if (!in) throw ConfigError("cannot open config '" + o.config_path + "'");
    try {
      ctx.raw = json::parse(in, nullptr, true, true);
    } catch (const json::parse_error& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
  } else {
    ctx.raw = json::object();
  }
  if (o.seed) ctx.raw["seed"] = *o.seed;
  if (o.out) ctx.raw["output_dir"] = *o.out;
  if (o.reference) ctx.raw["reference_model"] = *o.reference;
  ctx.cfg = parse_config(ctx.raw);
  ctx.out = ctx.cfg.output_dir;
  ctx.jobs = std::max(1u, o.jobs);
  json hashed = ctx.raw;
  hashed.erase("output_dir");
  ctx.hash = config_hash(hashed);
  fs::create_directories(ctx.out);
  return ctx;
}

std::string g17(double v) {
  char b[32];
  std::snprintf(b, sizeof b, "%.17g", v);
  return b;
}

std::string cell(double v) {
  if (!std::isfinite(v)) return std::isnan(v) ? "undefined" : "diverged";
  char b[32];
  std::snprintf(b, sizeof b, "%.6e", v);
  return b;
}

void write_error_csv(const fs::path& p, const ErrorSeries& e) {
  std::ofstream os(p);
  os << "t,position,velocity,euler\n";
  for (std::size_t i = 0; i < e.times.size(); ++i) {
    os << g17(e.times[i]) << ',' << g17(e.position[i]) << ',' << g17(e.velocity[i]) << ','
       << g17(e.euler[i]) << '\n';
  }
}

LiftedTrajectory decimate(const LiftedTrajectory& lt, int stride) {
  LiftedTrajectory d;
  for (std::size_t i = 0; i < lt.size(); i += static_cast<std::size_t>(stride)) {
    d.times.push_back(lt.times[i]);
    d.states.push_back(lt.states[i]);
    d.inputs.push_back(lt.inputs[i]);
  }
  return d;
}

int cmd_simulate(const Context& ctx) {
  const auto& c = ctx.cfg;
  RunManifest m{"simulate", ctx.hash, c.seed, {}, json::object()};
  const auto t0 = std::chrono::steady_clock::now();
  const SweepResult s = sweep(c, c.t_final, ctx.jobs);
  {
    std::ofstream os(ctx.out / "reference.csv");
    write_trajectory_csv(os, s.reference);
    m.outputs.push_back("reference.csv");
  }
  for (const auto& r : s.runs) {
    const std::string tag = "N" + std::to_string(r.n);
    json info{{"n", r.n}, {"dimension", r.lift.dim()}, {"seconds", r.seconds}, {"diverged", r.diverged}};
    if (r.diverged) {
      info["failure"] = r.failure;
    } else {
      {
        std::ofstream os(ctx.out / ("lifted_" + tag + ".csv"));
        write_trajectory_csv(os, r.physical);
      }
      {
        std::ofstream os(ctx.out / ("lifted_state_" + tag + ".csv"));
        write_lifted_trajectory_csv(os, decimate(r.lifted, c.lifted_csv_stride), r.lift);
      }
      m.outputs.push_back("lifted_" + tag + ".csv");
      m.outputs.push_back("lifted_state_" + tag + ".csv");
      info["max_orthogonality_residual"] = r.lifted.max_orthogonality_residual;
    }
    if (c.export_model) {
      std::ofstream oa(ctx.out / ("A_" + tag + ".csv"));
      write_matrix_csv(oa, assemble_A(r.lift));
      std::ofstream ob(ctx.out / ("Bsel_" + tag + ".csv"));
      write_matrix_csv(ob, assemble_selector(r.lift));
      m.outputs.push_back("A_" + tag + ".csv");
      m.outputs.push_back("Bsel_" + tag + ".csv");
    }
    m.extra["runs"].push_back(info);
    std::printf("N1=N2=%d  dim %d  %s  %.1f s\n", r.n, r.lift.dim(),
                r.diverged ? "diverged" : "ok", r.seconds);
  }
  const double total = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  m.extra["seconds"] = total;
  m.extra["reference_model"] = to_string(c.reference);
  m.write(ctx.out);
  std::printf("simulate finished in %.1f s, outputs in %s\n", total, ctx.out.string().c_str());
  return kExitOk;
}

int cmd_sweep(const Context& ctx) {
  const auto& c = ctx.cfg;
  RunManifest m{"sweep", ctx.hash, c.seed, {}, json::object()};
  double horizon = c.t_final;
  for (double t : c.report_times) horizon = std::max(horizon, t);
  const SweepResult s = sweep(c, horizon, ctx.jobs);
  std::vector<Series> pos, vel, eul;
  for (const auto& r : s.runs) {
    const std::string tag = "N" + std::to_string(r.n);
    write_error_csv(ctx.out / ("errors_" + tag + ".csv"), r.errors);
    m.outputs.push_back("errors_" + tag + ".csv");
    const std::string label = "N1=N2=" + std::to_string(r.n);
    pos.push_back({label, r.errors.times, r.errors.position});
    vel.push_back({label, r.errors.times, r.errors.velocity});
    eul.push_back({label, r.errors.times, r.errors.euler});
  }
  const std::pair<const char*, std::vector<Series>*> plots[] = {
      {"position", &pos}, {"velocity", &vel}, {"euler", &eul}};
  for (const auto& [name, ser] : plots) {
    std::ofstream os(ctx.out / (std::string("error_") + name + ".svg"));
    write_log_plot(os, {std::string("Approximation error: ") + name}, *ser);
    m.outputs.push_back(std::string("error_") + name + ".svg");
  }
  std::ofstream os(ctx.out / "summary.csv");
  os << "t,quantity";
  for (const auto& r : s.runs) os << ",N1=N2=" << r.n;
  os << '\n';
  for (double t : c.report_times) {
    const char* names[] = {"x", "v", "euler"};
    for (int q = 0; q < 3; ++q) {
      os << g17(t) << ',' << names[q];
      for (const auto& r : s.runs) {
        const ErrorTriple e = errors_at(r.errors, t);
        os << ',' << cell(q == 0 ? e.position : q == 1 ? e.velocity : e.euler);
      }
      os << '\n';
    }
  }
  m.outputs.push_back("summary.csv");
  m.extra["envelope"] = {{"max_omega", s.envelope.max_omega}, {"max_v", s.envelope.max_v}};
  m.write(ctx.out);
  std::ifstream in(ctx.out / "summary.csv");
  std::cout << in.rdbuf();
  return kExitOk;
}

int cmd_compare_baseline(const Context& ctx) {
  const auto& c = ctx.cfg;
  RunManifest m{"compare-baseline", ctx.hash, c.seed, {}, json::object()};
  double t_report = 0.0;
  for (double t : c.report_times) t_report = std::max(t_report, t);
  if (t_report <= 0.0) t_report = c.t_final;

  ExperimentConfig cc = c;
  cc.grid = {25, 15};
  const SweepResult s = sweep(cc, t_report, ctx.jobs);

  FitResult fit;
  std::optional<std::string> fit_error;
  BaselineTraining training;
  try {
    training = train_baseline(c, ctx.jobs);
    fit = training.fit;
  } catch (const std::exception& e) {
    fit_error = e.what();
  }
  ErrorTriple base{NAN, NAN, NAN};
  if (fit.fitted) {
    try {
      const Trajectory pred = baseline_prediction(c, fit, s.reference);
      base = errors_at(approximation_error(pred, s.reference), t_report);
    } catch (const std::exception& e) {
      base = {INFINITY, INFINITY, INFINITY};
      m.extra["baseline_failure"] = e.what();
    }
  }
  std::ofstream os(ctx.out / "error_table.csv");
  os << "quantity,N1=N2=25,N1=N2=15,baseline\n";
  const char* names[] = {"x", "v", "euler"};
  for (int q = 0; q < 3; ++q) {
    auto pick = [q](const ErrorTriple& e) { return q == 0 ? e.position : q == 1 ? e.velocity : e.euler; };
    os << names[q] << ',' << cell(pick(errors_at(s.runs[0].errors, t_report))) << ','
       << cell(pick(errors_at(s.runs[1].errors, t_report))) << ','
       << (fit.fitted ? cell(pick(base)) : std::string("not fitted")) << '\n';
  }
  os.close();
  m.outputs.push_back("error_table.csv");
  if (fit.fitted) {
    std::ofstream fa(ctx.out / "baseline_A.csv");
    write_matrix_csv(fa, fit.a_d);
    std::ofstream fb(ctx.out / "baseline_B.csv");
    write_matrix_csv(fb, fit.b_d);
    m.outputs.push_back("baseline_A.csv");
    m.outputs.push_back("baseline_B.csv");
    m.extra["fit"] = {{"residual", fit.residual},
                      {"relative_residual", fit.relative_residual},
                      {"rank", fit.regressor_rank},
                      {"informative_rows", fit.informative_rows},
                      {"condition", fit.condition},
                      {"rank_deficient", fit.rank_deficient}};
    for (const auto& r : training.records) {
      m.extra["training"].push_back({{"seed", r.seed},
                                     {"horizon", r.horizon},
                                     {"omega0", {r.omega0.x(), r.omega0.y(), r.omega0.z()}},
                                     {"velocity0", {r.velocity0.x(), r.velocity0.y(), r.velocity0.z()}}});
    }
  }
  m.extra["t_report"] = t_report;
  m.write(ctx.out);
  std::ifstream in(ctx.out / "error_table.csv");
  std::cout << in.rdbuf();
  if (!fit.fitted) {
    std::fprintf(stderr, "baseline not fitted: %s\n", fit_error.value_or("unknown").c_str());
    return kExitAudit;
  }
  return kExitOk;
}

int cmd_audit(const Context& ctx) {
  const AuditReport rep = run_audit(ctx.cfg);
  json j = json::array();
  for (const auto& e : rep.entries) {
    std::printf("%-18s %s  %s\n", e.name.c_str(),
                e.informational ? "INFO" : (e.passed ? "PASS" : "FAIL"), e.detail.c_str());
    j.push_back({{"name", e.name}, {"passed", e.passed}, {"informational", e.informational}, {"detail", e.detail}});
  }
  std::ofstream(ctx.out / "audit.json") << json{{"passed", rep.passed()}, {"checks", j}}.dump(2) << '\n';
  RunManifest m{"audit", ctx.hash, ctx.cfg.seed, {"audit.json"}, json::object()};
  m.write(ctx.out);
  return rep.passed() ? kExitOk : kExitAudit;
}

int cmd_controllability(const Context& ctx) {
  const auto& c = ctx.cfg;
  std::ofstream os(ctx.out / "controllability.csv");
  os << "n1,n2,dimension,rank,powers,tolerance,sigma_min_kept\n";
  bool full = true;
  for (int n : c.audit.controllability_grid) {
    LiftConfig lc = c.lift;
    lc.n1 = lc.n2 = n;
    const RankReport r = controllability_rank(lc, true);
    full = full && r.rank == r.dimension;
    const double smin = r.rank > 0 ? r.singular_values(r.rank - 1) : 0.0;
    os << n << ',' << n << ',' << r.dimension << ',' << r.rank << ',' << r.powers_used << ','
       << g17(r.tolerance) << ',' << g17(smin) << '\n';
    std::printf("N1=N2=%d  N=%d  rank %d  (powers %d, tol %.3e)\n", n, r.dimension, r.rank,
                r.powers_used, r.tolerance);
  }
  RunManifest m{"controllability", ctx.hash, c.seed, {"controllability.csv"}, json::object()};
  m.write(ctx.out);
  return full ? kExitOk : kExitAudit;
}

int cmd_recover_input(const Context& ctx) {
  const auto& c = ctx.cfg;
  const Trajectory ref = reference_run(c, c.recovery.horizon);
  const Envelope env = envelope_of(ref);
  std::ofstream os(ctx.out / "recovery.csv");
  os << "n1,n2,mean_relative,max_relative,optimality_trials,optimality_failures,min_rank\n";
  const auto stats = parallel_map<RecoveryStats>(c.recovery.grid.size(), ctx.jobs, [&](std::size_t i) {
    return recovery_experiment(c, c.recovery.grid[i], ref);
  });
  bool ok = true;
  for (const auto& s : stats) {
    os << s.n << ',' << s.n << ',' << g17(s.mean_relative) << ',' << g17(s.max_relative) << ','
       << s.optimality_trials << ',' << s.optimality_failures << ',' << s.min_rank << '\n';
    std::printf("N1=N2=%d  relative residual mean %.4e max %.4e  (LS beaten %ld/%ld)\n", s.n,
                s.mean_relative, s.max_relative, s.optimality_failures, s.optimality_trials);
    ok = ok && s.optimality_failures == 0;
  }
  RunManifest m{"recover-input", ctx.hash, c.seed, {"recovery.csv"}, json::object()};
  m.extra["envelope"] = {{"max_omega", env.max_omega}, {"max_v", env.max_v}};
  m.write(ctx.out);
  return ok ? kExitOk : kExitAudit;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Analytic Koopman lift of quadrotor dynamics: experiments and audits"};
  app.require_subcommand(1);
  Options opt;
  std::uint64_t seed = 0;
  std::string out, reference;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config_path, "JSON experiment configuration");
    sub->add_option("--seed", seed, "override the configured seed");
    sub->add_option("--out", out, "output directory");
    sub->add_option("--reference-model", reference, "full | simplified | force-free")
        ->check(CLI::IsMember({"full", "simplified", "force-free", "force_free"}));
    sub->add_option("--jobs", opt.jobs, "worker threads")->check(CLI::PositiveNumber);
  };
  const std::pair<const char*, const char*> cmds[] = {
      {"simulate", "integrate the reference and lifted models, write trajectories"},
      {"sweep", "approximation error over the truncation grid, with plots"},
      {"compare-baseline", "error table against the EDMDc baseline"},
      {"audit", "run every invariant audit"},
      {"controllability", "numeric rank of the controllability matrix"},
      {"recover-input", "least-squares input recovery from random lifted inputs"}};
  std::vector<CLI::App*> subs;
  for (const auto& [name, help] : cmds) {
    subs.push_back(app.add_subcommand(name, help));
    add_common(subs.back());
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }
  for (auto* s : subs) {
    if (s->count("--seed")) opt.seed = seed;
    if (s->count("--out")) opt.out = out;
    if (s->count("--reference-model")) opt.reference = reference;
  }
  try {
    const Context ctx = load(opt);
    const std::string cmd = app.get_subcommands().front()->get_name();
    if (cmd == "simulate") return cmd_simulate(ctx);
    if (cmd == "sweep") return cmd_sweep(ctx);
    if (cmd == "compare-baseline") return cmd_compare_baseline(ctx);
    if (cmd == "audit") return cmd_audit(ctx);
    if (cmd == "controllability") return cmd_controllability(ctx);
    if (cmd == "recover-input") return cmd_recover_input(ctx);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitAudit;
  }
  return kExitConfig;
}
