// ssopf: command-line driver for the SSSC-OPF solver suite.
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "ssopf/case.hpp"
#include "ssopf/nlp.hpp"
#include "ssopf/power_flow.hpp"
#include "ssopf/sensitivity_check.hpp"
#include "ssopf/smallsignal.hpp"
#include "ssopf/solution.hpp"
#include "ssopf/sqpgs.hpp"
#include "ssopf/tdsim.hpp"

namespace fs = std::filesystem;
using namespace ssopf;

namespace {

struct Options {
  std::string case_path;
  std::optional<double> eta_bar;
  int p = 0;
  std::uint64_t seed = 0;
  std::optional<int> max_iter;
  std::optional<double> nu_in, nu_s, rho, eps, varpi, objective_scale;
  int threads = 1;
  std::string out = ".";
  bool log_modes = false;
  bool profile = false;

  // Operating point for analyze / simulate.
  std::string point;
  std::vector<double> dispatch_mw, v_gen;

  // simulate
  std::optional<int> load_bus;
  double load_step_mw = 0.2;
  double step_time = 0.5;
  double horizon = 60.0;
  double dt = 0.01;
  double window_start = 10.0;

  // sensitivity-check
  int points = 20;
  double fd_step = 1e-6;
};

NetworkCase open_case(const std::string& arg) {
  fs::path p(arg);
  if (!fs::exists(p)) {
    const fs::path bundled = fs::path(SSOPF_DATA_DIR) / (arg + ".json");
    if (fs::exists(bundled)) p = bundled;
  }
  return load_case(p);
}

fs::path out_dir(const Options& o) {
  fs::create_directories(o.out);
  return o.out;
}

SolverParams solver_params(const Options& o) {
  SolverParams sp;
  sp.p = o.p;
  sp.seed = o.seed;
  sp.threads = o.threads;
  sp.log_modes = o.log_modes;
  if (o.max_iter) sp.K_max = *o.max_iter;
  if (o.nu_in) sp.nu_in = *o.nu_in;
  if (o.nu_s) sp.nu_s = *o.nu_s;
  if (o.rho) sp.rho0 = *o.rho;
  if (o.eps) sp.eps0 = *o.eps;
  if (o.varpi) sp.varpi = *o.varpi;
  sp.validate();
  return sp;
}

/// Equilibrium from --point (a solution file) or --dispatch/--v-gen (power flow).
OperatingPoint operating_point(const NetworkCase& c, const Options& o) {
  if (!o.point.empty()) {
    const Vector x = solution_vector(c, read_json(o.point));
    return polish_equilibrium(c, point_from_vector(c, VariableLayout(c, true), x));
  }
  const int ng = c.num_generators();
  if (static_cast<int>(o.dispatch_mw.size()) != ng) {
    throw Error(fmt::format("give --point FILE or --dispatch with {} values in MW", ng));
  }
  PowerFlowSetpoints sp;
  sp.p_gen.resize(ng);
  sp.v_gen = Vector::Ones(ng);
  for (int g = 0; g < ng; ++g) sp.p_gen[g] = o.dispatch_mw[g] / c.base_mva;
  if (!o.v_gen.empty()) {
    if (static_cast<int>(o.v_gen.size()) != ng) throw Error(fmt::format("--v-gen needs {} values", ng));
    for (int g = 0; g < ng; ++g) sp.v_gen[g] = o.v_gen[g];
  }
  const PowerFlowSolution pf = solve_power_flow(c, sp);
  return steady_state_init(c, pf.p_gen, pf.q_gen, pf.v, pf.theta);
}

int run_analyze(const Options& o) {
  const NetworkCase c = open_case(o.case_path);
  const OperatingPoint op = operating_point(c, o);
  const SmallSignalAnalysis an = analyze_point(c, op);
  nlohmann::json j = modal_to_json(an.modal);
  j["case"] = c.name;
  j["cost"] = generation_cost(c, op.p_gen);
  j["p_gen_mw"] = std::vector<double>(op.p_gen.data(), op.p_gen.data() + op.p_gen.size());
  for (auto& v : j["p_gen_mw"]) v = v.get<double>() * c.base_mva;
  const fs::path path = out_dir(o) / "modal_report.json";
  write_json(j, path);
  fmt::print("eta = {:.6f}  lambda = {:.6f}{:+.6f}j  ({})\n", an.modal.eta, an.modal.lambda_eta.real(),
             an.modal.lambda_eta.imag(), path.string());
  return 0;
}

int run_opf(const Options& o, bool constrained) {
  if (constrained && !o.eta_bar) throw Error("sssc-opf requires --eta-bar");
  if (!constrained && o.eta_bar) throw Error("opf takes no --eta-bar; use sssc-opf");
  const NetworkCase c = open_case(o.case_path);
  const SolverParams sp = solver_params(o);
  const SsscOpfProblem problem(c, o.eta_bar, o.objective_scale.value_or(5e-3));
  const Vector x0 = flat_start(c, problem.layout());
  const fs::path dir = out_dir(o);
  Profile prof;

  SolverResult r;
  try {
    r = solve(problem, x0, sp, o.profile ? &prof : nullptr);
  } catch (const SolverError& e) {
    if (!e.trace().empty()) {
      emit_trace(e.trace(), dir / "trace.jsonl", dir / "trace.csv", sp.log_modes);
    }
    throw;
  }
  if (!r.trace.empty()) emit_trace(r.trace, dir / "trace.jsonl", dir / "trace.csv", sp.log_modes);
  const nlohmann::json sol = solution_to_json(problem, r, sp, o.profile);
  write_json(sol, dir / "solution.json");

  fmt::print("{}: cost {:.2f} $/h, eta {}, max sigma {:.2e}, {} iterations\n", to_string(r.status),
             sol["cost"].get<double>(),
             sol["eta"].is_null() ? std::string("n/a") : fmt::format("{:.5f}", sol["eta"].get<double>()),
             r.sigma_max, r.trace.size());
  if (o.profile) {
    for (const auto& [phase, secs] : r.seconds) fmt::print("  {:<12} {:8.3f} s\n", phase, secs);
  }
  return r.status == SolverStatus::kConverged ? 0 : 1;
}

int run_simulate(const Options& o) {
  const NetworkCase c = open_case(o.case_path);
  const OperatingPoint op = operating_point(c, o);
  SimConfig cfg;
  cfg.horizon = o.horizon;
  cfg.dt = o.dt;
  int bus = 0;
  if (o.load_bus) {
    bus = *o.load_bus;
  } else {
    for (const BusRecord& b : c.buses) {
      if (b.kind == BusKind::kLoad && b.p_load != 0.0) {
        bus = b.id;
        break;
      }
    }
  }
  if (o.load_step_mw != 0.0) cfg.disturbance = LoadStep{bus, o.load_step_mw / c.base_mva, 0.0, o.step_time};
  const Trajectory traj = simulate(c, op, cfg);
  const fs::path dir = out_dir(o);
  write_trajectory_csv(traj, dir / "trajectory.csv");

  nlohmann::json j;
  j["case"] = c.name;
  j["complete"] = traj.complete;
  if (!traj.complete) j["failure"] = traj.failure;
  j["eta"] = analyze_point(c, op).modal.eta;
  try {
    j["decay_rate"] = decay_rate_estimate(traj, o.window_start, traj.time.back());
  } catch (const Error& e) {
    j["decay_rate"] = nullptr;
    j["decay_error"] = e.what();
  }
  write_json(j, dir / "simulation.json");
  fmt::print("simulated {:.2f} s{}; modal eta {:.5f}, decay estimate {}\n", traj.time.back(),
             traj.complete ? "" : " (stopped early: " + traj.failure + ")", j["eta"].get<double>(),
             j["decay_rate"].is_null() ? std::string("n/a")
                                       : fmt::format("{:.5f}", j["decay_rate"].get<double>()));
  return traj.complete ? 0 : 1;
}

int run_sensitivity(const Options& o) {
  const NetworkCase c = open_case(o.case_path);
  SensitivityCheckOptions opts;
  opts.points = o.points;
  opts.seed = o.seed;
  opts.step = o.fd_step;
  const SensitivityReport rep = sensitivity_check(c, opts);
  const fs::path path = out_dir(o) / "sensitivity_report.json";
  write_json(report_to_json(c, rep), path);
  fmt::print("{} points, max relative error {:.3e} ({:.1f} s)\n", rep.points.size(), rep.max_rel_error,
             rep.seconds);
  return rep.max_rel_error <= 1e-4 ? 0 : 1;
}

void common_flags(CLI::App* cmd, Options& o) {
  cmd->add_option("--case", o.case_path, "case file, or the name of a bundled case")->required();
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--seed", o.seed, "random seed");
}

void solver_flags(CLI::App* cmd, Options& o) {
  cmd->add_option("--p", o.p, "gradient samples per nonsmooth function")->check(CLI::NonNegativeNumber);
  cmd->add_option("--max-iter", o.max_iter, "iteration limit");
  cmd->add_option("--nu-in", o.nu_in, "infeasibility tolerance");
  cmd->add_option("--nu-s", o.nu_s, "stationarity tolerance");
  cmd->add_option("--rho", o.rho, "initial penalty parameter");
  cmd->add_option("--eps", o.eps, "initial sampling radius");
  cmd->add_option("--varpi", o.varpi, "sufficient-decrease fraction");
  cmd->add_option("--objective-scale", o.objective_scale, "multiplier on the $/h objective");
  cmd->add_option("--threads", o.threads, "threads for gradient sampling")->check(CLI::PositiveNumber);
  cmd->add_flag("--log-modes", o.log_modes, "write the four most critical modes into the trace");
  cmd->add_flag("--profile", o.profile, "record per-phase wall-clock time");
}

void point_flags(CLI::App* cmd, Options& o) {
  cmd->add_option("--point", o.point, "solution.json of an earlier run");
  cmd->add_option("--dispatch", o.dispatch_mw, "P_G per generator in MW (power flow)")->delimiter(',');
  cmd->add_option("--v-gen", o.v_gen, "generator voltage setpoints in pu")->delimiter(',');
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Small-signal-stability-constrained OPF by SQP with gradient sampling"};
  app.require_subcommand(1);
  Options o;

  auto* analyze = app.add_subcommand("analyze", "modal analysis at an operating point");
  common_flags(analyze, o);
  point_flags(analyze, o);

  auto* opf = app.add_subcommand("opf", "OPF without the spectral constraint");
  common_flags(opf, o);
  solver_flags(opf, o);

  auto* sssc = app.add_subcommand("sssc-opf", "OPF with eta(x) <= eta_bar");
  common_flags(sssc, o);
  solver_flags(sssc, o);
  sssc->add_option("--eta-bar", o.eta_bar, "bound on the spectral abscissa")->required();

  auto* sim = app.add_subcommand("simulate", "time-domain response to a load step");
  common_flags(sim, o);
  point_flags(sim, o);
  sim->add_option("--load-bus", o.load_bus, "bus id of the load step (default: first load bus)");
  sim->add_option("--load-step-mw", o.load_step_mw, "load increase in MW (0 = no disturbance)");
  sim->add_option("--step-time", o.step_time, "time of the load step (s)");
  sim->add_option("--horizon", o.horizon, "simulated time (s)");
  sim->add_option("--dt", o.dt, "integration step (s)");
  sim->add_option("--window-start", o.window_start, "start of the decay-fit window (s)");

  auto* sens = app.add_subcommand("sensitivity-check", "closed-form vs finite-difference eta gradient");
  common_flags(sens, o);
  sens->add_option("--points", o.points, "number of random feasible points")->check(CLI::PositiveNumber);
  sens->add_option("--fd-step", o.fd_step, "central-difference step");

  CLI11_PARSE(app, argc, argv);

  try {
    if (analyze->parsed()) return run_analyze(o);
    if (opf->parsed()) return run_opf(o, false);
    if (sssc->parsed()) return run_opf(o, true);
    if (sim->parsed()) return run_simulate(o);
    if (sens->parsed()) return run_sensitivity(o);
  } catch (const CaseError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    for (const Diagnostic& d : e.diagnostics()) fmt::print(stderr, "  {}: {}\n", d.locator, d.message);
    return 2;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 2;
  }
  return 2;
}
