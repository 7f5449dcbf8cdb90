#include "ssopf/tdsim.hpp"

#include <cmath>
#include <fstream>

#include <Eigen/LU>
#include <fmt/format.h>

#include "ssopf/power_flow.hpp"

namespace ssopf {

void SimConfig::validate() const {
  if (!(dt > 0.0)) throw Error(fmt::format("time step must be positive (got {})", dt));
  if (!(horizon >= dt)) throw Error(fmt::format("horizon {} is shorter than the step {}", horizon, dt));
  if (!(newton_tol > 0.0)) throw Error("Newton tolerance must be positive");
  if (newton_max_iter < 1) throw Error("Newton needs at least one iteration");
  if (disturbance && !(disturbance->time >= 0.0)) throw Error("disturbance time must be >= 0");
}

double algebraic_residual(const DaeModel& model, const DaeState& x, const DaeInputs& u) {
  const Vector g = model.g(x.s, x.y, u);
  return g.size() ? g.lpNorm<Eigen::Infinity>() : 0.0;
}

DaeState solve_algebraic(const DaeModel& model, const DaeState& x, const DaeInputs& u, double tol,
                         int max_iter) {
  const int ns = model.num_states();
  const int na = model.num_algebraic();
  DaeState out = x;
  double res = 0.0;
  for (int it = 0; it <= max_iter; ++it) {
    const Vector g = model.g(out.s, out.y, u);
    res = g.lpNorm<Eigen::Infinity>();
    if (res <= tol) return out;
    if (it == max_iter || !std::isfinite(res)) break;
    const Matrix jac = model.jacobian(model.jacobian_point(out.s, out.y));
    out.y -= jac.block(ns, ns, na, na).partialPivLu().solve(g);
  }
  throw StepError(fmt::format("algebraic solve did not converge (residual {:.3e})", res), res);
}

DaeState dae_step(const DaeModel& model, const DaeState& x, const DaeInputs& u, double dt,
                  double tol, int max_iter) {
  const int ns = model.num_states();
  const int na = model.num_algebraic();
  const Vector f0 = model.f(x.s, x.y, u);
  DaeState next = x;
  next.s += dt * f0;  // explicit predictor
  Vector r(ns + na);
  double res = 0.0;
  for (int it = 0; it <= max_iter; ++it) {
    r.head(ns) = next.s - x.s - 0.5 * dt * (f0 + model.f(next.s, next.y, u));
    r.tail(na) = model.g(next.s, next.y, u);
    res = r.lpNorm<Eigen::Infinity>();
    if (res <= tol) return next;
    if (it == max_iter || !std::isfinite(res)) break;
    Matrix jac = model.jacobian(model.jacobian_point(next.s, next.y));
    jac.topRows(ns) *= -0.5 * dt;
    jac.topLeftCorner(ns, ns).diagonal().array() += 1.0;
    const Vector delta = jac.partialPivLu().solve(r);
    next.s -= delta.head(ns);
    next.y -= delta.tail(na);
  }
  throw StepError(fmt::format("trapezoidal Newton did not converge (residual {:.3e})", res), res);
}

OperatingPoint dae_step(const NetworkCase& c, const OperatingPoint& op, double dt, double tol) {
  const DaeModel model(c);
  DaeState x;
  model.pack(op, x.s, x.y);
  const DaeInputs u = model.inputs(op);
  const double r0 = algebraic_residual(model, x, u);
  if (r0 > tol) {
    throw StepError(fmt::format("starting point violates the algebraic equations ({:.3e})", r0), r0);
  }
  const DaeState next = dae_step(model, x, u, dt, tol);
  OperatingPoint out = op;
  model.unpack(next.s, next.y, out);
  return out;
}

namespace {

void record(const DaeModel& model, const DaeState& x, double t, const OperatingPoint& base,
            Trajectory& traj) {
  OperatingPoint op = base;
  model.unpack(x.s, x.y, op);
  Vector w(model.num_machines());
  for (int g = 0; g < model.num_machines(); ++g) w[g] = x.s[model.state(g, kOmega)];
  traj.time.push_back(t);
  traj.omega.push_back(std::move(w));
  traj.points.push_back(std::move(op));
}

}  // namespace

Trajectory simulate(const NetworkCase& c, const OperatingPoint& x_star, const SimConfig& config) {
  config.validate();
  const DaeModel model(c);
  DaeState x;
  model.pack(x_star, x.s, x.y);
  DaeInputs u = model.inputs(x_star);

  const double r0 = std::max(algebraic_residual(model, x, u),
                             model.f(x.s, x.y, u).lpNorm<Eigen::Infinity>());
  if (r0 > 1e-6) {
    throw InitError(fmt::format("simulation must start from an equilibrium (residual {:.3e})", r0));
  }

  Trajectory traj;
  traj.omega_s = c.generators.empty() ? 0.0 : c.generators[0].machine.omega_s;
  for (const GeneratorRecord& g : c.generators) traj.inertia.push_back(g.machine.M);

  int step_bus = -1;
  if (config.disturbance) step_bus = c.bus_index(config.disturbance->bus_id);
  bool applied = false;

  const long steps = std::lround(std::ceil(config.horizon / config.dt - 1e-9));
  record(model, x, 0.0, x_star, traj);
  for (long k = 0; k < steps; ++k) {
    const double t = k * config.dt;
    try {
      if (step_bus >= 0 && !applied && t >= config.disturbance->time - 1e-12) {
        u.p_load[step_bus] += config.disturbance->dp;
        u.q_load[step_bus] += config.disturbance->dq;
        x = solve_algebraic(model, x, u, config.newton_tol, config.newton_max_iter);
        applied = true;
        // The algebraic variables jump; keep both sides of the discontinuity.
        record(model, x, t, x_star, traj);
      }
      x = dae_step(model, x, u, config.dt, config.newton_tol, config.newton_max_iter);
    } catch (const StepError& e) {
      traj.complete = false;
      traj.failure = fmt::format("step at t = {:.4f} s failed: {}", t, e.what());
      return traj;
    }
    record(model, x, (k + 1) * config.dt, x_star, traj);
  }
  return traj;
}

std::vector<double> speed_deviation(const Trajectory& traj, SpeedReference ref) {
  std::vector<double> out;
  out.reserve(traj.omega.size());
  double msum = 0.0;
  for (double m : traj.inertia) msum += m;
  for (const Vector& w : traj.omega) {
    double w_ref = traj.omega_s;
    if (ref == SpeedReference::kCentreOfInertia && msum > 0.0) {
      w_ref = 0.0;
      for (int g = 0; g < w.size(); ++g) w_ref += traj.inertia[g] * w[g];
      w_ref /= msum;
    }
    out.push_back((w.array() - w_ref).abs().maxCoeff());
  }
  return out;
}

namespace {

constexpr double kRelativeNoiseFloor = 1e-8;

double ls_slope(const std::vector<double>& t, const std::vector<double>& y) {
  const double n = static_cast<double>(t.size());
  double st = 0, sy = 0, stt = 0, sty = 0;
  for (size_t i = 0; i < t.size(); ++i) {
    st += t[i];
    sy += y[i];
    stt += t[i] * t[i];
    sty += t[i] * y[i];
  }
  const double den = n * stt - st * st;
  if (!(den > 0.0)) throw Error("decay fit needs samples at distinct times");
  return (n * sty - st * sy) / den;
}

}  // namespace

double decay_rate_estimate(const std::vector<double>& t, const std::vector<double>& signal,
                           double t_begin, double t_end) {
  if (t.size() != signal.size()) throw Error("time and signal lengths differ");
  std::vector<size_t> idx;
  for (size_t i = 0; i < t.size(); ++i) {
    if (t[i] >= t_begin && t[i] <= t_end) idx.push_back(i);
  }
  if (idx.size() < 10) {
    throw Error(fmt::format("decay fit needs at least 10 samples in the window (got {})", idx.size()));
  }
  double peak = 0.0;
  for (size_t i : idx) peak = std::max(peak, std::abs(signal[i]));
  if (!(peak >= 1e-12)) throw Error("signal is below 1e-12; nothing to fit");
  // Once the signal has decayed into integration noise the fit is meaningless; cut it there.
  const double floor = std::max(1e-12, kRelativeNoiseFloor * peak);
  std::vector<double> tail_max(idx.size() + 1, 0.0);
  for (size_t j = idx.size(); j-- > 0;) tail_max[j] = std::max(tail_max[j + 1], std::abs(signal[idx[j]]));
  size_t keep = idx.size();
  while (keep > 0 && tail_max[keep - 1] < floor) --keep;
  idx.resize(keep);
  if (idx.size() < 10) throw Error("signal decays into noise before 10 samples; shorten the window");

  // Local maxima of |signal|, refined by a parabola through the neighbours.
  std::vector<double> pt, py;
  for (size_t j = 1; j + 1 < idx.size(); ++j) {
    const double a = std::abs(signal[idx[j - 1]]);
    const double b = std::abs(signal[idx[j]]);
    const double c = std::abs(signal[idx[j + 1]]);
    if (!(b > a && b >= c) || b < 1e-12) continue;
    const double h = t[idx[j + 1]] - t[idx[j]];
    const double den = a - 2.0 * b + c;
    double off = 0.0, val = b;
    if (den < 0.0 && std::abs(t[idx[j]] - t[idx[j - 1]] - h) < 1e-9 * h) {
      off = 0.5 * (a - c) / den;
      val = b - 0.25 * (a - c) * off;
    }
    pt.push_back(t[idx[j]] + off * h);
    py.push_back(std::log(val));
  }
  if (pt.size() >= 3) return ls_slope(pt, py);

  pt.clear();
  py.clear();
  for (size_t i : idx) {
    const double v = std::abs(signal[i]);
    if (v < 1e-12) continue;
    pt.push_back(t[i]);
    py.push_back(std::log(v));
  }
  if (pt.size() < 2) throw Error("signal is below 1e-12; nothing to fit");
  return ls_slope(pt, py);
}

double decay_rate_estimate(const Trajectory& traj, double t_begin, double t_end,
                           SpeedReference ref) {
  return decay_rate_estimate(traj.time, speed_deviation(traj, ref), t_begin, t_end);
}

OperatingPoint polish_equilibrium(const NetworkCase& c, const OperatingPoint& op) {
  const int ng = c.num_generators();
  PowerFlowSetpoints sp;
  sp.p_gen = op.p_gen;
  sp.v_gen.resize(ng);
  for (int g = 0; g < ng; ++g) sp.v_gen[g] = op.v[c.bus_index(c.generators[g].bus)];
  const PowerFlowSolution pf = solve_power_flow(c, sp);
  return steady_state_init(c, pf.p_gen, pf.q_gen, pf.v, pf.theta);
}

void write_trajectory_csv(const Trajectory& traj, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(fmt::format("cannot write {}", path.string()));
  out << "t";
  const size_t ng = traj.omega.empty() ? traj.inertia.size() : traj.omega.front().size();
  for (size_t g = 0; g < ng; ++g) out << ",omega_" << g + 1;
  out << '\n';
  for (size_t k = 0; k < traj.time.size(); ++k) {
    out << fmt::format("{:.17g}", traj.time[k]);
    for (int g = 0; g < traj.omega[k].size(); ++g) out << fmt::format(",{:.17g}", traj.omega[k][g]);
    out << '\n';
  }
  if (!out) throw Error(fmt::format("failed writing {}", path.string()));
}

}  // namespace ssopf
