#include "ssopf/network.hpp"

#include <map>

#include <Eigen/LU>
#include <fmt/format.h>

#include "ssopf/power_flow.hpp"

namespace ssopf {

NetworkTopology::NetworkTopology(const NetworkCase& c)
    : g_diag_(c.num_buses(), 0.0), b_diag_(c.num_buses(), 0.0), off_(c.num_buses()) {
  std::vector<std::map<int, Complex>> rows(c.num_buses());
  for (const LineRecord& line : c.lines) {
    const int f = c.bus_index(line.from_bus);
    const int t = c.bus_index(line.to_bus);
    const Complex diag = line.series_admittance + line.shunt_admittance_half;
    g_diag_[f] += diag.real();
    b_diag_[f] += diag.imag();
    g_diag_[t] += diag.real();
    b_diag_[t] += diag.imag();
    rows[f][t] -= line.series_admittance;
    rows[t][f] -= line.series_admittance;
  }
  for (int i = 0; i < c.num_buses(); ++i) {
    for (const auto& [j, y] : rows[i]) off_[i].push_back({j, y.real(), y.imag()});
  }
}

PowerFlowSolution solve_power_flow(const NetworkCase& c, const PowerFlowSetpoints& sp, double tol,
                                   int max_iter) {
  const NetworkTopology net(c);
  const int nb = c.num_buses();
  const int ng = c.num_generators();
  const int ref = c.reference_bus_index();
  const auto slack = c.generator_at(ref);
  if (!slack) throw PowerFlowError("angle reference bus carries no generator to act as slack");
  if (sp.p_gen.size() != ng || sp.v_gen.size() != ng) {
    throw PowerFlowError("setpoint vectors must have one entry per generator");
  }

  Vector v = Vector::Ones(nb);
  Vector theta = Vector::Zero(nb);
  Vector p_spec = Vector::Zero(nb);
  Vector q_spec = Vector::Zero(nb);
  std::vector<bool> pv(nb, false);
  for (int b = 0; b < nb; ++b) {
    p_spec[b] = -c.buses[b].p_load;
    q_spec[b] = -c.buses[b].q_load;
  }
  for (int g = 0; g < ng; ++g) {
    const int b = c.bus_index(c.generators[g].bus);
    v[b] = sp.v_gen[g];
    pv[b] = true;
    if (g != *slack) p_spec[b] += sp.p_gen[g];
  }

  // Unknowns: theta at every non-reference bus, V at every load bus.
  std::vector<int> theta_col(nb, -1), v_col(nb, -1);
  int n = 0;
  for (int b = 0; b < nb; ++b) {
    if (b != ref) theta_col[b] = n++;
  }
  for (int b = 0; b < nb; ++b) {
    if (!pv[b]) v_col[b] = n++;
  }

  auto volt = [&](int j) { return v[j]; };
  auto angle = [&](int j) { return theta[j]; };
  PowerFlowSolution sol;
  for (int it = 0; it <= max_iter; ++it) {
    Vector mis(n);
    Matrix jac = Matrix::Zero(n, n);
    for (int b = 0; b < nb; ++b) {
      const auto s = bus_injection<double>(net, b, volt, angle);
      const int rp = theta_col[b];
      const int rq = v_col[b];
      if (rp >= 0) mis[rp] = p_spec[b] - s.p;
      if (rq >= 0) mis[rq] = q_spec[b] - s.q;
      bus_injection_jacobian<double>(net, b, volt, angle,
                                     [&](int j, double dp_dt, double dq_dt, double dp_dv,
                                         double dq_dv) {
                                       if (rp >= 0 && theta_col[j] >= 0) jac(rp, theta_col[j]) = dp_dt;
                                       if (rp >= 0 && v_col[j] >= 0) jac(rp, v_col[j]) = dp_dv;
                                       if (rq >= 0 && theta_col[j] >= 0) jac(rq, theta_col[j]) = dq_dt;
                                       if (rq >= 0 && v_col[j] >= 0) jac(rq, v_col[j]) = dq_dv;
                                     });
    }
    sol.mismatch = n > 0 ? mis.cwiseAbs().maxCoeff() : 0.0;
    sol.iterations = it;
    if (sol.mismatch <= tol) break;
    if (it == max_iter || !std::isfinite(sol.mismatch)) {
      throw PowerFlowError(fmt::format("power flow did not converge (mismatch {:.3e})",
                                       sol.mismatch));
    }
    const Vector step = jac.partialPivLu().solve(mis);
    for (int b = 0; b < nb; ++b) {
      if (theta_col[b] >= 0) theta[b] += step[theta_col[b]];
      if (v_col[b] >= 0) v[b] += step[v_col[b]];
    }
  }

  sol.v = v;
  sol.theta = theta;
  sol.p_gen = Vector(ng);
  sol.q_gen = Vector(ng);
  for (int g = 0; g < ng; ++g) {
    const int b = c.bus_index(c.generators[g].bus);
    const auto s = bus_injection<double>(net, b, volt, angle);
    sol.p_gen[g] = s.p + c.buses[b].p_load;
    sol.q_gen[g] = s.q + c.buses[b].q_load;
  }
  return sol;
}

}  // namespace ssopf
