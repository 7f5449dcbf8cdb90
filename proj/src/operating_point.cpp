#include "ssopf/operating_point.hpp"

#include <numbers>

#include <fmt/format.h>

#include "ssopf/network.hpp"

namespace ssopf {

VariableLayout::VariableLayout(const NetworkCase& c, bool pin_reference_angle)
    : ng_(c.num_generators()),
      nb_(c.num_buses()),
      ref_(c.reference_bus_index()),
      pinned_(pin_reference_angle) {
  const int lengths[10] = {ng_, ng_, nb_, pinned_ ? nb_ - 1 : nb_, ng_, ng_, ng_, ng_, ng_, ng_};
  for (int k = 0; k < 10; ++k) {
    slices_[k] = {size_, lengths[k]};
    size_ += lengths[k];
  }
}

int VariableLayout::theta(int b) const {
  const int off = slice(Block::kTheta).offset;
  if (!pinned_) return off + b;
  if (b == ref_) return -1;
  return off + (b < ref_ ? b : b - 1);
}

std::string VariableLayout::name(int i) const {
  static const char* kNames[10] = {"P_G", "Q_G", "V", "theta", "delta",
                                   "Ed'", "Eq'", "Id",  "Iq",    "Efd"};
  for (int k = 0; k < 10; ++k) {
    const Slice s = slices_[k];
    if (i >= s.offset && i < s.offset + s.length) {
      int local = i - s.offset;
      if (k == static_cast<int>(Block::kTheta) && pinned_ && local >= ref_) ++local;
      return fmt::format("{}[{}]", kNames[k], local);
    }
  }
  return fmt::format("x[{}]", i);
}

OperatingPoint point_from_vector(const NetworkCase& c, const VariableLayout& layout,
                                 const Vector& x) {
  const int ng = c.num_generators();
  const int nb = c.num_buses();
  if (x.size() != layout.size()) {
    throw Error(fmt::format("variable vector has length {}, expected {}", x.size(), layout.size()));
  }
  OperatingPoint op;
  op.p_gen.resize(ng);
  op.q_gen.resize(ng);
  op.delta.resize(ng);
  op.ed_prime.resize(ng);
  op.eq_prime.resize(ng);
  op.id.resize(ng);
  op.iq.resize(ng);
  op.efd.resize(ng);
  for (int g = 0; g < ng; ++g) {
    op.p_gen[g] = x[layout.p_gen(g)];
    op.q_gen[g] = x[layout.q_gen(g)];
    op.delta[g] = x[layout.delta(g)];
    op.ed_prime[g] = x[layout.ed_prime(g)];
    op.eq_prime[g] = x[layout.eq_prime(g)];
    op.id[g] = x[layout.id(g)];
    op.iq[g] = x[layout.iq(g)];
    op.efd[g] = x[layout.efd(g)];
  }
  op.v.resize(nb);
  op.theta.resize(nb);
  for (int b = 0; b < nb; ++b) {
    op.v[b] = x[layout.v(b)];
    const int t = layout.theta(b);
    op.theta[b] = t >= 0 ? x[t] : 0.0;
  }
  fill_steady_state_inputs(c, op);
  return op;
}

Vector point_to_vector(const VariableLayout& layout, const OperatingPoint& op) {
  Vector x(layout.size());
  for (int g = 0; g < layout.num_generators(); ++g) {
    x[layout.p_gen(g)] = op.p_gen[g];
    x[layout.q_gen(g)] = op.q_gen[g];
    x[layout.delta(g)] = op.delta[g];
    x[layout.ed_prime(g)] = op.ed_prime[g];
    x[layout.eq_prime(g)] = op.eq_prime[g];
    x[layout.id(g)] = op.id[g];
    x[layout.iq(g)] = op.iq[g];
    x[layout.efd(g)] = op.efd[g];
  }
  for (int b = 0; b < layout.num_buses(); ++b) {
    x[layout.v(b)] = op.v[b];
    const int t = layout.theta(b);
    if (t >= 0) x[t] = op.theta[b];
  }
  return x;
}

void fill_steady_state_inputs(const NetworkCase& c, OperatingPoint& op) {
  const int ng = c.num_generators();
  op.omega.resize(ng);
  op.vr.resize(ng);
  op.rf.resize(ng);
  op.tm.resize(ng);
  op.vref.resize(ng);
  for (int g = 0; g < ng; ++g) {
    const GeneratorRecord& gen = c.generators[g];
    const MachineDynamics& m = gen.machine;
    const ExciterParams& e = gen.exciter;
    const int b = c.bus_index(gen.bus);
    op.omega[g] = m.omega_s;
    op.vr[g] = (e.ke + e.saturation(op.efd[g])) * op.efd[g];
    op.rf[g] = e.kf / e.tf * op.efd[g];
    op.vref[g] = op.v[b] + op.vr[g] / e.ka;
    op.tm[g] = (op.eq_prime[g] - m.xd_prime * op.id[g]) * op.iq[g] +
               (op.ed_prime[g] + m.xq_prime * op.iq[g]) * op.id[g];
  }
}

MachineSteadyState solve_machine_steady_state(const MachineDynamics& m, double p, double q,
                                              double v, double theta) {
  const Complex vt = std::polar(v, theta);
  const Complex it = std::conj(Complex(p, q) / vt);
  const Complex e = vt + Complex(m.rs, m.xq) * it;
  MachineSteadyState s;
  s.delta = std::arg(e);
  const Complex rot = std::polar(1.0, -(s.delta - std::numbers::pi / 2));
  const Complex idq = it * rot;
  const Complex vdq = vt * rot;
  s.id = idq.real();
  s.iq = idq.imag();
  s.ed_prime = (m.xq - m.xq_prime) * s.iq;
  s.eq_prime = vdq.imag() + m.rs * s.iq + m.xd_prime * s.id;
  s.efd = s.eq_prime + (m.xd - m.xd_prime) * s.id;
  return s;
}

std::array<double, 6> machine_init_residuals(const MachineDynamics& m, double p, double q,
                                             double v, double theta,
                                             const MachineSteadyState& s) {
  const double sn = std::sin(s.delta - theta);
  const double cs = std::cos(s.delta - theta);
  return {
      s.ed_prime - v * sn - m.rs * s.id + m.xq_prime * s.iq,
      s.eq_prime - v * cs - m.rs * s.iq - m.xd_prime * s.id,
      s.id * v * sn + s.iq * v * cs - p,
      s.id * v * cs - s.iq * v * sn - q,
      s.efd - s.eq_prime - (m.xd - m.xd_prime) * s.id,
      s.ed_prime - (m.xq - m.xq_prime) * s.iq,
  };
}

Vector power_balance_residuals(const NetworkCase& c, const Vector& p_gen, const Vector& q_gen,
                               const Vector& v, const Vector& theta) {
  const NetworkTopology net(c);
  const int nb = c.num_buses();
  Vector r(2 * nb);
  auto volt = [&](int j) { return v[j]; };
  auto angle = [&](int j) { return theta[j]; };
  for (int b = 0; b < nb; ++b) {
    const auto s = bus_injection<double>(net, b, volt, angle);
    r[b] = -c.buses[b].p_load - s.p;
    r[nb + b] = -c.buses[b].q_load - s.q;
  }
  for (int g = 0; g < c.num_generators(); ++g) {
    const int b = c.bus_index(c.generators[g].bus);
    r[b] += p_gen[g];
    r[nb + b] += q_gen[g];
  }
  return r;
}

OperatingPoint steady_state_init(const NetworkCase& c, const Vector& p_gen, const Vector& q_gen,
                                 const Vector& v, const Vector& theta, double tol) {
  const Vector pb = power_balance_residuals(c, p_gen, q_gen, v, theta);
  const double mismatch = pb.cwiseAbs().maxCoeff();
  if (mismatch > tol) {
    throw InitError(fmt::format("dispatch is not power-flow consistent (mismatch {:.3e})",
                                mismatch));
  }
  const int ng = c.num_generators();
  OperatingPoint op;
  op.p_gen = p_gen;
  op.q_gen = q_gen;
  op.v = v;
  op.theta = theta;
  op.delta.resize(ng);
  op.ed_prime.resize(ng);
  op.eq_prime.resize(ng);
  op.id.resize(ng);
  op.iq.resize(ng);
  op.efd.resize(ng);
  for (int g = 0; g < ng; ++g) {
    const MachineDynamics& m = c.generators[g].machine;
    const int b = c.bus_index(c.generators[g].bus);
    const MachineSteadyState s = solve_machine_steady_state(m, p_gen[g], q_gen[g], v[b], theta[b]);
    for (double r : machine_init_residuals(m, p_gen[g], q_gen[g], v[b], theta[b], s)) {
      if (!(std::abs(r) <= tol)) {
        throw InitError(fmt::format("machine at bus {} cannot be initialized (residual {:.3e})",
                                    c.generators[g].bus, r));
      }
    }
    op.delta[g] = s.delta;
    op.ed_prime[g] = s.ed_prime;
    op.eq_prime[g] = s.eq_prime;
    op.id[g] = s.id;
    op.iq[g] = s.iq;
    op.efd[g] = s.efd;
  }
  fill_steady_state_inputs(c, op);
  return op;
}

}  // namespace ssopf
