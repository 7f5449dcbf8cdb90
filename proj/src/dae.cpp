#include "ssopf/dae.hpp"

namespace ssopf {

DaeModel::DaeModel(const NetworkCase& c)
    : case_(&c),
      net_(c),
      ng_(c.num_generators()),
      nb_(c.num_buses()),
      slot_(c.num_buses(), -1),
      gen_bus_(c.num_generators()) {
  for (int g = 0; g < ng_; ++g) {
    gen_bus_[g] = c.bus_index(c.generators[g].bus);
    slot_[gen_bus_[g]] = static_cast<int>(slot_bus_.size());
    slot_bus_.push_back(gen_bus_[g]);
  }
  for (int b = 0; b < nb_; ++b) {
    if (slot_[b] < 0) {
      slot_[b] = static_cast<int>(slot_bus_.size());
      slot_bus_.push_back(b);
    }
  }
}

void DaeModel::pack(const OperatingPoint& op, Vector& s, Vector& y) const {
  s.resize(num_states());
  y.resize(num_algebraic());
  for (int g = 0; g < ng_; ++g) {
    s[state(g, kDelta)] = op.delta[g];
    s[state(g, kOmega)] = op.omega[g];
    s[state(g, kEqPrime)] = op.eq_prime[g];
    s[state(g, kEdPrime)] = op.ed_prime[g];
    s[state(g, kEfd)] = op.efd[g];
    s[state(g, kVr)] = op.vr[g];
    s[state(g, kRf)] = op.rf[g];
    y[id(g)] = op.id[g];
    y[iq(g)] = op.iq[g];
  }
  for (int b = 0; b < nb_; ++b) {
    y[theta(b)] = op.theta[b];
    y[v(b)] = op.v[b];
  }
}

DaeInputs DaeModel::inputs(const OperatingPoint& op) const {
  DaeInputs u;
  u.tm = op.tm;
  u.vref = op.vref;
  u.p_load.resize(nb_);
  u.q_load.resize(nb_);
  for (int b = 0; b < nb_; ++b) {
    u.p_load[b] = case_->buses[b].p_load;
    u.q_load[b] = case_->buses[b].q_load;
  }
  return u;
}

void DaeModel::unpack(const Vector& s, const Vector& y, OperatingPoint& op) const {
  op.delta.resize(ng_);
  op.omega.resize(ng_);
  op.eq_prime.resize(ng_);
  op.ed_prime.resize(ng_);
  op.efd.resize(ng_);
  op.vr.resize(ng_);
  op.rf.resize(ng_);
  op.id.resize(ng_);
  op.iq.resize(ng_);
  op.p_gen.resize(ng_);
  op.q_gen.resize(ng_);
  op.v.resize(nb_);
  op.theta.resize(nb_);
  for (int b = 0; b < nb_; ++b) {
    op.theta[b] = y[theta(b)];
    op.v[b] = y[v(b)];
  }
  for (int g = 0; g < ng_; ++g) {
    op.delta[g] = s[state(g, kDelta)];
    op.omega[g] = s[state(g, kOmega)];
    op.eq_prime[g] = s[state(g, kEqPrime)];
    op.ed_prime[g] = s[state(g, kEdPrime)];
    op.efd[g] = s[state(g, kEfd)];
    op.vr[g] = s[state(g, kVr)];
    op.rf[g] = s[state(g, kRf)];
    op.id[g] = y[id(g)];
    op.iq[g] = y[iq(g)];
    const int b = gen_bus_[g];
    const double a = op.delta[g] - op.theta[b];
    op.p_gen[g] = op.id[g] * op.v[b] * std::sin(a) + op.iq[g] * op.v[b] * std::cos(a);
    op.q_gen[g] = op.id[g] * op.v[b] * std::cos(a) - op.iq[g] * op.v[b] * std::sin(a);
  }
}

Vector DaeModel::f(const Vector& s, const Vector& y, const DaeInputs& u) const {
  Vector out(num_states());
  for (int i = 0; i < ng_; ++i) {
    const MachineDynamics& m = case_->generators[i].machine;
    const ExciterParams& e = case_->generators[i].exciter;
    const int r = kStatesPerMachine * i;
    const double w = s[r + kOmega];
    const double eqp = s[r + kEqPrime];
    const double edp = s[r + kEdPrime];
    const double efd = s[r + kEfd];
    const double vr = s[r + kVr];
    const double rf = s[r + kRf];
    const double idd = y[id(i)];
    const double iqq = y[iq(i)];
    const double vb = y[v(gen_bus_[i])];
    const double te = (eqp - m.xd_prime * idd) * iqq + (edp + m.xq_prime * iqq) * idd;
    out[r + kDelta] = w - m.omega_s;
    out[r + kOmega] = (u.tm[i] - te - m.D * (w - m.omega_s)) / m.M;
    out[r + kEqPrime] = (-eqp - (m.xd - m.xd_prime) * idd + efd) / m.td0_prime;
    out[r + kEdPrime] = (-edp + (m.xq - m.xq_prime) * iqq) / m.tq0_prime;
    out[r + kEfd] = (-(e.ke + e.saturation(efd)) * efd + vr) / e.te;
    out[r + kVr] = (-vr + e.ka * rf - e.ka * e.kf / e.tf * efd + e.ka * (u.vref[i] - vb)) / e.ta;
    out[r + kRf] = (-rf + e.kf / e.tf * efd) / e.tf;
  }
  return out;
}

Vector DaeModel::g(const Vector& s, const Vector& y, const DaeInputs& u) const {
  Vector out(num_algebraic());
  for (int b = 0; b < nb_; ++b) {
    out[theta(b)] = -u.p_load[b];
    out[v(b)] = -u.q_load[b];
  }
  for (int i = 0; i < ng_; ++i) {
    const MachineDynamics& m = case_->generators[i].machine;
    const int r = kStatesPerMachine * i;
    const int b = gen_bus_[i];
    const double idd = y[id(i)];
    const double iqq = y[iq(i)];
    const double vb = y[v(b)];
    const double a = s[r + kDelta] - y[theta(b)];
    const double sn = std::sin(a);
    const double cs = std::cos(a);
    out[id(i)] = s[r + kEdPrime] - vb * sn - m.rs * idd + m.xq_prime * iqq;
    out[iq(i)] = s[r + kEqPrime] - vb * cs - m.rs * iqq - m.xd_prime * idd;
    out[theta(b)] += idd * vb * sn + iqq * vb * cs;
    out[v(b)] += idd * vb * cs - iqq * vb * sn;
  }
  auto volt = [&](int j) { return y[v(j)]; };
  auto angle = [&](int j) { return y[theta(j)]; };
  for (int b = 0; b < nb_; ++b) {
    const auto inj = bus_injection<double>(net_, b, volt, angle);
    out[theta(b)] -= inj.p;
    out[v(b)] -= inj.q;
  }
  return out;
}

JacobianPoint<double> DaeModel::jacobian_point(const Vector& s, const Vector& y) const {
  JacobianPoint<double> pt;
  for (int i = 0; i < ng_; ++i) {
    pt.delta.push_back(s[state(i, kDelta)]);
    pt.ed_prime.push_back(s[state(i, kEdPrime)]);
    pt.eq_prime.push_back(s[state(i, kEqPrime)]);
    pt.efd.push_back(s[state(i, kEfd)]);
    pt.id.push_back(y[id(i)]);
    pt.iq.push_back(y[iq(i)]);
  }
  for (int b = 0; b < nb_; ++b) {
    pt.v.push_back(y[v(b)]);
    pt.theta.push_back(y[theta(b)]);
  }
  return pt;
}

JacobianPoint<double> DaeModel::jacobian_point(const OperatingPoint& op) const {
  auto vec = [](const Vector& x) { return std::vector<double>(x.data(), x.data() + x.size()); };
  JacobianPoint<double> pt;
  pt.delta = vec(op.delta);
  pt.ed_prime = vec(op.ed_prime);
  pt.eq_prime = vec(op.eq_prime);
  pt.efd = vec(op.efd);
  pt.id = vec(op.id);
  pt.iq = vec(op.iq);
  pt.v = vec(op.v);
  pt.theta = vec(op.theta);
  return pt;
}

Matrix DaeModel::jacobian(const JacobianPoint<double>& pt) const {
  Matrix j = Matrix::Zero(size(), size());
  emit_jacobian(pt, [&](int r, int c, double val) { j(r, c) += val; });
  return j;
}

Matrix DaeModel::input_jacobian() const {
  Matrix e = Matrix::Zero(num_states(), 2 * ng_);
  for (int i = 0; i < ng_; ++i) {
    const GeneratorRecord& gen = case_->generators[i];
    e(state(i, kOmega), 2 * i) = 1.0 / gen.machine.M;
    e(state(i, kVr), 2 * i + 1) = gen.exciter.ka / gen.exciter.ta;
  }
  return e;
}

}  // namespace ssopf
