#pragma once

#include <vector>

#include "ssopf/case.hpp"
#include "ssopf/dual.hpp"
#include "ssopf/network.hpp"
#include "ssopf/operating_point.hpp"

namespace ssopf {

/// Per-machine differential states, in their order inside the state vector.
enum MachineState { kDelta = 0, kOmega, kEqPrime, kEdPrime, kEfd, kVr, kRf, kStatesPerMachine };

/// External inputs of the DAE: mechanical torque and exciter reference per machine,
/// constant-power load per bus.
struct DaeInputs {
  Vector tm, vref;
  Vector p_load, q_load;
};

/// Values the Jacobian depends on. Everything else in the Jacobian is constant.
template <typename T>
struct JacobianPoint {
  std::vector<T> delta, ed_prime, eq_prime, efd, id, iq;  // per machine
  std::vector<T> v, theta;                                 // per bus
};

/// Two-axis machines with DC-1 exciters on a constant-power-load network.
/// State s = [delta, omega, E'q, E'd, Efd, VR, RF] per machine.
/// Algebraic y = [Id, Iq per machine; (theta, V) per generator bus in machine order;
/// (theta, V) per load bus in bus order]. Equations f(s, y) = ds/dt and
/// g(s, y) = 0 ordered as y: stator d/q per machine, then P/Q balance per bus slot.
class DaeModel {
 public:
  explicit DaeModel(const NetworkCase& c);

  const NetworkCase& network_case() const { return *case_; }
  const NetworkTopology& topology() const { return net_; }

  int num_machines() const { return ng_; }
  int num_states() const { return kStatesPerMachine * ng_; }
  int num_algebraic() const { return 2 * ng_ + 2 * nb_; }
  int size() const { return num_states() + num_algebraic(); }

  int state(int g, MachineState k) const { return kStatesPerMachine * g + k; }
  /// Indices into y.
  int id(int g) const { return 2 * g; }
  int iq(int g) const { return 2 * g + 1; }
  int theta(int b) const { return 2 * ng_ + 2 * slot_[b]; }
  int v(int b) const { return 2 * ng_ + 2 * slot_[b] + 1; }
  /// Position of a bus among the network rows (generator buses first).
  int slot(int b) const { return slot_[b]; }
  int bus_of_slot(int p) const { return slot_bus_[p]; }
  int machine_bus(int g) const { return gen_bus_[g]; }

  void pack(const OperatingPoint& op, Vector& s, Vector& y) const;
  DaeInputs inputs(const OperatingPoint& op) const;
  /// Writes s, y back into the dynamic fields of `op` (p_gen/q_gen become terminal powers).
  void unpack(const Vector& s, const Vector& y, OperatingPoint& op) const;

  Vector f(const Vector& s, const Vector& y, const DaeInputs& u) const;
  Vector g(const Vector& s, const Vector& y, const DaeInputs& u) const;

  JacobianPoint<double> jacobian_point(const Vector& s, const Vector& y) const;
  JacobianPoint<double> jacobian_point(const OperatingPoint& op) const;

  /// Full Jacobian d(f, g)/d(s, y), rows and columns in [s; y] order.
  Matrix jacobian(const JacobianPoint<double>& pt) const;

  /// Emits every structurally nonzero entry of the Jacobian as sink(row, col, value),
  /// rows/cols in [s; y] order. An entry may be emitted more than once; callers add.
  template <typename T, typename Sink>
  void emit_jacobian(const JacobianPoint<T>& pt, Sink&& sink) const;

  /// Jacobian of f with respect to [T_M, V_ref] per machine, ns x 2ng.
  Matrix input_jacobian() const;

 private:
  const NetworkCase* case_;
  NetworkTopology net_;
  int ng_, nb_;
  std::vector<int> slot_, slot_bus_, gen_bus_;
};

template <typename T, typename Sink>
void DaeModel::emit_jacobian(const JacobianPoint<T>& pt, Sink&& sink) const {
  using std::cos;
  using std::exp;
  using std::sin;
  const int ns = num_states();
  for (int i = 0; i < ng_; ++i) {
    const MachineDynamics& m = case_->generators[i].machine;
    const ExciterParams& e = case_->generators[i].exciter;
    const int b = gen_bus_[i];
    const int r = kStatesPerMachine * i;
    const int c_id = ns + id(i);
    const int c_iq = ns + iq(i);
    const int c_th = ns + theta(b);
    const int c_v = ns + v(b);

    sink(r + kDelta, r + kOmega, T(1.0));

    sink(r + kOmega, r + kOmega, T(-m.D / m.M));
    sink(r + kOmega, r + kEqPrime, -pt.iq[i] / m.M);
    sink(r + kOmega, r + kEdPrime, -pt.id[i] / m.M);
    sink(r + kOmega, c_id, ((m.xd_prime - m.xq_prime) * pt.iq[i] - pt.ed_prime[i]) / m.M);
    sink(r + kOmega, c_iq, ((m.xd_prime - m.xq_prime) * pt.id[i] - pt.eq_prime[i]) / m.M);

    sink(r + kEqPrime, r + kEqPrime, T(-1.0 / m.td0_prime));
    sink(r + kEqPrime, r + kEfd, T(1.0 / m.td0_prime));
    sink(r + kEqPrime, c_id, T(-(m.xd - m.xd_prime) / m.td0_prime));

    sink(r + kEdPrime, r + kEdPrime, T(-1.0 / m.tq0_prime));
    sink(r + kEdPrime, c_iq, T((m.xq - m.xq_prime) / m.tq0_prime));

    const T se = e.ae * exp(e.be * pt.efd[i]);
    sink(r + kEfd, r + kEfd, -(e.ke + se + pt.efd[i] * (e.be * se)) / e.te);
    sink(r + kEfd, r + kVr, T(1.0 / e.te));

    sink(r + kVr, r + kVr, T(-1.0 / e.ta));
    sink(r + kVr, r + kRf, T(e.ka / e.ta));
    sink(r + kVr, r + kEfd, T(-e.ka * e.kf / (e.ta * e.tf)));
    sink(r + kVr, c_v, T(-e.ka / e.ta));

    sink(r + kRf, r + kRf, T(-1.0 / e.tf));
    sink(r + kRf, r + kEfd, T(e.kf / (e.tf * e.tf)));

    const T a = pt.delta[i] - pt.theta[b];
    const T sn = sin(a);
    const T cs = cos(a);
    const T vb = pt.v[b];

    // Stator.
    const int rd = ns + id(i);
    const int rq = ns + iq(i);
    sink(rd, r + kDelta, -(vb * cs));
    sink(rd, c_th, vb * cs);
    sink(rd, c_v, -sn);
    sink(rd, r + kEdPrime, T(1.0));
    sink(rd, c_id, T(-m.rs));
    sink(rd, c_iq, T(m.xq_prime));
    sink(rq, r + kDelta, vb * sn);
    sink(rq, c_th, -(vb * sn));
    sink(rq, c_v, -cs);
    sink(rq, r + kEqPrime, T(1.0));
    sink(rq, c_id, T(-m.xd_prime));
    sink(rq, c_iq, T(-m.rs));

    // Machine injection into the bus balance.
    const int rp = ns + theta(b);
    const int rqq = ns + v(b);
    const T dp_da = pt.id[i] * vb * cs - pt.iq[i] * vb * sn;
    const T dq_da = -(pt.id[i] * vb * sn) - pt.iq[i] * vb * cs;
    sink(rp, r + kDelta, dp_da);
    sink(rp, c_th, -dp_da);
    sink(rp, c_v, pt.id[i] * sn + pt.iq[i] * cs);
    sink(rp, c_id, vb * sn);
    sink(rp, c_iq, vb * cs);
    sink(rqq, r + kDelta, dq_da);
    sink(rqq, c_th, -dq_da);
    sink(rqq, c_v, pt.id[i] * cs - pt.iq[i] * sn);
    sink(rqq, c_id, vb * cs);
    sink(rqq, c_iq, -(vb * sn));
  }

  auto volt = [&](int j) { return pt.v[j]; };
  auto angle = [&](int j) { return pt.theta[j]; };
  for (int b = 0; b < nb_; ++b) {
    const int rp = ns + theta(b);
    const int rq = ns + v(b);
    bus_injection_jacobian<T>(net_, b, volt, angle,
                              [&](int j, const T& dp_dt, const T& dq_dt, const T& dp_dv,
                                  const T& dq_dv) {
                                sink(rp, ns + theta(j), -dp_dt);
                                sink(rp, ns + v(j), -dp_dv);
                                sink(rq, ns + theta(j), -dq_dt);
                                sink(rq, ns + v(j), -dq_dv);
                              });
  }
}

}  // namespace ssopf
