#pragma once

#include <vector>

#include "ssopf/case.hpp"

namespace ssopf {

/// Sparse view of the admittance matrix: Y_ii = g_ii + j b_ii and the
/// off-diagonal nonzeros of each row. Bus indices are positions in `case.buses`.
class NetworkTopology {
 public:
  struct Entry {
    int bus;
    double g;
    double b;
  };

  explicit NetworkTopology(const NetworkCase& c);

  int num_buses() const { return static_cast<int>(g_diag_.size()); }
  double g_diag(int i) const { return g_diag_[i]; }
  double b_diag(int i) const { return b_diag_[i]; }
  const std::vector<Entry>& neighbors(int i) const { return off_[i]; }

 private:
  std::vector<double> g_diag_, b_diag_;
  std::vector<std::vector<Entry>> off_;
};

template <typename T>
struct PowerPair {
  T p{};
  T q{};
};

/// Power injected into the network at bus i:
/// P_i = sum_j V_i V_j (G_ij cos th_ij + B_ij sin th_ij), Q_i likewise with (G sin - B cos).
/// `volt(j)` and `angle(j)` give the bus voltage magnitude and angle.
template <typename T, typename VoltFn, typename AngleFn>
PowerPair<T> bus_injection(const NetworkTopology& net, int i, VoltFn&& volt, AngleFn&& angle) {
  using std::cos;
  using std::sin;
  const T vi = volt(i);
  const T ti = angle(i);
  PowerPair<T> s;
  s.p = vi * vi * net.g_diag(i);
  s.q = -(vi * vi) * net.b_diag(i);
  for (const auto& e : net.neighbors(i)) {
    const T vv = vi * volt(e.bus);
    const T th = ti - angle(e.bus);
    const T c = cos(th);
    const T sn = sin(th);
    s.p += vv * (e.g * c + e.b * sn);
    s.q += vv * (e.g * sn - e.b * c);
  }
  return s;
}

/// Emits the partial derivatives of the bus-i injection with respect to the angle and
/// magnitude of every bus it touches: sink(bus j, dP/dth_j, dQ/dth_j, dP/dV_j, dQ/dV_j).
template <typename T, typename VoltFn, typename AngleFn, typename Sink>
void bus_injection_jacobian(const NetworkTopology& net, int i, VoltFn&& volt, AngleFn&& angle,
                            Sink&& sink) {
  using std::cos;
  using std::sin;
  const T vi = volt(i);
  const T ti = angle(i);
  T dp_dti{}, dq_dti{};
  T dp_dvi = 2.0 * vi * net.g_diag(i);
  T dq_dvi = -2.0 * vi * net.b_diag(i);
  for (const auto& e : net.neighbors(i)) {
    const T vj = volt(e.bus);
    const T th = ti - angle(e.bus);
    const T c = cos(th);
    const T sn = sin(th);
    const T a = e.g * c + e.b * sn;   // in-phase term
    const T bq = e.g * sn - e.b * c;  // quadrature term
    const T vv = vi * vj;
    dp_dti -= vv * bq;
    dq_dti += vv * a;
    dp_dvi += vj * a;
    dq_dvi += vj * bq;
    sink(e.bus, vv * bq, -(vv * a), vi * a, vi * bq);
  }
  sink(i, dp_dti, dq_dti, dp_dvi, dq_dvi);
}

}  // namespace ssopf
