#pragma once

#include <array>
#include <string>

#include "ssopf/case.hpp"

namespace ssopf {

/// Flat ordering of x = [P_G, Q_G, V, theta, delta, E'_d, E'_q, I_d, I_q, E_fd].
/// With `pin_reference_angle` the reference-bus angle is removed from the theta slice.
class VariableLayout {
 public:
  enum class Block { kPGen, kQGen, kV, kTheta, kDelta, kEdPrime, kEqPrime, kId, kIq, kEfd };
  struct Slice {
    int offset = 0;
    int length = 0;
  };

  VariableLayout(const NetworkCase& c, bool pin_reference_angle);

  int size() const { return size_; }
  int num_generators() const { return ng_; }
  int num_buses() const { return nb_; }
  bool reference_angle_pinned() const { return pinned_; }
  int reference_bus() const { return ref_; }

  Slice slice(Block b) const { return slices_[static_cast<int>(b)]; }

  int p_gen(int g) const { return slice(Block::kPGen).offset + g; }
  int q_gen(int g) const { return slice(Block::kQGen).offset + g; }
  int v(int b) const { return slice(Block::kV).offset + b; }
  /// -1 for the pinned reference bus.
  int theta(int b) const;
  int delta(int g) const { return slice(Block::kDelta).offset + g; }
  int ed_prime(int g) const { return slice(Block::kEdPrime).offset + g; }
  int eq_prime(int g) const { return slice(Block::kEqPrime).offset + g; }
  int id(int g) const { return slice(Block::kId).offset + g; }
  int iq(int g) const { return slice(Block::kIq).offset + g; }
  int efd(int g) const { return slice(Block::kEfd).offset + g; }

  std::string name(int i) const;

 private:
  int ng_, nb_, ref_;
  bool pinned_;
  int size_ = 0;
  Slice slices_[10];
};

/// Machine, exciter and network quantities at one point of the model. The state-matrix
/// inputs are the x-entries; omega, V_R, R_F, T_M and V_ref are derived at steady state.
struct OperatingPoint {
  Vector p_gen, q_gen;  // per generator
  Vector v, theta;      // per bus
  Vector delta, omega, ed_prime, eq_prime, efd, vr, rf;
  Vector id, iq;
  Vector tm, vref;
};

/// Reads x into an OperatingPoint and fills the derived steady-state quantities.
OperatingPoint point_from_vector(const NetworkCase& c, const VariableLayout& layout,
                                 const Vector& x);
Vector point_to_vector(const VariableLayout& layout, const OperatingPoint& op);

/// Sets omega = omega_s, V_R = (K_E + S_E)E_fd, R_F = (K_F/T_F)E_fd, V_ref = V + V_R/K_A and
/// T_M equal to the electrical torque, so that every differential equation is at rest.
void fill_steady_state_inputs(const NetworkCase& c, OperatingPoint& op);

struct MachineSteadyState {
  double delta = 0.0;
  double ed_prime = 0.0;
  double eq_prime = 0.0;
  double id = 0.0;
  double iq = 0.0;
  double efd = 0.0;
};

class InitError : public Error {
 public:
  using Error::Error;
};

/// Closed-form two-axis initialization from terminal P, Q, V, theta.
MachineSteadyState solve_machine_steady_state(const MachineDynamics& m, double p, double q,
                                              double v, double theta);

/// Residuals of the stator, terminal-power and field equations of one machine.
std::array<double, 6> machine_init_residuals(const MachineDynamics& m, double p, double q,
                                             double v, double theta,
                                             const MachineSteadyState& s);

/// Full equilibrium from a power-flow-consistent dispatch. Throws InitError if the
/// dispatch violates the power flow beyond `tol` or any init residual exceeds `tol`.
OperatingPoint steady_state_init(const NetworkCase& c, const Vector& p_gen, const Vector& q_gen,
                                 const Vector& v, const Vector& theta, double tol = 1e-8);

/// Power-balance residuals P_G - P_L - P_inj and Q_G - Q_L - Q_inj at every bus.
Vector power_balance_residuals(const NetworkCase& c, const Vector& p_gen, const Vector& q_gen,
                               const Vector& v, const Vector& theta);

}  // namespace ssopf
