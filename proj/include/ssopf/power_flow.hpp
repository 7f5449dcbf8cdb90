#pragma once

#include "ssopf/case.hpp"

namespace ssopf {

/// Generator setpoints for a conventional power flow: the generator at the angle
/// reference bus is the slack, every other generator bus is a PV bus.
struct PowerFlowSetpoints {
  Vector p_gen;    // per generator; the slack entry is ignored
  Vector v_gen;    // per generator, voltage magnitude at its bus
};

struct PowerFlowSolution {
  Vector v;      // per bus
  Vector theta;  // per bus, reference angle 0
  Vector p_gen;  // per generator
  Vector q_gen;  // per generator
  int iterations = 0;
  double mismatch = 0.0;
};

class PowerFlowError : public Error {
 public:
  using Error::Error;
};

/// Newton-Raphson power flow. Throws PowerFlowError if it does not reach `tol`.
PowerFlowSolution solve_power_flow(const NetworkCase& c, const PowerFlowSetpoints& sp,
                                   double tol = 1e-11, int max_iter = 30);

}  // namespace ssopf
