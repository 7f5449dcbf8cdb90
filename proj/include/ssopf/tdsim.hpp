#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ssopf/dae.hpp"

namespace ssopf {

/// Constant-power load step at one bus (per-unit on the system base).
struct LoadStep {
  int bus_id = 0;
  double dp = 0.0;
  double dq = 0.0;
  double time = 0.0;
};

struct SimConfig {
  double horizon = 10.0;
  double dt = 0.01;
  std::optional<LoadStep> disturbance;
  double newton_tol = 1e-10;
  int newton_max_iter = 20;

  void validate() const;
};

struct Trajectory {
  std::vector<double> time;
  std::vector<OperatingPoint> points;
  std::vector<Vector> omega;  // per stored step, one entry per generator
  std::vector<double> inertia;
  double omega_s = 0.0;
  bool complete = true;
  std::string failure;  // set when a step failed and the trajectory is partial
};

class StepError : public Error {
 public:
  StepError(const std::string& what, double residual) : Error(what), residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_;
};

struct DaeState {
  Vector s, y;
};

/// Max-norm of g(s, y) at the given inputs.
double algebraic_residual(const DaeModel& model, const DaeState& x, const DaeInputs& u);

/// Newton on g(s, y) = 0 for y with s frozen; used when an input jumps.
DaeState solve_algebraic(const DaeModel& model, const DaeState& x, const DaeInputs& u, double tol,
                         int max_iter = 20);

/// One implicit-trapezoidal step: s1 = s0 + dt/2 (f0 + f1), g(s1, y1) = 0, solved jointly by
/// Newton with the analytic Jacobian. Throws StepError if Newton does not reach `tol`.
DaeState dae_step(const DaeModel& model, const DaeState& x, const DaeInputs& u, double dt,
                  double tol, int max_iter = 20);

OperatingPoint dae_step(const NetworkCase& c, const OperatingPoint& op, double dt, double tol);

/// Integrates from the equilibrium `x_star` (whose T_M and V_ref are held). A failed step ends
/// the run; the partial trajectory is returned with `complete == false`.
Trajectory simulate(const NetworkCase& c, const OperatingPoint& x_star, const SimConfig& config);

enum class SpeedReference { kCentreOfInertia, kSynchronous };

/// max_i |omega_i - omega_ref| at every stored step.
std::vector<double> speed_deviation(const Trajectory& traj,
                                    SpeedReference ref = SpeedReference::kCentreOfInertia);

/// Least-squares slope of log of the peak envelope of `signal` over [t_begin, t_end].
/// Without at least three peaks (non-oscillatory decay) log|signal| itself is fitted.
double decay_rate_estimate(const std::vector<double>& t, const std::vector<double>& signal,
                           double t_begin, double t_end);
double decay_rate_estimate(const Trajectory& traj, double t_begin, double t_end,
                           SpeedReference ref = SpeedReference::kCentreOfInertia);

/// Power flow at the dispatch's P_G and generator voltages, then equilibrium init. Turns an
/// optimizer point (equalities met to solver tolerance) into an exact equilibrium.
OperatingPoint polish_equilibrium(const NetworkCase& c, const OperatingPoint& op);

/// CSV with header t,omega_1..omega_g (rad/s).
void write_trajectory_csv(const Trajectory& traj, const std::filesystem::path& path);

}  // namespace ssopf
