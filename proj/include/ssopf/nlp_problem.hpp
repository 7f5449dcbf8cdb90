#pragma once

#include <chrono>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "ssopf/common.hpp"

namespace ssopf {

/// Accumulated wall-clock seconds per named phase. Thread-safe.
class Profile {
 public:
  void add(const std::string& phase, double seconds) {
    std::lock_guard<std::mutex> lock(mu_);
    seconds_[phase] += seconds;
  }
  std::map<std::string, double> snapshot() const {
    std::lock_guard<std::mutex> lock(mu_);
    return seconds_;
  }

 private:
  mutable std::mutex mu_;
  std::map<std::string, double> seconds_;
};

/// Adds the lifetime of the object to a profile phase (no-op for a null profile).
class ScopedTimer {
 public:
  ScopedTimer(Profile* p, std::string phase)
      : p_(p), phase_(std::move(phase)), t0_(std::chrono::steady_clock::now()) {}
  ~ScopedTimer() {
    if (p_) {
      p_->add(phase_, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count());
    }
  }
  ScopedTimer(const ScopedTimer&) = delete;
  ScopedTimer& operator=(const ScopedTimer&) = delete;

 private:
  Profile* p_;
  std::string phase_;
  std::chrono::steady_clock::time_point t0_;
};

/// min f(x)  s.t.  h(x) = 0,  g_lo <= g(x) <= g_hi.
/// Functions flagged nonsmooth get their gradients sampled by the solver; all others are
/// linearized at the iterate only. Evaluators must be reentrant.
class NlpProblem {
 public:
  virtual ~NlpProblem() = default;

  virtual int num_variables() const = 0;
  virtual int num_equalities() const = 0;
  virtual int num_inequalities() const = 0;

  virtual double objective(const Vector& x, Vector* grad) const = 0;
  /// Residuals h(x); fills the m_h x n Jacobian if `jac` is non-null.
  virtual Vector equalities(const Vector& x, Matrix* jac) const = 0;
  virtual Vector inequalities(const Vector& x, Matrix* jac) const = 0;
  virtual Vector inequality_lower() const = 0;
  virtual Vector inequality_upper() const = 0;

  virtual bool objective_nonsmooth() const { return false; }
  virtual bool equality_nonsmooth(int /*i*/) const { return false; }
  virtual bool inequality_nonsmooth(int /*j*/) const { return false; }

  /// Gradient of a single function; defaults slice the full Jacobian.
  virtual Vector equality_gradient(int i, const Vector& x) const {
    Matrix jac;
    equalities(x, &jac);
    return jac.row(i).transpose();
  }
  virtual Vector inequality_gradient(int j, const Vector& x) const {
    Matrix jac;
    inequalities(x, &jac);
    return jac.row(j).transpose();
  }

  /// Factor that converts objective values into the units reported in traces.
  virtual double objective_report_scale() const { return 1.0; }

  virtual std::string variable_name(int i) const { return "x[" + std::to_string(i) + "]"; }

  /// Optional quantity reported in the iteration trace (the spectral abscissa for SSSC-OPF).
  virtual std::optional<double> monitor(const Vector& /*x*/) const { return std::nullopt; }
  /// Optional most-critical modes at x, for verbose traces.
  virtual std::vector<Complex> monitor_modes(const Vector& /*x*/, int /*count*/) const {
    return {};
  }

  void set_profile(Profile* p) const { profile_ = p; }
  Profile* profile() const { return profile_; }

 private:
  mutable Profile* profile_ = nullptr;
};

}  // namespace ssopf
