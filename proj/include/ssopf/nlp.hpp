#pragma once

#include <list>
#include <memory>
#include <mutex>

#include "ssopf/network.hpp"
#include "ssopf/nlp_problem.hpp"
#include "ssopf/operating_point.hpp"
#include "ssopf/smallsignal.hpp"

namespace ssopf {

/// OPF with machine steady-state equations and an optional bound eta(x) <= eta_bar.
///
/// Equalities (in order): P balance and Q balance per bus, then per generator the stator
/// d/q, terminal P/Q and field d/q equations. Inequalities: V per bus, P_G and Q_G per
/// generator, squared from-bus current per line, and eta if a bound was given. Only the
/// eta row is nonsmooth. The reference-bus angle is not a variable.
class SsscOpfProblem : public NlpProblem {
 public:
  /// The objective is cost in $/h times `objective_scale`. Unscaled, the power-balance
  /// multipliers (~2000 $/h per pu) put the merit function far outside its exact-penalty
  /// range for any sensible rho and the iterates run off to negative generation.
  SsscOpfProblem(NetworkCase c, std::optional<double> eta_bar, double objective_scale = 5e-3,
                 ModalOptions modal = {});

  int num_variables() const override { return layout_.size(); }
  int num_equalities() const override { return 2 * nb_ + 6 * ng_; }
  int num_inequalities() const override { return nb_ + 2 * ng_ + nl_ + (eta_bar_ ? 1 : 0); }

  double objective(const Vector& x, Vector* grad) const override;
  Vector equalities(const Vector& x, Matrix* jac) const override;
  Vector inequalities(const Vector& x, Matrix* jac) const override;
  Vector inequality_lower() const override;
  Vector inequality_upper() const override;

  bool inequality_nonsmooth(int j) const override { return eta_bar_ && j == eta_row(); }
  Vector inequality_gradient(int j, const Vector& x) const override;

  std::string variable_name(int i) const override { return layout_.name(i); }
  std::optional<double> monitor(const Vector& x) const override;
  std::vector<Complex> monitor_modes(const Vector& x, int count) const override;

  const NetworkCase& network() const { return case_; }
  const VariableLayout& layout() const { return layout_; }
  std::optional<double> eta_bar() const { return eta_bar_; }
  double objective_scale() const { return objective_scale_; }
  double objective_report_scale() const override { return 1.0 / objective_scale_; }
  /// Row of eta among the inequalities (-1 without a bound).
  int eta_row() const { return eta_bar_ ? nb_ + 2 * ng_ + nl_ : -1; }
  int line_row(int l) const { return nb_ + 2 * ng_ + l; }

  /// Largest real part of A at x (zero modes excluded) and its gradient over the layout.
  /// Throws if the network block is singular or the eigen-solve fails.
  double eta(const Vector& x, Vector* grad) const;
  /// Full modal result at x.
  ModalResult modal(const Vector& x) const;

  /// Squared from-bus current of line l.
  double line_current_sq(const Vector& x, int l, Vector* grad) const;

 private:
  struct EtaEntry {
    Vector x;
    double eta = 0.0;
    std::vector<Complex> modes;
    std::optional<Vector> grad;
  };
  std::shared_ptr<EtaEntry> eta_entry(const Vector& x, bool need_grad) const;
  double angle(const Vector& x, int b) const {
    const int t = layout_.theta(b);
    return t < 0 ? 0.0 : x[t];
  }

  NetworkCase case_;
  std::optional<double> eta_bar_;
  double objective_scale_;
  ModalOptions modal_opts_;
  VariableLayout layout_;
  NetworkTopology net_;
  int nb_, ng_, nl_;

  // Results are pure functions of x; the cache only avoids repeating the eigen-analysis.
  mutable std::mutex cache_mu_;
  mutable std::list<std::shared_ptr<EtaEntry>> cache_;
};

/// V = 1, theta = 0, dispatch at the limit midpoints, machine variables from the
/// closed-form initialization at that point (fallback for machines where it breaks down).
Vector flat_start(const NetworkCase& c, const VariableLayout& layout);

/// Cost in $/h of a per-unit dispatch.
double generation_cost(const NetworkCase& c, const Vector& p_gen);

}  // namespace ssopf
