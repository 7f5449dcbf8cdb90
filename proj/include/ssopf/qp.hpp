#pragma once

#include <vector>

#include "ssopf/common.hpp"

namespace ssopf {

/// Convex QP in "elastic" form
///   min  1/2 d'Hd + q'd + c'w
///   s.t. a_r'd - w_{k(r)} <= b_r   for every row r (k(r) = -1: row has no slack)
///        w_k >= 0                  for slacks flagged nonnegative (others are free)
/// Each row references at most one slack. The slacks are eliminated from the Newton
/// system, so the factorized matrix is n x n whatever the number of rows.
struct ElasticQp {
  Matrix hessian;  // n x n, symmetric positive definite
  Vector linear;   // n (may be empty: zero)
  Matrix rows;     // m x n
  Vector rhs;      // m
  std::vector<int> row_slack;            // m entries, -1 or slack index
  Vector slack_cost;                     // nw
  std::vector<bool> slack_nonnegative;   // nw

  int num_vars() const { return static_cast<int>(hessian.rows()); }
  int num_rows() const { return static_cast<int>(rows.rows()); }
  int num_slacks() const { return static_cast<int>(slack_cost.size()); }
};

struct QpOptions {
  double tol = 1e-8;
  int max_iter = 200;
  double step_fraction = 0.995;
};

struct QpResult {
  Vector d;
  Vector w;
  Vector row_multipliers;    // >= 0, one per row
  Vector bound_multipliers;  // >= 0, one per slack (0 for free slacks)
  double objective = 0.0;
  double kkt_residual = 0.0;
  int iterations = 0;
};

class QpError : public Error {
 public:
  QpError(const std::string& what, double residual) : Error(what), residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_;
};

/// Mehrotra predictor-corrector interior-point method. The KKT residual is the largest
/// of the relative stationarity, primal and complementarity errors.
QpResult solve_qp(const ElasticQp& qp, const QpOptions& opts = {});

/// KKT residual of a candidate primal-dual point, with the same scaling as solve_qp.
double qp_kkt_residual(const ElasticQp& qp, const QpResult& sol);

}  // namespace ssopf
