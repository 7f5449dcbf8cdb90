#pragma once

#include <deque>

#include "ssopf/common.hpp"

namespace ssopf {

/// Limited-memory BFGS approximation of the Lagrangian Hessian, materialized as a dense
/// matrix for the QP. Pairs are Powell-damped while the matrix is rebuilt, so the result is
/// positive definite with smallest eigenvalue >= h_min.
class LbfgsHessian {
 public:
  explicit LbfgsHessian(int n, int memory = 10, double h_min = 1e-8, double damping = 0.2)
      : n_(n), memory_(memory), h_min_(h_min), damping_(damping) {}

  /// Returns false (and stores nothing) for a zero or non-finite displacement.
  bool add_pair(const Vector& s, const Vector& y);
  void reset() { pairs_.clear(); }
  int num_pairs() const { return static_cast<int>(pairs_.size()); }

  Matrix dense() const;

  /// One damped BFGS update of B with the pair (s, y); exposed for tests.
  static void damped_update(Matrix& b, const Vector& s, const Vector& y, double damping,
                            Vector* y_used = nullptr);

 private:
  int n_, memory_;
  double h_min_, damping_;
  std::deque<std::pair<Vector, Vector>> pairs_;
};

}  // namespace ssopf
