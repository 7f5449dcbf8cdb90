#include "ssopf/lbfgs.hpp"

#include <algorithm>

#include <Eigen/Eigenvalues>

namespace ssopf {

bool LbfgsHessian::add_pair(const Vector& s, const Vector& y) {
  if (s.size() != n_ || y.size() != n_) throw Error("L-BFGS pair has the wrong dimension");
  if (!s.allFinite() || !y.allFinite() || s.squaredNorm() == 0.0) return false;
  pairs_.emplace_back(s, y);
  while (static_cast<int>(pairs_.size()) > memory_) pairs_.pop_front();
  return true;
}

void LbfgsHessian::damped_update(Matrix& b, const Vector& s, const Vector& y, double damping,
                                 Vector* y_used) {
  const Vector bs = b * s;
  const double sbs = s.dot(bs);
  const double sy = s.dot(y);
  Vector yt = y;
  if (sy < damping * sbs) {
    const double theta = (1.0 - damping) * sbs / (sbs - sy);
    yt = theta * y + (1.0 - theta) * bs;
  }
  b += -(bs * bs.transpose()) / sbs + (yt * yt.transpose()) / s.dot(yt);
  if (y_used) *y_used = yt;
}

Matrix LbfgsHessian::dense() const {
  double sigma = 1.0;
  if (!pairs_.empty()) {
    const auto& [s, y] = pairs_.back();
    const double sy = s.dot(y);
    if (sy > 0.0) sigma = std::clamp(y.squaredNorm() / sy, h_min_, 1e8);
  }
  Matrix b = sigma * Matrix::Identity(n_, n_);
  for (const auto& [s, y] : pairs_) damped_update(b, s, y, damping_);
  b = 0.5 * (b + b.transpose());
  const double lmin = Eigen::SelfAdjointEigenSolver<Matrix>(b, Eigen::EigenvaluesOnly)
                          .eigenvalues()
                          .minCoeff();
  if (lmin < h_min_) b.diagonal().array() += h_min_ - lmin;
  return b;
}

}  // namespace ssopf
