#include "ssopf/qp.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Cholesky>
#include <fmt/format.h>

namespace ssopf {

namespace {

struct Residuals {
  Vector rd, rw, rp;
};

struct Iterate {
  Vector d, w, s, lam, nu;
};

struct Direction {
  Vector d, w, s, lam, nu;
};

class ElasticKkt {
 public:
  explicit ElasticKkt(const ElasticQp& qp) : qp_(qp), n_(qp.num_vars()), m_(qp.num_rows()),
                                              nw_(qp.num_slacks()) {
    q_ = qp.linear.size() == n_ ? qp.linear : Vector::Zero(n_);
    slack_rows_.resize(nw_);
    for (int r = 0; r < m_; ++r) {
      const int k = qp.row_slack[r];
      if (k >= 0) slack_rows_[k].push_back(r);
    }
    for (int k = 0; k < nw_; ++k) {
      if (!qp.slack_nonnegative[k] && slack_rows_[k].empty()) {
        throw QpError(fmt::format("free slack {} appears in no row (unbounded QP)", k), 0.0);
      }
    }
  }

  Residuals residuals(const Iterate& it) const {
    Residuals r;
    r.rd = qp_.hessian * it.d + q_ + qp_.rows.transpose() * it.lam;
    r.rw = qp_.slack_cost - it.nu;
    r.rp = qp_.rows * it.d + it.s - qp_.rhs;
    for (int row = 0; row < m_; ++row) {
      const int k = qp_.row_slack[row];
      if (k >= 0) {
        r.rw[k] -= it.lam[row];
        r.rp[row] -= it.w[k];
      }
    }
    return r;
  }

  double objective(const Iterate& it) const {
    return 0.5 * it.d.dot(qp_.hessian * it.d) + q_.dot(it.d) + qp_.slack_cost.dot(it.w);
  }

  double kkt(const Iterate& it, const Residuals& r) const {
    auto inf = [](const Vector& v) { return v.size() ? v.lpNorm<Eigen::Infinity>() : 0.0; };
    const double dual_scale =
        1.0 + std::max({inf(q_), inf(qp_.slack_cost), inf(qp_.hessian * it.d),
                        inf(qp_.rows.transpose() * it.lam)});
    const double primal_scale = 1.0 + std::max({inf(qp_.rhs), inf(qp_.rows * it.d), inf(it.w)});
    double comp = 0.0;
    for (int row = 0; row < m_; ++row) comp = std::max(comp, it.s[row] * it.lam[row]);
    for (int k = 0; k < nw_; ++k) {
      if (qp_.slack_nonnegative[k]) comp = std::max(comp, it.w[k] * it.nu[k]);
    }
    double dual = r.rd.size() ? r.rd.lpNorm<Eigen::Infinity>() : 0.0;
    if (nw_) dual = std::max(dual, r.rw.lpNorm<Eigen::Infinity>());
    const double primal = m_ ? r.rp.lpNorm<Eigen::Infinity>() : 0.0;
    return std::max({dual / dual_scale, primal / primal_scale,
                     comp / (1.0 + std::abs(objective(it)))});
  }

  // Builds and factors the reduced n x n matrix for the current iterate.
  void factor(const Iterate& it) {
    wr_ = it.lam.cwiseQuotient(it.s);
    dk_ = Vector::Zero(nw_);
    u_ = Matrix::Zero(n_, nw_);
    for (int k = 0; k < nw_; ++k) {
      if (qp_.slack_nonnegative[k]) dk_[k] = it.nu[k] / it.w[k];
      for (int row : slack_rows_[k]) {
        dk_[k] += wr_[row];
        u_.col(k) += wr_[row] * qp_.rows.row(row).transpose();
      }
    }
    // A'WA - U D^-1 U' regrouped per slack as
    //   sum_r w_r (a_r - abar)(a_r - abar)' + (W c / (c + W)) abar abar',
    // with W = sum_r w_r, abar the w-weighted mean row and c = nu/w (0 for a free slack).
    // Every term is PSD, so no cancellation between large weights.
    Matrix g(m_, n_);
    Matrix kmat = qp_.hessian;
    for (int row = 0; row < m_; ++row) {
      if (qp_.row_slack[row] < 0) g.row(row) = std::sqrt(wr_[row]) * qp_.rows.row(row);
    }
    for (int k = 0; k < nw_; ++k) {
      if (slack_rows_[k].empty()) continue;
      const double c = qp_.slack_nonnegative[k] ? it.nu[k] / it.w[k] : 0.0;
      const double wsum = dk_[k] - c;
      const Vector abar = wsum > 0.0 ? Vector(u_.col(k) / wsum) : Vector::Zero(n_);
      for (int row : slack_rows_[k]) {
        g.row(row) = std::sqrt(wr_[row]) * (qp_.rows.row(row) - abar.transpose());
      }
      if (wsum > 0.0) kmat.noalias() += (wsum * c / (c + wsum)) * abar * abar.transpose();
    }
    kmat.selfadjointView<Eigen::Lower>().rankUpdate(g.transpose());
    kmat = Matrix(kmat.selfadjointView<Eigen::Lower>());
    llt_.compute(kmat);
    use_ldlt_ = llt_.info() != Eigen::Success;
    if (use_ldlt_) {
      ldlt_.compute(kmat);
      if (ldlt_.info() != Eigen::Success) throw QpError("reduced KKT matrix factorization failed", 0.0);
    }
  }

  Direction solve(const Iterate& it, const Residuals& r, const Vector& rc, const Vector& rv) const {
    const Vector g = wr_.cwiseProduct(r.rp) - rc.cwiseQuotient(it.s);
    Vector t = -r.rw;
    for (int k = 0; k < nw_; ++k) {
      if (qp_.slack_nonnegative[k]) t[k] -= rv[k] / it.w[k];
      for (int row : slack_rows_[k]) t[k] += g[row];
    }
    Vector rhs = -r.rd - qp_.rows.transpose() * g;
    if (nw_) rhs += u_ * t.cwiseQuotient(dk_);
    Direction dir;
    dir.d = use_ldlt_ ? Vector(ldlt_.solve(rhs)) : Vector(llt_.solve(rhs));
    dir.w = Vector::Zero(nw_);
    if (nw_) dir.w = (u_.transpose() * dir.d + t).cwiseQuotient(dk_);
    Vector ad = qp_.rows * dir.d;
    for (int row = 0; row < m_; ++row) {
      const int k = qp_.row_slack[row];
      if (k >= 0) ad[row] -= dir.w[k];
    }
    dir.lam = wr_.cwiseProduct(ad) + g;
    dir.s = (-rc - it.s.cwiseProduct(dir.lam)).cwiseQuotient(it.lam);
    dir.nu = Vector::Zero(nw_);
    for (int k = 0; k < nw_; ++k) {
      if (qp_.slack_nonnegative[k]) dir.nu[k] = (-rv[k] - it.nu[k] * dir.w[k]) / it.w[k];
    }
    return dir;
  }

  // Residual of the linearized KKT equations at `dir` (zero for an exact solve).
  void linear_residual(const Iterate& it, const Direction& dir, Residuals& r, Vector& rc,
                       Vector& rv) const {
    r.rd += qp_.hessian * dir.d + qp_.rows.transpose() * dir.lam;
    r.rw -= dir.nu;
    r.rp += qp_.rows * dir.d + dir.s;
    for (int row = 0; row < m_; ++row) {
      const int k = qp_.row_slack[row];
      if (k >= 0) {
        r.rw[k] -= dir.lam[row];
        r.rp[row] -= dir.w[k];
      }
    }
    rc += it.s.cwiseProduct(dir.lam) + it.lam.cwiseProduct(dir.s);
    for (int k = 0; k < nw_; ++k) {
      if (qp_.slack_nonnegative[k]) rv[k] += it.w[k] * dir.nu[k] + it.nu[k] * dir.w[k];
    }
  }

  // Solve followed by iterative refinement against the unreduced system.
  Direction refined_solve(const Iterate& it, const Residuals& r, const Vector& rc,
                          const Vector& rv) const {
    Direction dir = solve(it, r, rc, rv);
    for (int pass = 0; pass < 2; ++pass) {
      Residuals lr = r;
      Vector lc = rc, lv = rv;
      linear_residual(it, dir, lr, lc, lv);
      const Direction corr = solve(it, lr, lc, lv);
      dir.d += corr.d;
      dir.w += corr.w;
      dir.s += corr.s;
      dir.lam += corr.lam;
      dir.nu += corr.nu;
    }
    return dir;
  }

  // Largest step keeping every sign-constrained quantity nonnegative (may exceed 1).
  double max_step(const Iterate& it, const Direction& dir) const {
    double a = std::numeric_limits<double>::infinity();
    auto limit = [&a](double v, double dv) {
      if (dv < 0.0) a = std::min(a, -v / dv);
    };
    for (int row = 0; row < m_; ++row) {
      limit(it.s[row], dir.s[row]);
      limit(it.lam[row], dir.lam[row]);
    }
    for (int k = 0; k < nw_; ++k) {
      if (!qp_.slack_nonnegative[k]) continue;
      limit(it.w[k], dir.w[k]);
      limit(it.nu[k], dir.nu[k]);
    }
    return a;
  }

  double mu(const Iterate& it) const {
    double sum = it.s.dot(it.lam);
    int cnt = m_;
    for (int k = 0; k < nw_; ++k) {
      if (qp_.slack_nonnegative[k]) {
        sum += it.w[k] * it.nu[k];
        ++cnt;
      }
    }
    return cnt ? sum / cnt : 0.0;
  }

  Iterate initial() const {
    Iterate it;
    it.d = Vector::Zero(n_);
    it.w = Vector::Zero(nw_);
    for (int k = 0; k < nw_; ++k) {
      double worst = -std::numeric_limits<double>::infinity();
      for (int row : slack_rows_[k]) worst = std::max(worst, -qp_.rhs[row]);
      if (qp_.slack_nonnegative[k]) {
        it.w[k] = std::max(worst, 0.0) + 1.0;
      } else {
        it.w[k] = worst + 1.0;
      }
    }
    it.s.resize(m_);
    for (int row = 0; row < m_; ++row) {
      const int k = qp_.row_slack[row];
      it.s[row] = std::max(qp_.rhs[row] + (k >= 0 ? it.w[k] : 0.0), 1.0);
    }
    it.lam = Vector::Ones(m_);
    it.nu = Vector::Zero(nw_);
    for (int k = 0; k < nw_; ++k) {
      if (qp_.slack_nonnegative[k]) it.nu[k] = 1.0;
    }
    return it;
  }

  void step(Iterate& it, const Direction& dir, double a) const {
    it.d += a * dir.d;
    it.w += a * dir.w;
    it.s += a * dir.s;
    it.lam += a * dir.lam;
    it.nu += a * dir.nu;
  }

  bool nonneg(int k) const { return qp_.slack_nonnegative[k]; }
  int num_rows() const { return m_; }
  int num_slacks() const { return nw_; }

 private:
  const ElasticQp& qp_;
  int n_, m_, nw_;
  Vector q_;
  std::vector<std::vector<int>> slack_rows_;
  Vector wr_, dk_;
  Matrix u_;
  Eigen::LLT<Matrix> llt_;
  Eigen::LDLT<Matrix> ldlt_;
  bool use_ldlt_ = false;
};

void check_shapes(const ElasticQp& qp) {
  const int n = qp.num_vars();
  const int m = qp.num_rows();
  if (qp.hessian.cols() != n || qp.rows.cols() != n || qp.rhs.size() != m ||
      static_cast<int>(qp.row_slack.size()) != m ||
      static_cast<int>(qp.slack_nonnegative.size()) != qp.num_slacks() ||
      (qp.linear.size() != 0 && qp.linear.size() != n)) {
    throw QpError("inconsistent QP dimensions", 0.0);
  }
  for (int k : qp.row_slack) {
    if (k < -1 || k >= qp.num_slacks()) throw QpError("row references an unknown slack", 0.0);
  }
}

}  // namespace

double qp_kkt_residual(const ElasticQp& qp, const QpResult& sol) {
  check_shapes(qp);
  ElasticKkt kkt(qp);
  Iterate it;
  it.d = sol.d;
  it.w = sol.w;
  it.lam = sol.row_multipliers;
  it.nu = sol.bound_multipliers;
  it.s = qp.rhs - qp.rows * sol.d;
  for (int r = 0; r < qp.num_rows(); ++r) {
    if (qp.row_slack[r] >= 0) it.s[r] += sol.w[qp.row_slack[r]];
  }
  // Negative slacks are primal infeasibility; report them through rp.
  Residuals res = kkt.residuals(it);
  for (int r = 0; r < qp.num_rows(); ++r) {
    if (it.s[r] < 0.0) {
      res.rp[r] = it.s[r];
      it.s[r] = 0.0;
    }
  }
  double bound_violation = 0.0;
  for (int k = 0; k < qp.num_slacks(); ++k) {
    if (qp.slack_nonnegative[k]) bound_violation = std::max(bound_violation, -sol.w[k]);
  }
  double sign_violation = 0.0;
  if (it.lam.size()) sign_violation = std::max(sign_violation, -it.lam.minCoeff());
  if (it.nu.size()) sign_violation = std::max(sign_violation, -it.nu.minCoeff());
  return std::max({kkt.kkt(it, res), bound_violation, sign_violation});
}

QpResult solve_qp(const ElasticQp& qp, const QpOptions& opts) {
  check_shapes(qp);
  ElasticKkt kkt(qp);
  Iterate it = kkt.initial();
  const int m = kkt.num_rows();
  const int nw = kkt.num_slacks();

  QpResult out;
  double res = std::numeric_limits<double>::infinity();
  for (int iter = 0;; ++iter) {
    const Residuals r = kkt.residuals(it);
    res = kkt.kkt(it, r);
    out.iterations = iter;
    if (res <= opts.tol) break;
    if (iter >= opts.max_iter || !std::isfinite(res)) {
      throw QpError(fmt::format("QP interior-point method stopped after {} iterations "
                                "(KKT residual {:.3e})",
                                iter, res),
                    res);
    }
    kkt.factor(it);
    const double mu = kkt.mu(it);

    // Predictor.
    Vector rc = it.s.cwiseProduct(it.lam);
    Vector rv = it.w.cwiseProduct(it.nu);
    const Direction aff = kkt.refined_solve(it, r, rc, rv);
    const double a_aff = std::min(1.0, kkt.max_step(it, aff));
    Iterate trial = it;
    kkt.step(trial, aff, a_aff);
    const double sigma = mu > 0.0 ? std::pow(std::clamp(kkt.mu(trial) / mu, 0.0, 1.0), 3) : 0.0;

    // Corrector.
    rc += aff.s.cwiseProduct(aff.lam) - Vector::Constant(m, sigma * mu);
    for (int k = 0; k < nw; ++k) {
      rv[k] = kkt.nonneg(k) ? rv[k] + aff.w[k] * aff.nu[k] - sigma * mu : 0.0;
    }
    const Direction dir = kkt.refined_solve(it, r, rc, rv);
    const double a = std::min(1.0, opts.step_fraction * kkt.max_step(it, dir));
    kkt.step(it, dir, a);
  }

  out.d = it.d;
  out.w = it.w;
  out.row_multipliers = it.lam;
  out.bound_multipliers = it.nu;
  out.objective = kkt.objective(it);
  out.kkt_residual = res;
  return out;
}

}  // namespace ssopf
