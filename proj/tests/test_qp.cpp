#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include <Eigen/LU>

#include "ssopf/qp.hpp"

using namespace ssopf;

namespace {

struct Rng {
  std::mt19937 gen;
  std::normal_distribution<double> n01;
  explicit Rng(unsigned seed) : gen(seed) {}
  Matrix mat(int r, int c) { return Matrix::NullaryExpr(r, c, [&] { return n01(gen); }); }
  Vector vec(int n) { return Vector::NullaryExpr(n, [&] { return n01(gen); }); }
};

// Oracle for slack-free problems: enumerate every active set, solve the equality-constrained
// QP and keep the best primal-dual feasible one.
Vector brute_force(const Matrix& h, const Vector& q, const Matrix& a, const Vector& b) {
  const int n = h.rows(), m = a.rows();
  double best = std::numeric_limits<double>::infinity();
  Vector best_d;
  for (unsigned mask = 0; mask < (1u << m); ++mask) {
    std::vector<int> act;
    for (int r = 0; r < m; ++r) {
      if (mask & (1u << r)) act.push_back(r);
    }
    const int k = act.size();
    if (k > n) continue;
    Matrix kkt = Matrix::Zero(n + k, n + k);
    Vector rhs(n + k);
    kkt.topLeftCorner(n, n) = h;
    rhs.head(n) = -q;
    for (int i = 0; i < k; ++i) {
      kkt.block(n + i, 0, 1, n) = a.row(act[i]);
      kkt.block(0, n + i, n, 1) = a.row(act[i]).transpose();
      rhs[n + i] = b[act[i]];
    }
    Eigen::FullPivLU<Matrix> lu(kkt);
    if (lu.rank() < n + k) continue;
    const Vector sol = lu.solve(rhs);
    const Vector d = sol.head(n);
    if (k && sol.tail(k).minCoeff() < -1e-10) continue;
    if (((a * d - b).array() > 1e-9).any()) continue;
    const double obj = 0.5 * d.dot(h * d) + q.dot(d);
    if (obj < best) {
      best = obj;
      best_d = d;
    }
  }
  return best_d;
}

// Independent KKT check in the unscaled form, slack bounds included.
double kkt_violation(const ElasticQp& qp, const QpResult& s) {
  const int m = qp.num_rows(), nw = qp.num_slacks();
  Vector lin = qp.linear.size() ? qp.linear : Vector::Zero(qp.num_vars());
  double v = (qp.hessian * s.d + lin + qp.rows.transpose() * s.row_multipliers).lpNorm<Eigen::Infinity>();
  Vector ws = qp.slack_cost - s.bound_multipliers;
  for (int r = 0; r < m; ++r) {
    const int k = qp.row_slack[r];
    double slack = 0.0;
    if (k >= 0) {
      ws[k] -= s.row_multipliers[r];
      slack = s.w[k];
    }
    const double viol = qp.rows.row(r).dot(s.d) - slack - qp.rhs[r];
    v = std::max(v, std::max(viol, 0.0));
    v = std::max(v, std::abs(s.row_multipliers[r] * viol));
    v = std::max(v, -s.row_multipliers[r]);
  }
  if (nw) v = std::max(v, ws.lpNorm<Eigen::Infinity>());
  for (int k = 0; k < nw; ++k) {
    if (qp.slack_nonnegative[k]) {
      v = std::max(v, -s.w[k]);
      v = std::max(v, std::abs(s.w[k] * s.bound_multipliers[k]));
    } else {
      v = std::max(v, std::abs(s.bound_multipliers[k]));
    }
  }
  return v;
}

}  // namespace

TEST_CASE("scalar elastic problem") {
  // min z + d^2/2  s.t. 3 + d <= z, z free: z = 3 + d, optimum d = -1, z = 2.
  ElasticQp qp;
  qp.hessian = Matrix::Identity(1, 1);
  qp.rows = Matrix::Ones(1, 1);
  qp.rhs = Vector::Constant(1, -3.0);
  qp.row_slack = {0};
  qp.slack_cost = Vector::Ones(1);
  qp.slack_nonnegative = {false};
  QpOptions opts;
  opts.tol = 1e-11;
  const QpResult r = solve_qp(qp, opts);
  CHECK(r.d[0] == doctest::Approx(-1.0).epsilon(1e-8));
  CHECK(r.w[0] == doctest::Approx(2.0).epsilon(1e-8));
  CHECK(r.row_multipliers[0] == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(r.kkt_residual <= 1e-10);
  CHECK(qp_kkt_residual(qp, r) <= 1e-8);
}

TEST_CASE("box-constrained projection") {
  // min |d - (2, 2)|^2 / 2  s.t. d <= 1.
  ElasticQp qp;
  qp.hessian = Matrix::Identity(2, 2);
  qp.linear = Vector::Constant(2, -2.0);
  qp.rows = Matrix::Identity(2, 2);
  qp.rhs = Vector::Ones(2);
  qp.row_slack = {-1, -1};
  const QpResult r = solve_qp(qp);
  CHECK((r.d - Vector::Ones(2)).norm() < 1e-8);
  CHECK((r.row_multipliers - Vector::Ones(2)).norm() < 1e-7);
}

TEST_CASE("random slack-free problems agree with active-set enumeration") {
  Rng rng(4);
  for (int t = 0; t < 40; ++t) {
    const int n = 2 + t % 3, m = 6;
    const Matrix l = rng.mat(n, n);
    const Matrix h = l * l.transpose() + 0.1 * Matrix::Identity(n, n);
    const Vector q = 3.0 * rng.vec(n);
    const Matrix a = rng.mat(m, n);
    const Vector b = rng.vec(m).cwiseAbs();  // d = 0 is feasible
    ElasticQp qp;
    qp.hessian = h;
    qp.linear = q;
    qp.rows = a;
    qp.rhs = b;
    qp.row_slack.assign(m, -1);
    const QpResult r = solve_qp(qp);
    const Vector oracle = brute_force(h, q, a, b);
    REQUIRE(oracle.size() == n);
    CHECK((r.d - oracle).lpNorm<Eigen::Infinity>() < 1e-6);
    CHECK(r.kkt_residual <= 1e-8);
  }
}

TEST_CASE("random elastic problems satisfy KKT") {
  Rng rng(1);
  int worst = 0;
  for (int t = 0; t < 60; ++t) {
    const int n = 2 + t % 19, m = 3 * n, nw = n;
    ElasticQp qp;
    const Matrix l = rng.mat(n, n);
    qp.hessian = l * l.transpose() + 0.1 * Matrix::Identity(n, n);
    qp.linear = rng.vec(n);
    qp.rows = rng.mat(m, n);
    qp.rhs = 100.0 * rng.vec(m);
    // Every third row is hard; the others cycle through the slacks so that each slack,
    // including the free one, appears in at least one row.
    qp.row_slack.resize(m);
    int next = 0;
    for (int i = 0; i < m; ++i) qp.row_slack[i] = i % 3 == 0 ? -1 : (next++ % nw);
    for (int i = 0; i < m; i += 3) qp.rhs[i] = std::abs(qp.rhs[i]);
    qp.slack_cost = Vector::Constant(nw, 0.7);
    qp.slack_nonnegative.assign(nw, true);
    // A free slack is bounded below only if its cost is covered by the row multipliers:
    // give it a single row so the optimum exists.
    qp.slack_nonnegative[0] = false;
    const QpResult r = solve_qp(qp);
    worst = std::max(worst, r.iterations);
    CHECK(r.kkt_residual <= 1e-8);
    const double scale = std::max({1.0, qp.hessian.lpNorm<Eigen::Infinity>(), qp.rhs.lpNorm<Eigen::Infinity>(),
                                   r.row_multipliers.lpNorm<Eigen::Infinity>()});
    CHECK(kkt_violation(qp, r) <= 1e-6 * scale);
  }
  CHECK(worst < QpOptions{}.max_iter);
}

TEST_CASE("infeasible hard rows raise QpError") {
  ElasticQp qp;
  qp.hessian = Matrix::Identity(1, 1);
  qp.rows = Matrix(2, 1);
  qp.rows << 1, -1;
  qp.rhs = Vector(2);
  qp.rhs << -1, -1;  // d <= -1 and d >= 1
  qp.row_slack = {-1, -1};
  CHECK_THROWS_AS(solve_qp(qp), QpError);
}
