#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Eigenvalues>

#include "ssopf/lbfgs.hpp"
#include "ssopf/nlp.hpp"
#include "ssopf/sqpgs.hpp"
#include "test_util.hpp"
#include "toy_problems.hpp"

using namespace ssopf;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// f(x) = x at x = 3, one sample, no constraints.
SampledModel scalar_model() {
  SampledModel m;
  m.f = 3.0;
  m.h = Vector(0);
  m.g = Vector(0);
  m.g_lo = Vector(0);
  m.g_hi = Vector(0);
  m.grad_f = {Vector::Ones(1)};
  return m;
}

}  // namespace

TEST_CASE("ball sampling") {
  std::mt19937_64 rng = substream(9, 1, 0);
  const Vector x = Vector::LinSpaced(5, -1.0, 1.0);
  SUBCASE("no samples keeps only the iterate") {
    const auto b = sample_points(x, 0.1, 0, rng);
    REQUIRE(b.size() == 1);
    CHECK(b[0] == x);
  }
  SUBCASE("membership") {
    const auto b = sample_points(x, 0.1, 30, rng);
    REQUIRE(b.size() == 31);
    CHECK(b[0] == x);
    for (const Vector& p : b) CHECK((p - x).norm() <= 0.1);
  }
  SUBCASE("radial law: mean radius n/(n+1)") {
    const auto b = sample_points(x, 0.1, 100000, rng);
    double sum = 0.0;
    for (size_t i = 1; i < b.size(); ++i) sum += (b[i] - x).norm() / 0.1;
    CHECK(std::abs(sum / 100000 - 5.0 / 6.0) < 0.01);
  }
  SUBCASE("substreams are reproducible and distinct") {
    auto a = substream(9, 3, 1), a2 = substream(9, 3, 1), c = substream(9, 3, 2);
    const auto pa = sample_points(x, 0.1, 3, a);
    const auto pa2 = sample_points(x, 0.1, 3, a2);
    const auto pc = sample_points(x, 0.1, 3, c);
    CHECK(pa[1] == pa2[1]);
    CHECK(pa[1] != pc[1]);
  }
}

TEST_CASE("infeasibility vector") {
  CHECK(infeasibility(Vector::Constant(1, 0.3), Vector(0), Vector(0), Vector(0))[0] == 0.3);
  CHECK(infeasibility(Vector::Constant(1, -0.3), Vector(0), Vector(0), Vector(0))[0] == 0.3);
  const Vector s = infeasibility(Vector(0), Vector::Constant(1, 1.5), Vector::Zero(1), Vector::Ones(1));
  REQUIRE(s.size() == 2);
  CHECK(s[0] == 0.5);
  CHECK(s[1] == 0.0);
  const Vector ok = infeasibility(Vector::Zero(2), Vector::Constant(1, 0.5), Vector::Zero(1), Vector::Ones(1));
  CHECK(ok.sum() == 0.0);
  // Infinite bounds never count.
  const Vector free = infeasibility(Vector(0), Vector::Constant(1, 1e9), Vector::Constant(1, -kInf),
                                    Vector::Constant(1, kInf));
  CHECK(free.sum() == 0.0);
}

TEST_CASE("analytic scalar subproblem") {
  const SampledModel m = scalar_model();
  const Matrix h = Matrix::Identity(1, 1);
  const Subproblem sub = build_subproblem(m, h, 1.0);
  const SubproblemSolution sol = solve_subproblem(sub, 1e-8);
  CHECK(sol.d[0] == doctest::Approx(-1.0).epsilon(1e-8));
  CHECK(sol.z == doctest::Approx(2.0).epsilon(1e-8));
  CHECK(model_reduction(m, h, 1.0, sol.d) == doctest::Approx(0.5).epsilon(1e-8));
  CHECK(model_reduction(m, h, 1.0, Vector::Zero(1)) == 0.0);
}

TEST_CASE("subproblem rows follow the sample sets") {
  SampledModel m;
  m.f = 1.0;
  m.grad_f = {Vector::Ones(2), Vector::Zero(2), Vector::Ones(2)};
  m.h = Vector::Constant(1, 0.2);
  m.grad_h = {{Vector::Ones(2)}};
  m.g = Vector::Constant(2, 0.0);
  m.g_lo = Vector(2);
  m.g_lo << -1, -kInf;
  m.g_hi = Vector(2);
  m.g_hi << 1, 2;
  m.grad_g = {{Vector::Ones(2)}, {Vector::Ones(2), Vector::Ones(2), Vector::Ones(2), Vector::Ones(2)}};
  const Subproblem sub = build_subproblem(m, Matrix::Identity(2, 2), 0.5);
  // 3 objective + 2 equality + 2 (first inequality) + 4 (second, upper only)
  CHECK(sub.qp.num_rows() == 11);
  CHECK(sub.r_lower[1] == -1);
  CHECK(sub.r_upper[1] >= 0);
  int upper_rows = 0;
  for (const RowTag& t : sub.tags) upper_rows += t.kind == RowTag::kUpper && t.function == 1;
  CHECK(upper_rows == 4);
  const SubproblemSolution sol = solve_subproblem(sub, 1e-8);
  CHECK(sol.qp.kkt_residual <= 1e-8);
  for (int i = 0; i < sol.e.size(); ++i) CHECK(sol.e[i] >= -1e-10);
  CHECK(model_reduction(m, Matrix::Identity(2, 2), 0.5, sol.d) >= -1e-8);
}

TEST_CASE("backtracking line search") {
  const testutil::Parabola prob;
  SolverParams p;
  p.varpi = 1.0;
  p.gamma = 0.8;
  SUBCASE("first sequence member with (1 - 2b)^2 <= 1 - b") {
    // b = 1: 1 > 0; b = 0.8: 0.36 > 0.2; b = 0.64: 0.0784 <= 0.36.
    const LineSearchResult ls = line_search(prob, Vector::Ones(1), Vector::Constant(1, -2.0), 1.0, 1.0, p);
    CHECK_FALSE(ls.failed);
    CHECK(ls.beta == doctest::Approx(0.64).epsilon(1e-15));
    CHECK(ls.x[0] == doctest::Approx(1.0 - 1.28));
  }
  SUBCASE("full step") {
    const LineSearchResult ls = line_search(prob, Vector::Ones(1), Vector::Constant(1, -1.0), 1.0, 1.0, p);
    CHECK(ls.beta == 1.0);
  }
  SUBCASE("ascent direction fails") {
    const LineSearchResult ls = line_search(prob, Vector::Ones(1), Vector::Constant(1, 1.0), 1.0, 1.0, p);
    CHECK(ls.failed);
    CHECK(ls.x[0] == 1.0);
  }
}

TEST_CASE("L-BFGS") {
  SUBCASE("secant property on a quadratic") {
    Matrix q(2, 2);
    q << 3, 1, 1, 2;
    LbfgsHessian h(2, 10);
    Vector s1(2), s2(2);
    s1 << 1, 0.2;
    s2 << -1.4, 3.2;  // Q-conjugate to s1, so the first secant pair survives the second update
    h.add_pair(s1, q * s1);
    h.add_pair(s2, q * s2);
    const Matrix b = h.dense();
    CHECK((b * s2 - q * s2).norm() < 1e-12);
    CHECK((b * s1 - q * s1).norm() < 1e-12);
    CHECK((b - q).norm() < 1e-10);
  }
  SUBCASE("y = s keeps the identity") {
    LbfgsHessian h(3);
    const Vector s = Vector::LinSpaced(3, 1.0, 2.0);
    CHECK(h.add_pair(s, s));
    CHECK((h.dense() - Matrix::Identity(3, 3)).norm() < 1e-12);
  }
  SUBCASE("negative curvature is damped") {
    Matrix b = Matrix::Identity(2, 2);
    Vector s(2), y(2), used;
    s << 1, 0;
    y << -1, 0.5;
    LbfgsHessian::damped_update(b, s, y, 0.2, &used);
    const double shs = s.dot(s);
    CHECK(used.dot(s) >= 0.2 * shs - 1e-14);
    CHECK(Eigen::SelfAdjointEigenSolver<Matrix>(b).eigenvalues().minCoeff() > 0.0);
  }
  SUBCASE("zero displacement is skipped") {
    LbfgsHessian h(2);
    CHECK_FALSE(h.add_pair(Vector::Zero(2), Vector::Ones(2)));
    CHECK(h.num_pairs() == 0);
  }
}

TEST_CASE("smooth convex problem reduces to SQP") {
  const testutil::ConvexQuadratic prob;
  SolverParams p;
  p.p = 0;
  const SolverResult r = solve(prob, Vector::Zero(2), p);
  CHECK(r.status == SolverStatus::kConverged);
  CHECK(std::abs(r.x[0] - 4.0 / 3.0) < 1e-6);
  CHECK(std::abs(r.x[1] + 11.0 / 6.0) < 1e-6);
  CHECK(r.f == doctest::Approx(1.0 / 6.0).epsilon(1e-6));
}

TEST_CASE("nonsmooth min-max toy") {
  const testutil::MaxToy prob;
  SolverParams p;
  p.p = 10;
  p.seed = 3;
  const SolverResult r = solve(prob, Vector::Constant(2, 2.0), p);
  CHECK(r.status == SolverStatus::kConverged);
  CHECK(std::abs(r.x[0]) < 1e-2);
  CHECK(std::abs(r.x[1]) < 1e-2);
  CHECK(r.sigma_max < p.nu_in);

  SUBCASE("schedules and merit") {
    for (size_t k = 1; k < r.trace.size(); ++k) {
      CHECK(r.trace[k].rho <= r.trace[k - 1].rho);
      CHECK(r.trace[k].tau <= r.trace[k - 1].tau);
      CHECK(r.trace[k].eps <= r.trace[k - 1].eps);
    }
    for (const IterationRecord& rec : r.trace) {
      if (rec.beta > 0.0) {
        CHECK(rec.merit_after <= rec.merit_before - p.varpi * rec.beta * rec.delta_q + 1e-15);
        CHECK(rec.delta_q > 0.0);
      }
      CHECK(rec.qp_kkt <= p.qp_tol);
    }
  }
  SUBCASE("determinism") {
    const SolverResult again = solve(prob, Vector::Constant(2, 2.0), p);
    REQUIRE(again.trace.size() == r.trace.size());
    for (size_t k = 0; k < r.trace.size(); ++k) {
      CHECK(record_to_json(again.trace[k], false).dump() == record_to_json(r.trace[k], false).dump());
    }
    CHECK(again.x == r.x);
  }
  SUBCASE("trace round trip") {
    const auto dir = testutil::scratch_dir("trace");
    emit_trace(r.trace, dir / "t.jsonl", dir / "t.csv");
    const auto back = read_trace(dir / "t.jsonl");
    REQUIRE(back.size() == r.trace.size());
    for (size_t k = 0; k < back.size(); ++k) {
      CHECK(back[k].k == r.trace[k].k);
      CHECK(back[k].f == r.trace[k].f);
      CHECK(back[k].delta_q == r.trace[k].delta_q);
      CHECK(back[k].rho == r.trace[k].rho);
    }
    CHECK_THROWS(emit_trace({}, dir / "e.jsonl", dir / "e.csv"));
  }
}

TEST_CASE("parameter validation") {
  SolverParams p;
  CHECK_NOTHROW(p.validate());
  p.mu_rho = 1.0;
  CHECK_THROWS(p.validate());
  p = SolverParams{};
  p.varpi = 0.0;
  CHECK_THROWS(p.validate());
  p = SolverParams{};
  p.p = -1;
  CHECK_THROWS(p.validate());
  const testutil::ConvexQuadratic prob;
  CHECK_THROWS(solve(prob, Vector::Zero(3), SolverParams{}));
}

TEST_CASE("spectral constraint samples add exactly p rows") {
  const SsscOpfProblem prob(testutil::wscc9(), -0.3);
  const Vector x0 = flat_start(prob.network(), prob.layout());
  SolverParams p;
  p.K_max = 1;
  p.p = 0;
  const SolverResult r0 = solve(prob, x0, p);
  p.p = 30;
  const SolverResult r30 = solve(prob, x0, p);
  REQUIRE(!r0.trace.empty());
  REQUIRE(!r30.trace.empty());
  CHECK(r30.trace[0].qp_rows - r0.trace[0].qp_rows == 30);
}
