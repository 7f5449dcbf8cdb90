#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "ssopf/nlp.hpp"
#include "ssopf/power_flow.hpp"
#include "test_util.hpp"

using namespace ssopf;

namespace {

Vector base_vector(const SsscOpfProblem& prob) {
  const NetworkCase& c = prob.network();
  PowerFlowSetpoints sp;
  sp.p_gen = Vector(3);
  sp.p_gen << 0.25, 0.25, 2.76;
  sp.v_gen = Vector(3);
  sp.v_gen << 1.04, 1.025, 1.025;
  const PowerFlowSolution pf = solve_power_flow(c, sp);
  return point_to_vector(prob.layout(), steady_state_init(c, pf.p_gen, pf.q_gen, pf.v, pf.theta));
}

// Central-difference Jacobian of a vector function, one column per variable.
template <typename F>
Matrix fd_jacobian(F&& f, const Vector& x, double h = 1e-6) {
  const Vector f0 = f(x);
  Matrix j(f0.size(), x.size());
  for (int i = 0; i < x.size(); ++i) {
    Vector xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    j.col(i) = (f(xp) - f(xm)) / (2 * h);
  }
  return j;
}

double rel_err(const Matrix& a, const Matrix& b) {
  return (a - b).lpNorm<Eigen::Infinity>() / std::max(1.0, b.lpNorm<Eigen::Infinity>());
}

}  // namespace

TEST_CASE("problem dimensions for the 9-bus case") {
  const SsscOpfProblem opf(testutil::wscc9(), std::nullopt);
  // 3 P_G + 3 Q_G + 9 V + 8 theta + 6 x 3 machine variables
  CHECK(opf.num_variables() == 41);
  CHECK(opf.num_equalities() == 36);
  CHECK(opf.num_inequalities() == 9 + 6 + 9);
  CHECK(opf.eta_row() == -1);
  const SsscOpfProblem sssc(testutil::wscc9(), -0.3);
  CHECK(sssc.num_inequalities() == 25);
  CHECK(sssc.eta_row() == 24);
  CHECK(sssc.inequality_upper()[24] == -0.3);
  CHECK(std::isinf(sssc.inequality_lower()[24]));
  int nonsmooth = 0;
  for (int j = 0; j < sssc.num_inequalities(); ++j) nonsmooth += sssc.inequality_nonsmooth(j);
  CHECK(nonsmooth == 1);
}

TEST_CASE("generation cost") {
  const NetworkCase& c = testutil::wscc9();
  Vector p(3);
  p << 0.25, 0.25, 2.76;
  // Hand-evaluated quadratic cost in MW.
  const double expect = 9.76e-4 * 625 + 14.712 * 25 + 7.20e-4 * 625 + 11.290 * 25 +
                        5.46e-4 * 276 * 276 + 8.001 * 276;
  CHECK(generation_cost(c, p) == doctest::Approx(expect).epsilon(1e-14));
  CHECK(std::abs(generation_cost(c, p) - 2901.3) < 0.5);
  CHECK(generation_cost(c, Vector::Zero(3)) == 0.0);

  const SsscOpfProblem prob(c, std::nullopt);
  Vector x = base_vector(prob);
  CHECK(prob.objective(x, nullptr) * prob.objective_report_scale() ==
        doctest::Approx(generation_cost(c, x.head(3))).epsilon(1e-12));
}

TEST_CASE("an initialized equilibrium satisfies every equality") {
  const SsscOpfProblem prob(testutil::wscc9(), std::nullopt);
  const Vector x = base_vector(prob);
  CHECK(prob.equalities(x, nullptr).lpNorm<Eigen::Infinity>() < 1e-8);
  // Voltage and line rows hold here; the classic setpoints overdraw Q at one machine.
  const Vector g = prob.inequalities(x, nullptr);
  const Vector lo = prob.inequality_lower(), hi = prob.inequality_upper();
  for (int j : {0, 1, 2, 3, 4, 5, 6, 7, 8, prob.line_row(0), prob.line_row(8)}) {
    CHECK(g[j] >= lo[j] - 1e-9);
    CHECK(g[j] <= hi[j] + 1e-9);
  }
}

TEST_CASE("analytic derivatives match finite differences") {
  const SsscOpfProblem prob(testutil::wscc9(), std::nullopt);
  const Vector x0 = base_vector(prob);
  std::mt19937 rng(2);
  std::uniform_real_distribution<double> u(-0.02, 0.02);
  for (int trial = 0; trial < 3; ++trial) {
    Vector x = x0;
    for (int i = 0; i < x.size(); ++i) x[i] += u(rng);

    Vector grad;
    prob.objective(x, &grad);
    const Matrix gfd = fd_jacobian(
        [&](const Vector& z) {
          Vector r(1);
          r[0] = prob.objective(z, nullptr);
          return r;
        },
        x);
    CHECK(rel_err(grad.transpose(), gfd) < 1e-7);

    Matrix jh, jg;
    prob.equalities(x, &jh);
    prob.inequalities(x, &jg);
    CHECK(rel_err(jh, fd_jacobian([&](const Vector& z) { return prob.equalities(z, nullptr); }, x)) < 1e-7);
    CHECK(rel_err(jg, fd_jacobian([&](const Vector& z) { return prob.inequalities(z, nullptr); }, x)) < 1e-7);
    for (int j = 0; j < prob.num_inequalities(); j += 5) {
      CHECK((prob.inequality_gradient(j, x) - jg.row(j).transpose()).norm() == 0.0);
    }
  }
}

TEST_CASE("field voltage appears only in its own field equation") {
  const SsscOpfProblem prob(testutil::wscc9(), std::nullopt);
  Matrix jh;
  prob.equalities(base_vector(prob), &jh);
  const int nb = 9, ng = 3;
  for (int g = 0; g < ng; ++g) {
    const int col = prob.layout().efd(g);
    for (int r = 0; r < jh.rows(); ++r) {
      const bool own = r == 2 * nb + 4 * ng + g;
      CHECK(jh(r, col) == (own ? 1.0 : 0.0));
    }
  }
}

TEST_CASE("flat start") {
  const NetworkCase& c = testutil::wscc9();
  const VariableLayout lay(c, true);
  const Vector x = flat_start(c, lay);
  for (int b = 0; b < 9; ++b) CHECK(x[lay.v(b)] == 1.0);
  for (int b = 0; b < 9; ++b) {
    if (lay.theta(b) >= 0) CHECK(x[lay.theta(b)] == 0.0);
  }
  const SsscOpfProblem prob(c, std::nullopt);
  const Vector h = prob.equalities(x, nullptr);
  for (int g = 0; g < 3; ++g) {
    const auto& lim = c.generators[g].limits;
    CHECK(x[lay.p_gen(g)] == 0.5 * (lim.p_min + lim.p_max));
    // Machine rows are exact at the flat start; only the network balance is off.
    for (int k = 0; k < 6; ++k) CHECK(std::abs(h[18 + 3 * k + g]) < 1e-10);
  }
}

TEST_CASE("line current") {
  SUBCASE("equal voltages and no charging carry no current") {
    NetworkCase c = testutil::two_bus();
    c.lines[0].shunt_admittance_half = Complex(0.0, 0.0);
    const SsscOpfProblem prob(c, std::nullopt);
    Vector x = flat_start(c, prob.layout());
    x[prob.layout().v(0)] = 1.03;
    x[prob.layout().v(1)] = 1.03;
    CHECK(std::abs(prob.line_current_sq(x, 0, nullptr)) < 1e-12);
  }
  SUBCASE("phasor oracle and gradient on the 9-bus case") {
    const NetworkCase& c = testutil::wscc9();
    const SsscOpfProblem prob(c, std::nullopt);
    const Vector x = base_vector(prob);
    const VariableLayout& lay = prob.layout();
    auto phasor = [&](const Vector& z, int b) {
      const double th = lay.theta(b) < 0 ? 0.0 : z[lay.theta(b)];
      return std::polar(z[lay.v(b)], th);
    };
    for (int l = 0; l < c.num_lines(); ++l) {
      const LineRecord& ln = c.lines[l];
      const Complex vi = phasor(x, c.bus_index(ln.from_bus));
      const Complex vj = phasor(x, c.bus_index(ln.to_bus));
      const Complex i = ln.shunt_admittance_half * vi + ln.series_admittance * (vi - vj);
      Vector grad;
      CHECK(prob.line_current_sq(x, l, &grad) == doctest::Approx(std::norm(i)).epsilon(1e-12));
      const Matrix fd = fd_jacobian(
          [&](const Vector& z) {
            Vector r(1);
            r[0] = prob.line_current_sq(z, l, nullptr);
            return r;
          },
          x);
      CHECK(rel_err(grad.transpose(), fd) < 1e-7);
    }
  }
}

TEST_CASE("eta constraint") {
  const NetworkCase& c = testutil::wscc9();
  const SsscOpfProblem prob(c, -0.3);
  const Vector x = base_vector(prob);
  Vector grad;
  const double eta = prob.eta(x, &grad);
  CHECK(std::abs(eta + 0.04) <= 0.02);
  CHECK(prob.monitor(x).value() == eta);
  CHECK((prob.inequality_gradient(prob.eta_row(), x) - grad).norm() == 0.0);
  for (int i : {prob.layout().v(3), prob.layout().delta(1), prob.layout().eq_prime(2), prob.layout().iq(0)}) {
    const double h = 1e-6;
    Vector xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    const double fd = (prob.eta(xp, nullptr) - prob.eta(xm, nullptr)) / (2 * h);
    CHECK(std::abs(fd - grad[i]) <= 1e-4 * std::max(1.0, grad.lpNorm<Eigen::Infinity>()));
  }
}

TEST_CASE("an infinite bound is the same as no bound") {
  const NetworkCase& c = testutil::wscc9();
  const SsscOpfProblem none(c, std::nullopt);
  const SsscOpfProblem inf(c, std::numeric_limits<double>::infinity());
  const Vector x = base_vector(none);
  CHECK(inf.num_inequalities() == none.num_inequalities() + 1);
  const Vector gi = inf.inequalities(x, nullptr);
  const Vector gn = none.inequalities(x, nullptr);
  CHECK((gi.head(gn.size()) - gn).norm() == 0.0);
  CHECK(std::isinf(inf.inequality_upper()[inf.eta_row()]));
  CHECK_THROWS(SsscOpfProblem(c, std::numeric_limits<double>::quiet_NaN()));
  CHECK_THROWS(SsscOpfProblem(c, -0.3, 0.0));
}
