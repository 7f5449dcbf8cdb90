#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>

#include <unsupported/Eigen/MatrixFunctions>

#include "ssopf/power_flow.hpp"
#include "ssopf/smallsignal.hpp"
#include "ssopf/tdsim.hpp"
#include "test_util.hpp"

using namespace ssopf;

namespace {

OperatingPoint base_point() {
  const NetworkCase& c = testutil::wscc9();
  PowerFlowSetpoints sp;
  sp.p_gen = Vector(3);
  sp.p_gen << 0.25, 0.25, 2.76;
  sp.v_gen = Vector(3);
  sp.v_gen << 1.04, 1.025, 1.025;
  const PowerFlowSolution pf = solve_power_flow(c, sp);
  return steady_state_init(c, pf.p_gen, pf.q_gen, pf.v, pf.theta);
}

double max_state_gap(const OperatingPoint& a, const OperatingPoint& b) {
  double m = 0.0;
  for (auto f : {&OperatingPoint::delta, &OperatingPoint::omega, &OperatingPoint::eq_prime,
                 &OperatingPoint::ed_prime, &OperatingPoint::efd, &OperatingPoint::vr, &OperatingPoint::rf,
                 &OperatingPoint::v, &OperatingPoint::theta}) {
    m = std::max(m, ((a.*f) - (b.*f)).lpNorm<Eigen::Infinity>());
  }
  return m;
}

// One trapezoidal step of the linear system ds/dt = A ds.
Matrix trapezoid(const Matrix& a, double dt) {
  const Matrix i = Matrix::Identity(a.rows(), a.cols());
  return (i - 0.5 * dt * a).partialPivLu().solve(i + 0.5 * dt * a);
}

}  // namespace

TEST_CASE("an equilibrium is held") {
  const NetworkCase& c = testutil::wscc9();
  const OperatingPoint op = base_point();
  SimConfig cfg;
  cfg.horizon = 10.0;
  const Trajectory tr = simulate(c, op, cfg);
  REQUIRE(tr.complete);
  CHECK(tr.time.size() == 1001);
  CHECK(tr.time.back() == doctest::Approx(10.0));
  double drift = 0.0;
  for (const OperatingPoint& p : tr.points) drift = std::max(drift, max_state_gap(p, op));
  CHECK(drift < 1e-7);

  CHECK(max_state_gap(dae_step(c, op, 0.01, 1e-10), op) < 1e-9);
}

TEST_CASE("simulation refuses a non-equilibrium start") {
  OperatingPoint op = base_point();
  op.eq_prime[0] += 0.01;
  CHECK_THROWS_AS(simulate(testutil::wscc9(), op, SimConfig{}), InitError);
}

TEST_CASE("configuration checks") {
  SimConfig cfg;
  cfg.dt = 0.0;
  CHECK_THROWS(cfg.validate());
  cfg = SimConfig{};
  cfg.horizon = 0.001;
  CHECK_THROWS(cfg.validate());
  cfg = SimConfig{};
  cfg.newton_tol = 0.0;
  CHECK_THROWS(cfg.validate());
}

TEST_CASE("trapezoidal rule is second order") {
  const NetworkCase& c = testutil::wscc9();
  const OperatingPoint op = base_point();
  auto run = [&](double dt) {
    SimConfig cfg;
    cfg.horizon = 1.0;
    cfg.dt = dt;
    cfg.disturbance = LoadStep{5, 0.1, 0.0, 0.0};
    const Trajectory tr = simulate(c, op, cfg);
    REQUIRE(tr.complete);
    return tr.points.back();
  };
  const OperatingPoint ref = run(0.000625);
  const double e1 = max_state_gap(run(0.02), ref);
  const double e2 = max_state_gap(run(0.01), ref);
  const double e3 = max_state_gap(run(0.005), ref);
  CHECK(e1 / e2 == doctest::Approx(4.0).epsilon(0.2));
  CHECK(e2 / e3 == doctest::Approx(4.0).epsilon(0.2));
}

TEST_CASE("one step against the linearization") {
  const NetworkCase& c = testutil::wscc9();
  const OperatingPoint op = base_point();
  const Matrix a = analyze_point(c, op).state.a;
  const DaeModel model(c);
  DaeState x0;
  model.pack(op, x0.s, x0.y);
  const DaeInputs u = model.inputs(op);

  Vector v = Vector::LinSpaced(a.rows(), -1.0, 1.0);
  v /= v.norm();
  auto step_map = [&](double eps, double dt) {
    DaeState x = x0;
    x.s += eps * v;
    x = solve_algebraic(model, x, u, 1e-13, 20);
    return Vector((dae_step(model, x, u, dt, 1e-13, 20).s - x0.s) / eps);
  };

  // The nonlinear step linearizes to the trapezoidal map of A.
  const double dt = 0.05;
  const double g1 = (step_map(1e-4, dt) - trapezoid(a, dt) * v).norm();
  const double g2 = (step_map(5e-5, dt) - trapezoid(a, dt) * v).norm();
  CHECK(g1 < 1e-3);
  CHECK(g2 < 0.6 * g1);  // shrinks with the perturbation

  // Local error against the exact flow exp(A dt) is third order (once dt resolves the
  // fastest exciter modes).
  const double l1 = (trapezoid(a, 0.002) * v - (a * 0.002).exp() * v).norm();
  const double l2 = (trapezoid(a, 0.001) * v - (a * 0.001).exp() * v).norm();
  CHECK(l1 / l2 == doctest::Approx(8.0).epsilon(0.15));
}

TEST_CASE("decay-rate estimator") {
  std::vector<double> t, y;
  SUBCASE("damped sinusoid") {
    for (int k = 0; k <= 2000; ++k) {
      t.push_back(0.01 * k);
      y.push_back(std::exp(-0.3 * t.back()) * std::cos(5 * t.back()));
    }
    CHECK(std::abs(decay_rate_estimate(t, y, 0.0, 20.0) + 0.3) < 0.02);
  }
  SUBCASE("undamped sinusoid") {
    for (int k = 0; k <= 2000; ++k) {
      t.push_back(0.01 * k);
      y.push_back(std::sin(3 * t.back()));
    }
    CHECK(std::abs(decay_rate_estimate(t, y, 0.0, 20.0)) < 0.02);
  }
  SUBCASE("pure exponential") {
    for (int k = 0; k <= 500; ++k) {
      t.push_back(0.01 * k);
      y.push_back(2.0 * std::exp(-0.8 * t.back()));
    }
    CHECK(decay_rate_estimate(t, y, 0.0, 5.0) == doctest::Approx(-0.8).epsilon(1e-9));
  }
  SUBCASE("too few samples") {
    for (int k = 0; k < 5; ++k) {
      t.push_back(k);
      y.push_back(1.0);
    }
    CHECK_THROWS(decay_rate_estimate(t, y, 0.0, 10.0));
  }
  SUBCASE("nothing to fit") {
    for (int k = 0; k < 50; ++k) {
      t.push_back(k);
      y.push_back(1e-13);
    }
    CHECK_THROWS(decay_rate_estimate(t, y, 0.0, 100.0));
  }
}

TEST_CASE("load step response and CSV export") {
  const NetworkCase& c = testutil::wscc9();
  SimConfig cfg;
  cfg.horizon = 2.0;
  cfg.disturbance = LoadStep{5, 0.05, 0.0, 0.5};
  const Trajectory tr = simulate(c, base_point(), cfg);
  REQUIRE(tr.complete);
  // Both sides of the jump are stored at t = 0.5.
  CHECK(tr.time.size() == 202);
  int at_step = 0;
  for (double t : tr.time) at_step += std::abs(t - 0.5) < 1e-12;
  CHECK(at_step == 2);
  const std::vector<double> dev = speed_deviation(tr, SpeedReference::kCentreOfInertia);
  CHECK(dev[10] == 0.0);
  CHECK(dev.back() > 1e-6);

  const auto dir = testutil::scratch_dir("tdsim");
  write_trajectory_csv(tr, dir / "traj.csv");
  std::ifstream in(dir / "traj.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "t,omega_1,omega_2,omega_3");
  int rows = 0;
  for (std::string line; std::getline(in, line);) ++rows;
  CHECK(rows == static_cast<int>(tr.time.size()));
}
