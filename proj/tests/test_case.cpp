#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>

#include "ssopf/case.hpp"
#include "test_util.hpp"

using namespace ssopf;

namespace {

nlohmann::json wscc9_json() {
  std::ifstream in(testutil::data("wscc9.json"));
  return nlohmann::json::parse(in);
}

bool mentions(const std::vector<Diagnostic>& d, const std::string& needle) {
  for (const auto& x : d) {
    if (x.locator.find(needle) != std::string::npos || x.message.find(needle) != std::string::npos) {
      return true;
    }
  }
  return false;
}

}  // namespace

TEST_CASE("two-bus case loads") {
  const NetworkCase& c = testutil::two_bus();
  CHECK(c.num_buses() == 2);
  CHECK(c.num_lines() == 1);
  CHECK(c.num_generators() == 1);
  CHECK(c.reference_bus_index() == 0);
}

TEST_CASE("9-bus cost rows") {
  const NetworkCase& c = testutil::wscc9();
  REQUIRE(c.num_generators() == 3);
  const double expect[3][3] = {{9.76e-4, 14.712, 0}, {7.20e-4, 11.290, 0}, {5.46e-4, 8.001, 0}};
  for (int g = 0; g < 3; ++g) {
    CHECK(c.generators[g].cost.a2 == expect[g][0]);
    CHECK(c.generators[g].cost.a1 == expect[g][1]);
    CHECK(c.generators[g].cost.a0 == expect[g][2]);
  }
  CHECK(validate_case(c).empty());
}

TEST_CASE("duplicate bus id is rejected with the id named") {
  auto j = wscc9_json();
  j["buses"][4]["id"] = 4;
  const auto dir = testutil::scratch_dir("dup");
  std::ofstream(dir / "dup.json") << j.dump();
  try {
    load_case(dir / "dup.json");
    FAIL("expected CaseError");
  } catch (const CaseError& e) {
    CHECK(mentions(e.diagnostics(), "4"));
    CHECK(mentions(e.diagnostics(), "duplicate"));
  }
}

TEST_CASE("malformed file is a parse failure") {
  const auto dir = testutil::scratch_dir("bad");
  std::ofstream(dir / "bad.json") << "{ \"buses\": [ ";
  CHECK_THROWS_AS(load_case(dir / "bad.json"), CaseError);
  CHECK_THROWS_AS(load_case(dir / "missing.json"), CaseError);
}

TEST_CASE("validation diagnostics") {
  SUBCASE("P_min above P_max names the generator") {
    NetworkCase c = testutil::wscc9();
    c.generators[1].limits.p_min = 4.0;
    const auto d = validate_case(c);
    REQUIRE(d.size() == 1);
    CHECK(d[0].locator.find("generators[1]") != std::string::npos);
  }
  SUBCASE("transient reactance above synchronous") {
    NetworkCase c = testutil::wscc9();
    c.generators[2].machine.xd_prime = c.generators[2].machine.xd + 0.1;
    const auto d = validate_case(c);
    REQUIRE(d.size() == 1);
    CHECK(d[0].message.find("transient reactance ordering") != std::string::npos);
  }
  SUBCASE("two angle references") {
    NetworkCase c = testutil::wscc9();
    c.buses[3].is_angle_reference = true;
    CHECK_FALSE(validate_case(c).empty());
  }
  SUBCASE("isolated bus breaks connectivity") {
    NetworkCase c = testutil::wscc9();
    BusRecord b = c.buses[8];
    b.id = 99;
    c.buses.push_back(b);
    CHECK(mentions(validate_case(c), "connect"));
  }
  SUBCASE("line to itself") {
    NetworkCase c = testutil::wscc9();
    c.lines[0].to_bus = c.lines[0].from_bus;
    CHECK_FALSE(validate_case(c).empty());
  }
  SUBCASE("generator on a load bus") {
    NetworkCase c = testutil::wscc9();
    c.generators[0].bus = 5;
    CHECK_FALSE(validate_case(c).empty());
  }
  SUBCASE("negative cost curvature") {
    NetworkCase c = testutil::wscc9();
    c.generators[0].cost.a2 = -1.0;
    CHECK(validate_case(c).size() == 1);
  }
}

TEST_CASE("single-branch admittance stamp") {
  NetworkCase c = testutil::two_bus();
  c.lines[0].series_admittance = Complex(1.0, -10.0);
  c.lines[0].shunt_admittance_half = Complex(0.0, 0.0);
  const AdmittanceMatrix y = build_admittance(c);
  CHECK(y(0, 1) == Complex(-1.0, 10.0));
  CHECK(y(1, 0) == Complex(-1.0, 10.0));
  CHECK(y(0, 0) == Complex(1.0, -10.0));
  CHECK(y.magnitude(0, 1) == doctest::Approx(std::sqrt(101.0)));
  CHECK(y.angle(0, 1) == doctest::Approx(std::atan2(10.0, -1.0)));
}

TEST_CASE("9-bus admittance equals element-by-element stamping") {
  const NetworkCase& c = testutil::wscc9();
  const AdmittanceMatrix y = build_admittance(c);
  // Oracle: loop entries, and for each entry scan the branch list.
  const int n = c.num_buses();
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < n; ++k) {
      Complex expect(0.0, 0.0);
      for (const LineRecord& l : c.lines) {
        const int f = c.bus_index(l.from_bus);
        const int t = c.bus_index(l.to_bus);
        if (i == k && (f == i || t == i)) expect += l.series_admittance + l.shunt_admittance_half;
        if (i != k && ((f == i && t == k) || (f == k && t == i))) expect -= l.series_admittance;
      }
      CHECK(y(i, k) == expect);
    }
  }
  // Row sums leave only the shunt charging at each bus.
  for (int i = 0; i < n; ++i) {
    Complex shunt(0.0, 0.0);
    for (const LineRecord& l : c.lines) {
      if (c.bus_index(l.from_bus) == i || c.bus_index(l.to_bus) == i) shunt += l.shunt_admittance_half;
    }
    CHECK(std::abs(y.matrix().row(i).sum() - shunt) < 1e-12);
  }
}

TEST_CASE("save and reload is the identity") {
  const NetworkCase& c = testutil::wscc9();
  const auto dir = testutil::scratch_dir("roundtrip");
  save_case(c, dir / "a.json");
  const NetworkCase r = load_case(dir / "a.json");
  CHECK(case_to_json(r) == case_to_json(c));
  save_case(r, dir / "b.json");
  std::ifstream a(dir / "a.json"), b(dir / "b.json");
  const std::string sa((std::istreambuf_iterator<char>(a)), {});
  const std::string sb((std::istreambuf_iterator<char>(b)), {});
  CHECK(sa == sb);
  REQUIRE(r.num_generators() == c.num_generators());
  CHECK(r.generators[2].machine.td0_prime == c.generators[2].machine.td0_prime);
  CHECK(r.generators[0].exciter.be == c.generators[0].exciter.be);
  CHECK(r.lines[5].series_admittance == c.lines[5].series_admittance);
}

TEST_CASE("MW input is converted to per-unit") {
  auto j = wscc9_json();
  j["power_units"] = "mw";
  for (auto& b : j["buses"]) {
    b["pl"] = b["pl"].get<double>() * 100.0;
    b["ql"] = b["ql"].get<double>() * 100.0;
  }
  for (auto& g : j["generators"]) {
    for (const char* k : {"pmin", "pmax", "qmin", "qmax"}) g["limits"][k] = g["limits"][k].get<double>() * 100.0;
  }
  const NetworkCase c = case_from_json(j);
  const NetworkCase& ref = testutil::wscc9();
  for (int b = 0; b < c.num_buses(); ++b) {
    CHECK(c.buses[b].p_load == doctest::Approx(ref.buses[b].p_load).epsilon(1e-14));
  }
  CHECK(c.generators[2].limits.q_max == doctest::Approx(ref.generators[2].limits.q_max).epsilon(1e-14));
}

TEST_CASE("saturation function") {
  const ExciterParams& e = testutil::wscc9().generators[0].exciter;
  CHECK(e.saturation(1.2) == doctest::Approx(e.ae * std::exp(e.be * 1.2)));
}
