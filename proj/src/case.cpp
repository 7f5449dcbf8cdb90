#include "ssopf/case.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include <fmt/format.h>
#include <json.hpp>

namespace ssopf {

using nlohmann::json;

double ExciterParams::saturation(double efd) const { return ae * std::exp(be * efd); }

int NetworkCase::bus_index(int id) const {
  for (int b = 0; b < num_buses(); ++b) {
    if (buses[b].id == id) return b;
  }
  throw CaseError(fmt::format("unknown bus id {}", id));
}

int NetworkCase::reference_bus_index() const {
  for (int b = 0; b < num_buses(); ++b) {
    if (buses[b].is_angle_reference) return b;
  }
  throw CaseError("case has no angle reference bus");
}

std::optional<int> NetworkCase::generator_at(int b) const {
  for (int g = 0; g < num_generators(); ++g) {
    if (generators[g].bus == buses[b].id) return g;
  }
  return std::nullopt;
}

namespace {

std::string bus_loc(const BusRecord& b) { return fmt::format("buses[id={}]", b.id); }
std::string line_loc(int l) { return fmt::format("lines[{}]", l); }
std::string gen_loc(int g) { return fmt::format("generators[{}]", g); }

void check_positive(std::vector<Diagnostic>& out, const std::string& loc, const char* field,
                    double v) {
  if (!(v > 0.0)) out.push_back({loc, fmt::format("{} must be > 0 (got {})", field, v)});
}

}  // namespace

std::vector<Diagnostic> validate_case(const NetworkCase& c) {
  std::vector<Diagnostic> out;
  if (!(c.base_mva > 0.0)) out.push_back({"base_mva", "base_mva must be > 0"});
  if (c.buses.empty()) out.push_back({"buses", "case has no buses"});

  std::map<int, int> position;
  int num_ref = 0;
  for (int b = 0; b < c.num_buses(); ++b) {
    const BusRecord& bus = c.buses[b];
    if (!position.emplace(bus.id, b).second) {
      out.push_back({bus_loc(bus), fmt::format("duplicate bus id {}", bus.id)});
    }
    if (!(bus.v_min > 0.0 && bus.v_min < bus.v_max)) {
      out.push_back({bus_loc(bus), fmt::format("voltage bounds must satisfy 0 < v_min < v_max "
                                               "(got {}, {})",
                                               bus.v_min, bus.v_max)});
    }
    if (bus.is_angle_reference) ++num_ref;
  }
  if (num_ref != 1) {
    out.push_back({"buses", fmt::format("exactly one bus must be the angle reference (found {})",
                                        num_ref)});
  }

  for (int l = 0; l < c.num_lines(); ++l) {
    const LineRecord& line = c.lines[l];
    if (!position.count(line.from_bus)) {
      out.push_back({line_loc(l), fmt::format("from_bus {} does not exist", line.from_bus)});
    }
    if (!position.count(line.to_bus)) {
      out.push_back({line_loc(l), fmt::format("to_bus {} does not exist", line.to_bus)});
    }
    if (line.from_bus == line.to_bus) {
      out.push_back({line_loc(l), "from_bus and to_bus must differ"});
    }
    check_positive(out, line_loc(l), "i_max", line.i_max);
  }

  std::set<int> generator_buses;
  for (int g = 0; g < c.num_generators(); ++g) {
    const GeneratorRecord& gen = c.generators[g];
    const std::string loc = gen_loc(g);
    auto it = position.find(gen.bus);
    if (it == position.end()) {
      out.push_back({loc, fmt::format("bus {} does not exist", gen.bus)});
    } else if (c.buses[it->second].kind != BusKind::kGenerator) {
      out.push_back({loc, fmt::format("bus {} is not a generator bus", gen.bus)});
    }
    if (!generator_buses.insert(gen.bus).second) {
      out.push_back({loc, fmt::format("more than one generator on bus {}", gen.bus)});
    }
    if (gen.limits.p_min > gen.limits.p_max) {
      out.push_back({loc, fmt::format("P_min > P_max ({} > {})", gen.limits.p_min,
                                      gen.limits.p_max)});
    }
    if (gen.limits.q_min > gen.limits.q_max) {
      out.push_back({loc, fmt::format("Q_min > Q_max ({} > {})", gen.limits.q_min,
                                      gen.limits.q_max)});
    }
    if (gen.cost.a2 < 0.0) out.push_back({loc, "cost a2 must be >= 0"});

    const MachineDynamics& m = gen.machine;
    check_positive(out, loc, "machine.M", m.M);
    check_positive(out, loc, "machine.td0p", m.td0_prime);
    check_positive(out, loc, "machine.tq0p", m.tq0_prime);
    check_positive(out, loc, "machine.omega_s", m.omega_s);
    if (!(m.xd_prime > 0.0 && m.xd >= m.xd_prime)) {
      out.push_back({loc, fmt::format("transient reactance ordering requires xd >= xdp > 0 "
                                      "(got xd={}, xdp={})",
                                      m.xd, m.xd_prime)});
    }
    if (!(m.xq_prime > 0.0 && m.xq >= m.xq_prime)) {
      out.push_back({loc, fmt::format("transient reactance ordering requires xq >= xqp > 0 "
                                      "(got xq={}, xqp={})",
                                      m.xq, m.xq_prime)});
    }
    const ExciterParams& e = gen.exciter;
    check_positive(out, loc, "exciter.te", e.te);
    check_positive(out, loc, "exciter.ta", e.ta);
    check_positive(out, loc, "exciter.tf", e.tf);
    check_positive(out, loc, "exciter.ka", e.ka);
    if (e.ae < 0.0) out.push_back({loc, "exciter.ae must be >= 0"});
    if (e.be < 0.0) out.push_back({loc, "exciter.be must be >= 0"});
  }
  for (const BusRecord& bus : c.buses) {
    if (bus.kind == BusKind::kGenerator && !generator_buses.count(bus.id)) {
      out.push_back({bus_loc(bus), "generator bus without a generator"});
    }
  }

  // Connectivity by union-find over valid lines.
  if (!c.buses.empty()) {
    std::vector<int> parent(c.buses.size());
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](int a) {
      while (parent[a] != a) a = parent[a] = parent[parent[a]];
      return a;
    };
    for (const LineRecord& line : c.lines) {
      auto f = position.find(line.from_bus);
      auto t = position.find(line.to_bus);
      if (f == position.end() || t == position.end()) continue;
      parent[find(f->second)] = find(t->second);
    }
    const int root = find(0);
    for (int b = 0; b < c.num_buses(); ++b) {
      if (find(b) != root) {
        out.push_back({bus_loc(c.buses[b]), "bus is not connected to the rest of the network"});
      }
    }
  }
  return out;
}

namespace {

Complex complex_from(const json& j) {
  if (!j.is_array() || j.size() != 2) throw CaseError("complex value must be [re, im]");
  return {j[0].get<double>(), j[1].get<double>()};
}

json complex_to(Complex z) { return json::array({z.real(), z.imag()}); }

BusKind kind_from(const std::string& s) {
  if (s == "generator") return BusKind::kGenerator;
  if (s == "load") return BusKind::kLoad;
  throw CaseError(fmt::format("unknown bus kind '{}'", s));
}

}  // namespace

NetworkCase case_from_json(const json& j) {
  NetworkCase c;
  try {
    c.name = j.value("name", std::string{});
    c.base_mva = j.at("base_mva").get<double>();
    // Powers may optionally be given in MW/MVAr; everything is stored per-unit.
    const std::string units = j.value("power_units", std::string{"pu"});
    if (units != "pu" && units != "mw") throw CaseError("power_units must be 'pu' or 'mw'");
    const double scale = units == "mw" ? 1.0 / c.base_mva : 1.0;

    for (const json& b : j.at("buses")) {
      BusRecord bus;
      bus.id = b.at("id").get<int>();
      bus.kind = kind_from(b.at("kind").get<std::string>());
      bus.p_load = b.value("pl", 0.0) * scale;
      bus.q_load = b.value("ql", 0.0) * scale;
      bus.v_min = b.at("vmin").get<double>();
      bus.v_max = b.at("vmax").get<double>();
      bus.is_angle_reference = b.value("angle_reference", false);
      c.buses.push_back(bus);
    }
    for (const json& l : j.at("lines")) {
      LineRecord line;
      line.from_bus = l.at("from").get<int>();
      line.to_bus = l.at("to").get<int>();
      if (l.contains("series_admittance")) {
        line.series_admittance = complex_from(l.at("series_admittance"));
      } else {
        // Convenience input: series impedance [r, x] and total charging susceptance b.
        const Complex z = complex_from(l.at("series_impedance"));
        line.series_admittance = 1.0 / z;
      }
      if (l.contains("shunt_admittance_half")) {
        line.shunt_admittance_half = complex_from(l.at("shunt_admittance_half"));
      } else {
        line.shunt_admittance_half = Complex(0.0, 0.5 * l.value("charging_susceptance", 0.0));
      }
      line.i_max = l.at("imax").get<double>();
      c.lines.push_back(line);
    }
    for (const json& g : j.at("generators")) {
      GeneratorRecord gen;
      gen.bus = g.at("bus").get<int>();
      const json& cost = g.at("cost");
      gen.cost = {cost.at("a2").get<double>(), cost.at("a1").get<double>(),
                  cost.at("a0").get<double>()};
      const json& lim = g.at("limits");
      gen.limits = {lim.at("pmin").get<double>() * scale, lim.at("pmax").get<double>() * scale,
                    lim.at("qmin").get<double>() * scale, lim.at("qmax").get<double>() * scale};
      const json& m = g.at("machine");
      gen.machine.M = m.at("M").get<double>();
      gen.machine.D = m.at("D").get<double>();
      gen.machine.xd = m.at("xd").get<double>();
      gen.machine.xq = m.at("xq").get<double>();
      gen.machine.xd_prime = m.at("xdp").get<double>();
      gen.machine.xq_prime = m.at("xqp").get<double>();
      gen.machine.td0_prime = m.at("td0p").get<double>();
      gen.machine.tq0_prime = m.at("tq0p").get<double>();
      gen.machine.rs = m.at("rs").get<double>();
      gen.machine.omega_s = m.at("omega_s").get<double>();
      const json& e = g.at("exciter");
      gen.exciter.ka = e.at("ka").get<double>();
      gen.exciter.ta = e.at("ta").get<double>();
      gen.exciter.ke = e.at("ke").get<double>();
      gen.exciter.te = e.at("te").get<double>();
      gen.exciter.kf = e.at("kf").get<double>();
      gen.exciter.tf = e.at("tf").get<double>();
      gen.exciter.ae = e.at("ae").get<double>();
      gen.exciter.be = e.at("be").get<double>();
      c.generators.push_back(gen);
    }
  } catch (const json::exception& ex) {
    throw CaseError(fmt::format("malformed case: {}", ex.what()));
  }

  auto diagnostics = validate_case(c);
  if (!diagnostics.empty()) {
    std::string msg = "invalid case:";
    for (const Diagnostic& d : diagnostics) msg += fmt::format("\n  {}: {}", d.locator, d.message);
    throw CaseError(msg, std::move(diagnostics));
  }
  return c;
}

json case_to_json(const NetworkCase& c) {
  json j;
  j["name"] = c.name;
  j["base_mva"] = c.base_mva;
  j["power_units"] = "pu";
  json buses = json::array();
  for (const BusRecord& b : c.buses) {
    json o{{"id", b.id},
           {"kind", b.kind == BusKind::kGenerator ? "generator" : "load"},
           {"pl", b.p_load},
           {"ql", b.q_load},
           {"vmin", b.v_min},
           {"vmax", b.v_max}};
    if (b.is_angle_reference) o["angle_reference"] = true;
    buses.push_back(std::move(o));
  }
  j["buses"] = std::move(buses);
  json lines = json::array();
  for (const LineRecord& l : c.lines) {
    lines.push_back({{"from", l.from_bus},
                     {"to", l.to_bus},
                     {"series_admittance", complex_to(l.series_admittance)},
                     {"shunt_admittance_half", complex_to(l.shunt_admittance_half)},
                     {"imax", l.i_max}});
  }
  j["lines"] = std::move(lines);
  json gens = json::array();
  for (const GeneratorRecord& g : c.generators) {
    const MachineDynamics& m = g.machine;
    const ExciterParams& e = g.exciter;
    gens.push_back(
        {{"bus", g.bus},
         {"cost", {{"a2", g.cost.a2}, {"a1", g.cost.a1}, {"a0", g.cost.a0}}},
         {"limits",
          {{"pmin", g.limits.p_min},
           {"pmax", g.limits.p_max},
           {"qmin", g.limits.q_min},
           {"qmax", g.limits.q_max}}},
         {"machine",
          {{"M", m.M},
           {"D", m.D},
           {"xd", m.xd},
           {"xq", m.xq},
           {"xdp", m.xd_prime},
           {"xqp", m.xq_prime},
           {"td0p", m.td0_prime},
           {"tq0p", m.tq0_prime},
           {"rs", m.rs},
           {"omega_s", m.omega_s}}},
         {"exciter",
          {{"ka", e.ka},
           {"ta", e.ta},
           {"ke", e.ke},
           {"te", e.te},
           {"kf", e.kf},
           {"tf", e.tf},
           {"ae", e.ae},
           {"be", e.be}}}});
  }
  j["generators"] = std::move(gens);
  return j;
}

NetworkCase load_case(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw CaseError(fmt::format("cannot open case file '{}'", path.string()));
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& ex) {
    throw CaseError(fmt::format("parse error in '{}': {}", path.string(), ex.what()));
  }
  return case_from_json(j);
}

void save_case(const NetworkCase& c, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw CaseError(fmt::format("cannot write case file '{}'", path.string()));
  out << case_to_json(c).dump(2) << '\n';
}

AdmittanceMatrix build_admittance(const NetworkCase& c) {
  const int n = c.num_buses();
  ComplexMatrix y = ComplexMatrix::Zero(n, n);
  for (const LineRecord& line : c.lines) {
    const int f = c.bus_index(line.from_bus);
    const int t = c.bus_index(line.to_bus);
    y(f, f) += line.series_admittance + line.shunt_admittance_half;
    y(t, t) += line.series_admittance + line.shunt_admittance_half;
    y(f, t) -= line.series_admittance;
    y(t, f) -= line.series_admittance;
  }
  return AdmittanceMatrix(std::move(y));
}

}  // namespace ssopf
