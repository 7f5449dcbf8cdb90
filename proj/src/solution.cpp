#include "ssopf/solution.hpp"

#include <fstream>

#include <fmt/format.h>

namespace ssopf {

nlohmann::json solution_to_json(const SsscOpfProblem& problem, const SolverResult& r,
                                const SolverParams& params, bool with_seconds) {
  const NetworkCase& c = problem.network();
  const VariableLayout& lay = problem.layout();
  nlohmann::json j;
  j["case"] = c.name;
  j["status"] = to_string(r.status);
  j["converged"] = r.status == SolverStatus::kConverged;
  j["message"] = r.message;
  j["iterations"] = r.trace.size();
  j["eta_bar"] = problem.eta_bar() ? nlohmann::json(*problem.eta_bar()) : nlohmann::json();
  j["sample_size"] = params.p;
  j["seed"] = params.seed;

  Vector p_gen(c.num_generators());
  for (int g = 0; g < c.num_generators(); ++g) p_gen[g] = r.x[lay.p_gen(g)];
  j["cost"] = generation_cost(c, p_gen);
  j["sigma_max"] = r.sigma_max;
  try {
    const ModalResult m = problem.modal(r.x);
    j["eta"] = m.eta;
    nlohmann::json modes = nlohmann::json::array();
    for (const Complex& z : critical_modes(m, 4)) modes.push_back({z.real(), z.imag()});
    j["critical_modes"] = std::move(modes);
  } catch (const Error& e) {
    j["eta"] = nullptr;
    j["eta_error"] = e.what();
  }

  nlohmann::json gens = nlohmann::json::array();
  for (int g = 0; g < c.num_generators(); ++g) {
    gens.push_back({{"bus", c.generators[g].bus},
                    {"p_mw", r.x[lay.p_gen(g)] * c.base_mva},
                    {"q_mvar", r.x[lay.q_gen(g)] * c.base_mva}});
  }
  j["generators"] = std::move(gens);
  nlohmann::json buses = nlohmann::json::array();
  for (int b = 0; b < c.num_buses(); ++b) {
    const int t = lay.theta(b);
    buses.push_back({{"id", c.buses[b].id}, {"v", r.x[lay.v(b)]}, {"theta", t < 0 ? 0.0 : r.x[t]}});
  }
  j["buses"] = std::move(buses);
  j["x"] = std::vector<double>(r.x.data(), r.x.data() + r.x.size());
  if (with_seconds) j["seconds"] = r.seconds;
  return j;
}

Vector solution_vector(const NetworkCase& c, const nlohmann::json& j) {
  const VariableLayout lay(c, true);
  if (!j.contains("x") || !j["x"].is_array()) throw Error("solution file has no \"x\" array");
  const auto v = j["x"].get<std::vector<double>>();
  if (static_cast<int>(v.size()) != lay.size()) {
    throw Error(fmt::format("solution has {} variables, case {} needs {}", v.size(), c.name,
                            lay.size()));
  }
  return Eigen::Map<const Vector>(v.data(), lay.size());
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(fmt::format("cannot open {}", path.string()));
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(fmt::format("{}: {}", path.string(), e.what()));
  }
}

void write_json(const nlohmann::json& j, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(fmt::format("cannot write {}", path.string()));
  out << j.dump(2) << '\n';
  if (!out) throw Error(fmt::format("failed writing {}", path.string()));
}

}  // namespace ssopf
