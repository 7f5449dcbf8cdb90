#include "ssopf/sensitivity_check.hpp"

#include <chrono>

#include "ssopf/power_flow.hpp"

namespace ssopf {

std::optional<OperatingPoint> random_feasible_point(const NetworkCase& c, std::mt19937_64& rng) {
  const int ng = c.num_generators();
  const int ref = c.reference_bus_index();
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  PowerFlowSetpoints sp;
  sp.p_gen.resize(ng);
  sp.v_gen.resize(ng);
  for (int g = 0; g < ng; ++g) {
    const GeneratorLimits& lim = c.generators[g].limits;
    const BusRecord& bus = c.buses[c.bus_index(c.generators[g].bus)];
    sp.p_gen[g] = lim.p_min + unit(rng) * (lim.p_max - lim.p_min);
    const double lo = std::max(bus.v_min, 0.95);
    sp.v_gen[g] = lo + unit(rng) * std::max(bus.v_max - lo, 0.0);
  }
  PowerFlowSolution pf;
  try {
    pf = solve_power_flow(c, sp);
  } catch (const PowerFlowError&) {
    return std::nullopt;
  }
  for (int g = 0; g < ng; ++g) {
    const GeneratorLimits& lim = c.generators[g].limits;
    if (c.bus_index(c.generators[g].bus) == ref &&
        (pf.p_gen[g] < lim.p_min || pf.p_gen[g] > lim.p_max)) {
      return std::nullopt;
    }
    if (pf.q_gen[g] < lim.q_min || pf.q_gen[g] > lim.q_max) return std::nullopt;
  }
  for (int b = 0; b < c.num_buses(); ++b) {
    if (pf.v[b] < c.buses[b].v_min || pf.v[b] > c.buses[b].v_max) return std::nullopt;
  }
  try {
    return steady_state_init(c, pf.p_gen, pf.q_gen, pf.v, pf.theta);
  } catch (const InitError&) {
    return std::nullopt;
  }
}

SensitivityPoint compare_gradients(const NetworkCase& c, const OperatingPoint& op,
                                   const SmallSignalAnalysis& an, double step) {
  const VariableLayout layout(c, true);
  SensitivityPoint pt;
  pt.p_gen = op.p_gen;
  pt.v = op.v;
  pt.eta = an.modal.eta;
  pt.lambda = an.modal.lambda_eta;
  pt.margin = an.modal.margin;
  pt.closed_form = spectral_abscissa_gradient(c, op, an, layout);
  pt.finite_difference.resize(layout.size());
  for (int i = 0; i < layout.size(); ++i) {
    pt.finite_difference[i] = finite_difference_gradient(c, op, layout, i, step);
  }
  const double scale = pt.finite_difference.lpNorm<Eigen::Infinity>();
  const Vector diff = (pt.closed_form - pt.finite_difference).cwiseAbs();
  Eigen::Index worst = 0;
  const double dmax = diff.maxCoeff(&worst);
  pt.worst_variable = static_cast<int>(worst);
  pt.max_rel_error = scale > 0.0 ? dmax / scale : dmax;
  return pt;
}

SensitivityReport sensitivity_check(const NetworkCase& c, const SensitivityCheckOptions& opts) {
  const auto start = std::chrono::steady_clock::now();
  std::mt19937_64 rng(opts.seed);
  SensitivityReport report;
  int attempts = 0;
  while (static_cast<int>(report.points.size()) < opts.points) {
    if (++attempts > opts.max_attempts) {
      throw Error("could not find enough random feasible points with a simple critical eigenvalue");
    }
    const std::optional<OperatingPoint> op = random_feasible_point(c, rng);
    if (!op) {
      ++report.rejected;
      continue;
    }
    SmallSignalAnalysis an;
    try {
      an = analyze_point(c, *op);
    } catch (const Error&) {
      ++report.rejected;
      continue;
    }
    if (!(an.modal.margin > opts.min_margin)) {
      ++report.rejected;
      continue;
    }
    report.points.push_back(compare_gradients(c, *op, an, opts.step));
    report.max_rel_error = std::max(report.max_rel_error, report.points.back().max_rel_error);
  }
  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

nlohmann::json report_to_json(const NetworkCase& c, const SensitivityReport& r) {
  const VariableLayout layout(c, true);
  nlohmann::json j;
  j["case"] = c.name;
  j["max_rel_error"] = r.max_rel_error;
  j["rejected_points"] = r.rejected;
  nlohmann::json pts = nlohmann::json::array();
  for (const SensitivityPoint& p : r.points) {
    nlohmann::json q;
    q["p_gen_mw"] = std::vector<double>(p.p_gen.data(), p.p_gen.data() + p.p_gen.size());
    for (auto& v : q["p_gen_mw"]) v = v.get<double>() * c.base_mva;
    q["v"] = std::vector<double>(p.v.data(), p.v.data() + p.v.size());
    q["eta"] = p.eta;
    q["lambda"] = {p.lambda.real(), p.lambda.imag()};
    q["margin"] = p.margin;
    q["max_rel_error"] = p.max_rel_error;
    q["worst_variable"] = p.worst_variable >= 0 ? layout.name(p.worst_variable) : "";
    nlohmann::json g = nlohmann::json::array();
    for (int i = 0; i < p.closed_form.size(); ++i) {
      g.push_back({{"variable", layout.name(i)},
                   {"closed_form", p.closed_form[i]},
                   {"finite_difference", p.finite_difference[i]}});
    }
    q["gradient"] = std::move(g);
    pts.push_back(std::move(q));
  }
  j["points"] = std::move(pts);
  return j;
}

}  // namespace ssopf
