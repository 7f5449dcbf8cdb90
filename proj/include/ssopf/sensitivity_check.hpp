#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include <json.hpp>

#include "ssopf/smallsignal.hpp"

namespace ssopf {

/// Equilibrium at a random dispatch: P_G uniform in its limits for every non-slack generator,
/// generator voltages uniform in [max(vmin, 0.95), vmax], then power flow and init. Returns
/// nothing if the power flow fails or the slack P / any Q_G / any V leaves its limits.
std::optional<OperatingPoint> random_feasible_point(const NetworkCase& c, std::mt19937_64& rng);

struct SensitivityCheckOptions {
  int points = 20;
  std::uint64_t seed = 7;
  double step = 1e-6;
  double min_margin = 1e-3;  // critical eigenvalue must be this far from every other one
  int max_attempts = 5000;
};

struct SensitivityPoint {
  Vector p_gen, v;
  double eta = 0.0;
  Complex lambda;
  double margin = 0.0;
  double max_rel_error = 0.0;  // max_i |cf_i - fd_i| / max_i |fd_i|
  int worst_variable = -1;
  Vector closed_form, finite_difference;
};

struct SensitivityReport {
  std::vector<SensitivityPoint> points;
  int rejected = 0;
  double max_rel_error = 0.0;
  double seconds = 0.0;
};

/// Closed form vs central differences at an already analyzed point.
SensitivityPoint compare_gradients(const NetworkCase& c, const OperatingPoint& op,
                                   const SmallSignalAnalysis& an, double step);

SensitivityReport sensitivity_check(const NetworkCase& c, const SensitivityCheckOptions& opts = {});

nlohmann::json report_to_json(const NetworkCase& c, const SensitivityReport& r);

}  // namespace ssopf
