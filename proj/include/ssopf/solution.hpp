#pragma once

#include <filesystem>

#include <json.hpp>

#include "ssopf/nlp.hpp"
#include "ssopf/sqpgs.hpp"

namespace ssopf {

/// Dispatch, cost, eta, critical modes and the raw variable vector of a solver run.
/// Timings are included only when `with_seconds` is set (they break reproducibility).
nlohmann::json solution_to_json(const SsscOpfProblem& problem, const SolverResult& r,
                                const SolverParams& params, bool with_seconds = false);

/// Reads the "x" entry of a solution file written for the same case.
Vector solution_vector(const NetworkCase& c, const nlohmann::json& j);

nlohmann::json read_json(const std::filesystem::path& path);
void write_json(const nlohmann::json& j, const std::filesystem::path& path);

}  // namespace ssopf
