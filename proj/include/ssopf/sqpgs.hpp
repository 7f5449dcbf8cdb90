#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "ssopf/nlp_problem.hpp"
#include "ssopf/qp.hpp"

namespace ssopf {

struct SolverParams {
  double rho0 = 0.1;
  double mu_rho = 0.5;
  double eps0 = 0.1;
  double mu_eps = 0.5;
  double tau0 = 0.1;
  double mu_tau = 0.8;
  double varpi = 1e-4;  // 1 stalls the line search near kinks of the merit
  double gamma = 0.8;
  double nu_in = 1e-3;
  double nu_s = 1e-4;
  int p = 0;  // sample size for every function the problem flags nonsmooth
  int K_max = 100;
  int lbfgs_memory = 10;
  double h_min = 1e-8;
  double beta_min = 1e-12;
  std::uint64_t seed = 0;
  double qp_tol = 1e-8;
  int threads = 1;
  bool log_modes = false;

  /// Throws Error naming the first parameter outside its admissible range.
  void validate() const;
};

enum class SolverStatus { kConverged, kIterationLimit, kQpFailure, kLineSearchFailure };
std::string to_string(SolverStatus s);

struct IterationRecord {
  int k = 0;
  double f = 0.0;
  double sigma_max = 0.0;
  double delta_q = 0.0;
  double beta = 0.0;
  double eps = 0.0;
  double rho = 0.0;
  double tau = 0.0;
  std::optional<double> eta;
  std::vector<Complex> modes;
  // Diagnostics beyond the trace schema.
  int qp_iterations = 0;
  double qp_kkt = 0.0;
  int qp_rows = 0;
  bool null_step = false;
  bool line_search_failed = false;
  double merit_before = 0.0;
  double merit_after = 0.0;
  std::string note;
  std::map<std::string, double> seconds;
};

struct SolverResult {
  Vector x;
  double f = 0.0;
  double sigma_max = 0.0;
  SolverStatus status = SolverStatus::kIterationLimit;
  std::string message;
  std::vector<IterationRecord> trace;
  std::map<std::string, double> seconds;
};

class SolverError : public Error {
 public:
  SolverError(const std::string& what, std::vector<IterationRecord> trace)
      : Error(what), trace_(std::move(trace)) {}
  const std::vector<IterationRecord>& trace() const { return trace_; }

 private:
  std::vector<IterationRecord> trace_;
};

/// Deterministic generator for the (k, function) substream.
std::mt19937_64 substream(std::uint64_t seed, int k, int function_id);

/// B[0] = x, then p points uniform in the Euclidean ball of radius eps around x
/// (Gaussian direction, radius eps * U^(1/n)).
std::vector<Vector> sample_points(const Vector& x, double eps, int p, std::mt19937_64& rng);

/// sigma = (|h|; max(g - g_hi, 0); max(g_lo - g, 0)).
Vector infeasibility(const NlpProblem& problem, const Vector& x);
Vector infeasibility(const Vector& h, const Vector& g, const Vector& lo, const Vector& hi);

/// Values at the iterate plus the gradients of every function at every sample point.
/// Index 0 of each gradient list is the gradient at the iterate.
struct SampledModel {
  double f = 0.0;
  Vector h, g, g_lo, g_hi;
  std::vector<Vector> grad_f;
  std::vector<std::vector<Vector>> grad_h;
  std::vector<std::vector<Vector>> grad_g;
};

/// Where each QP row came from.
struct RowTag {
  enum Kind { kObjective, kEqualityPlus, kEqualityMinus, kUpper, kLower } kind;
  int function = 0;  // index within its kind
  int sample = 0;    // index into the sample set (0 = iterate)
};

struct Subproblem {
  ElasticQp qp;
  std::vector<RowTag> tags;
  int z = 0;                 // slack index of z
  std::vector<int> e;        // per equality
  std::vector<int> r_upper;  // per inequality, -1 if the upper bound is infinite
  std::vector<int> r_lower;  // per inequality, -1 if the lower bound is infinite
};

Subproblem build_subproblem(const SampledModel& model, const Matrix& h_matrix, double rho);

struct SubproblemSolution {
  Vector d;
  double z = 0.0;
  Vector e, r_upper, r_lower;  // zero where the bound is infinite
  QpResult qp;
};

SubproblemSolution solve_subproblem(const Subproblem& sub, double qp_tol);

/// Merit value at the iterate minus the sampled linear model (plus 1/2 d'Hd) at d.
double model_reduction(const SampledModel& model, const Matrix& h_matrix, double rho,
                       const Vector& d);

double merit(const NlpProblem& problem, const Vector& x, double rho);

struct LineSearchResult {
  double beta = 0.0;
  Vector x;
  double merit_before = 0.0;
  double merit_after = 0.0;
  bool failed = false;
};

LineSearchResult line_search(const NlpProblem& problem, const Vector& x, const Vector& d,
                             double rho, double delta_q, const SolverParams& params);

SolverResult solve(const NlpProblem& problem, const Vector& x0, const SolverParams& params,
                   Profile* profile = nullptr);

nlohmann::json record_to_json(const IterationRecord& r, bool with_modes);
IterationRecord record_from_json(const nlohmann::json& j);
/// Writes `path` (JSON lines) and the CSV companion at `csv_path`. Throws on an empty trace.
void emit_trace(const std::vector<IterationRecord>& trace, const std::filesystem::path& path,
                const std::filesystem::path& csv_path, bool with_modes = false);
std::vector<IterationRecord> read_trace(const std::filesystem::path& path);

}  // namespace ssopf
