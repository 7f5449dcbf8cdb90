#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ssopf/common.hpp"

namespace ssopf {

enum class BusKind { kGenerator, kLoad };

struct BusRecord {
  int id = 0;
  BusKind kind = BusKind::kLoad;
  double p_load = 0.0;  // per-unit
  double q_load = 0.0;  // per-unit
  double v_min = 0.9;
  double v_max = 1.1;
  bool is_angle_reference = false;
};

/// Pi-model branch. Admittances in per-unit.
struct LineRecord {
  int from_bus = 0;
  int to_bus = 0;
  Complex series_admittance;
  Complex shunt_admittance_half;
  double i_max = 0.0;
};

struct GeneratorLimits {
  double p_min = 0.0, p_max = 0.0;  // per-unit
  double q_min = 0.0, q_max = 0.0;
};

/// Quadratic cost a2*P^2 + a1*P + a0 with P in MW.
struct CostCoefficients {
  double a2 = 0.0, a1 = 0.0, a0 = 0.0;
};

/// Two-axis synchronous machine. Swing equation uses M*domega/dt with omega in rad/s.
struct MachineDynamics {
  double M = 0.0;
  double D = 0.0;
  double xd = 0.0, xq = 0.0;
  double xd_prime = 0.0, xq_prime = 0.0;
  double td0_prime = 0.0, tq0_prime = 0.0;
  double rs = 0.0;
  double omega_s = 0.0;
};

/// IEEE Type DC-1 exciter with saturation S_E(E_fd) = ae * exp(be * E_fd).
struct ExciterParams {
  double ka = 0.0, ta = 0.0;
  double ke = 0.0, te = 0.0;
  double kf = 0.0, tf = 0.0;
  double ae = 0.0, be = 0.0;

  double saturation(double efd) const;
};

struct GeneratorRecord {
  int bus = 0;
  GeneratorLimits limits;
  CostCoefficients cost;
  MachineDynamics machine;
  ExciterParams exciter;
};

/// Static and dynamic data of one network. Immutable once loaded.
struct NetworkCase {
  std::string name;
  double base_mva = 100.0;
  std::vector<BusRecord> buses;
  std::vector<LineRecord> lines;
  std::vector<GeneratorRecord> generators;

  int num_buses() const { return static_cast<int>(buses.size()); }
  int num_lines() const { return static_cast<int>(lines.size()); }
  int num_generators() const { return static_cast<int>(generators.size()); }

  /// Position of a bus id in `buses`; throws if absent.
  int bus_index(int id) const;
  int reference_bus_index() const;
  /// Generator attached to bus position `b`, if any.
  std::optional<int> generator_at(int b) const;
};

struct Diagnostic {
  std::string locator;  // e.g. "generators[1]", "buses[id=4]"
  std::string message;
};

class CaseError : public Error {
 public:
  CaseError(const std::string& what, std::vector<Diagnostic> diagnostics = {})
      : Error(what), diagnostics_(std::move(diagnostics)) {}
  const std::vector<Diagnostic>& diagnostics() const { return diagnostics_; }

 private:
  std::vector<Diagnostic> diagnostics_;
};

/// Returns one diagnostic per violated invariant; empty iff the case is valid.
std::vector<Diagnostic> validate_case(const NetworkCase& c);

NetworkCase case_from_json(const nlohmann::json& j);
nlohmann::json case_to_json(const NetworkCase& c);

/// Reads and validates a case file. Throws CaseError on parse or validation failure.
NetworkCase load_case(const std::filesystem::path& path);
void save_case(const NetworkCase& c, const std::filesystem::path& path);

/// Dense bus admittance matrix, rows/columns in `buses` order.
class AdmittanceMatrix {
 public:
  explicit AdmittanceMatrix(ComplexMatrix y) : y_(std::move(y)) {}

  const ComplexMatrix& matrix() const { return y_; }
  Complex operator()(int i, int j) const { return y_(i, j); }
  double magnitude(int i, int j) const { return std::abs(y_(i, j)); }
  double angle(int i, int j) const { return std::arg(y_(i, j)); }
  int size() const { return static_cast<int>(y_.rows()); }

 private:
  ComplexMatrix y_;
};

AdmittanceMatrix build_admittance(const NetworkCase& c);

}  // namespace ssopf
