#pragma once

#include <functional>
#include <vector>

#include <Eigen/LU>
#include <json.hpp>

#include "ssopf/case.hpp"
#include "ssopf/dae.hpp"
#include "ssopf/operating_point.hpp"

namespace ssopf {

/// Linearization of the DAE at one point, split as in the compact form
///   [ds/dt]   [A~ B~] [ds]
///   [  0  ] = [C~ D~] [dy]
/// with A~ = A1, B~ = [B1 B2 0], C~ = [C1; C2; 0],
///      D~ = [D1 D2 0; D3 D4 D5; 0 D6 D7].
/// Column groups of y: machine currents, generator-bus (theta, V), load-bus (theta, V).
struct LinearizedBlocks {
  Matrix A1, B1, B2;
  Matrix C1, C2;
  Matrix D1, D2, D3, D4, D5, D6, D7;
  Matrix E1;
  Matrix a_tilde, b_tilde, c_tilde, d_tilde;
};

class SingularNetworkError : public Error {
 public:
  using Error::Error;
};

class EigenError : public Error {
 public:
  using Error::Error;
};

struct StateMatrix {
  Matrix a;
  Eigen::PartialPivLU<Matrix> d_lu;
  double d_rcond = 0.0;
};

struct ModalOptions {
  double zero_mode_tol = 1e-6;
  double tie_tol = 1e-12;
  double degeneracy_tol = 1e-8;
  double pairing_tol = 1e-8;  // relative to max(1, |A|)
};

struct ModalResult {
  ComplexVector eigenvalues;
  std::vector<Complex> zero_filtered;
  double eta = 0.0;
  Complex lambda_eta;
  int critical_index = -1;
  ComplexVector psi_eta;  // left eigenvector entries (psi A = lambda psi)
  ComplexVector phi_eta;  // right eigenvector, unit 2-norm
  double margin = 0.0;    // distance to the nearest other eigenvalue
  bool near_degenerate = false;
  double right_residual = 0.0;  // |A phi - lambda phi|
  double left_residual = 0.0;   // |psi A - lambda psi|
};

/// Everything derived from one operating point that the sensitivities reuse.
struct SmallSignalAnalysis {
  LinearizedBlocks blocks;
  StateMatrix state;
  ModalResult modal;
};

LinearizedBlocks linearize_blocks(const NetworkCase& c, const OperatingPoint& op);
LinearizedBlocks split_blocks(const DaeModel& dae, const Matrix& jac);

/// A = A~ - B~ D~^{-1} C~ through an LU of D~. Throws SingularNetworkError if D~ is
/// singular or its condition number exceeds 1e12.
StateMatrix reduce_state_matrix(const LinearizedBlocks& blocks);

/// Solves D~^T v = b with an existing factorization of D~.
Vector transpose_solve(const Eigen::PartialPivLU<Matrix>& lu, const Vector& b);

ModalResult modal_analysis(const Matrix& a, const ModalOptions& opts = {});

SmallSignalAnalysis analyze_point(const NetworkCase& c, const OperatingPoint& op,
                                  const ModalOptions& opts = {});

/// Distinct modes (one per conjugate pair, Im >= 0) sorted by decreasing real part.
std::vector<Complex> critical_modes(const ModalResult& m, int count);

nlohmann::json modal_to_json(const ModalResult& m);

/// d lambda = psi dA phi / (psi phi).
Complex eigenvalue_derivative(const ModalResult& m, const Matrix& da);

/// Re(d lambda_eta / d x_i) for every entry of `layout`. P_G and Q_G do not enter the
/// linearization, so their entries are exactly zero.
Vector spectral_abscissa_gradient(const NetworkCase& c, const OperatingPoint& op,
                                  const SmallSignalAnalysis& an, const VariableLayout& layout);
/// Same, recomputing blocks and the D~ factorization; gradient over the full layout.
Vector spectral_abscissa_gradient(const NetworkCase& c, const OperatingPoint& op,
                                  const ModalResult& modal);

/// dA/dx_i assembled explicitly from the derivative blocks.
Matrix state_matrix_derivative(const NetworkCase& c, const OperatingPoint& op,
                               const SmallSignalAnalysis& an, const VariableLayout& layout, int i);

/// Central difference of eta along variable i. Only x_i moves; see README for why the
/// other coordinates are not re-solved.
double finite_difference_gradient(const NetworkCase& c, const OperatingPoint& op,
                                  const VariableLayout& layout, int i, double step,
                                  const ModalOptions& opts = {});

/// Central difference of eta for a matrix-valued function of one parameter.
double finite_difference_abscissa(const std::function<Matrix(double)>& a_of_t, double t,
                                  double step, const ModalOptions& opts = {});

/// Writes `value` into the field of `op` addressed by layout index i (no-op for
/// the pinned reference angle).
void set_variable(const VariableLayout& layout, int i, double value, OperatingPoint& op);
double get_variable(const VariableLayout& layout, int i, const OperatingPoint& op);

}  // namespace ssopf
