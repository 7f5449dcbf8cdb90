#include "ssopf/smallsignal.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Eigenvalues>
#include <fmt/format.h>

namespace ssopf {

LinearizedBlocks split_blocks(const DaeModel& dae, const Matrix& jac) {
  const int ns = dae.num_states();
  const int g2 = 2 * dae.num_machines();
  const int nl2 = dae.num_algebraic() - 2 * g2;
  const int ny = dae.num_algebraic();
  // Offsets of the three algebraic groups inside [s; y].
  const int oi = ns, og = ns + g2, ol = ns + 2 * g2;

  LinearizedBlocks b;
  b.A1 = jac.block(0, 0, ns, ns);
  b.B1 = jac.block(0, oi, ns, g2);
  b.B2 = jac.block(0, og, ns, g2);
  b.C1 = jac.block(oi, 0, g2, ns);
  b.C2 = jac.block(og, 0, g2, ns);
  b.D1 = jac.block(oi, oi, g2, g2);
  b.D2 = jac.block(oi, og, g2, g2);
  b.D3 = jac.block(og, oi, g2, g2);
  b.D4 = jac.block(og, og, g2, g2);
  b.D5 = jac.block(og, ol, g2, nl2);
  b.D6 = jac.block(ol, og, nl2, g2);
  b.D7 = jac.block(ol, ol, nl2, nl2);
  b.E1 = dae.input_jacobian();

  b.a_tilde = b.A1;
  b.b_tilde = Matrix::Zero(ns, ny);
  b.b_tilde << b.B1, b.B2, Matrix::Zero(ns, nl2);
  b.c_tilde = Matrix::Zero(ny, ns);
  b.c_tilde << b.C1, b.C2, Matrix::Zero(nl2, ns);
  b.d_tilde = Matrix::Zero(ny, ny);
  b.d_tilde.block(0, 0, g2, g2) = b.D1;
  b.d_tilde.block(0, g2, g2, g2) = b.D2;
  b.d_tilde.block(g2, 0, g2, g2) = b.D3;
  b.d_tilde.block(g2, g2, g2, g2) = b.D4;
  b.d_tilde.block(g2, 2 * g2, g2, nl2) = b.D5;
  b.d_tilde.block(2 * g2, g2, nl2, g2) = b.D6;
  b.d_tilde.block(2 * g2, 2 * g2, nl2, nl2) = b.D7;
  return b;
}

LinearizedBlocks linearize_blocks(const NetworkCase& c, const OperatingPoint& op) {
  const DaeModel dae(c);
  return split_blocks(dae, dae.jacobian(dae.jacobian_point(op)));
}

StateMatrix reduce_state_matrix(const LinearizedBlocks& blocks) {
  StateMatrix sm;
  sm.d_lu.compute(blocks.d_tilde);
  sm.d_rcond = sm.d_lu.rcond();
  if (!(sm.d_rcond >= 1e-12)) {
    throw SingularNetworkError(fmt::format(
        "algebraic Jacobian is singular or ill-conditioned (rcond {:.3e})", sm.d_rcond));
  }
  sm.a = blocks.a_tilde - blocks.b_tilde * sm.d_lu.solve(blocks.c_tilde);
  return sm;
}

namespace {

// One inverse-iteration step on (M - shift I), starting from v.
ComplexVector refine(const ComplexMatrix& m, Complex shift, const ComplexVector& v) {
  const ComplexMatrix shifted = m - shift * ComplexMatrix::Identity(m.rows(), m.cols());
  ComplexVector z = shifted.partialPivLu().solve(v);
  if (!z.allFinite() || z.norm() == 0.0) return v;
  return z / z.norm();
}

}  // namespace

Vector transpose_solve(const Eigen::PartialPivLU<Matrix>& lu, const Vector& b) {
  // D = P^T L U, so D^T v = b  <=>  U^T L^T (P v) = b.
  Vector z = lu.matrixLU().triangularView<Eigen::Upper>().transpose().solve(b);
  lu.matrixLU().triangularView<Eigen::UnitLower>().transpose().solveInPlace(z);
  return lu.permutationP().transpose() * z;
}

ModalResult modal_analysis(const Matrix& a, const ModalOptions& opts) {
  if (!a.allFinite()) throw EigenError("state matrix has non-finite entries");
  const int n = static_cast<int>(a.rows());
  if (n == 0) throw EigenError("empty state matrix");
  Eigen::EigenSolver<Matrix> right(a, true);
  if (right.info() != Eigen::Success) throw EigenError("eigensolver failed to converge");

  ModalResult r;
  r.eigenvalues = right.eigenvalues();
  std::vector<int> kept;
  for (int i = 0; i < n; ++i) {
    if (std::abs(r.eigenvalues[i]) <= opts.zero_mode_tol) {
      r.zero_filtered.push_back(r.eigenvalues[i]);
    } else {
      kept.push_back(i);
    }
  }
  if (kept.empty()) throw EigenError("every eigenvalue was removed by the zero-mode filter");

  double max_re = -std::numeric_limits<double>::infinity();
  for (int i : kept) max_re = std::max(max_re, r.eigenvalues[i].real());
  int best = -1;
  for (int i : kept) {
    const Complex l = r.eigenvalues[i];
    if (l.real() < max_re - opts.tie_tol) continue;
    if (best < 0) {
      best = i;
      continue;
    }
    const Complex b = r.eigenvalues[best];
    if (std::abs(l.imag()) < std::abs(b.imag()) ||
        (std::abs(l.imag()) == std::abs(b.imag()) && l.imag() >= 0.0 && b.imag() < 0.0)) {
      best = i;
    }
  }
  r.critical_index = best;
  r.lambda_eta = r.eigenvalues[best];
  r.eta = r.lambda_eta.real();

  r.margin = std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i) {
    if (i != best) r.margin = std::min(r.margin, std::abs(r.eigenvalues[i] - r.lambda_eta));
  }
  r.near_degenerate = r.margin <= opts.degeneracy_tol;

  const double scale = std::max(1.0, a.lpNorm<Eigen::Infinity>());
  const ComplexMatrix ac = a.cast<Complex>();
  const Complex shift = r.lambda_eta + Complex(1e-10 * scale, 0.0);

  ComplexVector phi = right.eigenvectors().col(best);
  phi /= phi.norm();
  phi = refine(ac, shift, phi);

  Eigen::EigenSolver<Matrix> left(a.transpose(), true);
  if (left.info() != Eigen::Success) throw EigenError("eigensolver failed on the transpose");
  int match = -1;
  double dist = std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i) {
    const double d = std::abs(left.eigenvalues()[i] - r.lambda_eta);
    if (d < dist) {
      dist = d;
      match = i;
    }
  }
  if (dist > opts.pairing_tol * scale) {
    throw EigenError(fmt::format("left eigenvalue pairing failed (distance {:.3e})", dist));
  }
  ComplexVector psi = left.eigenvectors().col(match);
  psi /= psi.norm();
  psi = refine(ac.transpose(), shift, psi);

  // Fix phi's phase so that its largest entry is real and positive.
  Eigen::Index imax = 0;
  phi.cwiseAbs().maxCoeff(&imax);
  phi *= std::abs(phi[imax]) / phi[imax];

  const Complex pp = psi.transpose() * phi;
  if (std::abs(pp) < 1e-10) {
    throw EigenError(fmt::format("critical eigenvalue {:.6g}{:+.6g}j is defective (|psi phi| = "
                                 "{:.3e})",
                                 r.lambda_eta.real(), r.lambda_eta.imag(), std::abs(pp)));
  }
  psi /= pp;
  r.phi_eta = phi;
  r.psi_eta = psi;
  r.right_residual = (ac * phi - r.lambda_eta * phi).norm();
  r.left_residual = (ac.transpose() * psi - r.lambda_eta * psi).norm() / psi.norm();
  return r;
}

SmallSignalAnalysis analyze_point(const NetworkCase& c, const OperatingPoint& op,
                                  const ModalOptions& opts) {
  SmallSignalAnalysis an;
  an.blocks = linearize_blocks(c, op);
  an.state = reduce_state_matrix(an.blocks);
  an.modal = modal_analysis(an.state.a, opts);
  return an;
}

std::vector<Complex> critical_modes(const ModalResult& m, int count) {
  std::vector<Complex> modes;
  for (const Complex& l : m.eigenvalues) {
    if (l.imag() < 0.0) continue;
    if (std::find(m.zero_filtered.begin(), m.zero_filtered.end(), l) != m.zero_filtered.end()) {
      continue;
    }
    modes.push_back(l);
  }
  std::stable_sort(modes.begin(), modes.end(), [](const Complex& a, const Complex& b) {
    if (a.real() != b.real()) return a.real() > b.real();
    return a.imag() < b.imag();
  });
  if (static_cast<int>(modes.size()) > count) modes.resize(count);
  return modes;
}

nlohmann::json modal_to_json(const ModalResult& m) {
  auto cplx = [](const Complex& z) { return nlohmann::json::array({z.real(), z.imag()}); };
  nlohmann::json j;
  j["eta"] = m.eta;
  j["lambda_eta"] = cplx(m.lambda_eta);
  j["margin"] = m.margin;
  j["near_degenerate"] = m.near_degenerate;
  j["eigenvalues"] = nlohmann::json::array();
  for (const Complex& l : m.eigenvalues) j["eigenvalues"].push_back(cplx(l));
  j["zero_filtered"] = nlohmann::json::array();
  for (const Complex& l : m.zero_filtered) j["zero_filtered"].push_back(cplx(l));
  j["critical_modes"] = nlohmann::json::array();
  for (const Complex& l : critical_modes(m, 4)) {
    const double wn = std::abs(l);
    j["critical_modes"].push_back({{"real", l.real()},
                                   {"imag", l.imag()},
                                   {"freq_hz", l.imag() / (2.0 * M_PI)},
                                   {"damping_ratio", wn > 0.0 ? -l.real() / wn : 1.0}});
  }
  j["residuals"] = {{"right", m.right_residual}, {"left", m.left_residual}};
  return j;
}

Complex eigenvalue_derivative(const ModalResult& m, const Matrix& da) {
  const ComplexVector dphi = da.cast<Complex>() * m.phi_eta;
  const Complex num = m.psi_eta.transpose() * dphi;
  const Complex den = m.psi_eta.transpose() * m.phi_eta;
  return num / den;
}

double get_variable(const VariableLayout& l, int i, const OperatingPoint& op) {
  using B = VariableLayout::Block;
  auto in = [&](B b) {
    const auto s = l.slice(b);
    return i >= s.offset && i < s.offset + s.length ? i - s.offset : -1;
  };
  int k;
  if ((k = in(B::kPGen)) >= 0) return op.p_gen[k];
  if ((k = in(B::kQGen)) >= 0) return op.q_gen[k];
  if ((k = in(B::kV)) >= 0) return op.v[k];
  if ((k = in(B::kTheta)) >= 0) {
    if (l.reference_angle_pinned() && k >= l.reference_bus()) ++k;
    return op.theta[k];
  }
  if ((k = in(B::kDelta)) >= 0) return op.delta[k];
  if ((k = in(B::kEdPrime)) >= 0) return op.ed_prime[k];
  if ((k = in(B::kEqPrime)) >= 0) return op.eq_prime[k];
  if ((k = in(B::kId)) >= 0) return op.id[k];
  if ((k = in(B::kIq)) >= 0) return op.iq[k];
  if ((k = in(B::kEfd)) >= 0) return op.efd[k];
  throw Error(fmt::format("variable index {} out of range", i));
}

namespace {

// Returns a pointer to the scalar of `pt` addressed by layout index i, or nullptr for
// variables the Jacobian does not depend on.
template <typename T>
T* jacobian_field(const VariableLayout& l, int i, JacobianPoint<T>& pt) {
  using B = VariableLayout::Block;
  auto in = [&](B b) {
    const auto s = l.slice(b);
    return i >= s.offset && i < s.offset + s.length ? i - s.offset : -1;
  };
  int k;
  if ((k = in(B::kV)) >= 0) return &pt.v[k];
  if ((k = in(B::kTheta)) >= 0) {
    if (l.reference_angle_pinned() && k >= l.reference_bus()) ++k;
    return &pt.theta[k];
  }
  if ((k = in(B::kDelta)) >= 0) return &pt.delta[k];
  if ((k = in(B::kEdPrime)) >= 0) return &pt.ed_prime[k];
  if ((k = in(B::kEqPrime)) >= 0) return &pt.eq_prime[k];
  if ((k = in(B::kId)) >= 0) return &pt.id[k];
  if ((k = in(B::kIq)) >= 0) return &pt.iq[k];
  if ((k = in(B::kEfd)) >= 0) return &pt.efd[k];
  return nullptr;
}

JacobianPoint<Dual> dual_point(const JacobianPoint<double>& p) {
  auto conv = [](const std::vector<double>& v) { return std::vector<Dual>(v.begin(), v.end()); };
  return {conv(p.delta), conv(p.ed_prime), conv(p.eq_prime), conv(p.efd),
          conv(p.id),    conv(p.iq),       conv(p.v),        conv(p.theta)};
}

}  // namespace

void set_variable(const VariableLayout& l, int i, double value, OperatingPoint& op) {
  using B = VariableLayout::Block;
  auto in = [&](B b) {
    const auto s = l.slice(b);
    return i >= s.offset && i < s.offset + s.length ? i - s.offset : -1;
  };
  int k;
  if ((k = in(B::kPGen)) >= 0) op.p_gen[k] = value;
  else if ((k = in(B::kQGen)) >= 0) op.q_gen[k] = value;
  else if ((k = in(B::kV)) >= 0) op.v[k] = value;
  else if ((k = in(B::kTheta)) >= 0) {
    if (l.reference_angle_pinned() && k >= l.reference_bus()) ++k;
    op.theta[k] = value;
  } else if ((k = in(B::kDelta)) >= 0) op.delta[k] = value;
  else if ((k = in(B::kEdPrime)) >= 0) op.ed_prime[k] = value;
  else if ((k = in(B::kEqPrime)) >= 0) op.eq_prime[k] = value;
  else if ((k = in(B::kId)) >= 0) op.id[k] = value;
  else if ((k = in(B::kIq)) >= 0) op.iq[k] = value;
  else if ((k = in(B::kEfd)) >= 0) op.efd[k] = value;
  else throw Error(fmt::format("variable index {} out of range", i));
}

Vector spectral_abscissa_gradient(const NetworkCase& c, const OperatingPoint& op,
                                  const SmallSignalAnalysis& an, const VariableLayout& layout) {
  const DaeModel dae(c);
  const int ns = dae.num_states();
  const int ny = dae.num_algebraic();
  const ModalResult& m = an.modal;
  const Complex pp = m.psi_eta.transpose() * m.phi_eta;

  // l = [psi, -psi B~ D~^{-1}], r = [phi, -D~^{-1} C~ phi]; then psi dA phi = l dJ r.
  const ComplexVector cphi = an.blocks.c_tilde.cast<Complex>() * m.phi_eta;
  const ComplexVector btpsi = an.blocks.b_tilde.transpose().cast<Complex>() * m.psi_eta;
  const auto& lu = an.state.d_lu;
  const ComplexVector w = lu.solve(cphi.real()).cast<Complex>() +
                          Complex(0, 1) * lu.solve(cphi.imag()).cast<Complex>();
  const ComplexVector v = transpose_solve(lu, btpsi.real()).cast<Complex>() +
                          Complex(0, 1) * transpose_solve(lu, btpsi.imag()).cast<Complex>();
  ComplexVector lvec(ns + ny), rvec(ns + ny);
  lvec << m.psi_eta, -v;
  rvec << m.phi_eta, -w;

  JacobianPoint<Dual> pt = dual_point(dae.jacobian_point(op));
  Vector grad = Vector::Zero(layout.size());
  for (int i = 0; i < layout.size(); ++i) {
    Dual* field = jacobian_field(layout, i, pt);
    if (!field) continue;
    field->d = 1.0;
    Complex acc = 0.0;
    dae.emit_jacobian(pt, [&](int row, int col, const Dual& val) {
      if (val.d != 0.0) acc += lvec[row] * val.d * rvec[col];
    });
    field->d = 0.0;
    grad[i] = (acc / pp).real();
  }
  return grad;
}

Vector spectral_abscissa_gradient(const NetworkCase& c, const OperatingPoint& op,
                                  const ModalResult& modal) {
  SmallSignalAnalysis an;
  an.blocks = linearize_blocks(c, op);
  an.state = reduce_state_matrix(an.blocks);
  an.modal = modal;
  return spectral_abscissa_gradient(c, op, an, VariableLayout(c, false));
}

Matrix state_matrix_derivative(const NetworkCase& c, const OperatingPoint& op,
                               const SmallSignalAnalysis& an, const VariableLayout& layout,
                               int i) {
  const DaeModel dae(c);
  JacobianPoint<Dual> pt = dual_point(dae.jacobian_point(op));
  Dual* field = jacobian_field(layout, i, pt);
  const int ns = dae.num_states();
  if (!field) return Matrix::Zero(ns, ns);
  field->d = 1.0;
  Matrix dj = Matrix::Zero(dae.size(), dae.size());
  dae.emit_jacobian(pt, [&](int row, int col, const Dual& val) { dj(row, col) += val.d; });
  const LinearizedBlocks d = split_blocks(dae, dj);
  const auto& lu = an.state.d_lu;
  const Matrix w = lu.solve(an.blocks.c_tilde);
  // dA = dA~ - dB~ W + B~ D~^{-1} (dD~ W - dC~)
  return d.a_tilde - d.b_tilde * w + an.blocks.b_tilde * lu.solve(d.d_tilde * w - d.c_tilde);
}

double finite_difference_gradient(const NetworkCase& c, const OperatingPoint& op,
                                  const VariableLayout& layout, int i, double step,
                                  const ModalOptions& opts) {
  if (!(step > 0.0)) throw Error("finite-difference step must be positive");
  const double x0 = get_variable(layout, i, op);
  auto eta_at = [&](double xi) {
    OperatingPoint p = op;
    set_variable(layout, i, xi, p);
    return modal_analysis(reduce_state_matrix(linearize_blocks(c, p)).a, opts).eta;
  };
  return (eta_at(x0 + step) - eta_at(x0 - step)) / (2.0 * step);
}

double finite_difference_abscissa(const std::function<Matrix(double)>& a_of_t, double t,
                                  double step, const ModalOptions& opts) {
  return (modal_analysis(a_of_t(t + step), opts).eta - modal_analysis(a_of_t(t - step), opts).eta) /
         (2.0 * step);
}

}  // namespace ssopf
