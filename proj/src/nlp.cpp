#include "ssopf/nlp.hpp"

#include <cmath>
#include <limits>

#include <fmt/format.h>

namespace ssopf {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr std::size_t kCacheSize = 8;
}  // namespace

SsscOpfProblem::SsscOpfProblem(NetworkCase c, std::optional<double> eta_bar,
                               double objective_scale, ModalOptions modal)
    : case_(std::move(c)),
      eta_bar_(eta_bar),
      objective_scale_(objective_scale),
      modal_opts_(modal),
      layout_(case_, true),
      net_(case_),
      nb_(case_.num_buses()),
      ng_(case_.num_generators()),
      nl_(case_.num_lines()) {
  if (eta_bar_ && (std::isnan(*eta_bar_) || *eta_bar_ == -kInf)) {
    throw Error(fmt::format("eta_bar must be finite or +inf (got {})", *eta_bar_));
  }
  if (!(objective_scale_ > 0.0)) throw Error("objective_scale must be positive");
}

double generation_cost(const NetworkCase& c, const Vector& p_gen) {
  double f = 0.0;
  for (int g = 0; g < c.num_generators(); ++g) {
    const auto& k = c.generators[g].cost;
    const double p = c.base_mva * p_gen[g];
    f += k.a2 * p * p + k.a1 * p + k.a0;
  }
  return f;
}

double SsscOpfProblem::objective(const Vector& x, Vector* grad) const {
  double f = 0.0;
  if (grad) *grad = Vector::Zero(layout_.size());
  const double base = case_.base_mva;
  const double sc = objective_scale_;
  for (int g = 0; g < ng_; ++g) {
    const auto& k = case_.generators[g].cost;
    const double p = base * x[layout_.p_gen(g)];
    f += k.a2 * p * p + k.a1 * p + k.a0;
    if (grad) (*grad)[layout_.p_gen(g)] = sc * base * (2.0 * k.a2 * p + k.a1);
  }
  return sc * f;
}

Vector SsscOpfProblem::equalities(const Vector& x, Matrix* jac) const {
  const int n = layout_.size();
  Vector h = Vector::Zero(num_equalities());
  if (jac) *jac = Matrix::Zero(num_equalities(), n);
  auto volt = [&](int b) { return x[layout_.v(b)]; };
  auto ang = [&](int b) { return angle(x, b); };
  auto add = [&](int row, int col, double v) {
    if (col >= 0) (*jac)(row, col) += v;
  };

  for (int b = 0; b < nb_; ++b) {
    const PowerPair<double> s = bus_injection<double>(net_, b, volt, ang);
    h[b] = -case_.buses[b].p_load - s.p;
    h[nb_ + b] = -case_.buses[b].q_load - s.q;
    if (jac) {
      bus_injection_jacobian<double>(net_, b, volt, ang,
                                     [&](int j, double dp_dt, double dq_dt, double dp_dv, double dq_dv) {
                                       add(b, layout_.theta(j), -dp_dt);
                                       add(nb_ + b, layout_.theta(j), -dq_dt);
                                       add(b, layout_.v(j), -dp_dv);
                                       add(nb_ + b, layout_.v(j), -dq_dv);
                                     });
    }
  }
  for (int g = 0; g < ng_; ++g) {
    const int b = case_.bus_index(case_.generators[g].bus);
    h[b] += x[layout_.p_gen(g)];
    h[nb_ + b] += x[layout_.q_gen(g)];
    if (jac) {
      add(b, layout_.p_gen(g), 1.0);
      add(nb_ + b, layout_.q_gen(g), 1.0);
    }
  }

  const int r0 = 2 * nb_;
  for (int g = 0; g < ng_; ++g) {
    const MachineDynamics& m = case_.generators[g].machine;
    const int b = case_.bus_index(case_.generators[g].bus);
    const double v = x[layout_.v(b)], th = angle(x, b);
    const double dl = x[layout_.delta(g)];
    const double ed = x[layout_.ed_prime(g)], eq = x[layout_.eq_prime(g)];
    const double id = x[layout_.id(g)], iq = x[layout_.iq(g)], efd = x[layout_.efd(g)];
    const double sn = std::sin(dl - th), cs = std::cos(dl - th);
    const int rd = r0 + g, rq = r0 + ng_ + g, rp = r0 + 2 * ng_ + g, rqq = r0 + 3 * ng_ + g;
    const int rfd = r0 + 4 * ng_ + g, rfq = r0 + 5 * ng_ + g;

    h[rd] = ed - v * sn - m.rs * id + m.xq_prime * iq;
    h[rq] = eq - v * cs - m.rs * iq - m.xd_prime * id;
    h[rp] = id * v * sn + iq * v * cs - x[layout_.p_gen(g)];
    h[rqq] = id * v * cs - iq * v * sn - x[layout_.q_gen(g)];
    h[rfd] = efd - eq - (m.xd - m.xd_prime) * id;
    h[rfq] = ed - (m.xq - m.xq_prime) * iq;
    if (!jac) continue;

    const int cv = layout_.v(b), ct = layout_.theta(b), cdl = layout_.delta(g);
    add(rd, layout_.ed_prime(g), 1.0);
    add(rd, cv, -sn);
    add(rd, cdl, -v * cs);
    add(rd, ct, v * cs);
    add(rd, layout_.id(g), -m.rs);
    add(rd, layout_.iq(g), m.xq_prime);

    add(rq, layout_.eq_prime(g), 1.0);
    add(rq, cv, -cs);
    add(rq, cdl, v * sn);
    add(rq, ct, -v * sn);
    add(rq, layout_.iq(g), -m.rs);
    add(rq, layout_.id(g), -m.xd_prime);

    const double dp_dd = id * v * cs - iq * v * sn;
    add(rp, layout_.id(g), v * sn);
    add(rp, layout_.iq(g), v * cs);
    add(rp, cv, id * sn + iq * cs);
    add(rp, cdl, dp_dd);
    add(rp, ct, -dp_dd);
    add(rp, layout_.p_gen(g), -1.0);

    const double dq_dd = -id * v * sn - iq * v * cs;
    add(rqq, layout_.id(g), v * cs);
    add(rqq, layout_.iq(g), -v * sn);
    add(rqq, cv, id * cs - iq * sn);
    add(rqq, cdl, dq_dd);
    add(rqq, ct, -dq_dd);
    add(rqq, layout_.q_gen(g), -1.0);

    add(rfd, layout_.efd(g), 1.0);
    add(rfd, layout_.eq_prime(g), -1.0);
    add(rfd, layout_.id(g), -(m.xd - m.xd_prime));

    add(rfq, layout_.ed_prime(g), 1.0);
    add(rfq, layout_.iq(g), -(m.xq - m.xq_prime));
  }
  return h;
}

double SsscOpfProblem::line_current_sq(const Vector& x, int l, Vector* grad) const {
  const LineRecord& ln = case_.lines[l];
  const int i = case_.bus_index(ln.from_bus), j = case_.bus_index(ln.to_bus);
  // I = a V_i e^{j th_i} + b V_j e^{j th_j}
  const Complex a = ln.series_admittance + ln.shunt_admittance_half;
  const Complex bb = -ln.series_admittance;
  const Complex k = a * std::conj(bb);
  const double vi = x[layout_.v(i)], vj = x[layout_.v(j)];
  const double phi = angle(x, i) - angle(x, j);
  const double re = k.real() * std::cos(phi) - k.imag() * std::sin(phi);
  const double a2 = std::norm(a), b2 = std::norm(bb);
  if (grad) {
    *grad = Vector::Zero(layout_.size());
    (*grad)[layout_.v(i)] += 2.0 * a2 * vi + 2.0 * vj * re;
    (*grad)[layout_.v(j)] += 2.0 * b2 * vj + 2.0 * vi * re;
    const double dphi = -2.0 * vi * vj * (k.real() * std::sin(phi) + k.imag() * std::cos(phi));
    if (layout_.theta(i) >= 0) (*grad)[layout_.theta(i)] += dphi;
    if (layout_.theta(j) >= 0) (*grad)[layout_.theta(j)] -= dphi;
  }
  return a2 * vi * vi + b2 * vj * vj + 2.0 * vi * vj * re;
}

std::shared_ptr<SsscOpfProblem::EtaEntry> SsscOpfProblem::eta_entry(const Vector& x,
                                                                    bool need_grad) const {
  {
    std::lock_guard<std::mutex> lock(cache_mu_);
    for (auto it = cache_.begin(); it != cache_.end(); ++it) {
      if ((*it)->x.size() == x.size() && (*it)->x == x && (!need_grad || (*it)->grad)) {
        auto e = *it;
        cache_.splice(cache_.begin(), cache_, it);
        return e;
      }
    }
  }
  auto e = std::make_shared<EtaEntry>();
  e->x = x;
  const OperatingPoint op = point_from_vector(case_, layout_, x);
  SmallSignalAnalysis an;
  {
    ScopedTimer t(profile(), "eigen");
    an = analyze_point(case_, op, modal_opts_);
  }
  e->eta = an.modal.eta;
  e->modes = critical_modes(an.modal, 4);
  if (need_grad) {
    ScopedTimer t(profile(), "sensitivity");
    e->grad = spectral_abscissa_gradient(case_, op, an, layout_);
  }
  std::lock_guard<std::mutex> lock(cache_mu_);
  cache_.push_front(e);
  while (cache_.size() > kCacheSize) cache_.pop_back();
  return e;
}

double SsscOpfProblem::eta(const Vector& x, Vector* grad) const {
  auto e = eta_entry(x, grad != nullptr);
  if (grad) *grad = *e->grad;
  return e->eta;
}

ModalResult SsscOpfProblem::modal(const Vector& x) const {
  return analyze_point(case_, point_from_vector(case_, layout_, x), modal_opts_).modal;
}

Vector SsscOpfProblem::inequalities(const Vector& x, Matrix* jac) const {
  const int m = num_inequalities();
  Vector g(m);
  if (jac) *jac = Matrix::Zero(m, layout_.size());
  for (int b = 0; b < nb_; ++b) {
    g[b] = x[layout_.v(b)];
    if (jac) (*jac)(b, layout_.v(b)) = 1.0;
  }
  for (int k = 0; k < ng_; ++k) {
    g[nb_ + k] = x[layout_.p_gen(k)];
    g[nb_ + ng_ + k] = x[layout_.q_gen(k)];
    if (jac) {
      (*jac)(nb_ + k, layout_.p_gen(k)) = 1.0;
      (*jac)(nb_ + ng_ + k, layout_.q_gen(k)) = 1.0;
    }
  }
  Vector gr;
  for (int l = 0; l < nl_; ++l) {
    g[line_row(l)] = line_current_sq(x, l, jac ? &gr : nullptr);
    if (jac) jac->row(line_row(l)) = gr.transpose();
  }
  if (eta_bar_) {
    g[eta_row()] = eta(x, jac ? &gr : nullptr);
    if (jac) jac->row(eta_row()) = gr.transpose();
  }
  return g;
}

Vector SsscOpfProblem::inequality_gradient(int j, const Vector& x) const {
  if (j < 0 || j >= num_inequalities()) throw Error(fmt::format("no inequality {}", j));
  Vector gr;
  if (j == eta_row()) {
    eta(x, &gr);
    return gr;
  }
  if (j >= nb_ + 2 * ng_) {
    line_current_sq(x, j - nb_ - 2 * ng_, &gr);
    return gr;
  }
  gr = Vector::Zero(layout_.size());
  if (j < nb_) {
    gr[layout_.v(j)] = 1.0;
  } else if (j < nb_ + ng_) {
    gr[layout_.p_gen(j - nb_)] = 1.0;
  } else {
    gr[layout_.q_gen(j - nb_ - ng_)] = 1.0;
  }
  return gr;
}

Vector SsscOpfProblem::inequality_lower() const {
  Vector lo(num_inequalities());
  for (int b = 0; b < nb_; ++b) lo[b] = case_.buses[b].v_min;
  for (int g = 0; g < ng_; ++g) {
    lo[nb_ + g] = case_.generators[g].limits.p_min;
    lo[nb_ + ng_ + g] = case_.generators[g].limits.q_min;
  }
  for (int l = 0; l < nl_; ++l) lo[line_row(l)] = -kInf;
  if (eta_bar_) lo[eta_row()] = -kInf;
  return lo;
}

Vector SsscOpfProblem::inequality_upper() const {
  Vector hi(num_inequalities());
  for (int b = 0; b < nb_; ++b) hi[b] = case_.buses[b].v_max;
  for (int g = 0; g < ng_; ++g) {
    hi[nb_ + g] = case_.generators[g].limits.p_max;
    hi[nb_ + ng_ + g] = case_.generators[g].limits.q_max;
  }
  for (int l = 0; l < nl_; ++l) {
    const double imax = case_.lines[l].i_max;
    hi[line_row(l)] = imax > 0.0 ? imax * imax : kInf;
  }
  if (eta_bar_) hi[eta_row()] = *eta_bar_;
  return hi;
}

std::optional<double> SsscOpfProblem::monitor(const Vector& x) const {
  try {
    return eta(x, nullptr);
  } catch (const Error&) {
    return std::nullopt;
  }
}

std::vector<Complex> SsscOpfProblem::monitor_modes(const Vector& x, int count) const {
  try {
    auto e = eta_entry(x, false);
    std::vector<Complex> out = e->modes;
    if (static_cast<int>(out.size()) > count) out.resize(count);
    return out;
  } catch (const Error&) {
    return {};
  }
}

Vector flat_start(const NetworkCase& c, const VariableLayout& layout) {
  Vector x = Vector::Zero(layout.size());
  for (int b = 0; b < c.num_buses(); ++b) x[layout.v(b)] = 1.0;
  for (int g = 0; g < c.num_generators(); ++g) {
    const auto& lim = c.generators[g].limits;
    const double p = 0.5 * (lim.p_min + lim.p_max);
    const double q = 0.5 * (lim.q_min + lim.q_max);
    x[layout.p_gen(g)] = p;
    x[layout.q_gen(g)] = q;
    MachineSteadyState s = solve_machine_steady_state(c.generators[g].machine, p, q, 1.0, 0.0);
    const bool ok = std::isfinite(s.delta) && std::isfinite(s.ed_prime) &&
                    std::isfinite(s.eq_prime) && std::isfinite(s.id) && std::isfinite(s.iq) &&
                    std::isfinite(s.efd);
    if (!ok) s = {0.0, 0.0, 1.0, 0.0, 0.0, 1.0};
    x[layout.delta(g)] = s.delta;
    x[layout.ed_prime(g)] = s.ed_prime;
    x[layout.eq_prime(g)] = s.eq_prime;
    x[layout.id(g)] = s.id;
    x[layout.iq(g)] = s.iq;
    x[layout.efd(g)] = s.efd;
  }
  return x;
}

}  // namespace ssopf
