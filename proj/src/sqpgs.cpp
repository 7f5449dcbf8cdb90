#include "ssopf/sqpgs.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <functional>
#include <thread>

#include <fmt/format.h>

#include "ssopf/lbfgs.hpp"

namespace ssopf {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

void parallel_for(int count, int threads, const std::function<void(int)>& fn) {
  threads = std::max(1, std::min(threads, count));
  if (threads == 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (int i = next++; i < count; i = next++) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

struct Anchor {
  double f = 0.0;
  Vector grad_f;
  Vector h, g;
  Matrix jac_h, jac_g;
};

Anchor evaluate_anchor(const NlpProblem& problem, const Vector& x) {
  Anchor a;
  a.f = problem.objective(x, &a.grad_f);
  a.h = problem.equalities(x, &a.jac_h);
  a.g = problem.inequalities(x, &a.jac_g);
  return a;
}

// Gradient of the Lagrangian using the anchor Jacobians and aggregated multipliers.
Vector lagrangian_gradient(const Anchor& a, double mu_f, const Vector& mu_h, const Vector& mu_g) {
  Vector gl = mu_f * a.grad_f;
  if (mu_h.size()) gl += a.jac_h.transpose() * mu_h;
  if (mu_g.size()) gl += a.jac_g.transpose() * mu_g;
  return gl;
}

}  // namespace

void SolverParams::validate() const {
  auto unit = [](double v, const char* name) {
    if (!(v > 0.0 && v < 1.0)) throw Error(fmt::format("{} must lie in (0, 1) (got {})", name, v));
  };
  auto pos = [](double v, const char* name) {
    if (!(v > 0.0)) throw Error(fmt::format("{} must be positive (got {})", name, v));
  };
  unit(mu_rho, "mu_rho");
  unit(mu_eps, "mu_eps");
  unit(mu_tau, "mu_tau");
  unit(gamma, "gamma");
  pos(rho0, "rho0");
  pos(eps0, "eps0");
  pos(tau0, "tau0");
  pos(nu_in, "nu_in");
  pos(nu_s, "nu_s");
  if (!(varpi > 0.0 && varpi <= 1.0)) throw Error(fmt::format("varpi must lie in (0, 1] (got {})", varpi));
  pos(qp_tol, "qp_tol");
  if (p < 0) throw Error("sample size p must be nonnegative");
  if (K_max < 1) throw Error("K_max must be at least 1");
  if (lbfgs_memory < 1) throw Error("lbfgs_memory must be at least 1");
  if (threads < 1) throw Error("threads must be at least 1");
}

std::string to_string(SolverStatus s) {
  switch (s) {
    case SolverStatus::kConverged:
      return "converged";
    case SolverStatus::kIterationLimit:
      return "iteration-limit";
    case SolverStatus::kQpFailure:
      return "qp-failure";
    case SolverStatus::kLineSearchFailure:
      return "line-search-failure";
  }
  return "unknown";
}

std::mt19937_64 substream(std::uint64_t seed, int k, int function_id) {
  std::uint64_t s = splitmix64(seed);
  s = splitmix64(s ^ static_cast<std::uint64_t>(k));
  s = splitmix64(s ^ static_cast<std::uint64_t>(function_id));
  return std::mt19937_64(s);
}

std::vector<Vector> sample_points(const Vector& x, double eps, int p, std::mt19937_64& rng) {
  std::vector<Vector> pts{x};
  const int n = static_cast<int>(x.size());
  std::normal_distribution<double> gauss;
  std::uniform_real_distribution<double> unif;
  for (int i = 0; i < p; ++i) {
    Vector dir(n);
    double norm = 0.0;
    while (norm == 0.0) {
      for (int j = 0; j < n; ++j) dir[j] = gauss(rng);
      norm = dir.norm();
    }
    const double radius = eps * std::pow(unif(rng), 1.0 / n);
    pts.push_back(x + (radius / norm) * dir);
  }
  return pts;
}

Vector infeasibility(const Vector& h, const Vector& g, const Vector& lo, const Vector& hi) {
  Vector s(h.size() + 2 * g.size());
  s.head(h.size()) = h.cwiseAbs();
  for (int j = 0; j < g.size(); ++j) {
    s[h.size() + j] = std::max(g[j] - hi[j], 0.0);
    s[h.size() + g.size() + j] = std::max(lo[j] - g[j], 0.0);
  }
  return s;
}

Vector infeasibility(const NlpProblem& problem, const Vector& x) {
  return infeasibility(problem.equalities(x, nullptr), problem.inequalities(x, nullptr),
                       problem.inequality_lower(), problem.inequality_upper());
}

double merit(const NlpProblem& problem, const Vector& x, double rho) {
  return rho * problem.objective(x, nullptr) + infeasibility(problem, x).sum();
}

Subproblem build_subproblem(const SampledModel& model, const Matrix& h_matrix, double rho) {
  const int n = static_cast<int>(h_matrix.rows());
  const int mh = static_cast<int>(model.h.size());
  const int mg = static_cast<int>(model.g.size());

  Subproblem sub;
  int nw = 0;
  sub.z = nw++;
  std::vector<bool> nonneg{false};
  sub.e.resize(mh);
  for (int i = 0; i < mh; ++i) {
    sub.e[i] = nw++;
    nonneg.push_back(true);
  }
  sub.r_upper.assign(mg, -1);
  sub.r_lower.assign(mg, -1);
  for (int j = 0; j < mg; ++j) {
    if (std::isfinite(model.g_hi[j])) {
      sub.r_upper[j] = nw++;
      nonneg.push_back(true);
    }
    if (std::isfinite(model.g_lo[j])) {
      sub.r_lower[j] = nw++;
      nonneg.push_back(true);
    }
  }

  int m = static_cast<int>(model.grad_f.size());
  for (const auto& gs : model.grad_h) m += 2 * static_cast<int>(gs.size());
  for (int j = 0; j < mg; ++j) {
    const int cnt = static_cast<int>(model.grad_g[j].size());
    m += cnt * ((sub.r_upper[j] >= 0) + (sub.r_lower[j] >= 0));
  }

  ElasticQp& qp = sub.qp;
  qp.hessian = h_matrix;
  qp.linear = Vector();
  qp.rows.resize(m, n);
  qp.rhs.resize(m);
  qp.row_slack.resize(m);
  qp.slack_cost = Vector::Ones(nw);
  qp.slack_cost[sub.z] = rho;
  qp.slack_nonnegative = nonneg;
  sub.tags.reserve(m);

  int r = 0;
  auto add = [&](const Vector& a, double b, int slack, RowTag tag) {
    qp.rows.row(r) = a.transpose();
    qp.rhs[r] = b;
    qp.row_slack[r] = slack;
    sub.tags.push_back(tag);
    ++r;
  };
  for (int s = 0; s < static_cast<int>(model.grad_f.size()); ++s) {
    add(model.grad_f[s], -model.f, sub.z, {RowTag::kObjective, 0, s});
  }
  for (int i = 0; i < mh; ++i) {
    for (int s = 0; s < static_cast<int>(model.grad_h[i].size()); ++s) {
      add(model.grad_h[i][s], -model.h[i], sub.e[i], {RowTag::kEqualityPlus, i, s});
      add(-model.grad_h[i][s], model.h[i], sub.e[i], {RowTag::kEqualityMinus, i, s});
    }
  }
  for (int j = 0; j < mg; ++j) {
    for (int s = 0; s < static_cast<int>(model.grad_g[j].size()); ++s) {
      if (sub.r_upper[j] >= 0) {
        add(model.grad_g[j][s], model.g_hi[j] - model.g[j], sub.r_upper[j], {RowTag::kUpper, j, s});
      }
      if (sub.r_lower[j] >= 0) {
        add(-model.grad_g[j][s], model.g[j] - model.g_lo[j], sub.r_lower[j], {RowTag::kLower, j, s});
      }
    }
  }
  return sub;
}

SubproblemSolution solve_subproblem(const Subproblem& sub, double qp_tol) {
  QpOptions opts;
  opts.tol = qp_tol;
  SubproblemSolution sol;
  sol.qp = solve_qp(sub.qp, opts);
  sol.d = sol.qp.d;
  sol.z = sol.qp.w[sub.z];
  const int mh = static_cast<int>(sub.e.size());
  const int mg = static_cast<int>(sub.r_upper.size());
  sol.e.resize(mh);
  for (int i = 0; i < mh; ++i) sol.e[i] = sol.qp.w[sub.e[i]];
  sol.r_upper = Vector::Zero(mg);
  sol.r_lower = Vector::Zero(mg);
  for (int j = 0; j < mg; ++j) {
    if (sub.r_upper[j] >= 0) sol.r_upper[j] = sol.qp.w[sub.r_upper[j]];
    if (sub.r_lower[j] >= 0) sol.r_lower[j] = sol.qp.w[sub.r_lower[j]];
  }
  return sol;
}

double model_reduction(const SampledModel& model, const Matrix& h_matrix, double rho,
                       const Vector& d) {
  const Vector sigma = infeasibility(model.h, model.g, model.g_lo, model.g_hi);
  double dq = rho * model.f + sigma.sum() - 0.5 * d.dot(h_matrix * d);
  double obj = -kInf;
  for (const Vector& gr : model.grad_f) obj = std::max(obj, model.f + gr.dot(d));
  dq -= rho * obj;
  for (int i = 0; i < model.h.size(); ++i) {
    double worst = 0.0;
    for (const Vector& gr : model.grad_h[i]) worst = std::max(worst, std::abs(model.h[i] + gr.dot(d)));
    dq -= worst;
  }
  for (int j = 0; j < model.g.size(); ++j) {
    double up = 0.0, lo = 0.0;
    for (const Vector& gr : model.grad_g[j]) {
      const double lin = model.g[j] + gr.dot(d);
      up = std::max(up, lin - model.g_hi[j]);
      lo = std::max(lo, model.g_lo[j] - lin);
    }
    dq -= up + lo;
  }
  return dq;
}

LineSearchResult line_search(const NlpProblem& problem, const Vector& x, const Vector& d,
                             double rho, double delta_q, const SolverParams& params) {
  auto safe_merit = [&](const Vector& pt) {
    try {
      const double m = merit(problem, pt, rho);
      return std::isfinite(m) ? m : kInf;
    } catch (const Error&) {
      return kInf;
    }
  };
  LineSearchResult ls;
  ls.merit_before = merit(problem, x, rho);
  for (double beta = 1.0; beta >= params.beta_min; beta *= params.gamma) {
    const Vector trial = x + beta * d;
    const double m = safe_merit(trial);
    if (m <= ls.merit_before - params.varpi * beta * delta_q) {
      ls.beta = beta;
      ls.x = trial;
      ls.merit_after = m;
      return ls;
    }
  }
  ls.failed = true;
  ls.x = x;
  ls.merit_after = ls.merit_before;
  return ls;
}

SolverResult solve(const NlpProblem& problem, const Vector& x0, const SolverParams& params,
                   Profile* profile) {
  params.validate();
  const int n = problem.num_variables();
  const int mh = problem.num_equalities();
  const int mg = problem.num_inequalities();
  if (x0.size() != n) throw Error(fmt::format("x0 has length {}, expected {}", x0.size(), n));

  const Vector g_lo = problem.inequality_lower();
  const Vector g_hi = problem.inequality_upper();
  std::vector<int> nonsmooth_g;
  for (int j = 0; j < mg; ++j) {
    if (problem.inequality_nonsmooth(j)) nonsmooth_g.push_back(j);
  }
  std::vector<int> nonsmooth_h;
  for (int i = 0; i < mh; ++i) {
    if (problem.equality_nonsmooth(i)) nonsmooth_h.push_back(i);
  }

  SolverResult result;
  Vector x = x0;
  double rho = params.rho0, eps = params.eps0, tau = params.tau0;
  LbfgsHessian lbfgs(n, params.lbfgs_memory, params.h_min);
  std::optional<double> last_dq;
  bool last_ls_failed = false;

  Anchor anchor;
  {
    ScopedTimer t(profile, "evaluation");
    problem.set_profile(profile);
    anchor = evaluate_anchor(problem, x);
  }

  bool converged = false;
  for (int k = 1; k <= params.K_max; ++k) {
    Profile iter_profile;
    Profile* prof = profile ? &iter_profile : nullptr;
    problem.set_profile(prof);

    const Vector sigma = infeasibility(anchor.h, anchor.g, g_lo, g_hi);
    const double smax = sigma.size() ? sigma.maxCoeff() : 0.0;
    if (last_dq && *last_dq < params.nu_s && smax < params.nu_in) {
      converged = true;
      break;
    }

    IterationRecord rec;
    rec.k = k;
    rec.f = anchor.f * problem.objective_report_scale();
    rec.sigma_max = smax;
    rec.eps = eps;
    rec.rho = rho;
    rec.tau = tau;
    rec.eta = problem.monitor(x);
    if (params.log_modes) rec.modes = problem.monitor_modes(x, 4);

    // Gradient sampling.
    SampledModel model;
    model.f = anchor.f;
    model.h = anchor.h;
    model.g = anchor.g;
    model.g_lo = g_lo;
    model.g_hi = g_hi;
    model.grad_f = {anchor.grad_f};
    model.grad_h.resize(mh);
    for (int i = 0; i < mh; ++i) model.grad_h[i] = {anchor.jac_h.row(i).transpose()};
    model.grad_g.resize(mg);
    for (int j = 0; j < mg; ++j) model.grad_g[j] = {anchor.jac_g.row(j).transpose()};

    struct Task {
      int kind;  // 0 objective, 1 equality, 2 inequality
      int index;
      std::mt19937_64 rng;
      std::vector<Vector> points;
      std::vector<Vector> grads;
      std::string failure;
    };
    std::vector<Task> tasks;
    if (params.p > 0) {
      if (problem.objective_nonsmooth()) tasks.push_back({0, 0, substream(params.seed, k, 0), {}, {}, {}});
      for (int i : nonsmooth_h) tasks.push_back({1, i, substream(params.seed, k, 1 + i), {}, {}, {}});
      for (int j : nonsmooth_g) {
        tasks.push_back({2, j, substream(params.seed, k, 1 + mh + j), {}, {}, {}});
      }
    }
    std::vector<std::pair<int, int>> jobs;  // (task, sample)
    for (int t = 0; t < static_cast<int>(tasks.size()); ++t) {
      tasks[t].points = sample_points(x, eps, params.p, tasks[t].rng);
      tasks[t].grads.resize(params.p + 1);
      for (int s = 1; s <= params.p; ++s) jobs.emplace_back(t, s);
    }
    auto gradient_at = [&](const Task& task, const Vector& pt) -> Vector {
      switch (task.kind) {
        case 0: {
          Vector g;
          problem.objective(pt, &g);
          return g;
        }
        case 1:
          return problem.equality_gradient(task.index, pt);
        default:
          return problem.inequality_gradient(task.index, pt);
      }
    };
    {
      ScopedTimer timer(prof, "sampling");
      parallel_for(static_cast<int>(jobs.size()), params.threads, [&](int jdx) {
        auto [t, s] = jobs[jdx];
        Task& task = tasks[t];
        try {
          task.grads[s] = gradient_at(task, task.points[s]);
          if (!task.grads[s].allFinite()) throw Error("non-finite gradient");
        } catch (const Error& e) {
          task.grads[s] = Vector();
        }
      });
    }
    // Failed points are resampled once (sequentially, from the task's own stream).
    std::string sample_failure;
    for (auto& task : tasks) {
      for (int s = 1; s <= params.p && sample_failure.empty(); ++s) {
        if (task.grads[s].size()) continue;
        task.points[s] = sample_points(x, eps, 1, task.rng)[1];
        try {
          task.grads[s] = gradient_at(task, task.points[s]);
          if (!task.grads[s].allFinite()) throw Error("non-finite gradient");
        } catch (const Error& e) {
          sample_failure = fmt::format("gradient evaluation failed twice at a sample point of "
                                       "function {}:{} ({})",
                                       task.kind, task.index, e.what());
        }
      }
      for (int s = 1; s <= params.p; ++s) {
        if (!task.grads[s].size()) continue;
        auto& dst = task.kind == 0   ? model.grad_f
                    : task.kind == 1 ? model.grad_h[task.index]
                                     : model.grad_g[task.index];
        dst.push_back(task.grads[s]);
      }
    }

    bool null_step = !sample_failure.empty();
    rec.note = sample_failure;
    double dq = 0.0;
    SubproblemSolution sol;
    Matrix hmat;
    if (!null_step) {
      hmat = lbfgs.dense();
      Subproblem sub = build_subproblem(model, hmat, rho);
      rec.qp_rows = sub.qp.num_rows();
      try {
        ScopedTimer timer(prof, "qp");
        sol = solve_subproblem(sub, params.qp_tol);
      } catch (const QpError& e) {
        hmat = Matrix::Identity(n, n);
        lbfgs.reset();
        sub = build_subproblem(model, hmat, rho);
        try {
          ScopedTimer timer(prof, "qp");
          sol = solve_subproblem(sub, params.qp_tol);
          rec.note = fmt::format("QP retried with identity Hessian ({})", e.what());
        } catch (const QpError& e2) {
          rec.note = e2.what();
          rec.qp_kkt = e2.residual();
          result.trace.push_back(rec);
          result.status = SolverStatus::kQpFailure;
          result.message = e2.what();
          break;
        }
      }
      rec.qp_iterations = sol.qp.iterations;
      rec.qp_kkt = sol.qp.kkt_residual;
      dq = model_reduction(model, hmat, rho, sol.d);

      // Multipliers aggregated per function for the Lagrangian pair.
      double mu_f = 0.0;
      Vector mu_h = Vector::Zero(mh), mu_g = Vector::Zero(mg);
      for (int r = 0; r < static_cast<int>(sub.tags.size()); ++r) {
        const double lam = sol.qp.row_multipliers[r];
        const RowTag& tag = sub.tags[r];
        switch (tag.kind) {
          case RowTag::kObjective: mu_f += lam; break;
          case RowTag::kEqualityPlus: mu_h[tag.function] += lam; break;
          case RowTag::kEqualityMinus: mu_h[tag.function] -= lam; break;
          case RowTag::kUpper: mu_g[tag.function] += lam; break;
          case RowTag::kLower: mu_g[tag.function] -= lam; break;
        }
      }

      if (dq > params.nu_s * eps * eps) {
        LineSearchResult ls;
        {
          ScopedTimer timer(prof, "line_search");
          ls = line_search(problem, x, sol.d, rho, dq, params);
        }
        rec.merit_before = ls.merit_before;
        rec.merit_after = ls.merit_after;
        if (ls.failed) {
          rec.line_search_failed = true;
          null_step = true;
        } else {
          rec.beta = ls.beta;
          Anchor next;
          {
            ScopedTimer timer(prof, "evaluation");
            next = evaluate_anchor(problem, ls.x);
          }
          ScopedTimer timer(prof, "lbfgs");
          const Vector y = lagrangian_gradient(next, mu_f, mu_h, mu_g) -
                           lagrangian_gradient(anchor, mu_f, mu_h, mu_g);
          lbfgs.add_pair(ls.x - x, y);
          x = ls.x;
          anchor = std::move(next);
        }
      } else {
        null_step = true;
      }
    }
    rec.delta_q = dq;
    if (null_step) {
      rec.null_step = true;
      rec.beta = 0.0;
      if (smax <= tau) {
        tau *= params.mu_tau;
      } else {
        rho *= params.mu_rho;
      }
      eps *= params.mu_eps;
    }
    last_dq = dq;
    last_ls_failed = rec.line_search_failed;
    if (prof) {
      rec.seconds = iter_profile.snapshot();
      for (const auto& [phase, sec] : rec.seconds) profile->add(phase, sec);
    }
    result.trace.push_back(std::move(rec));
  }
  problem.set_profile(nullptr);

  if (converged) {
    result.status = SolverStatus::kConverged;
  } else if (result.status != SolverStatus::kQpFailure) {
    result.status = last_ls_failed ? SolverStatus::kLineSearchFailure : SolverStatus::kIterationLimit;
  }
  result.x = x;
  result.f = anchor.f * problem.objective_report_scale();
  const Vector sigma = infeasibility(anchor.h, anchor.g, g_lo, g_hi);
  result.sigma_max = sigma.size() ? sigma.maxCoeff() : 0.0;
  if (result.message.empty()) result.message = to_string(result.status);
  if (profile) result.seconds = profile->snapshot();
  return result;
}

nlohmann::json record_to_json(const IterationRecord& r, bool with_modes) {
  nlohmann::json j;
  j["k"] = r.k;
  j["f"] = r.f;
  j["sigma_max"] = r.sigma_max;
  j["delta_q"] = r.delta_q;
  j["beta"] = r.beta;
  j["eps"] = r.eps;
  j["rho"] = r.rho;
  j["tau"] = r.tau;
  j["eta"] = r.eta ? nlohmann::json(*r.eta) : nlohmann::json(nullptr);
  if (with_modes) {
    j["modes"] = nlohmann::json::array();
    for (const Complex& m : r.modes) j["modes"].push_back({m.real(), m.imag()});
  }
  if (!r.seconds.empty()) j["seconds"] = r.seconds;
  return j;
}

IterationRecord record_from_json(const nlohmann::json& j) {
  IterationRecord r;
  r.k = j.at("k").get<int>();
  r.f = j.at("f").get<double>();
  r.sigma_max = j.at("sigma_max").get<double>();
  r.delta_q = j.at("delta_q").get<double>();
  r.beta = j.at("beta").get<double>();
  r.eps = j.at("eps").get<double>();
  r.rho = j.at("rho").get<double>();
  r.tau = j.at("tau").get<double>();
  if (!j.at("eta").is_null()) r.eta = j.at("eta").get<double>();
  if (j.contains("modes")) {
    for (const auto& m : j["modes"]) r.modes.emplace_back(m[0].get<double>(), m[1].get<double>());
  }
  if (j.contains("seconds")) r.seconds = j["seconds"].get<std::map<std::string, double>>();
  return r;
}

void emit_trace(const std::vector<IterationRecord>& trace, const std::filesystem::path& path,
                const std::filesystem::path& csv_path, bool with_modes) {
  if (trace.empty()) throw Error("cannot write an empty trace");
  std::ofstream out(path);
  std::ofstream csv(csv_path);
  if (!out || !csv) throw Error(fmt::format("cannot open {} for writing", path.string()));
  csv << "k,f,sigma_max,delta_q\n";
  for (const auto& r : trace) {
    out << record_to_json(r, with_modes).dump() << '\n';
    csv << fmt::format("{},{:.17g},{:.17g},{:.17g}\n", r.k, r.f, r.sigma_max, r.delta_q);
  }
  if (!out || !csv) throw Error(fmt::format("write to {} failed", path.string()));
}

std::vector<IterationRecord> read_trace(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(fmt::format("cannot open {}", path.string()));
  std::vector<IterationRecord> trace;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) trace.push_back(record_from_json(nlohmann::json::parse(line)));
  }
  return trace;
}

}  // namespace ssopf
