#include "infattack/lp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>

namespace infattack {

std::string to_string(LpStatus s) {
  switch (s) {
    case LpStatus::Optimal: return "optimal";
    case LpStatus::Infeasible: return "infeasible";
    case LpStatus::IterationLimit: return "iteration_limit";
  }
  return "unknown";
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Tableau {
  MatrixXd A;  // m x N
  VectorXd b;
  VectorXd upper;  // lower bounds are all zero
  VectorXd x;
  std::vector<Index> basis;
  std::vector<char> basic;
  std::vector<char> may_enter;
  int iterations = 0;

  Index rows() const { return A.rows(); }
  Index cols() const { return A.cols(); }

  MatrixXd basis_inverse() const {
    MatrixXd B(rows(), rows());
    for (Index i = 0; i < rows(); ++i) B.col(i) = A.col(basis[static_cast<std::size_t>(i)]);
    return B.fullPivLu().inverse();
  }

  void refresh_basic(const MatrixXd& binv) {
    for (Index i = 0; i < rows(); ++i) x(basis[static_cast<std::size_t>(i)]) = 0;
    const VectorXd xb = binv * (b - A * x);
    for (Index i = 0; i < rows(); ++i) x(basis[static_cast<std::size_t>(i)]) = xb(i);
  }

  LpStatus run(const VectorXd& cost, double tol, int max_iter) {
    const double scale = 1.0 + cost.cwiseAbs().maxCoeff();
    int degenerate = 0;
    while (true) {
      const MatrixXd binv = basis_inverse();
      refresh_basic(binv);
      if (iterations >= max_iter) return LpStatus::IterationLimit;

      VectorXd cb(rows());
      for (Index i = 0; i < rows(); ++i) cb(i) = cost(basis[static_cast<std::size_t>(i)]);
      const Eigen::RowVectorXd y = cb.transpose() * binv;
      const VectorXd reduced = cost - (y * A).transpose();

      // Dantzig pricing, Bland's rule once pivots keep stalling.
      const bool bland = degenerate > 50;
      Index enter = -1;
      int dir = 0;
      double best = 0;
      for (Index j = 0; j < cols(); ++j) {
        if (basic[static_cast<std::size_t>(j)] || !may_enter[static_cast<std::size_t>(j)]) continue;
        const bool at_upper = x(j) >= upper(j) && upper(j) > 0;
        int cand_dir = 0;
        if (!at_upper && reduced(j) < -tol * scale) cand_dir = 1;
        if (at_upper && reduced(j) > tol * scale) cand_dir = -1;
        if (cand_dir == 0) continue;
        if (upper(j) <= 0) continue;
        const double score = std::abs(reduced(j));
        if (enter < 0 || (!bland && score > best)) {
          enter = j;
          dir = cand_dir;
          best = score;
          if (bland) break;
        }
      }
      if (enter < 0) return LpStatus::Optimal;

      const VectorXd alpha = binv * A.col(enter);
      double step = upper(enter);
      Index leave = -1;
      bool leave_at_upper = false;
      for (Index i = 0; i < rows(); ++i) {
        const Index bi = basis[static_cast<std::size_t>(i)];
        const double a = dir * alpha(i);
        if (a > 1e-11) {
          const double t = std::max(0.0, x(bi)) / a;
          if (t < step) { step = t; leave = i; leave_at_upper = false; }
        } else if (a < -1e-11 && std::isfinite(upper(bi))) {
          const double t = std::max(0.0, upper(bi) - x(bi)) / -a;
          if (t < step) { step = t; leave = i; leave_at_upper = true; }
        }
      }
      if (!std::isfinite(step)) return LpStatus::IterationLimit;  // unbounded; cannot occur with boxed costs

      degenerate = step <= 1e-14 ? degenerate + 1 : 0;
      x(enter) += dir * step;
      for (Index i = 0; i < rows(); ++i) x(basis[static_cast<std::size_t>(i)]) -= dir * step * alpha(i);
      if (leave >= 0) {
        const Index out = basis[static_cast<std::size_t>(leave)];
        x(out) = leave_at_upper ? upper(out) : 0.0;
        basic[static_cast<std::size_t>(out)] = 0;
        basis[static_cast<std::size_t>(leave)] = enter;
        basic[static_cast<std::size_t>(enter)] = 1;
      } else {
        x(enter) = dir > 0 ? upper(enter) : 0.0;
      }
      ++iterations;
    }
  }
};

}  // namespace

LpSolution solve_box_lp(const BoxLp& lp, double tol, int max_iter) {
  const Index m = lp.rows.rows();
  const Index n = lp.rows.cols();
  if (lp.cost.size() != n || lp.rhs.size() != m || lp.upper.size() != n ||
      static_cast<Index>(lp.sense.size()) != m)
    throw DataError("inconsistent LP dimensions");

  Index slacks = 0;
  for (auto s : lp.sense) slacks += s == RowSense::LessEqual;
  const Index N = n + slacks + m;

  Tableau t;
  t.A = MatrixXd::Zero(m, N);
  t.b = lp.rhs;
  t.upper = VectorXd::Constant(N, kInf);
  t.upper.head(n) = lp.upper;
  t.A.leftCols(n) = lp.rows;
  Index sc = n;
  for (Index i = 0; i < m; ++i) {
    if (lp.sense[static_cast<std::size_t>(i)] == RowSense::LessEqual) t.A(i, sc++) = 1.0;
    if (t.b(i) < 0) {
      t.A.row(i) *= -1.0;
      t.b(i) = -t.b(i);
    }
    t.A(i, n + slacks + i) = 1.0;
  }
  t.x = VectorXd::Zero(N);
  t.basic.assign(static_cast<std::size_t>(N), 0);
  t.may_enter.assign(static_cast<std::size_t>(N), 1);
  for (Index i = 0; i < m; ++i) {
    t.basis.push_back(n + slacks + i);
    t.basic[static_cast<std::size_t>(n + slacks + i)] = 1;
    t.x(n + slacks + i) = t.b(i);
  }
  if (max_iter <= 0) max_iter = static_cast<int>(50 * (N + m) + 1000);

  LpSolution sol;
  VectorXd phase1 = VectorXd::Zero(N);
  phase1.tail(m).setOnes();
  LpStatus st = t.run(phase1, tol, max_iter);
  sol.iterations = t.iterations;
  if (st == LpStatus::IterationLimit) {
    sol.status = st;
    sol.x = t.x.head(n);
    return sol;
  }
  const double infeas = t.x.tail(m).sum();
  const double feas_tol = 1e-9 * (1.0 + t.b.cwiseAbs().maxCoeff());
  if (infeas > feas_tol) {
    sol.status = LpStatus::Infeasible;
    sol.infeasibility = infeas;
    sol.x = t.x.head(n);
    sol.objective = lp.cost.dot(sol.x);
    return sol;
  }

  // Pivot zero-valued artificials out of the basis where possible, then pin them at zero.
  {
    const MatrixXd binv = t.basis_inverse();
    for (Index r = 0; r < m; ++r) {
      const Index bi = t.basis[static_cast<std::size_t>(r)];
      if (bi < n + slacks) continue;
      for (Index j = 0; j < n + slacks; ++j) {
        if (t.basic[static_cast<std::size_t>(j)]) continue;
        const double a = binv.row(r).dot(t.A.col(j));
        if (std::abs(a) > 1e-9) {
          t.basic[static_cast<std::size_t>(bi)] = 0;
          t.x(bi) = 0;
          t.basis[static_cast<std::size_t>(r)] = j;
          t.basic[static_cast<std::size_t>(j)] = 1;
          break;
        }
      }
    }
    for (Index i = 0; i < m; ++i) {
      t.upper(n + slacks + i) = 0.0;
      t.may_enter[static_cast<std::size_t>(n + slacks + i)] = 0;
    }
  }

  VectorXd phase2 = VectorXd::Zero(N);
  phase2.head(n) = lp.cost;
  st = t.run(phase2, tol, max_iter);
  sol.iterations = t.iterations;
  sol.status = st;
  sol.x = t.x.head(n).cwiseMax(0.0).cwiseMin(lp.upper);
  sol.objective = lp.cost.dot(sol.x);
  return sol;
}

double box_linear_minimum(const VectorXd& c) { return c.cwiseMin(0.0).sum(); }

namespace {

/// min sum w over [0,1]^n with rows a.w (sense) c1 and b.w <= c2.
struct TwoRow {
  VectorXd a, b;
  double c1 = 0, c2 = 0;
  RowSense first = RowSense::Equal;
};

BoxLp to_box_lp(const TwoRow& p) {
  const Index n = p.a.size();
  BoxLp lp;
  lp.cost = VectorXd::Ones(n);
  lp.rows.resize(2, n);
  lp.rows.row(0) = p.a.transpose();
  lp.rows.row(1) = p.b.transpose();
  lp.rhs = Eigen::Vector2d(p.c1, p.c2);
  lp.sense = {p.first, RowSense::LessEqual};
  lp.upper = VectorXd::Ones(n);
  return lp;
}

struct InnerMax {
  double value = 0;
  double mu = 0;
};

/// max over mu of sum_i min(0, r_i + mu a_i) - mu c1, with mu >= 0 when
/// `nonneg`. Empty when unbounded above.
std::optional<InnerMax> maximize_mu(const VectorXd& r, const VectorXd& a, double c1, bool nonneg) {
  const Index n = r.size();
  std::vector<std::pair<double, double>> brk;  // (mu_i, |a_i|)
  double slope = -c1;
  for (Index i = 0; i < n; ++i) {
    if (a(i) == 0) continue;
    const double mu_i = -r(i) / a(i);
    if (nonneg) {
      // Slope just to the right of mu = 0.
      const bool active = r(i) < 0 || (r(i) == 0 && a(i) < 0);
      if (active) slope += a(i);
      if (mu_i > 0) brk.emplace_back(mu_i, std::abs(a(i)));
    } else {
      if (a(i) > 0) slope += a(i);
      brk.emplace_back(mu_i, std::abs(a(i)));
    }
  }
  std::sort(brk.begin(), brk.end());

  auto value_at = [&](double mu) { return (r + mu * a).cwiseMin(0.0).sum() - mu * c1; };

  double mu = nonneg ? 0.0 : (brk.empty() ? 0.0 : brk.front().first);
  if (slope < 0) {
    if (nonneg) return InnerMax{value_at(0.0), 0.0};
    return std::nullopt;  // increases without bound as mu -> -inf
  }
  bool found = slope == 0;
  for (const auto& [mu_i, weight] : brk) {
    if (found) break;
    mu = mu_i;
    slope -= weight;
    if (slope <= 0) found = true;
  }
  if (!found) return std::nullopt;
  return InnerMax{value_at(mu), mu};
}

struct DualPoint {
  double mu = 0, nu = 0, value = 0;
};

std::optional<DualPoint> maximize_dual(const TwoRow& p) {
  const bool nonneg_mu = p.first == RowSense::LessEqual;
  auto h = [&](double nu) -> std::optional<InnerMax> {
    const VectorXd r = VectorXd::Ones(p.a.size()) + nu * p.b;
    auto inner = maximize_mu(r, p.a, p.c1, nonneg_mu);
    if (inner) inner->value -= nu * p.c2;
    return inner;
  };

  auto h0 = h(0.0);
  if (!h0) return std::nullopt;
  double lo = 0.0, hi = 1.0;
  auto hhi = h(hi);
  if (!hhi) return std::nullopt;
  double prev = h0->value;
  double prev_nu = 0.0;
  while (hhi->value > prev) {
    if (hi > 1e16) return std::nullopt;
    prev = hhi->value;
    prev_nu = hi;
    hi *= 2.0;
    hhi = h(hi);
    if (!hhi) return std::nullopt;
  }
  lo = prev_nu > 0 ? prev_nu / 2.0 : 0.0;

  // Golden-section search on the concave piecewise-linear dual.
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double x1 = hi - phi * (hi - lo), x2 = lo + phi * (hi - lo);
  auto f1 = h(x1), f2 = h(x2);
  if (!f1 || !f2) return std::nullopt;
  for (int it = 0; it < 300 && hi - lo > 1e-15 * (1.0 + hi); ++it) {
    if (f1->value < f2->value) {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + phi * (hi - lo);
      f2 = h(x2);
      if (!f2) return std::nullopt;
    } else {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - phi * (hi - lo);
      f1 = h(x1);
      if (!f1) return std::nullopt;
    }
  }
  DualPoint best{h0->mu, 0.0, h0->value};
  for (double nu : {lo, x1, x2, hi}) {
    const auto v = h(nu);
    if (v && v->value > best.value) best = DualPoint{v->mu, nu, v->value};
  }
  return best;
}

void fill_residuals(const TwoRow& p, ReweighWeights& out) {
  const double fair = p.a.dot(out.w) - p.c1;
  out.fair_residual = p.first == RowSense::Equal ? std::abs(fair) : std::max(0.0, fair);
  out.util_residual = std::max(0.0, p.b.dot(out.w) - p.c2);
  out.objective = out.w.sum();
}

ReweighWeights solve_simplex(const TwoRow& p) {
  ReweighWeights out;
  out.method = LpMethod::Simplex;
  const LpSolution sol = solve_box_lp(to_box_lp(p));
  out.status = sol.status;
  out.w = sol.x;
  fill_residuals(p, out);
  return out;
}

ReweighWeights solve_dual(const TwoRow& p) {
  ReweighWeights out;
  out.method = LpMethod::DualSearch;
  const Index n = p.a.size();
  const auto dual = maximize_dual(p);
  if (!dual) {
    // Dual unbounded: the primal is infeasible. Report the simplex certificate.
    ReweighWeights cert = solve_simplex(p);
    cert.method = LpMethod::DualSearch;
    cert.used_fallback = true;
    return cert;
  }

  const VectorXd rc = VectorXd::Ones(n) + dual->mu * p.a + dual->nu * p.b;
  const double tie = 1e-9 * (1.0 + std::abs(dual->mu) * p.a.cwiseAbs().maxCoeff() +
                             dual->nu * p.b.cwiseAbs().maxCoeff());
  out.w = VectorXd::Zero(n);
  std::vector<Index> ties;
  for (Index i = 0; i < n; ++i) {
    if (rc(i) < -tie) out.w(i) = 1.0;
    else if (rc(i) <= tie) ties.push_back(i);
  }

  // Fractional coordinates: the LP restricted to the tie set.
  const double fixed_a = p.a.dot(out.w), fixed_b = p.b.dot(out.w);
  bool ok = true;
  if (!ties.empty()) {
    TwoRow sub;
    sub.first = p.first;
    sub.a.resize(static_cast<Index>(ties.size()));
    sub.b.resize(static_cast<Index>(ties.size()));
    for (std::size_t t = 0; t < ties.size(); ++t) {
      sub.a(static_cast<Index>(t)) = p.a(ties[t]);
      sub.b(static_cast<Index>(t)) = p.b(ties[t]);
    }
    sub.c1 = p.c1 - fixed_a;
    sub.c2 = p.c2 - fixed_b;
    const LpSolution s = solve_box_lp(to_box_lp(sub));
    ok = s.status == LpStatus::Optimal;
    if (ok)
      for (std::size_t t = 0; t < ties.size(); ++t) out.w(ties[t]) = s.x(static_cast<Index>(t));
  }
  out.status = LpStatus::Optimal;
  fill_residuals(p, out);
  const double scale = 1.0 + std::abs(p.c1) + std::abs(p.c2) + p.a.cwiseAbs().sum() * 1e-12;
  if (!ok || out.fair_residual > 1e-9 * scale || out.util_residual > 1e-9 * scale) {
    ReweighWeights fb = solve_simplex(p);
    fb.used_fallback = true;
    fb.method = LpMethod::DualSearch;
    return fb;
  }
  return out;
}

ReweighWeights solve(const TwoRow& p, double tol, LpMethod method) {
  if (p.a.size() < 1) throw DataError("reweighing needs at least one sample");
  if (p.a.size() != p.b.size()) throw DataError("influence vectors differ in length");
  if (!p.a.allFinite() || !p.b.allFinite() || !std::isfinite(p.c1) || !std::isfinite(p.c2))
    throw NumericalError("non-finite reweighing inputs", 0.0);
  ReweighWeights out = method == LpMethod::Simplex ? solve_simplex(p) : solve_dual(p);
  if (out.status == LpStatus::Optimal && (out.fair_residual > tol || out.util_residual > tol))
    out.status = LpStatus::Infeasible;
  return out;
}

}  // namespace

ReweighWeights solve_reweigh_basic(const VectorXd& i_fair, const VectorXd& i_util, double f_fair,
                                   double tol, LpMethod method) {
  TwoRow p{i_fair, i_util, -f_fair, 0.0, RowSense::Equal};
  return solve(p, tol, method);
}

ReweighWeights solve_reweigh_advanced(const VectorXd& i_fair, const VectorXd& i_util,
                                      double f_fair, double beta, double gamma, double tol,
                                      LpMethod method) {
  if (beta < 0 || beta > 1 || gamma < 0 || gamma > 1)
    throw ConfigError("beta and gamma must lie in [0,1]");
  TwoRow p{i_fair, i_util, -(1.0 - beta) * f_fair, gamma * box_linear_minimum(i_util),
           RowSense::LessEqual};
  return solve(p, tol, method);
}

}  // namespace infattack
