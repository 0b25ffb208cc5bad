#pragma once

#include <string>
#include <vector>

#include "infattack/types.hpp"

namespace infattack {

enum class RowSense { LessEqual, Equal };

/// min c^T x  s.t.  A x (<= | =) b,  0 <= x <= upper.
struct BoxLp {
  VectorXd cost;
  MatrixXd rows;  // m x n
  VectorXd rhs;
  std::vector<RowSense> sense;
  VectorXd upper;
};

enum class LpStatus { Optimal, Infeasible, IterationLimit };

std::string to_string(LpStatus s);

struct LpSolution {
  LpStatus status = LpStatus::Infeasible;
  VectorXd x;
  double objective = 0;
  double infeasibility = 0;  // phase-one artificial mass left when infeasible
  int iterations = 0;
};

/// Two-phase bounded-variable primal simplex with a dense basis inverse.
/// Intended for problems with few rows; pricing costs O(n m) per pivot.
LpSolution solve_box_lp(const BoxLp& lp, double tol = 1e-10, int max_iter = 0);

enum class LpMethod { DualSearch, Simplex };

/// Reweighing weights w in [0,1]^n and the constraint residuals:
/// `fair_residual` is |a.w + f| for the equality form and max(0, a.w - rhs)
/// for the inequality form; `util_residual` is max(0, b.w - rhs).
struct ReweighWeights {
  VectorXd w;
  LpStatus status = LpStatus::Infeasible;
  double objective = 0;
  double fair_residual = 0;
  double util_residual = 0;
  LpMethod method = LpMethod::DualSearch;
  bool used_fallback = false;
};

/// min sum w  s.t.  sum w_i i_fair_i = -f_fair (to within tol),
///                  sum w_i i_util_i <= 0,  w in [0,1]^n.
ReweighWeights solve_reweigh_basic(const VectorXd& i_fair, const VectorXd& i_util, double f_fair,
                                   double tol = 1e-8, LpMethod method = LpMethod::DualSearch);

/// min sum w  s.t.  sum w_i i_fair_i <= -(1 - beta) f_fair,
///                  sum w_i i_util_i <= gamma * sum_i min(i_util_i, 0),  w in [0,1]^n.
ReweighWeights solve_reweigh_advanced(const VectorXd& i_fair, const VectorXd& i_util,
                                      double f_fair, double beta, double gamma,
                                      double tol = 1e-8, LpMethod method = LpMethod::DualSearch);

/// min over v in [0,1]^n of sum v_i c_i, in closed form.
double box_linear_minimum(const VectorXd& c);

}  // namespace infattack
