#pragma once

#include <optional>
#include <string>
#include <vector>

#include "infattack/influence.hpp"
#include "infattack/lp.hpp"

namespace infattack {

enum class ReweighProblem { Basic, Advanced };

/// How LP weights become downstream sample weights: Remove trains with
/// (1 - w_i), reading w_i as the removed fraction of sample i; Direct trains
/// with w_i itself.
enum class DownstreamWeighting { Remove, Direct };

struct FairnessConfig {
  double beta = 0.5;
  double gamma = 0.0;
  double l2_reg = 0.01;
  double solver_tol = 1e-8;
  double surrogate_temperature = 1.0;
  double acc_budget = 0.03;
  ReweighProblem problem = ReweighProblem::Advanced;
  DownstreamWeighting weighting = DownstreamWeighting::Remove;
  LpMethod lp_method = LpMethod::DualSearch;
  double cg_tol = 1e-8;
  TrainConfig train;

  void validate() const;
  LossSpec loss() const { return LossSpec{l2_reg, true}; }
  IhvpConfig ihvp() const { return IhvpConfig{loss(), cg_tol, 0}; }
};

/// Named recipes for the tabular fairness benchmarks: l2 regularisation and
/// (beta, gamma). Expects user-supplied preprocessed CSVs.
struct FairnessPreset {
  std::string name;
  double l2_reg;
  double beta;
  double gamma;
  Index expected_dim;
};

std::optional<FairnessPreset> find_fairness_preset(const std::string& name);

struct DpReport {
  double dp_gap = 0;
  double rate0 = 0, rate1 = 0;
  double accuracy = 0;
};

/// |P(yhat = 1 | a = 0) - P(yhat = 1 | a = 1)| by counting.
double dp_gap(const std::vector<int>& predictions, const std::vector<int>& groups);

DpReport dp_report(const GlmModel& model, const Dataset& data);

/// |mean_{a=0} sigma(s / T) - mean_{a=1} sigma(s / T)| on the binary logit s.
double soft_dp(const GlmModel& model, const Dataset& data, double temperature = 1.0);
VectorXd soft_dp_grad(const GlmModel& model, const Dataset& data, double temperature = 1.0);

struct FairnessInfluence {
  VectorXd i_fair;
  VectorXd i_util;
  double f_fair = 0;  // soft_dp on the validation set
};

/// I_util is the validation-set influence; I_fair replaces the test-loss
/// gradient in the influence bilinear form with the surrogate's gradient.
FairnessInfluence fairness_influence(const GlmModel& model, const Dataset& train,
                                     const Dataset& val, const FairnessConfig& cfg);

/// Under Remove weighting the LP is posed on removal effects -I / n, the
/// first-order change caused by dropping a fraction w_i of sample i.
ReweighWeights solve_reweigh(const FairnessInfluence& inf, const FairnessConfig& cfg);

/// Weighted ERM on the training set with the weights implied by `w`.
Fit retrain_downstream(const Dataset& train, const ReweighWeights& w, const FairnessConfig& cfg);

struct FairnessRow {
  double lambda = 1;
  double base_accuracy = 0;  // scaled base model on the pristine set
  std::string lp_status;
  double lp_objective = 0;
  double dp_gap = 0;    // downstream model, pristine set
  double accuracy = 0;  // downstream model, pristine set
  double rate0 = 0, rate1 = 0;
  bool success = false;
  std::string error;
};

struct FairnessReport {
  std::vector<FairnessRow> rows;  // rows[0] is lambda = 1
};

/// One grid point: scale, compute influences, reweigh, retrain, evaluate.
/// Failures are recorded in `error`.
FairnessRow fairness_row(const GlmModel& base, const Dataset& train, const Dataset& val,
                         const Dataset& pristine, double lambda, const FairnessConfig& cfg);

/// Sets every success flag against rows[0].
void mark_success(FairnessReport& report, double acc_budget);

/// lambda = 1 followed by the other grid values in order.
std::vector<double> fairness_grid(const std::vector<double>& lambdas);

/// Base model -> scaling attack -> influences -> reweighing -> retraining ->
/// demographic parity on the pristine set, for lambda = 1 and every grid value.
/// A row succeeds when its gap exceeds the lambda = 1 gap and its accuracy is
/// within acc_budget of the lambda = 1 accuracy.
FairnessReport fairness_attack_eval(const Dataset& train, const Dataset& val,
                                    const Dataset& pristine, const std::vector<double>& lambdas,
                                    const FairnessConfig& cfg);

/// Same pipeline for a fixed, already trained base model.
FairnessReport fairness_attack_eval(const GlmModel& base, const Dataset& train, const Dataset& val,
                                    const Dataset& pristine, const std::vector<double>& lambdas,
                                    const FairnessConfig& cfg);

}  // namespace infattack
