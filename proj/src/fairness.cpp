#include "infattack/fairness.hpp"

#include <algorithm>
#include <cmath>

#include "infattack/attack.hpp"

namespace infattack {

void FairnessConfig::validate() const {
  if (!(beta >= 0 && beta <= 1) || !(gamma >= 0 && gamma <= 1))
    throw ConfigError("fairness beta and gamma must lie in [0,1]");
  if (!(l2_reg >= 0)) throw ConfigError("fairness l2 regularisation must be >= 0");
  if (!(solver_tol > 0)) throw ConfigError("solver tolerance must be positive");
  if (!(surrogate_temperature > 0)) throw ConfigError("surrogate temperature must be positive");
  if (!(acc_budget >= 0 && acc_budget <= 1)) throw ConfigError("acc_budget must lie in [0,1]");
}

std::optional<FairnessPreset> find_fairness_preset(const std::string& name) {
  static const FairnessPreset presets[] = {
      {"adult", 2.26, 0.8, 0.3, 102},
      {"compas", 37.00, 0.3, 0.1, 433},
      {"german", 5.85, 0.5, 0.0, 56},
  };
  for (const auto& p : presets)
    if (p.name == name) return p;
  return std::nullopt;
}

double dp_gap(const std::vector<int>& predictions, const std::vector<int>& groups) {
  if (predictions.size() != groups.size()) throw DataError("predictions and groups differ in length");
  double pos[2] = {0, 0}, count[2] = {0, 0};
  for (std::size_t i = 0; i < groups.size(); ++i) {
    if (groups[i] != 0 && groups[i] != 1) throw DataError("group value outside {0,1}");
    count[groups[i]] += 1;
    pos[groups[i]] += predictions[i] == 1;
  }
  if (count[0] == 0 || count[1] == 0) throw DataError("demographic parity needs both groups present");
  return std::abs(pos[0] / count[0] - pos[1] / count[1]);
}

DpReport dp_report(const GlmModel& model, const Dataset& data) {
  if (!data.groups) throw DataError("dataset has no group column");
  const auto pred = predict(model, data.features);
  DpReport r;
  double pos[2] = {0, 0}, count[2] = {0, 0};
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const int g = (*data.groups)[i];
    count[g] += 1;
    pos[g] += pred[i] == 1;
  }
  if (count[0] == 0 || count[1] == 0) throw DataError("demographic parity needs both groups present");
  r.rate0 = pos[0] / count[0];
  r.rate1 = pos[1] / count[1];
  r.dp_gap = dp_gap(pred, *data.groups);
  r.accuracy = accuracy(model, data);
  return r;
}

namespace {

struct GroupMeans {
  VectorXd sig;
  double n0 = 0, n1 = 0;
  double diff = 0;  // mean_0 - mean_1
};

GroupMeans group_means(const GlmModel& model, const Dataset& data, double temperature) {
  if (!model.binary()) throw DataError("the fairness surrogate needs a binary model");
  if (!data.groups) throw DataError("dataset has no group column");
  if (data.dim() != model.dim) throw DataError("dataset dimension does not match model");
  GroupMeans g;
  const VectorXd s = detail::scores(model, data.features).col(0) / temperature;
  g.sig = s.unaryExpr([](double m) { return detail::sigmoid(m); });
  double m0 = 0, m1 = 0;
  for (Index i = 0; i < data.size(); ++i) {
    if ((*data.groups)[static_cast<std::size_t>(i)] == 0) {
      g.n0 += 1;
      m0 += g.sig(i);
    } else {
      g.n1 += 1;
      m1 += g.sig(i);
    }
  }
  if (g.n0 == 0 || g.n1 == 0) throw DataError("fairness surrogate needs both groups present");
  g.diff = m0 / g.n0 - m1 / g.n1;
  return g;
}

}  // namespace

double soft_dp(const GlmModel& model, const Dataset& data, double temperature) {
  return std::abs(group_means(model, data, temperature).diff);
}

VectorXd soft_dp_grad(const GlmModel& model, const Dataset& data, double temperature) {
  const GroupMeans g = group_means(model, data, temperature);
  const double sign = g.diff > 0 ? 1.0 : (g.diff < 0 ? -1.0 : 0.0);
  MatrixXd coeff(data.size(), 1);
  for (Index i = 0; i < data.size(); ++i) {
    const double d = g.sig(i) * (1 - g.sig(i)) / temperature;
    coeff(i, 0) = (*data.groups)[static_cast<std::size_t>(i)] == 0 ? d / g.n0 : -d / g.n1;
  }
  return sign * detail::vjp(model, data.features, coeff);
}

FairnessInfluence fairness_influence(const GlmModel& model, const Dataset& train,
                                     const Dataset& val, const FairnessConfig& cfg) {
  const IhvpConfig ihvp_cfg = cfg.ihvp();
  FairnessInfluence out;
  out.i_util = influence_set(model, train, val, ihvp_cfg);
  out.f_fair = soft_dp(model, val, cfg.surrogate_temperature);
  const VectorXd fair_grad = soft_dp_grad(model, val, cfg.surrogate_temperature);
  const VectorXd s = ihvp(model, train, fair_grad, ihvp_cfg);
  out.i_fair = -sample_gradient_dots(model, train, s);
  return out;
}

ReweighWeights solve_reweigh(const FairnessInfluence& inf, const FairnessConfig& cfg) {
  // Removing a fraction w_i of sample i from the mean-normalised loss moves a
  // quantity by -(w_i / n) I_i to first order, so the LP sees removal effects.
  const double n = static_cast<double>(inf.i_fair.size());
  const bool remove = cfg.weighting == DownstreamWeighting::Remove;
  const VectorXd fair = remove ? VectorXd(-inf.i_fair / n) : inf.i_fair;
  const VectorXd util = remove ? VectorXd(-inf.i_util / n) : inf.i_util;
  if (cfg.problem == ReweighProblem::Basic)
    return solve_reweigh_basic(fair, util, inf.f_fair, cfg.solver_tol, cfg.lp_method);
  return solve_reweigh_advanced(fair, util, inf.f_fair, cfg.beta, cfg.gamma, cfg.solver_tol,
                                cfg.lp_method);
}

Fit retrain_downstream(const Dataset& train, const ReweighWeights& w, const FairnessConfig& cfg) {
  if (w.w.size() != train.size()) throw DataError("weight vector length != training size");
  if ((w.w.array() < -1e-9).any() || (w.w.array() > 1 + 1e-9).any())
    throw DataError("reweighing weights outside [0,1]");
  Dataset weighted = train;
  const VectorXd clipped = w.w.cwiseMax(0.0).cwiseMin(1.0);
  weighted.weights = cfg.weighting == DownstreamWeighting::Remove
                         ? VectorXd(VectorXd::Ones(train.size()) - clipped)
                         : clipped;
  if (!(weighted.weights->sum() > 0)) throw DataError("all downstream sample weights are zero");
  return train_erm(weighted, cfg.loss(), cfg.train);
}

FairnessRow fairness_row(const GlmModel& base, const Dataset& train, const Dataset& val,
                         const Dataset& pristine, double lambda, const FairnessConfig& cfg) {
  FairnessRow row;
  row.lambda = lambda;
  try {
    const GlmModel attacked = scaling_attack(base, lambda);
    row.base_accuracy = accuracy(attacked, pristine);
    const FairnessInfluence inf = fairness_influence(attacked, train, val, cfg);
    ReweighWeights w = solve_reweigh(inf, cfg);
    row.lp_status = to_string(w.status);
    row.lp_objective = w.objective;
    // No feasible reweighing: the pipeline keeps the data as is.
    if (w.status != LpStatus::Optimal) w.w = VectorXd::Zero(train.size());
    const Fit fit = retrain_downstream(train, w, cfg);
    const DpReport dp = dp_report(fit.model, pristine);
    row.dp_gap = dp.dp_gap;
    row.accuracy = dp.accuracy;
    row.rate0 = dp.rate0;
    row.rate1 = dp.rate1;
  } catch (const std::exception& e) {
    row.error = e.what();
  }
  return row;
}

void mark_success(FairnessReport& report, double acc_budget) {
  if (report.rows.empty()) return;
  const FairnessRow& ref = report.rows.front();
  report.rows.front().success = false;
  for (std::size_t i = 1; i < report.rows.size(); ++i) {
    auto& r = report.rows[i];
    r.success = ref.error.empty() && r.error.empty() && r.dp_gap > ref.dp_gap &&
                std::abs(r.accuracy - ref.accuracy) <= acc_budget;
  }
}

std::vector<double> fairness_grid(const std::vector<double>& lambdas) {
  std::vector<double> grid{1.0};
  for (double l : lambdas)
    if (l != 1.0) grid.push_back(l);
  return grid;
}

FairnessReport fairness_attack_eval(const GlmModel& base, const Dataset& train, const Dataset& val,
                                    const Dataset& pristine, const std::vector<double>& lambdas,
                                    const FairnessConfig& cfg) {
  cfg.validate();
  FairnessReport report;
  for (double lambda : fairness_grid(lambdas))
    report.rows.push_back(fairness_row(base, train, val, pristine, lambda, cfg));
  mark_success(report, cfg.acc_budget);
  return report;
}

FairnessReport fairness_attack_eval(const Dataset& train, const Dataset& val,
                                    const Dataset& pristine, const std::vector<double>& lambdas,
                                    const FairnessConfig& cfg) {
  const Fit base = train_erm(train, cfg.loss(), cfg.train);
  return fairness_attack_eval(base.model, train, val, pristine, lambdas, cfg);
}

}  // namespace infattack
