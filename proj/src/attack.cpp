#include "infattack/attack.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <tuple>

namespace infattack {

void AttackConfig::validate() const {
  if (!(radius >= 0)) throw ConfigError("attack radius C must be >= 0");
  if (k < 1) throw ConfigError("attack k must be >= 1");
  if (steps < 1) throw ConfigError("attack steps must be >= 1");
  if (num_inits < 1) throw ConfigError("attack num_inits must be >= 1");
  if (learning_rates.empty()) throw ConfigError("attack needs at least one learning rate");
  for (double lr : learning_rates)
    if (!(lr > 0)) throw ConfigError("learning rates must be positive");
  if (!(acc_budget >= 0 && acc_budget <= 1)) throw ConfigError("acc_budget must lie in [0,1]");
  if (!(init_noise >= 0)) throw ConfigError("init_noise must be >= 0");
}

VectorXd AdamState::step(const VectorXd& grad, double lr) {
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  ++t;
  m = beta1 * m + (1 - beta1) * grad;
  v = beta2 * v + (1 - beta2) * grad.cwiseAbs2();
  const double c1 = 1 - std::pow(beta1, t);
  const double c2 = 1 - std::pow(beta2, t);
  return -lr * (m / c1).cwiseQuotient(((v / c2).cwiseSqrt().array() + eps).matrix());
}

double ball_radius(const VectorXd& theta_star, double radius, bool relative) {
  return relative ? radius * theta_star.norm() : radius;
}

VectorXd project_ball(const VectorXd& theta, const VectorXd& theta_star, double radius,
                      bool relative) {
  const double r = ball_radius(theta_star, radius, relative);
  const VectorXd diff = theta - theta_star;
  const double dist = diff.norm();
  if (dist <= r) return theta;
  if (r <= 0) return theta_star;
  return theta_star + (r / dist) * diff;
}

namespace {

struct Evaluation {
  VectorXd scores;
  std::vector<Index> ranks;
  Index hits = 0;
};

Evaluation evaluate_scores(const GlmModel& model, const Dataset& train, const Dataset& test,
                           const std::vector<Index>& targets, Index k, const IhvpConfig& ihvp) {
  Evaluation e;
  e.scores = influence_set(model, train, test, ihvp);
  for (Index t : targets) {
    const Index r = rank_of(e.scores, t);
    e.ranks.push_back(r);
    e.hits += r <= k;
  }
  return e;
}

Index rank_sum(const std::vector<Index>& ranks) {
  return std::accumulate(ranks.begin(), ranks.end(), Index{0});
}

/// Strict ordering: more hits, smaller rank sum, smaller accuracy drop. Earlier
/// candidates win exact ties because callers only replace on `better`.
bool better(const AttackCandidate& a, const AttackCandidate& b) {
  return std::make_tuple(-a.hits, rank_sum(a.ranks), a.delta_acc) <
         std::make_tuple(-b.hits, rank_sum(b.ranks), b.delta_acc);
}

}  // namespace

AttackResult multi_target_attack(const Dataset& train, const Dataset& test,
                                 const GlmModel& theta_star, const std::vector<Index>& targets,
                                 const AttackConfig& cfg) {
  cfg.validate();
  theta_star.validate();
  if (targets.empty()) throw DataError("target set is empty");
  for (Index t : targets)
    if (t < 0 || t >= train.size()) throw DataError("target index out of range");
  if (cfg.k > train.size()) throw ConfigError("k exceeds the training set size");

  const double acc_star = accuracy(theta_star, test);
  const Index p = theta_star.num_params();

  AttackResult result;
  result.targets = targets;
  result.k = cfg.k;

  const Evaluation initial = evaluate_scores(theta_star, train, test, targets, cfg.k, cfg.ihvp);
  result.initial_ranks = initial.ranks;

  AttackCandidate best;
  best.model = theta_star;
  best.ranks = initial.ranks;
  best.hits = initial.hits;
  AttackCandidate best_budget = best;
  std::vector<double> best_trajectory;
  std::vector<double> first_trajectory;

  for (int init = 0; init < cfg.num_inits; ++init) {
    std::mt19937_64 rng(cfg.seed * 1000003ULL + static_cast<std::uint64_t>(init));
    std::normal_distribution<double> normal(0.0, 1.0);
    VectorXd noise(p);
    for (Index j = 0; j < p; ++j) noise(j) = normal(rng);
    const double sigma = cfg.init_noise * theta_star.theta.norm() / std::sqrt(static_cast<double>(p));
    const VectorXd theta0 = project_ball(theta_star.theta + sigma * noise, theta_star.theta,
                                         cfg.radius, cfg.relative_radius);

    for (std::size_t li = 0; li < cfg.learning_rates.size(); ++li) {
      const double lr = cfg.learning_rates[li];
      GlmModel model = theta_star.with_theta(theta0);
      AdamState adam(p);
      std::vector<double> trajectory;
      std::vector<AttackCandidate> run_candidates;
      bool failed = false;
      try {
        for (int step = 0; step <= cfg.steps; ++step) {
          const Evaluation e = evaluate_scores(model, train, test, targets, cfg.k, cfg.ihvp);
          const VectorXd u = linearize(e.scores, targets, cfg.variant, cfg.k);
          trajectory.push_back(u.dot(e.scores));

          AttackCandidate cand;
          cand.model = model;
          cand.ranks = e.ranks;
          cand.hits = e.hits;
          cand.delta_acc = acc_star - accuracy(model, test);
          cand.init = init;
          cand.lr_index = static_cast<int>(li);
          cand.step = step;
          run_candidates.push_back(std::move(cand));

          if (step == cfg.steps) break;
          const auto bf = build_backward_friendly(model, train, test, u, cfg.ihvp);
          const VectorXd g = grad_backward_friendly(model, train, test, u, bf.aux);
          VectorXd next = model.theta + adam.step(g, lr);
          model.theta = project_ball(next, theta_star.theta, cfg.radius, cfg.relative_radius);
        }
      } catch (const NumericalError&) {
        failed = true;
      }
      if (failed) {
        ++result.failed_runs;
        continue;
      }
      if (first_trajectory.empty()) first_trajectory = trajectory;
      for (auto& cand : run_candidates) {
        if (better(cand, best)) {
          best = cand;
          best_trajectory = trajectory;
        }
        if (cand.delta_acc <= cfg.acc_budget && better(cand, best_budget)) best_budget = cand;
      }
    }
  }

  result.theta_prime = best.model;
  result.final_ranks = best.ranks;
  result.hits = best.hits;
  const auto slots = std::min<Index>(static_cast<Index>(targets.size()), cfg.k);
  result.success_rate = static_cast<double>(best.hits) / static_cast<double>(slots);
  result.target_fraction = static_cast<double>(best.hits) / static_cast<double>(targets.size());
  result.delta_acc = best.delta_acc;
  result.loss_trajectory = best.init >= 0 ? best_trajectory : first_trajectory;
  result.chosen_init = best.init;
  result.chosen_lr_index = best.lr_index;
  result.chosen_lr = best.lr_index >= 0 ? cfg.learning_rates[static_cast<std::size_t>(best.lr_index)] : 0.0;
  result.chosen_step = best.step;
  result.within_budget = std::move(best_budget);
  return result;
}

AttackResult single_target_attack(const Dataset& train, const Dataset& test,
                                  const GlmModel& theta_star, Index target,
                                  const AttackConfig& cfg) {
  return multi_target_attack(train, test, theta_star, {target}, cfg);
}

GlmModel baseline_reweigh_attack(const Dataset& train, Index target, double lambda,
                                 const BaselineConfig& cfg) {
  if (!(lambda >= 0)) throw ConfigError("baseline weight lambda must be >= 0");
  if (target < 0 || target >= train.size()) throw DataError("target index out of range");
  if (cfg.steps < 1 || cfg.batch_size < 1 || !(cfg.learning_rate > 0))
    throw ConfigError("invalid baseline config");
  train.validate();

  std::vector<double> weights(static_cast<std::size_t>(train.size()), 1.0);
  weights[static_cast<std::size_t>(target)] = lambda;
  std::discrete_distribution<Index> sampler(weights.begin(), weights.end());
  std::mt19937_64 rng(cfg.seed);

  GlmModel model(train.num_classes, train.dim(), cfg.has_bias);
  AdamState adam(model.num_params());
  std::vector<Index> batch(static_cast<std::size_t>(cfg.batch_size));
  for (int step = 0; step < cfg.steps; ++step) {
    for (auto& b : batch) b = sampler(rng);
    const Dataset mb = train.subset(batch);
    const VectorXd g = grad(model, mb, cfg.loss);
    model.theta += adam.step(g, cfg.learning_rate);
  }
  return model;
}

GlmModel scaling_attack(const GlmModel& model, double lambda) {
  if (!(lambda > 0)) throw ConfigError("scaling coefficient must be positive");
  return model.with_theta(lambda * model.theta);
}

AttackMetrics evaluate_attack(const GlmModel& theta_prime, const GlmModel& theta_star,
                              const Dataset& train, const Dataset& test, const Dataset& pristine,
                              const std::vector<Index>& targets, Index k, double acc_budget,
                              const IhvpConfig& ihvp) {
  if (targets.empty()) throw DataError("target set is empty");
  AttackMetrics m;
  m.test_acc_star = accuracy(theta_star, test);
  m.test_acc_prime = accuracy(theta_prime, test);
  m.pristine_acc_star = accuracy(theta_star, pristine);
  m.pristine_acc_prime = accuracy(theta_prime, pristine);
  m.delta_acc = m.pristine_acc_star - m.pristine_acc_prime;

  const auto slots = static_cast<double>(std::min<Index>(static_cast<Index>(targets.size()), k));
  const Evaluation fin = evaluate_scores(theta_prime, train, test, targets, k, ihvp);
  const Evaluation transfer = evaluate_scores(theta_prime, train, pristine, targets, k, ihvp);
  m.final_ranks = fin.ranks;
  m.transfer_ranks = transfer.ranks;
  m.success_rate = static_cast<double>(fin.hits) / slots;
  m.success_rate_within_budget = m.delta_acc <= acc_budget ? m.success_rate : 0.0;
  m.transfer_success_rate = static_cast<double>(transfer.hits) / slots;
  for (Index t : targets)
    m.influence_grad_norms.push_back(influence_gradient(theta_star, train, test, t, ihvp).norm());
  return m;
}

std::vector<Index> sample_targets(const VectorXd& scores, Index k, Index count, std::uint64_t seed,
                                  bool exclude_top_k) {
  const Ranking r = rank(scores);
  std::vector<Index> pool;
  for (Index i = 0; i < scores.size(); ++i)
    if (!exclude_top_k || r.rank_of[static_cast<std::size_t>(i)] > k) pool.push_back(i);
  if (count > static_cast<Index>(pool.size())) throw DataError("not enough candidate targets");
  std::mt19937_64 rng(seed);
  std::shuffle(pool.begin(), pool.end(), rng);
  pool.resize(static_cast<std::size_t>(count));
  return pool;
}

}  // namespace infattack
