#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "infattack/objectives.hpp"

namespace infattack {

struct AttackConfig {
  double radius = 0.5;          // C
  bool relative_radius = true;  // |theta' - theta*| <= C |theta*| when set, <= C otherwise
  Index k = 10;
  std::vector<double> learning_rates{0.01, 0.1};
  int steps = 100;
  int num_inits = 5;
  double init_noise = 0.01;  // std = init_noise * |theta*| / sqrt(p)
  ObjectiveVariant variant = ObjectiveVariant::MaxTargetMinHigher;
  double acc_budget = 0.03;
  std::uint64_t seed = 0;
  IhvpConfig ihvp;

  void validate() const;
};

/// Adam moments; beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
struct AdamState {
  VectorXd m, v;
  int t = 0;

  explicit AdamState(Index p) : m(VectorXd::Zero(p)), v(VectorXd::Zero(p)) {}
  VectorXd step(const VectorXd& grad, double lr);
};

/// One evaluated iterate of an attack.
struct AttackCandidate {
  GlmModel model;
  std::vector<Index> ranks;  // per target
  Index hits = 0;            // targets ranked <= k
  double delta_acc = 0;      // acc(theta*) - acc(theta') on the attack's test set
  int init = -1;             // -1: theta* itself
  int lr_index = -1;
  int step = 0;
};

struct AttackResult {
  GlmModel theta_prime;
  std::vector<Index> targets;
  std::vector<Index> initial_ranks;
  std::vector<Index> final_ranks;
  Index k = 1;
  Index hits = 0;
  /// Targets in the top k over min(k, |targets|); for one target this is the
  /// success indicator.
  double success_rate = 0;
  /// Targets in the top k over |targets|.
  double target_fraction = 0;
  double delta_acc = 0;
  std::vector<double> loss_trajectory;  // steps + 1 entries of the selected run
  int chosen_init = -1;
  int chosen_lr_index = -1;
  double chosen_lr = 0;
  int chosen_step = 0;
  int failed_runs = 0;
  /// Best iterate whose accuracy drop stays within acc_budget (theta* always qualifies).
  AttackCandidate within_budget;

  bool success() const { return hits == static_cast<Index>(std::min<std::size_t>(targets.size(), static_cast<std::size_t>(k))); }
  Index initial_rank() const { return initial_ranks.front(); }
  Index final_rank() const { return final_ranks.front(); }
};

/// Euclidean projection onto the manipulation ball around theta*.
VectorXd project_ball(const VectorXd& theta, const VectorXd& theta_star, double radius,
                      bool relative);

double ball_radius(const VectorXd& theta_star, double radius, bool relative);

/// Targeted attack on a set of training samples: projected Adam on the summed
/// attack objective from every (initialisation, learning rate) pair. Each step
/// recomputes the influence scores, re-linearises the objective and follows
/// the backward-friendly gradient. Among all evaluated iterates (and theta*
/// itself) the one with the most targets in the top k wins, then the smallest
/// rank sum, then the smallest accuracy drop.
AttackResult multi_target_attack(const Dataset& train, const Dataset& test,
                                 const GlmModel& theta_star, const std::vector<Index>& targets,
                                 const AttackConfig& cfg);

AttackResult single_target_attack(const Dataset& train, const Dataset& test,
                                  const GlmModel& theta_star, Index target,
                                  const AttackConfig& cfg);

struct BaselineConfig {
  int steps = 1400;
  int batch_size = 256;
  double learning_rate = 0.01;
  LossSpec loss{0.01, true};
  std::uint64_t seed = 0;
  bool has_bias = true;
};

/// Loss-reweighing baseline: minibatch Adam where each batch is drawn with
/// replacement, the target having sampling weight `lambda` and every other
/// sample weight 1.
GlmModel baseline_reweigh_attack(const Dataset& train, Index target, double lambda,
                                 const BaselineConfig& cfg);

/// theta' = lambda * theta. Positive scaling keeps every argmax prediction.
GlmModel scaling_attack(const GlmModel& model, double lambda);

struct AttackMetrics {
  double test_acc_star = 0, test_acc_prime = 0;
  double pristine_acc_star = 0, pristine_acc_prime = 0;
  double delta_acc = 0;  // on the pristine set
  std::vector<Index> final_ranks;
  std::vector<Index> transfer_ranks;  // influence computed with the pristine set
  double success_rate = 0;
  double success_rate_within_budget = 0;
  double transfer_success_rate = 0;
  std::vector<double> influence_grad_norms;  // |d I_target / d theta| at theta*
};

AttackMetrics evaluate_attack(const GlmModel& theta_prime, const GlmModel& theta_star,
                              const Dataset& train, const Dataset& test, const Dataset& pristine,
                              const std::vector<Index>& targets, Index k, double acc_budget,
                              const IhvpConfig& ihvp);

/// Distinct training indices ranked outside the top k under `scores`, drawn
/// uniformly without replacement.
std::vector<Index> sample_targets(const VectorXd& scores, Index k, Index count, std::uint64_t seed,
                                  bool exclude_top_k = true);

}  // namespace infattack
