#include "doctest.h"

#include <cstring>

#include "infattack/attack.hpp"
#include "infattack/data_io.hpp"
#include "oracles.hpp"

using namespace infattack;

namespace {

struct Blobs {
  Dataset train, test, pristine;
  GlmModel theta_star;
};

const Blobs& blobs() {
  static const Blobs b = [] {
    Blobs out;
    const Dataset all = synth_blobs(240, 4, 2, 2.5, 3);
    std::vector<Index> tr, te;
    for (Index i = 0; i < 240; ++i) (i < 120 ? tr : te).push_back(i);
    out.train = all.subset(tr);
    auto halves = split_halves_stratified(all.subset(te), 3);
    out.test = std::move(halves.first);
    out.pristine = std::move(halves.second);
    out.theta_star = train_erm(out.train, LossSpec{0.01, true}, TrainConfig{}).model;
    return out;
  }();
  return b;
}

AttackConfig quick(double radius = 0.5) {
  AttackConfig cfg;
  cfg.radius = radius;
  cfg.k = 5;
  cfg.steps = 15;
  cfg.num_inits = 2;
  cfg.ihvp = IhvpConfig{LossSpec{0.01, false}};
  return cfg;
}

VectorXd theta_star_scores() {
  const Blobs& b = blobs();
  return influence_set(b.theta_star, b.train, b.test, IhvpConfig{LossSpec{0.01, false}});
}

bool same_bits(const VectorXd& a, const VectorXd& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), static_cast<std::size_t>(a.size()) * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("ball projection") {
  const VectorXd star = (VectorXd(2) << 3, 4).finished();  // norm 5
  const VectorXd inside = (VectorXd(2) << 3.5, 4).finished();
  CHECK(project_ball(inside, star, 0.2, true) == inside);
  CHECK(project_ball(inside, star, 0.0, true) == star);
  const VectorXd far = (VectorXd(2) << 30, -7).finished();
  const VectorXd p = project_ball(far, star, 0.2, true);
  CHECK(std::abs((p - star).norm() - 1.0) <= 1e-12);
  const VectorXd q = project_ball(far, star, 2.0, false);
  CHECK(std::abs((q - star).norm() - 2.0) <= 1e-12);
  CHECK(ball_radius(star, 0.5, true) == 2.5);
}

TEST_CASE("adam first step has magnitude lr in every coordinate") {
  AdamState adam(3);
  const VectorXd g = (VectorXd(3) << 2, -0.001, 5).finished();
  const VectorXd d = adam.step(g, 0.1);
  for (Index j = 0; j < 3; ++j) CHECK(d(j) == doctest::Approx(-0.1 * (g(j) > 0 ? 1 : -1)).epsilon(1e-6));
  CHECK(adam.t == 1);
}

TEST_CASE("attack config validation") {
  const Blobs& b = blobs();
  AttackConfig cfg = quick();
  cfg.radius = -1;
  CHECK_THROWS_AS(single_target_attack(b.train, b.test, b.theta_star, 0, cfg), ConfigError);
  cfg = quick();
  cfg.steps = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = quick();
  cfg.learning_rates.clear();
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK_THROWS_AS(single_target_attack(b.train, b.test, b.theta_star, 10000, quick()), DataError);
  CHECK_THROWS_AS(multi_target_attack(b.train, b.test, b.theta_star, {}, quick()), DataError);
}

TEST_CASE("a target already in the top k succeeds immediately") {
  const Blobs& b = blobs();
  const Index top = rank(theta_star_scores()).order.front();
  const AttackResult r = single_target_attack(b.train, b.test, b.theta_star, top, quick());
  CHECK(r.success());
  CHECK(r.initial_rank() == 1);
  CHECK(r.final_rank() == 1);
  CHECK(r.success_rate == 1.0);
}

TEST_CASE("zero radius leaves theta* in place") {
  const Blobs& b = blobs();
  const VectorXd s = theta_star_scores();
  const Ranking r = rank(s);
  for (Index pos : {Index{2}, Index{60}}) {
    const Index t = r.order[static_cast<std::size_t>(pos)];
    const AttackResult res = single_target_attack(b.train, b.test, b.theta_star, t, quick(0.0));
    CHECK(res.theta_prime.theta == b.theta_star.theta);
    CHECK(res.success() == (res.initial_rank() <= 5));
    CHECK(res.final_rank() == res.initial_rank());
    CHECK(res.delta_acc == 0.0);
  }
}

TEST_CASE("attack improves a target's rank within the ball") {
  const Blobs& b = blobs();
  const auto targets = sample_targets(theta_star_scores(), 5, 3, 1);
  AttackConfig cfg = quick(0.5);
  const double radius = ball_radius(b.theta_star.theta, cfg.radius, true);
  int improved = 0;
  for (Index t : targets) {
    const AttackResult r = single_target_attack(b.train, b.test, b.theta_star, t, cfg);
    improved += r.final_rank() < r.initial_rank();
    CHECK((r.theta_prime.theta - b.theta_star.theta).norm() <= radius + 1e-9);
    CHECK((r.within_budget.model.theta - b.theta_star.theta).norm() <= radius + 1e-9);
    CHECK(r.within_budget.delta_acc <= cfg.acc_budget);
    REQUIRE(r.loss_trajectory.size() == static_cast<std::size_t>(cfg.steps + 1));
    for (double v : r.loss_trajectory) CHECK(std::isfinite(v));
    CHECK(r.failed_runs == 0);
  }
  CHECK(improved >= 2);
}

TEST_CASE("attacks are bit-deterministic") {
  const Blobs& b = blobs();
  const auto targets = sample_targets(theta_star_scores(), 5, 4, 2);
  const AttackResult a = multi_target_attack(b.train, b.test, b.theta_star, targets, quick());
  const AttackResult c = multi_target_attack(b.train, b.test, b.theta_star, targets, quick());
  CHECK(same_bits(a.theta_prime.theta, c.theta_prime.theta));
  CHECK(a.final_ranks == c.final_ranks);
  CHECK(a.loss_trajectory == c.loss_trajectory);
  CHECK(a.chosen_init == c.chosen_init);
  CHECK(a.chosen_lr_index == c.chosen_lr_index);
}

TEST_CASE("multi-target reductions") {
  const Blobs& b = blobs();
  const VectorXd s = theta_star_scores();
  const Ranking r = rank(s);
  const std::vector<Index> top(r.order.begin(), r.order.begin() + 5);
  const AttackResult all_top = multi_target_attack(b.train, b.test, b.theta_star, top, quick());
  CHECK(all_top.success_rate == 1.0);
  CHECK(all_top.target_fraction == 1.0);

  const Index t = sample_targets(s, 5, 1, 9).front();
  const AttackResult single = single_target_attack(b.train, b.test, b.theta_star, t, quick());
  const AttackResult multi = multi_target_attack(b.train, b.test, b.theta_star, {t}, quick());
  CHECK(same_bits(single.theta_prime.theta, multi.theta_prime.theta));
  CHECK(single.final_ranks == multi.final_ranks);
}

TEST_CASE("success rate normalisation") {
  const Blobs& b = blobs();
  const auto targets = sample_targets(theta_star_scores(), 5, 8, 4);
  const AttackResult r = multi_target_attack(b.train, b.test, b.theta_star, targets, quick());
  CHECK(r.success_rate == doctest::Approx(static_cast<double>(r.hits) / 5.0));
  CHECK(r.target_fraction == doctest::Approx(static_cast<double>(r.hits) / 8.0));
  Index hits = 0;
  for (Index fr : r.final_ranks) hits += fr <= 5;
  CHECK(hits == r.hits);
}

TEST_CASE("impossibility construction resists the attack") {
  const auto inst = impossibility_dataset(6, 3, 1);
  const GlmModel theta_star = train_erm(inst.train, LossSpec{0.01, true}, TrainConfig{}, false).model;
  AttackConfig cfg = quick(5.0);
  cfg.k = 3;
  const AttackResult r = single_target_attack(inst.train, inst.test, theta_star, inst.target, cfg);
  CHECK_FALSE(r.success());
  CHECK(r.final_rank() >= 4);
}

TEST_CASE("scaling attack") {
  GlmModel m(2, 1, true);
  m.theta << 1, -3;
  CHECK(scaling_attack(m, 2.0).theta == (VectorXd(2) << 2, -6).finished());
  CHECK(scaling_attack(m, 1.0).theta == m.theta);
  CHECK_THROWS_AS(scaling_attack(m, 0.0), ConfigError);
  CHECK_THROWS_AS(scaling_attack(m, -1.0), ConfigError);

  const Dataset data = oracle::random_dataset(200, 5, 4, 71);
  const GlmModel multi = oracle::random_model(4, 5, true, 1.0, 72);
  const auto base = predict(multi, data.features);
  for (double lambda : {0.25, 4.0, 64.0}) {
    const GlmModel scaled = scaling_attack(multi, lambda);
    CHECK(predict(scaled, data.features) == base);
    CHECK(accuracy(scaled, data) == accuracy(multi, data));
  }
}

TEST_CASE("baseline with lambda = 1 matches ordinary training") {
  const Blobs& b = blobs();
  const GlmModel m = baseline_reweigh_attack(b.train, 0, 1.0, BaselineConfig{});
  CHECK(std::abs(accuracy(m, b.test) - accuracy(b.theta_star, b.test)) <= 0.02);
}

TEST_CASE("baseline with lambda = 0 never sees the target") {
  const Blobs& b = blobs();
  Dataset scrambled = b.train;
  scrambled.features.row(7).setConstant(1e6);
  scrambled.labels[7] = 1 - scrambled.labels[7];
  BaselineConfig cfg;
  cfg.steps = 200;
  const GlmModel a = baseline_reweigh_attack(b.train, 7, 0.0, cfg);
  const GlmModel c = baseline_reweigh_attack(scrambled, 7, 0.0, cfg);
  CHECK(same_bits(a.theta, c.theta));
  CHECK_THROWS_AS(baseline_reweigh_attack(b.train, 7, -1.0, cfg), ConfigError);
}

TEST_CASE("baseline with a large weight trades accuracy for rank") {
  const Blobs& b = blobs();
  const IhvpConfig ih{LossSpec{0.01, false}};
  const VectorXd s = theta_star_scores();
  const auto pred = predict(b.theta_star, b.train.features);
  // A misclassified training sample far down the ranking.
  Index target = -1;
  for (Index pos = b.train.size() - 1; pos >= 0 && target < 0; --pos) {
    const Index i = rank(s).order[static_cast<std::size_t>(pos)];
    if (pred[static_cast<std::size_t>(i)] != b.train.labels[static_cast<std::size_t>(i)]) target = i;
  }
  REQUIRE(target >= 0);
  const GlmModel uniform = baseline_reweigh_attack(b.train, target, 1.0, BaselineConfig{});
  const GlmModel heavy = baseline_reweigh_attack(b.train, target, 1e4, BaselineConfig{});
  CHECK(rank_of(influence_set(heavy, b.train, b.test, ih), target) <
        rank_of(influence_set(uniform, b.train, b.test, ih), target));
  CHECK(accuracy(heavy, b.test) < accuracy(uniform, b.test));
}

TEST_CASE("evaluate_attack at theta*") {
  const Blobs& b = blobs();
  const VectorXd s = theta_star_scores();
  const Ranking r = rank(s);
  const std::vector<Index> targets{r.order[0], r.order[40]};
  const IhvpConfig ih{LossSpec{0.01, false}};
  const AttackMetrics m = evaluate_attack(b.theta_star, b.theta_star, b.train, b.test, b.pristine, targets, 5, 0.03, ih);
  CHECK(m.delta_acc == 0.0);
  CHECK(m.final_ranks == std::vector<Index>{1, 41});
  CHECK(m.success_rate == 0.5);
  CHECK(m.success_rate_within_budget == 0.5);
  REQUIRE(m.influence_grad_norms.size() == 2);
  CHECK(m.influence_grad_norms[0] > 0);

  const AttackMetrics same = evaluate_attack(b.theta_star, b.theta_star, b.train, b.test, b.test, targets, 5, 0.03, ih);
  CHECK(same.transfer_ranks == same.final_ranks);
  CHECK(same.transfer_success_rate == same.success_rate);
}

TEST_CASE("target sampling") {
  const VectorXd s = theta_star_scores();
  const auto a = sample_targets(s, 10, 20, 5);
  CHECK(a == sample_targets(s, 10, 20, 5));
  std::vector<Index> sorted = a;
  std::sort(sorted.begin(), sorted.end());
  CHECK(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end());
  for (Index t : a) CHECK(rank_of(s, t) > 10);
  CHECK_THROWS_AS(sample_targets(s, 10, s.size(), 5), DataError);
}
