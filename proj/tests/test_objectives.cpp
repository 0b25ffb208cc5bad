#include "doctest.h"

#include <random>

#include "infattack/objectives.hpp"
#include "oracles.hpp"

using namespace infattack;

namespace {

const VectorXd kScores = (VectorXd(3) << 5, 3, 1).finished();

IhvpConfig tight(double damp) { return IhvpConfig{LossSpec{damp, false}, 1e-12, 0}; }

struct Instance {
  Dataset train, test;
  GlmModel model;
};

Instance make_instance(int seed) {
  const int classes = 2 + seed % 2;
  const Index d = 2 + seed % 3;
  return {oracle::random_dataset(20 + 3 * seed, d, classes, 2000 + seed),
          oracle::random_dataset(4, d, classes, 2100 + seed),
          oracle::random_model(classes, d, seed % 2 == 0, 0.8, 2200 + seed)};
}

}  // namespace

TEST_CASE("variant names round trip") {
  for (auto v : {ObjectiveVariant::MaxTarget, ObjectiveVariant::MaxTargetMinTopK,
                 ObjectiveVariant::MaxTargetMinHigher})
    CHECK(parse_variant(to_string(v)) == v);
  CHECK_THROWS_AS(parse_variant("min_everything"), ConfigError);
}

TEST_CASE("attack loss examples") {
  CHECK(attack_loss(kScores, {2}, ObjectiveVariant::MaxTargetMinHigher, 1) == 3.0);
  CHECK(attack_loss(kScores, {0}, ObjectiveVariant::MaxTargetMinHigher, 1) == -5.0);
  CHECK(attack_loss(kScores, {1, 2}, ObjectiveVariant::MaxTargetMinHigher, 1) == 5.0);
  CHECK(attack_loss(kScores, {2}, ObjectiveVariant::MaxTarget, 1) == -1.0);
  // -1 + (5 + 3) / 2
  CHECK(attack_loss(kScores, {2}, ObjectiveVariant::MaxTargetMinTopK, 2) == 3.0);
}

TEST_CASE("attack loss rejects bad arguments") {
  CHECK_THROWS_AS(attack_loss(kScores, {}, ObjectiveVariant::MaxTarget, 1), DataError);
  CHECK_THROWS_AS(attack_loss(kScores, {3}, ObjectiveVariant::MaxTarget, 1), DataError);
  CHECK_THROWS_AS(attack_loss(kScores, {0}, ObjectiveVariant::MaxTarget, 4), DataError);
  CHECK_THROWS_AS(attack_loss(kScores, {0}, ObjectiveVariant::MaxTarget, 0), DataError);
}

TEST_CASE("linearize examples") {
  const VectorXd u = linearize(kScores, {2}, ObjectiveVariant::MaxTargetMinHigher, 1);
  CHECK(u == (VectorXd(3) << 0.5, 0.5, -1).finished());
  CHECK(u.dot(kScores) == 3.0);

  CHECK(linearize(kScores, {0}, ObjectiveVariant::MaxTargetMinHigher, 1) ==
        (VectorXd(3) << -1, 0, 0).finished());

  const VectorXd four = (VectorXd(4) << 1, 2, 3, 4).finished();
  CHECK(linearize(four, {0, 1}, ObjectiveVariant::MaxTarget, 1) ==
        (VectorXd(4) << -1, -1, 0, 0).finished());
}

TEST_CASE("ties are excluded from the higher set") {
  const VectorXd s = (VectorXd(4) << 2, 2, 1, 3).finished();
  const VectorXd u = linearize(s, {0}, ObjectiveVariant::MaxTargetMinHigher, 1);
  CHECK(u == (VectorXd(4) << -1, 0, 0, 1).finished());
}

TEST_CASE("linearized coefficients sum per target") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> normal(0, 1);
  VectorXd s(30);
  for (Index i = 0; i < 30; ++i) s(i) = normal(rng);
  const std::vector<Index> targets{3, 7, 11};
  const VectorXd u = linearize(s, targets, ObjectiveVariant::MaxTargetMinHigher, 1);
  double expected = 0;
  for (Index t : targets) expected += rank_of(s, t) > 1 ? 0.0 : -1.0;
  CHECK(u.sum() == doctest::Approx(expected).epsilon(1e-12));
  VectorXd sum = VectorXd::Zero(30);
  for (Index t : targets) sum += linearize(s, {t}, ObjectiveVariant::MaxTargetMinHigher, 1);
  CHECK(u == sum);
}

TEST_CASE("attack loss is linear in scores away from membership changes") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> normal(0, 1);
  for (auto variant : {ObjectiveVariant::MaxTarget, ObjectiveVariant::MaxTargetMinTopK,
                       ObjectiveVariant::MaxTargetMinHigher}) {
    VectorXd s(25), ds(25);
    for (Index i = 0; i < 25; ++i) {
      s(i) = normal(rng);
      ds(i) = 1e-6 * normal(rng);
    }
    const std::vector<Index> targets{2, 9};
    const VectorXd u = linearize(s, targets, variant, 5);
    const double change = attack_loss(VectorXd(s + ds), targets, variant, 5) - attack_loss(s, targets, variant, 5);
    CHECK(std::abs(change - u.dot(ds)) <= 1e-14);
  }
}

TEST_CASE("backward-friendly trivial cases") {
  const Instance in = make_instance(1);
  const VectorXd zero_u = VectorXd::Zero(in.train.size());
  const auto bf = build_backward_friendly(in.model, in.train, in.test, zero_u, tight(0.01));
  CHECK(bf.value == 0.0);
  CHECK(bf.aux.v2.norm() == 0.0);
  CHECK(bf.aux.u2.norm() == 0.0);
  CHECK(grad_backward_friendly(in.model, in.train, in.test, zero_u, bf.aux).norm() == 0.0);

  const VectorXd u = VectorXd::Random(in.train.size());
  const Dataset empty_test = in.test.empty_like();
  const auto none = build_backward_friendly(in.model, in.train, empty_test, u, tight(0.01));
  CHECK(none.value == 0.0);
  CHECK(none.aux.v1.norm() == 0.0);

  CHECK_THROWS_AS(build_backward_friendly(in.model, in.train, in.test, VectorXd(VectorXd::Zero(3)), tight(0.01)),
                  DataError);
}

TEST_CASE("backward-friendly value equals the linearized influence objective") {
  for (int inst = 0; inst < 10; ++inst) {
    const Instance in = make_instance(inst);
    const VectorXd u = VectorXd::Random(in.train.size());
    const IhvpConfig cfg{LossSpec{0.01, false}, 1e-8, 0};
    const auto bf = build_backward_friendly(in.model, in.train, in.test, u, cfg);
    const double forward = u.dot(oracle::dense_influence(in.model, in.train, in.test, 0.01));
    CHECK(oracle::rel_err(bf.value, forward) <= 1e-6);
    CHECK(oracle::rel_err(bf.aux.term_v1u2, bf.aux.term_u1v2) <= 1e-6);
    CHECK(oracle::rel_err(bf.aux.term_u1Hu2, bf.aux.term_u1v2) <= 1e-6);
  }
}

TEST_CASE("backward-friendly gradient at theta = 0 for a binary model") {
  const Dataset train = oracle::random_dataset(15, 3, 2, 61);
  const Dataset test = oracle::random_dataset(3, 3, 2, 62);
  const GlmModel zero(2, 3, true);
  const VectorXd u = VectorXd::Random(15);
  const auto bf = build_backward_friendly(zero, train, test, u, tight(0.01));
  CHECK(third_contract_grad(zero, train, bf.aux.u1, bf.aux.u2).norm() == 0.0);

  // Remaining terms: d/dtheta [u1^T v2(theta)] and d/dtheta [v1(theta)^T u2] by central differences.
  const auto v2_term = [&](const VectorXd& t) {
    return bf.aux.u1.dot(gradient_sum(zero.with_theta(t), train, u));
  };
  const auto v1_term = [&](const VectorXd& t) {
    return -bf.aux.u2.dot(gradient_sum(zero.with_theta(t), test, VectorXd(VectorXd::Ones(3))));
  };
  const VectorXd fd = oracle::fd_gradient(v2_term, zero.theta, 1e-5) + oracle::fd_gradient(v1_term, zero.theta, 1e-5);
  CHECK(oracle::rel_err(grad_backward_friendly(zero, train, test, u, bf.aux), fd) <= 1e-6);
}

TEST_CASE("backward-friendly gradient matches finite differences of the forward objective") {
  double worst = 0;
  for (int inst = 0; inst < 10; ++inst) {
    const Instance in = make_instance(inst);
    const VectorXd u = VectorXd::Random(in.train.size());
    const IhvpConfig cfg = tight(0.01);
    const auto bf = build_backward_friendly(in.model, in.train, in.test, u, cfg);
    const VectorXd g = grad_backward_friendly(in.model, in.train, in.test, u, bf.aux);
    const auto f = [&](const VectorXd& t) {
      return u.dot(influence_set(in.model.with_theta(t), in.train, in.test, cfg));
    };
    worst = std::max(worst, oracle::rel_err(g, oracle::fd_gradient(f, in.model.theta, 1e-5)));
  }
  CHECK(worst <= 1e-3);
}

TEST_CASE("chain rule through the attack loss with a membership margin") {
  int checked = 0;
  for (int inst = 0; inst < 20 && checked < 5; ++inst) {
    const Instance in = make_instance(inst);
    const IhvpConfig cfg = tight(0.01);
    const VectorXd s = influence_set(in.model, in.train, in.test, cfg);
    const Index target = rank(s).order[static_cast<std::size_t>(in.train.size() / 2)];
    const std::vector<Index> targets{target};
    const VectorXd u = linearize(s, targets, ObjectiveVariant::MaxTargetMinHigher, 1);
    const auto bf = build_backward_friendly(in.model, in.train, in.test, u, cfg);
    const VectorXd g = grad_backward_friendly(in.model, in.train, in.test, u, bf.aux);

    const double h = 1e-6;
    // Score movement under an FD step, bounded through the largest per-sample influence gradient.
    double step_change = 0;
    for (Index z = 0; z < s.size(); ++z)
      step_change = std::max(step_change, h * influence_gradient(in.model, in.train, in.test, z, cfg).norm());
    double margin = 1e300;
    for (Index z = 0; z < s.size(); ++z)
      if (z != target) margin = std::min(margin, std::abs(s(z) - s(target)));
    if (margin <= 10 * 2 * step_change) continue;

    const auto f = [&](const VectorXd& t) {
      return attack_loss(influence_set(in.model.with_theta(t), in.train, in.test, cfg), targets,
                         ObjectiveVariant::MaxTargetMinHigher, 1);
    };
    CHECK(oracle::rel_err(g, oracle::fd_gradient(f, in.model.theta, h)) <= 1e-3);
    ++checked;
  }
  CHECK(checked >= 1);
}

TEST_CASE("influence gradient is the gradient of one sample's score") {
  const Instance in = make_instance(4);
  const IhvpConfig cfg = tight(0.01);
  const auto f = [&](const VectorXd& t) {
    return influence_set(in.model.with_theta(t), in.train, in.test, cfg)(3);
  };
  CHECK(oracle::rel_err(influence_gradient(in.model, in.train, in.test, 3, cfg),
                        oracle::fd_gradient(f, in.model.theta, 1e-5)) <= 1e-4);
  CHECK_THROWS_AS(influence_gradient(in.model, in.train, in.test, -1, cfg), DataError);
}
