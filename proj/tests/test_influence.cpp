#include "doctest.h"

#include <random>

#include "infattack/data_io.hpp"
#include "infattack/influence.hpp"
#include "oracles.hpp"

using namespace infattack;

namespace {

IhvpConfig tight(double damp) { return IhvpConfig{LossSpec{damp, false}, 1e-12, 0}; }

Dataset row(const Dataset& d, Index i) { return d.subset({i}); }

}  // namespace

TEST_CASE("ihvp trivial cases") {
  Dataset empty;
  empty.features.resize(0, 3);
  const GlmModel m(2, 3, true);
  const VectorXd v = (VectorXd(4) << 1, -2, 3, 0.5).finished();
  CHECK(oracle::rel_err(ihvp(m, empty, v, IhvpConfig{LossSpec{0.25, false}}), VectorXd(v / 0.25)) <= 1e-14);

  const Dataset data = oracle::random_dataset(10, 3, 2, 1);
  CHECK(ihvp(m, data, VectorXd(VectorXd::Zero(4)), IhvpConfig{}).norm() == 0.0);
}

TEST_CASE("ihvp matches a dense solve and honours the residual contract") {
  double worst = 0;
  for (int inst = 0; inst < 20; ++inst) {
    const int classes = 2 + inst % 3;
    const Index n = 200, d = 15;
    const Dataset data = oracle::random_dataset(n, d, classes, 1000 + inst);
    const GlmModel m = oracle::random_model(classes, d, inst % 2 == 0, 0.5, 1100 + inst);
    const VectorXd v = VectorXd::Random(m.num_params());
    const IhvpConfig cfg{LossSpec{0.01, false}, 1e-8, 0};
    const VectorXd x = ihvp(m, data, v, cfg);
    const MatrixXd H = oracle::dense_hessian(m, data, 0.01);
    CHECK((H * x - v).norm() <= 1e-8 * v.norm() * (1 + 1e-9));
    worst = std::max(worst, oracle::rel_err(x, VectorXd(H.ldlt().solve(v))));
  }
  CHECK(worst <= 1e-6);
}

TEST_CASE("ihvp reports failure with the achieved residual") {
  const Dataset data = oracle::random_dataset(50, 10, 3, 5);
  const GlmModel m = oracle::random_model(3, 10, true, 1.0, 6);
  IhvpConfig cfg{LossSpec{1e-6, false}, 1e-14, 1};
  try {
    ihvp(m, data, VectorXd(VectorXd::Random(m.num_params())), cfg);
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(e.achieved() > 1e-14);
  }
  cfg.cg_tol = 0;
  CHECK_THROWS_AS(ihvp(m, data, VectorXd(VectorXd::Ones(m.num_params())), cfg), ConfigError);
}

TEST_CASE("influence_pair of a zero-gradient sample is zero") {
  const Dataset data = oracle::random_dataset(30, 2, 2, 7);
  GlmModel m(2, 2, false);
  m.theta << 1.0, 0.0;
  Dataset zero_x;
  zero_x.features = MatrixXd::Zero(1, 2);
  zero_x.labels = {1};
  CHECK(influence_pair(m, zero_x, row(data, 0), data, tight(0.01)) == 0.0);
}

TEST_CASE("influence_pair on the impossibility construction at theta = 0") {
  const auto inst = impossibility_dataset(4, 1, 0);
  const GlmModel zero(2, 4, false);
  const IhvpConfig cfg = tight(0.0);
  const double target = influence_pair(zero, row(inst.train, inst.target), inst.test, inst.train, cfg);
  const double bar = influence_pair(zero, row(inst.train, inst.bars[0]), inst.test, inst.train, cfg);
  CHECK(target == doctest::Approx(-2.5).epsilon(1e-10));
  CHECK(bar == doctest::Approx(2.5).epsilon(1e-10));
  const VectorXd dense = oracle::dense_influence(zero, inst.train, inst.test, 0.0);
  CHECK(dense(inst.target) == doctest::Approx(-2.5).epsilon(1e-12));
  CHECK(dense(inst.bars[0]) == doctest::Approx(2.5).epsilon(1e-12));
}

TEST_CASE("impossibility construction sign pattern for random theta") {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> normal(0, 1);
  for (Index k : {1, 3}) {
    const auto inst = impossibility_dataset(4, k, 3);
    for (int trial = 0; trial < 50; ++trial) {
      GlmModel m(2, 4, false);
      for (Index j = 0; j < 4; ++j) m.theta(j) = normal(rng);
      const VectorXd s = influence_set(m, inst.train, inst.test, tight(0.0));
      const VectorXd dense = oracle::dense_influence(m, inst.train, inst.test, 0.0);
      CHECK(oracle::rel_err(s, dense) <= 1e-8);
      CHECK(s(inst.target) < 0);
      for (Index b : inst.bars) CHECK(s(b) > 0);
      CHECK(rank_of(s, inst.target) >= k + 1);
    }
  }
  // Equal magnitudes hold at theta_1 = 0 only.
  GlmModel m(2, 4, false);
  m.theta << 0.0, 0.7, -1.1, 0.3;
  const auto inst = impossibility_dataset(4, 1, 3);
  const VectorXd s = influence_set(m, inst.train, inst.test, tight(0.0));
  CHECK(s(inst.target) == doctest::Approx(-s(inst.bars[0])).epsilon(1e-9));
}

TEST_CASE("influence_set trivial cases") {
  const Dataset data = oracle::random_dataset(20, 3, 2, 9);
  const GlmModel m = oracle::random_model(2, 3, true, 1.0, 10);
  Dataset empty;
  empty.features.resize(0, 3);
  CHECK(influence_set(m, data, empty, tight(0.01)).norm() == 0.0);

  Dataset dup = data;
  dup.features.row(5) = dup.features.row(4);
  dup.labels[5] = dup.labels[4];
  const VectorXd s = influence_set(m, dup, oracle::random_dataset(8, 3, 2, 11), tight(0.01));
  CHECK(s(4) == s(5));
}

TEST_CASE("influence_set matches per-pair summation and the dense oracle") {
  for (int inst = 0; inst < 5; ++inst) {
    const int classes = 2 + inst % 2;
    const Dataset train = oracle::random_dataset(40, 4, classes, 1200 + inst);
    const Dataset test = oracle::random_dataset(6, 4, classes, 1300 + inst);
    const GlmModel m = oracle::random_model(classes, 4, true, 0.8, 1400 + inst);
    const VectorXd s = influence_set(m, train, test, tight(0.01));
    VectorXd pairs = VectorXd::Zero(train.size());
    for (Index i = 0; i < train.size(); ++i)
      for (Index t = 0; t < test.size(); ++t)
        pairs(i) += influence_pair(m, row(train, i), row(test, t), train, tight(0.01));
    CHECK(oracle::rel_err(s, pairs) <= 1e-8);
    CHECK(oracle::rel_err(s, oracle::dense_influence(m, train, test, 0.01)) <= 1e-8);
  }
}

TEST_CASE("influence_set with a singleton test set equals influence_pair") {
  const Dataset train = oracle::random_dataset(25, 3, 3, 21);
  const Dataset test = oracle::random_dataset(1, 3, 3, 22);
  const GlmModel m = oracle::random_model(3, 3, false, 1.0, 23);
  const VectorXd s = influence_set(m, train, test, tight(0.05));
  for (Index i = 0; i < train.size(); ++i)
    CHECK(std::abs(s(i) - influence_pair(m, row(train, i), test, train, tight(0.05))) <=
          1e-9 * std::max(1.0, std::abs(s(i))));
}

TEST_CASE("negating the test gradient negates every score") {
  // Binary model at theta = 0: flipping a test label negates its gradient exactly.
  const Dataset train = oracle::random_dataset(30, 4, 2, 31);
  Dataset test = oracle::random_dataset(5, 4, 2, 32);
  const GlmModel zero(2, 4, true);
  const VectorXd s = influence_set(zero, train, test, tight(0.01));
  for (auto& y : test.labels) y = 1 - y;
  const VectorXd flipped = influence_set(zero, train, test, tight(0.01));
  CHECK((s + flipped).norm() <= 1e-10 * s.norm());

  // General theta: pass the negated summed gradient through the same pipeline.
  const GlmModel m = oracle::random_model(2, 4, true, 1.0, 33);
  const VectorXd base = influence_set(m, train, test, tight(0.01));
  const VectorXd g = gradient_sum(m, test, VectorXd(VectorXd::Ones(test.size())));
  const VectorXd neg = -sample_gradient_dots(m, train, ihvp(m, train, VectorXd(-g), tight(0.01)));
  CHECK((base + neg).norm() <= 1e-10 * base.norm());
}

TEST_CASE("scores follow a permutation of the training set") {
  const Dataset train = oracle::random_dataset(30, 3, 3, 41);
  const Dataset test = oracle::random_dataset(7, 3, 3, 42);
  const GlmModel m = oracle::random_model(3, 3, true, 1.0, 43);
  std::vector<Index> perm(30);
  std::iota(perm.begin(), perm.end(), Index{0});
  std::shuffle(perm.begin(), perm.end(), std::mt19937_64(44));
  const VectorXd s = influence_set(m, train, test, tight(0.01));
  const VectorXd sp = influence_set(m, train.subset(perm), test, tight(0.01));
  for (Index i = 0; i < 30; ++i)
    CHECK(std::abs(sp(i) - s(perm[static_cast<std::size_t>(i)])) <= 1e-9 * s.norm());
}

TEST_CASE("rank and rank_of") {
  const VectorXd a = (VectorXd(3) << 5, 3, 1).finished();
  const Ranking r = rank(a);
  CHECK(r.order == std::vector<Index>{0, 1, 2});
  CHECK(r.rank_of[2] == 3);
  CHECK(rank_of(a, 0) == 1);
  CHECK(rank_of(a, 2) == 3);

  CHECK(rank(VectorXd(VectorXd::Constant(2, 2.0))).order == std::vector<Index>{0, 1});
  const Ranking eq = rank(VectorXd(VectorXd::Constant(6, -1.0)));
  for (Index i = 0; i < 6; ++i) CHECK(eq.order[static_cast<std::size_t>(i)] == i);

  CHECK_THROWS_AS(rank_of(a, 3), DataError);
  VectorXd bad = a;
  bad(1) = std::nan("");
  CHECK_THROWS_AS(rank(bad), NumericalError);
}

TEST_CASE("rank_of agrees with positions in the ranking") {
  std::mt19937_64 rng(51);
  std::uniform_int_distribution<int> coarse(0, 9);
  for (int trial = 0; trial < 20; ++trial) {
    VectorXd s(40);
    for (Index i = 0; i < 40; ++i) s(i) = coarse(rng);  // many ties
    const Ranking r = rank(s);
    for (Index pos = 1; pos < 40; ++pos) {
      const Index prev = r.order[static_cast<std::size_t>(pos - 1)], cur = r.order[static_cast<std::size_t>(pos)];
      CHECK((s(prev) > s(cur) || (s(prev) == s(cur) && prev < cur)));
    }
    for (Index i = 0; i < 40; ++i) CHECK(rank_of(s, i) == r.rank_of[static_cast<std::size_t>(i)]);
  }
}
