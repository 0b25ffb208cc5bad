#pragma once

#include <algorithm>
#include <numeric>
#include <vector>

#include "infattack/glm.hpp"

namespace infattack {

template <typename Scalar>
struct BasicIhvpConfig {
  BasicLossSpec<Scalar> loss;
  Scalar cg_tol = Scalar(1e-8);
  int cg_max_iter = 0;  // 0 selects 10 * num_params

  int max_iter_for(Index p) const {
    return cg_max_iter > 0 ? cg_max_iter : static_cast<int>(10 * std::max<Index>(p, 1));
  }
};

using IhvpConfig = BasicIhvpConfig<double>;

/// Solves (H + damp I) x = v by conjugate gradients over hvp().
///
/// The stopping test uses the explicitly recomputed residual, so on return
/// |(H + damp I) x - v| <= cg_tol |v| holds. Throws NumericalError with the
/// achieved relative residual when cg_max_iter iterations are not enough.
template <typename Scalar>
Vec<Scalar> ihvp(const BasicGlmModel<Scalar>& model, const BasicDataset<Scalar>& train,
                 const Vec<Scalar>& v, const BasicIhvpConfig<Scalar>& cfg) {
  detail::check_param_vector(model, v);
  if (!(cfg.cg_tol > Scalar(0))) throw ConfigError("cg_tol must be positive");
  const Index p = model.num_params();
  Vec<Scalar> x = Vec<Scalar>::Zero(p);
  const Scalar vnorm = v.norm();
  if (vnorm == Scalar(0)) return x;
  const Scalar target = cfg.cg_tol * vnorm;
  const int max_iter = cfg.max_iter_for(p);

  auto apply = [&](const Vec<Scalar>& q) { return hvp(model, train, q, cfg.loss); };

  Vec<Scalar> r = v;
  Vec<Scalar> d = r;
  Scalar rr = r.squaredNorm();
  int it = 0;
  while (it < max_iter) {
    const Vec<Scalar> Ad = apply(d);
    const Scalar dAd = d.dot(Ad);
    if (!(dAd > Scalar(0))) break;
    const Scalar alpha = rr / dAd;
    x += alpha * d;
    r -= alpha * Ad;
    ++it;
    const Scalar rr_new = r.squaredNorm();
    if (std::sqrt(rr_new) <= target) {
      // Guard against drift of the recursive residual.
      r = v - apply(x);
      const Scalar true_rr = r.squaredNorm();
      if (std::sqrt(true_rr) <= target) return x;
      d = r;
      rr = true_rr;
      continue;
    }
    d = r + (rr_new / rr) * d;
    rr = rr_new;
  }
  const Scalar achieved = (v - apply(x)).norm() / vnorm;
  if (achieved <= cfg.cg_tol) return x;
  throw NumericalError("conjugate gradients did not reach tolerance (relative residual " +
                           std::to_string(static_cast<double>(achieved)) + ")",
                       static_cast<double>(achieved));
}

/// Influence of one training point on the loss at one test point,
/// -grad L(z_test)^T (H + damp I)^{-1} grad L(z_train). Both points are
/// one-row datasets; `train` defines the Hessian.
template <typename Scalar>
Scalar influence_pair(const BasicGlmModel<Scalar>& model, const BasicDataset<Scalar>& train_point,
                      const BasicDataset<Scalar>& test_point, const BasicDataset<Scalar>& train,
                      const BasicIhvpConfig<Scalar>& cfg) {
  if (train_point.size() != 1 || test_point.size() != 1)
    throw DataError("influence_pair expects single-sample datasets");
  const Vec<Scalar> one = Vec<Scalar>::Ones(1);
  const Vec<Scalar> g_test = gradient_sum(model, test_point, one);
  const Vec<Scalar> g_train = gradient_sum(model, train_point, one);
  return -g_test.dot(ihvp(model, train, g_train, cfg));
}

/// Test-set influence of every training sample: one IHVP on the summed test
/// gradient followed by n inner products.
template <typename Scalar>
Vec<Scalar> influence_set(const BasicGlmModel<Scalar>& model, const BasicDataset<Scalar>& train,
                          const BasicDataset<Scalar>& test, const BasicIhvpConfig<Scalar>& cfg) {
  detail::check_compatible(model, train);
  if (test.empty()) return Vec<Scalar>::Zero(train.size());
  const Vec<Scalar> test_grad = gradient_sum(model, test, Vec<Scalar>(Vec<Scalar>::Ones(test.size())));
  const Vec<Scalar> s_test = ihvp(model, train, test_grad, cfg);
  return -sample_gradient_dots(model, train, s_test);
}

struct Ranking {
  std::vector<Index> order;    // train indices, highest score first
  std::vector<Index> rank_of;  // 1-based rank of each train index
};

/// Decreasing-score order; equal scores keep ascending index order.
template <typename Derived>
Ranking rank(const Eigen::MatrixBase<Derived>& scores) {
  if (!scores.allFinite()) throw NumericalError("non-finite influence score", 0.0);
  const auto n = static_cast<std::size_t>(scores.size());
  Ranking out;
  out.order.resize(n);
  std::iota(out.order.begin(), out.order.end(), Index{0});
  std::stable_sort(out.order.begin(), out.order.end(),
                   [&](Index a, Index b) { return scores(a) > scores(b); });
  out.rank_of.resize(n);
  for (std::size_t pos = 0; pos < n; ++pos)
    out.rank_of[static_cast<std::size_t>(out.order[pos])] = static_cast<Index>(pos) + 1;
  return out;
}

/// 1-based rank of one index without sorting: #strictly greater + #equal with
/// a smaller index + 1.
template <typename Derived>
Index rank_of(const Eigen::MatrixBase<Derived>& scores, Index target) {
  if (target < 0 || target >= scores.size()) throw DataError("target index out of range");
  if (!scores.allFinite()) throw NumericalError("non-finite influence score", 0.0);
  const auto t = scores(target);
  Index r = 1;
  for (Index i = 0; i < scores.size(); ++i) {
    if (scores(i) > t || (scores(i) == t && i < target)) ++r;
  }
  return r;
}

}  // namespace infattack
