#pragma once

// Attack objectives over influence vectors and their backward-friendly form.
//
// For a coefficient vector u the linearised objective u^T I(theta) expands to
// v1^T (H + damp I)^{-1} v2 with v1 = -sum_test grad L and v2 = sum_z u_z grad L(z).
// Freezing u1 = (H + damp I)^{-1} v1 and u2 = (H + damp I)^{-1} v2 gives
//   value    = v1^T u2 + u1^T v2 - u1^T (H + damp I) u2
//   gradient = -sum_test Hess L u2 + sum_z u_z Hess L(z) u1 - u1^T (dH) u2
// which matches the chain-rule gradient of u^T I(theta) without ever
// differentiating through an inverse.

#include <string>
#include <vector>

#include "infattack/influence.hpp"

namespace infattack {

enum class ObjectiveVariant { MaxTarget, MaxTargetMinTopK, MaxTargetMinHigher };

inline std::string to_string(ObjectiveVariant v) {
  switch (v) {
    case ObjectiveVariant::MaxTarget: return "max_target";
    case ObjectiveVariant::MaxTargetMinTopK: return "max_target_min_topk";
    case ObjectiveVariant::MaxTargetMinHigher: return "max_target_min_higher";
  }
  return "unknown";
}

inline ObjectiveVariant parse_variant(const std::string& name) {
  if (name == "max_target") return ObjectiveVariant::MaxTarget;
  if (name == "max_target_min_topk") return ObjectiveVariant::MaxTargetMinTopK;
  if (name == "max_target_min_higher") return ObjectiveVariant::MaxTargetMinHigher;
  throw ConfigError("unknown objective variant '" + name + "'");
}

namespace detail {

template <typename Derived>
void check_targets(const Eigen::MatrixBase<Derived>& scores, const std::vector<Index>& targets,
                   Index k) {
  if (targets.empty()) throw DataError("target set is empty");
  for (Index t : targets)
    if (t < 0 || t >= scores.size()) throw DataError("target index out of range");
  if (k < 1) throw DataError("k must be >= 1");
  if (k > scores.size()) throw DataError("k exceeds the number of training samples");
}

}  // namespace detail

/// Coefficients u_z = d loss / d I_z with the membership sets (top-k, or the
/// samples strictly above each target) frozen at `scores`. Targets add up.
template <typename Derived>
Vec<typename Derived::Scalar> linearize(const Eigen::MatrixBase<Derived>& scores,
                                        const std::vector<Index>& targets,
                                        ObjectiveVariant variant, Index k) {
  using Scalar = typename Derived::Scalar;
  detail::check_targets(scores, targets, k);
  const Index n = scores.size();
  Vec<Scalar> u = Vec<Scalar>::Zero(n);

  std::vector<Index> top;
  if (variant == ObjectiveVariant::MaxTargetMinTopK) {
    const Ranking r = rank(scores);
    top.assign(r.order.begin(), r.order.begin() + k);
  }

  for (Index t : targets) {
    u(t) -= Scalar(1);
    if (variant == ObjectiveVariant::MaxTargetMinTopK) {
      for (Index z : top) u(z) += Scalar(1) / static_cast<Scalar>(k);
    } else if (variant == ObjectiveVariant::MaxTargetMinHigher) {
      Index count = 0;
      for (Index z = 0; z < n; ++z) count += scores(z) > scores(t);
      if (count == 0) continue;
      const Scalar share = Scalar(1) / static_cast<Scalar>(count);
      for (Index z = 0; z < n; ++z)
        if (scores(z) > scores(t)) u(z) += share;
    }
  }
  return u;
}

/// Attack loss (to be minimised). Every variant is linear in the scores once
/// membership is fixed, so this is u^T scores for the frozen-membership u.
template <typename Derived>
typename Derived::Scalar attack_loss(const Eigen::MatrixBase<Derived>& scores,
                                     const std::vector<Index>& targets, ObjectiveVariant variant,
                                     Index k) {
  return linearize(scores, targets, variant, k).dot(scores);
}

template <typename Scalar>
struct BasicFrozenAux {
  Vec<Scalar> v1, v2, u1, u2;
  Scalar term_v1u2 = 0;  // v1^T u2
  Scalar term_u1v2 = 0;  // u1^T v2
  Scalar term_u1Hu2 = 0; // u1^T (H + damp I) u2
};

using FrozenAux = BasicFrozenAux<double>;

template <typename Scalar>
struct BackwardFriendly {
  Scalar value = 0;
  BasicFrozenAux<Scalar> aux;
};

/// Value of the backward-friendly objective together with the frozen solves.
template <typename Scalar>
BackwardFriendly<Scalar> build_backward_friendly(const BasicGlmModel<Scalar>& model,
                                                 const BasicDataset<Scalar>& train,
                                                 const BasicDataset<Scalar>& test,
                                                 const Vec<Scalar>& u,
                                                 const BasicIhvpConfig<Scalar>& cfg) {
  if (u.size() != train.size()) throw DataError("coefficient vector length != training size");
  BackwardFriendly<Scalar> out;
  auto& a = out.aux;
  a.v1 = test.empty() ? Vec<Scalar>::Zero(model.num_params())
                      : Vec<Scalar>(-gradient_sum(model, test, Vec<Scalar>(Vec<Scalar>::Ones(test.size()))));
  a.v2 = gradient_sum(model, train, u);
  a.u1 = ihvp(model, train, a.v1, cfg);
  a.u2 = ihvp(model, train, a.v2, cfg);
  a.term_v1u2 = a.v1.dot(a.u2);
  a.term_u1v2 = a.u1.dot(a.v2);
  a.term_u1Hu2 = a.u1.dot(hvp(model, train, a.u2, cfg.loss));
  out.value = a.term_v1u2 + a.term_u1v2 - a.term_u1Hu2;
  return out;
}

/// Gradient of the backward-friendly objective with u1, u2 held fixed.
template <typename Scalar>
Vec<Scalar> grad_backward_friendly(const BasicGlmModel<Scalar>& model,
                                   const BasicDataset<Scalar>& train,
                                   const BasicDataset<Scalar>& test, const Vec<Scalar>& u,
                                   const BasicFrozenAux<Scalar>& aux) {
  if (u.size() != train.size()) throw DataError("coefficient vector length != training size");
  Vec<Scalar> g = hessian_sum_apply(model, train, u, aux.u1);
  if (!test.empty()) g -= hessian_sum_apply(model, test, Vec<Scalar>(Vec<Scalar>::Ones(test.size())), aux.u2);
  g -= third_contract_grad(model, train, aux.u1, aux.u2);
  return g;
}

/// d I_target / d theta, the gradient of one training sample's test-set influence.
template <typename Scalar>
Vec<Scalar> influence_gradient(const BasicGlmModel<Scalar>& model,
                               const BasicDataset<Scalar>& train,
                               const BasicDataset<Scalar>& test, Index target,
                               const BasicIhvpConfig<Scalar>& cfg) {
  if (target < 0 || target >= train.size()) throw DataError("target index out of range");
  Vec<Scalar> u = Vec<Scalar>::Zero(train.size());
  u(target) = Scalar(1);
  const auto bf = build_backward_friendly(model, train, test, u, cfg);
  return grad_backward_friendly(model, train, test, u, bf.aux);
}

}  // namespace infattack
