#pragma once

// Softmax / logistic cross-entropy for linear models: losses, gradients,
// Hessian-vector products and third-derivative contractions, all matrix-free.
//
// Every quantity is assembled from three per-sample pieces of the link
// function evaluated on the n x K score matrix S = X W^T + 1 b^T:
//   first  : dL/ds                 (n x K)
//   second : d2L/ds2 applied to D  (n x K)
//   third  : d3L/ds3 contracted with (A, B)
// and the two linear maps between parameter space and score space
// (jvp: v -> X V^T + 1 vb^T, vjp: G -> flatten(G^T X, colsum G)).

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "infattack/types.hpp"

namespace infattack {

namespace detail {

template <typename Scalar>
Scalar sigmoid(Scalar m) {
  if (m >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-m));
  const Scalar e = std::exp(m);
  return e / (Scalar(1) + e);
}

template <typename Scalar>
Scalar softplus(Scalar m) {
  return std::max(m, Scalar(0)) + std::log1p(std::exp(-std::abs(m)));
}

template <typename Scalar>
void check_compatible(const BasicGlmModel<Scalar>& model, const BasicDataset<Scalar>& data) {
  if (data.dim() != model.dim)
    throw DataError("feature dimension " + std::to_string(data.dim()) + " != model dimension " +
                    std::to_string(model.dim));
  if (data.num_classes != model.num_classes)
    throw DataError("dataset class count does not match model");
  if (static_cast<Index>(data.labels.size()) != data.size())
    throw DataError("label count does not match feature rows");
}

template <typename Scalar>
void check_param_vector(const BasicGlmModel<Scalar>& model, const Vec<Scalar>& v) {
  if (v.size() != model.num_params())
    throw DataError("vector length " + std::to_string(v.size()) + " != parameter count " +
                    std::to_string(model.num_params()));
}

/// Maps a flat parameter-shaped vector into score space: X V^T + 1 vb^T.
template <typename Scalar>
Mat<Scalar> jvp(const BasicGlmModel<Scalar>& model, const Mat<Scalar>& X, const Vec<Scalar>& v) {
  const Index k = model.outputs();
  Eigen::Map<const RowMat<Scalar>> V(v.data(), k, model.dim);
  Mat<Scalar> out = X * V.transpose();
  if (model.has_bias) out.rowwise() += v.tail(k).transpose();
  return out;
}

/// Adjoint of jvp: sum_i G_i (x) [x_i, 1], flattened like theta.
template <typename Scalar>
Vec<Scalar> vjp(const BasicGlmModel<Scalar>& model, const Mat<Scalar>& X, const Mat<Scalar>& G) {
  const Index k = model.outputs();
  Vec<Scalar> out(model.num_params());
  Eigen::Map<RowMat<Scalar>> W(out.data(), k, model.dim);
  W.noalias() = G.transpose() * X;
  if (model.has_bias) out.tail(k) = G.colwise().sum().transpose();
  return out;
}

template <typename Scalar>
Mat<Scalar> scores(const BasicGlmModel<Scalar>& model, const Mat<Scalar>& X) {
  return jvp(model, X, model.theta);
}

/// Link-function state at the current scores: probabilities (sigma for the
/// binary reduced form, softmax rows otherwise) and the label indicator.
template <typename Scalar>
struct Link {
  Mat<Scalar> prob;     // n x K
  Mat<Scalar> target;   // n x K, y for binary, one-hot otherwise
  bool binary = true;

  Mat<Scalar> first() const { return prob - target; }

  Mat<Scalar> second(const Mat<Scalar>& D) const {
    if (binary) return (prob.array() * (Scalar(1) - prob.array()) * D.array()).matrix();
    const Mat<Scalar> PD = (prob.array() * D.array()).matrix();
    const Vec<Scalar> mean = PD.rowwise().sum();
    return (PD.array() - prob.array().colwise() * mean.array()).matrix();
  }

  Mat<Scalar> third(const Mat<Scalar>& A, const Mat<Scalar>& B) const {
    if (binary) {
      const auto s = prob.array();
      return (s * (Scalar(1) - s) * (Scalar(1) - Scalar(2) * s) * A.array() * B.array()).matrix();
    }
    // g_c = p_c [a_c b_c - <ab> - (a_c - <a>) <b> - <a> (b_c - <b>)], <.> = p-weighted mean.
    const auto P = prob.array();
    const Vec<Scalar> ab = (P * A.array() * B.array()).matrix().rowwise().sum();
    const Vec<Scalar> a = (P * A.array()).matrix().rowwise().sum();
    const Vec<Scalar> b = (P * B.array()).matrix().rowwise().sum();
    Mat<Scalar> out = (A.array() * B.array()).matrix();
    out.array().colwise() -= ab.array();
    out.array() -= (A.array().colwise() - a.array()).colwise() * b.array();
    out.array() -= (B.array().colwise() - b.array()).colwise() * a.array();
    return (P * out.array()).matrix();
  }
};

template <typename Scalar>
Link<Scalar> link(const BasicGlmModel<Scalar>& model, const Mat<Scalar>& X,
                  const std::vector<int>& labels) {
  Link<Scalar> out;
  out.binary = model.binary();
  const Mat<Scalar> S = scores(model, X);
  const Index n = S.rows();
  out.target = Mat<Scalar>::Zero(n, S.cols());
  if (out.binary) {
    out.prob = S.unaryExpr([](Scalar m) { return sigmoid(m); });
    for (Index i = 0; i < n; ++i) out.target(i, 0) = labels[static_cast<std::size_t>(i)] == 1;
  } else {
    out.prob.resize(n, S.cols());
    for (Index i = 0; i < n; ++i) {
      const Scalar mx = S.row(i).maxCoeff();
      out.prob.row(i) = (S.row(i).array() - mx).exp();
      out.prob.row(i) /= out.prob.row(i).sum();
      out.target(i, labels[static_cast<std::size_t>(i)]) = Scalar(1);
    }
  }
  return out;
}

/// Coefficients of the mean training loss: w_i / sum(w), or zeros when the
/// total weight vanishes.
template <typename Scalar>
Vec<Scalar> mean_coefficients(const BasicDataset<Scalar>& data) {
  Vec<Scalar> w = data.weight_vector();
  const Scalar total = w.sum();
  if (total > Scalar(0)) return w / total;
  return Vec<Scalar>::Zero(w.size());
}

}  // namespace detail

/// Per-sample cross-entropy values (unweighted).
template <typename Scalar>
Vec<Scalar> sample_losses(const BasicGlmModel<Scalar>& model, const BasicDataset<Scalar>& data) {
  detail::check_compatible(model, data);
  const Mat<Scalar> S = detail::scores(model, data.features);
  Vec<Scalar> out(data.size());
  for (Index i = 0; i < data.size(); ++i) {
    const int y = data.labels[static_cast<std::size_t>(i)];
    if (model.binary()) {
      out(i) = detail::softplus(S(i, 0)) - (y == 1 ? S(i, 0) : Scalar(0));
    } else {
      const Scalar mx = S.row(i).maxCoeff();
      out(i) = mx + std::log((S.row(i).array() - mx).exp().sum()) - S(i, y);
    }
  }
  return out;
}

/// Weighted mean cross-entropy, plus the damping term when it is in the loss.
template <typename Scalar>
Scalar loss(const BasicGlmModel<Scalar>& model, const BasicDataset<Scalar>& data,
            const BasicLossSpec<Scalar>& spec = {}) {
  if (data.empty()) throw DataError("loss of an empty dataset");
  Scalar value = detail::mean_coefficients(data).dot(sample_losses(model, data));
  if (spec.damp_in_loss) value += spec.l2_damp / Scalar(2) * model.theta.squaredNorm();
  return value;
}

/// sum_i c_i grad L(z_i).
template <typename Scalar>
Vec<Scalar> gradient_sum(const BasicGlmModel<Scalar>& model, const BasicDataset<Scalar>& data,
                         const Vec<Scalar>& coeffs) {
  detail::check_compatible(model, data);
  if (data.empty()) return Vec<Scalar>::Zero(model.num_params());
  const auto lk = detail::link(model, data.features, data.labels);
  const Mat<Scalar> G = coeffs.asDiagonal() * lk.first();
  return detail::vjp(model, data.features, G);
}

/// sum_i c_i Hess L(z_i) v.
template <typename Scalar>
Vec<Scalar> hessian_sum_apply(const BasicGlmModel<Scalar>& model,
                              const BasicDataset<Scalar>& data, const Vec<Scalar>& coeffs,
                              const Vec<Scalar>& v) {
  detail::check_compatible(model, data);
  detail::check_param_vector(model, v);
  if (data.empty()) return Vec<Scalar>::Zero(model.num_params());
  const auto lk = detail::link(model, data.features, data.labels);
  const Mat<Scalar> D = detail::jvp(model, data.features, v);
  const Mat<Scalar> G = coeffs.asDiagonal() * lk.second(D);
  return detail::vjp(model, data.features, G);
}

/// g_j = sum_i c_i u1^T (d Hess L(z_i) / d theta_j) u2.
template <typename Scalar>
Vec<Scalar> third_sum_apply(const BasicGlmModel<Scalar>& model,
                            const BasicDataset<Scalar>& data, const Vec<Scalar>& coeffs,
                            const Vec<Scalar>& u1, const Vec<Scalar>& u2) {
  detail::check_compatible(model, data);
  detail::check_param_vector(model, u1);
  detail::check_param_vector(model, u2);
  if (data.empty()) return Vec<Scalar>::Zero(model.num_params());
  const auto lk = detail::link(model, data.features, data.labels);
  const Mat<Scalar> A = detail::jvp(model, data.features, u1);
  const Mat<Scalar> B = detail::jvp(model, data.features, u2);
  const Mat<Scalar> G = coeffs.asDiagonal() * lk.third(A, B);
  return detail::vjp(model, data.features, G);
}

/// grad L(z_i)^T s for every sample, without forming the per-sample gradients.
template <typename Scalar>
Vec<Scalar> sample_gradient_dots(const BasicGlmModel<Scalar>& model,
                                 const BasicDataset<Scalar>& data, const Vec<Scalar>& s) {
  detail::check_compatible(model, data);
  detail::check_param_vector(model, s);
  if (data.empty()) return Vec<Scalar>(0);
  const auto lk = detail::link(model, data.features, data.labels);
  const Mat<Scalar> D = detail::jvp(model, data.features, s);
  return (lk.first().array() * D.array()).matrix().rowwise().sum();
}

/// Per-sample gradients as columns of a p x n matrix.
template <typename Scalar>
Mat<Scalar> sample_gradients(const BasicGlmModel<Scalar>& model,
                             const BasicDataset<Scalar>& data) {
  detail::check_compatible(model, data);
  Mat<Scalar> out(model.num_params(), data.size());
  if (data.empty()) return out;
  const auto lk = detail::link(model, data.features, data.labels);
  const Mat<Scalar> F = lk.first();
  for (Index i = 0; i < data.size(); ++i) {
    out.col(i) = detail::vjp(model, Mat<Scalar>(data.features.row(i)), Mat<Scalar>(F.row(i)));
  }
  return out;
}

/// Exact gradient of loss().
template <typename Scalar>
Vec<Scalar> grad(const BasicGlmModel<Scalar>& model, const BasicDataset<Scalar>& data,
                 const BasicLossSpec<Scalar>& spec = {}) {
  if (data.empty()) throw DataError("gradient of an empty dataset");
  Vec<Scalar> g = gradient_sum(model, data, detail::mean_coefficients(data));
  if (spec.damp_in_loss) g += spec.l2_damp * model.theta;
  return g;
}

/// (H + l2_damp I) v with H the mean training Hessian. An empty dataset
/// contributes nothing, leaving the damping alone.
template <typename Scalar>
Vec<Scalar> hvp(const BasicGlmModel<Scalar>& model, const BasicDataset<Scalar>& data,
                const Vec<Scalar>& v, const BasicLossSpec<Scalar>& spec = {}) {
  detail::check_param_vector(model, v);
  if (!v.allFinite()) throw DataError("hvp input is not finite");
  Vec<Scalar> out = spec.l2_damp * v;
  if (!data.empty()) out += hessian_sum_apply(model, data, detail::mean_coefficients(data), v);
  return out;
}

/// Entries u1^T (dH/dtheta_j) u2 of the mean training Hessian. Damping is
/// constant in theta and does not contribute.
template <typename Scalar>
Vec<Scalar> third_contract_grad(const BasicGlmModel<Scalar>& model,
                                const BasicDataset<Scalar>& data, const Vec<Scalar>& u1,
                                const Vec<Scalar>& u2) {
  detail::check_param_vector(model, u1);
  detail::check_param_vector(model, u2);
  if (data.empty()) return Vec<Scalar>::Zero(model.num_params());
  return third_sum_apply(model, data, detail::mean_coefficients(data), u1, u2);
}

/// Argmax class per sample, ties resolved toward the lower class index.
template <typename Scalar>
std::vector<int> predict(const BasicGlmModel<Scalar>& model, const Mat<Scalar>& X) {
  const Mat<Scalar> S = detail::scores(model, X);
  std::vector<int> out(static_cast<std::size_t>(S.rows()));
  for (Index i = 0; i < S.rows(); ++i) {
    if (model.binary()) {
      out[static_cast<std::size_t>(i)] = S(i, 0) > Scalar(0) ? 1 : 0;
    } else {
      Index best = 0;
      for (Index c = 1; c < S.cols(); ++c)
        if (S(i, c) > S(i, best)) best = c;
      out[static_cast<std::size_t>(i)] = static_cast<int>(best);
    }
  }
  return out;
}

template <typename Scalar>
double accuracy(const BasicGlmModel<Scalar>& model, const BasicDataset<Scalar>& data) {
  if (data.empty()) throw DataError("accuracy of an empty dataset");
  detail::check_compatible(model, data);
  const auto pred = predict(model, data.features);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == data.labels[i];
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

template <typename Scalar>
struct BasicFit {
  BasicGlmModel<Scalar> model;
  bool converged = false;
  Scalar grad_norm = 0;
  int iterations = 0;
  Scalar initial_loss = 0;
  Scalar final_loss = 0;
};

using Fit = BasicFit<double>;

/// Empirical risk minimisation by full-batch L-BFGS with Armijo backtracking,
/// started from zero. Convergence means |grad|_2 <= cfg.grad_tol; otherwise the
/// fit is returned with converged = false and the last gradient norm.
template <typename Scalar>
BasicFit<Scalar> train_erm(const BasicDataset<Scalar>& data, const BasicLossSpec<Scalar>& spec,
                           const TrainConfig& cfg, bool has_bias = true) {
  if (data.empty()) throw DataError("cannot train on an empty dataset");
  data.validate();
  // A single class has no finite minimiser unless the L2 term is in the loss.
  if (!(spec.damp_in_loss && spec.l2_damp > Scalar(0))) {
    std::vector<char> seen(static_cast<std::size_t>(data.num_classes), 0);
    for (int y : data.labels) seen[static_cast<std::size_t>(y)] = 1;
    if (std::count(seen.begin(), seen.end(), 1) < 2)
      throw DataError("training data must contain at least two classes");
  }
  if (cfg.max_iters < 1 || !(cfg.grad_tol > 0)) throw ConfigError("invalid training config");

  BasicFit<Scalar> fit;
  fit.model = BasicGlmModel<Scalar>(data.num_classes, data.dim(), has_bias);
  auto& theta = fit.model.theta;

  Scalar f = loss(fit.model, data, spec);
  Vec<Scalar> g = grad(fit.model, data, spec);
  fit.initial_loss = f;

  std::vector<Vec<Scalar>> s_hist, y_hist;
  std::vector<Scalar> rho_hist;
  const Scalar tol = static_cast<Scalar>(cfg.grad_tol);
  const Scalar eps = std::numeric_limits<Scalar>::epsilon();

  int it = 0;
  for (; it < cfg.max_iters && g.norm() > tol; ++it) {
    // Two-loop recursion.
    Vec<Scalar> d = -g;
    const std::size_t m = s_hist.size();
    std::vector<Scalar> alpha(m);
    for (std::size_t j = m; j-- > 0;) {
      alpha[j] = rho_hist[j] * s_hist[j].dot(d);
      d -= alpha[j] * y_hist[j];
    }
    if (m > 0) d *= s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
    for (std::size_t j = 0; j < m; ++j) {
      const Scalar beta = rho_hist[j] * y_hist[j].dot(d);
      d += (alpha[j] - beta) * s_hist[j];
    }
    Scalar slope = g.dot(d);
    if (!(slope < Scalar(0))) {
      d = -g;
      slope = -g.squaredNorm();
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
    }

    Scalar step = m == 0 ? std::min(Scalar(1), Scalar(1) / g.norm()) : Scalar(1);
    bool accepted = false;
    Vec<Scalar> theta_new, g_new;
    Scalar f_new = f;
    for (int ls = 0; ls < 60; ++ls) {
      theta_new = theta + step * d;
      const auto trial = fit.model.with_theta(theta_new);
      f_new = loss(trial, data, spec);
      if (std::isfinite(static_cast<double>(f_new))) {
        if (f_new <= f + Scalar(1e-4) * step * slope) {
          g_new = grad(trial, data, spec);
          accepted = true;
          break;
        }
        // Near the optimum loss differences drown in rounding; accept a step
        // that is flat to working precision but reduces the gradient.
        if (f_new <= f + Scalar(8) * eps * std::abs(f)) {
          g_new = grad(trial, data, spec);
          if (g_new.norm() < g.norm()) {
            accepted = true;
            break;
          }
        }
      }
      step *= Scalar(0.5);
    }
    if (!accepted) break;

    Vec<Scalar> s = theta_new - theta;
    Vec<Scalar> y = g_new - g;
    const Scalar sy = s.dot(y);
    if (sy > eps * s.norm() * y.norm()) {
      if (static_cast<int>(s_hist.size()) == cfg.history) {
        s_hist.erase(s_hist.begin());
        y_hist.erase(y_hist.begin());
        rho_hist.erase(rho_hist.begin());
      }
      s_hist.push_back(std::move(s));
      y_hist.push_back(std::move(y));
      rho_hist.push_back(Scalar(1) / sy);
    }
    theta = std::move(theta_new);
    g = std::move(g_new);
    f = f_new;
  }

  fit.iterations = it;
  fit.grad_norm = g.norm();
  fit.final_loss = f;
  fit.converged = fit.grad_norm <= tol;
  return fit;
}

}  // namespace infattack
