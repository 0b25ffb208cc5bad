#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "infattack/errors.hpp"

namespace infattack {

template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using RowMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Index = Eigen::Index;

/// Labelled samples. Rows of `features` are samples. `groups` carries a
/// binary sensitive attribute; `weights` scales each sample's training loss.
template <typename Scalar>
struct BasicDataset {
  Mat<Scalar> features;
  std::vector<int> labels;
  int num_classes = 2;
  std::optional<std::vector<int>> groups;
  std::optional<Vec<Scalar>> weights;

  Index size() const { return features.rows(); }
  Index dim() const { return features.cols(); }
  bool empty() const { return features.rows() == 0; }

  /// Per-sample loss weights, all ones when unset.
  Vec<Scalar> weight_vector() const {
    if (weights) return *weights;
    return Vec<Scalar>::Ones(size());
  }

  void validate() const {
    if (num_classes < 2) throw DataError("dataset needs at least two classes");
    if (features.cols() < 1) throw DataError("dataset feature dimension must be >= 1");
    if (static_cast<Index>(labels.size()) != size())
      throw DataError("label count does not match feature rows");
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] < 0 || labels[i] >= num_classes)
        throw DataError("label out of range at row " + std::to_string(i));
    }
    if (!features.allFinite()) throw DataError("non-finite feature value");
    if (groups) {
      if (static_cast<Index>(groups->size()) != size())
        throw DataError("group count does not match feature rows");
      for (std::size_t i = 0; i < groups->size(); ++i) {
        if ((*groups)[i] != 0 && (*groups)[i] != 1)
          throw DataError("group value outside {0,1} at row " + std::to_string(i));
      }
    }
    if (weights) {
      if (weights->size() != size()) throw DataError("weight count does not match feature rows");
      if (!weights->allFinite() || (weights->array() < Scalar(0)).any())
        throw DataError("sample weights must be finite and non-negative");
    }
  }

  BasicDataset subset(const std::vector<Index>& rows) const {
    BasicDataset out;
    out.num_classes = num_classes;
    out.features.resize(static_cast<Index>(rows.size()), dim());
    out.labels.reserve(rows.size());
    if (groups) out.groups.emplace();
    if (weights) out.weights.emplace(static_cast<Index>(rows.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const Index i = rows[r];
      out.features.row(static_cast<Index>(r)) = features.row(i);
      out.labels.push_back(labels[static_cast<std::size_t>(i)]);
      if (groups) out.groups->push_back((*groups)[static_cast<std::size_t>(i)]);
      if (weights) (*out.weights)(static_cast<Index>(r)) = (*weights)(i);
    }
    return out;
  }

  /// Empty dataset with this one's dimension and class count.
  BasicDataset empty_like() const {
    BasicDataset out;
    out.num_classes = num_classes;
    out.features.resize(0, dim());
    return out;
  }
};

/// Linear classifier for softmax cross-entropy.
///
/// Parameters are stored flat: `K x dim` weights in row-major order followed
/// by `K` biases (when `has_bias`). Binary models use the reduced form with
/// K = 1 (a single logit); multiclass models use K = num_classes.
template <typename Scalar>
struct BasicGlmModel {
  Vec<Scalar> theta;
  int num_classes = 2;
  Index dim = 0;
  bool has_bias = true;

  BasicGlmModel() = default;
  BasicGlmModel(int classes, Index d, bool bias)
      : theta(Vec<Scalar>::Zero(param_count(classes, d, bias))),
        num_classes(classes),
        dim(d),
        has_bias(bias) {}

  static Index outputs_for(int classes) { return classes == 2 ? 1 : classes; }
  static Index param_count(int classes, Index d, bool bias) {
    const Index k = outputs_for(classes);
    return k * d + (bias ? k : 0);
  }

  Index outputs() const { return outputs_for(num_classes); }
  Index num_params() const { return param_count(num_classes, dim, has_bias); }
  bool binary() const { return num_classes == 2; }

  Eigen::Map<const RowMat<Scalar>> weights() const {
    return Eigen::Map<const RowMat<Scalar>>(theta.data(), outputs(), dim);
  }

  void validate() const {
    if (num_classes < 2) throw DataError("model needs at least two classes");
    if (dim < 1) throw DataError("model dimension must be >= 1");
    if (theta.size() != num_params())
      throw DataError("parameter length " + std::to_string(theta.size()) + " != expected " +
                      std::to_string(num_params()));
    if (!theta.allFinite()) throw DataError("non-finite model parameter");
  }

  BasicGlmModel with_theta(Vec<Scalar> t) const {
    BasicGlmModel out = *this;
    out.theta = std::move(t);
    return out;
  }
};

/// Hessian damping. `l2_damp * I` is always added to the Hessian; the
/// matching `(l2_damp / 2) |theta|^2` term enters the loss only when
/// `damp_in_loss` is set.
template <typename Scalar>
struct BasicLossSpec {
  Scalar l2_damp = Scalar(0.01);
  bool damp_in_loss = false;
};

struct TrainConfig {
  int max_iters = 5000;
  double grad_tol = 1e-8;
  int history = 10;
  unsigned long long seed = 0;
};

using Dataset = BasicDataset<double>;
using GlmModel = BasicGlmModel<double>;
using LossSpec = BasicLossSpec<double>;
using VectorXd = Vec<double>;
using MatrixXd = Mat<double>;

}  // namespace infattack
