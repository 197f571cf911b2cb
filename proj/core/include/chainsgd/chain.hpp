#pragma once

#include <Eigen/Core>
#include <vector>

#include "chainsgd/operators.hpp"

namespace chainsgd {

/// Differentiable penalty added to the chain loss. `weight` is the factor
/// multiplying the base penalty (||w||^2 or sum_j w_j^2 / (1 + w_j^2)).
struct Regularizer {
  enum class Kind { kNone, kL2, kSmoothNonconvex };

  Kind kind = Kind::kNone;
  double weight = 0.0;

  static Regularizer None() { return {}; }
  static Regularizer L2(double rho) { return {Kind::kL2, rho}; }
  static Regularizer SmoothNonconvex(double rho) { return {Kind::kSmoothNonconvex, rho}; }

  double value(const Eigen::VectorXd& w) const;
  Eigen::VectorXd gradient(const Eigen::VectorXd& w) const;
  /// Upper bound on the curvature of the penalty (for step-size safety).
  double curvature_bound() const;
  bool strongly_convex() const { return kind == Kind::kL2 && weight > 0.0; }
};

/*! An ordered composition of operators ending in a scalar loss stage.
 *
 *  Stage i (1-based, i = 1..size()) consumes the output of stage i-1; stage 1
 *  consumes the sample vector. Weights of all stages live in one stacked
 *  vector, partitioned in stage order.
 */
class Chain {
 public:
  Chain(std::vector<OperatorPtr> ops, Regularizer reg);

  int size() const { return static_cast<int>(ops_.size()); }  // N
  int weight_dim() const { return weight_dim_; }              // stacked d
  int input_dim() const { return ops_.front()->input_dim(); }

  /// Stage accessor, layer in 1..size().
  const Operator& op(int layer) const { return *ops_[layer - 1]; }
  const Regularizer& regularizer() const { return reg_; }

  int weight_offset(int layer) const { return offsets_[layer - 1]; }

  Eigen::Ref<const Eigen::VectorXd> weights_of(const Eigen::VectorXd& stacked, int layer) const {
    return stacked.segment(offsets_[layer - 1], ops_[layer - 1]->weight_dim());
  }
  Eigen::Ref<Eigen::VectorXd> weights_of(Eigen::VectorXd& stacked, int layer) const {
    return stacked.segment(offsets_[layer - 1], ops_[layer - 1]->weight_dim());
  }

 private:
  std::vector<OperatorPtr> ops_;
  Regularizer reg_;
  std::vector<int> offsets_;
  int weight_dim_ = 0;
};

}  // namespace chainsgd
