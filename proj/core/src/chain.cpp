#include "chainsgd/chain.hpp"

#include <stdexcept>
#include <string>

namespace chainsgd {

double Regularizer::value(const Eigen::VectorXd& w) const {
  switch (kind) {
    case Kind::kNone:
      return 0.0;
    case Kind::kL2:
      return weight * w.squaredNorm();
    case Kind::kSmoothNonconvex: {
      double acc = 0.0;
      for (int i = 0; i < w.size(); ++i) {
        const double s = w(i) * w(i);
        acc += s / (1.0 + s);
      }
      return weight * acc;
    }
  }
  return 0.0;
}

Eigen::VectorXd Regularizer::gradient(const Eigen::VectorXd& w) const {
  switch (kind) {
    case Kind::kNone:
      return Eigen::VectorXd::Zero(w.size());
    case Kind::kL2:
      return 2.0 * weight * w;
    case Kind::kSmoothNonconvex: {
      Eigen::VectorXd g(w.size());
      for (int i = 0; i < w.size(); ++i) {
        const double t = 1.0 + w(i) * w(i);
        g(i) = weight * 2.0 * w(i) / (t * t);
      }
      return g;
    }
  }
  return Eigen::VectorXd::Zero(w.size());
}

double Regularizer::curvature_bound() const {
  switch (kind) {
    case Kind::kNone:
      return 0.0;
    case Kind::kL2:
      return 2.0 * weight;
    case Kind::kSmoothNonconvex:
      // |d^2/dw^2 [w^2/(1+w^2)]| = |2(1-3w^2)/(1+w^2)^3| <= 2.
      return 2.0 * weight;
  }
  return 0.0;
}

Chain::Chain(std::vector<OperatorPtr> ops, Regularizer reg)
    : ops_(std::move(ops)), reg_(reg) {
  if (ops_.size() < 2) {
    throw std::invalid_argument("Chain: need at least two stages");
  }
  for (std::size_t i = 0; i + 1 < ops_.size(); ++i) {
    if (ops_[i]->output_dim() != ops_[i + 1]->input_dim()) {
      throw std::invalid_argument("Chain: stage " + std::to_string(i + 1) + " emits dim " +
                                  std::to_string(ops_[i]->output_dim()) + " but stage " +
                                  std::to_string(i + 2) + " expects " +
                                  std::to_string(ops_[i + 1]->input_dim()));
    }
  }
  if (ops_.back()->output_dim() != 1) {
    throw std::invalid_argument("Chain: final stage must emit a scalar loss");
  }
  offsets_.reserve(ops_.size());
  for (const auto& op : ops_) {
    offsets_.push_back(weight_dim_);
    weight_dim_ += op->weight_dim();
  }
}

}  // namespace chainsgd
