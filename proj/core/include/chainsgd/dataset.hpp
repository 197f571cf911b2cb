#pragma once

#include <Eigen/Core>
#include <cstdint>

#include "chainsgd/chain.hpp"

namespace chainsgd {

/// Synthetic binary classification sample set. Row l of `features` is h_l,
/// labels are +-1. sample_vector(l) stacks [h_l; y_l] in the layout the
/// classifier stage consumes.
struct Dataset {
  Eigen::MatrixXd features;  // M x d
  Eigen::VectorXd labels;    // entries in {+1, -1}

  int feature_dim() const { return static_cast<int>(features.cols()); }
  long size() const { return static_cast<long>(features.rows()); }
  Eigen::VectorXd sample_vector(long index) const;
};

struct DatasetSpec {
  int dimension = 10;
  long sample_count = 500;
  Regularizer::Kind regularizer = Regularizer::Kind::kSmoothNonconvex;
  double regularizer_weight = 0.001;
  std::uint64_t seed = 0;
};

/// Draw a planted parameter x* ~ N(0, I), features h_l ~ N(0, I), and labels
/// y_l = +1 with probability sigmoid(h_l . x*), else -1. Deterministic in
/// the seed.
Dataset generate_logreg_data(const DatasetSpec& spec);

/// Same protocol with the planted parameter supplied instead of drawn.
Dataset generate_logreg_data(const DatasetSpec& spec, const Eigen::VectorXd& planted);

/// The regularizer a spec asks for.
Regularizer regularizer_from(const DatasetSpec& spec);

}  // namespace chainsgd
