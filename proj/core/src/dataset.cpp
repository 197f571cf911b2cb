#include "chainsgd/dataset.hpp"

#include <stdexcept>

#include "chainsgd/rng.hpp"

namespace chainsgd {

Eigen::VectorXd Dataset::sample_vector(long index) const {
  if (index < 0 || index >= size()) throw std::out_of_range("sample index");
  Eigen::VectorXd x(feature_dim() + 1);
  x.head(feature_dim()) = features.row(index).transpose();
  x(feature_dim()) = labels(index);
  return x;
}

namespace {

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

Dataset fill(const DatasetSpec& spec, const Eigen::VectorXd& planted, SplitMix64& rng) {
  Dataset data;
  data.features.resize(spec.sample_count, spec.dimension);
  data.labels.resize(spec.sample_count);
  for (long l = 0; l < spec.sample_count; ++l) {
    for (int j = 0; j < spec.dimension; ++j) data.features(l, j) = rng.normal();
    const double p = sigmoid(data.features.row(l).dot(planted));
    data.labels(l) = rng.uniform01() <= p ? 1.0 : -1.0;
  }
  return data;
}

}  // namespace

Dataset generate_logreg_data(const DatasetSpec& spec) {
  if (spec.dimension < 1 || spec.sample_count < 1) throw std::invalid_argument("dataset spec");
  SplitMix64 rng(derive_stream({spec.seed, 0x64617461ULL}));
  Eigen::VectorXd planted(spec.dimension);
  for (int j = 0; j < spec.dimension; ++j) planted(j) = rng.normal();
  return fill(spec, planted, rng);
}

Dataset generate_logreg_data(const DatasetSpec& spec, const Eigen::VectorXd& planted) {
  if (spec.dimension < 1 || spec.sample_count < 1) throw std::invalid_argument("dataset spec");
  if (planted.size() != spec.dimension) throw std::invalid_argument("planted parameter size");
  SplitMix64 rng(derive_stream({spec.seed, 0x64617461ULL}));
  for (int j = 0; j < spec.dimension; ++j) rng.normal();  // keep stream layout of the drawn-parameter path
  return fill(spec, planted, rng);
}

Regularizer regularizer_from(const DatasetSpec& spec) {
  return Regularizer{spec.regularizer, spec.regularizer_weight};
}

}  // namespace chainsgd
