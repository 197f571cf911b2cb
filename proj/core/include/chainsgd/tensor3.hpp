#pragma once

#include <Eigen/Core>
#include <vector>

namespace chainsgd {

/*! Dense third-order tensor H with dimensions (p, m, n), stored row-major.
 *
 *  Acts on matrices: contracting with A in R^{m x n} gives the vector
 *  [H(A)]_j = sum_{a,b} H(j,a,b) * A(a,b). The operator norm is the spectral
 *  norm of the p x (m*n) matricization (rows indexed by j, columns by the
 *  flattened (a,b) pair), which is exact for this action; the Frobenius norm
 *  is the root of the sum of squared entries.
 */
class Tensor3 {
 public:
  Tensor3() = default;
  Tensor3(int p, int m, int n);

  int extent0() const { return p_; }
  int extent1() const { return m_; }
  int extent2() const { return n_; }
  bool empty() const { return data_.empty(); }

  double operator()(int j, int a, int b) const { return data_[index(j, a, b)]; }
  double& operator()(int j, int a, int b) { return data_[index(j, a, b)]; }

  const std::vector<double>& data() const { return data_; }

  /// View as the p x (m*n) matricization (shares storage).
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
  matricized() const;

  Eigen::VectorXd contract(const Eigen::MatrixXd& a) const;
  /// Contraction along the last index only: returns the p x m matrix
  /// sum_b H(.,.,b) v(b). Used for mixed-derivative directional slices.
  Eigen::MatrixXd contract_last(const Eigen::VectorXd& v) const;

  double frobenius_norm() const;
  double operator_norm() const;

 private:
  std::size_t index(int j, int a, int b) const {
    return (static_cast<std::size_t>(j) * m_ + a) * n_ + b;
  }

  int p_ = 0, m_ = 0, n_ = 0;
  std::vector<double> data_;
};

}  // namespace chainsgd
