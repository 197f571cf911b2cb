#include "chainsgd/tensor3.hpp"

#include <Eigen/SVD>
#include <cmath>
#include <stdexcept>

namespace chainsgd {

Tensor3::Tensor3(int p, int m, int n) : p_(p), m_(m), n_(n) {
  if (p < 0 || m < 0 || n < 0) {
    throw std::invalid_argument("Tensor3: negative extent");
  }
  data_.assign(static_cast<std::size_t>(p) * m * n, 0.0);
}

Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
Tensor3::matricized() const {
  return {data_.data(), p_, static_cast<Eigen::Index>(m_) * n_};
}

Eigen::VectorXd Tensor3::contract(const Eigen::MatrixXd& a) const {
  if (a.rows() != m_ || a.cols() != n_) {
    throw std::invalid_argument("Tensor3::contract: argument is " +
                                std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                                ", tensor expects " + std::to_string(m_) + "x" +
                                std::to_string(n_));
  }
  Eigen::VectorXd out = Eigen::VectorXd::Zero(p_);
  for (int j = 0; j < p_; ++j) {
    double acc = 0.0;
    for (int alpha = 0; alpha < m_; ++alpha) {
      for (int beta = 0; beta < n_; ++beta) {
        acc += (*this)(j, alpha, beta) * a(alpha, beta);
      }
    }
    out(j) = acc;
  }
  return out;
}

Eigen::MatrixXd Tensor3::contract_last(const Eigen::VectorXd& v) const {
  if (v.size() != n_) {
    throw std::invalid_argument("Tensor3::contract_last: vector length mismatch");
  }
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(p_, m_);
  for (int j = 0; j < p_; ++j) {
    for (int alpha = 0; alpha < m_; ++alpha) {
      double acc = 0.0;
      for (int beta = 0; beta < n_; ++beta) acc += (*this)(j, alpha, beta) * v(beta);
      out(j, alpha) = acc;
    }
  }
  return out;
}

double Tensor3::frobenius_norm() const {
  double acc = 0.0;
  for (double x : data_) acc += x * x;
  return std::sqrt(acc);
}

double Tensor3::operator_norm() const {
  if (data_.empty()) return 0.0;
  Eigen::MatrixXd flat = matricized();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(flat);
  return svd.singularValues().size() > 0 ? svd.singularValues()(0) : 0.0;
}

}  // namespace chainsgd
