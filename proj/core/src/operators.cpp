#include "chainsgd/operators.hpp"

#include <cmath>
#include <stdexcept>

namespace chainsgd {

namespace {

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double softplus(double z) {
  // log(1+e^z) without overflow for large |z|.
  if (z > 0.0) return z + std::log1p(std::exp(-z));
  return std::log1p(std::exp(z));
}

class AffineElementwise final : public Operator {
 public:
  explicit AffineElementwise(Eigen::MatrixXd a) : a_(std::move(a)) {
    if (a_.rows() != a_.cols()) {
      throw std::invalid_argument("affine_elementwise: matrix must be square");
    }
  }

  int input_dim() const override { return static_cast<int>(a_.cols()); }
  int output_dim() const override { return static_cast<int>(a_.rows()); }
  int weight_dim() const override { return static_cast<int>(a_.cols()); }
  std::string name() const override { return "affine_elementwise"; }

  Eigen::VectorXd forward(const Eigen::VectorXd& x, const Eigen::VectorXd& w) const override {
    check_dims(x, w);
    return a_ * x.cwiseProduct(w);
  }

  Eigen::MatrixXd jac_input(const Eigen::VectorXd& x, const Eigen::VectorXd& w) const override {
    check_dims(x, w);
    return a_ * w.asDiagonal();
  }

  Eigen::MatrixXd jac_weight(const Eigen::VectorXd& x, const Eigen::VectorXd& w) const override {
    check_dims(x, w);
    return a_ * x.asDiagonal();
  }

  bool has_mixed() const override { return true; }

  Tensor3 jac_mixed(const Eigen::VectorXd& x, const Eigen::VectorXd& w) const override {
    check_dims(x, w);
    const int p = output_dim(), q = weight_dim(), r = input_dim();
    Tensor3 t(p, q, r);
    // d(jac_weight)(j,a)/dx_b = A(j,a) * [a == b]
    for (int j = 0; j < p; ++j) {
      for (int a = 0; a < q; ++a) t(j, a, a) = a_(j, a);
    }
    return t;
  }

 private:
  Eigen::MatrixXd a_;
};

class LogisticLink final : public Operator {
 public:
  explicit LogisticLink(int feature_dim) : d_(feature_dim) {
    if (feature_dim < 1) throw std::invalid_argument("logistic_link: feature_dim < 1");
  }

  int input_dim() const override { return d_ + 1; }
  int output_dim() const override { return 1; }
  int weight_dim() const override { return d_; }
  std::string name() const override { return "logistic_link"; }

  Eigen::VectorXd forward(const Eigen::VectorXd& x, const Eigen::VectorXd& w) const override {
    check_dims(x, w);
    const double label = x(d_);
    Eigen::VectorXd out(1);
    out(0) = -label * x.head(d_).dot(w);
    return out;
  }

  Eigen::MatrixXd jac_input(const Eigen::VectorXd& x, const Eigen::VectorXd& w) const override {
    check_dims(x, w);
    const double label = x(d_);
    Eigen::MatrixXd j(1, d_ + 1);
    j.leftCols(d_) = (-label * w).transpose();
    j(0, d_) = -x.head(d_).dot(w);
    return j;
  }

  Eigen::MatrixXd jac_weight(const Eigen::VectorXd& x, const Eigen::VectorXd& w) const override {
    check_dims(x, w);
    const double label = x(d_);
    return (-label * x.head(d_)).transpose();
  }

  bool has_mixed() const override { return true; }

  Tensor3 jac_mixed(const Eigen::VectorXd& x, const Eigen::VectorXd& w) const override {
    check_dims(x, w);
    const double label = x(d_);
    Tensor3 t(1, d_, d_ + 1);
    // d(-label * x_a)/d x_b = -label [a == b];  d(-label * x_a)/d label = -x_a
    for (int a = 0; a < d_; ++a) {
      t(0, a, a) = -label;
      t(0, a, d_) = -x(a);
    }
    return t;
  }

 private:
  int d_;
};

class ScalarMap : public Operator {
 public:
  int input_dim() const override { return 1; }
  int output_dim() const override { return 1; }
  int weight_dim() const override { return 0; }

  bool has_mixed() const override { return true; }

  Tensor3 jac_mixed(const Eigen::VectorXd& x, const Eigen::VectorXd& w) const override {
    check_dims(x, w);
    return Tensor3(1, 0, 1);
  }
};

class Softplus final : public ScalarMap {
 public:
  std::string name() const override { return "softplus"; }

  Eigen::VectorXd forward(const Eigen::VectorXd& x, const Eigen::VectorXd& w) const override {
    check_dims(x, w);
    Eigen::VectorXd out(1);
    out(0) = softplus(x(0));
    return out;
  }

  Eigen::MatrixXd jac_input(const Eigen::VectorXd& x, const Eigen::VectorXd& w) const override {
    check_dims(x, w);
    Eigen::MatrixXd j(1, 1);
    j(0, 0) = sigmoid(x(0));
    return j;
  }

  Eigen::MatrixXd jac_weight(const Eigen::VectorXd& x, const Eigen::VectorXd& w) const override {
    check_dims(x, w);
    return Eigen::MatrixXd(1, 0);
  }
};

class ScalarSigmoid final : public ScalarMap {
 public:
  std::string name() const override { return "scalar_sigmoid"; }

  Eigen::VectorXd forward(const Eigen::VectorXd& x, const Eigen::VectorXd& w) const override {
    check_dims(x, w);
    Eigen::VectorXd out(1);
    out(0) = sigmoid(x(0));
    return out;
  }

  Eigen::MatrixXd jac_input(const Eigen::VectorXd& x, const Eigen::VectorXd& w) const override {
    check_dims(x, w);
    const double s = sigmoid(x(0));
    Eigen::MatrixXd j(1, 1);
    j(0, 0) = s * (1.0 - s);
    return j;
  }

  Eigen::MatrixXd jac_weight(const Eigen::VectorXd& x, const Eigen::VectorXd& w) const override {
    check_dims(x, w);
    return Eigen::MatrixXd(1, 0);
  }
};

class ScalarQuadratic final : public ScalarMap {
 public:
  std::string name() const override { return "scalar_quadratic"; }

  Eigen::VectorXd forward(const Eigen::VectorXd& x, const Eigen::VectorXd& w) const override {
    check_dims(x, w);
    Eigen::VectorXd out(1);
    out(0) = x(0) * x(0);
    return out;
  }

  Eigen::MatrixXd jac_input(const Eigen::VectorXd& x, const Eigen::VectorXd& w) const override {
    check_dims(x, w);
    Eigen::MatrixXd j(1, 1);
    j(0, 0) = 2.0 * x(0);
    return j;
  }

  Eigen::MatrixXd jac_weight(const Eigen::VectorXd& x, const Eigen::VectorXd& w) const override {
    check_dims(x, w);
    return Eigen::MatrixXd(1, 0);
  }
};

class InnerProductSquare final : public Operator {
 public:
  explicit InnerProductSquare(int dim) : d_(dim) {
    if (dim < 1) throw std::invalid_argument("inner_product_square: dim < 1");
  }

  int input_dim() const override { return d_; }
  int output_dim() const override { return 1; }
  int weight_dim() const override { return d_; }
  std::string name() const override { return "inner_product_square"; }

  Eigen::VectorXd forward(const Eigen::VectorXd& y, const Eigen::VectorXd& w) const override {
    check_dims(y, w);
    const double ip = y.dot(w);
    Eigen::VectorXd out(1);
    out(0) = ip * ip + 0.5 * y.squaredNorm();
    return out;
  }

  Eigen::MatrixXd jac_input(const Eigen::VectorXd& y, const Eigen::VectorXd& w) const override {
    check_dims(y, w);
    const double ip = y.dot(w);
    return (2.0 * ip * w + y).transpose();
  }

  Eigen::MatrixXd jac_weight(const Eigen::VectorXd& y, const Eigen::VectorXd& w) const override {
    check_dims(y, w);
    const double ip = y.dot(w);
    return (2.0 * ip * y).transpose();
  }

  bool has_mixed() const override { return true; }

  Tensor3 jac_mixed(const Eigen::VectorXd& y, const Eigen::VectorXd& w) const override {
    check_dims(y, w);
    const double ip = y.dot(w);
    Tensor3 t(1, d_, d_);
    // d(2 <y,w> y_a)/d y_b = 2 w_b y_a + 2 <y,w> [a == b]
    for (int a = 0; a < d_; ++a) {
      for (int b = 0; b < d_; ++b) {
        t(0, a, b) = 2.0 * w(b) * y(a) + (a == b ? 2.0 * ip : 0.0);
      }
    }
    return t;
  }

 private:
  int d_;
};

}  // namespace

Tensor3 Operator::jac_mixed(const Eigen::VectorXd&, const Eigen::VectorXd&) const {
  throw std::logic_error("Operator::jac_mixed: no analytic mixed derivative for " + name());
}

void Operator::check_dims(const Eigen::VectorXd& input, const Eigen::VectorXd& weights) const {
  if (input.size() != input_dim() || weights.size() != weight_dim()) {
    throw std::invalid_argument(name() + ": got input size " + std::to_string(input.size()) +
                                " and weight size " + std::to_string(weights.size()) +
                                ", expected " + std::to_string(input_dim()) + " and " +
                                std::to_string(weight_dim()));
  }
}

OperatorPtr make_affine_elementwise(const Eigen::MatrixXd& a) {
  return std::make_shared<AffineElementwise>(a);
}
OperatorPtr make_logistic_link(int feature_dim) {
  return std::make_shared<LogisticLink>(feature_dim);
}
OperatorPtr make_softplus() { return std::make_shared<Softplus>(); }
OperatorPtr make_scalar_sigmoid() { return std::make_shared<ScalarSigmoid>(); }
OperatorPtr make_scalar_quadratic() { return std::make_shared<ScalarQuadratic>(); }
OperatorPtr make_inner_product_square(int dim) {
  return std::make_shared<InnerProductSquare>(dim);
}

}  // namespace chainsgd
