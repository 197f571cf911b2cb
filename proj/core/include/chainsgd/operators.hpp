#pragma once

#include <Eigen/Core>
#include <memory>
#include <string>

#include "chainsgd/tensor3.hpp"

namespace chainsgd {

/*! One differentiable stage of a composite chain.
 *
 *  A stage maps (input, weights) -> output with analytic Jacobians. The
 *  mixed derivative is the derivative of jac_weight with respect to the
 *  input, arranged as a Tensor3 with extents
 *  (output_dim, weight_dim, input_dim). Stages are immutable and stateless;
 *  evaluation never mutates the object.
 */
class Operator {
 public:
  virtual ~Operator() = default;

  virtual int input_dim() const = 0;
  virtual int output_dim() const = 0;
  virtual int weight_dim() const = 0;
  virtual std::string name() const = 0;

  virtual Eigen::VectorXd forward(const Eigen::VectorXd& input,
                                  const Eigen::VectorXd& weights) const = 0;
  /// d(forward)/d(input): output_dim x input_dim.
  virtual Eigen::MatrixXd jac_input(const Eigen::VectorXd& input,
                                    const Eigen::VectorXd& weights) const = 0;
  /// d(forward)/d(weights): output_dim x weight_dim.
  virtual Eigen::MatrixXd jac_weight(const Eigen::VectorXd& input,
                                     const Eigen::VectorXd& weights) const = 0;

  /// Analytic mixed derivative available? Consumers fall back to finite
  /// differences of jac_weight when not.
  virtual bool has_mixed() const { return false; }
  virtual Tensor3 jac_mixed(const Eigen::VectorXd& input,
                            const Eigen::VectorXd& weights) const;

  void check_dims(const Eigen::VectorXd& input, const Eigen::VectorXd& weights) const;
};

using OperatorPtr = std::shared_ptr<const Operator>;

/// y = A (x .* w), the elementwise-scaled linear map. A is square.
OperatorPtr make_affine_elementwise(const Eigen::MatrixXd& a);

/// Scalar margin of a linear classifier: input is [features; label],
/// weights are the model coefficients, output is -label * <features, w>.
OperatorPtr make_logistic_link(int feature_dim);

/// Scalar softplus ln(1 + e^z); weightless.
OperatorPtr make_softplus();

/// Scalar logistic sigmoid 1 / (1 + e^-z); weightless.
OperatorPtr make_scalar_sigmoid();

/// Scalar square z^2; weightless.
OperatorPtr make_scalar_quadratic();

/// f(y, w) = <y, w>^2 + 0.5 * ||y||^2, scalar output.
OperatorPtr make_inner_product_square(int dim);

}  // namespace chainsgd
