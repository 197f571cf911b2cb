#include "chainsgd/operators.hpp"

#include <Eigen/Core>
#include <cmath>
#include <vector>

#include "chainsgd/passes.hpp"
#include "chainsgd/rng.hpp"
#include "doctest.h"

using namespace chainsgd;

namespace {

Eigen::VectorXd random_vector(int n, SplitMix64& rng, double lo = -2.0, double hi = 2.0) {
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v(i) = rng.uniform(lo, hi);
  return v;
}

struct CatalogEntry {
  OperatorPtr op;
  // logistic_link wants a fixed +-1 label in its input; others take any point.
  bool label_input = false;
};

std::vector<CatalogEntry> catalog(SplitMix64& rng) {
  Eigen::MatrixXd a(3, 3);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) a(i, j) = rng.uniform(-2.0, 2.0);
  return {
      {make_affine_elementwise(a), false},
      {make_logistic_link(4), true},
      {make_softplus(), false},
      {make_scalar_sigmoid(), false},
      {make_scalar_quadratic(), false},
      {make_inner_product_square(3), false},
  };
}

}  // namespace

TEST_CASE("affine elementwise map reproduces the worked 2x2 example") {
  Eigen::MatrixXd a(2, 2);
  a << -15.0, 13.0, -5.0, 9.0;
  auto op = make_affine_elementwise(a);
  Eigen::VectorXd x(2), w(2);
  x << 1.0, 1.0;
  w << 1.0, 1.0;
  const Eigen::VectorXd y = op->forward(x, w);
  CHECK(y(0) == -2.0);
  CHECK(y(1) == 4.0);
  CHECK((op->jac_weight(x, w) - a).norm() == 0.0);  // diag(x) = I here
}

TEST_CASE("logistic link margin is minus label times inner product") {
  auto op = make_logistic_link(3);
  Eigen::VectorXd in(4), w(3);
  in << 0.5, -1.0, 2.0, 1.0;  // features then label
  w << 1.0, 2.0, 3.0;
  CHECK(op->forward(in, w)(0) == doctest::Approx(-(0.5 - 2.0 + 6.0)).epsilon(1e-15));
  CHECK(op->forward(in, Eigen::VectorXd::Zero(3))(0) == 0.0);
}

TEST_CASE("softplus is stable far into both tails") {
  auto op = make_softplus();
  Eigen::VectorXd z(1);
  Eigen::VectorXd none(0);
  z << 800.0;
  CHECK(op->forward(z, none)(0) == doctest::Approx(800.0).epsilon(1e-15));
  z << -800.0;
  CHECK(op->forward(z, none)(0) >= 0.0);
  CHECK(op->forward(z, none)(0) <= 1e-300);
  z << 0.0;
  CHECK(op->forward(z, none)(0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(op->jac_input(z, none)(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("inner product square at zero weights is half the squared norm") {
  auto op = make_inner_product_square(3);
  Eigen::VectorXd y(3);
  y << 1.0, 2.0, 2.0;
  CHECK(op->forward(y, Eigen::VectorXd::Zero(3))(0) == doctest::Approx(4.5).epsilon(1e-15));
}

TEST_CASE("operators reject inputs with the wrong dimensions") {
  auto op = make_inner_product_square(3);
  CHECK_THROWS_AS(op->forward(Eigen::VectorXd::Zero(2), Eigen::VectorXd::Zero(3)),
                  std::invalid_argument);
  CHECK_THROWS_AS(op->forward(Eigen::VectorXd::Zero(3), Eigen::VectorXd::Zero(2)),
                  std::invalid_argument);
  CHECK_THROWS_AS(make_affine_elementwise(Eigen::MatrixXd::Zero(2, 3)), std::invalid_argument);
}

TEST_CASE("affine jacobians agree with finite differences to rounding error") {
  SplitMix64 rng(101);
  Eigen::MatrixXd a(3, 3);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) a(i, j) = rng.uniform(-2.0, 2.0);
  auto op = make_affine_elementwise(a);
  const JacobianReport report =
      check_jacobians(*op, random_vector(3, rng), random_vector(3, rng));
  CHECK(report.input_error < 1e-9);
  CHECK(report.weight_error < 1e-9);
}

TEST_CASE("catalog jacobians agree with finite differences at random points") {
  SplitMix64 rng(103);
  for (CatalogEntry& entry : catalog(rng)) {
    const Operator& op = *entry.op;
    CAPTURE(op.name());
    double worst = 0.0;
    for (int rep = 0; rep < 25; ++rep) {
      Eigen::VectorXd input = random_vector(op.input_dim(), rng);
      if (entry.label_input) input(op.input_dim() - 1) = rng.uniform01() < 0.5 ? 1.0 : -1.0;
      const Eigen::VectorXd w = random_vector(op.weight_dim(), rng);
      worst = std::max(worst, check_jacobians(op, input, w).max_error());
    }
    CHECK(worst < 1e-6);
  }
}

TEST_CASE("analytic mixed derivatives match finite differences of jac_weight") {
  SplitMix64 rng(107);
  for (CatalogEntry& entry : catalog(rng)) {
    const Operator& op = *entry.op;
    if (!op.has_mixed() || op.weight_dim() == 0) continue;
    CAPTURE(op.name());
    for (int rep = 0; rep < 10; ++rep) {
      Eigen::VectorXd input = random_vector(op.input_dim(), rng);
      if (entry.label_input) input(op.input_dim() - 1) = rng.uniform01() < 0.5 ? 1.0 : -1.0;
      const Eigen::VectorXd w = random_vector(op.weight_dim(), rng);
      const Tensor3 analytic = op.jac_mixed(input, w);
      const Tensor3 fd = fd_mixed_jacobian(op, input, w);
      double gap = 0.0;
      for (std::size_t s = 0; s < analytic.data().size(); ++s)
        gap += (analytic.data()[s] - fd.data()[s]) * (analytic.data()[s] - fd.data()[s]);
      CHECK(std::sqrt(gap) < 1e-6 * (1.0 + analytic.frobenius_norm()));
    }
  }
}
