#include <doctest.h>

#include <cmath>

#include "vcomp/errors.hpp"
#include "vcomp/quadrature.hpp"

using namespace vcomp;
using Eigen::MatrixXd;
using Eigen::VectorXd;

TEST_CASE("Gauss-Hermite rule") {
  for (int order : {1, 2, 5, 16, 64}) {
    const auto rule = gauss_hermite(order);
    CHECK(rule.nodes.size() == order);
    CHECK(rule.weights.sum() == doctest::Approx(1.0).epsilon(1e-13));
    CHECK(rule.weights.minCoeff() > 0.0);
  }
  // Order m integrates polynomials up to degree 2m - 1 exactly.
  const auto r3 = gauss_hermite(3);
  CHECK(r3.weights.dot(r3.nodes.array().pow(4).matrix()) == doctest::Approx(3.0).epsilon(1e-13));
  CHECK(std::abs(r3.weights.dot(r3.nodes.array().pow(5).matrix())) < 1e-13);
  const auto r4 = gauss_hermite(4);
  CHECK(r4.weights.dot(r4.nodes.array().pow(6).matrix()) == doctest::Approx(15.0).epsilon(1e-13));
  const auto r8 = gauss_hermite(8);
  CHECK(r8.weights.dot(r8.nodes.array().pow(8).matrix()) == doctest::Approx(105.0).epsilon(1e-12));
  CHECK_THROWS_AS((void)gauss_hermite(0), Error);
  CHECK_THROWS_AS((void)gauss_hermite(257), Error);
}

TEST_CASE("gaussian_expectation") {
  const MatrixXd one = MatrixXd::Identity(1, 1);
  const auto c = gaussian_expectation([](const VectorXd& x) { return std::cos(x[0]); }, one);
  CHECK(c.value == doctest::Approx(std::exp(-0.5)).epsilon(1e-9));
  CHECK(!c.monte_carlo);

  MatrixXd cov(2, 2);
  cov << 2.0, 0.6, 0.6, 0.5;
  const auto xy = gaussian_expectation([](const VectorXd& x) { return x[0] * x[1]; }, cov);
  CHECK(xy.value == doctest::Approx(0.6).epsilon(1e-12));
  const auto sq = gaussian_expectation([](const VectorXd& x) { return x[0] * x[0] * x[1] * x[1]; }, cov);
  CHECK(sq.value == doctest::Approx(2.0 * 0.5 + 2 * 0.36).epsilon(1e-12));

  const auto th = gaussian_expectation(
      [](const VectorXd& x) { return std::tanh(x[0] / 3.0) * std::tanh(x[1] / 3.0); }, cov);
  CHECK(th.value > 0.0);
  CHECK(th.error_estimate < 1e-6);

  // Singular covariance: the mass sits on a line.
  MatrixXd sing(2, 2);
  sing << 1.0, 1.0, 1.0, 1.0;
  CHECK(gaussian_expectation([](const VectorXd& x) { return x[0] * x[1]; }, sing).value ==
        doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("Monte Carlo fallback") {
  QuadratureOptions opt;
  opt.max_points = 10;
  opt.mc_samples = 200000;
  const MatrixXd cov = MatrixXd::Identity(3, 3);
  const auto r = gaussian_expectation([](const VectorXd& x) { return x.squaredNorm(); }, cov, opt);
  CHECK(r.monte_carlo);
  CHECK(r.order == 0);
  CHECK(std::abs(r.value - 3.0) < 5 * r.error_estimate);
  const auto again = gaussian_expectation([](const VectorXd& x) { return x.squaredNorm(); }, cov, opt);
  CHECK(again.value == r.value);
}

TEST_CASE("covariance_sqrt") {
  MatrixXd cov(2, 2);
  cov << 2.0, 0.6, 0.6, 0.5;
  const MatrixXd S = covariance_sqrt(cov);
  CHECK((S * S - cov).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((S - S.transpose()).cwiseAbs().maxCoeff() < 1e-14);
}
