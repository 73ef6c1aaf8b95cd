#pragma once

// Expectations of smooth functions under a centred Gaussian law in low
// dimension: tensor Gauss-Hermite with order doubling, Monte Carlo when the
// tensor grid would be too large.

#include <functional>

#include <Eigen/Core>

#include "vcomp/randsrc.hpp"

namespace vcomp {

/// Probabilists' Gauss-Hermite rule: sum_i w_i g(x_i) ~ E g(Z), Z ~ N(0, 1).
/// Weights sum to 1.
struct GaussHermiteRule {
  Eigen::VectorXd nodes;
  Eigen::VectorXd weights;
};

/// Golub-Welsch construction; order in [1, 256].
[[nodiscard]] GaussHermiteRule gauss_hermite(int order);

using VectorFn = std::function<double(const Eigen::VectorXd&)>;

/// Symmetric square root of a covariance; negative eigenvalues from rounding are clamped.
[[nodiscard]] Eigen::MatrixXd covariance_sqrt(const Eigen::MatrixXd& cov);

/// Tensor rule of the given order for E f(S z), z ~ N(0, I_d).
[[nodiscard]] double gaussian_expectation_fixed(const VectorFn& f, const Eigen::MatrixXd& cov_sqrt,
                                                int order);

struct GaussianExpectation {
  double value = 0.0;
  double error_estimate = 0.0;  ///< last order-doubling change, or MC standard error
  int order = 0;                ///< final Gauss-Hermite order, 0 for Monte Carlo
  bool monte_carlo = false;
};

struct QuadratureOptions {
  double tol = 1e-6;
  int start_order = 4;
  long max_points = 1L << 22;  ///< tensor-grid size limit before falling back
  long mc_samples = 1'000'000;
  SeedSpec mc_seed{0x5eed, 0};
};

/// E f(Z), Z ~ N(0, cov). Doubles the Gauss-Hermite order until successive
/// values differ by less than tol; falls back to Monte Carlo otherwise.
[[nodiscard]] GaussianExpectation gaussian_expectation(const VectorFn& f, const Eigen::MatrixXd& cov,
                                                       const QuadratureOptions& options = {});

}  // namespace vcomp
