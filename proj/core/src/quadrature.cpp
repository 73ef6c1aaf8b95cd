#include "vcomp/quadrature.hpp"

#include <cmath>

#include <Eigen/Eigenvalues>

#include "vcomp/errors.hpp"

namespace vcomp {

using Eigen::MatrixXd;
using Eigen::VectorXd;

GaussHermiteRule gauss_hermite(int order) {
  require(order >= 1 && order <= 256, ErrorKind::InvalidArgument,
          "Gauss-Hermite order must lie in [1, 256]");
  // Jacobi matrix of He_k: zero diagonal, off-diagonal sqrt(k).
  MatrixXd T = MatrixXd::Zero(order, order);
  for (int k = 1; k < order; ++k) T(k, k - 1) = T(k - 1, k) = std::sqrt(static_cast<double>(k));
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(T);
  GaussHermiteRule rule;
  rule.nodes = es.eigenvalues();
  rule.weights = es.eigenvectors().row(0).transpose().array().square();
  rule.weights /= rule.weights.sum();
  return rule;
}

MatrixXd covariance_sqrt(const MatrixXd& cov) {
  require(cov.rows() == cov.cols() && cov.rows() >= 1, ErrorKind::DimensionMismatch,
          "covariance must be square and non-empty");
  require(cov.allFinite(), ErrorKind::InvalidArgument, "covariance must be finite");
  const MatrixXd sym = 0.5 * (cov + cov.transpose());
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(sym);
  const VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

double gaussian_expectation_fixed(const VectorFn& f, const MatrixXd& cov_sqrt, int order) {
  const auto d = cov_sqrt.rows();
  const GaussHermiteRule rule = gauss_hermite(order);
  std::vector<int> idx(static_cast<std::size_t>(d), 0);
  VectorXd z(d);
  double acc = 0.0;
  while (true) {
    double w = 1.0;
    for (Eigen::Index j = 0; j < d; ++j) {
      z[j] = rule.nodes[idx[j]];
      w *= rule.weights[idx[j]];
    }
    acc += w * f(cov_sqrt * z);
    Eigen::Index j = 0;
    while (j < d && ++idx[j] == order) idx[j++] = 0;
    if (j == d) break;
  }
  return acc;
}

GaussianExpectation gaussian_expectation(const VectorFn& f, const MatrixXd& cov,
                                         const QuadratureOptions& options) {
  const MatrixXd S = covariance_sqrt(cov);
  const auto d = static_cast<double>(S.rows());
  GaussianExpectation out;
  int order = std::max(options.start_order, 1);
  double prev = gaussian_expectation_fixed(f, S, order);
  while (2 * order <= 256 && std::pow(2.0 * order, d) <= static_cast<double>(options.max_points)) {
    order *= 2;
    const double cur = gaussian_expectation_fixed(f, S, order);
    const double change = std::abs(cur - prev);
    prev = cur;
    if (change < options.tol) {
      out.value = cur;
      out.error_estimate = change;
      out.order = order;
      return out;
    }
  }

  RandomStream rs(options.mc_seed);
  VectorXd z(S.rows());
  double mean = 0.0, m2 = 0.0;
  for (long i = 0; i < options.mc_samples; ++i) {
    for (Eigen::Index j = 0; j < z.size(); ++j) z[j] = rs.standard_normal();
    const double v = f(S * z);
    const double delta = v - mean;
    mean += delta / static_cast<double>(i + 1);
    m2 += delta * (v - mean);
  }
  out.value = mean;
  out.error_estimate =
      std::sqrt(m2 / static_cast<double>(options.mc_samples - 1) / static_cast<double>(options.mc_samples));
  out.monte_carlo = true;
  return out;
}

}  // namespace vcomp
