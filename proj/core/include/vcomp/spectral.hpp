#pragma once

// Eigendecomposition of p^{-1} X X^T and the scalar functionals of its
// spectrum that govern identifiability and the finite-sample bounds.

#include <filesystem>

#include <Eigen/Core>

namespace vcomp {

/// Spectrum of p^{-1} X X^T. Immutable after construction.
struct GramSpectrum {
  Eigen::Index n = 0;
  Eigen::Index p = 0;
  Eigen::VectorXd lambdas;  ///< descending, clamped at 0
  Eigen::MatrixXd U;        ///< n x n orthogonal; column i pairs with lambdas[i]
  Eigen::Index n0 = 0;      ///< number of eigenvalues above the numerical-rank threshold

  [[nodiscard]] double lambda_max() const { return lambdas[0]; }
  /// Smallest eigenvalue counted as positive; throws Degenerate when n0 == 0.
  [[nodiscard]] double lambda_min_positive() const;
};

/// Numerical rank rule: lambda_i counts as positive iff
/// lambda_i > max(n, p) * eps * lambda_1.
[[nodiscard]] Eigen::Index positive_count(const Eigen::VectorXd& sorted_lambdas, Eigen::Index n,
                                          Eigen::Index p);

/// Eigen-decomposes p^{-1} X X^T (symmetric eigensolver when p > n, SVD of X otherwise).
[[nodiscard]] GramSpectrum decompose_gram(const Eigen::MatrixXd& X);

/// Spectrum with the given eigenvalues and U = I. For studies that only need Lambda.
[[nodiscard]] GramSpectrum spectrum_from_eigenvalues(Eigen::VectorXd lambdas, Eigen::Index p);

/// Empirical variance of the eigenvalues, mean(l^2) - mean(l)^2, clamped at 0.
[[nodiscard]] double eigvar(const Eigen::VectorXd& lambdas);
[[nodiscard]] double eigvar(const GramSpectrum& spec);

/// ((l_1 + 1)^2 (1/l_{n0} + 1)^2)^{-1}
[[nodiscard]] double omega(const GramSpectrum& spec);
[[nodiscard]] double omega(double lambda_max, double lambda_min_positive);

/// 1 / (2 (eta0^2 + 1)^4 (l_1 + 1)^4 (1/l_{n0} + 1)^2)
[[nodiscard]] double chi(double eta0_sq, const GramSpectrum& spec);
[[nodiscard]] double chi(double eta0_sq, double lambda_max, double lambda_min_positive);

/// A quantity that may under- or overflow a double: its natural log and
/// exp(log) clamped to the finite range [0, DBL_MAX].
struct LogScaled {
  double log_value;
  double value;
};

[[nodiscard]] LogScaled from_log(double log_value);

/// Concentration-rate constant kappa(sigma0^2, eta0^2, Lambda); exactly 0 when
/// the eigenvalue variance is 0.
[[nodiscard]] LogScaled kappa(double sigma0_sq, double eta0_sq, const GramSpectrum& spec);
[[nodiscard]] LogScaled kappa(double sigma0_sq, double eta0_sq, double lambda_max,
                              double lambda_min_positive, double eig_variance);

/// Normal-approximation constant nu(sigma0^2, eta0^2, Lambda). Throws Degenerate
/// when the eigenvalue variance is below 1e-12 or eta0^2 <= 0.
[[nodiscard]] LogScaled nu(double sigma0_sq, double eta0_sq, const GramSpectrum& spec);
[[nodiscard]] LogScaled nu(double sigma0_sq, double eta0_sq, double lambda_max,
                           double eig_variance);

/// Writes "index,lambda" rows (1-based index) with a header line.
void write_spectrum_csv(const std::filesystem::path& path, const GramSpectrum& spec);

}  // namespace vcomp
