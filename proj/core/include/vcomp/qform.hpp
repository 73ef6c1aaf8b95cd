#pragma once

// Quadratic forms z^T Q z in independent mean-0 variance-1 coordinates:
// exact moments, the centred 2K-vector (w_k, w-check_k) used for multivariate
// normal approximation, and Lipschitz-parameterised families Q(u) = V T(u) V^T.

#include <functional>
#include <vector>

#include <Eigen/Core>

#include "vcomp/randsrc.hpp"

namespace vcomp {

/// A symmetric positive semidefinite matrix with its norms cached.
///
/// Construction rejects asymmetry above 1e-10 (relative to max |q_ij|) and a
/// smallest eigenvalue below -1e-8 * ||Q||; the stored matrix is the exact
/// symmetrisation (Q + Q^T) / 2.
class QuadraticForm {
 public:
  explicit QuadraticForm(Eigen::MatrixXd Q);

  [[nodiscard]] Eigen::Index dim() const noexcept { return Q_.rows(); }
  [[nodiscard]] const Eigen::MatrixXd& matrix() const noexcept { return Q_; }
  [[nodiscard]] const Eigen::VectorXd& diagonal() const noexcept { return diag_; }
  [[nodiscard]] double trace() const noexcept { return trace_; }
  /// tr(Q^2) = ||Q||_HS^2 for symmetric Q.
  [[nodiscard]] double trace_sq() const noexcept { return trace_sq_; }
  [[nodiscard]] double op_norm() const noexcept { return op_norm_; }
  [[nodiscard]] double hs_norm() const noexcept { return hs_norm_; }
  [[nodiscard]] double min_eigenvalue() const noexcept { return min_eig_; }

  /// The diagonal part diag(q_11, ..., q_dd).
  [[nodiscard]] QuadraticForm diagonal_part() const;

 private:
  struct Trusted {};
  QuadraticForm(Eigen::MatrixXd Q, Trusted);
  void cache_norms();

  Eigen::MatrixXd Q_;
  Eigen::VectorXd diag_;
  double trace_ = 0.0;
  double trace_sq_ = 0.0;
  double op_norm_ = 0.0;
  double hs_norm_ = 0.0;
  double min_eig_ = 0.0;
};

/// Largest and smallest eigenvalue of a symmetric matrix. Dense eigensolver up
/// to dimension 2048, power iteration (tol 1e-10, 1e4 iterations) above.
struct EigenRange {
  double min;
  double max;
};
[[nodiscard]] EigenRange symmetric_eigen_range(const Eigen::MatrixXd& S);

/// z^T Q z, computed as (Q z) . z.
[[nodiscard]] double eval_qf(const QuadraticForm& qf, const Eigen::VectorXd& z);

/// Var(z^T Q z) = mu4^T q_2 - 3 ||diag Q||^2 + 2 tr(Q^2) for a common fourth moment.
[[nodiscard]] double qf_variance(const QuadraticForm& qf, const LawMoments& moments);
/// Per-coordinate fourth moments.
[[nodiscard]] double qf_variance(const QuadraticForm& qf, const Eigen::VectorXd& mu4);

/// Cov(z^T A z, z^T B z) = sum_i (mu4_i - 3) a_ii b_ii + 2 tr(AB).
/// Only laws with mu3 = 0 are accepted.
[[nodiscard]] double qf_covariance(const QuadraticForm& a, const QuadraticForm& b,
                                   const LawMoments& moments);
[[nodiscard]] double qf_covariance(const QuadraticForm& a, const QuadraticForm& b,
                                   const Eigen::VectorXd& mu4);

/// sigma_k^2 = 2 tr(Q^2) + gamma2 tr(Qcheck^2), gamma2 the excess kurtosis.
[[nodiscard]] double sigma_k_sq(const QuadraticForm& qf, double gamma2);

/// The centred vector w in R^{2K}: entries (2k, 2k+1) are
/// (z^T Q_k z - tr Q_k, z^T Qcheck_k z - tr Q_k).
class WVector {
 public:
  WVector(std::vector<QuadraticForm> qforms, const LawMoments& moments);

  [[nodiscard]] Eigen::Index size() const noexcept { return 2 * static_cast<Eigen::Index>(qforms_.size()); }
  [[nodiscard]] Eigen::Index dim() const noexcept { return qforms_.front().dim(); }
  [[nodiscard]] const std::vector<QuadraticForm>& qforms() const noexcept { return qforms_; }
  [[nodiscard]] const Eigen::MatrixXd& covariance() const noexcept { return cov_; }

  [[nodiscard]] Eigen::VectorXd value(const Eigen::VectorXd& z) const;

  /// True when every component has zero variance (e.g. Rademacher with Q = I).
  [[nodiscard]] bool degenerate(double tol = 1e-12) const;

 private:
  std::vector<QuadraticForm> qforms_;
  std::vector<QuadraticForm> checks_;
  Eigen::MatrixXd cov_;
};

[[nodiscard]] WVector build_w(std::vector<QuadraticForm> qforms, const LawMoments& moments);

/// Seminorm bounds |f|_2, |f|_3 of a test function.
struct DerivativeNorms {
  double second = 0.0;
  double third = 0.0;
};

/// Constant-free normal-approximation rate
/// (gamma+1)^8 { K^{3/2} d^{1/2} |f|_2 q^2 + K^3 d |f|_3 q^3 },  q = max_k ||Q_k||.
[[nodiscard]] double napprox_rate(const std::vector<QuadraticForm>& qforms, Eigen::Index d,
                                  double gamma, DerivativeNorms f_norms);
[[nodiscard]] double napprox_rate(Eigen::Index K, Eigen::Index d, double gamma,
                                  DerivativeNorms f_norms, double max_op_norm);

/// Family Q(u) = V diag(t(u)) V^T over u in [0, R]^K, with each t_i
/// L-Lipschitz.
class QFFamily {
 public:
  using Coefficients = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

  QFFamily(Eigen::MatrixXd V, Coefficients t, double lipschitz, double radius, Eigen::Index K);

  [[nodiscard]] const Eigen::MatrixXd& V() const noexcept { return V_; }
  [[nodiscard]] Eigen::Index dim() const noexcept { return V_.rows(); }
  [[nodiscard]] Eigen::Index m() const noexcept { return V_.cols(); }
  [[nodiscard]] Eigen::Index K() const noexcept { return K_; }
  [[nodiscard]] double lipschitz() const noexcept { return L_; }
  [[nodiscard]] double radius() const noexcept { return R_; }
  /// ||V^T V||
  [[nodiscard]] double gram_norm() const noexcept { return gram_norm_; }
  /// ||v_i||^2 for each column; tr Q(u) = sum_i t_i(u) ||v_i||^2.
  [[nodiscard]] const Eigen::VectorXd& column_sq_norms() const noexcept { return col_sq_; }

  /// t(u); throws InvalidArgument when u is outside [0, R]^K.
  [[nodiscard]] Eigen::VectorXd coefficients(const Eigen::VectorXd& u) const;

 private:
  Eigen::MatrixXd V_;
  Coefficients t_;
  double L_;
  double R_;
  Eigen::Index K_;
  double gram_norm_ = 0.0;
  Eigen::VectorXd col_sq_;
};

/// The profile-likelihood family t_i(u) = 1 / (u lambda_i + 1) on [0, R], with
/// L = max lambda_i.
[[nodiscard]] QFFamily resolvent_family(Eigen::MatrixXd V, Eigen::VectorXd lambdas, double radius);

[[nodiscard]] QuadraticForm family_eval(const QFFamily& fam, const Eigen::VectorXd& u);

/// Largest observed |t_i(u) - t_i(u')| / ||u - u'|| over `pairs` random pairs.
[[nodiscard]] double lipschitz_spot_check(const QFFamily& fam, int pairs, const SeedSpec& seed);

struct SupDeviation {
  double value = 0.0;         ///< max over the grid of |z^T Q(u) z - tr Q(u)|
  Eigen::VectorXd argmax;     ///< grid point attaining it
  double grid_error_bound = 0.0;  ///< L R sqrt(K) / G * ||V^T V|| * ||z||^2
};

/// Grid surrogate for sup_u |z^T Q(u) z - E z^T Q(u) z| over a uniform G^K grid
/// (K <= 2, G >= 2).
[[nodiscard]] SupDeviation sup_deviation_detail(const QFFamily& fam, const Eigen::VectorXd& z,
                                                int grid);
[[nodiscard]] double sup_deviation(const QFFamily& fam, const Eigen::VectorXd& z, int grid);

}  // namespace vcomp
