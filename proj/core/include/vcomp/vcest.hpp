#pragma once

// Maximum-likelihood variance-components estimation in the eigenbasis of
// p^{-1} X X^T.
//
// With X X^T / p = U diag(lambda) U^T and ycheck = U^T y every resolvent
// (eta^2 X X^T / p + I)^{-1} is diagonal, so the likelihood, profile
// likelihood, score and Hessian are O(n) sums. The log-likelihood is the
// per-observation Gaussian one,
//
//   l(theta) = -1/2 log sigma^2 - 1/(2n) sum log(eta^2 lambda_i + 1)
//              - 1/(2 sigma^2 n) sum ycheck_i^2 / (eta^2 lambda_i + 1).

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "vcomp/remodel.hpp"
#include "vcomp/spectral.hpp"

namespace vcomp {

/// Evaluation point theta = (sigma^2, eta^2).
struct Theta {
  double sigma_sq = 1.0;
  double eta_sq = 0.0;
};

/// Data projected onto the eigenbasis. Immutable.
class ScoreState {
 public:
  ScoreState(const GramSpectrum& spec, const Eigen::VectorXd& y);
  /// Direct construction from eigenvalues and ycheck = U^T y.
  ScoreState(Eigen::VectorXd lambdas, Eigen::VectorXd y_check);

  [[nodiscard]] Eigen::Index n() const noexcept { return lambdas_.size(); }
  [[nodiscard]] const Eigen::VectorXd& lambdas() const noexcept { return lambdas_; }
  [[nodiscard]] const Eigen::VectorXd& y_check() const noexcept { return y_check_; }
  [[nodiscard]] const Eigen::ArrayXd& y_check_sq() const noexcept { return y_sq_; }

 private:
  Eigen::VectorXd lambdas_;
  Eigen::VectorXd y_check_;
  Eigen::ArrayXd y_sq_;
};

/// sigma_*^2(eta^2) = n^{-1} y^T (eta^2 X X^T / p + I)^{-1} y.
[[nodiscard]] double sigma_star_sq(const ScoreState& state, double eta_sq);

/// Population counterpart E{sigma_*^2(eta^2) | X} = sigma0^2/n sum (eta0^2 l + 1)/(eta^2 l + 1).
[[nodiscard]] double sigma0_sq_of(double eta_sq, const ModelParams& params,
                                  const Eigen::VectorXd& lambdas);

[[nodiscard]] double loglik(const ScoreState& state, const Theta& theta);

/// l_*(eta^2) = l(sigma_*^2(eta^2), eta^2).
[[nodiscard]] double profile_loglik(const ScoreState& state, double eta_sq);

/// l_0(eta^2) = l(sigma_0^2(eta^2), eta^2) with ycheck^2 replaced by its expectation.
[[nodiscard]] double pop_profile_loglik(double eta_sq, const ModelParams& params,
                                        const Eigen::VectorXd& lambdas);

/// H_*(eta^2) = 2 sigma_*^2(eta^2) d l_*/d eta^2.
[[nodiscard]] double profile_score(const ScoreState& state, double eta_sq);
/// d H_* / d eta^2, used by the Newton stage of fit_mle.
[[nodiscard]] double profile_score_derivative(const ScoreState& state, double eta_sq);

/// H_0(eta^2) = E{H_*(eta^2) | X} from the first-moment formula.
[[nodiscard]] double pop_profile_score(double eta_sq, const ModelParams& params,
                                       const Eigen::VectorXd& lambdas);
/// The same quantity as the pairwise sum
/// sigma0^2/(2n^2) sum_ij (eta0^2 - eta^2)(l_i - l_j)^2 / ((eta^2 l_i + 1)^2 (eta^2 l_j + 1)^2).
[[nodiscard]] double pop_profile_score_pairwise(double eta_sq, const ModelParams& params,
                                                const Eigen::VectorXd& lambdas);

/// Eigenvalue variance below 1e-10 (lambda_1 + 1)^2 means sigma^2 and eta^2 cannot be separated.
[[nodiscard]] bool is_identifiable(const Eigen::VectorXd& lambdas);

struct FitOptions {
  int grid = 64;                  ///< points on t = eta^2 / (1 + eta^2)
  double golden_width = 1e-8;     ///< final bracket width in t
  int newton_max_iter = 20;
  double t_cap = 1.0 - 1e-6;      ///< eta^2 search cap, about 1e6
  bool keep_trace = true;
  bool compute_psi = true;
};

struct FitResult {
  Theta theta_hat;
  std::vector<std::pair<double, double>> eta_grid_trace;  ///< (eta^2, l_*(eta^2))
  bool boundary_flag = false;        ///< eta-hat^2 = 0
  bool identifiability_flag = false;
  bool cap_flag = false;             ///< maximiser sits at the eta^2 search cap
  int newton_iters = 0;
  double score_at_hat = 0.0;         ///< H_*(eta-hat^2)
  double tol_score = 0.0;
  std::optional<Eigen::Matrix2d> psi_hat;  ///< plug-in Gaussian asymptotic covariance
};

/// Grid search on t, golden-section refinement of the best cell, then
/// safeguarded Newton on H_* = 0. Exact ties resolve to the smallest eta^2.
/// Throws Degenerate when y = 0 and Numeric when l_* is non-finite.
[[nodiscard]] FitResult fit_mle(const ScoreState& state, const FitOptions& options = {});

/// {sigma2_hat, eta2_hat, boundary, identifiable, psi (2x2 row-major or null), trace?}
[[nodiscard]] std::string fit_result_json(const FitResult& fit, bool include_trace);

/// Score S(theta) = d l / d theta, ordered (sigma^2, eta^2).
[[nodiscard]] Eigen::Vector2d score(const ScoreState& state, const Theta& theta);
/// J(theta) = d S / d theta.
[[nodiscard]] Eigen::Matrix2d hessian(const ScoreState& state, const Theta& theta);
/// J_0(theta) = E{J(theta) | X} under the model with parameters `params`.
[[nodiscard]] Eigen::Matrix2d expected_hessian(const Theta& theta, const ModelParams& params,
                                               const Eigen::VectorXd& lambdas);
/// (1/(8 sigma0^4 n^2)) sum_ij (l_i - l_j)^2 / ((eta0^2 l_i + 1)^2 (eta0^2 l_j + 1)^2).
[[nodiscard]] double expected_hessian_det_pairwise(const ModelParams& params,
                                                   const Eigen::VectorXd& lambdas);

/// Gaussian Fisher information (per observation) at theta_0.
[[nodiscard]] Eigen::Matrix2d gaussian_fisher(const ModelParams& params,
                                              const Eigen::VectorXd& lambdas);

/// Scaled score components as quadratic forms in
/// zeta = (sqrt(p) beta / tau0, eps / sigma0) in R^{p+n}:
///
///   scale * S_k(theta_0) = zeta^T M_k zeta - c_k,   scale = sqrt(n).
struct ScoreForms {
  Eigen::MatrixXd M1;
  Eigen::MatrixXd M2;
  double c1 = 0.0;
  double c2 = 0.0;
  double scale = 1.0;

  /// zeta from effects drawn under `params`.
  [[nodiscard]] static Eigen::VectorXd zeta(const Eigen::VectorXd& beta, const Eigen::VectorXd& eps,
                                            const ModelParams& params);
};

/// Throws Degenerate when eta0^2 = 0.
[[nodiscard]] ScoreForms score_qf_matrices(const ModelParams& params, const GramSpectrum& spec,
                                           const Eigen::MatrixXd& X);

/// Per-coordinate fourth moments of zeta: p copies of the effect law, then n of the error law.
[[nodiscard]] Eigen::VectorXd zeta_fourth_moments(Eigen::Index n, Eigen::Index p,
                                                  const EffectLaws& laws);

/// I(theta_0) = Cov{sqrt(n) S(theta_0) | X}, from qf_covariance on the dense
/// score forms. O((n + p)^2 n); intended for moderate sizes and as a check.
[[nodiscard]] Eigen::Matrix2d score_covariance(const ModelParams& params, const GramSpectrum& spec,
                                               const Eigen::MatrixXd& X, const EffectLaws& laws);

/// The same covariance assembled from the eigenbasis without forming M_k:
/// the trace terms collapse to O(n) sums and only diag(M_k) needs X^T U.
/// X is not read when both laws have mu4 = 3.
[[nodiscard]] Eigen::Matrix2d score_covariance_spectral(const ModelParams& params,
                                                        const GramSpectrum& spec,
                                                        const Eigen::MatrixXd& X,
                                                        const EffectLaws& laws);

/// Psi = J_0(theta_0)^{-1} I(theta_0) J_0(theta_0)^{-1}, the asymptotic
/// covariance of sqrt(n)(theta-hat - theta_0). Throws NonIdentifiable when J_0 is singular.
[[nodiscard]] Eigen::Matrix2d asymptotic_cov(const ModelParams& params, const GramSpectrum& spec,
                                             const Eigen::MatrixXd& X, const EffectLaws& laws);

/// Sandwich J^{-1} I J^{-1} for given pieces.
[[nodiscard]] Eigen::Matrix2d sandwich(const Eigen::Matrix2d& J, const Eigen::Matrix2d& info);

}  // namespace vcomp
