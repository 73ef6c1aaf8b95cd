#pragma once

// Data generation for the random-effects model y = X beta + eps with
// Var(beta_j) = sigma0^2 eta0^2 / p and Var(eps_i) = sigma0^2, plus coupled
// variants y~ = X beta~ + eps where beta~ is a dependent perturbation of an
// independent beta.

#include <filesystem>
#include <optional>
#include <variant>

#include <Eigen/Core>

#include "vcomp/randsrc.hpp"

namespace vcomp {

/// theta_0 = (sigma0^2, eta0^2).
struct ModelParams {
  double sigma0_sq = 1.0;
  double eta0_sq = 1.0;

  /// Var(beta_j) * p = sigma0^2 * eta0^2.
  [[nodiscard]] double tau0_sq() const noexcept { return sigma0_sq * eta0_sq; }
  void validate() const;
};

struct GaussianIIDDesign {};
/// X = sqrt(p) [I 0] (or its transpose block when n > p).
struct IdentityDesign {};
/// X whose p^{-1} X X^T has exactly the requested eigenvalues.
struct FixedSpectrumDesign {
  Eigen::VectorXd lambdas;
};
using DesignSpec = std::variant<GaussianIIDDesign, IdentityDesign, FixedSpectrumDesign>;

[[nodiscard]] Eigen::MatrixXd gen_design(Eigen::Index n, Eigen::Index p, const DesignSpec& design,
                                         const SeedSpec& seed);

/// Haar-distributed orthogonal n x n matrix.
[[nodiscard]] Eigen::MatrixXd haar_orthogonal(Eigen::Index n, RandomStream& rng);

struct NoCoupling {};
/// beta~ = beta + delta * g, g an independent copy of the effect distribution.
struct AdditivePerturb {
  double delta = 0.0;
};
/// beta~ = beta with a random fraction of coordinates set to zero.
struct SparseZero {
  double fraction = 0.0;
};
using CouplingScheme = std::variant<NoCoupling, AdditivePerturb, SparseZero>;

struct CouplingSpec {
  CouplingScheme scheme = NoCoupling{};
  Eigen::VectorXd beta_tilde;
  double coupling_distance = 0.0;  ///< ||beta~ - beta||
  double perturbation_norm = 0.0;  ///< ||g|| for AdditivePerturb, 0 otherwise
};

struct EffectLaws {
  SubGaussianLaw beta{LawFamily::Gaussian};
  SubGaussianLaw eps{LawFamily::Gaussian};
};

struct Dataset {
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
  Eigen::VectorXd beta_true;  ///< the independent effects
  Eigen::VectorXd eps_true;
  ModelParams params;
  EffectLaws laws;
  SeedSpec seed;
  std::optional<CouplingSpec> coupling;
};

/// Independent random-effects data. Draws use seed.child(0) for beta and
/// seed.child(1) for eps.
[[nodiscard]] Dataset gen_independent(Eigen::MatrixXd X, const ModelParams& params,
                                      const EffectLaws& laws, const SeedSpec& seed);

/// Coupled data: beta and eps are drawn exactly as in gen_independent, then
/// y uses beta~ built from `scheme` with seed.child(2) (perturbation) or
/// seed.child(3) (sparsity pattern).
[[nodiscard]] Dataset gen_coupled(Eigen::MatrixXd X, const ModelParams& params,
                                  const EffectLaws& laws, const CouplingScheme& scheme,
                                  const SeedSpec& seed);

/// Independent draws of (beta, eps) only, for callers that keep X fixed and
/// project y themselves.
struct Effects {
  Eigen::VectorXd beta;
  Eigen::VectorXd eps;
};
[[nodiscard]] Effects draw_effects(Eigen::Index n, Eigen::Index p, const ModelParams& params,
                                   const EffectLaws& laws, const SeedSpec& seed);

/// Applies a coupling scheme to independent effects.
[[nodiscard]] CouplingSpec couple(const Eigen::VectorXd& beta, const ModelParams& params,
                                  const CouplingScheme& scheme, const SeedSpec& seed);

/// Writes X.csv, y.csv and truth.json into `dir` (created if missing).
void export_dataset(const Dataset& data, const std::filesystem::path& dir);

}  // namespace vcomp
