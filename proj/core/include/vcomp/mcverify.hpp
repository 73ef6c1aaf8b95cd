#pragma once

// Monte Carlo experiments that check the shape of the estimator's
// large-sample behaviour: rates, tail envelopes, normal approximation and
// robustness to dependent effects. Absolute constants in the underlying
// bounds are unknown, so every experiment tests monotonicity, slopes or
// log-linearity rather than bound values.
//
// Replicate r of cell c draws from SeedSpec{master_seed, mix(c, r)}, results
// land in preallocated slots and are reduced in index order, so reports do not
// depend on the worker count.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "vcomp/qform.hpp"
#include "vcomp/randsrc.hpp"
#include "vcomp/remodel.hpp"

namespace vcomp {

enum class ExperimentKind { Consistency, TailEnvelope, Normality, Coupling, SteinDiscrepancy };

[[nodiscard]] std::string_view to_string(ExperimentKind kind) noexcept;
/// "consistency", "tail", "normality", "coupling" or "stein" (case-insensitive,
/// the enum spellings are accepted too).
[[nodiscard]] ExperimentKind experiment_kind_from_name(std::string_view name);

/// f(x) = prod_j tanh((x_j - b_j) / a_j) over the coordinates in `support`.
/// Coordinates outside the support do not enter f.
class SmoothTestFn {
 public:
  /// Product over coordinates 0..a.size()-1; `shift` defaults to 0.
  static SmoothTestFn tanh_product(std::vector<double> scale, std::vector<double> shift = {});
  /// f = c; all derivative seminorms are 0.
  static SmoothTestFn constant(double c);

  [[nodiscard]] const std::string& name() const noexcept { return name_; }
  [[nodiscard]] double operator()(const Eigen::VectorXd& x) const;
  /// Sup-norms |f|_0 .. |f|_3, each the max over multi-indices of that order.
  [[nodiscard]] const std::array<double, 4>& norms() const noexcept { return norms_; }
  [[nodiscard]] DerivativeNorms derivative_norms() const noexcept { return {norms_[2], norms_[3]}; }
  /// Highest coordinate index read plus one.
  [[nodiscard]] Eigen::Index arity() const noexcept { return static_cast<Eigen::Index>(scale_.size()); }
  [[nodiscard]] const std::vector<double>& scale() const noexcept { return scale_; }
  [[nodiscard]] const std::vector<double>& shift() const noexcept { return shift_; }
  [[nodiscard]] bool is_constant() const noexcept { return scale_.empty(); }

  /// E f(Z) with Z ~ N(0, cov); cov must be at least arity() x arity().
  /// Quadrature on the leading arity() x arity() block.
  [[nodiscard]] double gaussian_expectation(const Eigen::MatrixXd& cov) const;

 private:
  std::string name_;
  std::vector<double> scale_;
  std::vector<double> shift_;
  double constant_ = 0.0;
  std::array<double, 4> norms_{};
};

struct TailOptions {
  std::vector<double> r_grid{0.2, 0.3, 0.4, 0.5, 0.6};
  double primary_r = 0.4;   ///< threshold used by the gates
  double radius = 10.0;     ///< eta^2 in [0, radius]
  int grid = 201;           ///< sup_deviation grid size
};

struct CouplingOptions {
  std::vector<double> delta_grid{0.0, 1.0};
  /// When true the perturbation at sample size n is delta / n.
  bool scale_inverse_n = true;
  /// Optional SparseZero fraction; adds one misspecified cell per n.
  std::optional<double> sparse_fraction;
};

struct SteinOptions {
  int K = 1;
  double eig_lo = 0.5;
  double eig_hi = 1.5;
  /// "equispaced" (Q_k = d^{-1/2} O diag(mu) O^T) or "identity" (Q_k = I).
  std::string matrix = "equispaced";
};

struct ExperimentPlan {
  ExperimentKind kind = ExperimentKind::Consistency;
  std::vector<Eigen::Index> n_grid;   ///< sample sizes, or dimensions d for Stein
  int replicates = 500;
  EffectLaws laws;
  ModelParams params;
  DesignSpec design = GaussianIIDDesign{};
  double p_ratio = 2.0;               ///< p = round(p_ratio * n)
  std::vector<SmoothTestFn> test_functions;
  std::uint64_t master_seed = 0;
  int workers = 1;

  TailOptions tail;
  CouplingOptions coupling;
  SteinOptions stein;

  /// Checks the invariants (replicates >= 100, n_grid strictly increasing, ...).
  void validate() const;
  /// Canonical JSON text of every field that influences results (not workers).
  [[nodiscard]] std::string canonical_json() const;
  /// FNV-1a of canonical_json().
  [[nodiscard]] std::uint64_t hash() const;
};

/// One estimate with its Monte Carlo standard error.
struct ReportCell {
  Eigen::Index n = 0;
  std::vector<std::pair<std::string, double>> params;  ///< cell parameters beyond n
  std::string quantity;
  double estimate = 0.0;
  double stderr_ = 0.0;
  std::string gate;         ///< gate this cell feeds, empty if none
  bool pass = true;
  bool reliable = true;
};

struct Gate {
  std::string name;
  std::string rule;
  double value = 0.0;
  double stderr_ = 0.0;
  bool pass = false;
};

struct ExperimentReport {
  ExperimentKind kind = ExperimentKind::Consistency;
  std::string header;
  std::uint64_t master_seed = 0;
  std::uint64_t plan_hash = 0;
  std::vector<ReportCell> cells;
  std::vector<Gate> gates;
  std::vector<std::pair<std::string, double>> summary;
  std::vector<std::string> notes;
  double runtime_seconds = 0.0;  ///< kept out of report.json

  [[nodiscard]] bool pass() const;
  [[nodiscard]] const Gate* gate(std::string_view name) const;
  [[nodiscard]] std::optional<double> summary_value(std::string_view key) const;

  /// Deterministic JSON (runtime excluded).
  [[nodiscard]] std::string to_json() const;
  /// Columns n, params, quantity, estimate, stderr, gate, pass.
  [[nodiscard]] std::string cells_csv() const;
  /// Writes report.json, cells.csv and timing.json into dir.
  void write(const std::filesystem::path& dir) const;
};

/// Median ||theta-hat - theta_0|| per n and the log-log OLS slope.
/// Throws NonIdentifiable when more than 1% of a cell's fits are flagged.
[[nodiscard]] ExperimentReport run_consistency(const ExperimentPlan& plan);
/// Empirical P(sup_{eta^2 in [0, R]} |sigma_*^2 - sigma_0^2| > r) per (n, r).
[[nodiscard]] ExperimentReport run_tail(const ExperimentPlan& plan);
/// |E f(sqrt(n)(theta-hat - theta_0)) - E f(Psi^{1/2} z)| per n plus Wald coverage.
[[nodiscard]] ExperimentReport run_normality(const ExperimentPlan& plan);
/// Estimation error under coupled effects vs the independent case.
[[nodiscard]] ExperimentReport run_coupling(const ExperimentPlan& plan);
/// |E f(w) - E f(V^{1/2} z)| and napprox_rate per dimension d.
[[nodiscard]] ExperimentReport run_stein(const ExperimentPlan& plan);

/// Dispatch on plan.kind.
[[nodiscard]] ExperimentReport run_experiment(const ExperimentPlan& plan);

/// Order-statistic summary of a sample median.
struct MedianEstimate {
  double median = 0.0;
  double stderr_ = 0.0;
};
/// Standard error from the distribution-free 95% rank interval
/// ranks N/2 -+ 0.98 sqrt(N), divided by 2 * 1.96.
[[nodiscard]] MedianEstimate median_with_stderr(std::vector<double> values);

struct WilsonInterval {
  double lo = 0.0;
  double hi = 0.0;
};
[[nodiscard]] WilsonInterval wilson_interval(long successes, long trials, double z = 1.96);

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
  double slope_stderr = 0.0;  ///< propagated from per-point stderrs, or OLS residual form
};
/// Ordinary least squares; when y_stderr is non-empty the slope stderr is the
/// delta-method sum over points, otherwise the residual-based one.
[[nodiscard]] LinearFit ols_fit(const std::vector<double>& x, const std::vector<double>& y,
                                const std::vector<double>& y_stderr = {});

/// Runs body(i) for i in [0, count) on `workers` threads (1 = inline).
void parallel_for(std::size_t count, int workers, const std::function<void(std::size_t)>& body);

/// Seed of replicate r in cell c.
[[nodiscard]] SeedSpec replicate_seed(std::uint64_t master, std::uint64_t cell, std::uint64_t r);

}  // namespace vcomp
