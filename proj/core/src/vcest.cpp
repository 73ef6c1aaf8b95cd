#include "vcomp/vcest.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/LU>

#include <json.hpp>

#include "vcomp/errors.hpp"
#include "vcomp/qform.hpp"

namespace vcomp {

using Eigen::ArrayXd;
using Eigen::Index;
using Eigen::Matrix2d;
using Eigen::MatrixXd;
using Eigen::Vector2d;
using Eigen::VectorXd;

namespace {

void check_eta(double eta_sq) {
  require(std::isfinite(eta_sq) && eta_sq >= 0.0, ErrorKind::InvalidArgument,
          "eta^2 must be finite and >= 0");
}

void check_lambdas(const VectorXd& lambdas) {
  require(lambdas.size() >= 1, ErrorKind::EmptyInput, "empty spectrum");
  require(lambdas.allFinite() && (lambdas.array() >= 0.0).all(), ErrorKind::InvalidArgument,
          "eigenvalues must be finite and >= 0");
}

ArrayXd denom(const VectorXd& lambdas, double eta_sq) {
  return eta_sq * lambdas.array() + 1.0;
}

double eta_of_t(double t) { return t / (1.0 - t); }

}  // namespace

ScoreState::ScoreState(const GramSpectrum& spec, const VectorXd& y) {
  require(y.size() == spec.n, ErrorKind::DimensionMismatch, "y length must equal n");
  require(y.allFinite(), ErrorKind::InvalidArgument, "y must be finite");
  lambdas_ = spec.lambdas;
  y_check_ = spec.U.transpose() * y;
  y_sq_ = y_check_.array().square();
}

ScoreState::ScoreState(VectorXd lambdas, VectorXd y_check)
    : lambdas_(std::move(lambdas)), y_check_(std::move(y_check)) {
  check_lambdas(lambdas_);
  require(lambdas_.size() == y_check_.size(), ErrorKind::DimensionMismatch,
          "lambdas and y_check must have equal length");
  require(y_check_.allFinite(), ErrorKind::InvalidArgument, "y_check must be finite");
  y_sq_ = y_check_.array().square();
}

double sigma_star_sq(const ScoreState& state, double eta_sq) {
  check_eta(eta_sq);
  return (state.y_check_sq() / denom(state.lambdas(), eta_sq)).mean();
}

double sigma0_sq_of(double eta_sq, const ModelParams& params, const VectorXd& lambdas) {
  check_eta(eta_sq);
  check_lambdas(lambdas);
  params.validate();
  return params.sigma0_sq *
         (denom(lambdas, params.eta0_sq) / denom(lambdas, eta_sq)).mean();
}

double loglik(const ScoreState& state, const Theta& theta) {
  check_eta(theta.eta_sq);
  require(std::isfinite(theta.sigma_sq) && theta.sigma_sq > 0.0, ErrorKind::InvalidArgument,
          "sigma^2 must be > 0");
  const ArrayXd D = denom(state.lambdas(), theta.eta_sq);
  return -0.5 * std::log(theta.sigma_sq) - 0.5 * D.log().mean() -
         (state.y_check_sq() / D).mean() / (2.0 * theta.sigma_sq);
}

double profile_loglik(const ScoreState& state, double eta_sq) {
  check_eta(eta_sq);
  const ArrayXd D = denom(state.lambdas(), eta_sq);
  const double s2 = (state.y_check_sq() / D).mean();
  if (!(s2 > 0.0)) return -std::numeric_limits<double>::infinity();
  return -0.5 * std::log(s2) - 0.5 * D.log().mean() - 0.5;
}

double pop_profile_loglik(double eta_sq, const ModelParams& params, const VectorXd& lambdas) {
  const double s2 = sigma0_sq_of(eta_sq, params, lambdas);
  return -0.5 * std::log(s2) - 0.5 * denom(lambdas, eta_sq).log().mean() - 0.5;
}

double profile_score(const ScoreState& state, double eta_sq) {
  check_eta(eta_sq);
  const ArrayXd l = state.lambdas().array();
  const ArrayXd D = denom(state.lambdas(), eta_sq);
  const double s2 = (state.y_check_sq() / D).mean();
  return (l * state.y_check_sq() / D.square()).mean() - s2 * (l / D).mean();
}

double profile_score_derivative(const ScoreState& state, double eta_sq) {
  check_eta(eta_sq);
  const ArrayXd l = state.lambdas().array();
  const ArrayXd& y2 = state.y_check_sq();
  const ArrayXd D = denom(state.lambdas(), eta_sq);
  const double s2 = (y2 / D).mean();
  const double a = (l * y2 / D.square()).mean();
  const double b = (l / D).mean();
  return -2.0 * (l.square() * y2 / D.cube()).mean() + a * b + s2 * (l.square() / D.square()).mean();
}

double pop_profile_score(double eta_sq, const ModelParams& params, const VectorXd& lambdas) {
  check_eta(eta_sq);
  check_lambdas(lambdas);
  params.validate();
  const ArrayXd l = lambdas.array();
  const ArrayXd D = denom(lambdas, eta_sq);
  const ArrayXd D0 = denom(lambdas, params.eta0_sq);
  return params.sigma0_sq * ((l * D0 / D.square()).mean() - (l / D).mean() * (D0 / D).mean());
}

double pop_profile_score_pairwise(double eta_sq, const ModelParams& params,
                                  const VectorXd& lambdas) {
  check_eta(eta_sq);
  check_lambdas(lambdas);
  params.validate();
  const Index n = lambdas.size();
  const ArrayXd D2 = denom(lambdas, eta_sq).square();
  double acc = 0.0;
  for (Index i = 0; i < n; ++i) {
    for (Index j = i + 1; j < n; ++j) {
      const double d = lambdas[i] - lambdas[j];
      acc += d * d / (D2[i] * D2[j]);
    }
  }
  // Off-diagonal pairs counted once above, twice in the full double sum.
  return params.sigma0_sq * (params.eta0_sq - eta_sq) * acc / (static_cast<double>(n) * n);
}

bool is_identifiable(const VectorXd& lambdas) {
  check_lambdas(lambdas);
  const double l1 = lambdas.maxCoeff();
  return eigvar(lambdas) >= 1e-10 * (l1 + 1.0) * (l1 + 1.0);
}

Vector2d score(const ScoreState& state, const Theta& theta) {
  check_eta(theta.eta_sq);
  require(theta.sigma_sq > 0.0, ErrorKind::InvalidArgument, "sigma^2 must be > 0");
  const ArrayXd l = state.lambdas().array();
  const ArrayXd& y2 = state.y_check_sq();
  const ArrayXd D = denom(state.lambdas(), theta.eta_sq);
  const double s = theta.sigma_sq;
  Vector2d out;
  out[0] = -0.5 / s + (y2 / D).mean() / (2.0 * s * s);
  out[1] = -0.5 * (l / D).mean() + (l * y2 / D.square()).mean() / (2.0 * s);
  return out;
}

Matrix2d hessian(const ScoreState& state, const Theta& theta) {
  check_eta(theta.eta_sq);
  require(theta.sigma_sq > 0.0, ErrorKind::InvalidArgument, "sigma^2 must be > 0");
  const ArrayXd l = state.lambdas().array();
  const ArrayXd& y2 = state.y_check_sq();
  const ArrayXd D = denom(state.lambdas(), theta.eta_sq);
  const double s = theta.sigma_sq;
  Matrix2d J;
  J(0, 0) = 0.5 / (s * s) - (y2 / D).mean() / (s * s * s);
  J(0, 1) = -(l * y2 / D.square()).mean() / (2.0 * s * s);
  J(1, 0) = J(0, 1);
  J(1, 1) = 0.5 * (l.square() / D.square()).mean() - (l.square() * y2 / D.cube()).mean() / s;
  return J;
}

Matrix2d expected_hessian(const Theta& theta, const ModelParams& params, const VectorXd& lambdas) {
  check_lambdas(lambdas);
  params.validate();
  // E ycheck_i^2 = sigma0^2 (eta0^2 lambda_i + 1).
  const ArrayXd ey2 = params.sigma0_sq * denom(lambdas, params.eta0_sq);
  return hessian(ScoreState(lambdas, ey2.sqrt().matrix()), theta);
}

double expected_hessian_det_pairwise(const ModelParams& params, const VectorXd& lambdas) {
  check_lambdas(lambdas);
  params.validate();
  const Index n = lambdas.size();
  const ArrayXd D2 = denom(lambdas, params.eta0_sq).square();
  double acc = 0.0;
  for (Index i = 0; i < n; ++i) {
    for (Index j = i + 1; j < n; ++j) {
      const double d = lambdas[i] - lambdas[j];
      acc += d * d / (D2[i] * D2[j]);
    }
  }
  const double s4 = params.sigma0_sq * params.sigma0_sq;
  return 2.0 * acc / (8.0 * s4 * static_cast<double>(n) * n);
}

Matrix2d gaussian_fisher(const ModelParams& params, const VectorXd& lambdas) {
  check_lambdas(lambdas);
  params.validate();
  const ArrayXd l = lambdas.array();
  const ArrayXd D = denom(lambdas, params.eta0_sq);
  const double s = params.sigma0_sq;
  Matrix2d I;
  I(0, 0) = 0.5 / (s * s);
  I(0, 1) = (l / D).mean() / (2.0 * s);
  I(1, 0) = I(0, 1);
  I(1, 1) = 0.5 * (l.square() / D.square()).mean();
  return I;
}

FitResult fit_mle(const ScoreState& state, const FitOptions& options) {
  require(options.grid >= 3, ErrorKind::InvalidArgument, "grid must have >= 3 points");
  require(options.t_cap > 0.0 && options.t_cap < 1.0, ErrorKind::InvalidArgument,
          "t_cap must lie in (0, 1)");
  require(options.golden_width > 0.0, ErrorKind::InvalidArgument, "golden_width must be > 0");
  require(state.n() >= 2, ErrorKind::EmptyInput, "need n >= 2");
  if (!(state.y_check_sq() > 0.0).any()) raise(ErrorKind::Degenerate, "y is identically zero");

  FitResult res;
  const double h0 = profile_score(state, 0.0);
  res.tol_score = 1e-8 * (1.0 + std::abs(h0));

  const int G = options.grid;
  std::vector<double> ts(G), vals(G);
  int best = 0;
  for (int j = 0; j < G; ++j) {
    ts[j] = options.t_cap * j / (G - 1);
    const double eta = eta_of_t(ts[j]);
    vals[j] = profile_loglik(state, eta);
    if (!std::isfinite(vals[j])) raise(ErrorKind::Numeric, "profile likelihood is not finite");
    if (options.keep_trace) res.eta_grid_trace.emplace_back(eta, vals[j]);
    if (vals[j] > vals[best]) best = j;
  }

  auto finish = [&](double eta) {
    res.theta_hat = {sigma_star_sq(state, eta), eta};
    res.score_at_hat = profile_score(state, eta);
  };

  if (!is_identifiable(state.lambdas())) {
    // l_* is flat in eta^2 up to rounding; the smallest maximiser is 0.
    res.identifiability_flag = true;
    res.boundary_flag = true;
    finish(0.0);
    return res;
  }

  if (best == 0 && h0 <= 0.0) {
    res.boundary_flag = true;
    finish(0.0);
  } else {
    double a = ts[std::max(best - 1, 0)];
    double b = ts[std::min(best + 1, G - 1)];
    const auto f = [&](double t) { return profile_loglik(state, eta_of_t(t)); };
    const double r = 0.5 * (std::sqrt(5.0) - 1.0);
    double c = b - r * (b - a), d = a + r * (b - a);
    double fc = f(c), fd = f(d);
    while (b - a > options.golden_width) {
      if (fc >= fd) {
        b = d; d = c; fd = fc;
        c = b - r * (b - a); fc = f(c);
      } else {
        a = c; c = d; fc = fd;
        d = a + r * (b - a); fd = f(d);
      }
    }
    double t_best = 0.5 * (a + b);
    double f_best = f(t_best);
    // Keep any grid point that beats the refined bracket (e.g. the cap itself).
    if (vals[best] > f_best) { t_best = ts[best]; f_best = vals[best]; }

    // Safeguarded Newton on H_* inside the golden bracket, widened by a grid cell.
    double lo = eta_of_t(ts[std::max(best - 1, 0)]);
    double hi = eta_of_t(ts[std::min(best + 1, G - 1)]);
    double eta = eta_of_t(t_best);
    double h = profile_score(state, eta);
    // Iterates past tol_score until the step stalls; the bracket keeps it safe.
    for (int it = 0; it < options.newton_max_iter && h != 0.0; ++it) {
      if (h > 0.0) lo = std::max(lo, eta); else hi = std::min(hi, eta);
      const double dh = profile_score_derivative(state, eta);
      double next = (std::isfinite(dh) && dh != 0.0) ? eta - h / dh : 0.5 * (lo + hi);
      if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
      if (std::abs(next - eta) <= 4e-16 * (1.0 + eta)) break;
      eta = next;
      h = profile_score(state, eta);
      ++res.newton_iters;
    }
    double eta_hat = eta_of_t(t_best);
    if (profile_loglik(state, eta) >= f_best) eta_hat = eta;
    finish(eta_hat);
    if (best == G - 1 && res.score_at_hat > 0.0) res.cap_flag = true;
  }

  if (options.compute_psi && !res.boundary_flag && !res.cap_flag) {
    const ModelParams plug{res.theta_hat.sigma_sq, res.theta_hat.eta_sq};
    const Matrix2d I = gaussian_fisher(plug, state.lambdas());
    if (std::abs(I.determinant()) > 0.0) res.psi_hat = I.inverse();
  }
  return res;
}

std::string fit_result_json(const FitResult& fit, bool include_trace) {
  nlohmann::ordered_json j;
  j["sigma2_hat"] = fit.theta_hat.sigma_sq;
  j["eta2_hat"] = fit.theta_hat.eta_sq;
  j["boundary"] = fit.boundary_flag;
  j["identifiable"] = !fit.identifiability_flag;
  j["cap"] = fit.cap_flag;
  j["newton_iters"] = fit.newton_iters;
  j["score_at_hat"] = fit.score_at_hat;
  if (fit.psi_hat) {
    const Matrix2d& P = *fit.psi_hat;
    j["psi"] = {P(0, 0), P(0, 1), P(1, 0), P(1, 1)};
  } else {
    j["psi"] = nullptr;
  }
  if (include_trace) {
    auto& t = j["trace"] = nlohmann::ordered_json::array();
    for (const auto& [eta, ll] : fit.eta_grid_trace) t.push_back({eta, ll});
  }
  return j.dump(2) + "\n";
}

VectorXd ScoreForms::zeta(const VectorXd& beta, const VectorXd& eps, const ModelParams& params) {
  params.validate();
  require(params.eta0_sq > 0.0, ErrorKind::Degenerate, "zeta needs eta0^2 > 0");
  const double p = static_cast<double>(beta.size());
  VectorXd z(beta.size() + eps.size());
  z.head(beta.size()) = beta * (std::sqrt(p) / std::sqrt(params.tau0_sq()));
  z.tail(eps.size()) = eps / std::sqrt(params.sigma0_sq);
  return z;
}

namespace {

struct ScoreWeights {
  ArrayXd d1, d2;
  double c1, c2, scale;
};

ScoreWeights score_weights(const ModelParams& params, const VectorXd& lambdas) {
  const double n = static_cast<double>(lambdas.size());
  const double s = params.sigma0_sq;
  const double rn = std::sqrt(n);
  const ArrayXd l = lambdas.array();
  const ArrayXd D = denom(lambdas, params.eta0_sq);
  ScoreWeights w;
  w.d1 = (1.0 / (2.0 * s * s * rn)) / D;
  w.d2 = (1.0 / (2.0 * s * rn)) * l / D.square();
  w.c1 = rn / (2.0 * s);
  w.c2 = (l / D).sum() / (2.0 * rn);
  w.scale = rn;
  return w;
}

// W = [tau0 / sqrt(p) X^T U ; sigma0 U], so that M_k = W diag(d_k) W^T.
MatrixXd score_basis(const ModelParams& params, const GramSpectrum& spec, const MatrixXd& X) {
  require(X.rows() == spec.n && X.cols() == spec.p, ErrorKind::DimensionMismatch,
          "X does not match the spectrum");
  MatrixXd W(spec.p + spec.n, spec.n);
  W.topRows(spec.p) = (std::sqrt(params.tau0_sq() / static_cast<double>(spec.p))) *
                      (X.transpose() * spec.U);
  W.bottomRows(spec.n) = std::sqrt(params.sigma0_sq) * spec.U;
  return W;
}

}  // namespace

ScoreForms score_qf_matrices(const ModelParams& params, const GramSpectrum& spec,
                             const MatrixXd& X) {
  params.validate();
  require(params.eta0_sq > 0.0, ErrorKind::Degenerate,
          "score forms need eta0^2 > 0 (beta is degenerate otherwise)");
  const ScoreWeights w = score_weights(params, spec.lambdas);
  const MatrixXd W = score_basis(params, spec, X);
  ScoreForms out;
  out.M1 = W * w.d1.matrix().asDiagonal() * W.transpose();
  out.M2 = W * w.d2.matrix().asDiagonal() * W.transpose();
  out.M1 = 0.5 * (out.M1 + out.M1.transpose()).eval();
  out.M2 = 0.5 * (out.M2 + out.M2.transpose()).eval();
  out.c1 = w.c1;
  out.c2 = w.c2;
  out.scale = w.scale;
  return out;
}

VectorXd zeta_fourth_moments(Index n, Index p, const EffectLaws& laws) {
  VectorXd mu4(p + n);
  mu4.head(p).setConstant(laws.beta.moments().mu4);
  mu4.tail(n).setConstant(laws.eps.moments().mu4);
  return mu4;
}

Matrix2d score_covariance(const ModelParams& params, const GramSpectrum& spec, const MatrixXd& X,
                          const EffectLaws& laws) {
  const ScoreForms f = score_qf_matrices(params, spec, X);
  const VectorXd mu4 = zeta_fourth_moments(spec.n, spec.p, laws);
  const QuadraticForm q1(f.M1), q2(f.M2);
  Matrix2d C;
  C(0, 0) = qf_covariance(q1, q1, mu4);
  C(1, 1) = qf_covariance(q2, q2, mu4);
  C(0, 1) = C(1, 0) = qf_covariance(q1, q2, mu4);
  return C;
}

Matrix2d score_covariance_spectral(const ModelParams& params, const GramSpectrum& spec,
                                   const MatrixXd& X, const EffectLaws& laws) {
  params.validate();
  require(params.eta0_sq > 0.0, ErrorKind::Degenerate, "score covariance needs eta0^2 > 0");
  const ScoreWeights w = score_weights(params, spec.lambdas);
  const ArrayXd D = denom(spec.lambdas, params.eta0_sq);
  // W^T W = sigma0^2 diag(D), so tr(M_k M_l) = sigma0^4 sum d_k d_l D^2.
  const double s4 = params.sigma0_sq * params.sigma0_sq;
  const ArrayXd D2 = D.square();
  Matrix2d C;
  C(0, 0) = 2.0 * s4 * (w.d1 * w.d1 * D2).sum();
  C(1, 1) = 2.0 * s4 * (w.d2 * w.d2 * D2).sum();
  C(0, 1) = 2.0 * s4 * (w.d1 * w.d2 * D2).sum();

  const double kb = laws.beta.moments().mu4 - 3.0;
  const double ke = laws.eps.moments().mu4 - 3.0;
  if (kb != 0.0 || ke != 0.0) {
    const MatrixXd W2 = score_basis(params, spec, X).array().square().matrix();
    const ArrayXd g1 = (W2 * w.d1.matrix()).array();
    const ArrayXd g2 = (W2 * w.d2.matrix()).array();
    ArrayXd kap(spec.p + spec.n);
    kap.head(spec.p).setConstant(kb);
    kap.tail(spec.n).setConstant(ke);
    C(0, 0) += (kap * g1 * g1).sum();
    C(1, 1) += (kap * g2 * g2).sum();
    C(0, 1) += (kap * g1 * g2).sum();
  }
  C(1, 0) = C(0, 1);
  return C;
}

Matrix2d sandwich(const Matrix2d& J, const Matrix2d& info) {
  const double det = J.determinant();
  const double scale = J.cwiseAbs().maxCoeff();
  if (!std::isfinite(det) || std::abs(det) <= 1e-14 * scale * scale)
    raise(ErrorKind::NonIdentifiable, "expected Hessian is singular");
  const Matrix2d Ji = J.inverse();
  Matrix2d psi = Ji * info * Ji;
  return 0.5 * (psi + psi.transpose());
}

Matrix2d asymptotic_cov(const ModelParams& params, const GramSpectrum& spec, const MatrixXd& X,
                        const EffectLaws& laws) {
  if (!is_identifiable(spec.lambdas))
    raise(ErrorKind::NonIdentifiable, "eigenvalue variance is numerically zero");
  const Matrix2d J =
      expected_hessian(Theta{params.sigma0_sq, params.eta0_sq}, params, spec.lambdas);
  return sandwich(J, score_covariance_spectral(params, spec, X, laws));
}

}  // namespace vcomp
