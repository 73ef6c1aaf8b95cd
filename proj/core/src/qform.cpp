#include "vcomp/qform.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include <Eigen/Eigenvalues>

#include "vcomp/errors.hpp"

namespace vcomp {
namespace {

constexpr Eigen::Index kDenseEigenLimit = 2048;
constexpr double kPowerTol = 1e-10;
constexpr int kPowerMaxIter = 10000;

// Dominant eigenvalue of a symmetric PSD operator by power iteration.
double power_iteration(const Eigen::MatrixXd& S) {
  Eigen::VectorXd v = Eigen::VectorXd::Ones(S.rows()).normalized();
  double value = 0.0;
  for (int it = 0; it < kPowerMaxIter; ++it) {
    Eigen::VectorXd w = S * v;
    const double next = v.dot(w);
    const double norm = w.norm();
    if (norm == 0.0) return 0.0;
    v = w / norm;
    if (std::abs(next - value) <= kPowerTol * std::max(1.0, std::abs(next))) return next;
    value = next;
  }
  return value;
}

void check_mu4(const Eigen::VectorXd& mu4, Eigen::Index d) {
  require(mu4.size() == d, ErrorKind::DimensionMismatch, "mu4 length must match the form");
  require(mu4.minCoeff() >= 1.0, ErrorKind::InvalidArgument, "fourth moments must be >= 1");
}

void check_symmetric_law(const LawMoments& m) {
  require(m.mu3 == 0.0, ErrorKind::Unsupported,
          "quadratic-form covariance is implemented for mu3 = 0 laws only");
  require(m.mu4 >= 1.0, ErrorKind::InvalidArgument, "fourth moment must be >= 1");
}

}  // namespace

EigenRange symmetric_eigen_range(const Eigen::MatrixXd& S) {
  if (S.rows() == 0) return {0.0, 0.0};
  if (S.rows() <= kDenseEigenLimit) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(S, Eigen::EigenvaluesOnly);
    if (eig.info() != Eigen::Success) raise(ErrorKind::Numeric, "eigensolver did not converge");
    return {eig.eigenvalues().minCoeff(), eig.eigenvalues().maxCoeff()};
  }
  // Gershgorin shift makes both problems PSD.
  const double shift = S.cwiseAbs().rowwise().sum().maxCoeff();
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(S.rows(), S.cols());
  const double top = power_iteration(S + shift * I) - shift;
  const double bottom = shift - power_iteration(shift * I - S);
  return {bottom, top};
}

QuadraticForm::QuadraticForm(Eigen::MatrixXd Q) {
  require(Q.rows() == Q.cols(), ErrorKind::DimensionMismatch, "quadratic form must be square");
  require(Q.rows() >= 1, ErrorKind::EmptyInput, "quadratic form must be non-empty");
  require(Q.allFinite(), ErrorKind::InvalidArgument, "quadratic form has non-finite entries");
  const double scale = std::max(1.0, Q.cwiseAbs().maxCoeff());
  require((Q - Q.transpose()).cwiseAbs().maxCoeff() <= 1e-10 * scale,
          ErrorKind::InvalidArgument, "quadratic form is not symmetric");
  Q_ = 0.5 * (Q + Q.transpose());
  cache_norms();
  require(min_eig_ >= -1e-8 * std::max(op_norm_, 1e-300), ErrorKind::InvalidArgument,
          "quadratic form is not positive semidefinite");
  min_eig_ = std::max(min_eig_, 0.0);
}

QuadraticForm::QuadraticForm(Eigen::MatrixXd Q, Trusted) : Q_(std::move(Q)) { cache_norms(); }

void QuadraticForm::cache_norms() {
  diag_ = Q_.diagonal();
  trace_ = diag_.sum();
  trace_sq_ = Q_.squaredNorm();
  hs_norm_ = std::sqrt(trace_sq_);
  if (Q_.isDiagonal(0.0)) {
    min_eig_ = diag_.minCoeff();
    op_norm_ = diag_.cwiseAbs().maxCoeff();
    return;
  }
  const EigenRange range = symmetric_eigen_range(Q_);
  min_eig_ = range.min;
  op_norm_ = std::max(std::abs(range.min), std::abs(range.max));
}

QuadraticForm QuadraticForm::diagonal_part() const {
  return QuadraticForm(Eigen::MatrixXd(diag_.asDiagonal()), Trusted{});
}

double eval_qf(const QuadraticForm& qf, const Eigen::VectorXd& z) {
  require(z.size() == qf.dim(), ErrorKind::DimensionMismatch, "vector length must match the form");
  return (qf.matrix() * z).dot(z);
}

double qf_variance(const QuadraticForm& qf, const Eigen::VectorXd& mu4) {
  check_mu4(mu4, qf.dim());
  const Eigen::ArrayXd q2 = qf.diagonal().array().square();
  const double value = (mu4.array() * q2).sum() - 3.0 * q2.sum() + 2.0 * qf.trace_sq();
  return std::max(value, 0.0);
}

double qf_variance(const QuadraticForm& qf, const LawMoments& moments) {
  require(moments.mu4 >= 1.0, ErrorKind::InvalidArgument, "fourth moment must be >= 1");
  return qf_variance(qf, Eigen::VectorXd::Constant(qf.dim(), moments.mu4));
}

double qf_covariance(const QuadraticForm& a, const QuadraticForm& b, const Eigen::VectorXd& mu4) {
  require(a.dim() == b.dim(), ErrorKind::DimensionMismatch, "forms must share a dimension");
  check_mu4(mu4, a.dim());
  const double diag_term =
      ((mu4.array() - 3.0) * a.diagonal().array() * b.diagonal().array()).sum();
  // tr(AB) for symmetric A, B is the Frobenius inner product.
  const double cross = a.matrix().cwiseProduct(b.matrix()).sum();
  return diag_term + 2.0 * cross;
}

double qf_covariance(const QuadraticForm& a, const QuadraticForm& b, const LawMoments& moments) {
  check_symmetric_law(moments);
  return qf_covariance(a, b, Eigen::VectorXd::Constant(a.dim(), moments.mu4));
}

double sigma_k_sq(const QuadraticForm& qf, double gamma2) {
  require(gamma2 >= -2.0, ErrorKind::InvalidArgument, "excess kurtosis must be >= -2");
  return 2.0 * qf.trace_sq() + gamma2 * qf.diagonal().squaredNorm();
}

WVector::WVector(std::vector<QuadraticForm> qforms, const LawMoments& moments)
    : qforms_(std::move(qforms)) {
  require(!qforms_.empty(), ErrorKind::EmptyInput, "w-vector needs at least one form");
  check_symmetric_law(moments);
  const Eigen::Index d = qforms_.front().dim();
  for (const auto& q : qforms_) {
    require(q.dim() == d, ErrorKind::DimensionMismatch, "all forms must share a dimension");
    checks_.push_back(q.diagonal_part());
  }
  const Eigen::Index size = this->size();
  auto form = [&](Eigen::Index j) -> const QuadraticForm& {
    return (j % 2 == 0) ? qforms_[static_cast<std::size_t>(j / 2)]
                        : checks_[static_cast<std::size_t>(j / 2)];
  };
  cov_.resize(size, size);
  for (Eigen::Index a = 0; a < size; ++a)
    for (Eigen::Index b = a; b < size; ++b)
      cov_(a, b) = cov_(b, a) = qf_covariance(form(a), form(b), moments);
}

Eigen::VectorXd WVector::value(const Eigen::VectorXd& z) const {
  require(z.size() == dim(), ErrorKind::DimensionMismatch, "vector length must match the forms");
  Eigen::VectorXd out(size());
  const Eigen::ArrayXd z2 = z.array().square();
  for (std::size_t k = 0; k < qforms_.size(); ++k) {
    const double tr = qforms_[k].trace();
    out[static_cast<Eigen::Index>(2 * k)] = eval_qf(qforms_[k], z) - tr;
    out[static_cast<Eigen::Index>(2 * k + 1)] = (qforms_[k].diagonal().array() * z2).sum() - tr;
  }
  return out;
}

bool WVector::degenerate(double tol) const {
  return cov_.diagonal().maxCoeff() <= tol * std::max(1.0, cov_.cwiseAbs().maxCoeff());
}

WVector build_w(std::vector<QuadraticForm> qforms, const LawMoments& moments) {
  return WVector(std::move(qforms), moments);
}

double napprox_rate(Eigen::Index K, Eigen::Index d, double gamma, DerivativeNorms f_norms,
                    double max_op_norm) {
  require(K >= 1 && d >= 1, ErrorKind::InvalidArgument, "napprox_rate needs K, d >= 1");
  require(gamma >= 0.0 && f_norms.second >= 0.0 && f_norms.third >= 0.0 && max_op_norm >= 0.0,
          ErrorKind::InvalidArgument, "napprox_rate needs non-negative norms");
  const double k = static_cast<double>(K);
  const double dd = static_cast<double>(d);
  const double q = max_op_norm;
  const double first = std::pow(k, 1.5) * std::sqrt(dd) * f_norms.second * q * q;
  const double second = k * k * k * dd * f_norms.third * q * q * q;
  return std::pow(gamma + 1.0, 8) * (first + second);
}

double napprox_rate(const std::vector<QuadraticForm>& qforms, Eigen::Index d, double gamma,
                    DerivativeNorms f_norms) {
  require(!qforms.empty(), ErrorKind::EmptyInput, "napprox_rate needs at least one form");
  double q = 0.0;
  for (const auto& f : qforms) q = std::max(q, f.op_norm());
  return napprox_rate(static_cast<Eigen::Index>(qforms.size()), d, gamma, f_norms, q);
}

QFFamily::QFFamily(Eigen::MatrixXd V, Coefficients t, double lipschitz, double radius,
                   Eigen::Index K)
    : V_(std::move(V)), t_(std::move(t)), L_(lipschitz), R_(radius), K_(K) {
  require(V_.rows() >= 1 && V_.cols() >= 1, ErrorKind::EmptyInput, "V must be non-empty");
  require(static_cast<bool>(t_), ErrorKind::InvalidArgument, "coefficient function is empty");
  require(L_ > 0.0 && R_ > 0.0 && K_ >= 1, ErrorKind::InvalidArgument,
          "family needs L > 0, R > 0, K >= 1");
  col_sq_ = V_.colwise().squaredNorm().transpose();
  const Eigen::MatrixXd gram = V_.transpose() * V_;
  gram_norm_ = symmetric_eigen_range(gram).max;
}

Eigen::VectorXd QFFamily::coefficients(const Eigen::VectorXd& u) const {
  require(u.size() == K_, ErrorKind::DimensionMismatch, "parameter has the wrong dimension");
  require(u.minCoeff() >= 0.0 && u.maxCoeff() <= R_, ErrorKind::InvalidArgument,
          "parameter outside [0, R]^K");
  Eigen::VectorXd t = t_(u);
  require(t.size() == m(), ErrorKind::DimensionMismatch, "coefficient function returned wrong size");
  return t;
}

QFFamily resolvent_family(Eigen::MatrixXd V, Eigen::VectorXd lambdas, double radius) {
  require(lambdas.size() == V.cols(), ErrorKind::DimensionMismatch,
          "one eigenvalue per column of V");
  const double L = std::max(lambdas.maxCoeff(), 1e-300);
  auto t = [lambdas = std::move(lambdas)](const Eigen::VectorXd& u) -> Eigen::VectorXd {
    return (u[0] * lambdas.array() + 1.0).inverse().matrix();
  };
  return QFFamily(std::move(V), std::move(t), L, radius, 1);
}

QuadraticForm family_eval(const QFFamily& fam, const Eigen::VectorXd& u) {
  const Eigen::VectorXd t = fam.coefficients(u);
  Eigen::MatrixXd Q = fam.V() * t.asDiagonal() * fam.V().transpose();
  return QuadraticForm(std::move(Q));
}

double lipschitz_spot_check(const QFFamily& fam, int pairs, const SeedSpec& seed) {
  RandomStream rng(seed);
  double worst = 0.0;
  Eigen::VectorXd u(fam.K()), v(fam.K());
  for (int k = 0; k < pairs; ++k) {
    for (Eigen::Index j = 0; j < fam.K(); ++j) {
      u[j] = fam.radius() * rng.uniform();
      v[j] = fam.radius() * rng.uniform();
    }
    const double dist = (u - v).norm();
    if (dist == 0.0) continue;
    const double diff = (fam.coefficients(u) - fam.coefficients(v)).cwiseAbs().maxCoeff();
    worst = std::max(worst, diff / dist);
  }
  return worst;
}

SupDeviation sup_deviation_detail(const QFFamily& fam, const Eigen::VectorXd& z, int grid) {
  require(grid >= 2, ErrorKind::InvalidArgument, "grid needs at least 2 points per axis");
  require(fam.K() <= 2, ErrorKind::InvalidArgument, "grid search limited to K <= 2");
  require(z.size() == fam.dim(), ErrorKind::DimensionMismatch, "vector length must match V");

  // z^T Q(u) z - tr Q(u) = sum_i t_i(u) ((V^T z)_i^2 - ||v_i||^2)
  const Eigen::VectorXd centred =
      (fam.V().transpose() * z).array().square().matrix() - fam.column_sq_norms();

  SupDeviation out;
  out.argmax = Eigen::VectorXd::Zero(fam.K());
  const double step = fam.radius() / static_cast<double>(grid - 1);
  const int outer = fam.K() == 2 ? grid : 1;
  Eigen::VectorXd u(fam.K());
  for (int a = 0; a < grid; ++a) {
    for (int b = 0; b < outer; ++b) {
      u[0] = std::min(fam.radius(), step * a);
      if (fam.K() == 2) u[1] = std::min(fam.radius(), step * b);
      const double dev = std::abs(fam.coefficients(u).dot(centred));
      if (dev > out.value) {
        out.value = dev;
        out.argmax = u;
      }
    }
  }
  out.grid_error_bound = fam.lipschitz() * fam.radius() * std::sqrt(static_cast<double>(fam.K())) /
                         static_cast<double>(grid) * fam.gram_norm() * z.squaredNorm();
  return out;
}

double sup_deviation(const QFFamily& fam, const Eigen::VectorXd& z, int grid) {
  return sup_deviation_detail(fam, z, grid).value;
}

}  // namespace vcomp
