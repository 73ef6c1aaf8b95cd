#include "vcomp/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <vector>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include "vcomp/errors.hpp"
#include "vcomp/matrix_io.hpp"

namespace vcomp {
namespace {

constexpr double kNuVarianceFloor = 1e-12;

// Reorders (values, vectors) so values are descending.
void sort_descending(Eigen::VectorXd& values, Eigen::MatrixXd& vectors) {
  const Eigen::Index n = values.size();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return values[a] > values[b]; });
  Eigen::VectorXd v(n);
  Eigen::MatrixXd u(vectors.rows(), n);
  for (Eigen::Index k = 0; k < n; ++k) {
    v[k] = values[order[static_cast<std::size_t>(k)]];
    u.col(k) = vectors.col(order[static_cast<std::size_t>(k)]);
  }
  values = std::move(v);
  vectors = std::move(u);
}

}  // namespace

double GramSpectrum::lambda_min_positive() const {
  require(n0 >= 1, ErrorKind::Degenerate, "spectrum has no positive eigenvalue (n0 = 0)");
  return lambdas[n0 - 1];
}

Eigen::Index positive_count(const Eigen::VectorXd& sorted_lambdas, Eigen::Index n,
                            Eigen::Index p) {
  if (sorted_lambdas.size() == 0 || !(sorted_lambdas[0] > 0.0)) return 0;
  const double threshold = static_cast<double>(std::max(n, p)) *
                           std::numeric_limits<double>::epsilon() * sorted_lambdas[0];
  Eigen::Index count = 0;
  while (count < sorted_lambdas.size() && sorted_lambdas[count] > threshold) ++count;
  return count;
}

GramSpectrum decompose_gram(const Eigen::MatrixXd& X) {
  const Eigen::Index n = X.rows(), p = X.cols();
  require(n >= 2, ErrorKind::InvalidArgument, "decompose_gram needs n >= 2");
  require(p >= 1, ErrorKind::InvalidArgument, "decompose_gram needs p >= 1");
  require(X.allFinite(), ErrorKind::InvalidArgument, "X has non-finite entries");

  GramSpectrum spec;
  spec.n = n;
  spec.p = p;
  if (p > n) {
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(n, n);
    gram.selfadjointView<Eigen::Lower>().rankUpdate(X, 1.0 / static_cast<double>(p));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram.selfadjointView<Eigen::Lower>());
    if (eig.info() != Eigen::Success) raise(ErrorKind::Numeric, "eigensolver did not converge");
    spec.lambdas = eig.eigenvalues();
    spec.U = eig.eigenvectors();
  } else {
    Eigen::BDCSVD<Eigen::MatrixXd> svd(X, Eigen::ComputeFullU);
    if (svd.info() != Eigen::Success) raise(ErrorKind::Numeric, "SVD did not converge");
    spec.lambdas = Eigen::VectorXd::Zero(n);
    spec.lambdas.head(svd.singularValues().size()) =
        svd.singularValues().array().square() / static_cast<double>(p);
    spec.U = svd.matrixU();
  }
  spec.lambdas = spec.lambdas.cwiseMax(0.0);
  sort_descending(spec.lambdas, spec.U);
  spec.n0 = positive_count(spec.lambdas, n, p);
  return spec;
}

GramSpectrum spectrum_from_eigenvalues(Eigen::VectorXd lambdas, Eigen::Index p) {
  const Eigen::Index n = lambdas.size();
  require(n >= 2, ErrorKind::InvalidArgument, "spectrum needs n >= 2");
  require(p >= 1, ErrorKind::InvalidArgument, "spectrum needs p >= 1");
  require(lambdas.allFinite() && lambdas.minCoeff() >= 0.0, ErrorKind::InvalidArgument,
          "eigenvalues must be finite and non-negative");
  GramSpectrum spec;
  spec.n = n;
  spec.p = p;
  spec.U = Eigen::MatrixXd::Identity(n, n);
  spec.lambdas = std::move(lambdas);
  sort_descending(spec.lambdas, spec.U);
  spec.n0 = positive_count(spec.lambdas, n, p);
  return spec;
}

double eigvar(const Eigen::VectorXd& lambdas) {
  // centred two-pass form; the raw moment difference cancels badly for large lambda
  const double mean = lambdas.mean();
  return std::max(0.0, (lambdas.array() - mean).square().mean());
}

double eigvar(const GramSpectrum& spec) { return eigvar(spec.lambdas); }

double omega(double lambda_max, double lambda_min_positive) {
  require(lambda_min_positive > 0.0, ErrorKind::Degenerate, "omega needs lambda_{n0} > 0");
  const double a = lambda_max + 1.0;
  const double b = 1.0 / lambda_min_positive + 1.0;
  return 1.0 / (a * a * b * b);
}

double omega(const GramSpectrum& spec) {
  return omega(spec.lambda_max(), spec.lambda_min_positive());
}

double chi(double eta0_sq, double lambda_max, double lambda_min_positive) {
  require(eta0_sq >= 0.0, ErrorKind::InvalidArgument, "chi needs eta0^2 >= 0");
  require(lambda_min_positive > 0.0, ErrorKind::Degenerate, "chi needs lambda_{n0} > 0");
  const double e = std::pow(eta0_sq + 1.0, 4);
  const double l = std::pow(lambda_max + 1.0, 4);
  const double b = 1.0 / lambda_min_positive + 1.0;
  return 1.0 / (2.0 * e * l * b * b);
}

double chi(double eta0_sq, const GramSpectrum& spec) {
  return chi(eta0_sq, spec.lambda_max(), spec.lambda_min_positive());
}

LogScaled from_log(double log_value) {
  if (log_value == -std::numeric_limits<double>::infinity()) return {log_value, 0.0};
  const double hi = std::log(std::numeric_limits<double>::max());
  if (log_value >= hi) return {log_value, std::numeric_limits<double>::max()};
  return {log_value, std::exp(log_value)};
}

LogScaled kappa(double sigma0_sq, double eta0_sq, double lambda_max, double lambda_min_positive,
                double eig_variance) {
  require(sigma0_sq > 0.0 && eta0_sq >= 0.0, ErrorKind::InvalidArgument,
          "kappa needs sigma0^2 > 0 and eta0^2 >= 0");
  require(lambda_min_positive > 0.0, ErrorKind::Degenerate, "kappa needs lambda_{n0} > 0");
  require(eig_variance >= 0.0, ErrorKind::InvalidArgument, "eigenvalue variance must be >= 0");
  if (eig_variance == 0.0 || eta0_sq == 0.0) return {-std::numeric_limits<double>::infinity(), 0.0};
  const double log_kappa = 2.0 * std::log(sigma0_sq) + 8.0 * std::log(eta0_sq) +
                           2.0 * std::log(eig_variance) - 5.0 * std::log1p(sigma0_sq) -
                           12.0 * std::log1p(eta0_sq) - 18.0 * std::log1p(lambda_max) -
                           8.0 * std::log1p(1.0 / lambda_min_positive) -
                           2.0 * std::log1p(eig_variance);
  return from_log(log_kappa);
}

LogScaled kappa(double sigma0_sq, double eta0_sq, const GramSpectrum& spec) {
  return kappa(sigma0_sq, eta0_sq, spec.lambda_max(), spec.lambda_min_positive(), eigvar(spec));
}

LogScaled nu(double sigma0_sq, double eta0_sq, double lambda_max, double eig_variance) {
  require(sigma0_sq > 0.0, ErrorKind::InvalidArgument, "nu needs sigma0^2 > 0");
  require(eta0_sq > 0.0, ErrorKind::Degenerate, "nu is infinite at eta0^2 = 0");
  require(eig_variance >= kNuVarianceFloor, ErrorKind::Degenerate,
          "nu is infinite: eigenvalue variance below 1e-12");
  const double log_nu = 9.0 * std::log1p(sigma0_sq) + 16.0 * std::log1p(eta0_sq) +
                        24.0 * std::log1p(lambda_max) - 6.0 * std::log(sigma0_sq) -
                        std::log(eta0_sq) + 3.0 * std::log1p(eig_variance) -
                        3.0 * std::log(eig_variance);
  return from_log(log_nu);
}

LogScaled nu(double sigma0_sq, double eta0_sq, const GramSpectrum& spec) {
  return nu(sigma0_sq, eta0_sq, spec.lambda_max(), eigvar(spec));
}

void write_spectrum_csv(const std::filesystem::path& path, const GramSpectrum& spec) {
  std::ofstream out(path);
  if (!out) raise(ErrorKind::Io, "cannot write '" + path.string() + "'");
  out << "index,lambda\n";
  for (Eigen::Index i = 0; i < spec.lambdas.size(); ++i)
    out << (i + 1) << ',' << io::format_double(spec.lambdas[i]) << '\n';
}

}  // namespace vcomp
