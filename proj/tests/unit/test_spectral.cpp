#include <doctest.h>

#include <cmath>
#include <fstream>

#include "test_util.hpp"
#include "vcomp/errors.hpp"
#include "vcomp/spectral.hpp"

using namespace vcomp;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

void check_invariants(const MatrixXd& X, const GramSpectrum& s) {
  const MatrixXd G = X * X.transpose() / static_cast<double>(X.cols());
  const MatrixXd R = s.U * s.lambdas.asDiagonal() * s.U.transpose();
  const double scale = std::max(G.norm(), 1e-300);
  CHECK((R - G).norm() / scale < 1e-8);
  CHECK((s.U.transpose() * s.U - MatrixXd::Identity(s.n, s.n)).cwiseAbs().maxCoeff() < 1e-8);
  for (Eigen::Index i = 1; i < s.n; ++i) CHECK(s.lambdas[i] <= s.lambdas[i - 1]);
  CHECK(s.lambdas.minCoeff() >= 0.0);
  CHECK(s.n0 <= std::min(s.n, s.p));
}

}  // namespace

TEST_CASE("identity design has unit spectrum") {
  const Eigen::Index n = 6;
  const MatrixXd X = std::sqrt(double(n)) * MatrixXd::Identity(n, n);
  const auto s = decompose_gram(X);
  CHECK((s.lambdas.array() - 1.0).abs().maxCoeff() < 1e-12);
  CHECK(s.n0 == n);
  check_invariants(X, s);
}

TEST_CASE("zero design") {
  const auto s = decompose_gram(MatrixXd::Zero(4, 3));
  CHECK(s.lambdas.isZero(0.0));
  CHECK(s.n0 == 0);
  CHECK_THROWS_AS((void)s.lambda_min_positive(), Error);
  CHECK_THROWS_AS((void)omega(s), Error);
}

TEST_CASE("random designs reconstruct on both code paths") {
  for (auto [n, p] : {std::pair{5, 8}, std::pair{8, 5}, std::pair{6, 6}, std::pair{30, 70}}) {
    CAPTURE(n);
    CAPTURE(p);
    const MatrixXd X = testing::random_gaussian(n, p, 100 + n + p);
    const auto s = decompose_gram(X);
    check_invariants(X, s);
    CHECK(s.n0 == std::min<Eigen::Index>(n, p));
  }
}

TEST_CASE("decompose_gram input checks") {
  MatrixXd X = testing::random_gaussian(3, 3, 1);
  X(1, 1) = std::nan("");
  CHECK_THROWS_AS((void)decompose_gram(X), Error);
  CHECK_THROWS_AS((void)decompose_gram(MatrixXd::Ones(1, 3)), Error);
}

TEST_CASE("eigvar") {
  CHECK(eigvar(VectorXd::Constant(5, 2.5)) == 0.0);
  CHECK(eigvar(VectorXd((VectorXd(2) << 2, 0).finished())) == doctest::Approx(1.0).epsilon(1e-15));
  const VectorXd l = (VectorXd(4) << 3, 1, 0, 0).finished();
  double m = 0.0;
  for (double v : l) m += v / 4;
  double var = 0.0;
  for (double v : l) var += (v - m) * (v - m) / 4;
  CHECK(eigvar(l) == doctest::Approx(var).epsilon(1e-14));
}

TEST_CASE("eigvar equals trace form computed from X") {
  const MatrixXd X = testing::random_gaussian(12, 20, 9);
  const MatrixXd G = X * X.transpose() / 20.0;
  const double t1 = G.trace() / 12.0, t2 = (G * G).trace() / 12.0;
  CHECK(testing::rel_close(eigvar(decompose_gram(X)), t2 - t1 * t1, 1e-8));
}

TEST_CASE("omega") {
  CHECK(omega(1.0, 1.0) == doctest::Approx(1.0 / 16).epsilon(1e-15));
  CHECK(omega(3.0, 0.5) == doctest::Approx(1.0 / 144).epsilon(1e-15));
  double prev = omega(1.0, 0.5);
  for (double l1 = 2.0; l1 < 100.0; l1 *= 2) {
    const double v = omega(l1, 0.5);
    CHECK(v < prev);
    prev = v;
  }
}

TEST_CASE("chi") {
  CHECK(chi(0.0, 1.0, 1.0) == doctest::Approx(1.0 / 128).epsilon(1e-15));
  CHECK(chi(1.0, 2.0, 0.3) > 0.0);
  CHECK(chi(2.0, 2.0, 0.3) < chi(1.0, 2.0, 0.3));
  const auto s = spectrum_from_eigenvalues((VectorXd(3) << 2, 1, 0).finished(), 5);
  CHECK(chi(0.5, s) == chi(0.5, 2.0, 1.0));
}

TEST_CASE("kappa") {
  CHECK(kappa(1.0, 1.0, spectrum_from_eigenvalues(VectorXd::Ones(4), 4)).value == 0.0);
  CHECK(kappa(2.0, 0.7, spectrum_from_eigenvalues(VectorXd::Constant(3, 1.7), 4)).value == 0.0);

  // Independent evaluation for lambda = (2, 0), n0 = 1, sigma0^2 = eta0^2 = 1.
  const auto s = spectrum_from_eigenvalues((VectorXd(2) << 2, 0).finished(), 2);
  REQUIRE(s.n0 == 1);
  const double v = 1.0, l1 = 2.0, ln0 = 2.0;
  double den = 1.0;
  for (int i = 0; i < 5; ++i) den *= 2.0;            // (sigma0^2 + 1)^5
  for (int i = 0; i < 12; ++i) den *= 2.0;           // (eta0^2 + 1)^12
  for (int i = 0; i < 18; ++i) den *= (l1 + 1.0);    // (l1 + 1)^18
  for (int i = 0; i < 8; ++i) den *= (1.0 / ln0 + 1.0);
  den *= (v + 1.0) * (v + 1.0);
  const double expected = v * v / den;
  const auto k = kappa(1.0, 1.0, s);
  CHECK(testing::rel_close(k.value, expected, 1e-12));
  CHECK(testing::rel_close(k.log_value, std::log(expected), 1e-12));
}

TEST_CASE("nu") {
  CHECK(testing::rel_close(nu(1.0, 1.0, 1.0, 1.0).value, std::ldexp(1.0, 52), 1e-12));
  CHECK(nu(1.0, 1.0, 1.0, 1.0).log_value == doctest::Approx(52 * std::log(2.0)).epsilon(1e-14));
  CHECK(nu(1.0, 1.0, 3.0, 1.0).value > nu(1.0, 1.0, 2.0, 1.0).value);
  CHECK_THROWS_AS((void)nu(1.0, 1.0, 1.0, 1e-13), Error);
  CHECK_THROWS_AS((void)nu(1.0, 0.0, 1.0, 1.0), Error);
  // Large spectra overflow the double range; the log stays finite.
  const auto big = nu(10.0, 10.0, 1e12, 0.5);
  CHECK(std::isfinite(big.log_value));
  CHECK(big.value == std::numeric_limits<double>::max());
}

TEST_CASE("functionals are permutation invariant") {
  const VectorXd l = testing::random_lambdas(9, 4);
  VectorXd r = l.reverse();
  CHECK(eigvar(r) == doctest::Approx(eigvar(l)).epsilon(1e-14));
  const auto a = spectrum_from_eigenvalues(l, 9);
  const auto b = spectrum_from_eigenvalues(r, 9);
  CHECK(omega(a) == omega(b));
  CHECK(chi(0.4, a) == chi(0.4, b));
  CHECK(kappa(1.2, 0.4, a).value == kappa(1.2, 0.4, b).value);
  CHECK(nu(1.2, 0.4, a).value == nu(1.2, 0.4, b).value);
}

TEST_CASE("numerical rank rule") {
  const VectorXd l = (VectorXd(4) << 1.0, 0.5, 1e-20, 0.0).finished();
  CHECK(positive_count(l, 4, 4) == 2);
  const MatrixXd X = testing::random_gaussian(10, 3, 5);
  CHECK(decompose_gram(X).n0 == 3);
}

TEST_CASE("spectrum csv") {
  const auto dir = testing::temp_dir("spec_csv");
  write_spectrum_csv(dir / "s.csv", spectrum_from_eigenvalues((VectorXd(2) << 2, 0.5).finished(), 3));
  std::ifstream in(dir / "s.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "index,lambda");
  std::getline(in, line);
  CHECK(line == "1,2");
}
