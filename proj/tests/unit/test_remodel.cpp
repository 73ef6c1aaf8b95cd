#include <doctest.h>

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "test_util.hpp"
#include "vcomp/errors.hpp"
#include "vcomp/matrix_io.hpp"
#include "vcomp/remodel.hpp"
#include "vcomp/spectral.hpp"

using namespace vcomp;
using Eigen::MatrixXd;
using Eigen::VectorXd;

TEST_CASE("designs") {
  const MatrixXd I = gen_design(5, 5, IdentityDesign{}, SeedSpec{1, 0});
  const auto spec = decompose_gram(I);
  CHECK((spec.lambdas - VectorXd::Ones(5)).cwiseAbs().maxCoeff() < 1e-12);

  const VectorXd lam = (VectorXd(4) << 3.0, 1.5, 0.5, 0.0).finished();
  for (Eigen::Index p : {3, 4, 9}) {
    VectorXd want = lam;
    if (p == 3) {
      const MatrixXd X = gen_design(4, p, FixedSpectrumDesign{lam}, SeedSpec{2, 0});
      CHECK(X.rows() == 4);
      CHECK(X.cols() == 3);
      CHECK((decompose_gram(X).lambdas - want).cwiseAbs().maxCoeff() < 1e-10);
      continue;
    }
    const MatrixXd X = gen_design(4, p, FixedSpectrumDesign{lam}, SeedSpec{2, 0});
    CHECK((decompose_gram(X).lambdas - want).cwiseAbs().maxCoeff() < 1e-10);
  }
  CHECK_THROWS_AS((void)gen_design(4, 2, FixedSpectrumDesign{lam}, SeedSpec{}), Error);
  CHECK_THROWS_AS((void)gen_design(3, 4, FixedSpectrumDesign{lam}, SeedSpec{}), Error);
  CHECK_THROWS_AS((void)gen_design(0, 4, GaussianIIDDesign{}, SeedSpec{}), Error);

  const MatrixXd G1 = gen_design(6, 8, GaussianIIDDesign{}, SeedSpec{3, 1});
  const MatrixXd G2 = gen_design(6, 8, GaussianIIDDesign{}, SeedSpec{3, 1});
  CHECK(G1 == G2);
  CHECK(G1 != gen_design(6, 8, GaussianIIDDesign{}, SeedSpec{3, 2}));
}

TEST_CASE("haar_orthogonal") {
  RandomStream rng(SeedSpec{5, 5});
  const MatrixXd Q = haar_orthogonal(7, rng);
  CHECK((Q.transpose() * Q - MatrixXd::Identity(7, 7)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("params validation") {
  const MatrixXd X = MatrixXd::Identity(3, 3);
  CHECK_THROWS_AS((void)gen_independent(X, ModelParams{0.0, 1.0}, {}, SeedSpec{}), Error);
  CHECK_THROWS_AS((void)gen_independent(X, ModelParams{1.0, -0.1}, {}, SeedSpec{}), Error);
  CHECK_THROWS_AS((void)gen_independent(MatrixXd(0, 3), ModelParams{}, {}, SeedSpec{}), Error);
}

TEST_CASE("eta0 = 0 gives pure noise") {
  const MatrixXd X = testing::random_gaussian(10, 20, 1);
  const Dataset d = gen_independent(X, ModelParams{2.0, 0.0}, {}, SeedSpec{9, 0});
  CHECK(d.y == d.eps_true);
  CHECK(d.beta_true.isZero(0.0));
}

TEST_CASE("determinism and y = X beta + eps") {
  const MatrixXd X = testing::random_gaussian(10, 20, 2);
  EffectLaws laws{SubGaussianLaw(LawFamily::Rademacher), SubGaussianLaw(LawFamily::UniformScaled)};
  const Dataset a = gen_independent(X, ModelParams{1.5, 0.7}, laws, SeedSpec{4, 4});
  const Dataset b = gen_independent(X, ModelParams{1.5, 0.7}, laws, SeedSpec{4, 4});
  CHECK(a.y == b.y);
  CHECK((a.y - X * a.beta_true - a.eps_true).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(!a.coupling.has_value());
  // Rademacher beta entries are +/- sqrt(tau0^2 / p).
  const double mag = std::sqrt(1.5 * 0.7 / 20.0);
  CHECK((a.beta_true.cwiseAbs().array() - mag).abs().maxCoeff() < 1e-14);
}

TEST_CASE("marginal variance of y") {
  // Identity design with p = n: Var(y_i) = tau0^2 + sigma0^2 = 2.
  const Eigen::Index n = 4;
  const MatrixXd X = gen_design(n, n, IdentityDesign{}, SeedSpec{});
  const int N = 100000;
  double s = 0.0, s2 = 0.0, s4 = 0.0;
  for (int r = 0; r < N; ++r) {
    const Dataset d = gen_independent(X, ModelParams{1.0, 1.0}, {}, SeedSpec{77, std::uint64_t(r)});
    s += d.y[0];
    s2 += d.y[0] * d.y[0];
    s4 += std::pow(d.y[0], 4);
  }
  const double var = s2 / N - (s / N) * (s / N);
  const double se = std::sqrt((s4 / N - (s2 / N) * (s2 / N)) / N);
  CHECK(std::abs(var - 2.0) < 5 * se);
}

TEST_CASE("coupling schemes") {
  const MatrixXd X = testing::random_gaussian(8, 12, 3);
  const ModelParams params{1.0, 1.0};
  const SeedSpec seed{6, 6};
  const Dataset base = gen_independent(X, params, {}, seed);

  const Dataset zero = gen_coupled(X, params, {}, AdditivePerturb{0.0}, seed);
  CHECK(zero.y == base.y);
  CHECK(zero.coupling->coupling_distance == 0.0);

  const Dataset none = gen_coupled(X, params, {}, NoCoupling{}, seed);
  CHECK(none.y == base.y);

  const Dataset add = gen_coupled(X, params, {}, AdditivePerturb{0.5}, seed);
  CHECK(add.beta_true == base.beta_true);
  CHECK(add.eps_true == base.eps_true);
  CHECK(add.coupling->coupling_distance ==
        doctest::Approx(0.5 * add.coupling->perturbation_norm).epsilon(1e-14));
  CHECK((add.y - X * add.coupling->beta_tilde - add.eps_true).cwiseAbs().maxCoeff() < 1e-12);

  const Dataset all = gen_coupled(X, params, {}, SparseZero{1.0}, seed);
  CHECK(all.coupling->beta_tilde.isZero(0.0));
  CHECK(all.y == all.eps_true);
  CHECK(all.coupling->coupling_distance == doctest::Approx(base.beta_true.norm()));

  const Dataset half = gen_coupled(X, params, {}, SparseZero{0.5}, seed);
  Eigen::Index zeros = 0;
  for (Eigen::Index j = 0; j < 12; ++j) {
    if (half.coupling->beta_tilde[j] == 0.0) ++zeros;
    else CHECK(half.coupling->beta_tilde[j] == base.beta_true[j]);
  }
  CHECK(zeros == 6);

  CHECK_THROWS_AS((void)gen_coupled(X, params, {}, AdditivePerturb{-1.0}, seed), Error);
  CHECK_THROWS_AS((void)gen_coupled(X, params, {}, SparseZero{1.5}, seed), Error);
}

TEST_CASE("additive coupling covariance") {
  // Cov(beta~_j, beta_j) = tau0^2 / p and Var(beta~_j) = (1 + delta^2) tau0^2 / p.
  const Eigen::Index p = 5;
  const double delta = 0.8, unit = 1.0 / double(p);
  const ModelParams params{1.0, 1.0};
  const int N = 200000;
  Eigen::MatrixXd sxy = MatrixXd::Zero(p, p), syy = MatrixXd::Zero(p, p);
  for (int r = 0; r < N; ++r) {
    const SeedSpec s{31, std::uint64_t(r)};
    const Effects fx = draw_effects(1, p, params, {}, s);
    const CouplingSpec c = couple(fx.beta, params, AdditivePerturb{delta}, s);
    sxy += c.beta_tilde * fx.beta.transpose();
    syy += c.beta_tilde * c.beta_tilde.transpose();
  }
  sxy /= N;
  syy /= N;
  const double tol = 5.0 * std::sqrt((1 + delta * delta) * 2.0 / N) * unit;
  for (Eigen::Index i = 0; i < p; ++i)
    for (Eigen::Index j = 0; j < p; ++j) {
      CHECK(std::abs(sxy(i, j) - (i == j ? unit : 0.0)) < tol);
      CHECK(std::abs(syy(i, j) - (i == j ? (1 + delta * delta) * unit : 0.0)) < 2 * tol);
    }
}

TEST_CASE("export_dataset") {
  const auto dir = testing::temp_dir("remodel_export");
  const MatrixXd X = testing::random_gaussian(4, 6, 7);
  const Dataset d = gen_coupled(X, ModelParams{1.2, 0.4}, {}, SparseZero{0.5}, SeedSpec{8, 1});
  export_dataset(d, dir / "sub");
  CHECK((io::read_csv_matrix(dir / "sub" / "X.csv") - X).cwiseAbs().maxCoeff() == 0.0);
  CHECK((io::read_csv_vector(dir / "sub" / "y.csv") - d.y).cwiseAbs().maxCoeff() == 0.0);
  std::ifstream in(dir / "sub" / "truth.json");
  const auto truth = nlohmann::json::parse(in);
  CHECK(truth["params"]["sigma0_sq"].get<double>() == 1.2);
  CHECK(truth["coupling"]["scheme"] == "sparse_zero");
  CHECK(truth["n"] == 4);
  CHECK(truth["p"] == 6);
}
