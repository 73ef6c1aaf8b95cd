#include "vcomp/remodel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/QR>
#include <json.hpp>

#include "vcomp/errors.hpp"
#include "vcomp/matrix_io.hpp"

namespace vcomp {
namespace {

constexpr std::uint64_t kBetaTag = 0;
constexpr std::uint64_t kEpsTag = 1;
constexpr std::uint64_t kPerturbTag = 2;
constexpr std::uint64_t kSparsityTag = 3;

// p x p frame with orthonormal rows restricted to the first r rows.
Eigen::MatrixXd orthonormal_rows(Eigen::Index r, Eigen::Index p, RandomStream& rng) {
  Eigen::MatrixXd G(p, r);
  rng.fill_normal(G);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(G);
  Eigen::MatrixXd Q = qr.householderQ() * Eigen::MatrixXd::Identity(p, r);
  // sign fix so the frame is Haar distributed
  const auto& R = qr.matrixQR();
  for (Eigen::Index j = 0; j < r; ++j)
    if (R(j, j) < 0) Q.col(j) *= -1.0;
  return Q.transpose();
}

}  // namespace

void ModelParams::validate() const {
  require(std::isfinite(sigma0_sq) && sigma0_sq > 0.0, ErrorKind::InvalidArgument,
          "sigma0^2 must be finite and > 0");
  require(std::isfinite(eta0_sq) && eta0_sq >= 0.0, ErrorKind::InvalidArgument,
          "eta0^2 must be finite and >= 0");
}

Eigen::MatrixXd haar_orthogonal(Eigen::Index n, RandomStream& rng) {
  return orthonormal_rows(n, n, rng).transpose();
}

Eigen::MatrixXd gen_design(Eigen::Index n, Eigen::Index p, const DesignSpec& design,
                           const SeedSpec& seed) {
  require(n >= 1 && p >= 1, ErrorKind::InvalidArgument, "design needs n, p >= 1");
  RandomStream rng(seed);
  if (std::holds_alternative<GaussianIIDDesign>(design)) {
    Eigen::MatrixXd X(n, p);
    rng.fill_normal(X);
    return X;
  }
  if (std::holds_alternative<IdentityDesign>(design)) {
    Eigen::MatrixXd X = Eigen::MatrixXd::Zero(n, p);
    X.diagonal().setConstant(std::sqrt(static_cast<double>(p)));
    return X;
  }
  const auto& lambdas = std::get<FixedSpectrumDesign>(design).lambdas;
  require(lambdas.size() == n, ErrorKind::InvalidArgument, "need one eigenvalue per row");
  require(lambdas.allFinite() && lambdas.minCoeff() >= 0.0, ErrorKind::InvalidArgument,
          "eigenvalues must be non-negative");
  const Eigen::Index r = std::min(n, p);
  require(n <= p || lambdas.tail(n - r).isZero(0.0), ErrorKind::InvalidArgument,
          "at most p eigenvalues can be positive");
  // X = U_r diag(sqrt(p lambda)) W, W with orthonormal rows
  const Eigen::MatrixXd U = haar_orthogonal(n, rng);
  const Eigen::MatrixXd W = orthonormal_rows(r, p, rng);
  const Eigen::VectorXd scale = (static_cast<double>(p) * lambdas.head(r).array()).sqrt();
  return U.leftCols(r) * scale.asDiagonal() * W;
}

Effects draw_effects(Eigen::Index n, Eigen::Index p, const ModelParams& params,
                     const EffectLaws& laws, const SeedSpec& seed) {
  params.validate();
  Effects out;
  out.beta = std::sqrt(params.tau0_sq() / static_cast<double>(p)) *
             sample_vector(laws.beta, p, seed.child(kBetaTag));
  out.eps = std::sqrt(params.sigma0_sq) * sample_vector(laws.eps, n, seed.child(kEpsTag));
  return out;
}

CouplingSpec couple(const Eigen::VectorXd& beta, const ModelParams& params,
                    const CouplingScheme& scheme, const SeedSpec& seed) {
  CouplingSpec out;
  out.scheme = scheme;
  out.beta_tilde = beta;
  const Eigen::Index p = beta.size();
  if (const auto* add = std::get_if<AdditivePerturb>(&scheme)) {
    require(std::isfinite(add->delta) && add->delta >= 0.0, ErrorKind::InvalidArgument,
            "perturbation delta must be >= 0");
    Eigen::VectorXd g = std::sqrt(params.tau0_sq() / static_cast<double>(p)) *
                        sample_vector(SubGaussianLaw(LawFamily::Gaussian), p,
                                      seed.child(kPerturbTag));
    out.perturbation_norm = g.norm();
    out.beta_tilde = beta + add->delta * g;
  } else if (const auto* sparse = std::get_if<SparseZero>(&scheme)) {
    require(sparse->fraction >= 0.0 && sparse->fraction <= 1.0, ErrorKind::InvalidArgument,
            "sparsity fraction must be in [0, 1]");
    const auto zeros = static_cast<Eigen::Index>(std::llround(sparse->fraction * static_cast<double>(p)));
    std::vector<Eigen::Index> order(static_cast<std::size_t>(p));
    std::iota(order.begin(), order.end(), 0);
    RandomStream rng(seed.child(kSparsityTag));
    // Fisher-Yates over the first `zeros` slots
    for (Eigen::Index i = 0; i < zeros; ++i) {
      const auto j = i + static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(p - i)));
      std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
      out.beta_tilde[order[static_cast<std::size_t>(i)]] = 0.0;
    }
  }
  out.coupling_distance = (out.beta_tilde - beta).norm();
  return out;
}

Dataset gen_independent(Eigen::MatrixXd X, const ModelParams& params, const EffectLaws& laws,
                        const SeedSpec& seed) {
  require(X.rows() >= 1 && X.cols() >= 1, ErrorKind::EmptyInput, "X must be non-empty");
  Effects fx = draw_effects(X.rows(), X.cols(), params, laws, seed);
  Dataset data;
  data.y = X * fx.beta + fx.eps;
  data.X = std::move(X);
  data.beta_true = std::move(fx.beta);
  data.eps_true = std::move(fx.eps);
  data.params = params;
  data.laws = laws;
  data.seed = seed;
  return data;
}

Dataset gen_coupled(Eigen::MatrixXd X, const ModelParams& params, const EffectLaws& laws,
                    const CouplingScheme& scheme, const SeedSpec& seed) {
  Dataset data = gen_independent(std::move(X), params, laws, seed);
  CouplingSpec c = couple(data.beta_true, params, scheme, seed);
  if (!std::holds_alternative<NoCoupling>(scheme)) data.y = data.X * c.beta_tilde + data.eps_true;
  data.coupling = std::move(c);
  return data;
}

namespace {

nlohmann::ordered_json coupling_json(const CouplingSpec& c) {
  nlohmann::ordered_json j;
  if (std::holds_alternative<NoCoupling>(c.scheme)) {
    j["scheme"] = "none";
  } else if (const auto* a = std::get_if<AdditivePerturb>(&c.scheme)) {
    j["scheme"] = "additive";
    j["delta"] = a->delta;
  } else {
    j["scheme"] = "sparse_zero";
    j["fraction"] = std::get<SparseZero>(c.scheme).fraction;
  }
  j["coupling_distance"] = c.coupling_distance;
  j["perturbation_norm"] = c.perturbation_norm;
  return j;
}

}  // namespace

void export_dataset(const Dataset& data, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) raise(ErrorKind::Io, "cannot create '" + dir.string() + "': " + ec.message());
  io::write_csv_matrix(dir / "X.csv", data.X);
  io::write_csv_vector(dir / "y.csv", data.y);

  nlohmann::ordered_json truth;
  truth["params"] = {{"sigma0_sq", data.params.sigma0_sq}, {"eta0_sq", data.params.eta0_sq}};
  truth["laws"] = {{"beta", std::string(data.laws.beta.name())},
                   {"eps", std::string(data.laws.eps.name())}};
  truth["n"] = data.X.rows();
  truth["p"] = data.X.cols();
  truth["coupling"] = data.coupling ? coupling_json(*data.coupling) : nlohmann::ordered_json(nullptr);
  truth["seed"] = {{"master_seed", data.seed.master_seed}, {"stream_id", data.seed.stream_id}};
  std::ofstream out(dir / "truth.json");
  if (!out) raise(ErrorKind::Io, "cannot write truth.json");
  out << truth.dump(2) << '\n';
}

}  // namespace vcomp
