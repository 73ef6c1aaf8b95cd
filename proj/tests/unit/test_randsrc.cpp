#include <doctest.h>

#include <cmath>
#include <vector>

#include "test_util.hpp"
#include "vcomp/errors.hpp"
#include "vcomp/randsrc.hpp"

using namespace vcomp;

namespace {

const SubGaussianLaw kLaws[] = {SubGaussianLaw(LawFamily::Gaussian),
                                SubGaussianLaw(LawFamily::Rademacher),
                                SubGaussianLaw(LawFamily::UniformScaled)};

double law_moment(const LawMoments& m, int k) {
  switch (k) {
    case 3: return m.mu3;
    case 4: return m.mu4;
    case 6: return m.mu6;
    default: return m.mu8;
  }
}

}  // namespace

TEST_CASE("closed-form moments") {
  const auto g = law_moments(SubGaussianLaw(LawFamily::Gaussian));
  CHECK(g.mu3 == 0.0);
  CHECK(g.mu4 == 3.0);
  CHECK(g.mu6 == 15.0);
  CHECK(g.mu8 == 105.0);
  const auto r = law_moments(SubGaussianLaw(LawFamily::Rademacher));
  CHECK(r.mu3 == 0.0);
  CHECK(r.mu4 == 1.0);
  CHECK(r.mu6 == 1.0);
  CHECK(r.mu8 == 1.0);
  const auto u = law_moments(SubGaussianLaw(LawFamily::UniformScaled));
  CHECK(u.mu4 == doctest::Approx(9.0 / 5.0).epsilon(1e-15));
  CHECK(u.mu6 == doctest::Approx(27.0 / 7.0).epsilon(1e-15));
  CHECK(u.mu8 == doctest::Approx(9.0).epsilon(1e-15));
}

TEST_CASE("uniform moments from direct integration") {
  // E x^k for x uniform on [-a, a] is a^k / (k + 1).
  const double a = std::sqrt(3.0);
  const auto u = law_moments(SubGaussianLaw(LawFamily::UniformScaled));
  for (int k : {4, 6, 8})
    CHECK(law_moment(u, k) == doctest::Approx(std::pow(a, k) / (k + 1)).epsilon(1e-14));
}

TEST_CASE("excess kurtosis and Jensen bound") {
  for (const auto& law : kLaws) {
    const auto m = law.moments();
    CHECK(m.mu4 >= 1.0);
    CHECK(m.excess_kurtosis() >= -2.0);
    if (law.family() != LawFamily::Rademacher) CHECK(m.excess_kurtosis() > -2.0);
  }
  CHECK(SubGaussianLaw(LawFamily::Rademacher).moments().excess_kurtosis() == -2.0);
}

TEST_CASE("law names round-trip") {
  for (const auto& law : kLaws) CHECK(SubGaussianLaw::from_name(law.name()) == law);
  CHECK(SubGaussianLaw::from_name("uniform").family() == LawFamily::UniformScaled);
  CHECK_THROWS_AS((void)SubGaussianLaw::from_name("cauchy"), Error);
  for (const auto& law : kLaws) CHECK(law.gamma() > 0.0);
}

TEST_CASE("sample_vector supports") {
  const auto r = sample_vector(SubGaussianLaw(LawFamily::Rademacher), 4, SeedSpec{3, 1});
  for (Eigen::Index i = 0; i < r.size(); ++i) CHECK((r[i] == 1.0 || r[i] == -1.0));
  const auto u = sample_vector(SubGaussianLaw(LawFamily::UniformScaled), 1, SeedSpec{3, 2});
  CHECK(std::abs(u[0]) <= std::sqrt(3.0));
  const auto u2 = sample_vector(SubGaussianLaw(LawFamily::UniformScaled), 10000, SeedSpec{9, 2});
  CHECK(u2.cwiseAbs().maxCoeff() <= std::sqrt(3.0));
}

TEST_CASE("sample_vector rejects d = 0") {
  try {
    (void)sample_vector(SubGaussianLaw(), 0, SeedSpec{1, 1});
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::EmptyInput);
  }
}

TEST_CASE("Gaussian fourth moment within 3 stderr") {
  const Eigen::Index N = 1000000;
  const auto x = sample_vector(SubGaussianLaw(LawFamily::Gaussian), N, SeedSpec{2024, 0});
  const Eigen::ArrayXd x4 = x.array().pow(4);
  const double mean = x4.mean();
  const double se = std::sqrt((x4 - mean).square().sum() / (N - 1) / N);
  CHECK(std::abs(mean - 3.0) < 3.0 * se);
}

TEST_CASE("empirical moments within 5 stderr for every law") {
  const Eigen::Index N = 1000000;
  for (const auto& law : kLaws) {
    CAPTURE(law.name());
    const auto x = sample_vector(law, N, SeedSpec{77, 5});
    const Eigen::ArrayXd a = x.array();
    auto check = [&](const Eigen::ArrayXd& v, double target) {
      const double m = v.mean();
      const double se = std::sqrt((v - m).square().sum() / (N - 1) / N);
      CHECK(std::abs(m - target) <= 5.0 * se + 1e-15);
    };
    check(a, 0.0);
    check(a.square(), 1.0);
    const auto mom = law.moments();
    for (int k : {3, 4, 6, 8}) {
      CAPTURE(k);
      check(a.pow(k), law_moment(mom, k));
    }
  }
}

TEST_CASE("streams are deterministic and independent") {
  const SubGaussianLaw g(LawFamily::Gaussian);
  const auto a = sample_vector(g, 1000, SeedSpec{5, 1});
  const auto b = sample_vector(g, 1000, SeedSpec{5, 1});
  CHECK(a == b);
  const Eigen::Index N = 200000;
  const auto x = sample_vector(g, N, SeedSpec{5, 1});
  const auto y = sample_vector(g, N, SeedSpec{5, 2});
  const auto z = sample_vector(g, N, SeedSpec{6, 1});
  auto corr = [](const Eigen::VectorXd& u, const Eigen::VectorXd& v) {
    const Eigen::ArrayXd cu = u.array() - u.mean(), cv = v.array() - v.mean();
    return (cu * cv).sum() / std::sqrt(cu.square().sum() * cv.square().sum());
  };
  CHECK(std::abs(corr(x, y)) < 5.0 / std::sqrt(double(N)));
  CHECK(std::abs(corr(x, z)) < 5.0 / std::sqrt(double(N)));
  CHECK(SeedSpec{5, 1}.child(0) == SeedSpec{5, 1}.child(0));
  CHECK(!(SeedSpec{5, 1}.child(0) == SeedSpec{5, 1}.child(1)));
}

TEST_CASE("below stays in range") {
  RandomStream rng(SeedSpec{1, 2});
  std::vector<int> counts(7, 0);
  for (int i = 0; i < 70000; ++i) {
    const auto v = rng.below(7);
    REQUIRE(v < 7);
    ++counts[v];
  }
  for (int c : counts) CHECK(std::abs(c - 10000) < 5 * std::sqrt(10000.0 * 6.0 / 7.0));
}
