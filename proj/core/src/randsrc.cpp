#include "vcomp/randsrc.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "vcomp/errors.hpp"

namespace vcomp {

SubGaussianLaw SubGaussianLaw::from_name(std::string_view name) {
  if (name == "gaussian") return SubGaussianLaw(LawFamily::Gaussian);
  if (name == "rademacher") return SubGaussianLaw(LawFamily::Rademacher);
  if (name == "uniform") return SubGaussianLaw(LawFamily::UniformScaled);
  raise(ErrorKind::InvalidArgument, "unknown law '" + std::string(name) +
                                        "' (expected gaussian | rademacher | uniform)");
}

std::string_view SubGaussianLaw::name() const noexcept {
  switch (family_) {
    case LawFamily::Gaussian: return "gaussian";
    case LawFamily::Rademacher: return "rademacher";
    case LawFamily::UniformScaled: return "uniform";
  }
  return "gaussian";
}

double SubGaussianLaw::gamma() const noexcept {
  switch (family_) {
    case LawFamily::Gaussian: return 0.8;      // sqrt(2/pi) = 0.7979
    case LawFamily::Rademacher: return 1.0;    // exact
    case LawFamily::UniformScaled: return 0.87;  // sqrt(3)/2 = 0.8660
  }
  return 1.0;
}

LawMoments SubGaussianLaw::moments() const noexcept {
  switch (family_) {
    case LawFamily::Gaussian: return {0.0, 3.0, 15.0, 105.0};
    case LawFamily::Rademacher: return {0.0, 1.0, 1.0, 1.0};
    // E x^k = 3^{k/2} / (k + 1) for x uniform on [-sqrt3, sqrt3]
    case LawFamily::UniformScaled: return {0.0, 9.0 / 5.0, 27.0 / 7.0, 9.0};
  }
  return {};
}

LawMoments law_moments(SubGaussianLaw law) noexcept { return law.moments(); }

std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

SeedSpec SeedSpec::child(std::uint64_t tag) const noexcept {
  return {master_seed, mix64(stream_id ^ mix64(tag ^ 0x5851f42d4c957f2dULL))};
}

RandomStream::RandomStream(const SeedSpec& seed) {
  std::uint64_t a = mix64(seed.master_seed);
  std::uint64_t b = mix64(a ^ seed.stream_id);
  std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                    static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
  engine_.seed(seq);
}

double RandomStream::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double RandomStream::standard_normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // Box-Muller; 1 - u keeps the log argument in (0, 1].
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

double RandomStream::draw(SubGaussianLaw law) {
  switch (law.family()) {
    case LawFamily::Gaussian: return standard_normal();
    case LawFamily::Rademacher: return (engine_() >> 63) ? 1.0 : -1.0;
    case LawFamily::UniformScaled: return std::numbers::sqrt3 * (2.0 * uniform() - 1.0);
  }
  return 0.0;
}

std::uint64_t RandomStream::below(std::uint64_t bound) {
  // Lemire's rejection keeps the result unbiased.
  std::uint64_t threshold = (0 - bound) % bound;
  for (;;) {
    std::uint64_t r = engine_();
    if (r >= threshold) return r % bound;
  }
}

void RandomStream::fill(SubGaussianLaw law, Eigen::Ref<Eigen::VectorXd> out) {
  for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = draw(law);
}

void RandomStream::fill_normal(Eigen::Ref<Eigen::MatrixXd> out) {
  for (Eigen::Index j = 0; j < out.cols(); ++j)
    for (Eigen::Index i = 0; i < out.rows(); ++i) out(i, j) = standard_normal();
}

Eigen::VectorXd sample_vector(SubGaussianLaw law, Eigen::Index d, const SeedSpec& seed) {
  require(d >= 1, ErrorKind::EmptyInput, "sample_vector needs d >= 1");
  RandomStream stream(seed);
  Eigen::VectorXd out(d);
  stream.fill(law, out);
  return out;
}

}  // namespace vcomp
