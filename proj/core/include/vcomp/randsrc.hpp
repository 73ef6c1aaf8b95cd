#pragma once

// Seeded sampling of independent mean-0 / variance-1 sub-Gaussian coordinates.
//
// Every draw sequence is a pure function of a SeedSpec (master seed, stream id),
// so replicate r of an experiment is reproducible regardless of which worker
// runs it or in what order.

#include <cstdint>
#include <random>
#include <string_view>

#include <Eigen/Core>

namespace vcomp {

enum class LawFamily { Gaussian, Rademacher, UniformScaled };

/// Absolute moments E|x|^k for k = 3, 4, 6, 8 (mu3 is the signed third moment).
struct LawMoments {
  double mu3 = 0.0;
  double mu4 = 3.0;
  double mu6 = 15.0;
  double mu8 = 105.0;

  [[nodiscard]] double excess_kurtosis() const noexcept { return mu4 - 3.0; }
};

/// A mean-0, variance-1 law with closed-form moments.
///
/// `gamma()` is an upper bound on the sub-Gaussian norm
/// sup_{r>=1} r^{-1/2} (E|x|^r)^{1/r}; for all three families the supremum is
/// attained at r = 1, so the stored bound is E|x| rounded up.
class SubGaussianLaw {
 public:
  constexpr explicit SubGaussianLaw(LawFamily family = LawFamily::Gaussian) noexcept
      : family_(family) {}

  /// Accepts "gaussian", "rademacher" or "uniform"; throws InvalidArgument otherwise.
  static SubGaussianLaw from_name(std::string_view name);

  [[nodiscard]] constexpr LawFamily family() const noexcept { return family_; }
  [[nodiscard]] std::string_view name() const noexcept;
  [[nodiscard]] double gamma() const noexcept;
  [[nodiscard]] LawMoments moments() const noexcept;

  friend constexpr bool operator==(SubGaussianLaw a, SubGaussianLaw b) noexcept {
    return a.family_ == b.family_;
  }

 private:
  LawFamily family_;
};

/// Exact closed-form moments of `law`.
[[nodiscard]] LawMoments law_moments(SubGaussianLaw law) noexcept;

struct SeedSpec {
  std::uint64_t master_seed = 0;
  std::uint64_t stream_id = 0;

  /// Deterministic sub-stream; distinct tags give statistically independent streams.
  [[nodiscard]] SeedSpec child(std::uint64_t tag) const noexcept;

  friend bool operator==(const SeedSpec&, const SeedSpec&) = default;
};

/// SplitMix64 finalizer. Exposed because config hashing reuses it.
[[nodiscard]] std::uint64_t mix64(std::uint64_t x) noexcept;

/// A single random stream keyed by a SeedSpec.
///
/// Uses mt19937_64 (bit-exact across standard libraries) and hand-written
/// transforms, so sequences do not depend on the platform's <random>
/// distribution implementations.
class RandomStream {
 public:
  explicit RandomStream(const SeedSpec& seed);

  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  double standard_normal();
  double draw(SubGaussianLaw law);
  std::uint64_t next_u64() { return engine_(); }

  /// Uniform integer in [0, bound).
  std::uint64_t below(std::uint64_t bound);

  void fill(SubGaussianLaw law, Eigen::Ref<Eigen::VectorXd> out);
  void fill_normal(Eigen::Ref<Eigen::MatrixXd> out);

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// `d` independent draws from `law`, deterministic in `seed`. Throws EmptyInput when d == 0.
[[nodiscard]] Eigen::VectorXd sample_vector(SubGaussianLaw law, Eigen::Index d,
                                            const SeedSpec& seed);

}  // namespace vcomp
