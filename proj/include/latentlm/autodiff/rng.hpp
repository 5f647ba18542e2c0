#pragma once

#include <array>
#include <cstdint>
#include <span>

namespace latentlm {

/// Counter-based generator (Philox-4x32-10). A draw is a pure function of
/// (seed, stream_id, counter), so components that own distinct streams never
/// perturb each other's sequences.
class Rng {
 public:
  Rng() = default;
  explicit Rng(std::uint64_t seed, std::uint64_t stream_id = 0, std::uint64_t counter = 0)
      : seed_(seed), stream_(stream_id), counter_(counter) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_; }
  std::uint64_t counter() const { return counter_; }

  /// Independent stream keyed by `tag` under the same seed.
  Rng fork(std::uint64_t tag) const;

  std::uint64_t next_u64();
  /// Uniform on [0, 1).
  double uniform();
  /// Standard normal (Box-Muller, one value per two uniforms).
  double normal();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  void fill_normal(std::span<double> out);

  /// Raw Philox block for (key, counter words).
  static std::array<std::uint32_t, 4> philox(std::array<std::uint32_t, 4> ctr,
                                             std::array<std::uint32_t, 2> key);

  friend bool operator==(const Rng&, const Rng&) = default;

 private:
  std::uint64_t seed_ = 0;
  std::uint64_t stream_ = 0;
  std::uint64_t counter_ = 0;
};

}  // namespace latentlm
