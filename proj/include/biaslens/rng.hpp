#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <utility>

namespace biaslens {

/// xoshiro256** seeded through splitmix64.
///
/// Every random draw in the project goes through this type so that runs are
/// reproducible bit-for-bit. Independent streams are derived from a root seed
/// and a path of stream ids (e.g. {dataset, sample index}); derivation is a
/// pure function of (seed, path), so the order in which streams are created
/// never matters. Normal variates use Box-Muller with one output per call.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);
  Rng(std::uint64_t seed, std::initializer_list<std::uint64_t> path);

  /// Child stream; does not advance this generator.
  Rng split(std::uint64_t stream) const;

  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  /// Uniform integer in [0, n); n > 0.
  std::uint64_t below(std::uint64_t n);

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  Rng() = default;
  void seed_from(std::uint64_t key);

  std::uint64_t key_ = 0;
  std::uint64_t s_[4] = {0, 0, 0, 0};
};

std::uint64_t mix64(std::uint64_t x);

}  // namespace biaslens
