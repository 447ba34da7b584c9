#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>

namespace tpl {

// Counter-based SplitMix64. Output i of a stream is mix(key + (i+1)·φ), so the
// root stream of a seed is exactly the reference SplitMix64 sequence. Named
// sub-streams are derived from the key only, independent of the parent's
// position, which keeps data generation, initialization and sampling
// decoupled. Single owner; split before sharing across threads.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) noexcept : seed_(seed), key_(seed) {}

  std::uint64_t next_u64() noexcept;
  // Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept;
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  // Standard normal via Box-Muller (no cached second draw).
  double normal() noexcept;
  // Uniform integer in [0, n); n must be positive.
  std::uint64_t below(std::uint64_t n) noexcept;

  Rng split(std::string_view name) const noexcept;
  Rng split(std::uint64_t index) const noexcept;

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t position() const noexcept { return counter_; }

 private:
  Rng(std::uint64_t seed, std::uint64_t key) noexcept : seed_(seed), key_(key) {}

  std::uint64_t seed_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

std::uint64_t splitmix64_mix(std::uint64_t z) noexcept;

template <typename T>
void shuffle(std::span<T> items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i));
    std::swap(items[i - 1], items[j]);
  }
}

}  // namespace tpl
