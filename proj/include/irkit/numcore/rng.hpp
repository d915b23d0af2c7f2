#pragma once

#include <cstdint>
#include <span>
#include <utility>

namespace irkit::num {

// SplitMix64 generator (Steele, Lea & Flood 2014). The whole state is one
// 64-bit word, and every derived draw below uses only integer arithmetic plus
// IEEE-754 operations, so a seed yields the same stream on every platform.
// std:: distributions are avoided because their algorithms are
// implementation-defined.
class Rng {
 public:
  static constexpr const char* kAlgorithm = "splitmix64";

  explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

  std::uint64_t next_u64();
  // Uniform on [0, 1) with 53 bits of resolution.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer on [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n);
  // Standard normal via Box-Muller (no cached spare, so draws stay aligned).
  double normal();
  double normal(double mean, double sd) { return mean + sd * normal(); }

  // Derives an independent child seed, e.g. one per tree.
  std::uint64_t fork_seed() { return next_u64() ^ 0x9E3779B97F4A7C15ULL; }

  template <class T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  std::uint64_t state() const { return state_; }

 private:
  std::uint64_t state_;
};

}  // namespace irkit::num
