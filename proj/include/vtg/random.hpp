#pragma once

#include <cstdint>
#include <utility>
#include <vector>

namespace vtg {

/// Counter-based SplitMix64 stream.
///
///   state += 0x9E3779B97F4A7C15
///   z = state
///   z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
///   z = (z ^ (z >> 27)) * 0x94D049BB133111EB
///   value = z ^ (z >> 31)
///
/// A child stream for label `k` starts at mix(state ^ mix(k + 0x632BE59BD9B4E019)),
/// where mix is the finalizer above applied without the increment. Uniform
/// doubles use the top 53 bits: (value >> 11) * 2^-53, always in [0, 1).
class RandomStream {
 public:
  static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;
  static constexpr std::uint64_t kMix1 = 0xBF58476D1CE4E5B9ULL;
  static constexpr std::uint64_t kMix2 = 0x94D049BB133111EBULL;
  static constexpr std::uint64_t kLabelSalt = 0x632BE59BD9B4E019ULL;

  RandomStream() = default;
  explicit RandomStream(std::uint64_t seed) : state_(seed) {}

  static std::uint64_t mix(std::uint64_t z) noexcept;

  /// Pure step: the drawn value and the successor stream.
  [[nodiscard]] std::pair<std::uint64_t, RandomStream> next() const noexcept;

  /// Stream derived from this one and `label`; this stream is not advanced.
  [[nodiscard]] RandomStream derive_child(std::uint64_t label) const noexcept;

  // Convenience draws that advance this (locally owned) stream in place.
  std::uint64_t next_u64() noexcept;
  double uniform() noexcept;
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n); n must be positive.
  std::uint64_t below(std::uint64_t n) noexcept;
  /// Standard normal via Box-Muller (one value per call, no caching).
  double normal() noexcept;

  std::uint64_t state() const noexcept { return state_; }
  const std::vector<std::uint64_t>& label() const noexcept { return label_; }

 private:
  std::uint64_t state_ = 0;
  std::vector<std::uint64_t> label_;
};

/// Fisher-Yates sample of `k` distinct indices from [0, n), in draw order.
std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k, RandomStream& rng);

}  // namespace vtg
