#include "vtg/random.hpp"

#include <cmath>
#include <numeric>
#include <numbers>

namespace vtg {

std::uint64_t RandomStream::mix(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * kMix1;
  z = (z ^ (z >> 27)) * kMix2;
  return z ^ (z >> 31);
}

std::pair<std::uint64_t, RandomStream> RandomStream::next() const noexcept {
  RandomStream s = *this;
  s.state_ += kGamma;
  return {mix(s.state_), s};
}

RandomStream RandomStream::derive_child(std::uint64_t label) const noexcept {
  RandomStream child(mix(state_ ^ mix(label + kLabelSalt)));
  child.label_ = label_;
  child.label_.push_back(label);
  return child;
}

std::uint64_t RandomStream::next_u64() noexcept {
  state_ += kGamma;
  return mix(state_);
}

double RandomStream::uniform() noexcept {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t RandomStream::below(std::uint64_t n) noexcept {
  // Lemire-style rejection keeps the draw unbiased.
  const std::uint64_t threshold = (0 - n) % n;
  for (;;) {
    const std::uint64_t r = next_u64();
    if (r >= threshold) return r % n;
  }
}

double RandomStream::normal() noexcept {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k, RandomStream& rng) {
  std::vector<std::size_t> pool(n);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  if (k > n) k = n;
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  return pool;
}

}  // namespace vtg
