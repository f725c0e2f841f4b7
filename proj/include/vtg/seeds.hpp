#pragma once

#include <cstdint>

#include "vtg/random.hpp"

// Fixed derivation of every pipeline stream from the master seed.
namespace vtg::seeds {

inline RandomStream root(std::uint64_t seed) { return RandomStream(seed); }
inline RandomStream encoder(std::uint64_t seed) { return root(seed).derive_child(1); }
inline RandomStream policy(std::uint64_t seed, std::uint64_t task) {
  return root(seed).derive_child(2).derive_child(task);
}
/// split 0 = train, 1 = test
inline RandomStream data(std::uint64_t seed, std::uint64_t split, std::uint64_t task) {
  return root(seed).derive_child(3).derive_child(split).derive_child(task);
}
inline RandomStream reference(std::uint64_t seed, std::uint64_t task) {
  return root(seed).derive_child(4).derive_child(task);
}
inline RandomStream training(std::uint64_t seed) { return root(seed).derive_child(5); }
inline RandomStream episode(std::uint64_t seed, std::uint64_t id) {
  return root(seed).derive_child(6).derive_child(id);
}
inline RandomStream sweep(std::uint64_t seed, std::uint64_t cell) {
  return root(seed).derive_child(7).derive_child(cell);
}

}  // namespace vtg::seeds
