#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace tvp {

// splitmix64 finalizer; used to derive independent, order-free RNG streams
// from (global seed, sample id, ...) tuples.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0x5eed5eed5eed5eedULL;
  for (std::uint64_t p : parts) h = mix64(h ^ mix64(p));
  return h;
}

using Rng = std::mt19937_64;

}  // namespace tvp
