#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace gplight {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t fnv1a64(std::string_view s,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
  return fnv1a64(s.data(), s.size(), h);
}

using Rng = std::mt19937_64;

// One root seed per run; every stochastic component pulls its own stream so
// adding or removing one consumer never shifts the others.
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view component,
                                 std::uint64_t index = 0) {
  std::uint64_t h = fnv1a64(component);
  return splitmix64(root ^ splitmix64(h + 0x632be59bd9b4e019ULL * (index + 1)));
}

inline Rng make_rng(std::uint64_t root, std::string_view component,
                    std::uint64_t index = 0) {
  return Rng(derive_seed(root, component, index));
}

}  // namespace gplight
