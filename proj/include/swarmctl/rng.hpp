#pragma once

#include <cstdint>
#include <random>

namespace swarmctl {

// Cheap 64-bit mixer, used to derive independent stream seeds from a base
// seed plus an index. Adding a stream never perturbs the others.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Seeded random stream. All sampling goes through uniform01() with explicit
// inverse-CDF transforms so a given seed yields the same byte-identical
// sequence on every platform (std::mt19937_64 output is standardized,
// std::* distributions are not).
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : eng_(seed) {}

  // uniform in the open interval (0,1); never returns 0 or 1
  double uniform01() {
    return (static_cast<double>(eng_() >> 11) + 0.5) * 0x1.0p-53;
  }

  std::uint64_t raw() { return eng_(); }

 private:
  std::mt19937_64 eng_;
};

}  // namespace swarmctl
