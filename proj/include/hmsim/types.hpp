#pragma once

#include <bit>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace hmsim {

/// Bus clock cycle. At the default 1 GHz bus one cycle is one nanosecond.
using Cycle = std::uint64_t;
using Addr = std::uint64_t;

enum class Rank : std::uint8_t { Dram, Scm };
enum class Op : std::uint8_t { Read, Write };

inline constexpr std::string_view to_string(Rank r) { return r == Rank::Dram ? "dram" : "scm"; }
inline constexpr std::string_view to_string(Op o) { return o == Op::Read ? "read" : "write"; }

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

inline constexpr bool is_pow2(std::uint64_t v) { return v != 0 && (v & (v - 1)) == 0; }
inline constexpr unsigned log2_exact(std::uint64_t v) { return static_cast<unsigned>(std::countr_zero(v)); }
inline constexpr std::uint64_t low_mask(unsigned bits) {
  return bits >= 64 ? ~std::uint64_t{0} : (std::uint64_t{1} << bits) - 1;
}

/// Simulator random source. The engine owns exactly one and draws from it in a
/// fixed order; helpers below avoid the implementation-defined std distributions
/// so that streams are identical across standard libraries.
using Rng = std::mt19937_64;

inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline bool bernoulli(Rng& rng, double p) {
  if (p <= 0.0) return false;
  if (p >= 1.0) return true;
  return uniform01(rng) < p;
}

/// Uniform integer in [0, n) by rejection, n > 0.
inline std::uint64_t uniform_below(Rng& rng, std::uint64_t n) {
  if (n <= 1) return 0;
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % n;
}

}  // namespace hmsim
