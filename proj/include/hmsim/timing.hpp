#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "hmsim/types.hpp"

namespace hmsim {

/// Device timing in bus cycles.
struct TimingParams {
  std::uint32_t tCL = 14;
  std::uint32_t tRCD = 14;
  std::uint32_t tRAS = 33;
  std::uint32_t tWR = 16;
  std::uint32_t tRP = 14;
  std::uint32_t tBL = 1;  ///< one bus cycle per 32 B column on a 128-bit DDR bus with BL2
  std::uint32_t refresh_interval = 0;  ///< 0 disables refresh
  std::uint32_t refresh_duration = 0;

  bool operator==(const TimingParams&) const = default;
};

inline TimingParams dram_timing() {
  TimingParams t;
  t.refresh_interval = 3900;
  t.refresh_duration = 350;
  return t;
}

enum class ScmMode : std::uint8_t { Slc, Mlc, Tlc };

inline TimingParams scm_timing(ScmMode mode) {
  TimingParams t;
  t.tCL = 14;
  t.tRP = 14;
  switch (mode) {
    case ScmMode::Slc:
      t.tRCD = 60;
      t.tRAS = 60;
      t.tWR = 150;
      break;
    case ScmMode::Mlc:
      t.tRCD = 120;
      t.tRAS = 120;
      t.tWR = 1000;
      break;
    case ScmMode::Tlc:
      t.tRCD = 250;
      t.tRAS = 250;
      t.tWR = 2350;
      break;
  }
  return t;
}

inline std::string_view to_string(ScmMode m) {
  switch (m) {
    case ScmMode::Slc: return "slc";
    case ScmMode::Mlc: return "mlc";
    case ScmMode::Tlc: return "tlc";
  }
  return "?";
}

inline ScmMode parse_scm_mode(std::string_view s) {
  if (s == "slc") return ScmMode::Slc;
  if (s == "mlc") return ScmMode::Mlc;
  if (s == "tlc") return ScmMode::Tlc;
  throw ConfigError("unknown scm mode '" + std::string(s) + "'");
}

struct ThrottleFlags {
  bool act = false;  ///< double tRCD
  bool wr = false;   ///< double tWR
  bool operator==(const ThrottleFlags&) const = default;
};

/// Effective SCM timing under a throttle state. `base` is always the unthrottled
/// parameter set, so applying the same flags twice yields the same result.
inline TimingParams apply_throttle(const TimingParams& base, ThrottleFlags flags, Rank rank = Rank::Scm) {
  if (rank != Rank::Scm && (flags.act || flags.wr)) throw UsageError("throttling applies to the SCM rank only");
  TimingParams t = base;
  if (flags.act) t.tRCD = base.tRCD * 2;
  if (flags.wr) t.tWR = base.tWR * 2;
  return t;
}

}  // namespace hmsim
