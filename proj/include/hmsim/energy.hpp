#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <optional>
#include <string_view>
#include <vector>

#include "hmsim/timing.hpp"
#include "hmsim/types.hpp"

namespace hmsim {

/// Per-bit energies in pJ/bit.
struct EnergyParams {
  double dram_act = 1.17;
  double dram_pre = 0.39;
  double dram_rd = 0.93;
  double dram_wr = 1.02;
  double scm_act = 2.47;
  double scm_pre_wr = 16.82;  ///< array write-back at precharge
  double scm_rd = 0.93;
  double scm_wr = 1.02;
};

enum class EnergyKind : std::uint8_t { Act, Pre, Rd, Wr, Refresh };

struct EnergyEvent {
  EnergyKind kind = EnergyKind::Act;
  Rank rank = Rank::Dram;
  std::uint64_t bits = 0;
  Cycle cycle = 0;
  std::uint64_t page = 0;  ///< home page of the triggering request (ACT only)
};

enum class EnergyCategory : std::uint8_t {
  DramAct, DramPre, DramRd, DramWr, DramRefresh, ScmAct, ScmPre, ScmRd, ScmWr, Count
};

inline constexpr std::array<std::string_view, static_cast<std::size_t>(EnergyCategory::Count)> kEnergyCategoryNames = {
    "dram_act", "dram_pre", "dram_rd", "dram_wr", "dram_refresh", "scm_act", "scm_pre", "scm_rd", "scm_wr"};

/// Running energy totals in pJ.
class EnergyLedger {
 public:
  explicit EnergyLedger(EnergyParams params = {}) : params_(params) {}

  /// Charges `bits` of the given event and returns the pJ added.
  double record_energy(EnergyKind kind, Rank rank, std::uint64_t bits) {
    if (bits == 0) throw UsageError("energy event with zero bits");
    const bool dram = rank == Rank::Dram;
    double per_bit = 0;
    EnergyCategory cat{};
    switch (kind) {
      case EnergyKind::Act:
        per_bit = dram ? params_.dram_act : params_.scm_act;
        cat = dram ? EnergyCategory::DramAct : EnergyCategory::ScmAct;
        break;
      case EnergyKind::Pre:
        per_bit = dram ? params_.dram_pre : params_.scm_pre_wr;
        cat = dram ? EnergyCategory::DramPre : EnergyCategory::ScmPre;
        break;
      case EnergyKind::Rd:
        per_bit = dram ? params_.dram_rd : params_.scm_rd;
        cat = dram ? EnergyCategory::DramRd : EnergyCategory::ScmRd;
        break;
      case EnergyKind::Wr:
        per_bit = dram ? params_.dram_wr : params_.scm_wr;
        cat = dram ? EnergyCategory::DramWr : EnergyCategory::ScmWr;
        break;
      case EnergyKind::Refresh:
        if (!dram) throw UsageError("refresh energy charged to the SCM rank");
        per_bit = params_.dram_act + params_.dram_pre;
        cat = EnergyCategory::DramRefresh;
        break;
      default:
        throw UsageError("unknown energy event");
    }
    const double pj = per_bit * static_cast<double>(bits);
    totals_[static_cast<std::size_t>(cat)] += pj;
    window_pj_ += pj;
    (dram ? window_dram_pj_ : window_scm_pj_) += pj;
    return pj;
  }

  double record(const EnergyEvent& e) { return record_energy(e.kind, e.rank, e.bits); }

  double total() const {
    double s = 0;
    for (double v : totals_) s += v;
    return s;
  }
  double category(EnergyCategory c) const { return totals_[static_cast<std::size_t>(c)]; }
  double rank_total(Rank r) const {
    double s = 0;
    for (std::size_t i = 0; i < totals_.size(); ++i) {
      const bool is_dram = i <= static_cast<std::size_t>(EnergyCategory::DramRefresh);
      if (is_dram == (r == Rank::Dram)) s += totals_[i];
    }
    return s;
  }

  double window_energy() const { return window_pj_; }
  double window_energy(Rank r) const { return r == Rank::Dram ? window_dram_pj_ : window_scm_pj_; }
  void reset_window() { window_pj_ = window_dram_pj_ = window_scm_pj_ = 0; }
  void reset_totals() { totals_.fill(0); }
  void reset() {
    reset_totals();
    reset_window();
  }
  const EnergyParams& params() const { return params_; }

 private:
  EnergyParams params_;
  std::array<double, static_cast<std::size_t>(EnergyCategory::Count)> totals_{};
  double window_pj_ = 0, window_dram_pj_ = 0, window_scm_pj_ = 0;
};

/// pJ over ns gives mW.
inline double power_watts(double energy_pj, Cycle cycles) {
  return cycles == 0 ? 0.0 : energy_pj / static_cast<double>(cycles) * 1e-3;
}

struct PowerSample {
  Cycle window_start = 0;
  Cycle window_end = 0;
  double power_w = 0;
  double dram_w = 0;
  double scm_w = 0;
  ThrottleFlags throttle;  ///< state in force during the window
  std::uint64_t bus_columns = 0;
};

/// Windowed power monitor with hysteresis. Throttling engages when a window's
/// power exceeds the budget and releases once it falls below budget*(1-hysteresis).
class PowerMonitor {
 public:
  PowerMonitor() = default;
  PowerMonitor(Cycle window, std::optional<double> budget_w, double hysteresis)
      : window_(window), budget_(budget_w), hysteresis_(hysteresis) {
    if (window_ == 0) throw ConfigError("power.window must be positive");
    if (hysteresis_ < 0 || hysteresis_ >= 1) throw ConfigError("power.hysteresis must be in [0,1)");
  }

  Cycle window() const { return window_; }
  ThrottleFlags flags() const { return flags_; }

  /// Consumes one closed window and returns the throttle state for the next.
  ThrottleFlags on_window(const PowerSample& s) {
    timeline_.push_back(s);
    if (!budget_) return flags_;
    const bool engaged = flags_.act || flags_.wr;
    if (!engaged && s.power_w > *budget_) {
      flags_ = {true, true};
      ++engagements_;
    } else if (engaged && s.power_w < *budget_ * (1.0 - hysteresis_)) {
      flags_ = {};
    }
    return flags_;
  }

  const std::vector<PowerSample>& timeline() const { return timeline_; }
  std::uint64_t engagements() const { return engagements_; }
  void clear_timeline() { timeline_.clear(); }

 private:
  Cycle window_ = 10'000;
  std::optional<double> budget_;
  double hysteresis_ = 0.1;
  ThrottleFlags flags_;
  std::vector<PowerSample> timeline_;
  std::uint64_t engagements_ = 0;
};

}  // namespace hmsim
