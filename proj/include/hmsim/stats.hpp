#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "hmsim/channel.hpp"
#include "hmsim/energy.hpp"

namespace hmsim {

struct HitCounter {
  std::uint64_t hits = 0;
  std::uint64_t accesses = 0;
  double rate() const { return accesses ? static_cast<double>(hits) / static_cast<double>(accesses) : 0.0; }
  void add(bool hit) {
    ++accesses;
    hits += hit ? 1 : 0;
  }
};

struct BypassBreakdown {
  std::uint64_t first_level = 0;
  std::uint64_t fill_invalid = 0;
  std::uint64_t fill_replace = 0;
  std::uint64_t no_replace = 0;
  std::uint64_t no_replace_decremented = 0;
  std::uint64_t total() const { return first_level + fill_invalid + fill_replace + no_replace; }
};

struct ChannelReport {
  std::uint64_t bus_columns = 0;
  Cycle bus_busy_cycles = 0;
  double utilization = 0;
  TrafficCounts traffic{};
  std::uint64_t refreshes = 0;
  std::uint64_t dram_activations = 0;
  std::uint64_t scm_activations = 0;
  double energy_pj = 0;
};

struct StatsReport {
  Cycle runtime_cycles = 0;
  Cycle end_cycle = 0;
  std::uint64_t requests_injected = 0;
  std::uint64_t requests_completed = 0;
  std::uint64_t reads = 0;
  std::uint64_t writes = 0;
  double mean_latency = 0;
  Cycle max_latency = 0;

  TrafficCounts traffic{};
  std::uint64_t refresh_events = 0;
  std::uint64_t total_columns = 0;

  HitCounter dram_cache, dram_cache_read, dram_cache_write;
  HitCounter l2, ctc;
  std::uint64_t uncacheable_accesses = 0;
  std::uint64_t transactions = 0;
  std::uint64_t mshr_stalls = 0;
  BypassBreakdown bypass;

  std::vector<ChannelReport> channels;
  double utilization = 0;   ///< mean over channels
  double bandwidth_gbps = 0;

  std::array<double, static_cast<std::size_t>(EnergyCategory::Count)> energy{};
  double energy_total_pj = 0;
  double energy_dram_pj = 0;
  double energy_scm_pj = 0;

  std::vector<PowerSample> power_timeline;  ///< summed over channels, per window
  std::size_t first_measured_window = 0;    ///< earlier windows fall inside warmup
  std::vector<std::vector<PowerSample>> channel_power;
  std::uint64_t throttle_engagements = 0;

  std::uint64_t value_checks = 0;
  std::uint64_t value_mismatches = 0;
  bool ecc_intact = true;
};

}  // namespace hmsim
