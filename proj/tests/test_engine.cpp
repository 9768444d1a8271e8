#include <gtest/gtest.h>

#include <numeric>

#include "hmsim/engine.hpp"
#include "hmsim/report.hpp"

using namespace hmsim;

namespace {

using Overrides = std::vector<std::pair<std::string, std::string>>;

ExperimentConfig config(Overrides ov) { return parse_config(Json::object(), ov); }

std::uint64_t count(const StatsReport& r, TrafficCategory c) { return r.traffic[static_cast<std::size_t>(c)]; }

std::uint64_t sum(const TrafficCounts& t) { return std::accumulate(t.begin(), t.end(), std::uint64_t{0}); }

constexpr Addr kDramBytes = 256ull << 20;

// Random sectors over `sets` DRAM-cache sets, each shared by all four SCM lines that map to it.
std::vector<TraceRecord> thrash_trace(std::uint64_t sets, std::size_t n, double write_fraction, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<TraceRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    const Addr a = uniform_below(rng, sets) * 256 + uniform_below(rng, 4) * kDramBytes + uniform_below(rng, 8) * 32;
    out.push_back({static_cast<std::uint32_t>(i % 16), bernoulli(rng, write_fraction) ? Op::Write : Op::Read, a, 32});
  }
  return out;
}

TraceRecord read_at(Addr a) { return {0, Op::Read, a, 32}; }

}  // namespace

struct EngineCase {
  const char* mode;
  const char* layout;
  const char* policy;
};

void PrintTo(const EngineCase& c, std::ostream* os) { *os << c.mode << "/" << c.layout << "/" << c.policy; }

class EngineConservation : public ::testing::TestWithParam<EngineCase> {};

TEST_P(EngineConservation, EveryRequestCompletesWithTheLastWrittenValue) {
  const auto& p = GetParam();
  const auto cfg = config({{"engine.mode", p.mode}, {"cache.layout", p.layout}, {"policy.kind", p.policy}});
  const auto recs = thrash_trace(1 << 15, 30000, 0.4, 81);
  const StatsReport r = run_simulation(cfg, recs);
  EXPECT_EQ(r.requests_injected, recs.size());
  EXPECT_EQ(r.requests_completed, recs.size());
  EXPECT_EQ(r.reads + r.writes, recs.size());
  EXPECT_GT(r.value_checks, 0u);
  EXPECT_EQ(r.value_mismatches, 0u);
  EXPECT_EQ(r.ecc_intact, std::string(p.layout) == "amil");  // TAD keeps tags in the ECC bits
  EXPECT_EQ(sum(r.traffic), r.total_columns);
  std::uint64_t bus = 0;
  for (const auto& c : r.channels) bus += c.bus_columns;
  EXPECT_EQ(bus, r.total_columns);
  for (const HitCounter* h : {&r.dram_cache, &r.dram_cache_read, &r.dram_cache_write, &r.l2, &r.ctc}) {
    EXPECT_GE(h->rate(), 0.0);
    EXPECT_LE(h->rate(), 1.0);
    EXPECT_LE(h->hits, h->accesses);
  }
}

INSTANTIATE_TEST_SUITE_P(Modes, EngineConservation,
                         ::testing::Values(EngineCase{"cache", "amil", "scm_aware"}, EngineCase{"cache", "tad", "scm_aware"},
                                           EngineCase{"cache", "amil", "always_fill"},
                                           EngineCase{"cache", "amil", "always_bypass"},
                                           EngineCase{"cache", "tad", "probabilistic_fill"},
                                           EngineCase{"cache", "amil", "access_count_threshold"},
                                           EngineCase{"flat", "amil", "scm_aware"}),
                         [](const auto& info) {
                           return std::string(info.param.mode) + "_" + info.param.layout + "_" + info.param.policy;
                         });

TEST(Engine, DeviceModeConservesRequests) {
  for (const char* target : {"dram", "scm"}) {
    const auto cfg = config({{"engine.mode", "device"},
                             {"engine.device_target", target},
                             {"workload.pattern", "mixed_random"},
                             {"workload.length", "20000"}});
    const StatsReport r = run_simulation(cfg);
    EXPECT_EQ(r.requests_completed, 20000u) << target;
    EXPECT_EQ(r.value_mismatches, 0u) << target;
    EXPECT_EQ(sum(r.traffic), 20000u) << target;
  }
}

TEST(Engine, FlatModeWithinDramNeverTouchesScm) {
  const auto cfg = config({{"engine.mode", "flat"},
                           {"workload.pattern", "mixed_random"},
                           {"workload.span_bytes", std::to_string(kDramBytes)},
                           {"workload.length", "30000"}});
  const StatsReport r = run_simulation(cfg);
  EXPECT_EQ(r.requests_completed, 30000u);
  EXPECT_EQ(count(r, TrafficCategory::DemandScmRd) + count(r, TrafficCategory::DemandScmWr), 0u);
  EXPECT_EQ(r.energy_scm_pj, 0.0);
  EXPECT_GT(count(r, TrafficCategory::DemandDramRd), 0u);
}

TEST(Engine, FlatModeAboveDramReachesScm) {
  const auto recs = std::vector<TraceRecord>{read_at(kDramBytes + 0x1000)};
  const StatsReport r = run_simulation(config({{"engine.mode", "flat"}}), recs);
  EXPECT_EQ(count(r, TrafficCategory::DemandScmRd), 1u);
  EXPECT_EQ(r.total_columns, 1u);
}

TEST(Engine, SameSeedSameReport) {
  const auto cfg = config({{"workload.pattern", "zipf_hot_cold"}, {"workload.length", "20000"}, {"engine.seed", "7"}});
  const std::string a = dump_report(report_json(run_simulation(cfg), cfg));
  const std::string b = dump_report(report_json(run_simulation(cfg), cfg));
  EXPECT_EQ(a, b);
  const auto other = config({{"workload.pattern", "zipf_hot_cold"}, {"workload.length", "20000"}, {"engine.seed", "8"}});
  EXPECT_NE(a, dump_report(report_json(run_simulation(other), other)));
}

TEST(Engine, MetadataColumnSectorGoesStraightToScm) {
  const Addr meta = (Addr{7} << 15) | (Addr{7} << 5);  // last sector of a row's last line
  const StatsReport r = run_simulation(config({}), {read_at(meta)});
  EXPECT_EQ(r.requests_completed, 1u);
  EXPECT_EQ(count(r, TrafficCategory::DemandScmRd), 1u);
  EXPECT_EQ(r.total_columns, 1u);
  EXPECT_EQ(r.uncacheable_accesses, 1u);
  EXPECT_EQ(r.dram_cache.accesses, 0u);
  EXPECT_EQ(r.ctc.accesses, 0u);
}

TEST(Engine, MetadataColumnUnderTadIsCacheable) {
  const Addr meta = (Addr{7} << 15) | (Addr{7} << 5);
  const StatsReport r = run_simulation(config({{"cache.layout", "tad"}}), {read_at(meta)});
  EXPECT_EQ(r.uncacheable_accesses, 0u);
  EXPECT_EQ(r.dram_cache.accesses, 1u);
}

TEST(Engine, TagCacheHitAndDramCacheHitCostOneColumn) {
  // The first sector fills the line and its row's tags; the neighbouring sector misses L2 only.
  const auto cfg = config({{"policy.kind", "always_fill"}, {"engine.warmup_requests", "1"}});
  const StatsReport r = run_simulation(cfg, {read_at(0x0), read_at(0x20)});
  EXPECT_EQ(r.requests_completed, 1u);
  EXPECT_EQ(r.ctc.hits, 1u);
  EXPECT_EQ(r.dram_cache.hits, 1u);
  EXPECT_EQ(count(r, TrafficCategory::DemandDramRd), 1u);
  EXPECT_EQ(count(r, TrafficCategory::Probe), 0u);
  EXPECT_EQ(r.total_columns, 1u);
}

TEST(Engine, TagCacheMissCostsOneProbeColumnUnderAmilAndEightUnderTad) {
  for (const auto& [layout, probes] : {std::pair{"amil", 1u}, std::pair{"tad", 8u}}) {
    const auto cfg = config({{"policy.kind", "always_bypass"}, {"cache.layout", layout}});
    const StatsReport r = run_simulation(cfg, {read_at(0x0)});
    EXPECT_EQ(count(r, TrafficCategory::Probe), probes) << layout;
    EXPECT_EQ(r.ctc.hits, 0u);
  }
}

TEST(Engine, FirstLevelBypassFillsNothing) {
  // Equal SCM and DRAM timings give every request a zero penalty, so the first filter always bypasses.
  const auto equal = config({{"timing.scm_overrides.tRCD", "14"}, {"timing.scm_overrides.tWR", "16"}});
  const auto bypass = config({{"policy.kind", "always_bypass"}});
  for (const auto& cfg : {equal, bypass}) {
    const StatsReport r = run_simulation(cfg, {read_at(0x4000)});
    EXPECT_EQ(r.bypass.first_level, 1u);
    EXPECT_EQ(count(r, TrafficCategory::DemandScmRd), 1u);
    EXPECT_EQ(count(r, TrafficCategory::FillScmRd), 0u);
    EXPECT_EQ(count(r, TrafficCategory::FillDramWr), 0u);
  }
}

TEST(Engine, FirstMissFillsWholeLine) {
  const StatsReport r = run_simulation(config({}), {read_at(0x4000)});
  EXPECT_EQ(r.bypass.fill_invalid, 1u);
  EXPECT_EQ(count(r, TrafficCategory::DemandScmRd), 1u);
  EXPECT_EQ(count(r, TrafficCategory::FillDramWr), 8u);
  EXPECT_EQ(count(r, TrafficCategory::FillScmRd), 8u);
}

TEST(Engine, AlwaysFillMovesMoreLinesThanScmAwareOnThrash) {
  const auto recs = thrash_trace(1 << 15, 60000, 0.3, 82);
  auto moved = [&](const char* policy) {
    const StatsReport r = run_simulation(config({{"policy.kind", policy}}), recs);
    EXPECT_EQ(r.value_mismatches, 0u);
    return count(r, TrafficCategory::FillScmRd) + count(r, TrafficCategory::FillDramWr) +
           count(r, TrafficCategory::EvictDramRd) + count(r, TrafficCategory::EvictScmWr);
  };
  EXPECT_GT(moved("always_fill"), moved("scm_aware"));
}

TEST(Engine, AlwaysBypassNeverFills) {
  const auto recs = thrash_trace(1 << 12, 20000, 0.5, 83);
  const StatsReport r = run_simulation(config({{"policy.kind", "always_bypass"}}), recs);
  EXPECT_EQ(count(r, TrafficCategory::FillDramWr), 0u);
  EXPECT_EQ(count(r, TrafficCategory::EvictScmWr), 0u);
  EXPECT_EQ(r.dram_cache.hits, 0u);
}

TEST(Engine, EmptyWorkloadReportsNothing) {
  const StatsReport r = run_simulation(config({}), {});
  EXPECT_EQ(r.requests_completed, 0u);
  EXPECT_EQ(r.runtime_cycles, 0u);
  EXPECT_EQ(r.total_columns, 0u);
  EXPECT_EQ(sum(r.traffic), 0u);
  EXPECT_EQ(r.energy_total_pj, 0.0);
}

TEST(Engine, WarmupIsExcludedFromStatistics) {
  const auto recs = thrash_trace(1 << 12, 10000, 0.3, 84);
  const StatsReport r = run_simulation(config({{"engine.warmup_requests", "4000"}}), recs);
  EXPECT_EQ(r.requests_completed, 6000u);
  EXPECT_EQ(r.value_mismatches, 0u);
}

TEST(Engine, InvalidConfigRejectedBeforeRunning) {
  EXPECT_THROW(config({{"l2.ctc_l2_ways", "5"}}), ConfigError);
  EXPECT_THROW(config({{"engine.mode", "hybrid"}}), ConfigError);
}
