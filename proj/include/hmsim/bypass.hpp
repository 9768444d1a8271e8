#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "hmsim/dram_cache.hpp"
#include "hmsim/timing.hpp"
#include "hmsim/types.hpp"

namespace hmsim {

/// State of the per-channel score unit: pre-computed penalty numerators, the
/// moving average of hit scores, and the discretization maxima.
struct ScorePipelineState {
  double numerator_read = 0;   ///< tRCD_scm - tRCD_dram
  double numerator_write = 0;  ///< numerator_read + tWR_scm - tWR_dram
  double moving_avg = 0;
  double avg_weight = 0.01;
  double max_penalty_seen = 0;
  double max_affinity_seen = 0;
  double window_max_penalty = 0;
  double window_max_affinity = 0;
  std::uint32_t decisions_in_window = 0;
  std::uint32_t n_levels = 4;
  std::uint32_t f_update = 100;

  static ScorePipelineState from_timing(const TimingParams& dram, const TimingParams& scm, std::uint32_t n_levels = 4,
                                        std::uint32_t f_update = 100) {
    ScorePipelineState s;
    s.numerator_read = static_cast<double>(scm.tRCD) - static_cast<double>(dram.tRCD);
    s.numerator_write = s.numerator_read + static_cast<double>(scm.tWR) - static_cast<double>(dram.tWR);
    s.n_levels = n_levels;
    s.f_update = f_update;
    return s;
  }
};

/// SCM latency penalty per column accessed.
inline double scm_penalty_score(unsigned num_columns, bool has_write, const ScorePipelineState& s) {
  if (num_columns == 0) throw UsageError("penalty score needs at least one column");
  return (has_write ? s.numerator_write : s.numerator_read) / static_cast<double>(num_columns);
}

/// Equal-width levels over [0, max_seen]; values at or above max_seen take the top level.
inline unsigned discretize(double value, double max_seen, unsigned n_levels) {
  if (n_levels <= 1 || max_seen <= 0 || value <= 0) return 0;
  if (value >= max_seen) return n_levels - 1;
  const auto lvl = static_cast<unsigned>(std::floor(value * n_levels / max_seen));
  return std::min(lvl, n_levels - 1);
}

inline void update_moving_average(ScorePipelineState& s, double sample) {
  s.moving_avg = (1.0 - s.avg_weight) * s.moving_avg + s.avg_weight * sample;
}

/// Registers a miss decision's scores. Maxima only grow inside a window of
/// f_update decisions; when the window closes they are reset to the window's
/// own maxima so stale peaks decay.
inline void observe_decision(ScorePipelineState& s, double penalty, double affinity) {
  s.max_penalty_seen = std::max(s.max_penalty_seen, penalty);
  s.max_affinity_seen = std::max(s.max_affinity_seen, affinity);
  s.window_max_penalty = std::max(s.window_max_penalty, penalty);
  s.window_max_affinity = std::max(s.window_max_affinity, affinity);
}

inline void close_decision(ScorePipelineState& s) {
  if (s.f_update == 0 || ++s.decisions_in_window < s.f_update) return;
  s.max_penalty_seen = s.window_max_penalty;
  s.max_affinity_seen = s.window_max_affinity;
  s.window_max_penalty = s.window_max_affinity = 0;
  s.decisions_in_window = 0;
}

inline unsigned dram_affinity_level(double penalty, double page_counter, const ScorePipelineState& s) {
  return discretize(penalty * page_counter, s.max_affinity_seen, s.n_levels);
}

/// 8-bit activation counters per 2 MiB page with shift-on-saturate.
class PageActivationTable {
 public:
  PageActivationTable() = default;
  PageActivationTable(std::uint64_t pages, bool enabled) : counters_(pages, 0), enabled_(enabled) {}

  void bump(std::uint64_t page) {
    if (!enabled_ || page >= counters_.size()) return;
    if (counters_[page] == 0xff) {
      for (auto& c : counters_) c = static_cast<std::uint8_t>(c >> 1);
      max_counter_ >>= 1;
      msb_shift_ = static_cast<std::uint8_t>((msb_shift_ + 1) & 7);
      ++shifts_;
    }
    ++counters_[page];
    max_counter_ = std::max<std::uint32_t>(max_counter_, counters_[page]);
  }

  /// Counter value used in scores; constant 1 while disabled.
  double counter(std::uint64_t page) const {
    if (!enabled_) return 1.0;
    return page < counters_.size() ? counters_[page] : 0.0;
  }
  std::uint8_t raw(std::uint64_t page) const { return counters_.at(page); }
  void set_raw(std::uint64_t page, std::uint8_t v) {
    counters_.at(page) = v;
    max_counter_ = 0;
    for (auto c : counters_) max_counter_ = std::max<std::uint32_t>(max_counter_, c);
  }
  std::uint32_t max_counter() const { return max_counter_; }
  std::uint8_t msb_shift() const { return msb_shift_; }
  std::uint64_t shifts() const { return shifts_; }
  bool enabled() const { return enabled_; }
  std::uint64_t pages() const { return counters_.size(); }

  /// Probability of decrementing a victim's level after hot data bypassed it.
  double p_dec(std::uint64_t page) const {
    if (!enabled_) return 1.0;
    if (max_counter_ == 0) return 1.0;
    return std::clamp(counter(page) / static_cast<double>(max_counter_), 0.0, 1.0);
  }

 private:
  std::vector<std::uint8_t> counters_;
  bool enabled_ = false;
  std::uint32_t max_counter_ = 0;
  std::uint8_t msb_shift_ = 0;
  std::uint64_t shifts_ = 0;
};

enum class PolicyKind : std::uint8_t { ScmAware, AlwaysFill, AlwaysBypass, ProbabilisticFill, AccessCountThreshold };

inline std::string_view to_string(PolicyKind k) {
  switch (k) {
    case PolicyKind::ScmAware: return "scm_aware";
    case PolicyKind::AlwaysFill: return "always_fill";
    case PolicyKind::AlwaysBypass: return "always_bypass";
    case PolicyKind::ProbabilisticFill: return "probabilistic_fill";
    case PolicyKind::AccessCountThreshold: return "access_count_threshold";
  }
  return "?";
}

inline PolicyKind parse_policy(std::string_view s) {
  for (auto k : {PolicyKind::ScmAware, PolicyKind::AlwaysFill, PolicyKind::AlwaysBypass, PolicyKind::ProbabilisticFill,
                 PolicyKind::AccessCountThreshold})
    if (to_string(k) == s) return k;
  throw ConfigError("unknown policy '" + std::string(s) + "'");
}

enum class FillDecisionKind : std::uint8_t { BypassFirstLevel, FillInvalid, FillReplace, NoReplace };

struct FillDecision {
  FillDecisionKind kind = FillDecisionKind::BypassFirstLevel;
  bool decremented = false;
  bool fills() const { return kind == FillDecisionKind::FillInvalid || kind == FillDecisionKind::FillReplace; }
  bool operator==(const FillDecision&) const = default;
};

/// Two-level fill decision. `victim.affinity` must be the stored level whenever
/// the victim is valid and the first level passes.
inline FillDecision decide_fill(unsigned request_level, unsigned avg_level, unsigned request_affinity,
                                const LineMeta& victim, double p_dec, Rng& rng) {
  if (request_level <= avg_level) return {FillDecisionKind::BypassFirstLevel, false};
  if (!victim.valid) return {FillDecisionKind::FillInvalid, false};
  if (request_affinity > victim.affinity) return {FillDecisionKind::FillReplace, false};
  const bool dec = victim.affinity > 0 && bernoulli(rng, p_dec);
  return {FillDecisionKind::NoReplace, dec};
}

struct PolicyConfig {
  PolicyKind kind = PolicyKind::ScmAware;
  std::uint32_t n_levels = 4;
  std::uint32_t f_update = 100;
  bool activation_counters = false;
  double probability = 0.9;        ///< ProbabilisticFill
  std::uint32_t access_threshold = 2;  ///< AccessCountThreshold
  double avg_weight = 0.01;
};

/// Outcome of the first filter, computed before touching the victim.
struct FirstStage {
  bool bypass = false;
  bool needs_victim_affinity = false;  ///< second-level comparison against a valid victim pending
  unsigned penalty_level = 0;
  unsigned avg_level = 0;
  unsigned affinity_level = 0;
  double penalty = 0;
};

/// Global per-page state shared by every channel's bypass unit.
struct PageTables {
  PageActivationTable activation;
  std::vector<std::uint32_t> accesses;

  PageTables() = default;
  PageTables(std::uint64_t pages, bool activation_enabled)
      : activation(pages, activation_enabled), accesses(pages, 0) {}
  void note_access(std::uint64_t page) {
    if (page < accesses.size() && accesses[page] != ~std::uint32_t{0}) ++accesses[page];
  }
};

/// One channel's bypass unit: selected policy plus its score pipeline.
class BypassUnit {
 public:
  BypassUnit(PolicyConfig cfg, ScorePipelineState state) : cfg_(cfg), s_(state) {
    s_.avg_weight = cfg.avg_weight;
    s_.n_levels = cfg.n_levels;
    s_.f_update = cfg.f_update;
  }

  const PolicyConfig& config() const { return cfg_; }
  const ScorePipelineState& state() const { return s_; }
  ScorePipelineState& state() { return s_; }

  /// DRAM-cache hit: feeds the hit's hypothetical penalty into the moving average.
  void on_hit(unsigned columns, bool has_write) {
    if (cfg_.kind != PolicyKind::ScmAware || columns == 0) return;
    update_moving_average(s_, scm_penalty_score(columns, has_write, s_));
  }

  FirstStage first_stage(unsigned columns, bool has_write, std::uint64_t page, const LineMeta& victim,
                         const PageTables& pages, Rng& rng) {
    FirstStage f;
    switch (cfg_.kind) {
      case PolicyKind::ScmAware: {
        f.penalty = scm_penalty_score(columns, has_write, s_);
        const double affinity = f.penalty * pages.activation.counter(page);
        observe_decision(s_, f.penalty, affinity);
        f.penalty_level = discretize(f.penalty, s_.max_penalty_seen, s_.n_levels);
        f.avg_level = discretize(s_.moving_avg, s_.max_penalty_seen, s_.n_levels);
        f.affinity_level = dram_affinity_level(f.penalty, pages.activation.counter(page), s_);
        close_decision(s_);
        f.bypass = f.penalty_level <= f.avg_level;
        f.needs_victim_affinity = !f.bypass && victim.valid;
        break;
      }
      case PolicyKind::AlwaysFill: f.bypass = false; break;
      case PolicyKind::AlwaysBypass: f.bypass = true; break;
      case PolicyKind::ProbabilisticFill: f.bypass = !bernoulli(rng, cfg_.probability); break;
      case PolicyKind::AccessCountThreshold:
        f.bypass = page >= pages.accesses.size() || pages.accesses[page] < cfg_.access_threshold;
        break;
    }
    return f;
  }

  /// Completes the decision once the victim's stored metadata is known.
  FillDecision second_stage(const FirstStage& f, const LineMeta& victim, double p_dec, Rng& rng) const {
    if (f.bypass) return {FillDecisionKind::BypassFirstLevel, false};
    if (cfg_.kind == PolicyKind::ScmAware)
      return decide_fill(f.penalty_level, f.avg_level, f.affinity_level, victim, p_dec, rng);
    return {victim.valid ? FillDecisionKind::FillReplace : FillDecisionKind::FillInvalid, false};
  }

 private:
  PolicyConfig cfg_;
  ScorePipelineState s_;
};

}  // namespace hmsim
