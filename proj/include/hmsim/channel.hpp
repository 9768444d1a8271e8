#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <deque>
#include <limits>
#include <optional>
#include <queue>
#include <string_view>
#include <utility>
#include <vector>

#include "hmsim/energy.hpp"
#include "hmsim/geometry.hpp"
#include "hmsim/timing.hpp"
#include "hmsim/types.hpp"

namespace hmsim {

inline constexpr Cycle kNever = std::numeric_limits<Cycle>::max();

/// Traffic categories; every column transfer on a bus is attributed to one.
enum class TrafficCategory : std::uint8_t {
  DemandDramRd, DemandDramWr, DemandScmRd, DemandScmWr, Probe, MetadataWriteback,
  FillScmRd, FillDramWr, EvictDramRd, EvictScmWr, Count
};

inline constexpr std::array<std::string_view, static_cast<std::size_t>(TrafficCategory::Count)> kTrafficNames = {
    "demand_dram_rd", "demand_dram_wr", "demand_scm_rd", "demand_scm_wr", "probe",
    "metadata_writeback", "fill_scm_rd", "fill_dram_wr", "evict_dram_rd", "evict_scm_wr"};

using TrafficCounts = std::array<std::uint64_t, static_cast<std::size_t>(TrafficCategory::Count)>;

struct BankState {
  std::optional<std::uint32_t> open_row;
  Cycle act_ready = 0;
  Cycle col_ready = 0;
  Cycle pre_ready = 0;
  Cycle busy_until = 0;  ///< blocked (refresh) until this cycle
  Cycle act_at = 0;
  Cycle last_cmd = kNever;
  bool row_dirty = false;
  std::uint64_t dirty_columns = 0;
};

/// One column access handed to the memory controller.
struct ColumnRequest {
  Rank rank = Rank::Dram;
  std::uint32_t bank = 0;  ///< bank id within the channel
  std::uint32_t row = 0;
  std::uint32_t column = 0;
  Op op = Op::Read;
  TrafficCategory category = TrafficCategory::DemandDramRd;
  std::uint64_t token = 0;  ///< returned on completion
  std::uint64_t page = 0;   ///< home page for activation counting
};

enum class CommandKind : std::uint8_t { Act, Pre, Rd, Wr };

struct Command {
  CommandKind kind = CommandKind::Act;
  Rank rank = Rank::Dram;
  std::uint32_t bank = 0;
  std::uint32_t row = 0;
  std::uint64_t request_id = 0;  ///< arrival sequence number of the request served
  bool operator==(const Command&) const = default;
};

struct IssuedCommand {
  Command command;
  Cycle at = 0;
  TrafficCategory category = TrafficCategory::DemandDramRd;  ///< column commands only
};

struct Completion {
  std::uint64_t token = 0;
  Cycle cycle = 0;
};

struct ChannelOptions {
  Cycle starvation_limit = 10'000;
  bool scm_pre_full_row = false;  ///< charge SCM write-back on the whole row instead of dirty columns
};

/// A memory channel shared by one DRAM rank and one SCM rank. Requests queue per
/// bank; each cycle the controller issues at most one column command (the bus
/// carries one 32 B column per cycle) and any number of ACT/PRE commands on
/// distinct banks. Column commands follow FR-FCFS: ready row hits first, oldest
/// first; a request that has waited longer than the starvation limit blocks
/// younger hits to its bank so its precharge can go out.
class Channel {
 public:
  Channel(const DeviceGeometry& geo, TimingParams dram, TimingParams scm, ChannelOptions opts = {})
      : banks_per_rank_(geo.banks_per_channel()),
        row_bits_(std::uint64_t{geo.row_bytes} * 8),
        column_bits_(std::uint64_t{geo.column_bytes} * 8),
        dram_(dram),
        scm_base_(scm),
        scm_(scm),
        opts_(opts),
        banks_(2 * banks_per_rank_),
        queues_(2 * banks_per_rank_) {
    next_refresh_at_ = dram_.refresh_interval ? dram_.refresh_interval : kNever;
  }

  void set_throttle(ThrottleFlags f) {
    throttle_ = f;
    scm_ = apply_throttle(scm_base_, f);
  }
  ThrottleFlags throttle() const { return throttle_; }
  const TimingParams& timing(Rank r) const { return r == Rank::Dram ? dram_ : scm_; }
  const BankState& bank(Rank r, std::uint32_t b) const { return banks_[index(r, b)]; }

  /// Queues a request arriving at `now`; returns its arrival sequence number.
  std::uint64_t enqueue(const ColumnRequest& req, Cycle now) {
    const std::uint64_t id = next_id_++;
    queues_[index(req.rank, req.bank)].push_back({req, id, now});
    ++queued_;
    return id;
  }

  /// Highest-priority command that can issue at `now`, or none.
  std::optional<Command> schedule_frfcfs(Cycle now) const {
    if (auto c = pick_column(now)) return c;
    return pick_row_command(now);
  }

  /// Advances the controller to `now`: refresh, command issue, completions.
  void tick(Cycle now, std::vector<Completion>& done) {
    process_refresh(now);
    wake_ = kNever;
    if (queued_ > 0) {
      if (auto c = pick_column(now)) issue(*c, now);
      while (auto c = pick_row_command(now)) issue(*c, now);
      compute_wake(now);
    }
    while (!inflight_.empty() && inflight_.top().cycle <= now) {
      done.push_back({inflight_.top().token, inflight_.top().cycle});
      inflight_.pop();
    }
  }

  /// Earliest cycle after `now` at which tick() may do anything; kNever when idle.
  Cycle next_wake(Cycle now) const {
    Cycle w = wake_;
    if (!inflight_.empty()) w = std::min(w, inflight_.top().cycle);
    return std::max(w, now + 1);
  }

  bool idle() const { return queued_ == 0 && inflight_.empty(); }
  std::size_t queued() const { return queued_; }

  struct ServiceResult {
    Cycle completion = 0;
    std::vector<EnergyEvent> events;
  };

  /// Issues one column access at `now` and runs the controller until it completes.
  /// Meant for an otherwise quiet channel; other queued work keeps its priority.
  ServiceResult service_column(const AddressDecomposition& target, Rank rank, Op op, Cycle now,
                               const DeviceGeometry& geo) {
    const std::size_t first_event = events_.size();
    ColumnRequest r;
    r.rank = rank;
    r.bank = target.bank_id(geo);
    r.row = target.row;
    r.column = target.column;
    r.op = op;
    r.category = rank == Rank::Dram ? (op == Op::Read ? TrafficCategory::DemandDramRd : TrafficCategory::DemandDramWr)
                                    : (op == Op::Read ? TrafficCategory::DemandScmRd : TrafficCategory::DemandScmWr);
    r.token = kServiceToken;
    enqueue(r, now);
    std::vector<Completion> done;
    Cycle t = now;
    for (;;) {
      tick(t, done);
      for (const auto& c : done)
        if (c.token == kServiceToken) {
          ServiceResult res{c.cycle, {events_.begin() + static_cast<std::ptrdiff_t>(first_event), events_.end()}};
          return res;
        }
      done.clear();
      t = next_wake(t);
    }
  }

  /// Processes refresh windows due up to `now`. Also called at end of run.
  void process_refresh(Cycle now) {
    while (next_refresh_at_ <= now) {
      Cycle start = next_refresh_at_;
      for (std::uint32_t b = 0; b < banks_per_rank_; ++b) {
        const auto& bs = banks_[index(Rank::Dram, b)];
        if (bs.open_row) start = std::max(start, bs.pre_ready);
        start = std::max(start, bs.busy_until);
      }
      if (start > now) return;
      do_refresh(start);
    }
  }

  /// Moves out energy events recorded since the last drain.
  std::vector<EnergyEvent> drain_events() { return std::exchange(events_, {}); }

  // Statistics.
  std::uint64_t bus_columns() const { return bus_columns_; }
  Cycle bus_busy_cycles() const { return bus_busy_; }
  const TrafficCounts& traffic() const { return traffic_; }
  std::uint64_t refreshes() const { return refreshes_; }
  const std::vector<Cycle>& refresh_starts() const { return refresh_starts_; }
  std::uint64_t activations(Rank r) const { return acts_[r == Rank::Dram ? 0 : 1]; }
  std::uint64_t column_commands(Rank r) const { return cols_[r == Rank::Dram ? 0 : 1]; }
  std::uint64_t window_columns() const { return window_columns_; }
  /// Records every issued command; off by default.
  void enable_command_log(bool on = true) { log_commands_ = on; }
  const std::vector<IssuedCommand>& command_log() const { return command_log_; }
  void reset_window_columns() { window_columns_ = 0; }
  void reset_stats() {
    bus_columns_ = 0;
    bus_busy_ = 0;
    traffic_.fill(0);
    refreshes_ = 0;
    refresh_starts_.clear();
    acts_ = {};
    cols_ = {};
  }

 private:
  static constexpr std::uint64_t kServiceToken = ~std::uint64_t{0};

  struct Queued {
    ColumnRequest req;
    std::uint64_t id;
    Cycle arrival;
  };
  struct Inflight {
    Cycle cycle;
    std::uint64_t seq;
    std::uint64_t token;
    bool operator>(const Inflight& o) const { return cycle != o.cycle ? cycle > o.cycle : seq > o.seq; }
  };

  std::size_t index(Rank r, std::uint32_t b) const { return (r == Rank::Dram ? 0 : banks_per_rank_) + b; }
  Rank rank_of(std::size_t i) const { return i < banks_per_rank_ ? Rank::Dram : Rank::Scm; }
  std::uint32_t bank_of(std::size_t i) const { return static_cast<std::uint32_t>(i % banks_per_rank_); }

  bool refresh_blocked(Rank r, Cycle now) const { return r == Rank::Dram && next_refresh_at_ <= now; }
  bool starving(const Queued& q, Cycle now) const { return now >= q.arrival + opts_.starvation_limit; }

  /// Oldest request in the bank is starving and targets a row other than the open one.
  bool has_starving_conflict(const std::deque<Queued>& q, const BankState& bs, Cycle now) const {
    const Queued& head = q.front();
    return starving(head, now) && (!bs.open_row || head.req.row != *bs.open_row);
  }

  std::optional<Command> pick_column(Cycle now) const {
    std::optional<Command> best;
    bool best_starving = false;
    for (std::size_t i = 0; i < queues_.size(); ++i) {
      const auto& q = queues_[i];
      if (q.empty()) continue;
      const auto& bs = banks_[i];
      const Rank r = rank_of(i);
      if (!bs.open_row || bs.last_cmd == now || now < bs.col_ready || refresh_blocked(r, now)) continue;
      if (now + timing(r).tCL < bus_free_at_) continue;
      if (has_starving_conflict(q, bs, now)) continue;
      for (const auto& e : q) {
        if (e.req.row != *bs.open_row) continue;
        const bool st = starving(e, now);
        if (!best || (st && !best_starving) || (st == best_starving && e.id < best->request_id)) {
          best = Command{e.req.op == Op::Read ? CommandKind::Rd : CommandKind::Wr, r, bank_of(i), e.req.row, e.id};
          best_starving = st;
        }
        break;  // queue is in arrival order; first hit is the bank's oldest hit
      }
    }
    return best;
  }

  std::optional<Command> pick_row_command(Cycle now) const {
    std::optional<Command> best;
    for (std::size_t i = 0; i < queues_.size(); ++i) {
      const auto& q = queues_[i];
      if (q.empty()) continue;
      const auto& bs = banks_[i];
      const Rank r = rank_of(i);
      if (bs.last_cmd == now || refresh_blocked(r, now) || now < bs.busy_until) continue;
      const Queued& oldest = q.front();
      std::optional<Command> c;
      if (!bs.open_row) {
        if (now >= bs.act_ready) c = Command{CommandKind::Act, r, bank_of(i), oldest.req.row, oldest.id};
      } else {
        bool pending_hit = false;
        for (const auto& e : q)
          if (e.req.row == *bs.open_row) {
            pending_hit = true;
            break;
          }
        const bool force = has_starving_conflict(q, bs, now);
        if ((!pending_hit || force) && now >= bs.pre_ready)
          c = Command{CommandKind::Pre, r, bank_of(i), *bs.open_row, oldest.id};
      }
      if (c && (!best || c->request_id < best->request_id)) best = c;
    }
    return best;
  }

  void compute_wake(Cycle now) {
    Cycle w = kNever;
    if (next_refresh_at_ <= now) w = now + 1;
    for (std::size_t i = 0; i < queues_.size() && w > now + 1; ++i) {
      const auto& q = queues_[i];
      if (q.empty()) continue;
      const auto& bs = banks_[i];
      const Rank r = rank_of(i);
      Cycle t;
      if (!bs.open_row) {
        t = std::max(bs.act_ready, bs.busy_until);
      } else {
        bool pending_hit = false;
        for (const auto& e : q)
          if (e.req.row == *bs.open_row) {
            pending_hit = true;
            break;
          }
        const Cycle tcl = timing(r).tCL;
        const Cycle col = std::max(bs.col_ready, bus_free_at_ > tcl ? bus_free_at_ - tcl : 0);
        t = pending_hit ? col : bs.pre_ready;
        // a request may start starving before then and force a precharge
        const Cycle starve = q.front().arrival + opts_.starvation_limit;
        t = std::min(t, std::max(starve, bs.pre_ready));
      }
      if (r == Rank::Dram) t = std::min(t, next_refresh_at_);
      w = std::min(w, std::max(t, now + 1));
    }
    wake_ = w;
  }

  void issue(const Command& c, Cycle now) {
    const std::size_t bi = index(c.rank, c.bank);
    BankState& bs = banks_[bi];
    const TimingParams& t = timing(c.rank);
    bs.last_cmd = now;
    if (log_commands_) command_log_.push_back({c, now, TrafficCategory::DemandDramRd});
    switch (c.kind) {
      case CommandKind::Act: {
        const auto& q = queues_[bi];
        bs.open_row = c.row;
        bs.act_at = now;
        bs.col_ready = now + t.tRCD;
        bs.pre_ready = now + t.tRAS;
        bs.row_dirty = false;
        bs.dirty_columns = 0;
        ++acts_[c.rank == Rank::Dram ? 0 : 1];
        events_.push_back({EnergyKind::Act, c.rank, row_bits_, now, q.front().req.page});
        break;
      }
      case CommandKind::Pre:
        precharge(bs, c.rank, now);
        bs.act_ready = now + t.tRP;
        break;
      case CommandKind::Rd:
      case CommandKind::Wr: {
        auto& q = queues_[bi];
        auto it = std::find_if(q.begin(), q.end(), [&](const Queued& e) { return e.id == c.request_id; });
        const ColumnRequest req = it->req;
        q.erase(it);
        if (log_commands_) command_log_.back().category = req.category;
        --queued_;
        const Cycle end = now + t.tCL + t.tBL;
        bus_free_at_ = end;
        bus_busy_ += t.tBL;
        ++bus_columns_;
        ++window_columns_;
        ++traffic_[static_cast<std::size_t>(req.category)];
        ++cols_[c.rank == Rank::Dram ? 0 : 1];
        bs.col_ready = std::max(bs.col_ready, now + t.tBL);
        if (c.kind == CommandKind::Rd) {
          bs.pre_ready = std::max(bs.pre_ready, now + t.tBL);
          events_.push_back({EnergyKind::Rd, c.rank, column_bits_, now, 0});
        } else {
          bs.pre_ready = std::max(bs.pre_ready, end + t.tWR);
          bs.row_dirty = true;
          bs.dirty_columns |= std::uint64_t{1} << (req.column & 63);
          events_.push_back({EnergyKind::Wr, c.rank, column_bits_, now, 0});
        }
        inflight_.push({end, inflight_seq_++, req.token});
        break;
      }
    }
  }

  void precharge(BankState& bs, Rank r, Cycle now) {
    if (r == Rank::Dram) {
      events_.push_back({EnergyKind::Pre, r, row_bits_, now, 0});
    } else if (bs.dirty_columns) {
      const std::uint64_t bits =
          opts_.scm_pre_full_row ? row_bits_ : column_bits_ * static_cast<std::uint64_t>(std::popcount(bs.dirty_columns));
      events_.push_back({EnergyKind::Pre, r, bits, now, 0});
    }
    bs.open_row.reset();
    bs.row_dirty = false;
    bs.dirty_columns = 0;
  }

  void do_refresh(Cycle start) {
    const Cycle end = start + dram_.tRP + dram_.refresh_duration;
    for (std::uint32_t b = 0; b < banks_per_rank_; ++b) {
      auto& bs = banks_[index(Rank::Dram, b)];
      if (bs.open_row) precharge(bs, Rank::Dram, start);
      bs.busy_until = std::max(bs.busy_until, end);
      bs.act_ready = std::max(bs.act_ready, end);
    }
    events_.push_back({EnergyKind::Refresh, Rank::Dram, row_bits_ * banks_per_rank_, start, 0});
    ++refreshes_;
    refresh_starts_.push_back(start);
    next_refresh_at_ += dram_.refresh_interval;
  }

  std::uint32_t banks_per_rank_;
  std::uint64_t row_bits_;
  std::uint64_t column_bits_;
  TimingParams dram_;
  TimingParams scm_base_;
  TimingParams scm_;
  ThrottleFlags throttle_;
  ChannelOptions opts_;
  std::vector<BankState> banks_;
  std::vector<std::deque<Queued>> queues_;
  std::size_t queued_ = 0;
  std::uint64_t next_id_ = 0;
  Cycle bus_free_at_ = 0;
  Cycle next_refresh_at_ = kNever;
  Cycle wake_ = kNever;
  std::priority_queue<Inflight, std::vector<Inflight>, std::greater<>> inflight_;
  std::uint64_t inflight_seq_ = 0;
  std::vector<EnergyEvent> events_;
  bool log_commands_ = false;
  std::vector<IssuedCommand> command_log_;

  std::uint64_t bus_columns_ = 0;
  Cycle bus_busy_ = 0;
  std::uint64_t window_columns_ = 0;
  TrafficCounts traffic_{};
  std::uint64_t refreshes_ = 0;
  std::vector<Cycle> refresh_starts_;
  std::array<std::uint64_t, 2> acts_{};
  std::array<std::uint64_t, 2> cols_{};
};

}  // namespace hmsim
