#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <queue>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "hmsim/bypass.hpp"
#include "hmsim/channel.hpp"
#include "hmsim/config.hpp"
#include "hmsim/dram_cache.hpp"
#include "hmsim/energy.hpp"
#include "hmsim/geometry.hpp"
#include "hmsim/l2_ctc.hpp"
#include "hmsim/stats.hpp"
#include "hmsim/workload.hpp"

namespace hmsim {

/// Supplies sector requests in program order.
class RequestSource {
 public:
  virtual ~RequestSource() = default;
  virtual bool has_next() const = 0;
  virtual const TraceRecord& peek() const = 0;
  virtual void pop() = 0;
};

class VectorSource final : public RequestSource {
 public:
  explicit VectorSource(std::vector<TraceRecord> r) : recs_(std::move(r)) {}
  bool has_next() const override { return pos_ < recs_.size(); }
  const TraceRecord& peek() const override { return recs_[pos_]; }
  void pop() override { ++pos_; }

 private:
  std::vector<TraceRecord> recs_;
  std::size_t pos_ = 0;
};

class GeneratorSource final : public RequestSource {
 public:
  GeneratorSource(const PatternSpec& spec, std::uint64_t seed, std::uint64_t length)
      : gen_(spec, seed), left_(length) {
    if (left_) cur_ = gen_.next();
  }
  bool has_next() const override { return left_ > 0; }
  const TraceRecord& peek() const override { return cur_; }
  void pop() override {
    if (--left_) cur_ = gen_.next();
  }

 private:
  PatternGenerator gen_;
  std::uint64_t left_;
  TraceRecord cur_;
};

inline constexpr unsigned kPageBits = 21;  // 2 MiB activation-counter pages

/// Event-driven simulator of the memory subsystem. One instance runs one experiment.
///
/// Requests are 32 B sectors. In cache mode each passes the channel's L2 slice;
/// misses and dirty write-backs enter the channel's DRAM-cache controller after
/// the L2 latency. The controller keeps one transaction per DRAM-cache set and
/// an MSHR slot per transaction. Flat mode routes L2 traffic by address range
/// (DRAM first, SCM above it); device mode sends every request straight to one
/// rank with no L2, for raw channel characterization.
class Simulator {
 public:
  explicit Simulator(const ExperimentConfig& cfg)
      : cfg_(cfg),
        geo_(cfg.geometry),
        rng_(cfg.engine.seed),
        monitor_(cfg.power.window, cfg.power.budget_w, cfg.power.hysteresis) {
    cfg_.validate();
    const TimingParams scm = cfg_.scm();
    const L2Config l2 = cfg_.effective_l2();
    const std::uint64_t pages = (cfg_.address_space() + (1ull << kPageBits) - 1) >> kPageBits;
    pages_ = PageTables(pages, cfg_.policy.activation_counters);
    ChannelOptions opts;
    opts.starvation_limit = cfg_.starvation_limit;
    opts.scm_pre_full_row = cfg_.scm_pre_full_row;
    for (std::uint32_t c = 0; c < geo_.channels; ++c) {
      auto ctx = std::make_unique<ChanCtx>(geo_, cfg_.dram, scm, opts, l2, cfg_, c);
      chans_.push_back(std::move(ctx));
    }
  }

  StatsReport run(RequestSource& src) {
    src_ = &src;
    stats_start_ = 0;
    loop();
    return finish();
  }

  /// Runs the configured workload (generated pattern or trace file).
  StatsReport run() {
    if (!cfg_.workload.trace_file.empty()) {
      std::ifstream in(cfg_.workload.trace_file);
      if (!in) throw ConfigError("cannot open trace '" + cfg_.workload.trace_file + "'");
      VectorSource s(parse_trace(in, cfg_.address_space()));
      return run(s);
    }
    GeneratorSource s(cfg_.pattern_spec(), cfg_.engine.seed, cfg_.workload.length);
    return run(s);
  }

  const ExperimentConfig& config() const { return cfg_; }

 private:
  // ---- bookkeeping records -------------------------------------------------

  struct Request {
    Addr addr = 0;
    Op op = Op::Read;
    std::uint32_t stream = 0;
    std::uint64_t value = 0;     ///< data written, or data returned
    std::uint64_t expected = 0;  ///< read: program-order value at the L2
    Cycle inject = 0;
    Cycle ready_at = 0;
    std::uint32_t deps = 0;
    bool check = false;
    bool live = false;
  };

  /// A sector access leaving the L2 towards memory.
  struct Access {
    Addr addr = 0;
    Op op = Op::Read;
    std::uint64_t value = 0;
    std::vector<std::uint32_t> waiters;
    bool live = false;
  };

  enum class Purpose : std::uint8_t {
    Direct, Probe, Demand, AffinityRead, EvictRead, EvictWrite, FillRead, FillWrite, MetaRead, MetaWrite, BgMetaRead, BgMetaWrite
  };

  struct OpTag {
    Purpose purpose = Purpose::Direct;
    std::uint32_t owner = 0;
    std::uint32_t aux = 0;
    std::uint32_t channel = 0;
  };

  enum class Phase : std::uint8_t { Lookup, Probe, Hit, MissDemand, AffinityRead, Fill };

  struct Member {
    std::uint32_t access;
    std::uint32_t sector;
    Op op;
  };

  struct Txn {
    bool live = false;
    std::uint32_t channel = 0;
    std::uint64_t line = 0;  ///< SCM line number
    std::uint64_t set = 0;
    std::uint32_t tag = 0;
    std::uint32_t lir = 0;
    std::uint64_t row = 0;  ///< channel-local DRAM row id
    AddressDecomposition row_loc;
    std::uint32_t slot = 0;
    std::vector<Member> members;
    bool open = true;
    Phase phase = Phase::Lookup;
    std::uint32_t outstanding = 0;
    bool meta_known = false;
    std::optional<std::uint32_t> probe_served_sector;
    LineMeta victim;
    FirstStage first;
    std::uint64_t page = 0;
    std::uint32_t evict_reads_left = 0;
    std::vector<std::uint32_t> parked_fill_sectors;
    std::vector<Cycle> member_done;
  };

  struct ChanCtx {
    Channel ch;
    L2Slice l2;
    MshrTable mshr;
    BypassUnit bypass;
    EnergyLedger ledger;
    std::vector<PowerSample> samples;
    std::unordered_map<std::uint64_t, std::uint32_t> owner;
    std::unordered_map<std::uint64_t, std::deque<std::uint32_t>> set_queue;
    std::deque<std::uint64_t> admit_fifo;
    std::unordered_set<std::uint64_t> in_fifo;
    Cycle wake = kNever;
    std::uint64_t window_columns = 0;

    ChanCtx(const DeviceGeometry& g, const TimingParams& dram, const TimingParams& scm, const ChannelOptions& o,
            const L2Config& l2c, const ExperimentConfig& cfg, std::uint32_t index)
        : ch(g, dram, scm, o),
          l2(l2c, g),
          mshr(cfg.cache.mshr_entries),
          bypass(cfg.policy, ScorePipelineState::from_timing(dram, scm, cfg.policy.n_levels, cfg.policy.f_update)),
          ledger(cfg.energy) {
      l2.set_channel(index);
    }
  };

  struct Event {
    Cycle cycle;
    std::uint64_t seq;
    std::uint8_t kind;
    std::uint32_t id;
    bool operator>(const Event& o) const { return cycle != o.cycle ? cycle > o.cycle : seq > o.seq; }
  };
  enum EventKind : std::uint8_t { kArrive = 0, kCtcLookup = 1, kRequestReady = 2 };

  template <class T>
  struct Slab {
    std::vector<T> items;
    std::vector<std::uint32_t> free;
    std::uint32_t alloc() {
      if (!free.empty()) {
        const std::uint32_t i = free.back();
        free.pop_back();
        items[i] = T{};
        items[i].live = true;
        return i;
      }
      items.emplace_back();
      items.back().live = true;
      return static_cast<std::uint32_t>(items.size() - 1);
    }
    void release(std::uint32_t i) {
      items[i].live = false;
      free.push_back(i);
    }
    T& operator[](std::uint32_t i) { return items[i]; }
    std::size_t live() const { return items.size() - free.size(); }
  };

  // ---- main loop -----------------------------------------------------------

  void loop() {
    Cycle now = 0;
    warming_ = cfg_.engine.warmup_requests > 0;
    next_window_ = cfg_.power.window;
    for (;;) {
      while (now >= next_window_) close_window(next_window_);
      bool more = inject(now);
      while (!events_.empty() && events_.top().cycle <= now) {
        const Event e = events_.top();
        events_.pop();
        dispatch(e, now);
      }
      for (std::uint32_t c = 0; c < chans_.size(); ++c) tick_channel(c, now);

      bool drained = outstanding_ == 0 && events_.empty() && txns_.live() == 0 && bg_ops_ == 0 &&
                     std::all_of(chans_.begin(), chans_.end(), [](const auto& c) { return c->ch.idle(); });
      if (warming_ && drained && injected_total_ == cfg_.engine.warmup_requests) {
        warming_ = false;
        reset_stats(now);
        more = src_->has_next();
      }
      const bool busy = src_->has_next() || !drained;
      if (!busy) {
        end_ = now;
        break;
      }
      Cycle next = kNever;
      if (more) next = now + 1;
      if (!events_.empty()) next = std::min(next, events_.top().cycle);
      for (const auto& c : chans_) next = std::min(next, c->wake);
      next = std::min(next, next_window_);
      next = std::max(next, now + 1);
      if (next == kNever) throw std::logic_error("simulator deadlock: work pending but nothing scheduled");
      now = next;
    }
  }

  /// Injects up to issue_width requests; returns true when more could go next cycle.
  bool inject(Cycle now) {
    for (std::uint32_t n = 0; n < cfg_.engine.issue_width; ++n) {
      if (!src_->has_next()) return false;
      const TraceRecord& rec = src_->peek();
      if (rec.stream >= stream_out_.size()) stream_out_.resize(rec.stream + 1, 0);
      if (stream_out_[rec.stream] >= cfg_.engine.stream_window) return false;
      if (warming_ && injected_total_ == cfg_.engine.warmup_requests) return false;
      issue_request(rec, now);
      src_->pop();
    }
    return src_->has_next();
  }

  void issue_request(const TraceRecord& rec, Cycle now) {
    const std::uint32_t id = reqs_.alloc();
    Request& r = reqs_[id];
    r.addr = rec.address;
    r.op = rec.op;
    r.stream = rec.stream;
    r.inject = now;
    ++stream_out_[rec.stream];
    ++outstanding_;
    ++injected_;
    ++injected_total_;
    (rec.op == Op::Read ? reads_ : writes_) += 1;
    if (rec.op == Op::Write) {
      r.value = ++write_serial_;
      if (cfg_.engine.check_values) shadow_[r.addr] = r.value;
    } else if (cfg_.engine.check_values) {
      auto it = shadow_.find(r.addr);
      r.expected = it == shadow_.end() ? 0 : it->second;
      r.check = true;
    }

    if (cfg_.engine.mode == SimMode::Device) {
      r.ready_at = now;
      const std::uint32_t a = new_access(r.addr % cfg_.address_space(), r.op, r.value);
      add_waiter(a, id);
      arrive(a, now);
      return;
    }

    ChanCtx& cx = *chans_[channel_of(r.addr)];
    r.ready_at = now + cx.l2.config().latency;
    if (rec.op == Op::Read) {
      L2Result res = cx.l2.read(r.addr);
      if (res.hit) {
        r.value = res.value;
      } else if (auto it = pending_reads_.find(r.addr); it != pending_reads_.end()) {
        add_waiter(it->second, id);
      } else {
        const std::uint32_t a = new_access(r.addr, Op::Read, 0);
        pending_reads_.emplace(r.addr, a);
        add_waiter(a, id);
        push_event(r.ready_at, kArrive, a);
      }
    } else {
      L2Result res = cx.l2.write(r.addr, r.value);
      send_writebacks(res.writebacks, {id}, r.ready_at);
    }
    push_event(r.ready_at, kRequestReady, id);
  }

  void send_writebacks(const std::vector<L2Writeback>& wbs, const std::vector<std::uint32_t>& owners, Cycle at) {
    for (const auto& wb : wbs) {
      const std::uint32_t a = new_access(wb.sector_addr, Op::Write, wb.value);
      for (std::uint32_t o : owners) add_waiter(a, o);
      push_event(at, kArrive, a);
    }
  }

  std::uint32_t new_access(Addr addr, Op op, std::uint64_t value) {
    const std::uint32_t a = accesses_.alloc();
    accesses_[a].addr = addr;
    accesses_[a].op = op;
    accesses_[a].value = value;
    return a;
  }

  void add_waiter(std::uint32_t access, std::uint32_t req) {
    accesses_[access].waiters.push_back(req);
    ++reqs_[req].deps;
  }

  void push_event(Cycle at, std::uint8_t kind, std::uint32_t id) { events_.push({at, event_seq_++, kind, id}); }

  void dispatch(const Event& e, Cycle now) {
    switch (e.kind) {
      case kArrive: arrive(e.id, now); break;
      case kCtcLookup: ctc_lookup(e.id, now); break;
      case kRequestReady: try_complete(e.id, now); break;
      default: break;
    }
  }

  void tick_channel(std::uint32_t c, Cycle now) {
    ChanCtx& cx = *chans_[c];
    if (cx.wake > now) return;
    tick_buf_.clear();
    cx.ch.tick(now, tick_buf_);
    cx.wake = cx.ch.idle() ? kNever : cx.ch.next_wake(now);
    charge_energy(cx);
    for (const auto& done : tick_buf_) on_op_done(done.token, done.cycle);
  }

  void charge_energy(ChanCtx& cx) {
    for (const auto& ev : cx.ch.drain_events()) {
      cx.ledger.record(ev);
      if (ev.kind == EnergyKind::Act) pages_.activation.bump(ev.page);
    }
  }

  // ---- column operations -----------------------------------------------------

  void issue_op(std::uint32_t ch, Rank rank, const AddressDecomposition& d, Op op, TrafficCategory cat, Purpose p,
                std::uint32_t owner, std::uint32_t aux, std::uint64_t page, Cycle now) {
    std::uint32_t token;
    if (!free_tags_.empty()) {
      token = free_tags_.back();
      free_tags_.pop_back();
    } else {
      token = static_cast<std::uint32_t>(tags_.size());
      tags_.emplace_back();
    }
    tags_[token] = {p, owner, aux, ch};
    ColumnRequest req;
    req.rank = rank;
    req.bank = d.bank_id(geo_);
    req.row = d.row;
    req.column = d.column;
    req.op = op;
    req.category = cat;
    req.token = token;
    req.page = page;
    ChanCtx& cx = *chans_[ch];
    cx.ch.enqueue(req, now);
    cx.wake = std::min(cx.wake, now);
    if (p == Purpose::BgMetaRead || p == Purpose::BgMetaWrite) {
      ++bg_ops_;
    } else if (p != Purpose::Direct) {
      ++txns_[owner].outstanding;
    }
  }

  void on_op_done(std::uint64_t token, Cycle now) {
    const OpTag tag = tags_[token];
    free_tags_.push_back(static_cast<std::uint32_t>(token));
    switch (tag.purpose) {
      case Purpose::Direct: access_done(tag.owner, now); return;
      case Purpose::BgMetaRead:
        --bg_ops_;
        issue_op(tag.channel, Rank::Dram, meta_column(tag.channel, tag.owner), Op::Write,
                 TrafficCategory::MetadataWriteback, Purpose::BgMetaWrite, tag.owner, 0, 0, now);
        return;
      case Purpose::BgMetaWrite: --bg_ops_; return;
      default: break;
    }
    Txn& t = txns_[tag.owner];
    --t.outstanding;
    switch (tag.purpose) {
      case Purpose::Demand:
        t.member_done[tag.aux] = now;
        access_done(t.members[tag.aux].access, now);
        break;
      case Purpose::EvictRead:
        issue_op(t.channel, Rank::Scm, decompose_address(victim_home(t) + Addr{tag.aux} * geo_.column_bytes, geo_), Op::Write,
                 TrafficCategory::EvictScmWr, Purpose::EvictWrite, tag.owner, 0, t.page, now);
        if (--t.evict_reads_left == 0) {
          for (std::uint32_t s : t.parked_fill_sectors) issue_fill_write(tag.owner, s, now);
          t.parked_fill_sectors.clear();
        }
        break;
      case Purpose::FillRead:
        if (t.evict_reads_left == 0)
          issue_fill_write(tag.owner, tag.aux, now);
        else
          t.parked_fill_sectors.push_back(tag.aux);
        break;
      case Purpose::MetaRead:
        issue_op(t.channel, Rank::Dram, meta_location(t), Op::Write, TrafficCategory::MetadataWriteback, Purpose::MetaWrite,
                 tag.owner, 0, t.page, now);
        break;
      default: break;
    }
    advance(tag.owner, now);
  }

  void issue_fill_write(std::uint32_t txn, std::uint32_t sector, Cycle now) {
    Txn& t = txns_[txn];
    issue_op(t.channel, Rank::Dram, dram_location(t.set, sector, geo_), Op::Write, TrafficCategory::FillDramWr,
             Purpose::FillWrite, txn, sector, t.page, now);
  }

  // ---- memory side ------------------------------------------------------------

  std::uint32_t channel_of(Addr addr) const {
    return static_cast<std::uint32_t>((addr >> (geo_.byte_bits() + geo_.col_in_line_bits())) & low_mask(geo_.channel_bits()));
  }

  void arrive(std::uint32_t a, Cycle now) {
    Access& ac = accesses_[a];
    switch (cfg_.engine.mode) {
      case SimMode::Device: {
        const Rank r = cfg_.engine.device_target;
        const AddressDecomposition d = decompose_address(ac.addr, geo_, r);
        functional_flat(ac);
        issue_op(d.channel, r, d, ac.op, demand_category(r, ac.op), Purpose::Direct, a, 0, ac.addr >> kPageBits, now);
        return;
      }
      case SimMode::Flat: {
        const std::uint64_t dram_cap = geo_.capacity(Rank::Dram);
        const Rank r = ac.addr < dram_cap ? Rank::Dram : Rank::Scm;
        const AddressDecomposition d = decompose_address(r == Rank::Dram ? ac.addr : ac.addr - dram_cap, geo_, r);
        functional_flat(ac);
        issue_op(d.channel, r, d, ac.op, demand_category(r, ac.op), Purpose::Direct, a, 0, ac.addr >> kPageBits, now);
        return;
      }
      case SimMode::Cache: break;
    }
    const DramCacheIndex idx = dram_cache_index(ac.addr, geo_);
    const std::uint32_t c = channel_of(ac.addr);
    ChanCtx& cx = *chans_[c];
    pages_.note_access(ac.addr >> kPageBits);
    if (cfg_.cache.layout == MetadataLayout::Amil && is_metadata_column(idx, geo_)) {
      ++uncacheable_;
      functional_scm(ac);
      issue_op(c, Rank::Scm, decompose_address(ac.addr, geo_), ac.op, demand_category(Rank::Scm, ac.op), Purpose::Direct, a,
               0, ac.addr >> kPageBits, now);
      return;
    }
    const std::uint64_t line = ac.addr >> geo_.line_offset_bits();
    if (auto it = cx.owner.find(idx.set); it != cx.owner.end()) {
      Txn& t = txns_[it->second];
      auto q = cx.set_queue.find(idx.set);
      if (t.open && t.line == line && (q == cx.set_queue.end() || q->second.empty())) {
        cx.mshr.insert_or_merge(line, idx.sector, ac.op);
        t.members.push_back({a, idx.sector, ac.op});
        t.member_done.push_back(kNever);
        return;
      }
    }
    cx.set_queue[idx.set].push_back(a);
    if (!cx.owner.count(idx.set) && !cx.in_fifo.count(idx.set)) {
      if (cx.admit_fifo.empty() && !cx.mshr.full()) {
        admit(c, idx.set, now);
      } else {
        ++mshr_stalls_;
        cx.admit_fifo.push_back(idx.set);
        cx.in_fifo.insert(idx.set);
      }
    }
  }

  static TrafficCategory demand_category(Rank r, Op op) {
    if (r == Rank::Dram) return op == Op::Read ? TrafficCategory::DemandDramRd : TrafficCategory::DemandDramWr;
    return op == Op::Read ? TrafficCategory::DemandScmRd : TrafficCategory::DemandScmWr;
  }

  void functional_flat(Access& ac) {
    if (!cfg_.engine.check_values) return;
    if (ac.op == Op::Write)
      flat_store_[ac.addr] = ac.value;
    else
      ac.value = lookup(flat_store_, ac.addr);
  }

  void functional_scm(Access& ac) {
    if (!cfg_.engine.check_values) return;
    if (ac.op == Op::Write)
      scm_store_[ac.addr] = ac.value;
    else
      ac.value = lookup(scm_store_, ac.addr);
  }

  static std::uint64_t lookup(const std::unordered_map<std::uint64_t, std::uint64_t>& m, std::uint64_t k) {
    auto it = m.find(k);
    return it == m.end() ? 0 : it->second;
  }

  void admit(std::uint32_t c, std::uint64_t set, Cycle now) {
    ChanCtx& cx = *chans_[c];
    auto& q = cx.set_queue[set];
    const std::uint32_t first = q.front();
    q.pop_front();
    const Access& ac = accesses_[first];
    const DramCacheIndex idx = dram_cache_index(ac.addr, geo_);
    const std::uint64_t line = ac.addr >> geo_.line_offset_bits();
    const MshrInsert ins = cx.mshr.insert_or_merge(line, idx.sector, ac.op);
    if (ins.outcome != MshrOutcome::NewMiss) throw std::logic_error("mshr admission without a free slot");

    const std::uint32_t id = txns_.alloc();
    Txn& t = txns_[id];
    t.channel = c;
    t.line = line;
    t.set = set;
    t.tag = idx.tag;
    t.lir = line_in_row(set, geo_);
    t.row_loc = dram_location(set, 0, geo_);
    t.row = channel_row_id(t.row_loc, geo_);
    t.slot = ins.slot;
    t.page = ac.addr >> kPageBits;
    t.members.push_back({first, idx.sector, ac.op});
    t.member_done.push_back(kNever);
    while (!q.empty()) {
      const Access& nx = accesses_[q.front()];
      if ((nx.addr >> geo_.line_offset_bits()) != line) break;
      const DramCacheIndex ni = dram_cache_index(nx.addr, geo_);
      cx.mshr.insert_or_merge(line, ni.sector, nx.op);
      t.members.push_back({q.front(), ni.sector, nx.op});
      t.member_done.push_back(kNever);
      q.pop_front();
    }
    if (q.empty()) cx.set_queue.erase(set);
    cx.owner[set] = id;
    ++transactions_;
    if (cx.l2.ctc().enabled())
      push_event(now + cfg_.cache.ctc_latency, kCtcLookup, id);
    else
      start_probe(id, now);
  }

  // ---- transaction pipeline ---------------------------------------------------

  std::uint64_t meta_key(std::uint32_t ch, std::uint64_t row) const { return (std::uint64_t{ch} << 40) | row; }

  RowMetadata stored_meta(std::uint32_t ch, std::uint64_t row) const {
    auto it = dram_meta_.find(meta_key(ch, row));
    return it == dram_meta_.end() ? RowMetadata{} : it->second;
  }

  RowMetadata effective_meta(std::uint32_t ch, std::uint64_t row) const {
    RowMetadata m = stored_meta(ch, row);
    if (auto w = chans_[ch]->l2.ctc().peek(row)) m = ctc_merge(m, *w);
    return m;
  }

  AddressDecomposition meta_location(const Txn& t) const {
    AddressDecomposition d = t.row_loc;
    if (cfg_.cache.layout == MetadataLayout::Amil)
      d.column = geo_.columns_per_row() - 1;
    else
      d.column = t.lir * geo_.columns_per_line();
    return d;
  }

  /// DRAM location of a row's metadata, from a channel-local row id.
  AddressDecomposition meta_column(std::uint32_t ch, std::uint64_t row) const {
    AddressDecomposition d;
    d.channel = ch;
    const std::uint32_t bank = static_cast<std::uint32_t>(row % geo_.banks_per_channel());
    d.bank_group = bank / geo_.banks_per_group;
    d.bank = bank % geo_.banks_per_group;
    d.row = static_cast<std::uint32_t>(row / geo_.banks_per_channel());
    d.column = geo_.columns_per_row() - 1;
    return d;
  }

  Addr victim_home(const Txn& t) const { return scm_line_address(t.set, t.victim.tag, geo_); }

  void ctc_lookup(std::uint32_t id, Cycle now) {
    Txn& t = txns_[id];
    ChanCtx& cx = *chans_[t.channel];
    if (cx.l2.ctc().lookup(t.row)) {
      resolve(id, now);
    } else {
      start_probe(id, now);
    }
  }

  void start_probe(std::uint32_t id, Cycle now) {
    Txn& t = txns_[id];
    t.phase = Phase::Probe;
    t.meta_known = true;
    const bool ctc = chans_[t.channel]->l2.ctc().enabled();
    if (cfg_.cache.layout == MetadataLayout::Amil) {
      issue_op(t.channel, Rank::Dram, meta_location(t), Op::Read, TrafficCategory::Probe, Purpose::Probe, id, 0, t.page, now);
    } else if (ctc) {
      for (std::uint32_t l = 0; l < geo_.lines_per_row(); ++l) {
        AddressDecomposition d = t.row_loc;
        d.column = l * geo_.columns_per_line();
        issue_op(t.channel, Rank::Dram, d, Op::Read, TrafficCategory::Probe, Purpose::Probe, id, 0, t.page, now);
      }
    } else {
      // tags ride in the demanded column's ECC bits; a read hit is served by this access
      const std::uint32_t sector = t.members[0].sector;
      issue_op(t.channel, Rank::Dram, dram_location(t.set, sector, geo_), Op::Read, TrafficCategory::Probe, Purpose::Probe,
               id, 0, t.page, now);
      if (t.members[0].op == Op::Read) t.probe_served_sector = sector;
    }
  }

  /// Called whenever a transaction's op finishes.
  void advance(std::uint32_t id, Cycle now) {
    Txn& t = txns_[id];
    if (t.outstanding > 0) return;
    switch (t.phase) {
      case Phase::Probe: {
        ChanCtx& cx = *chans_[t.channel];
        if (cx.l2.ctc().enabled()) {
          const auto wbs = cx.l2.ctc().fill(t.row, ctc_pack(stored_meta(t.channel, t.row)));
          ctc_writebacks(t.channel, wbs, now);
        }
        resolve(id, now);
        break;
      }
      case Phase::Hit:
      case Phase::Fill: retire(id, now); break;
      case Phase::MissDemand: decide(id, now); break;
      case Phase::AffinityRead: second_stage(id, now); break;
      case Phase::Lookup: break;
    }
  }

  void ctc_writebacks(std::uint32_t ch, const std::vector<CtcWriteback>& wbs, Cycle now) {
    for (const auto& wb : wbs) {
      dram_meta_[meta_key(ch, wb.row)] = ctc_merge(stored_meta(ch, wb.row), wb.word);
      issue_op(ch, Rank::Dram, meta_column(ch, wb.row), Op::Read, TrafficCategory::MetadataWriteback, Purpose::BgMetaRead,
               static_cast<std::uint32_t>(wb.row), 0, 0, now);
    }
  }

  void resolve(std::uint32_t id, Cycle now) {
    Txn& t = txns_[id];
    ChanCtx& cx = *chans_[t.channel];
    t.open = false;
    const LineMeta lm = effective_meta(t.channel, t.row).lines[t.lir];
    const bool hit = lm.valid && lm.tag == t.tag;
    t.victim = lm;
    MshrEntry& e = cx.mshr.entry(t.slot);
    e.ctc_valid = lm.valid;
    e.ctc_dirty = lm.dirty;
    for (const auto& m : t.members) {
      dram_cache_.add(hit);
      (m.op == Op::Read ? dram_cache_read_ : dram_cache_write_).add(hit);
    }
    if (hit) {
      t.phase = Phase::Hit;
      bool wrote = false;
      std::optional<std::uint32_t> served_by_probe;
      for (std::uint32_t i = 0; i < t.members.size(); ++i) {
        const Member& m = t.members[i];
        Access& ac = accesses_[m.access];
        const std::uint64_t slot_key = t.set * 8 + m.sector;
        if (cfg_.engine.check_values) {
          if (m.op == Op::Write)
            dram_store_[slot_key] = ac.value;
          else
            ac.value = lookup(dram_store_, slot_key);
        }
        wrote = wrote || m.op == Op::Write;
        if (i == 0 && t.probe_served_sector == m.sector) {
          served_by_probe = m.access;  // the probe read already returned this column
          continue;
        }
        issue_op(t.channel, Rank::Dram, dram_location(t.set, m.sector, geo_), m.op, demand_category(Rank::Dram, m.op),
                 Purpose::Demand, id, i, t.page, now);
      }
      if (wrote && !lm.dirty) {
        LineMeta nm = lm;
        nm.dirty = true;
        update_line_meta(id, nm, false, true, now);
      }
      const MshrEntry& me = cx.mshr.entry(t.slot);
      cx.bypass.on_hit(me.columns(), me.is_write);
      if (served_by_probe) access_done(*served_by_probe, now);
      advance(id, now);
      return;
    }
    t.phase = Phase::MissDemand;
    for (std::uint32_t i = 0; i < t.members.size(); ++i) {
      const Member& m = t.members[i];
      functional_scm(accesses_[m.access]);
      issue_op(t.channel, Rank::Scm, decompose_address(accesses_[m.access].addr, geo_), m.op, demand_category(Rank::Scm, m.op),
               Purpose::Demand, id, i, t.page, now);
    }
    t.probe_served_sector.reset();
    advance(id, now);
  }

  /// Writes a line's metadata. Lazy updates stay in a resident tag-cache copy;
  /// persistent ones (affinity) go to DRAM now.
  void update_line_meta(std::uint32_t id, const LineMeta& nm, bool persist, bool data_written, Cycle now) {
    Txn& t = txns_[id];
    ChanCtx& cx = *chans_[t.channel];
    RowMetadata meta = effective_meta(t.channel, t.row);
    meta.lines[t.lir] = nm;
    const bool resident = cx.l2.ctc().peek(t.row).has_value();
    if (!persist && resident) {
      cx.l2.ctc().update(t.row, ctc_pack(meta), true);
      return;
    }
    dram_meta_[meta_key(t.channel, t.row)] = meta;
    if (resident) cx.l2.ctc().update(t.row, ctc_pack(meta), false);
    if (cfg_.cache.layout == MetadataLayout::Tad && data_written) return;  // tag bits travel with the data write
    if (cfg_.cache.layout == MetadataLayout::Amil && t.meta_known) {
      issue_op(t.channel, Rank::Dram, meta_location(t), Op::Write, TrafficCategory::MetadataWriteback, Purpose::MetaWrite, id,
               0, t.page, now);
    } else {
      issue_op(t.channel, Rank::Dram, meta_location(t), Op::Read, TrafficCategory::MetadataWriteback, Purpose::MetaRead, id, 0,
               t.page, now);
    }
  }

  void decide(std::uint32_t id, Cycle now) {
    Txn& t = txns_[id];
    ChanCtx& cx = *chans_[t.channel];
    const MshrEntry& me = cx.mshr.entry(t.slot);
    t.first = cx.bypass.first_stage(me.columns(), me.is_write, t.page, t.victim, pages_, rng_);
    cx.mshr.entry(t.slot).affinity_level = static_cast<std::uint8_t>(t.first.affinity_level & 3);
    if (t.first.bypass) {
      ++bypass_.first_level;
      retire(id, now);
      return;
    }
    if (t.first.needs_victim_affinity && !t.meta_known) {
      t.phase = Phase::AffinityRead;
      t.meta_known = true;
      issue_op(t.channel, Rank::Dram, meta_location(t), Op::Read, TrafficCategory::Probe, Purpose::AffinityRead, id, 0, t.page,
               now);
      return;
    }
    second_stage(id, now);
  }

  void second_stage(std::uint32_t id, Cycle now) {
    Txn& t = txns_[id];
    ChanCtx& cx = *chans_[t.channel];
    t.victim = effective_meta(t.channel, t.row).lines[t.lir];
    const FillDecision d = cx.bypass.second_stage(t.first, t.victim, pages_.activation.p_dec(t.page), rng_);
    t.phase = Phase::Fill;
    switch (d.kind) {
      case FillDecisionKind::BypassFirstLevel: ++bypass_.first_level; break;
      case FillDecisionKind::FillInvalid: ++bypass_.fill_invalid; break;
      case FillDecisionKind::FillReplace: ++bypass_.fill_replace; break;
      case FillDecisionKind::NoReplace:
        ++bypass_.no_replace;
        if (d.decremented) ++bypass_.no_replace_decremented;
        break;
    }
    if (d.fills()) {
      do_fill(id, now);
    } else if (d.kind == FillDecisionKind::NoReplace && d.decremented) {
      LineMeta nm = t.victim;
      nm.affinity = static_cast<std::uint8_t>(nm.affinity - 1);
      update_line_meta(id, nm, true, false, now);
    }
    advance(id, now);
  }

  void do_fill(std::uint32_t id, Cycle now) {
    Txn& t = txns_[id];
    const auto sectors = cached_sectors(t.lir, cfg_.cache.layout, geo_);
    const Addr home = scm_line_address(t.set, t.tag, geo_);
    const LineMeta victim = t.victim;
    if (victim.valid && victim.dirty) {
      const Addr vhome = victim_home(t);
      t.evict_reads_left = static_cast<std::uint32_t>(sectors.size());
      for (std::uint32_t s : sectors) {
        if (cfg_.engine.check_values) scm_store_[vhome + Addr{s} * geo_.column_bytes] = lookup(dram_store_, t.set * 8 + s);
        issue_op(t.channel, Rank::Dram, dram_location(t.set, s, geo_), Op::Read, TrafficCategory::EvictDramRd,
                 Purpose::EvictRead, id, s, t.page, now);
      }
    }
    for (std::uint32_t s : sectors) {
      if (cfg_.engine.check_values) dram_store_[t.set * 8 + s] = lookup(scm_store_, home + Addr{s} * geo_.column_bytes);
      issue_op(t.channel, Rank::Scm, decompose_address(home + Addr{s} * geo_.column_bytes, geo_), Op::Read,
               TrafficCategory::FillScmRd, Purpose::FillRead, id, s, t.page, now);
    }
    LineMeta nm;
    nm.tag = static_cast<std::uint8_t>(t.tag);
    nm.valid = true;
    nm.dirty = false;
    nm.affinity = static_cast<std::uint8_t>(cfg_.policy.kind == PolicyKind::ScmAware ? t.first.affinity_level : 0);
    update_line_meta(id, nm, true, true, now);
  }

  void retire(std::uint32_t id, Cycle now) {
    Txn& t = txns_[id];
    if (t.outstanding > 0) return;
    const std::uint32_t c = t.channel;
    const std::uint64_t set = t.set;
    ChanCtx& cx = *chans_[c];
    cx.mshr.release(t.slot);
    cx.owner.erase(set);
    txns_.release(id);
    if (auto it = cx.set_queue.find(set); it != cx.set_queue.end() && !it->second.empty() && !cx.in_fifo.count(set)) {
      cx.admit_fifo.push_back(set);
      cx.in_fifo.insert(set);
    }
    while (!cx.admit_fifo.empty() && !cx.mshr.full()) {
      const std::uint64_t s = cx.admit_fifo.front();
      cx.admit_fifo.pop_front();
      cx.in_fifo.erase(s);
      auto it = cx.set_queue.find(s);
      if (!cx.owner.count(s) && it != cx.set_queue.end() && !it->second.empty()) admit(c, s, now);
    }
  }

  // ---- request completion -----------------------------------------------------

  void access_done(std::uint32_t a, Cycle now) {
    Access& ac = accesses_[a];
    if (!ac.live) return;
    std::vector<std::uint32_t> waiters = std::move(ac.waiters);
    const Op op = ac.op;
    const Addr addr = ac.addr;
    const std::uint64_t value = ac.value;
    accesses_.release(a);
    if (op == Op::Read && cfg_.engine.mode != SimMode::Device) {
      pending_reads_.erase(addr);
      ChanCtx& cx = *chans_[channel_of(addr)];
      const auto wbs = cx.l2.fill(addr, value);
      if (!wbs.empty()) {
        for (std::uint32_t w : waiters) reqs_[w].deps += static_cast<std::uint32_t>(wbs.size());
        for (const auto& wb : wbs) {
          const std::uint32_t na = new_access(wb.sector_addr, Op::Write, wb.value);
          accesses_[na].waiters = waiters;
          push_event(now + cx.l2.config().latency, kArrive, na);
        }
      }
    }
    for (std::uint32_t w : waiters) {
      Request& r = reqs_[w];
      if (op == Op::Read && r.op == Op::Read && r.addr == addr) r.value = value;
      --r.deps;
      try_complete(w, now);
    }
  }

  void try_complete(std::uint32_t id, Cycle now) {
    Request& r = reqs_[id];
    if (!r.live || r.deps > 0 || now < r.ready_at) return;
    if (r.check) {
      ++value_checks_;
      if (r.value != r.expected) ++value_mismatches_;
    }
    const Cycle lat = now - r.inject;
    latency_sum_ += lat;
    max_latency_ = std::max(max_latency_, lat);
    --stream_out_[r.stream];
    --outstanding_;
    ++completed_;
    reqs_.release(id);
  }

  // ---- statistics -----------------------------------------------------------

  void close_window(Cycle end) {
    const Cycle start = end - cfg_.power.window;
    PowerSample total;
    total.window_start = start;
    total.window_end = end;
    for (auto& cp : chans_) {
      ChanCtx& cx = *cp;
      cx.ch.process_refresh(end);
      charge_energy(cx);
      PowerSample s;
      s.window_start = start;
      s.window_end = end;
      s.power_w = power_watts(cx.ledger.window_energy(), cfg_.power.window);
      s.dram_w = power_watts(cx.ledger.window_energy(Rank::Dram), cfg_.power.window);
      s.scm_w = power_watts(cx.ledger.window_energy(Rank::Scm), cfg_.power.window);
      s.throttle = cx.ch.throttle();
      s.bus_columns = cx.ch.window_columns();
      cx.samples.push_back(s);
      cx.ledger.reset_window();
      cx.ch.reset_window_columns();
      total.power_w += s.power_w;
      total.dram_w += s.dram_w;
      total.scm_w += s.scm_w;
      total.bus_columns += s.bus_columns;
      total.throttle.act = total.throttle.act || s.throttle.act;
      total.throttle.wr = total.throttle.wr || s.throttle.wr;
    }
    // one budget for the whole stack
    const ThrottleFlags f = monitor_.on_window(total);
    for (auto& cp : chans_) cp->ch.set_throttle(f);
    timeline_.push_back(total);
    next_window_ = end + cfg_.power.window;
  }

  void reset_stats(Cycle now) {
    stats_start_ = now;
    for (auto& cp : chans_) {
      cp->ch.reset_stats();
      cp->l2.reset_stats();
      cp->ledger.reset_totals();  // window accumulators keep feeding the power monitor
    }
    dram_cache_ = dram_cache_read_ = dram_cache_write_ = {};
    bypass_ = {};
    uncacheable_ = transactions_ = mshr_stalls_ = 0;
    latency_sum_ = 0;
    max_latency_ = 0;
    completed_ = 0;
    injected_ = outstanding_;
    reads_ = writes_ = 0;
    value_checks_ = value_mismatches_ = 0;
    warm_timeline_from_ = timeline_.size();
    warm_engagements_ = monitor_.engagements();
  }

  StatsReport finish() {
    StatsReport r;
    for (auto& cp : chans_) {
      cp->ch.process_refresh(end_);
      charge_energy(*cp);
    }
    r.end_cycle = end_;
    r.runtime_cycles = end_ - stats_start_;
    r.requests_injected = injected_;
    r.requests_completed = completed_;
    r.reads = reads_;
    r.writes = writes_;
    r.mean_latency = completed_ ? static_cast<double>(latency_sum_) / static_cast<double>(completed_) : 0.0;
    r.max_latency = max_latency_;
    double util_sum = 0;
    std::uint64_t bytes = 0;
    for (auto& cp : chans_) {
      ChanCtx& cx = *cp;
      ChannelReport c;
      c.bus_columns = cx.ch.bus_columns();
      c.bus_busy_cycles = cx.ch.bus_busy_cycles();
      c.utilization = r.runtime_cycles ? static_cast<double>(c.bus_busy_cycles) / static_cast<double>(r.runtime_cycles) : 0.0;
      c.traffic = cx.ch.traffic();
      c.refreshes = cx.ch.refreshes();
      c.dram_activations = cx.ch.activations(Rank::Dram);
      c.scm_activations = cx.ch.activations(Rank::Scm);
      c.energy_pj = cx.ledger.total();
      for (std::size_t i = 0; i < r.traffic.size(); ++i) r.traffic[i] += c.traffic[i];
      r.refresh_events += c.refreshes;
      r.total_columns += c.bus_columns;
      for (std::size_t i = 0; i < r.energy.size(); ++i) r.energy[i] += cx.ledger.category(static_cast<EnergyCategory>(i));
      r.energy_dram_pj += cx.ledger.rank_total(Rank::Dram);
      r.energy_scm_pj += cx.ledger.rank_total(Rank::Scm);
      util_sum += c.utilization;
      bytes += c.bus_columns * geo_.column_bytes;
      r.channel_power.push_back(cx.samples);
      r.channels.push_back(c);
      r.l2.hits += cx.l2.hits();
      r.l2.accesses += cx.l2.hits() + cx.l2.misses();
      r.ctc.hits += cx.l2.ctc().hits();
      r.ctc.accesses += cx.l2.ctc().hits() + cx.l2.ctc().misses();
    }
    for (double e : r.energy) r.energy_total_pj += e;
    r.utilization = chans_.empty() ? 0.0 : util_sum / static_cast<double>(chans_.size());
    r.bandwidth_gbps = r.runtime_cycles ? static_cast<double>(bytes) / static_cast<double>(r.runtime_cycles) : 0.0;
    r.dram_cache = dram_cache_;
    r.dram_cache_read = dram_cache_read_;
    r.dram_cache_write = dram_cache_write_;
    r.uncacheable_accesses = uncacheable_;
    r.transactions = transactions_;
    r.mshr_stalls = mshr_stalls_;
    r.bypass = bypass_;
    r.power_timeline = timeline_;
    r.throttle_engagements = monitor_.engagements() - warm_engagements_;
    r.first_measured_window = warm_timeline_from_;
    r.value_checks = value_checks_;
    r.value_mismatches = value_mismatches_;
    r.ecc_intact = cfg_.cache.layout == MetadataLayout::Amil;
    return r;
  }

  ExperimentConfig cfg_;
  DeviceGeometry geo_;
  Rng rng_;
  PageTables pages_;
  std::vector<std::unique_ptr<ChanCtx>> chans_;
  RequestSource* src_ = nullptr;

  Slab<Request> reqs_;
  Slab<Access> accesses_;
  Slab<Txn> txns_;
  std::vector<OpTag> tags_;
  std::vector<std::uint32_t> free_tags_;
  std::priority_queue<Event, std::vector<Event>, std::greater<>> events_;
  std::uint64_t event_seq_ = 0;
  std::vector<Completion> tick_buf_;
  std::unordered_map<Addr, std::uint32_t> pending_reads_;
  std::vector<std::uint32_t> stream_out_;
  std::uint64_t bg_ops_ = 0;

  std::unordered_map<Addr, std::uint64_t> shadow_;
  std::unordered_map<Addr, std::uint64_t> flat_store_;
  std::unordered_map<Addr, std::uint64_t> scm_store_;
  std::unordered_map<std::uint64_t, std::uint64_t> dram_store_;
  std::unordered_map<std::uint64_t, RowMetadata> dram_meta_;
  std::uint64_t write_serial_ = 0;

  Cycle end_ = 0;
  Cycle stats_start_ = 0;
  Cycle next_window_ = 0;
  std::vector<PowerSample> timeline_;
  PowerMonitor monitor_;
  std::uint64_t warm_engagements_ = 0;
  std::size_t warm_timeline_from_ = 0;

  std::uint64_t outstanding_ = 0;
  std::uint64_t injected_ = 0;
  std::uint64_t completed_ = 0;
  std::uint64_t injected_total_ = 0;
  bool warming_ = false;
  std::uint64_t reads_ = 0, writes_ = 0;
  std::uint64_t latency_sum_ = 0;
  Cycle max_latency_ = 0;
  HitCounter dram_cache_, dram_cache_read_, dram_cache_write_;
  BypassBreakdown bypass_;
  std::uint64_t uncacheable_ = 0;
  std::uint64_t transactions_ = 0;
  std::uint64_t mshr_stalls_ = 0;
  std::uint64_t value_checks_ = 0;
  std::uint64_t value_mismatches_ = 0;
};

/// Convenience wrapper: run the configured workload.
inline StatsReport run_simulation(const ExperimentConfig& cfg) { return Simulator(cfg).run(); }

inline StatsReport run_simulation(const ExperimentConfig& cfg, std::vector<TraceRecord> records) {
  Simulator sim(cfg);
  VectorSource src(std::move(records));
  return sim.run(src);
}

}  // namespace hmsim
