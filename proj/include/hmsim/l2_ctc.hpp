#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "hmsim/geometry.hpp"
#include "hmsim/types.hpp"

namespace hmsim {

struct L2Config {
  std::uint32_t total_ways = 16;
  std::uint32_t ctc_l2_ways = 4;
  std::uint32_t line_bytes = 128;
  std::uint32_t sector_bytes = 32;
  std::uint32_t sets = 512;  ///< per memory partition (channel slice)
  std::uint32_t latency = 10;

  static constexpr std::uint32_t kMaxCtcWays = 4;
  static constexpr std::uint32_t kTagCacheWaysPerL2Way = 4;
  static constexpr std::uint32_t kCtcLineBytes = 32;
  static constexpr std::uint32_t kCtcSectorBytes = 4;
  static constexpr std::uint32_t kRowsPerCtcLine = kCtcLineBytes / kCtcSectorBytes;  // 8
  static constexpr std::uint32_t kCtcTagBits = 22;
  static constexpr std::uint32_t kCtcPlruBits = 4;

  std::uint32_t data_ways() const { return total_ways - ctc_l2_ways; }
  std::uint32_t ctc_associativity() const { return kTagCacheWaysPerL2Way * ctc_l2_ways; }
  std::uint32_t sectors_per_line() const { return line_bytes / sector_bytes; }

  void validate() const {
    if (ctc_l2_ways > kMaxCtcWays) throw ConfigError("l2.ctc_l2_ways must be at most 4");
    if (ctc_l2_ways >= total_ways) throw ConfigError("l2.ctc_l2_ways must leave at least one data way");
    if (!is_pow2(sets)) throw ConfigError("l2.sets must be a power of two");
    if (!is_pow2(line_bytes) || !is_pow2(sector_bytes) || sector_bytes > line_bytes || sectors_per_line() > 8)
      throw ConfigError("l2 line/sector sizes must be powers of two with at most 8 sectors");
  }
};

/// Per-set SRAM added for the tag cache: per-line sector valid + sector dirty +
/// tag, plus pseudo-LRU state.
inline std::uint32_t ctc_overhead_bits_per_set(std::uint32_t ctc_l2_ways) {
  const std::uint32_t per_line = L2Config::kRowsPerCtcLine * 2 + L2Config::kCtcTagBits;  // 8+8+22
  return L2Config::kTagCacheWaysPerL2Way * ctc_l2_ways * per_line + L2Config::kCtcPlruBits;
}

/// Tree pseudo-LRU over the first `ways` leaves of a power-of-two tree.
class TreePlru {
 public:
  explicit TreePlru(std::uint32_t ways = 1) : ways_(ways) {
    leaves_ = 1;
    while (leaves_ < ways_) leaves_ <<= 1;
    bits_.assign(leaves_ > 1 ? leaves_ - 1 : 0, 0);
  }

  void touch(std::uint32_t way) {
    std::uint32_t node = 0, lo = 0, hi = leaves_;
    while (hi - lo > 1) {
      const std::uint32_t mid = (lo + hi) / 2;
      const bool left = way < mid;
      bits_[node] = left ? 1 : 0;  // point away from the touched side
      node = 2 * node + (left ? 1 : 2);
      (left ? hi : lo) = mid;
    }
  }

  std::uint32_t victim() const {
    std::uint32_t node = 0, lo = 0, hi = leaves_;
    while (hi - lo > 1) {
      const std::uint32_t mid = (lo + hi) / 2;
      bool go_right = bits_[node] != 0;
      if (go_right && mid >= ways_) go_right = false;  // right subtree holds no usable way
      node = 2 * node + (go_right ? 2 : 1);
      (go_right ? lo : hi) = mid;
    }
    return lo;
  }

 private:
  std::uint32_t ways_;
  std::uint32_t leaves_;
  std::vector<std::uint8_t> bits_;
};

struct CtcLine {
  bool valid = false;
  std::uint64_t tag = 0;
  std::uint8_t sector_valid = 0;
  std::uint8_t sector_dirty = 0;
  std::array<std::uint32_t, L2Config::kRowsPerCtcLine> sectors{};
};

struct CtcWriteback {
  std::uint64_t row = 0;   ///< channel-local row id
  std::uint32_t word = 0;  ///< packed tag/valid/dirty nibbles
};

/// Tag cache held in repurposed L2 ways. Each 32 B line covers eight consecutive
/// DRAM rows with one 4 B sector per row.
class TagCache {
 public:
  TagCache() = default;
  TagCache(std::uint32_t sets, std::uint32_t associativity)
      : sets_(sets), assoc_(associativity), lines_(std::size_t{sets} * associativity) {
    plru_.reserve(sets);
    for (std::uint32_t s = 0; s < sets; ++s) plru_.emplace_back(associativity ? associativity : 1);
  }

  bool enabled() const { return assoc_ > 0; }
  std::uint32_t associativity() const { return assoc_; }
  std::uint32_t sets() const { return sets_; }

  struct Locator {
    std::uint32_t set;
    std::uint64_t tag;
    std::uint32_t sector;
  };
  Locator locate(std::uint64_t row) const {
    const std::uint64_t group = row / L2Config::kRowsPerCtcLine;
    return {static_cast<std::uint32_t>(group % sets_), group / sets_,
            static_cast<std::uint32_t>(row % L2Config::kRowsPerCtcLine)};
  }

  /// Row's 4 B tag metadata, or nullopt on a miss. Disabled caches always miss.
  std::optional<std::uint32_t> lookup(std::uint64_t row) {
    if (!enabled()) {
      ++misses_;
      return std::nullopt;
    }
    const Locator l = locate(row);
    if (auto w = find(l)) {
      CtcLine& line = at(l.set, *w);
      if (line.sector_valid & (1u << l.sector)) {
        plru_[l.set].touch(*w);
        ++hits_;
        return line.sectors[l.sector];
      }
    }
    ++misses_;
    return std::nullopt;
  }

  /// Read-only residency check (no statistics, no replacement update).
  std::optional<std::uint32_t> peek(std::uint64_t row) const {
    if (!enabled()) return std::nullopt;
    const Locator l = locate(row);
    if (auto w = find(l)) {
      const CtcLine& line = at(l.set, *w);
      if (line.sector_valid & (1u << l.sector)) return line.sectors[l.sector];
    }
    return std::nullopt;
  }

  /// Installs a row's metadata after a probe. An already-valid sector keeps its
  /// (possibly newer) contents. Returns the dirty sectors of any evicted line.
  std::vector<CtcWriteback> fill(std::uint64_t row, std::uint32_t word) {
    std::vector<CtcWriteback> wb;
    if (!enabled()) return wb;
    const Locator l = locate(row);
    auto w = find(l);
    if (!w) {
      std::uint32_t v = assoc_;
      for (std::uint32_t i = 0; i < assoc_; ++i)
        if (!at(l.set, i).valid) {
          v = i;
          break;
        }
      if (v == assoc_) v = plru_[l.set].victim();
      CtcLine& victim = at(l.set, v);
      if (victim.valid) {
        ++evictions_;
        collect_dirty(l.set, victim, wb);
      }
      victim = CtcLine{};
      victim.valid = true;
      victim.tag = l.tag;
      w = v;
    }
    CtcLine& line = at(l.set, *w);
    if (!(line.sector_valid & (1u << l.sector))) {
      line.sector_valid |= static_cast<std::uint8_t>(1u << l.sector);
      line.sector_dirty &= static_cast<std::uint8_t>(~(1u << l.sector));
      line.sectors[l.sector] = word;
    }
    plru_[l.set].touch(*w);
    return wb;
  }

  /// Updates a resident row; `dirty` marks it for write-back on eviction.
  bool update(std::uint64_t row, std::uint32_t word, bool dirty) {
    if (!enabled()) return false;
    const Locator l = locate(row);
    auto w = find(l);
    if (!w) return false;
    CtcLine& line = at(l.set, *w);
    if (!(line.sector_valid & (1u << l.sector))) return false;
    line.sectors[l.sector] = word;
    if (dirty)
      line.sector_dirty |= static_cast<std::uint8_t>(1u << l.sector);
    else
      line.sector_dirty &= static_cast<std::uint8_t>(~(1u << l.sector));
    return true;
  }

  bool dirty(std::uint64_t row) const {
    if (!enabled()) return false;
    const Locator l = locate(row);
    auto w = find(l);
    return w && (at(l.set, *w).sector_dirty & (1u << l.sector));
  }

  /// Writes back every dirty sector and invalidates the whole cache.
  std::vector<CtcWriteback> flush() {
    std::vector<CtcWriteback> wb;
    for (std::uint32_t s = 0; s < sets_; ++s)
      for (std::uint32_t w = 0; w < assoc_; ++w) {
        CtcLine& line = at(s, w);
        if (line.valid) collect_dirty(s, line, wb);
        line = CtcLine{};
      }
    return wb;
  }

  std::uint64_t hits() const { return hits_; }
  std::uint64_t misses() const { return misses_; }
  std::uint64_t evictions() const { return evictions_; }
  void reset_stats() { hits_ = misses_ = evictions_ = 0; }

 private:
  std::optional<std::uint32_t> find(const Locator& l) const {
    for (std::uint32_t w = 0; w < assoc_; ++w) {
      const CtcLine& line = at(l.set, w);
      if (line.valid && line.tag == l.tag) return w;
    }
    return std::nullopt;
  }
  CtcLine& at(std::uint32_t set, std::uint32_t way) { return lines_[std::size_t{set} * assoc_ + way]; }
  const CtcLine& at(std::uint32_t set, std::uint32_t way) const { return lines_[std::size_t{set} * assoc_ + way]; }

  void collect_dirty(std::uint32_t set, const CtcLine& line, std::vector<CtcWriteback>& wb) const {
    const std::uint64_t group = line.tag * sets_ + set;
    for (std::uint32_t s = 0; s < L2Config::kRowsPerCtcLine; ++s)
      if (line.sector_dirty & (1u << s)) wb.push_back({group * L2Config::kRowsPerCtcLine + s, line.sectors[s]});
  }

  std::uint32_t sets_ = 0;
  std::uint32_t assoc_ = 0;
  std::vector<CtcLine> lines_;
  std::vector<TreePlru> plru_;
  std::uint64_t hits_ = 0, misses_ = 0, evictions_ = 0;
};

struct L2Writeback {
  Addr sector_addr = 0;
  std::uint64_t value = 0;
};

struct L2Result {
  bool hit = false;
  std::uint64_t value = 0;  ///< data for read hits
  std::vector<L2Writeback> writebacks;
};

/// One memory partition's sectored L2 slice with its tag-cache partition.
/// Data ways use true LRU; reads allocate only when the sector fill returns,
/// writes allocate immediately (full 32 B sector writes need no fetch).
class L2Slice {
 public:
  L2Slice(const L2Config& cfg, const DeviceGeometry& geo)
      : cfg_(cfg), geo_(geo), lines_(std::size_t{cfg.sets} * cfg.total_ways) {
    cfg_.validate();
    ctc_ = TagCache(cfg_.sets, cfg_.ctc_associativity());
  }

  const L2Config& config() const { return cfg_; }
  TagCache& ctc() { return ctc_; }
  const TagCache& ctc() const { return ctc_; }

  L2Result access(Addr addr, Op op, std::uint64_t value = 0) {
    return op == Op::Read ? read(addr) : write(addr, value);
  }

  L2Result read(Addr addr) {
    L2Result r;
    const auto [set, tag, sector] = locate(addr);
    if (auto w = find(set, tag)) {
      Line& line = at(set, *w);
      if (line.sector_valid & (1u << sector)) {
        line.lru = ++stamp_;
        r.hit = true;
        r.value = line.data[sector];
        ++hits_;
        return r;
      }
    }
    ++misses_;
    return r;
  }

  L2Result write(Addr addr, std::uint64_t value) {
    L2Result r;
    const auto [set, tag, sector] = locate(addr);
    auto w = find(set, tag);
    if (w && (at(set, *w).sector_valid & (1u << sector))) {
      r.hit = true;
      ++hits_;
    } else {
      ++misses_;
    }
    if (!w) w = allocate(set, tag, r.writebacks);
    Line& line = at(set, *w);
    line.sector_valid |= static_cast<std::uint8_t>(1u << sector);
    line.sector_dirty |= static_cast<std::uint8_t>(1u << sector);
    line.data[sector] = value;
    line.lru = ++stamp_;
    return r;
  }

  /// Installs a sector returned from memory. A sector written meanwhile keeps its data.
  std::vector<L2Writeback> fill(Addr addr, std::uint64_t value) {
    std::vector<L2Writeback> wb;
    const auto [set, tag, sector] = locate(addr);
    auto w = find(set, tag);
    if (!w) w = allocate(set, tag, wb);
    Line& line = at(set, *w);
    if (!(line.sector_valid & (1u << sector))) {
      line.sector_valid |= static_cast<std::uint8_t>(1u << sector);
      line.data[sector] = value;
    }
    line.lru = ++stamp_;
    return wb;
  }

  struct PartitionChange {
    std::vector<L2Writeback> data_writebacks;
    std::vector<CtcWriteback> ctc_writebacks;
  };

  /// Re-splits the ways between data and tag cache. Lines in ways that leave
  /// the data partition are written back and the tag cache is flushed.
  PartitionChange set_partition(std::uint32_t ctc_l2_ways) {
    L2Config next = cfg_;
    next.ctc_l2_ways = ctc_l2_ways;
    next.validate();
    PartitionChange pc;
    pc.ctc_writebacks = ctc_.flush();
    for (std::uint32_t s = 0; s < cfg_.sets; ++s)
      for (std::uint32_t w = next.data_ways(); w < cfg_.total_ways; ++w) evict(s, w, pc.data_writebacks);
    cfg_ = next;
    ctc_ = TagCache(cfg_.sets, cfg_.ctc_associativity());
    return pc;
  }

  std::uint64_t hits() const { return hits_; }
  std::uint64_t misses() const { return misses_; }
  void reset_stats() {
    hits_ = misses_ = 0;
    ctc_.reset_stats();
  }

 private:
  struct Line {
    bool valid = false;
    std::uint64_t tag = 0;
    std::uint8_t sector_valid = 0;
    std::uint8_t sector_dirty = 0;
    std::uint64_t lru = 0;
    std::array<std::uint64_t, 8> data{};
  };
  struct Loc {
    std::uint32_t set;
    std::uint64_t tag;
    std::uint32_t sector;
  };

  // Slices are per channel, so the channel bits are dropped before indexing.
  Loc locate(Addr addr) const {
    const unsigned line_bits = log2_exact(cfg_.line_bytes);
    const unsigned chan_lo = geo_.byte_bits() + geo_.col_in_line_bits();
    const unsigned chan_bits = geo_.channel_bits();
    const Addr low = addr & low_mask(chan_lo);
    const Addr high = addr >> (chan_lo + chan_bits);
    const Addr local = (high << chan_lo) | low;
    const std::uint64_t line = local >> line_bits;
    const auto sector = static_cast<std::uint32_t>((local >> log2_exact(cfg_.sector_bytes)) & (cfg_.sectors_per_line() - 1));
    return {static_cast<std::uint32_t>(line % cfg_.sets), line / cfg_.sets, sector};
  }
  Addr address_of(std::uint32_t set, std::uint64_t tag, std::uint32_t sector, std::uint32_t channel_hint) const {
    const unsigned chan_lo = geo_.byte_bits() + geo_.col_in_line_bits();
    const Addr local = ((tag * cfg_.sets + set) << log2_exact(cfg_.line_bytes)) | (Addr{sector} * cfg_.sector_bytes);
    const Addr low = local & low_mask(chan_lo);
    const Addr high = local >> chan_lo;
    return (high << (chan_lo + geo_.channel_bits())) | (Addr{channel_hint} << chan_lo) | low;
  }

  std::optional<std::uint32_t> find(std::uint32_t set, std::uint64_t tag) const {
    for (std::uint32_t w = 0; w < cfg_.data_ways(); ++w) {
      const Line& line = at(set, w);
      if (line.valid && line.tag == tag) return w;
    }
    return std::nullopt;
  }

  std::uint32_t allocate(std::uint32_t set, std::uint64_t tag, std::vector<L2Writeback>& wb) {
    std::uint32_t victim = 0;
    std::uint64_t oldest = ~std::uint64_t{0};
    for (std::uint32_t w = 0; w < cfg_.data_ways(); ++w) {
      const Line& line = at(set, w);
      if (!line.valid) {
        victim = w;
        break;
      }
      if (line.lru < oldest) {
        oldest = line.lru;
        victim = w;
      }
    }
    evict(set, victim, wb);
    Line& line = at(set, victim);
    line.valid = true;
    line.tag = tag;
    return victim;
  }

  void evict(std::uint32_t set, std::uint32_t way, std::vector<L2Writeback>& wb) {
    Line& line = at(set, way);
    if (line.valid) {
      for (std::uint32_t s = 0; s < cfg_.sectors_per_line(); ++s)
        if (line.sector_dirty & (1u << s)) wb.push_back({address_of(set, line.tag, s, line_channel(line)), line.data[s]});
    }
    line = Line{};
  }

  // Dirty write-backs must land in the slice's own channel; remember it on the line.
  std::uint32_t line_channel(const Line&) const { return channel_; }

 public:
  /// Channel this slice serves; used to rebuild global addresses on write-back.
  void set_channel(std::uint32_t ch) { channel_ = ch; }

 private:
  Line& at(std::uint32_t set, std::uint32_t way) { return lines_[std::size_t{set} * cfg_.total_ways + way]; }
  const Line& at(std::uint32_t set, std::uint32_t way) const { return lines_[std::size_t{set} * cfg_.total_ways + way]; }

  L2Config cfg_;
  DeviceGeometry geo_;
  std::vector<Line> lines_;
  TagCache ctc_;
  std::uint32_t channel_ = 0;
  std::uint64_t stamp_ = 0;
  std::uint64_t hits_ = 0, misses_ = 0;
};

}  // namespace hmsim
