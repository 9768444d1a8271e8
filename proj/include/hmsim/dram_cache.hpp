#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "hmsim/geometry.hpp"
#include "hmsim/types.hpp"

namespace hmsim {

enum class MetadataLayout : std::uint8_t { Amil, Tad };

inline std::string_view to_string(MetadataLayout l) { return l == MetadataLayout::Amil ? "amil" : "tad"; }
inline MetadataLayout parse_layout(std::string_view s) {
  if (s == "amil") return MetadataLayout::Amil;
  if (s == "tad") return MetadataLayout::Tad;
  throw ConfigError("unknown cache layout '" + std::string(s) + "'");
}

/// 6-bit per-cacheline metadata: 2-bit tag, valid, dirty, 2-bit DRAM-affinity level.
struct LineMeta {
  std::uint8_t tag = 0;
  bool valid = false;
  bool dirty = false;
  std::uint8_t affinity = 0;
  bool operator==(const LineMeta&) const = default;
};

inline constexpr unsigned kLinesPerRow = 8;
inline constexpr unsigned kLineMetaBits = 6;
inline constexpr unsigned kRowMetaBits = kLinesPerRow * kLineMetaBits;  // 48
inline constexpr std::uint64_t kRowMetaMask = (std::uint64_t{1} << kRowMetaBits) - 1;

struct RowMetadata {
  std::array<LineMeta, kLinesPerRow> lines{};
  bool operator==(const RowMetadata&) const = default;
};

// Line i occupies bits [6i, 6i+6): tag in bits 0-1, valid 2, dirty 3, affinity 4-5.
// The word sits in the first 6 bytes of the row's last column; the other 26 bytes are zero.
inline std::uint64_t amil_encode(const RowMetadata& m) {
  std::uint64_t w = 0;
  for (unsigned i = 0; i < kLinesPerRow; ++i) {
    const LineMeta& l = m.lines[i];
    const std::uint64_t bits = (l.tag & 3u) | (l.valid ? 4u : 0u) | (l.dirty ? 8u : 0u) | ((l.affinity & 3u) << 4);
    w |= bits << (kLineMetaBits * i);
  }
  return w;
}

inline RowMetadata amil_decode(std::uint64_t word) {
  RowMetadata m;
  for (unsigned i = 0; i < kLinesPerRow; ++i) {
    const auto bits = static_cast<unsigned>((word >> (kLineMetaBits * i)) & 0x3f);
    m.lines[i] = {static_cast<std::uint8_t>(bits & 3), (bits & 4) != 0, (bits & 8) != 0,
                  static_cast<std::uint8_t>((bits >> 4) & 3)};
  }
  return m;
}

/// The 32 B payload of a row's last column.
inline std::array<std::uint8_t, 32> amil_column_bytes(std::uint64_t word) {
  std::array<std::uint8_t, 32> b{};
  for (unsigned i = 0; i < 6; ++i) b[i] = static_cast<std::uint8_t>(word >> (8 * i));
  return b;
}

/// Tag-cache view of a row: 4 bits per line (tag, valid, dirty), affinity dropped.
inline std::uint32_t ctc_pack(const RowMetadata& m) {
  std::uint32_t w = 0;
  for (unsigned i = 0; i < kLinesPerRow; ++i) {
    const LineMeta& l = m.lines[i];
    w |= ((l.tag & 3u) | (l.valid ? 4u : 0u) | (l.dirty ? 8u : 0u)) << (4 * i);
  }
  return w;
}

/// Replaces tag/valid/dirty of `m` with the tag-cache copy, keeping affinity.
inline RowMetadata ctc_merge(RowMetadata m, std::uint32_t ctc) {
  for (unsigned i = 0; i < kLinesPerRow; ++i) {
    const unsigned n = (ctc >> (4 * i)) & 0xf;
    m.lines[i].tag = static_cast<std::uint8_t>(n & 3);
    m.lines[i].valid = (n & 4) != 0;
    m.lines[i].dirty = (n & 8) != 0;
  }
  return m;
}

struct ProbeResult {
  RowMetadata meta;
  unsigned column_accesses = 0;
  std::vector<std::uint32_t> columns;  ///< row columns read
};

/// Columns read to fetch a full row's metadata: the last column under AMIL, the
/// first column of every cacheline under TAD (tags travel with each line's data).
inline std::vector<std::uint32_t> probe_columns(MetadataLayout layout, const DeviceGeometry& g) {
  if (layout == MetadataLayout::Amil) return {g.columns_per_row() - 1};
  std::vector<std::uint32_t> cols;
  for (std::uint32_t l = 0; l < g.lines_per_row(); ++l) cols.push_back(l * g.columns_per_line());
  return cols;
}

inline ProbeResult probe_row_tags(std::uint64_t stored_word, MetadataLayout layout, const DeviceGeometry& g) {
  ProbeResult r;
  r.meta = amil_decode(stored_word);
  r.columns = probe_columns(layout, g);
  r.column_accesses = static_cast<unsigned>(r.columns.size());
  return r;
}

/// Sectors of a cacheline that hold data in the DRAM cache. Under AMIL the last
/// line of a row loses its final sector to the metadata column.
inline std::vector<std::uint32_t> cached_sectors(std::uint32_t line_in_row_idx, MetadataLayout layout,
                                                 const DeviceGeometry& g) {
  std::vector<std::uint32_t> s;
  for (std::uint32_t i = 0; i < g.columns_per_line(); ++i)
    if (layout == MetadataLayout::Tad || !is_metadata_column(line_in_row_idx, i, g)) s.push_back(i);
  return s;
}

struct ColumnPlan {
  std::vector<std::uint32_t> sectors;  ///< sectors moved
  unsigned scm_reads = 0;
  unsigned scm_writes = 0;
  unsigned dram_reads = 0;
  unsigned dram_writes = 0;
};

/// Fill: every cached sector is read from SCM and written to DRAM.
inline ColumnPlan fill_plan(std::uint32_t line_in_row_idx, MetadataLayout layout, const DeviceGeometry& g) {
  ColumnPlan p;
  p.sectors = cached_sectors(line_in_row_idx, layout, g);
  p.scm_reads = p.dram_writes = static_cast<unsigned>(p.sectors.size());
  return p;
}

/// Eviction: a dirty victim is read from DRAM and written back home; a clean one moves nothing.
inline ColumnPlan evict_plan(const LineMeta& victim, std::uint32_t line_in_row_idx, MetadataLayout layout,
                             const DeviceGeometry& g) {
  ColumnPlan p;
  if (!victim.valid || !victim.dirty) return p;
  p.sectors = cached_sectors(line_in_row_idx, layout, g);
  p.dram_reads = p.scm_writes = static_cast<unsigned>(p.sectors.size());
  return p;
}

/// Per-cacheline miss record: 37-bit line address, 8-bit column mask, entry valid,
/// read/write, 2-bit affinity level, and the DRAM line's valid/dirty bits from the tag cache.
struct MshrEntry {
  std::uint64_t line_address = 0;
  std::uint8_t column_mask = 0;
  bool entry_valid = false;
  bool is_write = false;
  std::uint8_t affinity_level = 0;
  bool ctc_valid = false;
  bool ctc_dirty = false;
  bool operator==(const MshrEntry&) const = default;

  static constexpr unsigned kAddressBits = 37;
  static constexpr unsigned kBits = kAddressBits + 8 + 1 + 1 + 2 + 1 + 1;  // 51

  // LSB first: mask 0-7, valid 8, write 9, affinity 10-11, ctc_valid 12, ctc_dirty 13, address 14-50.
  std::uint64_t pack() const {
    std::uint64_t w = column_mask;
    w |= std::uint64_t{entry_valid} << 8;
    w |= std::uint64_t{is_write} << 9;
    w |= std::uint64_t{affinity_level & 3u} << 10;
    w |= std::uint64_t{ctc_valid} << 12;
    w |= std::uint64_t{ctc_dirty} << 13;
    w |= (line_address & low_mask(kAddressBits)) << 14;
    return w;
  }
  static MshrEntry unpack(std::uint64_t w) {
    MshrEntry e;
    e.column_mask = static_cast<std::uint8_t>(w & 0xff);
    e.entry_valid = (w >> 8) & 1;
    e.is_write = (w >> 9) & 1;
    e.affinity_level = static_cast<std::uint8_t>((w >> 10) & 3);
    e.ctc_valid = (w >> 12) & 1;
    e.ctc_dirty = (w >> 13) & 1;
    e.line_address = (w >> 14) & low_mask(kAddressBits);
    return e;
  }
  unsigned columns() const { return static_cast<unsigned>(std::popcount(column_mask)); }
};

enum class MshrOutcome : std::uint8_t { NewMiss, Merged, Full };

struct MshrInsert {
  MshrOutcome outcome = MshrOutcome::Full;
  std::uint32_t slot = 0;
};

/// Fixed-size per-channel MSHR keyed by line address.
class MshrTable {
 public:
  explicit MshrTable(std::uint32_t entries = 128) : slots_(entries) {
    if (entries == 0) throw ConfigError("cache.mshr_entries must be positive");
  }

  MshrInsert insert_or_merge(std::uint64_t line, std::uint32_t sector, Op op) {
    if (sector >= 8) throw UsageError("sector index out of range");
    const auto bit = static_cast<std::uint8_t>(1u << sector);
    if (auto it = index_.find(line); it != index_.end()) {
      MshrEntry& e = slots_[it->second];
      e.column_mask |= bit;
      e.is_write = e.is_write || op == Op::Write;
      return {MshrOutcome::Merged, it->second};
    }
    for (std::uint32_t i = 0; i < slots_.size(); ++i) {
      const std::uint32_t s = (cursor_ + i) % static_cast<std::uint32_t>(slots_.size());
      if (!slots_[s].entry_valid) {
        slots_[s] = MshrEntry{line, bit, true, op == Op::Write, 0, false, false};
        index_.emplace(line, s);
        ++live_;
        cursor_ = (s + 1) % static_cast<std::uint32_t>(slots_.size());
        return {MshrOutcome::NewMiss, s};
      }
    }
    return {MshrOutcome::Full, 0};
  }

  std::optional<std::uint32_t> find(std::uint64_t line) const {
    if (auto it = index_.find(line); it != index_.end()) return it->second;
    return std::nullopt;
  }
  MshrEntry& entry(std::uint32_t slot) { return slots_[slot]; }
  const MshrEntry& entry(std::uint32_t slot) const { return slots_[slot]; }

  void release(std::uint32_t slot) {
    MshrEntry& e = slots_[slot];
    if (!e.entry_valid) return;
    index_.erase(e.line_address);
    e = MshrEntry{};
    --live_;
  }

  std::uint32_t capacity() const { return static_cast<std::uint32_t>(slots_.size()); }
  std::uint32_t live() const { return live_; }
  bool full() const { return live_ == slots_.size(); }

 private:
  std::vector<MshrEntry> slots_;
  std::unordered_map<std::uint64_t, std::uint32_t> index_;
  std::uint32_t live_ = 0;
  std::uint32_t cursor_ = 0;
};

}  // namespace hmsim
