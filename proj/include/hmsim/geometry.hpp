#pragma once

#include <cstdint>
#include <string>

#include "hmsim/types.hpp"

namespace hmsim {

// Address bit layout, LSB first:
//   byte-in-column | column-in-line | channel | bank group | bank | line-in-row | row
// With the defaults this is 0-4 | 5-7 | 8-10 | 11-12 | 13-14 | 15-17 | 18+, so
// consecutive 256 B cachelines rotate across channels first.
struct DeviceGeometry {
  std::uint32_t channels = 8;
  std::uint32_t bank_groups_per_channel = 4;
  std::uint32_t banks_per_group = 4;
  std::uint32_t row_bytes = 2048;
  std::uint32_t column_bytes = 32;
  std::uint32_t rows_per_bank_dram = 1024;
  std::uint32_t rows_per_bank_scm = 4096;
  std::uint32_t cacheline_bytes = 256;

  std::uint32_t banks_per_channel() const { return bank_groups_per_channel * banks_per_group; }
  std::uint32_t columns_per_row() const { return row_bytes / column_bytes; }
  std::uint32_t columns_per_line() const { return cacheline_bytes / column_bytes; }
  std::uint32_t lines_per_row() const { return row_bytes / cacheline_bytes; }
  std::uint32_t rows_per_bank(Rank r) const { return r == Rank::Dram ? rows_per_bank_dram : rows_per_bank_scm; }

  std::uint64_t capacity(Rank r) const {
    return std::uint64_t{channels} * banks_per_channel() * rows_per_bank(r) * row_bytes;
  }
  std::uint64_t dram_cache_lines() const { return capacity(Rank::Dram) / cacheline_bytes; }

  unsigned byte_bits() const { return log2_exact(column_bytes); }
  unsigned col_in_line_bits() const { return log2_exact(columns_per_line()); }
  unsigned channel_bits() const { return log2_exact(channels); }
  unsigned bank_group_bits() const { return log2_exact(bank_groups_per_channel); }
  unsigned bank_bits() const { return log2_exact(banks_per_group); }
  unsigned line_in_row_bits() const { return log2_exact(lines_per_row()); }
  /// Bits below the line address inside a cacheline-aligned address.
  unsigned line_offset_bits() const { return log2_exact(cacheline_bytes); }

  /// Throws ConfigError when any count is not a power of two or the sizes nest badly.
  void validate() const {
    auto check = [](std::uint64_t v, const char* name) {
      if (!is_pow2(v)) throw ConfigError(std::string("geometry.") + name + " must be a power of two");
    };
    check(channels, "channels");
    check(bank_groups_per_channel, "bank_groups_per_channel");
    check(banks_per_group, "banks_per_group");
    check(row_bytes, "row_bytes");
    check(column_bytes, "column_bytes");
    check(rows_per_bank_dram, "rows_per_bank_dram");
    check(rows_per_bank_scm, "rows_per_bank_scm");
    check(cacheline_bytes, "cacheline_bytes");
    if (cacheline_bytes < column_bytes || row_bytes < cacheline_bytes)
      throw ConfigError("geometry: require column_bytes <= cacheline_bytes <= row_bytes");
    if (columns_per_line() > 8)
      throw ConfigError("geometry: at most 8 columns per cacheline (8-bit MSHR column mask)");
    if (lines_per_row() > 8)
      throw ConfigError("geometry: at most 8 cachelines per row (48-bit row metadata)");
    if (rows_per_bank_scm < rows_per_bank_dram || rows_per_bank_scm / rows_per_bank_dram > 4)
      throw ConfigError("geometry: SCM/DRAM capacity ratio must be 1..4 (2-bit cache tag)");
  }
};

struct AddressDecomposition {
  std::uint32_t channel = 0;
  std::uint32_t bank_group = 0;
  std::uint32_t bank = 0;
  std::uint32_t row = 0;
  std::uint32_t column = 0;  ///< column within the row, 0..columns_per_row-1
  std::uint32_t byte_offset = 0;

  /// Bank index within the channel, bank-group major.
  std::uint32_t bank_id(const DeviceGeometry& g) const { return bank_group * g.banks_per_group + bank; }
  bool operator==(const AddressDecomposition&) const = default;
};

/// Throws std::out_of_range when addr lies beyond the rank's capacity.
inline AddressDecomposition decompose_address(Addr addr, const DeviceGeometry& g, Rank rank = Rank::Scm) {
  if (addr >= g.capacity(rank)) throw std::out_of_range("address beyond " + std::string(to_string(rank)) + " capacity");
  AddressDecomposition d;
  unsigned shift = 0;
  auto take = [&](unsigned bits) {
    const auto v = static_cast<std::uint32_t>((addr >> shift) & low_mask(bits));
    shift += bits;
    return v;
  };
  d.byte_offset = take(g.byte_bits());
  const auto col_in_line = take(g.col_in_line_bits());
  d.channel = take(g.channel_bits());
  d.bank_group = take(g.bank_group_bits());
  d.bank = take(g.bank_bits());
  const auto line_in_row = take(g.line_in_row_bits());
  d.row = static_cast<std::uint32_t>(addr >> shift);
  d.column = line_in_row * g.columns_per_line() + col_in_line;
  return d;
}

inline Addr compose_address(const AddressDecomposition& d, const DeviceGeometry& g) {
  Addr a = 0;
  unsigned shift = 0;
  auto put = [&](std::uint64_t v, unsigned bits) {
    a |= (v & low_mask(bits)) << shift;
    shift += bits;
  };
  put(d.byte_offset, g.byte_bits());
  put(d.column % g.columns_per_line(), g.col_in_line_bits());
  put(d.channel, g.channel_bits());
  put(d.bank_group, g.bank_group_bits());
  put(d.bank, g.bank_bits());
  put(d.column / g.columns_per_line(), g.line_in_row_bits());
  a |= Addr{d.row} << shift;
  return a;
}

/// Location of an SCM line inside the direct-mapped DRAM cache.
struct DramCacheIndex {
  std::uint64_t set = 0;  ///< DRAM cacheline slot; set * cacheline_bytes is its DRAM address
  std::uint32_t tag = 0;
  std::uint32_t sector = 0;  ///< column within the cacheline
  bool operator==(const DramCacheIndex&) const = default;
};

inline DramCacheIndex dram_cache_index(Addr scm_addr, const DeviceGeometry& g) {
  if (scm_addr >= g.capacity(Rank::Scm)) throw std::out_of_range("address beyond scm capacity");
  const std::uint64_t line = scm_addr >> g.line_offset_bits();
  const std::uint64_t n = g.dram_cache_lines();
  return {line % n, static_cast<std::uint32_t>(line / n),
          static_cast<std::uint32_t>((scm_addr >> g.byte_bits()) & low_mask(g.col_in_line_bits()))};
}

/// Home SCM address of the cacheline (tag, set).
inline Addr scm_line_address(std::uint64_t set, std::uint32_t tag, const DeviceGeometry& g) {
  return (std::uint64_t{tag} * g.dram_cache_lines() + set) << g.line_offset_bits();
}

/// Which of the row's cachelines the set occupies.
inline std::uint32_t line_in_row(std::uint64_t set, const DeviceGeometry& g) {
  const unsigned shift = g.channel_bits() + g.bank_group_bits() + g.bank_bits();
  return static_cast<std::uint32_t>((set >> shift) & low_mask(g.line_in_row_bits()));
}

/// DRAM location of a cached column.
inline AddressDecomposition dram_location(std::uint64_t set, std::uint32_t sector, const DeviceGeometry& g) {
  return decompose_address((set << g.line_offset_bits()) | (Addr{sector} << g.byte_bits()), g, Rank::Dram);
}

/// True for the row's last column, which holds the row metadata and never caches data.
inline bool is_metadata_column(std::uint32_t line_in_row_idx, std::uint32_t sector, const DeviceGeometry& g) {
  return line_in_row_idx == g.lines_per_row() - 1 && sector == g.columns_per_line() - 1;
}

inline bool is_metadata_column(const DramCacheIndex& idx, const DeviceGeometry& g) {
  return is_metadata_column(line_in_row(idx.set, g), idx.sector, g);
}

/// Channel-local DRAM row identifier, row-major over the channel's banks.
/// Eight consecutive ids share one tag-cache line.
inline std::uint64_t channel_row_id(const AddressDecomposition& d, const DeviceGeometry& g) {
  return std::uint64_t{d.row} * g.banks_per_channel() + d.bank_id(g);
}

}  // namespace hmsim
