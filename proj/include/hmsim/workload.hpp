#pragma once

#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "hmsim/types.hpp"

namespace hmsim {

inline constexpr std::uint32_t kSectorBytes = 32;

struct TraceRecord {
  std::uint32_t stream = 0;
  Op op = Op::Read;
  Addr address = 0;
  std::uint32_t size = kSectorBytes;
  bool operator==(const TraceRecord&) const = default;
};

class TraceError : public std::runtime_error {
 public:
  TraceError(std::size_t line, const std::string& what)
      : std::runtime_error("trace line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Splits a record into 32 B sector records.
inline std::vector<TraceRecord> split_sectors(const TraceRecord& r) {
  std::vector<TraceRecord> out;
  for (std::uint32_t off = 0; off < r.size; off += kSectorBytes) out.push_back({r.stream, r.op, r.address + off, kSectorBytes});
  return out;
}

/// Parses `stream op addr_hex size` lines; `#` starts a comment. Records are
/// returned already split into sectors. `capacity` bounds addresses (0: unchecked).
inline std::vector<TraceRecord> parse_trace(std::istream& in, std::uint64_t capacity = 0) {
  std::vector<TraceRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
    std::istringstream ss(line);
    std::string stream_s, op_s, addr_s, size_s, extra;
    if (!(ss >> stream_s)) continue;
    if (!(ss >> op_s >> addr_s >> size_s)) throw TraceError(lineno, "expected 'stream op addr size'");
    if (ss >> extra) throw TraceError(lineno, "trailing field '" + extra + "'");
    TraceRecord r;
    try {
      std::size_t pos = 0;
      const unsigned long s = std::stoul(stream_s, &pos, 10);
      if (pos != stream_s.size()) throw std::invalid_argument("stream");
      r.stream = static_cast<std::uint32_t>(s);
    } catch (const std::exception&) {
      throw TraceError(lineno, "bad stream id '" + stream_s + "'");
    }
    if (op_s == "R" || op_s == "r")
      r.op = Op::Read;
    else if (op_s == "W" || op_s == "w")
      r.op = Op::Write;
    else
      throw TraceError(lineno, "unknown op '" + op_s + "'");
    try {
      std::size_t pos = 0;
      r.address = std::stoull(addr_s, &pos, 16);
      if (pos != addr_s.size()) throw std::invalid_argument("addr");
    } catch (const std::exception&) {
      throw TraceError(lineno, "bad hex address '" + addr_s + "'");
    }
    try {
      std::size_t pos = 0;
      const unsigned long sz = std::stoul(size_s, &pos, 10);
      if (pos != size_s.size()) throw std::invalid_argument("size");
      r.size = static_cast<std::uint32_t>(sz);
    } catch (const std::exception&) {
      throw TraceError(lineno, "bad size '" + size_s + "'");
    }
    if (r.size == 0 || r.size % kSectorBytes != 0) throw TraceError(lineno, "size must be a positive multiple of 32");
    if (r.address % kSectorBytes != 0) throw TraceError(lineno, "address must be 32 B aligned");
    if (capacity && r.address + r.size > capacity) throw TraceError(lineno, "address beyond capacity");
    for (const auto& s : split_sectors(r)) out.push_back(s);
  }
  return out;
}

inline void write_trace(std::ostream& out, const std::vector<TraceRecord>& records) {
  for (const auto& r : records) {
    std::ostringstream a;
    a << std::hex << r.address;
    out << r.stream << ' ' << (r.op == Op::Read ? 'R' : 'W') << " 0x" << a.str() << ' ' << r.size << '\n';
  }
}

/// Zipf(s) over {1..n} by rejection-inversion (Hormann & Derflinger); O(1) per draw.
class ZipfSampler {
 public:
  ZipfSampler(std::uint64_t n, double s) : n_(n), s_(s) {
    if (n == 0) throw ConfigError("zipf population must be positive");
    if (!(s > 0)) throw ConfigError("zipf exponent must be positive");
    h_x1_ = h_integral(1.5) - 1.0;
    h_n_ = h_integral(static_cast<double>(n) + 0.5);
    cut_ = 2.0 - h_integral_inverse(h_integral(2.5) - h(2.0));
  }

  std::uint64_t operator()(Rng& rng) const {
    for (;;) {
      const double u = h_n_ + uniform01(rng) * (h_x1_ - h_n_);
      const double x = h_integral_inverse(u);
      auto k = static_cast<std::uint64_t>(x + 0.5);
      if (k < 1) k = 1;
      if (k > n_) k = n_;
      const double kd = static_cast<double>(k);
      if (kd - x <= cut_ || u >= h_integral(kd + 0.5) - h(kd)) return k;
    }
  }

  std::uint64_t population() const { return n_; }
  double exponent() const { return s_; }

 private:
  static double helper1(double x) { return std::abs(x) > 1e-8 ? std::log1p(x) / x : 1.0 - x * (0.5 - x * (1.0 / 3.0 - 0.25 * x)); }
  static double helper2(double x) { return std::abs(x) > 1e-8 ? std::expm1(x) / x : 1.0 + x * 0.5 * (1.0 + x / 3.0 * (1.0 + 0.25 * x)); }
  double h_integral(double x) const {
    const double lx = std::log(x);
    return helper2((1.0 - s_) * lx) * lx;
  }
  double h(double x) const { return std::exp(-s_ * std::log(x)); }
  double h_integral_inverse(double x) const {
    double t = x * (1.0 - s_);
    if (t < -1.0) t = -1.0;
    return std::exp(helper1(t) * x);
  }

  std::uint64_t n_;
  double s_;
  double h_x1_ = 0, h_n_ = 0, cut_ = 0;
};

enum class PatternKind : std::uint8_t {
  StreamingRead, StreamingWrite, RandomRead, RandomWrite, MixedRandom, ZipfHotCold, Strided
};

inline std::string_view to_string(PatternKind k) {
  switch (k) {
    case PatternKind::StreamingRead: return "streaming_read";
    case PatternKind::StreamingWrite: return "streaming_write";
    case PatternKind::RandomRead: return "random_read";
    case PatternKind::RandomWrite: return "random_write";
    case PatternKind::MixedRandom: return "mixed_random";
    case PatternKind::ZipfHotCold: return "zipf_hot_cold";
    case PatternKind::Strided: return "strided";
  }
  return "?";
}

inline PatternKind parse_pattern(std::string_view s) {
  for (auto k : {PatternKind::StreamingRead, PatternKind::StreamingWrite, PatternKind::RandomRead, PatternKind::RandomWrite,
                 PatternKind::MixedRandom, PatternKind::ZipfHotCold, PatternKind::Strided})
    if (to_string(k) == s) return k;
  throw ConfigError("unknown workload pattern '" + std::string(s) + "'");
}

struct PatternSpec {
  PatternKind kind = PatternKind::StreamingRead;
  double write_fraction = 0.5;  ///< MixedRandom, ZipfHotCold
  double alpha = 1.2;           ///< ZipfHotCold
  std::uint64_t hot_bytes = 32ull << 20;
  std::uint64_t stride = 256;  ///< Strided, bytes
  std::uint64_t span = 0;      ///< bytes addressed; must be set before generation
  std::uint64_t base = 0;
  std::uint32_t streams = 16;

  void validate() const {
    if (span == 0 || span % kSectorBytes) throw ConfigError("workload.span_bytes must be a positive multiple of 32");
    if (streams == 0) throw ConfigError("workload.streams must be positive");
    if (!(write_fraction >= 0 && write_fraction <= 1)) throw ConfigError("workload.write_fraction must be in [0,1]");
    if (!(alpha > 0)) throw ConfigError("workload.alpha must be positive");
    if (kind == PatternKind::Strided && (stride == 0 || stride % kSectorBytes))
      throw ConfigError("workload.stride must be a positive multiple of 32");
    if (kind == PatternKind::ZipfHotCold) {
      if (hot_bytes < 256 || hot_bytes % 256 || hot_bytes > span)
        throw ConfigError("workload.hot_bytes must be a multiple of 256 within the span");
    }
    if (base % kSectorBytes) throw ConfigError("workload.base must be 32 B aligned");
  }

  std::uint64_t hot_lines() const { return hot_bytes / 256; }
  std::uint64_t span_lines() const { return span / 256; }
};

/// Exact probability that a Zipf(alpha) rank over `n` items falls in the top `k`.
inline double zipf_head_mass(std::uint64_t k, std::uint64_t n, double alpha) {
  double head = 0, total = 0;
  for (std::uint64_t i = 1; i <= n; ++i) {
    const double w = std::pow(static_cast<double>(i), -alpha);
    total += w;
    if (i <= k) head += w;
  }
  return head / total;
}

/// Deterministic record source for a synthetic pattern.
///
/// ZipfHotCold ranks the span's 256 B lines by Zipf(alpha); a draw whose rank
/// falls among the top hot_bytes/256 lines targets the hot region (the first
/// hot_bytes of the span), anything else the cold remainder. Inside either
/// region the line and the sector are uniform, so the hot share equals the
/// Zipf head mass while the hot footprint stays bounded.
class PatternGenerator {
 public:
  PatternGenerator(PatternSpec spec, std::uint64_t seed)
      : spec_(spec), rng_(seed), zipf_(zipf_population(spec), spec.alpha) {
    spec_.validate();
  }

  TraceRecord next() {
    const std::uint64_t i = index_++;
    TraceRecord r;
    r.stream = static_cast<std::uint32_t>(i % spec_.streams);
    const std::uint64_t sectors = spec_.span / kSectorBytes;
    std::uint64_t offset = 0;
    switch (spec_.kind) {
      case PatternKind::StreamingRead:
      case PatternKind::StreamingWrite:
        offset = (i % sectors) * kSectorBytes;
        r.op = spec_.kind == PatternKind::StreamingRead ? Op::Read : Op::Write;
        break;
      case PatternKind::RandomRead:
      case PatternKind::RandomWrite:
        offset = uniform_below(rng_, sectors) * kSectorBytes;
        r.op = spec_.kind == PatternKind::RandomRead ? Op::Read : Op::Write;
        break;
      case PatternKind::MixedRandom:
        offset = uniform_below(rng_, sectors) * kSectorBytes;
        r.op = bernoulli(rng_, spec_.write_fraction) ? Op::Write : Op::Read;
        break;
      case PatternKind::ZipfHotCold: {
        const std::uint64_t rank = zipf_(rng_);
        const std::uint64_t hot = spec_.hot_lines();
        const std::uint64_t lines = spec_.span_lines();
        std::uint64_t line;
        if (rank <= hot || hot == lines)
          line = uniform_below(rng_, hot);
        else
          line = hot + uniform_below(rng_, lines - hot);
        offset = line * 256 + uniform_below(rng_, 8) * kSectorBytes;
        r.op = bernoulli(rng_, spec_.write_fraction) ? Op::Write : Op::Read;
        break;
      }
      case PatternKind::Strided:
        offset = (i * spec_.stride) % spec_.span;
        offset -= offset % kSectorBytes;
        r.op = Op::Read;
        break;
    }
    r.address = spec_.base + offset;
    return r;
  }

  const PatternSpec& spec() const { return spec_; }

 private:
  static std::uint64_t zipf_population(const PatternSpec& s) {
    return s.kind == PatternKind::ZipfHotCold && s.span >= 256 ? s.span / 256 : 1;
  }

  PatternSpec spec_;
  Rng rng_;
  ZipfSampler zipf_;
  std::uint64_t index_ = 0;
};

inline std::vector<TraceRecord> generate(const PatternSpec& spec, std::uint64_t seed, std::uint64_t length) {
  if (length == 0) throw ConfigError("workload.length must be positive");
  PatternGenerator g(spec, seed);
  std::vector<TraceRecord> out;
  out.reserve(length);
  for (std::uint64_t i = 0; i < length; ++i) out.push_back(g.next());
  return out;
}

}  // namespace hmsim
