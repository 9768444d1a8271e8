#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "hmsim/workload.hpp"

using namespace hmsim;

namespace {

PatternSpec pattern(PatternKind k, std::uint64_t span = 1ull << 30) {
  PatternSpec s;
  s.kind = k;
  s.span = span;
  return s;
}

// Inverse-CDF Zipf sampler over an explicit cumulative table.
class TableZipf {
 public:
  TableZipf(std::uint64_t n, double alpha) {
    double acc = 0;
    for (std::uint64_t i = 1; i <= n; ++i) cdf_.push_back(acc += std::pow(static_cast<double>(i), -alpha));
    for (auto& c : cdf_) c /= acc;
  }
  std::uint64_t operator()(Rng& rng) const {
    const double u = uniform01(rng);
    return static_cast<std::uint64_t>(std::upper_bound(cdf_.begin(), cdf_.end(), u) - cdf_.begin()) + 1;
  }

 private:
  std::vector<double> cdf_;
};

std::vector<TraceRecord> parse(const std::string& text, std::uint64_t capacity = 0) {
  std::istringstream in(text);
  return parse_trace(in, capacity);
}

}  // namespace

TEST(Generate, StreamingReadWalksSectors) {
  const auto r = generate(pattern(PatternKind::StreamingRead), 1, 4);
  ASSERT_EQ(r.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(r[i].address, i * 0x20);
    EXPECT_EQ(r[i].op, Op::Read);
    EXPECT_EQ(r[i].size, 32u);
  }
}

TEST(Generate, StreamingWrapsAtSpan) {
  const auto r = generate(pattern(PatternKind::StreamingWrite, 128), 1, 6);
  EXPECT_EQ(r[4].address, 0u);
  EXPECT_EQ(r[5].address, 0x20u);
  EXPECT_EQ(r[5].op, Op::Write);
}

TEST(Generate, SameSeedSameStream) {
  for (auto k : {PatternKind::RandomRead, PatternKind::MixedRandom, PatternKind::ZipfHotCold, PatternKind::Strided}) {
    const auto a = generate(pattern(k), 99, 5000);
    const auto b = generate(pattern(k), 99, 5000);
    EXPECT_EQ(a, b) << to_string(k);
    std::ostringstream sa, sb;
    write_trace(sa, a);
    write_trace(sb, b);
    EXPECT_EQ(sa.str(), sb.str());
  }
}

TEST(Generate, DifferentSeedsDiffer) {
  EXPECT_NE(generate(pattern(PatternKind::RandomRead), 1, 100), generate(pattern(PatternKind::RandomRead), 2, 100));
}

TEST(Generate, RandomStaysAlignedAndInSpan) {
  auto s = pattern(PatternKind::MixedRandom, 1 << 20);
  s.base = 1 << 20;
  for (const auto& r : generate(s, 3, 100000)) {
    ASSERT_EQ(r.address % 32, 0u);
    ASSERT_GE(r.address, s.base);
    ASSERT_LT(r.address, s.base + s.span);
  }
}

TEST(Generate, MixedWriteFraction) {
  auto s = pattern(PatternKind::MixedRandom);
  s.write_fraction = 0.25;
  const auto recs = generate(s, 4, 100000);
  const auto w = std::count_if(recs.begin(), recs.end(), [](const TraceRecord& r) { return r.op == Op::Write; });
  EXPECT_NEAR(static_cast<double>(w), 25000, 3 * std::sqrt(100000 * 0.25 * 0.75));
}

TEST(Generate, StridedSteps) {
  auto s = pattern(PatternKind::Strided);
  s.stride = 4096;
  const auto r = generate(s, 1, 3);
  EXPECT_EQ(r[1].address, 4096u);
  EXPECT_EQ(r[2].address, 8192u);
}

TEST(Generate, StreamsRoundRobin) {
  auto s = pattern(PatternKind::StreamingRead);
  s.streams = 3;
  const auto r = generate(s, 1, 6);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(r[i].stream, i % 3);
}

TEST(Generate, InvalidParametersRejected) {
  auto s = pattern(PatternKind::MixedRandom);
  s.write_fraction = 1.5;
  EXPECT_THROW(generate(s, 1, 10), ConfigError);
  s = pattern(PatternKind::ZipfHotCold);
  s.alpha = 0;
  EXPECT_THROW(generate(s, 1, 10), ConfigError);
  s = pattern(PatternKind::ZipfHotCold);
  s.hot_bytes = s.span * 2;
  EXPECT_THROW(generate(s, 1, 10), ConfigError);
  EXPECT_THROW(generate(pattern(PatternKind::RandomRead), 1, 0), ConfigError);
  EXPECT_THROW(generate(pattern(PatternKind::RandomRead, 0), 1, 10), ConfigError);
  EXPECT_THROW(parse_pattern("zipfian"), ConfigError);
}

TEST(Zipf, SamplerAgreesWithInverseCdfTable) {
  for (double alpha : {0.8, 1.2, 2.0}) {
    const std::uint64_t n = 1000;
    const ZipfSampler fast(n, alpha);
    const TableZipf table(n, alpha);
    Rng ra(61), rb(62);
    const int draws = 400000;
    std::vector<int> ha(n + 1), hb(n + 1);
    for (int i = 0; i < draws; ++i) {
      ++ha[fast(ra)];
      ++hb[table(rb)];
    }
    for (std::uint64_t k : {1u, 2u, 5u, 20u, 100u}) {
      int ca = 0, cb = 0;
      for (std::uint64_t i = 1; i <= k; ++i) ca += ha[i], cb += hb[i];
      const double p = zipf_head_mass(k, n, alpha);
      const double tol = 4 * std::sqrt(draws * p * (1 - p)) * std::sqrt(2.0);
      EXPECT_NEAR(ca, cb, tol) << "alpha " << alpha << " k " << k;
      EXPECT_NEAR(ca, draws * p, tol) << "alpha " << alpha << " k " << k;
    }
  }
}

TEST(Zipf, HotSetWithinDramCapacityDrawsNinetyPercent) {
  for (std::uint64_t hot : {16ull << 20, 256ull << 20}) {
    auto s = pattern(PatternKind::ZipfHotCold);
    s.hot_bytes = hot;
    s.alpha = 1.2;
    const auto recs = generate(s, 63, 1000000);
    const auto in_hot = std::count_if(recs.begin(), recs.end(), [&](const TraceRecord& r) { return r.address < hot; });
    const double share = static_cast<double>(in_hot) / 1e6;
    const double p = zipf_head_mass(hot / 256, s.span / 256, 1.2);
    EXPECT_GE(share, 0.90) << hot;
    EXPECT_NEAR(share, p, 4 * std::sqrt(p * (1 - p) / 1e6)) << hot;
  }
}

TEST(Trace, ReadSector) {
  const auto r = parse("0 R 0x1000 32\n");
  ASSERT_EQ(r.size(), 1u);
  EXPECT_EQ(r[0], (TraceRecord{0, Op::Read, 0x1000, 32}));
}

TEST(Trace, WriteSplitsIntoEightSectors) {
  const auto r = parse("1 W 0x2000 256\n");
  ASSERT_EQ(r.size(), 8u);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(r[i], (TraceRecord{1, Op::Write, 0x2000 + 0x20 * i, 32}));
  EXPECT_EQ(r.back().address, 0x20E0u);
}

TEST(Trace, CommentsAndBlankLines) {
  const auto r = parse("# header\n\n  2 r 40 64  # trailing\n");
  ASSERT_EQ(r.size(), 2u);
  EXPECT_EQ(r[0].address, 0x40u);
  EXPECT_EQ(r[0].stream, 2u);
}

TEST(Trace, ErrorsCarryLineNumbers) {
  const std::pair<const char*, const char*> bad[] = {
      {"0 R 0x0 32\n0 X 0x0 32\n", "unknown op"},
      {"0 R 0x0 48\n", "multiple of 32"},
      {"0 R 0x10 32\n", "aligned"},
      {"0 R 0xzz 32\n", "bad hex"},
      {"0 R 0x0\n", "expected"},
      {"0 R 0x0 32 9\n", "trailing"},
      {"a R 0x0 32\n", "stream"},
  };
  for (const auto& [text, msg] : bad) {
    try {
      parse(text);
      ADD_FAILURE() << "accepted: " << text;
    } catch (const TraceError& e) {
      EXPECT_NE(std::string(e.what()).find(msg), std::string::npos) << e.what();
    }
  }
  try {
    parse("0 R 0x0 32\n0 X 0x0 32\n");
  } catch (const TraceError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
}

TEST(Trace, CapacityBound) {
  EXPECT_THROW(parse("0 R 0x1000 32\n", 0x1000), TraceError);
  EXPECT_NO_THROW(parse("0 R 0xFE0 32\n", 0x1000));
  EXPECT_THROW(parse("0 W 0xFE0 64\n", 0x1000), TraceError);
}

TEST(Trace, ParseOfSerializeIsIdentity) {
  Rng rng(64);
  std::vector<TraceRecord> recs;
  for (int i = 0; i < 20000; ++i)
    recs.push_back({static_cast<std::uint32_t>(uniform_below(rng, 64)), bernoulli(rng, 0.5) ? Op::Write : Op::Read,
                    uniform_below(rng, 1ull << 40) * 32, 32});
  std::stringstream ss;
  write_trace(ss, recs);
  EXPECT_EQ(parse_trace(ss), recs);
}

TEST(Trace, SerializeOfParseIsIdentityOnCanonicalText) {
  const std::string text = "0 R 0x1000 32\n3 W 0xabc0 32\n";
  std::ostringstream out;
  write_trace(out, parse(text));
  EXPECT_EQ(out.str(), text);
}
