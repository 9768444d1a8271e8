#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "hmsim/cli.hpp"

using namespace hmsim;
namespace fs = std::filesystem;

namespace {

const std::string kConfigs = std::string(HMSIM_SOURCE_DIR) + "/configs";

struct CliResult {
  int code;
  std::string out, err;
};

CliResult cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli_main(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::path(::testing::TempDir()) / ("hmsim_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Small enough for unit tests; the tiny hot set keeps the DRAM cache busy.
const std::vector<std::string> kSmall = {"-s", "workload.length=3000", "-s", "engine.warmup_requests=0"};

std::vector<std::string> with_small(std::vector<std::string> args) {
  args.insert(args.end(), kSmall.begin(), kSmall.end());
  return args;
}

std::string slurp(const fs::path& p) { return cli_detail::read_file(p.string()); }

}  // namespace

TEST(Config, DefaultsRoundTripThroughJson) {
  const Json j = to_json(ExperimentConfig{});
  EXPECT_EQ(to_json(parse_config(j)), j);
  EXPECT_EQ(to_json(parse_config(Json::object())), j);
}

TEST(Config, OverrideChangesOnlyThatKey) {
  const Json before = to_json(parse_config(Json::object())).flatten();
  const std::pair<std::string, std::string> cases[] = {
      {"l2.ctc_l2_ways", "2"}, {"policy.kind", "always_fill"}, {"workload.alpha", "1.5"}, {"engine.seed", "42"}};
  for (const auto& [key, value] : cases) {
    const Json after = to_json(parse_config(Json::object(), {{key, value}})).flatten();
    std::vector<std::string> changed;
    for (const auto& [ptr, v] : after.items())
      if (before.at(ptr) != v) changed.push_back(ptr);
    ASSERT_EQ(changed.size(), 1u) << key;
    std::string expect_ptr = "/" + key;
    std::replace(expect_ptr.begin(), expect_ptr.end(), '.', '/');
    EXPECT_EQ(changed[0], expect_ptr);
  }
}

TEST(Config, AliasesResolveToFullKeys) {
  for (const auto& [alias, full] : override_aliases()) EXPECT_EQ(canonical_key(alias), full);
  const auto c = parse_config(Json::object(), {{"policy", "always_bypass"}, {"ctc_l2_ways", "1"}, {"scm_mode", "slc"}});
  EXPECT_EQ(c.policy.kind, PolicyKind::AlwaysBypass);
  EXPECT_EQ(c.l2.ctc_l2_ways, 1u);
  EXPECT_EQ(c.scm_mode, ScmMode::Slc);
}

TEST(Config, UnknownKeyIsNamed) {
  try {
    parse_config(Json::object(), {{"cache.no_such_key", "1"}});
    FAIL() << "accepted an unknown key";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("cache.no_such_key"), std::string::npos) << e.what();
  }
  try {
    parse_config(Json{{"workload", {{"lenght", 5}}}});
    FAIL() << "accepted a misspelt key";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("workload.lenght"), std::string::npos) << e.what();
  }
}

TEST(Config, WrongTypesAndRangesRejected) {
  EXPECT_THROW(parse_config(Json::object(), {{"workload.length", "\"many\""}}), ConfigError);
  EXPECT_THROW(parse_config(Json::object(), {{"workload.write_fraction", "1.5"}}), ConfigError);
  EXPECT_THROW(parse_config(Json::object(), {{"policy.kind", "lru"}}), ConfigError);
  EXPECT_THROW(parse_config(Json::object(), {{"geometry.channels", "6"}}), ConfigError);
  EXPECT_THROW(parse_config(Json::object(), {{"power.hysteresis", "1"}}), ConfigError);
}

TEST(Config, ShippedConfigsParse) {
  int n = 0;
  for (const auto& e : fs::directory_iterator(kConfigs)) {
    if (e.path().extension() != ".json") continue;
    EXPECT_NO_THROW(load_config(e.path().string())) << e.path();
    ++n;
  }
  EXPECT_GE(n, 3);
}

TEST(Config, LookupThroughConfigDirectory) {
  EXPECT_THROW(cli_detail::resolve_config_path("quick"), ConfigError);
  ::setenv(kConfigDirEnv, kConfigs.c_str(), 1);
  EXPECT_EQ(fs::path(cli_detail::resolve_config_path("quick")), fs::path(kConfigs) / "quick.json");
  EXPECT_EQ(fs::path(cli_detail::resolve_config_path("quick.json")), fs::path(kConfigs) / "quick.json");
  EXPECT_THROW(cli_detail::resolve_config_path("absent"), ConfigError);
  ::unsetenv(kConfigDirEnv);
}

TEST(Sweep, ProductSizesAndOrder) {
  using cli_detail::parse_axis;
  const auto two = cli_detail::product({parse_axis("a=1,2"), parse_axis("b=x,y")});
  ASSERT_EQ(two.size(), 4u);
  EXPECT_EQ(two[0], (std::vector<std::string>{"1", "x"}));
  EXPECT_EQ(two[1], (std::vector<std::string>{"1", "y"}));
  EXPECT_EQ(two[3], (std::vector<std::string>{"2", "y"}));
  EXPECT_EQ(cli_detail::product({parse_axis("a=1,2"), parse_axis("b=1,2"), parse_axis("c=1,2")}).size(), 8u);
  EXPECT_EQ(cli_detail::product({parse_axis("a=1")}).size(), 1u);
  EXPECT_THROW(parse_axis("a="), ConfigError);
  EXPECT_THROW(parse_axis("novalue"), ConfigError);
}

TEST(Sweep, SinglePointMatchesRun) {
  const fs::path dir = scratch("single");
  const std::string cfg = kConfigs + "/quick.json";
  const auto run = cli(with_small({"run", cfg, "--json", (dir / "run.json").string(), "--csv", (dir / "run.csv").string()}));
  ASSERT_EQ(run.code, kExitOk) << run.err;
  const auto sw = cli(with_small({"sweep", cfg, "-a", "policy=scm_aware", "-o", (dir / "sweep").string(), "-j", "1"}));
  ASSERT_EQ(sw.code, kExitOk) << sw.err;
  EXPECT_EQ(slurp(dir / "sweep" / "point-000.json"), slurp(dir / "run.json"));
  EXPECT_EQ(slurp(dir / "sweep" / "point-000.csv"), slurp(dir / "run.csv"));
  EXPECT_EQ(slurp(dir / "sweep" / "sweep.csv"), sw.out);
}

TEST(Sweep, GridWritesOneRowPerPoint) {
  const fs::path dir = scratch("grid");
  const auto sw = cli(with_small({"sweep", kConfigs + "/quick.json", "-a", "policy=always_fill,always_bypass", "-a",
                                  "layout=amil,tad", "-o", dir.string(), "-j", "2"}));
  ASSERT_EQ(sw.code, kExitOk) << sw.err;
  std::istringstream in(sw.out);
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  ASSERT_EQ(lines.size(), 5u);
  EXPECT_EQ(lines[0].rfind("point,policy,layout,runtime_cycles,", 0), 0u);
  EXPECT_EQ(lines[1].rfind("0,always_fill,amil,", 0), 0u);
  EXPECT_EQ(lines[4].rfind("3,always_bypass,tad,", 0), 0u);
  for (int i = 0; i < 4; ++i) EXPECT_TRUE(fs::exists(dir / ("point-00" + std::to_string(i) + ".json")));
}

TEST(Sweep, BadPointFailsBeforeRunning) {
  const fs::path dir = scratch("bad");
  const auto sw = cli({"sweep", kConfigs + "/quick.json", "-a", "ctc_l2_ways=2,9", "-o", dir.string()});
  EXPECT_EQ(sw.code, kExitUsage);
  EXPECT_FALSE(fs::exists(dir / "point-000.json"));
}

TEST(Report, SingleReportTable) {
  const fs::path dir = scratch("report1");
  ASSERT_EQ(cli(with_small({"run", kConfigs + "/quick.json", "--json", (dir / "a.json").string()})).code, kExitOk);
  const auto r = cli({"report", (dir / "a.json").string()});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_EQ(r.out.rfind("metric", 0), 0u);
  EXPECT_NE(r.out.find("a.json"), std::string::npos);
  std::istringstream in(r.out);
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  EXPECT_EQ(lines.size(), 2 + headline_metrics().size());
  EXPECT_EQ(lines[1].find_first_not_of('-'), std::string::npos);
}

TEST(Report, TwoReportsShowDeltas) {
  const fs::path dir = scratch("report2");
  ASSERT_EQ(cli(with_small({"run", kConfigs + "/quick.json", "--json", (dir / "a.json").string()})).code, kExitOk);
  ASSERT_EQ(cli(with_small({"run", kConfigs + "/quick.json", "-s", "policy=always_fill", "--json",
                            (dir / "b.json").string()}))
                .code,
            kExitOk);
  const auto r = cli({"report", (dir / "a.json").string(), (dir / "b.json").string()});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_NE(r.out.find("b.json"), std::string::npos);
  EXPECT_NE(r.out.find("requests_completed"), std::string::npos);
  EXPECT_NE(r.out.find("(+0, +0%)"), std::string::npos);  // same request count
}

TEST(Report, DeltaArithmetic) {
  Json a = {{"schema_version", kReportSchemaVersion}}, b;
  for (const Metric& m : headline_metrics()) a[Json::json_pointer(std::string(m.pointer))] = 100;
  b = a;
  b["/summary/runtime_cycles"_json_pointer] = 150;
  const std::string t = comparison_table({{"a", a}, {"b", b}});
  EXPECT_NE(t.find("150 (+50, +50%)"), std::string::npos) << t;
}

TEST(Report, SchemaMismatchIsAnError) {
  Json a = {{"schema_version", 1}}, b = {{"schema_version", 2}};
  try {
    comparison_table({{"a", a}, {"b", b}});
    FAIL();
  } catch (const ReportError& e) {
    EXPECT_STREQ(e.what(), "schema version mismatch: a has 1, b has 2");
  }
  EXPECT_THROW(comparison_table({{"x", Json::object()}}), ReportError);
  const fs::path dir = scratch("schema");
  cli_detail::write_file((dir / "a.json").string(), a.dump());
  cli_detail::write_file((dir / "b.json").string(), b.dump());
  const auto r = cli({"report", (dir / "a.json").string(), (dir / "b.json").string()});
  EXPECT_EQ(r.code, kExitUsage);
  EXPECT_NE(r.err.find("schema version mismatch"), std::string::npos);
}

TEST(Cli, RunWritesReportAndTimeline) {
  const fs::path dir = scratch("run");
  const auto r = cli(with_small({"run", kConfigs + "/quick.json", "--json", (dir / "r.json").string(), "--csv",
                                 (dir / "nested" / "r.csv").string()}));
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const Json j = Json::parse(slurp(dir / "r.json"));
  EXPECT_EQ(j["schema_version"], kReportSchemaVersion);
  EXPECT_EQ(j["summary"]["requests_completed"], 3000);
  EXPECT_EQ(j["correctness"]["value_mismatches"], 0);
  const std::string csv = slurp(dir / "nested" / "r.csv");
  EXPECT_EQ(csv.rfind(std::string(kTimelineHeader) + "\n", 0), 0u);
  EXPECT_EQ(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')), j["power"]["windows"].get<std::size_t>() + 1);
}

TEST(Cli, RunToStdoutWithoutOutputPath) {
  const auto r = cli(with_small({"run", kConfigs + "/quick.json"}));
  ASSERT_EQ(r.code, kExitOk);
  EXPECT_EQ(Json::parse(r.out)["schema_version"], kReportSchemaVersion);
}

TEST(Cli, ExitCodes) {
  EXPECT_EQ(cli({}).code, kExitUsage);
  EXPECT_EQ(cli({"--help"}).code, kExitOk);
  EXPECT_EQ(cli({"frobnicate"}).code, kExitUsage);
  const auto unknown = cli({"run", kConfigs + "/quick.json", "-s", "cache.no_such_key=1"});
  EXPECT_EQ(unknown.code, kExitUsage);
  EXPECT_NE(unknown.err.find("cache.no_such_key"), std::string::npos);
  EXPECT_EQ(cli({"run", "/nonexistent/config.json"}).code, kExitUsage);
  EXPECT_EQ(cli({"run", kConfigs + "/quick.json", "-s", "noequals"}).code, kExitUsage);
}

TEST(Cli, GeneratedTraceValidatesAndReplays) {
  const fs::path dir = scratch("trace");
  const std::string trace = (dir / "t.trace").string();
  ASSERT_EQ(cli({"gen-trace", kConfigs + "/quick.json", "-s", "workload.length=500", "-o", trace}).code, kExitOk);
  const auto v = cli({"validate-trace", trace});
  ASSERT_EQ(v.code, kExitOk) << v.err;
  EXPECT_EQ(v.out.rfind("records 500\n", 0), 0u);
  const auto generated = cli({"run", kConfigs + "/quick.json", "-s", "workload.length=500", "-s", "engine.warmup_requests=0"});
  const auto replayed = cli({"run", kConfigs + "/quick.json", "-s", "workload.trace_file=" + trace, "-s",
                             "engine.warmup_requests=0"});
  ASSERT_EQ(replayed.code, kExitOk) << replayed.err;
  EXPECT_EQ(Json::parse(generated.out)["summary"], Json::parse(replayed.out)["summary"]);
}

TEST(Cli, MalformedTraceReportsLine) {
  const fs::path dir = scratch("badtrace");
  cli_detail::write_file((dir / "bad.trace").string(), "0 R 0x0 32\n0 Q 0x20 32\n");
  const auto v = cli({"validate-trace", (dir / "bad.trace").string()});
  EXPECT_EQ(v.code, kExitUsage);
  EXPECT_NE(v.err.find("trace line 2"), std::string::npos) << v.err;
}
