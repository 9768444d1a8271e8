#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>
#include <limits>

#include "hmsim/bypass.hpp"
#include "hmsim/channel.hpp"
#include "hmsim/dram_cache.hpp"
#include "hmsim/energy.hpp"
#include "hmsim/geometry.hpp"
#include "hmsim/l2_ctc.hpp"
#include "hmsim/timing.hpp"
#include "hmsim/workload.hpp"

namespace hmsim {

using Json = nlohmann::ordered_json;

enum class SimMode : std::uint8_t { Cache, Flat, Device };

inline std::string_view to_string(SimMode m) {
  switch (m) {
    case SimMode::Cache: return "cache";
    case SimMode::Flat: return "flat";
    case SimMode::Device: return "device";
  }
  return "?";
}

inline SimMode parse_sim_mode(std::string_view s) {
  if (s == "cache") return SimMode::Cache;
  if (s == "flat") return SimMode::Flat;
  if (s == "device") return SimMode::Device;
  throw ConfigError("unknown engine.mode '" + std::string(s) + "'");
}

inline Rank parse_rank(std::string_view s) {
  if (s == "dram") return Rank::Dram;
  if (s == "scm") return Rank::Scm;
  throw ConfigError("unknown rank '" + std::string(s) + "'");
}

struct CacheConfig {
  MetadataLayout layout = MetadataLayout::Amil;
  std::uint32_t mshr_entries = 128;
  std::uint32_t ctc_latency = 10;
};

struct EngineConfig {
  SimMode mode = SimMode::Cache;
  Rank device_target = Rank::Scm;  ///< device mode only
  std::uint64_t seed = 1;
  std::uint64_t warmup_requests = 0;
  std::uint32_t stream_window = 64;
  std::uint32_t issue_width = 16;
  bool check_values = true;
};

struct WorkloadConfig {
  PatternKind pattern = PatternKind::StreamingRead;
  std::uint64_t length = 100'000;
  std::uint32_t streams = 16;
  double write_fraction = 0.5;
  double alpha = 1.2;
  std::uint64_t hot_bytes = 32ull << 20;
  std::uint64_t stride = 256;
  std::uint64_t span_bytes = 0;  ///< 0: whole addressable space
  std::uint64_t base = 0;
  std::string trace_file;
};

struct PowerConfig {
  Cycle window = 10'000;
  std::optional<double> budget_w;
  double hysteresis = 0.1;
};

struct OutputConfig {
  std::string json;
  std::string csv;
};

/// Per-field SCM timing overrides applied on top of the selected mode.
struct TimingOverrides {
  std::optional<std::uint32_t> tCL, tRCD, tRAS, tWR, tRP, tBL;
  TimingParams apply(TimingParams t) const {
    if (tCL) t.tCL = *tCL;
    if (tRCD) t.tRCD = *tRCD;
    if (tRAS) t.tRAS = *tRAS;
    if (tWR) t.tWR = *tWR;
    if (tRP) t.tRP = *tRP;
    if (tBL) t.tBL = *tBL;
    return t;
  }
};

struct ExperimentConfig {
  DeviceGeometry geometry;
  TimingParams dram = dram_timing();
  ScmMode scm_mode = ScmMode::Mlc;
  TimingOverrides scm_overrides;
  Cycle starvation_limit = 10'000;
  EnergyParams energy;
  bool scm_pre_full_row = false;
  CacheConfig cache;
  PolicyConfig policy;
  L2Config l2;
  EngineConfig engine;
  WorkloadConfig workload;
  PowerConfig power;
  OutputConfig output;

  /// SCM timing in force: flat mode runs the SCM in SLC.
  TimingParams scm() const {
    return scm_overrides.apply(scm_timing(engine.mode == SimMode::Flat ? ScmMode::Slc : scm_mode));
  }

  L2Config effective_l2() const {
    L2Config c = l2;
    if (engine.mode == SimMode::Flat) c.ctc_l2_ways = 0;
    return c;
  }

  std::uint64_t address_space() const {
    switch (engine.mode) {
      case SimMode::Cache: return geometry.capacity(Rank::Scm);
      case SimMode::Flat: return geometry.capacity(Rank::Dram) + geometry.capacity(Rank::Scm);
      case SimMode::Device: return geometry.capacity(engine.device_target);
    }
    return 0;
  }

  PatternSpec pattern_spec() const {
    PatternSpec p;
    p.kind = workload.pattern;
    p.write_fraction = workload.write_fraction;
    p.alpha = workload.alpha;
    p.hot_bytes = workload.hot_bytes;
    p.stride = workload.stride;
    p.base = workload.base;
    p.streams = workload.streams;
    p.span = workload.span_bytes ? workload.span_bytes : address_space() - workload.base;
    return p;
  }

  void validate() const {
    geometry.validate();
    effective_l2().validate();
    if (cache.mshr_entries == 0) throw ConfigError("cache.mshr_entries must be positive");
    if (policy.n_levels < 1 || policy.n_levels > 4) throw ConfigError("policy.n_levels must be in 1..4 (2-bit affinity)");
    if (!(policy.probability >= 0 && policy.probability <= 1)) throw ConfigError("policy.probability must be in [0,1]");
    if (!(policy.avg_weight >= 0 && policy.avg_weight <= 1)) throw ConfigError("policy.avg_weight must be in [0,1]");
    if (engine.stream_window == 0) throw ConfigError("engine.stream_window must be positive");
    if (engine.issue_width == 0) throw ConfigError("engine.issue_width must be positive");
    if (power.window == 0) throw ConfigError("power.window must be positive");
    if (power.hysteresis < 0 || power.hysteresis >= 1) throw ConfigError("power.hysteresis must be in [0,1)");
    if (power.budget_w && *power.budget_w < 0) throw ConfigError("power.budget_w must be non-negative");
    if (scm().tBL == 0 || dram.tBL == 0) throw ConfigError("timing: tBL must be positive");
    if (dram.refresh_interval && dram.refresh_duration >= dram.refresh_interval)
      throw ConfigError("timing.dram.refresh_duration must be shorter than the interval");
    if (workload.trace_file.empty()) {
      if (workload.length == 0) throw ConfigError("workload.length must be positive");
      if (workload.base >= address_space()) throw ConfigError("workload.base beyond address space");
      const PatternSpec p = pattern_spec();
      if (p.base + p.span > address_space()) throw ConfigError("workload.span_bytes beyond address space");
      p.validate();
    }
  }
};

namespace detail {

inline Json timing_json(const TimingParams& t) {
  return Json{{"tCL", t.tCL}, {"tRCD", t.tRCD}, {"tRAS", t.tRAS}, {"tWR", t.tWR}, {"tRP", t.tRP},
              {"tBL", t.tBL}, {"refresh_interval", t.refresh_interval}, {"refresh_duration", t.refresh_duration}};
}

inline Json opt_json(const std::optional<std::uint32_t>& v) { return v ? Json(*v) : Json(nullptr); }

template <class T>
T get_uint(const Json& j, const std::string& key) {
  if (!j.is_number_integer() && !j.is_number_unsigned()) throw ConfigError(key + ": expected a non-negative integer");
  if (j.is_number_integer() && j.get<std::int64_t>() < 0) throw ConfigError(key + ": expected a non-negative integer");
  const auto v = j.get<std::uint64_t>();
  if (v > std::numeric_limits<T>::max()) throw ConfigError(key + ": value too large");
  return static_cast<T>(v);
}

inline double get_double(const Json& j, const std::string& key) {
  if (!j.is_number()) throw ConfigError(key + ": expected a number");
  return j.get<double>();
}

inline std::string get_string(const Json& j, const std::string& key) {
  if (!j.is_string()) throw ConfigError(key + ": expected a string");
  return j.get<std::string>();
}

inline bool get_bool(const Json& j, const std::string& key) {
  if (!j.is_boolean()) throw ConfigError(key + ": expected true or false");
  return j.get<bool>();
}

inline TimingParams timing_from(const Json& j, const std::string& prefix) {
  TimingParams t;
  t.tCL = get_uint<std::uint32_t>(j.at("tCL"), prefix + ".tCL");
  t.tRCD = get_uint<std::uint32_t>(j.at("tRCD"), prefix + ".tRCD");
  t.tRAS = get_uint<std::uint32_t>(j.at("tRAS"), prefix + ".tRAS");
  t.tWR = get_uint<std::uint32_t>(j.at("tWR"), prefix + ".tWR");
  t.tRP = get_uint<std::uint32_t>(j.at("tRP"), prefix + ".tRP");
  t.tBL = get_uint<std::uint32_t>(j.at("tBL"), prefix + ".tBL");
  t.refresh_interval = get_uint<std::uint32_t>(j.at("refresh_interval"), prefix + ".refresh_interval");
  t.refresh_duration = get_uint<std::uint32_t>(j.at("refresh_duration"), prefix + ".refresh_duration");
  return t;
}

inline std::optional<std::uint32_t> opt_uint(const Json& j, const std::string& key) {
  if (j.is_null()) return std::nullopt;
  return get_uint<std::uint32_t>(j, key);
}

/// Overlays `user` onto `base`, rejecting keys the defaults do not define and
/// values whose JSON kind differs. A null default accepts null or a number.
inline void overlay(Json& base, const Json& user, const std::string& prefix) {
  if (!user.is_object()) throw ConfigError((prefix.empty() ? "config" : prefix) + ": expected an object");
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError("unknown config key '" + key + "'");
    Json& dst = base[it.key()];
    const Json& src = it.value();
    if (dst.is_object()) {
      overlay(dst, src, key);
    } else if (dst.is_null()) {
      if (!src.is_null() && !src.is_number()) throw ConfigError(key + ": expected a number or null");
      dst = src;
    } else if (dst.is_number()) {
      if (!src.is_number()) throw ConfigError(key + ": expected a number");
      dst = src;
    } else if (dst.is_string()) {
      if (!src.is_string()) throw ConfigError(key + ": expected a string");
      dst = src;
    } else if (dst.is_boolean()) {
      if (!src.is_boolean()) throw ConfigError(key + ": expected true or false");
      dst = src;
    } else {
      dst = src;
    }
  }
}

}  // namespace detail

inline Json to_json(const ExperimentConfig& c) {
  using detail::opt_json;
  Json j;
  const auto& g = c.geometry;
  j["geometry"] = {{"channels", g.channels},
                   {"bank_groups_per_channel", g.bank_groups_per_channel},
                   {"banks_per_group", g.banks_per_group},
                   {"row_bytes", g.row_bytes},
                   {"column_bytes", g.column_bytes},
                   {"rows_per_bank_dram", g.rows_per_bank_dram},
                   {"rows_per_bank_scm", g.rows_per_bank_scm},
                   {"cacheline_bytes", g.cacheline_bytes}};
  j["timing"] = {{"dram", detail::timing_json(c.dram)},
                 {"scm_mode", std::string(to_string(c.scm_mode))},
                 {"scm_overrides",
                  {{"tCL", opt_json(c.scm_overrides.tCL)},
                   {"tRCD", opt_json(c.scm_overrides.tRCD)},
                   {"tRAS", opt_json(c.scm_overrides.tRAS)},
                   {"tWR", opt_json(c.scm_overrides.tWR)},
                   {"tRP", opt_json(c.scm_overrides.tRP)},
                   {"tBL", opt_json(c.scm_overrides.tBL)}}},
                 {"starvation_limit", c.starvation_limit}};
  const auto& e = c.energy;
  j["energy"] = {{"dram_act", e.dram_act}, {"dram_pre", e.dram_pre},     {"dram_rd", e.dram_rd},
                 {"dram_wr", e.dram_wr},   {"scm_act", e.scm_act},       {"scm_pre_wr", e.scm_pre_wr},
                 {"scm_rd", e.scm_rd},     {"scm_wr", e.scm_wr},         {"scm_pre_full_row", c.scm_pre_full_row}};
  j["cache"] = {{"layout", std::string(to_string(c.cache.layout))},
                {"mshr_entries", c.cache.mshr_entries},
                {"ctc_latency", c.cache.ctc_latency}};
  const auto& p = c.policy;
  j["policy"] = {{"kind", std::string(to_string(p.kind))},
                 {"n_levels", p.n_levels},
                 {"f_update", p.f_update},
                 {"activation_counters", p.activation_counters},
                 {"probability", p.probability},
                 {"access_threshold", p.access_threshold},
                 {"avg_weight", p.avg_weight}};
  j["l2"] = {{"total_ways", c.l2.total_ways},
             {"ctc_l2_ways", c.l2.ctc_l2_ways},
             {"sets", c.l2.sets},
             {"line_bytes", c.l2.line_bytes},
             {"sector_bytes", c.l2.sector_bytes},
             {"latency", c.l2.latency}};
  j["engine"] = {{"mode", std::string(to_string(c.engine.mode))},
                 {"device_target", std::string(to_string(c.engine.device_target))},
                 {"seed", c.engine.seed},
                 {"warmup_requests", c.engine.warmup_requests},
                 {"stream_window", c.engine.stream_window},
                 {"issue_width", c.engine.issue_width},
                 {"check_values", c.engine.check_values}};
  const auto& w = c.workload;
  j["workload"] = {{"pattern", std::string(to_string(w.pattern))},
                   {"length", w.length},
                   {"streams", w.streams},
                   {"write_fraction", w.write_fraction},
                   {"alpha", w.alpha},
                   {"hot_bytes", w.hot_bytes},
                   {"stride", w.stride},
                   {"span_bytes", w.span_bytes},
                   {"base", w.base},
                   {"trace_file", w.trace_file}};
  j["power"] = {{"window", c.power.window},
                {"budget_w", c.power.budget_w ? Json(*c.power.budget_w) : Json(nullptr)},
                {"hysteresis", c.power.hysteresis}};
  j["output"] = {{"json", c.output.json}, {"csv", c.output.csv}};
  return j;
}

/// Builds a config from a complete JSON document (see parse_config for partial input).
inline ExperimentConfig from_full_json(const Json& j) {
  using namespace detail;
  ExperimentConfig c;
  const Json& g = j.at("geometry");
  c.geometry.channels = get_uint<std::uint32_t>(g.at("channels"), "geometry.channels");
  c.geometry.bank_groups_per_channel = get_uint<std::uint32_t>(g.at("bank_groups_per_channel"), "geometry.bank_groups_per_channel");
  c.geometry.banks_per_group = get_uint<std::uint32_t>(g.at("banks_per_group"), "geometry.banks_per_group");
  c.geometry.row_bytes = get_uint<std::uint32_t>(g.at("row_bytes"), "geometry.row_bytes");
  c.geometry.column_bytes = get_uint<std::uint32_t>(g.at("column_bytes"), "geometry.column_bytes");
  c.geometry.rows_per_bank_dram = get_uint<std::uint32_t>(g.at("rows_per_bank_dram"), "geometry.rows_per_bank_dram");
  c.geometry.rows_per_bank_scm = get_uint<std::uint32_t>(g.at("rows_per_bank_scm"), "geometry.rows_per_bank_scm");
  c.geometry.cacheline_bytes = get_uint<std::uint32_t>(g.at("cacheline_bytes"), "geometry.cacheline_bytes");

  const Json& t = j.at("timing");
  c.dram = timing_from(t.at("dram"), "timing.dram");
  c.scm_mode = parse_scm_mode(get_string(t.at("scm_mode"), "timing.scm_mode"));
  const Json& o = t.at("scm_overrides");
  c.scm_overrides.tCL = opt_uint(o.at("tCL"), "timing.scm_overrides.tCL");
  c.scm_overrides.tRCD = opt_uint(o.at("tRCD"), "timing.scm_overrides.tRCD");
  c.scm_overrides.tRAS = opt_uint(o.at("tRAS"), "timing.scm_overrides.tRAS");
  c.scm_overrides.tWR = opt_uint(o.at("tWR"), "timing.scm_overrides.tWR");
  c.scm_overrides.tRP = opt_uint(o.at("tRP"), "timing.scm_overrides.tRP");
  c.scm_overrides.tBL = opt_uint(o.at("tBL"), "timing.scm_overrides.tBL");
  c.starvation_limit = get_uint<Cycle>(t.at("starvation_limit"), "timing.starvation_limit");

  const Json& e = j.at("energy");
  c.energy.dram_act = get_double(e.at("dram_act"), "energy.dram_act");
  c.energy.dram_pre = get_double(e.at("dram_pre"), "energy.dram_pre");
  c.energy.dram_rd = get_double(e.at("dram_rd"), "energy.dram_rd");
  c.energy.dram_wr = get_double(e.at("dram_wr"), "energy.dram_wr");
  c.energy.scm_act = get_double(e.at("scm_act"), "energy.scm_act");
  c.energy.scm_pre_wr = get_double(e.at("scm_pre_wr"), "energy.scm_pre_wr");
  c.energy.scm_rd = get_double(e.at("scm_rd"), "energy.scm_rd");
  c.energy.scm_wr = get_double(e.at("scm_wr"), "energy.scm_wr");
  c.scm_pre_full_row = get_bool(e.at("scm_pre_full_row"), "energy.scm_pre_full_row");
  for (double v : {c.energy.dram_act, c.energy.dram_pre, c.energy.dram_rd, c.energy.dram_wr, c.energy.scm_act,
                   c.energy.scm_pre_wr, c.energy.scm_rd, c.energy.scm_wr})
    if (v < 0) throw ConfigError("energy: per-bit energies must be non-negative");

  const Json& ca = j.at("cache");
  c.cache.layout = parse_layout(get_string(ca.at("layout"), "cache.layout"));
  c.cache.mshr_entries = get_uint<std::uint32_t>(ca.at("mshr_entries"), "cache.mshr_entries");
  c.cache.ctc_latency = get_uint<std::uint32_t>(ca.at("ctc_latency"), "cache.ctc_latency");

  const Json& p = j.at("policy");
  c.policy.kind = parse_policy(get_string(p.at("kind"), "policy.kind"));
  c.policy.n_levels = get_uint<std::uint32_t>(p.at("n_levels"), "policy.n_levels");
  c.policy.f_update = get_uint<std::uint32_t>(p.at("f_update"), "policy.f_update");
  c.policy.activation_counters = get_bool(p.at("activation_counters"), "policy.activation_counters");
  c.policy.probability = get_double(p.at("probability"), "policy.probability");
  c.policy.access_threshold = get_uint<std::uint32_t>(p.at("access_threshold"), "policy.access_threshold");
  c.policy.avg_weight = get_double(p.at("avg_weight"), "policy.avg_weight");

  const Json& l = j.at("l2");
  c.l2.total_ways = get_uint<std::uint32_t>(l.at("total_ways"), "l2.total_ways");
  c.l2.ctc_l2_ways = get_uint<std::uint32_t>(l.at("ctc_l2_ways"), "l2.ctc_l2_ways");
  c.l2.sets = get_uint<std::uint32_t>(l.at("sets"), "l2.sets");
  c.l2.line_bytes = get_uint<std::uint32_t>(l.at("line_bytes"), "l2.line_bytes");
  c.l2.sector_bytes = get_uint<std::uint32_t>(l.at("sector_bytes"), "l2.sector_bytes");
  c.l2.latency = get_uint<std::uint32_t>(l.at("latency"), "l2.latency");

  const Json& en = j.at("engine");
  c.engine.mode = parse_sim_mode(get_string(en.at("mode"), "engine.mode"));
  c.engine.device_target = parse_rank(get_string(en.at("device_target"), "engine.device_target"));
  c.engine.seed = get_uint<std::uint64_t>(en.at("seed"), "engine.seed");
  c.engine.warmup_requests = get_uint<std::uint64_t>(en.at("warmup_requests"), "engine.warmup_requests");
  c.engine.stream_window = get_uint<std::uint32_t>(en.at("stream_window"), "engine.stream_window");
  c.engine.issue_width = get_uint<std::uint32_t>(en.at("issue_width"), "engine.issue_width");
  c.engine.check_values = get_bool(en.at("check_values"), "engine.check_values");

  const Json& w = j.at("workload");
  c.workload.pattern = parse_pattern(get_string(w.at("pattern"), "workload.pattern"));
  c.workload.length = get_uint<std::uint64_t>(w.at("length"), "workload.length");
  c.workload.streams = get_uint<std::uint32_t>(w.at("streams"), "workload.streams");
  c.workload.write_fraction = get_double(w.at("write_fraction"), "workload.write_fraction");
  c.workload.alpha = get_double(w.at("alpha"), "workload.alpha");
  c.workload.hot_bytes = get_uint<std::uint64_t>(w.at("hot_bytes"), "workload.hot_bytes");
  c.workload.stride = get_uint<std::uint64_t>(w.at("stride"), "workload.stride");
  c.workload.span_bytes = get_uint<std::uint64_t>(w.at("span_bytes"), "workload.span_bytes");
  c.workload.base = get_uint<std::uint64_t>(w.at("base"), "workload.base");
  c.workload.trace_file = get_string(w.at("trace_file"), "workload.trace_file");

  const Json& pw = j.at("power");
  c.power.window = get_uint<Cycle>(pw.at("window"), "power.window");
  if (!pw.at("budget_w").is_null()) c.power.budget_w = get_double(pw.at("budget_w"), "power.budget_w");
  c.power.hysteresis = get_double(pw.at("hysteresis"), "power.hysteresis");

  const Json& out = j.at("output");
  c.output.json = get_string(out.at("json"), "output.json");
  c.output.csv = get_string(out.at("csv"), "output.csv");
  c.validate();
  return c;
}

/// Short names accepted on the command line in place of full dotted keys.
inline const std::map<std::string, std::string>& override_aliases() {
  static const std::map<std::string, std::string> m = {
      {"policy", "policy.kind"},       {"ctc_l2_ways", "l2.ctc_l2_ways"}, {"layout", "cache.layout"},
      {"seed", "engine.seed"},         {"mode", "engine.mode"},           {"scm_mode", "timing.scm_mode"},
      {"pattern", "workload.pattern"}, {"length", "workload.length"},     {"budget_w", "power.budget_w"}};
  return m;
}

inline std::string canonical_key(const std::string& key) {
  const auto& a = override_aliases();
  if (auto it = a.find(key); it != a.end()) return it->second;
  return key;
}

/// Sets one dotted key on a JSON document. The value text is parsed as JSON
/// when possible, otherwise taken as a string.
inline void apply_override(Json& doc, const std::string& key_in, const std::string& text) {
  const std::string key = canonical_key(key_in);
  if (key.empty()) throw ConfigError("empty override key");
  Json value;
  try {
    value = Json::parse(text);
  } catch (const Json::parse_error&) {
    value = text;
  }
  Json patch = value;
  std::vector<std::string> parts;
  std::stringstream ss(key);
  for (std::string part; std::getline(ss, part, '.');) parts.push_back(part);
  // A string-typed key given a bare number/bool keeps the literal text.
  const Json* probe = &doc;
  for (const auto& part : parts) {
    if (!probe->is_object() || !probe->contains(part)) {
      probe = nullptr;
      break;
    }
    probe = &(*probe)[part];
  }
  if (probe && probe->is_string() && !value.is_string()) patch = text;
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = Json{{*it, patch}};
  detail::overlay(doc, patch, "");
}

inline Json default_config_json() { return to_json(ExperimentConfig{}); }

/// Parses a possibly partial JSON config plus `key=value` overrides.
inline ExperimentConfig parse_config(const Json& user, const std::vector<std::pair<std::string, std::string>>& overrides = {}) {
  Json doc = default_config_json();
  detail::overlay(doc, user, "");
  for (const auto& [k, v] : overrides) apply_override(doc, k, v);
  try {
    return from_full_json(doc);
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

inline Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ConfigError("'" + path + "': " + e.what());
  }
}

inline ExperimentConfig load_config(const std::string& path, const std::vector<std::pair<std::string, std::string>>& overrides = {}) {
  return parse_config(read_json_file(path), overrides);
}

}  // namespace hmsim
