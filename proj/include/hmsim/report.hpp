#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "hmsim/config.hpp"
#include "hmsim/stats.hpp"

namespace hmsim {

inline constexpr int kReportSchemaVersion = 1;

class ReportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline Json hit_json(const HitCounter& h) {
  Json j = Json::object();
  j["hits"] = h.hits;
  j["accesses"] = h.accesses;
  j["rate"] = h.rate();
  return j;
}

inline Json traffic_json(const TrafficCounts& t) {
  Json j = Json::object();
  for (std::size_t i = 0; i < t.size(); ++i) j[std::string(kTrafficNames[i])] = t[i];
  return j;
}

inline double mean_power(const std::vector<PowerSample>& tl, std::size_t from) {
  if (from >= tl.size()) return 0.0;
  double sum = 0;
  for (std::size_t i = from; i < tl.size(); ++i) sum += tl[i].power_w;
  return sum / static_cast<double>(tl.size() - from);
}

}  // namespace detail

/// Summary document for one run. Key order is fixed so equal runs dump to equal bytes.
inline Json report_json(const StatsReport& r, const ExperimentConfig& cfg) {
  Json j = Json::object();
  j["schema_version"] = kReportSchemaVersion;
  j["config"] = to_json(cfg);

  Json& s = j["summary"];
  s["runtime_cycles"] = r.runtime_cycles;
  s["end_cycle"] = r.end_cycle;
  s["requests_injected"] = r.requests_injected;
  s["requests_completed"] = r.requests_completed;
  s["reads"] = r.reads;
  s["writes"] = r.writes;
  s["mean_latency_cycles"] = r.mean_latency;
  s["max_latency_cycles"] = r.max_latency;
  s["utilization"] = r.utilization;
  s["bandwidth_gbps"] = r.bandwidth_gbps;
  s["total_columns"] = r.total_columns;
  s["refresh_events"] = r.refresh_events;

  j["traffic"] = detail::traffic_json(r.traffic);

  Json& h = j["hit_rates"];
  h["dram_cache"] = detail::hit_json(r.dram_cache);
  h["dram_cache_read"] = detail::hit_json(r.dram_cache_read);
  h["dram_cache_write"] = detail::hit_json(r.dram_cache_write);
  h["l2"] = detail::hit_json(r.l2);
  h["ctc"] = detail::hit_json(r.ctc);

  Json& dc = j["dram_cache"];
  dc["transactions"] = r.transactions;
  dc["uncacheable_accesses"] = r.uncacheable_accesses;
  dc["mshr_stalls"] = r.mshr_stalls;

  Json& b = j["bypass"];
  b["first_level"] = r.bypass.first_level;
  b["fill_invalid"] = r.bypass.fill_invalid;
  b["fill_replace"] = r.bypass.fill_replace;
  b["no_replace"] = r.bypass.no_replace;
  b["no_replace_decremented"] = r.bypass.no_replace_decremented;

  Json chans = Json::array();
  for (std::size_t i = 0; i < r.channels.size(); ++i) {
    const ChannelReport& c = r.channels[i];
    Json cj = Json::object();
    cj["channel"] = i;
    cj["utilization"] = c.utilization;
    cj["bus_columns"] = c.bus_columns;
    cj["bus_busy_cycles"] = c.bus_busy_cycles;
    cj["refreshes"] = c.refreshes;
    cj["dram_activations"] = c.dram_activations;
    cj["scm_activations"] = c.scm_activations;
    cj["energy_pj"] = c.energy_pj;
    cj["traffic"] = detail::traffic_json(c.traffic);
    chans.push_back(std::move(cj));
  }
  j["channels"] = std::move(chans);

  Json& e = j["energy"];
  e["total_pj"] = r.energy_total_pj;
  e["dram_pj"] = r.energy_dram_pj;
  e["scm_pj"] = r.energy_scm_pj;
  Json& eb = e["breakdown_pj"];
  for (std::size_t i = 0; i < r.energy.size(); ++i) eb[std::string(kEnergyCategoryNames[i])] = r.energy[i];

  Json& p = j["power"];
  p["window_cycles"] = cfg.power.window;
  p["budget_w"] = cfg.power.budget_w ? Json(*cfg.power.budget_w) : Json(nullptr);
  p["average_w"] = power_watts(r.energy_total_pj, r.runtime_cycles);
  p["windows"] = r.power_timeline.size();
  p["first_measured_window"] = r.first_measured_window;
  p["mean_window_w"] = detail::mean_power(r.power_timeline, r.first_measured_window);
  double peak = 0;
  std::uint64_t throttled = 0;
  for (std::size_t i = r.first_measured_window; i < r.power_timeline.size(); ++i) {
    peak = std::max(peak, r.power_timeline[i].power_w);
    throttled += (r.power_timeline[i].throttle.act || r.power_timeline[i].throttle.wr) ? 1 : 0;
  }
  p["peak_window_w"] = peak;
  p["throttled_windows"] = throttled;
  p["throttle_engagements"] = r.throttle_engagements;

  Json& v = j["correctness"];
  v["value_checks"] = r.value_checks;
  v["value_mismatches"] = r.value_mismatches;
  v["ecc_intact"] = r.ecc_intact;
  return j;
}

inline std::string dump_report(const Json& j) { return j.dump(2) + "\n"; }

/// Power time series, one row per window, all channels summed.
inline constexpr std::string_view kTimelineHeader =
    "window,window_start,window_end,power_w,dram_w,scm_w,throttle_act,throttle_wr,bus_columns,warmup";

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

inline std::string timeline_csv(const StatsReport& r) {
  std::ostringstream os;
  os << kTimelineHeader << '\n';
  for (std::size_t i = 0; i < r.power_timeline.size(); ++i) {
    const PowerSample& s = r.power_timeline[i];
    os << i << ',' << s.window_start << ',' << s.window_end << ',' << format_double(s.power_w) << ','
       << format_double(s.dram_w) << ',' << format_double(s.scm_w) << ',' << (s.throttle.act ? 1 : 0) << ','
       << (s.throttle.wr ? 1 : 0) << ',' << s.bus_columns << ',' << (i < r.first_measured_window ? 1 : 0) << '\n';
  }
  return os.str();
}

// ---- headline metrics shared by the sweep CSV and the comparison table --------

struct Metric {
  std::string_view label;
  std::string_view pointer;  ///< JSON pointer into a report
};

inline const std::vector<Metric>& headline_metrics() {
  static const std::vector<Metric> m = {
      {"runtime_cycles", "/summary/runtime_cycles"},
      {"requests_completed", "/summary/requests_completed"},
      {"mean_latency_cycles", "/summary/mean_latency_cycles"},
      {"utilization", "/summary/utilization"},
      {"bandwidth_gbps", "/summary/bandwidth_gbps"},
      {"dram_cache_hit_rate", "/hit_rates/dram_cache/rate"},
      {"dram_cache_read_hit_rate", "/hit_rates/dram_cache_read/rate"},
      {"dram_cache_write_hit_rate", "/hit_rates/dram_cache_write/rate"},
      {"l2_hit_rate", "/hit_rates/l2/rate"},
      {"ctc_hit_rate", "/hit_rates/ctc/rate"},
      {"demand_dram_rd", "/traffic/demand_dram_rd"},
      {"demand_dram_wr", "/traffic/demand_dram_wr"},
      {"demand_scm_rd", "/traffic/demand_scm_rd"},
      {"demand_scm_wr", "/traffic/demand_scm_wr"},
      {"probe", "/traffic/probe"},
      {"metadata_writeback", "/traffic/metadata_writeback"},
      {"fill_scm_rd", "/traffic/fill_scm_rd"},
      {"fill_dram_wr", "/traffic/fill_dram_wr"},
      {"evict_dram_rd", "/traffic/evict_dram_rd"},
      {"evict_scm_wr", "/traffic/evict_scm_wr"},
      {"bypass_first_level", "/bypass/first_level"},
      {"bypass_fill_invalid", "/bypass/fill_invalid"},
      {"bypass_fill_replace", "/bypass/fill_replace"},
      {"bypass_no_replace", "/bypass/no_replace"},
      {"energy_total_pj", "/energy/total_pj"},
      {"energy_dram_pj", "/energy/dram_pj"},
      {"energy_scm_pj", "/energy/scm_pj"},
      {"average_power_w", "/power/average_w"},
      {"throttle_engagements", "/power/throttle_engagements"},
  };
  return m;
}

inline double metric_value(const Json& report, const Metric& m) {
  const Json::json_pointer ptr{std::string(m.pointer)};
  if (!report.contains(ptr)) throw ReportError("report is missing '" + std::string(m.pointer) + "'");
  const Json& v = report.at(ptr);
  if (!v.is_number()) throw ReportError("report field '" + std::string(m.pointer) + "' is not numeric");
  return v.get<double>();
}

inline std::string format_metric(double v) {
  if (v == std::floor(v) && std::fabs(v) < 1e15) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.0f", v);
    return buf;
  }
  return format_double(v);
}

inline int schema_of(const Json& report) {
  if (!report.is_object() || !report.contains("schema_version") || !report["schema_version"].is_number_integer())
    throw ReportError("not an hmsim report: schema_version missing");
  return report["schema_version"].get<int>();
}

/// Column-aligned table of headline metrics. With two or more reports every
/// column after the first also shows the change against the first.
inline std::string comparison_table(const std::vector<std::pair<std::string, Json>>& reports) {
  if (reports.empty()) throw ReportError("no reports to compare");
  const int base_version = schema_of(reports.front().second);
  for (const auto& [name, rep] : reports) {
    const int v = schema_of(rep);
    if (v != base_version)
      throw ReportError("schema version mismatch: " + reports.front().first + " has " + std::to_string(base_version) +
                        ", " + name + " has " + std::to_string(v));
  }
  if (base_version != kReportSchemaVersion)
    throw ReportError("unsupported schema version " + std::to_string(base_version) + " (expected " +
                      std::to_string(kReportSchemaVersion) + ")");

  std::vector<std::vector<std::string>> cells;
  std::vector<std::string> header{"metric"};
  for (const auto& r : reports) header.push_back(r.first);
  cells.push_back(header);
  for (const Metric& m : headline_metrics()) {
    std::vector<std::string> row{std::string(m.label)};
    const double base = metric_value(reports.front().second, m);
    for (std::size_t i = 0; i < reports.size(); ++i) {
      const double v = metric_value(reports[i].second, m);
      std::string cell = format_metric(v);
      if (i > 0) {
        const double d = v - base;
        cell += " (" + std::string(d >= 0 ? "+" : "") + format_metric(d);
        if (base != 0) cell += ", " + std::string(d >= 0 ? "+" : "") + format_double(100.0 * d / std::fabs(base)) + "%";
        cell += ")";
      }
      row.push_back(std::move(cell));
    }
    cells.push_back(std::move(row));
  }

  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& row : cells)
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  std::ostringstream os;
  for (std::size_t r = 0; r < cells.size(); ++r) {
    for (std::size_t c = 0; c < cells[r].size(); ++c) {
      if (c == 0)
        os << std::left << std::setw(static_cast<int>(width[c])) << cells[r][c];
      else
        os << "  " << std::right << std::setw(static_cast<int>(width[c])) << cells[r][c];
    }
    os << '\n';
    if (r == 0) {
      std::size_t total = width[0];
      for (std::size_t c = 1; c < width.size(); ++c) total += 2 + width[c];
      os << std::string(total, '-') << '\n';
    }
  }
  return os.str();
}

// ---- sweep CSV -------------------------------------------------------------------

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

/// One row per sweep point: point index, one column per axis, then the headline metrics.
inline std::string sweep_csv(const std::vector<std::string>& axes,
                             const std::vector<std::pair<std::vector<std::string>, Json>>& points) {
  std::ostringstream os;
  os << "point";
  for (const auto& a : axes) os << ',' << csv_escape(a);
  for (const Metric& m : headline_metrics()) os << ',' << m.label;
  os << '\n';
  for (std::size_t i = 0; i < points.size(); ++i) {
    os << i;
    for (const auto& v : points[i].first) os << ',' << csv_escape(v);
    for (const Metric& m : headline_metrics()) os << ',' << format_metric(metric_value(points[i].second, m));
    os << '\n';
  }
  return os.str();
}

}  // namespace hmsim
