#pragma once

#include <CLI11.hpp>

#include <atomic>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "hmsim/config.hpp"
#include "hmsim/engine.hpp"
#include "hmsim/report.hpp"
#include "hmsim/workload.hpp"

namespace hmsim {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;  ///< simulation or I/O failure
inline constexpr int kExitUsage = 2;    ///< bad arguments, config or trace

inline constexpr const char* kConfigDirEnv = "HMSIM_CONFIG_DIR";

namespace cli_detail {

using Overrides = std::vector<std::pair<std::string, std::string>>;

inline std::pair<std::string, std::string> split_assignment(const std::string& s, const char* what) {
  const auto eq = s.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError(std::string(what) + " '" + s + "' is not of the form key=value");
  return {s.substr(0, eq), s.substr(eq + 1)};
}

inline Overrides parse_overrides(const std::vector<std::string>& sets) {
  Overrides out;
  for (const auto& s : sets) out.push_back(split_assignment(s, "override"));
  return out;
}

/// Finds a config by path, falling back to the config directory named by the environment.
inline std::string resolve_config_path(const std::string& name) {
  namespace fs = std::filesystem;
  if (fs::exists(name)) return name;
  if (const char* dir = std::getenv(kConfigDirEnv); dir && *dir) {
    for (const std::string& cand : {name, name + ".json"}) {
      const fs::path p = fs::path(dir) / cand;
      if (fs::exists(p)) return p.string();
    }
  }
  throw ConfigError("config file '" + name + "' not found");
}

inline ExperimentConfig load(const std::string& config, const Overrides& ov) {
  if (config.empty()) return parse_config(Json::object(), ov);
  return load_config(resolve_config_path(config), ov);
}

inline void write_file(const std::string& path, const std::string& text) {
  const std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << text;
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct RunOutput {
  Json report;
  std::string timeline;
};

inline RunOutput execute(const ExperimentConfig& cfg) {
  const StatsReport r = run_simulation(cfg);
  return {report_json(r, cfg), timeline_csv(r)};
}

struct Axis {
  std::string key;
  std::vector<std::string> values;
};

inline Axis parse_axis(const std::string& spec) {
  auto [key, list] = split_assignment(spec, "axis");
  Axis a{key, {}};
  std::stringstream ss(list);
  for (std::string v; std::getline(ss, v, ',');)
    if (!v.empty()) a.values.push_back(v);
  if (a.values.empty()) throw ConfigError("axis '" + key + "' has no values");
  return a;
}

/// Cartesian product, last axis varying fastest.
inline std::vector<std::vector<std::string>> product(const std::vector<Axis>& axes) {
  std::vector<std::vector<std::string>> pts{{}};
  for (const Axis& a : axes) {
    std::vector<std::vector<std::string>> next;
    for (const auto& p : pts)
      for (const auto& v : a.values) {
        auto q = p;
        q.push_back(v);
        next.push_back(std::move(q));
      }
    pts = std::move(next);
  }
  return pts;
}

}  // namespace cli_detail

/// Entry point shared by the executable and the tests. `args` excludes the program name.
inline int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  using namespace cli_detail;
  CLI::App app{"hmsim: heterogeneous DRAM/SCM memory stack simulator"};
  app.require_subcommand(1);

  std::string config;
  std::vector<std::string> sets;
  std::string json_out, csv_out;
  auto* run = app.add_subcommand("run", "run one experiment and write its report");
  run->add_option("config", config, "config file (JSON); searched in $" + std::string(kConfigDirEnv) + " if not found");
  run->add_option("--set,-s", sets, "override a config key: key=value (repeatable)");
  run->add_option("--json", json_out, "summary report path (default: output.json from config, else stdout)");
  run->add_option("--csv", csv_out, "power time-series path (default: output.csv from config)");

  std::vector<std::string> axis_specs;
  std::string out_dir = "sweep-out";
  unsigned jobs = std::max(1u, std::thread::hardware_concurrency());
  auto* sweep = app.add_subcommand("sweep", "run the Cartesian product of axis values");
  sweep->add_option("config", config, "base config file");
  sweep->add_option("--set,-s", sets, "override applied to every point: key=value");
  sweep->add_option("--axis,-a", axis_specs, "sweep axis: key=v1,v2,... (repeatable)");
  sweep->add_option("--out-dir,-o", out_dir, "directory for per-point reports and sweep.csv");
  sweep->add_option("--jobs,-j", jobs, "worker threads")->check(CLI::PositiveNumber);

  std::vector<std::string> report_files;
  auto* report = app.add_subcommand("report", "compare report files side by side");
  report->add_option("reports", report_files, "report JSON files")->required();

  std::string trace_path;
  std::uint64_t capacity = 0;
  auto* validate = app.add_subcommand("validate-trace", "check a trace file and summarise it");
  validate->add_option("trace", trace_path, "trace file")->required();
  validate->add_option("--capacity", capacity, "reject addresses at or beyond this many bytes (0: no limit)");

  std::string gen_out;
  auto* gen = app.add_subcommand("gen-trace", "write the configured synthetic workload as a trace file");
  gen->add_option("config", config, "config file");
  gen->add_option("--set,-s", sets, "override a config key: key=value");
  gen->add_option("--out,-o", gen_out, "trace path (default: stdout)");

  std::vector<std::string> argv_store{"hmsim"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (run->parsed()) {
      const ExperimentConfig cfg = load(config, parse_overrides(sets));
      const RunOutput res = execute(cfg);
      const std::string jpath = json_out.empty() ? cfg.output.json : json_out;
      const std::string cpath = csv_out.empty() ? cfg.output.csv : csv_out;
      if (jpath.empty())
        out << dump_report(res.report);
      else
        write_file(jpath, dump_report(res.report));
      if (!cpath.empty()) write_file(cpath, res.timeline);
      if (const auto mism = res.report["correctness"]["value_mismatches"].get<std::uint64_t>(); mism) {
        err << "error: " << mism << " read values did not match the last write\n";
        return kExitFailure;
      }
      return kExitOk;
    }

    if (sweep->parsed()) {
      if (axis_specs.empty()) throw ConfigError("sweep needs at least one --axis");
      const Overrides base = parse_overrides(sets);
      std::vector<Axis> axes;
      for (const auto& s : axis_specs) axes.push_back(parse_axis(s));
      const auto points = product(axes);
      // validate every point before spending time on any of them
      std::vector<ExperimentConfig> cfgs;
      for (const auto& p : points) {
        Overrides ov = base;
        for (std::size_t i = 0; i < axes.size(); ++i) ov.emplace_back(axes[i].key, p[i]);
        cfgs.push_back(load(config, ov));
      }
      std::vector<RunOutput> results(cfgs.size());
      std::vector<std::string> failures(cfgs.size());
      std::atomic<std::size_t> next{0};
      auto worker = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < cfgs.size();) {
          try {
            results[i] = execute(cfgs[i]);
          } catch (const std::exception& e) {
            failures[i] = e.what();
          }
        }
      };
      std::vector<std::thread> pool;
      const unsigned n = std::min<std::size_t>(jobs, cfgs.size());
      for (unsigned t = 0; t < n; ++t) pool.emplace_back(worker);
      for (auto& t : pool) t.join();
      for (std::size_t i = 0; i < failures.size(); ++i)
        if (!failures[i].empty()) {
          err << "error: sweep point " << i << ": " << failures[i] << '\n';
          return kExitFailure;
        }
      std::vector<std::string> keys;
      for (const auto& a : axes) keys.push_back(a.key);
      std::vector<std::pair<std::vector<std::string>, Json>> rows;
      for (std::size_t i = 0; i < results.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "point-%03zu", i);
        const std::filesystem::path dir(out_dir);
        write_file((dir / (std::string(name) + ".json")).string(), dump_report(results[i].report));
        write_file((dir / (std::string(name) + ".csv")).string(), results[i].timeline);
        rows.emplace_back(points[i], results[i].report);
      }
      const std::string merged = sweep_csv(keys, rows);
      write_file((std::filesystem::path(out_dir) / "sweep.csv").string(), merged);
      out << merged;
      return kExitOk;
    }

    if (report->parsed()) {
      std::vector<std::pair<std::string, Json>> reps;
      for (const auto& f : report_files) {
        try {
          reps.emplace_back(std::filesystem::path(f).filename().string(), Json::parse(read_file(f)));
        } catch (const Json::parse_error& e) {
          throw ConfigError("'" + f + "': " + e.what());
        }
      }
      out << comparison_table(reps);
      return kExitOk;
    }

    if (validate->parsed()) {
      std::ifstream in(trace_path);
      if (!in) throw ConfigError("cannot open trace '" + trace_path + "'");
      const auto recs = parse_trace(in, capacity);
      std::uint64_t reads = 0, writes = 0, bytes = 0, max_addr = 0;
      std::uint32_t streams = 0;
      for (const auto& r : recs) {
        (r.op == Op::Read ? reads : writes) += 1;
        bytes += r.size;
        max_addr = std::max<std::uint64_t>(max_addr, r.address + r.size);
        streams = std::max(streams, r.stream + 1);
      }
      out << "records " << recs.size() << "\nreads " << reads << "\nwrites " << writes << "\nbytes " << bytes
          << "\nstreams " << streams << "\nfootprint_end 0x" << std::hex << max_addr << std::dec << '\n';
      return kExitOk;
    }

    if (gen->parsed()) {
      const ExperimentConfig cfg = load(config, parse_overrides(sets));
      const auto recs = generate(cfg.pattern_spec(), cfg.engine.seed, cfg.workload.length);
      if (gen_out.empty()) {
        write_trace(out, recs);
      } else {
        std::ostringstream os;
        write_trace(os, recs);
        write_file(gen_out, os.str());
      }
      return kExitOk;
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const TraceError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ReportError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace hmsim
