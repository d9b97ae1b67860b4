#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "wgprof/config.hpp"
#include "wgprof/instrument.hpp"
#include "wgprof/lower.hpp"
#include "wgprof/perfmodel.hpp"
#include "wgprof/trace.hpp"
#include "wgprof/vgpu.hpp"

// End-to-end pipeline: parse -> instrument -> lower -> simulate -> decode ->
// replay -> export/model. One invocation produces four artifacts: the raw
// binary trace, the Chrome Trace JSON, the replay report, and the model
// report.

namespace wgprof {

inline std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is)
    throw Error(ErrorKind::Io, "cannot open '" + path + "'");
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

inline void write_file(const std::string& path, const std::string& data) {
  std::filesystem::path p(path);
  if (p.has_parent_path())
    std::filesystem::create_directories(p.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os)
    throw Error(ErrorKind::Io, "cannot write '" + path + "'");
  os.write(data.data(), static_cast<std::streamsize>(data.size()));
}

inline void write_file(const std::string& path,
                       const std::vector<std::uint8_t>& data) {
  write_file(path,
             std::string(reinterpret_cast<const char*>(data.data()),
                         data.size()));
}

// ---------------------------------------------------------------------------
// Full-image replay.
// ---------------------------------------------------------------------------

struct TraceReplay {
  std::vector<TimelineEvent> events;
  std::uint32_t dropped_heads = 0;
  std::uint32_t truncated_tails = 0;
  std::uint32_t flagged_preconditions = 0;
  std::uint32_t malformed_groups = 0;
};

inline TraceReplay replay_image(const GlobalTraceImage& image,
                                const BufferPlan& plan,
                                std::uint64_t record_cost) {
  TraceReplay out;
  for (const auto& stream : decode_image(image, plan)) {
    PairResult pairs = pair_records(stream.records, plan.region_labels);
    out.dropped_heads += pairs.dropped_heads;
    out.truncated_tails += pairs.truncated_tails;
    ReplayResult rr =
        replay(pairs, stream.block_index, stream.warp_group, record_cost);
    out.flagged_preconditions += rr.flagged_preconditions;
    out.malformed_groups += rr.malformed_groups;
    out.events.insert(out.events.end(), rr.events.begin(), rr.events.end());
  }
  return out;
}

inline std::vector<TimelineEvent> oracle_events(const OracleTimeline& oracle) {
  std::vector<TimelineEvent> out;
  out.reserve(oracle.size());
  for (const auto& iv : oracle) {
    TimelineEvent ev;
    ev.region = iv.region;
    ev.block_index = 0;
    ev.warp_group = iv.warp_group;
    ev.iteration = iv.iteration;
    ev.start = iv.start;
    ev.end = iv.end;
    ev.kind = iv.kind;
    ev.corrected = false;
    out.push_back(std::move(ev));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reports.
// ---------------------------------------------------------------------------

struct RegionStats {
  std::uint32_t warp_group = 0;
  EventKind kind = EventKind::Exec;
  std::uint32_t count = 0;
  std::uint64_t min = 0;
  std::uint64_t max = 0;
  double mean = 0.0;
};

inline std::map<std::string, RegionStats>
region_stats(const std::vector<TimelineEvent>& events) {
  std::map<std::string, RegionStats> out;
  for (const auto& ev : events) {
    RegionStats& rs = out[ev.region];
    const std::uint64_t d = ev.duration();
    if (rs.count == 0) {
      rs.warp_group = ev.warp_group;
      rs.kind = ev.kind;
      rs.min = d;
      rs.max = d;
    } else {
      rs.min = std::min(rs.min, d);
      rs.max = std::max(rs.max, d);
    }
    rs.mean = (rs.mean * rs.count + static_cast<double>(d)) / (rs.count + 1);
    ++rs.count;
  }
  return out;
}

struct RunResult {
  KernelProgram kernel;
  DeviceProgram device;
  SimResult sim;
  TraceReplay replay;
  CriticalPathAnalysis critical_path;
  nlohmann::ordered_json replay_report;
  nlohmann::ordered_json model_report;
};

inline nlohmann::ordered_json
make_replay_report(const std::string& kernel, const SimResult& sim,
                   const TraceReplay& tr, const CriticalPathAnalysis& cp,
                   std::uint64_t record_cost) {
  nlohmann::ordered_json report;
  report["kernel"] = kernel;
  report["total_cycles"] = sim.total_cycles;
  report["vanilla_cycles"] = sim.vanilla_cycles;
  report["records_written"] = sim.records_written;
  report["record_cost"] = record_cost;
  report["regions"] = nlohmann::ordered_json::array();
  for (const auto& [label, rs] : region_stats(tr.events)) {
    nlohmann::ordered_json r;
    r["region"] = label;
    r["warp_group"] = rs.warp_group;
    r["kind"] = rs.kind == EventKind::Wait ? "wait" : "exec";
    r["count"] = rs.count;
    r["mean_duration"] = rs.mean;
    r["min_duration"] = rs.min;
    r["max_duration"] = rs.max;
    report["regions"].push_back(std::move(r));
  }
  report["critical_path"] = cp.cycle.empty()
                                ? ws_latency(cp.graph).critical_path
                                : cp.cycle;
  report["iteration_period"] = cp.period;
  report["warnings"] = {{"dropped_heads", tr.dropped_heads},
                        {"truncated_tails", tr.truncated_tails},
                        {"flagged_preconditions", tr.flagged_preconditions},
                        {"malformed_groups", tr.malformed_groups}};
  return report;
}

namespace detail {

inline nlohmann::ordered_json
model_report_json(const RunResult& rr, const MachineConfig& mc,
                  const std::optional<ModelParams>& params) {
  nlohmann::ordered_json report;
  report["kernel"] = rr.kernel.name;

  // WS model over the measured stage graph.
  WsResult ws = ws_latency(rr.critical_path.graph);
  report["ws_model"] = {{"critical_path", ws.critical_path},
                        {"latency", ws.latency}};
  report["iteration_period"] = rr.critical_path.period;

  // Eq-style overhead check: measured total vs vanilla plus per-record cost.
  OverheadInput oi;
  oi.t_vanilla = rr.sim.vanilla_cycles;
  oi.n_record = rr.sim.records_written;
  oi.cycle_record = mc.record_cost;
  const std::uint64_t theoretical = overhead_model(oi);
  report["overhead_model"] = {
      {"vanilla_cycles", oi.t_vanilla},
      {"records", oi.n_record},
      {"record_cost", oi.cycle_record},
      {"theoretical_cycles", theoretical},
      {"actual_cycles", rr.sim.total_cycles},
      {"ratio", theoretical == 0
                    ? 0.0
                    : static_cast<double>(rr.sim.total_cycles) / theoretical}};

  // SWP model from measured stage durations when configured.
  if (params && !params->swp_stages.empty()) {
    auto stats = region_stats(rr.replay.events);
    auto stage_duration = [&stats](const std::string& label) -> std::uint64_t {
      std::uint64_t total = 0;
      if (auto it = stats.find(label); it != stats.end())
        total += static_cast<std::uint64_t>(std::llround(it->second.mean));
      if (auto it = stats.find(label + kWaitSuffix); it != stats.end())
        total += static_cast<std::uint64_t>(std::llround(it->second.mean));
      return total;
    };
    SwpInput si;
    si.n_warp_groups = params->warp_groups;
    si.n_pipe_stages = params->pipe_stages;
    si.n_loop = params->loop_iters;
    for (const auto& [load, comp] : params->swp_stages) {
      SwpStage s;
      s.name = load + "/" + comp;
      s.t_load = stage_duration(load);
      s.t_comp = stage_duration(comp);
      si.stages.push_back(std::move(s));
    }
    SwpResult sr = swp_latency(si);
    nlohmann::ordered_json stages = nlohmann::ordered_json::array();
    for (const auto& s : si.stages)
      stages.push_back(
          {{"stage", s.name}, {"t_load", s.t_load}, {"t_comp", s.t_comp}});
    report["swp_model"] = {{"stages", stages},
                           {"delta", sr.delta},
                           {"latency", sr.latency}};
  }
  return report;
}

} // namespace detail

// ---------------------------------------------------------------------------
// cmd_run: the full pipeline.
// ---------------------------------------------------------------------------

inline RunResult run_pipeline(const PipelineConfig& pc) {
  if (pc.kernel_file.empty())
    throw Error(ErrorKind::Config, "no kernel file configured");
  if (!std::filesystem::exists(pc.kernel_file))
    throw Error(ErrorKind::Config,
                "kernel file '" + pc.kernel_file + "' does not exist");
  RunResult rr;
  rr.kernel = parse_program(read_file(pc.kernel_file));

  PatchHandle handle = patch(rr.kernel, pc.request);
  rr.device = lower(handle.program, pc.lowering);
  rr.sim = simulate(rr.device, pc.machine);
  rr.replay =
      replay_image(rr.sim.image, rr.device.plan, pc.machine.record_cost);
  rr.critical_path = analyze_critical_path(rr.replay.events, rr.device);

  rr.replay_report = make_replay_report(rr.kernel.name, rr.sim, rr.replay,
                                        rr.critical_path,
                                        pc.machine.record_cost);
  rr.model_report = detail::model_report_json(rr, pc.machine, pc.model);
  return rr;
}

inline void write_artifacts(const RunResult& rr, const PipelineConfig& pc) {
  write_file(pc.raw_trace_path, serialize_image(rr.sim.image));
  write_file(pc.chrome_trace_path,
             export_chrome_trace(rr.replay.events, pc.machine.cycles_per_us));
  write_file(pc.replay_report_path, rr.replay_report.dump(2) + "\n");
  write_file(pc.model_report_path, rr.model_report.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// cmd_compare: per-region deltas between two replay reports.
// ---------------------------------------------------------------------------

inline std::string compare_reports(const nlohmann::ordered_json& a,
                                   const nlohmann::ordered_json& b) {
  std::map<std::string, double> mean_a, mean_b;
  for (const auto& r : a.at("regions"))
    mean_a[r.at("region").get<std::string>()] =
        r.at("mean_duration").get<double>();
  for (const auto& r : b.at("regions"))
    mean_b[r.at("region").get<std::string>()] =
        r.at("mean_duration").get<double>();

  std::vector<std::string> common;
  for (const auto& [label, _] : mean_a)
    if (mean_b.count(label))
      common.push_back(label);
  if (common.empty())
    throw Error(ErrorKind::Config,
                "disjoint region sets; nothing to compare");

  std::ostringstream os;
  os << "kernel A: " << a.at("kernel").get<std::string>()
     << "  kernel B: " << b.at("kernel").get<std::string>() << "\n\n";
  os << "region                          mean A      mean B       delta\n";
  for (const auto& label : common) {
    std::ostringstream row;
    row << label;
    std::string name = row.str();
    if (name.size() < 30)
      name.resize(30, ' ');
    os << name << "  " << std::setw(9) << mean_a[label] << "   "
       << std::setw(9) << mean_b[label] << "   " << std::setw(9)
       << (mean_b[label] - mean_a[label]) << "\n";
  }

  auto path_of = [](const nlohmann::ordered_json& j) {
    std::vector<std::string> path;
    for (const auto& s : j.at("critical_path"))
      path.push_back(s.get<std::string>());
    return path;
  };
  const auto pa = path_of(a);
  const auto pb = path_of(b);
  os << "\ncritical path A:";
  for (const auto& s : pa)
    os << " " << s;
  os << "\ncritical path B:";
  for (const auto& s : pb)
    os << " " << s;
  os << "\n";
  if (pa == pb)
    os << "critical path unchanged\n";
  else {
    os << "critical path changed;";
    for (const auto& s : pa)
      if (std::find(pb.begin(), pb.end(), s) == pb.end())
        os << " -" << s;
    for (const auto& s : pb)
      if (std::find(pa.begin(), pa.end(), s) == pa.end())
        os << " +" << s;
    os << "\n";
  }
  const double period_a = a.at("iteration_period").get<double>();
  const double period_b = b.at("iteration_period").get<double>();
  os << "iteration period: " << period_a << " -> " << period_b << "\n";
  return os.str();
}

} // namespace wgprof
