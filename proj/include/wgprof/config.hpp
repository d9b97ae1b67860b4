#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "wgprof/instrument.hpp"
#include "wgprof/lower.hpp"
#include "wgprof/vgpu.hpp"

// Pipeline configuration file: sections in brackets, `key = value` lines,
// `#` comments. Keys may repeat ([instrument] region entries). Example:
//
//   [kernel]
//   file = fixtures/fa3_vanilla.kir
//
//   [instrument]
//   auto_async = true
//   entry = before-lowering
//   # region = <region label>:<anchor label>   (repeatable)
//
//   [lowering]
//   metric = clock
//   granularity = warp_group
//   buffer_type = shared
//   buffer_strategy = circular
//   buffer_slots = 384          # total; "auto" sizes from the program
//   signature_bits = false
//
//   [machine]
//   record_cost = 33
//   loop_entry_cost = 5
//   cycles_per_us = 1000
//   unit.tc = 400               # default latency for instructions without one
//
//   [model]
//   pipe_stages = 2
//   warp_groups = 1
//   loop_iters = 8
//   swp_stage = <load region>:<comp region>   (repeatable)
//
//   [output]
//   raw_trace = out/trace.kpft
//   chrome_trace = out/trace.json
//   replay_report = out/replay.json
//   model_report = out/model.json

namespace wgprof {

struct ConfigFile {
  // section -> ordered (key, value) pairs
  std::map<std::string, std::vector<std::pair<std::string, std::string>>>
      sections;

  const std::string* find(const std::string& section,
                          const std::string& key) const {
    auto it = sections.find(section);
    if (it == sections.end())
      return nullptr;
    for (const auto& [k, v] : it->second)
      if (k == key)
        return &v;
    return nullptr;
  }

  std::string get(const std::string& section, const std::string& key,
                  const std::string& fallback) const {
    const std::string* v = find(section, key);
    return v ? *v : fallback;
  }

  std::vector<std::string> get_all(const std::string& section,
                                   const std::string& key) const {
    std::vector<std::string> out;
    auto it = sections.find(section);
    if (it == sections.end())
      return out;
    for (const auto& [k, v] : it->second)
      if (k == key)
        out.push_back(v);
    return out;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos)
    return {};
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::string unquote(std::string v) {
  if (v.size() >= 2 && v.front() == '"' && v.back() == '"')
    return v.substr(1, v.size() - 2);
  return v;
}

inline bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "yes")
    return true;
  if (v == "false" || v == "0" || v == "no")
    return false;
  throw Error(ErrorKind::Config, "key '" + key + "': expected a boolean, got '" +
                                     v + "'");
}

inline std::uint64_t parse_u64(const std::string& v, const std::string& key) {
  try {
    std::size_t used = 0;
    std::uint64_t n = std::stoull(v, &used);
    if (used != v.size())
      throw std::invalid_argument(v);
    return n;
  } catch (const std::exception&) {
    throw Error(ErrorKind::Config,
                "key '" + key + "': expected an integer, got '" + v + "'");
  }
}

} // namespace detail

inline ConfigFile parse_config(std::istream& is) {
  ConfigFile cfg;
  std::string section;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos)
      line.resize(hash);
    line = detail::trim(line);
    if (line.empty())
      continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw Error(ErrorKind::Config, "line " + std::to_string(lineno) +
                                           ": unterminated section header");
      section = detail::trim(line.substr(1, line.size() - 2));
      cfg.sections[section];
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw Error(ErrorKind::Config,
                  "line " + std::to_string(lineno) + ": expected key = value");
    std::string key = detail::trim(line.substr(0, eq));
    std::string value = detail::unquote(detail::trim(line.substr(eq + 1)));
    if (section.empty())
      throw Error(ErrorKind::Config, "line " + std::to_string(lineno) +
                                         ": key outside any section");
    cfg.sections[section].emplace_back(std::move(key), std::move(value));
  }
  return cfg;
}

inline ConfigFile load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is)
    throw Error(ErrorKind::Config, "cannot open config file '" + path + "'");
  return parse_config(is);
}

// ---------------------------------------------------------------------------
// Typed views over the config.
// ---------------------------------------------------------------------------

struct ModelParams {
  std::uint32_t pipe_stages = 1;
  std::uint32_t warp_groups = 1;
  std::uint64_t loop_iters = 1;
  std::vector<std::pair<std::string, std::string>> swp_stages; // load:comp
};

struct PipelineConfig {
  std::string kernel_file;
  InstrumentationRequest request;
  LoweringConfig lowering;
  MachineConfig machine;
  std::optional<ModelParams> model;
  std::string raw_trace_path;
  std::string chrome_trace_path;
  std::string replay_report_path;
  std::string model_report_path;
};

namespace detail {

inline std::pair<std::string, std::string> split_colon(const std::string& v,
                                                       const char* key) {
  auto colon = v.find(':');
  if (colon == std::string::npos)
    return {v, v};
  std::string a = trim(v.substr(0, colon));
  std::string b = trim(v.substr(colon + 1));
  if (a.empty() || b.empty())
    throw Error(ErrorKind::Config,
                std::string("key '") + key + "': expected <a>:<b>, got '" + v +
                    "'");
  return {a, b};
}

} // namespace detail

inline PipelineConfig make_pipeline_config(const ConfigFile& cfg) {
  PipelineConfig pc;
  pc.kernel_file = cfg.get("kernel", "file", "");

  // [instrument]
  pc.request.auto_async =
      detail::parse_bool(cfg.get("instrument", "auto_async", "false"),
                         "auto_async");
  const std::string entry =
      cfg.get("instrument", "entry", "before-lowering");
  if (entry == "before-lowering")
    pc.request.entry = InstrumentationEntry::BeforeLowering;
  else if (entry == "after-lowering")
    pc.request.entry = InstrumentationEntry::AfterLowering;
  else
    throw Error(ErrorKind::Config,
                "entry must be before-lowering or after-lowering");
  if (const std::string* f = cfg.find("instrument", "kernel_filter"))
    pc.request.kernel_filter = *f;
  for (const auto& v : cfg.get_all("instrument", "region")) {
    auto [region, anchor] = detail::split_colon(v, "region");
    pc.request.target_regions.push_back({region, anchor});
  }

  // [lowering]
  const std::string metric = cfg.get("lowering", "metric", "clock");
  if (metric != "clock")
    throw Error(ErrorKind::Config, "unsupported metric '" + metric + "'");
  pc.lowering.metric_type = MetricType::Clock;
  const std::string gran = cfg.get("lowering", "granularity", "warp_group");
  if (gran == "warp_group")
    pc.lowering.granularity = Granularity::WarpGroup;
  else if (gran == "warp")
    pc.lowering.granularity = Granularity::Warp;
  else if (gran == "thread")
    pc.lowering.granularity = Granularity::Thread;
  else
    throw Error(ErrorKind::Config, "unsupported granularity '" + gran + "'");
  const std::string btype = cfg.get("lowering", "buffer_type", "shared");
  if (btype == "shared")
    pc.lowering.buffer_type = BufferType::Shared;
  else if (btype == "stack")
    pc.lowering.buffer_type = BufferType::Stack;
  else if (btype == "global")
    pc.lowering.buffer_type = BufferType::Global;
  else
    throw Error(ErrorKind::Config, "unsupported buffer_type '" + btype + "'");
  const std::string strategy =
      cfg.get("lowering", "buffer_strategy", "circular");
  if (strategy == "circular")
    pc.lowering.buffer_strategy = BufferStrategy::Circular;
  else if (strategy == "flush")
    pc.lowering.buffer_strategy = BufferStrategy::Flush;
  else
    throw Error(ErrorKind::Config,
                "buffer_strategy must be circular or flush");
  const std::string slots = cfg.get("lowering", "buffer_slots", "auto");
  pc.lowering.buffer_slots_total =
      slots == "auto" ? 0 : detail::parse_u64(slots, "buffer_slots");
  pc.lowering.signature_bits_enabled = detail::parse_bool(
      cfg.get("lowering", "signature_bits", "false"), "signature_bits");
  pc.lowering.iteration_signature = detail::parse_bool(
      cfg.get("lowering", "iteration_signature", "false"),
      "iteration_signature");

  // [machine]
  pc.machine.record_cost =
      detail::parse_u64(cfg.get("machine", "record_cost", "33"), "record_cost");
  pc.machine.loop_entry_cost = detail::parse_u64(
      cfg.get("machine", "loop_entry_cost", "5"), "loop_entry_cost");
  pc.machine.cycles_per_us = static_cast<double>(detail::parse_u64(
      cfg.get("machine", "cycles_per_us", "1000"), "cycles_per_us"));
  if (auto it = cfg.sections.find("machine"); it != cfg.sections.end())
    for (const auto& [k, v] : it->second)
      if (k.rfind("unit.", 0) == 0)
        pc.machine.unit_latencies[k.substr(5)] = detail::parse_u64(v, k);

  // [model]
  if (auto it = cfg.sections.find("model"); it != cfg.sections.end()) {
    ModelParams mp;
    mp.pipe_stages = static_cast<std::uint32_t>(
        detail::parse_u64(cfg.get("model", "pipe_stages", "1"), "pipe_stages"));
    mp.warp_groups = static_cast<std::uint32_t>(
        detail::parse_u64(cfg.get("model", "warp_groups", "1"), "warp_groups"));
    mp.loop_iters = detail::parse_u64(cfg.get("model", "loop_iters", "1"),
                                      "loop_iters");
    for (const auto& v : cfg.get_all("model", "swp_stage"))
      mp.swp_stages.push_back(detail::split_colon(v, "swp_stage"));
    pc.model = std::move(mp);
  }

  // [output]
  pc.raw_trace_path = cfg.get("output", "raw_trace", "out/trace.kpft");
  pc.chrome_trace_path = cfg.get("output", "chrome_trace", "out/trace.json");
  pc.replay_report_path =
      cfg.get("output", "replay_report", "out/replay.json");
  pc.model_report_path = cfg.get("output", "model_report", "out/model.json");
  return pc;
}

} // namespace wgprof
