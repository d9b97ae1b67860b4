#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "wgprof/lower.hpp"
#include "wgprof/trace.hpp"

// Analytic overlap models and trace-driven critical path extraction.

namespace wgprof {

// ---------------------------------------------------------------------------
// Software pipelining model.
//
//   delta = N_WG * N_pipe * sum_i t_comp_i - max_i(t_load_i + t_comp_i)
//   delta >= 0: latency = sum_i t_comp_i * N_loop          (compute bound)
//   delta <  0: latency = ceil(max_i(t_load_i + t_comp_i) * N_loop / N_pipe)
// ---------------------------------------------------------------------------

struct SwpStage {
  std::string name;
  std::uint64_t t_load = 0;
  std::uint64_t t_comp = 0;

  bool operator==(const SwpStage&) const = default;
};

struct SwpInput {
  std::uint32_t n_warp_groups = 1;
  std::uint32_t n_pipe_stages = 1;
  std::uint64_t n_loop = 1;
  std::vector<SwpStage> stages;
};

struct SwpResult {
  std::int64_t delta = 0;
  std::uint64_t latency = 0;
};

inline SwpResult swp_latency(const SwpInput& in) {
  if (in.stages.empty() || in.n_warp_groups == 0 || in.n_pipe_stages == 0 ||
      in.n_loop == 0)
    throw Error(ErrorKind::Validate, "swp_latency: inputs must be positive");
  std::uint64_t sum_comp = 0;
  std::uint64_t max_stage = 0;
  for (const auto& s : in.stages) {
    sum_comp += s.t_comp;
    max_stage = std::max(max_stage, s.t_load + s.t_comp);
  }
  SwpResult out;
  out.delta = static_cast<std::int64_t>(in.n_warp_groups) * in.n_pipe_stages *
                  static_cast<std::int64_t>(sum_comp) -
              static_cast<std::int64_t>(max_stage);
  if (out.delta >= 0) {
    out.latency = sum_comp * in.n_loop;
  } else {
    const std::uint64_t numer = max_stage * in.n_loop;
    out.latency = (numer + in.n_pipe_stages - 1) / in.n_pipe_stages;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Warp specialization model: longest path over the stage graph.
// ---------------------------------------------------------------------------

enum class StageKind { Load, Comp };

struct WsNode {
  std::string label;
  std::uint64_t duration = 0;
  StageKind kind = StageKind::Comp;

  bool operator==(const WsNode&) const = default;
};

struct WsInput {
  std::vector<WsNode> nodes;
  std::vector<std::pair<std::size_t, std::size_t>> edges; // node indices

  bool operator==(const WsInput&) const = default;
};

struct WsResult {
  std::vector<std::string> critical_path;
  std::uint64_t latency = 0;
};

inline WsResult ws_latency(const WsInput& in) {
  const std::size_t n = in.nodes.size();
  std::vector<std::vector<std::size_t>> succ(n);
  std::vector<std::size_t> indeg(n, 0);
  for (const auto& [a, b] : in.edges) {
    if (a >= n || b >= n)
      throw Error(ErrorKind::Validate, "ws_latency: edge index out of range");
    succ[a].push_back(b);
    ++indeg[b];
  }

  // Kahn topological order; leftovers mean a cycle.
  std::vector<std::size_t> order;
  std::vector<std::size_t> ready;
  for (std::size_t i = 0; i < n; ++i)
    if (indeg[i] == 0)
      ready.push_back(i);
  std::vector<std::size_t> deg = indeg;
  while (!ready.empty()) {
    std::size_t v = ready.back();
    ready.pop_back();
    order.push_back(v);
    for (std::size_t s : succ[v])
      if (--deg[s] == 0)
        ready.push_back(s);
  }
  if (order.size() != n)
    throw Error(ErrorKind::Validate, "ws_latency: stage graph has a cycle");

  // Longest path from each node; ties prefer the lexicographically smaller
  // successor label so the reported path is deterministic.
  std::vector<std::uint64_t> best(n, 0);
  std::vector<std::optional<std::size_t>> next(n);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    std::size_t v = *it;
    best[v] = in.nodes[v].duration;
    for (std::size_t s : succ[v]) {
      const std::uint64_t cand = in.nodes[v].duration + best[s];
      if (cand > best[v] ||
          (cand == best[v] && next[v] &&
           in.nodes[s].label < in.nodes[*next[v]].label)) {
        best[v] = cand;
        next[v] = s;
      }
    }
  }

  WsResult out;
  if (n == 0)
    return out;
  std::size_t start = 0;
  for (std::size_t i = 1; i < n; ++i) {
    if (best[i] > best[start] ||
        (best[i] == best[start] && in.nodes[i].label < in.nodes[start].label))
      start = i;
  }
  out.latency = best[start];
  for (std::optional<std::size_t> v = start; v; v = next[*v])
    out.critical_path.push_back(in.nodes[*v].label);
  return out;
}

// ---------------------------------------------------------------------------
// Roofline and instrumentation-overhead models.
// ---------------------------------------------------------------------------

struct RooflineInput {
  std::uint64_t flops = 0;
  std::uint64_t throughput = 1; // operations per cycle
  std::uint64_t t_read = 0;
  std::uint64_t bytes = 0;
  std::uint64_t bandwidth = 1; // bytes per cycle
};

struct RooflineResult {
  std::uint64_t compute_cycles = 0;
  std::uint64_t memory_cycles = 0;
};

inline RooflineResult roofline(const RooflineInput& in) {
  if (in.throughput == 0 || in.bandwidth == 0)
    throw Error(ErrorKind::Validate, "roofline: rates must be positive");
  RooflineResult out;
  out.compute_cycles = (in.flops + in.throughput - 1) / in.throughput;
  out.memory_cycles = in.t_read + (in.bytes + in.bandwidth - 1) / in.bandwidth;
  return out;
}

struct OverheadInput {
  std::uint64_t t_vanilla = 0;
  std::uint64_t n_record = 0;
  std::uint64_t cycle_record = 0;
};

inline std::uint64_t overhead_model(const OverheadInput& in) {
  return in.t_vanilla + in.n_record * in.cycle_record;
}

// ---------------------------------------------------------------------------
// Stage table: plain text model input, one `<stage> <t_load> <t_comp>` per
// line, `#` comments.
// ---------------------------------------------------------------------------

inline std::vector<SwpStage> load_stage_table(std::istream& is) {
  std::vector<SwpStage> stages;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos)
      line.resize(hash);
    std::istringstream ls(line);
    SwpStage s;
    if (!(ls >> s.name))
      continue; // blank line
    if (!(ls >> s.t_load >> s.t_comp))
      throw Error(ErrorKind::Parse,
                  "stage table line " + std::to_string(lineno) +
                      ": expected <stage> <t_load> <t_comp>");
    stages.push_back(std::move(s));
  }
  return stages;
}

// ---------------------------------------------------------------------------
// Critical path from a replayed trace.
//
// Gating is detected from event timing: an edge is binding when the successor
// starts within `slack_tolerance` cycles of the predecessor's end. Candidate
// edges come from the device program: program order within a warp group, and
// arrive -> wait pairs across warp groups (the stage recorded last before the
// arrive gates the stage recorded first after the wait). In a steady-state
// pipelined kernel the binding edges close a cycle whose stage durations sum
// to the iteration period; that cycle, unfolded, is the per-iteration
// critical path.
// ---------------------------------------------------------------------------

struct CriticalPathOptions {
  std::uint64_t slack_tolerance = 132; // four default record costs
  bool exclude_warmup = true;          // drop each region's first/last iteration
};

struct CriticalPathAnalysis {
  WsInput graph;                  // feeds ws_latency
  std::vector<std::string> cycle; // binding cycle labels; empty when acyclic
  std::uint64_t period = 0;       // cycle duration sum when cyclic
};

namespace detail {

struct StageInstances {
  std::uint64_t mean_duration = 0;
  std::vector<const TimelineEvent*> events; // steady window, by iteration
  std::uint32_t warp_group = 0;
};

// Barrier-derived candidate edges: region finishing before each arrive ->
// region starting after each wait on the same barrier.
inline std::vector<std::pair<std::string, std::string>>
barrier_edges(const DeviceProgram& dp) {
  std::vector<std::pair<std::string, std::string>> out;
  struct ArriveSite {
    std::string barrier;
    std::string source;
  };
  std::vector<ArriveSite> arrives;
  struct WaitSite {
    std::string barrier;
    std::string target;
  };
  std::vector<WaitSite> waits;

  auto label_of = [&dp](std::uint32_t id) {
    return id < dp.plan.region_labels.size() ? dp.plan.region_labels[id]
                                             : std::string{};
  };

  for (std::uint32_t wg = 0; wg < dp.num_warp_groups; ++wg) {
    const auto& body = dp.bodies[wg];
    for (std::size_t i = 0; i < body.size(); ++i) {
      if (body[i].op != DeviceOpKind::Base)
        continue;
      const Instruction& ins = body[i].base;
      if (ins.kind == InstrKind::BarrierArrive) {
        // Nearest preceding end store.
        for (std::size_t j = i; j-- > 0;) {
          if (body[j].op == DeviceOpKind::StoreCounter && !body[j].is_start) {
            std::string label = label_of(body[j].region_id);
            if (!label.empty())
              arrives.push_back({ins.barrier, std::move(label)});
            break;
          }
        }
      } else if (ins.kind == InstrKind::BarrierWait) {
        // Nearest following start store.
        for (std::size_t j = i + 1; j < body.size(); ++j) {
          if (body[j].op == DeviceOpKind::StoreCounter && body[j].is_start) {
            std::string label = label_of(body[j].region_id);
            if (!label.empty())
              waits.push_back({ins.barrier, std::move(label)});
            break;
          }
        }
      }
    }
  }
  for (const auto& a : arrives)
    for (const auto& w : waits)
      if (a.barrier == w.barrier && a.source != w.target)
        out.emplace_back(a.source, w.target);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

} // namespace detail

inline CriticalPathAnalysis
analyze_critical_path(const std::vector<TimelineEvent>& events,
                      const DeviceProgram& dp,
                      const CriticalPathOptions& opts = {}) {
  // Group events per region over the steady window. Exec intervals of a
  // wait-marker pair are bookkeeping; the wait event carries the stage.
  std::map<std::string, std::vector<const TimelineEvent*>> by_region;
  for (const auto& ev : events) {
    if (ev.kind == EventKind::Exec && detail::is_wait_marker(ev.region))
      continue;
    by_region[ev.region].push_back(&ev);
  }

  std::map<std::string, detail::StageInstances> stages;
  for (auto& [label, evs] : by_region) {
    std::sort(evs.begin(), evs.end(),
              [](const TimelineEvent* a, const TimelineEvent* b) {
                return a->iteration < b->iteration;
              });
    detail::StageInstances si;
    si.warp_group = evs.front()->warp_group;
    std::size_t lo = 0, hi = evs.size();
    if (opts.exclude_warmup && evs.size() >= 3) {
      lo = 1;
      hi = evs.size() - 1;
    }
    std::uint64_t sum = 0;
    for (std::size_t i = lo; i < hi; ++i) {
      si.events.push_back(evs[i]);
      sum += evs[i]->duration();
    }
    if (si.events.empty())
      continue;
    si.mean_duration = static_cast<std::uint64_t>(
        std::llround(static_cast<double>(sum) / si.events.size()));
    stages.emplace(label, std::move(si));
  }

  // Candidate instance edges.
  const std::uint64_t theta = opts.slack_tolerance;
  auto close = [theta](std::uint64_t pred_end, std::uint64_t succ_start) {
    const std::uint64_t lo = pred_end > theta ? pred_end - theta : 0;
    return succ_start >= lo && succ_start <= pred_end + theta;
  };

  std::map<std::pair<std::string, std::string>, std::uint32_t> binding_count;

  // Program order within each warp group: gate = latest event (same wg)
  // ending within tolerance of this event's start.
  std::vector<const TimelineEvent*> all;
  for (const auto& [label, si] : stages)
    for (const auto* ev : si.events)
      all.push_back(ev);
  for (const auto* f : all) {
    const TimelineEvent* gate = nullptr;
    for (const auto* e : all) {
      if (e == f || e->warp_group != f->warp_group)
        continue;
      if (e->start > f->start)
        continue;
      if (!close(e->end, f->start))
        continue;
      if (!gate || e->end > gate->end ||
          (e->end == gate->end && e->region < gate->region))
        gate = e;
    }
    if (gate)
      ++binding_count[{gate->region, f->region}];
  }

  // Barrier edges across warp groups.
  for (const auto& [src, dst] : detail::barrier_edges(dp)) {
    auto sit = stages.find(src);
    auto dit = stages.find(dst);
    if (sit == stages.end() || dit == stages.end())
      throw Error(ErrorKind::Trace,
                  "critical path: no events for stage \"" +
                      (sit == stages.end() ? src : dst) +
                      "\" referenced by a barrier edge");
    if (sit->second.warp_group == dit->second.warp_group)
      continue; // same-wg gating is covered by program order
    for (const auto* f : dit->second.events) {
      for (const auto* e : sit->second.events) {
        if (close(e->end, f->start)) {
          ++binding_count[{src, dst}];
          break;
        }
      }
    }
  }

  // Fold to a label graph; keep edges binding in a majority of instances.
  std::vector<std::string> labels;
  for (const auto& [label, si] : stages)
    labels.push_back(label);
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < labels.size(); ++i)
    index[labels[i]] = i;

  std::vector<std::vector<std::size_t>> succ(labels.size());
  for (const auto& [edge, count] : binding_count) {
    const auto& [src, dst] = edge;
    const std::size_t considered = stages.at(dst).events.size();
    if (count * 2 < considered)
      continue;
    succ[index.at(src)].push_back(index.at(dst));
  }
  for (auto& s : succ) {
    std::sort(s.begin(), s.end());
    s.erase(std::unique(s.begin(), s.end()), s.end());
  }

  // Max-weight simple cycle (node weights). Graphs here are small; DFS from
  // each start node over nodes with index >= start avoids duplicates.
  CriticalPathAnalysis out;
  std::vector<std::size_t> best_cycle;
  std::uint64_t best_weight = 0;
  std::vector<std::size_t> path;
  std::vector<bool> on_path(labels.size(), false);

  auto weight_of = [&](const std::vector<std::size_t>& cyc) {
    std::uint64_t w = 0;
    for (std::size_t v : cyc)
      w += stages.at(labels[v]).mean_duration;
    return w;
  };

  std::function<void(std::size_t, std::size_t)> dfs = [&](std::size_t root,
                                                          std::size_t v) {
    for (std::size_t s : succ[v]) {
      if (s == root) {
        std::uint64_t w = weight_of(path);
        if (w > best_weight ||
            (w == best_weight && !path.empty() &&
             (best_cycle.empty() || path.size() < best_cycle.size()))) {
          best_weight = w;
          best_cycle = path;
        }
      } else if (s > root && !on_path[s]) {
        on_path[s] = true;
        path.push_back(s);
        dfs(root, s);
        path.pop_back();
        on_path[s] = false;
      }
    }
  };
  for (std::size_t root = 0; root < labels.size(); ++root) {
    path = {root};
    on_path.assign(labels.size(), false);
    on_path[root] = true;
    dfs(root, root);
  }

  // Emit the stage graph.
  for (const auto& label : labels) {
    WsNode node;
    node.label = label;
    node.duration = stages.at(label).mean_duration;
    node.kind = label.find("Load") != std::string::npos ? StageKind::Load
                                                        : StageKind::Comp;
    out.graph.nodes.push_back(std::move(node));
  }
  if (!best_cycle.empty()) {
    // Rotate so the cycle starts at its lexicographically smallest label,
    // then unfold it into a chain.
    std::size_t pivot = 0;
    for (std::size_t i = 1; i < best_cycle.size(); ++i)
      if (labels[best_cycle[i]] < labels[best_cycle[pivot]])
        pivot = i;
    std::vector<std::size_t> rotated;
    for (std::size_t i = 0; i < best_cycle.size(); ++i)
      rotated.push_back(best_cycle[(pivot + i) % best_cycle.size()]);
    for (std::size_t i = 0; i + 1 < rotated.size(); ++i)
      out.graph.edges.emplace_back(rotated[i], rotated[i + 1]);
    for (std::size_t v : rotated)
      out.cycle.push_back(labels[v]);
    out.period = best_weight;
  } else {
    for (std::size_t a = 0; a < succ.size(); ++a)
      for (std::size_t b : succ[a])
        out.graph.edges.emplace_back(a, b);
  }
  return out;
}

inline WsInput critical_path_from_trace(const std::vector<TimelineEvent>& events,
                                        const DeviceProgram& dp,
                                        const CriticalPathOptions& opts = {}) {
  return analyze_critical_path(events, dp, opts).graph;
}

} // namespace wgprof
