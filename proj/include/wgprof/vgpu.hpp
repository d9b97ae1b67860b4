#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "wgprof/lower.hpp"
#include "wgprof/trace.hpp"

// Deterministic discrete-event executor for device programs.
//
// Each warp group advances a private clock in a single global cycle domain.
// SyncCompute occupies the issuing warp group; AsyncLaunch reserves its
// functional unit (single-server FIFO) and completes at
// max(issue, unit free) + latency; AsyncWait blocks on the token's latest
// completion; barriers are phase counted. The scheduler always steps the
// runnable warp group with the smallest clock (ties: lowest index), which
// keeps unit reservations and barrier phases in global time order.
//
// A counter read captures the warp group clock first; the read+store pair
// then charges record_cost. Instrumented loop entries charge
// loop_entry_cost once per dynamic entry.

namespace wgprof {

struct MachineConfig {
  std::map<std::string, std::uint64_t> unit_latencies;
  std::uint64_t record_cost = 33;
  std::uint64_t loop_entry_cost = 5;
  double cycles_per_us = 1000.0;

  // Synthetic per-warp-group signature standing in for a hardware id
  // register read.
  Signature signature_for(std::uint32_t wg) const {
    Signature s;
    s.wave_slot_id = static_cast<std::uint8_t>(wg % 32);
    s.simd_id = static_cast<std::uint8_t>((wg / 32) % 16);
    s.pipe_id = static_cast<std::uint8_t>((wg / 512) % 8);
    return s;
  }
};

struct OracleInterval {
  std::uint32_t warp_group = 0;
  std::string region;
  std::uint32_t iteration = 0;
  std::uint64_t start = 0;
  std::uint64_t end = 0;
  EventKind kind = EventKind::Exec;

  bool operator==(const OracleInterval&) const = default;
};

using OracleTimeline = std::vector<OracleInterval>;

struct SimResult {
  GlobalTraceImage image;
  OracleTimeline oracle;
  std::uint64_t total_cycles = 0;
  std::uint64_t vanilla_cycles = 0;
  std::uint64_t records_written = 0; // N_record of the overhead model
  std::vector<std::vector<ProfileRecord>> store_log; // per warp group
};

namespace detail {

struct LoopFrame {
  std::size_t begin_pc;
  std::uint64_t remaining;
};

struct BarrierSim {
  std::uint32_t expected = 1;
  std::uint32_t arrivals = 0;
  std::vector<std::uint64_t> completions; // completion time per phase
};

struct WgSim {
  std::size_t pc = 0;
  std::uint64_t clock = 0;
  bool done = false;
  std::optional<std::pair<std::string, std::uint64_t>> blocked; // barrier, phase
  std::vector<LoopFrame> loops;
  std::map<std::uint32_t, std::uint64_t> regs;
  std::map<std::string, std::uint64_t> token_done;
  std::map<std::string, std::string> token_label;
  std::map<std::string, std::uint64_t> wait_counts; // per barrier
  // Buffer state (instrumented pass).
  std::vector<ProfileRecord> slots;
  std::uint64_t writes = 0;
  // Oracle pairing state.
  std::map<std::uint32_t, std::vector<std::uint64_t>> open_starts;
  std::map<std::uint32_t, std::uint32_t> exec_iter;
  std::map<std::string, std::uint32_t> wait_iter;
};

class Engine {
public:
  Engine(const DeviceProgram& dp, const MachineConfig& mc, bool instrumented)
      : dp_(dp), mc_(mc), instrumented_(instrumented) {
    for (const auto& b : dp.barriers) {
      BarrierSim bs;
      bs.expected = b.expected_arrivals;
      barriers_.emplace(b.name, bs);
    }
    wgs_.resize(dp.num_warp_groups);
    for (std::uint32_t wg = 0; wg < dp.num_warp_groups; ++wg)
      wgs_[wg].slots.assign(dp.plan.slots_per_warp_group, ProfileRecord{});
    mark_instrumented_loops();
  }

  void run() {
    for (;;) {
      int next = pick();
      if (next < 0) {
        if (all_done())
          break;
        report_deadlock();
      }
      step(static_cast<std::uint32_t>(next));
    }
  }

  std::uint64_t total_cycles() const {
    std::uint64_t t = 0;
    for (const auto& wg : wgs_)
      t = std::max(t, wg.clock);
    return t;
  }

  GlobalTraceImage image() const {
    GlobalTraceImage img;
    for (std::uint32_t wg = 0; wg < dp_.num_warp_groups; ++wg) {
      TraceStream s;
      s.block_index = 0;
      s.warp_group = wg;
      s.record_count = static_cast<std::uint32_t>(wgs_[wg].writes);
      s.slot_capacity = static_cast<std::uint32_t>(dp_.plan.slots_per_warp_group);
      s.slots = wgs_[wg].slots;
      img.streams.push_back(std::move(s));
    }
    return img;
  }

  OracleTimeline oracle_;
  std::vector<std::vector<ProfileRecord>> store_log_;
  std::uint64_t records_written_ = 0;

private:
  bool all_done() const {
    for (const auto& wg : wgs_)
      if (!wg.done)
        return false;
    return true;
  }

  [[noreturn]] void report_deadlock() const {
    std::ostringstream os;
    os << "no runnable warp group;";
    for (std::uint32_t i = 0; i < wgs_.size(); ++i)
      if (!wgs_[i].done && wgs_[i].blocked)
        os << " wg" << i << " blocked at barrier '" << wgs_[i].blocked->first
           << "' phase " << wgs_[i].blocked->second << ";";
    throw Error(ErrorKind::Deadlock, os.str());
  }

  int pick() {
    // Release any waiter whose phase has completed since it blocked.
    for (auto& wg : wgs_) {
      if (wg.done || !wg.blocked)
        continue;
      const auto& [name, phase] = *wg.blocked;
      const auto& bar = barriers_.at(name);
      if (phase < bar.completions.size()) {
        wg.clock = std::max(wg.clock, bar.completions[phase]);
        wg.blocked.reset();
        ++wg.pc;
      }
    }
    int best = -1;
    for (std::uint32_t i = 0; i < wgs_.size(); ++i) {
      const auto& wg = wgs_[i];
      if (wg.done || wg.blocked)
        continue;
      if (best < 0 || wg.clock < wgs_[best].clock)
        best = static_cast<int>(i);
    }
    return best;
  }

  std::uint64_t effective_latency(const Instruction& ins) const {
    if (ins.latency)
      return *ins.latency;
    auto it = mc_.unit_latencies.find(ins.unit);
    if (it == mc_.unit_latencies.end())
      throw Error(ErrorKind::Validate,
                  "no latency for unit '" + ins.unit +
                      "' (not on the instruction, no machine default)");
    return it->second;
  }

  void step(std::uint32_t id) {
    WgSim& wg = wgs_[id];
    const auto& body = dp_.bodies[id];
    if (wg.pc >= body.size()) {
      wg.done = true;
      return;
    }
    const DeviceInstr& d = body[wg.pc];
    switch (d.op) {
    case DeviceOpKind::Init:
      // Index state lives in a register; setup is free.
      ++wg.pc;
      break;
    case DeviceOpKind::ReadCounter:
      wg.regs[d.reg] = wg.clock;
      ++wg.pc;
      break;
    case DeviceOpKind::StoreCounter:
      exec_store(id, wg, d);
      ++wg.pc;
      break;
    case DeviceOpKind::Finalize:
      // Buffers are copied out at once from the engine state; no cycles.
      ++wg.pc;
      break;
    case DeviceOpKind::Base:
      exec_base(id, wg, d.base);
      break;
    }
    if (wg.pc >= body.size())
      wg.done = true;
  }

  void exec_store(std::uint32_t id, WgSim& wg, const DeviceInstr& d) {
    auto it = wg.regs.find(d.reg);
    if (it == wg.regs.end())
      throw Error(ErrorKind::Validate,
                  "store_counter consumes r" + std::to_string(d.reg) +
                      " before any read_counter wrote it");
    const std::uint64_t captured = it->second;
    if (instrumented_) {
      std::uint16_t sig = 0;
      if (dp_.config.signature_bits_enabled) {
        sig = mc_.signature_for(id).packed();
      } else if (dp_.config.iteration_signature && !wg.loops.empty()) {
        const detail::LoopFrame& frame = wg.loops.back();
        const std::uint64_t trips =
            dp_.bodies[id][frame.begin_pc].base.trip_count;
        sig = static_cast<std::uint16_t>((trips - frame.remaining) & 0xFFF);
      }
      ProfileRecord rec =
          ProfileRecord::make(d.is_start, d.region_id, sig,
                              static_cast<std::uint32_t>(captured));
      const std::uint64_t cap = dp_.plan.slots_per_warp_group;
      if (dp_.plan.strategy == BufferStrategy::Flush && wg.writes >= cap)
        throw Error(ErrorKind::Capacity,
                    "wg" + std::to_string(id) +
                        ": flush buffer overflow after " +
                        std::to_string(wg.writes) + " records");
      wg.slots[wg.writes % cap] = rec;
      ++wg.writes;
      ++records_written_;
      if (store_log_.size() <= id)
        store_log_.resize(dp_.num_warp_groups);
      store_log_[id].push_back(rec);
      wg.clock += mc_.record_cost;
    } else {
      // Oracle pass: zero cost, collect ground-truth intervals.
      if (d.is_start) {
        wg.open_starts[d.region_id].push_back(captured);
      } else {
        auto& stack = wg.open_starts[d.region_id];
        if (!stack.empty()) {
          OracleInterval iv;
          iv.warp_group = id;
          iv.region = d.region_id < dp_.plan.region_labels.size()
                          ? dp_.plan.region_labels[d.region_id]
                          : "region#" + std::to_string(d.region_id);
          iv.start = stack.back();
          iv.end = captured;
          iv.iteration = wg.exec_iter[d.region_id]++;
          iv.kind = EventKind::Exec;
          stack.pop_back();
          oracle_.push_back(std::move(iv));
        }
      }
    }
  }

  void exec_base(std::uint32_t id, WgSim& wg, const Instruction& ins) {
    switch (ins.kind) {
    case InstrKind::SyncCompute:
      wg.clock += effective_latency(ins);
      ++wg.pc;
      break;
    case InstrKind::AsyncLaunch: {
      const std::uint64_t latency = effective_latency(ins);
      std::uint64_t& unit_free = units_[ins.unit];
      const std::uint64_t start = std::max(wg.clock, unit_free);
      const std::uint64_t done = start + latency;
      unit_free = done;
      std::uint64_t& token = wg.token_done[ins.token];
      token = std::max(token, done);
      wg.token_label[ins.token] = ins.label;
      ++wg.pc;
      break;
    }
    case InstrKind::AsyncWait: {
      auto it = wg.token_done.find(ins.token);
      const std::uint64_t done = it == wg.token_done.end() ? 0 : it->second;
      if (!instrumented_) {
        const std::string& label = wg.token_label[ins.token];
        if (!label.empty()) {
          OracleInterval iv;
          iv.warp_group = id;
          iv.region = label + kWaitSuffix;
          iv.start = wg.clock;            // arrival at the wait
          iv.end = std::max(wg.clock, done); // release
          iv.iteration = wg.wait_iter[iv.region]++;
          iv.kind = EventKind::Wait;
          oracle_.push_back(std::move(iv));
        }
      }
      wg.clock = std::max(wg.clock, done);
      ++wg.pc;
      break;
    }
    case InstrKind::BarrierArrive: {
      auto it = barriers_.find(ins.barrier);
      if (it == barriers_.end())
        throw Error(ErrorKind::Validate,
                    "arrive on undeclared barrier '" + ins.barrier + "'");
      BarrierSim& bar = it->second;
      ++bar.arrivals;
      if (bar.arrivals == bar.expected) {
        // Arrivals are processed in global time order, so the completing
        // arrive carries the phase's latest arrival time.
        bar.completions.push_back(wg.clock);
        bar.arrivals = 0;
      }
      ++wg.pc;
      break;
    }
    case InstrKind::BarrierWait: {
      auto it = barriers_.find(ins.barrier);
      if (it == barriers_.end())
        throw Error(ErrorKind::Validate,
                    "wait on undeclared barrier '" + ins.barrier + "'");
      const std::uint64_t phase = wg.wait_counts[ins.barrier]++;
      BarrierSim& bar = it->second;
      if (phase < bar.completions.size()) {
        wg.clock = std::max(wg.clock, bar.completions[phase]);
        ++wg.pc;
      } else {
        wg.blocked = {ins.barrier, phase};
        // pc advances on release
      }
      break;
    }
    case InstrKind::LoopBegin: {
      if (instrumented_ && instrumented_loops_.count(loop_key(id, wg.pc)))
        wg.clock += mc_.loop_entry_cost;
      wg.loops.push_back({wg.pc, ins.trip_count});
      ++wg.pc;
      break;
    }
    case InstrKind::LoopEnd: {
      LoopFrame& frame = wg.loops.back();
      if (--frame.remaining > 0) {
        wg.pc = frame.begin_pc + 1;
      } else {
        wg.loops.pop_back();
        ++wg.pc;
      }
      break;
    }
    case InstrKind::Record:
      throw Error(ErrorKind::Validate,
                  "record instruction reached the executor; run lower() first");
    }
  }

  static std::uint64_t loop_key(std::uint32_t wg, std::size_t pc) {
    return (static_cast<std::uint64_t>(wg) << 32) | pc;
  }

  // A loop is instrumented when its static extent contains a counter store.
  void mark_instrumented_loops() {
    for (std::uint32_t wg = 0; wg < dp_.num_warp_groups; ++wg) {
      const auto& body = dp_.bodies[wg];
      std::vector<std::size_t> stack;
      for (std::size_t pc = 0; pc < body.size(); ++pc) {
        const DeviceInstr& d = body[pc];
        if (d.op == DeviceOpKind::Base) {
          if (d.base.kind == InstrKind::LoopBegin)
            stack.push_back(pc);
          else if (d.base.kind == InstrKind::LoopEnd)
            stack.pop_back();
        } else if (d.op == DeviceOpKind::StoreCounter) {
          for (std::size_t begin : stack)
            instrumented_loops_.insert(loop_key(wg, begin));
        }
      }
    }
  }

  const DeviceProgram& dp_;
  const MachineConfig& mc_;
  bool instrumented_;
  std::vector<WgSim> wgs_;
  std::map<std::string, BarrierSim> barriers_;
  std::map<std::string, std::uint64_t> units_;
  std::set<std::uint64_t> instrumented_loops_;
};

} // namespace detail

inline SimResult simulate(const DeviceProgram& dp, const MachineConfig& mc) {
  if (dp.plan.slots_per_warp_group == 0)
    throw Error(ErrorKind::Lower, "device program has an empty buffer plan");
  if (dp.config.buffer_type == BufferType::Shared) {
    const std::uint64_t bytes =
        dp.plan.slots_per_warp_group * dp.num_warp_groups * kRecordBytes;
    if (bytes > dp.shared_mem_capacity)
      throw Error(ErrorKind::Capacity,
                  "profiling buffer does not fit in shared memory");
  }

  detail::Engine instrumented(dp, mc, /*instrumented=*/true);
  instrumented.store_log_.resize(dp.num_warp_groups);
  instrumented.run();

  detail::Engine oracle(dp, mc, /*instrumented=*/false);
  oracle.run();

  SimResult res;
  res.image = instrumented.image();
  res.total_cycles = instrumented.total_cycles();
  res.records_written = instrumented.records_written_;
  res.store_log = std::move(instrumented.store_log_);
  res.oracle = std::move(oracle.oracle_);
  res.vanilla_cycles = oracle.total_cycles();
  return res;
}

} // namespace wgprof
