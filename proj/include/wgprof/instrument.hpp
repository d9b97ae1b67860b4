#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "wgprof/ir.hpp"

// Region-marker instrumentation. Record instructions carry (region name,
// start/end flag); the lowering pass turns them into counter reads/stores.
//
// The async pattern around a launch/wait token pair places four records:
//
//   record start "X"      <- CLK0, immediately before the launch
//   async_launch token=t
//   ...
//   record end "X"        <- CLK1, immediately before the wait
//   async_wait token=t
//   record start "X.wait" <- CLK2, immediately after the wait
//   record end "X.wait"
//
// Replay derives the wait interval as CLK2 - CLK1; the trailing end record
// closes "X.wait" so that start/end pairing stays balanced.

namespace wgprof {

inline const char* kWaitSuffix = ".wait";

enum class InstrumentationEntry { BeforeLowering, AfterLowering };

struct RegionAnchor {
  std::string region;
  std::string anchor; // label of an instruction or loop

  bool operator==(const RegionAnchor&) const = default;
};

struct InstrumentationRequest {
  std::vector<RegionAnchor> target_regions;
  InstrumentationEntry entry = InstrumentationEntry::BeforeLowering;
  std::optional<std::string> kernel_filter;
  bool auto_async = false;
};

// patch/unpatch handle; keeps the pre-patch program for restore.
struct PatchHandle {
  KernelProgram program;
  std::optional<KernelProgram> undo;
};

// ---------------------------------------------------------------------------
// Record pairing scan.
//
// Starts and ends must nest properly (single stack) and close within the loop
// scope they opened in; pairs crossing a loop boundary are rejected.
// ---------------------------------------------------------------------------

inline void validate_record_pairing(const KernelProgram& p) {
  for (std::uint32_t wg = 0; wg < p.num_warp_groups; ++wg) {
    const std::string where = "wg" + std::to_string(wg);
    struct Open {
      std::string region;
      int depth;
    };
    std::vector<Open> stack;
    int depth = 0;
    for (const auto& ins : p.warp_group_bodies[wg]) {
      switch (ins.kind) {
      case InstrKind::LoopBegin:
        ++depth;
        break;
      case InstrKind::LoopEnd:
        if (!stack.empty() && stack.back().depth == depth)
          throw Error(ErrorKind::Instrument,
                      where + ": record start \"" + stack.back().region +
                          "\" crosses a loop boundary");
        --depth;
        break;
      case InstrKind::Record:
        if (ins.is_start) {
          stack.push_back({ins.label, depth});
        } else {
          if (stack.empty() || stack.back().region != ins.label)
            throw Error(ErrorKind::Instrument,
                        where + ": record end \"" + ins.label +
                            "\" does not match the innermost open start");
          if (stack.back().depth != depth)
            throw Error(ErrorKind::Instrument,
                        where + ": record pair \"" + ins.label +
                            "\" crosses a loop boundary");
          stack.pop_back();
        }
        break;
      default:
        break;
      }
    }
    if (!stack.empty())
      throw Error(ErrorKind::Instrument, where + ": record start \"" +
                                             stack.back().region +
                                             "\" is never closed");
  }
}

// ---------------------------------------------------------------------------
// Insertion helpers.
// ---------------------------------------------------------------------------

namespace detail {

// Finds the first AsyncWait at or after `from` whose token matches.
inline std::optional<std::size_t> matching_wait(const InstructionBlock& body,
                                                std::size_t from,
                                                const std::string& token) {
  for (std::size_t i = from; i < body.size(); ++i)
    if (body[i].kind == InstrKind::AsyncWait && body[i].token == token)
      return i;
  return std::nullopt;
}

// Marks, per instruction index, records to insert before/after it.
struct Insertions {
  std::map<std::size_t, std::vector<Instruction>> before;
  std::map<std::size_t, std::vector<Instruction>> after;

  InstructionBlock apply(const InstructionBlock& body) const {
    InstructionBlock out;
    out.reserve(body.size() + 8);
    for (std::size_t i = 0; i < body.size(); ++i) {
      if (auto it = before.find(i); it != before.end())
        for (const auto& r : it->second)
          out.push_back(r);
      out.push_back(body[i]);
      if (auto it = after.find(i); it != after.end())
        for (const auto& r : it->second)
          out.push_back(r);
    }
    return out;
  }
};

// The four-record async pattern around a launch at `pos` and its wait.
inline void insert_async_pattern(Insertions& ins, const std::string& region,
                                 std::size_t launch_pos,
                                 std::size_t wait_pos) {
  ins.before[launch_pos].push_back(Instruction::record(region, true));
  ins.before[wait_pos].push_back(Instruction::record(region, false));
  const std::string wait_region = region + kWaitSuffix;
  ins.after[wait_pos].push_back(Instruction::record(wait_region, true));
  ins.after[wait_pos].push_back(Instruction::record(wait_region, false));
}

} // namespace detail

// ---------------------------------------------------------------------------
// patch / unpatch.
// ---------------------------------------------------------------------------

namespace detail {

inline KernelProgram apply_anchors(const KernelProgram& p,
                                   const InstrumentationRequest& req) {
  KernelProgram out = p;
  for (const auto& target : req.target_regions) {
    bool found = false;
    for (std::uint32_t wg = 0; wg < out.num_warp_groups; ++wg) {
      const InstructionBlock& body = out.warp_group_bodies[wg];
      Insertions ins;
      for (std::size_t i = 0; i < body.size(); ++i) {
        const Instruction& at = body[i];
        if (at.kind == InstrKind::Record || at.label != target.anchor ||
            at.label.empty())
          continue;
        found = true;
        switch (at.kind) {
        case InstrKind::AsyncLaunch: {
          auto wait = matching_wait(body, i + 1, at.token);
          if (wait) {
            insert_async_pattern(ins, target.region, i, *wait);
          } else {
            ins.before[i].push_back(Instruction::record(target.region, true));
            ins.after[i].push_back(Instruction::record(target.region, false));
          }
          break;
        }
        case InstrKind::LoopBegin: {
          // Records go around the loop body: start after the begin marker,
          // end before the matching end marker.
          int depth = 1;
          std::size_t end = i;
          for (std::size_t j = i + 1; j < body.size() && depth > 0; ++j) {
            if (body[j].kind == InstrKind::LoopBegin)
              ++depth;
            else if (body[j].kind == InstrKind::LoopEnd)
              --depth;
            end = j;
          }
          ins.after[i].push_back(Instruction::record(target.region, true));
          ins.before[end].push_back(Instruction::record(target.region, false));
          break;
        }
        default:
          ins.before[i].push_back(Instruction::record(target.region, true));
          ins.after[i].push_back(Instruction::record(target.region, false));
          break;
        }
      }
      out.warp_group_bodies[wg] = ins.apply(body);
    }
    if (!found)
      throw Error(ErrorKind::Instrument,
                  "unresolved anchor '" + target.anchor + "' for region \"" +
                      target.region + "\"");
  }
  return out;
}

inline KernelProgram apply_auto_async(const KernelProgram& p) {
  KernelProgram out = p;
  for (auto& body : out.warp_group_bodies) {
    Insertions ins;
    for (std::size_t i = 0; i < body.size(); ++i) {
      const Instruction& at = body[i];
      if (at.label.empty())
        continue; // unlabeled ops are skipped
      if (at.kind == InstrKind::AsyncLaunch) {
        auto wait = matching_wait(body, i + 1, at.token);
        if (wait)
          insert_async_pattern(ins, at.label, i, *wait);
        else {
          ins.before[i].push_back(Instruction::record(at.label, true));
          ins.after[i].push_back(Instruction::record(at.label, false));
        }
      } else if (at.kind == InstrKind::SyncCompute) {
        ins.before[i].push_back(Instruction::record(at.label, true));
        ins.after[i].push_back(Instruction::record(at.label, false));
      }
    }
    body = ins.apply(body);
  }
  return out;
}

} // namespace detail

inline PatchHandle patch(const KernelProgram& p,
                         const InstrumentationRequest& req) {
  validate(p);
  if (req.kernel_filter && *req.kernel_filter != p.name)
    return PatchHandle{p, p}; // filter miss: program unchanged
  KernelProgram out = detail::apply_anchors(p, req);
  if (req.auto_async)
    out = detail::apply_auto_async(out);
  validate_record_pairing(out);
  return PatchHandle{std::move(out), p};
}

// Further patch on an existing handle; the undo slot keeps the most recent
// pre-patch state.
inline void patch(PatchHandle& h, const InstrumentationRequest& req) {
  PatchHandle next = patch(h.program, req);
  h.undo = h.program;
  h.program = std::move(next.program);
}

inline KernelProgram unpatch(PatchHandle& h) {
  if (!h.undo)
    throw Error(ErrorKind::Instrument,
                "unpatch: handle holds no instrumented state to restore");
  h.program = *h.undo;
  h.undo.reset();
  return h.program;
}

inline KernelProgram auto_instrument_async(const KernelProgram& p) {
  validate(p);
  KernelProgram out = detail::apply_auto_async(p);
  validate_record_pairing(out);
  return out;
}

} // namespace wgprof
