#pragma once

#include <random>
#include <string>
#include <vector>

#include "wgprof/instrument.hpp"
#include "wgprof/ir.hpp"
#include "wgprof/lower.hpp"

// Deterministic fixture generators shared across the test binaries.

namespace testgen {

using Rng = std::mt19937_64;

inline std::uint64_t pick(Rng& rng, std::uint64_t lo, std::uint64_t hi) {
  return std::uniform_int_distribution<std::uint64_t>(lo, hi)(rng);
}

// A random single-warp-group program built from canonical profiled segments:
// sync regions around computes, async launch/wait groups with the four-record
// pattern, optional unlabeled filler, optionally wrapped in a loop. Async
// unit latencies comfortably exceed the successor work so the replay
// precondition holds.
inline wgprof::KernelProgram random_program(Rng& rng, bool with_loop,
                                            std::uint32_t num_warp_groups = 1) {
  using wgprof::Instruction;
  wgprof::KernelProgram p;
  p.name = "rnd" + std::to_string(pick(rng, 0, 1u << 30));
  p.num_warp_groups = num_warp_groups;
  p.shared_mem_capacity = 1 << 20;
  p.warp_group_bodies.resize(num_warp_groups);

  for (std::uint32_t wg = 0; wg < num_warp_groups; ++wg) {
    auto& body = p.warp_group_bodies[wg];
    const std::uint64_t segments = pick(rng, 1, 4);
    const bool looped = with_loop && pick(rng, 0, 1) == 1;
    if (looped)
      body.push_back(Instruction::loop_begin(pick(rng, 2, 5)));
    for (std::uint64_t s = 0; s < segments; ++s) {
      const std::string tag =
          "wg" + std::to_string(wg) + ".s" + std::to_string(s);
      switch (pick(rng, 0, 2)) {
      case 0: { // sync region
        body.push_back(Instruction::record("R" + tag, true));
        body.push_back(
            Instruction::sync_compute("cuda", pick(rng, 100, 2000)));
        body.push_back(Instruction::record("R" + tag, false));
        break;
      }
      case 1: { // async group, canonical pattern
        const std::string token = "t" + tag;
        const std::uint64_t exe = pick(rng, 0, 1) ? pick(rng, 50, 200) : 0;
        const std::uint64_t latency = exe + pick(rng, 500, 3000);
        body.push_back(Instruction::record("A" + tag, true));
        body.push_back(
            Instruction::async_launch("u" + tag, token, latency, "A" + tag));
        if (exe)
          body.push_back(Instruction::sync_compute("cuda", exe));
        body.push_back(Instruction::record("A" + tag, false));
        body.push_back(Instruction::async_wait(token));
        body.push_back(
            Instruction::record("A" + tag + wgprof::kWaitSuffix, true));
        body.push_back(
            Instruction::record("A" + tag + wgprof::kWaitSuffix, false));
        break;
      }
      default: // unlabeled filler
        body.push_back(
            Instruction::sync_compute("cuda", pick(rng, 10, 500)));
        break;
      }
    }
    if (looped)
      body.push_back(Instruction::loop_end());
  }
  wgprof::validate(p);
  wgprof::validate_record_pairing(p);
  return p;
}

// A structurally valid random program for round-trip properties: barriers,
// nested loops, records, async pairs.
inline wgprof::KernelProgram random_structural_program(Rng& rng) {
  using wgprof::Instruction;
  wgprof::KernelProgram p;
  p.name = "gen" + std::to_string(pick(rng, 0, 1u << 30));
  p.num_warp_groups = static_cast<std::uint32_t>(pick(rng, 1, 3));
  p.shared_mem_capacity = pick(rng, 1, 1 << 20);
  const std::uint64_t nbars = pick(rng, 0, 2);
  for (std::uint64_t b = 0; b < nbars; ++b)
    p.barriers.push_back(
        {"b" + std::to_string(b),
         static_cast<std::uint32_t>(pick(rng, 1, p.num_warp_groups))});
  p.warp_group_bodies.resize(p.num_warp_groups);
  for (auto& body : p.warp_group_bodies) {
    int depth = 0;
    const std::uint64_t len = pick(rng, 0, 12);
    std::uint64_t tokens = 0;
    for (std::uint64_t i = 0; i < len; ++i) {
      switch (pick(rng, 0, 6)) {
      case 0:
        body.push_back(Instruction::sync_compute(
            "u" + std::to_string(pick(rng, 0, 2)), pick(rng, 1, 5000),
            pick(rng, 0, 1) ? "op " + std::to_string(i) : ""));
        break;
      case 1: {
        const std::string token = "t" + std::to_string(tokens++);
        body.push_back(Instruction::async_launch("tma", token,
                                                 pick(rng, 1, 5000)));
        if (pick(rng, 0, 1))
          body.push_back(Instruction::async_wait(token));
        break;
      }
      case 2:
        if (!p.barriers.empty())
          body.push_back(Instruction::arrive(
              p.barriers[pick(rng, 0, p.barriers.size() - 1)].name));
        break;
      case 3:
        if (!p.barriers.empty())
          body.push_back(Instruction::wait(
              p.barriers[pick(rng, 0, p.barriers.size() - 1)].name));
        break;
      case 4:
        if (depth < 2) {
          body.push_back(Instruction::loop_begin(
              pick(rng, 1, 8), pick(rng, 0, 1) ? "loop" : ""));
          ++depth;
        }
        break;
      case 5:
        if (depth > 0) {
          body.push_back(Instruction::loop_end());
          --depth;
        }
        break;
      default: {
        const std::string region = "r" + std::to_string(pick(rng, 0, 3));
        body.push_back(Instruction::record(region, true));
        body.push_back(Instruction::record(region, false));
        break;
      }
      }
    }
    while (depth-- > 0)
      body.push_back(Instruction::loop_end());
  }
  wgprof::validate(p);
  return p;
}

} // namespace testgen
