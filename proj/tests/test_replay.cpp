#include <catch2/catch_amalgamated.hpp>

#include <map>

#include "support.hpp"
#include "wgprof/pipeline.hpp"
#include "wgprof/vgpu.hpp"

using namespace wgprof;

namespace {

struct Fixture {
  DeviceProgram dp;
  SimResult sim;
  TraceReplay replayed;
};

Fixture run_one(const KernelProgram& p,
                BufferStrategy strategy = BufferStrategy::Flush,
                std::uint64_t slots = 0) {
  Fixture f;
  LoweringConfig cfg;
  cfg.buffer_strategy = strategy;
  cfg.buffer_slots_total = slots;
  f.dp = lower(p, cfg);
  MachineConfig mc;
  f.sim = simulate(f.dp, mc);
  f.replayed = replay_image(f.sim.image, f.dp.plan, mc.record_cost);
  return f;
}

using EventKey = std::tuple<std::string, std::uint32_t, std::uint32_t, int>;

EventKey key_of(const TimelineEvent& ev) {
  return {ev.region, ev.warp_group, ev.iteration,
          ev.kind == EventKind::Wait ? 1 : 0};
}

std::map<EventKey, std::uint64_t>
durations_by_key(const OracleTimeline& oracle) {
  std::map<EventKey, std::uint64_t> out;
  for (const auto& iv : oracle)
    out[{iv.region, iv.warp_group, iv.iteration,
         iv.kind == EventKind::Wait ? 1 : 0}] = iv.end - iv.start;
  return out;
}

} // namespace

TEST_CASE("worked example: end at 150, start-after-wait at 400 gives 250") {
  PairResult pairs;
  pairs.intervals.push_back({0, "G", 0, 10, 150, 0, 1});
  pairs.intervals.push_back({1, "G.wait", 0, 400, 410, 2, 3});
  auto rr = replay(pairs, 0, 0, 33);
  REQUIRE(rr.events.size() == 2);
  const auto& wait = rr.events[1];
  REQUIRE(wait.region == "G.wait");
  REQUIRE(wait.kind == EventKind::Wait);
  REQUIRE(wait.start == 150);
  REQUIRE(wait.end == 400);
  REQUIRE(wait.duration() == 250);
  REQUIRE(wait.corrected);
}

TEST_CASE("sync correction subtracts one cost per enclosed read") {
  // A span measured 166 cycles containing one nested record pair: the two
  // enclosed reads charged 33 each inside the window come off.
  PairResult pairs;
  pairs.intervals.push_back({1, "inner", 0, 40, 80, 1, 2});
  pairs.intervals.push_back({0, "outer", 0, 10, 176, 0, 3});
  auto rr = replay(pairs, 0, 0, 33);
  REQUIRE(rr.events.size() == 2);
  const auto& outer = rr.events[1];
  REQUIRE(outer.region == "outer");
  // measured 166, own start read + two enclosed reads inside the window.
  REQUIRE(176 - 10 == 166);
  REQUIRE(outer.duration() == 166 - 33 - 2 * 33);
}

TEST_CASE("precondition violation is flagged and reported raw") {
  PairResult pairs;
  pairs.intervals.push_back({0, "G", 0, 10, 100, 0, 1});
  pairs.intervals.push_back({1, "G.wait", 0, 120, 130, 2, 3});
  auto rr = replay(pairs, 0, 0, 33);
  REQUIRE(rr.flagged_preconditions == 1);
  const auto& wait = rr.events[1];
  REQUIRE(wait.duration() == 20);
  REQUIRE_FALSE(wait.corrected);
}

TEST_CASE("orphan wait marker is reported as malformed") {
  PairResult pairs;
  pairs.intervals.push_back({1, "G.wait", 0, 120, 130, 0, 1});
  auto rr = replay(pairs, 0, 0, 33);
  REQUIRE(rr.malformed_groups == 1);
  REQUIRE(rr.events.size() == 1);
  REQUIRE_FALSE(rr.events[0].corrected);
}

TEST_CASE("simulated sync interval measured 166 corrects to 100") {
  auto p = [] {
    KernelProgram p;
    p.name = "k";
    p.num_warp_groups = 1;
    p.shared_mem_capacity = 1 << 16;
    p.warp_group_bodies.push_back({
        Instruction::record("R", true),
        Instruction::sync_compute("cuda", 100),
        Instruction::record("R", false),
    });
    return p;
  }();
  auto f = run_one(p);
  REQUIRE(f.sim.total_cycles == 166);
  REQUIRE(f.replayed.events.size() == 1);
  REQUIRE(f.replayed.events[0].duration() == 100);
  REQUIRE(f.replayed.events[0].corrected);
}

TEST_CASE("replay-corrected durations equal the oracle exactly") {
  testgen::Rng rng(0x5EED);
  int async_groups_seen = 0;
  for (int i = 0; i < 100; ++i) {
    auto p = testgen::random_program(rng, /*with_loop=*/true,
                                     /*num_warp_groups=*/1);
    bool has_records = false;
    for (const auto& ins : p.warp_group_bodies[0])
      has_records |= ins.kind == InstrKind::Record;
    if (!has_records)
      continue;
    auto f = run_one(p);
    auto oracle = durations_by_key(f.sim.oracle);
    REQUIRE(f.replayed.flagged_preconditions == 0);
    REQUIRE(f.replayed.malformed_groups == 0);
    for (const auto& ev : f.replayed.events) {
      auto it = oracle.find(key_of(ev));
      REQUIRE(it != oracle.end());
      INFO("region " << ev.region << " iteration " << ev.iteration);
      REQUIRE(ev.duration() == it->second);
      if (ev.kind == EventKind::Wait)
        ++async_groups_seen;
    }
  }
  REQUIRE(async_groups_seen > 50);
}

TEST_CASE("wait markers pair with their base region per iteration in loops") {
  KernelProgram p;
  p.name = "loop";
  p.num_warp_groups = 1;
  p.shared_mem_capacity = 1 << 16;
  p.warp_group_bodies.push_back({
      Instruction::loop_begin(4),
      Instruction::record("L", true),
      Instruction::async_launch("tma", "t", 900, "L"),
      Instruction::sync_compute("cuda", 100),
      Instruction::record("L", false),
      Instruction::async_wait("t"),
      Instruction::record("L.wait", true),
      Instruction::record("L.wait", false),
      Instruction::loop_end(),
  });
  auto f = run_one(p);
  auto oracle = durations_by_key(f.sim.oracle);
  int waits = 0;
  for (const auto& ev : f.replayed.events) {
    if (ev.kind != EventKind::Wait)
      continue;
    ++waits;
    REQUIRE(ev.duration() == oracle.at(key_of(ev)));
  }
  REQUIRE(waits == 4);
}

TEST_CASE("circular truncation surfaces as warnings, not errors") {
  KernelProgram p;
  p.name = "trunc";
  p.num_warp_groups = 1;
  p.shared_mem_capacity = 1 << 16;
  p.warp_group_bodies.push_back({
      Instruction::loop_begin(8),
      Instruction::record("L", true),
      Instruction::async_launch("tma", "t", 700, "L"),
      Instruction::record("L", false),
      Instruction::async_wait("t"),
      Instruction::record("L.wait", true),
      Instruction::record("L.wait", false),
      Instruction::loop_end(),
  });
  // 32 writes into 6 slots cut one async group in half: its wait marker
  // survives without the base interval.
  auto f = run_one(p, BufferStrategy::Circular, 6);
  REQUIRE(f.replayed.malformed_groups == 1);
  auto oracle = durations_by_key(f.sim.oracle);
  for (const auto& ev : f.replayed.events) {
    if (!ev.corrected)
      continue; // the orphaned marker is reported raw
    REQUIRE(ev.duration() == oracle.at(key_of(ev)));
  }
}

TEST_CASE("iteration indices in circular tails count from the surviving records") {
  KernelProgram p;
  p.name = "tail";
  p.num_warp_groups = 1;
  p.shared_mem_capacity = 1 << 16;
  p.warp_group_bodies.push_back({
      Instruction::loop_begin(10),
      Instruction::record("R", true),
      Instruction::sync_compute("cuda", 10),
      Instruction::record("R", false),
      Instruction::loop_end(),
  });
  auto f = run_one(p, BufferStrategy::Circular, 8);
  // 20 writes, 8 slots: 4 whole pairs survive.
  REQUIRE(f.replayed.events.size() == 4);
  for (std::uint32_t i = 0; i < 4; ++i)
    REQUIRE(f.replayed.events[i].iteration == i);
}
