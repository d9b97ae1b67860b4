#include <catch2/catch_amalgamated.hpp>

#include "support.hpp"
#include "wgprof/lower.hpp"

using namespace wgprof;

namespace {

KernelProgram instrumented_two_wg() {
  KernelProgram p;
  p.name = "k";
  p.num_warp_groups = 2;
  p.shared_mem_capacity = 4096;
  p.warp_group_bodies.resize(2);
  p.warp_group_bodies[0] = {
      Instruction::record("A", true),
      Instruction::sync_compute("cuda", 100),
      Instruction::record("A", false),
  };
  p.warp_group_bodies[1] = {
      Instruction::record("B", true),
      Instruction::sync_compute("cuda", 50),
      Instruction::record("B", false),
  };
  return p;
}

std::size_t count_ops(const DeviceProgram& dp, DeviceOpKind kind) {
  std::size_t n = 0;
  for (const auto& body : dp.bodies)
    for (const auto& d : body)
      if (d.op == kind)
        ++n;
  return n;
}

} // namespace

TEST_CASE("64 total slots over 2 warp groups: 32 each, offsets 0 and 256") {
  auto p = instrumented_two_wg();
  LoweringConfig cfg;
  cfg.buffer_slots_total = 64;
  auto dp = lower(p, cfg);
  REQUIRE(dp.plan.slots_per_warp_group == 32);
  REQUIRE(dp.plan.base_offset(0) == 0);
  REQUIRE(dp.plan.base_offset(1) == 256);
}

TEST_CASE("lowering replaces every record with a read+store") {
  auto p = instrumented_two_wg();
  LoweringConfig cfg;
  cfg.buffer_slots_total = 64;
  auto dp = lower(p, cfg);
  REQUIRE(count_ops(dp, DeviceOpKind::ReadCounter) == 4);
  REQUIRE(count_ops(dp, DeviceOpKind::StoreCounter) == 4);
  REQUIRE(count_ops(dp, DeviceOpKind::Init) == 2);
  REQUIRE(count_ops(dp, DeviceOpKind::Finalize) == 2);
  for (const auto& body : dp.bodies) {
    REQUIRE(body.front().op == DeviceOpKind::Init);
    REQUIRE(body.back().op == DeviceOpKind::Finalize);
    for (const auto& d : body)
      if (d.op == DeviceOpKind::Base)
        REQUIRE(d.base.kind != InstrKind::Record);
  }
}

TEST_CASE("region ids are dense in first-appearance order and stable") {
  auto p = instrumented_two_wg();
  LoweringConfig cfg;
  cfg.buffer_slots_total = 64;
  auto dp = lower(p, cfg);
  REQUIRE(dp.plan.region_labels == std::vector<std::string>{"A", "B"});
  auto dp2 = lower(p, cfg);
  REQUIRE(dp2.plan.region_labels == dp.plan.region_labels);
}

TEST_CASE("a program with no records lowers to init/finalize only") {
  KernelProgram p;
  p.name = "k";
  p.num_warp_groups = 1;
  p.shared_mem_capacity = 1024;
  p.warp_group_bodies.resize(1);
  p.warp_group_bodies[0] = {Instruction::sync_compute("cuda", 10)};
  auto dp = lower(p, LoweringConfig{});
  REQUIRE(dp.bodies[0].size() == 3);
  REQUIRE(dp.bodies[0][0].op == DeviceOpKind::Init);
  REQUIRE(dp.bodies[0][1].op == DeviceOpKind::Base);
  REQUIRE(dp.bodies[0][2].op == DeviceOpKind::Finalize);
}

TEST_CASE("non-profiling instruction order is preserved exactly") {
  testgen::Rng rng(0x10AB);
  for (int i = 0; i < 50; ++i) {
    auto p = testgen::random_program(rng, true, 2);
    LoweringConfig cfg;
    cfg.buffer_slots_total = 0; // auto
    auto dp = lower(p, cfg);
    for (std::uint32_t wg = 0; wg < p.num_warp_groups; ++wg) {
      std::vector<Instruction> expected;
      for (const auto& ins : p.warp_group_bodies[wg])
        if (ins.kind != InstrKind::Record)
          expected.push_back(ins);
      std::vector<Instruction> actual;
      std::size_t reads = 0, stores = 0, records = 0;
      for (const auto& d : dp.bodies[wg]) {
        if (d.op == DeviceOpKind::Base)
          actual.push_back(d.base);
        reads += d.op == DeviceOpKind::ReadCounter;
        stores += d.op == DeviceOpKind::StoreCounter;
      }
      for (const auto& ins : p.warp_group_bodies[wg])
        records += ins.kind == InstrKind::Record;
      REQUIRE(actual == expected);
      REQUIRE(reads == records);
      REQUIRE(stores == records);
    }
  }
}

TEST_CASE("flush sizing: 4 regions x 512 iterations x 2 warp groups") {
  auto plan = plan_slots(4, {512}, 2, BufferStrategy::Flush, 1 << 20);
  REQUIRE(plan.slots_per_warp_group * 2 == 4096);
  // The full requirement is 4096 slots; a smaller capacity is rejected.
  REQUIRE_THROWS_AS(plan_slots(4, {512}, 2, BufferStrategy::Flush, 16384),
                    Error);
}

TEST_CASE("circular sizing: 1024 bytes, one warp group, 128 slots") {
  auto plan = plan_slots(1, {}, 1, BufferStrategy::Circular, 1024);
  REQUIRE(plan.slots_per_warp_group == 128);
}

TEST_CASE("circular sizing rounds down to a power of two: 125 -> 64") {
  auto plan = plan_slots(1, {}, 1, BufferStrategy::Circular, 1000);
  REQUIRE(plan.slots_per_warp_group == 64);
}

TEST_CASE("lowering rejects plans exceeding shared memory") {
  auto p = instrumented_two_wg(); // smem = 4096
  LoweringConfig cfg;
  cfg.buffer_slots_total = 1024; // 8 KB > 4 KB
  REQUIRE_THROWS_AS(lower(p, cfg), Error);
}

TEST_CASE("slots not divisible by the warp group count are rejected") {
  auto p = instrumented_two_wg();
  LoweringConfig cfg;
  cfg.buffer_slots_total = 33;
  REQUIRE_THROWS_WITH(lower(p, cfg),
                      Catch::Matchers::ContainsSubstring("divisible"));
}

TEST_CASE("strip removes profiling ops, keeps order, and is idempotent") {
  auto p = instrumented_two_wg();
  LoweringConfig cfg;
  cfg.buffer_slots_total = 64;
  auto dp = lower(p, cfg);
  auto stripped = strip_profiling(dp);
  REQUIRE(count_ops(stripped, DeviceOpKind::ReadCounter) == 0);
  REQUIRE(count_ops(stripped, DeviceOpKind::StoreCounter) == 0);
  REQUIRE(count_ops(stripped, DeviceOpKind::Init) == 0);
  REQUIRE(count_ops(stripped, DeviceOpKind::Finalize) == 0);
  REQUIRE(stripped.bodies[0].size() == 1);
  REQUIRE(strip_profiling(stripped) == stripped);
}

TEST_CASE("device program text round-trips") {
  testgen::Rng rng(0xD0);
  for (int i = 0; i < 50; ++i) {
    auto p = testgen::random_program(rng, true, 2);
    auto dp = lower(p, LoweringConfig{});
    auto parsed = parse_device_program(print_device_program(dp));
    REQUIRE(parsed.bodies == dp.bodies);
    REQUIRE(parsed.plan == dp.plan);
    REQUIRE(parsed.barriers == dp.barriers);
    REQUIRE(parsed.name == dp.name);
  }
}

TEST_CASE("lower validates record pairing first") {
  KernelProgram p;
  p.name = "k";
  p.num_warp_groups = 1;
  p.shared_mem_capacity = 1024;
  p.warp_group_bodies.resize(1);
  p.warp_group_bodies[0] = {Instruction::record("X", true)};
  REQUIRE_THROWS_AS(lower(p, LoweringConfig{}), Error);
}
