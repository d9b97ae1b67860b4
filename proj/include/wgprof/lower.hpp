#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "wgprof/instrument.hpp"
#include "wgprof/ir.hpp"

// Lowering of record markers to device-level counter operations.
//
// Each record becomes a ReadCounter (captures the cycle counter into a
// register) followed by a StoreCounter (writes tag+payload into the next
// profiling slot). One Init at each body entry allocates the slot index, one
// Finalize at each body exit writes the warp group buffer plus metadata back
// to the global trace image.
//
// Textual form extends the kernel grammar:
//
//   device kernel <name> wgs=<n> smem=<b> strategy=<circular|flush>
//       slots_per_wg=<s> signature=<0|1>
//   region <id> "<label>"
//   barrier <name> arrivals=<n>
//   wg0 {
//     init
//     read_counter -> r0
//     store_counter r0 region=0 start
//     finalize
//   }

namespace wgprof {

inline constexpr std::uint32_t kRegionIdBits = 19;
inline constexpr std::uint32_t kMaxRegions = 1u << kRegionIdBits;
inline constexpr std::uint64_t kRecordBytes = 8;

enum class MetricType { Clock };
enum class Granularity { WarpGroup, Warp, Thread };
enum class BufferType { Shared, Stack, Global };
enum class BufferStrategy { Circular, Flush };

struct LoweringConfig {
  MetricType metric_type = MetricType::Clock;
  Granularity granularity = Granularity::WarpGroup;
  BufferType buffer_type = BufferType::Shared;
  BufferStrategy buffer_strategy = BufferStrategy::Circular;
  std::uint64_t buffer_slots_total = 0; // 0: size from the program
  bool signature_bits_enabled = false;
  bool iteration_signature = false; // stamp the loop index into the
                                    // signature bits when they are free

  bool operator==(const LoweringConfig&) const = default;
};

struct BufferPlan {
  std::uint64_t slots_per_warp_group = 0;
  BufferStrategy strategy = BufferStrategy::Circular;
  std::vector<std::string> region_labels; // region id -> label (dense)

  std::uint64_t base_offset(std::uint32_t wg) const {
    return wg * slots_per_warp_group * kRecordBytes;
  }
  std::optional<std::uint32_t> region_id(const std::string& label) const {
    for (std::uint32_t i = 0; i < region_labels.size(); ++i)
      if (region_labels[i] == label)
        return i;
    return std::nullopt;
  }

  bool operator==(const BufferPlan&) const = default;
};

enum class DeviceOpKind {
  Base, // a carried-over kernel instruction
  Init,
  ReadCounter,
  StoreCounter,
  Finalize,
};

struct DeviceInstr {
  DeviceOpKind op = DeviceOpKind::Base;
  Instruction base;            // valid when op == Base
  std::uint32_t reg = 0;       // ReadCounter / StoreCounter
  std::uint32_t region_id = 0; // StoreCounter
  bool is_start = false;       // StoreCounter

  bool operator==(const DeviceInstr&) const = default;

  static DeviceInstr wrap(Instruction ins) {
    DeviceInstr d;
    d.base = std::move(ins);
    return d;
  }
  static DeviceInstr init() {
    DeviceInstr d;
    d.op = DeviceOpKind::Init;
    return d;
  }
  static DeviceInstr read_counter(std::uint32_t reg) {
    DeviceInstr d;
    d.op = DeviceOpKind::ReadCounter;
    d.reg = reg;
    return d;
  }
  static DeviceInstr store_counter(std::uint32_t reg, std::uint32_t region,
                                   bool is_start) {
    DeviceInstr d;
    d.op = DeviceOpKind::StoreCounter;
    d.reg = reg;
    d.region_id = region;
    d.is_start = is_start;
    return d;
  }
  static DeviceInstr finalize() {
    DeviceInstr d;
    d.op = DeviceOpKind::Finalize;
    return d;
  }
};

struct DeviceProgram {
  std::string name;
  std::uint32_t num_warp_groups = 1;
  std::uint64_t shared_mem_capacity = 0;
  std::vector<BarrierDecl> barriers;
  std::vector<std::vector<DeviceInstr>> bodies;
  BufferPlan plan;
  LoweringConfig config;

  bool operator==(const DeviceProgram&) const = default;
};

// ---------------------------------------------------------------------------
// Slot planning.
// ---------------------------------------------------------------------------

namespace detail {

inline std::uint64_t pow2_floor(std::uint64_t v) {
  std::uint64_t p = 1;
  while (p * 2 <= v)
    p *= 2;
  return p;
}

} // namespace detail

// Sizes the profiling buffer without a concrete program: `trip_counts` are
// the loop trips covering the records (product for nested loops), regions
// are assumed evenly spread over the warp groups.
inline BufferPlan plan_slots(std::uint32_t num_regions,
                             const std::vector<std::uint64_t>& trip_counts,
                             std::uint32_t num_warp_groups,
                             BufferStrategy strategy,
                             std::uint64_t capacity_bytes) {
  if (num_regions == 0 || num_warp_groups == 0)
    throw Error(ErrorKind::Lower, "plan_slots: inputs must be positive");
  std::uint64_t iters = 1;
  for (std::uint64_t t : trip_counts)
    iters *= t == 0 ? 1 : t;

  BufferPlan plan;
  plan.strategy = strategy;
  if (strategy == BufferStrategy::Flush) {
    // Two records (start + end) per region per iteration.
    const std::uint64_t total = 2ull * num_regions * iters;
    std::uint64_t per_wg = (total + num_warp_groups - 1) / num_warp_groups;
    if (per_wg == 0)
      per_wg = 1;
    if (per_wg * num_warp_groups * kRecordBytes > capacity_bytes)
      throw Error(ErrorKind::Capacity,
                  "flush sizing needs " +
                      std::to_string(per_wg * num_warp_groups * kRecordBytes) +
                      " bytes, capacity is " + std::to_string(capacity_bytes));
    plan.slots_per_warp_group = per_wg;
  } else {
    const std::uint64_t slots = capacity_bytes / (kRecordBytes * num_warp_groups);
    if (slots == 0)
      throw Error(ErrorKind::Capacity,
                  "circular sizing: capacity too small for one slot per warp "
                  "group");
    plan.slots_per_warp_group = detail::pow2_floor(slots);
  }
  return plan;
}

// ---------------------------------------------------------------------------
// lower / strip.
// ---------------------------------------------------------------------------

namespace detail {

// Static record count of one body (records inside loops multiply by trips).
inline std::uint64_t dynamic_record_count(const InstructionBlock& body) {
  std::uint64_t count = 0;
  std::vector<std::uint64_t> scale{1};
  for (const auto& ins : body) {
    switch (ins.kind) {
    case InstrKind::LoopBegin:
      scale.push_back(scale.back() * ins.trip_count);
      break;
    case InstrKind::LoopEnd:
      scale.pop_back();
      break;
    case InstrKind::Record:
      count += scale.back();
      break;
    default:
      break;
    }
  }
  return count;
}

} // namespace detail

inline DeviceProgram lower(const KernelProgram& p, const LoweringConfig& cfg) {
  validate(p);
  validate_record_pairing(p);
  if (cfg.iteration_signature && cfg.signature_bits_enabled)
    throw Error(ErrorKind::Lower,
                "iteration_signature needs the signature bits free");

  DeviceProgram dp;
  dp.name = p.name;
  dp.num_warp_groups = p.num_warp_groups;
  dp.shared_mem_capacity = p.shared_mem_capacity;
  dp.barriers = p.barriers;
  dp.config = cfg;

  // Dense region ids in first-appearance order.
  std::map<std::string, std::uint32_t> ids;
  for (const auto& body : p.warp_group_bodies)
    for (const auto& ins : body)
      if (ins.kind == InstrKind::Record && !ids.count(ins.label)) {
        if (ids.size() >= kMaxRegions)
          throw Error(ErrorKind::Lower,
                      "more than 2^19 distinct regions cannot be tagged");
        std::uint32_t id = static_cast<std::uint32_t>(ids.size());
        ids.emplace(ins.label, id);
        dp.plan.region_labels.push_back(ins.label);
      }

  // Buffer plan.
  dp.plan.strategy = cfg.buffer_strategy;
  std::uint64_t slots_total = cfg.buffer_slots_total;
  if (slots_total == 0) {
    if (cfg.buffer_strategy == BufferStrategy::Flush) {
      std::uint64_t per_wg = 1;
      for (const auto& body : p.warp_group_bodies)
        per_wg = std::max(per_wg, detail::dynamic_record_count(body));
      dp.plan.slots_per_warp_group = per_wg;
    } else {
      dp.plan.slots_per_warp_group =
          plan_slots(std::max<std::uint32_t>(1, (std::uint32_t)ids.size()), {},
                     p.num_warp_groups, BufferStrategy::Circular,
                     p.shared_mem_capacity)
              .slots_per_warp_group;
    }
  } else {
    if (slots_total % p.num_warp_groups != 0)
      throw Error(ErrorKind::Lower,
                  "buffer_slots_total (" + std::to_string(slots_total) +
                      ") is not divisible by the warp group count (" +
                      std::to_string(p.num_warp_groups) + ")");
    dp.plan.slots_per_warp_group = slots_total / p.num_warp_groups;
  }
  if (cfg.buffer_type == BufferType::Shared) {
    const std::uint64_t bytes =
        dp.plan.slots_per_warp_group * p.num_warp_groups * kRecordBytes;
    if (bytes > p.shared_mem_capacity)
      throw Error(ErrorKind::Capacity,
                  "profiling buffer needs " + std::to_string(bytes) +
                      " bytes of shared memory, capacity is " +
                      std::to_string(p.shared_mem_capacity));
  }

  // Body transform: Record -> ReadCounter + StoreCounter, Init/Finalize at
  // entry/exit. Registers are numbered per static record within a body.
  dp.bodies.resize(p.num_warp_groups);
  for (std::uint32_t wg = 0; wg < p.num_warp_groups; ++wg) {
    auto& out = dp.bodies[wg];
    out.push_back(DeviceInstr::init());
    std::uint32_t next_reg = 0;
    for (const auto& ins : p.warp_group_bodies[wg]) {
      if (ins.kind == InstrKind::Record) {
        const std::uint32_t reg = next_reg++;
        out.push_back(DeviceInstr::read_counter(reg));
        out.push_back(
            DeviceInstr::store_counter(reg, ids.at(ins.label), ins.is_start));
      } else {
        out.push_back(DeviceInstr::wrap(ins));
      }
    }
    out.push_back(DeviceInstr::finalize());
  }
  return dp;
}

inline DeviceProgram strip_profiling(const DeviceProgram& dp) {
  DeviceProgram out = dp;
  for (auto& body : out.bodies) {
    std::vector<DeviceInstr> kept;
    kept.reserve(body.size());
    for (auto& d : body)
      if (d.op == DeviceOpKind::Base)
        kept.push_back(std::move(d));
    body = std::move(kept);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Device program text.
// ---------------------------------------------------------------------------

inline std::string print_device_program(const DeviceProgram& dp) {
  std::ostringstream os;
  os << "device kernel " << dp.name << " wgs=" << dp.num_warp_groups
     << " smem=" << dp.shared_mem_capacity << " strategy="
     << (dp.plan.strategy == BufferStrategy::Circular ? "circular" : "flush")
     << " slots_per_wg=" << dp.plan.slots_per_warp_group
     << " signature=" << (dp.config.signature_bits_enabled ? 1 : 0)
     << " iter_sig=" << (dp.config.iteration_signature ? 1 : 0) << " {\n";
  for (std::uint32_t i = 0; i < dp.plan.region_labels.size(); ++i)
    os << "  region " << i << " " << detail::quote(dp.plan.region_labels[i])
       << "\n";
  for (const auto& b : dp.barriers)
    os << "  barrier " << b.name << " arrivals=" << b.expected_arrivals
       << "\n";
  for (std::uint32_t wg = 0; wg < dp.num_warp_groups; ++wg) {
    os << "  wg" << wg << " {\n";
    int depth = 2;
    for (const auto& d : dp.bodies[wg]) {
      auto indent = [&os](int n) {
        for (int i = 0; i < n; ++i)
          os << "  ";
      };
      switch (d.op) {
      case DeviceOpKind::Base:
        detail::print_instruction(os, d.base, depth);
        break;
      case DeviceOpKind::Init:
        indent(depth);
        os << "init\n";
        break;
      case DeviceOpKind::ReadCounter:
        indent(depth);
        os << "read_counter -> r" << d.reg << "\n";
        break;
      case DeviceOpKind::StoreCounter:
        indent(depth);
        os << "store_counter r" << d.reg << " region=" << d.region_id << " "
           << (d.is_start ? "start" : "end") << "\n";
        break;
      case DeviceOpKind::Finalize:
        indent(depth);
        os << "finalize\n";
        break;
      }
    }
    os << "  }\n";
  }
  os << "}\n";
  return os.str();
}

namespace detail {

inline void parse_device_body(Lexer& lx, std::vector<DeviceInstr>& out) {
  for (;;) {
    Token t = lx.peek();
    if (t.kind == TokKind::RBrace) {
      lx.next();
      return;
    }
    if (t.kind == TokKind::Eof)
      lx.fail(t, "unexpected end of input inside a block");
    if (t.kind != TokKind::Ident)
      lx.fail(t, "expected an instruction");

    if (t.text == "init") {
      lx.next();
      out.push_back(DeviceInstr::init());
    } else if (t.text == "read_counter") {
      lx.next();
      expect(lx, TokKind::Arrow, "'->'");
      Token r = expect(lx, TokKind::Ident, "register");
      if (r.text.size() < 2 || r.text[0] != 'r')
        lx.fail(r, "expected register r<k>");
      out.push_back(DeviceInstr::read_counter(
          static_cast<std::uint32_t>(std::stoul(r.text.substr(1)))));
    } else if (t.text == "store_counter") {
      lx.next();
      Token r = expect(lx, TokKind::Ident, "register");
      if (r.text.size() < 2 || r.text[0] != 'r')
        lx.fail(r, "expected register r<k>");
      std::uint32_t region =
          static_cast<std::uint32_t>(expect_attr_number(lx, "region"));
      Token se = expect(lx, TokKind::Ident, "'start' or 'end'");
      if (se.text != "start" && se.text != "end")
        lx.fail(se, "expected 'start' or 'end'");
      out.push_back(DeviceInstr::store_counter(
          static_cast<std::uint32_t>(std::stoul(r.text.substr(1))), region,
          se.text == "start"));
    } else if (t.text == "finalize") {
      lx.next();
      out.push_back(DeviceInstr::finalize());
    } else if (t.text == "for") {
      lx.next();
      Token trips = expect(lx, TokKind::Number, "loop trip count");
      Attrs attrs = parse_attrs(lx);
      expect(lx, TokKind::LBrace, "'{'");
      Instruction begin = Instruction::loop_begin(
          trips.number, attr_string_or_empty(attrs, "label"));
      out.push_back(DeviceInstr::wrap(begin));
      parse_device_body(lx, out);
      out.push_back(DeviceInstr::wrap(Instruction::loop_end()));
    } else {
      // Defer to the kernel-IR instruction parser for base instructions.
      InstructionBlock block;
      // parse_body consumes through the closing brace; parse one instruction
      // by re-dispatching on the keyword here instead.
      Token kw = lx.next();
      if (kw.text == "compute" || kw.text == "async_launch" ||
          kw.text == "async_wait" || kw.text == "arrive" || kw.text == "wait" ||
          kw.text == "record") {
        if (kw.text == "compute") {
          Attrs attrs = parse_attrs(lx);
          Instruction ins;
          ins.kind = InstrKind::SyncCompute;
          ins.unit = attr_ident(lx, attrs, kw, "unit", "compute");
          ins.latency = attr_number_opt(lx, attrs, "latency");
          ins.label = attr_string_or_empty(attrs, "label");
          out.push_back(DeviceInstr::wrap(std::move(ins)));
        } else if (kw.text == "async_launch") {
          Attrs attrs = parse_attrs(lx);
          Instruction ins;
          ins.kind = InstrKind::AsyncLaunch;
          ins.unit = attr_ident(lx, attrs, kw, "unit", "async_launch");
          ins.token = attr_ident(lx, attrs, kw, "token", "async_launch");
          ins.latency = attr_number_opt(lx, attrs, "latency");
          ins.label = attr_string_or_empty(attrs, "label");
          out.push_back(DeviceInstr::wrap(std::move(ins)));
        } else if (kw.text == "async_wait") {
          Attrs attrs = parse_attrs(lx);
          Instruction ins;
          ins.kind = InstrKind::AsyncWait;
          ins.token = attr_ident(lx, attrs, kw, "token", "async_wait");
          out.push_back(DeviceInstr::wrap(std::move(ins)));
        } else if (kw.text == "arrive" || kw.text == "wait") {
          Token name = expect(lx, TokKind::Ident, "barrier name");
          Instruction ins;
          ins.kind = kw.text == "arrive" ? InstrKind::BarrierArrive
                                         : InstrKind::BarrierWait;
          ins.barrier = name.text;
          out.push_back(DeviceInstr::wrap(std::move(ins)));
        } else { // record
          Token se = expect(lx, TokKind::Ident, "'start' or 'end'");
          Token region = expect(lx, TokKind::String, "quoted region name");
          out.push_back(DeviceInstr::wrap(
              Instruction::record(region.text, se.text == "start")));
        }
      } else {
        lx.fail(kw, "unknown instruction '" + kw.text + "'");
      }
    }
  }
}

} // namespace detail

inline DeviceProgram parse_device_program(std::string_view text) {
  using namespace detail;
  Lexer lx(text);
  Token kw = expect(lx, TokKind::Ident, "'device'");
  if (kw.text != "device")
    lx.fail(kw, "expected 'device'");
  kw = expect(lx, TokKind::Ident, "'kernel'");
  if (kw.text != "kernel")
    lx.fail(kw, "expected 'kernel'");

  DeviceProgram dp;
  dp.name = expect(lx, TokKind::Ident, "kernel name").text;
  dp.num_warp_groups = static_cast<std::uint32_t>(expect_attr_number(lx, "wgs"));
  dp.shared_mem_capacity = expect_attr_number(lx, "smem");
  {
    Token key = expect(lx, TokKind::Ident, "'strategy'");
    if (key.text != "strategy")
      lx.fail(key, "expected 'strategy'");
    expect(lx, TokKind::Equals, "'='");
    Token v = expect(lx, TokKind::Ident, "strategy value");
    if (v.text == "circular")
      dp.plan.strategy = BufferStrategy::Circular;
    else if (v.text == "flush")
      dp.plan.strategy = BufferStrategy::Flush;
    else
      lx.fail(v, "strategy must be circular or flush");
    dp.config.buffer_strategy = dp.plan.strategy;
  }
  dp.plan.slots_per_warp_group = expect_attr_number(lx, "slots_per_wg");
  dp.config.buffer_slots_total =
      dp.plan.slots_per_warp_group * dp.num_warp_groups;
  dp.config.signature_bits_enabled = expect_attr_number(lx, "signature") != 0;
  dp.config.iteration_signature = expect_attr_number(lx, "iter_sig") != 0;
  expect(lx, TokKind::LBrace, "'{'");

  dp.bodies.resize(dp.num_warp_groups);
  std::uint32_t next_wg = 0;
  for (;;) {
    Token t = lx.peek();
    if (t.kind == TokKind::RBrace) {
      lx.next();
      break;
    }
    if (t.kind == TokKind::Eof)
      lx.fail(t, "unexpected end of input inside device kernel");
    t = lx.next();
    if (t.kind != TokKind::Ident)
      lx.fail(t, "expected 'region', 'barrier' or a wg block");
    if (t.text == "region") {
      Token id = expect(lx, TokKind::Number, "region id");
      Token label = expect(lx, TokKind::String, "region label");
      if (id.number != dp.plan.region_labels.size())
        lx.fail(id, "region ids must be dense and ascending");
      dp.plan.region_labels.push_back(label.text);
    } else if (t.text == "barrier") {
      BarrierDecl b;
      b.name = expect(lx, TokKind::Ident, "barrier name").text;
      b.expected_arrivals =
          static_cast<std::uint32_t>(expect_attr_number(lx, "arrivals"));
      dp.barriers.push_back(std::move(b));
    } else if (t.text.size() > 2 && t.text.compare(0, 2, "wg") == 0) {
      std::uint32_t idx =
          static_cast<std::uint32_t>(std::stoul(t.text.substr(2)));
      if (idx >= dp.num_warp_groups || idx != next_wg)
        lx.fail(t, "warp group blocks must appear as wg0..wgN-1 in order");
      ++next_wg;
      expect(lx, TokKind::LBrace, "'{'");
      parse_device_body(lx, dp.bodies[idx]);
    } else {
      lx.fail(t, "expected 'region', 'barrier' or a wg block");
    }
  }
  if (next_wg != dp.num_warp_groups)
    throw Error(ErrorKind::Parse, "device kernel is missing warp group bodies");
  return dp;
}

} // namespace wgprof
