#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "wgprof/error.hpp"
#include "wgprof/lower.hpp"

// Profile record and trace image layout.
//
//   record (8 bytes, little endian)
//   +--------------------------------+--------------------------------+
//   |              tag               |            payload             |
//   | [31] start flag                | 32-bit clock value             |
//   | [30..12] region id (19 bits)   |                                |
//   | [11..0] signature (12 bits)    |                                |
//   +--------------------------------+--------------------------------+
//
//   image = "KPFT" magic, u16 version, u16 stream count, then per stream:
//   u32 block index, u32 warp group, u32 record count (total writes,
//   may exceed the slot capacity under the circular strategy), u32 slot
//   capacity, followed by slot_capacity raw records in buffer order.

namespace wgprof {

inline constexpr std::uint32_t kStartFlag = 0x80000000u;
inline constexpr std::uint32_t kSignatureMask = 0xFFFu;
inline constexpr std::uint16_t kTraceVersion = 1;
inline constexpr char kTraceMagic[4] = {'K', 'P', 'F', 'T'};

struct Signature {
  std::uint8_t wave_slot_id = 0; // 5 bits
  std::uint8_t simd_id = 0;      // 4 bits
  std::uint8_t pipe_id = 0;      // 3 bits

  std::uint16_t packed() const {
    return static_cast<std::uint16_t>((wave_slot_id & 0x1F) |
                                      ((simd_id & 0xF) << 5) |
                                      ((pipe_id & 0x7) << 9));
  }
  static Signature unpack(std::uint16_t bits) {
    Signature s;
    s.wave_slot_id = bits & 0x1F;
    s.simd_id = (bits >> 5) & 0xF;
    s.pipe_id = (bits >> 9) & 0x7;
    return s;
  }

  bool operator==(const Signature&) const = default;
};

struct ProfileRecord {
  std::uint32_t tag = 0;
  std::uint32_t payload = 0;

  bool is_start() const { return (tag & kStartFlag) != 0; }
  std::uint32_t region_id() const { return (tag >> 12) & (kMaxRegions - 1); }
  std::uint16_t signature() const {
    return static_cast<std::uint16_t>(tag & kSignatureMask);
  }

  static ProfileRecord make(bool is_start, std::uint32_t region,
                            std::uint16_t signature, std::uint32_t clock) {
    if (region >= kMaxRegions)
      throw Error(ErrorKind::Trace, "region id " + std::to_string(region) +
                                        " overflows the 19-bit tag field");
    ProfileRecord r;
    r.tag = (is_start ? kStartFlag : 0u) | (region << 12) |
            (signature & kSignatureMask);
    r.payload = clock;
    return r;
  }

  bool operator==(const ProfileRecord&) const = default;
};

inline std::array<std::uint8_t, 8> encode_record(const ProfileRecord& r) {
  std::array<std::uint8_t, 8> out{};
  for (int i = 0; i < 4; ++i)
    out[i] = static_cast<std::uint8_t>((r.tag >> (8 * i)) & 0xFF);
  for (int i = 0; i < 4; ++i)
    out[4 + i] = static_cast<std::uint8_t>((r.payload >> (8 * i)) & 0xFF);
  return out;
}

inline ProfileRecord decode_record(const std::uint8_t* bytes) {
  ProfileRecord r;
  for (int i = 0; i < 4; ++i)
    r.tag |= static_cast<std::uint32_t>(bytes[i]) << (8 * i);
  for (int i = 0; i < 4; ++i)
    r.payload |= static_cast<std::uint32_t>(bytes[4 + i]) << (8 * i);
  return r;
}

// ---------------------------------------------------------------------------
// Global trace image.
// ---------------------------------------------------------------------------

struct TraceStream {
  std::uint32_t block_index = 0;
  std::uint32_t warp_group = 0;
  std::uint32_t record_count = 0; // total writes issued
  std::uint32_t slot_capacity = 0;
  std::vector<ProfileRecord> slots; // raw buffer image, slot_capacity entries

  bool operator==(const TraceStream&) const = default;
};

struct GlobalTraceImage {
  std::vector<TraceStream> streams;

  bool operator==(const GlobalTraceImage&) const = default;
};

namespace detail {

inline void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(v & 0xFF);
  out.push_back((v >> 8) & 0xFF);
}
inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i)
    out.push_back((v >> (8 * i)) & 0xFF);
}

struct ByteReader {
  const std::vector<std::uint8_t>& bytes;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > bytes.size())
      throw Error(ErrorKind::Trace, "truncated trace image");
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = bytes[pos] | (bytes[pos + 1] << 8);
    pos += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(bytes[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
};

} // namespace detail

inline std::vector<std::uint8_t> serialize_image(const GlobalTraceImage& img) {
  std::vector<std::uint8_t> out;
  out.insert(out.end(), kTraceMagic, kTraceMagic + 4);
  detail::put_u16(out, kTraceVersion);
  if (img.streams.size() > 0xFFFF)
    throw Error(ErrorKind::Trace, "too many streams for the image header");
  detail::put_u16(out, static_cast<std::uint16_t>(img.streams.size()));
  for (const auto& s : img.streams) {
    if (s.slots.size() != s.slot_capacity)
      throw Error(ErrorKind::Trace, "stream slot count does not match its "
                                    "declared capacity");
    detail::put_u32(out, s.block_index);
    detail::put_u32(out, s.warp_group);
    detail::put_u32(out, s.record_count);
    detail::put_u32(out, s.slot_capacity);
    for (const auto& r : s.slots) {
      auto bytes = encode_record(r);
      out.insert(out.end(), bytes.begin(), bytes.end());
    }
  }
  return out;
}

inline GlobalTraceImage deserialize_image(const std::vector<std::uint8_t>& bytes) {
  detail::ByteReader rd{bytes};
  rd.need(4);
  if (!std::equal(kTraceMagic, kTraceMagic + 4, bytes.begin()))
    throw Error(ErrorKind::Trace, "bad magic: not a trace image");
  rd.pos = 4;
  std::uint16_t version = rd.u16();
  if (version != kTraceVersion)
    throw Error(ErrorKind::Trace,
                "unsupported trace version " + std::to_string(version));
  std::uint16_t count = rd.u16();
  GlobalTraceImage img;
  img.streams.resize(count);
  for (auto& s : img.streams) {
    s.block_index = rd.u32();
    s.warp_group = rd.u32();
    s.record_count = rd.u32();
    s.slot_capacity = rd.u32();
    rd.need(static_cast<std::size_t>(s.slot_capacity) * 8);
    s.slots.reserve(s.slot_capacity);
    for (std::uint32_t i = 0; i < s.slot_capacity; ++i) {
      s.slots.push_back(decode_record(&rd.bytes[rd.pos]));
      rd.pos += 8;
    }
  }
  if (rd.pos != bytes.size())
    throw Error(ErrorKind::Trace, "trailing bytes after trace image");
  return img;
}

// ---------------------------------------------------------------------------
// Decoding: raw buffer image -> chronological record streams.
// ---------------------------------------------------------------------------

struct DecodedStream {
  std::uint32_t block_index = 0;
  std::uint32_t warp_group = 0;
  std::uint32_t dropped_records = 0; // overwritten under the circular strategy
  std::vector<ProfileRecord> records; // chronological order
};

inline std::vector<DecodedStream> decode_image(const GlobalTraceImage& img,
                                               const BufferPlan& plan) {
  std::vector<DecodedStream> out;
  out.reserve(img.streams.size());
  for (const auto& s : img.streams) {
    if (s.slot_capacity != plan.slots_per_warp_group)
      throw Error(ErrorKind::Trace,
                  "stream capacity " + std::to_string(s.slot_capacity) +
                      " does not match the buffer plan (" +
                      std::to_string(plan.slots_per_warp_group) + ")");
    DecodedStream d;
    d.block_index = s.block_index;
    d.warp_group = s.warp_group;
    if (s.record_count <= s.slot_capacity) {
      d.records.assign(s.slots.begin(), s.slots.begin() + s.record_count);
    } else {
      if (plan.strategy == BufferStrategy::Flush)
        throw Error(ErrorKind::Trace,
                    "flush stream claims more records than slots");
      // Chronological order starts at the oldest surviving slot.
      d.dropped_records = s.record_count - s.slot_capacity;
      const std::uint32_t start = s.record_count % s.slot_capacity;
      d.records.reserve(s.slot_capacity);
      for (std::uint32_t i = 0; i < s.slot_capacity; ++i)
        d.records.push_back(s.slots[(start + i) % s.slot_capacity]);
    }
    out.push_back(std::move(d));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Clock unwrap: 32-bit captures -> monotone 64-bit cycles.
// ---------------------------------------------------------------------------

inline std::vector<std::uint64_t>
unwrap_clock(const std::vector<std::uint32_t>& values) {
  std::vector<std::uint64_t> out;
  out.reserve(values.size());
  std::uint64_t current = 0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i == 0) {
      current = values[0];
    } else {
      std::uint32_t gap = values[i] - values[i - 1]; // mod 2^32
      current += gap;
    }
    out.push_back(current);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pairing.
// ---------------------------------------------------------------------------

struct RawInterval {
  std::uint32_t region_id = 0;
  std::string label;
  std::uint32_t iteration = 0;
  std::uint64_t start = 0;
  std::uint64_t end = 0;
  std::size_t start_pos = 0; // positions in the chronological stream
  std::size_t end_pos = 0;
};

struct PairResult {
  std::vector<RawInterval> intervals;
  std::uint32_t dropped_heads = 0;   // END with no START (head truncation)
  std::uint32_t truncated_tails = 0; // START left open at stream end
};

inline PairResult pair_records(const std::vector<ProfileRecord>& stream,
                               const std::vector<std::string>& region_table) {
  std::vector<std::uint32_t> clocks;
  clocks.reserve(stream.size());
  for (const auto& r : stream)
    clocks.push_back(r.payload);
  const std::vector<std::uint64_t> unwrapped = unwrap_clock(clocks);

  auto label_of = [&region_table](std::uint32_t id) {
    if (id < region_table.size())
      return region_table[id];
    return "region#" + std::to_string(id);
  };

  PairResult out;
  struct Open {
    std::uint64_t clock;
    std::size_t pos;
  };
  std::map<std::uint32_t, std::vector<Open>> open; // per-region stack
  std::map<std::uint32_t, std::uint32_t> completed;
  for (std::size_t pos = 0; pos < stream.size(); ++pos) {
    const ProfileRecord& r = stream[pos];
    const std::uint32_t id = r.region_id();
    if (r.is_start()) {
      open[id].push_back({unwrapped[pos], pos});
    } else {
      auto& stack = open[id];
      if (stack.empty()) {
        ++out.dropped_heads;
        continue;
      }
      RawInterval iv;
      iv.region_id = id;
      iv.label = label_of(id);
      iv.start = stack.back().clock;
      iv.start_pos = stack.back().pos;
      iv.end = unwrapped[pos];
      iv.end_pos = pos;
      iv.iteration = completed[id]++;
      stack.pop_back();
      if (iv.end - iv.start >= (1ull << 32))
        throw Error(ErrorKind::Trace,
                    "interval \"" + iv.label +
                        "\" exceeds 2^32 cycles; the 32-bit clock cannot "
                        "represent it");
      out.intervals.push_back(std::move(iv));
    }
  }
  for (const auto& [id, stack] : open)
    out.truncated_tails += static_cast<std::uint32_t>(stack.size());
  return out;
}

// ---------------------------------------------------------------------------
// Replay correction.
// ---------------------------------------------------------------------------

enum class EventKind { Exec, Wait };

struct TimelineEvent {
  std::string region;
  std::uint32_t block_index = 0;
  std::uint32_t warp_group = 0;
  std::uint32_t iteration = 0;
  std::uint64_t start = 0;
  std::uint64_t end = 0;
  EventKind kind = EventKind::Exec;
  bool corrected = false;

  std::uint64_t duration() const { return end - start; }

  bool operator==(const TimelineEvent&) const = default;
};

struct ReplayResult {
  std::vector<TimelineEvent> events;
  std::uint32_t flagged_preconditions = 0;
  std::uint32_t malformed_groups = 0;
};

namespace detail {

inline bool is_wait_marker(const std::string& label) {
  const std::string suffix = kWaitSuffix;
  return label.size() > suffix.size() &&
         label.compare(label.size() - suffix.size(), suffix.size(), suffix) ==
             0;
}

} // namespace detail

// Rebuilds corrected timeline events from one stream's paired intervals.
//
// Synchronous intervals shrink by one record cost per counter read whose
// cost landed inside the measured window: the interval's own start record
// plus every record strictly between the two boundary reads.
//
// For an async group (interval L with the marker L.wait opening right after
// its end record) the wait duration is CLK2 - CLK1: marker start minus base
// end. The record overhead cancels because both reads happen before their
// own cost is charged. Groups whose wait collapses to at most one record
// cost violate the replay precondition and are flagged rather than
// corrected.
inline ReplayResult replay(const PairResult& pairs, std::uint32_t block_index,
                           std::uint32_t warp_group,
                           std::uint64_t record_cost) {
  ReplayResult out;

  // Marker lookup by stream position: in the canonical pattern the marker's
  // start record immediately follows the base interval's end record.
  std::map<std::size_t, std::size_t> marker_at;
  for (std::size_t i = 0; i < pairs.intervals.size(); ++i) {
    const auto& iv = pairs.intervals[i];
    if (detail::is_wait_marker(iv.label))
      marker_at[iv.start_pos] = i;
  }

  std::vector<bool> consumed(pairs.intervals.size(), false);

  auto corrected_sync = [record_cost](const RawInterval& iv) {
    const std::uint64_t inside = iv.end_pos - iv.start_pos; // own start + enclosed
    const std::uint64_t overhead = record_cost * inside;
    const std::uint64_t measured = iv.end - iv.start;
    return measured >= overhead ? measured - overhead : 0;
  };

  for (std::size_t i = 0; i < pairs.intervals.size(); ++i) {
    const auto& iv = pairs.intervals[i];
    if (consumed[i])
      continue;
    if (detail::is_wait_marker(iv.label))
      continue; // handled with its base interval (or reported after)

    TimelineEvent ev;
    ev.region = iv.label;
    ev.block_index = block_index;
    ev.warp_group = warp_group;
    ev.iteration = iv.iteration;
    ev.start = iv.start;
    ev.kind = EventKind::Exec;
    ev.end = iv.start + corrected_sync(iv);
    ev.corrected = true;
    out.events.push_back(ev);
    consumed[i] = true;

    auto mit = marker_at.find(iv.end_pos + 1);
    if (mit == marker_at.end() ||
        pairs.intervals[mit->second].label != iv.label + kWaitSuffix)
      continue;
    const RawInterval& marker = pairs.intervals[mit->second];
    consumed[mit->second] = true;

    TimelineEvent wait;
    wait.region = marker.label;
    wait.block_index = block_index;
    wait.warp_group = warp_group;
    wait.iteration = iv.iteration;
    wait.start = iv.end;     // CLK1: end read before the wait
    wait.end = marker.start; // CLK2: start read after the wait
    wait.kind = EventKind::Wait;
    if (wait.end < wait.start) {
      ++out.malformed_groups;
      continue;
    }
    if (wait.duration() <= record_cost) {
      // T_MMA - T_exe > T_a + T_b does not hold; report raw.
      wait.corrected = false;
      ++out.flagged_preconditions;
    } else {
      wait.corrected = true;
    }
    out.events.push_back(wait);
  }

  // Orphan wait markers (base interval missing): report uncorrected.
  for (std::size_t i = 0; i < pairs.intervals.size(); ++i) {
    if (consumed[i] || !detail::is_wait_marker(pairs.intervals[i].label))
      continue;
    const auto& iv = pairs.intervals[i];
    TimelineEvent ev;
    ev.region = iv.label;
    ev.block_index = block_index;
    ev.warp_group = warp_group;
    ev.iteration = iv.iteration;
    ev.start = iv.start;
    ev.end = iv.end;
    ev.kind = EventKind::Exec;
    ev.corrected = false;
    out.events.push_back(ev);
    ++out.malformed_groups;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Chrome Trace export.
// ---------------------------------------------------------------------------

inline std::string export_chrome_trace(const std::vector<TimelineEvent>& events,
                                       double cycles_per_us = 1000.0) {
  nlohmann::ordered_json root;
  root["traceEvents"] = nlohmann::ordered_json::array();
  for (const auto& ev : events) {
    nlohmann::ordered_json e;
    e["name"] = ev.region;
    e["ph"] = "X";
    e["pid"] = ev.block_index;
    e["tid"] = ev.warp_group;
    e["ts"] = static_cast<double>(ev.start) / cycles_per_us;
    e["dur"] = static_cast<double>(ev.duration()) / cycles_per_us;
    e["args"] = {{"iteration", ev.iteration},
                 {"kind", ev.kind == EventKind::Wait ? "wait" : "exec"},
                 {"corrected", ev.corrected}};
    root["traceEvents"].push_back(std::move(e));
  }
  return root.dump(2) + "\n";
}

} // namespace wgprof
