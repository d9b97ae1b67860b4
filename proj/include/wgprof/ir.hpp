#pragma once

#include <cctype>
#include <cstdint>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "wgprof/error.hpp"

// Textual kernel IR.
//
//   kernel <name> wgs=<n> smem=<bytes> {
//     barrier <name> arrivals=<n>
//     wg0 {
//       compute unit=cuda latency=120 label="Softmax"
//       async_launch unit=tma token=t0 latency=400 label="Load K"
//       async_wait token=t0
//       arrive b0
//       wait b0
//       for 512 label="main" {
//         record start "GEMM0"
//         record end "GEMM0"
//       }
//     }
//   }
//
// One warp group body per wg<i> block, i = 0..wgs-1, ascending. `#` starts a
// comment. The printer emits one canonical form; parse(print(p)) == p.

namespace wgprof {

enum class InstrKind {
  SyncCompute,
  AsyncLaunch,
  AsyncWait,
  BarrierArrive,
  BarrierWait,
  LoopBegin,
  LoopEnd,
  Record,
};

struct Instruction {
  InstrKind kind{};
  std::string unit;                     // SyncCompute / AsyncLaunch
  std::optional<std::uint64_t> latency; // SyncCompute / AsyncLaunch
  std::string label;                    // region name; anchor label
  std::uint64_t trip_count = 0;         // LoopBegin
  std::string barrier;                  // BarrierArrive / BarrierWait
  std::string token;                    // AsyncLaunch / AsyncWait
  bool is_start = false;                // Record

  bool operator==(const Instruction&) const = default;

  static Instruction sync_compute(std::string unit, std::uint64_t latency,
                                  std::string label = {}) {
    Instruction i;
    i.kind = InstrKind::SyncCompute;
    i.unit = std::move(unit);
    i.latency = latency;
    i.label = std::move(label);
    return i;
  }
  static Instruction async_launch(std::string unit, std::string token,
                                  std::uint64_t latency,
                                  std::string label = {}) {
    Instruction i;
    i.kind = InstrKind::AsyncLaunch;
    i.unit = std::move(unit);
    i.token = std::move(token);
    i.latency = latency;
    i.label = std::move(label);
    return i;
  }
  static Instruction async_wait(std::string token) {
    Instruction i;
    i.kind = InstrKind::AsyncWait;
    i.token = std::move(token);
    return i;
  }
  static Instruction arrive(std::string barrier) {
    Instruction i;
    i.kind = InstrKind::BarrierArrive;
    i.barrier = std::move(barrier);
    return i;
  }
  static Instruction wait(std::string barrier) {
    Instruction i;
    i.kind = InstrKind::BarrierWait;
    i.barrier = std::move(barrier);
    return i;
  }
  static Instruction loop_begin(std::uint64_t trip_count,
                                std::string label = {}) {
    Instruction i;
    i.kind = InstrKind::LoopBegin;
    i.trip_count = trip_count;
    i.label = std::move(label);
    return i;
  }
  static Instruction loop_end() {
    Instruction i;
    i.kind = InstrKind::LoopEnd;
    return i;
  }
  static Instruction record(std::string region, bool is_start) {
    Instruction i;
    i.kind = InstrKind::Record;
    i.label = std::move(region);
    i.is_start = is_start;
    return i;
  }
};

using InstructionBlock = std::vector<Instruction>;

struct BarrierDecl {
  std::string name;
  std::uint32_t expected_arrivals = 1;

  bool operator==(const BarrierDecl&) const = default;
};

struct KernelProgram {
  std::string name;
  std::uint32_t num_warp_groups = 1;
  std::uint64_t shared_mem_capacity = 0;
  std::vector<BarrierDecl> barriers;
  std::vector<InstructionBlock> warp_group_bodies;

  bool operator==(const KernelProgram&) const = default;
};

// ---------------------------------------------------------------------------
// Lexing (shared with the device-program grammar in lower.hpp).
// ---------------------------------------------------------------------------

namespace detail {

enum class TokKind { Ident, Number, String, LBrace, RBrace, Equals, Arrow, Eof };

struct Token {
  TokKind kind = TokKind::Eof;
  std::string text;
  std::uint64_t number = 0;
  int line = 0;
  int col = 0;
};

class Lexer {
public:
  explicit Lexer(std::string_view src) : src_(src) { advance(); }

  const Token& peek() const { return tok_; }

  Token next() {
    Token t = tok_;
    advance();
    return t;
  }

  [[noreturn]] void fail(const Token& at, const std::string& msg) const {
    std::ostringstream os;
    os << at.line << ":" << at.col << ": " << msg;
    throw Error(ErrorKind::Parse, os.str());
  }

private:
  void advance() {
    skip_ws();
    tok_ = Token{};
    tok_.line = line_;
    tok_.col = col_;
    if (pos_ >= src_.size()) {
      tok_.kind = TokKind::Eof;
      return;
    }
    char c = src_[pos_];
    if (c == '{') {
      tok_.kind = TokKind::LBrace;
      get();
      return;
    }
    if (c == '}') {
      tok_.kind = TokKind::RBrace;
      get();
      return;
    }
    if (c == '=') {
      tok_.kind = TokKind::Equals;
      get();
      return;
    }
    if (c == '-' && pos_ + 1 < src_.size() && src_[pos_ + 1] == '>') {
      tok_.kind = TokKind::Arrow;
      get();
      get();
      return;
    }
    if (c == '"') {
      get();
      std::string s;
      while (pos_ < src_.size() && src_[pos_] != '"') {
        char d = src_[pos_];
        if (d == '\\' && pos_ + 1 < src_.size()) {
          get();
          d = src_[pos_] == 'n' ? '\n' : src_[pos_];
        } else if (d == '\n') {
          fail(tok_, "unterminated string literal");
        }
        s.push_back(d);
        get();
      }
      if (pos_ >= src_.size())
        fail(tok_, "unterminated string literal");
      get(); // closing quote
      tok_.kind = TokKind::String;
      tok_.text = std::move(s);
      return;
    }
    if (std::isdigit(static_cast<unsigned char>(c))) {
      std::uint64_t v = 0;
      std::string text;
      while (pos_ < src_.size() &&
             std::isdigit(static_cast<unsigned char>(src_[pos_]))) {
        v = v * 10 + static_cast<std::uint64_t>(src_[pos_] - '0');
        text.push_back(src_[pos_]);
        get();
      }
      tok_.kind = TokKind::Number;
      tok_.number = v;
      tok_.text = std::move(text);
      return;
    }
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      std::string s;
      while (pos_ < src_.size() &&
             (std::isalnum(static_cast<unsigned char>(src_[pos_])) ||
              src_[pos_] == '_' || src_[pos_] == '.')) {
        s.push_back(src_[pos_]);
        get();
      }
      tok_.kind = TokKind::Ident;
      tok_.text = std::move(s);
      return;
    }
    std::ostringstream os;
    os << "unexpected character '" << c << "'";
    fail(tok_, os.str());
  }

  void skip_ws() {
    while (pos_ < src_.size()) {
      char c = src_[pos_];
      if (c == '#') {
        while (pos_ < src_.size() && src_[pos_] != '\n')
          get();
      } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
        get();
      } else {
        break;
      }
    }
  }

  void get() {
    if (src_[pos_] == '\n') {
      ++line_;
      col_ = 1;
    } else {
      ++col_;
    }
    ++pos_;
  }

  std::string_view src_;
  std::size_t pos_ = 0;
  int line_ = 1;
  int col_ = 1;
  Token tok_;
};

inline std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '\n') {
      out += "\\n";
      continue;
    }
    if (c == '"' || c == '\\')
      out.push_back('\\');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

inline Token expect(Lexer& lx, TokKind kind, const char* what) {
  Token t = lx.next();
  if (t.kind != kind)
    lx.fail(t, std::string("expected ") + what);
  return t;
}

inline std::uint64_t expect_attr_number(Lexer& lx, const char* name) {
  Token key = expect(lx, TokKind::Ident, name);
  if (key.text != name)
    lx.fail(key, std::string("expected attribute '") + name + "'");
  expect(lx, TokKind::Equals, "'='");
  return expect(lx, TokKind::Number, "integer").number;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Validation.
// ---------------------------------------------------------------------------

[[noreturn]] inline void validation_error(const std::string& msg) {
  throw Error(ErrorKind::Validate, msg);
}

inline void validate(const KernelProgram& p) {
  if (p.num_warp_groups == 0)
    validation_error("kernel '" + p.name + "': wgs must be positive");
  if (p.warp_group_bodies.size() != p.num_warp_groups)
    validation_error("kernel '" + p.name + "': expected " +
                     std::to_string(p.num_warp_groups) +
                     " warp group bodies, found " +
                     std::to_string(p.warp_group_bodies.size()));

  std::set<std::string> barrier_names;
  for (const auto& b : p.barriers) {
    if (!barrier_names.insert(b.name).second)
      validation_error("duplicate barrier declaration '" + b.name + "'");
    if (b.expected_arrivals == 0)
      validation_error("barrier '" + b.name + "': arrivals must be positive");
    if (b.expected_arrivals > p.num_warp_groups)
      validation_error("barrier '" + b.name +
                       "': arrivals exceeds warp group count");
  }

  for (std::uint32_t wg = 0; wg < p.num_warp_groups; ++wg) {
    const auto& body = p.warp_group_bodies[wg];
    const std::string where = "wg" + std::to_string(wg);
    int depth = 0;
    std::set<std::string> launched;
    for (const auto& ins : body) {
      switch (ins.kind) {
      case InstrKind::SyncCompute:
        if (ins.latency && *ins.latency == 0)
          validation_error(where + ": compute latency must be positive");
        break;
      case InstrKind::AsyncLaunch:
        if (ins.latency && *ins.latency == 0)
          validation_error(where + ": async_launch latency must be positive");
        if (ins.token.empty())
          validation_error(where + ": async_launch requires a token");
        launched.insert(ins.token);
        break;
      case InstrKind::AsyncWait:
        if (!launched.count(ins.token))
          validation_error(where + ": async_wait on token '" + ins.token +
                           "' with no preceding async_launch (dangling token)");
        break;
      case InstrKind::BarrierArrive:
      case InstrKind::BarrierWait:
        if (!barrier_names.count(ins.barrier))
          validation_error(where + ": undeclared barrier '" + ins.barrier +
                           "'");
        break;
      case InstrKind::LoopBegin:
        if (ins.trip_count == 0)
          validation_error(where + ": loop trip count must be positive");
        ++depth;
        break;
      case InstrKind::LoopEnd:
        if (depth == 0)
          validation_error(where + ": unbalanced loop end (nesting error)");
        --depth;
        break;
      case InstrKind::Record:
        if (ins.label.empty())
          validation_error(where + ": record requires a region name");
        break;
      }
    }
    if (depth != 0)
      validation_error(where + ": unbalanced loop begin (nesting error)");
  }
}

// ---------------------------------------------------------------------------
// Parsing.
// ---------------------------------------------------------------------------

namespace detail {

// Attribute bag: `key=value` pairs until something that is not a `key=`.
struct Attrs {
  std::vector<std::pair<std::string, Token>> kv;

  const Token* find(const std::string& key) const {
    for (const auto& [k, v] : kv)
      if (k == key)
        return &v;
    return nullptr;
  }
};

inline Attrs parse_attrs(Lexer& lx) {
  Attrs attrs;
  while (lx.peek().kind == TokKind::Ident) {
    // Lookahead over "ident =" requires a copy; attribute keys are short.
    Lexer probe = lx;
    Token key = probe.next();
    if (probe.peek().kind != TokKind::Equals)
      break;
    lx.next(); // key
    lx.next(); // '='
    Token val = lx.next();
    if (val.kind != TokKind::Ident && val.kind != TokKind::Number &&
        val.kind != TokKind::String)
      lx.fail(val, "expected attribute value");
    attrs.kv.emplace_back(key.text, val);
  }
  return attrs;
}

inline std::uint64_t attr_number(Lexer& lx, const Attrs& attrs,
                                 const Token& at, const char* key,
                                 const char* ctx) {
  const Token* t = attrs.find(key);
  if (!t)
    lx.fail(at, std::string(ctx) + " requires attribute '" + key + "'");
  if (t->kind != TokKind::Number)
    lx.fail(*t, std::string("attribute '") + key + "' must be an integer");
  return t->number;
}

inline std::string attr_ident(Lexer& lx, const Attrs& attrs, const Token& at,
                              const char* key, const char* ctx) {
  const Token* t = attrs.find(key);
  if (!t)
    lx.fail(at, std::string(ctx) + " requires attribute '" + key + "'");
  if (t->kind != TokKind::Ident)
    lx.fail(*t, std::string("attribute '") + key + "' must be an identifier");
  return t->text;
}

inline std::string attr_string_or_empty(const Attrs& attrs, const char* key) {
  const Token* t = attrs.find(key);
  return t ? t->text : std::string{};
}

inline std::optional<std::uint64_t> attr_number_opt(Lexer& lx,
                                                    const Attrs& attrs,
                                                    const char* key) {
  const Token* t = attrs.find(key);
  if (!t)
    return std::nullopt;
  if (t->kind != TokKind::Number)
    lx.fail(*t, std::string("attribute '") + key + "' must be an integer");
  return t->number;
}

// Parses instructions until the closing brace of the current block.
inline void parse_body(Lexer& lx, InstructionBlock& out) {
  for (;;) {
    Token t = lx.peek();
    if (t.kind == TokKind::RBrace) {
      lx.next();
      return;
    }
    if (t.kind == TokKind::Eof)
      lx.fail(t, "unexpected end of input inside a block");
    t = lx.next();
    if (t.kind != TokKind::Ident)
      lx.fail(t, "expected an instruction");

    if (t.text == "compute") {
      Attrs attrs = parse_attrs(lx);
      Instruction ins;
      ins.kind = InstrKind::SyncCompute;
      ins.unit = attr_ident(lx, attrs, t, "unit", "compute");
      ins.latency = attr_number_opt(lx, attrs, "latency");
      ins.label = attr_string_or_empty(attrs, "label");
      out.push_back(std::move(ins));
    } else if (t.text == "async_launch") {
      Attrs attrs = parse_attrs(lx);
      Instruction ins;
      ins.kind = InstrKind::AsyncLaunch;
      ins.unit = attr_ident(lx, attrs, t, "unit", "async_launch");
      ins.token = attr_ident(lx, attrs, t, "token", "async_launch");
      ins.latency = attr_number_opt(lx, attrs, "latency");
      ins.label = attr_string_or_empty(attrs, "label");
      out.push_back(std::move(ins));
    } else if (t.text == "async_wait") {
      Attrs attrs = parse_attrs(lx);
      Instruction ins;
      ins.kind = InstrKind::AsyncWait;
      ins.token = attr_ident(lx, attrs, t, "token", "async_wait");
      out.push_back(std::move(ins));
    } else if (t.text == "arrive" || t.text == "wait") {
      Token name = expect(lx, TokKind::Ident, "barrier name");
      Instruction ins;
      ins.kind = t.text == "arrive" ? InstrKind::BarrierArrive
                                    : InstrKind::BarrierWait;
      ins.barrier = name.text;
      out.push_back(std::move(ins));
    } else if (t.text == "for") {
      Token trips = expect(lx, TokKind::Number, "loop trip count");
      Attrs attrs = parse_attrs(lx);
      expect(lx, TokKind::LBrace, "'{'");
      Instruction ins;
      ins.kind = InstrKind::LoopBegin;
      ins.trip_count = trips.number;
      ins.label = attr_string_or_empty(attrs, "label");
      out.push_back(std::move(ins));
      parse_body(lx, out);
      out.push_back(Instruction::loop_end());
    } else if (t.text == "record") {
      Token se = expect(lx, TokKind::Ident, "'start' or 'end'");
      if (se.text != "start" && se.text != "end")
        lx.fail(se, "expected 'start' or 'end'");
      Token region = expect(lx, TokKind::String, "quoted region name");
      out.push_back(Instruction::record(region.text, se.text == "start"));
    } else {
      lx.fail(t, "unknown instruction '" + t.text + "'");
    }
  }
}

} // namespace detail

inline KernelProgram parse_program(std::string_view text) {
  using namespace detail;
  Lexer lx(text);

  Token kw = expect(lx, TokKind::Ident, "'kernel'");
  if (kw.text != "kernel")
    lx.fail(kw, "expected 'kernel'");
  KernelProgram p;
  p.name = expect(lx, TokKind::Ident, "kernel name").text;
  p.num_warp_groups =
      static_cast<std::uint32_t>(expect_attr_number(lx, "wgs"));
  p.shared_mem_capacity = expect_attr_number(lx, "smem");
  expect(lx, TokKind::LBrace, "'{'");

  p.warp_group_bodies.resize(p.num_warp_groups);
  std::vector<bool> seen(p.num_warp_groups, false);
  std::uint32_t next_wg = 0;
  for (;;) {
    Token t = lx.peek();
    if (t.kind == TokKind::RBrace) {
      lx.next();
      break;
    }
    if (t.kind == TokKind::Eof)
      lx.fail(t, "unexpected end of input inside kernel");
    t = lx.next();
    if (t.kind != TokKind::Ident)
      lx.fail(t, "expected 'barrier' or a wg block");
    if (t.text == "barrier") {
      BarrierDecl b;
      b.name = expect(lx, TokKind::Ident, "barrier name").text;
      b.expected_arrivals =
          static_cast<std::uint32_t>(expect_attr_number(lx, "arrivals"));
      p.barriers.push_back(std::move(b));
    } else if (t.text.size() > 2 && t.text.compare(0, 2, "wg") == 0) {
      std::uint32_t idx = 0;
      for (std::size_t i = 2; i < t.text.size(); ++i) {
        if (!std::isdigit(static_cast<unsigned char>(t.text[i])))
          lx.fail(t, "malformed warp group block '" + t.text + "'");
        idx = idx * 10 + static_cast<std::uint32_t>(t.text[i] - '0');
      }
      if (idx >= p.num_warp_groups)
        lx.fail(t, "warp group index " + std::to_string(idx) +
                       " out of range (wgs=" +
                       std::to_string(p.num_warp_groups) + ")");
      if (seen[idx])
        lx.fail(t, "duplicate body for warp group " + std::to_string(idx));
      if (idx != next_wg)
        lx.fail(t, "warp group blocks must appear in ascending order");
      seen[idx] = true;
      ++next_wg;
      expect(lx, TokKind::LBrace, "'{'");
      parse_body(lx, p.warp_group_bodies[idx]);
    } else {
      lx.fail(t, "expected 'barrier' or a wg block, got '" + t.text + "'");
    }
  }
  Token eof = lx.peek();
  if (eof.kind != TokKind::Eof)
    lx.fail(eof, "trailing input after kernel");

  for (std::uint32_t i = 0; i < p.num_warp_groups; ++i)
    if (!seen[i])
      validation_error("kernel '" + p.name + "': missing body for warp group " +
                       std::to_string(i));
  validate(p);
  return p;
}

// ---------------------------------------------------------------------------
// Printing.
// ---------------------------------------------------------------------------

namespace detail {

inline void print_instruction(std::ostream& os, const Instruction& ins,
                              int& depth) {
  auto indent = [&os](int d) {
    for (int i = 0; i < d; ++i)
      os << "  ";
  };
  switch (ins.kind) {
  case InstrKind::SyncCompute:
    indent(depth);
    os << "compute unit=" << ins.unit;
    if (ins.latency)
      os << " latency=" << *ins.latency;
    if (!ins.label.empty())
      os << " label=" << quote(ins.label);
    os << "\n";
    break;
  case InstrKind::AsyncLaunch:
    indent(depth);
    os << "async_launch unit=" << ins.unit << " token=" << ins.token;
    if (ins.latency)
      os << " latency=" << *ins.latency;
    if (!ins.label.empty())
      os << " label=" << quote(ins.label);
    os << "\n";
    break;
  case InstrKind::AsyncWait:
    indent(depth);
    os << "async_wait token=" << ins.token << "\n";
    break;
  case InstrKind::BarrierArrive:
    indent(depth);
    os << "arrive " << ins.barrier << "\n";
    break;
  case InstrKind::BarrierWait:
    indent(depth);
    os << "wait " << ins.barrier << "\n";
    break;
  case InstrKind::LoopBegin:
    indent(depth);
    os << "for " << ins.trip_count;
    if (!ins.label.empty())
      os << " label=" << quote(ins.label);
    os << " {\n";
    ++depth;
    break;
  case InstrKind::LoopEnd:
    --depth;
    indent(depth);
    os << "}\n";
    break;
  case InstrKind::Record:
    indent(depth);
    os << "record " << (ins.is_start ? "start" : "end") << " "
       << quote(ins.label) << "\n";
    break;
  }
}

} // namespace detail

inline std::string print_program(const KernelProgram& p) {
  std::ostringstream os;
  os << "kernel " << p.name << " wgs=" << p.num_warp_groups
     << " smem=" << p.shared_mem_capacity << " {\n";
  for (const auto& b : p.barriers)
    os << "  barrier " << b.name << " arrivals=" << b.expected_arrivals
       << "\n";
  for (std::uint32_t wg = 0; wg < p.num_warp_groups; ++wg) {
    os << "  wg" << wg << " {\n";
    int depth = 2;
    for (const auto& ins : p.warp_group_bodies[wg])
      detail::print_instruction(os, ins, depth);
    os << "  }\n";
  }
  os << "}\n";
  return os.str();
}

} // namespace wgprof
