// Region-aware RISC-like IR for lifted 8051 code.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace fwscope::ir {

enum class Region : uint8_t { Code, Iram, Sfr, Xram };
std::string_view region_name(Region r);
std::optional<Region> region_from_name(std::string_view name);

// Why a memory access happens; lets analyses tell stack traffic and
// register-bank slots apart from data accesses.
enum class AccessKind : uint8_t { Data, Stack, RegisterBank };

// Core registers held in the SFR file. Direct accesses to their addresses
// are lifted as register reads/writes.
enum class Reg : uint8_t { ACC, B, PSW, SP, DPL, DPH };
inline constexpr int kRegCount = 6;
uint8_t reg_sfr_address(Reg r);
std::optional<Reg> reg_from_sfr(uint8_t addr);
std::string_view reg_name(Reg r);

enum class Op : uint8_t {
  Copy,
  Add, Sub, Mul, UDiv, URem,
  And, Or, Xor, Not,
  Shl, LShr,
  Eq, Ne, Ult, Ule,
  ZExt,     // zero-extend a to `width`
  Extract,  // bits [hi:lo] of a
  Concat,   // a is the high part
  Ite,      // a ? b : c
  Parity,   // xor of all bits of a, width 1
};
std::string_view op_name(Op op);

using TempId = uint16_t;

// Statement operand: a temp or a constant of a given width.
struct Value {
  bool is_temp{false};
  uint8_t width{8};
  uint32_t v{0};  // temp id or constant value

  static Value c(uint32_t value, uint8_t width) { return {false, width, value}; }
  static Value t(TempId id, uint8_t width) { return {true, width, id}; }
  friend bool operator==(const Value&, const Value&) = default;
};

enum class StmtKind : uint8_t {
  InstrBoundary,
  GetReg,
  PutReg,
  Load,
  Store,
  Assign,
  Trap,      // terminates the path when cond holds
  CallMark,  // return address in `target`
  RetMark,   // `reti` set for RETI
  CJump,
  Jump,
};

enum class TrapKind : uint8_t { StackOverflow };

struct Stmt {
  StmtKind kind{StmtKind::InstrBoundary};
  // Assign / Load / GetReg destination
  TempId dst{0};
  uint8_t width{8};
  Op op{Op::Copy};
  uint8_t hi{0}, lo{0};  // Extract bounds
  Value a, b, c;         // Assign operands; Store uses a=address, b=value;
                         // Load uses a=address; PutReg uses a; CJump/Trap use a as condition;
                         // Jump uses a as target
  Region region{Region::Iram};
  AccessKind access{AccessKind::Data};
  Reg reg{Reg::ACC};
  TrapKind trap{TrapKind::StackOverflow};
  bool reti{false};
  uint16_t addr{0};      // InstrBoundary: instruction address
  uint8_t length{0};     // InstrBoundary: instruction length
  uint16_t target{0};    // CJump taken target / CallMark return address
  uint16_t fallthrough{0};
};

struct Block {
  uint16_t entry{0};
  std::vector<Stmt> stmts;
  std::vector<uint8_t> temp_widths;
  std::vector<uint16_t> instr_addrs;
  // Statically known successors (empty for indirect jumps and returns).
  std::vector<uint16_t> successors;
  bool ends_in_call{false};
  bool ends_in_return{false};
  bool ends_in_indirect{false};

  const Stmt& terminator() const { return stmts.back(); }
  uint16_t end_address() const;  // address after the last instruction
};

std::string format_value(const Value& v);
std::string format_stmt(const Stmt& s);
std::string format_block(const Block& b);

// Pure evaluation of an Assign over 32-bit concrete values.
uint32_t eval_op(Op op, uint8_t width, uint8_t hi, uint8_t lo, uint32_t a, uint32_t b, uint32_t c,
                 uint8_t b_width);

inline uint32_t width_mask(uint8_t w) { return w >= 32 ? 0xFFFFFFFFu : ((1u << w) - 1u); }

}  // namespace fwscope::ir
