// MCS-51 / 8052 instruction set: decode table, decoder and linear-sweep
// disassembler over flat code images.
#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace fwscope::isa {

enum class Mnemonic : uint8_t {
  ACALL, ADD, ADDC, AJMP, ANL, CJNE, CLR, CPL, DA, DEC, DIV, DJNZ, INC, JB,
  JBC, JC, JMP, JNB, JNC, JNZ, JZ, LCALL, LJMP, MOV, MOVC, MOVX, MUL, NOP,
  ORL, POP, PUSH, RET, RETI, RL, RLC, RR, RRC, SETB, SJMP, SUBB, SWAP, XCH,
  XCHD, XRL,
  Reserved,  // 0xA5
};

inline constexpr int kMnemonicCount = 44;

std::string_view mnemonic_name(Mnemonic m);
std::optional<Mnemonic> mnemonic_from_name(std::string_view name);

enum class OperandKind : uint8_t {
  Accumulator,
  AB,               // MUL AB / DIV AB register pair
  Register,         // Rn, n = 0..7
  Direct,           // 8-bit direct address
  IndirectReg,      // @Ri, i = 0..1
  Immediate8,
  Immediate16,
  BitAddress,
  NegatedBit,       // /bit (ANL C,/bit and ORL C,/bit)
  Relative,         // signed 8-bit PC-relative offset
  Addr11,
  Addr16,
  DPTR,
  IndirectDPTR,     // @DPTR
  CodeIndexedDPTR,  // @A+DPTR
  CodeIndexedPC,    // @A+PC
  Carry,
};

std::string_view operand_kind_name(OperandKind k);

struct Operand {
  OperandKind kind{OperandKind::Accumulator};
  // Register number, direct/bit address, immediate, signed relative offset
  // (stored as int), or resolved absolute Addr11/Addr16 target.
  int32_t value{0};

  friend bool operator==(const Operand&, const Operand&) = default;

  static Operand acc() { return {OperandKind::Accumulator, 0}; }
  static Operand reg(int n) { return {OperandKind::Register, n}; }
  static Operand direct(int a) { return {OperandKind::Direct, a}; }
  static Operand indirect(int i) { return {OperandKind::IndirectReg, i}; }
  static Operand imm8(int v) { return {OperandKind::Immediate8, v}; }
  static Operand imm16(int v) { return {OperandKind::Immediate16, v}; }
  static Operand bit(int b) { return {OperandKind::BitAddress, b}; }
  static Operand carry() { return {OperandKind::Carry, 0}; }
  static Operand dptr() { return {OperandKind::DPTR, 0}; }
};

enum FlagBits : uint8_t {
  kFlagCY = 1 << 0,
  kFlagAC = 1 << 1,
  kFlagOV = 1 << 2,
  kFlagP = 1 << 3,
};

/// One row of the 256-entry decode table. `operands` lists kinds in
/// canonical destination-first order; 0x85 is the only opcode whose byte
/// order differs from that order.
struct OpcodeEntry {
  uint8_t opcode{0};
  Mnemonic mnemonic{Mnemonic::Reserved};
  uint8_t length{1};
  std::array<OperandKind, 3> operands{};
  uint8_t operand_count{0};
  uint8_t flags{0};

  bool illegal() const { return mnemonic == Mnemonic::Reserved; }
  std::span<const OperandKind> operand_kinds() const {
    return {operands.data(), operand_count};
  }
};

const std::array<OpcodeEntry, 256>& opcode_table();
inline const OpcodeEntry& table_entry(uint8_t op) { return opcode_table()[op]; }

/// Number of encoded bytes an operand kind consumes after the opcode.
int operand_byte_count(OperandKind k);

struct Instruction {
  uint16_t address{0};
  uint8_t length{1};
  Mnemonic mnemonic{Mnemonic::NOP};
  std::vector<Operand> operands;
  std::array<uint8_t, 3> raw{};

  friend bool operator==(const Instruction&, const Instruction&) = default;

  uint8_t opcode() const { return raw[0]; }
  uint16_t next_address() const { return static_cast<uint16_t>(address + length); }
  std::span<const uint8_t> bytes() const { return {raw.data(), length}; }

  bool is_control_flow() const;
  bool is_conditional_branch() const;
  bool is_call() const;
  bool is_return() const;
  /// Statically known branch/jump/call target, when there is one.
  std::optional<uint16_t> branch_target() const;
};

enum class DecodeErrorKind { IllegalOpcode, TruncatedInstruction, OutOfImage };

class DecodeError : public std::runtime_error {
 public:
  DecodeError(DecodeErrorKind kind, uint32_t address, const std::string& what)
      : std::runtime_error(what), kind_(kind), address_(address) {}
  DecodeErrorKind kind() const { return kind_; }
  uint32_t address() const { return address_; }

 private:
  DecodeErrorKind kind_;
  uint32_t address_;
};

Instruction decode(std::span<const uint8_t> image, uint32_t addr);

/// Non-throwing variant used by scanners.
std::optional<Instruction> try_decode(std::span<const uint8_t> image, uint32_t addr);

struct SweepDiagnostic {
  uint32_t address;
  DecodeErrorKind kind;
  std::string message;
};

struct SweepResult {
  std::vector<Instruction> instructions;
  std::vector<SweepDiagnostic> diagnostics;
};

SweepResult disassemble_sweep(std::span<const uint8_t> image, uint32_t start = 0);

/// Re-encode an instruction into raw bytes using the decode table.
/// Round-trips with decode() for every legal instruction.
std::vector<uint8_t> encode(const Instruction& insn);

std::string format_operand(const Operand& op);
std::string format_instruction(const Instruction& insn);

// Standard SFR names used when formatting direct addresses.
std::optional<std::string_view> sfr_name(uint8_t addr);

}  // namespace fwscope::isa
