#include "fwscope/isa.hpp"

#include <cctype>
#include <cstdio>
#include <sstream>

namespace fwscope::isa {

namespace {

using K = OperandKind;

constexpr std::array<std::string_view, kMnemonicCount + 1> kMnemonicNames = {
    "ACALL", "ADD",  "ADDC", "AJMP", "ANL",  "CJNE", "CLR",  "CPL",  "DA",
    "DEC",   "DIV",  "DJNZ", "INC",  "JB",   "JBC",  "JC",   "JMP",  "JNB",
    "JNC",   "JNZ",  "JZ",   "LCALL", "LJMP", "MOV", "MOVC", "MOVX", "MUL",
    "NOP",   "ORL",  "POP",  "PUSH", "RET",  "RETI", "RL",   "RLC",  "RR",
    "RRC",   "SETB", "SJMP", "SUBB", "SWAP", "XCH",  "XCHD", "XRL",  "???",
};

struct TableBuilder {
  std::array<OpcodeEntry, 256> t{};

  void set(int op, Mnemonic m, std::initializer_list<K> ops, uint8_t flags = 0) {
    OpcodeEntry& e = t[op];
    e.opcode = static_cast<uint8_t>(op);
    e.mnemonic = m;
    e.operand_count = 0;
    int len = 1;
    for (K k : ops) {
      e.operands[e.operand_count++] = k;
      len += operand_byte_count(k);
    }
    e.length = static_cast<uint8_t>(len);
    e.flags = flags;
  }

  // The common "A,#imm / A,direct / A,@Ri / A,Rn" column group at base+4..base+15.
  void arith_group(int base, Mnemonic m, uint8_t flags) {
    set(base + 4, m, {K::Accumulator, K::Immediate8}, flags);
    set(base + 5, m, {K::Accumulator, K::Direct}, flags);
    set(base + 6, m, {K::Accumulator, K::IndirectReg}, flags);
    set(base + 7, m, {K::Accumulator, K::IndirectReg}, flags);
    for (int n = 0; n < 8; ++n) set(base + 8 + n, m, {K::Accumulator, K::Register}, flags);
  }
};

std::array<OpcodeEntry, 256> build_table() {
  using M = Mnemonic;
  TableBuilder b;
  constexpr uint8_t P = kFlagP;
  constexpr uint8_t ARITH = kFlagCY | kFlagAC | kFlagOV | kFlagP;

  for (int hi = 0; hi < 8; ++hi) {
    b.set(hi * 0x20 + 0x01, M::AJMP, {K::Addr11});
    b.set(hi * 0x20 + 0x11, M::ACALL, {K::Addr11});
  }

  b.set(0x00, M::NOP, {});
  b.set(0x02, M::LJMP, {K::Addr16});
  b.set(0x03, M::RR, {K::Accumulator});
  b.set(0x04, M::INC, {K::Accumulator}, P);
  b.set(0x05, M::INC, {K::Direct});
  b.set(0x06, M::INC, {K::IndirectReg});
  b.set(0x07, M::INC, {K::IndirectReg});
  for (int n = 0; n < 8; ++n) b.set(0x08 + n, M::INC, {K::Register});

  b.set(0x10, M::JBC, {K::BitAddress, K::Relative});
  b.set(0x12, M::LCALL, {K::Addr16});
  b.set(0x13, M::RRC, {K::Accumulator}, kFlagCY | P);
  b.set(0x14, M::DEC, {K::Accumulator}, P);
  b.set(0x15, M::DEC, {K::Direct});
  b.set(0x16, M::DEC, {K::IndirectReg});
  b.set(0x17, M::DEC, {K::IndirectReg});
  for (int n = 0; n < 8; ++n) b.set(0x18 + n, M::DEC, {K::Register});

  b.set(0x20, M::JB, {K::BitAddress, K::Relative});
  b.set(0x22, M::RET, {});
  b.set(0x23, M::RL, {K::Accumulator});
  b.arith_group(0x20, M::ADD, ARITH);

  b.set(0x30, M::JNB, {K::BitAddress, K::Relative});
  b.set(0x32, M::RETI, {});
  b.set(0x33, M::RLC, {K::Accumulator}, kFlagCY | P);
  b.arith_group(0x30, M::ADDC, ARITH);

  b.set(0x40, M::JC, {K::Relative});
  b.set(0x42, M::ORL, {K::Direct, K::Accumulator});
  b.set(0x43, M::ORL, {K::Direct, K::Immediate8});
  b.arith_group(0x40, M::ORL, P);

  b.set(0x50, M::JNC, {K::Relative});
  b.set(0x52, M::ANL, {K::Direct, K::Accumulator});
  b.set(0x53, M::ANL, {K::Direct, K::Immediate8});
  b.arith_group(0x50, M::ANL, P);

  b.set(0x60, M::JZ, {K::Relative});
  b.set(0x62, M::XRL, {K::Direct, K::Accumulator});
  b.set(0x63, M::XRL, {K::Direct, K::Immediate8});
  b.arith_group(0x60, M::XRL, P);

  b.set(0x70, M::JNZ, {K::Relative});
  b.set(0x72, M::ORL, {K::Carry, K::BitAddress}, kFlagCY);
  b.set(0x73, M::JMP, {K::CodeIndexedDPTR});
  b.set(0x74, M::MOV, {K::Accumulator, K::Immediate8}, P);
  b.set(0x75, M::MOV, {K::Direct, K::Immediate8});
  b.set(0x76, M::MOV, {K::IndirectReg, K::Immediate8});
  b.set(0x77, M::MOV, {K::IndirectReg, K::Immediate8});
  for (int n = 0; n < 8; ++n) b.set(0x78 + n, M::MOV, {K::Register, K::Immediate8});

  b.set(0x80, M::SJMP, {K::Relative});
  b.set(0x82, M::ANL, {K::Carry, K::BitAddress}, kFlagCY);
  b.set(0x83, M::MOVC, {K::Accumulator, K::CodeIndexedPC}, P);
  b.set(0x84, M::DIV, {K::AB}, kFlagCY | kFlagOV | P);
  b.set(0x85, M::MOV, {K::Direct, K::Direct});
  b.set(0x86, M::MOV, {K::Direct, K::IndirectReg});
  b.set(0x87, M::MOV, {K::Direct, K::IndirectReg});
  for (int n = 0; n < 8; ++n) b.set(0x88 + n, M::MOV, {K::Direct, K::Register});

  b.set(0x90, M::MOV, {K::DPTR, K::Immediate16});
  b.set(0x92, M::MOV, {K::BitAddress, K::Carry});
  b.set(0x93, M::MOVC, {K::Accumulator, K::CodeIndexedDPTR}, P);
  b.arith_group(0x90, M::SUBB, ARITH);

  b.set(0xA0, M::ORL, {K::Carry, K::NegatedBit}, kFlagCY);
  b.set(0xA2, M::MOV, {K::Carry, K::BitAddress}, kFlagCY);
  b.set(0xA3, M::INC, {K::DPTR});
  b.set(0xA4, M::MUL, {K::AB}, kFlagCY | kFlagOV | P);
  b.set(0xA5, M::Reserved, {});
  b.set(0xA6, M::MOV, {K::IndirectReg, K::Direct});
  b.set(0xA7, M::MOV, {K::IndirectReg, K::Direct});
  for (int n = 0; n < 8; ++n) b.set(0xA8 + n, M::MOV, {K::Register, K::Direct});

  b.set(0xB0, M::ANL, {K::Carry, K::NegatedBit}, kFlagCY);
  b.set(0xB2, M::CPL, {K::BitAddress});
  b.set(0xB3, M::CPL, {K::Carry}, kFlagCY);
  b.set(0xB4, M::CJNE, {K::Accumulator, K::Immediate8, K::Relative}, kFlagCY);
  b.set(0xB5, M::CJNE, {K::Accumulator, K::Direct, K::Relative}, kFlagCY);
  b.set(0xB6, M::CJNE, {K::IndirectReg, K::Immediate8, K::Relative}, kFlagCY);
  b.set(0xB7, M::CJNE, {K::IndirectReg, K::Immediate8, K::Relative}, kFlagCY);
  for (int n = 0; n < 8; ++n)
    b.set(0xB8 + n, M::CJNE, {K::Register, K::Immediate8, K::Relative}, kFlagCY);

  b.set(0xC0, M::PUSH, {K::Direct});
  b.set(0xC2, M::CLR, {K::BitAddress});
  b.set(0xC3, M::CLR, {K::Carry}, kFlagCY);
  b.set(0xC4, M::SWAP, {K::Accumulator});
  b.set(0xC5, M::XCH, {K::Accumulator, K::Direct}, P);
  b.set(0xC6, M::XCH, {K::Accumulator, K::IndirectReg}, P);
  b.set(0xC7, M::XCH, {K::Accumulator, K::IndirectReg}, P);
  for (int n = 0; n < 8; ++n) b.set(0xC8 + n, M::XCH, {K::Accumulator, K::Register}, P);

  b.set(0xD0, M::POP, {K::Direct});
  b.set(0xD2, M::SETB, {K::BitAddress});
  b.set(0xD3, M::SETB, {K::Carry}, kFlagCY);
  b.set(0xD4, M::DA, {K::Accumulator}, kFlagCY | P);
  b.set(0xD5, M::DJNZ, {K::Direct, K::Relative});
  b.set(0xD6, M::XCHD, {K::Accumulator, K::IndirectReg}, P);
  b.set(0xD7, M::XCHD, {K::Accumulator, K::IndirectReg}, P);
  for (int n = 0; n < 8; ++n) b.set(0xD8 + n, M::DJNZ, {K::Register, K::Relative});

  b.set(0xE0, M::MOVX, {K::Accumulator, K::IndirectDPTR}, P);
  b.set(0xE2, M::MOVX, {K::Accumulator, K::IndirectReg}, P);
  b.set(0xE3, M::MOVX, {K::Accumulator, K::IndirectReg}, P);
  b.set(0xE4, M::CLR, {K::Accumulator}, P);
  b.set(0xE5, M::MOV, {K::Accumulator, K::Direct}, P);
  b.set(0xE6, M::MOV, {K::Accumulator, K::IndirectReg}, P);
  b.set(0xE7, M::MOV, {K::Accumulator, K::IndirectReg}, P);
  for (int n = 0; n < 8; ++n) b.set(0xE8 + n, M::MOV, {K::Accumulator, K::Register}, P);

  b.set(0xF0, M::MOVX, {K::IndirectDPTR, K::Accumulator});
  b.set(0xF2, M::MOVX, {K::IndirectReg, K::Accumulator});
  b.set(0xF3, M::MOVX, {K::IndirectReg, K::Accumulator});
  b.set(0xF4, M::CPL, {K::Accumulator}, P);
  b.set(0xF5, M::MOV, {K::Direct, K::Accumulator});
  b.set(0xF6, M::MOV, {K::IndirectReg, K::Accumulator});
  b.set(0xF7, M::MOV, {K::IndirectReg, K::Accumulator});
  for (int n = 0; n < 8; ++n) b.set(0xF8 + n, M::MOV, {K::Register, K::Accumulator});

  return b.t;
}

// Register/indirect operand number is encoded in the low opcode bits.
int implied_register(uint8_t opcode, OperandKind k) {
  if (k == K::Register) return opcode & 0x07;
  if (k == K::IndirectReg) return opcode & 0x01;
  return 0;
}

}  // namespace

std::string_view mnemonic_name(Mnemonic m) { return kMnemonicNames[static_cast<size_t>(m)]; }

std::optional<Mnemonic> mnemonic_from_name(std::string_view name) {
  for (size_t i = 0; i < kMnemonicCount; ++i) {
    const auto& n = kMnemonicNames[i];
    if (n.size() != name.size()) continue;
    bool eq = true;
    for (size_t j = 0; j < n.size() && eq; ++j)
      eq = n[j] == static_cast<char>(std::toupper(static_cast<unsigned char>(name[j])));
    if (eq) return static_cast<Mnemonic>(i);
  }
  return std::nullopt;
}

std::string_view operand_kind_name(OperandKind k) {
  switch (k) {
    case K::Accumulator: return "A";
    case K::AB: return "AB";
    case K::Register: return "Rn";
    case K::Direct: return "direct";
    case K::IndirectReg: return "@Ri";
    case K::Immediate8: return "#imm8";
    case K::Immediate16: return "#imm16";
    case K::BitAddress: return "bit";
    case K::NegatedBit: return "/bit";
    case K::Relative: return "rel";
    case K::Addr11: return "addr11";
    case K::Addr16: return "addr16";
    case K::DPTR: return "DPTR";
    case K::IndirectDPTR: return "@DPTR";
    case K::CodeIndexedDPTR: return "@A+DPTR";
    case K::CodeIndexedPC: return "@A+PC";
    case K::Carry: return "C";
  }
  return "?";
}

int operand_byte_count(OperandKind k) {
  switch (k) {
    case K::Direct:
    case K::Immediate8:
    case K::BitAddress:
    case K::NegatedBit:
    case K::Relative:
    case K::Addr11:
      return 1;
    case K::Immediate16:
    case K::Addr16:
      return 2;
    default:
      return 0;
  }
}

const std::array<OpcodeEntry, 256>& opcode_table() {
  static const std::array<OpcodeEntry, 256> table = build_table();
  return table;
}

bool Instruction::is_control_flow() const {
  switch (mnemonic) {
    case Mnemonic::ACALL: case Mnemonic::AJMP: case Mnemonic::CJNE:
    case Mnemonic::DJNZ: case Mnemonic::JB: case Mnemonic::JBC: case Mnemonic::JC:
    case Mnemonic::JMP: case Mnemonic::JNB: case Mnemonic::JNC: case Mnemonic::JNZ:
    case Mnemonic::JZ: case Mnemonic::LCALL: case Mnemonic::LJMP: case Mnemonic::RET:
    case Mnemonic::RETI: case Mnemonic::SJMP:
      return true;
    default:
      return false;
  }
}

bool Instruction::is_conditional_branch() const {
  switch (mnemonic) {
    case Mnemonic::CJNE: case Mnemonic::DJNZ: case Mnemonic::JB: case Mnemonic::JBC:
    case Mnemonic::JC: case Mnemonic::JNB: case Mnemonic::JNC: case Mnemonic::JNZ:
    case Mnemonic::JZ:
      return true;
    default:
      return false;
  }
}

bool Instruction::is_call() const {
  return mnemonic == Mnemonic::ACALL || mnemonic == Mnemonic::LCALL;
}

bool Instruction::is_return() const {
  return mnemonic == Mnemonic::RET || mnemonic == Mnemonic::RETI;
}

std::optional<uint16_t> Instruction::branch_target() const {
  for (const Operand& op : operands) {
    switch (op.kind) {
      case K::Relative:
        return static_cast<uint16_t>(next_address() + op.value);
      case K::Addr11:
      case K::Addr16:
        return static_cast<uint16_t>(op.value);
      default:
        break;
    }
  }
  return std::nullopt;
}

Instruction decode(std::span<const uint8_t> image, uint32_t addr) {
  if (addr >= image.size()) {
    throw DecodeError(DecodeErrorKind::OutOfImage, addr, "address outside image");
  }
  const uint8_t opcode = image[addr];
  const OpcodeEntry& e = opcode_table()[opcode];
  if (e.illegal()) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "illegal opcode 0x%02X at 0x%04X", opcode, addr);
    throw DecodeError(DecodeErrorKind::IllegalOpcode, addr, buf);
  }
  if (addr + e.length > image.size() || addr + e.length > 0x10000) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "truncated instruction at 0x%04X", addr);
    throw DecodeError(DecodeErrorKind::TruncatedInstruction, addr, buf);
  }

  Instruction insn;
  insn.address = static_cast<uint16_t>(addr);
  insn.length = e.length;
  insn.mnemonic = e.mnemonic;
  for (int i = 0; i < e.length; ++i) insn.raw[i] = image[addr + i];
  const uint16_t next = static_cast<uint16_t>(addr + e.length);

  // Byte cursor over the operand bytes. MOV direct,direct stores the
  // source address first; the operand list stays destination-first.
  std::array<int, 3> order{0, 1, 2};
  if (opcode == 0x85) order = {1, 0, 2};

  std::array<Operand, 3> ops{};
  int cursor = 1;
  for (int slot = 0; slot < e.operand_count; ++slot) {
    const int idx = order[slot];
    const OperandKind k = e.operands[idx];
    Operand op{k, 0};
    switch (k) {
      case K::Register:
      case K::IndirectReg:
        op.value = implied_register(opcode, k);
        break;
      case K::Direct:
      case K::Immediate8:
      case K::BitAddress:
      case K::NegatedBit:
        op.value = insn.raw[cursor++];
        break;
      case K::Relative:
        op.value = static_cast<int8_t>(insn.raw[cursor++]);
        break;
      case K::Addr11:
        op.value = (next & 0xF800) | ((opcode & 0xE0) << 3) | insn.raw[cursor++];
        break;
      case K::Immediate16:
      case K::Addr16:
        op.value = (insn.raw[cursor] << 8) | insn.raw[cursor + 1];
        cursor += 2;
        break;
      default:
        break;
    }
    ops[idx] = op;
  }
  insn.operands.assign(ops.begin(), ops.begin() + e.operand_count);
  return insn;
}

std::optional<Instruction> try_decode(std::span<const uint8_t> image, uint32_t addr) {
  if (addr >= image.size()) return std::nullopt;
  const OpcodeEntry& e = opcode_table()[image[addr]];
  if (e.illegal() || addr + e.length > image.size()) return std::nullopt;
  return decode(image, addr);
}

SweepResult disassemble_sweep(std::span<const uint8_t> image, uint32_t start) {
  SweepResult out;
  uint32_t addr = start;
  while (addr < image.size()) {
    try {
      Instruction insn = decode(image, addr);
      addr += insn.length;
      out.instructions.push_back(std::move(insn));
    } catch (const DecodeError& err) {
      out.diagnostics.push_back({addr, err.kind(), err.what()});
      ++addr;  // resynchronize at the next byte
    }
  }
  return out;
}

std::vector<uint8_t> encode(const Instruction& insn) {
  // Locate the table entry whose mnemonic and operand kinds match; the
  // opcode low bits carry Rn/@Ri numbers and the Addr11 page.
  const auto& table = opcode_table();
  for (const OpcodeEntry& e : table) {
    if (e.illegal() || e.mnemonic != insn.mnemonic || e.operand_count != insn.operands.size())
      continue;
    bool match = true;
    for (int i = 0; i < e.operand_count && match; ++i) {
      const Operand& op = insn.operands[i];
      if (op.kind != e.operands[i]) match = false;
      else if (op.kind == K::Register && (e.opcode & 7) != op.value) match = false;
      else if (op.kind == K::IndirectReg && (e.opcode & 1) != op.value) match = false;
      else if (op.kind == K::Addr11) {
        const int next = (insn.address + e.length) & 0xFFFF;
        if ((op.value & 0xF800) != (next & 0xF800)) match = false;
        else if (((op.value >> 8) & 0x07) != (e.opcode >> 5)) match = false;
      }
    }
    if (!match) continue;

    std::vector<uint8_t> bytes{e.opcode};
    std::array<int, 3> order{0, 1, 2};
    if (e.opcode == 0x85) order = {1, 0, 2};
    for (int slot = 0; slot < e.operand_count; ++slot) {
      const Operand& op = insn.operands[order[slot]];
      switch (op.kind) {
        case K::Direct: case K::Immediate8: case K::BitAddress: case K::NegatedBit:
        case K::Relative: case K::Addr11:
          bytes.push_back(static_cast<uint8_t>(op.value & 0xFF));
          break;
        case K::Immediate16: case K::Addr16:
          bytes.push_back(static_cast<uint8_t>((op.value >> 8) & 0xFF));
          bytes.push_back(static_cast<uint8_t>(op.value & 0xFF));
          break;
        default:
          break;
      }
    }
    return bytes;
  }
  throw std::invalid_argument("no encoding for " + format_instruction(insn));
}

std::optional<std::string_view> sfr_name(uint8_t addr) {
  switch (addr) {
    case 0x80: return "P0";
    case 0x81: return "SP";
    case 0x82: return "DPL";
    case 0x83: return "DPH";
    case 0x87: return "PCON";
    case 0x88: return "TCON";
    case 0x89: return "TMOD";
    case 0x8A: return "TL0";
    case 0x8B: return "TL1";
    case 0x8C: return "TH0";
    case 0x8D: return "TH1";
    case 0x90: return "P1";
    case 0x98: return "SCON";
    case 0x99: return "SBUF";
    case 0xA0: return "P2";
    case 0xA8: return "IE";
    case 0xB0: return "P3";
    case 0xB8: return "IP";
    case 0xC8: return "T2CON";
    case 0xCA: return "RCAP2L";
    case 0xCB: return "RCAP2H";
    case 0xCC: return "TL2";
    case 0xCD: return "TH2";
    case 0xD0: return "PSW";
    case 0xE0: return "ACC";
    case 0xF0: return "B";
    default: return std::nullopt;
  }
}

std::string format_operand(const Operand& op) {
  char buf[32];
  switch (op.kind) {
    case K::Accumulator: return "A";
    case K::AB: return "AB";
    case K::Register: std::snprintf(buf, sizeof buf, "R%d", op.value); return buf;
    case K::IndirectReg: std::snprintf(buf, sizeof buf, "@R%d", op.value); return buf;
    case K::Direct:
      if (auto n = sfr_name(static_cast<uint8_t>(op.value))) return std::string(*n);
      std::snprintf(buf, sizeof buf, "0x%02X", op.value);
      return buf;
    case K::Immediate8: std::snprintf(buf, sizeof buf, "#0x%02X", op.value); return buf;
    case K::Immediate16: std::snprintf(buf, sizeof buf, "#0x%04X", op.value); return buf;
    case K::BitAddress: std::snprintf(buf, sizeof buf, "0x%02X", op.value); return buf;
    case K::NegatedBit: std::snprintf(buf, sizeof buf, "/0x%02X", op.value); return buf;
    case K::Relative: std::snprintf(buf, sizeof buf, "%+d", op.value); return buf;
    case K::Addr11:
    case K::Addr16: std::snprintf(buf, sizeof buf, "0x%04X", op.value); return buf;
    case K::DPTR: return "DPTR";
    case K::IndirectDPTR: return "@DPTR";
    case K::CodeIndexedDPTR: return "@A+DPTR";
    case K::CodeIndexedPC: return "@A+PC";
    case K::Carry: return "C";
  }
  return "?";
}

std::string format_instruction(const Instruction& insn) {
  std::string s(mnemonic_name(insn.mnemonic));
  for (size_t i = 0; i < insn.operands.size(); ++i) {
    s += i == 0 ? " " : ",";
    const Operand& op = insn.operands[i];
    if (op.kind == K::Relative) {
      char buf[16];
      std::snprintf(buf, sizeof buf, "0x%04X", static_cast<uint16_t>(insn.next_address() + op.value));
      s += buf;
    } else {
      s += format_operand(op);
    }
  }
  return s;
}

}  // namespace fwscope::isa
