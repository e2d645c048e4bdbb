#include "fwscope/ir.hpp"

#include <bit>
#include <cstdio>
#include <sstream>

namespace fwscope::ir {

std::string_view region_name(Region r) {
  switch (r) {
    case Region::Code: return "CODE";
    case Region::Iram: return "IRAM";
    case Region::Sfr: return "SFR";
    case Region::Xram: return "XRAM";
  }
  return "?";
}

std::optional<Region> region_from_name(std::string_view name) {
  for (Region r : {Region::Code, Region::Iram, Region::Sfr, Region::Xram})
    if (region_name(r) == name) return r;
  return std::nullopt;
}

uint8_t reg_sfr_address(Reg r) {
  switch (r) {
    case Reg::ACC: return 0xE0;
    case Reg::B: return 0xF0;
    case Reg::PSW: return 0xD0;
    case Reg::SP: return 0x81;
    case Reg::DPL: return 0x82;
    case Reg::DPH: return 0x83;
  }
  return 0;
}

std::optional<Reg> reg_from_sfr(uint8_t addr) {
  switch (addr) {
    case 0xE0: return Reg::ACC;
    case 0xF0: return Reg::B;
    case 0xD0: return Reg::PSW;
    case 0x81: return Reg::SP;
    case 0x82: return Reg::DPL;
    case 0x83: return Reg::DPH;
    default: return std::nullopt;
  }
}

std::string_view reg_name(Reg r) {
  switch (r) {
    case Reg::ACC: return "ACC";
    case Reg::B: return "B";
    case Reg::PSW: return "PSW";
    case Reg::SP: return "SP";
    case Reg::DPL: return "DPL";
    case Reg::DPH: return "DPH";
  }
  return "?";
}

std::string_view op_name(Op op) {
  switch (op) {
    case Op::Copy: return "copy";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::UDiv: return "udiv";
    case Op::URem: return "urem";
    case Op::And: return "and";
    case Op::Or: return "or";
    case Op::Xor: return "xor";
    case Op::Not: return "not";
    case Op::Shl: return "shl";
    case Op::LShr: return "lshr";
    case Op::Eq: return "eq";
    case Op::Ne: return "ne";
    case Op::Ult: return "ult";
    case Op::Ule: return "ule";
    case Op::ZExt: return "zext";
    case Op::Extract: return "extract";
    case Op::Concat: return "concat";
    case Op::Ite: return "ite";
    case Op::Parity: return "parity";
  }
  return "?";
}

uint16_t Block::end_address() const {
  for (auto it = stmts.rbegin(); it != stmts.rend(); ++it)
    if (it->kind == StmtKind::InstrBoundary) return static_cast<uint16_t>(it->addr + it->length);
  return entry;
}

uint32_t eval_op(Op op, uint8_t width, uint8_t hi, uint8_t lo, uint32_t a, uint32_t b, uint32_t c,
                 uint8_t b_width) {
  const uint32_t m = width_mask(width);
  switch (op) {
    case Op::Copy: return a & m;
    case Op::Add: return (a + b) & m;
    case Op::Sub: return (a - b) & m;
    case Op::Mul: return (a * b) & m;
    case Op::UDiv: return b == 0 ? m : (a / b) & m;
    case Op::URem: return b == 0 ? a & m : (a % b) & m;
    case Op::And: return a & b & m;
    case Op::Or: return (a | b) & m;
    case Op::Xor: return (a ^ b) & m;
    case Op::Not: return ~a & m;
    case Op::Shl: return b >= width ? 0 : (a << b) & m;
    case Op::LShr: return b >= width ? 0 : (a >> b) & m;
    case Op::Eq: return a == b;
    case Op::Ne: return a != b;
    case Op::Ult: return a < b;
    case Op::Ule: return a <= b;
    case Op::ZExt: return a & m;
    case Op::Extract: return (a >> lo) & width_mask(static_cast<uint8_t>(hi - lo + 1));
    case Op::Concat: return ((a << b_width) | b) & m;
    case Op::Ite: return (a & 1) ? b & m : c & m;
    case Op::Parity: return std::popcount(a) & 1;
  }
  return 0;
}

std::string format_value(const Value& v) {
  char buf[32];
  if (v.is_temp) std::snprintf(buf, sizeof buf, "t%u:%u", v.v, v.width);
  else std::snprintf(buf, sizeof buf, "0x%X:%u", v.v, v.width);
  return buf;
}

std::string format_stmt(const Stmt& s) {
  std::ostringstream out;
  char buf[64];
  switch (s.kind) {
    case StmtKind::InstrBoundary:
      std::snprintf(buf, sizeof buf, "---- %04X len %u", s.addr, s.length);
      out << buf;
      break;
    case StmtKind::GetReg:
      out << "t" << s.dst << " = get " << reg_name(s.reg);
      break;
    case StmtKind::PutReg:
      out << "put " << reg_name(s.reg) << " = " << format_value(s.a);
      break;
    case StmtKind::Load:
      out << "t" << s.dst << " = load." << region_name(s.region);
      if (s.access == AccessKind::Stack) out << ".stack";
      if (s.access == AccessKind::RegisterBank) out << ".bank";
      out << " [" << format_value(s.a) << "]";
      break;
    case StmtKind::Store:
      out << "store." << region_name(s.region);
      if (s.access == AccessKind::Stack) out << ".stack";
      if (s.access == AccessKind::RegisterBank) out << ".bank";
      out << " [" << format_value(s.a) << "] = " << format_value(s.b);
      break;
    case StmtKind::Assign:
      out << "t" << s.dst << ":" << unsigned(s.width) << " = " << op_name(s.op);
      if (s.op == Op::Extract) out << "[" << unsigned(s.hi) << ":" << unsigned(s.lo) << "]";
      out << " " << format_value(s.a);
      if (s.op != Op::Copy && s.op != Op::Not && s.op != Op::ZExt && s.op != Op::Extract &&
          s.op != Op::Parity)
        out << ", " << format_value(s.b);
      if (s.op == Op::Ite) out << ", " << format_value(s.c);
      break;
    case StmtKind::Trap:
      out << "trap stack-overflow if " << format_value(s.a);
      break;
    case StmtKind::CallMark:
      std::snprintf(buf, sizeof buf, "call (return %04X)", s.target);
      out << buf;
      break;
    case StmtKind::RetMark:
      out << (s.reti ? "reti" : "ret");
      break;
    case StmtKind::CJump:
      std::snprintf(buf, sizeof buf, " ? %04X : %04X", s.target, s.fallthrough);
      out << "cjump " << format_value(s.a) << buf;
      break;
    case StmtKind::Jump:
      out << "jump " << format_value(s.a);
      break;
  }
  return out.str();
}

std::string format_block(const Block& b) {
  std::ostringstream out;
  char buf[32];
  std::snprintf(buf, sizeof buf, "block %04X\n", b.entry);
  out << buf;
  for (const auto& s : b.stmts) out << "  " << format_stmt(s) << '\n';
  return out.str();
}

}  // namespace fwscope::ir
