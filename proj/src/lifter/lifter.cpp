#include "fwscope/lifter.hpp"

#include <algorithm>

namespace fwscope::lifter {

using ir::AccessKind;
using ir::Op;
using ir::Reg;
using ir::Region;
using ir::Stmt;
using ir::StmtKind;
using ir::Value;
using isa::Instruction;
using isa::Mnemonic;
using isa::Operand;
using isa::OperandKind;

namespace {

constexpr uint8_t kCY = 0x80, kAC = 0x40, kOV = 0x04, kP = 0x01, kBankMask = 0x18;

Value c1(uint32_t v) { return Value::c(v & 1, 1); }
Value c8(uint32_t v) { return Value::c(v & 0xFF, 8); }
Value c16(uint32_t v) { return Value::c(v & 0xFFFF, 16); }

class Builder {
 public:
  explicit Builder(ir::Block& b) : blk_(b) {}

  bool acc_or_psw_written() const { return dirty_; }

  Value assign(Op op, uint8_t width, Value a, Value b = {}, Value c = {}, uint8_t hi = 0,
               uint8_t lo = 0) {
    if (!a.is_temp && !b.is_temp && !c.is_temp) {
      return Value::c(ir::eval_op(op, width, hi, lo, a.v, b.v, c.v, b.width), width);
    }
    Stmt s;
    s.kind = StmtKind::Assign;
    s.op = op;
    s.width = width;
    s.a = a;
    s.b = b;
    s.c = c;
    s.hi = hi;
    s.lo = lo;
    s.dst = fresh(width);
    blk_.stmts.push_back(s);
    return Value::t(s.dst, width);
  }

  Value add(Value a, Value b) { return assign(Op::Add, a.width, a, b); }
  Value sub(Value a, Value b) { return assign(Op::Sub, a.width, a, b); }
  Value band(Value a, Value b) { return assign(Op::And, a.width, a, b); }
  Value bor(Value a, Value b) { return assign(Op::Or, a.width, a, b); }
  Value bxor(Value a, Value b) { return assign(Op::Xor, a.width, a, b); }
  Value bnot(Value a) { return assign(Op::Not, a.width, a); }
  Value shl(Value a, uint32_t n) { return assign(Op::Shl, a.width, a, Value::c(n, a.width)); }
  Value lshr(Value a, uint32_t n) { return assign(Op::LShr, a.width, a, Value::c(n, a.width)); }
  Value eq(Value a, Value b) { return assign(Op::Eq, 1, a, b); }
  Value ne(Value a, Value b) { return assign(Op::Ne, 1, a, b); }
  Value ult(Value a, Value b) { return assign(Op::Ult, 1, a, b); }
  Value zext(Value a, uint8_t w) { return a.width == w ? a : assign(Op::ZExt, w, a); }
  Value extract(Value a, uint8_t hi, uint8_t lo) {
    return assign(Op::Extract, static_cast<uint8_t>(hi - lo + 1), a, {}, {}, hi, lo);
  }
  Value concat(Value hi, Value lo) {
    return assign(Op::Concat, static_cast<uint8_t>(hi.width + lo.width), hi, lo);
  }
  Value ite(Value c, Value a, Value b) { return assign(Op::Ite, a.width, c, a, b); }

  Value get(Reg r) {
    Stmt s;
    s.kind = StmtKind::GetReg;
    s.reg = r;
    s.width = 8;
    s.dst = fresh(8);
    blk_.stmts.push_back(s);
    return Value::t(s.dst, 8);
  }
  void put(Reg r, Value v) {
    Stmt s;
    s.kind = StmtKind::PutReg;
    s.reg = r;
    s.a = v;
    blk_.stmts.push_back(s);
    if (r == Reg::ACC || r == Reg::PSW) dirty_ = true;
  }
  Value load(Region region, AccessKind kind, Value addr) {
    Stmt s;
    s.kind = StmtKind::Load;
    s.region = region;
    s.access = kind;
    s.a = addr;
    s.width = 8;
    s.dst = fresh(8);
    blk_.stmts.push_back(s);
    return Value::t(s.dst, 8);
  }
  void store(Region region, AccessKind kind, Value addr, Value v) {
    Stmt s;
    s.kind = StmtKind::Store;
    s.region = region;
    s.access = kind;
    s.a = addr;
    s.b = v;
    blk_.stmts.push_back(s);
  }
  void emit(Stmt s) { blk_.stmts.push_back(s); }

 private:
  ir::TempId fresh(uint8_t width) {
    blk_.temp_widths.push_back(width);
    return static_cast<ir::TempId>(blk_.temp_widths.size() - 1);
  }

  ir::Block& blk_;
  bool dirty_{false};
};

class InsnLifter {
 public:
  InsnLifter(const Instruction& in, ir::Block& blk) : in_(in), blk_(blk), b_(blk) {}

  void lift();

 private:
  // Operand access ----------------------------------------------------------
  Value reg_addr(int n) { return b_.add(b_.band(b_.get(Reg::PSW), c8(kBankMask)), c8(n)); }

  Value read_direct(uint8_t addr) {
    if (auto r = ir::reg_from_sfr(addr)) return b_.get(*r);
    return b_.load(addr < 0x80 ? Region::Iram : Region::Sfr, AccessKind::Data, c8(addr));
  }
  void write_direct(uint8_t addr, Value v) {
    if (auto r = ir::reg_from_sfr(addr)) return b_.put(*r, v);
    b_.store(addr < 0x80 ? Region::Iram : Region::Sfr, AccessKind::Data, c8(addr), v);
  }

  Value read(const Operand& op) {
    switch (op.kind) {
      case OperandKind::Accumulator:
        return b_.get(Reg::ACC);
      case OperandKind::Register:
        return b_.load(Region::Iram, AccessKind::RegisterBank, reg_addr(op.value));
      case OperandKind::Direct:
        return read_direct(static_cast<uint8_t>(op.value));
      case OperandKind::IndirectReg: {
        Value ri = b_.load(Region::Iram, AccessKind::RegisterBank, reg_addr(op.value));
        return b_.load(Region::Iram, AccessKind::Data, ri);
      }
      case OperandKind::Immediate8:
        return c8(op.value);
      default:
        throw UnliftableInstruction("unsupported byte operand in " + isa::format_instruction(in_));
    }
  }
  void write(const Operand& op, Value v) {
    switch (op.kind) {
      case OperandKind::Accumulator:
        return b_.put(Reg::ACC, v);
      case OperandKind::Register:
        return b_.store(Region::Iram, AccessKind::RegisterBank, reg_addr(op.value), v);
      case OperandKind::Direct:
        return write_direct(static_cast<uint8_t>(op.value), v);
      case OperandKind::IndirectReg: {
        Value ri = b_.load(Region::Iram, AccessKind::RegisterBank, reg_addr(op.value));
        return b_.store(Region::Iram, AccessKind::Data, ri, v);
      }
      default:
        throw UnliftableInstruction("unsupported destination in " + isa::format_instruction(in_));
    }
  }

  Value bit_read(uint8_t bit) {
    const auto loc = machine::bit_location(bit);
    return b_.ne(b_.band(read_direct(loc.byte), c8(loc.mask)), c8(0));
  }
  void bit_write(uint8_t bit, Value v) {
    const auto loc = machine::bit_location(bit);
    Value byte = read_direct(loc.byte);
    Value cleared = b_.band(byte, c8(static_cast<uint8_t>(~loc.mask)));
    write_direct(loc.byte, b_.bor(cleared, b_.ite(v, c8(loc.mask), c8(0))));
  }

  Value dptr() { return b_.concat(b_.get(Reg::DPH), b_.get(Reg::DPL)); }
  void set_dptr(Value v16) {
    b_.put(Reg::DPL, b_.extract(v16, 7, 0));
    b_.put(Reg::DPH, b_.extract(v16, 15, 8));
  }

  // Flags -------------------------------------------------------------------
  Value carry() { return b_.extract(b_.get(Reg::PSW), 7, 7); }
  Value with_flag(Value psw, uint8_t mask, Value v1) {
    return b_.bor(b_.band(psw, c8(static_cast<uint8_t>(~mask))), b_.ite(v1, c8(mask), c8(0)));
  }
  void set_flag(uint8_t mask, Value v1) { b_.put(Reg::PSW, with_flag(b_.get(Reg::PSW), mask, v1)); }
  void set_flags(Value cy, Value ac, Value ov) {
    Value psw = b_.get(Reg::PSW);
    psw = with_flag(psw, kCY, cy);
    psw = with_flag(psw, kAC, ac);
    psw = with_flag(psw, kOV, ov);
    b_.put(Reg::PSW, psw);
  }

  // Stack -------------------------------------------------------------------
  void push(Value v) {
    Value sp = b_.get(Reg::SP);
    Stmt trap;
    trap.kind = StmtKind::Trap;
    trap.trap = ir::TrapKind::StackOverflow;
    trap.a = b_.eq(sp, c8(0xFF));
    b_.emit(trap);
    Value sp1 = b_.add(sp, c8(1));
    b_.put(Reg::SP, sp1);
    b_.store(Region::Iram, AccessKind::Stack, sp1, v);
  }
  Value pop() {
    Value sp = b_.get(Reg::SP);
    Value v = b_.load(Region::Iram, AccessKind::Stack, sp);
    b_.put(Reg::SP, b_.sub(sp, c8(1)));
    return v;
  }

  // Terminators -------------------------------------------------------------
  void jump(Value target) {
    Stmt s;
    s.kind = StmtKind::Jump;
    s.a = target;
    b_.emit(s);
    if (target.is_temp) blk_.ends_in_indirect = true;
    else blk_.successors.push_back(static_cast<uint16_t>(target.v));
  }
  void cjump(Value cond) {
    const uint16_t taken = *in_.branch_target();
    const uint16_t fall = in_.next_address();
    if (!cond.is_temp) {
      jump(c16(cond.v ? taken : fall));
      return;
    }
    Stmt s;
    s.kind = StmtKind::CJump;
    s.a = cond;
    s.target = taken;
    s.fallthrough = fall;
    b_.emit(s);
    blk_.successors.push_back(taken);
    if (fall != taken) blk_.successors.push_back(fall);
  }

  void lift_body();

  const Instruction& in_;
  ir::Block& blk_;
  Builder b_;
};

void InsnLifter::lift() {
  Stmt boundary;
  boundary.kind = StmtKind::InstrBoundary;
  boundary.addr = in_.address;
  boundary.length = in_.length;
  blk_.stmts.push_back(boundary);
  blk_.instr_addrs.push_back(in_.address);

  const size_t before = blk_.stmts.size();
  lift_body();
  // The terminator (if any) must stay last; insert the parity refresh
  // ahead of it.
  if (b_.acc_or_psw_written()) {
    std::vector<Stmt> tail;
    if (blk_.stmts.size() > before) {
      const auto k = blk_.stmts.back().kind;
      if (k == StmtKind::Jump || k == StmtKind::CJump) {
        tail.push_back(blk_.stmts.back());
        blk_.stmts.pop_back();
      }
    }
    Value p = b_.assign(Op::Parity, 1, b_.get(Reg::ACC));
    Value psw = b_.get(Reg::PSW);
    b_.put(Reg::PSW, b_.bor(b_.band(psw, c8(static_cast<uint8_t>(~kP))), b_.zext(p, 8)));
    for (auto& s : tail) blk_.stmts.push_back(s);
  }
}

void InsnLifter::lift_body() {
  const auto& ops = in_.operands;
  const uint16_t next = in_.next_address();

  switch (in_.mnemonic) {
    case Mnemonic::NOP:
      return;

    case Mnemonic::ADD:
    case Mnemonic::ADDC: {
      Value a = b_.get(Reg::ACC);
      Value x = read(ops[1]);
      Value c = in_.mnemonic == Mnemonic::ADDC ? carry() : c1(0);
      Value sum = b_.add(b_.add(b_.zext(a, 9), b_.zext(x, 9)), b_.zext(c, 9));
      Value cy = b_.extract(sum, 8, 8);
      Value lo = b_.add(b_.add(b_.zext(b_.extract(a, 3, 0), 5), b_.zext(b_.extract(x, 3, 0), 5)),
                        b_.zext(c, 5));
      Value ac = b_.extract(lo, 4, 4);
      Value low7 = b_.add(b_.add(b_.zext(b_.extract(a, 6, 0), 8), b_.zext(b_.extract(x, 6, 0), 8)),
                          b_.zext(c, 8));
      Value ov = b_.bxor(b_.extract(low7, 7, 7), cy);
      b_.put(Reg::ACC, b_.extract(sum, 7, 0));
      set_flags(cy, ac, ov);
      return;
    }
    case Mnemonic::SUBB: {
      Value a = b_.get(Reg::ACC);
      Value x = read(ops[1]);
      Value c = carry();
      Value cy = b_.ult(b_.zext(a, 9), b_.add(b_.zext(x, 9), b_.zext(c, 9)));
      Value ac = b_.ult(b_.zext(b_.extract(a, 3, 0), 5),
                        b_.add(b_.zext(b_.extract(x, 3, 0), 5), b_.zext(c, 5)));
      Value b6 = b_.ult(b_.zext(b_.extract(a, 6, 0), 8),
                        b_.add(b_.zext(b_.extract(x, 6, 0), 8), b_.zext(c, 8)));
      b_.put(Reg::ACC, b_.sub(b_.sub(a, x), b_.zext(c, 8)));
      set_flags(cy, ac, b_.bxor(b6, cy));
      return;
    }
    case Mnemonic::INC:
      if (ops[0].kind == OperandKind::DPTR) {
        set_dptr(b_.add(dptr(), c16(1)));
      } else {
        write(ops[0], b_.add(read(ops[0]), c8(1)));
      }
      return;
    case Mnemonic::DEC:
      write(ops[0], b_.sub(read(ops[0]), c8(1)));
      return;
    case Mnemonic::MUL: {
      Value r = b_.assign(Op::Mul, 16, b_.zext(b_.get(Reg::ACC), 16), b_.zext(b_.get(Reg::B), 16));
      Value hi = b_.extract(r, 15, 8);
      b_.put(Reg::ACC, b_.extract(r, 7, 0));
      b_.put(Reg::B, hi);
      Value psw = with_flag(b_.get(Reg::PSW), kCY, c1(0));
      b_.put(Reg::PSW, with_flag(psw, kOV, b_.ne(hi, c8(0))));
      return;
    }
    case Mnemonic::DIV: {
      Value a = b_.get(Reg::ACC);
      Value x = b_.get(Reg::B);
      Value zero = b_.eq(x, c8(0));
      Value q = b_.assign(Op::UDiv, 8, a, x);
      Value r = b_.assign(Op::URem, 8, a, x);
      b_.put(Reg::ACC, b_.ite(zero, a, q));
      b_.put(Reg::B, b_.ite(zero, x, r));
      Value psw = with_flag(b_.get(Reg::PSW), kCY, c1(0));
      b_.put(Reg::PSW, with_flag(psw, kOV, zero));
      return;
    }
    case Mnemonic::DA: {
      Value a = b_.get(Reg::ACC);
      Value psw = b_.get(Reg::PSW);
      Value cy0 = b_.extract(psw, 7, 7);
      Value ac = b_.extract(psw, 6, 6);
      Value adj1 = b_.bor(b_.ult(c8(9), b_.zext(b_.extract(a, 3, 0), 8)), ac);
      Value v1 = b_.ite(adj1, b_.add(b_.zext(a, 9), Value::c(6, 9)), b_.zext(a, 9));
      Value cy1 = b_.bor(cy0, b_.extract(v1, 8, 8));
      Value lo1 = b_.extract(v1, 7, 0);
      Value adj2 = b_.bor(b_.ult(c8(9), b_.zext(b_.extract(lo1, 7, 4), 8)), cy1);
      Value v2 = b_.ite(adj2, b_.add(b_.zext(lo1, 9), Value::c(0x60, 9)), b_.zext(lo1, 9));
      Value cy2 = b_.bor(cy1, b_.extract(v2, 8, 8));
      b_.put(Reg::ACC, b_.extract(v2, 7, 0));
      set_flag(kCY, cy2);
      return;
    }

    case Mnemonic::ANL:
    case Mnemonic::ORL:
    case Mnemonic::XRL: {
      if (ops[0].kind == OperandKind::Carry) {
        Value bit = bit_read(static_cast<uint8_t>(ops[1].value));
        if (ops[1].kind == OperandKind::NegatedBit) bit = b_.bxor(bit, c1(1));
        Value cy = carry();
        set_flag(kCY, in_.mnemonic == Mnemonic::ANL ? b_.band(cy, bit) : b_.bor(cy, bit));
        return;
      }
      Value x = read(ops[0]);
      Value y = read(ops[1]);
      Value r = in_.mnemonic == Mnemonic::ANL ? b_.band(x, y)
                : in_.mnemonic == Mnemonic::ORL ? b_.bor(x, y)
                                                : b_.bxor(x, y);
      write(ops[0], r);
      return;
    }

    case Mnemonic::CLR:
      if (ops[0].kind == OperandKind::Accumulator) b_.put(Reg::ACC, c8(0));
      else if (ops[0].kind == OperandKind::Carry) set_flag(kCY, c1(0));
      else bit_write(static_cast<uint8_t>(ops[0].value), c1(0));
      return;
    case Mnemonic::SETB:
      if (ops[0].kind == OperandKind::Carry) set_flag(kCY, c1(1));
      else bit_write(static_cast<uint8_t>(ops[0].value), c1(1));
      return;
    case Mnemonic::CPL:
      if (ops[0].kind == OperandKind::Accumulator) {
        b_.put(Reg::ACC, b_.bnot(b_.get(Reg::ACC)));
      } else if (ops[0].kind == OperandKind::Carry) {
        set_flag(kCY, b_.bxor(carry(), c1(1)));
      } else {
        const uint8_t bit = static_cast<uint8_t>(ops[0].value);
        bit_write(bit, b_.bxor(bit_read(bit), c1(1)));
      }
      return;

    case Mnemonic::RL: {
      Value a = b_.get(Reg::ACC);
      b_.put(Reg::ACC, b_.bor(b_.shl(a, 1), b_.lshr(a, 7)));
      return;
    }
    case Mnemonic::RR: {
      Value a = b_.get(Reg::ACC);
      b_.put(Reg::ACC, b_.bor(b_.lshr(a, 1), b_.shl(a, 7)));
      return;
    }
    case Mnemonic::RLC: {
      Value a = b_.get(Reg::ACC);
      Value c = carry();
      b_.put(Reg::ACC, b_.bor(b_.shl(a, 1), b_.zext(c, 8)));
      set_flag(kCY, b_.extract(a, 7, 7));
      return;
    }
    case Mnemonic::RRC: {
      Value a = b_.get(Reg::ACC);
      Value c = carry();
      b_.put(Reg::ACC, b_.bor(b_.lshr(a, 1), b_.shl(b_.zext(c, 8), 7)));
      set_flag(kCY, b_.extract(a, 0, 0));
      return;
    }
    case Mnemonic::SWAP: {
      Value a = b_.get(Reg::ACC);
      b_.put(Reg::ACC, b_.bor(b_.shl(a, 4), b_.lshr(a, 4)));
      return;
    }

    case Mnemonic::MOV:
      if (ops[0].kind == OperandKind::DPTR) {
        b_.put(Reg::DPL, c8(ops[1].value));
        b_.put(Reg::DPH, c8(ops[1].value >> 8));
      } else if (ops[0].kind == OperandKind::Carry) {
        set_flag(kCY, bit_read(static_cast<uint8_t>(ops[1].value)));
      } else if (ops[0].kind == OperandKind::BitAddress) {
        bit_write(static_cast<uint8_t>(ops[0].value), carry());
      } else {
        write(ops[0], read(ops[1]));
      }
      return;
    case Mnemonic::MOVC: {
      Value base = ops[1].kind == OperandKind::CodeIndexedPC ? c16(next) : dptr();
      Value addr = b_.add(b_.zext(b_.get(Reg::ACC), 16), base);
      b_.put(Reg::ACC, b_.load(Region::Code, AccessKind::Data, addr));
      return;
    }
    case Mnemonic::MOVX: {
      const bool to_acc = ops[0].kind == OperandKind::Accumulator;
      const Operand& mem = to_acc ? ops[1] : ops[0];
      Value addr;
      if (mem.kind == OperandKind::IndirectDPTR) {
        addr = dptr();
      } else {
        Value ri = b_.load(Region::Iram, AccessKind::RegisterBank, reg_addr(mem.value));
        addr = b_.concat(read_direct(0xA0), ri);
      }
      if (to_acc) b_.put(Reg::ACC, b_.load(Region::Xram, AccessKind::Data, addr));
      else b_.store(Region::Xram, AccessKind::Data, addr, b_.get(Reg::ACC));
      return;
    }
    case Mnemonic::PUSH:
      push(read_direct(static_cast<uint8_t>(ops[0].value)));
      return;
    case Mnemonic::POP:
      write_direct(static_cast<uint8_t>(ops[0].value), pop());
      return;
    case Mnemonic::XCH: {
      Value a = b_.get(Reg::ACC);
      Value x = read(ops[1]);
      write(ops[1], a);
      b_.put(Reg::ACC, x);
      return;
    }
    case Mnemonic::XCHD: {
      Value a = b_.get(Reg::ACC);
      Value x = read(ops[1]);
      write(ops[1], b_.bor(b_.band(x, c8(0xF0)), b_.band(a, c8(0x0F))));
      b_.put(Reg::ACC, b_.bor(b_.band(a, c8(0xF0)), b_.band(x, c8(0x0F))));
      return;
    }

    case Mnemonic::AJMP:
    case Mnemonic::LJMP:
    case Mnemonic::SJMP:
      jump(c16(*in_.branch_target()));
      return;
    case Mnemonic::JMP:
      jump(b_.add(b_.zext(b_.get(Reg::ACC), 16), dptr()));
      return;
    case Mnemonic::JC:
      cjump(carry());
      return;
    case Mnemonic::JNC:
      cjump(b_.eq(carry(), c1(0)));
      return;
    case Mnemonic::JZ:
      cjump(b_.eq(b_.get(Reg::ACC), c8(0)));
      return;
    case Mnemonic::JNZ:
      cjump(b_.ne(b_.get(Reg::ACC), c8(0)));
      return;
    case Mnemonic::JB:
      cjump(bit_read(static_cast<uint8_t>(ops[0].value)));
      return;
    case Mnemonic::JNB:
      cjump(b_.eq(bit_read(static_cast<uint8_t>(ops[0].value)), c1(0)));
      return;
    case Mnemonic::JBC: {
      const uint8_t bit = static_cast<uint8_t>(ops[0].value);
      Value was_set = bit_read(bit);
      bit_write(bit, c1(0));
      cjump(was_set);
      return;
    }
    case Mnemonic::CJNE: {
      Value x = read(ops[0]);
      Value y = read(ops[1]);
      set_flag(kCY, b_.ult(x, y));
      cjump(b_.ne(x, y));
      return;
    }
    case Mnemonic::DJNZ: {
      Value v = b_.sub(read(ops[0]), c8(1));
      write(ops[0], v);
      cjump(b_.ne(v, c8(0)));
      return;
    }
    case Mnemonic::ACALL:
    case Mnemonic::LCALL: {
      Stmt mark;
      mark.kind = StmtKind::CallMark;
      mark.target = next;
      b_.emit(mark);
      push(c8(next & 0xFF));
      push(c8(next >> 8));
      blk_.ends_in_call = true;
      jump(c16(*in_.branch_target()));
      return;
    }
    case Mnemonic::RET:
    case Mnemonic::RETI: {
      Stmt mark;
      mark.kind = StmtKind::RetMark;
      mark.reti = in_.mnemonic == Mnemonic::RETI;
      b_.emit(mark);
      Value hi = pop();
      Value lo = pop();
      blk_.ends_in_return = true;
      jump(b_.concat(hi, lo));
      return;
    }
    case Mnemonic::Reserved:
      break;
  }
  throw UnliftableInstruction("cannot lift " + isa::format_instruction(in_));
}

}  // namespace

void lift_instruction(const Instruction& insn, ir::Block& block) { InsnLifter(insn, block).lift(); }

ir::Block lift_block(std::span<const uint8_t> image, uint16_t addr) {
  ir::Block blk;
  blk.entry = addr;
  Instruction in = isa::decode(image, addr);
  while (true) {
    lift_instruction(in, blk);
    if (in.is_control_flow()) return blk;
    const uint32_t pc = in.address + in.length;
    auto next = isa::try_decode(image, pc);
    if (!next) {
      Stmt j;
      j.kind = StmtKind::Jump;
      j.a = c16(pc);
      blk.stmts.push_back(j);
      blk.successors.push_back(static_cast<uint16_t>(pc));
      return blk;
    }
    in = std::move(*next);
  }
}

Program::Program(std::vector<uint8_t> image) : image_(std::move(image)) {}

const ir::Block& Program::block(uint16_t addr) {
  std::lock_guard<std::mutex> lock(mu_);
  auto it = cache_.find(addr);
  if (it != cache_.end()) return *it->second;
  auto blk = std::make_unique<ir::Block>(lift_block(image_, addr));
  const ir::Block& ref = *blk;
  cache_.emplace(addr, std::move(blk));
  return ref;
}

size_t Program::cached_blocks() const {
  std::lock_guard<std::mutex> lock(mu_);
  return cache_.size();
}

uint16_t exec_block(const ir::Block& blk, machine::ConcreteState& st, std::span<const uint8_t> image) {
  std::vector<uint32_t> temps(blk.temp_widths.size());
  auto val = [&](const Value& v) { return v.is_temp ? temps[v.v] : v.v; };
  uint16_t cur = blk.entry;
  for (const Stmt& s : blk.stmts) {
    switch (s.kind) {
      case StmtKind::InstrBoundary:
        cur = s.addr;
        ++st.steps;
        break;
      case StmtKind::GetReg:
        temps[s.dst] = st.sfr_get(ir::reg_sfr_address(s.reg));
        break;
      case StmtKind::PutReg:
        st.sfr_set(ir::reg_sfr_address(s.reg), static_cast<uint8_t>(val(s.a)));
        break;
      case StmtKind::Load: {
        const uint32_t a = val(s.a);
        switch (s.region) {
          case Region::Code: temps[s.dst] = machine::code_read(image, a); break;
          case Region::Iram: temps[s.dst] = st.iram[a & 0xFF]; break;
          case Region::Sfr: temps[s.dst] = st.sfr_get(static_cast<uint8_t>(a)); break;
          case Region::Xram: temps[s.dst] = st.xram_read(static_cast<uint16_t>(a)); break;
        }
        break;
      }
      case StmtKind::Store: {
        const uint32_t a = val(s.a);
        const uint8_t v = static_cast<uint8_t>(val(s.b));
        switch (s.region) {
          case Region::Code: throw std::logic_error("store to CODE");
          case Region::Iram: st.iram[a & 0xFF] = v; break;
          case Region::Sfr: st.sfr_set(static_cast<uint8_t>(a), v); break;
          case Region::Xram: st.xram_write(static_cast<uint16_t>(a), v); break;
        }
        break;
      }
      case StmtKind::Assign:
        temps[s.dst] = ir::eval_op(s.op, s.width, s.hi, s.lo, val(s.a), val(s.b), val(s.c), s.b.width);
        break;
      case StmtKind::Trap:
        if (val(s.a)) throw machine::MachineError(machine::MachineErrorKind::StackOverflow, cur, "stack overflow");
        break;
      case StmtKind::CallMark:
      case StmtKind::RetMark:
        break;
      case StmtKind::CJump:
        st.pc = val(s.a) ? s.target : s.fallthrough;
        return st.pc;
      case StmtKind::Jump:
        st.pc = static_cast<uint16_t>(val(s.a));
        return st.pc;
    }
  }
  st.pc = blk.end_address();
  return st.pc;
}

}  // namespace fwscope::lifter
