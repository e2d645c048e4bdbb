#include "fwscope/machine.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>
#include <vector>

namespace fwscope::machine {

using isa::Instruction;
using isa::Mnemonic;
using isa::Operand;
using isa::OperandKind;

ConcreteState ConcreteState::reset() {
  ConcreteState s;
  s.sfr_set(sfr::SP, kResetSP);
  return s;
}

bool ConcreteState::bit_read(uint8_t bit) const {
  const BitLocation loc = bit_location(bit);
  return (direct_read(loc.byte) & loc.mask) != 0;
}

void ConcreteState::bit_write(uint8_t bit, bool v) {
  const BitLocation loc = bit_location(bit);
  uint8_t b = direct_read(loc.byte);
  b = v ? (b | loc.mask) : (b & ~loc.mask);
  direct_write(loc.byte, b);
}

std::string ConcreteState::dump() const {
  std::ostringstream out;
  char buf[96];
  std::snprintf(buf, sizeof buf, "PC=%04X A=%02X B=%02X PSW=%02X SP=%02X DPTR=%04X steps=%llu%s\n",
                pc, acc(), sfr_get(sfr::B), psw(), sp(), dptr(),
                static_cast<unsigned long long>(steps), halted ? " halted" : "");
  out << buf;
  auto row = [&](const char* tag, unsigned base, const uint8_t* data) {
    std::snprintf(buf, sizeof buf, "%s %02X:", tag, base);
    out << buf;
    for (int i = 0; i < 16; ++i) {
      std::snprintf(buf, sizeof buf, " %02X", data[i]);
      out << buf;
    }
    out << '\n';
  };
  for (unsigned base = 0; base < 256; base += 16) row("IRAM", base, &iram[base]);
  for (unsigned base = 0; base < 128; base += 16) row("SFR ", base + 0x80, &sfr[base]);
  std::vector<std::pair<uint16_t, uint8_t>> x(xram.begin(), xram.end());
  std::sort(x.begin(), x.end());
  for (auto [a, v] : x) {
    std::snprintf(buf, sizeof buf, "XRAM %04X: %02X\n", a, v);
    out << buf;
  }
  return out.str();
}

uint8_t code_read(std::span<const uint8_t> image, uint32_t addr) {
  addr &= 0xFFFF;
  return addr < image.size() ? image[addr] : 0;
}

namespace {

class Interp {
 public:
  Interp(ConcreteState& s, std::span<const uint8_t> image) : s_(s), image_(image) {}

  void exec(const Instruction& in) {
    const uint16_t next = in.next_address();
    const auto& ops = in.operands;
    uint16_t pc = next;

    switch (in.mnemonic) {
      case Mnemonic::NOP:
        break;

      case Mnemonic::ADD:
      case Mnemonic::ADDC: {
        const uint8_t a = s_.acc();
        const uint8_t b = read(ops[1]);
        const int c = in.mnemonic == Mnemonic::ADDC ? cy() : 0;
        const int sum = a + b + c;
        const bool carry = sum > 0xFF;
        const bool aux = ((a & 0xF) + (b & 0xF) + c) > 0xF;
        const bool c6 = ((a & 0x7F) + (b & 0x7F) + c) > 0x7F;
        set_acc(static_cast<uint8_t>(sum));
        set_flags(carry, aux, c6 != carry);
        break;
      }
      case Mnemonic::SUBB: {
        const uint8_t a = s_.acc();
        const uint8_t b = read(ops[1]);
        const int c = cy();
        const bool borrow = a < b + c;
        const bool aux = (a & 0xF) < (b & 0xF) + c;
        const bool b6 = (a & 0x7F) < (b & 0x7F) + c;
        set_acc(static_cast<uint8_t>(a - b - c));
        set_flags(borrow, aux, b6 != borrow);
        break;
      }
      case Mnemonic::INC:
        if (ops[0].kind == OperandKind::DPTR) {
          const uint16_t d = static_cast<uint16_t>(s_.dptr() + 1);
          s_.sfr_set(sfr::DPL, d & 0xFF);
          s_.sfr_set(sfr::DPH, d >> 8);
        } else {
          write(ops[0], static_cast<uint8_t>(read(ops[0]) + 1));
        }
        break;
      case Mnemonic::DEC:
        write(ops[0], static_cast<uint8_t>(read(ops[0]) - 1));
        break;
      case Mnemonic::MUL: {
        const unsigned r = s_.acc() * s_.sfr_get(sfr::B);
        set_acc(r & 0xFF);
        s_.sfr_set(sfr::B, static_cast<uint8_t>(r >> 8));
        set_cy(false);
        set_ov(r > 0xFF);
        break;
      }
      case Mnemonic::DIV: {
        const uint8_t a = s_.acc();
        const uint8_t b = s_.sfr_get(sfr::B);
        set_cy(false);
        if (b == 0) {
          set_ov(true);
        } else {
          set_acc(a / b);
          s_.sfr_set(sfr::B, a % b);
          set_ov(false);
        }
        break;
      }
      case Mnemonic::DA: {
        unsigned v = s_.acc();
        bool c = cy();
        if ((v & 0x0F) > 9 || (s_.psw() & psw::AC)) {
          v += 0x06;
          if (v > 0xFF) c = true;
          v &= 0xFF;
        }
        if (((v >> 4) & 0x0F) > 9 || c) {
          v += 0x60;
          if (v > 0xFF) c = true;
          v &= 0xFF;
        }
        set_acc(static_cast<uint8_t>(v));
        set_cy(c);
        break;
      }

      case Mnemonic::ANL:
      case Mnemonic::ORL:
      case Mnemonic::XRL: {
        if (ops[0].kind == OperandKind::Carry) {
          bool b = s_.bit_read(static_cast<uint8_t>(ops[1].value));
          if (ops[1].kind == OperandKind::NegatedBit) b = !b;
          set_cy(in.mnemonic == Mnemonic::ANL ? (cy() && b) : (cy() || b));
          break;
        }
        const uint8_t x = read(ops[0]);
        const uint8_t y = read(ops[1]);
        uint8_t r = 0;
        if (in.mnemonic == Mnemonic::ANL) r = x & y;
        else if (in.mnemonic == Mnemonic::ORL) r = x | y;
        else r = x ^ y;
        write(ops[0], r);
        break;
      }

      case Mnemonic::CLR:
        if (ops[0].kind == OperandKind::Accumulator) set_acc(0);
        else if (ops[0].kind == OperandKind::Carry) set_cy(false);
        else s_.bit_write(static_cast<uint8_t>(ops[0].value), false);
        break;
      case Mnemonic::SETB:
        if (ops[0].kind == OperandKind::Carry) set_cy(true);
        else s_.bit_write(static_cast<uint8_t>(ops[0].value), true);
        break;
      case Mnemonic::CPL:
        if (ops[0].kind == OperandKind::Accumulator) set_acc(static_cast<uint8_t>(~s_.acc()));
        else if (ops[0].kind == OperandKind::Carry) set_cy(!cy());
        else {
          const uint8_t b = static_cast<uint8_t>(ops[0].value);
          s_.bit_write(b, !s_.bit_read(b));
        }
        break;

      case Mnemonic::RL: {
        const uint8_t a = s_.acc();
        set_acc(static_cast<uint8_t>((a << 1) | (a >> 7)));
        break;
      }
      case Mnemonic::RR: {
        const uint8_t a = s_.acc();
        set_acc(static_cast<uint8_t>((a >> 1) | (a << 7)));
        break;
      }
      case Mnemonic::RLC: {
        const uint8_t a = s_.acc();
        const int c = cy();
        set_cy(a & 0x80);
        set_acc(static_cast<uint8_t>((a << 1) | c));
        break;
      }
      case Mnemonic::RRC: {
        const uint8_t a = s_.acc();
        const int c = cy();
        set_cy(a & 0x01);
        set_acc(static_cast<uint8_t>((a >> 1) | (c << 7)));
        break;
      }
      case Mnemonic::SWAP: {
        const uint8_t a = s_.acc();
        set_acc(static_cast<uint8_t>((a << 4) | (a >> 4)));
        break;
      }

      case Mnemonic::MOV:
        if (ops[0].kind == OperandKind::DPTR) {
          s_.sfr_set(sfr::DPL, ops[1].value & 0xFF);
          s_.sfr_set(sfr::DPH, (ops[1].value >> 8) & 0xFF);
        } else if (ops[0].kind == OperandKind::Carry) {
          set_cy(s_.bit_read(static_cast<uint8_t>(ops[1].value)));
        } else if (ops[0].kind == OperandKind::BitAddress) {
          s_.bit_write(static_cast<uint8_t>(ops[0].value), cy());
        } else {
          write(ops[0], read(ops[1]));
        }
        break;
      case Mnemonic::MOVC: {
        const uint16_t base = ops[1].kind == OperandKind::CodeIndexedPC ? next : s_.dptr();
        set_acc(code_read(image_, static_cast<uint16_t>(base + s_.acc())));
        break;
      }
      case Mnemonic::MOVX:
        if (ops[0].kind == OperandKind::Accumulator) set_acc(s_.xram_read(xaddr(ops[1])));
        else s_.xram_write(xaddr(ops[0]), s_.acc());
        break;
      case Mnemonic::PUSH:
        push(s_.direct_read(static_cast<uint8_t>(ops[0].value)));
        break;
      case Mnemonic::POP:
        s_.direct_write(static_cast<uint8_t>(ops[0].value), pop());
        break;
      case Mnemonic::XCH: {
        const uint8_t a = s_.acc();
        const uint8_t x = read(ops[1]);
        write(ops[1], a);
        set_acc(x);
        break;
      }
      case Mnemonic::XCHD: {
        const uint8_t a = s_.acc();
        const uint8_t x = read(ops[1]);
        write(ops[1], static_cast<uint8_t>((x & 0xF0) | (a & 0x0F)));
        set_acc(static_cast<uint8_t>((a & 0xF0) | (x & 0x0F)));
        break;
      }

      case Mnemonic::AJMP:
      case Mnemonic::LJMP:
      case Mnemonic::SJMP:
        pc = *in.branch_target();
        break;
      case Mnemonic::JMP:
        pc = static_cast<uint16_t>(s_.acc() + s_.dptr());
        break;
      case Mnemonic::JC:
        if (cy()) pc = *in.branch_target();
        break;
      case Mnemonic::JNC:
        if (!cy()) pc = *in.branch_target();
        break;
      case Mnemonic::JZ:
        if (s_.acc() == 0) pc = *in.branch_target();
        break;
      case Mnemonic::JNZ:
        if (s_.acc() != 0) pc = *in.branch_target();
        break;
      case Mnemonic::JB:
        if (s_.bit_read(static_cast<uint8_t>(ops[0].value))) pc = *in.branch_target();
        break;
      case Mnemonic::JNB:
        if (!s_.bit_read(static_cast<uint8_t>(ops[0].value))) pc = *in.branch_target();
        break;
      case Mnemonic::JBC: {
        const uint8_t b = static_cast<uint8_t>(ops[0].value);
        if (s_.bit_read(b)) {
          s_.bit_write(b, false);
          pc = *in.branch_target();
        }
        break;
      }
      case Mnemonic::CJNE: {
        const uint8_t x = read(ops[0]);
        const uint8_t y = read(ops[1]);
        set_cy(x < y);
        if (x != y) pc = *in.branch_target();
        break;
      }
      case Mnemonic::DJNZ: {
        const uint8_t v = static_cast<uint8_t>(read(ops[0]) - 1);
        write(ops[0], v);
        if (v != 0) pc = *in.branch_target();
        break;
      }
      case Mnemonic::ACALL:
      case Mnemonic::LCALL:
        push(next & 0xFF);
        push(next >> 8);
        pc = *in.branch_target();
        break;
      case Mnemonic::RET:
      case Mnemonic::RETI: {
        const uint8_t hi = pop();
        const uint8_t lo = pop();
        pc = static_cast<uint16_t>((hi << 8) | lo);
        break;
      }
      case Mnemonic::Reserved:
        throw MachineError(MachineErrorKind::IllegalOpcode, in.address, "reserved opcode");
    }

    // PSW.P is hard-wired to the parity of ACC.
    s_.sfr_set(sfr::PSW, static_cast<uint8_t>((s_.psw() & ~psw::P) | parity8(s_.acc())));
    s_.pc = pc;
  }

 private:
  int cy() const { return (s_.psw() & psw::CY) ? 1 : 0; }
  void set_psw_bit(uint8_t mask, bool v) {
    const uint8_t p = s_.psw();
    s_.sfr_set(sfr::PSW, v ? (p | mask) : (p & ~mask));
  }
  void set_cy(bool v) { set_psw_bit(psw::CY, v); }
  void set_ov(bool v) { set_psw_bit(psw::OV, v); }
  void set_flags(bool c, bool ac, bool ov) {
    set_cy(c);
    set_psw_bit(psw::AC, ac);
    set_ov(ov);
  }
  void set_acc(uint8_t v) { s_.sfr_set(sfr::ACC, v); }

  uint8_t read(const Operand& op) const {
    switch (op.kind) {
      case OperandKind::Accumulator: return s_.acc();
      case OperandKind::Register: return s_.reg(op.value);
      case OperandKind::Direct: return s_.direct_read(static_cast<uint8_t>(op.value));
      case OperandKind::IndirectReg: return s_.iram[s_.reg(op.value)];
      case OperandKind::Immediate8: return static_cast<uint8_t>(op.value);
      default:
        throw std::logic_error("unsupported byte operand");
    }
  }
  void write(const Operand& op, uint8_t v) {
    switch (op.kind) {
      case OperandKind::Accumulator: set_acc(v); return;
      case OperandKind::Register: s_.set_reg(op.value, v); return;
      case OperandKind::Direct: s_.direct_write(static_cast<uint8_t>(op.value), v); return;
      case OperandKind::IndirectReg: s_.iram[s_.reg(op.value)] = v; return;
      default:
        throw std::logic_error("unsupported byte destination");
    }
  }
  uint16_t xaddr(const Operand& op) const {
    if (op.kind == OperandKind::IndirectDPTR) return s_.dptr();
    return static_cast<uint16_t>((s_.sfr_get(sfr::P2) << 8) | s_.reg(op.value));
  }

  void push(uint8_t v) {
    const uint8_t sp = s_.sp();
    if (sp == 0xFF) throw MachineError(MachineErrorKind::StackOverflow, s_.pc, "stack overflow");
    s_.sfr_set(sfr::SP, static_cast<uint8_t>(sp + 1));
    s_.iram[static_cast<uint8_t>(sp + 1)] = v;
  }
  uint8_t pop() {
    const uint8_t sp = s_.sp();
    const uint8_t v = s_.iram[sp];
    s_.sfr_set(sfr::SP, static_cast<uint8_t>(sp - 1));
    return v;
  }

  ConcreteState& s_;
  std::span<const uint8_t> image_;
};

}  // namespace

void step(ConcreteState& state, std::span<const uint8_t> image) {
  if (state.halted) throw MachineError(MachineErrorKind::Halted, state.pc, "machine halted");
  Instruction in;
  try {
    in = isa::decode(image, state.pc);
  } catch (const isa::DecodeError& e) {
    throw MachineError(e.kind() == isa::DecodeErrorKind::IllegalOpcode
                           ? MachineErrorKind::IllegalOpcode
                           : MachineErrorKind::TruncatedInstruction,
                       state.pc, e.what());
  }
  Interp(state, image).exec(in);
  ++state.steps;
}

ConcreteState step_concrete(ConcreteState state, std::span<const uint8_t> image) {
  step(state, image);
  return state;
}

uint64_t run(ConcreteState& state, std::span<const uint8_t> image, uint64_t max_steps,
             std::optional<uint16_t> stop_pc) {
  uint64_t n = 0;
  while (n < max_steps && !state.halted) {
    if (stop_pc && state.pc == *stop_pc) break;
    step(state, image);
    ++n;
  }
  return n;
}

uint16_t vector_address(InterruptSource s) {
  return static_cast<uint16_t>(0x03 + 8 * static_cast<int>(s));
}

uint8_t ie_enable_bit(InterruptSource s) { return static_cast<uint8_t>(1u << static_cast<int>(s)); }

std::string_view interrupt_name(InterruptSource s) {
  switch (s) {
    case InterruptSource::External0: return "External0";
    case InterruptSource::Timer0: return "Timer0";
    case InterruptSource::External1: return "External1";
    case InterruptSource::Timer1: return "Timer1";
    case InterruptSource::Serial: return "Serial";
    case InterruptSource::Timer2: return "Timer2";
  }
  return "?";
}

std::optional<InterruptSource> interrupt_from_name(std::string_view name) {
  for (auto s : kInterruptSources)
    if (interrupt_name(s) == name) return s;
  return std::nullopt;
}

IsrMap discover_isrs(std::span<const uint8_t> image) {
  IsrMap out;
  for (auto s : kInterruptSources) {
    const uint16_t vec = vector_address(s);
    auto in = isa::try_decode(image, vec);
    if (!in) continue;
    switch (in->mnemonic) {
      case Mnemonic::RETI:
        break;
      case Mnemonic::LJMP:
      case Mnemonic::AJMP:
      case Mnemonic::SJMP:
        out[s] = *in->branch_target();
        break;
      default:
        out[s] = vec;
        break;
    }
  }
  return out;
}

}  // namespace fwscope::machine
