#include <algorithm>
#include <cstdio>
#include <deque>

#include "fwscope/machine.hpp"
#include "fwscope/usbstatic.hpp"

namespace fwscope::usbstatic {

using isa::Instruction;
using isa::Mnemonic;
using isa::Operand;
using isa::OperandKind;

namespace {

constexpr uint8_t kPsw = 0xD0;
constexpr uint8_t kB = 0xF0;
constexpr uint8_t kDpl = 0x82;
constexpr uint8_t kDph = 0x83;

uint8_t bit_byte(int bit) {
  return bit < 0x80 ? static_cast<uint8_t>(0x20 + (bit >> 3)) : static_cast<uint8_t>(bit & 0xF8);
}

std::optional<LocKey> loc_of(const Operand& op) {
  switch (op.kind) {
    case OperandKind::Accumulator: return acc_key();
    case OperandKind::Register: return iram_key(static_cast<uint32_t>(op.value));
    case OperandKind::Direct: return direct_key(static_cast<uint8_t>(op.value));
    case OperandKind::DPTR: return kDptrKey;
    case OperandKind::Carry: return sfr_key(kPsw);
    case OperandKind::BitAddress:
    case OperandKind::NegatedBit: return direct_key(bit_byte(op.value));
    default: return std::nullopt;
  }
}

bool plain_loc(const Operand& op) {
  return op.kind == OperandKind::Accumulator || op.kind == OperandKind::Register || op.kind == OperandKind::Direct;
}

void add(std::vector<LocKey>& v, std::optional<LocKey> k) {
  if (k && std::find(v.begin(), v.end(), *k) == v.end()) v.push_back(*k);
}

void use_operand(DefUse& d, const Operand& op) {
  if (op.kind == OperandKind::IndirectReg) {
    d.addr = iram_key(static_cast<uint32_t>(op.value));
    d.region = Region::Iram;
    add(d.uses, d.addr);
  } else {
    add(d.uses, loc_of(op));
  }
}

void def_operand(DefUse& d, const Operand& op) {
  if (op.kind == OperandKind::IndirectReg) {
    d.addr = iram_key(static_cast<uint32_t>(op.value));
    d.region = Region::Iram;
    add(d.uses, d.addr);
  } else {
    add(d.defs, loc_of(op));
  }
}

}  // namespace

LocKey direct_key(uint8_t addr) { return addr < 0x80 ? iram_key(addr) : sfr_key(addr); }

std::string loc_key_name(LocKey k) {
  if (k == kDptrKey) return "DPTR";
  char buf[24];
  if (k >= 0x100) {
    const auto n = isa::sfr_name(static_cast<uint8_t>(k - 0x100));
    if (n) return std::string(*n);
    std::snprintf(buf, sizeof buf, "SFR[0x%02x]", k - 0x100);
  } else {
    std::snprintf(buf, sizeof buf, "IRAM[0x%02x]", k);
  }
  return buf;
}

const Instruction* CodeGraph::at(uint16_t addr) const {
  auto it = insns.find(addr);
  return it == insns.end() ? nullptr : &it->second;
}

CodeGraph CodeGraph::build(std::span<const uint8_t> image, const std::set<uint16_t>& extra_entries) {
  CodeGraph g;
  std::deque<uint16_t> work;
  auto entry = [&](uint16_t a) {
    if (a < image.size() && g.entries.insert(a).second) work.push_back(a);
  };
  if (!image.empty()) entry(0);
  for (const auto& [src, e] : machine::discover_isrs(image)) entry(e);
  for (auto e : extra_entries) entry(e);
  std::set<uint16_t> seen;
  while (!work.empty()) {
    const uint16_t a = work.front();
    work.pop_front();
    if (!seen.insert(a).second) continue;
    auto in = isa::try_decode(image, a);
    if (!in) continue;
    std::vector<uint16_t> next;
    const auto target = in->branch_target();
    if (in->is_call()) {
      if (target) entry(*target);
      next.push_back(in->next_address());
    } else if (in->is_return() || in->mnemonic == Mnemonic::JMP) {
    } else if (in->is_conditional_branch()) {
      next.push_back(in->next_address());
      if (target) next.push_back(*target);
    } else if (in->is_control_flow()) {
      if (target) next.push_back(*target);
    } else {
      next.push_back(in->next_address());
    }
    std::vector<uint16_t> kept;
    for (auto n : next) {
      if (n >= image.size()) continue;
      if (std::find(kept.begin(), kept.end(), n) == kept.end()) kept.push_back(n);
      work.push_back(n);
    }
    g.succ[a] = std::move(kept);
    g.insns.emplace(a, std::move(*in));
  }
  return g;
}

DefUse describe(const Instruction& in) {
  DefUse d;
  const auto& ops = in.operands;
  auto k0 = [&] { return ops[0].kind; };
  auto k1 = [&] { return ops[1].kind; };
  switch (in.mnemonic) {
    case Mnemonic::MOV:
      if (k0() == OperandKind::DPTR) {
        d.category = InsnCategory::Seed;
        d.dst = kDptrKey;
        d.constant = static_cast<uint16_t>(ops[1].value);
        add(d.defs, kDptrKey);
      } else if (k1() == OperandKind::Immediate8 && plain_loc(ops[0])) {
        d.category = InsnCategory::Seed;
        d.dst = loc_of(ops[0]);
        d.constant = static_cast<uint16_t>(ops[1].value & 0xFF);
        add(d.defs, d.dst);
      } else if (k0() == OperandKind::IndirectReg) {
        d.category = InsnCategory::IndStore;
        def_operand(d, ops[0]);
        if (plain_loc(ops[1])) {
          d.value = loc_of(ops[1]);
          add(d.uses, d.value);
        }
      } else if (k1() == OperandKind::IndirectReg) {
        d.category = InsnCategory::IndLoad;
        use_operand(d, ops[1]);
        d.dst = loc_of(ops[0]);
        add(d.defs, d.dst);
      } else if (plain_loc(ops[0]) && plain_loc(ops[1])) {
        d.category = InsnCategory::Copy;
        d.src = loc_of(ops[1]);
        d.dst = loc_of(ops[0]);
        add(d.uses, d.src);
        add(d.defs, d.dst);
      } else {
        use_operand(d, ops[1]);
        def_operand(d, ops[0]);
      }
      break;
    case Mnemonic::MOVC:
      d.index = acc_key();
      add(d.uses, acc_key());
      add(d.defs, acc_key());
      if (k1() == OperandKind::CodeIndexedDPTR) {
        d.category = InsnCategory::IndLoad;
        d.region = Region::Code;
        d.addr = kDptrKey;
        d.dst = acc_key();
        add(d.uses, kDptrKey);
      }
      break;
    case Mnemonic::MOVX:
      if (k1() == OperandKind::IndirectDPTR) {
        d.category = InsnCategory::IndLoad;
        d.region = Region::Xram;
        d.addr = kDptrKey;
        d.dst = acc_key();
        add(d.uses, kDptrKey);
        add(d.defs, acc_key());
      } else if (k0() == OperandKind::IndirectDPTR) {
        d.category = InsnCategory::IndStore;
        d.region = Region::Xram;
        d.addr = kDptrKey;
        d.value = acc_key();
        add(d.uses, kDptrKey);
        add(d.uses, acc_key());
      } else if (k0() == OperandKind::Accumulator) {
        // MOVX A,@Ri: the page byte lives in P2, so the address is not tracked.
        d.addr = iram_key(static_cast<uint32_t>(ops[1].value));
        add(d.uses, d.addr);
        add(d.uses, sfr_key(0xA0));
        add(d.defs, acc_key());
      } else {
        d.addr = iram_key(static_cast<uint32_t>(ops[0].value));
        add(d.uses, d.addr);
        add(d.uses, sfr_key(0xA0));
        add(d.uses, acc_key());
      }
      break;
    case Mnemonic::ADD:
    case Mnemonic::ADDC:
    case Mnemonic::SUBB:
      d.category = InsnCategory::Arith;
      d.dst = acc_key();
      add(d.uses, acc_key());
      use_operand(d, ops[1]);
      if (in.mnemonic != Mnemonic::ADD) add(d.uses, sfr_key(kPsw));
      add(d.defs, acc_key());
      add(d.defs, sfr_key(kPsw));
      break;
    case Mnemonic::INC:
    case Mnemonic::DEC:
    case Mnemonic::DJNZ:
      if (k0() == OperandKind::IndirectReg) {
        use_operand(d, ops[0]);
      } else {
        d.category = InsnCategory::Arith;
        d.dst = loc_of(ops[0]);
        add(d.uses, d.dst);
        add(d.defs, d.dst);
      }
      break;
    case Mnemonic::ANL:
    case Mnemonic::ORL:
    case Mnemonic::XRL:
      add(d.uses, loc_of(ops[0]));
      use_operand(d, ops[1]);
      def_operand(d, ops[0]);
      break;
    case Mnemonic::CLR:
    case Mnemonic::CPL:
    case Mnemonic::SETB:
      if (in.mnemonic == Mnemonic::CPL) add(d.uses, loc_of(ops[0]));
      if (k0() == OperandKind::BitAddress) add(d.uses, loc_of(ops[0]));
      def_operand(d, ops[0]);
      break;
    case Mnemonic::RL:
    case Mnemonic::RR:
    case Mnemonic::SWAP:
      add(d.uses, acc_key());
      add(d.defs, acc_key());
      break;
    case Mnemonic::RLC:
    case Mnemonic::RRC:
    case Mnemonic::DA:
      add(d.uses, acc_key());
      add(d.uses, sfr_key(kPsw));
      add(d.defs, acc_key());
      add(d.defs, sfr_key(kPsw));
      break;
    case Mnemonic::MUL:
    case Mnemonic::DIV:
      for (auto k : {acc_key(), sfr_key(kB)}) {
        add(d.uses, k);
        add(d.defs, k);
      }
      add(d.defs, sfr_key(kPsw));
      break;
    case Mnemonic::XCH:
      add(d.uses, acc_key());
      add(d.defs, acc_key());
      use_operand(d, ops[1]);
      def_operand(d, ops[1]);
      break;
    case Mnemonic::XCHD:
      add(d.uses, acc_key());
      add(d.defs, acc_key());
      use_operand(d, ops[1]);
      break;
    case Mnemonic::PUSH:
      use_operand(d, ops[0]);
      break;
    case Mnemonic::POP:
      def_operand(d, ops[0]);
      break;
    case Mnemonic::CJNE:
      if (k0() == OperandKind::IndirectReg) use_operand(d, ops[0]);
      else add(d.uses, loc_of(ops[0]));
      use_operand(d, ops[1]);
      add(d.defs, sfr_key(kPsw));
      break;
    case Mnemonic::JB:
    case Mnemonic::JNB:
      add(d.uses, loc_of(ops[0]));
      break;
    case Mnemonic::JBC:
      add(d.uses, loc_of(ops[0]));
      add(d.defs, loc_of(ops[0]));
      break;
    case Mnemonic::JZ:
    case Mnemonic::JNZ:
      add(d.uses, acc_key());
      break;
    case Mnemonic::JC:
    case Mnemonic::JNC:
      add(d.uses, sfr_key(kPsw));
      break;
    case Mnemonic::JMP:
      d.index = acc_key();
      d.addr = kDptrKey;
      add(d.uses, acc_key());
      add(d.uses, kDptrKey);
      break;
    case Mnemonic::LCALL:
    case Mnemonic::ACALL:
      d.kills_all = true;
      break;
    default:
      break;
  }
  // DPTR and its halves alias.
  const bool dptr = std::find(d.defs.begin(), d.defs.end(), kDptrKey) != d.defs.end();
  const bool half = std::find(d.defs.begin(), d.defs.end(), sfr_key(kDpl)) != d.defs.end() ||
                    std::find(d.defs.begin(), d.defs.end(), sfr_key(kDph)) != d.defs.end();
  if (dptr) {
    add(d.defs, sfr_key(kDpl));
    add(d.defs, sfr_key(kDph));
  }
  if (half) add(d.defs, kDptrKey);
  return d;
}

ReachingDefs::ReachingDefs(const CodeGraph& g) {
  using Facts = std::map<LocKey, std::set<uint16_t>>;
  std::map<uint16_t, std::vector<uint16_t>> preds;
  for (const auto& [a, in] : g.insns) {
    models_.emplace(a, describe(in));
    for (auto s : g.succ.at(a)) preds[s].push_back(a);
  }
  std::map<uint16_t, Facts> out;
  std::deque<uint16_t> work;
  std::set<uint16_t> queued;
  for (const auto& [a, in] : g.insns) {
    work.push_back(a);
    queued.insert(a);
  }
  while (!work.empty()) {
    const uint16_t a = work.front();
    work.pop_front();
    queued.erase(a);
    Facts in;
    for (auto p : preds[a])
      for (const auto& [k, sites] : out[p]) in[k].insert(sites.begin(), sites.end());
    const DefUse& m = models_.at(a);
    Facts o = m.kills_all ? Facts{} : in;
    for (auto k : m.defs) o[k] = {a};
    in_[a] = std::move(in);
    if (o != out[a]) {
      out[a] = std::move(o);
      for (auto s : g.succ.at(a))
        if (g.insns.count(s) && queued.insert(s).second) work.push_back(s);
    }
  }
  for (const auto& [a, m] : models_) {
    const auto& in = in_[a];
    for (auto k : m.uses) {
      auto it = in.find(k);
      if (it == in.end()) continue;
      for (auto d : it->second) uses_[{d, k}].push_back(a);
    }
  }
}

const std::set<uint16_t>& ReachingDefs::reaching(uint16_t site, LocKey loc) const {
  static const std::set<uint16_t> empty;
  auto it = in_.find(site);
  if (it == in_.end()) return empty;
  auto jt = it->second.find(loc);
  return jt == it->second.end() ? empty : jt->second;
}

std::vector<uint16_t> ReachingDefs::uses_of(uint16_t def, LocKey loc) const {
  auto it = uses_.find({def, loc});
  return it == uses_.end() ? std::vector<uint16_t>{} : it->second;
}

}  // namespace fwscope::usbstatic
