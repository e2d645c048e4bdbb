#include <algorithm>
#include <array>
#include <cctype>
#include <functional>
#include <set>

#include "fwscope/fwkit.hpp"

namespace fwscope::fwkit {

using isa::OperandKind;
using K = isa::OperandKind;

namespace {

std::string trim(std::string_view s) {
  size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::string upper(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

bool ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

// Splits on commas outside quotes and parentheses.
std::vector<std::string> split_args(std::string_view s, int line) {
  std::vector<std::string> out;
  std::string cur;
  int depth = 0;
  char quote = 0;
  for (char c : s) {
    if (quote) {
      cur += c;
      if (c == quote) quote = 0;
      continue;
    }
    if (c == '"' || c == '\'') quote = c;
    if (c == '(') ++depth;
    if (c == ')') --depth;
    if (c == ',' && depth == 0) {
      out.push_back(trim(cur));
      cur.clear();
      continue;
    }
    cur += c;
  }
  if (quote) throw AsmError(AsmErrorKind::Syntax, line, "unterminated quote");
  if (depth != 0) throw AsmError(AsmErrorKind::Syntax, line, "unbalanced parentheses");
  std::string last = trim(cur);
  if (!last.empty() || !out.empty()) out.push_back(last);
  for (const auto& a : out)
    if (a.empty()) throw AsmError(AsmErrorKind::Syntax, line, "empty operand");
  return out;
}

const std::map<std::string, uint32_t>& bit_names() {
  static const std::map<std::string, uint32_t> names = {
      {"IT0", 0x88}, {"IE0", 0x89}, {"IT1", 0x8A}, {"IE1", 0x8B}, {"TR0", 0x8C}, {"TF0", 0x8D},
      {"TR1", 0x8E}, {"TF1", 0x8F}, {"RI", 0x98}, {"TI", 0x99}, {"RB8", 0x9A}, {"TB8", 0x9B},
      {"REN", 0x9C}, {"SM2", 0x9D}, {"SM1", 0x9E}, {"SM0", 0x9F}, {"EX0", 0xA8}, {"ET0", 0xA9},
      {"EX1", 0xAA}, {"ET1", 0xAB}, {"ES", 0xAC}, {"ET2", 0xAD}, {"EA", 0xAF}, {"PX0", 0xB8},
      {"PT0", 0xB9}, {"PX1", 0xBA}, {"PT1", 0xBB}, {"PS", 0xBC}, {"PT2", 0xBD}, {"CP_RL2", 0xC8},
      {"C_T2", 0xC9}, {"TR2", 0xCA}, {"EXEN2", 0xCB}, {"TCLK", 0xCC}, {"RCLK", 0xCD},
      {"EXF2", 0xCE}, {"TF2", 0xCF}, {"P", 0xD0}, {"F1", 0xD1}, {"OV", 0xD2}, {"RS0", 0xD3},
      {"RS1", 0xD4}, {"F0", 0xD5}, {"AC", 0xD6}, {"CY", 0xD7},
  };
  return names;
}

const std::map<std::string, uint32_t>& sfr_names() {
  static const std::map<std::string, uint32_t> names = [] {
    std::map<std::string, uint32_t> m;
    for (uint32_t a = 0x80; a < 0x100; ++a)
      if (auto n = isa::sfr_name(static_cast<uint8_t>(a))) m[upper(*n)] = a;
    return m;
  }();
  return names;
}

// Syntactic operand classes; an expression can stand for several kinds.
enum class Syn { Acc, AB, Carry, Dptr, AtDptr, AtADptr, AtAPc, Reg, AtReg, Imm, NotBit, Expr };

struct ParsedOperand {
  Syn syn;
  int reg{0};
  std::string expr{};
};

ParsedOperand classify(const std::string& text, int line) {
  const std::string u = upper(text);
  if (u == "A") return {Syn::Acc};
  if (u == "AB") return {Syn::AB};
  if (u == "C") return {Syn::Carry};
  if (u == "DPTR") return {Syn::Dptr};
  if (u == "@DPTR") return {Syn::AtDptr};
  if (u == "@A+DPTR") return {Syn::AtADptr};
  if (u == "@A+PC") return {Syn::AtAPc};
  if (u.size() == 2 && u[0] == 'R' && u[1] >= '0' && u[1] <= '7') return {Syn::Reg, u[1] - '0'};
  if (u.size() == 3 && u[0] == '@' && u[1] == 'R' && (u[2] == '0' || u[2] == '1'))
    return {Syn::AtReg, u[2] - '0'};
  if (u[0] == '#') return {Syn::Imm, 0, trim(text.substr(1))};
  if (u[0] == '/') return {Syn::NotBit, 0, trim(text.substr(1))};
  if (u[0] == '@') throw AsmError(AsmErrorKind::Syntax, line, "bad indirect operand '" + text + "'");
  return {Syn::Expr, 0, text};
}

bool compatible(Syn s, OperandKind k) {
  switch (s) {
    case Syn::Acc: return k == K::Accumulator;
    case Syn::AB: return k == K::AB;
    case Syn::Carry: return k == K::Carry;
    case Syn::Dptr: return k == K::DPTR;
    case Syn::AtDptr: return k == K::IndirectDPTR;
    case Syn::AtADptr: return k == K::CodeIndexedDPTR;
    case Syn::AtAPc: return k == K::CodeIndexedPC;
    case Syn::Reg: return k == K::Register;
    case Syn::AtReg: return k == K::IndirectReg;
    case Syn::Imm: return k == K::Immediate8 || k == K::Immediate16;
    case Syn::NotBit: return k == K::NegatedBit;
    case Syn::Expr:
      return k == K::Direct || k == K::BitAddress || k == K::Relative || k == K::Addr11 || k == K::Addr16;
  }
  return false;
}

const isa::OpcodeEntry* find_entry(isa::Mnemonic m, const std::vector<ParsedOperand>& ops, int line,
                                   const std::string& text) {
  const isa::OpcodeEntry* found = nullptr;
  for (const auto& e : isa::opcode_table()) {
    if (e.illegal() || e.mnemonic != m || e.operand_count != ops.size()) continue;
    bool ok = true;
    for (size_t i = 0; i < ops.size() && ok; ++i) {
      ok = compatible(ops[i].syn, e.operands[i]);
      if (ok && e.operands[i] == K::Register) ok = (e.opcode & 7) == ops[i].reg;
      if (ok && e.operands[i] == K::IndirectReg) ok = (e.opcode & 1) == ops[i].reg;
    }
    if (!ok) continue;
    // Addr11 opcodes differ only in the page bits; any one fixes the length.
    if (found && found->operands[0] != K::Addr11)
      throw AsmError(AsmErrorKind::Syntax, line, "ambiguous operands in '" + text + "'");
    if (!found) found = &e;
  }
  if (!found) throw AsmError(AsmErrorKind::Syntax, line, "no encoding for '" + text + "'");
  return found;
}

class Assembler {
 public:
  Assembler(const AsmProgram& p, const AssembleOptions& o) : prog_(p), opts_(o) {}
  Assembly run();

 private:
  struct Equ {
    std::string expr;
    int line;
  };

  int64_t eval(const std::string& text, int line, bool bit_context = false);
  int64_t eval_bit(const std::string& text, int line);
  int64_t lookup(const std::string& name, int line, bool bit_context);
  void emit(uint32_t addr, uint8_t b, int line);

  const AsmProgram& prog_;
  const AssembleOptions& opts_;
  std::map<std::string, int64_t> labels_;
  std::map<std::string, Equ> equs_;
  std::set<std::string> evaluating_;
  int64_t here_{0};
  std::vector<int16_t> bytes_ = std::vector<int16_t>(0x10000, -1);
  uint32_t high_{0};
  bool any_{false};
};

int64_t Assembler::lookup(const std::string& name, int line, bool bit_context) {
  if (auto it = labels_.find(name); it != labels_.end()) return it->second;
  if (auto it = equs_.find(name); it != equs_.end()) {
    if (!evaluating_.insert(name).second)
      throw AsmError(AsmErrorKind::UnresolvedLabel, line, "circular definition of '" + name + "'");
    const int64_t v = eval(it->second.expr, it->second.line, bit_context);
    evaluating_.erase(name);
    return v;
  }
  const std::string u = upper(name);
  if (bit_context)
    if (auto it = bit_names().find(u); it != bit_names().end()) return it->second;
  if (auto it = sfr_names().find(u); it != sfr_names().end()) return it->second;
  if (auto it = bit_names().find(u); it != bit_names().end()) return it->second;
  throw AsmError(AsmErrorKind::UnresolvedLabel, line, "undefined symbol '" + name + "'");
}

int64_t Assembler::eval(const std::string& text, int line, bool bit_context) {
  size_t pos = 0;
  auto skip = [&] {
    while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
  };
  auto fail = [&](const std::string& why) -> int64_t {
    throw AsmError(AsmErrorKind::Syntax, line, why + " in '" + text + "'");
  };
  std::function<int64_t()> expr;
  std::function<int64_t()> term = [&]() -> int64_t {
    skip();
    if (pos >= text.size()) return fail("missing term");
    const char c = text[pos];
    if (c == '-') {
      ++pos;
      return -term();
    }
    if (c == '+') {
      ++pos;
      return term();
    }
    if (c == '(') {
      ++pos;
      const int64_t v = expr();
      skip();
      if (pos >= text.size() || text[pos] != ')') return fail("missing ')'");
      ++pos;
      return v;
    }
    if (c == '$') {
      ++pos;
      return here_;
    }
    if (c == '\'') {
      if (pos + 2 >= text.size() || text[pos + 2] != '\'') return fail("bad character literal");
      const int64_t v = static_cast<unsigned char>(text[pos + 1]);
      pos += 3;
      return v;
    }
    if (std::isdigit(static_cast<unsigned char>(c))) {
      size_t end = pos;
      while (end < text.size() && std::isalnum(static_cast<unsigned char>(text[end]))) ++end;
      std::string num = upper(text.substr(pos, end - pos));
      pos = end;
      int base = 10;
      if (num.size() > 2 && num[0] == '0' && num[1] == 'X') {
        base = 16;
        num = num.substr(2);
      } else if (num.size() > 2 && num[0] == '0' && num[1] == 'B') {
        base = 2;
        num = num.substr(2);
      } else if (num.size() > 1 && num.back() == 'H') {
        base = 16;
        num.pop_back();
      }
      try {
        size_t used = 0;
        const int64_t v = std::stoll(num, &used, base);
        if (used != num.size()) return fail("bad number");
        return v;
      } catch (const std::exception&) {
        return fail("bad number");
      }
    }
    if (ident_start(c)) {
      size_t end = pos;
      while (end < text.size() && ident_char(text[end])) ++end;
      const std::string name = text.substr(pos, end - pos);
      pos = end;
      skip();
      const std::string u = upper(name);
      if ((u == "HIGH" || u == "LOW") && pos < text.size() && text[pos] == '(') {
        ++pos;
        const int64_t v = expr();
        skip();
        if (pos >= text.size() || text[pos] != ')') return fail("missing ')'");
        ++pos;
        return u == "HIGH" ? (v >> 8) & 0xFF : v & 0xFF;
      }
      return lookup(name, line, bit_context);
    }
    return fail(std::string("unexpected '") + c + "'");
  };
  expr = [&]() -> int64_t {
    int64_t v = term();
    for (;;) {
      skip();
      if (pos < text.size() && (text[pos] == '+' || text[pos] == '-')) {
        const char op = text[pos++];
        const int64_t r = term();
        v = op == '+' ? v + r : v - r;
      } else {
        return v;
      }
    }
  };
  const int64_t v = expr();
  skip();
  if (pos != text.size()) fail("trailing characters");
  return v;
}

// Bit operands accept `byte.bit` besides plain bit addresses and names.
int64_t Assembler::eval_bit(const std::string& text, int line) {
  const auto dot = text.rfind('.');
  if (dot != std::string::npos && dot + 2 == text.size() && text[dot + 1] >= '0' && text[dot + 1] <= '7') {
    const int64_t byte = eval(trim(text.substr(0, dot)), line);
    const int bit = text[dot + 1] - '0';
    if (byte >= 0x20 && byte <= 0x2F) return (byte - 0x20) * 8 + bit;
    if (byte >= 0x80 && byte <= 0xFF && byte % 8 == 0) return byte + bit;
    throw AsmError(AsmErrorKind::OperandRange, line, "byte is not bit-addressable in '" + text + "'");
  }
  return eval(text, line, true);
}

void Assembler::emit(uint32_t addr, uint8_t b, int line) {
  if (addr > 0xFFFF) throw AsmError(AsmErrorKind::OperandRange, line, "code beyond 64 KiB");
  if (bytes_[addr] >= 0) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "byte 0x%04X emitted twice", addr);
    throw AsmError(AsmErrorKind::Overlap, line, buf);
  }
  bytes_[addr] = b;
  high_ = std::max(high_, addr);
  any_ = true;
}

Assembly Assembler::run() {
  struct Planned {
    const AsmStatement* st;
    uint32_t address;
    const isa::OpcodeEntry* entry{nullptr};
    std::vector<ParsedOperand> ops{};
  };
  std::vector<Planned> plan;

  auto require_args = [](const AsmStatement& st, size_t n) {
    if (st.args.size() != n)
      throw AsmError(AsmErrorKind::Syntax, st.line, st.op + " expects " + std::to_string(n) + " operand(s)");
  };

  // Pass 1: addresses and symbols.
  here_ = 0;
  for (const auto& st : prog_.statements) {
    if (!st.label.empty()) {
      if (labels_.count(st.label) || equs_.count(st.label))
        throw AsmError(AsmErrorKind::DuplicateLabel, st.line, "duplicate label '" + st.label + "'");
      labels_[st.label] = here_;
    }
    if (st.op.empty()) continue;
    const std::string op = upper(st.op);
    if (op == ".EQU") {
      require_args(st, 2);
      const std::string& name = st.args[0];
      if (labels_.count(name) || equs_.count(name))
        throw AsmError(AsmErrorKind::DuplicateLabel, st.line, "duplicate symbol '" + name + "'");
      equs_[name] = {st.args[1], st.line};
      continue;
    }
    if (op == ".ORG") {
      require_args(st, 1);
      here_ = eval(st.args[0], st.line);
      if (here_ < 0 || here_ > 0xFFFF) throw AsmError(AsmErrorKind::OperandRange, st.line, ".org out of range");
      if (!st.label.empty()) labels_[st.label] = here_;
      continue;
    }
    Planned p{&st, static_cast<uint32_t>(here_)};
    if (op == ".DB") {
      for (const auto& a : st.args) {
        if (a.size() >= 2 && a.front() == '"' && a.back() == '"') here_ += a.size() - 2;
        else ++here_;
      }
    } else if (op == ".DW") {
      here_ += 2 * st.args.size();
    } else if (op == ".DS" || op == ".FILL") {
      require_args(st, op == ".DS" ? 1 : 2);
      const int64_t n = eval(st.args[0], st.line);
      if (n < 0) throw AsmError(AsmErrorKind::OperandRange, st.line, "negative count");
      here_ += n;
    } else if (op[0] == '.') {
      throw AsmError(AsmErrorKind::Syntax, st.line, "unknown directive " + st.op);
    } else {
      auto m = isa::mnemonic_from_name(op);
      if (!m || *m == isa::Mnemonic::Reserved)
        throw AsmError(AsmErrorKind::UnknownMnemonic, st.line, "unknown mnemonic '" + st.op + "'");
      for (const auto& a : st.args) p.ops.push_back(classify(a, st.line));
      p.entry = find_entry(*m, p.ops, st.line, st.op);
      here_ += p.entry->length;
    }
    if (here_ > 0x10000) throw AsmError(AsmErrorKind::OperandRange, st.line, "code beyond 64 KiB");
    plan.push_back(std::move(p));
  }

  // Pass 2: encoding.
  Assembly out;
  for (const auto& p : plan) {
    const AsmStatement& st = *p.st;
    const std::string op = upper(st.op);
    here_ = p.address;
    uint32_t at = p.address;
    auto byte_value = [&](const std::string& text) {
      const int64_t v = eval(text, st.line);
      if (v < -128 || v > 255) throw AsmError(AsmErrorKind::OperandRange, st.line, "byte out of range: " + text);
      return static_cast<uint8_t>(v & 0xFF);
    };
    if (op == ".DB") {
      for (const auto& a : st.args) {
        if (a.size() >= 2 && a.front() == '"' && a.back() == '"') {
          for (size_t i = 1; i + 1 < a.size(); ++i) emit(at++, static_cast<uint8_t>(a[i]), st.line);
        } else {
          emit(at++, byte_value(a), st.line);
        }
      }
      continue;
    }
    if (op == ".DW") {
      for (const auto& a : st.args) {
        const int64_t v = eval(a, st.line);
        if (v < 0 || v > 0xFFFF) throw AsmError(AsmErrorKind::OperandRange, st.line, "word out of range: " + a);
        emit(at++, static_cast<uint8_t>(v >> 8), st.line);
        emit(at++, static_cast<uint8_t>(v & 0xFF), st.line);
      }
      continue;
    }
    if (op == ".DS" || op == ".FILL") {
      const int64_t n = eval(st.args[0], st.line);
      const uint8_t fill = op == ".FILL" ? byte_value(st.args[1]) : 0;
      for (int64_t i = 0; i < n; ++i) emit(at++, fill, st.line);
      continue;
    }

    const isa::OpcodeEntry& e = *p.entry;
    isa::Instruction insn;
    insn.address = static_cast<uint16_t>(p.address);
    insn.length = e.length;
    insn.mnemonic = e.mnemonic;
    const uint32_t next = p.address + e.length;
    for (size_t i = 0; i < p.ops.size(); ++i) {
      const ParsedOperand& po = p.ops[i];
      const OperandKind k = e.operands[i];
      isa::Operand o{k, 0};
      auto range = [&](int64_t v, int64_t lo, int64_t hi) {
        if (v < lo || v > hi)
          throw AsmError(AsmErrorKind::OperandRange, st.line,
                         "operand '" + st.args[i] + "' out of range for " + st.op);
        return v;
      };
      switch (k) {
        case K::Register:
        case K::IndirectReg:
          o.value = po.reg;
          break;
        case K::Immediate8:
          o.value = static_cast<int32_t>(range(eval(po.expr, st.line), -128, 255) & 0xFF);
          break;
        case K::Immediate16:
          o.value = static_cast<int32_t>(range(eval(po.expr, st.line), -32768, 0xFFFF) & 0xFFFF);
          break;
        case K::Direct:
          o.value = static_cast<int32_t>(range(eval(po.expr, st.line), 0, 255));
          break;
        case K::BitAddress:
        case K::NegatedBit:
          o.value = static_cast<int32_t>(range(eval_bit(po.expr, st.line), 0, 255));
          break;
        case K::Relative: {
          const int64_t target = eval(po.expr, st.line);
          o.value = static_cast<int32_t>(range(target - static_cast<int64_t>(next), -128, 127));
          break;
        }
        case K::Addr11: {
          const int64_t target = range(eval(po.expr, st.line), 0, 0xFFFF);
          if ((target & 0xF800) != (next & 0xF800))
            throw AsmError(AsmErrorKind::OperandRange, st.line, "AJMP/ACALL target outside the 2 KiB page");
          o.value = static_cast<int32_t>(target);
          break;
        }
        case K::Addr16:
          o.value = static_cast<int32_t>(range(eval(po.expr, st.line), 0, 0xFFFF));
          break;
        default:
          break;
      }
      insn.operands.push_back(o);
    }
    const auto enc = isa::encode(insn);
    for (size_t i = 0; i < enc.size(); ++i) {
      insn.raw[i] = enc[i];
      emit(at++, enc[i], st.line);
    }
    out.instructions.push_back(std::move(insn));
  }

  size_t size = any_ ? high_ + 1 : 0;
  if (opts_.image_size) {
    if (opts_.image_size < size || opts_.image_size > 0x10000)
      throw AsmError(AsmErrorKind::OperandRange, 0, "image size too small for the emitted code");
    size = opts_.image_size;
  }
  out.image.assign(size, opts_.fill);
  for (size_t a = 0; a < size; ++a)
    if (bytes_[a] >= 0) out.image[a] = static_cast<uint8_t>(bytes_[a]);
  for (const auto& [name, v] : labels_) out.symbols[name] = static_cast<uint32_t>(v);
  for (const auto& [name, e] : equs_) {
    here_ = 0;
    out.symbols[name] = static_cast<uint32_t>(eval(e.expr, e.line));
  }
  return out;
}

}  // namespace

AsmProgram AsmProgram::parse(std::string_view source) {
  AsmProgram prog;
  int line_no = 0;
  size_t start = 0;
  while (start <= source.size()) {
    size_t end = source.find('\n', start);
    if (end == std::string_view::npos) end = source.size();
    std::string_view raw = source.substr(start, end - start);
    start = end + 1;
    ++line_no;

    // Comments start at ';' outside quotes.
    char quote = 0;
    size_t cut = raw.size();
    for (size_t i = 0; i < raw.size(); ++i) {
      if (quote) {
        if (raw[i] == quote) quote = 0;
      } else if (raw[i] == '"' || raw[i] == '\'') {
        quote = raw[i];
      } else if (raw[i] == ';') {
        cut = i;
        break;
      }
    }
    std::string text = trim(raw.substr(0, cut));
    if (text.empty()) continue;

    AsmStatement st;
    st.line = line_no;
    size_t i = 0;
    while (i < text.size() && ident_char(text[i])) ++i;
    if (i > 0 && ident_start(text[0]) && i < text.size() && text[i] == ':') {
      st.label = text.substr(0, i);
      text = trim(text.substr(i + 1));
    }
    if (!text.empty()) {
      size_t j = 0;
      while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
      st.op = text.substr(0, j);
      const std::string rest = trim(text.substr(j));
      if (!rest.empty()) st.args = split_args(rest, line_no);
    }
    prog.statements.push_back(std::move(st));
    if (end == source.size()) break;
  }
  return prog;
}

uint16_t Assembly::at(const std::string& label) const {
  auto it = symbols.find(label);
  if (it == symbols.end()) throw std::out_of_range("no symbol '" + label + "'");
  return static_cast<uint16_t>(it->second);
}

Assembly assemble(const AsmProgram& program, const AssembleOptions& opts) {
  return Assembler(program, opts).run();
}

Assembly assemble(std::string_view source, const AssembleOptions& opts) {
  return assemble(AsmProgram::parse(source), opts);
}

}  // namespace fwscope::fwkit
