#include <algorithm>
#include <bit>
#include <cstdio>
#include <deque>
#include <stdexcept>
#include <unordered_set>

#include "fwscope/solver.hpp"

namespace fwscope::solver {

namespace {

struct VarTable {
  std::mutex mu;
  std::deque<VarInfo> infos;
  std::unordered_map<std::string, uint32_t> by_name;
};

VarTable& vars() {
  static VarTable t;
  return t;
}

bool commutative(Kind k) {
  switch (k) {
    case Kind::Add: case Kind::Mul: case Kind::And: case Kind::Or: case Kind::Xor:
    case Kind::Eq: case Kind::Ne:
      return true;
    default:
      return false;
  }
}

bool is_compare(Kind k) {
  return k == Kind::Eq || k == Kind::Ne || k == Kind::Ult || k == Kind::Ule || k == Kind::Slt ||
         k == Kind::Sle;
}

bool const_eq(const ExprRef& e, uint32_t v) { return e->is_const() && e->value == v; }

// Builds a node and fills in derived fields; no simplification.
ExprRef node(Kind k, uint8_t width, ExprRef a = nullptr, ExprRef b = nullptr, ExprRef c = nullptr,
             uint8_t hi = 0, uint8_t lo = 0) {
  auto e = std::make_shared<Expr>();
  e->kind = k;
  e->width = width;
  e->hi = hi;
  e->lo = lo;
  e->a = std::move(a);
  e->b = std::move(b);
  e->c = std::move(c);
  uint32_t d = 0;
  for (const auto* p : {&e->a, &e->b, &e->c}) {
    if (!*p) continue;
    e->has_var = e->has_var || (*p)->has_var;
    d = std::max(d, (*p)->depth);
  }
  e->depth = d + 1;

  const uint32_t m = mask_of(width);
  uint32_t kz = 0, ko = 0;
  const Expr* A = e->a.get();
  const Expr* B = e->b.get();
  switch (k) {
    case Kind::And:
      kz = A->known_zero | B->known_zero;
      ko = A->known_one & B->known_one;
      break;
    case Kind::Or:
      ko = A->known_one | B->known_one;
      kz = A->known_zero & B->known_zero;
      break;
    case Kind::Xor: {
      const uint32_t known = (A->known_zero | A->known_one) & (B->known_zero | B->known_one);
      const uint32_t val = A->known_one ^ B->known_one;
      ko = val & known;
      kz = ~val & known;
      break;
    }
    case Kind::Not:
      kz = A->known_one;
      ko = A->known_zero;
      break;
    case Kind::Shl:
      if (B->is_const()) {
        const uint32_t s = B->value;
        if (s >= width) {
          kz = m;
        } else {
          kz = (A->known_zero << s) | mask_of(s);
          ko = A->known_one << s;
        }
      }
      break;
    case Kind::LShr:
      if (B->is_const()) {
        const uint32_t s = B->value;
        if (s >= width) {
          kz = m;
        } else {
          kz = (A->known_zero >> s) | (m & ~(m >> s));
          ko = A->known_one >> s;
        }
      }
      break;
    case Kind::ZExt:
      kz = A->known_zero | (m & ~mask_of(A->width));
      ko = A->known_one;
      break;
    case Kind::Extract:
      kz = A->known_zero >> lo;
      ko = A->known_one >> lo;
      break;
    case Kind::Concat:
      kz = (A->known_zero << B->width) | B->known_zero;
      ko = (A->known_one << B->width) | B->known_one;
      break;
    case Kind::Ite: {
      const Expr* C = e->c.get();
      kz = B->known_zero & C->known_zero;
      ko = B->known_one & C->known_one;
      break;
    }
    case Kind::Add:
    case Kind::Sub: {
      // Low bits known in both operands propagate until the first unknown bit.
      const uint32_t known = (A->known_zero | A->known_one) & (B->known_zero | B->known_one);
      const uint32_t run = known == 0xFFFFFFFFu ? 32u : static_cast<uint32_t>(std::countr_one(known));
      const uint32_t lowm = mask_of(run);
      const uint32_t v = (k == Kind::Add ? A->known_one + B->known_one : A->known_one - B->known_one);
      ko = v & lowm;
      kz = ~v & lowm;
      break;
    }
    default:
      break;
  }
  e->known_zero = kz & m;
  e->known_one = ko & m;
  return e;
}

bool fully_known(const ExprRef& e) {
  return ((e->known_zero | e->known_one) & mask_of(e->width)) == mask_of(e->width);
}

ExprRef fold_known(ExprRef e) {
  if (!e->is_const() && fully_known(e)) return mk_const(e->known_one, e->width);
  return e;
}

// Limits speculative pushdown of Extract through large trees.
thread_local int g_push_depth = 0;
struct PushGuard {
  PushGuard() { ++g_push_depth; }
  ~PushGuard() { --g_push_depth; }
};

void require_same_width(const ExprRef& a, const ExprRef& b, const char* what) {
  if (a->width != b->width)
    throw std::invalid_argument(std::string("width mismatch in ") + what + ": " +
                                std::to_string(a->width) + " vs " + std::to_string(b->width));
}

}  // namespace

uint32_t intern_var(const std::string& name, uint8_t width) {
  if (width == 0 || width > 32) throw std::invalid_argument("variable width out of range");
  auto& t = vars();
  std::lock_guard lk(t.mu);
  auto it = t.by_name.find(name);
  if (it != t.by_name.end()) {
    if (t.infos[it->second].width != width)
      throw std::invalid_argument("variable " + name + " redeclared with another width");
    return it->second;
  }
  const auto id = static_cast<uint32_t>(t.infos.size());
  t.infos.push_back({name, width});
  t.by_name.emplace(name, id);
  return id;
}

const VarInfo& var_info(uint32_t id) {
  auto& t = vars();
  std::lock_guard lk(t.mu);
  return t.infos.at(id);
}

std::optional<uint32_t> find_var(const std::string& name) {
  auto& t = vars();
  std::lock_guard lk(t.mu);
  auto it = t.by_name.find(name);
  if (it == t.by_name.end()) return std::nullopt;
  return it->second;
}

uint32_t apply(Kind k, uint8_t width, uint32_t a, uint32_t b, uint32_t c, uint8_t a_width,
               uint8_t b_width, uint8_t hi, uint8_t lo) {
  const uint32_t m = mask_of(width);
  auto sext = [](uint32_t v, uint8_t w) -> int64_t {
    const uint32_t sign = 1u << (w - 1);
    return static_cast<int64_t>(v & mask_of(w)) - ((v & sign) ? (int64_t{1} << w) : 0);
  };
  switch (k) {
    case Kind::Const:
    case Kind::Var: return a & m;
    case Kind::Add: return (a + b) & m;
    case Kind::Sub: return (a - b) & m;
    case Kind::Mul: return (a * b) & m;
    case Kind::UDiv: return b == 0 ? m : (a / b) & m;
    case Kind::URem: return b == 0 ? a & m : (a % b) & m;
    case Kind::And: return a & b & m;
    case Kind::Or: return (a | b) & m;
    case Kind::Xor: return (a ^ b) & m;
    case Kind::Not: return ~a & m;
    case Kind::Shl: return b >= width ? 0 : (a << b) & m;
    case Kind::LShr: return b >= width ? 0 : ((a & m) >> b);
    case Kind::RotL: {
      const uint32_t s = b % width;
      a &= m;
      return s == 0 ? a : ((a << s) | (a >> (width - s))) & m;
    }
    case Kind::RotR: {
      const uint32_t s = b % width;
      a &= m;
      return s == 0 ? a : ((a >> s) | (a << (width - s))) & m;
    }
    case Kind::Eq: return a == b;
    case Kind::Ne: return a != b;
    case Kind::Ult: return a < b;
    case Kind::Ule: return a <= b;
    case Kind::Slt: return sext(a, a_width) < sext(b, a_width);
    case Kind::Sle: return sext(a, a_width) <= sext(b, a_width);
    case Kind::ZExt: return a & m;
    case Kind::Extract: return (a >> lo) & mask_of(hi - lo + 1u);
    case Kind::Concat: return ((a << b_width) | (b & mask_of(b_width))) & m;
    case Kind::Ite: return (a & 1) ? b & m : c & m;
  }
  return 0;
}

ExprRef mk_const(uint32_t value, uint8_t width) {
  if (width == 0 || width > 32) throw std::invalid_argument("constant width out of range");
  auto e = std::make_shared<Expr>();
  e->kind = Kind::Const;
  e->width = width;
  e->value = value & mask_of(width);
  e->known_one = e->value;
  e->known_zero = ~e->value & mask_of(width);
  return e;
}

ExprRef mk_true() {
  static const ExprRef t = mk_const(1, 1);
  return t;
}

ExprRef mk_false() {
  static const ExprRef f = mk_const(0, 1);
  return f;
}

ExprRef mk_var_id(uint32_t id) {
  auto e = std::make_shared<Expr>();
  e->kind = Kind::Var;
  e->width = var_info(id).width;
  e->value = id;
  e->has_var = true;
  return e;
}

ExprRef mk_var(const std::string& name, uint8_t width) { return mk_var_id(intern_var(name, width)); }

ExprRef mk_not(ExprRef a) {
  if (a->is_const()) return mk_const(~a->value, a->width);
  if (a->kind == Kind::Not) return a->a;
  if (a->width == 1) {
    switch (a->kind) {
      case Kind::Eq: return node(Kind::Ne, 1, a->a, a->b);
      case Kind::Ne: return node(Kind::Eq, 1, a->a, a->b);
      case Kind::Ult: return mk_binary(Kind::Ule, a->b, a->a);
      case Kind::Ule: return mk_binary(Kind::Ult, a->b, a->a);
      case Kind::Slt: return mk_binary(Kind::Sle, a->b, a->a);
      case Kind::Sle: return mk_binary(Kind::Slt, a->b, a->a);
      default: break;
    }
  }
  return fold_known(node(Kind::Not, a->width, a));
}

ExprRef mk_bool_not(ExprRef a) {
  if (a->width != 1) throw std::invalid_argument("boolean negation of a non-boolean");
  return mk_not(std::move(a));
}

ExprRef mk_unary(Kind k, ExprRef a) {
  if (k == Kind::Not) return mk_not(std::move(a));
  throw std::invalid_argument("not a unary operator");
}

ExprRef mk_zext(ExprRef a, uint8_t width) {
  if (width < a->width) throw std::invalid_argument("zext to a narrower width");
  if (width == a->width) return a;
  if (a->is_const()) return mk_const(a->value, width);
  if (a->kind == Kind::ZExt) return node(Kind::ZExt, width, a->a);
  return node(Kind::ZExt, width, a);
}

ExprRef mk_extract(ExprRef a, uint8_t hi, uint8_t lo) {
  if (hi < lo || hi >= a->width) throw std::invalid_argument("extract bounds out of range");
  const uint8_t w = static_cast<uint8_t>(hi - lo + 1);
  if (lo == 0 && hi == a->width - 1) return a;
  if (a->is_const()) return mk_const(a->value >> lo, w);
  {
    const uint32_t mm = mask_of(w) << lo;
    if (((a->known_zero | a->known_one) & mm) == mm) return mk_const(a->known_one >> lo, w);
  }
  switch (a->kind) {
    case Kind::Extract:
      return mk_extract(a->a, static_cast<uint8_t>(hi + a->lo), static_cast<uint8_t>(lo + a->lo));
    case Kind::ZExt: {
      const uint8_t iw = a->a->width;
      if (hi < iw) return mk_extract(a->a, hi, lo);
      if (lo >= iw) return mk_const(0, w);
      return mk_zext(mk_extract(a->a, static_cast<uint8_t>(iw - 1), lo), w);
    }
    case Kind::Concat: {
      const uint8_t lw = a->b->width;
      if (hi < lw) return mk_extract(a->b, hi, lo);
      if (lo >= lw) return mk_extract(a->a, static_cast<uint8_t>(hi - lw), static_cast<uint8_t>(lo - lw));
      return mk_concat(mk_extract(a->a, static_cast<uint8_t>(hi - lw), 0),
                       mk_extract(a->b, static_cast<uint8_t>(lw - 1), lo));
    }
    case Kind::Shl:
      if (a->b->is_const()) {
        const uint32_t s = a->b->value;
        if (lo >= s) return mk_extract(a->a, static_cast<uint8_t>(hi - s), static_cast<uint8_t>(lo - s));
        if (hi < s) return mk_const(0, w);
      }
      break;
    case Kind::LShr:
      if (a->b->is_const()) {
        const uint32_t s = a->b->value;
        if (lo + s >= a->width) return mk_const(0, w);
        if (hi + s < a->width)
          return mk_extract(a->a, static_cast<uint8_t>(hi + s), static_cast<uint8_t>(lo + s));
      }
      break;
    case Kind::And:
    case Kind::Or:
    case Kind::Xor:
      if (g_push_depth < 8) {
        PushGuard g;
        auto ea = mk_extract(a->a, hi, lo);
        auto eb = mk_extract(a->b, hi, lo);
        if (ea->is_const() || eb->is_const() || ea->depth + eb->depth < a->depth + 2)
          return mk_binary(a->kind, ea, eb);
      }
      break;
    case Kind::Not:
      if (g_push_depth < 8) {
        PushGuard g;
        return mk_not(mk_extract(a->a, hi, lo));
      }
      break;
    case Kind::Ite:
      if (g_push_depth < 8) {
        PushGuard g;
        auto eb = mk_extract(a->b, hi, lo);
        auto ec = mk_extract(a->c, hi, lo);
        if (eb->is_const() && ec->is_const()) return mk_ite(a->a, eb, ec);
      }
      break;
    default:
      break;
  }
  return fold_known(node(Kind::Extract, w, a, nullptr, nullptr, hi, lo));
}

ExprRef mk_concat(ExprRef hi, ExprRef lo) {
  const unsigned w = hi->width + lo->width;
  if (w > 32) throw std::invalid_argument("concat wider than 32 bits");
  if (hi->is_const() && lo->is_const())
    return mk_const((hi->value << lo->width) | lo->value, static_cast<uint8_t>(w));
  if (const_eq(hi, 0)) return mk_zext(lo, static_cast<uint8_t>(w));
  return node(Kind::Concat, static_cast<uint8_t>(w), hi, lo);
}

ExprRef mk_ite(ExprRef c, ExprRef a, ExprRef b) {
  if (c->width != 1) throw std::invalid_argument("ite condition must be boolean");
  require_same_width(a, b, "ite");
  if (c->is_const()) return c->value ? a : b;
  if (a == b) return a;
  if (a->is_const() && b->is_const()) {
    if (a->value == b->value) return a;
    if (a->width == 1) return a->value ? c : mk_not(c);
  }
  if (c->kind == Kind::Not) return mk_ite(c->a, b, a);
  return fold_known(node(Kind::Ite, a->width, c, a, b));
}

ExprRef mk_parity(ExprRef a) {
  if (a->is_const()) return mk_const(std::popcount(a->value) & 1u, 1);
  ExprRef acc = mk_extract(a, 0, 0);
  for (uint8_t i = 1; i < a->width; ++i) acc = mk_binary(Kind::Xor, acc, mk_extract(a, i, i));
  return acc;
}

ExprRef mk_binary(Kind k, ExprRef a, ExprRef b) {
  const bool cmp = is_compare(k);
  if (k != Kind::Concat) require_same_width(a, b, "binary operator");
  if (k == Kind::Concat) return mk_concat(std::move(a), std::move(b));
  const uint8_t w = cmp ? 1 : a->width;
  const uint32_t m = mask_of(a->width);

  if (a->is_const() && b->is_const())
    return mk_const(apply(k, w, a->value, b->value, 0, a->width, b->width, 0, 0), w);
  if (commutative(k) && a->is_const()) std::swap(a, b);

  // From here on at most `b` is constant.
  if (b->is_const()) {
    const uint32_t kv = b->value;
    switch (k) {
      case Kind::Add:
        if (kv == 0) return a;
        if (a->kind == Kind::Add && a->b->is_const())
          return mk_binary(Kind::Add, a->a, mk_const(a->b->value + kv, a->width));
        break;
      case Kind::Sub:
        return mk_binary(Kind::Add, a, mk_const(0u - kv, a->width));
      case Kind::Mul:
        if (kv == 0) return b;
        if (kv == 1) return a;
        break;
      case Kind::UDiv:
        if (kv == 1) return a;
        break;
      case Kind::And:
        if (kv == 0) return b;
        if (kv == m) return a;
        if ((~kv & m & ~a->known_zero) == 0) return a;
        if (a->kind == Kind::And && a->b->is_const())
          return mk_binary(Kind::And, a->a, mk_const(a->b->value & kv, a->width));
        break;
      case Kind::Or:
        if (kv == 0) return a;
        if (kv == m) return b;
        if ((kv & ~a->known_one) == 0) return a;
        if (a->kind == Kind::Or && a->b->is_const())
          return mk_binary(Kind::Or, a->a, mk_const(a->b->value | kv, a->width));
        break;
      case Kind::Xor:
        if (kv == 0) return a;
        if (a->width == 1) return mk_not(a);
        if (a->kind == Kind::Xor && a->b->is_const())
          return mk_binary(Kind::Xor, a->a, mk_const(a->b->value ^ kv, a->width));
        break;
      case Kind::Shl:
      case Kind::LShr:
        if (kv == 0) return a;
        if (kv >= a->width) return mk_const(0, a->width);
        break;
      case Kind::RotL:
      case Kind::RotR:
        if (kv % a->width == 0) return a;
        break;
      case Kind::Eq:
      case Kind::Ne: {
        const bool eq = k == Kind::Eq;
        if ((a->known_one & ~kv) != 0 || (a->known_zero & kv) != 0) return mk_const(eq ? 0 : 1, 1);
        if (a->width == 1) return (kv == 1) == eq ? a : mk_not(a);
        if (a->kind == Kind::Add && a->b->is_const())
          return mk_binary(k, a->a, mk_const(kv - a->b->value, a->width));
        if (a->kind == Kind::Xor && a->b->is_const())
          return mk_binary(k, a->a, mk_const(kv ^ a->b->value, a->width));
        if (a->kind == Kind::Not) return mk_binary(k, a->a, mk_const(~kv, a->width));
        if (a->kind == Kind::ZExt) {
          if (kv > mask_of(a->a->width)) return mk_const(eq ? 0 : 1, 1);
          return mk_binary(k, a->a, mk_const(kv, a->a->width));
        }
        if (a->kind == Kind::Ite && a->b->is_const() && a->c->is_const()) {
          const bool tb = a->b->value == kv, fb = a->c->value == kv;
          if (tb == fb) return mk_const((tb == eq) ? 1 : 0, 1);
          return (tb == eq) ? a->a : mk_not(a->a);
        }
        break;
      }
      case Kind::Ult:
        if (kv == 0) return mk_false();
        break;
      case Kind::Ule:
        if (kv == m) return mk_true();
        break;
      default:
        break;
    }
  }
  if (a->is_const()) {
    if (k == Kind::Ule && a->value == 0) return mk_true();
    if (k == Kind::Ult && a->value == m) return mk_false();
    if ((k == Kind::Shl || k == Kind::LShr) && a->value == 0) return a;
  }
  if (a == b) {
    switch (k) {
      case Kind::And:
      case Kind::Or: return a;
      case Kind::Xor:
      case Kind::Sub: return mk_const(0, a->width);
      case Kind::Eq:
      case Kind::Ule:
      case Kind::Sle: return mk_true();
      case Kind::Ne:
      case Kind::Ult:
      case Kind::Slt: return mk_false();
      default: break;
    }
  }
  if (k == Kind::Eq || k == Kind::Ne) {
    if ((a->known_one & b->known_zero) != 0 || (a->known_zero & b->known_one) != 0)
      return mk_const(k == Kind::Eq ? 0 : 1, 1);
  }
  return fold_known(node(k, w, std::move(a), std::move(b)));
}

uint32_t evaluate(const ExprRef& e, const Assignment& env) {
  std::unordered_map<const Expr*, uint32_t> memo;
  auto go = [&](auto&& self, const Expr* x) -> uint32_t {
    if (x->kind == Kind::Const) return x->value;
    if (x->kind == Kind::Var) {
      auto it = env.find(x->value);
      return it == env.end() ? 0 : it->second & mask_of(x->width);
    }
    if (auto it = memo.find(x); it != memo.end()) return it->second;
    const uint32_t a = x->a ? self(self, x->a.get()) : 0;
    uint32_t b = 0, c = 0;
    if (x->kind == Kind::Ite) {
      b = (a & 1) ? self(self, x->b.get()) : 0;
      c = (a & 1) ? 0 : self(self, x->c.get());
    } else {
      b = x->b ? self(self, x->b.get()) : 0;
    }
    const uint32_t r = apply(x->kind, x->width, a, b, c, x->a ? x->a->width : 0,
                             x->b ? x->b->width : 0, x->hi, x->lo);
    memo.emplace(x, r);
    return r;
  };
  return go(go, e.get());
}

std::vector<uint32_t> collect_vars(const ExprRef& e) {
  std::vector<uint32_t> out;
  if (!e->has_var) return out;
  std::unordered_set<const Expr*> seen;
  std::vector<const Expr*> stack{e.get()};
  while (!stack.empty()) {
    const Expr* x = stack.back();
    stack.pop_back();
    if (!x->has_var || !seen.insert(x).second) continue;
    if (x->kind == Kind::Var) {
      out.push_back(x->value);
      continue;
    }
    for (const auto* p : {&x->a, &x->b, &x->c})
      if (*p) stack.push_back(p->get());
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

bool is_symbolic(const ExprRef& e) { return e && e->has_var; }

namespace {

const char* infix(Kind k) {
  switch (k) {
    case Kind::Add: return " + ";
    case Kind::Sub: return " - ";
    case Kind::Mul: return " * ";
    case Kind::UDiv: return " / ";
    case Kind::URem: return " % ";
    case Kind::And: return " & ";
    case Kind::Or: return " | ";
    case Kind::Xor: return " ^ ";
    case Kind::Shl: return " << ";
    case Kind::LShr: return " >> ";
    case Kind::RotL: return " rol ";
    case Kind::RotR: return " ror ";
    case Kind::Eq: return " == ";
    case Kind::Ne: return " != ";
    case Kind::Ult: return " < ";
    case Kind::Ule: return " <= ";
    case Kind::Slt: return " <s ";
    case Kind::Sle: return " <=s ";
    default: return nullptr;
  }
}

void print(const Expr* x, std::string& out, size_t limit) {
  if (out.size() > limit) return;
  char buf[48];
  switch (x->kind) {
    case Kind::Const:
      if (x->width == 1) out += x->value ? "true" : "false";
      else {
        std::snprintf(buf, sizeof buf, "0x%02X", x->value);
        out += buf;
      }
      return;
    case Kind::Var:
      out += var_info(x->value).name;
      return;
    case Kind::Not:
      out += x->width == 1 ? "!" : "~";
      print(x->a.get(), out, limit);
      return;
    case Kind::ZExt:
      std::snprintf(buf, sizeof buf, "zext%u(", x->width);
      out += buf;
      print(x->a.get(), out, limit);
      out += ")";
      return;
    case Kind::Extract:
      print(x->a.get(), out, limit);
      if (x->hi == x->lo) std::snprintf(buf, sizeof buf, "[%u]", x->hi);
      else std::snprintf(buf, sizeof buf, "[%u:%u]", x->hi, x->lo);
      out += buf;
      return;
    case Kind::Concat:
      out += "(";
      print(x->a.get(), out, limit);
      out += " :: ";
      print(x->b.get(), out, limit);
      out += ")";
      return;
    case Kind::Ite:
      out += "(";
      print(x->a.get(), out, limit);
      out += " ? ";
      print(x->b.get(), out, limit);
      out += " : ";
      print(x->c.get(), out, limit);
      out += ")";
      return;
    default:
      out += "(";
      print(x->a.get(), out, limit);
      out += infix(x->kind);
      print(x->b.get(), out, limit);
      out += ")";
      return;
  }
}

}  // namespace

std::string to_string(const ExprRef& e) {
  constexpr size_t kLimit = 2048;
  std::string out;
  print(e.get(), out, kLimit);
  if (out.size() > kLimit) {
    out.resize(kLimit);
    out += "...";
  }
  return out;
}

}  // namespace fwscope::solver
