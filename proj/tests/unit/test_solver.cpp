#include <doctest.h>

#include <functional>
#include <memory>
#include <random>

#include "fwscope/solver.hpp"

using namespace fwscope::solver;

namespace {

// Independent reference semantics, written against plain integers.
uint32_t ref_binop(Kind k, uint32_t a, uint32_t b, unsigned w) {
  const uint64_t m = (uint64_t{1} << w) - 1;
  const int64_t sa = (a & (1u << (w - 1))) ? int64_t(a) - (int64_t{1} << w) : int64_t(a);
  const int64_t sb = (b & (1u << (w - 1))) ? int64_t(b) - (int64_t{1} << w) : int64_t(b);
  switch (k) {
    case Kind::Add: return uint32_t((uint64_t(a) + b) % (m + 1));
    case Kind::Sub: return uint32_t((uint64_t(a) + (m + 1) - b) % (m + 1));
    case Kind::Mul: return uint32_t((uint64_t(a) * b) % (m + 1));
    case Kind::UDiv: return b == 0 ? uint32_t(m) : a / b;
    case Kind::URem: return b == 0 ? a : a % b;
    case Kind::And: return a & b;
    case Kind::Or: return a | b;
    case Kind::Xor: return a ^ b;
    case Kind::Shl: return b >= w ? 0 : uint32_t((uint64_t(a) * (uint64_t{1} << b)) % (m + 1));
    case Kind::LShr: return b >= w ? 0 : uint32_t(a / (uint64_t{1} << b));
    case Kind::RotL: {
      uint32_t r = a;
      for (uint32_t i = 0; i < b % w; ++i) r = uint32_t(((r << 1) | (r >> (w - 1))) & m);
      return r;
    }
    case Kind::RotR: {
      uint32_t r = a;
      for (uint32_t i = 0; i < b % w; ++i) r = uint32_t(((r >> 1) | ((r & 1) << (w - 1))) & m);
      return r;
    }
    case Kind::Eq: return a == b;
    case Kind::Ne: return a != b;
    case Kind::Ult: return a < b;
    case Kind::Ule: return a <= b;
    case Kind::Slt: return sa < sb;
    case Kind::Sle: return sa <= sb;
    default: FAIL("unexpected kind"); return 0;
  }
}

const Kind kBinary[] = {Kind::Add, Kind::Sub, Kind::Mul, Kind::UDiv, Kind::URem, Kind::And,
                        Kind::Or,  Kind::Xor, Kind::Shl, Kind::LShr, Kind::RotL, Kind::RotR,
                        Kind::Eq,  Kind::Ne,  Kind::Ult, Kind::Ule,  Kind::Slt,  Kind::Sle};

// Test-side expression tree with its own evaluator.
struct TNode {
  std::string op;  // "c", "v", "bin", "not", "ext", "zext", "cat", "ite"
  Kind kind{Kind::Add};
  uint32_t value{0};
  unsigned width{8};
  unsigned hi{0}, lo{0};
  std::vector<std::shared_ptr<TNode>> kids;
};
using TRef = std::shared_ptr<TNode>;

uint32_t teval(const TRef& n, const uint32_t* env) {
  const uint32_t m = uint32_t((uint64_t{1} << n->width) - 1);
  if (n->op == "c") return n->value;
  if (n->op == "v") return env[n->value];
  if (n->op == "not") return ~teval(n->kids[0], env) & m;
  if (n->op == "ext") return (teval(n->kids[0], env) >> n->lo) & m;
  if (n->op == "zext") return teval(n->kids[0], env);
  if (n->op == "cat")
    return (teval(n->kids[0], env) << n->kids[1]->width) | teval(n->kids[1], env);
  if (n->op == "ite") return teval(n->kids[0], env) ? teval(n->kids[1], env) : teval(n->kids[2], env);
  return ref_binop(n->kind, teval(n->kids[0], env), teval(n->kids[1], env), n->kids[0]->width);
}

ExprRef build(const TRef& n, const std::vector<ExprRef>& vars) {
  if (n->op == "c") return mk_const(n->value, uint8_t(n->width));
  if (n->op == "v") return vars[n->value];
  if (n->op == "not") return mk_not(build(n->kids[0], vars));
  if (n->op == "ext") return mk_extract(build(n->kids[0], vars), uint8_t(n->hi), uint8_t(n->lo));
  if (n->op == "zext") return mk_zext(build(n->kids[0], vars), uint8_t(n->width));
  if (n->op == "cat") return mk_concat(build(n->kids[0], vars), build(n->kids[1], vars));
  if (n->op == "ite")
    return mk_ite(build(n->kids[0], vars), build(n->kids[1], vars), build(n->kids[2], vars));
  return mk_binary(n->kind, build(n->kids[0], vars), build(n->kids[1], vars));
}

struct Gen {
  std::mt19937_64 rng;
  unsigned nvars;
  explicit Gen(uint64_t seed, unsigned nv) : rng(seed), nvars(nv) {}

  uint32_t pick(uint32_t n) { return uint32_t(rng() % n); }

  TRef leaf(unsigned w) {
    auto n = std::make_shared<TNode>();
    n->width = w;
    if (w == 8 && pick(3) != 0) {
      n->op = "v";
      n->value = pick(nvars);
    } else {
      n->op = "c";
      static const uint32_t interesting[] = {0, 1, 6, 0x18, 0x7F, 0x80, 0xFE, 0xFF};
      n->value = (pick(2) ? interesting[pick(8)] : uint32_t(rng())) & ((1u << w) - 1);
    }
    return n;
  }

  TRef expr(unsigned w, int depth) {
    if (depth == 0 || pick(5) == 0) {
      if (w == 1) return cmp(depth);
      return leaf(w);
    }
    if (w == 1) return pick(3) == 0 ? boolean(depth) : cmp(depth);
    auto n = std::make_shared<TNode>();
    n->width = w;
    switch (pick(7)) {
      case 0: {
        n->op = "not";
        n->kids = {expr(w, depth - 1)};
        return n;
      }
      case 1: {
        if (w == 8) {
          n->op = "ext";
          auto inner = expr(16, depth - 1);
          n->lo = pick(9);
          n->hi = n->lo + 7;
          n->kids = {inner};
          return n;
        }
        break;
      }
      case 2: {
        if (w == 16) {
          n->op = "cat";
          n->kids = {expr(8, depth - 1), expr(8, depth - 1)};
          return n;
        }
        n->op = "ite";
        n->kids = {expr(1, depth - 1), expr(w, depth - 1), expr(w, depth - 1)};
        return n;
      }
      case 3: {
        if (w == 16) {
          n->op = "zext";
          n->kids = {expr(8, depth - 1)};
          return n;
        }
        break;
      }
      default:
        break;
    }
    n->op = "bin";
    static const Kind arith[] = {Kind::Add, Kind::Sub, Kind::Mul, Kind::And, Kind::Or, Kind::Xor,
                                 Kind::Shl, Kind::LShr, Kind::RotL, Kind::UDiv, Kind::URem};
    n->kind = arith[pick(11)];
    n->kids = {expr(w, depth - 1), expr(w, depth - 1)};
    return n;
  }

  TRef cmp(int depth) {
    auto n = std::make_shared<TNode>();
    n->width = 1;
    n->op = "bin";
    static const Kind cmps[] = {Kind::Eq, Kind::Ne, Kind::Ult, Kind::Ule, Kind::Slt, Kind::Sle};
    n->kind = cmps[pick(6)];
    n->kids = {expr(8, std::max(0, depth - 1)), expr(8, std::max(0, depth - 1))};
    return n;
  }

  TRef boolean(int depth) {
    auto n = std::make_shared<TNode>();
    n->width = 1;
    switch (pick(4)) {
      case 0:
        n->op = "not";
        n->kids = {expr(1, depth - 1)};
        break;
      case 1:
        n->op = "ext";
        n->lo = n->hi = pick(8);
        n->kids = {expr(8, depth - 1)};
        break;
      default:
        n->op = "bin";
        n->kind = pick(2) ? Kind::And : Kind::Or;
        n->kids = {expr(1, depth - 1), expr(1, depth - 1)};
    }
    return n;
  }
};

std::vector<ExprRef> make_vars(const std::string& prefix, unsigned n) {
  std::vector<ExprRef> v;
  for (unsigned i = 0; i < n; ++i) v.push_back(mk_var(prefix + std::to_string(i), 8));
  return v;
}

}  // namespace

TEST_CASE("constant folding matches reference for every operator and 8-bit pair") {
  for (Kind k : kBinary) {
    for (uint32_t a = 0; a < 256; ++a) {
      for (uint32_t b = 0; b < 256; ++b) {
        auto e = mk_binary(k, mk_const(a, 8), mk_const(b, 8));
        if (!e->is_const() || e->value != ref_binop(k, a, b, 8)) {
          FAIL_CHECK("kind " << int(k) << " a=" << a << " b=" << b);
          return;
        }
      }
    }
  }
  for (uint32_t a = 0; a < 256; ++a) {
    CHECK(mk_not(mk_const(a, 8))->value == (~a & 0xFF));
    for (unsigned lo = 0; lo < 8; ++lo)
      for (unsigned hi = lo; hi < 8; ++hi)
        CHECK(mk_extract(mk_const(a, 8), uint8_t(hi), uint8_t(lo))->value ==
              ((a >> lo) & ((1u << (hi - lo + 1)) - 1)));
    CHECK(mk_parity(mk_const(a, 8))->value == uint32_t(__builtin_popcount(a) & 1));
  }
}

TEST_CASE("simplified expressions evaluate like the unsimplified reference") {
  auto vars = make_vars("sx", 3);
  Gen g(0x5eed, 3);
  std::mt19937_64 rng(7);
  int nonconst = 0;
  for (int iter = 0; iter < 4000; ++iter) {
    const unsigned w = iter % 3 == 0 ? 1 : (iter % 3 == 1 ? 8 : 16);
    auto t = g.expr(w, 4);
    auto e = build(t, vars);
    REQUIRE(e->width == w);
    if (!e->is_const()) ++nonconst;
    for (int s = 0; s < 24; ++s) {
      uint32_t env[3] = {uint32_t(rng() & 0xFF), uint32_t(rng() & 0xFF), uint32_t(rng() & 0xFF)};
      Assignment a;
      for (unsigned i = 0; i < 3; ++i) a[vars[i]->value] = env[i];
      const uint32_t want = teval(t, env);
      const uint32_t got = evaluate(e, a);
      if (want != got) {
        FAIL_CHECK("mismatch for " << to_string(e) << " want " << want << " got " << got);
        return;
      }
      // Known bits must agree with every concrete value.
      CHECK((got & e->known_zero) == 0);
      CHECK((got & e->known_one) == e->known_one);
    }
  }
  CHECK(nonconst > 1000);
}

TEST_CASE("is_satisfiable agrees with exhaustive enumeration over two bytes") {
  auto vars = make_vars("bx", 2);
  Gen g(0xabc, 2);
  Solver solver;
  int sat = 0, unsat = 0;
  for (int iter = 0; iter < 120; ++iter) {
    std::vector<TRef> ts;
    const int nc = 1 + iter % 3;
    for (int i = 0; i < nc; ++i) ts.push_back(g.expr(1, 3));
    PathCondition pc;
    for (auto& t : ts) pc.add(build(t, vars));
    bool oracle = false;
    for (uint32_t x = 0; x < 256 && !oracle; ++x)
      for (uint32_t y = 0; y < 256 && !oracle; ++y) {
        uint32_t env[2] = {x, y};
        bool all = true;
        for (auto& t : ts)
          if (!teval(t, env)) {
            all = false;
            break;
          }
        oracle = all;
      }
    const SatResult r = solver.check(pc);
    REQUIRE(r != SatResult::Unknown);
    CHECK((r == SatResult::Sat) == oracle);
    if (oracle) {
      ++sat;
      auto m = solver.model(pc);
      REQUIRE(m);
      for (const auto& c : pc.constraints()) CHECK(m->eval(c.expr) == 1);
    } else {
      ++unsat;
    }
  }
  CHECK(sat > 10);
  CHECK(unsat > 10);
}

TEST_CASE("basic satisfiability examples") {
  Solver s;
  PathCondition empty;
  CHECK(s.is_satisfiable(empty));

  auto x = mk_var("ex_x", 8);
  PathCondition contra;
  contra.add(mk_eq(x, mk_const(6, 8)));
  contra.add(mk_eq(x, mk_const(7, 8)));
  CHECK_FALSE(s.is_satisfiable(contra));
}

TEST_CASE("descriptor-request conjunction has the expected model") {
  auto breq = mk_var("XRAM[0x7fe9]", 8);
  auto wvh = mk_var("XRAM[0x7feb]", 8);
  auto wil = mk_var("XRAM[0x7fec]", 8);
  auto irq = mk_var("XRAM[0x7fab]", 8);
  PathCondition pc;
  pc.add(mk_eq(breq, mk_const(6, 8)));
  pc.add(mk_eq(wvh, mk_const(34, 8)));
  pc.add(mk_eq(wil, mk_const(0, 8)));
  pc.add(mk_ne(mk_and(irq, mk_const(1, 8)), mk_const(0, 8)));
  Solver s;
  REQUIRE(s.is_satisfiable(pc));
  auto m = s.model(pc);
  REQUIRE(m);
  CHECK(m->eval(breq) == 6);
  CHECK(m->eval(wvh) == 34);
  CHECK(m->eval(wil) == 0);
  CHECK((m->eval(irq) & 1) == 1);
  CHECK(s.eval_model(pc, wvh) == 34);
  CHECK(s.is_constant(pc, breq) == 6u);
  CHECK_FALSE(s.is_constant(pc, irq).has_value());
}

TEST_CASE("eval_model and is_constant") {
  Solver s;
  auto x = mk_var("ev_x", 8);
  PathCondition p1;
  p1.add(mk_eq(x, mk_const(6, 8)));
  CHECK(s.eval_model(p1, x) == 6);

  PathCondition p2;
  p2.add(mk_ult(mk_const(250, 8), x));
  const uint32_t v = s.eval_model(p2, x);
  CHECK(v >= 251);
  CHECK(v <= 255);

  CHECK(s.is_constant(PathCondition{}, mk_const(0x2A, 8)) == 42u);
  CHECK_FALSE(s.is_constant(PathCondition{}, x).has_value());

  // Oracle: brute force over all k.
  auto k = mk_var("ev_k", 8);
  PathCondition p3;
  p3.add(mk_eq(mk_and(k, mk_const(0xFE, 8)), mk_const(4, 8)));
  p3.add(mk_eq(mk_and(k, mk_const(1, 8)), mk_const(0, 8)));
  std::vector<uint32_t> sols;
  for (uint32_t c = 0; c < 256; ++c)
    if ((c & 0xFE) == 4 && (c & 1) == 0) sols.push_back(c);
  REQUIRE(sols.size() == 1);
  CHECK(s.is_constant(p3, k) == sols[0]);

  PathCondition bad;
  bad.add(mk_false());
  CHECK_THROWS_AS(s.eval_model(bad, x), Unsat);
}

TEST_CASE("enumerate_values is exhaustive on small ranges") {
  Solver s;
  auto x = mk_var("en_x", 8);
  PathCondition pc;
  pc.add(mk_ult(x, mk_const(5, 8)));
  bool complete = false;
  auto vals = s.enumerate_values(pc, mk_add(x, mk_const(0x10, 8)), 16, &complete);
  std::sort(vals.begin(), vals.end());
  CHECK(complete);
  CHECK(vals == std::vector<uint32_t>{0x10, 0x11, 0x12, 0x13, 0x14});

  auto wide = s.enumerate_values(PathCondition{}, x, 16, &complete);
  CHECK(wide.size() == 16);
  CHECK_FALSE(complete);
}

TEST_CASE("independent constraints are split") {
  Solver s;
  PathCondition pc;
  // Forty pinned bytes would be hopeless as one 2^320 search.
  for (int i = 0; i < 40; ++i) {
    auto v = mk_var("ind" + std::to_string(i), 8);
    pc.add(mk_eq(mk_add(v, mk_const(uint32_t(i), 8)), mk_const(uint32_t(3 * i + 1), 8)));
  }
  auto a = mk_var("ind_a", 8), b = mk_var("ind_b", 8);
  pc.add(mk_eq(mk_add(a, b), mk_const(0x30, 8)));
  pc.add(mk_ult(a, mk_const(3, 8)));
  auto m = s.model(pc);
  REQUIRE(m);
  for (const auto& c : pc.constraints()) CHECK(m->eval(c.expr) == 1);
  CHECK(s.stats().timeouts == 0);

  // check_with only touches the component connected to the new constraint.
  auto z = mk_var("ind_z", 8);
  CHECK(s.check_with(pc, mk_eq(z, mk_const(1, 8))) == SatResult::Sat);
  CHECK(s.check_with(pc, mk_eq(a, mk_const(9, 8))) == SatResult::Unsat);
}

TEST_CASE("budget exhaustion reports unknown and is treated as feasible") {
  SolverConfig cfg;
  cfg.max_evaluations = 1000;
  Solver s(cfg);
  auto a = mk_var("bud_a", 8), b = mk_var("bud_b", 8), c = mk_var("bud_c", 8);
  PathCondition pc;
  // Unsatisfiable, but only a full 2^24 search can tell.
  auto mix = mk_binary(Kind::Xor, mk_add(a, b), c);
  pc.add(mk_eq(mix, mk_const(0x77, 8)));
  pc.add(mk_eq(mk_binary(Kind::Mul, mix, mk_const(3, 8)), mk_const(0x01, 8)));
  CHECK(s.check(pc) == SatResult::Unknown);
  CHECK(s.is_satisfiable(pc));
  CHECK_THROWS_AS(s.model(pc), SolverTimeout);
  CHECK_FALSE(s.is_constant(pc, a).has_value());
  CHECK(s.stats().timeouts >= 1);
}

TEST_CASE("bank-select bits stay concrete through symbolic flag updates") {
  auto x = mk_var("psw_x", 8);
  auto psw = mk_const(0x08, 8);  // bank 1
  // CY := (x < 6), P := parity(x), as a flag-setting compare would.
  psw = mk_or(mk_and(psw, mk_const(0x7F, 8)),
              mk_ite(mk_ult(x, mk_const(6, 8)), mk_const(0x80, 8), mk_const(0, 8)));
  psw = mk_or(mk_and(psw, mk_const(0xFE, 8)), mk_zext(mk_parity(x), 8));
  auto bank = mk_and(psw, mk_const(0x18, 8));
  REQUIRE(bank->is_const());
  CHECK(bank->value == 0x08);
  auto cy = mk_extract(psw, 7, 7);
  CHECK(to_string(cy) == "(psw_x < 0x06)");
}

TEST_CASE("negated comparisons normalise") {
  auto x = mk_var("neg_x", 8);
  auto e = mk_bool_not(mk_ne(x, mk_const(6, 8)));
  CHECK(e->kind == Kind::Eq);
  CHECK(to_string(e) == "(neg_x == 0x06)");
  // A decrement-and-test turns into a comparison on the original byte.
  auto d = mk_ne(mk_binary(Kind::Sub, x, mk_const(1, 8)), mk_const(0, 8));
  CHECK(to_string(d) == "(neg_x != 0x01)");
  CHECK(mk_eq(mk_and(x, mk_const(0xF0, 8)), mk_const(6, 8))->is_const());
}

TEST_CASE("path condition keeps constraints and provenance") {
  PathCondition pc;
  auto x = mk_var("pc_x", 8);
  pc.add(mk_true());
  CHECK(pc.empty());
  pc.add(mk_eq(x, mk_const(1, 8)), 0x123, true, "branch");
  pc.add(mk_ne(x, mk_const(2, 8)), 0x130, false, "branch");
  REQUIRE(pc.size() == 2);
  CHECK(pc.constraints()[0].address == 0x123);
  CHECK(pc.constraints()[0].taken);
  CHECK_FALSE(pc.constraints()[1].taken);
  CHECK(pc.constraints()[1].vars.size() == 1);
  CHECK_THROWS(pc.add(x));
}

TEST_CASE("SMT-LIB emission declares variables and asserts constraints") {
  PathCondition pc;
  auto x = mk_var("XRAM[0x7fe9]", 8);
  pc.add(mk_eq(x, mk_const(6, 8)));
  const std::string smt = to_smtlib(pc);
  CHECK(smt.find("(declare-fun |XRAM[0x7fe9]| () (_ BitVec 8))") != std::string::npos);
  CHECK(smt.find("(assert") != std::string::npos);
  CHECK(smt.find("#b00000110") != std::string::npos);
  CHECK(smt.find("(check-sat)") != std::string::npos);
}

TEST_CASE("width mismatches are rejected") {
  auto x = mk_var("wm_x", 8);
  CHECK_THROWS_AS(mk_add(x, mk_const(1, 16)), std::invalid_argument);
  CHECK_THROWS_AS(mk_extract(x, 8, 0), std::invalid_argument);
  CHECK_THROWS_AS(intern_var("wm_x", 16), std::invalid_argument);
}
