#include <algorithm>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "fwscope/solver.hpp"

namespace fwscope::solver {

void PathCondition::add(ExprRef expr, uint16_t address, bool taken, std::string origin) {
  if (!expr || expr->width != 1) throw std::invalid_argument("path constraint must be boolean");
  if (expr->is_const() && expr->value == 1) return;
  if (expr->is_const()) trivially_false_ = true;
  Constraint c;
  c.vars = collect_vars(expr);
  c.expr = std::move(expr);
  c.address = address;
  c.taken = taken;
  c.origin = std::move(origin);
  items_.push_back(std::move(c));
}

namespace {

// Linearised expression for fast repeated evaluation.
struct Ins {
  Kind kind;
  uint8_t width, aw, bw, hi, lo;
  int32_t a{-1}, b{-1}, c{-1};
  uint32_t value{0};  // Const value, or component-local variable index
};

struct Tape {
  std::vector<Ins> code;
  std::vector<int> vars;  // component-local indices, sorted
};

Tape compile(const ExprRef& root, const std::unordered_map<uint32_t, int>& local) {
  Tape t;
  std::unordered_map<const Expr*, int32_t> slot;
  auto go = [&](auto&& self, const Expr* x) -> int32_t {
    if (auto it = slot.find(x); it != slot.end()) return it->second;
    Ins in{x->kind, x->width, 0, 0, x->hi, x->lo};
    if (x->kind == Kind::Const) {
      in.value = x->value;
    } else if (x->kind == Kind::Var) {
      in.value = static_cast<uint32_t>(local.at(x->value));
      t.vars.push_back(static_cast<int>(in.value));
    } else {
      if (x->a) { in.a = self(self, x->a.get()); in.aw = x->a->width; }
      if (x->b) { in.b = self(self, x->b.get()); in.bw = x->b->width; }
      if (x->c) in.c = self(self, x->c.get());
    }
    t.code.push_back(in);
    const auto id = static_cast<int32_t>(t.code.size() - 1);
    slot.emplace(x, id);
    return id;
  };
  go(go, root.get());
  std::sort(t.vars.begin(), t.vars.end());
  t.vars.erase(std::unique(t.vars.begin(), t.vars.end()), t.vars.end());
  return t;
}

bool run_tape(const Tape& t, const std::vector<uint32_t>& env, std::vector<uint32_t>& scratch) {
  scratch.resize(t.code.size());
  for (size_t i = 0; i < t.code.size(); ++i) {
    const Ins& in = t.code[i];
    uint32_t r;
    if (in.kind == Kind::Const) r = in.value;
    else if (in.kind == Kind::Var) r = env[in.value];
    else
      r = apply(in.kind, in.width, in.a >= 0 ? scratch[in.a] : 0, in.b >= 0 ? scratch[in.b] : 0,
                in.c >= 0 ? scratch[in.c] : 0, in.aw, in.bw, in.hi, in.lo);
    scratch[i] = r;
  }
  return (scratch.back() & 1) != 0;
}

struct UnionFind {
  std::unordered_map<uint32_t, uint32_t> parent;
  uint32_t find(uint32_t x) {
    auto it = parent.find(x);
    if (it == parent.end()) {
      parent.emplace(x, x);
      return x;
    }
    if (it->second == x) return x;
    const uint32_t r = find(it->second);
    parent[x] = r;
    return r;
  }
  void unite(uint32_t a, uint32_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

struct Item {
  ExprRef expr;
  const std::vector<uint32_t>* vars;
};

class Budget {
 public:
  Budget(const SolverConfig& cfg)
      : deadline_(std::chrono::steady_clock::now() +
                  std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                      std::chrono::duration<double>(cfg.timeout_seconds))),
        max_(cfg.max_evaluations) {}
  // False once the budget is exhausted.
  bool tick() {
    ++used_;
    if (used_ > max_) return false;
    if ((used_ & 0x3FF) == 0 && std::chrono::steady_clock::now() > deadline_) {
      used_ = max_ + 1;
      return false;
    }
    return true;
  }
  uint64_t used() const { return used_; }

 private:
  std::chrono::steady_clock::time_point deadline_;
  uint64_t max_;
  uint64_t used_{0};
};

// Solves one connected component. Returns the result and fills `model`.
SatResult solve_component(const std::vector<uint32_t>& var_ids, const std::vector<ExprRef>& exprs,
                          Budget& budget, Assignment& model) {
  std::unordered_map<uint32_t, int> local;
  std::vector<uint8_t> widths;
  for (size_t i = 0; i < var_ids.size(); ++i) {
    local.emplace(var_ids[i], static_cast<int>(i));
    widths.push_back(var_info(var_ids[i]).width);
  }
  const size_t n = var_ids.size();
  std::vector<Tape> tapes;
  tapes.reserve(exprs.size());
  for (const auto& e : exprs) tapes.push_back(compile(e, local));

  std::vector<uint32_t> env(n, 0), scratch;

  // Unary constraints filter per-variable domains.
  std::vector<std::vector<uint32_t>> domain(n);
  std::vector<std::vector<const Tape*>> unary(n);
  std::vector<const Tape*> multi;
  for (const auto& t : tapes) {
    if (t.vars.size() == 1) unary[t.vars[0]].push_back(&t);
    else multi.push_back(&t);
  }
  for (size_t v = 0; v < n; ++v) {
    if (widths[v] > 16) {
      // Too wide to enumerate; only handled when pinned by a unary equality.
      return SatResult::Unknown;
    }
    const uint32_t top = mask_of(widths[v]);
    for (uint32_t x = 0;; ++x) {
      env[v] = x;
      bool ok = true;
      for (const Tape* t : unary[v]) {
        if (!budget.tick()) return SatResult::Unknown;
        if (!run_tape(*t, env, scratch)) {
          ok = false;
          break;
        }
      }
      if (ok) domain[v].push_back(x);
      if (x == top) break;
    }
    if (domain[v].empty()) return SatResult::Unsat;
    env[v] = domain[v][0];
  }

  // Smallest domains first; constraints are checked once all their vars are set.
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<int> degree(n, 0);
  for (const Tape* t : multi)
    for (int v : t->vars) ++degree[v];
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (domain[a].size() != domain[b].size()) return domain[a].size() < domain[b].size();
    return degree[a] > degree[b];
  });
  std::vector<int> pos(n);
  for (size_t i = 0; i < n; ++i) pos[order[i]] = static_cast<int>(i);
  std::vector<std::vector<const Tape*>> checks(n);
  for (const Tape* t : multi) {
    int last = -1;
    for (int v : t->vars) last = std::max(last, pos[v]);
    if (last < 0) {
      // Variable-free after simplification failed; evaluate once.
      if (!budget.tick()) return SatResult::Unknown;
      if (!run_tape(*t, env, scratch)) return SatResult::Unsat;
      continue;
    }
    checks[last].push_back(t);
  }

  std::vector<size_t> choice(n, 0);
  int level = 0;
  while (level >= 0) {
    if (level == static_cast<int>(n)) {
      for (size_t v = 0; v < n; ++v) model[var_ids[v]] = env[v];
      return SatResult::Sat;
    }
    const int v = order[level];
    if (choice[level] >= domain[v].size()) {
      choice[level] = 0;
      --level;
      if (level >= 0) ++choice[level];
      continue;
    }
    env[v] = domain[v][choice[level]];
    bool ok = true;
    for (const Tape* t : checks[level]) {
      if (!budget.tick()) return SatResult::Unknown;
      if (!run_tape(*t, env, scratch)) {
        ok = false;
        break;
      }
    }
    if (ok) ++level;
    else ++choice[level];
  }
  return SatResult::Unsat;
}

// Constraints sharing variables, transitively, with `seed`.
std::vector<const Constraint*> relevant(const PathCondition& pc, std::vector<uint32_t> seed) {
  std::vector<const Constraint*> out;
  const auto& items = pc.constraints();
  std::vector<bool> taken(items.size(), false);
  for (size_t i = 0; i < items.size(); ++i) {
    if (!items[i].expr->has_var) {
      taken[i] = true;
      out.push_back(&items[i]);  // constant-false constraints make everything unsat
    }
  }
  std::unordered_set<uint32_t> live(seed.begin(), seed.end());
  bool changed = !live.empty();
  while (changed) {
    changed = false;
    for (size_t i = 0; i < items.size(); ++i) {
      if (taken[i]) continue;
      bool hit = false;
      for (uint32_t v : items[i].vars)
        if (live.count(v)) {
          hit = true;
          break;
        }
      if (!hit) continue;
      taken[i] = true;
      out.push_back(&items[i]);
      for (uint32_t v : items[i].vars) changed |= live.insert(v).second;
    }
  }
  return out;
}

uint64_t mix(uint64_t h, uint64_t v) {
  h ^= v + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
  return h;
}

}  // namespace

Solver::Solver(SolverConfig cfg) : cfg_(cfg) {}

Solver::Outcome Solver::solve(const std::vector<const Constraint*>& cs,
                              const std::vector<ExprRef>& extra) {
  {
    std::lock_guard lk(mu_);
    ++stats_.queries;
  }
  std::vector<Item> items;
  std::vector<std::vector<uint32_t>> extra_vars;
  extra_vars.reserve(extra.size());
  for (const auto* c : cs) items.push_back({c->expr, &c->vars});
  for (const auto& e : extra) {
    extra_vars.push_back(collect_vars(e));
    items.push_back({e, &extra_vars.back()});
  }

  Outcome out{SatResult::Sat, {}};
  UnionFind uf;
  for (const auto& it : items) {
    if (!it.expr->has_var) {
      if (it.expr->value == 0) return {SatResult::Unsat, {}};
      continue;
    }
    for (size_t k = 1; k < it.vars->size(); ++k) uf.unite((*it.vars)[0], (*it.vars)[k]);
    if (!it.vars->empty()) uf.find((*it.vars)[0]);
  }
  std::map<uint32_t, std::vector<ExprRef>> comp_exprs;
  std::map<uint32_t, std::vector<uint32_t>> comp_vars;
  for (const auto& it : items) {
    if (!it.expr->has_var) continue;
    comp_exprs[uf.find((*it.vars)[0])].push_back(it.expr);
  }
  for (auto& [v, _] : uf.parent) comp_vars[uf.find(v)].push_back(v);

  bool unknown = false;
  for (auto& [root, exprs] : comp_exprs) {
    auto& vs = comp_vars[root];
    std::sort(vs.begin(), vs.end());
    std::vector<const Expr*> key_ptrs;
    for (const auto& e : exprs) key_ptrs.push_back(e.get());
    std::sort(key_ptrs.begin(), key_ptrs.end());
    key_ptrs.erase(std::unique(key_ptrs.begin(), key_ptrs.end()), key_ptrs.end());
    uint64_t key = key_ptrs.size();
    for (const auto* p : key_ptrs) key = mix(key, reinterpret_cast<uintptr_t>(p));

    {
      std::lock_guard lk(mu_);
      auto it = cache_.find(key);
      if (it != cache_.end() && it->second.keys == key_ptrs) {
        ++stats_.cache_hits;
        if (it->second.result == SatResult::Unsat) return {SatResult::Unsat, {}};
        for (auto& [k, v] : it->second.model) out.model[k] = v;
        continue;
      }
    }

    Budget budget(cfg_);
    Assignment m;
    const SatResult r = solve_component(vs, exprs, budget, m);
    {
      std::lock_guard lk(mu_);
      stats_.evaluations += budget.used();
      if (r == SatResult::Unknown) {
        ++stats_.timeouts;
      } else {
        if (cache_.size() > 8192) cache_.clear();
        CacheEntry ce;
        ce.keys = key_ptrs;
        ce.hold = exprs;
        ce.result = r;
        ce.model = m;
        cache_[key] = std::move(ce);
      }
    }
    if (r == SatResult::Unsat) return {SatResult::Unsat, {}};
    if (r == SatResult::Unknown) unknown = true;
    for (auto& [k, v] : m) out.model[k] = v;
  }
  if (unknown) out.result = SatResult::Unknown;
  return out;
}

SatResult Solver::check(const PathCondition& pc) {
  std::vector<const Constraint*> cs;
  for (const auto& c : pc.constraints()) cs.push_back(&c);
  return solve(cs, {}).result;
}

SatResult Solver::check_with(const PathCondition& pc, const ExprRef& extra) {
  if (!extra->has_var) {
    if (extra->value == 0 || pc.trivially_false()) return SatResult::Unsat;
    return SatResult::Sat;
  }
  return solve(relevant(pc, collect_vars(extra)), {extra}).result;
}

bool Solver::is_satisfiable(const PathCondition& pc) { return check(pc) != SatResult::Unsat; }

std::optional<Model> Solver::model(const PathCondition& pc) {
  std::vector<const Constraint*> cs;
  for (const auto& c : pc.constraints()) cs.push_back(&c);
  auto o = solve(cs, {});
  if (o.result == SatResult::Unsat) return std::nullopt;
  if (o.result == SatResult::Unknown) throw SolverTimeout("solver budget exhausted");
  return Model{std::move(o.model)};
}

uint32_t Solver::eval_model(const PathCondition& pc, const ExprRef& expr) {
  if (pc.trivially_false()) throw Unsat("path condition is unsatisfiable");
  if (!expr->has_var) {
    if (pc.empty()) return expr->value;
  }
  auto cs = relevant(pc, collect_vars(expr));
  auto o = solve(cs, {});
  if (o.result == SatResult::Unsat) throw Unsat("path condition is unsatisfiable");
  if (o.result == SatResult::Unknown) throw SolverTimeout("solver budget exhausted");
  return evaluate(expr, o.model);
}

std::optional<uint32_t> Solver::is_constant(const PathCondition& pc, const ExprRef& expr) {
  if (!expr->has_var) return expr->value;
  uint32_t v;
  try {
    v = eval_model(pc, expr);
  } catch (const SolverTimeout&) {
    return std::nullopt;
  } catch (const Unsat&) {
    return std::nullopt;
  }
  const auto excl = mk_ne(expr, mk_const(v, expr->width));
  const auto r = check_with(pc, excl);
  if (r == SatResult::Unsat) return v;
  return std::nullopt;
}

std::vector<uint32_t> Solver::enumerate_values(const PathCondition& pc, const ExprRef& expr,
                                               size_t limit, bool* complete) {
  std::vector<uint32_t> out;
  if (complete) *complete = false;
  if (!expr->has_var) {
    out.push_back(expr->value);
    if (complete) *complete = true;
    return out;
  }
  auto cs = relevant(pc, collect_vars(expr));
  std::vector<ExprRef> excl;
  while (out.size() < limit) {
    auto o = solve(cs, excl);
    if (o.result == SatResult::Unsat) {
      if (complete) *complete = true;
      return out;
    }
    if (o.result == SatResult::Unknown) return out;
    const uint32_t v = evaluate(expr, o.model);
    out.push_back(v);
    excl.push_back(mk_ne(expr, mk_const(v, expr->width)));
  }
  // Exactly `limit` values may still be the whole set.
  if (complete && solve(cs, excl).result == SatResult::Unsat) *complete = true;
  return out;
}

namespace {

std::string smt_const(uint32_t v, uint8_t w) {
  std::string s = "#b";
  for (int i = w - 1; i >= 0; --i) s += ((v >> i) & 1) ? '1' : '0';
  return s;
}

std::string smt_var(uint32_t id) { return "|" + var_info(id).name + "|"; }

}  // namespace

std::string to_smtlib(const PathCondition& pc, const std::vector<ExprRef>& extra) {
  std::vector<ExprRef> roots;
  for (const auto& c : pc.constraints()) roots.push_back(c.expr);
  for (const auto& e : extra) roots.push_back(e);

  std::ostringstream out;
  out << "(set-logic QF_BV)\n";
  std::vector<uint32_t> all;
  for (const auto& r : roots) {
    auto v = collect_vars(r);
    all.insert(all.end(), v.begin(), v.end());
  }
  std::sort(all.begin(), all.end());
  all.erase(std::unique(all.begin(), all.end()), all.end());
  for (uint32_t v : all)
    out << "(declare-fun " << smt_var(v) << " () (_ BitVec " << unsigned(var_info(v).width) << "))\n";

  std::unordered_map<const Expr*, std::string> names;
  int counter = 0;
  auto go = [&](auto&& self, const Expr* x) -> std::string {
    if (x->kind == Kind::Const) return smt_const(x->value, x->width);
    if (x->kind == Kind::Var) return smt_var(x->value);
    if (auto it = names.find(x); it != names.end()) return it->second;
    const std::string a = x->a ? self(self, x->a.get()) : "";
    const std::string b = x->b ? self(self, x->b.get()) : "";
    const std::string c = x->c ? self(self, x->c.get()) : "";
    const unsigned w = x->width;
    const unsigned aw = x->a ? x->a->width : 0;
    auto boolv = [](const std::string& p) { return "(ite " + p + " #b1 #b0)"; };
    std::string body;
    switch (x->kind) {
      case Kind::Add: body = "(bvadd " + a + " " + b + ")"; break;
      case Kind::Sub: body = "(bvsub " + a + " " + b + ")"; break;
      case Kind::Mul: body = "(bvmul " + a + " " + b + ")"; break;
      case Kind::UDiv: body = "(bvudiv " + a + " " + b + ")"; break;
      case Kind::URem: body = "(bvurem " + a + " " + b + ")"; break;
      case Kind::And: body = "(bvand " + a + " " + b + ")"; break;
      case Kind::Or: body = "(bvor " + a + " " + b + ")"; break;
      case Kind::Xor: body = "(bvxor " + a + " " + b + ")"; break;
      case Kind::Not: body = "(bvnot " + a + ")"; break;
      case Kind::Shl: body = "(bvshl " + a + " " + b + ")"; break;
      case Kind::LShr: body = "(bvlshr " + a + " " + b + ")"; break;
      case Kind::RotL:
      case Kind::RotR: {
        const std::string wc = smt_const(w, static_cast<uint8_t>(w));
        const std::string s = "(bvurem " + b + " " + wc + ")";
        const std::string r = "(bvsub " + wc + " " + s + ")";
        body = x->kind == Kind::RotL
                   ? "(bvor (bvshl " + a + " " + s + ") (bvlshr " + a + " " + r + "))"
                   : "(bvor (bvlshr " + a + " " + s + ") (bvshl " + a + " " + r + "))";
        break;
      }
      case Kind::Eq: body = boolv("(= " + a + " " + b + ")"); break;
      case Kind::Ne: body = boolv("(not (= " + a + " " + b + "))"); break;
      case Kind::Ult: body = boolv("(bvult " + a + " " + b + ")"); break;
      case Kind::Ule: body = boolv("(bvule " + a + " " + b + ")"); break;
      case Kind::Slt: body = boolv("(bvslt " + a + " " + b + ")"); break;
      case Kind::Sle: body = boolv("(bvsle " + a + " " + b + ")"); break;
      case Kind::ZExt: body = "((_ zero_extend " + std::to_string(w - aw) + ") " + a + ")"; break;
      case Kind::Extract:
        body = "((_ extract " + std::to_string(x->hi) + " " + std::to_string(x->lo) + ") " + a + ")";
        break;
      case Kind::Concat: body = "(concat " + a + " " + b + ")"; break;
      case Kind::Ite: body = "(ite (= " + a + " #b1) " + b + " " + c + ")"; break;
      default: break;
    }
    const std::string name = "t" + std::to_string(counter++);
    out << "(define-fun " << name << " () (_ BitVec " << w << ") " << body << ")\n";
    names.emplace(x, name);
    return name;
  };
  for (const auto& r : roots) {
    const std::string n = go(go, r.get());
    out << "(assert (= " << n << " #b1))\n";
  }
  out << "(check-sat)\n";
  return out.str();
}

}  // namespace fwscope::solver
