#include <algorithm>
#include <chrono>
#include <deque>

#include "fwscope/symexec.hpp"

namespace fwscope::symexec {

using ir::Op;
using ir::Stmt;
using ir::StmtKind;
using ir::Value;
using machine::InterruptSource;
using solver::Kind;
using solver::mk_const;
using solver::SatResult;

namespace {

size_t source_index(InterruptSource s) { return static_cast<size_t>(s); }

ExprRef enabled_predicate(const ExprRef& ie, InterruptSource s) {
  auto global = solver::mk_ne(solver::mk_and(ie, mk_const(machine::kIeGlobalEnable, 8)), mk_const(0, 8));
  auto own = solver::mk_ne(solver::mk_and(ie, mk_const(machine::ie_enable_bit(s), 8)), mk_const(0, 8));
  return solver::mk_and(global, own);
}

ExprRef assign_expr(const Stmt& s, const ExprRef& a, const ExprRef& b, const ExprRef& c) {
  switch (s.op) {
    case Op::Copy: return a;
    case Op::Add: return solver::mk_binary(Kind::Add, a, b);
    case Op::Sub: return solver::mk_binary(Kind::Sub, a, b);
    case Op::Mul: return solver::mk_binary(Kind::Mul, a, b);
    case Op::UDiv: return solver::mk_binary(Kind::UDiv, a, b);
    case Op::URem: return solver::mk_binary(Kind::URem, a, b);
    case Op::And: return solver::mk_binary(Kind::And, a, b);
    case Op::Or: return solver::mk_binary(Kind::Or, a, b);
    case Op::Xor: return solver::mk_binary(Kind::Xor, a, b);
    case Op::Not: return solver::mk_not(a);
    case Op::Shl: return solver::mk_binary(Kind::Shl, a, b);
    case Op::LShr: return solver::mk_binary(Kind::LShr, a, b);
    case Op::Eq: return solver::mk_binary(Kind::Eq, a, b);
    case Op::Ne: return solver::mk_binary(Kind::Ne, a, b);
    case Op::Ult: return solver::mk_binary(Kind::Ult, a, b);
    case Op::Ule: return solver::mk_binary(Kind::Ule, a, b);
    case Op::ZExt: return solver::mk_zext(a, s.width);
    case Op::Extract: return solver::mk_extract(a, s.hi, s.lo);
    case Op::Concat: return solver::mk_concat(a, b);
    case Op::Ite: return solver::mk_ite(a, b, c);
    case Op::Parity: return solver::mk_parity(a);
  }
  throw std::logic_error("unknown IR op");
}

class Engine {
 public:
  Engine(lifter::Program& program, const SymbolicPolicy& policy, const ExplorationConfig& cfg,
         const std::vector<Listener*>& listeners)
      : program_(program),
        policy_(std::make_shared<const SymbolicPolicy>(policy)),
        cfg_(cfg),
        listeners_(listeners),
        solver_(cfg.solver),
        rng_(cfg.seed),
        covered_(0x10000, false),
        isrs_(machine::discover_isrs(program.image())) {}

  ExplorationResult run();

 private:
  void step(ExecState st);
  void finish(ExecState&& st, PathEnd why, uint16_t addr, std::string detail = {});
  void spawn(ExecState&& child, const ExecState& parent);
  void diag(std::string kind, uint16_t addr, std::string detail = {});
  bool handle(Action a, ExecState& st, uint16_t site);
  // Concrete addresses a (possibly symbolic) access may touch. Empty when the
  // path was ended.
  std::vector<uint32_t> resolve(ExecState& st, const ExprRef& addr, Region r, uint16_t site);
  ExprRef load(ExecState& st, Region r, uint32_t a);
  std::chrono::steady_clock::time_point start_{};

  lifter::Program& program_;
  std::shared_ptr<const SymbolicPolicy> policy_;
  const ExplorationConfig& cfg_;
  const std::vector<Listener*>& listeners_;
  solver::Solver solver_;
  std::mt19937_64 rng_;
  std::vector<bool> covered_;
  machine::IsrMap isrs_;
  std::vector<ExecState> frontier_;
  ExplorationResult res_;
  uint64_t next_id_{1};
  uint64_t tick_{0};
  bool stop_{false};
  std::optional<Termination> stop_reason_;
};

void Engine::diag(std::string kind, uint16_t addr, std::string detail) {
  // Identical diagnostics are reported once.
  for (const auto& d : res_.diagnostics)
    if (d.kind == kind && d.address == addr && d.detail == detail) return;
  res_.diagnostics.push_back({std::move(kind), addr, std::move(detail)});
}

void Engine::finish(ExecState&& st, PathEnd why, uint16_t addr, std::string detail) {
  st.end = why;
  st.end_address = addr;
  st.end_detail = std::move(detail);
  if (why == PathEnd::LoopPruned) ++res_.pruned;
  res_.ended.push_back(std::move(st));
}

void Engine::spawn(ExecState&& child, const ExecState& parent) {
  child.parent = parent.id;
  child.id = ++next_id_;
  ++res_.states_created;
  if (res_.states_created >= cfg_.max_states && !stop_) {
    stop_ = true;
    stop_reason_ = Termination::StateLimit;
  }
  frontier_.push_back(std::move(child));
}

bool Engine::handle(Action a, ExecState& st, uint16_t site) {
  switch (a) {
    case Action::None:
      return true;
    case Action::KillPath:
      finish(std::move(st), PathEnd::Killed, site, "listener");
      return false;
    case Action::StopRun:
      stop_ = true;
      if (!stop_reason_) stop_reason_ = Termination::StoppedByListener;
      finish(std::move(st), PathEnd::Killed, site, "listener stopped the run");
      return false;
  }
  return true;
}

ExprRef Engine::load(ExecState& st, Region r, uint32_t a) {
  if (r == Region::Code) return mk_const(machine::code_read(program_.image(), a), 8);
  return st.read(r, a);
}

std::vector<uint32_t> Engine::resolve(ExecState& st, const ExprRef& addr, Region r, uint16_t site) {
  if (addr->is_const()) return {addr->value};
  bool complete = false;
  std::vector<uint32_t> vals;
  try {
    vals = solver_.enumerate_values(st.path, addr, cfg_.max_fanout, &complete);
  } catch (const solver::SolverTimeout&) {
    complete = false;
  }
  if (vals.empty()) {
    diag("solver-timeout", site, "symbolic address could not be resolved");
    finish(std::move(st), PathEnd::NoFeasibleSuccessor, site, "unresolvable symbolic address");
    return {};
  }
  if (r == Region::Code) {
    const uint32_t size = static_cast<uint32_t>(program_.image().size());
    bool oob = false;
    if (complete) {
      for (uint32_t v : vals) oob = oob || v >= size;
    } else if (size <= solver::mask_of(addr->width)) {
      oob = solver_.check_with(st.path, solver::mk_ule(mk_const(size, addr->width), addr)) != SatResult::Unsat;
    }
    if (oob) {
      diag("symbolic-index-out-of-region", site, "CODE index may exceed the image");
      finish(std::move(st), PathEnd::SymbolicIndexOutOfRegion, site, "CODE");
      return {};
    }
  }
  if (!complete) {
    ExprRef any = solver::mk_false();
    for (uint32_t v : vals) any = solver::mk_or(any, solver::mk_eq(addr, mk_const(v, addr->width)));
    st.path.add(any, site, true, "address");
    diag("symbolic-index-concretized", site,
         std::string(ir::region_name(r)) + " index limited to " + std::to_string(vals.size()) + " values");
  }
  std::sort(vals.begin(), vals.end());
  return vals;
}

void Engine::step(ExecState st) {
  const uint16_t entry = st.pc;
  {
    auto& lv = st.loop_visits[entry];
    if (lv >= cfg_.loop_threshold) {
      finish(std::move(st), PathEnd::LoopPruned, entry);
      return;
    }
    ++lv;
  }
  const ir::Block* blk = nullptr;
  try {
    blk = &program_.block(entry);
  } catch (const isa::DecodeError& e) {
    diag("decode-failure", entry, e.what());
    finish(std::move(st), PathEnd::DecodeFailure, entry, e.what());
    return;
  }
  for (auto* l : listeners_)
    if (!handle(l->on_block(st), st, entry)) return;

  ++st.visits[entry];
  st.history.push_back(entry);
  ++res_.blocks_executed;
  for (auto& c : st.cooldown)
    if (c > 0) --c;

  std::vector<ExprRef> temps(blk->temp_widths.size());
  auto val = [&](const Value& v) -> ExprRef {
    return v.is_temp ? temps[v.v] : mk_const(v.v, v.width);
  };
  uint16_t site = entry;

  for (const Stmt& s : blk->stmts) {
    switch (s.kind) {
      case StmtKind::InstrBoundary: {
        site = s.addr;
        ++st.steps;
        if (!covered_[site]) {
          covered_[site] = true;
          res_.coverage.insert(site);
          st.last_new_coverage = ++tick_;
          st.loop_visits.clear();
        }
        if (cfg_.targets.count(site)) {
          if (!res_.reached(site)) {
            TargetHit h;
            h.target = site;
            h.state_id = st.id;
            h.states_created = res_.states_created;
            h.blocks_executed = res_.blocks_executed;
            h.coverage = res_.coverage.size();
            h.path = st.path;
            h.path_blocks = st.history.size();
            h.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
            try {
              auto m = solver_.model(st.path);
              if (m) h.model = std::move(m->values);
            } catch (const solver::SolverTimeout&) {
              h.model_complete = false;
              diag("solver-timeout", site, "no witness model for target");
            }
            res_.hits.push_back(std::move(h));
            if (cfg_.stop_when_targets_hit && res_.hits.size() == cfg_.targets.size()) {
              stop_ = true;
              stop_reason_ = Termination::TargetsReached;
            }
          }
          finish(std::move(st), PathEnd::TargetReached, site);
          return;
        }
        break;
      }
      case StmtKind::GetReg:
        temps[s.dst] = st.read(Region::Sfr, ir::reg_sfr_address(s.reg));
        break;
      case StmtKind::PutReg:
        st.write(Region::Sfr, ir::reg_sfr_address(s.reg), val(s.a));
        break;
      case StmtKind::Load: {
        const ExprRef addr = val(s.a);
        auto addrs = resolve(st, addr, s.region, site);
        if (addrs.empty()) return;
        ExprRef v = load(st, s.region, addrs.back());
        for (size_t i = addrs.size() - 1; i-- > 0;)
          v = solver::mk_ite(solver::mk_eq(addr, mk_const(addrs[i], addr->width)),
                             load(st, s.region, addrs[i]), v);
        temps[s.dst] = v;
        if (!listeners_.empty()) {
          Access acc{site, entry, s.region, s.access, addr, v, std::nullopt};
          if (addrs.size() == 1) acc.concrete_address = addrs[0];
          for (auto* l : listeners_)
            if (!handle(l->on_load(acc, st), st, site)) return;
        }
        break;
      }
      case StmtKind::Store: {
        const ExprRef addr = val(s.a);
        const ExprRef v = val(s.b);
        auto addrs = resolve(st, addr, s.region, site);
        if (addrs.empty()) return;
        if (addrs.size() == 1) {
          st.write(s.region, addrs[0], v);
        } else {
          for (uint32_t a : addrs)
            st.write(s.region, a,
                     solver::mk_ite(solver::mk_eq(addr, mk_const(a, addr->width)), v, st.read(s.region, a)));
        }
        if (st.active_isr && s.access != ir::AccessKind::Stack)
          for (uint32_t a : addrs) st.isr_writes.insert({s.region, a});
        if (!listeners_.empty()) {
          Access acc{site, entry, s.region, s.access, addr, v, std::nullopt};
          if (addrs.size() == 1) acc.concrete_address = addrs[0];
          for (auto* l : listeners_)
            if (!handle(l->on_store(acc, st), st, site)) return;
        }
        break;
      }
      case StmtKind::Assign:
        temps[s.dst] = assign_expr(s, val(s.a), s.op == Op::Copy || s.op == Op::Not ? nullptr : val(s.b),
                                   s.op == Op::Ite ? val(s.c) : nullptr);
        break;
      case StmtKind::Trap: {
        const ExprRef cond = val(s.a);
        if (cond->is_const()) {
          if (cond->value) {
            finish(std::move(st), PathEnd::StackOverflow, site);
            return;
          }
          break;
        }
        if (solver_.check_with(st.path, cond) != SatResult::Unsat)
          diag("stack-overflow", site, "reachable under some inputs");
        const ExprRef ok = solver::mk_bool_not(cond);
        if (solver_.check_with(st.path, ok) == SatResult::Unsat) {
          finish(std::move(st), PathEnd::StackOverflow, site);
          return;
        }
        st.path.add(ok, site, false, "trap");
        break;
      }
      case StmtKind::CallMark:
        break;
      case StmtKind::RetMark:
        if (s.reti) st.active_isr.reset();
        break;
      case StmtKind::CJump: {
        const ExprRef cond = val(s.a);
        if (cond->is_const()) {
          st.pc = cond->value ? s.target : s.fallthrough;
          frontier_.push_back(std::move(st));
          return;
        }
        const ExprRef ncond = solver::mk_bool_not(cond);
        const bool can_take = solver_.check_with(st.path, cond) != SatResult::Unsat;
        const bool can_fall = solver_.check_with(st.path, ncond) != SatResult::Unsat;
        if (can_take && can_fall) {
          ExecState taken = st;
          taken.path.add(cond, site, true);
          taken.pc = s.target;
          st.path.add(ncond, site, false);
          st.pc = s.fallthrough;
          ++res_.forks;
          frontier_.push_back(std::move(st));
          spawn(std::move(taken), frontier_.back());
        } else if (can_take || can_fall) {
          st.pc = can_take ? s.target : s.fallthrough;
          frontier_.push_back(std::move(st));
        } else {
          finish(std::move(st), PathEnd::NoFeasibleSuccessor, site);
        }
        return;
      }
      case StmtKind::Jump: {
        const ExprRef target = val(s.a);
        if (target->is_const()) {
          st.pc = static_cast<uint16_t>(target->value);
          frontier_.push_back(std::move(st));
          return;
        }
        bool complete = false;
        std::vector<uint32_t> vals;
        try {
          vals = solver_.enumerate_values(st.path, target, cfg_.max_fanout, &complete);
        } catch (const solver::SolverTimeout&) {
        }
        std::sort(vals.begin(), vals.end());
        if (!complete) diag("indirect-fanout-truncated", site, std::to_string(vals.size()) + " targets kept");
        std::vector<ExecState> succ;
        for (uint32_t v : vals) {
          if (!isa::try_decode(program_.image(), static_cast<uint16_t>(v))) {
            diag("undecodable-indirect-target", site, std::to_string(v));
            continue;
          }
          ExecState child = st;
          child.path.add(solver::mk_eq(target, mk_const(v, target->width)), site, true, "indirect");
          child.pc = static_cast<uint16_t>(v);
          succ.push_back(std::move(child));
        }
        if (succ.empty()) {
          finish(std::move(st), PathEnd::NoFeasibleSuccessor, site, "no decodable indirect target");
          return;
        }
        res_.forks += succ.size() - 1;
        // The first successor keeps the parent's identity.
        succ[0].id = st.id;
        succ[0].parent = st.parent;
        frontier_.push_back(std::move(succ[0]));
        for (size_t i = 1; i < succ.size(); ++i) spawn(std::move(succ[i]), st);
        return;
      }
    }
  }
  // Blocks always end in a terminator.
  st.pc = blk->end_address();
  frontier_.push_back(std::move(st));
}

ExplorationResult Engine::run() {
  cfg_.validate();
  start_ = std::chrono::steady_clock::now();
  const auto start = start_;
  const auto deadline = start + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                    std::chrono::duration<double>(cfg_.time_limit_seconds));

  ExecState init = ExecState::reset(policy_);
  init.id = 1;
  res_.states_created = 1;
  bool feasible = true;
  for (const auto& p : cfg_.preconditions) init.path.add(p, 0, true, "precondition");
  if (init.path.trivially_false() || solver_.check(init.path) == SatResult::Unsat) feasible = false;
  if (!feasible) {
    diag("unsatisfiable-preconditions", 0);
    finish(std::move(init), PathEnd::NoFeasibleSuccessor, 0, "preconditions");
  } else {
    frontier_.push_back(std::move(init));
  }

  uint64_t iter = 0;
  while (!frontier_.empty()) {
    if (stop_) break;
    if (res_.blocks_executed >= cfg_.max_blocks) {
      stop_reason_ = Termination::BlockLimit;
      break;
    }
    if ((++iter & 0xFF) == 0 && std::chrono::steady_clock::now() > deadline) {
      stop_reason_ = Termination::TimeLimit;
      break;
    }
    const size_t idx = select_next(frontier_, cfg_, rng_);
    ExecState st = std::move(frontier_[idx]);
    if (idx + 1 != frontier_.size()) frontier_[idx] = std::move(frontier_.back());
    frontier_.pop_back();

    if (cfg_.interrupts && !isrs_.empty() && !st.active_isr) {
      auto states = schedule_interrupt(std::move(st), isrs_, cfg_, solver_, rng_);
      st = std::move(states[0]);
      for (size_t i = 1; i < states.size(); ++i) {
        ++res_.isr_entries;
        ++res_.forks;
        spawn(std::move(states[i]), st);
      }
    }
    step(std::move(st));
  }
  if (stop_reason_) res_.termination = *stop_reason_;
  for (auto& st : frontier_) {
    st.end = PathEnd::Aborted;
    st.end_address = st.pc;
    res_.ended.push_back(std::move(st));
  }
  frontier_.clear();
  for (auto* l : listeners_) l->on_termination(res_.ended);
  res_.solver_stats = solver_.stats();
  res_.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return std::move(res_);
}

}  // namespace

std::vector<ExecState> schedule_interrupt(ExecState state, const machine::IsrMap& isrs,
                                          const ExplorationConfig& config, solver::Solver& solver,
                                          std::mt19937_64& rng) {
  std::vector<ExecState> out;
  out.push_back(std::move(state));
  if (out[0].active_isr) return out;
  const ExprRef ie = out[0].read(Region::Sfr, machine::sfr::IE);
  if (ie->is_const() && !(ie->value & machine::kIeGlobalEnable)) return out;
  for (const auto& [src, entry] : isrs) {
    if (config.only_isr && *config.only_isr != src) continue;
    const size_t i = source_index(src);
    if (out[0].cooldown[i] > 0) continue;
    const ExprRef pred = enabled_predicate(ie, src);
    if (pred->is_const() && !pred->value) continue;
    if (!pred->is_const() && solver.check_with(out[0].path, pred) == SatResult::Unsat) continue;
    const ExprRef sp = out[0].read(Region::Sfr, machine::sfr::SP);
    if (!sp->is_const() || sp->value >= 0xFE) continue;

    std::uniform_int_distribution<uint32_t> draw(config.cooldown_min, config.cooldown_max);
    const uint32_t cd = draw(rng);
    ExecState fork = out[0];
    if (!pred->is_const()) fork.path.add(pred, out[0].pc, true, "interrupt");
    const uint16_t ret = out[0].pc;
    fork.write(Region::Iram, sp->value + 1, mk_const(ret & 0xFF, 8));
    fork.write(Region::Iram, sp->value + 2, mk_const(ret >> 8, 8));
    fork.write(Region::Sfr, machine::sfr::SP, mk_const(sp->value + 2, 8));
    fork.pc = entry;
    fork.active_isr = src;
    fork.cooldown[i] = cd;
    out[0].cooldown[i] = cd;
    out.push_back(std::move(fork));
  }
  return out;
}

size_t select_next(const std::vector<ExecState>& frontier, const ExplorationConfig& config,
                   std::mt19937_64& rng) {
  if (frontier.size() == 1) return 0;
  bool coverage_mode;
  if (config.random_weight <= 0) coverage_mode = true;
  else if (config.coverage_weight <= 0) coverage_mode = false;
  else {
    std::uniform_real_distribution<double> u(0.0, config.random_weight + config.coverage_weight);
    coverage_mode = u(rng) >= config.random_weight;
  }
  if (!coverage_mode) return static_cast<size_t>(rng() % frontier.size());
  size_t best = 0;
  for (size_t i = 1; i < frontier.size(); ++i) {
    const auto& a = frontier[i];
    const auto& b = frontier[best];
    if (a.last_new_coverage > b.last_new_coverage ||
        (a.last_new_coverage == b.last_new_coverage && a.id > b.id))
      best = i;
  }
  return best;
}

ExplorationResult execute(lifter::Program& program, const SymbolicPolicy& policy,
                          const ExplorationConfig& config, const std::vector<Listener*>& listeners) {
  if (program.image().empty()) throw std::invalid_argument("empty image");
  Engine e(program, policy, config, listeners);
  return e.run();
}

std::set<uint16_t> static_instructions(lifter::Program& program) {
  std::set<uint16_t> out;
  std::set<uint16_t> seen;
  std::deque<uint16_t> work{0};
  for (const auto& [src, entry] : machine::discover_isrs(program.image())) work.push_back(entry);
  while (!work.empty()) {
    const uint16_t a = work.front();
    work.pop_front();
    if (!seen.insert(a).second) continue;
    const ir::Block* b = nullptr;
    try {
      b = &program.block(a);
    } catch (const isa::DecodeError&) {
      continue;
    }
    out.insert(b->instr_addrs.begin(), b->instr_addrs.end());
    for (uint16_t s : b->successors) work.push_back(s);
    for (const auto& s : b->stmts)
      if (s.kind == StmtKind::CallMark) work.push_back(s.target);
  }
  return out;
}

}  // namespace fwscope::symexec
