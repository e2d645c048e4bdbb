#include <algorithm>
#include <chrono>

#include "fwscope/queries.hpp"

namespace fwscope::queries {

using namespace symexec;

namespace {

class CheckLoads : public Listener {
 public:
  std::optional<Location> found;
  uint16_t site{0};

  Action on_load(const Access& a, const ExecState& st) override {
    if (!st.active_isr || a.kind != ir::AccessKind::Data || !a.concrete_address) return Action::None;
    if (a.region != Region::Iram && a.region != Region::Xram) return Action::None;
    // Register banks: ISRs save and restore them, they are not inputs.
    if (a.region == Region::Iram && *a.concrete_address < 0x20) return Action::None;
    const Location l{a.region, *a.concrete_address};
    if (st.isr_writes.count(l) || st.policy().contains(l)) return Action::None;
    found = l;
    site = a.site;
    return Action::StopRun;
  }
};

}  // namespace

SymbolicPolicy SymbolicLocationSet::policy() const {
  SymbolicPolicy p;
  for (const auto& l : locations) p.add(l);
  return p;
}

SymbolicLocationSet find_symbolic_locations(lifter::Program& program, const DiscoveryConfig& cfg,
                                            const std::set<Location>& initial) {
  SymbolicLocationSet out;
  out.locations = initial;
  const auto isrs = machine::discover_isrs(program.image());
  for (const auto& [src, entry] : isrs) {
    for (unsigned it = 0; it < cfg.tau; ++it) {
      ExplorationConfig ec = cfg.exploration;
      ec.only_isr = src;
      ec.interrupts = true;
      ec.targets.clear();
      CheckLoads check;
      const auto t0 = std::chrono::steady_clock::now();
      auto r = execute(program, out.policy(), ec, {&check});
      DiscoveryStep step{src, it, check.found, check.site,
                         std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(),
                         r.states_created};
      out.log.push_back(step);
      if (!check.found) break;
      out.locations.insert(*check.found);
    }
  }
  return out;
}

std::string_view policy_source_name(PolicySource p) { return p == PolicySource::Full ? "full" : "partial"; }

bool Query1Report::any_reached() const {
  return std::any_of(targets.begin(), targets.end(), [](const TargetResult& t) { return t.reached; });
}

const TargetResult* Query1Report::target(uint16_t t) const {
  for (const auto& x : targets)
    if (x.target == t) return &x;
  return nullptr;
}

std::vector<UsbConstraint> usb_constraints(const solver::PathCondition& path,
                                           const std::map<std::string, Location>& setup_fields,
                                           solver::Solver& solver) {
  std::set<uint32_t> vars;
  for (const auto& c : path.constraints()) vars.insert(c.vars.begin(), c.vars.end());
  std::vector<UsbConstraint> out;
  for (auto id : vars) {
    const auto& info = solver::var_info(id);
    auto loc = parse_location(info.name);
    if (!loc || info.width != 8) continue;
    auto v = solver.is_constant(path, solver::mk_var_id(id));
    if (!v) continue;
    UsbConstraint u{*loc, location_name(*loc), static_cast<uint8_t>(*v), {}};
    for (const auto& [name, l] : setup_fields)
      if (l == *loc) u.field = name;
    if (auto m = usb_constant_name(u.field, u.value)) u.meaning = std::string(*m);
    out.push_back(std::move(u));
  }
  std::sort(out.begin(), out.end(), [](const UsbConstraint& a, const UsbConstraint& b) { return a.location < b.location; });
  return out;
}

Query1Report query1(lifter::Program& program, const std::set<uint16_t>& targets, const Query1Config& cfg) {
  if (targets.empty()) throw std::invalid_argument("query 1 needs at least one target");
  SymbolicPolicy policy = SymbolicPolicy::none();
  if (cfg.source == PolicySource::Full) {
    policy = SymbolicPolicy::full();
  } else {
    for (const auto& l : cfg.symbolic) policy.add(l);
  }
  solver::Solver solver(cfg.exploration.solver);
  {
    auto probe = ExecState::reset(std::make_shared<const SymbolicPolicy>(policy));
    apply_preconditions(probe, cfg.preconditions, solver);
  }
  ExplorationConfig ec = cfg.exploration;
  ec.targets = targets;
  ec.stop_when_targets_hit = true;
  ec.preconditions = precondition_exprs(cfg.preconditions);
  const auto r = execute(program, policy, ec);

  Query1Report rep;
  rep.source = cfg.source;
  rep.states_created = r.states_created;
  rep.blocks_executed = r.blocks_executed;
  rep.coverage = r.coverage.size();
  rep.termination = r.termination;
  rep.diagnostics = r.diagnostics;
  for (auto t : targets) {
    TargetResult tr;
    tr.target = t;
    if (const auto* h = r.hit(t)) {
      tr.reached = true;
      tr.seconds = h->seconds;
      tr.states = h->states_created;
      tr.coverage = h->coverage;
      for (const auto& c : h->path.constraints())
        tr.path.push_back({solver::to_string(c.expr), c.address, c.origin});
      for (const auto& [id, v] : h->model) tr.model[solver::var_info(id).name] = v;
      tr.usb = usb_constraints(h->path, cfg.setup_fields, solver);
    }
    rep.targets.push_back(std::move(tr));
  }
  if (!rep.any_reached()) throw NoTargetsReached(std::move(rep));
  return rep;
}

}  // namespace fwscope::queries
