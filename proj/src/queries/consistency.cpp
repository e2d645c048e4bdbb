#include <algorithm>
#include <deque>

#include "fwscope/queries.hpp"

namespace fwscope::queries {

using namespace symexec;
using usbstatic::InsnCategory;
using usbstatic::LocKey;
using usbstatic::PropRole;

namespace {

bool counter_iram(LocKey k) { return k >= 0x20 && k < 0x80; }

// Whether the value defined at `def` into `loc` reaches an address or index
// operand, following copies and arithmetic.
bool forms_address(const usbstatic::ReachingDefs& rd, uint16_t def, LocKey loc) {
  std::deque<std::pair<uint16_t, LocKey>> work{{def, loc}};
  std::set<std::pair<uint16_t, LocKey>> seen{{def, loc}};
  while (!work.empty()) {
    auto [d, k] = work.front();
    work.pop_front();
    for (auto u : rd.uses_of(d, k)) {
      const auto& m = rd.model(u);
      if (m.index == k || m.addr == k) return true;
      const bool flows = (m.category == InsnCategory::Copy && m.src == k) ||
                         (m.category == InsnCategory::Arith && m.dst);
      if (flows && m.dst && seen.insert({u, *m.dst}).second) work.push_back({u, *m.dst});
    }
  }
  return false;
}

SymbolicPolicy make_policy(const Query2Config& cfg) {
  SymbolicPolicy p = cfg.full_policy ? SymbolicPolicy::full() : SymbolicPolicy::none();
  if (!cfg.full_policy)
    for (const auto& l : cfg.symbolic) p.add(l);
  for (const auto& l : cfg.counters) p.pin(l);
  return p;
}

std::string label_for(uint16_t site, const Query2Config& cfg, const usbstatic::PropMap* prop) {
  if (!prop) return {};
  const auto src = prop->get(site, PropRole::Src).tracked;
  if (!src) return {};
  for (const auto& h : cfg.hits) {
    if (h.role != usbstatic::SignatureRole::Function || h.usb_class == "hid") continue;
    if (*src >= h.address && *src < h.address + 16) return h.usb_class + " protocol constant";
  }
  return {};
}

void rank(Query2Report& rep) {
  std::map<uint16_t, RankedAddress> by;
  std::map<uint16_t, std::set<uint8_t>> values;
  for (const auto& f : rep.flags) {
    auto& r = by[f.address];
    r.address = f.address;
    r.sites.push_back(f.site);
    values[f.address].insert(f.values.begin(), f.values.end());
  }
  for (auto& [a, r] : by) {
    r.score = values[a].size();
    r.rank = r.score >= 2 ? 1 : 2;
    std::sort(r.sites.begin(), r.sites.end());
    r.sites.erase(std::unique(r.sites.begin(), r.sites.end()), r.sites.end());
    rep.ranking.push_back(r);
  }
  std::stable_sort(rep.ranking.begin(), rep.ranking.end(),
                   [](const RankedAddress& a, const RankedAddress& b) { return a.score > b.score; });
}

class WatchConstantStores : public Listener {
 public:
  WatchConstantStores(const std::set<uint16_t>& targets, solver::SolverConfig sc) : targets_(targets), solver_(sc) {}

  Action on_store(const Access& a, const ExecState& st) override {
    if (!targets_.count(a.site) || a.kind != ir::AccessKind::Data) return Action::None;
    auto v = solver_.is_constant(st.path, a.value);
    if (!v) return Action::None;
    uint16_t addr = a.concrete_address ? static_cast<uint16_t>(*a.concrete_address) : 0;
    if (!a.concrete_address) {
      if (auto ca = solver_.is_constant(st.path, a.address)) addr = static_cast<uint16_t>(*ca);
    }
    auto& f = flags[{a.site, addr}];
    f.site = a.site;
    f.address = addr;
    f.blocks.insert(a.block);
    f.values.insert(static_cast<uint8_t>(*v));
    return Action::None;
  }

  std::map<std::pair<uint16_t, uint16_t>, Query2Flag> flags;

 private:
  const std::set<uint16_t>& targets_;
  solver::Solver solver_;
};

class RecordAccesses : public Listener {
 public:
  struct Conc {
    std::set<uint8_t> values;
  };

  Action on_store(const Access& a, const ExecState&) override {
    if (a.region != Region::Xram || a.kind != ir::AccessKind::Data || !a.concrete_address) return Action::None;
    const auto addr = static_cast<uint16_t>(*a.concrete_address);
    if (solver::is_symbolic(a.value)) {
      sym[addr].insert(a.block);
    } else {
      conc[{addr, a.block, a.site}].values.insert(static_cast<uint8_t>(a.value->value));
    }
    return Action::None;
  }

  std::map<uint16_t, std::set<uint16_t>> sym;               // address -> blocks
  std::map<std::tuple<uint16_t, uint16_t, uint16_t>, Conc> conc;  // (address, block, site)
};

}  // namespace

std::set<Location> find_counters(std::span<const uint8_t> image) {
  const auto g = usbstatic::CodeGraph::build(image);
  const usbstatic::ReachingDefs rd(g);
  const auto prop = usbstatic::prop_const_mem(g, rd);
  std::set<Location> out;
  for (const auto& [a, in] : g.insns) {
    const auto& m = rd.model(a);
    if (m.category != InsnCategory::Arith || !m.dst) continue;
    if (counter_iram(*m.dst)) {
      if (!forms_address(rd, a, *m.dst)) out.insert({Region::Iram, static_cast<uint32_t>(*m.dst)});
      continue;
    }
    if (*m.dst != usbstatic::acc_key()) continue;
    // Read-modify-write through A: the input comes from X and the result
    // goes back to X.
    std::optional<Location> from;
    bool same = true;
    for (auto d : rd.reaching(a, usbstatic::acc_key())) {
      const auto& dm = rd.model(d);
      std::optional<Location> l;
      if (dm.category == InsnCategory::Copy && dm.src && counter_iram(*dm.src))
        l = Location{Region::Iram, static_cast<uint32_t>(*dm.src)};
      else if (dm.category == InsnCategory::IndLoad && dm.region == Region::Xram)
        if (auto t = prop.get(d, PropRole::Src).tracked) l = Location{Region::Xram, *t};
      if (!l || (from && *from != *l)) same = false;
      from = l;
    }
    if (!from || !same) continue;
    bool written_back = false;
    for (auto u : rd.uses_of(a, usbstatic::acc_key())) {
      const auto& um = rd.model(u);
      if (from->region == Region::Iram && um.category == InsnCategory::Copy &&
          um.dst == static_cast<LocKey>(from->address))
        written_back = true;
      if (from->region == Region::Xram && um.category == InsnCategory::IndStore && um.value == usbstatic::acc_key() &&
          prop.get(u, PropRole::Dst).tracked == from->address)
        written_back = true;
    }
    if (written_back && !forms_address(rd, a, *m.dst)) out.insert(*from);
  }
  return out;
}

size_t Query2Report::rank1_count() const {
  return static_cast<size_t>(
      std::count_if(ranking.begin(), ranking.end(), [](const RankedAddress& r) { return r.rank == 1; }));
}

std::set<uint16_t> other_endpoints(const std::set<uint16_t>& ep0, unsigned max_ep) {
  std::set<uint16_t> out;
  for (auto e : ep0)
    for (unsigned i : {8u, 16u, 32u, 64u})
      for (unsigned k = 1; k <= max_ep; ++k) out.insert(static_cast<uint16_t>(e + i * k));
  return out;
}

Query2Report query2_unexpected(lifter::Program& program, const std::set<uint16_t>& ep0,
                               const usbstatic::PropMap& prop, const Query2Config& cfg) {
  if (ep0.empty()) throw std::invalid_argument("query 2 needs an EP0 address");
  Query2Report rep;
  rep.algorithm = "unexpected";
  rep.counters = cfg.counters;
  const auto eps = other_endpoints(ep0, cfg.max_ep);
  for (auto s : prop.stores())
    if (auto t = prop.get(s, PropRole::Dst).tracked; t && eps.count(*t)) rep.targets.insert(s);
  if (rep.targets.empty()) return rep;

  ExplorationConfig ec = cfg.exploration;
  ec.targets.clear();
  WatchConstantStores watch(rep.targets, ec.solver);
  const auto r = execute(program, make_policy(cfg), ec, {&watch});
  rep.states_created = r.states_created;
  rep.termination = r.termination;
  for (auto& [k, f] : watch.flags) {
    f.label = label_for(f.site, cfg, &prop);
    rep.flags.push_back(std::move(f));
  }
  rank(rep);
  return rep;
}

Query2Report query2_inconsistent(lifter::Program& program, const Query2Config& cfg) {
  Query2Report rep;
  rep.algorithm = "inconsistent";
  rep.counters = cfg.counters;
  ExplorationConfig ec = cfg.exploration;
  ec.targets.clear();
  RecordAccesses rec;
  const auto r = execute(program, make_policy(cfg), ec, {&rec});
  rep.states_created = r.states_created;
  rep.termination = r.termination;

  const auto prop = usbstatic::prop_const_mem(program.image());
  std::map<std::pair<uint16_t, uint16_t>, Query2Flag> flags;
  for (const auto& [key, c] : rec.conc) {
    const auto [addr, block, site] = key;
    auto it = rec.sym.find(addr);
    if (it == rec.sym.end()) continue;
    const bool other = std::any_of(it->second.begin(), it->second.end(), [b = block](uint16_t x) { return x != b; });
    if (!other) continue;
    auto& f = flags[{site, addr}];
    f.site = site;
    f.address = addr;
    f.blocks.insert(block);
    f.values.insert(c.values.begin(), c.values.end());
  }
  for (auto& [k, f] : flags) {
    f.label = label_for(f.site, cfg, &prop);
    rep.flags.push_back(std::move(f));
  }
  rank(rep);
  return rep;
}

}  // namespace fwscope::queries
