#include <algorithm>
#include <cstdio>
#include <deque>
#include <iterator>

#include "fwscope/usbstatic.hpp"

namespace fwscope::usbstatic {

using isa::Instruction;
using isa::Mnemonic;
using isa::OperandKind;

std::string PropTuple::str() const {
  auto one = [](const std::optional<uint16_t>& v) {
    if (!v) return std::string("⊥");
    char buf[8];
    std::snprintf(buf, sizeof buf, "0x%x", *v);
    return std::string(buf);
  };
  return "(" + one(value) + "," + one(tracked) + ")";
}

PropTuple PropMap::get(uint16_t site, PropRole role) const {
  auto it = sites_.find(site);
  if (it == sites_.end()) return {};
  return role == PropRole::Src ? it->second.src : it->second.dst;
}

void PropMap::set(uint16_t site, PropRole role, PropTuple t) {
  auto& s = sites_[site];
  (role == PropRole::Src ? s.src : s.dst) = t;
}

uint8_t PropMap::visits(uint16_t site) const {
  auto it = sites_.find(site);
  return it == sites_.end() ? 0 : it->second.visits;
}

bool default_is_a_reg(Region r, uint32_t address) {
  if (r == Region::Sfr) return true;
  return r == Region::Iram && address < 0x20;
}

namespace {

bool key_is_reg(LocKey k, const IsAReg& is_a_reg) {
  if (k == kDptrKey) return true;
  if (k >= 0x100) return is_a_reg(Region::Sfr, static_cast<uint32_t>(k - 0x100));
  return is_a_reg(Region::Iram, static_cast<uint32_t>(k));
}

std::optional<uint16_t> address_of(const PropTuple& t) { return t.value ? t.value : t.tracked; }

}  // namespace

PropMap prop_const_mem(const CodeGraph& g, const ReachingDefs& rd, const IsAReg& is_a_reg) {
  PropMap m;
  std::deque<uint16_t> work;
  std::set<uint16_t> queued;
  auto push = [&](uint16_t s) {
    if (queued.insert(s).second) work.push_back(s);
  };
  for (const auto& [a, in] : g.insns) {
    const DefUse& d = rd.model(a);
    if (d.category == InsnCategory::IndStore) m.add_store(a);
    if (d.category == InsnCategory::Seed && d.dst && key_is_reg(*d.dst, is_a_reg)) {
      m.set(a, PropRole::Dst, PropTuple{d.constant, std::nullopt});
      push(a);
    }
  }
  while (!work.empty()) {
    const uint16_t i = work.front();
    work.pop_front();
    queued.erase(i);
    const DefUse& di = rd.model(i);
    if (!di.dst) continue;
    const PropTuple t = m.get(i, PropRole::Dst);
    for (uint16_t u : rd.uses_of(i, *di.dst)) {
      if (m.visits(u) >= 2) continue;
      const DefUse& du = rd.model(u);
      const bool srcdef = m.get(u, PropRole::Src).defined();
      const bool dstdef = m.get(u, PropRole::Dst).defined();
      const bool store = du.category == InsnCategory::IndStore || du.category == InsnCategory::Copy;
      if (store ? (srcdef && dstdef) : (srcdef || dstdef)) continue;
      bool updated = false;
      bool forward = false;
      switch (du.category) {
        case InsnCategory::Copy:
          if (du.src == di.dst) {
            m.set(u, PropRole::Src, t);
            m.set(u, PropRole::Dst, t);
            updated = true;
            forward = key_is_reg(*du.dst, is_a_reg);
          }
          break;
        case InsnCategory::IndLoad:
          if (du.addr == di.dst) {
            if (auto a = address_of(t)) {
              const PropTuple r{std::nullopt, a};
              m.set(u, PropRole::Src, r);
              m.set(u, PropRole::Dst, r);
              updated = forward = true;
            }
          }
          break;
        case InsnCategory::IndStore:
          if (du.addr == di.dst) {
            if (auto a = address_of(t)) {
              m.set(u, PropRole::Dst, PropTuple{std::nullopt, a});
              updated = true;
            }
          } else if (du.value == di.dst) {
            m.set(u, PropRole::Src, t);
            updated = true;
          }
          break;
        case InsnCategory::Arith:
          // Pointer increments keep referring to the same object.
          if (du.dst == kDptrKey && di.dst == kDptrKey) {
            if (auto a = address_of(t)) {
              m.set(u, PropRole::Dst, PropTuple{std::nullopt, a});
              updated = forward = true;
            }
          }
          break;
        default:
          break;
      }
      if (!updated) continue;
      m.visit(u);
      if (forward) push(u);
    }
  }
  return m;
}

PropMap prop_const_mem(std::span<const uint8_t> image, const IsAReg& is_a_reg) {
  const CodeGraph g = CodeGraph::build(image);
  const ReachingDefs rd(g);
  return prop_const_mem(g, rd, is_a_reg);
}

std::vector<Instruction> xref_candidates(std::span<const uint8_t> image, const CodeGraph& g) {
  std::map<uint16_t, Instruction> all;
  for (auto& in : isa::disassemble_sweep(image).instructions) all.emplace(in.address, in);
  for (const auto& [a, in] : g.insns) all.insert_or_assign(a, in);
  std::vector<Instruction> out;
  out.reserve(all.size());
  for (auto& [a, in] : all) out.push_back(std::move(in));
  return out;
}

std::vector<uint16_t> find_xrefs(std::span<const uint8_t> image, const std::vector<Instruction>& candidates,
                                 uint16_t target) {
  constexpr int kWindow = 16;
  std::set<uint16_t> out;
  for (const auto& c : candidates) {
    if (c.mnemonic != Mnemonic::MOV || c.operands.size() != 2 || c.operands[0].kind != OperandKind::DPTR ||
        static_cast<uint16_t>(c.operands[1].value) != target)
      continue;
    uint32_t pc = c.next_address();
    for (int n = 0; n < kWindow && pc < image.size(); ++n) {
      auto in = isa::try_decode(image, pc);
      if (!in) break;
      if (in->mnemonic == Mnemonic::MOVC && in->operands[1].kind == OperandKind::CodeIndexedDPTR) {
        out.insert(c.address);
        break;
      }
      if (in->is_control_flow()) break;
      const auto defs = describe(*in).defs;
      if (std::find(defs.begin(), defs.end(), kDptrKey) != defs.end()) break;
      pc = in->next_address();
    }
  }
  return {out.begin(), out.end()};
}

std::vector<uint16_t> find_xrefs(std::span<const uint8_t> image, uint16_t target) {
  return find_xrefs(image, xref_candidates(image, CodeGraph::build(image)), target);
}

Ep0Inference find_devspec_to_ep0(const std::vector<DescriptorHit>& hits, const PropMap& m,
                                  const std::string& claimed_class) {
  Ep0Inference r;
  for (const auto& h : hits) {
    switch (h.role) {
      case SignatureRole::Device: r.cand_dd.insert(h.address); break;
      case SignatureRole::Config: r.cand_cd.insert(h.address); break;
      case SignatureRole::Function:
        if (h.usb_class == claimed_class) r.cand_func.insert(h.address);
        break;
    }
  }
  if (r.cand_dd.empty()) throw NoDescriptors("no device descriptor found");
  if (r.cand_cd.empty()) throw NoDescriptors("no configuration descriptor found");
  if (r.cand_func.empty()) r.diagnostics.push_back("no " + claimed_class + " descriptor pattern found");

  for (auto s : m.stores()) {
    const auto src = m.get(s, PropRole::Src).tracked;
    const auto dst = m.get(s, PropRole::Dst).tracked;
    if (!src || !dst) continue;
    if (r.cand_cd.count(*src)) r.ep0_cd.insert(*dst);
    if (r.cand_dd.count(*src)) r.ep0_dd.insert(*dst);
  }
  std::set_intersection(r.ep0_cd.begin(), r.ep0_cd.end(), r.ep0_dd.begin(), r.ep0_dd.end(),
                        std::inserter(r.ep0, r.ep0.end()));
  if (r.ep0.empty())
    r.diagnostics.push_back("device and configuration descriptors are not copied to a common buffer");
  for (auto s : m.stores()) {
    const auto src = m.get(s, PropRole::Src).tracked;
    const auto dst = m.get(s, PropRole::Dst).tracked;
    if (src && dst && r.cand_func.count(*src) && r.ep0.count(*dst)) r.targets.push_back(s);
  }
  return r;
}

StaticReport analyze(std::span<const uint8_t> image, const std::string& claimed_class,
                     const std::vector<SignaturePattern>& sigs, const IsAReg& is_a_reg) {
  StaticReport rep;
  rep.hits = scan_signatures(image, sigs);
  rep.graph = CodeGraph::build(image);
  const auto cands = xref_candidates(image, rep.graph);
  for (auto& h : rep.hits) h.xrefs = find_xrefs(image, cands, h.address);
  const ReachingDefs rd(rep.graph);
  rep.prop = prop_const_mem(rep.graph, rd, is_a_reg);
  try {
    rep.ep0 = find_devspec_to_ep0(rep.hits, rep.prop, claimed_class);
    rep.diagnostics = rep.ep0->diagnostics;
  } catch (const NoDescriptors& e) {
    rep.diagnostics.push_back(e.what());
  }
  return rep;
}

}  // namespace fwscope::usbstatic
