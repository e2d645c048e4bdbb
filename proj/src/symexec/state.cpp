#include <cstdio>
#include <stdexcept>

#include "fwscope/symexec.hpp"

namespace fwscope::symexec {

using solver::mk_const;

namespace {

uint32_t region_size(Region r) {
  switch (r) {
    case Region::Code: return 0x10000;
    case Region::Iram: return 0x100;
    case Region::Sfr: return 0x100;
    case Region::Xram: return 0x10000;
  }
  return 0;
}

}  // namespace

std::string location_name(Region r, uint32_t address) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s[0x%02x]", std::string(ir::region_name(r)).c_str(), address);
  return buf;
}

std::string location_name(const Location& l) { return location_name(l.region, l.address); }

std::optional<Location> parse_location(const std::string& name) {
  const auto open = name.find('[');
  if (open == std::string::npos || name.back() != ']') return std::nullopt;
  auto region = ir::region_from_name(name.substr(0, open));
  if (!region) return std::nullopt;
  try {
    size_t used = 0;
    const std::string num = name.substr(open + 1, name.size() - open - 2);
    const unsigned long v = std::stoul(num, &used, 0);
    if (used != num.size() || v >= region_size(*region)) return std::nullopt;
    return Location{*region, static_cast<uint32_t>(v)};
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

ExprRef location_var(Region r, uint32_t address) { return solver::mk_var(location_name(r, address), 8); }

SymbolicPolicy SymbolicPolicy::full() {
  SymbolicPolicy p;
  p.add(Region::Iram, 0, 0x100, "iram");
  p.add(Region::Xram, 0, 0x10000, "xram");
  return p;
}

void SymbolicPolicy::add(Region r, uint32_t address, uint32_t length, std::string name) {
  if (length == 0) throw std::invalid_argument("empty symbolic range");
  if (r == Region::Code) throw std::invalid_argument("CODE cannot be symbolic");
  if (uint64_t{address} + length > region_size(r))
    throw std::invalid_argument("symbolic range leaves " + std::string(ir::region_name(r)));
  if (r == Region::Sfr && address < 0x80) throw std::invalid_argument("SFR addresses start at 0x80");
  for (const auto& x : ranges_) {
    if (x.region != r) continue;
    if (address < x.address + x.length && x.address < address + length)
      throw std::invalid_argument("overlapping symbolic ranges at " + location_name(r, address));
  }
  ranges_.push_back({r, address, length, std::move(name)});
}

void SymbolicPolicy::pin(const Location& l) {
  if (l.region != Region::Iram && l.region != Region::Xram) throw std::invalid_argument("only IRAM and XRAM bytes can be pinned");
  if (l.address >= region_size(l.region)) throw std::invalid_argument("pinned byte leaves the region");
  pinned_.insert(l);
}

bool SymbolicPolicy::contains(Region r, uint32_t address) const {
  if (!pinned_.empty() && pinned(r, address)) return true;
  for (const auto& x : ranges_)
    if (x.region == r && address >= x.address && address < x.address + x.length) return true;
  return false;
}

uint64_t SymbolicPolicy::byte_count() const {
  uint64_t n = 0;
  for (const auto& x : ranges_) n += x.length;
  for (const auto& l : pinned_) {
    bool in_range = false;
    for (const auto& x : ranges_)
      in_range = in_range || (x.region == l.region && l.address >= x.address && l.address < x.address + x.length);
    if (!in_range) ++n;
  }
  return n;
}

void ExplorationConfig::validate() const {
  if (max_states == 0 || max_blocks == 0 || loop_threshold == 0 || max_fanout == 0)
    throw std::invalid_argument("exploration thresholds must be positive");
  if (cooldown_min == 0 || cooldown_max < cooldown_min)
    throw std::invalid_argument("cooldown range must satisfy 0 < min <= max");
  if (random_weight < 0 || coverage_weight < 0 || random_weight + coverage_weight <= 0)
    throw std::invalid_argument("search weights must be non-negative and not both zero");
  if (time_limit_seconds <= 0) throw std::invalid_argument("time limit must be positive");
}

std::string_view path_end_name(PathEnd e) {
  switch (e) {
    case PathEnd::Running: return "running";
    case PathEnd::TargetReached: return "target-reached";
    case PathEnd::LoopPruned: return "loop-pruned";
    case PathEnd::Killed: return "killed";
    case PathEnd::StackOverflow: return "stack-overflow";
    case PathEnd::DecodeFailure: return "decode-failure";
    case PathEnd::SymbolicIndexOutOfRegion: return "symbolic-index-out-of-region";
    case PathEnd::NoFeasibleSuccessor: return "no-feasible-successor";
    case PathEnd::Aborted: return "aborted";
  }
  return "?";
}

std::string_view termination_name(Termination t) {
  switch (t) {
    case Termination::Exhausted: return "exhausted";
    case Termination::TargetsReached: return "targets-reached";
    case Termination::StateLimit: return "state-limit";
    case Termination::BlockLimit: return "block-limit";
    case Termination::TimeLimit: return "time-limit";
    case Termination::StoppedByListener: return "stopped-by-listener";
  }
  return "?";
}

ExecState ExecState::reset(std::shared_ptr<const SymbolicPolicy> policy) {
  ExecState s;
  s.policy_ = policy ? std::move(policy) : std::make_shared<const SymbolicPolicy>();
  for (uint32_t a = 0x80; a < 0x100; ++a) {
    if (s.policy_->contains(Region::Sfr, a)) continue;
    s.sfr_[a - 0x80] = mk_const(a == machine::sfr::SP ? machine::kResetSP : 0, 8);
  }
  return s;
}

ExprRef ExecState::read(Region r, uint32_t address) const {
  const ExprRef* slot = nullptr;
  switch (r) {
    case Region::Code:
      throw std::logic_error("CODE reads go through the image");
    case Region::Iram:
      slot = &iram_[address & 0xFF];
      break;
    case Region::Sfr:
      slot = &sfr_[address & 0x7F];
      break;
    case Region::Xram: {
      auto it = xram_.find(static_cast<uint16_t>(address));
      if (it != xram_.end()) slot = &it->second;
      break;
    }
  }
  if (slot && *slot) return *slot;
  if (policy_ && policy_->contains(r, address)) return location_var(r, address);
  return mk_const(0, 8);
}

void ExecState::write(Region r, uint32_t address, ExprRef value) {
  if (policy_ && policy_->pinned(r, address)) return;
  switch (r) {
    case Region::Code:
      throw std::logic_error("store to CODE");
    case Region::Iram:
      iram_[address & 0xFF] = std::move(value);
      iram_written_.set(address & 0xFF);
      break;
    case Region::Sfr:
      sfr_[address & 0x7F] = std::move(value);
      sfr_written_.set(address & 0x7F);
      break;
    case Region::Xram:
      xram_[static_cast<uint16_t>(address)] = std::move(value);
      xram_written_.insert(static_cast<uint16_t>(address));
      break;
  }
}

bool ExecState::written(Region r, uint32_t address) const {
  switch (r) {
    case Region::Code: return false;
    case Region::Iram: return iram_written_.test(address & 0xFF);
    case Region::Sfr: return sfr_written_.test(address & 0x7F);
    case Region::Xram: return xram_written_.count(static_cast<uint16_t>(address)) != 0;
  }
  return false;
}

std::optional<machine::ConcreteState> ExecState::to_concrete() const {
  machine::ConcreteState c = machine::ConcreteState::reset();
  c.pc = pc;
  c.steps = steps;
  for (uint32_t a = 0; a < 0x100; ++a) {
    auto v = read(Region::Iram, a);
    if (!v->is_const()) return std::nullopt;
    c.iram[a] = static_cast<uint8_t>(v->value);
  }
  for (uint32_t a = 0x80; a < 0x100; ++a) {
    auto v = read(Region::Sfr, a);
    if (!v->is_const()) return std::nullopt;
    c.sfr_set(static_cast<uint8_t>(a), static_cast<uint8_t>(v->value));
  }
  for (const auto& [a, v] : xram_) {
    if (!v->is_const()) return std::nullopt;
    c.xram[a] = static_cast<uint8_t>(v->value);
  }
  return c;
}

const TargetHit* ExplorationResult::hit(uint16_t target) const {
  for (const auto& h : hits)
    if (h.target == target) return &h;
  return nullptr;
}

}  // namespace fwscope::symexec
