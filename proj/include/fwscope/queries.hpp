// Semantic queries over the executor: symbolic-location discovery, target
// reachability with USB constraints, and endpoint data-flow consistency.
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "fwscope/lifter.hpp"
#include "fwscope/symexec.hpp"
#include "fwscope/usbstatic.hpp"

namespace fwscope::queries {

using symexec::Location;

// ---- USB constants -------------------------------------------------------

struct UsbConstant {
  std::string_view field;  // setup packet field the value is meaningful in
  uint8_t value;
  std::string_view name;
};

const std::vector<UsbConstant>& usb_constants();
// "GET_DESCRIPTOR" for (bRequest, 6); nullopt when the table has no entry.
std::optional<std::string_view> usb_constant_name(std::string_view field, uint8_t value);

// ---- preconditions -------------------------------------------------------

enum class Relation { Eq, Ne, Lt, Gt, BitSet, BitClear };
std::string_view relation_name(Relation r);  // "==", "!=", "<", ">", "bit-set", "bit-clear"
std::optional<Relation> relation_from_name(std::string_view s);

struct Precondition {
  Location location;
  Relation relation{Relation::Eq};
  uint8_t value{0};  // bit index for bit-set / bit-clear

  solver::ExprRef expr() const;
  // "XRAM:0x7fe9:==:6"
  std::string str() const;
  static Precondition parse(std::string_view text);  // throws std::invalid_argument
  friend bool operator==(const Precondition&, const Precondition&) = default;
};

class UnsatisfiablePreconditions : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Conjoins the preconditions into the state's path condition. Throws
// std::invalid_argument when a location is not symbolic under the state's
// policy and UnsatisfiablePreconditions when the conjunction has no model.
void apply_preconditions(symexec::ExecState& state, const std::vector<Precondition>& pre,
                         solver::Solver& solver);
std::vector<solver::ExprRef> precondition_exprs(const std::vector<Precondition>& pre);

// ---- symbolic-location discovery -----------------------------------------

struct DiscoveryStep {
  machine::InterruptSource isr;
  unsigned iteration;
  std::optional<Location> added;
  uint16_t load_site{0};
  double seconds{0};
  uint64_t states{0};
};

struct SymbolicLocationSet {
  std::set<Location> locations;
  std::vector<DiscoveryStep> log;

  symexec::SymbolicPolicy policy() const;
};

struct DiscoveryConfig {
  unsigned tau{16};
  symexec::ExplorationConfig exploration;
};

// Per ISR, repeatedly explores with only that ISR schedulable; the first
// load inside the ISR from a byte neither written by the ISR on the current
// path nor already symbolic is added and the run restarts.
SymbolicLocationSet find_symbolic_locations(lifter::Program& program, const DiscoveryConfig& cfg,
                                            const std::set<Location>& initial = {});

// ---- Query 1 -------------------------------------------------------------

enum class PolicySource { Full, Partial };
std::string_view policy_source_name(PolicySource p);

struct UsbConstraint {
  Location location;
  std::string field;  // setup field name, or the location name when unknown
  uint8_t value;
  std::string meaning;  // from the constants table; empty when unknown
};

struct PathConstraint {
  std::string expr;
  uint16_t address;
  std::string origin;
};

struct TargetResult {
  uint16_t target{0};
  bool reached{false};
  double seconds{0};
  uint64_t states{0};
  size_t coverage{0};
  std::vector<PathConstraint> path;
  std::map<std::string, uint32_t> model;
  std::vector<UsbConstraint> usb;
};

struct Query1Report {
  PolicySource source{PolicySource::Full};
  std::vector<TargetResult> targets;
  uint64_t states_created{0};
  uint64_t blocks_executed{0};
  size_t coverage{0};
  symexec::Termination termination{symexec::Termination::Exhausted};
  std::vector<symexec::Diagnostic> diagnostics;

  bool any_reached() const;
  const TargetResult* target(uint16_t t) const;
};

class NoTargetsReached : public std::runtime_error {
 public:
  explicit NoTargetsReached(Query1Report r)
      : std::runtime_error("no target reached within budget"), report_(std::move(r)) {}
  const Query1Report& report() const { return report_; }

 private:
  Query1Report report_;
};

struct Query1Config {
  PolicySource source{PolicySource::Full};
  std::set<Location> symbolic;  // the partial policy
  std::vector<Precondition> preconditions;
  std::map<std::string, Location> setup_fields;  // names for USB constraints
  symexec::ExplorationConfig exploration;
};

// Throws NoTargetsReached (carrying the report) when no target was hit.
Query1Report query1(lifter::Program& program, const std::set<uint16_t>& targets, const Query1Config& cfg);

// Setup-field bytes whose value the path pins to a single constant.
std::vector<UsbConstraint> usb_constraints(const solver::PathCondition& path,
                                           const std::map<std::string, Location>& setup_fields,
                                           solver::Solver& solver);

// ---- Query 2 -------------------------------------------------------------

// Direct IRAM bytes (0x20-0x7f) and constant XRAM bytes updated by
// add/sub-family instructions whose result never forms an address or index.
std::set<Location> find_counters(std::span<const uint8_t> image);

struct Query2Flag {
  uint16_t site{0};
  uint16_t address{0};
  std::set<uint16_t> blocks;
  std::set<uint8_t> values;
  std::string label;
};

struct RankedAddress {
  uint16_t address{0};
  size_t score{0};  // distinct concrete values written there by flagged sites
  unsigned rank{0};  // 1 when score >= 2, else 2
  std::vector<uint16_t> sites;
};

struct Query2Report {
  std::string algorithm;  // "unexpected" or "inconsistent"
  std::vector<Query2Flag> flags;
  std::vector<RankedAddress> ranking;
  std::set<Location> counters;
  std::set<uint16_t> targets;  // store sites watched (unexpected only)
  uint64_t states_created{0};
  symexec::Termination termination{symexec::Termination::Exhausted};

  size_t rank1_count() const;
};

struct Query2Config {
  unsigned max_ep{4};
  std::set<Location> symbolic;
  std::set<Location> counters;  // pinned symbolic
  bool full_policy{false};
  symexec::ExplorationConfig exploration;
  // Used for labeling known benign constant classes.
  std::vector<usbstatic::DescriptorHit> hits;
};

std::set<uint16_t> other_endpoints(const std::set<uint16_t>& ep0, unsigned max_ep);

// Stores whose tracked destination is another endpoint buffer and whose
// value is constant under the path.
Query2Report query2_unexpected(lifter::Program& program, const std::set<uint16_t>& ep0,
                               const usbstatic::PropMap& prop, const Query2Config& cfg);

// Stores writing a constant to an address another block writes
// symbolically.
Query2Report query2_inconsistent(lifter::Program& program, const Query2Config& cfg);

}  // namespace fwscope::queries
