// Symbolic executor over lifted blocks: forking on branches, byte-granular
// symbolic memory, interrupt scheduling with cooldowns, loop pruning and
// coverage-guided search.
#pragma once

#include <array>
#include <bitset>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "fwscope/ir.hpp"
#include "fwscope/lifter.hpp"
#include "fwscope/machine.hpp"
#include "fwscope/solver.hpp"

namespace fwscope::symexec {

using ir::Region;
using solver::ExprRef;

struct Location {
  Region region;
  uint32_t address;
  auto operator<=>(const Location&) const = default;
};

// "XRAM[0x7fe9]", "IRAM[0x30]", ...
std::string location_name(Region r, uint32_t address);
std::string location_name(const Location& l);
std::optional<Location> parse_location(const std::string& name);
ExprRef location_var(Region r, uint32_t address);

struct SymbolicRange {
  Region region;
  uint32_t address;
  uint32_t length{1};
  std::string name;
};

class SymbolicPolicy {
 public:
  static SymbolicPolicy none() { return {}; }
  // Every IRAM and XRAM byte.
  static SymbolicPolicy full();

  // Throws std::invalid_argument when the range overlaps an existing one or
  // leaves the region.
  void add(Region r, uint32_t address, uint32_t length = 1, std::string name = {});
  void add(const Location& l) { add(l.region, l.address); }
  bool contains(Region r, uint32_t address) const;
  bool contains(const Location& l) const { return contains(l.region, l.address); }
  const std::vector<SymbolicRange>& ranges() const { return ranges_; }
  uint64_t byte_count() const;

  // Pinned bytes ignore stores and always read as their variable; used for
  // counters whose concrete evolution would take too long to unroll.
  void pin(const Location& l);
  bool pinned(Region r, uint32_t address) const { return pinned_.count({r, address}) != 0; }
  const std::set<Location>& pinned() const { return pinned_; }

 private:
  std::vector<SymbolicRange> ranges_;
  std::set<Location> pinned_;
};

struct ExplorationConfig {
  uint64_t seed{1};
  uint64_t max_states{20000};       // total states created
  uint64_t max_blocks{2'000'000};   // total blocks executed across all paths
  uint32_t loop_threshold{256};
  uint32_t cooldown_min{20};
  uint32_t cooldown_max{100};
  double random_weight{0.25};
  double coverage_weight{0.75};
  double time_limit_seconds{300};
  uint32_t max_fanout{16};
  bool interrupts{true};
  std::optional<machine::InterruptSource> only_isr;
  std::vector<ExprRef> preconditions;
  std::set<uint16_t> targets;
  bool stop_when_targets_hit{true};
  solver::SolverConfig solver;

  // Throws std::invalid_argument on non-positive thresholds.
  void validate() const;
};

enum class PathEnd {
  Running,
  TargetReached,
  LoopPruned,
  Killed,          // by a listener
  StackOverflow,
  DecodeFailure,
  SymbolicIndexOutOfRegion,
  NoFeasibleSuccessor,
  Aborted,         // still pending when the run stopped
};
std::string_view path_end_name(PathEnd e);

class ExecState {
 public:
  // Power-on state: PC 0, SFRs at reset values, memories unwritten.
  static ExecState reset(std::shared_ptr<const SymbolicPolicy> policy);

  uint64_t id{0};
  uint64_t parent{0};
  uint16_t pc{0};
  solver::PathCondition path;
  std::vector<uint16_t> history;  // block entries, one per executed block
  std::unordered_map<uint16_t, uint32_t> visits;
  std::unordered_map<uint16_t, uint32_t> loop_visits;  // since last new coverage
  std::array<uint32_t, machine::kInterruptSources.size()> cooldown{};
  std::optional<machine::InterruptSource> active_isr;
  std::set<Location> isr_writes;  // non-stack stores made while an ISR ran
  uint64_t last_new_coverage{0};
  uint64_t steps{0};
  PathEnd end{PathEnd::Running};
  uint16_t end_address{0};
  std::string end_detail;

  // Reads a byte; unwritten bytes are fresh variables when designated
  // symbolic and zero otherwise (SFRs default to their reset value).
  ExprRef read(Region r, uint32_t address) const;
  void write(Region r, uint32_t address, ExprRef value);
  bool written(Region r, uint32_t address) const;
  const SymbolicPolicy& policy() const { return *policy_; }

  // The machine state when every byte is concrete.
  std::optional<machine::ConcreteState> to_concrete() const;

 private:
  std::shared_ptr<const SymbolicPolicy> policy_;
  std::array<ExprRef, 256> iram_{};
  std::array<ExprRef, 128> sfr_{};
  std::map<uint16_t, ExprRef> xram_;
  std::bitset<256> iram_written_;
  std::bitset<128> sfr_written_;
  std::set<uint16_t> xram_written_;
};

enum class Action { None, KillPath, StopRun };

struct Access {
  uint16_t site;   // instruction address
  uint16_t block;  // entry of the executing block
  Region region;
  ir::AccessKind kind;
  ExprRef address;
  ExprRef value;
  std::optional<uint32_t> concrete_address;
};

// Observers may end paths or the run but never change memory.
class Listener {
 public:
  virtual ~Listener() = default;
  virtual Action on_load(const Access&, const ExecState&) { return Action::None; }
  virtual Action on_store(const Access&, const ExecState&) { return Action::None; }
  virtual Action on_block(const ExecState&) { return Action::None; }
  virtual void on_termination(const std::vector<ExecState>&) {}
};

struct TargetHit {
  uint16_t target;
  uint64_t state_id;
  uint64_t states_created;  // at the moment of the hit
  uint64_t blocks_executed;
  size_t coverage;
  solver::PathCondition path;
  solver::Assignment model;
  bool model_complete{true};
  size_t path_blocks;
  double seconds{0};  // since the run started
};

enum class Termination { Exhausted, TargetsReached, StateLimit, BlockLimit, TimeLimit, StoppedByListener };
std::string_view termination_name(Termination t);

struct Diagnostic {
  std::string kind;
  uint16_t address;
  std::string detail;
};

struct ExplorationResult {
  std::vector<ExecState> ended;
  std::vector<TargetHit> hits;  // first hit per target, in hit order
  std::set<uint16_t> coverage;  // executed instruction addresses
  uint64_t states_created{0};
  uint64_t blocks_executed{0};
  uint64_t forks{0};
  uint64_t isr_entries{0};
  uint64_t pruned{0};
  Termination termination{Termination::Exhausted};
  std::vector<Diagnostic> diagnostics;
  solver::SolverStats solver_stats;
  double wall_seconds{0};

  const TargetHit* hit(uint16_t target) const;
  bool reached(uint16_t target) const { return hit(target) != nullptr; }
};

ExplorationResult execute(lifter::Program& program, const SymbolicPolicy& policy,
                          const ExplorationConfig& config, const std::vector<Listener*>& listeners = {});

// Between blocks: the continuation first, then one fork per ISR that may
// fire now. Cooldowns of fired sources are redrawn in every returned state.
std::vector<ExecState> schedule_interrupt(ExecState state, const machine::IsrMap& isrs,
                                          const ExplorationConfig& config, solver::Solver& solver,
                                          std::mt19937_64& rng);

// Index of the next state to run.
size_t select_next(const std::vector<ExecState>& frontier, const ExplorationConfig& config,
                   std::mt19937_64& rng);

// Instructions reachable through static control flow from reset and the
// discovered interrupt vectors; used as the coverage denominator.
std::set<uint16_t> static_instructions(lifter::Program& program);

}  // namespace fwscope::symexec
