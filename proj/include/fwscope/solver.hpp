// Bit-vector expressions, path conditions and an enumerative solver for the
// narrow (<= 16 bit) variables that show up in 8051 firmware analysis.
#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace fwscope::solver {

enum class Kind : uint8_t {
  Const, Var,
  Add, Sub, Mul, UDiv, URem,
  And, Or, Xor, Not,
  Shl, LShr, RotL, RotR,
  Eq, Ne, Ult, Ule, Slt, Sle,
  ZExt, Extract, Concat, Ite,
};

struct Expr;
using ExprRef = std::shared_ptr<const Expr>;

struct Expr {
  Kind kind;
  uint8_t width;
  uint8_t hi{0}, lo{0};  // Extract
  uint32_t value{0};     // Const value or Var id
  ExprRef a, b, c;
  bool has_var{false};
  // Bits proven zero / one for every assignment.
  uint32_t known_zero{0};
  uint32_t known_one{0};
  uint32_t depth{1};

  bool is_const() const { return kind == Kind::Const; }
  bool is_var() const { return kind == Kind::Var; }
};

inline uint32_t mask_of(unsigned w) { return w >= 32 ? 0xFFFFFFFFu : ((1u << w) - 1u); }

// Variables are interned process-wide by name.
struct VarInfo {
  std::string name;
  uint8_t width;
};
uint32_t intern_var(const std::string& name, uint8_t width);
const VarInfo& var_info(uint32_t id);
std::optional<uint32_t> find_var(const std::string& name);

// Builders. All apply constant folding and local simplification, so a tree
// without variables always comes back as a single Const.
ExprRef mk_const(uint32_t value, uint8_t width);
ExprRef mk_true();
ExprRef mk_false();
ExprRef mk_var(const std::string& name, uint8_t width);
ExprRef mk_var_id(uint32_t id);
ExprRef mk_unary(Kind k, ExprRef a);
ExprRef mk_binary(Kind k, ExprRef a, ExprRef b);
ExprRef mk_not(ExprRef a);
ExprRef mk_zext(ExprRef a, uint8_t width);
ExprRef mk_extract(ExprRef a, uint8_t hi, uint8_t lo);
ExprRef mk_concat(ExprRef hi, ExprRef lo);
ExprRef mk_ite(ExprRef c, ExprRef a, ExprRef b);
ExprRef mk_parity(ExprRef a);
ExprRef mk_bool_not(ExprRef a);

inline ExprRef mk_eq(ExprRef a, ExprRef b) { return mk_binary(Kind::Eq, std::move(a), std::move(b)); }
inline ExprRef mk_ne(ExprRef a, ExprRef b) { return mk_binary(Kind::Ne, std::move(a), std::move(b)); }
inline ExprRef mk_ult(ExprRef a, ExprRef b) { return mk_binary(Kind::Ult, std::move(a), std::move(b)); }
inline ExprRef mk_ule(ExprRef a, ExprRef b) { return mk_binary(Kind::Ule, std::move(a), std::move(b)); }
inline ExprRef mk_and(ExprRef a, ExprRef b) { return mk_binary(Kind::And, std::move(a), std::move(b)); }
inline ExprRef mk_or(ExprRef a, ExprRef b) { return mk_binary(Kind::Or, std::move(a), std::move(b)); }
inline ExprRef mk_add(ExprRef a, ExprRef b) { return mk_binary(Kind::Add, std::move(a), std::move(b)); }

// Direct evaluation of one operator on concrete operands.
uint32_t apply(Kind k, uint8_t width, uint32_t a, uint32_t b, uint32_t c, uint8_t a_width,
               uint8_t b_width, uint8_t hi, uint8_t lo);

using Assignment = std::unordered_map<uint32_t, uint32_t>;  // var id -> value
uint32_t evaluate(const ExprRef& e, const Assignment& env);  // unassigned vars read 0
std::vector<uint32_t> collect_vars(const ExprRef& e);         // sorted, unique
std::string to_string(const ExprRef& e);
bool is_symbolic(const ExprRef& e);

struct Constraint {
  ExprRef expr;  // width 1
  uint16_t address{0};
  bool taken{false};
  std::string origin;  // "branch", "precondition", "address", ...
  std::vector<uint32_t> vars;
};

class PathCondition {
 public:
  // Appends a boolean constraint; constant-true constraints are dropped.
  void add(ExprRef expr, uint16_t address = 0, bool taken = false, std::string origin = "branch");
  const std::vector<Constraint>& constraints() const { return items_; }
  size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }
  // True when a constant-false constraint was added.
  bool trivially_false() const { return trivially_false_; }

 private:
  std::vector<Constraint> items_;
  bool trivially_false_{false};
};

enum class SatResult { Sat, Unsat, Unknown };

class SolverTimeout : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class Unsat : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SolverConfig {
  double timeout_seconds{5.0};
  uint64_t max_evaluations{20'000'000};
};

struct SolverStats {
  uint64_t queries{0};
  uint64_t cache_hits{0};
  uint64_t timeouts{0};
  uint64_t evaluations{0};
};

struct Model {
  Assignment values;
  uint32_t eval(const ExprRef& e) const { return evaluate(e, values); }
};

// Stateless from the caller's point of view; holds only a result cache.
class Solver {
 public:
  explicit Solver(SolverConfig cfg = {});

  // Satisfiability of the conjunction. Unknown means the budget ran out.
  SatResult check(const PathCondition& pc);
  // Satisfiability of pc AND extra. Only constraints sharing variables with
  // `extra` (transitively) are re-solved; pc itself is assumed satisfiable.
  SatResult check_with(const PathCondition& pc, const ExprRef& extra);
  // Interface-level helper: Unknown is treated as satisfiable.
  bool is_satisfiable(const PathCondition& pc);

  // A model of pc; nullopt if unsat. Throws SolverTimeout on budget exhaustion.
  std::optional<Model> model(const PathCondition& pc);
  // A witness value of expr under some model of pc. Throws Unsat.
  uint32_t eval_model(const PathCondition& pc, const ExprRef& expr);
  // The unique value of expr under pc, or nullopt (also on timeout).
  std::optional<uint32_t> is_constant(const PathCondition& pc, const ExprRef& expr);
  // Up to `limit` distinct feasible values of expr; `complete` is set when
  // the enumeration is exhaustive.
  std::vector<uint32_t> enumerate_values(const PathCondition& pc, const ExprRef& expr, size_t limit,
                                         bool* complete = nullptr);

  const SolverStats& stats() const { return stats_; }
  const SolverConfig& config() const { return cfg_; }

 private:
  struct Outcome {
    SatResult result;
    Assignment model;
  };
  Outcome solve(const std::vector<const Constraint*>& cs, const std::vector<ExprRef>& extra);

  struct CacheEntry {
    std::vector<const Expr*> keys;
    std::vector<ExprRef> hold;  // keeps keyed nodes alive
    SatResult result{SatResult::Unknown};
    Assignment model;
  };

  SolverConfig cfg_;
  SolverStats stats_;
  std::mutex mu_;
  std::unordered_map<uint64_t, CacheEntry> cache_;
};

// SMT-LIB2 (QF_BV) text for the conjunction, for offline debugging.
std::string to_smtlib(const PathCondition& pc, const std::vector<ExprRef>& extra = {});

}  // namespace fwscope::solver
