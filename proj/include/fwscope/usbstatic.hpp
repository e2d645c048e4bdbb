// Static USB analysis over the raw image: descriptor signatures, XREFs,
// constant-address propagation and EP0 / copy-target inference.
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "fwscope/ir.hpp"
#include "fwscope/isa.hpp"

namespace fwscope::usbstatic {

using ir::Region;

// ---- signatures ----------------------------------------------------------

enum class SignatureRole { Device, Config, Function };
std::string_view role_name(SignatureRole r);
std::optional<SignatureRole> role_from_name(std::string_view s);

struct SignaturePattern {
  std::string name;
  SignatureRole role{SignatureRole::Function};
  std::string usb_class;  // class a function-specific pattern evidences; "*" otherwise
  std::vector<int> bytes;  // -1 is a wildcard

  // "12 01 00 ?? 00"; throws std::invalid_argument.
  static SignaturePattern parse(std::string name, SignatureRole role, std::string usb_class,
                                std::string_view hex);
  std::string hex() const;
  bool matches_at(std::span<const uint8_t> image, size_t pos) const;
};

// DEVICE_DESC, CONFIG_DESC, HID_REPORT and MASS_STORAGE_CBW.
const std::vector<SignaturePattern>& default_signatures();
// One pattern per line: NAME ROLE CLASS HEX...; '#' starts a comment.
std::vector<SignaturePattern> parse_signatures(std::string_view text);
std::vector<SignaturePattern> load_signatures(const std::string& path);

struct DescriptorHit {
  std::string pattern;
  SignatureRole role{SignatureRole::Function};
  std::string usb_class;
  uint16_t address{0};
  std::vector<uint8_t> bytes;
  std::vector<uint16_t> xrefs;
};

// Non-overlapping matches per pattern, ordered by address then pattern name.
std::vector<DescriptorHit> scan_signatures(std::span<const uint8_t> image,
                                           const std::vector<SignaturePattern>& sigs = default_signatures());

// ---- instruction-level control flow --------------------------------------

// Intra-procedural instruction graph: calls fall through to the return
// address, returns and computed jumps have no successors. Entries are reset,
// the discovered ISR entries and every call target.
struct CodeGraph {
  std::map<uint16_t, isa::Instruction> insns;
  std::map<uint16_t, std::vector<uint16_t>> succ;
  std::set<uint16_t> entries;

  static CodeGraph build(std::span<const uint8_t> image, const std::set<uint16_t>& extra_entries = {});
  const isa::Instruction* at(uint16_t addr) const;
};

// Locations tracked by the def-use analysis: IRAM bytes, SFRs and DPTR as a
// whole. Rn maps to IRAM n (register bank 0 is assumed).
using LocKey = int;
inline constexpr LocKey kDptrKey = 0x200;
inline LocKey iram_key(uint32_t a) { return static_cast<LocKey>(a & 0xFF); }
inline LocKey sfr_key(uint32_t a) { return static_cast<LocKey>(0x100 + (a & 0xFF)); }
inline LocKey acc_key() { return sfr_key(0xE0); }
LocKey direct_key(uint8_t addr);
std::string loc_key_name(LocKey k);

enum class InsnCategory {
  Seed,      // constant into a location
  Copy,      // location to location
  IndLoad,   // value read through an address register
  IndStore,  // value written through an address register
  Arith,     // add/sub family updating `dst`
  Other,
};

struct DefUse {
  InsnCategory category{InsnCategory::Other};
  std::vector<LocKey> defs;
  std::vector<LocKey> uses;
  std::optional<LocKey> dst;        // Seed/Copy/IndLoad/Arith destination
  std::optional<LocKey> src;        // Copy source
  std::optional<LocKey> addr;       // IndLoad/IndStore address register
  std::optional<LocKey> index;      // A in @A+DPTR / @A+PC / JMP @A+DPTR
  std::optional<LocKey> value;      // IndStore value location
  std::optional<uint16_t> constant; // Seed value
  Region region{Region::Xram};      // IndLoad/IndStore memory region
  bool kills_all{false};            // calls
};

DefUse describe(const isa::Instruction& insn);

// Reaching definitions over a CodeGraph. For each instruction and location:
// the sites whose definition may reach it.
class ReachingDefs {
 public:
  explicit ReachingDefs(const CodeGraph& g);
  const std::set<uint16_t>& reaching(uint16_t site, LocKey loc) const;
  const DefUse& model(uint16_t site) const { return models_.at(site); }
  // Sites using the location `loc` as defined at `def`.
  std::vector<uint16_t> uses_of(uint16_t def, LocKey loc) const;

 private:
  std::map<uint16_t, DefUse> models_;
  std::map<uint16_t, std::map<LocKey, std::set<uint16_t>>> in_;
  std::map<std::pair<uint16_t, LocKey>, std::vector<uint16_t>> uses_;
};

// ---- constant-address propagation ----------------------------------------

struct PropTuple {
  std::optional<uint16_t> value;
  std::optional<uint16_t> tracked;
  bool defined() const { return value.has_value() || tracked.has_value(); }
  friend bool operator==(const PropTuple&, const PropTuple&) = default;
  std::string str() const;  // "(0x276c,⊥)"
};

enum class PropRole { Src, Dst };

struct PropSite {
  PropTuple src;
  PropTuple dst;
  uint8_t visits{0};
};

class PropMap {
 public:
  PropTuple get(uint16_t site, PropRole role) const;
  void set(uint16_t site, PropRole role, PropTuple t);
  const std::map<uint16_t, PropSite>& sites() const { return sites_; }
  uint8_t visits(uint16_t site) const;
  void visit(uint16_t site) { ++sites_[site].visits; }
  // Indirect store sites in address order.
  const std::vector<uint16_t>& stores() const { return stores_; }
  void add_store(uint16_t s) { stores_.push_back(s); }

 private:
  std::map<uint16_t, PropSite> sites_;
  std::vector<uint16_t> stores_;
};

// True for memory-mapped registers.
using IsAReg = std::function<bool(Region, uint32_t)>;
// Every SFR plus the four register banks (IRAM 0x00-0x1F).
bool default_is_a_reg(Region r, uint32_t address);

// Worklist propagation of constants and tracked addresses along def-use
// edges; each site is updated at most twice.
PropMap prop_const_mem(const CodeGraph& g, const ReachingDefs& rd, const IsAReg& is_a_reg = default_is_a_reg);
PropMap prop_const_mem(std::span<const uint8_t> image, const IsAReg& is_a_reg = default_is_a_reg);

// ---- XREFs ---------------------------------------------------------------

// Instructions considered for XREF search: linear sweep plus everything
// reachable in the code graph.
std::vector<isa::Instruction> xref_candidates(std::span<const uint8_t> image, const CodeGraph& g);

// MOV DPTR,#target followed, before DPTR changes and within straight-line
// code, by a MOVC through DPTR.
std::vector<uint16_t> find_xrefs(std::span<const uint8_t> image, uint16_t target);
std::vector<uint16_t> find_xrefs(std::span<const uint8_t> image, const std::vector<isa::Instruction>& candidates,
                                 uint16_t target);

// ---- EP0 inference -------------------------------------------------------

class NoDescriptors : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Ep0Inference {
  std::set<uint16_t> cand_dd;
  std::set<uint16_t> cand_cd;
  std::set<uint16_t> cand_func;
  std::set<uint16_t> ep0_cd;  // destinations of config-descriptor copies
  std::set<uint16_t> ep0_dd;  // destinations of device-descriptor copies
  std::set<uint16_t> ep0;     // destinations of targets, inside both sets
  std::vector<uint16_t> targets;
  std::vector<std::string> diagnostics;
};

// Throws NoDescriptors when no device or no configuration descriptor was
// found.
Ep0Inference find_devspec_to_ep0(const std::vector<DescriptorHit>& hits, const PropMap& m,
                                  const std::string& claimed_class);

struct StaticReport {
  std::vector<DescriptorHit> hits;  // with XREFs
  CodeGraph graph;
  PropMap prop;
  std::optional<Ep0Inference> ep0;
  std::vector<std::string> diagnostics;
};

StaticReport analyze(std::span<const uint8_t> image, const std::string& claimed_class = "hid",
                     const std::vector<SignaturePattern>& sigs = default_signatures(),
                     const IsAReg& is_a_reg = default_is_a_reg);

}  // namespace fwscope::usbstatic
