// Fixture toolkit: a small two-pass 8051 assembler and generators for
// synthetic USB firmware images with ground-truth manifests.
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "fwscope/isa.hpp"
#include "fwscope/symexec.hpp"
#include "json.hpp"

namespace fwscope::fwkit {

enum class AsmErrorKind { Syntax, UnknownMnemonic, UnresolvedLabel, OperandRange, DuplicateLabel, Overlap };

class AsmError : public std::runtime_error {
 public:
  AsmError(AsmErrorKind kind, int line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), kind_(kind), line_(line) {}
  AsmErrorKind kind() const { return kind_; }
  int line() const { return line_; }

 private:
  AsmErrorKind kind_;
  int line_;
};

struct AsmStatement {
  int line{0};
  std::string label;
  std::string op;  // mnemonic or directive (".org", ".db", ...); may be empty
  std::vector<std::string> args;
};

// Syntax:
//   label:  MNEMONIC op, op   ; comment
//   .org expr | .db expr|"text", ... | .dw expr, ... (big-endian)
//   .equ NAME, expr | .ds count | .fill count, byte
// Expressions: numbers (0x.., 0b.., decimal, 'c'), labels, .equ names,
// SFR and bit names, `$`, high(e), low(e), + and -.  `X.Y` names bit Y of a
// bit-addressable byte.
struct AsmProgram {
  std::vector<AsmStatement> statements;

  static AsmProgram parse(std::string_view source);
};

struct Assembly {
  std::vector<uint8_t> image;
  std::map<std::string, uint32_t> symbols;
  std::vector<isa::Instruction> instructions;  // in emission order

  uint16_t at(const std::string& label) const;
};

struct AssembleOptions {
  size_t image_size{0};  // 0: up to the highest emitted byte
  uint8_t fill{0x00};
};

Assembly assemble(const AsmProgram& program, const AssembleOptions& opts = {});
Assembly assemble(std::string_view source, const AssembleOptions& opts = {});

enum class Template { BenignHid, InjectorHid, StorageClaimingHid, Straightline, Branchy };
std::string_view template_name(Template t);
std::optional<Template> template_from_name(std::string_view name);

struct FixtureSpec {
  Template kind{Template::BenignHid};
  // HID templates.
  uint32_t injection_threshold{16};
  std::vector<uint8_t> scancodes{0xe2, 0x3b, 0x1b};
  std::optional<uint16_t> ep0;  // defaults per template
  bool split_ep0{false};        // copy the config descriptor to a second buffer
  // Branchy: number of chained environment reads guarding the target.
  unsigned guard_depth{3};
};

struct Manifest {
  std::string template_name;
  std::string expected_class;  // what the device advertises first
  std::map<std::string, uint16_t> descriptors;           // pattern name -> code address
  std::map<std::string, std::vector<uint16_t>> xrefs;    // pattern name -> XREF sites
  std::optional<uint16_t> ep0;
  std::vector<uint16_t> endpoints;                       // other endpoint buffers
  std::vector<uint16_t> query1_targets;                  // function-specific copy stores
  std::optional<uint16_t> descriptor_copy_site;          // the HID report store to EP0
  std::vector<uint16_t> copy_sites;                      // every descriptor-to-EP0 store
  std::vector<symexec::Location> counters;
  std::vector<symexec::Location> environment;            // bytes the ISRs read from hardware
  std::optional<uint16_t> malicious_site;
  std::optional<uint16_t> malicious_address;
  std::vector<uint8_t> malicious_values;
  std::optional<uint16_t> benign_site;                   // store forwarding input to the endpoint
  std::map<std::string, symexec::Location> setup;        // setup packet fields
  std::optional<uint16_t> target;                        // generic guarded target (branchy)
  size_t instruction_count{0};

  nlohmann::json to_json() const;
  static Manifest from_json(const nlohmann::json& j);
};

struct Fixture {
  std::vector<uint8_t> image;
  Manifest manifest;
  std::string source;
};

Fixture generate_fixture(const FixtureSpec& spec);

}  // namespace fwscope::fwkit
