#include <cstdio>
#include <string>

#include "fwscope/queries.hpp"

namespace fwscope::queries {

using namespace solver;

const std::vector<UsbConstant>& usb_constants() {
  static const std::vector<UsbConstant> table = {
      {"bRequest", 0x00, "GET_STATUS"},
      {"bRequest", 0x01, "CLEAR_FEATURE"},
      {"bRequest", 0x03, "SET_FEATURE"},
      {"bRequest", 0x05, "SET_ADDRESS"},
      {"bRequest", 0x06, "GET_DESCRIPTOR"},
      {"bRequest", 0x07, "SET_DESCRIPTOR"},
      {"bRequest", 0x08, "GET_CONFIGURATION"},
      {"bRequest", 0x09, "SET_CONFIGURATION"},
      {"bRequest", 0x0A, "GET_INTERFACE"},
      {"bRequest", 0x0B, "SET_INTERFACE"},
      {"wValueH", 0x01, "DEVICE_DESCRIPTOR"},
      {"wValueH", 0x02, "CONFIGURATION_DESCRIPTOR"},
      {"wValueH", 0x03, "STRING_DESCRIPTOR"},
      {"wValueH", 0x21, "HID_DESCRIPTOR"},
      {"wValueH", 0x22, "HID_REPORT_DESCRIPTOR"},
      {"bmRequestType", 0x80, "DEVICE_TO_HOST_STANDARD_DEVICE"},
      {"bmRequestType", 0x81, "DEVICE_TO_HOST_STANDARD_INTERFACE"},
  };
  return table;
}

std::optional<std::string_view> usb_constant_name(std::string_view field, uint8_t value) {
  for (const auto& c : usb_constants())
    if (c.field == field && c.value == value) return c.name;
  return std::nullopt;
}

std::string_view relation_name(Relation r) {
  switch (r) {
    case Relation::Eq: return "==";
    case Relation::Ne: return "!=";
    case Relation::Lt: return "<";
    case Relation::Gt: return ">";
    case Relation::BitSet: return "bit-set";
    case Relation::BitClear: return "bit-clear";
  }
  return "?";
}

std::optional<Relation> relation_from_name(std::string_view s) {
  for (auto r : {Relation::Eq, Relation::Ne, Relation::Lt, Relation::Gt, Relation::BitSet, Relation::BitClear})
    if (relation_name(r) == s) return r;
  return std::nullopt;
}

ExprRef Precondition::expr() const {
  const ExprRef v = symexec::location_var(location.region, location.address);
  const ExprRef c = mk_const(value, 8);
  switch (relation) {
    case Relation::Eq: return mk_eq(v, c);
    case Relation::Ne: return mk_ne(v, c);
    case Relation::Lt: return mk_ult(v, c);
    case Relation::Gt: return mk_ult(c, v);
    case Relation::BitSet: return mk_eq(mk_extract(v, value & 7, value & 7), mk_const(1, 1));
    case Relation::BitClear: return mk_eq(mk_extract(v, value & 7, value & 7), mk_const(0, 1));
  }
  return mk_true();
}

std::string Precondition::str() const {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s:0x%04x:%s:%u", std::string(ir::region_name(location.region)).c_str(),
                location.address, std::string(relation_name(relation)).c_str(), value);
  return buf;
}

Precondition Precondition::parse(std::string_view text) {
  std::vector<std::string> parts;
  std::string cur;
  for (char ch : text) {
    if (ch == ':') {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  parts.push_back(cur);
  const std::string t(text);
  if (parts.size() != 4) throw std::invalid_argument("precondition '" + t + "': expected REGION:ADDR:REL:VAL");
  auto loc = symexec::parse_location(parts[0] + "[" + parts[1] + "]");
  if (!loc) throw std::invalid_argument("precondition '" + t + "': bad location");
  if (loc->region != ir::Region::Iram && loc->region != ir::Region::Xram)
    throw std::invalid_argument("precondition '" + t + "': only IRAM and XRAM bytes can be constrained");
  auto rel = relation_from_name(parts[2]);
  if (!rel) throw std::invalid_argument("precondition '" + t + "': unknown relation " + parts[2]);
  unsigned long v = 0;
  try {
    size_t used = 0;
    v = std::stoul(parts[3], &used, 0);
    if (used != parts[3].size()) throw std::invalid_argument("");
  } catch (const std::exception&) {
    throw std::invalid_argument("precondition '" + t + "': bad value " + parts[3]);
  }
  const bool bit = *rel == Relation::BitSet || *rel == Relation::BitClear;
  if (v > (bit ? 7u : 255u)) throw std::invalid_argument("precondition '" + t + "': value out of range");
  return {*loc, *rel, static_cast<uint8_t>(v)};
}

std::vector<ExprRef> precondition_exprs(const std::vector<Precondition>& pre) {
  std::vector<ExprRef> out;
  out.reserve(pre.size());
  for (const auto& p : pre) out.push_back(p.expr());
  return out;
}

void apply_preconditions(symexec::ExecState& state, const std::vector<Precondition>& pre, Solver& solver) {
  for (const auto& p : pre)
    if (!state.policy().contains(p.location))
      throw std::invalid_argument("precondition on " + symexec::location_name(p.location) +
                                  ", which is not symbolic");
  PathCondition pc = state.path;
  for (const auto& p : pre) pc.add(p.expr(), 0, true, "precondition");
  if (pc.trivially_false() || solver.check(pc) == SatResult::Unsat)
    throw UnsatisfiablePreconditions("preconditions are unsatisfiable");
  state.path = std::move(pc);
}

}  // namespace fwscope::queries
