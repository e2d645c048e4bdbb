#include <cstdio>

#include "fwscope/usbdb.hpp"

namespace fwscope::usbdb {

ClaimedModel build_claimed_model(const std::optional<DeviceDescriptor>& device,
                                 const std::optional<ConfigurationDescriptor>& config,
                                 const std::vector<Evidence>& evidence, const RuleDb& db) {
  ClaimedModel m;
  if (device) {
    m.device_class = device->bDeviceClass;
    m.device_protocol = device->bDeviceProtocol;
  }
  if (config) {
    for (const auto& i : config->interfaces) {
      m.interfaces.push_back({i.bInterfaceClass, i.bInterfaceSubClass, i.bInterfaceProtocol, false, std::nullopt, {},
                              "configuration descriptor"});
      m.endpoints.insert(m.endpoints.end(), i.endpoints.begin(), i.endpoints.end());
    }
  }
  for (const auto& e : evidence) {
    if (!e.reached) continue;
    auto code = class_code(e.usb_class);
    if (!code) continue;
    ClaimedInterface ci{*code, 0, 0, true, e.target, e.path_digest, e.signature};
    // Borrow subclass/protocol from a static interface of the same class.
    for (const auto& s : m.interfaces)
      if (!s.confirmed && s.usb_class == *code) {
        ci.subclass = s.subclass;
        ci.protocol = s.protocol;
        break;
      }
    m.interfaces.push_back(std::move(ci));
  }
  if (device) m.drivers = match_drivers(db, *device, config ? config->interfaces : std::vector<InterfaceDescriptor>{});
  return m;
}

std::optional<std::set<uint8_t>> expected_classes(std::string_view expected) {
  if (expected == "unknown") return std::nullopt;
  if (expected == "composite") {
    std::set<uint8_t> all;
    for (unsigned c = 0; c < 256; ++c) all.insert(static_cast<uint8_t>(c));
    return all;
  }
  auto code = class_code(expected);
  if (!code) throw std::invalid_argument("unknown expected class '" + std::string(expected) + "'");
  return std::set<uint8_t>{*code};
}

IdentityVerdict compare_models(const ClaimedModel& claimed, std::string_view expected) {
  IdentityVerdict v;
  const auto allowed = expected_classes(expected);
  if (!allowed) {
    v.notes.push_back("expected class unknown; identity not compared");
    return v;
  }
  for (const auto& i : claimed.interfaces) {
    if (!i.confirmed) {
      if (!allowed->count(i.usb_class))
        v.notes.push_back("statically present " + class_name(i.usb_class) +
                          " interface was not reached; not counted");
      continue;
    }
    if (allowed->count(i.usb_class)) continue;
    v.anomalous = true;
    std::string detail = "reachable " + class_name(i.usb_class) + " functionality";
    if (i.target) {
      char buf[16];
      std::snprintf(buf, sizeof buf, "0x%04x", *i.target);
      detail += std::string(" at ") + buf;
    }
    detail += " on a device expected to be " + std::string(expected);
    v.reasons.push_back({i.usb_class, i.target, i.path_digest, detail});
  }
  if (claimed.empty()) v.notes.push_back("no claimed identity recovered");
  return v;
}

}  // namespace fwscope::usbdb
