#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "fwscope/usbdb.hpp"

namespace fwscope::usbdb {

namespace {

constexpr uint16_t kDevice = kMatchVendor | kMatchProduct;
constexpr uint16_t kDevInfo = kMatchDevClass | kMatchDevSubClass | kMatchDevProtocol;
constexpr uint16_t kIntInfo = kMatchIntClass | kMatchIntSubClass | kMatchIntProtocol;
constexpr uint16_t kIntFlags = kIntInfo | kMatchIntNumber;
constexpr uint8_t kMassStorage = 0x08;

struct FormInfo {
  RuleForm form;
  std::string_view name;
  uint16_t flags;
  std::vector<std::string> params;
};

const std::vector<FormInfo>& forms() {
  static const std::vector<FormInfo> v{
      {RuleForm::Device, "USB_DEVICE", kDevice, {"vendor", "product"}},
      {RuleForm::DeviceVer, "USB_DEVICE_VER", kDevice | kMatchDevLo | kMatchDevHi, {"vendor", "product", "lo", "hi"}},
      {RuleForm::DeviceInterfaceClass, "USB_DEVICE_INTERFACE_CLASS", kDevice | kMatchIntClass,
       {"vendor", "product", "class"}},
      {RuleForm::DeviceInterfaceProtocol, "USB_DEVICE_INTERFACE_PROTOCOL", kDevice | kMatchIntProtocol,
       {"vendor", "product", "protocol"}},
      {RuleForm::DeviceInterfaceNumber, "USB_DEVICE_INTERFACE_NUMBER", kDevice | kMatchIntNumber,
       {"vendor", "product", "number"}},
      {RuleForm::DeviceInfo, "USB_DEVICE_INFO", kDevInfo, {"class", "subclass", "protocol"}},
      {RuleForm::InterfaceInfo, "USB_INTERFACE_INFO", kIntInfo, {"class", "subclass", "protocol"}},
      {RuleForm::DeviceAndInterfaceInfo, "USB_DEVICE_AND_INTERFACE_INFO", kDevice | kIntInfo,
       {"vendor", "product", "class", "subclass", "protocol"}},
      {RuleForm::VendorAndInterfaceInfo, "USB_VENDOR_AND_INTERFACE_INFO", kMatchVendor | kIntInfo,
       {"vendor", "class", "subclass", "protocol"}},
      {RuleForm::UsualDev, "USUAL_DEV", kIntInfo, {"subclass", "protocol"}},
  };
  return v;
}

const FormInfo& info(RuleForm f) {
  for (const auto& i : forms())
    if (i.form == f) return i;
  throw std::logic_error("unknown rule form");
}

uint32_t limit(const std::string& param) {
  return param == "vendor" || param == "product" || param == "lo" || param == "hi" ? 0xFFFF : 0xFF;
}

}  // namespace

std::string_view form_name(RuleForm f) { return info(f).name; }
uint16_t form_flags(RuleForm f) { return info(f).flags; }
const std::vector<std::string>& form_params(RuleForm f) { return info(f).params; }

std::optional<RuleForm> form_from_name(std::string_view s) {
  for (const auto& i : forms())
    if (i.name == s) return i.form;
  return std::nullopt;
}

MatchRule MatchRule::make(RuleForm form, const std::map<std::string, uint32_t>& params, std::string driver) {
  const auto& fi = info(form);
  for (const auto& p : fi.params) {
    auto it = params.find(p);
    if (it == params.end())
      throw std::invalid_argument(std::string(fi.name) + ": missing parameter '" + p + "'");
    if (it->second > limit(p))
      throw std::invalid_argument(std::string(fi.name) + ": parameter '" + p + "' out of range");
  }
  if (params.size() != fi.params.size()) {
    for (const auto& [k, v] : params)
      if (std::find(fi.params.begin(), fi.params.end(), k) == fi.params.end())
        throw std::invalid_argument(std::string(fi.name) + ": unexpected parameter '" + k + "'");
  }
  MatchRule r;
  r.form = form;
  r.flags = fi.flags;
  r.driver = std::move(driver);
  auto get = [&](const char* k) { return params.at(k); };
  switch (form) {
    case RuleForm::Device:
      r.idVendor = get("vendor"), r.idProduct = get("product");
      break;
    case RuleForm::DeviceVer:
      r.idVendor = get("vendor"), r.idProduct = get("product");
      r.bcdDevice_lo = get("lo"), r.bcdDevice_hi = get("hi");
      break;
    case RuleForm::DeviceInterfaceClass:
      r.idVendor = get("vendor"), r.idProduct = get("product"), r.bInterfaceClass = get("class");
      break;
    case RuleForm::DeviceInterfaceProtocol:
      r.idVendor = get("vendor"), r.idProduct = get("product"), r.bInterfaceProtocol = get("protocol");
      break;
    case RuleForm::DeviceInterfaceNumber:
      r.idVendor = get("vendor"), r.idProduct = get("product"), r.bInterfaceNumber = get("number");
      break;
    case RuleForm::DeviceInfo:
      r.bDeviceClass = get("class"), r.bDeviceSubClass = get("subclass"), r.bDeviceProtocol = get("protocol");
      break;
    case RuleForm::InterfaceInfo:
      r.bInterfaceClass = get("class"), r.bInterfaceSubClass = get("subclass");
      r.bInterfaceProtocol = get("protocol");
      break;
    case RuleForm::DeviceAndInterfaceInfo:
      r.idVendor = get("vendor"), r.idProduct = get("product");
      r.bInterfaceClass = get("class"), r.bInterfaceSubClass = get("subclass");
      r.bInterfaceProtocol = get("protocol");
      break;
    case RuleForm::VendorAndInterfaceInfo:
      r.idVendor = get("vendor");
      r.bInterfaceClass = get("class"), r.bInterfaceSubClass = get("subclass");
      r.bInterfaceProtocol = get("protocol");
      break;
    case RuleForm::UsualDev:
      r.bInterfaceClass = kMassStorage;
      r.bInterfaceSubClass = get("subclass"), r.bInterfaceProtocol = get("protocol");
      break;
  }
  return r;
}

std::map<std::string, uint32_t> MatchRule::params() const {
  std::map<std::string, uint32_t> m;
  for (const auto& p : form_params(form)) {
    if (p == "vendor") m[p] = idVendor;
    else if (p == "product") m[p] = idProduct;
    else if (p == "lo") m[p] = bcdDevice_lo;
    else if (p == "hi") m[p] = bcdDevice_hi;
    else if (p == "number") m[p] = bInterfaceNumber;
    else if (form == RuleForm::DeviceInfo)
      m[p] = p == "class" ? bDeviceClass : p == "subclass" ? bDeviceSubClass : bDeviceProtocol;
    else
      m[p] = p == "class" ? bInterfaceClass : p == "subclass" ? bInterfaceSubClass : bInterfaceProtocol;
  }
  return m;
}

std::string MatchRule::str() const {
  std::string s(form_name(form));
  for (const auto& p : form_params(form)) {
    char buf[32];
    std::snprintf(buf, sizeof buf, " %s=0x%0*x", p.c_str(), limit(p) == 0xFFFF ? 4 : 2, params().at(p));
    s += buf;
  }
  return s + " driver=" + driver;
}

std::set<std::string> participating_fields(const MatchRule& r) {
  std::set<std::string> f;
  if (r.flags & kMatchVendor) f.insert("idVendor");
  if (r.flags & kMatchProduct) f.insert("idProduct");
  if (r.flags & (kMatchDevLo | kMatchDevHi)) f.insert("bcdDevice");
  if (r.flags & kMatchDevClass) f.insert("bDeviceClass");
  if (r.flags & kMatchDevSubClass) f.insert("bDeviceSubClass");
  if (r.flags & kMatchDevProtocol) f.insert("bDeviceProtocol");
  if (r.flags & kMatchIntClass) f.insert("bInterfaceClass");
  if (r.flags & kMatchIntSubClass) f.insert("bInterfaceSubClass");
  if (r.flags & kMatchIntProtocol) f.insert("bInterfaceProtocol");
  if (r.flags & kMatchIntNumber) f.insert("bInterfaceNumber");
  if ((r.flags & kIntFlags) && !(r.flags & kMatchVendor)) f.insert("bDeviceClass");
  return f;
}

bool match_device(const MatchRule& r, const DeviceDescriptor& d) {
  if ((r.flags & kMatchVendor) && r.idVendor != d.idVendor) return false;
  if ((r.flags & kMatchProduct) && r.idProduct != d.idProduct) return false;
  if ((r.flags & kMatchDevLo) && r.bcdDevice_lo > d.bcdDevice) return false;
  if ((r.flags & kMatchDevHi) && r.bcdDevice_hi < d.bcdDevice) return false;
  if ((r.flags & kMatchDevClass) && r.bDeviceClass != d.bDeviceClass) return false;
  if ((r.flags & kMatchDevSubClass) && r.bDeviceSubClass != d.bDeviceSubClass) return false;
  if ((r.flags & kMatchDevProtocol) && r.bDeviceProtocol != d.bDeviceProtocol) return false;
  return true;
}

bool match_interface(const MatchRule& r, const DeviceDescriptor& d, const InterfaceDescriptor& i) {
  // Interface fields of a vendor-specific device only count when the rule
  // also names the vendor.
  if (d.bDeviceClass == 0xff && !(r.flags & kMatchVendor) && (r.flags & kIntFlags)) return false;
  if ((r.flags & kMatchIntClass) && r.bInterfaceClass != i.bInterfaceClass) return false;
  if ((r.flags & kMatchIntSubClass) && r.bInterfaceSubClass != i.bInterfaceSubClass) return false;
  if ((r.flags & kMatchIntProtocol) && r.bInterfaceProtocol != i.bInterfaceProtocol) return false;
  if ((r.flags & kMatchIntNumber) && r.bInterfaceNumber != i.bInterfaceNumber) return false;
  return true;
}

bool matches(const MatchRule& r, const DeviceDescriptor& d, const InterfaceDescriptor* i) {
  if (!match_device(r, d)) return false;
  if (!(r.flags & kIntFlags)) return true;
  return i && match_interface(r, d, *i);
}

RuleDb RuleDb::parse(std::string_view text) {
  RuleDb db;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
    std::istringstream ls(line);
    std::string head;
    if (!(ls >> head)) continue;
    auto where = [&] { return "rule line " + std::to_string(lineno) + ": "; };
    auto form = form_from_name(head);
    if (!form) throw std::invalid_argument(where() + "unknown form '" + head + "'");
    std::map<std::string, uint32_t> params;
    std::string driver, tok;
    while (ls >> tok) {
      auto eq = tok.find('=');
      if (eq == std::string::npos || eq == 0) throw std::invalid_argument(where() + "expected key=value, got '" + tok + "'");
      const auto key = tok.substr(0, eq), val = tok.substr(eq + 1);
      if (key == "driver") {
        driver = val;
        continue;
      }
      size_t used = 0;
      unsigned long v = 0;
      try {
        v = std::stoul(val, &used, 0);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || used != val.size()) throw std::invalid_argument(where() + "bad number '" + val + "'");
      if (!params.emplace(key, static_cast<uint32_t>(std::min<unsigned long>(v, 0x10000))).second)
        throw std::invalid_argument(where() + "duplicate parameter '" + key + "'");
    }
    if (driver.empty()) throw std::invalid_argument(where() + "missing driver");
    try {
      db.rules.push_back(MatchRule::make(*form, params, driver));
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(where() + e.what());
    }
  }
  return db;
}

RuleDb RuleDb::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open rule database " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse(ss.str());
}

std::string RuleDb::str() const {
  std::string s;
  for (const auto& r : rules) s += r.str() + "\n";
  return s;
}

std::vector<DriverMatch> match_drivers(const RuleDb& db, const DeviceDescriptor& device,
                                       const std::vector<InterfaceDescriptor>& interfaces) {
  std::vector<DriverMatch> out;
  for (const auto& r : db.rules) {
    if (!match_device(r, device)) continue;
    const std::string name(form_name(r.form));
    if (!(r.flags & kIntFlags)) {
      out.push_back({name, r.driver, std::nullopt});
      continue;
    }
    std::set<uint8_t> seen;
    for (const auto& i : interfaces)
      if (match_interface(r, device, i) && seen.insert(i.bInterfaceNumber).second)
        out.push_back({name, r.driver, i.bInterfaceNumber});
  }
  return out;
}

}  // namespace fwscope::usbdb
