#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "fwscope/usbstatic.hpp"

namespace fwscope::usbstatic {

std::string_view role_name(SignatureRole r) {
  switch (r) {
    case SignatureRole::Device: return "device";
    case SignatureRole::Config: return "config";
    case SignatureRole::Function: return "function";
  }
  return "?";
}

std::optional<SignatureRole> role_from_name(std::string_view s) {
  for (auto r : {SignatureRole::Device, SignatureRole::Config, SignatureRole::Function})
    if (role_name(r) == s) return r;
  return std::nullopt;
}

SignaturePattern SignaturePattern::parse(std::string name, SignatureRole role, std::string usb_class,
                                         std::string_view hex) {
  SignaturePattern p{std::move(name), role, std::move(usb_class), {}};
  std::istringstream in{std::string(hex)};
  std::string tok;
  while (in >> tok) {
    if (tok == "??") {
      p.bytes.push_back(-1);
      continue;
    }
    if (tok.size() != 2 || !std::isxdigit(static_cast<unsigned char>(tok[0])) ||
        !std::isxdigit(static_cast<unsigned char>(tok[1])))
      throw std::invalid_argument("bad pattern byte '" + tok + "' in " + p.name);
    p.bytes.push_back(std::stoi(tok, nullptr, 16));
  }
  if (p.bytes.empty()) throw std::invalid_argument("empty pattern " + p.name);
  if (p.bytes.front() < 0) throw std::invalid_argument("pattern " + p.name + " starts with a wildcard");
  return p;
}

std::string SignaturePattern::hex() const {
  std::string out;
  char buf[12];
  for (size_t i = 0; i < bytes.size(); ++i) {
    if (i) out += ' ';
    if (bytes[i] < 0) {
      out += "??";
    } else {
      std::snprintf(buf, sizeof buf, "%02X", bytes[i]);
      out += buf;
    }
  }
  return out;
}

bool SignaturePattern::matches_at(std::span<const uint8_t> image, size_t pos) const {
  if (pos + bytes.size() > image.size()) return false;
  for (size_t i = 0; i < bytes.size(); ++i)
    if (bytes[i] >= 0 && image[pos + i] != bytes[i]) return false;
  return true;
}

const std::vector<SignaturePattern>& default_signatures() {
  static const std::vector<SignaturePattern> sigs = {
      SignaturePattern::parse("DEVICE_DESC", SignatureRole::Device, "*", "12 01 00 ?? 00"),
      SignaturePattern::parse("CONFIG_DESC", SignatureRole::Config, "*", "09 02 ?? ?? ?? 01 00"),
      SignaturePattern::parse("HID_REPORT", SignatureRole::Function, "hid", "05 01 09 06 A1"),
      SignaturePattern::parse("MASS_STORAGE_CBW", SignatureRole::Function, "mass-storage", "55 53 42 43"),
  };
  return sigs;
}

std::vector<SignaturePattern> parse_signatures(std::string_view text) {
  std::vector<SignaturePattern> out;
  std::istringstream in{std::string(text)};
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
    std::istringstream ls(line);
    std::string name, role, cls;
    if (!(ls >> name)) continue;
    if (!(ls >> role >> cls))
      throw std::invalid_argument("signature line " + std::to_string(n) + ": expected NAME ROLE CLASS HEX");
    auto r = role_from_name(role);
    if (!r) throw std::invalid_argument("signature line " + std::to_string(n) + ": unknown role " + role);
    std::string rest;
    std::getline(ls, rest);
    for (const auto& p : out)
      if (p.name == name) throw std::invalid_argument("duplicate signature " + name);
    out.push_back(SignaturePattern::parse(name, *r, cls, rest));
  }
  return out;
}

std::vector<SignaturePattern> load_signatures(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_signatures(ss.str());
}

std::vector<DescriptorHit> scan_signatures(std::span<const uint8_t> image,
                                           const std::vector<SignaturePattern>& sigs) {
  std::vector<DescriptorHit> hits;
  for (const auto& p : sigs) {
    size_t pos = 0;
    while (pos + p.bytes.size() <= image.size()) {
      if (!p.matches_at(image, pos)) {
        ++pos;
        continue;
      }
      DescriptorHit h;
      h.pattern = p.name;
      h.role = p.role;
      h.usb_class = p.usb_class;
      h.address = static_cast<uint16_t>(pos);
      h.bytes.assign(image.begin() + pos, image.begin() + pos + p.bytes.size());
      hits.push_back(std::move(h));
      pos += p.bytes.size();
    }
  }
  std::stable_sort(hits.begin(), hits.end(), [](const DescriptorHit& a, const DescriptorHit& b) {
    return a.address != b.address ? a.address < b.address : a.pattern < b.pattern;
  });
  return hits;
}

}  // namespace fwscope::usbstatic
