#include <cstdio>
#include <map>

#include "fwscope/usbdb.hpp"

namespace fwscope::usbdb {

namespace {

uint16_t le16(std::span<const uint8_t> b, size_t i) { return static_cast<uint16_t>(b[i] | (b[i + 1] << 8)); }

void put16(std::vector<uint8_t>& out, uint16_t v) {
  out.push_back(static_cast<uint8_t>(v));
  out.push_back(static_cast<uint8_t>(v >> 8));
}

// Header of the descriptor at `off` inside `b` (which ends at `end`).
// Returns its length after checking it fits.
size_t header(std::span<const uint8_t> b, size_t off, size_t end, size_t base) {
  if (off + 2 > end) throw MalformedDescriptor(base + off, "truncated descriptor header");
  const size_t len = b[off];
  if (len == 0) throw MalformedDescriptor(base + off, "zero bLength");
  if (len < 2) throw MalformedDescriptor(base + off, "bLength below 2");
  if (off + len > end) throw MalformedDescriptor(base + off, "descriptor overruns its container");
  return len;
}

std::vector<uint8_t> tail_of(std::span<const uint8_t> b, size_t off, size_t len, size_t standard) {
  return len > standard ? std::vector<uint8_t>(b.begin() + off + standard, b.begin() + off + len)
                        : std::vector<uint8_t>{};
}

}  // namespace

std::string_view transfer_type_name(TransferType t) {
  switch (t) {
    case TransferType::Control: return "control";
    case TransferType::Isochronous: return "isochronous";
    case TransferType::Bulk: return "bulk";
    case TransferType::Interrupt: return "interrupt";
  }
  return "?";
}

DeviceDescriptor DeviceDescriptor::parse(std::span<const uint8_t> b) {
  if (b.size() < 2) throw MalformedDescriptor(0, "truncated device descriptor");
  if (b[0] == 0) throw MalformedDescriptor(0, "zero bLength");
  if (b[1] != kDeviceType) throw MalformedDescriptor(1, "not a device descriptor");
  if (b[0] != 18) throw MalformedDescriptor(0, "device descriptor bLength must be 18");
  if (b.size() < 18) throw MalformedDescriptor(b.size(), "device descriptor overruns input");
  DeviceDescriptor d;
  d.bLength = b[0];
  d.bDescriptorType = b[1];
  d.bcdUSB = le16(b, 2);
  d.bDeviceClass = b[4];
  d.bDeviceSubClass = b[5];
  d.bDeviceProtocol = b[6];
  d.bMaxPacketSize0 = b[7];
  d.idVendor = le16(b, 8);
  d.idProduct = le16(b, 10);
  d.bcdDevice = le16(b, 12);
  d.iManufacturer = b[14];
  d.iProduct = b[15];
  d.iSerialNumber = b[16];
  d.bNumConfigurations = b[17];
  return d;
}

std::vector<uint8_t> DeviceDescriptor::serialize() const {
  std::vector<uint8_t> o{bLength, bDescriptorType};
  put16(o, bcdUSB);
  o.insert(o.end(), {bDeviceClass, bDeviceSubClass, bDeviceProtocol, bMaxPacketSize0});
  put16(o, idVendor);
  put16(o, idProduct);
  put16(o, bcdDevice);
  o.insert(o.end(), {iManufacturer, iProduct, iSerialNumber, bNumConfigurations});
  return o;
}

ConfigurationDescriptor ConfigurationDescriptor::parse(std::span<const uint8_t> b) {
  if (b.size() < 4) throw MalformedDescriptor(0, "truncated configuration descriptor");
  if (b[0] == 0) throw MalformedDescriptor(0, "zero bLength");
  if (b[1] != kConfigType) throw MalformedDescriptor(1, "not a configuration descriptor");
  if (b[0] < 9) throw MalformedDescriptor(0, "configuration descriptor bLength below 9");
  ConfigurationDescriptor c;
  c.wTotalLength = le16(b, 2);
  if (c.wTotalLength < 9) throw MalformedDescriptor(2, "wTotalLength below 9");
  if (c.wTotalLength > b.size()) throw MalformedDescriptor(2, "wTotalLength overruns input");
  const size_t end = c.wTotalLength;
  const size_t len = header(b, 0, end, 0);
  c.bLength = b[0];
  c.bNumInterfaces = b[4];
  c.bConfigurationValue = b[5];
  c.iConfiguration = b[6];
  c.bmAttributes = b[7];
  c.bMaxPower = b[8];
  c.tail = tail_of(b, 0, len, 9);

  size_t off = len;
  while (off < end) {
    const size_t l = header(b, off, end, 0);
    const uint8_t type = b[off + 1];
    if (type == kInterfaceType) {
      if (l < 9) throw MalformedDescriptor(off, "interface descriptor bLength below 9");
      InterfaceDescriptor i;
      i.bLength = b[off];
      i.bInterfaceNumber = b[off + 2];
      i.bAlternateSetting = b[off + 3];
      i.bNumEndpoints = b[off + 4];
      i.bInterfaceClass = b[off + 5];
      i.bInterfaceSubClass = b[off + 6];
      i.bInterfaceProtocol = b[off + 7];
      i.iInterface = b[off + 8];
      i.tail = tail_of(b, off, l, 9);
      c.interfaces.push_back(std::move(i));
    } else if (type == kEndpointType) {
      if (l < 7) throw MalformedDescriptor(off, "endpoint descriptor bLength below 7");
      if (c.interfaces.empty()) throw MalformedDescriptor(off, "endpoint outside an interface");
      EndpointDescriptor e;
      e.bLength = b[off];
      e.bEndpointAddress = b[off + 2];
      e.bmAttributes = b[off + 3];
      e.wMaxPacketSize = le16(b, off + 4);
      e.bInterval = b[off + 6];
      e.tail = tail_of(b, off, l, 7);
      c.interfaces.back().endpoints.push_back(std::move(e));
    } else {
      RawDescriptor r{std::vector<uint8_t>(b.begin() + off, b.begin() + off + l)};
      if (c.interfaces.empty())
        c.extra.push_back(std::move(r));
      else if (c.interfaces.back().endpoints.empty())
        c.interfaces.back().extra.push_back(std::move(r));
      else
        c.interfaces.back().endpoints.back().extra.push_back(std::move(r));
    }
    off += l;
  }

  for (const auto& i : c.interfaces)
    if (i.endpoints.size() != i.bNumEndpoints)
      throw MalformedDescriptor(0, "interface " + std::to_string(i.bInterfaceNumber) + " declares " +
                                       std::to_string(i.bNumEndpoints) + " endpoints, found " +
                                       std::to_string(i.endpoints.size()));
  std::map<uint8_t, int> numbers;
  for (const auto& i : c.interfaces) numbers[i.bInterfaceNumber]++;
  if (numbers.size() != c.bNumInterfaces)
    throw MalformedDescriptor(4, "bNumInterfaces is " + std::to_string(c.bNumInterfaces) + ", found " +
                                     std::to_string(numbers.size()) + " interfaces");
  return c;
}

std::vector<uint8_t> ConfigurationDescriptor::serialize() const {
  std::vector<uint8_t> o{bLength, kConfigType};
  put16(o, wTotalLength);
  o.insert(o.end(), {bNumInterfaces, bConfigurationValue, iConfiguration, bmAttributes, bMaxPower});
  o.insert(o.end(), tail.begin(), tail.end());
  auto raw = [&](const std::vector<RawDescriptor>& v) {
    for (const auto& r : v) o.insert(o.end(), r.bytes.begin(), r.bytes.end());
  };
  raw(extra);
  for (const auto& i : interfaces) {
    o.insert(o.end(), {i.bLength, kInterfaceType, i.bInterfaceNumber, i.bAlternateSetting, i.bNumEndpoints,
                       i.bInterfaceClass, i.bInterfaceSubClass, i.bInterfaceProtocol, i.iInterface});
    o.insert(o.end(), i.tail.begin(), i.tail.end());
    raw(i.extra);
    for (const auto& e : i.endpoints) {
      o.insert(o.end(), {e.bLength, kEndpointType, e.bEndpointAddress, e.bmAttributes});
      put16(o, e.wMaxPacketSize);
      o.push_back(e.bInterval);
      o.insert(o.end(), e.tail.begin(), e.tail.end());
      raw(e.extra);
    }
  }
  return o;
}

Descriptor parse_descriptor(std::span<const uint8_t> image, size_t offset) {
  if (offset + 2 > image.size()) throw MalformedDescriptor(offset, "descriptor outside the image");
  auto b = image.subspan(offset);
  if (b[0] == 0) throw MalformedDescriptor(offset, "zero bLength");
  try {
    switch (b[1]) {
      case kDeviceType: return DeviceDescriptor::parse(b);
      case kConfigType: return ConfigurationDescriptor::parse(b);
      default: throw MalformedDescriptor(1, "unsupported top-level descriptor type " + std::to_string(b[1]));
    }
  } catch (const MalformedDescriptor& e) {
    throw MalformedDescriptor(offset + e.offset(), e.detail());
  }
}

std::optional<uint8_t> class_code(std::string_view name) {
  static const std::map<std::string_view, uint8_t> m{
      {"audio", 0x01},  {"cdc", 0x02},   {"hid", 0x03},      {"printer", 0x07}, {"mass-storage", 0x08},
      {"hub", 0x09},    {"cdc-data", 0x0a}, {"video", 0x0e}, {"wireless", 0xe0}, {"vendor", 0xff},
  };
  auto it = m.find(name);
  if (it == m.end()) return std::nullopt;
  return it->second;
}

std::string class_name(uint8_t code) {
  for (auto n : {"audio", "cdc", "hid", "printer", "mass-storage", "hub", "cdc-data", "video", "wireless", "vendor"})
    if (class_code(n) == code) return n;
  char buf[8];
  std::snprintf(buf, sizeof buf, "0x%02x", code);
  return buf;
}

}  // namespace fwscope::usbdb
