// USB descriptor parsing and kernel-style device-id matching, plus the
// claimed-identity model and its comparison against an expected class.
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace fwscope::usbdb {

class MalformedDescriptor : public std::runtime_error {
 public:
  MalformedDescriptor(size_t offset, const std::string& what)
      : std::runtime_error("offset " + std::to_string(offset) + ": " + what), offset_(offset), detail_(what) {}
  size_t offset() const { return offset_; }
  const std::string& detail() const { return detail_; }

 private:
  size_t offset_;
  std::string detail_;
};

// ---- descriptors ---------------------------------------------------------

inline constexpr uint8_t kDeviceType = 1;
inline constexpr uint8_t kConfigType = 2;
inline constexpr uint8_t kInterfaceType = 4;
inline constexpr uint8_t kEndpointType = 5;

struct DeviceDescriptor {
  uint8_t bLength{18};
  uint8_t bDescriptorType{kDeviceType};
  uint16_t bcdUSB{0x0200};
  uint8_t bDeviceClass{0};
  uint8_t bDeviceSubClass{0};
  uint8_t bDeviceProtocol{0};
  uint8_t bMaxPacketSize0{64};
  uint16_t idVendor{0};
  uint16_t idProduct{0};
  uint16_t bcdDevice{0};
  uint8_t iManufacturer{0};
  uint8_t iProduct{0};
  uint8_t iSerialNumber{0};
  uint8_t bNumConfigurations{1};

  static DeviceDescriptor parse(std::span<const uint8_t> bytes);
  std::vector<uint8_t> serialize() const;
  friend bool operator==(const DeviceDescriptor&, const DeviceDescriptor&) = default;
};

// A descriptor kept as raw bytes (class-specific or unknown types).
struct RawDescriptor {
  std::vector<uint8_t> bytes;
  uint8_t type() const { return bytes.size() > 1 ? bytes[1] : 0; }
  friend bool operator==(const RawDescriptor&, const RawDescriptor&) = default;
};

enum class TransferType { Control, Isochronous, Bulk, Interrupt };
std::string_view transfer_type_name(TransferType t);

struct EndpointDescriptor {
  uint8_t bLength{7};
  uint8_t bEndpointAddress{0};
  uint8_t bmAttributes{0};
  uint16_t wMaxPacketSize{0};
  uint8_t bInterval{0};
  std::vector<uint8_t> tail;          // bytes past the standard 7
  std::vector<RawDescriptor> extra;   // descriptors following this endpoint

  bool is_in() const { return bEndpointAddress & 0x80; }
  uint8_t number() const { return bEndpointAddress & 0x0F; }
  TransferType transfer_type() const { return static_cast<TransferType>(bmAttributes & 3); }
  friend bool operator==(const EndpointDescriptor&, const EndpointDescriptor&) = default;
};

struct InterfaceDescriptor {
  uint8_t bLength{9};
  uint8_t bInterfaceNumber{0};
  uint8_t bAlternateSetting{0};
  uint8_t bNumEndpoints{0};
  uint8_t bInterfaceClass{0};
  uint8_t bInterfaceSubClass{0};
  uint8_t bInterfaceProtocol{0};
  uint8_t iInterface{0};
  std::vector<uint8_t> tail;
  std::vector<RawDescriptor> extra;  // class-specific descriptors before the endpoints
  std::vector<EndpointDescriptor> endpoints;
  friend bool operator==(const InterfaceDescriptor&, const InterfaceDescriptor&) = default;
};

struct ConfigurationDescriptor {
  uint8_t bLength{9};
  uint16_t wTotalLength{9};
  uint8_t bNumInterfaces{0};
  uint8_t bConfigurationValue{1};
  uint8_t iConfiguration{0};
  uint8_t bmAttributes{0x80};
  uint8_t bMaxPower{50};
  std::vector<uint8_t> tail;
  std::vector<RawDescriptor> extra;  // before the first interface
  std::vector<InterfaceDescriptor> interfaces;

  // Parses wTotalLength bytes; `bytes` may be longer.
  static ConfigurationDescriptor parse(std::span<const uint8_t> bytes);
  std::vector<uint8_t> serialize() const;
  friend bool operator==(const ConfigurationDescriptor&, const ConfigurationDescriptor&) = default;
};

using Descriptor = std::variant<DeviceDescriptor, ConfigurationDescriptor>;

// Dispatches on bDescriptorType at `offset`.
Descriptor parse_descriptor(std::span<const uint8_t> image, size_t offset);

// ---- class codes ---------------------------------------------------------

// "hid" -> 3, "mass-storage" -> 8, ...
std::optional<uint8_t> class_code(std::string_view name);
std::string class_name(uint8_t code);

// ---- match rules ---------------------------------------------------------

enum MatchFlag : uint16_t {
  kMatchVendor = 0x0001,
  kMatchProduct = 0x0002,
  kMatchDevLo = 0x0004,
  kMatchDevHi = 0x0008,
  kMatchDevClass = 0x0010,
  kMatchDevSubClass = 0x0020,
  kMatchDevProtocol = 0x0040,
  kMatchIntClass = 0x0080,
  kMatchIntSubClass = 0x0100,
  kMatchIntProtocol = 0x0200,
  kMatchIntNumber = 0x0400,
};

enum class RuleForm {
  Device,                      // USB_DEVICE(vendor, product)
  DeviceVer,                   // USB_DEVICE_VER(vendor, product, lo, hi)
  DeviceInterfaceClass,        // USB_DEVICE_INTERFACE_CLASS(vendor, product, class)
  DeviceInterfaceProtocol,     // USB_DEVICE_INTERFACE_PROTOCOL(vendor, product, protocol)
  DeviceInterfaceNumber,       // USB_DEVICE_INTERFACE_NUMBER(vendor, product, number)
  DeviceInfo,                  // USB_DEVICE_INFO(class, subclass, protocol)
  InterfaceInfo,               // USB_INTERFACE_INFO(class, subclass, protocol)
  DeviceAndInterfaceInfo,      // USB_DEVICE_AND_INTERFACE_INFO(vendor, product, class, subclass, protocol)
  VendorAndInterfaceInfo,      // USB_VENDOR_AND_INTERFACE_INFO(vendor, class, subclass, protocol)
  UsualDev,                    // USUAL_DEV(subclass, protocol): mass-storage interfaces
};

inline constexpr RuleForm kAllForms[] = {
    RuleForm::Device,        RuleForm::DeviceVer,     RuleForm::DeviceInterfaceClass,
    RuleForm::DeviceInterfaceProtocol, RuleForm::DeviceInterfaceNumber, RuleForm::DeviceInfo,
    RuleForm::InterfaceInfo, RuleForm::DeviceAndInterfaceInfo, RuleForm::VendorAndInterfaceInfo,
    RuleForm::UsualDev,
};

std::string_view form_name(RuleForm f);  // the kernel macro name
std::optional<RuleForm> form_from_name(std::string_view s);
uint16_t form_flags(RuleForm f);
// Parameter names in macro order, e.g. {"vendor", "product"}.
const std::vector<std::string>& form_params(RuleForm f);

struct MatchRule {
  RuleForm form{RuleForm::Device};
  uint16_t flags{0};
  uint16_t idVendor{0};
  uint16_t idProduct{0};
  uint16_t bcdDevice_lo{0};
  uint16_t bcdDevice_hi{0};
  uint8_t bDeviceClass{0};
  uint8_t bDeviceSubClass{0};
  uint8_t bDeviceProtocol{0};
  uint8_t bInterfaceClass{0};
  uint8_t bInterfaceSubClass{0};
  uint8_t bInterfaceProtocol{0};
  uint8_t bInterfaceNumber{0};
  std::string driver;

  // Throws std::invalid_argument unless `params` names exactly the form's
  // parameters.
  static MatchRule make(RuleForm form, const std::map<std::string, uint32_t>& params, std::string driver);
  std::map<std::string, uint32_t> params() const;
  std::string str() const;  // one rule-file line
};

// Device fields read when matching a rule; interface-level rules without a
// vendor also read bDeviceClass (vendor-specific devices are skipped).
std::set<std::string> participating_fields(const MatchRule& r);

// Kernel semantics: device fields then, for rules with interface flags, the
// given interface.
bool match_device(const MatchRule& r, const DeviceDescriptor& d);
bool match_interface(const MatchRule& r, const DeviceDescriptor& d, const InterfaceDescriptor& i);
bool matches(const MatchRule& r, const DeviceDescriptor& d, const InterfaceDescriptor* i);

struct RuleDb {
  std::vector<MatchRule> rules;

  // One rule per line: FORM key=value ... driver=NAME; '#' comments.
  static RuleDb parse(std::string_view text);
  static RuleDb load(const std::string& path);
  std::string str() const;
};

struct DriverMatch {
  std::string rule;    // form name
  std::string driver;
  std::optional<uint8_t> interface;  // for interface-level rules
  friend bool operator==(const DriverMatch&, const DriverMatch&) = default;
};

// Every rule that matches the device or one of its interfaces.
std::vector<DriverMatch> match_drivers(const RuleDb& db, const DeviceDescriptor& device,
                                       const std::vector<InterfaceDescriptor>& interfaces);

// ---- claimed model -------------------------------------------------------

struct ClaimedInterface {
  uint8_t usb_class{0};
  uint8_t subclass{0};
  uint8_t protocol{0};
  bool confirmed{false};            // reached by symbolic execution
  std::optional<uint16_t> target;   // evidence store site
  std::string path_digest;
  std::string source;               // "configuration descriptor" or the signature name
};

struct ClaimedModel {
  std::optional<uint8_t> device_class;
  std::optional<uint8_t> device_protocol;
  std::vector<ClaimedInterface> interfaces;
  std::vector<EndpointDescriptor> endpoints;
  std::vector<DriverMatch> drivers;

  bool empty() const { return !device_class && interfaces.empty(); }
};

// Function-specific evidence from the reachability query.
struct Evidence {
  std::string usb_class;  // class name of the signature
  std::string signature;
  uint16_t target{0};
  bool reached{false};
  std::string path_digest;
};

ClaimedModel build_claimed_model(const std::optional<DeviceDescriptor>& device,
                                 const std::optional<ConfigurationDescriptor>& config,
                                 const std::vector<Evidence>& evidence, const RuleDb& db);

struct Reason {
  uint8_t usb_class;
  std::optional<uint16_t> target;
  std::string path_digest;
  std::string detail;
};

struct IdentityVerdict {
  bool anomalous{false};
  std::vector<Reason> reasons;
  std::vector<std::string> notes;
};

// Classes a device expected to be `expected` may legitimately expose.
std::optional<std::set<uint8_t>> expected_classes(std::string_view expected);

// Anomalous iff a confirmed interface class falls outside the expected set.
IdentityVerdict compare_models(const ClaimedModel& claimed, std::string_view expected);

}  // namespace fwscope::usbdb
