#include "doctest.h"

#include <random>

#include "fwscope/fwkit.hpp"
#include "fwscope/usbdb.hpp"

using namespace fwscope;
using namespace fwscope::usbdb;

namespace {

const std::vector<uint8_t> kDevice = {0x12, 0x01, 0x00, 0x02, 0x00, 0x00, 0x00, 0x40, 0x34,
                                      0x12, 0x78, 0x56, 0x00, 0x01, 0x01, 0x02, 0x00, 0x01};

// 1 HID interface with a class descriptor and one interrupt-IN endpoint.
const std::vector<uint8_t> kHidConfig = {
    0x09, 0x02, 0x22, 0x00, 0x01, 0x01, 0x00, 0x80, 0x32,        //
    0x09, 0x04, 0x00, 0x00, 0x01, 0x03, 0x01, 0x01, 0x00,        //
    0x09, 0x21, 0x11, 0x01, 0x00, 0x01, 0x22, 0x3f, 0x00,        //
    0x07, 0x05, 0x81, 0x03, 0x08, 0x00, 0x0a,                    //
};

MatchRule rule(RuleForm f, std::map<std::string, uint32_t> p) { return MatchRule::make(f, p, "drv"); }

// Writes `v` into the named device or interface field.
void set_field(DeviceDescriptor& d, InterfaceDescriptor& i, const std::string& f, uint32_t v) {
  if (f == "idVendor") d.idVendor = v;
  else if (f == "idProduct") d.idProduct = v;
  else if (f == "bcdDevice") d.bcdDevice = v;
  else if (f == "bDeviceClass") d.bDeviceClass = v;
  else if (f == "bDeviceSubClass") d.bDeviceSubClass = v;
  else if (f == "bDeviceProtocol") d.bDeviceProtocol = v;
  else if (f == "bInterfaceClass") i.bInterfaceClass = v;
  else if (f == "bInterfaceSubClass") i.bInterfaceSubClass = v;
  else if (f == "bInterfaceProtocol") i.bInterfaceProtocol = v;
  else if (f == "bInterfaceNumber") i.bInterfaceNumber = v;
  else FAIL("unknown field " << f);
}

const std::vector<std::string> kFields = {"idVendor",        "idProduct",       "bcdDevice",
                                          "bDeviceClass",    "bDeviceSubClass", "bDeviceProtocol",
                                          "bInterfaceClass", "bInterfaceSubClass", "bInterfaceProtocol",
                                          "bInterfaceNumber"};

bool wide(const std::string& f) { return f == "idVendor" || f == "idProduct" || f == "bcdDevice"; }

}  // namespace

TEST_CASE("device descriptor fields echo bytes") {
  auto d = DeviceDescriptor::parse(kDevice);
  CHECK(d.idVendor == 0x1234);
  CHECK(d.idProduct == 0x5678);
  CHECK(d.bcdUSB == 0x0200);
  CHECK(d.bcdDevice == 0x0100);
  CHECK(d.bMaxPacketSize0 == 0x40);
  CHECK(d.iProduct == 2);
  CHECK(d.serialize() == kDevice);
}

TEST_CASE("device descriptor rejects bad headers") {
  auto b = kDevice;
  b[0] = 0;
  CHECK_THROWS_AS(DeviceDescriptor::parse(b), MalformedDescriptor);
  b[0] = 17;
  CHECK_THROWS_AS(DeviceDescriptor::parse(b), MalformedDescriptor);
  CHECK_THROWS_AS(DeviceDescriptor::parse(std::span(kDevice).first(10)), MalformedDescriptor);
}

TEST_CASE("hid configuration blob") {
  auto c = ConfigurationDescriptor::parse(kHidConfig);
  CHECK(c.wTotalLength == 0x22);
  REQUIRE(c.interfaces.size() == 1);
  const auto& i = c.interfaces[0];
  CHECK(i.bInterfaceClass == 3);
  CHECK(i.bInterfaceProtocol == 1);
  REQUIRE(i.extra.size() == 1);
  CHECK(i.extra[0].type() == 0x21);
  REQUIRE(i.endpoints.size() == 1);
  CHECK(i.endpoints[0].is_in());
  CHECK(i.endpoints[0].number() == 1);
  CHECK(i.endpoints[0].transfer_type() == TransferType::Interrupt);
  CHECK(i.endpoints[0].wMaxPacketSize == 8);
  CHECK(i.endpoints[0].bInterval == 10);
  CHECK(c.serialize() == kHidConfig);
}

TEST_CASE("configuration errors") {
  auto b = kHidConfig;
  b[18] = 0;  // zero bLength on the class descriptor
  CHECK_THROWS_AS(ConfigurationDescriptor::parse(b), MalformedDescriptor);
  b = kHidConfig;
  b[27] = 9;  // endpoint runs past wTotalLength
  CHECK_THROWS_AS(ConfigurationDescriptor::parse(b), MalformedDescriptor);
  b = kHidConfig;
  b[2] = 0x40;  // wTotalLength past the input
  CHECK_THROWS_AS(ConfigurationDescriptor::parse(b), MalformedDescriptor);
  b = kHidConfig;
  b[4] = 2;  // two interfaces declared
  CHECK_THROWS_AS(ConfigurationDescriptor::parse(b), MalformedDescriptor);
  b = kHidConfig;
  b[2] = 8;
  CHECK_THROWS_AS(ConfigurationDescriptor::parse(b), MalformedDescriptor);
}

TEST_CASE("unknown descriptors are skipped by length and kept") {
  std::vector<uint8_t> b = {0x09, 0x02, 0x00, 0x00, 0x01, 0x01, 0x00, 0x80, 0x32,  //
                            0x05, 0x77, 0xaa, 0xbb, 0xcc,                           // unknown before interface
                            0x09, 0x04, 0x00, 0x00, 0x02, 0x08, 0x06, 0x50, 0x00,  //
                            0x07, 0x05, 0x81, 0x02, 0x40, 0x00, 0x00,              //
                            0x03, 0x30, 0x01,                                      // companion-like after endpoint
                            0x09, 0x05, 0x02, 0x02, 0x40, 0x00, 0x00, 0x11, 0x22}; // long endpoint
  b[2] = static_cast<uint8_t>(b.size());
  auto c = ConfigurationDescriptor::parse(b);
  CHECK(c.extra.size() == 1);
  REQUIRE(c.interfaces.size() == 1);
  REQUIRE(c.interfaces[0].endpoints.size() == 2);
  CHECK(c.interfaces[0].endpoints[0].extra.size() == 1);
  CHECK(c.interfaces[0].endpoints[0].transfer_type() == TransferType::Bulk);
  CHECK(!c.interfaces[0].endpoints[1].is_in());
  CHECK(c.interfaces[0].endpoints[1].tail == std::vector<uint8_t>{0x11, 0x22});
  CHECK(c.serialize() == b);
}

TEST_CASE("round trip on random configuration trees") {
  std::mt19937 rng(11);
  auto byte = [&] { return static_cast<uint8_t>(rng()); };
  for (int n = 0; n < 500; ++n) {
    ConfigurationDescriptor c;
    c.bConfigurationValue = byte();
    c.bmAttributes = byte();
    c.bMaxPower = byte();
    if (rng() % 3 == 0) c.extra.push_back({{3, 0x42, byte()}});
    const int ni = 1 + rng() % 3;
    for (int k = 0; k < ni; ++k) {
      InterfaceDescriptor i;
      i.bInterfaceNumber = static_cast<uint8_t>(k);
      i.bInterfaceClass = byte();
      i.bInterfaceSubClass = byte();
      i.bInterfaceProtocol = byte();
      if (rng() % 2) i.extra.push_back({{6, 0x24, byte(), byte(), byte(), byte()}});
      const int ne = rng() % 4;
      for (int e = 0; e < ne; ++e) {
        EndpointDescriptor ep;
        ep.bEndpointAddress = byte();
        ep.bmAttributes = byte();
        ep.wMaxPacketSize = static_cast<uint16_t>(rng());
        ep.bInterval = byte();
        if (rng() % 4 == 0) {
          ep.bLength = 9;
          ep.tail = {byte(), byte()};
        }
        if (rng() % 4 == 0) ep.extra.push_back({{2, 0x30}});
        i.endpoints.push_back(ep);
      }
      i.bNumEndpoints = static_cast<uint8_t>(ne);
      c.interfaces.push_back(i);
    }
    c.bNumInterfaces = static_cast<uint8_t>(ni);
    c.wTotalLength = static_cast<uint16_t>(c.serialize().size());
    const auto bytes = c.serialize();
    const auto p = ConfigurationDescriptor::parse(bytes);
    REQUIRE(p == c);
    REQUIRE(p.serialize() == bytes);
  }
}

TEST_CASE("parse_descriptor dispatches and offsets errors") {
  std::vector<uint8_t> img(64, 0xff);
  std::copy(kDevice.begin(), kDevice.end(), img.begin() + 4);
  CHECK(std::holds_alternative<DeviceDescriptor>(parse_descriptor(img, 4)));
  img[20] = 0;
  img[21] = 0;
  try {
    parse_descriptor(img, 20);
    FAIL("expected MalformedDescriptor");
  } catch (const MalformedDescriptor& e) {
    CHECK(e.offset() == 20);
  }
}

TEST_CASE("fixture descriptors parse") {
  for (auto t : {fwkit::Template::BenignHid, fwkit::Template::InjectorHid, fwkit::Template::StorageClaimingHid}) {
    fwkit::FixtureSpec s;
    s.kind = t;
    const auto fx = fwkit::generate_fixture(s);
    CAPTURE(fwkit::template_name(t));
    auto d = std::get<DeviceDescriptor>(parse_descriptor(fx.image, fx.manifest.descriptors.at("DEVICE_DESC")));
    auto c = std::get<ConfigurationDescriptor>(parse_descriptor(fx.image, fx.manifest.descriptors.at("CONFIG_DESC")));
    REQUIRE(c.interfaces.size() == 1);
    CHECK(c.interfaces[0].bInterfaceClass == class_code(fx.manifest.expected_class));
    CHECK(d.bLength == 18);
  }
}

TEST_CASE("form table") {
  CHECK(std::size(kAllForms) == 10);
  CHECK(form_flags(RuleForm::Device) == (kMatchVendor | kMatchProduct));
  CHECK(form_flags(RuleForm::DeviceVer) == (kMatchVendor | kMatchProduct | kMatchDevLo | kMatchDevHi));
  CHECK(form_flags(RuleForm::UsualDev) == (kMatchIntClass | kMatchIntSubClass | kMatchIntProtocol));
  for (auto f : kAllForms) CHECK(form_from_name(form_name(f)) == f);
  CHECK(!form_from_name("USB_NOPE"));
  CHECK_THROWS_AS(rule(RuleForm::Device, {{"vendor", 1}}), std::invalid_argument);
  CHECK_THROWS_AS(rule(RuleForm::Device, {{"vendor", 1}, {"product", 2}, {"class", 3}}), std::invalid_argument);
  CHECK_THROWS_AS(rule(RuleForm::DeviceInfo, {{"class", 0x100}, {"subclass", 0}, {"protocol", 0}}),
                  std::invalid_argument);
}

TEST_CASE("kernel matching examples") {
  auto d = DeviceDescriptor::parse(kDevice);
  InterfaceDescriptor kbd;
  kbd.bInterfaceClass = 3;
  kbd.bInterfaceSubClass = 1;
  kbd.bInterfaceProtocol = 1;

  CHECK(matches(rule(RuleForm::Device, {{"vendor", 0x1234}, {"product", 0x5678}}), d, nullptr));
  CHECK(!matches(rule(RuleForm::Device, {{"vendor", 0x1235}, {"product", 0x5678}}), d, nullptr));

  const auto info = rule(RuleForm::InterfaceInfo, {{"class", 3}, {"subclass", 1}, {"protocol", 1}});
  CHECK(matches(info, d, &kbd));
  auto other = d;
  other.idVendor = 0xdead;
  other.idProduct = 0xbeef;
  CHECK(matches(info, other, &kbd));
  CHECK(!matches(info, d, nullptr));

  // bcdDevice range is inclusive.
  auto ver = [&](uint32_t lo, uint32_t hi) {
    return rule(RuleForm::DeviceVer, {{"vendor", 0x1234}, {"product", 0x5678}, {"lo", lo}, {"hi", hi}});
  };
  CHECK(matches(ver(0x0100, 0x0100), d, nullptr));
  CHECK(!matches(ver(0x0101, 0x0200), d, nullptr));
  CHECK(!matches(ver(0x0000, 0x00ff), d, nullptr));

  // Vendor-specific devices hide interface fields from rules without a vendor.
  auto vs = d;
  vs.bDeviceClass = 0xff;
  CHECK(!matches(info, vs, &kbd));
  CHECK(matches(rule(RuleForm::VendorAndInterfaceInfo, {{"vendor", 0x1234}, {"class", 3}, {"subclass", 1}, {"protocol", 1}}),
                vs, &kbd));

  InterfaceDescriptor ms;
  ms.bInterfaceClass = 8;
  ms.bInterfaceSubClass = 6;
  ms.bInterfaceProtocol = 0x50;
  CHECK(matches(rule(RuleForm::UsualDev, {{"subclass", 6}, {"protocol", 0x50}}), d, &ms));
  CHECK(!matches(rule(RuleForm::UsualDev, {{"subclass", 6}, {"protocol", 0x50}}), d, &kbd));

  ms.bInterfaceNumber = 2;
  CHECK(matches(rule(RuleForm::DeviceInterfaceNumber, {{"vendor", 0x1234}, {"product", 0x5678}, {"number", 2}}), d, &ms));
  CHECK(!matches(rule(RuleForm::DeviceInterfaceNumber, {{"vendor", 0x1234}, {"product", 0x5678}, {"number", 1}}), d, &ms));
}

// Brute-force oracle: a rule matches iff every field its flags name agrees.
TEST_CASE("flag combinations against a field-by-field oracle") {
  std::mt19937 rng(5);
  for (auto f : kAllForms) {
    for (int n = 0; n < 400; ++n) {
      std::map<std::string, uint32_t> p;
      for (const auto& k : form_params(f)) p[k] = rng() % 3;  // small domain forces collisions
      if (p.count("hi")) p["hi"] = p["lo"] + rng() % 2;
      const auto r = rule(f, p);
      DeviceDescriptor d;
      InterfaceDescriptor i;
      for (const auto& fld : kFields) set_field(d, i, fld, rng() % 3);
      bool want = true;
      const auto& pr = r.params();
      auto eq = [&](const char* key, uint32_t v) { return !pr.count(key) || pr.at(key) == v; };
      want &= eq("vendor", d.idVendor) && eq("product", d.idProduct);
      if (pr.count("lo")) want &= pr.at("lo") <= d.bcdDevice && d.bcdDevice <= pr.at("hi");
      if (f == RuleForm::DeviceInfo) {
        want &= eq("class", d.bDeviceClass) && eq("subclass", d.bDeviceSubClass) && eq("protocol", d.bDeviceProtocol);
      } else {
        want &= eq("class", i.bInterfaceClass) && eq("subclass", i.bInterfaceSubClass) &&
                eq("protocol", i.bInterfaceProtocol) && eq("number", i.bInterfaceNumber);
      }
      if (f == RuleForm::UsualDev) want = want && i.bInterfaceClass == 8;
      CHECK(matches(r, d, &i) == want);
    }
  }
}

TEST_CASE("non-participating fields never change the outcome") {
  std::mt19937 rng(1234);
  int cases = 0;
  for (int n = 0; n < 10000; ++n) {
    const auto f = kAllForms[n % std::size(kAllForms)];
    std::map<std::string, uint32_t> p;
    for (const auto& k : form_params(f)) p[k] = (k == "vendor" || k == "product" || k == "lo" || k == "hi") ? rng() % 4 : rng() % 4;
    if (p.count("hi") && p["hi"] < p["lo"]) std::swap(p["hi"], p["lo"]);
    const auto r = rule(f, p);
    DeviceDescriptor d;
    InterfaceDescriptor i;
    for (const auto& fld : kFields) set_field(d, i, fld, rng() % 4);
    if (rng() % 8 == 0) d.bDeviceClass = 0xff;
    if (r.form == RuleForm::UsualDev && rng() % 2) i.bInterfaceClass = 8;
    const bool before = matches(r, d, &i);
    const auto part = participating_fields(r);
    for (const auto& fld : kFields) {
      if (part.count(fld)) continue;
      auto d2 = d;
      auto i2 = i;
      set_field(d2, i2, fld, wide(fld) ? rng() % 0x10000 : rng() % 0x100);
      CHECK(matches(r, d2, &i2) == before);
      ++cases;
    }
  }
  CHECK(cases > 10000);
}

TEST_CASE("rule database") {
  const auto db = RuleDb::load(FWSCOPE_DATA_DIR "/usbdb.rules");
  CHECK(db.rules.size() >= 40);
  std::set<RuleForm> seen;
  for (const auto& r : db.rules) seen.insert(r.form);
  CHECK(seen.size() == 10);
  CHECK(RuleDb::parse(db.str()).str() == db.str());

  CHECK_THROWS_AS(RuleDb::parse("USB_DEVICE vendor=0x1 product=0x2"), std::invalid_argument);
  CHECK_THROWS_AS(RuleDb::parse("USB_DEVICE vendor=0x1 product=zz driver=x"), std::invalid_argument);
  CHECK_THROWS_AS(RuleDb::parse("USB_THING driver=x"), std::invalid_argument);
  CHECK_THROWS_AS(RuleDb::parse("USB_DEVICE vendor=1 vendor=2 product=3 driver=x"), std::invalid_argument);
  CHECK_THROWS_AS(RuleDb::load("/nonexistent/usbdb.rules"), std::runtime_error);
  CHECK(RuleDb::parse("  # only a comment\n\n").rules.empty());
}

TEST_CASE("match_drivers reports every match") {
  const auto db = RuleDb::parse(
      "USB_DEVICE vendor=0x1234 product=0x5678 driver=vendor-drv\n"
      "USB_INTERFACE_INFO class=3 subclass=1 protocol=1 driver=usbkbd\n"
      "USB_INTERFACE_INFO class=3 subclass=1 protocol=2 driver=usbmouse\n"
      "USUAL_DEV subclass=6 protocol=0x50 driver=usb-storage\n");
  auto d = DeviceDescriptor::parse(kDevice);
  auto c = ConfigurationDescriptor::parse(kHidConfig);
  const auto m = match_drivers(db, d, c.interfaces);
  REQUIRE(m.size() == 2);
  CHECK(m[0] == DriverMatch{"USB_DEVICE", "vendor-drv", std::nullopt});
  CHECK(m[1] == DriverMatch{"USB_INTERFACE_INFO", "usbkbd", uint8_t{0}});
  d.idVendor = 1;
  CHECK(match_drivers(db, d, {}).empty());
}

TEST_CASE("claimed model and comparison") {
  auto d = DeviceDescriptor::parse(kDevice);
  ConfigurationDescriptor ms;
  ms.bNumInterfaces = 1;
  InterfaceDescriptor i;
  i.bInterfaceClass = 8;
  i.bInterfaceSubClass = 6;
  i.bInterfaceProtocol = 0x50;
  ms.interfaces.push_back(i);
  const RuleDb db = RuleDb::parse("USUAL_DEV subclass=6 protocol=0x50 driver=usb-storage\n");

  SUBCASE("static mass storage is consistent") {
    auto m = build_claimed_model(d, ms, {{"mass-storage", "MASS_STORAGE_CBW", 0x1000, true, "ab"}}, db);
    CHECK(m.drivers.size() == 1);
    auto v = compare_models(m, "mass-storage");
    CHECK(!v.anomalous);
    CHECK(v.reasons.empty());
  }
  SUBCASE("reached hid report on mass storage is anomalous") {
    auto m = build_claimed_model(d, ms, {{"hid", "HID_REPORT", 0x0bf4, true, "digest"}}, db);
    auto v = compare_models(m, "mass-storage");
    CHECK(v.anomalous);
    REQUIRE(v.reasons.size() == 1);
    CHECK(v.reasons[0].usb_class == 3);
    CHECK(v.reasons[0].target == uint16_t{0x0bf4});
    CHECK(v.reasons[0].path_digest == "digest");
    CHECK(v.reasons[0].detail.find("0x0bf4") != std::string::npos);
  }
  SUBCASE("unreached evidence does not count") {
    auto m = build_claimed_model(d, ms, {{"hid", "HID_REPORT", 0x0bf4, false, ""}}, db);
    CHECK(!compare_models(m, "mass-storage").anomalous);
  }
  SUBCASE("static interfaces outside the expected set are noted, not counted") {
    auto m = build_claimed_model(d, ms, {}, db);
    auto v = compare_models(m, "hid");
    CHECK(!v.anomalous);
    CHECK(!v.notes.empty());
  }
  SUBCASE("unknown and composite") {
    auto m = build_claimed_model(d, ms, {{"hid", "HID_REPORT", 0x0bf4, true, ""}}, db);
    CHECK(!compare_models(m, "unknown").anomalous);
    CHECK(!compare_models(m, "composite").anomalous);
    CHECK_THROWS_AS(compare_models(m, "toaster"), std::invalid_argument);
  }
}
