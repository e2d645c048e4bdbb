#include "doctest.h"

#include <random>

#include "fwscope/fwkit.hpp"
#include "fwscope/machine.hpp"
#include "fwscope/usbstatic.hpp"

using namespace fwscope;
using namespace fwscope::usbstatic;

namespace {

const std::vector<uint8_t> kDevice = {0x12, 0x01, 0x00, 0x02, 0x00, 0x00, 0x00, 0x40, 0x47,
                                      0x05, 0x02, 0x10, 0x00, 0x01, 0x01, 0x02, 0x00, 0x01};
const std::vector<uint8_t> kConfig = {0x09, 0x02, 0x22, 0x00, 0x01, 0x01, 0x00, 0xa0, 0x32};
const std::vector<uint8_t> kReport = {0x05, 0x01, 0x09, 0x06, 0xa1, 0x01, 0x05, 0x07, 0xc0};

fwkit::FixtureSpec spec(fwkit::Template t) {
  fwkit::FixtureSpec s;
  s.kind = t;
  return s;
}

void plant(std::vector<uint8_t>& img, uint16_t at, const std::vector<uint8_t>& bytes) {
  std::copy(bytes.begin(), bytes.end(), img.begin() + at);
}

std::map<std::string, std::vector<uint16_t>> by_pattern(const std::vector<DescriptorHit>& hits) {
  std::map<std::string, std::vector<uint16_t>> out;
  for (const auto& h : hits) out[h.pattern].push_back(h.address);
  return out;
}

// Every position tested independently, then overlaps removed left to right.
std::vector<std::pair<uint16_t, std::string>> brute_scan(const std::vector<uint8_t>& img,
                                                        const std::vector<SignaturePattern>& sigs) {
  std::vector<std::pair<uint16_t, std::string>> out;
  for (const auto& p : sigs) {
    std::vector<size_t> all;
    for (size_t i = 0; i + p.bytes.size() <= img.size(); ++i) {
      bool ok = true;
      for (size_t j = 0; j < p.bytes.size(); ++j)
        ok = ok && (p.bytes[j] == -1 || p.bytes[j] == img[i + j]);
      if (ok) all.push_back(i);
    }
    size_t next = 0;
    for (auto i : all) {
      if (i < next) continue;
      out.emplace_back(static_cast<uint16_t>(i), p.name);
      next = i + p.bytes.size();
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

const char* kPropagationTrace =
    "        MOV DPTR,#0x276c\n"
    "l2:     MOVC A,@A+DPTR\n"
    "l3:     MOV R4,A\n"
    "l4:     MOV DPTR,#0xf1dc\n"
    "l5:     MOVX @DPTR,A\n"
    "halt:   SJMP halt\n";

}  // namespace

TEST_CASE("signature patterns parse and print") {
  auto p = SignaturePattern::parse("X", SignatureRole::Device, "*", "12 01 ?? ff");
  CHECK(p.bytes == std::vector<int>{0x12, 0x01, -1, 0xff});
  CHECK(p.hex() == "12 01 ?? FF");
  CHECK_THROWS_AS(SignaturePattern::parse("X", SignatureRole::Device, "*", "?? 01"), std::invalid_argument);
  CHECK_THROWS_AS(SignaturePattern::parse("X", SignatureRole::Device, "*", "1"), std::invalid_argument);
  CHECK_THROWS_AS(SignaturePattern::parse("X", SignatureRole::Device, "*", ""), std::invalid_argument);

  auto sigs = parse_signatures("# comment\nA device * 12 01\n\nB function hid 05 01 # trailing\n");
  REQUIRE(sigs.size() == 2);
  CHECK(sigs[1].role == SignatureRole::Function);
  CHECK(sigs[1].usb_class == "hid");
  CHECK_THROWS(parse_signatures("A device * 12\nA config * 09\n"));
  CHECK_THROWS(parse_signatures("A endpoint * 12\n"));
  CHECK_THROWS(parse_signatures("A device\n"));
}

TEST_CASE("shipped signature file matches the built-in set") {
  auto sigs = load_signatures(std::string(FWSCOPE_DATA_DIR) + "/signatures.txt");
  const auto& def = default_signatures();
  REQUIRE(sigs.size() == def.size());
  for (size_t i = 0; i < sigs.size(); ++i) {
    CHECK(sigs[i].name == def[i].name);
    CHECK(sigs[i].bytes == def[i].bytes);
    CHECK(sigs[i].role == def[i].role);
    CHECK(sigs[i].usb_class == def[i].usb_class);
  }
}

TEST_CASE("planted descriptors are found at their offsets") {
  SUBCASE("storage layout") {
    std::vector<uint8_t> img(0x4000, 0);
    plant(img, 0x302b, kDevice);
    plant(img, 0x303d, kConfig);
    plant(img, 0x3084, kReport);
    auto m = by_pattern(scan_signatures(img));
    CHECK(m["DEVICE_DESC"] == std::vector<uint16_t>{0x302b});
    CHECK(m["CONFIG_DESC"] == std::vector<uint16_t>{0x303d});
    CHECK(m["HID_REPORT"] == std::vector<uint16_t>{0x3084});
    CHECK(m.size() == 3);
  }
  SUBCASE("hid layout") {
    std::vector<uint8_t> img(0x1000, 0);
    plant(img, 0xb8a, kDevice);
    plant(img, 0xb9c, kConfig);
    plant(img, 0xbbe, kReport);
    auto m = by_pattern(scan_signatures(img));
    CHECK(m["DEVICE_DESC"] == std::vector<uint16_t>{0xb8a});
    CHECK(m["CONFIG_DESC"] == std::vector<uint16_t>{0xb9c});
    CHECK(m["HID_REPORT"] == std::vector<uint16_t>{0xbbe});
  }
  CHECK(scan_signatures({}).empty());
}

TEST_CASE("scanner agrees with a brute-force oracle on random images") {
  std::mt19937 rng(7);
  const auto& sigs = default_signatures();
  // A small alphabet keeps wildcard and overlapping matches frequent.
  const std::vector<uint8_t> alpha = {0x00, 0x01, 0x02, 0x05, 0x06, 0x09, 0x12, 0x42, 0x43, 0x53, 0x55, 0xa1};
  for (int n = 0; n < 100; ++n) {
    std::vector<uint8_t> img(512 + rng() % 1024);
    for (auto& b : img) b = alpha[rng() % alpha.size()];
    for (int k = 0; k < 6; ++k) {
      const auto& src = (k % 3 == 0) ? kDevice : (k % 3 == 1) ? kConfig : kReport;
      plant(img, static_cast<uint16_t>(rng() % (img.size() - src.size())), src);
    }
    std::vector<std::pair<uint16_t, std::string>> got;
    for (const auto& h : scan_signatures(img, sigs)) got.emplace_back(h.address, h.pattern);
    std::sort(got.begin(), got.end());
    REQUIRE(got == brute_scan(img, sigs));
  }
}

TEST_CASE("xrefs need a MOVC before DPTR changes") {
  std::vector<uint8_t> img(0x3100, 0);
  auto a = fwkit::assemble(
      ".org 0x0bf1\n"
      "MOV DPTR,#0x30c3\n"
      "MOVC A,@A+DPTR\n"
      "MOV DPTR,#0x3000\n"
      "INC DPTR\n"
      "MOVC A,@A+DPTR\n"
      "MOV DPTR,#0x3010\n"
      "MOVX A,@DPTR\n"
      "MOV DPTR,#0x3020\n"
      "SJMP next\n"
      "next: MOVC A,@A+DPTR\n");
  std::copy(a.image.begin() + 0xbf1, a.image.end(), img.begin() + 0xbf1);
  CHECK(find_xrefs(img, 0x30c3) == std::vector<uint16_t>{0xbf1});
  CHECK(find_xrefs(img, 0x3000).empty());
  CHECK(find_xrefs(img, 0x3010).empty());
  CHECK(find_xrefs(img, 0x3020).empty());
  CHECK(find_xrefs(img, 0x1234).empty());
}

TEST_CASE("def-use models") {
  auto d = describe(isa::decode(std::vector<uint8_t>{0x90, 0x27, 0x6c}, 0));
  CHECK(d.category == InsnCategory::Seed);
  CHECK(d.constant == 0x276c);
  CHECK(std::count(d.defs.begin(), d.defs.end(), sfr_key(0x82)) == 1);

  d = describe(isa::decode(std::vector<uint8_t>{0xf0}, 0));  // MOVX @DPTR,A
  CHECK(d.category == InsnCategory::IndStore);
  CHECK(d.addr == kDptrKey);
  CHECK(d.value == acc_key());
  CHECK(d.defs.empty());

  d = describe(isa::decode(std::vector<uint8_t>{0x85, 0x30, 0x82}, 0));  // MOV DPL,0x30
  CHECK(d.category == InsnCategory::Copy);
  CHECK(std::count(d.defs.begin(), d.defs.end(), kDptrKey) == 1);

  d = describe(isa::decode(std::vector<uint8_t>{0x05, 0x30}, 0));  // INC 0x30
  CHECK(d.category == InsnCategory::Arith);
  CHECK(d.dst == iram_key(0x30));

  d = describe(isa::decode(std::vector<uint8_t>{0x12, 0x01, 0x00}, 0));
  CHECK(d.kills_all);
  CHECK(loc_key_name(kDptrKey) == "DPTR");
  CHECK(loc_key_name(iram_key(0x30)) == "IRAM[0x30]");
}

TEST_CASE("reaching definitions join at merges and stop at calls") {
  auto a = fwkit::assemble(
      "      JZ other\n"
      "d1:   MOV DPTR,#0x1000\n"
      "      SJMP join\n"
      "other: MOV DPTR,#0x2000\n"
      "join: MOVX @DPTR,A\n"
      "      LCALL sub\n"
      "st2:  MOVX @DPTR,A\n"
      "h:    SJMP h\n"
      "sub:  RET\n");
  CodeGraph g = CodeGraph::build(a.image);
  ReachingDefs rd(g);
  CHECK(rd.reaching(a.at("join"), kDptrKey) == std::set<uint16_t>{a.at("d1"), a.at("other")});
  CHECK(rd.reaching(a.at("st2"), kDptrKey).empty());
  CHECK(g.entries.count(a.at("sub")));
  CHECK(rd.uses_of(a.at("d1"), kDptrKey) == std::vector<uint16_t>{a.at("join")});
}

TEST_CASE("constant propagation reproduces the five-instruction trace") {
  auto a = fwkit::assemble(kPropagationTrace);
  PropMap m = prop_const_mem(a.image);
  const uint16_t l1 = 0, l2 = a.at("l2"), l3 = a.at("l3"), l4 = a.at("l4"), l5 = a.at("l5");
  CHECK(m.get(l1, PropRole::Dst).str() == "(0x276c,⊥)");
  CHECK(m.get(l2, PropRole::Src).str() == "(⊥,0x276c)");
  CHECK(m.get(l2, PropRole::Dst).str() == "(⊥,0x276c)");
  CHECK(m.get(l3, PropRole::Src).str() == "(⊥,0x276c)");
  CHECK(m.get(l3, PropRole::Dst).str() == "(⊥,0x276c)");
  CHECK(m.get(l4, PropRole::Dst).str() == "(0xf1dc,⊥)");
  CHECK(m.get(l5, PropRole::Src).str() == "(⊥,0x276c)");
  CHECK(m.get(l5, PropRole::Dst).str() == "(⊥,0xf1dc)");
  CHECK(m.stores() == std::vector<uint16_t>{l5});
}

TEST_CASE("propagation visits each site at most twice") {
  auto a = fwkit::assemble(
      "      JZ other\n"
      "      MOV DPTR,#0x1000\n"
      "      SJMP join\n"
      "other: MOV DPTR,#0x2000\n"
      "join: MOV A,#5\n"
      "st:   MOVX @DPTR,A\n"
      "h:    SJMP h\n");
  PropMap m = prop_const_mem(a.image);
  CHECK(m.visits(a.at("st")) == 2);
  CHECK(m.get(a.at("st"), PropRole::Dst).str() == "(⊥,0x2000)");
  CHECK_FALSE(m.get(a.at("st"), PropRole::Src).defined());
}

TEST_CASE("no seeds leaves every tuple undefined") {
  auto a = fwkit::assemble("MOV A,0x40\nMOVX @DPTR,A\nINC DPTR\nMOVX @DPTR,A\nh: SJMP h\n");
  PropMap m = prop_const_mem(a.image);
  for (const auto& [s, site] : m.sites()) {
    CHECK_FALSE(site.src.defined());
    CHECK_FALSE(site.dst.defined());
  }
  CHECK(m.stores().size() == 2);
}

TEST_CASE("non-register destinations are not seeded") {
  auto a = fwkit::assemble("MOV 0x40,#0x12\nMOV A,0x40\nMOV DPTR,#0x7f00\nMOVX @DPTR,A\nh: SJMP h\n");
  PropMap m = prop_const_mem(a.image);
  CHECK_FALSE(m.get(0, PropRole::Dst).defined());
  CHECK_FALSE(m.get(8, PropRole::Src).defined());
  // Once the location counts as a register the constant flows through.
  auto all_reg = [](Region r, uint32_t) { return r == Region::Sfr || r == Region::Iram; };
  PropMap m2 = prop_const_mem(a.image, all_reg);
  CHECK(m2.get(8, PropRole::Src).str() == "(0x12,⊥)");
}

TEST_CASE("tracked store addresses agree with concrete execution") {
  std::mt19937 rng(11);
  const std::vector<uint16_t> bases = {0x7f00, 0x7f40, 0x1000, 0xf1dc};
  for (int n = 0; n < 200; ++n) {
    std::string src;
    char buf[64];
    const int len = 4 + static_cast<int>(rng() % 20);
    for (int i = 0; i < len; ++i) {
      switch (rng() % 8) {
        case 0:
        case 1: std::snprintf(buf, sizeof buf, "MOV DPTR,#0x%04x\n", bases[rng() % bases.size()]); break;
        case 2: std::snprintf(buf, sizeof buf, "MOV A,#0x%02x\n", static_cast<unsigned>(rng() & 0xff)); break;
        case 3: std::snprintf(buf, sizeof buf, "MOV R%u,A\n", static_cast<unsigned>(rng() % 8)); break;
        case 4: std::snprintf(buf, sizeof buf, "MOV A,R%u\n", static_cast<unsigned>(rng() % 8)); break;
        case 5: std::snprintf(buf, sizeof buf, "INC A\n"); break;
        default: std::snprintf(buf, sizeof buf, "MOVX @DPTR,A\n"); break;
      }
      src += buf;
    }
    src += "halt: SJMP halt\n";
    auto a = fwkit::assemble(src);
    PropMap m = prop_const_mem(a.image);
    auto st = machine::ConcreteState::reset();
    while (st.pc != a.at("halt")) {
      const auto in = isa::decode(a.image, st.pc);
      if (in.opcode() == 0xf0) {
        const auto dst = m.get(st.pc, PropRole::Dst);
        const auto s = m.get(st.pc, PropRole::Src);
        if (dst.tracked) REQUIRE(*dst.tracked == st.dptr());
        if (s.value) REQUIRE(*s.value == st.acc());
      }
      machine::step(st, a.image);
    }
  }
}

TEST_CASE("EP0 inference on the storage fixture") {
  auto fx = fwkit::generate_fixture(spec(fwkit::Template::StorageClaimingHid));
  auto rep = analyze(fx.image, "hid");
  REQUIRE(rep.ep0);
  CHECK(rep.ep0->ep0 == std::set<uint16_t>{*fx.manifest.ep0});
  CHECK(rep.ep0->targets == std::vector<uint16_t>{*fx.manifest.descriptor_copy_site});
  for (const auto& h : rep.hits) {
    INFO(h.pattern);
    CHECK(h.address == fx.manifest.descriptors.at(h.pattern));
    if (fx.manifest.xrefs.count(h.pattern)) CHECK(h.xrefs == fx.manifest.xrefs.at(h.pattern));
  }
  CHECK(rep.hits.size() == fx.manifest.descriptors.size());
  // Claiming mass storage finds no report copy.
  auto ms = analyze(fx.image, "mass-storage");
  REQUIRE(ms.ep0);
  CHECK(ms.ep0->targets.empty());
}

TEST_CASE("EP0 inference on the HID fixtures") {
  for (auto t : {fwkit::Template::BenignHid, fwkit::Template::InjectorHid}) {
    auto fx = fwkit::generate_fixture(spec(t));
    auto rep = analyze(fx.image, "hid");
    REQUIRE(rep.ep0);
    CHECK(rep.ep0->ep0 == std::set<uint16_t>{*fx.manifest.ep0});
    CHECK(rep.ep0->targets == std::vector<uint16_t>{*fx.manifest.descriptor_copy_site});
    CHECK(rep.diagnostics.empty());
  }
}

TEST_CASE("split descriptor buffers leave no EP0 candidate") {
  auto sp = spec(fwkit::Template::BenignHid);
  sp.split_ep0 = true;
  auto fx = fwkit::generate_fixture(sp);
  auto rep = analyze(fx.image, "hid");
  REQUIRE(rep.ep0);
  CHECK(rep.ep0->ep0.empty());
  CHECK(rep.ep0->targets.empty());
  CHECK(rep.diagnostics.size() == 1);
}

TEST_CASE("images without descriptors report why") {
  auto fx = fwkit::generate_fixture(spec(fwkit::Template::Straightline));
  auto rep = analyze(fx.image);
  CHECK_FALSE(rep.ep0);
  REQUIRE(rep.diagnostics.size() == 1);
  CHECK(rep.diagnostics[0] == "no device descriptor found");
  CHECK_THROWS_AS(find_devspec_to_ep0({}, PropMap{}, "hid"), NoDescriptors);
}
