#include "doctest.h"

#include <random>

#include "fwscope/fwkit.hpp"
#include "fwscope/machine.hpp"

using namespace fwscope;
using namespace fwscope::machine;

namespace {

ConcreteState run_src(const std::string& src, ConcreteState st = ConcreteState::reset()) {
  const auto a = fwkit::assemble(src + "\nhalt: SJMP halt");
  run(st, a.image, 10000, a.at("halt"));
  return st;
}

int to_signed(uint8_t v) { return v < 128 ? v : v - 256; }

std::string bcd_src(const char* op, uint8_t a, uint8_t b, bool carry_in) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%s\nMOV A,#0x%02X\n%s A,#0x%02X", carry_in ? "SETB C" : "CLR C", a, op, b);
  return buf;
}

}  // namespace

TEST_CASE("reset state") {
  auto s = ConcreteState::reset();
  CHECK(s.pc == 0);
  CHECK(s.sp() == 0x07);
  CHECK(s.acc() == 0);
  CHECK(s.dptr() == 0);
  CHECK(s.xram.empty());
}

TEST_CASE("register banks and direct addressing") {
  auto s = run_src("MOV R0,#1\nMOV PSW,#0x18\nMOV R0,#2\nMOV 0x90,#0x55\nMOV 0x7F,#9");
  CHECK(s.iram[0x00] == 1);
  CHECK(s.iram[0x18] == 2);
  CHECK(s.reg(0) == 2);
  CHECK(s.sfr_get(0x90) == 0x55);
  CHECK(s.iram[0x7F] == 9);
}

TEST_CASE("indirect IRAM reaches the upper 128 bytes, direct reaches SFRs") {
  auto s = run_src("MOV R0,#0x90\nMOV @R0,#0x11\nMOV 0x90,#0x22");
  CHECK(s.iram[0x90] == 0x11);
  CHECK(s.sfr_get(0x90) == 0x22);
}

TEST_CASE("bit addressing") {
  auto s = run_src("SETB 0x20.0\nSETB 0x2F.7\nSETB ACC.3\nCPL 0x20.1");
  CHECK(s.iram[0x20] == 0x03);
  CHECK(s.iram[0x2F] == 0x80);
  CHECK(s.acc() == 0x08);
  CHECK(s.bit_read(0x7F));
  CHECK(bit_location(0xE3).in_sfr);
  CHECK(bit_location(0xE3).byte == 0xE0);
}

TEST_CASE("ADD and ADDC flags against signed and unsigned arithmetic") {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 600; ++i) {
    const auto a = static_cast<uint8_t>(rng());
    const auto b = static_cast<uint8_t>(rng());
    const bool cin = rng() & 1;
    const bool addc = rng() & 1;
    auto s = run_src(bcd_src(addc ? "ADDC" : "ADD", a, b, cin));
    const int c = addc && cin ? 1 : 0;
    const int sum = a + b + c;
    const int ssum = to_signed(a) + to_signed(b) + c;
    CHECK(s.acc() == static_cast<uint8_t>(sum));
    CHECK(((s.psw() & psw::CY) != 0) == (sum > 255));
    CHECK(((s.psw() & psw::OV) != 0) == (ssum < -128 || ssum > 127));
    CHECK(((s.psw() & psw::AC) != 0) == ((a & 15) + (b & 15) + c > 15));
    CHECK((s.psw() & psw::P) == parity8(s.acc()));
  }
}

TEST_CASE("SUBB flags against signed and unsigned arithmetic") {
  std::mt19937_64 rng(6);
  for (int i = 0; i < 600; ++i) {
    const auto a = static_cast<uint8_t>(rng());
    const auto b = static_cast<uint8_t>(rng());
    const bool cin = rng() & 1;
    auto s = run_src(bcd_src("SUBB", a, b, cin));
    const int c = cin ? 1 : 0;
    const int diff = a - b - c;
    const int sdiff = to_signed(a) - to_signed(b) - c;
    CHECK(s.acc() == static_cast<uint8_t>(diff));
    CHECK(((s.psw() & psw::CY) != 0) == (diff < 0));
    CHECK(((s.psw() & psw::OV) != 0) == (sdiff < -128 || sdiff > 127));
    CHECK(((s.psw() & psw::AC) != 0) == ((a & 15) < (b & 15) + c));
  }
}

TEST_CASE("DA after ADD gives the decimal sum") {
  for (int x = 0; x < 100; x += 7)
    for (int y = 0; y < 100; y += 3) {
      const auto bx = static_cast<uint8_t>((x / 10) << 4 | x % 10);
      const auto by = static_cast<uint8_t>((y / 10) << 4 | y % 10);
      auto s = run_src(bcd_src("ADD", bx, by, false) + "\nDA A");
      const int sum = x + y;
      const int lo = sum % 100;
      CHECK(s.acc() == ((lo / 10) << 4 | lo % 10));
      CHECK(((s.psw() & psw::CY) != 0) == (sum >= 100));
    }
}

TEST_CASE("MUL and DIV") {
  std::mt19937_64 rng(8);
  for (int i = 0; i < 300; ++i) {
    const auto a = static_cast<uint8_t>(rng());
    const auto b = static_cast<uint8_t>(rng());
    char src[96];
    std::snprintf(src, sizeof src, "MOV A,#%u\nMOV B,#%u\nMUL AB", a, b);
    auto m = run_src(src);
    CHECK((m.sfr_get(sfr::B) << 8 | m.acc()) == a * b);
    CHECK(((m.psw() & psw::OV) != 0) == (a * b > 255));
    CHECK((m.psw() & psw::CY) == 0);
    std::snprintf(src, sizeof src, "MOV A,#%u\nMOV B,#%u\nDIV AB", a, b);
    auto d = run_src(src);
    CHECK((d.psw() & psw::CY) == 0);
    if (b == 0) {
      CHECK((d.psw() & psw::OV) != 0);
    } else {
      CHECK(d.acc() == a / b);
      CHECK(d.sfr_get(sfr::B) == a % b);
      CHECK((d.psw() & psw::OV) == 0);
    }
  }
}

TEST_CASE("rotates and swaps") {
  auto s = run_src("MOV A,#0x81\nRL A\nMOV 0x30,A\nMOV A,#0x81\nRR A\nMOV 0x31,A\nMOV A,#0x12\nSWAP A\n"
                   "MOV 0x32,A\nSETB C\nMOV A,#0x80\nRLC A\nMOV 0x33,A");
  CHECK(s.iram[0x30] == 0x03);
  CHECK(s.iram[0x31] == 0xC0);
  CHECK(s.iram[0x32] == 0x21);
  CHECK(s.iram[0x33] == 0x01);
  CHECK((s.psw() & psw::CY) != 0);
}

TEST_CASE("stack, calls and returns") {
  auto s = run_src(R"(
        MOV SP,#0x40
        MOV A,#0x5A
        PUSH ACC
        LCALL sub
        POP B
        SJMP done
sub:    MOV 0x30,SP
        RET
done:   NOP)");
  CHECK(s.iram[0x30] == 0x43);
  CHECK(s.sfr_get(sfr::B) == 0x5A);
  CHECK(s.sp() == 0x40);
}

TEST_CASE("stack overflow is an error") {
  const auto a = fwkit::assemble("MOV SP,#0xFF\nPUSH ACC");
  auto s = ConcreteState::reset();
  try {
    run(s, a.image, 10);
    FAIL("expected overflow");
  } catch (const MachineError& e) {
    CHECK(e.kind() == MachineErrorKind::StackOverflow);
    CHECK(e.pc() == 3);
  }
}

TEST_CASE("illegal and truncated instructions") {
  std::vector<uint8_t> img{0xA5};
  auto s = ConcreteState::reset();
  CHECK_THROWS_AS(step(s, img), MachineError);
  std::vector<uint8_t> cut{0x02, 0x01};
  auto t = ConcreteState::reset();
  try {
    step(t, cut);
    FAIL("expected error");
  } catch (const MachineError& e) {
    CHECK(e.kind() == MachineErrorKind::TruncatedInstruction);
  }
}

TEST_CASE("MOVX, MOVC and the DPTR") {
  auto s = run_src(R"(
        MOV DPTR,#table
        MOV A,#2
        MOVC A,@A+DPTR
        MOV DPTR,#0x7F00
        MOVX @DPTR,A
        INC DPTR
        MOV A,#0x33
        MOVX @DPTR,A
        MOV R0,#0x10
        MOV P2,#0x7F
        MOVX A,@R0
        SJMP done
table:  .db 0x10,0x20,0x30
done:   NOP)");
  CHECK(s.xram_read(0x7F00) == 0x30);
  CHECK(s.xram_read(0x7F01) == 0x33);
  CHECK(s.dptr() == 0x7F01);
  CHECK(s.acc() == s.xram_read(0x0010));
}

TEST_CASE("conditional branches") {
  auto s = run_src(R"(
        MOV R2,#3
        MOV 0x30,#0
loop:   INC 0x30
        DJNZ R2,loop
        MOV A,#5
        CJNE A,#6,ne
        MOV 0x31,#1
ne:     JC less
        MOV 0x32,#1
less:   NOP)");
  CHECK(s.iram[0x30] == 3);
  CHECK(s.iram[0x31] == 0);
  CHECK(s.iram[0x32] == 0);
}

TEST_CASE("run honours stop address and step budget") {
  const auto a = fwkit::assemble("NOP\nNOP\nx: NOP\nSJMP x");
  auto s = ConcreteState::reset();
  CHECK(run(s, a.image, 100, 2) == 2);
  CHECK(s.pc == 2);
  CHECK(run(s, a.image, 7) == 7);
  CHECK(s.steps == 9);
  auto t = step_concrete(ConcreteState::reset(), a.image);
  CHECK(t.pc == 1);
}

TEST_CASE("code reads past the image are zero") {
  std::vector<uint8_t> img{1, 2};
  CHECK(code_read(img, 1) == 2);
  CHECK(code_read(img, 2) == 0);
  CHECK(code_read(img, 0x10001) == 2);
}

TEST_CASE("interrupt sources") {
  CHECK(vector_address(InterruptSource::External0) == 0x03);
  CHECK(vector_address(InterruptSource::Timer0) == 0x0B);
  CHECK(vector_address(InterruptSource::Serial) == 0x23);
  CHECK(vector_address(InterruptSource::Timer2) == 0x2B);
  CHECK(ie_enable_bit(InterruptSource::Timer2) == 0x20);
  CHECK(interrupt_enabled(0x81, InterruptSource::External0));
  CHECK_FALSE(interrupt_enabled(0x01, InterruptSource::External0));
  CHECK_FALSE(interrupt_enabled(0x80, InterruptSource::External0));
  for (auto s : kInterruptSources) CHECK(interrupt_from_name(interrupt_name(s)) == s);
  CHECK_FALSE(interrupt_from_name("Timer9"));
}

TEST_CASE("ISR discovery") {
  std::vector<uint8_t> img(0x40, 0x00);
  // External0: LJMP 0x0123; Timer0: RETI; External1: SJMP; Timer1: plain code.
  img[0x03] = 0x02;
  img[0x04] = 0x01;
  img[0x05] = 0x23;
  img[0x0B] = 0x32;
  img[0x13] = 0x80;
  img[0x14] = 0x10;
  img[0x1B] = 0xE4;
  img[0x23] = 0x32;
  img[0x2B] = 0xA5;
  auto m = discover_isrs(img);
  CHECK(m.at(InterruptSource::External0) == 0x0123);
  CHECK(m.count(InterruptSource::Timer0) == 0);
  CHECK(m.at(InterruptSource::External1) == 0x13 + 2 + 0x10);
  CHECK(m.at(InterruptSource::Timer1) == 0x1B);
  CHECK(m.count(InterruptSource::Serial) == 0);
  CHECK(m.count(InterruptSource::Timer2) == 0);
  CHECK(discover_isrs(std::vector<uint8_t>{0x80, 0xFE}).empty());
}

TEST_CASE("dump lists written XRAM in address order") {
  auto s = ConcreteState::reset();
  s.xram_write(0x20, 1);
  s.xram_write(0x10, 2);
  const auto d = s.dump();
  CHECK(d.find("SP=07") != std::string::npos);
  CHECK(d.find("XRAM 0010: 02") < d.find("XRAM 0020: 01"));
}
