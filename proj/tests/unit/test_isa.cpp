#include "doctest.h"
#include "fwscope/isa.hpp"

#include <random>
#include <set>
#include <sstream>

using namespace fwscope::isa;

namespace {

// Opcode map transcribed row by row from the MCS-51 datasheet, written
// independently of the decoder table: "MNEMONIC/length" per column.
const char* const kDatasheetRows[16] = {
    "NOP/1 AJMP/2 LJMP/3 RR/1 INC/1 INC/2 INC/1 INC/1 INC/1 INC/1 INC/1 INC/1 INC/1 INC/1 INC/1 INC/1",
    "JBC/3 ACALL/2 LCALL/3 RRC/1 DEC/1 DEC/2 DEC/1 DEC/1 DEC/1 DEC/1 DEC/1 DEC/1 DEC/1 DEC/1 DEC/1 DEC/1",
    "JB/3 AJMP/2 RET/1 RL/1 ADD/2 ADD/2 ADD/1 ADD/1 ADD/1 ADD/1 ADD/1 ADD/1 ADD/1 ADD/1 ADD/1 ADD/1",
    "JNB/3 ACALL/2 RETI/1 RLC/1 ADDC/2 ADDC/2 ADDC/1 ADDC/1 ADDC/1 ADDC/1 ADDC/1 ADDC/1 ADDC/1 ADDC/1 ADDC/1 ADDC/1",
    "JC/2 AJMP/2 ORL/2 ORL/3 ORL/2 ORL/2 ORL/1 ORL/1 ORL/1 ORL/1 ORL/1 ORL/1 ORL/1 ORL/1 ORL/1 ORL/1",
    "JNC/2 ACALL/2 ANL/2 ANL/3 ANL/2 ANL/2 ANL/1 ANL/1 ANL/1 ANL/1 ANL/1 ANL/1 ANL/1 ANL/1 ANL/1 ANL/1",
    "JZ/2 AJMP/2 XRL/2 XRL/3 XRL/2 XRL/2 XRL/1 XRL/1 XRL/1 XRL/1 XRL/1 XRL/1 XRL/1 XRL/1 XRL/1 XRL/1",
    "JNZ/2 ACALL/2 ORL/2 JMP/1 MOV/2 MOV/3 MOV/2 MOV/2 MOV/2 MOV/2 MOV/2 MOV/2 MOV/2 MOV/2 MOV/2 MOV/2",
    "SJMP/2 AJMP/2 ANL/2 MOVC/1 DIV/1 MOV/3 MOV/2 MOV/2 MOV/2 MOV/2 MOV/2 MOV/2 MOV/2 MOV/2 MOV/2 MOV/2",
    "MOV/3 ACALL/2 MOV/2 MOVC/1 SUBB/2 SUBB/2 SUBB/1 SUBB/1 SUBB/1 SUBB/1 SUBB/1 SUBB/1 SUBB/1 SUBB/1 SUBB/1 SUBB/1",
    "ORL/2 AJMP/2 MOV/2 INC/1 MUL/1 -/1 MOV/2 MOV/2 MOV/2 MOV/2 MOV/2 MOV/2 MOV/2 MOV/2 MOV/2 MOV/2",
    "ANL/2 ACALL/2 CPL/2 CPL/1 CJNE/3 CJNE/3 CJNE/3 CJNE/3 CJNE/3 CJNE/3 CJNE/3 CJNE/3 CJNE/3 CJNE/3 CJNE/3 CJNE/3",
    "PUSH/2 AJMP/2 CLR/2 CLR/1 SWAP/1 XCH/2 XCH/1 XCH/1 XCH/1 XCH/1 XCH/1 XCH/1 XCH/1 XCH/1 XCH/1 XCH/1",
    "POP/2 ACALL/2 SETB/2 SETB/1 DA/1 DJNZ/3 XCHD/1 XCHD/1 DJNZ/2 DJNZ/2 DJNZ/2 DJNZ/2 DJNZ/2 DJNZ/2 DJNZ/2 DJNZ/2",
    "MOVX/1 AJMP/2 MOVX/1 MOVX/1 CLR/1 MOV/2 MOV/1 MOV/1 MOV/1 MOV/1 MOV/1 MOV/1 MOV/1 MOV/1 MOV/1 MOV/1",
    "MOVX/1 ACALL/2 MOVX/1 MOVX/1 CPL/1 MOV/2 MOV/1 MOV/1 MOV/1 MOV/1 MOV/1 MOV/1 MOV/1 MOV/1 MOV/1 MOV/1",
};

}  // namespace

TEST_CASE("decode table matches the datasheet opcode map") {
  int legal = 0;
  for (int row = 0; row < 16; ++row) {
    std::istringstream in(kDatasheetRows[row]);
    for (int col = 0; col < 16; ++col) {
      std::string cell;
      in >> cell;
      REQUIRE(!cell.empty());
      const auto slash = cell.find('/');
      const std::string name = cell.substr(0, slash);
      const int len = std::stoi(cell.substr(slash + 1));
      const OpcodeEntry& e = table_entry(static_cast<uint8_t>(row * 16 + col));
      CAPTURE(row * 16 + col);
      if (name == "-") {
        CHECK(e.illegal());
      } else {
        CHECK(mnemonic_name(e.mnemonic) == name);
        CHECK(e.length == len);
        ++legal;
        int bytes = 1;
        for (auto k : e.operand_kinds()) bytes += operand_byte_count(k);
        CHECK(bytes == e.length);
      }
    }
  }
  CHECK(legal == 255);
}

TEST_CASE("44 distinct mnemonics") {
  std::set<Mnemonic> seen;
  for (const auto& e : opcode_table())
    if (!e.illegal()) seen.insert(e.mnemonic);
  CHECK(seen.size() == 44);
  CHECK(mnemonic_from_name("movc") == Mnemonic::MOVC);
  CHECK_FALSE(mnemonic_from_name("FOO").has_value());
}

TEST_CASE("decode examples") {
  std::vector<uint8_t> nop{0x00};
  auto i = decode(nop, 0);
  CHECK(i.mnemonic == Mnemonic::NOP);
  CHECK(i.length == 1);

  std::vector<uint8_t> movdd{0x85, 0x30, 0x40};
  i = decode(movdd, 0);
  CHECK(i.mnemonic == Mnemonic::MOV);
  REQUIRE(i.operands.size() == 2);
  CHECK(i.operands[0] == Operand::direct(0x40));
  CHECK(i.operands[1] == Operand::direct(0x30));
  CHECK(i.raw[1] == 0x30);

  std::vector<uint8_t> ljmp{0x02, 0x0B, 0x89};
  i = decode(ljmp, 0);
  CHECK(i.mnemonic == Mnemonic::LJMP);
  CHECK(i.length == 3);
  CHECK(i.operands[0].kind == OperandKind::Addr16);
  CHECK(i.operands[0].value == 0x0B89);
  CHECK(i.branch_target() == 0x0B89);
}

TEST_CASE("decode errors") {
  std::vector<uint8_t> bad{0xA5};
  CHECK_THROWS_AS(decode(bad, 0), DecodeError);
  try {
    decode(bad, 0);
  } catch (const DecodeError& e) {
    CHECK(e.kind() == DecodeErrorKind::IllegalOpcode);
  }
  std::vector<uint8_t> trunc{0x90, 0x12};
  try {
    decode(trunc, 0);
    FAIL("expected truncation");
  } catch (const DecodeError& e) {
    CHECK(e.kind() == DecodeErrorKind::TruncatedInstruction);
  }
  CHECK_FALSE(try_decode(trunc, 0).has_value());
  CHECK_FALSE(try_decode(trunc, 7).has_value());
}

TEST_CASE("relative and page-local targets use the next instruction address") {
  std::vector<uint8_t> img(0x900, 0);
  img[0x7FE] = 0x80;  // SJMP -2 -> self
  img[0x7FF] = 0xFE;
  CHECK(decode(img, 0x7FE).branch_target() == 0x7FE);
  // AJMP at 0x7FE: next instruction is 0x800, so the page is 0x0800.
  img[0x7FE] = 0x21;
  img[0x7FF] = 0x10;
  CHECK(decode(img, 0x7FE).branch_target() == 0x0910);
}

TEST_CASE("sweep over the descriptor copy loop") {
  std::vector<uint8_t> img(0x0c00, 0);
  const uint8_t code[] = {0x7F, 0x00, 0xEF, 0x90, 0x30, 0xC3, 0x93};
  std::copy(std::begin(code), std::end(code), img.begin() + 0x0bee);
  std::span<const uint8_t> view(img.data(), 0x0bf5);
  auto r = disassemble_sweep(view, 0x0bee);
  REQUIRE(r.instructions.size() == 4);
  CHECK(r.diagnostics.empty());
  CHECK(r.instructions[0].address == 0x0bee);
  CHECK(r.instructions[0].mnemonic == Mnemonic::MOV);
  CHECK(r.instructions[1].address == 0x0bf0);
  CHECK(r.instructions[1].mnemonic == Mnemonic::MOV);
  CHECK(r.instructions[2].address == 0x0bf1);
  CHECK(r.instructions[2].operands[1] == Operand::imm16(0x30C3));
  CHECK(r.instructions[3].address == 0x0bf4);
  CHECK(r.instructions[3].mnemonic == Mnemonic::MOVC);
  CHECK(format_instruction(r.instructions[2]) == "MOV DPTR,#0x30C3");
}

TEST_CASE("sweep resynchronizes after a reserved byte") {
  std::vector<uint8_t> img{0x00, 0x00, 0x00};
  CHECK(disassemble_sweep(img).instructions.size() == 3);

  std::vector<uint8_t> a{0x74, 0x05, 0x00};  // MOV A,#5 ; NOP
  std::vector<uint8_t> b{0x04, 0xE4};        // INC A ; CLR A
  std::vector<uint8_t> joined = a;
  joined.push_back(0xA5);
  joined.insert(joined.end(), b.begin(), b.end());
  auto r = disassemble_sweep(joined);
  CHECK(r.instructions.size() == 4);
  REQUIRE(r.diagnostics.size() == 1);
  CHECK(r.diagnostics[0].address == a.size());
  CHECK(r.diagnostics[0].kind == DecodeErrorKind::IllegalOpcode);
  CHECK(r.instructions[2].address == a.size() + 1);
}

TEST_CASE("round trip over random byte streams") {
  std::mt19937 rng(1234);
  for (int iter = 0; iter < 2000; ++iter) {
    std::vector<uint8_t> bytes(64);
    for (auto& b : bytes) b = static_cast<uint8_t>(rng());
    const uint16_t base = static_cast<uint16_t>(rng() & 0xF000);
    std::vector<uint8_t> img(base + bytes.size());
    std::copy(bytes.begin(), bytes.end(), img.begin() + base);
    auto r = disassemble_sweep(img, base);
    for (const auto& insn : r.instructions) {
      auto enc = encode(insn);
      REQUIRE(std::equal(enc.begin(), enc.end(), insn.bytes().begin(), insn.bytes().end()));
      std::vector<uint8_t> again(insn.address + insn.length);
      std::copy(enc.begin(), enc.end(), again.begin() + insn.address);
      REQUIRE(decode(again, insn.address) == insn);
      REQUIRE(insn.length == table_entry(insn.opcode()).length);
    }
  }
}
