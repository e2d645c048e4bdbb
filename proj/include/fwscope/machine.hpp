// Concrete 8051 machine model: SFR map, memory images, interrupt vectors and
// a reference interpreter.
#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>

#include "fwscope/isa.hpp"

namespace fwscope::machine {

namespace sfr {
inline constexpr uint8_t P0 = 0x80;
inline constexpr uint8_t SP = 0x81;
inline constexpr uint8_t DPL = 0x82;
inline constexpr uint8_t DPH = 0x83;
inline constexpr uint8_t PCON = 0x87;
inline constexpr uint8_t TCON = 0x88;
inline constexpr uint8_t TMOD = 0x89;
inline constexpr uint8_t TL0 = 0x8A;
inline constexpr uint8_t TL1 = 0x8B;
inline constexpr uint8_t TH0 = 0x8C;
inline constexpr uint8_t TH1 = 0x8D;
inline constexpr uint8_t P1 = 0x90;
inline constexpr uint8_t SCON = 0x98;
inline constexpr uint8_t SBUF = 0x99;
inline constexpr uint8_t P2 = 0xA0;
inline constexpr uint8_t IE = 0xA8;
inline constexpr uint8_t P3 = 0xB0;
inline constexpr uint8_t IP = 0xB8;
inline constexpr uint8_t T2CON = 0xC8;
inline constexpr uint8_t RCAP2L = 0xCA;
inline constexpr uint8_t RCAP2H = 0xCB;
inline constexpr uint8_t TL2 = 0xCC;
inline constexpr uint8_t TH2 = 0xCD;
inline constexpr uint8_t PSW = 0xD0;
inline constexpr uint8_t ACC = 0xE0;
inline constexpr uint8_t B = 0xF0;
}  // namespace sfr

namespace psw {
inline constexpr uint8_t CY = 0x80;
inline constexpr uint8_t AC = 0x40;
inline constexpr uint8_t F0 = 0x20;
inline constexpr uint8_t RS1 = 0x10;
inline constexpr uint8_t RS0 = 0x08;
inline constexpr uint8_t OV = 0x04;
inline constexpr uint8_t F1 = 0x02;
inline constexpr uint8_t P = 0x01;
}  // namespace psw

inline constexpr uint8_t kResetSP = 0x07;

inline uint8_t parity8(uint8_t v) {
  v ^= v >> 4;
  v ^= v >> 2;
  v ^= v >> 1;
  return v & 1;
}

// Byte address and mask for a bit address.
struct BitLocation {
  uint8_t byte;
  uint8_t mask;
  bool in_sfr;
};
inline BitLocation bit_location(uint8_t bit) {
  if (bit < 0x80) return {static_cast<uint8_t>(0x20 + (bit >> 3)), static_cast<uint8_t>(1u << (bit & 7)), false};
  return {static_cast<uint8_t>(bit & 0xF8), static_cast<uint8_t>(1u << (bit & 7)), true};
}

enum class MachineErrorKind { IllegalOpcode, TruncatedInstruction, StackOverflow, Halted };

class MachineError : public std::runtime_error {
 public:
  MachineError(MachineErrorKind kind, uint16_t pc, const std::string& what)
      : std::runtime_error(what), kind_(kind), pc_(pc) {}
  MachineErrorKind kind() const { return kind_; }
  uint16_t pc() const { return pc_; }

 private:
  MachineErrorKind kind_;
  uint16_t pc_;
};

struct ConcreteState {
  uint16_t pc{0};
  std::array<uint8_t, 256> iram{};
  std::array<uint8_t, 128> sfr{};
  std::unordered_map<uint16_t, uint8_t> xram;
  bool halted{false};
  uint64_t steps{0};

  static ConcreteState reset();

  uint8_t sfr_get(uint8_t addr) const { return sfr[addr & 0x7F]; }
  void sfr_set(uint8_t addr, uint8_t v) { sfr[addr & 0x7F] = v; }
  uint8_t acc() const { return sfr_get(sfr::ACC); }
  uint8_t psw() const { return sfr_get(sfr::PSW); }
  uint8_t sp() const { return sfr_get(sfr::SP); }
  uint16_t dptr() const { return static_cast<uint16_t>((sfr_get(sfr::DPH) << 8) | sfr_get(sfr::DPL)); }
  uint8_t bank_base() const { return static_cast<uint8_t>(psw() & (psw::RS1 | psw::RS0)); }
  uint8_t reg(int n) const { return iram[bank_base() + n]; }
  void set_reg(int n, uint8_t v) { iram[bank_base() + n] = v; }

  // Direct addressing: < 0x80 is IRAM, >= 0x80 is the SFR space.
  uint8_t direct_read(uint8_t addr) const { return addr < 0x80 ? iram[addr] : sfr_get(addr); }
  void direct_write(uint8_t addr, uint8_t v) {
    if (addr < 0x80) iram[addr] = v;
    else sfr_set(addr, v);
  }
  bool bit_read(uint8_t bit) const;
  void bit_write(uint8_t bit, bool v);

  uint8_t xram_read(uint16_t addr) const {
    auto it = xram.find(addr);
    return it == xram.end() ? 0 : it->second;
  }
  void xram_write(uint16_t addr, uint8_t v) { xram[addr] = v; }

  // Hex dump of registers, IRAM, SFRs and written XRAM in address order.
  std::string dump() const;
};

// Executes one instruction in place.
void step(ConcreteState& state, std::span<const uint8_t> image);
ConcreteState step_concrete(ConcreteState state, std::span<const uint8_t> image);

// Runs until `stop_pc` is reached, the state halts, or `max_steps` elapse.
// Returns the number of steps taken.
uint64_t run(ConcreteState& state, std::span<const uint8_t> image, uint64_t max_steps,
             std::optional<uint16_t> stop_pc = std::nullopt);

uint8_t code_read(std::span<const uint8_t> image, uint32_t addr);

enum class InterruptSource : uint8_t { External0, Timer0, External1, Timer1, Serial, Timer2 };
inline constexpr std::array<InterruptSource, 6> kInterruptSources = {
    InterruptSource::External0, InterruptSource::Timer0, InterruptSource::External1,
    InterruptSource::Timer1, InterruptSource::Serial, InterruptSource::Timer2};

uint16_t vector_address(InterruptSource s);
uint8_t ie_enable_bit(InterruptSource s);
std::string_view interrupt_name(InterruptSource s);
std::optional<InterruptSource> interrupt_from_name(std::string_view name);
inline constexpr uint8_t kIeGlobalEnable = 0x80;

inline bool interrupt_enabled(uint8_t ie, InterruptSource s) {
  return (ie & kIeGlobalEnable) && (ie & ie_enable_bit(s));
}

using IsrMap = std::map<InterruptSource, uint16_t>;

// RETI at a vector means no handler; LJMP/AJMP/SJMP trampolines resolve to
// their target; any other instruction makes the vector itself the entry.
IsrMap discover_isrs(std::span<const uint8_t> image);

}  // namespace fwscope::machine
