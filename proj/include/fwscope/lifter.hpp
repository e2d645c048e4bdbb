// Lifts decoded 8051 instructions into IR blocks and evaluates them over
// concrete machine state.
#pragma once

#include <cstdint>
#include <memory>
#include <mutex>
#include <span>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "fwscope/ir.hpp"
#include "fwscope/isa.hpp"
#include "fwscope/machine.hpp"

namespace fwscope::lifter {

class UnliftableInstruction : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Lifts one instruction's statements, InstrBoundary first, without a
// terminator for non-control-flow instructions.
void lift_instruction(const isa::Instruction& insn, ir::Block& block);

// Lifts from `addr` through the first control-flow instruction. When the
// following instruction cannot be decoded the block ends with a fallthrough
// jump to it. Throws isa::DecodeError when `addr` itself does not decode.
ir::Block lift_block(std::span<const uint8_t> image, uint16_t addr);

// Image plus a lazily populated block cache keyed by entry address.
class Program {
 public:
  explicit Program(std::vector<uint8_t> image);

  std::span<const uint8_t> image() const { return image_; }
  const ir::Block& block(uint16_t addr);
  size_t cached_blocks() const;

 private:
  std::vector<uint8_t> image_;
  mutable std::mutex mu_;
  std::unordered_map<uint16_t, std::unique_ptr<ir::Block>> cache_;
};

// Executes a block over a concrete state and returns the next PC; the
// state's PC is updated too. Traps raise machine::MachineError.
uint16_t exec_block(const ir::Block& block, machine::ConcreteState& state,
                    std::span<const uint8_t> image);

}  // namespace fwscope::lifter
