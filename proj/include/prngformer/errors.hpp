// Exception hierarchy shared by every module. Callers (the CLI in
// particular) map these onto stable exit codes, so each failure family
// gets its own type instead of a message-string convention.
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace prngformer {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A value fell outside the mathematical domain of an operation.
struct DomainError : Error {
  using Error::Error;
};

// Matrix shapes or the layer dimension schedule do not line up.
struct StructuralError : Error {
  using Error::Error;
};

// A compiler refused its input (limits, cycles, invalid parameters).
struct CompileError : Error {
  using Error::Error;
};

// A statistical test was handed a stream shorter than it needs.
struct PreconditionError : Error {
  using Error::Error;
};

// Malformed tape. `position` is the 0-based token index of the fault.
struct DecodeError : Error {
  DecodeError(std::size_t pos, const std::string& what)
      : Error("tape position " + std::to_string(pos) + ": " + what), position(pos) {}
  std::size_t position;
};

// A readout channel landed too close to the 0.5 threshold. This means the
// weights no longer realize the intended circuit, so we refuse to round.
struct LowMarginError : Error {
  LowMarginError(std::size_t pos, std::size_t chan, double val)
      : Error("low-margin output at tape position " + std::to_string(pos) + ", readout channel " +
              std::to_string(chan) + " (value " + std::to_string(val) + ")"),
        position(pos),
        channel(chan),
        value(val) {}
  std::size_t position;
  std::size_t channel;
  double value;
};

}  // namespace prngformer
