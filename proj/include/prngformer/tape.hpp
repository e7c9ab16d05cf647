#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "prngformer/errors.hpp"

namespace prngformer {

// One token of a chain-of-thought tape: either a w-bit number or the
// separator arrow. The arrow carries an all-zero numeric payload.
struct TapeToken {
  std::uint64_t value = 0;
  bool arrow = false;

  static TapeToken number(std::uint64_t v) { return {v, false}; }
  static TapeToken separator() { return {0, true}; }

  friend bool operator==(const TapeToken& a, const TapeToken& b) {
    return a.arrow == b.arrow && (a.arrow || a.value == b.value);
  }
};

using Tape = std::vector<TapeToken>;

inline std::string to_string(const TapeToken& t) { return t.arrow ? "=>" : std::to_string(t.value); }

// Text form: one token per line, decimal integers, "=>" for the arrow.
// Blank lines and lines starting with '#' are ignored.
inline void write_tape(std::ostream& os, const Tape& tape) {
  for (const auto& t : tape) os << to_string(t) << '\n';
}

inline Tape read_tape(std::istream& is) {
  Tape tape;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto last = line.find_last_not_of(" \t\r");
    const std::string tok = line.substr(first, last - first + 1);
    if (tok == "=>") {
      tape.push_back(TapeToken::separator());
      continue;
    }
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      if (tok.empty() || tok[0] == '-' || tok[0] == '+') throw std::invalid_argument(tok);
      v = std::stoull(tok, &used, 10);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != tok.size() || used == 0) {
      throw DecodeError(tape.size(), "line " + std::to_string(lineno) + ": not a token: '" + tok + "'");
    }
    tape.push_back(TapeToken::number(v));
  }
  return tape;
}

inline Tape parse_tape(const std::string& text) {
  std::istringstream is(text);
  return read_tape(is);
}

}  // namespace prngformer
