#pragma once

#include <cmath>
#include <string>

#include "prngformer/errors.hpp"

namespace prngformer {

enum class PrecisionMode { exact_double, quantized };

// Round x to the nearest value carrying `bits` explicit fraction bits in
// its mantissa (ties to even). bits = 52 is the identity on doubles.
inline double round_to_mantissa(double x, int bits) {
  if (x == 0.0 || !std::isfinite(x)) return x;
  int exponent = 0;
  const double frac = std::frexp(x, &exponent);  // |frac| in [0.5, 1)
  const double scaled = std::ldexp(frac, bits + 1);
  return std::ldexp(std::nearbyint(scaled), exponent - bits - 1);
}

struct PrecisionPolicy {
  PrecisionMode mode = PrecisionMode::exact_double;
  int mantissa_bits = 52;

  static PrecisionPolicy exact() { return {}; }
  static PrecisionPolicy quantized(int bits) {
    PrecisionPolicy p{PrecisionMode::quantized, bits};
    p.validate();
    return p;
  }

  void validate() const {
    if (mantissa_bits < 4 || mantissa_bits > 52) {
      throw DomainError("mantissa_bits must lie in [4, 52], got " + std::to_string(mantissa_bits));
    }
  }

  bool is_quantized() const { return mode == PrecisionMode::quantized; }

  double apply(double x) const { return is_quantized() ? round_to_mantissa(x, mantissa_bits) : x; }
};

}  // namespace prngformer
