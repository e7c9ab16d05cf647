// Ground-truth generators: LCG recurrence and generic-parameter Mersenne
// Twister (rotation + tempering), plus helpers to produce MT state.
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "prngformer/errors.hpp"

namespace prngformer {

inline std::uint64_t word_mask(unsigned w) { return w >= 64 ? ~std::uint64_t{0} : (std::uint64_t{1} << w) - 1; }

struct LcgSpec {
  std::uint64_t a = 0, c = 0, m = 2, x0 = 0;
  unsigned w = 1;

  // Smallest width holding every residue.
  static unsigned width_for(std::uint64_t m) {
    unsigned w = 1;
    while ((std::uint64_t{1} << w) < m) ++w;
    return w;
  }

  void validate() const {
    if (m < 2) throw DomainError("LCG modulus m must be at least 2");
    if (w == 0 || w > 32) throw DomainError("LCG width w must lie in [1, 32]");
    if (m > (std::uint64_t{1} << w)) throw DomainError("LCG modulus m exceeds 2^w");
    if (a >= m || c >= m) throw DomainError("LCG parameters a and c must be below m");
    if (x0 >= m) throw DomainError("LCG seed x0 must be below m");
  }
};

// x' = (a x + c) mod m. Operands are below 2^32, so 64-bit intermediates
// cannot overflow.
inline std::uint64_t lcg_next(const LcgSpec& s, std::uint64_t x) {
  if (x >= s.m) throw DomainError("LCG state must be below m");
  return (s.a * x + s.c) % s.m;
}

struct MtSpec {
  unsigned w = 32;
  std::size_t n = 624;
  std::size_t m = 397;
  unsigned r = 31;
  std::uint64_t a = 0x9908B0DF;
  unsigned u = 11;
  unsigned s = 7;
  std::uint64_t b = 0x9D2C5680;
  unsigned t = 15;
  std::uint64_t c = 0xEFC60000;
  unsigned l = 18;
  std::vector<std::uint64_t> state;  // initial n words

  static MtSpec mt19937(std::uint64_t seed = 5489) {
    MtSpec sp;
    sp.seed(seed);
    return sp;
  }

  std::uint64_t mask() const { return word_mask(w); }
  // High w - r bits; the low r bits form the complementary lower mask.
  std::uint64_t upper_mask() const { return mask() & ~word_mask(r); }
  std::uint64_t lower_mask() const { return word_mask(r) & mask(); }

  // The usual Knuth-style initializer, generalized to width w:
  // x[i] = f * (x[i-1] ^ (x[i-1] >> (w-2))) + i  (mod 2^w).
  void seed(std::uint64_t value, std::uint64_t multiplier = 1812433253u) {
    state.assign(n, 0);
    const std::uint64_t mk = mask();
    const unsigned shift = w >= 2 ? w - 2 : 0;
    state[0] = value & mk;
    for (std::size_t i = 1; i < n; ++i)
      state[i] = (multiplier * (state[i - 1] ^ (state[i - 1] >> shift)) + i) & mk;
  }

  void validate() const {
    if (w < 2 || w > 32) throw DomainError("MT word width w must lie in [2, 32]");
    if (n < 2) throw DomainError("MT state length n must be at least 2");
    if (m < 1 || m >= n) throw DomainError("MT middle offset m must lie in [1, n)");
    if (r > w) throw DomainError("MT split bit r must lie in [0, w]");
    for (unsigned sh : {u, s, t, l})
      if (sh < 1 || sh >= w) throw DomainError("MT shifts must lie in [1, w)");
    for (std::uint64_t mk : {a, b, c})
      if ((mk & ~mask()) != 0) throw DomainError("MT constants must fit in w bits");
    if (state.size() != n) throw DomainError("MT state must hold exactly n words");
    for (std::uint64_t x : state)
      if ((x & ~mask()) != 0) throw DomainError("MT state words must fit in w bits");
  }
};

struct MtState {
  std::vector<std::uint64_t> words;
  std::size_t index = 0;

  static MtState from(const MtSpec& s) { return MtState{s.state, 0}; }
};

inline std::uint64_t temper(const MtSpec& s, std::uint64_t y) {
  const std::uint64_t mk = s.mask();
  y ^= y >> s.u;
  y ^= (y << s.s) & s.b & mk;
  y ^= (y << s.t) & s.c & mk;
  y ^= y >> s.l;
  return y & mk;
}

// Inverse of temper. Each step x ^= (x >> k) (optionally masked) is undone
// by fixed-point iteration, which settles after ceil(w / k) rounds.
inline std::uint64_t untemper(const MtSpec& s, std::uint64_t y) {
  const std::uint64_t mk = s.mask();
  auto undo_right = [&](std::uint64_t v, unsigned k) {
    std::uint64_t x = v;
    for (unsigned i = 0; i * k < s.w; ++i) x = v ^ (x >> k);
    return x & mk;
  };
  auto undo_left = [&](std::uint64_t v, unsigned k, std::uint64_t maskc) {
    std::uint64_t x = v;
    for (unsigned i = 0; i * k < s.w; ++i) x = v ^ ((x << k) & maskc & mk);
    return x & mk;
  };
  y = undo_right(y & mk, s.l);
  y = undo_left(y, s.t, s.c);
  y = undo_left(y, s.s, s.b);
  return undo_right(y, s.u);
}

// One step: rotate x[i] using x[i+1] and x[i+m], store z in x[i], emit
// temper(z).
inline std::uint64_t mt_step(const MtSpec& s, MtState& st) {
  const std::size_t i = st.index, n = s.n;
  auto& x = st.words;
  const std::uint64_t y = (x[i] & s.upper_mask()) | (x[(i + 1) % n] & s.lower_mask());
  std::uint64_t z = x[(i + s.m) % n] ^ (y >> 1);
  if (y & 1u) z ^= s.a;
  x[i] = z & s.mask();
  st.index = (i + 1) % n;
  return temper(s, x[i]);
}

inline std::pair<std::uint64_t, MtState> mt_next(const MtSpec& s, MtState st) {
  const std::uint64_t out = mt_step(s, st);
  return {out, std::move(st)};
}

inline std::vector<std::uint64_t> mt_outputs(const MtSpec& s, std::size_t count) {
  MtState st = MtState::from(s);
  std::vector<std::uint64_t> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) out.push_back(mt_step(s, st));
  return out;
}

}  // namespace prngformer
