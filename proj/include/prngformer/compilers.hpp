// Compilers from PRNG specs and circuit netlists to weight programs, and
// the Mersenne Twister tape codec.
#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "prngformer/circuit.hpp"
#include "prngformer/gadgets.hpp"
#include "prngformer/kernel.hpp"
#include "prngformer/oracles.hpp"

namespace prngformer {

namespace detail {

// Appends concatenation layers on top of the token embedding.
class Assembler {
 public:
  explicit Assembler(std::size_t w) : lay_{w}, width_(lay_.width()) {}

  const EmbedLayout& embed() const { return lay_; }
  std::size_t width() const { return width_; }

  LayerBuilder begin(const std::string& tag) const { return LayerBuilder(width_, lay_.one(), lay_.pos(), tag); }

  void commit(const LayerBuilder& b) {
    layers_.push_back(b.build());
    width_ = layers_.back().d_out;
  }

  WeightProgram finish(std::string kind, const std::vector<std::size_t>& bits, std::size_t flag) {
    WeightProgram p;
    p.kind = std::move(kind);
    p.word_bits = lay_.w;
    p.layers = std::move(layers_);
    p.readout.map = Matrix(width_, lay_.w + 1);
    for (std::size_t k = 0; k < bits.size(); ++k) p.readout.map(bits[k], k) = 1.0;
    if (flag != npos) p.readout.map(flag, lay_.w) = 1.0;
    return p;
  }

  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

 private:
  EmbedLayout lay_;
  std::size_t width_;
  std::vector<LayerSpec> layers_;
};

inline std::vector<Form> channel_forms(const std::vector<std::size_t>& ch) {
  std::vector<Form> f;
  for (std::size_t c : ch) f.push_back(Form::ch(c));
  return f;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// LCG: one layer, one head.

struct LcgCompileOptions {
  std::uint64_t max_modulus = 256;
};

// The self-select head's value path forms s = a x + c from the token bits.
// The FFN then maps s to the bits of s mod m with one restoring step per
// point where those bits change. Only the m values s can actually take
// (a v + c for v < m) are used as breakpoints, which keeps the width O(m).
inline WeightProgram build_lcg_program(const LcgSpec& spec, LcgCompileOptions opt = {}) {
  spec.validate();
  if (spec.m > opt.max_modulus)
    throw CompileError("LCG modulus m=" + std::to_string(spec.m) + " exceeds the configured limit of " +
                       std::to_string(opt.max_modulus) + " (m^2 must stay inside the floor unit's domain)");
  detail::Assembler as(spec.w);
  const auto& e = as.embed();
  auto b = as.begin("lcg");
  Form s = Form::ch(e.one(), static_cast<double>(spec.c));
  for (unsigned k = 0; k < spec.w; ++k) s += Form::ch(e.bit(k), static_cast<double>(spec.a << k));
  const std::size_t s_ch = b.self_value(s);

  std::set<std::int64_t> reach;
  for (std::uint64_t v = 0; v < spec.m; ++v) reach.insert(static_cast<std::int64_t>(spec.a * v + spec.c));
  std::vector<std::int64_t> points(reach.begin(), reach.end());
  std::vector<std::vector<double>> values;
  for (auto p : points) {
    const std::uint64_t r = static_cast<std::uint64_t>(p) % spec.m;
    std::vector<double> bits(spec.w);
    for (unsigned k = 0; k < spec.w; ++k) bits[k] = static_cast<double>((r >> k) & 1u);
    values.push_back(bits);
  }
  const auto terms = lookup_terms(b, Form::ch(s_ch), points, values);
  std::vector<std::size_t> outs;
  for (const auto& t : terms) outs.push_back(b.output(t));
  as.commit(b);
  auto p = as.finish("lcg", outs, detail::Assembler::npos);
  p.channels["s"] = s_ch;
  p.params = {{"a", static_cast<std::int64_t>(spec.a)},
              {"c", static_cast<std::int64_t>(spec.c)},
              {"m", static_cast<std::int64_t>(spec.m)}};
  return p;
}

inline Tape lcg_prompt(const LcgSpec& spec) { return {TapeToken::number(spec.x0)}; }

// ---------------------------------------------------------------------------
// Mersenne Twister tape codec.
//
// Grammar: x_1 .. x_n '=>' then blocks [y, x'_1 .. x'_n, '=>'] of length
// n + 2. Block b applies one MT step to state index t = (b-1) mod n, so
// x'_{t+1} is the new word z, the other entries are copies, and y is the
// tempered z.

inline Tape encode_tape(const MtSpec& spec, std::size_t blocks) {
  spec.validate();
  Tape tape;
  tape.reserve(spec.n + 1 + blocks * (spec.n + 2));
  for (auto v : spec.state) tape.push_back(TapeToken::number(v));
  tape.push_back(TapeToken::separator());
  MtState st = MtState::from(spec);
  for (std::size_t b = 0; b < blocks; ++b) {
    tape.push_back(TapeToken::number(mt_step(spec, st)));
    for (auto v : st.words) tape.push_back(TapeToken::number(v));
    tape.push_back(TapeToken::separator());
  }
  return tape;
}

struct MtTapeContents {
  std::vector<std::vector<std::uint64_t>> states;  // initial state, then one per complete block
  std::vector<std::uint64_t> outputs;              // y of every block (complete or, if allowed, partial)
};

inline MtTapeContents decode_tape(const Tape& tape, std::size_t n, unsigned w, bool allow_partial = false) {
  if (n < 2) throw DomainError("state length n must be at least 2");
  const std::uint64_t mk = word_mask(w);
  auto number_at = [&](std::size_t i) {
    if (tape[i].arrow) throw DecodeError(i, "expected a number, found '=>'");
    if (tape[i].value & ~mk) throw DecodeError(i, "value does not fit in " + std::to_string(w) + " bits");
    return tape[i].value;
  };
  auto arrow_at = [&](std::size_t i) {
    if (!tape[i].arrow) throw DecodeError(i, "expected '=>', found " + to_string(tape[i]));
  };
  if (tape.size() < n + 1) throw DecodeError(tape.size(), "tape ends inside the initial state");
  MtTapeContents out;
  std::vector<std::uint64_t> st(n);
  for (std::size_t i = 0; i < n; ++i) st[i] = number_at(i);
  arrow_at(n);
  out.states.push_back(st);
  const std::size_t P = n + 2;
  for (std::size_t start = n + 1; start < tape.size(); start += P) {
    const std::size_t end = std::min(tape.size(), start + P);
    if (end - start < P && !allow_partial) throw DecodeError(tape.size(), "tape ends inside a block");
    for (std::size_t i = start; i < end; ++i) {
      const std::size_t off = i - start;
      if (off == P - 1) arrow_at(i);
      else if (off == 0) out.outputs.push_back(number_at(i));
      else st[off - 1] = number_at(i);
    }
    if (end - start == P) out.states.push_back(st);
  }
  return out;
}

inline Tape mt_prompt(const MtSpec& spec) { return encode_tape(spec, 0); }

// Checks a prompt against the tape grammar of the program that will extend
// it. Mersenne Twister prompts must parse as a (possibly partial) tape.
// LCG and circuit prompts hold numbers only, and every number must fit the
// word width.
inline void check_prompt(const WeightProgram& p, const Tape& prompt) {
  if (p.kind == "mt") {
    const auto n = static_cast<std::size_t>(p.params.at("n"));
    decode_tape(prompt, n, static_cast<unsigned>(p.word_bits), true);
    return;
  }
  for (std::size_t i = 0; i < prompt.size(); ++i) {
    if (prompt[i].arrow && (p.kind == "lcg" || p.kind == "circuit")) throw DecodeError(i, "'=>' is not part of a " + p.kind + " prompt");
    if (prompt[i].value >> p.word_bits) throw DecodeError(i, "value does not fit in the word width");
  }
}

// ---------------------------------------------------------------------------
// Mersenne Twister: 17 layers.

struct MtCompileOptions {
  std::size_t max_blocks = 0;          // 0 picks max(4n, 1024)
  double eps_budget = 0.1;             // end-to-end error per output channel
  XorRoute xor_route = XorRoute::modular;
};

// Query gain and recency gain of the extraction heads. A key whose offset
// differs from the target by d loses 128 d^2; each older block loses 64.
inline constexpr double kOffsetGain = 128.0;
inline constexpr double kRecencyGain = 64.0;
// Step gain of the layer-1 counters. The judge offset multiplies the arrow
// count error by n + 2 and the extraction query multiplies it again by
// 2 * kOffsetGain * n, so the count must be far sharper than a plain step.
inline constexpr double kCountGain = 64.0;

inline WeightProgram build_mt_program(const MtSpec& spec, MtCompileOptions opt = {}) {
  spec.validate();
  const std::size_t n = spec.n, w = spec.w, m = spec.m;
  const std::int64_t P = static_cast<std::int64_t>(n + 2);
  const std::int64_t nP = static_cast<std::int64_t>(n) * P;
  const std::size_t K = opt.max_blocks ? opt.max_blocks : std::max<std::size_t>(4 * n, 1024);
  if (!(opt.eps_budget > 0.0 && opt.eps_budget < 0.25))
    throw CompileError("error budget must lie in (0, 0.25) so outputs clear the readout margin");
  const std::size_t max_positions = n + K * static_cast<std::size_t>(P);

  // Gadget stages after extraction: masks, OR, shift+select, 2 XORs for z,
  // 4 tempering shifts and 4 XORs, final selection.
  const double gadget_count = 14.0;
  double eps = opt.eps_budget / gadget_count;
  const double xor_eps = opt.xor_route == XorRoute::product ? eps / 16384.0 : eps;
  const double relu_gain = std::max(kStepGain, pow2_at_least(0.17 / eps));
  const double sel_gain = std::max(kStepGain, selector_gain(1.0, eps));

  detail::Assembler as(w);
  const auto& e = as.embed();
  const Form pos = Form::ch(e.pos());
  std::map<std::string, std::size_t> dbg;

  // Layer 1: arrow count and the floors behind t, (t+1) mod n, (t+m) mod n.
  //   blk = floor((pos+1)/P) counts arrows at or before pos.
  //   t = blk - 1 - n floor((pos-n-1)/(nP)),  (t+1)%n = blk - n floor((pos+1)/(nP)),
  //   (t+m)%n = blk - 1 + m - n floor((pos+1+(m-1)P)/(nP)).
  // (The closed form ceil((i-(n+1))/(n+2)) differs from blk exactly at arrow
  // positions, where the arrow itself must already be counted.)
  std::size_t blk, fl_t, fl_t1, fl_tm;
  {
    auto b = as.begin("L1 arrow count");
    Terms t;
    for (std::size_t k = 1; k <= K; ++k) accumulate(t, step_terms(b, pos + Form::k(1.0), static_cast<double>(k * P), kCountGain));
    blk = b.output(t);
    auto floor_sum = [&](const Form& z) {
      Terms f;
      const std::int64_t top = static_cast<std::int64_t>(max_positions) + 1 + static_cast<std::int64_t>(m) * P;
      for (std::int64_t k = 1; k * nP <= top; ++k) accumulate(f, step_terms(b, z, static_cast<double>(k * nP), kCountGain));
      return b.output(f);
    };
    fl_t = floor_sum(pos - Form::k(static_cast<double>(n + 1)));
    fl_t1 = floor_sum(pos + Form::k(1.0));
    fl_tm = floor_sum(pos + Form::k(static_cast<double>(1 + (static_cast<std::int64_t>(m) - 1) * P)));
    as.commit(b);
  }
  dbg["cnt"] = blk;

  // Layer 2: offsets, indices, source coordinates and case indicators.
  std::size_t judge, t_ch, t1_ch, tm_ch, off2, is_y, is_end, is_z;
  {
    auto b = as.begin("L2 indices");
    const Form B = Form::ch(blk);
    const Form Jf = pos + Form::k(1.0) - B * static_cast<double>(P);
    const Form Tf = B - Form::k(1.0) - Form::ch(fl_t, static_cast<double>(n));
    const Form T1f = B - Form::ch(fl_t1, static_cast<double>(n));
    const Form Tmf = B + Form::k(static_cast<double>(m) - 1.0) - Form::ch(fl_tm, static_cast<double>(n));
    judge = b.self_value(Jf);
    t_ch = b.self_value(Tf);
    t1_ch = b.self_value(T1f);
    tm_ch = b.self_value(Tmf);
    // Absolute coordinates, kept for inspection: now_=> and pre_=> are the
    // latest and previous arrow positions; the sources are where the fetched
    // words sit. next_x points at the copy source of the slot being written,
    // one past pre_=> + judge.
    const Form pre = pos - Jf - Form::k(static_cast<double>(P));
    dbg["now_arrow"] = b.self_value(pos - Jf);
    dbg["pre_arrow"] = b.self_value(pre);
    dbg["src_t"] = b.self_value(pre + Tf + Form::k(2.0));
    dbg["src_t1"] = b.self_value(pre + T1f + Form::k(2.0));
    dbg["src_tm"] = b.self_value(pre + Tmf + Form::k(2.0));
    dbg["next_x"] = b.self_value(pre + Jf + Form::k(1.0));
    const Form J = Form::ch(judge);

    Terms sq;
    for (std::size_t k = 1; k <= n + 1; ++k) accumulate(sq, step_terms(b, J, static_cast<double>(k)), 2.0 * k - 1.0);
    off2 = b.output(sq);
    is_y = b.output(step_terms(b, J * -1.0, 0.0));
    is_end = b.output(step_terms(b, J, static_cast<double>(n + 1)));
    const Form d = J - Form::ch(t_ch) - Form::k(1.0);
    Terms z = step_terms(b, d, 0.0);
    accumulate(z, step_terms(b, d, 1.0), -1.0);
    is_z = b.output(z);
    as.commit(b);
  }
  dbg["judge"] = judge;
  dbg["t"] = t_ch;
  dbg["t1"] = t1_ch;
  dbg["tm"] = tm_ch;
  dbg["is_y"] = is_y;
  dbg["is_z"] = is_z;
  dbg["is_end"] = is_end;

  // Layer 3: four extraction heads. Head for target offset T scores key j by
  //   2B T off_j - B off_j^2 + R blk_j - R blk_i = -B (off_j - T)^2 + B T^2 - R (blk_i - blk_j),
  // selecting the most recent token at offset T. Offsets k+1 hold state
  // word k; only the entry being rewritten differs between consecutive
  // blocks, and it is never fetched before it is written.
  std::vector<std::size_t> Xt, Xt1, Xtm, Xnext;
  {
    auto b = as.begin("L3 extraction");
    std::vector<Form> bits;
    for (std::size_t k = 0; k < w; ++k) bits.push_back(Form::ch(e.bit(k)));
    auto fetch = [&](const Form& target, const char* tag) {
      const std::size_t h =
          b.add_head({target * (2.0 * kOffsetGain), Form::k(-kOffsetGain), Form::k(kRecencyGain), Form::ch(blk, -kRecencyGain)},
                     {Form::ch(judge), Form::ch(off2), Form::ch(blk), Form::ch(e.one())}, bits, tag);
      return b.head_channels(h);
    };
    Xt = fetch(Form::ch(t_ch) + Form::k(2.0), "fetch x[t]");
    Xt1 = fetch(Form::ch(t1_ch) + Form::k(2.0), "fetch x[t+1]");
    Xtm = fetch(Form::ch(tm_ch) + Form::k(2.0), "fetch x[t+m]");
    Xnext = fetch(Form::ch(judge) + Form::k(1.0), "fetch copy source");
    as.commit(b);
  }

  auto self_map = [&](const std::string& tag, const std::vector<Form>& forms) {
    auto b = as.begin(tag);
    std::vector<std::size_t> out;
    for (const auto& f : forms) out.push_back(b.self_value(f));
    as.commit(b);
    return out;
  };
  // XOR stage: attention forms the per-bit combination, the FFN finishes it.
  auto xor_layer = [&](const std::string& tag, const std::vector<std::size_t>& x, const std::vector<std::size_t>& y) {
    auto b = as.begin(tag);
    std::vector<std::size_t> combos;
    for (std::size_t k = 0; k < w; ++k)
      combos.push_back(b.self_value(
          binary_bool_combination(GadgetKind::VAR_XOR, opt.xor_route, Form::ch(x[k]), Form::ch(y[k]))));
    std::vector<std::size_t> out;
    for (std::size_t k = 0; k < w; ++k)
      out.push_back(b.output(
          binary_bool_terms(b, GadgetKind::VAR_XOR, opt.xor_route, Form::ch(combos[k]), relu_gain, xor_eps)));
    as.commit(b);
    return out;
  };

  // Layer 4: (x[t] AND upper), (x[t+1] AND lower).
  std::vector<Form> masked = const_bool_forms(GadgetKind::CONST_AND, detail::channel_forms(Xt), spec.upper_mask());
  const auto lo = const_bool_forms(GadgetKind::CONST_AND, detail::channel_forms(Xt1), spec.lower_mask());
  masked.insert(masked.end(), lo.begin(), lo.end());
  const auto AB = self_map("L4 masks", masked);

  // Layer 5: combined word y = upper part OR lower part.
  std::vector<std::size_t> tw;
  {
    auto b = as.begin("L5 combine");
    std::vector<std::size_t> s;
    for (std::size_t k = 0; k < w; ++k)
      s.push_back(b.self_value(binary_bool_combination(GadgetKind::VAR_OR, opt.xor_route, Form::ch(AB[k]),
                                                       Form::ch(AB[w + k]))));
    for (std::size_t k = 0; k < w; ++k)
      tw.push_back(b.output(binary_bool_terms(b, GadgetKind::VAR_OR, opt.xor_route, Form::ch(s[k]), relu_gain, eps)));
    as.commit(b);
  }

  // Layer 6: y >> 1, and v = a if the shifted-out bit is set, else 0.
  std::vector<std::size_t> tws, v;
  {
    auto b = as.begin("L6 shift and select");
    for (const auto& f : const_bool_forms(GadgetKind::SHR, detail::channel_forms(tw), 1)) tws.push_back(b.self_value(f));
    std::vector<Form> a_bits, zero(w);
    for (std::size_t k = 0; k < w; ++k) a_bits.push_back(Form::k(static_cast<double>((spec.a >> k) & 1u)));
    for (const auto& t : select_terms(b, a_bits, zero, Form::ch(tw[0]) - Form::k(0.5), 1.0, 0.5, sel_gain))
      v.push_back(b.output(t));
    as.commit(b);
  }

  // Layers 7-8: z = x[t+m] ^ (y >> 1) ^ v.
  const auto u1 = xor_layer("L7 xor", Xtm, tws);
  const auto z = xor_layer("L8 xor", u1, v);

  // Layers 9-16: tempering, each step a shift/mask stage then an XOR stage.
  const auto zs = self_map("L9 shift", const_bool_forms(GadgetKind::SHR, detail::channel_forms(z), spec.u));
  const auto y1 = xor_layer("L10 xor", z, zs);
  auto shl_and = [&](const std::vector<std::size_t>& x, unsigned sh, std::uint64_t mask) {
    return const_bool_forms(GadgetKind::CONST_AND, const_bool_forms(GadgetKind::SHL, detail::channel_forms(x), sh), mask);
  };
  const auto p1 = self_map("L11 shift-mask", shl_and(y1, spec.s, spec.b));
  const auto y2 = xor_layer("L12 xor", y1, p1);
  const auto p2 = self_map("L13 shift-mask", shl_and(y2, spec.t, spec.c));
  const auto y3 = xor_layer("L14 xor", y2, p2);
  const auto p3 = self_map("L15 shift", const_bool_forms(GadgetKind::SHR, detail::channel_forms(y3), spec.l));
  const auto y = xor_layer("L16 xor", y3, p3);

  // Layer 17: the four mutually exclusive cases, each a binary selection
  // against zero, summed.
  std::vector<std::size_t> out;
  std::size_t flag;
  {
    auto b = as.begin("L17 output selection");
    const std::vector<Form> zero(w);
    const Form half = Form::k(0.5);
    const Form copy = Form::k(1.0) - Form::ch(is_y) - Form::ch(is_z) - Form::ch(is_end);
    const auto sy = select_terms(b, detail::channel_forms(y), zero, Form::ch(is_y) - half, 1.0, 0.5, sel_gain);
    const auto sz = select_terms(b, detail::channel_forms(z), zero, Form::ch(is_z) - half, 1.0, 0.5, sel_gain);
    const auto sc = select_terms(b, detail::channel_forms(Xnext), zero, copy - half, 1.0, 0.5, sel_gain);
    for (std::size_t k = 0; k < w; ++k) {
      Terms t = sy[k];
      accumulate(t, sz[k]);
      accumulate(t, sc[k]);
      out.push_back(b.output(t));
    }
    flag = b.output(select_terms(b, {Form::k(1.0)}, {Form{}}, Form::ch(is_end) - half, 1.0, 0.5, sel_gain)[0]);
    as.commit(b);
  }

  auto p = as.finish("mt", out, flag);
  p.channels = dbg;
  p.max_positions = max_positions;
  p.params = {{"w", static_cast<std::int64_t>(w)},
              {"n", static_cast<std::int64_t>(n)},
              {"m", static_cast<std::int64_t>(m)},
              {"max_blocks", static_cast<std::int64_t>(K)}};
  return p;
}

// ---------------------------------------------------------------------------
// Circuits. The prompt is one token (a single bit) per input. Layer 1 builds
// position one-hots; layer 2 gathers input k into a fixed channel with a
// head keyed on [pos == k]; later layers evaluate AND/OR gates in FFNs and
// NOT gates in attention value paths; the last FFN emits output o at row
// N + o - 1 and the arrow afterwards.

struct CircuitCompileOptions {
  double gather_gain = 64.0;
};

inline WeightProgram compile_circuit(CircuitNetlist net, CircuitCompileOptions opt = {}) {
  net.validate();
  const std::size_t N = net.inputs.size(), Kout = net.outputs.size();
  if (N == 0) throw CompileError("netlist needs at least one input (the prompt cannot be empty)");

  // Phase clock: layer L's attention is phase 2L-1, its FFN phase 2L.
  std::map<std::string, int> phase;
  std::map<std::string, const Gate*> gate_of;
  for (const auto& in : net.inputs) phase[in] = 3;
  for (const auto& g : net.gates) {
    gate_of[g.id] = &g;
    if (g.kind == GateKind::NOT) {
      const bool from_input = !gate_of.count(g.args[0]);
      if (from_input) {
        phase[g.id] = 3;  // fetched already negated by the gather head
      } else {
        const int layer = (phase[g.args[0]] + 3) / 2;  // input of that layer holds phases <= 2L-2
        phase[g.id] = 2 * layer - 1;
      }
    } else {
      int mx = 0;
      for (const auto& a : g.args) mx = std::max(mx, phase[a]);
      const int layer = std::max(2, (mx + 2) / 2);
      phase[g.id] = 2 * layer;
    }
  }
  int out_max = 0;
  for (const auto& o : net.outputs) out_max = std::max(out_max, phase[o]);
  const int last = std::max(2, (out_max + 2) / 2);

  detail::Assembler as(1);
  const auto& e = as.embed();
  const Form pos = Form::ch(e.pos());

  std::vector<std::size_t> onehot(N + 1), emit_row(Kout + 1);
  std::size_t end_flag;
  {
    auto b = as.begin("positions");
    std::vector<Terms> S(N + Kout + 2);
    for (std::size_t k = 1; k <= N + Kout + 1; ++k) S[k] = step_terms(b, pos, static_cast<double>(k));
    auto hat = [&](std::size_t k) {
      Terms t = S[k];
      accumulate(t, S[k + 1], -1.0);
      return b.output(t);
    };
    for (std::size_t k = 1; k <= N; ++k) onehot[k] = hat(k);
    for (std::size_t o = 1; o <= Kout; ++o) emit_row[o] = hat(N + o - 1);
    end_flag = b.output(S[N + Kout]);
    as.commit(b);
  }

  std::map<std::string, std::size_t> chan;
  const double sel_gain = std::max(kStepGain, selector_gain(1.0, 1e-3));
  for (int L = 2; L <= last; ++L) {
    auto b = as.begin("circuit layer " + std::to_string(L));
    if (L == 2) {
      for (std::size_t k = 1; k <= N; ++k) {
        const std::string& name = net.inputs[k - 1];
        std::vector<Form> values{Form::ch(e.bit(0))};
        std::vector<std::string> names{name};
        for (const auto& g : net.gates)
          if (g.kind == GateKind::NOT && g.args[0] == name) {
            values.push_back(Form::ch(e.one()) - Form::ch(e.bit(0)));
            names.push_back(g.id);
          }
        const std::size_t h = b.add_head({Form::k(opt.gather_gain)}, {Form::ch(onehot[k])}, values, "gather " + name);
        const auto ch = b.head_channels(h);
        for (std::size_t i = 0; i < names.size(); ++i) chan[names[i]] = ch[i];
      }
    }
    for (const auto& g : net.gates)
      if (g.kind == GateKind::NOT && phase[g.id] == 2 * L - 1 && !chan.count(g.id))
        chan[g.id] = b.self_value(Form::k(1.0) - Form::ch(chan.at(g.args[0])));
    for (const auto& g : net.gates) {
      if (g.kind == GateKind::NOT || phase[g.id] != 2 * L) continue;
      std::vector<Form> args;
      for (const auto& a : g.args) args.push_back(Form::ch(chan.at(a)));
      chan[g.id] = b.output(fanin_terms(b, g.kind == GateKind::AND ? GadgetKind::FANIN_AND : GadgetKind::FANIN_OR, args));
    }
    if (L == last) {
      Terms bit;
      for (std::size_t o = 1; o <= Kout; ++o) {
        const auto t = select_terms(b, {Form::ch(chan.at(net.outputs[o - 1]))}, {Form{}},
                                    Form::ch(emit_row[o]) - Form::k(0.5), 1.0, 0.5, sel_gain);
        accumulate(bit, t[0]);
      }
      const std::size_t out = b.output(bit);
      as.commit(b);
      auto p = as.finish("circuit", {out}, end_flag);
      p.params = {{"inputs", static_cast<std::int64_t>(N)},
                  {"outputs", static_cast<std::int64_t>(Kout)},
                  {"depth", static_cast<std::int64_t>(net.depth())}};
      return p;
    }
    as.commit(b);
  }
  throw CompileError("internal: circuit schedule produced no emission layer");
}

inline Tape circuit_prompt(const CircuitNetlist& net, const std::vector<bool>& bits) {
  if (bits.size() != net.inputs.size()) throw DomainError("assignment width does not match the netlist inputs");
  Tape t;
  for (bool v : bits) t.push_back(TapeToken::number(v ? 1 : 0));
  return t;
}

// Runs a compiled circuit on one assignment and returns its output bits.
inline std::vector<bool> run_circuit(const WeightProgram& p, const CircuitNetlist& net, const std::vector<bool>& bits,
                                     PrecisionPolicy policy = PrecisionPolicy::exact()) {
  const Tape tape = generate(p, circuit_prompt(net, bits), net.outputs.size(), policy);
  std::vector<bool> out;
  for (std::size_t i = bits.size(); i < tape.size(); ++i) {
    if (tape[i].arrow) throw DecodeError(i, "circuit emitted '=>' before all outputs");
    out.push_back(tape[i].value != 0);
  }
  return out;
}

}  // namespace prngformer
