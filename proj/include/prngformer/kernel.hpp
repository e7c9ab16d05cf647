// Decoder-only transformer interpreter.
//
// Row-vector convention throughout: a layer maps a T x d_in state matrix to
// T x d_out. Attention is causal, multi-head and summed through per-head
// output projections. The FFN is GeLU(a W1 + b1) W2 with the exact Gaussian
// GeLU. Residuals are either additive or by concatenation of new channels.
//
// Evaluation is incremental: each new row runs through every layer once,
// with keys and values cached per head. A full forward pass is the same
// routine applied row by row, so the two paths agree bit for bit.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include "prngformer/errors.hpp"
#include "prngformer/matrix.hpp"
#include "prngformer/precision.hpp"
#include "prngformer/tape.hpp"

namespace prngformer {

enum class ResidualMode { add, concat };

struct HeadWeights {
  Matrix w_q, w_k, w_v, w_o;
  std::string tag;

  std::size_t d_k() const { return w_q.cols(); }
  std::size_t d_v() const { return w_v.cols(); }
};

struct FfnWeights {
  Matrix w1;
  std::vector<double> b1;
  Matrix w2;

  std::size_t hidden() const { return w1.cols(); }
};

struct LayerSpec {
  std::vector<HeadWeights> heads;
  FfnWeights ffn;
  ResidualMode residual_mode = ResidualMode::concat;
  std::size_t d_in = 0;
  std::size_t d_out = 0;
  std::string tag;

  std::size_t d_attn() const { return heads.empty() ? 0 : heads.front().w_o.cols(); }

  // Width of the FFN input, i.e. the residual stream after attention.
  std::size_t a_width() const {
    return residual_mode == ResidualMode::concat ? d_in + d_attn() : d_in;
  }

  void validate() const {
    auto fail = [&](const std::string& msg) {
      throw StructuralError("layer '" + tag + "': " + msg);
    };
    if (d_in == 0) fail("d_in must be positive");
    const std::size_t da = d_attn();
    for (std::size_t h = 0; h < heads.size(); ++h) {
      const auto& hw = heads[h];
      const std::string id = "head " + std::to_string(h) + ": ";
      if (hw.w_q.rows() != d_in || hw.w_k.rows() != d_in || hw.w_v.rows() != d_in)
        fail(id + "projection rows must equal d_in");
      if (hw.w_q.cols() == 0 || hw.w_q.cols() != hw.w_k.cols()) fail(id + "query/key widths differ or are zero");
      if (hw.w_o.rows() != hw.w_v.cols()) fail(id + "w_o rows must equal value width");
      if (hw.w_o.cols() != da) fail(id + "all heads must share the attention output width");
      if (!hw.w_q.all_finite() || !hw.w_k.all_finite() || !hw.w_v.all_finite() || !hw.w_o.all_finite())
        fail(id + "non-finite weight");
    }
    if (residual_mode == ResidualMode::add && !heads.empty() && da != d_in)
      fail("additive residual needs attention width == d_in");
    if (ffn.w1.cols() == 0) fail("FFN hidden width must be at least 1");
    if (ffn.w1.rows() != a_width()) fail("FFN w1 rows must equal the post-attention width");
    if (ffn.b1.size() != ffn.w1.cols()) fail("FFN bias length must equal hidden width");
    if (ffn.w2.rows() != ffn.w1.cols()) fail("FFN w2 rows must equal hidden width");
    if (!ffn.w1.all_finite() || !ffn.w2.all_finite()) fail("non-finite FFN weight");
    for (double b : ffn.b1)
      if (!std::isfinite(b)) fail("non-finite FFN bias");
    if (residual_mode == ResidualMode::concat) {
      if (d_out != a_width() + ffn.w2.cols()) fail("concat residual: d_out must be d_in + attention + FFN widths");
    } else {
      if (ffn.w2.cols() != d_in || d_out != d_in) fail("additive residual: FFN output and d_out must equal d_in");
    }
  }
};

// Linear map from the final hidden row to w bit channels plus one arrow
// flag channel (last column). Each channel is thresholded at 0.5.
struct Readout {
  Matrix map;
};

struct WeightProgram {
  std::string kind;  // "lcg", "mt", "circuit", or free-form for hand-built programs
  std::size_t word_bits = 0;
  std::vector<LayerSpec> layers;
  Readout readout;
  // Named debug channels in the final hidden state (e.g. the arrow count).
  std::map<std::string, std::size_t> channels;
  // Compiler parameters needed to interpret tapes (e.g. "n" for MT).
  std::map<std::string, std::int64_t> params;
  // Largest number of rows the compiled position arithmetic supports; 0 = unbounded.
  std::size_t max_positions = 0;

  std::size_t embed_width() const { return word_bits + 3; }
  std::size_t d_final() const { return layers.empty() ? embed_width() : layers.back().d_out; }

  void validate() const {
    if (word_bits == 0 || word_bits > 63) throw StructuralError("word_bits must lie in [1, 63]");
    std::size_t d = embed_width();
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (layers[i].d_in != d)
        throw StructuralError("layer " + std::to_string(i) + " expects d_in=" + std::to_string(layers[i].d_in) +
                              " but receives " + std::to_string(d));
      layers[i].validate();
      d = layers[i].d_out;
    }
    if (readout.map.rows() != d || readout.map.cols() != word_bits + 1)
      throw StructuralError("readout must be " + std::to_string(d) + " x " + std::to_string(word_bits + 1));
    if (!readout.map.all_finite()) throw StructuralError("non-finite readout weight");
    for (const auto& [name, idx] : channels)
      if (idx >= d) throw StructuralError("debug channel '" + name + "' out of range");
  }

  std::size_t head_count() const {
    std::size_t h = 0;
    for (const auto& l : layers) h += l.heads.size();
    return h;
  }

  double max_abs_weight() const {
    double m = readout.map.max_abs();
    for (const auto& l : layers) {
      for (const auto& h : l.heads)
        m = std::max({m, h.w_q.max_abs(), h.w_k.max_abs(), h.w_v.max_abs(), h.w_o.max_abs()});
      m = std::max({m, l.ffn.w1.max_abs(), l.ffn.w2.max_abs()});
      for (double b : l.ffn.b1) m = std::max(m, std::abs(b));
    }
    return m;
  }
};

// Channel layout of the token embedding.
struct EmbedLayout {
  std::size_t w;
  std::size_t bit(std::size_t k) const { return k; }
  std::size_t pos() const { return w; }
  std::size_t one() const { return w + 1; }
  std::size_t flag() const { return w + 2; }
  std::size_t width() const { return w + 3; }
};

inline std::vector<double> embed_token(const TapeToken& token, std::size_t position, std::size_t w) {
  if (position < 1) throw DomainError("positions are 1-based");
  if (w == 0 || w > 63) throw DomainError("word width must lie in [1, 63]");
  if (!token.arrow && (token.value >> w) != 0)
    throw DomainError("token value " + std::to_string(token.value) + " does not fit in " + std::to_string(w) + " bits");
  const EmbedLayout lay{w};
  std::vector<double> x(lay.width(), 0.0);
  if (!token.arrow)
    for (std::size_t k = 0; k < w; ++k) x[k] = static_cast<double>((token.value >> k) & 1u);
  x[lay.pos()] = static_cast<double>(position);
  x[lay.one()] = 1.0;
  x[lay.flag()] = token.arrow ? 1.0 : 0.0;
  return x;
}

inline double gelu(double x) { return 0.5 * x * std::erfc(-x * 0.70710678118654752440); }

namespace detail {

// Column-compressed form of a matrix for y = x W. Nonzeros of each column
// are kept in increasing row order, so sums run in the same order as the
// dense loop with zero terms dropped (which cannot change a finite sum).
struct SparseCols {
  std::size_t rows = 0, cols = 0;
  std::vector<std::uint32_t> start{0};
  std::vector<std::uint32_t> idx;
  std::vector<double> val;

  SparseCols() = default;
  SparseCols(const Matrix& m, const PrecisionPolicy& p) : rows(m.rows()), cols(m.cols()) {
    start.assign(1, 0);
    for (std::size_t c = 0; c < cols; ++c) {
      for (std::size_t r = 0; r < rows; ++r) {
        const double v = p.apply(m(r, c));
        if (v != 0.0) {
          idx.push_back(static_cast<std::uint32_t>(r));
          val.push_back(v);
        }
      }
      start.push_back(static_cast<std::uint32_t>(idx.size()));
    }
  }

  void apply(const double* x, double* y, const PrecisionPolicy& p) const {
    for (std::size_t c = 0; c < cols; ++c) {
      double s = 0.0;
      for (std::uint32_t e = start[c]; e < start[c + 1]; ++e) s += x[idx[e]] * val[e];
      y[c] = p.apply(s);
    }
  }
};

}  // namespace detail

// Runs one layer over a growing sequence, one row at a time.
class LayerRunner {
 public:
  LayerRunner(const LayerSpec& layer, PrecisionPolicy policy) : layer_(&layer), policy_(policy) {
    layer.validate();
    for (const auto& h : layer.heads) {
      HeadPlan hp;
      hp.q = detail::SparseCols(h.w_q, policy);
      hp.k = detail::SparseCols(h.w_k, policy);
      hp.v = detail::SparseCols(h.w_v, policy);
      hp.o = detail::SparseCols(h.w_o, policy);
      hp.dk = h.d_k();
      hp.dv = h.d_v();
      hp.scale = 1.0 / std::sqrt(static_cast<double>(hp.dk));
      // Query columns that are identically zero add exact zeros to every
      // logit, so the dot product may skip them.
      for (std::size_t d = 0; d < hp.dk; ++d)
        if (hp.q.start[d + 1] != hp.q.start[d]) hp.live.push_back(d);
      heads_.push_back(std::move(hp));
    }
    w1_ = detail::SparseCols(layer.ffn.w1, policy);
    w2_ = detail::SparseCols(layer.ffn.w2, policy);
    for (double b : layer.ffn.b1) b1_.push_back(policy.apply(b));
    attn_.assign(layer.d_attn(), 0.0);
    a_.assign(layer.a_width(), 0.0);
    hidden_.assign(layer.ffn.hidden(), 0.0);
    ffn_out_.assign(layer.ffn.w2.cols(), 0.0);
  }

  std::size_t rows() const { return rows_; }

  // Consumes the next input row (length d_in), writes the layer output row
  // (length d_out). The attention output of this row stays in attention().
  void step(const double* x, double* out) {
    const LayerSpec& L = *layer_;
    std::fill(attn_.begin(), attn_.end(), 0.0);
    for (auto& h : heads_) run_head(h, x);
    ++rows_;

    const std::size_t din = L.d_in;
    if (L.residual_mode == ResidualMode::concat) {
      std::copy(x, x + din, a_.begin());
      std::copy(attn_.begin(), attn_.end(), a_.begin() + static_cast<std::ptrdiff_t>(din));
    } else {
      for (std::size_t i = 0; i < din; ++i) a_[i] = attn_.empty() ? x[i] : policy_.apply(x[i] + attn_[i]);
    }

    w1_.apply(a_.data(), hidden_.data(), policy_);
    for (std::size_t j = 0; j < hidden_.size(); ++j)
      hidden_[j] = policy_.apply(gelu(policy_.apply(hidden_[j] + b1_[j])));
    w2_.apply(hidden_.data(), ffn_out_.data(), policy_);

    if (L.residual_mode == ResidualMode::concat) {
      std::copy(a_.begin(), a_.end(), out);
      std::copy(ffn_out_.begin(), ffn_out_.end(), out + a_.size());
    } else {
      for (std::size_t i = 0; i < din; ++i) out[i] = policy_.apply(a_[i] + ffn_out_[i]);
    }
  }

  const std::vector<double>& attention() const { return attn_; }

 private:
  struct HeadPlan {
    detail::SparseCols q, k, v, o;
    std::size_t dk = 0, dv = 0;
    double scale = 1.0;
    std::vector<std::size_t> live;
    std::vector<double> kcache, vcache;
  };

  void run_head(HeadPlan& h, const double* x) {
    const std::size_t t = rows_ + 1;  // rows visible to this query, including itself
    query_.resize(h.dk);
    h.q.apply(x, query_.data(), policy_);
    h.kcache.resize(t * h.dk);
    h.k.apply(x, h.kcache.data() + rows_ * h.dk, policy_);
    h.vcache.resize(t * h.dv);
    h.v.apply(x, h.vcache.data() + rows_ * h.dv, policy_);

    logits_.resize(t);
    double mx = -HUGE_VAL;
    for (std::size_t j = 0; j < t; ++j) {
      const double* kj = h.kcache.data() + j * h.dk;
      double s = 0.0;
      for (std::size_t d : h.live) s += query_[d] * kj[d];
      const double l = policy_.apply(policy_.apply(s) * h.scale);
      logits_[j] = l;
      mx = std::max(mx, l);
    }
    double total = 0.0;
    for (std::size_t j = 0; j < t; ++j) {
      const double z = logits_[j] - mx;
      // exp underflows to exactly 0 below about -745.13, so skipping the
      // call there changes nothing but the running time.
      const double e = z < -746.0 ? 0.0 : policy_.apply(std::exp(policy_.apply(z)));
      logits_[j] = e;
      total += e;
    }
    total = policy_.apply(total);
    mixed_.assign(h.dv, 0.0);
    for (std::size_t j = 0; j < t; ++j) {
      if (logits_[j] == 0.0) continue;
      const double p = policy_.apply(logits_[j] / total);
      if (p == 0.0) continue;
      const double* vj = h.vcache.data() + j * h.dv;
      for (std::size_t d = 0; d < h.dv; ++d) mixed_[d] += p * vj[d];
    }
    for (auto& m : mixed_) m = policy_.apply(m);
    head_out_.resize(attn_.size());
    h.o.apply(mixed_.data(), head_out_.data(), policy_);
    for (std::size_t c = 0; c < attn_.size(); ++c) attn_[c] = policy_.apply(attn_[c] + head_out_[c]);
  }

  const LayerSpec* layer_;
  PrecisionPolicy policy_;
  std::vector<HeadPlan> heads_;
  detail::SparseCols w1_, w2_;
  std::vector<double> b1_;
  std::size_t rows_ = 0;
  std::vector<double> attn_, a_, hidden_, ffn_out_, query_, logits_, mixed_, head_out_;
};

inline Matrix attention_forward(const LayerSpec& layer, const Matrix& states,
                                PrecisionPolicy policy = PrecisionPolicy::exact()) {
  if (states.rows() == 0) throw StructuralError("attention_forward needs at least one row");
  if (states.cols() != layer.d_in) throw StructuralError("state width does not match layer d_in");
  LayerRunner run(layer, policy);
  Matrix out(states.rows(), layer.d_attn());
  std::vector<double> scratch(layer.d_out);
  for (std::size_t i = 0; i < states.rows(); ++i) {
    run.step(states.row(i), scratch.data());
    std::copy(run.attention().begin(), run.attention().end(), out.row(i));
  }
  return out;
}

inline Matrix layer_forward(const LayerSpec& layer, const Matrix& states,
                            PrecisionPolicy policy = PrecisionPolicy::exact()) {
  if (states.rows() == 0) throw StructuralError("layer_forward needs at least one row");
  if (states.cols() != layer.d_in) throw StructuralError("state width does not match layer d_in");
  LayerRunner run(layer, policy);
  Matrix out(states.rows(), layer.d_out);
  for (std::size_t i = 0; i < states.rows(); ++i) run.step(states.row(i), out.row(i));
  return out;
}

// Every weight (and the readout) rounded to the policy's mantissa width.
inline WeightProgram quantize(const WeightProgram& program, PrecisionPolicy policy) {
  WeightProgram q = program;
  if (!policy.is_quantized()) return q;
  policy.validate();
  auto round_all = [&](Matrix& m) {
    for (auto& v : m.data()) v = policy.apply(v);
  };
  for (auto& l : q.layers) {
    for (auto& h : l.heads) {
      round_all(h.w_q);
      round_all(h.w_k);
      round_all(h.w_v);
      round_all(h.w_o);
    }
    round_all(l.ffn.w1);
    round_all(l.ffn.w2);
    for (auto& b : l.ffn.b1) b = policy.apply(b);
  }
  round_all(q.readout.map);
  return q;
}

// Streams tokens through a whole program.
class Evaluator {
 public:
  Evaluator(const WeightProgram& program, PrecisionPolicy policy) : program_(&program), policy_(policy) {
    if (policy.is_quantized()) policy.validate();
    program.validate();
    for (const auto& l : program.layers) {
      runners_.emplace_back(l, policy);
      buffers_.emplace_back(l.d_out, 0.0);
    }
    readout_ = detail::SparseCols(program.readout.map, policy);
  }

  std::size_t rows() const { return rows_; }

  // Runs the next token through every layer and returns the final hidden row.
  const std::vector<double>& push(const TapeToken& token) {
    if (program_->max_positions != 0 && rows_ >= program_->max_positions)
      throw DomainError("tape longer than the " + std::to_string(program_->max_positions) +
                        " positions this program was compiled for");
    ++rows_;
    embed_ = embed_token(token, rows_, program_->word_bits);
    const std::vector<double>* in = &embed_;
    for (std::size_t i = 0; i < runners_.size(); ++i) {
      runners_[i].step(in->data(), buffers_[i].data());
      in = &buffers_[i];
    }
    last_ = in;
    return *in;
  }

  const std::vector<double>& last() const { return *last_; }

  std::vector<double> readout(const std::vector<double>& hidden) const {
    std::vector<double> r(program_->word_bits + 1);
    readout_.apply(hidden.data(), r.data(), policy_);
    return r;
  }

 private:
  const WeightProgram* program_;
  PrecisionPolicy policy_;
  std::vector<LayerRunner> runners_;
  std::vector<std::vector<double>> buffers_;
  std::vector<double> embed_;
  const std::vector<double>* last_ = &embed_;
  detail::SparseCols readout_;
  std::size_t rows_ = 0;
};

inline constexpr double kReadoutMargin = 0.25;

// Threshold the readout channels into a token. `position` is only used to
// label a low-margin failure.
inline TapeToken decode_readout(const std::vector<double>& r, std::size_t position) {
  for (std::size_t c = 0; c < r.size(); ++c)
    if (!(std::abs(r[c] - 0.5) >= kReadoutMargin)) throw LowMarginError(position, c, r[c]);
  const std::size_t w = r.size() - 1;
  if (r[w] >= 0.5) return TapeToken::separator();
  std::uint64_t v = 0;
  for (std::size_t k = 0; k < w; ++k)
    if (r[k] >= 0.5) v |= std::uint64_t{1} << k;
  return TapeToken::number(v);
}

// Final hidden states for every row of `tape`.
inline Matrix forward(const WeightProgram& program, const Tape& tape,
                      PrecisionPolicy policy = PrecisionPolicy::exact()) {
  if (tape.empty()) throw DomainError("forward needs a non-empty tape");
  const WeightProgram prog = quantize(program, policy);
  Evaluator ev(prog, policy);
  Matrix out(tape.size(), prog.d_final());
  for (std::size_t i = 0; i < tape.size(); ++i) {
    const auto& h = ev.push(tape[i]);
    std::copy(h.begin(), h.end(), out.row(i));
  }
  return out;
}

inline Tape generate(const WeightProgram& program, const Tape& prompt, std::size_t steps,
                     PrecisionPolicy policy = PrecisionPolicy::exact()) {
  Tape tape = prompt;
  if (steps == 0) return tape;
  if (prompt.empty()) throw DomainError("generation needs a non-empty prompt");
  const WeightProgram prog = quantize(program, policy);
  const std::size_t needed = prompt.size() + steps - 1;
  if (prog.max_positions != 0 && needed > prog.max_positions)
    throw DomainError("generation would need " + std::to_string(needed) + " positions; program supports " +
                      std::to_string(prog.max_positions));
  Evaluator ev(prog, policy);
  for (const auto& t : prompt) ev.push(t);
  tape.reserve(prompt.size() + steps);
  for (std::size_t s = 0; s < steps; ++s) {
    const TapeToken next = decode_readout(ev.readout(ev.last()), tape.size());
    tape.push_back(next);
    if (s + 1 < steps) ev.push(next);
  }
  return tape;
}

// Independent tapes across worker threads. Each tape is produced by the
// same sequential routine, so the result does not depend on `threads`.
inline std::vector<Tape> generate_batch(const WeightProgram& program, const std::vector<Tape>& prompts,
                                        std::size_t steps, PrecisionPolicy policy, unsigned threads) {
  std::vector<Tape> out(prompts.size());
  std::vector<std::exception_ptr> errors(prompts.size());
  threads = std::max(1u, threads);
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < prompts.size(); i += threads) {
        try {
          out[i] = generate(program, prompts[i], steps, policy);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

// Rewrites any program into an all-concatenation program with the same
// readout. P tracks how the original residual stream is recovered from the
// concatenated one: h = s P.
inline WeightProgram to_concat(const WeightProgram& program) {
  program.validate();
  WeightProgram out = program;
  out.layers.clear();
  out.channels.clear();
  Matrix P = Matrix::identity(program.embed_width());
  for (const auto& L : program.layers) {
    LayerSpec C;
    C.tag = L.tag;
    C.residual_mode = ResidualMode::concat;
    C.d_in = P.rows();
    for (const auto& h : L.heads) {
      HeadWeights ch;
      ch.tag = h.tag;
      ch.w_q = matmul(P, h.w_q);
      ch.w_k = matmul(P, h.w_k);
      ch.w_v = matmul(P, h.w_v);
      ch.w_o = h.w_o;
      C.heads.push_back(std::move(ch));
    }
    const std::size_t dc = P.rows(), da = L.d_attn();
    const std::size_t orig_a = L.a_width();
    Matrix Q(dc + da, orig_a);
    for (std::size_t r = 0; r < dc; ++r)
      for (std::size_t c = 0; c < P.cols(); ++c) Q(r, c) = P(r, c);
    for (std::size_t k = 0; k < da; ++k) {
      const std::size_t col = L.residual_mode == ResidualMode::concat ? L.d_in + k : k;
      Q(dc + k, col) += 1.0;
    }
    C.ffn.w1 = matmul(Q, L.ffn.w1);
    C.ffn.b1 = L.ffn.b1;
    C.ffn.w2 = L.ffn.w2;
    const std::size_t df = L.ffn.w2.cols();
    C.d_out = dc + da + df;
    Matrix Pn(C.d_out, L.d_out);
    for (std::size_t r = 0; r < dc + da; ++r)
      for (std::size_t c = 0; c < orig_a; ++c) Pn(r, c) = Q(r, c);
    for (std::size_t k = 0; k < df; ++k) {
      const std::size_t col = L.residual_mode == ResidualMode::concat ? orig_a + k : k;
      Pn(dc + da + k, col) += 1.0;
    }
    out.layers.push_back(std::move(C));
    P = std::move(Pn);
  }
  out.readout.map = matmul(P, program.readout.map);
  return out;
}

}  // namespace prngformer
