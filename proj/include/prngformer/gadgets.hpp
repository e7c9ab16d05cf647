// Closed-form weight blocks for arithmetic and Boolean operations.
//
// Everything here is expressed through LayerBuilder, which assembles one
// concatenation-residual layer from
//   * attention value columns (forms read off a head, usually the
//     "self-select" head whose softmax puts all mass on the query row), and
//   * FFN hidden units, each a GeLU of an affine form, combined linearly
//     into new output channels.
// The compilers use the same emitters, so a gadget tested standalone is the
// exact arithmetic that appears inside compiled programs.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "prngformer/kernel.hpp"

namespace prngformer {

// Gain for position-selective attention: the logit of key j seen from
// query i is kSelfSelectGain * (j - i). Leakage onto row i-1 is e^-64.
inline constexpr double kSelfSelectGain = 64.0;
// Slope used for GeLU-approximated ReLUs evaluated on integer-valued
// inputs. A power of two keeps pre-activations exactly representable under
// mantissa truncation.
inline constexpr double kStepGain = 16.0;

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x * 0.70710678118654752440); }

// Added to every budget so that double rounding in the forward pass cannot
// push an output just past an otherwise tight analytic bound.
inline constexpr double kRoundingSlack = 1e-12;

// Worst deviation of one restoring step pair at integer inputs.
inline double step_pair_error(double lambda) {
  return 0.5 * normal_cdf(-lambda / 4.0) + 1.5 * normal_cdf(-3.0 * lambda / 4.0);
}

inline double pow2_at_least(double x) { return std::exp2(std::ceil(std::log2(std::max(x, 1.0)))); }

// Sparse affine form over channels: sum(coef * channel) + constant.
struct Form {
  std::vector<std::pair<std::size_t, double>> terms;
  double constant = 0.0;

  static Form ch(std::size_t i, double c = 1.0) {
    Form f;
    f.terms.emplace_back(i, c);
    return f;
  }
  static Form k(double c) {
    Form f;
    f.constant = c;
    return f;
  }

  Form& operator+=(const Form& o) {
    terms.insert(terms.end(), o.terms.begin(), o.terms.end());
    constant += o.constant;
    return *this;
  }
  Form& operator*=(double s) {
    for (auto& t : terms) t.second *= s;
    constant *= s;
    return *this;
  }
  friend Form operator+(Form a, const Form& b) { return a += b; }
  friend Form operator-(Form a, Form b) { return a += (b *= -1.0); }
  friend Form operator*(Form a, double s) { return a *= s; }
  friend Form operator*(double s, Form a) { return a *= s; }
};

// Hidden-unit contributions to one FFN output: (hidden index, weight).
using Terms = std::vector<std::pair<std::size_t, double>>;

inline void accumulate(Terms& dst, const Terms& src, double scale = 1.0) {
  for (const auto& [h, w] : src) dst.emplace_back(h, w * scale);
}

class LayerBuilder {
 public:
  LayerBuilder(std::size_t d_in, std::size_t one_channel, std::size_t pos_channel, std::string tag)
      : d_in_(d_in), one_(one_channel), pos_(pos_channel), tag_(std::move(tag)) {}

  std::size_t d_in() const { return d_in_; }
  std::size_t one() const { return one_; }
  std::size_t pos() const { return pos_; }

  // ----- attention phase -----

  // Adds a column to the layer's self-select head; returns the channel
  // (in the layer output) that will hold `f` evaluated on the query row.
  std::size_t self_value(const Form& f) {
    if (!self_head_) {
      const double g = kSelfSelectGain;
      self_head_ = add_head({Form::ch(one_, g), Form::ch(pos_, -g)}, {Form::ch(pos_), Form::ch(one_)}, {},
                            "self-select");
    }
    return add_value(*self_head_, f);
  }

  // Adds a head with the given query/key forms. Widths are padded to the
  // next perfect square so the 1/sqrt(d_k) factor is compensated exactly.
  std::size_t add_head(std::vector<Form> q, std::vector<Form> k, const std::vector<Form>& values, std::string tag) {
    require_attention_phase();
    if (q.size() != k.size() || q.empty()) throw StructuralError("head needs equally many query and key forms");
    std::size_t root = 1;
    while (root * root < q.size()) ++root;
    const double scale = static_cast<double>(root);
    for (auto& f : q) f *= scale;
    while (q.size() < root * root) {
      q.push_back(Form{});
      k.push_back(Form{});
    }
    heads_.push_back(HeadDraft{std::move(q), std::move(k), {}, {}, std::move(tag)});
    const std::size_t h = heads_.size() - 1;
    for (const auto& v : values) add_value(h, v);
    return h;
  }

  std::size_t add_value(std::size_t head, const Form& f) {
    require_attention_phase();
    heads_.at(head).values.push_back(f);
    heads_.at(head).channel.push_back(attn_count_);
    return d_in_ + attn_count_++;
  }

  // Channels produced so far by value columns of `head`, in order.
  std::vector<std::size_t> head_channels(std::size_t head) const {
    std::vector<std::size_t> out;
    for (std::size_t c : heads_.at(head).channel) out.push_back(d_in_ + c);
    return out;
  }

  // ----- FFN phase (operates on the post-attention width) -----

  std::size_t unit(const Form& pre) {
    sealed_ = true;
    units_.push_back(pre);
    return units_.size() - 1;
  }

  // Hidden unit that evaluates to exactly 1 after scaling: GeLU(16) = 16 in
  // double precision. Shared across the layer.
  std::size_t bias_unit() {
    if (!bias_) bias_ = unit(Form::k(kStepGain));
    return *bias_;
  }

  std::size_t output(const Terms& terms) {
    sealed_ = true;
    outputs_.push_back(terms);
    return d_in_ + attn_count_ + outputs_.size() - 1;
  }

  std::size_t a_width() const { return d_in_ + attn_count_; }
  std::size_t d_out() const { return d_in_ + attn_count_ + outputs_.size(); }

  LayerSpec build() const {
    LayerSpec L;
    L.tag = tag_;
    L.residual_mode = ResidualMode::concat;
    L.d_in = d_in_;
    const std::size_t da = attn_count_;
    for (const auto& hd : heads_) {
      HeadWeights h;
      h.tag = hd.tag;
      const std::size_t dk = hd.q.size();
      h.w_q = Matrix(d_in_, dk);
      h.w_k = Matrix(d_in_, dk);
      for (std::size_t c = 0; c < dk; ++c) {
        place(h.w_q, hd.q[c], c, nullptr);
        place(h.w_k, hd.k[c], c, nullptr);
      }
      const std::size_t dv = std::max<std::size_t>(hd.values.size(), 1);
      h.w_v = Matrix(d_in_, dv);
      h.w_o = Matrix(dv, da);
      for (std::size_t c = 0; c < hd.values.size(); ++c) {
        place(h.w_v, hd.values[c], c, nullptr);
        h.w_o(c, hd.channel[c]) = 1.0;
      }
      L.heads.push_back(std::move(h));
    }
    const std::size_t aw = d_in_ + da;
    const std::size_t hidden = std::max<std::size_t>(units_.size(), 1);
    L.ffn.w1 = Matrix(aw, hidden);
    L.ffn.b1.assign(hidden, 0.0);
    for (std::size_t u = 0; u < units_.size(); ++u) place(L.ffn.w1, units_[u], u, &L.ffn.b1[u]);
    L.ffn.w2 = Matrix(hidden, outputs_.size());
    for (std::size_t o = 0; o < outputs_.size(); ++o)
      for (const auto& [h, w] : outputs_[o]) L.ffn.w2(h, o) += w;
    L.d_out = aw + outputs_.size();
    L.validate();
    return L;
  }

 private:
  struct HeadDraft {
    std::vector<Form> q, k, values;
    std::vector<std::size_t> channel;
    std::string tag;
  };

  void require_attention_phase() const {
    if (sealed_) throw StructuralError("attention columns must be added before any FFN unit");
  }

  // Writes form f into column c of m. Constants go to the bias slot when
  // one is given, otherwise onto the constant-one channel.
  void place(Matrix& m, const Form& f, std::size_t c, double* bias) const {
    for (const auto& [i, w] : f.terms) {
      if (i >= m.rows()) throw StructuralError("form references channel " + std::to_string(i) + " out of range");
      m(i, c) += w;
    }
    if (f.constant != 0.0) {
      if (bias)
        *bias += f.constant;
      else
        m(one_, c) += f.constant;
    }
  }

  std::size_t d_in_, one_, pos_;
  std::string tag_;
  std::vector<HeadDraft> heads_;
  std::optional<std::size_t> self_head_;
  std::size_t attn_count_ = 0;
  bool sealed_ = false;
  std::vector<Form> units_;
  std::vector<Terms> outputs_;
  std::optional<std::size_t> bias_;
};

// ---------------------------------------------------------------------------
// FFN emitters. Each returns the hidden-unit terms of one scalar quantity;
// callers add the terms of several quantities into one output when needed.

// ReLU(z) ~ GeLU(lambda z) / lambda. Worst error 0.17/lambda near z = 0.
inline Terms relu_terms(LayerBuilder& b, const Form& z, double lambda) {
  return {{b.unit(z * lambda), 1.0 / lambda}};
}

inline Terms const_terms(LayerBuilder& b, double c) {
  if (c == 0.0) return {};
  return {{b.bias_unit(), c / kStepGain}};
}

// Indicator [z >= k] for integer-valued z, as 2 ReLU(z-k+3/4) - 2 ReLU(z-k+1/4).
// Flat on both sides, so it absorbs input noise below 1/4.
inline Terms step_terms(LayerBuilder& b, const Form& z, double k, double lambda = kStepGain) {
  const std::size_t hi = b.unit((z + Form::k(0.75 - k)) * lambda);
  const std::size_t lo = b.unit((z + Form::k(0.25 - k)) * lambda);
  return {{hi, 2.0 / lambda}, {lo, -2.0 / lambda}};
}

// Piecewise-constant function of an integer-valued form. `points` must be
// strictly increasing integers and values[p][o] is output o at points[p].
// Returns one Terms list per output.
inline std::vector<Terms> lookup_terms(LayerBuilder& b, const Form& z, const std::vector<std::int64_t>& points,
                                       const std::vector<std::vector<double>>& values, double lambda = kStepGain) {
  if (points.empty() || points.size() != values.size()) throw StructuralError("lookup table shape mismatch");
  const std::size_t outs = values.front().size();
  std::vector<Terms> result(outs);
  for (std::size_t o = 0; o < outs; ++o) result[o] = const_terms(b, values[0][o]);
  for (std::size_t p = 1; p < points.size(); ++p) {
    if (points[p] <= points[p - 1]) throw StructuralError("lookup points must increase");
    bool any = false;
    for (std::size_t o = 0; o < outs; ++o) any = any || values[p][o] != values[p - 1][o];
    if (!any) continue;
    const Terms st = step_terms(b, z, static_cast<double>(points[p]), lambda);
    for (std::size_t o = 0; o < outs; ++o) {
      const double delta = values[p][o] - values[p - 1][o];
      if (delta != 0.0) accumulate(result[o], st, delta);
    }
  }
  return result;
}

// Selection x if t >= 0 else y, for every coordinate, valid when
// |t| >= alpha and |x|,|y| <= M:
//   ReLU(x + Kt) - ReLU(Kt) + ReLU(y - Kt) - ReLU(-Kt),  K = 2M/alpha.
// Uses 2d + 2 hidden units; the two t-only units are shared.
inline std::vector<Terms> select_terms(LayerBuilder& b, const std::vector<Form>& x, const std::vector<Form>& y,
                                       const Form& t, double M, double alpha, double lambda) {
  if (x.size() != y.size()) throw StructuralError("selector branches differ in width");
  const double K = 2.0 * M / alpha;
  const Terms pos = relu_terms(b, t * K, lambda);
  const Terms neg = relu_terms(b, t * (-K), lambda);
  std::vector<Terms> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    accumulate(out[i], relu_terms(b, x[i] + t * K, lambda));
    accumulate(out[i], pos, -1.0);
    accumulate(out[i], relu_terms(b, y[i] - t * K, lambda));
    accumulate(out[i], neg, -1.0);
  }
  return out;
}

// Selector slope meeting `eps`: all four ReLU arguments sit at distance >= M
// from the kink, where the GeLU error is M * Phi(-lambda M).
inline double selector_gain(double M, double eps) {
  double lambda = pow2_at_least(1.0 / M);
  while (4.0 * M * normal_cdf(-lambda * M) > eps) lambda *= 2.0;
  return lambda;
}

// Product a*b on [-M, M]^2 with four GeLU units. With s(x) = GeLU(x) + GeLU(-x)
// = sqrt(2/pi) (x^2 - x^4/6 + ...), the combination
//   [s(d(a+b)) - s(d(a-b))] / (4 d^2 sqrt(2/pi))
// equals ab - d^2 ab(a^2+b^2)/3 + ..., so d^2 = eps / (2 M^4) keeps the error
// near eps/3.
struct ProductParams {
  double delta;
  double scale;
};

inline ProductParams product_params(double M, double eps) {
  const double d2 = eps / (2.0 * M * M * M * M);
  return {std::sqrt(d2), 1.0 / (4.0 * d2 * std::sqrt(2.0 / M_PI))};
}

inline Terms product_terms(LayerBuilder& b, const Form& a, const Form& c, double M, double eps) {
  const auto p = product_params(M, eps);
  const Form sum = a + c, diff = a - c;
  return {{b.unit(sum * p.delta), p.scale},
          {b.unit(sum * -p.delta), p.scale},
          {b.unit(diff * p.delta), -p.scale},
          {b.unit(diff * -p.delta), -p.scale}};
}

// ---------------------------------------------------------------------------
// Value-path maps for the constant Boolean operations. Each returns, per
// output bit, the affine form of the input bits it reads.

enum class GadgetKind {
  PRODUCT, RELU, SELECT, FLOORDIV, MOD,
  CONST_AND, CONST_OR, CONST_XOR, NOT, SHL, SHR,
  VAR_AND, VAR_OR, VAR_XOR, FANIN_AND, FANIN_OR
};

inline const char* to_string(GadgetKind k) {
  switch (k) {
    case GadgetKind::PRODUCT: return "PRODUCT";
    case GadgetKind::RELU: return "RELU";
    case GadgetKind::SELECT: return "SELECT";
    case GadgetKind::FLOORDIV: return "FLOORDIV";
    case GadgetKind::MOD: return "MOD";
    case GadgetKind::CONST_AND: return "CONST_AND";
    case GadgetKind::CONST_OR: return "CONST_OR";
    case GadgetKind::CONST_XOR: return "CONST_XOR";
    case GadgetKind::NOT: return "NOT";
    case GadgetKind::SHL: return "SHL";
    case GadgetKind::SHR: return "SHR";
    case GadgetKind::VAR_AND: return "VAR_AND";
    case GadgetKind::VAR_OR: return "VAR_OR";
    case GadgetKind::VAR_XOR: return "VAR_XOR";
    case GadgetKind::FANIN_AND: return "FANIN_AND";
    case GadgetKind::FANIN_OR: return "FANIN_OR";
  }
  return "?";
}

inline std::vector<Form> const_bool_forms(GadgetKind kind, const std::vector<Form>& bits, std::uint64_t c) {
  const std::size_t w = bits.size();
  std::vector<Form> out(w);
  for (std::size_t k = 0; k < w; ++k) {
    const bool ck = ((c >> k) & 1u) != 0;
    switch (kind) {
      case GadgetKind::CONST_AND: out[k] = ck ? bits[k] : Form{}; break;
      case GadgetKind::CONST_OR: out[k] = ck ? Form::k(1.0) : bits[k]; break;
      case GadgetKind::CONST_XOR: out[k] = ck ? Form::k(1.0) - bits[k] : bits[k]; break;
      case GadgetKind::NOT: out[k] = Form::k(1.0) - bits[k]; break;
      case GadgetKind::SHL: out[k] = k >= c ? bits[k - c] : Form{}; break;
      case GadgetKind::SHR: out[k] = k + c < w ? bits[k + c] : Form{}; break;
      default: throw StructuralError(std::string("not a constant Boolean gadget: ") + to_string(kind));
    }
  }
  return out;
}

// How VAR_XOR is realized. `product` squares x - y with the product unit.
// `modular` evaluates (x + y) mod 2 with restoring step units, which keeps
// errors from compounding through long XOR chains.
enum class XorRoute { product, modular };

// Per-bit FFN terms for a binary Boolean operation whose attention stage
// already produced the combination the formula needs:
//   VAR_AND: s = x + y - 1       -> ReLU(s)
//   VAR_OR:  s = 1 - x - y       -> 1 - ReLU(s)
//   VAR_XOR product: s = x - y   -> s^2
//   VAR_XOR modular: s = x + y   -> [s >= 1] - [s >= 2]
inline Terms binary_bool_terms(LayerBuilder& b, GadgetKind kind, XorRoute route, const Form& s, double lambda,
                               double product_eps) {
  switch (kind) {
    case GadgetKind::VAR_AND: return relu_terms(b, s, lambda);
    case GadgetKind::VAR_OR: {
      Terms t = const_terms(b, 1.0);
      accumulate(t, relu_terms(b, s, lambda), -1.0);
      return t;
    }
    case GadgetKind::VAR_XOR:
      if (route == XorRoute::product) return product_terms(b, s, s, 2.0, product_eps);
      {
        Terms t = step_terms(b, s, 1.0);
        accumulate(t, step_terms(b, s, 2.0), -1.0);
        return t;
      }
    default: throw StructuralError(std::string("not a binary Boolean gadget: ") + to_string(kind));
  }
}

inline Form binary_bool_combination(GadgetKind kind, XorRoute route, const Form& x, const Form& y) {
  switch (kind) {
    case GadgetKind::VAR_AND: return x + y - Form::k(1.0);
    case GadgetKind::VAR_OR: return Form::k(1.0) - x - y;
    case GadgetKind::VAR_XOR: return route == XorRoute::product ? x - y : x + y;
    default: throw StructuralError(std::string("not a binary Boolean gadget: ") + to_string(kind));
  }
}

// ---------------------------------------------------------------------------
// Standalone blocks.

struct GadgetBlock {
  GadgetKind kind{};
  std::vector<LayerSpec> layers;
  std::size_t input_width = 0;
  std::size_t pos_channel = 0;
  std::size_t one_channel = 0;
  std::map<std::string, std::vector<std::size_t>> in_channels;
  std::map<std::string, std::vector<std::size_t>> out_channels;
  double eps_budget = 0.0;      // max output error on the contract domain
  double lipschitz = 1.0;       // output error per unit of input error
  double weight_bound = 0.0;    // recorded polynomial bound on max |weight|
  std::string provenance;       // which construction the block uses

  double max_abs_weight() const {
    double m = 0.0;
    for (const auto& l : layers) {
      for (const auto& h : l.heads)
        m = std::max({m, h.w_q.max_abs(), h.w_k.max_abs(), h.w_v.max_abs(), h.w_o.max_abs()});
      m = std::max({m, l.ffn.w1.max_abs(), l.ffn.w2.max_abs()});
      for (double v : l.ffn.b1) m = std::max(m, std::abs(v));
    }
    return m;
  }

  // Fresh input matrix: position and constant channels filled in, all
  // operand channels zero.
  Matrix inputs(std::size_t rows) const {
    Matrix m(rows, input_width);
    for (std::size_t r = 0; r < rows; ++r) {
      m(r, pos_channel) = static_cast<double>(r + 1);
      m(r, one_channel) = 1.0;
    }
    return m;
  }

  void set(Matrix& m, std::size_t row, const std::string& group, const std::vector<double>& values) const {
    const auto& ch = in_channels.at(group);
    if (values.size() != ch.size()) throw StructuralError("operand '" + group + "' has the wrong width");
    for (std::size_t i = 0; i < ch.size(); ++i) m(row, ch[i]) = values[i];
  }

  Matrix run(const Matrix& in, PrecisionPolicy policy = PrecisionPolicy::exact()) const {
    Matrix s = in;
    for (const auto& l : layers) s = layer_forward(l, s, policy);
    return s;
  }

  std::vector<double> get(const Matrix& out, std::size_t row, const std::string& group) const {
    std::vector<double> v;
    for (std::size_t c : out_channels.at(group)) v.push_back(out(row, c));
    return v;
  }
};

// End-to-end bound for a chain of blocks: each block's own error is
// amplified by the Lipschitz factors of every block after it.
inline double pipeline_error_bound(const std::vector<const GadgetBlock*>& chain) {
  double e = 0.0;
  for (const auto* g : chain) e = g->lipschitz * e + g->eps_budget;
  return e;
}

namespace detail {

struct BlockLayout {
  std::size_t next = 0;
  std::map<std::string, std::vector<std::size_t>> groups;

  std::vector<std::size_t> add(const std::string& name, std::size_t count) {
    std::vector<std::size_t> ch(count);
    std::iota(ch.begin(), ch.end(), next);
    next += count;
    groups[name] = ch;
    return ch;
  }
};

inline std::vector<Form> forms_of(const std::vector<std::size_t>& ch) {
  std::vector<Form> f;
  for (std::size_t c : ch) f.push_back(Form::ch(c));
  return f;
}

inline GadgetBlock finish_block(GadgetKind kind, const BlockLayout& lay, const LayerBuilder& b,
                                std::vector<std::size_t> outputs, std::string provenance) {
  GadgetBlock g;
  g.kind = kind;
  g.layers.push_back(b.build());
  g.input_width = b.d_in();
  g.pos_channel = b.pos();
  g.one_channel = b.one();
  g.in_channels = lay.groups;
  g.out_channels["out"] = std::move(outputs);
  g.provenance = std::move(provenance);
  return g;
}

inline LayerBuilder block_builder(BlockLayout& lay, const std::string& tag) {
  const std::size_t pos = lay.next++;
  const std::size_t one = lay.next++;
  return LayerBuilder(lay.next, one, pos, tag);
}

}  // namespace detail

inline GadgetBlock build_product_unit(double M, double eps) {
  if (!(M >= 1.0) || !(eps > 0.0 && eps < 1.0)) throw DomainError("product unit needs M >= 1 and 0 < eps < 1");
  detail::BlockLayout lay;
  const auto a = lay.add("a", 1), c = lay.add("b", 1);
  auto b = detail::block_builder(lay, "product");
  const std::size_t out = b.output(product_terms(b, Form::ch(a[0]), Form::ch(c[0]), M, eps));
  auto g = detail::finish_block(GadgetKind::PRODUCT, lay, b, {out}, "product from four GeLU units");
  g.eps_budget = kRoundingSlack + eps;
  g.lipschitz = 2.0 * M;
  g.weight_bound = std::pow(M, 4) / eps;
  return g;
}

inline GadgetBlock build_relu_unit(double eps) {
  if (!(eps > 0.0 && eps < 1.0)) throw DomainError("ReLU unit needs 0 < eps < 1");
  const double lambda = pow2_at_least(0.17 / eps);
  detail::BlockLayout lay;
  const auto x = lay.add("x", 1);
  auto b = detail::block_builder(lay, "relu");
  const std::size_t out = b.output(relu_terms(b, Form::ch(x[0]), lambda));
  auto g = detail::finish_block(GadgetKind::RELU, lay, b, {out}, "ReLU via scaled GeLU");
  g.eps_budget = kRoundingSlack + 0.17 / lambda;
  g.lipschitz = 1.0;
  g.weight_bound = 0.34 / eps;
  return g;
}

inline GadgetBlock build_selector_unit(std::size_t d, double M, double alpha, double eps) {
  if (d == 0 || !(M > 0.0) || !(alpha > 0.0) || !(eps > 0.0)) throw DomainError("selector needs d >= 1, M, alpha, eps > 0");
  const double lambda = selector_gain(M, eps);
  detail::BlockLayout lay;
  const auto x = lay.add("x", d), y = lay.add("y", d), t = lay.add("t", 1);
  auto b = detail::block_builder(lay, "select");
  const auto terms =
      select_terms(b, detail::forms_of(x), detail::forms_of(y), Form::ch(t[0]), M, alpha, lambda);
  std::vector<std::size_t> outs;
  for (const auto& tm : terms) outs.push_back(b.output(tm));
  auto g = detail::finish_block(GadgetKind::SELECT, lay, b, outs, "branch selection, hidden width 2d+2");
  g.eps_budget = kRoundingSlack + 4.0 * M * normal_cdf(-lambda * M);
  g.lipschitz = 1.0;
  // Phi(-u) <= exp(-u^2/2) and sqrt(2 ln x) <= x give lambda <= 2 max(1/M, 2/eps).
  g.weight_bound = 2.0 * std::max(1.0 / M, 2.0 / eps) * (2.0 * M / alpha + 1.0);
  return g;
}

// floor(i / divisor) for integers i in [1, max_input], as a sum of steps at
// the multiples of the divisor.
inline GadgetBlock build_floor_div_unit(std::int64_t divisor, std::int64_t max_input) {
  if (divisor < 1 || max_input < 1) throw DomainError("floor unit needs a positive divisor and range");
  detail::BlockLayout lay;
  const auto i = lay.add("i", 1);
  auto b = detail::block_builder(lay, "floor");
  Terms t;
  std::size_t steps = 0;
  for (std::int64_t j = 1; j * divisor <= max_input; ++j, ++steps)
    accumulate(t, step_terms(b, Form::ch(i[0]), static_cast<double>(j * divisor)));
  const std::size_t out = b.output(t);
  auto g = detail::finish_block(GadgetKind::FLOORDIV, lay, b, {out}, "floor division as a sum of step indicators");
  g.eps_budget = kRoundingSlack + std::max<double>(1, steps) * step_pair_error(kStepGain);
  g.lipschitz = 0.0;  // restoring on integer inputs with noise below 1/4
  g.weight_bound = kStepGain * static_cast<double>(max_input + 1);
  return g;
}

inline GadgetBlock build_floor_div_unit(std::int64_t n) { return build_floor_div_unit(n, n * n); }

// i mod divisor = i - divisor * floor(i / divisor); i itself passes through a
// GeLU unit that is the identity for i >= 1.
inline GadgetBlock build_mod_unit(std::int64_t divisor, std::int64_t max_input) {
  if (divisor < 1 || max_input < 1) throw DomainError("mod unit needs a positive divisor and range");
  detail::BlockLayout lay;
  const auto i = lay.add("i", 1);
  auto b = detail::block_builder(lay, "mod");
  Terms t = relu_terms(b, Form::ch(i[0]), kStepGain);
  std::size_t steps = 0;
  for (std::int64_t j = 1; j * divisor <= max_input; ++j, ++steps)
    accumulate(t, step_terms(b, Form::ch(i[0]), static_cast<double>(j * divisor)), -static_cast<double>(divisor));
  const std::size_t out = b.output(t);
  auto g = detail::finish_block(GadgetKind::MOD, lay, b, {out}, "remainder as i minus divisor times floor");
  g.eps_budget = kRoundingSlack + static_cast<double>(divisor) * std::max<double>(1, steps) * step_pair_error(kStepGain) +
                 normal_cdf(-kStepGain);
  g.lipschitz = 1.0;
  g.weight_bound = kStepGain * static_cast<double>(max_input + 1) + 2.0 * static_cast<double>(divisor);
  return g;
}

inline GadgetBlock build_mod_unit(std::int64_t n) { return build_mod_unit(n, n * n); }

inline double attention_leakage_bound() {
  const double e = std::exp(-kSelfSelectGain);
  return 2.0 * e / (1.0 - e);
}

inline GadgetBlock build_const_bool_layer(GadgetKind kind, std::size_t w, std::uint64_t c) {
  if (w == 0 || w > 63) throw DomainError("width must lie in [1, 63]");
  if ((kind == GadgetKind::SHL || kind == GadgetKind::SHR) && c >= w)
    throw DomainError("shift amount must be below the width");
  if ((kind == GadgetKind::CONST_AND || kind == GadgetKind::CONST_OR || kind == GadgetKind::CONST_XOR) && (c >> w) != 0)
    throw DomainError("constant does not fit in the width");
  detail::BlockLayout lay;
  const auto x = lay.add("x", w);
  auto b = detail::block_builder(lay, to_string(kind));
  std::vector<std::size_t> outs;
  for (const auto& f : const_bool_forms(kind, detail::forms_of(x), c)) outs.push_back(b.self_value(f));
  auto g = detail::finish_block(kind, lay, b, outs, "bitwise op with a constant, position-selective value path");
  g.eps_budget = kRoundingSlack + attention_leakage_bound();
  g.lipschitz = 1.0;
  g.weight_bound = 2.0 * kSelfSelectGain;
  return g;
}

inline GadgetBlock build_binary_bool_layer(GadgetKind kind, std::size_t w, XorRoute route = XorRoute::product,
                                           double eps = 1e-3) {
  if (w == 0 || w > 63) throw DomainError("width must lie in [1, 63]");
  if (!(eps > 0.0 && eps < 1.0)) throw DomainError("eps must lie in (0, 1)");
  const double lambda = std::max(kStepGain, pow2_at_least(0.17 / eps));
  detail::BlockLayout lay;
  const auto x = lay.add("x", w), y = lay.add("y", w);
  auto b = detail::block_builder(lay, to_string(kind));
  std::vector<std::size_t> combos;
  for (std::size_t k = 0; k < w; ++k)
    combos.push_back(b.self_value(binary_bool_combination(kind, route, Form::ch(x[k]), Form::ch(y[k]))));
  std::vector<std::size_t> outs;
  for (std::size_t k = 0; k < w; ++k)
    outs.push_back(b.output(binary_bool_terms(b, kind, route, Form::ch(combos[k]), lambda, eps)));
  const bool modular = kind == GadgetKind::VAR_XOR && route == XorRoute::modular;
  auto g = detail::finish_block(kind, lay, b, outs,
                                kind == GadgetKind::VAR_AND  ? "AND as ReLU(x + y - 1)"
                                : kind == GadgetKind::VAR_OR ? "OR as 1 - ReLU(1 - x - y)"
                                : modular                    ? "XOR as (x + y) mod 2 through restoring steps"
                                                             : "XOR as (x - y) squared through the product unit");
  if (kind == GadgetKind::VAR_XOR && route == XorRoute::product) {
    g.eps_budget = kRoundingSlack + eps + attention_leakage_bound();
    g.lipschitz = 4.0;
    g.weight_bound = 16.0 / eps + 2.0 * kSelfSelectGain;
  } else if (modular) {
    g.eps_budget = kRoundingSlack + 2.0 * step_pair_error(kStepGain) + attention_leakage_bound();
    g.lipschitz = 0.0;
    g.weight_bound = 2.0 * kSelfSelectGain + 2.0 * kStepGain;
  } else {
    g.eps_budget = kRoundingSlack + 0.17 / lambda + attention_leakage_bound();
    g.lipschitz = 2.0;
    g.weight_bound = 2.0 * kSelfSelectGain + 0.34 / eps + kStepGain;
  }
  return g;
}

// k-ary gates on Boolean inputs as restoring indicators of the input sum:
// AND = [sum >= k], OR = [sum >= 1]. An empty AND is the constant 1.
inline Terms fanin_terms(LayerBuilder& b, GadgetKind kind, const std::vector<Form>& inputs) {
  Form sum;
  for (const auto& f : inputs) sum += f;
  const double k = kind == GadgetKind::FANIN_AND ? static_cast<double>(inputs.size()) : 1.0;
  if (kind != GadgetKind::FANIN_AND && kind != GadgetKind::FANIN_OR)
    throw StructuralError(std::string("not a fan-in gate: ") + to_string(kind));
  return step_terms(b, sum, k);
}

inline GadgetBlock build_fanin_gate(GadgetKind kind, std::size_t k) {
  if (k == 0) throw DomainError("fan-in must be at least 1");
  detail::BlockLayout lay;
  const auto x = lay.add("x", k);
  auto b = detail::block_builder(lay, to_string(kind));
  const std::size_t out = b.output(fanin_terms(b, kind, detail::forms_of(x)));
  auto g = detail::finish_block(kind, lay, b, {out}, "k-ary gate as a restoring step indicator");
  g.eps_budget = kRoundingSlack + step_pair_error(kStepGain);
  g.lipschitz = 0.0;
  g.weight_bound = kStepGain * (static_cast<double>(k) + 1.0);
  return g;
}

}  // namespace prngformer
