#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "prngformer/prngformer.hpp"
#include "test_support.hpp"

namespace pf = prngformer;
using pf::Matrix;

namespace {

Matrix random_matrix(std::mt19937_64& rng, std::size_t r, std::size_t c, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  Matrix m(r, c);
  for (auto& v : m.data()) v = u(rng);
  return m;
}

// Empty FFN: one hidden unit, no outputs.
pf::FfnWeights null_ffn(std::size_t a_width) { return {Matrix(a_width, 1), {0.0}, Matrix(1, 0)}; }

pf::LayerSpec random_layer(std::mt19937_64& rng, std::size_t d_in, std::size_t heads, std::size_t d_attn,
                           std::size_t hidden, std::size_t ffn_out, pf::ResidualMode mode) {
  pf::LayerSpec L;
  L.residual_mode = mode;
  L.d_in = d_in;
  for (std::size_t h = 0; h < heads; ++h) {
    pf::HeadWeights hw;
    hw.w_q = random_matrix(rng, d_in, 2);
    hw.w_k = random_matrix(rng, d_in, 2);
    hw.w_v = random_matrix(rng, d_in, 3);
    hw.w_o = random_matrix(rng, 3, d_attn);
    L.heads.push_back(hw);
  }
  const std::size_t aw = L.a_width();
  L.ffn.w1 = random_matrix(rng, aw, hidden);
  L.ffn.b1.resize(hidden);
  for (auto& b : L.ffn.b1) b = std::uniform_real_distribution<double>(-1, 1)(rng);
  L.ffn.w2 = random_matrix(rng, hidden, ffn_out);
  L.d_out = mode == pf::ResidualMode::concat ? aw + ffn_out : d_in;
  L.validate();
  return L;
}

// Straight-line evaluation of the layer formulas on the whole matrix,
// written independently of the incremental kernel.
Matrix dense_attention(const pf::LayerSpec& L, const Matrix& X) {
  const std::size_t T = X.rows();
  Matrix out(T, L.d_attn());
  for (const auto& h : L.heads) {
    const Matrix Q = pf::matmul(X, h.w_q), K = pf::matmul(X, h.w_k), V = pf::matmul(X, h.w_v);
    for (std::size_t i = 0; i < T; ++i) {
      std::vector<double> s(i + 1);
      double mx = -1e300;
      for (std::size_t j = 0; j <= i; ++j) {
        double dot = 0;
        for (std::size_t d = 0; d < Q.cols(); ++d) dot += Q(i, d) * K(j, d);
        s[j] = dot / std::sqrt(static_cast<double>(Q.cols()));
        mx = std::max(mx, s[j]);
      }
      double z = 0;
      for (auto& v : s) z += (v = std::exp(v - mx));
      std::vector<double> mixed(V.cols(), 0.0);
      for (std::size_t j = 0; j <= i; ++j)
        for (std::size_t d = 0; d < V.cols(); ++d) mixed[d] += s[j] / z * V(j, d);
      for (std::size_t c = 0; c < out.cols(); ++c)
        for (std::size_t d = 0; d < V.cols(); ++d) out(i, c) += mixed[d] * h.w_o(d, c);
    }
  }
  return out;
}

Matrix dense_layer(const pf::LayerSpec& L, const Matrix& X) {
  const Matrix A = dense_attention(L, X);
  const std::size_t T = X.rows();
  Matrix a(T, L.a_width());
  for (std::size_t i = 0; i < T; ++i) {
    if (L.residual_mode == pf::ResidualMode::concat) {
      for (std::size_t c = 0; c < L.d_in; ++c) a(i, c) = X(i, c);
      for (std::size_t c = 0; c < A.cols(); ++c) a(i, L.d_in + c) = A(i, c);
    } else {
      for (std::size_t c = 0; c < L.d_in; ++c) a(i, c) = X(i, c) + (L.heads.empty() ? 0.0 : A(i, c));
    }
  }
  Matrix H = pf::matmul(a, L.ffn.w1);
  for (std::size_t i = 0; i < T; ++i)
    for (std::size_t j = 0; j < H.cols(); ++j) {
      const double x = H(i, j) + L.ffn.b1[j];
      H(i, j) = x * 0.5 * (1.0 + std::erf(x / std::sqrt(2.0)));
    }
  const Matrix F = pf::matmul(H, L.ffn.w2);
  Matrix out(T, L.d_out);
  for (std::size_t i = 0; i < T; ++i) {
    if (L.residual_mode == pf::ResidualMode::concat) {
      for (std::size_t c = 0; c < a.cols(); ++c) out(i, c) = a(i, c);
      for (std::size_t c = 0; c < F.cols(); ++c) out(i, a.cols() + c) = F(i, c);
    } else {
      for (std::size_t c = 0; c < L.d_in; ++c) out(i, c) = a(i, c) + F(i, c);
    }
  }
  return out;
}

double max_diff(const Matrix& a, const Matrix& b) {
  EXPECT_EQ(a.rows(), b.rows());
  EXPECT_EQ(a.cols(), b.cols());
  double m = 0;
  for (std::size_t i = 0; i < a.data().size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

}  // namespace

TEST(Embed, BinaryExpansionPositionAndFlag) {
  EXPECT_EQ(pf::embed_token(pf::TapeToken::number(5), 3, 4), (std::vector<double>{1, 0, 1, 0, 3, 1, 0}));
  EXPECT_EQ(pf::embed_token(pf::TapeToken::separator(), 9, 4), (std::vector<double>{0, 0, 0, 0, 9, 1, 1}));
  EXPECT_EQ(pf::embed_token(pf::TapeToken::number(0), 1, 4), (std::vector<double>{0, 0, 0, 0, 1, 1, 0}));
}

TEST(Embed, RejectsOutOfRange) {
  EXPECT_THROW(pf::embed_token(pf::TapeToken::number(16), 1, 4), pf::DomainError);
  EXPECT_THROW(pf::embed_token(pf::TapeToken::number(1), 0, 4), pf::DomainError);
}

TEST(Attention, ZeroQueryKeyAveragesThePrefix) {
  pf::LayerSpec L;
  L.d_in = 3;
  L.heads.push_back({Matrix(3, 1), Matrix(3, 1), Matrix::identity(3), Matrix::identity(3), "uniform"});
  L.ffn = null_ffn(6);
  L.d_out = 6;
  const Matrix X(2, 3, {1, 2, 3, 5, -4, 7});
  const Matrix A = pf::attention_forward(L, X);
  EXPECT_EQ(A, Matrix(2, 3, {1, 2, 3, 3, -1, 5}));
}

TEST(Attention, LargeNegativeLogitSaturates) {
  // Channels: constant one, key logit, value. Row 2 sees logits (0, -50).
  pf::LayerSpec L;
  L.d_in = 3;
  Matrix q(3, 1), k(3, 1), v(3, 1), o(1, 1, {1.0});
  q(0, 0) = 1;
  k(1, 0) = 1;
  v(2, 0) = 1;
  L.heads.push_back({q, k, v, o, "saturate"});
  L.ffn = null_ffn(4);
  L.d_out = 4;
  const Matrix X(2, 3, {1, 0, 0.5, 1, -50, 3});
  const Matrix A = pf::attention_forward(L, X);
  EXPECT_NEAR(A(1, 0), 0.5, 1e-20);
}

TEST(Attention, MatchesDenseOracle) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 5; ++trial) {
    const auto L = random_layer(rng, 4, 2, 3, 5, 2, pf::ResidualMode::concat);
    const Matrix X = random_matrix(rng, 3, 4, 2.0);
    EXPECT_LT(max_diff(pf::attention_forward(L, X), dense_attention(L, X)), 1e-12);
    EXPECT_LT(max_diff(pf::layer_forward(L, X), dense_layer(L, X)), 1e-12);
  }
}

TEST(Attention, AddModeMatchesDenseOracle) {
  std::mt19937_64 rng(8);
  const auto L = random_layer(rng, 4, 2, 4, 6, 4, pf::ResidualMode::add);
  const Matrix X = random_matrix(rng, 5, 4);
  EXPECT_LT(max_diff(pf::layer_forward(L, X), dense_layer(L, X)), 1e-12);
}

TEST(Attention, ShapeMismatchIsStructural) {
  std::mt19937_64 rng(9);
  const auto L = random_layer(rng, 4, 1, 3, 2, 1, pf::ResidualMode::concat);
  EXPECT_THROW(pf::attention_forward(L, Matrix(2, 5)), pf::StructuralError);
  auto bad = L;
  bad.heads[0].w_o = Matrix(2, 3);
  EXPECT_THROW(bad.validate(), pf::StructuralError);
  bad = L;
  bad.d_out += 1;
  EXPECT_THROW(bad.validate(), pf::StructuralError);
}

TEST(Attention, IsCausal) {
  std::mt19937_64 rng(11);
  const auto L = random_layer(rng, 5, 3, 4, 6, 3, pf::ResidualMode::concat);
  const Matrix X = random_matrix(rng, 8, 5);
  const Matrix base = pf::layer_forward(L, X);
  for (std::size_t j = 0; j < X.rows(); ++j) {
    Matrix Y = X;
    for (std::size_t c = 0; c < Y.cols(); ++c) Y(j, c) += 0.75;
    const Matrix out = pf::layer_forward(L, Y);
    for (std::size_t i = 0; i < j; ++i)
      for (std::size_t c = 0; c < out.cols(); ++c) ASSERT_EQ(out(i, c), base(i, c)) << "row " << i << " moved";
    bool changed = false;
    for (std::size_t c = 0; c < out.cols(); ++c) changed = changed || out(j, c) != base(j, c);
    EXPECT_TRUE(changed);
  }
}

TEST(Attention, SoftmaxRowsAreDistributions) {
  // With one-hot row indicators as values the output row is the softmax row.
  const std::size_t T = 6;
  std::mt19937_64 rng(3);
  pf::LayerSpec L;
  L.d_in = T + 2;
  Matrix q = random_matrix(rng, L.d_in, 2, 4.0), k = random_matrix(rng, L.d_in, 2, 4.0);
  Matrix v(L.d_in, T);
  for (std::size_t j = 0; j < T; ++j) v(j, j) = 1;
  L.heads.push_back({q, k, v, Matrix::identity(T), "probe"});
  L.ffn = null_ffn(L.d_in + T);
  L.d_out = L.d_in + T;
  Matrix X = random_matrix(rng, T, L.d_in, 3.0);
  for (std::size_t i = 0; i < T; ++i)
    for (std::size_t j = 0; j < T; ++j) X(i, j) = i == j ? 1.0 : 0.0;
  const Matrix A = pf::attention_forward(L, X);
  for (std::size_t i = 0; i < T; ++i) {
    double sum = 0;
    for (std::size_t j = 0; j < T; ++j) {
      EXPECT_GE(A(i, j), 0.0);
      EXPECT_LE(A(i, j), 1.0);
      if (j > i) EXPECT_EQ(A(i, j), 0.0);
      sum += A(i, j);
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(Layer, ZeroWeightsConcatAppendsZeros) {
  pf::LayerSpec L;
  L.d_in = 2;
  L.heads.push_back({Matrix(2, 1), Matrix(2, 1), Matrix(2, 1), Matrix(1, 1), ""});
  L.ffn = {Matrix(3, 1), {0.0}, Matrix(1, 2)};
  L.d_out = 5;
  const Matrix X(2, 2, {1, 2, 3, 4});
  EXPECT_EQ(pf::layer_forward(L, X), Matrix(2, 5, {1, 2, 0, 0, 0, 3, 4, 0, 0, 0}));
}

TEST(Layer, ZeroWeightsAddIsIdentity) {
  pf::LayerSpec L;
  L.residual_mode = pf::ResidualMode::add;
  L.d_in = 3;
  L.heads.push_back({Matrix(3, 1), Matrix(3, 1), Matrix(3, 2), Matrix(2, 3), ""});
  L.ffn = {Matrix(3, 2), {0.0, 0.0}, Matrix(2, 3)};
  L.d_out = 3;
  const Matrix X(2, 3, {1, -2, 3, 0.5, 4, -6});
  EXPECT_EQ(pf::layer_forward(L, X), X);
}

TEST(Layer, GadgetLayerMatchesTruthTable) {
  const auto g = pf::build_binary_bool_layer(pf::GadgetKind::VAR_AND, 2);
  Matrix in = g.inputs(4);
  for (std::size_t r = 0; r < 4; ++r) {
    g.set(in, r, "x", {double(r & 1), double(r >> 1)});
    g.set(in, r, "y", {1.0, 1.0});
  }
  const Matrix out = pf::layer_forward(g.layers[0], in);
  for (std::size_t r = 0; r < 4; ++r)
    EXPECT_EQ(pf::testing::word_of(g.get(out, r, "out")), r) << "row " << r;
}

TEST(Generate, StepsZeroReturnsPrompt) {
  const auto p = pf::build_lcg_program({5, 3, 16, 7, 4});
  const pf::Tape prompt{pf::TapeToken::number(7)};
  EXPECT_EQ(pf::generate(p, prompt, 0), prompt);
  EXPECT_EQ(pf::generate(p, {}, 0), pf::Tape{});
}

TEST(Generate, LcgAppendsRecurrence) {
  const auto p = pf::build_lcg_program({5, 3, 16, 7, 4});
  const auto t = pf::generate(p, {pf::TapeToken::number(7)}, 3);
  const pf::Tape want{pf::TapeToken::number(7), pf::TapeToken::number(6), pf::TapeToken::number(1),
                      pf::TapeToken::number(8)};
  EXPECT_EQ(t, want);
}

TEST(Generate, IsDeterministic) {
  const auto spec = pf::testing::small_mt_spec(3);
  const auto p = pf::build_mt_program(spec, {64});
  const auto a = pf::generate(p, pf::mt_prompt(spec), 60);
  const auto b = pf::generate(p, pf::mt_prompt(spec), 60);
  EXPECT_EQ(a, b);
  EXPECT_EQ(pf::forward(p, a), pf::forward(p, a));
}

TEST(Generate, BatchMatchesSequentialForAnyThreadCount) {
  const auto p = pf::build_lcg_program({13, 1, 64, 0, 6});
  std::vector<pf::Tape> prompts;
  for (std::uint64_t s = 0; s < 9; ++s) prompts.push_back({pf::TapeToken::number(s * 7)});
  std::vector<pf::Tape> seq;
  for (const auto& pr : prompts) seq.push_back(pf::generate(p, pr, 40));
  for (unsigned threads : {1u, 2u, 5u}) EXPECT_EQ(pf::generate_batch(p, prompts, 40, {}, threads), seq);
}

TEST(Generate, RefusesTapesBeyondCompiledRange) {
  const auto spec = pf::testing::small_mt_spec();
  const auto p = pf::build_mt_program(spec, {2});
  EXPECT_NO_THROW(pf::generate(p, pf::mt_prompt(spec), 2 * 6));
  EXPECT_THROW(pf::generate(p, pf::mt_prompt(spec), 3 * 6), pf::DomainError);
}

TEST(Generate, LowMarginIsAnError) {
  auto p = pf::build_lcg_program({5, 3, 16, 7, 4});
  // Bit 0 of the readout picks up 0.4 from the constant channel: a true 0
  // then reads 0.4, inside the margin.
  p.readout.map(pf::EmbedLayout{4}.one(), 0) += 0.4;
  try {
    pf::generate(p, {pf::TapeToken::number(7)}, 3);
    FAIL() << "expected a low-margin error";
  } catch (const pf::LowMarginError& e) {
    EXPECT_EQ(e.position, 1u);
    EXPECT_EQ(e.channel, 0u);
    EXPECT_NEAR(e.value, 0.4, 1e-3);
  }
}

TEST(Precision, RoundToMantissa) {
  EXPECT_EQ(pf::round_to_mantissa(1.0 / 3.0, 8), 341.0 / 1024.0);
  EXPECT_EQ(pf::round_to_mantissa(-1.0 / 3.0, 8), -341.0 / 1024.0);
  EXPECT_EQ(pf::round_to_mantissa(0.1, 52), 0.1);
  EXPECT_EQ(pf::round_to_mantissa(1.0 + 1.0 / 512, 8), 1.0);  // tie to even
  EXPECT_EQ(pf::round_to_mantissa(0.0, 8), 0.0);
  EXPECT_THROW(pf::PrecisionPolicy::quantized(3), pf::DomainError);
  EXPECT_THROW(pf::PrecisionPolicy::quantized(53), pf::DomainError);
}

TEST(Precision, FiftyTwoBitsLeavesProgramUnchanged) {
  const auto p = pf::build_mt_program(pf::testing::small_mt_spec(), {16});
  EXPECT_EQ(pf::serialize_program(pf::quantize(p, pf::PrecisionPolicy::quantized(52))), pf::serialize_program(p));
  const auto q8 = pf::quantize(p, pf::PrecisionPolicy::quantized(8));
  for (const auto& l : q8.layers)
    for (double v : l.ffn.w2.data()) EXPECT_EQ(v, pf::round_to_mantissa(v, 8));
}

// The readout deviation from exact arithmetic shrinks as mantissa bits grow
// and stays inside the 0.25 margin down to 12 bits.
TEST(Precision, DeviationShrinksWithMantissaWidth) {
  const auto spec = pf::testing::small_mt_spec(5);
  const auto p = pf::build_mt_program(spec, {32});
  const auto tape = pf::encode_tape(spec, 30);
  auto readouts = [&](pf::PrecisionPolicy pol) {
    const auto q = pf::quantize(p, pol);
    pf::Evaluator ev(q, pol);
    std::vector<double> all;
    for (const auto& t : tape) {
      const auto r = ev.readout(ev.push(t));
      all.insert(all.end(), r.begin(), r.end());
    }
    return all;
  };
  const auto exact = readouts(pf::PrecisionPolicy::exact());
  double prev = 1e300;
  for (int bits : {12, 16, 24, 32, 40, 52}) {
    const auto q = readouts(pf::PrecisionPolicy::quantized(bits));
    double dev = 0;
    for (std::size_t i = 0; i < q.size(); ++i) dev = std::max(dev, std::abs(q[i] - exact[i]));
    EXPECT_LE(dev, prev) << bits << " bits";
    EXPECT_LT(dev, pf::kReadoutMargin) << bits << " bits";
    prev = dev;
  }
  EXPECT_EQ(prev, 0.0);
}

TEST(Residual, AddProgramHasConcatEquivalent) {
  std::mt19937_64 rng(21);
  pf::WeightProgram p;
  p.kind = "test";
  p.word_bits = 4;
  const std::size_t d = p.embed_width();
  p.layers.push_back(random_layer(rng, d, 2, d, 5, d, pf::ResidualMode::add));
  p.layers.push_back(random_layer(rng, d, 1, 3, 4, 2, pf::ResidualMode::concat));
  p.layers.push_back(random_layer(rng, d + 5, 2, d + 5, 3, d + 5, pf::ResidualMode::add));
  p.readout.map = random_matrix(rng, d + 5, 5);
  p.validate();
  const auto c = pf::to_concat(p);
  for (const auto& l : c.layers) EXPECT_EQ(l.residual_mode, pf::ResidualMode::concat);
  pf::Tape tape;
  for (std::uint64_t v : {3u, 0u, 15u, 9u, 4u, 4u}) tape.push_back(pf::TapeToken::number(v));
  tape.push_back(pf::TapeToken::separator());
  const Matrix ra = pf::matmul(pf::forward(p, tape), p.readout.map);
  const Matrix rc = pf::matmul(pf::forward(c, tape), c.readout.map);
  EXPECT_LT(max_diff(ra, rc), 1e-9);
}

TEST(Serialization, RoundTripsBitExactly) {
  std::mt19937_64 rng(5);
  pf::WeightProgram p;
  p.kind = "random";
  p.word_bits = 3;
  p.layers.push_back(random_layer(rng, 6, 2, 6, 4, 6, pf::ResidualMode::add));
  p.layers.push_back(random_layer(rng, 6, 1, 2, 3, 1, pf::ResidualMode::concat));
  p.readout.map = random_matrix(rng, 9, 4, 1e-7);
  p.params["x"] = -3;
  p.channels["c"] = 2;
  p.max_positions = 99;
  const auto back = pf::deserialize_program(pf::serialize_program(p));
  EXPECT_EQ(pf::serialize_program(back), pf::serialize_program(p));
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    EXPECT_EQ(back.layers[i].ffn.w1, p.layers[i].ffn.w1);
    EXPECT_EQ(back.layers[i].ffn.b1, p.layers[i].ffn.b1);
    EXPECT_EQ(back.layers[i].heads[0].w_q, p.layers[i].heads[0].w_q);
    EXPECT_EQ(back.layers[i].residual_mode, p.layers[i].residual_mode);
  }
  EXPECT_EQ(back.readout.map, p.readout.map);
  EXPECT_EQ(back.params, p.params);
  EXPECT_EQ(back.channels, p.channels);
  EXPECT_EQ(back.max_positions, 99u);
}

TEST(Serialization, CompiledProgramStillGenerates) {
  const pf::LcgSpec s{13, 1, 64, 0, 6};
  const auto p = pf::deserialize_program(pf::serialize_program(pf::build_lcg_program(s)));
  const auto t = pf::generate(p, pf::lcg_prompt(s), 50);
  std::uint64_t x = 0;
  for (std::size_t i = 1; i < t.size(); ++i) EXPECT_EQ(t[i].value, x = pf::lcg_next(s, x));
}

TEST(Serialization, RejectsMalformedDocuments) {
  EXPECT_THROW(pf::deserialize_program("{not json"), pf::StructuralError);
  EXPECT_THROW(pf::deserialize_program(R"({"format":"something-else","version":1})"), pf::StructuralError);
  auto j = pf::program_to_json(pf::build_lcg_program({5, 3, 16, 7, 4}));
  j["version"] = 2;
  EXPECT_THROW(pf::program_from_json(j), pf::StructuralError);
  j["version"] = 1;
  j["layers"][0]["d_out"] = 1;
  EXPECT_THROW(pf::program_from_json(j), pf::StructuralError);
}

TEST(Tape, TextRoundTrip) {
  const pf::Tape t{pf::TapeToken::number(12), pf::TapeToken::separator(), pf::TapeToken::number(0)};
  std::ostringstream os;
  pf::write_tape(os, t);
  EXPECT_EQ(os.str(), "12\n=>\n0\n");
  EXPECT_EQ(pf::parse_tape("# header\n12\n\n  =>  \n0\n"), t);
  try {
    pf::parse_tape("1\n2\nx7\n");
    FAIL();
  } catch (const pf::DecodeError& e) {
    EXPECT_EQ(e.position, 2u);
  }
  EXPECT_THROW(pf::parse_tape("-3\n"), pf::DecodeError);
}
