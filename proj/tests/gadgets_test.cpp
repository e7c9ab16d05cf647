#include <gtest/gtest.h>

#include <random>

#include "prngformer/prngformer.hpp"
#include "test_support.hpp"

namespace pf = prngformer;
using pf::GadgetKind;
using pf::testing::as_doubles;
using pf::testing::word_of;

namespace {

std::uint64_t bitwise(GadgetKind k, std::uint64_t x, std::uint64_t c, unsigned w) {
  const std::uint64_t mk = pf::word_mask(w);
  switch (k) {
    case GadgetKind::CONST_AND: return x & c;
    case GadgetKind::CONST_OR: return x | c;
    case GadgetKind::CONST_XOR: return x ^ c;
    case GadgetKind::NOT: return ~x & mk;
    case GadgetKind::SHL: return (x << c) & mk;
    case GadgetKind::SHR: return x >> c;
    case GadgetKind::VAR_AND: return x & c;
    case GadgetKind::VAR_OR: return x | c;
    case GadgetKind::VAR_XOR: return x ^ c;
    default: return 0;
  }
}

// Runs a unary Boolean block on every w-bit word in one sequence.
std::vector<std::uint64_t> run_unary(const pf::GadgetBlock& g, unsigned w) {
  const std::size_t N = std::size_t{1} << w;
  pf::Matrix in = g.inputs(N);
  for (std::uint64_t x = 0; x < N; ++x) g.set(in, x, "x", as_doubles(x, w));
  const pf::Matrix out = g.run(in);
  std::vector<std::uint64_t> r;
  for (std::uint64_t x = 0; x < N; ++x) r.push_back(word_of(g.get(out, x, "out")));
  return r;
}

}  // namespace

TEST(ConstBool, SpecExamples) {
  const auto n = pf::build_const_bool_layer(GadgetKind::NOT, 4, 0);
  pf::Matrix in = n.inputs(1);
  n.set(in, 0, "x", {1, 0, 1, 1});
  EXPECT_EQ(word_of(n.get(n.run(in), 0, "out")), 0b0010u);

  const auto s = pf::build_const_bool_layer(GadgetKind::SHR, 4, 1);
  in = s.inputs(1);
  s.set(in, 0, "x", as_doubles(0b1100, 4));
  EXPECT_EQ(word_of(s.get(s.run(in), 0, "out")), 0b0110u);
}

TEST(ConstBool, ExhaustiveUpToSixBits) {
  for (unsigned w = 1; w <= 6; ++w) {
    for (GadgetKind k : {GadgetKind::CONST_AND, GadgetKind::CONST_OR, GadgetKind::CONST_XOR, GadgetKind::NOT,
                         GadgetKind::SHL, GadgetKind::SHR}) {
      const bool shift = k == GadgetKind::SHL || k == GadgetKind::SHR;
      const std::uint64_t cmax = shift ? w : (k == GadgetKind::NOT ? 1 : std::uint64_t{1} << w);
      for (std::uint64_t c = 0; c < cmax; ++c) {
        const auto g = pf::build_const_bool_layer(k, w, c);
        const auto got = run_unary(g, w);
        for (std::uint64_t x = 0; x < got.size(); ++x)
          ASSERT_EQ(got[x], bitwise(k, x, c, w)) << pf::to_string(k) << " w=" << w << " c=" << c << " x=" << x;
      }
    }
  }
}

TEST(ConstBool, OutputsSitWithinBudgetOfTheBits) {
  const auto g = pf::build_const_bool_layer(GadgetKind::CONST_XOR, 8, 0xA5);
  pf::Matrix in = g.inputs(256);
  for (std::uint64_t x = 0; x < 256; ++x) g.set(in, x, "x", as_doubles(x, 8));
  const auto out = g.run(in);
  for (std::uint64_t x = 0; x < 256; ++x) {
    const auto v = g.get(out, x, "out");
    const auto want = as_doubles(x ^ 0xA5, 8);
    for (std::size_t k = 0; k < 8; ++k) EXPECT_LE(std::abs(v[k] - want[k]), g.eps_budget);
  }
}

TEST(ConstBool, CompositionIdentities) {
  const unsigned w = 6;
  for (auto [k, c] : {std::pair{GadgetKind::CONST_XOR, std::uint64_t{0b101101}}, std::pair{GadgetKind::NOT, std::uint64_t{0}}}) {
    const auto g = pf::build_const_bool_layer(k, w, c);
    pf::Matrix in = g.inputs(64);
    for (std::uint64_t x = 0; x < 64; ++x) g.set(in, x, "x", as_doubles(x, w));
    const auto once = g.run(in);
    // Feed the unrounded outputs straight back in.
    pf::Matrix again = g.inputs(64);
    for (std::uint64_t x = 0; x < 64; ++x) g.set(again, x, "x", g.get(once, x, "out"));
    const auto twice = g.run(again);
    for (std::uint64_t x = 0; x < 64; ++x) EXPECT_EQ(word_of(g.get(twice, x, "out")), x);
  }
}

TEST(ConstBool, RejectsBadParameters) {
  EXPECT_THROW(pf::build_const_bool_layer(GadgetKind::SHL, 4, 4), pf::DomainError);
  EXPECT_THROW(pf::build_const_bool_layer(GadgetKind::CONST_AND, 4, 16), pf::DomainError);
  EXPECT_THROW(pf::build_const_bool_layer(GadgetKind::VAR_AND, 4, 1), pf::StructuralError);
}

TEST(BinaryBool, SpecExamples) {
  const auto g = pf::build_binary_bool_layer(GadgetKind::VAR_AND, 4);
  pf::Matrix in = g.inputs(1);
  g.set(in, 0, "x", {1, 1, 0, 0});
  g.set(in, 0, "y", {1, 0, 1, 0});
  EXPECT_EQ(g.get(g.run(in), 0, "out").size(), 4u);
  EXPECT_EQ(word_of(g.get(g.run(in), 0, "out")), 0b0001u);

  for (auto route : {pf::XorRoute::product, pf::XorRoute::modular}) {
    const auto x = pf::build_binary_bool_layer(GadgetKind::VAR_XOR, 5, route);
    pf::Matrix xin = x.inputs(32);
    for (std::uint64_t v = 0; v < 32; ++v) {
      x.set(xin, v, "x", as_doubles(v, 5));
      x.set(xin, v, "y", as_doubles(v, 5));
    }
    const auto out = x.run(xin);
    for (std::uint64_t v = 0; v < 32; ++v) EXPECT_EQ(word_of(x.get(out, v, "out")), 0u);
  }
}

TEST(BinaryBool, ExhaustiveAtFourBitsBothRoutes) {
  const unsigned w = 4;
  for (GadgetKind k : {GadgetKind::VAR_AND, GadgetKind::VAR_OR, GadgetKind::VAR_XOR}) {
    for (auto route : {pf::XorRoute::product, pf::XorRoute::modular}) {
      const auto g = pf::build_binary_bool_layer(k, w, route);
      pf::Matrix in = g.inputs(256);
      for (std::uint64_t i = 0; i < 256; ++i) {
        g.set(in, i, "x", as_doubles(i & 15, w));
        g.set(in, i, "y", as_doubles(i >> 4, w));
      }
      const auto out = g.run(in);
      for (std::uint64_t i = 0; i < 256; ++i) {
        const auto v = g.get(out, i, "out");
        const auto want = as_doubles(bitwise(k, i & 15, i >> 4, w), w);
        for (std::size_t b = 0; b < w; ++b)
          ASSERT_LE(std::abs(v[b] - want[b]), g.eps_budget) << pf::to_string(k) << " i=" << i << " bit " << b;
      }
    }
  }
}

TEST(BinaryBool, OrFollowsTheTruthTableOnAllFourPairs) {
  // Truth-table check of OR = 1 - ReLU(1 - x - y) on {0,1}^2.
  const auto g = pf::build_binary_bool_layer(GadgetKind::VAR_OR, 1);
  pf::Matrix in = g.inputs(4);
  for (std::size_t i = 0; i < 4; ++i) {
    g.set(in, i, "x", {double(i & 1)});
    g.set(in, i, "y", {double(i >> 1)});
  }
  const auto out = g.run(in);
  const double want[4] = {0, 1, 1, 1};
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(g.get(out, i, "out")[0], want[i], g.eps_budget);
}

TEST(Product, ContractAndCorners) {
  const double M = 8, eps = 1e-2;
  const auto g = pf::build_product_unit(M, eps);
  EXPECT_EQ(g.layers.size(), 1u);
  EXPECT_EQ(g.layers[0].ffn.hidden(), 4u);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-M, M);
  const std::size_t N = 10000;
  pf::Matrix in = g.inputs(N);
  std::vector<std::pair<double, double>> ab(N);
  for (std::size_t i = 0; i < N; ++i) {
    ab[i] = {u(rng), u(rng)};
    if (i < 50) ab[i] = {0.0, -M + 2 * M * i / 49.0};
    if (i == 50) ab[i] = {1.0, 1.0};
    if (i == 51) ab[i] = {M, M};
    if (i == 52) ab[i] = {-M, M};
    g.set(in, i, "a", {ab[i].first});
    g.set(in, i, "b", {ab[i].second});
  }
  const auto out = g.run(in);
  double worst = 0;
  for (std::size_t i = 0; i < N; ++i) worst = std::max(worst, std::abs(g.get(out, i, "out")[0] - ab[i].first * ab[i].second));
  EXPECT_LE(worst, eps);
  EXPECT_NEAR(g.get(out, 50, "out")[0], 1.0, eps);
}

TEST(Product, RejectsBadParameters) {
  EXPECT_THROW(pf::build_product_unit(0.5, 0.1), pf::DomainError);
  EXPECT_THROW(pf::build_product_unit(2, 1.5), pf::DomainError);
}

TEST(Relu, WithinBudget) {
  const auto g = pf::build_relu_unit(1e-3);
  pf::Matrix in = g.inputs(401);
  for (std::size_t i = 0; i <= 400; ++i) g.set(in, i, "x", {-2.0 + i * 0.01});
  const auto out = g.run(in);
  for (std::size_t i = 0; i <= 400; ++i) {
    const double x = -2.0 + i * 0.01;
    EXPECT_LE(std::abs(g.get(out, i, "out")[0] - std::max(0.0, x)), g.eps_budget);
  }
  EXPECT_LE(g.eps_budget, 1e-3);
}

TEST(Selector, PicksTheRightBranch) {
  const std::size_t d = 3;
  const double M = 4, alpha = 0.5, eps = 1e-3;
  const auto g = pf::build_selector_unit(d, M, alpha, eps);
  EXPECT_EQ(g.layers[0].ffn.hidden(), 2 * d + 2);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> ux(-M, M), ut(alpha, 10 * alpha);
  const std::size_t N = 2000;
  pf::Matrix in = g.inputs(N);
  std::vector<std::vector<double>> want(N);
  for (std::size_t i = 0; i < N; ++i) {
    std::vector<double> x(d), y(d);
    for (auto& v : x) v = ux(rng);
    for (auto& v : y) v = ux(rng);
    double t = (rng() & 1 ? 1 : -1) * ut(rng);
    if (i == 0) t = alpha;
    if (i == 1) t = -alpha;
    g.set(in, i, "x", x);
    g.set(in, i, "y", y);
    g.set(in, i, "t", {t});
    want[i] = t >= 0 ? x : y;
  }
  const auto out = g.run(in);
  for (std::size_t i = 0; i < N; ++i) {
    const auto v = g.get(out, i, "out");
    for (std::size_t k = 0; k < d; ++k) ASSERT_LE(std::abs(v[k] - want[i][k]), eps) << "sample " << i;
  }
}

TEST(FloorMod, SpecExamples) {
  auto eval = [](const pf::GadgetBlock& g, double i) {
    pf::Matrix in = g.inputs(1);
    g.set(in, 0, "i", {i});
    return g.get(g.run(in), 0, "out")[0];
  };
  EXPECT_NEAR(eval(pf::build_floor_div_unit(3), 7), 2.0, pf::build_floor_div_unit(3).eps_budget);
  EXPECT_NEAR(eval(pf::build_mod_unit(3), 7), 1.0, pf::build_mod_unit(3).eps_budget);
  EXPECT_NEAR(eval(pf::build_floor_div_unit(5), 25), 5.0, pf::build_floor_div_unit(5).eps_budget);
  EXPECT_NEAR(eval(pf::build_mod_unit(5), 25), 0.0, pf::build_mod_unit(5).eps_budget);
}

TEST(FloorMod, ExhaustiveForSmallDivisors) {
  for (std::int64_t n = 1; n <= 16; ++n) {
    const auto fl = pf::build_floor_div_unit(n), md = pf::build_mod_unit(n);
    const std::size_t N = static_cast<std::size_t>(n * n);
    pf::Matrix in = fl.inputs(N), in2 = md.inputs(N);
    for (std::size_t i = 1; i <= N; ++i) {
      fl.set(in, i - 1, "i", {double(i)});
      md.set(in2, i - 1, "i", {double(i)});
    }
    const auto of = fl.run(in), om = md.run(in2);
    for (std::size_t i = 1; i <= N; ++i) {
      const double f = fl.get(of, i - 1, "out")[0], m = md.get(om, i - 1, "out")[0];
      ASSERT_EQ(std::llround(f), static_cast<long long>(i) / n) << "n=" << n << " i=" << i;
      ASSERT_EQ(std::llround(m), static_cast<long long>(i) % n) << "n=" << n << " i=" << i;
      ASSERT_LE(std::abs(f - double(static_cast<long long>(i) / n)), fl.eps_budget);
      ASSERT_LE(std::abs(m - double(static_cast<long long>(i) % n)), md.eps_budget);
    }
  }
}

TEST(Fanin, SpecExamplesAndRandomVectors) {
  auto eval = [](const pf::GadgetBlock& g, const std::vector<double>& x) {
    pf::Matrix in = g.inputs(1);
    g.set(in, 0, "x", x);
    return g.get(g.run(in), 0, "out")[0];
  };
  const auto and3 = pf::build_fanin_gate(GadgetKind::FANIN_AND, 3);
  EXPECT_NEAR(eval(and3, {1, 1, 1}), 1.0, and3.eps_budget);
  EXPECT_NEAR(eval(and3, {1, 1, 0}), 0.0, and3.eps_budget);
  const auto or5 = pf::build_fanin_gate(GadgetKind::FANIN_OR, 5);
  EXPECT_NEAR(eval(or5, {0, 0, 0, 0, 0}), 0.0, or5.eps_budget);

  std::mt19937_64 rng(4);
  for (std::size_t k = 1; k <= 16; ++k) {
    for (GadgetKind kind : {GadgetKind::FANIN_AND, GadgetKind::FANIN_OR}) {
      const auto g = pf::build_fanin_gate(kind, k);
      pf::Matrix in = g.inputs(1000);
      std::vector<bool> want(1000);
      for (std::size_t i = 0; i < 1000; ++i) {
        // Bias toward all-ones / all-zeros so AND and OR both see both values.
        const int mode = static_cast<int>(rng() % 4);
        std::vector<double> x(k);
        for (auto& v : x) v = mode == 0 ? 1.0 : mode == 1 ? 0.0 : double(rng() & 1);
        bool a = true, o = false;
        for (double v : x) {
          a = a && v > 0.5;
          o = o || v > 0.5;
        }
        want[i] = kind == GadgetKind::FANIN_AND ? a : o;
        g.set(in, i, "x", x);
      }
      const auto out = g.run(in);
      for (std::size_t i = 0; i < 1000; ++i) ASSERT_EQ(g.get(out, i, "out")[0] >= 0.5, want[i]) << "k=" << k;
    }
  }
}

TEST(Metadata, WeightsRespectRecordedBounds) {
  std::vector<pf::GadgetBlock> blocks{
      pf::build_product_unit(8, 1e-2),        pf::build_product_unit(2, 1e-4), pf::build_relu_unit(1e-3),
      pf::build_selector_unit(4, 1, 0.5, 1e-3), pf::build_selector_unit(2, 16, 1, 1e-2),
      pf::build_floor_div_unit(16),           pf::build_mod_unit(16),
      pf::build_const_bool_layer(GadgetKind::CONST_OR, 8, 0x3C),
      pf::build_const_bool_layer(GadgetKind::SHL, 8, 3),
      pf::build_binary_bool_layer(GadgetKind::VAR_AND, 8), pf::build_binary_bool_layer(GadgetKind::VAR_OR, 8),
      pf::build_binary_bool_layer(GadgetKind::VAR_XOR, 8, pf::XorRoute::product, 1e-3),
      pf::build_binary_bool_layer(GadgetKind::VAR_XOR, 8, pf::XorRoute::modular),
      pf::build_fanin_gate(GadgetKind::FANIN_AND, 12), pf::build_fanin_gate(GadgetKind::FANIN_OR, 12)};
  for (const auto& g : blocks) {
    EXPECT_GT(g.eps_budget, 0.0) << pf::to_string(g.kind);
    EXPECT_GT(g.weight_bound, 0.0) << pf::to_string(g.kind);
    EXPECT_LE(g.max_abs_weight(), g.weight_bound) << pf::to_string(g.kind);
    EXPECT_FALSE(g.provenance.empty());
    EXPECT_FALSE(g.layers.empty());
  }
}

TEST(Pipeline, ErrorBoundComposesThroughLipschitzFactors) {
  // (a * b) * c with a, b in [-2, 2] and c in [-1, 1].
  const auto first = pf::build_product_unit(2, 1e-3);
  const auto second = pf::build_product_unit(4, 1e-3);
  const double bound = pf::pipeline_error_bound({&first, &second});
  EXPECT_DOUBLE_EQ(bound, second.lipschitz * first.eps_budget + second.eps_budget);
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u2(-2, 2), u1(-1, 1);
  const std::size_t N = 2000;
  pf::Matrix in1 = first.inputs(N), in2 = second.inputs(N);
  std::vector<double> want(N), c(N);
  for (std::size_t i = 0; i < N; ++i) {
    const double a = u2(rng), b = u2(rng);
    c[i] = u1(rng);
    want[i] = a * b * c[i];
    first.set(in1, i, "a", {a});
    first.set(in1, i, "b", {b});
  }
  const auto o1 = first.run(in1);
  for (std::size_t i = 0; i < N; ++i) {
    second.set(in2, i, "a", first.get(o1, i, "out"));
    second.set(in2, i, "b", {c[i]});
  }
  const auto o2 = second.run(in2);
  for (std::size_t i = 0; i < N; ++i) ASSERT_LE(std::abs(second.get(o2, i, "out")[0] - want[i]), bound);
}

TEST(LayerBuilder, AttentionAfterFfnIsRejected) {
  pf::LayerBuilder b(4, 1, 0, "t");
  b.unit(pf::Form::ch(2));
  EXPECT_THROW(b.self_value(pf::Form::ch(3)), pf::StructuralError);
}
