// Subset of the NIST SP 800-22 battery plus a bitstream heatmap writer.
// Statistics follow the SP 800-22 definitions; p-values use erfc and the
// regularized upper incomplete gamma function Q(a, x).
#pragma once

#include <fftw3.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <mutex>
#include <string>
#include <vector>

#include <boost/math/special_functions/gamma.hpp>

#include "json.hpp"
#include "prngformer/errors.hpp"

namespace prngformer::stats {

class BitStream {
 public:
  BitStream() = default;
  explicit BitStream(std::vector<std::uint8_t> bits) : bits_(std::move(bits)) {
    for (auto& b : bits_) b = b ? 1 : 0;
  }

  // Words serialized least-significant bit first.
  static BitStream from_words(const std::vector<std::uint64_t>& words, unsigned w) {
    std::vector<std::uint8_t> bits;
    bits.reserve(words.size() * w);
    for (auto v : words)
      for (unsigned k = 0; k < w; ++k) bits.push_back(static_cast<std::uint8_t>((v >> k) & 1u));
    return BitStream(std::move(bits));
  }

  std::size_t size() const { return bits_.size(); }
  int operator[](std::size_t i) const { return bits_[i]; }
  const std::vector<std::uint8_t>& bits() const { return bits_; }

  BitStream complemented() const {
    auto b = bits_;
    for (auto& x : b) x ^= 1u;
    return BitStream(std::move(b));
  }

 private:
  std::vector<std::uint8_t> bits_;
};

// ASCII bits: every '0' / '1' character counts, whitespace is ignored, any
// other character is an error.
inline BitStream read_ascii_bits(std::istream& is) {
  std::vector<std::uint8_t> bits;
  char ch;
  std::size_t offset = 0;
  while (is.get(ch)) {
    if (ch == '0' || ch == '1') bits.push_back(static_cast<std::uint8_t>(ch - '0'));
    else if (!std::isspace(static_cast<unsigned char>(ch)))
      throw DomainError("unexpected character at byte " + std::to_string(offset) + " of bit file");
    ++offset;
  }
  return BitStream(std::move(bits));
}

struct TestReport {
  std::string name;
  double statistic = 0.0;
  double p_value = 0.0;
  bool pass = false;
  bool skipped = false;
  std::string note;
};

inline double erfc(double x) { return std::erfc(x); }

// Q(a, x) = Gamma(a, x) / Gamma(a).
inline double igamc(double a, double x) {
  if (x <= 0.0) return 1.0;
  return boost::math::gamma_q(a, x);
}

namespace detail {

inline TestReport make(std::string name, double stat, double p, double alpha) {
  p = std::clamp(p, 0.0, 1.0);
  return {std::move(name), stat, p, p >= alpha, false, {}};
}

inline void require(const BitStream& s, std::size_t minimum, const char* test) {
  if (s.size() < minimum)
    throw PreconditionError(std::string(test) + " needs at least " + std::to_string(minimum) + " bits, got " +
                            std::to_string(s.size()));
}

inline double phi(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

}  // namespace detail

inline constexpr std::size_t kMinBits = 100;

inline TestReport monobit(const BitStream& s, double alpha = 0.01) {
  detail::require(s, kMinBits, "monobit");
  long long sum = 0;
  for (std::size_t i = 0; i < s.size(); ++i) sum += 2 * s[i] - 1;
  const double sobs = std::abs(static_cast<double>(sum)) / std::sqrt(static_cast<double>(s.size()));
  return detail::make("monobit", sobs, erfc(sobs / std::sqrt(2.0)), alpha);
}

inline TestReport block_frequency(const BitStream& s, std::size_t M = 128, double alpha = 0.01) {
  detail::require(s, kMinBits, "block_frequency");
  if (M == 0 || M > s.size()) throw PreconditionError("block_frequency needs 1 <= M <= length");
  const std::size_t N = s.size() / M;
  double chi = 0.0;
  for (std::size_t b = 0; b < N; ++b) {
    std::size_t ones = 0;
    for (std::size_t j = 0; j < M; ++j) ones += static_cast<std::size_t>(s[b * M + j]);
    const double pi = static_cast<double>(ones) / static_cast<double>(M) - 0.5;
    chi += pi * pi;
  }
  chi *= 4.0 * static_cast<double>(M);
  return detail::make("block_frequency", chi, igamc(static_cast<double>(N) / 2.0, chi / 2.0), alpha);
}

inline TestReport runs(const BitStream& s, double alpha = 0.01) {
  detail::require(s, kMinBits, "runs");
  const double n = static_cast<double>(s.size());
  std::size_t ones = 0;
  for (std::size_t i = 0; i < s.size(); ++i) ones += static_cast<std::size_t>(s[i]);
  const double pi = static_cast<double>(ones) / n;
  // Frequency prerequisite: the runs statistic is meaningless if the
  // proportion of ones is far from 1/2, and the test fails with p = 0.
  if (std::abs(pi - 0.5) >= 2.0 / std::sqrt(n)) {
    auto r = detail::make("runs", 0.0, 0.0, alpha);
    r.note = "frequency prerequisite failed";
    return r;
  }
  std::size_t v = 1;
  for (std::size_t i = 1; i < s.size(); ++i) v += s[i] != s[i - 1];
  const double V = static_cast<double>(v);
  const double p = erfc(std::abs(V - 2.0 * n * pi * (1 - pi)) / (2.0 * std::sqrt(2.0 * n) * pi * (1 - pi)));
  return detail::make("runs", V, p, alpha);
}

inline constexpr std::size_t kLongestRunMin = 128;

inline TestReport longest_run(const BitStream& s, double alpha = 0.01) {
  detail::require(s, kLongestRunMin, "longest_run");
  std::size_t M;
  int lo;
  std::vector<double> pi;
  if (s.size() < 6272) {
    M = 8;
    lo = 1;
    pi = {0.2148, 0.3672, 0.2305, 0.1875};
  } else if (s.size() < 750000) {
    M = 128;
    lo = 4;
    pi = {0.1174, 0.2430, 0.2493, 0.1752, 0.1027, 0.1124};
  } else {
    M = 10000;
    lo = 10;
    pi = {0.0882, 0.2092, 0.2483, 0.1933, 0.1208, 0.0675, 0.0727};
  }
  const std::size_t K = pi.size() - 1, N = s.size() / M;
  std::vector<double> nu(pi.size(), 0.0);
  for (std::size_t b = 0; b < N; ++b) {
    int run = 0, best = 0;
    for (std::size_t j = 0; j < M; ++j) {
      run = s[b * M + j] ? run + 1 : 0;
      best = std::max(best, run);
    }
    const int cls = std::clamp(best - lo, 0, static_cast<int>(K));
    nu[static_cast<std::size_t>(cls)] += 1.0;
  }
  double chi = 0.0;
  for (std::size_t i = 0; i < pi.size(); ++i) {
    const double expct = static_cast<double>(N) * pi[i];
    chi += (nu[i] - expct) * (nu[i] - expct) / expct;
  }
  return detail::make("longest_run", chi, igamc(static_cast<double>(K) / 2.0, chi / 2.0), alpha);
}

enum class CusumMode { forward, reverse };

inline TestReport cusum(const BitStream& s, CusumMode mode, double alpha = 0.01) {
  detail::require(s, kMinBits, "cusum");
  const std::size_t n = s.size();
  long long S = 0, z = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = mode == CusumMode::forward ? i : n - 1 - i;
    S += 2 * s[k] - 1;
    z = std::max(z, std::llabs(S));
  }
  const double nd = static_cast<double>(n), zd = static_cast<double>(z), sq = std::sqrt(nd);
  double sum1 = 0.0, sum2 = 0.0;
  for (long long k = static_cast<long long>(std::floor((-nd / zd + 1.0) / 4.0));
       k <= static_cast<long long>(std::floor((nd / zd - 1.0) / 4.0)); ++k)
    sum1 += detail::phi((4.0 * k + 1.0) * zd / sq) - detail::phi((4.0 * k - 1.0) * zd / sq);
  for (long long k = static_cast<long long>(std::floor((-nd / zd - 3.0) / 4.0));
       k <= static_cast<long long>(std::floor((nd / zd - 1.0) / 4.0)); ++k)
    sum2 += detail::phi((4.0 * k + 3.0) * zd / sq) - detail::phi((4.0 * k + 1.0) * zd / sq);
  return detail::make(mode == CusumMode::forward ? "cusum_forward" : "cusum_reverse", zd, 1.0 - sum1 + sum2, alpha);
}

namespace detail {

// psi^2_m over overlapping m-bit patterns with wrap-around.
inline double psi_sq(const BitStream& s, int m) {
  if (m <= 0) return 0.0;
  const std::size_t n = s.size();
  std::vector<double> counts(std::size_t{1} << m, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t v = 0;
    for (int j = 0; j < m; ++j) v = (v << 1) | static_cast<std::size_t>(s[(i + static_cast<std::size_t>(j)) % n]);
    counts[v] += 1.0;
  }
  double sum = 0.0;
  for (double c : counts) sum += c * c;
  return sum * static_cast<double>(counts.size()) / static_cast<double>(n) - static_cast<double>(n);
}

// phi^(m) = sum over patterns of pi ln pi, overlapping with wrap-around.
inline double apen_phi(const BitStream& s, int m) {
  if (m <= 0) return 0.0;
  const std::size_t n = s.size();
  std::vector<double> counts(std::size_t{1} << m, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t v = 0;
    for (int j = 0; j < m; ++j) v = (v << 1) | static_cast<std::size_t>(s[(i + static_cast<std::size_t>(j)) % n]);
    counts[v] += 1.0;
  }
  double sum = 0.0;
  for (double c : counts)
    if (c > 0) sum += (c / static_cast<double>(n)) * std::log(c / static_cast<double>(n));
  return sum;
}

}  // namespace detail

// Two p-values: from the first and second differences of psi^2.
inline std::array<TestReport, 2> serial(const BitStream& s, int m = 2, double alpha = 0.01) {
  detail::require(s, kMinBits, "serial");
  if (m < 2 || m > 16) throw PreconditionError("serial needs 2 <= m <= 16");
  const double p0 = detail::psi_sq(s, m), p1 = detail::psi_sq(s, m - 1), p2 = detail::psi_sq(s, m - 2);
  const double d1 = p0 - p1, d2 = p0 - 2.0 * p1 + p2;
  return {detail::make("serial_1", d1, igamc(std::ldexp(1.0, m - 2), d1 / 2.0), alpha),
          detail::make("serial_2", d2, igamc(std::ldexp(1.0, m - 3), d2 / 2.0), alpha)};
}

inline TestReport approximate_entropy(const BitStream& s, int m = 2, double alpha = 0.01) {
  detail::require(s, kMinBits, "approximate_entropy");
  if (m < 1 || m > 16) throw PreconditionError("approximate_entropy needs 1 <= m <= 16");
  const double n = static_cast<double>(s.size());
  const double apen = detail::apen_phi(s, m) - detail::apen_phi(s, m + 1);
  const double chi = 2.0 * n * (std::log(2.0) - apen);
  return detail::make("approximate_entropy", chi, igamc(std::ldexp(1.0, m - 1), chi / 2.0), alpha);
}

inline TestReport spectral_dft(const BitStream& s, double alpha = 0.01) {
  detail::require(s, kMinBits, "spectral_dft");
  const std::size_t n = s.size();
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = 2.0 * s[i] - 1.0;
  std::vector<fftw_complex> X(n / 2 + 1);
  // FFTW_ESTIMATE picks the plan without timing runs, so results are
  // reproducible from run to run.
  // Only fftw_execute is thread-safe; planning and destruction share
  // global planner state.
  static std::mutex planner;
  fftw_plan plan;
  {
    std::lock_guard<std::mutex> lock(planner);
    plan = fftw_plan_dft_r2c_1d(static_cast<int>(n), x.data(), X.data(), FFTW_ESTIMATE);
  }
  fftw_execute(plan);
  {
    std::lock_guard<std::mutex> lock(planner);
    fftw_destroy_plan(plan);
  }
  const double nd = static_cast<double>(n);
  const double T = std::sqrt(std::log(1.0 / 0.05) * nd);
  const double N0 = 0.95 * nd / 2.0;
  double N1 = 0.0;
  for (std::size_t k = 0; k < n / 2; ++k)
    if (std::hypot(X[k][0], X[k][1]) < T) N1 += 1.0;
  const double d = (N1 - N0) / std::sqrt(nd * 0.95 * 0.05 / 4.0);
  return detail::make("spectral_dft", d, erfc(std::abs(d) / std::sqrt(2.0)), alpha);
}

struct SuiteOptions {
  double alpha = 0.01;
  std::size_t block_size = 128;  // block_frequency M
  int pattern_bits = 2;          // serial and approximate entropy m
  std::vector<std::string> only; // empty = every test
};

inline const std::vector<std::string>& test_names() {
  static const std::vector<std::string> names{"monobit", "block_frequency", "runs",   "longest_run",
                                              "cusum",   "serial",          "approximate_entropy", "spectral_dft"};
  return names;
}

// Runs every selected test. A test whose length precondition fails is
// reported as skipped, never as passed. Report order is fixed.
inline std::vector<TestReport> run_suite(const BitStream& s, const SuiteOptions& opt = {}) {
  for (const auto& name : opt.only)
    if (std::find(test_names().begin(), test_names().end(), name) == test_names().end())
      throw DomainError("unknown test '" + name + "'");
  auto wanted = [&](const std::string& n) {
    return opt.only.empty() || std::find(opt.only.begin(), opt.only.end(), n) != opt.only.end();
  };
  std::vector<TestReport> out;
  auto attempt = [&](const std::string& family, std::vector<std::string> labels, auto&& fn) {
    if (!wanted(family)) return;
    try {
      fn();
    } catch (const PreconditionError& e) {
      for (auto& l : labels) out.push_back({l, 0.0, 0.0, false, true, e.what()});
    }
  };
  const double a = opt.alpha;
  attempt("monobit", {"monobit"}, [&] { out.push_back(monobit(s, a)); });
  attempt("block_frequency", {"block_frequency"}, [&] { out.push_back(block_frequency(s, opt.block_size, a)); });
  attempt("runs", {"runs"}, [&] { out.push_back(runs(s, a)); });
  attempt("longest_run", {"longest_run"}, [&] { out.push_back(longest_run(s, a)); });
  attempt("cusum", {"cusum_forward", "cusum_reverse"}, [&] {
    auto f = cusum(s, CusumMode::forward, a);
    auto r = cusum(s, CusumMode::reverse, a);
    out.push_back(f);
    out.push_back(r);
  });
  attempt("serial", {"serial_1", "serial_2"}, [&] {
    for (auto& r : serial(s, opt.pattern_bits, a)) out.push_back(r);
  });
  attempt("approximate_entropy", {"approximate_entropy"},
          [&] { out.push_back(approximate_entropy(s, opt.pattern_bits, a)); });
  attempt("spectral_dft", {"spectral_dft"}, [&] { out.push_back(spectral_dft(s, a)); });
  return out;
}

inline nlohmann::json report_to_json(const std::vector<TestReport>& reports, const SuiteOptions& opt,
                                     std::size_t length) {
  nlohmann::json tests = nlohmann::json::array();
  for (const auto& r : reports) {
    nlohmann::json j{{"test", r.name}, {"result", r.skipped ? "skip" : (r.pass ? "pass" : "fail")}};
    if (!r.skipped) {
      j["statistic"] = r.statistic;
      j["p_value"] = r.p_value;
    }
    if (!r.note.empty()) j["note"] = r.note;
    tests.push_back(j);
  }
  return {{"bits", length},
          {"alpha", opt.alpha},
          {"parameters", {{"block_frequency_M", opt.block_size}, {"pattern_bits_m", opt.pattern_bits}}},
          {"tests", tests}};
}

// Write to a sibling temporary and rename, so readers never see a partial file.
inline void write_atomically(const std::string& path, const std::string& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DomainError("cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DomainError("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

// Binary PGM (P5), maxval 255, first width*height bits in row-major order;
// a 0 bit is black, a 1 bit white.
inline std::string heatmap_pgm(const BitStream& s, std::size_t width, std::size_t height) {
  if (width == 0 || height == 0) throw DomainError("heatmap geometry must be positive");
  if (width * height > s.size())
    throw DomainError("heatmap " + std::to_string(width) + "x" + std::to_string(height) + " needs " +
                      std::to_string(width * height) + " bits, stream has " + std::to_string(s.size()));
  std::string out = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  out.reserve(out.size() + width * height);
  for (std::size_t i = 0; i < width * height; ++i) out.push_back(s[i] ? static_cast<char>(255) : '\0');
  return out;
}

inline void heatmap_export(const BitStream& s, std::size_t width, std::size_t height, const std::string& path) {
  write_atomically(path, heatmap_pgm(s, width, height));
}

}  // namespace prngformer::stats
