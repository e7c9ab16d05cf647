// prngformer: compile PRNGs and circuits into transformer weights, run
// them, check them against the reference generators, and test the
// resulting bit streams.
//
// Exit codes: 0 success, 1 usage, 2 validation, 3 low-margin output or
// verification failure.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "prngformer/prngformer.hpp"

namespace pf = prngformer;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kUsage = 1, kValidation = 2, kFailure = 3 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw pf::DomainError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// JSON parse errors from nlohmann already carry "line L, column C".
json read_json(const std::string& path) {
  try {
    return json::parse(slurp(path));
  } catch (const json::parse_error& e) {
    throw pf::DomainError(path + ": " + e.what());
  }
}

template <class T>
T field(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw pf::DomainError(where + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw pf::DomainError(where + ": field '" + key + "': " + e.what());
  }
}

std::string spec_kind(const json& spec, const std::string& requested) {
  const std::string declared = spec.is_object() ? spec.value("kind", std::string{}) : std::string{};
  if (!requested.empty() && !declared.empty() && requested != declared)
    throw UsageError("--kind " + requested + " does not match the spec file's kind '" + declared + "'");
  const std::string kind = requested.empty() ? declared : requested;
  if (kind.empty()) throw UsageError("no --kind given and the spec file has no \"kind\" field");
  if (kind != "lcg" && kind != "mt" && kind != "circuit") throw UsageError("unknown kind '" + kind + "'");
  return kind;
}

pf::LcgSpec lcg_from_json(const json& j) {
  pf::LcgSpec s;
  s.a = field<std::uint64_t>(j, "a", "lcg spec");
  s.c = field<std::uint64_t>(j, "c", "lcg spec");
  s.m = field<std::uint64_t>(j, "m", "lcg spec");
  s.x0 = j.value("x0", std::uint64_t{0});
  s.w = j.value("w", pf::LcgSpec::width_for(s.m));
  s.validate();
  return s;
}

// Either {"preset": "mt19937", "seed": N} or the full parameter set with a
// "seed" or an explicit "state" array.
pf::MtSpec mt_from_json(const json& j) {
  pf::MtSpec s;
  const std::string preset = j.value("preset", std::string{});
  if (!preset.empty() && preset != "mt19937") throw pf::DomainError("mt spec: unknown preset '" + preset + "'");
  if (preset.empty()) {
    const std::string w = "mt spec";
    s.w = field<unsigned>(j, "w", w);
    s.n = field<std::size_t>(j, "n", w);
    s.m = field<std::size_t>(j, "m", w);
    s.r = field<unsigned>(j, "r", w);
    s.a = field<std::uint64_t>(j, "a", w);
    s.u = field<unsigned>(j, "u", w);
    s.s = field<unsigned>(j, "s", w);
    s.b = field<std::uint64_t>(j, "b", w);
    s.t = field<unsigned>(j, "t", w);
    s.c = field<std::uint64_t>(j, "c", w);
    s.l = field<unsigned>(j, "l", w);
  }
  if (j.contains("state")) {
    s.state = field<std::vector<std::uint64_t>>(j, "state", "mt spec");
  } else {
    s.seed(j.value("seed", std::uint64_t{5489}), j.value("seed_multiplier", std::uint64_t{1812433253u}));
  }
  s.validate();
  return s;
}

double eps_budget_from_env() {
  const char* v = std::getenv("PRNGFORMER_EPS_BUDGET");
  if (!v || !*v) return 0.1;
  char* end = nullptr;
  const double e = std::strtod(v, &end);
  if (*end != '\0' || !(e > 0.0)) throw pf::DomainError(std::string("PRNGFORMER_EPS_BUDGET is not a positive number: ") + v);
  return e;
}

pf::WeightProgram compile_spec(const json& spec, const std::string& kind, std::size_t max_blocks) {
  if (kind == "lcg") return pf::build_lcg_program(lcg_from_json(spec));
  if (kind == "mt") {
    pf::MtCompileOptions opt;
    opt.max_blocks = max_blocks ? max_blocks : spec.value("max_blocks", std::size_t{0});
    opt.eps_budget = eps_budget_from_env();
    return pf::build_mt_program(mt_from_json(spec), opt);
  }
  return pf::compile_circuit(pf::netlist_from_json(spec));
}

pf::PrecisionPolicy policy_for(int mantissa_bits) {
  return mantissa_bits == 0 ? pf::PrecisionPolicy::exact() : pf::PrecisionPolicy::quantized(mantissa_bits);
}

void write_output(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
  } else {
    pf::stats::write_atomically(path, text);
  }
}

std::string tape_text(const pf::Tape& t) {
  std::ostringstream os;
  pf::write_tape(os, t);
  return os.str();
}

// ---------------------------------------------------------------------------

struct CompileArgs {
  std::string kind, spec, out;
  std::size_t max_blocks = 0;
};

int cmd_compile(const CompileArgs& a) {
  const json spec = read_json(a.spec);
  const std::string kind = spec_kind(spec, a.kind);
  const pf::WeightProgram p = compile_spec(spec, kind, a.max_blocks);
  pf::stats::write_atomically(a.out, pf::serialize_program(p));
  std::cout << "kind " << p.kind << ", " << p.layers.size() << " layer(s), " << p.head_count()
            << " head(s), word bits " << p.word_bits << "\n";
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    const auto& l = p.layers[i];
    std::cout << "  layer " << i + 1 << " [" << l.tag << "]: d_in " << l.d_in << ", heads " << l.heads.size()
              << ", ffn hidden " << l.ffn.hidden() << ", d_out " << l.d_out << "\n";
  }
  std::cout << "max |weight| " << p.max_abs_weight();
  if (p.max_positions) std::cout << ", max positions " << p.max_positions;
  std::cout << "\n";
  return kOk;
}

struct GenerateArgs {
  std::string program, prompt, out;
  std::size_t steps = 0;
  int mantissa_bits = 0;
};

int cmd_generate(const GenerateArgs& a) {
  const pf::WeightProgram p = pf::load_program(a.program);
  std::ifstream in(a.prompt);
  if (!in) throw pf::DomainError("cannot open " + a.prompt);
  const pf::Tape prompt = pf::read_tape(in);
  pf::check_prompt(p, prompt);
  write_output(a.out, tape_text(pf::generate(p, prompt, a.steps, policy_for(a.mantissa_bits))));
  return kOk;
}

struct VerifyArgs {
  std::string program, spec;
  std::size_t steps = 0;
  int mantissa_bits = 0;
  std::uint64_t seed = 1;
};

// Compares the generated tokens after the prompt with the expected ones.
int report_diff(const pf::Tape& got, const pf::Tape& want, std::size_t from) {
  for (std::size_t i = from; i < want.size(); ++i) {
    if (i >= got.size() || !(got[i] == want[i])) {
      std::cout << "MISMATCH first divergence at tape position " << i << ": expected " << pf::to_string(want[i])
                << ", got " << (i < got.size() ? pf::to_string(got[i]) : std::string("<none>")) << "\n";
      return kFailure;
    }
  }
  std::cout << "OK " << want.size() - from << " token(s) bit-exact\n";
  return kOk;
}

int cmd_verify(const VerifyArgs& a) {
  const pf::WeightProgram p = pf::load_program(a.program);
  const json spec = read_json(a.spec);
  const std::string kind = spec_kind(spec, p.kind);
  const auto policy = policy_for(a.mantissa_bits);
  if (a.steps == 0) {
    std::cout << "OK 0 token(s) bit-exact\n";
    return kOk;
  }
  try {
    if (kind == "lcg") {
      const auto s = lcg_from_json(spec);
      pf::Tape want = pf::lcg_prompt(s);
      std::uint64_t x = s.x0;
      for (std::size_t k = 0; k < a.steps; ++k) want.push_back(pf::TapeToken::number(x = pf::lcg_next(s, x)));
      return report_diff(pf::generate(p, pf::lcg_prompt(s), a.steps, policy), want, 1);
    }
    if (kind == "mt") {
      const auto s = mt_from_json(spec);
      const pf::Tape prompt = pf::mt_prompt(s);
      const std::size_t blocks = (a.steps + s.n + 1) / (s.n + 2);
      pf::Tape want = pf::encode_tape(s, blocks);
      want.resize(prompt.size() + a.steps);
      return report_diff(pf::generate(p, prompt, a.steps, policy), want, prompt.size());
    }
    // Circuits: `steps` random assignments drawn from --seed.
    const auto net = pf::netlist_from_json(spec);
    std::mt19937_64 rng(a.seed);
    for (std::size_t trial = 0; trial < a.steps; ++trial) {
      std::vector<bool> bits(net.inputs.size());
      for (std::size_t i = 0; i < bits.size(); ++i) bits[i] = rng() & 1u;
      const auto want = pf::eval_circuit(net, bits);
      const auto got = pf::run_circuit(p, net, bits, policy);
      for (std::size_t o = 0; o < want.size(); ++o) {
        if (got[o] != want[o]) {
          std::cout << "MISMATCH assignment " << trial << ", output " << o << " (tape position "
                    << bits.size() + o << "): expected " << want[o] << ", got " << got[o] << "\n";
          return kFailure;
        }
      }
    }
    std::cout << "OK " << a.steps << " assignment(s) bit-exact\n";
    return kOk;
  } catch (const pf::LowMarginError& e) {
    std::cout << "MISMATCH first divergence at tape position " << e.position << ": " << e.what() << "\n";
    return kFailure;
  }
}

struct StreamArgs {
  std::string in, format = "auto";
  unsigned word_bits = 32;
};

// Tapes become bit streams through their output words only: for Mersenne
// Twister tapes (which contain '=>') the y token of each block, otherwise
// every number. Each word contributes word_bits bits, least significant
// first. Raw bit files are ASCII '0'/'1' with whitespace ignored.
pf::stats::BitStream load_stream(const StreamArgs& a) {
  std::string format = a.format;
  if (format == "auto") format = a.in.size() >= 5 && a.in.substr(a.in.size() - 5) == ".tape" ? "tape" : "bits";
  if (format == "bits") {
    std::ifstream in(a.in);
    if (!in) throw pf::DomainError("cannot open " + a.in);
    return pf::stats::read_ascii_bits(in);
  }
  if (format != "tape") throw UsageError("--format must be auto, tape or bits");
  if (a.word_bits == 0 || a.word_bits > 63) throw pf::DomainError("--word-bits must lie in [1, 63]");
  std::ifstream in(a.in);
  if (!in) throw pf::DomainError("cannot open " + a.in);
  const pf::Tape tape = pf::read_tape(in);
  std::vector<std::uint64_t> words;
  std::size_t first_arrow = tape.size();
  for (std::size_t i = 0; i < tape.size(); ++i)
    if (tape[i].arrow) {
      first_arrow = i;
      break;
    }
  if (first_arrow < tape.size()) {
    words = pf::decode_tape(tape, first_arrow, a.word_bits, true).outputs;
  } else {
    for (const auto& t : tape) words.push_back(t.value);
  }
  for (auto v : words)
    if (v >> a.word_bits) throw pf::DomainError("tape word " + std::to_string(v) + " exceeds --word-bits");
  return pf::stats::BitStream::from_words(words, a.word_bits);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

struct StatsArgs {
  StreamArgs stream;
  std::string out, tests;
  double alpha = 0.01;
  std::size_t block_size = 128;
  int pattern_bits = 2;
  bool strict = false;
};

int cmd_stats(const StatsArgs& a) {
  const auto s = load_stream(a.stream);
  pf::stats::SuiteOptions opt;
  opt.alpha = a.alpha;
  opt.block_size = a.block_size;
  opt.pattern_bits = a.pattern_bits;
  opt.only = split_list(a.tests);
  if (!(a.alpha > 0.0 && a.alpha < 1.0)) throw pf::DomainError("--alpha must lie in (0, 1)");
  const auto reports = pf::stats::run_suite(s, opt);
  write_output(a.out, pf::stats::report_to_json(reports, opt, s.size()).dump(1) + "\n");
  bool all = true;
  for (const auto& r : reports) all = all && (r.pass || r.skipped);
  return a.strict && !all ? kFailure : kOk;
}

struct HeatmapArgs {
  StreamArgs stream;
  std::string out;
  std::size_t width = 0, height = 0;
};

int cmd_heatmap(const HeatmapArgs& a) {
  pf::stats::heatmap_export(load_stream(a.stream), a.width, a.height, a.out);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "prngformer: compile PRNGs and Boolean circuits into transformer weights, run and verify them.\n\n"
      "Exit codes: 0 success, 1 usage, 2 validation, 3 low-margin output or verification failure.\n"
      "Bit streams from tapes use the output words only (the y token of each Mersenne Twister block,\n"
      "or every number of a tape without '=>'), each word serialized least-significant bit first."};
  app.require_subcommand(1);

  CompileArgs ca;
  auto* compile = app.add_subcommand("compile", "compile a JSON spec (lcg, mt or circuit) into a weight program");
  compile->add_option("--kind", ca.kind, "lcg, mt or circuit (defaults to the spec file's \"kind\" field)");
  compile->add_option("--spec", ca.spec, "spec file (JSON)")->required();
  compile->add_option("--out", ca.out, "program file to write")->required();
  compile->add_option("--max-blocks", ca.max_blocks, "mt only: longest supported tape, in blocks");

  GenerateArgs ga;
  auto* gen = app.add_subcommand("generate", "extend a prompt tape by running a program");
  gen->add_option("--program", ga.program, "program file")->required();
  gen->add_option("--prompt", ga.prompt, "prompt tape (one token per line, '=>' for the arrow)")->required();
  gen->add_option("--steps", ga.steps, "tokens to append")->required();
  gen->add_option("--mantissa-bits", ga.mantissa_bits, "simulate this many mantissa bits (4..52); 0 = exact")
      ->check(CLI::Range(0, 52));
  gen->add_option("--out", ga.out, "tape file to write (default: standard output)");

  VerifyArgs va;
  auto* verify = app.add_subcommand("verify", "run a program next to the reference generator and diff");
  verify->add_option("--program", va.program, "program file")->required();
  verify->add_option("--spec", va.spec, "spec file the program was compiled from")->required();
  verify->add_option("--steps", va.steps, "tokens to check (circuits: random assignments)")->required();
  verify->add_option("--mantissa-bits", va.mantissa_bits, "simulate this many mantissa bits; 0 = exact")
      ->check(CLI::Range(0, 52));
  verify->add_option("--seed", va.seed, "seed for randomized circuit assignments");

  StatsArgs sa;
  auto* stats = app.add_subcommand("stats", "run the randomness battery on a tape or raw bit file");
  stats->add_option("--in", sa.stream.in, "input file")->required();
  stats->add_option("--format", sa.stream.format, "auto (by .tape extension), tape or bits");
  stats->add_option("--word-bits", sa.stream.word_bits, "bits per tape word (default 32)");
  stats->add_option("--alpha", sa.alpha, "significance level (default 0.01)");
  stats->add_option("--tests", sa.tests, "comma-separated subset of tests (default: all)");
  stats->add_option("--block-size", sa.block_size, "block frequency block length M (default 128)");
  stats->add_option("--pattern-bits", sa.pattern_bits, "serial / approximate entropy m (default 2)");
  stats->add_option("--out", sa.out, "report file (JSON, default: standard output)");
  stats->add_flag("--strict", sa.strict, "exit 3 if any test fails");

  HeatmapArgs ha;
  auto* heat = app.add_subcommand("heatmap", "write the first width*height bits as a binary PGM");
  heat->add_option("--in", ha.stream.in, "input file")->required();
  heat->add_option("--format", ha.stream.format, "auto (by .tape extension), tape or bits");
  heat->add_option("--word-bits", ha.stream.word_bits, "bits per tape word (default 32)");
  heat->add_option("--width", ha.width, "image width")->required();
  heat->add_option("--height", ha.height, "image height")->required();
  heat->add_option("--out", ha.out, "PGM file to write")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*compile) return cmd_compile(ca);
    if (*gen) return cmd_generate(ga);
    if (*verify) return cmd_verify(va);
    if (*stats) return cmd_stats(sa);
    if (*heat) return cmd_heatmap(ha);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const pf::LowMarginError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  } catch (const pf::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  }
  return kUsage;
}
