// Text serialization of weight programs.
//
// Format "prngformer-weight-program", version 1, is a JSON document:
//   { "format", "version", "kind", "word_bits", "max_positions",
//     "params": {name: int}, "channels": {name: index},
//     "layers": [ { "tag", "residual": "concat"|"add", "d_in", "d_out",
//                   "heads": [ { "tag", "w_q", "w_k", "w_v", "w_o" } ],
//                   "ffn": { "w1", "b1", "w2" } } ],
//     "readout": <matrix> }
// A matrix is {"rows", "cols", "data"} with `data` row-major. Doubles are
// printed with 17 significant digits, which round-trips every value.
#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"
#include "prngformer/kernel.hpp"

namespace prngformer {

inline constexpr const char* kProgramFormat = "prngformer-weight-program";
inline constexpr int kProgramVersion = 1;

namespace detail {

inline nlohmann::json matrix_to_json(const Matrix& m) {
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", m.data()}};
}

inline Matrix matrix_from_json(const nlohmann::json& j, const std::string& where) {
  try {
    const auto rows = j.at("rows").get<std::size_t>();
    const auto cols = j.at("cols").get<std::size_t>();
    return Matrix(rows, cols, j.at("data").get<std::vector<double>>());
  } catch (const nlohmann::json::exception& e) {
    throw StructuralError(where + ": " + e.what());
  }
}

}  // namespace detail

inline nlohmann::json program_to_json(const WeightProgram& p) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : p.layers) {
    nlohmann::json heads = nlohmann::json::array();
    for (const auto& h : l.heads) {
      heads.push_back({{"tag", h.tag},
                       {"w_q", detail::matrix_to_json(h.w_q)},
                       {"w_k", detail::matrix_to_json(h.w_k)},
                       {"w_v", detail::matrix_to_json(h.w_v)},
                       {"w_o", detail::matrix_to_json(h.w_o)}});
    }
    layers.push_back({{"tag", l.tag},
                      {"residual", l.residual_mode == ResidualMode::concat ? "concat" : "add"},
                      {"d_in", l.d_in},
                      {"d_out", l.d_out},
                      {"heads", heads},
                      {"ffn",
                       {{"w1", detail::matrix_to_json(l.ffn.w1)},
                        {"b1", l.ffn.b1},
                        {"w2", detail::matrix_to_json(l.ffn.w2)}}}});
  }
  return {{"format", kProgramFormat},
          {"version", kProgramVersion},
          {"kind", p.kind},
          {"word_bits", p.word_bits},
          {"max_positions", p.max_positions},
          {"params", p.params},
          {"channels", p.channels},
          {"layers", layers},
          {"readout", detail::matrix_to_json(p.readout.map)}};
}

inline WeightProgram program_from_json(const nlohmann::json& j) {
  WeightProgram p;
  try {
    if (j.at("format").get<std::string>() != kProgramFormat) throw StructuralError("not a weight program document");
    const int version = j.at("version").get<int>();
    if (version != kProgramVersion)
      throw StructuralError("unsupported weight program version " + std::to_string(version));
    p.kind = j.at("kind").get<std::string>();
    p.word_bits = j.at("word_bits").get<std::size_t>();
    p.max_positions = j.value("max_positions", std::size_t{0});
    p.params = j.value("params", std::map<std::string, std::int64_t>{});
    p.channels = j.value("channels", std::map<std::string, std::size_t>{});
    const auto& layers = j.at("layers");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& jl = layers[i];
      const std::string where = "layer " + std::to_string(i);
      LayerSpec l;
      l.tag = jl.value("tag", std::string{});
      const auto mode = jl.at("residual").get<std::string>();
      if (mode != "concat" && mode != "add") throw StructuralError(where + ": unknown residual mode " + mode);
      l.residual_mode = mode == "concat" ? ResidualMode::concat : ResidualMode::add;
      l.d_in = jl.at("d_in").get<std::size_t>();
      l.d_out = jl.at("d_out").get<std::size_t>();
      for (const auto& jh : jl.at("heads")) {
        HeadWeights h;
        h.tag = jh.value("tag", std::string{});
        h.w_q = detail::matrix_from_json(jh.at("w_q"), where);
        h.w_k = detail::matrix_from_json(jh.at("w_k"), where);
        h.w_v = detail::matrix_from_json(jh.at("w_v"), where);
        h.w_o = detail::matrix_from_json(jh.at("w_o"), where);
        l.heads.push_back(std::move(h));
      }
      const auto& jf = jl.at("ffn");
      l.ffn.w1 = detail::matrix_from_json(jf.at("w1"), where);
      l.ffn.b1 = jf.at("b1").get<std::vector<double>>();
      l.ffn.w2 = detail::matrix_from_json(jf.at("w2"), where);
      p.layers.push_back(std::move(l));
    }
    p.readout.map = detail::matrix_from_json(j.at("readout"), "readout");
  } catch (const nlohmann::json::exception& e) {
    throw StructuralError(std::string("weight program: ") + e.what());
  }
  p.validate();
  return p;
}

inline std::string serialize_program(const WeightProgram& p) { return program_to_json(p).dump(1) + "\n"; }

inline WeightProgram deserialize_program(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw StructuralError(std::string("weight program is not valid JSON: ") + e.what());
  }
  return program_from_json(j);
}

inline WeightProgram load_program(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw StructuralError("cannot open program file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return deserialize_program(ss.str());
}

}  // namespace prngformer
