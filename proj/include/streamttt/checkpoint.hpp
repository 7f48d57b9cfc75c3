#pragma once

// Model persistence: one JSON header line {family, spec, param_count}
// followed by the flat parameter vector, one decimal value per line, in the
// order f, g, h. The loaded snapshot becomes the frozen initialization.

#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

#include "json.hpp"

#include "streamttt/csvfmt.hpp"
#include "streamttt/model_state.hpp"
#include "streamttt/neural_model.hpp"
#include "streamttt/quad_model.hpp"

namespace streamttt {

struct Checkpoint {
  std::string family;  // "quad" or "neural"
  nlohmann::json spec;
  ModelState state;
};

inline nlohmann::json neural_spec_to_json(const NeuralModelSpec& spec) {
  return nlohmann::json{{"height", spec.height},
                        {"width", spec.width},
                        {"patch_size", spec.patch_size},
                        {"hidden_dim", spec.hidden_dim},
                        {"g_head_hidden", spec.g_head_hidden},
                        {"h_head_hidden", spec.h_head_hidden}};
}

inline NeuralModelSpec neural_spec_from_json(const nlohmann::json& j) {
  NeuralModelSpec spec;
  spec.height = j.at("height").get<std::size_t>();
  spec.width = j.at("width").get<std::size_t>();
  spec.patch_size = j.at("patch_size").get<std::size_t>();
  spec.hidden_dim = j.at("hidden_dim").get<std::size_t>();
  spec.g_head_hidden = j.at("g_head_hidden").get<std::size_t>();
  spec.h_head_hidden = j.at("h_head_hidden").get<std::size_t>();
  spec.validate();
  return spec;
}

inline void write_checkpoint(std::ostream& os, const std::string& family,
                             const nlohmann::json& spec,
                             const ModelState& state) {
  nlohmann::json header{{"family", family},
                        {"spec", spec},
                        {"param_count", state.param_count()}};
  os << header.dump() << "\n";
  for (const Vec* block : {&state.f_params, &state.g_params, &state.h_params})
    for (double v : *block) os << format_g17(v) << "\n";
}

inline Checkpoint read_checkpoint(std::istream& is) {
  std::string line;
  if (!std::getline(is, line))
    throw std::runtime_error("checkpoint: missing header line");
  nlohmann::json header = nlohmann::json::parse(line, nullptr, false);
  if (header.is_discarded() || !header.is_object())
    throw std::runtime_error("checkpoint: header is not a JSON object");
  for (const char* key : {"family", "spec", "param_count"})
    if (!header.contains(key))
      throw std::runtime_error(std::string("checkpoint: header missing '") +
                               key + "'");

  Checkpoint ck;
  ck.family = header.at("family").get<std::string>();
  ck.spec = header.at("spec");
  const std::size_t count = header.at("param_count").get<std::size_t>();

  std::size_t f_size = 0, g_size = 0, h_size = 0;
  if (ck.family == "neural") {
    NeuralModelSpec spec = neural_spec_from_json(ck.spec);
    f_size = spec.f_param_count();
    g_size = spec.g_param_count();
    h_size = spec.h_param_count();
  } else if (ck.family == "quad") {
    f_size = ck.spec.at("dim").get<std::size_t>();
  } else {
    throw std::runtime_error("checkpoint: unknown family '" + ck.family + "'");
  }
  if (count != f_size + g_size + h_size)
    throw std::runtime_error("checkpoint: param_count does not match the spec");

  Vec flat;
  flat.reserve(count);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::size_t pos = 0;
    const double v = std::stod(line, &pos);
    if (pos != line.size())
      throw std::runtime_error("checkpoint: malformed value '" + line + "'");
    flat.push_back(v);
  }
  if (flat.size() != count)
    throw std::runtime_error("checkpoint: expected " + std::to_string(count) +
                             " values, found " + std::to_string(flat.size()));

  ck.state.f_params.assign(flat.begin(), flat.begin() + f_size);
  ck.state.g_params.assign(flat.begin() + f_size,
                           flat.begin() + f_size + g_size);
  ck.state.h_params.assign(flat.begin() + f_size + g_size, flat.end());
  ck.state.freeze();
  return ck;
}

}  // namespace streamttt
