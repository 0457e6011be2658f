#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "scca/episodes.hpp"
#include "scca/error.hpp"

namespace scca {

/// Effective run configuration. Defaults: 8 blocks, window 8, 8 heads,
/// embedding dim 256, MLP ratio 1, binarization threshold 0.75.
struct RunConfig {
  std::size_t blocks = 8;
  std::size_t window = 8;
  std::size_t heads = 8;
  std::size_t dim = 256;
  std::size_t mlp_ratio = 1;
  std::size_t shots = 1;
  std::uint64_t seed = 0;
  std::size_t epochs = 1;
  double lr = 0.05;
  std::string dtype = "f32";
  double pma_threshold = 0.75;
  std::string episodes;  // directory or "synth:<spec>"
  std::string out = "out";

  void validate() const {
    if (window < 1) throw ContractError("config: window must be >= 1");
    if (heads == 0 || dim % heads != 0) {
      throw ContractError("config: heads must divide the embedding dimension");
    }
    if (dtype != "f32" && dtype != "f64") {
      throw ContractError("config: dtype must be f32 or f64");
    }
    if (pma_threshold < 0.0 || pma_threshold > 1.0) {
      throw ContractError("config: pma-threshold must lie in [0,1]");
    }
    if (mlp_ratio < 1) throw ContractError("config: mlp-ratio must be >= 1");
  }

  std::string echo() const {
    std::string s;
    s += "blocks=" + std::to_string(blocks);
    s += " window=" + std::to_string(window);
    s += " heads=" + std::to_string(heads);
    s += " dim=" + std::to_string(dim);
    s += " mlp_ratio=" + std::to_string(mlp_ratio);
    s += " shots=" + std::to_string(shots);
    s += " seed=" + std::to_string(seed);
    s += " epochs=" + std::to_string(epochs);
    s += " lr=" + std::to_string(lr);
    s += " dtype=" + dtype;
    s += " pma_threshold=" + std::to_string(pma_threshold);
    if (!episodes.empty()) s += " episodes=" + episodes;
    s += " out=" + out;
    return s;
  }
};

/// Parses "C=32,H=16,W=16,classes=4,blob=6,noise=0.1,count=100" into a
/// generation spec. Unknown keys are rejected.
inline SynthSpec parse_synth_spec(const std::string& text, std::size_t shots) {
  SynthSpec spec;
  spec.shots = shots;
  if (text.empty()) return spec;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t comma = text.find(',', pos);
    if (comma == std::string::npos) comma = text.size();
    const std::string item = text.substr(pos, comma - pos);
    const std::size_t eq = item.find('=');
    if (eq == std::string::npos) {
      throw ContractError("synth spec: malformed item '" + item + "'");
    }
    const std::string key = item.substr(0, eq);
    const std::string value = item.substr(eq + 1);
    try {
      if (key == "C") spec.channels = std::stoull(value);
      else if (key == "H") spec.height = std::stoull(value);
      else if (key == "W") spec.width = std::stoull(value);
      else if (key == "classes") spec.n_classes = std::stoull(value);
      else if (key == "blob") spec.blob = std::stoull(value);
      else if (key == "noise") spec.noise = std::stod(value);
      else if (key == "count") spec.count = std::stoull(value);
      else throw ContractError("synth spec: unknown key '" + key + "'");
    } catch (const ContractError&) {
      throw;
    } catch (...) {
      throw ContractError("synth spec: bad value for '" + key + "'");
    }
    pos = comma + 1;
  }
  if (spec.blob < 1 || spec.blob > spec.height || spec.blob > spec.width) {
    throw ContractError("synth spec: blob must fit inside the map");
  }
  return spec;
}

}  // namespace scca
