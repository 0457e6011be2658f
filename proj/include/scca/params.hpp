#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "scca/attention.hpp"
#include "scca/episodes.hpp"
#include "scca/error.hpp"
#include "scca/fusion.hpp"
#include "scca/io.hpp"
#include "scca/model.hpp"
#include "scca/rng.hpp"

namespace scca {

/// Every learnable tensor of the model, with the geometry needed to
/// rebuild it from a checkpoint.
template <typename T>
struct ModelParams {
  std::size_t in_channels = 0;
  std::size_t dim = 0;
  std::size_t heads = 0;
  std::size_t mlp_ratio = 1;
  std::size_t window = 0;

  FusionParams<T> fusion;
  std::vector<SccaBlockParams<T>> blocks;
  DecoderParams<T> decoder;

  std::vector<std::pair<std::string, Tensor<T>*>> named_parameters() {
    std::vector<std::pair<std::string, Tensor<T>*>> out;
    out.emplace_back("fusion.query_weight", &fusion.query_weight);
    out.emplace_back("fusion.query_bias", &fusion.query_bias);
    out.emplace_back("fusion.support_weight", &fusion.support_weight);
    out.emplace_back("fusion.support_bias", &fusion.support_bias);
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      const std::string prefix = "blocks." + std::to_string(b) + ".";
      auto& blk = blocks[b];
      out.emplace_back(prefix + "wq", &blk.wq);
      out.emplace_back(prefix + "wk", &blk.wk);
      out.emplace_back(prefix + "wv", &blk.wv);
      out.emplace_back(prefix + "wo", &blk.wo);
      out.emplace_back(prefix + "ffn_w1", &blk.ffn_w1);
      out.emplace_back(prefix + "ffn_b1", &blk.ffn_b1);
      out.emplace_back(prefix + "ffn_w2", &blk.ffn_w2);
      out.emplace_back(prefix + "ffn_b2", &blk.ffn_b2);
      out.emplace_back(prefix + "norm1_gamma", &blk.norm1_gamma);
      out.emplace_back(prefix + "norm1_beta", &blk.norm1_beta);
      out.emplace_back(prefix + "norm2_gamma", &blk.norm2_gamma);
      out.emplace_back(prefix + "norm2_beta", &blk.norm2_beta);
    }
    out.emplace_back("decoder.w1", &decoder.w1);
    out.emplace_back("decoder.b1", &decoder.b1);
    out.emplace_back("decoder.w2", &decoder.w2);
    out.emplace_back("decoder.b2", &decoder.b2);
    return out;
  }

  void zero_grad() {
    for (auto& [name, p] : named_parameters()) p->zero_grad();
  }

  /// Plain gradient-descent update; gradients must already be populated.
  void sgd_step(T lr) {
    for (auto& [name, p] : named_parameters()) {
      if (!p->has_grad()) continue;
      auto& v = p->mut_values();
      const auto& g = p->grad();
      for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr * g[i];
    }
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for (auto& [name, p] : named_parameters()) n += p->size();
    return n;
  }
};

/// Seeded normal init, std 1/sqrt(fan_in); norm scales start at one.
template <typename T>
ModelParams<T> init_model_params(std::size_t in_channels, std::size_t dim, std::size_t n_blocks,
                                 std::size_t heads, std::size_t mlp_ratio, std::size_t window,
                                 std::uint64_t seed) {
  if (heads == 0 || dim % heads != 0) {
    throw ContractError("init_model_params: heads must divide the embedding dimension");
  }
  Rng rng(derive_seed(seed, 0x9a7a11ull));
  auto normal = [&rng](Shape shape, double stddev, bool scale_one = false) {
    std::vector<T> data(numel(shape));
    for (auto& v : data) v = static_cast<T>(stddev * rng.normal() + (scale_one ? 1.0 : 0.0));
    return Tensor<T>::from(std::move(shape), std::move(data), true);
  };
  auto zeros = [](Shape shape) { return Tensor<T>::zeros(std::move(shape), true); };
  auto ones = [](Shape shape) {
    auto t = Tensor<T>::full(std::move(shape), T(1));
    return t.set_requires_grad(true);
  };

  ModelParams<T> p;
  p.in_channels = in_channels;
  p.dim = dim;
  p.heads = heads;
  p.mlp_ratio = mlp_ratio;
  p.window = window;

  const std::size_t fusion_in = 2 * in_channels + 1;
  const double fusion_std = 1.0 / std::sqrt(static_cast<double>(fusion_in));
  p.fusion.query_weight = normal({dim, fusion_in}, fusion_std);
  p.fusion.query_bias = zeros({dim});
  p.fusion.support_weight = normal({dim, fusion_in}, fusion_std);
  p.fusion.support_bias = zeros({dim});

  const std::size_t hidden = dim * mlp_ratio;
  const double dim_std = 1.0 / std::sqrt(static_cast<double>(dim));
  const double hid_std = 1.0 / std::sqrt(static_cast<double>(hidden));
  for (std::size_t b = 0; b < n_blocks; ++b) {
    SccaBlockParams<T> blk;
    blk.wq = normal({dim, dim}, dim_std);
    blk.wk = normal({dim, dim}, dim_std);
    blk.wv = normal({dim, dim}, dim_std);
    blk.wo = normal({dim, dim}, dim_std);
    blk.ffn_w1 = normal({hidden, dim}, dim_std);
    blk.ffn_b1 = zeros({hidden});
    blk.ffn_w2 = normal({dim, hidden}, hid_std);
    blk.ffn_b2 = zeros({dim});
    blk.norm1_gamma = ones({dim});
    blk.norm1_beta = zeros({dim});
    blk.norm2_gamma = ones({dim});
    blk.norm2_beta = zeros({dim});
    p.blocks.push_back(std::move(blk));
  }

  const std::size_t dec_hidden = std::max<std::size_t>(1, dim / 2);
  p.decoder.w1 = normal({dec_hidden, dim}, dim_std);
  p.decoder.b1 = zeros({dec_hidden});
  p.decoder.w2 = normal({2, dec_hidden}, 1.0 / std::sqrt(static_cast<double>(dec_hidden)));
  p.decoder.b2 = zeros({2});
  return p;
}

// ---------------------------------------------------------------------------
// Checkpoints: one SCTF container per parameter plus a manifest
// ---------------------------------------------------------------------------

template <typename T>
void save_checkpoint(const std::string& dir, ModelParams<T>& params) {
  namespace fs = std::filesystem;
  const fs::path base(dir);
  fs::create_directories(base / "params");
  std::ofstream manifest(base / "manifest.txt");
  if (!manifest) throw IoError("cannot write checkpoint manifest in " + dir);
  manifest << "in_channels=" << params.in_channels << "\n";
  manifest << "dim=" << params.dim << "\n";
  manifest << "blocks=" << params.blocks.size() << "\n";
  manifest << "heads=" << params.heads << "\n";
  manifest << "mlp_ratio=" << params.mlp_ratio << "\n";
  manifest << "window=" << params.window << "\n";
  manifest << "dtype=" << dtype_name(dtype_of<T>()) << "\n";
  for (auto& [name, p] : params.named_parameters()) {
    manifest << "param=" << name << "\n";
    write_tensor((base / "params" / (name + ".sctf")).string(), *p);
  }
}

template <typename T>
ModelParams<T> load_checkpoint(const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path base(dir);
  const std::string mpath = (base / "manifest.txt").string();
  std::ifstream in(mpath);
  if (!in) throw IoError("cannot open checkpoint manifest " + mpath);
  std::map<std::string, std::string> kv;
  std::vector<std::string> names;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw IoError(mpath + ": malformed line '" + line + "'");
    const std::string key = line.substr(0, eq);
    if (key == "param") {
      names.push_back(line.substr(eq + 1));
    } else {
      kv[key] = line.substr(eq + 1);
    }
  }
  auto get = [&](const char* key) {
    const auto it = kv.find(key);
    if (it == kv.end()) throw IoError(mpath + ": missing key '" + std::string(key) + "'");
    return static_cast<std::size_t>(std::stoull(it->second));
  };
  if (kv.at("dtype") != dtype_name(dtype_of<T>())) {
    throw IoError(mpath + ": checkpoint dtype is " + kv.at("dtype") + ", run requested " +
                  dtype_name(dtype_of<T>()));
  }
  ModelParams<T> params = init_model_params<T>(get("in_channels"), get("dim"), get("blocks"),
                                               get("heads"), get("mlp_ratio"), get("window"), 0);
  auto named = params.named_parameters();
  if (names.size() != named.size()) {
    throw IoError(mpath + ": parameter list does not match the model skeleton (" +
                  std::to_string(names.size()) + " vs " + std::to_string(named.size()) + ")");
  }
  for (std::size_t i = 0; i < named.size(); ++i) {
    if (names[i] != named[i].first) {
      throw IoError(mpath + ": unexpected parameter '" + names[i] + "', wanted '" +
                    named[i].first + "'");
    }
    auto loaded = read_tensor<T>((base / "params" / (names[i] + ".sctf")).string());
    if (loaded.shape() != named[i].second->shape()) {
      throw IoError("checkpoint parameter " + names[i] + " has shape " +
                    shape_str(loaded.shape()) + ", model expects " +
                    shape_str(named[i].second->shape()));
    }
    named[i].second->mut_values() = loaded.values();
  }
  return params;
}

}  // namespace scca
