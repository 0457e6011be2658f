#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <string>

#include "scca/config.hpp"

namespace scca {

// Analytic FLOP model of the attention stack. Multiply-add counts as two
// FLOPs; counts are exact integers by construction. "logit" and
// "aggregation" cover the score matmuls (QKᵀ-shaped and A·V-shaped terms),
// which is the pair the doubling claim is about: the joint score matrix
// has 2K² keys instead of K².

struct AttentionCost {
  std::uint64_t logit_flops = 0;
  std::uint64_t aggregation_flops = 0;
  std::uint64_t softmax_flops = 0;
  std::uint64_t cosine_norm_flops = 0;
  std::uint64_t projection_flops = 0;
  std::uint64_t ffn_flops = 0;
  std::uint64_t alignment_flops = 0;
  std::uint64_t activation_bytes = 0;

  std::uint64_t logit_aggregation() const { return logit_flops + aggregation_flops; }
  std::uint64_t total() const {
    return logit_flops + aggregation_flops + softmax_flops + cosine_norm_flops +
           projection_flops + ffn_flops + alignment_flops;
  }
};

struct CostReport {
  std::size_t height = 0, width = 0, window = 0, dim = 0, heads = 0, blocks = 0;
  std::uint64_t windows_unshifted = 0;  // per unshifted block
  std::uint64_t windows_shifted = 0;    // per shifted block
  std::uint64_t windows_total = 0;      // across the whole stack
  AttentionCost self_attention;   // windowed self attention
  AttentionCost cross_attention;  // windowed cross attention (same key count)
  AttentionCost scca;             // joint self+cross with 2K² keys
  double scca_to_self_logit_ratio = 0.0;
};

namespace detail {

inline std::uint64_t ceil_div(std::uint64_t a, std::uint64_t b) { return (a + b - 1) / b; }

enum class AttentionKind { self_only, cross_only, joint };

inline AttentionCost attention_cost(AttentionKind kind, std::uint64_t windows, std::uint64_t k2,
                                    std::uint64_t dim, std::uint64_t heads, std::uint64_t hidden,
                                    std::uint64_t bytes_per_scalar, std::uint64_t hw) {
  AttentionCost c;
  const std::uint64_t dk = dim / heads;
  const std::uint64_t keys = kind == AttentionKind::joint ? 2 * k2 : k2;

  c.logit_flops = windows * heads * k2 * keys * 2 * dk;
  c.aggregation_flops = windows * heads * k2 * keys * 2 * dk;
  c.softmax_flops = windows * heads * k2 * keys * 4;

  if (kind != AttentionKind::self_only) {
    // row norms on both cosine operands plus the per-entry scaling
    const std::uint64_t cosine_pairs = windows * heads * k2 * k2;
    c.cosine_norm_flops = 2 * windows * heads * k2 * (2 * dk + 2) + cosine_pairs * 2;
  }

  // q/k/v/out projections; the joint variant projects k and v over the
  // concatenated 2K² rows
  const std::uint64_t unit = k2 * dim * dim * 2;
  const std::uint64_t proj_units = kind == AttentionKind::joint ? 6 : 4;
  c.projection_flops = windows * proj_units * unit;

  c.ffn_flops = windows * (2 * k2 * dim * hidden * 2 + k2 * hidden * 8);

  if (kind == AttentionKind::joint) {
    // patch prototypes for both grids, the prototype cosine table, argmax
    const std::uint64_t proto = 2 * (windows * k2 * dim + windows * dim);
    const std::uint64_t table = windows * windows * 2 * dim + 2 * windows * 2 * dim;
    c.alignment_flops = proto + table + windows * windows;
  }

  // activation estimate: block input/output maps, per-window q/k/v/ctx
  // stores, the joint score matrix, and the FFN hidden layer
  const std::uint64_t scalars = 3 * dim * hw + windows * k2 * dim * 6 +
                                heads * windows * k2 * keys + windows * k2 * hidden;
  c.activation_bytes = scalars * bytes_per_scalar;
  return c;
}

inline void accumulate(AttentionCost& acc, const AttentionCost& one) {
  acc.logit_flops += one.logit_flops;
  acc.aggregation_flops += one.aggregation_flops;
  acc.softmax_flops += one.softmax_flops;
  acc.cosine_norm_flops += one.cosine_norm_flops;
  acc.projection_flops += one.projection_flops;
  acc.ffn_flops += one.ffn_flops;
  acc.alignment_flops += one.alignment_flops;
  // activation memory is per live block, not summed across the stack
  acc.activation_bytes = std::max(acc.activation_bytes, one.activation_bytes);
}

}  // namespace detail

inline CostReport cost_model(std::size_t height, std::size_t width, const RunConfig& cfg) {
  cfg.validate();
  CostReport r;
  r.height = height;
  r.width = width;
  r.window = cfg.window;
  r.dim = cfg.dim;
  r.heads = cfg.heads;
  r.blocks = cfg.blocks;

  const std::uint64_t k = cfg.window;
  const std::uint64_t offset = k / 2;
  r.windows_unshifted = detail::ceil_div(height, k) * detail::ceil_div(width, k);
  r.windows_shifted =
      detail::ceil_div(height + offset, k) * detail::ceil_div(width + offset, k);

  const std::uint64_t k2 = k * k;
  const std::uint64_t hidden = cfg.dim * cfg.mlp_ratio;
  const std::uint64_t bytes = cfg.dtype == "f64" ? 8 : 4;
  const std::uint64_t hw = static_cast<std::uint64_t>(height) * width;

  for (std::size_t b = 0; b < cfg.blocks; ++b) {
    const std::uint64_t windows = (b % 2 == 1) ? r.windows_shifted : r.windows_unshifted;
    r.windows_total += windows;
    detail::accumulate(r.self_attention,
                       detail::attention_cost(detail::AttentionKind::self_only, windows, k2,
                                              cfg.dim, cfg.heads, hidden, bytes, hw));
    detail::accumulate(r.cross_attention,
                       detail::attention_cost(detail::AttentionKind::cross_only, windows, k2,
                                              cfg.dim, cfg.heads, hidden, bytes, hw));
    detail::accumulate(r.scca,
                       detail::attention_cost(detail::AttentionKind::joint, windows, k2, cfg.dim,
                                              cfg.heads, hidden, bytes, hw));
  }
  r.scca_to_self_logit_ratio = static_cast<double>(r.scca.logit_aggregation()) /
                               static_cast<double>(r.self_attention.logit_aggregation());
  return r;
}

inline std::string cost_text_report(const CostReport& r) {
  auto line = [](const char* name, const AttentionCost& c) {
    std::string s(name);
    s += ": logit=" + std::to_string(c.logit_flops);
    s += " aggregation=" + std::to_string(c.aggregation_flops);
    s += " softmax=" + std::to_string(c.softmax_flops);
    s += " cosine_norm=" + std::to_string(c.cosine_norm_flops);
    s += " projections=" + std::to_string(c.projection_flops);
    s += " ffn=" + std::to_string(c.ffn_flops);
    s += " alignment=" + std::to_string(c.alignment_flops);
    s += " total=" + std::to_string(c.total());
    s += " activation_bytes=" + std::to_string(c.activation_bytes);
    return s + "\n";
  };
  std::string s;
  s += "map " + std::to_string(r.height) + "x" + std::to_string(r.width) + ", window " +
       std::to_string(r.window) + ", dim " + std::to_string(r.dim) + ", heads " +
       std::to_string(r.heads) + ", blocks " + std::to_string(r.blocks) + "\n";
  s += "windows: unshifted=" + std::to_string(r.windows_unshifted) +
       " shifted=" + std::to_string(r.windows_shifted) +
       " stack_total=" + std::to_string(r.windows_total) + "\n";
  s += line("windowed_self_attention ", r.self_attention);
  s += line("windowed_cross_attention", r.cross_attention);
  s += line("scca                    ", r.scca);
  s += "scca/self logit+aggregation ratio = " + std::to_string(r.scca_to_self_logit_ratio) +
       "\n";
  return s;
}

}  // namespace scca
