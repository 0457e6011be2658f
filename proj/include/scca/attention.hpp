#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "scca/error.hpp"
#include "scca/tensor.hpp"
#include "scca/windowing.hpp"

namespace scca {

inline constexpr double kNormEps = 1e-8;     // clamp for cosine norms
inline constexpr double kMaskedLogit = -1e9; // pre-softmax fill for padded keys

struct BlockSettings {
  std::size_t heads = 8;
  // Pre-normalization before attention and before the FFN. Disabled in
  // test mode so the hand-derived score examples hold literally.
  bool pre_norm = true;
};

template <typename T>
struct SccaBlockParams {
  Tensor<T> wq, wk, wv, wo;  // dim×dim projections, no bias
  Tensor<T> ffn_w1, ffn_b1;  // hidden×dim, hidden
  Tensor<T> ffn_w2, ffn_b2;  // dim×hidden, dim
  Tensor<T> norm1_gamma, norm1_beta;
  Tensor<T> norm2_gamma, norm2_beta;

  std::size_t dim() const { return wq.shape()[0]; }
  std::size_t hidden() const { return ffn_w1.shape()[0]; }
};

/// Projections fixed to the identity, FFN second layer and output path
/// zeroable by the caller; used by tests that exercise the raw score
/// equations.
template <typename T>
SccaBlockParams<T> identity_block_params(std::size_t dim, std::size_t hidden) {
  auto eye = [](std::size_t rows, std::size_t cols) {
    std::vector<T> w(rows * cols, T(0));
    for (std::size_t i = 0; i < rows && i < cols; ++i) w[i * cols + i] = T(1);
    return Tensor<T>::from({rows, cols}, std::move(w));
  };
  SccaBlockParams<T> p;
  p.wq = eye(dim, dim);
  p.wk = eye(dim, dim);
  p.wv = eye(dim, dim);
  p.wo = eye(dim, dim);
  p.ffn_w1 = eye(hidden, dim);
  p.ffn_b1 = Tensor<T>::zeros({hidden});
  p.ffn_w2 = Tensor<T>::zeros({dim, hidden});
  p.ffn_b2 = Tensor<T>::zeros({dim});
  p.norm1_gamma = Tensor<T>::full({dim}, T(1));
  p.norm1_beta = Tensor<T>::zeros({dim});
  p.norm2_gamma = Tensor<T>::full({dim}, T(1));
  p.norm2_beta = Tensor<T>::zeros({dim});
  return p;
}

/// For each query patch, the index of its aligned support patch.
struct AlignmentIndices {
  std::vector<std::size_t> indices;
};

/// Raw per-head score blocks and the normalized joint matrix. a_qq and
/// a_qs are stored pre-softmax (a_qs entries are plain cosines in [-1,1]);
/// padded-key masking is applied between concatenation and softmax.
template <typename T>
struct AttentionScores {
  std::vector<Tensor<T>> a_qq;   // heads × (K²×K²)
  std::vector<Tensor<T>> a_qs;   // heads × (K²×K²)
  std::vector<Tensor<T>> joint;  // heads × (K²×2K²), rows sum to 1
};

template <typename T>
struct PatchPrototypes {
  Tensor<T> protos;                     // N²×C
  std::vector<std::uint8_t> nonempty;   // patch had at least one eligible pixel
};

namespace detail {

template <typename T>
PatchPrototypes<T> prototypes_impl(const PatchGrid<T>& grid, const std::vector<T>* fg) {
  NoGradGuard guard;
  const std::size_t n = grid.count();
  const std::size_t c = grid.origin_shape[0];
  const std::size_t k2 = grid.window * grid.window;
  const auto& patches = grid.patches.values();
  const auto& valid = grid.validity.values();
  std::vector<T> protos(n * c, T(0));
  std::vector<std::uint8_t> nonempty(n, 0);
  for (std::size_t win = 0; win < n; ++win) {
    std::size_t count = 0;
    for (std::size_t pos = 0; pos < k2; ++pos) {
      const bool eligible =
          valid[win * k2 + pos] == T(1) && (!fg || (*fg)[win * k2 + pos] == T(1));
      if (!eligible) continue;
      ++count;
      for (std::size_t ch = 0; ch < c; ++ch) {
        protos[win * c + ch] += patches[(win * c + ch) * k2 + pos];
      }
    }
    if (count > 0) {
      nonempty[win] = 1;
      for (std::size_t ch = 0; ch < c; ++ch) protos[win * c + ch] /= static_cast<T>(count);
    }
  }
  return {Tensor<T>::from({n, c}, std::move(protos)), std::move(nonempty)};
}

}  // namespace detail

/// Patch-wise average pooling over the valid pixels. Patches with no
/// eligible pixel yield a zero vector and a cleared flag.
template <typename T>
PatchPrototypes<T> patch_prototypes(const PatchGrid<T>& grid) {
  return detail::prototypes_impl(grid, static_cast<const std::vector<T>*>(nullptr));
}

/// Support variant: averages only FG pixels, per the FG-mask grid.
template <typename T>
PatchPrototypes<T> patch_prototypes(const PatchGrid<T>& grid, const PatchGrid<T>& fg_grid) {
  if (fg_grid.count() != grid.count() || fg_grid.window != grid.window) {
    throw ShapeError("patch_prototypes: FG grid geometry does not match the feature grid");
  }
  const auto& fg = fg_grid.patches.values();
  return detail::prototypes_impl(grid, &fg);
}

/// Argmax of cosine similarity restricted to FG-flagged support patches;
/// ties break toward the lowest index. Patches without FG are excluded
/// from the argmax entirely (equivalent to a -inf score).
template <typename T>
AlignmentIndices align_patches(const Tensor<T>& tq_proto, const Tensor<T>& ts_proto,
                               const std::vector<std::uint8_t>& fg_flags) {
  detail::check_2d(tq_proto, "align_patches");
  detail::check_2d(ts_proto, "align_patches");
  if (tq_proto.shape()[1] != ts_proto.shape()[1]) {
    throw ShapeError("align_patches: prototype dimensions disagree");
  }
  const std::size_t nq = tq_proto.shape()[0], ns = ts_proto.shape()[0];
  if (fg_flags.size() != ns) {
    throw ShapeError("align_patches: flag count does not match support patches");
  }
  bool any = false;
  for (auto f : fg_flags) any = any || f;
  if (!any) throw ContractError("align_patches: no support patch carries foreground");

  NoGradGuard guard;
  auto sim = cosine_sim_matrix(tq_proto, ts_proto, T(kNormEps));
  const auto& sv = sim.values();
  AlignmentIndices out;
  out.indices.resize(nq);
  for (std::size_t q = 0; q < nq; ++q) {
    std::size_t best = ns;
    T best_score = T(0);
    for (std::size_t s = 0; s < ns; ++s) {
      if (!fg_flags[s]) continue;
      const T score = sv[q * ns + s];
      if (best == ns || score > best_score) {
        best = s;
        best_score = score;
      }
    }
    out.indices[q] = best;
  }
  return out;
}

/// Scores for one query window against its aligned support window:
/// scaled dot product for the self half, magnitude-free cosine for the
/// cross half, one softmax over the concatenation. Padded key positions
/// are pushed to -1e9 before the softmax.
template <typename T>
AttentionScores<T> scca_scores(const Tensor<T>& query_rows, const Tensor<T>& support_rows,
                               const std::vector<std::uint8_t>& query_valid,
                               const std::vector<std::uint8_t>& support_valid,
                               const SccaBlockParams<T>& params, const BlockSettings& settings) {
  detail::check_2d(query_rows, "scca_scores");
  detail::check_2d(support_rows, "scca_scores");
  const std::size_t k2 = query_rows.shape()[0];
  const std::size_t dim = query_rows.shape()[1];
  if (support_rows.shape() != query_rows.shape()) {
    throw ShapeError("scca_scores: query/support window shapes disagree");
  }
  if (params.dim() != dim) throw ShapeError("scca_scores: parameter dim mismatch");
  if (settings.heads == 0 || dim % settings.heads != 0) {
    throw ShapeError("scca_scores: head count must divide the embedding dimension");
  }
  if (query_valid.size() != k2 || support_valid.size() != k2) {
    throw ShapeError("scca_scores: validity length must equal the window pixel count");
  }
  const std::size_t dk = dim / settings.heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dk));

  auto q_proj = linear(query_rows, params.wq);
  auto kq_proj = linear(query_rows, params.wk);
  auto ks_proj = linear(support_rows, params.wk);

  // -1e9 at invalid key columns, zero elsewhere; constants carry no grad
  auto key_mask = [&](const std::vector<std::uint8_t>& valid) {
    std::vector<T> m(k2 * k2, T(0));
    for (std::size_t col = 0; col < k2; ++col) {
      if (valid[col]) continue;
      for (std::size_t row = 0; row < k2; ++row) m[row * k2 + col] = T(kMaskedLogit);
    }
    return Tensor<T>::from({k2, k2}, std::move(m));
  };
  const auto qmask = key_mask(query_valid);
  const auto smask = key_mask(support_valid);

  AttentionScores<T> scores;
  for (std::size_t h = 0; h < settings.heads; ++h) {
    auto qh = slice_cols(q_proj, h * dk, (h + 1) * dk);
    auto kqh = slice_cols(kq_proj, h * dk, (h + 1) * dk);
    auto ksh = slice_cols(ks_proj, h * dk, (h + 1) * dk);
    auto a_qq = mul_scalar(matmul(qh, transpose2(kqh)), scale);
    auto a_qs = cosine_sim_matrix(qh, ksh, T(kNormEps));
    auto joint = softmax_lastdim(concat_cols(add(a_qq, qmask), add(a_qs, smask)));
    scores.a_qq.push_back(std::move(a_qq));
    scores.a_qs.push_back(std::move(a_qs));
    scores.joint.push_back(std::move(joint));
  }
  return scores;
}

namespace detail {

/// Row-wise pre-normalization of a C×H×W map, or a pass-through.
template <typename T>
Tensor<T> maybe_norm_rows(const Tensor<T>& rows, const Tensor<T>& gamma, const Tensor<T>& beta,
                          bool enabled) {
  return enabled ? layer_norm_rows(rows, gamma, beta) : rows;
}

/// Per-row broadcast of a pixel mask over all channels, as a constant.
template <typename T>
Tensor<T> mask_row_matrix(const Tensor<T>& mask, std::size_t channels) {
  const auto& mv = mask.values();
  std::vector<T> m(mv.size() * channels);
  for (std::size_t i = 0; i < mv.size(); ++i) {
    for (std::size_t ch = 0; ch < channels; ++ch) m[i * channels + ch] = mv[i];
  }
  return Tensor<T>::from({mv.size(), channels}, std::move(m));
}

}  // namespace detail

/// One SCCA block: window both maps, align support patches, score each
/// query window against itself (scaled dot product) and its aligned
/// support window (cosine), aggregate the concatenated values, and run
/// the pre-normalized FFN over the residual sum.
template <typename T>
Tensor<T> scca_block_forward(const Tensor<T>& fq, const Tensor<T>& fs, const Tensor<T>& ms,
                             const SccaBlockParams<T>& params, const BlockSettings& settings,
                             std::size_t window, bool shifted) {
  if (fq.rank() != 3 || fs.rank() != 3 || fq.shape() != fs.shape()) {
    throw ShapeError("scca_block_forward: feature maps must share a C×H×W shape");
  }
  const std::size_t c = fq.shape()[0], h = fq.shape()[1], w = fq.shape()[2];
  if (params.dim() != c) throw ShapeError("scca_block_forward: parameter dim mismatch");

  auto q_rows = to_rows(fq);
  auto q_normed =
      detail::maybe_norm_rows(q_rows, params.norm1_gamma, params.norm1_beta, settings.pre_norm);
  auto s_rows = to_rows(fs);
  auto s_normed =
      detail::maybe_norm_rows(s_rows, params.norm1_gamma, params.norm1_beta, settings.pre_norm);
  // support features carry FG information only
  auto s_masked = mul(s_normed, detail::mask_row_matrix(ms, c));

  auto grid_q = partition(from_rows(q_normed, c, h, w), window, shifted);
  auto grid_s = partition(from_rows(s_masked, c, h, w), window, shifted);
  auto grid_m = partition(ms, window, shifted);

  // patch alignment on the tensors attention consumes
  auto q_protos = patch_prototypes(grid_q);
  auto s_protos = patch_prototypes(grid_s, grid_m);
  auto aligned = align_patches(q_protos.protos, s_protos.protos, s_protos.nonempty);

  const std::size_t dk = c / settings.heads;
  std::vector<Tensor<T>> out_rows;
  out_rows.reserve(grid_q.count());
  for (std::size_t win = 0; win < grid_q.count(); ++win) {
    auto u = window_rows(grid_q, win);
    auto s = window_rows(grid_s, aligned.indices[win]);
    const auto q_valid = window_validity(grid_q, win);
    const auto s_valid = window_validity(grid_s, aligned.indices[win]);
    auto scores = scca_scores(u, s, q_valid, s_valid, params, settings);

    auto vq = linear(u, params.wv);
    auto vs = linear(s, params.wv);
    std::vector<Tensor<T>> head_ctx;
    head_ctx.reserve(settings.heads);
    for (std::size_t head = 0; head < settings.heads; ++head) {
      auto values = concat_rows(slice_cols(vq, head * dk, (head + 1) * dk),
                                slice_cols(vs, head * dk, (head + 1) * dk));
      head_ctx.push_back(matmul(scores.joint[head], values));
    }
    out_rows.push_back(linear(concat_cols(head_ctx), params.wo));
  }

  auto attn_grid = grid_from_window_rows(grid_q, concat_rows(out_rows));
  auto attn_map = merge(attn_grid);

  // residual around attention, then the FFN with its own residual
  auto z_rows = add(q_rows, to_rows(attn_map));
  auto z_normed =
      detail::maybe_norm_rows(z_rows, params.norm2_gamma, params.norm2_beta, settings.pre_norm);
  auto ffn = linear(gelu(linear(z_normed, params.ffn_w1, params.ffn_b1)), params.ffn_w2,
                    params.ffn_b2);
  return from_rows(add(z_rows, ffn), c, h, w);
}

/// Stacked SCCA blocks; odd-indexed blocks use the shifted window lattice.
/// Support features are fixed inputs to every block.
template <typename T>
Tensor<T> stack_forward(const Tensor<T>& fq0, const Tensor<T>& fs0, const Tensor<T>& ms,
                        const std::vector<SccaBlockParams<T>>& blocks,
                        const BlockSettings& settings, std::size_t window) {
  if (blocks.empty()) throw ContractError("stack_forward: at least one block is required");
  for (const T v : ms.values()) {
    if (v != T(0) && v != T(1)) throw ContractError("stack_forward: support mask must be binary");
  }
  Tensor<T> fq = fq0;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    fq = scca_block_forward(fq, fs0, ms, blocks[i], settings, window, i % 2 == 1);
  }
  return fq;
}

}  // namespace scca
