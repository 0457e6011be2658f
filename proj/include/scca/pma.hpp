#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

#include "scca/error.hpp"
#include "scca/tensor.hpp"

namespace scca {

enum class PseudoMaskSource { aggregated, max_similarity };

/// Training-free query-foreground prior in [0,1]. Carries no gradients.
template <typename T>
struct PseudoMask {
  Tensor<T> values;  // 1×H×W
  PseudoMaskSource source = PseudoMaskSource::aggregated;
};

namespace detail {

constexpr double kCosineEps = 1e-8;
constexpr double kDegenerateRange = 1e-8;

template <typename T>
void check_pma_shapes(const Tensor<T>& fq, const Tensor<T>& fs, const Tensor<T>& ms) {
  if (fq.rank() != 3 || fs.rank() != 3) throw ShapeError("pseudo mask: features must be C×H×W");
  if (fq.shape() != fs.shape()) {
    throw ShapeError("pseudo mask: query/support feature shapes disagree, " +
                     shape_str(fq.shape()) + " vs " + shape_str(fs.shape()));
  }
  if (ms.rank() != 3 || ms.shape()[0] != 1 || ms.shape()[1] != fq.shape()[1] ||
      ms.shape()[2] != fq.shape()[2]) {
    throw ShapeError("pseudo mask: support mask must be 1×H×W matching the features");
  }
  for (const T v : ms.values()) {
    if (v != T(0) && v != T(1)) throw ContractError("pseudo mask: support mask must be binary");
  }
}

/// Min-max normalization over the H·W values; a (near-)constant map keeps
/// its raw values clamped to [0,1] instead of collapsing to zero.
template <typename T>
void min_max_normalize(std::vector<T>& v) {
  const auto [lo_it, hi_it] = std::minmax_element(v.begin(), v.end());
  const T lo = *lo_it, hi = *hi_it;
  if (hi - lo <= T(kDegenerateRange)) {
    for (auto& x : v) x = std::clamp(x, T(0), T(1));
    return;
  }
  const T inv = T(1) / (hi - lo);
  for (auto& x : v) x = (x - lo) * inv;
}

}  // namespace detail

/// Aggregated prior: softmax-normalized all-pairs cosine similarities
/// against the full binary support mask, so support BG competes in the
/// denominator while contributing zero weight to the sum.
template <typename T>
PseudoMask<T> aggregate_pseudo_mask(const Tensor<T>& fq, const Tensor<T>& fs,
                                    const Tensor<T>& ms) {
  detail::check_pma_shapes(fq, fs, ms);
  NoGradGuard guard;
  const std::size_t h = fq.shape()[1], w = fq.shape()[2];
  auto sim = cosine_sim_matrix(to_rows(fq), to_rows(fs), T(detail::kCosineEps));
  auto weights = softmax_lastdim(sim);  // HW×HW, rows sum to 1
  auto raw = matmul(weights, reshape(ms, {h * w, std::size_t(1)}));
  std::vector<T> values = raw.values();
  detail::min_max_normalize(values);
  return {Tensor<T>::from({1, h, w}, std::move(values)), PseudoMaskSource::aggregated};
}

/// Baseline prior: each query pixel keeps only its single largest cosine
/// against the support FG pixels.
template <typename T>
PseudoMask<T> max_similarity_prior(const Tensor<T>& fq, const Tensor<T>& fs,
                                   const Tensor<T>& ms) {
  detail::check_pma_shapes(fq, fs, ms);
  NoGradGuard guard;
  const std::size_t h = fq.shape()[1], w = fq.shape()[2];
  const auto& mv = ms.values();
  std::vector<std::size_t> fg;
  for (std::size_t i = 0; i < mv.size(); ++i)
    if (mv[i] == T(1)) fg.push_back(i);
  if (fg.empty()) {
    throw ContractError("max_similarity_prior: support mask has no foreground pixels");
  }
  auto sim = cosine_sim_matrix(to_rows(fq), to_rows(fs), T(detail::kCosineEps));
  const auto& sv = sim.values();
  const std::size_t hw = h * w;
  std::vector<T> values(hw);
  for (std::size_t q = 0; q < hw; ++q) {
    T best = sv[q * hw + fg[0]];
    for (std::size_t j = 1; j < fg.size(); ++j) best = std::max(best, sv[q * hw + fg[j]]);
    values[q] = best;
  }
  detail::min_max_normalize(values);
  return {Tensor<T>::from({1, h, w}, std::move(values)), PseudoMaskSource::max_similarity};
}

template <typename T>
Tensor<T> binarize(const PseudoMask<T>& mask, T threshold) {
  if (threshold < T(0) || threshold > T(1)) {
    throw ContractError("binarize: threshold must lie in [0,1]");
  }
  std::vector<T> out(mask.values.size());
  const auto& v = mask.values.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = v[i] >= threshold ? T(1) : T(0);
  return Tensor<T>::from(mask.values.shape(), std::move(out));
}

}  // namespace scca
