#pragma once

#include <cstddef>

#include "scca/error.hpp"
#include "scca/tensor.hpp"

namespace scca {

/// Learned 1×1 projections that close the query-support gap before the
/// attention stack: each pixel's [features; prototype; mask] vector is
/// mapped from 2C+1 channels down to the embedding dimension.
template <typename T>
struct FusionParams {
  Tensor<T> query_weight;    // C'×(2C+1)
  Tensor<T> query_bias;      // C'
  Tensor<T> support_weight;  // C'×(2C+1)
  Tensor<T> support_bias;    // C'
};

/// Channel mean of support features over the FG pixels.
template <typename T>
Tensor<T> support_prototype(const Tensor<T>& fs_mid, const Tensor<T>& ms) {
  return masked_average_pool(fs_mid, ms);
}

/// Pixel-wise fusion: concat [feat; broadcast prototype; mask] per pixel,
/// then a learned affine map. Purely per-pixel, no spatial mixing.
template <typename T>
Tensor<T> fuse(const Tensor<T>& feat_mid, const Tensor<T>& proto, const Tensor<T>& mask,
               const Tensor<T>& weight, const Tensor<T>& bias) {
  if (feat_mid.rank() != 3) throw ShapeError("fuse: features must be C×H×W");
  const std::size_t c = feat_mid.shape()[0];
  const std::size_t h = feat_mid.shape()[1], w = feat_mid.shape()[2];
  if (proto.rank() != 1 || proto.shape()[0] != c) {
    throw ShapeError("fuse: prototype must be rank-1 of length " + std::to_string(c));
  }
  if (mask.rank() != 3 || mask.shape()[0] != 1 || mask.shape()[1] != h || mask.shape()[2] != w) {
    throw ShapeError("fuse: mask must be 1×H×W matching the features");
  }
  for (const T v : mask.values()) {
    if (v < T(0) || v > T(1)) throw ContractError("fuse: mask values must lie in [0,1]");
  }
  if (weight.rank() != 2 || weight.shape()[1] != 2 * c + 1) {
    throw ShapeError("fuse: weight must be C'×(2C+1), got " + shape_str(weight.shape()));
  }
  if (bias.rank() != 1 || bias.shape()[0] != weight.shape()[0]) {
    throw ShapeError("fuse: bias length must match the output channels");
  }
  const std::size_t hw = h * w;
  auto cols = concat_cols<T>({to_rows(feat_mid), tile_rows(proto, hw),
                              reshape(mask, {hw, std::size_t(1)})});
  auto out_rows = linear(cols, weight, bias);
  return from_rows(out_rows, weight.shape()[0], h, w);
}

template <typename T>
Tensor<T> fuse(const Tensor<T>& feat_mid, const Tensor<T>& proto, const Tensor<T>& mask,
               const FusionParams<T>& params, bool query_path) {
  return query_path ? fuse(feat_mid, proto, mask, params.query_weight, params.query_bias)
                    : fuse(feat_mid, proto, mask, params.support_weight, params.support_bias);
}

}  // namespace scca
