#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "scca/error.hpp"
#include "scca/tensor.hpp"

namespace scca {

/// A feature map split into K×K windows. Shifted grids offset the window
/// lattice by shift_offset pixels in both axes and zero-pad the irregular
/// border windows; the validity plane marks real pixels. Every original
/// pixel lands in exactly one window position with validity 1.
template <typename T>
struct PatchGrid {
  Tensor<T> patches;   // N²×C×K×K
  Tensor<T> validity;  // N²×K×K in {0,1}, never gradient-tracked
  std::array<std::size_t, 3> origin_shape{};  // C,H,W
  std::size_t window = 0;
  bool shifted = false;
  std::size_t shift_offset = 0;
  std::size_t windows_y = 0;
  std::size_t windows_x = 0;

  std::size_t count() const { return windows_y * windows_x; }
};

namespace detail {

struct WindowLayout {
  std::size_t h = 0, w = 0, k = 0;
  std::size_t wy = 0, wx = 0;
  std::ptrdiff_t y0 = 0, x0 = 0;  // origin of window (0,0)

  // Map (window, in-window y, in-window x) to a pixel, or (-1,-1) if padded.
  std::pair<std::ptrdiff_t, std::ptrdiff_t> pixel(std::size_t win, std::size_t py,
                                                  std::size_t px) const {
    const std::size_t wr = win / wx, wc = win % wx;
    const std::ptrdiff_t y = y0 + static_cast<std::ptrdiff_t>(wr * k + py);
    const std::ptrdiff_t x = x0 + static_cast<std::ptrdiff_t>(wc * k + px);
    if (y < 0 || x < 0 || y >= static_cast<std::ptrdiff_t>(h) ||
        x >= static_cast<std::ptrdiff_t>(w)) {
      return {-1, -1};
    }
    return {y, x};
  }
};

inline WindowLayout window_layout(std::size_t h, std::size_t w, std::size_t k, bool shifted,
                                  std::size_t offset) {
  WindowLayout lay;
  lay.h = h;
  lay.w = w;
  lay.k = k;
  if (shifted && offset > 0) {
    lay.y0 = -static_cast<std::ptrdiff_t>(offset);
    lay.x0 = -static_cast<std::ptrdiff_t>(offset);
    lay.wy = (h + offset + k - 1) / k;
    lay.wx = (w + offset + k - 1) / k;
  } else {
    lay.wy = h / k;
    lay.wx = w / k;
  }
  return lay;
}

}  // namespace detail

template <typename T>
PatchGrid<T> partition(const Tensor<T>& feat, std::size_t window, bool shifted) {
  if (feat.rank() != 3) throw ShapeError("partition: expected a C×H×W tensor");
  const std::size_t c = feat.shape()[0], h = feat.shape()[1], w = feat.shape()[2];
  if (window < 1) throw ShapeError("partition: window size must be >= 1");
  if (window > h || window > w) {
    throw ShapeError("partition: window " + std::to_string(window) + " exceeds map " +
                     std::to_string(h) + "×" + std::to_string(w));
  }
  if (!shifted && (h % window != 0 || w % window != 0)) {
    throw ShapeError("partition: unshifted grids need H and W divisible by the window size");
  }
  const std::size_t offset = shifted ? window / 2 : 0;
  const auto lay = detail::window_layout(h, w, window, shifted, offset);
  const std::size_t n = lay.wy * lay.wx;
  const std::size_t k2 = window * window;

  std::vector<std::ptrdiff_t> indices(n * c * k2, -1);
  std::vector<T> valid(n * k2, T(0));
  for (std::size_t win = 0; win < n; ++win) {
    for (std::size_t py = 0; py < window; ++py) {
      for (std::size_t px = 0; px < window; ++px) {
        const auto [y, x] = lay.pixel(win, py, px);
        if (y < 0) continue;
        valid[win * k2 + py * window + px] = T(1);
        const std::size_t pixel = static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x);
        for (std::size_t ch = 0; ch < c; ++ch) {
          indices[((win * c + ch) * k2) + py * window + px] =
              static_cast<std::ptrdiff_t>(ch * h * w + pixel);
        }
      }
    }
  }

  PatchGrid<T> grid;
  grid.patches = gather_flat(feat, std::move(indices), {n, c, window, window});
  grid.validity = Tensor<T>::from({n, window, window}, std::move(valid));
  grid.origin_shape = {c, h, w};
  grid.window = window;
  grid.shifted = shifted;
  grid.shift_offset = offset;
  grid.windows_y = lay.wy;
  grid.windows_x = lay.wx;
  return grid;
}

/// Exact inverse of partition: padded positions are discarded. Throws a
/// consistency error if the validity plane covers any pixel zero or
/// multiple times.
template <typename T>
Tensor<T> merge(const PatchGrid<T>& grid) {
  const auto [c, h, w] = grid.origin_shape;
  const std::size_t k = grid.window, k2 = k * k;
  const auto lay = detail::window_layout(h, w, k, grid.shifted, grid.shift_offset);
  if (lay.wy != grid.windows_y || lay.wx != grid.windows_x ||
      grid.patches.shape() != Shape{grid.count(), c, k, k}) {
    throw ShapeError("merge: grid geometry is inconsistent with its patches tensor");
  }
  const auto& valid = grid.validity.values();

  // pixel -> flat (window, position) source, exactly one per pixel
  std::vector<std::ptrdiff_t> source(h * w, -1);
  for (std::size_t win = 0; win < grid.count(); ++win) {
    for (std::size_t pos = 0; pos < k2; ++pos) {
      if (valid[win * k2 + pos] == T(0)) continue;
      const auto [y, x] = lay.pixel(win, pos / k, pos % k);
      if (y < 0) {
        throw ContractError("merge: validity marks a padded position as real");
      }
      auto& slot = source[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)];
      if (slot != -1) {
        throw ContractError("merge: pixel (" + std::to_string(y) + "," + std::to_string(x) +
                            ") is covered more than once");
      }
      slot = static_cast<std::ptrdiff_t>(win * k2 + pos);
    }
  }
  std::vector<std::ptrdiff_t> indices(c * h * w);
  for (std::size_t pixel = 0; pixel < h * w; ++pixel) {
    if (source[pixel] < 0) {
      throw ContractError("merge: pixel " + std::to_string(pixel) + " is not covered");
    }
    const std::size_t win = static_cast<std::size_t>(source[pixel]) / k2;
    const std::size_t pos = static_cast<std::size_t>(source[pixel]) % k2;
    for (std::size_t ch = 0; ch < c; ++ch) {
      indices[ch * h * w + pixel] = static_cast<std::ptrdiff_t>((win * c + ch) * k2 + pos);
    }
  }
  return gather_flat(grid.patches, std::move(indices), {c, h, w});
}

/// Window `win` as a K²×C pixel-row matrix (padded rows are zero).
template <typename T>
Tensor<T> window_rows(const PatchGrid<T>& grid, std::size_t win) {
  const std::size_t c = grid.origin_shape[0];
  const std::size_t k2 = grid.window * grid.window;
  if (win >= grid.count()) throw ShapeError("window_rows: window index out of range");
  std::vector<std::ptrdiff_t> indices(k2 * c);
  const auto& valid = grid.validity.values();
  for (std::size_t pos = 0; pos < k2; ++pos) {
    const bool real = valid[win * k2 + pos] == T(1);
    for (std::size_t ch = 0; ch < c; ++ch) {
      indices[pos * c + ch] =
          real ? static_cast<std::ptrdiff_t>((win * c + ch) * k2 + pos) : -1;
    }
  }
  return gather_flat(grid.patches, std::move(indices), {k2, c});
}

/// Validity of window `win` flattened to K² flags.
template <typename T>
std::vector<std::uint8_t> window_validity(const PatchGrid<T>& grid, std::size_t win) {
  const std::size_t k2 = grid.window * grid.window;
  const auto& valid = grid.validity.values();
  std::vector<std::uint8_t> flags(k2);
  for (std::size_t pos = 0; pos < k2; ++pos) flags[pos] = valid[win * k2 + pos] == T(1);
  return flags;
}

/// Rebuilds a grid's patches tensor from per-window K²×C row blocks
/// stacked as an (N²·K²)×C matrix. Padded positions read as zero.
template <typename T>
PatchGrid<T> grid_from_window_rows(const PatchGrid<T>& geometry, const Tensor<T>& rows) {
  const std::size_t c = geometry.origin_shape[0];
  const std::size_t k = geometry.window, k2 = k * k;
  const std::size_t n = geometry.count();
  if (rows.shape() != Shape{n * k2, c}) {
    throw ShapeError("grid_from_window_rows: rows shape " + shape_str(rows.shape()) +
                     " does not match grid geometry");
  }
  std::vector<std::ptrdiff_t> indices(n * c * k2);
  const auto& valid = geometry.validity.values();
  for (std::size_t win = 0; win < n; ++win) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t pos = 0; pos < k2; ++pos) {
        const bool real = valid[win * k2 + pos] == T(1);
        indices[(win * c + ch) * k2 + pos] =
            real ? static_cast<std::ptrdiff_t>((win * k2 + pos) * c + ch) : -1;
      }
    }
  }
  PatchGrid<T> grid = geometry;
  grid.patches = gather_flat(rows, std::move(indices), {n, c, k, k});
  return grid;
}

}  // namespace scca
