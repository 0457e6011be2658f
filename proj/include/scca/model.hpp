#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "scca/error.hpp"
#include "scca/tensor.hpp"

namespace scca {

/// Pixel-wise two-layer decoder head producing FG/BG probabilities.
/// Channel 0 is background, channel 1 foreground.
template <typename T>
struct DecoderParams {
  Tensor<T> w1, b1;  // hidden×C, hidden
  Tensor<T> w2, b2;  // 2×hidden, 2
};

template <typename T>
Tensor<T> decode(const Tensor<T>& fq_final, const DecoderParams<T>& params) {
  if (fq_final.rank() != 3) throw ShapeError("decode: expected a C×H×W tensor");
  const std::size_t c = fq_final.shape()[0];
  const std::size_t h = fq_final.shape()[1], w = fq_final.shape()[2];
  if (params.w1.shape()[1] != c) {
    throw ShapeError("decode: decoder expects " + std::to_string(params.w1.shape()[1]) +
                     " channels, got " + std::to_string(c));
  }
  if (params.w2.shape()[0] != 2) throw ShapeError("decode: output layer must have 2 channels");
  auto rows = to_rows(fq_final);
  auto hidden = gelu(linear(rows, params.w1, params.b1));
  auto logits = linear(hidden, params.w2, params.b2);
  return from_rows(softmax_lastdim(logits), 2, h, w);
}

/// 1 − (2·Σ(p·g) + s) / (Σp + Σg + s); differentiable in the prediction.
template <typename T>
Tensor<T> dice_loss(const Tensor<T>& pred_fg, const Tensor<T>& gt, T smooth = T(1)) {
  detail::check_same_shape(pred_fg, gt, "dice_loss");
  if (!(smooth > T(0))) throw ContractError("dice_loss: smooth must be positive");
  for (const T v : gt.values()) {
    if (v != T(0) && v != T(1)) throw ContractError("dice_loss: ground truth must be binary");
  }
  auto overlap = sum_all(mul(pred_fg, gt));
  auto total = add(sum_all(pred_fg), sum_all(gt));
  auto ratio = div(add_const(mul_scalar(overlap, T(2)), smooth), add_const(total, smooth));
  return add_const(mul_scalar(ratio, T(-1)), T(1));
}

/// Argmax over the two channels of a decode() output, as a 1×H×W mask.
template <typename T>
Tensor<T> binarize_prediction(const Tensor<T>& probs) {
  if (probs.rank() != 3 || probs.shape()[0] != 2) {
    throw ShapeError("binarize_prediction: expected a 2×H×W tensor");
  }
  const std::size_t hw = probs.shape()[1] * probs.shape()[2];
  const auto& v = probs.values();
  std::vector<T> out(hw);
  for (std::size_t i = 0; i < hw; ++i) out[i] = v[hw + i] > v[i] ? T(1) : T(0);
  return Tensor<T>::from({1, probs.shape()[1], probs.shape()[2]}, std::move(out));
}

/// Running per-class FG intersections/unions plus pooled FG/BG counts.
/// mIoU divides accumulated sums, so episode order never matters.
class MetricAccumulator {
 public:
  template <typename T>
  void update(const Tensor<T>& pred_mask, const Tensor<T>& gt_mask, int class_id) {
    detail::check_same_shape(pred_mask, gt_mask, "update_metrics");
    const auto& p = pred_mask.values();
    const auto& g = gt_mask.values();
    std::size_t inter = 0, uni = 0, bg_inter = 0, bg_uni = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (p[i] != T(0) && p[i] != T(1)) throw ContractError("update_metrics: masks must be binary");
      if (g[i] != T(0) && g[i] != T(1)) throw ContractError("update_metrics: masks must be binary");
      const bool pf = p[i] == T(1), gf = g[i] == T(1);
      inter += pf && gf;
      uni += pf || gf;
      bg_inter += !pf && !gf;
      bg_uni += !pf || !gf;
    }
    auto& cls = per_class_[class_id];
    cls.first += inter;
    cls.second += uni;
    fg_inter_ += inter;
    fg_union_ += uni;
    bg_inter_ += bg_inter;
    bg_union_ += bg_uni;
    ++episodes_;
  }

  /// Mean over classes with a nonzero accumulated union.
  double miou() const {
    double sum = 0;
    std::size_t counted = 0;
    for (const auto& [cls, iu] : per_class_) {
      if (iu.second == 0) continue;
      sum += static_cast<double>(iu.first) / static_cast<double>(iu.second);
      ++counted;
    }
    return counted == 0 ? 0.0 : sum / static_cast<double>(counted);
  }

  /// All classes pooled into one FG class, averaged with the BG IoU.
  double fbiou() const {
    const double fg = fg_union_ == 0 ? 0.0
                                     : static_cast<double>(fg_inter_) /
                                           static_cast<double>(fg_union_);
    const double bg = bg_union_ == 0 ? 0.0
                                     : static_cast<double>(bg_inter_) /
                                           static_cast<double>(bg_union_);
    return 0.5 * (fg + bg);
  }

  double fg_iou() const {
    return fg_union_ == 0 ? 0.0
                          : static_cast<double>(fg_inter_) / static_cast<double>(fg_union_);
  }

  /// Per-class IoU; classes with zero union are omitted as undefined.
  std::map<int, double> class_iou() const {
    std::map<int, double> out;
    for (const auto& [cls, iu] : per_class_) {
      if (iu.second == 0) continue;
      out[cls] = static_cast<double>(iu.first) / static_cast<double>(iu.second);
    }
    return out;
  }

  std::size_t episodes() const { return episodes_; }

 private:
  std::map<int, std::pair<std::size_t, std::size_t>> per_class_;  // class -> (I, U)
  std::size_t fg_inter_ = 0, fg_union_ = 0;
  std::size_t bg_inter_ = 0, bg_union_ = 0;
  std::size_t episodes_ = 0;
};

inline std::string metrics_text_report(const MetricAccumulator& acc) {
  std::string s;
  s += "episodes: " + std::to_string(acc.episodes()) + "\n";
  s += "miou: " + std::to_string(acc.miou()) + "\n";
  s += "fbiou: " + std::to_string(acc.fbiou()) + "\n";
  for (const auto& [cls, iou] : acc.class_iou()) {
    s += "class " + std::to_string(cls) + " iou: " + std::to_string(iou) + "\n";
  }
  return s;
}

inline std::string metrics_kv_report(const MetricAccumulator& acc) {
  std::string s;
  s += "miou=" + std::to_string(acc.miou()) + "\n";
  s += "fbiou=" + std::to_string(acc.fbiou()) + "\n";
  for (const auto& [cls, iou] : acc.class_iou()) {
    s += "class_" + std::to_string(cls) + "_iou=" + std::to_string(iou) + "\n";
  }
  return s;
}

}  // namespace scca
