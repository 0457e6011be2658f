#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "scca/attention.hpp"
#include "scca/config.hpp"
#include "scca/episodes.hpp"
#include "scca/error.hpp"
#include "scca/fusion.hpp"
#include "scca/model.hpp"
#include "scca/params.hpp"
#include "scca/pma.hpp"

namespace scca {

/// Episode stream backed by either the synthetic generator or a directory
/// of saved episodes. Synthetic streams draw disjoint seed sequences for
/// training and held-out evaluation.
template <typename T>
class EpisodeProvider {
 public:
  static EpisodeProvider synthetic(SynthSpec spec, std::uint64_t base_seed) {
    EpisodeProvider p;
    p.spec_ = spec;
    p.base_seed_ = base_seed;
    return p;
  }

  static EpisodeProvider directory(const std::string& dir) {
    namespace fs = std::filesystem;
    EpisodeProvider p;
    if (fs::exists(fs::path(dir) / "manifest.txt")) {
      p.dirs_.push_back(dir);  // a single episode directory
    } else {
      for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_directory() && fs::exists(entry.path() / "manifest.txt")) {
          p.dirs_.push_back(entry.path().string());
        }
      }
      std::sort(p.dirs_.begin(), p.dirs_.end());
    }
    if (p.dirs_.empty()) throw IoError("no episodes found under " + dir);
    return p;
  }

  static EpisodeProvider from_config(const RunConfig& cfg) {
    if (cfg.episodes.rfind("synth:", 0) == 0) {
      return synthetic(parse_synth_spec(cfg.episodes.substr(6), cfg.shots), cfg.seed);
    }
    if (cfg.episodes.empty()) {
      throw ContractError("no episode source: pass --episodes <dir|synth:spec>");
    }
    return directory(cfg.episodes);
  }

  bool is_synthetic() const { return spec_.has_value(); }

  std::size_t count() const { return spec_ ? spec_->count : dirs_.size(); }

  /// Training stream, indexed by (epoch, step).
  Episode<T> train_episode(std::size_t epoch, std::size_t index) const {
    if (spec_) {
      return synth_episode<T>(derive_seed(base_seed_, epoch * 1000003ull + index), *spec_);
    }
    return load_episode<T>(dirs_[index % dirs_.size()]);
  }

  /// Held-out stream, disjoint from every training seed.
  Episode<T> eval_episode(std::size_t index) const {
    if (spec_) {
      return synth_episode<T>(derive_seed(base_seed_ ^ 0x5eed4e7a1ull, index), *spec_);
    }
    return load_episode<T>(dirs_[index % dirs_.size()]);
  }

 private:
  std::optional<SynthSpec> spec_;
  std::uint64_t base_seed_ = 0;
  std::vector<std::string> dirs_;
};

template <typename T>
struct ForwardResult {
  Tensor<T> probs;  // 2×H×W
  PseudoMask<T> pseudo;
};

/// Full forward pass: k-shot averaging, pseudo-mask prior, feature
/// fusion, the attention stack, and the decoder. Falls back to mid-level
/// features for the prior when an episode carries no high-level pair.
template <typename T>
ForwardResult<T> forward_episode(ModelParams<T>& params, const Episode<T>& ep,
                                 const BlockSettings& settings) {
  auto support = kshot_average(ep.support_feats, ep.support_masks);

  PseudoMask<T> pseudo;
  if (ep.high_feats) {
    pseudo = aggregate_pseudo_mask(ep.high_feats->first, ep.high_feats->second,
                                   support.binary_mask);
  } else {
    pseudo = aggregate_pseudo_mask(ep.query_feat, support.features, support.binary_mask);
  }

  auto proto = support_prototype(support.features, support.binary_mask);
  auto fq0 = fuse(ep.query_feat, proto, pseudo.values, params.fusion, /*query_path=*/true);
  auto fs0 = fuse(support.features, proto, support.soft_mask, params.fusion,
                  /*query_path=*/false);
  auto enhanced = stack_forward(fq0, fs0, support.binary_mask, params.blocks, settings,
                                params.window);
  return {decode(enhanced, params.decoder), std::move(pseudo)};
}

/// Dice loss of the FG probability plane against the query mask.
template <typename T>
Tensor<T> episode_loss(const Tensor<T>& probs, const Tensor<T>& query_mask) {
  const std::size_t h = probs.shape()[1], w = probs.shape()[2];
  auto fg = reshape(slice_cols(to_rows(probs), 1, 2), {h, w});
  auto gt = reshape(query_mask, {h, w});
  return dice_loss(fg, gt);
}

struct EpochStats {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double train_miou = 0.0;
  std::size_t steps = 0;
};

template <typename T>
std::vector<EpochStats> train_loop(ModelParams<T>& params, const EpisodeProvider<T>& provider,
                                   const RunConfig& cfg, std::ostream& log) {
  const BlockSettings settings{cfg.heads, true};
  std::vector<EpochStats> history;
  std::size_t global_step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochStats stats;
    stats.epoch = epoch;
    MetricAccumulator train_acc;
    for (std::size_t i = 0; i < provider.count(); ++i, ++global_step) {
      auto ep = provider.train_episode(epoch, i);
      try {
        auto result = forward_episode(params, ep, settings);
        auto loss = episode_loss(result.probs, ep.query_mask);
        params.zero_grad();
        loss.backward();
        params.sgd_step(static_cast<T>(cfg.lr));
        stats.mean_loss += static_cast<double>(loss.value());
        train_acc.update(binarize_prediction(result.probs), ep.query_mask, ep.class_id);
      } catch (const NumericError& e) {
        throw NumericError("training aborted at step " + std::to_string(global_step) +
                           " (epoch " + std::to_string(epoch) + ", episode " +
                           std::to_string(i) + "): " + e.what());
      }
      ++stats.steps;
    }
    if (stats.steps > 0) stats.mean_loss /= static_cast<double>(stats.steps);
    stats.train_miou = train_acc.miou();
    history.push_back(stats);
    log << "epoch " << epoch << ": loss=" << stats.mean_loss << " miou=" << stats.train_miou
        << "\n";
  }
  return history;
}

template <typename T>
MetricAccumulator evaluate(ModelParams<T>& params, const EpisodeProvider<T>& provider,
                           const RunConfig& cfg, std::size_t n_episodes) {
  NoGradGuard guard;
  const BlockSettings settings{cfg.heads, true};
  MetricAccumulator acc;
  for (std::size_t i = 0; i < n_episodes; ++i) {
    auto ep = provider.eval_episode(i);
    auto result = forward_episode(params, ep, settings);
    acc.update(binarize_prediction(result.probs), ep.query_mask, ep.class_id);
  }
  return acc;
}

}  // namespace scca
