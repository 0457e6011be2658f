#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "scca/error.hpp"
#include "scca/io.hpp"
#include "scca/rng.hpp"
#include "scca/tensor.hpp"

namespace scca {

/// One few-shot task: a query pair plus k support pairs for one class.
/// The optional high-level feature pair feeds the pseudo-mask prior.
template <typename T>
struct Episode {
  Tensor<T> query_feat;                 // C×H×W
  Tensor<T> query_mask;                 // 1×H×W binary
  std::vector<Tensor<T>> support_feats; // k × C×H×W
  std::vector<Tensor<T>> support_masks; // k × 1×H×W binary, each with FG
  int class_id = 0;
  std::optional<std::pair<Tensor<T>, Tensor<T>>> high_feats;  // query, support
};

/// Synthetic feature provider standing in for a pretrained backbone:
/// every class is a fixed random unit direction; FG pixels carry the
/// class direction plus noise, BG pixels carry other classes' directions.
struct SynthSpec {
  std::size_t channels = 32;
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t n_classes = 4;
  std::size_t blob = 6;      // nominal blob side length
  double noise = 0.1;
  std::size_t shots = 1;
  bool with_high = true;
  std::size_t count = 100;   // episodes per pass, used by the harness
};

namespace detail {

/// Class directions depend only on (class, channels): fixed across episodes.
inline std::vector<double> class_direction(std::size_t cls, std::size_t channels) {
  Rng rng(derive_seed(0x5cca0d11u, (static_cast<std::uint64_t>(cls) << 20) + channels));
  return rng.unit_vector(channels);
}

template <typename T>
void fill_blob_mask(std::vector<T>& mask, std::size_t h, std::size_t w, std::size_t bh,
                    std::size_t bw, std::size_t y0, std::size_t x0) {
  for (std::size_t y = y0; y < y0 + bh; ++y)
    for (std::size_t x = x0; x < x0 + bw; ++x) mask[y * w + x] = T(1);
}

template <typename T>
Tensor<T> features_for_mask(Rng& rng, const std::vector<T>& mask, const SynthSpec& spec,
                            std::size_t cls) {
  const std::size_t c = spec.channels, hw = spec.height * spec.width;
  const auto fg_dir = class_direction(cls, c);
  std::vector<T> data(c * hw);
  const double pixel_noise = spec.noise / std::sqrt(static_cast<double>(c));
  for (std::size_t i = 0; i < hw; ++i) {
    std::vector<double> dir;
    if (mask[i] == T(1)) {
      dir = fg_dir;
    } else {
      std::size_t other = rng.below(spec.n_classes);
      if (spec.n_classes > 1 && other == cls) other = (other + 1) % spec.n_classes;
      dir = class_direction(other, c);
    }
    for (std::size_t ch = 0; ch < c; ++ch) {
      data[ch * hw + i] = static_cast<T>(dir[ch] + pixel_noise * rng.normal());
    }
  }
  return Tensor<T>::from({c, spec.height, spec.width}, std::move(data));
}

template <typename T>
std::vector<T> random_blob(Rng& rng, const SynthSpec& spec) {
  const std::size_t h = spec.height, w = spec.width;
  std::size_t bh = spec.blob, bw = spec.blob;
  if (spec.blob > 1) {  // small shape jitter
    bh = spec.blob - rng.below(2);
    bw = spec.blob - rng.below(2);
  }
  std::vector<T> mask(h * w, T(0));
  const std::size_t y0 = rng.below(h - bh + 1);
  const std::size_t x0 = rng.below(w - bw + 1);
  fill_blob_mask(mask, h, w, bh, bw, y0, x0);
  return mask;
}

}  // namespace detail

template <typename T>
Episode<T> synth_episode(std::uint64_t seed, const SynthSpec& spec) {
  if (spec.blob < 1 || spec.blob > spec.height || spec.blob > spec.width) {
    throw ContractError("synth_episode: blob does not fit inside the map");
  }
  if (spec.n_classes < 1 || spec.channels < 1 || spec.shots < 1) {
    throw ContractError("synth_episode: degenerate generation spec");
  }
  Rng rng(derive_seed(seed, 0xe91d0de5ull));
  Episode<T> ep;
  ep.class_id = static_cast<int>(rng.below(spec.n_classes));
  const std::size_t cls = static_cast<std::size_t>(ep.class_id);

  auto qmask = detail::random_blob<T>(rng, spec);
  ep.query_feat = detail::features_for_mask<T>(rng, qmask, spec, cls);
  ep.query_mask = Tensor<T>::from({1, spec.height, spec.width}, std::move(qmask));

  for (std::size_t shot = 0; shot < spec.shots; ++shot) {
    auto smask = detail::random_blob<T>(rng, spec);
    ep.support_feats.push_back(detail::features_for_mask<T>(rng, smask, spec, cls));
    ep.support_masks.push_back(Tensor<T>::from({1, spec.height, spec.width}, std::move(smask)));
  }

  if (spec.with_high) {
    // separate noise draws over the same masks; multi-shot support highs
    // are averaged, mirroring the k-shot handling of the mid-level path
    auto qh = detail::features_for_mask<T>(rng, ep.query_mask.values(), spec, cls);
    std::vector<T> sh_acc(qh.size(), T(0));
    for (std::size_t shot = 0; shot < spec.shots; ++shot) {
      auto sh = detail::features_for_mask<T>(rng, ep.support_masks[shot].values(), spec, cls);
      for (std::size_t i = 0; i < sh_acc.size(); ++i) sh_acc[i] += sh.values()[i];
    }
    const T inv = T(1) / static_cast<T>(spec.shots);
    for (auto& v : sh_acc) v *= inv;
    ep.high_feats = {std::move(qh),
                     Tensor<T>::from({spec.channels, spec.height, spec.width}, std::move(sh_acc))};
  }
  return ep;
}

/// Mean of the support features; masks are averaged then thresholded at
/// >0 so any-shot FG counts as FG. Returns (features, soft mask, binary mask).
template <typename T>
struct KshotAverage {
  Tensor<T> features;
  Tensor<T> soft_mask;
  Tensor<T> binary_mask;
};

template <typename T>
KshotAverage<T> kshot_average(const std::vector<Tensor<T>>& feats,
                              const std::vector<Tensor<T>>& masks) {
  if (feats.empty() || feats.size() != masks.size()) {
    throw ContractError("kshot_average: need one mask per support feature");
  }
  const auto fshape = feats[0].shape();
  const auto mshape = masks[0].shape();
  std::vector<T> facc(feats[0].size(), T(0));
  std::vector<T> macc(masks[0].size(), T(0));
  for (std::size_t s = 0; s < feats.size(); ++s) {
    if (feats[s].shape() != fshape || masks[s].shape() != mshape) {
      throw ShapeError("kshot_average: support shapes disagree");
    }
    const auto& fv = feats[s].values();
    const auto& mv = masks[s].values();
    for (std::size_t i = 0; i < facc.size(); ++i) facc[i] += fv[i];
    for (std::size_t i = 0; i < macc.size(); ++i) macc[i] += mv[i];
  }
  const T inv = T(1) / static_cast<T>(feats.size());
  for (auto& v : facc) v *= inv;
  for (auto& v : macc) v *= inv;
  std::vector<T> mbin(macc.size());
  for (std::size_t i = 0; i < macc.size(); ++i) mbin[i] = macc[i] > T(0) ? T(1) : T(0);
  return {Tensor<T>::from(fshape, std::move(facc)), Tensor<T>::from(mshape, std::move(macc)),
          Tensor<T>::from(mshape, std::move(mbin))};
}

/// Filled axis-aligned rectangle, inclusive coordinates.
template <typename T>
Tensor<T> bbox_to_mask(std::size_t x0, std::size_t y0, std::size_t x1, std::size_t y1,
                       std::size_t h, std::size_t w) {
  if (x0 > x1 || y0 > y1 || x1 >= w || y1 >= h) {
    throw ContractError("bbox_to_mask: box coordinates out of range");
  }
  std::vector<T> mask(h * w, T(0));
  for (std::size_t y = y0; y <= y1; ++y)
    for (std::size_t x = x0; x <= x1; ++x) mask[y * w + x] = T(1);
  return Tensor<T>::from({1, h, w}, std::move(mask));
}

// ---------------------------------------------------------------------------
// Episode directory IO
// ---------------------------------------------------------------------------

namespace detail {

inline std::map<std::string, std::string> read_kv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw IoError(path + ": malformed line '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

inline std::size_t kv_size_t(const std::map<std::string, std::string>& kv,
                             const std::string& key, const std::string& path) {
  const auto it = kv.find(key);
  if (it == kv.end()) throw IoError(path + ": missing key '" + key + "'");
  return static_cast<std::size_t>(std::stoull(it->second));
}

}  // namespace detail

template <typename T>
void save_episode(const std::string& dir, const Episode<T>& ep) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const fs::path base(dir);
  write_tensor((base / "query.feat").string(), ep.query_feat);
  write_tensor((base / "query.mask").string(), ep.query_mask);
  for (std::size_t s = 0; s < ep.support_feats.size(); ++s) {
    write_tensor((base / ("support_" + std::to_string(s) + ".feat")).string(),
                 ep.support_feats[s]);
    write_tensor((base / ("support_" + std::to_string(s) + ".mask")).string(),
                 ep.support_masks[s]);
  }
  if (ep.high_feats) {
    write_tensor((base / "query_high.feat").string(), ep.high_feats->first);
    write_tensor((base / "support_high.feat").string(), ep.high_feats->second);
  }
  std::ofstream manifest(base / "manifest.txt");
  manifest << "class_id=" << ep.class_id << "\n";
  manifest << "k=" << ep.support_feats.size() << "\n";
  manifest << "channels=" << ep.query_feat.shape()[0] << "\n";
  manifest << "height=" << ep.query_feat.shape()[1] << "\n";
  manifest << "width=" << ep.query_feat.shape()[2] << "\n";
  manifest << "has_high=" << (ep.high_feats ? 1 : 0) << "\n";
  if (!manifest) throw IoError("failed writing manifest in " + dir);
}

template <typename T>
Episode<T> load_episode(const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path base(dir);
  const std::string mpath = (base / "manifest.txt").string();
  const auto kv = detail::read_kv_file(mpath);
  const std::size_t k = detail::kv_size_t(kv, "k", mpath);
  const std::size_t c = detail::kv_size_t(kv, "channels", mpath);
  const std::size_t h = detail::kv_size_t(kv, "height", mpath);
  const std::size_t w = detail::kv_size_t(kv, "width", mpath);
  if (k < 1) throw IoError(mpath + ": k must be at least 1");

  Episode<T> ep;
  ep.class_id = static_cast<int>(std::stol(kv.at("class_id")));
  auto expect_shape = [&](const Tensor<T>& t, Shape want, const std::string& file) {
    if (t.shape() != want) {
      throw IoError(file + ": unexpected shape " + shape_str(t.shape()) + ", manifest implies " +
                    shape_str(want));
    }
  };
  ep.query_feat = read_tensor<T>((base / "query.feat").string());
  expect_shape(ep.query_feat, {c, h, w}, (base / "query.feat").string());
  ep.query_mask = read_tensor<T>((base / "query.mask").string());
  expect_shape(ep.query_mask, {1, h, w}, (base / "query.mask").string());
  for (std::size_t s = 0; s < k; ++s) {
    const std::string fpath = (base / ("support_" + std::to_string(s) + ".feat")).string();
    const std::string mpath2 = (base / ("support_" + std::to_string(s) + ".mask")).string();
    if (!fs::exists(fpath) || !fs::exists(mpath2)) {
      throw IoError(dir + ": manifest says k=" + std::to_string(k) + " but shot " +
                    std::to_string(s) + " files are missing");
    }
    ep.support_feats.push_back(read_tensor<T>(fpath));
    expect_shape(ep.support_feats.back(), {c, h, w}, fpath);
    ep.support_masks.push_back(read_tensor<T>(mpath2));
    expect_shape(ep.support_masks.back(), {1, h, w}, mpath2);
    bool any = false;
    for (const T v : ep.support_masks.back().values()) {
      if (v != T(0) && v != T(1)) throw IoError(mpath2 + ": mask is not binary");
      any = any || v == T(1);
    }
    if (!any) throw IoError(mpath2 + ": support mask has no foreground");
  }
  if (fs::exists(base / ("support_" + std::to_string(k) + ".feat"))) {
    throw IoError(dir + ": more support files on disk than the manifest's k=" +
                  std::to_string(k));
  }
  if (detail::kv_size_t(kv, "has_high", mpath) == 1) {
    auto qh = read_tensor<T>((base / "query_high.feat").string());
    auto sh = read_tensor<T>((base / "support_high.feat").string());
    expect_shape(qh, {c, h, w}, (base / "query_high.feat").string());
    expect_shape(sh, {c, h, w}, (base / "support_high.feat").string());
    ep.high_feats = {std::move(qh), std::move(sh)};
  }
  return ep;
}

}  // namespace scca
