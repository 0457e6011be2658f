#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "scca/pma.hpp"
#include "scca/rng.hpp"

using T64 = scca::Tensor<double>;

namespace {

// Exhaustive double-loop references written against the definitions, not
// against the implementation's op stack.

double cos_ref(const std::vector<double>& a, std::size_t ia, const std::vector<double>& b,
               std::size_t ib, std::size_t c, std::size_t hw) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double x = a[ch * hw + ia], y = b[ch * hw + ib];
    dot += x * y;
    na += x * x;
    nb += y * y;
  }
  return dot / (std::max(std::sqrt(na), 1e-8) * std::max(std::sqrt(nb), 1e-8));
}

void min_max_ref(std::vector<double>& v) {
  const double lo = *std::min_element(v.begin(), v.end());
  const double hi = *std::max_element(v.begin(), v.end());
  if (hi - lo <= 1e-8) {
    for (auto& x : v) x = std::clamp(x, 0.0, 1.0);
    return;
  }
  for (auto& x : v) x = (x - lo) / (hi - lo);
}

std::vector<double> aggregate_ref(const std::vector<double>& fq, const std::vector<double>& fs,
                                  const std::vector<double>& ms, std::size_t c, std::size_t hw) {
  std::vector<double> out(hw);
  for (std::size_t q = 0; q < hw; ++q) {
    std::vector<double> row(hw);
    double mx = -1e300;
    for (std::size_t s = 0; s < hw; ++s) {
      row[s] = cos_ref(fq, q, fs, s, c, hw);
      mx = std::max(mx, row[s]);
    }
    double denom = 0;
    for (auto& r : row) {
      r = std::exp(r - mx);
      denom += r;
    }
    double acc = 0;
    for (std::size_t s = 0; s < hw; ++s) acc += row[s] / denom * ms[s];
    // pre-normalization values are convex combinations of mask entries
    REQUIRE(acc >= 0.0);
    REQUIRE(acc <= 1.0 + 1e-12);
    out[q] = acc;
  }
  min_max_ref(out);
  return out;
}

std::vector<double> max_sim_ref(const std::vector<double>& fq, const std::vector<double>& fs,
                                const std::vector<double>& ms, std::size_t c, std::size_t hw) {
  std::vector<double> out(hw);
  for (std::size_t q = 0; q < hw; ++q) {
    double best = -1e300;
    for (std::size_t s = 0; s < hw; ++s) {
      if (ms[s] != 1.0) continue;
      best = std::max(best, cos_ref(fq, q, fs, s, c, hw));
    }
    out[q] = best;
  }
  min_max_ref(out);
  return out;
}

}  // namespace

TEST_CASE("aggregated mask trivial cases", "[pma]") {
  // distinct per-pixel directions, identical query and support
  auto f = T64::from({2, 1, 2}, {1, 0, 0, 1});
  auto ones = T64::from({1, 1, 2}, {1, 1});
  auto mask = scca::aggregate_pseudo_mask(f, f, ones);
  CHECK(mask.source == scca::PseudoMaskSource::aggregated);
  for (double v : mask.values.values()) CHECK(v == Catch::Approx(1.0).margin(1e-12));

  auto zeros = T64::zeros({1, 1, 2});
  auto none = scca::aggregate_pseudo_mask(f, f, zeros);
  for (double v : none.values.values()) CHECK(v == 0.0);
}

TEST_CASE("aggregated mask hand-derived softmax example", "[pma]") {
  // fq pixels {[1,0],[0,1]}, fs the same, ms = [1,0]:
  // cosine rows are [1,0] and [0,1]; softmax gives weights
  // [e/(e+1), 1/(e+1)] and its mirror, so raw = [0.73106, 0.26894],
  // min-max normalized to [1, 0].
  auto f = T64::from({2, 1, 2}, {1, 0, 0, 1});
  auto ms = T64::from({1, 1, 2}, {1, 0});
  auto mask = scca::aggregate_pseudo_mask(f, f, ms);
  CHECK(mask.values(0, 0, 0) == Catch::Approx(1.0).margin(1e-9));
  CHECK(mask.values(0, 0, 1) == Catch::Approx(0.0).margin(1e-9));

  // binarize the derived example at the standard threshold
  auto bin = scca::binarize(mask, 0.75);
  CHECK(bin.values() == std::vector<double>{1, 0});
}

TEST_CASE("max similarity prior basics", "[pma]") {
  auto f = T64::from({2, 1, 2}, {1, 0, 0, 1});
  auto ones = T64::from({1, 1, 2}, {1, 1});
  auto m = scca::max_similarity_prior(f, f, ones);
  CHECK(m.source == scca::PseudoMaskSource::max_similarity);
  // every pixel self-matches at cosine 1: constant map, degenerate rule
  for (double v : m.values.values()) CHECK(v == Catch::Approx(1.0).margin(1e-12));

  CHECK_THROWS_AS(scca::max_similarity_prior(f, f, T64::zeros({1, 1, 2})),
                  scca::ContractError);

  // single support FG pixel: output order tracks cosine order
  scca::Rng rng(11);
  std::vector<double> fq(3 * 4), fs(3 * 4);
  for (auto& v : fq) v = rng.uniform(-1, 1);
  for (auto& v : fs) v = rng.uniform(-1, 1);
  auto q = T64::from({3, 2, 2}, fq);
  auto s = T64::from({3, 2, 2}, fs);
  auto single = T64::from({1, 2, 2}, {0, 1, 0, 0});
  auto prior = scca::max_similarity_prior(q, s, single);
  std::vector<double> cosines(4);
  for (std::size_t i = 0; i < 4; ++i) cosines[i] = cos_ref(fq, i, fs, 1, 3, 4);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      if (cosines[i] < cosines[j])
        CHECK(prior.values.values()[i] <= prior.values.values()[j]);
}

TEST_CASE("binarize thresholds", "[pma]") {
  scca::PseudoMask<double> m{T64::from({1, 1, 4}, {0.0, 0.3, 0.75, 1.0}),
                             scca::PseudoMaskSource::aggregated};
  CHECK(scca::binarize(m, 0.0).values() == std::vector<double>{1, 1, 1, 1});
  CHECK(scca::binarize(m, 1.0).values() == std::vector<double>{0, 0, 0, 1});
  CHECK(scca::binarize(m, 0.75).values() == std::vector<double>{0, 0, 1, 1});
  CHECK_THROWS_AS(scca::binarize(m, 1.5), scca::ContractError);
}

TEST_CASE("both priors match exhaustive oracles on random instances", "[pma]") {
  scca::Rng rng(77);
  for (int trial = 0; trial < 120; ++trial) {
    const std::size_t h = 2 + rng.below(3), w = 2 + rng.below(3), c = 2 + rng.below(3);
    const std::size_t hw = h * w;
    std::vector<double> fq(c * hw), fs(c * hw), ms(hw);
    for (auto& v : fq) v = rng.uniform(-2, 2);
    for (auto& v : fs) v = rng.uniform(-2, 2);
    bool any = false;
    for (auto& v : ms) {
      v = rng.uniform() < 0.5 ? 1.0 : 0.0;
      any = any || v == 1.0;
    }
    if (!any) ms[rng.below(hw)] = 1.0;

    auto q = T64::from({c, h, w}, fq);
    auto s = T64::from({c, h, w}, fs);
    auto m = T64::from({1, h, w}, ms);

    auto agg = scca::aggregate_pseudo_mask(q, s, m);
    auto agg_ref = aggregate_ref(fq, fs, ms, c, hw);
    for (std::size_t i = 0; i < hw; ++i)
      CHECK(std::abs(agg.values.values()[i] - agg_ref[i]) <= 1e-10);

    auto mx = scca::max_similarity_prior(q, s, m);
    auto mx_ref = max_sim_ref(fq, fs, ms, c, hw);
    for (std::size_t i = 0; i < hw; ++i)
      CHECK(std::abs(mx.values.values()[i] - mx_ref[i]) <= 1e-10);

    // outputs stay in [0,1]
    for (double v : agg.values.values()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
}

TEST_CASE("aggregation is equivariant to support pixel permutation", "[pma]") {
  scca::Rng rng(13);
  const std::size_t c = 3, h = 2, w = 3, hw = h * w;
  std::vector<double> fq(c * hw), fs(c * hw), ms(hw);
  for (auto& v : fq) v = rng.uniform(-1, 1);
  for (auto& v : fs) v = rng.uniform(-1, 1);
  for (auto& v : ms) v = rng.uniform() < 0.5 ? 1.0 : 0.0;
  ms[0] = 1.0;

  // random permutation of support pixels, applied to features and mask together
  std::vector<std::size_t> perm(hw);
  for (std::size_t i = 0; i < hw; ++i) perm[i] = i;
  for (std::size_t i = hw; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);

  std::vector<double> fs_p(c * hw), ms_p(hw);
  for (std::size_t i = 0; i < hw; ++i) {
    ms_p[i] = ms[perm[i]];
    for (std::size_t ch = 0; ch < c; ++ch) fs_p[ch * hw + i] = fs[ch * hw + perm[i]];
  }

  auto a = scca::aggregate_pseudo_mask(T64::from({c, h, w}, fq), T64::from({c, h, w}, fs),
                                       T64::from({1, h, w}, ms));
  auto b = scca::aggregate_pseudo_mask(T64::from({c, h, w}, fq), T64::from({c, h, w}, fs_p),
                                       T64::from({1, h, w}, ms_p));
  for (std::size_t i = 0; i < hw; ++i) {
    CHECK(a.values.values()[i] == Catch::Approx(b.values.values()[i]).margin(1e-12));
  }
}

TEST_CASE("pma shape guards", "[pma]") {
  auto q = T64::zeros({2, 2, 2});
  auto s = T64::zeros({2, 2, 3});
  CHECK_THROWS_AS(scca::aggregate_pseudo_mask(q, s, T64::zeros({1, 2, 2})), scca::ShapeError);
  CHECK_THROWS_AS(
      scca::aggregate_pseudo_mask(q, q, T64::from({1, 2, 2}, {0.5, 0, 0, 0})),
      scca::ContractError);
}
