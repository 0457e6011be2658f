// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Oracles are written as plain scalar loops, independent of the
// library's op stack.

#include <cmath>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include "scca/attention.hpp"
#include "scca/cost.hpp"
#include "scca/gradcheck.hpp"
#include "scca/model.hpp"
#include "scca/pipeline.hpp"
#include "scca/pma.hpp"
#include "scca/rng.hpp"
#include "scca/windowing.hpp"

using T64 = scca::Tensor<double>;

namespace {

int g_failures = 0;

void report(int index, const char* name, bool ok, const std::string& detail) {
  std::printf("[%d/8] %-24s %s%s%s\n", index, name, ok ? "PASS" : "FAIL",
              detail.empty() ? "" : "  -- ", detail.c_str());
  if (!ok) ++g_failures;
}

T64 random_tensor(scca::Rng& rng, scca::Shape shape, double lo = -1.0, double hi = 1.0) {
  std::vector<double> data(scca::numel(shape));
  for (auto& v : data) v = rng.uniform(lo, hi);
  return T64::from(std::move(shape), std::move(data));
}

double rel_diff(double got, double want) {
  return std::abs(got - want) / std::max(1.0, std::abs(want));
}

// ----- scalar reference pieces ---------------------------------------------

double cos_pixels(const std::vector<double>& a, std::size_t ia, const std::vector<double>& b,
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
  double lo = v[0], hi = v[0];
  for (double x : v) {
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  if (hi - lo <= 1e-8) {
    for (auto& x : v) x = std::clamp(x, 0.0, 1.0);
    return;
  }
  for (auto& x : v) x = (x - lo) / (hi - lo);
}

double gelu_ref(double x) { return 0.5 * x * (1.0 + std::erf(x * 0.7071067811865475244)); }

// ----- criterion 1: oracle equivalence --------------------------------------

bool oracle_matmul(scca::Rng& rng, double& worst) {
  for (int t = 0; t < 120; ++t) {
    const std::size_t m = 2 + rng.below(7), k = 2 + rng.below(7), n = 2 + rng.below(7);
    auto a = random_tensor(rng, {m, k});
    auto b = random_tensor(rng, {k, n});
    auto got = scca::matmul(a, b);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double acc = 0;
        for (std::size_t p = 0; p < k; ++p) acc += a(i, p) * b(p, j);
        worst = std::max(worst, rel_diff(got(i, j), acc));
      }
  }
  return worst <= 1e-8;
}

bool oracle_pma(scca::Rng& rng, double& worst) {
  for (int t = 0; t < 120; ++t) {
    const std::size_t h = 2 + rng.below(3), w = 2 + rng.below(3), c = 2 + rng.below(3);
    const std::size_t hw = h * w;
    auto fq = random_tensor(rng, {c, h, w}, -2, 2);
    auto fs = random_tensor(rng, {c, h, w}, -2, 2);
    std::vector<double> ms(hw, 0.0);
    bool any = false;
    for (auto& v : ms) {
      v = rng.uniform() < 0.5 ? 1.0 : 0.0;
      any = any || v == 1.0;
    }
    if (!any) ms[rng.below(hw)] = 1.0;
    auto msk = T64::from({1, h, w}, ms);

    // aggregated: softmax rows of the cosine table dotted with the mask
    std::vector<double> agg_ref(hw), max_ref(hw);
    for (std::size_t q = 0; q < hw; ++q) {
      std::vector<double> row(hw);
      double mx = -1e300;
      for (std::size_t s = 0; s < hw; ++s) {
        row[s] = cos_pixels(fq.values(), q, fs.values(), s, c, hw);
        mx = std::max(mx, row[s]);
      }
      double denom = 0;
      for (auto& r : row) {
        r = std::exp(r - mx);
        denom += r;
      }
      double acc = 0, best = -1e300;
      for (std::size_t s = 0; s < hw; ++s) {
        acc += row[s] / denom * ms[s];
        if (ms[s] == 1.0)
          best = std::max(best, cos_pixels(fq.values(), q, fs.values(), s, c, hw));
      }
      agg_ref[q] = acc;
      max_ref[q] = best;
    }
    min_max_ref(agg_ref);
    min_max_ref(max_ref);

    auto agg = scca::aggregate_pseudo_mask(fq, fs, msk);
    auto mxp = scca::max_similarity_prior(fq, fs, msk);
    for (std::size_t i = 0; i < hw; ++i) {
      worst = std::max(worst, rel_diff(agg.values.values()[i], agg_ref[i]));
      worst = std::max(worst, rel_diff(mxp.values.values()[i], max_ref[i]));
    }
  }
  return worst <= 1e-8;
}

bool oracle_alignment(scca::Rng& rng) {
  for (int t = 0; t < 120; ++t) {
    const std::size_t nq = 2 + rng.below(5), ns = 2 + rng.below(5), c = 2 + rng.below(5);
    auto tq = random_tensor(rng, {nq, c});
    auto ts = random_tensor(rng, {ns, c});
    std::vector<std::uint8_t> flags(ns);
    bool any = false;
    for (auto& f : flags) {
      f = rng.uniform() < 0.6;
      any = any || f;
    }
    if (!any) flags[rng.below(ns)] = 1;
    auto got = scca::align_patches(tq, ts, flags);
    for (std::size_t q = 0; q < nq; ++q) {
      std::size_t best = ns;
      double best_score = 0;
      for (std::size_t s = 0; s < ns; ++s) {
        if (!flags[s]) continue;
        double dot = 0, na = 0, nb = 0;
        for (std::size_t ch = 0; ch < c; ++ch) {
          dot += tq(q, ch) * ts(s, ch);
          na += tq(q, ch) * tq(q, ch);
          nb += ts(s, ch) * ts(s, ch);
        }
        const double score =
            dot / (std::max(std::sqrt(na), 1e-8) * std::max(std::sqrt(nb), 1e-8));
        if (best == ns || score > best_score) {
          best = s;
          best_score = score;
        }
      }
      if (got.indices[q] != best) return false;
    }
  }
  return true;
}

bool oracle_decode(scca::Rng& rng, double& worst) {
  for (int t = 0; t < 120; ++t) {
    const std::size_t c = 2 + rng.below(7);
    const std::size_t hidden = std::max<std::size_t>(1, c / 2);
    scca::DecoderParams<double> d;
    d.w1 = random_tensor(rng, {hidden, c});
    d.b1 = random_tensor(rng, {hidden});
    d.w2 = random_tensor(rng, {2, hidden});
    d.b2 = random_tensor(rng, {2});
    auto feat = random_tensor(rng, {c, 2, 2});
    auto probs = scca::decode(feat, d);
    for (std::size_t pix = 0; pix < 4; ++pix) {
      std::vector<double> hid(hidden);
      for (std::size_t j = 0; j < hidden; ++j) {
        double acc = d.b1.values()[j];
        for (std::size_t ch = 0; ch < c; ++ch) acc += d.w1(j, ch) * feat.values()[ch * 4 + pix];
        hid[j] = gelu_ref(acc);
      }
      double l0 = d.b2.values()[0], l1 = d.b2.values()[1];
      for (std::size_t j = 0; j < hidden; ++j) {
        l0 += d.w2(0, j) * hid[j];
        l1 += d.w2(1, j) * hid[j];
      }
      const double mx = std::max(l0, l1);
      const double e0 = std::exp(l0 - mx), e1 = std::exp(l1 - mx);
      worst = std::max(worst, rel_diff(probs.values()[pix], e0 / (e0 + e1)));
      worst = std::max(worst, rel_diff(probs.values()[4 + pix], e1 / (e0 + e1)));
    }
  }
  return worst <= 1e-8;
}

// dense single-window SCCA block, no windowing path, pre-norm enabled
bool oracle_single_window_scca(scca::Rng& rng, double& worst) {
  for (int t = 0; t < 100; ++t) {
    const std::size_t dim = 8, k = 2 + 2 * rng.below(2);  // 2 or 4
    const std::size_t hw = k * k;
    const scca::BlockSettings cfg{2, true};
    const std::size_t dk = dim / cfg.heads;

    scca::SccaBlockParams<double> p;
    p.wq = random_tensor(rng, {dim, dim}, -0.4, 0.4);
    p.wk = random_tensor(rng, {dim, dim}, -0.4, 0.4);
    p.wv = random_tensor(rng, {dim, dim}, -0.4, 0.4);
    p.wo = random_tensor(rng, {dim, dim}, -0.4, 0.4);
    p.ffn_w1 = random_tensor(rng, {dim, dim}, -0.4, 0.4);
    p.ffn_b1 = random_tensor(rng, {dim}, -0.1, 0.1);
    p.ffn_w2 = random_tensor(rng, {dim, dim}, -0.4, 0.4);
    p.ffn_b2 = random_tensor(rng, {dim}, -0.1, 0.1);
    p.norm1_gamma = random_tensor(rng, {dim}, 0.8, 1.2);
    p.norm1_beta = random_tensor(rng, {dim}, -0.1, 0.1);
    p.norm2_gamma = random_tensor(rng, {dim}, 0.8, 1.2);
    p.norm2_beta = random_tensor(rng, {dim}, -0.1, 0.1);

    auto fq = random_tensor(rng, {dim, k, k});
    auto fs = random_tensor(rng, {dim, k, k});
    std::vector<double> ms(hw, 0.0);
    bool any = false;
    for (auto& v : ms) {
      v = rng.uniform() < 0.5 ? 1.0 : 0.0;
      any = any || v == 1.0;
    }
    if (!any) ms[rng.below(hw)] = 1.0;
    auto msk = T64::from({1, k, k}, ms);

    auto got = scca::scca_block_forward(fq, fs, msk, p, cfg, k, false);

    // reference: pixel rows, layer norm, projections, joint softmax, ffn
    auto rows_of = [&](const T64& map) {
      std::vector<std::vector<double>> rows(hw, std::vector<double>(dim));
      for (std::size_t i = 0; i < hw; ++i)
        for (std::size_t ch = 0; ch < dim; ++ch) rows[i][ch] = map.values()[ch * hw + i];
      return rows;
    };
    auto ln = [&](const std::vector<std::vector<double>>& x, const T64& gam, const T64& bet) {
      auto y = x;
      for (auto& row : y) {
        double mu = 0;
        for (double v : row) mu += v;
        mu /= static_cast<double>(dim);
        double var = 0;
        for (double v : row) var += (v - mu) * (v - mu);
        var /= static_cast<double>(dim);
        const double rstd = 1.0 / std::sqrt(var + 1e-5);
        for (std::size_t j = 0; j < dim; ++j)
          row[j] = gam.values()[j] * (row[j] - mu) * rstd + bet.values()[j];
      }
      return y;
    };
    auto proj = [&](const std::vector<std::vector<double>>& x, const T64& weight) {
      std::vector<std::vector<double>> y(x.size(), std::vector<double>(weight.shape()[0], 0.0));
      for (std::size_t r = 0; r < x.size(); ++r)
        for (std::size_t o = 0; o < weight.shape()[0]; ++o)
          for (std::size_t i = 0; i < weight.shape()[1]; ++i) y[r][o] += x[r][i] * weight(o, i);
      return y;
    };

    auto q_raw = rows_of(fq);
    auto q_in = ln(q_raw, p.norm1_gamma, p.norm1_beta);
    auto s_in = ln(rows_of(fs), p.norm1_gamma, p.norm1_beta);
    for (std::size_t i = 0; i < hw; ++i)
      for (std::size_t ch = 0; ch < dim; ++ch) s_in[i][ch] *= ms[i];

    auto q = proj(q_in, p.wq);
    auto kq = proj(q_in, p.wk);
    auto ks = proj(s_in, p.wk);
    auto vq = proj(q_in, p.wv);
    auto vs = proj(s_in, p.wv);

    std::vector<std::vector<double>> ctx(hw, std::vector<double>(dim, 0.0));
    for (std::size_t head = 0; head < cfg.heads; ++head) {
      const std::size_t off = head * dk;
      for (std::size_t i = 0; i < hw; ++i) {
        std::vector<double> logits(2 * hw);
        for (std::size_t j = 0; j < hw; ++j) {
          double dot = 0, nq2 = 0, nk2 = 0;
          for (std::size_t d = 0; d < dk; ++d) {
            dot += q[i][off + d] * kq[j][off + d];
            nq2 += q[i][off + d] * q[i][off + d];
          }
          logits[j] = dot / std::sqrt(static_cast<double>(dk));
          double dot2 = 0;
          for (std::size_t d = 0; d < dk; ++d) {
            dot2 += q[i][off + d] * ks[j][off + d];
            nk2 += ks[j][off + d] * ks[j][off + d];
          }
          logits[hw + j] = dot2 / (std::max(std::sqrt(nq2), 1e-8) *
                                   std::max(std::sqrt(nk2), 1e-8));
        }
        double mx = logits[0];
        for (double v : logits) mx = std::max(mx, v);
        double denom = 0;
        for (auto& v : logits) {
          v = std::exp(v - mx);
          denom += v;
        }
        for (std::size_t d = 0; d < dk; ++d) {
          double acc = 0;
          for (std::size_t j = 0; j < hw; ++j)
            acc += logits[j] / denom * vq[j][off + d] + logits[hw + j] / denom * vs[j][off + d];
          ctx[i][off + d] = acc;
        }
      }
    }
    auto attn = proj(ctx, p.wo);
    std::vector<std::vector<double>> z(hw, std::vector<double>(dim));
    for (std::size_t i = 0; i < hw; ++i)
      for (std::size_t ch = 0; ch < dim; ++ch) z[i][ch] = q_raw[i][ch] + attn[i][ch];
    auto z2 = ln(z, p.norm2_gamma, p.norm2_beta);
    auto hidden = proj(z2, p.ffn_w1);
    for (auto& row : hidden)
      for (std::size_t j = 0; j < dim; ++j) row[j] = gelu_ref(row[j] + p.ffn_b1.values()[j]);
    auto ffn = proj(hidden, p.ffn_w2);
    for (std::size_t i = 0; i < hw; ++i)
      for (std::size_t ch = 0; ch < dim; ++ch) {
        const double want = z[i][ch] + ffn[i][ch] + p.ffn_b2.values()[ch];
        worst = std::max(worst, rel_diff(got.values()[ch * hw + i], want));
      }
  }
  return worst <= 1e-8;
}

void criterion_1() {
  scca::Rng rng(1001);
  double w_mm = 0, w_pma = 0, w_dec = 0, w_scca = 0;
  const bool mm = oracle_matmul(rng, w_mm);
  const bool pma = oracle_pma(rng, w_pma);
  const bool align = oracle_alignment(rng);
  const bool dec = oracle_decode(rng, w_dec);
  const bool scca_ok = oracle_single_window_scca(rng, w_scca);
  std::ostringstream detail;
  detail << "max rel err: matmul=" << w_mm << " pma=" << w_pma << " decode=" << w_dec
         << " scca=" << w_scca << " alignment=" << (align ? "exact" : "MISMATCH");
  report(1, "oracle-equivalence", mm && pma && align && dec && scca_ok, detail.str());
}

// ----- criterion 2: normalization suite -------------------------------------

void criterion_2() {
  scca::Rng rng(1002);
  double worst_joint = 0, worst_decode = 0;
  bool pma_in_range = true;
  for (int trial = 0; trial < 1000; ++trial) {
    // joint attention rows under random masks
    const std::size_t dim = 8, k2 = 4;
    scca::SccaBlockParams<double> p = scca::identity_block_params<double>(dim, dim);
    auto t = random_tensor(rng, {k2, dim}, -3, 3);
    auto s = random_tensor(rng, {k2, dim}, -3, 3);
    std::vector<std::uint8_t> qv(k2), sv(k2);
    for (auto& v : qv) v = rng.uniform() < 0.8;
    for (auto& v : sv) v = rng.uniform() < 0.8;
    qv[0] = 1;
    auto scores = scca::scca_scores(t, s, qv, sv, p, {2, false});
    for (const auto& joint : scores.joint) {
      for (std::size_t r = 0; r < k2; ++r) {
        double sum = 0;
        for (std::size_t j = 0; j < 2 * k2; ++j) sum += joint(r, j);
        worst_joint = std::max(worst_joint, std::abs(sum - 1.0));
      }
    }

    // decode rows
    scca::DecoderParams<double> d;
    d.w1 = random_tensor(rng, {2, 4});
    d.b1 = random_tensor(rng, {2});
    d.w2 = random_tensor(rng, {2, 2});
    d.b2 = random_tensor(rng, {2});
    auto probs = scca::decode(random_tensor(rng, {4, 2, 2}, -3, 3), d);
    for (std::size_t pix = 0; pix < 4; ++pix) {
      worst_decode =
          std::max(worst_decode, std::abs(probs.values()[pix] + probs.values()[4 + pix] - 1.0));
    }

    // pma range
    const std::size_t h = 2 + rng.below(2), w = 2 + rng.below(2);
    auto fq = random_tensor(rng, {3, h, w}, -2, 2);
    auto fs = random_tensor(rng, {3, h, w}, -2, 2);
    std::vector<double> ms(h * w);
    bool any = false;
    for (auto& v : ms) {
      v = rng.uniform() < 0.5 ? 1.0 : 0.0;
      any = any || v == 1.0;
    }
    if (!any) ms[0] = 1.0;
    auto agg = scca::aggregate_pseudo_mask(fq, fs, T64::from({1, h, w}, ms));
    auto mxp = scca::max_similarity_prior(fq, fs, T64::from({1, h, w}, ms));
    for (double v : agg.values.values()) pma_in_range = pma_in_range && v >= 0.0 && v <= 1.0;
    for (double v : mxp.values.values()) pma_in_range = pma_in_range && v >= 0.0 && v <= 1.0;
  }
  std::ostringstream detail;
  detail << "joint row dev=" << worst_joint << " decode row dev=" << worst_decode
         << " pma in [0,1]=" << (pma_in_range ? "yes" : "NO");
  report(2, "normalization-suite", worst_joint <= 1e-6 && worst_decode <= 1e-6 && pma_in_range,
         detail.str());
}

// ----- criterion 3: scaled-cosine invariance --------------------------------

void criterion_3() {
  scca::Rng rng(1003);
  const std::size_t dim = 8, k2 = 4;
  bool ok = true;
  double worst_qs = 0;
  std::ostringstream detail;

  auto params = scca::identity_block_params<double>(dim, dim);
  auto t = random_tensor(rng, {k2, dim});
  auto s = random_tensor(rng, {k2, dim});
  std::vector<std::uint8_t> valid(k2, 1);
  const scca::BlockSettings cfg{2, false};
  auto base = scca::scca_scores(t, s, valid, valid, params, cfg);

  auto tq = random_tensor(rng, {5, 3});
  auto ts = random_tensor(rng, {6, 3});
  const std::vector<std::uint8_t> flags{1, 1, 0, 1, 1, 1};
  auto base_idx = scca::align_patches(tq, ts, flags);

  for (double alpha : {1e-3, 1.0, 1e3}) {
    std::vector<double> scaled = s.values();
    for (auto& v : scaled) v *= alpha;
    auto got = scca::scca_scores(t, T64::from({k2, dim}, std::move(scaled)), valid, valid,
                                 params, cfg);
    for (std::size_t h = 0; h < cfg.heads; ++h)
      for (std::size_t i = 0; i < k2 * k2; ++i)
        worst_qs = std::max(worst_qs,
                            std::abs(got.a_qs[h].values()[i] - base.a_qs[h].values()[i]));

    std::vector<double> proto_scaled = ts.values();
    for (auto& v : proto_scaled) v *= alpha;
    auto idx = scca::align_patches(tq, T64::from({6, 3}, std::move(proto_scaled)), flags);
    ok = ok && idx.indices == base_idx.indices;
  }
  ok = ok && worst_qs <= 1e-6;

  // asymmetry: query scaling must move a_qq
  std::vector<double> t_scaled = t.values();
  for (auto& v : t_scaled) v *= 10.0;
  auto moved = scca::scca_scores(T64::from({k2, dim}, std::move(t_scaled)), s, valid, valid,
                                 params, cfg);
  double qq_delta = 0;
  for (std::size_t i = 0; i < k2 * k2; ++i)
    qq_delta =
        std::max(qq_delta, std::abs(moved.a_qq[0].values()[i] - base.a_qq[0].values()[i]));
  ok = ok && qq_delta > 1e-3;

  // the hand-derived joint weights at K=1
  auto hand = scca::scca_scores(T64::from({1, 2}, {3, 0}), T64::from({1, 2}, {1, 0}), {1}, {1},
                                scca::identity_block_params<double>(2, 2), {1, false});
  const double j0 = hand.joint[0](0, 0), j1 = hand.joint[0](0, 1);
  ok = ok && std::abs(j0 - 0.99534) <= 1e-4 && std::abs(j1 - 0.00466) <= 1e-4;

  detail << "a_qs drift=" << worst_qs << " a_qq query-scale delta=" << qq_delta
         << " hand joint=(" << j0 << "," << j1 << ")";
  report(3, "scaled-cosine", ok, detail.str());
}

// ----- criterion 4: windowing round trip ------------------------------------

void criterion_4() {
  scca::Rng rng(1004);
  bool ok = true;
  for (std::size_t h : {8u, 16u, 24u}) {
    for (std::size_t w : {8u, 16u, 24u}) {
      for (std::size_t k : {2u, 4u, 8u}) {
        for (bool shifted : {false, true}) {
          auto feat = random_tensor(rng, {3, h, w});
          auto grid = scca::partition(feat, k, shifted);
          double covered = 0;
          for (double v : grid.validity.values()) covered += v;
          ok = ok && covered == static_cast<double>(h * w);
          auto back = scca::merge(grid);
          ok = ok && back.values() == feat.values();
        }
      }
    }
  }
  report(4, "windowing-round-trip", ok, ok ? "exact identity, single coverage" : "mismatch");
}

// ----- criterion 5: gradient checks ------------------------------------------

void criterion_5() {
  scca::Rng rng(1005);
  bool ok = true;
  std::ostringstream detail;

  scca::SynthSpec spec;
  spec.channels = 4;
  spec.height = spec.width = 4;
  spec.blob = 2;
  spec.noise = 0.4;
  auto ep = scca::synth_episode<double>(55, spec);

  // fusion
  {
    auto params = scca::init_model_params<double>(4, 8, 1, 2, 1, 2, 9);
    auto probe = random_tensor(rng, {8, 4, 4});
    auto support = scca::kshot_average(ep.support_feats, ep.support_masks);
    auto proto = scca::support_prototype(support.features, support.binary_mask);
    auto r = scca::finite_diff_check(
        [&] {
          auto fused = scca::fuse(ep.query_feat, proto, ep.query_mask, params.fusion, true);
          return scca::sum_all(scca::mul(fused, probe));
        },
        {{"w", &params.fusion.query_weight}, {"b", &params.fusion.query_bias}});
    ok = ok && r.passed;
    detail << "fusion=" << r.max_rel_err;
  }

  // one block
  {
    auto params = scca::init_model_params<double>(4, 8, 1, 2, 1, 2, 10);
    auto& blk = params.blocks[0];
    auto fq = random_tensor(rng, {8, 4, 4});
    auto fs = random_tensor(rng, {8, 4, 4});
    auto probe = random_tensor(rng, {8, 4, 4});
    auto r = scca::finite_diff_check(
        [&] {
          auto out = scca::scca_block_forward(fq, fs, ep.support_masks[0], blk, {2, true}, 2,
                                              true);
          return scca::sum_all(scca::mul(out, probe));
        },
        {{"wq", &blk.wq},
         {"wk", &blk.wk},
         {"wv", &blk.wv},
         {"wo", &blk.wo},
         {"ffn_w1", &blk.ffn_w1},
         {"ffn_b1", &blk.ffn_b1},
         {"ffn_w2", &blk.ffn_w2},
         {"ffn_b2", &blk.ffn_b2},
         {"norm1_gamma", &blk.norm1_gamma},
         {"norm1_beta", &blk.norm1_beta},
         {"norm2_gamma", &blk.norm2_gamma},
         {"norm2_beta", &blk.norm2_beta}});
    ok = ok && r.passed;
    detail << " block=" << r.max_rel_err;
  }

  // decoder
  {
    scca::DecoderParams<double> d;
    d.w1 = random_tensor(rng, {4, 8});
    d.b1 = random_tensor(rng, {4});
    d.w2 = random_tensor(rng, {2, 4});
    d.b2 = random_tensor(rng, {2});
    for (auto* p : {&d.w1, &d.b1, &d.w2, &d.b2}) p->set_requires_grad(true);
    auto feat = random_tensor(rng, {8, 4, 4});
    auto gt = scca::reshape(ep.query_mask, {4, 4});
    auto r = scca::finite_diff_check(
        [&] {
          auto probs = scca::decode(feat, d);
          auto fg = scca::reshape(scca::slice_cols(scca::to_rows(probs), 1, 2), {4, 4});
          return scca::dice_loss(fg, gt);
        },
        {{"w1", &d.w1}, {"b1", &d.b1}, {"w2", &d.w2}, {"b2", &d.b2}});
    ok = ok && r.passed;
    detail << " decoder=" << r.max_rel_err;
  }

  // 2-block end-to-end through the dice loss
  {
    auto params = scca::init_model_params<double>(4, 8, 2, 2, 1, 2, 11);
    auto r = scca::finite_diff_check(
        [&] {
          auto result = scca::forward_episode(params, ep, {2, true});
          return scca::episode_loss(result.probs, ep.query_mask);
        },
        params.named_parameters());
    ok = ok && r.passed;
    detail << " model=" << r.max_rel_err;
  }
  report(5, "gradient-checks", ok, detail.str());
}

// ----- criterion 6: cost model ------------------------------------------------

void criterion_6() {
  bool ok = true;
  std::ostringstream detail;
  scca::RunConfig cfg;
  for (std::size_t hw : {16u, 60u, 64u}) {
    auto r = scca::cost_model(hw, hw, cfg);
    ok = ok && r.scca.logit_aggregation() == 2 * r.self_attention.logit_aggregation();
    ok = ok && r.scca_to_self_logit_ratio == 2.0;
  }
  auto r = scca::cost_model(60, 60, cfg);
  detail << "scca=" << r.scca.logit_aggregation()
         << " self=" << r.self_attention.logit_aggregation() << " ratio=2 exact";
  report(6, "cost-model-2x", ok, detail.str());
}

// ----- criterion 7: pma superiority -------------------------------------------

void criterion_7() {
  scca::SynthSpec spec;
  spec.channels = 8;
  spec.height = spec.width = 12;
  spec.blob = 5;
  spec.noise = 0.5;
  spec.n_classes = 4;
  double agg_total = 0, max_total = 0;
  auto iou = [](const T64& a, const T64& b) {
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      const bool pa = a.values()[i] == 1.0, pb = b.values()[i] == 1.0;
      inter += pa && pb;
      uni += pa || pb;
    }
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
  };
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto ep = scca::synth_episode<double>(seed, spec);
    const auto& high = ep.high_feats.value();
    auto agg = scca::aggregate_pseudo_mask(high.first, high.second, ep.support_masks[0]);
    auto mxp = scca::max_similarity_prior(high.first, high.second, ep.support_masks[0]);
    agg_total += iou(scca::binarize(agg, 0.75), ep.query_mask);
    max_total += iou(scca::binarize(mxp, 0.75), ep.query_mask);
  }
  const double agg_mean = agg_total / 100.0, max_mean = max_total / 100.0;
  std::ostringstream detail;
  detail << "mean IoU aggregated=" << agg_mean << " max-similarity=" << max_mean;
  report(7, "pma-superiority", agg_mean >= max_mean, detail.str());
}

// ----- criterion 8: toy learning ----------------------------------------------

void criterion_8() {
  scca::RunConfig cfg;
  cfg.blocks = 2;
  cfg.dim = 64;
  cfg.heads = 8;
  cfg.window = 8;
  cfg.epochs = 5;  // 5 x 100 episodes = 500 steps
  cfg.lr = 0.05;
  cfg.seed = 1;
  cfg.dtype = "f32";
  cfg.episodes = "synth:C=32,H=16,W=16,classes=4,blob=6,noise=0.1,count=100";
  cfg.validate();

  auto provider = scca::EpisodeProvider<float>::from_config(cfg);
  auto params = scca::init_model_params<float>(32, cfg.dim, cfg.blocks, cfg.heads, cfg.mlp_ratio,
                                               cfg.window, cfg.seed);
  std::ostringstream log;
  auto history = scca::train_loop(params, provider, cfg, log);
  auto metrics = scca::evaluate(params, provider, cfg, 50);
  const double fg_iou = metrics.fg_iou();
  std::ostringstream detail;
  detail << "held-out FG-IoU=" << fg_iou << " after " << cfg.epochs * 100
         << " steps (threshold 0.85), final loss=" << history.back().mean_loss;
  report(8, "toy-learning", fg_iou >= 0.85, detail.str());
}

}  // namespace

int main() {
  std::printf("acceptance suite: 8 criteria\n");
  criterion_1();
  criterion_2();
  criterion_3();
  criterion_4();
  criterion_5();
  criterion_6();
  criterion_7();
  criterion_8();
  if (g_failures > 0) {
    std::printf("%d criterion(s) FAILED\n", g_failures);
    return 1;
  }
  std::printf("all criteria passed\n");
  return 0;
}
