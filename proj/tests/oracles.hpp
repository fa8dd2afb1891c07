// Independent reference implementations and random problem builders shared
// by the unit tests and the acceptance suite.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "reid/eval.hpp"
#include "reid/losses.hpp"
#include "reid/numerics.hpp"
#include "reid/rng.hpp"

namespace oracle {

using reid::Vec;

inline Vec gaussian(reid::Rng& rng, std::size_t n, double scale = 1.0) {
  Vec v(n);
  for (double& x : v) x = scale * rng.normal();
  return v;
}

/// P identities x K samples, labels 0..P-1 in blocks, optionally shuffled.
inline reid::BatchEmbeddings pk_batch(reid::Rng& rng, std::size_t p, std::size_t k, std::size_t dim,
                                      bool shuffle = true) {
  reid::BatchEmbeddings b;
  std::vector<std::size_t> order(p * k);
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  if (shuffle) rng.shuffle(order.begin(), order.end());
  b.labels.resize(p * k);
  b.embeddings.resize(p * k);
  for (std::size_t i = 0; i < p * k; ++i) {
    b.labels[order[i]] = i / k;
    b.embeddings[order[i]] = gaussian(rng, dim);
  }
  b.pk_shape = reid::PKShape{p, k};
  return b;
}

inline reid::Mat random_head(reid::Rng& rng, std::size_t rows, std::size_t cols) {
  reid::Mat m(rows, cols);
  for (double& x : m.data()) x = rng.normal();
  return m;
}

inline double dist(const Vec& a, const Vec& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(acc);
}

inline double unit_dist(const Vec& a, const Vec& b) {
  double na = 0.0, nb = 0.0;
  for (double x : a) na += x * x;
  for (double x : b) nb += x * x;
  na = std::sqrt(na);
  nb = std::sqrt(nb);
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] / na - b[i] / nb;
    acc += d * d;
  }
  return std::sqrt(acc);
}

inline double surrogate(const reid::LossConfig& cfg, double arg) {
  if (cfg.surrogate == reid::Surrogate::Hinge) return arg > 0.0 ? arg : 0.0;
  return arg > 0 ? arg + std::log1p(std::exp(-arg)) : std::log1p(std::exp(arg));
}

inline double pair_dist(const reid::LossConfig& cfg, const Vec& a, const Vec& b) {
  return cfg.normalize_triplet_features ? unit_dist(a, b) : dist(a, b);
}

/// Per-anchor batch-hard terms: every (p, n) pair is enumerated and the
/// largest surrogate value kept.
inline std::vector<double> batch_hard_terms(const reid::BatchEmbeddings& b, const reid::LossConfig& cfg) {
  const std::size_t n = b.embeddings.size();
  std::vector<double> terms(n, -std::numeric_limits<double>::infinity());
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t p = 0; p < n; ++p) {
      if (p == a || b.labels[p] != b.labels[a]) continue;
      for (std::size_t q = 0; q < n; ++q) {
        if (b.labels[q] == b.labels[a]) continue;
        const double v = surrogate(cfg, cfg.triplet_margin + pair_dist(cfg, b.embeddings[a], b.embeddings[p]) -
                                            pair_dist(cfg, b.embeddings[a], b.embeddings[q]));
        terms[a] = std::max(terms[a], v);
      }
    }
  }
  return terms;
}

inline double batch_hard(const reid::BatchEmbeddings& b, const reid::LossConfig& cfg) {
  double total = 0.0;
  for (double t : batch_hard_terms(b, cfg)) total += t;
  if (cfg.reduction == reid::Reduction::Mean) total *= 1.0 / static_cast<double>(b.embeddings.size());
  return total;
}

inline double triplet_all(const reid::BatchEmbeddings& b, const reid::LossConfig& cfg) {
  const std::size_t n = b.embeddings.size();
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = 0; q < n; ++q) {
        if (p == a || b.labels[p] != b.labels[a] || b.labels[q] == b.labels[a]) continue;
        total += surrogate(cfg, cfg.triplet_margin + pair_dist(cfg, b.embeddings[a], b.embeddings[p]) -
                                    pair_dist(cfg, b.embeddings[a], b.embeddings[q]));
        ++count;
      }
  if (cfg.reduction == reid::Reduction::Mean) total *= 1.0 / static_cast<double>(count);
  return total;
}

/// Rank of each kept gallery item by counting: strictly more similar items
/// first, then equal ones with a lower gallery index. Filtered items get -1.
inline std::vector<long> gallery_ranks(const reid::EvalItem& probe, const std::vector<reid::EvalItem>& gallery) {
  const std::size_t g = gallery.size();
  std::vector<bool> kept(g);
  std::vector<double> sim(g, 0.0);
  for (std::size_t j = 0; j < g; ++j) {
    kept[j] = !(gallery[j].identity == probe.identity && gallery[j].camera == probe.camera);
    sim[j] = reid::cosine_similarity(probe.embedding, gallery[j].embedding);
  }
  std::vector<long> rank(g, -1);
  for (std::size_t j = 0; j < g; ++j) {
    if (!kept[j]) continue;
    long r = 0;
    for (std::size_t i = 0; i < g; ++i) {
      if (i == j || !kept[i]) continue;
      if (sim[i] > sim[j] || (sim[i] == sim[j] && i < j)) ++r;
    }
    rank[j] = r;
  }
  return rank;
}

struct Metrics {
  Vec cmc;
  double map = 0.0;
};

inline Metrics evaluate(const std::vector<reid::EvalItem>& probes, const std::vector<reid::EvalItem>& gallery,
                        std::size_t max_k) {
  Metrics m;
  m.cmc.assign(max_k, 0.0);
  std::vector<std::size_t> within(max_k, 0);
  double ap_sum = 0.0;
  for (const auto& probe : probes) {
    const auto rank = gallery_ranks(probe, gallery);
    std::vector<long> hits;
    for (std::size_t j = 0; j < gallery.size(); ++j) {
      if (rank[j] >= 0 && gallery[j].identity == probe.identity) hits.push_back(rank[j]);
    }
    std::sort(hits.begin(), hits.end());
    double ap = 0.0;
    for (std::size_t h = 0; h < hits.size(); ++h) {
      ap += static_cast<double>(h + 1) / static_cast<double>(hits[h] + 1);
    }
    ap_sum += ap / static_cast<double>(hits.size());
    for (std::size_t k = 0; k < max_k; ++k) {
      if (hits.front() <= static_cast<long>(k)) ++within[k];
    }
  }
  for (std::size_t k = 0; k < max_k; ++k) {
    m.cmc[k] = static_cast<double>(within[k]) / static_cast<double>(probes.size());
  }
  m.map = ap_sum / static_cast<double>(probes.size());
  return m;
}

struct EvalInstance {
  std::vector<reid::EvalItem> probes;
  std::vector<reid::EvalItem> gallery;
};

/// Random probe/gallery split in which every probe has at least one
/// cross-camera match. Small integer coordinates make exact similarity ties
/// common.
inline EvalInstance random_eval_instance(reid::Rng& rng, std::size_t max_gallery = 50) {
  const std::size_t dim = 2 + rng.below(3);
  const long ids = 2 + static_cast<long>(rng.below(6));
  const int cams = 2 + static_cast<int>(rng.below(3));
  const bool coarse = rng.below(2) == 0;
  auto item = [&](long id, int cam) {
    Vec e(dim);
    do {
      for (double& x : e) x = coarse ? static_cast<double>(rng.below(3)) - 1.0 : rng.normal();
    } while (reid::norm(e) == 0.0);
    return reid::make_eval_item(e, id, cam);
  };
  EvalInstance inst;
  const std::size_t g = 2 + rng.below(max_gallery - 1);
  for (std::size_t j = 0; j < g; ++j) {
    inst.gallery.push_back(item(static_cast<long>(rng.below(ids)), static_cast<int>(rng.below(cams))));
  }
  const std::size_t q = 1 + rng.below(8);
  while (inst.probes.size() < q) {
    // Pick a gallery item and place the probe under a different camera.
    const auto& target = inst.gallery[rng.below(g)];
    const int cam = (target.camera + 1 + static_cast<int>(rng.below(cams - 1))) % cams;
    inst.probes.push_back(item(target.identity, cam));
  }
  return inst;
}

/// |<g, x>| / (|g| |x| + eps): zero when the gradient is tangent to the sphere through x.
inline double radial_ratio(const Vec& g, const Vec& x, double eps = 1e-300) {
  double gx = 0.0, gg = 0.0, xx = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    gx += g[i] * x[i];
    gg += g[i] * g[i];
    xx += x[i] * x[i];
  }
  return std::abs(gx) / (std::sqrt(gg) * std::sqrt(xx) + eps);
}

}  // namespace oracle
