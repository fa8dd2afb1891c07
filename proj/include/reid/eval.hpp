#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "reid/numerics.hpp"

namespace reid {

struct EvalItem {
  Vec embedding;  // unit norm once constructed through make_eval_item
  long identity = 0;
  int camera = 0;
};

/// Normalizes the embedding (ZeroNorm on a zero vector).
EvalItem make_eval_item(std::span<const double> embedding, long identity, int camera);

struct RankedCandidate {
  std::size_t gallery_index;
  double similarity;
  bool relevant;  // same identity as the probe
};

/// Drops gallery items that share identity AND camera with the probe, then
/// sorts by descending cosine similarity; ties keep gallery order.
/// Throws EmptyGalleryAfterFilter.
std::vector<RankedCandidate> rank_gallery(const EvalItem& probe, const std::vector<EvalItem>& gallery);

/// Non-interpolated AP: mean over relevant positions r of hits(<= r) / r. Throws NoRelevant.
double average_precision(std::span<const std::uint8_t> relevance);

/// cmc[k-1] = fraction of queries whose first relevant hit is at rank <= k.
/// Throws NoRelevant when a query has no relevant entry.
Vec cmc(const std::vector<std::vector<std::uint8_t>>& relevance, std::size_t max_k);

struct EvalReport {
  Vec cmc;
  double map = 0.0;
  Vec average_precisions;
};

EvalReport evaluate(const std::vector<EvalItem>& probes, const std::vector<EvalItem>& gallery,
                    std::size_t max_k = 20);

struct ClassSeparation {
  double intra = 0.0;  // mean cosine over same-identity pairs
  double inter = 0.0;  // mean cosine over different-identity pairs
};

ClassSeparation class_separation(const std::vector<EvalItem>& items);

void write_report_csv(std::ostream& os, const EvalReport& report);
/// Rank-1/5/10/mAP table in percent, one row per labelled report.
void write_report_markdown(std::ostream& os, const std::vector<std::string>& labels,
                           const std::vector<EvalReport>& reports);

}  // namespace reid
