#include "reid/eval.hpp"

#include <algorithm>
#include <iomanip>
#include <ostream>

#include "reid/errors.hpp"

namespace reid {

EvalItem make_eval_item(std::span<const double> embedding, long identity, int camera) {
  return {l2_normalize(embedding).unit, identity, camera};
}

std::vector<RankedCandidate> rank_gallery(const EvalItem& probe, const std::vector<EvalItem>& gallery) {
  std::vector<RankedCandidate> out;
  out.reserve(gallery.size());
  for (std::size_t g = 0; g < gallery.size(); ++g) {
    const EvalItem& item = gallery[g];
    if (item.identity == probe.identity && item.camera == probe.camera) continue;
    out.push_back({g, cosine_similarity(probe.embedding, item.embedding),
                   item.identity == probe.identity});
  }
  if (out.empty()) throw Error(ErrorKind::EmptyGalleryAfterFilter, "no cross-view gallery items");
  std::stable_sort(out.begin(), out.end(), [](const RankedCandidate& a, const RankedCandidate& b) {
    return a.similarity > b.similarity;
  });
  return out;
}

double average_precision(std::span<const std::uint8_t> relevance) {
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t r = 0; r < relevance.size(); ++r) {
    if (!relevance[r]) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(r + 1);
  }
  if (hits == 0) throw Error(ErrorKind::NoRelevant, "ranking has no relevant item");
  return sum / static_cast<double>(hits);
}

Vec cmc(const std::vector<std::vector<std::uint8_t>>& relevance, std::size_t max_k) {
  if (relevance.empty()) throw Error(ErrorKind::EmptyInput, "no queries");
  std::vector<std::size_t> first_hit_count(max_k, 0);
  for (std::size_t q = 0; q < relevance.size(); ++q) {
    const auto& flags = relevance[q];
    const auto it = std::find(flags.begin(), flags.end(), std::uint8_t{1});
    if (it == flags.end()) {
      throw Error(ErrorKind::NoRelevant, "query " + std::to_string(q) + " has no relevant item");
    }
    const auto rank = static_cast<std::size_t>(it - flags.begin());
    if (rank < max_k) ++first_hit_count[rank];
  }
  Vec out(max_k);
  std::size_t running = 0;
  for (std::size_t k = 0; k < max_k; ++k) {
    running += first_hit_count[k];
    out[k] = static_cast<double>(running) / static_cast<double>(relevance.size());
  }
  return out;
}

EvalReport evaluate(const std::vector<EvalItem>& probes, const std::vector<EvalItem>& gallery,
                    std::size_t max_k) {
  if (probes.empty()) throw Error(ErrorKind::EmptyInput, "no probes");
  std::vector<std::vector<std::uint8_t>> relevance;
  relevance.reserve(probes.size());
  EvalReport report;
  for (std::size_t q = 0; q < probes.size(); ++q) {
    try {
      const auto ranked = rank_gallery(probes[q], gallery);
      std::vector<std::uint8_t> flags(ranked.size());
      for (std::size_t r = 0; r < ranked.size(); ++r) flags[r] = ranked[r].relevant ? 1 : 0;
      report.average_precisions.push_back(average_precision(flags));
      relevance.push_back(std::move(flags));
    } catch (const Error& e) {
      throw Error(e.kind(), "query " + std::to_string(q) + ": " + e.what());
    }
  }
  report.cmc = cmc(relevance, max_k);
  double sum = 0.0;
  for (double ap : report.average_precisions) sum += ap;
  report.map = sum / static_cast<double>(probes.size());
  return report;
}

ClassSeparation class_separation(const std::vector<EvalItem>& items) {
  double intra = 0.0;
  double inter = 0.0;
  std::size_t n_intra = 0;
  std::size_t n_inter = 0;
  for (std::size_t a = 0; a < items.size(); ++a) {
    for (std::size_t b = a + 1; b < items.size(); ++b) {
      const double c = dot(items[a].embedding, items[b].embedding);
      if (items[a].identity == items[b].identity) {
        intra += c;
        ++n_intra;
      } else {
        inter += c;
        ++n_inter;
      }
    }
  }
  return {n_intra ? intra / static_cast<double>(n_intra) : 0.0,
          n_inter ? inter / static_cast<double>(n_inter) : 0.0};
}

void write_report_csv(std::ostream& os, const EvalReport& report) {
  os << "metric,value\n" << std::setprecision(17);
  for (std::size_t k = 0; k < report.cmc.size(); ++k) os << "rank_" << k + 1 << ',' << report.cmc[k] << '\n';
  os << "map," << report.map << '\n';
}

void write_report_markdown(std::ostream& os, const std::vector<std::string>& labels,
                           const std::vector<EvalReport>& reports) {
  os << "| Loss | Rank1 | Rank5 | Rank10 | mAP |\n";
  os << "|---|---|---|---|---|\n";
  auto at = [](const Vec& cmc, std::size_t k) { return cmc.empty() ? 0.0 : cmc[std::min(k, cmc.size()) - 1]; };
  os << std::fixed << std::setprecision(2);
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const EvalReport& r = reports[i];
    os << "| " << labels[i] << " | " << 100 * at(r.cmc, 1) << " | " << 100 * at(r.cmc, 5) << " | "
       << 100 * at(r.cmc, 10) << " | " << 100 * r.map << " |\n";
  }
  os.unsetf(std::ios::fixed);
}

}  // namespace reid
