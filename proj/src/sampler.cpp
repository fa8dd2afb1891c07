#include "reid/sampler.hpp"

#include <algorithm>
#include <string>

#include "reid/errors.hpp"
#include "reid/rng.hpp"

namespace reid {

void SamplerConfig::validate() const {
  if (identities_per_batch < 2 || samples_per_identity < 2) {
    throw Error(ErrorKind::ConfigConflict, "sampler needs P >= 2 and K >= 2");
  }
}

std::size_t batch_size(const SamplerConfig& cfg) {
  return cfg.identities_per_batch * cfg.samples_per_identity;
}

EpochPlan plan_epoch(const IdentityIndex& index, const SamplerConfig& cfg, std::uint64_t epoch) {
  cfg.validate();
  const std::size_t p = cfg.identities_per_batch;
  const std::size_t k = cfg.samples_per_identity;

  std::vector<std::size_t> eligible;
  for (std::size_t id = 0; id < index.size(); ++id) {
    const std::size_t have = index[id].size();
    if (have == 0) continue;
    if (cfg.replacement == ReplacementPolicy::SkipIdentity && have < k) continue;
    eligible.push_back(id);
  }
  if (eligible.size() < p) {
    throw Error(ErrorKind::TooFewIdentities, std::to_string(eligible.size()) +
                                                 " usable identities for P = " + std::to_string(p));
  }

  Rng rng(mix_seed(cfg.seed, epoch));
  std::vector<std::size_t> pool;
  auto refill = [&] {
    pool = eligible;
    rng.shuffle(pool.begin(), pool.end());
    std::reverse(pool.begin(), pool.end());  // pop from the back in shuffled order
  };
  refill();

  const std::size_t n_batches = (eligible.size() + p - 1) / p;
  EpochPlan plan;
  plan.batches.reserve(n_batches);
  for (std::size_t b = 0; b < n_batches; ++b) {
    std::vector<std::size_t> chosen;
    while (chosen.size() < p) {
      if (pool.empty()) refill();
      const std::size_t id = pool.back();
      pool.pop_back();
      // A refill can hand back an identity already in this batch.
      if (std::find(chosen.begin(), chosen.end(), id) != chosen.end()) {
        pool.insert(pool.begin(), id);
        continue;
      }
      chosen.push_back(id);
    }
    std::vector<std::size_t> batch;
    batch.reserve(p * k);
    for (std::size_t id : chosen) {
      std::vector<std::size_t> members = index[id];
      if (members.size() >= k) {
        rng.shuffle(members.begin(), members.end());
        batch.insert(batch.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(k));
      } else {
        for (std::size_t j = 0; j < k; ++j) batch.push_back(members[rng.below(members.size())]);
      }
    }
    plan.batches.push_back(std::move(batch));
  }
  return plan;
}

}  // namespace reid
