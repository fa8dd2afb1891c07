#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace reid {

enum class ReplacementPolicy { Resample, SkipIdentity };

struct SamplerConfig {
  std::size_t identities_per_batch = 4;   // P
  std::size_t samples_per_identity = 8;   // K
  std::uint64_t seed = 0;
  ReplacementPolicy replacement = ReplacementPolicy::Resample;

  void validate() const;
};

/// Dataset indices grouped by identity; position in the outer vector is the
/// identity's dense label.
using IdentityIndex = std::vector<std::vector<std::size_t>>;

struct EpochPlan {
  std::vector<std::vector<std::size_t>> batches;
};

std::size_t batch_size(const SamplerConfig& cfg);

/// PK plan for one epoch: ceil(#identities / P) batches. Identities are drawn
/// without replacement from a shuffled pool that refills (and reshuffles)
/// once exhausted; within each identity K samples are drawn without
/// replacement, or with replacement when fewer than K exist (Resample).
/// Under SkipIdentity, identities with fewer than K samples never enter the
/// pool. `epoch` selects the stream, so consecutive epochs differ.
EpochPlan plan_epoch(const IdentityIndex& index, const SamplerConfig& cfg, std::uint64_t epoch = 0);

}  // namespace reid
