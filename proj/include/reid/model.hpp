#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "reid/losses.hpp"
#include "reid/numerics.hpp"

namespace reid {

struct ModelConfig {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden_dims;
  std::size_t embed_dim = 0;
  bool batch_norm_output = true;
  std::size_t attributes = 0;      // M
  std::size_t attribute_width = 0; // Q
  std::size_t classes = 0;         // c

  SlicePlan slice_plan() const { return {attributes, attribute_width}; }
  std::size_t identity_width() const { return embed_dim - attributes * attribute_width; }

  /// Throws ConfigConflict / SlicePlanOverflow on inconsistent shapes.
  void validate() const;
};

struct AffineLayer {
  Mat weights;  // out x in
  Vec offsets;  // out
};

/// Per-dimension standardization of the embedding followed by a learned affine map.
struct OutputNorm {
  Vec gain;
  Vec shift;
  Vec running_mean;
  Vec running_var;
};

inline constexpr double kNormVarianceEpsilon = 1e-5;
inline constexpr double kRunningMomentum = 0.1;

struct ModelParams {
  std::vector<AffineLayer> layers;
  OutputNorm norm;  // empty vectors when batch_norm_output is off
  HeadWeights heads;

  /// Visits every trainable array in a fixed order (running statistics excluded).
  void for_each_trainable(const std::function<void(std::span<double>)>& fn);
  void for_each_trainable(const std::function<void(std::span<const double>)>& fn) const;

  /// Same shapes, all zeros. Used as the gradient container.
  ModelParams zeros_like() const;

  std::size_t trainable_count() const;

  bool operator==(const ModelParams&) const;
};

enum class NormMode {
  Train,   // batch statistics
  Frozen,  // running statistics
};

/// Everything backward needs from one batched forward pass.
struct ForwardCache {
  NormMode mode = NormMode::Frozen;
  // activations[0] is the raw input; activations[l+1] is the output of layer l
  // after its nonlinearity (none on the last layer).
  std::vector<std::vector<Vec>> activations;
  std::vector<Vec> normalized;  // standardized pre-affine values, when norm is on
  Vec batch_mean;
  Vec batch_var;
};

/// Variance-scaled uniform initialization, unit-norm head columns. Deterministic per seed.
ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed);

/// Single-sample forward with frozen output statistics.
Vec forward(const ModelParams& params, const ModelConfig& cfg, std::span<const double> raw);

/// Batched forward; in Train mode the output normalization uses batch statistics.
std::vector<Vec> forward_batch(const ModelParams& params, const ModelConfig& cfg,
                               const std::vector<Vec>& raws, NormMode mode, ForwardCache* cache);

/// Backpropagates dL/d(embedding) for every sample into `grads` (accumulating).
void backward_batch(const ModelParams& params, const ModelConfig& cfg, const ForwardCache& cache,
                    const std::vector<Vec>& grad_embeddings, ModelParams& grads);

/// Folds the batch statistics of a Train-mode pass into the running estimates.
void update_running_stats(ModelParams& params, const ForwardCache& cache);

struct SplitEmbedding {
  Vec identity;
  std::vector<Vec> attributes;
};

/// Attribute slices are the leading M*Q coordinates, in order; the identity
/// slice is the remainder.
SplitEmbedding split_embedding(std::span<const double> embedding, const ModelConfig& cfg);

// Checkpoint container (see README for the layout).
void save_checkpoint(std::ostream& os, const ModelConfig& cfg, const ModelParams& params);
void load_checkpoint(std::istream& is, ModelConfig& cfg, ModelParams& params);
void save_checkpoint(const std::string& path, const ModelConfig& cfg, const ModelParams& params);
void load_checkpoint(const std::string& path, ModelConfig& cfg, ModelParams& params);

}  // namespace reid
