#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "reid/numerics.hpp"

namespace reid {

enum class Surrogate { Hinge, Softplus };
enum class Reduction { Sum, Mean };

/// Scalars shared by every loss term. `margin` is the additive angular
/// margin (radians) of the identity head; `triplet_margin` is the distance
/// margin of the metric term.
struct LossConfig {
  double scale = 30.0;
  double margin = 0.0;
  double triplet_margin = 0.3;
  double gamma = 0.0;
  double lambda = 0.0;
  Surrogate surrogate = Surrogate::Hinge;
  bool normalize_triplet_features = false;
  Reduction reduction = Reduction::Sum;
  // Attribute heads reuse scale/margin unless these are set.
  std::optional<double> attribute_scale;
  std::optional<double> attribute_margin;

  double attr_scale() const { return attribute_scale.value_or(scale); }
  double attr_margin() const { return attribute_margin.value_or(margin); }

  /// Throws ConfigConflict when a field is outside its domain.
  void validate() const;
};

struct PKShape {
  std::size_t identities = 0;  // P
  std::size_t per_identity = 0;  // K
};

struct BatchEmbeddings {
  std::vector<Vec> embeddings;
  std::vector<std::size_t> labels;
  // One 0/1 vector of length M per sample; empty when the batch has no attributes.
  std::vector<std::vector<std::uint8_t>> attributes;
  std::optional<PKShape> pk_shape;

  std::size_t size() const { return embeddings.size(); }
  std::size_t dim() const { return embeddings.empty() ? 0 : embeddings.front().size(); }
};

/// Classifier weights. Columns of every matrix are class prototypes and are
/// projected to unit norm inside the margin losses; the stored values are
/// left untouched. Attribute heads are Q x 2 with column 0 = "present" and
/// column 1 = "absent".
struct HeadWeights {
  Mat identity_head;
  std::vector<Mat> attribute_heads;
  Vec bias;

  /// Zero-filled weights of the same shapes.
  HeadWeights zeros_like() const;
};

/// Layout of the embedding: M attribute slices of width Q occupy the leading
/// coordinates, the identity slice f_id takes the rest.
struct SlicePlan {
  std::size_t attributes = 0;  // M
  std::size_t width = 0;       // Q

  std::size_t attribute_width() const { return attributes * width; }
  /// Throws SlicePlanOverflow when M*Q > dim.
  void validate(std::size_t dim) const;
};

/// Unweighted component values, kept for logging.
struct LossParts {
  double identity = 0.0;
  double metric = 0.0;
  double attribute = 0.0;
};

struct LossOutput {
  double value = 0.0;
  std::vector<Vec> grad_embeddings;
  HeadWeights grad_heads;
  LossParts parts;
  // Number of target logits where acos(cos) + m exceeded pi.
  std::size_t wrapped_margins = 0;
};

/// Plain softmax cross entropy on W^T x (+ b), mean over samples.
LossOutput softmax_ce(const BatchEmbeddings& batch, const HeadWeights& heads, bool with_bias);

/// Additive angular margin softmax on normalized features and weights.
LossOutput am_softmax(const BatchEmbeddings& batch, const HeadWeights& heads,
                      const LossConfig& cfg);

/// Per-attribute two-way margin softmax over the leading embedding slices,
/// summed over attributes and averaged over samples.
LossOutput attribute_am(const BatchEmbeddings& batch, const HeadWeights& heads,
                        const LossConfig& cfg, const SlicePlan& plan);

/// Sum (or mean) of surrogate(margin + D(a,p) - D(a,n)) over every valid triplet.
LossOutput triplet_all(const BatchEmbeddings& batch, const LossConfig& cfg);

/// Batch-hard triplet loss over a PK batch: hardest positive and hardest
/// negative per anchor, ties broken towards the lowest sample index.
LossOutput batch_hard(const BatchEmbeddings& batch, const LossConfig& cfg);

/// am_softmax + gamma * batch_hard.
LossOutput joint(const BatchEmbeddings& batch, const HeadWeights& heads, const LossConfig& cfg);

/// am_softmax(f_id) + lambda * attribute_am(f_attr) + gamma * batch_hard(f_id).
LossOutput full_joint(const BatchEmbeddings& batch, const HeadWeights& heads,
                      const LossConfig& cfg, const SlicePlan& plan);

/// Per-sample margin softmax value for a vector of cosines: logits are
/// s*cos_j for j != target and s*cos(acos(cos_t) + m) for the target.
double margin_logit_loss(std::span<const double> cosines, std::size_t target, double scale,
                         double margin);

/// Smallest distance from a non-differentiable point of the metric term:
/// hinge arguments near zero and near-ties in the hardest positive/negative
/// selection. Returns +inf when nothing is close (or softplus is used for
/// the hinge part).
double metric_kink_clearance(const BatchEmbeddings& batch, const LossConfig& cfg,
                             bool batch_hard_mining);

}  // namespace reid
