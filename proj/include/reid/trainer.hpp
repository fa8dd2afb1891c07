#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string_view>
#include <utility>
#include <vector>

#include "reid/data.hpp"
#include "reid/eval.hpp"
#include "reid/losses.hpp"
#include "reid/model.hpp"
#include "reid/sampler.hpp"

namespace reid {

enum class LossVariant { AM0, AM, BH, AM0BH1, AMBH, AM0BH, AM0BHsp, AM0BH_Attr };

std::string_view to_string(LossVariant v);
LossVariant parse_variant(std::string_view name);
/// The seven loss combinations of the ablation table, in table order.
const std::vector<LossVariant>& ablation_variants();

bool uses_softmax(LossVariant v);
bool uses_metric(LossVariant v);
bool uses_attributes(LossVariant v);

struct TrainConfig {
  std::size_t epochs = 150;
  std::size_t warmup_epochs = 20;
  double start_lr = 1e-5;
  double base_lr = 1e-3;
  // (epoch, lr) pairs: from that epoch on the learning rate is lr.
  std::vector<std::pair<std::size_t, double>> decay = {{90, 1e-4}, {130, 1e-5}};
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  LossVariant variant = LossVariant::AM0BH;
  double am_margin = 0.5;  // margin of the AM and AMBH variants
  std::uint64_t seed = 0;

  void validate() const;
};

/// Linear warmup from start_lr to base_lr over [0, warmup_epochs), then
/// base_lr with step decays. Throws OutOfRange outside [0, epochs).
double lr_at(std::size_t epoch, const TrainConfig& cfg);

struct AdamState {
  std::vector<Vec> first;
  std::vector<Vec> second;
  std::uint64_t steps = 0;
};

AdamState make_adam_state(const ModelParams& params);

/// One bias-corrected Adam update of every trainable array. Throws ShapeMismatch.
void adam_step(ModelParams& params, AdamState& state, const ModelParams& grads, double lr,
               const TrainConfig& cfg);

/// Loss settings actually used by a variant (margin, gamma, surrogate,
/// feature normalization) on top of the shared base settings.
LossConfig variant_loss_config(LossVariant v, const LossConfig& base, double am_margin);

struct EpochLog {
  std::size_t epoch = 0;
  std::size_t step = 0;  // optimizer steps taken so far
  double lr = 0.0;
  double loss_total = 0.0;
  double loss_am = 0.0;
  double loss_bh = 0.0;
  double loss_attr = 0.0;
  std::size_t wrapped_margins = 0;
};

struct TrainState {
  ModelParams params;
  AdamState adam;
  std::size_t epoch = 0;
  std::size_t step = 0;
  std::vector<EpochLog> history;
};

/// Fills classes and attribute count from the dataset and variant.
ModelConfig resolve_model_config(const Dataset& ds, ModelConfig model, LossVariant v);

struct TrainResult {
  ModelConfig model;
  ModelParams params;
  std::vector<EpochLog> log;
};

/// Runs epochs x plan_epoch batches. Throws ConfigConflict for inconsistent
/// configs and NonFiniteLoss when a step produces a non-finite value.
TrainResult train(const Dataset& ds, const ModelConfig& model, const TrainConfig& train_cfg,
                  const SamplerConfig& sampler, const LossConfig& loss,
                  const std::function<void(const EpochLog&, const ModelParams&)>& on_epoch = {});

void write_metrics_header(std::ostream& os);
void write_metrics_row(std::ostream& os, const EpochLog& row);

/// Frozen-statistics embeddings restricted to the identity slice, for retrieval.
std::vector<EvalItem> retrieval_items(const Dataset& ds, Split split, const ModelParams& params,
                                      const ModelConfig& cfg);
/// Same items built straight from raw features (the untrained baseline).
std::vector<EvalItem> raw_items(const Dataset& ds, Split split);

EvalReport evaluate_model(const Dataset& ds, const ModelParams& params, const ModelConfig& cfg);

/// Fraction of (probe + gallery sample, attribute) pairs where the attribute
/// head's nearer column matches the label.
double attribute_accuracy(const Dataset& ds, const ModelParams& params, const ModelConfig& cfg);

}  // namespace reid
