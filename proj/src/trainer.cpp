#include "reid/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "reid/errors.hpp"
#include "reid/rng.hpp"

namespace reid {

namespace {

struct VariantInfo {
  LossVariant variant;
  std::string_view name;
};

constexpr VariantInfo kVariants[] = {
    {LossVariant::AM0, "AM0"},       {LossVariant::AM, "AM"},
    {LossVariant::BH, "BH"},         {LossVariant::AM0BH1, "AM0BH1"},
    {LossVariant::AMBH, "AMBH"},     {LossVariant::AM0BH, "AM0BH"},
    {LossVariant::AM0BHsp, "AM0BHsp"}, {LossVariant::AM0BH_Attr, "AM0BH_Attr"},
};

bool all_finite(const LossOutput& out) {
  if (!std::isfinite(out.value)) return false;
  for (const auto& g : out.grad_embeddings)
    for (double x : g)
      if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace

std::string_view to_string(LossVariant v) {
  for (const auto& info : kVariants)
    if (info.variant == v) return info.name;
  return "?";
}

LossVariant parse_variant(std::string_view name) {
  for (const auto& info : kVariants)
    if (info.name == name) return info.variant;
  throw Error(ErrorKind::ParseError, "unknown loss variant '" + std::string(name) + "'");
}

const std::vector<LossVariant>& ablation_variants() {
  static const std::vector<LossVariant> v = {LossVariant::AM0,    LossVariant::AM,
                                             LossVariant::BH,     LossVariant::AM0BH1,
                                             LossVariant::AMBH,   LossVariant::AM0BH,
                                             LossVariant::AM0BHsp};
  return v;
}

bool uses_softmax(LossVariant v) { return v != LossVariant::BH; }
bool uses_metric(LossVariant v) { return v != LossVariant::AM0 && v != LossVariant::AM; }
bool uses_attributes(LossVariant v) { return v == LossVariant::AM0BH_Attr; }

void TrainConfig::validate() const {
  auto bad = [](const std::string& what) { throw Error(ErrorKind::ConfigConflict, what); };
  if (epochs == 0) bad("epochs must be positive");
  if (warmup_epochs >= epochs) bad("warmup_epochs must be below epochs");
  if (!(start_lr > 0) || !(base_lr > 0)) bad("learning rates must be positive");
  double previous = base_lr;
  std::size_t previous_epoch = warmup_epochs;
  for (const auto& [epoch, lr] : decay) {
    if (epoch < previous_epoch) bad("decay epochs must be increasing and not inside warmup");
    if (!(lr > 0) || lr > previous) bad("decayed learning rates must be positive and non-increasing");
    previous = lr;
    previous_epoch = epoch + 1;
  }
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) bad("Adam betas must lie in [0, 1)");
  if (!(adam_epsilon > 0)) bad("Adam epsilon must be positive");
}

double lr_at(std::size_t epoch, const TrainConfig& cfg) {
  if (epoch >= cfg.epochs) {
    throw Error(ErrorKind::OutOfRange, "epoch " + std::to_string(epoch) + " outside [0, " +
                                           std::to_string(cfg.epochs) + ")");
  }
  if (epoch < cfg.warmup_epochs) {
    const double t = static_cast<double>(epoch) / static_cast<double>(cfg.warmup_epochs);
    return cfg.start_lr + t * (cfg.base_lr - cfg.start_lr);
  }
  double lr = cfg.base_lr;
  for (const auto& [at, value] : cfg.decay) {
    if (epoch >= at) lr = value;
  }
  return lr;
}

AdamState make_adam_state(const ModelParams& params) {
  AdamState s;
  params.for_each_trainable([&](std::span<const double> t) {
    s.first.emplace_back(t.size(), 0.0);
    s.second.emplace_back(t.size(), 0.0);
  });
  return s;
}

void adam_step(ModelParams& params, AdamState& state, const ModelParams& grads, double lr,
               const TrainConfig& cfg) {
  std::vector<std::span<const double>> g;
  grads.for_each_trainable([&](std::span<const double> t) { g.push_back(t); });
  std::size_t idx = 0;
  bool shapes_ok = g.size() == state.first.size();
  params.for_each_trainable([&](std::span<double> t) {
    if (idx >= g.size() || g[idx].size() != t.size() || state.first[idx].size() != t.size()) {
      shapes_ok = false;
    }
    ++idx;
  });
  if (!shapes_ok || idx != g.size()) throw Error(ErrorKind::ShapeMismatch, "gradient shapes differ from params");

  ++state.steps;
  const double t = static_cast<double>(state.steps);
  const double correction1 = 1.0 - std::pow(cfg.beta1, t);
  const double correction2 = 1.0 - std::pow(cfg.beta2, t);
  idx = 0;
  params.for_each_trainable([&](std::span<double> p) {
    Vec& m = state.first[idx];
    Vec& v = state.second[idx];
    const auto grad = g[idx];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      p[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg.adam_epsilon);
    }
    ++idx;
  });
}

LossConfig variant_loss_config(LossVariant v, const LossConfig& base, double am_margin) {
  LossConfig c = base;
  c.margin = (v == LossVariant::AM || v == LossVariant::AMBH) ? am_margin : 0.0;
  c.normalize_triplet_features = v == LossVariant::AM0BH1;
  c.surrogate = v == LossVariant::AM0BHsp ? Surrogate::Softplus : Surrogate::Hinge;
  if (!uses_metric(v)) c.gamma = 0.0;
  if (!uses_attributes(v)) c.lambda = 0.0;
  return c;
}

ModelConfig resolve_model_config(const Dataset& ds, ModelConfig model, LossVariant v) {
  model.input_dim = ds.input_dim;
  const TrainView view = train_view(ds);
  model.classes = view.index.size();
  if (uses_attributes(v)) {
    if (ds.attribute_count == 0) {
      throw Error(ErrorKind::ConfigConflict, std::string(to_string(v)) + " needs attribute labels");
    }
    model.attributes = ds.attribute_count;
  } else {
    model.attributes = 0;
  }
  model.validate();
  return model;
}

TrainResult train(const Dataset& ds, const ModelConfig& model_in, const TrainConfig& train_cfg,
                  const SamplerConfig& sampler, const LossConfig& loss_in,
                  const std::function<void(const EpochLog&, const ModelParams&)>& on_epoch) {
  train_cfg.validate();
  sampler.validate();
  loss_in.validate();
  const ModelConfig model = resolve_model_config(ds, model_in, train_cfg.variant);
  const LossConfig loss = variant_loss_config(train_cfg.variant, loss_in, train_cfg.am_margin);
  loss.validate();
  const TrainView view = train_view(ds);
  if (view.index.size() < 2) throw Error(ErrorKind::ConfigConflict, "need at least 2 training identities");
  if (uses_softmax(train_cfg.variant) && model.classes < 2) {
    throw Error(ErrorKind::ConfigConflict, "softmax needs at least 2 classes");
  }

  TrainState state;
  state.params = init_params(model, mix_seed(train_cfg.seed, 10));
  state.adam = make_adam_state(state.params);
  const SlicePlan plan = model.slice_plan();

  for (std::size_t epoch = 0; epoch < train_cfg.epochs; ++epoch) {
    const double lr = lr_at(epoch, train_cfg);
    const EpochPlan epoch_plan = plan_epoch(view.index, sampler, epoch);
    EpochLog row;
    row.epoch = epoch;
    row.lr = lr;
    for (const auto& indices : epoch_plan.batches) {
      std::vector<Vec> raws;
      BatchEmbeddings batch;
      raws.reserve(indices.size());
      for (std::size_t idx : indices) {
        raws.push_back(ds.samples[idx].features);
        batch.labels.push_back(view.dense_label[idx]);
        if (model.attributes > 0) batch.attributes.push_back(ds.samples[idx].attributes);
      }
      batch.pk_shape = PKShape{sampler.identities_per_batch, sampler.samples_per_identity};

      ForwardCache cache;
      batch.embeddings = forward_batch(state.params, model, raws, NormMode::Train, &cache);
      for (const Vec& e : batch.embeddings) {
        for (double x : e) {
          if (!std::isfinite(x)) {
            throw Error(ErrorKind::NonFiniteLoss, "epoch " + std::to_string(epoch) + " step " +
                                                      std::to_string(state.step) +
                                                      ": non-finite embedding, lr " + std::to_string(lr));
          }
        }
      }

      LossOutput out;
      switch (train_cfg.variant) {
        case LossVariant::AM0:
        case LossVariant::AM:
          out = am_softmax(batch, state.params.heads, loss);
          break;
        case LossVariant::BH:
          out = batch_hard(batch, loss);
          break;
        case LossVariant::AM0BH1:
        case LossVariant::AMBH:
        case LossVariant::AM0BH:
        case LossVariant::AM0BHsp:
          out = joint(batch, state.params.heads, loss);
          break;
        case LossVariant::AM0BH_Attr:
          out = full_joint(batch, state.params.heads, loss, plan);
          break;
      }
      if (!all_finite(out)) {
        std::ostringstream msg;
        msg << "epoch " << epoch << " step " << state.step << " (" << to_string(train_cfg.variant)
            << "): loss " << out.value << ", identity " << out.parts.identity << ", metric "
            << out.parts.metric << ", attribute " << out.parts.attribute << ", lr " << lr;
        throw Error(ErrorKind::NonFiniteLoss, msg.str());
      }

      ModelParams grads = state.params.zeros_like();
      backward_batch(state.params, model, cache, out.grad_embeddings, grads);
      if (out.grad_heads.identity_head.size() == grads.heads.identity_head.size()) {
        grads.heads.identity_head = out.grad_heads.identity_head;
      }
      if (out.grad_heads.attribute_heads.size() == grads.heads.attribute_heads.size()) {
        grads.heads.attribute_heads = out.grad_heads.attribute_heads;
      }
      adam_step(state.params, state.adam, grads, lr, train_cfg);
      update_running_stats(state.params, cache);
      ++state.step;

      row.loss_total += out.value;
      row.loss_am += out.parts.identity;
      row.loss_bh += out.parts.metric;
      row.loss_attr += out.parts.attribute;
      row.wrapped_margins += out.wrapped_margins;
    }
    const double inv = 1.0 / static_cast<double>(epoch_plan.batches.size());
    row.loss_total *= inv;
    row.loss_am *= inv;
    row.loss_bh *= inv;
    row.loss_attr *= inv;
    row.step = state.step;
    state.epoch = epoch + 1;
    state.history.push_back(row);
    if (on_epoch) on_epoch(row, state.params);
  }
  return {model, std::move(state.params), std::move(state.history)};
}

void write_metrics_header(std::ostream& os) {
  os << "epoch,step,lr,loss_total,loss_am,loss_bh,loss_attr\n";
}

void write_metrics_row(std::ostream& os, const EpochLog& row) {
  const auto old = os.precision(17);
  os << row.epoch << ',' << row.step << ',' << row.lr << ',' << row.loss_total << ','
     << row.loss_am << ',' << row.loss_bh << ',' << row.loss_attr << '\n';
  os.precision(old);
}

std::vector<EvalItem> retrieval_items(const Dataset& ds, Split split, const ModelParams& params,
                                      const ModelConfig& cfg) {
  std::vector<Vec> raws;
  std::vector<const Sample*> picked;
  for (const Sample& s : ds.samples) {
    if (s.split != split) continue;
    raws.push_back(s.features);
    picked.push_back(&s);
  }
  std::vector<EvalItem> items;
  if (raws.empty()) return items;
  const auto embeddings = forward_batch(params, cfg, raws, NormMode::Frozen, nullptr);
  for (std::size_t i = 0; i < picked.size(); ++i) {
    const SplitEmbedding parts = split_embedding(embeddings[i], cfg);
    items.push_back(make_eval_item(parts.identity, picked[i]->identity, picked[i]->camera));
  }
  return items;
}

std::vector<EvalItem> raw_items(const Dataset& ds, Split split) {
  std::vector<EvalItem> items;
  for (const Sample& s : ds.samples) {
    if (s.split == split) items.push_back(make_eval_item(s.features, s.identity, s.camera));
  }
  return items;
}

EvalReport evaluate_model(const Dataset& ds, const ModelParams& params, const ModelConfig& cfg) {
  return evaluate(retrieval_items(ds, Split::Probe, params, cfg),
                  retrieval_items(ds, Split::Gallery, params, cfg));
}

double attribute_accuracy(const Dataset& ds, const ModelParams& params, const ModelConfig& cfg) {
  if (cfg.attributes == 0) throw Error(ErrorKind::MissingAttributes, "model has no attribute heads");
  std::vector<Vec> raws;
  std::vector<const Sample*> picked;
  for (const Sample& s : ds.samples) {
    if (s.split == Split::Train) continue;
    raws.push_back(s.features);
    picked.push_back(&s);
  }
  if (raws.empty()) throw Error(ErrorKind::EmptyInput, "no test samples");
  const auto embeddings = forward_batch(params, cfg, raws, NormMode::Frozen, nullptr);
  std::size_t correct = 0;
  std::size_t total = 0;
  for (std::size_t i = 0; i < picked.size(); ++i) {
    const SplitEmbedding parts = split_embedding(embeddings[i], cfg);
    for (std::size_t k = 0; k < cfg.attributes; ++k) {
      const Mat& head = params.heads.attribute_heads[k];
      const double present = cosine_similarity(parts.attributes[k], head.column(0));
      const double absent = cosine_similarity(parts.attributes[k], head.column(1));
      const bool predicted = present > absent;
      correct += predicted == (picked[i]->attributes[k] != 0) ? 1 : 0;
      ++total;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(total);
}

}  // namespace reid
