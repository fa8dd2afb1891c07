#include "reid/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "reid/errors.hpp"

namespace reid {

namespace {

struct MarginSoftmaxSum {
  double total = 0.0;
  std::vector<Vec> grad_x;
  Mat grad_w;
  std::size_t wrapped = 0;
};

struct TargetLogit {
  double value;       // cos(alpha + m)
  double derivative;  // d value / d cos
  bool wrapped;
};

// cos(alpha + m) = cos(alpha) cos(m) - sin(alpha) sin(m). The value uses the
// cosine clipped to [-1, 1]; the derivative, which has 1/sin(alpha) in it,
// uses the cosine pulled kCosineClamp inside the poles. At m = 0 this returns
// `cosine` exactly.
TargetLogit target_logit(double cosine, double margin) {
  if (margin == 0.0) return {cosine, 1.0, false};
  const double exact = std::clamp(cosine, -1.0, 1.0);
  const double c = std::clamp(cosine, -1.0 + kCosineClamp, 1.0 - kCosineClamp);
  const double cm = std::cos(margin);
  const double sm = std::sin(margin);
  TargetLogit out;
  out.value = cosine * cm - std::sqrt(1.0 - exact * exact) * sm;
  out.derivative = cm + sm * c / std::sqrt(1.0 - c * c);
  out.wrapped = std::acos(c) + margin > std::numbers::pi;
  return out;
}

// Sum over samples of the margin softmax loss for rows x_i against the
// columns of `weights`. Gradients go through both normalizations.
MarginSoftmaxSum margin_softmax_sum(const std::vector<Vec>& xs, const Mat& weights,
                                    std::span<const std::size_t> targets, double scale,
                                    double margin) {
  const std::size_t classes = weights.cols();
  const std::size_t dim = weights.rows();
  std::vector<Vec> unit_w(classes);
  Vec w_norm(classes);
  for (std::size_t j = 0; j < classes; ++j) {
    auto n = l2_normalize(weights.column(j));
    unit_w[j] = std::move(n.unit);
    w_norm[j] = n.norm;
  }

  MarginSoftmaxSum out;
  out.grad_x.assign(xs.size(), Vec(dim, 0.0));
  out.grad_w = Mat(dim, classes);
  Vec cosines(classes);
  Vec logits(classes);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (xs[i].size() != dim) throw Error(ErrorKind::DimMismatch, "embedding vs head rows");
    const auto [x_unit, x_norm] = l2_normalize(xs[i]);
    const std::size_t y = targets[i];
    for (std::size_t j = 0; j < classes; ++j) {
      cosines[j] = dot(x_unit, unit_w[j]);
      logits[j] = scale * cosines[j];
    }
    const TargetLogit t = target_logit(cosines[y], margin);
    out.wrapped += t.wrapped ? 1 : 0;
    logits[y] = scale * t.value;

    const double lse = log_sum_exp(logits);
    out.total += lse - logits[y];

    Vec& gx = out.grad_x[i];
    for (std::size_t j = 0; j < classes; ++j) {
      const double p = std::exp(logits[j] - lse);
      // dL/dcos_j
      double g = scale * (p - (j == y ? 1.0 : 0.0));
      if (j == y) g *= t.derivative;
      if (g == 0.0) continue;
      const double c = cosines[j];
      for (std::size_t r = 0; r < dim; ++r) {
        gx[r] += g * (unit_w[j][r] - c * x_unit[r]) / x_norm;
        out.grad_w(r, j) += g * (x_unit[r] - c * unit_w[j][r]) / w_norm[j];
      }
    }
  }
  return out;
}

void check_labels(const BatchEmbeddings& batch, std::size_t classes) {
  if (batch.labels.size() != batch.size()) {
    throw Error(ErrorKind::DimMismatch, "labels and embeddings differ in count");
  }
  for (std::size_t y : batch.labels) {
    if (y >= classes) {
      throw Error(ErrorKind::InvalidLabel,
                  "label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
    }
  }
}

void check_nonempty(const BatchEmbeddings& batch) {
  if (batch.size() == 0) throw Error(ErrorKind::EmptyInput, "empty batch");
}

void scale_all(std::vector<Vec>& vs, double f) {
  for (auto& v : vs)
    for (double& x : v) x *= f;
}

void scale_mat(Mat& m, double f) {
  for (double& x : m.data()) x *= f;
}

void add_heads(HeadWeights& acc, const HeadWeights& g, double weight) {
  if (g.identity_head.size() == acc.identity_head.size()) {
    axpy(weight, g.identity_head.data(), acc.identity_head.data());
  }
  for (std::size_t k = 0; k < acc.attribute_heads.size() && k < g.attribute_heads.size(); ++k) {
    axpy(weight, g.attribute_heads[k].data(), acc.attribute_heads[k].data());
  }
  if (g.bias.size() == acc.bias.size()) axpy(weight, g.bias, acc.bias);
}

// Points used by the metric term: raw embeddings, or their unit projections
// for the normalized-feature variant.
struct MetricPoints {
  std::vector<Vec> points;
  Vec norms;
  bool normalized = false;
};

MetricPoints metric_points(const BatchEmbeddings& batch, bool normalize) {
  MetricPoints mp;
  mp.normalized = normalize;
  mp.points.reserve(batch.size());
  for (const auto& e : batch.embeddings) {
    if (e.size() != batch.dim()) throw Error(ErrorKind::DimMismatch, "ragged batch");
    if (normalize) {
      auto n = l2_normalize(e);
      mp.points.push_back(std::move(n.unit));
      mp.norms.push_back(n.norm);
    } else {
      mp.points.push_back(e);
    }
  }
  return mp;
}

// Gradient with respect to the points -> gradient with respect to the raw embeddings.
std::vector<Vec> pull_back(const MetricPoints& mp, std::vector<Vec> grad_points) {
  if (!mp.normalized) return grad_points;
  for (std::size_t i = 0; i < grad_points.size(); ++i) {
    Vec& g = grad_points[i];
    const Vec& u = mp.points[i];
    const double radial = dot(g, u);
    for (std::size_t r = 0; r < g.size(); ++r) g[r] = (g[r] - radial * u[r]) / mp.norms[i];
  }
  return grad_points;
}

std::vector<Vec> distance_matrix(const std::vector<Vec>& pts) {
  const std::size_t n = pts.size();
  std::vector<Vec> d(n, Vec(n, 0.0));
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = a + 1; b < n; ++b) d[a][b] = d[b][a] = euclidean_distance(pts[a], pts[b]);
  return d;
}

// Accumulates coeff * dD(a,b)/d{a,b}. D has no gradient at a == b; zero is used there.
void add_distance_grad(const std::vector<Vec>& pts, const std::vector<Vec>& dist, std::size_t a,
                       std::size_t b, double coeff, std::vector<Vec>& grad) {
  const double d = dist[a][b];
  if (d == 0.0 || coeff == 0.0) return;
  for (std::size_t r = 0; r < pts[a].size(); ++r) {
    const double g = coeff * (pts[a][r] - pts[b][r]) / d;
    grad[a][r] += g;
    grad[b][r] -= g;
  }
}

struct SurrogateValue {
  double value;
  double slope;
};

SurrogateValue apply_surrogate(Surrogate s, double arg) {
  if (s == Surrogate::Softplus) return {softplus(arg), sigmoid(arg)};
  if (std::isnan(arg)) return {arg, arg};
  // Subgradient at exactly zero is 0.
  return arg > 0.0 ? SurrogateValue{arg, 1.0} : SurrogateValue{0.0, 0.0};
}

void validate_pk(const BatchEmbeddings& batch) {
  if (!batch.pk_shape) throw Error(ErrorKind::BadPKShape, "batch has no PK shape");
  const auto [p, k] = *batch.pk_shape;
  if (p < 2 || k < 2) throw Error(ErrorKind::BadPKShape, "batch hard needs P >= 2 and K >= 2");
  if (batch.size() != p * k || batch.labels.size() != p * k) {
    throw Error(ErrorKind::BadPKShape, "batch size is not P*K");
  }
  std::vector<std::size_t> seen;
  std::vector<std::size_t> counts;
  for (std::size_t y : batch.labels) {
    auto it = std::find(seen.begin(), seen.end(), y);
    if (it == seen.end()) {
      seen.push_back(y);
      counts.push_back(1);
    } else {
      ++counts[static_cast<std::size_t>(it - seen.begin())];
    }
  }
  if (seen.size() != p) throw Error(ErrorKind::BadPKShape, "batch does not hold P identities");
  for (std::size_t c : counts) {
    if (c != k) throw Error(ErrorKind::BadPKShape, "identity does not appear exactly K times");
  }
}

struct HardPair {
  std::size_t positive;
  std::size_t negative;
};

HardPair hardest(const std::vector<Vec>& dist, std::span<const std::size_t> labels,
                 std::size_t a) {
  const std::size_t n = labels.size();
  HardPair hp{n, n};
  double far = -1.0;
  double near = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < n; ++j) {
    if (j == a) continue;
    if (labels[j] == labels[a]) {
      if (dist[a][j] > far) {
        far = dist[a][j];
        hp.positive = j;
      }
    } else if (dist[a][j] < near) {
      near = dist[a][j];
      hp.negative = j;
    }
  }
  return hp;
}

BatchEmbeddings column_slice(const BatchEmbeddings& batch, std::size_t begin, std::size_t end) {
  BatchEmbeddings out;
  out.labels = batch.labels;
  out.pk_shape = batch.pk_shape;
  out.embeddings.reserve(batch.size());
  for (const auto& e : batch.embeddings) {
    out.embeddings.emplace_back(e.begin() + static_cast<std::ptrdiff_t>(begin),
                                e.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

void scatter_slice(std::vector<Vec>& full, const std::vector<Vec>& part, std::size_t begin,
                   double weight) {
  for (std::size_t i = 0; i < full.size(); ++i)
    for (std::size_t r = 0; r < part[i].size(); ++r) full[i][begin + r] += weight * part[i][r];
}

}  // namespace

void LossConfig::validate() const {
  if (!(scale > 0)) throw Error(ErrorKind::ConfigConflict, "scale must be positive");
  if (!(margin >= 0 && margin < std::numbers::pi / 2)) {
    throw Error(ErrorKind::ConfigConflict, "margin must lie in [0, pi/2)");
  }
  if (!(triplet_margin >= 0)) throw Error(ErrorKind::ConfigConflict, "triplet margin must be >= 0");
  if (!(gamma >= 0)) throw Error(ErrorKind::ConfigConflict, "gamma must be >= 0");
  if (!(lambda >= 0)) throw Error(ErrorKind::ConfigConflict, "lambda must be >= 0");
  if (!(attr_scale() > 0)) throw Error(ErrorKind::ConfigConflict, "attribute scale must be positive");
  if (!(attr_margin() >= 0 && attr_margin() < std::numbers::pi / 2)) {
    throw Error(ErrorKind::ConfigConflict, "attribute margin must lie in [0, pi/2)");
  }
}

HeadWeights HeadWeights::zeros_like() const {
  HeadWeights z;
  z.identity_head = Mat(identity_head.rows(), identity_head.cols());
  for (const auto& h : attribute_heads) z.attribute_heads.emplace_back(h.rows(), h.cols());
  z.bias.assign(bias.size(), 0.0);
  return z;
}

void SlicePlan::validate(std::size_t dim) const {
  if (attribute_width() > dim) {
    throw Error(ErrorKind::SlicePlanOverflow,
                std::to_string(attributes) + " x " + std::to_string(width) +
                    " attribute slices exceed embedding width " + std::to_string(dim));
  }
}

double margin_logit_loss(std::span<const double> cosines, std::size_t target, double scale,
                         double margin) {
  if (target >= cosines.size()) throw Error(ErrorKind::InvalidLabel, "target outside logits");
  Vec logits(cosines.size());
  for (std::size_t j = 0; j < cosines.size(); ++j) logits[j] = scale * cosines[j];
  logits[target] = scale * target_logit(cosines[target], margin).value;
  return log_sum_exp(logits) - logits[target];
}

LossOutput softmax_ce(const BatchEmbeddings& batch, const HeadWeights& heads, bool with_bias) {
  check_nonempty(batch);
  const Mat& w = heads.identity_head;
  const std::size_t classes = w.cols();
  if (classes < 2) throw Error(ErrorKind::DimMismatch, "softmax needs at least two classes");
  check_labels(batch, classes);
  if (with_bias && heads.bias.size() != classes) {
    throw Error(ErrorKind::DimMismatch, "bias length differs from class count");
  }

  LossOutput out;
  out.grad_heads = heads.zeros_like();
  out.grad_embeddings.assign(batch.size(), Vec(w.rows(), 0.0));
  Vec logits(classes);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Vec& x = batch.embeddings[i];
    if (x.size() != w.rows()) throw Error(ErrorKind::DimMismatch, "embedding vs head rows");
    for (std::size_t j = 0; j < classes; ++j) {
      double z = with_bias ? heads.bias[j] : 0.0;
      for (std::size_t r = 0; r < x.size(); ++r) z += w(r, j) * x[r];
      logits[j] = z;
    }
    const std::size_t y = batch.labels[i];
    const double lse = log_sum_exp(logits);
    out.value += lse - logits[y];
    for (std::size_t j = 0; j < classes; ++j) {
      const double g = std::exp(logits[j] - lse) - (j == y ? 1.0 : 0.0);
      for (std::size_t r = 0; r < x.size(); ++r) {
        out.grad_embeddings[i][r] += g * w(r, j);
        out.grad_heads.identity_head(r, j) += g * x[r];
      }
      if (with_bias) out.grad_heads.bias[j] += g;
    }
  }
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  out.value *= inv_n;
  scale_all(out.grad_embeddings, inv_n);
  scale_mat(out.grad_heads.identity_head, inv_n);
  for (double& b : out.grad_heads.bias) b *= inv_n;
  out.parts.identity = out.value;
  return out;
}

LossOutput am_softmax(const BatchEmbeddings& batch, const HeadWeights& heads,
                      const LossConfig& cfg) {
  check_nonempty(batch);
  const Mat& w = heads.identity_head;
  if (w.cols() < 2) throw Error(ErrorKind::DimMismatch, "softmax needs at least two classes");
  check_labels(batch, w.cols());

  auto sum = margin_softmax_sum(batch.embeddings, w, batch.labels, cfg.scale, cfg.margin);
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  LossOutput out;
  out.value = sum.total * inv_n;
  out.grad_embeddings = std::move(sum.grad_x);
  scale_all(out.grad_embeddings, inv_n);
  out.grad_heads = heads.zeros_like();
  out.grad_heads.identity_head = std::move(sum.grad_w);
  scale_mat(out.grad_heads.identity_head, inv_n);
  out.parts.identity = out.value;
  out.wrapped_margins = sum.wrapped;
  return out;
}

LossOutput attribute_am(const BatchEmbeddings& batch, const HeadWeights& heads,
                        const LossConfig& cfg, const SlicePlan& plan) {
  check_nonempty(batch);
  const std::size_t m = plan.attributes;
  const std::size_t q = plan.width;
  if (m == 0 || batch.attributes.size() != batch.size()) {
    throw Error(ErrorKind::MissingAttributes, "batch carries no attribute labels");
  }
  for (const auto& a : batch.attributes) {
    if (a.size() != m) throw Error(ErrorKind::MissingAttributes, "attribute vector length != M");
  }
  plan.validate(batch.dim());
  if (heads.attribute_heads.size() != m) {
    throw Error(ErrorKind::DimMismatch, "attribute head count != M");
  }

  LossOutput out;
  out.grad_heads = heads.zeros_like();
  out.grad_embeddings.assign(batch.size(), Vec(batch.dim(), 0.0));
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  std::vector<std::size_t> targets(batch.size());
  for (std::size_t k = 0; k < m; ++k) {
    const Mat& head = heads.attribute_heads[k];
    if (head.rows() != q || head.cols() != 2) {
      throw Error(ErrorKind::DimMismatch, "attribute head must be Q x 2");
    }
    const BatchEmbeddings slice = column_slice(batch, k * q, (k + 1) * q);
    for (std::size_t i = 0; i < batch.size(); ++i) targets[i] = batch.attributes[i][k] ? 0 : 1;
    auto sum = margin_softmax_sum(slice.embeddings, head, targets, cfg.attr_scale(),
                                  cfg.attr_margin());
    out.value += sum.total;
    out.wrapped_margins += sum.wrapped;
    scatter_slice(out.grad_embeddings, sum.grad_x, k * q, inv_n);
    axpy(inv_n, sum.grad_w.data(), out.grad_heads.attribute_heads[k].data());
  }
  out.value *= inv_n;
  out.parts.attribute = out.value;
  return out;
}

LossOutput triplet_all(const BatchEmbeddings& batch, const LossConfig& cfg) {
  check_nonempty(batch);
  if (batch.labels.size() != batch.size()) {
    throw Error(ErrorKind::DimMismatch, "labels and embeddings differ in count");
  }
  const MetricPoints mp = metric_points(batch, cfg.normalize_triplet_features);
  const auto dist = distance_matrix(mp.points);
  const std::size_t n = batch.size();
  const auto& y = batch.labels;

  LossOutput out;
  std::vector<Vec> grad(n, Vec(batch.dim(), 0.0));
  std::size_t triplets = 0;
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t p = 0; p < n; ++p) {
      if (p == a || y[p] != y[a]) continue;
      for (std::size_t q = 0; q < n; ++q) {
        if (y[q] == y[a]) continue;
        ++triplets;
        const auto s = apply_surrogate(cfg.surrogate, cfg.triplet_margin + dist[a][p] - dist[a][q]);
        out.value += s.value;
        add_distance_grad(mp.points, dist, a, p, s.slope, grad);
        add_distance_grad(mp.points, dist, a, q, -s.slope, grad);
      }
    }
  }
  if (triplets == 0) throw Error(ErrorKind::NoValidTriplet, "batch holds no valid triplet");
  if (cfg.reduction == Reduction::Mean) {
    const double inv = 1.0 / static_cast<double>(triplets);
    out.value *= inv;
    scale_all(grad, inv);
  }
  out.grad_embeddings = pull_back(mp, std::move(grad));
  out.parts.metric = out.value;
  return out;
}

LossOutput batch_hard(const BatchEmbeddings& batch, const LossConfig& cfg) {
  validate_pk(batch);
  const MetricPoints mp = metric_points(batch, cfg.normalize_triplet_features);
  const auto dist = distance_matrix(mp.points);
  const std::size_t n = batch.size();

  LossOutput out;
  std::vector<Vec> grad(n, Vec(batch.dim(), 0.0));
  for (std::size_t a = 0; a < n; ++a) {
    const HardPair hp = hardest(dist, batch.labels, a);
    const auto s = apply_surrogate(
        cfg.surrogate, cfg.triplet_margin + dist[a][hp.positive] - dist[a][hp.negative]);
    out.value += s.value;
    add_distance_grad(mp.points, dist, a, hp.positive, s.slope, grad);
    add_distance_grad(mp.points, dist, a, hp.negative, -s.slope, grad);
  }
  if (cfg.reduction == Reduction::Mean) {
    const double inv = 1.0 / static_cast<double>(n);
    out.value *= inv;
    scale_all(grad, inv);
  }
  out.grad_embeddings = pull_back(mp, std::move(grad));
  out.parts.metric = out.value;
  return out;
}

LossOutput joint(const BatchEmbeddings& batch, const HeadWeights& heads, const LossConfig& cfg) {
  LossOutput out = am_softmax(batch, heads, cfg);
  const LossOutput bh = batch_hard(batch, cfg);
  out.value += cfg.gamma * bh.value;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    axpy(cfg.gamma, bh.grad_embeddings[i], out.grad_embeddings[i]);
  }
  out.parts.metric = bh.value;
  return out;
}

LossOutput full_joint(const BatchEmbeddings& batch, const HeadWeights& heads,
                      const LossConfig& cfg, const SlicePlan& plan) {
  check_nonempty(batch);
  plan.validate(batch.dim());
  const std::size_t id_begin = plan.attribute_width();
  if (id_begin >= batch.dim()) {
    throw Error(ErrorKind::SlicePlanOverflow, "identity slice would be empty");
  }
  const BatchEmbeddings id_batch = column_slice(batch, id_begin, batch.dim());
  const LossOutput id_part = joint(id_batch, heads, cfg);
  const LossOutput attr_part = attribute_am(batch, heads, cfg, plan);

  LossOutput out;
  out.value = id_part.value + cfg.lambda * attr_part.value;
  out.parts = {id_part.parts.identity, id_part.parts.metric, attr_part.value};
  out.wrapped_margins = id_part.wrapped_margins + attr_part.wrapped_margins;
  out.grad_embeddings.assign(batch.size(), Vec(batch.dim(), 0.0));
  scatter_slice(out.grad_embeddings, id_part.grad_embeddings, id_begin, 1.0);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    axpy(cfg.lambda, attr_part.grad_embeddings[i], out.grad_embeddings[i]);
  }
  out.grad_heads = heads.zeros_like();
  add_heads(out.grad_heads, id_part.grad_heads, 1.0);
  add_heads(out.grad_heads, attr_part.grad_heads, cfg.lambda);
  return out;
}

double metric_kink_clearance(const BatchEmbeddings& batch, const LossConfig& cfg,
                             bool batch_hard_mining) {
  const MetricPoints mp = metric_points(batch, cfg.normalize_triplet_features);
  const auto dist = distance_matrix(mp.points);
  const auto& y = batch.labels;
  const std::size_t n = batch.size();
  const bool hinge = cfg.surrogate == Surrogate::Hinge;
  double clearance = std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < n; ++a) {
    if (batch_hard_mining) {
      const HardPair hp = hardest(dist, y, a);
      if (hinge) {
        clearance = std::min(clearance, std::abs(cfg.triplet_margin + dist[a][hp.positive] -
                                                 dist[a][hp.negative]));
      }
      for (std::size_t j = 0; j < n; ++j) {
        if (j == a) continue;
        if (y[j] == y[a] && j != hp.positive) {
          clearance = std::min(clearance, dist[a][hp.positive] - dist[a][j]);
        } else if (y[j] != y[a] && j != hp.negative) {
          clearance = std::min(clearance, dist[a][j] - dist[a][hp.negative]);
        }
      }
    } else if (hinge) {
      for (std::size_t p = 0; p < n; ++p) {
        if (p == a || y[p] != y[a]) continue;
        for (std::size_t q = 0; q < n; ++q) {
          if (y[q] == y[a]) continue;
          clearance =
              std::min(clearance, std::abs(cfg.triplet_margin + dist[a][p] - dist[a][q]));
        }
      }
    }
  }
  return clearance;
}

}  // namespace reid
