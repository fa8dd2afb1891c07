#include "reid/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <ostream>

#include "reid/losses.hpp"
#include "reid/numerics.hpp"
#include "reid/rng.hpp"

namespace reid {

namespace {

enum class Kind {
  SoftmaxCE,
  SoftmaxCEBias,
  AmSoftmax,
  AttributeAm,
  TripletHinge,
  TripletSoftplus,
  TripletNormalized,
  BatchHardHinge,
  BatchHardSoftplus,
  BatchHardNormalized,
  JointAM0BH,
  JointAMBH,
  JointAM0BH1,
  JointAM0BHsp,
  FullJoint,
};

struct Case {
  Kind kind;
  const char* name;
};

constexpr Case kCases[] = {
    {Kind::SoftmaxCE, "softmax_ce"},
    {Kind::SoftmaxCEBias, "softmax_ce_bias"},
    {Kind::AmSoftmax, "am_softmax"},
    {Kind::AttributeAm, "attribute_am"},
    {Kind::TripletHinge, "triplet_all_hinge"},
    {Kind::TripletSoftplus, "triplet_all_softplus"},
    {Kind::TripletNormalized, "triplet_all_normalized"},
    {Kind::BatchHardHinge, "batch_hard_hinge"},
    {Kind::BatchHardSoftplus, "batch_hard_softplus"},
    {Kind::BatchHardNormalized, "batch_hard_normalized"},
    {Kind::JointAM0BH, "joint_AM0BH"},
    {Kind::JointAMBH, "joint_AMBH"},
    {Kind::JointAM0BH1, "joint_AM0BH1"},
    {Kind::JointAM0BHsp, "joint_AM0BHsp"},
    {Kind::FullJoint, "full_joint"},
};

bool uses_heads(Kind k) {
  return k != Kind::TripletHinge && k != Kind::TripletSoftplus && k != Kind::TripletNormalized &&
         k != Kind::BatchHardHinge && k != Kind::BatchHardSoftplus && k != Kind::BatchHardNormalized;
}

bool uses_metric(Kind k) {
  return k != Kind::SoftmaxCE && k != Kind::SoftmaxCEBias && k != Kind::AmSoftmax &&
         k != Kind::AttributeAm;
}

bool mines_hardest(Kind k) {
  return k != Kind::TripletHinge && k != Kind::TripletSoftplus && k != Kind::TripletNormalized;
}

struct Problem {
  BatchEmbeddings batch;
  HeadWeights heads;
  LossConfig cfg;
  SlicePlan plan;
};

Mat random_mat(std::size_t rows, std::size_t cols, Rng& rng) {
  Mat m(rows, cols);
  for (double& x : m.data()) x = rng.normal();
  return m;
}

Problem draw(Kind kind, Rng& rng) {
  Problem pr;
  const std::size_t p = 2 + rng.below(3);
  const std::size_t k = 2 + rng.below(2);
  const bool attr = kind == Kind::AttributeAm || kind == Kind::FullJoint;
  pr.plan = attr ? SlicePlan{1 + rng.below(3), 2 + rng.below(2)} : SlicePlan{};
  const std::size_t id_dim = 2 + rng.below(5);
  const std::size_t dim = pr.plan.attribute_width() + id_dim;
  const std::size_t classes = p + rng.below(3);

  // P distinct labels drawn from [0, classes).
  std::vector<std::size_t> ids(classes);
  for (std::size_t i = 0; i < classes; ++i) ids[i] = i;
  rng.shuffle(ids.begin(), ids.end());
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < k; ++j) pr.batch.labels.push_back(ids[i]);
  pr.batch.pk_shape = PKShape{p, k};
  for (std::size_t i = 0; i < p * k; ++i) {
    Vec e(dim);
    for (double& x : e) x = rng.normal();
    pr.batch.embeddings.push_back(std::move(e));
    if (attr) {
      std::vector<std::uint8_t> a(pr.plan.attributes);
      for (auto& bit : a) bit = rng.below(2) ? 1 : 0;
      pr.batch.attributes.push_back(std::move(a));
    }
  }
  const bool on_id_slice = kind == Kind::FullJoint;
  pr.heads.identity_head = random_mat(on_id_slice ? id_dim : dim, classes, rng);
  for (std::size_t m = 0; m < pr.plan.attributes; ++m) {
    pr.heads.attribute_heads.push_back(random_mat(pr.plan.width, 2, rng));
  }
  pr.heads.bias.resize(classes);
  for (double& b : pr.heads.bias) b = kind == Kind::SoftmaxCEBias ? rng.normal() : 0.0;

  LossConfig& c = pr.cfg;
  c.scale = rng.uniform(2.0, 30.0);
  c.margin = kind == Kind::JointAMBH || kind == Kind::AmSoftmax || kind == Kind::AttributeAm ||
                     kind == Kind::FullJoint
                 ? rng.uniform(0.0, 0.6)
                 : 0.0;
  c.triplet_margin = rng.uniform(0.1, 1.0);
  c.gamma = rng.uniform(0.1, 1.0);
  c.lambda = rng.uniform(0.1, 1.0);
  c.reduction = rng.below(2) ? Reduction::Mean : Reduction::Sum;
  c.surrogate = (kind == Kind::TripletSoftplus || kind == Kind::BatchHardSoftplus ||
                 kind == Kind::JointAM0BHsp)
                    ? Surrogate::Softplus
                    : Surrogate::Hinge;
  c.normalize_triplet_features = kind == Kind::TripletNormalized ||
                                 kind == Kind::BatchHardNormalized || kind == Kind::JointAM0BH1;
  return pr;
}

LossOutput evaluate(Kind kind, const Problem& pr) {
  switch (kind) {
    case Kind::SoftmaxCE: return softmax_ce(pr.batch, pr.heads, false);
    case Kind::SoftmaxCEBias: return softmax_ce(pr.batch, pr.heads, true);
    case Kind::AmSoftmax: return am_softmax(pr.batch, pr.heads, pr.cfg);
    case Kind::AttributeAm: return attribute_am(pr.batch, pr.heads, pr.cfg, pr.plan);
    case Kind::TripletHinge:
    case Kind::TripletSoftplus:
    case Kind::TripletNormalized: return triplet_all(pr.batch, pr.cfg);
    case Kind::BatchHardHinge:
    case Kind::BatchHardSoftplus:
    case Kind::BatchHardNormalized: return batch_hard(pr.batch, pr.cfg);
    case Kind::JointAM0BH:
    case Kind::JointAMBH:
    case Kind::JointAM0BH1:
    case Kind::JointAM0BHsp: return joint(pr.batch, pr.heads, pr.cfg);
    case Kind::FullJoint: return full_joint(pr.batch, pr.heads, pr.cfg, pr.plan);
  }
  return {};
}

// Flattened parameter vector: embeddings, then head arrays (if the loss uses them).
Vec pack(Kind kind, const Problem& pr) {
  Vec theta;
  for (const auto& e : pr.batch.embeddings) theta.insert(theta.end(), e.begin(), e.end());
  if (uses_heads(kind)) {
    const auto w = pr.heads.identity_head.data();
    theta.insert(theta.end(), w.begin(), w.end());
    for (const auto& h : pr.heads.attribute_heads) theta.insert(theta.end(), h.data().begin(), h.data().end());
    theta.insert(theta.end(), pr.heads.bias.begin(), pr.heads.bias.end());
  }
  return theta;
}

void unpack(Kind kind, const Vec& theta, Problem& pr) {
  std::size_t at = 0;
  auto take = [&](std::span<double> dst) {
    std::copy(theta.begin() + static_cast<std::ptrdiff_t>(at),
              theta.begin() + static_cast<std::ptrdiff_t>(at + dst.size()), dst.begin());
    at += dst.size();
  };
  for (auto& e : pr.batch.embeddings) take(e);
  if (uses_heads(kind)) {
    take(pr.heads.identity_head.data());
    for (auto& h : pr.heads.attribute_heads) take(h.data());
    take(pr.heads.bias);
  }
}

Vec analytic_gradient(Kind kind, const LossOutput& out) {
  Vec g;
  for (const auto& e : out.grad_embeddings) g.insert(g.end(), e.begin(), e.end());
  if (uses_heads(kind)) {
    const auto w = out.grad_heads.identity_head.data();
    g.insert(g.end(), w.begin(), w.end());
    for (const auto& h : out.grad_heads.attribute_heads) g.insert(g.end(), h.data().begin(), h.data().end());
    g.insert(g.end(), out.grad_heads.bias.begin(), out.grad_heads.bias.end());
  }
  return g;
}

double kink_clearance(Kind kind, const Problem& pr) {
  if (kind != Kind::FullJoint) return metric_kink_clearance(pr.batch, pr.cfg, mines_hardest(kind));
  // The metric term of the full loss only sees the identity slice.
  BatchEmbeddings id_batch = pr.batch;
  const auto begin = static_cast<std::ptrdiff_t>(pr.plan.attribute_width());
  for (auto& e : id_batch.embeddings) e.erase(e.begin(), e.begin() + begin);
  return metric_kink_clearance(id_batch, pr.cfg, true);
}

// With a margin the target logit cos(alpha + m) has a kink where the target
// angle alpha reaches 0 or pi; returns the smallest sin(alpha) over targets.
double angle_clearance(Kind kind, const Problem& pr) {
  if (pr.cfg.margin == 0.0 || !uses_heads(kind)) return 1.0;
  double worst = 1.0;
  auto visit = [&](std::span<const double> x, const Mat& head, std::size_t target) {
    const double c = cosine_similarity(x, head.column(target));
    worst = std::min(worst, std::sqrt(std::max(0.0, 1.0 - c * c)));
  };
  const std::size_t q = pr.plan.width;
  const std::size_t id_begin = kind == Kind::FullJoint ? pr.plan.attribute_width() : 0;
  for (std::size_t i = 0; i < pr.batch.size(); ++i) {
    const Vec& e = pr.batch.embeddings[i];
    if (kind != Kind::AttributeAm) {
      visit(std::span(e).subspan(id_begin), pr.heads.identity_head, pr.batch.labels[i]);
    }
    for (std::size_t k = 0; k < pr.plan.attributes; ++k) {
      visit(std::span(e).subspan(k * q, q), pr.heads.attribute_heads[k], pr.batch.attributes[i][k] ? 0 : 1);
    }
  }
  return worst;
}

}  // namespace

std::vector<GradcheckEntry> run_gradcheck(const GradcheckOptions& opts) {
  std::vector<GradcheckEntry> report;
  for (std::size_t ci = 0; ci < std::size(kCases); ++ci) {
    const Case& c = kCases[ci];
    Rng rng(mix_seed(opts.seed, 100 + ci));
    GradcheckEntry entry{c.name, 0, 0.0, true};
    while (entry.trials < opts.trials) {
      Problem pr = draw(c.kind, rng);
      if (uses_metric(c.kind) && kink_clearance(c.kind, pr) < opts.kink_clearance) continue;
      if (angle_clearance(c.kind, pr) < opts.angle_clearance) continue;
      Vec analytic = analytic_gradient(c.kind, evaluate(c.kind, pr));
      if (opts.corrupt) {
        auto it = std::max_element(analytic.begin(), analytic.end(),
                                   [](double a, double b) { return std::abs(a) < std::abs(b); });
        *it *= 1.001;
      }
      Problem probe = pr;
      const auto f = [&](const Vec& theta) {
        unpack(c.kind, theta, probe);
        return evaluate(c.kind, probe).value;
      };
      const Vec numeric = finite_diff_grad(f, pack(c.kind, pr), opts.step);
      entry.max_rel_error = std::max(entry.max_rel_error, max_relative_error(analytic, numeric));
      ++entry.trials;
    }
    entry.passed = entry.max_rel_error < opts.tolerance;
    report.push_back(entry);
  }
  return report;
}

void write_gradcheck_report(std::ostream& os, const std::vector<GradcheckEntry>& entries) {
  os << "loss,trials,max_rel_error,status\n";
  for (const auto& e : entries) {
    os << e.loss << ',' << e.trials << ',' << std::scientific << std::setprecision(3)
       << e.max_rel_error << std::defaultfloat << ',' << (e.passed ? "PASS" : "FAIL") << '\n';
  }
}

}  // namespace reid
