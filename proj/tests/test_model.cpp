#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <sstream>

#include "oracles.hpp"
#include "reid/errors.hpp"
#include "reid/model.hpp"

using namespace reid;

namespace {

Vec flatten(const ModelParams& p) {
  Vec out;
  p.for_each_trainable([&](std::span<const double> s) { out.insert(out.end(), s.begin(), s.end()); });
  return out;
}

void assign(ModelParams& p, const Vec& v) {
  std::size_t at = 0;
  p.for_each_trainable([&](std::span<double> s) {
    for (double& x : s) x = v[at++];
  });
}

ModelConfig small_config(bool bn, std::size_t m = 0, std::size_t q = 0) {
  ModelConfig cfg;
  cfg.input_dim = 4;
  cfg.hidden_dims = {5};
  cfg.embed_dim = 3 + m * q;
  cfg.batch_norm_output = bn;
  cfg.attributes = m;
  cfg.attribute_width = q;
  cfg.classes = 3;
  return cfg;
}

// Random non-trivial normalization parameters so the affine part is exercised.
void perturb_norm(ModelParams& p, Rng& rng) {
  for (double& g : p.norm.gain) g = rng.uniform(0.5, 1.5);
  for (double& s : p.norm.shift) s = rng.uniform(-0.5, 0.5);
  for (double& m : p.norm.running_mean) m = rng.uniform(-1, 1);
  for (double& v : p.norm.running_var) v = rng.uniform(0.5, 2);
}

std::vector<Vec> random_inputs(Rng& rng, std::size_t n, std::size_t dim) {
  std::vector<Vec> xs;
  for (std::size_t i = 0; i < n; ++i) xs.push_back(oracle::gaussian(rng, dim));
  return xs;
}

}  // namespace

TEST_CASE("identity network passes inputs through") {
  ModelConfig cfg;
  cfg.input_dim = 2;
  cfg.embed_dim = 2;
  cfg.batch_norm_output = false;
  cfg.classes = 2;
  ModelParams p = init_params(cfg, 1);
  REQUIRE(p.layers.size() == 1);
  p.layers[0].weights = Mat::identity(2);
  p.layers[0].offsets = {0, 0};
  CHECK(forward(p, cfg, Vec{1, 2}) == Vec{1, 2});
  // The output layer is linear: negative values survive.
  CHECK(forward(p, cfg, Vec{-1, 2}) == Vec{-1, 2});
  CHECK_THROWS_AS(forward(p, cfg, Vec{1, 2, 3}), Error);
}

TEST_CASE("zero weights give a zero embedding") {
  ModelConfig cfg = small_config(false);
  ModelParams p = init_params(cfg, 2);
  for (auto& l : p.layers) {
    for (double& w : l.weights.data()) w = 0.0;
    for (double& b : l.offsets) b = 0.0;
  }
  CHECK(forward(p, cfg, Vec{1, -2, 3, 4}) == Vec(3, 0.0));
}

TEST_CASE("init_params is deterministic and normalizes heads") {
  const ModelConfig cfg = small_config(true, 2, 2);
  const ModelParams a = init_params(cfg, 9);
  CHECK(a == init_params(cfg, 9));
  CHECK_FALSE(a == init_params(cfg, 10));
  for (std::size_t j = 0; j < cfg.classes; ++j) CHECK(std::abs(norm(a.heads.identity_head.column(j)) - 1) < 1e-9);
  REQUIRE(a.heads.attribute_heads.size() == 2);
  for (const Mat& h : a.heads.attribute_heads) {
    CHECK(h.rows() == 2);
    CHECK(h.cols() == 2);
    for (std::size_t j = 0; j < 2; ++j) CHECK(std::abs(norm(h.column(j)) - 1) < 1e-9);
  }
  CHECK(a.heads.identity_head.rows() == 3);
  CHECK(a.layers.size() == 2);

  ModelConfig flat = cfg;
  flat.hidden_dims.clear();
  const ModelParams f = init_params(flat, 1);
  REQUIRE(f.layers.size() == 1);
  CHECK(f.layers[0].weights.rows() == flat.embed_dim);
  CHECK(f.layers[0].weights.cols() == flat.input_dim);
}

TEST_CASE("config validation") {
  ModelConfig cfg = small_config(true, 2, 2);
  CHECK_NOTHROW(cfg.validate());
  cfg.embed_dim = 4;  // no room left for the identity slice
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg.embed_dim = 3;
  try {
    cfg.validate();
    FAIL("expected SlicePlanOverflow");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::SlicePlanOverflow);
  }
}

TEST_CASE("split_embedding partitions the embedding") {
  ModelConfig cfg;
  cfg.embed_dim = 8;
  cfg.attributes = 2;
  cfg.attribute_width = 2;
  const Vec e{0, 1, 2, 3, 4, 5, 6, 7};
  const auto parts = split_embedding(e, cfg);
  REQUIRE(parts.attributes.size() == 2);
  CHECK(parts.attributes[0] == Vec{0, 1});
  CHECK(parts.attributes[1] == Vec{2, 3});
  CHECK(parts.identity == Vec{4, 5, 6, 7});

  cfg.attributes = 0;
  CHECK(split_embedding(e, cfg).identity == e);
  CHECK(split_embedding(e, cfg).attributes.empty());

  cfg.embed_dim = 2048;
  cfg.attributes = 27;
  cfg.attribute_width = 16;
  CHECK(cfg.identity_width() == 1616);
  CHECK(split_embedding(Vec(2048, 1.0), cfg).identity.size() == 1616);

  cfg.attributes = 3;
  cfg.attribute_width = 3;
  try {
    split_embedding(Vec(8, 0.0), cfg);
    FAIL("expected SlicePlanOverflow");
  } catch (const Error& e2) {
    CHECK(e2.kind() == ErrorKind::SlicePlanOverflow);
  }
}

TEST_CASE("split_embedding slices reassemble exactly") {
  Rng rng(3);
  for (int t = 0; t < 200; ++t) {
    ModelConfig cfg;
    cfg.attributes = rng.below(5);
    cfg.attribute_width = 1 + rng.below(4);
    cfg.embed_dim = cfg.attributes * cfg.attribute_width + 1 + rng.below(6);
    const Vec e = oracle::gaussian(rng, cfg.embed_dim);
    const auto parts = split_embedding(e, cfg);
    Vec joined;
    for (const Vec& s : parts.attributes) joined.insert(joined.end(), s.begin(), s.end());
    joined.insert(joined.end(), parts.identity.begin(), parts.identity.end());
    CHECK(joined == e);
  }
}

TEST_CASE("frozen forward is a per-sample pure function") {
  Rng rng(4);
  const ModelConfig cfg = small_config(true);
  ModelParams p = init_params(cfg, 5);
  perturb_norm(p, rng);
  const auto xs = random_inputs(rng, 6, cfg.input_dim);
  const auto batch = forward_batch(p, cfg, xs, NormMode::Frozen, nullptr);
  for (std::size_t i = 0; i < xs.size(); ++i) CHECK(batch[i] == forward(p, cfg, xs[i]));
  // Reordering the batch does not change any sample's embedding.
  std::vector<Vec> rev(xs.rbegin(), xs.rend());
  const auto batch_rev = forward_batch(p, cfg, rev, NormMode::Frozen, nullptr);
  for (std::size_t i = 0; i < xs.size(); ++i) CHECK(batch_rev[xs.size() - 1 - i] == batch[i]);
}

TEST_CASE("train mode standardizes with batch statistics") {
  Rng rng(5);
  const ModelConfig cfg = small_config(true);
  ModelParams p = init_params(cfg, 6);
  const auto xs = random_inputs(rng, 16, cfg.input_dim);
  ForwardCache cache;
  const auto out = forward_batch(p, cfg, xs, NormMode::Train, &cache);
  // Initial gain 1, shift 0: every output dimension has batch mean 0 and
  // (biased) variance var / (var + eps).
  for (std::size_t r = 0; r < cfg.embed_dim; ++r) {
    double mean = 0.0, sq = 0.0;
    for (const Vec& e : out) mean += e[r];
    mean /= out.size();
    for (const Vec& e : out) sq += (e[r] - mean) * (e[r] - mean);
    sq /= out.size();
    CHECK(std::abs(mean) < 1e-12);
    CHECK(sq == doctest::Approx(cache.batch_var[r] / (cache.batch_var[r] + kNormVarianceEpsilon)).epsilon(1e-10));
  }

  const Vec old_mean = p.norm.running_mean, old_var = p.norm.running_var;
  update_running_stats(p, cache);
  for (std::size_t r = 0; r < cfg.embed_dim; ++r) {
    CHECK(p.norm.running_mean[r] == doctest::Approx(0.9 * old_mean[r] + 0.1 * cache.batch_mean[r]));
    CHECK(p.norm.running_var[r] == doctest::Approx(0.9 * old_var[r] + 0.1 * cache.batch_var[r]));
  }
}

TEST_CASE("backward matches finite differences for every parameter") {
  Rng rng(6);
  for (int t = 0; t < 12; ++t) {
    const bool bn = t % 2 == 0;
    const NormMode mode = t % 4 < 2 ? NormMode::Train : NormMode::Frozen;
    ModelConfig cfg = small_config(bn);
    cfg.hidden_dims = t % 3 == 0 ? std::vector<std::size_t>{} : std::vector<std::size_t>{5, 4};
    ModelParams p = init_params(cfg, 100 + t);
    if (bn) perturb_norm(p, rng);
    for (auto& l : p.layers)
      for (double& b : l.offsets) b = rng.uniform(0.1, 0.5);  // keeps ReLUs away from zero
    const auto xs = random_inputs(rng, 5, cfg.input_dim);
    std::vector<Vec> weights = random_inputs(rng, xs.size(), cfg.embed_dim);

    // L = sum_i <w_i, f(x_i)>, so dL/df(x_i) = w_i.
    auto loss = [&](const Vec& theta) {
      ModelParams q = p;
      assign(q, theta);
      const auto out = forward_batch(q, cfg, xs, mode, nullptr);
      double v = 0.0;
      for (std::size_t i = 0; i < out.size(); ++i) v += dot(out[i], weights[i]);
      return v;
    };
    ForwardCache cache;
    forward_batch(p, cfg, xs, mode, &cache);
    ModelParams grads = p.zeros_like();
    backward_batch(p, cfg, cache, weights, grads);
    const Vec numeric = finite_diff_grad(loss, flatten(p), 1e-6);
    const Vec analytic = flatten(grads);
    INFO("trial " << t);
    CHECK(max_relative_error(analytic, numeric) < 1e-5);
  }
}

TEST_CASE("loss gradient through the model reaches the first layer") {
  Rng rng(7);
  for (int t = 0; t < 6; ++t) {
    ModelConfig cfg;
    cfg.input_dim = 3 + rng.below(4);
    cfg.hidden_dims = {6};
    cfg.embed_dim = 4;
    cfg.batch_norm_output = true;
    cfg.classes = 2;
    ModelParams p = init_params(cfg, 200 + t);
    for (auto& l : p.layers)
      for (double& b : l.offsets) b = rng.uniform(0.1, 0.5);
    BatchEmbeddings batch;
    std::vector<Vec> xs;
    for (std::size_t i = 0; i < 4; ++i) {
      xs.push_back(oracle::gaussian(rng, cfg.input_dim));
      batch.labels.push_back(i / 2);
    }
    batch.pk_shape = PKShape{2, 2};
    LossConfig lc;
    lc.scale = 5;
    lc.gamma = 0.5;
    lc.triplet_margin = 5.0;  // keeps every hinge active

    auto loss_of = [&](const ModelParams& q) {
      BatchEmbeddings b = batch;
      b.embeddings = forward_batch(q, cfg, xs, NormMode::Train, nullptr);
      return joint(b, q.heads, lc);
    };
    // Perturb only the first layer's weights.
    auto f = [&](const Vec& w) {
      ModelParams q = p;
      std::copy(w.begin(), w.end(), q.layers[0].weights.data().begin());
      return loss_of(q).value;
    };
    ForwardCache cache;
    BatchEmbeddings b = batch;
    b.embeddings = forward_batch(p, cfg, xs, NormMode::Train, &cache);
    const LossOutput out = joint(b, p.heads, lc);
    ModelParams grads = p.zeros_like();
    backward_batch(p, cfg, cache, out.grad_embeddings, grads);
    const auto w0 = p.layers[0].weights.data();
    const Vec numeric = finite_diff_grad(f, Vec(w0.begin(), w0.end()), 1e-6);
    const auto g0 = grads.layers[0].weights.data();
    CHECK(max_relative_error(Vec(g0.begin(), g0.end()), numeric) < 1e-4);
  }
}

TEST_CASE("checkpoint round trip") {
  Rng rng(8);
  const ModelConfig cfg = small_config(true, 2, 3);
  ModelParams p = init_params(cfg, 11);
  perturb_norm(p, rng);
  std::stringstream ss;
  save_checkpoint(ss, cfg, p);
  ModelConfig cfg2;
  ModelParams p2;
  load_checkpoint(ss, cfg2, p2);
  CHECK(p2 == p);
  CHECK(p2.norm.running_mean == p.norm.running_mean);
  CHECK(p2.norm.running_var == p.norm.running_var);
  CHECK(cfg2.hidden_dims == cfg.hidden_dims);
  CHECK(cfg2.embed_dim == cfg.embed_dim);
  CHECK(cfg2.attributes == 2);
  CHECK(cfg2.attribute_width == 3);
  CHECK(cfg2.classes == cfg.classes);
  const Vec x{0.1, -0.2, 0.3, 0.4};
  CHECK(forward(p2, cfg2, x) == forward(p, cfg, x));

  const auto path = std::filesystem::temp_directory_path() / "reid_test_checkpoint.txt";
  save_checkpoint(path.string(), cfg, p);
  ModelParams p3;
  ModelConfig cfg3;
  load_checkpoint(path.string(), cfg3, p3);
  CHECK(p3 == p);
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint errors") {
  ModelConfig cfg;
  ModelParams p;
  auto kind = [&](const std::string& text) {
    std::istringstream is(text);
    try {
      load_checkpoint(is, cfg, p);
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::InvariantViolation;
  };
  CHECK(kind("") == ErrorKind::ParseError);
  CHECK(kind("not-a-checkpoint 1\n") == ErrorKind::ParseError);
  CHECK(kind("reid-checkpoint 99\n") == ErrorKind::ParseError);

  const ModelConfig good = small_config(false);
  std::stringstream ss;
  save_checkpoint(ss, good, init_params(good, 1));
  const std::string text = ss.str();
  CHECK(kind(text.substr(0, text.size() / 2)) == ErrorKind::ParseError);

  try {
    load_checkpoint("/nonexistent/dir/checkpoint.txt", cfg, p);
    FAIL("expected IoError");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::IoError);
  }
}
