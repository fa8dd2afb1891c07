#include "reid/model.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "reid/errors.hpp"
#include "reid/rng.hpp"

namespace reid {

namespace {

constexpr const char* kCheckpointMagic = "reid-checkpoint";
constexpr int kCheckpointVersion = 1;

std::size_t layer_count(const ModelConfig& cfg) { return cfg.hidden_dims.size() + 1; }

std::size_t layer_in(const ModelConfig& cfg, std::size_t l) {
  return l == 0 ? cfg.input_dim : cfg.hidden_dims[l - 1];
}

std::size_t layer_out(const ModelConfig& cfg, std::size_t l) {
  return l < cfg.hidden_dims.size() ? cfg.hidden_dims[l] : cfg.embed_dim;
}

Vec affine(const AffineLayer& layer, std::span<const double> x) {
  const Mat& w = layer.weights;
  Vec y = layer.offsets;
  for (std::size_t o = 0; o < w.rows(); ++o) {
    double acc = 0.0;
    for (std::size_t i = 0; i < w.cols(); ++i) acc += w(o, i) * x[i];
    y[o] += acc;
  }
  return y;
}

void relu_inplace(Vec& v) {
  for (double& x : v) x = x > 0.0 ? x : 0.0;
}

// Named arrays in checkpoint order. Running statistics are included here
// (unlike for_each_trainable) since they are part of the model state.
template <typename Params, typename Fn>
void for_each_named(Params& p, Fn&& fn) {
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    fn("layer" + std::to_string(l) + ".weights", p.layers[l].weights.data());
    fn("layer" + std::to_string(l) + ".offsets", std::span(p.layers[l].offsets));
  }
  if (!p.norm.gain.empty()) {
    fn(std::string("norm.gain"), std::span(p.norm.gain));
    fn(std::string("norm.shift"), std::span(p.norm.shift));
    fn(std::string("norm.running_mean"), std::span(p.norm.running_mean));
    fn(std::string("norm.running_var"), std::span(p.norm.running_var));
  }
  fn(std::string("head.identity"), p.heads.identity_head.data());
  for (std::size_t k = 0; k < p.heads.attribute_heads.size(); ++k) {
    fn("head.attribute" + std::to_string(k), p.heads.attribute_heads[k].data());
  }
}

ModelParams shaped_zeros(const ModelConfig& cfg) {
  ModelParams p;
  for (std::size_t l = 0; l < layer_count(cfg); ++l) {
    p.layers.push_back({Mat(layer_out(cfg, l), layer_in(cfg, l)), Vec(layer_out(cfg, l), 0.0)});
  }
  if (cfg.batch_norm_output) {
    p.norm.gain.assign(cfg.embed_dim, 1.0);
    p.norm.shift.assign(cfg.embed_dim, 0.0);
    p.norm.running_mean.assign(cfg.embed_dim, 0.0);
    p.norm.running_var.assign(cfg.embed_dim, 1.0);
  }
  p.heads.identity_head = Mat(cfg.identity_width(), cfg.classes);
  for (std::size_t k = 0; k < cfg.attributes; ++k) {
    p.heads.attribute_heads.emplace_back(cfg.attribute_width, 2);
  }
  return p;
}

void fill_unit_columns(Mat& m, Rng& rng) {
  for (std::size_t c = 0; c < m.cols(); ++c) {
    Vec col(m.rows());
    double n = 0.0;
    while (!(n > 1e-6)) {
      for (double& x : col) x = rng.normal();
      n = norm(col);
    }
    for (double& x : col) x /= n;
    m.set_column(c, col);
  }
}

}  // namespace

void ModelConfig::validate() const {
  if (input_dim == 0 || embed_dim == 0) {
    throw Error(ErrorKind::ConfigConflict, "input and embedding widths must be positive");
  }
  for (std::size_t h : hidden_dims) {
    if (h == 0) throw Error(ErrorKind::ConfigConflict, "hidden widths must be positive");
  }
  if (attributes > 0 && attribute_width == 0) {
    throw Error(ErrorKind::ConfigConflict, "attribute slice width Q must be positive");
  }
  slice_plan().validate(embed_dim);
  if (identity_width() == 0) {
    throw Error(ErrorKind::SlicePlanOverflow, "identity slice width d - M*Q must be positive");
  }
}

void ModelParams::for_each_trainable(const std::function<void(std::span<double>)>& fn) {
  for (auto& l : layers) {
    fn(l.weights.data());
    fn(l.offsets);
  }
  if (!norm.gain.empty()) {
    fn(norm.gain);
    fn(norm.shift);
  }
  fn(heads.identity_head.data());
  for (auto& h : heads.attribute_heads) fn(h.data());
}

void ModelParams::for_each_trainable(const std::function<void(std::span<const double>)>& fn) const {
  const_cast<ModelParams*>(this)->for_each_trainable(
      [&](std::span<double> s) { fn(std::span<const double>(s)); });
}

ModelParams ModelParams::zeros_like() const {
  ModelParams z = *this;
  z.for_each_trainable([](std::span<double> s) { std::fill(s.begin(), s.end(), 0.0); });
  return z;
}

std::size_t ModelParams::trainable_count() const {
  std::size_t n = 0;
  for_each_trainable([&](std::span<const double> s) { n += s.size(); });
  return n;
}

bool ModelParams::operator==(const ModelParams& other) const {
  bool same = layers.size() == other.layers.size() &&
              heads.attribute_heads.size() == other.heads.attribute_heads.size() &&
              norm.gain.size() == other.norm.gain.size();
  if (!same) return false;
  std::vector<std::span<const double>> mine;
  std::vector<std::span<const double>> theirs;
  for_each_named(*this, [&](const std::string&, std::span<const double> s) { mine.push_back(s); });
  for_each_named(other, [&](const std::string&, std::span<const double> s) { theirs.push_back(s); });
  for (std::size_t i = 0; i < mine.size(); ++i) {
    if (!std::equal(mine[i].begin(), mine[i].end(), theirs[i].begin(), theirs[i].end())) return false;
  }
  return true;
}

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ModelParams p = shaped_zeros(cfg);
  Rng rng(seed);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const bool rectified = l + 1 < p.layers.size();
    const double fan_in = static_cast<double>(layer_in(cfg, l));
    const double bound = std::sqrt((rectified ? 6.0 : 3.0) / fan_in);
    for (double& w : p.layers[l].weights.data()) w = rng.uniform(-bound, bound);
  }
  fill_unit_columns(p.heads.identity_head, rng);
  for (auto& h : p.heads.attribute_heads) fill_unit_columns(h, rng);
  return p;
}

std::vector<Vec> forward_batch(const ModelParams& params, const ModelConfig& cfg,
                               const std::vector<Vec>& raws, NormMode mode, ForwardCache* cache) {
  const std::size_t n = raws.size();
  const std::size_t n_layers = params.layers.size();
  std::vector<std::vector<Vec>> acts(n_layers + 1);
  acts[0].reserve(n);
  for (const auto& r : raws) {
    if (r.size() != cfg.input_dim) {
      throw Error(ErrorKind::DimMismatch, "raw sample has " + std::to_string(r.size()) +
                                              " features, expected " + std::to_string(cfg.input_dim));
    }
    acts[0].push_back(r);
  }
  for (std::size_t l = 0; l < n_layers; ++l) {
    acts[l + 1].reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      Vec y = affine(params.layers[l], acts[l][i]);
      if (l + 1 < n_layers) relu_inplace(y);
      acts[l + 1].push_back(std::move(y));
    }
  }

  std::vector<Vec> out = acts[n_layers];
  ForwardCache local;
  ForwardCache& c = cache ? *cache : local;
  c.mode = mode;
  c.normalized.clear();
  if (cfg.batch_norm_output) {
    const std::size_t d = cfg.embed_dim;
    Vec mean(d, 0.0);
    Vec var(d, 0.0);
    if (mode == NormMode::Train) {
      if (n < 2) throw Error(ErrorKind::EmptyInput, "batch statistics need at least two samples");
      for (const auto& e : out)
        for (std::size_t r = 0; r < d; ++r) mean[r] += e[r];
      for (double& m : mean) m /= static_cast<double>(n);
      for (const auto& e : out)
        for (std::size_t r = 0; r < d; ++r) var[r] += (e[r] - mean[r]) * (e[r] - mean[r]);
      for (double& v : var) v /= static_cast<double>(n);
    } else {
      mean = params.norm.running_mean;
      var = params.norm.running_var;
    }
    c.normalized.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      Vec& e = out[i];
      Vec z(d);
      for (std::size_t r = 0; r < d; ++r) {
        z[r] = (e[r] - mean[r]) / std::sqrt(var[r] + kNormVarianceEpsilon);
        e[r] = params.norm.gain[r] * z[r] + params.norm.shift[r];
      }
      c.normalized[i] = std::move(z);
    }
    c.batch_mean = std::move(mean);
    c.batch_var = std::move(var);
  }
  c.activations = std::move(acts);
  return out;
}

Vec forward(const ModelParams& params, const ModelConfig& cfg, std::span<const double> raw) {
  return forward_batch(params, cfg, {Vec(raw.begin(), raw.end())}, NormMode::Frozen, nullptr)
      .front();
}

void backward_batch(const ModelParams& params, const ModelConfig& cfg, const ForwardCache& cache,
                    const std::vector<Vec>& grad_embeddings, ModelParams& grads) {
  const std::size_t n = grad_embeddings.size();
  const std::size_t n_layers = params.layers.size();
  if (cache.activations.size() != n_layers + 1 || cache.activations[0].size() != n) {
    throw Error(ErrorKind::ShapeMismatch, "forward cache does not match gradient batch");
  }
  std::vector<Vec> delta = grad_embeddings;

  if (cfg.batch_norm_output) {
    const std::size_t d = cfg.embed_dim;
    const auto& z = cache.normalized;
    Vec inv_std(d);
    for (std::size_t r = 0; r < d; ++r) {
      inv_std[r] = 1.0 / std::sqrt(cache.batch_var[r] + kNormVarianceEpsilon);
    }
    Vec sum_dz(d, 0.0);
    Vec sum_dz_z(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t r = 0; r < d; ++r) {
        grads.norm.gain[r] += delta[i][r] * z[i][r];
        grads.norm.shift[r] += delta[i][r];
        const double dz = delta[i][r] * params.norm.gain[r];
        sum_dz[r] += dz;
        sum_dz_z[r] += dz * z[i][r];
      }
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t r = 0; r < d; ++r) {
        const double dz = delta[i][r] * params.norm.gain[r];
        if (cache.mode == NormMode::Train) {
          delta[i][r] = inv_std[r] * (dz - inv_n * sum_dz[r] - z[i][r] * inv_n * sum_dz_z[r]);
        } else {
          delta[i][r] = inv_std[r] * dz;
        }
      }
    }
  }

  for (std::size_t l = n_layers; l-- > 0;) {
    const Mat& w = params.layers[l].weights;
    Mat& gw = grads.layers[l].weights;
    Vec& gb = grads.layers[l].offsets;
    const auto& input = cache.activations[l];
    std::vector<Vec> next(n, Vec(w.cols(), 0.0));
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t o = 0; o < w.rows(); ++o) {
        const double g = delta[i][o];
        if (g == 0.0) continue;
        gb[o] += g;
        for (std::size_t c = 0; c < w.cols(); ++c) {
          gw(o, c) += g * input[i][c];
          next[i][c] += g * w(o, c);
        }
      }
      if (l > 0) {
        // Input of layer l is a rectified activation; pass gradient where it was positive.
        for (std::size_t c = 0; c < w.cols(); ++c) {
          if (!(input[i][c] > 0.0)) next[i][c] = 0.0;
        }
      }
    }
    delta = std::move(next);
  }
}

void update_running_stats(ModelParams& params, const ForwardCache& cache) {
  if (params.norm.gain.empty() || cache.mode != NormMode::Train) return;
  for (std::size_t r = 0; r < params.norm.running_mean.size(); ++r) {
    params.norm.running_mean[r] =
        (1.0 - kRunningMomentum) * params.norm.running_mean[r] + kRunningMomentum * cache.batch_mean[r];
    params.norm.running_var[r] =
        (1.0 - kRunningMomentum) * params.norm.running_var[r] + kRunningMomentum * cache.batch_var[r];
  }
}

SplitEmbedding split_embedding(std::span<const double> embedding, const ModelConfig& cfg) {
  const SlicePlan plan = cfg.slice_plan();
  plan.validate(embedding.size());
  SplitEmbedding out;
  const std::size_t q = plan.width;
  for (std::size_t k = 0; k < plan.attributes; ++k) {
    out.attributes.emplace_back(embedding.begin() + static_cast<std::ptrdiff_t>(k * q),
                                embedding.begin() + static_cast<std::ptrdiff_t>((k + 1) * q));
  }
  out.identity.assign(embedding.begin() + static_cast<std::ptrdiff_t>(plan.attribute_width()),
                      embedding.end());
  return out;
}

void save_checkpoint(std::ostream& os, const ModelConfig& cfg, const ModelParams& params) {
  os << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
  os << "input_dim " << cfg.input_dim << '\n';
  os << "hidden_dims " << cfg.hidden_dims.size();
  for (std::size_t h : cfg.hidden_dims) os << ' ' << h;
  os << '\n';
  os << "embed_dim " << cfg.embed_dim << '\n';
  os << "batch_norm_output " << (cfg.batch_norm_output ? 1 : 0) << '\n';
  os << "attributes " << cfg.attributes << '\n';
  os << "attribute_width " << cfg.attribute_width << '\n';
  os << "classes " << cfg.classes << '\n';
  os << std::setprecision(17);
  for_each_named(params, [&](const std::string& name, std::span<const double> values) {
    os << "array " << name << ' ' << values.size() << '\n';
    for (std::size_t i = 0; i < values.size(); ++i) os << (i ? " " : "") << values[i];
    os << '\n';
  });
  os << "end\n";
}

void load_checkpoint(std::istream& is, ModelConfig& cfg, ModelParams& params) {
  auto fail = [](const std::string& what) { throw Error(ErrorKind::ParseError, "checkpoint: " + what); };
  auto expect_key = [&](const char* key) {
    std::string k;
    if (!(is >> k) || k != key) fail(std::string("expected '") + key + "'");
  };
  std::string magic;
  int version = 0;
  if (!(is >> magic >> version) || magic != kCheckpointMagic) fail("bad magic");
  if (version != kCheckpointVersion) fail("unsupported version " + std::to_string(version));

  ModelConfig c;
  expect_key("input_dim");
  is >> c.input_dim;
  expect_key("hidden_dims");
  std::size_t n_hidden = 0;
  is >> n_hidden;
  c.hidden_dims.resize(n_hidden);
  for (auto& h : c.hidden_dims) is >> h;
  int bn = 0;
  expect_key("embed_dim");
  is >> c.embed_dim;
  expect_key("batch_norm_output");
  is >> bn;
  c.batch_norm_output = bn != 0;
  expect_key("attributes");
  is >> c.attributes;
  expect_key("attribute_width");
  is >> c.attribute_width;
  expect_key("classes");
  is >> c.classes;
  if (!is) fail("truncated header");
  c.validate();

  ModelParams p = shaped_zeros(c);
  for_each_named(p, [&](const std::string& name, std::span<double> values) {
    std::string tag, got;
    std::size_t count = 0;
    if (!(is >> tag >> got >> count) || tag != "array") fail("expected array " + name);
    if (got != name || count != values.size()) {
      fail("array " + got + " (" + std::to_string(count) + ") does not match " + name);
    }
    for (double& v : values) {
      if (!(is >> v)) fail("short array " + name);
    }
    require_finite(values, name.c_str());
  });
  expect_key("end");
  cfg = std::move(c);
  params = std::move(p);
}

void save_checkpoint(const std::string& path, const ModelConfig& cfg, const ModelParams& params) {
  std::ofstream os(path);
  if (!os) throw Error(ErrorKind::IoError, "cannot write " + path);
  save_checkpoint(os, cfg, params);
  if (!os) throw Error(ErrorKind::IoError, "write failed for " + path);
}

void load_checkpoint(const std::string& path, ModelConfig& cfg, ModelParams& params) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorKind::IoError, "cannot open checkpoint " + path);
  load_checkpoint(is, cfg, params);
}

}  // namespace reid
