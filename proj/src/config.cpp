#include "reid/config.hpp"

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

#include "reid/errors.hpp"

namespace reid {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value) {
  throw Error(ErrorKind::ParseError,
              "bad value '" + std::string(value) + "' for key '" + std::string(key) + "'");
}

double to_double(std::string_view key, std::string_view v) {
  double out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v);
  return out;
}

std::uint64_t to_uint(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v);
  return out;
}

bool to_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  bad_value(key, v);
}

std::string fmt(double x) {
  std::ostringstream os;
  os.precision(17);
  os << x;
  return os.str();
}

std::vector<std::string> split_list(std::string_view v) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= v.size()) {
    const auto comma = v.find(',', start);
    const std::string item = trim(v.substr(start, comma - start));
    if (!item.empty()) out.push_back(item);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

struct KeySpec {
  ConfigKey key;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define REID_SIZE_KEY(name, help, field)                                                   \
  KeySpec {                                                                                \
    {name, help}, [](RunConfig& c, std::string_view v) { c.field = to_uint(name, v); },    \
        [](const RunConfig& c) { return std::to_string(c.field); }                         \
  }
#define REID_DOUBLE_KEY(name, help, field)                                                 \
  KeySpec {                                                                                \
    {name, help}, [](RunConfig& c, std::string_view v) { c.field = to_double(name, v); },  \
        [](const RunConfig& c) { return fmt(c.field); }                                    \
  }

const std::vector<KeySpec>& specs() {
  static const std::vector<KeySpec> table = {
      // synthetic data
      REID_SIZE_KEY("train-identities", "training identities", synth.n_identities),
      REID_SIZE_KEY("test-identities", "test identities", synth.n_test_identities),
      REID_SIZE_KEY("samples-per-identity", "samples per identity (minimum)", synth.samples_per_identity),
      REID_SIZE_KEY("samples-per-identity-max", "upper end of the long-tailed count range (0 = fixed)",
                    synth.samples_per_identity_max),
      REID_SIZE_KEY("input-dim", "raw feature width", synth.input_dim),
      REID_SIZE_KEY("cameras", "number of cameras", synth.n_cameras),
      REID_SIZE_KEY("attributes", "binary attributes per identity (M)", synth.attributes),
      REID_DOUBLE_KEY("identity-spread", "scale of identity centers", synth.identity_spread),
      REID_DOUBLE_KEY("nuisance-scale", "camera offset magnitude", synth.nuisance_scale),
      REID_DOUBLE_KEY("camera-mixing", "camera linear distortion relative to nuisance-scale",
                      synth.camera_mixing),
      REID_DOUBLE_KEY("attribute-strength", "attribute signal in identity centers", synth.attribute_strength),
      REID_DOUBLE_KEY("noise-sigma", "per-sample Gaussian noise", synth.noise_sigma),
      REID_SIZE_KEY("data-seed", "generator seed", synth.seed),
      // model
      KeySpec{{"hidden-dims", "comma-separated hidden layer widths"},
              [](RunConfig& c, std::string_view v) {
                c.model.hidden_dims.clear();
                for (const auto& item : split_list(v)) c.model.hidden_dims.push_back(to_uint("hidden-dims", item));
              },
              [](const RunConfig& c) {
                std::string out;
                for (std::size_t i = 0; i < c.model.hidden_dims.size(); ++i) {
                  out += (i ? "," : "") + std::to_string(c.model.hidden_dims[i]);
                }
                return out;
              }},
      REID_SIZE_KEY("embed-dim", "embedding width d", model.embed_dim),
      KeySpec{{"batch-norm", "standardize the embedding (true/false)"},
              [](RunConfig& c, std::string_view v) { c.model.batch_norm_output = to_bool("batch-norm", v); },
              [](const RunConfig& c) { return std::string(c.model.batch_norm_output ? "true" : "false"); }},
      REID_SIZE_KEY("attribute-width", "embedding slice per attribute (Q)", model.attribute_width),
      // training
      KeySpec{{"variant", "AM0 AM BH AM0BH1 AMBH AM0BH AM0BHsp AM0BH_Attr"},
              [](RunConfig& c, std::string_view v) {
                try {
                  c.train.variant = parse_variant(v);
                } catch (const Error&) {
                  bad_value("variant", v);
                }
              },
              [](const RunConfig& c) { return std::string(to_string(c.train.variant)); }},
      REID_SIZE_KEY("epochs", "training epochs", train.epochs),
      REID_SIZE_KEY("warmup-epochs", "linear warmup epochs", train.warmup_epochs),
      REID_DOUBLE_KEY("start-lr", "learning rate at epoch 0", train.start_lr),
      REID_DOUBLE_KEY("base-lr", "learning rate after warmup", train.base_lr),
      KeySpec{{"decay", "step decays as epoch:lr pairs, e.g. 90:1e-4,130:1e-5"},
              [](RunConfig& c, std::string_view v) {
                c.train.decay.clear();
                for (const auto& item : split_list(v)) {
                  const auto colon = item.find(':');
                  if (colon == std::string::npos) bad_value("decay", v);
                  c.train.decay.emplace_back(to_uint("decay", item.substr(0, colon)),
                                             to_double("decay", item.substr(colon + 1)));
                }
              },
              [](const RunConfig& c) {
                std::string out;
                for (std::size_t i = 0; i < c.train.decay.size(); ++i) {
                  out += (i ? "," : "") + std::to_string(c.train.decay[i].first) + ":" +
                         fmt(c.train.decay[i].second);
                }
                return out;
              }},
      REID_DOUBLE_KEY("beta1", "Adam beta1", train.beta1),
      REID_DOUBLE_KEY("beta2", "Adam beta2", train.beta2),
      REID_DOUBLE_KEY("adam-epsilon", "Adam epsilon", train.adam_epsilon),
      REID_DOUBLE_KEY("am-margin", "angular margin of the AM/AMBH variants (radians)", train.am_margin),
      REID_SIZE_KEY("seed", "training seed (initialization)", train.seed),
      // sampler
      REID_SIZE_KEY("batch-identities", "identities per batch (P)", sampler.identities_per_batch),
      REID_SIZE_KEY("batch-samples", "samples per identity in a batch (K)", sampler.samples_per_identity),
      REID_SIZE_KEY("sampler-seed", "batch sampling seed", sampler.seed),
      KeySpec{{"replacement", "resample | skip"},
              [](RunConfig& c, std::string_view v) {
                if (v == "resample") c.sampler.replacement = ReplacementPolicy::Resample;
                else if (v == "skip") c.sampler.replacement = ReplacementPolicy::SkipIdentity;
                else bad_value("replacement", v);
              },
              [](const RunConfig& c) {
                return std::string(c.sampler.replacement == ReplacementPolicy::Resample ? "resample" : "skip");
              }},
      // loss
      REID_DOUBLE_KEY("scale", "temperature s of the normalized logits", loss.scale),
      REID_DOUBLE_KEY("triplet-margin", "batch-hard distance margin", loss.triplet_margin),
      REID_DOUBLE_KEY("gamma", "weight of the metric term", loss.gamma),
      REID_DOUBLE_KEY("lambda", "weight of the attribute term", loss.lambda),
      KeySpec{{"reduction", "sum | mean (metric term over anchors)"},
              [](RunConfig& c, std::string_view v) {
                if (v == "sum") c.loss.reduction = Reduction::Sum;
                else if (v == "mean") c.loss.reduction = Reduction::Mean;
                else bad_value("reduction", v);
              },
              [](const RunConfig& c) { return std::string(c.loss.reduction == Reduction::Sum ? "sum" : "mean"); }},
      KeySpec{{"attribute-scale", "attribute head temperature (empty = scale)"},
              [](RunConfig& c, std::string_view v) {
                if (v.empty()) c.loss.attribute_scale.reset();
                else c.loss.attribute_scale = to_double("attribute-scale", v);
              },
              [](const RunConfig& c) { return c.loss.attribute_scale ? fmt(*c.loss.attribute_scale) : ""; }},
      KeySpec{{"attribute-margin", "attribute head margin (empty = identity margin)"},
              [](RunConfig& c, std::string_view v) {
                if (v.empty()) c.loss.attribute_margin.reset();
                else c.loss.attribute_margin = to_double("attribute-margin", v);
              },
              [](const RunConfig& c) { return c.loss.attribute_margin ? fmt(*c.loss.attribute_margin) : ""; }},
      KeySpec{{"preset", "dataset preset for gamma/lambda: market | duke | msmt"},
              [](RunConfig& c, std::string_view v) {
                if (!v.empty() && v != "market" && v != "duke" && v != "msmt") bad_value("preset", v);
                c.preset = std::string(v);
              },
              [](const RunConfig& c) { return c.preset; }},
      // paths
      KeySpec{{"dataset", "dataset CSV path"},
              [](RunConfig& c, std::string_view v) { c.dataset = std::string(v); },
              [](const RunConfig& c) { return c.dataset; }},
      KeySpec{{"out-dir", "output directory"},
              [](RunConfig& c, std::string_view v) { c.out_dir = std::string(v); },
              [](const RunConfig& c) { return c.out_dir; }},
  };
  return table;
}

#undef REID_SIZE_KEY
#undef REID_DOUBLE_KEY

const KeySpec& find_spec(std::string_view key) {
  for (const auto& s : specs())
    if (s.key.name == key) return s;
  throw Error(ErrorKind::ParseError, "unknown config key '" + std::string(key) + "'");
}

}  // namespace

RunConfig::RunConfig() {
  model.hidden_dims = {64};
  model.embed_dim = 32;
  loss.gamma = 0.43;
}

void RunConfig::set(std::string_view key, std::string_view value) {
  find_spec(key).set(*this, trim(value));
}

std::string RunConfig::get(std::string_view key) const { return find_spec(key).get(*this); }

void apply_preset(std::string_view preset, LossVariant variant, LossConfig& loss) {
  const bool attr = uses_attributes(variant);
  if (preset == "market") {
    loss.gamma = attr ? 0.54 : 0.43;
    if (attr) loss.lambda = 0.25;
  } else if (preset == "duke") {
    loss.gamma = attr ? 0.33 : 0.5;
    if (attr) loss.lambda = 0.2;
  } else if (preset == "msmt") {
    if (attr) throw Error(ErrorKind::ConfigConflict, "the msmt preset has no attribute setting");
    loss.gamma = 0.4;
  } else if (!preset.empty()) {
    throw Error(ErrorKind::ConfigConflict, "unknown preset '" + std::string(preset) + "'");
  }
}

void RunConfig::finalize() {
  if (!preset.empty()) {
    apply_preset(preset, train.variant, loss);
    preset.clear();
  }
  synth.validate();
  train.validate();
  sampler.validate();
  loss.validate();
  if (model.embed_dim == 0) throw Error(ErrorKind::ConfigConflict, "embed-dim must be positive");
  if (uses_attributes(train.variant)) {
    if (model.attribute_width == 0) {
      throw Error(ErrorKind::ConfigConflict, "AM0BH_Attr needs attribute-width > 0");
    }
  }
}

void RunConfig::write(std::ostream& os) const {
  for (const auto& s : specs()) os << s.key.name << " = " << s.get(*this) << '\n';
}

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    for (const auto& s : specs()) k.push_back(s.key);
    return k;
  }();
  return keys;
}

void load_config(std::istream& is, RunConfig& cfg) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorKind::ParseError, "config line " + std::to_string(line_no) + ": expected key = value");
    }
    try {
      cfg.set(trim(body.substr(0, eq)), trim(body.substr(eq + 1)));
    } catch (const Error& e) {
      throw Error(ErrorKind::ParseError, "config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
}

void load_config_file(const std::string& path, RunConfig& cfg) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorKind::IoError, "cannot open config " + path);
  load_config(is, cfg);
}

std::string resolve_output_dir(const std::string& out_dir) {
  const char* root = std::getenv("REID_OUTPUT_ROOT");
  std::filesystem::path p(out_dir);
  if (root && *root && p.is_relative()) p = std::filesystem::path(root) / p;
  return p.string();
}

}  // namespace reid
