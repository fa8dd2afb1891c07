#include "reid/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <regex>
#include <set>
#include <sstream>

#include "reid/errors.hpp"
#include "reid/rng.hpp"

namespace reid {

std::string_view to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Probe: return "probe";
    case Split::Gallery: return "gallery";
  }
  return "train";
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "probe" || s == "query") return Split::Probe;
  if (s == "gallery") return Split::Gallery;
  throw Error(ErrorKind::ParseError, "unknown split '" + std::string(s) + "'");
}

void Dataset::validate() const {
  auto bad = [](const std::string& what) { throw Error(ErrorKind::InvariantViolation, what); };
  std::set<long> train_ids;
  std::map<long, std::set<int>> test_cameras;
  std::map<long, const std::vector<std::uint8_t>*> attrs_of;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Sample& s = samples[i];
    if (s.features.size() != input_dim) bad("sample " + std::to_string(i) + " has wrong feature width");
    if (s.attributes.size() != attribute_count) {
      bad("sample " + std::to_string(i) + " has wrong attribute count");
    }
    require_finite(s.features, "dataset features");
    if (s.split == Split::Train) {
      train_ids.insert(s.identity);
    } else {
      test_cameras[s.identity].insert(s.camera);
    }
    auto [it, fresh] = attrs_of.emplace(s.identity, &s.attributes);
    if (!fresh && *it->second != s.attributes) {
      bad("identity " + std::to_string(s.identity) + " has inconsistent attributes");
    }
  }
  for (const auto& [id, cams] : test_cameras) {
    if (train_ids.count(id)) bad("identity " + std::to_string(id) + " is in both train and test");
    if (cams.size() < 2) bad("test identity " + std::to_string(id) + " seen by fewer than 2 cameras");
  }
}

void SynthConfig::validate() const {
  auto bad = [](const std::string& what) { throw Error(ErrorKind::ConfigConflict, what); };
  if (n_identities < 2) bad("need at least 2 training identities");
  if (n_cameras < 2) bad("need at least 2 cameras");
  if (input_dim == 0) bad("input_dim must be positive");
  if (samples_per_identity < 1) bad("samples_per_identity must be positive");
  if (samples_per_identity_max != 0 && samples_per_identity_max < samples_per_identity) {
    bad("samples_per_identity_max below samples_per_identity");
  }
  if (identity_spread < 0 || nuisance_scale < 0 || camera_mixing < 0 || attribute_strength < 0 ||
      noise_sigma < 0) {
    bad("scales must be non-negative");
  }
}

Dataset generate(const SynthConfig& cfg) {
  cfg.validate();
  const std::size_t dim = cfg.input_dim;
  const double root_dim = std::sqrt(static_cast<double>(dim));

  Rng world(mix_seed(cfg.seed, 1));
  std::vector<Vec> attr_dirs(cfg.attributes, Vec(dim));
  for (auto& u : attr_dirs) {
    for (double& x : u) x = world.normal();
    const double n = norm(u);
    for (double& x : u) x /= n;
  }
  std::vector<Mat> cam_linear;
  std::vector<Vec> cam_offset;
  for (std::size_t c = 0; c < cfg.n_cameras; ++c) {
    Mat a = Mat::identity(dim);
    for (double& x : a.data()) x += cfg.camera_mixing * cfg.nuisance_scale * world.normal() / root_dim;
    Vec t(dim);
    for (double& x : t) x = cfg.nuisance_scale * world.normal();
    cam_linear.push_back(std::move(a));
    cam_offset.push_back(std::move(t));
  }

  Dataset ds;
  ds.input_dim = dim;
  ds.attribute_count = cfg.attributes;
  Rng rng(mix_seed(cfg.seed, 2));
  const std::size_t total = cfg.n_identities + cfg.n_test_identities;
  const std::size_t min_test = std::max<std::size_t>(cfg.n_cameras + 1, 4);
  for (std::size_t id = 0; id < total; ++id) {
    const bool is_test = id >= cfg.n_identities;
    std::vector<std::uint8_t> attrs(cfg.attributes);
    for (auto& a : attrs) a = rng.uniform() < 0.5 ? 1 : 0;
    Vec center(dim);
    for (double& x : center) x = rng.normal();
    for (std::size_t k = 0; k < cfg.attributes; ++k) {
      axpy(cfg.attribute_strength * (attrs[k] ? 1.0 : -1.0), attr_dirs[k], center);
    }
    for (double& x : center) x *= cfg.identity_spread;

    std::size_t count = cfg.samples_per_identity;
    if (cfg.samples_per_identity_max > count) {
      const double u = rng.uniform();
      count += static_cast<std::size_t>(
          std::floor(u * u * static_cast<double>(cfg.samples_per_identity_max - count + 1)));
    }
    if (is_test) count = std::max(count, min_test);
    const std::size_t cam_start = rng.below(cfg.n_cameras);

    for (std::size_t j = 0; j < count; ++j) {
      // Test identities start at camera 0 so samples 0 and 1 (the probes)
      // sit in cameras 0 and 1.
      const std::size_t cam = (j + (is_test ? 0 : cam_start)) % cfg.n_cameras;
      Sample s;
      s.identity = static_cast<long>(id);
      s.camera = static_cast<int>(cam);
      s.split = !is_test ? Split::Train : (j < 2 ? Split::Probe : Split::Gallery);
      s.attributes = attrs;
      s.features = cam_offset[cam];
      const Mat& a = cam_linear[cam];
      for (std::size_t r = 0; r < dim; ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < dim; ++c) acc += a(r, c) * center[c];
        s.features[r] += acc + cfg.noise_sigma * rng.normal();
      }
      ds.samples.push_back(std::move(s));
    }
  }
  ds.validate();
  return ds;
}

MarketName parse_market_name(std::string_view filename) {
  static const std::regex pattern(R"(^(-?\d+)_c(\d+)(s\d+)?(_.*)?\.(jpg|jpeg|png|bmp)$)",
                                  std::regex::icase);
  const std::string name(filename);
  std::smatch m;
  if (!std::regex_match(name, m, pattern)) {
    throw Error(ErrorKind::BadFilename, "not a Market-style name: '" + name + "'");
  }
  MarketName out;
  out.identity = std::stol(m[1].str());
  out.camera = std::stoi(m[2].str());
  out.distractor = out.identity == -1;
  out.junk = out.identity == 0;
  if (out.identity < -1) throw Error(ErrorKind::BadFilename, "negative identity in '" + name + "'");
  return out;
}

void write_dataset(const std::string& path, const Dataset& ds) {
  ds.validate();
  std::ofstream os(path);
  if (!os) throw Error(ErrorKind::IoError, "cannot write " + path);
  os << "id,camera,split";
  for (std::size_t k = 0; k < ds.attribute_count; ++k) os << ",attr_" << k;
  for (std::size_t r = 0; r < ds.input_dim; ++r) os << ",x_" << r;
  os << '\n' << std::setprecision(17);
  for (const Sample& s : ds.samples) {
    os << s.identity << ',' << s.camera << ',' << to_string(s.split);
    for (auto a : s.attributes) os << ',' << static_cast<int>(a);
    for (double x : s.features) os << ',' << x;
    os << '\n';
  }
  if (!os) throw Error(ErrorKind::IoError, "write failed for " + path);
}

namespace {

std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    fields.push_back(line.substr(start, comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}

template <typename T>
T parse_number(std::string_view field, std::size_t line_no, const char* what) {
  T value{};
  const char* end = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(field.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw Error(ErrorKind::ParseError, "line " + std::to_string(line_no) + ": bad " + what + " '" +
                                           std::string(field) + "'");
  }
  return value;
}

}  // namespace

Dataset read_dataset(const std::string& path, std::optional<std::size_t> expected_attributes) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorKind::IoError, "cannot open dataset " + path);
  std::string line;
  if (!std::getline(is, line) || line.empty()) {
    throw Error(ErrorKind::ParseError, "line 1: empty dataset file");
  }
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_csv(line);
  if (header.size() < 3 || header[0] != "id" || header[1] != "camera" || header[2] != "split") {
    throw Error(ErrorKind::ParseError, "line 1: header must start with id,camera,split");
  }
  Dataset ds;
  std::size_t col = 3;
  while (col < header.size() && header[col] == "attr_" + std::to_string(ds.attribute_count)) {
    ++ds.attribute_count;
    ++col;
  }
  while (col < header.size() && header[col] == "x_" + std::to_string(ds.input_dim)) {
    ++ds.input_dim;
    ++col;
  }
  if (col != header.size()) {
    throw Error(ErrorKind::ParseError, "line 1: unexpected column '" + std::string(header[col]) + "'");
  }
  if (ds.input_dim == 0) throw Error(ErrorKind::ParseError, "line 1: no feature columns");
  if (expected_attributes && *expected_attributes != ds.attribute_count) {
    throw Error(ErrorKind::ParseError, "line 1: expected " + std::to_string(*expected_attributes) +
                                           " attribute columns, found " +
                                           std::to_string(ds.attribute_count));
  }

  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_csv(line);
    if (fields.size() != header.size()) {
      throw Error(ErrorKind::ParseError, "line " + std::to_string(line_no) + ": expected " +
                                             std::to_string(header.size()) + " fields, found " +
                                             std::to_string(fields.size()));
    }
    Sample s;
    s.identity = parse_number<long>(fields[0], line_no, "id");
    s.camera = parse_number<int>(fields[1], line_no, "camera");
    try {
      s.split = parse_split(fields[2]);
    } catch (const Error&) {
      throw Error(ErrorKind::ParseError, "line " + std::to_string(line_no) + ": bad split '" +
                                             std::string(fields[2]) + "'");
    }
    for (std::size_t k = 0; k < ds.attribute_count; ++k) {
      const int a = parse_number<int>(fields[3 + k], line_no, "attribute");
      if (a != 0 && a != 1) {
        throw Error(ErrorKind::ParseError, "line " + std::to_string(line_no) + ": attribute not 0/1");
      }
      s.attributes.push_back(static_cast<std::uint8_t>(a));
    }
    for (std::size_t r = 0; r < ds.input_dim; ++r) {
      s.features.push_back(parse_number<double>(fields[3 + ds.attribute_count + r], line_no, "feature"));
    }
    ds.samples.push_back(std::move(s));
  }
  if (ds.samples.empty()) throw Error(ErrorKind::ParseError, "line 2: dataset has no rows");
  ds.validate();
  return ds;
}

TrainView train_view(const Dataset& ds) {
  TrainView view;
  view.dense_label.assign(ds.samples.size(), 0);
  std::map<long, std::size_t> dense;
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const Sample& s = ds.samples[i];
    if (s.split != Split::Train) continue;
    auto [it, fresh] = dense.emplace(s.identity, view.index.size());
    if (fresh) {
      view.index.emplace_back();
      view.identity_of.push_back(s.identity);
    }
    view.index[it->second].push_back(i);
    view.dense_label[i] = it->second;
  }
  return view;
}

}  // namespace reid
