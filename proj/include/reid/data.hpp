#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "reid/numerics.hpp"
#include "reid/sampler.hpp"

namespace reid {

enum class Split { Train, Probe, Gallery };

std::string_view to_string(Split s);
Split parse_split(std::string_view s);

struct Sample {
  long identity = 0;
  int camera = 0;
  Split split = Split::Train;
  std::vector<std::uint8_t> attributes;
  Vec features;

  bool operator==(const Sample&) const = default;
};

struct Dataset {
  std::size_t input_dim = 0;
  std::size_t attribute_count = 0;
  std::vector<Sample> samples;

  /// Shapes, finiteness, train/test identity disjointness, identity-level
  /// attributes, and >= 2 cameras per test identity. Throws InvariantViolation.
  void validate() const;

  bool operator==(const Dataset&) const = default;
};

struct SynthConfig {
  std::size_t n_identities = 50;        // training identities
  std::size_t n_test_identities = 50;
  std::size_t samples_per_identity = 16;
  // When larger than samples_per_identity, per-identity counts are drawn from
  // [samples_per_identity, max] with a long tail towards the low end.
  std::size_t samples_per_identity_max = 0;
  std::size_t input_dim = 32;
  std::size_t n_cameras = 4;
  std::size_t attributes = 0;
  double identity_spread = 1.0;
  double nuisance_scale = 3.0;
  double camera_mixing = 0.05;       // linear part of a camera map, relative to nuisance_scale
  double attribute_strength = 1.5;   // how strongly attributes shape an identity center
  double noise_sigma = 0.3;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Synthetic re-identification data. Each identity has a center built from
/// an isotropic draw plus signed attribute directions; camera c maps it
/// through x -> A_c x + t_c and Gaussian noise is added. Test identities
/// contribute two probes (cameras 0 and 1); everything else is gallery.
Dataset generate(const SynthConfig& cfg);

struct MarketName {
  long identity = 0;
  int camera = 0;
  bool distractor = false;  // identity -1
  bool junk = false;        // identity 0
};

/// Parses "0002_c1s1_000451_03.jpg"-style names. Throws BadFilename.
MarketName parse_market_name(std::string_view filename);

void write_dataset(const std::string& path, const Dataset& ds);
/// Throws ParseError (with line number), InvariantViolation, or IoError.
Dataset read_dataset(const std::string& path,
                     std::optional<std::size_t> expected_attributes = std::nullopt);

/// Training samples grouped by densely re-indexed identity.
struct TrainView {
  IdentityIndex index;                 // dense label -> dataset sample indices
  std::vector<std::size_t> dense_label;  // per dataset sample; only valid for train samples
  std::vector<long> identity_of;       // dense label -> original identity
};

TrainView train_view(const Dataset& ds);

}  // namespace reid
