#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "reid/data.hpp"
#include "reid/losses.hpp"
#include "reid/model.hpp"
#include "reid/sampler.hpp"
#include "reid/trainer.hpp"

namespace reid {

/// Everything a command needs, as one flat set of kebab-case keys.
struct RunConfig {
  SynthConfig synth;
  ModelConfig model;
  TrainConfig train;
  SamplerConfig sampler;
  LossConfig loss;
  std::string preset;  // market | duke | msmt; resolved by finalize()
  std::string dataset;
  std::string out_dir = "out";

  RunConfig();

  /// Sets one key from its text value. Throws ParseError for unknown keys or bad values.
  void set(std::string_view key, std::string_view value);
  std::string get(std::string_view key) const;

  /// Applies the preset (if any) and checks cross-field constraints.
  /// Throws ConfigConflict.
  void finalize();

  /// `key = value` lines for every key, in table order.
  void write(std::ostream& os) const;
};

struct ConfigKey {
  std::string name;
  std::string help;
};

const std::vector<ConfigKey>& config_keys();

/// Parses `key = value` lines; `#` starts a comment. Throws ParseError with the line number.
void load_config(std::istream& is, RunConfig& cfg);
void load_config_file(const std::string& path, RunConfig& cfg);

/// Applies the named dataset preset to the loss weights for a variant.
void apply_preset(std::string_view preset, LossVariant variant, LossConfig& loss);

/// out_dir joined under $REID_OUTPUT_ROOT when that is set and out_dir is relative.
std::string resolve_output_dir(const std::string& out_dir);

}  // namespace reid
