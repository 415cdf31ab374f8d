#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "despoof/corpus.hpp"
#include "despoof/denoiser.hpp"
#include "despoof/detector.hpp"
#include "despoof/diffusion.hpp"

namespace despoof {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// How the genuine-only model starts: from its own random init, or as a copy
/// of the trained spoof-union model.
enum class GenuineInit { scratch, spoof_union };

struct RunConfig {
  std::uint64_t seed = 0;
  std::string out = "runs/default";

  // corpus
  int genuine_per_domain = 2000;
  int spoof_per_domain = 2000;
  int image_size = 32;
  std::string domains = "AB";

  // schedule
  int schedule_steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;

  DenoiserConfig denoiser;  // seed is derived from `seed`
  DiffusionTrainConfig diffusion;
  GenuineInit genuine_init = GenuineInit::scratch;
  int genuine_max_steps = 1500;
  double genuine_learning_rate = 1e-4;
  // Cap on training images per diffusion model (0 = all of the train split).
  int diffusion_max_images = 0;

  int despoof_steps = 50;

  DetectorConfig detector;  // seed is derived from `seed`
  DetectorTrainConfig detector_train;
  bool score_fusion = false;

  ProtocolScheme scheme = ProtocolScheme::intra;
  char intra_domain = 'A';

  void validate() const;
  NoiseSchedule schedule() const;
};

/// Documented keys, in file order, with their defaults.
struct ConfigKey {
  std::string key;  // "section.name"
  std::string doc;
  std::string default_value;
};
std::vector<ConfigKey> config_keys();

/// Parses `[section]` headers and `name = value` lines over the defaults.
/// '#' starts a comment. Unknown keys and bad values throw ConfigError naming the key.
RunConfig parse_config(const std::string& text, RunConfig base = {});
RunConfig load_config(const std::string& path, RunConfig base = {});
/// Full config text with every key, re-parsable by parse_config.
std::string format_config(const RunConfig& c);

/// Sets one "section.name" key.
void set_config_value(RunConfig& c, const std::string& key, const std::string& value);

}  // namespace despoof
