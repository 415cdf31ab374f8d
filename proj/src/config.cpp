#include "despoof/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>

#include "despoof/serialize.hpp"

namespace despoof {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class I>
I parse_int(const std::string& key, const std::string& v) {
  I out{};
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size()) throw ConfigError("config key '" + key + "': bad integer '" + v + "'");
  return out;
}

double parse_real(const std::string& key, const std::string& v) {
  try {
    return parse_double(v);
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': bad number '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError("config key '" + key + "': expected true or false, got '" + v + "'");
}

template <class F>
auto parse_enum(const std::string& key, const std::string& v, F parse) {
  try {
    return parse(v);
  } catch (const std::invalid_argument& e) {
    throw ConfigError("config key '" + key + "': " + e.what());
  }
}

std::string to_string(GenuineInit g) { return g == GenuineInit::scratch ? "scratch" : "spoof_union"; }
GenuineInit parse_genuine_init(const std::string& s) {
  if (s == "scratch") return GenuineInit::scratch;
  if (s == "spoof_union") return GenuineInit::spoof_union;
  throw std::invalid_argument("unknown genuine init '" + s + "' (scratch, spoof_union)");
}

struct Field {
  std::string key, doc;
  std::function<void(RunConfig&, const std::string& key, const std::string& value)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define INT_FIELD(KEY, MEMBER, DOC)                                                                            \
  Field {                                                                                                      \
    KEY, DOC,                                                                                                  \
        [](RunConfig& c, const std::string& k, const std::string& v) {                                         \
          c.MEMBER = parse_int<std::remove_reference_t<decltype(c.MEMBER)>>(k, v);                             \
        },                                                                                                     \
        [](const RunConfig& c) { return std::to_string(c.MEMBER); }                                            \
  }
#define REAL_FIELD(KEY, MEMBER, DOC)                                                                           \
  Field {                                                                                                      \
    KEY, DOC, [](RunConfig& c, const std::string& k, const std::string& v) { c.MEMBER = parse_real(k, v); },   \
        [](const RunConfig& c) { return format_double(c.MEMBER); }                                             \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      INT_FIELD("run.seed", seed, "root seed; every random stream is derived from it by component name"),
      Field{"run.out", "output directory",
            [](RunConfig& c, const std::string&, const std::string& v) { c.out = v; },
            [](const RunConfig& c) { return c.out; }},

      INT_FIELD("corpus.genuine_per_domain", genuine_per_domain, "genuine images per synthetic domain"),
      INT_FIELD("corpus.spoof_per_domain", spoof_per_domain, "spoof images per synthetic domain"),
      INT_FIELD("corpus.image_size", image_size, "image side in pixels"),
      Field{"corpus.domains", "synthetic domains to generate (subset of AB)",
            [](RunConfig& c, const std::string& k, const std::string& v) {
              if (v.empty() || v.find_first_not_of("AB") != std::string::npos) {
                throw ConfigError("config key '" + k + "': expected letters from AB, got '" + v + "'");
              }
              c.domains = v;
            },
            [](const RunConfig& c) { return c.domains; }},

      INT_FIELD("schedule.steps", schedule_steps, "diffusion steps T"),
      REAL_FIELD("schedule.beta_start", beta_start, "first beta of the linear schedule"),
      REAL_FIELD("schedule.beta_end", beta_end, "last beta of the linear schedule"),

      INT_FIELD("denoiser.base_width", denoiser.base_width, "UNet channels at full resolution"),
      INT_FIELD("denoiser.depth_levels", denoiser.depth_levels, "UNet down/up levels"),
      INT_FIELD("denoiser.time_embed_dim", denoiser.time_embed_dim, "sinusoidal time embedding size"),
      REAL_FIELD("denoiser.sigma_data", denoiser.sigma_data, "output preconditioning scale, 0 = raw eps output"),

      INT_FIELD("diffusion.max_steps", diffusion.max_steps, "optimizer steps for the spoof-union model"),
      INT_FIELD("diffusion.batch_size", diffusion.batch_size, "images per diffusion step"),
      REAL_FIELD("diffusion.learning_rate", diffusion.learning_rate, "Adam learning rate, spoof-union model"),
      REAL_FIELD("diffusion.weight_decay", diffusion.weight_decay, "Adam weight decay for both diffusion models"),
      INT_FIELD("diffusion.decay_every", diffusion.decay_every,
                "steps between learning-rate decays, both models (0 = constant rate)"),
      REAL_FIELD("diffusion.decay_factor", diffusion.decay_factor, "learning-rate multiplier per decay"),
      INT_FIELD("diffusion.eval_every", diffusion.eval_every, "steps between held-out round-trip checks (0 = off)"),
      INT_FIELD("diffusion.eval_ode_steps", diffusion.eval_ode_steps, "ODE steps used by the round-trip check"),
      REAL_FIELD("diffusion.target_roundtrip_mse", diffusion.target_roundtrip_mse,
                 "early stop once held-out round-trip MSE is below this (0 = never)"),
      Field{"diffusion.genuine_init", "genuine-only model start: scratch or spoof_union (copy of that model)",
            [](RunConfig& c, const std::string& k, const std::string& v) {
              c.genuine_init = parse_enum(k, v, parse_genuine_init);
            },
            [](const RunConfig& c) { return to_string(c.genuine_init); }},
      INT_FIELD("diffusion.genuine_max_steps", genuine_max_steps, "optimizer steps for the genuine-only model"),
      REAL_FIELD("diffusion.genuine_learning_rate", genuine_learning_rate, "Adam learning rate, genuine-only model"),
      INT_FIELD("diffusion.max_images", diffusion_max_images, "cap on training images per model (0 = whole split)"),

      INT_FIELD("despoof.steps", despoof_steps, "DDIM steps each way in the bridge (25, 50, 100 in the sweep)"),

      Field{"detector.inputs", "rgb, noise, rgb_rgb or rgb_noise",
            [](RunConfig& c, const std::string& k, const std::string& v) {
              c.detector.inputs = parse_enum(k, v, parse_detector_inputs);
            },
            [](const RunConfig& c) { return to_string(c.detector.inputs); }},
      INT_FIELD("detector.width1", detector.width1, "channels of branch block 1"),
      INT_FIELD("detector.width2", detector.width2, "channels of branch block 2 (fused)"),
      INT_FIELD("detector.width3", detector.width3, "channels of branch block 3 (auxiliary heads)"),
      INT_FIELD("detector.head_width", detector.head_width, "channels of the fused head"),
      REAL_FIELD("detector.cdc_theta", detector.cdc_theta, "central difference mixing factor"),
      REAL_FIELD("detector.crop_fraction", detector.crop_fraction, "centre crop for the RGB branch"),
      REAL_FIELD("detector.noise_gain", detector.noise_gain, "scale applied to noise patterns before the first conv"),
      INT_FIELD("detector.max_steps", detector_train.max_steps, "optimizer steps"),
      INT_FIELD("detector.batch_size", detector_train.batch_size, "samples per step"),
      REAL_FIELD("detector.learning_rate", detector_train.learning_rate, "initial Adam learning rate"),
      REAL_FIELD("detector.weight_decay", detector_train.weight_decay, "Adam weight decay (added to the gradient)"),
      INT_FIELD("detector.decay_every", detector_train.decay_every, "steps between learning-rate decays"),
      REAL_FIELD("detector.decay_factor", detector_train.decay_factor, "learning-rate multiplier per decay"),
      INT_FIELD("detector.eval_every", detector_train.eval_every, "steps between dev evaluations"),
      Field{"detector.score_fusion", "score with the mean of the two branch heads (two-stream only)",
            [](RunConfig& c, const std::string& k, const std::string& v) { c.score_fusion = parse_bool(k, v); },
            [](const RunConfig& c) { return std::string(c.score_fusion ? "true" : "false"); }},

      Field{"protocol.scheme", "intra, cross_ab or cross_ba",
            [](RunConfig& c, const std::string& k, const std::string& v) { c.scheme = parse_enum(k, v, parse_scheme); },
            [](const RunConfig& c) { return to_string(c.scheme); }},
      Field{"protocol.intra_domain", "domain used by the intra protocol",
            [](RunConfig& c, const std::string& k, const std::string& v) {
              if (v != "A" && v != "B") throw ConfigError("config key '" + k + "': expected A or B, got '" + v + "'");
              c.intra_domain = v[0];
            },
            [](const RunConfig& c) { return std::string(1, c.intra_domain); }},
  };
  return f;
}

#undef INT_FIELD
#undef REAL_FIELD

const Field* find_field(const std::string& key) {
  for (const auto& f : fields()) {
    if (f.key == key) return &f;
  }
  return nullptr;
}

}  // namespace

void RunConfig::validate() const {
  auto fail = [](const std::string& key, const std::string& why) { throw ConfigError("config key '" + key + "': " + why); };
  if (genuine_per_domain < 1) fail("corpus.genuine_per_domain", "must be >= 1");
  if (spoof_per_domain < 1) fail("corpus.spoof_per_domain", "must be >= 1");
  if (image_size < 8 || image_size % 8 != 0) fail("corpus.image_size", "must be a positive multiple of 8");
  if (schedule_steps < 1) fail("schedule.steps", "must be >= 1");
  if (!(beta_start > 0 && beta_start <= beta_end && beta_end < 1)) {
    fail("schedule.beta_start", "need 0 < beta_start <= beta_end < 1");
  }
  if (diffusion.max_steps < 0) fail("diffusion.max_steps", "must be >= 0");
  if (genuine_max_steps < 0) fail("diffusion.genuine_max_steps", "must be >= 0");
  if (diffusion.batch_size < 1) fail("diffusion.batch_size", "must be >= 1");
  if (!(diffusion.learning_rate > 0)) fail("diffusion.learning_rate", "must be > 0");
  if (!(genuine_learning_rate > 0)) fail("diffusion.genuine_learning_rate", "must be > 0");
  if (diffusion.decay_every < 0) fail("diffusion.decay_every", "must be >= 0");
  if (diffusion_max_images < 0) fail("diffusion.max_images", "must be >= 0");
  if (despoof_steps < 1) fail("despoof.steps", "must be >= 1");
  if (detector_train.max_steps < 1) fail("detector.max_steps", "must be >= 1");
  if (detector_train.batch_size < 1) fail("detector.batch_size", "must be >= 1");
  if (detector_train.decay_every < 1) fail("detector.decay_every", "must be >= 1");
  if (domains.find(intra_domain) == std::string::npos && scheme == ProtocolScheme::intra) {
    fail("protocol.intra_domain", std::string("domain ") + intra_domain + " is not generated");
  }
  if (scheme != ProtocolScheme::intra && domains.size() < 2) fail("protocol.scheme", "cross protocols need both domains");
  if (score_fusion && !is_two_stream(detector.inputs)) fail("detector.score_fusion", "needs a two-stream detector");
  try {
    DenoiserConfig d = denoiser;
    d.image_size = image_size;
    d.validate();
    DetectorConfig k = detector;
    k.image_size = image_size;
    k.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

NoiseSchedule RunConfig::schedule() const { return build_linear_schedule(schedule_steps, beta_start, beta_end); }

std::vector<ConfigKey> config_keys() {
  const RunConfig defaults;
  std::vector<ConfigKey> out;
  for (const auto& f : fields()) out.push_back({f.key, f.doc, f.get(defaults)});
  return out;
}

void set_config_value(RunConfig& c, const std::string& key, const std::string& value) {
  const Field* f = find_field(key);
  if (!f) throw ConfigError("unknown config key '" + key + "'");
  f->set(c, key, value);
}

RunConfig parse_config(const std::string& text, RunConfig c) {
  std::istringstream is(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("config line " + std::to_string(lineno) + ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value', got '" + line + "'");
    }
    const auto name = trim(line.substr(0, eq));
    const auto key = section.empty() ? name : section + "." + name;
    set_config_value(c, key, trim(line.substr(eq + 1)));
  }
  c.denoiser.image_size = c.image_size;
  c.detector.image_size = c.image_size;
  c.validate();
  return c;
}

RunConfig load_config(const std::string& path, RunConfig base) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read config '" + path + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

std::string format_config(const RunConfig& c) {
  std::string out, section;
  for (const auto& f : fields()) {
    const auto dot = f.key.find('.');
    const auto sec = f.key.substr(0, dot);
    if (sec != section) {
      if (!section.empty()) out += '\n';
      out += "[" + sec + "]\n";
      section = sec;
    }
    out += "# " + f.doc + "\n" + f.key.substr(dot + 1) + " = " + f.get(c) + "\n";
  }
  return out;
}

}  // namespace despoof
