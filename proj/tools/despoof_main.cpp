#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <iostream>
#include <optional>

#include "despoof/pipeline.hpp"

using namespace despoof;

namespace {

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::vector<std::string> overrides;  // "section.name=value"
};

RunConfig resolve(const Globals& g, const std::vector<std::pair<std::string, std::string>>& extra) {
  RunConfig c = g.config_path.empty() ? RunConfig{} : load_config(g.config_path);
  for (const auto& kv : g.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    set_config_value(c, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (g.seed) c.seed = *g.seed;
  if (g.out) c.out = *g.out;
  for (const auto& [k, v] : extra) set_config_value(c, k, v);
  c.validate();
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  spdlog::set_default_logger(spdlog::stderr_color_mt("despoof"));
  spdlog::set_pattern("%Y-%m-%dT%H:%M:%S.%e\t%l\t%v");

  CLI::App app{"De-spoofing diffusion face anti-spoofing pipeline on a synthetic corpus"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "Config file (key = value with [sections])")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Root seed (overrides run.seed)");
  app.add_option("--out", g.out, "Output directory (overrides run.out)");
  app.add_option("--set", g.overrides, "Override one config key, e.g. --set detector.max_steps=200")->take_all();
  bool print_config = false;
  app.add_flag("--print-config", print_config, "Print the resolved config and exit");

  std::vector<std::pair<std::string, std::string>> extra;
  std::function<int(const RunConfig&)> action;

  auto* corpus = app.add_subcommand("corpus", "Render both synthetic domains, depth labels and manifests");
  corpus->callback([&] { action = cmd_corpus; });

  std::string domain = "all";
  auto* td = app.add_subcommand("train-diffusion", "Train the spoof-union (all) or genuine-only diffusion model");
  td->add_option("--domain", domain, "all | genuine")->check(CLI::IsMember({"all", "genuine"}));
  td->callback([&] {
    const auto tag = domain == "genuine" ? DomainTag::genuine_only : DomainTag::spoof_union;
    action = [tag](const RunConfig& c) { return cmd_train_diffusion(c, tag); };
  });

  std::optional<int> steps;
  auto* ds = app.add_subcommand("despoof", "Bridge every protocol image to the genuine domain and dump noise patterns");
  ds->add_option("--steps", steps, "ODE steps per direction (overrides despoof.steps)");
  ds->callback([&] { action = cmd_despoof; });

  std::optional<std::string> inputs;
  auto* tdet = app.add_subcommand("train-detector", "Train a detector on one input configuration");
  tdet->add_option("--inputs", inputs, "rgb | noise | rgb_rgb | rgb_noise")
      ->check(CLI::IsMember({"rgb", "noise", "rgb_rgb", "rgb_noise"}));
  tdet->add_option("--steps", steps, "Despoof steps whose noise patterns are used");
  tdet->callback([&] { action = cmd_train_detector; });

  std::optional<std::string> protocol;
  auto* ev = app.add_subcommand("eval", "Score the test split and write the metrics report");
  ev->add_option("--protocol", protocol, "intra | cross_ab | cross_ba")
      ->check(CLI::IsMember({"intra", "cross_ab", "cross_ba"}));
  ev->add_option("--inputs", inputs, "Detector input configuration to evaluate")
      ->check(CLI::IsMember({"rgb", "noise", "rgb_rgb", "rgb_noise"}));
  ev->add_option("--steps", steps, "Despoof steps whose noise patterns are used");
  ev->callback([&] { action = cmd_eval; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  if (steps) extra.emplace_back("despoof.steps", std::to_string(*steps));
  if (inputs) extra.emplace_back("detector.inputs", *inputs);
  if (protocol) extra.emplace_back("protocol.scheme", *protocol);

  RunConfig config;
  try {
    config = resolve(g, extra);
  } catch (const std::exception& e) {
    spdlog::error("config: {}", e.what());
    return 2;
  }
  if (print_config) {
    std::cout << format_config(config);
    return 0;
  }
  return action(config);
}
