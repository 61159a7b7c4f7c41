#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "guiprobe/attack.hpp"
#include "guiprobe/noise.hpp"

namespace guiprobe {

// Everything a reproducible run needs. Parsing is strict: unknown keys are
// rejected at every nesting level.
struct RunConfig {
  std::uint64_t master_seed = 0;
  std::string corpus_dir;
  std::string checkpoint;
  std::string split = "test";
  std::string out_dir = "run_out";
  int workers = 1;
  int max_samples = -1;  // cap on evaluated samples; -1 = whole split
  std::vector<NoiseSpec> noise_specs;        // noise mode; empty -> default grid
  std::vector<long long> pixel_budgets;      // extra resize_budget sweep points
  AttackConfig attack;
  TargetSpec target;  // targeted mode; empty tokens -> derived from checkpoint

  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig from_file(const std::string& path);
  nlohmann::json to_json() const;
};

nlohmann::json noise_spec_to_json(const NoiseSpec& s);
NoiseSpec noise_spec_from_json(const nlohmann::json& j);
nlohmann::json attack_config_to_json(const AttackConfig& a);
AttackConfig attack_config_from_json(const nlohmann::json& j);
nlohmann::json target_spec_to_json(const TargetSpec& t);
TargetSpec target_spec_from_json(const nlohmann::json& j);

}  // namespace guiprobe
