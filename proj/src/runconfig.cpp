#include "guiprobe/runconfig.hpp"

#include <fstream>

#include "guiprobe/errors.hpp"

using nlohmann::json;

namespace guiprobe {

namespace {

void reject_unknown(const json& j, const std::vector<std::string>& known,
                    const std::string& where) {
  if (!j.is_object()) throw DataError("run config: " + where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    (void)value;
    bool ok = false;
    for (const auto& k : known)
      if (k == key) {
        ok = true;
        break;
      }
    if (!ok)
      throw DataError("run config: unknown key '" + key + "' in " + where);
  }
}

Box box_from_json(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 4)
    throw DataError("run config: " + where + " must be [x0,y0,x1,y1]");
  return Box{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(),
             j[3].get<double>()};
}

}  // namespace

json noise_spec_to_json(const NoiseSpec& s) {
  json j;
  j["kind"] = s.kind;
  j["params"] = s.params;
  j["seed"] = s.seed;
  return j;
}

NoiseSpec noise_spec_from_json(const json& j) {
  reject_unknown(j, {"kind", "params", "seed"}, "noise spec");
  NoiseSpec s;
  s.kind = j.at("kind").get<std::string>();
  if (j.contains("params"))
    s.params = j.at("params").get<std::map<std::string, double>>();
  if (j.contains("seed")) s.seed = j.at("seed").get<std::uint64_t>();
  s.validate();
  return s;
}

json attack_config_to_json(const AttackConfig& a) {
  return {{"epsilon", a.epsilon},     {"alpha", a.alpha},
          {"steps", a.steps},         {"init", a.init},
          {"objective", a.objective}, {"quantize_output", a.quantize_output}};
}

AttackConfig attack_config_from_json(const json& j) {
  reject_unknown(j, {"epsilon", "alpha", "steps", "init", "objective",
                     "quantize_output"},
                 "attack config");
  AttackConfig a;
  if (j.contains("epsilon")) a.epsilon = j.at("epsilon").get<double>();
  if (j.contains("alpha")) a.alpha = j.at("alpha").get<double>();
  if (j.contains("steps")) a.steps = j.at("steps").get<int>();
  if (j.contains("init")) a.init = j.at("init").get<std::string>();
  if (j.contains("objective")) a.objective = j.at("objective").get<std::string>();
  if (j.contains("quantize_output"))
    a.quantize_output = j.at("quantize_output").get<bool>();
  a.validate();
  return a;
}

json target_spec_to_json(const TargetSpec& t) {
  return {{"region", {t.region.x0, t.region.y0, t.region.x1, t.region.y1}},
          {"target_tokens", t.target_tokens}};
}

TargetSpec target_spec_from_json(const json& j) {
  reject_unknown(j, {"region", "target_tokens"}, "target spec");
  TargetSpec t;
  if (j.contains("region")) t.region = box_from_json(j.at("region"), "target region");
  if (j.contains("target_tokens"))
    t.target_tokens = j.at("target_tokens").get<std::string>();
  return t;
}

RunConfig RunConfig::from_json(const json& j) {
  reject_unknown(j,
                 {"master_seed", "corpus_dir", "checkpoint", "split", "out_dir",
                  "workers", "max_samples", "noise_specs", "pixel_budgets",
                  "attack", "target"},
                 "run config");
  RunConfig rc;
  if (j.contains("master_seed"))
    rc.master_seed = j.at("master_seed").get<std::uint64_t>();
  if (j.contains("corpus_dir")) rc.corpus_dir = j.at("corpus_dir").get<std::string>();
  if (j.contains("checkpoint")) rc.checkpoint = j.at("checkpoint").get<std::string>();
  if (j.contains("split")) rc.split = j.at("split").get<std::string>();
  if (j.contains("out_dir")) rc.out_dir = j.at("out_dir").get<std::string>();
  if (j.contains("workers")) rc.workers = j.at("workers").get<int>();
  if (j.contains("max_samples")) rc.max_samples = j.at("max_samples").get<int>();
  if (j.contains("noise_specs"))
    for (const auto& s : j.at("noise_specs"))
      rc.noise_specs.push_back(noise_spec_from_json(s));
  if (j.contains("pixel_budgets"))
    rc.pixel_budgets = j.at("pixel_budgets").get<std::vector<long long>>();
  if (j.contains("attack")) rc.attack = attack_config_from_json(j.at("attack"));
  if (j.contains("target")) rc.target = target_spec_from_json(j.at("target"));
  if (rc.workers < 1) throw DataError("run config: workers must be >= 1");
  return rc;
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("run config: cannot read '" + path + "'");
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw DataError(std::string("run config: bad JSON in '") + path + "': " +
                    e.what());
  }
  return from_json(j);
}

json RunConfig::to_json() const {
  json specs = json::array();
  for (const auto& s : noise_specs) specs.push_back(noise_spec_to_json(s));
  return {{"master_seed", master_seed},
          {"corpus_dir", corpus_dir},
          {"checkpoint", checkpoint},
          {"split", split},
          {"out_dir", out_dir},
          {"workers", workers},
          {"max_samples", max_samples},
          {"noise_specs", specs},
          {"pixel_budgets", pixel_budgets},
          {"attack", attack_config_to_json(attack)},
          {"target", target_spec_to_json(target)}};
}

}  // namespace guiprobe
