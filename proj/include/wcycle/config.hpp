#pragma once

#include <map>

#include "wcycle/losses.hpp"
#include "wcycle/projector.hpp"
#include "wcycle/refine.hpp"
#include "wcycle/schedule.hpp"
#include "wcycle/trainer.hpp"
#include "wcycle/tuning.hpp"

namespace wcycle {

// Key/value configuration with INI-style sections. Values are kept as
// strings; typed readers parse on access. Section and key make the
// "section.key" path used in overrides and error messages.
class IniConfig {
 public:
  static IniConfig parse_string(const std::string& text, const std::string& origin = "<string>") {
    IniConfig cfg;
    std::string section;
    size_t line_no = 0;
    size_t pos = 0;
    while (pos <= text.size()) {
      size_t eol = text.find('\n', pos);
      if (eol == std::string::npos) eol = text.size();
      std::string line = text.substr(pos, eol - pos);
      pos = eol + 1;
      ++line_no;
      auto hash = line.find_first_of("#;");
      if (hash != std::string::npos) line = line.substr(0, hash);
      line = trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        require(line.back() == ']', origin + ":" + std::to_string(line_no) +
                                        ": malformed section header '" + line + "'");
        section = trim(line.substr(1, line.size() - 2));
        require(!section.empty(), origin + ": empty section name");
        continue;
      }
      auto eq = line.find('=');
      require(eq != std::string::npos, origin + ":" + std::to_string(line_no) +
                                           ": expected key = value, got '" + line + "'");
      std::string key = trim(line.substr(0, eq));
      std::string value = trim(line.substr(eq + 1));
      require(!key.empty(), origin + ":" + std::to_string(line_no) + ": empty key");
      std::string path = section.empty() ? key : section + "." + key;
      cfg.values_[path] = value;
    }
    return cfg;
  }

  static IniConfig parse_file(const std::string& path) {
    std::ifstream f(path);
    require(f.good(), "config: cannot read " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_string(ss.str(), path);
  }

  void set(const std::string& path, const std::string& value) { values_[path] = value; }

  // later sources win
  void merge_from(const IniConfig& other) {
    for (const auto& [k, v] : other.values_) values_[k] = v;
  }

  bool has(const std::string& path) const { return values_.count(path) > 0; }

  const std::map<std::string, std::string>& values() const { return values_; }

  std::string get_str(const std::string& path, const std::string& fallback) const {
    auto it = values_.find(path);
    return it == values_.end() ? fallback : it->second;
  }

  double get_double(const std::string& path, double fallback) const {
    auto it = values_.find(path);
    if (it == values_.end()) return fallback;
    try {
      size_t used = 0;
      double v = std::stod(it->second, &used);
      require(used == it->second.size(), "");
      return v;
    } catch (...) {
      throw std::runtime_error("config: field '" + path + "' expects a number, got '" +
                               it->second + "'");
    }
  }

  long get_long(const std::string& path, long fallback) const {
    auto it = values_.find(path);
    if (it == values_.end()) return fallback;
    try {
      size_t used = 0;
      long v = std::stol(it->second, &used);
      require(used == it->second.size(), "");
      return v;
    } catch (...) {
      throw std::runtime_error("config: field '" + path + "' expects an integer, got '" +
                               it->second + "'");
    }
  }

  bool get_bool(const std::string& path, bool fallback) const {
    auto it = values_.find(path);
    if (it == values_.end()) return fallback;
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw std::runtime_error("config: field '" + path + "' expects true/false, got '" +
                             it->second + "'");
  }

 private:
  static std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
  }

  std::map<std::string, std::string> values_;
};

// The resolved configuration of a run: defaults, overridden by a config
// file, overridden by command-line --set pairs.
struct RunConfig {
  uint64_t seed = 1;

  size_t dataset_n = 20000;
  int resolution = 32;

  GeneratorConfig generator;
  PretrainConfig pretrain;
  LossWeights weights;
  ScheduleConfig schedule;

  int train_batch = 8;
  double train_lr = 1e-4;

  RefinementConfig refine;
  TuningConfig tune;
  ProjectorConfig optimize;

  std::string edit_factor = "rotation";
  double edit_alpha = 4.0;
  double edit_target = 0.2;       // matched-magnitude target, radians for rotation
  int direction_samples = 2000;

  // every legal field, for schema validation
  static const std::vector<std::string>& known_keys() {
    static const std::vector<std::string> keys = {
        "run.seed", "dataset.n", "dataset.resolution",
        "generator.d_z", "generator.d_w", "generator.pretrain_steps",
        "generator.pretrain_batch", "generator.pretrain_lr_g", "generator.pretrain_lr_d",
        "generator.identity_steps", "generator.regressor_steps",
        "losses.l2", "losses.lpips", "losses.id", "losses.adv", "losses.delta",
        "losses.reg", "losses.noise",
        "schedule.len_w2wp", "schedule.len_soft", "schedule.len_hard",
        "schedule.t0", "schedule.t1", "schedule.t2",
        "schedule.delta_ramp", "schedule.adv_decay", "schedule.soft_steps",
        "train.batch", "train.lr",
        "refine.iterations", "refine.m_samples", "refine.lambda_reg", "refine.space",
        "refine.lr", "refine.resample_each_iteration",
        "tune.iterations", "tune.lambda_l2", "tune.lr",
        "optimize.steps", "optimize.lr", "optimize.lambda_noise", "optimize.space",
        "edit.factor", "edit.alpha", "edit.target", "edit.direction_samples",
    };
    return keys;
  }

  static RunConfig from_ini(const IniConfig& ini) {
    // reject unknown fields with their path
    const auto& known = known_keys();
    for (const auto& [k, v] : ini.values()) {
      if (std::find(known.begin(), known.end(), k) == known.end())
        throw std::runtime_error("config: unknown field '" + k + "'");
    }
    RunConfig c;
    c.seed = static_cast<uint64_t>(ini.get_long("run.seed", 1));
    c.dataset_n = static_cast<size_t>(ini.get_long("dataset.n", 20000));
    c.resolution = static_cast<int>(ini.get_long("dataset.resolution", 32));
    c.generator.d_z = static_cast<int>(ini.get_long("generator.d_z", 64));
    c.generator.d_w = static_cast<int>(ini.get_long("generator.d_w", 64));
    c.generator.img_res = c.resolution;
    c.pretrain.steps = ini.get_long("generator.pretrain_steps", 10000);
    c.pretrain.batch = static_cast<int>(ini.get_long("generator.pretrain_batch", 16));
    c.pretrain.lr_g = ini.get_double("generator.pretrain_lr_g", 1e-3);
    c.pretrain.lr_d = ini.get_double("generator.pretrain_lr_d", 1e-3);
    c.pretrain.identity_steps = static_cast<int>(ini.get_long("generator.identity_steps", 2500));
    c.pretrain.regressor_steps =
        static_cast<int>(ini.get_long("generator.regressor_steps", 3500));
    c.pretrain.seed = c.seed;
    c.weights.l2 = ini.get_double("losses.l2", 1.0);
    c.weights.lpips = ini.get_double("losses.lpips", 0.8);
    c.weights.id = ini.get_double("losses.id", 0.1);
    c.weights.adv = ini.get_double("losses.adv", 0.1);
    c.weights.delta = ini.get_double("losses.delta", 2e-4);
    c.weights.reg = ini.get_double("losses.reg", 1.0);
    c.weights.noise = ini.get_double("losses.noise", 0.01);
    c.schedule.len_w2wp = ini.get_long("schedule.len_w2wp", 10000);
    c.schedule.len_soft = ini.get_long("schedule.len_soft", 3000);
    c.schedule.len_hard = ini.get_long("schedule.len_hard", 2000);
    c.schedule.t0 = ini.get_long("schedule.t0", 1250);
    c.schedule.t1 = ini.get_long("schedule.t1", 200);
    c.schedule.t2 = ini.get_long("schedule.t2", 80);
    c.schedule.delta_ramp = ini.get_double("schedule.delta_ramp", 0.20);
    c.schedule.adv_decay = ini.get_double("schedule.adv_decay", 0.50);
    c.schedule.soft_steps = static_cast<int>(ini.get_long("schedule.soft_steps", 15));
    c.schedule.lambda_delta0 = c.weights.delta;
    c.schedule.lambda_adv0 = c.weights.adv;
    c.train_batch = static_cast<int>(ini.get_long("train.batch", 8));
    c.train_lr = ini.get_double("train.lr", 1e-4);
    c.refine.iterations = static_cast<int>(ini.get_long("refine.iterations", 15));
    c.refine.m_samples = static_cast<int>(ini.get_long("refine.m_samples", 7));
    c.refine.lambda_reg = ini.get_double("refine.lambda_reg", 1.0);
    c.refine.lr = ini.get_double("refine.lr", 1e-4);
    c.refine.resample_each_iteration = ini.get_bool("refine.resample_each_iteration", true);
    c.refine.space = parse_space(ini.get_str("refine.space", "wplus"), "refine.space");
    c.refine.weights = c.weights;
    c.refine.seed = c.seed;
    c.tune.iterations = static_cast<int>(ini.get_long("tune.iterations", 350));
    c.tune.lambda_l2 = ini.get_double("tune.lambda_l2", 1.0);
    c.tune.lr = ini.get_double("tune.lr", 3e-4);
    c.optimize.steps = static_cast<int>(ini.get_long("optimize.steps", 300));
    c.optimize.lr = ini.get_double("optimize.lr", 0.05);
    c.optimize.lambda_noise = ini.get_double("optimize.lambda_noise", 0.01);
    c.optimize.space = parse_space(ini.get_str("optimize.space", "w"), "optimize.space");
    c.optimize.seed = c.seed;
    c.edit_factor = ini.get_str("edit.factor", "rotation");
    c.edit_alpha = ini.get_double("edit.alpha", 4.0);
    c.edit_target = ini.get_double("edit.target", 0.2);
    c.direction_samples = static_cast<int>(ini.get_long("edit.direction_samples", 2000));

    c.weights.validate();
    c.schedule.validate();
    return c;
  }

  // resolved key=value view; feeds manifests and the config hash
  std::map<std::string, std::string> resolved() const {
    std::map<std::string, std::string> m;
    auto put_d = [&](const std::string& k, double v) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%.17g", v);
      m[k] = buf;
    };
    m["run.seed"] = std::to_string(seed);
    m["dataset.n"] = std::to_string(dataset_n);
    m["dataset.resolution"] = std::to_string(resolution);
    m["generator.d_z"] = std::to_string(generator.d_z);
    m["generator.d_w"] = std::to_string(generator.d_w);
    m["generator.pretrain_steps"] = std::to_string(pretrain.steps);
    m["generator.pretrain_batch"] = std::to_string(pretrain.batch);
    put_d("generator.pretrain_lr_g", pretrain.lr_g);
    put_d("generator.pretrain_lr_d", pretrain.lr_d);
    m["generator.identity_steps"] = std::to_string(pretrain.identity_steps);
    m["generator.regressor_steps"] = std::to_string(pretrain.regressor_steps);
    put_d("losses.l2", weights.l2);
    put_d("losses.lpips", weights.lpips);
    put_d("losses.id", weights.id);
    put_d("losses.adv", weights.adv);
    put_d("losses.delta", weights.delta);
    put_d("losses.reg", weights.reg);
    put_d("losses.noise", weights.noise);
    m["schedule.len_w2wp"] = std::to_string(schedule.len_w2wp);
    m["schedule.len_soft"] = std::to_string(schedule.len_soft);
    m["schedule.len_hard"] = std::to_string(schedule.len_hard);
    m["schedule.t0"] = std::to_string(schedule.t0);
    m["schedule.t1"] = std::to_string(schedule.t1);
    m["schedule.t2"] = std::to_string(schedule.t2);
    put_d("schedule.delta_ramp", schedule.delta_ramp);
    put_d("schedule.adv_decay", schedule.adv_decay);
    m["schedule.soft_steps"] = std::to_string(schedule.soft_steps);
    m["train.batch"] = std::to_string(train_batch);
    put_d("train.lr", train_lr);
    m["refine.iterations"] = std::to_string(refine.iterations);
    m["refine.m_samples"] = std::to_string(refine.m_samples);
    put_d("refine.lambda_reg", refine.lambda_reg);
    put_d("refine.lr", refine.lr);
    m["refine.resample_each_iteration"] = refine.resample_each_iteration ? "true" : "false";
    m["refine.space"] = refine.space == LatentSpace::W ? "w" : "wplus";
    m["tune.iterations"] = std::to_string(tune.iterations);
    put_d("tune.lambda_l2", tune.lambda_l2);
    put_d("tune.lr", tune.lr);
    m["optimize.steps"] = std::to_string(optimize.steps);
    put_d("optimize.lr", optimize.lr);
    put_d("optimize.lambda_noise", optimize.lambda_noise);
    m["optimize.space"] = optimize.space == LatentSpace::W ? "w" : "wplus";
    m["edit.factor"] = edit_factor;
    put_d("edit.alpha", edit_alpha);
    put_d("edit.target", edit_target);
    m["edit.direction_samples"] = std::to_string(direction_samples);
    return m;
  }

  std::string hash() const {
    uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& [k, v] : resolved()) {
      h = fnv1a(k, h);
      h = fnv1a(v, h);
    }
    return hex64(h);
  }

  TrainRunConfig train_run() const {
    TrainRunConfig t;
    t.batch = train_batch;
    t.lr = train_lr;
    t.seed = seed;
    t.weights = weights;
    t.schedule = schedule;
    return t;
  }

 private:
  static LatentSpace parse_space(const std::string& s, const std::string& field) {
    if (s == "w" || s == "W") return LatentSpace::W;
    if (s == "wplus" || s == "w+" || s == "W+") return LatentSpace::WPLUS;
    throw std::runtime_error("config: field '" + field + "' expects w or wplus, got '" + s +
                             "'");
  }
};

// defaults <- optional file <- command-line overrides ("section.key=value")
inline RunConfig resolve_config(const std::string& config_path,
                                const std::vector<std::string>& overrides) {
  IniConfig ini;
  if (!config_path.empty()) ini.merge_from(IniConfig::parse_file(config_path));
  for (const auto& ov : overrides) {
    auto eq = ov.find('=');
    require(eq != std::string::npos, "override must look like section.key=value: " + ov);
    ini.set(ov.substr(0, eq), ov.substr(eq + 1));
  }
  return RunConfig::from_ini(ini);
}

}  // namespace wcycle
