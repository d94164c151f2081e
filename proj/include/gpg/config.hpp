#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "gpg/advantage.hpp"
#include "gpg/errors.hpp"

namespace gpg {

enum class Algorithm { gpg, ppo, grpo_outcome };

inline Algorithm parse_algorithm(const std::string& text) {
  if (text == "gpg") return Algorithm::gpg;
  if (text == "ppo") return Algorithm::ppo;
  if (text == "grpo" || text == "grpo-outcome") return Algorithm::grpo_outcome;
  throw ConfigError("unknown algorithm '" + text + "' (expected gpg|ppo|grpo-outcome)");
}

inline std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::gpg: return "gpg";
    case Algorithm::ppo: return "ppo";
    case Algorithm::grpo_outcome: return "grpo-outcome";
  }
  return "?";
}

// Everything a training run needs. Defaults mirror the reference PPO family
// for classic control; any key can be overridden from a config file or the
// command line.
struct TrainConfig {
  std::string env_id = "cartpole";
  Algorithm algorithm = Algorithm::gpg;
  BinningConfig binning{BinningKind::time, 0.0};
  std::string policy = "mlp";  // "mlp" | "tabular"
  std::vector<int> hidden = {64, 64};

  double gamma = 0.99;
  double gae_lambda = 0.95;  // PPO only
  double clip_eps = 0.2;
  double learning_rate = 2.5e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-5;
  int update_epochs = 4;
  int num_minibatches = 4;
  int num_envs = 16;
  int rollout_length = 128;
  long iterations = 200;
  double entropy_coef = 0.01;
  double value_coef = 0.5;  // PPO only
  bool clip_vloss = false;  // PPO only
  double max_grad_norm = 0.5;
  bool normalize_adv = true;
  bool anneal_lr = true;
  bool exclude_truncated_from_update = false;
  bool loo_baseline = false;
  int eval_seeds = 5;
  std::uint64_t seed = 1;

  void validate() const {
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("gamma must be in [0,1]");
    if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) throw ConfigError("gae_lambda must be in [0,1]");
    if (!(clip_eps > 0.0)) throw ConfigError("clip_eps must be positive");
    if (update_epochs <= 0 || num_minibatches <= 0 || num_envs <= 0 || rollout_length <= 0)
      throw ConfigError("update_epochs, num_minibatches, num_envs, rollout_length must be positive");
    if (iterations < 0) throw ConfigError("iterations must be nonnegative");
    if (eval_seeds <= 0) throw ConfigError("eval_seeds must be positive");
    if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be nonnegative");
    if (!(max_grad_norm > 0.0)) throw ConfigError("max_grad_norm must be positive");
  }
};

namespace detail {

inline bool parse_bool(const std::string& value, const std::string& key) {
  if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
  if (value == "false" || value == "0" || value == "no" || value == "off") return false;
  throw ConfigError("config key '" + key + "': expected a boolean, got '" + value + "'");
}

inline double parse_double(const std::string& value, const std::string& key) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected a number, got '" + value + "'");
  }
}

inline long parse_long(const std::string& value, const std::string& key) {
  try {
    std::size_t used = 0;
    const long v = std::stol(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected an integer, got '" + value + "'");
  }
}

inline std::vector<int> parse_int_list(const std::string& value, const std::string& key) {
  std::vector<int> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    out.push_back(static_cast<int>(parse_long(item, key)));
  }
  return out;
}

}  // namespace detail

inline void apply_config_key(TrainConfig& cfg, const std::string& key, const std::string& value) {
  using namespace detail;
  if (key == "env") cfg.env_id = value;
  else if (key == "algorithm" || key == "algo") cfg.algorithm = parse_algorithm(value);
  else if (key == "binning") cfg.binning = parse_binning(value);
  else if (key == "policy") cfg.policy = value;
  else if (key == "hidden") cfg.hidden = parse_int_list(value, key);
  else if (key == "gamma") cfg.gamma = parse_double(value, key);
  else if (key == "gae_lambda") cfg.gae_lambda = parse_double(value, key);
  else if (key == "clip_eps") cfg.clip_eps = parse_double(value, key);
  else if (key == "learning_rate") cfg.learning_rate = parse_double(value, key);
  else if (key == "adam_beta1") cfg.adam_beta1 = parse_double(value, key);
  else if (key == "adam_beta2") cfg.adam_beta2 = parse_double(value, key);
  else if (key == "adam_eps") cfg.adam_eps = parse_double(value, key);
  else if (key == "update_epochs") cfg.update_epochs = static_cast<int>(parse_long(value, key));
  else if (key == "num_minibatches") cfg.num_minibatches = static_cast<int>(parse_long(value, key));
  else if (key == "num_envs") cfg.num_envs = static_cast<int>(parse_long(value, key));
  else if (key == "rollout_length") cfg.rollout_length = static_cast<int>(parse_long(value, key));
  else if (key == "iterations") cfg.iterations = parse_long(value, key);
  else if (key == "entropy_coef") cfg.entropy_coef = parse_double(value, key);
  else if (key == "value_coef") cfg.value_coef = parse_double(value, key);
  else if (key == "clip_vloss") cfg.clip_vloss = parse_bool(value, key);
  else if (key == "max_grad_norm") cfg.max_grad_norm = parse_double(value, key);
  else if (key == "normalize_adv") cfg.normalize_adv = parse_bool(value, key);
  else if (key == "anneal_lr") cfg.anneal_lr = parse_bool(value, key);
  else if (key == "exclude_truncated_from_update")
    cfg.exclude_truncated_from_update = parse_bool(value, key);
  else if (key == "loo_baseline") cfg.loo_baseline = parse_bool(value, key);
  else if (key == "eval_seeds") cfg.eval_seeds = static_cast<int>(parse_long(value, key));
  else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(parse_long(value, key));
  else throw ConfigError("unknown config key: " + key);
}

// Flat key=value lines; '#' starts a comment; blank lines ignored.
inline std::vector<std::pair<std::string, std::string>> read_key_value_file(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  std::vector<std::pair<std::string, std::string>> entries;
  std::string line;
  int line_no = 0;
  auto trim = [](std::string s) {
    const auto begin = s.find_first_not_of(" \t\r");
    const auto end = s.find_last_not_of(" \t\r");
    return begin == std::string::npos ? std::string() : s.substr(begin, end - begin + 1);
  };
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(line_no) + ": expected key=value");
    entries.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return entries;
}

inline TrainConfig load_train_config(const std::string& path) {
  TrainConfig cfg;
  for (const auto& [key, value] : read_key_value_file(path)) apply_config_key(cfg, key, value);
  return cfg;
}

// Full key=value dump, sorted, suitable for config.resolved and for loading
// back with load_train_config.
inline std::string serialize_config(const TrainConfig& cfg) {
  std::map<std::string, std::string> kv;
  auto num = [](double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
  };
  kv["env"] = cfg.env_id;
  kv["algorithm"] = to_string(cfg.algorithm);
  kv["binning"] = to_string(cfg.binning);
  kv["policy"] = cfg.policy;
  {
    std::string h;
    for (std::size_t i = 0; i < cfg.hidden.size(); ++i)
      h += (i ? "," : "") + std::to_string(cfg.hidden[i]);
    kv["hidden"] = h;
  }
  kv["gamma"] = num(cfg.gamma);
  kv["gae_lambda"] = num(cfg.gae_lambda);
  kv["clip_eps"] = num(cfg.clip_eps);
  kv["learning_rate"] = num(cfg.learning_rate);
  kv["adam_beta1"] = num(cfg.adam_beta1);
  kv["adam_beta2"] = num(cfg.adam_beta2);
  kv["adam_eps"] = num(cfg.adam_eps);
  kv["update_epochs"] = std::to_string(cfg.update_epochs);
  kv["num_minibatches"] = std::to_string(cfg.num_minibatches);
  kv["num_envs"] = std::to_string(cfg.num_envs);
  kv["rollout_length"] = std::to_string(cfg.rollout_length);
  kv["iterations"] = std::to_string(cfg.iterations);
  kv["entropy_coef"] = num(cfg.entropy_coef);
  kv["value_coef"] = num(cfg.value_coef);
  kv["clip_vloss"] = cfg.clip_vloss ? "true" : "false";
  kv["max_grad_norm"] = num(cfg.max_grad_norm);
  kv["normalize_adv"] = cfg.normalize_adv ? "true" : "false";
  kv["anneal_lr"] = cfg.anneal_lr ? "true" : "false";
  kv["exclude_truncated_from_update"] = cfg.exclude_truncated_from_update ? "true" : "false";
  kv["loo_baseline"] = cfg.loo_baseline ? "true" : "false";
  kv["eval_seeds"] = std::to_string(cfg.eval_seeds);
  kv["seed"] = std::to_string(cfg.seed);
  std::string out;
  for (const auto& [key, value] : kv) out += key + "=" + value + "\n";
  return out;
}

}  // namespace gpg
