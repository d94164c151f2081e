#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "gpg/errors.hpp"
#include "gpg/mdp.hpp"

namespace gpg {

constexpr double kStdFloor = 1e-8;  // denominator guard for every std division

enum class BinningKind { universal, time, spatial, spatial_time, discrete_state };

struct BinningConfig {
  BinningKind kind = BinningKind::time;
  double epsilon = 0.0;  // spatial cell size
};

// Grammar: "universal" | "time" | "spatial:<eps>" | "spatialtime:<eps>" | "state".
inline BinningConfig parse_binning(const std::string& text) {
  BinningConfig cfg;
  if (text == "universal") {
    cfg.kind = BinningKind::universal;
  } else if (text == "time") {
    cfg.kind = BinningKind::time;
  } else if (text == "state") {
    cfg.kind = BinningKind::discrete_state;
  } else if (text.rfind("spatial:", 0) == 0 || text.rfind("spatialtime:", 0) == 0) {
    const bool timed = text.rfind("spatialtime:", 0) == 0;
    cfg.kind = timed ? BinningKind::spatial_time : BinningKind::spatial;
    const std::string arg = text.substr(timed ? 12 : 8);
    std::size_t used = 0;
    double eps = 0.0;
    try {
      eps = std::stod(arg, &used);
    } catch (const std::exception&) {
      throw ConfigError("bad binning spec '" + text + "': cell size must be a number");
    }
    if (used != arg.size() || !(eps > 0.0) || !std::isfinite(eps))
      throw ConfigError("bad binning spec '" + text + "': cell size must be a positive number");
    cfg.epsilon = eps;
  } else {
    throw ConfigError("unknown binning '" + text +
                      "' (expected universal|time|spatial:<eps>|spatialtime:<eps>|state)");
  }
  return cfg;
}

inline std::string to_string(const BinningConfig& cfg) {
  switch (cfg.kind) {
    case BinningKind::universal: return "universal";
    case BinningKind::time: return "time";
    case BinningKind::spatial: return "spatial:" + std::to_string(cfg.epsilon);
    case BinningKind::spatial_time: return "spatialtime:" + std::to_string(cfg.epsilon);
    case BinningKind::discrete_state: return "state";
  }
  return "?";
}

// Bin identity. Comparison is exact integer comparison: continuous
// coordinates are quantized to a lattice before they get here, so no
// floating-point values ever act as keys.
struct BinKey {
  BinningKind kind = BinningKind::universal;
  std::int32_t time = 0;
  std::int32_t state = 0;
  std::vector<std::int64_t> lattice;

  bool operator==(const BinKey& other) const = default;
};

struct BinKeyHash {
  std::size_t operator()(const BinKey& key) const {
    std::uint64_t h = 0x9E3779B97F4A7C15ULL ^ static_cast<std::uint64_t>(key.kind);
    auto mix = [&h](std::uint64_t v) {
      h ^= v + 0x9E3779B97F4A7C15ULL + (h << 6) + (h >> 2);
      h *= 0xBF58476D1CE4E5B9ULL;
      h ^= h >> 29;
    };
    mix(static_cast<std::uint64_t>(static_cast<std::uint32_t>(key.time)));
    mix(static_cast<std::uint64_t>(static_cast<std::uint32_t>(key.state)));
    for (std::int64_t v : key.lattice) mix(static_cast<std::uint64_t>(v));
    return static_cast<std::size_t>(h);
  }
};

// Round-half-to-even, the documented tie rule for spatial quantization
// (0.25 / 0.5 = 0.5 lands on lattice point 0, not 1).
inline std::int64_t round_half_even(double x) {
  const double floor_x = std::floor(x);
  const double frac = x - floor_x;
  if (frac > 0.5) return static_cast<std::int64_t>(floor_x) + 1;
  if (frac < 0.5) return static_cast<std::int64_t>(floor_x);
  const std::int64_t lo = static_cast<std::int64_t>(floor_x);
  return (lo % 2 == 0) ? lo : lo + 1;
}

inline BinKey bin_key(const Observation& obs, int episode_timestep, const BinningConfig& cfg) {
  BinKey key;
  key.kind = cfg.kind;
  switch (cfg.kind) {
    case BinningKind::universal:
      return key;
    case BinningKind::time:
      key.time = episode_timestep;
      return key;
    case BinningKind::discrete_state:
      if (!is_discrete(obs))
        throw ConfigError("state binning requires discrete observations");
      key.state = discrete_value(obs);
      return key;
    case BinningKind::spatial:
    case BinningKind::spatial_time: {
      if (is_discrete(obs))
        throw ConfigError("spatial binning requires real-vector observations");
      const auto& v = dense_value(obs);
      key.lattice.resize(v.size());
      for (std::size_t i = 0; i < v.size(); ++i)
        key.lattice[i] = round_half_even(v[i] / cfg.epsilon);
      if (cfg.kind == BinningKind::spatial_time) key.time = episode_timestep;
      return key;
    }
  }
  throw std::logic_error("unreachable");
}

struct BinStats {
  double sum = 0.0;
  long count = 0;
  double mean() const { return sum / static_cast<double>(count); }
};

using BinTable = std::unordered_map<BinKey, BinStats, BinKeyHash>;

// First-visit insertion over the group: scanning each segment forward, a
// step's return joins its bin only if no earlier step of the same segment
// mapped to that bin.
inline BinTable build_bin_table(const RolloutGroup& group, const ReturnsTable& returns,
                                const BinningConfig& cfg) {
  if (returns.size() != group.segments.size())
    throw std::invalid_argument("build_bin_table: returns not aligned with group");
  BinTable table;
  std::unordered_set<BinKey, BinKeyHash> seen;
  for (std::size_t i = 0; i < group.segments.size(); ++i) {
    const auto& steps = group.segments[i].steps;
    if (returns[i].size() != steps.size())
      throw std::invalid_argument("build_bin_table: returns row has wrong length");
    seen.clear();
    for (std::size_t t = 0; t < steps.size(); ++t) {
      BinKey key = bin_key(steps[t].observation, steps[t].group_timestep, cfg);
      if (seen.insert(key).second) {
        BinStats& stats = table[std::move(key)];
        stats.sum += returns[i][t];
        stats.count += 1;
      }
    }
  }
  return table;
}

struct AdvantageSet {
  std::vector<std::vector<double>> per_step;  // aligned with group.segments
  std::string estimator;
};

// A_t = R_t - mean(bin of s_t). Every step gets the bin mean, including
// repeat visits; only insertion was first-visit gated. With leave_one_out,
// the step whose return was inserted uses the mean of the other members and
// falls back to 0 when it is alone in its bin.
inline AdvantageSet gpg_advantages(const RolloutGroup& group, const ReturnsTable& returns,
                                   const BinTable& table, const BinningConfig& cfg,
                                   bool leave_one_out = false) {
  if (returns.size() != group.segments.size())
    throw std::invalid_argument("gpg_advantages: returns not aligned with group");
  AdvantageSet result;
  result.estimator = "gpg:" + to_string(cfg);
  result.per_step.resize(group.segments.size());
  std::unordered_set<BinKey, BinKeyHash> seen;
  for (std::size_t i = 0; i < group.segments.size(); ++i) {
    const auto& steps = group.segments[i].steps;
    auto& row = result.per_step[i];
    row.resize(steps.size());
    seen.clear();
    for (std::size_t t = 0; t < steps.size(); ++t) {
      BinKey key = bin_key(steps[t].observation, steps[t].group_timestep, cfg);
      const auto it = table.find(key);
      if (it == table.end())
        throw std::logic_error("gpg_advantages: bin missing for a visited step (table built "
                               "from a different group?)");
      const BinStats& stats = it->second;
      const bool first_visit = seen.insert(std::move(key)).second;
      if (leave_one_out && first_visit) {
        row[t] = stats.count >= 2
                     ? returns[i][t] - (stats.sum - returns[i][t]) / static_cast<double>(stats.count - 1)
                     : 0.0;
      } else {
        row[t] = returns[i][t] - stats.mean();
      }
    }
  }
  return result;
}

inline std::pair<double, double> mean_std_population(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("mean_std_population: empty input");
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  var /= static_cast<double>(values.size());
  return {mean, std::sqrt(var)};
}

// Outcome-supervision advantages: one scalar reward per trajectory,
// group-normalized. Population std with a floor so a degenerate group maps
// to all-zero advantages.
inline std::vector<double> grpo_outcome_advantages(std::span<const double> terminal_rewards,
                                                   double eps_num = kStdFloor) {
  if (terminal_rewards.size() < 2)
    throw std::invalid_argument("grpo_outcome_advantages: need at least 2 trajectories");
  const auto [mean, std_dev] = mean_std_population(terminal_rewards);
  const double denom = std::max(std_dev, eps_num);
  std::vector<double> out(terminal_rewards.size());
  for (std::size_t i = 0; i < terminal_rewards.size(); ++i)
    out[i] = (terminal_rewards[i] - mean) / denom;
  return out;
}

// Truncated GAE by backward recurrence. values has one entry per state plus
// the bootstrap V(s_{T+1}) (0 when the segment terminated).
inline std::vector<double> gae_advantages(std::span<const double> rewards,
                                          std::span<const double> values, double gamma,
                                          double lambda) {
  if (rewards.empty()) throw std::invalid_argument("gae_advantages: empty segment");
  if (values.size() != rewards.size() + 1)
    throw std::invalid_argument("gae_advantages: need rewards.size()+1 values (incl. bootstrap)");
  std::vector<double> adv(rewards.size());
  double acc = 0.0;
  for (std::size_t t = rewards.size(); t-- > 0;) {
    const double delta = rewards[t] + gamma * values[t + 1] - values[t];
    acc = delta + gamma * lambda * acc;
    adv[t] = acc;
  }
  return adv;
}

// (a - mean) / max(std, eps), population std. A singleton batch maps to {0}.
inline std::vector<double> normalize_advantages(std::span<const double> batch,
                                                double eps_num = kStdFloor) {
  if (batch.empty()) throw std::invalid_argument("normalize_advantages: empty batch");
  const auto [mean, std_dev] = mean_std_population(batch);
  const double denom = std::max(std_dev, eps_num);
  std::vector<double> out(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) out[i] = (batch[i] - mean) / denom;
  return out;
}

}  // namespace gpg
