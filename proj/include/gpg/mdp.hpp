#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "gpg/errors.hpp"

namespace gpg {

// Observations are either a discrete state index or a dense real vector;
// actions likewise. Everything downstream dispatches on the alternative.
using Observation = std::variant<int, std::vector<double>>;
using Action = std::variant<int, std::vector<double>>;

inline bool is_discrete(const Observation& o) { return std::holds_alternative<int>(o); }
inline int discrete_value(const Observation& o) { return std::get<int>(o); }
inline const std::vector<double>& dense_value(const Observation& o) {
  return std::get<std::vector<double>>(o);
}

inline bool is_discrete_action(const Action& a) { return std::holds_alternative<int>(a); }
inline int discrete_action(const Action& a) { return std::get<int>(a); }
inline const std::vector<double>& dense_action(const Action& a) {
  return std::get<std::vector<double>>(a);
}

// One environment transition as recorded during rollout collection.
// episode_timestep counts within the episode and restarts at 0 on autoreset.
// group_timestep is the step's position within the trajectory the group
// estimator sees: the rollout-slice index for vectorized collection (all
// slices share the same return-truncation horizon at equal positions, so
// time bins stay comparable), and simply the episode timestep for directly
// sampled fixed-duration trajectories.
struct StepRecord {
  Observation observation;
  Action action;
  double reward = 0.0;
  double behavior_log_prob = 0.0;
  int episode_timestep = 0;
  int group_timestep = 0;
  bool terminated = false;
  bool truncated = false;
};

// A maximal run of steps belonging to one episode within a rollout buffer.
// complete is true iff the last step terminated; cap-truncated episodes and
// runs cut off by the end of the buffer are both complete = false.
// final_observation holds s_{T+1} when the episode did not terminate (used
// only by bootstrapped estimators; group baselines never touch it).
struct EpisodeSegment {
  std::vector<StepRecord> steps;
  bool complete = false;
  int env_slot = 0;
  std::optional<Observation> final_observation;
};

// The group of trajectories collected in one iteration. Autoresets make
// segments.size() >= nominal_group_size.
struct RolloutGroup {
  std::vector<EpisodeSegment> segments;
  int nominal_group_size = 0;
  long iteration_index = 0;
};

// Per-segment, per-step discounted returns, aligned with group.segments.
using ReturnsTable = std::vector<std::vector<double>>;

// Discounted returns by backward recurrence: R_T = r_T, R_t = r_t + gamma R_{t+1}.
inline std::vector<double> compute_returns(const EpisodeSegment& segment, double gamma) {
  if (segment.steps.empty()) throw std::invalid_argument("compute_returns: empty segment");
  if (!(gamma >= 0.0 && gamma <= 1.0))
    throw std::invalid_argument("compute_returns: gamma must be in [0,1]");
  std::vector<double> returns(segment.steps.size());
  double acc = 0.0;
  for (std::size_t i = segment.steps.size(); i-- > 0;) {
    acc = segment.steps[i].reward + gamma * acc;
    returns[i] = acc;
  }
  return returns;
}

inline ReturnsTable compute_group_returns(const RolloutGroup& group, double gamma) {
  ReturnsTable table;
  table.reserve(group.segments.size());
  for (const auto& segment : group.segments) table.push_back(compute_returns(segment, gamma));
  return table;
}

// Splits per-env step streams into episode segments at done markers. The
// trailing unfinished run of each stream becomes a segment with
// complete = false. Streams are validated: a done step must be followed by
// episode_timestep 0, timesteps must advance by 1 inside a segment, and the
// terminated/truncated flags are mutually exclusive. group_timestep is
// stamped with each record's position in its stream.
inline RolloutGroup segment_rollout(const std::vector<std::vector<StepRecord>>& streams,
                                    long iteration_index = 0) {
  RolloutGroup group;
  group.nominal_group_size = static_cast<int>(streams.size());
  group.iteration_index = iteration_index;
  for (std::size_t env = 0; env < streams.size(); ++env) {
    const auto& stream = streams[env];
    EpisodeSegment current;
    current.env_slot = static_cast<int>(env);
    bool previous_done = false;
    for (std::size_t i = 0; i < stream.size(); ++i) {
      const StepRecord& record = stream[i];
      if (record.terminated && record.truncated)
        throw CorruptionError("segment_rollout: step flags both terminated and truncated (env " +
                              std::to_string(env) + ", index " + std::to_string(i) + ")");
      if (current.steps.empty()) {
        if (previous_done && record.episode_timestep != 0)
          throw CorruptionError(
              "segment_rollout: done not followed by reset (env " + std::to_string(env) +
              ", index " + std::to_string(i) + ")");
      } else {
        if (record.episode_timestep != current.steps.back().episode_timestep + 1)
          throw CorruptionError("segment_rollout: non-consecutive episode timesteps (env " +
                                std::to_string(env) + ", index " + std::to_string(i) + ")");
      }
      current.steps.push_back(record);
      current.steps.back().group_timestep = static_cast<int>(i);
      if (record.terminated || record.truncated) {
        current.complete = record.terminated;
        group.segments.push_back(std::move(current));
        current = EpisodeSegment{};
        current.env_slot = static_cast<int>(env);
        previous_done = true;
      }
    }
    if (!current.steps.empty()) {
      current.complete = false;
      group.segments.push_back(std::move(current));
    }
  }
  return group;
}

}  // namespace gpg
