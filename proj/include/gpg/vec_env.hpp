#pragma once

#include <memory>
#include <string>
#include <vector>

#include "gpg/env.hpp"
#include "gpg/tabular.hpp"

namespace gpg {

// N independent copies of one environment with autoreset: when a slot
// finishes its episode the slot immediately starts a fresh one, the returned
// observation is the fresh reset observation, and the pre-reset observation
// is kept as final_observation for bootstrapped estimators. Slot k draws
// from stream Rng(seed, k), so trajectories are independent of stepping
// order and of how many slots exist beside k.
class VectorizedEnv {
 public:
  struct SlotStep {
    double reward = 0.0;
    bool terminated = false;
    bool truncated = false;
    Observation final_observation;  // meaningful only when terminated || truncated
  };

  VectorizedEnv(const Env& prototype, int num_envs, std::uint64_t seed) {
    if (num_envs <= 0) throw std::invalid_argument("VectorizedEnv: num_envs must be positive");
    envs_.reserve(num_envs);
    rngs_.reserve(num_envs);
    for (int i = 0; i < num_envs; ++i) {
      envs_.push_back(prototype.clone_fresh());
      rngs_.emplace_back(seed, static_cast<std::uint64_t>(i));
    }
    observations_.resize(num_envs);
    timesteps_.assign(num_envs, 0);
    for (int i = 0; i < num_envs; ++i) observations_[i] = envs_[i]->reset(rngs_[i]);
  }

  int num_envs() const { return static_cast<int>(envs_.size()); }
  const EnvSpec& spec() const { return envs_.front()->spec(); }
  const Observation& observation(int slot) const { return observations_[slot]; }
  int episode_timestep(int slot) const { return timesteps_[slot]; }

  void step(const std::vector<Action>& actions, std::vector<SlotStep>& out) {
    if (actions.size() != envs_.size())
      throw std::invalid_argument("VectorizedEnv::step: expected " +
                                  std::to_string(envs_.size()) + " actions, got " +
                                  std::to_string(actions.size()));
    out.resize(envs_.size());
    for (std::size_t i = 0; i < envs_.size(); ++i) {
      StepOutcome outcome = envs_[i]->step(actions[i], rngs_[i]);
      SlotStep& slot = out[i];
      slot.reward = outcome.reward;
      slot.terminated = outcome.terminated;
      slot.truncated = outcome.truncated;
      if (outcome.terminated || outcome.truncated) {
        slot.final_observation = std::move(outcome.observation);
        observations_[i] = envs_[i]->reset(rngs_[i]);
        timesteps_[i] = 0;
      } else {
        observations_[i] = std::move(outcome.observation);
        ++timesteps_[i];
      }
    }
  }

 private:
  std::vector<std::unique_ptr<Env>> envs_;
  std::vector<Rng> rngs_;
  std::vector<Observation> observations_;
  std::vector<int> timesteps_;
};

}  // namespace gpg
