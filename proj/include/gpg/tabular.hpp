#pragma once

#include <cmath>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "gpg/env.hpp"
#include "gpg/errors.hpp"
#include "gpg/rng.hpp"

namespace gpg {

// Finite MDP with explicit dynamics P(s'|s,a), rewards r(s,a,s'), initial
// distribution rho0 and a fixed horizon. Row-major tensors indexed
// [s][a][s'].
struct TabularMdp {
  int num_states = 0;
  int num_actions = 0;
  int horizon = 0;
  std::vector<double> initial_dist;  // S
  std::vector<double> transitions;   // S*A*S
  std::vector<double> rewards;       // S*A*S

  double p(int s, int a, int s2) const {
    return transitions[(static_cast<std::size_t>(s) * num_actions + a) * num_states + s2];
  }
  double r(int s, int a, int s2) const {
    return rewards[(static_cast<std::size_t>(s) * num_actions + a) * num_states + s2];
  }

  double reward_bound() const {
    double bound = 0.0;
    for (int s = 0; s < num_states; ++s)
      for (int a = 0; a < num_actions; ++a)
        for (int s2 = 0; s2 < num_states; ++s2)
          if (p(s, a, s2) > 0.0) bound = std::max(bound, std::abs(r(s, a, s2)));
    return bound;
  }

  void validate() const {
    if (num_states <= 0 || num_actions <= 0 || horizon <= 0)
      throw std::invalid_argument("tabular mdp: S, A and T must be positive");
    if (initial_dist.size() != static_cast<std::size_t>(num_states) ||
        transitions.size() != static_cast<std::size_t>(num_states) * num_actions * num_states ||
        rewards.size() != transitions.size())
      throw std::invalid_argument("tabular mdp: tensor sizes do not match S, A");
    constexpr double kTol = 1e-12;
    double rho_sum = 0.0;
    for (double v : initial_dist) {
      if (!(v >= 0.0)) throw std::invalid_argument("tabular mdp: negative initial probability");
      rho_sum += v;
    }
    if (std::abs(rho_sum - 1.0) > kTol)
      throw std::invalid_argument("tabular mdp: initial distribution must sum to 1");
    for (int s = 0; s < num_states; ++s)
      for (int a = 0; a < num_actions; ++a) {
        double row = 0.0;
        for (int s2 = 0; s2 < num_states; ++s2) {
          const double v = p(s, a, s2);
          if (!(v >= 0.0)) throw std::invalid_argument("tabular mdp: negative transition probability");
          row += v;
        }
        if (std::abs(row - 1.0) > kTol)
          throw std::invalid_argument("tabular mdp: P(.|s=" + std::to_string(s) +
                                      ",a=" + std::to_string(a) + ") must sum to 1");
      }
    for (double v : rewards)
      if (!std::isfinite(v)) throw std::invalid_argument("tabular mdp: non-finite reward");
  }
};

// Text format (whitespace separated):
//   S A T
//   rho0: S numbers
//   P:    S*A rows of S numbers, row (s,a) in s-major order
//   r:    S*A rows of S numbers, same order
inline TabularMdp load_tabular_mdp(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open tabular mdp file: " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  std::istringstream tokens(buffer.str());

  TabularMdp mdp;
  if (!(tokens >> mdp.num_states >> mdp.num_actions >> mdp.horizon))
    throw IoError("tabular mdp file " + path + ": missing S A T header");
  if (mdp.num_states <= 0 || mdp.num_actions <= 0 || mdp.horizon <= 0)
    throw IoError("tabular mdp file " + path + ": S, A, T must be positive");
  const std::size_t table = static_cast<std::size_t>(mdp.num_states) * mdp.num_actions * mdp.num_states;
  mdp.initial_dist.resize(mdp.num_states);
  mdp.transitions.resize(table);
  mdp.rewards.resize(table);
  for (auto& v : mdp.initial_dist)
    if (!(tokens >> v)) throw IoError("tabular mdp file " + path + ": truncated rho0");
  for (auto& v : mdp.transitions)
    if (!(tokens >> v)) throw IoError("tabular mdp file " + path + ": truncated P table");
  for (auto& v : mdp.rewards)
    if (!(tokens >> v)) throw IoError("tabular mdp file " + path + ": truncated r table");
  try {
    mdp.validate();
  } catch (const std::invalid_argument& e) {
    throw IoError("tabular mdp file " + path + ": " + e.what());
  }
  return mdp;
}

inline void save_tabular_mdp(const TabularMdp& mdp, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write tabular mdp file: " + path);
  out.precision(17);
  out << mdp.num_states << ' ' << mdp.num_actions << ' ' << mdp.horizon << '\n';
  for (int s = 0; s < mdp.num_states; ++s) out << mdp.initial_dist[s] << (s + 1 < mdp.num_states ? ' ' : '\n');
  auto dump = [&](const std::vector<double>& t) {
    for (int s = 0; s < mdp.num_states; ++s)
      for (int a = 0; a < mdp.num_actions; ++a) {
        for (int s2 = 0; s2 < mdp.num_states; ++s2)
          out << t[(static_cast<std::size_t>(s) * mdp.num_actions + a) * mdp.num_states + s2]
              << (s2 + 1 < mdp.num_states ? ' ' : '\n');
      }
  };
  dump(mdp.transitions);
  dump(mdp.rewards);
}

// Every trajectory of length `horizon` with nonzero dynamics probability,
// together with its policy-independent weight rho0(s0) * prod P(s_{t+1}|s_t,a_t).
struct EnumeratedTrajectory {
  std::vector<int> states;    // horizon + 1
  std::vector<int> actions;   // horizon
  std::vector<double> rewards;  // horizon
  double dynamics_weight = 0.0;
};

inline std::vector<EnumeratedTrajectory> enumerate_trajectories(
    const TabularMdp& mdp, int horizon, std::size_t max_trajectories = 10'000'000) {
  mdp.validate();
  if (horizon <= 0) throw std::invalid_argument("enumerate_trajectories: horizon must be positive");

  std::vector<EnumeratedTrajectory> out;
  EnumeratedTrajectory current;
  current.states.reserve(horizon + 1);
  current.actions.reserve(horizon);
  current.rewards.reserve(horizon);

  // Depth-first over nonzero-probability branches; the guard counts emitted
  // trajectories and aborts before memory blows up.
  auto expand = [&](auto&& self, int state, int depth, double weight) -> void {
    if (depth == horizon) {
      current.dynamics_weight = weight;
      if (out.size() >= max_trajectories)
        throw ResourceError("enumerate_trajectories: more than " +
                            std::to_string(max_trajectories) + " trajectories");
      out.push_back(current);
      return;
    }
    for (int a = 0; a < mdp.num_actions; ++a) {
      for (int s2 = 0; s2 < mdp.num_states; ++s2) {
        const double pr = mdp.p(state, a, s2);
        if (pr == 0.0) continue;
        current.actions.push_back(a);
        current.rewards.push_back(mdp.r(state, a, s2));
        current.states.push_back(s2);
        self(self, s2, depth + 1, weight * pr);
        current.states.pop_back();
        current.rewards.pop_back();
        current.actions.pop_back();
      }
    }
  };

  for (int s0 = 0; s0 < mdp.num_states; ++s0) {
    if (mdp.initial_dist[s0] == 0.0) continue;
    current.states.push_back(s0);
    expand(expand, s0, 0, mdp.initial_dist[s0]);
    current.states.pop_back();
  }
  return out;
}

// Env wrapper so "tabular:<path>" plugs into the trainer. Episodes run for
// exactly `horizon` steps and end with truncated = true (absorbing terminal
// behaviour is expressed in the dynamics themselves).
class TabularEnv final : public Env {
 public:
  explicit TabularEnv(TabularMdp mdp, std::string id = "tabular") : mdp_(std::move(mdp)) {
    mdp_.validate();
    spec_.id = std::move(id);
    spec_.obs_kind = ObsKind::discrete;
    spec_.state_count = mdp_.num_states;
    spec_.action_kind = ActionKind::discrete;
    spec_.num_actions = mdp_.num_actions;
    spec_.reward_bound = mdp_.reward_bound();
    spec_.max_episode_steps = mdp_.horizon;
  }

  const EnvSpec& spec() const override { return spec_; }
  const TabularMdp& mdp() const { return mdp_; }

  Observation reset(Rng& rng) override {
    state_ = sample_index(mdp_.initial_dist.data(), mdp_.num_states, rng);
    elapsed_ = 0;
    return state_;
  }

  StepOutcome step(const Action& action, Rng& rng) override {
    const int a = require_discrete_action(action, mdp_.num_actions);
    const double* row =
        mdp_.transitions.data() + (static_cast<std::size_t>(state_) * mdp_.num_actions + a) * mdp_.num_states;
    const int next = sample_index(row, mdp_.num_states, rng);
    const double reward = mdp_.r(state_, a, next);
    state_ = next;
    ++elapsed_;
    return {state_, reward, false, elapsed_ >= mdp_.horizon};
  }

  std::unique_ptr<Env> clone_fresh() const override {
    return std::make_unique<TabularEnv>(mdp_, spec_.id);
  }

  static int sample_index(const double* probs, int n, Rng& rng) {
    const double u = rng.uniform();
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
      acc += probs[i];
      if (u < acc) return i;
    }
    for (int i = n - 1; i >= 0; --i)
      if (probs[i] > 0.0) return i;
    return n - 1;
  }

 private:
  TabularMdp mdp_;
  EnvSpec spec_;
  int state_ = 0;
  int elapsed_ = 0;
};

// Environment ids: "cartpole" | "cliffwalking" | "pointmass" | "tabular:<path>".
inline std::unique_ptr<Env> make_env(const std::string& id) {
  if (id == "cartpole") return std::make_unique<CartPoleEnv>();
  if (id == "cliffwalking") return std::make_unique<CliffWalkingEnv>();
  if (id == "pointmass") return std::make_unique<PointMassEnv>();
  if (id.rfind("tabular:", 0) == 0) {
    const std::string path = id.substr(8);
    if (path.empty()) throw ConfigError("environment id 'tabular:' needs a file path");
    return std::make_unique<TabularEnv>(load_tabular_mdp(path), id);
  }
  throw ConfigError("unknown environment id: " + id);
}

}  // namespace gpg
