#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "gpg/errors.hpp"
#include "gpg/mdp.hpp"
#include "gpg/rng.hpp"

namespace gpg {

enum class ObsKind { discrete, vector };
enum class ActionKind { discrete, vector };

struct EnvSpec {
  std::string id;
  ObsKind obs_kind = ObsKind::vector;
  int obs_dim = 0;      // dense observation width (vector kind)
  int state_count = 0;  // number of states (discrete kind)
  ActionKind action_kind = ActionKind::discrete;
  int num_actions = 0;  // discrete kind
  int action_dim = 0;   // vector kind
  std::vector<double> action_low, action_high;
  double reward_bound = 0.0;  // r_max: every reward satisfies |r| <= reward_bound
  int max_episode_steps = 0;
};

struct StepOutcome {
  Observation observation;
  double reward = 0.0;
  bool terminated = false;
  bool truncated = false;
};

// Single environment instance. Implementations track their own episode step
// count and raise `truncated` when max_episode_steps is reached without
// termination. Randomness comes only from the Rng passed in, so a (seed,
// stream) pair pins the whole trajectory.
class Env {
 public:
  virtual ~Env() = default;
  virtual const EnvSpec& spec() const = 0;
  virtual Observation reset(Rng& rng) = 0;
  virtual StepOutcome step(const Action& action, Rng& rng) = 0;
  // Fresh instance with identical parameters and no episode state.
  virtual std::unique_ptr<Env> clone_fresh() const = 0;

 protected:
  static int require_discrete_action(const Action& action, int num_actions) {
    if (!is_discrete_action(action))
      throw std::invalid_argument("env: expected a discrete action");
    const int a = discrete_action(action);
    if (a < 0 || a >= num_actions)
      throw std::invalid_argument("env: discrete action " + std::to_string(a) +
                                  " out of range [0," + std::to_string(num_actions) + ")");
    return a;
  }
};

// ---------------------------------------------------------------------------
// CartPole, standard benchmark constants: gravity 9.8, cart mass 1.0, pole
// mass 0.1, half-length 0.5, |force| 10, Euler step 0.02 s, termination at
// |x| > 2.4 or |theta| > 12 deg, 500-step cap, +1 reward per step.
// ---------------------------------------------------------------------------

struct CartPoleState {
  double x = 0.0, x_dot = 0.0, theta = 0.0, theta_dot = 0.0;
};

inline CartPoleState cartpole_dynamics(const CartPoleState& s, double force) {
  constexpr double kGravity = 9.8;
  constexpr double kMassCart = 1.0;
  constexpr double kMassPole = 0.1;
  constexpr double kTotalMass = kMassCart + kMassPole;
  constexpr double kHalfLength = 0.5;
  constexpr double kPoleMassLength = kMassPole * kHalfLength;
  constexpr double kTau = 0.02;

  const double cos_theta = std::cos(s.theta);
  const double sin_theta = std::sin(s.theta);
  const double temp =
      (force + kPoleMassLength * s.theta_dot * s.theta_dot * sin_theta) / kTotalMass;
  const double theta_acc = (kGravity * sin_theta - cos_theta * temp) /
                           (kHalfLength * (4.0 / 3.0 - kMassPole * cos_theta * cos_theta / kTotalMass));
  const double x_acc = temp - kPoleMassLength * theta_acc * cos_theta / kTotalMass;

  CartPoleState next;
  next.x = s.x + kTau * s.x_dot;
  next.x_dot = s.x_dot + kTau * x_acc;
  next.theta = s.theta + kTau * s.theta_dot;
  next.theta_dot = s.theta_dot + kTau * theta_acc;
  return next;
}

class CartPoleEnv final : public Env {
 public:
  CartPoleEnv() {
    spec_.id = "cartpole";
    spec_.obs_kind = ObsKind::vector;
    spec_.obs_dim = 4;
    spec_.action_kind = ActionKind::discrete;
    spec_.num_actions = 2;
    spec_.reward_bound = 1.0;
    spec_.max_episode_steps = 500;
  }

  const EnvSpec& spec() const override { return spec_; }

  Observation reset(Rng& rng) override {
    state_.x = rng.uniform(-0.05, 0.05);
    state_.x_dot = rng.uniform(-0.05, 0.05);
    state_.theta = rng.uniform(-0.05, 0.05);
    state_.theta_dot = rng.uniform(-0.05, 0.05);
    elapsed_ = 0;
    return observe();
  }

  StepOutcome step(const Action& action, Rng&) override {
    const int a = require_discrete_action(action, 2);
    const double force = a == 1 ? 10.0 : -10.0;
    state_ = cartpole_dynamics(state_, force);
    ++elapsed_;
    constexpr double kThetaLimit = 12.0 * 3.141592653589793238462643383279502884 / 180.0;
    const bool terminated =
        std::abs(state_.x) > 2.4 || std::abs(state_.theta) > kThetaLimit;
    const bool truncated = !terminated && elapsed_ >= spec_.max_episode_steps;
    return {observe(), 1.0, terminated, truncated};
  }

  std::unique_ptr<Env> clone_fresh() const override { return std::make_unique<CartPoleEnv>(); }

 private:
  Observation observe() const {
    return std::vector<double>{state_.x, state_.x_dot, state_.theta, state_.theta_dot};
  }

  EnvSpec spec_;
  CartPoleState state_;
  int elapsed_ = 0;
};

// ---------------------------------------------------------------------------
// CliffWalking, canonical 4x12 layout. State index = row * 12 + col. The
// agent starts at (3,0); the goal is (3,11); cells (3,1)..(3,10) are the
// cliff. Every move costs -1; entering the cliff costs -100 and teleports
// the agent back to the start without terminating. A 200-step cap truncates
// episodes that wander (the canonical task has no time limit).
// Actions: 0 = up, 1 = right, 2 = down, 3 = left.
// ---------------------------------------------------------------------------
class CliffWalkingEnv final : public Env {
 public:
  static constexpr int kRows = 4;
  static constexpr int kCols = 12;
  static constexpr int kStart = 3 * kCols + 0;
  static constexpr int kGoal = 3 * kCols + 11;

  CliffWalkingEnv() {
    spec_.id = "cliffwalking";
    spec_.obs_kind = ObsKind::discrete;
    spec_.state_count = kRows * kCols;
    spec_.action_kind = ActionKind::discrete;
    spec_.num_actions = 4;
    spec_.reward_bound = 100.0;
    spec_.max_episode_steps = 200;
  }

  const EnvSpec& spec() const override { return spec_; }

  Observation reset(Rng&) override {
    state_ = kStart;
    elapsed_ = 0;
    return state_;
  }

  static bool is_cliff(int state) {
    const int row = state / kCols, col = state % kCols;
    return row == 3 && col >= 1 && col <= 10;
  }

  // Transition rule shared with the test oracle: returns (next_state, reward,
  // terminated) for a move from `state`.
  struct Transition {
    int next_state;
    double reward;
    bool terminated;
  };

  static Transition transition(int state, int action) {
    int row = state / kCols, col = state % kCols;
    switch (action) {
      case 0: row = std::max(row - 1, 0); break;
      case 1: col = std::min(col + 1, kCols - 1); break;
      case 2: row = std::min(row + 1, kRows - 1); break;
      case 3: col = std::max(col - 1, 0); break;
      default: throw std::invalid_argument("cliffwalking: action out of range");
    }
    const int next = row * kCols + col;
    if (is_cliff(next)) return {kStart, -100.0, false};
    return {next, -1.0, next == kGoal};
  }

  StepOutcome step(const Action& action, Rng&) override {
    const int a = require_discrete_action(action, 4);
    const Transition t = transition(state_, a);
    state_ = t.next_state;
    ++elapsed_;
    const bool truncated = !t.terminated && elapsed_ >= spec_.max_episode_steps;
    return {state_, t.reward, t.terminated, truncated};
  }

  std::unique_ptr<Env> clone_fresh() const override {
    return std::make_unique<CliffWalkingEnv>();
  }

 private:
  EnvSpec spec_;
  int state_ = kStart;
  int elapsed_ = 0;
};

// ---------------------------------------------------------------------------
// PointMass: 2-D double integrator on a bounded square, used for spatial
// binning ablations. State (px, py, vx, vy) with every coordinate clipped to
// [-2, 2]; action is a force in [-1, 1]^2 (out-of-range components are
// clamped); reward is -||p||_2 after the move; horizon 100 with no terminal
// states. Start: position uniform in [-1.5, 1.5]^2, velocity zero.
// ---------------------------------------------------------------------------
class PointMassEnv final : public Env {
 public:
  PointMassEnv() {
    spec_.id = "pointmass";
    spec_.obs_kind = ObsKind::vector;
    spec_.obs_dim = 4;
    spec_.action_kind = ActionKind::vector;
    spec_.action_dim = 2;
    spec_.action_low = {-1.0, -1.0};
    spec_.action_high = {1.0, 1.0};
    spec_.reward_bound = 2.0 * std::sqrt(2.0);
    spec_.max_episode_steps = 100;
  }

  const EnvSpec& spec() const override { return spec_; }

  Observation reset(Rng& rng) override {
    px_ = rng.uniform(-1.5, 1.5);
    py_ = rng.uniform(-1.5, 1.5);
    vx_ = vy_ = 0.0;
    elapsed_ = 0;
    return observe();
  }

  StepOutcome step(const Action& action, Rng&) override {
    if (is_discrete_action(action))
      throw std::invalid_argument("pointmass: expected a 2-d continuous action");
    const auto& f = dense_action(action);
    if (f.size() != 2) throw std::invalid_argument("pointmass: action must have 2 components");
    constexpr double kDt = 0.1;
    const double fx = std::clamp(f[0], -1.0, 1.0);
    const double fy = std::clamp(f[1], -1.0, 1.0);
    vx_ = std::clamp(vx_ + kDt * fx, -2.0, 2.0);
    vy_ = std::clamp(vy_ + kDt * fy, -2.0, 2.0);
    px_ = std::clamp(px_ + kDt * vx_, -2.0, 2.0);
    py_ = std::clamp(py_ + kDt * vy_, -2.0, 2.0);
    ++elapsed_;
    const double reward = -std::sqrt(px_ * px_ + py_ * py_);
    const bool truncated = elapsed_ >= spec_.max_episode_steps;
    return {observe(), reward, false, truncated};
  }

  std::unique_ptr<Env> clone_fresh() const override { return std::make_unique<PointMassEnv>(); }

 private:
  Observation observe() const { return std::vector<double>{px_, py_, vx_, vy_}; }

  EnvSpec spec_;
  double px_ = 0.0, py_ = 0.0, vx_ = 0.0, vy_ = 0.0;
  int elapsed_ = 0;
};

}  // namespace gpg
