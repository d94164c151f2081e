#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gpg/advantage.hpp"
#include "gpg/csv.hpp"
#include "gpg/mdp.hpp"
#include "gpg/policy.hpp"
#include "gpg/rng.hpp"
#include "gpg/tabular.hpp"

namespace gpg {

// ---------------------------------------------------------------------------
// Standard small MDPs used by the exact-gradient experiments. All have fixed
// duration equal to their horizon; terminal behaviour is expressed through
// absorbing states so every sampled trajectory has the same length.
// ---------------------------------------------------------------------------

// Two-armed bandit: S=1, A=2, T=1, reward = chosen arm index.
inline TabularMdp make_bandit_mdp() {
  TabularMdp mdp;
  mdp.num_states = 1;
  mdp.num_actions = 2;
  mdp.horizon = 1;
  mdp.initial_dist = {1.0};
  mdp.transitions = {1.0, 1.0};  // both arms stay in the single state
  mdp.rewards = {0.0, 1.0};
  mdp.validate();
  return mdp;
}

// Deterministic 3-state chain, T=3: action 1 advances (capped at state 2),
// action 0 stays; every move pays 1, moves into state 2 pay 2. The constant
// per-step component gives returns a large mean that a baseline can remove,
// so the chain separates baselined estimators from bare REINFORCE cleanly.
inline TabularMdp make_chain_mdp() {
  TabularMdp mdp;
  mdp.num_states = 3;
  mdp.num_actions = 2;
  mdp.horizon = 3;
  mdp.initial_dist = {1.0, 0.0, 0.0};
  const std::size_t n = 3ull * 2 * 3;
  mdp.transitions.assign(n, 0.0);
  mdp.rewards.assign(n, 0.0);
  auto at = [&](int s, int a, int s2) { return (static_cast<std::size_t>(s) * 2 + a) * 3 + s2; };
  for (int s = 0; s < 3; ++s) {
    const int advanced = std::min(s + 1, 2);
    mdp.transitions[at(s, 0, s)] = 1.0;
    mdp.transitions[at(s, 1, advanced)] = 1.0;
    mdp.rewards[at(s, 0, s)] = s == 2 ? 2.0 : 1.0;
    mdp.rewards[at(s, 1, advanced)] = advanced == 2 ? 2.0 : 1.0;
  }
  mdp.validate();
  return mdp;
}

// Stochastic 4-state chain, T=4: action 1 advances w.p. 0.9 (else stays),
// action 0 stays w.p. 0.8 (else slips back); reaching state 3 pays 1.
inline TabularMdp make_stochastic_chain_mdp() {
  TabularMdp mdp;
  mdp.num_states = 4;
  mdp.num_actions = 2;
  mdp.horizon = 4;
  mdp.initial_dist = {1.0, 0.0, 0.0, 0.0};
  const std::size_t n = 4ull * 2 * 4;
  mdp.transitions.assign(n, 0.0);
  mdp.rewards.assign(n, 0.0);
  auto at = [&](int s, int a, int s2) { return (static_cast<std::size_t>(s) * 2 + a) * 4 + s2; };
  for (int s = 0; s < 4; ++s) {
    const int fwd = std::min(s + 1, 3);
    const int back = std::max(s - 1, 0);
    if (fwd == s) {
      mdp.transitions[at(s, 1, s)] = 1.0;
    } else {
      mdp.transitions[at(s, 1, fwd)] = 0.9;
      mdp.transitions[at(s, 1, s)] += 0.1;
    }
    if (back == s) {
      mdp.transitions[at(s, 0, s)] = 1.0;
    } else {
      mdp.transitions[at(s, 0, s)] = 0.8;
      mdp.transitions[at(s, 0, back)] += 0.2;
    }
    for (int a = 0; a < 2; ++a)
      for (int s2 = 0; s2 < 4; ++s2)
        if (mdp.transitions[at(s, a, s2)] > 0.0 && s2 == 3) mdp.rewards[at(s, a, s2)] = 1.0;
  }
  mdp.validate();
  return mdp;
}

// CliffWalking restricted to a 3x4 grid, fixed duration T=6. Start is the
// bottom-left cell, goal the bottom-right; the two cells between them are
// the cliff (enter: given penalty, teleport to start). Reaching the goal
// pays -1 and the goal absorbs with reward 0. The default penalty is the
// canonical -100; experiments that need a tamer reward scale can lower it.
inline TabularMdp make_grid_mdp(double cliff_penalty = -100.0) {
  constexpr int kRows = 3, kCols = 4;
  const int S = kRows * kCols;
  const int start = 2 * kCols + 0;
  const int goal = 2 * kCols + 3;
  auto is_cliff = [&](int s) { return s == 2 * kCols + 1 || s == 2 * kCols + 2; };

  TabularMdp mdp;
  mdp.num_states = S;
  mdp.num_actions = 4;
  mdp.horizon = 6;
  mdp.initial_dist.assign(S, 0.0);
  mdp.initial_dist[start] = 1.0;
  const std::size_t n = static_cast<std::size_t>(S) * 4 * S;
  mdp.transitions.assign(n, 0.0);
  mdp.rewards.assign(n, 0.0);
  auto at = [&](int s, int a, int s2) { return (static_cast<std::size_t>(s) * 4 + a) * S + s2; };
  for (int s = 0; s < S; ++s) {
    for (int a = 0; a < 4; ++a) {
      if (s == goal) {
        mdp.transitions[at(s, a, goal)] = 1.0;
        continue;  // absorbing, reward 0
      }
      int row = s / kCols, col = s % kCols;
      switch (a) {
        case 0: row = std::max(row - 1, 0); break;
        case 1: col = std::min(col + 1, kCols - 1); break;
        case 2: row = std::min(row + 1, kRows - 1); break;
        case 3: col = std::max(col - 1, 0); break;
      }
      int next = row * kCols + col;
      double reward = -1.0;
      if (is_cliff(next)) {
        next = start;
        reward = cliff_penalty;
      }
      mdp.transitions[at(s, a, next)] = 1.0;
      mdp.rewards[at(s, a, next)] = reward;
    }
  }
  mdp.validate();
  return mdp;
}

// Tabular softmax policy over the MDP's state/action space; zero logits
// (uniform) unless given.
inline PolicyModel make_tabular_policy(const TabularMdp& mdp,
                                       std::span<const double> logits = {}) {
  PolicyArch arch;
  arch.head = HeadKind::tabular_softmax;
  arch.input_dim = mdp.num_states;
  arch.action_dim = mdp.num_actions;
  PolicyModel model(std::move(arch));
  if (!logits.empty()) {
    if (logits.size() != model.param_count())
      throw std::invalid_argument("make_tabular_policy: logits size mismatch");
    std::copy(logits.begin(), logits.end(), model.params().begin());
  }
  return model;
}

namespace detail {

// Per-state action probabilities of a tabular softmax policy.
inline std::vector<double> tabular_probs(const TabularMdp& mdp, const PolicyModel& policy) {
  if (policy.head() != HeadKind::tabular_softmax)
    throw std::invalid_argument("oracle: policy must have a tabular softmax head");
  if (policy.arch().input_dim != mdp.num_states || policy.arch().action_dim != mdp.num_actions)
    throw std::invalid_argument("oracle: policy shape does not match the MDP");
  const int S = mdp.num_states, A = mdp.num_actions;
  std::vector<double> probs(static_cast<std::size_t>(S) * A);
  const auto& logits = policy.params();
  for (int s = 0; s < S; ++s) {
    const double* z = logits.data() + static_cast<std::size_t>(s) * A;
    double max_z = z[0];
    for (int a = 1; a < A; ++a) max_z = std::max(max_z, z[a]);
    double sum = 0.0;
    for (int a = 0; a < A; ++a) sum += std::exp(z[a] - max_z);
    for (int a = 0; a < A; ++a)
      probs[static_cast<std::size_t>(s) * A + a] = std::exp(z[a] - max_z) / sum;
  }
  return probs;
}

}  // namespace detail

struct ExactGradient {
  double objective = 0.0;          // eta(theta)
  std::vector<double> gradient;    // d eta / d logits
};

// Exact eta and its gradient by full trajectory enumeration:
//   eta   = sum_tau p_theta(tau) R(tau)
//   grad  = sum_tau p_theta(tau) R(tau) grad log p_theta(tau)
// with R(tau) the gamma-discounted return from t=0.
inline ExactGradient exact_objective_and_gradient(const TabularMdp& mdp,
                                                  const PolicyModel& policy, double gamma = 1.0,
                                                  std::size_t max_trajectories = 10'000'000) {
  const std::vector<double> probs = detail::tabular_probs(mdp, policy);
  const int A = mdp.num_actions;
  const auto trajectories = enumerate_trajectories(mdp, mdp.horizon, max_trajectories);

  ExactGradient out;
  out.gradient.assign(policy.param_count(), 0.0);
  for (const auto& traj : trajectories) {
    double policy_prob = 1.0;
    for (int t = 0; t < mdp.horizon; ++t)
      policy_prob *= probs[static_cast<std::size_t>(traj.states[t]) * A + traj.actions[t]];
    if (policy_prob == 0.0) continue;
    const double weight = traj.dynamics_weight * policy_prob;
    double ret = 0.0;
    double discount = 1.0;
    for (int t = 0; t < mdp.horizon; ++t) {
      ret += discount * traj.rewards[t];
      discount *= gamma;
    }
    out.objective += weight * ret;
    const double w = weight * ret;
    for (int t = 0; t < mdp.horizon; ++t) {
      const int s = traj.states[t];
      double* row = out.gradient.data() + static_cast<std::size_t>(s) * A;
      const double* p = probs.data() + static_cast<std::size_t>(s) * A;
      for (int a = 0; a < A; ++a) row[a] -= w * p[a];
      row[traj.actions[t]] += w;
    }
  }
  return out;
}

// Exact mean and standard deviation (population) of the total return R_1
// under the policy, by enumeration.
inline std::pair<double, double> exact_return_moments(const TabularMdp& mdp,
                                                      const PolicyModel& policy,
                                                      double gamma = 1.0) {
  const std::vector<double> probs = detail::tabular_probs(mdp, policy);
  const int A = mdp.num_actions;
  double mean = 0.0, second = 0.0;
  for (const auto& traj : enumerate_trajectories(mdp, mdp.horizon)) {
    double policy_prob = 1.0;
    for (int t = 0; t < mdp.horizon; ++t)
      policy_prob *= probs[static_cast<std::size_t>(traj.states[t]) * A + traj.actions[t]];
    const double weight = traj.dynamics_weight * policy_prob;
    double ret = 0.0, discount = 1.0;
    for (int t = 0; t < mdp.horizon; ++t) {
      ret += discount * traj.rewards[t];
      discount *= gamma;
    }
    mean += weight * ret;
    second += weight * ret * ret;
  }
  const double var = std::max(second - mean * mean, 0.0);
  return {mean, std::sqrt(var)};
}

// First-visit-weighted expected return per state: the N -> infinity limit of
// the discrete-state bin means (conditioned on the state being visited).
// Returns (value, visit probability) per state.
inline std::vector<std::pair<double, double>> exact_first_visit_state_values(
    const TabularMdp& mdp, const PolicyModel& policy, double gamma = 1.0) {
  const std::vector<double> probs = detail::tabular_probs(mdp, policy);
  const int A = mdp.num_actions;
  std::vector<double> weighted(mdp.num_states, 0.0);
  std::vector<double> visit_prob(mdp.num_states, 0.0);
  for (const auto& traj : enumerate_trajectories(mdp, mdp.horizon)) {
    double policy_prob = 1.0;
    for (int t = 0; t < mdp.horizon; ++t)
      policy_prob *= probs[static_cast<std::size_t>(traj.states[t]) * A + traj.actions[t]];
    const double weight = traj.dynamics_weight * policy_prob;
    if (weight == 0.0) continue;
    // returns-to-go within the trajectory
    std::vector<double> rtg(mdp.horizon + 1, 0.0);
    for (int t = mdp.horizon; t-- > 0;) rtg[t] = traj.rewards[t] + gamma * rtg[t + 1];
    std::vector<bool> seen(mdp.num_states, false);
    for (int t = 0; t < mdp.horizon; ++t) {
      const int s = traj.states[t];
      if (seen[s]) continue;
      seen[s] = true;
      weighted[s] += weight * rtg[t];
      visit_prob[s] += weight;
    }
  }
  std::vector<std::pair<double, double>> out(mdp.num_states);
  for (int s = 0; s < mdp.num_states; ++s)
    out[s] = {visit_prob[s] > 0.0 ? weighted[s] / visit_prob[s] : 0.0, visit_prob[s]};
  return out;
}

// States with zero probability of ever being visited under the policy
// within the horizon (forward DP over exact dynamics).
inline std::vector<int> unreachable_states(const TabularMdp& mdp, const PolicyModel& policy) {
  const std::vector<double> probs = detail::tabular_probs(mdp, policy);
  const int S = mdp.num_states, A = mdp.num_actions;
  std::vector<double> dist = mdp.initial_dist;
  std::vector<bool> reachable(S, false);
  for (int s = 0; s < S; ++s) reachable[s] = dist[s] > 0.0;
  std::vector<double> next(S);
  for (int t = 1; t < mdp.horizon; ++t) {
    std::fill(next.begin(), next.end(), 0.0);
    for (int s = 0; s < S; ++s) {
      if (dist[s] == 0.0) continue;
      for (int a = 0; a < A; ++a) {
        const double pa = dist[s] * probs[static_cast<std::size_t>(s) * A + a];
        if (pa == 0.0) continue;
        for (int s2 = 0; s2 < S; ++s2) next[s2] += pa * mdp.p(s, a, s2);
      }
    }
    dist.swap(next);
    for (int s = 0; s < S; ++s) reachable[s] = reachable[s] || dist[s] > 0.0;
  }
  std::vector<int> missing;
  for (int s = 0; s < S; ++s)
    if (!reachable[s]) missing.push_back(s);
  return missing;
}

// Samples one group of N fixed-duration trajectories under the tabular
// policy, in the episode-segment representation the advantage module works
// on.
inline RolloutGroup sample_group(const TabularMdp& mdp, const PolicyModel& policy, long n,
                                 Rng& rng) {
  RolloutGroup group;
  group.nominal_group_size = static_cast<int>(n);
  group.segments.reserve(n);
  PolicyWorkspace ws = policy.make_workspace();
  for (long i = 0; i < n; ++i) {
    EpisodeSegment segment;
    segment.env_slot = static_cast<int>(i);
    segment.steps.resize(mdp.horizon);
    int state = TabularEnv::sample_index(mdp.initial_dist.data(), mdp.num_states, rng);
    for (int t = 0; t < mdp.horizon; ++t) {
      double log_prob = 0.0;
      const Action action = policy.sample_action(state, rng, ws, &log_prob);
      const int a = discrete_action(action);
      const double* row = mdp.transitions.data() +
                          (static_cast<std::size_t>(state) * mdp.num_actions + a) * mdp.num_states;
      const int next = TabularEnv::sample_index(row, mdp.num_states, rng);
      StepRecord& rec = segment.steps[t];
      rec.observation = state;
      rec.action = a;
      rec.reward = mdp.r(state, a, next);
      rec.behavior_log_prob = log_prob;
      rec.episode_timestep = t;
      rec.group_timestep = t;
      rec.truncated = t + 1 == mdp.horizon;
      state = next;
    }
    segment.complete = false;
    group.segments.push_back(std::move(segment));
  }
  return group;
}

enum class EstimatorKind { reinforce, gpg, grpo_outcome };

struct EstimatorSpec {
  EstimatorKind kind = EstimatorKind::gpg;
  BinningConfig binning{BinningKind::time, 0.0};

  std::string label() const {
    switch (kind) {
      case EstimatorKind::reinforce: return "reinforce";
      case EstimatorKind::gpg: return "gpg:" + to_string(binning);
      case EstimatorKind::grpo_outcome: return "grpo-outcome";
    }
    return "?";
  }
};

// (1/N) sum_n sum_t A_t^n grad log pi(a_t^n | s_t^n) with the advantages of
// the chosen estimator computed over the given group.
inline std::vector<double> gradient_from_group(const RolloutGroup& group,
                                               const ReturnsTable& returns,
                                               const EstimatorSpec& est,
                                               const PolicyModel& policy) {
  const std::size_t n = group.segments.size();
  if (n == 0) throw std::invalid_argument("gradient_from_group: empty group");
  AdvantageSet advantages;
  switch (est.kind) {
    case EstimatorKind::reinforce:
      advantages.per_step.assign(returns.begin(), returns.end());
      break;
    case EstimatorKind::gpg: {
      const BinTable table = build_bin_table(group, returns, est.binning);
      advantages = gpg_advantages(group, returns, table, est.binning);
      break;
    }
    case EstimatorKind::grpo_outcome: {
      std::vector<double> totals(n);
      for (std::size_t i = 0; i < n; ++i) totals[i] = returns[i].empty() ? 0.0 : returns[i][0];
      const std::vector<double> adv = grpo_outcome_advantages(totals);
      advantages.per_step.resize(n);
      for (std::size_t i = 0; i < n; ++i)
        advantages.per_step[i].assign(group.segments[i].steps.size(), adv[i]);
      break;
    }
  }
  std::vector<double> grad(policy.param_count(), 0.0);
  PolicyWorkspace ws = policy.make_workspace();
  const double inv = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& steps = group.segments[i].steps;
    for (std::size_t t = 0; t < steps.size(); ++t)
      policy.grad_log_prob(steps[t].observation, steps[t].action,
                           inv * advantages.per_step[i][t], grad, ws);
  }
  return grad;
}

inline std::vector<double> estimate_gradient(const TabularMdp& mdp, const PolicyModel& policy,
                                             const EstimatorSpec& est, long n, Rng& rng,
                                             double gamma = 1.0) {
  if (n < 1) throw std::invalid_argument("estimate_gradient: need n >= 1");
  if (est.kind == EstimatorKind::grpo_outcome && n < 2)
    throw std::invalid_argument("estimate_gradient: grpo needs n >= 2");
  const RolloutGroup group = sample_group(mdp, policy, n, rng);
  const ReturnsTable returns = compute_group_returns(group, gamma);
  return gradient_from_group(group, returns, est, policy);
}

inline double relative_l2_error(std::span<const double> estimate,
                                std::span<const double> exact) {
  if (estimate.size() != exact.size())
    throw std::invalid_argument("relative_l2_error: size mismatch");
  double diff = 0.0, ref = 0.0;
  for (std::size_t i = 0; i < exact.size(); ++i) {
    diff += (estimate[i] - exact[i]) * (estimate[i] - exact[i]);
    ref += exact[i] * exact[i];
  }
  return std::sqrt(diff) / std::max(std::sqrt(ref), 1e-12);
}

inline double median(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("median: empty input");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

struct ConsistencyRow {
  long group_size = 0;
  int repetition = 0;
  double rel_error = 0.0;
};

struct ConsistencyReport {
  std::string estimator;
  std::vector<double> exact_gradient;
  std::vector<ConsistencyRow> rows;
  std::vector<std::pair<long, double>> median_errors;  // sorted by group size
  bool monotone_non_increasing = false;
  std::vector<std::string> warnings;
};

using GradientEstimatorFn = std::function<std::vector<double>(long group_size, Rng& rng)>;

// Core harness: for each group size, `repetitions` independent estimates
// against the fixed target; medians of relative L2 error per size.
// Repetition r of size index k draws from Rng(seed, (k << 32) | r).
inline ConsistencyReport run_consistency(std::vector<double> exact_gradient,
                                         const GradientEstimatorFn& estimator,
                                         const std::vector<long>& group_sizes, int repetitions,
                                         std::uint64_t seed, std::string label) {
  if (group_sizes.empty()) throw std::invalid_argument("run_consistency: no group sizes");
  if (repetitions <= 0) throw std::invalid_argument("run_consistency: repetitions must be positive");
  ConsistencyReport report;
  report.estimator = std::move(label);
  report.exact_gradient = std::move(exact_gradient);
  for (std::size_t k = 0; k < group_sizes.size(); ++k) {
    std::vector<double> errors;
    errors.reserve(repetitions);
    for (int rep = 0; rep < repetitions; ++rep) {
      Rng rng(seed, (static_cast<std::uint64_t>(k) << 32) | static_cast<std::uint64_t>(rep));
      const std::vector<double> estimate = estimator(group_sizes[k], rng);
      const double err = relative_l2_error(estimate, report.exact_gradient);
      report.rows.push_back({group_sizes[k], rep, err});
      errors.push_back(err);
    }
    report.median_errors.emplace_back(group_sizes[k], median(errors));
  }
  std::sort(report.median_errors.begin(), report.median_errors.end());
  report.monotone_non_increasing = true;
  for (std::size_t i = 1; i < report.median_errors.size(); ++i)
    if (report.median_errors[i].second > report.median_errors[i - 1].second)
      report.monotone_non_increasing = false;
  return report;
}

// Empirical check of the consistency statement: median estimator error
// against the enumerated exact gradient, per group size. Precondition
// violations (bins unreachable under the policy) are reported as warnings,
// not failures.
inline ConsistencyReport consistency_experiment(const TabularMdp& mdp, const PolicyModel& policy,
                                                const EstimatorSpec& est,
                                                const std::vector<long>& group_sizes,
                                                int repetitions = 20, std::uint64_t seed = 7,
                                                double gamma = 1.0) {
  const ExactGradient exact = exact_objective_and_gradient(mdp, policy, gamma);
  ConsistencyReport report = run_consistency(
      exact.gradient,
      [&](long n, Rng& rng) { return estimate_gradient(mdp, policy, est, n, rng, gamma); },
      group_sizes, repetitions, seed, est.label());
  if (est.kind == EstimatorKind::gpg && est.binning.kind == BinningKind::discrete_state) {
    for (int s : unreachable_states(mdp, policy))
      report.warnings.push_back("state " + std::to_string(s) +
                                " has zero visit probability under the policy; its bin can "
                                "never be estimated");
  }
  return report;
}

// GRPO targets the normalized policy gradient grad eta / std(R_1); both
// sides come from enumeration. Rejects MDPs whose return variance vanishes.
inline ConsistencyReport grpo_normalized_gradient_check(const TabularMdp& mdp, const PolicyModel& policy,
                                              const std::vector<long>& group_sizes,
                                              int repetitions = 20, std::uint64_t seed = 7,
                                              double gamma = 1.0) {
  const auto [mean, std_dev] = exact_return_moments(mdp, policy, gamma);
  (void)mean;
  if (std_dev <= 1e-12)
    throw std::invalid_argument(
        "grpo_normalized_gradient_check: return variance is zero, the normalized target is "
        "undefined");
  ExactGradient exact = exact_objective_and_gradient(mdp, policy, gamma);
  for (double& g : exact.gradient) g /= std_dev;
  EstimatorSpec est;
  est.kind = EstimatorKind::grpo_outcome;
  return run_consistency(
      exact.gradient,
      [&](long n, Rng& rng) { return estimate_gradient(mdp, policy, est, n, rng, gamma); },
      group_sizes, repetitions, seed, "grpo-normalized");
}

inline void write_consistency_csv(std::ostream& out,
                                  const std::vector<ConsistencyReport>& reports) {
  out << "estimator,N,repetition,rel_error\n";
  for (const auto& report : reports)
    for (const auto& row : report.rows)
      out << report.estimator << ',' << row.group_size << ',' << row.repetition << ','
          << format_double(row.rel_error) << '\n';
}

}  // namespace gpg
