#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gpg/adam.hpp"
#include "gpg/advantage.hpp"
#include "gpg/config.hpp"
#include "gpg/csv.hpp"
#include "gpg/mdp.hpp"
#include "gpg/policy.hpp"
#include "gpg/vec_env.hpp"

namespace gpg {

// Substream layout for a training run: env slot i draws dynamics from
// Rng(seed, i) inside VectorizedEnv, actions for slot i from
// Rng(seed, kActionStreamBase + i), minibatch shuffling from
// Rng(seed, kShuffleStream), parameter init from the init streams.
constexpr std::uint64_t kActionStreamBase = 1ULL << 32;
constexpr std::uint64_t kShuffleStream = 1ULL << 33;
constexpr std::uint64_t kPolicyInitStream = (1ULL << 33) + 1;
constexpr std::uint64_t kValueInitStream = (1ULL << 33) + 2;
constexpr std::uint64_t kEvalSeedBase = 0xEA10ULL;

struct IterationMetrics {
  long iteration = 0;
  long env_steps = 0;
  double mean_return = 0.0;
  double std_return = 0.0;
  double loss_pi = 0.0;
  double loss_v = 0.0;
  double entropy = 0.0;
  double clip_frac = 0.0;
  double grad_norm = 0.0;
  int effective_group_size = 0;
  double wall_ms = 0.0;
};

inline const char* metrics_csv_header() {
  return "iteration,env_steps,mean_return,std_return,loss_pi,loss_v,entropy,clip_frac,"
         "grad_norm,effective_group_size,wall_ms";
}

inline std::string metrics_csv_row(const IterationMetrics& m) {
  std::string row;
  row += std::to_string(m.iteration);
  row += ',' + std::to_string(m.env_steps);
  row += ',' + format_double(m.mean_return);
  row += ',' + format_double(m.std_return);
  row += ',' + format_double(m.loss_pi);
  row += ',' + format_double(m.loss_v);
  row += ',' + format_double(m.entropy);
  row += ',' + format_double(m.clip_frac);
  row += ',' + format_double(m.grad_norm);
  row += ',' + std::to_string(m.effective_group_size);
  row += ',' + format_double(m.wall_ms);
  return row;
}

struct SurrogateSample {
  const StepRecord* step = nullptr;
  double advantage = 0.0;
};

struct SurrogateDiagnostics {
  double clip_fraction = 0.0;
  double entropy_mean = 0.0;
};

// Negated clipped surrogate, averaged over the batch:
//   loss = -mean_t min{ r_t A_t, clip(r_t, 1-eps, 1+eps) A_t },  r_t = exp(logpi - logpi_old).
// The gradient goes into `grad` when given; entropy_coef only adds the
// entropy-bonus gradient (-entropy_coef * dH/dtheta per sample) — the
// returned loss is the surrogate term alone, with the batch entropy mean
// reported through `diag`.
inline double clipped_surrogate_loss(const PolicyModel& model,
                                     std::span<const SurrogateSample> batch, double clip_eps,
                                     double entropy_coef, GradientBuffer* grad,
                                     SurrogateDiagnostics* diag, PolicyWorkspace& ws) {
  if (batch.empty()) throw std::invalid_argument("clipped_surrogate_loss: empty batch");
  if (!(clip_eps > 0.0)) throw std::invalid_argument("clipped_surrogate_loss: clip_eps must be positive");
  const double inv = 1.0 / static_cast<double>(batch.size());
  double objective_sum = 0.0;
  double entropy_sum = 0.0;
  long clipped = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const SurrogateSample& sample = batch[i];
    const double adv = sample.advantage;
    if (!std::isfinite(adv))
      throw std::invalid_argument("clipped_surrogate_loss: non-finite advantage at sample " +
                                  std::to_string(i));
    const ActionEval eval = model.evaluate_action(sample.step->observation, sample.step->action, ws);
    const double ratio = std::exp(eval.log_prob - sample.step->behavior_log_prob);
    if (!std::isfinite(ratio))
      throw NumericalError("clipped_surrogate_loss: non-finite ratio at sample " +
                           std::to_string(i) + " (log_prob=" + std::to_string(eval.log_prob) +
                           ", behavior=" + std::to_string(sample.step->behavior_log_prob) + ")");
    const double clipped_ratio = std::clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps);
    const double surr_unclipped = ratio * adv;
    const double surr_clipped = clipped_ratio * adv;
    objective_sum += std::min(surr_unclipped, surr_clipped);
    entropy_sum += eval.entropy;
    if (std::abs(ratio - 1.0) > clip_eps) ++clipped;
    if (grad) {
      // min picks the unclipped branch on ties, so the d/dtheta path is
      // A * r * dlogpi when that branch is active and zero otherwise.
      const double d_logp = surr_unclipped <= surr_clipped ? -inv * adv * ratio : 0.0;
      const double d_entropy = -entropy_coef * inv;
      if (d_logp != 0.0 || d_entropy != 0.0)
        model.backward(sample.step->observation, sample.step->action, d_logp, d_entropy,
                       grad->values, ws);
      grad->samples += 1;
    }
  }
  if (diag) {
    diag->clip_fraction = static_cast<double>(clipped) * inv;
    diag->entropy_mean = entropy_sum * inv;
  }
  return -objective_sum * inv;
}

struct ValueSample {
  const Observation* observation = nullptr;
  double target = 0.0;
  double old_value = 0.0;  // used only when value clipping is on
};

// 0.5 * mean (V(s) - target)^2; the gradient is scaled by grad_coeff so the
// caller can fold in its value-loss coefficient. With clip_eps > 0 the
// per-sample loss is the max of the unclipped square and the square of the
// old-value-clipped prediction error (reference-implementation option, off
// by default).
inline double value_net_loss(const ValueNet& net, std::span<const ValueSample> batch,
                             GradientBuffer* grad, double grad_coeff, Mlp::Workspace& ws,
                             double clip_eps = 0.0) {
  if (batch.empty()) throw std::invalid_argument("value_net_loss: empty batch");
  const double inv = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  for (const ValueSample& sample : batch) {
    const double v = net.forward(*sample.observation, ws);
    const double diff = v - sample.target;
    double sample_loss = 0.5 * diff * diff;
    double d_value = diff;
    if (clip_eps > 0.0) {
      const double v_clipped =
          sample.old_value + std::clamp(v - sample.old_value, -clip_eps, clip_eps);
      const double diff_clipped = v_clipped - sample.target;
      if (diff_clipped * diff_clipped > diff * diff) {
        sample_loss = 0.5 * diff_clipped * diff_clipped;
        // gradient flows through v only when the clamp is inactive
        d_value = std::abs(v - sample.old_value) < clip_eps ? diff_clipped : 0.0;
      }
    }
    loss += sample_loss;
    if (grad) net.backward(*sample.observation, grad_coeff * inv * d_value, grad->values, ws);
  }
  return loss * inv;
}

struct EvalResult {
  double mean = 0.0;
  double std_dev = 0.0;
  std::vector<double> returns;
};

// Stochastic-policy evaluation: n fresh episodes, actions sampled from pi,
// undiscounted episodic return. Episode j uses Rng(base_seed + j, 0) for the
// env and Rng(base_seed + j, kActionStreamBase) for the policy.
inline EvalResult evaluate(const PolicyModel& policy, const Env& prototype, int n_seeds,
                           std::uint64_t base_seed = kEvalSeedBase) {
  if (n_seeds <= 0) throw std::invalid_argument("evaluate: need at least one seed");
  EvalResult result;
  PolicyWorkspace ws = policy.make_workspace();
  for (int j = 0; j < n_seeds; ++j) {
    auto env = prototype.clone_fresh();
    Rng env_rng(base_seed + static_cast<std::uint64_t>(j), 0);
    Rng action_rng(base_seed + static_cast<std::uint64_t>(j), kActionStreamBase);
    Observation obs = env->reset(env_rng);
    double total = 0.0;
    for (;;) {
      const Action action = policy.sample_action(obs, action_rng, ws);
      StepOutcome outcome = env->step(action, env_rng);
      total += outcome.reward;
      if (outcome.terminated || outcome.truncated) break;
      obs = std::move(outcome.observation);
    }
    result.returns.push_back(total);
  }
  const auto [mean, std_dev] = mean_std_population(result.returns);
  result.mean = mean;
  result.std_dev = std_dev;
  return result;
}

inline EvalResult evaluate(const PolicyModel& policy, const std::string& env_id, int n_seeds,
                           std::uint64_t base_seed = kEvalSeedBase) {
  return evaluate(policy, *make_env(env_id), n_seeds, base_seed);
}

// One GPG/PPO/GRPO training run: owns the policy, the optional value net
// (PPO only — the GPG and GRPO paths never construct one), the vectorized
// environment and all optimizer state. Iterations follow the usual loop:
// freeze pi_old implicitly by recording behaviour log-probs during rollout,
// collect num_envs x rollout_length steps, segment into a group, estimate
// advantages per the configured algorithm, then several epochs of shuffled
// minibatch updates with the clipped surrogate.
class Trainer {
 public:
  explicit Trainer(TrainConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    auto prototype = make_env(cfg_.env_id);
    spec_ = prototype->spec();
    venv_ = std::make_unique<VectorizedEnv>(*prototype, cfg_.num_envs, cfg_.seed);

    Rng policy_init(cfg_.seed, kPolicyInitStream);
    policy_ = PolicyModel::initialized(default_policy_arch(spec_, cfg_.hidden, cfg_.policy),
                                       policy_init);
    if (cfg_.algorithm == Algorithm::ppo) {
      Rng value_init(cfg_.seed, kValueInitStream);
      const bool one_hot = spec_.obs_kind == ObsKind::discrete;
      const int input_dim = one_hot ? spec_.state_count : spec_.obs_dim;
      const std::vector<int> value_hidden =
          cfg_.hidden.empty() ? std::vector<int>{64, 64} : cfg_.hidden;
      value_ = ValueNet::initialized(one_hot, input_dim, value_hidden, value_init);
      opt_value_ = AdamState(value_->param_count());
      value_ws_ = value_->make_workspace();
    }
    opt_policy_ = AdamState(policy_.param_count());
    policy_ws_ = policy_.make_workspace();
    action_rngs_.reserve(cfg_.num_envs);
    for (int i = 0; i < cfg_.num_envs; ++i)
      action_rngs_.emplace_back(cfg_.seed, kActionStreamBase + static_cast<std::uint64_t>(i));
    shuffle_rng_ = Rng(cfg_.seed, kShuffleStream);
    episode_return_.assign(cfg_.num_envs, 0.0);
  }

  const TrainConfig& config() const { return cfg_; }
  const EnvSpec& env_spec() const { return spec_; }
  const PolicyModel& policy() const { return policy_; }
  PolicyModel& policy() { return policy_; }
  bool has_value_net() const { return value_.has_value(); }
  const ValueNet& value_net() const { return *value_; }
  ValueNet& value_net() { return *value_; }
  long iteration() const { return iteration_; }
  long env_steps() const { return env_steps_; }
  const RolloutGroup& last_group() const { return last_group_; }
  const ReturnsTable& last_returns() const { return last_returns_; }
  const AdvantageSet& last_advantages() const { return last_advantages_; }

  AdamState& optimizer_state() { return opt_policy_; }
  const AdamState& optimizer_state() const { return opt_policy_; }
  AdamState& value_optimizer_state() { return *opt_value_; }
  const AdamState& value_optimizer_state() const { return *opt_value_; }

  // PPO's auxiliary loss. Guarded: calling it under a critic-free algorithm
  // is a configuration error.
  double value_loss(std::span<const ValueSample> batch, GradientBuffer* grad) {
    if (cfg_.algorithm != Algorithm::ppo || !value_)
      throw ConfigError("value_loss: no value network under " + to_string(cfg_.algorithm));
    return value_net_loss(*value_, batch, grad, cfg_.value_coef, value_ws_);
  }

  IterationMetrics train_iteration() {
    const auto started = std::chrono::steady_clock::now();
    IterationMetrics metrics;
    metrics.iteration = iteration_;

    collect_rollout();
    metrics.effective_group_size = static_cast<int>(last_group_.segments.size());

    last_returns_ = compute_group_returns(last_group_, cfg_.gamma);
    compute_advantages();

    // Flatten into the update batch. Truncated (incomplete) segments can be
    // excluded from gradient batches by config.
    std::vector<SurrogateSample> samples;
    std::vector<double> value_targets;
    std::vector<double> old_values;
    samples.reserve(static_cast<std::size_t>(cfg_.num_envs) * cfg_.rollout_length);
    for (std::size_t i = 0; i < last_group_.segments.size(); ++i) {
      const EpisodeSegment& segment = last_group_.segments[i];
      if (cfg_.exclude_truncated_from_update && !segment.complete) continue;
      for (std::size_t t = 0; t < segment.steps.size(); ++t) {
        samples.push_back({&segment.steps[t], last_advantages_.per_step[i][t]});
        if (value_) {
          value_targets.push_back(value_targets_.per_step[i][t]);
          old_values.push_back(old_values_.per_step[i][t]);
        }
      }
    }
    if (samples.empty())
      throw ConfigError("train_iteration: update batch is empty (exclude_truncated_from_update "
                        "dropped every segment)");

    const double lr = current_learning_rate();
    const AdamParams adam{lr, cfg_.adam_beta1, cfg_.adam_beta2, cfg_.adam_eps};

    GradientBuffer policy_grad(policy_.param_count());
    GradientBuffer value_grad(value_ ? value_->param_count() : 0);
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);

    std::vector<SurrogateSample> minibatch;
    std::vector<double> mb_adv;
    std::vector<ValueSample> mb_values;
    double loss_pi_sum = 0.0, loss_v_sum = 0.0, entropy_sum = 0.0, clip_sum = 0.0, norm_sum = 0.0;
    long updates = 0;

    for (int epoch = 0; epoch < cfg_.update_epochs; ++epoch) {
      shuffle(order);
      const std::size_t batch = order.size();
      const std::size_t base = batch / static_cast<std::size_t>(cfg_.num_minibatches);
      const std::size_t remainder = batch % static_cast<std::size_t>(cfg_.num_minibatches);
      std::size_t start = 0;
      for (int mb = 0; mb < cfg_.num_minibatches && start < batch; ++mb) {
        const std::size_t size = base + (static_cast<std::size_t>(mb) < remainder ? 1 : 0);
        if (size == 0) continue;
        minibatch.clear();
        mb_adv.clear();
        mb_values.clear();
        for (std::size_t k = start; k < start + size; ++k) {
          minibatch.push_back(samples[order[k]]);
          mb_adv.push_back(samples[order[k]].advantage);
          if (value_)
            mb_values.push_back({&samples[order[k]].step->observation, value_targets[order[k]],
                                 old_values[order[k]]});
        }
        start += size;

        if (cfg_.normalize_adv) {
          const std::vector<double> normalized = normalize_advantages(mb_adv);
          for (std::size_t k = 0; k < minibatch.size(); ++k) minibatch[k].advantage = normalized[k];
        }

        policy_grad.reset();
        SurrogateDiagnostics diag;
        const double loss_pi = clipped_surrogate_loss(policy_, minibatch, cfg_.clip_eps,
                                                      cfg_.entropy_coef, &policy_grad, &diag,
                                                      policy_ws_);
        double loss_v = 0.0;
        if (value_) {
          value_grad.reset();
          loss_v = value_net_loss(*value_, mb_values, &value_grad, cfg_.value_coef, value_ws_,
                                  cfg_.clip_vloss ? cfg_.clip_eps : 0.0);
        }
        if (!std::isfinite(loss_pi) || !std::isfinite(loss_v))
          throw NumericalError("train_iteration: non-finite loss at iteration " +
                               std::to_string(iteration_));

        const double pre_clip_norm =
            clip_global_norm(policy_grad.values,
                             value_ ? std::span<double>(value_grad.values) : std::span<double>(),
                             cfg_.max_grad_norm);
        adam_step(policy_.params(), policy_grad.values, opt_policy_, adam);
        if (value_) adam_step(value_->params(), value_grad.values, *opt_value_, adam);

        loss_pi_sum += loss_pi;
        loss_v_sum += loss_v;
        entropy_sum += diag.entropy_mean;
        clip_sum += diag.clip_fraction;
        norm_sum += pre_clip_norm;
        ++updates;
      }
    }

    metrics.env_steps = env_steps_;
    if (!completed_returns_.empty()) {
      const auto [mean, std_dev] = mean_std_population(completed_returns_);
      last_mean_return_ = mean;
      last_std_return_ = std_dev;
    }
    metrics.mean_return = last_mean_return_;
    metrics.std_return = last_std_return_;
    metrics.loss_pi = loss_pi_sum / static_cast<double>(updates);
    metrics.loss_v = loss_v_sum / static_cast<double>(updates);
    metrics.entropy = entropy_sum / static_cast<double>(updates);
    metrics.clip_frac = clip_sum / static_cast<double>(updates);
    metrics.grad_norm = norm_sum / static_cast<double>(updates);
    metrics.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                                started)
                          .count();
    ++iteration_;
    return metrics;
  }

  EvalResult run_evaluation(std::uint64_t base_seed = kEvalSeedBase) const {
    return evaluate(policy_, cfg_.env_id, cfg_.eval_seeds, base_seed);
  }

  // Restore hook used by checkpoint loading.
  void restore_counters(long iteration, long env_steps) {
    iteration_ = iteration;
    env_steps_ = env_steps;
  }

 private:
  double current_learning_rate() const {
    if (!cfg_.anneal_lr || cfg_.iterations <= 0) return cfg_.learning_rate;
    const double frac =
        1.0 - static_cast<double>(iteration_) / static_cast<double>(cfg_.iterations);
    return cfg_.learning_rate * std::max(frac, 0.0);
  }

  void shuffle(std::vector<std::size_t>& order) {
    for (std::size_t i = order.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(shuffle_rng_.uniform_int(static_cast<int>(i)));
      std::swap(order[i - 1], order[j]);
    }
  }

  void collect_rollout() {
    const int n = cfg_.num_envs;
    std::vector<std::vector<StepRecord>> streams(n);
    for (auto& s : streams) s.reserve(cfg_.rollout_length);
    // Final observations per slot, one per done event, in order.
    std::vector<std::vector<Observation>> finals(n);
    completed_returns_.clear();

    std::vector<Action> actions(n);
    std::vector<double> log_probs(n);
    std::vector<int> timesteps(n);
    std::vector<Observation> step_obs(n);
    std::vector<VectorizedEnv::SlotStep> results;

    for (int step = 0; step < cfg_.rollout_length; ++step) {
      for (int i = 0; i < n; ++i) {
        step_obs[i] = venv_->observation(i);
        timesteps[i] = venv_->episode_timestep(i);
        actions[i] = policy_.sample_action(step_obs[i], action_rngs_[i], policy_ws_, &log_probs[i]);
      }
      venv_->step(actions, results);
      for (int i = 0; i < n; ++i) {
        StepRecord record;
        record.observation = std::move(step_obs[i]);
        record.action = actions[i];
        record.reward = results[i].reward;
        record.behavior_log_prob = log_probs[i];
        record.episode_timestep = timesteps[i];
        record.terminated = results[i].terminated;
        record.truncated = results[i].truncated;
        streams[i].push_back(std::move(record));
        episode_return_[i] += results[i].reward;
        if (results[i].terminated || results[i].truncated) {
          completed_returns_.push_back(episode_return_[i]);
          episode_return_[i] = 0.0;
          finals[i].push_back(results[i].final_observation);
        }
      }
    }
    env_steps_ += static_cast<long>(n) * cfg_.rollout_length;

    last_group_ = segment_rollout(streams, iteration_);

    // Attach s_{T+1} to every non-terminated segment: the autoreset final
    // observation for done-ended segments, the slot's current observation
    // for the trailing segment cut by the rollout boundary.
    std::vector<std::size_t> next_final(n, 0);
    for (auto& segment : last_group_.segments) {
      const StepRecord& last = segment.steps.back();
      if (last.terminated || last.truncated) {
        Observation final_obs = finals[segment.env_slot][next_final[segment.env_slot]++];
        if (!segment.complete) segment.final_observation = std::move(final_obs);
      } else {
        segment.final_observation = venv_->observation(segment.env_slot);
      }
    }
  }

  void compute_advantages() {
    switch (cfg_.algorithm) {
      case Algorithm::gpg: {
        const BinTable table = build_bin_table(last_group_, last_returns_, cfg_.binning);
        last_advantages_ =
            gpg_advantages(last_group_, last_returns_, table, cfg_.binning, cfg_.loo_baseline);
        return;
      }
      case Algorithm::grpo_outcome: {
        // Outcome supervision analogue for dense rewards: the trajectory
        // score is the undiscounted episode return of the segment.
        std::vector<double> outcomes;
        outcomes.reserve(last_group_.segments.size());
        for (const auto& segment : last_group_.segments) {
          double total = 0.0;
          for (const auto& step : segment.steps) total += step.reward;
          outcomes.push_back(total);
        }
        const std::vector<double> adv = grpo_outcome_advantages(outcomes);
        last_advantages_.per_step.assign(last_group_.segments.size(), {});
        last_advantages_.estimator = "grpo-outcome";
        for (std::size_t i = 0; i < last_group_.segments.size(); ++i)
          last_advantages_.per_step[i].assign(last_group_.segments[i].steps.size(), adv[i]);
        return;
      }
      case Algorithm::ppo: {
        last_advantages_.per_step.assign(last_group_.segments.size(), {});
        last_advantages_.estimator = "gae";
        value_targets_.per_step.assign(last_group_.segments.size(), {});
        value_targets_.estimator = "lambda-return";
        old_values_.per_step.assign(last_group_.segments.size(), {});
        old_values_.estimator = "old-values";
        std::vector<double> rewards, values;
        for (std::size_t i = 0; i < last_group_.segments.size(); ++i) {
          const EpisodeSegment& segment = last_group_.segments[i];
          const std::size_t len = segment.steps.size();
          rewards.resize(len);
          values.resize(len + 1);
          for (std::size_t t = 0; t < len; ++t) {
            rewards[t] = segment.steps[t].reward;
            values[t] = value_->forward(segment.steps[t].observation, value_ws_);
          }
          values[len] = segment.complete ? 0.0 : value_->forward(*segment.final_observation, value_ws_);
          last_advantages_.per_step[i] = gae_advantages(rewards, values, cfg_.gamma, cfg_.gae_lambda);
          auto& targets = value_targets_.per_step[i];
          auto& old_vals = old_values_.per_step[i];
          targets.resize(len);
          old_vals.assign(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(len));
          for (std::size_t t = 0; t < len; ++t)
            targets[t] = last_advantages_.per_step[i][t] + values[t];
        }
        return;
      }
    }
  }

  TrainConfig cfg_;
  EnvSpec spec_;
  std::unique_ptr<VectorizedEnv> venv_;
  PolicyModel policy_;
  std::optional<ValueNet> value_;
  AdamState opt_policy_;
  std::optional<AdamState> opt_value_;
  PolicyWorkspace policy_ws_;
  Mlp::Workspace value_ws_;
  std::vector<Rng> action_rngs_;
  Rng shuffle_rng_;

  long iteration_ = 0;
  long env_steps_ = 0;
  std::vector<double> episode_return_;
  std::vector<double> completed_returns_;
  double last_mean_return_ = 0.0;
  double last_std_return_ = 0.0;

  RolloutGroup last_group_;
  ReturnsTable last_returns_;
  AdvantageSet last_advantages_;
  AdvantageSet value_targets_;
  AdvantageSet old_values_;
};

}  // namespace gpg
