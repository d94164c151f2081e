#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "gpg/env.hpp"
#include "gpg/errors.hpp"
#include "gpg/mdp.hpp"
#include "gpg/mlp.hpp"
#include "gpg/rng.hpp"

namespace gpg {

enum class HeadKind { categorical, gaussian, tabular_softmax };

inline std::string to_string(HeadKind h) {
  switch (h) {
    case HeadKind::categorical: return "categorical";
    case HeadKind::gaussian: return "gaussian";
    case HeadKind::tabular_softmax: return "tabular_softmax";
  }
  return "?";
}

struct PolicyArch {
  HeadKind head = HeadKind::categorical;
  bool one_hot_input = false;  // discrete observations are one-hot encoded
  int input_dim = 0;           // dense input width (= state count when one_hot_input)
  int action_dim = 0;          // actions A (categorical/tabular) or dims k (gaussian)
  std::vector<int> hidden;     // empty for tabular_softmax
};

// Gradient vector aligned with a parameter vector, plus a sample counter so
// averaged accumulation schemes can keep book.
struct GradientBuffer {
  std::vector<double> values;
  long samples = 0;

  explicit GradientBuffer(std::size_t n = 0) : values(n, 0.0) {}
  void reset() {
    std::fill(values.begin(), values.end(), 0.0);
    samples = 0;
  }
};

struct PolicyWorkspace {
  Mlp::Workspace mlp;
  std::vector<double> log_probs;  // per-action log pi (categorical heads)
  std::vector<double> probs;
  std::vector<double> dhead;
  // filled by evaluate_action / forward_head
  double log_prob = 0.0;
  double entropy = 0.0;
};

struct ActionEval {
  double log_prob = 0.0;
  double entropy = 0.0;
};

// Parametric policy: an MLP with a categorical or diagonal-Gaussian head, or
// a tabular softmax (logits[S][A] as the raw parameters). All parameters sit
// in one flat vector; gradients are accumulated by explicit reverse-mode
// passes — there is no autodiff graph anywhere.
class PolicyModel {
 public:
  PolicyModel() = default;

  explicit PolicyModel(PolicyArch arch) : arch_(std::move(arch)) {
    if (arch_.input_dim <= 0 || arch_.action_dim <= 0)
      throw std::invalid_argument("PolicyModel: dimensions must be positive");
    if (arch_.head == HeadKind::tabular_softmax) {
      if (!arch_.hidden.empty())
        throw std::invalid_argument("PolicyModel: tabular head takes no hidden layers");
      params_.assign(static_cast<std::size_t>(arch_.input_dim) * arch_.action_dim, 0.0);
    } else {
      mlp_ = Mlp(arch_.input_dim, arch_.hidden, arch_.action_dim);
      std::size_t n = mlp_.param_count();
      if (arch_.head == HeadKind::gaussian) n += arch_.action_dim;  // state-independent log-std
      params_.assign(n, 0.0);
    }
  }

  // Reference-PPO-lineage deterministic init: orthogonal hidden layers (gain sqrt(2)),
  // small-gain head (0.01), zero biases and zero log-std.
  static PolicyModel initialized(PolicyArch arch, Rng& rng) {
    PolicyModel model(std::move(arch));
    if (model.arch_.head != HeadKind::tabular_softmax)
      model.mlp_.init_orthogonal(std::span<double>(model.params_.data(), model.mlp_.param_count()),
                                 std::sqrt(2.0), 0.01, rng);
    return model;
  }

  const PolicyArch& arch() const { return arch_; }
  HeadKind head() const { return arch_.head; }
  std::size_t param_count() const { return params_.size(); }
  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }

  PolicyWorkspace make_workspace() const {
    PolicyWorkspace ws;
    if (arch_.head != HeadKind::tabular_softmax) ws.mlp = mlp_.make_workspace();
    ws.log_probs.resize(arch_.action_dim);
    ws.probs.resize(arch_.action_dim);
    ws.dhead.resize(arch_.action_dim);
    return ws;
  }

  // log pi(a|s) and policy entropy at s in one forward pass. The workspace
  // retains everything backward() needs for the same (obs, action).
  ActionEval evaluate_action(const Observation& obs, const Action& action,
                             PolicyWorkspace& ws) const {
    switch (arch_.head) {
      case HeadKind::categorical:
      case HeadKind::tabular_softmax: {
        const double* logits = head_outputs(obs, ws);
        softmax_log_probs(logits, ws);
        const int a = require_action_index(action);
        ws.log_prob = ws.log_probs[a];
        return {ws.log_prob, ws.entropy};
      }
      case HeadKind::gaussian: {
        const double* mean = head_outputs(obs, ws);
        const auto& a = dense_action_checked(action);
        const double* log_std = params_.data() + mlp_.param_count();
        double logp = 0.0;
        for (int j = 0; j < arch_.action_dim; ++j) {
          const double sigma = std::exp(log_std[j]);
          const double z = (a[j] - mean[j]) / sigma;
          logp += -0.5 * z * z - log_std[j];
        }
        logp -= 0.5 * arch_.action_dim * kLog2Pi;
        double entropy = 0.5 * arch_.action_dim * (1.0 + kLog2Pi);
        for (int j = 0; j < arch_.action_dim; ++j) entropy += log_std[j];
        ws.log_prob = logp;
        ws.entropy = entropy;
        return {logp, entropy};
      }
    }
    throw std::logic_error("unreachable");
  }

  // Accumulates d_logp * dlogpi/dtheta + d_entropy * dH/dtheta into grad.
  // Must follow evaluate_action with the same (obs, action, ws).
  void backward(const Observation& obs, const Action& action, double d_logp, double d_entropy,
                std::span<double> grad, PolicyWorkspace& ws) const {
    if (grad.size() != params_.size())
      throw std::invalid_argument("PolicyModel::backward: gradient buffer misaligned");
    switch (arch_.head) {
      case HeadKind::categorical: {
        categorical_dlogits(action, d_logp, d_entropy, ws);
        auto [input, onehot] = encode(obs);
        mlp_.backward(params(), input, onehot, ws.dhead.data(), 1.0, grad, ws.mlp);
        return;
      }
      case HeadKind::tabular_softmax: {
        categorical_dlogits(action, d_logp, d_entropy, ws);
        const int s = discrete_state_checked(obs);
        double* row = grad.data() + static_cast<std::size_t>(s) * arch_.action_dim;
        for (int k = 0; k < arch_.action_dim; ++k) row[k] += ws.dhead[k];
        return;
      }
      case HeadKind::gaussian: {
        const double* mean = ws.mlp.activations.data() +
                             (ws.mlp.activations.size() - arch_.action_dim);
        const auto& a = dense_action_checked(action);
        const double* log_std = params_.data() + mlp_.param_count();
        double* g_log_std = grad.data() + mlp_.param_count();
        for (int j = 0; j < arch_.action_dim; ++j) {
          const double sigma = std::exp(log_std[j]);
          const double z = (a[j] - mean[j]) / sigma;
          ws.dhead[j] = d_logp * z / sigma;
          g_log_std[j] += d_logp * (z * z - 1.0) + d_entropy;
        }
        auto [input, onehot] = encode(obs);
        mlp_.backward(params(), input, onehot, ws.dhead.data(), 1.0, grad, ws.mlp);
        return;
      }
    }
  }

  double log_prob(const Observation& obs, const Action& action, PolicyWorkspace& ws) const {
    return evaluate_action(obs, action, ws).log_prob;
  }

  double entropy(const Observation& obs, PolicyWorkspace& ws) const {
    switch (arch_.head) {
      case HeadKind::categorical:
      case HeadKind::tabular_softmax:
        softmax_log_probs(head_outputs(obs, ws), ws);
        return ws.entropy;
      case HeadKind::gaussian: {
        const double* log_std = params_.data() + mlp_.param_count();
        double entropy = 0.5 * arch_.action_dim * (1.0 + kLog2Pi);
        for (int j = 0; j < arch_.action_dim; ++j) entropy += log_std[j];
        return entropy;
      }
    }
    throw std::logic_error("unreachable");
  }

  void grad_log_prob(const Observation& obs, const Action& action, double coeff,
                     std::span<double> grad, PolicyWorkspace& ws) const {
    evaluate_action(obs, action, ws);
    backward(obs, action, coeff, 0.0, grad, ws);
  }

  Action sample_action(const Observation& obs, Rng& rng, PolicyWorkspace& ws,
                       double* log_prob_out = nullptr) const {
    switch (arch_.head) {
      case HeadKind::categorical:
      case HeadKind::tabular_softmax: {
        softmax_log_probs(head_outputs(obs, ws), ws);
        const double u = rng.uniform();
        double acc = 0.0;
        int chosen = arch_.action_dim - 1;
        for (int k = 0; k < arch_.action_dim; ++k) {
          acc += ws.probs[k];
          if (u < acc) {
            chosen = k;
            break;
          }
        }
        if (log_prob_out) *log_prob_out = ws.log_probs[chosen];
        return chosen;
      }
      case HeadKind::gaussian: {
        const double* mean = head_outputs(obs, ws);
        const double* log_std = params_.data() + mlp_.param_count();
        std::vector<double> a(arch_.action_dim);
        for (int j = 0; j < arch_.action_dim; ++j)
          a[j] = mean[j] + std::exp(log_std[j]) * rng.normal();
        Action action = std::move(a);
        // Recomputed from the sampled action so the value matches log_prob()
        // for that action bit for bit.
        if (log_prob_out) *log_prob_out = evaluate_action(obs, action, ws).log_prob;
        return action;
      }
    }
    throw std::logic_error("unreachable");
  }

 private:
  static constexpr double kLog2Pi = 1.8378770664093454835606594728112353;

  std::pair<const double*, int> encode(const Observation& obs) const {
    if (arch_.one_hot_input) {
      if (!is_discrete(obs))
        throw std::invalid_argument("policy expects a discrete observation");
      const int s = discrete_value(obs);
      if (s < 0 || s >= arch_.input_dim)
        throw std::invalid_argument("policy: observation index out of range");
      return {nullptr, s};
    }
    if (is_discrete(obs))
      throw std::invalid_argument("policy expects a real-vector observation");
    const auto& v = dense_value(obs);
    if (static_cast<int>(v.size()) != arch_.input_dim)
      throw std::invalid_argument("policy: observation has dim " + std::to_string(v.size()) +
                                  ", expected " + std::to_string(arch_.input_dim));
    return {v.data(), -1};
  }

  int discrete_state_checked(const Observation& obs) const {
    if (!is_discrete(obs))
      throw std::invalid_argument("tabular policy expects a discrete observation");
    const int s = discrete_value(obs);
    if (s < 0 || s >= arch_.input_dim)
      throw std::invalid_argument("tabular policy: state index out of range");
    return s;
  }

  int require_action_index(const Action& action) const {
    if (!is_discrete_action(action))
      throw std::invalid_argument("categorical policy expects a discrete action");
    const int a = discrete_action(action);
    if (a < 0 || a >= arch_.action_dim)
      throw std::invalid_argument("categorical policy: action index out of range");
    return a;
  }

  const std::vector<double>& dense_action_checked(const Action& action) const {
    if (is_discrete_action(action))
      throw std::invalid_argument("gaussian policy expects a continuous action");
    const auto& a = dense_action(action);
    if (static_cast<int>(a.size()) != arch_.action_dim)
      throw std::invalid_argument("gaussian policy: action has wrong dimension");
    return a;
  }

  // Head outputs (logits or Gaussian mean) for the observation.
  const double* head_outputs(const Observation& obs, PolicyWorkspace& ws) const {
    if (arch_.head == HeadKind::tabular_softmax)
      return params_.data() + static_cast<std::size_t>(discrete_state_checked(obs)) * arch_.action_dim;
    auto [input, onehot] = encode(obs);
    return mlp_.forward(params(), input, onehot, ws.mlp);
  }

  // Stable log-softmax; fills ws.log_probs, ws.probs, ws.entropy.
  void softmax_log_probs(const double* logits, PolicyWorkspace& ws) const {
    const int n = arch_.action_dim;
    double max_logit = logits[0];
    for (int k = 1; k < n; ++k) max_logit = std::max(max_logit, logits[k]);
    double sum = 0.0;
    for (int k = 0; k < n; ++k) sum += std::exp(logits[k] - max_logit);
    const double log_z = max_logit + std::log(sum);
    double entropy = 0.0;
    for (int k = 0; k < n; ++k) {
      ws.log_probs[k] = logits[k] - log_z;
      ws.probs[k] = std::exp(ws.log_probs[k]);
      entropy -= ws.probs[k] * ws.log_probs[k];
    }
    ws.entropy = entropy;
  }

  // d(logits) for d_logp * dlogpi + d_entropy * dH at the sampled action.
  void categorical_dlogits(const Action& action, double d_logp, double d_entropy,
                           PolicyWorkspace& ws) const {
    const int a = require_action_index(action);
    for (int k = 0; k < arch_.action_dim; ++k) {
      const double p = ws.probs[k];
      double d = d_logp * ((k == a ? 1.0 : 0.0) - p);
      if (d_entropy != 0.0) d += -d_entropy * p * (ws.log_probs[k] + ws.entropy);
      ws.dhead[k] = d;
    }
  }

  PolicyArch arch_;
  Mlp mlp_;
  std::vector<double> params_;
};

// Scalar-output MLP used only by PPO as the learned state-value baseline.
class ValueNet {
 public:
  ValueNet() = default;

  ValueNet(bool one_hot_input, int input_dim, std::vector<int> hidden)
      : one_hot_input_(one_hot_input), mlp_(input_dim, std::move(hidden), 1) {
    params_.assign(mlp_.param_count(), 0.0);
  }

  static ValueNet initialized(bool one_hot_input, int input_dim, std::vector<int> hidden,
                              Rng& rng) {
    ValueNet net(one_hot_input, input_dim, std::move(hidden));
    net.mlp_.init_orthogonal(net.params_, std::sqrt(2.0), 1.0, rng);
    return net;
  }

  const Mlp& mlp() const { return mlp_; }
  bool one_hot_input() const { return one_hot_input_; }
  std::size_t param_count() const { return params_.size(); }
  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }

  Mlp::Workspace make_workspace() const { return mlp_.make_workspace(); }

  double forward(const Observation& obs, Mlp::Workspace& ws) const {
    auto [input, onehot] = encode(obs);
    return mlp_.forward(params_, input, onehot, ws)[0];
  }

  // Accumulates d_value * dV/dphi into grad; follows forward() on the same obs.
  void backward(const Observation& obs, double d_value, std::span<double> grad,
                Mlp::Workspace& ws) const {
    if (grad.size() != params_.size())
      throw std::invalid_argument("ValueNet::backward: gradient buffer misaligned");
    auto [input, onehot] = encode(obs);
    mlp_.backward(params_, input, onehot, &d_value, 1.0, grad, ws);
  }

 private:
  std::pair<const double*, int> encode(const Observation& obs) const {
    if (one_hot_input_) {
      if (!is_discrete(obs)) throw std::invalid_argument("value net expects a discrete observation");
      const int s = discrete_value(obs);
      if (s < 0 || s >= mlp_.input_dim())
        throw std::invalid_argument("value net: observation index out of range");
      return {nullptr, s};
    }
    if (is_discrete(obs))
      throw std::invalid_argument("value net expects a real-vector observation");
    const auto& v = dense_value(obs);
    if (static_cast<int>(v.size()) != mlp_.input_dim())
      throw std::invalid_argument("value net: observation has wrong dimension");
    return {v.data(), -1};
  }

  bool one_hot_input_ = false;
  Mlp mlp_;
  std::vector<double> params_;
};

// Policy and value architectures implied by an environment spec.
inline PolicyArch default_policy_arch(const EnvSpec& spec, const std::vector<int>& hidden,
                                      const std::string& policy_kind) {
  PolicyArch arch;
  if (policy_kind == "tabular") {
    if (spec.obs_kind != ObsKind::discrete || spec.action_kind != ActionKind::discrete)
      throw ConfigError("policy=tabular requires discrete observations and actions");
    arch.head = HeadKind::tabular_softmax;
    arch.input_dim = spec.state_count;
    arch.action_dim = spec.num_actions;
    return arch;
  }
  if (policy_kind != "mlp") throw ConfigError("unknown policy kind: " + policy_kind);
  arch.one_hot_input = spec.obs_kind == ObsKind::discrete;
  arch.input_dim = arch.one_hot_input ? spec.state_count : spec.obs_dim;
  arch.hidden = hidden;
  if (spec.action_kind == ActionKind::discrete) {
    arch.head = HeadKind::categorical;
    arch.action_dim = spec.num_actions;
  } else {
    arch.head = HeadKind::gaussian;
    arch.action_dim = spec.action_dim;
  }
  return arch;
}

}  // namespace gpg
