#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

namespace gpg {

struct AdamParams {
  double learning_rate = 2.5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-5;
};

struct AdamState {
  std::vector<double> m, v;
  long step = 0;

  explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

// Bias-corrected adaptive-moment update, in place.
inline void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
                      const AdamParams& hp) {
  if (params.size() != grads.size() || state.m.size() != params.size() ||
      state.v.size() != params.size())
    throw std::invalid_argument("adam_step: misaligned vectors");
  state.step += 1;
  const double bc1 = 1.0 - std::pow(hp.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(hp.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = hp.beta1 * state.m[i] + (1.0 - hp.beta1) * g;
    state.v[i] = hp.beta2 * state.v[i] + (1.0 - hp.beta2) * g * g;
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    params[i] -= hp.learning_rate * m_hat / (std::sqrt(v_hat) + hp.eps);
  }
}

inline double global_norm(std::span<const double> a, std::span<const double> b = {}) {
  double sq = 0.0;
  for (double v : a) sq += v * v;
  for (double v : b) sq += v * v;
  return std::sqrt(sq);
}

// Scales the joint gradient so its global L2 norm is at most max_norm.
// Returns the pre-clip norm.
inline double clip_global_norm(std::span<double> a, std::span<double> b, double max_norm) {
  const double norm = global_norm(a, b);
  if (norm > max_norm && norm > 0.0) {
    const double scale = max_norm / norm;
    for (double& v : a) v *= scale;
    for (double& v : b) v *= scale;
  }
  return norm;
}

}  // namespace gpg
