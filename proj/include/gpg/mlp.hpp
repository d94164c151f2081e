#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "gpg/rng.hpp"

namespace gpg {

// Dense feed-forward net with tanh hidden layers and a linear output layer.
// Parameters live in one flat vector, per layer [W (out x in, row-major), b].
// The net itself is stateless; activations go into an MlpWorkspace so the
// same model can be evaluated from many call sites without allocation.
//
// Inputs are either a dense vector or a one-hot index; the one-hot path
// touches a single column of the first weight matrix in both directions,
// which is what makes discrete-observation training cheap.
class Mlp {
 public:
  Mlp() = default;

  Mlp(int input_dim, std::vector<int> hidden, int output_dim)
      : input_dim_(input_dim), hidden_(std::move(hidden)), output_dim_(output_dim) {
    if (input_dim <= 0 || output_dim <= 0)
      throw std::invalid_argument("Mlp: dimensions must be positive");
    for (int h : hidden_)
      if (h <= 0) throw std::invalid_argument("Mlp: hidden widths must be positive");
    int in = input_dim_;
    std::size_t offset = 0;
    for (std::size_t l = 0; l <= hidden_.size(); ++l) {
      const int out = l < hidden_.size() ? hidden_[l] : output_dim_;
      LayerInfo info;
      info.in = in;
      info.out = out;
      info.weight_offset = offset;
      info.bias_offset = offset + static_cast<std::size_t>(out) * in;
      offset = info.bias_offset + out;
      layers_.push_back(info);
      in = out;
    }
    param_count_ = offset;
    std::size_t act_offset = 0;
    for (const auto& layer : layers_) {
      activation_offsets_.push_back(act_offset);
      act_offset += layer.out;
    }
    activation_size_ = act_offset;
    max_width_ = input_dim_;
    for (const auto& layer : layers_) max_width_ = std::max(max_width_, layer.out);
  }

  int input_dim() const { return input_dim_; }
  int output_dim() const { return output_dim_; }
  const std::vector<int>& hidden() const { return hidden_; }
  std::size_t param_count() const { return param_count_; }

  struct Workspace {
    std::vector<double> activations;  // post-activation outputs, all layers
    std::vector<double> delta_a, delta_b;
  };

  Workspace make_workspace() const {
    Workspace ws;
    ws.activations.resize(activation_size_);
    ws.delta_a.resize(max_width_);
    ws.delta_b.resize(max_width_);
    return ws;
  }

  // Either dense_input (size input_dim) or onehot_index >= 0.
  // Returns a pointer to the output activations (size output_dim) inside ws.
  const double* forward(std::span<const double> params, const double* dense_input,
                        int onehot_index, Workspace& ws) const {
    const double* prev = dense_input;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const LayerInfo& layer = layers_[l];
      const double* w = params.data() + layer.weight_offset;
      const double* b = params.data() + layer.bias_offset;
      double* out = ws.activations.data() + activation_offsets_[l];
      if (l == 0 && onehot_index >= 0) {
        for (int o = 0; o < layer.out; ++o) out[o] = b[o] + w[static_cast<std::size_t>(o) * layer.in + onehot_index];
      } else {
        for (int o = 0; o < layer.out; ++o) {
          const double* row = w + static_cast<std::size_t>(o) * layer.in;
          double acc = b[o];
          for (int i = 0; i < layer.in; ++i) acc += row[i] * prev[i];
          out[o] = acc;
        }
      }
      if (l + 1 < layers_.size())
        for (int o = 0; o < layer.out; ++o) out[o] = std::tanh(out[o]);
      prev = out;
    }
    return ws.activations.data() + activation_offsets_.back();
  }

  // Accumulates coeff * d(dout . output)/d(params) into grad, reusing the
  // activations of the matching forward() call (same input, same params).
  void backward(std::span<const double> params, const double* dense_input, int onehot_index,
                const double* dout, double coeff, std::span<double> grad, Workspace& ws) const {
    double* delta = ws.delta_a.data();
    double* next_delta = ws.delta_b.data();
    const int last = static_cast<int>(layers_.size()) - 1;
    for (int o = 0; o < layers_[last].out; ++o) delta[o] = dout[o];

    for (int l = last; l >= 0; --l) {
      const LayerInfo& layer = layers_[l];
      const double* w = params.data() + layer.weight_offset;
      double* gw = grad.data() + layer.weight_offset;
      double* gb = grad.data() + layer.bias_offset;
      const double* below = l == 0 ? dense_input : ws.activations.data() + activation_offsets_[l - 1];

      if (l == 0 && onehot_index >= 0) {
        for (int o = 0; o < layer.out; ++o) {
          const double d = coeff * delta[o];
          gb[o] += d;
          gw[static_cast<std::size_t>(o) * layer.in + onehot_index] += d;
        }
      } else {
        for (int o = 0; o < layer.out; ++o) {
          const double d = coeff * delta[o];
          gb[o] += d;
          double* row = gw + static_cast<std::size_t>(o) * layer.in;
          for (int i = 0; i < layer.in; ++i) row[i] += d * below[i];
        }
      }

      if (l > 0) {
        for (int i = 0; i < layer.in; ++i) next_delta[i] = 0.0;
        for (int o = 0; o < layer.out; ++o) {
          const double d = delta[o];
          const double* row = w + static_cast<std::size_t>(o) * layer.in;
          for (int i = 0; i < layer.in; ++i) next_delta[i] += d * row[i];
        }
        // tanh'(z) in terms of the stored post-activation a: 1 - a^2.
        for (int i = 0; i < layer.in; ++i) next_delta[i] *= 1.0 - below[i] * below[i];
        std::swap(delta, next_delta);
      }
    }
  }

  // Orthogonal initialization (Gaussian draw + modified Gram-Schmidt on the
  // short side), hidden layers scaled by hidden_gain, output layer by
  // head_gain, biases zero.
  void init_orthogonal(std::span<double> params, double hidden_gain, double head_gain,
                       Rng& rng) const {
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const LayerInfo& layer = layers_[l];
      const double gain = l + 1 == layers_.size() ? head_gain : hidden_gain;
      fill_orthogonal(params.subspan(layer.weight_offset,
                                     static_cast<std::size_t>(layer.out) * layer.in),
                      layer.out, layer.in, gain, rng);
      for (int o = 0; o < layer.out; ++o) params[layer.bias_offset + o] = 0.0;
    }
  }

 private:
  struct LayerInfo {
    int in = 0, out = 0;
    std::size_t weight_offset = 0, bias_offset = 0;
  };

  static void fill_orthogonal(std::span<double> w, int rows, int cols, double gain, Rng& rng) {
    // Orthonormalize along the smaller dimension: columns when rows >= cols,
    // rows otherwise.
    const bool by_columns = rows >= cols;
    const int vec_len = by_columns ? rows : cols;
    const int vec_count = by_columns ? cols : rows;
    std::vector<double> m(static_cast<std::size_t>(vec_len) * vec_count);
    for (auto& v : m) v = rng.normal();
    auto vec = [&](int j) { return m.data() + static_cast<std::size_t>(j) * vec_len; };
    for (int j = 0; j < vec_count; ++j) {
      double* vj = vec(j);
      for (int k = 0; k < j; ++k) {
        const double* vk = vec(k);
        double dot = 0.0;
        for (int i = 0; i < vec_len; ++i) dot += vj[i] * vk[i];
        for (int i = 0; i < vec_len; ++i) vj[i] -= dot * vk[i];
      }
      double norm = 0.0;
      for (int i = 0; i < vec_len; ++i) norm += vj[i] * vj[i];
      norm = std::sqrt(norm);
      if (norm < 1e-12) {
        for (int i = 0; i < vec_len; ++i) vj[i] = i == j % vec_len ? 1.0 : 0.0;
      } else {
        for (int i = 0; i < vec_len; ++i) vj[i] /= norm;
      }
    }
    for (int o = 0; o < rows; ++o)
      for (int i = 0; i < cols; ++i) {
        const double q = by_columns ? m[static_cast<std::size_t>(i) * rows + o]
                                    : m[static_cast<std::size_t>(o) * cols + i];
        w[static_cast<std::size_t>(o) * cols + i] = gain * q;
      }
  }

  int input_dim_ = 0;
  std::vector<int> hidden_;
  int output_dim_ = 0;
  std::vector<LayerInfo> layers_;
  std::vector<std::size_t> activation_offsets_;
  std::size_t activation_size_ = 0;
  std::size_t param_count_ = 0;
  int max_width_ = 0;
};

}  // namespace gpg
