#include "marlsim/net.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "marlsim/errors.hpp"
#include "marlsim/rng.hpp"

namespace marlsim {

namespace {

// y += a * x
void axpy(double a, const double* __restrict x, double* __restrict y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

bool all_finite(std::span<const double> xs) {
  for (double x : xs) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

}  // namespace

Tensor2::Tensor2(std::size_t r, std::size_t c, std::vector<double> values)
    : rows(r), cols(c), data(std::move(values)) {
  if (data.size() != r * c) throw ShapeError("tensor data length does not match its shape");
}

bool MlpParams::same_shape(const MlpParams& o) const {
  if (layer_sizes != o.layer_sizes || weights.size() != o.weights.size()) return false;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    if (weights[l].rows != o.weights[l].rows || weights[l].cols != o.weights[l].cols) return false;
    if (biases[l].size() != o.biases[l].size()) return false;
  }
  return true;
}

AdamState AdamState::zeros_like(const MlpParams& params) {
  AdamState s;
  for (std::size_t l = 0; l < params.num_layers(); ++l) {
    s.m_weights.emplace_back(params.weights[l].rows, params.weights[l].cols);
    s.v_weights.emplace_back(params.weights[l].rows, params.weights[l].cols);
    s.m_biases.emplace_back(params.biases[l].size(), 0.0);
    s.v_biases.emplace_back(params.biases[l].size(), 0.0);
  }
  return s;
}

MlpParams init_params(const std::vector<std::size_t>& layer_sizes, Activation output_activation,
                      std::uint64_t seed) {
  if (layer_sizes.size() < 2) throw std::invalid_argument("a network needs at least 2 layer sizes");
  for (std::size_t s : layer_sizes) {
    if (s < 1) throw std::invalid_argument("layer sizes must be >= 1");
  }
  Rng rng(seed);
  MlpParams p;
  p.layer_sizes = layer_sizes;
  p.output_activation = output_activation;
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
    const std::size_t fan_in = layer_sizes[l], fan_out = layer_sizes[l + 1];
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor2 w(fan_out, fan_in);
    for (double& x : w.data) x = rng.uniform(-limit, limit);
    p.weights.push_back(std::move(w));
    p.biases.emplace_back(fan_out, 0.0);
  }
  return p;
}

// The kernels below fix the summation order of every output element
// (sequential over the reduced index) and vectorize only across independent
// outputs. A row's result is then bit-identical whatever the batch size or
// the storage alignment, which sampled log-probs and reruns rely on.

Tensor2 forward(const MlpParams& params, const Tensor2& input, ForwardCache* cache) {
  if (input.cols != params.input_size()) {
    throw ShapeError("forward: input has " + std::to_string(input.cols) + " columns, network expects " +
                     std::to_string(params.input_size()));
  }
  if (cache) {
    cache->activations.clear();
    cache->activations.push_back(input);
  }
  Tensor2 current = input;
  std::vector<double> wt;
  for (std::size_t l = 0; l < params.num_layers(); ++l) {
    const Tensor2& w = params.weights[l];
    const std::size_t n_in = w.cols, n_out = w.rows;
    wt.resize(n_in * n_out);
    for (std::size_t o = 0; o < n_out; ++o) {
      for (std::size_t i = 0; i < n_in; ++i) wt[i * n_out + o] = w.data[o * n_in + i];
    }
    const bool squash = l + 1 < params.num_layers() || params.output_activation == Activation::kTanh;
    Tensor2 next(current.rows, n_out);
    const std::size_t rows = current.rows;
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy(params.biases[l].begin(), params.biases[l].end(), next.data.data() + r * n_out);
    }
    for (std::size_t r = 0; r < rows; ++r) {
      const double* x = current.data.data() + r * n_in;
      double* acc = next.data.data() + r * n_out;
      for (std::size_t i = 0; i < n_in; ++i) axpy(x[i], wt.data() + i * n_out, acc, n_out);
    }
    if (squash) {
      for (double& v : next.data) v = std::tanh(v);
    }
    if (cache) cache->activations.push_back(next);
    current = std::move(next);
  }
  return current;
}

MlpGrads backward(const MlpParams& params, const ForwardCache& cache, const Tensor2& output_grad) {
  const std::size_t layers = params.num_layers();
  if (cache.activations.size() != layers + 1) throw ShapeError("backward: cache does not match the network");
  const Tensor2& out = cache.activations.back();
  if (output_grad.rows != out.rows || output_grad.cols != out.cols) {
    throw ShapeError("backward: output gradient shape does not match the forward output");
  }
  MlpGrads g;
  g.weights.resize(layers);
  g.biases.resize(layers);

  Tensor2 delta = output_grad;
  for (std::size_t l = layers; l-- > 0;) {
    const Tensor2& w = params.weights[l];
    const Tensor2& x = cache.activations[l];
    const std::size_t n_in = w.cols, n_out = w.rows, batch = delta.rows;
    if (l + 1 < layers || params.output_activation == Activation::kTanh) {
      const Tensor2& y = cache.activations[l + 1];
      for (std::size_t k = 0; k < delta.data.size(); ++k) delta.data[k] *= 1.0 - y.data[k] * y.data[k];
    }
    Tensor2 gw(n_out, n_in);
    std::vector<double> gb(n_out, 0.0);
    Tensor2 prev(batch, n_in);
    for (std::size_t r = 0; r < batch; ++r) {
      const double* d = delta.data.data() + r * n_out;
      for (std::size_t o = 0; o < n_out; ++o) {
        gb[o] += d[o];
        axpy(d[o], x.data.data() + r * n_in, gw.data.data() + o * n_in, n_in);
      }
      for (std::size_t o = 0; o < n_out; ++o) {
        axpy(d[o], w.data.data() + o * n_in, prev.data.data() + r * n_in, n_in);
      }
    }
    g.weights[l] = std::move(gw);
    g.biases[l] = std::move(gb);
    delta = std::move(prev);
  }
  g.input = std::move(delta);
  return g;
}

void adam_update(std::span<double> params, std::span<const double> grads, std::span<double> m,
                 std::span<double> v, std::int64_t step, double lr) {
  const double b1 = AdamState::kBeta1, b2 = AdamState::kBeta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    m[k] = b1 * m[k] + (1.0 - b1) * grads[k];
    v[k] = b2 * v[k] + (1.0 - b2) * grads[k] * grads[k];
    params[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + AdamState::kEps);
  }
}

void adam_step(MlpParams& params, const MlpGrads& grads, AdamState& state, double lr) {
  if (grads.weights.size() != params.num_layers() || state.m_weights.size() != params.num_layers()) {
    throw ShapeError("adam_step: layer count mismatch");
  }
  for (std::size_t l = 0; l < params.num_layers(); ++l) {
    if (grads.weights[l].data.size() != params.weights[l].data.size() ||
        grads.biases[l].size() != params.biases[l].size() ||
        state.m_weights[l].data.size() != params.weights[l].data.size() ||
        state.m_biases[l].size() != params.biases[l].size()) {
      throw ShapeError("adam_step: shape mismatch in layer " + std::to_string(l));
    }
    if (!all_finite(grads.weights[l].data) || !all_finite(grads.biases[l])) {
      throw NumericError("adam_step: non-finite gradient in layer " + std::to_string(l));
    }
  }
  ++state.step_count;
  for (std::size_t l = 0; l < params.num_layers(); ++l) {
    adam_update(params.weights[l].data, grads.weights[l].data, state.m_weights[l].data, state.v_weights[l].data,
                state.step_count, lr);
    adam_update(params.biases[l], grads.biases[l], state.m_biases[l], state.v_biases[l], state.step_count, lr);
  }
}

void polyak_update(MlpParams& target, const MlpParams& online, double tau) {
  if (!target.same_shape(online)) throw ShapeError("polyak_update: shape mismatch");
  if (!(tau >= 0.0 && tau <= 1.0)) throw std::invalid_argument("polyak_update: tau must be in [0, 1]");
  if (tau == 1.0) {
    target.weights = online.weights;
    target.biases = online.biases;
    return;
  }
  for (std::size_t l = 0; l < target.num_layers(); ++l) {
    auto& tw = target.weights[l].data;
    const auto& ow = online.weights[l].data;
    for (std::size_t i = 0; i < tw.size(); ++i) tw[i] = tau * ow[i] + (1.0 - tau) * tw[i];
    auto& tb = target.biases[l];
    const auto& ob = online.biases[l];
    for (std::size_t i = 0; i < tb.size(); ++i) tb[i] = tau * ob[i] + (1.0 - tau) * tb[i];
  }
}

}  // namespace marlsim
