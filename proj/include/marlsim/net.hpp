#ifndef MARLSIM_NET_HPP_
#define MARLSIM_NET_HPP_

#include <cstdint>
#include <span>
#include <vector>

namespace marlsim {

// Row-major matrix of doubles.
struct Tensor2 {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Tensor2() = default;
  Tensor2(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
  Tensor2(std::size_t r, std::size_t c, std::vector<double> values);

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<double> row(std::size_t r) { return std::span<double>(data).subspan(r * cols, cols); }
  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(data).subspan(r * cols, cols);
  }
  bool operator==(const Tensor2&) const = default;
};

enum class Activation { kTanh, kLinear };

// Dense network; hidden layers use tanh. Weight l is (size_{l+1} x size_l).
struct MlpParams {
  std::vector<std::size_t> layer_sizes;
  std::vector<Tensor2> weights;
  std::vector<std::vector<double>> biases;
  Activation output_activation = Activation::kLinear;

  std::size_t num_layers() const { return weights.size(); }
  std::size_t input_size() const { return layer_sizes.front(); }
  std::size_t output_size() const { return layer_sizes.back(); }
  bool same_shape(const MlpParams& o) const;
  bool operator==(const MlpParams&) const = default;
};

struct ForwardCache {
  std::vector<Tensor2> activations;  // [0] is the input, [l+1] the output of layer l
};

struct MlpGrads {
  std::vector<Tensor2> weights;
  std::vector<std::vector<double>> biases;
  Tensor2 input;  // d loss / d input, same shape as the forward input
};

struct AdamState {
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  std::vector<Tensor2> m_weights, v_weights;
  std::vector<std::vector<double>> m_biases, v_biases;
  std::int64_t step_count = 0;

  static AdamState zeros_like(const MlpParams& params);
  bool operator==(const AdamState&) const = default;
};

// Glorot-uniform weights, zero biases.
MlpParams init_params(const std::vector<std::size_t>& layer_sizes, Activation output_activation,
                      std::uint64_t seed);

// Rows of `input` are samples. Fills `cache` when given.
Tensor2 forward(const MlpParams& params, const Tensor2& input, ForwardCache* cache = nullptr);

MlpGrads backward(const MlpParams& params, const ForwardCache& cache, const Tensor2& output_grad);

// Bias-corrected Adam. Throws NumericError naming the layer on a non-finite gradient.
void adam_step(MlpParams& params, const MlpGrads& grads, AdamState& state, double lr);

// One Adam update over flat storage; `step` is the already-incremented count.
void adam_update(std::span<double> params, std::span<const double> grads, std::span<double> m,
                 std::span<double> v, std::int64_t step, double lr);

// target = tau * online + (1 - tau) * target
void polyak_update(MlpParams& target, const MlpParams& online, double tau);

}  // namespace marlsim

#endif  // MARLSIM_NET_HPP_
