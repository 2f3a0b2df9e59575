#pragma once

// Dense ReLU MLPs with a hand-written reverse pass, Adam, and the scalar
// helpers (softplus, cosine schedule) the trainers use.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace qrl {

/// Row-major [batch x features] activations.
using Matrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXf;

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Activation { relu, identity };

struct MlpSpec {
  std::vector<int> layer_widths;
  Activation hidden_activation = Activation::relu;
  Activation output_activation = Activation::identity;

  MlpSpec() = default;
  explicit MlpSpec(std::vector<int> widths) : layer_widths(std::move(widths)) { validate(); }

  void validate() const {
    if (layer_widths.size() < 2) throw ShapeError("MlpSpec needs at least input and output widths");
    for (int w : layer_widths)
      if (w < 1) throw ShapeError("MlpSpec widths must be positive");
  }
  int input_width() const { return layer_widths.front(); }
  int output_width() const { return layer_widths.back(); }
  std::size_t num_layers() const { return layer_widths.size() - 1; }
  bool operator==(const MlpSpec&) const = default;
};

struct DenseLayer {
  Matrix weight;  // [out x in]
  Vector bias;    // [out]
};

/// Also used for gradients: a gradient is an MlpParams of the same shape.
struct MlpParams {
  MlpSpec spec;
  std::vector<DenseLayer> layers;

  static MlpParams zeros(const MlpSpec& spec) {
    spec.validate();
    MlpParams p;
    p.spec = spec;
    for (std::size_t l = 0; l < spec.num_layers(); ++l) {
      const int in = spec.layer_widths[l], out = spec.layer_widths[l + 1];
      p.layers.push_back({Matrix::Zero(out, in), Vector::Zero(out)});
    }
    return p;
  }

  static MlpParams zeros_like(const MlpParams& other) { return zeros(other.spec); }

  std::size_t num_scalars() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weight.size() + l.bias.size();
    return n;
  }

  /// Flat views in a fixed order: (W0, b0, W1, b1, ...).
  std::vector<std::span<float>> views() {
    std::vector<std::span<float>> out;
    for (auto& l : layers) {
      out.emplace_back(l.weight.data(), static_cast<std::size_t>(l.weight.size()));
      out.emplace_back(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
    }
    return out;
  }
  std::vector<std::span<const float>> views() const {
    std::vector<std::span<const float>> out;
    for (const auto& l : layers) {
      out.emplace_back(l.weight.data(), static_cast<std::size_t>(l.weight.size()));
      out.emplace_back(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
    }
    return out;
  }

  bool all_finite() const {
    for (const auto& l : layers)
      if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
    return true;
  }

  MlpParams& operator+=(const MlpParams& o) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      layers[i].weight += o.layers[i].weight;
      layers[i].bias += o.layers[i].bias;
    }
    return *this;
  }

  bool operator==(const MlpParams& o) const {
    if (!(spec == o.spec)) return false;
    for (std::size_t i = 0; i < layers.size(); ++i)
      if (layers[i].weight != o.layers[i].weight || layers[i].bias != o.layers[i].bias) return false;
    return true;
  }
};

/// He-normal weights (std = sqrt(2 / fan_in)) and zero biases.
inline MlpParams mlp_init(const MlpSpec& spec, std::uint64_t seed) {
  MlpParams p = MlpParams::zeros(spec);
  std::mt19937_64 rng(seed);
  for (auto& layer : p.layers) {
    const auto fan_in = static_cast<float>(layer.weight.cols());
    std::normal_distribution<float> normal(0.0f, std::sqrt(2.0f / fan_in));
    for (Eigen::Index i = 0; i < layer.weight.size(); ++i) layer.weight.data()[i] = normal(rng);
  }
  return p;
}

struct MlpForward;
struct MlpBackward;

/// Forward intermediates of one mlp_forward call. Holds a pointer to the
/// parameters it was recorded against; those must outlive the tape.
class GradTape {
 public:
  GradTape() = default;

  bool consumed() const { return consumed_; }
  const MlpParams& params() const { return *params_; }

 private:
  friend MlpForward mlp_forward(const MlpParams&, const Matrix&);
  friend MlpBackward mlp_backward(GradTape&, const Matrix&);

  const MlpParams* params_ = nullptr;
  std::vector<Matrix> layer_inputs_;  // input to layer l (post-activation of l-1)
  bool consumed_ = false;
};

struct MlpForward {
  Matrix output;
  GradTape tape;
};

struct MlpBackward {
  MlpParams param_grads;
  Matrix input_grad;
};

namespace detail {
inline void affine(const DenseLayer& layer, const Matrix& x, Matrix& y) {
  y.noalias() = x * layer.weight.transpose();
  y.rowwise() += layer.bias.transpose();
}
}  // namespace detail

/// Inference-only forward pass.
inline Matrix mlp_apply(const MlpParams& params, const Matrix& input) {
  if (input.cols() != params.spec.input_width())
    throw ShapeError("mlp input width " + std::to_string(input.cols()) + " != " +
                     std::to_string(params.spec.input_width()));
  Matrix x = input, y;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    detail::affine(params.layers[l], x, y);
    if (l + 1 < params.layers.size()) y = y.cwiseMax(0.0f);
    x.swap(y);
  }
  return x;
}

inline MlpForward mlp_forward(const MlpParams& params, const Matrix& input) {
  if (input.cols() != params.spec.input_width())
    throw ShapeError("mlp input width " + std::to_string(input.cols()) + " != " +
                     std::to_string(params.spec.input_width()));
  MlpForward out;
  out.tape.params_ = &params;
  out.tape.layer_inputs_.reserve(params.layers.size());
  Matrix x = input;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    Matrix y;
    detail::affine(params.layers[l], x, y);
    if (l + 1 < params.layers.size()) y = y.cwiseMax(0.0f);
    out.tape.layer_inputs_.push_back(std::move(x));
    x = std::move(y);
  }
  out.output = std::move(x);
  return out;
}

/// Exact reverse pass; the ReLU subgradient at 0 is 0. Consumes the tape.
inline MlpBackward mlp_backward(GradTape& tape, const Matrix& output_grad) {
  if (tape.params_ == nullptr) throw std::logic_error("mlp_backward on an empty tape");
  if (tape.consumed_) throw std::logic_error("mlp_backward: tape already consumed");
  const MlpParams& params = *tape.params_;
  const auto batch = tape.layer_inputs_.front().rows();
  if (output_grad.rows() != batch || output_grad.cols() != params.spec.output_width())
    throw ShapeError("mlp_backward: output_grad shape mismatch");
  tape.consumed_ = true;

  MlpBackward out{MlpParams::zeros(params.spec), Matrix()};
  Matrix grad = output_grad;
  for (std::size_t l = params.layers.size(); l-- > 0;) {
    const Matrix& x = tape.layer_inputs_[l];
    auto& g = out.param_grads.layers[l];
    g.weight.noalias() = grad.transpose() * x;
    Eigen::VectorXd bias_acc = Eigen::VectorXd::Zero(grad.cols());
    for (Eigen::Index r = 0; r < grad.rows(); ++r) bias_acc += grad.row(r).transpose().cast<double>();
    g.bias = bias_acc.cast<float>();
    Matrix gx;
    gx.noalias() = grad * params.layers[l].weight;
    if (l > 0) gx.array() *= (x.array() > 0.0f).cast<float>();
    grad = std::move(gx);
  }
  out.input_grad = std::move(grad);
  tape.layer_inputs_.clear();
  return out;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class AdamState {
 public:
  AdamState() = default;

  /// Accumulators are shaped after `shapes` (sizes only).
  template <class Views>
  AdamState(const Views& shapes, AdamConfig cfg) : cfg_(cfg) {
    if (!(cfg.lr > 0) || !(cfg.beta1 > 0 && cfg.beta1 < 1) || !(cfg.beta2 > 0 && cfg.beta2 < 1) ||
        !(cfg.eps > 0))
      throw std::invalid_argument("invalid Adam hyperparameters");
    for (const auto& s : shapes) {
      m_.emplace_back(s.size(), 0.0f);
      v_.emplace_back(s.size(), 0.0f);
    }
  }

  const AdamConfig& config() const { return cfg_; }
  std::int64_t step_count() const { return t_; }

  /// One bias-corrected Adam update at learning rate `lr` (the config value
  /// when negative).
  void step(std::span<const std::span<float>> params, std::span<const std::span<const float>> grads,
            double lr = -1.0) {
    if (params.size() != m_.size() || grads.size() != m_.size())
      throw ShapeError("adam: parameter group count mismatch");
    for (std::size_t i = 0; i < grads.size(); ++i) {
      if (params[i].size() != m_[i].size() || grads[i].size() != m_[i].size())
        throw ShapeError("adam: parameter group size mismatch");
      for (float g : grads[i])
        if (!std::isfinite(g)) throw DivergenceError("adam: non-finite gradient");
    }
    if (lr < 0) lr = cfg_.lr;
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const auto b1 = static_cast<float>(cfg_.beta1), b2 = static_cast<float>(cfg_.beta2);
    const auto step_size = static_cast<float>(lr / bc1);
    const auto inv_sqrt_bc2 = static_cast<float>(1.0 / std::sqrt(bc2));
    const auto eps = static_cast<float>(cfg_.eps);
    for (std::size_t i = 0; i < params.size(); ++i) {
      float* p = params[i].data();
      const float* g = grads[i].data();
      float* m = m_[i].data();
      float* v = v_[i].data();
      for (std::size_t j = 0; j < params[i].size(); ++j) {
        m[j] = b1 * m[j] + (1.0f - b1) * g[j];
        v[j] = b2 * v[j] + (1.0f - b2) * g[j] * g[j];
        p[j] -= step_size * m[j] / (std::sqrt(v[j]) * inv_sqrt_bc2 + eps);
      }
    }
  }

 private:
  AdamConfig cfg_;
  std::int64_t t_ = 0;
  std::vector<std::vector<float>> m_, v_;
};

inline void adam_step(AdamState& state, MlpParams& params, const MlpParams& grads, double lr = -1.0) {
  auto p = params.views();
  auto g = grads.views();
  state.step(p, g, lr);
}

// ---------------------------------------------------------------------------
// Scalar helpers

/// (1/beta) * ln(1 + exp(beta * x)), stable for large |beta * x|.
inline double softplus(double x, double beta = 1.0) {
  if (!(beta > 0)) throw std::invalid_argument("softplus: beta must be positive");
  const double t = beta * x;
  return (std::max(t, 0.0) + std::log1p(std::exp(-std::abs(t)))) / beta;
}

/// d/dx softplus(x, beta) = sigmoid(beta * x).
inline double softplus_grad(double x, double beta = 1.0) {
  if (!(beta > 0)) throw std::invalid_argument("softplus: beta must be positive");
  const double t = beta * x;
  if (t >= 0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

inline double sigmoid(double x) { return softplus_grad(x, 1.0); }

/// Inverse of softplus with beta = 1, for y > 0.
inline double softplus_inverse(double y) {
  if (!(y > 0)) throw std::invalid_argument("softplus_inverse: y must be positive");
  return y > 20.0 ? y + std::log(-std::expm1(-y)) : std::log(std::expm1(y));
}

/// Cosine decay to zero without restarts.
inline double cosine_lr(std::int64_t step, std::int64_t total_steps, double base_lr) {
  if (total_steps <= 0 || step < 0 || step > total_steps)
    throw std::out_of_range("cosine_lr: step outside [0, total_steps]");
  return base_lr * 0.5 *
         (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total_steps)));
}

}  // namespace qrl
