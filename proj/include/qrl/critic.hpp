#pragma once

// Quasimetric critic: encoder f, projector, latent head d^z and the residual
// latent transition T(z, a) = z + g(z, one_hot(a)).

#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "qrl/autodiff.hpp"
#include "qrl/iqe.hpp"

namespace qrl {

struct CriticSpec {
  int obs_dim = 3;
  int num_actions = 3;
  std::vector<int> encoder_hidden{256, 256};
  int latent_dim = 128;
  std::vector<int> projector_hidden{256};
  int components = 8;
  int component_size = 16;
  std::vector<int> transition_hidden{256, 256};
  bool symmetric = false;  // replace the IQE head by ||proj(a) - proj(b)||_2
  // Fixed input normalization x' = (x - obs_shift) * obs_scale; empty = identity.
  std::vector<float> obs_shift;
  std::vector<float> obs_scale;
  // Optional fixed random Fourier features appended to the normalized input:
  // [x, sin(2 pi x B), cos(2 pi x B)] with B ~ N(0, fourier_scale^2), F columns.
  int fourier_features = 0;
  double fourier_scale = 1.0;
  std::uint64_t fourier_seed = 7;

  int encoder_input_dim() const { return obs_dim + 2 * fourier_features; }

  Matrix fourier_matrix() const {
    Matrix b(obs_dim, fourier_features);
    std::mt19937_64 rng(fourier_seed);
    std::normal_distribution<float> n(0.0f, static_cast<float>(fourier_scale));
    for (Eigen::Index j = 0; j < b.cols(); ++j)
      for (Eigen::Index i = 0; i < b.rows(); ++i) b(i, j) = n(rng);
    return b;
  }

  /// Maps mountain car (position, velocity, indicator) onto roughly [-1, 1].
  void normalize_for_mountain_car() {
    obs_shift = {-0.3f, 0.0f, 0.0f};
    obs_scale = {1.0f / 0.9f, 1.0f / 0.07f, 1.0f};
  }

  MlpSpec encoder_spec() const {
    std::vector<int> w{encoder_input_dim()};
    w.insert(w.end(), encoder_hidden.begin(), encoder_hidden.end());
    w.push_back(latent_dim);
    return MlpSpec(w);
  }
  MlpSpec projector_spec() const {
    std::vector<int> w{latent_dim};
    w.insert(w.end(), projector_hidden.begin(), projector_hidden.end());
    w.push_back(components * component_size);
    return MlpSpec(w);
  }
  MlpSpec transition_spec() const {
    std::vector<int> w{latent_dim + num_actions};
    w.insert(w.end(), transition_hidden.begin(), transition_hidden.end());
    w.push_back(latent_dim);
    return MlpSpec(w);
  }

  bool operator==(const CriticSpec&) const = default;

  /// Full-scale MountainCar architecture (3-1024-1024-1024-256 encoder,
  /// 16 x 32 IQE-maxmean head).
  static CriticSpec paper_mountaincar() {
    CriticSpec s;
    s.obs_dim = 3;
    s.num_actions = 3;
    s.encoder_hidden = {1024, 1024, 1024};
    s.latent_dim = 256;
    s.projector_hidden = {1024, 1024, 1024};
    s.components = 16;
    s.component_size = 32;
    s.transition_hidden = {1024, 1024, 1024};
    return s;
  }
};

struct CriticGrads {
  MlpParams encoder, projector, transition;
  float mix_raw = 0.0f;

  std::vector<std::span<const float>> views() const {
    auto out = encoder.views();
    for (auto v : projector.views()) out.push_back(v);
    for (auto v : transition.views()) out.push_back(v);
    out.emplace_back(&mix_raw, 1);
    return out;
  }
};

class QuasimetricCritic {
 public:
  CriticSpec spec;
  MlpParams encoder, projector, transition;
  IqeHead head;
  Matrix fourier_basis;  // [obs_dim x fourier_features], fixed

  QuasimetricCritic() = default;

  /// The last transition layer starts at zero so T is the identity.
  static QuasimetricCritic create(const CriticSpec& spec, std::uint64_t seed) {
    QuasimetricCritic c;
    c.spec = spec;
    c.encoder = mlp_init(spec.encoder_spec(), seed * 3 + 1);
    c.projector = mlp_init(spec.projector_spec(), seed * 3 + 2);
    c.transition = mlp_init(spec.transition_spec(), seed * 3 + 3);
    c.transition.layers.back().weight.setZero();
    c.transition.layers.back().bias.setZero();
    c.head = IqeHead{spec.components, spec.component_size, 0.0f};
    c.fourier_basis = spec.fourier_matrix();
    return c;
  }

  CriticGrads zero_grads() const {
    return {MlpParams::zeros_like(encoder), MlpParams::zeros_like(projector), MlpParams::zeros_like(transition),
            0.0f};
  }

  std::vector<std::span<float>> views() {
    auto out = encoder.views();
    for (auto v : projector.views()) out.push_back(v);
    for (auto v : transition.views()) out.push_back(v);
    out.emplace_back(&head.mix_raw, 1);
    return out;
  }

  std::vector<std::span<const float>> views() const {
    auto out = encoder.views();
    for (auto v : projector.views()) out.push_back(v);
    for (auto v : transition.views()) out.push_back(v);
    out.emplace_back(&head.mix_raw, 1);
    return out;
  }

  bool all_finite() const {
    return encoder.all_finite() && projector.all_finite() && transition.all_finite() && std::isfinite(head.mix_raw);
  }

  // --- inference -----------------------------------------------------------

  Matrix normalize(const Matrix& obs) const {
    if (obs.cols() != spec.obs_dim) throw ShapeError("critic: observation width mismatch");
    if (spec.obs_shift.empty()) return obs;
    Matrix x = obs;
    for (int j = 0; j < spec.obs_dim; ++j) x.col(j) = (x.col(j).array() - spec.obs_shift[j]) * spec.obs_scale[j];
    return x;
  }

  /// Encoder input: normalized observation, plus Fourier features if enabled.
  Matrix features(const Matrix& obs) const {
    Matrix x = normalize(obs);
    if (spec.fourier_features == 0) return x;
    const Matrix phase = (x * fourier_basis).array() * static_cast<float>(2.0 * std::numbers::pi);
    Matrix out(x.rows(), spec.encoder_input_dim());
    out << x, phase.array().sin().matrix(), phase.array().cos().matrix();
    return out;
  }

  Matrix encode(const Matrix& obs) const { return mlp_apply(encoder, features(obs)); }
  Matrix project(const Matrix& z) const { return mlp_apply(projector, z); }

  Matrix transition_input(const Matrix& z, std::span<const int> actions) const {
    if (z.cols() != spec.latent_dim) throw ShapeError("transition: latent width mismatch");
    if (static_cast<Eigen::Index>(actions.size()) != z.rows()) throw ShapeError("transition: action count mismatch");
    Matrix x = Matrix::Zero(z.rows(), spec.latent_dim + spec.num_actions);
    x.leftCols(spec.latent_dim) = z;
    for (Eigen::Index r = 0; r < z.rows(); ++r) {
      const int a = actions[r];
      if (a == -1) continue;  // goal-absorption rows: no action bit
      if (a < 0 || a >= spec.num_actions) throw std::out_of_range("transition: invalid action");
      x(r, spec.latent_dim + a) = 1.0f;
    }
    return x;
  }

  /// T(z, a) for aligned rows.
  Matrix transition_predict(const Matrix& z, std::span<const int> actions) const {
    return z + mlp_apply(transition, transition_input(z, actions));
  }

  Vector transition_predict(const Vector& z, int action) const {
    if (action < 0 || action >= spec.num_actions) throw std::out_of_range("transition: invalid action");
    Matrix zm = z.transpose();
    const int a[1] = {action};
    return transition_predict(zm, a).row(0).transpose();
  }

  std::vector<double> head_forward(const Matrix& pa, const Matrix& pb) const {
    if (spec.symmetric) return L2Head{}.forward(pa, pb);
    return head.forward(pa, pb);
  }

  void head_backward(const Matrix& pa, const Matrix& pb, std::span<const double> upstream, Eigen::Ref<Matrix> ga,
                     Eigen::Ref<Matrix> gb, double& gmix) const {
    if (spec.symmetric)
      L2Head{}.backward(pa, pb, upstream, ga, gb);
    else
      head.backward(pa, pb, upstream, ga, gb, gmix);
  }

  /// d^z on aligned latent rows.
  std::vector<double> latent_distances(const Matrix& za, const Matrix& zb) const {
    return head_forward(project(za), project(zb));
  }

  double latent_distance(const Vector& za, const Vector& zb) const {
    if (za.size() != spec.latent_dim || zb.size() != spec.latent_dim)
      throw ShapeError("latent_distance: width mismatch");
    Matrix a = za.transpose(), b = zb.transpose();
    return latent_distances(a, b).front();
  }

  /// d_theta on aligned observation rows.
  std::vector<double> state_distances(const Matrix& s, const Matrix& g) const {
    if (s.cols() != spec.obs_dim || g.cols() != spec.obs_dim) throw ShapeError("state_distance: dimension mismatch");
    return latent_distances(encode(s), encode(g));
  }

  double state_distance(std::span<const float> s, std::span<const float> g) const {
    if (static_cast<int>(s.size()) != spec.obs_dim || static_cast<int>(g.size()) != spec.obs_dim)
      throw ShapeError("state_distance: dimension mismatch");
    Matrix sm = Eigen::Map<const Matrix>(s.data(), 1, spec.obs_dim);
    Matrix gm = Eigen::Map<const Matrix>(g.data(), 1, spec.obs_dim);
    return state_distances(sm, gm).front();
  }

  /// d^z(T(f(s), a), f(g)) + step_cost for aligned rows.
  std::vector<double> q_distances(const Matrix& s, std::span<const int> actions, const Matrix& g,
                                  double step_cost = 1.0) const {
    const Matrix zhat = transition_predict(encode(s), actions);
    auto d = latent_distances(zhat, encode(g));
    for (auto& x : d) x += step_cost;
    return d;
  }

  double q_distance(std::span<const float> s, int action, std::span<const float> g, double step_cost = 1.0) const {
    if (action < 0 || action >= spec.num_actions) throw std::out_of_range("q_distance: invalid action");
    Matrix sm = Eigen::Map<const Matrix>(s.data(), 1, spec.obs_dim);
    Matrix gm = Eigen::Map<const Matrix>(g.data(), 1, spec.obs_dim);
    const int a[1] = {action};
    return q_distances(sm, a, gm, step_cost).front();
  }
};

/// Gradient of sum_r upstream[r] * d^z(x_r, f(g_r)) where x_r = f(s_r), or
/// T(f(s_r), a_r) when actions are given. Returns the values as well.
struct CriticDistanceGrad {
  std::vector<double> values;
  CriticGrads grads;
  Matrix obs_grad_s, obs_grad_g;
};

inline CriticDistanceGrad critic_distance_backward(const QuasimetricCritic& critic, const Matrix& s, const Matrix& g,
                                                   std::optional<std::span<const int>> actions,
                                                   std::span<const double> upstream) {
  const Eigen::Index n = s.rows();
  if (g.rows() != n || static_cast<Eigen::Index>(upstream.size()) != n)
    throw ShapeError("critic_distance_backward: row mismatch");
  const int dz = critic.spec.latent_dim;

  Matrix obs(2 * n, critic.spec.obs_dim);
  obs << s, g;
  auto enc = mlp_forward(critic.encoder, critic.features(obs));
  Matrix z_s = enc.output.topRows(n), z_g = enc.output.bottomRows(n);

  std::optional<MlpForward> tr;
  Matrix x = z_s;
  if (actions) {
    tr = mlp_forward(critic.transition, critic.transition_input(z_s, *actions));
    x += tr->output;
  }
  Matrix lat(2 * n, dz);
  lat << x, z_g;
  auto proj = mlp_forward(critic.projector, lat);
  const Matrix pa = proj.output.topRows(n), pb = proj.output.bottomRows(n);

  CriticDistanceGrad out;
  out.values = critic.head_forward(pa, pb);
  out.grads = critic.zero_grads();

  Matrix dproj = Matrix::Zero(2 * n, proj.output.cols());
  double gmix = 0.0;
  critic.head_backward(pa, pb, upstream, dproj.topRows(n), dproj.bottomRows(n), gmix);
  out.grads.mix_raw = static_cast<float>(gmix);

  auto pb_back = mlp_backward(proj.tape, dproj);
  out.grads.projector = std::move(pb_back.param_grads);
  Matrix dlat = std::move(pb_back.input_grad);

  Matrix denc(2 * n, dz);
  denc.topRows(n) = dlat.topRows(n);
  denc.bottomRows(n) = dlat.bottomRows(n);
  if (tr) {
    auto tb = mlp_backward(tr->tape, dlat.topRows(n));
    out.grads.transition = std::move(tb.param_grads);
    denc.topRows(n) += tb.input_grad.leftCols(dz);
  }
  auto eb = mlp_backward(enc.tape, denc);
  out.grads.encoder = std::move(eb.param_grads);
  out.obs_grad_s = eb.input_grad.topRows(n);
  out.obs_grad_g = eb.input_grad.bottomRows(n);
  return out;
}


/// One batched forward over (s, a, s', g) rows with latents and projections
/// cached, so several head terms can share a single backward pass.
class CriticBatchPass {
 public:
  enum Slot { kState = 0, kNext = 1, kGoal = 2, kPred = 3 };

  CriticBatchPass(const QuasimetricCritic& critic, const Matrix& s, std::span<const int> actions, const Matrix& s_next,
                  const Matrix& g)
      : critic_(critic), n_(s.rows()) {
    if (s_next.rows() != n_ || g.rows() != n_ || static_cast<Eigen::Index>(actions.size()) != n_)
      throw ShapeError("CriticBatchPass: row mismatch");
    const int dz = critic.spec.latent_dim;
    Matrix obs(3 * n_, critic.spec.obs_dim);
    obs << s, s_next, g;
    enc_ = mlp_forward(critic.encoder, critic.features(obs));
    const Matrix& z = enc_.output;
    tr_ = mlp_forward(critic.transition, critic.transition_input(z.topRows(n_), actions));
    Matrix lat(4 * n_, dz);
    lat.topRows(3 * n_) = z;
    lat.bottomRows(n_) = z.topRows(n_) + tr_.output;
    proj_ = mlp_forward(critic.projector, lat);
    dproj_ = Matrix::Zero(4 * n_, proj_.output.cols());
  }

  Eigen::Index rows() const { return n_; }

  auto projection(Slot s) const { return proj_.output.middleRows(s * n_, n_); }

  std::vector<double> distances(Slot a, Slot b) {
    const Matrix pa = proj_.output.middleRows(a * n_, n_), pb = proj_.output.middleRows(b * n_, n_);
    if (critic_.spec.symmetric) return critic_.head_forward(pa, pb);
    return critic_.head.forward(pa, pb, &tapes_[a * 4 + b]);
  }

  /// Adds upstream[r] * d(a_r, b_r) to the objective being differentiated.
  void add_upstream(Slot a, Slot b, std::span<const double> upstream) {
    const Matrix pa = proj_.output.middleRows(a * n_, n_), pb = proj_.output.middleRows(b * n_, n_);
    Matrix ga = Matrix::Zero(n_, pa.cols()), gb = Matrix::Zero(n_, pb.cols());
    const IqeTape& tape = tapes_[a * 4 + b];
    if (!critic_.spec.symmetric && tape.rows == n_)
      critic_.head.backward_from_tape(tape, upstream, ga, gb, grad_mix_);
    else
      critic_.head_backward(pa, pb, upstream, ga, gb, grad_mix_);
    dproj_.middleRows(a * n_, n_) += ga;
    dproj_.middleRows(b * n_, n_) += gb;
  }

  CriticGrads backward() {
    const int dz = critic_.spec.latent_dim;
    CriticGrads out = critic_.zero_grads();
    out.mix_raw = static_cast<float>(grad_mix_);
    auto pb = mlp_backward(proj_.tape, dproj_);
    out.projector = std::move(pb.param_grads);
    Matrix dz_all = pb.input_grad.topRows(3 * n_);
    const Matrix dpred = pb.input_grad.bottomRows(n_);
    auto tb = mlp_backward(tr_.tape, dpred);
    out.transition = std::move(tb.param_grads);
    dz_all.topRows(n_) += dpred + tb.input_grad.leftCols(dz);
    auto eb = mlp_backward(enc_.tape, dz_all);
    out.encoder = std::move(eb.param_grads);
    return out;
  }

 private:
  const QuasimetricCritic& critic_;
  Eigen::Index n_;
  MlpForward enc_, tr_, proj_;
  Matrix dproj_;
  IqeTape tapes_[16];
  double grad_mix_ = 0.0;
};

}  // namespace qrl
