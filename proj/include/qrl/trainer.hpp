#pragma once

// Quasimetric RL: maximize E[phi(d(s, g))] subject to
// E[relu(d(s, s') + r)^2] <= eps^2, with a Lagrange multiplier updated by dual
// ascent, plus the latent transition loss that makes greedy control possible.

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "qrl/autodiff.hpp"
#include "qrl/critic.hpp"
#include "qrl/environments.hpp"

namespace qrl {

struct QrlConfig {
  double epsilon = 0.25;
  double lambda_init = 0.01;
  double lr_model = 5e-4;
  double lr_lambda = 0.3;
  int batch_size = 512;
  std::int64_t total_steps = 30000;
  double phi_offset = 500.0;
  double phi_beta = 0.01;
  double transition_weight = 75.0;
  double goal_mix_prob = 0.05;
  std::uint64_t seed = 0;
  bool symmetric_ablation = false;
  int log_interval = 100;
  CriticSpec critic;

  CriticSpec resolved_critic() const {
    CriticSpec c = critic;
    c.symmetric = symmetric_ablation;
    return c;
  }

  /// Full-scale discretized MountainCar hyperparameters.
  static QrlConfig paper_mountaincar() {
    QrlConfig c;
    c.batch_size = 4096;
    c.total_steps = 500000;
    c.critic = CriticSpec::paper_mountaincar();
    return c;
  }
};

// ---------------------------------------------------------------------------
// Loss pieces

/// phi(x) = -softplus(c - x, beta): increasing, convex, saturating at 0.
inline double phi(double x, double c = 500.0, double beta = 0.01) { return -softplus(c - x, beta); }
inline double phi_grad(double x, double c = 500.0, double beta = 0.01) { return softplus_grad(c - x, beta); }

namespace detail {
struct RecordBatch {
  Matrix s, s_next;
  std::vector<int> actions;
  std::vector<double> rewards;
};

inline Matrix observation_rows(std::span<const Observation> obs) {
  Matrix m(static_cast<Eigen::Index>(obs.size()), 3);
  for (std::size_t i = 0; i < obs.size(); ++i)
    for (int j = 0; j < 3; ++j) m(static_cast<Eigen::Index>(i), j) = obs[i][j];
  return m;
}

inline RecordBatch gather(std::span<const TransitionRecord> records) {
  RecordBatch b;
  const auto n = static_cast<Eigen::Index>(records.size());
  b.s.resize(n, 3);
  b.s_next.resize(n, 3);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = records[i];
    for (int j = 0; j < 3; ++j) {
      b.s(i, j) = r.s[j];
      b.s_next(i, j) = r.s_next[j];
    }
    b.actions.push_back(r.a);
    b.rewards.push_back(r.r);
  }
  return b;
}

inline double mean(std::span<const double> x) {
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}
}  // namespace detail

/// mean relu(d(s, s') + r)^2; only overestimates of the step cost count.
inline double constraint_term(const QuasimetricCritic& critic, std::span<const TransitionRecord> batch) {
  if (batch.empty()) throw std::invalid_argument("constraint_term: empty batch");
  const auto b = detail::gather(batch);
  const auto d = critic.state_distances(b.s, b.s_next);
  double sum = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double over = std::max(0.0, d[i] + b.rewards[i]);
    sum += over * over;
  }
  return sum / static_cast<double>(d.size());
}

/// mean phi(d(s_r, g_r)).
inline double pull_term(const QuasimetricCritic& critic, const Matrix& states, const Matrix& goals,
                        double c = 500.0, double beta = 0.01) {
  if (states.rows() != goals.rows() || states.rows() == 0) throw ShapeError("pull_term: shape mismatch");
  const auto d = critic.state_distances(states, goals);
  double sum = 0.0;
  for (double x : d) sum += phi(x, c, beta);
  return sum / static_cast<double>(d.size());
}

/// mean over records with a real action of (d(z^', z')^2 + d(z', z^')^2) / 2.
inline double transition_loss(const QuasimetricCritic& critic, std::span<const TransitionRecord> batch) {
  std::vector<TransitionRecord> real;
  for (const auto& r : batch)
    if (r.a >= 0) real.push_back(r);
  if (real.empty()) return 0.0;
  const auto b = detail::gather(real);
  const Matrix z_next = critic.encode(b.s_next);
  const Matrix z_pred = critic.transition_predict(critic.encode(b.s), b.actions);
  const auto fwd = critic.latent_distances(z_pred, z_next);
  const auto bwd = critic.latent_distances(z_next, z_pred);
  double sum = 0.0;
  for (std::size_t i = 0; i < fwd.size(); ++i) sum += 0.5 * (fwd[i] * fwd[i] + bwd[i] * bwd[i]);
  return sum / static_cast<double>(fwd.size());
}

/// Goals are next-states of uniformly drawn records, or the goal token with
/// probability p_goal_token.
inline Matrix sample_goals(const TransitionDataset& ds, int batch_size, double p_goal_token, std::mt19937_64& rng,
                           int* num_tokens = nullptr) {
  if (ds.empty()) throw std::invalid_argument("sample_goals: empty dataset");
  std::uniform_int_distribution<std::size_t> pick(0, ds.size() - 1);
  std::bernoulli_distribution token(p_goal_token);
  Matrix g(batch_size, 3);
  int tokens = 0;
  for (int i = 0; i < batch_size; ++i) {
    const bool use_token = token(rng);
    const Observation& o = use_token ? kGoalToken : ds.records[pick(rng)].s_next;
    tokens += use_token;
    for (int j = 0; j < 3; ++j) g(i, j) = o[j];
  }
  if (num_tokens) *num_tokens = tokens;
  return g;
}

// ---------------------------------------------------------------------------
// Training

/// lambda = softplus(lambda_raw) > 0.
struct DualState {
  float lambda_raw = 0.0f;
  AdamState adam;

  static DualState create(double lambda_init, double lr) {
    DualState d;
    d.lambda_raw = static_cast<float>(softplus_inverse(lambda_init));
    std::vector<std::span<float>> shape{{&d.lambda_raw, 1}};
    d.adam = AdamState(shape, AdamConfig{lr});
    return d;
  }

  double lambda() const { return softplus(lambda_raw); }

  /// One ascent step on lambda for the constraint violation (C - eps^2).
  void ascend(double violation) {
    const float grad = static_cast<float>(-violation * softplus_grad(lambda_raw));
    std::vector<std::span<float>> p{{&lambda_raw, 1}};
    std::vector<std::span<const float>> g{{&grad, 1}};
    adam.step(p, g);
  }
};

struct TraceRow {
  std::int64_t step = 0;
  double lambda = 0.0;
  double pull = 0.0;        // E[phi(d(s, g))]
  double constraint = 0.0;  // E[relu(d(s, s') + r)^2]
  double transition = 0.0;
  double max_overshoot = 0.0;  // max_batch relu(d(s, s') + r)
  double loss = 0.0;
  double lr_model = 0.0;
  double lr_lambda = 0.0;
};

using TrainTrace = std::vector<TraceRow>;

class QrlTrainer {
 public:
  QrlTrainer(const TransitionDataset& dataset, const QrlConfig& config)
      : dataset_(dataset),
        config_(config),
        critic_(QuasimetricCritic::create(config.resolved_critic(), config.seed)),
        dual_(DualState::create(config.lambda_init, config.lr_lambda)),
        rng_(config.seed ^ 0x9e3779b97f4a7c15ULL) {
    if (dataset.empty()) throw std::invalid_argument("QrlTrainer: empty dataset");
    if (config.total_steps <= 0 || config.batch_size <= 0) throw std::invalid_argument("QrlTrainer: bad budget");
    auto views = critic_.views();
    adam_ = AdamState(views, AdamConfig{config.lr_model});
  }

  const QuasimetricCritic& critic() const { return critic_; }
  QuasimetricCritic& critic() { return critic_; }
  const DualState& dual() const { return dual_; }
  std::int64_t step_index() const { return step_; }
  const QrlConfig& config() const { return config_; }

  /// One joint primal-dual update on a fresh batch.
  TraceRow step() {
    const int n = config_.batch_size;
    std::uniform_int_distribution<std::size_t> pick(0, dataset_.size() - 1);
    std::vector<TransitionRecord> batch;
    batch.reserve(n);
    for (int i = 0; i < n; ++i) batch.push_back(dataset_.records[pick(rng_)]);
    const Matrix goals = sample_goals(dataset_, n, config_.goal_mix_prob, rng_);
    const auto b = detail::gather(batch);

    CriticBatchPass pass(critic_, b.s, b.actions, b.s_next, goals);
    const auto d_sg = pass.distances(CriticBatchPass::kState, CriticBatchPass::kGoal);
    const auto d_edge = pass.distances(CriticBatchPass::kState, CriticBatchPass::kNext);
    const auto d_fwd = pass.distances(CriticBatchPass::kPred, CriticBatchPass::kNext);
    const auto d_bwd = pass.distances(CriticBatchPass::kNext, CriticBatchPass::kPred);

    const double lambda = dual_.lambda();
    const double eps2 = config_.epsilon * config_.epsilon;
    const double inv_n = 1.0 / n;
    int n_real = 0;
    for (int a : b.actions) n_real += a >= 0;
    const double inv_real = n_real > 0 ? 1.0 / n_real : 0.0;

    TraceRow row;
    row.step = step_;
    std::vector<double> up_sg(n), up_edge(n), up_fwd(n), up_bwd(n);
    double pull = 0, constraint = 0, trans = 0;
    for (int i = 0; i < n; ++i) {
      pull += phi(d_sg[i], config_.phi_offset, config_.phi_beta);
      up_sg[i] = -phi_grad(d_sg[i], config_.phi_offset, config_.phi_beta) * inv_n;
      const double over = std::max(0.0, d_edge[i] + b.rewards[i]);
      constraint += over * over;
      row.max_overshoot = std::max(row.max_overshoot, over);
      up_edge[i] = lambda * 2.0 * over * inv_n;
      if (b.actions[i] >= 0) {
        trans += 0.5 * (d_fwd[i] * d_fwd[i] + d_bwd[i] * d_bwd[i]);
        up_fwd[i] = config_.transition_weight * d_fwd[i] * inv_real;
        up_bwd[i] = config_.transition_weight * d_bwd[i] * inv_real;
      }
    }
    row.pull = pull * inv_n;
    row.constraint = constraint * inv_n;
    row.transition = trans * inv_real;
    row.lambda = lambda;
    row.loss = -row.pull + lambda * (row.constraint - eps2) + config_.transition_weight * row.transition;
    if (!std::isfinite(row.loss))
      throw DivergenceError("qrl_step " + std::to_string(step_) + ": non-finite loss");

    pass.add_upstream(CriticBatchPass::kState, CriticBatchPass::kGoal, up_sg);
    pass.add_upstream(CriticBatchPass::kState, CriticBatchPass::kNext, up_edge);
    pass.add_upstream(CriticBatchPass::kPred, CriticBatchPass::kNext, up_fwd);
    pass.add_upstream(CriticBatchPass::kNext, CriticBatchPass::kPred, up_bwd);
    const CriticGrads grads = pass.backward();

    row.lr_model = cosine_lr(step_, config_.total_steps, config_.lr_model);
    row.lr_lambda = config_.lr_lambda;
    auto params = critic_.views();
    auto gviews = grads.views();
    adam_.step(params, gviews, row.lr_model);
    dual_.ascend(row.constraint - eps2);
    ++step_;
    return row;
  }

 private:
  const TransitionDataset& dataset_;
  QrlConfig config_;
  QuasimetricCritic critic_;
  DualState dual_;
  AdamState adam_;
  std::mt19937_64 rng_;
  std::int64_t step_ = 0;
};

struct QrlResult {
  QuasimetricCritic critic;
  TrainTrace trace;
  DualState dual;
};

/// Runs config.total_steps updates. `on_step` (optional) sees the trainer
/// after every update; trace rows are kept every log_interval steps and at
/// the final step.
inline QrlResult train(const TransitionDataset& dataset, const QrlConfig& config,
                       const std::function<void(const QrlTrainer&, const TraceRow&)>& on_step = {}) {
  QrlTrainer trainer(dataset, config);
  TrainTrace trace;
  const int interval = std::max(1, config.log_interval);
  for (std::int64_t t = 0; t < config.total_steps; ++t) {
    const TraceRow row = trainer.step();
    if (t % interval == 0 || t + 1 == config.total_steps) trace.push_back(row);
    if (on_step) on_step(trainer, row);
  }
  return {trainer.critic(), std::move(trace), trainer.dual()};
}

// ---------------------------------------------------------------------------
// Greedy control

/// argmin_a d^z(T(f(s), a), f(g)); ties go to the smallest action.
inline int greedy_action(const QuasimetricCritic& critic, std::span<const float> s, std::span<const float> g) {
  const int na = critic.spec.num_actions;
  Matrix sm = Eigen::Map<const Matrix>(s.data(), 1, critic.spec.obs_dim);
  Matrix gm = Eigen::Map<const Matrix>(g.data(), 1, critic.spec.obs_dim);
  const Matrix z = critic.encode(sm);
  const Matrix zg = critic.project(critic.encode(gm));
  Matrix zs = z.replicate(na, 1);
  std::vector<int> actions(na);
  std::iota(actions.begin(), actions.end(), 0);
  const Matrix p = critic.project(critic.transition_predict(zs, actions));
  const auto d = critic.head_forward(p, zg.replicate(na, 1));
  int best = 0;
  for (int a = 1; a < na; ++a)
    if (d[a] < d[best]) best = a;
  return best;
}

/// Cached per-state projections of T(f(s), a) for fast greedy tables.
class CriticPolicy {
 public:
  CriticPolicy(const QuasimetricCritic& critic, const TabularEnv& env) : critic_(critic), env_(env) {
    const Matrix obs = env.observation_matrix();
    latents_ = critic.encode(obs);
    const int na = env.num_actions;
    Matrix zs(static_cast<Eigen::Index>(env.num_states) * na, critic.spec.latent_dim);
    std::vector<int> actions(zs.rows());
    for (int s = 0; s < env.num_states; ++s)
      for (int a = 0; a < na; ++a) {
        zs.row(s * na + a) = latents_.row(s);
        actions[s * na + a] = a;
      }
    pred_proj_ = critic.project(critic.transition_predict(zs, actions));
    state_proj_ = critic.project(latents_);
  }

  Matrix goal_projection(const Observation& g) const {
    Matrix gm(1, 3);
    gm << g[0], g[1], g[2];
    return critic_.project(critic_.encode(gm));
  }

  /// Greedy action per state toward goal observation g.
  std::vector<int> action_table(const Observation& g) const {
    const Matrix pg = goal_projection(g);
    const auto d = critic_.head_forward(pred_proj_, pg.replicate(pred_proj_.rows(), 1));
    const int na = env_.num_actions;
    std::vector<int> table(env_.num_states);
    for (int s = 0; s < env_.num_states; ++s) {
      int best = 0;
      for (int a = 1; a < na; ++a)
        if (d[s * na + a] < d[s * na + best]) best = a;
      table[s] = best;
    }
    return table;
  }

  /// d_theta(s, g) for every state s.
  std::vector<double> distances_to(const Observation& g) const {
    const Matrix pg = goal_projection(g);
    return critic_.head_forward(state_proj_, pg.replicate(state_proj_.rows(), 1));
  }

 private:
  const QuasimetricCritic& critic_;
  const TabularEnv& env_;
  Matrix latents_, pred_proj_, state_proj_;
};

}  // namespace qrl
