#pragma once

// Goal-conditioned Q-learning baselines with hindsight relabeling: a
// monolithic MLP over (s, g), and the quasimetric critic with Q = -(c + d^z)
// trained by TD regression (the transition loss is kept).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "qrl/autodiff.hpp"
#include "qrl/critic.hpp"
#include "qrl/environments.hpp"
#include "qrl/trainer.hpp"

namespace qrl {

enum class QHead { monolithic_mlp, quasimetric };

struct QLearnConfig {
  double gamma = 0.95;
  int target_update_interval = 2;
  double target_ema = 0.005;
  double lr = 1e-3;
  int batch_size = 512;
  std::int64_t total_steps = 30000;
  double relabel_geometric_p = 0.3;
  double goal_mix_prob = 0.05;
  std::uint64_t seed = 0;
  QHead head = QHead::monolithic_mlp;
  int log_interval = 100;
  double step_cost = 1.0;

  // monolithic head: [2 * obs_dim, hidden..., num_actions]
  std::vector<int> mlp_hidden{256, 256, 256};
  int obs_dim = 3;
  int num_actions = 3;
  std::vector<float> obs_shift, obs_scale;

  // quasimetric head
  CriticSpec critic;
  double transition_weight = 5.0;

  static QLearnConfig paper_mountaincar(QHead head) {
    QLearnConfig c;
    c.head = head;
    c.batch_size = 4096;
    c.total_steps = 500000;
    c.mlp_hidden = {1024, 1024, 1024, 1024, 1024, 1024};
    c.critic = CriticSpec::paper_mountaincar();
    return c;
  }
};

// ---------------------------------------------------------------------------
// Relabeling

/// For every record, one past the last real (a >= 0) record of its episode.
/// Goal-absorption records map to their own index.
inline std::vector<std::size_t> real_episode_ends(const TransitionDataset& ds) {
  std::vector<std::size_t> ends(ds.size());
  std::size_t end = ds.size();
  for (std::size_t i = ds.size(); i-- > 0;) {
    const auto& r = ds.records[i];
    const bool episode_tail = i + 1 == ds.size() || ds.records[i + 1].episode_id != r.episode_id;
    if (r.a < 0) {
      ends[i] = i;
      if (episode_tail) end = i;
      continue;
    }
    if (episode_tail) end = i + 1;
    ends[i] = end;
  }
  return ends;
}

/// Future state dt >= 1 steps ahead in the same episode, dt ~ Geometric(p)
/// truncated at the episode end; the goal token with probability p_goal_token.
inline Observation relabel_goal(const TransitionDataset& ds, const std::vector<std::size_t>& episode_ends,
                                std::size_t index, double p, double p_goal_token, std::mt19937_64& rng) {
  if (index >= ds.size() || ds.records[index].a < 0) throw std::out_of_range("relabel_goal: not a real record");
  if (p_goal_token > 0) {
    std::bernoulli_distribution token(p_goal_token);
    if (token(rng)) return kGoalToken;
  }
  std::geometric_distribution<std::int64_t> geo(p);
  const std::int64_t dt = geo(rng) + 1;
  const std::size_t last = episode_ends[index] - 1;
  const std::size_t j = std::min(last, index + static_cast<std::size_t>(dt - 1));
  return ds.records[j].s_next;
}

/// r + gamma * max_a Q_target(s', a; g), or r alone when s' attains g.
inline double td_target(double reward, std::span<const double> next_q, bool terminal, double gamma) {
  if (terminal || gamma == 0.0) return reward;
  return reward + gamma * *std::max_element(next_q.begin(), next_q.end());
}

// ---------------------------------------------------------------------------
// Q models

/// Q-values [rows x num_actions] for aligned (s, g) rows.
class QModel {
 public:
  QHead head = QHead::monolithic_mlp;
  MlpParams mlp;
  QuasimetricCritic critic;
  std::vector<float> obs_shift, obs_scale;
  int obs_dim = 3;
  int num_actions = 3;
  double step_cost = 1.0;

  static QModel create(const QLearnConfig& cfg) {
    QModel m;
    m.head = cfg.head;
    m.obs_dim = cfg.obs_dim;
    m.num_actions = cfg.num_actions;
    m.step_cost = cfg.step_cost;
    m.obs_shift = cfg.obs_shift;
    m.obs_scale = cfg.obs_scale;
    if (cfg.head == QHead::monolithic_mlp) {
      std::vector<int> w{2 * cfg.obs_dim};
      w.insert(w.end(), cfg.mlp_hidden.begin(), cfg.mlp_hidden.end());
      w.push_back(cfg.num_actions);
      m.mlp = mlp_init(MlpSpec(w), cfg.seed * 7 + 5);
    } else {
      CriticSpec spec = cfg.critic;
      spec.obs_dim = cfg.obs_dim;
      spec.num_actions = cfg.num_actions;
      m.critic = QuasimetricCritic::create(spec, cfg.seed);
    }
    return m;
  }

  Matrix mlp_input(const Matrix& s, const Matrix& g) const {
    Matrix x(s.rows(), 2 * obs_dim);
    x << s, g;
    if (!obs_shift.empty())
      for (int j = 0; j < 2 * obs_dim; ++j)
        x.col(j) = (x.col(j).array() - obs_shift[j % obs_dim]) * obs_scale[j % obs_dim];
    return x;
  }

  Matrix q_values(const Matrix& s, const Matrix& g) const {
    if (head == QHead::monolithic_mlp) return mlp_apply(mlp, mlp_input(s, g));
    const Eigen::Index n = s.rows();
    const Matrix z = critic.encode(s);
    const Matrix pg = critic.project(critic.encode(g));
    Matrix zs(n * num_actions, z.cols()), pgs(n * num_actions, pg.cols());
    std::vector<int> actions(static_cast<std::size_t>(n * num_actions));
    for (Eigen::Index r = 0; r < n; ++r)
      for (int a = 0; a < num_actions; ++a) {
        zs.row(r * num_actions + a) = z.row(r);
        pgs.row(r * num_actions + a) = pg.row(r);
        actions[r * num_actions + a] = a;
      }
    const auto d = critic.head_forward(critic.project(critic.transition_predict(zs, actions)), pgs);
    Matrix q(n, num_actions);
    for (Eigen::Index r = 0; r < n; ++r)
      for (int a = 0; a < num_actions; ++a) q(r, a) = static_cast<float>(-(step_cost + d[r * num_actions + a]));
    return q;
  }

  std::vector<std::span<float>> views() {
    return head == QHead::monolithic_mlp ? mlp.views() : critic.views();
  }

  /// target <- (1 - tau) target + tau * learner
  void ema_from(QModel& learner, double tau) {
    auto dst = views();
    auto src = learner.views();
    const auto t = static_cast<float>(tau);
    for (std::size_t i = 0; i < dst.size(); ++i)
      for (std::size_t j = 0; j < dst[i].size(); ++j) dst[i][j] = (1.0f - t) * dst[i][j] + t * src[i][j];
  }
};

struct QTraceRow {
  std::int64_t step = 0;
  double td_loss = 0.0;
  double transition = 0.0;
  double mean_q = 0.0;
};

class QLearner {
 public:
  QLearner(const TransitionDataset& dataset, const QLearnConfig& config)
      : dataset_(dataset),
        config_(config),
        model_(QModel::create(config)),
        target_(model_),
        episode_ends_(real_episode_ends(dataset)),
        rng_(config.seed ^ 0x5851f42d4c957f2dULL) {
    for (std::size_t i = 0; i < dataset.size(); ++i)
      if (dataset.records[i].a >= 0) real_.push_back(i);
    if (real_.empty()) throw std::invalid_argument("QLearner: dataset has no real transitions");
    auto v = model_.views();
    adam_ = AdamState(v, AdamConfig{config.lr});
  }

  const QModel& model() const { return model_; }
  const QModel& target() const { return target_; }
  std::int64_t step_index() const { return step_; }

  QTraceRow step() {
    const int n = config_.batch_size;
    std::uniform_int_distribution<std::size_t> pick(0, real_.size() - 1);
    std::vector<TransitionRecord> batch;
    Matrix goals(n, 3);
    std::vector<char> terminal(n);
    for (int i = 0; i < n; ++i) {
      const std::size_t idx = real_[pick(rng_)];
      batch.push_back(dataset_.records[idx]);
      const Observation g = relabel_goal(dataset_, episode_ends_, idx, config_.relabel_geometric_p,
                                         config_.goal_mix_prob, rng_);
      for (int j = 0; j < 3; ++j) goals(i, j) = g[j];
      terminal[i] = reaches_goal(batch.back().s_next, g);
    }
    const auto b = detail::gather(batch);
    const Matrix next_q = target_.q_values(b.s_next, goals);
    std::vector<double> y(n);
    for (int i = 0; i < n; ++i) {
      std::vector<double> row(next_q.cols());
      for (Eigen::Index a = 0; a < next_q.cols(); ++a) row[a] = next_q(i, a);
      y[i] = td_target(b.rewards[i], row, terminal[i], config_.gamma);
    }

    QTraceRow out;
    out.step = step_;
    std::vector<std::span<const float>> gviews;
    MlpParams mlp_grads;
    CriticGrads critic_grads;
    if (model_.head == QHead::monolithic_mlp) {
      auto fwd = mlp_forward(model_.mlp, model_.mlp_input(b.s, goals));
      Matrix dq = Matrix::Zero(n, model_.num_actions);
      double loss = 0, qsum = 0;
      for (int i = 0; i < n; ++i) {
        const double q = fwd.output(i, b.actions[i]);
        loss += 0.5 * (q - y[i]) * (q - y[i]);
        qsum += q;
        dq(i, b.actions[i]) = static_cast<float>((q - y[i]) / n);
      }
      out.td_loss = loss / n;
      out.mean_q = qsum / n;
      auto back = mlp_backward(fwd.tape, dq);
      mlp_grads = std::move(back.param_grads);
      gviews = std::as_const(mlp_grads).views();
    } else {
      CriticBatchPass pass(model_.critic, b.s, b.actions, b.s_next, goals);
      const auto d_pg = pass.distances(CriticBatchPass::kPred, CriticBatchPass::kGoal);
      const auto d_fwd = pass.distances(CriticBatchPass::kPred, CriticBatchPass::kNext);
      const auto d_bwd = pass.distances(CriticBatchPass::kNext, CriticBatchPass::kPred);
      std::vector<double> up_pg(n), up_fwd(n), up_bwd(n);
      double loss = 0, qsum = 0, trans = 0;
      for (int i = 0; i < n; ++i) {
        const double q = -(config_.step_cost + d_pg[i]);
        loss += 0.5 * (q - y[i]) * (q - y[i]);
        qsum += q;
        up_pg[i] = -(q - y[i]) / n;
        trans += 0.5 * (d_fwd[i] * d_fwd[i] + d_bwd[i] * d_bwd[i]);
        up_fwd[i] = config_.transition_weight * d_fwd[i] / n;
        up_bwd[i] = config_.transition_weight * d_bwd[i] / n;
      }
      out.td_loss = loss / n;
      out.mean_q = qsum / n;
      out.transition = trans / n;
      pass.add_upstream(CriticBatchPass::kPred, CriticBatchPass::kGoal, up_pg);
      pass.add_upstream(CriticBatchPass::kPred, CriticBatchPass::kNext, up_fwd);
      pass.add_upstream(CriticBatchPass::kNext, CriticBatchPass::kPred, up_bwd);
      critic_grads = pass.backward();
      gviews = critic_grads.views();
    }
    if (!std::isfinite(out.td_loss))
      throw DivergenceError("q_learning step " + std::to_string(step_) + ": non-finite loss");
    auto params = model_.views();
    adam_.step(params, gviews);
    ++step_;
    if (step_ % config_.target_update_interval == 0) target_.ema_from(model_, config_.target_ema);
    return out;
  }

 private:
  const TransitionDataset& dataset_;
  QLearnConfig config_;
  QModel model_, target_;
  std::vector<std::size_t> episode_ends_;
  std::vector<std::size_t> real_;
  AdamState adam_;
  std::mt19937_64 rng_;
  std::int64_t step_ = 0;
};

struct QLearnResult {
  QModel model;
  std::vector<QTraceRow> trace;
};

inline QLearnResult q_learning_train(const TransitionDataset& dataset, const QLearnConfig& config,
                                     const std::function<void(const QLearner&, const QTraceRow&)>& on_step = {}) {
  if (dataset.empty()) throw std::invalid_argument("q_learning_train: empty dataset");
  QLearner learner(dataset, config);
  std::vector<QTraceRow> trace;
  const int interval = std::max(1, config.log_interval);
  for (std::int64_t t = 0; t < config.total_steps; ++t) {
    const auto row = learner.step();
    if (t % interval == 0 || t + 1 == config.total_steps) trace.push_back(row);
    if (on_step) on_step(learner, row);
  }
  return {learner.model(), std::move(trace)};
}

/// Greedy action tables and -V(s; g) estimates over a tabulated env.
class QPolicy {
 public:
  QPolicy(const QModel& model, const TabularEnv& env) : model_(model), env_(env), obs_(env.observation_matrix()) {}

  Matrix q_table(const Observation& g) const {
    Matrix gm(env_.num_states, 3);
    for (int s = 0; s < env_.num_states; ++s) gm.row(s) << g[0], g[1], g[2];
    return model_.q_values(obs_, gm);
  }

  std::vector<int> action_table(const Observation& g) const {
    const Matrix q = q_table(g);
    std::vector<int> t(env_.num_states);
    for (int s = 0; s < env_.num_states; ++s) {
      int best = 0;
      for (int a = 1; a < q.cols(); ++a)
        if (q(s, a) > q(s, best)) best = a;
      t[s] = best;
    }
    return t;
  }

  /// -max_a Q(s, a; g) for every state.
  std::vector<double> negated_values(const Observation& g) const {
    const Matrix q = q_table(g);
    std::vector<double> v(env_.num_states);
    for (int s = 0; s < env_.num_states; ++s) v[s] = -static_cast<double>(q.row(s).maxCoeff());
    return v;
  }

 private:
  const QModel& model_;
  const TabularEnv& env_;
  Matrix obs_;
};

// ---------------------------------------------------------------------------
// Tabular reference

/// Tabular Q-learning toward one goal state with unit step costs: sweeps every
/// (s, a) of `env` in shuffled order, Q += alpha * (td_target - Q). Returns
/// Q as [num_states x num_actions]; entries for the goal state stay 0.
inline Matrix tabular_q_learning(const TabularEnv& env, int goal_state, double gamma, int sweeps, double alpha,
                                 std::uint64_t seed) {
  if (goal_state < 0 || goal_state >= env.num_states) throw std::invalid_argument("tabular_q_learning: bad goal");
  if (!(alpha > 0 && alpha <= 1)) throw std::invalid_argument("tabular_q_learning: alpha not in (0, 1]");
  Matrix q = Matrix::Zero(env.num_states, env.num_actions);
  std::vector<std::pair<int, int>> pairs;
  for (int s = 0; s < env.num_states; ++s)
    if (s != goal_state)
      for (int a = 0; a < env.num_actions; ++a) pairs.emplace_back(s, a);
  std::mt19937_64 rng(seed);
  std::vector<double> next_q(env.num_actions);
  for (int sweep = 0; sweep < sweeps; ++sweep) {
    std::shuffle(pairs.begin(), pairs.end(), rng);
    for (const auto [s, a] : pairs) {
      const int sn = env.next(s, a);
      for (int b = 0; b < env.num_actions; ++b) next_q[b] = q(sn, b);
      const double target = td_target(-1.0, next_q, sn == goal_state, gamma);
      q(s, a) += static_cast<float>(alpha * (target - q(s, a)));
    }
  }
  return q;
}

/// Discounted value of a goal reached after `steps` unit-cost steps:
/// -(1 - gamma^steps) / (1 - gamma), or -steps when gamma = 1.
inline double discounted_path_value(double steps, double gamma) {
  if (std::isinf(steps)) return gamma < 1 ? -1.0 / (1.0 - gamma) : -kInf;
  if (gamma == 1.0) return -steps;
  return -(1.0 - std::pow(gamma, steps)) / (1.0 - gamma);
}

}  // namespace qrl
