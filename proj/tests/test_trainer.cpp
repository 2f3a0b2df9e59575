#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "qrl/oracle.hpp"
#include "qrl/pipeline.hpp"
#include "qrl/trainer.hpp"

using namespace qrl;

namespace {

CriticSpec tiny_critic(int actions) {
  CriticSpec c;
  c.num_actions = actions;
  c.encoder_hidden = {32};
  c.latent_dim = 16;
  c.projector_hidden = {32};
  c.components = 4;
  c.component_size = 8;
  c.transition_hidden = {32};
  return c;
}

QrlConfig tiny_grid_config() {
  QrlConfig cfg;
  cfg.critic = tiny_critic(4);
  cfg.batch_size = 64;
  cfg.total_steps = 1500;
  cfg.lr_model = 2e-3;
  cfg.log_interval = 100;
  return cfg;
}

TabularEnv small_grid() {
  GridWorldSpec spec;
  spec.width = spec.height = 4;
  return make_gridworld(spec);
}

}  // namespace

TEST(Phi, KnownValues) {
  // -softplus(500 - x, 0.01)
  EXPECT_NEAR(phi(500.0), -std::log(2.0) / 0.01, 1e-9);
  EXPECT_NEAR(phi(500.0), -69.3147, 1e-4);
  EXPECT_NEAR(phi(0.0), -(5.0 + std::log1p(std::exp(-5.0))) / 0.01, 1e-9);
  EXPECT_NEAR(phi(0.0), -500.6715, 1e-4);
  EXPECT_NEAR(phi_grad(500.0), 0.5, 1e-12);
  EXPECT_LT(phi(10.0), phi(20.0));  // increasing
  EXPECT_LT(phi_grad(20.0), phi_grad(10.0));  // concave: slope decays toward saturation
}

TEST(ConstraintTerm, OnlyOvershootCounts) {
  const auto critic = QuasimetricCritic::create(tiny_critic(3), 0);
  const Observation s{0.1f, 0.0f, 0.0f};
  // d(s, s) = 0 exactly, so relu(0 + r)^2 is 0 for r = -1 and 0.09 for r = 0.3.
  std::vector<TransitionRecord> cost{{s, 0, s, -1.0f, 0}};
  EXPECT_DOUBLE_EQ(constraint_term(critic, cost), 0.0);
  std::vector<TransitionRecord> gain{{s, 0, s, 0.3f, 0}};
  EXPECT_NEAR(constraint_term(critic, gain), 0.09, 1e-7);
  EXPECT_THROW(constraint_term(critic, std::vector<TransitionRecord>{}), std::invalid_argument);
}

TEST(TransitionLoss, ZeroForSelfLoopsAtInitAndIgnoresGoalRecords) {
  const auto critic = QuasimetricCritic::create(tiny_critic(3), 1);
  const Observation s{0.2f, 0.01f, 0.0f};
  std::vector<TransitionRecord> loops{{s, 1, s, -1.0f, 0}};
  EXPECT_DOUBLE_EQ(transition_loss(critic, loops), 0.0);
  std::vector<TransitionRecord> goal_only{{s, -1, kGoalToken, -0.25f, 0}};
  EXPECT_DOUBLE_EQ(transition_loss(critic, goal_only), 0.0);
}

TEST(SampleGoals, TokenFractionFollowsMixProbability) {
  const auto ds = full_coverage_dataset(small_grid());  // no token observations of its own
  std::mt19937_64 rng(2);
  int tokens = 0;
  const Matrix g = sample_goals(ds, 20000, 0.25, rng, &tokens);
  EXPECT_NEAR(tokens / 20000.0, 0.25, 0.015);
  int counted = 0;
  for (Eigen::Index i = 0; i < g.rows(); ++i) counted += g(i, 2) == 1.0f;
  EXPECT_EQ(counted, tokens);
  sample_goals(ds, 500, 0.0, rng, &tokens);
  EXPECT_EQ(tokens, 0);
  sample_goals(ds, 500, 1.0, rng, &tokens);
  EXPECT_EQ(tokens, 500);
}

TEST(DualState, AscentSignAndPositivity) {
  auto d = DualState::create(0.01, 0.3);
  EXPECT_NEAR(d.lambda(), 0.01, 1e-6);
  const double before = d.lambda();
  d.ascend(0.5);  // constraint above budget
  EXPECT_GT(d.lambda(), before);
  const double mid = d.lambda();
  for (int i = 0; i < 200; ++i) d.ascend(-1.0);
  EXPECT_LT(d.lambda(), mid);
  EXPECT_GT(d.lambda(), 0.0);
}

TEST(QrlTrainer, RejectsEmptyInputs) {
  TransitionDataset empty;
  EXPECT_THROW(QrlTrainer(empty, tiny_grid_config()), std::invalid_argument);
}

TEST(QrlTrainer, SameSeedSameResult) {
  const auto env = small_grid();
  const auto ds = full_coverage_dataset(env);
  auto cfg = tiny_grid_config();
  cfg.total_steps = 50;
  const auto a = train(ds, cfg), b = train(ds, cfg);
  EXPECT_TRUE(a.critic.encoder == b.critic.encoder);
  EXPECT_TRUE(a.critic.projector == b.critic.projector);
  EXPECT_EQ(a.dual.lambda(), b.dual.lambda());
  ASSERT_EQ(a.trace.size(), 2u);  // step 0 and the final step
  EXPECT_EQ(a.trace.back().step, 49);
}

TEST(QrlTrainer, LearnsGridworldDistanceOrdering) {
  const auto env = small_grid();
  const auto ds = full_coverage_dataset(env);
  auto cfg = tiny_grid_config();
  cfg.total_steps = 5000;
  const auto result = train(ds, cfg);
  const auto dstar = all_pairs_shortest_paths(mdp_graph(env));
  const Matrix obs = env.observation_matrix();
  std::vector<double> model, truth;
  for (int i = 0; i < env.num_states; ++i) {
    const auto d = result.critic.state_distances(obs.row(i).replicate(env.num_states, 1), obs);
    for (int j = 0; j < env.num_states; ++j) {
      model.push_back(d[j]);
      truth.push_back(dstar(i, j));
    }
  }
  const std::vector<char> mask(model.size(), 1);
  const auto rep = value_error_report(model, truth, mask);
  EXPECT_GT(rep.spearman, 0.8);
  EXPECT_GT(result.dual.lambda(), 0.0);
  for (const auto& row : result.trace) EXPECT_TRUE(std::isfinite(row.loss));
}

TEST(CriticPolicy, GreedyActionsFollowATrainedCritic) {
  const auto env = small_grid();
  const auto ds = full_coverage_dataset(env);
  const auto result = train(ds, tiny_grid_config());
  const CriticPolicy policy(result.critic, env);
  const auto goals = parse_goals(env, "cell:3,3,cell:0,0", 1);
  PolicyTableFn fn = [&](const EvalGoal& g) { return policy.action_table(g.observation); };
  const auto rep = evaluate_policy(fn, env, goals, 50);
  EXPECT_GT(rep.group_score("cell"), 60.0);
}
