#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "qrl/environments.hpp"

using namespace qrl;

TEST(MountainCar, StepFromRestUnderGravity) {
  // v' = 0 + 0 * force - 0.0025 cos(-1.5)
  const auto st = mountain_car_step({-0.5, 0.0}, 1);
  EXPECT_NEAR(st.next.velocity, -0.0025 * std::cos(-1.5), 1e-15);
  EXPECT_NEAR(st.next.velocity, -1.7684e-4, 1e-8);
  EXPECT_NEAR(st.next.position, -0.5 + st.next.velocity, 1e-15);
  EXPECT_EQ(st.reward, -1.0);
}

TEST(MountainCar, LeftWallStopsTheCar) {
  const auto st = mountain_car_step({-1.2, -0.05}, 0);
  EXPECT_EQ(st.next.position, -1.2);
  EXPECT_EQ(st.next.velocity, 0.0);
  EXPECT_THROW(mountain_car_step({0, 0}, 3), std::out_of_range);
}

TEST(MountainCar, SpeedIsClamped) {
  EXPECT_LE(mountain_car_step({-0.5, 0.07}, 2).next.velocity, 0.07);
}

TEST(MountainCar, GoalSetRequiresNonnegativeVelocity) {
  EXPECT_TRUE(in_goal_set({0.5, 0.0}));
  EXPECT_TRUE(in_goal_set({0.6, 0.07}));
  EXPECT_FALSE(in_goal_set({0.55, -0.001}));
  EXPECT_FALSE(in_goal_set({0.49, 0.01}));
}

TEST(Discretize, BinsIncludeBothEnds) {
  EXPECT_EQ(bin_index(-1.2, -1.2, 0.6, 64), 0);
  EXPECT_EQ(bin_index(0.6, -1.2, 0.6, 64), 63);
  EXPECT_EQ(bin_center(63, -1.2, 0.6, 64), 0.6);
  EXPECT_EQ(bin_index(5.0, -1.2, 0.6, 64), 63);
  EXPECT_THROW(bin_index(0.0, 0.0, 1.0, 1), std::invalid_argument);
  for (int k = 0; k < 64; ++k) EXPECT_EQ(bin_index(bin_center(k, -1.2, 0.6, 64), -1.2, 0.6, 64), k);
}

TEST(MountainCarEnv, TabulationIsClosedAndHasGoals) {
  const auto env = make_mountain_car(16);
  EXPECT_EQ(env.num_states, 256);
  EXPECT_TRUE(env.has_goal_token);
  int goals = 0;
  for (int s = 0; s < env.num_states; ++s) {
    goals += env.in_goal(s);
    for (int a = 0; a < 3; ++a) {
      const int n = env.next(s, a);
      ASSERT_GE(n, 0);
      ASSERT_LT(n, env.num_states);
    }
    ASSERT_EQ(env.find_state(env.observation(s)), s);
  }
  EXPECT_GT(goals, 0);
  EXPECT_EQ(env.token_node(), 256);
}

TEST(Gridworld, WallsAndBordersBlockMoves) {
  GridWorldSpec spec;
  spec.width = 3;
  spec.height = 3;
  spec.walls = {{1, 1}};
  EXPECT_EQ(gridworld_step(spec, {0, 1}, kRight).next, (Cell{0, 1}));
  EXPECT_EQ(gridworld_step(spec, {0, 0}, kLeft).next, (Cell{0, 0}));
  EXPECT_EQ(gridworld_step(spec, {0, 0}, kUp).next, (Cell{0, 1}));
  EXPECT_THROW(gridworld_step(spec, {1, 1}, kUp), std::out_of_range);
  const auto env = make_gridworld(spec);
  EXPECT_EQ(env.num_states, 8);
  EXPECT_FALSE(env.has_goal_token);
}

TEST(Dataset, GenerationIsDeterministicPerSeed) {
  const auto env = make_mountain_car(32);
  GenerateOptions opt;
  opt.episodes = 20;
  opt.seed = 4;
  const auto a = generate_dataset(env, opt), b = generate_dataset(env, opt);
  EXPECT_EQ(a.records, b.records);
  opt.seed = 5;
  EXPECT_NE(a.records, generate_dataset(env, opt).records);
}

TEST(Dataset, RecordsFollowTheDynamicsAndGoalRecordsCloseEpisodes) {
  const auto env = make_mountain_car(32);
  GenerateOptions opt;
  opt.episodes = 60;
  opt.seed = 1;
  const auto ds = generate_dataset(env, opt);
  std::set<std::uint32_t> episodes;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& r = ds.records[i];
    episodes.insert(r.episode_id);
    if (r.a < 0) {
      EXPECT_TRUE(is_goal_token(r.s_next));
      EXPECT_FLOAT_EQ(r.r, -0.25f);
      EXPECT_TRUE(i + 1 == ds.size() || ds.records[i + 1].episode_id != r.episode_id);
      continue;
    }
    const int s = *env.find_state(r.s);
    EXPECT_EQ(env.observation(env.next(s, r.a)), r.s_next);
    EXPECT_EQ(r.r, -1.0f);
  }
  EXPECT_EQ(episodes.size(), ds.episode_starts.size());
  EXPECT_GT(ds.num_goal_records(), 0u);
}

TEST(Dataset, FullCoverageHasEveryStateAction) {
  const auto env = make_gridworld(GridWorldSpec{});
  const auto ds = full_coverage_dataset(env);
  EXPECT_EQ(ds.size(), 64u * 4u);
  EXPECT_EQ(ds.num_goal_records(), 0u);
  const auto mc = make_mountain_car(8);
  int goals = 0;
  for (int s = 0; s < mc.num_states; ++s) goals += mc.in_goal(s);
  EXPECT_EQ(full_coverage_dataset(mc).num_goal_records(), static_cast<std::size_t>(goals));
}

TEST(ReachesGoal, TokenMatchesGoalSetEntry) {
  EXPECT_TRUE(reaches_goal({0.55f, 0.01f, 0.0f}, kGoalToken));
  EXPECT_FALSE(reaches_goal({0.55f, -0.01f, 0.0f}, kGoalToken));
  EXPECT_TRUE(reaches_goal(kGoalToken, kGoalToken));
  EXPECT_TRUE(reaches_goal({0.1f, 0.0f, 0.0f}, {0.1f, 0.0f, 0.0f}));
  EXPECT_FALSE(reaches_goal({0.1f, 0.0f, 0.0f}, {0.2f, 0.0f, 0.0f}));
}
