#pragma once

// Greedy-rollout evaluation on tabulated environments. A policy is an action
// table per goal; returns are -1 per step until the goal region is reached,
// capped at the step budget, and averaged over every start state.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "qrl/environments.hpp"
#include "qrl/oracle.hpp"

namespace qrl {

struct EvalGoal {
  std::string name;
  std::string group;       // aggregation key, e.g. "top" or "9grid"
  Observation observation;  // what the policy is conditioned on
  std::vector<int> targets; // states that count as reaching the goal
};

/// Top-of-hill goal: the token, reached anywhere in the goal set.
inline EvalGoal top_of_hill_goal(const TabularEnv& env) {
  EvalGoal g{"top", "top", kGoalToken, {}};
  for (int s = 0; s < env.num_states; ++s)
    if (env.in_goal(s)) g.targets.push_back(s);
  return g;
}

/// Point goal at a mountain car state, reached within an odd
/// `neighborhood` x `neighborhood` block of bins centered on it.
inline EvalGoal point_goal(const TabularEnv& env, int pos_bin, int vel_bin, int neighborhood) {
  if (env.kind != EnvKind::mountain_car) throw std::invalid_argument("point_goal: mountain car only");
  const int half = std::max(0, neighborhood / 2);
  const int s = env.mc_index(pos_bin, vel_bin);
  EvalGoal g{"state_p" + std::to_string(pos_bin) + "_v" + std::to_string(vel_bin), "9grid", env.observation(s), {}};
  for (int p = std::max(0, pos_bin - half); p <= std::min(env.bins - 1, pos_bin + half); ++p)
    for (int v = std::max(0, vel_bin - half); v <= std::min(env.bins - 1, vel_bin + half); ++v)
      g.targets.push_back(env.mc_index(p, v));
  return g;
}

/// Nine point goals on the 3 x 3 lattice at 1/4, 1/2, 3/4 of each axis.
inline std::vector<EvalGoal> nine_state_goals(const TabularEnv& env, int neighborhood) {
  std::vector<EvalGoal> goals;
  for (int i = 1; i <= 3; ++i)
    for (int j = 1; j <= 3; ++j)
      goals.push_back(point_goal(env, (env.bins - 1) * i / 4, (env.bins - 1) * j / 4, neighborhood));
  return goals;
}

/// Odd neighborhood width scaled from 13 bins at a 160-bin resolution.
inline int scaled_neighborhood(int bins) {
  int n = static_cast<int>(std::lround(13.0 * bins / 160.0));
  if (n % 2 == 0) ++n;
  return std::max(1, n);
}

struct GoalScore {
  std::string name;
  std::string group;
  double mean_return = 0.0;
  double oracle_return = 0.0;
  double floor_return = 0.0;
  double normalized_score = 0.0;
  double success_rate = 0.0;
};

struct EvalReport {
  int budget = 200;
  std::vector<GoalScore> goals;

  /// Mean normalized score over goals in `group`.
  double group_score(const std::string& group) const {
    double sum = 0;
    int n = 0;
    for (const auto& g : goals)
      if (g.group == group) {
        sum += g.normalized_score;
        ++n;
      }
    return n ? sum / n : 0.0;
  }
};

using PolicyTableFn = std::function<std::vector<int>(const EvalGoal&)>;

/// Per-start return of following `table` for up to `budget` steps.
inline std::vector<double> rollout_returns(const TabularEnv& env, const std::vector<int>& table,
                                           const std::vector<int>& targets, int budget) {
  std::vector<char> is_target(env.num_states, 0);
  for (int t : targets) is_target[t] = 1;
  std::vector<double> out(env.num_states);
  for (int start = 0; start < env.num_states; ++start) {
    int s = start, steps = 0;
    while (!is_target[s] && steps < budget) {
      s = env.next(s, table[s]);
      ++steps;
    }
    out[start] = -static_cast<double>(steps);
  }
  return out;
}

/// Oracle return per start: -min(shortest path to the target set, budget).
inline std::vector<double> oracle_returns(const TabularEnv& env, const std::vector<int>& targets, int budget) {
  DiscreteMdpGraph g;
  g.num_nodes = env.num_states;
  for (int s = 0; s < env.num_states; ++s)
    for (int a = 0; a < env.num_actions; ++a) g.add_edge(s, env.next(s, a), 1.0);
  const auto d = distances_to_set(g, targets);
  std::vector<double> out(env.num_states);
  for (int s = 0; s < env.num_states; ++s) out[s] = -std::min(d[s], static_cast<double>(budget));
  return out;
}

/// Policy that descends the exact distance to the target set.
inline std::vector<int> oracle_action_table(const TabularEnv& env, const std::vector<int>& targets) {
  DiscreteMdpGraph g;
  g.num_nodes = env.num_states;
  for (int s = 0; s < env.num_states; ++s)
    for (int a = 0; a < env.num_actions; ++a) g.add_edge(s, env.next(s, a), 1.0);
  const auto d = distances_to_set(g, targets);
  std::vector<int> table(env.num_states, 0);
  for (int s = 0; s < env.num_states; ++s)
    for (int a = 1; a < env.num_actions; ++a)
      if (d[env.next(s, a)] < d[env.next(s, table[s])]) table[s] = a;
  return table;
}

/// Normalized score = 100 (R - R_floor) / (R_oracle - R_floor), R_floor = -budget.
inline EvalReport evaluate_policy(const PolicyTableFn& policy, const TabularEnv& env,
                                  const std::vector<EvalGoal>& goals, int budget) {
  EvalReport rep;
  rep.budget = budget;
  for (const auto& goal : goals) {
    const auto table = policy(goal);
    const auto ret = rollout_returns(env, table, goal.targets, budget);
    const auto oracle = oracle_returns(env, goal.targets, budget);
    GoalScore gs{goal.name, goal.group};
    double sum = 0, osum = 0;
    int success = 0;
    for (int s = 0; s < env.num_states; ++s) {
      sum += ret[s];
      osum += oracle[s];
      success += ret[s] > -budget;
    }
    gs.mean_return = sum / env.num_states;
    gs.oracle_return = osum / env.num_states;
    gs.floor_return = -budget;
    const double span = gs.oracle_return - gs.floor_return;
    gs.normalized_score = span > 0 ? 100.0 * (gs.mean_return - gs.floor_return) / span : 0.0;
    gs.success_rate = static_cast<double>(success) / env.num_states;
    rep.goals.push_back(gs);
  }
  return rep;
}

}  // namespace qrl
