#pragma once

// Presets and glue shared by the command-line tool and the acceptance suite.

#include <algorithm>
#include <charconv>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "qrl/environments.hpp"
#include "qrl/evaluation.hpp"
#include "qrl/oracle.hpp"
#include "qrl/td_baselines.hpp"
#include "qrl/trainer.hpp"

namespace qrl {

inline TabularEnv make_env(const std::string& env_id, int resolution, int height = 0) {
  if (env_id == "mountaincar") return make_mountain_car(resolution);
  if (env_id == "gridworld") {
    GridWorldSpec spec;
    spec.width = resolution;
    spec.height = height > 0 ? height : resolution;
    return make_gridworld(spec);
  }
  throw std::invalid_argument("unknown env: " + env_id);
}

inline TabularEnv make_env(const DatasetMetadata& m) { return make_env(m.env_id, m.resolution, m.height); }

// ---------------------------------------------------------------------------
// Presets

/// Small critic for CPU runs: 128-wide MLPs, 64-d latent, 8 x 16 IQE head.
inline CriticSpec desk_critic(int num_actions) {
  CriticSpec c;
  c.num_actions = num_actions;
  c.encoder_hidden = {128, 128};
  c.latent_dim = 64;
  c.projector_hidden = {128};
  c.components = 8;
  c.component_size = 16;
  c.transition_hidden = {128, 128};
  return c;
}

inline QrlConfig desk_qrl_config(const TabularEnv& env) {
  QrlConfig c;
  c.batch_size = 512;
  c.total_steps = 30000;
  c.critic = desk_critic(env.num_actions);
  if (env.kind == EnvKind::mountain_car) {
    c.critic.normalize_for_mountain_car();
    c.critic.fourier_features = 64;
    c.critic.fourier_scale = 1.5;
    c.transition_weight = 5.0;
  } else {
    c.batch_size = 256;
    c.total_steps = 20000;
  }
  return c;
}

inline QrlConfig paper_qrl_config(const TabularEnv& env) {
  QrlConfig c = QrlConfig::paper_mountaincar();
  c.critic.num_actions = env.num_actions;
  if (env.kind == EnvKind::mountain_car) c.critic.normalize_for_mountain_car();
  return c;
}

inline QLearnConfig desk_qlearn_config(const TabularEnv& env, QHead head) {
  QLearnConfig c;
  c.head = head;
  c.batch_size = 512;
  c.total_steps = 30000;
  c.num_actions = env.num_actions;
  c.mlp_hidden = {256, 256};
  c.critic = desk_critic(env.num_actions);
  if (env.kind == EnvKind::mountain_car) {
    c.critic.normalize_for_mountain_car();
    c.critic.fourier_features = 64;
    c.critic.fourier_scale = 1.5;
    c.obs_shift = c.critic.obs_shift;
    c.obs_scale = c.critic.obs_scale;
  }
  return c;
}

inline QLearnConfig paper_qlearn_config(const TabularEnv& env, QHead head) {
  QLearnConfig c = QLearnConfig::paper_mountaincar(head);
  c.num_actions = env.num_actions;
  c.critic.num_actions = env.num_actions;
  if (env.kind == EnvKind::mountain_car) {
    c.critic.normalize_for_mountain_car();
    c.obs_shift = c.critic.obs_shift;
    c.obs_scale = c.critic.obs_scale;
  }
  return c;
}

// ---------------------------------------------------------------------------
// Goal lists

namespace detail {
inline std::pair<int, int> parse_int_pair(std::string_view s, const std::string& what) {
  const auto comma = s.find(',');
  if (comma == std::string_view::npos) throw std::invalid_argument("bad goal '" + what + "': expected A,B");
  int a = 0, b = 0;
  auto r1 = std::from_chars(s.data(), s.data() + comma, a);
  auto r2 = std::from_chars(s.data() + comma + 1, s.data() + s.size(), b);
  if (r1.ec != std::errc{} || r2.ec != std::errc{} || r1.ptr != s.data() + comma || r2.ptr != s.data() + s.size())
    throw std::invalid_argument("bad goal '" + what + "': expected integers");
  return {a, b};
}
}  // namespace detail

/// Goal list entries, comma separated:
///   top          goal-set token (mountain car)
///   9grid        nine lattice point goals (mountain car)
///   state:P,V    point goal at (position bin, velocity bin)
///   cell:X,Y     single gridworld cell
/// e.g. "top,9grid" or "state:10,40,top".
inline std::vector<EvalGoal> parse_goals(const TabularEnv& env, const std::string& list, int neighborhood) {
  std::vector<std::string> parts, items;
  std::stringstream ss(list);
  for (std::string part; std::getline(ss, part, ',');) parts.push_back(part);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (parts[i].find(':') != std::string::npos && i + 1 < parts.size()) {
      items.push_back(parts[i] + "," + parts[i + 1]);
      ++i;
    } else if (!parts[i].empty()) {
      items.push_back(parts[i]);
    }
  }
  if (items.empty()) throw std::invalid_argument("empty goal list");

  std::vector<EvalGoal> goals;
  for (const auto& item : items) {
    if (item == "top") {
      if (!env.has_goal_token) throw std::invalid_argument("goal 'top' needs an environment with a goal set");
      goals.push_back(top_of_hill_goal(env));
    } else if (item == "9grid") {
      if (env.kind != EnvKind::mountain_car) throw std::invalid_argument("goal '9grid' is mountain car only");
      for (auto& g : nine_state_goals(env, neighborhood)) goals.push_back(std::move(g));
    } else if (item.rfind("state:", 0) == 0) {
      if (env.kind != EnvKind::mountain_car) throw std::invalid_argument("goal 'state:' is mountain car only");
      const auto [p, v] = detail::parse_int_pair(std::string_view(item).substr(6), item);
      if (p < 0 || v < 0 || p >= env.bins || v >= env.bins) throw std::invalid_argument("goal out of range: " + item);
      auto g = point_goal(env, p, v, neighborhood);
      g.group = "state";
      goals.push_back(std::move(g));
    } else if (item.rfind("cell:", 0) == 0) {
      if (env.kind != EnvKind::gridworld) throw std::invalid_argument("goal 'cell:' is gridworld only");
      const auto [x, y] = detail::parse_int_pair(std::string_view(item).substr(5), item);
      const auto it = std::find(env.cells.begin(), env.cells.end(), Cell{x, y});
      if (it == env.cells.end()) throw std::invalid_argument("goal cell is not free: " + item);
      const int s = static_cast<int>(it - env.cells.begin());
      goals.push_back({"cell_x" + std::to_string(x) + "_y" + std::to_string(y), "cell", env.observation(s), {s}});
    } else {
      throw std::invalid_argument("unknown goal: " + item);
    }
  }
  return goals;
}

/// Exact shortest-path distance from every state to the goal's observation
/// (the token node for the goal set, the goal state itself otherwise).
inline std::vector<double> oracle_distances(const TabularEnv& env, const EvalGoal& goal) {
  const auto graph = mdp_graph(env);
  int target = env.token_node();
  if (!is_goal_token(goal.observation)) {
    const auto s = env.find_state(goal.observation);
    if (!s) throw std::invalid_argument("goal observation is not a state: " + goal.name);
    target = *s;
  }
  const int t[1] = {target};
  const auto d = shortest_paths(graph, t);
  std::vector<double> out(env.num_states);
  for (int s = 0; s < env.num_states; ++s) out[s] = d(s, 0);
  return out;
}

/// Same, but restricted to the transitions present in `ds`; states the
/// dataset never visits (or that cannot reach the goal in it) are +inf.
inline std::vector<double> dataset_oracle_distances(const TabularEnv& env, const TransitionDataset& ds,
                                                    const EvalGoal& goal) {
  const auto dg = dataset_graph(ds);
  std::vector<double> out(env.num_states, kInf);
  const auto it = dg.index.find(goal.observation);
  if (it == dg.index.end()) return out;
  const int t[1] = {it->second};
  const auto d = shortest_paths(dg.graph, t);
  for (int s = 0; s < env.num_states; ++s) {
    const auto node = dg.index.find(env.observation(s));
    if (node != dg.index.end()) out[s] = d(node->second, 0);
  }
  return out;
}

}  // namespace qrl
