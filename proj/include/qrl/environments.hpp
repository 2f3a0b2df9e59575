#pragma once

// Deterministic benchmark MDPs: discretized MountainCar (with a goal-token
// indicator dimension for the top-of-hill goal set) and gridworlds. Both are
// tabulated into a TabularEnv that the oracle, dataset generation and policy
// evaluation share.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "qrl/autodiff.hpp"
#include "qrl/graph.hpp"

namespace qrl {

using Observation = std::array<float, 3>;

/// Abstract top-of-hill goal: (position, velocity, indicator).
inline constexpr Observation kGoalToken{0.5f, 0.0f, 1.0f};

inline bool is_goal_token(const Observation& o) { return o[2] == 1.0f; }

// ---------------------------------------------------------------------------
// MountainCar

namespace mountain_car {
inline constexpr double kMinPosition = -1.2;
inline constexpr double kMaxPosition = 0.6;
inline constexpr double kMaxSpeed = 0.07;
inline constexpr double kForce = 0.001;
inline constexpr double kGravity = 0.0025;
inline constexpr double kGoalPosition = 0.5;
inline constexpr int kNumActions = 3;
}  // namespace mountain_car

struct MountainCarState {
  double position = 0.0;
  double velocity = 0.0;
  bool operator==(const MountainCarState&) const = default;
};

struct MountainCarStep {
  MountainCarState next;
  double reward = -1.0;
};

inline MountainCarStep mountain_car_step(const MountainCarState& s, int action) {
  using namespace mountain_car;
  if (action < 0 || action >= kNumActions) throw std::out_of_range("mountain_car_step: invalid action");
  double v = s.velocity + (action - 1) * kForce - kGravity * std::cos(3.0 * s.position);
  v = std::clamp(v, -kMaxSpeed, kMaxSpeed);
  double p = std::clamp(s.position + v, kMinPosition, kMaxPosition);
  if (p == kMinPosition && v < 0) v = 0.0;
  return {{p, v}, -1.0};
}

inline bool in_goal_set(const MountainCarState& s) {
  return s.position >= mountain_car::kGoalPosition && s.position <= mountain_car::kMaxPosition &&
         s.velocity >= 0.0 && s.velocity <= mountain_car::kMaxSpeed;
}

/// Index of the nearest of `bins` evenly spaced centers on [lo, hi].
inline int bin_index(double x, double lo, double hi, int bins) {
  if (bins < 2) throw std::invalid_argument("discretize: need at least 2 bins");
  const double k = std::round((x - lo) / (hi - lo) * (bins - 1));
  return static_cast<int>(std::clamp(k, 0.0, static_cast<double>(bins - 1)));
}

/// Center k of `bins` centers on [lo, hi]; both ends are exact.
inline double bin_center(int k, double lo, double hi, int bins) {
  if (k <= 0) return lo;
  if (k >= bins - 1) return hi;
  return lo + (hi - lo) / (bins - 1) * k;
}

inline MountainCarState discretize(const MountainCarState& s, int bins) {
  using namespace mountain_car;
  const int pk = bin_index(s.position, kMinPosition, kMaxPosition, bins);
  const int vk = bin_index(s.velocity, -kMaxSpeed, kMaxSpeed, bins);
  return {bin_center(pk, kMinPosition, kMaxPosition, bins), bin_center(vk, -kMaxSpeed, kMaxSpeed, bins)};
}

// ---------------------------------------------------------------------------
// Gridworld

struct Cell {
  int x = 0;
  int y = 0;
  auto operator<=>(const Cell&) const = default;
};

enum GridAction : int { kUp = 0, kDown = 1, kLeft = 2, kRight = 3 };

struct GridWorldSpec {
  int width = 8;
  int height = 8;
  std::set<Cell> walls;

  bool inside(Cell c) const { return c.x >= 0 && c.y >= 0 && c.x < width && c.y < height; }
  bool free(Cell c) const { return inside(c) && !walls.contains(c); }
};

struct GridStep {
  Cell next;
  double reward = -1.0;
};

/// Blocked moves stay put and still cost 1.
inline GridStep gridworld_step(const GridWorldSpec& spec, Cell c, int action) {
  if (!spec.free(c)) throw std::out_of_range("gridworld_step: invalid cell");
  static constexpr int dx[4] = {0, 0, -1, 1};
  static constexpr int dy[4] = {1, -1, 0, 0};
  if (action < 0 || action >= 4) throw std::out_of_range("gridworld_step: invalid action");
  const Cell n{c.x + dx[action], c.y + dy[action]};
  return {spec.free(n) ? n : c, -1.0};
}

// ---------------------------------------------------------------------------
// Tabulated environment

enum class EnvKind { mountain_car, gridworld };

class TabularEnv {
 public:
  EnvKind kind = EnvKind::gridworld;
  std::string id;
  int bins = 0;               // mountain car resolution per dimension
  int width = 0, height = 0;  // gridworld size
  int num_states = 0;
  int num_actions = 0;
  bool has_goal_token = false;
  std::vector<Observation> observations;
  std::vector<int> transitions;  // [state * num_actions + action]
  std::vector<char> goal_mask;   // goal-set membership (mountain car)
  std::vector<Cell> cells;       // gridworld cell per state

  int next(int s, int a) const {
    if (s < 0 || s >= num_states || a < 0 || a >= num_actions) throw std::out_of_range("env: state/action");
    return transitions[static_cast<std::size_t>(s) * num_actions + a];
  }
  const Observation& observation(int s) const { return observations.at(s); }
  bool in_goal(int s) const { return goal_mask.at(s) != 0; }

  /// Graph node representing the goal token (one past the concrete states).
  int token_node() const { return num_states; }

  std::optional<int> find_state(const Observation& o) const {
    auto it = index_.find(o);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  Matrix observation_matrix() const {
    Matrix m(num_states, 3);
    for (int s = 0; s < num_states; ++s)
      for (int j = 0; j < 3; ++j) m(s, j) = observations[s][j];
    return m;
  }

  /// Mountain car state index for (position bin, velocity bin).
  int mc_index(int pos_bin, int vel_bin) const { return pos_bin * bins + vel_bin; }

  void build_index() {
    index_.clear();
    for (int s = 0; s < num_states; ++s) index_.emplace(observations[s], s);
  }

 private:
  std::map<Observation, int> index_;
};

/// bins x bins discretized MountainCar; state index = pos_bin * bins + vel_bin.
inline TabularEnv make_mountain_car(int bins) {
  using namespace mountain_car;
  if (bins < 2) throw std::invalid_argument("mountain car: need at least 2 bins");
  TabularEnv env;
  env.kind = EnvKind::mountain_car;
  env.id = "mountaincar";
  env.bins = bins;
  env.num_states = bins * bins;
  env.num_actions = kNumActions;
  env.has_goal_token = true;
  env.observations.resize(env.num_states);
  env.goal_mask.resize(env.num_states);
  env.transitions.resize(static_cast<std::size_t>(env.num_states) * kNumActions);
  std::vector<MountainCarState> states(env.num_states);
  for (int p = 0; p < bins; ++p)
    for (int v = 0; v < bins; ++v) {
      const int s = p * bins + v;
      states[s] = {bin_center(p, kMinPosition, kMaxPosition, bins), bin_center(v, -kMaxSpeed, kMaxSpeed, bins)};
      env.observations[s] = {static_cast<float>(states[s].position), static_cast<float>(states[s].velocity), 0.0f};
      env.goal_mask[s] = in_goal_set(states[s]) ? 1 : 0;
    }
  for (int s = 0; s < env.num_states; ++s)
    for (int a = 0; a < kNumActions; ++a) {
      const auto n = discretize(mountain_car_step(states[s], a).next, bins);
      const int pk = bin_index(n.position, kMinPosition, kMaxPosition, bins);
      const int vk = bin_index(n.velocity, -kMaxSpeed, kMaxSpeed, bins);
      env.transitions[static_cast<std::size_t>(s) * kNumActions + a] = pk * bins + vk;
    }
  env.build_index();
  return env;
}

/// Observations are (x / width, y / height, 0).
inline TabularEnv make_gridworld(const GridWorldSpec& spec) {
  if (spec.width < 1 || spec.height < 1) throw std::invalid_argument("gridworld: empty grid");
  TabularEnv env;
  env.kind = EnvKind::gridworld;
  env.id = "gridworld";
  env.width = spec.width;
  env.height = spec.height;
  env.num_actions = 4;
  std::map<Cell, int> ids;
  for (int y = 0; y < spec.height; ++y)
    for (int x = 0; x < spec.width; ++x)
      if (spec.free({x, y})) {
        ids[{x, y}] = static_cast<int>(env.cells.size());
        env.cells.push_back({x, y});
      }
  env.num_states = static_cast<int>(env.cells.size());
  env.goal_mask.assign(env.num_states, 0);
  for (const Cell& c : env.cells)
    env.observations.push_back({static_cast<float>(c.x) / spec.width, static_cast<float>(c.y) / spec.height, 0.0f});
  env.transitions.resize(static_cast<std::size_t>(env.num_states) * 4);
  for (int s = 0; s < env.num_states; ++s)
    for (int a = 0; a < 4; ++a) env.transitions[static_cast<std::size_t>(s) * 4 + a] = ids.at(gridworld_step(spec, env.cells[s], a).next);
  env.build_index();
  return env;
}

/// Unit-cost dynamics graph; goal-set states get a 0-cost edge to the token.
inline DiscreteMdpGraph mdp_graph(const TabularEnv& env) {
  DiscreteMdpGraph g;
  g.num_nodes = env.num_states + (env.has_goal_token ? 1 : 0);
  g.edges.reserve(env.transitions.size() + env.num_states);
  for (int s = 0; s < env.num_states; ++s)
    for (int a = 0; a < env.num_actions; ++a) g.add_edge(s, env.next(s, a), 1.0);
  if (env.has_goal_token)
    for (int s = 0; s < env.num_states; ++s)
      if (env.in_goal(s)) g.add_edge(s, env.token_node(), 0.0);
  return g;
}

// ---------------------------------------------------------------------------
// Offline datasets

struct TransitionRecord {
  Observation s{};
  int a = 0;  // -1 for goal-absorption records
  Observation s_next{};
  float r = -1.0f;
  std::uint32_t episode_id = 0;
  bool operator==(const TransitionRecord&) const = default;
};

struct DatasetMetadata {
  std::string env_id;
  int resolution = 0;  // bins for mountain car, width for gridworld
  int height = 0;
  std::string policy = "uniform_random";
  std::uint64_t seed = 0;
  int episodes = 0;
  int max_episode_len = 250;
  double goal_edge_cost = 0.25;
  bool operator==(const DatasetMetadata&) const = default;
};

struct TransitionDataset {
  std::vector<TransitionRecord> records;
  std::vector<std::size_t> episode_starts;
  DatasetMetadata metadata;

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }

  std::size_t num_goal_records() const {
    return static_cast<std::size_t>(std::count_if(records.begin(), records.end(), [](const auto& r) { return r.a < 0; }));
  }

  void rebuild_episode_starts() {
    episode_starts.clear();
    for (std::size_t i = 0; i < records.size(); ++i)
      if (i == 0 || records[i].episode_id != records[i - 1].episode_id) episode_starts.push_back(i);
  }
};

struct GenerateOptions {
  int episodes = 200;
  int max_episode_len = 250;
  std::uint64_t seed = 0;
  double goal_edge_cost = 0.25;
};

namespace detail {
inline void append_goal_record(TransitionDataset& ds, const Observation& s, std::uint32_t episode, double cost) {
  ds.records.push_back({s, -1, kGoalToken, static_cast<float>(-cost), episode});
}

inline DatasetMetadata base_metadata(const TabularEnv& env) {
  DatasetMetadata m;
  m.env_id = env.id;
  m.resolution = env.kind == EnvKind::mountain_car ? env.bins : env.width;
  m.height = env.kind == EnvKind::mountain_car ? env.bins : env.height;
  return m;
}
}  // namespace detail

/// Uniform-random rollouts from uniformly random states. Episodes stop on
/// goal-set entry (which also appends a goal-absorption record) or at the
/// length cap. Each episode has its own generator seeded by (seed, episode).
inline TransitionDataset generate_dataset(const TabularEnv& env, const GenerateOptions& opt) {
  TransitionDataset ds;
  ds.metadata = detail::base_metadata(env);
  ds.metadata.seed = opt.seed;
  ds.metadata.episodes = opt.episodes;
  ds.metadata.max_episode_len = opt.max_episode_len;
  ds.metadata.goal_edge_cost = opt.goal_edge_cost;
  for (int e = 0; e < opt.episodes; ++e) {
    std::seed_seq seq{static_cast<std::uint32_t>(opt.seed), static_cast<std::uint32_t>(opt.seed >> 32),
                      static_cast<std::uint32_t>(e)};
    std::mt19937_64 rng(seq);
    std::uniform_int_distribution<int> start_dist(0, env.num_states - 1);
    std::uniform_int_distribution<int> action_dist(0, env.num_actions - 1);
    const auto episode = static_cast<std::uint32_t>(e);
    int s = start_dist(rng);
    if (env.has_goal_token && env.in_goal(s)) {
      detail::append_goal_record(ds, env.observation(s), episode, opt.goal_edge_cost);
      continue;
    }
    for (int t = 0; t < opt.max_episode_len; ++t) {
      const int a = action_dist(rng);
      const int n = env.next(s, a);
      ds.records.push_back({env.observation(s), a, env.observation(n), -1.0f, episode});
      s = n;
      if (env.has_goal_token && env.in_goal(s)) {
        detail::append_goal_record(ds, env.observation(s), episode, opt.goal_edge_cost);
        break;
      }
    }
  }
  ds.rebuild_episode_starts();
  return ds;
}

/// One record per (state, action), plus goal-absorption records for every
/// goal-set state. Each state is its own episode.
inline TransitionDataset full_coverage_dataset(const TabularEnv& env, double goal_edge_cost = 0.25) {
  TransitionDataset ds;
  ds.metadata = detail::base_metadata(env);
  ds.metadata.policy = "full_coverage";
  ds.metadata.episodes = env.num_states;
  ds.metadata.max_episode_len = 1;
  ds.metadata.goal_edge_cost = goal_edge_cost;
  for (int s = 0; s < env.num_states; ++s) {
    const auto episode = static_cast<std::uint32_t>(s);
    for (int a = 0; a < env.num_actions; ++a)
      ds.records.push_back({env.observation(s), a, env.observation(env.next(s, a)), -1.0f, episode});
    if (env.has_goal_token && env.in_goal(s)) detail::append_goal_record(ds, env.observation(s), episode, goal_edge_cost);
  }
  ds.rebuild_episode_starts();
  return ds;
}

/// Goal attainment for relabeled goals: the token is reached on goal-set
/// entry, concrete goals by exact observation match.
inline bool reaches_goal(const Observation& s_next, const Observation& goal) {
  if (is_goal_token(goal)) {
    if (is_goal_token(s_next)) return true;
    return in_goal_set({s_next[0], s_next[1]});
  }
  return s_next == goal;
}

}  // namespace qrl
