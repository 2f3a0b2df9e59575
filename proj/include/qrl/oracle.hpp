#pragma once

// Exact ground truth for deterministic MDPs: shortest-path values, a
// Floyd-Warshall reference, quasimetric checks, the MDP-from-quasimetric
// construction, and generators of constraint-feasible quasimetrics.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <queue>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "qrl/environments.hpp"
#include "qrl/graph.hpp"

namespace qrl {

namespace detail {

struct ReverseAdjacency {
  std::vector<int> offsets;
  std::vector<int> sources;
  std::vector<double> costs;

  explicit ReverseAdjacency(const DiscreteMdpGraph& g) : offsets(g.num_nodes + 1, 0) {
    for (const auto& e : g.edges) ++offsets[e.to + 1];
    std::partial_sum(offsets.begin(), offsets.end(), offsets.begin());
    sources.resize(g.edges.size());
    costs.resize(g.edges.size());
    std::vector<int> fill(offsets.begin(), offsets.end() - 1);
    for (const auto& e : g.edges) {
      const int slot = fill[e.to]++;
      sources[slot] = e.from;
      costs[slot] = e.cost;
    }
  }
};

/// Label-setting search from a set of targets on the reversed graph.
inline std::vector<double> dijkstra_to(const ReverseAdjacency& rev, int n, std::span<const int> targets) {
  std::vector<double> dist(n, kInf);
  using Item = std::pair<double, int>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
  for (int t : targets) {
    if (t < 0 || t >= n) throw std::out_of_range("shortest_paths: goal index");
    dist[t] = 0.0;
    heap.push({0.0, t});
  }
  while (!heap.empty()) {
    const auto [d, v] = heap.top();
    heap.pop();
    if (d > dist[v]) continue;
    for (int i = rev.offsets[v]; i < rev.offsets[v + 1]; ++i) {
      const int u = rev.sources[i];
      const double nd = d + rev.costs[i];
      if (nd < dist[u]) {
        dist[u] = nd;
        heap.push({nd, u});
      }
    }
  }
  return dist;
}

}  // namespace detail

/// Column j holds the least cost from every node to goals[j].
inline DistanceMatrix shortest_paths(const DiscreteMdpGraph& graph, std::span<const int> goals) {
  for (const auto& e : graph.edges)
    if (!(e.cost >= 0)) throw std::invalid_argument("shortest_paths: negative edge cost");
  detail::ReverseAdjacency rev(graph);
  DistanceMatrix out(graph.num_nodes, static_cast<int>(goals.size()));
  for (std::size_t j = 0; j < goals.size(); ++j) {
    const int g[1] = {goals[j]};
    const auto col = detail::dijkstra_to(rev, graph.num_nodes, g);
    for (int i = 0; i < graph.num_nodes; ++i) out(i, static_cast<int>(j)) = col[i];
  }
  return out;
}

inline DistanceMatrix all_pairs_shortest_paths(const DiscreteMdpGraph& graph) {
  std::vector<int> goals(graph.num_nodes);
  std::iota(goals.begin(), goals.end(), 0);
  return shortest_paths(graph, goals);
}

/// Least cost from every node to the nearest member of `targets`.
inline std::vector<double> distances_to_set(const DiscreteMdpGraph& graph, std::span<const int> targets) {
  detail::ReverseAdjacency rev(graph);
  return detail::dijkstra_to(rev, graph.num_nodes, targets);
}

/// Brute-force all-pairs reference.
inline DistanceMatrix floyd_warshall(const DiscreteMdpGraph& graph) {
  const int n = graph.num_nodes;
  auto d = DistanceMatrix::square(n);
  for (int i = 0; i < n; ++i) d(i, i) = 0.0;
  for (const auto& e : graph.edges) d(e.from, e.to) = std::min(d(e.from, e.to), e.cost);
  for (int k = 0; k < n; ++k)
    for (int i = 0; i < n; ++i) {
      const double dik = d(i, k);
      if (dik == kInf) continue;
      for (int j = 0; j < n; ++j) {
        const double via = dik + d(k, j);
        if (via < d(i, j)) d(i, j) = via;
      }
    }
  return d;
}

struct QuasimetricViolation {
  enum class Kind { nonzero_diagonal, negative, triangle } kind;
  int i = 0, j = 0, k = 0;
  double excess = 0.0;
};

/// Every entry breaking d(i,i) = 0, d >= 0 or d(i,k) <= d(i,j) + d(j,k) + slack.
inline std::vector<QuasimetricViolation> check_quasimetric(const DistanceMatrix& d, double slack = 0.0) {
  if (!d.is_square()) throw std::invalid_argument("check_quasimetric: matrix must be square");
  const int n = d.rows();
  std::vector<QuasimetricViolation> out;
  using K = QuasimetricViolation::Kind;
  for (int i = 0; i < n; ++i) {
    if (d(i, i) != 0.0) out.push_back({K::nonzero_diagonal, i, i, i, d(i, i)});
    for (int j = 0; j < n; ++j)
      if (d(i, j) < 0.0 || std::isnan(d(i, j))) out.push_back({K::negative, i, j, j, -d(i, j)});
  }
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double dij = d(i, j);
      if (dij == kInf) continue;
      for (int k = 0; k < n; ++k) {
        const double bound = dij + d(j, k) + slack;
        if (d(i, k) > bound) out.push_back({K::triangle, i, j, k, d(i, k) - (dij + d(j, k))});
      }
    }
  return out;
}

/// Complete graph with edge (s, s') of cost d(s, s'); its optimal values
/// reproduce d. Infinite entries become missing edges.
inline DiscreteMdpGraph mdp_from_quasimetric(const DistanceMatrix& d) {
  if (!check_quasimetric(d, 0.0).empty()) throw std::invalid_argument("mdp_from_quasimetric: not a quasimetric");
  DiscreteMdpGraph g;
  g.num_nodes = d.rows();
  for (int i = 0; i < d.rows(); ++i)
    for (int j = 0; j < d.cols(); ++j)
      if (d(i, j) != kInf) g.add_edge(i, j, d(i, j));
  return g;
}

/// -V^pi for a deterministic MDP with unit costs: next[s][a] is the successor
/// and policy[s][g] the action taken at s when tasked with reaching g. A walk
/// that revisits a state before reaching g never arrives (+inf).
inline DistanceMatrix on_policy_distances(const std::vector<std::vector<int>>& next,
                                          const std::vector<std::vector<int>>& policy) {
  const int n = static_cast<int>(next.size());
  if (static_cast<int>(policy.size()) != n) throw std::invalid_argument("on_policy_distances: shape mismatch");
  auto d = DistanceMatrix::square(n, kInf);
  for (int g = 0; g < n; ++g)
    for (int s0 = 0; s0 < n; ++s0) {
      int s = s0;
      for (int steps = 0; steps <= n; ++steps) {
        if (s == g) {
          d(s0, g) = steps;
          break;
        }
        s = next.at(s).at(policy.at(s).at(g));
      }
    }
  return d;
}

/// Three states, a_self loops in place and a_next advances cyclically; the
/// policy advances except from s1 toward s3, where it stays put. Its values
/// break the triangle inequality: d(s1,s3) = inf > d(s1,s2) + d(s2,s3) = 2.
inline DistanceMatrix three_cycle_on_policy_fixture() {
  constexpr int self = 0, step = 1;
  const std::vector<std::vector<int>> next{{0, 1}, {1, 2}, {2, 0}};
  std::vector<std::vector<int>> policy(3, std::vector<int>(3, step));
  policy[0][2] = self;
  return on_policy_distances(next, policy);
}

/// All-pairs shortest-path completion of a nonnegative, zero-diagonal cost
/// matrix.
inline DistanceMatrix minplus_closure(const DistanceMatrix& costs) {
  if (!costs.is_square()) throw std::invalid_argument("minplus_closure: matrix must be square");
  const int n = costs.rows();
  DistanceMatrix d = costs;
  for (int i = 0; i < n; ++i) {
    if (d(i, i) != 0.0) throw std::invalid_argument("minplus_closure: diagonal must be zero");
    for (int j = 0; j < n; ++j)
      if (!(d(i, j) >= 0)) throw std::invalid_argument("minplus_closure: costs must be nonnegative");
  }
  for (int k = 0; k < n; ++k)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) d(i, j) = std::min(d(i, j), d(i, k) + d(k, j));
  return d;
}

enum class EdgeScaling { random, ones, zeros };

struct FeasibleSampleOptions {
  EdgeScaling scaling = EdgeScaling::random;
  /// Cost of ordered pairs that are not graph edges (before closure).
  double non_edge_cost = kInf;
};

/// Random quasimetric obeying d(s, s') <= cost(s, s') on every graph edge:
/// the min-plus closure of edge costs scaled by gamma_e ~ U[0, 1]. Any such d
/// is bounded by the optimal values D* entrywise.
inline DistanceMatrix feasible_quasimetric_sample(const DistanceMatrix& optimal, const DiscreteMdpGraph& graph,
                                                  std::uint64_t seed, const FeasibleSampleOptions& opt = {}) {
  const int n = graph.num_nodes;
  if (optimal.rows() != n || optimal.cols() != n) throw std::invalid_argument("feasible sample: shape mismatch");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto c = DistanceMatrix::square(n, opt.non_edge_cost);
  for (int i = 0; i < n; ++i) c(i, i) = 0.0;
  for (const auto& e : graph.edges) {
    double gamma = 1.0;
    if (opt.scaling == EdgeScaling::random) gamma = unit(rng);
    if (opt.scaling == EdgeScaling::zeros) gamma = 0.0;
    if (e.from != e.to) c(e.from, e.to) = std::min(c(e.from, e.to), gamma * e.cost);
  }
  return minplus_closure(c);
}

/// Graph over the distinct observations of a dataset, one edge per record
/// with cost -r.
struct DatasetGraph {
  DiscreteMdpGraph graph;
  std::vector<Observation> nodes;
  std::map<Observation, int> index;
};

inline DatasetGraph dataset_graph(const TransitionDataset& ds) {
  DatasetGraph out;
  auto node = [&](const Observation& o) {
    auto [it, inserted] = out.index.try_emplace(o, static_cast<int>(out.nodes.size()));
    if (inserted) out.nodes.push_back(o);
    return it->second;
  };
  std::vector<std::pair<int, int>> ends;
  ends.reserve(ds.size());
  for (const auto& r : ds.records) ends.emplace_back(node(r.s), node(r.s_next));
  out.graph.num_nodes = static_cast<int>(out.nodes.size());
  for (std::size_t i = 0; i < ds.size(); ++i)
    out.graph.add_edge(ends[i].first, ends[i].second, std::max(0.0, -static_cast<double>(ds.records[i].r)));
  return out;
}

// ---------------------------------------------------------------------------
// Value error metrics

struct ValueErrorReport {
  std::size_t count = 0;
  double mae = 0.0;
  double mean_relative_error = 0.0;
  double spearman = 0.0;
  bool degenerate = false;  // a constant side makes the rank correlation undefined
};

/// Average ranks (1-based) with ties sharing their mean rank.
inline std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[idx[t]] = r;
    i = j + 1;
  }
  return ranks;
}

/// Spearman rank correlation; returns nullopt when either side is constant.
inline std::optional<double> spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("spearman: size mismatch");
  if (a.size() < 2) return std::nullopt;
  const auto ra = average_ranks(a), rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0 || sbb == 0) return std::nullopt;
  return sab / std::sqrt(saa * sbb);
}

/// Error of model distances against the oracle over masked entries.
/// Relative error skips pairs whose true distance is 0.
inline ValueErrorReport value_error_report(std::span<const double> model, std::span<const double> truth,
                                           std::span<const char> mask) {
  if (model.size() != truth.size() || mask.size() != truth.size())
    throw std::invalid_argument("value_error_report: shape mismatch");
  std::vector<double> m, t;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) {
      m.push_back(model[i]);
      t.push_back(truth[i]);
    }
  if (m.empty()) throw std::invalid_argument("value_error_report: empty mask");
  ValueErrorReport rep;
  rep.count = m.size();
  double abs_sum = 0, rel_sum = 0;
  std::size_t rel_count = 0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    abs_sum += std::abs(m[i] - t[i]);
    if (t[i] > 0) {
      rel_sum += std::abs(m[i] - t[i]) / t[i];
      ++rel_count;
    }
  }
  rep.mae = abs_sum / static_cast<double>(m.size());
  rep.mean_relative_error = rel_count ? rel_sum / static_cast<double>(rel_count) : 0.0;
  const auto rho = spearman(m, t);
  rep.degenerate = !rho.has_value();
  rep.spearman = rho.value_or(0.0);
  return rep;
}

}  // namespace qrl
