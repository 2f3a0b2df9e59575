#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace qrl {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

struct Edge {
  int from = 0;
  int to = 0;
  double cost = 1.0;
  bool operator==(const Edge&) const = default;
};

/// Directed graph with nonnegative edge costs over nodes [0, n).
struct DiscreteMdpGraph {
  int num_nodes = 0;
  std::vector<Edge> edges;

  void add_edge(int from, int to, double cost) {
    if (from < 0 || to < 0 || from >= num_nodes || to >= num_nodes) throw std::out_of_range("graph: node index");
    if (!(cost >= 0) || !std::isfinite(cost)) throw std::invalid_argument("graph: cost must be finite and >= 0");
    edges.push_back({from, to, cost});
  }
};

/// Row = source node, column = goal (target) node.
class DistanceMatrix {
 public:
  DistanceMatrix() = default;
  DistanceMatrix(int rows, int cols, double fill = kInf)
      : rows_(rows), cols_(cols), data_(static_cast<std::size_t>(rows) * cols, fill) {}

  static DistanceMatrix square(int n, double fill = kInf) { return DistanceMatrix(n, n, fill); }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  bool is_square() const { return rows_ == cols_; }

  double& operator()(int r, int c) { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
  double operator()(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols_ + c]; }

  const std::vector<double>& data() const { return data_; }

  bool operator==(const DistanceMatrix&) const = default;

 private:
  int rows_ = 0, cols_ = 0;
  std::vector<double> data_;
};

}  // namespace qrl
