#pragma once

// Interval Quasimetric Embedding head. A projected latent of width k*m is
// split into k components of m coordinates; component i measures the union of
// intervals [u_j, max(u_j, v_j)], and the k measures are pooled with a learned
// convex combination of max and mean.

#include <algorithm>
#include <cstdint>
#include <cmath>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "qrl/autodiff.hpp"

namespace qrl {

namespace detail {

inline constexpr int kMaxComponentSize = 256;

/// Sweeps the non-degenerate intervals of one component. `on_segment` is
/// called once per maximal merged segment with the coordinate indices whose
/// start and end realize its boundaries. Starts are ordered by (value, index).
template <class OnSegment>
double interval_union_sweep(const float* u, const float* v, int m, OnSegment&& on_segment) {
  int order[kMaxComponentSize];
  int count = 0;
  for (int j = 0; j < m; ++j) {
    if (!(v[j] > u[j])) continue;
    int pos = count++;
    while (pos > 0 && u[order[pos - 1]] > u[j]) {
      order[pos] = order[pos - 1];
      --pos;
    }
    order[pos] = j;
  }
  if (count == 0) return 0.0;

  double total = 0.0;
  int seg_start = order[0], seg_end = order[0];
  for (int t = 1; t < count; ++t) {
    const int j = order[t];
    if (u[j] > v[seg_end]) {
      total += static_cast<double>(v[seg_end]) - static_cast<double>(u[seg_start]);
      on_segment(seg_start, seg_end);
      seg_start = seg_end = j;
    } else if (v[j] > v[seg_end]) {
      seg_end = j;
    }
  }
  total += static_cast<double>(v[seg_end]) - static_cast<double>(u[seg_start]);
  on_segment(seg_start, seg_end);
  return total;
}

inline void check_component_size(std::size_t m) {
  if (m > static_cast<std::size_t>(kMaxComponentSize)) throw ShapeError("iqe: component size too large");
}

}  // namespace detail

/// Lebesgue measure of the union of [u_j, max(u_j, v_j)] over j.
inline double iqe_component_distance(std::span<const float> u, std::span<const float> v) {
  if (u.size() != v.size()) throw ShapeError("iqe_component_distance: length mismatch");
  detail::check_component_size(u.size());
  return detail::interval_union_sweep(u.data(), v.data(), static_cast<int>(u.size()), [](int, int) {});
}

/// Accumulates upstream * d(measure)/du and d(measure)/dv. Only the
/// endpoints bounding a merged segment receive gradient.
inline double iqe_component_backward(std::span<const float> u, std::span<const float> v, double upstream,
                                     std::span<float> grad_u, std::span<float> grad_v) {
  if (u.size() != v.size()) throw ShapeError("iqe_component_backward: length mismatch");
  detail::check_component_size(u.size());
  const auto g = static_cast<float>(upstream);
  return detail::interval_union_sweep(u.data(), v.data(), static_cast<int>(u.size()), [&](int s, int e) {
    grad_u[s] -= g;
    grad_v[e] += g;
  });
}

/// mu * max + (1 - mu) * mean with mu = sigmoid(mix_raw).
inline double iqe_maxmean(std::span<const double> components, double mix_raw) {
  if (components.empty()) throw ShapeError("iqe_maxmean: no components");
  double mx = 0.0, sum = 0.0;
  for (double d : components) {
    if (d < 0) throw std::invalid_argument("iqe_maxmean: negative component distance");
    mx = std::max(mx, d);
    sum += d;
  }
  const double mu = sigmoid(mix_raw);
  return mu * mx + (1.0 - mu) * sum / static_cast<double>(components.size());
}

/// Forward record of IqeHead::forward: component measures and the endpoint
/// pairs bounding each merged segment.
struct IqeTape {
  Eigen::Index rows = 0;
  std::vector<double> components;        // [rows * k]
  std::vector<std::uint16_t> segments;    // flattened (start, end) coordinate pairs
  std::vector<std::uint32_t> seg_offsets; // [rows * k + 1], in pairs
};

/// Head parameters plus batched forward/backward over projected rows.
struct IqeHead {
  int components = 8;      // k
  int component_size = 16; // m
  float mix_raw = 0.0f;

  int width() const { return components * component_size; }
  double mix() const { return sigmoid(mix_raw); }

  void check_width(Eigen::Index w) const {
    if (w != width()) throw ShapeError("iqe head: projected width mismatch");
  }

  double distance(std::span<const float> a, std::span<const float> b) const {
    check_width(static_cast<Eigen::Index>(a.size()));
    check_width(static_cast<Eigen::Index>(b.size()));
    return row_distance(a.data(), b.data());
  }

  /// Row-aligned distances d(a_r, b_r); optionally records a tape for
  /// backward_from_tape.
  std::vector<double> forward(const Matrix& a, const Matrix& b, IqeTape* tape = nullptr) const {
    check_width(a.cols());
    check_width(b.cols());
    if (a.rows() != b.rows()) throw ShapeError("iqe head: row count mismatch");
    detail::check_component_size(static_cast<std::size_t>(component_size));
    std::vector<double> out(static_cast<std::size_t>(a.rows()));
    if (!tape) {
      for (Eigen::Index r = 0; r < a.rows(); ++r) out[r] = row_distance(a.row(r).data(), b.row(r).data());
      return out;
    }
    const int m = component_size;
    tape->rows = a.rows();
    tape->components.resize(static_cast<std::size_t>(a.rows()) * components);
    tape->segments.clear();
    tape->seg_offsets.assign(1, 0);
    const double mu = mix();
    for (Eigen::Index r = 0; r < a.rows(); ++r) {
      const float* ar = a.row(r).data();
      const float* br = b.row(r).data();
      double mx = 0.0, sum = 0.0;
      for (int i = 0; i < components; ++i) {
        const double d = detail::interval_union_sweep(ar + i * m, br + i * m, m, [&](int st, int en) {
          tape->segments.push_back(static_cast<std::uint16_t>(st));
          tape->segments.push_back(static_cast<std::uint16_t>(en));
        });
        tape->components[r * components + i] = d;
        tape->seg_offsets.push_back(static_cast<std::uint32_t>(tape->segments.size() / 2));
        mx = std::max(mx, d);
        sum += d;
      }
      out[r] = mu * mx + (1.0 - mu) * sum / components;
    }
    return out;
  }

  /// Same as backward(), reusing the sweep recorded by forward().
  void backward_from_tape(const IqeTape& tape, std::span<const double> upstream, Eigen::Ref<Matrix> grad_a,
                          Eigen::Ref<Matrix> grad_b, double& grad_mix_raw) const {
    if (tape.rows != grad_a.rows() || tape.rows != grad_b.rows()) throw ShapeError("iqe head: tape mismatch");
    const double mu = mix();
    const double dmu = mu * (1.0 - mu);
    const double inv_k = 1.0 / components;
    const int m = component_size;
    for (Eigen::Index r = 0; r < tape.rows; ++r) {
      const double up = upstream[r];
      if (up == 0.0) continue;
      const double* comp = tape.components.data() + r * components;
      int argmax = 0;
      double sum = 0.0;
      for (int i = 0; i < components; ++i) {
        if (comp[i] > comp[argmax]) argmax = i;
        sum += comp[i];
      }
      grad_mix_raw += up * dmu * (comp[argmax] - sum * inv_k);
      float* ga = grad_a.row(r).data();
      float* gb = grad_b.row(r).data();
      for (int i = 0; i < components; ++i) {
        const auto w = static_cast<float>(up * ((1.0 - mu) * inv_k + (i == argmax ? mu : 0.0)));
        const std::size_t slot = static_cast<std::size_t>(r) * components + i;
        for (std::uint32_t t = tape.seg_offsets[slot]; t < tape.seg_offsets[slot + 1]; ++t) {
          ga[i * m + tape.segments[2 * t]] -= w;
          gb[i * m + tape.segments[2 * t + 1]] += w;
        }
      }
    }
  }

  /// Accumulates gradients of sum_r upstream[r] * d(a_r, b_r). Ties in the
  /// max go to the first maximal component.
  void backward(const Matrix& a, const Matrix& b, std::span<const double> upstream, Eigen::Ref<Matrix> grad_a,
                Eigen::Ref<Matrix> grad_b, double& grad_mix_raw) const {
    check_width(a.cols());
    check_width(b.cols());
    const double mu = mix();
    const double dmu = mu * (1.0 - mu);
    const double inv_k = 1.0 / components;
    std::vector<double> comp(components);
    const int m = component_size;
    for (Eigen::Index r = 0; r < a.rows(); ++r) {
      const double up = upstream[r];
      if (up == 0.0) continue;
      const float* ar = a.row(r).data();
      const float* br = b.row(r).data();
      int argmax = 0;
      double sum = 0.0;
      for (int i = 0; i < components; ++i) {
        comp[i] = detail::interval_union_sweep(ar + i * m, br + i * m, m, [](int, int) {});
        if (comp[i] > comp[argmax]) argmax = i;
        sum += comp[i];
      }
      grad_mix_raw += up * dmu * (comp[argmax] - sum * inv_k);
      float* ga = grad_a.row(r).data();
      float* gb = grad_b.row(r).data();
      for (int i = 0; i < components; ++i) {
        if (comp[i] == 0.0) continue;
        const auto w = static_cast<float>(up * ((1.0 - mu) * inv_k + (i == argmax ? mu : 0.0)));
        float* gu = ga + i * m;
        float* gv = gb + i * m;
        detail::interval_union_sweep(ar + i * m, br + i * m, m, [&](int s, int e) {
          gu[s] -= w;
          gv[e] += w;
        });
      }
    }
  }

 private:
  double row_distance(const float* a, const float* b) const {
    const int m = component_size;
    double mx = 0.0, sum = 0.0;
    for (int i = 0; i < components; ++i) {
      const double d = detail::interval_union_sweep(a + i * m, b + i * m, m, [](int, int) {});
      mx = std::max(mx, d);
      sum += d;
    }
    const double mu = mix();
    return mu * mx + (1.0 - mu) * sum / components;
  }
};

/// Euclidean distance between projections; the symmetric ablation head.
struct L2Head {
  std::vector<double> forward(const Matrix& a, const Matrix& b) const {
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("l2 head: shape mismatch");
    std::vector<double> out(static_cast<std::size_t>(a.rows()));
    for (Eigen::Index r = 0; r < a.rows(); ++r) out[r] = (a.row(r) - b.row(r)).cast<double>().norm();
    return out;
  }

  // Gradient at a == b is taken as 0.
  void backward(const Matrix& a, const Matrix& b, std::span<const double> upstream, Eigen::Ref<Matrix> grad_a,
                Eigen::Ref<Matrix> grad_b) const {
    for (Eigen::Index r = 0; r < a.rows(); ++r) {
      if (upstream[r] == 0.0) continue;
      const Eigen::RowVectorXd diff = (a.row(r) - b.row(r)).cast<double>();
      const double n = diff.norm();
      if (n == 0.0) continue;
      const Eigen::RowVectorXf g = (diff * (upstream[r] / n)).cast<float>();
      grad_a.row(r) += g;
      grad_b.row(r) -= g;
    }
  }
};

}  // namespace qrl
