#pragma once

// Acceptance suite A1-A10. Each criterion returns pass/fail, its runtime and
// the measured quantities; run_acceptance prints one line per criterion.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numbers>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "qrl/critic.hpp"
#include "qrl/evaluation.hpp"
#include "qrl/oracle.hpp"
#include "qrl/pipeline.hpp"
#include "qrl/td_baselines.hpp"
#include "qrl/trainer.hpp"

namespace qrl {

struct AcceptanceOptions {
  std::string only;             // comma-separated ids ("A1,A3"); empty runs all
  double triangle_slack = 1e-5; // A1, A8 and A10 triangle checks
  std::uint64_t seed = 0;
};

struct CriterionResult {
  std::string id;
  std::string title;
  bool passed = false;
  double seconds = 0.0;
  double budget_seconds = 0.0;
  nlohmann::json details = nlohmann::json::object();
};

namespace acceptance_detail {

using Clock = std::chrono::steady_clock;
using MatD = Eigen::MatrixXd;
using nlohmann::json;

inline double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<float> n(0.0f, static_cast<float>(sd));
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

// --- axioms ------------------------------------------------------------------

struct AxiomCounts {
  int nonzero_self = 0, negative = 0, triangle = 0;
  double worst_triangle_excess = -kInf;
  bool ok() const { return nonzero_self == 0 && negative == 0 && triangle == 0; }
  json to_json() const {
    return {{"nonzero_self", nonzero_self},
            {"negative", negative},
            {"triangle_violations", triangle},
            {"worst_triangle_excess", worst_triangle_excess}};
  }
};

/// d(x,x) = 0, d >= 0 and d(x,z) <= d(x,y) + d(y,z) + slack on aligned rows.
inline AxiomCounts latent_axioms(const QuasimetricCritic& critic, const Matrix& x, const Matrix& y, const Matrix& z,
                                 double slack) {
  AxiomCounts c;
  const Matrix px = critic.project(x), py = critic.project(y), pz = critic.project(z);
  const auto dxx = critic.head_forward(px, px);
  const auto dxy = critic.head_forward(px, py);
  const auto dyz = critic.head_forward(py, pz);
  const auto dxz = critic.head_forward(px, pz);
  for (std::size_t r = 0; r < dxy.size(); ++r) {
    c.nonzero_self += dxx[r] != 0.0;
    c.negative += (dxy[r] < 0.0) + (dyz[r] < 0.0) + (dxz[r] < 0.0);
    const double excess = dxz[r] - (dxy[r] + dyz[r]);
    c.worst_triangle_excess = std::max(c.worst_triangle_excess, excess);
    c.triangle += excess > slack;
  }
  return c;
}

// --- double-precision reference forward passes for finite differences -------

inline std::vector<double> flatten(const std::vector<std::span<const float>>& views) {
  std::vector<double> out;
  for (auto v : views) out.insert(out.end(), v.begin(), v.end());
  return out;
}

/// Reads an MLP laid out as MlpParams::views() (row-major W, then b, per
/// layer) from `theta` starting at `offset`; advances offset.
inline MatD reference_mlp(const MlpSpec& spec, const std::vector<double>& theta, std::size_t& offset, MatD x) {
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const int in = spec.layer_widths[l], out = spec.layer_widths[l + 1];
    MatD w(out, in);
    for (int i = 0; i < out; ++i)
      for (int j = 0; j < in; ++j) w(i, j) = theta[offset++];
    Eigen::VectorXd b(out);
    for (int i = 0; i < out; ++i) b(i) = theta[offset++];
    MatD y = x * w.transpose();
    y.rowwise() += b.transpose();
    if (l + 1 < spec.num_layers()) y = y.cwiseMax(0.0);
    x = std::move(y);
  }
  return x;
}

/// Lebesgue measure of the union of intervals [u_j, v_j] (empty when v <= u),
/// by sorting and merging.
inline double reference_interval_union(const double* u, const double* v, int m) {
  std::vector<std::pair<double, double>> iv;
  for (int j = 0; j < m; ++j)
    if (v[j] > u[j]) iv.emplace_back(u[j], v[j]);
  std::sort(iv.begin(), iv.end());
  double total = 0.0, lo = 0.0, hi = 0.0;
  bool open = false;
  for (const auto& [a, b] : iv) {
    if (open && a <= hi) {
      hi = std::max(hi, b);
      continue;
    }
    if (open) total += hi - lo;
    lo = a;
    hi = b;
    open = true;
  }
  if (open) total += hi - lo;
  return total;
}

inline double reference_iqe(const MatD& a, const MatD& b, int r, int k, int m, double mix_raw) {
  double mx = 0.0, sum = 0.0;
  std::vector<double> u(m), v(m);
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < m; ++j) {
      u[j] = a(r, i * m + j);
      v[j] = b(r, i * m + j);
    }
    const double d = reference_interval_union(u.data(), v.data(), m);
    mx = std::max(mx, d);
    sum += d;
  }
  const double mu = 1.0 / (1.0 + std::exp(-mix_raw));
  return mu * mx + (1.0 - mu) * sum / k;
}

/// sum_r up[r] * d(x_r, f(g_r)), x_r = f(s_r) or T(f(s_r), a_r), in double
/// precision with parameters read from theta (critic views() order).
inline double reference_critic_objective(const QuasimetricCritic& critic, const std::vector<double>& theta,
                                         const Matrix& s, const Matrix& g, const std::vector<int>* actions,
                                         std::span<const double> up) {
  const auto& spec = critic.spec;
  const Eigen::Index n = s.rows();
  auto features = [&](const Matrix& obs) {
    MatD x = obs.cast<double>();
    if (!spec.obs_shift.empty())
      for (int j = 0; j < spec.obs_dim; ++j)
        x.col(j) = (x.col(j).array() - spec.obs_shift[j]) * static_cast<double>(spec.obs_scale[j]);
    if (spec.fourier_features == 0) return x;
    const MatD phase = x * critic.fourier_basis.cast<double>() * (2.0 * std::numbers::pi);
    MatD out(n, spec.encoder_input_dim());
    out << x, phase.array().sin().matrix(), phase.array().cos().matrix();
    return out;
  };
  std::size_t off = 0;
  const std::size_t enc_begin = 0;
  MatD zs = reference_mlp(spec.encoder_spec(), theta, off, features(s));
  off = enc_begin;
  MatD zg = reference_mlp(spec.encoder_spec(), theta, off, features(g));
  const std::size_t proj_begin = off;
  std::size_t tr_off = proj_begin + critic.projector.num_scalars();
  if (actions) {
    MatD in = MatD::Zero(n, spec.latent_dim + spec.num_actions);
    in.leftCols(spec.latent_dim) = zs;
    for (Eigen::Index r = 0; r < n; ++r) in(r, spec.latent_dim + (*actions)[r]) = 1.0;
    zs += reference_mlp(spec.transition_spec(), theta, tr_off, in);
  }
  off = proj_begin;
  const MatD pa = reference_mlp(spec.projector_spec(), theta, off, zs);
  off = proj_begin;
  const MatD pb = reference_mlp(spec.projector_spec(), theta, off, zg);
  const double mix_raw = theta.back();
  double total = 0.0;
  for (Eigen::Index r = 0; r < n; ++r)
    total += up[r] * reference_iqe(pa, pb, static_cast<int>(r), spec.components, spec.component_size, mix_raw);
  return total;
}

struct FdComparison {
  double relative_error = 0.0;
  int coordinates = 0;
  int skipped_near_kinks = 0;
};

/// Central differences of `f` at theta over up to `max_coords` coordinates,
/// compared to `analytic` as ||a - fd|| / ||fd||. Coordinates whose
/// difference quotient changes between steps h and h/2 sit near a kink of the
/// piecewise-linear parts and are skipped.
inline FdComparison finite_difference_check(const std::function<double(const std::vector<double>&)>& f,
                                            std::vector<double> theta, const std::vector<double>& analytic,
                                            int max_coords, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(theta.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  if (static_cast<int>(idx.size()) > max_coords) idx.resize(max_coords);
  auto quotient = [&](std::size_t i, double h) {
    const double keep = theta[i];
    theta[i] = keep + h;
    const double fp = f(theta);
    theta[i] = keep - h;
    const double fm = f(theta);
    theta[i] = keep;
    return (fp - fm) / (2.0 * h);
  };
  FdComparison out;
  double diff2 = 0.0, ref2 = 0.0;
  for (std::size_t i : idx) {
    const double h = 1e-6 * std::max(1.0, std::abs(theta[i]));
    const double q1 = quotient(i, h), q2 = quotient(i, 0.5 * h);
    if (std::abs(q1 - q2) > 1e-6 * (std::abs(q1) + 1e-3)) {
      ++out.skipped_near_kinks;
      continue;
    }
    ++out.coordinates;
    diff2 += (analytic[i] - q1) * (analytic[i] - q1);
    ref2 += q1 * q1;
  }
  out.relative_error = std::sqrt(diff2) / std::max(std::sqrt(ref2), 1e-8);
  return out;
}

inline void randomize_biases(MlpParams& p, std::mt19937_64& rng, double sd) {
  std::normal_distribution<float> n(0.0f, static_cast<float>(sd));
  for (auto& l : p.layers)
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias(i) = n(rng);
}

// --- mountain car benchmark runs shared by A7 and A9 ---------------------------

struct MountainCarRuns {
  int bins = 64;
  std::size_t records = 0;
  std::int64_t budget = 0;
  std::int64_t quarter = 0;
  double qrl_top_score = 0.0;
  double qrl_spearman = 0.0;
  double qrl_spearman_quarter = 0.0;
  double symmetric_spearman = 0.0;
  double symmetric_top_score = 0.0;
  double qlearn_spearman_quarter = 0.0;
  double seconds = 0.0;
  QuasimetricCritic qrl_critic;
};

/// Spearman of model distances against the oracle over states that can
/// reach the goal.
inline double spearman_vs_oracle(std::span<const double> model, std::span<const double> truth) {
  std::vector<char> mask(truth.size());
  for (std::size_t i = 0; i < truth.size(); ++i) mask[i] = std::isfinite(truth[i]);
  return value_error_report(model, truth, mask).spearman;
}

inline MountainCarRuns run_mountain_car(std::uint64_t seed, std::ostream& log) {
  const auto t0 = Clock::now();
  MountainCarRuns out;
  const TabularEnv env = make_mountain_car(out.bins);
  GenerateOptions gen;
  gen.episodes = 250;
  gen.seed = seed + 1;
  const TransitionDataset ds = generate_dataset(env, gen);
  out.records = ds.size();
  const EvalGoal top = top_of_hill_goal(env);
  const auto truth = oracle_distances(env, top);

  QrlConfig cfg = desk_qrl_config(env);
  cfg.seed = seed;
  out.budget = cfg.total_steps;
  out.quarter = cfg.total_steps / 4;
  auto progress = [&](const char* tag, std::int64_t step) {
    if ((step + 1) % 5000 == 0) log << "    [" << tag << "] step " << step + 1 << " (" << seconds_since(t0) << " s)\n"
                                    << std::flush;
  };

  auto result = train(ds, cfg, [&](const QrlTrainer& t, const TraceRow& row) {
    progress("qrl", row.step);
    if (row.step + 1 == out.quarter)
      out.qrl_spearman_quarter = spearman_vs_oracle(CriticPolicy(t.critic(), env).distances_to(kGoalToken), truth);
  });
  const CriticPolicy qrl_policy(result.critic, env);
  out.qrl_spearman = spearman_vs_oracle(qrl_policy.distances_to(kGoalToken), truth);
  PolicyTableFn qrl_table = [&](const EvalGoal& g) { return qrl_policy.action_table(g.observation); };
  out.qrl_top_score = evaluate_policy(qrl_table, env, {top}, 200).group_score("top");
  out.qrl_critic = result.critic;

  QrlConfig sym = cfg;
  sym.symmetric_ablation = true;
  auto sym_result = train(ds, sym, [&](const QrlTrainer&, const TraceRow& row) { progress("symmetric", row.step); });
  const CriticPolicy sym_policy(sym_result.critic, env);
  out.symmetric_spearman = spearman_vs_oracle(sym_policy.distances_to(kGoalToken), truth);
  PolicyTableFn sym_table = [&](const EvalGoal& g) { return sym_policy.action_table(g.observation); };
  out.symmetric_top_score = evaluate_policy(sym_table, env, {top}, 200).group_score("top");

  QLearnConfig qcfg = desk_qlearn_config(env, QHead::monolithic_mlp);
  qcfg.seed = seed;
  qcfg.total_steps = cfg.total_steps;
  QLearner learner(ds, qcfg);
  for (std::int64_t t = 0; t < out.quarter; ++t) {
    learner.step();
    progress("qlearn", t);
  }
  out.qlearn_spearman_quarter =
      spearman_vs_oracle(QPolicy(learner.model(), env).negated_values(kGoalToken), truth);
  out.seconds = seconds_since(t0);
  return out;
}

// --- gridworld recovery run shared by A6 and A8 ----------------------------------

struct GridRun {
  QuasimetricCritic critic;
  TransitionDataset dataset;
  QrlConfig config;
  double train_seconds = 0.0;
};

inline GridRun run_gridworld(std::uint64_t seed, std::int64_t steps) {
  const auto t0 = Clock::now();
  const TabularEnv env = make_gridworld(GridWorldSpec{});
  GridRun run;
  run.dataset = full_coverage_dataset(env);
  run.config = desk_qrl_config(env);
  run.config.total_steps = steps;
  run.config.seed = seed;
  run.critic = train(run.dataset, run.config).critic;
  run.train_seconds = seconds_since(t0);
  return run;
}

}  // namespace acceptance_detail

// ---------------------------------------------------------------------------

class AcceptanceSuite {
 public:
  using json = nlohmann::json;

  AcceptanceSuite(AcceptanceOptions opt, std::ostream& log) : opt_(std::move(opt)), log_(log) {}

  CriterionResult a1_axioms() {
    using namespace acceptance_detail;
    CriterionResult r{"A1", "quasimetric axioms on 10k pairs and triples", false, 0, 10};
    std::mt19937_64 rng(opt_.seed + 101);
    AxiomCounts total;
    int n_done = 0;
    for (int trial = 0; trial < 10; ++trial) {
      CriticSpec spec = desk_critic(3);
      spec.components = 4 + trial % 5;
      spec.component_size = 4 + 4 * (trial % 4);
      auto critic = QuasimetricCritic::create(spec, opt_.seed + trial);
      critic.head.mix_raw = std::normal_distribution<float>(0.0f, 2.0f)(rng);
      const int n = 1000;
      const Matrix x = random_matrix(n, spec.latent_dim, rng, 1.0 + trial);
      const Matrix y = random_matrix(n, spec.latent_dim, rng, 1.0 + trial);
      const Matrix z = random_matrix(n, spec.latent_dim, rng, 1.0 + trial);
      const auto c = latent_axioms(critic, x, y, z, opt_.triangle_slack);
      total.nonzero_self += c.nonzero_self;
      total.negative += c.negative;
      total.triangle += c.triangle;
      total.worst_triangle_excess = std::max(total.worst_triangle_excess, c.worst_triangle_excess);
      n_done += n;
    }
    r.passed = total.ok();
    r.details = total.to_json();
    r.details["pairs_and_triples"] = n_done;
    r.details["triangle_slack"] = opt_.triangle_slack;
    return r;
  }

  CriterionResult a2_gradients() {
    using namespace acceptance_detail;
    CriterionResult r{"A2", "analytic vs finite-difference gradients, 200 configurations", false, 0, 60};
    std::mt19937_64 rng(opt_.seed + 202);
    auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
    double worst_mlp = 0.0, worst_iqe = 0.0;
    int coords = 0, skipped = 0;
    for (int cfg = 0; cfg < 200; ++cfg) {
      const int kind = cfg % 3;  // 0: MLP, 1: encoder-projector-IQE, 2: with transition model
      const int n = pick(1, 4);
      if (kind == 0) {
        std::vector<int> widths{pick(1, 6)};
        for (int l = pick(1, 3); l > 0; --l) widths.push_back(pick(2, 8));
        widths.push_back(pick(1, 5));
        MlpParams p = mlp_init(MlpSpec(widths), opt_.seed + cfg);
        randomize_biases(p, rng, 0.3);
        const Matrix x = random_matrix(n, widths.front(), rng);
        const Matrix up = random_matrix(n, widths.back(), rng);
        auto fwd = mlp_forward(p, x);
        const auto back = mlp_backward(fwd.tape, up);
        // Parameters followed by inputs.
        std::vector<double> theta = flatten(std::as_const(p).views());
        std::vector<double> analytic = flatten(std::as_const(back.param_grads).views());
        const std::size_t nparam = theta.size();
        for (Eigen::Index i = 0; i < x.size(); ++i) {
          theta.push_back(x.data()[i]);
          analytic.push_back(back.input_grad.data()[i]);
        }
        const MatD upd = up.cast<double>();
        auto f = [&](const std::vector<double>& t) {
          MatD in(n, widths.front());
          for (Eigen::Index i = 0; i < in.rows(); ++i)
            for (Eigen::Index j = 0; j < in.cols(); ++j) in(i, j) = t[nparam + i * in.cols() + j];
          std::size_t off = 0;
          return (reference_mlp(p.spec, t, off, in).array() * upd.array()).sum();
        };
        const auto cmp = finite_difference_check(f, theta, analytic, 400, rng);
        worst_mlp = std::max(worst_mlp, cmp.relative_error);
        coords += cmp.coordinates;
        skipped += cmp.skipped_near_kinks;
      } else {
        CriticSpec spec;
        spec.obs_dim = 3;
        spec.num_actions = pick(2, 4);
        spec.encoder_hidden = {pick(2, 6)};
        spec.latent_dim = pick(2, 5);
        spec.projector_hidden = {pick(2, 6)};
        spec.components = pick(1, 3);
        spec.component_size = pick(2, 5);
        spec.transition_hidden = {pick(2, 5)};
        spec.fourier_features = cfg % 2 ? 2 : 0;
        if (cfg % 4 == 1) spec.normalize_for_mountain_car();
        auto critic = QuasimetricCritic::create(spec, opt_.seed + cfg);
        randomize_biases(critic.encoder, rng, 0.3);
        randomize_biases(critic.projector, rng, 0.3);
        randomize_biases(critic.transition, rng, 0.3);
        critic.transition.layers.back().weight = random_matrix(spec.latent_dim, spec.transition_hidden.back(), rng, 0.5);
        critic.head.mix_raw = std::normal_distribution<float>(0.0f, 1.0f)(rng);
        const Matrix s = random_matrix(n, 3, rng), g = random_matrix(n, 3, rng);
        std::vector<int> actions(n);
        for (auto& a : actions) a = pick(0, spec.num_actions - 1);
        std::vector<double> up(n);
        for (auto& u : up) u = std::normal_distribution<double>(0.0, 1.0)(rng);
        std::optional<std::span<const int>> act;
        if (kind == 2) act = std::span<const int>(actions);
        const auto back = critic_distance_backward(critic, s, g, act, up);
        const std::vector<double> theta = flatten(std::as_const(critic).views());
        const std::vector<double> analytic = flatten(back.grads.views());
        auto f = [&](const std::vector<double>& t) {
          return reference_critic_objective(critic, t, s, g, kind == 2 ? &actions : nullptr, up);
        };
        const auto cmp = finite_difference_check(f, theta, analytic, 400, rng);
        worst_iqe = std::max(worst_iqe, cmp.relative_error);
        coords += cmp.coordinates;
        skipped += cmp.skipped_near_kinks;
      }
    }
    r.passed = worst_mlp < 1e-4 && worst_iqe < 1e-3;
    r.details = {{"worst_relative_error_mlp", worst_mlp},
                 {"worst_relative_error_through_iqe", worst_iqe},
                 {"coordinates_checked", coords},
                 {"coordinates_skipped_near_kinks", skipped}};
    return r;
  }

  CriterionResult a3_oracle_equivalence() {
    using namespace acceptance_detail;
    CriterionResult r{"A3", "Dijkstra equals Floyd-Warshall on 100 random graphs", false, 0, 30};
    std::mt19937_64 rng(opt_.seed + 303);
    int mismatches = 0, violations = 0;
    for (int t = 0; t < 100; ++t) {
      DiscreteMdpGraph g;
      g.num_nodes = std::uniform_int_distribution<int>(1, 50)(rng);
      const int edges = std::uniform_int_distribution<int>(0, 4 * g.num_nodes)(rng);
      std::uniform_int_distribution<int> node(0, g.num_nodes - 1), quarter(0, 40);
      for (int e = 0; e < edges; ++e) g.add_edge(node(rng), node(rng), 0.25 * quarter(rng));  // exact sums
      const auto dj = all_pairs_shortest_paths(g);
      const auto fw = floyd_warshall(g);
      mismatches += !(dj == fw);
      violations += static_cast<int>(check_quasimetric(dj, 0.0).size() + check_quasimetric(fw, 0.0).size());
    }
    r.passed = mismatches == 0 && violations == 0;
    r.details = {{"graphs", 100}, {"mismatching_graphs", mismatches}, {"quasimetric_violations", violations}};
    return r;
  }

  CriterionResult a4_round_trip() {
    using namespace acceptance_detail;
    CriterionResult r{"A4", "quasimetric to MDP round trip; on-policy 3-cycle rejected", false, 0, 10};
    std::mt19937_64 rng(opt_.seed + 404);
    int mismatches = 0;
    for (int t = 0; t < 100; ++t) {
      const int n = std::uniform_int_distribution<int>(1, 12)(rng);
      auto c = DistanceMatrix::square(n);
      std::bernoulli_distribution missing(0.3);
      std::uniform_int_distribution<int> quarter(0, 40);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) c(i, j) = i == j ? 0.0 : (missing(rng) ? kInf : 0.25 * quarter(rng));
      const auto d = minplus_closure(c);
      std::vector<int> all(n);
      std::iota(all.begin(), all.end(), 0);
      mismatches += !(shortest_paths(mdp_from_quasimetric(d), all) == d);
    }
    const auto fixture = three_cycle_on_policy_fixture();
    const bool rejected = !check_quasimetric(fixture, 0.0).empty();
    r.passed = mismatches == 0 && rejected;
    r.details = {{"quasimetrics", 100}, {"mismatches", mismatches}, {"three_cycle_rejected", rejected}};
    return r;
  }

  CriterionResult a5_maximality() {
    using namespace acceptance_detail;
    CriterionResult r{"A5", "feasible quasimetrics are dominated by D*", false, 0, 30};
    std::mt19937_64 rng(opt_.seed + 505);
    DiscreteMdpGraph g;
    g.num_nodes = 20;
    std::uniform_int_distribution<int> node(0, 19);
    std::uniform_int_distribution<int> quarters(1, 12);  // dyadic costs keep path sums exact
    for (int i = 0; i < 20; ++i) g.add_edge(i, (i + 1) % 20, 0.25 * quarters(rng));  // strongly connected ring
    for (int e = 0; e < 40; ++e) g.add_edge(node(rng), node(rng), 0.25 * quarters(rng));
    const auto dstar = all_pairs_shortest_paths(g);
    int dominated_failures = 0;
    for (int t = 0; t < 1000; ++t) {
      const auto d = feasible_quasimetric_sample(dstar, g, opt_.seed * 1000 + t);
      for (int i = 0; i < 20; ++i)
        for (int j = 0; j < 20; ++j)
          if (d(i, j) > dstar(i, j)) {
            ++dominated_failures;
            i = 20;
            break;
          }
    }
    FeasibleSampleOptions ones;
    ones.scaling = EdgeScaling::ones;
    const bool equal = feasible_quasimetric_sample(dstar, g, 0, ones) == dstar;
    r.passed = dominated_failures == 0 && equal;
    r.details = {{"samples", 1000}, {"samples_exceeding_dstar", dominated_failures}, {"unit_scaling_equals_dstar", equal}};
    return r;
  }

  CriterionResult a6_gridworld() {
    using namespace acceptance_detail;
    CriterionResult r{"A6", "QRL recovers D* on an 8x8 gridworld", false, 0, 600};
    const GridRun& run = gridworld();
    const TabularEnv env = make_gridworld(GridWorldSpec{});
    const double eps = run.config.epsilon;
    const double constraint = constraint_term(run.critic, run.dataset.records);
    const auto dstar = all_pairs_shortest_paths(mdp_graph(env));
    const Matrix obs = env.observation_matrix();
    const int n = env.num_states;
    std::vector<double> model, truth;
    int over = 0, pairs = 0;
    for (int i = 0; i < n; ++i) {
      const auto d = run.critic.state_distances(obs.row(i).replicate(n, 1), obs);
      for (int j = 0; j < n; ++j) {
        model.push_back(d[j]);
        truth.push_back(dstar(i, j));
        if (i == j) continue;
        ++pairs;
        over += d[j] > (1.0 + eps) * dstar(i, j) + 1e-3;
      }
    }
    const std::vector<char> mask(model.size(), 1);
    const auto err = value_error_report(model, truth, mask);
    const double over_fraction = static_cast<double>(over) / pairs;
    const bool c_ok = constraint <= eps * eps * 1.1;
    const bool rel_ok = err.mean_relative_error < 0.10;
    const bool over_ok = over_fraction < 0.05;
    const bool rank_ok = err.spearman > 0.95;
    r.passed = c_ok && rel_ok && over_ok && rank_ok;
    r.details = {{"steps", run.config.total_steps},
                 {"epsilon", eps},
                 {"constraint_term", constraint},
                 {"constraint_limit", eps * eps * 1.1},
                 {"mean_relative_error", err.mean_relative_error},
                 {"fraction_over_1_plus_eps", over_fraction},
                 {"spearman", err.spearman},
                 {"mae", err.mae},
                 {"train_seconds", run.train_seconds}};
    return r;
  }

  CriterionResult a7_mountain_car() {
    using namespace acceptance_detail;
    CriterionResult r{"A7", "MountainCar desk benchmark", false, 0, 2700};
    const auto& mc = mountain_car();
    const bool a = mc.qrl_top_score >= 70.0;
    const bool b = mc.qrl_spearman > 0.9;
    const bool c = mc.qrl_spearman_quarter > mc.qlearn_spearman_quarter;
    r.passed = a && b && c;
    r.details = {{"bins", mc.bins},
                 {"records", mc.records},
                 {"steps", mc.budget},
                 {"a_top_score", mc.qrl_top_score},
                 {"a_passed", a},
                 {"b_spearman_top", mc.qrl_spearman},
                 {"b_passed", b},
                 {"c_qrl_spearman_at_quarter", mc.qrl_spearman_quarter},
                 {"c_qlearn_spearman_at_quarter", mc.qlearn_spearman_quarter},
                 {"c_passed", c},
                 {"runs_seconds", mc.seconds}};
    return r;
  }

  CriterionResult a8_q_error_bound() {
    using namespace acceptance_detail;
    CriterionResult r{"A8", "Q-error bound on 10k (transition, goal) pairs", false, 0, 10};
    const GridRun& run = gridworld();
    const auto& critic = run.critic;
    std::mt19937_64 rng(opt_.seed + 808);
    std::vector<TransitionRecord> real;
    for (const auto& rec : run.dataset.records)
      if (rec.a >= 0) real.push_back(rec);
    std::uniform_int_distribution<std::size_t> pick(0, real.size() - 1), any(0, run.dataset.size() - 1);
    const int n = 10000;
    Matrix s(n, 3), sn(n, 3), g(n, 3);
    std::vector<int> actions(n);
    for (int i = 0; i < n; ++i) {
      const auto& rec = real[pick(rng)];
      const auto& goal = run.dataset.records[any(rng)].s_next;
      for (int j = 0; j < 3; ++j) {
        s(i, j) = rec.s[j];
        sn(i, j) = rec.s_next[j];
        g(i, j) = goal[j];
      }
      actions[i] = rec.a;
    }
    const Matrix zhat = critic.transition_predict(critic.encode(s), actions);
    const Matrix znext = critic.encode(sn), zg = critic.encode(g);
    const auto d_hat_g = critic.latent_distances(zhat, zg);
    const auto d_next_g = critic.latent_distances(znext, zg);
    const auto d_hat_next = critic.latent_distances(zhat, znext);
    const auto d_next_hat = critic.latent_distances(znext, zhat);
    int violations = 0;
    double worst = -kInf;
    for (int i = 0; i < n; ++i) {
      const double excess = std::abs(d_hat_g[i] - d_next_g[i]) - std::max(d_hat_next[i], d_next_hat[i]);
      worst = std::max(worst, excess);
      violations += excess > opt_.triangle_slack;
    }
    r.passed = violations == 0;
    r.details = {{"pairs", n}, {"violations", violations}, {"worst_excess", worst}, {"critic", "A6 gridworld critic"}};
    return r;
  }

  CriterionResult a9_ablation() {
    CriterionResult r{"A9", "QRL ranks values better than the symmetric ablation", false, 0, 0};
    const auto& mc = mountain_car();
    r.passed = mc.qrl_spearman > mc.symmetric_spearman;
    r.details = {{"qrl_spearman", mc.qrl_spearman},
                 {"symmetric_spearman", mc.symmetric_spearman},
                 {"qrl_top_score", mc.qrl_top_score},
                 {"symmetric_top_score", mc.symmetric_top_score}};
    return r;
  }

  CriterionResult a10_baselines() {
    using namespace acceptance_detail;
    CriterionResult r{"A10", "tabular TD fixed point; quasimetric-head Q axioms", false, 0, 300};
    GridWorldSpec spec;
    spec.width = spec.height = 5;
    const TabularEnv env = make_gridworld(spec);
    const double gamma = 0.95;
    const auto dstar = all_pairs_shortest_paths(mdp_graph(env));
    double worst = 0.0;
    for (int goal = 0; goal < env.num_states; ++goal) {
      const Matrix q = tabular_q_learning(env, goal, gamma, 200, 0.5, opt_.seed + goal);
      for (int s = 0; s < env.num_states; ++s) {
        if (s == goal) continue;
        const double v = q.row(s).maxCoeff();
        const double closed = discounted_path_value(dstar(s, goal), gamma);
        worst = std::max(worst, std::abs(v - closed) / std::abs(closed));
      }
    }

    // Quasimetric-head Q-learning on the 8x8 grid; its distances among
    // predicted and encoded latents must satisfy the A1 axioms.
    const TabularEnv grid = make_gridworld(GridWorldSpec{});
    const auto ds = full_coverage_dataset(grid);
    QLearnConfig cfg = desk_qlearn_config(grid, QHead::quasimetric);
    cfg.total_steps = 300;
    cfg.seed = opt_.seed;
    const auto model = q_learning_train(ds, cfg).model;
    std::mt19937_64 rng(opt_.seed + 1010);
    const int n = 10000;
    std::uniform_int_distribution<int> state(0, grid.num_states - 1), action(0, grid.num_actions - 1);
    auto latent_rows = [&] {
      Matrix obs(n, 3);
      std::vector<int> acts(n);
      std::bernoulli_distribution predicted(0.5);
      std::vector<char> use_pred(n);
      for (int i = 0; i < n; ++i) {
        const auto& o = grid.observation(state(rng));
        for (int j = 0; j < 3; ++j) obs(i, j) = o[j];
        acts[i] = action(rng);
        use_pred[i] = predicted(rng);
      }
      const Matrix z = model.critic.encode(obs);
      const Matrix zhat = model.critic.transition_predict(z, acts);
      Matrix out = z;
      for (int i = 0; i < n; ++i)
        if (use_pred[i]) out.row(i) = zhat.row(i);
      return out;
    };
    const Matrix x = latent_rows(), y = latent_rows(), z = latent_rows();
    const auto axioms = latent_axioms(model.critic, x, y, z, opt_.triangle_slack);
    r.passed = worst < 0.05 && axioms.ok();
    r.details = {{"td_worst_relative_error", worst}, {"gamma", gamma}, {"qmet_head_axioms", axioms.to_json()}};
    return r;
  }

  std::vector<CriterionResult> run() {
    using Fn = CriterionResult (AcceptanceSuite::*)();
    const std::vector<std::pair<std::string, Fn>> all{
        {"A1", &AcceptanceSuite::a1_axioms},          {"A2", &AcceptanceSuite::a2_gradients},
        {"A3", &AcceptanceSuite::a3_oracle_equivalence}, {"A4", &AcceptanceSuite::a4_round_trip},
        {"A5", &AcceptanceSuite::a5_maximality},      {"A6", &AcceptanceSuite::a6_gridworld},
        {"A7", &AcceptanceSuite::a7_mountain_car},    {"A8", &AcceptanceSuite::a8_q_error_bound},
        {"A9", &AcceptanceSuite::a9_ablation},        {"A10", &AcceptanceSuite::a10_baselines},
    };
    const auto wanted = selected_ids();
    for (const auto& id : wanted)
      if (std::none_of(all.begin(), all.end(), [&](const auto& p) { return p.first == id; }))
        throw std::invalid_argument("acceptance: unknown criterion " + id);
    std::vector<CriterionResult> results;
    for (const auto& [id, fn] : all) {
      if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), id) == wanted.end()) continue;
      log_ << id << " running...\n" << std::flush;
      const auto t0 = acceptance_detail::Clock::now();
      const double shared_before = shared_seconds_;
      CriterionResult res;
      try {
        res = (this->*fn)();
      } catch (const std::exception& e) {
        res.id = id;
        res.passed = false;
        res.details = {{"error", e.what()}};
      }
      // Training runs are charged to their owner (A6: gridworld, A7: mountain
      // car), whichever criterion happens to trigger them.
      res.seconds = acceptance_detail::seconds_since(t0) - (shared_seconds_ - shared_before);
      if (id == "A6" && grid_) res.seconds += grid_->train_seconds;
      if (id == "A7" && mc_) res.seconds += mc_->seconds;
      const bool in_time = res.budget_seconds <= 0 || res.seconds < res.budget_seconds;
      res.details["within_runtime_budget"] = in_time;
      res.passed = res.passed && in_time;
      log_ << (res.passed ? "PASS " : "FAIL ") << res.id << "  " << res.title << "  (" << res.seconds << " s";
      if (res.budget_seconds > 0) log_ << " / budget " << res.budget_seconds << " s";
      log_ << ")  " << res.details.dump() << "\n" << std::flush;
      results.push_back(std::move(res));
    }
    return results;
  }

 private:
  std::vector<std::string> selected_ids() const {
    std::vector<std::string> ids;
    std::stringstream ss(opt_.only);
    for (std::string id; std::getline(ss, id, ',');)
      if (!id.empty()) ids.push_back(id);
    return ids;
  }

  const acceptance_detail::GridRun& gridworld() {
    if (!grid_) {
      grid_ = acceptance_detail::run_gridworld(opt_.seed, 20000);
      shared_seconds_ += grid_->train_seconds;
    }
    return *grid_;
  }

  const acceptance_detail::MountainCarRuns& mountain_car() {
    if (!mc_) {
      mc_ = acceptance_detail::run_mountain_car(opt_.seed, log_);
      shared_seconds_ += mc_->seconds;
    }
    return *mc_;
  }

  AcceptanceOptions opt_;
  std::ostream& log_;
  std::optional<acceptance_detail::GridRun> grid_;
  std::optional<acceptance_detail::MountainCarRuns> mc_;
  double shared_seconds_ = 0.0;
};

inline std::vector<CriterionResult> run_acceptance(const AcceptanceOptions& opt, std::ostream& log) {
  return AcceptanceSuite(opt, log).run();
}

inline bool all_passed(const std::vector<CriterionResult>& results) {
  return !results.empty() &&
         std::all_of(results.begin(), results.end(), [](const CriterionResult& r) { return r.passed; });
}

inline nlohmann::json acceptance_json(const std::vector<CriterionResult>& results) {
  nlohmann::json crit = nlohmann::json::array();
  double total = 0.0;
  for (const auto& r : results) {
    crit.push_back({{"id", r.id},
                    {"title", r.title},
                    {"passed", r.passed},
                    {"runtime_seconds", r.seconds},
                    {"runtime_budget_seconds", r.budget_seconds},
                    {"details", r.details}});
    total += r.seconds;
  }
  return {{"passed", all_passed(results)}, {"total_runtime_seconds", total}, {"criteria", crit}};
}

}  // namespace qrl
