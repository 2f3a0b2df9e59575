// qrl <command> [--config FILE] [--key value ...]
//
// Commands: gen-data, oracle, train, eval, heatmap, acceptance. Every
// command resolves its configuration (defaults < --config file < flags),
// writes the resolved echo to <run-dir>/<command>.config.json before doing
// any work, and resolves relative paths against --run-dir.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "qrl/acceptance.hpp"
#include "qrl/io.hpp"
#include "qrl/pipeline.hpp"

namespace fs = std::filesystem;
using namespace qrl;

namespace {

struct Invocation {
  fs::path run_dir;
  json config;  // flat keys; nested objects allowed (e.g. "critic")
  std::string command;

  fs::path path(const std::string& key) const {
    const fs::path p = config.at(key).get<std::string>();
    return p.is_absolute() ? p : run_dir / p;
  }
  template <class T>
  T get(const std::string& key) const {
    try {
      return config.at(key).get<T>();
    } catch (const json::exception& e) {
      throw std::invalid_argument("config key '" + key + "': " + e.what());
    }
  }

  void echo() const {
    write_file_atomic(run_dir / (command + ".config.json"), config.dump(2) + "\n");
  }
};

/// "--a.b value" pairs -> nested json patch. Values parse as JSON when they
/// can (numbers, booleans, arrays), otherwise they are strings. A flag with
/// no value is `true`.
json parse_overrides(const std::vector<std::string>& args) {
  json patch = json::object();
  for (std::size_t i = 0; i < args.size(); ++i) {
    const std::string& a = args[i];
    if (a.rfind("--", 0) != 0 || a.size() < 3) throw std::invalid_argument("unexpected argument: " + a);
    std::string key = a.substr(2);
    json value = true;
    if (const auto eq = key.find('='); eq != std::string::npos) {
      value = json(key.substr(eq + 1));
      key = key.substr(0, eq);
    } else if (i + 1 < args.size() && args[i + 1].rfind("--", 0) != 0) {
      value = json(args[++i]);
    }
    if (value.is_string()) {
      const std::string text = value.get<std::string>();
      const json parsed = json::parse(text, nullptr, false);
      if (!parsed.is_discarded()) value = parsed;
    }
    std::replace(key.begin(), key.end(), '-', '_');
    json* node = &patch;
    std::size_t start = 0;
    for (std::size_t dot; (dot = key.find('.', start)) != std::string::npos; start = dot + 1) {
      json& child = (*node)[key.substr(start, dot - start)];
      if (!child.is_object()) child = json::object();
      node = &child;
    }
    (*node)[key.substr(start)] = value;
  }
  return patch;
}

json split_keys(json& config, const std::set<std::string>& command_keys) {
  json rest = json::object();
  for (auto it = config.begin(); it != config.end(); ++it)
    if (!command_keys.contains(it.key())) rest[it.key()] = it.value();
  for (auto it = rest.begin(); it != rest.end(); ++it) config.erase(it.key());
  return rest;
}

void check_known(const json& config, const std::set<std::string>& known, const std::string& command) {
  for (auto it = config.begin(); it != config.end(); ++it)
    if (!known.contains(it.key())) throw std::invalid_argument(command + ": unknown option '" + it.key() + "'");
}

TabularEnv env_from_config(const json& c) {
  const std::string id = c.value("env", std::string("mountaincar"));
  if (id == "mountaincar") return make_mountain_car(c.value("bins", 64));
  if (id == "gridworld") return make_env("gridworld", c.value("width", 8), c.value("height", 8));
  throw std::invalid_argument("unknown env: " + id);
}

double coverage_fraction(const TabularEnv& env, const TransitionDataset& ds) {
  std::vector<char> seen(env.num_states, 0);
  for (const auto& r : ds.records)
    for (const auto* o : {&r.s, &r.s_next})
      if (auto s = env.find_state(*o)) seen[*s] = 1;
  return static_cast<double>(std::count(seen.begin(), seen.end(), 1)) / env.num_states;
}

// ---------------------------------------------------------------------------

int cmd_gen_data(Invocation& inv) {
  json& c = inv.config;
  c = json{{"env", "mountaincar"}, {"bins", 64},         {"width", 8},
           {"height", 8},          {"episodes", 250},    {"max_episode_len", 250},
           {"seed", 1},            {"goal_edge_cost", 0.25}, {"policy", "uniform_random"},
           {"out", "dataset.qrld"}, {"summary", "dataset_summary.json"}}
          .patch(json::diff(json::object(), c));
  check_known(c, {"env", "bins", "width", "height", "episodes", "max_episode_len", "seed", "goal_edge_cost", "policy",
                  "out", "summary"},
              "gen-data");
  inv.echo();
  const TabularEnv env = env_from_config(c);
  TransitionDataset ds;
  const std::string policy = inv.get<std::string>("policy");
  if (policy == "uniform_random") {
    GenerateOptions opt;
    opt.episodes = inv.get<int>("episodes");
    opt.max_episode_len = inv.get<int>("max_episode_len");
    opt.seed = inv.get<std::uint64_t>("seed");
    opt.goal_edge_cost = inv.get<double>("goal_edge_cost");
    if (opt.episodes <= 0 || opt.max_episode_len <= 0) throw std::invalid_argument("gen-data: episodes must be > 0");
    ds = generate_dataset(env, opt);
  } else if (policy == "full_coverage") {
    ds = full_coverage_dataset(env, inv.get<double>("goal_edge_cost"));
  } else {
    throw std::invalid_argument("gen-data: unknown policy " + policy);
  }
  save_dataset(inv.path("out"), ds);
  const json summary{{"records", ds.size()},
                     {"goal_records", ds.num_goal_records()},
                     {"real_records", ds.size() - ds.num_goal_records()},
                     {"episodes", ds.episode_starts.size()},
                     {"num_states", env.num_states},
                     {"coverage_fraction", coverage_fraction(env, ds)},
                     {"metadata", ds.metadata}};
  write_file_atomic(inv.path("summary"), summary.dump(2) + "\n");
  std::cout << summary.dump(2) << "\n";
  return 0;
}

int cmd_oracle(Invocation& inv) {
  json& c = inv.config;
  c = json{{"env", "mountaincar"}, {"bins", 64}, {"width", 8}, {"height", 8}, {"dataset", ""},
           {"goals", "top"}, {"neighborhood", 0}, {"out_prefix", "oracle"}}
          .patch(json::diff(json::object(), c));
  check_known(c, {"env", "bins", "width", "height", "dataset", "goals", "neighborhood", "out_prefix"}, "oracle");
  inv.echo();
  std::optional<TransitionDataset> ds;
  TabularEnv env = env_from_config(c);
  if (!inv.get<std::string>("dataset").empty()) {
    ds = load_dataset(inv.path("dataset"));
    env = make_env(ds->metadata);
  }
  int nb = inv.get<int>("neighborhood");
  if (nb <= 0) nb = env.kind == EnvKind::mountain_car ? scaled_neighborhood(env.bins) : 1;
  const auto goals = parse_goals(env, inv.get<std::string>("goals"), nb);
  const std::string prefix = inv.get<std::string>("out_prefix");
  json written = json::array();
  for (const auto& g : goals) {
    const auto full = oracle_distances(env, g);
    const fs::path p = inv.run_dir / (prefix + "_" + g.name + ".csv");
    write_file_atomic(p, state_value_grid(env, full));
    written.push_back(p.string());
    if (ds) {
      const auto restricted = dataset_oracle_distances(env, *ds, g);
      const fs::path q = inv.run_dir / (prefix + "_dataset_" + g.name + ".csv");
      write_file_atomic(q, state_value_grid(env, restricted));
      written.push_back(q.string());
    }
  }
  std::cout << json{{"written", written}}.dump(2) << "\n";
  return 0;
}

int cmd_train(Invocation& inv) {
  const std::set<std::string> command_keys{"algo", "preset", "dataset", "checkpoint", "trace", "checkpoint_every"};
  json& c = inv.config;
  json algo_patch = split_keys(c, command_keys);
  c = json{{"algo", "qrl"}, {"preset", "desk"}, {"dataset", "dataset.qrld"}, {"checkpoint", "checkpoint.qrlc"},
           {"trace", "trace.jsonl"}, {"checkpoint_every", 0}}
          .patch(json::diff(json::object(), c));
  const std::string algo = inv.get<std::string>("algo");
  const std::string preset = inv.get<std::string>("preset");
  if (preset != "desk" && preset != "paper-mountaincar") throw std::invalid_argument("train: unknown preset " + preset);
  if (!fs::exists(inv.path("dataset"))) throw std::invalid_argument("train: missing dataset " + inv.path("dataset").string());
  const TransitionDataset ds = load_dataset(inv.path("dataset"));
  const TabularEnv env = make_env(ds.metadata);
  const bool desk = preset == "desk";
  const auto every = inv.get<std::int64_t>("checkpoint_every");

  json extra{{"env", ds.metadata}, {"preset", preset}};
  if (algo == "qrl") {
    json resolved = desk ? json(desk_qrl_config(env)) : json(paper_qrl_config(env));
    resolved.merge_patch(algo_patch);
    const auto cfg = resolved.get<QrlConfig>();
    for (auto it = resolved.begin(); it != resolved.end(); ++it) c[it.key()] = it.value();
    inv.echo();
    auto result = train(ds, cfg, [&](const QrlTrainer& t, const TraceRow& row) {
      if (row.step % std::max(1, cfg.log_interval) == 0)
        std::cerr << "step " << row.step << " lambda " << row.lambda << " pull " << row.pull << " constraint "
                  << row.constraint << " transition " << row.transition << "\n";
      if (every > 0 && (row.step + 1) % every == 0) {
        auto ck = Checkpoint::from_qrl(t.critic());
        ck.extra = extra;
        ck.extra["step"] = row.step + 1;
        save_checkpoint(inv.run_dir / ("checkpoint_step" + std::to_string(row.step + 1) + ".qrlc"), ck);
      }
    });
    auto ck = Checkpoint::from_qrl(result.critic);
    ck.extra = extra;
    ck.extra["step"] = cfg.total_steps;
    ck.extra["lambda"] = result.dual.lambda();
    save_checkpoint(inv.path("checkpoint"), ck);
    write_file_atomic(inv.path("trace"), trace_jsonl(result.trace));
  } else if (algo == "qlearn" || algo == "qlearn-qmet") {
    const QHead head = algo == "qlearn" ? QHead::monolithic_mlp : QHead::quasimetric;
    json resolved = desk ? json(desk_qlearn_config(env, head)) : json(paper_qlearn_config(env, head));
    resolved.merge_patch(algo_patch);
    const auto cfg = resolved.get<QLearnConfig>();
    for (auto it = resolved.begin(); it != resolved.end(); ++it) c[it.key()] = it.value();
    inv.echo();
    auto result = q_learning_train(ds, cfg, [&](const QLearner& l, const QTraceRow& row) {
      if (row.step % std::max(1, cfg.log_interval) == 0)
        std::cerr << "step " << row.step << " td " << row.td_loss << " mean_q " << row.mean_q << "\n";
      if (every > 0 && (row.step + 1) % every == 0) {
        auto ck = Checkpoint::from_qmodel(l.model());
        ck.extra = extra;
        ck.extra["step"] = row.step + 1;
        save_checkpoint(inv.run_dir / ("checkpoint_step" + std::to_string(row.step + 1) + ".qrlc"), ck);
      }
    });
    auto ck = Checkpoint::from_qmodel(result.model);
    ck.extra = extra;
    ck.extra["step"] = cfg.total_steps;
    save_checkpoint(inv.path("checkpoint"), ck);
    write_file_atomic(inv.path("trace"), trace_jsonl(result.trace));
  } else {
    throw std::invalid_argument("train: unknown algo " + algo);
  }
  std::cout << json{{"checkpoint", inv.path("checkpoint").string()}, {"trace", inv.path("trace").string()}}.dump(2)
            << "\n";
  return 0;
}

/// Distance-like values d(s, g) from a checkpoint: the critic distance for
/// QRL, -max_a Q(s, a; g) for Q-learning.
class ValueModel {
 public:
  explicit ValueModel(const Checkpoint& ck, const TabularEnv& env) : ck_(ck), env_(env) {
    if (ck_.algo == "qrl") {
      if (ck_.critic.spec.num_actions != env.num_actions) throw std::invalid_argument("checkpoint/env action mismatch");
      critic_policy_.emplace(ck_.critic, env_);
    } else {
      qmodel_ = ck_.qmodel();
      if (qmodel_.num_actions != env.num_actions) throw std::invalid_argument("checkpoint/env action mismatch");
      q_policy_.emplace(qmodel_, env_);
    }
  }
  std::vector<double> values(const Observation& g) const {
    return critic_policy_ ? critic_policy_->distances_to(g) : q_policy_->negated_values(g);
  }
  std::vector<int> actions(const Observation& g) const {
    return critic_policy_ ? critic_policy_->action_table(g) : q_policy_->action_table(g);
  }

 private:
  const Checkpoint& ck_;
  const TabularEnv& env_;
  QModel qmodel_;
  std::optional<CriticPolicy> critic_policy_;
  std::optional<QPolicy> q_policy_;
};

TabularEnv env_for_checkpoint(const Checkpoint& ck, const json& c) {
  if (c.contains("env")) return env_from_config(c);
  if (!ck.extra.contains("env")) throw std::invalid_argument("checkpoint has no env metadata; pass --env");
  return make_env(ck.extra.at("env").get<DatasetMetadata>());
}

int cmd_eval(Invocation& inv) {
  json& c = inv.config;
  c = json{{"checkpoint", "checkpoint.qrlc"}, {"goals", "top,9grid"}, {"budget", 200}, {"oracle_policy", false},
           {"neighborhood", 0}, {"report", "report.json"}, {"heatmap_prefix", "value"}}
          .patch(json::diff(json::object(), c));
  check_known(c, {"checkpoint", "goals", "budget", "oracle_policy", "neighborhood", "report", "heatmap_prefix", "env",
                  "bins", "width", "height"},
              "eval");
  inv.echo();
  const bool oracle = inv.get<bool>("oracle_policy");
  const int budget = inv.get<int>("budget");
  if (budget <= 0) throw std::invalid_argument("eval: budget must be > 0");

  std::optional<Checkpoint> ck;
  TabularEnv env;
  if (oracle && !fs::exists(inv.path("checkpoint"))) {
    env = env_from_config(c);
  } else {
    if (!fs::exists(inv.path("checkpoint")))
      throw std::invalid_argument("eval: missing checkpoint " + inv.path("checkpoint").string());
    ck = load_checkpoint(inv.path("checkpoint"));
    env = env_for_checkpoint(*ck, c);
  }
  int nb = inv.get<int>("neighborhood");
  if (nb <= 0) nb = env.kind == EnvKind::mountain_car ? scaled_neighborhood(env.bins) : 1;
  const auto goals = parse_goals(env, inv.get<std::string>("goals"), nb);

  std::optional<ValueModel> model;
  if (ck) model.emplace(*ck, env);
  PolicyTableFn policy = [&](const EvalGoal& g) {
    return oracle ? oracle_action_table(env, g.targets) : model->actions(g.observation);
  };
  const EvalReport rep = evaluate_policy(policy, env, goals, budget);
  json out = report_json(rep);
  out["policy"] = oracle ? "oracle" : ck->algo;
  if (model) {
    const std::string prefix = inv.get<std::string>("heatmap_prefix");
    for (std::size_t i = 0; i < goals.size(); ++i) {
      const auto values = model->values(goals[i].observation);
      const auto truth = oracle_distances(env, goals[i]);
      std::vector<char> mask(truth.size());
      for (std::size_t s = 0; s < truth.size(); ++s) mask[s] = std::isfinite(truth[s]);
      const auto err = value_error_report(values, truth, mask);
      out["goals"][i]["value_spearman"] = err.spearman;
      out["goals"][i]["value_mean_relative_error"] = err.mean_relative_error;
      const fs::path p = inv.run_dir / (prefix + "_" + goals[i].name + ".csv");
      write_file_atomic(p, state_value_grid(env, values));
      out["goals"][i]["heatmap"] = p.string();
    }
  }
  write_file_atomic(inv.path("report"), out.dump(2) + "\n");
  std::cout << json{{"group_scores", out["group_scores"]}, {"report", inv.path("report").string()}}.dump(2) << "\n";
  return 0;
}

int cmd_heatmap(Invocation& inv) {
  json& c = inv.config;
  c = json{{"checkpoint", "checkpoint.qrlc"}, {"goal", "top"}, {"neighborhood", 0}, {"out_prefix", "heatmap"}}
          .patch(json::diff(json::object(), c));
  check_known(c, {"checkpoint", "goal", "neighborhood", "out_prefix", "env", "bins", "width", "height"}, "heatmap");
  inv.echo();
  if (!fs::exists(inv.path("checkpoint")))
    throw std::invalid_argument("heatmap: missing checkpoint " + inv.path("checkpoint").string());
  const Checkpoint ck = load_checkpoint(inv.path("checkpoint"));
  const TabularEnv env = env_for_checkpoint(ck, c);
  int nb = inv.get<int>("neighborhood");
  if (nb <= 0) nb = env.kind == EnvKind::mountain_car ? scaled_neighborhood(env.bins) : 1;
  const ValueModel model(ck, env);
  json written = json::array();
  for (const auto& g : parse_goals(env, inv.get<std::string>("goal"), nb)) {
    const fs::path p = inv.run_dir / (inv.get<std::string>("out_prefix") + "_" + g.name + ".csv");
    write_file_atomic(p, state_value_grid(env, model.values(g.observation)));
    written.push_back(p.string());
  }
  std::cout << json{{"written", written}}.dump(2) << "\n";
  return 0;
}

int cmd_acceptance(Invocation& inv) {
  json& c = inv.config;
  c = json{{"report", "acceptance.json"}, {"only", ""}, {"triangle_slack", 1e-5}, {"seed", 0}}
          .patch(json::diff(json::object(), c));
  check_known(c, {"report", "only", "triangle_slack", "seed"}, "acceptance");
  inv.echo();
  AcceptanceOptions opt;
  opt.only = inv.get<std::string>("only");
  opt.triangle_slack = inv.get<double>("triangle_slack");
  opt.seed = inv.get<std::uint64_t>("seed");
  const auto results = run_acceptance(opt, std::cout);
  write_file_atomic(inv.path("report"), acceptance_json(results).dump(2) + "\n");
  return all_passed(results) ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  if (const char* t = std::getenv("QRL_NUM_THREADS")) Eigen::setNbThreads(std::max(1, std::atoi(t)));

  CLI::App app{"Quasimetric RL toolkit"};
  app.require_subcommand(1);
  std::string config_file, run_dir = ".";
  struct Command {
    const char* name;
    const char* help;
    int (*run)(Invocation&);
  };
  const Command commands[] = {
      {"gen-data", "generate a random-policy dataset (QRLD)", cmd_gen_data},
      {"oracle", "exact shortest-path distance grids", cmd_oracle},
      {"train", "train QRL or a Q-learning baseline", cmd_train},
      {"eval", "greedy-policy evaluation report", cmd_eval},
      {"heatmap", "learned distance grids", cmd_heatmap},
      {"acceptance", "run the acceptance suite", cmd_acceptance},
  };
  for (const auto& cmd : commands) {
    auto* sub = app.add_subcommand(cmd.name, cmd.help);
    sub->add_option("--config", config_file, "JSON config file");
    sub->add_option("--run-dir", run_dir, "directory for all inputs and outputs");
    sub->allow_extras();
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  for (const auto& cmd : commands) {
    auto* sub = app.get_subcommand(cmd.name);
    if (!sub->parsed()) continue;
    try {
      Invocation inv;
      inv.command = cmd.name;
      inv.run_dir = run_dir;
      fs::create_directories(inv.run_dir);
      inv.config = json::object();
      if (!config_file.empty()) inv.config = json::parse(read_file(config_file));
      if (!inv.config.is_object()) throw std::invalid_argument("config file must hold a JSON object");
      inv.config.merge_patch(parse_overrides(sub->remaining()));
      return cmd.run(inv);
    } catch (const std::exception& e) {
      std::cerr << "qrl " << cmd.name << ": " << e.what() << "\n";
      return 2;
    }
  }
  return 2;
}
