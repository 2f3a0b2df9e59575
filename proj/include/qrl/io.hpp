#pragma once

// On-disk formats. Every writer goes through write_file_atomic (temp file +
// rename), so an interrupted run never leaves a truncated artifact.
//
//   QRLD dataset   "QRLD" u16 version, u32 json length, json metadata,
//                  u64 count, count x 33-byte records; little-endian.
//   checkpoint     "QRLC" u16 version, u32 json length, json header,
//                  f32 parameter streams in header order; little-endian.
//   CSV grid       one row per source, "inf" for unreachable.
//   trace          JSON lines, one object per logged step.

#include <malloc.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qrl/critic.hpp"
#include "qrl/environments.hpp"
#include "qrl/evaluation.hpp"
#include "qrl/graph.hpp"
#include "qrl/td_baselines.hpp"
#include "qrl/trainer.hpp"

namespace qrl {

using json = nlohmann::json;

struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

static_assert(std::endian::native == std::endian::little, "formats assume a little-endian host");

/// Large, short-lived matrices otherwise bounce through mmap/munmap on every
/// training step; keep them on the heap instead.
inline void tune_allocator() {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
}

// ---------------------------------------------------------------------------
// Files

inline void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

namespace detail {

class ByteWriter {
 public:
  template <class T>
  void put(T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    bytes.append(buf, sizeof(T));
  }
  void raw(const void* p, std::size_t n) { bytes.append(static_cast<const char*>(p), n); }
  void floats(std::span<const float> v) { raw(v.data(), v.size() * sizeof(float)); }
  std::string bytes;
};

class ByteReader {
 public:
  explicit ByteReader(const std::string& b) : bytes_(b) {}
  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void floats(std::span<float> out) {
    need(out.size() * sizeof(float));
    std::memcpy(out.data(), bytes_.data() + pos_, out.size() * sizeof(float));
    pos_ += out.size() * sizeof(float);
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("unexpected end of file");
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

inline void write_header(ByteWriter& w, const char* magic, std::uint16_t version, const json& j) {
  w.raw(magic, 4);
  w.put<std::uint16_t>(version);
  const std::string text = j.dump();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(text.size()));
  w.raw(text.data(), text.size());
}

inline json read_header(ByteReader& r, const char* magic, std::uint16_t version) {
  if (r.str(4) != std::string(magic, 4)) throw FormatError(std::string("bad magic, expected ") + magic);
  const auto v = r.get<std::uint16_t>();
  if (v != version) throw FormatError("unsupported format version " + std::to_string(v));
  const auto len = r.get<std::uint32_t>();
  try {
    return json::parse(r.str(len));
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad json header: ") + e.what());
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// JSON mappings

inline void to_json(json& j, const DatasetMetadata& m) {
  j = json{{"env_id", m.env_id},   {"resolution", m.resolution}, {"height", m.height},
           {"policy", m.policy},   {"seed", m.seed},             {"episodes", m.episodes},
           {"max_episode_len", m.max_episode_len}, {"goal_edge_cost", m.goal_edge_cost}};
}

inline void from_json(const json& j, DatasetMetadata& m) {
  j.at("env_id").get_to(m.env_id);
  j.at("resolution").get_to(m.resolution);
  m.height = j.value("height", m.resolution);
  m.policy = j.value("policy", std::string("uniform_random"));
  m.seed = j.value("seed", std::uint64_t{0});
  m.episodes = j.value("episodes", 0);
  m.max_episode_len = j.value("max_episode_len", 250);
  m.goal_edge_cost = j.value("goal_edge_cost", 0.25);
}

inline void to_json(json& j, const CriticSpec& s) {
  j = json{{"obs_dim", s.obs_dim},
           {"num_actions", s.num_actions},
           {"encoder_hidden", s.encoder_hidden},
           {"latent_dim", s.latent_dim},
           {"projector_hidden", s.projector_hidden},
           {"components", s.components},
           {"component_size", s.component_size},
           {"transition_hidden", s.transition_hidden},
           {"symmetric", s.symmetric},
           {"obs_shift", s.obs_shift},
           {"obs_scale", s.obs_scale},
           {"fourier_features", s.fourier_features},
           {"fourier_scale", s.fourier_scale},
           {"fourier_seed", s.fourier_seed}};
}

inline void from_json(const json& j, CriticSpec& s) {
  s.obs_dim = j.value("obs_dim", s.obs_dim);
  s.num_actions = j.value("num_actions", s.num_actions);
  s.encoder_hidden = j.value("encoder_hidden", s.encoder_hidden);
  s.latent_dim = j.value("latent_dim", s.latent_dim);
  s.projector_hidden = j.value("projector_hidden", s.projector_hidden);
  s.components = j.value("components", s.components);
  s.component_size = j.value("component_size", s.component_size);
  s.transition_hidden = j.value("transition_hidden", s.transition_hidden);
  s.symmetric = j.value("symmetric", s.symmetric);
  s.obs_shift = j.value("obs_shift", s.obs_shift);
  s.obs_scale = j.value("obs_scale", s.obs_scale);
  s.fourier_features = j.value("fourier_features", s.fourier_features);
  s.fourier_scale = j.value("fourier_scale", s.fourier_scale);
  s.fourier_seed = j.value("fourier_seed", s.fourier_seed);
  if (s.fourier_features < 0 || !(s.fourier_scale > 0))
    throw std::invalid_argument("critic spec: fourier_features must be >= 0 and fourier_scale > 0");
  if (s.obs_shift.size() != s.obs_scale.size() ||
      (!s.obs_shift.empty() && static_cast<int>(s.obs_shift.size()) != s.obs_dim))
    throw std::invalid_argument("critic spec: obs_shift/obs_scale must both be empty or obs_dim long");
}

inline void to_json(json& j, const QrlConfig& c) {
  j = json{{"epsilon", c.epsilon},
           {"lambda_init", c.lambda_init},
           {"lr_model", c.lr_model},
           {"lr_lambda", c.lr_lambda},
           {"batch_size", c.batch_size},
           {"total_steps", c.total_steps},
           {"phi_offset", c.phi_offset},
           {"phi_beta", c.phi_beta},
           {"transition_weight", c.transition_weight},
           {"goal_mix_prob", c.goal_mix_prob},
           {"seed", c.seed},
           {"symmetric_ablation", c.symmetric_ablation},
           {"log_interval", c.log_interval},
           {"critic", c.critic}};
}

inline void from_json(const json& j, QrlConfig& c) {
  c.epsilon = j.value("epsilon", c.epsilon);
  c.lambda_init = j.value("lambda_init", c.lambda_init);
  c.lr_model = j.value("lr_model", c.lr_model);
  c.lr_lambda = j.value("lr_lambda", c.lr_lambda);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.total_steps = j.value("total_steps", c.total_steps);
  c.phi_offset = j.value("phi_offset", c.phi_offset);
  c.phi_beta = j.value("phi_beta", c.phi_beta);
  c.transition_weight = j.value("transition_weight", c.transition_weight);
  c.goal_mix_prob = j.value("goal_mix_prob", c.goal_mix_prob);
  c.seed = j.value("seed", c.seed);
  c.symmetric_ablation = j.value("symmetric_ablation", c.symmetric_ablation);
  c.log_interval = j.value("log_interval", c.log_interval);
  if (j.contains("critic")) {
    CriticSpec base = c.critic;
    json merged = base;
    merged.update(j.at("critic"));
    c.critic = merged.get<CriticSpec>();
  }
  if (!(c.epsilon > 0) || !(c.lambda_init > 0) || !(c.lr_model > 0) || !(c.lr_lambda > 0) || !(c.phi_beta > 0))
    throw std::invalid_argument("qrl config: epsilon, lambda_init, learning rates and phi_beta must be > 0");
  if (c.goal_mix_prob < 0 || c.goal_mix_prob > 1) throw std::invalid_argument("qrl config: goal_mix_prob not in [0, 1]");
}

inline std::string to_string(QHead h) { return h == QHead::monolithic_mlp ? "monolithic_mlp" : "quasimetric"; }

inline QHead parse_qhead(const std::string& s) {
  if (s == "monolithic_mlp") return QHead::monolithic_mlp;
  if (s == "quasimetric") return QHead::quasimetric;
  throw std::invalid_argument("unknown q head: " + s);
}

inline void to_json(json& j, const QLearnConfig& c) {
  j = json{{"gamma", c.gamma},
           {"target_update_interval", c.target_update_interval},
           {"target_ema", c.target_ema},
           {"lr", c.lr},
           {"batch_size", c.batch_size},
           {"total_steps", c.total_steps},
           {"relabel_geometric_p", c.relabel_geometric_p},
           {"goal_mix_prob", c.goal_mix_prob},
           {"seed", c.seed},
           {"head", to_string(c.head)},
           {"log_interval", c.log_interval},
           {"step_cost", c.step_cost},
           {"mlp_hidden", c.mlp_hidden},
           {"obs_dim", c.obs_dim},
           {"num_actions", c.num_actions},
           {"obs_shift", c.obs_shift},
           {"obs_scale", c.obs_scale},
           {"critic", c.critic},
           {"transition_weight", c.transition_weight}};
}

inline void from_json(const json& j, QLearnConfig& c) {
  c.gamma = j.value("gamma", c.gamma);
  c.target_update_interval = j.value("target_update_interval", c.target_update_interval);
  c.target_ema = j.value("target_ema", c.target_ema);
  c.lr = j.value("lr", c.lr);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.total_steps = j.value("total_steps", c.total_steps);
  c.relabel_geometric_p = j.value("relabel_geometric_p", c.relabel_geometric_p);
  c.goal_mix_prob = j.value("goal_mix_prob", c.goal_mix_prob);
  c.seed = j.value("seed", c.seed);
  if (j.contains("head")) c.head = parse_qhead(j.at("head").get<std::string>());
  c.log_interval = j.value("log_interval", c.log_interval);
  c.step_cost = j.value("step_cost", c.step_cost);
  c.mlp_hidden = j.value("mlp_hidden", c.mlp_hidden);
  c.obs_dim = j.value("obs_dim", c.obs_dim);
  c.num_actions = j.value("num_actions", c.num_actions);
  c.obs_shift = j.value("obs_shift", c.obs_shift);
  c.obs_scale = j.value("obs_scale", c.obs_scale);
  if (j.contains("critic")) {
    json merged = c.critic;
    merged.update(j.at("critic"));
    c.critic = merged.get<CriticSpec>();
  }
  c.transition_weight = j.value("transition_weight", c.transition_weight);
  if (!(c.gamma > 0 && c.gamma <= 1)) throw std::invalid_argument("qlearn config: gamma not in (0, 1]");
  if (!(c.relabel_geometric_p > 0 && c.relabel_geometric_p <= 1))
    throw std::invalid_argument("qlearn config: relabel_geometric_p not in (0, 1]");
  if (c.target_update_interval < 1) throw std::invalid_argument("qlearn config: target_update_interval < 1");
}

inline json trace_row_json(const TraceRow& r) {
  return {{"step", r.step},
          {"lambda", r.lambda},
          {"pull", r.pull},
          {"constraint", r.constraint},
          {"transition", r.transition},
          {"max_overshoot", r.max_overshoot},
          {"loss", r.loss},
          {"lr_model", r.lr_model},
          {"lr_lambda", r.lr_lambda}};
}

inline json trace_row_json(const QTraceRow& r) {
  return {{"step", r.step}, {"td_loss", r.td_loss}, {"transition", r.transition}, {"mean_q", r.mean_q}};
}

template <class Row>
inline std::string trace_jsonl(const std::vector<Row>& rows) {
  std::string out;
  for (const auto& r : rows) out += trace_row_json(r).dump() + "\n";
  return out;
}

inline json report_json(const EvalReport& rep) {
  json goals = json::array();
  std::vector<std::string> groups;
  for (const auto& g : rep.goals) {
    goals.push_back({{"name", g.name},
                     {"group", g.group},
                     {"mean_return", g.mean_return},
                     {"oracle_return", g.oracle_return},
                     {"floor_return", g.floor_return},
                     {"normalized_score", g.normalized_score},
                     {"success_rate", g.success_rate}});
    if (std::find(groups.begin(), groups.end(), g.group) == groups.end()) groups.push_back(g.group);
  }
  json by_group = json::object();
  for (const auto& name : groups) by_group[name] = rep.group_score(name);
  return {{"budget", rep.budget}, {"goals", goals}, {"group_scores", by_group}};
}

// ---------------------------------------------------------------------------
// QRLD datasets

inline constexpr std::uint16_t kDatasetVersion = 1;
inline constexpr std::size_t kRecordBytes = 33;

inline std::string encode_dataset(const TransitionDataset& ds) {
  detail::ByteWriter w;
  detail::write_header(w, "QRLD", kDatasetVersion, json(ds.metadata));
  w.put<std::uint64_t>(ds.size());
  for (const auto& r : ds.records) {
    if (r.a < -128 || r.a > 127) throw std::out_of_range("dataset: action does not fit in i8");
    w.floats(r.s);
    w.put<std::int8_t>(static_cast<std::int8_t>(r.a));
    w.floats(r.s_next);
    w.put<float>(r.r);
    w.put<std::uint32_t>(r.episode_id);
  }
  return std::move(w.bytes);
}

inline TransitionDataset decode_dataset(const std::string& bytes) {
  detail::ByteReader rd(bytes);
  TransitionDataset ds;
  ds.metadata = detail::read_header(rd, "QRLD", kDatasetVersion).get<DatasetMetadata>();
  const auto count = rd.get<std::uint64_t>();
  if (count > bytes.size() / kRecordBytes) throw FormatError("dataset: record count exceeds file size");
  ds.records.resize(count);
  for (auto& r : ds.records) {
    rd.floats(r.s);
    r.a = rd.get<std::int8_t>();
    rd.floats(r.s_next);
    r.r = rd.get<float>();
    r.episode_id = rd.get<std::uint32_t>();
  }
  if (!rd.done()) throw FormatError("dataset: trailing bytes");
  ds.rebuild_episode_starts();
  return ds;
}

inline void save_dataset(const std::filesystem::path& path, const TransitionDataset& ds) {
  write_file_atomic(path, encode_dataset(ds));
}

inline TransitionDataset load_dataset(const std::filesystem::path& path) { return decode_dataset(read_file(path)); }

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr std::uint16_t kCheckpointVersion = 1;

namespace detail {

inline json mlp_shapes(const MlpParams& p) {
  json layers = json::array();
  for (const auto& l : p.layers) layers.push_back({{"out", l.weight.rows()}, {"in", l.weight.cols()}});
  return layers;
}

inline void put_mlp(ByteWriter& w, const MlpParams& p) {
  for (auto v : p.views()) w.floats(v);
}

inline void get_mlp(ByteReader& r, MlpParams& p, const json& shapes, const char* what) {
  if (shapes.size() != p.layers.size()) throw FormatError(std::string("checkpoint: layer count mismatch in ") + what);
  for (std::size_t i = 0; i < p.layers.size(); ++i)
    if (shapes[i].at("out").get<Eigen::Index>() != p.layers[i].weight.rows() ||
        shapes[i].at("in").get<Eigen::Index>() != p.layers[i].weight.cols())
      throw FormatError(std::string("checkpoint: layer shape mismatch in ") + what);
  for (auto v : p.views()) r.floats(v);
}

}  // namespace detail

/// A trained model of either family; exactly one of critic / mlp is used.
struct Checkpoint {
  std::string algo;  // "qrl", "qlearn" or "qlearn-qmet"
  QHead head = QHead::quasimetric;
  QuasimetricCritic critic;
  MlpParams mlp;
  std::vector<float> obs_shift, obs_scale;  // monolithic head only
  json extra = json::object();               // e.g. final lambda, env id

  static Checkpoint from_qrl(const QuasimetricCritic& c) {
    Checkpoint k;
    k.algo = "qrl";
    k.critic = c;
    return k;
  }

  static Checkpoint from_qmodel(const QModel& m) {
    Checkpoint k;
    k.head = m.head;
    k.algo = m.head == QHead::quasimetric ? "qlearn-qmet" : "qlearn";
    k.critic = m.critic;
    k.mlp = m.mlp;
    k.obs_shift = m.obs_shift;
    k.obs_scale = m.obs_scale;
    return k;
  }

  bool uses_critic() const { return head == QHead::quasimetric; }

  QModel qmodel() const {
    if (algo == "qrl") throw std::invalid_argument("checkpoint: qrl critic is not a Q model");
    QModel m;
    m.head = head;
    m.critic = critic;
    m.mlp = mlp;
    m.obs_shift = obs_shift;
    m.obs_scale = obs_scale;
    if (head == QHead::monolithic_mlp) {
      m.obs_dim = static_cast<int>(mlp.layers.front().weight.cols()) / 2;
      m.num_actions = static_cast<int>(mlp.layers.back().weight.rows());
    } else {
      m.obs_dim = critic.spec.obs_dim;
      m.num_actions = critic.spec.num_actions;
    }
    return m;
  }
};

inline std::string encode_checkpoint(const Checkpoint& ck) {
  json h{{"algo", ck.algo}, {"head", to_string(ck.head)}, {"extra", ck.extra}};
  if (ck.uses_critic()) {
    h["critic"] = ck.critic.spec;
    h["k"] = ck.critic.head.components;
    h["m"] = ck.critic.head.component_size;
    h["mix_raw"] = ck.critic.head.mix_raw;
    h["order"] = {"encoder", "projector", "transition"};
    h["encoder"] = detail::mlp_shapes(ck.critic.encoder);
    h["projector"] = detail::mlp_shapes(ck.critic.projector);
    h["transition"] = detail::mlp_shapes(ck.critic.transition);
  } else {
    h["order"] = {"mlp"};
    h["mlp"] = detail::mlp_shapes(ck.mlp);
    h["obs_shift"] = ck.obs_shift;
    h["obs_scale"] = ck.obs_scale;
  }
  detail::ByteWriter w;
  detail::write_header(w, "QRLC", kCheckpointVersion, h);
  if (ck.uses_critic()) {
    detail::put_mlp(w, ck.critic.encoder);
    detail::put_mlp(w, ck.critic.projector);
    detail::put_mlp(w, ck.critic.transition);
  } else {
    detail::put_mlp(w, ck.mlp);
  }
  return std::move(w.bytes);
}

inline Checkpoint decode_checkpoint(const std::string& bytes) {
  detail::ByteReader rd(bytes);
  const json h = detail::read_header(rd, "QRLC", kCheckpointVersion);
  Checkpoint ck;
  ck.algo = h.at("algo").get<std::string>();
  ck.head = parse_qhead(h.at("head").get<std::string>());
  ck.extra = h.value("extra", json::object());
  if (ck.uses_critic()) {
    const auto spec = h.at("critic").get<CriticSpec>();
    ck.critic = QuasimetricCritic::create(spec, 0);
    if (h.at("k").get<int>() != spec.components || h.at("m").get<int>() != spec.component_size)
      throw FormatError("checkpoint: head shape disagrees with critic spec");
    ck.critic.head.mix_raw = h.at("mix_raw").get<float>();
    detail::get_mlp(rd, ck.critic.encoder, h.at("encoder"), "encoder");
    detail::get_mlp(rd, ck.critic.projector, h.at("projector"), "projector");
    detail::get_mlp(rd, ck.critic.transition, h.at("transition"), "transition");
  } else {
    std::vector<int> widths;
    const json& layers = h.at("mlp");
    if (layers.empty()) throw FormatError("checkpoint: empty mlp");
    widths.push_back(layers.front().at("in").get<int>());
    for (const auto& l : layers) widths.push_back(l.at("out").get<int>());
    ck.mlp = MlpParams::zeros(MlpSpec(widths));
    detail::get_mlp(rd, ck.mlp, layers, "mlp");
    ck.obs_shift = h.value("obs_shift", std::vector<float>{});
    ck.obs_scale = h.value("obs_scale", std::vector<float>{});
  }
  if (!rd.done()) throw FormatError("checkpoint: trailing bytes");
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  write_file_atomic(path, encode_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

// ---------------------------------------------------------------------------
// CSV grids

inline std::string format_cell(double x) {
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  std::ostringstream ss;
  ss << std::setprecision(9) << x;
  return ss.str();
}

/// rows x cols values in row-major order.
inline std::string csv_grid(std::span<const double> values, int rows, int cols) {
  if (static_cast<std::size_t>(rows) * cols != values.size()) throw ShapeError("csv_grid: size mismatch");
  std::string out;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      if (c) out += ',';
      out += format_cell(values[static_cast<std::size_t>(r) * cols + c]);
    }
    out += '\n';
  }
  return out;
}

inline std::string csv_grid(const DistanceMatrix& d) {
  return csv_grid(d.data(), d.rows(), d.cols());
}

inline std::vector<std::vector<double>> parse_csv_grid(const std::string& text) {
  std::vector<std::vector<double>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::istringstream cells(line);
    std::string cell;
    while (std::getline(cells, cell, ',')) {
      if (cell == "inf") row.push_back(kInf);
      else if (cell == "-inf") row.push_back(-kInf);
      else row.push_back(std::stod(cell));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

/// Per-state values laid out as a bins x bins mountain car grid: one row per
/// position bin, one column per velocity bin.
inline std::string state_value_grid(const TabularEnv& env, std::span<const double> per_state) {
  if (static_cast<int>(per_state.size()) != env.num_states) throw ShapeError("state_value_grid: size mismatch");
  if (env.kind == EnvKind::mountain_car) return csv_grid(per_state, env.bins, env.bins);
  std::vector<double> grid(static_cast<std::size_t>(env.width) * env.height, std::numeric_limits<double>::quiet_NaN());
  for (int s = 0; s < env.num_states; ++s)
    grid[static_cast<std::size_t>(env.cells[s].y) * env.width + env.cells[s].x] = per_state[s];
  return csv_grid(grid, env.height, env.width);
}

}  // namespace qrl
