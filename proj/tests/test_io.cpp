#include <filesystem>

#include <gtest/gtest.h>

#include "qrl/io.hpp"
#include "qrl/pipeline.hpp"

using namespace qrl;

namespace {

std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("qrl_test_io_" + name);
  std::filesystem::remove_all(p);
  return p;
}

CriticSpec small_spec() {
  CriticSpec s;
  s.encoder_hidden = {16};
  s.latent_dim = 8;
  s.projector_hidden = {16};
  s.components = 4;
  s.component_size = 4;
  s.transition_hidden = {16};
  s.fourier_features = 3;
  s.fourier_scale = 2.0;
  return s;
}

}  // namespace

TEST(DatasetFormat, RoundTripIsExact) {
  const auto env = make_mountain_car(16);
  GenerateOptions opt;
  opt.episodes = 10;
  opt.seed = 3;
  auto ds = generate_dataset(env, opt);
  const auto bytes = encode_dataset(ds);
  const auto back = decode_dataset(bytes);
  EXPECT_EQ(back.records, ds.records);
  EXPECT_EQ(back.episode_starts, ds.episode_starts);
  EXPECT_EQ(encode_dataset(back), bytes);

  const auto dir = scratch_dir("dataset");
  save_dataset(dir / "d.qrld", ds);
  EXPECT_EQ(load_dataset(dir / "d.qrld").records, ds.records);
  EXPECT_FALSE(std::filesystem::exists(dir / "d.qrld.tmp"));
}

TEST(DatasetFormat, RejectsCorruptInput) {
  const auto bytes = encode_dataset(full_coverage_dataset(make_mountain_car(8)));
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_dataset(bad_magic), FormatError);
  EXPECT_THROW(decode_dataset(bytes.substr(0, bytes.size() - 5)), FormatError);
  EXPECT_THROW(decode_dataset(bytes + "x"), FormatError);
  EXPECT_THROW(decode_dataset(""), FormatError);
}

TEST(CheckpointFormat, CriticRoundTripPreservesDistances) {
  const auto c = QuasimetricCritic::create(small_spec(), 7);
  auto ck = Checkpoint::from_qrl(c);
  ck.extra["lambda"] = 0.5;
  const auto back = decode_checkpoint(encode_checkpoint(ck));
  EXPECT_EQ(back.algo, "qrl");
  EXPECT_EQ(back.extra["lambda"], 0.5);
  Matrix s(4, 3), g(4, 3);
  s.setRandom();
  g.setRandom();
  EXPECT_EQ(back.critic.state_distances(s, g), c.state_distances(s, g));
  EXPECT_THROW(back.qmodel(), std::invalid_argument);
}

TEST(CheckpointFormat, QModelRoundTripPreservesQValues) {
  for (QHead head : {QHead::monolithic_mlp, QHead::quasimetric}) {
    QLearnConfig cfg;
    cfg.head = head;
    cfg.mlp_hidden = {8, 8};
    cfg.critic = small_spec();
    cfg.obs_shift = {0.1f, 0.0f, 0.0f};
    cfg.obs_scale = {2.0f, 10.0f, 1.0f};
    const auto m = QModel::create(cfg);
    const auto dir = scratch_dir("ckpt");
    save_checkpoint(dir / "m.ckpt", Checkpoint::from_qmodel(m));
    const auto back = load_checkpoint(dir / "m.ckpt").qmodel();
    Matrix s(5, 3), g(5, 3);
    s.setRandom();
    g.setRandom();
    EXPECT_TRUE(back.q_values(s, g) == m.q_values(s, g)) << to_string(head);
  }
}

TEST(CheckpointFormat, RejectsTruncation) {
  const auto bytes = encode_checkpoint(Checkpoint::from_qrl(QuasimetricCritic::create(small_spec(), 1)));
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() / 2)), FormatError);
}

TEST(CsvGrid, RoundTripsInfinity) {
  const std::vector<double> v{0, 1.5, kInf, -2};
  const auto text = csv_grid(v, 2, 2);
  EXPECT_EQ(text, "0,1.5\ninf,-2\n");
  const auto rows = parse_csv_grid(text);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[1][0], kInf);
  EXPECT_THROW(csv_grid(v, 3, 2), ShapeError);
}

TEST(CsvGrid, MountainCarGridIsBinsByBins) {
  const auto env = make_mountain_car(8);
  const std::vector<double> values(env.num_states, 1.0);
  const auto rows = parse_csv_grid(state_value_grid(env, values));
  ASSERT_EQ(rows.size(), 8u);
  for (const auto& r : rows) EXPECT_EQ(r.size(), 8u);
}

TEST(ConfigJson, RoundTripKeepsEveryField) {
  auto cfg = QrlConfig{};
  cfg.critic = small_spec();
  cfg.epsilon = 0.1;
  cfg.total_steps = 1234;
  const json j = cfg;
  const auto back = j.get<QrlConfig>();
  EXPECT_EQ(json(back), j);
  EXPECT_EQ(back.critic.fourier_features, 3);
  json bad = j;
  bad["critic"]["fourier_scale"] = 0.0;
  EXPECT_ANY_THROW(bad.get<QrlConfig>());

  QLearnConfig q;
  q.head = QHead::quasimetric;
  const json jq = q;
  EXPECT_EQ(json(jq.get<QLearnConfig>()), jq);
  EXPECT_THROW(parse_qhead("linear"), std::invalid_argument);
}

TEST(ParseGoals, ErrorsNameTheProblem) {
  const auto mc = make_mountain_car(16);
  EXPECT_EQ(parse_goals(mc, "top,9grid", 1).size(), 10u);
  EXPECT_EQ(parse_goals(mc, "state:3,4,top", 1).size(), 2u);
  EXPECT_THROW(parse_goals(mc, "", 1), std::invalid_argument);
  EXPECT_THROW(parse_goals(mc, "state:99,0", 1), std::invalid_argument);
  EXPECT_THROW(parse_goals(mc, "cell:1,1", 1), std::invalid_argument);
  EXPECT_THROW(parse_goals(mc, "moon", 1), std::invalid_argument);
  const auto grid = make_gridworld(GridWorldSpec{});
  EXPECT_THROW(parse_goals(grid, "top", 1), std::invalid_argument);
}
