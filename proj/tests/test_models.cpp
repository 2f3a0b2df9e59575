#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "qrl/critic.hpp"
#include "qrl/iqe.hpp"

using namespace qrl;

namespace {

std::vector<float> v(std::initializer_list<float> x) { return x; }

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, float sd = 1.0f) {
  std::normal_distribution<float> n(0.0f, sd);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

CriticSpec small_spec() {
  CriticSpec s;
  s.encoder_hidden = {16};
  s.latent_dim = 8;
  s.projector_hidden = {16};
  s.components = 4;
  s.component_size = 4;
  s.transition_hidden = {16};
  return s;
}

}  // namespace

TEST(IqeComponent, HandFixtures) {
  // [0,1] u [0,2] has measure 2.
  EXPECT_DOUBLE_EQ(iqe_component_distance(v({0, 0}), v({1, 2})), 2.0);
  // Reversed endpoints give empty intervals.
  EXPECT_DOUBLE_EQ(iqe_component_distance(v({1, 2}), v({0, 0})), 0.0);
  // [0,1] u [3,2]: the second interval is empty.
  EXPECT_DOUBLE_EQ(iqe_component_distance(v({0, 3}), v({1, 2})), 1.0);
  // Disjoint and nested intervals.
  EXPECT_DOUBLE_EQ(iqe_component_distance(v({0, 5, 1}), v({2, 6, 1.5f})), 3.0);
  EXPECT_DOUBLE_EQ(iqe_component_distance(v({3, 3}), v({3, 3})), 0.0);
  EXPECT_THROW(iqe_component_distance(v({0}), v({1, 2})), ShapeError);
}

TEST(IqeComponent, BackwardTouchesOnlySegmentEndpoints) {
  const auto u = v({0, 0.5f, 3}), w = v({1, 2, 4});
  std::vector<float> gu(3, 0.0f), gw(3, 0.0f);
  // Segments [0,2] (starts at u0, ends at w1) and [3,4].
  EXPECT_DOUBLE_EQ(iqe_component_backward(u, w, 1.0, gu, gw), 3.0);
  EXPECT_EQ(gu, v({-1, 0, -1}));
  EXPECT_EQ(gw, v({0, 1, 1}));
}

TEST(IqeMaxMean, HalfMixAveragesMaxAndMean) {
  const std::vector<double> comps{2.0, 0.0};
  EXPECT_DOUBLE_EQ(iqe_maxmean(comps, 0.0), 1.5);
  EXPECT_NEAR(iqe_maxmean(comps, 40.0), 2.0, 1e-12);
  EXPECT_NEAR(iqe_maxmean(comps, -40.0), 1.0, 1e-12);
  EXPECT_THROW(iqe_maxmean(std::vector<double>{-1.0}, 0.0), std::invalid_argument);
}

TEST(IqeHead, BatchedForwardMatchesComponents) {
  std::mt19937_64 rng(1);
  IqeHead head{3, 5, 0.7f};
  const Matrix a = random_matrix(10, 15, rng), b = random_matrix(10, 15, rng);
  IqeTape tape;
  const auto d = head.forward(a, b, &tape);
  for (int r = 0; r < 10; ++r) {
    std::vector<double> comps;
    for (int i = 0; i < 3; ++i)
      comps.push_back(iqe_component_distance({a.row(r).data() + 5 * i, 5}, {b.row(r).data() + 5 * i, 5}));
    EXPECT_NEAR(d[r], iqe_maxmean(comps, 0.7), 1e-7 * d[r]);  // mu is computed from a float
  }
  EXPECT_THROW(head.forward(a, Matrix::Zero(10, 14)), ShapeError);
}

TEST(IqeHead, TapeBackwardEqualsDirectBackward) {
  std::mt19937_64 rng(2);
  IqeHead head{4, 6, -0.3f};
  const Matrix a = random_matrix(7, 24, rng), b = random_matrix(7, 24, rng);
  const std::vector<double> up{1, -2, 0.5, 0, 3, 1, -1};
  IqeTape tape;
  head.forward(a, b, &tape);
  Matrix ga1 = Matrix::Zero(7, 24), gb1 = ga1, ga2 = ga1, gb2 = ga1;
  double m1 = 0, m2 = 0;
  head.backward(a, b, up, ga1, gb1, m1);
  head.backward_from_tape(tape, up, ga2, gb2, m2);
  EXPECT_TRUE(ga1.isApprox(ga2));
  EXPECT_TRUE(gb1.isApprox(gb2));
  EXPECT_NEAR(m1, m2, 1e-12);
}

TEST(IqeHead, QuasimetricAxiomsOnRandomPoints) {
  std::mt19937_64 rng(3);
  IqeHead head{8, 16, 0.2f};
  const Matrix x = random_matrix(2000, 128, rng), y = random_matrix(2000, 128, rng), z = random_matrix(2000, 128, rng);
  const auto dxx = head.forward(x, x), dxy = head.forward(x, y), dyz = head.forward(y, z), dxz = head.forward(x, z);
  bool asymmetric = false;
  const auto dyx = head.forward(y, x);
  for (int r = 0; r < 2000; ++r) {
    EXPECT_EQ(dxx[r], 0.0);
    EXPECT_GE(dxy[r], 0.0);
    EXPECT_LE(dxz[r], dxy[r] + dyz[r] + 1e-9);
    asymmetric |= std::abs(dxy[r] - dyx[r]) > 1e-3;
  }
  EXPECT_TRUE(asymmetric);
}

TEST(L2Head, SymmetricDistance) {
  Matrix a(1, 2), b(1, 2);
  a << 0, 0;
  b << 3, 4;
  EXPECT_DOUBLE_EQ(L2Head{}.forward(a, b)[0], 5.0);
  EXPECT_DOUBLE_EQ(L2Head{}.forward(b, a)[0], 5.0);
}

TEST(Critic, TransitionStartsAsIdentity) {
  const auto c = QuasimetricCritic::create(small_spec(), 4);
  std::mt19937_64 rng(4);
  const Matrix z = random_matrix(5, 8, rng);
  const std::vector<int> acts{0, 1, 2, 0, 1};
  EXPECT_TRUE(c.transition_predict(z, acts).isApprox(z));
  EXPECT_THROW(c.transition_predict(z, std::vector<int>{0, 1, 7, 0, 1}), std::out_of_range);
}

TEST(Critic, GoalRowsGetNoActionBit) {
  const auto c = QuasimetricCritic::create(small_spec(), 4);
  const Matrix z = Matrix::Ones(2, 8);
  const auto in = c.transition_input(z, std::vector<int>{-1, 2});
  EXPECT_EQ(in.row(0).tail(3).sum(), 0.0f);
  EXPECT_EQ(in(1, 8 + 2), 1.0f);
}

TEST(Critic, StateDistanceZeroOnDiagonal) {
  auto spec = small_spec();
  spec.fourier_features = 4;
  spec.normalize_for_mountain_car();
  const auto c = QuasimetricCritic::create(spec, 9);
  const float s[3] = {-0.5f, 0.01f, 0.0f}, g[3] = {0.3f, -0.02f, 0.0f};
  EXPECT_EQ(c.state_distance(s, s), 0.0);
  EXPECT_GE(c.state_distance(s, g), 0.0);
  EXPECT_NEAR(c.q_distance(s, 1, g, 1.0) - 1.0, c.state_distance(s, g), 1e-5);  // T = identity at init
}

TEST(Critic, FourierFeaturesAreFixedAndShaped) {
  auto spec = small_spec();
  spec.fourier_features = 5;
  const auto a = QuasimetricCritic::create(spec, 1), b = QuasimetricCritic::create(spec, 2);
  EXPECT_EQ(a.fourier_basis, b.fourier_basis);
  EXPECT_EQ(a.encoder.spec.input_width(), 3 + 10);
  const Matrix f = a.features(Matrix::Zero(2, 3));
  EXPECT_EQ(f.cols(), 13);
  EXPECT_FLOAT_EQ(f(0, 3), 0.0f);  // sin(0)
  EXPECT_FLOAT_EQ(f(0, 8), 1.0f);  // cos(0)
}

TEST(Critic, DistanceBackwardMatchesFiniteDifferenceOnMix) {
  auto c = QuasimetricCritic::create(small_spec(), 5);
  std::mt19937_64 rng(5);
  const Matrix s = random_matrix(3, 3, rng), g = random_matrix(3, 3, rng);
  const std::vector<double> up{1.0, 0.5, -1.0};
  const auto back = critic_distance_backward(c, s, g, std::nullopt, up);
  auto objective = [&](float mix) {
    c.head.mix_raw = mix;
    const auto d = c.state_distances(s, g);
    return up[0] * d[0] + up[1] * d[1] + up[2] * d[2];
  };
  const double fd = (objective(1e-2f) - objective(-1e-2f)) / 2e-2;
  c.head.mix_raw = 0.0f;
  EXPECT_NEAR(back.grads.mix_raw, fd, 1e-3 * (1 + std::abs(fd)));
  for (std::size_t r = 0; r < 3; ++r) EXPECT_NEAR(back.values[r], c.state_distances(s, g)[r], 1e-6);
}

TEST(Critic, SymmetricAblationIsSymmetric) {
  auto spec = small_spec();
  spec.symmetric = true;
  const auto c = QuasimetricCritic::create(spec, 6);
  std::mt19937_64 rng(6);
  const Matrix s = random_matrix(20, 3, rng), g = random_matrix(20, 3, rng);
  const auto a = c.state_distances(s, g), b = c.state_distances(g, s);
  for (int i = 0; i < 20; ++i) EXPECT_NEAR(a[i], b[i], 1e-6);
}
