#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "qrl/autodiff.hpp"

using namespace qrl;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
  std::normal_distribution<float> n(0.0f, 1.0f);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

// sum(up .* mlp(x)) recomputed in double from the float parameters.
double objective(const MlpParams& p, const Matrix& x, const Matrix& up) {
  Eigen::MatrixXd h = x.cast<double>();
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    Eigen::MatrixXd y = h * p.layers[l].weight.cast<double>().transpose();
    y.rowwise() += p.layers[l].bias.cast<double>().transpose();
    if (l + 1 < p.layers.size()) y = y.cwiseMax(0.0);
    h = y;
  }
  return (h.array() * up.cast<double>().array()).sum();
}

}  // namespace

TEST(Softplus, KnownValues) {
  EXPECT_NEAR(softplus(0.0), std::log(2.0), 1e-15);
  EXPECT_NEAR(softplus(0.0, 0.01), std::log(2.0) / 0.01, 1e-10);
  EXPECT_NEAR(softplus(800.0), 800.0, 1e-12);  // no overflow
  EXPECT_NEAR(softplus(-800.0), 0.0, 1e-300);
  EXPECT_NEAR(softplus_grad(0.0), 0.5, 1e-15);
  EXPECT_THROW(softplus(1.0, 0.0), std::invalid_argument);
}

TEST(Softplus, InverseRoundTrip) {
  for (double y : {1e-4, 0.01, 0.5, 1.0, 3.0, 25.0, 60.0}) EXPECT_NEAR(softplus(softplus_inverse(y)), y, 1e-9 * (1 + y));
  EXPECT_THROW(softplus_inverse(0.0), std::invalid_argument);
}

TEST(CosineLr, Endpoints) {
  EXPECT_DOUBLE_EQ(cosine_lr(0, 100, 0.1), 0.1);
  EXPECT_NEAR(cosine_lr(50, 100, 0.1), 0.05, 1e-15);
  EXPECT_NEAR(cosine_lr(100, 100, 0.1), 0.0, 1e-15);
  EXPECT_THROW(cosine_lr(101, 100, 0.1), std::out_of_range);
}

TEST(MlpSpec, RejectsDegenerateShapes) {
  EXPECT_THROW(MlpSpec({3}), ShapeError);
  EXPECT_THROW(MlpSpec({3, 0, 2}), ShapeError);
}

TEST(Mlp, InitIsDeterministicHeNormal) {
  const MlpSpec spec({64, 512, 4});
  const auto a = mlp_init(spec, 11), b = mlp_init(spec, 11), c = mlp_init(spec, 12);
  EXPECT_TRUE(a == b);
  EXPECT_FALSE(a == c);
  const auto& w = a.layers[0].weight;
  const double var = w.cast<double>().array().square().mean();
  EXPECT_NEAR(var, 2.0 / 64, 0.1 * 2.0 / 64);
  EXPECT_TRUE(a.layers[0].bias.isZero());
}

TEST(Mlp, ForwardMatchesApplyAndHandComputation) {
  MlpParams p = MlpParams::zeros(MlpSpec({2, 2, 1}));
  p.layers[0].weight << 1, -1, 2, 0;
  p.layers[0].bias << 0, -1;
  p.layers[1].weight << 3, 1;
  p.layers[1].bias << 0.5;
  Matrix x(1, 2);
  x << 1, 2;
  // hidden = relu([1-2, 2-1]) = [0, 1]; out = 0*3 + 1*1 + 0.5
  EXPECT_FLOAT_EQ(mlp_apply(p, x)(0, 0), 1.5f);
  EXPECT_FLOAT_EQ(mlp_forward(p, x).output(0, 0), 1.5f);
  EXPECT_THROW(mlp_apply(p, Matrix::Zero(1, 3)), ShapeError);
}

TEST(Mlp, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  MlpParams p = mlp_init(MlpSpec({4, 7, 5, 3}), 5);
  for (auto& l : p.layers) l.bias = random_matrix(l.bias.size(), 1, rng).col(0) * 0.2f;
  const Matrix x = random_matrix(6, 4, rng), up = random_matrix(6, 3, rng);
  auto fwd = mlp_forward(p, x);
  const auto back = mlp_backward(fwd.tape, up);
  int checked = 0, total = 0;
  for (std::size_t l = 0; l < p.layers.size(); ++l)
    for (Eigen::Index i = 0; i < p.layers[l].weight.size(); ++i) {
      float& w = p.layers[l].weight.data()[i];
      const float keep = w;
      auto central = [&](float h) {
        w = keep + h;
        const double fp = objective(p, x, up);
        w = keep - h;
        const double fm = objective(p, x, up);
        w = keep;
        return (fp - fm) / (static_cast<double>(keep + h) - static_cast<double>(keep - h));
      };
      ++total;
      const double fd = central(1e-3f);
      if (std::abs(fd - central(5e-4f)) > 1e-4 * (1 + std::abs(fd))) continue;  // straddles a relu kink
      EXPECT_NEAR(back.param_grads.layers[l].weight.data()[i], fd, 1e-3 * (1 + std::abs(fd))) << "layer " << l;
      ++checked;
    }
  EXPECT_GT(checked, total * 3 / 4);
}

TEST(Mlp, TapeIsSingleUse) {
  MlpParams p = mlp_init(MlpSpec({2, 3, 1}), 1);
  auto fwd = mlp_forward(p, Matrix::Ones(2, 2));
  mlp_backward(fwd.tape, Matrix::Ones(2, 1));
  EXPECT_TRUE(fwd.tape.consumed());
  EXPECT_THROW(mlp_backward(fwd.tape, Matrix::Ones(2, 1)), std::logic_error);
  GradTape empty;
  EXPECT_THROW(mlp_backward(empty, Matrix::Ones(2, 1)), std::logic_error);
}

TEST(Adam, FirstStepMovesByLearningRateTimesSign) {
  float p[2] = {1.0f, -2.0f};
  const float g[2] = {0.3f, -50.0f};
  std::vector<std::span<float>> pv{{p, 2}};
  std::vector<std::span<const float>> gv{{g, 2}};
  AdamState adam(pv, AdamConfig{0.01});
  adam.step(pv, gv);
  EXPECT_NEAR(p[0], 1.0f - 0.01f, 1e-6);
  EXPECT_NEAR(p[1], -2.0f + 0.01f, 1e-6);
  EXPECT_EQ(adam.step_count(), 1);
}

TEST(Adam, RejectsBadInputs) {
  float p = 0.0f;
  const float bad = std::nanf("");
  std::vector<std::span<float>> pv{{&p, 1}};
  std::vector<std::span<const float>> gv{{&bad, 1}};
  AdamState adam(pv, AdamConfig{});
  EXPECT_THROW(adam.step(pv, gv), DivergenceError);
  EXPECT_THROW(AdamState(pv, AdamConfig{-1.0}), std::invalid_argument);
}
