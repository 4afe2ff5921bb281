#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "popdiff/trainer.hpp"

namespace popdiff {
namespace {

TEST(CosineLr, EndpointsAndMidpoint) {
  TrainConfig c;
  EXPECT_EQ(cosine_lr(0, c), 3e-4);
  EXPECT_EQ(cosine_lr(700, c), 1e-7);
  EXPECT_NEAR(cosine_lr(350, c), (3e-4 + 1e-7) / 2, 1e-18);  // 1.5005e-4
}

TEST(CosineLr, MonotoneNonIncreasing) {
  TrainConfig c;
  for (long e = 1; e <= c.t_max; ++e) ASSERT_LE(cosine_lr(e, c), cosine_lr(e - 1, c));
}

TEST(CosineLr, OutOfRange) {
  TrainConfig c;
  EXPECT_THROW(cosine_lr(-1, c), ConfigError);
  EXPECT_THROW(cosine_lr(701, c), ConfigError);
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  c.lr_min = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.lr_max = 1e-8;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.epochs = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

double one_step(double w, double g, double wd) {
  std::vector<NdArray<double>> p{NdArray<double>({1}, {w})};
  std::vector<NdArray<double>> grads{NdArray<double>({1}, {g})};
  AdamWConfig h;
  h.weight_decay = wd;
  auto state = make_optimizer_state<double>(p, h);
  EXPECT_TRUE(adamw_step<double>(p, grads, state, 0.1));
  EXPECT_EQ(state.step, 1);
  return p[0][0];
}

TEST(AdamW, FirstStepExamples) {
  EXPECT_NEAR(one_step(1.0, 1.0, 0.0), 0.9, 1e-8);
  EXPECT_NEAR(one_step(1.0, 1.0, 0.01), 0.899, 1e-8);
}

TEST(AdamW, ZeroGradientIsIdentityWithoutDecay) {
  std::vector<NdArray<double>> p{NdArray<double>({3}, {1.0, -2.0, 0.5})};
  const auto before = p[0];
  std::vector<NdArray<double>> g{NdArray<double>({3})};
  AdamWConfig h;
  h.weight_decay = 0.0;
  auto state = make_optimizer_state<double>(p, h);
  for (int i = 0; i < 5; ++i) ASSERT_TRUE(adamw_step<double>(p, g, state, 0.1));
  EXPECT_EQ(p[0], before);
}

TEST(AdamW, ReducesToAdamWithoutDecay) {
  // Oracle: Adam with bias correction, written out for a scalar.
  std::vector<NdArray<double>> p{NdArray<double>({1}, {0.3})};
  AdamWConfig h;
  h.weight_decay = 0.0;
  h.eps = 0.0;
  auto state = make_optimizer_state<double>(p, h);
  double w = 0.3, m = 0, v = 0;
  const double gs[] = {0.5, -1.0, 2.0, 0.25};
  for (int k = 0; k < 4; ++k) {
    std::vector<NdArray<double>> g{NdArray<double>({1}, {gs[k]})};
    ASSERT_TRUE(adamw_step<double>(p, g, state, 0.01));
    m = 0.9 * m + 0.1 * gs[k];
    v = 0.999 * v + 0.001 * gs[k] * gs[k];
    w -= 0.01 * (m / (1 - std::pow(0.9, k + 1))) / std::sqrt(v / (1 - std::pow(0.999, k + 1)));
    EXPECT_NEAR(p[0][0], w, 1e-14);
  }
}

TEST(AdamW, NonFiniteGradientSkipped) {
  std::vector<NdArray<double>> p{NdArray<double>({2}, {1.0, 2.0})};
  const auto before = p[0];
  std::vector<NdArray<double>> g{NdArray<double>({2}, {0.1, std::nan("")})};
  auto state = make_optimizer_state<double>(p, {});
  EXPECT_FALSE(adamw_step<double>(p, g, state, 0.1));
  EXPECT_EQ(p[0], before);
  EXPECT_EQ(state.step, 0);
}

TEST(AdamW, ShapeMismatch) {
  std::vector<NdArray<double>> p{NdArray<double>({2})};
  std::vector<NdArray<double>> g{NdArray<double>({3})};
  auto state = make_optimizer_state<double>(p, {});
  EXPECT_THROW(adamw_step<double>(p, g, state, 0.1), ShapeError);
}

/// Three attributes with strong dependence: b copies a, c is mostly "yes".
Population toy_population(std::size_t n, std::uint64_t seed) {
  auto schema = std::make_shared<const AttributeSchema>(AttributeSchema(
      {{"a", {"a0", "a1", "a2"}}, {"b", {"b0", "b1", "b2"}}, {"c", {"no", "yes"}}}));
  std::mt19937_64 rng(seed);
  std::vector<Record> recs;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t a = std::uniform_int_distribution<std::size_t>(0, 2)(rng);
    const std::size_t c = std::bernoulli_distribution(0.8)(rng) ? 1 : 0;
    recs.push_back(Record{{a, 3 + a, 6 + c}});
  }
  return Population(schema, std::move(recs));
}

NetworkConfig small_net() {
  NetworkConfig c;
  c.embed_dim = 16;
  c.num_heads = 2;
  c.num_blocks = 1;
  c.time_embed_dim = 16;
  return c;
}

TrainConfig short_train(long epochs) {
  TrainConfig t;
  t.epochs = epochs;
  t.t_max = epochs;
  t.batch_size = 32;
  t.lr_max = 3e-3;
  t.lr_min = 1e-5;
  t.seed = 17;
  return t;
}

TEST(RunTraining, ProgressOverTwoHundredSteps) {
  auto pop = toy_population(256, 1);  // 8 steps per epoch
  auto result = run_training<double>(pop, small_net(), {}, short_train(25));
  ASSERT_EQ(result.history.size(), 25u);
  for (const auto& s : result.history) EXPECT_TRUE(std::isfinite(s.mean_loss));
  EXPECT_NEAR(result.history.front().mean_loss, 1.0, 0.1);
  double head = 0, tail = 0;
  for (int i = 0; i < 5; ++i) {
    head += result.history[i].mean_loss;
    tail += result.history[20 + i].mean_loss;
  }
  EXPECT_LT(tail, head);
  EXPECT_EQ(result.skipped_steps, 0);
  EXPECT_EQ(result.history.front().lr, 3e-3);
}

TEST(RunTraining, DeterministicPerSeed) {
  auto pop = toy_population(96, 2);
  auto a = run_training<double>(pop, small_net(), {}, short_train(4));
  auto b = run_training<double>(pop, small_net(), {}, short_train(4));
  ASSERT_EQ(a.history.size(), b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) EXPECT_EQ(a.history[i].mean_loss, b.history[i].mean_loss);
  EXPECT_EQ(a.params, b.params);
  auto cfg = short_train(4);
  cfg.seed = 18;
  EXPECT_NE(run_training<double>(pop, small_net(), {}, cfg).history[0].mean_loss,
            a.history[0].mean_loss);
}

TEST(RunTraining, FloatAndDropoutRun) {
  auto pop = toy_population(64, 3);
  auto net = small_net();
  net.dropout = 0.1;
  auto a = run_training<float>(pop, net, {}, short_train(3));
  auto b = run_training<float>(pop, net, {}, short_train(3));
  EXPECT_EQ(a.history.back().mean_loss, b.history.back().mean_loss);
  EXPECT_TRUE(std::isfinite(a.history.back().mean_loss));
}

TEST(RunTraining, EmptyDataRejected) {
  auto pop = toy_population(0, 1);
  EXPECT_THROW(run_training<double>(pop, small_net(), {}, short_train(1)), ConfigError);
}

TEST(LossHistory, CsvFormat) {
  std::vector<EpochStats> h{{0, 1.0, 3e-4}, {1, 0.5, 1e-7}};
  EXPECT_EQ(format_loss_history(h), "epoch,mean_loss,lr\n0,1,0.00029999999999999997\n1,0.5,9.9999999999999995e-08\n");
}

}  // namespace
}  // namespace popdiff
