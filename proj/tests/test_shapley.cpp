#include <gtest/gtest.h>

#include <bit>
#include <cmath>
#include <limits>

#include "msam/errors.hpp"
#include "msam/shapley.hpp"
#include "support.hpp"

using namespace msam;
using namespace msam::testing;

namespace {

ValueFn table_fn(const std::vector<double>& table) {
  return [&table](ModalityMask s) { return table[s]; };
}

}  // namespace

TEST(Shapley, WorkedTwoModalityExample) {
  const std::vector<double> v{0.0, 0.6, 0.2, 1.0};
  const auto a = shapley_exact(table_fn(v), 2);
  // 0.7 is produced exactly; 0.3 is not representable, so the second value
  // lands one ulp away from the literal.
  EXPECT_EQ(a.phi[0], 0.7);
  EXPECT_NEAR(a.phi[1], 0.3, 1e-15);
  EXPECT_NEAR(a.nu[0], 0.7, 1e-5);
  EXPECT_NEAR(a.nu[1], 0.3, 1e-5);
  EXPECT_EQ(a.dominant, 0u);
  EXPECT_EQ(a.baseline, 0.0);
  EXPECT_EQ(a.full_value, 1.0);
  EXPECT_NEAR(a.efficiency_residual(), 0.0, 1e-15);
}

TEST(Shapley, SymmetricPlayersGetEqualValues) {
  const auto a = shapley_exact([](ModalityMask s) { return std::pow(std::popcount(s), 1.5); }, 3);
  EXPECT_DOUBLE_EQ(a.phi[0], a.phi[1]);
  EXPECT_DOUBLE_EQ(a.phi[1], a.phi[2]);
}

TEST(Shapley, DummyPlayerGetsZero) {
  const auto a = shapley_exact(
      [](ModalityMask s) { return 0.4 * (s & 1) + 1.1 * ((s >> 2) & 1) + 0.3 * ((s & 5) == 5); }, 3);
  EXPECT_EQ(a.phi[1], 0.0);
}

TEST(Shapley, EachCoalitionEvaluatedOnce) {
  std::vector<int> calls(16, 0);
  shapley_exact([&](ModalityMask s) {
    ++calls[s];
    return double(s);
  }, 4);
  for (int c : calls) EXPECT_EQ(c, 1);
}

TEST(Shapley, KnownValuesAreReused) {
  std::vector<double> known(4, std::numeric_limits<double>::quiet_NaN());
  known[3] = 1.0;
  int calls = 0;
  const auto a = shapley_exact([&](ModalityMask s) {
    ++calls;
    EXPECT_NE(s, 3u);
    return s == 1 ? 0.6 : s == 2 ? 0.2 : 0.0;
  }, 2, ShapleyVariant::standard, known);
  EXPECT_EQ(calls, 3);
  EXPECT_EQ(a.phi[0], 0.7);
}

TEST(Shapley, NonFiniteValueIsNumericError) {
  EXPECT_THROW(shapley_exact([](ModalityMask s) { return s == 2 ? NAN : 0.0; }, 2), NumericError);
  EXPECT_THROW(shapley_exact([](ModalityMask) { return 0.0; }, 0), UsageError);
  EXPECT_THROW(shapley_exact([](ModalityMask) { return 0.0; }, 9), UsageError);
}

TEST(Shapley, PaperVariantDropsEmptyCoalition) {
  const std::vector<double> v{0.0, 0.6, 0.2, 1.0};
  const auto a = shapley_exact(table_fn(v), 2, ShapleyVariant::paper);
  // Only S = {other} contributes, with weight 1!·0!/2! = 1/2.
  EXPECT_NEAR(a.phi[0], 0.5 * (1.0 - 0.2), 1e-15);
  EXPECT_NEAR(a.phi[1], 0.5 * (1.0 - 0.6), 1e-15);
  EXPECT_GT(std::abs(a.efficiency_residual()), 0.1);
  EXPECT_EQ(a.variant, ShapleyVariant::paper);
}

TEST(ShapleyProperty, MatchesPermutationOracle) {
  Rng rng(77);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t m = 2 + trial % 3;
    const auto table = random_game(rng, m);
    const auto a = shapley_exact(table_fn(table), m);
    const auto oracle = permutation_shapley(table_fn(table), m);
    for (std::size_t i = 0; i < m; ++i) EXPECT_NEAR(a.phi[i], oracle[i], 1e-12);
    EXPECT_NEAR(a.efficiency_residual(), 0.0, 1e-12);
  }
}

TEST(ShapleyProperty, Linearity) {
  Rng rng(78);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t m = 2 + trial % 3;
    const auto u = random_game(rng, m), w = random_game(rng, m);
    std::vector<double> mix(u.size());
    for (std::size_t s = 0; s < u.size(); ++s) mix[s] = 2.5 * u[s] - 0.5 * w[s];
    const auto pu = shapley_exact(table_fn(u), m).phi;
    const auto pw = shapley_exact(table_fn(w), m).phi;
    const auto pm = shapley_exact(table_fn(mix), m).phi;
    for (std::size_t i = 0; i < m; ++i) EXPECT_NEAR(pm[i], 2.5 * pu[i] - 0.5 * pw[i], 1e-12);
  }
}

TEST(NormalizeWeights, Examples) {
  const std::vector<double> a{0.7, 0.3};
  const auto na = normalize_weights(a);
  EXPECT_NEAR(na.nu[0], 0.7, 1e-6);
  EXPECT_NEAR(na.nu[1], 0.3, 1e-6);
  EXPECT_FALSE(na.degenerate);

  const std::vector<double> b{0.5, 0.5};
  EXPECT_EQ(normalize_weights(b).nu, (std::vector<double>{0.5, 0.5}));

  const std::vector<double> c{0.8, -0.2};
  const auto nc = normalize_weights(c);
  const double delta = 1e-6;
  const double small = delta / (0.8 + 2 * delta);
  EXPECT_NEAR(nc.nu[1], small, 1e-15);
  EXPECT_NEAR(nc.nu[0], 1.0 - small, 1e-15);
  EXPECT_GT(nc.nu[1], 0.0);
}

TEST(NormalizeWeights, DegenerateFallsBackToUniform) {
  const std::vector<double> zero{0.0, 0.0, 0.0};
  const auto z = normalize_weights(zero);
  EXPECT_TRUE(z.degenerate);
  for (double v : z.nu) EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);
  const std::vector<double> negative{-0.1, -0.4};
  EXPECT_TRUE(normalize_weights(negative).degenerate);
}

TEST(NormalizeWeights, SumsToOneAndPositive) {
  Rng rng(80);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> phi(1 + trial % 5);
    for (auto& p : phi) p = rng.normal() * std::pow(10.0, rng.normal());
    const auto w = normalize_weights(phi);
    double s = 0.0;
    for (double v : w.nu) {
      EXPECT_GT(v, 0.0);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Dominant, Examples) {
  EXPECT_EQ(dominant_modality(std::vector<double>{0.7, 0.3}), 0u);
  EXPECT_EQ(dominant_modality(std::vector<double>{0.5, 0.5}), 0u);
  EXPECT_EQ(dominant_modality(std::vector<double>{0.2, 0.3, 0.5}), 2u);
}

TEST(Dominant, InvariantToPositiveRescaling) {
  Rng rng(81);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> phi(3);
    for (auto& p : phi) p = rng.normal();
    const auto base = dominant_modality(normalize_weights(phi).nu);
    const double k = 1e3 * rng.uniform() + 1e-3;
    for (auto& p : phi) p *= k;
    EXPECT_EQ(dominant_modality(normalize_weights(phi).nu), base);
  }
}

TEST(AttributeBatch, DummyModalityGetsNoCredit) {
  ModelSpec spec = small_spec(FusionMode::late, {3, 2}, 3, {4}, Activation::relu, false);
  Rng rng(90);
  auto model = MultimodalModel::build(spec, rng);
  auto& p = model.params();
  const std::size_t head1 = *p.find("head1.out.w");
  p.set_tensor(head1, Tensor(p.info(head1).shape));
  const Batch b = random_batch(rng, spec, 12);
  // Labels the model already predicts, so the live modality lowers the loss.
  const auto y = argmax_rows(model.forward(b).logits);
  const auto a = attribute_batch(model, b, y);
  EXPECT_EQ(a.phi[1], 0.0);
  EXPECT_GT(a.phi[0], 0.0);
  EXPECT_EQ(a.dominant, 0u);
  EXPECT_EQ(a.target, ShapleyTarget::loss);
}

TEST(AttributeBatch, DuplicatedModalityIsSymmetric) {
  ModelSpec spec = small_spec(FusionMode::late, {3, 3}, 3, {4}, Activation::tanh);
  Rng rng(91);
  auto model = MultimodalModel::build(spec, rng);
  auto& p = model.params();
  for (const char* n : {"l0.w", "l0.b"})
    p.set_tensor(*p.find(std::string("enc1.") + n), p.tensor(*p.find(std::string("enc0.") + n)));
  p.set_tensor(*p.find("head1.out.w"), p.tensor(*p.find("head0.out.w")));
  const Tensor x = randn(rng, {10, 3});
  const Batch b{x, x};
  const auto y = random_labels(rng, 10, 3);
  const auto a = attribute_batch(model, b, y);
  EXPECT_EQ(a.phi[0], a.phi[1]);
  EXPECT_EQ(a.nu[0], 0.5);
  EXPECT_EQ(a.nu[1], 0.5);
}

TEST(AttributeBatch, ThreeModalitiesMatchPermutationOracle) {
  for (auto target : {ShapleyTarget::loss, ShapleyTarget::accuracy}) {
    ModelSpec spec = small_spec(FusionMode::early, {3, 2, 4}, 3, {4}, Activation::relu);
    Rng rng(92);
    const auto model = MultimodalModel::build(spec, rng);
    const Batch b = random_batch(rng, spec, 16);
    const auto y = random_labels(rng, 16, 3);
    const auto a = attribute_batch(model, b, y, AttributionOptions{target, ShapleyVariant::standard, {}});
    const auto oracle = permutation_shapley(
        [&](ModalityMask s) {
          const auto la = loss_and_accuracy(reference_logits(model, b, s), y);
          return target == ShapleyTarget::loss ? -la.loss : la.accuracy;
        },
        3);
    for (std::size_t m = 0; m < 3; ++m) EXPECT_NEAR(a.phi[m], oracle[m], 1e-12);
  }
}

TEST(AttributeBatch, NegatedLossSignConvention) {
  // A model whose first modality carries the label must get positive credit.
  ModelSpec spec = small_spec(FusionMode::late, {2, 2}, 2, {}, Activation::relu, false);
  Rng rng(93);
  auto model = MultimodalModel::build(spec, rng);
  auto& p = model.params();
  p.set_tensor(*p.find("head0.out.w"), Tensor::matrix({{3, -3}, {0, 0}}));
  p.set_tensor(*p.find("head1.out.w"), Tensor({2, 2}));
  const Batch b{Tensor::matrix({{1, 0}, {-1, 0}}), Tensor::matrix({{0.5, 1}, {2, 1}})};
  const std::vector<int> y{0, 1};
  const auto a = attribute_batch(model, b, y);
  EXPECT_GT(a.phi[0], 0.0);
  EXPECT_EQ(a.dominant, 0u);
  EXPECT_NEAR(a.baseline, -std::log(2.0), 1e-15);
}

TEST(AttributeBatch, DeterministicAndCountsForwards) {
  ModelSpec spec = small_spec(FusionMode::late, {3, 2, 2}, 3, {4}, Activation::relu);
  Rng rng(94);
  const auto model = MultimodalModel::build(spec, rng);
  const Batch b = random_batch(rng, spec, 8);
  const auto y = random_labels(rng, 8, 3);
  std::size_t count = 0;
  const auto a1 = attribute_batch(model, model.params(), b, y, {}, &count);
  EXPECT_EQ(count, 8u);
  AttributionOptions reuse;
  reuse.full_loss = -a1.full_value;
  count = 0;
  const auto a2 = attribute_batch(model, model.params(), b, y, reuse, &count);
  EXPECT_EQ(count, 7u);
  EXPECT_EQ(a1.phi, a2.phi);
  EXPECT_EQ(a1.coalition_values, a2.coalition_values);
}
