#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "msam/errors.hpp"
#include "msam/model.hpp"
#include "support.hpp"

using namespace msam;
using namespace msam::testing;

TEST(Model, LateFusionParameterCount) {
  // Two 4-dim modalities, one hidden layer of 5, C = 3:
  //   encoders 2·(4·5 + 5), heads 2·(5·3), shared bias 3.
  ModelSpec spec = small_spec(FusionMode::late, {4, 4}, 3, {5}, Activation::relu);
  Rng rng(1);
  const auto model = MultimodalModel::build(spec, rng);
  EXPECT_EQ(model.params().size(), 2 * (4 * 5 + 5) + 2 * (5 * 3) + 3u);
}

TEST(Model, EarlyFusionParameterCount) {
  // k = 3 pieces of width 5 over features 5 + 5, output 5·3 + 3.
  ModelSpec spec = small_spec(FusionMode::early, {4, 4}, 3, {5}, Activation::relu);
  Rng rng(1);
  const auto model = MultimodalModel::build(spec, rng);
  EXPECT_EQ(model.params().size(), 2 * (4 * 5 + 5) + 3 * (10 * 5 + 5) + 5 * 3 + 3u);
}

TEST(Model, SameSeedSameParameters) {
  ModelSpec spec = small_spec(FusionMode::early, {3, 2}, 4, {6}, Activation::tanh);
  Rng a(7), b(7);
  EXPECT_EQ(MultimodalModel::build(spec, a).params(), MultimodalModel::build(spec, b).params());
}

TEST(Model, SpecValidation) {
  ModelSpec spec = small_spec(FusionMode::early, {3, 2}, 4, {6}, Activation::tanh);
  spec.fusion.maxout_pieces = 1;
  Rng rng(1);
  EXPECT_THROW(MultimodalModel::build(spec, rng), SpecError);
  spec = small_spec(FusionMode::late, {3, 0}, 4, {6}, Activation::tanh);
  EXPECT_THROW(MultimodalModel::build(spec, rng), SpecError);
  spec = small_spec(FusionMode::late, {3}, 1, {6}, Activation::tanh);
  EXPECT_THROW(MultimodalModel::build(spec, rng), SpecError);
  spec = small_spec(FusionMode::late, {3}, 2, {0}, Activation::tanh);
  EXPECT_THROW(MultimodalModel::build(spec, rng), SpecError);
  spec = small_spec(FusionMode::late, std::vector<std::size_t>(9, 2), 2, {}, Activation::tanh);
  EXPECT_THROW(MultimodalModel::build(spec, rng), SpecError);
}

TEST(Model, InitScaleFollowsFanIn) {
  ModelSpec spec = small_spec(FusionMode::late, {400}, 2, {300}, Activation::relu);
  Rng rng(2);
  const auto model = MultimodalModel::build(spec, rng);
  const Tensor w = model.params().tensor(*model.params().find("enc0.l0.w"));
  double sq = 0.0;
  for (double v : w.data()) sq += v * v;
  EXPECT_NEAR(sq / double(w.size()), 1.0 / 400.0, 0.05 / 400.0);
  const Tensor b = model.params().tensor(*model.params().find("enc0.l0.b"));
  EXPECT_EQ(b.squared_norm(), 0.0);
}

TEST(Model, EveryParameterHasOneRole) {
  for (auto mode : {FusionMode::late, FusionMode::early}) {
    ModelSpec spec = small_spec(mode, {3, 2, 4}, 3, {4}, Activation::relu);
    spec.fusion.head_width = mode == FusionMode::late ? 3 : 0;
    Rng rng(3);
    const auto model = MultimodalModel::build(spec, rng);
    std::size_t covered = 0;
    for (const auto& info : model.params().infos()) {
      covered += shape_size(info.shape);
      if (info.role == ParamRole::encoder) {
        EXPECT_GE(info.modality, 0) << info.name;
      } else if (info.role == ParamRole::fusion) {
        EXPECT_EQ(mode, FusionMode::early) << info.name;
        EXPECT_GE(info.piece, 0);
        EXPECT_GE(info.modality, 0);
      } else {
        EXPECT_EQ(info.modality, -1) << info.name;
      }
    }
    EXPECT_EQ(covered, model.params().size());
  }
}

TEST(Model, FullMaskIsBitwiseUnmasked) {
  for (auto mode : {FusionMode::late, FusionMode::early}) {
    ModelSpec spec = small_spec(mode, {3, 2}, 3, {4}, Activation::relu);
    Rng rng(4);
    const auto model = MultimodalModel::build(spec, rng);
    const Batch b = random_batch(rng, spec, 6);
    EXPECT_EQ(model.forward(b).logits, model.forward_masked(b, full_mask(2)).logits);
  }
}

TEST(Model, LogitsMatchTapeFreeForward) {
  for (auto mode : {FusionMode::late, FusionMode::early}) {
    for (bool bias : {true, false}) {
      ModelSpec spec = small_spec(mode, {3, 5}, 4, {6, 4}, Activation::tanh, bias);
      spec.fusion.head_width = mode == FusionMode::late ? 3 : 0;
      Rng rng(5);
      auto model = MultimodalModel::build(spec, rng);
      for (auto& v : model.params().values()) v += 0.1 * rng.normal();
      const Batch b = random_batch(rng, spec, 5);
      for (ModalityMask mask = 0; mask < 4; ++mask) {
        const Tensor got = model.forward_masked(b, mask).logits;
        const Tensor want = reference_logits(model, b, mask);
        for (std::size_t i = 0; i < got.size(); ++i) ASSERT_NEAR(got[i], want[i], 1e-12);
      }
    }
  }
}

TEST(Model, EmptyMaskBiasFreeIsConstantAcrossSamples) {
  for (auto mode : {FusionMode::late, FusionMode::early}) {
    ModelSpec spec = small_spec(mode, {3, 2}, 3, {4}, Activation::relu, false);
    Rng rng(6);
    const auto model = MultimodalModel::build(spec, rng);
    const Batch b = random_batch(rng, spec, 6);
    const Tensor logits = model.forward_masked(b, 0).logits;
    for (std::size_t i = 1; i < logits.rows(); ++i)
      for (std::size_t j = 0; j < logits.cols(); ++j) EXPECT_EQ(logits.at(i, j), logits.at(0, j));
  }
}

TEST(Model, LateSingletonMaskIsOneBranch) {
  ModelSpec spec = small_spec(FusionMode::late, {3, 2}, 3, {4}, Activation::tanh);
  Rng rng(7);
  auto model = MultimodalModel::build(spec, rng);
  for (auto& v : model.params().values()) v += 0.1 * rng.normal();
  const Batch b = random_batch(rng, spec, 4);
  // Branch 1 by hand: tanh(x1·W + b), then head, plus the other branch at
  // zero input and the shared bias.
  const auto& p = model.params();
  auto get = [&](const char* n) { return p.tensor(*p.find(n)); };
  const Tensor b0 = get("enc0.l0.b"), b1 = get("enc1.l0.b"), ob = get("out.b");
  const Tensor h0 = activate(dense(b[0], get("enc0.l0.w"), &b0), Activation::tanh);
  const Tensor h1 = activate(dense(Tensor(b[1].shape()), get("enc1.l0.w"), &b1), Activation::tanh);
  Tensor want = add(dense(h0, get("head0.out.w"), nullptr), dense(h1, get("head1.out.w"), nullptr));
  want = add_row(want, ob);
  const Tensor got = model.forward_masked(b, 0b01).logits;
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-13);
}

TEST(Model, LateMaskedModalityHasZeroEncoderGradientWithoutBias) {
  ModelSpec spec = small_spec(FusionMode::late, {3, 2}, 3, {4}, Activation::relu, false);
  Rng rng(8);
  const auto model = MultimodalModel::build(spec, rng);
  const Batch b = random_batch(rng, spec, 6);
  const auto y = random_labels(rng, 6, 3);
  auto rec = forward(model.loss_fn(b, y, 0b01), model.params());
  const auto g = backward(rec);
  for (const auto& info : model.params().infos()) {
    if (info.modality != 1) continue;
    if (info.name.rfind("enc", 0) != 0) continue;
    for (std::size_t i = 0; i < shape_size(info.shape); ++i) EXPECT_EQ(g[info.offset + i], 0.0) << info.name;
  }
}

TEST(Model, LateMaskedModalityDoesNotAffectLogitsWithBias) {
  ModelSpec spec = small_spec(FusionMode::late, {3, 2}, 3, {4}, Activation::relu, true);
  Rng rng(9);
  auto model = MultimodalModel::build(spec, rng);
  for (auto& v : model.params().values()) v += 0.2 * rng.normal();
  Batch b = random_batch(rng, spec, 6);
  const Tensor before = model.forward_masked(b, 0b01).logits;
  b[1] = randn(rng, b[1].shape());
  EXPECT_EQ(model.forward_masked(b, 0b01).logits, before);
}

TEST(Model, MaxoutInvariantToPiecePermutation) {
  ModelSpec spec = small_spec(FusionMode::early, {3, 2}, 3, {4}, Activation::relu);
  Rng rng(10);
  auto model = MultimodalModel::build(spec, rng);
  for (auto& v : model.params().values()) v += 0.1 * rng.normal();
  const Batch b = random_batch(rng, spec, 5);
  const Tensor before = model.forward(b).logits;
  auto& p = model.params();
  // Rotate pieces k -> k+1 for every per-piece tensor.
  const std::size_t k = spec.fusion.maxout_pieces;
  auto rotate = [&](auto name_of) {
    std::vector<Tensor> saved;
    for (std::size_t i = 0; i < k; ++i) saved.push_back(p.tensor(*p.find(name_of(i))));
    for (std::size_t i = 0; i < k; ++i) p.set_tensor(*p.find(name_of((i + 1) % k)), saved[i]);
  };
  for (int m = 0; m < 2; ++m)
    rotate([m](std::size_t i) { return "fuse.m" + std::to_string(m) + ".k" + std::to_string(i) + ".w"; });
  rotate([](std::size_t i) { return "fuse.k" + std::to_string(i) + ".b"; });
  EXPECT_EQ(model.forward(b).logits, before);
}

TEST(Model, BatchValidation) {
  ModelSpec spec = small_spec(FusionMode::late, {3, 2}, 3, {4}, Activation::relu);
  Rng rng(11);
  const auto model = MultimodalModel::build(spec, rng);
  Batch empty{Tensor(), Tensor()};
  EXPECT_THROW(model.forward(empty), UsageError);
  Batch one{randn(rng, {2, 3})};
  EXPECT_THROW(model.forward(one), UsageError);
  Batch wrong_dim{randn(rng, {2, 3}), randn(rng, {2, 3})};
  EXPECT_THROW(model.forward(wrong_dim), DimensionError);
  Batch wrong_rows{randn(rng, {2, 3}), randn(rng, {3, 2})};
  EXPECT_THROW(model.forward(wrong_rows), DimensionError);
}

TEST(Model, TraceShapes) {
  ModelSpec spec = small_spec(FusionMode::early, {3, 2}, 4, {6}, Activation::relu);
  Rng rng(12);
  const auto model = MultimodalModel::build(spec, rng);
  const auto trace = model.forward(random_batch(rng, spec, 7));
  ASSERT_EQ(trace.features.size(), 2u);
  EXPECT_EQ(trace.features[0].shape(), (Shape{7, 6}));
  EXPECT_EQ(trace.fused.shape(), (Shape{7, spec.fusion.fused_width}));
  EXPECT_EQ(trace.logits.shape(), (Shape{7, 4}));
}

TEST(LossAccuracy, UniformLogits) {
  const auto la = loss_and_accuracy(Tensor({3, 4}), std::vector<int>{0, 1, 2});
  EXPECT_NEAR(la.loss, std::log(4.0), 1e-15);
  EXPECT_NEAR(la.accuracy, 1.0 / 3.0, 1e-15);  // ties go to class 0
}

TEST(LossAccuracy, CorrectWithMargin) {
  const auto la = loss_and_accuracy(Tensor::matrix({{5, 0, 0}, {0, 0, 5}}), std::vector<int>{0, 2});
  EXPECT_EQ(la.accuracy, 1.0);
}

TEST(LossAccuracy, RandomLogitsMatchReference) {
  Rng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor logits = scale(randn(rng, {9, 5}), 3.0);
    const auto y = random_labels(rng, 9, 5);
    EXPECT_NEAR(loss_and_accuracy(logits, y).loss, reference_cross_entropy(logits, y), 1e-12);
  }
}

TEST(LossAccuracy, LabelOutOfRange) {
  EXPECT_THROW(loss_and_accuracy(Tensor({2, 3}), std::vector<int>{0, 3}), UsageError);
  EXPECT_THROW(loss_and_accuracy(Tensor({2, 3}), std::vector<int>{-1, 0}), UsageError);
  EXPECT_THROW(loss_and_accuracy(Tensor({2, 3}), std::vector<int>{0}), DimensionError);
}

TEST(LossAccuracy, ArgmaxTieBreak) {
  EXPECT_EQ(argmax_rows(Tensor::matrix({{1, 3, 3}, {2, 2, 2}})), (std::vector<int>{1, 0}));
}
