#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "grad_suite.hpp"
#include "oracles.hpp"
#include "spkemb/layers.hpp"

using namespace spkemb;

namespace {

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected an Error";
  return ErrorKind::kIo;
}

}  // namespace

TEST(Conv2d, MatchesNestedLoopOracle) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t k = trial % 2 ? 5 : 3;
    const std::size_t pad = k / 2, stride = 1 + trial % 2;
    Tensor64 x = oracle::random_tensor({2, 3, 9 + trial % 4, 7}, rng);
    Tensor64 w = oracle::random_tensor({4, 3, k, k}, rng);
    const Tensor64 got = conv2d(x, w, {stride, stride, pad, pad});
    const Tensor64 want = oracle::conv2d(x, w, stride, stride, pad, pad);
    ASSERT_EQ(got.shape(), want.shape());
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-10);
  }
}

TEST(Conv2d, FloatPathAgreesWithDouble) {
  std::mt19937_64 rng(8);
  Tensor64 x = oracle::random_tensor({1, 2, 8, 8}, rng);
  Tensor64 w = oracle::random_tensor({3, 2, 3, 3}, rng);
  const Tensor got = conv2d(x.cast<float>(), w.cast<float>(), {1, 1, 1, 1});
  const Tensor64 want = oracle::conv2d(x, w, 1, 1, 1, 1);
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-4);
}

TEST(Conv2d, StrideTwoHalvesWithCeiling) {
  for (std::size_t h : {64u, 63u, 7u, 1u})
    EXPECT_EQ(conv_output_extent(h, 5, 2, 2), (h + 1) / 2);
}

TEST(Conv2d, ChannelMismatchIsDimensionError) {
  EXPECT_EQ(kind_of([] { conv2d(Tensor({1, 2, 4, 4}), Tensor({1, 3, 3, 3}), {}); }),
            ErrorKind::kDimension);
}

TEST(ClippedRelu, ClampsToZeroTwenty) {
  const Tensor x({4}, std::vector<float>{-3.0f, 0.5f, 19.0f, 25.0f});
  const Tensor y = clipped_relu(x);
  EXPECT_EQ(y.values(), (std::vector<float>{0.0f, 0.5f, 19.0f, 20.0f}));
}

TEST(BatchNorm, TrainModeNormalizesEachUnit) {
  std::mt19937_64 rng(3);
  const Tensor64 x = oracle::random_tensor({4, 2, 6, 3}, rng, 5.0);
  const auto p = BatchNormParams<double>::identity(2, 3);
  const Tensor64 y = batchnorm_seq(x, p, Mode::kTrain);
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t w = 0; w < 3; ++w) {
      double m = 0, v = 0;
      for (std::size_t b = 0; b < 4; ++b)
        for (std::size_t t = 0; t < 6; ++t) m += y.at({b, c, t, w});
      m /= 24;
      for (std::size_t b = 0; b < 4; ++b)
        for (std::size_t t = 0; t < 6; ++t) v += std::pow(y.at({b, c, t, w}) - m, 2);
      v /= 24;
      EXPECT_NEAR(m, 0.0, 1e-12);
      EXPECT_NEAR(v, 1.0, 1e-3);
    }
}

TEST(BatchNorm, RunningMomentsDecay) {
  const Tensor64 x({2, 1, 1, 1}, std::vector<double>{1.0, 3.0});
  auto p = BatchNormParams<double>::identity(1, 1);
  auto running = p;
  batchnorm_seq<double>(x, p, Mode::kTrain, nullptr, &running);
  EXPECT_NEAR(running.running_mean[0], 0.99 * 0.0 + 0.01 * 2.0, 1e-12);
  EXPECT_NEAR(running.running_var[0], 0.99 * 1.0 + 0.01 * 1.0, 1e-12);
}

TEST(BatchNorm, InferModeUsesRunningMoments) {
  auto p = BatchNormParams<double>::identity(1, 1);
  p.running_mean[0] = 2.0;
  p.running_var[0] = 4.0;
  const Tensor64 y = batchnorm_seq(Tensor64({1, 1, 1, 1}, 6.0), p, Mode::kInfer);
  EXPECT_NEAR(y[0], 4.0 / std::sqrt(4.0 + 1e-5), 1e-12);
}

TEST(ResBlock, ChannelMismatchIsConfigurationError) {
  ResBlockParams<float> p;
  p.conv1 = Tensor({3, 3, 3, 3});
  p.conv2 = Tensor({3, 3, 3, 3});
  p.bn1 = p.bn2 = BatchNormParams<float>::identity(3, 4);
  EXPECT_EQ(kind_of([&] { resblock(Tensor({1, 2, 4, 4}), p, Mode::kTrain); }),
            ErrorKind::kConfiguration);
}

TEST(ResBlock, ZeroWeightsGiveIdentityPlusBias) {
  ResBlockParams<double> p;
  p.conv1 = Tensor64({1, 1, 3, 3});
  p.conv2 = Tensor64({1, 1, 3, 3});
  p.bn1 = p.bn2 = BatchNormParams<double>::identity(1, 2);
  std::mt19937_64 rng(1);
  const Tensor64 x = oracle::random_tensor({2, 1, 3, 2}, rng);
  const Tensor64 y = resblock(x, p, Mode::kTrain);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y[i], x[i], 1e-12);
}

TEST(Gru, ZeroWeightsKeepStateAtHalfBlend) {
  // z = r = 0.5 and the candidate is tanh(0) = 0, so h_t = 0.5 h_{t-1}.
  GruParams<double> p{Tensor64({1, 6}), Tensor64({2, 6}), Tensor64({6})};
  const Tensor64 h0({2}, std::vector<double>{1.0, -2.0});
  const Tensor64 y = gru_layer(Tensor64({3, 1}), p, h0);
  ASSERT_EQ(y.shape(), (Shape{3, 2}));
  EXPECT_NEAR(y.at({2, 0}), 0.125, 1e-12);
  EXPECT_NEAR(y.at({2, 1}), -0.25, 1e-12);
}

TEST(TemporalAverage, EmptySequenceRaises) {
  EXPECT_EQ(kind_of([] { temporal_average(Tensor({1, 0, 4})); }), ErrorKind::kEmptyUtterance);
}

TEST(L2Normalize, UnitRowsAndDegenerateInput) {
  const Tensor64 y = l2_normalize(Tensor64({2}, std::vector<double>{3.0, 4.0}));
  EXPECT_NEAR(y[0], 0.6, 1e-15);
  EXPECT_NEAR(y[1], 0.8, 1e-15);
  EXPECT_EQ(kind_of([] { l2_normalize(Tensor64({3}, 0.0)); }), ErrorKind::kDegenerateEmbedding);
}

TEST(Cosine, RejectsNonUnitInputs) {
  const std::vector<double> a{1.0, 0.0}, b{0.0, 2.0};
  EXPECT_EQ(kind_of([&] { cosine_similarity<double>(a, b); }), ErrorKind::kContractViolation);
  const std::vector<double> c{0.6, 0.8};
  EXPECT_NEAR(cosine_similarity<double>(a, c), 0.6, 1e-15);
}

TEST(SoftmaxXent, UniformLogitsGiveLogK) {
  for (std::size_t K : {2u, 10u, 40u}) {
    const std::vector<double> z(K, 0.3);
    EXPECT_NEAR(softmax_xent<double>(z, 1).loss, std::log(double(K)), 1e-12);
  }
  EXPECT_EQ(kind_of([] {
              const std::vector<double> z(3, 0.0);
              softmax_xent<double>(z, 3);
            }),
            ErrorKind::kOutOfRange);
}

TEST(SoftmaxXent, StableForHugeLogits) {
  const std::vector<float> z{1000.0f, 0.0f};
  const auto r = softmax_xent<float>(z, 0);
  EXPECT_NEAR(r.loss, 0.0, 1e-6);
  EXPECT_TRUE(std::isfinite(r.d_logits[1]));
}

TEST(TripletLoss, HingeArithmetic) {
  EXPECT_NEAR(triplet_loss(0.5, 0.45, 0.1).loss, 0.05, 1e-12);
  EXPECT_EQ(triplet_loss(0.5, 0.1, 0.1).loss, 0.0);
  EXPECT_EQ(triplet_loss(0.5, 0.1, 0.1).d_sap, 0.0);
  const auto t = triplet_loss(0.2, 0.9, 0.1);
  EXPECT_EQ(t.d_sap, -1.0);
  EXPECT_EQ(t.d_san, 1.0);
  // Collapsed embeddings with no margin: zero loss.
  EXPECT_EQ(triplet_loss(1.0, 1.0, 0.0).loss, 0.0);
}

using GradCase = gradsuite::LayerReport (*)(std::uint64_t, std::size_t);

class LayerGradient : public ::testing::TestWithParam<GradCase> {};

TEST_P(LayerGradient, CentralDifferencesAgree) {
  const gradsuite::LayerReport r = GetParam()(101, 10);
  EXPECT_EQ(r.shapes, 10u);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.layer << " worst at " << r.worst;
}

INSTANTIATE_TEST_SUITE_P(
    AllLayers, LayerGradient,
    ::testing::Values(&gradsuite::conv2d, &gradsuite::clipped_relu, &gradsuite::batchnorm_seq,
                      &gradsuite::resblock, &gradsuite::gru_layer, &gradsuite::affine,
                      &gradsuite::temporal_average, &gradsuite::l2_normalize,
                      &gradsuite::softmax_xent, &gradsuite::triplet_path));
