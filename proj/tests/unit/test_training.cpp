#include <fstream>
#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "spkemb/optim.hpp"
#include "spkemb/training.hpp"

using namespace spkemb;

namespace {

// Gaussian frames around a per-speaker spectral profile.
std::vector<FeatureMatrix> toy_features(std::size_t speakers, std::size_t utts, std::size_t frames,
                                        std::uint64_t seed, double spread = 0.5) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  std::vector<FeatureMatrix> out;
  for (std::size_t s = 0; s < speakers; ++s) {
    std::vector<double> profile(kFeatureDim);
    for (double& p : profile) p = g(rng);
    for (std::size_t u = 0; u < utts; ++u) {
      FeatureMatrix f(frames, kFeatureDim);
      f.speaker_id = "spk" + std::to_string(s);
      f.utt_id = f.speaker_id + "-u" + std::to_string(u);
      for (std::size_t t = 0; t < frames; ++t)
        for (std::size_t k = 0; k < kFeatureDim; ++k)
          f.at(t, k) = float(profile[k] + spread * g(rng));
      out.push_back(std::move(f));
    }
  }
  return out;
}

bool same_params(const ModelParams& a, const ModelParams& b) {
  const auto ta = a.named_tensors();
  const auto tb = b.named_tensors();
  if (ta.size() != tb.size()) return false;
  for (std::size_t i = 0; i < ta.size(); ++i)
    if (!(*ta[i].tensor == *tb[i].tensor)) return false;
  return true;
}

}  // namespace

TEST(Pairs, TwoByTwo) {
  const TrainingSet d = TrainingSet::from_features(toy_features(2, 2, 20, 1));
  const PairList p = make_pairs(d, 16, 3, 1);
  ASSERT_EQ(p.pairs.size(), 2u);
  EXPECT_EQ(p.skipped_speakers, 0u);
  for (const APPair& ap : p.pairs) {
    EXPECT_NE(ap.anchor.utt, ap.positive.utt);
    EXPECT_EQ(d.labels[ap.anchor.utt], ap.speaker);
    EXPECT_EQ(d.labels[ap.positive.utt], ap.speaker);
  }
}

TEST(Pairs, DeterministicAndSeedSensitive) {
  const TrainingSet d = TrainingSet::from_features(toy_features(6, 5, 40, 2));
  const PairList a = make_pairs(d, 16, 9, 2), b = make_pairs(d, 16, 9, 2),
                 c = make_pairs(d, 16, 9, 3);
  ASSERT_EQ(a.pairs.size(), b.pairs.size());
  bool differs = false;
  for (std::size_t i = 0; i < a.pairs.size(); ++i) {
    EXPECT_EQ(a.pairs[i].anchor.utt, b.pairs[i].anchor.utt);
    EXPECT_EQ(a.pairs[i].anchor.offset, b.pairs[i].anchor.offset);
    EXPECT_EQ(a.pairs[i].positive.utt, b.pairs[i].positive.utt);
    differs |= a.pairs[i].anchor.utt != c.pairs[i].anchor.utt;
  }
  EXPECT_TRUE(differs);
  // Five utterances per speaker: two pairs plus one for the odd one out.
  EXPECT_EQ(a.pairs.size(), 6u * 3u);
}

TEST(Pairs, SingleUtteranceSpeakerSkipped) {
  auto feats = toy_features(3, 2, 20, 4);
  feats.pop_back();
  const TrainingSet d = TrainingSet::from_features(feats);
  const PairList p = make_pairs(d, 16, 0, 1);
  EXPECT_EQ(p.skipped_speakers, 1u);
  EXPECT_EQ(p.pairs.size(), 2u);
}

TEST(Pretrain, InitialLossNearLogK) {
  const std::size_t K = 10;
  const TrainingSet d = TrainingSet::from_features(toy_features(K, 4, 32, 5));
  ModelParams m = build(ArchSpec::toy_rescnn(), 1);
  attach_softmax_head(m, K, 2);
  PretrainConfig cfg;
  cfg.epochs = 1;
  cfg.minibatch = 40;
  cfg.chunk_frames = 32;
  double first = -1;
  pretrain_softmax(m, d, cfg, nullptr, [&](std::size_t step, double loss) {
    if (step == 0) first = loss;
  });
  EXPECT_NEAR(first, std::log(double(K)), 0.5);
}

TEST(Pretrain, OverfitsTwoSpeakers) {
  // 2 speakers x 8 chunks of 16 frames; one minibatch per step.
  const TrainingSet d = TrainingSet::from_features(toy_features(2, 8, 16, 6, 2.0));
  ModelParams m = build(ArchSpec::toy_rescnn(), 3);
  attach_softmax_head(m, 2, 4);
  PretrainConfig cfg;
  cfg.epochs = 200;
  cfg.minibatch = 16;
  cfg.chunk_frames = 16;
  cfg.optim = {0.01, 0.01, 0.9};
  std::size_t hit = 0;
  const auto r = pretrain_softmax(m, d, cfg, nullptr, [&](std::size_t step, double loss) {
    if (hit == 0 && loss < 0.1) hit = step + 1;
  });
  EXPECT_GT(hit, 0u);
  EXPECT_LE(hit, 200u);
  EXPECT_EQ(r.steps, 200u);
  EXPECT_DOUBLE_EQ(r.curve.back().train_acc, 100.0);
}

TEST(Pretrain, ReproducibleCurve) {
  const TrainingSet d = TrainingSet::from_features(toy_features(4, 4, 32, 7));
  auto run = [&] {
    ModelParams m = build(ArchSpec::toy_rescnn(), 11);
    attach_softmax_head(m, 4, 12);
    PretrainConfig cfg;
    cfg.epochs = 3;
    cfg.minibatch = 8;
    cfg.chunk_frames = 16;
    cfg.seed = 5;
    std::vector<double> losses;
    pretrain_softmax(m, d, cfg, nullptr, [&](std::size_t, double l) { losses.push_back(l); });
    return std::pair{losses, m};
  };
  const auto [l1, m1] = run();
  const auto [l2, m2] = run();
  EXPECT_EQ(l1, l2);
  EXPECT_TRUE(same_params(m1, m2));
}

TEST(Pretrain, ConfigurationErrors) {
  const TrainingSet d = TrainingSet::from_features(toy_features(3, 2, 32, 8));
  ModelParams m = build(ArchSpec::toy_rescnn(), 1);
  EXPECT_THROW(pretrain_softmax(m, d, {}), Error);
  attach_softmax_head(m, 4, 1);
  EXPECT_THROW(pretrain_softmax(m, d, {}), Error);
}

TEST(Pretrain, NanLossRaisesDivergence) {
  auto feats = toy_features(2, 2, 16, 9);
  feats[0].data[5] = std::nanf("");
  const TrainingSet d = TrainingSet::from_features(feats);
  ModelParams m = build(ArchSpec::toy_rescnn(), 1);
  attach_softmax_head(m, 2, 1);
  const ModelParams before = m;
  PretrainConfig cfg;
  cfg.epochs = 1;
  cfg.minibatch = 4;
  cfg.chunk_frames = 16;
  try {
    pretrain_softmax(m, d, cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kDivergence);
  }
  EXPECT_TRUE(same_params(m, before));
}

TEST(Finetune, CollapsedEmbeddingsGiveZeroLossAndChanceEer) {
  Tensor e({8, 4}, 0.0f);
  for (std::size_t r = 0; r < 8; ++r) e[r * 4] = 1.0f;
  const auto tb = mine_negatives(e, {0, 1, 2, 3}, {4, 1, 0, 0, 0}, MinerMode::kHard, 1, 0.0);
  EXPECT_EQ(tb.loss(0.0), 0.0);
  std::vector<double> scores(20, 1.0);
  std::vector<int> labels(20, 0);
  for (std::size_t i = 0; i < 20; i += 4) labels[i] = 1;
  EXPECT_DOUBLE_EQ(compute_eer(scores, labels).eer, 0.5);
}

TEST(Finetune, PartitionsDoNotChangeTrajectoryAtFullScan) {
  const TrainingSet d = TrainingSet::from_features(toy_features(8, 4, 24, 10));
  auto run = [&](std::size_t parts) {
    ModelParams m = build(ArchSpec::toy_rescnn(), 21);
    FinetuneConfig cfg;
    cfg.epochs = 2;
    cfg.batch_pairs = 8;
    cfg.partitions = parts;
    cfg.chunk_frames = 16;
    cfg.seed = 4;
    std::vector<double> losses;
    finetune_triplet(m, d, cfg, nullptr, [&](std::size_t, double l) { losses.push_back(l); });
    return std::pair{losses, m};
  };
  const auto [l1, m1] = run(1);
  const auto [l4, m4] = run(4);
  EXPECT_EQ(l1, l4);
  EXPECT_TRUE(same_params(m1, m4));
}

TEST(Finetune, SeparationGrows) {
  const TrainingSet d = TrainingSet::from_features(toy_features(10, 8, 48, 11, 1.0));
  ModelParams m = build(ArchSpec::toy_rescnn(), 31);
  FinetuneConfig cfg;
  cfg.epochs = 6;
  cfg.batch_pairs = 20;
  cfg.chunk_frames = 32;
  cfg.optim = {0.05, 0.005, 0.9};
  const auto r = finetune_triplet(m, d, cfg);
  const auto& first = r.curve.front();
  const auto& last = r.curve.back();
  EXPECT_GT(last.mean_sap - last.mean_san, first.mean_sap - first.mean_san);
}

TEST(Finetune, ConfigurationErrors) {
  const TrainingSet d = TrainingSet::from_features(toy_features(4, 4, 24, 12));
  ModelParams m = build(ArchSpec::toy_rescnn(), 1);
  FinetuneConfig cfg;
  cfg.batch_pairs = 6;
  cfg.partitions = 4;
  EXPECT_THROW(finetune_triplet(m, d, cfg), Error);
  cfg.partitions = 2;
  cfg.scan_k = 3;
  EXPECT_THROW(finetune_triplet(m, d, cfg), Error);
  attach_softmax_head(m, 4, 1);
  EXPECT_THROW(finetune_triplet(m, d, FinetuneConfig{}), Error);
}

TEST(Metrics, CsvHeaders) {
  TrainResult r;
  EpochMetrics e;
  e.epoch = 1;
  e.loss = 0.5;
  r.curve.push_back(e);
  const auto p = std::filesystem::temp_directory_path() / "spkemb_ft.csv";
  write_finetune_csv(r, p);
  std::ifstream in(p);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "epoch,loss,mean_sap,mean_san,prob_hard,dev_eer,dev_acc");
  std::filesystem::remove(p);
}
