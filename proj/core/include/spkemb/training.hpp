#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "spkemb/eval.hpp"
#include "spkemb/model.hpp"

namespace spkemb {

// ---- data ------------------------------------------------------------------

/// Featurized utterances with dense speaker labels (sorted speaker ids).
struct TrainingSet {
  std::vector<FeatureMatrix> utts;
  std::vector<std::string> speakers;
  std::vector<std::size_t> labels;  // per utterance

  static TrainingSet from_features(std::vector<FeatureMatrix> feats);
  std::size_t num_classes() const { return speakers.size(); }
};

struct ChunkRef {
  std::size_t utt = 0;
  std::size_t offset = 0;  // cyclic crop start
};

struct APPair {
  ChunkRef anchor;
  ChunkRef positive;
  std::size_t speaker = 0;
};

struct PairList {
  std::vector<APPair> pairs;
  std::size_t skipped_speakers = 0;  // speakers with fewer than 2 utterances
};

/// Per speaker, shuffles its utterances and pairs them off so each is used
/// once per epoch; an odd one out pairs with a random other utterance of the
/// same speaker. Crop offsets are uniform. Pairs are shuffled globally.
/// Deterministic for (seed, epoch).
PairList make_pairs(const TrainingSet& data, std::size_t chunk_frames, std::uint64_t seed,
                    std::size_t epoch);

// ---- mining ----------------------------------------------------------------

enum class MinerMode { kHard, kSemiHard, kRandom };

MinerMode miner_mode_from_name(const std::string& name);
std::string to_string(MinerMode mode);

/// N pairs split into M partitions of N/M consecutive pairs. In the batch's
/// embedding matrix pair i owns row 2i (anchor) and row 2i+1 (positive).
struct BatchPlan {
  std::size_t num_pairs = 0;
  std::size_t partitions = 1;
  std::uint64_t seed = 0;
  std::size_t epoch = 0;
  std::size_t batch = 0;

  std::size_t pairs_per_partition() const { return num_pairs / partitions; }
  std::size_t partition_of_pair(std::size_t pair) const { return pair / pairs_per_partition(); }
};

void validate(const BatchPlan& plan);

struct Triplet {
  std::size_t anchor = 0;  // embedding rows
  std::size_t positive = 0;
  std::size_t negative = 0;
  double s_ap = 0.0;
  double s_an = 0.0;
  bool violating = false;  // s_an > s_ap - alpha
};

struct TripletBatch {
  std::vector<Triplet> triplets;
  double prob_hard = 0.0;  // anchors with at least one violating candidate

  double loss(double alpha) const;
};

/// Candidates for the anchor of pair i are all embeddings of other-speaker
/// pairs in scan_k partitions, starting at pair i's own and wrapping around.
/// Hard: the highest-scoring candidate (a violator when one exists). Semi-hard:
/// the highest candidate with s_ap > s_an > s_ap - alpha, else the hard
/// choice. Random: uniform over candidates. Ties go to the lowest row.
/// No candidate raises kMinerStarvation.
TripletBatch mine_negatives(const Tensor& embeddings, const std::vector<std::size_t>& speakers,
                            const BatchPlan& plan, MinerMode mode, std::size_t scan_k,
                            double alpha);

struct MinerStats {
  std::size_t partitions_scanned = 0;
  double prob_hard = 0.0;
  double relative_time_cost = 1.0;  // mining wall time relative to scan_k = 1
};

struct MinerBatch {
  Tensor embeddings;  // [2N, D]
  std::vector<std::size_t> speakers;
  BatchPlan plan;
};

/// prob_hard averaged over batches for every scan_k in the grid.
std::vector<MinerStats> miner_stats(const std::vector<MinerBatch>& batches,
                                    const std::vector<std::size_t>& scan_grid, double alpha,
                                    std::size_t timing_repeats = 5);

/// Embeds `num_batches` batches of AP pairs with `model` for miner_stats.
std::vector<MinerBatch> sample_miner_batches(const ModelParams& model, const TrainingSet& data,
                                             std::size_t num_batches, std::size_t batch_pairs,
                                             std::size_t partitions, std::size_t chunk_frames,
                                             std::uint64_t seed);

std::string miner_stats_table(const std::vector<MinerStats>& stats);

// ---- training --------------------------------------------------------------

/// Utterances and trials used for early stopping and per-epoch dev metrics.
struct DevSet {
  std::vector<FeatureMatrix> utts;
  TrialSet trials;
};

struct OptimConfig {
  double lr_start = 0.05;
  double lr_end = 0.005;
  double momentum = 0.99;
};

struct PretrainConfig {
  std::size_t epochs = 10;
  std::size_t minibatch = 64;
  std::size_t chunk_frames = 64;
  OptimConfig optim;
  std::size_t patience = 3;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  std::filesystem::path checkpoint_dir;  // per-epoch checkpoints when set
};

struct FinetuneConfig {
  std::size_t epochs = 15;
  std::size_t batch_pairs = 64;  // 2 x 64 = 128 chunks per batch
  std::size_t partitions = 1;
  std::size_t scan_k = 0;  // 0 scans every partition
  double alpha = 0.1;
  MinerMode miner = MinerMode::kHard;
  std::size_t chunk_frames = 64;
  OptimConfig optim;
  std::size_t patience = 3;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  std::filesystem::path checkpoint_dir;
};

struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based
  double loss = 0.0;
  double train_acc = 0.0;  // pretraining only
  double mean_sap = 0.0;   // fine-tuning only
  double mean_san = 0.0;
  double prob_hard = 0.0;
  double dev_eer = 0.0;  // percent
  double dev_acc = 0.0;  // percent
};

struct TrainResult {
  std::vector<EpochMetrics> curve;
  std::size_t best_epoch = 0;
  bool stopped_early = false;
  std::size_t steps = 0;
};

/// Called after every optimizer step with (step, loss); for tests.
using StepHook = std::function<void(std::size_t, double)>;

/// Cross-entropy over the attached softmax head on sequential chunks, one
/// momentum step per minibatch with a per-step linear LR decay. With a dev
/// set, stops after `patience` epochs without dev EER improvement and
/// restores the best parameters. A non-finite loss restores the last good
/// epoch and raises kDivergence.
TrainResult pretrain_softmax(ModelParams& model, const TrainingSet& data,
                             const PretrainConfig& cfg, const DevSet* dev = nullptr,
                             const StepHook& hook = {});

/// Triplet loss on mined negatives; one synchronous step per batch of
/// batch_pairs AP pairs; pairs left over after the last full batch are
/// dropped for the epoch. The head must be detached.
TrainResult finetune_triplet(ModelParams& model, const TrainingSet& data,
                             const FinetuneConfig& cfg, const DevSet* dev = nullptr,
                             const StepHook& hook = {});

/// Infer-mode embeddings of full utterances.
std::vector<SpeakerEmbedding> embed_all(const ModelParams& model,
                                        const std::vector<FeatureMatrix>& feats,
                                        std::size_t workers = 1);

/// Dev EER and ACC (percent) of `model` on `dev`.
std::pair<double, double> dev_metrics(const ModelParams& model, const DevSet& dev,
                                      std::size_t workers = 1);

void write_pretrain_csv(const TrainResult& result, const std::filesystem::path& path);
void write_finetune_csv(const TrainResult& result, const std::filesystem::path& path);

}  // namespace spkemb
