#include <algorithm>
#include <chrono>
#include <cmath>
#include <fmt/format.h>
#include <random>

#include "spkemb/error.hpp"
#include "spkemb/training.hpp"

namespace spkemb {

MinerMode miner_mode_from_name(const std::string& name) {
  if (name == "hard") return MinerMode::kHard;
  if (name == "semi-hard") return MinerMode::kSemiHard;
  if (name == "random") return MinerMode::kRandom;
  raise(ErrorKind::kConfiguration, "unknown miner '" + name + "' (hard, semi-hard, random)");
}

std::string to_string(MinerMode mode) {
  switch (mode) {
    case MinerMode::kHard: return "hard";
    case MinerMode::kSemiHard: return "semi-hard";
    case MinerMode::kRandom: return "random";
  }
  return "?";
}

void validate(const BatchPlan& plan) {
  require(plan.partitions >= 1, ErrorKind::kConfiguration, "need at least one partition");
  require(plan.num_pairs > 0 && plan.num_pairs % plan.partitions == 0,
          ErrorKind::kConfiguration,
          fmt::format("{} pairs do not split into {} equal partitions", plan.num_pairs,
                      plan.partitions));
}

double TripletBatch::loss(double alpha) const {
  double sum = 0.0;
  for (const Triplet& t : triplets) sum += triplet_loss(t.s_ap, t.s_an, alpha).loss;
  return sum;
}

TripletBatch mine_negatives(const Tensor& embeddings, const std::vector<std::size_t>& speakers,
                            const BatchPlan& plan, MinerMode mode, std::size_t scan_k,
                            double alpha) {
  validate(plan);
  const std::size_t N = plan.num_pairs;
  const std::size_t M = plan.partitions;
  require(embeddings.rank() == 2 && embeddings.dim(0) == 2 * N, ErrorKind::kDimension,
          fmt::format("miner expects [{}, D] embeddings, got {}", 2 * N,
                      shape_string(embeddings.shape())));
  require(speakers.size() == N, ErrorKind::kDimension, "one speaker label per pair");
  require(scan_k >= 1 && scan_k <= M, ErrorKind::kOutOfRange,
          fmt::format("scan_k {} outside 1..{}", scan_k, M));

  const std::size_t rows = 2 * N;
  const std::size_t D = embeddings.dim(1);
  for (std::size_t r = 0; r < rows; ++r) {
    double sq = 0.0;
    for (std::size_t d = 0; d < D; ++d) sq += double(embeddings[r * D + d]) * embeddings[r * D + d];
    require(std::abs(std::sqrt(sq) - 1.0) <= 1e-4, ErrorKind::kContractViolation,
            fmt::format("embedding row {} is not unit-norm", r));
  }
  auto dot = [&](std::size_t a, std::size_t b) {
    double s = 0.0;
    for (std::size_t d = 0; d < D; ++d) s += double(embeddings[a * D + d]) * embeddings[b * D + d];
    return s;
  };

  const std::size_t per = plan.pairs_per_partition();
  TripletBatch out;
  out.triplets.reserve(N);
  std::size_t hard_anchors = 0;
  std::vector<std::size_t> cand;
  for (std::size_t i = 0; i < N; ++i) {
    const std::size_t a = 2 * i, p = 2 * i + 1;
    const double s_ap = dot(a, p);
    cand.clear();
    const std::size_t home = plan.partition_of_pair(i);
    for (std::size_t k = 0; k < scan_k; ++k) {
      const std::size_t part = (home + k) % M;
      for (std::size_t j = part * per; j < (part + 1) * per; ++j) {
        if (speakers[j] == speakers[i]) continue;
        cand.push_back(2 * j);
        cand.push_back(2 * j + 1);
      }
    }
    if (cand.empty())
      raise(ErrorKind::kMinerStarvation,
            fmt::format("no different-speaker negative for pair {} within {} partition(s)", i,
                        scan_k));
    std::sort(cand.begin(), cand.end());

    std::vector<double> s(cand.size());
    bool any_violator = false;
    for (std::size_t c = 0; c < cand.size(); ++c) {
      s[c] = dot(a, cand[c]);
      if (s[c] > s_ap - alpha) any_violator = true;
    }
    if (any_violator) ++hard_anchors;

    std::size_t pick = cand.size();
    if (mode == MinerMode::kRandom) {
      std::mt19937_64 rng(mix_seed(plan.seed, plan.epoch, plan.batch, a));
      std::uniform_int_distribution<std::size_t> u(0, cand.size() - 1);
      pick = u(rng);
    } else {
      if (mode == MinerMode::kSemiHard) {
        for (std::size_t c = 0; c < cand.size(); ++c) {
          if (s[c] < s_ap && s[c] > s_ap - alpha && (pick == cand.size() || s[c] > s[pick]))
            pick = c;
        }
      }
      if (pick == cand.size()) {
        pick = 0;
        for (std::size_t c = 1; c < cand.size(); ++c)
          if (s[c] > s[pick]) pick = c;
      }
    }
    out.triplets.push_back({a, p, cand[pick], s_ap, s[pick], s[pick] > s_ap - alpha});
  }
  out.prob_hard = static_cast<double>(hard_anchors) / static_cast<double>(N);
  return out;
}

std::vector<MinerStats> miner_stats(const std::vector<MinerBatch>& batches,
                                    const std::vector<std::size_t>& scan_grid, double alpha,
                                    std::size_t timing_repeats) {
  require(!batches.empty(), ErrorKind::kContractViolation, "miner_stats needs batches");
  using clock = std::chrono::steady_clock;
  auto run = [&](std::size_t scan_k, double& prob) {
    double elapsed = 0.0;
    prob = 0.0;
    for (std::size_t rep = 0; rep < std::max<std::size_t>(timing_repeats, 1); ++rep) {
      double sum = 0.0;
      const auto t0 = clock::now();
      for (const MinerBatch& b : batches)
        sum += mine_negatives(b.embeddings, b.speakers, b.plan, MinerMode::kHard, scan_k, alpha)
                   .prob_hard;
      elapsed += std::chrono::duration<double>(clock::now() - t0).count();
      prob = sum / static_cast<double>(batches.size());
    }
    return elapsed;
  };
  double base_prob = 0.0;
  const double base = run(1, base_prob);
  std::vector<MinerStats> out;
  for (std::size_t k : scan_grid) {
    MinerStats st;
    st.partitions_scanned = k;
    const double t = k == 1 ? base : run(k, st.prob_hard);
    if (k == 1) st.prob_hard = base_prob;
    st.relative_time_cost = base > 0.0 ? t / base : 1.0;
    out.push_back(st);
  }
  return out;
}

std::vector<MinerBatch> sample_miner_batches(const ModelParams& model, const TrainingSet& data,
                                             std::size_t num_batches, std::size_t batch_pairs,
                                             std::size_t partitions, std::size_t chunk_frames,
                                             std::uint64_t seed) {
  std::vector<MinerBatch> out;
  for (std::size_t b = 0; b < num_batches; ++b) {
    const PairList pl = make_pairs(data, chunk_frames, seed, b);
    require(pl.pairs.size() >= batch_pairs, ErrorKind::kDataset,
            fmt::format("only {} pairs available for a batch of {}", pl.pairs.size(),
                        batch_pairs));
    std::vector<FeatureMatrix> crops;
    MinerBatch mb;
    mb.plan = {batch_pairs, partitions, seed, 0, b};
    validate(mb.plan);
    for (std::size_t i = 0; i < batch_pairs; ++i) {
      const APPair& pr = pl.pairs[i];
      crops.push_back(crop_wrapped(data.utts[pr.anchor.utt], pr.anchor.offset, chunk_frames));
      crops.push_back(crop_wrapped(data.utts[pr.positive.utt], pr.positive.offset, chunk_frames));
      mb.speakers.push_back(pr.speaker);
    }
    std::vector<const FeatureMatrix*> ptrs;
    for (const auto& c : crops) ptrs.push_back(&c);
    mb.embeddings = embed_batch(model, make_batch(ptrs));
    out.push_back(std::move(mb));
  }
  return out;
}

std::string miner_stats_table(const std::vector<MinerStats>& stats) {
  std::string out = fmt::format("{:>10} | {:>14} | {:>10}\n", "scan_k", "P(hard)[%]",
                                "time cost");
  out += "-----------+----------------+-----------\n";
  for (const MinerStats& s : stats)
    out += fmt::format("{:>10} | {:>14.2f} | {:>9.2f}x\n", s.partitions_scanned,
                       100.0 * s.prob_hard, s.relative_time_cost);
  return out;
}

}  // namespace spkemb
