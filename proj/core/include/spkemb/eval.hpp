#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "spkemb/manifest.hpp"
#include "spkemb/model.hpp"

namespace spkemb {

// ---- trials ----------------------------------------------------------------

struct Trial {
  std::size_t group = 0;
  std::string anchor;
  std::string candidate;
  bool target = false;
};

/// Groups are contiguous: one target followed by its nontargets.
struct TrialSet {
  std::vector<Trial> trials;

  std::size_t num_groups() const;
  std::vector<int> labels() const;  // 1 target, 0 nontarget
};

struct UttInfo {
  std::string utt_id;
  std::string speaker_id;
};

std::vector<UttInfo> utt_infos(const Manifest& manifest);

/// One group per anchor utterance: a same-speaker AP and `negatives` ANs
/// drawn without replacement from other speakers. Deterministic per seed.
TrialSet build_trials(const std::vector<UttInfo>& utts, std::size_t negatives, std::uint64_t seed);
TrialSet build_trials(const Manifest& manifest, std::size_t negatives, std::uint64_t seed);

inline constexpr const char* kEnrollPrefix = "enroll:";

/// The first `pool` utterances of each speaker are reserved for enrollment;
/// each remaining utterance forms one group whose anchor is the enrolled
/// model "enroll:<speaker>" and whose ANs are test utterances of other
/// speakers. The trial list does not depend on how many pool utterances are
/// later averaged.
TrialSet build_enrollment_trials(const std::vector<UttInfo>& utts, std::size_t pool,
                                 std::size_t negatives, std::uint64_t seed);

/// "{group}\t{anchor}\t{candidate}\t{target|nontarget}" per line.
void write_trials(const TrialSet& trials, const std::filesystem::path& path);
TrialSet read_trials(const std::filesystem::path& path);

using EmbeddingTable = std::map<std::string, std::vector<float>>;

EmbeddingTable embedding_table(const std::vector<SpeakerEmbedding>& embs);

/// Cosine score of every trial; unknown ids raise kDataset.
std::vector<double> score_trials(const TrialSet& trials, const EmbeddingTable& table);

// ---- metrics ---------------------------------------------------------------

struct DetPoint {
  double threshold;
  double far;
  double frr;
};

struct EerResult {
  double eer = 0.0;  // fraction in [0, 1]
  double threshold = 0.0;
  std::vector<DetPoint> det;  // ascending threshold, last at +inf
};

/// Sweeps thresholds at every distinct score and +inf with
/// FAR(t) = P(nontarget >= t), FRR(t) = P(target < t); the EER is taken
/// where FAR = FRR, interpolating linearly between adjacent operating points.
EerResult compute_eer(std::span<const double> scores, std::span<const int> labels);

/// Fraction of groups whose target strictly outscores every nontarget.
double compute_acc(const TrialSet& trials, std::span<const double> scores);

// ---- enrollment and fusion -------------------------------------------------

/// Normalized mean of the first n embeddings.
SpeakerEmbedding enroll(const std::vector<SpeakerEmbedding>& embs, std::size_t n);

/// Adds enrolled models "enroll:<spk>" built from the first n of `pool`
/// utterances per speaker to `table`.
void add_enrolled_models(EmbeddingTable& table, const std::vector<SpeakerEmbedding>& embs,
                         std::size_t pool, std::size_t n);

SpeakerEmbedding fuse_embeddings(const SpeakerEmbedding& a, const SpeakerEmbedding& b);

/// Per-system z-normalization (population variance) followed by a sum.
std::vector<double> fuse_scores(std::span<const double> a, std::span<const double> b);

// ---- cohorts ---------------------------------------------------------------

using TrialPredicate = std::function<bool(const Trial&)>;

/// Drops groups whose target fails the predicate and nontargets that fail it.
TrialSet cohort_filter(const TrialSet& trials, const TrialPredicate& keep);

/// Keeps groups whose target pair was recorded between `lo_s` (inclusive)
/// and `hi_s` (exclusive) seconds apart.
TrialSet time_span_filter(const TrialSet& trials,
                          const std::map<std::string, double>& timestamps, double lo_s,
                          double hi_s);

std::map<std::string, double> timestamps(const Manifest& manifest);

// ---- report ----------------------------------------------------------------

struct EvalReport {
  std::string system;
  double eer_percent = 0.0;
  double acc_percent = 0.0;
  double threshold = 0.0;
  std::size_t n_trials = 0;
  std::size_t n_groups = 0;
  std::vector<DetPoint> det;
  std::string cohort = "all";
};

EvalReport evaluate(const TrialSet& trials, std::span<const double> scores,
                    const std::string& system = "system");

void write_report_json(const EvalReport& report, const std::filesystem::path& path);
void write_det_csv(const EvalReport& report, const std::filesystem::path& path);

/// "system | EER[%] | ACC[%]" rows.
std::string results_table(const std::vector<EvalReport>& reports);

}  // namespace spkemb
