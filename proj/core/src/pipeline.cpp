#include "spkemb/pipeline.hpp"

#include "spkemb/eval.hpp"
#include "spkemb/io.hpp"
#include "spkemb/parallel.hpp"

namespace spkemb {

std::vector<FeatureMatrix> featurize_manifest(const Manifest& manifest, const FrontendConfig& cfg,
                                              std::size_t workers) {
  std::vector<FeatureMatrix> out(manifest.records.size());
  parallel_for(out.size(), workers, [&](std::size_t i) {
    const ManifestRecord& r = manifest.records[i];
    FeatureMatrix f = featurize(read_wav(r.path), cfg);
    f.utt_id = r.utt_id;
    f.speaker_id = r.speaker_id;
    out[i] = std::move(f);
  });
  return out;
}

std::vector<FeatureMatrix> featurize_corpus(const std::vector<SynthUtterance>& corpus,
                                            const FrontendConfig& cfg, std::size_t workers) {
  std::vector<FeatureMatrix> out(corpus.size());
  parallel_for(out.size(), workers, [&](std::size_t i) {
    FeatureMatrix f = featurize(corpus[i].wave, cfg);
    f.utt_id = corpus[i].record.utt_id;
    f.speaker_id = corpus[i].record.speaker_id;
    out[i] = std::move(f);
  });
  return out;
}

std::set<std::string> speaker_set(const Manifest& manifest) {
  std::set<std::string> out;
  for (const auto& r : manifest.records) out.insert(r.speaker_id);
  return out;
}

std::vector<FeatureMatrix> select_speakers(const std::vector<FeatureMatrix>& feats,
                                           const std::set<std::string>& speakers) {
  std::vector<FeatureMatrix> out;
  for (const auto& f : feats)
    if (speakers.count(f.speaker_id)) out.push_back(f);
  return out;
}

std::vector<UttInfo> utt_infos(const std::vector<FeatureMatrix>& feats) {
  std::vector<UttInfo> out;
  out.reserve(feats.size());
  for (const auto& f : feats) out.push_back({f.utt_id, f.speaker_id});
  return out;
}

DevSet make_dev_set(std::vector<FeatureMatrix> feats, std::size_t negatives, std::uint64_t seed) {
  DevSet dev;
  dev.trials = build_trials(utt_infos(feats), negatives, seed);
  dev.utts = std::move(feats);
  return dev;
}

}  // namespace spkemb
