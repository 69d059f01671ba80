#pragma once

// Glue between the stages: featurizing corpora, selecting splits and
// building dev sets. Shared by the CLI and the acceptance runner.

#include <cstddef>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "spkemb/audio.hpp"
#include "spkemb/manifest.hpp"
#include "spkemb/synth.hpp"
#include "spkemb/training.hpp"

namespace spkemb {

/// Reads and featurizes every record's audio, in manifest order.
std::vector<FeatureMatrix> featurize_manifest(const Manifest& manifest,
                                              const FrontendConfig& cfg = {},
                                              std::size_t workers = 1);

std::vector<FeatureMatrix> featurize_corpus(const std::vector<SynthUtterance>& corpus,
                                            const FrontendConfig& cfg = {},
                                            std::size_t workers = 1);

std::set<std::string> speaker_set(const Manifest& manifest);

/// Features whose speaker is in `speakers`, order preserved.
std::vector<FeatureMatrix> select_speakers(const std::vector<FeatureMatrix>& feats,
                                           const std::set<std::string>& speakers);

std::vector<UttInfo> utt_infos(const std::vector<FeatureMatrix>& feats);

DevSet make_dev_set(std::vector<FeatureMatrix> feats, std::size_t negatives, std::uint64_t seed);

}  // namespace spkemb
