#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "spkemb/audio.hpp"
#include "spkemb/manifest.hpp"

namespace spkemb {

struct SpectralPeak {
  double hz = 0.0;
  double amplitude = 1.0;
};

/// A synthetic voice: a weak fundamental plus a few formant-like peaks.
struct SyntheticSpeakerSpec {
  std::string id;
  double f0_hz = 120.0;
  std::vector<SpectralPeak> peaks;
  double jitter = 0.01;  // relative per-utterance frequency jitter
  std::uint64_t seed = 0;
};

struct SynthConfig {
  std::size_t n_speakers = 10;
  std::size_t utts_per_speaker = 20;
  double dur_s = 3.0;  // voiced part; silence is added around it
  int sample_rate = 16000;
  std::uint64_t seed = 0;
  double snr_db = 20.0;
  double silence_min_s = 0.15;
  double silence_max_s = 0.3;
  double envelope_step_s = 0.1;  // syllable-rate amplitude knots
  double time_span_days = 120.0;
  double start_time = 1.6e9;  // seconds since the epoch
  std::string speaker_prefix = "spk";
};

/// Minimum mel distance, in filter spacings, by which some peak of every
/// speaker must differ from all peaks of every other speaker.
inline constexpr double kMinPeakSeparationFilters = 2.0;

/// Speakers with 3-5 peaks in 300-3400 Hz, rejection-sampled so that each
/// pair differs in at least one peak by kMinPeakSeparationFilters.
std::vector<SyntheticSpeakerSpec> make_speakers(const SynthConfig& cfg);

/// Distance in filter spacings between the closest matching peak sets;
/// max over peaks of `a` of the distance to the nearest peak of `b`.
double peak_separation_filters(const SyntheticSpeakerSpec& a, const SyntheticSpeakerSpec& b,
                               int sample_rate);

/// One utterance: silence, voiced region at RMS ~0.1 with noise at the
/// configured SNR, silence. Bit-identical for a given seed.
Waveform synth_utterance(const SyntheticSpeakerSpec& spk, const SynthConfig& cfg,
                         std::uint64_t utt_seed);

struct SynthUtterance {
  ManifestRecord record;
  Waveform wave;
};

/// In-memory corpus; records carry ids, durations and timestamps but no path.
std::vector<SynthUtterance> synth_corpus_memory(const SynthConfig& cfg);

/// Writes audio/<utt>.wav under `out_dir` plus manifest.tsv, returning the
/// manifest.
Manifest synth_corpus(const SynthConfig& cfg, const std::filesystem::path& out_dir,
                      std::size_t workers = 1);

}  // namespace spkemb
