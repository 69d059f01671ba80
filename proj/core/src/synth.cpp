#include "spkemb/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <numbers>
#include <random>

#include "spkemb/error.hpp"
#include "spkemb/io.hpp"
#include "spkemb/parallel.hpp"

namespace spkemb {
namespace {

constexpr double kPeakLowHz = 300.0;
constexpr double kPeakHighHz = 3400.0;
constexpr double kVoicedRms = 0.1;
constexpr double kSilenceRms = 3e-4;

double filter_spacing_mel(int sample_rate) {
  const FbankConfig fb;
  const double lo = hz_to_mel(fb.low_hz);
  const double hi = hz_to_mel(sample_rate / 2.0);
  return (hi - lo) / static_cast<double>(fb.num_filters + 1);
}

}  // namespace

double peak_separation_filters(const SyntheticSpeakerSpec& a, const SyntheticSpeakerSpec& b,
                               int sample_rate) {
  const double spacing = filter_spacing_mel(sample_rate);
  double best = 0.0;
  for (const auto& pa : a.peaks) {
    double nearest = 1e300;
    for (const auto& pb : b.peaks)
      nearest = std::min(nearest, std::abs(hz_to_mel(pa.hz) - hz_to_mel(pb.hz)));
    best = std::max(best, nearest / spacing);
  }
  return best;
}

std::vector<SyntheticSpeakerSpec> make_speakers(const SynthConfig& cfg) {
  require(cfg.n_speakers >= 2, ErrorKind::kConfiguration, "synthetic corpus needs >= 2 speakers");
  std::mt19937_64 rng(mix_seed(cfg.seed, 0x5eed));
  std::uniform_int_distribution<int> n_peaks(3, 5);
  std::uniform_real_distribution<double> mel(hz_to_mel(kPeakLowHz), hz_to_mel(kPeakHighHz));
  std::uniform_real_distribution<double> amp(0.5, 1.0);
  std::uniform_real_distribution<double> f0(90.0, 250.0);

  std::vector<SyntheticSpeakerSpec> out;
  std::size_t attempts = 0;
  while (out.size() < cfg.n_speakers) {
    require(++attempts < 100000, ErrorKind::kConfiguration,
            "cannot place that many distinct synthetic speakers");
    SyntheticSpeakerSpec s;
    s.id = fmt::format("{}{:04d}", cfg.speaker_prefix, out.size());
    s.f0_hz = f0(rng);
    const int k = n_peaks(rng);
    for (int i = 0; i < k; ++i) s.peaks.push_back({mel_to_hz(mel(rng)), amp(rng)});
    std::sort(s.peaks.begin(), s.peaks.end(),
              [](const SpectralPeak& x, const SpectralPeak& y) { return x.hz < y.hz; });
    bool distinct = true;
    for (const auto& other : out) {
      if (peak_separation_filters(s, other, cfg.sample_rate) < kMinPeakSeparationFilters ||
          peak_separation_filters(other, s, cfg.sample_rate) < kMinPeakSeparationFilters) {
        distinct = false;
        break;
      }
    }
    if (!distinct) continue;
    s.seed = mix_seed(cfg.seed, 0x5eed, out.size());
    out.push_back(std::move(s));
  }
  return out;
}

Waveform synth_utterance(const SyntheticSpeakerSpec& spk, const SynthConfig& cfg,
                         std::uint64_t utt_seed) {
  std::mt19937_64 rng(utt_seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double sr = cfg.sample_rate;
  const auto lead = static_cast<std::size_t>(
      sr * (cfg.silence_min_s + uni(rng) * (cfg.silence_max_s - cfg.silence_min_s)));
  const auto trail = static_cast<std::size_t>(
      sr * (cfg.silence_min_s + uni(rng) * (cfg.silence_max_s - cfg.silence_min_s)));
  const auto voiced = static_cast<std::size_t>(sr * cfg.dur_s);

  struct Component {
    double omega, phase, amp;
    std::vector<double> knots;
  };
  const auto n_knots = static_cast<std::size_t>(cfg.dur_s / cfg.envelope_step_s) + 2;
  auto make_knots = [&] {
    std::vector<double> k(n_knots);
    for (double& v : k) v = 0.1 + 0.9 * uni(rng);
    return k;
  };
  std::vector<Component> comps;
  for (const auto& p : spk.peaks) {
    const double hz = p.hz * (1.0 + spk.jitter * (2.0 * uni(rng) - 1.0));
    comps.push_back({2.0 * std::numbers::pi * hz / sr, 2.0 * std::numbers::pi * uni(rng),
                     p.amplitude, make_knots()});
  }
  const double f0 = spk.f0_hz * (1.0 + spk.jitter * (2.0 * uni(rng) - 1.0));
  comps.push_back({2.0 * std::numbers::pi * f0 / sr, 2.0 * std::numbers::pi * uni(rng), 0.2,
                   make_knots()});

  std::vector<double> v(voiced, 0.0);
  const double knot_len = cfg.envelope_step_s * sr;
  for (std::size_t n = 0; n < voiced; ++n) {
    const double pos = static_cast<double>(n) / knot_len;
    const auto i0 = static_cast<std::size_t>(pos);
    const double frac = pos - static_cast<double>(i0);
    double s = 0.0;
    for (const auto& c : comps) {
      const double env = c.knots[i0] * (1.0 - frac) + c.knots[i0 + 1] * frac;
      s += c.amp * env * std::sin(c.omega * static_cast<double>(n) + c.phase);
    }
    v[n] = s;
  }
  double energy = 0.0;
  for (double s : v) energy += s * s;
  const double rms = std::sqrt(energy / std::max<std::size_t>(voiced, 1));
  const double gain = rms > 0.0 ? kVoicedRms / rms : 0.0;
  const double noise_rms = kVoicedRms * std::pow(10.0, -cfg.snr_db / 20.0);

  Waveform w;
  w.sample_rate = cfg.sample_rate;
  w.samples.reserve(lead + voiced + trail);
  for (std::size_t n = 0; n < lead; ++n)
    w.samples.push_back(static_cast<float>(kSilenceRms * gauss(rng)));
  for (std::size_t n = 0; n < voiced; ++n)
    w.samples.push_back(static_cast<float>(gain * v[n] + noise_rms * gauss(rng)));
  for (std::size_t n = 0; n < trail; ++n)
    w.samples.push_back(static_cast<float>(kSilenceRms * gauss(rng)));
  return w;
}

std::vector<SynthUtterance> synth_corpus_memory(const SynthConfig& cfg) {
  const auto speakers = make_speakers(cfg);
  std::vector<SynthUtterance> out;
  out.reserve(speakers.size() * cfg.utts_per_speaker);
  const double span_s = cfg.time_span_days * 86400.0;
  for (std::size_t s = 0; s < speakers.size(); ++s) {
    std::mt19937_64 ts_rng(mix_seed(cfg.seed, 0x7157, s));
    std::uniform_real_distribution<double> when(0.0, span_s);
    std::vector<double> stamps(cfg.utts_per_speaker);
    for (double& t : stamps) t = std::round(cfg.start_time + when(ts_rng));
    std::sort(stamps.begin(), stamps.end());
    for (std::size_t u = 0; u < cfg.utts_per_speaker; ++u) {
      SynthUtterance su;
      su.wave = synth_utterance(speakers[s], cfg, mix_seed(cfg.seed, 0xa0d10, s, u));
      su.record.utt_id = fmt::format("{}-u{:03d}", speakers[s].id, u);
      su.record.speaker_id = speakers[s].id;
      su.record.duration_s =
          static_cast<double>(su.wave.samples.size()) / static_cast<double>(cfg.sample_rate);
      su.record.timestamp = stamps[u];
      out.push_back(std::move(su));
    }
  }
  return out;
}

Manifest synth_corpus(const SynthConfig& cfg, const std::filesystem::path& out_dir,
                      std::size_t workers) {
  const auto audio_dir = out_dir / "audio";
  std::filesystem::create_directories(audio_dir);
  auto utts = synth_corpus_memory(cfg);
  parallel_for(utts.size(), workers, [&](std::size_t i) {
    utts[i].record.path = audio_dir / (utts[i].record.utt_id + ".wav");
    write_wav(utts[i].record.path, utts[i].wave);
  });
  Manifest m;
  for (auto& u : utts) m.records.push_back(std::move(u.record));
  write_manifest(m, out_dir / "manifest.tsv");
  return m;
}

}  // namespace spkemb
