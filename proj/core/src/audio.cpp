#include "spkemb/audio.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <random>

#include "spkemb/error.hpp"

namespace spkemb {
namespace {

struct FftwFree {
  void operator()(void* p) const { fftwf_free(p); }
};

/// Real-to-complex FFT of a fixed size. Plans are shared per size; the
/// new-array execute interface is thread-safe, planning is not.
class RealFft {
 public:
  explicit RealFft(std::size_t n) : n_(n) {
    in_.reset(static_cast<float*>(fftwf_malloc(sizeof(float) * n)));
    out_.reset(static_cast<fftwf_complex*>(
        fftwf_malloc(sizeof(fftwf_complex) * (n / 2 + 1))));
    plan_ = shared_plan(n);
  }

  std::span<float> input() { return {in_.get(), n_}; }

  /// |X_k|^2 for k = 0..n/2.
  void power(std::span<float> out) {
    fftwf_execute_dft_r2c(plan_, in_.get(), out_.get());
    for (std::size_t k = 0; k <= n_ / 2; ++k) {
      const float re = out_.get()[k][0];
      const float im = out_.get()[k][1];
      out[k] = re * re + im * im;
    }
  }

 private:
  static fftwf_plan shared_plan(std::size_t n) {
    static std::mutex mu;
    static std::map<std::size_t, fftwf_plan> plans;
    std::lock_guard lock(mu);
    auto it = plans.find(n);
    if (it != plans.end()) return it->second;
    std::unique_ptr<float, FftwFree> in(
        static_cast<float*>(fftwf_malloc(sizeof(float) * n)));
    std::unique_ptr<fftwf_complex, FftwFree> out(static_cast<fftwf_complex*>(
        fftwf_malloc(sizeof(fftwf_complex) * (n / 2 + 1))));
    // ESTIMATE keeps the chosen algorithm, and therefore the bits, stable.
    fftwf_plan plan = fftwf_plan_dft_r2c_1d(static_cast<int>(n), in.get(),
                                            out.get(), FFTW_ESTIMATE);
    plans.emplace(n, plan);
    return plan;
  }

  std::size_t n_;
  std::unique_ptr<float, FftwFree> in_;
  std::unique_ptr<fftwf_complex, FftwFree> out_;
  fftwf_plan plan_;
};

std::vector<float> hamming(std::size_t n) {
  std::vector<float> w(n);
  for (std::size_t i = 0; i < n; ++i)
    w[i] = static_cast<float>(
        0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                               static_cast<double>(n - 1)));
  return w;
}

}  // namespace

std::size_t frame_length_samples(int sample_rate, const FbankConfig& cfg) {
  return static_cast<std::size_t>(std::lround(sample_rate * cfg.frame_ms / 1000.0));
}

std::size_t frame_shift_samples(int sample_rate, const FbankConfig& cfg) {
  return static_cast<std::size_t>(std::lround(sample_rate * cfg.shift_ms / 1000.0));
}

std::size_t num_frames(std::size_t num_samples, int sample_rate,
                       const FbankConfig& cfg) {
  const std::size_t len = frame_length_samples(sample_rate, cfg);
  const std::size_t shift = frame_shift_samples(sample_rate, cfg);
  if (num_samples < len) return 0;
  return (num_samples - len) / shift + 1;
}

std::size_t fft_size(std::size_t frame_length) {
  std::size_t n = 1;
  while (n < frame_length) n <<= 1;
  return n;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) {
  return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

MelFilterbank::MelFilterbank(int sample_rate, std::size_t fft_len,
                             const FbankConfig& cfg) {
  const double nyquist = sample_rate / 2.0;
  const double high = cfg.high_hz > 0.0 ? std::min(cfg.high_hz, nyquist) : nyquist;
  require(cfg.low_hz >= 0.0 && cfg.low_hz < high, ErrorKind::kConfiguration,
          "mel filterbank needs 0 <= low < high");
  require(cfg.num_filters >= 1, ErrorKind::kConfiguration,
          "mel filterbank needs at least one filter");
  const std::size_t n = cfg.num_filters;
  const double mlo = hz_to_mel(cfg.low_hz), mhi = hz_to_mel(high);
  std::vector<double> pts(n + 2);
  for (std::size_t i = 0; i < n + 2; ++i)
    pts[i] = mlo + (mhi - mlo) * static_cast<double>(i) / static_cast<double>(n + 1);
  const std::size_t bins = fft_len / 2 + 1;
  first_bin_.resize(n);
  weights_.resize(n);
  centers_hz_.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double left = pts[k], center = pts[k + 1], right = pts[k + 2];
    centers_hz_[k] = mel_to_hz(center);
    std::size_t first = bins;
    std::vector<float> w;
    for (std::size_t i = 0; i < bins; ++i) {
      const double hz = static_cast<double>(i) * sample_rate / static_cast<double>(fft_len);
      const double m = hz_to_mel(hz);
      double v = 0.0;
      if (m > left && m <= center) v = (m - left) / (center - left);
      else if (m > center && m < right) v = (right - m) / (right - center);
      if (v > 0.0) {
        if (first == bins) first = i;
        w.resize(i - first + 1, 0.0f);
        w[i - first] = static_cast<float>(v);
      }
    }
    first_bin_[k] = first == bins ? 0 : first;
    weights_[k] = std::move(w);
  }
}

void MelFilterbank::apply(std::span<const float> power, std::span<float> out) const {
  for (std::size_t k = 0; k < first_bin_.size(); ++k) {
    double e = 0.0;
    const auto& w = weights_[k];
    for (std::size_t j = 0; j < w.size(); ++j)
      e += static_cast<double>(w[j]) * power[first_bin_[k] + j];
    out[k] = static_cast<float>(e);
  }
}

double MelFilterbank::weight(std::size_t filter, std::size_t bin) const {
  const std::size_t first = first_bin_.at(filter);
  const auto& w = weights_.at(filter);
  if (bin < first || bin >= first + w.size()) return 0.0;
  return w[bin - first];
}

void validate_waveform(const Waveform& wave) {
  require(wave.sample_rate == 8000 || wave.sample_rate == 16000,
          ErrorKind::kConfiguration,
          "unsupported sample rate " + std::to_string(wave.sample_rate) +
              " (expected 8000 or 16000; resample first)");
}

FeatureMatrix fbank(const Waveform& wave, const FbankConfig& cfg) {
  validate_waveform(wave);
  const std::size_t len = frame_length_samples(wave.sample_rate, cfg);
  const std::size_t shift = frame_shift_samples(wave.sample_rate, cfg);
  const std::size_t T = num_frames(wave.samples.size(), wave.sample_rate, cfg);
  require(T > 0, ErrorKind::kEmptyUtterance,
          "audio of " + std::to_string(wave.samples.size()) +
              " samples is shorter than one frame");
  const std::size_t nfft = fft_size(len);
  const MelFilterbank mel(wave.sample_rate, nfft, cfg);
  const std::vector<float> window = hamming(len);
  RealFft fft(nfft);
  std::vector<float> power(nfft / 2 + 1);

  FeatureMatrix out(T, cfg.num_filters);
  out.frame_shift_ms = cfg.shift_ms;
  for (std::size_t t = 0; t < T; ++t) {
    auto in = fft.input();
    const float* src = wave.samples.data() + t * shift;
    for (std::size_t i = 0; i < len; ++i) in[i] = src[i] * window[i];
    std::fill(in.begin() + static_cast<std::ptrdiff_t>(len), in.end(), 0.0f);
    fft.power(power);
    auto row = out.frame(t);
    mel.apply(power, row);
    for (float& v : row)
      v = static_cast<float>(std::log(static_cast<double>(v) + cfg.energy_floor));
  }
  return out;
}

std::vector<double> frame_energy_db(const Waveform& wave, const FbankConfig& cfg) {
  validate_waveform(wave);
  const std::size_t len = frame_length_samples(wave.sample_rate, cfg);
  const std::size_t shift = frame_shift_samples(wave.sample_rate, cfg);
  const std::size_t T = num_frames(wave.samples.size(), wave.sample_rate, cfg);
  std::vector<double> e(T);
  for (std::size_t t = 0; t < T; ++t) {
    double acc = 0.0;
    const float* src = wave.samples.data() + t * shift;
    for (std::size_t i = 0; i < len; ++i) acc += double(src[i]) * src[i];
    e[t] = 10.0 * std::log10(acc / static_cast<double>(len) + 1e-20);
  }
  return e;
}

std::vector<bool> energy_vad(std::span<const double> energy_db, const VadConfig& cfg) {
  std::vector<bool> mask(energy_db.size(), false);
  if (energy_db.empty()) raise(ErrorKind::kEmptyUtterance, "no frames for VAD");
  const double peak = *std::max_element(energy_db.begin(), energy_db.end());
  std::size_t kept = 0;
  for (std::size_t t = 0; t < energy_db.size(); ++t) {
    mask[t] = energy_db[t] >= peak - cfg.relative_db && energy_db[t] >= cfg.floor_db;
    kept += mask[t];
  }
  require(kept > 0, ErrorKind::kEmptyUtterance, "VAD removed every frame");
  return mask;
}

FeatureMatrix apply_mask(const FeatureMatrix& feat, const std::vector<bool>& mask) {
  require(mask.size() == feat.num_frames, ErrorKind::kDimension,
          "VAD mask has " + std::to_string(mask.size()) + " entries for " +
              std::to_string(feat.num_frames) + " frames");
  FeatureMatrix out = feat;
  out.data.clear();
  out.num_frames = 0;
  for (std::size_t t = 0; t < feat.num_frames; ++t) {
    if (!mask[t]) continue;
    auto f = feat.frame(t);
    out.data.insert(out.data.end(), f.begin(), f.end());
    ++out.num_frames;
  }
  require(out.num_frames > 0, ErrorKind::kEmptyUtterance, "mask keeps no frames");
  return out;
}

FeatureMatrix cmvn(const FeatureMatrix& feat) {
  require(feat.num_frames >= 2, ErrorKind::kInsufficientFrames,
          "cmvn needs at least 2 frames, got " + std::to_string(feat.num_frames));
  const std::size_t T = feat.num_frames, D = feat.dim;
  std::vector<double> mean(D, 0.0), var(D, 0.0);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t k = 0; k < D; ++k) mean[k] += feat.at(t, k);
  for (double& m : mean) m /= static_cast<double>(T);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t k = 0; k < D; ++k) {
      const double d = feat.at(t, k) - mean[k];
      var[k] += d * d;
    }
  FeatureMatrix out = feat;
  for (std::size_t k = 0; k < D; ++k) {
    const double v = std::max(var[k] / static_cast<double>(T), kCmvnVarianceFloor);
    const double inv = 1.0 / std::sqrt(v);
    for (std::size_t t = 0; t < T; ++t)
      out.at(t, k) = static_cast<float>((feat.at(t, k) - mean[k]) * inv);
  }
  return out;
}

FeatureMatrix crop_wrapped(const FeatureMatrix& feat, std::size_t offset,
                           std::size_t len) {
  require(feat.num_frames > 0, ErrorKind::kEmptyUtterance,
          "cannot crop an empty utterance");
  FeatureMatrix out(len, feat.dim);
  out.utt_id = feat.utt_id;
  out.speaker_id = feat.speaker_id;
  out.frame_shift_ms = feat.frame_shift_ms;
  for (std::size_t t = 0; t < len; ++t) {
    auto src = feat.frame((offset + t) % feat.num_frames);
    std::copy(src.begin(), src.end(), out.frame(t).begin());
  }
  return out;
}

std::vector<FeatureMatrix> chunk(const FeatureMatrix& feat, std::size_t len,
                                 ChunkMode mode, std::uint64_t seed,
                                 std::size_t count) {
  require(len >= 1, ErrorKind::kConfiguration, "chunk length must be >= 1");
  require(feat.num_frames > 0, ErrorKind::kEmptyUtterance, "chunking empty utterance");
  const std::size_t T = feat.num_frames;
  std::vector<FeatureMatrix> out;
  if (mode == ChunkMode::kSequential) {
    const std::size_t full = T / len;
    for (std::size_t i = 0; i < full; ++i) out.push_back(crop_wrapped(feat, i * len, len));
    if (T % len != 0) out.push_back(crop_wrapped(feat, full * len, len));
    return out;
  }
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t span = T >= len ? T - len + 1 : T;
    const std::size_t offset = static_cast<std::size_t>(rng() % span);
    out.push_back(crop_wrapped(feat, offset, len));
  }
  return out;
}

FeatureMatrix featurize(const Waveform& wave, const FrontendConfig& cfg) {
  FeatureMatrix feat = fbank(wave, cfg.fbank);
  if (cfg.use_vad) {
    const std::vector<double> e = frame_energy_db(wave, cfg.fbank);
    feat = apply_mask(feat, energy_vad(e, cfg.vad));
  }
  if (cfg.use_cmvn) feat = cmvn(feat);
  return feat;
}

}  // namespace spkemb
