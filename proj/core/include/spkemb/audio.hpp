#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace spkemb {

struct Waveform {
  std::vector<float> samples;  // [-1, 1]
  int sample_rate = 16000;
};

/// Row-major T x dim matrix of log-mel energies for one utterance (or chunk).
struct FeatureMatrix {
  std::string utt_id;
  std::string speaker_id;
  std::size_t num_frames = 0;
  std::size_t dim = 0;
  double frame_shift_ms = 10.0;
  std::vector<float> data;

  FeatureMatrix() = default;
  FeatureMatrix(std::size_t frames, std::size_t dims)
      : num_frames(frames), dim(dims), data(frames * dims, 0.0f) {}

  float& at(std::size_t t, std::size_t k) { return data[t * dim + k]; }
  float at(std::size_t t, std::size_t k) const { return data[t * dim + k]; }
  std::span<const float> frame(std::size_t t) const {
    return {data.data() + t * dim, dim};
  }
  std::span<float> frame(std::size_t t) { return {data.data() + t * dim, dim}; }
};

struct FbankConfig {
  double frame_ms = 25.0;
  double shift_ms = 10.0;
  std::size_t num_filters = 64;
  double low_hz = 20.0;
  double high_hz = 0.0;  // <= 0 means Nyquist
  double energy_floor = 1e-10;
};

inline constexpr std::size_t kFeatureDim = 64;

std::size_t frame_length_samples(int sample_rate, const FbankConfig& cfg);
std::size_t frame_shift_samples(int sample_rate, const FbankConfig& cfg);
/// floor((N - frame) / shift) + 1, or 0 when shorter than one frame.
std::size_t num_frames(std::size_t num_samples, int sample_rate,
                       const FbankConfig& cfg);
/// Smallest power of two >= the frame length.
std::size_t fft_size(std::size_t frame_length);

double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// Triangular filters on the mel scale; one row of (fft/2 + 1) weights per
/// filter. Filter k spans mel points k..k+2 and peaks at point k+1.
class MelFilterbank {
 public:
  MelFilterbank(int sample_rate, std::size_t fft_len, const FbankConfig& cfg);

  std::size_t num_filters() const { return first_bin_.size(); }
  double center_hz(std::size_t k) const { return centers_hz_[k]; }
  /// Applies filter weights to a power spectrum of fft_len/2 + 1 bins.
  void apply(std::span<const float> power, std::span<float> out) const;
  double weight(std::size_t filter, std::size_t bin) const;

 private:
  std::vector<std::size_t> first_bin_;
  std::vector<std::vector<float>> weights_;
  std::vector<double> centers_hz_;
};

void validate_waveform(const Waveform& wave);

/// Hamming-windowed power spectrum -> mel filterbank -> log(E + floor).
FeatureMatrix fbank(const Waveform& wave, const FbankConfig& cfg = {});

/// Mean-square energy of each (unwindowed) frame in dB full scale.
std::vector<double> frame_energy_db(const Waveform& wave,
                                    const FbankConfig& cfg = {});

struct VadConfig {
  double relative_db = 30.0;  // keep frames within this of the loudest
  double floor_db = -60.0;    // and above this absolute level
};

/// Throws kEmptyUtterance when every frame is rejected.
std::vector<bool> energy_vad(std::span<const double> energy_db,
                             const VadConfig& cfg = {});

/// Keeps the frames whose mask entry is set, in order.
FeatureMatrix apply_mask(const FeatureMatrix& feat, const std::vector<bool>& mask);

inline constexpr double kCmvnVarianceFloor = 1e-5;

/// Per-utterance mean/variance normalization of every coefficient.
FeatureMatrix cmvn(const FeatureMatrix& feat);

enum class ChunkMode { kSequential, kRandom };

/// Fixed-length crops. Sequential: floor(T/len) full chunks plus one
/// wrap-padded chunk for any remainder. Random: `count` crops at uniform
/// offsets (wrap-padded when T < len), deterministic for a seed.
std::vector<FeatureMatrix> chunk(const FeatureMatrix& feat, std::size_t len,
                                 ChunkMode mode, std::uint64_t seed = 0,
                                 std::size_t count = 1);

/// Cyclic crop of `len` frames starting at `offset`.
FeatureMatrix crop_wrapped(const FeatureMatrix& feat, std::size_t offset,
                           std::size_t len);

struct FrontendConfig {
  FbankConfig fbank;
  VadConfig vad;
  bool use_vad = true;
  bool use_cmvn = true;
};

/// fbank -> energy VAD -> CMVN.
FeatureMatrix featurize(const Waveform& wave, const FrontendConfig& cfg = {});

}  // namespace spkemb
