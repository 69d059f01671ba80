#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include "oracles.hpp"
#include "spkemb/audio.hpp"
#include "spkemb/io.hpp"

using namespace spkemb;

namespace {

Waveform tone(double hz, double seconds, int sr = 16000, double amp = 0.5) {
  Waveform w;
  w.sample_rate = sr;
  const auto n = static_cast<std::size_t>(seconds * sr);
  for (std::size_t i = 0; i < n; ++i)
    w.samples.push_back(float(amp * std::sin(2 * std::numbers::pi * hz * double(i) / sr)));
  return w;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("spkemb_test_" + name);
}

}  // namespace

TEST(Framing, OneSecondGives98Frames) {
  const FbankConfig cfg;
  EXPECT_EQ(frame_length_samples(16000, cfg), 400u);
  EXPECT_EQ(frame_shift_samples(16000, cfg), 160u);
  EXPECT_EQ(num_frames(16000, 16000, cfg), 98u);
  EXPECT_EQ(num_frames(399, 16000, cfg), 0u);
  EXPECT_EQ(fft_size(400), 512u);
  EXPECT_EQ(fft_size(200), 256u);
}

TEST(Mel, RoundTrip) {
  for (double hz : {0.0, 20.0, 700.0, 4000.0, 8000.0}) EXPECT_NEAR(mel_to_hz(hz_to_mel(hz)), hz, 1e-9);
  EXPECT_NEAR(hz_to_mel(700.0), 2595.0 * std::log10(2.0), 1e-12);
}

TEST(Fbank, MatchesDirectDftOracle) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> g(0.0, 0.1);
  Waveform w;
  for (int i = 0; i < 4000; ++i) w.samples.push_back(float(g(rng)));
  const FeatureMatrix f = fbank(w);
  ASSERT_EQ(f.dim, 64u);
  for (std::size_t t : {std::size_t{0}, std::size_t{7}, f.num_frames - 1}) {
    std::vector<double> frame(400);
    for (std::size_t i = 0; i < 400; ++i) frame[i] = w.samples[t * 160 + i];
    const auto want = oracle::fbank_frame(frame, 16000, 512, 64, 20.0);
    for (std::size_t k = 0; k < 64; ++k) EXPECT_NEAR(f.at(t, k), want[k], 2e-3) << "frame " << t << " filter " << k;
  }
}

TEST(Fbank, EightKilohertzAlsoMatchesOracle) {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> g(0.0, 0.1);
  Waveform w;
  w.sample_rate = 8000;
  for (int i = 0; i < 2000; ++i) w.samples.push_back(float(g(rng)));
  const FeatureMatrix f = fbank(w);
  std::vector<double> frame(200);
  for (std::size_t i = 0; i < 200; ++i) frame[i] = w.samples[i];
  const auto want = oracle::fbank_frame(frame, 8000, 256, 64, 20.0);
  for (std::size_t k = 0; k < 64; ++k) EXPECT_NEAR(f.at(0, k), want[k], 2e-3);
}

TEST(Fbank, SinePeaksInNearestFilter) {
  const MelFilterbank bank(16000, 512, FbankConfig{});
  for (std::size_t k = 10; k < 64; k += 3) {
    const double hz = bank.center_hz(k);
    const FeatureMatrix f = fbank(tone(hz, 0.2));
    const auto row = f.frame(5);
    const auto best = std::size_t(std::max_element(row.begin(), row.end()) - row.begin());
    EXPECT_NEAR(double(best), double(k), 1.0) << hz << " Hz";
  }
}

TEST(Fbank, RejectsUnsupportedRateAndShortAudio) {
  Waveform w = tone(440, 0.1, 44100);
  try {
    fbank(w);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kConfiguration);
  }
  try {
    fbank(tone(440, 0.01));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kEmptyUtterance);
  }
}

TEST(Vad, KeepsSpeechDropsSilence) {
  Waveform w = tone(500, 0.5);
  std::vector<float> padded(8000, 0.0f);
  padded.insert(padded.end(), w.samples.begin(), w.samples.end());
  padded.insert(padded.end(), 8000, 0.0f);
  w.samples = padded;
  const auto e = frame_energy_db(w);
  const auto mask = energy_vad(e);
  std::size_t kept = 0;
  for (bool b : mask) kept += b;
  EXPECT_GE(kept, 45u);
  EXPECT_LE(kept, 53u);
  EXPECT_FALSE(mask.front());
  EXPECT_FALSE(mask.back());
  EXPECT_TRUE(mask[mask.size() / 2]);
}

TEST(Vad, AllSilentIsEmptyUtterance) {
  Waveform w;
  w.samples.assign(16000, 0.0f);
  try {
    energy_vad(frame_energy_db(w));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kEmptyUtterance);
  }
}

TEST(Cmvn, ZeroMeanUnitVarianceAndIdempotent) {
  std::mt19937_64 rng(2);
  std::normal_distribution<float> g(3.0f, 2.0f);
  FeatureMatrix f(50, 4);
  for (float& v : f.data) v = g(rng);
  for (std::size_t t = 0; t < 50; ++t) f.at(t, 3) = 7.0f;  // constant column
  const FeatureMatrix n = cmvn(f);
  for (std::size_t k = 0; k < 3; ++k) {
    double m = 0, v = 0;
    for (std::size_t t = 0; t < 50; ++t) m += n.at(t, k);
    m /= 50;
    for (std::size_t t = 0; t < 50; ++t) v += std::pow(n.at(t, k) - m, 2);
    EXPECT_NEAR(m, 0.0, 1e-5);
    EXPECT_NEAR(v / 50, 1.0, 1e-4);
  }
  for (std::size_t t = 0; t < 50; ++t) EXPECT_EQ(n.at(t, 3), 0.0f);
  const FeatureMatrix twice = cmvn(n);
  for (std::size_t i = 0; i < n.data.size(); ++i) EXPECT_NEAR(twice.data[i], n.data[i], 1e-4);
}

TEST(Chunk, SequentialWrapsRemainder) {
  FeatureMatrix f(10, 1);
  for (std::size_t t = 0; t < 10; ++t) f.at(t, 0) = float(t);
  const auto c = chunk(f, 4, ChunkMode::kSequential);
  ASSERT_EQ(c.size(), 3u);
  EXPECT_EQ(c[2].at(0, 0), 8.0f);
  EXPECT_EQ(c[2].at(2, 0), 0.0f);
  EXPECT_EQ(chunk(f, 5, ChunkMode::kSequential).size(), 2u);
}

TEST(Chunk, RandomIsDeterministicPerSeed) {
  FeatureMatrix f(100, 2);
  for (std::size_t i = 0; i < f.data.size(); ++i) f.data[i] = float(i);
  const auto a = chunk(f, 16, ChunkMode::kRandom, 5, 4);
  const auto b = chunk(f, 16, ChunkMode::kRandom, 5, 4);
  ASSERT_EQ(a.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(a[i].data, b[i].data);
}

TEST(Featurize, TrimsSilenceAndNormalizes) {
  Waveform w = tone(800, 1.0);
  std::vector<float> padded(4800, 0.0f);
  padded.insert(padded.end(), w.samples.begin(), w.samples.end());
  w.samples = padded;
  const FeatureMatrix f = featurize(w);
  EXPECT_LT(f.num_frames, fbank(w).num_frames);
  EXPECT_GE(f.num_frames, 90u);
}

TEST(Wav, RoundTripWithinQuantization) {
  const Waveform w = tone(300, 0.1, 8000, 0.9);
  const auto p = temp_path("rt.wav");
  write_wav(p, w);
  const Waveform r = read_wav(p);
  EXPECT_EQ(r.sample_rate, 8000);
  ASSERT_EQ(r.samples.size(), w.samples.size());
  for (std::size_t i = 0; i < w.samples.size(); ++i) EXPECT_NEAR(r.samples[i], w.samples[i], 1.0 / 32768 + 1e-6);
  std::filesystem::remove(p);
}

TEST(FeatureCache, RoundTripAndCorruption) {
  FeatureMatrix a(3, 64);
  a.utt_id = "u1";
  a.speaker_id = "s1";
  for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] = float(i) * 0.5f;
  const auto p = temp_path("feat.bin");
  write_feature_cache(p, {a, a});
  const auto r = read_feature_cache(p);
  ASSERT_EQ(r.size(), 2u);
  EXPECT_EQ(r[1].utt_id, "u1");
  EXPECT_EQ(r[1].data, a.data);
  {
    std::fstream f(p, std::ios::in | std::ios::out | std::ios::binary);
    f.write("XXXX", 4);
  }
  try {
    read_feature_cache(p);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kIntegrity);
  }
  std::filesystem::remove(p);
}
