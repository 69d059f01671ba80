#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "spkemb/audio.hpp"

namespace spkemb {

// ---- RIFF/WAVE -------------------------------------------------------------

/// Reads 16-bit PCM mono RIFF/WAVE.
Waveform read_wav(const std::filesystem::path& path);

/// Writes 16-bit PCM mono; samples are clipped to [-1, 1].
void write_wav(const std::filesystem::path& path, const Waveform& wave);

// ---- feature cache ---------------------------------------------------------
//
// "SPKFEAT1", u32 dim, u32 record count, then per record:
//   u32 len + utt id, u32 len + speaker id, u32 T, T x dim little-endian f32.

void write_feature_cache(const std::filesystem::path& path,
                         const std::vector<FeatureMatrix>& feats);
std::vector<FeatureMatrix> read_feature_cache(const std::filesystem::path& path);

// ---- little-endian primitives ----------------------------------------------

void write_u32(std::ostream& os, std::uint32_t v);
void write_u64(std::ostream& os, std::uint64_t v);
void write_f32(std::ostream& os, float v);
void write_string(std::ostream& os, const std::string& s);
std::uint32_t read_u32(std::istream& is);
std::uint64_t read_u64(std::istream& is);
float read_f32(std::istream& is);
std::string read_string(std::istream& is);
void write_f32_array(std::ostream& os, const float* data, std::size_t n);
void read_f32_array(std::istream& is, float* data, std::size_t n);

}  // namespace spkemb
