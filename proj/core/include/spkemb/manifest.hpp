#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace spkemb {

struct ManifestRecord {
  std::string utt_id;
  std::string speaker_id;
  std::filesystem::path path;  // resolved against the manifest directory
  double duration_s = 0.0;
  std::optional<double> timestamp;  // seconds since the epoch
};

struct ManifestStats {
  std::size_t num_speakers = 0;
  std::size_t num_utts = 0;
  double utts_per_speaker = 0.0;
  double mean_duration_s = 0.0;

  /// "#spkr  #utt  #utt/spkr  dur/utt" header plus one row.
  std::string table(const std::string& name = "corpus") const;
};

struct Manifest {
  std::vector<ManifestRecord> records;

  ManifestStats stats() const;
  /// Sorted unique speaker ids.
  std::vector<std::string> speakers() const;
  /// Record indices per speaker, in manifest order.
  std::map<std::string, std::vector<std::size_t>> by_speaker() const;
  const ManifestRecord* find(const std::string& utt_id) const;
};

/// TSV with header "utt_id\tspeaker_id\tpath\tduration_s\ttimestamp".
/// Relative paths resolve against the manifest's directory. Duplicate utt
/// ids raise kParse naming the line; missing files raise kIo when
/// `check_files` is set.
Manifest parse_manifest(const std::filesystem::path& path, bool check_files = true);

/// Paths are written relative to the manifest's directory when possible.
void write_manifest(const Manifest& manifest, const std::filesystem::path& path);

struct SpeakerSplit {
  Manifest train;
  Manifest dev;
  Manifest eval;
};

/// Speaker-disjoint split. Dev and eval receive round(f * n) speakers; train
/// gets the rest. Every split with a nonzero fraction must be nonempty.
SpeakerSplit split_speakers(const Manifest& manifest, std::array<double, 3> fractions,
                            std::uint64_t seed);

/// Seeds a generator for a derived stream, e.g. mix_seed(seed, epoch, batch).
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0,
                       std::uint64_t d = 0);

}  // namespace spkemb
