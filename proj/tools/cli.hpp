#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace spkemb::cli {

inline const std::vector<std::string> kSubcommands{
    "synth", "featurize", "pretrain", "finetune", "embed", "evaluate", "fuse", "mine-stats"};

struct KeySpec {
  std::string default_value;
  std::string help;
};

/// Every configuration key with its default.
const std::map<std::string, KeySpec>& key_table();

/// Resolved key=value settings for one run. Precedence: command-line
/// overrides, then the config file, then defaults.
struct RunConfig {
  std::string subcommand;
  std::filesystem::path config_file;
  std::map<std::string, std::string> values;

  const std::string& str(const std::string& key) const;
  std::size_t size(const std::string& key) const;
  double real(const std::string& key) const;
  std::uint64_t seed() const { return size("seed"); }
  std::filesystem::path out() const { return str("out"); }
  /// <out>/<subcommand>: where the run record and artifacts go.
  std::filesystem::path run_dir() const { return out() / subcommand; }
};

/// Parses "key=value" lines; blank lines and '#' comments are skipped.
std::map<std::string, std::string> read_config_file(const std::filesystem::path& path);

RunConfig resolve_config(const std::string& subcommand, const std::filesystem::path& config_file,
                         const std::vector<std::pair<std::string, std::string>>& overrides);

/// Sorted "key=value" lines.
std::string render_config(const RunConfig& cfg);

int run_subcommand(const RunConfig& cfg);

/// Full command-line entry point; returns the process exit code.
int run_cli(int argc, const char* const* argv);

}  // namespace spkemb::cli
