#include "spkemb/manifest.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "spkemb/error.hpp"

namespace spkemb {
namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, '\t')) out.push_back(field);
  if (!line.empty() && line.back() == '\t') out.emplace_back();
  return out;
}

double parse_double(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size() && std::isfinite(v)) return v;
  } catch (const std::exception&) {
  }
  raise(ErrorKind::kParse, where + ": not a number: '" + s + "'");
}

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c, std::uint64_t d) {
  std::uint64_t h = splitmix(a);
  h = splitmix(h ^ b);
  h = splitmix(h ^ c);
  return splitmix(h ^ d);
}

std::string ManifestStats::table(const std::string& name) const {
  std::string out = fmt::format("{:<12} {:>7} {:>8} {:>10} {:>9}\n", "set", "#spkr", "#utt",
                                "#utt/spkr", "dur/utt");
  out += fmt::format("{:<12} {:>7} {:>8} {:>10.2f} {:>8.2f}s\n", name, num_speakers, num_utts,
                     utts_per_speaker, mean_duration_s);
  return out;
}

ManifestStats Manifest::stats() const {
  ManifestStats s;
  s.num_utts = records.size();
  s.num_speakers = speakers().size();
  if (s.num_speakers > 0)
    s.utts_per_speaker = static_cast<double>(s.num_utts) / static_cast<double>(s.num_speakers);
  if (!records.empty()) {
    double total = 0.0;
    for (const auto& r : records) total += r.duration_s;
    s.mean_duration_s = total / static_cast<double>(records.size());
  }
  return s;
}

std::vector<std::string> Manifest::speakers() const {
  std::set<std::string> ids;
  for (const auto& r : records) ids.insert(r.speaker_id);
  return {ids.begin(), ids.end()};
}

std::map<std::string, std::vector<std::size_t>> Manifest::by_speaker() const {
  std::map<std::string, std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < records.size(); ++i) out[records[i].speaker_id].push_back(i);
  return out;
}

const ManifestRecord* Manifest::find(const std::string& utt_id) const {
  for (const auto& r : records)
    if (r.utt_id == utt_id) return &r;
  return nullptr;
}

Manifest parse_manifest(const std::filesystem::path& path, bool check_files) {
  std::ifstream is(path);
  require(static_cast<bool>(is), ErrorKind::kIo, "cannot open manifest " + path.string());
  const auto base = path.parent_path();
  Manifest m;
  std::set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (lineno == 1) {
      require(line.rfind("utt_id\tspeaker_id\tpath", 0) == 0, ErrorKind::kParse,
              where + ": missing manifest header");
      continue;
    }
    if (line.empty()) continue;
    const auto f = split_tabs(line);
    require(f.size() == 4 || f.size() == 5, ErrorKind::kParse,
            where + ": expected 4 or 5 tab-separated fields, got " + std::to_string(f.size()));
    ManifestRecord r;
    r.utt_id = f[0];
    r.speaker_id = f[1];
    require(!r.utt_id.empty() && !r.speaker_id.empty(), ErrorKind::kParse,
            where + ": empty utterance or speaker id");
    require(seen.insert(r.utt_id).second, ErrorKind::kParse,
            where + ": duplicate utterance id '" + r.utt_id + "'");
    r.path = f[2];
    if (r.path.is_relative()) r.path = base / r.path;
    r.duration_s = parse_double(f[3], where);
    if (f.size() == 5 && !f[4].empty()) r.timestamp = parse_double(f[4], where);
    if (check_files)
      require(std::filesystem::exists(r.path), ErrorKind::kIo,
              where + ": missing audio file " + r.path.string());
    m.records.push_back(std::move(r));
  }
  return m;
}

void write_manifest(const Manifest& manifest, const std::filesystem::path& path) {
  std::ofstream os(path);
  require(static_cast<bool>(os), ErrorKind::kIo, "cannot write " + path.string());
  const auto base = path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path();
  os << "utt_id\tspeaker_id\tpath\tduration_s\ttimestamp\n";
  for (const auto& r : manifest.records) {
    std::filesystem::path p = r.path;
    if (p.is_absolute() || std::filesystem::exists(base)) {
      std::error_code ec;
      const auto rel = std::filesystem::relative(p, base, ec);
      if (!ec && !rel.empty()) p = rel;
    }
    os << r.utt_id << '\t' << r.speaker_id << '\t' << p.generic_string() << '\t'
       << fmt::format("{:.6f}", r.duration_s) << '\t';
    if (r.timestamp) os << fmt::format("{:.3f}", *r.timestamp);
    os << '\n';
  }
  require(static_cast<bool>(os), ErrorKind::kIo, "failed writing " + path.string());
}

SpeakerSplit split_speakers(const Manifest& manifest, std::array<double, 3> fractions,
                            std::uint64_t seed) {
  const double sum = fractions[0] + fractions[1] + fractions[2];
  require(std::abs(sum - 1.0) < 1e-9, ErrorKind::kConfiguration,
          "split fractions must sum to 1");
  for (double f : fractions)
    require(f >= 0.0, ErrorKind::kConfiguration, "split fractions must be non-negative");

  std::vector<std::string> spk = manifest.speakers();
  const std::size_t n = spk.size();
  const auto n_dev = static_cast<std::size_t>(std::llround(fractions[1] * static_cast<double>(n)));
  const auto n_eval = static_cast<std::size_t>(std::llround(fractions[2] * static_cast<double>(n)));
  require(n_dev + n_eval <= n, ErrorKind::kDataset, "too few speakers for the requested split");
  const std::size_t n_train = n - n_dev - n_eval;
  const std::array<std::size_t, 3> counts{n_train, n_dev, n_eval};
  for (std::size_t k = 0; k < 3; ++k)
    require(fractions[k] == 0.0 || counts[k] > 0, ErrorKind::kDataset,
            fmt::format("too few speakers ({}) for the requested split", n));

  std::mt19937_64 rng(mix_seed(seed, 0x5b117));
  std::shuffle(spk.begin(), spk.end(), rng);
  std::map<std::string, int> which;
  for (std::size_t i = 0; i < n; ++i)
    which[spk[i]] = i < n_train ? 0 : (i < n_train + n_dev ? 1 : 2);

  SpeakerSplit out;
  for (const auto& r : manifest.records) {
    switch (which[r.speaker_id]) {
      case 0: out.train.records.push_back(r); break;
      case 1: out.dev.records.push_back(r); break;
      default: out.eval.records.push_back(r); break;
    }
  }
  return out;
}

}  // namespace spkemb
