#include <algorithm>
#include <fmt/format.h>
#include <fstream>
#include <random>
#include <sstream>

#include "spkemb/error.hpp"
#include "spkemb/eval.hpp"

namespace spkemb {
namespace {

std::vector<std::size_t> sample_without_replacement(std::size_t pool, std::size_t k,
                                                    std::mt19937_64& rng) {
  std::vector<std::size_t> idx(pool);
  for (std::size_t i = 0; i < pool; ++i) idx[i] = i;
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(k);
  return idx;
}

void append_group(TrialSet& set, const std::string& anchor, const std::string& positive,
                  const std::vector<const UttInfo*>& others, std::size_t negatives,
                  std::mt19937_64& rng) {
  const std::size_t group = set.num_groups();
  set.trials.push_back({group, anchor, positive, true});
  for (std::size_t j : sample_without_replacement(others.size(), negatives, rng))
    set.trials.push_back({group, anchor, others[j]->utt_id, false});
}

}  // namespace

std::size_t TrialSet::num_groups() const {
  return trials.empty() ? 0 : trials.back().group + 1;
}

std::vector<int> TrialSet::labels() const {
  std::vector<int> out(trials.size());
  for (std::size_t i = 0; i < trials.size(); ++i) out[i] = trials[i].target ? 1 : 0;
  return out;
}

std::vector<UttInfo> utt_infos(const Manifest& manifest) {
  std::vector<UttInfo> out;
  out.reserve(manifest.records.size());
  for (const auto& r : manifest.records) out.push_back({r.utt_id, r.speaker_id});
  return out;
}

TrialSet build_trials(const Manifest& manifest, std::size_t negatives, std::uint64_t seed) {
  return build_trials(utt_infos(manifest), negatives, seed);
}

TrialSet build_trials(const std::vector<UttInfo>& utts, std::size_t negatives,
                      std::uint64_t seed) {
  std::map<std::string, std::vector<std::size_t>> by_spk;
  for (std::size_t i = 0; i < utts.size(); ++i) by_spk[utts[i].speaker_id].push_back(i);
  require(by_spk.size() >= 2, ErrorKind::kDataset, "trials need at least 2 speakers");
  for (const auto& [spk, idx] : by_spk)
    require(idx.size() >= 2, ErrorKind::kDataset,
            "speaker " + spk + " has fewer than 2 utterances");

  std::mt19937_64 rng(mix_seed(seed, 0x7a1a));
  TrialSet set;
  for (std::size_t a = 0; a < utts.size(); ++a) {
    const auto& same = by_spk[utts[a].speaker_id];
    std::vector<std::size_t> positives;
    for (std::size_t j : same)
      if (j != a) positives.push_back(j);
    std::vector<const UttInfo*> others;
    for (const auto& u : utts)
      if (u.speaker_id != utts[a].speaker_id) others.push_back(&u);
    require(others.size() >= negatives, ErrorKind::kDataset,
            fmt::format("only {} other-speaker utterances for {} negatives", others.size(),
                        negatives));
    std::uniform_int_distribution<std::size_t> pick(0, positives.size() - 1);
    const std::size_t p = positives[pick(rng)];
    append_group(set, utts[a].utt_id, utts[p].utt_id, others, negatives, rng);
  }
  return set;
}

TrialSet build_enrollment_trials(const std::vector<UttInfo>& utts, std::size_t pool,
                                 std::size_t negatives, std::uint64_t seed) {
  std::map<std::string, std::vector<std::size_t>> by_spk;
  for (std::size_t i = 0; i < utts.size(); ++i) by_spk[utts[i].speaker_id].push_back(i);
  require(by_spk.size() >= 2, ErrorKind::kDataset, "trials need at least 2 speakers");

  std::vector<const UttInfo*> tests;
  for (const auto& [spk, idx] : by_spk) {
    require(idx.size() > pool, ErrorKind::kDataset,
            fmt::format("speaker {} has {} utterances; enrollment needs more than {}", spk,
                        idx.size(), pool));
    for (std::size_t k = pool; k < idx.size(); ++k) tests.push_back(&utts[idx[k]]);
  }
  std::mt19937_64 rng(mix_seed(seed, 0xe1201));
  TrialSet set;
  for (const UttInfo* t : tests) {
    std::vector<const UttInfo*> others;
    for (const UttInfo* u : tests)
      if (u->speaker_id != t->speaker_id) others.push_back(u);
    require(others.size() >= negatives, ErrorKind::kDataset,
            fmt::format("only {} other-speaker test utterances for {} negatives",
                        others.size(), negatives));
    append_group(set, kEnrollPrefix + t->speaker_id, t->utt_id, others, negatives, rng);
  }
  return set;
}

void write_trials(const TrialSet& trials, const std::filesystem::path& path) {
  std::ofstream os(path);
  require(static_cast<bool>(os), ErrorKind::kIo, "cannot write " + path.string());
  for (const Trial& t : trials.trials)
    os << t.group << '\t' << t.anchor << '\t' << t.candidate << '\t'
       << (t.target ? "target" : "nontarget") << '\n';
  require(static_cast<bool>(os), ErrorKind::kIo, "failed writing " + path.string());
}

TrialSet read_trials(const std::filesystem::path& path) {
  std::ifstream is(path);
  require(static_cast<bool>(is), ErrorKind::kIo, "cannot open " + path.string());
  TrialSet set;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string group, label;
    Trial t;
    std::getline(ss, group, '\t');
    std::getline(ss, t.anchor, '\t');
    std::getline(ss, t.candidate, '\t');
    std::getline(ss, label, '\t');
    const std::string where = path.string() + ":" + std::to_string(lineno);
    require(label == "target" || label == "nontarget", ErrorKind::kParse,
            where + ": label must be target or nontarget");
    try {
      t.group = std::stoull(group);
    } catch (const std::exception&) {
      raise(ErrorKind::kParse, where + ": bad group id");
    }
    t.target = label == "target";
    set.trials.push_back(std::move(t));
  }
  return set;
}

EmbeddingTable embedding_table(const std::vector<SpeakerEmbedding>& embs) {
  EmbeddingTable table;
  for (const auto& e : embs) table[e.utt_id] = e.vector;
  return table;
}

std::vector<double> score_trials(const TrialSet& trials, const EmbeddingTable& table) {
  auto lookup = [&](const std::string& id) -> const std::vector<float>& {
    const auto it = table.find(id);
    require(it != table.end(), ErrorKind::kDataset, "no embedding for '" + id + "'");
    return it->second;
  };
  std::vector<double> scores(trials.trials.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const auto& a = lookup(trials.trials[i].anchor);
    const auto& b = lookup(trials.trials[i].candidate);
    scores[i] = cosine_similarity<float>(a, b);
  }
  return scores;
}

}  // namespace spkemb
