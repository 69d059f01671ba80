#include "spkemb/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>
#include <numeric>

#include "spkemb/error.hpp"

namespace spkemb {

EerResult compute_eer(std::span<const double> scores, std::span<const int> labels) {
  require(scores.size() == labels.size(), ErrorKind::kDimension,
          "scores and labels differ in length");
  std::size_t n_tgt = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    require(labels[i] == 0 || labels[i] == 1, ErrorKind::kContractViolation,
            "labels must be 0 or 1");
    require(std::isfinite(scores[i]), ErrorKind::kNonFinite, "non-finite score");
    n_tgt += static_cast<std::size_t>(labels[i]);
  }
  const std::size_t n_non = scores.size() - n_tgt;
  require(n_tgt > 0 && n_non > 0, ErrorKind::kContractViolation,
          "EER needs at least one target and one nontarget score");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  EerResult r;
  std::size_t tgt_below = 0;
  std::size_t non_below = 0;
  const double nt = static_cast<double>(n_tgt);
  const double nn = static_cast<double>(n_non);
  for (std::size_t i = 0; i < order.size();) {
    const double t = scores[order[i]];
    r.det.push_back({t, static_cast<double>(n_non - non_below) / nn,
                     static_cast<double>(tgt_below) / nt});
    for (; i < order.size() && scores[order[i]] == t; ++i) {
      if (labels[order[i]] == 1) {
        ++tgt_below;
      } else {
        ++non_below;
      }
    }
  }
  r.det.push_back({std::numeric_limits<double>::infinity(), 0.0, 1.0});

  for (std::size_t i = 1; i < r.det.size(); ++i) {
    const DetPoint& cur = r.det[i];
    const double d = cur.far - cur.frr;
    if (d > 0.0) continue;
    if (d == 0.0) {
      r.eer = cur.far;
      r.threshold = cur.threshold;
    } else {
      const DetPoint& prev = r.det[i - 1];
      const double d_prev = prev.far - prev.frr;
      const double a = d_prev / (d_prev - d);
      r.eer = prev.far + a * (cur.far - prev.far);
      r.threshold = std::isinf(cur.threshold)
                        ? prev.threshold
                        : prev.threshold + a * (cur.threshold - prev.threshold);
    }
    break;
  }
  return r;
}

double compute_acc(const TrialSet& trials, std::span<const double> scores) {
  require(scores.size() == trials.trials.size(), ErrorKind::kDimension,
          "scores and trials differ in length");
  const std::size_t groups = trials.num_groups();
  require(groups > 0, ErrorKind::kContractViolation, "ACC needs at least one group");
  std::vector<int> targets(groups, 0);
  std::vector<double> target_score(groups, 0.0);
  std::vector<double> best_non(groups, -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const Trial& t = trials.trials[i];
    require(t.group < groups, ErrorKind::kContractViolation, "group id out of range");
    if (t.target) {
      ++targets[t.group];
      target_score[t.group] = scores[i];
    } else {
      best_non[t.group] = std::max(best_non[t.group], scores[i]);
    }
  }
  std::size_t correct = 0;
  for (std::size_t g = 0; g < groups; ++g) {
    require(targets[g] == 1, ErrorKind::kContractViolation,
            fmt::format("group {} has {} targets", g, targets[g]));
    if (target_score[g] > best_non[g]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(groups);
}

SpeakerEmbedding enroll(const std::vector<SpeakerEmbedding>& embs, std::size_t n) {
  require(!embs.empty(), ErrorKind::kContractViolation, "enrollment needs embeddings");
  require(n >= 1 && n <= embs.size(), ErrorKind::kOutOfRange,
          fmt::format("enrollment count {} outside 1..{}", n, embs.size()));
  if (n == 1) return embs[0];
  const std::size_t dim = embs[0].vector.size();
  Tensor64 sum({dim}, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    require(embs[i].vector.size() == dim, ErrorKind::kDimension,
            "enrollment embeddings differ in dimension");
    for (std::size_t k = 0; k < dim; ++k) sum[k] += embs[i].vector[k];
  }
  const Tensor64 unit = l2_normalize(sum);
  SpeakerEmbedding out{embs[0].utt_id, embs[0].speaker_id, std::vector<float>(dim)};
  for (std::size_t k = 0; k < dim; ++k) out.vector[k] = static_cast<float>(unit[k]);
  return out;
}

void add_enrolled_models(EmbeddingTable& table, const std::vector<SpeakerEmbedding>& embs,
                         std::size_t pool, std::size_t n) {
  require(n <= pool, ErrorKind::kOutOfRange, "cannot average more than the enrollment pool");
  std::map<std::string, std::vector<SpeakerEmbedding>> by_spk;
  for (const auto& e : embs) {
    auto& v = by_spk[e.speaker_id];
    if (v.size() < pool) v.push_back(e);
  }
  for (const auto& [spk, v] : by_spk) {
    SpeakerEmbedding m = enroll(v, n);
    table[kEnrollPrefix + spk] = std::move(m.vector);
  }
}

SpeakerEmbedding fuse_embeddings(const SpeakerEmbedding& a, const SpeakerEmbedding& b) {
  require(a.vector.size() == b.vector.size(), ErrorKind::kDimension,
          "fused embeddings differ in dimension");
  const std::size_t dim = a.vector.size();
  Tensor64 sum({dim}, 0.0);
  for (std::size_t k = 0; k < dim; ++k) sum[k] = double(a.vector[k]) + double(b.vector[k]);
  double norm = 0.0;
  for (double v : sum.values()) norm += v * v;
  require(std::sqrt(norm) >= 1e-6, ErrorKind::kDegenerateEmbedding,
          "degenerate fusion: embeddings cancel out");
  const Tensor64 unit = l2_normalize(sum);
  SpeakerEmbedding out{a.utt_id, a.speaker_id, std::vector<float>(dim)};
  for (std::size_t k = 0; k < dim; ++k) out.vector[k] = static_cast<float>(unit[k]);
  return out;
}

std::vector<double> fuse_scores(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), ErrorKind::kDimension, "fused score lists differ in length");
  require(!a.empty(), ErrorKind::kContractViolation, "nothing to fuse");
  auto znorm = [](std::span<const double> s) {
    double mean = 0.0;
    for (double v : s) mean += v;
    mean /= static_cast<double>(s.size());
    double var = 0.0;
    for (double v : s) var += (v - mean) * (v - mean);
    var /= static_cast<double>(s.size());
    require(var > 0.0, ErrorKind::kContractViolation, "zero-variance score set");
    const double inv = 1.0 / std::sqrt(var);
    std::vector<double> out(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) out[i] = (s[i] - mean) * inv;
    return out;
  };
  std::vector<double> out = znorm(a);
  const std::vector<double> zb = znorm(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += zb[i];
  return out;
}

TrialSet cohort_filter(const TrialSet& trials, const TrialPredicate& keep) {
  const std::size_t groups = trials.num_groups();
  std::vector<bool> alive(groups, false);
  for (const Trial& t : trials.trials)
    if (t.target && keep(t)) alive[t.group] = true;
  std::vector<std::size_t> renumber(groups, 0);
  std::size_t next = 0;
  for (std::size_t g = 0; g < groups; ++g)
    if (alive[g]) renumber[g] = next++;
  TrialSet out;
  for (const Trial& t : trials.trials) {
    if (!alive[t.group]) continue;
    if (!t.target && !keep(t)) continue;
    Trial c = t;
    c.group = renumber[t.group];
    out.trials.push_back(std::move(c));
  }
  return out;
}

TrialSet time_span_filter(const TrialSet& trials,
                          const std::map<std::string, double>& stamps, double lo_s,
                          double hi_s) {
  return cohort_filter(trials, [&](const Trial& t) {
    if (!t.target) return true;
    const auto a = stamps.find(t.anchor);
    const auto c = stamps.find(t.candidate);
    if (a == stamps.end() || c == stamps.end()) return false;
    const double span = std::abs(a->second - c->second);
    return span >= lo_s && span < hi_s;
  });
}

std::map<std::string, double> timestamps(const Manifest& manifest) {
  std::map<std::string, double> out;
  for (const auto& r : manifest.records)
    if (r.timestamp) out[r.utt_id] = *r.timestamp;
  return out;
}

EvalReport evaluate(const TrialSet& trials, std::span<const double> scores,
                    const std::string& system) {
  const std::vector<int> labels = trials.labels();
  const EerResult eer = compute_eer(scores, labels);
  EvalReport r;
  r.system = system;
  r.eer_percent = 100.0 * eer.eer;
  r.acc_percent = 100.0 * compute_acc(trials, scores);
  r.threshold = eer.threshold;
  r.n_trials = trials.trials.size();
  r.n_groups = trials.num_groups();
  r.det = eer.det;
  return r;
}

void write_report_json(const EvalReport& report, const std::filesystem::path& path) {
  nlohmann::json j;
  j["system"] = report.system;
  j["eer_percent"] = report.eer_percent;
  j["acc_percent"] = report.acc_percent;
  j["threshold"] = report.threshold;
  j["n_trials"] = report.n_trials;
  j["n_groups"] = report.n_groups;
  j["cohort"] = report.cohort;
  j["det_points"] = report.det.size();
  std::ofstream os(path);
  require(static_cast<bool>(os), ErrorKind::kIo, "cannot write " + path.string());
  os << j.dump(2) << '\n';
}

void write_det_csv(const EvalReport& report, const std::filesystem::path& path) {
  std::ofstream os(path);
  require(static_cast<bool>(os), ErrorKind::kIo, "cannot write " + path.string());
  os << "threshold,far,frr\n";
  for (const DetPoint& p : report.det) {
    if (std::isinf(p.threshold)) {
      os << "inf";
    } else {
      os << fmt::format("{:.9g}", p.threshold);
    }
    os << fmt::format(",{:.9g},{:.9g}\n", p.far, p.frr);
  }
}

std::string results_table(const std::vector<EvalReport>& reports) {
  std::size_t width = 6;
  for (const auto& r : reports) width = std::max(width, r.system.size());
  std::string out = fmt::format("{:<{}} | {:>7} | {:>7}\n", "system", width, "EER[%]", "ACC[%]");
  out += std::string(width, '-') + "-+---------+--------\n";
  for (const auto& r : reports)
    out += fmt::format("{:<{}} | {:>7.2f} | {:>7.2f}\n", r.system, width, r.eer_percent,
                       r.acc_percent);
  return out;
}

}  // namespace spkemb
