// End-to-end acceptance runner. Prints one PASS/FAIL line per criterion and
// exits nonzero when any criterion fails.

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "grad_suite.hpp"
#include "oracles.hpp"
#include "spkemb/error.hpp"
#include "spkemb/eval.hpp"
#include "spkemb/log.hpp"
#include "spkemb/model.hpp"
#include "spkemb/parallel.hpp"
#include "spkemb/pipeline.hpp"
#include "spkemb/synth.hpp"
#include "spkemb/training.hpp"

using namespace spkemb;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string join(const std::vector<double>& v, const char* fmt_spec = "{:.2f}") {
  std::string s;
  for (double x : v) s += (s.empty() ? "" : " ") + fmt::format(fmt::runtime(fmt_spec), x);
  return s;
}

// ---- criterion 1 -----------------------------------------------------------

// A rounded figure like "151K" or "2.4M" matches a count when rounding or
// truncating the count to the figure's significant digits reproduces it.
bool matches_figure(std::size_t count, const std::string& figure) {
  const double scale = figure.back() == 'M' ? 1e6 : 1e3;
  const std::string digits = figure.substr(0, figure.size() - 1);
  const double value = std::stod(digits);
  std::string sig = digits;
  sig.erase(std::remove(sig.begin(), sig.end(), '.'), sig.end());
  sig.erase(0, sig.find_first_not_of('0'));
  while (sig.size() > 1 && sig.back() == '0') sig.pop_back();
  const int n_sig = static_cast<int>(sig.size());
  const double x = double(count) / scale;
  const double unit = std::pow(10.0, std::floor(std::log10(x)) - n_sig + 1);
  const double rounded = std::round(x / unit) * unit, truncated = std::floor(x / unit) * unit;
  return std::abs(rounded - value) < 1e-9 * scale || std::abs(truncated - value) < 1e-9 * scale;
}

std::size_t conv_bn(std::size_t k, std::size_t cin, std::size_t cout) {
  return k * k * cin * cout + 2 * 2048;
}
std::size_t gru_params(std::size_t in, std::size_t h) { return 3 * (in * h + h * h + h); }
std::size_t affine_params(std::size_t in, std::size_t out) { return in * out + out; }

struct LayerExpect {
  std::string layer;
  std::size_t params;
  std::size_t repeat;
  std::string figure;
};

Outcome criterion_parameter_counts() {
  const auto t0 = Clock::now();
  const std::vector<LayerExpect> rescnn{
      {"conv64-s", conv_bn(5, 1, 64), 1, "6K"},
      {"res64", conv_bn(3, 64, 64), 6, "41K"},
      {"conv128-s", conv_bn(5, 64, 128), 1, "209K"},
      {"res128", conv_bn(3, 128, 128), 6, "151K"},
      {"conv256-s", conv_bn(5, 128, 256), 1, "823K"},
      {"res256", conv_bn(3, 256, 256), 6, "594K"},
      {"conv512-s", conv_bn(5, 256, 512), 1, "3.3M"},
      {"res512", conv_bn(3, 512, 512), 6, "2.4M"},
      {"affine", affine_params(2048, 512), 1, "1M"}};
  const std::vector<LayerExpect> gru{{"conv64-s", conv_bn(5, 1, 64), 1, "6K"},
                                     {"gru1", gru_params(2048, 1024), 1, "9.4M"},
                                     {"gru2", gru_params(1024, 1024), 1, "6.3M"},
                                     {"gru3", gru_params(1024, 1024), 1, "6.3M"},
                                     {"affine", affine_params(1024, 512), 1, "500K"}};
  std::vector<std::string> problems;
  auto check = [&](const ArchSpec& arch, const std::vector<LayerExpect>& want,
                   std::size_t want_total, const std::string& total_figure) {
    std::vector<LayerCount> rows;
    for (const auto& r : layer_parameter_counts(arch))
      if (r.params > 0) rows.push_back(r);
    if (rows.size() != want.size()) problems.push_back(fmt::format("{} layer rows", arch.name));
    std::size_t oracle_total = 0;
    for (std::size_t i = 0; i < std::min(rows.size(), want.size()); ++i) {
      const auto& w = want[i];
      oracle_total += w.params * w.repeat;
      if (rows[i].layer != w.layer || rows[i].params != w.params || rows[i].repeat != w.repeat)
        problems.push_back(fmt::format("{} {}: {}x{} vs oracle {}x{}", arch.name, rows[i].layer,
                                       rows[i].params, rows[i].repeat, w.params, w.repeat));
      if (!matches_figure(rows[i].params, w.figure))
        problems.push_back(fmt::format("{} {}: {} does not round to {}", arch.name, w.layer,
                                       rows[i].params, w.figure));
    }
    const std::size_t total = expected_parameter_count(arch);
    const std::size_t built = build(arch, 0, false).parameter_count();
    if (total != want_total || oracle_total != want_total || built != want_total)
      problems.push_back(fmt::format("{} total {} (built {}, oracle {}) vs {}", arch.name, total,
                                     built, oracle_total, want_total));
    if (!matches_figure(total, total_figure))
      problems.push_back(fmt::format("{} total does not round to {}", arch.name, total_figure));
  };
  check(ArchSpec::rescnn(), rescnn, 24266816, "24M");
  check(ArchSpec::gru(), gru, 22559808, "23M");
  const double secs = seconds_since(t0);
  if (secs >= 1.0) problems.push_back(fmt::format("took {:.2f}s", secs));
  std::string detail = problems.empty()
                           ? fmt::format("rescnn 24266816, gru 22559808, all layers match ({:.2f}s)",
                                         secs)
                           : problems.front();
  return {problems.empty(), detail};
}

// ---- criterion 2 -----------------------------------------------------------

Outcome criterion_gradients() {
  const auto t0 = Clock::now();
  const auto reports = gradsuite::run_all(20240611, 10);
  const double secs = seconds_since(t0);
  bool ok = secs < 120.0 && reports.size() == 10;
  double worst = 0.0;
  std::string worst_layer;
  for (const auto& r : reports) {
    fmt::print("  {:<18} shapes {:>2}  max rel err {:.3e}\n", r.layer, r.shapes, r.max_rel_error);
    ok = ok && r.shapes >= 10 && r.max_rel_error < 1e-4;
    if (r.max_rel_error >= worst) {
      worst = r.max_rel_error;
      worst_layer = r.layer;
    }
  }
  return {ok, fmt::format("{} layers, worst {} {:.2e} ({:.1f}s)", reports.size(), worst_layer,
                          worst, secs)};
}

// ---- criterion 3 -----------------------------------------------------------

Outcome criterion_eer_oracle() {
  std::mt19937_64 rng(31337);
  std::size_t eer_mismatch = 0, acc_mismatch = 0;
  double max_diff = 0.0;
  for (int set = 0; set < 1000; ++set) {
    const std::size_t n = std::uniform_int_distribution<std::size_t>(2, 20)(rng);
    // Coarse score grid so ties are common.
    const int levels = std::uniform_int_distribution<int>(2, 12)(rng);
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      scores[i] = std::uniform_int_distribution<int>(0, levels)(rng) / double(levels);
      labels[i] = int(rng() & 1);
    }
    labels[0] = 1;
    labels[1] = 0;
    std::shuffle(labels.begin(), labels.end(), rng);
    const double got = compute_eer(scores, labels).eer;
    const double want = oracle::brute_force_eer(scores, labels);
    max_diff = std::max(max_diff, std::abs(got - want));
    eer_mismatch += got != want;

    TrialSet trials;
    std::vector<std::pair<double, std::vector<double>>> groups;
    std::vector<double> flat;
    const std::size_t n_groups = std::uniform_int_distribution<std::size_t>(1, 5)(rng);
    for (std::size_t g = 0; g < n_groups; ++g) {
      const std::size_t neg = std::uniform_int_distribution<std::size_t>(1, 4)(rng);
      auto draw = [&] { return std::uniform_int_distribution<int>(0, levels)(rng) / double(levels); };
      std::pair<double, std::vector<double>> grp{draw(), {}};
      trials.trials.push_back({g, "a", "t", true});
      flat.push_back(grp.first);
      for (std::size_t k = 0; k < neg; ++k) {
        grp.second.push_back(draw());
        trials.trials.push_back({g, "a", "n", false});
        flat.push_back(grp.second.back());
      }
      groups.push_back(std::move(grp));
    }
    acc_mismatch += compute_acc(trials, flat) != oracle::direct_acc(groups);
  }
  return {eer_mismatch == 0 && acc_mismatch == 0,
          fmt::format("1000 sets: {} EER mismatches (max diff {:.1e}), {} ACC mismatches",
                      eer_mismatch, max_diff, acc_mismatch)};
}

// ---- toy corpus ------------------------------------------------------------

struct ToyCorpus {
  std::vector<FeatureMatrix> train, dev, eval;
  TrainingSet data;
  DevSet dev_set;
  TrialSet eval_trials;
};

constexpr std::uint64_t kCorpusSeed = 7;

ToyCorpus make_toy_corpus(std::size_t workers) {
  SynthConfig sc;
  sc.n_speakers = 55;
  sc.utts_per_speaker = 20;
  sc.dur_s = 2.0;
  sc.seed = kCorpusSeed;
  const auto corpus = synth_corpus_memory(sc);
  Manifest m;
  for (const auto& u : corpus) m.records.push_back(u.record);
  const SpeakerSplit split = split_speakers(m, {40.0 / 55, 5.0 / 55, 10.0 / 55}, kCorpusSeed);
  require(split.train.speakers().size() == 40 && split.dev.speakers().size() == 5 &&
              split.eval.speakers().size() == 10,
          ErrorKind::kDataset, "toy split is not 40/5/10");
  const auto feats = featurize_corpus(corpus, {}, workers);
  ToyCorpus c;
  c.train = select_speakers(feats, speaker_set(split.train));
  c.dev = select_speakers(feats, speaker_set(split.dev));
  c.eval = select_speakers(feats, speaker_set(split.eval));
  c.data = TrainingSet::from_features(c.train);
  c.dev_set = make_dev_set(c.dev, 49, mix_seed(kCorpusSeed, 0xde5));
  c.eval_trials = build_trials(utt_infos(c.eval), 99, mix_seed(kCorpusSeed, 0xe1));
  return c;
}

struct TrainedSystem {
  ModelParams model;
  TrainResult pretrain;
  TrainResult finetune;
  std::vector<SpeakerEmbedding> eval_embs;
  std::vector<double> scores;
  EvalReport report;
};

struct Schedule {
  std::size_t pretrain_epochs = 10;
  std::size_t finetune_epochs = 15;
};

TrainedSystem train_system(const ToyCorpus& c, const std::string& arch, std::uint64_t seed,
                           Schedule sched, std::size_t workers) {
  TrainedSystem s;
  s.model = build(ArchSpec::from_name(arch), seed);
  if (sched.pretrain_epochs > 0) {
    attach_softmax_head(s.model, c.data.num_classes(), mix_seed(seed, 1));
    PretrainConfig pc;
    pc.epochs = sched.pretrain_epochs;
    pc.seed = seed;
    pc.workers = workers;
    s.pretrain = pretrain_softmax(s.model, c.data, pc, &c.dev_set);
    detach_softmax_head(s.model);
  }
  FinetuneConfig fc;
  fc.epochs = sched.finetune_epochs;
  fc.seed = seed;
  fc.workers = workers;
  s.finetune = finetune_triplet(s.model, c.data, fc, &c.dev_set);
  s.eval_embs = embed_all(s.model, c.eval, workers);
  s.scores = score_trials(c.eval_trials, embedding_table(s.eval_embs));
  s.report = evaluate(c.eval_trials, s.scores, arch);
  return s;
}

// ---- criterion 4 -----------------------------------------------------------

struct OracleMine {
  std::vector<std::size_t> negatives;
  double prob_hard = 0.0;
};

// Exhaustive scan over every candidate row, written independently of the
// library miner.
OracleMine oracle_hard_mine(const MinerBatch& b, std::size_t scan_k, double alpha) {
  const std::size_t N = b.plan.num_pairs, M = b.plan.partitions, per = N / M;
  const std::size_t D = b.embeddings.dim(1);
  auto dot = [&](std::size_t x, std::size_t y) {
    double s = 0.0;
    for (std::size_t d = 0; d < D; ++d)
      s += double(b.embeddings[x * D + d]) * b.embeddings[y * D + d];
    return s;
  };
  OracleMine out;
  std::size_t hard = 0;
  for (std::size_t i = 0; i < N; ++i) {
    const std::size_t home = i / per;
    const double s_ap = dot(2 * i, 2 * i + 1);
    std::size_t best = 2 * N;
    double best_s = -1e300;
    bool violator = false;
    for (std::size_t row = 0; row < 2 * N; ++row) {
      const std::size_t pair = row / 2, part = pair / per;
      if (b.speakers[pair] == b.speakers[i]) continue;
      if ((part + M - home) % M >= scan_k) continue;
      const double s = dot(2 * i, row);
      violator = violator || s > s_ap - alpha;
      if (s > best_s) {
        best_s = s;
        best = row;
      }
    }
    hard += violator;
    out.negatives.push_back(best);
  }
  out.prob_hard = double(hard) / double(N);
  return out;
}

Outcome criterion_miner(const TrainedSystem& sys, const ToyCorpus& c) {
  const double alpha = 0.1;
  const std::size_t M = 8;
  const auto batches = sample_miner_batches(sys.model, c.data, 6, 64, M, 64, 99);
  std::size_t monotone_fail = 0, oracle_fail = 0, checked = 0;
  for (const auto& b : batches) {
    if (b.embeddings.dim(0) > 256) ++oracle_fail;
    double prev = -1.0;
    for (std::size_t k = 1; k <= M; ++k) {
      const TripletBatch tb = mine_negatives(b.embeddings, b.speakers, b.plan, MinerMode::kHard,
                                             k, alpha);
      if (tb.prob_hard < prev) ++monotone_fail;
      prev = tb.prob_hard;
      const OracleMine om = oracle_hard_mine(b, k, alpha);
      bool same = om.prob_hard == tb.prob_hard && om.negatives.size() == tb.triplets.size();
      for (std::size_t i = 0; same && i < om.negatives.size(); ++i)
        same = om.negatives[i] == tb.triplets[i].negative;
      oracle_fail += !same;
      ++checked;
    }
  }
  std::vector<std::size_t> grid(M);
  for (std::size_t k = 0; k < M; ++k) grid[k] = k + 1;
  std::istringstream table(miner_stats_table(miner_stats(batches, grid, alpha, 1)));
  for (std::string line; std::getline(table, line);) fmt::print("  {}\n", line);
  return {monotone_fail == 0 && oracle_fail == 0,
          fmt::format("{} batches x {} scan widths: {} monotonicity breaks, {} oracle mismatches",
                      batches.size(), M, monotone_fail, oracle_fail)};
}

// ---- criterion 5 -----------------------------------------------------------

Outcome criterion_end_to_end(const TrainedSystem& sys, const ToyCorpus& c) {
  const double eer = sys.report.eer_percent, acc = sys.report.acc_percent;
  std::mt19937_64 rng(4242);
  const int draws = 20;
  std::vector<double> rand_eer, rand_acc;
  for (int d = 0; d < draws; ++d) {
    std::vector<SpeakerEmbedding> embs;
    for (const auto& f : c.eval)
      embs.push_back({f.utt_id, f.speaker_id, oracle::random_unit(128, rng)});
    const auto scores = score_trials(c.eval_trials, embedding_table(embs));
    const EvalReport r = evaluate(c.eval_trials, scores, "random");
    rand_eer.push_back(r.eer_percent);
    rand_acc.push_back(r.acc_percent);
  }
  double mean_eer = 0, mean_acc = 0;
  for (int d = 0; d < draws; ++d) {
    mean_eer += rand_eer[d] / draws;
    mean_acc += rand_acc[d] / draws;
  }
  const double base_rate = 100.0 / double(c.eval_trials.trials.size() / c.eval_trials.num_groups());
  const bool ok = eer < 10.0 && acc > 80.0 && std::abs(mean_eer - 50.0) <= 3.0 &&
                  std::abs(mean_acc - base_rate) <= 1.0;
  fmt::print("  trained: EER {:.2f}% ACC {:.2f}% on {} groups / {} trials\n", eer, acc,
             sys.report.n_groups, sys.report.n_trials);
  fmt::print("  random ({} draws): mean EER {:.2f}% mean ACC {:.2f}% (base rate {:.2f}%)\n", draws,
             mean_eer, mean_acc, base_rate);
  return {ok, fmt::format("EER {:.2f}% ACC {:.2f}%, random EER {:.2f}% ACC {:.2f}%", eer, acc,
                          mean_eer, mean_acc)};
}

// ---- criteria 6, 7, 8 ------------------------------------------------------

double enrolled_eer(const TrainedSystem& sys, const ToyCorpus& c, std::size_t n) {
  const TrialSet trials = build_enrollment_trials(utt_infos(c.eval), 5, 99, mix_seed(kCorpusSeed, 0xe2));
  EmbeddingTable table = embedding_table(sys.eval_embs);
  add_enrolled_models(table, sys.eval_embs, 5, n);
  const auto scores = score_trials(trials, table);
  return evaluate(trials, scores, "enroll").eer_percent;
}

// ---- criterion 9 -----------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

Outcome criterion_determinism(const ToyCorpus& c, std::size_t workers) {
  const fs::path dir = fs::temp_directory_path() / "spkemb_acceptance_determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::vector<std::string> files[2];
  for (int run = 0; run < 2; ++run) {
    const TrainedSystem s = train_system(c, "toy-rescnn", 5, {2, 2}, workers);
    const fs::path pre = dir / fmt::format("pretrain_{}.csv", run);
    const fs::path fine = dir / fmt::format("finetune_{}.csv", run);
    write_pretrain_csv(s.pretrain, pre);
    write_finetune_csv(s.finetune, fine);
    const fs::path det = dir / fmt::format("det_{}.csv", run);
    write_det_csv(s.report, det);
    files[run] = {slurp(pre), slurp(fine), slurp(det)};
  }
  const bool ok = files[0] == files[1] && !files[0][0].empty() && !files[0][1].empty();
  fs::remove_all(dir);
  return {ok, ok ? "pretrain, finetune and DET CSVs byte-identical across two runs"
                 : "metric CSVs differ between identical runs"};
}

}  // namespace

int main() {
  set_log_level("warn");
  const auto t0 = Clock::now();
  const std::size_t workers = default_workers();
  int failures = 0;
  auto report = [&](int id, const std::string& name, const Outcome& o) {
    fmt::print("criterion {}: {} {} - {}\n", id, o.pass ? "PASS" : "FAIL", name, o.detail);
    std::fflush(stdout);
    failures += !o.pass;
  };
  auto guarded = [&](const std::function<Outcome()>& fn) -> Outcome {
    try {
      return fn();
    } catch (const std::exception& e) {
      return {false, std::string("error: ") + e.what()};
    }
  };

  report(1, "parameter counts", guarded(criterion_parameter_counts));
  report(2, "gradient suite", guarded(criterion_gradients));
  report(3, "EER and ACC oracles", guarded(criterion_eer_oracle));

  const ToyCorpus corpus = make_toy_corpus(workers);
  fmt::print("  toy corpus: {} train / {} dev / {} eval utterances, {} eval trials ({:.0f}s)\n",
             corpus.train.size(), corpus.dev.size(), corpus.eval.size(),
             corpus.eval_trials.trials.size(), seconds_since(t0));

  const std::vector<std::uint64_t> seeds{1, 2, 3};
  std::vector<TrainedSystem> full, gru;
  std::vector<double> eer_full, eer_triplet, eer_gru, eer_fused, enroll1, enroll5;
  Outcome training_error{true, ""};
  try {
    for (std::uint64_t seed : seeds) {
      full.push_back(train_system(corpus, "toy-rescnn", seed, {}, workers));
      eer_full.push_back(full.back().report.eer_percent);
      eer_triplet.push_back(
          train_system(corpus, "toy-rescnn", seed, {0, 15}, workers).report.eer_percent);
      gru.push_back(train_system(corpus, "toy-gru", seed, {}, workers));
      eer_gru.push_back(gru.back().report.eer_percent);
      const auto fused = fuse_scores(full.back().scores, gru.back().scores);
      eer_fused.push_back(evaluate(corpus.eval_trials, fused, "fused").eer_percent);
      enroll1.push_back(enrolled_eer(full.back(), corpus, 1));
      enroll5.push_back(enrolled_eer(full.back(), corpus, 5));
      fmt::print("  seed {}: rescnn {:.2f}% triplet-only {:.2f}% gru {:.2f}% fused {:.2f}% "
                 "enroll1 {:.2f}% enroll5 {:.2f}% ({:.0f}s)\n",
                 seed, eer_full.back(), eer_triplet.back(), eer_gru.back(), eer_fused.back(),
                 enroll1.back(), enroll5.back(), seconds_since(t0));
      std::fflush(stdout);
    }
  } catch (const std::exception& e) {
    training_error = {false, std::string("error: ") + e.what()};
  }

  if (!training_error.pass) {
    for (int id = 4; id <= 8; ++id) report(id, "toy training", training_error);
  } else {
    report(4, "miner monotonicity", guarded([&] { return criterion_miner(full[0], corpus); }));
    report(5, "end-to-end toy", guarded([&] { return criterion_end_to_end(full[0], corpus); }));

    const double m_full = median(eer_full), m_trip = median(eer_triplet);
    report(6, "pretraining benefit",
           {m_full <= m_trip, fmt::format("median EER {:.2f}% with pretraining vs {:.2f}% "
                                          "triplet-only (seeds: {} / {})",
                                          m_full, m_trip, join(eer_full), join(eer_triplet))});

    const double m1 = median(enroll1), m5 = median(enroll5);
    report(7, "enrollment trend",
           {m5 <= m1, fmt::format("median EER {:.2f}% with 5 utterances vs {:.2f}% with 1", m5,
                                  m1)});

    std::vector<double> margin;
    for (std::size_t i = 0; i < seeds.size(); ++i)
      margin.push_back(eer_fused[i] - std::min(eer_full[i], eer_gru[i]));
    const double m_margin = median(margin);
    report(8, "score fusion",
           {m_margin <= 0.5, fmt::format("median fused minus best single {:+.2f} points "
                                         "(fused {} / rescnn {} / gru {})",
                                         m_margin, join(eer_fused), join(eer_full),
                                         join(eer_gru))});
  }

  report(9, "determinism", guarded([&] { return criterion_determinism(corpus, workers); }));

  fmt::print("{} of 9 criteria passed in {:.0f}s\n", 9 - failures, seconds_since(t0));
  return failures == 0 ? 0 : 1;
}
