#include "cli.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <charconv>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "spkemb/error.hpp"
#include "spkemb/eval.hpp"
#include "spkemb/io.hpp"
#include "spkemb/log.hpp"
#include "spkemb/manifest.hpp"
#include "spkemb/model.hpp"
#include "spkemb/parallel.hpp"
#include "spkemb/pipeline.hpp"
#include "spkemb/synth.hpp"
#include "spkemb/training.hpp"

namespace fs = std::filesystem;

namespace spkemb::cli {

const std::map<std::string, KeySpec>& key_table() {
  static const std::map<std::string, KeySpec> table{
      {"out", {"run", "run directory; each subcommand writes to <out>/<subcommand>"}},
      {"seed", {"0", "master seed"}},
      {"workers", {"0", "worker threads, 0 = all cores"}},
      {"arch", {"rescnn", "rescnn | gru | toy-rescnn | toy-gru"}},
      // synth
      {"n_speakers", {"10", "synth: speakers"}},
      {"utts_per_speaker", {"20", "synth: utterances per speaker"}},
      {"dur_s", {"3", "synth: voiced seconds per utterance"}},
      {"sample_rate", {"16000", "synth: sample rate"}},
      {"snr_db", {"20", "synth: noise level"}},
      {"time_span_days", {"120", "synth: spread of recording timestamps"}},
      // featurize
      {"manifest", {"", "featurize: manifest (default <out>/synth/manifest.tsv)"}},
      {"split", {"0.8,0.1,0.1", "featurize: train,dev,eval speaker fractions"}},
      {"features", {"", "feature cache (default <out>/featurize/features.bin)"}},
      // training
      {"pretrain_epochs", {"10", "pretrain: epochs"}},
      {"minibatch", {"64", "pretrain: chunks per step"}},
      {"chunk_frames", {"64", "training chunk length in frames"}},
      {"lr_start", {"0.05", "learning rate at the first step"}},
      {"lr_end", {"0.005", "learning rate at the last step"}},
      {"momentum", {"0.99", "SGD momentum"}},
      {"patience", {"3", "epochs without dev EER improvement before stopping"}},
      {"dev_negatives", {"99", "nontargets per dev trial group"}},
      {"finetune_epochs", {"15", "finetune: epochs"}},
      {"batch_pairs", {"64", "finetune: AP pairs per batch (2x chunks)"}},
      {"partitions", {"1", "finetune: partitions per batch"}},
      {"scan_k", {"0", "partitions scanned for negatives, 0 = all"}},
      {"alpha", {"0.1", "triplet margin"}},
      {"miner", {"hard", "hard | semi-hard | random"}},
      {"init", {"pretrain", "finetune: start from 'pretrain' or 'scratch'"}},
      // embed / evaluate / fuse
      {"model", {"finetune", "checkpoint path, or 'pretrain' / 'finetune' for <out>/<stage>/model.ckpt"}},
      {"eval_split", {"eval", "embed: train | dev | eval"}},
      {"embeddings", {"", "evaluate: embeddings (default <out>/embed/embeddings.jsonl)"}},
      {"negatives", {"99", "evaluate: nontargets per trial group"}},
      {"enroll", {"0", "evaluate: enrollment utterances averaged, 0 = utterance trials"}},
      {"enroll_pool", {"5", "evaluate: utterances per speaker reserved for enrollment"}},
      {"cohort_days", {"", "evaluate: time-span bucket edges in days, e.g. 0,7,30,90"}},
      {"system", {"", "evaluate/fuse: system label (default: arch of the run)"}},
      {"embeddings_a", {"", "fuse: first system's embeddings"}},
      {"embeddings_b", {"", "fuse: second system's embeddings"}},
      {"fusion", {"score", "fuse: score | embedding"}},
      // mine-stats
      {"scan_grid", {"1,2,4,8", "mine-stats: scan_k values"}},
      {"mine_partitions", {"8", "mine-stats: partitions per batch"}},
      {"mine_batches", {"4", "mine-stats: batches sampled"}},
  };
  return table;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::pair<std::string, std::string> split_kv(const std::string& text, const std::string& where) {
  const auto eq = text.find('=');
  require(eq != std::string::npos && eq > 0, ErrorKind::kConfiguration,
          fmt::format("{}: expected key=value, got '{}'", where, text));
  return {trim(text.substr(0, eq)), trim(text.substr(eq + 1))};
}

void check_key(const std::string& key, const std::string& where) {
  require(key_table().count(key) > 0, ErrorKind::kConfiguration,
          fmt::format("{}: unknown key '{}' (see spkemb --help)", where, key));
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

double parse_real(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double d = 0;
  try {
    d = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  require(used == v.size() && !v.empty(), ErrorKind::kConfiguration,
          fmt::format("{}: '{}' is not a number", key, v));
  return d;
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  std::size_t n = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), n);
  require(ec == std::errc() && p == v.data() + v.size() && !v.empty(), ErrorKind::kConfiguration,
          fmt::format("{}: '{}' is not a non-negative integer", key, v));
  return n;
}

fs::path or_default(const RunConfig& cfg, const std::string& key, const fs::path& fallback) {
  const std::string& v = cfg.str(key);
  return v.empty() ? fallback : fs::path(v);
}

void require_artifact(const fs::path& p, const std::string& what, const std::string& producer) {
  require(fs::exists(p), ErrorKind::kMissingArtifact,
          fmt::format("{} not found at {}; run `spkemb {}` first", what, p.string(), producer));
}

std::size_t workers(const RunConfig& cfg) {
  const std::size_t w = cfg.size("workers");
  return w == 0 ? default_workers() : w;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary);
  os << text;
  require(static_cast<bool>(os), ErrorKind::kIo, "failed writing " + p.string());
}

// ---- shared artifacts ------------------------------------------------------

fs::path features_path(const RunConfig& cfg) {
  return or_default(cfg, "features", cfg.out() / "featurize" / "features.bin");
}

fs::path splits_path(const RunConfig& cfg) { return features_path(cfg).parent_path() / "splits.tsv"; }

std::vector<FeatureMatrix> load_split(const RunConfig& cfg, const std::string& split) {
  require(split == "train" || split == "dev" || split == "eval", ErrorKind::kConfiguration,
          "split must be train, dev or eval, got '" + split + "'");
  const fs::path fp = features_path(cfg), sp = splits_path(cfg);
  require_artifact(fp, "feature cache", "featurize");
  require_artifact(sp, "speaker split", "featurize");
  std::ifstream in(sp);
  std::string line;
  std::set<std::string> speakers;
  std::getline(in, line);
  while (std::getline(in, line)) {
    const auto tab = line.find('\t');
    if (tab != std::string::npos && line.substr(tab + 1) == split) speakers.insert(line.substr(0, tab));
  }
  return select_speakers(read_feature_cache(fp), speakers);
}

fs::path model_path(const RunConfig& cfg) {
  const std::string& m = cfg.str("model");
  if (m == "pretrain" || m == "finetune") {
    const fs::path p = cfg.out() / m / "model.ckpt";
    require_artifact(p, "model checkpoint", m);
    return p;
  }
  require(fs::exists(m), ErrorKind::kMissingArtifact, "model checkpoint not found at " + m);
  return m;
}

std::optional<DevSet> load_dev(const RunConfig& cfg) {
  std::vector<FeatureMatrix> feats = load_split(cfg, "dev");
  std::map<std::string, std::size_t> per_spk;
  for (const auto& f : feats) ++per_spk[f.speaker_id];
  if (per_spk.size() < 2) {
    log_warn("dev split has fewer than 2 speakers; training without early stopping");
    return std::nullopt;
  }
  std::size_t negatives = cfg.size("dev_negatives");
  std::size_t available = feats.size();
  for (const auto& [spk, n] : per_spk) available = std::min(available, feats.size() - n);
  if (negatives > available) {
    log_warn(fmt::format("dev_negatives lowered from {} to {} for the dev split", negatives,
                         available));
    negatives = available;
  }
  return make_dev_set(std::move(feats), negatives, mix_seed(cfg.seed(), 0xde5));
}

OptimConfig optim(const RunConfig& cfg) {
  return {cfg.real("lr_start"), cfg.real("lr_end"), cfg.real("momentum")};
}

std::string system_name(const RunConfig& cfg, const std::string& fallback) {
  return cfg.str("system").empty() ? fallback : cfg.str("system");
}

// ---- subcommands -----------------------------------------------------------

int cmd_synth(const RunConfig& cfg) {
  SynthConfig s;
  s.n_speakers = cfg.size("n_speakers");
  s.utts_per_speaker = cfg.size("utts_per_speaker");
  s.dur_s = cfg.real("dur_s");
  s.sample_rate = static_cast<int>(cfg.size("sample_rate"));
  s.snr_db = cfg.real("snr_db");
  s.time_span_days = cfg.real("time_span_days");
  s.seed = cfg.seed();
  const Manifest m = synth_corpus(s, cfg.run_dir(), workers(cfg));
  std::cout << m.stats().table("synth");
  return 0;
}

int cmd_featurize(const RunConfig& cfg) {
  const fs::path mp = or_default(cfg, "manifest", cfg.out() / "synth" / "manifest.tsv");
  if (cfg.str("manifest").empty()) require_artifact(mp, "manifest", "synth");
  const Manifest m = parse_manifest(mp);
  const auto fr = split_list(cfg.str("split"));
  require(fr.size() == 3, ErrorKind::kConfiguration, "split needs three fractions train,dev,eval");
  const SpeakerSplit sp = split_speakers(
      m, {parse_real("split", fr[0]), parse_real("split", fr[1]), parse_real("split", fr[2])},
      cfg.seed());
  const auto feats = featurize_manifest(m, {}, workers(cfg));
  write_feature_cache(cfg.run_dir() / "features.bin", feats);
  std::string splits = "speaker_id\tsplit\n";
  std::map<std::string, std::string> assign;
  for (const auto& [name, part] :
       {std::pair{"train", &sp.train}, std::pair{"dev", &sp.dev}, std::pair{"eval", &sp.eval}})
    for (const auto& spk : part->speakers()) assign[spk] = name;
  for (const auto& [spk, name] : assign) splits += spk + "\t" + name + "\n";
  write_text(cfg.run_dir() / "splits.tsv", splits);
  std::cout << sp.train.stats().table("train") << sp.dev.stats().table("dev")
            << sp.eval.stats().table("eval");
  return 0;
}

int cmd_pretrain(const RunConfig& cfg) {
  const TrainingSet data = TrainingSet::from_features(load_split(cfg, "train"));
  ModelParams model = build(ArchSpec::from_name(cfg.str("arch")), cfg.seed());
  attach_softmax_head(model, data.num_classes(), mix_seed(cfg.seed(), 1));
  PretrainConfig pc;
  pc.epochs = cfg.size("pretrain_epochs");
  pc.minibatch = cfg.size("minibatch");
  pc.chunk_frames = cfg.size("chunk_frames");
  pc.optim = optim(cfg);
  pc.patience = cfg.size("patience");
  pc.seed = cfg.seed();
  pc.workers = workers(cfg);
  pc.checkpoint_dir = cfg.run_dir() / "epochs";
  const auto dev = load_dev(cfg);
  const TrainResult r = pretrain_softmax(model, data, pc, dev ? &*dev : nullptr);
  save_checkpoint(model, cfg.run_dir() / "model.ckpt");
  write_pretrain_csv(r, cfg.run_dir() / "metrics.csv");
  std::cout << fmt::format("pretrain: {} epochs, best epoch {}, {} steps\n", r.curve.size(),
                           r.best_epoch, r.steps);
  return 0;
}

int cmd_finetune(const RunConfig& cfg) {
  const TrainingSet data = TrainingSet::from_features(load_split(cfg, "train"));
  const ArchSpec arch = ArchSpec::from_name(cfg.str("arch"));
  ModelParams model;
  if (cfg.str("init") == "pretrain") {
    const fs::path p = cfg.out() / "pretrain" / "model.ckpt";
    require_artifact(p, "pretrained checkpoint", "pretrain");
    model = load_checkpoint(p, &arch);
    if (model.has_head()) detach_softmax_head(model);
  } else {
    require(cfg.str("init") == "scratch", ErrorKind::kConfiguration,
            "init must be 'pretrain' or 'scratch'");
    model = build(arch, cfg.seed());
  }
  FinetuneConfig fc;
  fc.epochs = cfg.size("finetune_epochs");
  fc.batch_pairs = cfg.size("batch_pairs");
  fc.partitions = cfg.size("partitions");
  fc.scan_k = cfg.size("scan_k");
  fc.alpha = cfg.real("alpha");
  fc.miner = miner_mode_from_name(cfg.str("miner"));
  fc.chunk_frames = cfg.size("chunk_frames");
  fc.optim = optim(cfg);
  fc.patience = cfg.size("patience");
  fc.seed = cfg.seed();
  fc.workers = workers(cfg);
  fc.checkpoint_dir = cfg.run_dir() / "epochs";
  const auto dev = load_dev(cfg);
  const TrainResult r = finetune_triplet(model, data, fc, dev ? &*dev : nullptr);
  save_checkpoint(model, cfg.run_dir() / "model.ckpt");
  write_finetune_csv(r, cfg.run_dir() / "metrics.csv");
  std::cout << fmt::format("finetune: {} epochs, best epoch {}, {} steps\n", r.curve.size(),
                           r.best_epoch, r.steps);
  return 0;
}

int cmd_embed(const RunConfig& cfg) {
  const ModelParams model = load_checkpoint(model_path(cfg));
  const auto feats = load_split(cfg, cfg.str("eval_split"));
  const auto embs = embed_all(model, feats, workers(cfg));
  write_embeddings_jsonl(cfg.run_dir() / "embeddings.jsonl", embs);
  std::cout << fmt::format("embedded {} utterances ({} split) to {}\n", embs.size(),
                           cfg.str("eval_split"), (cfg.run_dir() / "embeddings.jsonl").string());
  return 0;
}

std::vector<SpeakerEmbedding> load_embeddings(const fs::path& p, bool defaulted) {
  if (defaulted) require_artifact(p, "embeddings", "embed");
  require(fs::exists(p), ErrorKind::kMissingArtifact,
          "embeddings not found at " + p.string() + "; produce them with `spkemb embed`");
  return read_embeddings_jsonl(p);
}

std::vector<UttInfo> infos(const std::vector<SpeakerEmbedding>& embs) {
  std::vector<UttInfo> out;
  for (const auto& e : embs) out.push_back({e.utt_id, e.speaker_id});
  return out;
}

// Utterance trials, or enrollment trials with enrolled models added to the table.
TrialSet make_trials(const RunConfig& cfg, const std::vector<SpeakerEmbedding>& embs,
                     std::vector<EmbeddingTable*> tables) {
  const std::size_t n = cfg.size("enroll");
  if (n == 0) return build_trials(infos(embs), cfg.size("negatives"), cfg.seed());
  const std::size_t pool = cfg.size("enroll_pool");
  for (EmbeddingTable* t : tables) add_enrolled_models(*t, embs, pool, n);
  return build_enrollment_trials(infos(embs), pool, cfg.size("negatives"), cfg.seed());
}

int cmd_evaluate(const RunConfig& cfg) {
  const fs::path ep = or_default(cfg, "embeddings", cfg.out() / "embed" / "embeddings.jsonl");
  const auto embs = load_embeddings(ep, cfg.str("embeddings").empty());
  EmbeddingTable table = embedding_table(embs);
  const TrialSet trials = make_trials(cfg, embs, {&table});
  const auto scores = score_trials(trials, table);
  const std::string name = system_name(cfg, cfg.str("arch"));
  std::vector<EvalReport> reports{evaluate(trials, scores, name)};
  write_report_json(reports[0], cfg.run_dir() / "report.json");
  write_det_csv(reports[0], cfg.run_dir() / "det.csv");
  write_trials(trials, cfg.run_dir() / "trials.tsv");

  if (!cfg.str("cohort_days").empty()) {
    require(cfg.size("enroll") == 0, ErrorKind::kConfiguration,
            "cohort_days needs utterance trials (enroll=0): enrolled models have no timestamp");
    const fs::path mp = or_default(cfg, "manifest", cfg.out() / "synth" / "manifest.tsv");
    require_artifact(mp, "manifest with timestamps", "synth");
    const auto ts = timestamps(parse_manifest(mp, false));
    const auto edges = split_list(cfg.str("cohort_days"));
    for (std::size_t i = 0; i + 1 < edges.size(); ++i) {
      const double lo = parse_real("cohort_days", edges[i]) * 86400.0;
      const double hi = parse_real("cohort_days", edges[i + 1]) * 86400.0;
      const TrialSet sub = time_span_filter(trials, ts, lo, hi);
      const std::string cohort = fmt::format("{}-{}d", edges[i], edges[i + 1]);
      if (sub.trials.empty()) {
        log_warn("cohort " + cohort + " has no trials");
        continue;
      }
      EvalReport r = evaluate(sub, score_trials(sub, table), name + " " + cohort);
      r.cohort = cohort;
      write_report_json(r, cfg.run_dir() / ("report_" + cohort + ".json"));
      reports.push_back(std::move(r));
    }
  }
  std::cout << results_table(reports);
  return 0;
}

int cmd_fuse(const RunConfig& cfg) {
  require(!cfg.str("embeddings_a").empty() && !cfg.str("embeddings_b").empty(),
          ErrorKind::kConfiguration, "fuse needs embeddings_a=... and embeddings_b=...");
  const auto a = load_embeddings(cfg.str("embeddings_a"), false);
  const auto b = load_embeddings(cfg.str("embeddings_b"), false);
  require(a.size() == b.size(), ErrorKind::kDataset, "the two embedding files cover different utterances");
  EmbeddingTable ta = embedding_table(a), tb = embedding_table(b);
  for (const auto& [id, v] : ta)
    require(tb.count(id) > 0, ErrorKind::kDataset, id + " is missing from embeddings_b");
  const TrialSet trials = make_trials(cfg, a, {&ta});
  if (cfg.size("enroll") > 0) add_enrolled_models(tb, b, cfg.size("enroll_pool"), cfg.size("enroll"));
  const auto sa = score_trials(trials, ta), sb = score_trials(trials, tb);
  std::vector<double> fused;
  const std::string mode = cfg.str("fusion");
  if (mode == "score") {
    fused = fuse_scores(sa, sb);
  } else {
    require(mode == "embedding", ErrorKind::kConfiguration, "fusion must be 'score' or 'embedding'");
    EmbeddingTable tf;
    for (const auto& [id, v] : ta)
      tf[id] = fuse_embeddings({id, "", v}, {id, "", tb.at(id)}).vector;
    fused = score_trials(trials, tf);
  }
  const std::string name = system_name(cfg, "fusion");
  const std::vector<EvalReport> reports{evaluate(trials, sa, fs::path(cfg.str("embeddings_a")).stem().string()),
                                        evaluate(trials, sb, fs::path(cfg.str("embeddings_b")).stem().string()),
                                        evaluate(trials, fused, name + " (" + mode + ")")};
  write_report_json(reports[2], cfg.run_dir() / "report.json");
  write_det_csv(reports[2], cfg.run_dir() / "det.csv");
  std::cout << results_table(reports);
  return 0;
}

int cmd_mine_stats(const RunConfig& cfg) {
  ModelParams model = load_checkpoint(model_path(cfg));
  if (model.has_head()) detach_softmax_head(model);
  const TrainingSet data = TrainingSet::from_features(load_split(cfg, "train"));
  std::vector<std::size_t> grid;
  for (const auto& s : split_list(cfg.str("scan_grid"))) grid.push_back(parse_size("scan_grid", s));
  const auto batches =
      sample_miner_batches(model, data, cfg.size("mine_batches"), cfg.size("batch_pairs"),
                           cfg.size("mine_partitions"), cfg.size("chunk_frames"), cfg.seed());
  const auto stats = miner_stats(batches, grid, cfg.real("alpha"));
  std::string csv = "scan_k,prob_hard,relative_time_cost\n";
  for (const auto& s : stats)
    csv += fmt::format("{},{:.6f},{:.4f}\n", s.partitions_scanned, s.prob_hard, s.relative_time_cost);
  write_text(cfg.run_dir() / "mine_stats.csv", csv);
  std::cout << miner_stats_table(stats);
  return 0;
}

}  // namespace

const std::string& RunConfig::str(const std::string& key) const {
  const auto it = values.find(key);
  require(it != values.end(), ErrorKind::kConfiguration, "unknown key '" + key + "'");
  return it->second;
}

std::size_t RunConfig::size(const std::string& key) const { return parse_size(key, str(key)); }

double RunConfig::real(const std::string& key) const { return parse_real(key, str(key)); }

std::map<std::string, std::string> read_config_file(const fs::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::kIo, "cannot open config file " + path.string());
  std::map<std::string, std::string> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line.substr(0, line.find('#')));
    if (t.empty()) continue;
    const std::string where = fmt::format("{}:{}", path.string(), lineno);
    auto [k, v] = split_kv(t, where);
    check_key(k, where);
    out[k] = v;
  }
  return out;
}

RunConfig resolve_config(const std::string& subcommand, const fs::path& config_file,
                         const std::vector<std::pair<std::string, std::string>>& overrides) {
  RunConfig cfg;
  cfg.subcommand = subcommand;
  cfg.config_file = config_file;
  for (const auto& [k, spec] : key_table()) cfg.values[k] = spec.default_value;
  if (!config_file.empty())
    for (const auto& [k, v] : read_config_file(config_file)) cfg.values[k] = v;
  for (const auto& [k, v] : overrides) {
    check_key(k, "command line");
    cfg.values[k] = v;
  }
  return cfg;
}

std::string render_config(const RunConfig& cfg) {
  std::string out = fmt::format("# spkemb {}\n", cfg.subcommand);
  for (const auto& [k, v] : cfg.values) out += k + "=" + v + "\n";
  return out;
}

int run_subcommand(const RunConfig& cfg) {
  fs::create_directories(cfg.run_dir());
  RunConfig resolved = cfg;
  resolved.values["workers"] = std::to_string(workers(cfg));
  write_text(cfg.run_dir() / "config.resolved", render_config(resolved));
  write_text(cfg.run_dir() / "seed.txt", std::to_string(cfg.seed()) + "\n");
  const std::string& s = cfg.subcommand;
  if (s == "synth") return cmd_synth(cfg);
  if (s == "featurize") return cmd_featurize(cfg);
  if (s == "pretrain") return cmd_pretrain(cfg);
  if (s == "finetune") return cmd_finetune(cfg);
  if (s == "embed") return cmd_embed(cfg);
  if (s == "evaluate") return cmd_evaluate(cfg);
  if (s == "fuse") return cmd_fuse(cfg);
  if (s == "mine-stats") return cmd_mine_stats(cfg);
  raise(ErrorKind::kConfiguration, "unknown subcommand " + s);
}

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"spkemb: speaker embedding toolkit"};
  app.require_subcommand(1);
  std::string keys = "Configuration keys (key=value, in a --config file or as arguments):\n";
  for (const auto& [k, spec] : key_table())
    keys += fmt::format("  {:<18} {:<12} {}\n", k,
                        spec.default_value.empty() ? "-" : spec.default_value, spec.help);
  app.footer(keys);

  struct Args {
    std::string config;
    std::vector<std::string> overrides;
    std::map<std::string, std::string> flags;
  };
  std::map<std::string, Args> args;
  const std::vector<std::pair<std::string, std::string>> flag_keys{
      {"--seed", "seed"}, {"--out", "out"},       {"--arch", "arch"},
      {"--miner", "miner"}, {"--scan-k", "scan_k"}, {"--workers", "workers"}};
  const std::map<std::string, std::string> about{
      {"synth", "generate a synthetic speaker corpus and manifest"},
      {"featurize", "extract Fbank features and split speakers"},
      {"pretrain", "softmax pretraining on the train split"},
      {"finetune", "triplet fine-tuning with negative mining"},
      {"embed", "export utterance embeddings"},
      {"evaluate", "build trials and report EER, ACC and DET"},
      {"fuse", "score or embedding fusion of two systems"},
      {"mine-stats", "P(hard) and time cost against scan_k"}};
  for (const auto& name : kSubcommands) {
    CLI::App* sub = app.add_subcommand(name, about.at(name));
    Args& a = args[name];
    sub->add_option("--config", a.config, "key=value config file")->check(CLI::ExistingFile);
    for (const auto& [flag, key] : flag_keys) sub->add_option(flag, a.flags[key], key);
    sub->add_option("overrides", a.overrides, "key=value overrides");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  try {
    for (const auto& name : kSubcommands) {
      if (!app.got_subcommand(name)) continue;
      const Args& a = args[name];
      std::vector<std::pair<std::string, std::string>> ov;
      for (const auto& o : a.overrides) ov.push_back(split_kv(o, "command line"));
      for (const auto& [flag, key] : flag_keys) {
        const auto it = a.flags.find(key);
        if (!it->second.empty()) ov.emplace_back(key, it->second);
      }
      return run_subcommand(resolve_config(name, a.config, ov));
    }
  } catch (const Error& e) {
    std::cerr << "spkemb: " << e.what() << "\n";
    if (e.kind() == ErrorKind::kConfiguration) return 2;
    if (e.kind() == ErrorKind::kMissingArtifact) return 3;
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "spkemb: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace spkemb::cli
