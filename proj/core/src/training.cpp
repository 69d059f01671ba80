#include "spkemb/training.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <fstream>
#include <limits>
#include <map>
#include <random>
#include <set>

#include "spkemb/error.hpp"
#include "spkemb/log.hpp"
#include "spkemb/optim.hpp"
#include "spkemb/parallel.hpp"

namespace spkemb {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void momentum_update(ModelParams& model, const NamedTensors& grads, NamedTensors& velocity,
                     double lr, double mu) {
  for (NamedTensorRef& r : model.named_tensors()) {
    if (!r.trainable) continue;
    const auto g = grads.find(r.name);
    require(g != grads.end(), ErrorKind::kContractViolation, "no gradient for " + r.name);
    expect_shape(g->second.shape(), r.tensor->shape(), "gradient of " + r.name);
    auto [v, fresh] = velocity.try_emplace(r.name, r.tensor->shape(), 0.0f);
    float* pv = v->second.data();
    float* pp = r.tensor->data();
    const float* pg = g->second.data();
    for (std::size_t i = 0; i < r.tensor->size(); ++i) {
      pv[i] = static_cast<float>(mu * pv[i] - lr * pg[i]);
      pp[i] += pv[i];
    }
  }
}

Tensor crop_batch(const TrainingSet& data, const std::vector<ChunkRef>& refs, std::size_t len) {
  std::vector<FeatureMatrix> crops;
  crops.reserve(refs.size());
  for (const ChunkRef& r : refs) crops.push_back(crop_wrapped(data.utts[r.utt], r.offset, len));
  std::vector<const FeatureMatrix*> ptrs;
  for (const auto& c : crops) ptrs.push_back(&c);
  return make_batch(ptrs);
}

struct EarlyStopper {
  explicit EarlyStopper(std::size_t p) : patience(p) {}

  std::size_t patience;
  double best = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
  std::size_t since = 0;
  ModelParams snapshot;

  // Returns true when training should stop.
  bool update(const ModelParams& model, std::size_t epoch, double dev_eer) {
    if (dev_eer < best) {
      best = dev_eer;
      best_epoch = epoch;
      since = 0;
      snapshot = model;
      return false;
    }
    return ++since >= patience;
  }
};

void finish_epoch(ModelParams& model, const DevSet* dev, std::size_t workers,
                  EpochMetrics& m, TrainResult& result, EarlyStopper& stopper,
                  const std::filesystem::path& ckpt_dir, bool& stop) {
  model.epoch = m.epoch;
  if (dev) {
    std::tie(m.dev_eer, m.dev_acc) = dev_metrics(model, *dev, workers);
  } else {
    m.dev_eer = m.dev_acc = kNaN;
  }
  result.curve.push_back(m);
  if (!ckpt_dir.empty()) {
    std::filesystem::create_directories(ckpt_dir);
    save_checkpoint(model, ckpt_dir / fmt::format("epoch{:03d}.ckpt", m.epoch));
  }
  if (dev) stop = stopper.update(model, m.epoch, m.dev_eer);
}

void restore_best(ModelParams& model, TrainResult& result, EarlyStopper& stopper,
                  bool have_dev, bool stopped) {
  result.stopped_early = stopped;
  if (have_dev && stopper.best_epoch > 0) {
    model = std::move(stopper.snapshot);
    result.best_epoch = stopper.best_epoch;
  } else {
    result.best_epoch = result.curve.empty() ? 0 : result.curve.back().epoch;
  }
}

[[noreturn]] void diverged(ModelParams& model, const ModelParams& last_good, std::size_t epoch,
                           std::size_t step) {
  model = last_good;
  raise(ErrorKind::kDivergence,
        fmt::format("non-finite loss at epoch {} step {}; parameters restored to epoch {}",
                    epoch, step, last_good.epoch));
}

// Blown-up activations surface as degenerate or non-finite embeddings.
void forward_or_diverge(ModelParams& model, const Tensor& batch, ForwardTape& tape, bool head,
                        const ModelParams& last_good, std::size_t epoch, std::size_t step) {
  try {
    forward_batch(model, batch, Mode::kTrain, tape, head);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::kDegenerateEmbedding && e.kind() != ErrorKind::kNonFinite) throw;
    diverged(model, last_good, epoch, step);
  }
}

std::string fmt_metric(double v) { return std::isnan(v) ? "nan" : fmt::format("{:.6f}", v); }

}  // namespace

TrainingSet TrainingSet::from_features(std::vector<FeatureMatrix> feats) {
  TrainingSet set;
  std::set<std::string> ids;
  for (const auto& f : feats) ids.insert(f.speaker_id);
  set.speakers.assign(ids.begin(), ids.end());
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < set.speakers.size(); ++i) index[set.speakers[i]] = i;
  for (const auto& f : feats) set.labels.push_back(index[f.speaker_id]);
  set.utts = std::move(feats);
  return set;
}

PairList make_pairs(const TrainingSet& data, std::size_t chunk_frames, std::uint64_t seed,
                    std::size_t epoch) {
  require(chunk_frames >= 1, ErrorKind::kConfiguration, "chunk length must be >= 1");
  std::vector<std::vector<std::size_t>> by_spk(data.num_classes());
  for (std::size_t u = 0; u < data.utts.size(); ++u) by_spk[data.labels[u]].push_back(u);

  std::mt19937_64 rng(mix_seed(seed, epoch, 0xa9a1));
  auto offset = [&](std::size_t utt) {
    const std::size_t T = data.utts[utt].num_frames;
    require(T > 0, ErrorKind::kEmptyUtterance, data.utts[utt].utt_id + " has no frames");
    const std::size_t span = T >= chunk_frames ? T - chunk_frames + 1 : T;
    return std::uniform_int_distribution<std::size_t>(0, span - 1)(rng);
  };
  PairList out;
  for (std::size_t s = 0; s < by_spk.size(); ++s) {
    auto utts = by_spk[s];
    if (utts.size() < 2) {
      ++out.skipped_speakers;
      continue;
    }
    std::shuffle(utts.begin(), utts.end(), rng);
    for (std::size_t k = 0; k + 1 < utts.size(); k += 2)
      out.pairs.push_back({{utts[k], offset(utts[k])}, {utts[k + 1], offset(utts[k + 1])}, s});
    if (utts.size() % 2 == 1) {
      const std::size_t last = utts.back();
      const std::size_t other =
          utts[std::uniform_int_distribution<std::size_t>(0, utts.size() - 2)(rng)];
      out.pairs.push_back({{last, offset(last)}, {other, offset(other)}, s});
    }
  }
  require(!out.pairs.empty(), ErrorKind::kDataset,
          "no speaker has two utterances; cannot form anchor-positive pairs");
  if (out.skipped_speakers > 0)
    log_warn(fmt::format("make_pairs: skipped {} speaker(s) with a single utterance",
                         out.skipped_speakers));
  std::shuffle(out.pairs.begin(), out.pairs.end(), rng);
  return out;
}

std::vector<SpeakerEmbedding> embed_all(const ModelParams& model,
                                        const std::vector<FeatureMatrix>& feats,
                                        std::size_t workers) {
  std::vector<SpeakerEmbedding> out(feats.size());
  parallel_for(feats.size(), workers, [&](std::size_t i) { out[i] = forward_embed(model, feats[i]); });
  return out;
}

std::pair<double, double> dev_metrics(const ModelParams& model, const DevSet& dev,
                                      std::size_t workers) {
  const auto embs = embed_all(model, dev.utts, workers);
  const std::vector<double> scores = score_trials(dev.trials, embedding_table(embs));
  const EvalReport r = evaluate(dev.trials, scores);
  return {r.eer_percent, r.acc_percent};
}

TrainResult pretrain_softmax(ModelParams& model, const TrainingSet& data,
                             const PretrainConfig& cfg, const DevSet* dev,
                             const StepHook& hook) {
  require(model.has_head(), ErrorKind::kConfiguration, "pretraining needs a softmax head");
  require(model.arch.num_classes == data.num_classes(), ErrorKind::kConfiguration,
          fmt::format("head has {} classes but the training set has {} speakers",
                      model.arch.num_classes, data.num_classes()));
  require(cfg.minibatch >= 1 && cfg.epochs >= 1, ErrorKind::kConfiguration,
          "epochs and minibatch must be positive");
  require(cfg.chunk_frames >= min_frames(model.arch), ErrorKind::kConfiguration,
          fmt::format("chunk of {} frames is shorter than the model minimum {}",
                      cfg.chunk_frames, min_frames(model.arch)));

  std::vector<ChunkRef> chunks;
  for (std::size_t u = 0; u < data.utts.size(); ++u) {
    const std::size_t T = data.utts[u].num_frames;
    require(T > 0, ErrorKind::kEmptyUtterance, data.utts[u].utt_id + " has no frames");
    const std::size_t n = (T + cfg.chunk_frames - 1) / cfg.chunk_frames;
    for (std::size_t k = 0; k < n; ++k) chunks.push_back({u, k * cfg.chunk_frames});
  }
  require(!chunks.empty(), ErrorKind::kDataset, "empty training set");
  const std::size_t per_epoch = (chunks.size() + cfg.minibatch - 1) / cfg.minibatch;
  const std::size_t total = cfg.epochs * per_epoch;

  TrainResult result;
  EarlyStopper stopper(cfg.patience);
  NamedTensors velocity;
  ModelParams last_good = model;
  bool stop = false;
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs && !stop; ++epoch) {
    std::vector<ChunkRef> order = chunks;
    std::mt19937_64 rng(mix_seed(cfg.seed, epoch, 0x50f7));
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.minibatch) {
      const std::size_t B = std::min(cfg.minibatch, order.size() - start);
      const std::vector<ChunkRef> refs(order.begin() + start, order.begin() + start + B);
      ForwardTape tape;
      forward_or_diverge(model, crop_batch(data, refs, cfg.chunk_frames), tape, true, last_good, epoch,
                         step);
      const std::size_t K = data.num_classes();
      Tensor d_logits({B, K});
      double loss = 0.0;
      for (std::size_t b = 0; b < B; ++b) {
        const std::size_t label = data.labels[refs[b].utt];
        std::span<const float> row(tape.logits.data() + b * K, K);
        const auto sx = softmax_xent(row, label);
        loss += sx.loss;
        for (std::size_t k = 0; k < K; ++k)
          d_logits[b * K + k] = static_cast<float>(sx.d_logits[k] / double(B));
        if (std::max_element(row.begin(), row.end()) - row.begin() == std::ptrdiff_t(label))
          ++correct;
      }
      if (!std::isfinite(loss)) diverged(model, last_good, epoch, step);
      loss_sum += loss;
      const NamedTensors grads = backward(model, tape, {}, d_logits);
      momentum_update(model, grads, velocity,
                      lr_schedule(step, std::max<std::size_t>(total - 1, 1), cfg.optim.lr_start,
                                  cfg.optim.lr_end),
                      cfg.optim.momentum);
      if (hook) hook(step, loss / double(B));
      ++step;
    }
    EpochMetrics m;
    m.epoch = epoch;
    m.loss = loss_sum / double(order.size());
    m.train_acc = 100.0 * double(correct) / double(order.size());
    m.mean_sap = m.mean_san = m.prob_hard = kNaN;
    finish_epoch(model, dev, cfg.workers, m, result, stopper, cfg.checkpoint_dir, stop);
    log_info(fmt::format("pretrain epoch {}: loss {:.4f} acc {:.2f}% dev EER {:.2f}%", epoch,
                         m.loss, m.train_acc, m.dev_eer));
    last_good = model;
  }
  result.steps = step;
  restore_best(model, result, stopper, dev != nullptr, stop);
  return result;
}

TrainResult finetune_triplet(ModelParams& model, const TrainingSet& data,
                             const FinetuneConfig& cfg, const DevSet* dev,
                             const StepHook& hook) {
  require(!model.has_head(), ErrorKind::kConfiguration,
          "detach the softmax head before triplet fine-tuning");
  require(cfg.epochs >= 1 && cfg.batch_pairs >= 1 && cfg.partitions >= 1,
          ErrorKind::kConfiguration, "epochs, batch_pairs and partitions must be positive");
  require(cfg.batch_pairs % cfg.partitions == 0, ErrorKind::kConfiguration,
          fmt::format("batch of {} pairs does not split into {} partitions", cfg.batch_pairs,
                      cfg.partitions));
  require(cfg.chunk_frames >= min_frames(model.arch), ErrorKind::kConfiguration,
          fmt::format("chunk of {} frames is shorter than the model minimum {}",
                      cfg.chunk_frames, min_frames(model.arch)));
  const std::size_t scan_k = cfg.scan_k == 0 ? cfg.partitions : cfg.scan_k;
  require(scan_k <= cfg.partitions, ErrorKind::kConfiguration,
          fmt::format("scan_k {} exceeds {} partitions", scan_k, cfg.partitions));

  // Every epoch yields the same number of pairs, so the step count is fixed.
  // Leftover pairs are dropped: a short tail can hold a single speaker.
  auto batch_sizes = [&](std::size_t n_pairs) {
    return std::vector<std::size_t>(n_pairs / cfg.batch_pairs, cfg.batch_pairs);
  };
  const std::size_t per_epoch = batch_sizes(make_pairs(data, cfg.chunk_frames, cfg.seed, 1).pairs.size()).size();
  require(per_epoch > 0, ErrorKind::kDataset, "too few pairs for one batch");
  const std::size_t total = cfg.epochs * per_epoch;

  TrainResult result;
  EarlyStopper stopper(cfg.patience);
  NamedTensors velocity;
  ModelParams last_good = model;
  bool stop = false;
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs && !stop; ++epoch) {
    const PairList pl = make_pairs(data, cfg.chunk_frames, cfg.seed, epoch);
    double loss_sum = 0.0, sap_sum = 0.0, san_sum = 0.0, hard_sum = 0.0;
    std::size_t n_trip = 0;
    std::size_t start = 0;
    const auto sizes = batch_sizes(pl.pairs.size());
    for (std::size_t bi = 0; bi < sizes.size(); ++bi) {
      const std::size_t N = sizes[bi];
      std::vector<ChunkRef> refs;
      std::vector<std::size_t> speakers;
      for (std::size_t i = start; i < start + N; ++i) {
        refs.push_back(pl.pairs[i].anchor);
        refs.push_back(pl.pairs[i].positive);
        speakers.push_back(pl.pairs[i].speaker);
      }
      start += N;
      ForwardTape tape;
      forward_or_diverge(model, crop_batch(data, refs, cfg.chunk_frames), tape, false, last_good,
                         epoch, step);
      const Tensor& E = tape.embedding;
      if (!E.all_finite()) diverged(model, last_good, epoch, step);
      const BatchPlan plan{N, cfg.partitions, cfg.seed, epoch, bi};
      const TripletBatch tb = mine_negatives(E, speakers, plan, cfg.miner, scan_k, cfg.alpha);

      const std::size_t D = E.dim(1);
      Tensor d_emb(E.shape(), 0.0f);
      double loss = 0.0;
      for (const Triplet& t : tb.triplets) {
        sap_sum += t.s_ap;
        san_sum += t.s_an;
        const TripletTerm term = triplet_loss(t.s_ap, t.s_an, cfg.alpha);
        loss += term.loss;
        if (term.loss <= 0.0) continue;
        for (std::size_t d = 0; d < D; ++d) {
          const float ea = E[t.anchor * D + d], ep = E[t.positive * D + d],
                      en = E[t.negative * D + d];
          d_emb[t.anchor * D + d] += static_cast<float>(term.d_sap * ep + term.d_san * en);
          d_emb[t.positive * D + d] += static_cast<float>(term.d_sap * ea);
          d_emb[t.negative * D + d] += static_cast<float>(term.d_san * ea);
        }
      }
      if (!std::isfinite(loss)) diverged(model, last_good, epoch, step);
      loss_sum += loss;
      hard_sum += tb.prob_hard * double(N);
      n_trip += N;
      const NamedTensors grads = backward(model, tape, d_emb, {});
      momentum_update(model, grads, velocity,
                      lr_schedule(step, std::max<std::size_t>(total - 1, 1), cfg.optim.lr_start,
                                  cfg.optim.lr_end),
                      cfg.optim.momentum);
      if (hook) hook(step, loss);
      ++step;
    }
    EpochMetrics m;
    m.epoch = epoch;
    m.loss = loss_sum / double(n_trip);
    m.train_acc = kNaN;
    m.mean_sap = sap_sum / double(n_trip);
    m.mean_san = san_sum / double(n_trip);
    m.prob_hard = hard_sum / double(n_trip);
    finish_epoch(model, dev, cfg.workers, m, result, stopper, cfg.checkpoint_dir, stop);
    log_info(fmt::format("finetune epoch {}: loss {:.4f} s_ap {:.3f} s_an {:.3f} hard {:.2f} "
                         "dev EER {:.2f}%",
                         epoch, m.loss, m.mean_sap, m.mean_san, m.prob_hard, m.dev_eer));
    last_good = model;
  }
  result.steps = step;
  restore_best(model, result, stopper, dev != nullptr, stop);
  return result;
}

void write_pretrain_csv(const TrainResult& result, const std::filesystem::path& path) {
  std::ofstream os(path);
  require(static_cast<bool>(os), ErrorKind::kIo, "cannot write " + path.string());
  os << "epoch,loss,train_acc,dev_eer,dev_acc\n";
  for (const auto& m : result.curve)
    os << m.epoch << ',' << fmt_metric(m.loss) << ',' << fmt_metric(m.train_acc) << ','
       << fmt_metric(m.dev_eer) << ',' << fmt_metric(m.dev_acc) << '\n';
}

void write_finetune_csv(const TrainResult& result, const std::filesystem::path& path) {
  std::ofstream os(path);
  require(static_cast<bool>(os), ErrorKind::kIo, "cannot write " + path.string());
  os << "epoch,loss,mean_sap,mean_san,prob_hard,dev_eer,dev_acc\n";
  for (const auto& m : result.curve)
    os << m.epoch << ',' << fmt_metric(m.loss) << ',' << fmt_metric(m.mean_sap) << ','
       << fmt_metric(m.mean_san) << ',' << fmt_metric(m.prob_hard) << ','
       << fmt_metric(m.dev_eer) << ',' << fmt_metric(m.dev_acc) << '\n';
}

}  // namespace spkemb
