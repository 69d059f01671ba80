#include "spkemb/model.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <random>

namespace spkemb {
namespace {

const Conv2dGeometry kStride2{2, 2, 2, 2};
constexpr std::size_t kStageKernel = 5;
constexpr std::size_t kBlockKernel = 3;

std::string stage_name(std::size_t channels) { return "conv" + std::to_string(channels) + "-s"; }
std::string res_name(std::size_t channels) { return "res" + std::to_string(channels); }

std::size_t ceil_half(std::size_t n) { return (n + 1) / 2; }

void he_uniform(Tensor& t, std::size_t fan_in, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (float& v : t.values()) v = static_cast<float>(dist(rng));
}

/// Each H x H gate block of U becomes an independent random orthogonal matrix.
void orthogonal_gates(Tensor& U, std::mt19937_64& rng) {
  const std::size_t H = U.dim(0);
  const std::size_t gates = U.dim(1) / H;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t g = 0; g < gates; ++g) {
    Eigen::MatrixXd a(H, H);
    for (Eigen::Index i = 0; i < a.rows(); ++i)
      for (Eigen::Index j = 0; j < a.cols(); ++j) a(i, j) = normal(rng);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(H, H);
    // Sign fix so the distribution is uniform over orthogonal matrices.
    const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (Eigen::Index j = 0; j < q.cols(); ++j)
      if (r(j, j) < 0) q.col(j) *= -1.0;
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < H; ++j)
        U[i * U.dim(1) + g * H + j] = static_cast<float>(q(static_cast<Eigen::Index>(i),
                                                           static_cast<Eigen::Index>(j)));
  }
}

void push_bn(std::vector<NamedTensorRef>& out, const std::string& prefix,
             BatchNormParams<float>& bn) {
  out.push_back({prefix + "/gamma", &bn.gamma, true});
  out.push_back({prefix + "/beta", &bn.beta, true});
  out.push_back({prefix + "/running_mean", &bn.running_mean, false});
  out.push_back({prefix + "/running_var", &bn.running_var, false});
}

/// [B,C,T,F] -> [B,T,C*F] with feature index c*F + f.
Tensor to_sequence(const Tensor& x) {
  const std::size_t B = x.dim(0), C = x.dim(1), T = x.dim(2), F = x.dim(3);
  Tensor y({B, T, C * F});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t t = 0; t < T; ++t) {
        const float* src = x.data() + ((b * C + c) * T + t) * F;
        std::copy_n(src, F, y.data() + (b * T + t) * C * F + c * F);
      }
  return y;
}

Tensor from_sequence(const Tensor& y, const Shape& map_shape) {
  const std::size_t B = map_shape[0], C = map_shape[1], T = map_shape[2], F = map_shape[3];
  Tensor x(map_shape);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t t = 0; t < T; ++t)
        std::copy_n(y.data() + (b * T + t) * C * F + c * F, F,
                    x.data() + ((b * C + c) * T + t) * F);
  return x;
}

void add_into(NamedTensors& grads, const std::string& prefix, NamedTensors&& part) {
  for (auto& [k, v] : part) grads.insert_or_assign(prefix + "/" + k, std::move(v));
}

}  // namespace

// ---- architecture ------------------------------------------------------------

ArchSpec ArchSpec::rescnn() { return ArchSpec{}; }

ArchSpec ArchSpec::gru() {
  ArchSpec a;
  a.kind = ArchKind::kGRU;
  a.name = "gru";
  a.channels = {64};
  a.blocks_per_stage = 0;
  a.gru_units = {1024, 1024, 1024};
  return a;
}

ArchSpec ArchSpec::toy_rescnn() {
  ArchSpec a;
  a.name = "toy-rescnn";
  a.channels = {8, 16};
  a.blocks_per_stage = 1;
  a.embed_dim = 128;
  return a;
}

ArchSpec ArchSpec::toy_gru() {
  ArchSpec a = gru();
  a.name = "toy-gru";
  a.channels = {8};
  a.gru_units = {64, 64};
  a.embed_dim = 128;
  return a;
}

ArchSpec ArchSpec::from_name(const std::string& name) {
  if (name == "rescnn") return rescnn();
  if (name == "gru") return gru();
  if (name == "toy-rescnn") return toy_rescnn();
  if (name == "toy-gru") return toy_gru();
  raise(ErrorKind::kConfiguration,
        "unknown architecture '" + name + "' (rescnn, gru, toy-rescnn, toy-gru)");
}

bool ArchSpec::same_trunk(const ArchSpec& o) const {
  return kind == o.kind && input_freq == o.input_freq && embed_dim == o.embed_dim &&
         channels == o.channels && blocks_per_stage == o.blocks_per_stage &&
         gru_units == o.gru_units;
}

void validate(const ArchSpec& a) {
  require(a.input_freq >= 2 && a.embed_dim >= 1, ErrorKind::kConfiguration,
          "architecture needs input_freq >= 2 and embed_dim >= 1");
  require(!a.channels.empty(), ErrorKind::kConfiguration,
          "architecture needs at least one conv stage");
  for (std::size_t c : a.channels)
    require(c > 0, ErrorKind::kConfiguration, "zero-width conv stage");
  if (a.kind == ArchKind::kGRU) {
    require(a.channels.size() == 1 && a.blocks_per_stage == 0, ErrorKind::kConfiguration,
            "GRU architecture takes exactly one conv stage and no residual blocks");
    require(!a.gru_units.empty(), ErrorKind::kConfiguration, "GRU architecture needs layers");
    for (std::size_t u : a.gru_units)
      require(u > 0, ErrorKind::kConfiguration, "zero-width GRU layer");
  } else {
    require(a.gru_units.empty(), ErrorKind::kConfiguration,
            "ResCNN architecture cannot carry GRU layers");
  }
  require(a.input_freq >> a.channels.size() >= 1, ErrorKind::kConfiguration,
          "too many stride-2 stages for the frequency axis");
}

std::size_t stage_freq(const ArchSpec& a, std::size_t stage) {
  std::size_t f = a.input_freq;
  for (std::size_t s = 0; s <= stage; ++s) f = ceil_half(f);
  return f;
}

std::size_t pooled_dim(const ArchSpec& a) {
  if (a.kind == ArchKind::kGRU) return a.gru_units.back();
  return a.channels.back() * stage_freq(a, a.channels.size() - 1);
}

std::size_t min_frames(const ArchSpec& a) {
  return a.kind == ArchKind::kResCNN ? (std::size_t{1} << a.channels.size()) : 2;
}

std::size_t frames_after_frontend(const ArchSpec& a, std::size_t frames) {
  for (std::size_t s = 0; s < a.channels.size(); ++s) frames = ceil_half(frames);
  return frames;
}

std::vector<LayerCount> layer_parameter_counts(const ArchSpec& a) {
  validate(a);
  std::vector<LayerCount> rows;
  std::size_t prev = 1;
  for (std::size_t s = 0; s < a.channels.size(); ++s) {
    const std::size_t c = a.channels[s];
    const std::size_t units = c * stage_freq(a, s);
    rows.push_back({stage_name(c), prev * c * kStageKernel * kStageKernel + 2 * units, 1});
    if (a.kind == ArchKind::kResCNN && a.blocks_per_stage > 0) {
      rows.push_back({res_name(c), c * c * kBlockKernel * kBlockKernel + 2 * units,
                      2 * a.blocks_per_stage});
    }
    prev = c;
  }
  if (a.kind == ArchKind::kGRU) {
    std::size_t in = a.channels[0] * stage_freq(a, 0);
    for (std::size_t l = 0; l < a.gru_units.size(); ++l) {
      const std::size_t h = a.gru_units[l];
      rows.push_back({"gru" + std::to_string(l + 1), 3 * ((in + h) * h + h), 1});
      in = h;
    }
  }
  rows.push_back({"average", 0, 1});
  rows.push_back({"affine", pooled_dim(a) * a.embed_dim + a.embed_dim, 1});
  rows.push_back({"ln", 0, 1});
  if (a.num_classes > 0)
    rows.push_back({"softmax", a.embed_dim * a.num_classes + a.num_classes, 1});
  return rows;
}

std::size_t expected_parameter_count(const ArchSpec& a) {
  std::size_t n = 0;
  for (const LayerCount& r : layer_parameter_counts(a)) n += r.total();
  return n;
}

// ---- parameters --------------------------------------------------------------

std::vector<NamedTensorRef> ModelParams::named_tensors() {
  std::vector<NamedTensorRef> out;
  for (StageParams& st : stages) {
    const std::string sn = stage_name(st.channels);
    out.push_back({sn + "/W", &st.conv, true});
    push_bn(out, sn + "/bn", st.bn);
    for (std::size_t i = 0; i < st.blocks.size(); ++i) {
      const std::string bn = res_name(st.channels) + "/" + std::to_string(i + 1);
      ResBlockParams<float>& b = st.blocks[i];
      out.push_back({bn + "/conv1/W", &b.conv1, true});
      push_bn(out, bn + "/bn1", b.bn1);
      out.push_back({bn + "/conv2/W", &b.conv2, true});
      push_bn(out, bn + "/bn2", b.bn2);
    }
  }
  for (std::size_t l = 0; l < grus.size(); ++l) {
    const std::string gn = "gru" + std::to_string(l + 1);
    out.push_back({gn + "/W", &grus[l].W, true});
    out.push_back({gn + "/U", &grus[l].U, true});
    out.push_back({gn + "/b", &grus[l].b, true});
  }
  out.push_back({"affine/W", &affine_W, true});
  out.push_back({"affine/b", &affine_b, true});
  if (has_head()) {
    out.push_back({"softmax/W", &head_W, true});
    out.push_back({"softmax/b", &head_b, true});
  }
  return out;
}

std::vector<ConstNamedTensorRef> ModelParams::named_tensors() const {
  std::vector<ConstNamedTensorRef> out;
  for (const NamedTensorRef& r : const_cast<ModelParams*>(this)->named_tensors())
    out.push_back({r.name, r.tensor, r.trainable});
  return out;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& r : named_tensors())
    if (r.trainable) n += r.tensor->size();
  return n;
}

ModelParams build(const ArchSpec& arch, std::uint64_t seed, bool initialize) {
  validate(arch);
  ModelParams p;
  p.arch = arch;
  p.arch.num_classes = 0;
  p.seed = seed;
  std::mt19937_64 rng(seed);

  std::size_t prev = 1;
  for (std::size_t s = 0; s < arch.channels.size(); ++s) {
    const std::size_t c = arch.channels[s];
    const std::size_t f = stage_freq(arch, s);
    StageParams st;
    st.channels = c;
    st.conv = Tensor({c, prev, kStageKernel, kStageKernel});
    if (initialize) he_uniform(st.conv, prev * kStageKernel * kStageKernel, rng);
    st.bn = BatchNormParams<float>::identity(c, f);
    if (arch.kind == ArchKind::kResCNN) {
      for (std::size_t i = 0; i < arch.blocks_per_stage; ++i) {
        ResBlockParams<float> b;
        b.conv1 = Tensor({c, c, kBlockKernel, kBlockKernel});
        b.conv2 = Tensor({c, c, kBlockKernel, kBlockKernel});
        if (initialize) {
          he_uniform(b.conv1, c * kBlockKernel * kBlockKernel, rng);
          he_uniform(b.conv2, c * kBlockKernel * kBlockKernel, rng);
        }
        b.bn1 = BatchNormParams<float>::identity(c, f);
        b.bn2 = BatchNormParams<float>::identity(c, f);
        st.blocks.push_back(std::move(b));
      }
    }
    p.stages.push_back(std::move(st));
    prev = c;
  }
  if (arch.kind == ArchKind::kGRU) {
    std::size_t in = arch.channels[0] * stage_freq(arch, 0);
    for (std::size_t h : arch.gru_units) {
      GruParams<float> g;
      g.W = Tensor({in, 3 * h});
      g.U = Tensor({h, 3 * h});
      if (initialize) {
        he_uniform(g.W, in, rng);
        orthogonal_gates(g.U, rng);
      }
      g.b = Tensor({3 * h});
      p.grus.push_back(std::move(g));
      in = h;
    }
  }
  const std::size_t d = pooled_dim(arch);
  p.affine_W = Tensor({d, arch.embed_dim});
  if (initialize) he_uniform(p.affine_W, d, rng);
  p.affine_b = Tensor({arch.embed_dim});
  if (arch.num_classes > 0) attach_softmax_head(p, arch.num_classes, seed + 1);
  return p;
}

namespace {
constexpr float kHeadInitScale = 0.01f;
}

void attach_softmax_head(ModelParams& p, std::size_t num_classes, std::uint64_t seed) {
  require(!p.has_head(), ErrorKind::kConfiguration, "softmax head already attached");
  require(num_classes >= 2, ErrorKind::kConfiguration, "softmax head needs >= 2 classes");
  std::mt19937_64 rng(seed);
  p.head_W = Tensor({p.arch.embed_dim, num_classes});
  // Near-zero logits start the classifier at the uniform distribution.
  he_uniform(p.head_W, p.arch.embed_dim, rng);
  for (float& v : p.head_W.values()) v *= kHeadInitScale;
  p.head_b = Tensor({num_classes});
  p.arch.num_classes = num_classes;
}

void detach_softmax_head(ModelParams& p) {
  require(p.has_head(), ErrorKind::kConfiguration, "no softmax head to detach");
  p.head_W = Tensor();
  p.head_b = Tensor();
  p.arch.num_classes = 0;
}

// ---- forward / backward ------------------------------------------------------

Tensor make_batch(const std::vector<const FeatureMatrix*>& chunks) {
  require(!chunks.empty(), ErrorKind::kEmptyUtterance, "empty batch");
  const std::size_t T = chunks.front()->num_frames, F = chunks.front()->dim;
  Tensor batch({chunks.size(), 1, T, F});
  for (std::size_t b = 0; b < chunks.size(); ++b) {
    require(chunks[b]->num_frames == T && chunks[b]->dim == F, ErrorKind::kDimension,
            "batch chunks must share one length (" + std::to_string(T) + " frames)");
    std::copy(chunks[b]->data.begin(), chunks[b]->data.end(), batch.data() + b * T * F);
  }
  return batch;
}

namespace {

/// Shared by the mutable (train) and const (infer) entry points; `running`
/// is null in infer mode.
void run_forward(const ModelParams& p, ModelParams* running, const Tensor& batch,
                 Mode mode, ForwardTape& tape, bool with_logits, bool keep_tape) {
  const ArchSpec& a = p.arch;
  require(batch.rank() == 4 && batch.dim(1) == 1, ErrorKind::kDimension,
          "model input must be [B,1,T,F], got " + shape_string(batch.shape()));
  require(batch.dim(3) == a.input_freq, ErrorKind::kDimension,
          "model expects " + std::to_string(a.input_freq) + " coefficients, got " +
              std::to_string(batch.dim(3)));
  require(batch.dim(2) >= min_frames(a), ErrorKind::kInsufficientFrames,
          std::to_string(batch.dim(2)) + " frames; " + a.name + " needs at least " +
              std::to_string(min_frames(a)));
  tape = ForwardTape{};
  tape.input_shape = batch.shape();

  Tensor x = batch;
  for (std::size_t s = 0; s < p.stages.size(); ++s) {
    const StageParams& st = p.stages[s];
    StageTape stt;
    Tensor pre = batchnorm_seq(conv2d(x, st.conv, kStride2), st.bn, mode,
                               keep_tape ? &stt.bn : nullptr,
                               running ? &running->stages[s].bn : nullptr);
    Tensor h = clipped_relu(pre);
    if (keep_tape) {
      stt.input = std::move(x);
      stt.pre = std::move(pre);
    }
    for (std::size_t i = 0; i < st.blocks.size(); ++i) {
      ResBlockCache<float> cache;
      h = resblock(h, st.blocks[i], mode, keep_tape ? &cache : nullptr,
                   running ? &running->stages[s].blocks[i] : nullptr);
      if (keep_tape) stt.blocks.push_back(std::move(cache));
    }
    x = std::move(h);
    tape.stages.push_back(std::move(stt));
  }
  tape.map_shape = x.shape();
  Tensor seq = to_sequence(x);
  for (const GruParams<float>& g : p.grus) {
    GruCache<float> cache;
    seq = gru_layer(seq, g, Tensor{}, keep_tape ? &cache : nullptr);
    if (keep_tape) tape.grus.push_back(std::move(cache));
  }
  tape.pooled = temporal_average(seq);
  if (keep_tape) tape.sequence = std::move(seq);
  tape.projected = affine(tape.pooled, p.affine_W, p.affine_b);
  tape.embedding = l2_normalize(tape.projected);
  if (with_logits) {
    require(p.has_head(), ErrorKind::kConfiguration, "logits requested without a head");
    tape.logits = affine(tape.projected, p.head_W, p.head_b);
  }
}

}  // namespace

void forward_batch(ModelParams& params, const Tensor& batch, Mode mode,
                   ForwardTape& tape, bool with_logits) {
  run_forward(params, mode == Mode::kTrain ? &params : nullptr, batch, mode, tape,
              with_logits, true);
}

Tensor embed_batch(const ModelParams& params, const Tensor& batch) {
  ForwardTape tape;
  run_forward(params, nullptr, batch, Mode::kInfer, tape, false, false);
  return std::move(tape.embedding);
}

NamedTensors backward(const ModelParams& p, const ForwardTape& tape,
                      const Tensor& d_embedding, const Tensor& d_logits) {
  NamedTensors grads;
  Tensor d_proj(tape.projected.shape());
  if (!d_embedding.empty()) d_proj = l2_normalize_backward(tape.projected, d_embedding);
  if (!d_logits.empty()) {
    LayerGrad<float> hg = affine_backward(tape.projected, p.head_W, d_logits);
    for (std::size_t i = 0; i < d_proj.size(); ++i) d_proj[i] += hg.d_input[i];
    add_into(grads, "softmax", std::move(hg.d_params));
  }
  LayerGrad<float> ag = affine_backward(tape.pooled, p.affine_W, d_proj);
  add_into(grads, "affine", std::move(ag.d_params));
  Tensor d_seq = temporal_average_backward(tape.sequence.shape(), ag.d_input);
  for (std::size_t l = p.grus.size(); l-- > 0;) {
    LayerGrad<float> gg = gru_layer_backward(p.grus[l], tape.grus[l], d_seq);
    gg.d_params.erase("h0");
    add_into(grads, "gru" + std::to_string(l + 1), std::move(gg.d_params));
    d_seq = std::move(gg.d_input);
  }
  Tensor d_map = from_sequence(d_seq, tape.map_shape);
  for (std::size_t s = p.stages.size(); s-- > 0;) {
    const StageParams& st = p.stages[s];
    const StageTape& stt = tape.stages[s];
    const std::string sn = stage_name(st.channels);
    for (std::size_t i = st.blocks.size(); i-- > 0;) {
      LayerGrad<float> rg = resblock_backward(st.blocks[i], stt.blocks[i], d_map);
      add_into(grads, res_name(st.channels) + "/" + std::to_string(i + 1),
               std::move(rg.d_params));
      d_map = std::move(rg.d_input);
    }
    LayerGrad<float> bg =
        batchnorm_seq_backward(st.bn, stt.bn, clipped_relu_backward(stt.pre, d_map));
    add_into(grads, sn + "/bn", std::move(bg.d_params));
    LayerGrad<float> cg = conv2d_backward(stt.input, st.conv, bg.d_input, kStride2);
    grads.insert_or_assign(sn + "/W", std::move(cg.d_params.at("W")));
    d_map = std::move(cg.d_input);
  }
  return grads;
}

SpeakerEmbedding forward_embed(const ModelParams& params, const FeatureMatrix& feat) {
  require(feat.dim == params.arch.input_freq, ErrorKind::kDimension,
          "utterance has " + std::to_string(feat.dim) + " coefficients, model expects " +
              std::to_string(params.arch.input_freq));
  require(feat.num_frames >= min_frames(params.arch), ErrorKind::kInsufficientFrames,
          feat.utt_id + " has " + std::to_string(feat.num_frames) + " frames; need " +
              std::to_string(min_frames(params.arch)));
  const Tensor emb = embed_batch(params, make_batch({&feat}));
  check_finite(emb, "embedding of " + feat.utt_id);
  SpeakerEmbedding out;
  out.utt_id = feat.utt_id;
  out.speaker_id = feat.speaker_id;
  out.vector.assign(emb.values().begin(), emb.values().end());
  return out;
}

}  // namespace spkemb
