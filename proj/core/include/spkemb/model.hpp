#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "spkemb/audio.hpp"
#include "spkemb/layers.hpp"

namespace spkemb {

enum class ArchKind { kResCNN, kGRU };

/// Layer plan of an embedding network. The canonical specs reproduce the
/// reference ResCNN and GRU layer tables; toy specs shrink widths for desk-scale
/// training.
struct ArchSpec {
  ArchKind kind = ArchKind::kResCNN;
  std::string name = "rescnn";
  std::size_t input_freq = kFeatureDim;
  std::size_t embed_dim = 512;
  /// ResCNN: channels of each stride-2 stage. GRU: the front conv (one entry).
  std::vector<std::size_t> channels{64, 128, 256, 512};
  std::size_t blocks_per_stage = 3;  // ResCNN only
  std::vector<std::size_t> gru_units;
  std::size_t num_classes = 0;  // softmax head width, 0 when detached

  static ArchSpec rescnn();
  static ArchSpec gru();
  static ArchSpec toy_rescnn();
  static ArchSpec toy_gru();
  /// "rescnn", "gru", "toy-rescnn" or "toy-gru".
  static ArchSpec from_name(const std::string& name);

  /// Equality of the trunk plan (ignores the head).
  bool same_trunk(const ArchSpec& other) const;
  friend bool operator==(const ArchSpec&, const ArchSpec&) = default;
};

void validate(const ArchSpec& arch);

/// Frequency extent after stage `s` (0-based): input_freq / 2^(s+1), ceil.
std::size_t stage_freq(const ArchSpec& arch, std::size_t stage);
/// Width of the vector entering the affine layer.
std::size_t pooled_dim(const ArchSpec& arch);
/// Shortest input accepted by forward passes.
std::size_t min_frames(const ArchSpec& arch);
/// Time extent after all stride-2 stages.
std::size_t frames_after_frontend(const ArchSpec& arch, std::size_t frames);

struct LayerCount {
  std::string layer;
  std::size_t params = 0;  // per instance
  std::size_t repeat = 1;
  std::size_t total() const { return params * repeat; }
};

/// Closed-form per-layer counts in table order (conv, res, ..., affine).
/// Residual rows count one conv+BN and repeat 2 x blocks_per_stage.
std::vector<LayerCount> layer_parameter_counts(const ArchSpec& arch);
std::size_t expected_parameter_count(const ArchSpec& arch);

struct StageParams {
  std::size_t channels = 0;
  Tensor conv;  // [C, C_prev, 5, 5]
  BatchNormParams<float> bn;
  std::vector<ResBlockParams<float>> blocks;
};

struct NamedTensorRef {
  std::string name;
  Tensor* tensor = nullptr;
  bool trainable = true;
};

struct ConstNamedTensorRef {
  std::string name;
  const Tensor* tensor = nullptr;
  bool trainable = true;
};

struct ModelParams {
  ArchSpec arch;
  std::vector<StageParams> stages;
  std::vector<GruParams<float>> grus;
  Tensor affine_W;  // [pooled, embed]
  Tensor affine_b;
  Tensor head_W;  // [embed, classes] when attached
  Tensor head_b;
  std::uint64_t seed = 0;
  std::size_t epoch = 0;

  bool has_head() const { return arch.num_classes > 0; }

  /// Every tensor (including BN running moments) in a fixed order.
  std::vector<NamedTensorRef> named_tensors();
  std::vector<ConstNamedTensorRef> named_tensors() const;

  /// Trainable scalars only.
  std::size_t parameter_count() const;
};

/// He-uniform convs and projections, orthogonal recurrent gates, zero
/// biases, identity BN. `initialize = false` leaves weights zero.
ModelParams build(const ArchSpec& arch, std::uint64_t seed, bool initialize = true);

void attach_softmax_head(ModelParams& params, std::size_t num_classes,
                         std::uint64_t seed);
void detach_softmax_head(ModelParams& params);

struct SpeakerEmbedding {
  std::string utt_id;
  std::string speaker_id;
  std::vector<float> vector;
};

// ---- forward / backward ----------------------------------------------------

struct StageTape {
  Tensor input;
  Tensor pre;  // BN output
  BatchNormCache<float> bn;
  std::vector<ResBlockCache<float>> blocks;
};

struct ForwardTape {
  Shape input_shape;
  std::vector<StageTape> stages;
  Shape map_shape;  // [B,C,T',F'] after the conv front end
  std::vector<GruCache<float>> grus;
  Tensor sequence;   // input to temporal average, [B,T',D]
  Tensor pooled;     // [B,D]
  Tensor projected;  // affine output before length normalization
  Tensor embedding;  // unit rows
  Tensor logits;     // only with a head
};

/// Packs equal-length feature chunks into a [B,1,T,F] batch.
Tensor make_batch(const std::vector<const FeatureMatrix*>& chunks);

/// Batched forward. Train mode normalizes with batch statistics and updates
/// the running moments held in `params`.
void forward_batch(ModelParams& params, const Tensor& batch, Mode mode,
                   ForwardTape& tape, bool with_logits);

/// Infer-mode forward that leaves `params` untouched; returns unit rows.
Tensor embed_batch(const ModelParams& params, const Tensor& batch);

/// Gradients of all trainable tensors given upstream gradients w.r.t. the
/// unit embeddings and/or the head logits (either may be empty).
NamedTensors backward(const ModelParams& params, const ForwardTape& tape,
                      const Tensor& d_embedding, const Tensor& d_logits);

/// Utterance -> unit embedding in infer mode.
SpeakerEmbedding forward_embed(const ModelParams& params, const FeatureMatrix& feat);

// ---- checkpoints -----------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// "SPKEMBCK", u32 version, u64 metadata length, JSON metadata (arch, seed,
/// epoch, tensor index), then little-endian float32 payloads in index order.
void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);

/// When `expected` is given, its trunk must match the stored architecture.
ModelParams load_checkpoint(const std::filesystem::path& path,
                            const ArchSpec* expected = nullptr);

// ---- embedding export ------------------------------------------------------

/// JSON lines {"utt":..., "spk":..., "vec":[...]}.
void write_embeddings_jsonl(const std::filesystem::path& path,
                            const std::vector<SpeakerEmbedding>& embs);
std::vector<SpeakerEmbedding> read_embeddings_jsonl(const std::filesystem::path& path);

/// "SPKEMBV1", u32 dim, u32 count, then per record u32+utt, u32+spk, dim f32.
void write_embeddings_binary(const std::filesystem::path& path,
                             const std::vector<SpeakerEmbedding>& embs);
std::vector<SpeakerEmbedding> read_embeddings_binary(const std::filesystem::path& path);

}  // namespace spkemb
