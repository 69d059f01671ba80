#pragma once

// Differentiable layer primitives. Every forward has an explicit backward
// taking the forward cache. Layouts:
//   feature maps  [batch, channels, time, freq]
//   sequences     [batch, time, dim]
//   vectors       [batch, dim]
// Instantiated for float (training) and double (gradient checks).

#include <cstddef>
#include <span>
#include <string>

#include "spkemb/tensor.hpp"

namespace spkemb {

enum class Mode { kTrain, kInfer };

inline constexpr double kReluCeiling = 20.0;
inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormDecay = 0.99;

template <typename T>
struct LayerGrad {
  BasicTensor<T> d_input;
  NamedTensorMap<T> d_params;
};

// ---- convolution -----------------------------------------------------------

struct Conv2dGeometry {
  std::size_t stride_h = 1;
  std::size_t stride_w = 1;
  std::size_t pad_h = 0;
  std::size_t pad_w = 0;
};

/// Output extent along one axis: floor((in + 2 pad - k) / stride) + 1.
std::size_t conv_output_extent(std::size_t in, std::size_t kernel,
                               std::size_t stride, std::size_t pad);

/// input [B,C,H,W], kernel [O,C,kH,kW] -> [B,O,H',W']. No bias.
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& kernel,
                      const Conv2dGeometry& geom);

/// d_params: {"W"}.
template <typename T>
LayerGrad<T> conv2d_backward(const BasicTensor<T>& input,
                             const BasicTensor<T>& kernel,
                             const BasicTensor<T>& d_output,
                             const Conv2dGeometry& geom);

// ---- activation ------------------------------------------------------------

/// min(max(x, 0), 20)
template <typename T>
BasicTensor<T> clipped_relu(const BasicTensor<T>& x);

template <typename T>
BasicTensor<T> clipped_relu_backward(const BasicTensor<T>& x,
                                     const BasicTensor<T>& d_output);

// ---- sequence-wise batch norm ----------------------------------------------

/// One (gamma, beta) per channel x frequency unit; statistics are taken over
/// batch and time.
template <typename T>
struct BatchNormParams {
  BasicTensor<T> gamma;  // [C, W]
  BasicTensor<T> beta;
  BasicTensor<T> running_mean;
  BasicTensor<T> running_var;

  static BatchNormParams identity(std::size_t channels, std::size_t width);
};

template <typename T>
struct BatchNormCache {
  BasicTensor<T> x_hat;
  std::vector<T> inv_std;  // per unit
  Mode mode = Mode::kTrain;
};

/// Train mode normalizes with batch-time moments and, when `running` is
/// non-null, folds them into its running moments. Infer mode uses the
/// running moments of `params`.
template <typename T>
BasicTensor<T> batchnorm_seq(const BasicTensor<T>& x,
                             const BatchNormParams<T>& params, Mode mode,
                             BatchNormCache<T>* cache = nullptr,
                             BatchNormParams<T>* running = nullptr);

/// d_params: {"gamma", "beta"}.
template <typename T>
LayerGrad<T> batchnorm_seq_backward(const BatchNormParams<T>& params,
                                    const BatchNormCache<T>& cache,
                                    const BasicTensor<T>& d_output);

// ---- residual block ----------------------------------------------------------

template <typename T>
struct ResBlockParams {
  BasicTensor<T> conv1;  // [C,C,3,3]
  BatchNormParams<T> bn1;
  BasicTensor<T> conv2;
  BatchNormParams<T> bn2;
};

template <typename T>
struct ResBlockCache {
  BasicTensor<T> input;
  BasicTensor<T> pre1;  // bn1 output
  BasicTensor<T> act1;
  BasicTensor<T> pre2;  // bn2 output
  BatchNormCache<T> bn1;
  BatchNormCache<T> bn2;
};

/// h = relu(bn2(conv2(relu(bn1(conv1(x)))))) + x, 3x3 convs with pad 1.
template <typename T>
BasicTensor<T> resblock(const BasicTensor<T>& x, const ResBlockParams<T>& p,
                        Mode mode, ResBlockCache<T>* cache = nullptr,
                        ResBlockParams<T>* running = nullptr);

/// d_params: conv1/W, bn1/gamma, bn1/beta, conv2/W, bn2/gamma, bn2/beta.
template <typename T>
LayerGrad<T> resblock_backward(const ResBlockParams<T>& p,
                               const ResBlockCache<T>& cache,
                               const BasicTensor<T>& d_output);

// ---- GRU -------------------------------------------------------------------

/// Gates are packed z|r|h along the last axis.
template <typename T>
struct GruParams {
  BasicTensor<T> W;  // [D, 3H]
  BasicTensor<T> U;  // [H, 3H]
  BasicTensor<T> b;  // [3H]

  std::size_t input_dim() const { return W.dim(0); }
  std::size_t units() const { return U.dim(0); }
};

template <typename T>
struct GruCache {
  BasicTensor<T> input;   // [B,T,D]
  BasicTensor<T> hidden;  // [B,T+1,H], slot 0 is h0
  BasicTensor<T> z;       // [B,T,H]
  BasicTensor<T> r;
  BasicTensor<T> cand;
  bool batched = true;
};

/// Forward-only GRU over [B,T,D] (or [T,D]). `h0` is [B,H] (or [H]); an
/// empty tensor means zeros.
template <typename T>
BasicTensor<T> gru_layer(const BasicTensor<T>& x, const GruParams<T>& p,
                         const BasicTensor<T>& h0 = {},
                         GruCache<T>* cache = nullptr);

/// d_params: {"W", "U", "b", "h0"}.
template <typename T>
LayerGrad<T> gru_layer_backward(const GruParams<T>& p, const GruCache<T>& cache,
                                const BasicTensor<T>& d_output);

// ---- pooling, projection, normalization ------------------------------------

/// [B,T,D] -> [B,D] (or [T,D] -> [D]).
template <typename T>
BasicTensor<T> temporal_average(const BasicTensor<T>& x);

template <typename T>
BasicTensor<T> temporal_average_backward(const Shape& input_shape,
                                         const BasicTensor<T>& d_output);

/// y = W^T x + b. x is [B,Din] or [Din]; W [Din,Dout]; b [Dout].
template <typename T>
BasicTensor<T> affine(const BasicTensor<T>& x, const BasicTensor<T>& W,
                      const BasicTensor<T>& b);

/// d_params: {"W", "b"}.
template <typename T>
LayerGrad<T> affine_backward(const BasicTensor<T>& x, const BasicTensor<T>& W,
                             const BasicTensor<T>& d_output);

inline constexpr double kMinEmbeddingNorm = 1e-12;

/// Row-wise unit normalization of [B,D] or [D].
template <typename T>
BasicTensor<T> l2_normalize(const BasicTensor<T>& x);

template <typename T>
BasicTensor<T> l2_normalize_backward(const BasicTensor<T>& x,
                                     const BasicTensor<T>& d_output);

// ---- scores and losses -----------------------------------------------------

inline constexpr double kUnitNormTolerance = 1e-4;

/// Dot product of two unit vectors; throws kContractViolation if either
/// norm is off by more than 1e-4.
template <typename T>
double cosine_similarity(std::span<const T> a, std::span<const T> b);

template <typename T>
struct SoftmaxXent {
  double loss = 0.0;
  std::vector<T> d_logits;
};

template <typename T>
SoftmaxXent<T> softmax_xent(std::span<const T> logits, std::size_t label);

struct TripletTerm {
  double loss = 0.0;
  double d_sap = 0.0;
  double d_san = 0.0;
};

/// [s_an - s_ap + alpha]_+ with subgradient 0 at the hinge point.
TripletTerm triplet_loss(double s_ap, double s_an, double alpha);

}  // namespace spkemb
