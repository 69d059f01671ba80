#include "spkemb/layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

namespace spkemb {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using StridedMap =
    Eigen::Map<RowMat<T>, Eigen::Unaligned, Eigen::OuterStride<Eigen::Dynamic>>;

// Row-by-row accumulation; Eigen's vectorized reductions peel by address
// and would make results depend on where the heap put the data.
template <typename T>
void column_sums(const T* m, std::size_t rows, std::size_t cols, T* out) {
  std::fill(out, out + cols, T(0));
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c] += m[r * cols + c];
}

void expect_rank(const Shape& s, std::size_t rank, const std::string& what) {
  require(s.size() == rank, ErrorKind::kDimension,
          what + ": expected rank " + std::to_string(rank) + ", got " +
              shape_string(s));
}

template <typename T>
void im2col(const T* x, std::size_t C, std::size_t H, std::size_t W,
            std::size_t kH, std::size_t kW, const Conv2dGeometry& g,
            std::size_t Ho, std::size_t Wo, T* cols) {
  const std::size_t plane = Ho * Wo;
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t ki = 0; ki < kH; ++ki) {
      for (std::size_t kj = 0; kj < kW; ++kj) {
        T* row = cols + ((c * kH + ki) * kW + kj) * plane;
        for (std::size_t oh = 0; oh < Ho; ++oh) {
          const std::ptrdiff_t ih =
              static_cast<std::ptrdiff_t>(oh * g.stride_h + ki) -
              static_cast<std::ptrdiff_t>(g.pad_h);
          T* out = row + oh * Wo;
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) {
            std::fill(out, out + Wo, T(0));
            continue;
          }
          const T* in = x + (c * H + static_cast<std::size_t>(ih)) * W;
          for (std::size_t ow = 0; ow < Wo; ++ow) {
            const std::ptrdiff_t iw =
                static_cast<std::ptrdiff_t>(ow * g.stride_w + kj) -
                static_cast<std::ptrdiff_t>(g.pad_w);
            out[ow] = (iw < 0 || iw >= static_cast<std::ptrdiff_t>(W))
                          ? T(0)
                          : in[iw];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* cols, std::size_t C, std::size_t H, std::size_t W,
            std::size_t kH, std::size_t kW, const Conv2dGeometry& g,
            std::size_t Ho, std::size_t Wo, T* dx) {
  const std::size_t plane = Ho * Wo;
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t ki = 0; ki < kH; ++ki) {
      for (std::size_t kj = 0; kj < kW; ++kj) {
        const T* row = cols + ((c * kH + ki) * kW + kj) * plane;
        for (std::size_t oh = 0; oh < Ho; ++oh) {
          const std::ptrdiff_t ih =
              static_cast<std::ptrdiff_t>(oh * g.stride_h + ki) -
              static_cast<std::ptrdiff_t>(g.pad_h);
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
          T* out = dx + (c * H + static_cast<std::size_t>(ih)) * W;
          const T* in = row + oh * Wo;
          for (std::size_t ow = 0; ow < Wo; ++ow) {
            const std::ptrdiff_t iw =
                static_cast<std::ptrdiff_t>(ow * g.stride_w + kj) -
                static_cast<std::ptrdiff_t>(g.pad_w);
            if (iw >= 0 && iw < static_cast<std::ptrdiff_t>(W)) out[iw] += in[ow];
          }
        }
      }
    }
  }
}

struct ConvDims {
  std::size_t B, C, H, W, O, kH, kW, Ho, Wo;
};

template <typename T>
ConvDims conv_dims(const BasicTensor<T>& input, const BasicTensor<T>& kernel,
                   const Conv2dGeometry& g) {
  expect_rank(input.shape(), 4, "conv2d input");
  expect_rank(kernel.shape(), 4, "conv2d kernel");
  require(g.stride_h > 0 && g.stride_w > 0, ErrorKind::kConfiguration,
          "conv2d stride must be positive");
  ConvDims d{input.dim(0), input.dim(1), input.dim(2), input.dim(3),
             kernel.dim(0), kernel.dim(2), kernel.dim(3), 0, 0};
  if (kernel.dim(1) != d.C) {
    raise(ErrorKind::kDimension,
          "conv2d: input channels (axis 1) = " + std::to_string(d.C) +
              " but kernel expects " + std::to_string(kernel.dim(1)));
  }
  require(d.H + 2 * g.pad_h >= d.kH && d.W + 2 * g.pad_w >= d.kW,
          ErrorKind::kDimension,
          "conv2d: kernel " + shape_string(kernel.shape()) +
              " does not fit padded input " + shape_string(input.shape()));
  d.Ho = conv_output_extent(d.H, d.kH, g.stride_h, g.pad_h);
  d.Wo = conv_output_extent(d.W, d.kW, g.stride_w, g.pad_w);
  return d;
}

template <typename T>
T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

}  // namespace

std::size_t conv_output_extent(std::size_t in, std::size_t kernel,
                               std::size_t stride, std::size_t pad) {
  return (in + 2 * pad - kernel) / stride + 1;
}

// ---- convolution -----------------------------------------------------------

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& kernel,
                      const Conv2dGeometry& g) {
  const ConvDims d = conv_dims(input, kernel, g);
  const std::size_t K = d.C * d.kH * d.kW;
  const std::size_t P = d.Ho * d.Wo;
  BasicTensor<T> out({d.B, d.O, d.Ho, d.Wo});
  std::vector<T> cols(K * P);
  ConstMatMap<T> Km(kernel.data(), d.O, K);
  for (std::size_t b = 0; b < d.B; ++b) {
    im2col(input.data() + b * d.C * d.H * d.W, d.C, d.H, d.W, d.kH, d.kW, g,
           d.Ho, d.Wo, cols.data());
    MatMap<T> Y(out.data() + b * d.O * P, d.O, P);
    Y.noalias() = Km * ConstMatMap<T>(cols.data(), K, P);
  }
  return out;
}

template <typename T>
LayerGrad<T> conv2d_backward(const BasicTensor<T>& input,
                             const BasicTensor<T>& kernel,
                             const BasicTensor<T>& d_output,
                             const Conv2dGeometry& g) {
  const ConvDims d = conv_dims(input, kernel, g);
  expect_shape(d_output.shape(), {d.B, d.O, d.Ho, d.Wo}, "conv2d d_output");
  const std::size_t K = d.C * d.kH * d.kW;
  const std::size_t P = d.Ho * d.Wo;
  LayerGrad<T> grad;
  grad.d_input = BasicTensor<T>(input.shape());
  BasicTensor<T> dK(kernel.shape());
  std::vector<T> cols(K * P);
  std::vector<T> dcols(K * P);
  ConstMatMap<T> Km(kernel.data(), d.O, K);
  MatMap<T> dKm(dK.data(), d.O, K);
  for (std::size_t b = 0; b < d.B; ++b) {
    im2col(input.data() + b * d.C * d.H * d.W, d.C, d.H, d.W, d.kH, d.kW, g,
           d.Ho, d.Wo, cols.data());
    ConstMatMap<T> dY(d_output.data() + b * d.O * P, d.O, P);
    dKm.noalias() += dY * ConstMatMap<T>(cols.data(), K, P).transpose();
    MatMap<T>(dcols.data(), K, P).noalias() = Km.transpose() * dY;
    col2im(dcols.data(), d.C, d.H, d.W, d.kH, d.kW, g, d.Ho, d.Wo,
           grad.d_input.data() + b * d.C * d.H * d.W);
  }
  grad.d_params.emplace("W", std::move(dK));
  return grad;
}

// ---- activation ------------------------------------------------------------

template <typename T>
BasicTensor<T> clipped_relu(const BasicTensor<T>& x) {
  BasicTensor<T> y = x;
  for (T& v : y.values()) v = std::min(std::max(v, T(0)), T(kReluCeiling));
  return y;
}

template <typename T>
BasicTensor<T> clipped_relu_backward(const BasicTensor<T>& x,
                                     const BasicTensor<T>& d_output) {
  expect_shape(d_output.shape(), x.shape(), "clipped_relu d_output");
  BasicTensor<T> dx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i)
    dx[i] = (x[i] > T(0) && x[i] < T(kReluCeiling)) ? d_output[i] : T(0);
  return dx;
}

// ---- batch norm ------------------------------------------------------------

template <typename T>
BatchNormParams<T> BatchNormParams<T>::identity(std::size_t channels,
                                                std::size_t width) {
  BatchNormParams p;
  p.gamma = BasicTensor<T>({channels, width}, T(1));
  p.beta = BasicTensor<T>({channels, width}, T(0));
  p.running_mean = BasicTensor<T>({channels, width}, T(0));
  p.running_var = BasicTensor<T>({channels, width}, T(1));
  return p;
}

template <typename T>
BasicTensor<T> batchnorm_seq(const BasicTensor<T>& x,
                             const BatchNormParams<T>& p, Mode mode,
                             BatchNormCache<T>* cache,
                             BatchNormParams<T>* running) {
  expect_rank(x.shape(), 4, "batchnorm input");
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const Shape units{C, W};
  expect_shape(p.gamma.shape(), units, "batchnorm gamma");
  expect_shape(p.beta.shape(), units, "batchnorm beta");
  const std::size_t U = C * W;
  std::vector<T> mean(U), inv_std(U);

  if (mode == Mode::kTrain) {
    require(B * H > 0, ErrorKind::kEmptyUtterance, "batchnorm over empty batch");
    std::vector<double> sum(U, 0.0), sq(U, 0.0);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t h = 0; h < H; ++h) {
          const T* row = x.data() + ((b * C + c) * H + h) * W;
          double* s = sum.data() + c * W;
          for (std::size_t w = 0; w < W; ++w) s[w] += row[w];
        }
    const double n = static_cast<double>(B * H);
    for (std::size_t u = 0; u < U; ++u) sum[u] /= n;
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t h = 0; h < H; ++h) {
          const T* row = x.data() + ((b * C + c) * H + h) * W;
          const double* m = sum.data() + c * W;
          double* q = sq.data() + c * W;
          for (std::size_t w = 0; w < W; ++w) {
            const double dv = row[w] - m[w];
            q[w] += dv * dv;
          }
        }
    for (std::size_t u = 0; u < U; ++u) {
      const double var = sq[u] / n;
      mean[u] = static_cast<T>(sum[u]);
      inv_std[u] = static_cast<T>(1.0 / std::sqrt(var + kBatchNormEps));
      if (running) {
        running->running_mean[u] = static_cast<T>(
            kBatchNormDecay * running->running_mean[u] +
            (1.0 - kBatchNormDecay) * sum[u]);
        running->running_var[u] = static_cast<T>(
            kBatchNormDecay * running->running_var[u] +
            (1.0 - kBatchNormDecay) * var);
      }
    }
  } else {
    expect_shape(p.running_mean.shape(), units, "batchnorm running mean");
    expect_shape(p.running_var.shape(), units, "batchnorm running var");
    for (std::size_t u = 0; u < U; ++u) {
      mean[u] = p.running_mean[u];
      inv_std[u] = static_cast<T>(
          1.0 / std::sqrt(static_cast<double>(p.running_var[u]) + kBatchNormEps));
    }
  }

  BasicTensor<T> y(x.shape());
  BasicTensor<T> x_hat;
  if (cache) x_hat = BasicTensor<T>(x.shape());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t h = 0; h < H; ++h) {
        const std::size_t off = ((b * C + c) * H + h) * W;
        const T* in = x.data() + off;
        T* out = y.data() + off;
        const T* m = mean.data() + c * W;
        const T* is = inv_std.data() + c * W;
        const T* ga = p.gamma.data() + c * W;
        const T* be = p.beta.data() + c * W;
        for (std::size_t w = 0; w < W; ++w) {
          const T xh = (in[w] - m[w]) * is[w];
          out[w] = ga[w] * xh + be[w];
          if (cache) x_hat[off + w] = xh;
        }
      }
  if (cache) {
    cache->x_hat = std::move(x_hat);
    cache->inv_std = std::move(inv_std);
    cache->mode = mode;
  }
  return y;
}

template <typename T>
LayerGrad<T> batchnorm_seq_backward(const BatchNormParams<T>& p,
                                    const BatchNormCache<T>& cache,
                                    const BasicTensor<T>& dy) {
  const BasicTensor<T>& xh = cache.x_hat;
  expect_shape(dy.shape(), xh.shape(), "batchnorm d_output");
  const std::size_t B = xh.dim(0), C = xh.dim(1), H = xh.dim(2), W = xh.dim(3);
  const std::size_t U = C * W;
  std::vector<double> sum_dy(U, 0.0), sum_dy_xh(U, 0.0);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t h = 0; h < H; ++h) {
        const std::size_t off = ((b * C + c) * H + h) * W;
        double* s1 = sum_dy.data() + c * W;
        double* s2 = sum_dy_xh.data() + c * W;
        for (std::size_t w = 0; w < W; ++w) {
          s1[w] += dy[off + w];
          s2[w] += static_cast<double>(dy[off + w]) * xh[off + w];
        }
      }
  LayerGrad<T> g;
  BasicTensor<T> dgamma({C, W}), dbeta({C, W});
  for (std::size_t u = 0; u < U; ++u) {
    dgamma[u] = static_cast<T>(sum_dy_xh[u]);
    dbeta[u] = static_cast<T>(sum_dy[u]);
  }
  g.d_input = BasicTensor<T>(xh.shape());
  const double n = static_cast<double>(B * H);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t h = 0; h < H; ++h) {
        const std::size_t off = ((b * C + c) * H + h) * W;
        for (std::size_t w = 0; w < W; ++w) {
          const std::size_t u = c * W + w;
          const double scale = static_cast<double>(p.gamma[u]) * cache.inv_std[u];
          if (cache.mode == Mode::kTrain) {
            g.d_input[off + w] = static_cast<T>(
                scale * (dy[off + w] - sum_dy[u] / n -
                         xh[off + w] * sum_dy_xh[u] / n));
          } else {
            g.d_input[off + w] = static_cast<T>(scale * dy[off + w]);
          }
        }
      }
  g.d_params.emplace("gamma", std::move(dgamma));
  g.d_params.emplace("beta", std::move(dbeta));
  return g;
}

// ---- residual block --------------------------------------------------------

namespace {
const Conv2dGeometry kSame3x3{1, 1, 1, 1};
}

template <typename T>
BasicTensor<T> resblock(const BasicTensor<T>& x, const ResBlockParams<T>& p,
                        Mode mode, ResBlockCache<T>* cache,
                        ResBlockParams<T>* running) {
  expect_rank(x.shape(), 4, "resblock input");
  const std::size_t C = p.conv1.dim(0);
  require(x.dim(1) == C && p.conv1.dim(1) == C && p.conv2.dim(0) == C &&
              p.conv2.dim(1) == C,
          ErrorKind::kConfiguration,
          "resblock channel mismatch: input has " + std::to_string(x.dim(1)) +
              " channels, block has " + std::to_string(C));
  BatchNormCache<T> bn1, bn2;
  BasicTensor<T> pre1 = batchnorm_seq(conv2d(x, p.conv1, kSame3x3), p.bn1, mode,
                                      cache ? &bn1 : nullptr,
                                      running ? &running->bn1 : nullptr);
  BasicTensor<T> act1 = clipped_relu(pre1);
  BasicTensor<T> pre2 = batchnorm_seq(conv2d(act1, p.conv2, kSame3x3), p.bn2,
                                      mode, cache ? &bn2 : nullptr,
                                      running ? &running->bn2 : nullptr);
  BasicTensor<T> y = clipped_relu(pre2);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += x[i];
  if (cache) {
    cache->input = x;
    cache->pre1 = std::move(pre1);
    cache->act1 = std::move(act1);
    cache->pre2 = std::move(pre2);
    cache->bn1 = std::move(bn1);
    cache->bn2 = std::move(bn2);
  }
  return y;
}

template <typename T>
LayerGrad<T> resblock_backward(const ResBlockParams<T>& p,
                               const ResBlockCache<T>& cache,
                               const BasicTensor<T>& dy) {
  expect_shape(dy.shape(), cache.input.shape(), "resblock d_output");
  LayerGrad<T> bn2 = batchnorm_seq_backward(
      p.bn2, cache.bn2, clipped_relu_backward(cache.pre2, dy));
  LayerGrad<T> c2 = conv2d_backward(cache.act1, p.conv2, bn2.d_input, kSame3x3);
  LayerGrad<T> bn1 = batchnorm_seq_backward(
      p.bn1, cache.bn1, clipped_relu_backward(cache.pre1, c2.d_input));
  LayerGrad<T> c1 = conv2d_backward(cache.input, p.conv1, bn1.d_input, kSame3x3);

  LayerGrad<T> g;
  g.d_input = std::move(c1.d_input);
  for (std::size_t i = 0; i < g.d_input.size(); ++i) g.d_input[i] += dy[i];
  g.d_params.emplace("conv1/W", std::move(c1.d_params.at("W")));
  g.d_params.emplace("bn1/gamma", std::move(bn1.d_params.at("gamma")));
  g.d_params.emplace("bn1/beta", std::move(bn1.d_params.at("beta")));
  g.d_params.emplace("conv2/W", std::move(c2.d_params.at("W")));
  g.d_params.emplace("bn2/gamma", std::move(bn2.d_params.at("gamma")));
  g.d_params.emplace("bn2/beta", std::move(bn2.d_params.at("beta")));
  return g;
}

// ---- GRU -------------------------------------------------------------------

template <typename T>
BasicTensor<T> gru_layer(const BasicTensor<T>& x_in, const GruParams<T>& p,
                         const BasicTensor<T>& h0_in, GruCache<T>* cache) {
  const bool batched = x_in.rank() == 3;
  require(batched || x_in.rank() == 2, ErrorKind::kDimension,
          "gru input must be [B,T,D] or [T,D], got " + shape_string(x_in.shape()));
  const BasicTensor<T> x =
      batched ? x_in : x_in.reshaped({1, x_in.dim(0), x_in.dim(1)});
  const std::size_t B = x.dim(0), T_ = x.dim(1), D = x.dim(2);
  const std::size_t H = p.units();
  expect_shape(p.W.shape(), {D, 3 * H}, "gru W");
  expect_shape(p.U.shape(), {H, 3 * H}, "gru U");
  expect_shape(p.b.shape(), {3 * H}, "gru b");

  BasicTensor<T> hidden({B, T_ + 1, H});
  if (!h0_in.empty()) {
    require(h0_in.size() == B * H, ErrorKind::kDimension,
            "gru h0 " + shape_string(h0_in.shape()) + " does not match batch " +
                std::to_string(B) + " x units " + std::to_string(H));
    for (std::size_t b = 0; b < B; ++b)
      std::copy_n(h0_in.data() + b * H, H, hidden.data() + b * (T_ + 1) * H);
  }

  // Input contributions for every step at once.
  BasicTensor<T> gx({B, T_, 3 * H});
  {
    MatMap<T> G(gx.data(), B * T_, 3 * H);
    G.noalias() = ConstMatMap<T>(x.data(), B * T_, D) *
                  ConstMatMap<T>(p.W.data(), D, 3 * H);
    G.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(
        p.b.data(), 3 * H);
  }
  BasicTensor<T> z({B, T_, H}), r({B, T_, H}), cand({B, T_, H});
  BasicTensor<T> out({B, T_, H});
  ConstMatMap<T> Um(p.U.data(), H, 3 * H);
  RowMat<T> gh_zr(B, 2 * H), rh(B, H), gh_h(B, H), hprev(B, H);

  for (std::size_t t = 0; t < T_; ++t) {
    for (std::size_t b = 0; b < B; ++b)
      std::copy_n(hidden.data() + (b * (T_ + 1) + t) * H, H,
                  hprev.data() + b * H);
    gh_zr.noalias() = hprev * Um.leftCols(2 * H);
    for (std::size_t b = 0; b < B; ++b) {
      const T* g = gx.data() + (b * T_ + t) * 3 * H;
      T* zr = z.data() + (b * T_ + t) * H;
      T* rr = r.data() + (b * T_ + t) * H;
      for (std::size_t j = 0; j < H; ++j) {
        zr[j] = sigmoid(g[j] + gh_zr(b, j));
        rr[j] = sigmoid(g[H + j] + gh_zr(b, H + j));
        rh(b, j) = rr[j] * hprev(b, j);
      }
    }
    gh_h.noalias() = rh * Um.rightCols(H);
    for (std::size_t b = 0; b < B; ++b) {
      const T* g = gx.data() + (b * T_ + t) * 3 * H;
      const T* zr = z.data() + (b * T_ + t) * H;
      T* cr = cand.data() + (b * T_ + t) * H;
      T* hn = hidden.data() + (b * (T_ + 1) + t + 1) * H;
      T* o = out.data() + (b * T_ + t) * H;
      for (std::size_t j = 0; j < H; ++j) {
        cr[j] = std::tanh(g[2 * H + j] + gh_h(b, j));
        hn[j] = (T(1) - zr[j]) * hprev(b, j) + zr[j] * cr[j];
        o[j] = hn[j];
      }
    }
  }
  if (cache) {
    cache->input = x;
    cache->hidden = std::move(hidden);
    cache->z = std::move(z);
    cache->r = std::move(r);
    cache->cand = std::move(cand);
    cache->batched = batched;
  }
  if (!batched) return out.reshaped({T_, H});
  return out;
}

template <typename T>
LayerGrad<T> gru_layer_backward(const GruParams<T>& p, const GruCache<T>& c,
                                const BasicTensor<T>& d_out_in) {
  const std::size_t B = c.input.dim(0), T_ = c.input.dim(1), D = c.input.dim(2);
  const std::size_t H = p.units();
  require(d_out_in.size() == B * T_ * H, ErrorKind::kDimension,
          "gru d_output " + shape_string(d_out_in.shape()));
  const T* dout = d_out_in.data();

  ConstMatMap<T> Um(p.U.data(), H, 3 * H);
  BasicTensor<T> dgx({B, T_, 3 * H});
  BasicTensor<T> dU({H, 3 * H});
  MatMap<T> dUm(dU.data(), H, 3 * H);
  RowMat<T> dh_next = RowMat<T>::Zero(B, H);
  RowMat<T> hprev(B, H), rh(B, H), da_h(B, H), da_zr(B, 2 * H), dhp(B, H),
      d_rh(B, H);

  for (std::size_t t = T_; t-- > 0;) {
    for (std::size_t b = 0; b < B; ++b) {
      std::copy_n(c.hidden.data() + (b * (T_ + 1) + t) * H, H,
                  hprev.data() + b * H);
      const std::size_t off = (b * T_ + t) * H;
      for (std::size_t j = 0; j < H; ++j) {
        const T dh = dout[off + j] + dh_next(b, j);
        const T zj = c.z[off + j], cj = c.cand[off + j], hp = hprev(b, j);
        rh(b, j) = c.r[off + j] * hp;
        da_h(b, j) = dh * zj * (T(1) - cj * cj);
        da_zr(b, j) = dh * (cj - hp) * zj * (T(1) - zj);
        dhp(b, j) = dh * (T(1) - zj);
      }
    }
    dUm.rightCols(H).noalias() += rh.transpose() * da_h;
    d_rh.noalias() = da_h * Um.rightCols(H).transpose();
    for (std::size_t b = 0; b < B; ++b) {
      const std::size_t off = (b * T_ + t) * H;
      for (std::size_t j = 0; j < H; ++j) {
        const T rj = c.r[off + j];
        da_zr(b, H + j) = d_rh(b, j) * hprev(b, j) * rj * (T(1) - rj);
        dhp(b, j) += d_rh(b, j) * rj;
      }
    }
    dUm.leftCols(2 * H).noalias() += hprev.transpose() * da_zr;
    dhp.noalias() += da_zr * Um.leftCols(2 * H).transpose();
    for (std::size_t b = 0; b < B; ++b) {
      T* g = dgx.data() + (b * T_ + t) * 3 * H;
      for (std::size_t j = 0; j < H; ++j) {
        g[j] = da_zr(b, j);
        g[H + j] = da_zr(b, H + j);
        g[2 * H + j] = da_h(b, j);
      }
    }
    dh_next = dhp;
  }

  LayerGrad<T> g;
  ConstMatMap<T> dG(dgx.data(), B * T_, 3 * H);
  BasicTensor<T> dW({D, 3 * H});
  MatMap<T>(dW.data(), D, 3 * H).noalias() =
      ConstMatMap<T>(c.input.data(), B * T_, D).transpose() * dG;
  BasicTensor<T> db({3 * H});
  column_sums(dgx.data(), B * T_, 3 * H, db.data());
  BasicTensor<T> dx({B, T_, D});
  MatMap<T>(dx.data(), B * T_, D).noalias() =
      dG * ConstMatMap<T>(p.W.data(), D, 3 * H).transpose();
  BasicTensor<T> dh0({B, H});
  std::copy_n(dh_next.data(), B * H, dh0.data());

  g.d_input = c.batched ? std::move(dx) : dx.reshaped({T_, D});
  g.d_params.emplace("W", std::move(dW));
  g.d_params.emplace("U", std::move(dU));
  g.d_params.emplace("b", std::move(db));
  g.d_params.emplace("h0", c.batched ? std::move(dh0) : dh0.reshaped({H}));
  return g;
}

// ---- pooling, projection, normalization ------------------------------------

template <typename T>
BasicTensor<T> temporal_average(const BasicTensor<T>& x) {
  require(x.rank() == 2 || x.rank() == 3, ErrorKind::kDimension,
          "temporal_average expects [T,D] or [B,T,D], got " +
              shape_string(x.shape()));
  const bool batched = x.rank() == 3;
  const std::size_t B = batched ? x.dim(0) : 1;
  const std::size_t T_ = x.dim(batched ? 1 : 0);
  const std::size_t D = x.dim(batched ? 2 : 1);
  require(T_ > 0, ErrorKind::kEmptyUtterance, "temporal_average over T = 0");
  BasicTensor<T> y = batched ? BasicTensor<T>({B, D}) : BasicTensor<T>({D});
  std::vector<double> acc(D);
  for (std::size_t b = 0; b < B; ++b) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t t = 0; t < T_; ++t) {
      const T* row = x.data() + (b * T_ + t) * D;
      for (std::size_t d = 0; d < D; ++d) acc[d] += row[d];
    }
    for (std::size_t d = 0; d < D; ++d)
      y[b * D + d] = static_cast<T>(acc[d] / static_cast<double>(T_));
  }
  return y;
}

template <typename T>
BasicTensor<T> temporal_average_backward(const Shape& input_shape,
                                         const BasicTensor<T>& dy) {
  const bool batched = input_shape.size() == 3;
  const std::size_t B = batched ? input_shape[0] : 1;
  const std::size_t T_ = input_shape[batched ? 1 : 0];
  const std::size_t D = input_shape[batched ? 2 : 1];
  require(dy.size() == B * D, ErrorKind::kDimension,
          "temporal_average d_output " + shape_string(dy.shape()));
  BasicTensor<T> dx(input_shape);
  const T inv = T(1) / static_cast<T>(T_);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < T_; ++t)
      for (std::size_t d = 0; d < D; ++d)
        dx[(b * T_ + t) * D + d] = dy[b * D + d] * inv;
  return dx;
}

template <typename T>
BasicTensor<T> affine(const BasicTensor<T>& x, const BasicTensor<T>& W,
                      const BasicTensor<T>& b) {
  expect_rank(W.shape(), 2, "affine W");
  const std::size_t Din = W.dim(0), Dout = W.dim(1);
  expect_shape(b.shape(), {Dout}, "affine b");
  require(x.rank() == 1 || x.rank() == 2, ErrorKind::kDimension,
          "affine input must be [Din] or [B,Din]");
  const std::size_t B = x.rank() == 2 ? x.dim(0) : 1;
  require(x.dim(x.rank() - 1) == Din, ErrorKind::kDimension,
          "affine: input dim " + std::to_string(x.dim(x.rank() - 1)) +
              " vs W rows " + std::to_string(Din));
  BasicTensor<T> y = x.rank() == 2 ? BasicTensor<T>({B, Dout})
                                   : BasicTensor<T>({Dout});
  MatMap<T> Y(y.data(), B, Dout);
  Y.noalias() = ConstMatMap<T>(x.data(), B, Din) * ConstMatMap<T>(W.data(), Din, Dout);
  Y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(b.data(), Dout);
  return y;
}

template <typename T>
LayerGrad<T> affine_backward(const BasicTensor<T>& x, const BasicTensor<T>& W,
                             const BasicTensor<T>& dy) {
  const std::size_t Din = W.dim(0), Dout = W.dim(1);
  const std::size_t B = x.rank() == 2 ? x.dim(0) : 1;
  require(dy.size() == B * Dout, ErrorKind::kDimension,
          "affine d_output " + shape_string(dy.shape()));
  ConstMatMap<T> dY(dy.data(), B, Dout);
  LayerGrad<T> g;
  g.d_input = BasicTensor<T>(x.shape());
  MatMap<T>(g.d_input.data(), B, Din).noalias() =
      dY * ConstMatMap<T>(W.data(), Din, Dout).transpose();
  BasicTensor<T> dW({Din, Dout});
  MatMap<T>(dW.data(), Din, Dout).noalias() =
      ConstMatMap<T>(x.data(), B, Din).transpose() * dY;
  BasicTensor<T> db({Dout});
  column_sums(dy.data(), B, Dout, db.data());
  g.d_params.emplace("W", std::move(dW));
  g.d_params.emplace("b", std::move(db));
  return g;
}

template <typename T>
BasicTensor<T> l2_normalize(const BasicTensor<T>& x) {
  require(x.rank() == 1 || x.rank() == 2, ErrorKind::kDimension,
          "l2_normalize expects [D] or [B,D]");
  const std::size_t B = x.rank() == 2 ? x.dim(0) : 1;
  const std::size_t D = x.dim(x.rank() - 1);
  BasicTensor<T> y(x.shape());
  for (std::size_t b = 0; b < B; ++b) {
    double sq = 0.0;
    for (std::size_t d = 0; d < D; ++d) sq += double(x[b * D + d]) * x[b * D + d];
    const double norm = std::sqrt(sq);
    require(norm > kMinEmbeddingNorm, ErrorKind::kDegenerateEmbedding,
            "vector norm " + std::to_string(norm) + " too small to normalize");
    for (std::size_t d = 0; d < D; ++d)
      y[b * D + d] = static_cast<T>(x[b * D + d] / norm);
  }
  return y;
}

template <typename T>
BasicTensor<T> l2_normalize_backward(const BasicTensor<T>& x,
                                     const BasicTensor<T>& dy) {
  expect_shape(dy.shape(), x.shape(), "l2_normalize d_output");
  const std::size_t B = x.rank() == 2 ? x.dim(0) : 1;
  const std::size_t D = x.dim(x.rank() - 1);
  BasicTensor<T> dx(x.shape());
  for (std::size_t b = 0; b < B; ++b) {
    double sq = 0.0;
    for (std::size_t d = 0; d < D; ++d) sq += double(x[b * D + d]) * x[b * D + d];
    const double norm = std::sqrt(sq);
    require(norm > kMinEmbeddingNorm, ErrorKind::kDegenerateEmbedding,
            "vector norm too small in l2_normalize backward");
    double proj = 0.0;
    for (std::size_t d = 0; d < D; ++d) proj += double(x[b * D + d]) * dy[b * D + d];
    proj /= norm;
    for (std::size_t d = 0; d < D; ++d) {
      const double yd = x[b * D + d] / norm;
      dx[b * D + d] = static_cast<T>((dy[b * D + d] - yd * proj) / norm);
    }
  }
  return dx;
}

// ---- scores and losses -----------------------------------------------------

template <typename T>
double cosine_similarity(std::span<const T> a, std::span<const T> b) {
  require(a.size() == b.size(), ErrorKind::kDimension,
          "cosine_similarity: " + std::to_string(a.size()) + " vs " +
              std::to_string(b.size()));
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += double(a[i]) * b[i];
    na += double(a[i]) * a[i];
    nb += double(b[i]) * b[i];
  }
  na = std::sqrt(na);
  nb = std::sqrt(nb);
  require(std::abs(na - 1.0) <= kUnitNormTolerance &&
              std::abs(nb - 1.0) <= kUnitNormTolerance,
          ErrorKind::kContractViolation,
          "cosine_similarity requires unit-norm inputs (norms " +
              std::to_string(na) + ", " + std::to_string(nb) + ")");
  return dot;
}

template <typename T>
SoftmaxXent<T> softmax_xent(std::span<const T> logits, std::size_t label) {
  const std::size_t K = logits.size();
  require(K >= 2, ErrorKind::kDimension, "softmax_xent needs at least 2 classes");
  require(label < K, ErrorKind::kOutOfRange,
          "label " + std::to_string(label) + " outside [0," + std::to_string(K) + ")");
  double mx = -std::numeric_limits<double>::infinity();
  for (T v : logits) mx = std::max(mx, static_cast<double>(v));
  double sum = 0.0;
  for (T v : logits) sum += std::exp(static_cast<double>(v) - mx);
  const double lse = mx + std::log(sum);
  SoftmaxXent<T> out;
  out.loss = lse - static_cast<double>(logits[label]);
  out.d_logits.resize(K);
  for (std::size_t k = 0; k < K; ++k)
    out.d_logits[k] = static_cast<T>(std::exp(static_cast<double>(logits[k]) - lse) -
                                     (k == label ? 1.0 : 0.0));
  return out;
}

TripletTerm triplet_loss(double s_ap, double s_an, double alpha) {
  require(alpha >= 0.0, ErrorKind::kConfiguration, "triplet margin must be >= 0");
  const double v = s_an - s_ap + alpha;
  if (v > 0.0) return {v, -1.0, 1.0};
  return {0.0, 0.0, 0.0};
}

#define SPKEMB_INSTANTIATE(T)                                                  \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&, \
                                 const Conv2dGeometry&);                       \
  template LayerGrad<T> conv2d_backward(const BasicTensor<T>&,                 \
                                        const BasicTensor<T>&,                 \
                                        const BasicTensor<T>&,                 \
                                        const Conv2dGeometry&);                \
  template BasicTensor<T> clipped_relu(const BasicTensor<T>&);                 \
  template BasicTensor<T> clipped_relu_backward(const BasicTensor<T>&,         \
                                                const BasicTensor<T>&);        \
  template struct BatchNormParams<T>;                                          \
  template BasicTensor<T> batchnorm_seq(const BasicTensor<T>&,                 \
                                        const BatchNormParams<T>&, Mode,       \
                                        BatchNormCache<T>*,                    \
                                        BatchNormParams<T>*);                  \
  template LayerGrad<T> batchnorm_seq_backward(const BatchNormParams<T>&,      \
                                               const BatchNormCache<T>&,       \
                                               const BasicTensor<T>&);         \
  template BasicTensor<T> resblock(const BasicTensor<T>&,                      \
                                   const ResBlockParams<T>&, Mode,             \
                                   ResBlockCache<T>*, ResBlockParams<T>*);     \
  template LayerGrad<T> resblock_backward(const ResBlockParams<T>&,            \
                                          const ResBlockCache<T>&,             \
                                          const BasicTensor<T>&);              \
  template BasicTensor<T> gru_layer(const BasicTensor<T>&, const GruParams<T>&, \
                                    const BasicTensor<T>&, GruCache<T>*);      \
  template LayerGrad<T> gru_layer_backward(                                    \
      const GruParams<T>&, const GruCache<T>&, const BasicTensor<T>&);         \
  template BasicTensor<T> temporal_average(const BasicTensor<T>&);             \
  template BasicTensor<T> temporal_average_backward(const Shape&,              \
                                                    const BasicTensor<T>&);    \
  template BasicTensor<T> affine(const BasicTensor<T>&, const BasicTensor<T>&, \
                                 const BasicTensor<T>&);                       \
  template LayerGrad<T> affine_backward(const BasicTensor<T>&,                 \
                                        const BasicTensor<T>&,                 \
                                        const BasicTensor<T>&);                \
  template BasicTensor<T> l2_normalize(const BasicTensor<T>&);                 \
  template BasicTensor<T> l2_normalize_backward(const BasicTensor<T>&,         \
                                                const BasicTensor<T>&);        \
  template double cosine_similarity(std::span<const T>, std::span<const T>);   \
  template SoftmaxXent<T> softmax_xent(std::span<const T>, std::size_t);

SPKEMB_INSTANTIATE(float)
SPKEMB_INSTANTIATE(double)

#undef SPKEMB_INSTANTIATE

}  // namespace spkemb
