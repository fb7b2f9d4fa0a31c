#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

#include "mmcgan/rng.hpp"
#include "mmcgan/tensor.hpp"

// Neural-network primitives. Every backward pass here is written by hand
// and checked against finite_diff_grad in the test suite; Eigen only
// supplies the inner matrix products.

namespace mmc::nn {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;

enum class Mode { Train, Infer };
enum class Act { Relu, Tanh, Sigmoid };
enum class Reduction { Mean, Sum };

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

// Glorot-uniform weights, zero bias.
inline Tensor glorot_uniform(Rng& rng, std::vector<std::size_t> shape, std::size_t fan_in,
                             std::size_t fan_out) {
  Tensor t(std::move(shape));
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
  return t;
}

// ---------------------------------------------------------------- dense ---

struct DenseParams {
  Tensor W;  // [in, out]
  Tensor b;  // [out]

  static DenseParams init(Rng& rng, std::size_t in, std::size_t out) {
    DenseParams p;
    p.W = glorot_uniform(rng, {in, out}, in, out);
    p.b = Tensor({out});
    return p;
  }

  std::size_t in_dim() const { return W.dim(0); }
  std::size_t out_dim() const { return W.dim(1); }
};

struct DenseGrads {
  Tensor dx, dW, db;
};

inline Tensor dense_forward(const Tensor& x, const DenseParams& p) {
  require(x.rank() == 2, "dense_forward: x must be [batch, in]");
  require(x.dim(1) == p.in_dim(), "dense_forward: x has " + std::to_string(x.dim(1)) +
                                      " columns, layer expects " + std::to_string(p.in_dim()));
  const std::size_t B = x.dim(0), out = p.out_dim();
  Tensor y({B, out});
  ECMap xm(x.data(), B, x.dim(1));
  ECMap wm(p.W.data(), p.in_dim(), out);
  EMap ym(y.data(), B, out);
  ym.noalias() = xm * wm;
  for (std::size_t i = 0; i < B; ++i)
    for (std::size_t j = 0; j < out; ++j) y.at(i, j) += p.b[j];
  return y;
}

inline DenseGrads dense_backward(const Tensor& x, const DenseParams& p, const Tensor& dy) {
  require(dy.rank() == 2 && dy.dim(0) == x.dim(0) && dy.dim(1) == p.out_dim(),
          "dense_backward: dy shape mismatch");
  const std::size_t B = x.dim(0), in = p.in_dim(), out = p.out_dim();
  DenseGrads g{Tensor({B, in}), Tensor({in, out}), Tensor({out})};
  ECMap xm(x.data(), B, in);
  ECMap wm(p.W.data(), in, out);
  ECMap dym(dy.data(), B, out);
  EMap dxm(g.dx.data(), B, in);
  EMap dwm(g.dW.data(), in, out);
  dxm.noalias() = dym * wm.transpose();
  dwm.noalias() = xm.transpose() * dym;
  for (std::size_t i = 0; i < B; ++i)
    for (std::size_t j = 0; j < out; ++j) g.db[j] += dy.at(i, j);
  return g;
}

// ------------------------------------------------------------- conv 2x2 ---
// Valid cross-correlation with fixed 2x2 kernels, stride 1.

struct Conv2x2Params {
  Tensor K;  // [out_ch, in_ch, 2, 2]
  Tensor b;  // [out_ch]

  static Conv2x2Params init(Rng& rng, std::size_t in_ch, std::size_t out_ch) {
    Conv2x2Params p;
    p.K = glorot_uniform(rng, {out_ch, in_ch, 2, 2}, in_ch * 4, out_ch * 4);
    p.b = Tensor({out_ch});
    return p;
  }
};

struct ConvGrads {
  Tensor dx, dK, db;
};

namespace detail {
// Patches laid out [B*OH*OW, Cin*4]; kernel as [Cin*4, Cout].
inline Tensor im2col2x2(const Tensor& x) {
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t OH = H - 1, OW = W - 1;
  Tensor cols({B * OH * OW, C * 4});
  double* dst = cols.data();
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t i = 0; i < OH; ++i)
      for (std::size_t j = 0; j < OW; ++j)
        for (std::size_t c = 0; c < C; ++c) {
          const double* src = &x.values()[((n * C + c) * H + i) * W + j];
          *dst++ = src[0];
          *dst++ = src[1];
          *dst++ = src[W];
          *dst++ = src[W + 1];
        }
  return cols;
}
}  // namespace detail

inline Tensor conv2x2_forward(const Tensor& x, const Conv2x2Params& p) {
  require(x.rank() == 4, "conv2x2_forward: x must be [batch, ch, h, w]");
  require(x.dim(2) >= 2 && x.dim(3) >= 2, "conv2x2_forward: spatial dims must be >= 2");
  require(x.dim(1) == p.K.dim(1), "conv2x2_forward: channel mismatch");
  const std::size_t B = x.dim(0), Cin = x.dim(1), Cout = p.K.dim(0);
  const std::size_t OH = x.dim(2) - 1, OW = x.dim(3) - 1;
  Tensor cols = detail::im2col2x2(x);
  Tensor y({B, Cout, OH, OW});
  // Kernel transposed to [Cin*4, Cout]; K is [Cout][Cin][2][2] row-major,
  // so column c of the matmul is the flattened kernel for channel c.
  EMat kt(Cin * 4, Cout);
  for (std::size_t co = 0; co < Cout; ++co)
    for (std::size_t k = 0; k < Cin * 4; ++k) kt(k, co) = p.K[co * Cin * 4 + k];
  ECMap cm(cols.data(), B * OH * OW, Cin * 4);
  EMat prod = cm * kt;  // [B*OH*OW, Cout]
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t i = 0; i < OH; ++i)
      for (std::size_t j = 0; j < OW; ++j) {
        const std::size_t row = (n * OH + i) * OW + j;
        for (std::size_t co = 0; co < Cout; ++co)
          y.at4(n, co, i, j) = prod(row, co) + p.b[co];
      }
  return y;
}

inline ConvGrads conv2x2_backward(const Tensor& x, const Conv2x2Params& p, const Tensor& dy) {
  const std::size_t B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Cout = p.K.dim(0), OH = H - 1, OW = W - 1;
  require(dy.rank() == 4 && dy.dim(0) == B && dy.dim(1) == Cout && dy.dim(2) == OH &&
              dy.dim(3) == OW,
          "conv2x2_backward: dy shape mismatch");
  ConvGrads g{Tensor({B, Cin, H, W}), Tensor({Cout, Cin, 2, 2}), Tensor({Cout})};

  // dy rearranged to [B*OH*OW, Cout]
  EMat dym(B * OH * OW, Cout);
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t i = 0; i < OH; ++i)
      for (std::size_t j = 0; j < OW; ++j) {
        const std::size_t row = (n * OH + i) * OW + j;
        for (std::size_t co = 0; co < Cout; ++co) {
          const double v = dy.at4(n, co, i, j);
          dym(row, co) = v;
          g.db[co] += v;
        }
      }

  Tensor cols = detail::im2col2x2(x);
  ECMap cm(cols.data(), B * OH * OW, Cin * 4);
  EMat dk = cm.transpose() * dym;  // [Cin*4, Cout]
  for (std::size_t co = 0; co < Cout; ++co)
    for (std::size_t k = 0; k < Cin * 4; ++k) g.dK[co * Cin * 4 + k] = dk(k, co);

  EMat kt(Cin * 4, Cout);
  for (std::size_t co = 0; co < Cout; ++co)
    for (std::size_t k = 0; k < Cin * 4; ++k) kt(k, co) = p.K[co * Cin * 4 + k];
  EMat dcols = dym * kt.transpose();  // [B*OH*OW, Cin*4]
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t i = 0; i < OH; ++i)
      for (std::size_t j = 0; j < OW; ++j) {
        const std::size_t row = (n * OH + i) * OW + j;
        for (std::size_t c = 0; c < Cin; ++c) {
          double* dst = &g.dx.values()[((n * Cin + c) * H + i) * W + j];
          const double* src = &dcols(row, c * 4);
          dst[0] += src[0];
          dst[1] += src[1];
          dst[W] += src[2];
          dst[W + 1] += src[3];
        }
      }
  return g;
}

// ------------------------------------------------------------- max pool ---
// 2x2 stride-2 max pooling. Odd spatial dims are replication-padded on the
// bottom/right edge; ties go to the first index in row-major order so the
// backward pass is deterministic.

struct PoolResult {
  Tensor y;
  std::vector<std::uint32_t> argmax;  // flat input index per output element
  std::vector<std::size_t> in_shape;
};

inline PoolResult maxpool2x2(const Tensor& x) {
  require(x.rank() == 4, "maxpool2x2: x must be [batch, ch, h, w]");
  require(!x.empty(), "maxpool2x2: empty tensor");
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t OH = (H + 1) / 2, OW = (W + 1) / 2;
  PoolResult r{Tensor({B, C, OH, OW}), {}, x.shape()};
  r.argmax.resize(B * C * OH * OW);
  std::size_t out = 0;
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < OH; ++i)
        for (std::size_t j = 0; j < OW; ++j) {
          const std::size_t i1 = std::min(2 * i + 1, H - 1);
          const std::size_t j1 = std::min(2 * j + 1, W - 1);
          double best = -1e308;
          std::size_t best_idx = 0;
          for (std::size_t ii = 2 * i; ii <= i1; ++ii)
            for (std::size_t jj = 2 * j; jj <= j1; ++jj) {
              const std::size_t idx = ((n * C + c) * H + ii) * W + jj;
              if (x[idx] > best) {
                best = x[idx];
                best_idx = idx;
              }
            }
          r.y[out] = best;
          r.argmax[out] = static_cast<std::uint32_t>(best_idx);
          ++out;
        }
  return r;
}

inline Tensor maxpool2x2_backward(const PoolResult& pool, const Tensor& dy) {
  require(dy.same_shape(pool.y), "maxpool2x2_backward: dy shape mismatch");
  Tensor dx(pool.in_shape);
  for (std::size_t i = 0; i < dy.size(); ++i) dx[pool.argmax[i]] += dy[i];
  return dx;
}

// ----------------------------------------------------------- activation ---

inline Tensor activation(const Tensor& x, Act kind) {
  Tensor y = x;
  switch (kind) {
    case Act::Relu:
      for (double& v : y.values()) v = v > 0.0 ? v : 0.0;
      break;
    case Act::Tanh:
      for (double& v : y.values()) v = std::tanh(v);
      break;
    case Act::Sigmoid:
      for (double& v : y.values()) v = 1.0 / (1.0 + std::exp(-v));
      break;
  }
  return y;
}

// Backward from the forward *output* y (all three have output-form derivatives).
inline Tensor activation_backward(const Tensor& y, Act kind, const Tensor& dy) {
  require(y.same_shape(dy), "activation_backward: shape mismatch");
  Tensor dx = dy;
  switch (kind) {
    case Act::Relu:
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = y[i] > 0.0 ? dx[i] : 0.0;
      break;
    case Act::Tanh:
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= 1.0 - y[i] * y[i];
      break;
    case Act::Sigmoid:
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= y[i] * (1.0 - y[i]);
      break;
  }
  return dx;
}

// ------------------------------------------------------ softmax / x-ent ---

inline Tensor softmax(const Tensor& logits) {
  require(logits.rank() == 2, "softmax: logits must be [batch, classes]");
  require(logits.all_finite(), "softmax: non-finite logits");
  const std::size_t B = logits.dim(0), K = logits.dim(1);
  Tensor p({B, K});
  for (std::size_t i = 0; i < B; ++i) {
    double mx = logits.at(i, 0);
    for (std::size_t j = 1; j < K; ++j) mx = std::max(mx, logits.at(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < K; ++j) {
      const double e = std::exp(logits.at(i, j) - mx);
      p.at(i, j) = e;
      z += e;
    }
    for (std::size_t j = 0; j < K; ++j) p.at(i, j) /= z;
  }
  return p;
}

// J_C over explicit probabilities; probabilities at the true class are
// floored at 1e-12 (clamp events are counted for the caller).
inline double cross_entropy(const Tensor& probs, const Tensor& onehot,
                            Reduction red = Reduction::Mean,
                            std::size_t* clamp_count = nullptr) {
  require(probs.same_shape(onehot), "cross_entropy: shape mismatch");
  require(probs.rank() == 2, "cross_entropy: inputs must be [batch, classes]");
  const std::size_t B = probs.dim(0), K = probs.dim(1);
  double loss = 0.0;
  for (std::size_t i = 0; i < B; ++i)
    for (std::size_t j = 0; j < K; ++j) {
      if (onehot.at(i, j) == 0.0) continue;
      double p = probs.at(i, j);
      if (p < 1e-12) {
        p = 1e-12;
        if (clamp_count) ++(*clamp_count);
      }
      loss -= onehot.at(i, j) * std::log(p);
    }
  return red == Reduction::Mean ? loss / static_cast<double>(B) : loss;
}

// Fused log-softmax cross-entropy; returns the loss and fills dlogits.
inline double softmax_cross_entropy(const Tensor& logits, const Tensor& onehot,
                                    Reduction red = Reduction::Mean,
                                    Tensor* dlogits = nullptr) {
  require(logits.same_shape(onehot), "softmax_cross_entropy: shape mismatch");
  const std::size_t B = logits.dim(0), K = logits.dim(1);
  Tensor p = softmax(logits);
  double loss = 0.0;
  for (std::size_t i = 0; i < B; ++i) {
    double mx = logits.at(i, 0);
    for (std::size_t j = 1; j < K; ++j) mx = std::max(mx, logits.at(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < K; ++j) z += std::exp(logits.at(i, j) - mx);
    const double logz = std::log(z) + mx;
    for (std::size_t j = 0; j < K; ++j)
      if (onehot.at(i, j) != 0.0) loss -= onehot.at(i, j) * (logits.at(i, j) - logz);
  }
  const double scale = red == Reduction::Mean ? 1.0 / static_cast<double>(B) : 1.0;
  if (dlogits) {
    *dlogits = Tensor({B, K});
    for (std::size_t i = 0; i < B; ++i)
      for (std::size_t j = 0; j < K; ++j)
        dlogits->at(i, j) = (p.at(i, j) - onehot.at(i, j)) * scale;
  }
  return loss * scale;
}

// ------------------------------------------------------------ batchnorm ---

struct BatchNormParams {
  Tensor gamma, beta;
  Tensor run_mean, run_var;
  double momentum = 0.9;
  double eps = 1e-5;

  static BatchNormParams init(std::size_t features) {
    BatchNormParams p;
    p.gamma = Tensor::full({features}, 1.0);
    p.beta = Tensor({features});
    p.run_mean = Tensor({features});
    p.run_var = Tensor({features});
    return p;
  }
};

struct BnCache {
  Tensor xhat;     // normalized input
  Tensor inv_std;  // per-feature 1/sqrt(var+eps)
};

inline Tensor batchnorm_forward(const Tensor& x, BatchNormParams& p, Mode mode,
                                BnCache* cache = nullptr) {
  require(x.rank() == 2, "batchnorm: x must be [batch, features]");
  const std::size_t B = x.dim(0), F = x.dim(1);
  require(x.dim(1) == p.gamma.dim(0), "batchnorm: feature mismatch");
  Tensor y({B, F});
  if (mode == Mode::Train) {
    require(B >= 2, "batchnorm: train mode needs batch >= 2");
    Tensor xhat({B, F});
    Tensor inv_std({F});
    for (std::size_t j = 0; j < F; ++j) {
      double mean = 0.0;
      for (std::size_t i = 0; i < B; ++i) mean += x.at(i, j);
      mean /= static_cast<double>(B);
      double var = 0.0;
      for (std::size_t i = 0; i < B; ++i) {
        const double d = x.at(i, j) - mean;
        var += d * d;
      }
      var /= static_cast<double>(B);
      const double is = 1.0 / std::sqrt(var + p.eps);
      inv_std[j] = is;
      for (std::size_t i = 0; i < B; ++i) {
        xhat.at(i, j) = (x.at(i, j) - mean) * is;
        y.at(i, j) = p.gamma[j] * xhat.at(i, j) + p.beta[j];
      }
      p.run_mean[j] = p.momentum * p.run_mean[j] + (1.0 - p.momentum) * mean;
      p.run_var[j] = p.momentum * p.run_var[j] + (1.0 - p.momentum) * var;
    }
    if (cache) {
      cache->xhat = std::move(xhat);
      cache->inv_std = std::move(inv_std);
    }
  } else {
    for (std::size_t j = 0; j < F; ++j) {
      const double is = 1.0 / std::sqrt(p.run_var[j] + p.eps);
      for (std::size_t i = 0; i < B; ++i)
        y.at(i, j) = p.gamma[j] * (x.at(i, j) - p.run_mean[j]) * is + p.beta[j];
    }
  }
  return y;
}

struct BnGrads {
  Tensor dx, dgamma, dbeta;
};

inline BnGrads batchnorm_backward(const BnCache& cache, const BatchNormParams& p,
                                  const Tensor& dy) {
  const std::size_t B = dy.dim(0), F = dy.dim(1);
  require(cache.xhat.same_shape(dy), "batchnorm_backward: dy shape mismatch");
  BnGrads g{Tensor({B, F}), Tensor({F}), Tensor({F})};
  const double invB = 1.0 / static_cast<double>(B);
  for (std::size_t j = 0; j < F; ++j) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (std::size_t i = 0; i < B; ++i) {
      sum_dy += dy.at(i, j);
      sum_dy_xhat += dy.at(i, j) * cache.xhat.at(i, j);
    }
    g.dbeta[j] = sum_dy;
    g.dgamma[j] = sum_dy_xhat;
    const double k = p.gamma[j] * cache.inv_std[j];
    for (std::size_t i = 0; i < B; ++i)
      g.dx.at(i, j) =
          k * (dy.at(i, j) - invB * sum_dy - invB * cache.xhat.at(i, j) * sum_dy_xhat);
  }
  return g;
}

// -------------------------------------------------------------- dropout ---
// Inverted dropout: survivors are scaled by 1/(1-rate) so inference is the
// identity map.

struct DropoutResult {
  Tensor y;
  std::vector<std::uint8_t> keep;
  double rate = 0.0;
};

inline DropoutResult dropout(const Tensor& x, double rate, Mode mode, Rng& rng) {
  require(rate >= 0.0 && rate < 1.0, "dropout: rate must be in [0,1)");
  DropoutResult r;
  r.rate = rate;
  if (mode == Mode::Infer || rate == 0.0) {
    r.y = x;
    return r;
  }
  const double scale = 1.0 / (1.0 - rate);
  r.y = x;
  r.keep.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (rng.uniform() < rate) {
      r.keep[i] = 0;
      r.y[i] = 0.0;
    } else {
      r.keep[i] = 1;
      r.y[i] *= scale;
    }
  }
  return r;
}

inline Tensor dropout_backward(const DropoutResult& d, const Tensor& dy) {
  if (d.keep.empty()) return dy;  // was identity
  Tensor dx = dy;
  const double scale = 1.0 / (1.0 - d.rate);
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = d.keep[i] ? dx[i] * scale : 0.0;
  return dx;
}

// ----------------------------------------------------------------- adam ---

struct AdamHyper {
  double lr = 5e-5;
  double beta1 = 0.5;
  double beta2 = 0.9;
  double eps = 1e-8;
};

struct AdamState {
  Tensor m, v;
  long long t = 0;

  static AdamState like(const Tensor& param) {
    return AdamState{Tensor(param.shape()), Tensor(param.shape()), 0};
  }
};

inline void adam_step(Tensor& param, const Tensor& grad, AdamState& s, const AdamHyper& h) {
  require(param.same_shape(grad) && param.same_shape(s.m),
          "adam_step: shape mismatch between parameter, gradient, and state");
  if (!grad.all_finite())
    throw std::runtime_error("adam_step: non-finite gradient (step aborted at t=" +
                             std::to_string(s.t + 1) + ")");
  s.t += 1;
  const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(s.t));
  const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(s.t));
  for (std::size_t i = 0; i < param.size(); ++i) {
    s.m[i] = h.beta1 * s.m[i] + (1.0 - h.beta1) * grad[i];
    s.v[i] = h.beta2 * s.v[i] + (1.0 - h.beta2) * grad[i] * grad[i];
    const double mhat = s.m[i] / bc1;
    const double vhat = s.v[i] / bc2;
    param[i] -= h.lr * mhat / (std::sqrt(vhat) + h.eps);
  }
}

// ------------------------------------------------------ finite differences ---
// Central differences, one coordinate at a time. This is the gradient
// oracle the whole backward suite is validated against.

inline Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, Tensor x,
                               double eps = 1e-5) {
  Tensor g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + eps;
    const double fp = f(x);
    x[i] = orig - eps;
    const double fm = f(x);
    x[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw std::runtime_error("finite_diff_grad: f returned a non-finite value");
    g[i] = (fp - fm) / (2.0 * eps);
  }
  return g;
}

}  // namespace mmc::nn
