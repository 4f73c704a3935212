#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <vector>

#include "picodiff/tensor.hpp"

namespace picodiff {

using MatRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatCM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>;
using ArrMap = Eigen::Map<Eigen::ArrayXf>;
using CArrMap = Eigen::Map<const Eigen::ArrayXf>;

namespace detail {

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) throw PreconditionError(std::string(op) + ": shape mismatch");
}

inline void accumulate(TensorImpl* p, const float* src, size_t n) {
  if (!p->requires_grad) return;
  p->ensure_grad();
  float* g = p->g.data();
  for (size_t i = 0; i < n; ++i) g[i] += src[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "add");
  Tensor out = detail::make_op(a.shape(), {a, b}, [pa = a.impl(), pb = b.impl()](TensorImpl& o) {
    detail::accumulate(pa.get(), o.g.data(), o.g.size());
    detail::accumulate(pb.get(), o.g.data(), o.g.size());
  });
  const float* av = a.data();
  const float* bv = b.data();
  float* ov = out.data();
  for (size_t i = 0, n = out.numel(); i < n; ++i) ov[i] = av[i] + bv[i];
  return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "sub");
  Tensor out = detail::make_op(a.shape(), {a, b}, [pa = a.impl(), pb = b.impl()](TensorImpl& o) {
    detail::accumulate(pa.get(), o.g.data(), o.g.size());
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (size_t i = 0; i < o.g.size(); ++i) pb->g[i] -= o.g[i];
    }
  });
  const float* av = a.data();
  const float* bv = b.data();
  float* ov = out.data();
  for (size_t i = 0, n = out.numel(); i < n; ++i) ov[i] = av[i] - bv[i];
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "mul");
  Tensor out = detail::make_op(a.shape(), {a, b}, [pa = a.impl(), pb = b.impl()](TensorImpl& o) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (size_t i = 0; i < o.g.size(); ++i) pa->g[i] += o.g[i] * pb->v[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (size_t i = 0; i < o.g.size(); ++i) pb->g[i] += o.g[i] * pa->v[i];
    }
  });
  const float* av = a.data();
  const float* bv = b.data();
  float* ov = out.data();
  for (size_t i = 0, n = out.numel(); i < n; ++i) ov[i] = av[i] * bv[i];
  return out;
}

inline Tensor scale(const Tensor& a, float s) {
  Tensor out = detail::make_op(a.shape(), {a}, [pa = a.impl(), s](TensorImpl& o) {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (size_t i = 0; i < o.g.size(); ++i) pa->g[i] += o.g[i] * s;
  });
  const float* av = a.data();
  float* ov = out.data();
  for (size_t i = 0, n = out.numel(); i < n; ++i) ov[i] = av[i] * s;
  return out;
}

inline Tensor add_scalar(const Tensor& a, float s) {
  Tensor out = detail::make_op(a.shape(), {a}, [pa = a.impl()](TensorImpl& o) {
    detail::accumulate(pa.get(), o.g.data(), o.g.size());
  });
  const float* av = a.data();
  float* ov = out.data();
  for (size_t i = 0, n = out.numel(); i < n; ++i) ov[i] = av[i] + s;
  return out;
}

inline Tensor neg(const Tensor& a) { return scale(a, -1.f); }

inline Tensor relu(const Tensor& a) {
  Tensor out = detail::make_op(a.shape(), {a}, [pa = a.impl()](TensorImpl& o) {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (size_t i = 0; i < o.g.size(); ++i)
      if (pa->v[i] > 0.f) pa->g[i] += o.g[i];
  });
  const auto n = static_cast<Eigen::Index>(out.numel());
  ArrMap(out.data(), n) = CArrMap(a.data(), n).max(0.f);
  return out;
}

inline Tensor leaky_relu(const Tensor& a, float slope = 0.2f) {
  Tensor out = detail::make_op(a.shape(), {a}, [pa = a.impl(), slope](TensorImpl& o) {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (size_t i = 0; i < o.g.size(); ++i)
      pa->g[i] += o.g[i] * (pa->v[i] > 0.f ? 1.f : slope);
  });
  const float* av = a.data();
  float* ov = out.data();
  for (size_t i = 0, n = out.numel(); i < n; ++i) ov[i] = av[i] > 0.f ? av[i] : slope * av[i];
  return out;
}

inline Tensor silu(const Tensor& a) {
  Tensor out = detail::make_op(a.shape(), {a}, [pa = a.impl()](TensorImpl& o) {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    const auto n = static_cast<Eigen::Index>(o.g.size());
    CArrMap X(pa->v.data(), n), GO(o.g.data(), n);
    Eigen::ArrayXf s = 1.f / (1.f + (-X).exp());
    ArrMap(pa->g.data(), n) += GO * s * (1.f + X * (1.f - s));
  });
  const auto n = static_cast<Eigen::Index>(out.numel());
  CArrMap X(a.data(), n);
  ArrMap(out.data(), n) = X / (1.f + (-X).exp());
  return out;
}

inline Tensor sigmoid(const Tensor& a) {
  Tensor out = detail::make_op(a.shape(), {a}, [pa = a.impl()](TensorImpl& o) {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (size_t i = 0; i < o.g.size(); ++i) {
      float s = o.v[i];
      pa->g[i] += o.g[i] * s * (1.f - s);
    }
  });
  const auto n = static_cast<Eigen::Index>(out.numel());
  ArrMap(out.data(), n) = 1.f / (1.f + (-CArrMap(a.data(), n)).exp());
  return out;
}

// log(1 + e^x), evaluated stably. d/dx = sigmoid(x).
inline Tensor softplus(const Tensor& a) {
  Tensor out = detail::make_op(a.shape(), {a}, [pa = a.impl()](TensorImpl& o) {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    const auto n = static_cast<Eigen::Index>(o.g.size());
    ArrMap(pa->g.data(), n) +=
        CArrMap(o.g.data(), n) / (1.f + (-CArrMap(pa->v.data(), n)).exp());
  });
  const float* av = a.data();
  float* ov = out.data();
  for (size_t i = 0, n = out.numel(); i < n; ++i) {
    float x = av[i];
    ov[i] = std::max(x, 0.f) + std::log1p(std::exp(-std::fabs(x)));
  }
  return out;
}

inline Tensor sqrt_ew(const Tensor& a) {
  Tensor out = detail::make_op(a.shape(), {a}, [pa = a.impl()](TensorImpl& o) {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (size_t i = 0; i < o.g.size(); ++i)
      pa->g[i] += o.g[i] * 0.5f / std::max(o.v[i], 1e-12f);
  });
  const float* av = a.data();
  float* ov = out.data();
  for (size_t i = 0, n = out.numel(); i < n; ++i) ov[i] = std::sqrt(std::max(av[i], 0.f));
  return out;
}

// Hard clamp; gradient passes only where the input is strictly inside range.
inline Tensor clamp(const Tensor& a, float lo, float hi) {
  Tensor out = detail::make_op(a.shape(), {a}, [pa = a.impl(), lo, hi](TensorImpl& o) {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (size_t i = 0; i < o.g.size(); ++i)
      if (pa->v[i] > lo && pa->v[i] < hi) pa->g[i] += o.g[i];
  });
  const float* av = a.data();
  float* ov = out.data();
  for (size_t i = 0, n = out.numel(); i < n; ++i) ov[i] = std::min(hi, std::max(lo, av[i]));
  return out;
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

// y = x W^T + b.  x: [B,I], W: [O,I], b: [O] (may be undefined).
inline Tensor linear(const Tensor& x, const Tensor& W, const Tensor& b) {
  const int B = x.dim(0), I = x.dim(1), O = W.dim(0);
  if (W.dim(1) != I) throw PreconditionError("linear: weight shape mismatch");
  std::vector<Tensor> parents{x, W};
  if (b.defined()) parents.push_back(b);
  Tensor out = detail::make_op(
      {B, O}, parents,
      [px = x.impl(), pW = W.impl(), pb = b.defined() ? b.impl() : nullptr, B, I, O](TensorImpl& o) {
        Eigen::Map<const MatRM> dY(o.g.data(), B, O);
        if (px->requires_grad) {
          px->ensure_grad();
          Eigen::Map<const MatRM> Wm(pW->v.data(), O, I);
          Eigen::Map<MatRM> dX(px->g.data(), B, I);
          dX.noalias() += dY * Wm;
        }
        if (pW->requires_grad) {
          pW->ensure_grad();
          Eigen::Map<const MatRM> X(px->v.data(), B, I);
          Eigen::Map<MatRM> dW(pW->g.data(), O, I);
          dW.noalias() += dY.transpose() * X;
        }
        if (pb && pb->requires_grad) {
          pb->ensure_grad();
          for (int bi = 0; bi < B; ++bi)
            for (int oi = 0; oi < O; ++oi) pb->g[static_cast<size_t>(oi)] += dY(bi, oi);
        }
      });
  Eigen::Map<const MatRM> X(x.data(), B, I);
  Eigen::Map<const MatRM> Wm(W.data(), O, I);
  Eigen::Map<MatRM> Y(out.data(), B, O);
  Y.noalias() = X * Wm.transpose();
  if (b.defined()) {
    const float* bv = b.data();
    for (int bi = 0; bi < B; ++bi)
      for (int oi = 0; oi < O; ++oi) Y(bi, oi) += bv[oi];
  }
  return out;
}

namespace detail {

// Reused scratch for the im2col/GEMM buffers; sized to the largest layer seen.
inline float* scratch_buffer(size_t n, int which) {
  thread_local FloatVec bufs[4];
  auto& b = bufs[which];
  if (b.size() < n) b.resize(n);
  return b.data();
}

using ColMap = Eigen::Map<MatRM>;

// Scatter-add one sample's gradient columns back into the input gradient.
// Element (row, p) of the column matrix lives at colbase[row*colstride +
// coloffset + p].
inline void col2im_add_strided(const float* colbase, size_t colstride, size_t coloffset, int C,
                               int H, int W, int k, int pad, float* gx) {
  const int HW = H * W;
  for (int c = 0; c < C; ++c) {
    float* gc = gx + static_cast<size_t>(c) * HW;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const int row = (c * k + ky) * k + kx;
        const int dx = kx - pad;
        const int xlo = std::max(0, -dx);
        const int xhi = std::min(W, W - dx);
        const float* rowbase = colbase + static_cast<size_t>(row) * colstride + coloffset;
        for (int y = 0; y < H; ++y) {
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= H) continue;
          const float* src = rowbase + static_cast<size_t>(y) * W;
          float* dst = gc + static_cast<size_t>(sy) * W + dx;
          for (int xo = xlo; xo < xhi; ++xo) dst[xo] += src[xo];
        }
      }
    }
  }
}

}  // namespace detail

namespace detail {

inline void im2col_all(const float* x, int B, int C, int H, int W, int k, int pad, ColMap& cols) {
  const int HW = H * W;
  for (int bi = 0; bi < B; ++bi) {
    // write sample bi into the column range [bi*HW, (bi+1)*HW)
    for (int c = 0; c < C; ++c) {
      const float* xc = x + (static_cast<size_t>(bi) * C + c) * HW;
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          const int row = (c * k + ky) * k + kx;
          const int dx = kx - pad;
          const int xlo = std::max(0, -dx);
          const int xhi = std::min(W, W - dx);
          float* rowbase = cols.data() + static_cast<size_t>(row) * cols.cols() +
                           static_cast<size_t>(bi) * HW;
          for (int y = 0; y < H; ++y) {
            const int sy = y + ky - pad;
            float* dst = rowbase + static_cast<size_t>(y) * W;
            if (sy < 0 || sy >= H) {
              std::fill(dst, dst + W, 0.f);
              continue;
            }
            const float* src = xc + static_cast<size_t>(sy) * W + dx;
            if (xlo > 0) std::fill(dst, dst + xlo, 0.f);
            std::copy(src + xlo, src + xhi, dst + xlo);
            if (xhi < W) std::fill(dst + xhi, dst + W, 0.f);
          }
        }
      }
    }
  }
}

}  // namespace detail

// Same-size convolution, stride 1, pad k/2. x: [B,C,H,W], W: [Co,C,k,k], b: [Co].
// One batch-wide GEMM per call; the [Co, B*HW] product is shuffled back to
// [B,Co,H,W] afterwards.
inline Tensor conv2d(const Tensor& x, const Tensor& W, const Tensor& b) {
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), Wd = x.dim(3);
  const int Co = W.dim(0), k = W.dim(2);
  if (W.dim(1) != C || W.dim(3) != k) throw PreconditionError("conv2d: weight shape mismatch");
  const int pad = k / 2;
  const int HW = H * Wd;
  const int CKK = C * k * k;
  const size_t BHW = static_cast<size_t>(B) * HW;
  std::vector<Tensor> parents{x, W};
  if (b.defined()) parents.push_back(b);
  Tensor out = detail::make_op(
      {B, Co, H, Wd}, parents,
      [px = x.impl(), pW = W.impl(), pb = b.defined() ? b.impl() : nullptr, B, C, H, Wd, Co, k, pad,
       HW, CKK, BHW](TensorImpl& o) {
        Eigen::Map<const MatRM> Wm(pW->v.data(), Co, CKK);
        // gather output grads into [Co, B*HW]
        detail::ColMap dY(detail::scratch_buffer(static_cast<size_t>(Co) * BHW, 3), Co,
                          static_cast<int>(BHW));
        for (int bi = 0; bi < B; ++bi)
          for (int co = 0; co < Co; ++co)
            std::copy_n(o.g.data() + (static_cast<size_t>(bi) * Co + co) * HW, HW,
                        dY.data() + static_cast<size_t>(co) * BHW + static_cast<size_t>(bi) * HW);
        if (pW->requires_grad || px->requires_grad) {
          detail::ColMap cols(detail::scratch_buffer(static_cast<size_t>(CKK) * BHW, 1), CKK,
                              static_cast<int>(BHW));
          if (pW->requires_grad) {
            pW->ensure_grad();
            detail::im2col_all(px->v.data(), B, C, H, Wd, k, pad, cols);
            Eigen::Map<MatRM> dW(pW->g.data(), Co, CKK);
            dW.noalias() += dY * cols.transpose();
          }
          if (px->requires_grad) {
            px->ensure_grad();
            detail::ColMap dcols(detail::scratch_buffer(static_cast<size_t>(CKK) * BHW, 2), CKK,
                                 static_cast<int>(BHW));
            dcols.noalias() = Wm.transpose() * dY;
            for (int bi = 0; bi < B; ++bi)
              detail::col2im_add_strided(dcols.data(), BHW, static_cast<size_t>(bi) * HW, C, H, Wd,
                                         k, pad, px->g.data() + static_cast<size_t>(bi) * C * HW);
          }
        }
        if (pb && pb->requires_grad) {
          pb->ensure_grad();
          for (int co = 0; co < Co; ++co) {
            double s = 0.0;
            const float* row = dY.data() + static_cast<size_t>(co) * BHW;
            for (size_t p = 0; p < BHW; ++p) s += row[p];
            pb->g[static_cast<size_t>(co)] += static_cast<float>(s);
          }
        }
      });
  Eigen::Map<const MatRM> Wm(W.data(), Co, CKK);
  detail::ColMap cols(detail::scratch_buffer(static_cast<size_t>(CKK) * BHW, 0), CKK,
                      static_cast<int>(BHW));
  detail::im2col_all(x.data(), B, C, H, Wd, k, pad, cols);
  detail::ColMap Y(detail::scratch_buffer(static_cast<size_t>(Co) * BHW, 3), Co,
                   static_cast<int>(BHW));
  Y.noalias() = Wm * cols;
  const float* bv = b.defined() ? b.data() : nullptr;
  for (int bi = 0; bi < B; ++bi) {
    for (int co = 0; co < Co; ++co) {
      const float* src = Y.data() + static_cast<size_t>(co) * BHW + static_cast<size_t>(bi) * HW;
      float* dst = out.data() + (static_cast<size_t>(bi) * Co + co) * HW;
      if (bv) {
        const float bias = bv[co];
        for (int p = 0; p < HW; ++p) dst[p] = src[p] + bias;
      } else {
        std::copy_n(src, HW, dst);
      }
    }
  }
  return out;
}

inline Tensor avg_pool2(const Tensor& x) {
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Ho = H / 2, Wo = W / 2;
  Tensor out = detail::make_op({B, C, Ho, Wo}, {x}, [px = x.impl(), B, C, H, W, Ho, Wo](TensorImpl& o) {
    if (!px->requires_grad) return;
    px->ensure_grad();
    for (int bc = 0; bc < B * C; ++bc) {
      const float* go = o.g.data() + static_cast<size_t>(bc) * Ho * Wo;
      float* gi = px->g.data() + static_cast<size_t>(bc) * H * W;
      for (int y = 0; y < Ho; ++y)
        for (int xo = 0; xo < Wo; ++xo) {
          float v = go[y * Wo + xo] * 0.25f;
          gi[(2 * y) * W + 2 * xo] += v;
          gi[(2 * y) * W + 2 * xo + 1] += v;
          gi[(2 * y + 1) * W + 2 * xo] += v;
          gi[(2 * y + 1) * W + 2 * xo + 1] += v;
        }
    }
  });
  const float* xv = x.data();
  float* ov = out.data();
  for (int bc = 0; bc < B * C; ++bc) {
    const float* xi = xv + static_cast<size_t>(bc) * H * W;
    float* oo = ov + static_cast<size_t>(bc) * Ho * Wo;
    for (int y = 0; y < Ho; ++y)
      for (int xo = 0; xo < Wo; ++xo)
        oo[y * Wo + xo] = 0.25f * (xi[(2 * y) * W + 2 * xo] + xi[(2 * y) * W + 2 * xo + 1] +
                                   xi[(2 * y + 1) * W + 2 * xo] + xi[(2 * y + 1) * W + 2 * xo + 1]);
  }
  return out;
}

inline Tensor upsample2(const Tensor& x) {
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Ho = H * 2, Wo = W * 2;
  Tensor out = detail::make_op({B, C, Ho, Wo}, {x}, [px = x.impl(), B, C, H, W, Ho, Wo](TensorImpl& o) {
    if (!px->requires_grad) return;
    px->ensure_grad();
    for (int bc = 0; bc < B * C; ++bc) {
      const float* go = o.g.data() + static_cast<size_t>(bc) * Ho * Wo;
      float* gi = px->g.data() + static_cast<size_t>(bc) * H * W;
      for (int y = 0; y < H; ++y)
        for (int xo = 0; xo < W; ++xo)
          gi[y * W + xo] += go[(2 * y) * Wo + 2 * xo] + go[(2 * y) * Wo + 2 * xo + 1] +
                            go[(2 * y + 1) * Wo + 2 * xo] + go[(2 * y + 1) * Wo + 2 * xo + 1];
    }
  });
  const float* xv = x.data();
  float* ov = out.data();
  for (int bc = 0; bc < B * C; ++bc) {
    const float* xi = xv + static_cast<size_t>(bc) * H * W;
    float* oo = ov + static_cast<size_t>(bc) * Ho * Wo;
    for (int y = 0; y < H; ++y)
      for (int xo = 0; xo < W; ++xo) {
        float v = xi[y * W + xo];
        oo[(2 * y) * Wo + 2 * xo] = v;
        oo[(2 * y) * Wo + 2 * xo + 1] = v;
        oo[(2 * y + 1) * Wo + 2 * xo] = v;
        oo[(2 * y + 1) * Wo + 2 * xo + 1] = v;
      }
  }
  return out;
}

inline Tensor global_avg_pool(const Tensor& x) {
  const int B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  Tensor out = detail::make_op({B, C}, {x}, [px = x.impl(), B, C, HW](TensorImpl& o) {
    if (!px->requires_grad) return;
    px->ensure_grad();
    const float inv = 1.f / static_cast<float>(HW);
    for (int bc = 0; bc < B * C; ++bc) {
      float g = o.g[static_cast<size_t>(bc)] * inv;
      float* gi = px->g.data() + static_cast<size_t>(bc) * HW;
      for (int p = 0; p < HW; ++p) gi[p] += g;
    }
  });
  const float* xv = x.data();
  float* ov = out.data();
  for (int bc = 0; bc < B * C; ++bc) {
    double s = 0.0;
    const float* xi = xv + static_cast<size_t>(bc) * HW;
    for (int p = 0; p < HW; ++p) s += xi[p];
    ov[bc] = static_cast<float>(s / HW);
  }
  return out;
}

// x: [B,C,H,W] plus a per-sample channel bias [B,C], broadcast over pixels.
inline Tensor chan_bias(const Tensor& x, const Tensor& bias) {
  const int B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  if (bias.dim(0) != B || bias.dim(1) != C) throw PreconditionError("chan_bias: shape mismatch");
  Tensor out = detail::make_op(x.shape(), {x, bias}, [px = x.impl(), pbias = bias.impl(), B, C, HW](TensorImpl& o) {
    detail::accumulate(px.get(), o.g.data(), o.g.size());
    if (pbias->requires_grad) {
      pbias->ensure_grad();
      for (int bc = 0; bc < B * C; ++bc) {
        double s = 0.0;
        const float* go = o.g.data() + static_cast<size_t>(bc) * HW;
        for (int p = 0; p < HW; ++p) s += go[p];
        pbias->g[static_cast<size_t>(bc)] += static_cast<float>(s);
      }
    }
  });
  const float* xv = x.data();
  const float* bv = bias.data();
  float* ov = out.data();
  for (int bc = 0; bc < B * C; ++bc) {
    const float b = bv[bc];
    const float* xi = xv + static_cast<size_t>(bc) * HW;
    float* oo = ov + static_cast<size_t>(bc) * HW;
    for (int p = 0; p < HW; ++p) oo[p] = xi[p] + b;
  }
  return out;
}

// Row gather from an embedding table. ids < 0 produce a zero row.
inline Tensor embed_rows(const Tensor& table, const std::vector<int>& ids) {
  const int V = table.dim(0), D = table.dim(1);
  const int B = static_cast<int>(ids.size());
  Tensor out = detail::make_op({B, D}, {table}, [pt = table.impl(), ids, V, D, B](TensorImpl& o) {
    if (!pt->requires_grad) return;
    pt->ensure_grad();
    for (int bi = 0; bi < B; ++bi) {
      int id = ids[static_cast<size_t>(bi)];
      if (id < 0) continue;
      if (id >= V) throw PreconditionError("embed_rows: id out of range");
      const float* go = o.g.data() + static_cast<size_t>(bi) * D;
      float* gt = pt->g.data() + static_cast<size_t>(id) * D;
      for (int d = 0; d < D; ++d) gt[d] += go[d];
    }
  });
  const float* tv = table.data();
  float* ov = out.data();
  for (int bi = 0; bi < B; ++bi) {
    int id = ids[static_cast<size_t>(bi)];
    float* oo = ov + static_cast<size_t>(bi) * D;
    if (id < 0) {
      std::fill(oo, oo + D, 0.f);
    } else {
      if (id >= V) throw PreconditionError("embed_rows: id out of range");
      const float* row = tv + static_cast<size_t>(id) * D;
      std::copy(row, row + D, oo);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Losses and reductions
// ---------------------------------------------------------------------------

// Mean per-pixel cross entropy. logits: [B,K,H,W], labels: one class id per
// pixel, length B*H*W.
inline Tensor softmax_ce_map(const Tensor& logits, const std::vector<uint8_t>& labels) {
  const int B = logits.dim(0), K = logits.dim(1), HW = logits.dim(2) * logits.dim(3);
  if (labels.size() != static_cast<size_t>(B) * HW)
    throw PreconditionError("softmax_ce_map: label count mismatch");
  auto probs = std::make_shared<std::vector<float>>(logits.numel());
  const float* lv = logits.data();
  double total = 0.0;
  Eigen::ArrayXf mx(HW), se(HW), lse(HW);
  for (int bi = 0; bi < B; ++bi) {
    const float* lb = lv + static_cast<size_t>(bi) * K * HW;
    float* pb = probs->data() + static_cast<size_t>(bi) * K * HW;
    mx = CArrMap(lb, HW);
    for (int c = 1; c < K; ++c) mx = mx.max(CArrMap(lb + static_cast<size_t>(c) * HW, HW));
    se.setZero();
    for (int c = 0; c < K; ++c) {
      ArrMap row(pb + static_cast<size_t>(c) * HW, HW);
      row = (CArrMap(lb + static_cast<size_t>(c) * HW, HW) - mx).exp();
      se += row;
    }
    lse = se.log() + mx;
    for (int c = 0; c < K; ++c) ArrMap(pb + static_cast<size_t>(c) * HW, HW) /= se;
    const uint8_t* yb = labels.data() + static_cast<size_t>(bi) * HW;
    double acc = 0.0;
    for (int p = 0; p < HW; ++p) acc += lse[p] - lb[static_cast<size_t>(yb[p]) * HW + p];
    total += acc;
  }
  const float invN = 1.f / static_cast<float>(static_cast<size_t>(B) * HW);
  Tensor out = detail::make_op({1}, {logits}, [pl = logits.impl(), probs, labels, B, K, HW, invN](TensorImpl& o) {
    if (!pl->requires_grad) return;
    pl->ensure_grad();
    const float go = o.g[0] * invN;
    for (int bi = 0; bi < B; ++bi) {
      const float* pb = probs->data() + static_cast<size_t>(bi) * K * HW;
      float* gl = pl->g.data() + static_cast<size_t>(bi) * K * HW;
      for (int c = 0; c < K; ++c)
        ArrMap(gl + static_cast<size_t>(c) * HW, HW) +=
            go * CArrMap(pb + static_cast<size_t>(c) * HW, HW);
      const uint8_t* yb = labels.data() + static_cast<size_t>(bi) * HW;
      for (int p = 0; p < HW; ++p) gl[static_cast<size_t>(yb[p]) * HW + p] -= go;
    }
  });
  out.data()[0] = static_cast<float>(total * invN);
  return out;
}

// Per-sample gram matrix: G[b,i,j] = sum_p f_i(p) f_j(p) / (C*H*W).
inline Tensor gram_batch(const Tensor& x) {
  const int B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  const float s = 1.f / (static_cast<float>(C) * HW);
  Tensor out = detail::make_op({B, C, C}, {x}, [px = x.impl(), B, C, HW, s](TensorImpl& o) {
    if (!px->requires_grad) return;
    px->ensure_grad();
    for (int bi = 0; bi < B; ++bi) {
      Eigen::Map<const MatRM> dG(o.g.data() + static_cast<size_t>(bi) * C * C, C, C);
      Eigen::Map<const MatRM> X(px->v.data() + static_cast<size_t>(bi) * C * HW, C, HW);
      Eigen::Map<MatRM> dX(px->g.data() + static_cast<size_t>(bi) * C * HW, C, HW);
      dX.noalias() += s * ((dG + dG.transpose()) * X);
    }
  });
  for (int bi = 0; bi < B; ++bi) {
    Eigen::Map<const MatRM> X(x.data() + static_cast<size_t>(bi) * C * HW, C, HW);
    Eigen::Map<MatRM> G(out.data() + static_cast<size_t>(bi) * C * C, C, C);
    G.noalias() = s * (X * X.transpose());
  }
  return out;
}

// Sum of squares over all trailing dims, one value per sample.
inline Tensor sumsq_per_sample(const Tensor& x) {
  const int B = x.dim(0);
  const size_t per = x.numel() / static_cast<size_t>(B);
  Tensor out = detail::make_op({B}, {x}, [px = x.impl(), B, per](TensorImpl& o) {
    if (!px->requires_grad) return;
    px->ensure_grad();
    for (int bi = 0; bi < B; ++bi) {
      const float g2 = 2.f * o.g[static_cast<size_t>(bi)];
      const float* xv = px->v.data() + static_cast<size_t>(bi) * per;
      float* gx = px->g.data() + static_cast<size_t>(bi) * per;
      for (size_t p = 0; p < per; ++p) gx[p] += g2 * xv[p];
    }
  });
  const float* xv = x.data();
  for (int bi = 0; bi < B; ++bi) {
    double s = 0.0;
    const float* xb = xv + static_cast<size_t>(bi) * per;
    for (size_t p = 0; p < per; ++p) s += static_cast<double>(xb[p]) * xb[p];
    out.data()[bi] = static_cast<float>(s);
  }
  return out;
}

inline Tensor mean_all(const Tensor& x) {
  const size_t n = x.numel();
  const float inv = 1.f / static_cast<float>(n);
  Tensor out = detail::make_op({1}, {x}, [px = x.impl(), n, inv](TensorImpl& o) {
    if (!px->requires_grad) return;
    px->ensure_grad();
    const float g = o.g[0] * inv;
    for (size_t i = 0; i < n; ++i) px->g[i] += g;
  });
  double s = 0.0;
  const float* xv = x.data();
  for (size_t i = 0; i < n; ++i) s += xv[i];
  out.data()[0] = static_cast<float>(s * inv);
  return out;
}

inline Tensor sum_all(const Tensor& x) {
  const size_t n = x.numel();
  Tensor out = detail::make_op({1}, {x}, [px = x.impl(), n](TensorImpl& o) {
    if (!px->requires_grad) return;
    px->ensure_grad();
    const float g = o.g[0];
    for (size_t i = 0; i < n; ++i) px->g[i] += g;
  });
  double s = 0.0;
  const float* xv = x.data();
  for (size_t i = 0; i < n; ++i) s += xv[i];
  out.data()[0] = static_cast<float>(s);
  return out;
}

// Row-wise dot product of two [B,D] tensors.
inline Tensor dot_rows(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "dot_rows");
  const int B = a.dim(0), D = a.dim(1);
  Tensor out = detail::make_op({B}, {a, b}, [pa = a.impl(), pb = b.impl(), B, D](TensorImpl& o) {
    for (int bi = 0; bi < B; ++bi) {
      const float g = o.g[static_cast<size_t>(bi)];
      const size_t off = static_cast<size_t>(bi) * D;
      if (pa->requires_grad) {
        pa->ensure_grad();
        for (int d = 0; d < D; ++d) pa->g[off + d] += g * pb->v[off + d];
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        for (int d = 0; d < D; ++d) pb->g[off + d] += g * pa->v[off + d];
      }
    }
  });
  for (int bi = 0; bi < B; ++bi) {
    double s = 0.0;
    const size_t off = static_cast<size_t>(bi) * D;
    for (int d = 0; d < D; ++d) s += static_cast<double>(a.data()[off + d]) * b.data()[off + d];
    out.data()[bi] = static_cast<float>(s);
  }
  return out;
}

// Same data, new shape.
inline Tensor reshape(const Tensor& a, std::vector<int> shape) {
  Tensor out = detail::make_op(std::move(shape), {a}, [pa = a.impl()](TensorImpl& o) {
    detail::accumulate(pa.get(), o.g.data(), o.g.size());
  });
  if (out.numel() != a.numel()) throw PreconditionError("reshape: element count mismatch");
  std::copy_n(a.data(), a.numel(), out.data());
  return out;
}

// Broadcast a scalar tensor [1] to [B].
inline Tensor broadcast_to_rows(const Tensor& s, int B) {
  Tensor out = detail::make_op({B}, {s}, [ps = s.impl(), B](TensorImpl& o) {
    if (!ps->requires_grad) return;
    ps->ensure_grad();
    double acc = 0.0;
    for (int i = 0; i < B; ++i) acc += o.g[static_cast<size_t>(i)];
    ps->g[0] += static_cast<float>(acc);
  });
  std::fill(out.data(), out.data() + B, s.item());
  return out;
}

}  // namespace picodiff
