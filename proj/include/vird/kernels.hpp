#pragma once

// Forward/backward computational kernels on plain tensors. The autodiff tape
// wraps these; the evaluation fast path calls the forward halves directly, so
// training and inference share one implementation of every operation.

#include <limits>
#include <memory>

#include "vird/common.hpp"

namespace vird::kern {

enum class Pad { kZero, kCircular };

inline void axpy(Tensor& dst, const Tensor& src) {
  if (dst.data.size() != src.data.size())
    throw std::invalid_argument("axpy: size mismatch");
  for (size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}

// ---------------------------------------------------------------------------
// matmul / linear

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.shape[1] != b.shape[0])
    throw std::invalid_argument("matmul: bad shapes " + a.shape_str() + " x " + b.shape_str());
  int n = a.shape[0], k = a.shape[1], m = b.shape[1];
  Tensor out = Tensor::zeros({n, m});
  for (int i = 0; i < n; ++i) {
    const double* ai = &a.data[static_cast<size_t>(i) * k];
    double* oi = &out.data[static_cast<size_t>(i) * m];
    for (int p = 0; p < k; ++p) {
      double av = ai[p];
      const double* bp = &b.data[static_cast<size_t>(p) * m];
      for (int j = 0; j < m; ++j) oi[j] += av * bp[j];
    }
  }
  return out;
}

inline Tensor matmul_transpose_a(const Tensor& a, const Tensor& b) {
  // a^T b with a (k,n), b (k,m) -> (n,m)
  int k = a.shape[0], n = a.shape[1], m = b.shape[1];
  Tensor out = Tensor::zeros({n, m});
  for (int p = 0; p < k; ++p) {
    const double* ap = &a.data[static_cast<size_t>(p) * n];
    const double* bp = &b.data[static_cast<size_t>(p) * m];
    for (int i = 0; i < n; ++i) {
      double av = ap[i];
      double* oi = &out.data[static_cast<size_t>(i) * m];
      for (int j = 0; j < m; ++j) oi[j] += av * bp[j];
    }
  }
  return out;
}

inline Tensor matmul_transpose_b(const Tensor& a, const Tensor& b) {
  // a b^T with a (n,k), b (m,k) -> (n,m)
  int n = a.shape[0], k = a.shape[1], m = b.shape[0];
  Tensor out = Tensor::zeros({n, m});
  for (int i = 0; i < n; ++i) {
    const double* ai = &a.data[static_cast<size_t>(i) * k];
    double* oi = &out.data[static_cast<size_t>(i) * m];
    for (int j = 0; j < m; ++j) {
      const double* bj = &b.data[static_cast<size_t>(j) * k];
      double acc = 0.0;
      for (int p = 0; p < k; ++p) acc += ai[p] * bj[p];
      oi[j] += acc;
    }
  }
  return out;
}

/// x (N,din) @ w (din,dout) + b (dout). Pass b = nullptr for no bias.
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor* b) {
  Tensor out = matmul(x, w);
  if (b) {
    int n = out.shape[0], m = out.shape[1];
    if (b->numel() != m) throw std::invalid_argument("linear: bias size mismatch");
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) out.at(i, j) += b->data[static_cast<size_t>(j)];
  }
  return out;
}

// ---------------------------------------------------------------------------
// conv2d, same-padding semantics: pad = (k-1)/2 per side, out = in/stride
// (requires odd kernels; strides 1 or 2 with even extents in practice).

struct ConvSpec {
  int stride_h = 1, stride_w = 1;
  Pad pad_h = Pad::kZero, pad_w = Pad::kZero;
};

inline int conv_out_dim(int in, int k, int stride) { return (in + (k - 1) - k) / stride + 1; }

inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor* b, const ConvSpec& cs) {
  // x: (N,C,H,W) or (C,H,W); w: (Cout,Cin,kh,kw); b: (Cout) or null.
  bool batched = x.ndim() == 4;
  if (!batched && x.ndim() != 3) throw std::invalid_argument("conv2d: input must be 3-D or 4-D");
  int n = batched ? x.shape[0] : 1;
  int ci = batched ? x.shape[1] : x.shape[0];
  int h = batched ? x.shape[2] : x.shape[1];
  int wd = batched ? x.shape[3] : x.shape[2];
  if (w.ndim() != 4 || w.shape[1] != ci)
    throw std::invalid_argument("conv2d: kernel shape " + w.shape_str() + " does not match input " +
                                x.shape_str());
  int co = w.shape[0], kh = w.shape[2], kw = w.shape[3];
  if (kh % 2 == 0 || kw % 2 == 0) throw std::invalid_argument("conv2d: kernels must be odd-sized");
  int ph = (kh - 1) / 2, pw = (kw - 1) / 2;
  int oh = conv_out_dim(h, kh, cs.stride_h), ow = conv_out_dim(wd, kw, cs.stride_w);
  Tensor out = batched ? Tensor::zeros({n, co, oh, ow}) : Tensor::zeros({co, oh, ow});

  const size_t in_plane = static_cast<size_t>(h) * wd;
  const size_t out_plane = static_cast<size_t>(oh) * ow;
  for (int bn = 0; bn < n; ++bn) {
    const double* xin = &x.data[static_cast<size_t>(bn) * ci * in_plane];
    double* xout = &out.data[static_cast<size_t>(bn) * co * out_plane];
    for (int oc = 0; oc < co; ++oc) {
      double bias = b ? b->data[static_cast<size_t>(oc)] : 0.0;
      double* op = xout + static_cast<size_t>(oc) * out_plane;
      for (size_t i = 0; i < out_plane; ++i) op[i] = bias;
      for (int ic = 0; ic < ci; ++ic) {
        const double* ip = xin + static_cast<size_t>(ic) * in_plane;
        const double* kp = &w.data[((static_cast<size_t>(oc) * ci) + ic) * kh * kw];
        for (int oy = 0; oy < oh; ++oy) {
          int iy0 = oy * cs.stride_h - ph;
          for (int ky = 0; ky < kh; ++ky) {
            int iy = iy0 + ky;
            if (cs.pad_h == Pad::kCircular)
              iy = ((iy % h) + h) % h;
            else if (iy < 0 || iy >= h)
              continue;
            const double* row = ip + static_cast<size_t>(iy) * wd;
            const double* krow = kp + static_cast<size_t>(ky) * kw;
            double* orow = op + static_cast<size_t>(oy) * ow;
            for (int ox = 0; ox < ow; ++ox) {
              int ix0 = ox * cs.stride_w - pw;
              double acc = 0.0;
              for (int kx = 0; kx < kw; ++kx) {
                int ix = ix0 + kx;
                if (cs.pad_w == Pad::kCircular)
                  ix = ((ix % wd) + wd) % wd;
                else if (ix < 0 || ix >= wd)
                  continue;
                acc += krow[kx] * row[ix];
              }
              orow[ox] += acc;
            }
          }
        }
      }
    }
  }
  return out;
}

inline void conv2d_backward(const Tensor& x, const Tensor& w, const ConvSpec& cs,
                            const Tensor& gout, Tensor* gx, Tensor* gw, Tensor* gb) {
  bool batched = x.ndim() == 4;
  int n = batched ? x.shape[0] : 1;
  int ci = batched ? x.shape[1] : x.shape[0];
  int h = batched ? x.shape[2] : x.shape[1];
  int wd = batched ? x.shape[3] : x.shape[2];
  int co = w.shape[0], kh = w.shape[2], kw = w.shape[3];
  int ph = (kh - 1) / 2, pw = (kw - 1) / 2;
  int oh = conv_out_dim(h, kh, cs.stride_h), ow = conv_out_dim(wd, kw, cs.stride_w);

  const size_t in_plane = static_cast<size_t>(h) * wd;
  const size_t out_plane = static_cast<size_t>(oh) * ow;
  for (int bn = 0; bn < n; ++bn) {
    const double* xin = &x.data[static_cast<size_t>(bn) * ci * in_plane];
    const double* gop = &gout.data[static_cast<size_t>(bn) * co * out_plane];
    double* gxp = gx ? &gx->data[static_cast<size_t>(bn) * ci * in_plane] : nullptr;
    for (int oc = 0; oc < co; ++oc) {
      const double* go = gop + static_cast<size_t>(oc) * out_plane;
      if (gb) {
        double acc = 0.0;
        for (size_t i = 0; i < out_plane; ++i) acc += go[i];
        gb->data[static_cast<size_t>(oc)] += acc;
      }
      for (int ic = 0; ic < ci; ++ic) {
        const double* ip = xin + static_cast<size_t>(ic) * in_plane;
        const double* kp = &w.data[((static_cast<size_t>(oc) * ci) + ic) * kh * kw];
        double* gkp = gw ? &gw->data[((static_cast<size_t>(oc) * ci) + ic) * kh * kw] : nullptr;
        double* gip = gxp ? gxp + static_cast<size_t>(ic) * in_plane : nullptr;
        for (int oy = 0; oy < oh; ++oy) {
          int iy0 = oy * cs.stride_h - ph;
          for (int ky = 0; ky < kh; ++ky) {
            int iy = iy0 + ky;
            if (cs.pad_h == Pad::kCircular)
              iy = ((iy % h) + h) % h;
            else if (iy < 0 || iy >= h)
              continue;
            const double* row = ip + static_cast<size_t>(iy) * wd;
            double* grow = gip ? gip + static_cast<size_t>(iy) * wd : nullptr;
            const double* gorow = go + static_cast<size_t>(oy) * ow;
            for (int ox = 0; ox < ow; ++ox) {
              int ix0 = ox * cs.stride_w - pw;
              double g = gorow[ox];
              if (g == 0.0) continue;
              for (int kx = 0; kx < kw; ++kx) {
                int ix = ix0 + kx;
                if (cs.pad_w == Pad::kCircular)
                  ix = ((ix % wd) + wd) % wd;
                else if (ix < 0 || ix >= wd)
                  continue;
                if (gkp) gkp[static_cast<size_t>(ky) * kw + kx] += g * row[ix];
                if (grow) grow[ix] += g * kp[static_cast<size_t>(ky) * kw + kx];
              }
            }
          }
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// softmax along one axis

inline Tensor softmax(const Tensor& x, int axis) {
  if (axis < 0 || axis >= x.ndim()) throw std::invalid_argument("softmax: bad axis");
  int extent = x.shape[static_cast<size_t>(axis)];
  std::int64_t inner = 1, outer = 1;
  for (int i = 0; i < axis; ++i) outer *= x.shape[static_cast<size_t>(i)];
  for (int i = axis + 1; i < x.ndim(); ++i) inner *= x.shape[static_cast<size_t>(i)];
  Tensor out = Tensor::zeros(x.shape);
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t in = 0; in < inner; ++in) {
      const size_t base = static_cast<size_t>(o) * extent * inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (int e = 0; e < extent; ++e) mx = std::max(mx, x.data[base + static_cast<size_t>(e) * inner]);
      double sum = 0.0;
      for (int e = 0; e < extent; ++e) {
        double v = std::exp(x.data[base + static_cast<size_t>(e) * inner] - mx);
        out.data[base + static_cast<size_t>(e) * inner] = v;
        sum += v;
      }
      for (int e = 0; e < extent; ++e) out.data[base + static_cast<size_t>(e) * inner] /= sum;
    }
  }
  return out;
}

inline void softmax_backward(const Tensor& y, int axis, const Tensor& gout, Tensor& gx) {
  int extent = y.shape[static_cast<size_t>(axis)];
  std::int64_t inner = 1, outer = 1;
  for (int i = 0; i < axis; ++i) outer *= y.shape[static_cast<size_t>(i)];
  for (int i = axis + 1; i < y.ndim(); ++i) inner *= y.shape[static_cast<size_t>(i)];
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t in = 0; in < inner; ++in) {
      const size_t base = static_cast<size_t>(o) * extent * inner + in;
      double dot = 0.0;
      for (int e = 0; e < extent; ++e) {
        size_t i = base + static_cast<size_t>(e) * inner;
        dot += gout.data[i] * y.data[i];
      }
      for (int e = 0; e < extent; ++e) {
        size_t i = base + static_cast<size_t>(e) * inner;
        gx.data[i] += y.data[i] * (gout.data[i] - dot);
      }
    }
  }
}

// ---------------------------------------------------------------------------
// nearest-neighbor upsampling by integer factors

inline Tensor upsample_nearest(const Tensor& x, int fy, int fx) {
  if (x.ndim() != 3) throw std::invalid_argument("upsample_nearest: expects (C,H,W)");
  int c = x.shape[0], h = x.shape[1], w = x.shape[2];
  Tensor out = Tensor::zeros({c, h * fy, w * fx});
  for (int ic = 0; ic < c; ++ic)
    for (int y = 0; y < h * fy; ++y)
      for (int xx = 0; xx < w * fx; ++xx)
        out.at(ic, y, xx) = x.at(ic, y / fy, xx / fx);
  return out;
}

inline void upsample_nearest_backward(int fy, int fx, const Tensor& gout, Tensor& gx) {
  int c = gx.shape[0], h = gx.shape[1], w = gx.shape[2];
  for (int ic = 0; ic < c; ++ic)
    for (int y = 0; y < h * fy; ++y)
      for (int xx = 0; xx < w * fx; ++xx)
        gx.at(ic, y / fy, xx / fx) += gout.at(ic, y, xx);
}

// ---------------------------------------------------------------------------
// gather plans (bilinear or nearest sampling with zero outside the source)

struct GatherPlan {
  int src_h = 0, src_w = 0;
  int out_h = 0, out_w = 0;
  struct Tap {
    int idx[4] = {-1, -1, -1, -1};  // flat (h*src_w + w) indices; -1 samples zero
    double w[4] = {0, 0, 0, 0};
  };
  std::vector<Tap> taps;  // out_h * out_w entries, row-major
};

/// Applies a plan per channel: out[c, o] = sum_t w_t * src[c, idx_t].
inline Tensor gather_apply(const Tensor& src, const GatherPlan& plan) {
  if (src.ndim() != 3 || src.shape[1] != plan.src_h || src.shape[2] != plan.src_w)
    throw std::invalid_argument("gather_apply: source shape mismatch");
  int c = src.shape[0];
  const size_t plane = static_cast<size_t>(plan.src_h) * plan.src_w;
  const size_t oplane = static_cast<size_t>(plan.out_h) * plan.out_w;
  Tensor out = Tensor::zeros({c, plan.out_h, plan.out_w});
  for (int ic = 0; ic < c; ++ic) {
    const double* sp = &src.data[static_cast<size_t>(ic) * plane];
    double* op = &out.data[static_cast<size_t>(ic) * oplane];
    for (size_t o = 0; o < oplane; ++o) {
      const auto& t = plan.taps[o];
      double acc = 0.0;
      for (int k = 0; k < 4; ++k)
        if (t.idx[k] >= 0) acc += t.w[k] * sp[t.idx[k]];
      op[o] = acc;
    }
  }
  return out;
}

inline void gather_backward(const GatherPlan& plan, const Tensor& gout, Tensor& gsrc) {
  int c = gsrc.shape[0];
  const size_t plane = static_cast<size_t>(plan.src_h) * plan.src_w;
  const size_t oplane = static_cast<size_t>(plan.out_h) * plan.out_w;
  for (int ic = 0; ic < c; ++ic) {
    double* gp = &gsrc.data[static_cast<size_t>(ic) * plane];
    const double* go = &gout.data[static_cast<size_t>(ic) * oplane];
    for (size_t o = 0; o < oplane; ++o) {
      const auto& t = plan.taps[o];
      for (int k = 0; k < 4; ++k)
        if (t.idx[k] >= 0) gp[t.idx[k]] += t.w[k] * go[o];
    }
  }
}

// ---------------------------------------------------------------------------
// vertical feature transform: out[c,hq,w] = sum_hk A[hq,hk(,w)] * F[c,hk,w]

inline Tensor vertical_transform(const Tensor& f, const Tensor& a) {
  if (f.ndim() != 3) throw std::invalid_argument("vertical_transform: F must be (C,Hk,W)");
  int c = f.shape[0], hk = f.shape[1], w = f.shape[2];
  bool per_column = a.ndim() == 3;
  int hq = a.shape[0];
  if (a.shape[1] != hk || (per_column && a.shape[2] != w))
    throw std::invalid_argument("vertical_transform: weights " + a.shape_str() +
                                " do not match features " + f.shape_str());
  Tensor out = Tensor::zeros({c, hq, w});
  for (int ic = 0; ic < c; ++ic)
    for (int q = 0; q < hq; ++q)
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int k = 0; k < hk; ++k) {
          double av = per_column ? a.at(q, k, x) : a.at(q, k);
          acc += av * f.at(ic, k, x);
        }
        out.at(ic, q, x) = acc;
      }
  return out;
}

inline void vertical_transform_backward(const Tensor& f, const Tensor& a, const Tensor& gout,
                                        Tensor* gf, Tensor* ga) {
  int c = f.shape[0], hk = f.shape[1], w = f.shape[2];
  bool per_column = a.ndim() == 3;
  int hq = a.shape[0];
  for (int ic = 0; ic < c; ++ic)
    for (int q = 0; q < hq; ++q)
      for (int x = 0; x < w; ++x) {
        double g = gout.at(ic, q, x);
        if (g == 0.0) continue;
        for (int k = 0; k < hk; ++k) {
          double av = per_column ? a.at(q, k, x) : a.at(q, k);
          if (gf) gf->at(ic, k, x) += g * av;
          if (ga) {
            if (per_column)
              ga->at(q, k, x) += g * f.at(ic, k, x);
            else
              ga->at(q, k) += g * f.at(ic, k, x);
          }
        }
      }
}

}  // namespace vird::kern
