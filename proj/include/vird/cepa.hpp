#pragma once

// Context-enhanced positional attention: sinusoidal encodings for the shared
// virtual vertical axis and the two view axes, positional attention weights,
// context enhancement of the ground weights, and the vertical feature
// transform onto the shared axis.

#include "vird/geometry.hpp"
#include "vird/nn.hpp"

namespace vird {

/// Classic transformer encoding: row i, columns (2j, 2j+1) hold
/// sin(i / 10000^(2j/d_p)) and cos(i / 10000^(2j/d_p)).
inline Tensor sinusoidal_pe(int length, int d_p) {
  if (d_p < 2 || d_p % 2 != 0)
    throw std::invalid_argument("sinusoidal_pe: d_p must be even and >= 2");
  if (length < 1) throw std::invalid_argument("sinusoidal_pe: length must be >= 1");
  Tensor pe = Tensor::zeros({length, d_p});
  for (int i = 0; i < length; ++i) {
    for (int j = 0; j < d_p / 2; ++j) {
      double freq = std::pow(10000.0, -2.0 * j / d_p);
      pe.at(i, 2 * j) = std::sin(i * freq);
      pe.at(i, 2 * j + 1) = std::cos(i * freq);
    }
  }
  return pe;
}

/// 2-D transpose as an index_select (gradient flows through the permutation).
inline Var transpose_var(Tape& t, Var a) {
  const Tensor& v = t.val(a);
  if (v.ndim() != 2) throw std::invalid_argument("transpose_var: expects 2-D");
  int r = v.shape[0], c = v.shape[1];
  auto map = std::make_shared<std::vector<int>>(static_cast<size_t>(r) * c);
  for (int j = 0; j < c; ++j)
    for (int i = 0; i < r; ++i) (*map)[static_cast<size_t>(j) * r + i] = i * c + j;
  return t.index_select(a, map, {c, r});
}

/// Positional attention: softmax over the key axis of
/// (P_a W_q)(P_v W_k)^T / sqrt(d_k). Content never enters this computation.
inline Var positional_attention(Tape& t, Var p_a, Var p_v, Var w_q, Var w_k, int d_k) {
  const Tensor& pa = t.val(p_a);
  const Tensor& pv = t.val(p_v);
  const Tensor& wq = t.val(w_q);
  if (pa.ndim() != 2 || pv.ndim() != 2 || pa.shape[1] != wq.shape[0] ||
      pv.shape[1] != t.val(w_k).shape[0])
    throw std::invalid_argument("positional_attention: shape mismatch");
  Var q = t.matmul(p_a, w_q);                       // (H_Q, d_k)
  Var k = t.matmul(p_v, w_k);                       // (H_K, d_k)
  Var logits = t.matmul(q, transpose_var(t, k));    // (H_Q, H_K)
  logits = t.scale(logits, 1.0 / std::sqrt(static_cast<double>(d_k)));
  return t.softmax(logits, 1);
}

/// Weights of the two-layer context convolution Phi: (C+1) -> hidden -> 1,
/// 3x3 same-padded, circular along the azimuth axis, tanh in between.
struct PhiVars {
  Var w0, b0, w1, b1;
};

/// Context enhancement (supplementary Alg. 1): broadcast the shared ground
/// attention over azimuth, concatenate with the ground features channel-wise,
/// run Phi per shared-axis row, softmax over the key axis, add the skip.
/// Every (h_q, w) slice of the result sums to 2 over the key axis.
inline Var context_enhance(Tape& t, Var a_g, Var f_g, const PhiVars& phi) {
  const Tensor& a = t.val(a_g);
  const Tensor& f = t.val(f_g);
  if (a.ndim() != 2 || f.ndim() != 3 || a.shape[1] != f.shape[1])
    throw std::invalid_argument("context_enhance: A_g/F_g shape mismatch");
  const Tensor& w0 = t.val(phi.w0);
  if (w0.shape[1] != f.shape[0] + 1)
    throw std::invalid_argument("context_enhance: Phi input channels must equal C+1");
  int hq = a.shape[0], hk = a.shape[1], w = f.shape[2];

  Var feat = t.cepa_concat(a_g, f_g);  // (H_Q, C+1, H_K, W) with H_Q as batch
  kern::ConvSpec cs;
  cs.pad_w = kern::Pad::kCircular;  // azimuth axis wraps on panoramas
  feat = t.conv2d(feat, phi.w0, phi.b0, cs);
  feat = t.tanh_op(feat);
  feat = t.conv2d(feat, phi.w1, phi.b1, cs);     // (H_Q, 1, H_K, W)
  feat = t.reshape(feat, {hq, hk, w});
  Var residual = t.softmax(feat, 1);             // over the key axis
  return t.add_broadcast_last(residual, a_g);    // skip connection
}

/// Vertical feature transform (Eq. 5 / Alg. 2). Shared weights (H_Q, H_K)
/// apply identically across azimuth; per-column weights (H_Q, H_K, W) vary.
inline Var vertical_transform(Tape& t, Var f, Var a) { return t.vertical_transform(f, a); }

inline Tensor vertical_transform(const Tensor& f, const Tensor& a) {
  return kern::vertical_transform(f, a);
}

// ---------------------------------------------------------------------------
// forward-only versions used by the evaluation fast path

inline Tensor positional_attention(const Tensor& p_a, const Tensor& p_v, const Tensor& w_q,
                                   const Tensor& w_k, int d_k) {
  Tensor q = kern::matmul(p_a, w_q);
  Tensor k = kern::matmul(p_v, w_k);
  Tensor logits = kern::matmul_transpose_b(q, k);
  double inv = 1.0 / std::sqrt(static_cast<double>(d_k));
  for (double& v : logits.data) v *= inv;
  return kern::softmax(logits, 1);
}

struct PhiWeights {
  const Tensor *w0, *b0, *w1, *b1;
};

inline Tensor context_enhance(const Tensor& a_g, const Tensor& f_g, const PhiWeights& phi) {
  int hq = a_g.shape[0], hk = a_g.shape[1], c = f_g.shape[0], w = f_g.shape[2];
  Tensor feat = Tensor::zeros({hq, c + 1, hk, w});
  for (int q = 0; q < hq; ++q)
    for (int k = 0; k < hk; ++k) {
      double av = a_g.at(q, k);
      for (int x = 0; x < w; ++x) feat.at(q, 0, k, x) = av;
      for (int ic = 0; ic < c; ++ic)
        for (int x = 0; x < w; ++x) feat.at(q, 1 + ic, k, x) = f_g.at(ic, k, x);
    }
  kern::ConvSpec cs;
  cs.pad_w = kern::Pad::kCircular;
  Tensor h = kern::conv2d(feat, *phi.w0, phi.b0, cs);
  for (double& v : h.data) v = std::tanh(v);
  Tensor o = kern::conv2d(h, *phi.w1, phi.b1, cs);
  o = Tensor({hq, hk, w}, std::move(o.data));
  Tensor residual = kern::softmax(o, 1);
  for (int q = 0; q < hq; ++q)
    for (int k = 0; k < hk; ++k) {
      double av = a_g.at(q, k);
      for (int x = 0; x < w; ++x) residual.at(q, k, x) += av;
    }
  return residual;
}

}  // namespace vird
