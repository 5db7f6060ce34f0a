#pragma once

// Toy convolutional feature extractor (one stride-2 stage per configured
// width; circular horizontal padding on panoramas so column rotations stay
// exact) and the vertical directional encoding that compresses a transformed
// feature map into an azimuth-ordered 1-D descriptor.

#include "vird/nn.hpp"

namespace vird {

struct ConvStageVars {
  Var w, b;
};

inline kern::ConvSpec encoder_conv_spec(bool circular_w) {
  kern::ConvSpec cs;
  cs.stride_h = 2;
  cs.stride_w = 2;
  cs.pad_h = kern::Pad::kZero;
  cs.pad_w = circular_w ? kern::Pad::kCircular : kern::Pad::kZero;
  return cs;
}

inline void check_divisible(int h, int w, int stages) {
  int f = 1 << stages;
  if (h % f || w % f)
    throw std::invalid_argument("extract_features: image " + std::to_string(h) + "x" +
                                std::to_string(w) + " not divisible by downsample factor " +
                                std::to_string(f));
}

inline Var extract_features(Tape& t, Var image, bool circular_w,
                            const std::vector<ConvStageVars>& stages) {
  const Tensor& im = t.val(image);
  if (im.ndim() != 3) throw std::invalid_argument("extract_features: expects (C,H,W)");
  check_divisible(im.shape[1], im.shape[2], static_cast<int>(stages.size()));
  Var x = image;
  auto cs = encoder_conv_spec(circular_w);
  for (const auto& st : stages) {
    x = t.conv2d(x, st.w, st.b, cs);
    x = t.tanh_op(x);
  }
  return x;
}

inline Tensor extract_features(const Tensor& image, bool circular_w,
                               const std::vector<std::pair<const Tensor*, const Tensor*>>& stages) {
  if (image.ndim() != 3) throw std::invalid_argument("extract_features: expects (C,H,W)");
  check_divisible(image.shape[1], image.shape[2], static_cast<int>(stages.size()));
  Tensor x = image;
  auto cs = encoder_conv_spec(circular_w);
  for (const auto& [w, b] : stages) {
    x = kern::conv2d(x, *w, b, cs);
    for (double& v : x.data) v = std::tanh(v);
  }
  return x;
}

/// Permutation map flattening (C,H,W) into rows per azimuth column:
/// out[w, c*H + q] = f[c, q, w].
inline std::shared_ptr<std::vector<int>> columns_to_rows_map(int c, int h, int w) {
  auto map = std::make_shared<std::vector<int>>(static_cast<size_t>(c) * h * w);
  for (int x = 0; x < w; ++x)
    for (int ic = 0; ic < c; ++ic)
      for (int q = 0; q < h; ++q)
        (*map)[(static_cast<size_t>(x) * c + ic) * h + q] =
            (ic * h + q) * w + x;
  return map;
}

struct DescriptorMlpVars {
  Var w1, b1, w2, b2;
};

/// Shared per-column MLP: each column's flattened (C*H_Q) vector maps to C_d
/// values; blocks are concatenated column-major so a cyclic shift of the
/// feature map by k columns rotates the descriptor by k blocks exactly.
inline Var vertical_directional_encode(Tape& t, Var f, const DescriptorMlpVars& mlp) {
  const Tensor& fv = t.val(f);
  if (fv.ndim() != 3) throw std::invalid_argument("vertical_directional_encode: expects (C,H,W)");
  int c = fv.shape[0], h = fv.shape[1], w = fv.shape[2];
  Var rows = t.index_select(f, columns_to_rows_map(c, h, w), {w, c * h});
  Var hidden = t.tanh_op(t.linear(rows, mlp.w1, mlp.b1));
  Var out = t.linear(hidden, mlp.w2, mlp.b2);  // (W, C_d)
  int c_d = t.val(out).shape[1];
  return t.reshape(out, {c_d * w});
}

struct DescriptorMlpWeights {
  const Tensor *w1, *b1, *w2, *b2;
};

inline Tensor vertical_directional_encode(const Tensor& f, const DescriptorMlpWeights& mlp) {
  int c = f.shape[0], h = f.shape[1], w = f.shape[2];
  auto map = columns_to_rows_map(c, h, w);
  Tensor rows = Tensor::zeros({w, c * h});
  for (size_t i = 0; i < map->size(); ++i) rows.data[i] = f.data[static_cast<size_t>((*map)[i])];
  Tensor hidden = kern::linear(rows, *mlp.w1, mlp.b1);
  for (double& v : hidden.data) v = std::tanh(v);
  Tensor out = kern::linear(hidden, *mlp.w2, mlp.b2);
  return Tensor({out.shape[1] * w}, std::move(out.data));
}

}  // namespace vird
