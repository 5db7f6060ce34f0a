#pragma once

// Four decoders G_{i->j} mapping an aligned descriptor back to a full
// resolution view, and the L1 view-reconstruction loss over original and
// cross reconstructions.

#include "vird/model.hpp"

namespace vird {

struct DecoderVars {
  Var mlp_w, mlp_b;
  std::vector<std::pair<Var, Var>> convs;  // one (w, b) per upsample block
};

inline DecoderVars decoder_vars(VirdModel::TapeCtx& ctx, const VirdModel& m,
                                const std::string& name) {
  DecoderVars d;
  std::string p = "dec." + name + ".";
  d.mlp_w = ctx.bind(p + "mlp.w");
  d.mlp_b = ctx.bind(p + "mlp.b");
  for (int blk = 0; blk < m.shapes.stages; ++blk)
    d.convs.emplace_back(ctx.bind(p + "c" + std::to_string(blk) + ".w"),
                         ctx.bind(p + "c" + std::to_string(blk) + ".b"));
  return d;
}

/// Decodes a K_g descriptor into a (3, pano_h, pano_w) image: per-column MLP
/// expands each C_d block vertically, then stride-2 mirror blocks of nearest
/// x2 upsampling + 3x3 convolution climb back to full resolution.
inline Var decode_view(Tape& t, Var desc, const DecoderVars& dec, const VirdModel& m) {
  const Tensor& d = t.val(desc);
  if (d.numel() != m.shapes.k_g)
    throw std::invalid_argument("decode_view: descriptor length " + std::to_string(d.numel()) +
                                " != K_g " + std::to_string(m.shapes.k_g));
  int w_g = m.shapes.w_g, c_d = m.cfg.encoder.c_d;
  int cp = m.cfg.recon.decoder_width, h0 = m.cfg.data.pano_h / m.shapes.f;

  Var rows = t.reshape(desc, {w_g, c_d});
  Var expanded = t.tanh_op(t.linear(rows, dec.mlp_w, dec.mlp_b));  // (W_g, C'*H0)

  // (W_g, C'*H0) -> (C', H0, W_g)
  auto map = std::make_shared<std::vector<int>>(static_cast<size_t>(cp) * h0 * w_g);
  for (int c = 0; c < cp; ++c)
    for (int q = 0; q < h0; ++q)
      for (int x = 0; x < w_g; ++x)
        (*map)[(static_cast<size_t>(c) * h0 + q) * w_g + x] = x * (cp * h0) + c * h0 + q;
  Var img = t.index_select(expanded, map, {cp, h0, w_g});

  kern::ConvSpec cs;  // stride 1, zero padding
  for (size_t blk = 0; blk < dec.convs.size(); ++blk) {
    img = t.upsample_nearest(img, 2, 2);
    img = t.conv2d(img, dec.convs[blk].first, dec.convs[blk].second, cs);
    if (blk + 1 < dec.convs.size()) img = t.tanh_op(img);
  }
  return img;
}

struct ReconLosses {
  Var l_origin, l_cross, l_recon;
};

/// L_origin, L_cross and L_recon = alpha1*L_origin + alpha2*L_cross, all L1
/// (mean absolute difference over pixels and channels). Disabled terms are
/// exact zeros and skip their decoders entirely.
inline ReconLosses recon_loss(Tape& t, const Tensor& i_g, const Tensor& i_s2p_star, Var d_g,
                              Var d_s2p_star, VirdModel::TapeCtx& ctx, const VirdModel& m) {
  bool use_origin = !m.cfg.ablate.recon_origin;
  bool use_cross = !m.cfg.ablate.recon_cross;
  ReconLosses out;
  Var zero = t.constant_scalar(0.0);
  out.l_origin = zero;
  out.l_cross = zero;
  if (use_origin) {
    Var g2g = decode_view(t, d_g, decoder_vars(ctx, m, "g2g"), m);
    Var s2s = decode_view(t, d_s2p_star, decoder_vars(ctx, m, "s2s"), m);
    out.l_origin = t.add(t.l1_mean(g2g, i_g), t.l1_mean(s2s, i_s2p_star));
  }
  if (use_cross) {
    Var s2g = decode_view(t, d_s2p_star, decoder_vars(ctx, m, "s2g"), m);
    Var g2s = decode_view(t, d_g, decoder_vars(ctx, m, "g2s"), m);
    out.l_cross = t.add(t.l1_mean(s2g, i_g), t.l1_mean(g2s, i_s2p_star));
  }
  out.l_recon = t.add(t.scale(out.l_origin, m.cfg.recon.alpha1),
                      t.scale(out.l_cross, m.cfg.recon.alpha2));
  return out;
}

/// Polar-transformed satellite image at the ground-truth position, shifted by
/// the snapped theta* and center-cropped to the panorama width: the
/// reconstruction target for the s2s / g2s decoders. The snap uses descriptor
/// granularity (W_s columns) so image and descriptor stay aligned.
inline Tensor make_polar_image_target(const VirdModel& m, const Tensor& sat_chw,
                                      const Pose& gt) {
  auto [uc, vc] = pose_to_pixel(gt, m.sat_frame());
  Tensor polar = polar_transform(sat_chw, uc, vc, m.image_polar_spec());
  double snapped = snap_theta(gt.theta, m.shapes.w_s);
  return cyclic_shift_crop(polar, snapped, m.cfg.data.pano_w);
}

}  // namespace vird
