#pragma once

// Assembles the full pipeline: derived shapes, the parameter store, tape
// forward paths for training, forward-only paths for evaluation, and the
// checkpoint parameter-blob format.

#include <fstream>

#include "vird/cepa.hpp"
#include "vird/config.hpp"
#include "vird/encoder.hpp"
#include "vird/synthdata.hpp"

namespace vird {

/// Shapes derived from the configuration; H_K is the feature height shared by
/// both views and H_Q the shared virtual axis height.
struct ModelShapes {
  int stages = 3;
  int f = 8;  // total downsample factor, 2^stages
  int c = 32;
  int h_k = 4;
  int h_q = 4;
  int w_g = 16;
  int w_s = 16;
  int w_s_img = 128;  // image-level polar width, f * w_s
  int sat_feat = 8;
  int k_g = 128;
  int k_s = 128;
};

inline ModelShapes derive_shapes(const RunConfig& cfg) {
  ModelShapes s;
  s.stages = static_cast<int>(cfg.encoder.widths.size());
  if (s.stages < 1) throw ValidationError("encoder.widths must have at least one stage");
  s.f = 1 << s.stages;
  if (cfg.data.pano_h % s.f || cfg.data.pano_w % s.f || cfg.data.sat_px % s.f)
    throw ValidationError("image sizes must be divisible by the downsample factor " +
                          std::to_string(s.f));
  s.c = cfg.encoder.widths.back();
  if (s.c < 1 || cfg.encoder.c_d < 1) throw ValidationError("channel counts must be >= 1");
  s.h_k = cfg.data.pano_h / s.f;
  s.w_g = cfg.data.pano_w / s.f;
  s.sat_feat = cfg.data.sat_px / s.f;
  s.w_s = polar_width(cfg.data.hfov_rad, s.w_g);
  if (s.w_s % 2 != 0)
    throw ValidationError("polar width W_s = " + std::to_string(s.w_s) +
                          " must be even; adjust hfov or pano_w");
  s.w_s_img = s.f * s.w_s;
  s.h_q = cfg.ablate.cepa ? s.h_k : (cfg.cepa.h_q <= 0 ? s.h_k : cfg.cepa.h_q);
  s.k_g = cfg.encoder.c_d * s.w_g;
  s.k_s = cfg.encoder.c_d * s.w_s;
  if (cfg.cepa.d_p < 2 || cfg.cepa.d_p % 2)
    throw ValidationError("cepa.d_p must be even and >= 2");
  if (cfg.cepa.d_k < 1) throw ValidationError("cepa.d_k must be >= 1");
  if (!(cfg.match.tau > 0)) throw ValidationError("match.tau must be positive");
  if (!(cfg.polar.r_min_m >= 0) || !(cfg.polar.r_max_m > cfg.polar.r_min_m))
    throw ValidationError("polar radii: need 0 <= r_min < r_max");
  if (cfg.regression.conv_widths.empty()) throw ValidationError("regression.conv_widths empty");
  return s;
}

/// Shift-crop index map for a flat block descriptor: output block j reads
/// input block (start + s + j) mod w_s, preserving the c_d entries per block.
inline std::shared_ptr<std::vector<int>> descriptor_shift_map(int w_s, int w_g, int c_d,
                                                              double theta) {
  auto cols = shift_crop_columns(w_s, w_g, theta);
  auto map = std::make_shared<std::vector<int>>(static_cast<size_t>(w_g) * c_d);
  for (int j = 0; j < w_g; ++j)
    for (int k = 0; k < c_d; ++k)
      (*map)[static_cast<size_t>(j) * c_d + k] = cols[static_cast<size_t>(j)] * c_d + k;
  return map;
}

class VirdModel {
 public:
  RunConfig cfg;
  ModelShapes shapes;
  ParamStore params;

  explicit VirdModel(const RunConfig& config) : cfg(config), shapes(derive_shapes(config)) {
    build_params();
  }

  ImageFrame sat_frame() const {
    return ImageFrame(cfg.data.sat_res_m_per_px, cfg.data.sat_px, cfg.data.sat_px);
  }

  ImageFrame sat_feature_frame() const { return feature_frame(sat_frame(), shapes.f); }

  PolarSpec feat_polar_spec() const {
    return make_polar_spec(cfg.polar, sat_feature_frame(), shapes.h_k, shapes.w_s);
  }

  PolarSpec image_polar_spec() const {
    return make_polar_spec(cfg.polar, sat_frame(), cfg.data.pano_h, shapes.w_s_img);
  }

  PoseGrid train_grid() const {
    return make_pose_grid(cfg.data.search_extent_m, cfg.match.train_grid, cfg.match.train_ntheta,
                          sat_frame(), cfg.polar.r_max_m, shapes.w_s);
  }

  PoseGrid eval_grid(int g, int ntheta) const {
    return make_pose_grid(cfg.data.search_extent_m, g, ntheta, sat_frame(), cfg.polar.r_max_m,
                          shapes.w_s);
  }

  // ---- tape-side forward paths (training) ---------------------------------

  /// Per-tape state: bound parameters plus the content-independent attention
  /// weights, which are computed once per tape.
  struct TapeCtx {
    Tape* tape = nullptr;
    Binder bind;
    Var a_g;    // (H_Q, H_K), invalid when CEPA is ablated
    Var a_s2p;  // (H_Q, H_K)
  };

  TapeCtx start_tape(Tape& t, bool track_grads = true) const {
    TapeCtx ctx{&t, Binder(t, params, track_grads), {}, {}};
    if (!cfg.ablate.cepa) {
      Var pe_a = pe_var(t, ctx.bind, "a", shapes.h_q);
      Var pe_g = pe_var(t, ctx.bind, "g", shapes.h_k);
      Var pe_s = pe_var(t, ctx.bind, "s2p", shapes.h_k);
      ctx.a_g = positional_attention(t, pe_a, pe_g, ctx.bind("cepa.g.wq"), ctx.bind("cepa.g.wk"),
                                     cfg.cepa.d_k);
      ctx.a_s2p = positional_attention(t, pe_a, pe_s, ctx.bind("cepa.s2p.wq"),
                                       ctx.bind("cepa.s2p.wk"), cfg.cepa.d_k);
    }
    return ctx;
  }

  Var ground_features(TapeCtx& ctx, const Tensor& grd_chw) const {
    Var img = ctx.tape->constant(grd_chw);
    return extract_features(*ctx.tape, img, /*circular_w=*/true, stage_vars(ctx, "g"));
  }

  Var sat_features(TapeCtx& ctx, const Tensor& sat_chw) const {
    Var img = ctx.tape->constant(sat_chw);
    return extract_features(*ctx.tape, img, /*circular_w=*/false, stage_vars(ctx, "sat"));
  }

  struct GroundOut {
    Var f_g;       // (C, H_K, W_g)
    Var f_gp;      // (C, H_Q, W_g) transformed
    Var a_gp;      // enhanced weights (H_Q, H_K, W_g); invalid if not used
    Var d_g;       // (K_g)
  };

  GroundOut ground_forward(TapeCtx& ctx, const Tensor& grd_chw) const {
    GroundOut out;
    out.f_g = ground_features(ctx, grd_chw);
    if (cfg.ablate.cepa) {
      out.f_gp = out.f_g;
    } else if (cfg.ablate.ce) {
      out.f_gp = ctx.tape->vertical_transform(out.f_g, ctx.a_g);
    } else {
      out.a_gp = context_enhance(*ctx.tape, ctx.a_g, out.f_g, phi_vars(ctx));
      out.f_gp = ctx.tape->vertical_transform(out.f_g, out.a_gp);
    }
    out.d_g = vertical_directional_encode(*ctx.tape, out.f_gp, mlp_vars(ctx));
    return out;
  }

  /// Satellite descriptor of length K_s for the polar map centered at world
  /// (x, y); spans the full azimuth circle, center column facing east.
  Var sat_polar_descriptor(TapeCtx& ctx, Var f_s, double x, double y) const {
    auto [uc, vc] = pose_to_pixel(Pose(x, y, 0.0), sat_feature_frame());
    Var f_polar = polar_transform(*ctx.tape, f_s, uc, vc, feat_polar_spec());
    Var f_t = cfg.ablate.cepa ? f_polar : ctx.tape->vertical_transform(f_polar, ctx.a_s2p);
    return vertical_directional_encode(*ctx.tape, f_t, mlp_vars(ctx));
  }

  /// Shift-and-crop of a satellite descriptor to K_g at orientation theta
  /// (snapped to the nearest integral-shift angle).
  Var align_descriptor(Tape& t, Var d_s, double theta) const {
    double snapped = snap_theta(theta, shapes.w_s);
    return t.index_select(
        d_s, descriptor_shift_map(shapes.w_s, shapes.w_g, cfg.encoder.c_d, snapped),
        {shapes.k_g});
  }

  // ---- forward-only paths (evaluation / inference) -------------------------

  struct EvalCtx {
    std::vector<std::pair<const Tensor*, const Tensor*>> g_stages, s_stages;
    DescriptorMlpWeights mlp{};
    PhiWeights phi{};
    Tensor a_g, a_s2p;  // computed attention weights (empty when CEPA ablated)
    bool use_cepa = true;
    bool use_ce = true;
  };

  EvalCtx eval_ctx() const {
    EvalCtx e;
    e.use_cepa = !cfg.ablate.cepa;
    e.use_ce = !cfg.ablate.ce;
    for (int i = 0; i < shapes.stages; ++i) {
      e.g_stages.emplace_back(&params.value(stage_name("g", i, "w")),
                              &params.value(stage_name("g", i, "b")));
      e.s_stages.emplace_back(&params.value(stage_name("sat", i, "w")),
                              &params.value(stage_name("sat", i, "b")));
    }
    e.mlp = {&params.value("desc.w1"), &params.value("desc.b1"), &params.value("desc.w2"),
             &params.value("desc.b2")};
    if (e.use_cepa) {
      Tensor pe_a = pe_tensor("a", shapes.h_q);
      Tensor pe_g = pe_tensor("g", shapes.h_k);
      Tensor pe_s = pe_tensor("s2p", shapes.h_k);
      e.a_g = positional_attention(pe_a, pe_g, params.value("cepa.g.wq"),
                                   params.value("cepa.g.wk"), cfg.cepa.d_k);
      e.a_s2p = positional_attention(pe_a, pe_s, params.value("cepa.s2p.wq"),
                                     params.value("cepa.s2p.wk"), cfg.cepa.d_k);
      e.phi = {&params.value("cepa.phi.c0.w"), &params.value("cepa.phi.c0.b"),
               &params.value("cepa.phi.c1.w"), &params.value("cepa.phi.c1.b")};
    }
    return e;
  }

  struct GroundEval {
    Tensor f_g, f_gp, a_gp, d_g;
  };

  GroundEval ground_forward(const EvalCtx& e, const Tensor& grd_chw) const {
    GroundEval out;
    out.f_g = extract_features(grd_chw, true, e.g_stages);
    if (!e.use_cepa) {
      out.f_gp = out.f_g;
    } else if (!e.use_ce) {
      out.f_gp = kern::vertical_transform(out.f_g, e.a_g);
    } else {
      out.a_gp = context_enhance(e.a_g, out.f_g, e.phi);
      out.f_gp = kern::vertical_transform(out.f_g, out.a_gp);
    }
    out.d_g = vertical_directional_encode(out.f_gp, e.mlp);
    return out;
  }

  Tensor sat_feature_map(const EvalCtx& e, const Tensor& sat_chw) const {
    return extract_features(sat_chw, false, e.s_stages);
  }

  Tensor sat_polar_descriptor(const EvalCtx& e, const Tensor& f_s, double x, double y) const {
    auto [uc, vc] = pose_to_pixel(Pose(x, y, 0.0), sat_feature_frame());
    Tensor f_polar = polar_transform(f_s, uc, vc, feat_polar_spec());
    Tensor f_t = e.use_cepa ? kern::vertical_transform(f_polar, e.a_s2p) : f_polar;
    return vertical_directional_encode(f_t, e.mlp);
  }

  Tensor align_descriptor(const Tensor& d_s, double theta) const {
    double snapped = snap_theta(theta, shapes.w_s);
    auto map = descriptor_shift_map(shapes.w_s, shapes.w_g, cfg.encoder.c_d, snapped);
    Tensor out = Tensor::zeros({shapes.k_g});
    for (size_t i = 0; i < map->size(); ++i) out.data[i] = d_s.data[static_cast<size_t>((*map)[i])];
    return out;
  }

  // ---- checkpoint parameter blob -------------------------------------------

  void save_params(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint blob: " + path);
    const char magic[8] = {'V', 'I', 'R', 'D', 'C', 'K', 'P', '1'};
    out.write(magic, 8);
    std::uint32_t n = static_cast<std::uint32_t>(params.count());
    out.write(reinterpret_cast<const char*>(&n), 4);
    for (int i = 0; i < params.count(); ++i) {
      const std::string& name = params.name(i);
      const Tensor& t = params.value(i);
      std::uint32_t len = static_cast<std::uint32_t>(name.size());
      out.write(reinterpret_cast<const char*>(&len), 4);
      out.write(name.data(), len);
      std::uint32_t nd = static_cast<std::uint32_t>(t.shape.size());
      out.write(reinterpret_cast<const char*>(&nd), 4);
      for (int d : t.shape) {
        std::int32_t dd = d;
        out.write(reinterpret_cast<const char*>(&dd), 4);
      }
      out.write(reinterpret_cast<const char*>(t.data.data()),
                static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    }
    if (!out) throw std::runtime_error("checkpoint write failed: " + path);
  }

  void load_params(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint blob: " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::string(magic, 8) != "VIRDCKP1")
      throw std::runtime_error("bad checkpoint magic in " + path);
    std::uint32_t n = 0;
    in.read(reinterpret_cast<char*>(&n), 4);
    if (n != static_cast<std::uint32_t>(params.count()))
      throw std::runtime_error("checkpoint parameter count mismatch in " + path);
    for (std::uint32_t i = 0; i < n; ++i) {
      std::uint32_t len = 0;
      in.read(reinterpret_cast<char*>(&len), 4);
      std::string name(len, '\0');
      in.read(name.data(), len);
      std::uint32_t nd = 0;
      in.read(reinterpret_cast<char*>(&nd), 4);
      std::vector<int> shape(nd);
      for (auto& d : shape) {
        std::int32_t dd = 0;
        in.read(reinterpret_cast<char*>(&dd), 4);
        d = dd;
      }
      if (!params.has(name))
        throw std::runtime_error("checkpoint has unknown parameter " + name + " in " + path);
      Tensor& dst = params.value(name);
      if (dst.shape != shape)
        throw std::runtime_error("checkpoint shape mismatch for " + name + " in " + path);
      in.read(reinterpret_cast<char*>(dst.data.data()),
              static_cast<std::streamsize>(dst.data.size() * sizeof(double)));
    }
    if (!in) throw std::runtime_error("truncated checkpoint blob: " + path);
  }

  // ---- parameter group accessors -------------------------------------------

  std::vector<ConvStageVars> stage_vars(TapeCtx& ctx, const std::string& view) const {
    std::vector<ConvStageVars> out;
    for (int i = 0; i < shapes.stages; ++i)
      out.push_back({ctx.bind(stage_name(view, i, "w")), ctx.bind(stage_name(view, i, "b"))});
    return out;
  }

  PhiVars phi_vars(TapeCtx& ctx) const {
    return {ctx.bind("cepa.phi.c0.w"), ctx.bind("cepa.phi.c0.b"), ctx.bind("cepa.phi.c1.w"),
            ctx.bind("cepa.phi.c1.b")};
  }

  DescriptorMlpVars mlp_vars(TapeCtx& ctx) const {
    return {ctx.bind("desc.w1"), ctx.bind("desc.b1"), ctx.bind("desc.w2"), ctx.bind("desc.b2")};
  }

  std::string stage_name(const std::string& view, int i, const char* leaf) const {
    if (cfg.encoder.share_weights)
      return "enc.s" + std::to_string(i) + "." + leaf;
    return "enc." + view + ".s" + std::to_string(i) + "." + leaf;
  }

  /// Positional encoding for one axis, as a tape Var (constant, learnable
  /// parameter, or fixed sinusoidal through a learnable tanh projection).
  Var pe_var(Tape& t, Binder& bind, const std::string& which, int length) const {
    if (cfg.cepa.pe_kind == "learnable") return bind("pe." + which);
    Var fixed = t.constant(sinusoidal_pe(length, cfg.cepa.d_p));
    if (cfg.cepa.pe_kind == "sinusoidal-learnable")
      return t.tanh_op(t.matmul(fixed, bind("pe.proj." + which + ".w")));
    return fixed;
  }

  Tensor pe_tensor(const std::string& which, int length) const {
    if (cfg.cepa.pe_kind == "learnable") return params.value("pe." + which);
    Tensor fixed = sinusoidal_pe(length, cfg.cepa.d_p);
    if (cfg.cepa.pe_kind == "sinusoidal-learnable") {
      Tensor out = kern::matmul(fixed, params.value("pe.proj." + which + ".w"));
      for (double& v : out.data) v = std::tanh(v);
      return out;
    }
    return fixed;
  }

 private:
  void build_params() {
    if (cfg.cepa.pe_kind != "sinusoidal" && cfg.cepa.pe_kind != "sinusoidal-learnable" &&
        cfg.cepa.pe_kind != "learnable")
      throw ValidationError("unknown cepa.pe_kind: " + cfg.cepa.pe_kind);
    Rng rng(seed_stream(cfg.seed, "init"));
    const auto& w = cfg.encoder.widths;

    auto add_stages = [&](const std::string& view) {
      int in_c = 3;
      for (int i = 0; i < shapes.stages; ++i) {
        params.add(stage_name(view, i, "w"), fanin_init(rng, {w[static_cast<size_t>(i)], in_c, 3, 3}));
        params.add(stage_name(view, i, "b"), Tensor::zeros({w[static_cast<size_t>(i)]}));
        in_c = w[static_cast<size_t>(i)];
      }
    };
    add_stages("g");
    if (!cfg.encoder.share_weights) add_stages("sat");

    int d_p = cfg.cepa.d_p, d_k = cfg.cepa.d_k;
    params.add("cepa.g.wq", fanin_init(rng, {d_p, d_k}));
    params.add("cepa.g.wk", fanin_init(rng, {d_p, d_k}));
    params.add("cepa.s2p.wq", fanin_init(rng, {d_p, d_k}));
    params.add("cepa.s2p.wk", fanin_init(rng, {d_p, d_k}));
    params.add("cepa.phi.c0.w", fanin_init(rng, {cfg.cepa.phi_hidden, shapes.c + 1, 3, 3}));
    params.add("cepa.phi.c0.b", Tensor::zeros({cfg.cepa.phi_hidden}));
    params.add("cepa.phi.c1.w", fanin_init(rng, {1, cfg.cepa.phi_hidden, 3, 3}));
    params.add("cepa.phi.c1.b", Tensor::zeros({1}));
    if (cfg.cepa.pe_kind == "learnable") {
      params.add("pe.a", sinusoidal_pe(shapes.h_q, d_p));
      params.add("pe.g", sinusoidal_pe(shapes.h_k, d_p));
      params.add("pe.s2p", sinusoidal_pe(shapes.h_k, d_p));
    } else if (cfg.cepa.pe_kind == "sinusoidal-learnable") {
      params.add("pe.proj.a.w", fanin_init(rng, {d_p, d_p}));
      params.add("pe.proj.g.w", fanin_init(rng, {d_p, d_p}));
      params.add("pe.proj.s2p.w", fanin_init(rng, {d_p, d_p}));
    }

    int mlp_in = shapes.c * shapes.h_q;
    int mlp_hidden = cfg.encoder.mlp_hidden_mult * cfg.encoder.c_d;
    params.add("desc.w1", fanin_init(rng, {mlp_in, mlp_hidden}));
    params.add("desc.b1", Tensor::zeros({mlp_hidden}));
    params.add("desc.w2", fanin_init(rng, {mlp_hidden, cfg.encoder.c_d}));
    params.add("desc.b2", Tensor::zeros({cfg.encoder.c_d}));

    int cp = cfg.recon.decoder_width;
    int h0 = cfg.data.pano_h / shapes.f;
    for (const char* name : {"g2g", "s2s", "s2g", "g2s"}) {
      std::string p = std::string("dec.") + name + ".";
      params.add(p + "mlp.w", fanin_init(rng, {cfg.encoder.c_d, cp * h0}));
      params.add(p + "mlp.b", Tensor::zeros({cp * h0}));
      for (int blk = 0; blk < shapes.stages; ++blk) {
        int out_c = blk + 1 == shapes.stages ? 3 : cp;
        params.add(p + "c" + std::to_string(blk) + ".w", fanin_init(rng, {out_c, cp, 3, 3}));
        params.add(p + "c" + std::to_string(blk) + ".b", Tensor::zeros({out_c}));
      }
    }

    int in_c = cfg.encoder.c_d;
    for (size_t i = 0; i < cfg.regression.conv_widths.size(); ++i) {
      int out_c = cfg.regression.conv_widths[i];
      params.add("reg.conv" + std::to_string(i) + ".w", fanin_init(rng, {out_c, in_c, 1, 3}));
      params.add("reg.conv" + std::to_string(i) + ".b", Tensor::zeros({out_c}));
      in_c = out_c;
    }
    int flat = in_c * shapes.w_g + 4;  // features ++ normalized coarse pose
    params.add("reg.fc0.w", fanin_init(rng, {flat, cfg.regression.hidden}));
    params.add("reg.fc0.b", Tensor::zeros({cfg.regression.hidden}));
    // near-zero final layer: the predicted residual starts at ~0
    params.add("reg.fc1.w", normal_init(rng, {cfg.regression.hidden, 3}, 0.01));
    params.add("reg.fc1.b", Tensor::zeros({3}));
  }
};

}  // namespace vird
