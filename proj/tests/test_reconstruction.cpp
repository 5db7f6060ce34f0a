#include <catch2/catch_amalgamated.hpp>

#include "test_util.hpp"

using Catch::Approx;

using namespace vird;

namespace {

RunConfig narrow_config() {
  // W_s = 8, W_g = 4, C_d = 2: hfov = pi doubles the azimuth circle.
  RunConfig cfg = vt::tiny_config();
  cfg.data.pano_w = 32;
  cfg.data.pano_h = 16;
  cfg.data.hfov_rad = kPi;
  cfg.data.sat_px = 32;
  return cfg;
}

}  // namespace

TEST_CASE("align_satellite_descriptor reorders blocks per the shift-crop map") {
  RunConfig cfg = narrow_config();
  VirdModel model(cfg);
  REQUIRE(model.shapes.w_s == 8);
  REQUIRE(model.shapes.w_g == 4);
  REQUIRE(cfg.encoder.c_d == 2);

  Tensor d = Tensor::zeros({16});
  for (int i = 0; i < 16; ++i) d.data[static_cast<size_t>(i)] = i;

  SECTION("theta = 0 takes the central block") {
    Tensor out = model.align_descriptor(d, 0.0);
    CHECK(out.data == std::vector<double>{4, 5, 6, 7, 8, 9, 10, 11});
  }
  SECTION("theta = 2*pi equals theta = 0") {
    CHECK(model.align_descriptor(d, kTwoPi).data == model.align_descriptor(d, 0.0).data);
  }
  SECTION("theta = pi reorders per the geometry index map") {
    Tensor out = model.align_descriptor(d, kPi);
    CHECK(out.data == std::vector<double>{12, 13, 14, 15, 0, 1, 2, 3});
  }
  SECTION("off-grid theta snaps to the nearest integral shift") {
    double step = kTwoPi / 8;
    Tensor snapped = model.align_descriptor(d, step * 0.4);
    CHECK(snapped.data == model.align_descriptor(d, 0.0).data);
    Tensor next = model.align_descriptor(d, step * 0.6);
    CHECK(next.data == model.align_descriptor(d, step).data);
  }
}

TEST_CASE("decode_view shape and zero-descriptor behavior") {
  RunConfig cfg = vt::tiny_config();
  VirdModel model(cfg);

  SECTION("output equals the ground image shape") {
    Tape t;
    auto ctx = model.start_tape(t, false);
    Var d = t.constant(Tensor::zeros({model.shapes.k_g}));
    Var img = decode_view(t, d, decoder_vars(ctx, model, "g2g"), model);
    CHECK(t.val(img).shape == std::vector<int>{3, cfg.data.pano_h, cfg.data.pano_w});
  }
  SECTION("zero descriptor with zero final layer gives the final bias") {
    model.params.value("dec.g2g.c2.w") = Tensor::zeros({3, cfg.recon.decoder_width, 3, 3});
    model.params.value("dec.g2g.c2.b") = Tensor({3}, {0.25, 0.5, 0.75});
    Tape t;
    auto ctx = model.start_tape(t, false);
    Var d = t.constant(Tensor::zeros({model.shapes.k_g}));
    Var img = decode_view(t, d, decoder_vars(ctx, model, "g2g"), model);
    const Tensor& iv = t.val(img);
    for (int y = 0; y < cfg.data.pano_h; ++y)
      for (int x = 0; x < cfg.data.pano_w; ++x) {
        CHECK(iv.at(0, y, x) == 0.25);
        CHECK(iv.at(1, y, x) == 0.5);
        CHECK(iv.at(2, y, x) == 0.75);
      }
  }
  SECTION("wrong descriptor length is rejected") {
    Tape t;
    auto ctx = model.start_tape(t, false);
    Var d = t.constant(Tensor::zeros({model.shapes.k_g + 1}));
    CHECK_THROWS(decode_view(t, d, decoder_vars(ctx, model, "g2g"), model));
  }
}

TEST_CASE("decoder gradient w.r.t. the descriptor matches finite differences") {
  RunConfig cfg = vt::tiny_config();
  cfg.data.pano_h = 8;
  cfg.data.pano_w = 16;
  cfg.data.sat_px = 16;
  VirdModel model(cfg);
  Rng rng(8);
  Tensor d = vt::rand_tensor(rng, {model.shapes.k_g});

  auto eval = [&]() {
    Tape t;
    auto ctx = model.start_tape(t, false);
    Var dv = t.constant(d);
    Var img = decode_view(t, dv, decoder_vars(ctx, model, "s2g"), model);
    double acc = 0.0;
    for (double v : t.val(img).data) acc += v;
    return acc / static_cast<double>(t.val(img).numel());
  };
  Tape t;
  auto ctx = model.start_tape(t, true);
  Var dv = t.leaf(d, true);
  Var img = decode_view(t, dv, decoder_vars(ctx, model, "s2g"), model);
  t.backward(t.mean_all(img));
  CHECK(vt::max_rel_err_fd(d, t.grad(dv), eval) < 1e-4);
}

TEST_CASE("reconstruction loss formula on scalar images") {
  // 1x1x1 images: targets {0.2, 0.6}, reconstructions {0.5, 0.5}
  Tape t;
  Tensor i_g({1, 1, 1}, {0.2}), i_s({1, 1, 1}, {0.6});
  Var r_gg = t.constant(Tensor({1, 1, 1}, {0.5}));
  Var r_ss = t.constant(Tensor({1, 1, 1}, {0.5}));
  Var r_sg = t.constant(Tensor({1, 1, 1}, {0.5}));
  Var r_gs = t.constant(Tensor({1, 1, 1}, {0.5}));
  Var l_origin = t.add(t.l1_mean(r_gg, i_g), t.l1_mean(r_ss, i_s));
  Var l_cross = t.add(t.l1_mean(r_sg, i_g), t.l1_mean(r_gs, i_s));
  Var l_recon = t.add(t.scale(l_origin, 1.0), t.scale(l_cross, 10.0));
  CHECK(t.val(l_origin).data[0] == Approx(0.4));
  CHECK(t.val(l_cross).data[0] == Approx(0.4));
  CHECK(t.val(l_recon).data[0] == Approx(4.4));
}

TEST_CASE("recon_loss zero cases and weight linearity") {
  RunConfig cfg = vt::tiny_config();
  cfg.data.pano_h = 8;
  cfg.data.pano_w = 16;
  cfg.data.sat_px = 16;
  VirdModel model(cfg);
  Rng rng(21);
  Tensor d_g = vt::rand_tensor(rng, {model.shapes.k_g});
  Tensor d_s = vt::rand_tensor(rng, {model.shapes.k_g});

  auto run = [&](double a1, double a2) {
    VirdModel m2(cfg);
    m2.cfg.recon.alpha1 = a1;
    m2.cfg.recon.alpha2 = a2;
    Tape t;
    auto ctx = m2.start_tape(t, false);
    // decode targets from the model itself so residuals are exactly zero
    Var dgv = t.constant(d_g), dsv = t.constant(d_s);
    Tensor i_g = t.val(decode_view(t, dgv, decoder_vars(ctx, m2, "g2g"), m2));
    Tensor i_s = t.val(decode_view(t, dsv, decoder_vars(ctx, m2, "s2s"), m2));
    auto rl = recon_loss(t, i_g, i_s, dgv, dsv, ctx, m2);
    return std::array<double, 3>{t.val(rl.l_origin).data[0], t.val(rl.l_cross).data[0],
                                 t.val(rl.l_recon).data[0]};
  };

  SECTION("matching reconstructions zero the origin term") {
    auto [lo, lc, lr] = run(1.0, 0.0);
    CHECK(lo == 0.0);   // g2g and s2s reproduce their own targets exactly
    CHECK(lr == 0.0);   // alpha2 = 0 removes the cross mismatch
    CHECK(lc >= 0.0);
  }
  SECTION("zero weights give zero recon loss regardless of residuals") {
    auto [lo, lc, lr] = run(0.0, 0.0);
    CHECK(lr == 0.0);
    CHECK(lo >= 0.0);
    CHECK(lc >= 0.0);
  }
  SECTION("doubling alpha2 doubles the cross contribution exactly") {
    auto r1 = run(0.0, 10.0);
    auto r2 = run(0.0, 20.0);
    CHECK(r2[2] == Approx(2.0 * r1[2]).epsilon(1e-12));
  }
}

TEST_CASE("recon_loss gradients match finite differences") {
  RunConfig cfg = vt::tiny_config();
  cfg.data.pano_h = 8;
  cfg.data.pano_w = 16;
  cfg.data.sat_px = 16;
  VirdModel model(cfg);
  Rng rng(31);
  Tensor d_g = vt::rand_tensor(rng, {model.shapes.k_g});
  Tensor d_s = vt::rand_tensor(rng, {model.shapes.k_g});
  Tensor i_g = vt::rand_tensor(rng, {3, 8, 16}, 0.0, 1.0);
  Tensor i_s = vt::rand_tensor(rng, {3, 8, 16}, 0.0, 1.0);

  auto eval = [&]() {
    Tape t;
    auto ctx = model.start_tape(t, false);
    auto rl = recon_loss(t, i_g, i_s, t.constant(d_g), t.constant(d_s), ctx, model);
    return t.val(rl.l_recon).data[0];
  };
  Tape t;
  auto ctx = model.start_tape(t, true);
  Var dgv = t.leaf(d_g, true), dsv = t.leaf(d_s, true);
  auto rl = recon_loss(t, i_g, i_s, dgv, dsv, ctx, model);
  t.backward(rl.l_recon);
  CHECK(vt::max_rel_err_fd(d_g, t.grad(dgv), eval) < 1e-4);
  CHECK(vt::max_rel_err_fd(d_s, t.grad(dsv), eval) < 1e-4);
  // and through one decoder parameter tensor
  Tensor& w = model.params.value("dec.s2g.c1.w");
  CHECK(vt::max_rel_err_fd(w, t.grad(ctx.bind("dec.s2g.c1.w")), eval) < 1e-4);
}

TEST_CASE("polar image target has the panorama shape") {
  RunConfig cfg = vt::tiny_config();
  VirdModel model(cfg);
  Rng rng(41);
  Tensor sat = vt::rand_tensor(rng, {3, cfg.data.sat_px, cfg.data.sat_px}, 0.0, 1.0);
  Tensor target = make_polar_image_target(model, sat, Pose(1.0, -2.0, 0.7));
  CHECK(target.shape == std::vector<int>{3, cfg.data.pano_h, cfg.data.pano_w});
}
