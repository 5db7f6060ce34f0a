#include <catch2/catch_amalgamated.hpp>

#include "test_util.hpp"

using Catch::Approx;

using namespace vird;

namespace {

std::vector<std::pair<const Tensor*, const Tensor*>> stage_ptrs(const std::vector<Tensor>& w,
                                                                const std::vector<Tensor>& b) {
  std::vector<std::pair<const Tensor*, const Tensor*>> out;
  for (size_t i = 0; i < w.size(); ++i) out.emplace_back(&w[i], &b[i]);
  return out;
}

}  // namespace

TEST_CASE("feature map shapes follow the downsample factor") {
  Rng rng(1);
  std::vector<Tensor> w = {vt::rand_tensor(rng, {2, 3, 3, 3}), vt::rand_tensor(rng, {2, 2, 3, 3}),
                           vt::rand_tensor(rng, {2, 2, 3, 3})};
  std::vector<Tensor> b = {Tensor::zeros({2}), Tensor::zeros({2}), Tensor::zeros({2})};

  Tensor pano = vt::rand_tensor(rng, {3, 32, 128});
  Tensor fm = extract_features(pano, true, stage_ptrs(w, b));
  CHECK(fm.shape == std::vector<int>{2, 4, 16});

  Tensor sat = vt::rand_tensor(rng, {3, 64, 64});
  Tensor fs = extract_features(sat, false, stage_ptrs(w, b));
  CHECK(fs.shape == std::vector<int>{2, 8, 8});

  Tensor bad = vt::rand_tensor(rng, {3, 33, 128});
  CHECK_THROWS(extract_features(bad, true, stage_ptrs(w, b)));
}

TEST_CASE("panorama path is exactly shift-equivariant for multiples of f") {
  Rng rng(2);
  std::vector<Tensor> w = {vt::rand_tensor(rng, {2, 3, 3, 3}), vt::rand_tensor(rng, {3, 2, 3, 3}),
                           vt::rand_tensor(rng, {2, 3, 3, 3})};
  std::vector<Tensor> b = {vt::rand_tensor(rng, {2}), vt::rand_tensor(rng, {3}),
                           vt::rand_tensor(rng, {2})};
  Tensor pano = vt::rand_tensor(rng, {3, 16, 32});
  const int f = 8, k = 2;

  Tensor base = extract_features(pano, true, stage_ptrs(w, b));
  Tensor shifted_in = cyclic_shift_crop(pano, kTwoPi * (f * k) / 32, 32);
  Tensor shifted_out = extract_features(shifted_in, true, stage_ptrs(w, b));
  Tensor expect = cyclic_shift_crop(base, kTwoPi * k / base.shape[2], base.shape[2]);
  CHECK(shifted_out.data == expect.data);
}

TEST_CASE("vertical directional encoding") {
  SECTION("single column yields a C_d-length descriptor") {
    Rng rng(3);
    Tensor f = vt::rand_tensor(rng, {2, 3, 1});
    Tensor w1 = vt::rand_tensor(rng, {6, 4}), b1 = vt::rand_tensor(rng, {4});
    Tensor w2 = vt::rand_tensor(rng, {4, 2}), b2 = vt::rand_tensor(rng, {2});
    Tensor d = vertical_directional_encode(f, {&w1, &b1, &w2, &b2});
    CHECK(d.shape == std::vector<int>{2});
  }
  SECTION("cyclic column shift rotates descriptor blocks exactly") {
    Rng rng(4);
    Tensor f = vt::rand_tensor(rng, {2, 2, 6});
    Tensor w1 = vt::rand_tensor(rng, {4, 4}), b1 = vt::rand_tensor(rng, {4});
    Tensor w2 = vt::rand_tensor(rng, {4, 3}), b2 = vt::rand_tensor(rng, {3});
    DescriptorMlpWeights mlp{&w1, &b1, &w2, &b2};
    Tensor d = vertical_directional_encode(f, mlp);
    int k = 2, c_d = 3, wcols = 6;
    Tensor f_shift = cyclic_shift_crop(f, kTwoPi * k / wcols, wcols);
    Tensor d_shift = vertical_directional_encode(f_shift, mlp);
    for (int j = 0; j < wcols; ++j)
      for (int c = 0; c < c_d; ++c)
        CHECK(d_shift.data[static_cast<size_t>(j) * c_d + c] ==
              d.data[static_cast<size_t>((j + k) % wcols) * c_d + c]);
  }
  SECTION("hand-set weights match direct evaluation") {
    // C = 2, H_Q = 2, C_d = 1; identity-like first layer picking one entry
    Tensor f({2, 2, 2}, {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8});
    // column w: flattened order is (c0q0, c0q1, c1q0, c1q1)
    Tensor w1 = Tensor::zeros({4, 2});
    w1.at(0, 0) = 1.0;  // hidden0 = f[0,0,w]
    w1.at(3, 1) = 2.0;  // hidden1 = 2 f[1,1,w]
    Tensor b1 = Tensor::zeros({2});
    Tensor w2({2, 1}, {1.0, -1.0});
    Tensor b2({1}, {0.25});
    Tensor d = vertical_directional_encode(f, {&w1, &b1, &w2, &b2});
    REQUIRE(d.numel() == 2);
    auto expect = [&](int w) {
      double h0 = std::tanh(f.at(0, 0, w));
      double h1 = std::tanh(2.0 * f.at(1, 1, w));
      return h0 - h1 + 0.25;
    };
    CHECK(d.data[0] == Approx(expect(0)).epsilon(1e-14));
    CHECK(d.data[1] == Approx(expect(1)).epsilon(1e-14));
  }
  SECTION("gradient matches finite differences") {
    Rng rng(5);
    Tensor f = vt::rand_tensor(rng, {2, 2, 3});
    Tensor w1 = vt::rand_tensor(rng, {4, 4}), b1 = vt::rand_tensor(rng, {4});
    Tensor w2 = vt::rand_tensor(rng, {4, 2}), b2 = vt::rand_tensor(rng, {2});
    Tensor wsum = vt::rand_tensor(rng, {6});

    auto eval = [&]() {
      Tensor d = vertical_directional_encode(f, {&w1, &b1, &w2, &b2});
      double acc = 0.0;
      for (size_t i = 0; i < d.data.size(); ++i) acc += d.data[i] * wsum.data[i];
      return acc;
    };
    Tape t;
    Var fv = t.leaf(f, true);
    DescriptorMlpVars mlp{t.leaf(w1, true), t.leaf(b1, true), t.leaf(w2, true), t.leaf(b2, true)};
    Var d = vertical_directional_encode(t, fv, mlp);
    t.backward(t.sum_all(t.mul_const(d, wsum)));
    CHECK(vt::max_rel_err_fd(f, t.grad(fv), eval) < 1e-4);
    CHECK(vt::max_rel_err_fd(w1, t.grad(mlp.w1), eval) < 1e-4);
    CHECK(vt::max_rel_err_fd(b2, t.grad(mlp.b2), eval) < 1e-4);
  }
}

TEST_CASE("descriptor length identity K_s / K_g = W_s / W_g") {
  RunConfig cfg = vt::tiny_config();
  VirdModel model(cfg);
  CHECK(model.shapes.k_s * model.shapes.w_g == model.shapes.k_g * model.shapes.w_s);
  CHECK(model.shapes.k_g == cfg.encoder.c_d * model.shapes.w_g);
}

TEST_CASE("azimuthal equivariance end to end") {
  RunConfig cfg = vt::tiny_config();
  VirdModel model(cfg);
  auto ectx = model.eval_ctx();
  Rng rng(6);

  SECTION("satellite path: polar-map shift k -> descriptor block shift k") {
    int ws = model.shapes.w_s, c_d = cfg.encoder.c_d;
    Tensor f_polar = vt::rand_tensor(rng, {model.shapes.c, model.shapes.h_k, ws});
    Tensor f_t = kern::vertical_transform(f_polar, ectx.a_s2p);
    Tensor d = vertical_directional_encode(f_t, ectx.mlp);
    int k = 3;
    Tensor f_shift = cyclic_shift_crop(f_polar, kTwoPi * k / ws, ws);
    Tensor d_shift =
        vertical_directional_encode(kern::vertical_transform(f_shift, ectx.a_s2p), ectx.mlp);
    for (int j = 0; j < ws; ++j)
      for (int c = 0; c < c_d; ++c)
        CHECK(d_shift.data[static_cast<size_t>(j) * c_d + c] ==
              d.data[static_cast<size_t>((j + k) % ws) * c_d + c]);
  }
  SECTION("ground path: image shift f*k -> descriptor block shift k") {
    Tensor pano = vt::rand_tensor(rng, {3, cfg.data.pano_h, cfg.data.pano_w}, 0.0, 1.0);
    Tensor d = model.ground_forward(ectx, pano).d_g;
    int k = 5, f = model.shapes.f, wimg = cfg.data.pano_w;
    Tensor pano_shift = cyclic_shift_crop(pano, kTwoPi * (f * k) / wimg, wimg);
    Tensor d_shift = model.ground_forward(ectx, pano_shift).d_g;
    int c_d = cfg.encoder.c_d, wg = model.shapes.w_g;
    for (int j = 0; j < wg; ++j)
      for (int c = 0; c < c_d; ++c)
        CHECK(d_shift.data[static_cast<size_t>(j) * c_d + c] ==
              d.data[static_cast<size_t>((j + k) % wg) * c_d + c]);
  }
}
