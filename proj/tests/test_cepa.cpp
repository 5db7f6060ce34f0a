#include <catch2/catch_amalgamated.hpp>

#include "test_util.hpp"

using Catch::Approx;

using namespace vird;

TEST_CASE("sinusoidal encoding basics") {
  Tensor pe = sinusoidal_pe(4, 4);
  SECTION("row zero alternates sin0/cos0") {
    CHECK(pe.at(0, 0) == 0.0);
    CHECK(pe.at(0, 1) == 1.0);
    CHECK(pe.at(0, 2) == 0.0);
    CHECK(pe.at(0, 3) == 1.0);
  }
  SECTION("entries stay in [-1, 1]") {
    for (double v : pe.data) {
      CHECK(v >= -1.0);
      CHECK(v <= 1.0);
    }
  }
  SECTION("row 2, column 0 is sin(2)") { CHECK(pe.at(2, 0) == Approx(std::sin(2.0))); }
  SECTION("rows are distinct") {
    for (int i = 0; i < 4; ++i)
      for (int j = i + 1; j < 4; ++j) {
        double diff = 0.0;
        for (int c = 0; c < 4; ++c) diff += std::abs(pe.at(i, c) - pe.at(j, c));
        CHECK(diff > 1e-6);
      }
  }
  SECTION("odd d_p is rejected") { CHECK_THROWS(sinusoidal_pe(4, 3)); }
}

TEST_CASE("positional attention") {
  SECTION("zero query projection gives uniform rows") {
    Tape t;
    Var pa = t.constant(sinusoidal_pe(3, 4));
    Var pv = t.constant(sinusoidal_pe(5, 4));
    Var wq = t.constant(Tensor::zeros({4, 2}));
    Var wk = t.constant(sinusoidal_pe(4, 2));
    Var a = positional_attention(t, pa, pv, wq, wk, 2);
    for (double v : t.val(a).data) CHECK(v == Approx(1.0 / 5.0));
  }
  SECTION("rows sum to one") {
    Rng rng(1);
    Tape t;
    Var pa = t.constant(vt::rand_tensor(rng, {4, 6}));
    Var pv = t.constant(vt::rand_tensor(rng, {3, 6}));
    Var wq = t.constant(vt::rand_tensor(rng, {6, 2}));
    Var wk = t.constant(vt::rand_tensor(rng, {6, 2}));
    Var a = positional_attention(t, pa, pv, wq, wk, 2);
    const Tensor& av = t.val(a);
    for (int q = 0; q < 4; ++q) {
      double sum = 0.0;
      for (int k = 0; k < 3; ++k) {
        sum += av.at(q, k);
        CHECK(av.at(q, k) >= 0.0);
      }
      CHECK(std::abs(sum - 1.0) < 1e-5);
    }
  }
  SECTION("scalar case matches direct evaluation") {
    // d_p = d_k = 1, H_Q = H_K = 2
    double a0 = 0.3, a1 = -0.7, p0 = 1.1, p1 = 0.4, q = 0.9, k = -1.3;
    Tape t;
    Var pa = t.constant(Tensor({2, 1}, {a0, a1}));
    Var pv = t.constant(Tensor({2, 1}, {p0, p1}));
    Var wq = t.constant(Tensor({1, 1}, {q}));
    Var wk = t.constant(Tensor({1, 1}, {k}));
    Var attn = positional_attention(t, pa, pv, wq, wk, 1);
    auto row = [&](double aq) {
      double l0 = (aq * q) * (p0 * k), l1 = (aq * q) * (p1 * k);
      double m = std::max(l0, l1);
      double e0 = std::exp(l0 - m), e1 = std::exp(l1 - m);
      return std::pair<double, double>{e0 / (e0 + e1), e1 / (e0 + e1)};
    };
    auto [w00, w01] = row(a0);
    auto [w10, w11] = row(a1);
    const Tensor& av = t.val(attn);
    CHECK(av.at(0, 0) == Approx(w00).epsilon(1e-12));
    CHECK(av.at(0, 1) == Approx(w01).epsilon(1e-12));
    CHECK(av.at(1, 0) == Approx(w10).epsilon(1e-12));
    CHECK(av.at(1, 1) == Approx(w11).epsilon(1e-12));
  }
}

TEST_CASE("attention weights are content independent") {
  RunConfig cfg = vt::tiny_config();
  VirdModel model(cfg);
  auto e1 = model.eval_ctx();
  auto e2 = model.eval_ctx();
  CHECK(e1.a_g.data == e2.a_g.data);
  CHECK(e1.a_s2p.data == e2.a_s2p.data);

  // the tape path computes the identical weights before any image enters
  Tape t;
  auto ctx = model.start_tape(t, false);
  CHECK(t.val(ctx.a_g).data == e1.a_g.data);
  CHECK(t.val(ctx.a_s2p).data == e1.a_s2p.data);
}

namespace {

PhiVars zero_phi(Tape& t, int c_in, int hidden) {
  return {t.constant(Tensor::zeros({hidden, c_in, 3, 3})), t.constant(Tensor::zeros({hidden})),
          t.constant(Tensor::zeros({1, hidden, 3, 3})), t.constant(Tensor::zeros({1}))};
}

}  // namespace

TEST_CASE("context enhancement") {
  Rng rng(7);
  int hq = 3, hk = 4, c = 2, w = 5;
  Tensor a_g = kern::softmax(vt::rand_tensor(rng, {hq, hk}), 1);
  Tensor f_g = vt::rand_tensor(rng, {c, hk, w});

  SECTION("constant Phi output gives A_g + 1/H_K") {
    Tape t;
    Var enhanced = context_enhance(t, t.constant(a_g), t.constant(f_g), zero_phi(t, c + 1, 2));
    const Tensor& ev = t.val(enhanced);
    for (int q = 0; q < hq; ++q)
      for (int k = 0; k < hk; ++k)
        for (int x = 0; x < w; ++x)
          CHECK(ev.at(q, k, x) == Approx(a_g.at(q, k) + 1.0 / hk).epsilon(1e-12));
  }
  SECTION("every slice sums to two") {
    Tape t;
    PhiVars phi{t.constant(vt::rand_tensor(rng, {2, c + 1, 3, 3})),
                t.constant(vt::rand_tensor(rng, {2})),
                t.constant(vt::rand_tensor(rng, {1, 2, 3, 3})),
                t.constant(vt::rand_tensor(rng, {1}))};
    Var enhanced = context_enhance(t, t.constant(a_g), t.constant(f_g), phi);
    const Tensor& ev = t.val(enhanced);
    for (int q = 0; q < hq; ++q)
      for (int x = 0; x < w; ++x) {
        double sum = 0.0;
        for (int k = 0; k < hk; ++k) {
          sum += ev.at(q, k, x);
          CHECK(ev.at(q, k, x) >= 0.0);
        }
        CHECK(std::abs(sum - 2.0) < 1e-5);
      }
  }
  SECTION("hand-walked oracle with center-tap-only kernels") {
    // H_K = 2, W_g = 1, C = 1: 3x3 kernels with only the center tap set act
    // as 1x1 convolutions, so the algorithm can be evaluated by hand.
    int hq2 = 2, hk2 = 2;
    Tensor a2({hq2, hk2}, {0.25, 0.75, 0.6, 0.4});
    Tensor f2({1, hk2, 1}, {0.8, -0.3});
    double wa = 0.7, wf = -1.1, b0 = 0.2, w1 = 0.9, b1 = -0.05;
    Tensor phi_w0 = Tensor::zeros({1, 2, 3, 3});
    phi_w0.at(0, 0, 1, 1) = wa;
    phi_w0.at(0, 1, 1, 1) = wf;
    Tensor phi_w1 = Tensor::zeros({1, 1, 3, 3});
    phi_w1.at(0, 0, 1, 1) = w1;

    Tape t;
    PhiVars phi{t.constant(phi_w0), t.constant(Tensor({1}, {b0})), t.constant(phi_w1),
                t.constant(Tensor({1}, {b1}))};
    Var enhanced = context_enhance(t, t.constant(a2), t.constant(f2), phi);
    const Tensor& ev = t.val(enhanced);

    for (int q = 0; q < hq2; ++q) {
      double logit0 = w1 * std::tanh(wa * a2.at(q, 0) + wf * f2.at(0, 0, 0) + b0) + b1;
      double logit1 = w1 * std::tanh(wa * a2.at(q, 1) + wf * f2.at(0, 1, 0) + b0) + b1;
      double m = std::max(logit0, logit1);
      double e0 = std::exp(logit0 - m), e1 = std::exp(logit1 - m);
      CHECK(ev.at(q, 0, 0) == Approx(a2.at(q, 0) + e0 / (e0 + e1)).epsilon(1e-12));
      CHECK(ev.at(q, 1, 0) == Approx(a2.at(q, 1) + e1 / (e0 + e1)).epsilon(1e-12));
    }
  }
  SECTION("channel mismatch is rejected") {
    Tape t;
    CHECK_THROWS(
        context_enhance(t, t.constant(a_g), t.constant(f_g), zero_phi(t, c + 2, 2)));
  }
}

TEST_CASE("vertical transform") {
  Rng rng(13);

  SECTION("H_K = 1 with unit weights broadcasts the single row") {
    Tensor f = vt::rand_tensor(rng, {2, 1, 3});
    Tensor a = Tensor::full({4, 1}, 1.0);  // softmax over one logit
    Tensor out = vertical_transform(f, a);
    for (int c = 0; c < 2; ++c)
      for (int q = 0; q < 4; ++q)
        for (int x = 0; x < 3; ++x) CHECK(out.at(c, q, x) == f.at(c, 0, x));
  }
  SECTION("uniform weights average the column") {
    Tensor f = vt::rand_tensor(rng, {2, 4, 3});
    Tensor a = Tensor::full({2, 4}, 0.25);
    Tensor out = vertical_transform(f, a);
    for (int c = 0; c < 2; ++c)
      for (int x = 0; x < 3; ++x) {
        double mean = 0.0;
        for (int k = 0; k < 4; ++k) mean += 0.25 * f.at(c, k, x);
        CHECK(out.at(c, 0, x) == Approx(mean).epsilon(1e-14));
      }
  }
  SECTION("matches the triple-loop oracle exactly") {
    Tensor f = vt::rand_tensor(rng, {2, 4, 2});
    Tensor shared = vt::rand_tensor(rng, {3, 4});
    Tensor percol = vt::rand_tensor(rng, {3, 4, 2});
    for (const Tensor& a : {shared, percol}) {
      Tensor out = vertical_transform(f, a);
      for (int c = 0; c < 2; ++c)
        for (int q = 0; q < 3; ++q)
          for (int x = 0; x < 2; ++x) {
            double acc = 0.0;
            for (int k = 0; k < 4; ++k)
              acc += (a.ndim() == 3 ? a.at(q, k, x) : a.at(q, k)) * f.at(c, k, x);
            CHECK(out.at(c, q, x) == acc);
          }
    }
  }
  SECTION("linear in the features") {
    Tensor f1 = vt::rand_tensor(rng, {2, 3, 4}), f2 = vt::rand_tensor(rng, {2, 3, 4});
    Tensor a = vt::rand_tensor(rng, {2, 3});
    double s1 = 1.7, s2 = -0.4;
    Tensor combo = f1;
    for (size_t i = 0; i < combo.data.size(); ++i)
      combo.data[i] = s1 * f1.data[i] + s2 * f2.data[i];
    Tensor lhs = vertical_transform(combo, a);
    Tensor r1 = vertical_transform(f1, a), r2 = vertical_transform(f2, a);
    for (size_t i = 0; i < lhs.data.size(); ++i)
      CHECK(lhs.data[i] == Approx(s1 * r1.data[i] + s2 * r2.data[i]).margin(1e-12));
  }
  SECTION("shared weights commute with horizontal cyclic shifts") {
    Tensor f = vt::rand_tensor(rng, {2, 3, 6});
    Tensor a = vt::rand_tensor(rng, {4, 3});
    int k = 2;
    Tensor f_shift = cyclic_shift_crop(f, kTwoPi * k / 6, 6);
    Tensor lhs = vertical_transform(f_shift, a);
    Tensor rhs = cyclic_shift_crop(vertical_transform(f, a), kTwoPi * k / 6, 6);
    CHECK(lhs.data == rhs.data);
  }
}

TEST_CASE("composed CEPA block gradients match finite differences") {
  Rng rng(23);
  int c = 2, hk = 2, hq = 2, wg = 3, ws = 4, d_p = 4, d_k = 2, hidden = 2;
  Tensor f_g = vt::rand_tensor(rng, {c, hk, wg});
  Tensor f_s = vt::rand_tensor(rng, {c, hk, ws});
  Tensor wq_g = vt::rand_tensor(rng, {d_p, d_k}), wk_g = vt::rand_tensor(rng, {d_p, d_k});
  Tensor wq_s = vt::rand_tensor(rng, {d_p, d_k}), wk_s = vt::rand_tensor(rng, {d_p, d_k});
  Tensor phi_w0 = vt::rand_tensor(rng, {hidden, c + 1, 3, 3});
  Tensor phi_b0 = vt::rand_tensor(rng, {hidden});
  Tensor phi_w1 = vt::rand_tensor(rng, {1, hidden, 3, 3});
  Tensor phi_b1 = vt::rand_tensor(rng, {1});
  Tensor wsum_g = vt::rand_tensor(rng, {c, hq, wg});
  Tensor wsum_s = vt::rand_tensor(rng, {c, hq, ws});
  Tensor pe_a = sinusoidal_pe(hq, d_p), pe_g = sinusoidal_pe(hk, d_p);

  struct Out {
    Tape t;
    Var f_g, f_s, wq_g, wk_g, wq_s, wk_s, w0, b0, w1, b1, loss;
  };
  auto build = [&](Out& o) {
    o.f_g = o.t.leaf(f_g, true);
    o.f_s = o.t.leaf(f_s, true);
    o.wq_g = o.t.leaf(wq_g, true);
    o.wk_g = o.t.leaf(wk_g, true);
    o.wq_s = o.t.leaf(wq_s, true);
    o.wk_s = o.t.leaf(wk_s, true);
    o.w0 = o.t.leaf(phi_w0, true);
    o.b0 = o.t.leaf(phi_b0, true);
    o.w1 = o.t.leaf(phi_w1, true);
    o.b1 = o.t.leaf(phi_b1, true);
    Var pa = o.t.constant(pe_a), pg = o.t.constant(pe_g);
    Var a_g = positional_attention(o.t, pa, pg, o.wq_g, o.wk_g, d_k);
    Var a_s = positional_attention(o.t, pa, pg, o.wq_s, o.wk_s, d_k);
    Var enhanced = context_enhance(o.t, a_g, o.f_g, {o.w0, o.b0, o.w1, o.b1});
    Var f_gp = o.t.vertical_transform(o.f_g, enhanced);
    Var f_sp = o.t.vertical_transform(o.f_s, a_s);
    o.loss = o.t.add(o.t.sum_all(o.t.mul_const(f_gp, wsum_g)),
                     o.t.sum_all(o.t.mul_const(f_sp, wsum_s)));
  };

  Out o;
  build(o);
  o.t.backward(o.loss);
  auto eval = [&]() {
    Out tmp;
    build(tmp);
    return tmp.t.val(tmp.loss).data[0];
  };

  CHECK(vt::max_rel_err_fd(f_g, o.t.grad(o.f_g), eval) < 1e-4);
  CHECK(vt::max_rel_err_fd(f_s, o.t.grad(o.f_s), eval) < 1e-4);
  CHECK(vt::max_rel_err_fd(wq_g, o.t.grad(o.wq_g), eval) < 1e-4);
  CHECK(vt::max_rel_err_fd(wk_g, o.t.grad(o.wk_g), eval) < 1e-4);
  CHECK(vt::max_rel_err_fd(wq_s, o.t.grad(o.wq_s), eval) < 1e-4);
  CHECK(vt::max_rel_err_fd(phi_w0, o.t.grad(o.w0), eval) < 1e-4);
  CHECK(vt::max_rel_err_fd(phi_b0, o.t.grad(o.b0), eval) < 1e-4);
  CHECK(vt::max_rel_err_fd(phi_w1, o.t.grad(o.w1), eval) < 1e-4);
  CHECK(vt::max_rel_err_fd(phi_b1, o.t.grad(o.b1), eval) < 1e-4);
}
