#pragma once

// Reverse-mode automatic differentiation over Tensor values. One Tape per
// training sample; nodes record a value plus a backward closure that scatters
// the node's gradient into its parents. Composite operations that would blow
// up the graph (cosine similarity, InfoNCE, L1 loss, the vertical transform)
// are fused with hand-derived backward passes; all of them are covered by the
// finite-difference test suite.

#include <functional>
#include <memory>

#include "vird/kernels.hpp"

namespace vird {

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor v, bool requires_grad = false) {
    return push(std::move(v), requires_grad, {});
  }
  Var constant(Tensor v) { return leaf(std::move(v), false); }
  Var constant_scalar(double v) { return leaf(Tensor::scalar(v), false); }

  const Tensor& val(Var x) const { return nodes_[check(x)].val; }
  bool needs_grad(Var x) const { return nodes_[check(x)].needs; }

  /// Gradient buffer of a node (zeros until backward has run).
  const Tensor& grad(Var x) {
    auto& n = nodes_[check(x)];
    if (n.grad.data.empty()) n.grad = Tensor::zeros(n.val.shape);
    return n.grad;
  }

  /// Runs backward from a scalar root; accumulates into leaf gradients.
  void backward(Var root) {
    auto& r = nodes_[check(root)];
    if (r.val.numel() != 1) throw std::invalid_argument("backward: root must be scalar");
    gbuf(root.id).data[0] += 1.0;
    for (int i = root.id; i >= 0; --i) {
      auto& n = nodes_[static_cast<size_t>(i)];
      if (n.needs && n.back && !n.grad.data.empty()) n.back(*this);
    }
  }

  // ---- elementwise and structural ops ------------------------------------

  Var add(Var a, Var b) {
    const Tensor &va = val(a), &vb = val(b);
    if (!va.same_shape(vb)) throw std::invalid_argument("add: shape mismatch");
    Tensor out = va;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += vb.data[i];
    return binary(std::move(out), a, b, [a, b](Tape& t) {
      t.accumulate(a, t.gcur());
      t.accumulate(b, t.gcur());
    });
  }

  Var sub(Var a, Var b) {
    const Tensor &va = val(a), &vb = val(b);
    if (!va.same_shape(vb)) throw std::invalid_argument("sub: shape mismatch");
    Tensor out = va;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= vb.data[i];
    return binary(std::move(out), a, b, [a, b](Tape& t) {
      t.accumulate(a, t.gcur());
      t.accumulate_scaled(b, t.gcur(), -1.0);
    });
  }

  Var mul(Var a, Var b) {
    const Tensor &va = val(a), &vb = val(b);
    if (!va.same_shape(vb)) throw std::invalid_argument("mul: shape mismatch");
    Tensor out = va;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= vb.data[i];
    return binary(std::move(out), a, b, [a, b](Tape& t) {
      const Tensor& g = t.gcur();
      if (t.needs_grad(a)) {
        Tensor ga = g;
        for (size_t i = 0; i < ga.data.size(); ++i) ga.data[i] *= t.val(b).data[i];
        t.accumulate(a, ga);
      }
      if (t.needs_grad(b)) {
        Tensor gb = g;
        for (size_t i = 0; i < gb.data.size(); ++i) gb.data[i] *= t.val(a).data[i];
        t.accumulate(b, gb);
      }
    });
  }

  Var scale(Var a, double s) {
    Tensor out = val(a);
    for (double& v : out.data) v *= s;
    return unary(std::move(out), a, [a, s](Tape& t) { t.accumulate_scaled(a, t.gcur(), s); });
  }

  Var add_scalar(Var a, double s) {
    Tensor out = val(a);
    for (double& v : out.data) v += s;
    return unary(std::move(out), a, [a](Tape& t) { t.accumulate(a, t.gcur()); });
  }

  Var mul_const(Var a, Tensor c) {
    const Tensor& va = val(a);
    if (!va.same_shape(c)) throw std::invalid_argument("mul_const: shape mismatch");
    Tensor out = va;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= c.data[i];
    auto cp = std::make_shared<Tensor>(std::move(c));
    return unary(std::move(out), a, [a, cp](Tape& t) {
      Tensor g = t.gcur();
      for (size_t i = 0; i < g.data.size(); ++i) g.data[i] *= cp->data[i];
      t.accumulate(a, g);
    });
  }

  Var tanh_op(Var a) {
    Tensor out = val(a);
    for (double& v : out.data) v = std::tanh(v);
    Var y = unary(std::move(out), a, {});
    set_back(y, [a, y](Tape& t) {
      const Tensor& yv = t.val(y);
      Tensor g = t.gcur();
      for (size_t i = 0; i < g.data.size(); ++i) g.data[i] *= (1.0 - yv.data[i] * yv.data[i]);
      t.accumulate(a, g);
    });
    return y;
  }

  Var reshape(Var a, std::vector<int> shape) {
    const Tensor& va = val(a);
    if (Tensor::numel_of(shape) != va.numel())
      throw std::invalid_argument("reshape: element count mismatch");
    Tensor out(std::move(shape), va.data);
    auto orig = va.shape;
    return unary(std::move(out), a, [a, orig](Tape& t) {
      Tensor g(orig, t.gcur().data);
      t.accumulate(a, g);
    });
  }

  /// out[i] = map[i] >= 0 ? in[map[i]] : 0. Covers permutes, crops and shifts.
  Var index_select(Var a, std::shared_ptr<const std::vector<int>> map, std::vector<int> out_shape) {
    const Tensor& va = val(a);
    if (static_cast<std::int64_t>(map->size()) != Tensor::numel_of(out_shape))
      throw std::invalid_argument("index_select: map size mismatch");
    Tensor out = Tensor::zeros(std::move(out_shape));
    for (size_t i = 0; i < map->size(); ++i) {
      int src = (*map)[i];
      out.data[i] = src >= 0 ? va.data[static_cast<size_t>(src)] : 0.0;
    }
    return unary(std::move(out), a, [a, map](Tape& t) {
      const Tensor& g = t.gcur();
      Tensor ga = Tensor::zeros(t.val(a).shape);
      for (size_t i = 0; i < map->size(); ++i) {
        int src = (*map)[i];
        if (src >= 0) ga.data[static_cast<size_t>(src)] += g.data[i];
      }
      t.accumulate(a, ga);
    });
  }

  Var concat0(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat0: no parts");
    std::int64_t total = 0;
    for (Var p : parts) total += val(p).numel();
    Tensor out = Tensor::zeros({static_cast<int>(total)});
    std::int64_t off = 0;
    bool needs = false;
    for (Var p : parts) {
      const Tensor& v = val(p);
      std::copy(v.data.begin(), v.data.end(), out.data.begin() + off);
      off += v.numel();
      needs = needs || needs_grad(p);
    }
    auto ps = std::make_shared<std::vector<Var>>(parts);
    return push(std::move(out), needs, [ps](Tape& t) {
      const Tensor& g = t.gcur();
      std::int64_t o = 0;
      for (Var p : *ps) {
        const Tensor& v = t.val(p);
        Tensor gp = Tensor::zeros(v.shape);
        std::copy(g.data.begin() + o, g.data.begin() + o + v.numel(), gp.data.begin());
        t.accumulate(p, gp);
        o += v.numel();
      }
    });
  }

  Var pack_scalars(const std::vector<Var>& xs) {
    Tensor out = Tensor::zeros({static_cast<int>(xs.size())});
    bool needs = false;
    for (size_t i = 0; i < xs.size(); ++i) {
      const Tensor& v = val(xs[i]);
      if (v.numel() != 1) throw std::invalid_argument("pack_scalars: element is not scalar");
      out.data[i] = v.data[0];
      needs = needs || needs_grad(xs[i]);
    }
    auto ps = std::make_shared<std::vector<Var>>(xs);
    return push(std::move(out), needs, [ps](Tape& t) {
      const Tensor& g = t.gcur();
      for (size_t i = 0; i < ps->size(); ++i)
        t.accumulate_scaled((*ps)[i], Tensor::scalar(g.data[i]), 1.0);
    });
  }

  // ---- neural-net ops ------------------------------------------------------

  Var softmax(Var a, int axis) {
    Tensor out = kern::softmax(val(a), axis);
    Var y = unary(std::move(out), a, {});
    set_back(y, [a, y, axis](Tape& t) {
      Tensor ga = Tensor::zeros(t.val(a).shape);
      kern::softmax_backward(t.val(y), axis, t.gcur(), ga);
      t.accumulate(a, ga);
    });
    return y;
  }

  Var matmul(Var a, Var b) {
    Tensor out = kern::matmul(val(a), val(b));
    return binary(std::move(out), a, b, [a, b](Tape& t) {
      const Tensor& g = t.gcur();
      if (t.needs_grad(a)) t.accumulate(a, kern::matmul_transpose_b(g, t.val(b)));
      if (t.needs_grad(b)) t.accumulate(b, kern::matmul_transpose_a(t.val(a), g));
    });
  }

  /// y = x w (+ b broadcast over rows). x: (N,din), w: (din,dout), b: (dout).
  Var linear(Var x, Var w, Var b) {
    const Tensor* bias = b.valid() ? &val(b) : nullptr;
    Tensor out = kern::linear(val(x), val(w), bias);
    bool needs = needs_grad(x) || needs_grad(w) || (b.valid() && needs_grad(b));
    return push(std::move(out), needs, [x, w, b](Tape& t) {
      const Tensor& g = t.gcur();
      if (t.needs_grad(x)) t.accumulate(x, kern::matmul_transpose_b(g, t.val(w)));
      if (t.needs_grad(w)) t.accumulate(w, kern::matmul_transpose_a(t.val(x), g));
      if (b.valid() && t.needs_grad(b)) {
        int n = g.shape[0], m = g.shape[1];
        Tensor gb = Tensor::zeros({m});
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < m; ++j) gb.data[static_cast<size_t>(j)] += g.at(i, j);
        t.accumulate(b, gb);
      }
    });
  }

  Var conv2d(Var x, Var w, Var b, const kern::ConvSpec& cs) {
    const Tensor* bias = b.valid() ? &val(b) : nullptr;
    Tensor out = kern::conv2d(val(x), val(w), bias, cs);
    bool needs = needs_grad(x) || needs_grad(w) || (b.valid() && needs_grad(b));
    return push(std::move(out), needs, [x, w, b, cs](Tape& t) {
      const Tensor& g = t.gcur();
      Tensor gx, gw, gb;
      bool nx = t.needs_grad(x), nw = t.needs_grad(w), nb = b.valid() && t.needs_grad(b);
      if (nx) gx = Tensor::zeros(t.val(x).shape);
      if (nw) gw = Tensor::zeros(t.val(w).shape);
      if (nb) gb = Tensor::zeros(t.val(b).shape);
      kern::conv2d_backward(t.val(x), t.val(w), cs, g, nx ? &gx : nullptr, nw ? &gw : nullptr,
                            nb ? &gb : nullptr);
      if (nx) t.accumulate(x, gx);
      if (nw) t.accumulate(w, gw);
      if (nb) t.accumulate(b, gb);
    });
  }

  Var upsample_nearest(Var x, int fy, int fx) {
    Tensor out = kern::upsample_nearest(val(x), fy, fx);
    return unary(std::move(out), x, [x, fy, fx](Tape& t) {
      Tensor gx = Tensor::zeros(t.val(x).shape);
      kern::upsample_nearest_backward(fy, fx, t.gcur(), gx);
      t.accumulate(x, gx);
    });
  }

  Var gather(Var src, std::shared_ptr<const kern::GatherPlan> plan) {
    Tensor out = kern::gather_apply(val(src), *plan);
    return unary(std::move(out), src, [src, plan](Tape& t) {
      Tensor gs = Tensor::zeros(t.val(src).shape);
      kern::gather_backward(*plan, t.gcur(), gs);
      t.accumulate(src, gs);
    });
  }

  Var vertical_transform(Var f, Var a) {
    Tensor out = kern::vertical_transform(val(f), val(a));
    return binary(std::move(out), f, a, [f, a](Tape& t) {
      Tensor gf, ga;
      bool nf = t.needs_grad(f), na = t.needs_grad(a);
      if (nf) gf = Tensor::zeros(t.val(f).shape);
      if (na) ga = Tensor::zeros(t.val(a).shape);
      kern::vertical_transform_backward(t.val(f), t.val(a), t.gcur(), nf ? &gf : nullptr,
                                        na ? &ga : nullptr);
      if (nf) t.accumulate(f, gf);
      if (na) t.accumulate(a, ga);
    });
  }

  /// Broadcast concat used by context enhancement: ag (Hq,Hk) and fg (C,Hk,W)
  /// produce (Hq, C+1, Hk, W); channel 0 repeats ag over W, channels 1..C
  /// repeat fg over Hq.
  Var cepa_concat(Var ag, Var fg) {
    const Tensor &a = val(ag), &f = val(fg);
    if (a.ndim() != 2 || f.ndim() != 3 || a.shape[1] != f.shape[1])
      throw std::invalid_argument("cepa_concat: A " + a.shape_str() + " vs F " + f.shape_str());
    int hq = a.shape[0], hk = a.shape[1], c = f.shape[0], w = f.shape[2];
    Tensor out = Tensor::zeros({hq, c + 1, hk, w});
    for (int q = 0; q < hq; ++q)
      for (int k = 0; k < hk; ++k) {
        double av = a.at(q, k);
        for (int x = 0; x < w; ++x) out.at(q, 0, k, x) = av;
        for (int ic = 0; ic < c; ++ic)
          for (int x = 0; x < w; ++x) out.at(q, 1 + ic, k, x) = f.at(ic, k, x);
      }
    return binary(std::move(out), ag, fg, [ag, fg](Tape& t) {
      const Tensor& g = t.gcur();
      int hq = g.shape[0], c = g.shape[1] - 1, hk = g.shape[2], w = g.shape[3];
      if (t.needs_grad(ag)) {
        Tensor ga = Tensor::zeros({hq, hk});
        for (int q = 0; q < hq; ++q)
          for (int k = 0; k < hk; ++k) {
            double acc = 0.0;
            for (int x = 0; x < w; ++x) acc += g.at(q, 0, k, x);
            ga.at(q, k) = acc;
          }
        t.accumulate(ag, ga);
      }
      if (t.needs_grad(fg)) {
        Tensor gf = Tensor::zeros({c, hk, w});
        for (int q = 0; q < hq; ++q)
          for (int ic = 0; ic < c; ++ic)
            for (int k = 0; k < hk; ++k)
              for (int x = 0; x < w; ++x) gf.at(ic, k, x) += g.at(q, 1 + ic, k, x);
        t.accumulate(fg, gf);
      }
    });
  }

  /// a (Hq,Hk,W) + b (Hq,Hk) broadcast along the last axis.
  Var add_broadcast_last(Var a, Var b) {
    const Tensor &va = val(a), &vb = val(b);
    if (va.ndim() != 3 || vb.ndim() != 2 || va.shape[0] != vb.shape[0] ||
        va.shape[1] != vb.shape[1])
      throw std::invalid_argument("add_broadcast_last: shape mismatch");
    int hq = va.shape[0], hk = va.shape[1], w = va.shape[2];
    Tensor out = va;
    for (int q = 0; q < hq; ++q)
      for (int k = 0; k < hk; ++k) {
        double bv = vb.at(q, k);
        for (int x = 0; x < w; ++x) out.at(q, k, x) += bv;
      }
    return binary(std::move(out), a, b, [a, b](Tape& t) {
      const Tensor& g = t.gcur();
      if (t.needs_grad(a)) t.accumulate(a, g);
      if (t.needs_grad(b)) {
        int hq = g.shape[0], hk = g.shape[1], w = g.shape[2];
        Tensor gb = Tensor::zeros({hq, hk});
        for (int q = 0; q < hq; ++q)
          for (int k = 0; k < hk; ++k) {
            double acc = 0.0;
            for (int x = 0; x < w; ++x) acc += g.at(q, k, x);
            gb.at(q, k) = acc;
          }
        t.accumulate(b, gb);
      }
    });
  }

  // ---- fused losses and reductions ----------------------------------------

  Var sum_all(Var a) {
    double acc = 0.0;
    for (double v : val(a).data) acc += v;
    return unary(Tensor::scalar(acc), a, [a](Tape& t) {
      double g = t.gcur().data[0];
      Tensor ga = Tensor::full(t.val(a).shape, g);
      t.accumulate(a, ga);
    });
  }

  Var mean_all(Var a) {
    const Tensor& va = val(a);
    double acc = 0.0;
    for (double v : va.data) acc += v;
    double n = static_cast<double>(va.numel());
    return unary(Tensor::scalar(acc / n), a, [a, n](Tape& t) {
      double g = t.gcur().data[0] / n;
      t.accumulate(a, Tensor::full(t.val(a).shape, g));
    });
  }

  /// y = a / ||a||_2 for a 1-D vector.
  Var l2_normalize(Var a) {
    const Tensor& va = val(a);
    double n2 = 0.0;
    for (double v : va.data) n2 += v * v;
    double norm = std::sqrt(std::max(n2, 1e-300));
    Tensor out = va;
    for (double& v : out.data) v /= norm;
    Var y = unary(std::move(out), a, {});
    set_back(y, [a, y, norm](Tape& t) {
      const Tensor& g = t.gcur();
      const Tensor& yv = t.val(y);
      double dot = 0.0;
      for (size_t i = 0; i < g.data.size(); ++i) dot += g.data[i] * yv.data[i];
      Tensor ga = Tensor::zeros(t.val(a).shape);
      for (size_t i = 0; i < ga.data.size(); ++i)
        ga.data[i] = (g.data[i] - yv.data[i] * dot) / norm;
      t.accumulate(a, ga);
    });
    return y;
  }

  /// Cosine similarity of two 1-D vectors; scalar output.
  Var cosine(Var a, Var b) {
    const Tensor &va = val(a), &vb = val(b);
    if (va.numel() != vb.numel()) throw std::invalid_argument("cosine: length mismatch");
    double dot = 0.0, na2 = 0.0, nb2 = 0.0;
    for (size_t i = 0; i < va.data.size(); ++i) {
      dot += va.data[i] * vb.data[i];
      na2 += va.data[i] * va.data[i];
      nb2 += vb.data[i] * vb.data[i];
    }
    double na = std::sqrt(std::max(na2, 1e-300));
    double nb = std::sqrt(std::max(nb2, 1e-300));
    double c = dot / (na * nb);
    return binary(Tensor::scalar(c), a, b, [a, b, na, nb, c](Tape& t) {
      double g = t.gcur().data[0];
      const Tensor &va = t.val(a), &vb = t.val(b);
      if (t.needs_grad(a)) {
        Tensor ga = Tensor::zeros(va.shape);
        for (size_t i = 0; i < ga.data.size(); ++i)
          ga.data[i] = g * (vb.data[i] / (na * nb) - c * va.data[i] / (na * na));
        t.accumulate(a, ga);
      }
      if (t.needs_grad(b)) {
        Tensor gb = Tensor::zeros(vb.shape);
        for (size_t i = 0; i < gb.data.size(); ++i)
          gb.data[i] = g * (va.data[i] / (na * nb) - c * vb.data[i] / (nb * nb));
        t.accumulate(b, gb);
      }
    });
  }

  /// Mean absolute difference against a constant target.
  Var l1_mean(Var a, Tensor target) {
    const Tensor& va = val(a);
    if (!va.same_shape(target)) throw std::invalid_argument("l1_mean: shape mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < va.data.size(); ++i) acc += std::abs(va.data[i] - target.data[i]);
    double n = static_cast<double>(va.numel());
    auto tp = std::make_shared<Tensor>(std::move(target));
    return unary(Tensor::scalar(acc / n), a, [a, tp, n](Tape& t) {
      double g = t.gcur().data[0] / n;
      const Tensor& va = t.val(a);
      Tensor ga = Tensor::zeros(va.shape);
      for (size_t i = 0; i < ga.data.size(); ++i) {
        double d = va.data[i] - tp->data[i];
        ga.data[i] = d > 0 ? g : (d < 0 ? -g : 0.0);
      }
      t.accumulate(a, ga);
    });
  }

  /// InfoNCE over a score vector: -log(exp(s_gt/tau) / sum_i exp(s_i/tau)).
  /// The sum runs over all entries including the ground-truth one.
  Var infonce(Var scores, int gt_index, double tau) {
    const Tensor& s = val(scores);
    if (s.ndim() != 1) throw std::invalid_argument("infonce: scores must be 1-D");
    if (gt_index < 0 || gt_index >= s.shape[0])
      throw std::invalid_argument("infonce: gt index outside volume");
    if (!(tau > 0)) throw std::invalid_argument("infonce: tau must be positive");
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : s.data) mx = std::max(mx, v / tau);
    double lse = 0.0;
    for (double v : s.data) lse += std::exp(v / tau - mx);
    lse = mx + std::log(lse);
    double loss = lse - s.data[static_cast<size_t>(gt_index)] / tau;
    return unary(Tensor::scalar(loss), scores, [scores, gt_index, tau, lse](Tape& t) {
      double g = t.gcur().data[0];
      const Tensor& s = t.val(scores);
      Tensor gs = Tensor::zeros(s.shape);
      for (size_t i = 0; i < s.data.size(); ++i) {
        double p = std::exp(s.data[i] / tau - lse);
        gs.data[i] = g * (p - (static_cast<int>(i) == gt_index ? 1.0 : 0.0)) / tau;
      }
      t.accumulate(scores, gs);
    });
  }

  /// beta * sum_i |pred_i - target_i| (the per-component L2 norm of scalars).
  Var weighted_abs_sum(Var pred, Tensor target, double beta) {
    const Tensor& p = val(pred);
    if (!p.same_shape(target)) throw std::invalid_argument("weighted_abs_sum: shape mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < p.data.size(); ++i) acc += std::abs(p.data[i] - target.data[i]);
    auto tp = std::make_shared<Tensor>(std::move(target));
    return unary(Tensor::scalar(beta * acc), pred, [pred, tp, beta](Tape& t) {
      double g = t.gcur().data[0] * beta;
      const Tensor& p = t.val(pred);
      Tensor gp = Tensor::zeros(p.shape);
      for (size_t i = 0; i < gp.data.size(); ++i) {
        double d = p.data[i] - tp->data[i];
        gp.data[i] = d > 0 ? g : (d < 0 ? -g : 0.0);
      }
      t.accumulate(pred, gp);
    });
  }

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor val;
    Tensor grad;
    bool needs = false;
    std::function<void(Tape&)> back;
  };

  std::vector<Node> nodes_;
  int current_ = -1;  // node whose backward closure is running

  size_t check(Var x) const {
    if (!x.valid() || static_cast<size_t>(x.id) >= nodes_.size())
      throw std::invalid_argument("Var does not belong to this tape");
    return static_cast<size_t>(x.id);
  }

  Tensor& gbuf(int id) {
    auto& n = nodes_[static_cast<size_t>(id)];
    if (n.grad.data.empty()) n.grad = Tensor::zeros(n.val.shape);
    return n.grad;
  }

  /// Gradient of the node currently running its backward closure.
  const Tensor& gcur() const { return nodes_[static_cast<size_t>(current_)].grad; }

  void accumulate(Var target, const Tensor& g) {
    if (!needs_grad(target)) return;
    kern::axpy(gbuf(target.id), g);
  }

  void accumulate_scaled(Var target, const Tensor& g, double s) {
    if (!needs_grad(target)) return;
    Tensor& dst = gbuf(target.id);
    for (size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += s * g.data[i];
  }

  Var push(Tensor val, bool needs, std::function<void(Tape&)> back) {
    Node n;
    n.val = std::move(val);
    n.needs = needs;
    if (needs) n.back = wrap(std::move(back));
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  std::function<void(Tape&)> wrap_at(std::function<void(Tape&)> f, int id) {
    if (!f) return f;
    return [f = std::move(f), id](Tape& t) {
      int prev = t.current_;
      t.current_ = id;
      f(t);
      t.current_ = prev;
    };
  }

  std::function<void(Tape&)> wrap(std::function<void(Tape&)> f) {
    return wrap_at(std::move(f), static_cast<int>(nodes_.size()));
  }

  /// Attaches a backward closure to an already-created node.
  void set_back(Var y, std::function<void(Tape&)> f) {
    auto& n = nodes_[check(y)];
    if (n.needs) n.back = wrap_at(std::move(f), y.id);
  }

  Var unary(Tensor out, Var a, std::function<void(Tape&)> back) {
    return push(std::move(out), needs_grad(a), std::move(back));
  }

  Var binary(Tensor out, Var a, Var b, std::function<void(Tape&)> back) {
    return push(std::move(out), needs_grad(a) || needs_grad(b), std::move(back));
  }
};

}  // namespace vird
