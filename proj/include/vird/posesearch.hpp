#pragma once

// Exhaustive similarity over candidate poses, InfoNCE matching loss, coarse
// argmax selection, the residual regression head, and regression training
// pose sampling.

#include <array>

#include "vird/model.hpp"

namespace vird {

/// Scores over a G x G x N_theta candidate set, flat index p * n_theta + t
/// with p = iy * G + ix (the PoseGrid position order).
struct SimilarityVolume {
  int g = 1;
  int n_theta = 1;
  std::vector<double> scores;

  int flat(int pos_idx, int theta_idx) const { return pos_idx * n_theta + theta_idx; }
  double at(int pos_idx, int theta_idx) const {
    return scores[static_cast<size_t>(flat(pos_idx, theta_idx))];
  }
};

/// Cosine similarity between the ground descriptor and every shift-cropped
/// satellite descriptor. Plain sequential arithmetic per candidate, so the
/// volume matches a naive triple-loop oracle bitwise.
inline SimilarityVolume similarity_volume(const Tensor& d_g,
                                          const std::vector<Tensor>& position_descriptors,
                                          const PoseGrid& grid, int c_d, int jobs = 1) {
  if (position_descriptors.size() != grid.positions.size())
    throw std::invalid_argument("similarity_volume: grid/descriptor count mismatch");
  const int k_g = static_cast<int>(d_g.numel());
  if (k_g % c_d != 0) throw std::invalid_argument("similarity_volume: K_g not divisible by C_d");
  const int w_g = k_g / c_d;

  SimilarityVolume vol;
  vol.g = grid.g;
  vol.n_theta = grid.n_theta;
  vol.scores.assign(static_cast<size_t>(grid.candidate_count()), 0.0);

  double na2 = 0.0;
  for (double v : d_g.data) na2 += v * v;
  const double na = std::sqrt(na2);

  parallel_for(static_cast<std::int64_t>(grid.positions.size()), jobs, [&](std::int64_t p) {
    const Tensor& d_s = position_descriptors[static_cast<size_t>(p)];
    const int w_s = static_cast<int>(d_s.numel()) / c_d;
    for (int t = 0; t < grid.n_theta; ++t) {
      auto cols = shift_crop_columns(w_s, w_g, grid.thetas[static_cast<size_t>(t)]);
      double dot = 0.0, nb2 = 0.0;
      for (int j = 0; j < w_g; ++j) {
        const double* blk = &d_s.data[static_cast<size_t>(cols[static_cast<size_t>(j)]) * c_d];
        const double* ga = &d_g.data[static_cast<size_t>(j) * c_d];
        for (int k = 0; k < c_d; ++k) {
          dot += ga[k] * blk[k];
          nb2 += blk[k] * blk[k];
        }
      }
      vol.scores[static_cast<size_t>(vol.flat(static_cast<int>(p), t))] =
          dot / (na * std::sqrt(nb2));
    }
  });
  return vol;
}

struct MatchResult {
  Pose pose;
  int flat = 0;
  double score = 0.0;
};

/// Argmax candidate; ties break to the smallest flat index.
inline MatchResult coarse_match(const SimilarityVolume& vol, const PoseGrid& grid) {
  if (vol.scores.empty()) throw std::invalid_argument("coarse_match: empty volume");
  if (static_cast<int>(vol.scores.size()) != grid.candidate_count())
    throw std::invalid_argument("coarse_match: volume does not match grid");
  int best = 0;
  for (int i = 1; i < static_cast<int>(vol.scores.size()); ++i)
    if (vol.scores[static_cast<size_t>(i)] > vol.scores[static_cast<size_t>(best)]) best = i;
  return {grid.candidate_flat(best), best, vol.scores[static_cast<size_t>(best)]};
}

/// InfoNCE over a full score vector (ground truth included in the sum).
inline double infonce_loss(const std::vector<double>& scores, int gt_index, double tau) {
  if (gt_index < 0 || gt_index >= static_cast<int>(scores.size()))
    throw std::invalid_argument("infonce_loss: gt index outside volume");
  if (!(tau > 0)) throw std::invalid_argument("infonce_loss: tau must be positive");
  double mx = -std::numeric_limits<double>::infinity();
  for (double s : scores) mx = std::max(mx, s / tau);
  double lse = 0.0;
  for (double s : scores) lse += std::exp(s / tau - mx);
  return mx + std::log(lse) - scores[static_cast<size_t>(gt_index)] / tau;
}

/// beta * (|dx - dx*| + |dy - dy*| + |dt - dt*|); angles pre-wrapped.
inline double regression_loss(const std::array<double, 3>& dp, const std::array<double, 3>& dp_star,
                              double beta) {
  return beta * (std::abs(dp[0] - dp_star[0]) + std::abs(dp[1] - dp_star[1]) +
                 std::abs(dp[2] - dp_star[2]));
}

// ---------------------------------------------------------------------------
// residual regression head

struct RegressionVars {
  std::vector<std::pair<Var, Var>> convs;
  Var fc0_w, fc0_b, fc1_w, fc1_b;
};

inline RegressionVars regression_vars(VirdModel::TapeCtx& ctx, const VirdModel& m) {
  RegressionVars r;
  for (size_t i = 0; i < m.cfg.regression.conv_widths.size(); ++i)
    r.convs.emplace_back(ctx.bind("reg.conv" + std::to_string(i) + ".w"),
                         ctx.bind("reg.conv" + std::to_string(i) + ".b"));
  r.fc0_w = ctx.bind("reg.fc0.w");
  r.fc0_b = ctx.bind("reg.fc0.b");
  r.fc1_w = ctx.bind("reg.fc1.w");
  r.fc1_b = ctx.bind("reg.fc1.b");
  return r;
}

/// Descriptor blocks (w * c_d + k) rearranged to a (C_d, 1, W_g) map for the
/// width-axis 1-D convolutions.
inline std::shared_ptr<std::vector<int>> descriptor_to_channels_map(int c_d, int w_g) {
  auto map = std::make_shared<std::vector<int>>(static_cast<size_t>(c_d) * w_g);
  for (int k = 0; k < c_d; ++k)
    for (int x = 0; x < w_g; ++x) (*map)[static_cast<size_t>(k) * w_g + x] = x * c_d + k;
  return map;
}

/// Normalized coarse-pose features: x and y scaled by the half search extent,
/// theta as (cos, sin).
inline Tensor pose_features(const Pose& p_m, double half_extent) {
  return Tensor({4}, {p_m.x / half_extent, p_m.y / half_extent, std::cos(p_m.theta),
                      std::sin(p_m.theta)});
}

/// Predicts (dx, dy, dtheta) from the normalized descriptor difference plus
/// the coarse pose; tanh-bounded and scaled to the configured search ranges.
/// The difference of unit vectors has ~1/sqrt(K_g) per-component magnitude,
/// so it is rescaled by sqrt(K_g) before the convolutions.
inline Var regress_residual(Tape& t, Var d_g_norm, Var d_s_norm, const Pose& p_m,
                            double half_extent, const RegressionVars& rv, const VirdModel& m) {
  const auto& rc = m.cfg.regression;
  int c_d = m.cfg.encoder.c_d, w_g = m.shapes.w_g;
  if (t.val(d_g_norm).numel() != m.shapes.k_g || t.val(d_s_norm).numel() != m.shapes.k_g)
    throw std::invalid_argument("regress_residual: descriptor length mismatch");
  Var diff = t.scale(t.sub(d_g_norm, d_s_norm), std::sqrt(static_cast<double>(m.shapes.k_g)));
  Var x = t.index_select(diff, descriptor_to_channels_map(c_d, w_g), {c_d, 1, w_g});
  kern::ConvSpec cs;  // stride 1, zero padding, 1x3 kernels
  for (const auto& [w, b] : rv.convs) x = t.tanh_op(t.conv2d(x, w, b, cs));
  int flat = static_cast<int>(t.val(x).numel());
  x = t.reshape(x, {flat});
  Var feats = t.concat0({x, t.constant(pose_features(p_m, half_extent))});
  Var h = t.tanh_op(t.linear(t.reshape(feats, {1, flat + 4}), rv.fc0_w, rv.fc0_b));
  Var out = t.linear(h, rv.fc1_w, rv.fc1_b);
  out = t.tanh_op(t.reshape(out, {3}));
  return t.mul_const(out, Tensor({3}, {rc.dx_max_m, rc.dy_max_m, rc.dtheta_max_rad}));
}

struct RegressionWeights {
  std::vector<std::pair<const Tensor*, const Tensor*>> convs;
  const Tensor *fc0_w, *fc0_b, *fc1_w, *fc1_b;
};

inline RegressionWeights regression_weights(const VirdModel& m) {
  RegressionWeights r;
  for (size_t i = 0; i < m.cfg.regression.conv_widths.size(); ++i)
    r.convs.emplace_back(&m.params.value("reg.conv" + std::to_string(i) + ".w"),
                         &m.params.value("reg.conv" + std::to_string(i) + ".b"));
  r.fc0_w = &m.params.value("reg.fc0.w");
  r.fc0_b = &m.params.value("reg.fc0.b");
  r.fc1_w = &m.params.value("reg.fc1.w");
  r.fc1_b = &m.params.value("reg.fc1.b");
  return r;
}

inline Tensor l2_normalized(const Tensor& v) {
  double n2 = 0.0;
  for (double x : v.data) n2 += x * x;
  double n = std::sqrt(std::max(n2, 1e-300));
  Tensor out = v;
  for (double& x : out.data) x /= n;
  return out;
}

inline std::array<double, 3> regress_residual(const Tensor& d_g_norm, const Tensor& d_s_norm,
                                              const Pose& p_m, double half_extent,
                                              const RegressionWeights& rw, const VirdModel& m) {
  int c_d = m.cfg.encoder.c_d, w_g = m.shapes.w_g;
  double rescale = std::sqrt(static_cast<double>(m.shapes.k_g));
  Tensor diff = d_g_norm;
  for (size_t i = 0; i < diff.data.size(); ++i)
    diff.data[i] = (diff.data[i] - d_s_norm.data[i]) * rescale;
  auto map = descriptor_to_channels_map(c_d, w_g);
  Tensor x = Tensor::zeros({c_d, 1, w_g});
  for (size_t i = 0; i < map->size(); ++i) x.data[i] = diff.data[static_cast<size_t>((*map)[i])];
  kern::ConvSpec cs;
  for (const auto& [w, b] : rw.convs) {
    x = kern::conv2d(x, *w, b, cs);
    for (double& v : x.data) v = std::tanh(v);
  }
  Tensor pf = pose_features(p_m, half_extent);
  Tensor feats = Tensor::zeros({1, static_cast<int>(x.numel()) + 4});
  std::copy(x.data.begin(), x.data.end(), feats.data.begin());
  std::copy(pf.data.begin(), pf.data.end(), feats.data.begin() + x.numel());
  Tensor h = kern::linear(feats, *rw.fc0_w, rw.fc0_b);
  for (double& v : h.data) v = std::tanh(v);
  Tensor out = kern::linear(h, *rw.fc1_w, rw.fc1_b);
  const auto& rc = m.cfg.regression;
  return {std::tanh(out.data[0]) * rc.dx_max_m, std::tanh(out.data[1]) * rc.dy_max_m,
          std::tanh(out.data[2]) * rc.dtheta_max_rad};
}

// ---------------------------------------------------------------------------
// regression training sampling

struct ResidualSample {
  Pose pose;                       // sampled coarse pose (orientation snapped)
  std::array<double, 3> target{};  // ground-truth residual p* - pose
};

/// N_r coarse poses uniform in the box p* +- (dx_max, dy_max, dtheta_max);
/// orientations snapped to integral-shift angles, residuals recorded.
/// Samples are drawn as antithetic pairs (u, -u): each is still uniform over
/// the box, and the mirrored targets give the L1 regression loss a restoring
/// force toward the conditional median instead of letting a signal-free
/// output random-walk into tanh saturation.
inline std::vector<ResidualSample> sample_training_residual_poses(const Pose& p_star,
                                                                  const RegressionParams& rc,
                                                                  int w_s, Rng& rng) {
  if (rc.n_r < 1) throw std::invalid_argument("sample_training_residual_poses: N_r must be >= 1");
  std::vector<ResidualSample> out;
  out.reserve(static_cast<size_t>(rc.n_r));
  double dx = 0, dy = 0, dt = 0;
  for (int i = 0; i < rc.n_r; ++i) {
    if (i % 2 == 0) {
      dx = rng.uniform(-rc.dx_max_m, rc.dx_max_m);
      dy = rng.uniform(-rc.dy_max_m, rc.dy_max_m);
      dt = rng.uniform(-rc.dtheta_max_rad, rc.dtheta_max_rad);
    } else {
      dx = -dx;
      dy = -dy;
      dt = -dt;
    }
    Pose sampled(p_star.x + dx, p_star.y + dy, snap_theta(p_star.theta + dt, w_s));
    ResidualSample s;
    s.pose = sampled;
    s.target = {p_star.x - sampled.x, p_star.y - sampled.y,
                wrap_angle(p_star.theta - sampled.theta)};
    out.push_back(s);
  }
  return out;
}

}  // namespace vird
