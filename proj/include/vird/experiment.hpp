#pragma once

// End-to-end training (total loss = recon + match + regression), evaluation
// metrics and reports, checkpoint manifests, and static visualization output.

#include <chrono>
#include <iomanip>

#include "vird/posesearch.hpp"
#include "vird/reconstruction.hpp"

namespace vird {

struct LossBreakdown {
  double total = 0, recon = 0, match = 0, reg = 0, origin = 0, cross = 0;

  LossBreakdown& operator+=(const LossBreakdown& o) {
    total += o.total;
    recon += o.recon;
    match += o.match;
    reg += o.reg;
    origin += o.origin;
    cross += o.cross;
    return *this;
  }
  LossBreakdown& operator/=(double n) {
    total /= n;
    recon /= n;
    match /= n;
    reg /= n;
    origin /= n;
    cross /= n;
    return *this;
  }
};

/// One training sample with precomputed tensors and reconstruction target.
struct TrainSample {
  std::string id;
  Tensor sat, grd;      // (3,H,W) in [0,1]
  Tensor polar_target;  // I_s2p at the gt pose, shift-cropped
  Pose gt;
};

inline TrainSample prepare_train_sample(const VirdModel& m, const SamplePair& p) {
  TrainSample s;
  s.id = p.id;
  s.sat = image_to_chw(p.sat);
  s.grd = image_to_chw(p.grd);
  s.polar_target = make_polar_image_target(m, s.sat, p.gt);
  s.gt = p.gt;
  return s;
}

inline std::vector<TrainSample> prepare_train_samples(const VirdModel& m,
                                                      const std::vector<SamplePair>& pairs,
                                                      int jobs = 0) {
  std::vector<TrainSample> out(pairs.size());
  parallel_for(static_cast<std::int64_t>(pairs.size()), jobs, [&](std::int64_t i) {
    out[static_cast<size_t>(i)] = prepare_train_sample(m, pairs[static_cast<size_t>(i)]);
  });
  return out;
}

/// Total loss for one sample on one tape. The caller owns the TapeCtx (so it
/// can collect gradients afterwards). Disabled components contribute exactly
/// zero and skip their forward passes. Residual poses are drawn by the caller
/// so rng order never depends on threading.
inline std::pair<Var, LossBreakdown> total_loss(Tape& tape, VirdModel::TapeCtx& ctx,
                                                const VirdModel& m, const TrainSample& s,
                                                const PoseGrid& grid,
                                                const std::vector<ResidualSample>& residuals) {
  auto ground = m.ground_forward(ctx, s.grd);
  Var f_s = m.sat_features(ctx, s.sat);

  Var zero = tape.constant_scalar(0.0);
  Var l_recon = zero, l_match = zero, l_reg = zero, l_origin = zero, l_cross = zero;

  // view reconstruction at the ground-truth pose
  Var d_gt_full, d_gt_aligned;
  bool need_gt_descriptor = !m.cfg.ablate.recon_origin || !m.cfg.ablate.recon_cross;
  if (need_gt_descriptor) {
    d_gt_full = m.sat_polar_descriptor(ctx, f_s, s.gt.x, s.gt.y);
    d_gt_aligned = m.align_descriptor(tape, d_gt_full, s.gt.theta);
    auto rl = recon_loss(tape, s.grd, s.polar_target, ground.d_g, d_gt_aligned, ctx, m);
    l_origin = rl.l_origin;
    l_cross = rl.l_cross;
    l_recon = rl.l_recon;
  }

  // InfoNCE matching over the training grid
  {
    auto [gt_pos, gt_theta] = grid.nearest(s.gt);
    std::vector<Var> scores;
    scores.reserve(static_cast<size_t>(grid.candidate_count()));
    for (size_t p = 0; p < grid.positions.size(); ++p) {
      Var d_s = m.sat_polar_descriptor(ctx, f_s, grid.positions[p].first, grid.positions[p].second);
      for (int t = 0; t < grid.n_theta; ++t) {
        Var cropped = m.align_descriptor(tape, d_s, grid.thetas[static_cast<size_t>(t)]);
        scores.push_back(tape.cosine(ground.d_g, cropped));
      }
    }
    Var packed = tape.pack_scalars(scores);
    l_match = tape.infonce(packed, grid.flat_index(gt_pos, gt_theta), m.cfg.match.tau);
  }

  // residual regression around the ground truth
  if (!m.cfg.ablate.regression && !residuals.empty()) {
    auto rv = regression_vars(ctx, m);
    Var d_g_norm = tape.l2_normalize(ground.d_g);
    Var acc = zero;
    for (const auto& r : residuals) {
      Var d_s = m.sat_polar_descriptor(ctx, f_s, r.pose.x, r.pose.y);
      Var aligned = m.align_descriptor(tape, d_s, r.pose.theta);
      Var d_s_norm = tape.l2_normalize(aligned);
      Var pred = regress_residual(tape, d_g_norm, d_s_norm, r.pose,
                                  m.cfg.data.search_extent_m / 2.0, rv, m);
      Tensor target({3}, {r.target[0], r.target[1], r.target[2]});
      acc = tape.add(acc, tape.weighted_abs_sum(pred, target, m.cfg.regression.beta));
    }
    l_reg = tape.scale(acc, 1.0 / static_cast<double>(residuals.size()));
  }

  Var total = tape.add(tape.add(l_recon, l_match), l_reg);
  LossBreakdown b;
  b.total = tape.val(total).data[0];
  b.recon = tape.val(l_recon).data[0];
  b.match = tape.val(l_match).data[0];
  b.reg = tape.val(l_reg).data[0];
  b.origin = tape.val(l_origin).data[0];
  b.cross = tape.val(l_cross).data[0];
  return {total, b};
}

// ---------------------------------------------------------------------------
// checkpoints

constexpr int kCheckpointFormatVersion = 1;

inline void save_checkpoint(const VirdModel& m, const std::string& dir, const std::string& stem,
                            int epoch) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  m.save_params((fs::path(dir) / (stem + ".bin")).string());
  nlohmann::ordered_json j;
  j["format_version"] = kCheckpointFormatVersion;
  j["epoch"] = epoch;
  j["seed"] = m.cfg.seed;
  j["blob"] = stem + ".bin";
  j["config"] = to_json(m.cfg);
  std::ofstream out(fs::path(dir) / (stem + ".json"));
  if (!out) throw std::runtime_error("cannot write checkpoint manifest in " + dir);
  out << j.dump(2) << "\n";
}

struct LoadedCheckpoint {
  VirdModel model;
  int epoch = 0;
};

/// Accepts a manifest path or a directory containing checkpoint.json.
inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  namespace fs = std::filesystem;
  fs::path manifest = path;
  if (fs::is_directory(manifest)) manifest /= "checkpoint.json";
  std::ifstream in(manifest);
  if (!in) throw std::runtime_error("cannot open checkpoint manifest: " + manifest.string());
  nlohmann::ordered_json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw std::runtime_error("corrupt checkpoint manifest " + manifest.string() + ": " + e.what());
  }
  if (!j.contains("format_version") || j["format_version"].get<int>() != kCheckpointFormatVersion)
    throw std::runtime_error("checkpoint format_version mismatch: " + manifest.string());
  RunConfig cfg = config_from_json(j["config"]);
  LoadedCheckpoint lc{VirdModel(cfg), j["epoch"].get<int>()};
  lc.model.load_params((manifest.parent_path() / j["blob"].get<std::string>()).string());
  return lc;
}

// ---------------------------------------------------------------------------
// training

class TrainDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Runs the configured number of epochs. Writes checkpoint_epoch_NNN.{bin,json}
/// per epoch (000 = initialization), a final checkpoint.{bin,json}, and
/// loss_log.csv with columns epoch,step,L_total,L_recon,L_match,L_reg.
/// Deterministic in (seed, dataset, config); threading does not change rng use
/// or reduction order.
inline void train(VirdModel& m, const std::vector<SamplePair>& pairs, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  const auto& tc = m.cfg.train;
  if (tc.epochs < 0) throw ValidationError("train.epochs must be >= 0");
  if (tc.batch_size < 1) throw ValidationError("train.batch_size must be >= 1");

  std::ofstream log(fs::path(out_dir) / "loss_log.csv");
  if (!log) throw std::runtime_error("cannot write loss_log.csv in " + out_dir);
  log << "epoch,step,L_total,L_recon,L_match,L_reg\n";
  log << std::setprecision(10);

  auto stem = [](int epoch) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "checkpoint_epoch_%03d", epoch);
    return std::string(buf);
  };
  save_checkpoint(m, out_dir, stem(0), 0);

  if (tc.epochs == 0 || pairs.empty()) {
    save_checkpoint(m, out_dir, "checkpoint", 0);
    return;
  }

  PoseGrid grid = m.train_grid();
  std::vector<TrainSample> samples = prepare_train_samples(m, pairs, tc.jobs);
  Rng shuffle_rng(seed_stream(m.cfg.seed, "train.shuffle"));
  Rng residual_rng(seed_stream(m.cfg.seed, "train.residuals"));

  std::vector<int> order(samples.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    // Fisher-Yates with our deterministic rng
    for (int i = static_cast<int>(order.size()) - 1; i > 0; --i)
      std::swap(order[static_cast<size_t>(i)],
                order[static_cast<size_t>(shuffle_rng.uniform_int(0, i))]);

    int step = 0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(tc.batch_size)) {
      size_t end = std::min(order.size(), start + static_cast<size_t>(tc.batch_size));
      int bsz = static_cast<int>(end - start);

      // residual poses drawn serially so parallelism cannot shift rng order
      std::vector<std::vector<ResidualSample>> residuals(static_cast<size_t>(bsz));
      for (int i = 0; i < bsz; ++i) {
        const auto& s = samples[static_cast<size_t>(order[start + static_cast<size_t>(i)])];
        if (!m.cfg.ablate.regression)
          residuals[static_cast<size_t>(i)] = sample_training_residual_poses(
              s.gt, m.cfg.regression, m.shapes.w_s, residual_rng);
      }

      std::vector<std::vector<Tensor>> sample_grads(static_cast<size_t>(bsz));
      std::vector<LossBreakdown> sample_losses(static_cast<size_t>(bsz));
      parallel_for(bsz, tc.jobs, [&](std::int64_t i) {
        const auto& s = samples[static_cast<size_t>(order[start + static_cast<size_t>(i)])];
        Tape tape;
        VirdModel::TapeCtx ctx = m.start_tape(tape, true);
        auto [total, breakdown] =
            total_loss(tape, ctx, m, s, grid, residuals[static_cast<size_t>(i)]);
        tape.backward(total);
        sample_grads[static_cast<size_t>(i)] = m.params.zero_grads();
        ctx.bind.collect_grads(sample_grads[static_cast<size_t>(i)]);
        sample_losses[static_cast<size_t>(i)] = breakdown;
      });

      LossBreakdown batch;
      auto grads = m.params.zero_grads();
      for (int i = 0; i < bsz; ++i) {
        batch += sample_losses[static_cast<size_t>(i)];
        for (size_t p = 0; p < grads.size(); ++p) {
          const Tensor& g = sample_grads[static_cast<size_t>(i)][p];
          if (g.data.empty()) continue;
          if (grads[p].data.empty())
            grads[p] = g;
          else
            kern::axpy(grads[p], g);
        }
      }
      batch /= bsz;
      for (auto& g : grads)
        for (double& v : g.data) v /= bsz;

      if (!std::isfinite(batch.total)) {
        std::ostringstream os;
        os << "training diverged at epoch " << epoch << " step " << step
           << ": L_total=" << batch.total << " L_recon=" << batch.recon
           << " L_match=" << batch.match << " L_reg=" << batch.reg
           << "; last good checkpoint: " << stem(epoch);
        throw TrainDiverged(os.str());
      }

      m.params.adam_step(grads, tc.lr);
      log << epoch << "," << step << "," << batch.total << "," << batch.recon << ","
          << batch.match << "," << batch.reg << "\n";
      ++step;
    }
    if (!m.params.all_finite())
      throw TrainDiverged("non-finite parameters after epoch " + std::to_string(epoch));
    save_checkpoint(m, out_dir, stem(epoch + 1), epoch + 1);
  }
  save_checkpoint(m, out_dir, "checkpoint", tc.epochs);
}

// ---------------------------------------------------------------------------
// evaluation

struct SampleEval {
  std::string id;
  Pose pred, gt;
  double pos_err_m = 0, orient_err_deg = 0, lat_err_m = 0, lon_err_m = 0;
  double score = 0;
};

struct EvalReport {
  std::vector<SampleEval> samples;
  int grid_g = 0, grid_ntheta = 0;
  bool used_regression = false;
  double mean_pos_err_m = 0, median_pos_err_m = 0;
  double mean_orient_err_deg = 0, median_orient_err_deg = 0;
  double recall_lateral_1m = 0, recall_lateral_5m = 0;
  double recall_longitudinal_1m = 0, recall_longitudinal_5m = 0;
  double recall_orient_1deg = 0, recall_orient_5deg = 0;
  double runtime_sec = 0;
};

inline double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Lateral/longitudinal decomposition of the position error in the gt heading
/// frame (longitudinal along (cos t, -sin t), lateral along (sin t, cos t)).
inline std::pair<double, double> lat_lon_error(const Pose& pred, const Pose& gt) {
  double ex = pred.x - gt.x, ey = pred.y - gt.y;
  double lon = ex * std::cos(gt.theta) - ey * std::sin(gt.theta);
  double lat = ex * std::sin(gt.theta) + ey * std::cos(gt.theta);
  return {lat, lon};
}

/// Full pose estimate for one sample: exhaustive match over the grid, then
/// optional residual regression.
inline SampleEval estimate_pose(const VirdModel& m, const VirdModel::EvalCtx& ectx,
                                const RegressionWeights& rw, const Tensor& sat_chw,
                                const Tensor& grd_chw, const PoseGrid& grid,
                                bool use_regression) {
  auto ground = m.ground_forward(ectx, grd_chw);
  Tensor f_s = m.sat_feature_map(ectx, sat_chw);
  std::vector<Tensor> descs(grid.positions.size());
  for (size_t p = 0; p < grid.positions.size(); ++p)
    descs[p] = m.sat_polar_descriptor(ectx, f_s, grid.positions[p].first, grid.positions[p].second);
  SimilarityVolume vol = similarity_volume(ground.d_g, descs, grid, m.cfg.encoder.c_d);
  MatchResult match = coarse_match(vol, grid);

  SampleEval ev;
  ev.pred = match.pose;
  ev.score = match.score;
  if (use_regression) {
    int pos_idx = match.flat / grid.n_theta;
    Tensor aligned = m.align_descriptor(descs[static_cast<size_t>(pos_idx)], match.pose.theta);
    auto dp = regress_residual(l2_normalized(ground.d_g), l2_normalized(aligned), match.pose,
                               m.cfg.data.search_extent_m / 2.0, rw, m);
    ev.pred = Pose(match.pose.x + dp[0], match.pose.y + dp[1], match.pose.theta + dp[2]);
  }
  return ev;
}

/// Per-sample error fields from a prediction and the ground truth.
inline void fill_errors(SampleEval& ev) {
  ev.pos_err_m = std::hypot(ev.pred.x - ev.gt.x, ev.pred.y - ev.gt.y);
  ev.orient_err_deg = std::abs(wrap_angle(ev.pred.theta - ev.gt.theta)) * 180.0 / kPi;
  auto [lat, lon] = lat_lon_error(ev.pred, ev.gt);
  ev.lat_err_m = lat;
  ev.lon_err_m = lon;
}

/// Aggregates (means, medians, recalls) over the per-sample rows.
inline void finalize_report(EvalReport& rep) {
  std::vector<double> pos, orient;
  int n = static_cast<int>(rep.samples.size());
  for (const auto& s : rep.samples) {
    pos.push_back(s.pos_err_m);
    orient.push_back(s.orient_err_deg);
    rep.recall_lateral_1m += std::abs(s.lat_err_m) <= 1.0;
    rep.recall_lateral_5m += std::abs(s.lat_err_m) <= 5.0;
    rep.recall_longitudinal_1m += std::abs(s.lon_err_m) <= 1.0;
    rep.recall_longitudinal_5m += std::abs(s.lon_err_m) <= 5.0;
    rep.recall_orient_1deg += s.orient_err_deg <= 1.0;
    rep.recall_orient_5deg += s.orient_err_deg <= 5.0;
  }
  if (n > 0) {
    for (double* r : {&rep.recall_lateral_1m, &rep.recall_lateral_5m, &rep.recall_longitudinal_1m,
                      &rep.recall_longitudinal_5m, &rep.recall_orient_1deg,
                      &rep.recall_orient_5deg})
      *r = *r * 100.0 / n;
    rep.mean_pos_err_m = std::accumulate(pos.begin(), pos.end(), 0.0) / n;
    rep.mean_orient_err_deg = std::accumulate(orient.begin(), orient.end(), 0.0) / n;
    rep.median_pos_err_m = median_of(pos);
    rep.median_orient_err_deg = median_of(orient);
  }
}

inline EvalReport evaluate(const VirdModel& m, const std::vector<SamplePair>& pairs,
                           const PoseGrid& grid, bool use_regression, int jobs = 0) {
  if (grid.candidate_count() < 1) throw ValidationError("evaluate: empty candidate grid");
  auto t0 = std::chrono::steady_clock::now();
  auto ectx = m.eval_ctx();
  auto rw = regression_weights(m);

  EvalReport rep;
  rep.grid_g = grid.g;
  rep.grid_ntheta = grid.n_theta;
  rep.used_regression = use_regression;
  rep.samples.resize(pairs.size());
  parallel_for(static_cast<std::int64_t>(pairs.size()), jobs, [&](std::int64_t i) {
    const auto& pair = pairs[static_cast<size_t>(i)];
    SampleEval ev = estimate_pose(m, ectx, rw, image_to_chw(pair.sat), image_to_chw(pair.grd),
                                  grid, use_regression);
    ev.id = pair.id;
    ev.gt = pair.gt;
    fill_errors(ev);
    rep.samples[static_cast<size_t>(i)] = ev;
  });
  finalize_report(rep);
  rep.runtime_sec =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

inline nlohmann::ordered_json report_to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["samples"] = r.samples.size();
  j["grid"] = {{"g", r.grid_g}, {"ntheta", r.grid_ntheta}};
  j["use_regression"] = r.used_regression;
  j["mean_pos_err_m"] = r.mean_pos_err_m;
  j["median_pos_err_m"] = r.median_pos_err_m;
  j["mean_orient_err_deg"] = r.mean_orient_err_deg;
  j["median_orient_err_deg"] = r.median_orient_err_deg;
  j["recall_lateral_1m"] = r.recall_lateral_1m;
  j["recall_lateral_5m"] = r.recall_lateral_5m;
  j["recall_longitudinal_1m"] = r.recall_longitudinal_1m;
  j["recall_longitudinal_5m"] = r.recall_longitudinal_5m;
  j["recall_orient_1deg"] = r.recall_orient_1deg;
  j["recall_orient_5deg"] = r.recall_orient_5deg;
  j["runtime_sec"] = r.runtime_sec;
  return j;
}

inline void write_per_sample_csv(const EvalReport& r, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "id,pred_x_m,pred_y_m,pred_theta_rad,gt_x_m,gt_y_m,gt_theta_rad,pos_err_m,"
         "orient_err_deg,lat_err_m,lon_err_m,score\n";
  char line[512];
  for (const auto& s : r.samples) {
    std::snprintf(line, sizeof(line),
                  "%s,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", s.id.c_str(),
                  s.pred.x, s.pred.y, s.pred.theta, s.gt.x, s.gt.y, s.gt.theta, s.pos_err_m,
                  s.orient_err_deg, s.lat_err_m, s.lon_err_m, s.score);
    out << line;
  }
}

/// Mean L_origin / L_cross over (up to max_n) samples at the current weights;
/// used to track the reconstruction learning signal between checkpoints.
inline std::pair<double, double> mean_recon_losses(const VirdModel& m,
                                                   const std::vector<SamplePair>& pairs,
                                                   size_t max_n = 64) {
  size_t n = std::min(pairs.size(), max_n);
  if (n == 0) return {0.0, 0.0};
  double origin = 0.0, cross = 0.0;
  for (size_t i = 0; i < n; ++i) {
    TrainSample s = prepare_train_sample(m, pairs[i]);
    Tape tape;
    auto ctx = m.start_tape(tape, false);
    Var d_g = m.ground_forward(ctx, s.grd).d_g;
    Var f_s = m.sat_features(ctx, s.sat);
    Var d_s = m.sat_polar_descriptor(ctx, f_s, s.gt.x, s.gt.y);
    Var aligned = m.align_descriptor(tape, d_s, s.gt.theta);
    auto rl = recon_loss(tape, s.grd, s.polar_target, d_g, aligned, ctx, m);
    origin += tape.val(rl.l_origin).data[0];
    cross += tape.val(rl.l_cross).data[0];
  }
  return {origin / static_cast<double>(n), cross / static_cast<double>(n)};
}

// ---------------------------------------------------------------------------
// visualization

/// Normalize-to-[0,255] used by all heatmaps: round(255 * (v-min)/(max-min)),
/// zero when the range is degenerate.
inline std::uint8_t heat_pixel(double v, double mn, double mx) {
  if (!(mx > mn)) return 0;
  return static_cast<std::uint8_t>(std::lround(255.0 * (v - mn) / (mx - mn)));
}

inline void minmax_of(const double* p, size_t n, double& mn, double& mx) {
  mn = std::numeric_limits<double>::infinity();
  mx = -mn;
  for (size_t i = 0; i < n; ++i) {
    mn = std::min(mn, p[i]);
    mx = std::max(mx, p[i]);
  }
}

/// Writes attention heatmaps (per selected shared-axis row), the four
/// reconstruction panels beside their targets, and a satellite overlay with
/// gt (green) and predicted (red) pose arrows. Deterministic filenames:
/// <id>_attn_<row>.png, <id>_recon_<i2j>.png, <id>_pose.png.
inline std::vector<std::string> emit_visualizations(const VirdModel& m, const SamplePair& sample,
                                                    const std::string& outdir,
                                                    std::vector<int> rows = {}) {
  namespace fs = std::filesystem;
  fs::create_directories(outdir);
  std::vector<std::string> written;
  Tensor sat_chw = image_to_chw(sample.sat);
  Tensor grd_chw = image_to_chw(sample.grd);
  auto ectx = m.eval_ctx();
  auto ground = m.ground_forward(ectx, grd_chw);

  // attention heatmaps: rows 0/1 are A_s2p and A_g at the selected shared-axis
  // row (H_K pixels wide), the block below is the enhanced A_g' slice.
  if (!m.cfg.ablate.cepa) {
    int hq = m.shapes.h_q, hk = m.shapes.h_k, wg = m.shapes.w_g;
    if (rows.empty())
      for (int r = 0; r < hq; ++r) rows.push_back(r);
    for (int r : rows) {
      if (r < 0 || r >= hq) throw std::invalid_argument("emit_visualizations: bad attention row");
      bool has_enh = ground.a_gp.numel() > 0;
      int width = std::max(hk, wg), height = 2 + (has_enh ? hk : 0);
      Image im = Image::create(width, height, 1);
      std::map<std::string, std::string> meta;
      char buf[64];
      auto annotate = [&](const char* key, double mn, double mx) {
        std::snprintf(buf, sizeof(buf), "%.17g", mn);
        meta[std::string(key) + "_min"] = buf;
        std::snprintf(buf, sizeof(buf), "%.17g", mx);
        meta[std::string(key) + "_max"] = buf;
      };
      double mn, mx;
      minmax_of(&ectx.a_s2p.data[static_cast<size_t>(r) * hk], static_cast<size_t>(hk), mn, mx);
      annotate("as2p", mn, mx);
      for (int k = 0; k < hk; ++k)
        im.at(k, 0, 0) = heat_pixel(ectx.a_s2p.at(r, k), mn, mx);
      minmax_of(&ectx.a_g.data[static_cast<size_t>(r) * hk], static_cast<size_t>(hk), mn, mx);
      annotate("ag", mn, mx);
      for (int k = 0; k < hk; ++k) im.at(k, 1, 0) = heat_pixel(ectx.a_g.at(r, k), mn, mx);
      if (has_enh) {
        minmax_of(&ground.a_gp.data[static_cast<size_t>(r) * hk * wg],
                  static_cast<size_t>(hk) * wg, mn, mx);
        annotate("agp", mn, mx);
        for (int k = 0; k < hk; ++k)
          for (int x = 0; x < wg; ++x)
            im.at(x, 2 + k, 0) = heat_pixel(ground.a_gp.at(r, k, x), mn, mx);
      }
      std::string path = (fs::path(outdir) / (sample.id + "_attn_" + std::to_string(r) + ".png")).string();
      write_png(path, im, meta);
      written.push_back(path);
    }
  }

  // reconstructions beside their targets
  {
    Tensor polar_target = make_polar_image_target(m, sat_chw, sample.gt);
    Tape tape;
    auto ctx = m.start_tape(tape, false);
    Var d_g = m.ground_forward(ctx, grd_chw).d_g;
    Var f_s = m.sat_features(ctx, sat_chw);
    Var d_s = m.align_descriptor(tape, m.sat_polar_descriptor(ctx, f_s, sample.gt.x, sample.gt.y),
                                 sample.gt.theta);
    struct Panel {
      const char* name;
      Var desc;
      const Tensor* target;
    };
    std::vector<Panel> panels = {{"g2g", d_g, &grd_chw},
                                 {"s2s", d_s, &polar_target},
                                 {"s2g", d_s, &grd_chw},
                                 {"g2s", d_g, &polar_target}};
    for (const auto& p : panels) {
      Var img = decode_view(tape, p.desc, decoder_vars(ctx, m, p.name), m);
      Image target = chw_to_image(*p.target);
      Image recon = chw_to_image(tape.val(img));
      Image side = Image::create(target.width * 2, target.height, 3);
      for (int y = 0; y < target.height; ++y)
        for (int x = 0; x < target.width; ++x) {
          for (int c = 0; c < 3; ++c) {
            side.at(x, y, c) = target.at(x, y, c);
            side.at(x + target.width, y, c) = recon.at(x, y, c);
          }
        }
      std::string path =
          (fs::path(outdir) / (sample.id + "_recon_" + p.name + ".png")).string();
      write_png(path, side);
      written.push_back(path);
    }
  }

  // pose overlay: gt arrow green, predicted arrow red
  {
    PoseGrid grid = m.eval_grid(m.cfg.eval.grid, m.cfg.eval.ntheta);
    auto rw = regression_weights(m);
    SampleEval ev = estimate_pose(m, ectx, rw, sat_chw, grd_chw, grid,
                                  m.cfg.eval.use_regression && !m.cfg.ablate.regression);
    Image im = sample.sat;
    auto draw_arrow = [&](const Pose& p, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
      auto [u, v] = pose_to_pixel(p, m.sat_frame());
      double du = std::cos(p.theta), dv = std::sin(p.theta);  // pixel-space heading
      for (double t = 0.0; t <= 6.0; t += 0.25) {
        int px = static_cast<int>(std::lround(u + t * du));
        int py = static_cast<int>(std::lround(v + t * dv));
        if (px >= 0 && px < im.width && py >= 0 && py < im.height) im.set_rgb(px, py, r, g, b);
      }
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          int px = static_cast<int>(std::lround(u)) + dx;
          int py = static_cast<int>(std::lround(v)) + dy;
          if (px >= 0 && px < im.width && py >= 0 && py < im.height) im.set_rgb(px, py, r, g, b);
        }
    };
    draw_arrow(sample.gt, 40, 220, 40);
    draw_arrow(ev.pred, 230, 40, 40);
    std::string path = (fs::path(outdir) / (sample.id + "_pose.png")).string();
    write_png(path, im);
    written.push_back(path);
  }
  return written;
}

}  // namespace vird
