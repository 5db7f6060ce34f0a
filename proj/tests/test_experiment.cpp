#include <catch2/catch_amalgamated.hpp>

#include "test_util.hpp"

using Catch::Approx;

using namespace vird;

namespace {

std::vector<SamplePair> tiny_dataset(const RunConfig& cfg, int count, std::uint64_t seed) {
  return make_dataset(seed, count, cfg.data, 2);
}

LossBreakdown sample_loss(const VirdModel& m, const TrainSample& s,
                          const std::vector<ResidualSample>& residuals) {
  Tape tape;
  auto ctx = m.start_tape(tape, false);
  PoseGrid grid = m.train_grid();
  auto [total, bd] = total_loss(tape, ctx, m, s, grid, residuals);
  (void)total;
  return bd;
}

}  // namespace

TEST_CASE("total loss composition and ablation flags") {
  RunConfig cfg = vt::tiny_config();
  auto pairs = tiny_dataset(cfg, 1, 11);

  VirdModel full(cfg);
  TrainSample s = prepare_train_sample(full, pairs[0]);
  Rng rng(3);
  auto residuals =
      sample_training_residual_poses(s.gt, cfg.regression, full.shapes.w_s, rng);
  LossBreakdown base = sample_loss(full, s, residuals);

  SECTION("components are nonnegative and sum to the total") {
    CHECK(base.total >= 0.0);
    CHECK(base.recon >= 0.0);
    CHECK(base.match >= 0.0);
    CHECK(base.reg >= 0.0);
    CHECK(std::abs(base.total - (base.recon + base.match + base.reg)) < 1e-6);
    CHECK(std::abs(base.recon - (cfg.recon.alpha1 * base.origin +
                                 cfg.recon.alpha2 * base.cross)) < 1e-6);
  }
  SECTION("matching-only configuration leaves exactly L_match") {
    RunConfig c2 = cfg;
    c2.ablate.recon_origin = true;
    c2.ablate.recon_cross = true;
    c2.ablate.regression = true;
    VirdModel m2(c2);
    LossBreakdown only = sample_loss(m2, s, {});
    CHECK(only.recon == 0.0);
    CHECK(only.reg == 0.0);
    CHECK(only.total == only.match);
    CHECK(only.match == Approx(base.match).epsilon(1e-12));
  }
  SECTION("disabling a component subtracts exactly its contribution") {
    RunConfig c2 = cfg;
    c2.ablate.regression = true;
    VirdModel m2(c2);
    LossBreakdown noreg = sample_loss(m2, s, {});
    CHECK(noreg.reg == 0.0);
    CHECK(std::abs((base.total - base.reg) - noreg.total) < 1e-6);

    RunConfig c3 = cfg;
    c3.ablate.recon_cross = true;
    VirdModel m3(c3);
    LossBreakdown nocross = sample_loss(m3, s, residuals);
    CHECK(nocross.cross == 0.0);
    CHECK(nocross.origin == Approx(base.origin).epsilon(1e-12));
    CHECK(std::abs((base.total - cfg.recon.alpha2 * base.cross) - nocross.total) < 1e-6);
  }
  SECTION("every ablation flag combination yields a runnable model") {
    for (int mask = 0; mask < 32; ++mask) {
      RunConfig c2 = cfg;
      c2.ablate.cepa = mask & 1;
      c2.ablate.ce = mask & 2;
      c2.ablate.recon_origin = mask & 4;
      c2.ablate.recon_cross = mask & 8;
      c2.ablate.regression = mask & 16;
      VirdModel m2(c2);
      TrainSample s2 = prepare_train_sample(m2, pairs[0]);
      LossBreakdown bd = sample_loss(m2, s2, c2.ablate.regression ? std::vector<ResidualSample>{}
                                                                  : residuals);
      CHECK(std::isfinite(bd.total));
    }
  }
}

TEST_CASE("training loop basics") {
  RunConfig cfg = vt::tiny_config();
  cfg.train.jobs = 2;
  auto dir = std::filesystem::temp_directory_path() / "vird_train_test";

  SECTION("zero epochs writes the initialization checkpoint and an empty log") {
    std::filesystem::remove_all(dir);
    cfg.train.epochs = 0;
    VirdModel m(cfg);
    auto pairs = tiny_dataset(cfg, 2, 5);
    train(m, pairs, dir.string());
    CHECK(std::filesystem::exists(dir / "checkpoint.bin"));
    CHECK(std::filesystem::exists(dir / "checkpoint_epoch_000.bin"));
    std::ifstream log(dir / "loss_log.csv");
    std::string line;
    std::getline(log, line);
    CHECK(line == "epoch,step,L_total,L_recon,L_match,L_reg");
    CHECK_FALSE(std::getline(log, line));
  }
  SECTION("two runs with the same seed produce identical parameters") {
    cfg.train.epochs = 2;
    auto pairs = tiny_dataset(cfg, 6, 5);
    auto run = [&](const std::string& sub, int jobs) {
      RunConfig c2 = cfg;
      c2.train.jobs = jobs;
      VirdModel m(c2);
      auto d = std::filesystem::temp_directory_path() / sub;
      std::filesystem::remove_all(d);
      train(m, pairs, d.string());
      return m;
    };
    VirdModel a = run("vird_det_a", 1);
    VirdModel b = run("vird_det_b", 2);
    for (int i = 0; i < a.params.count(); ++i)
      CHECK(a.params.value(i).data == b.params.value(i).data);
  }
  SECTION("loss decreases over a short run") {
    std::filesystem::remove_all(dir);
    cfg.train.epochs = 6;
    cfg.train.lr = 1e-3;
    cfg.seed = 2;
    VirdModel m(cfg);
    auto pairs = tiny_dataset(cfg, 12, 6);
    train(m, pairs, dir.string());
    std::ifstream log(dir / "loss_log.csv");
    std::string line;
    std::getline(log, line);  // header
    std::map<int, std::pair<double, int>> per_epoch;
    while (std::getline(log, line)) {
      std::istringstream ls(line);
      std::string e, st, lt;
      std::getline(ls, e, ',');
      std::getline(ls, st, ',');
      std::getline(ls, lt, ',');
      per_epoch[std::stoi(e)].first += std::stod(lt);
      per_epoch[std::stoi(e)].second += 1;
    }
    REQUIRE(per_epoch.count(0));
    REQUIRE(per_epoch.count(5));
    double e0 = per_epoch[0].first / per_epoch[0].second;
    double e5 = per_epoch[5].first / per_epoch[5].second;
    CHECK(e5 < e0);
  }
}

TEST_CASE("checkpoint round trip reproduces evaluation bit for bit") {
  RunConfig cfg = vt::tiny_config();
  cfg.train.epochs = 1;
  VirdModel m(cfg);
  auto pairs = tiny_dataset(cfg, 4, 9);
  auto dir = std::filesystem::temp_directory_path() / "vird_ckpt_test";
  std::filesystem::remove_all(dir);
  train(m, pairs, dir.string());

  auto loaded = load_checkpoint((dir / "checkpoint.json").string());
  for (int i = 0; i < m.params.count(); ++i)
    REQUIRE(loaded.model.params.value(i).data == m.params.value(i).data);

  PoseGrid grid = m.eval_grid(4, 16);
  EvalReport r1 = evaluate(m, pairs, grid, true, 1);
  EvalReport r2 = evaluate(loaded.model, pairs, grid, true, 1);
  auto j1 = report_to_json(r1), j2 = report_to_json(r2);
  j1.erase("runtime_sec");
  j2.erase("runtime_sec");
  CHECK(j1.dump() == j2.dump());

  SECTION("evaluation does not mutate parameters") {
    std::vector<std::vector<double>> before;
    for (int i = 0; i < m.params.count(); ++i) before.push_back(m.params.value(i).data);
    evaluate(m, pairs, grid, true, 2);
    for (int i = 0; i < m.params.count(); ++i) CHECK(m.params.value(i).data == before[static_cast<size_t>(i)]);
  }
}

TEST_CASE("error metrics") {
  SECTION("wrapped orientation error") {
    SampleEval ev;
    ev.gt = Pose(0, 0, 0);
    ev.pred = Pose(0, 0, 350.0 * kPi / 180.0);
    fill_errors(ev);
    CHECK(ev.orient_err_deg == Approx(10.0));
    CHECK(ev.orient_err_deg >= 0.0);
    CHECK(ev.orient_err_deg <= 180.0);
  }
  SECTION("lateral/longitudinal decomposition matches a rotation oracle") {
    Rng rng(4);
    for (int i = 0; i < 100; ++i) {
      Pose gt(rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-kPi, kPi));
      double lon_true = rng.uniform(-3, 3), lat_true = rng.uniform(-3, 3);
      // displace along heading (cos t, -sin t) and lateral (sin t, cos t)
      double hx = std::cos(gt.theta), hy = -std::sin(gt.theta);
      double lx = std::sin(gt.theta), ly = std::cos(gt.theta);
      Pose pred(gt.x + lon_true * hx + lat_true * lx, gt.y + lon_true * hy + lat_true * ly,
                gt.theta);
      auto [lat, lon] = lat_lon_error(pred, gt);
      CHECK(lat == Approx(lat_true).margin(1e-9));
      CHECK(lon == Approx(lon_true).margin(1e-9));
      SampleEval ev;
      ev.gt = gt;
      ev.pred = pred;
      fill_errors(ev);
      CHECK(std::hypot(ev.lat_err_m, ev.lon_err_m) == Approx(ev.pos_err_m).margin(1e-9));
    }
  }
  SECTION("perfect predictions give zero errors and full recalls") {
    EvalReport rep;
    Rng rng(5);
    for (int i = 0; i < 10; ++i) {
      SampleEval ev;
      ev.gt = Pose(rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-kPi, kPi));
      ev.pred = ev.gt;
      fill_errors(ev);
      rep.samples.push_back(ev);
    }
    finalize_report(rep);
    CHECK(rep.mean_pos_err_m == 0.0);
    CHECK(rep.median_orient_err_deg == 0.0);
    CHECK(rep.recall_lateral_1m == 100.0);
    CHECK(rep.recall_longitudinal_5m == 100.0);
    CHECK(rep.recall_orient_1deg == 100.0);
  }
}

TEST_CASE("visualization files and heatmap normalization oracle") {
  RunConfig cfg = vt::tiny_config();
  VirdModel m(cfg);
  auto pairs = tiny_dataset(cfg, 1, 13);
  auto dir = std::filesystem::temp_directory_path() / "vird_viz_test";
  std::filesystem::remove_all(dir);

  auto files = emit_visualizations(m, pairs[0], dir.string());
  const std::string id = pairs[0].id;
  for (const char* suffix : {"_recon_g2g.png", "_recon_s2s.png", "_recon_s2g.png",
                             "_recon_g2s.png", "_pose.png", "_attn_0.png"})
    CHECK(std::filesystem::exists(dir / (id + suffix)));
  CHECK(files.size() >= 6);

  // heatmap pixels equal the normalize-to-[0,255] oracle of the raw weights
  auto ectx = m.eval_ctx();
  auto ground = m.ground_forward(ectx, image_to_chw(pairs[0].grd));
  PngFile attn = read_png((dir / (id + "_attn_0.png")).string());
  int hk = m.shapes.h_k, wg = m.shapes.w_g;
  REQUIRE(attn.image.height == 2 + hk);

  double mn, mx;
  minmax_of(&ectx.a_s2p.data[0], static_cast<size_t>(hk), mn, mx);
  for (int k = 0; k < hk; ++k)
    CHECK(attn.image.at(k, 0, 0) == heat_pixel(ectx.a_s2p.at(0, k), mn, mx));
  CHECK(attn.text.at("as2p_min") == ([&] {
          char b[64];
          std::snprintf(b, sizeof(b), "%.17g", mn);
          return std::string(b);
        }()));
  minmax_of(&ground.a_gp.data[0], static_cast<size_t>(hk) * wg, mn, mx);
  for (int k = 0; k < hk; ++k)
    for (int x = 0; x < wg; ++x)
      CHECK(attn.image.at(x, 2 + k, 0) == heat_pixel(ground.a_gp.at(0, k, x), mn, mx));

  // recon panels are target | reconstruction side by side
  PngFile recon = read_png((dir / (id + "_recon_g2g.png")).string());
  CHECK(recon.image.width == pairs[0].grd.width * 2);
  CHECK(recon.image.height == pairs[0].grd.height);
  for (int y = 0; y < pairs[0].grd.height; ++y)
    for (int x = 0; x < pairs[0].grd.width; ++x)
      CHECK(recon.image.at(x, y, 0) == pairs[0].grd.at(x, y, 0));
}

TEST_CASE("mean recon losses drop between checkpoints is measurable") {
  RunConfig cfg = vt::tiny_config();
  VirdModel m(cfg);
  auto pairs = tiny_dataset(cfg, 3, 21);
  auto [origin, cross] = mean_recon_losses(m, pairs, 3);
  CHECK(origin > 0.0);
  CHECK(cross > 0.0);
}
