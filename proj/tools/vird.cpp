// Command-line entry point: dataset generation, training, evaluation,
// single-pair inference, and visualization.
//
// Exit codes: 0 success, 2 usage/validation error, 3 runtime failure.

#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>

#include "vird/vird.hpp"

namespace {

using vird::RunConfig;

struct ConfigCli {
  std::string config_file;
  std::vector<std::string> sets;
};

void add_config_options(CLI::App* cmd, ConfigCli& cc) {
  cmd->add_option("--config", cc.config_file, "JSON config file merged over defaults");
  cmd->add_option("--set", cc.sets, "dotted-path override, e.g. --set train.epochs=20")
      ->take_all();
}

/// defaults <- VIRD_SEED env (seed only) <- config file <- --set overrides.
RunConfig resolve_config(const ConfigCli& cc) {
  RunConfig cfg;
  if (const char* env = std::getenv("VIRD_SEED")) {
    try {
      cfg.seed = std::stoull(env);
    } catch (const std::exception&) {
      throw vird::ValidationError("VIRD_SEED is not an unsigned integer");
    }
  }
  if (!cc.config_file.empty()) cfg = vird::load_config_file(cfg, cc.config_file);
  for (const auto& s : cc.sets) cfg = vird::apply_override(cfg, s);
  return cfg;
}

std::pair<int, int> parse_grid(const std::string& s) {
  auto x = s.find('x');
  if (x == std::string::npos) x = s.find('X');
  if (x == std::string::npos) throw vird::ValidationError("--grid expects GxG, got: " + s);
  int a = std::stoi(s.substr(0, x));
  int b = std::stoi(s.substr(x + 1));
  if (a != b) throw vird::ValidationError("--grid must be square (GxG), got: " + s);
  if (a < 1) throw vird::ValidationError("--grid must be >= 1x1");
  return {a, a};
}

nlohmann::ordered_json dataset_meta(const RunConfig& cfg) {
  nlohmann::ordered_json meta;
  meta["seed"] = cfg.seed;
  meta["params"] = vird::to_json(cfg)["data"];
  return meta;
}

/// Training and evaluation adopt the dataset's generation parameters so image
/// shapes and the search extent always match the data on disk.
RunConfig adopt_dataset_params(const RunConfig& cfg, const nlohmann::ordered_json& manifest) {
  if (!manifest.contains("params")) return cfg;
  nlohmann::ordered_json overlay;
  overlay["data"] = manifest["params"];
  return vird::merge_config(cfg, overlay);
}

int cmd_generate(std::uint64_t seed, bool seed_set, int count, const std::string& out,
                 const ConfigCli& cc, int jobs) {
  RunConfig cfg = resolve_config(cc);
  if (seed_set) cfg.seed = seed;
  if (count < 0) throw vird::ValidationError("--count must be >= 0");
  auto pairs = vird::make_dataset(cfg.seed, count, cfg.data, jobs);
  vird::write_dataset(out, pairs, dataset_meta(cfg));
  vird::write_resolved_config(cfg, (std::filesystem::path(out) / "resolved_config.json").string());
  std::cout << "wrote " << pairs.size() << " pairs to " << out << "\n";
  return 0;
}

int cmd_train(const std::string& data_dir, const std::string& out, const ConfigCli& cc,
              std::uint64_t seed, bool seed_set, int epochs, bool epochs_set, int jobs,
              bool jobs_set, const std::vector<std::string>& ablate) {
  RunConfig cfg = resolve_config(cc);
  if (seed_set) cfg.seed = seed;
  if (epochs_set) cfg.train.epochs = epochs;
  if (jobs_set) cfg.train.jobs = jobs;
  for (const auto& a : ablate) {
    if (a == "cepa")
      cfg.ablate.cepa = true;
    else if (a == "ce")
      cfg.ablate.ce = true;
    else if (a == "recon-origin")
      cfg.ablate.recon_origin = true;
    else if (a == "recon-cross")
      cfg.ablate.recon_cross = true;
    else if (a == "regression")
      cfg.ablate.regression = true;
    else
      throw vird::ValidationError(
          "unknown --ablate value: " + a +
          " (expected cepa|ce|recon-origin|recon-cross|regression)");
  }

  vird::Dataset ds = vird::read_dataset(data_dir);
  cfg = adopt_dataset_params(cfg, ds.manifest);
  vird::VirdModel model(cfg);
  std::filesystem::create_directories(out);
  vird::write_resolved_config(cfg,
                              (std::filesystem::path(out) / "resolved_config.json").string());
  vird::train(model, ds.pairs, out);
  std::cout << "trained " << cfg.train.epochs << " epochs on " << ds.pairs.size()
            << " samples; checkpoint in " << out << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data_dir, const std::string& out,
             const std::string& grid_str, int ntheta, bool ntheta_set, bool no_regression,
             int jobs, int viz_count) {
  auto loaded = vird::load_checkpoint(ckpt);
  vird::VirdModel& model = loaded.model;
  vird::Dataset ds = vird::read_dataset(data_dir);

  int g = model.cfg.eval.grid;
  if (!grid_str.empty()) g = parse_grid(grid_str).first;
  int ntheta_req = ntheta_set ? ntheta : model.cfg.eval.ntheta;
  bool use_reg = model.cfg.eval.use_regression && !model.cfg.ablate.regression && !no_regression;

  vird::PoseGrid grid = model.eval_grid(g, ntheta_req);
  std::cout << "grid=" << g << "x" << g << " ntheta=" << grid.n_theta << " (requested "
            << ntheta_req << ")\n";
  vird::EvalReport rep = vird::evaluate(model, ds.pairs, grid, use_reg, jobs);

  std::filesystem::create_directories(out);
  auto j = vird::report_to_json(rep);
  j["ntheta_requested"] = ntheta_req;
  j["checkpoint_epoch"] = loaded.epoch;
  j["ablate"] = vird::to_json(model.cfg)["ablate"];
  {
    std::ofstream rf(std::filesystem::path(out) / "report.json");
    rf << j.dump(2) << "\n";
  }
  vird::write_per_sample_csv(rep, (std::filesystem::path(out) / "per_sample.csv").string());
  vird::write_resolved_config(model.cfg,
                              (std::filesystem::path(out) / "resolved_config.json").string());
  for (int i = 0; i < viz_count && i < static_cast<int>(ds.pairs.size()); ++i)
    vird::emit_visualizations(model, ds.pairs[static_cast<size_t>(i)],
                              (std::filesystem::path(out) / "viz").string());
  std::cout << "median_pos_err_m=" << rep.median_pos_err_m
            << " median_orient_err_deg=" << rep.median_orient_err_deg << "\n";
  return 0;
}

int cmd_infer(const std::string& ckpt, const std::string& sat_path, const std::string& grd_path,
              double res, const std::string& grid_str, int ntheta, bool ntheta_set,
              const std::string& out_png) {
  auto loaded = vird::load_checkpoint(ckpt);
  vird::VirdModel& model = loaded.model;

  vird::Image sat = vird::read_png(sat_path).image;
  vird::Image grd = vird::read_png(grd_path).image;
  if (sat.width != sat.height)
    throw vird::ValidationError("satellite image must be square, got " +
                                std::to_string(sat.width) + "x" + std::to_string(sat.height));
  if (sat.channels != 3 || grd.channels != 3)
    throw vird::ValidationError("inference expects RGB images");
  if (grd.width != model.cfg.data.pano_w || grd.height != model.cfg.data.pano_h)
    throw vird::ValidationError("ground panorama must be " +
                                std::to_string(model.cfg.data.pano_w) + "x" +
                                std::to_string(model.cfg.data.pano_h) + " for this checkpoint");
  if (!(res > 0)) throw vird::ValidationError("--res must be positive");
  if (sat.width % model.shapes.f != 0)
    throw vird::ValidationError("satellite size must be divisible by " +
                                std::to_string(model.shapes.f));

  model.cfg.data.sat_px = sat.width;
  model.cfg.data.sat_res_m_per_px = res;

  int g = model.cfg.eval.grid;
  if (!grid_str.empty()) g = parse_grid(grid_str).first;
  int ntheta_req = ntheta_set ? ntheta : model.cfg.eval.ntheta;
  vird::PoseGrid grid = model.eval_grid(g, ntheta_req);

  auto ectx = model.eval_ctx();
  auto rw = vird::regression_weights(model);
  bool use_reg = model.cfg.eval.use_regression && !model.cfg.ablate.regression;
  vird::SampleEval ev =
      vird::estimate_pose(model, ectx, rw, vird::image_to_chw(sat), vird::image_to_chw(grd),
                          grid, use_reg);

  std::printf("x_m=%.6f y_m=%.6f theta_deg=%.6f score=%.6f\n", ev.pred.x, ev.pred.y,
              ev.pred.theta * 180.0 / vird::kPi, ev.score);

  vird::SamplePair sample;
  sample.id = "infer";
  sample.sat = sat;
  sample.grd = grd;
  sample.gt = ev.pred;  // overlay uses the prediction only
  sample.frame = vird::ImageFrame(res, sat.width, sat.height);
  vird::Image overlay = sample.sat;
  auto [u, v] = vird::pose_to_pixel(ev.pred, sample.frame);
  for (double t = 0.0; t <= 6.0; t += 0.25) {
    int px = static_cast<int>(std::lround(u + t * std::cos(ev.pred.theta)));
    int py = static_cast<int>(std::lround(v + t * std::sin(ev.pred.theta)));
    if (px >= 0 && px < overlay.width && py >= 0 && py < overlay.height)
      overlay.set_rgb(px, py, 230, 40, 40);
  }
  vird::write_png(out_png, overlay);
  return 0;
}

int cmd_viz(const std::string& ckpt, const std::string& data_dir, const std::string& id,
            const std::string& out) {
  auto loaded = vird::load_checkpoint(ckpt);
  vird::Dataset ds = vird::read_dataset(data_dir);
  for (const auto& p : ds.pairs) {
    if (p.id == id || id.empty()) {
      auto files = vird::emit_visualizations(loaded.model, p, out);
      for (const auto& f : files) std::cout << f << "\n";
      return 0;
    }
  }
  throw vird::ValidationError("sample id not found in dataset: " + id);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"VIRD cross-view pose estimation pipeline"};
  app.require_subcommand(1);

  // generate
  auto* gen = app.add_subcommand("generate", "generate a synthetic cross-view dataset");
  std::uint64_t gen_seed = 0;
  int gen_count = 16, gen_jobs = 0;
  std::string gen_out;
  ConfigCli gen_cc;
  auto* gen_seed_opt = gen->add_option("--seed", gen_seed, "master seed");
  gen->add_option("--count", gen_count, "number of sample pairs")->required();
  gen->add_option("--out", gen_out, "output dataset directory")->required();
  gen->add_option("--jobs", gen_jobs, "worker threads (0 = hardware)");
  add_config_options(gen, gen_cc);

  // train
  auto* tr = app.add_subcommand("train", "train a model on a dataset");
  std::string tr_data, tr_out;
  ConfigCli tr_cc;
  std::uint64_t tr_seed = 0;
  int tr_epochs = 0, tr_jobs = 0;
  std::vector<std::string> tr_ablate;
  tr->add_option("--data", tr_data, "dataset directory")->required();
  tr->add_option("--out", tr_out, "output directory for checkpoints and logs")->required();
  auto* tr_seed_opt = tr->add_option("--seed", tr_seed, "training seed");
  auto* tr_epochs_opt = tr->add_option("--epochs", tr_epochs, "training epochs");
  auto* tr_jobs_opt = tr->add_option("--jobs", tr_jobs, "worker threads (0 = hardware)");
  tr->add_option("--ablate", tr_ablate,
                 "disable a component: cepa|ce|recon-origin|recon-cross|regression")
      ->take_all();
  add_config_options(tr, tr_cc);

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  std::string ev_ckpt, ev_data, ev_out, ev_grid;
  int ev_ntheta = 0, ev_jobs = 0, ev_viz = 0;
  bool ev_noreg = false;
  ev->add_option("--checkpoint", ev_ckpt, "checkpoint manifest (.json) or directory")->required();
  ev->add_option("--data", ev_data, "dataset directory")->required();
  ev->add_option("--out", ev_out, "output directory for report files")->required();
  ev->add_option("--grid", ev_grid, "position grid, e.g. 20x20");
  auto* ev_ntheta_opt = ev->add_option("--ntheta", ev_ntheta, "orientation candidates (snapped)");
  ev->add_flag("--no-regression", ev_noreg, "skip residual regression");
  ev->add_option("--jobs", ev_jobs, "worker threads (0 = hardware)");
  ev->add_option("--viz", ev_viz, "emit visualizations for the first N samples");

  // infer
  auto* in = app.add_subcommand("infer", "estimate the pose for one image pair");
  std::string in_ckpt, in_sat, in_grd, in_grid, in_out = "pose_overlay.png";
  double in_res = 0.5;
  int in_ntheta = 0;
  in->add_option("--checkpoint", in_ckpt, "checkpoint manifest (.json) or directory")->required();
  in->add_option("--sat", in_sat, "satellite PNG (square, north-up)")->required();
  in->add_option("--grd", in_grd, "ground panorama PNG")->required();
  in->add_option("--res", in_res, "satellite resolution in meters per pixel")->required();
  in->add_option("--grid", in_grid, "position grid, e.g. 20x20");
  auto* in_ntheta_opt = in->add_option("--ntheta", in_ntheta, "orientation candidates (snapped)");
  in->add_option("--out", in_out, "overlay PNG path");

  // viz
  auto* vz = app.add_subcommand("viz", "emit attention/reconstruction/pose visualizations");
  std::string vz_ckpt, vz_data, vz_id, vz_out;
  vz->add_option("--checkpoint", vz_ckpt, "checkpoint manifest (.json) or directory")->required();
  vz->add_option("--data", vz_data, "dataset directory")->required();
  vz->add_option("--id", vz_id, "sample id (default: first sample)");
  vz->add_option("--out", vz_out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed())
      return cmd_generate(gen_seed, gen_seed_opt->count() > 0, gen_count, gen_out, gen_cc,
                          gen_jobs);
    if (tr->parsed())
      return cmd_train(tr_data, tr_out, tr_cc, tr_seed, tr_seed_opt->count() > 0, tr_epochs,
                       tr_epochs_opt->count() > 0, tr_jobs, tr_jobs_opt->count() > 0, tr_ablate);
    if (ev->parsed())
      return cmd_eval(ev_ckpt, ev_data, ev_out, ev_grid, ev_ntheta, ev_ntheta_opt->count() > 0,
                      ev_noreg, ev_jobs, ev_viz);
    if (in->parsed())
      return cmd_infer(in_ckpt, in_sat, in_grd, in_res, in_grid, in_ntheta,
                       in_ntheta_opt->count() > 0, in_out);
    if (vz->parsed()) return cmd_viz(vz_ckpt, vz_data, vz_id, vz_out);
  } catch (const vird::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 3;
  }
  return 2;
}
