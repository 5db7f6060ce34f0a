#pragma once

// Plain configuration structs for the whole pipeline. JSON (de)serialization
// lives in config.hpp; these structs carry the defaults.

#include <cstdint>
#include <string>
#include <vector>

#include "vird/common.hpp"

namespace vird {

/// Synthetic-world and rendering parameters.
struct DataParams {
  double world_extent_m = 32.0;  // square world, centered at the origin
  int sat_px = 64;
  double sat_res_m_per_px = 0.5;
  int pano_h = 32;
  int pano_w = 128;
  double hfov_rad = kTwoPi;       // full panorama by default
  double vfov_rad = kPi / 2.0;    // symmetric about the horizon
  double camera_height_m = 1.6;
  double search_extent_m = 16.0;  // candidate poses live in the central square
  int roads_min = 1;
  int roads_max = 2;
  int buildings_min = 6;
  int buildings_max = 12;
  double road_width_min_m = 3.5;
  double road_width_max_m = 6.0;
  double building_size_min_m = 3.0;
  double building_size_max_m = 8.0;
  double building_height_min_m = 2.5;
  double building_height_max_m = 9.0;
};

/// Polar sampling range, in meters (converted to pixels per frame).
struct PolarParams {
  double r_min_m = 1.0;
  double r_max_m = 8.0;
};

/// Feature extractor (toy convolutional backbone) and descriptor head.
struct EncoderParams {
  std::vector<int> widths = {16, 32, 32};  // one stride-2 stage per entry
  int c_d = 8;                             // descriptor channels per azimuth column
  bool share_weights = true;               // one backbone for both views
  int mlp_hidden_mult = 4;                 // column-MLP hidden width = mult * c_d
};

/// Context-enhanced positional attention block.
struct CepaParams {
  int d_p = 64;
  int d_k = 32;
  int h_q = 0;  // 0 means "equal to the feature height H"
  std::string pe_kind = "sinusoidal";  // sinusoidal | sinusoidal-learnable | learnable
  int phi_hidden = 16;
};

/// View-reconstruction loss weights and decoder width.
struct ReconParams {
  double alpha1 = 1.0;
  double alpha2 = 10.0;
  int decoder_width = 16;
};

/// Descriptor matching (InfoNCE) and training-time candidate grid.
struct MatchParams {
  double tau = 0.05;
  int train_grid = 5;
  int train_ntheta = 16;
};

/// Residual regression head and training-time pose sampling. The search
/// ranges scale with the coarse grid: two evaluation cells in position and
/// 0.7 orientation steps, matching the reference setup's relative geometry
/// (4 m on a 40 m extent with a 20-cell grid; 3.6 deg of a 5.14-deg step).
struct RegressionParams {
  double dx_max_m = 1.6;
  double dy_max_m = 1.6;
  double dtheta_max_rad = 0.2748893571891069;  // 15.75 degrees
  int n_r = 4;
  double beta = 5.0;
  std::vector<int> conv_widths = {32, 64};
  int hidden = 128;
};

struct TrainParams {
  int epochs = 10;
  int batch_size = 4;
  double lr = 1e-4;
  int jobs = 0;  // 0 = hardware concurrency
};

struct EvalParams {
  int grid = 20;
  int ntheta = 64;  // snapped to a divisor of W_s
  bool use_regression = true;
};

/// Component toggles; a disabled component contributes exactly zero loss.
struct AblateParams {
  bool cepa = false;
  bool ce = false;
  bool recon_origin = false;
  bool recon_cross = false;
  bool regression = false;
};

struct RunConfig {
  std::uint64_t seed = 0;
  DataParams data;
  PolarParams polar;
  EncoderParams encoder;
  CepaParams cepa;
  ReconParams recon;
  MatchParams match;
  RegressionParams regression;
  TrainParams train;
  EvalParams eval;
  AblateParams ablate;
};

}  // namespace vird
