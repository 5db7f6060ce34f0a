#pragma once

// Coordinate conventions, the polar transformation of satellite maps,
// candidate-pose grids, and cyclic shift-and-crop of azimuth-indexed arrays.
//
// Conventions fixed here and validated end to end by the equivariance tests:
//   * world x points east, y points north; yaw theta in [-pi, pi) is measured
//     clockwise from east, so the heading direction is (cos t, -sin t);
//   * image u grows rightward (east), v grows downward; integer pixel
//     coordinates are pixel centers;
//   * the polar map's center column faces east (theta = 0) and the column
//     index grows with theta; a candidate orientation theta shifts the crop
//     window rightward by theta/(2*pi) * W_s columns.

#include "vird/autodiff.hpp"
#include "vird/types.hpp"

namespace vird {

inline double wrap_angle(double t) {
  double w = t - kTwoPi * std::floor((t + kPi) / kTwoPi);
  // floor rounding can land exactly on +pi; fold it back to -pi.
  if (w >= kPi) w -= kTwoPi;
  return w;
}

/// 3-DoF camera pose. Constructors wrap theta into [-pi, pi).
struct Pose {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;

  Pose() = default;
  Pose(double x_, double y_, double theta_) : x(x_), y(y_), theta(wrap_angle(theta_)) {
    if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(theta))
      throw std::invalid_argument("Pose: non-finite component");
  }
};

/// Pixel grid metadata for a north-up raster.
struct ImageFrame {
  double res_m_per_px = 1.0;
  int width_px = 1;
  int height_px = 1;

  ImageFrame() = default;
  ImageFrame(double res, int w, int h) : res_m_per_px(res), width_px(w), height_px(h) {
    if (!(res > 0) || w < 1 || h < 1) throw std::invalid_argument("ImageFrame: invalid fields");
  }

  double coverage_m() const { return res_m_per_px * std::min(width_px, height_px); }
};

inline std::pair<double, double> pose_to_pixel(const Pose& p, const ImageFrame& f) {
  double u = f.width_px / 2.0 + p.x / f.res_m_per_px;
  double v = f.height_px / 2.0 - p.y / f.res_m_per_px;
  return {u, v};
}

inline Pose pixel_to_pose(double u, double v, const ImageFrame& f, double theta = 0.0) {
  double x = (u - f.width_px / 2.0) * f.res_m_per_px;
  double y = (f.height_px / 2.0 - v) * f.res_m_per_px;
  return Pose(x, y, theta);
}

/// Frame of a feature map downsampled from `f` by integer factor `ds`.
inline ImageFrame feature_frame(const ImageFrame& f, int ds) {
  if (ds < 1 || f.width_px % ds || f.height_px % ds)
    throw std::invalid_argument("feature_frame: downsample factor must divide frame size");
  return ImageFrame(f.res_m_per_px * ds, f.width_px / ds, f.height_px / ds);
}

// ---------------------------------------------------------------------------
// polar transformation

enum class Interp { kBilinear, kNearest };

/// Pixel-space polar sampling range: rows map to radii (top = far), columns
/// to azimuth with the center column facing east.
struct PolarSpec {
  double r_min_px = 0.0;
  double r_max_px = 0.0;
  int rows = 1;  // H
  int cols = 1;  // W_s

  PolarSpec() = default;
  PolarSpec(double rmin, double rmax, int h, int w)
      : r_min_px(rmin), r_max_px(rmax), rows(h), cols(w) {
    if (!(r_min_px >= 0) || !(r_max_px > r_min_px))
      throw std::invalid_argument("PolarSpec: need 0 <= r_min < r_max");
    if (!(r_max_px > 0)) throw std::invalid_argument("PolarSpec: r_max (px) must be positive");
    if (rows < 1 || cols < 1) throw std::invalid_argument("PolarSpec: rows/cols must be >= 1");
  }

  double rho(double v) const {
    return (r_max_px - r_min_px) * (1.0 - v / rows) + r_min_px;
  }
};

/// Output width of the polar map: W_s = round((2*pi / hfov) * W_g), >= W_g.
inline int polar_width(double hfov, int w_g) {
  if (!(hfov > 0) || hfov > kTwoPi + 1e-12)
    throw std::invalid_argument("polar_width: hfov must be in (0, 2*pi]");
  int ws = static_cast<int>(std::llround(kTwoPi / hfov * w_g));
  if (ws < w_g) ws = w_g;
  return ws;
}

inline PolarSpec make_polar_spec(const PolarParams& p, const ImageFrame& frame, int rows,
                                 int cols) {
  if (!(p.r_min_m >= 0) || !(p.r_max_m > p.r_min_m))
    throw std::invalid_argument("polar radii: need 0 <= r_min < r_max (meters)");
  return PolarSpec(p.r_min_m / frame.res_m_per_px, p.r_max_m / frame.res_m_per_px, rows, cols);
}

/// Source pixel sampled by output pixel (u_out, v_out); continuous in both.
inline std::pair<double, double> polar_source(const PolarSpec& spec, double uc, double vc,
                                              double u_out, double v_out) {
  double rho = spec.rho(v_out);
  double phi = kTwoPi * u_out / spec.cols;
  return {uc - rho * std::cos(phi), vc - rho * std::sin(phi)};
}

inline kern::GatherPlan build_polar_plan(const PolarSpec& spec, int src_h, int src_w, double uc,
                                         double vc, Interp interp) {
  if (!std::isfinite(uc) || !std::isfinite(vc))
    throw std::invalid_argument("polar_transform: non-finite center");
  kern::GatherPlan plan;
  plan.src_h = src_h;
  plan.src_w = src_w;
  plan.out_h = spec.rows;
  plan.out_w = spec.cols;
  plan.taps.resize(static_cast<size_t>(spec.rows) * spec.cols);
  for (int vo = 0; vo < spec.rows; ++vo) {
    for (int uo = 0; uo < spec.cols; ++uo) {
      auto [us, vs] = polar_source(spec, uc, vc, uo, vo);
      auto& tap = plan.taps[static_cast<size_t>(vo) * spec.cols + uo];
      if (interp == Interp::kNearest) {
        long ui = std::lround(us), vi = std::lround(vs);
        if (ui >= 0 && ui < src_w && vi >= 0 && vi < src_h) {
          tap.idx[0] = static_cast<int>(vi) * src_w + static_cast<int>(ui);
          tap.w[0] = 1.0;
        }
      } else {
        double fu = std::floor(us), fv = std::floor(vs);
        int u0 = static_cast<int>(fu), v0 = static_cast<int>(fv);
        double au = us - fu, av = vs - fv;
        const int uu[2] = {u0, u0 + 1};
        const int vv[2] = {v0, v0 + 1};
        const double wu[2] = {1.0 - au, au};
        const double wv[2] = {1.0 - av, av};
        int k = 0;
        for (int j = 0; j < 2; ++j)
          for (int i = 0; i < 2; ++i, ++k) {
            if (uu[i] >= 0 && uu[i] < src_w && vv[j] >= 0 && vv[j] < src_h) {
              tap.idx[k] = vv[j] * src_w + uu[i];
              tap.w[k] = wv[j] * wu[i];
            }
          }
      }
    }
  }
  return plan;
}

/// Resamples a (C,H,W) map into polar coordinates about (uc, vc); bilinear
/// with zero padding outside the source by default.
inline Tensor polar_transform(const Tensor& src, double uc, double vc, const PolarSpec& spec,
                              Interp interp = Interp::kBilinear) {
  if (src.ndim() != 3) throw std::invalid_argument("polar_transform: source must be (C,H,W)");
  auto plan = build_polar_plan(spec, src.shape[1], src.shape[2], uc, vc, interp);
  return kern::gather_apply(src, plan);
}

inline Var polar_transform(Tape& tape, Var src, double uc, double vc, const PolarSpec& spec,
                           Interp interp = Interp::kBilinear) {
  const Tensor& s = tape.val(src);
  if (s.ndim() != 3) throw std::invalid_argument("polar_transform: source must be (C,H,W)");
  auto plan = std::make_shared<kern::GatherPlan>(
      build_polar_plan(spec, s.shape[1], s.shape[2], uc, vc, interp));
  return tape.gather(src, plan);
}

// ---------------------------------------------------------------------------
// cyclic shift-and-crop

/// Column shift for orientation theta; must be integral within 1e-6 columns.
inline int shift_for_theta(double theta, int w_s) {
  double s_real = theta / kTwoPi * w_s;
  long s = std::lround(s_real);
  if (std::abs(s_real - s) > 1e-6) {
    std::ostringstream os;
    os << "cyclic shift is not integral: theta=" << theta << " gives shift " << s_real
       << " over W_s=" << w_s;
    throw std::invalid_argument(os.str());
  }
  return static_cast<int>(((s % w_s) + w_s) % w_s);
}

/// Nearest orientation that corresponds to an integral column shift.
inline double snap_theta(double theta, int w_s) {
  long s = std::lround(theta / kTwoPi * w_s);
  return wrap_angle(kTwoPi * static_cast<double>(s) / w_s);
}

/// Index map for shifting the last axis by theta and center-cropping to w_g.
/// Output column j reads input column (start + s + j) mod w_s with
/// start = floor((w_s - w_g) / 2).
inline std::vector<int> shift_crop_columns(int w_s, int w_g, double theta) {
  if (w_g > w_s) throw std::invalid_argument("cyclic_shift_crop: W_g must be <= W_s");
  int s = shift_for_theta(theta, w_s);
  int start = (w_s - w_g) / 2;
  std::vector<int> cols(static_cast<size_t>(w_g));
  for (int j = 0; j < w_g; ++j) cols[static_cast<size_t>(j)] = (start + s + j) % w_s;
  return cols;
}

/// Shift-and-crop along the last axis of any (..., W_s) tensor.
inline Tensor cyclic_shift_crop(const Tensor& t, double theta, int w_g) {
  if (t.ndim() < 1) throw std::invalid_argument("cyclic_shift_crop: rank-0 input");
  int w_s = t.shape.back();
  auto cols = shift_crop_columns(w_s, w_g, theta);
  std::vector<int> out_shape = t.shape;
  out_shape.back() = w_g;
  Tensor out = Tensor::zeros(out_shape);
  std::int64_t lead = t.numel() / w_s;
  for (std::int64_t l = 0; l < lead; ++l) {
    const double* srow = &t.data[static_cast<size_t>(l) * w_s];
    double* drow = &out.data[static_cast<size_t>(l) * w_g];
    for (int j = 0; j < w_g; ++j) drow[j] = srow[cols[static_cast<size_t>(j)]];
  }
  return out;
}

inline Var cyclic_shift_crop(Tape& tape, Var t, double theta, int w_g) {
  const Tensor& v = tape.val(t);
  int w_s = v.shape.back();
  auto cols = shift_crop_columns(w_s, w_g, theta);
  std::vector<int> out_shape = v.shape;
  out_shape.back() = w_g;
  std::int64_t lead = v.numel() / w_s;
  auto map = std::make_shared<std::vector<int>>(static_cast<size_t>(lead) * w_g);
  for (std::int64_t l = 0; l < lead; ++l)
    for (int j = 0; j < w_g; ++j)
      (*map)[static_cast<size_t>(l) * w_g + j] =
          static_cast<int>(l * w_s + cols[static_cast<size_t>(j)]);
  return tape.index_select(t, map, out_shape);
}

// ---------------------------------------------------------------------------
// candidate pose grids

/// Uniform G x G x N_theta candidate set. Positions are cell-centered over the
/// search extent; orientations are -pi + t * 2*pi / n_theta, all of which
/// correspond to integral column shifts (n_theta divides W_s, W_s even).
struct PoseGrid {
  int g = 1;
  int n_theta = 1;
  double extent_m = 0.0;
  std::vector<std::pair<double, double>> positions;  // index p = iy * g + ix
  std::vector<double> thetas;

  int candidate_count() const { return g * g * n_theta; }
  int flat_index(int pos_idx, int theta_idx) const { return pos_idx * n_theta + theta_idx; }

  Pose candidate(int pos_idx, int theta_idx) const {
    const auto& [x, y] = positions[static_cast<size_t>(pos_idx)];
    return Pose(x, y, thetas[static_cast<size_t>(theta_idx)]);
  }

  Pose candidate_flat(int flat) const { return candidate(flat / n_theta, flat % n_theta); }

  /// Nearest candidate to an arbitrary pose; positions clamp to the extent.
  std::pair<int, int> nearest(const Pose& p) const {
    double cell = extent_m / g;
    auto clamp_idx = [&](double c) {
      int i = static_cast<int>(std::floor((c + extent_m / 2.0) / cell));
      return std::clamp(i, 0, g - 1);
    };
    int ix = clamp_idx(p.x), iy = clamp_idx(p.y);
    double step = kTwoPi / n_theta;
    long t = std::lround((p.theta + kPi) / step);
    int it = static_cast<int>(((t % n_theta) + n_theta) % n_theta);
    return {iy * g + ix, it};
  }
};

/// Largest n <= request with n dividing w_s (n >= 1).
inline int snap_ntheta(int request, int w_s) {
  if (request < 1) throw std::invalid_argument("n_theta request must be >= 1");
  for (int n = std::min(request, w_s); n >= 1; --n)
    if (w_s % n == 0) return n;
  return 1;
}

inline PoseGrid make_pose_grid(double extent_m, int g, int n_theta_request,
                               const ImageFrame& frame, double r_max_m, int w_s) {
  if (g < 1) throw std::invalid_argument("make_pose_grid: G must be >= 1");
  if (!(extent_m > 0)) throw std::invalid_argument("make_pose_grid: extent must be positive");
  if (w_s % 2 != 0)
    throw std::invalid_argument("make_pose_grid: W_s must be even for integral shifts");
  if (extent_m > frame.coverage_m() - 2.0 * r_max_m + 1e-9) {
    std::ostringstream os;
    os << "search extent " << extent_m << " m exceeds satellite coverage "
       << frame.coverage_m() << " m minus the r_max margin " << r_max_m << " m per side";
    throw std::invalid_argument(os.str());
  }
  PoseGrid grid;
  grid.g = g;
  grid.n_theta = snap_ntheta(n_theta_request, w_s);
  grid.extent_m = extent_m;
  grid.positions.reserve(static_cast<size_t>(g) * g);
  double cell = extent_m / g;
  for (int iy = 0; iy < g; ++iy)
    for (int ix = 0; ix < g; ++ix)
      grid.positions.emplace_back(-extent_m / 2.0 + (ix + 0.5) * cell,
                                  -extent_m / 2.0 + (iy + 0.5) * cell);
  grid.thetas.reserve(static_cast<size_t>(grid.n_theta));
  for (int t = 0; t < grid.n_theta; ++t) grid.thetas.push_back(-kPi + kTwoPi * t / grid.n_theta);
  return grid;
}

}  // namespace vird
