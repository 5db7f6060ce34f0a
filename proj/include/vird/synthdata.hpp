#pragma once

// Procedural cross-view scenes: a flat world with roads and axis-aligned
// colored buildings, rendered as a north-up satellite raster and a cylindrical
// ground panorama with exact ground-truth poses. All randomness is derived
// from (master seed, sample index), so parallel and serial generation produce
// identical datasets.

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "vird/geometry.hpp"
#include "vird/image.hpp"

namespace vird {

struct Color {
  std::uint8_t r = 0, g = 0, b = 0;
  bool operator==(const Color& o) const { return r == o.r && g == o.g && b == o.b; }
};

struct Road {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  double width = 4.0;
  Color color;
};

struct Building {
  double cx = 0, cy = 0;   // footprint center, meters
  double hx = 1, hy = 1;   // half extents
  double height = 3.0;     // meters
  Color facade;
  Color roof;

  bool contains(double x, double y) const {
    return std::abs(x - cx) <= hx && std::abs(y - cy) <= hy;
  }
};

struct SceneSpec {
  double extent_m = 32.0;
  std::vector<Road> roads;
  std::vector<Building> buildings;
  Color ground;
  Color sky;
  std::uint64_t seed = 0;
};

namespace detail_scene {

inline double dist_point_segment(double px, double py, const Road& r) {
  double dx = r.x1 - r.x0, dy = r.y1 - r.y0;
  double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((px - r.x0) * dx + (py - r.y0) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  double cx = r.x0 + t * dx, cy = r.y0 + t * dy;
  return std::hypot(px - cx, py - cy);
}

/// Segment vs axis-aligned box (slab method); used with boxes expanded by the
/// road half-width to keep buildings off roads.
inline bool segment_hits_box(double x0, double y0, double x1, double y1, double bx0, double by0,
                             double bx1, double by1) {
  double dx = x1 - x0, dy = y1 - y0;
  double tmin = 0.0, tmax = 1.0;
  auto slab = [&](double o, double d, double lo, double hi) {
    if (std::abs(d) < 1e-12) return o >= lo && o <= hi;
    double t0 = (lo - o) / d, t1 = (hi - o) / d;
    if (t0 > t1) std::swap(t0, t1);
    tmin = std::max(tmin, t0);
    tmax = std::min(tmax, t1);
    return tmin <= tmax;
  };
  return slab(x0, dx, bx0, bx1) && slab(y0, dy, by0, by1);
}

inline Color jitter(Color c, Rng& rng, int amount) {
  auto j = [&](int v) {
    int d = rng.uniform_int(-amount, amount);
    return static_cast<std::uint8_t>(std::clamp(v + d, 0, 255));
  };
  return Color{j(c.r), j(c.g), j(c.b)};
}

inline const std::array<Color, 8>& palette() {
  static const std::array<Color, 8> p = {{{90, 90, 95},     // road gray
                                          {70, 110, 60},    // ground green
                                          {160, 60, 50},    // brick
                                          {60, 90, 160},    // blue
                                          {200, 180, 60},   // yellow
                                          {210, 210, 200},  // off-white
                                          {50, 140, 140},   // teal
                                          {200, 120, 40}}}; // orange
  return p;
}

}  // namespace detail_scene

/// Color of the ground plane at a world point (roads painted over terrain,
/// later roads over earlier ones; building footprints are not ground).
inline Color ground_color_at(const SceneSpec& scene, double x, double y) {
  Color c = scene.ground;
  for (const auto& r : scene.roads)
    if (detail_scene::dist_point_segment(x, y, r) <= r.width / 2.0) c = r.color;
  return c;
}

inline bool inside_any_building(const SceneSpec& scene, double x, double y) {
  for (const auto& b : scene.buildings)
    if (b.contains(x, y)) return true;
  return false;
}

/// Samples a camera pose on a road surface inside the central search extent.
/// Returns false if no placement was found within the attempt budget.
inline bool try_sample_camera_pose(const SceneSpec& scene, double search_extent_m, Rng& rng,
                                   Pose& out) {
  if (scene.roads.empty()) return false;
  const double half = search_extent_m / 2.0 - 0.5;
  for (int attempt = 0; attempt < 200; ++attempt) {
    const Road& r = scene.roads[static_cast<size_t>(
        rng.uniform_int(0, static_cast<int>(scene.roads.size()) - 1))];
    double t = rng.uniform();
    double x = r.x0 + t * (r.x1 - r.x0);
    double y = r.y0 + t * (r.y1 - r.y0);
    // lateral offset, kept away from the road edge
    double nx = -(r.y1 - r.y0), ny = r.x1 - r.x0;
    double nlen = std::hypot(nx, ny);
    if (nlen > 0) {
      double off = rng.uniform(-0.5, 0.5) * (r.width / 2.0 - 0.6);
      x += off * nx / nlen;
      y += off * ny / nlen;
    }
    if (std::abs(x) > half || std::abs(y) > half) continue;
    if (inside_any_building(scene, x, y)) continue;
    out = Pose(x, y, rng.uniform(-kPi, kPi));
    return true;
  }
  return false;
}

/// Deterministic procedural scene. At least one road passes near the origin;
/// buildings avoid roads and each other and are colored from a jittered
/// palette so scenes are azimuthally asymmetric.
inline SceneSpec generate_scene(std::uint64_t seed, const DataParams& params) {
  if (!(params.world_extent_m > 0)) throw ValidationError("world extent must be positive");
  if (params.roads_min < 1 || params.roads_max < params.roads_min)
    throw ValidationError("road count range invalid (need at least one road)");
  if (params.buildings_min < 0 || params.buildings_max < params.buildings_min)
    throw ValidationError("building count range invalid");
  if (!(params.search_extent_m > 1.0) || params.search_extent_m > params.world_extent_m)
    throw ValidationError("search extent must be in (1, world extent]");

  Rng rng(seed_stream(seed, "scene"));
  const auto& pal = detail_scene::palette();

  for (int rebuild = 0; rebuild < 20; ++rebuild) {
    SceneSpec scene;
    scene.extent_m = params.world_extent_m;
    scene.seed = seed;
    scene.ground = detail_scene::jitter(pal[1], rng, 8);
    scene.sky = Color{168, 205, 235};

    double span = params.world_extent_m * 0.75;
    int n_roads = rng.uniform_int(params.roads_min, params.roads_max);
    double first_angle = rng.uniform(0.0, kPi);
    for (int i = 0; i < n_roads; ++i) {
      Road r;
      double angle = i == 0 ? first_angle : rng.uniform(0.0, kPi);
      if (i > 0 && std::abs(wrap_angle(angle - first_angle)) < 0.35) angle += kPi / 2.0;
      double cx = i == 0 ? rng.uniform(-2.0, 2.0) : rng.uniform(-4.0, 4.0);
      double cy = i == 0 ? rng.uniform(-2.0, 2.0) : rng.uniform(-4.0, 4.0);
      double dx = std::cos(angle), dy = std::sin(angle);
      r.x0 = cx - span * dx;
      r.y0 = cy - span * dy;
      r.x1 = cx + span * dx;
      r.y1 = cy + span * dy;
      r.width = rng.uniform(params.road_width_min_m, params.road_width_max_m);
      r.color = detail_scene::jitter(pal[0], rng, 8);
      scene.roads.push_back(r);
    }

    int n_buildings = rng.uniform_int(params.buildings_min, params.buildings_max);
    int placed = 0;
    for (int attempt = 0; attempt < n_buildings * 40 && placed < n_buildings; ++attempt) {
      Building b;
      b.hx = rng.uniform(params.building_size_min_m, params.building_size_max_m) / 2.0;
      b.hy = rng.uniform(params.building_size_min_m, params.building_size_max_m) / 2.0;
      double lim = params.world_extent_m / 2.0;
      b.cx = rng.uniform(-lim + b.hx, lim - b.hx);
      b.cy = rng.uniform(-lim + b.hy, lim - b.hy);
      b.height = rng.uniform(params.building_height_min_m, params.building_height_max_m);
      Color facade =
          detail_scene::jitter(pal[static_cast<size_t>(rng.uniform_int(2, 7))], rng, 15);
      b.facade = facade;
      b.roof = Color{static_cast<std::uint8_t>(facade.r * 3 / 4),
                     static_cast<std::uint8_t>(facade.g * 3 / 4),
                     static_cast<std::uint8_t>(facade.b * 3 / 4)};

      bool ok = true;
      for (const auto& r : scene.roads) {
        double m = r.width / 2.0 + 0.25;
        if (detail_scene::segment_hits_box(r.x0, r.y0, r.x1, r.y1, b.cx - b.hx - m,
                                           b.cy - b.hy - m, b.cx + b.hx + m, b.cy + b.hy + m)) {
          ok = false;
          break;
        }
      }
      for (const auto& other : scene.buildings) {
        if (ok && std::abs(b.cx - other.cx) < b.hx + other.hx + 0.5 &&
            std::abs(b.cy - other.cy) < b.hy + other.hy + 0.5)
          ok = false;
      }
      if (!ok) continue;
      scene.buildings.push_back(b);
      ++placed;
    }

    Pose probe;
    Rng probe_rng(seed_stream(seed, "feasibility"));
    if (try_sample_camera_pose(scene, params.search_extent_m, probe_rng, probe)) return scene;
  }
  throw ValidationError("generate_scene: no valid camera placement for these parameters");
}

// ---------------------------------------------------------------------------
// rendering

/// Orthographic top-down raster: terrain, then roads, then building roofs.
/// Pixel (u,v) samples the world at the pixel center.
inline Image render_satellite(const SceneSpec& scene, const ImageFrame& frame) {
  Image im = Image::create(frame.width_px, frame.height_px, 3);
  for (int v = 0; v < frame.height_px; ++v) {
    for (int u = 0; u < frame.width_px; ++u) {
      Pose p = pixel_to_pose(u, v, frame);
      Color c = ground_color_at(scene, p.x, p.y);
      for (const auto& b : scene.buildings)
        if (b.contains(p.x, p.y)) c = b.roof;
      im.set_rgb(u, v, c.r, c.g, c.b);
    }
  }
  return im;
}

namespace detail_scene {

struct WallHit {
  double dist;
  double top_elev;  // elevation angle of the building top at this distance
  Color facade;
};

/// All wall intersections along a ray, nearest first.
inline void collect_wall_hits(const SceneSpec& scene, double ox, double oy, double dx, double dy,
                              double cam_h, std::vector<WallHit>& hits) {
  hits.clear();
  for (const auto& b : scene.buildings) {
    double tmin = -std::numeric_limits<double>::infinity();
    double tmax = std::numeric_limits<double>::infinity();
    bool miss = false;
    auto slab = [&](double o, double d, double lo, double hi) {
      if (std::abs(d) < 1e-15) {
        if (o < lo || o > hi) miss = true;
        return;
      }
      double t0 = (lo - o) / d, t1 = (hi - o) / d;
      if (t0 > t1) std::swap(t0, t1);
      tmin = std::max(tmin, t0);
      tmax = std::min(tmax, t1);
    };
    slab(ox, dx, b.cx - b.hx, b.cx + b.hx);
    slab(oy, dy, b.cy - b.hy, b.cy + b.hy);
    if (miss || tmin > tmax || tmin <= 1e-9) continue;
    hits.push_back({tmin, std::atan2(b.height - cam_h, tmin), b.facade});
  }
  std::sort(hits.begin(), hits.end(),
            [](const WallHit& a, const WallHit& b) { return a.dist < b.dist; });
}

}  // namespace detail_scene

/// Cylindrical panorama: columns sweep azimuth (column 0 at theta - hfov/2),
/// rows map linearly to elevation over vfov about the horizon. Orientations
/// within 1e-9 of an exact column offset snap to it so that yaw changes by
/// whole columns produce bitwise cyclic shifts.
inline Image render_ground(const SceneSpec& scene, const Pose& pose, double hfov, double vfov,
                           int width, int height, double cam_h) {
  if (inside_any_building(scene, pose.x, pose.y))
    throw std::invalid_argument("render_ground: camera pose lies inside a building");
  Image im = Image::create(width, height, 3);
  double col_step = hfov / width;
  double u_off = pose.theta / col_step;
  if (std::abs(u_off - std::llround(u_off)) < 1e-9)
    u_off = static_cast<double>(std::llround(u_off));

  std::vector<detail_scene::WallHit> hits;
  for (int col = 0; col < width; ++col) {
    double az = (u_off + (col - width / 2.0)) * col_step;
    double dx = std::cos(az), dy = -std::sin(az);
    detail_scene::collect_wall_hits(scene, pose.x, pose.y, dx, dy, cam_h, hits);
    for (int row = 0; row < height; ++row) {
      double elev = vfov * (0.5 - (row + 0.5) / height);
      Color c;
      if (elev >= 0.0) {
        c = scene.sky;
        for (const auto& h : hits)
          if (elev <= h.top_elev) {
            c = h.facade;
            break;
          }
      } else {
        double ground_dist = cam_h / std::tan(-elev);
        c = ground_color_at(scene, pose.x + ground_dist * dx, pose.y + ground_dist * dy);
        for (const auto& h : hits)
          if (h.dist <= ground_dist) {
            c = h.facade;
            break;
          }
      }
      im.set_rgb(col, row, c.r, c.g, c.b);
    }
  }
  return im;
}

// ---------------------------------------------------------------------------
// paired samples and dataset persistence

struct SamplePair {
  std::string id;
  Image sat;
  Image grd;
  Pose gt;
  ImageFrame frame;
};

inline std::string sample_id(int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%06d", index);
  return buf;
}

/// Renders one paired sample; rng must be derived from (seed, index).
inline SamplePair make_sample(std::uint64_t master_seed, int index, const DataParams& params) {
  std::uint64_t scene_seed = seed_stream(master_seed, static_cast<std::uint64_t>(index));
  SceneSpec scene = generate_scene(scene_seed, params);
  Rng rng(seed_stream(scene_seed, "camera"));
  Pose pose;
  if (!try_sample_camera_pose(scene, params.search_extent_m, rng, pose))
    throw std::runtime_error("make_sample: feasible scene lost its camera placement");
  SamplePair s;
  s.id = sample_id(index);
  s.frame = ImageFrame(params.sat_res_m_per_px, params.sat_px, params.sat_px);
  s.sat = render_satellite(scene, s.frame);
  s.grd = render_ground(scene, pose, params.hfov_rad, params.vfov_rad, params.pano_w,
                        params.pano_h, params.camera_height_m);
  s.gt = pose;
  return s;
}

inline std::vector<SamplePair> make_dataset(std::uint64_t seed, int count,
                                            const DataParams& params, int jobs = 0) {
  if (count < 0) throw ValidationError("dataset count must be >= 0");
  std::vector<SamplePair> out(static_cast<size_t>(count));
  parallel_for(count, jobs,
               [&](std::int64_t i) { out[static_cast<size_t>(i)] = make_sample(seed, static_cast<int>(i), params); });
  return out;
}

constexpr int kDatasetFormatVersion = 1;

inline void write_dataset(const std::string& dir, const std::vector<SamplePair>& pairs,
                          const nlohmann::ordered_json& meta) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "sat");
  fs::create_directories(fs::path(dir) / "grd");

  nlohmann::ordered_json manifest = meta;
  manifest["format_version"] = kDatasetFormatVersion;
  manifest["count"] = pairs.size();
  {
    std::ofstream mf(fs::path(dir) / "manifest.json");
    if (!mf) throw std::runtime_error("write_dataset: cannot write manifest in " + dir);
    mf << manifest.dump(2) << "\n";
  }

  std::ofstream csv(fs::path(dir) / "poses.csv");
  if (!csv) throw std::runtime_error("write_dataset: cannot write poses.csv in " + dir);
  csv << "id,x_m,y_m,theta_rad,res_m_per_px\n";
  char line[256];
  for (const auto& s : pairs) {
    std::snprintf(line, sizeof(line), "%s,%.17g,%.17g,%.17g,%.17g\n", s.id.c_str(), s.gt.x,
                  s.gt.y, s.gt.theta, s.frame.res_m_per_px);
    csv << line;
    write_png((fs::path(dir) / "sat" / (s.id + ".png")).string(), s.sat);
    write_png((fs::path(dir) / "grd" / (s.id + ".png")).string(), s.grd);
  }
}

struct Dataset {
  std::vector<SamplePair> pairs;
  nlohmann::ordered_json manifest;
};

inline Dataset read_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  Dataset ds;
  {
    std::ifstream mf(fs::path(dir) / "manifest.json");
    if (!mf) throw std::runtime_error("read_dataset: missing manifest.json in " + dir);
    try {
      mf >> ds.manifest;
    } catch (const std::exception& e) {
      throw std::runtime_error("read_dataset: corrupt manifest.json in " + dir + ": " + e.what());
    }
  }
  if (!ds.manifest.contains("format_version") ||
      ds.manifest["format_version"].get<int>() != kDatasetFormatVersion)
    throw std::runtime_error("read_dataset: manifest format_version mismatch in " + dir +
                             " (expected " + std::to_string(kDatasetFormatVersion) + ")");

  std::ifstream csv(fs::path(dir) / "poses.csv");
  if (!csv) throw std::runtime_error("read_dataset: missing poses.csv in " + dir);
  std::string header;
  std::getline(csv, header);
  if (header != "id,x_m,y_m,theta_rad,res_m_per_px")
    throw std::runtime_error("read_dataset: unexpected poses.csv header in " + dir);
  std::string line;
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string id, xs, ys, ts, rs;
    if (!std::getline(ls, id, ',') || !std::getline(ls, xs, ',') || !std::getline(ls, ys, ',') ||
        !std::getline(ls, ts, ',') || !std::getline(ls, rs, ','))
      throw std::runtime_error("read_dataset: malformed poses.csv row: " + line);
    SamplePair s;
    s.id = id;
    try {
      double x = std::stod(xs), y = std::stod(ys), theta = std::stod(ts), res = std::stod(rs);
      auto sat = read_png((fs::path(dir) / "sat" / (id + ".png")).string());
      auto grd = read_png((fs::path(dir) / "grd" / (id + ".png")).string());
      s.sat = std::move(sat.image);
      s.grd = std::move(grd.image);
      s.gt = Pose(x, y, theta);
      s.frame = ImageFrame(res, s.sat.width, s.sat.height);
    } catch (const std::exception& e) {
      throw std::runtime_error("read_dataset: sample " + id + ": " + e.what());
    }
    ds.pairs.push_back(std::move(s));
  }
  if (ds.pairs.size() != ds.manifest["count"].get<size_t>())
    throw std::runtime_error("read_dataset: manifest count does not match poses.csv rows in " +
                             dir);
  return ds;
}

}  // namespace vird
