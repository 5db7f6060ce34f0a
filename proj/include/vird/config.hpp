#pragma once

// JSON view of RunConfig: defaults <- config file <- dotted-path overrides.
// Unknown keys are rejected so a typo never silently falls back to a default.

#include <fstream>
#include <string>

#include <json.hpp>

#include "vird/types.hpp"

namespace vird {

using json = nlohmann::ordered_json;

inline json to_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["data"] = {{"world_extent_m", c.data.world_extent_m},
               {"sat_px", c.data.sat_px},
               {"sat_res_m_per_px", c.data.sat_res_m_per_px},
               {"pano_h", c.data.pano_h},
               {"pano_w", c.data.pano_w},
               {"hfov_rad", c.data.hfov_rad},
               {"vfov_rad", c.data.vfov_rad},
               {"camera_height_m", c.data.camera_height_m},
               {"search_extent_m", c.data.search_extent_m},
               {"roads_min", c.data.roads_min},
               {"roads_max", c.data.roads_max},
               {"buildings_min", c.data.buildings_min},
               {"buildings_max", c.data.buildings_max},
               {"road_width_min_m", c.data.road_width_min_m},
               {"road_width_max_m", c.data.road_width_max_m},
               {"building_size_min_m", c.data.building_size_min_m},
               {"building_size_max_m", c.data.building_size_max_m},
               {"building_height_min_m", c.data.building_height_min_m},
               {"building_height_max_m", c.data.building_height_max_m}};
  j["polar"] = {{"r_min_m", c.polar.r_min_m}, {"r_max_m", c.polar.r_max_m}};
  j["encoder"] = {{"widths", c.encoder.widths},
                  {"c_d", c.encoder.c_d},
                  {"share_weights", c.encoder.share_weights},
                  {"mlp_hidden_mult", c.encoder.mlp_hidden_mult}};
  j["cepa"] = {{"d_p", c.cepa.d_p},
               {"d_k", c.cepa.d_k},
               {"h_q", c.cepa.h_q},
               {"pe_kind", c.cepa.pe_kind},
               {"phi_hidden", c.cepa.phi_hidden}};
  j["recon"] = {{"alpha1", c.recon.alpha1},
                {"alpha2", c.recon.alpha2},
                {"decoder_width", c.recon.decoder_width}};
  j["match"] = {{"tau", c.match.tau},
                {"train_grid", c.match.train_grid},
                {"train_ntheta", c.match.train_ntheta}};
  j["regression"] = {{"dx_max_m", c.regression.dx_max_m},
                     {"dy_max_m", c.regression.dy_max_m},
                     {"dtheta_max_rad", c.regression.dtheta_max_rad},
                     {"n_r", c.regression.n_r},
                     {"beta", c.regression.beta},
                     {"conv_widths", c.regression.conv_widths},
                     {"hidden", c.regression.hidden}};
  j["train"] = {{"epochs", c.train.epochs},
                {"batch_size", c.train.batch_size},
                {"lr", c.train.lr},
                {"jobs", c.train.jobs}};
  j["eval"] = {{"grid", c.eval.grid},
               {"ntheta", c.eval.ntheta},
               {"use_regression", c.eval.use_regression}};
  j["ablate"] = {{"cepa", c.ablate.cepa},
                 {"ce", c.ablate.ce},
                 {"recon_origin", c.ablate.recon_origin},
                 {"recon_cross", c.ablate.recon_cross},
                 {"regression", c.ablate.regression}};
  return j;
}

inline RunConfig config_from_json(const json& j) {
  RunConfig c;
  auto get = [](const json& o, const char* k, auto& out) {
    if (o.contains(k)) out = o.at(k).get<std::decay_t<decltype(out)>>();
  };
  get(j, "seed", c.seed);
  if (j.contains("data")) {
    const auto& d = j.at("data");
    get(d, "world_extent_m", c.data.world_extent_m);
    get(d, "sat_px", c.data.sat_px);
    get(d, "sat_res_m_per_px", c.data.sat_res_m_per_px);
    get(d, "pano_h", c.data.pano_h);
    get(d, "pano_w", c.data.pano_w);
    get(d, "hfov_rad", c.data.hfov_rad);
    get(d, "vfov_rad", c.data.vfov_rad);
    get(d, "camera_height_m", c.data.camera_height_m);
    get(d, "search_extent_m", c.data.search_extent_m);
    get(d, "roads_min", c.data.roads_min);
    get(d, "roads_max", c.data.roads_max);
    get(d, "buildings_min", c.data.buildings_min);
    get(d, "buildings_max", c.data.buildings_max);
    get(d, "road_width_min_m", c.data.road_width_min_m);
    get(d, "road_width_max_m", c.data.road_width_max_m);
    get(d, "building_size_min_m", c.data.building_size_min_m);
    get(d, "building_size_max_m", c.data.building_size_max_m);
    get(d, "building_height_min_m", c.data.building_height_min_m);
    get(d, "building_height_max_m", c.data.building_height_max_m);
  }
  if (j.contains("polar")) {
    get(j.at("polar"), "r_min_m", c.polar.r_min_m);
    get(j.at("polar"), "r_max_m", c.polar.r_max_m);
  }
  if (j.contains("encoder")) {
    const auto& e = j.at("encoder");
    get(e, "widths", c.encoder.widths);
    get(e, "c_d", c.encoder.c_d);
    get(e, "share_weights", c.encoder.share_weights);
    get(e, "mlp_hidden_mult", c.encoder.mlp_hidden_mult);
  }
  if (j.contains("cepa")) {
    const auto& e = j.at("cepa");
    get(e, "d_p", c.cepa.d_p);
    get(e, "d_k", c.cepa.d_k);
    get(e, "h_q", c.cepa.h_q);
    get(e, "pe_kind", c.cepa.pe_kind);
    get(e, "phi_hidden", c.cepa.phi_hidden);
  }
  if (j.contains("recon")) {
    const auto& e = j.at("recon");
    get(e, "alpha1", c.recon.alpha1);
    get(e, "alpha2", c.recon.alpha2);
    get(e, "decoder_width", c.recon.decoder_width);
  }
  if (j.contains("match")) {
    const auto& e = j.at("match");
    get(e, "tau", c.match.tau);
    get(e, "train_grid", c.match.train_grid);
    get(e, "train_ntheta", c.match.train_ntheta);
  }
  if (j.contains("regression")) {
    const auto& e = j.at("regression");
    get(e, "dx_max_m", c.regression.dx_max_m);
    get(e, "dy_max_m", c.regression.dy_max_m);
    get(e, "dtheta_max_rad", c.regression.dtheta_max_rad);
    get(e, "n_r", c.regression.n_r);
    get(e, "beta", c.regression.beta);
    get(e, "conv_widths", c.regression.conv_widths);
    get(e, "hidden", c.regression.hidden);
  }
  if (j.contains("train")) {
    const auto& e = j.at("train");
    get(e, "epochs", c.train.epochs);
    get(e, "batch_size", c.train.batch_size);
    get(e, "lr", c.train.lr);
    get(e, "jobs", c.train.jobs);
  }
  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    get(e, "grid", c.eval.grid);
    get(e, "ntheta", c.eval.ntheta);
    get(e, "use_regression", c.eval.use_regression);
  }
  if (j.contains("ablate")) {
    const auto& e = j.at("ablate");
    get(e, "cepa", c.ablate.cepa);
    get(e, "ce", c.ablate.ce);
    get(e, "recon_origin", c.ablate.recon_origin);
    get(e, "recon_cross", c.ablate.recon_cross);
    get(e, "regression", c.ablate.regression);
  }
  return c;
}

namespace detail {
inline void check_known_keys(const json& candidate, const json& reference, const std::string& path) {
  if (!candidate.is_object()) return;
  for (auto it = candidate.begin(); it != candidate.end(); ++it) {
    std::string full = path.empty() ? it.key() : path + "." + it.key();
    if (!reference.is_object() || !reference.contains(it.key()))
      throw ValidationError("unknown config key: " + full);
    if (it.value().is_object()) check_known_keys(it.value(), reference.at(it.key()), full);
  }
}
}  // namespace detail

/// Merges a partial JSON tree over the defaults; rejects unknown keys.
inline RunConfig merge_config(const RunConfig& base, const json& overlay) {
  detail::check_known_keys(overlay, to_json(RunConfig{}), "");
  json merged = to_json(base);
  merged.merge_patch(overlay);
  return config_from_json(merged);
}

inline RunConfig load_config_file(const RunConfig& base, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file: " + path);
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw ValidationError("config parse error in " + path + ": " + e.what());
  }
  return merge_config(base, j);
}

/// Applies one `dotted.path=value` override. Values are parsed as JSON when
/// possible (numbers, bools, arrays) and fall back to strings.
inline RunConfig apply_override(const RunConfig& base, const std::string& assignment) {
  auto eq = assignment.find('=');
  if (eq == std::string::npos)
    throw ValidationError("override must look like key.path=value: " + assignment);
  std::string path = assignment.substr(0, eq);
  std::string value = assignment.substr(eq + 1);
  if (path.empty()) throw ValidationError("override has empty key: " + assignment);

  json leaf = json::parse(value, nullptr, false);
  if (leaf.is_discarded()) leaf = value;

  json overlay = leaf;
  for (auto pos = path.rfind('.'); pos != std::string::npos; pos = path.rfind('.')) {
    json wrap;
    wrap[path.substr(pos + 1)] = overlay;
    overlay = std::move(wrap);
    path.resize(pos);
  }
  json root;
  root[path] = overlay;
  return merge_config(base, root);
}

inline void write_resolved_config(const RunConfig& c, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << to_json(c).dump(2) << "\n";
}

}  // namespace vird
