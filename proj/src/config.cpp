#include "mflow/config.hpp"

#include <fstream>

#include <fmt/format.h>

namespace mflow {

using nlohmann::json;

namespace {

json lbfgs_json(const LbfgsOptions& o) {
  return {{"memory", o.memory},
          {"max_iterations", o.max_iterations},
          {"energy_change_tolerance", o.energy_change_tolerance},
          {"armijo_c1", o.armijo_c1},
          {"shrink", o.shrink},
          {"max_halvings", o.max_halvings},
          {"curvature_floor", o.curvature_floor}};
}

LbfgsOptions lbfgs_from(const json& j) {
  LbfgsOptions o;
  o.memory = j.at("memory").get<int>();
  o.max_iterations = j.at("max_iterations").get<int>();
  o.energy_change_tolerance = j.at("energy_change_tolerance").get<double>();
  o.armijo_c1 = j.at("armijo_c1").get<double>();
  o.shrink = j.at("shrink").get<double>();
  o.max_halvings = j.at("max_halvings").get<int>();
  o.curvature_floor = j.at("curvature_floor").get<double>();
  return o;
}

/// Recursively overlays `src` onto `dst`, which fixes the key set and the
/// value kinds.
void overlay(json& dst, const json& src, const std::string& where) {
  if (!src.is_object()) throw ParseError(fmt::format("{} must be an object", where.empty() ? "config" : where));
  for (const auto& [key, value] : src.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    if (!dst.contains(key)) throw ParseError(fmt::format("unknown config key '{}'", path));
    json& slot = dst[key];
    if (slot.is_object()) {
      overlay(slot, value, path);
      continue;
    }
    const bool ok = (slot.is_number() && value.is_number() && (!slot.is_number_integer() || value.is_number_integer())) ||
                    (slot.is_boolean() && value.is_boolean()) || (slot.is_string() && value.is_string());
    if (!ok) throw ParseError(fmt::format("config key '{}' has the wrong type", path));
    if (slot.is_number_unsigned() && value.is_number_integer() && value.get<long long>() < 0)
      throw ParseError(fmt::format("config key '{}' must be non-negative", path));
    slot = value;
  }
}

}  // namespace

WarpMode parse_warp_mode(const std::string& name) {
  if (name == "random") return WarpMode::Random;
  if (name == "twist") return WarpMode::Twist;
  if (name == "mirror") return WarpMode::Mirror;
  throw ParseError(fmt::format("unknown warp mode '{}' (random, twist, mirror)", name));
}

std::string to_string(WarpMode mode) {
  switch (mode) {
    case WarpMode::Random: return "random";
    case WarpMode::Twist: return "twist";
    case WarpMode::Mirror: return "mirror";
  }
  return "unknown";
}

void RunConfig::validate() const {
  if (threads < 1) throw StructureError("threads must be at least 1");
  if (timesteps < 1) throw StructureError("timesteps must be at least 1");
  if (!(sigma > 0.0)) throw StructureError("sigma must be positive");
  if (affine_pairs < 4) throw StructureError("affine_pairs must be at least 4");
  if (warp.lattice < 2) throw StructureError("warp.lattice must be at least 2");
  if (warp.steps < 1) throw StructureError("warp.steps must be at least 1");
  if (!(warp.sigma >= 0.0)) throw StructureError("warp.sigma must be non-negative");
  if (raster.resolution < 2) throw StructureError("raster.resolution must be at least 2");
  if (!(raster.padding >= 0.0 && raster.padding < 0.5)) throw StructureError("raster.padding must lie in [0, 0.5)");
  if (gradcheck_instances < 1) throw StructureError("gradcheck.instances must be at least 1");
  if (gradcheck_steps < 1 || gradcheck_steps > 10) throw StructureError("gradcheck.steps must lie in [1, 10]");
  if (!(gradcheck_tolerance > 0.0)) throw StructureError("gradcheck.tolerance must be positive");
  schedule.validate();
}

json config_to_json(const RunConfig& c) {
  const auto& s = c.schedule;
  return {{"seed", c.seed},
          {"threads", c.threads},
          {"timesteps", c.timesteps},
          {"sigma", c.sigma},
          {"fit",
           {{"mu0", s.mu0},
            {"mu_scale", s.mu_scale},
            {"al_iterations", s.al_iterations},
            {"alpha", s.alpha},
            {"ssd_stage", s.ssd_stage},
            {"ssd_alpha", s.ssd_alpha},
            {"ssd_mu", s.ssd_mu},
            {"dice_refinement", s.dice_refinement},
            {"affine_pairs", c.affine_pairs},
            {"ssd_targets", c.affine_ssd_targets ? "affine" : "correspondences"},
            {"lbfgs", lbfgs_json(s.lbfgs)},
            {"ssd_lbfgs", lbfgs_json(s.ssd_lbfgs)}}},
          {"warp",
           {{"mode", to_string(c.warp.mode)},
            {"lattice", c.warp.lattice},
            {"magnitude", c.warp.magnitude},
            {"sigma", c.warp.sigma},
            {"steps", c.warp.steps}}},
          {"raster", {{"resolution", c.raster.resolution}, {"padding", c.raster.padding}}},
          {"gradcheck",
           {{"instances", c.gradcheck_instances},
            {"steps", c.gradcheck_steps},
            {"tolerance", c.gradcheck_tolerance}}}};
}

json default_config_json() { return config_to_json(RunConfig{}); }

RunConfig config_from_json(const json& overrides) {
  json doc = default_config_json();
  overlay(doc, overrides, "");
  try {
    RunConfig c;
    c.seed = doc.at("seed").get<std::uint64_t>();
    c.threads = doc.at("threads").get<int>();
    c.timesteps = doc.at("timesteps").get<int>();
    c.sigma = doc.at("sigma").get<double>();
    const json& f = doc.at("fit");
    c.schedule.mu0 = f.at("mu0").get<double>();
    c.schedule.mu_scale = f.at("mu_scale").get<double>();
    c.schedule.al_iterations = f.at("al_iterations").get<int>();
    c.schedule.alpha = f.at("alpha").get<double>();
    c.schedule.ssd_stage = f.at("ssd_stage").get<bool>();
    c.schedule.ssd_alpha = f.at("ssd_alpha").get<double>();
    c.schedule.ssd_mu = f.at("ssd_mu").get<double>();
    c.schedule.dice_refinement = f.at("dice_refinement").get<int>();
    c.affine_pairs = f.at("affine_pairs").get<int>();
    const auto targets = f.at("ssd_targets").get<std::string>();
    if (targets != "affine" && targets != "correspondences")
      throw ParseError(fmt::format("fit.ssd_targets must be 'correspondences' or 'affine', got '{}'", targets));
    c.affine_ssd_targets = targets == "affine";
    c.schedule.lbfgs = lbfgs_from(f.at("lbfgs"));
    c.schedule.ssd_lbfgs = lbfgs_from(f.at("ssd_lbfgs"));
    const json& w = doc.at("warp");
    c.warp.mode = parse_warp_mode(w.at("mode").get<std::string>());
    c.warp.lattice = w.at("lattice").get<int>();
    c.warp.magnitude = w.at("magnitude").get<double>();
    c.warp.sigma = w.at("sigma").get<double>();
    c.warp.steps = w.at("steps").get<int>();
    c.warp.seed = c.seed;
    const json& r = doc.at("raster");
    c.raster.resolution = r.at("resolution").get<int>();
    c.raster.padding = r.at("padding").get<double>();
    const json& g = doc.at("gradcheck");
    c.gradcheck_instances = g.at("instances").get<int>();
    c.gradcheck_steps = g.at("steps").get<int>();
    c.gradcheck_tolerance = g.at("tolerance").get<double>();
    return c;
  } catch (const json::exception& e) {
    throw ParseError(fmt::format("invalid config: {}", e.what()));
  }
}

RunConfig load_config(const std::filesystem::path& file, const std::vector<std::string>& overrides) {
  json doc = json::object();
  if (!file.empty()) {
    std::ifstream in(file);
    if (!in) throw ParseError(fmt::format("cannot open config {}", file.string()));
    try {
      doc = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ParseError(fmt::format("{}: {}", file.string(), e.what()));
    }
    if (!doc.is_object()) throw ParseError(fmt::format("{}: config must be a JSON object", file.string()));
  }
  for (const auto& item : overrides) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) throw ParseError(fmt::format("override '{}' is not key=value", item));
    const std::string key = item.substr(0, eq);
    const std::string text = item.substr(eq + 1);
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;
    json* node = &doc;
    std::size_t start = 0;
    while (true) {
      const auto dot = key.find('.', start);
      const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
      if (dot == std::string::npos) {
        (*node)[part] = value;
        break;
      }
      json& child = (*node)[part];
      if (child.is_null()) child = json::object();
      if (!child.is_object()) throw ParseError(fmt::format("override '{}' descends into a value", key));
      node = &child;
      start = dot + 1;
    }
  }
  RunConfig cfg = config_from_json(doc);
  cfg.validate();
  return cfg;
}

}  // namespace mflow
