#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "mflow/optimizer.hpp"
#include "mflow/synth.hpp"

namespace mflow {

/// Fit schedule tuned for the branching experiment geometry.
inline FitSchedule default_fit_schedule() {
  FitSchedule s;
  s.alpha = 202500.0;
  s.ssd_alpha = 202.5;
  s.lbfgs.max_iterations = 1000;
  s.ssd_lbfgs.max_iterations = 300;
  return s;
}

/// Settings for every command. The JSON document mirrors these fields; see
/// default_config_json() for the full key set.
struct RunConfig {
  std::uint64_t seed = 1;
  int threads = 1;
  int timesteps = 40;
  double sigma = 50.0;
  FitSchedule schedule = default_fit_schedule();
  int affine_pairs = 5;  // landmark pairs guiding the affine initialization
  /// SSD-stage targets: the supplied correspondences themselves, or the
  /// template mapped by the affine fit to `affine_pairs` of them.
  bool affine_ssd_targets = false;
  WarpSpec warp;
  RasterSpec raster;
  int gradcheck_instances = 3;
  int gradcheck_steps = 6;
  double gradcheck_tolerance = 1e-5;

  void validate() const;
};

nlohmann::json default_config_json();

/// Overlays `overrides` on the defaults; unknown keys and mistyped values
/// raise ParseError.
RunConfig config_from_json(const nlohmann::json& overrides);
nlohmann::json config_to_json(const RunConfig& cfg);

/// Reads an optional config file and applies `key=value` overrides, where
/// key is a dotted path such as fit.alpha and value is JSON text (bare words
/// are taken as strings).
RunConfig load_config(const std::filesystem::path& file, const std::vector<std::string>& overrides);

WarpMode parse_warp_mode(const std::string& name);
std::string to_string(WarpMode mode);

}  // namespace mflow
