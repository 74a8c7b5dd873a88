#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mflow/config.hpp"
#include "mflow/optimizer.hpp"

namespace mflow {

/// Greedy farthest-point sample of `count` indices, starting at index 0.
std::vector<int> farthest_point_indices(std::span<const Vec3> q, int count);

/// Fit of a template to a binary target. When `correspondences` is non-empty
/// it lists a target position per landmark and the SSD stage aims at them,
/// or, with `cfg.affine_ssd_targets`, at the template mapped by the affine
/// fit to `cfg.affine_pairs` of them picked by farthest-point sampling.
FitResult run_fit(const MedialTemplate& tpl, const VoxelGrid& target, const Points& correspondences,
                  const RunConfig& cfg, const std::function<void(const MetricsRow&)>& on_row = {});

/// Template of the synthetic branching experiment: three sheets with unequal
/// dihedral angles 100/120/140 degrees, scaled up from the BranchSpec defaults.
BranchSpec branch_experiment_spec();

/// Voxel Dice between the rasterized model at q and a binary target.
double voxel_dice(std::span<const Vec3> q, const TriMesh& boundary, const VoxelGrid& target);

struct GradcheckRecord {
  std::string term;  // kinetic, ssd, dice, constraint, k1_step
  int instance = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

/// Adjoint gradient against central differences along random directions for
/// every objective term on randomized small instances, plus the closed-form
/// single-landmark step. `corrupt` perturbs the adjoint gradient.
std::vector<GradcheckRecord> run_gradcheck(const RunConfig& cfg, bool corrupt = false);

struct MetricsSummary {
  std::size_t rows = 0;
  double final_dice = 0.0;
  bool has_dice = false;
  double max_deviation_deg = 0.0;
  double max_mismatch_pct = 0.0;
  /// Per Dice-stage AL iteration: last row of that iteration.
  std::vector<MetricsRow> al_ends;
  double first_dice_violation = 0.0;
  double final_violation = 0.0;
};

MetricsSummary summarize_metrics(const std::vector<MetricsRow>& rows);

}  // namespace mflow
