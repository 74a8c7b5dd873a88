#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "mflow/attachment.hpp"
#include "mflow/constraints.hpp"
#include "mflow/core.hpp"
#include "mflow/flow.hpp"
#include "mflow/kernel.hpp"

namespace mflow {

struct LbfgsOptions {
  int memory = 10;
  int max_iterations = 4000;
  double energy_change_tolerance = 1e-8;  // relative
  double armijo_c1 = 1e-4;
  double shrink = 0.5;
  int max_halvings = 40;
  double curvature_floor = 1e-10;  // pairs with y.s at or below this are skipped

  /// Throws StructureError if any field is out of range.
  void validate() const;
};

enum class LbfgsStatus { Converged, Stationary, MaxIterations, LineSearchFailed };

std::string to_string(LbfgsStatus status);

struct LbfgsResult {
  Eigen::VectorXd x;
  double energy = 0.0;
  std::vector<double> history;  // energy at x0, then after every iteration
  int iterations = 0;
  LbfgsStatus status = LbfgsStatus::MaxIterations;
};

/// Returns f(x) and writes the gradient. A non-finite value rejects the
/// trial point during the line search.
using LbfgsObjective = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd& grad)>;
/// Called after every accepted step with the iteration number (1-based).
using LbfgsObserver = std::function<void(int iteration, const Eigen::VectorXd& x, double energy)>;

LbfgsResult lbfgs_minimize(const LbfgsObjective& f, Eigen::VectorXd x0, const LbfgsOptions& opts,
                           const LbfgsObserver& observer = {});

/// x -> A x + b.
struct AffineMap {
  Eigen::Matrix3d A = Eigen::Matrix3d::Identity();
  Vec3 b = Vec3::Zero();

  Vec3 operator()(const Vec3& p) const { return A * p + b; }
};

/// Least-squares affine map taking source[i] to target[i]. Needs at least
/// four pairs whose sources are not coplanar.
AffineMap affine_fit(std::span<const Vec3> source, std::span<const Vec3> target);

/// Fits an affine map to the landmark pairs and applies it to every point.
Points affine_init(std::span<const Vec3> points, std::span<const Vec3> source, std::span<const Vec3> target);

struct FitSchedule {
  double mu0 = 0.001;
  double mu_scale = kDefaultMuScale;
  int al_iterations = 5;
  double alpha = 1000.0;       // Dice stage attachment weight
  bool ssd_stage = true;
  double ssd_alpha = 10.0;     // SSD stage attachment weight
  double ssd_mu = 1.0;
  int dice_refinement = 1;
  LbfgsOptions lbfgs;
  LbfgsOptions ssd_lbfgs;

  void validate() const;
};

struct FitTarget {
  std::shared_ptr<const VoxelGrid> image;
  std::optional<double> target_volume;  // overrides the image's foreground volume
  Points ssd_targets;                   // empty: no SSD stage
  std::vector<int> ssd_subset;          // empty: every landmark
};

enum class FitStage { Ssd, Dice };

std::string to_string(FitStage stage);

/// One line of the metrics log.
struct MetricsRow {
  FitStage stage = FitStage::Dice;
  int al_iter = 0;
  int inner_iter = 0;
  double total = 0.0;
  double attachment = 0.0;  // unweighted attachment value
  double kinetic = 0.0;
  double violation = 0.0;
  double max_deviation_deg = 0.0;
  double max_mismatch_pct = 0.0;
  double mu = 0.0;
  double dice = 0.0;
};

/// Constraint diagnostics over every node q^1 .. q^T of a trajectory.
struct FlowDiagnostics {
  double max_deviation_deg = 0.0;
  double max_mismatch_rel = 0.0;
};

FlowDiagnostics flow_diagnostics(const std::vector<Points>& trajectory, const MedialTemplate& tpl,
                                 const TangentOperators& ops);

struct FitResult {
  Trajectory trajectory;
  MomentumField momenta;
  ALState al;
  std::vector<MetricsRow> metrics;
  std::vector<std::string> warnings;
  std::vector<LbfgsStatus> inner_status;  // one per AL iteration run
  ObjectiveBreakdown final;
};

/// Two-stage augmented Lagrangian fit: an optional SSD stage at fixed mu,
/// then `al_iterations` Dice stages with multipliers starting at zero.
/// `on_row` sees every metrics row as soon as it is produced.
FitResult fit(const MedialTemplate& tpl, const FitTarget& target, const FitSchedule& schedule, const TimeGrid& grid,
              const KernelConfig& cfg, const std::function<void(const MetricsRow&)>& on_row = {});

}  // namespace mflow
