#pragma once

#include <optional>
#include <span>
#include <vector>

#include "mflow/attachment.hpp"
#include "mflow/constraints.hpp"
#include "mflow/core.hpp"
#include "mflow/kernel.hpp"

namespace mflow {

/// Landmark positions at every Euler node; q[0] is the initial set.
struct Trajectory {
  std::vector<Points> q;

  int steps() const noexcept { return static_cast<int>(q.size()) - 1; }
  const Points& final() const { return q.back(); }
};

Trajectory forward_euler(std::span<const Vec3> q0, const MomentumField& u, const TimeGrid& grid,
                         const KernelConfig& cfg);

/// Carries arbitrary points through the flow defined by (traj, u).
std::vector<Points> transport_points(std::span<const Vec3> x0, const Trajectory& traj, const MomentumField& u,
                                     const TimeGrid& grid, const KernelConfig& cfg);

/// Constraint penalty used inside the objective: the constraint set plus the
/// current multipliers and weight.
struct ConstraintTerm {
  const ConstraintSet* set = nullptr;
  const ALState* al = nullptr;
};

struct ObjectiveBreakdown {
  double total = 0.0;
  double attachment = 0.0;      // alpha * g(q1)
  double attachment_raw = 0.0;  // g(q1)
  double dice = 0.0;            // DSC when the attachment is an image term
  double kinetic = 0.0;
  double constraint = 0.0;      // dt * sum_s penalty/multiplier integrand
  double violation = 0.0;       // dt * sum_s sum_l C_l^2
  std::vector<std::vector<double>> constraint_values;  // [s - 1][l], s = 1..T
  int folded_cells = 0;
  std::vector<Points> trajectory;  // q^0 .. q^T
};

/// The discrete objective: left Riemann sums on the Euler grid, attachment
/// at the final node, constraints sampled at s = 1..T.
class Objective {
public:
  Objective(Points q0, TimeGrid grid, KernelConfig cfg, AttachmentTerm attachment, double alpha,
            std::optional<ConstraintTerm> constraints = std::nullopt);

  ObjectiveBreakdown value(const MomentumField& u) const;
  ObjectiveBreakdown value_and_gradient(const MomentumField& u, MomentumField& grad) const;

  const TimeGrid& grid() const noexcept { return grid_; }
  const KernelConfig& kernel() const noexcept { return cfg_; }
  const Points& initial() const noexcept { return q0_; }
  std::size_t landmarks() const noexcept { return q0_.size(); }

  void set_constraints(std::optional<ConstraintTerm> c) { constraints_ = c; }
  void set_attachment(AttachmentTerm a, double alpha);

private:
  ObjectiveBreakdown evaluate(const MomentumField& u, MomentumField* grad) const;

  Points q0_;
  TimeGrid grid_;
  KernelConfig cfg_;
  AttachmentTerm attachment_;
  double alpha_;
  std::optional<ConstraintTerm> constraints_;
};

ObjectiveBreakdown total_energy(const MomentumField& u, std::span<const Vec3> q0, const TimeGrid& grid,
                                const KernelConfig& cfg, const AttachmentTerm& attachment, double alpha,
                                std::optional<ConstraintTerm> constraints = std::nullopt);

MomentumField gradient(const MomentumField& u, std::span<const Vec3> q0, const TimeGrid& grid,
                       const KernelConfig& cfg, const AttachmentTerm& attachment, double alpha,
                       std::optional<ConstraintTerm> constraints = std::nullopt);

}  // namespace mflow
