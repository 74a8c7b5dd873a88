#include "mflow/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "mflow/flow.hpp"
#include "mflow/synth.hpp"

namespace mflow {

namespace {

constexpr double kBranchExperimentScale = 45.0;

/// Uniform double in [lo, hi) from the raw 64-bit stream, independent of the
/// standard library's distribution implementations.
class Uniform {
public:
  explicit Uniform(std::uint64_t seed) : rng_(seed) {}
  double operator()(double lo, double hi) {
    const double unit = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
    return lo + (hi - lo) * unit;
  }
  Vec3 vec(double half) { return Vec3((*this)(-half, half), (*this)(-half, half), (*this)(-half, half)); }

private:
  std::mt19937_64 rng_;
};

struct Instance {
  MedialTemplate tpl;
  Points q0;
  KernelConfig kernel;
  TimeGrid grid;
  MomentumField u;
  MomentumField direction;
};

Instance make_instance(std::uint64_t seed, int steps) {
  Uniform rnd(seed);
  SlabSpec spec;
  spec.nx = 3;
  spec.ny = 3;
  spec.extent_x = 2.0;
  spec.extent_y = 2.0;
  spec.half_thickness = 0.4;
  Instance in{make_slab_template(spec), {}, KernelConfig(rnd(0.8, 1.6)), TimeGrid(steps), {}, {}};
  in.q0 = in.tpl.landmarks.points();
  for (auto& p : in.q0) p += rnd.vec(0.05);
  const std::size_t k = in.q0.size();
  in.u = MomentumField(steps, k);
  in.direction = MomentumField(steps, k);
  for (int s = 0; s < steps; ++s) {
    for (auto& v : in.u.at(s)) v = rnd.vec(0.3);
    for (auto& v : in.direction.at(s)) v = rnd.vec(1.0);
  }
  in.direction.flat().normalize();
  return in;
}

enum class Term { Kinetic, Ssd, Dice, Constraint };

double term_value(Term t, const ObjectiveBreakdown& b) {
  switch (t) {
    case Term::Kinetic: return b.kinetic;
    case Term::Ssd:
    case Term::Dice: return b.attachment;
    case Term::Constraint: return b.constraint;
  }
  return 0.0;
}

GradcheckRecord check_term(Term t, const char* name, int instance, const Instance& in, const Objective& with,
                           const Objective& kinetic_only, bool corrupt) {
  MomentumField g, g0;
  with.value_and_gradient(in.u, g);
  double analytic = g.flat().dot(in.direction.flat());
  if (t != Term::Kinetic) {
    kinetic_only.value_and_gradient(in.u, g0);
    analytic -= g0.flat().dot(in.direction.flat());
  }
  if (corrupt) analytic *= 1.0 + 1e-3;

  auto at = [&](double h) {
    MomentumField v = in.u;
    v.flat() += h * in.direction.flat();
    return term_value(t, with.value(v));
  };
  const double h = 1e-4;
  const double numeric = (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h);
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-12});
  return {name, instance, analytic, numeric, std::abs(analytic - numeric) / scale};
}

}  // namespace

std::vector<int> farthest_point_indices(std::span<const Vec3> q, int count) {
  if (q.empty() || count < 1) return {};
  const auto n = static_cast<int>(q.size());
  count = std::min(count, n);
  std::vector<int> pick{0};
  std::vector<double> dist(q.size(), std::numeric_limits<double>::infinity());
  while (static_cast<int>(pick.size()) < count) {
    const Vec3& last = q[pick.back()];
    for (std::size_t i = 0; i < q.size(); ++i) dist[i] = std::min(dist[i], (q[i] - last).squaredNorm());
    pick.push_back(static_cast<int>(std::max_element(dist.begin(), dist.end()) - dist.begin()));
  }
  return pick;
}

FitResult run_fit(const MedialTemplate& tpl, const VoxelGrid& target, const Points& correspondences,
                  const RunConfig& cfg, const std::function<void(const MetricsRow&)>& on_row) {
  cfg.validate();
  FitTarget tg;
  tg.image = std::make_shared<VoxelGrid>(target);
  if (!correspondences.empty()) {
    if (correspondences.size() != tpl.size())
      throw StructureError("correspondence file must list one point per template landmark");
    if (cfg.affine_ssd_targets) {
      const auto q = tpl.landmarks.view();
      Points src, dst;
      for (int i : farthest_point_indices(q, cfg.affine_pairs)) {
        src.push_back(q[i]);
        dst.push_back(correspondences[i]);
      }
      tg.ssd_targets = affine_init(q, src, dst);
    } else {
      tg.ssd_targets = correspondences;
    }
  }
  return fit(tpl, tg, cfg.schedule, TimeGrid(cfg.timesteps), KernelConfig(cfg.sigma), on_row);
}

BranchSpec branch_experiment_spec() {
  BranchSpec s;
  const double scale = kBranchExperimentScale;
  s.seam_length *= scale;
  s.sheet_width *= scale;
  s.seam_radius *= scale;
  s.edge_radius *= scale;
  s.dihedral_deg = {100.0, 120.0, 140.0};
  return s;
}

double voxel_dice(std::span<const Vec3> q, const TriMesh& boundary, const VoxelGrid& target) {
  const VoxelGrid model = rasterize_into(q, boundary, target);
  double both = 0.0, a = 0.0, b = 0.0;
  for (std::size_t i = 0; i < model.values().size(); ++i) {
    const double m = model.values()[i] > 0.5 ? 1.0 : 0.0;
    const double t = target.values()[i] > 0.5 ? 1.0 : 0.0;
    both += m * t;
    a += m;
    b += t;
  }
  return a + b > 0.0 ? 2.0 * both / (a + b) : 1.0;
}

std::vector<GradcheckRecord> run_gradcheck(const RunConfig& cfg, bool corrupt) {
  cfg.validate();
  std::vector<GradcheckRecord> out;
  for (int n = 0; n < cfg.gradcheck_instances; ++n) {
    const std::uint64_t seed = cfg.seed * 1000003ULL + static_cast<std::uint64_t>(n);
    const Instance in = make_instance(seed, cfg.gradcheck_steps);
    Uniform rnd(seed ^ 0x9e3779b97f4a7c15ULL);

    const Objective kinetic(in.q0, in.grid, in.kernel, NoAttachment{}, 1.0);
    out.push_back(check_term(Term::Kinetic, "kinetic", n, in, kinetic, kinetic, corrupt));

    SsdTerm ssd_term;
    for (std::size_t i = 0; i < in.q0.size(); ++i) {
      ssd_term.targets.push_back(in.q0[i] + rnd.vec(0.5));
      ssd_term.subset.push_back(static_cast<int>(i));
    }
    const Objective ssd(in.q0, in.grid, in.kernel, ssd_term, rnd(0.5, 2.0));
    out.push_back(check_term(Term::Ssd, "ssd", n, in, ssd, kinetic, corrupt));

    Points warped = in.q0;
    for (auto& p : warped) p += Vec3(0.1, 0.05, 0.0);
    const VoxelGrid raw = rasterize(warped, in.tpl.boundary, RasterSpec{32, 0.3});
    auto image = std::make_shared<VoxelGrid>(smooth(smooth(raw)));
    const Objective dice(in.q0, in.grid, in.kernel, make_dice_term(in.tpl, image, 1), rnd(0.5, 2.0));
    out.push_back(check_term(Term::Dice, "dice", n, in, dice, kinetic, corrupt));

    const ConstraintSet cset(in.tpl, loop_tangent_operators(in.tpl.boundary, in.tpl.size()));
    ALState al(cset.size(), in.grid.steps(), rnd(0.5, 2.0));
    for (int s = 1; s <= in.grid.steps(); ++s)
      for (std::size_t l = 0; l < cset.size(); ++l) al.lambda(s, l) = rnd(-1.0, 1.0);
    const Objective constrained(in.q0, in.grid, in.kernel, NoAttachment{}, 1.0, ConstraintTerm{&cset, &al});
    out.push_back(check_term(Term::Constraint, "constraint", n, in, constrained, kinetic, corrupt));
  }

  // A single landmark under constant momentum moves by dt * u per step.
  Uniform rnd(cfg.seed);
  const TimeGrid grid(cfg.gradcheck_steps);
  const Points q0{rnd.vec(1.0)};
  MomentumField u(grid.steps(), 1);
  const Vec3 u0 = rnd.vec(1.0);
  for (int s = 0; s < grid.steps(); ++s) u.at(s)[0] = u0;
  const Trajectory traj = forward_euler(q0, u, grid, KernelConfig(rnd(0.5, 2.0)));
  double worst = 0.0;
  for (int s = 0; s < grid.steps(); ++s) {
    const Vec3 step = traj.q[s + 1][0] - traj.q[s][0];
    worst = std::max(worst, (step - grid.dt() * u0).norm() / (grid.dt() * u0.norm()));
  }
  out.push_back({"k1_step", 0, grid.dt() * u0.norm(), (traj.q[1][0] - traj.q[0][0]).norm(), worst});
  return out;
}

MetricsSummary summarize_metrics(const std::vector<MetricsRow>& rows) {
  MetricsSummary s;
  s.rows = rows.size();
  bool first_dice = true;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    s.max_deviation_deg = std::max(s.max_deviation_deg, r.max_deviation_deg);
    s.max_mismatch_pct = std::max(s.max_mismatch_pct, r.max_mismatch_pct);
    if (r.stage != FitStage::Dice) continue;
    if (first_dice) {
      s.first_dice_violation = r.violation;
      first_dice = false;
    }
    s.has_dice = true;
    s.final_dice = r.dice;
    s.final_violation = r.violation;
    const bool last_of_iteration =
        i + 1 == rows.size() || rows[i + 1].al_iter != r.al_iter || rows[i + 1].stage != r.stage;
    if (last_of_iteration) s.al_ends.push_back(r);
  }
  return s;
}

}  // namespace mflow
