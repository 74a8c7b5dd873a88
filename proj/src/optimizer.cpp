#include "mflow/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>

#include <Eigen/QR>
#include <fmt/format.h>

namespace mflow {

void LbfgsOptions::validate() const {
  if (memory < 1) throw StructureError("LBFGS memory must be at least 1");
  if (max_iterations < 1) throw StructureError("LBFGS max_iterations must be at least 1");
  if (!(energy_change_tolerance > 0.0)) throw StructureError("LBFGS energy_change_tolerance must be positive");
  if (!(armijo_c1 > 0.0 && armijo_c1 < 1.0)) throw StructureError("LBFGS armijo_c1 must lie in (0, 1)");
  if (!(shrink > 0.0 && shrink < 1.0)) throw StructureError("LBFGS shrink must lie in (0, 1)");
  if (max_halvings < 1) throw StructureError("LBFGS max_halvings must be at least 1");
  if (!(curvature_floor > 0.0)) throw StructureError("LBFGS curvature_floor must be positive");
}

std::string to_string(LbfgsStatus status) {
  switch (status) {
    case LbfgsStatus::Converged: return "converged";
    case LbfgsStatus::Stationary: return "stationary";
    case LbfgsStatus::MaxIterations: return "max_iterations";
    case LbfgsStatus::LineSearchFailed: return "line_search_failed";
  }
  return "unknown";
}

LbfgsResult lbfgs_minimize(const LbfgsObjective& f, Eigen::VectorXd x0, const LbfgsOptions& opts,
                           const LbfgsObserver& observer) {
  opts.validate();
  const Eigen::Index n = x0.size();
  Eigen::VectorXd g(n);
  double fx = f(x0, g);
  if (!std::isfinite(fx) || !g.allFinite()) throw StructureError("objective is not finite at the starting point");

  LbfgsResult res;
  res.x = std::move(x0);
  res.energy = fx;
  res.history.push_back(fx);

  std::deque<Eigen::VectorXd> S, Y;
  std::deque<double> rho;
  Eigen::VectorXd d(n), xt(n), gt(n);
  std::vector<double> a;

  for (int it = 1; it <= opts.max_iterations; ++it) {
    res.iterations = it;
    if (g.squaredNorm() == 0.0) {
      res.status = LbfgsStatus::Stationary;
      return res;
    }
    // two-loop recursion
    d = -g;
    a.assign(S.size(), 0.0);
    for (std::size_t i = S.size(); i-- > 0;) {
      a[i] = rho[i] * S[i].dot(d);
      d -= a[i] * Y[i];
    }
    if (S.empty()) {
      d /= std::max(1.0, g.lpNorm<Eigen::Infinity>());
    } else {
      d *= S.back().dot(Y.back()) / Y.back().squaredNorm();
    }
    for (std::size_t i = 0; i < S.size(); ++i) {
      const double b = rho[i] * Y[i].dot(d);
      d += (a[i] - b) * S[i];
    }
    double slope = g.dot(d);
    if (!(slope < 0.0)) {
      S.clear();
      Y.clear();
      rho.clear();
      d = -g / std::max(1.0, g.lpNorm<Eigen::Infinity>());
      slope = g.dot(d);
    }

    double t = 1.0, ft = 0.0;
    bool accepted = false;
    for (int h = 0; h <= opts.max_halvings; ++h) {
      xt = res.x + t * d;
      ft = f(xt, gt);
      if (std::isfinite(ft) && gt.allFinite() && ft <= fx + opts.armijo_c1 * t * slope) {
        accepted = true;
        break;
      }
      t *= opts.shrink;
    }
    if (!accepted) {
      res.status = LbfgsStatus::LineSearchFailed;
      return res;
    }

    Eigen::VectorXd s = xt - res.x;
    Eigen::VectorXd y = gt - g;
    const double sy = s.dot(y);
    if (sy > opts.curvature_floor) {
      S.push_back(std::move(s));
      Y.push_back(std::move(y));
      rho.push_back(1.0 / sy);
      if (static_cast<int>(S.size()) > opts.memory) {
        S.pop_front();
        Y.pop_front();
        rho.pop_front();
      }
    }
    const double prev = fx;
    res.x = xt;
    g = gt;
    fx = ft;
    res.energy = fx;
    res.history.push_back(fx);
    if (observer) observer(it, res.x, fx);
    if (std::abs(prev - fx) <= opts.energy_change_tolerance * std::max(std::abs(prev), std::abs(fx))) {
      res.status = LbfgsStatus::Converged;
      return res;
    }
  }
  res.status = LbfgsStatus::MaxIterations;
  return res;
}

AffineMap affine_fit(std::span<const Vec3> source, std::span<const Vec3> target) {
  if (source.size() != target.size()) throw StructureError("affine fit needs equally many source and target points");
  if (source.size() < 4) throw StructureError("affine fit needs at least four landmark pairs");
  const auto n = static_cast<Eigen::Index>(source.size());
  Eigen::MatrixXd m(n, 4), rhs(n, 3);
  for (Eigen::Index i = 0; i < n; ++i) {
    m.row(i) << source[i].transpose(), 1.0;
    rhs.row(i) = target[i].transpose();
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(m);
  qr.setThreshold(1e-10);
  if (qr.rank() < 4) throw DegenerateGeometryError("affine landmarks are degenerate (coplanar or repeated)");
  const Eigen::MatrixXd x = qr.solve(rhs);
  AffineMap map;
  map.A = x.topRows(3).transpose();
  map.b = x.row(3).transpose();
  return map;
}

Points affine_init(std::span<const Vec3> points, std::span<const Vec3> source, std::span<const Vec3> target) {
  const AffineMap map = affine_fit(source, target);
  Points out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(map(p));
  return out;
}

void FitSchedule::validate() const {
  if (!(mu0 > 0.0)) throw StructureError("mu0 must be positive");
  if (!(mu_scale >= 1.0)) throw StructureError("mu_scale must be at least 1");
  if (al_iterations < 1) throw StructureError("al_iterations must be at least 1");
  if (!(alpha > 0.0)) throw StructureError("alpha must be positive");
  if (!(ssd_alpha > 0.0)) throw StructureError("ssd_alpha must be positive");
  if (!(ssd_mu > 0.0)) throw StructureError("ssd_mu must be positive");
  if (dice_refinement < 0 || dice_refinement > 4) throw StructureError("dice_refinement must lie in [0, 4]");
  lbfgs.validate();
  ssd_lbfgs.validate();
}

std::string to_string(FitStage stage) { return stage == FitStage::Ssd ? "ssd" : "dice"; }

FlowDiagnostics flow_diagnostics(const std::vector<Points>& trajectory, const MedialTemplate& tpl,
                                 const TangentOperators& ops) {
  FlowDiagnostics out;
  for (std::size_t s = 1; s < trajectory.size(); ++s) {
    out.max_deviation_deg = std::max(out.max_deviation_deg, spoke_normal_deviation(trajectory[s], tpl, ops).max_deg);
    out.max_mismatch_rel = std::max(out.max_mismatch_rel, spoke_spoke_mismatch(trajectory[s], tpl).max_rel);
  }
  return out;
}

FitResult fit(const MedialTemplate& tpl, const FitTarget& target, const FitSchedule& schedule, const TimeGrid& grid,
              const KernelConfig& cfg, const std::function<void(const MetricsRow&)>& on_row) {
  schedule.validate();
  const auto issues = structural_issues(tpl);
  if (!issues.empty()) throw StructureError("invalid template: " + issues.front());
  if (!target.image) throw StructureError("fit needs a target image");

  const auto ops = loop_tangent_operators(tpl.boundary, tpl.size());
  const ConstraintSet cset(tpl, ops);
  const std::size_t k = tpl.size();
  const int T = grid.steps();

  FitResult res;
  res.momenta = MomentumField(T, k);
  Objective obj(tpl.landmarks.points(), grid, cfg, NoAttachment{}, 1.0);

  auto record = [&](FitStage stage, int al_iter, int inner, const ALState& al, const ObjectiveBreakdown& b) {
    MetricsRow row;
    row.stage = stage;
    row.al_iter = al_iter;
    row.inner_iter = inner;
    row.total = b.total;
    row.attachment = b.attachment_raw;
    row.kinetic = b.kinetic;
    row.violation = b.violation;
    row.mu = al.mu();
    row.dice = b.dice;
    try {
      const auto diag = flow_diagnostics(b.trajectory, tpl, ops);
      row.max_deviation_deg = diag.max_deviation_deg;
      row.max_mismatch_pct = 100.0 * diag.max_mismatch_rel;
    } catch (const DegenerateGeometryError& e) {
      row.max_deviation_deg = 180.0;
      row.max_mismatch_pct = std::numeric_limits<double>::infinity();
      res.warnings.push_back(fmt::format("{} stage {}, iteration {}: {}", to_string(stage), al_iter, inner, e.what()));
    }
    res.metrics.push_back(row);
    if (on_row) on_row(row);
  };

  // Minimizes the current objective from the current momenta; returns the
  // breakdown at the accepted momenta.
  auto run = [&](FitStage stage, int al_iter, const ALState& al, const LbfgsOptions& opts) {
    obj.set_constraints(ConstraintTerm{&cset, &al});
    ObjectiveBreakdown start = obj.value(res.momenta);
    record(stage, al_iter, 0, al, start);

    MomentumField u = res.momenta, grad;
    ObjectiveBreakdown last;
    auto f = [&](const Eigen::VectorXd& x, Eigen::VectorXd& g) -> double {
      u.flat() = x;
      try {
        last = obj.value_and_gradient(u, grad);
      } catch (const DivergenceError&) {
        return std::numeric_limits<double>::infinity();
      }
      g = grad.flat();
      return last.total;
    };
    auto observe = [&](int it, const Eigen::VectorXd&, double) { record(stage, al_iter, it, al, last); };
    const LbfgsResult r = lbfgs_minimize(f, res.momenta.flat(), opts, observe);
    res.momenta.flat() = r.x;
    res.inner_status.push_back(r.status);
    if (r.status == LbfgsStatus::LineSearchFailed)
      res.warnings.push_back(fmt::format("{} stage {}: line search failed after {} iterations", to_string(stage),
                                         al_iter, r.iterations));
    ObjectiveBreakdown b = obj.value(res.momenta);
    if (b.folded_cells > 0)
      res.warnings.push_back(
          fmt::format("{} stage {}: {} folded cells at the final node", to_string(stage), al_iter, b.folded_cells));
    return b;
  };

  if (schedule.ssd_stage && !target.ssd_targets.empty()) {
    if (target.ssd_targets.size() != k) throw StructureError("SSD targets must list one point per landmark");
    SsdTerm term{target.ssd_targets, target.ssd_subset};
    if (term.subset.empty()) {
      term.subset.resize(k);
      for (std::size_t i = 0; i < k; ++i) term.subset[i] = static_cast<int>(i);
    }
    obj.set_attachment(std::move(term), schedule.ssd_alpha);
    const ALState al(cset.size(), T, schedule.ssd_mu, schedule.mu_scale);
    run(FitStage::Ssd, 1, al, schedule.ssd_lbfgs);
  }

  obj.set_attachment(make_dice_term(tpl, target.image, schedule.dice_refinement, target.target_volume),
                     schedule.alpha);
  ALState al(cset.size(), T, schedule.mu0, schedule.mu_scale);
  for (int m = 1; m <= schedule.al_iterations; ++m) {
    al.set_iteration(m);
    const ObjectiveBreakdown b = run(FitStage::Dice, m, al, schedule.lbfgs);
    if (m < schedule.al_iterations) al = update_multipliers(al, b.constraint_values);
  }
  obj.set_constraints(ConstraintTerm{&cset, &al});
  res.final = obj.value(res.momenta);
  res.trajectory = Trajectory{res.final.trajectory};
  res.al = al;
  return res;
}

}  // namespace mflow
