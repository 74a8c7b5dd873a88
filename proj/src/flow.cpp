#include "mflow/flow.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace mflow {

namespace {

static_assert(sizeof(Vec3) == 3 * sizeof(double), "flat momentum views require packed Vec3");

void check_dims(std::span<const Vec3> q0, const MomentumField& u, const TimeGrid& grid) {
  if (u.steps() != grid.steps() || u.landmarks() != q0.size())
    throw StructureError(fmt::format("momentum field is {}x{} but the flow needs {}x{}", u.steps(), u.landmarks(),
                                     grid.steps(), q0.size()));
}

double divergence_limit(std::span<const Vec3> q0, const KernelConfig& cfg) {
  return 1e6 * std::max(diameter(q0), cfg.sigma());
}

void guard_state(std::span<const Vec3> q, double limit, int step) {
  for (const auto& p : q) {
    if (!p.allFinite() || p.cwiseAbs().maxCoeff() > limit)
      throw DivergenceError(step, fmt::format("flow diverged at Euler step {}", step));
  }
}

}  // namespace

Trajectory forward_euler(std::span<const Vec3> q0, const MomentumField& u, const TimeGrid& grid,
                         const KernelConfig& cfg) {
  check_dims(q0, u, grid);
  const double dt = grid.dt();
  const double limit = divergence_limit(q0, cfg);
  Trajectory traj;
  traj.q.reserve(grid.steps() + 1);
  traj.q.emplace_back(q0.begin(), q0.end());
  Points v(q0.size());
  for (int s = 0; s < grid.steps(); ++s) {
    apply_gram(gram_matrix(traj.q[s], cfg), u.at(s), v);
    Points next(q0.size());
    for (std::size_t i = 0; i < q0.size(); ++i) next[i] = traj.q[s][i] + dt * v[i];
    guard_state(next, limit, s + 1);
    traj.q.push_back(std::move(next));
  }
  return traj;
}

std::vector<Points> transport_points(std::span<const Vec3> x0, const Trajectory& traj, const MomentumField& u,
                                     const TimeGrid& grid, const KernelConfig& cfg) {
  if (traj.steps() != grid.steps() || u.steps() != grid.steps() || traj.q[0].size() != u.landmarks())
    throw StructureError("trajectory, momenta and time grid disagree");
  const double dt = grid.dt();
  std::vector<Points> out;
  out.reserve(grid.steps() + 1);
  out.emplace_back(x0.begin(), x0.end());
  for (int s = 0; s < grid.steps(); ++s) {
    const auto& q = traj.q[s];
    const auto us = u.at(s);
    Points next(x0.size());
#pragma omp parallel for schedule(static)
    for (std::size_t p = 0; p < x0.size(); ++p) {
      const Vec3& x = out[s][p];
      double vx = 0.0, vy = 0.0, vz = 0.0;
      for (std::size_t j = 0; j < q.size(); ++j) {
        const double e = eta_sq((x - q[j]).squaredNorm(), cfg);
        vx += e * us[j].x();
        vy += e * us[j].y();
        vz += e * us[j].z();
      }
      next[p] = x + dt * Vec3(vx, vy, vz);
    }
    out.push_back(std::move(next));
  }
  return out;
}

Objective::Objective(Points q0, TimeGrid grid, KernelConfig cfg, AttachmentTerm attachment, double alpha,
                     std::optional<ConstraintTerm> constraints)
    : q0_(std::move(q0)),
      grid_(grid),
      cfg_(cfg),
      attachment_(std::move(attachment)),
      alpha_(alpha),
      constraints_(constraints) {
  if (q0_.empty()) throw StructureError("objective needs at least one landmark");
}

void Objective::set_attachment(AttachmentTerm a, double alpha) {
  attachment_ = std::move(a);
  alpha_ = alpha;
}

ObjectiveBreakdown Objective::value(const MomentumField& u) const { return evaluate(u, nullptr); }

ObjectiveBreakdown Objective::value_and_gradient(const MomentumField& u, MomentumField& grad) const {
  return evaluate(u, &grad);
}

ObjectiveBreakdown Objective::evaluate(const MomentumField& u, MomentumField* grad) const {
  check_dims(q0_, u, grid_);
  const int T = grid_.steps();
  const double dt = grid_.dt();
  const std::size_t k = q0_.size();
  const double limit = divergence_limit(q0_, cfg_);
  const ConstraintSet* cset = constraints_ ? constraints_->set : nullptr;
  const ALState* al = constraints_ ? constraints_->al : nullptr;
  if (cset && (!al || al->constraint_count() != cset->size() || al->steps() != T))
    throw StructureError("constraint term and AL state disagree");

  ObjectiveBreakdown out;
  std::vector<Points> q;
  q.reserve(T + 1);
  q.push_back(q0_);
  std::vector<Eigen::MatrixXd> grams;
  if (grad) grams.reserve(T);

  Points v(k);
  for (int s = 0; s < T; ++s) {
    Eigen::MatrixXd g = gram_matrix(q[s], cfg_);
    const auto us = u.at(s);
    apply_gram(g, us, v);
    double kin = 0.0;
    for (std::size_t i = 0; i < k; ++i) kin += us[i].dot(v[i]);
    out.kinetic += 0.5 * dt * kin;
    Points next(k);
    for (std::size_t i = 0; i < k; ++i) next[i] = q[s][i] + dt * v[i];
    guard_state(next, limit, s + 1);
    q.push_back(std::move(next));
    if (grad) grams.push_back(std::move(g));
  }

  if (cset) {
    out.constraint_values.resize(T);
    for (int s = 1; s <= T; ++s) {
      auto& c = out.constraint_values[s - 1];
      c = cset->evaluate(q[s]);
      out.constraint += dt * penalty_and_multiplier_terms(c, *al, s);
      double sq = 0.0;
      for (double x : c) sq += x * x;
      out.violation += dt * sq;
    }
  }

  const AttachmentResult att = evaluate_attachment(attachment_, q[T]);
  out.attachment_raw = att.value;
  out.attachment = alpha_ * att.value;
  out.dice = att.dice;
  out.folded_cells = att.folded_cells;
  out.total = out.attachment + out.kinetic + out.constraint;

  if (!grad) {
    out.trajectory = std::move(q);
    return out;
  }

  // Reverse sweep: p holds dE/dq_{s+1} while step s is processed.
  *grad = MomentumField(T, k);
  Points p(k);
  for (std::size_t i = 0; i < k; ++i) p[i] = alpha_ * att.gradient[i];
  auto add_constraint_gradient = [&](int s, Points& target) {
    if (!cset) return;
    const auto& c = out.constraint_values[s - 1];
    const auto lam = al->lambda_row(s);
    std::vector<double> weights(c.size());
    for (std::size_t l = 0; l < c.size(); ++l) weights[l] = dt * (al->mu() * c[l] - lam[l]);
    cset->accumulate_gradient(q[s], weights, target);
  };
  add_constraint_gradient(T, p);

  Points w(k), gw(k), p_prev(k);
  const double coef = dt * cfg_.inv_sigma_sq();
  for (int s = T - 1; s >= 0; --s) {
    const auto& g = grams[s];
    const auto us = u.at(s);
    const auto& qs = q[s];
    for (std::size_t i = 0; i < k; ++i) w[i] = us[i] + p[i];
    apply_gram(g, w, gw);
    auto gs = grad->at(s);
    for (std::size_t i = 0; i < k; ++i) gs[i] = dt * gw[i];

#pragma omp parallel for schedule(static)
    for (std::size_t i = 0; i < k; ++i) {
      const double* col = g.col(static_cast<Eigen::Index>(i)).data();
      Vec3 acc = Vec3::Zero();
      for (std::size_t j = 0; j < k; ++j) {
        if (j == i) continue;
        const double cij = p[i].dot(us[j]) + p[j].dot(us[i]) + us[i].dot(us[j]);
        acc += (col[j] * cij) * (qs[i] - qs[j]);
      }
      p_prev[i] = p[i] - coef * acc;
    }
    if (s >= 1) add_constraint_gradient(s, p_prev);
    std::swap(p, p_prev);
  }
  out.trajectory = std::move(q);
  return out;
}

ObjectiveBreakdown total_energy(const MomentumField& u, std::span<const Vec3> q0, const TimeGrid& grid,
                                const KernelConfig& cfg, const AttachmentTerm& attachment, double alpha,
                                std::optional<ConstraintTerm> constraints) {
  return Objective(Points(q0.begin(), q0.end()), grid, cfg, attachment, alpha, constraints).value(u);
}

MomentumField gradient(const MomentumField& u, std::span<const Vec3> q0, const TimeGrid& grid,
                       const KernelConfig& cfg, const AttachmentTerm& attachment, double alpha,
                       std::optional<ConstraintTerm> constraints) {
  MomentumField g;
  Objective(Points(q0.begin(), q0.end()), grid, cfg, attachment, alpha, constraints).value_and_gradient(u, g);
  return g;
}

}  // namespace mflow
