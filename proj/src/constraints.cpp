#include "mflow/constraints.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <fmt/format.h>

namespace mflow {

ConstraintSet::ConstraintSet(const MedialTemplate& tpl, TangentOperators ops) : ops_(std::move(ops)) {
  for (std::size_t i = 0; i < tpl.tuples.size(); ++i) {
    const auto& tu = tpl.tuples[i];
    if (!tu.constrained()) continue;
    const int n = static_cast<int>(tu.spoke_count());
    for (int j = 0; j < n; ++j) {
      if (!ops_.has(tu.boundary[j]))
        throw TopologyError(fmt::format("tuple {} spoke {} has no tangent stencil", i, j));
      for (int gamma = 1; gamma <= 2; ++gamma) {
        constraints_.push_back({static_cast<int>(i), ConstraintKind::Orthogonality, j, gamma,
                                tu.boundary[j], tu.medial, -1});
      }
    }
    for (int j = 1; j < n; ++j) {
      constraints_.push_back({static_cast<int>(i), ConstraintKind::EqualLength, j, 0, tu.boundary[j],
                              tu.medial, tu.boundary[0]});
    }
  }
}

std::vector<double> ConstraintSet::evaluate(std::span<const Vec3> q) const {
  std::vector<double> out(constraints_.size());
  for (std::size_t l = 0; l < constraints_.size(); ++l) {
    const auto& c = constraints_[l];
    const Vec3 spoke = q[c.boundary] - q[c.medial];
    if (c.kind == ConstraintKind::Orthogonality) {
      const auto& st = ops_.stencil(c.boundary);
      const auto& w = c.gamma == 1 ? st.w1 : st.w2;
      Vec3 t = Vec3::Zero();
      for (std::size_t j = 0; j < st.neighbors.size(); ++j) t += w[j] * q[st.neighbors[j]];
      out[l] = spoke.dot(t);
    } else {
      out[l] = spoke.squaredNorm() - (q[c.reference] - q[c.medial]).squaredNorm();
    }
  }
  return out;
}

void ConstraintSet::accumulate_gradient(std::span<const Vec3> q, std::span<const double> weights,
                                        std::span<Vec3> grad) const {
  for (std::size_t l = 0; l < constraints_.size(); ++l) {
    const double a = weights[l];
    if (a == 0.0) continue;
    const auto& c = constraints_[l];
    const Vec3 spoke = q[c.boundary] - q[c.medial];
    if (c.kind == ConstraintKind::Orthogonality) {
      const auto& st = ops_.stencil(c.boundary);
      const auto& w = c.gamma == 1 ? st.w1 : st.w2;
      Vec3 t = Vec3::Zero();
      for (std::size_t j = 0; j < st.neighbors.size(); ++j) {
        t += w[j] * q[st.neighbors[j]];
        grad[st.neighbors[j]] += (a * w[j]) * spoke;
      }
      grad[c.boundary] += a * t;
      grad[c.medial] -= a * t;
    } else {
      const Vec3 ref = q[c.reference] - q[c.medial];
      grad[c.boundary] += (2.0 * a) * spoke;
      grad[c.reference] -= (2.0 * a) * ref;
      grad[c.medial] += (2.0 * a) * (ref - spoke);
    }
  }
}

std::size_t expected_constraint_count(const MedialTemplate& tpl) {
  std::size_t total = 0;
  for (const auto& tu : tpl.tuples) {
    if (tu.constrained()) total += 3 * tu.spoke_count() - 1;
  }
  return total;
}

std::vector<double> evaluate_constraints(std::span<const Vec3> q, const MedialTemplate& tpl,
                                         const TangentOperators& ops) {
  return ConstraintSet(tpl, ops).evaluate(q);
}

ALState::ALState(std::size_t constraint_count, int steps, double mu, double mu_scale)
    : lambda_(constraint_count * static_cast<std::size_t>(steps), 0.0),
      count_(constraint_count),
      steps_(steps),
      mu_scale_(mu_scale) {
  if (steps < 1) throw StructureError("AL state needs at least one timestep");
  if (!(mu_scale > 0.0)) throw StructureError("mu scale must be positive");
  set_mu(mu);
}

void ALState::set_mu(double mu) {
  if (!(mu > 0.0) || !std::isfinite(mu)) throw StructureError(fmt::format("mu must be positive, got {}", mu));
  mu_ = mu;
}

std::size_t ALState::index(int s, std::size_t l) const {
  if (s < 1 || s > steps_ || l >= count_)
    throw StructureError(fmt::format("multiplier index (s={}, l={}) out of range", s, l));
  return static_cast<std::size_t>(s - 1) * count_ + l;
}

double penalty_and_multiplier_terms(std::span<const double> c, const ALState& al, int s) {
  const auto lam = al.lambda_row(s);
  double sum = 0.0;
  for (std::size_t l = 0; l < c.size(); ++l) sum += 0.5 * al.mu() * c[l] * c[l] - lam[l] * c[l];
  return sum;
}

ALState update_multipliers(const ALState& al, const std::vector<std::vector<double>>& c_per_step) {
  if (static_cast<int>(c_per_step.size()) != al.steps())
    throw StructureError("constraint samples do not match the AL time grid");
  ALState next = al;
  for (int s = 1; s <= al.steps(); ++s) {
    const auto& c = c_per_step[s - 1];
    if (c.size() != al.constraint_count()) throw StructureError("constraint count mismatch in multiplier update");
    for (std::size_t l = 0; l < c.size(); ++l) next.lambda(s, l) = al.lambda(s, l) - al.mu() * c[l];
  }
  next.set_mu(al.mu() * al.mu_scale());
  next.set_iteration(al.iteration() + 1);
  return next;
}

DeviationReport spoke_normal_deviation(std::span<const Vec3> q, const MedialTemplate& tpl,
                                       const TangentOperators& ops) {
  DeviationReport rep;
  rep.per_spoke_deg.resize(tpl.tuples.size());
  for (std::size_t i = 0; i < tpl.tuples.size(); ++i) {
    const auto& tu = tpl.tuples[i];
    if (!tu.constrained()) continue;
    for (int b : tu.boundary) {
      const auto [t1, t2] = ops.tangents(b, q);
      const Vec3 normal = t1.cross(t2);
      if (normal.norm() < 1e-12 * t1.norm() * t2.norm() || normal.norm() == 0.0)
        throw DegenerateGeometryError(fmt::format("degenerate tangent plane at boundary landmark {}", b));
      const Vec3 spoke = q[b] - q[tu.medial];
      const double angle = std::atan2(spoke.cross(normal).norm(), std::abs(spoke.dot(normal)));
      const double deg = angle * 180.0 / std::numbers::pi;
      rep.per_spoke_deg[i].push_back(deg);
      rep.max_deg = std::max(rep.max_deg, deg);
    }
  }
  return rep;
}

MismatchReport spoke_spoke_mismatch(std::span<const Vec3> q, const MedialTemplate& tpl) {
  MismatchReport rep;
  rep.per_tuple.assign(tpl.tuples.size(), 0.0);
  for (std::size_t i = 0; i < tpl.tuples.size(); ++i) {
    const auto& tu = tpl.tuples[i];
    if (!tu.constrained()) continue;
    double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
    for (int b : tu.boundary) {
      const double len = (q[b] - q[tu.medial]).norm();
      lo = std::min(lo, len);
      hi = std::max(hi, len);
    }
    if (lo <= 0.0) throw DegenerateGeometryError(fmt::format("tuple {} has a zero-length spoke", i));
    rep.per_tuple[i] = (hi - lo) / lo;
    rep.max_rel = std::max(rep.max_rel, rep.per_tuple[i]);
  }
  return rep;
}

std::vector<double> inscribed_slack(std::span<const Vec3> q, const MedialTemplate& tpl) {
  std::vector<double> slack(tpl.tuples.size());
  for (std::size_t i = 0; i < tpl.tuples.size(); ++i) {
    const auto& tu = tpl.tuples[i];
    const Vec3& m = q[tu.medial];
    double radius = std::numeric_limits<double>::infinity();
    for (int b : tu.boundary) radius = std::min(radius, (q[b] - m).norm());
    double nearest = std::numeric_limits<double>::infinity();
    for (int b = 0; b < tpl.boundary_count; ++b) nearest = std::min(nearest, (q[b] - m).norm());
    slack[i] = nearest - radius;
  }
  return slack;
}

}  // namespace mflow
