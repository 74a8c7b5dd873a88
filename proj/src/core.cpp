#include "mflow/core.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <set>

#include <fmt/format.h>

#include "mflow/constraints.hpp"

namespace mflow {

LandmarkSet::LandmarkSet(Points points) : points_(std::move(points)) {
  if (points_.empty()) throw StructureError("landmark set must contain at least one point");
  for (std::size_t i = 0; i < points_.size(); ++i) {
    if (!points_[i].allFinite())
      throw StructureError(fmt::format("landmark {} has a non-finite coordinate", i));
  }
}

std::vector<int> TriMesh::vertex_ids() const {
  std::vector<int> ids;
  ids.reserve(triangles.size() * 3);
  for (const auto& t : triangles) ids.insert(ids.end(), t.begin(), t.end());
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

bool TriMesh::is_closed() const {
  std::map<std::pair<int, int>, int> directed;
  for (const auto& t : triangles) {
    for (int e = 0; e < 3; ++e) {
      int a = t[e], b = t[(e + 1) % 3];
      if (++directed[{a, b}] > 1) return false;
    }
  }
  for (const auto& [edge, count] : directed) {
    auto it = directed.find({edge.second, edge.first});
    if (it == directed.end() || it->second != 1) return false;
  }
  return !triangles.empty();
}

std::vector<std::string> structural_issues(const MedialTemplate& tpl) {
  std::vector<std::string> issues;
  const int k = static_cast<int>(tpl.size());
  if (k == 0) {
    issues.emplace_back("template has no landmarks");
    return issues;
  }
  if (tpl.boundary_count <= 0 || tpl.boundary_count >= k)
    issues.push_back(fmt::format("boundary_count {} out of range (0, {})", tpl.boundary_count, k));

  auto check_mesh = [&](const TriMesh& mesh, const char* name, bool want_boundary) {
    for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
      const auto& tri = mesh.triangles[t];
      for (int v : tri) {
        if (v < 0 || v >= k) {
          issues.push_back(fmt::format("{} triangle {} references landmark {} out of range", name, t, v));
        } else if (tpl.is_boundary(v) != want_boundary) {
          issues.push_back(fmt::format("{} triangle {} references landmark {} of the wrong kind", name, t, v));
        }
      }
      if (tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2])
        issues.push_back(fmt::format("{} triangle {} repeats a vertex", name, t));
    }
  };
  check_mesh(tpl.boundary, "boundary", true);
  check_mesh(tpl.medial, "medial", false);
  if (!tpl.boundary.is_closed()) issues.emplace_back("boundary mesh is not closed and consistently oriented");

  std::vector<int> owner_count(k, 0);
  for (std::size_t i = 0; i < tpl.tuples.size(); ++i) {
    const auto& tu = tpl.tuples[i];
    if (tu.boundary.empty()) issues.push_back(fmt::format("tuple {} has no spokes", i));
    if (tu.medial < 0 || tu.medial >= k || tpl.is_boundary(tu.medial))
      issues.push_back(fmt::format("tuple {} medial index {} is not a medial landmark", i, tu.medial));
    std::set<int> seen;
    for (int b : tu.boundary) {
      if (b < 0 || b >= k || !tpl.is_boundary(b)) {
        issues.push_back(fmt::format("tuple {} boundary index {} is not a boundary landmark", i, b));
        continue;
      }
      if (!seen.insert(b).second) issues.push_back(fmt::format("tuple {} repeats boundary index {}", i, b));
      ++owner_count[b];
    }
  }
  for (int b = 0; b < std::min(tpl.boundary_count, k); ++b) {
    if (owner_count[b] != 1)
      issues.push_back(fmt::format("boundary landmark {} belongs to {} tuples (expected 1)", b, owner_count[b]));
  }
  if (issues.empty()) {
    for (std::size_t i = 0; i < tpl.tuples.size(); ++i) {
      const auto& tu = tpl.tuples[i];
      for (int b : tu.boundary) {
        if ((tpl.landmarks[b] - tpl.landmarks[tu.medial]).norm() <= 0.0)
          issues.push_back(fmt::format("tuple {} has a zero-length spoke to {}", i, b));
      }
    }
  }
  return issues;
}

TimeGrid::TimeGrid(int steps) : steps_(steps), dt_(0.0) {
  if (steps < 1) throw StructureError("time grid needs at least one step");
  dt_ = 1.0 / steps;
}

TangentOperators::TangentOperators(std::size_t landmark_count, std::vector<int> centers,
                                   std::vector<TangentStencil> stencils)
    : slot_(landmark_count, -1), centers_(std::move(centers)), stencils_(std::move(stencils)) {
  for (std::size_t s = 0; s < centers_.size(); ++s) slot_.at(centers_[s]) = static_cast<int>(s);
}

const TangentStencil& TangentOperators::stencil(int vertex) const {
  const int s = slot_.at(vertex);
  if (s < 0) throw TopologyError(fmt::format("no tangent stencil for landmark {}", vertex));
  return stencils_[s];
}

std::pair<Vec3, Vec3> TangentOperators::tangents(int vertex, std::span<const Vec3> q) const {
  const auto& st = stencil(vertex);
  Vec3 t1 = Vec3::Zero(), t2 = Vec3::Zero();
  for (std::size_t j = 0; j < st.neighbors.size(); ++j) {
    t1 += st.w1[j] * q[st.neighbors[j]];
    t2 += st.w2[j] * q[st.neighbors[j]];
  }
  return {t1, t2};
}

TangentOperators loop_tangent_operators(const TriMesh& boundary, std::size_t landmark_count) {
  // successor[v][a] = b  <=>  triangle (v, a, b) in counter-clockwise order around v
  std::map<int, std::map<int, int>> successor;
  for (const auto& t : boundary.triangles) {
    for (int e = 0; e < 3; ++e) {
      const int v = t[e], a = t[(e + 1) % 3], b = t[(e + 2) % 3];
      auto [it, inserted] = successor[v].emplace(a, b);
      if (!inserted) throw TopologyError(fmt::format("vertex {} has a non-manifold fan at edge ({}, {})", v, v, a));
    }
  }

  std::vector<int> centers;
  std::vector<TangentStencil> stencils;
  for (const auto& [v, next] : successor) {
    if (v < 0 || static_cast<std::size_t>(v) >= landmark_count)
      throw TopologyError(fmt::format("boundary vertex {} out of range", v));
    const int start = next.begin()->first;  // map keys are sorted: lowest-index neighbor
    TangentStencil st;
    int cur = start;
    do {
      st.neighbors.push_back(cur);
      auto it = next.find(cur);
      if (it == next.end())
        throw TopologyError(fmt::format("one-ring of vertex {} is not closed (open at {})", v, cur));
      cur = it->second;
      if (st.neighbors.size() > next.size())
        throw TopologyError(fmt::format("one-ring of vertex {} is not a simple cycle", v));
    } while (cur != start);
    if (st.neighbors.size() != next.size())
      throw TopologyError(fmt::format("one-ring of vertex {} splits into several cycles", v));
    const std::size_t n = st.neighbors.size();
    if (n < 3) throw TopologyError(fmt::format("vertex {} has valence {} < 3", v, n));
    for (std::size_t j = 0; j < n; ++j) {
      const double a = 2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(n);
      st.w1.push_back(std::cos(a));
      st.w2.push_back(std::sin(a));
    }
    centers.push_back(v);
    stencils.push_back(std::move(st));
  }
  return TangentOperators(landmark_count, std::move(centers), std::move(stencils));
}

ValidationReport validate_template(const MedialTemplate& tpl, double tol_angle_deg, double tol_len_rel) {
  ValidationReport rep;
  rep.tol_angle_deg = tol_angle_deg;
  rep.tol_len_rel = tol_len_rel;
  rep.structural_errors = structural_issues(tpl);
  if (!rep.structural_errors.empty()) return rep;

  TangentOperators ops;
  try {
    ops = loop_tangent_operators(tpl.boundary, tpl.size());
  } catch (const TopologyError& e) {
    rep.structural_errors.emplace_back(e.what());
    return rep;
  }
  const auto q = tpl.landmarks.view();
  try {
    rep.max_spoke_normal_deviation_deg = spoke_normal_deviation(q, tpl, ops).max_deg;
    rep.max_spoke_mismatch = spoke_spoke_mismatch(q, tpl).max_rel;
  } catch (const DegenerateGeometryError& e) {
    rep.structural_errors.emplace_back(e.what());
  }
  return rep;
}

std::vector<int> boundary_owner(const MedialTemplate& tpl) {
  std::vector<int> owner(tpl.size(), -1);
  for (const auto& tu : tpl.tuples)
    for (int b : tu.boundary) owner.at(b) = tu.medial;
  return owner;
}

double diameter(std::span<const Vec3> points) {
  if (points.empty()) return 0.0;
  Vec3 lo = points[0], hi = points[0];
  for (const auto& p : points) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  return (hi - lo).norm();
}

}  // namespace mflow
