#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "mflow/errors.hpp"

namespace mflow {

using Vec3 = Eigen::Vector3d;
using Points = std::vector<Vec3>;
using Tri = std::array<int, 3>;

/// Stacked landmark positions. Holds k >= 1 finite points.
class LandmarkSet {
public:
  LandmarkSet() = default;
  explicit LandmarkSet(Points points);

  std::size_t size() const noexcept { return points_.size(); }
  const Vec3& operator[](std::size_t i) const { return points_[i]; }
  const Points& points() const noexcept { return points_; }
  std::span<const Vec3> view() const noexcept { return points_; }

private:
  Points points_;
};

/// Triangle mesh over landmark indices. Triangles carry global landmark
/// indices so the boundary and medial meshes share one index space.
struct TriMesh {
  std::vector<Tri> triangles;

  /// Sorted, unique landmark indices referenced by the triangles.
  std::vector<int> vertex_ids() const;
  /// Every undirected edge is used by exactly two triangles, once per direction.
  bool is_closed() const;
};

/// Indices of one medial point and its n >= 1 boundary tangency points.
struct MedialTuple {
  int medial = -1;
  std::vector<int> boundary;

  std::size_t spoke_count() const noexcept { return boundary.size(); }
  /// Only tuples with two or more spokes generate constraints.
  bool constrained() const noexcept { return boundary.size() > 1; }
};

/// Boundary landmarks come first, then medial landmarks; `boundary_count`
/// marks the split.
struct MedialTemplate {
  LandmarkSet landmarks;
  int boundary_count = 0;
  TriMesh boundary;
  TriMesh medial;
  std::vector<MedialTuple> tuples;

  std::size_t size() const noexcept { return landmarks.size(); }
  bool is_boundary(int idx) const noexcept { return idx >= 0 && idx < boundary_count; }
};

/// Lists every structural invariant the template violates (empty if none).
std::vector<std::string> structural_issues(const MedialTemplate& tpl);

/// Uniform Euler grid on [0, 1].
class TimeGrid {
public:
  explicit TimeGrid(int steps = 40);

  int steps() const noexcept { return steps_; }
  double dt() const noexcept { return dt_; }
  double time(int s) const noexcept { return s == steps_ ? 1.0 : s * dt_; }

private:
  int steps_;
  double dt_;
};

/// Sparse Loop tangent stencils, one per boundary vertex.
struct TangentStencil {
  std::vector<int> neighbors;  // cyclic order, starting at the lowest index
  std::vector<double> w1;      // cos(2 pi j / n)
  std::vector<double> w2;      // sin(2 pi j / n)
};

class TangentOperators {
public:
  TangentOperators() = default;
  TangentOperators(std::size_t landmark_count, std::vector<int> centers,
                   std::vector<TangentStencil> stencils);

  bool has(int vertex) const { return slot_.at(vertex) >= 0; }
  const TangentStencil& stencil(int vertex) const;

  /// First and second tangent vectors W1 q and W2 q at `vertex`.
  std::pair<Vec3, Vec3> tangents(int vertex, std::span<const Vec3> q) const;

  const std::vector<int>& centers() const noexcept { return centers_; }

private:
  std::vector<int> slot_;
  std::vector<int> centers_;
  std::vector<TangentStencil> stencils_;
};

TangentOperators loop_tangent_operators(const TriMesh& boundary, std::size_t landmark_count);

struct ValidationReport {
  std::vector<std::string> structural_errors;
  double max_spoke_normal_deviation_deg = 0.0;
  double max_spoke_mismatch = 0.0;  // relative, not percent
  double tol_angle_deg = 0.0;
  double tol_len_rel = 0.0;

  bool passed() const {
    return structural_errors.empty() && max_spoke_normal_deviation_deg <= tol_angle_deg &&
           max_spoke_mismatch <= tol_len_rel;
  }
};

inline constexpr double kDefaultTolAngleDeg = 0.01;
inline constexpr double kDefaultTolLenRel = 1e-4;

ValidationReport validate_template(const MedialTemplate& tpl,
                                   double tol_angle_deg = kDefaultTolAngleDeg,
                                   double tol_len_rel = kDefaultTolLenRel);

/// Medial landmark index owning each boundary landmark (-1 for medial landmarks).
std::vector<int> boundary_owner(const MedialTemplate& tpl);

double diameter(std::span<const Vec3> points);

}  // namespace mflow
