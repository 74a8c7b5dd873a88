#include "mflow/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <Eigen/Cholesky>
#include <fmt/format.h>

#include "mflow/constraints.hpp"
#include "mflow/flow.hpp"

namespace mflow {

namespace {

enum class VertexClass { Crest, Interior, Seam };

/// Medial sheets before inflation. Vertices are shared between sheets only
/// along the seam.
struct MedialComplex {
  Points position;
  std::vector<double> radius;
  std::vector<VertexClass> cls;
  // initial spoke directions: crest {outward}, interior {+ side, - side},
  // seam {wedge 0, wedge 1, wedge 2}
  std::vector<std::vector<Vec3>> spokes;
  std::vector<std::vector<Tri>> sheets;  // triangles per sheet, normal on the + side

  int add(const Vec3& p, double r, VertexClass c) {
    position.push_back(p);
    radius.push_back(r);
    cls.push_back(c);
    spokes.emplace_back();
    return static_cast<int>(position.size()) - 1;
  }
};

/// Triangulates an (m x n) grid of vertex ids. The default diagonal runs
/// (i, j)-(i+1, j+1); quads with a single non-crest corner use the other
/// diagonal when needed so no triangle has three crest vertices.
std::vector<Tri> triangulate_grid(const std::vector<std::vector<int>>& id, const MedialComplex& mc) {
  std::vector<Tri> tris;
  const int m = static_cast<int>(id.size());
  const int n = static_cast<int>(id[0].size());
  auto crest = [&](int v) { return mc.cls[v] == VertexClass::Crest; };
  for (int i = 0; i + 1 < m; ++i) {
    for (int j = 0; j + 1 < n; ++j) {
      const int v00 = id[i][j], v10 = id[i + 1][j], v01 = id[i][j + 1], v11 = id[i + 1][j + 1];
      const bool flip = (crest(v00) && crest(v11)) && !(crest(v10) && crest(v01));
      if (!flip) {
        tris.push_back({v00, v10, v11});
        tris.push_back({v00, v11, v01});
      } else {
        tris.push_back({v00, v10, v01});
        tris.push_back({v10, v11, v01});
      }
    }
  }
  return tris;
}

/// Moves the boundary landmarks onto the constraint manifold by Gauss-Newton
/// steps of minimum norm, so the constraints hold at rest up to rounding
/// while the surface stays as close as possible to its analytic placement.
void project_boundary(MedialTemplate& tpl) {
  const ConstraintSet cset(tpl, loop_tangent_operators(tpl.boundary, tpl.size()));
  const std::size_t nl = cset.size();
  if (nl == 0) return;
  const auto nb = static_cast<Eigen::Index>(tpl.boundary_count);
  Points q = tpl.landmarks.points();
  const double scale = diameter(q);
  const double tol = 1e-14 * scale * scale;
  std::vector<double> unit(nl, 0.0);
  Points row(q.size());
  Eigen::MatrixXd jac(static_cast<Eigen::Index>(nl), 3 * nb);
  double worst = 0.0;
  for (int iter = 0; iter < 100; ++iter) {
    const auto c = cset.evaluate(q);
    worst = 0.0;
    for (double x : c) worst = std::max(worst, std::abs(x));
    if (worst <= tol) break;
    for (std::size_t l = 0; l < nl; ++l) {
      std::fill(row.begin(), row.end(), Vec3::Zero());
      unit[l] = 1.0;
      cset.accumulate_gradient(q, unit, row);
      unit[l] = 0.0;
      for (Eigen::Index i = 0; i < nb; ++i) jac.row(static_cast<Eigen::Index>(l)).segment<3>(3 * i) = row[i];
    }
    const Eigen::VectorXd rhs = Eigen::Map<const Eigen::VectorXd>(c.data(), static_cast<Eigen::Index>(nl));
    const Eigen::MatrixXd normal = jac * jac.transpose();
    const Eigen::LDLT<Eigen::MatrixXd> ldlt(normal);
    if (ldlt.info() != Eigen::Success) throw DegenerateGeometryError("spoke placement has dependent constraints");
    const Eigen::VectorXd step = -jac.transpose() * ldlt.solve(rhs);
    for (Eigen::Index i = 0; i < nb; ++i) q[i] += step.segment<3>(3 * i);
  }
  if (worst > tol)
    throw DegenerateGeometryError(fmt::format("spoke placement did not converge (max residual {})", worst));
  tpl.landmarks = LandmarkSet(std::move(q));
}

/// Builds the template: boundary landmarks are created per medial vertex in
/// order (crest: 1, interior: +/- sides, seam: one per wedge), followed by
/// the medial landmarks.
MedialTemplate inflate(const MedialComplex& mc) {
  const int nm = static_cast<int>(mc.position.size());
  std::vector<std::vector<int>> tips(nm);
  Points boundary_pts;
  for (int v = 0; v < nm; ++v) {
    const Vec3& p = mc.position[v];
    const double r = mc.radius[v];
    auto add = [&](const Vec3& dir) {
      tips[v].push_back(static_cast<int>(boundary_pts.size()));
      boundary_pts.push_back(p + r * dir);
    };
    for (const auto& d : mc.spokes[v]) add(d);
  }
  const int nb = static_cast<int>(boundary_pts.size());

  // tip of medial vertex v seen from sheet a on side +1 / -1
  auto tip = [&](int v, int sheet, int side) {
    switch (mc.cls[v]) {
      case VertexClass::Crest: return tips[v][0];
      case VertexClass::Interior: return side > 0 ? tips[v][0] : tips[v][1];
      case VertexClass::Seam: return side > 0 ? tips[v][sheet] : tips[v][(sheet + 2) % 3];
    }
    return -1;
  };

  MedialTemplate tpl;
  tpl.boundary_count = nb;
  Points all = boundary_pts;
  all.insert(all.end(), mc.position.begin(), mc.position.end());
  tpl.landmarks = LandmarkSet(std::move(all));
  for (std::size_t a = 0; a < mc.sheets.size(); ++a) {
    for (const auto& t : mc.sheets[a]) {
      tpl.medial.triangles.push_back({nb + t[0], nb + t[1], nb + t[2]});
      const int s = static_cast<int>(a);
      tpl.boundary.triangles.push_back({tip(t[0], s, 1), tip(t[1], s, 1), tip(t[2], s, 1)});
      tpl.boundary.triangles.push_back({tip(t[0], s, -1), tip(t[2], s, -1), tip(t[1], s, -1)});
    }
  }
  std::vector<double> tuple_radius;
  for (int v = 0; v < nm; ++v) {
    tpl.tuples.push_back({nb + v, tips[v]});
    tuple_radius.push_back(mc.radius[v]);
  }

  const auto issues = structural_issues(tpl);
  if (!issues.empty()) throw StructureError("generated template is malformed: " + issues.front());
  project_boundary(tpl);

  const auto slack = inscribed_slack(tpl.landmarks.view(), tpl);
  for (std::size_t i = 0; i < slack.size(); ++i) {
    if (slack[i] < -1e-9 * tuple_radius[i])
      throw DegenerateGeometryError(
          fmt::format("tuple {} is not inscribed (slack {}); thickness exceeds the reach", i, slack[i]));
  }
  return tpl;
}

}  // namespace

MedialTemplate make_slab_template(const SlabSpec& spec) {
  if (spec.nx < 3 || spec.ny < 3) throw StructureError("slab grid needs at least 3x3 medial samples");
  if (!(spec.half_thickness > 0.0)) throw StructureError("slab half-thickness must be positive");
  if (!(spec.extent_x > 0.0) || !(spec.extent_y > 0.0)) throw StructureError("slab extent must be positive");
  const double kw = 2.0 * std::numbers::pi / spec.wavelength;
  if (spec.amplitude != 0.0) {
    if (!(spec.wavelength > 0.0)) throw StructureError("slab wavelength must be positive");
    const double max_curvature = std::abs(spec.amplitude) * kw * kw;
    if (spec.half_thickness * max_curvature >= 1.0)
      throw DegenerateGeometryError(fmt::format("half-thickness {} exceeds the sheet reach {}", spec.half_thickness,
                                                1.0 / max_curvature));
  }

  MedialComplex mc;
  std::vector<std::vector<int>> id(spec.nx, std::vector<int>(spec.ny));
  for (int i = 0; i < spec.nx; ++i) {
    for (int j = 0; j < spec.ny; ++j) {
      const double x = spec.extent_x * (static_cast<double>(i) / (spec.nx - 1) - 0.5);
      const double y = spec.extent_y * (static_cast<double>(j) / (spec.ny - 1) - 0.5);
      const double h = spec.amplitude * std::sin(kw * x);
      const double dh = spec.amplitude * kw * std::cos(kw * x);
      const bool crest = i == 0 || j == 0 || i == spec.nx - 1 || j == spec.ny - 1;
      const int v = mc.add(Vec3(x, y, h), spec.half_thickness, crest ? VertexClass::Crest : VertexClass::Interior);
      const Vec3 tx = Vec3(1.0, 0.0, dh).normalized();
      const Vec3 ty(0.0, 1.0, 0.0);
      if (crest) {
        Vec3 out = Vec3::Zero();
        if (i == 0) out -= tx;
        if (i == spec.nx - 1) out += tx;
        if (j == 0) out -= ty;
        if (j == spec.ny - 1) out += ty;
        mc.spokes[v] = {out.normalized()};
      } else {
        const Vec3 nrm = tx.cross(ty);
        mc.spokes[v] = {nrm, -nrm};
      }
      id[i][j] = v;
    }
  }
  mc.sheets.push_back(triangulate_grid(id, mc));
  return inflate(mc);
}

constexpr double kEndTaper = 0.15;

MedialTemplate make_branching_template(const BranchSpec& spec) {
  const int m = spec.seam_samples, n = spec.sheet_samples;
  if (m < 3 || n < 3) throw StructureError("branching template needs at least 3 samples along and across the seam");
  if (!(spec.seam_radius > 0.0) || !(spec.edge_radius > 0.0))
    throw StructureError("branching template radii must be positive");
  if (!(spec.seam_length > 0.0) || !(spec.sheet_width > 0.0))
    throw StructureError("branching template extents must be positive");
  double total = 0.0;
  for (double a : spec.dihedral_deg) {
    if (!(a > 0.0) || !(a < 180.0)) throw StructureError("dihedral angles must lie in (0, 180)");
    total += a;
  }
  if (std::abs(total - 360.0) > 1e-9) throw StructureError("dihedral angles must sum to 360 degrees");

  const double deg = std::numbers::pi / 180.0;
  std::array<double, 3> phi{};
  phi[0] = 90.0 * deg;
  phi[1] = phi[0] + spec.dihedral_deg[0] * deg;
  phi[2] = phi[1] + spec.dihedral_deg[1] * deg;
  auto dir = [](double a) { return Vec3(0.0, std::cos(a), std::sin(a)); };
  const Vec3 ex(1.0, 0.0, 0.0);

  // Seam spoke in wedge a leaves sheet a at angle psi[a]; the spokes of
  // sheet a then lean toward the seam by the same angle, which fixes the
  // radius slope -cos(psi[a]) at the seam.
  std::array<double, 3> psi{};
  for (int a = 0; a < 3; ++a)
    psi[a] = 0.5 * (spec.dihedral_deg[a] - spec.dihedral_deg[(a + 1) % 3] + spec.dihedral_deg[(a + 2) % 3]) * deg;
  for (double p : psi) {
    if (!(p > 0.0) || !(p < 0.5 * std::numbers::pi))
      throw StructureError("dihedral angles admit no seam tangency with three spokes");
  }
  const double drop = spec.seam_radius - spec.edge_radius;
  if (!(drop > 0.0)) throw StructureError("seam radius must exceed the edge radius");
  auto radius_at = [&](int a, double s) { return spec.edge_radius + drop * std::exp(-s * std::cos(psi[a]) / drop); };
  // rounds the two ends of the seam so their crest balls stay inscribed
  auto taper = [&](double x) { return 1.0 - kEndTaper * std::pow(2.0 * x / spec.seam_length, 4); };
  auto slope_at = [&](int a, double s) { return -std::cos(psi[a]) * std::exp(-s * std::cos(psi[a]) / drop); };

  MedialComplex mc;
  std::vector<int> seam(m);
  for (int i = 0; i < m; ++i) {
    const double x = spec.seam_length * (static_cast<double>(i) / (m - 1) - 0.5);
    const bool end = i == 0 || i == m - 1;
    const int v = mc.add(Vec3(x, 0.0, 0.0), spec.seam_radius * taper(x), end ? VertexClass::Crest : VertexClass::Seam);
    if (end) {
      mc.spokes[v] = {i == 0 ? -ex : ex};
    } else {
      for (int a = 0; a < 3; ++a) mc.spokes[v].push_back(dir(phi[a] + psi[a]));
    }
    seam[i] = v;
  }
  for (int a = 0; a < 3; ++a) {
    const Vec3 d = dir(phi[a]);
    const Vec3 nrm = ex.cross(d);
    std::vector<std::vector<int>> id(m, std::vector<int>(n));
    for (int i = 0; i < m; ++i) {
      id[i][0] = seam[i];
      for (int j = 1; j < n; ++j) {
        const double s = spec.sheet_width * j / (n - 1);
        const bool crest = i == 0 || i == m - 1 || j == n - 1;
        const int v = mc.add(mc.position[seam[i]] + s * d, radius_at(a, s) * taper(mc.position[seam[i]].x()),
                             crest ? VertexClass::Crest : VertexClass::Interior);
        if (crest) {
          Vec3 out = Vec3::Zero();
          if (i == 0) out -= ex;
          if (i == m - 1) out += ex;
          if (j == n - 1) out += d;
          mc.spokes[v] = {out.normalized()};
        } else {
          const double g = -slope_at(a, s);
          const double h = std::sqrt(1.0 - g * g);
          mc.spokes[v] = {g * d + h * nrm, g * d - h * nrm};
        }
        id[i][j] = v;
      }
    }
    mc.sheets.push_back(triangulate_grid(id, mc));
  }
  return inflate(mc);
}

SyntheticTarget make_mirrored_branch_target(const BranchSpec& spec, const RasterSpec& raster) {
  BranchSpec mirrored = spec;
  mirrored.dihedral_deg = {spec.dihedral_deg[0], spec.dihedral_deg[2], spec.dihedral_deg[1]};
  const MedialTemplate shape = make_branching_template(mirrored);
  return {rasterize(shape.landmarks.view(), shape.boundary, raster), shape.landmarks.points()};
}

double enclosed_volume(std::span<const Vec3> q, const TriMesh& mesh) {
  double vol = 0.0;
  for (const auto& t : mesh.triangles) vol += q[t[0]].dot(q[t[1]].cross(q[t[2]]));
  return vol / 6.0;
}

namespace {

struct ProjectedTri {
  std::array<int, 3> id;  // counter-clockwise in the (y, z) projection
  std::array<Vec3, 3> p;
};

/// Edge function of directed edge a->b at (y, z), computed from the
/// lower-index endpoint so both triangles sharing an edge agree bitwise.
double edge_fn(int ia, const Vec3& a, int ib, const Vec3& b, double y, double z) {
  const bool fwd = ia < ib;
  const Vec3& lo = fwd ? a : b;
  const Vec3& hi = fwd ? b : a;
  const double e = (hi.y() - lo.y()) * (z - lo.z()) - (hi.z() - lo.z()) * (y - lo.y());
  return fwd ? e : -e;
}

bool owns_edge(const Vec3& a, const Vec3& b) {
  const double dz = b.z() - a.z(), dy = b.y() - a.y();
  return dz < 0.0 || (dz == 0.0 && dy > 0.0);
}

}  // namespace

VoxelGrid rasterize_into(std::span<const Vec3> q, const TriMesh& boundary, VoxelGrid grid, bool reverse_ray) {
  if (!boundary.is_closed()) throw TopologyError("rasterization needs a closed boundary mesh");
  std::vector<ProjectedTri> tris;
  for (const auto& t : boundary.triangles) {
    ProjectedTri pt{t, {q[t[0]], q[t[1]], q[t[2]]}};
    const double area = (pt.p[1].y() - pt.p[0].y()) * (pt.p[2].z() - pt.p[0].z()) -
                        (pt.p[1].z() - pt.p[0].z()) * (pt.p[2].y() - pt.p[0].y());
    if (area == 0.0) continue;
    if (area < 0.0) {
      std::swap(pt.id[1], pt.id[2]);
      std::swap(pt.p[1], pt.p[2]);
    }
    tris.push_back(pt);
  }

  const auto& d = grid.dims();
  double fg = 0.0;
#pragma omp parallel for schedule(static) reduction(+ : fg)
  for (int row = 0; row < d[1] * d[2]; ++row) {
    const int j = row % d[1], k = row / d[1];
    const Vec3 c0 = grid.center(0, j, k);
    const double y = c0.y(), z = c0.z();
    std::vector<double> hits;
    for (const auto& t : tris) {
      double e[3];
      bool inside = true;
      for (int a = 0; a < 3 && inside; ++a) {
        const int b = (a + 1) % 3;
        e[a] = edge_fn(t.id[a], t.p[a], t.id[b], t.p[b], y, z);
        inside = e[a] > 0.0 || (e[a] == 0.0 && owns_edge(t.p[a], t.p[b]));
      }
      if (!inside) continue;
      const double sum = e[0] + e[1] + e[2];
      if (sum == 0.0) continue;
      // e[a] is opposite to vertex (a + 2) % 3
      hits.push_back((e[1] * t.p[0].x() + e[2] * t.p[1].x() + e[0] * t.p[2].x()) / sum);
    }
    std::sort(hits.begin(), hits.end());
    for (int i = 0; i < d[0]; ++i) {
      const double x = grid.center(i, j, k).x();
      std::size_t crossings = 0;
      if (reverse_ray) {
        crossings = static_cast<std::size_t>(std::lower_bound(hits.begin(), hits.end(), x) - hits.begin());
      } else {
        crossings = static_cast<std::size_t>(hits.end() - std::upper_bound(hits.begin(), hits.end(), x));
      }
      const double v = crossings % 2 == 1 ? 1.0 : 0.0;
      grid.values()[grid.index(i, j, k)] = v;
      fg += v;
    }
  }
  grid.recorded_foreground_count = fg;
  return grid;
}

VoxelGrid rasterize(std::span<const Vec3> q, const TriMesh& boundary, const RasterSpec& spec, bool reverse_ray) {
  if (spec.resolution < 2) throw StructureError("raster resolution must be at least 2");
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  for (int v : boundary.vertex_ids()) {
    lo = lo.cwiseMin(q[v]);
    hi = hi.cwiseMax(q[v]);
  }
  // Padding is rounded to whole voxels so the bounding box faces fall on
  // voxel boundaries.
  const int pad = static_cast<int>(std::lround(spec.padding * spec.resolution));
  const int inner = spec.resolution - 2 * pad;
  if (inner < 1) throw StructureError("raster padding leaves no voxels for the shape");
  const Vec3 extent = hi - lo;
  if (!(extent.minCoeff() > 0.0)) throw DegenerateGeometryError("boundary mesh is flat along an axis");
  const Vec3 spacing = extent / inner;
  const Vec3 origin = lo - (pad - 0.5) * spacing;
  VoxelGrid grid({spec.resolution, spec.resolution, spec.resolution}, spacing, origin);
  return rasterize_into(q, boundary, std::move(grid), reverse_ray);
}

Warp make_warp(const MedialTemplate& tpl, const WarpSpec& spec) {
  if (spec.lattice < 2) throw StructureError("warp lattice needs at least 2 points per axis");
  if (spec.steps < 1) throw StructureError("warp needs at least one timestep");
  const auto q = tpl.landmarks.view();
  Vec3 lo = q[0], hi = q[0];
  for (const auto& p : q) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const Vec3 center = 0.5 * (lo + hi);
  const Vec3 half = 0.6 * (hi - lo);
  const double diam = diameter(q);
  Warp warp{{}, {}, KernelConfig(spec.sigma > 0.0 ? spec.sigma : diam / 3.0)};

  const int n = spec.lattice;
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b)
      for (int c = 0; c < n; ++c) {
        const Vec3 t(2.0 * a / (n - 1) - 1.0, 2.0 * b / (n - 1) - 1.0, 2.0 * c / (n - 1) - 1.0);
        warp.control_points.push_back(center + half.cwiseProduct(t));
      }
  const std::size_t nc = warp.control_points.size();

  // desired displacement over unit time at each control point
  Points disp(nc, Vec3::Zero());
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t i = 0; i < nc; ++i) {
    const Vec3 r = warp.control_points[i] - center;
    switch (spec.mode) {
      case WarpMode::Random:
        disp[i] = spec.magnitude * diam * Vec3(normal(rng), normal(rng), normal(rng));
        break;
      case WarpMode::Twist: {
        const double angle = spec.magnitude * r.x() / std::max(half.x(), 1e-300);
        const Vec3 yz(0.0, r.y(), r.z());
        const Vec3 rotated(0.0, std::cos(angle) * r.y() - std::sin(angle) * r.z(),
                           std::sin(angle) * r.y() + std::cos(angle) * r.z());
        disp[i] = rotated - yz;
        break;
      }
      case WarpMode::Mirror: {
        // Rotates material about the x axis by an angle that grows away from
        // the +z direction, which permutes unequal dihedral gaps around the
        // axis the way a reflection through the xz-plane does.
        const double phi = std::atan2(r.z(), r.y());
        const double angle = spec.magnitude * 0.5 * (1.0 - std::cos(phi - 0.5 * std::numbers::pi));
        const Vec3 rotated(0.0, std::cos(angle) * r.y() - std::sin(angle) * r.z(),
                           std::sin(angle) * r.y() + std::cos(angle) * r.z());
        disp[i] = rotated - Vec3(0.0, r.y(), r.z());
        break;
      }
    }
  }
  // Momenta whose interpolated velocity reproduces the displacement at the
  // control points.
  Eigen::MatrixXd g = gram_matrix(warp.control_points, warp.kernel);
  g.diagonal().array() += 1e-8;
  Eigen::MatrixXd rhs(static_cast<Eigen::Index>(nc), 3);
  for (std::size_t i = 0; i < nc; ++i) rhs.row(static_cast<Eigen::Index>(i)) = disp[i].transpose();
  const Eigen::MatrixXd sol = g.ldlt().solve(rhs);
  warp.momenta = MomentumField(spec.steps, nc);
  for (int s = 0; s < spec.steps; ++s) {
    auto us = warp.momenta.at(s);
    for (std::size_t i = 0; i < nc; ++i) us[i] = sol.row(static_cast<Eigen::Index>(i)).transpose();
  }
  return warp;
}

SyntheticTarget make_synthetic_target(const MedialTemplate& tpl, const Warp& warp, const RasterSpec& raster) {
  const TimeGrid grid(warp.momenta.steps());
  const auto traj = forward_euler(warp.control_points, warp.momenta, grid, warp.kernel);
  const auto moved = transport_points(tpl.landmarks.view(), traj, warp.momenta, grid, warp.kernel);

  const auto cells = model_cells(tpl);
  double mean = 0.0;
  for (const auto& c : cells)
    mean += std::abs(signed_tet_volume(moved[0][c.v[0]], moved[0][c.v[1]], moved[0][c.v[2]], moved[0][c.v[3]]));
  mean /= static_cast<double>(std::max<std::size_t>(cells.size(), 1));
  for (std::size_t s = 1; s < moved.size(); ++s) {
    const auto& p = moved[s];
    for (const auto& c : cells) {
      if (c.sign * signed_tet_volume(p[c.v[0]], p[c.v[1]], p[c.v[2]], p[c.v[3]]) < -kFoldTolerance * mean)
        throw DegenerateGeometryError(fmt::format("warp folds the model at step {}; reduce its magnitude", s));
    }
  }
  SyntheticTarget out;
  out.landmarks = moved.back();
  out.image = rasterize(out.landmarks, tpl.boundary, raster);
  return out;
}

}  // namespace mflow
