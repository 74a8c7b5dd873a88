#pragma once

#include <array>
#include <cstdint>

#include "mflow/attachment.hpp"
#include "mflow/core.hpp"
#include "mflow/kernel.hpp"

namespace mflow {

/// Single medial sheet over [-extent_x/2, extent_x/2] x [-extent_y/2, extent_y/2],
/// optionally bent into z = amplitude * sin(2 pi x / wavelength).
struct SlabSpec {
  int nx = 9;
  int ny = 7;
  double extent_x = 8.0;
  double extent_y = 6.0;
  double half_thickness = 1.0;
  double amplitude = 0.0;
  double wavelength = 8.0;
};

/// Three planar sheets joined along a seam on the x axis. dihedral_deg[a]
/// is the angle between sheet a and sheet a+1 (mod 3); the three sum to 360.
/// Half-thickness decays from seam_radius at the seam toward edge_radius,
/// leaving the seam at the slope that makes three equal spokes tangent, and
/// narrows near both ends of the seam.
struct BranchSpec {
  int seam_samples = 8;
  int sheet_samples = 5;
  double seam_length = 6.0;
  double sheet_width = 3.5;
  std::array<double, 3> dihedral_deg{120.0, 120.0, 120.0};
  double seam_radius = 1.2;
  double edge_radius = 0.5;
};

MedialTemplate make_slab_template(const SlabSpec& spec);
MedialTemplate make_branching_template(const BranchSpec& spec);

struct RasterSpec {
  int resolution = 96;
  double padding = 0.1;  // fraction of the resolution added per side, rounded to whole voxels
};

/// Binary image of the closed boundary mesh at positions q, sampled at voxel
/// centers by ray parity along +x (or -x when `reverse_ray`).
VoxelGrid rasterize(std::span<const Vec3> q, const TriMesh& boundary, const RasterSpec& spec,
                    bool reverse_ray = false);
/// Same, on a caller-supplied lattice.
VoxelGrid rasterize_into(std::span<const Vec3> q, const TriMesh& boundary, VoxelGrid lattice,
                         bool reverse_ray = false);

enum class WarpMode { Random, Twist, Mirror };

/// Auxiliary diffeomorphic warp driven by a lattice of control points that
/// is independent of the template landmarks.
struct WarpSpec {
  WarpMode mode = WarpMode::Mirror;
  int lattice = 3;         // control points per axis over the padded bounding box
  double magnitude = 0.5;  // mode-dependent strength
  double sigma = 0.0;      // kernel width; 0 picks a third of the template diameter
  int steps = 40;
  std::uint64_t seed = 1;
};

struct Warp {
  Points control_points;
  MomentumField momenta;
  KernelConfig kernel;
};

Warp make_warp(const MedialTemplate& tpl, const WarpSpec& spec);

struct SyntheticTarget {
  VoxelGrid image;
  Points landmarks;  // exact warped positions of every template landmark
};

/// Transports the template through the warp, rejects folding warps, and
/// rasterizes the warped boundary.
SyntheticTarget make_synthetic_target(const MedialTemplate& tpl, const Warp& warp, const RasterSpec& raster);

/// Mirror image of a branching template, reposed by a rigid motion so that
/// sheet 0 keeps its place: the branch with dihedral angles (d0, d2, d1).
/// Landmarks correspond index by index to make_branching_template(spec).
SyntheticTarget make_mirrored_branch_target(const BranchSpec& spec, const RasterSpec& raster);

/// Volume enclosed by a closed, outward-oriented triangle mesh.
double enclosed_volume(std::span<const Vec3> q, const TriMesh& mesh);

}  // namespace mflow
