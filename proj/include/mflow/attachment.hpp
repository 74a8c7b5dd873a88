#pragma once

#include <array>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <variant>
#include <vector>

#include "mflow/core.hpp"

namespace mflow {

/// Scalar image on a regular lattice. Voxel (i, j, k) has its center at
/// origin + (i sx, j sy, k sz); values are stored x-fastest.
class VoxelGrid {
public:
  VoxelGrid() = default;
  VoxelGrid(std::array<int, 3> dims, Vec3 spacing, Vec3 origin);

  const std::array<int, 3>& dims() const noexcept { return dims_; }
  const Vec3& spacing() const noexcept { return spacing_; }
  const Vec3& origin() const noexcept { return origin_; }
  double voxel_volume() const noexcept { return spacing_.prod(); }
  std::size_t voxel_count() const noexcept { return values_.size(); }

  std::size_t index(int i, int j, int k) const noexcept {
    return static_cast<std::size_t>(i) +
           static_cast<std::size_t>(dims_[0]) * (static_cast<std::size_t>(j) + static_cast<std::size_t>(dims_[1]) * k);
  }
  bool contains(int i, int j, int k) const noexcept {
    return i >= 0 && j >= 0 && k >= 0 && i < dims_[0] && j < dims_[1] && k < dims_[2];
  }
  /// Zero outside the lattice.
  double at(int i, int j, int k) const noexcept { return contains(i, j, k) ? values_[index(i, j, k)] : 0.0; }
  void set(int i, int j, int k, double v) { values_.at(index(i, j, k)) = v; }
  Vec3 center(int i, int j, int k) const { return origin_ + spacing_.cwiseProduct(Vec3(i, j, k)); }

  std::vector<double>& values() noexcept { return values_; }
  const std::vector<double>& values() const noexcept { return values_; }

  /// Sum of values times voxel volume.
  double foreground_volume() const;

  /// Foreground voxel count from the file header, if one was recorded.
  std::optional<double> recorded_foreground_count;

private:
  std::array<int, 3> dims_{0, 0, 0};
  Vec3 spacing_ = Vec3::Ones();
  Vec3 origin_ = Vec3::Zero();
  std::vector<double> values_;
};

void write_voxel_grid(const VoxelGrid& grid, const std::filesystem::path& path);
VoxelGrid read_voxel_grid(const std::filesystem::path& path);

/// One pass of separable [1/4, 1/2, 1/4] smoothing with zero padding.
VoxelGrid smooth(const VoxelGrid& grid);

struct Sample {
  double value = 0.0;
  Vec3 gradient = Vec3::Zero();
};

/// Trilinear interpolation over the zero-padded lattice. Far outside the
/// grid the result is (0, 0).
Sample trilinear_sample(const VoxelGrid& grid, const Vec3& x);

struct AttachmentResult {
  double value = 0.0;  // quantity to minimize: SSD, or 1 - DSC
  Points gradient;     // d value / d q1
  double dice = 0.0;   // DSC for image terms, 0 otherwise
  int folded_cells = 0;
};

struct SsdTerm {
  Points targets;           // one per landmark; only `subset` entries are used
  std::vector<int> subset;  // Upsilon
};

AttachmentResult ssd(std::span<const Vec3> q1, const SsdTerm& term);

/// Prism between a medial triangle and its boundary triangle on one side:
/// medial[v] and boundary[v] are the two ends of one spoke.
struct Wedge {
  std::array<int, 3> medial;
  std::array<int, 3> boundary;
};

/// Pairs each medial triangle with the two boundary triangles whose
/// vertices are spokes of its three tuples. Orders every wedge so that it
/// has positive volume in the rest configuration.
std::vector<Wedge> wedge_decomposition(const MedialTemplate& tpl);

/// One tetrahedron of the wedge decomposition: four landmark indices and
/// the orientation sign that makes its rest volume positive.
struct Cell {
  std::array<int, 4> v;
  double sign = 1.0;
};

/// Each wedge split into three tetrahedra along diagonals chosen from the
/// global medial indices, so shared prism faces are split consistently.
std::vector<Cell> wedge_cells(const std::vector<Wedge>& wedges);

/// Cells of the model interior: wedge cells without the degenerate ones.
std::vector<Cell> model_cells(const MedialTemplate& tpl);

/// A cell counts as folded when its oriented volume drops below
/// -kFoldTolerance times the mean absolute cell volume.
inline constexpr double kFoldTolerance = 1e-9;

double signed_tet_volume(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d);

/// Barycentric coordinates of sub-tetrahedron barycenters after `levels`
/// rounds of midpoint subdivision (8^levels entries, equal volumes).
std::vector<std::array<double, 4>> subdivision_barycenters(int levels);

struct DiceTerm {
  std::shared_ptr<const VoxelGrid> grid;
  double target_volume = 0.0;
  int refinement = 1;
  std::vector<Cell> cells;
};

DiceTerm make_dice_term(const MedialTemplate& tpl, std::shared_ptr<const VoxelGrid> grid, int refinement = 1,
                        std::optional<double> target_volume = std::nullopt);

/// Approximate Dice overlap of the model interior (the union of cells) with
/// the image foreground. Returns 1 - DSC and its gradient.
AttachmentResult dice(std::span<const Vec3> q1, const DiceTerm& term);

/// Volume of the model interior as the sum of absolute cell volumes.
double model_volume(std::span<const Vec3> q, const std::vector<Cell>& cells);

struct NoAttachment {};

using AttachmentTerm = std::variant<NoAttachment, SsdTerm, DiceTerm>;

AttachmentResult evaluate_attachment(const AttachmentTerm& term, std::span<const Vec3> q1);

}  // namespace mflow
