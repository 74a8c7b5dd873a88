#include "mflow/attachment.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include <fmt/format.h>

namespace mflow {

VoxelGrid::VoxelGrid(std::array<int, 3> dims, Vec3 spacing, Vec3 origin)
    : dims_(dims), spacing_(std::move(spacing)), origin_(std::move(origin)) {
  for (int d : dims_)
    if (d < 1) throw StructureError("voxel grid dimensions must be >= 1");
  if (!(spacing_.minCoeff() > 0.0) || !spacing_.allFinite()) throw StructureError("voxel spacing must be positive");
  if (!origin_.allFinite()) throw StructureError("voxel origin must be finite");
  values_.assign(static_cast<std::size_t>(dims_[0]) * dims_[1] * dims_[2], 0.0);
}

double VoxelGrid::foreground_volume() const {
  double sum = 0.0;
  for (double v : values_) sum += v;
  return sum * voxel_volume();
}

namespace {

constexpr const char* kVoxelMagic = "mflow-voxels 1";

}  // namespace

void write_voxel_grid(const VoxelGrid& grid, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError(fmt::format("cannot open {} for writing", path.string()));
  const auto& d = grid.dims();
  const auto& s = grid.spacing();
  const auto& o = grid.origin();
  out << kVoxelMagic << '\n';
  out << fmt::format("dims {} {} {}\n", d[0], d[1], d[2]);
  out << fmt::format("spacing {} {} {}\n", s.x(), s.y(), s.z());
  out << fmt::format("origin {} {} {}\n", o.x(), o.y(), o.z());
  if (grid.recorded_foreground_count) out << fmt::format("voxel_count_foreground {}\n", *grid.recorded_foreground_count);
  out << "data\n";
  std::vector<char> bytes(grid.voxel_count() * 4);
  for (std::size_t i = 0; i < grid.voxel_count(); ++i) {
    auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(grid.values()[i]));
    for (int b = 0; b < 4; ++b) bytes[4 * i + b] = static_cast<char>((bits >> (8 * b)) & 0xffu);
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ParseError(fmt::format("failed writing {}", path.string()));
}

VoxelGrid read_voxel_grid(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(fmt::format("cannot open {}", path.string()));
  std::string line;
  int line_no = 0;
  auto next_line = [&]() {
    if (!std::getline(in, line)) throw ParseError(fmt::format("{}: unexpected end of header", path.string()));
    ++line_no;
  };
  next_line();
  if (line != kVoxelMagic) throw ParseError(fmt::format("{}:1: not a voxel grid file", path.string()));

  std::optional<std::array<int, 3>> dims;
  std::optional<Vec3> spacing, origin;
  std::optional<double> fg;
  for (;;) {
    next_line();
    if (line == "data") break;
    std::istringstream ss(line);
    std::string key;
    ss >> key;
    auto fail = [&] { return ParseError(fmt::format("{}:{}: malformed header line '{}'", path.string(), line_no, line)); };
    if (key == "dims") {
      std::array<int, 3> v{};
      if (!(ss >> v[0] >> v[1] >> v[2])) throw fail();
      dims = v;
    } else if (key == "spacing" || key == "origin") {
      Vec3 v;
      if (!(ss >> v[0] >> v[1] >> v[2])) throw fail();
      (key == "spacing" ? spacing : origin) = v;
    } else if (key == "voxel_count_foreground") {
      double v = 0.0;
      if (!(ss >> v)) throw fail();
      fg = v;
    } else {
      throw ParseError(fmt::format("{}:{}: unknown header key '{}'", path.string(), line_no, key));
    }
  }
  if (!dims || !spacing || !origin) throw ParseError(fmt::format("{}: header misses dims/spacing/origin", path.string()));
  VoxelGrid grid(*dims, *spacing, *origin);
  grid.recorded_foreground_count = fg;
  std::vector<char> bytes(grid.voxel_count() * 4);
  in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size()))
    throw ParseError(fmt::format("{}: truncated voxel data", path.string()));
  for (std::size_t i = 0; i < grid.voxel_count(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[4 * i + b])) << (8 * b);
    grid.values()[i] = static_cast<double>(std::bit_cast<float>(bits));
  }
  return grid;
}

VoxelGrid smooth(const VoxelGrid& grid) {
  VoxelGrid cur = grid;
  const auto& d = grid.dims();
  for (int axis = 0; axis < 3; ++axis) {
    VoxelGrid next = cur;
    for (int k = 0; k < d[2]; ++k)
      for (int j = 0; j < d[1]; ++j)
        for (int i = 0; i < d[0]; ++i) {
          const int di = axis == 0, dj = axis == 1, dk = axis == 2;
          next.set(i, j, k,
                   0.25 * cur.at(i - di, j - dj, k - dk) + 0.5 * cur.at(i, j, k) + 0.25 * cur.at(i + di, j + dj, k + dk));
        }
    cur = std::move(next);
  }
  cur.recorded_foreground_count.reset();
  return cur;
}

Sample trilinear_sample(const VoxelGrid& grid, const Vec3& x) {
  const Vec3 u = (x - grid.origin()).cwiseQuotient(grid.spacing());
  const auto& d = grid.dims();
  for (int a = 0; a < 3; ++a)
    if (!(u[a] > -1.0 && u[a] < d[a])) return {};
  const int i0 = static_cast<int>(std::floor(u.x()));
  const int j0 = static_cast<int>(std::floor(u.y()));
  const int k0 = static_cast<int>(std::floor(u.z()));
  const double fx = u.x() - i0, fy = u.y() - j0, fz = u.z() - k0;

  double c[2][2][2];
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b)
      for (int e = 0; e < 2; ++e) c[a][b][e] = grid.at(i0 + a, j0 + b, k0 + e);

  // Interpolate along x, then y, then z; keep partial derivatives.
  double cx[2][2], cxd[2][2];
  for (int b = 0; b < 2; ++b)
    for (int e = 0; e < 2; ++e) {
      cx[b][e] = c[0][b][e] * (1 - fx) + c[1][b][e] * fx;
      cxd[b][e] = c[1][b][e] - c[0][b][e];
    }
  double cy[2], cyd_x[2], cyd_y[2];
  for (int e = 0; e < 2; ++e) {
    cy[e] = cx[0][e] * (1 - fy) + cx[1][e] * fy;
    cyd_x[e] = cxd[0][e] * (1 - fy) + cxd[1][e] * fy;
    cyd_y[e] = cx[1][e] - cx[0][e];
  }
  Sample s;
  s.value = cy[0] * (1 - fz) + cy[1] * fz;
  s.gradient = Vec3(cyd_x[0] * (1 - fz) + cyd_x[1] * fz, cyd_y[0] * (1 - fz) + cyd_y[1] * fz, cy[1] - cy[0])
                   .cwiseQuotient(grid.spacing());
  return s;
}

AttachmentResult ssd(std::span<const Vec3> q1, const SsdTerm& term) {
  if (term.subset.empty()) throw StructureError("SSD attachment needs a nonempty landmark subset");
  AttachmentResult r;
  r.gradient.assign(q1.size(), Vec3::Zero());
  for (int i : term.subset) {
    if (i < 0 || static_cast<std::size_t>(i) >= q1.size() || static_cast<std::size_t>(i) >= term.targets.size())
      throw StructureError(fmt::format("SSD subset index {} out of range", i));
    const Vec3 d = q1[i] - term.targets[i];
    r.value += d.squaredNorm();
    r.gradient[i] += 2.0 * d;
  }
  return r;
}

std::vector<Wedge> wedge_decomposition(const MedialTemplate& tpl) {
  const auto owner = boundary_owner(tpl);
  auto key = [](std::array<int, 3> t) {
    std::sort(t.begin(), t.end());
    return t;
  };
  std::map<std::array<int, 3>, std::vector<std::size_t>> by_medial;
  for (std::size_t t = 0; t < tpl.boundary.triangles.size(); ++t) {
    const auto& bt = tpl.boundary.triangles[t];
    std::array<int, 3> m{owner.at(bt[0]), owner.at(bt[1]), owner.at(bt[2])};
    by_medial[key(m)].push_back(t);
  }
  const auto q = tpl.landmarks.view();
  std::vector<Wedge> wedges;
  for (std::size_t f = 0; f < tpl.medial.triangles.size(); ++f) {
    const auto& mt = tpl.medial.triangles[f];
    auto it = by_medial.find(key(mt));
    if (it == by_medial.end() || it->second.size() != 2)
      throw TopologyError(fmt::format("medial triangle {} does not have exactly two boundary triangles", f));
    for (std::size_t t : it->second) {
      const auto& bt = tpl.boundary.triangles[t];
      Wedge w{mt, {}};
      for (int v = 0; v < 3; ++v) {
        for (int b : bt)
          if (owner[b] == mt[v]) w.boundary[v] = b;
      }
      // orient the prism so that its rest volume is positive
      double vol = 0.0;
      for (const auto& c : wedge_cells({w})) vol += c.sign * signed_tet_volume(q[c.v[0]], q[c.v[1]], q[c.v[2]], q[c.v[3]]);
      if (vol < 0.0) {
        std::swap(w.medial[1], w.medial[2]);
        std::swap(w.boundary[1], w.boundary[2]);
      }
      wedges.push_back(w);
    }
  }
  return wedges;
}

std::vector<Cell> wedge_cells(const std::vector<Wedge>& wedges) {
  std::vector<Cell> cells;
  cells.reserve(3 * wedges.size());
  for (const auto& w : wedges) {
    std::array<int, 3> order{0, 1, 2};
    std::sort(order.begin(), order.end(), [&](int x, int y) { return w.medial[x] < w.medial[y]; });
    // parity of the sorting permutation
    int inversions = 0;
    for (int x = 0; x < 3; ++x)
      for (int y = x + 1; y < 3; ++y) inversions += order[x] > order[y];
    const double parity = inversions % 2 == 0 ? 1.0 : -1.0;
    const int a = order[0], b = order[1], c = order[2];
    // Face (x, y) with x before y is split along m_x -> b_y.
    cells.push_back({{w.medial[a], w.medial[b], w.medial[c], w.boundary[c]}, parity});
    cells.push_back({{w.medial[a], w.medial[b], w.boundary[b], w.boundary[c]}, -parity});
    cells.push_back({{w.medial[a], w.boundary[a], w.boundary[b], w.boundary[c]}, parity});
  }
  return cells;
}

double signed_tet_volume(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d) {
  return (b - a).dot((c - a).cross(d - a)) / 6.0;
}

std::vector<std::array<double, 4>> subdivision_barycenters(int levels) {
  using Bary = Eigen::Vector4d;
  using Tet = std::array<Bary, 4>;
  std::vector<Tet> tets{{Bary(1, 0, 0, 0), Bary(0, 1, 0, 0), Bary(0, 0, 1, 0), Bary(0, 0, 0, 1)}};
  for (int l = 0; l < levels; ++l) {
    std::vector<Tet> next;
    next.reserve(tets.size() * 8);
    for (const auto& t : tets) {
      auto mid = [&](int x, int y) -> Bary { return 0.5 * (t[x] + t[y]); };
      const Bary m01 = mid(0, 1), m02 = mid(0, 2), m03 = mid(0, 3), m12 = mid(1, 2), m13 = mid(1, 3), m23 = mid(2, 3);
      next.push_back({t[0], m01, m02, m03});
      next.push_back({m01, t[1], m12, m13});
      next.push_back({m02, m12, t[2], m23});
      next.push_back({m03, m13, m23, t[3]});
      next.push_back({m02, m13, m01, m12});
      next.push_back({m02, m13, m12, m23});
      next.push_back({m02, m13, m23, m03});
      next.push_back({m02, m13, m03, m01});
    }
    tets = std::move(next);
  }
  std::vector<std::array<double, 4>> out;
  out.reserve(tets.size());
  for (const auto& t : tets) {
    const Bary c = 0.25 * (t[0] + t[1] + t[2] + t[3]);
    out.push_back({c[0], c[1], c[2], c[3]});
  }
  return out;
}

namespace {

/// Drops cells with a repeated landmark and pairs of cells that span the
/// same four landmarks with opposite orientation; both contribute nothing.
std::vector<Cell> cancel_opposite_pairs(const std::vector<Cell>& cells) {
  std::map<std::array<int, 4>, std::vector<std::size_t>> groups;
  std::vector<bool> drop(cells.size(), false);
  for (std::size_t c = 0; c < cells.size(); ++c) {
    auto key = cells[c].v;
    std::sort(key.begin(), key.end());
    if (std::adjacent_find(key.begin(), key.end()) != key.end()) {
      drop[c] = true;
      continue;
    }
    groups[key].push_back(c);
  }
  for (const auto& [key, ids] : groups) {
    if (ids.size() != 2) continue;
    auto orientation = [&](std::size_t c) {
      auto v = cells[c].v;
      int inv = 0;
      for (int x = 0; x < 4; ++x)
        for (int y = x + 1; y < 4; ++y) inv += v[x] > v[y];
      return (inv % 2 == 0 ? 1.0 : -1.0) * cells[c].sign;
    };
    if (orientation(ids[0]) == -orientation(ids[1])) drop[ids[0]] = drop[ids[1]] = true;
  }
  std::vector<Cell> out;
  for (std::size_t c = 0; c < cells.size(); ++c)
    if (!drop[c]) out.push_back(cells[c]);
  return out;
}

}  // namespace

std::vector<Cell> model_cells(const MedialTemplate& tpl) {
  return cancel_opposite_pairs(wedge_cells(wedge_decomposition(tpl)));
}

DiceTerm make_dice_term(const MedialTemplate& tpl, std::shared_ptr<const VoxelGrid> grid, int refinement,
                        std::optional<double> target_volume) {
  if (!grid) throw StructureError("Dice attachment needs a target grid");
  if (refinement < 0 || refinement > 4) throw StructureError("Dice refinement level must be in [0, 4]");
  DiceTerm term;
  term.target_volume = target_volume ? *target_volume
                       : grid->recorded_foreground_count
                           ? *grid->recorded_foreground_count * grid->voxel_volume()
                           : grid->foreground_volume();
  if (!(term.target_volume > 0.0)) throw StructureError("Dice target foreground volume must be positive");
  term.grid = std::move(grid);
  term.refinement = refinement;
  term.cells = model_cells(tpl);
  return term;
}

double model_volume(std::span<const Vec3> q, const std::vector<Cell>& cells) {
  double total = 0.0;
  for (const auto& c : cells) total += std::abs(c.sign * signed_tet_volume(q[c.v[0]], q[c.v[1]], q[c.v[2]], q[c.v[3]]));
  return total;
}

AttachmentResult dice(std::span<const Vec3> q1, const DiceTerm& term) {
  const auto bary = subdivision_barycenters(term.refinement);
  const double inv_n = 1.0 / static_cast<double>(bary.size());
  const std::size_t nc = term.cells.size();

  struct CellEval {
    double volume = 0.0;      // after fold handling
    double mean_value = 0.0;  // average sampled intensity
    std::array<Vec3, 4> dvol; // d volume / d vertex
    std::array<Vec3, 4> dval; // d (sum of samples) / d vertex, times 1/n
    bool folded = false;
  };
  std::vector<CellEval> ev(nc);

  double mean_abs = 0.0;
  for (const auto& c : term.cells)
    mean_abs += std::abs(signed_tet_volume(q1[c.v[0]], q1[c.v[1]], q1[c.v[2]], q1[c.v[3]]));
  mean_abs /= std::max<std::size_t>(nc, 1);

#pragma omp parallel for schedule(static)
  for (std::size_t ci = 0; ci < nc; ++ci) {
    const auto& c = term.cells[ci];
    const Vec3& a = q1[c.v[0]];
    const Vec3& b = q1[c.v[1]];
    const Vec3& cc = q1[c.v[2]];
    const Vec3& d = q1[c.v[3]];
    CellEval& e = ev[ci];
    double vol = c.sign * signed_tet_volume(a, b, cc, d);
    std::array<Vec3, 4> dv;
    dv[1] = (cc - a).cross(d - a) / 6.0;
    dv[2] = (d - a).cross(b - a) / 6.0;
    dv[3] = (b - a).cross(cc - a) / 6.0;
    dv[0] = -(dv[1] + dv[2] + dv[3]);
    double s = c.sign;
    if (vol < -kFoldTolerance * mean_abs) {
      e.folded = true;
      vol = -vol;
      s = -s;
    }
    e.volume = vol;
    for (int v = 0; v < 4; ++v) e.dvol[v] = s * dv[v];

    double sum = 0.0;
    std::array<Vec3, 4> dsum{Vec3::Zero(), Vec3::Zero(), Vec3::Zero(), Vec3::Zero()};
    for (const auto& w : bary) {
      const Vec3 x = w[0] * a + w[1] * b + w[2] * cc + w[3] * d;
      const Sample smp = trilinear_sample(*term.grid, x);
      sum += smp.value;
      for (int v = 0; v < 4; ++v) dsum[v] += w[v] * smp.gradient;
    }
    e.mean_value = sum * inv_n;
    for (int v = 0; v < 4; ++v) e.dval[v] = dsum[v] * inv_n;
  }

  double v_model = 0.0, overlap = 0.0;
  AttachmentResult r;
  for (const auto& e : ev) {
    v_model += e.volume;
    overlap += e.volume * e.mean_value;
    r.folded_cells += e.folded;
  }
  const double denom = v_model + term.target_volume;
  r.dice = 2.0 * overlap / denom;
  r.value = 1.0 - r.dice;

  // d(1 - DSC) = -2 dO / denom + 2 O / denom^2 dV
  const double c_overlap = -2.0 / denom;
  const double c_volume = 2.0 * overlap / (denom * denom);
  r.gradient.assign(q1.size(), Vec3::Zero());
  for (std::size_t ci = 0; ci < nc; ++ci) {
    const auto& c = term.cells[ci];
    const auto& e = ev[ci];
    for (int v = 0; v < 4; ++v) {
      const Vec3 d_overlap = e.dvol[v] * e.mean_value + e.volume * e.dval[v];
      r.gradient[c.v[v]] += c_overlap * d_overlap + c_volume * e.dvol[v];
    }
  }
  return r;
}

AttachmentResult evaluate_attachment(const AttachmentTerm& term, std::span<const Vec3> q1) {
  return std::visit(
      [&](const auto& t) -> AttachmentResult {
        using T = std::decay_t<decltype(t)>;
        if constexpr (std::is_same_v<T, NoAttachment>) {
          AttachmentResult r;
          r.gradient.assign(q1.size(), Vec3::Zero());
          return r;
        } else if constexpr (std::is_same_v<T, SsdTerm>) {
          return ssd(q1, t);
        } else {
          return dice(q1, t);
        }
      },
      term);
}

}  // namespace mflow
