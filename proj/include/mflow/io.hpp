#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mflow/core.hpp"
#include "mflow/kernel.hpp"
#include "mflow/optimizer.hpp"

namespace mflow {

/// Point list:
///   mflow-points 1
///   count N
///   x y z            (N lines)
void write_points(const Points& points, const std::filesystem::path& path);
Points read_points(const std::filesystem::path& path);

/// Momentum field:
///   mflow-momenta 1
///   steps T landmarks k
///   x y z            (T * k lines, step-major)
void write_momenta(const MomentumField& u, const std::filesystem::path& path);
MomentumField read_momenta(const std::filesystem::path& path);

/// Metrics log with one header line and one row per inner iteration.
inline constexpr const char* kMetricsHeader =
    "stage,al_iter,inner_iter,E_total,attachment,kinetic,constraint_violation,max_spoke_normal_dev_deg,"
    "max_spoke_mismatch_pct";

std::string metrics_line(const MetricsRow& row);
void write_metrics(const std::vector<MetricsRow>& rows, const std::filesystem::path& path);
/// Throws ParseError naming the offending line.
std::vector<MetricsRow> read_metrics(const std::filesystem::path& path);

/// ASCII OBJ: `v x y z` for every landmark, `f i j k` (1-based) per triangle.
void write_obj(std::span<const Vec3> q, const TriMesh& mesh, const std::filesystem::path& path);

/// Writes `{name}_{step:03}.obj` for every node of the trajectory, for both
/// the boundary and the medial mesh.
void export_flow_meshes(const std::vector<Points>& trajectory, const MedialTemplate& tpl,
                        const std::filesystem::path& dir);

/// Shortest decimal text that reads back to the same double.
std::string format_real(double x);
double parse_real(std::string_view text);

}  // namespace mflow
