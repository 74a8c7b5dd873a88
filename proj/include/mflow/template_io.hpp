#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"

#include "mflow/core.hpp"

namespace mflow {

/// Template document (JSON, UTF-8):
///   { "format": 1,
///     "boundary_count": B,
///     "landmarks": [[x, y, z], ...],      // boundary landmarks first
///     "boundary_tris": [[i, j, k], ...],  // outward oriented
///     "medial_tris": [[i, j, k], ...],
///     "tuples": [{"medial": m, "boundary": [b, ...]}, ...] }
nlohmann::json template_to_json(const MedialTemplate& tpl);
MedialTemplate template_from_json(const nlohmann::json& doc);

void write_template(const MedialTemplate& tpl, const std::filesystem::path& path);
MedialTemplate read_template(const std::filesystem::path& path);

}  // namespace mflow
