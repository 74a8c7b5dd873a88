#include "mflow/template_io.hpp"

#include <fstream>

#include <fmt/format.h>

namespace mflow {

using nlohmann::json;

json template_to_json(const MedialTemplate& tpl) {
  json doc;
  doc["format"] = 1;
  doc["boundary_count"] = tpl.boundary_count;
  json pts = json::array();
  for (const auto& p : tpl.landmarks.points()) pts.push_back({p.x(), p.y(), p.z()});
  doc["landmarks"] = std::move(pts);
  doc["boundary_tris"] = tpl.boundary.triangles;
  doc["medial_tris"] = tpl.medial.triangles;
  json tuples = json::array();
  for (const auto& tu : tpl.tuples) tuples.push_back({{"medial", tu.medial}, {"boundary", tu.boundary}});
  doc["tuples"] = std::move(tuples);
  return doc;
}

MedialTemplate template_from_json(const json& doc) {
  try {
    if (doc.at("format").get<int>() != 1) throw ParseError("unsupported template format version");
    for (const auto& [key, value] : doc.items()) {
      if (key != "format" && key != "boundary_count" && key != "landmarks" && key != "boundary_tris" &&
          key != "medial_tris" && key != "tuples")
        throw ParseError(fmt::format("unknown template key '{}'", key));
    }
    Points pts;
    for (const auto& p : doc.at("landmarks")) {
      const auto xyz = p.get<std::array<double, 3>>();
      pts.emplace_back(xyz[0], xyz[1], xyz[2]);
    }
    MedialTemplate tpl;
    tpl.landmarks = LandmarkSet(std::move(pts));
    tpl.boundary_count = doc.at("boundary_count").get<int>();
    tpl.boundary.triangles = doc.at("boundary_tris").get<std::vector<Tri>>();
    tpl.medial.triangles = doc.at("medial_tris").get<std::vector<Tri>>();
    for (const auto& t : doc.at("tuples"))
      tpl.tuples.push_back({t.at("medial").get<int>(), t.at("boundary").get<std::vector<int>>()});
    return tpl;
  } catch (const json::exception& e) {
    throw ParseError(fmt::format("malformed template document: {}", e.what()));
  }
}

void write_template(const MedialTemplate& tpl, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ParseError(fmt::format("cannot open {} for writing", path.string()));
  out << template_to_json(tpl).dump(1) << '\n';
}

MedialTemplate read_template(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(fmt::format("cannot open {}", path.string()));
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(fmt::format("{}: {}", path.string(), e.what()));
  }
  return template_from_json(doc);
}

}  // namespace mflow
