#include "mflow/io.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

namespace mflow {

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ParseError(fmt::format("cannot open {} for writing", path.string()));
  return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(fmt::format("cannot open {}", path.string()));
  return in;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = s.find(sep, start);
    out.push_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::vector<std::string_view> words(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\r')) ++i;
    const std::size_t start = i;
    while (i < s.size() && s[i] != ' ' && s[i] != '\t' && s[i] != '\r') ++i;
    if (i > start) out.push_back(s.substr(start, i - start));
  }
  return out;
}

long parse_int(std::string_view text) {
  long v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size())
    throw ParseError(fmt::format("'{}' is not an integer", text));
  return v;
}

class LineReader {
public:
  LineReader(const std::filesystem::path& path) : in_(open_in(path)), name_(path.string()) {}

  std::string next() {
    std::string line;
    if (!std::getline(in_, line)) fail("unexpected end of file");
    ++number_;
    return line;
  }
  bool next(std::string& line) {
    if (!std::getline(in_, line)) return false;
    ++number_;
    return true;
  }
  [[noreturn]] void fail(const std::string& what) const {
    throw ParseError(fmt::format("{}:{}: {}", name_, number_, what));
  }
  template <typename F>
  auto guard(F&& f) const {
    try {
      return f();
    } catch (const ParseError& e) {
      fail(e.what());
    }
  }

private:
  std::ifstream in_;
  std::string name_;
  int number_ = 0;
};

Vec3 parse_xyz(const LineReader& r, std::string_view line) {
  const auto w = words(line);
  if (w.size() != 3) r.fail("expected three coordinates");
  return r.guard([&] { return Vec3(parse_real(w[0]), parse_real(w[1]), parse_real(w[2])); });
}

}  // namespace

std::string format_real(double x) { return fmt::format("{}", x); }

double parse_real(std::string_view text) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size())
    throw ParseError(fmt::format("'{}' is not a number", text));
  return v;
}

void write_points(const Points& points, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "mflow-points 1\n" << fmt::format("count {}\n", points.size());
  for (const auto& p : points) out << fmt::format("{} {} {}\n", p.x(), p.y(), p.z());
  if (!out) throw ParseError(fmt::format("failed writing {}", path.string()));
}

Points read_points(const std::filesystem::path& path) {
  LineReader r(path);
  if (r.next() != "mflow-points 1") r.fail("not a point file");
  const std::string header = r.next();
  const auto w = words(header);
  if (w.size() != 2 || w[0] != "count") r.fail("expected 'count N'");
  const long n = r.guard([&] { return parse_int(w[1]); });
  if (n < 0) r.fail("negative count");
  Points pts;
  pts.reserve(static_cast<std::size_t>(n));
  for (long i = 0; i < n; ++i) {
    const std::string line = r.next();
    pts.push_back(parse_xyz(r, line));
  }
  return pts;
}

void write_momenta(const MomentumField& u, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "mflow-momenta 1\n" << fmt::format("steps {} landmarks {}\n", u.steps(), u.landmarks());
  for (int s = 0; s < u.steps(); ++s)
    for (const auto& p : u.at(s)) out << fmt::format("{} {} {}\n", p.x(), p.y(), p.z());
  if (!out) throw ParseError(fmt::format("failed writing {}", path.string()));
}

MomentumField read_momenta(const std::filesystem::path& path) {
  LineReader r(path);
  if (r.next() != "mflow-momenta 1") r.fail("not a momentum file");
  const std::string header = r.next();
  const auto w = words(header);
  if (w.size() != 4 || w[0] != "steps" || w[2] != "landmarks") r.fail("expected 'steps T landmarks k'");
  const long steps = r.guard([&] { return parse_int(w[1]); });
  const long k = r.guard([&] { return parse_int(w[3]); });
  if (steps < 1 || k < 1) r.fail("steps and landmarks must be positive");
  MomentumField u(static_cast<int>(steps), static_cast<std::size_t>(k));
  for (int s = 0; s < steps; ++s) {
    auto us = u.at(s);
    for (long i = 0; i < k; ++i) {
      const std::string line = r.next();
      us[static_cast<std::size_t>(i)] = parse_xyz(r, line);
    }
  }
  return u;
}

std::string metrics_line(const MetricsRow& row) {
  return fmt::format("{},{},{},{},{},{},{},{},{}", to_string(row.stage), row.al_iter, row.inner_iter, row.total,
                     row.attachment, row.kinetic, row.violation, row.max_deviation_deg, row.max_mismatch_pct);
}

void write_metrics(const std::vector<MetricsRow>& rows, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << kMetricsHeader << '\n';
  for (const auto& row : rows) out << metrics_line(row) << '\n';
  if (!out) throw ParseError(fmt::format("failed writing {}", path.string()));
}

std::vector<MetricsRow> read_metrics(const std::filesystem::path& path) {
  LineReader r(path);
  std::string line;
  if (!r.next(line)) r.fail("empty metrics file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kMetricsHeader) r.fail("unexpected metrics header");
  std::vector<MetricsRow> rows;
  while (r.next(line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 9) r.fail(fmt::format("expected 9 fields, found {}", f.size()));
    MetricsRow row;
    if (f[0] == "ssd") {
      row.stage = FitStage::Ssd;
    } else if (f[0] == "dice") {
      row.stage = FitStage::Dice;
    } else {
      r.fail(fmt::format("unknown stage '{}'", f[0]));
    }
    r.guard([&] {
      row.al_iter = static_cast<int>(parse_int(f[1]));
      row.inner_iter = static_cast<int>(parse_int(f[2]));
      row.total = parse_real(f[3]);
      row.attachment = parse_real(f[4]);
      row.kinetic = parse_real(f[5]);
      row.violation = parse_real(f[6]);
      row.max_deviation_deg = parse_real(f[7]);
      row.max_mismatch_pct = parse_real(f[8]);
      return 0;
    });
    if (row.stage == FitStage::Dice) row.dice = 1.0 - row.attachment;
    rows.push_back(row);
  }
  return rows;
}

void write_obj(std::span<const Vec3> q, const TriMesh& mesh, const std::filesystem::path& path) {
  auto out = open_out(path);
  for (const auto& p : q) out << fmt::format("v {} {} {}\n", p.x(), p.y(), p.z());
  for (const auto& t : mesh.triangles) out << fmt::format("f {} {} {}\n", t[0] + 1, t[1] + 1, t[2] + 1);
  if (!out) throw ParseError(fmt::format("failed writing {}", path.string()));
}

void export_flow_meshes(const std::vector<Points>& trajectory, const MedialTemplate& tpl,
                        const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (std::size_t s = 0; s < trajectory.size(); ++s) {
    write_obj(trajectory[s], tpl.boundary, dir / fmt::format("boundary_{:03}.obj", s));
    write_obj(trajectory[s], tpl.medial, dir / fmt::format("medial_{:03}.obj", s));
  }
}

}  // namespace mflow
