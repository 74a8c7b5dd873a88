#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include <fmt/format.h>

#include "doctest.h"
#include "helpers.hpp"
#include "mflow/config.hpp"
#include "mflow/io.hpp"
#include "mflow/pipeline.hpp"
#include "mflow/template_io.hpp"

using namespace mflow;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() : path(fs::temp_directory_path() / fmt::format("mflow_io_{}", reinterpret_cast<std::uintptr_t>(this))) {
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("reals round-trip through their shortest text") {
  mflow::test::Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const double x = rng.uniform(-1, 1) * std::pow(10.0, rng.uniform(-300, 300));
    CHECK(parse_real(format_real(x)) == x);
  }
  CHECK(parse_real(format_real(0.1)) == 0.1);
  CHECK_THROWS_AS(parse_real("1.5x"), ParseError);
  CHECK_THROWS_AS(parse_real(""), ParseError);
}

TEST_CASE("point and momentum files round-trip exactly") {
  TempDir dir;
  mflow::test::Rng rng(2);
  Points pts(17);
  for (auto& p : pts) p = rng.vec(1e3);
  write_points(pts, dir.path / "p.txt");
  CHECK(read_points(dir.path / "p.txt") == pts);

  MomentumField u(4, 6);
  for (int s = 0; s < 4; ++s)
    for (auto& v : u.at(s)) v = rng.vec(1e-7);
  write_momenta(u, dir.path / "u.txt");
  CHECK(read_momenta(dir.path / "u.txt") == u);
}

TEST_CASE("malformed point files report the line") {
  TempDir dir;
  write_text(dir.path / "bad.txt", "mflow-points 1\ncount 2\n1 2 3\n4 five 6\n");
  try {
    read_points(dir.path / "bad.txt");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("bad.txt:4:") != std::string::npos);
  }
  write_text(dir.path / "short.txt", "mflow-points 1\ncount 3\n1 2 3\n");
  CHECK_THROWS_AS(read_points(dir.path / "short.txt"), ParseError);
}

TEST_CASE("template files round-trip") {
  TempDir dir;
  BranchSpec s;
  s.dihedral_deg = {100.0, 120.0, 140.0};
  const auto tpl = make_branching_template(s);
  write_template(tpl, dir.path / "t.mtpl");
  const auto back = read_template(dir.path / "t.mtpl");
  CHECK(back.landmarks.points() == tpl.landmarks.points());
  CHECK(back.boundary_count == tpl.boundary_count);
  CHECK(back.boundary.triangles == tpl.boundary.triangles);
  CHECK(back.medial.triangles == tpl.medial.triangles);
  REQUIRE(back.tuples.size() == tpl.tuples.size());
  for (std::size_t i = 0; i < tpl.tuples.size(); ++i) {
    CHECK(back.tuples[i].medial == tpl.tuples[i].medial);
    CHECK(back.tuples[i].boundary == tpl.tuples[i].boundary);
  }
  write_template(back, dir.path / "t2.mtpl");
  CHECK(read_text(dir.path / "t.mtpl") == read_text(dir.path / "t2.mtpl"));
}

TEST_CASE("metrics CSV round trip, summary and malformed rows") {
  TempDir dir;
  std::vector<MetricsRow> rows;
  for (int m = 1; m <= 3; ++m)
    for (int it = 0; it < 4; ++it) {
      MetricsRow r;
      r.stage = FitStage::Dice;
      r.al_iter = m;
      r.inner_iter = it;
      r.total = 1.0 / (m + it + 1);
      r.attachment = 0.1 / (it + 1);
      r.kinetic = 0.3 * it;
      r.violation = std::pow(10.0, -m - 0.1 * it);
      r.max_deviation_deg = 0.5 * m + 0.01 * it;
      r.max_mismatch_pct = 3.0 / (m * (it + 1));
      rows.push_back(r);
    }
  write_metrics(rows, dir.path / "m.csv");
  const auto back = read_metrics(dir.path / "m.csv");
  REQUIRE(back.size() == rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) CHECK(metrics_line(back[i]) == metrics_line(rows[i]));

  const auto s = summarize_metrics(back);
  double dev = 0.0, mis = 0.0;
  for (const auto& r : rows) {
    dev = std::max(dev, r.max_deviation_deg);
    mis = std::max(mis, r.max_mismatch_pct);
  }
  CHECK(s.max_deviation_deg == dev);
  CHECK(s.max_mismatch_pct == mis);
  CHECK(s.al_ends.size() == 3);
  CHECK(s.final_dice == 1.0 - rows.back().attachment);
  CHECK(s.first_dice_violation == rows.front().violation);

  std::string text = read_text(dir.path / "m.csv");
  text += "dice,4,0,1,2\n";
  write_text(dir.path / "bad.csv", text);
  try {
    read_metrics(dir.path / "bad.csv");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("bad.csv:14:") != std::string::npos);
  }
  write_text(dir.path / "hdr.csv", "a,b,c\n");
  CHECK_THROWS_AS(read_metrics(dir.path / "hdr.csv"), ParseError);
}

TEST_CASE("OBJ export writes every landmark and 1-based faces") {
  TempDir dir;
  const auto tpl = mflow::test::flat_slab(3, 3, 0.5);
  write_obj(tpl.landmarks.view(), tpl.boundary, dir.path / "b.obj");
  std::ifstream in(dir.path / "b.obj");
  std::string tag;
  std::size_t v = 0, f = 0;
  int lowest = 1 << 30;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    ls >> tag;
    if (tag == "v") ++v;
    if (tag == "f") {
      ++f;
      int a, b, c;
      ls >> a >> b >> c;
      lowest = std::min({lowest, a, b, c});
    }
  }
  CHECK(v == tpl.size());
  CHECK(f == tpl.boundary.triangles.size());
  CHECK(lowest >= 1);

  std::vector<Points> traj{tpl.landmarks.points(), tpl.landmarks.points()};
  export_flow_meshes(traj, tpl, dir.path / "flow");
  CHECK(fs::exists(dir.path / "flow" / "boundary_000.obj"));
  CHECK(fs::exists(dir.path / "flow" / "medial_001.obj"));
}

TEST_CASE("configuration defaults, overrides and rejection") {
  TempDir dir;
  const RunConfig d = load_config({}, {});
  CHECK(d.schedule.mu_scale == 10.0);
  CHECK(d.timesteps == 40);

  write_text(dir.path / "c.json", R"({"seed": 9, "fit": {"alpha": 5.5, "lbfgs": {"memory": 4}}})");
  const RunConfig c = load_config(dir.path / "c.json", {"fit.alpha=7", "warp.mode=twist"});
  CHECK(c.seed == 9);
  CHECK(c.schedule.alpha == 7.0);
  CHECK(c.schedule.lbfgs.memory == 4);
  CHECK(c.warp.mode == WarpMode::Twist);
  CHECK(c.warp.seed == 9);

  const RunConfig echoed = config_from_json(config_to_json(c));
  CHECK(config_to_json(echoed) == config_to_json(c));

  write_text(dir.path / "unknown.json", R"({"fit": {"alpah": 3}})");
  CHECK_THROWS_AS(load_config(dir.path / "unknown.json", {}), ParseError);
  CHECK_THROWS_AS(load_config({}, {"bogus=1"}), ParseError);
  CHECK_THROWS_AS(load_config({}, {"timesteps=\"forty\""}), ParseError);
  CHECK_THROWS_AS(load_config({}, {"timesteps=2.5"}), ParseError);
  CHECK_THROWS_AS(load_config({}, {"warp.mode=spiral"}), ParseError);
  CHECK_THROWS_AS(load_config({}, {"timesteps"}), ParseError);
  CHECK_THROWS_AS(load_config({}, {"sigma=-1"}), StructureError);
  write_text(dir.path / "broken.json", "{ not json");
  CHECK_THROWS_AS(load_config(dir.path / "broken.json", {}), ParseError);
}

TEST_CASE("farthest point sampling is deterministic and spread out") {
  const Points q{Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(10, 0, 0), Vec3(5, 5, 0), Vec3(0.5, 0, 0)};
  const auto pick = farthest_point_indices(q, 3);
  CHECK(pick == std::vector<int>{0, 2, 3});
  CHECK(farthest_point_indices(q, 9).size() == q.size());
}
