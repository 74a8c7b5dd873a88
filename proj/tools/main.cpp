#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <omp.h>
#include <fmt/format.h>
#include <fmt/ostream.h>

#include "CLI11.hpp"
#include "json.hpp"

#include "mflow/config.hpp"
#include "mflow/flow.hpp"
#include "mflow/io.hpp"
#include "mflow/pipeline.hpp"
#include "mflow/synth.hpp"
#include "mflow/template_io.hpp"

namespace fs = std::filesystem;
using namespace mflow;

namespace {

constexpr int kExitValidation = 1;
constexpr int kExitNumerical = 2;

/// Options shared by every command that reads a run configuration.
struct ConfigArgs {
  std::string file;
  std::vector<std::string> set;
  std::optional<int> threads;
  std::optional<std::uint64_t> seed;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", file, "JSON configuration file")->check(CLI::ExistingFile);
    cmd->add_option("--set", set, "override a config key, e.g. --set fit.alpha=300 (repeatable)");
    cmd->add_option("--threads", threads, "worker threads (overrides the config)");
    cmd->add_option("--seed", seed, "random seed (overrides the config)");
  }

  RunConfig load() const {
    std::vector<std::string> overrides = set;
    if (threads) overrides.push_back(fmt::format("threads={}", *threads));
    if (seed) overrides.push_back(fmt::format("seed={}", *seed));
    RunConfig cfg = load_config(file, overrides);
    omp_set_num_threads(cfg.threads);
    return cfg;
  }
};

void write_json(const nlohmann::json& doc, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw ParseError(fmt::format("cannot open {} for writing", path.string()));
  out << doc.dump(2) << '\n';
}

int report_validation(const MedialTemplate& tpl, double tol_angle, double tol_len) {
  const ValidationReport r = validate_template(tpl, tol_angle, tol_len);
  fmt::print("landmarks {} (boundary {}, medial {}), tuples {}\n", tpl.size(), tpl.boundary_count,
             tpl.size() - static_cast<std::size_t>(tpl.boundary_count), tpl.tuples.size());
  for (const auto& e : r.structural_errors) fmt::print("structural error: {}\n", e);
  fmt::print("max spoke-normal deviation {:.6g} deg (tolerance {})\n", r.max_spoke_normal_deviation_deg, tol_angle);
  fmt::print("max spoke-spoke mismatch {:.6g} (tolerance {})\n", r.max_spoke_mismatch, tol_len);
  fmt::print("{}\n", r.passed() ? "valid" : "INVALID");
  return r.passed() ? 0 : kExitValidation;
}

// ---- synth -----------------------------------------------------------------

struct SynthArgs {
  std::string out;
  SlabSpec slab;
  BranchSpec branch;
  int sheets = 3;
  double scale = 1.0;
  std::vector<double> dihedral;
};

int write_generated(const MedialTemplate& tpl, const std::string& out) {
  const int status = report_validation(tpl, 0.1, 1e-3);
  if (status != 0) return status;
  write_template(tpl, out);
  if (!(read_template(out).landmarks.points() == tpl.landmarks.points()))
    throw ParseError(fmt::format("{} does not read back to the generated template", out));
  fmt::print("wrote {}\n", out);
  return 0;
}

int run_synth_slab(const SynthArgs& a) { return write_generated(make_slab_template(a.slab), a.out); }

int run_synth_branch(SynthArgs a) {
  if (a.sheets != 3) throw StructureError("branching templates have exactly three sheets");
  if (!(a.scale > 0.0)) throw StructureError("scale must be positive");
  if (!a.dihedral.empty()) {
    if (a.dihedral.size() != 3) throw StructureError("--dihedral takes three angles");
    std::copy(a.dihedral.begin(), a.dihedral.end(), a.branch.dihedral_deg.begin());
  }
  a.branch.seam_length *= a.scale;
  a.branch.sheet_width *= a.scale;
  a.branch.seam_radius *= a.scale;
  a.branch.edge_radius *= a.scale;
  return write_generated(make_branching_template(a.branch), a.out);
}

struct ExperimentArgs {
  std::string out;
  std::string image;
  std::string points;
  RasterSpec raster;
};

int run_synth_experiment(const ExperimentArgs& a) {
  const BranchSpec spec = branch_experiment_spec();
  const int status = write_generated(make_branching_template(spec), a.out);
  if (status != 0) return status;
  const SyntheticTarget target = make_mirrored_branch_target(spec, a.raster);
  write_voxel_grid(target.image, a.image);
  write_points(target.landmarks, a.points);
  fmt::print("mirrored target: foreground {:.6g} units^3\n", target.image.foreground_volume());
  fmt::print("wrote {} and {}\n", a.image, a.points);
  return 0;
}

// ---- make-target -----------------------------------------------------------

struct TargetArgs {
  ConfigArgs config;
  std::string tpl;
  std::string image;
  std::string points;
};

int run_make_target(const TargetArgs& a) {
  const RunConfig cfg = a.config.load();
  const MedialTemplate tpl = read_template(a.tpl);
  const SyntheticTarget target = make_synthetic_target(tpl, make_warp(tpl, cfg.warp), cfg.raster);
  write_voxel_grid(target.image, a.image);
  write_points(target.landmarks, a.points);
  const double model = enclosed_volume(tpl.landmarks.view(), tpl.boundary);
  const double warped = enclosed_volume(target.landmarks, tpl.boundary);
  fmt::print("warp {} magnitude {} seed {}\n", to_string(cfg.warp.mode), cfg.warp.magnitude, cfg.seed);
  fmt::print("template volume {:.6g}, warped volume {:.6g}, foreground voxels {:.6g} ({:.6g} units^3)\n", model,
             warped, target.image.foreground_volume() / target.image.voxel_volume(), target.image.foreground_volume());
  fmt::print("wrote {} and {}\n", a.image, a.points);
  return 0;
}

// ---- fit -------------------------------------------------------------------

struct FitArgs {
  ConfigArgs config;
  std::string tpl;
  std::string target;
  std::string points;
  std::string out;
  bool meshes = true;
};

int run_fit_command(const FitArgs& a) {
  const RunConfig cfg = a.config.load();
  const fs::path dir = a.out;
  fs::create_directories(dir);
  write_json(config_to_json(cfg), dir / "config.json");

  const MedialTemplate tpl = read_template(a.tpl);
  const VoxelGrid target = read_voxel_grid(a.target);
  const Points correspondences = a.points.empty() ? Points{} : read_points(a.points);

  // Rows are flushed as they arrive so a failed run leaves a partial log.
  std::ofstream csv(dir / "metrics.csv");
  if (!csv) throw ParseError(fmt::format("cannot write {}", (dir / "metrics.csv").string()));
  csv << kMetricsHeader << '\n';
  auto on_row = [&](const MetricsRow& row) {
    csv << metrics_line(row) << '\n';
    csv.flush();
    if (row.inner_iter == 0)
      fmt::print("{} stage {}: mu {:g}, E {:.6g}, violation {:.3e}\n", to_string(row.stage), row.al_iter, row.mu,
                 row.total, row.violation);
  };
  std::ofstream log(dir / "log.txt");
  FitResult res;
  try {
    res = run_fit(tpl, target, correspondences, cfg, on_row);
  } catch (const std::exception& e) {
    log << "error: " << e.what() << '\n';
    throw;
  }

  write_momenta(res.momenta, dir / "momenta.txt");
  if (a.meshes) export_flow_meshes(res.trajectory.q, tpl, dir / "meshes");
  const double vdice = voxel_dice(res.trajectory.final(), tpl.boundary, target);
  const auto summary = summarize_metrics(res.metrics);
  nlohmann::json doc = {{"final_dice", res.final.dice},
                        {"final_voxel_dice", vdice},
                        {"final_violation", res.final.violation},
                        {"max_deviation_deg", summary.max_deviation_deg},
                        {"max_mismatch_pct", summary.max_mismatch_pct},
                        {"inner_status", nlohmann::json::array()},
                        {"warnings", res.warnings}};
  for (auto s : res.inner_status) doc["inner_status"].push_back(to_string(s));
  write_json(doc, dir / "result.json");
  for (const auto& w : res.warnings) {
    log << "warning: " << w << '\n';
    fmt::print("warning: {}\n", w);
  }
  fmt::print("final DSC {:.4f} (voxel {:.4f}), violation {:.3e}\n", res.final.dice, vdice, res.final.violation);
  fmt::print("wrote {}\n", dir.string());
  if (!std::isfinite(res.final.total)) return kExitNumerical;
  return 0;
}

// ---- gradcheck -------------------------------------------------------------

struct GradcheckArgs {
  ConfigArgs config;
  bool corrupt = false;
};

int run_gradcheck_command(const GradcheckArgs& a) {
  const RunConfig cfg = a.config.load();
  const auto records = run_gradcheck(cfg, a.corrupt);
  bool ok = true;
  fmt::print("{:<11} {:>8} {:>22} {:>22} {:>11}\n", "term", "instance", "adjoint", "finite-diff", "rel-error");
  for (const auto& r : records) {
    const bool pass = r.rel_error <= cfg.gradcheck_tolerance;
    ok = ok && pass;
    fmt::print("{:<11} {:>8} {:>22.15g} {:>22.15g} {:>11.3e} {}\n", r.term, r.instance, r.analytic, r.numeric,
               r.rel_error, pass ? "ok" : "FAIL");
  }
  fmt::print("{} (tolerance {})\n", ok ? "all gradients match" : "gradient mismatch", cfg.gradcheck_tolerance);
  return ok ? 0 : kExitNumerical;
}

// ---- metrics ---------------------------------------------------------------

int run_metrics(const std::string& path) {
  fs::path csv = path;
  if (fs::is_directory(csv)) csv /= "metrics.csv";
  const auto rows = read_metrics(csv);
  const auto s = summarize_metrics(rows);
  fmt::print("rows {}\n", s.rows);
  if (s.has_dice) fmt::print("final DSC {:.6f}\n", s.final_dice);
  fmt::print("max spoke-normal deviation {:.6g} deg\n", s.max_deviation_deg);
  fmt::print("max spoke-spoke mismatch {:.6g} %\n", s.max_mismatch_pct);
  if (!s.al_ends.empty()) {
    fmt::print("{:>7} {:>7} {:>13} {:>10} {:>12} {:>12}\n", "al_iter", "inner", "violation", "DSC", "max_dev_deg",
               "max_mis_pct");
    for (const auto& r : s.al_ends)
      fmt::print("{:>7} {:>7} {:>13.4e} {:>10.6f} {:>12.6g} {:>12.6g}\n", r.al_iter, r.inner_iter, r.violation, r.dice,
                 r.max_deviation_deg, r.max_mismatch_pct);
    fmt::print("violation first Dice row {:.4e}, last row {:.4e}\n", s.first_dice_violation, s.final_violation);
  }
  return 0;
}

// ---- export-flow -----------------------------------------------------------

struct ExportArgs {
  ConfigArgs config;
  std::string tpl;
  std::string momenta;
  std::string out;
};

int run_export(const ExportArgs& a) {
  const RunConfig cfg = a.config.load();
  const MedialTemplate tpl = read_template(a.tpl);
  const MomentumField u = read_momenta(a.momenta);
  if (u.landmarks() != tpl.size()) throw StructureError("momenta do not match the template's landmark count");
  const Trajectory traj = forward_euler(tpl.landmarks.view(), u, TimeGrid(u.steps()), KernelConfig(cfg.sigma));
  export_flow_meshes(traj.q, tpl, a.out);
  fmt::print("wrote {} boundary and medial meshes to {}\n", traj.q.size(), a.out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Diffeomorphic medial-model fitting"};
  app.require_subcommand(1);
  int status = 0;

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "generate a procedural medial template");
  synth_cmd->require_subcommand(1);
  auto* slab_cmd = synth_cmd->add_subcommand("slab", "single (optionally curved) medial sheet");
  slab_cmd->add_option("--out", synth.out, "output template file")->required();
  slab_cmd->add_option("--nx", synth.slab.nx, "medial samples along x");
  slab_cmd->add_option("--ny", synth.slab.ny, "medial samples along y");
  slab_cmd->add_option("--extent-x", synth.slab.extent_x, "sheet length along x");
  slab_cmd->add_option("--extent-y", synth.slab.extent_y, "sheet length along y");
  slab_cmd->add_option("--thickness", synth.slab.half_thickness, "half-thickness (spoke length)");
  slab_cmd->add_option("--amplitude", synth.slab.amplitude, "height of the sinusoidal bend");
  slab_cmd->add_option("--wavelength", synth.slab.wavelength, "wavelength of the bend");
  slab_cmd->callback([&] { status = run_synth_slab(synth); });

  auto* branch_cmd = synth_cmd->add_subcommand("branch", "three sheets joined along a seam");
  branch_cmd->add_option("--out", synth.out, "output template file")->required();
  branch_cmd->add_option("--sheets", synth.sheets, "number of sheets (3)");
  branch_cmd->add_option("--seam-samples", synth.branch.seam_samples, "medial samples along the seam");
  branch_cmd->add_option("--sheet-samples", synth.branch.sheet_samples, "medial samples across each sheet");
  branch_cmd->add_option("--seam-length", synth.branch.seam_length, "seam length");
  branch_cmd->add_option("--sheet-width", synth.branch.sheet_width, "sheet width away from the seam");
  branch_cmd->add_option("--seam-radius", synth.branch.seam_radius, "half-thickness at the seam");
  branch_cmd->add_option("--edge-radius", synth.branch.edge_radius, "half-thickness toward the free edges");
  branch_cmd->add_option("--dihedral", synth.dihedral, "three dihedral angles in degrees")->delimiter(',');
  branch_cmd->add_option("--scale", synth.scale, "multiplies every length");
  branch_cmd->callback([&] { status = run_synth_branch(synth); });

  ExperimentArgs experiment;
  auto* exp_cmd = synth_cmd->add_subcommand(
      "experiment", "branching template with dihedral angles 100/120/140 and its mirror image as target");
  exp_cmd->add_option("--out", experiment.out, "output template file")->required();
  exp_cmd->add_option("--target-image", experiment.image, "output target image")->required();
  exp_cmd->add_option("--target-points", experiment.points, "output exact target landmark positions")->required();
  exp_cmd->add_option("--resolution", experiment.raster.resolution, "voxels per axis");
  exp_cmd->add_option("--padding", experiment.raster.padding, "fraction of the resolution added per side");
  exp_cmd->callback([&] { status = run_synth_experiment(experiment); });

  TargetArgs target;
  auto* target_cmd = app.add_subcommand("make-target", "warp a template into a synthetic binary target");
  target_cmd->add_option("--template", target.tpl, "template file")->required()->check(CLI::ExistingFile);
  target_cmd->add_option("--out-image", target.image, "output voxel grid")->required();
  target_cmd->add_option("--out-points", target.points, "output per-landmark target positions")->required();
  target.config.attach(target_cmd);
  target_cmd->callback([&] { status = run_make_target(target); });

  FitArgs fit_args;
  auto* fit_cmd = app.add_subcommand("fit", "fit a template to a binary target");
  fit_cmd->add_option("--template", fit_args.tpl, "template file")->required()->check(CLI::ExistingFile);
  fit_cmd->add_option("--target", fit_args.target, "target voxel grid")->required()->check(CLI::ExistingFile);
  fit_cmd->add_option("--points", fit_args.points, "landmark correspondences for the affine and SSD stages")
      ->check(CLI::ExistingFile);
  fit_cmd->add_option("--out", fit_args.out, "output directory")->required();
  fit_cmd->add_flag("!--no-meshes", fit_args.meshes, "skip the per-timestep OBJ export");
  fit_args.config.attach(fit_cmd);
  fit_cmd->callback([&] { status = run_fit_command(fit_args); });

  GradcheckArgs grad;
  auto* grad_cmd = app.add_subcommand("gradcheck", "compare adjoint gradients with finite differences");
  grad_cmd->add_flag("--corrupt-gradient", grad.corrupt, "test hook: perturb the adjoint gradient");
  grad.config.attach(grad_cmd);
  grad_cmd->callback([&] { status = run_gradcheck_command(grad); });

  std::string metrics_path;
  auto* metrics_cmd = app.add_subcommand("metrics", "summarize a metrics CSV or fit directory");
  metrics_cmd->add_option("path", metrics_path, "metrics.csv or fit output directory")->required();
  metrics_cmd->callback([&] { status = run_metrics(metrics_path); });

  std::string check_path;
  double tol_angle = kDefaultTolAngleDeg, tol_len = kDefaultTolLenRel;
  auto* check_cmd = app.add_subcommand("check", "validate a template file");
  check_cmd->add_option("template", check_path, "template file")->required();
  check_cmd->add_option("--tol-angle", tol_angle, "spoke-normal tolerance in degrees");
  check_cmd->add_option("--tol-len", tol_len, "relative spoke-length tolerance");
  check_cmd->callback([&] { status = report_validation(read_template(check_path), tol_angle, tol_len); });

  ExportArgs exp;
  auto* export_cmd = app.add_subcommand("export-flow", "write per-timestep meshes for a momentum field");
  export_cmd->add_option("--template", exp.tpl, "template file")->required()->check(CLI::ExistingFile);
  export_cmd->add_option("--momenta", exp.momenta, "momentum file")->required()->check(CLI::ExistingFile);
  export_cmd->add_option("--out", exp.out, "output directory")->required();
  exp.config.attach(export_cmd);
  export_cmd->callback([&] { status = run_export(exp); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  } catch (const DivergenceError& e) {
    fmt::print(stderr, "numerical failure: {}\n", e.what());
    return kExitNumerical;
  } catch (const Error& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kExitValidation;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kExitValidation;
  }
  return status;
}
