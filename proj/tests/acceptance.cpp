// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails.

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include <Eigen/Eigenvalues>
#include <fmt/format.h>

#include "mflow/config.hpp"
#include "mflow/constraints.hpp"
#include "mflow/flow.hpp"
#include "mflow/io.hpp"
#include "mflow/kernel.hpp"
#include "mflow/pipeline.hpp"
#include "mflow/synth.hpp"

using namespace mflow;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, const Outcome& o) {
  fmt::print("criterion {} {} [{}]: {}\n", id, o.pass ? "PASS" : "FAIL", name, o.detail);
  std::fflush(stdout);
  if (!o.pass) ++failures;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

struct Experiment {
  MedialTemplate tpl;
  SyntheticTarget target;
  RunConfig cfg;
  FitResult result;
  double seconds = 0.0;
};

Experiment run_branch_experiment() {
  Experiment e;
  const BranchSpec spec = branch_experiment_spec();
  e.tpl = make_branching_template(spec);
  e.cfg = RunConfig{};
  e.target = make_mirrored_branch_target(spec, e.cfg.raster);
  const auto t0 = std::chrono::steady_clock::now();
  e.result = run_fit(e.tpl, e.target.image, e.target.landmarks, e.cfg);
  e.seconds = seconds_since(t0);
  return e;
}

Outcome constraint_satisfaction(const Experiment& e) {
  const auto s = summarize_metrics(e.result.metrics);
  double dev = 0.0, mis = 0.0;
  int checked = 0;
  for (const auto& row : s.al_ends) {
    if (row.mu < 0.1 * (1.0 - 1e-12)) continue;
    dev = std::max(dev, row.max_deviation_deg);
    mis = std::max(mis, row.max_mismatch_pct);
    ++checked;
  }
  const bool size_ok = e.tpl.size() >= 150 && e.tpl.size() <= 400;
  const bool ok = size_ok && checked > 0 && dev <= 2.0 && mis <= 2.0 && e.seconds <= 1200.0 &&
                  e.cfg.timesteps == 40;
  std::string ladder;
  for (const auto& row : s.al_ends)
    ladder += fmt::format(" mu={:g}:{:.3f}deg/{:.3f}%", row.mu, row.max_deviation_deg, row.max_mismatch_pct);
  return {ok, fmt::format("k={} T={} max over mu>=0.1: {:.3f} deg, {:.3f}%; runtime {:.0f} s; ladder{}", e.tpl.size(),
                          e.cfg.timesteps, dev, mis, e.seconds, ladder)};
}

Outcome fit_quality(const Experiment& e) {
  const double vd = voxel_dice(e.result.trajectory.final(), e.tpl.boundary, e.target.image);
  const double initial = voxel_dice(e.tpl.landmarks.view(), e.tpl.boundary, e.target.image);
  return {vd >= 0.93, fmt::format("voxel DSC {:.4f} (initial {:.4f}, objective DSC {:.4f})", vd, initial,
                                  e.result.final.dice)};
}

Outcome gradient_correctness() {
  const auto t0 = std::chrono::steady_clock::now();
  RunConfig cfg;
  const auto records = run_gradcheck(cfg);
  double worst = 0.0, worst_dice = 0.0;
  bool ok = !records.empty();
  for (const auto& r : records) {
    const double tol = r.term == "dice" ? 1e-4 : 1e-6;
    ok = ok && r.rel_error <= tol;
    (r.term == "dice" ? worst_dice : worst) = std::max(r.term == "dice" ? worst_dice : worst, r.rel_error);
  }
  // The check must also notice a wrong gradient.
  const auto corrupted = run_gradcheck(cfg, true);
  const bool detects = std::any_of(corrupted.begin(), corrupted.end(), [](const GradcheckRecord& r) {
    return r.rel_error > (r.term == "dice" ? 1e-4 : 1e-6);
  });
  return {ok && detects,
          fmt::format("{} checks, worst rel error {:.2e} (dice {:.2e}); corrupted gradient detected: {}; {:.1f} s",
                      records.size(), worst, worst_dice, detects ? "yes" : "no", seconds_since(t0))};
}

MomentumField random_field(int steps, std::size_t k, double half, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(-half, half);
  MomentumField u(steps, k);
  for (int s = 0; s < steps; ++s)
    for (auto& v : u.at(s)) v = Vec3(d(rng), d(rng), d(rng));
  return u;
}

Outcome flow_identities() {
  const auto tpl = make_branching_template(branch_experiment_spec());
  const auto q0 = tpl.landmarks.view();
  const TimeGrid grid(40);
  const KernelConfig kernel(RunConfig{}.sigma);

  const MomentumField zero(grid.steps(), q0.size());
  const auto still = forward_euler(q0, zero, grid, kernel);
  bool zero_ok = true;
  double kin = 0.0;
  for (int s = 0; s <= grid.steps(); ++s) zero_ok = zero_ok && std::equal(still.q[s].begin(), still.q[s].end(), q0.begin());
  for (int s = 0; s < grid.steps(); ++s) kin += kinetic_norm_sq(still.q[s], zero.at(s), kernel);
  zero_ok = zero_ok && kin == 0.0;

  const Points single{Vec3(0.25, -1.5, 3.0)};
  const Vec3 u(0.75, -0.125, 2.5);
  const TimeGrid grid8(8);
  MomentumField cu(grid8.steps(), 1);
  for (int s = 0; s < grid8.steps(); ++s) cu.at(s)[0] = u;
  const auto moved = forward_euler(single, cu, grid8, kernel);
  const bool single_ok = moved.final()[0] - single[0] == u;

  const auto ru = random_field(grid.steps(), q0.size(), 2.0, 7);
  const auto traj = forward_euler(q0, ru, grid, kernel);
  const auto carried = transport_points(q0, traj, ru, grid, kernel);
  bool transport_ok = carried.size() == traj.q.size();
  for (std::size_t s = 0; transport_ok && s < carried.size(); ++s) transport_ok = carried[s] == traj.q[s];

  return {zero_ok && single_ok && transport_ok,
          fmt::format("zero momentum fixed and E_kin=0: {}; single landmark displacement exact: {}; "
                      "transport bit-identical over {} nodes: {}",
                      zero_ok, single_ok, traj.q.size(), transport_ok)};
}

Outcome medial_preservation(const Experiment& e) {
  const auto& tpl = e.tpl;
  double worst_fraction = 1.0, worst_radius_err = 0.0;
  for (const auto& q : e.result.trajectory.q) {
    const auto slack = inscribed_slack(q, tpl);
    int ok = 0;
    for (std::size_t i = 0; i < tpl.tuples.size(); ++i) {
      const auto& tu = tpl.tuples[i];
      double shortest = std::numeric_limits<double>::infinity(), mean = 0.0, nearest = shortest;
      for (int b : tu.boundary) {
        const double len = (q[b] - q[tu.medial]).norm();
        shortest = std::min(shortest, len);
        mean += len / static_cast<double>(tu.boundary.size());
      }
      if (slack[i] >= -0.01 * shortest) ++ok;
      if (tu.spoke_count() < 2) continue;
      for (int b = 0; b < tpl.boundary_count; ++b) nearest = std::min(nearest, (q[b] - q[tu.medial]).norm());
      worst_radius_err = std::max(worst_radius_err, std::abs(nearest - mean) / mean);
    }
    worst_fraction = std::min(worst_fraction, static_cast<double>(ok) / static_cast<double>(tpl.tuples.size()));
  }
  return {worst_fraction >= 0.99 && worst_radius_err <= 0.02,
          fmt::format("over {} nodes: min fraction of tuples with slack >= -1% of spoke length {:.4f}; "
                      "max |nearest boundary distance - spoke length| / spoke length {:.4f}",
                      e.result.trajectory.q.size(), worst_fraction, worst_radius_err)};
}

Outcome al_mechanics(const Experiment& e) {
  // lambda' = lambda - mu C on dyadic values, so the update is exact.
  ALState al(3, 2, 0.5);
  const double lambda[2][3] = {{0.25, -1.5, 0.0}, {2.0, 0.125, -0.75}};
  const std::vector<std::vector<double>> c = {{1.0, -0.5, 0.25}, {0.0, 4.0, -2.0}};
  for (int s = 1; s <= 2; ++s)
    for (std::size_t l = 0; l < 3; ++l) al.lambda(s, l) = lambda[s - 1][l];
  const auto next = update_multipliers(al, c);
  const double expected[2][3] = {{-0.25, -1.25, -0.125}, {2.0, -1.875, 0.25}};
  bool hand_ok = next.mu() == 5.0;
  for (int s = 1; s <= 2; ++s)
    for (std::size_t l = 0; l < 3; ++l) hand_ok = hand_ok && next.lambda(s, l) == expected[s - 1][l];
  // Zero violation leaves the multipliers alone.
  const auto still = update_multipliers(next, {{0.0, 0.0, 0.0}, {0.0, 0.0, 0.0}});
  hand_ok = hand_ok && still.lambda_values() == next.lambda_values() && still.mu() == 50.0;

  const auto s = summarize_metrics(e.result.metrics);
  const bool trend_ok = s.has_dice && s.final_violation <= 0.01 * s.first_dice_violation;
  return {hand_ok && trend_ok,
          fmt::format("hand-computed updates exact: {}; violation first Dice iteration {:.4e}, final {:.4e} (ratio {:.2e})",
                      hand_ok, s.first_dice_violation, s.final_violation,
                      s.final_violation / s.first_dice_violation)};
}

Outcome kernel_properties() {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double worst_eig = 0.0, worst_perm = 0.0, worst_rigid = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int k = 2 + static_cast<int>(unit(rng) * 49);  // 2..50
    const KernelConfig kernel(0.2 + 3.0 * unit(rng));
    Points q(k), u(k);
    for (auto& p : q) p = Vec3(unit(rng), unit(rng), unit(rng)) * 5.0;
    for (auto& v : u) v = Vec3(unit(rng) - 0.5, unit(rng) - 0.5, unit(rng) - 0.5);
    const Eigen::MatrixXd g = gram_matrix(q, kernel);
    const Eigen::VectorXd ev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(g).eigenvalues();
    worst_eig = std::min(worst_eig, ev.minCoeff() / ev.maxCoeff());

    const double e0 = kinetic_norm_sq(q, u, kernel);
    std::vector<int> perm(k);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Points qp(k), up(k);
    for (int i = 0; i < k; ++i) {
      qp[i] = q[perm[i]];
      up[i] = u[perm[i]];
    }
    worst_perm = std::max(worst_perm, std::abs(kinetic_norm_sq(qp, up, kernel) - e0) / e0);

    const Eigen::Matrix3d r =
        Eigen::AngleAxisd(2.0 * std::numbers::pi * unit(rng), Vec3(unit(rng) - 0.5, unit(rng) - 0.5, 1.0).normalized())
            .toRotationMatrix();
    const Vec3 t(10.0 * unit(rng), -7.0 * unit(rng), 3.0);
    Points qr(k), ur(k);
    for (int i = 0; i < k; ++i) {
      qr[i] = r * q[i] + t;
      ur[i] = r * u[i];
    }
    worst_rigid = std::max(worst_rigid, std::abs(kinetic_norm_sq(qr, ur, kernel) - e0) / e0);
  }
  return {worst_eig >= -1e-10 && worst_perm <= 1e-10 && worst_rigid <= 1e-10,
          fmt::format("100 configurations k<=50: min eigenvalue / max {:.2e}; kinetic rel change under permutation "
                      "{:.2e}, rigid motion {:.2e}",
                      worst_eig, worst_perm, worst_rigid)};
}

std::string fit_csv(const MedialTemplate& tpl, const SyntheticTarget& target, const RunConfig& cfg, int threads,
                    const fs::path& path) {
  omp_set_num_threads(threads);
  const auto res = run_fit(tpl, target.image, target.landmarks, cfg);
  write_metrics(res.metrics, path);
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome determinism() {
  const auto t0 = std::chrono::steady_clock::now();
  const BranchSpec spec = branch_experiment_spec();
  const auto tpl = make_branching_template(spec);
  RunConfig cfg;
  cfg.timesteps = 10;
  cfg.schedule.al_iterations = 2;
  cfg.schedule.lbfgs.max_iterations = 15;
  cfg.schedule.ssd_lbfgs.max_iterations = 15;
  const auto target = make_mirrored_branch_target(spec, RasterSpec{48, cfg.raster.padding});
  const fs::path dir = fs::temp_directory_path() / fmt::format("mflow_acceptance_{}", ::getpid());
  fs::create_directories(dir);
  const std::string reference = fit_csv(tpl, target, cfg, 1, dir / "t1a.csv");
  bool same = !reference.empty() && fit_csv(tpl, target, cfg, 1, dir / "t1b.csv") == reference;
  std::string runs = "1,1";
  for (int threads : {4, 8}) {
    same = same && fit_csv(tpl, target, cfg, threads, dir / fmt::format("t{}.csv", threads)) == reference;
    runs += fmt::format(",{}", threads);
  }
  omp_set_num_threads(1);
  fs::remove_all(dir);
  const auto lines = std::count(reference.begin(), reference.end(), '\n');
  return {same, fmt::format("metrics CSV ({} lines) byte-identical across runs with threads {}: {}; {:.1f} s", lines,
                            runs, same ? "yes" : "no", seconds_since(t0))};
}

}  // namespace

int main() {
  omp_set_num_threads(1);
  std::vector<std::pair<std::string, Outcome>> results(9);
  try {
    results[3] = {"gradient correctness", gradient_correctness()};
    results[4] = {"flow identities", flow_identities()};
    results[7] = {"kernel properties", kernel_properties()};
    results[8] = {"determinism", determinism()};
    const Experiment e = run_branch_experiment();
    results[1] = {"constraint satisfaction", constraint_satisfaction(e)};
    results[2] = {"fit quality", fit_quality(e)};
    results[5] = {"medial preservation", medial_preservation(e)};
    results[6] = {"AL mechanics", al_mechanics(e)};
  } catch (const std::exception& ex) {
    fmt::print("acceptance suite aborted: {}\n", ex.what());
    return 2;
  }
  for (int id = 1; id <= 8; ++id) report(id, results[id].first, results[id].second);
  fmt::print("{} of 8 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
