#include <cmath>
#include <limits>

#include "doctest.h"
#include "helpers.hpp"
#include "mflow/flow.hpp"

using namespace mflow;
using mflow::test::rel_diff;
using mflow::test::Rng;

namespace {

MomentumField constant_field(int steps, const Points& u) {
  MomentumField f(steps, u.size());
  for (int s = 0; s < steps; ++s)
    for (std::size_t i = 0; i < u.size(); ++i) f.at(s)[i] = u[i];
  return f;
}

}  // namespace

TEST_CASE("zero momentum leaves every node at q0 with zero energy") {
  Rng rng(3);
  Points q0(12);
  for (auto& p : q0) p = rng.vec(2.0);
  const TimeGrid grid(17);
  const MomentumField u(grid.steps(), q0.size());
  const auto traj = forward_euler(q0, u, grid, KernelConfig(0.7));
  REQUIRE(traj.steps() == 17);
  for (const auto& qs : traj.q) CHECK(qs == q0);
  CHECK(total_energy(u, q0, grid, KernelConfig(0.7), NoAttachment{}, 1.0).kinetic == 0.0);
}

TEST_CASE("single landmark with constant momentum moves by exactly u") {
  // Components are dyadic so every Euler increment is exact.
  const Points q0{Vec3(0.25, -1.5, 2.0)};
  const Vec3 c(0.5, -0.25, 1.75);
  for (int steps : {1, 4, 8, 32}) {
    const TimeGrid grid(steps);
    const auto traj = forward_euler(q0, constant_field(steps, {c}), grid, KernelConfig(0.3));
    CHECK(traj.final()[0] == q0[0] + c);
  }
}

TEST_CASE("single landmark energy and gradient closed forms") {
  const Points q0{Vec3(1, 1, 1)};
  const Vec3 c(0.3, -0.4, 1.2);
  const TimeGrid grid(10);
  const KernelConfig cfg(1.0);
  const auto u = constant_field(grid.steps(), {c});
  const auto e = total_energy(u, q0, grid, cfg, NoAttachment{}, 1.0);
  CHECK(rel_diff(e.total, 0.5 * c.squaredNorm()) < 1e-14);
  const auto g = gradient(u, q0, grid, cfg, NoAttachment{}, 1.0);
  for (int s = 0; s < grid.steps(); ++s) CHECK((g.at(s)[0] - grid.dt() * c).norm() < 1e-15);
}

TEST_CASE("far-separated landmarks move independently up to the kernel cross-talk bound") {
  const double sigma = 0.5, d = 20.0;
  const Points q0{Vec3(0, 0, 0), Vec3(d, 0, 0)};
  const Vec3 a(0.3, 0.1, 0), b(-0.2, 0.4, 0.1);
  const TimeGrid grid(20);
  const auto traj = forward_euler(q0, constant_field(grid.steps(), {a, b}), grid, KernelConfig(sigma));
  const double bound = eta(d - 1.0, KernelConfig(sigma)) * std::max(a.norm(), b.norm()) + 1e-13;
  CHECK((traj.final()[0] - (q0[0] + a)).norm() <= bound);
  CHECK((traj.final()[1] - (q0[1] + b)).norm() <= bound);
}

TEST_CASE("transport of the landmarks reproduces the trajectory bit for bit") {
  Rng rng(5);
  Points q0(15);
  for (auto& p : q0) p = rng.vec(2.0);
  const TimeGrid grid(12);
  MomentumField u(grid.steps(), q0.size());
  for (int s = 0; s < grid.steps(); ++s)
    for (auto& v : u.at(s)) v = rng.vec(1.0);
  const KernelConfig cfg(1.1);
  const auto traj = forward_euler(q0, u, grid, cfg);
  const auto moved = transport_points(q0, traj, u, grid, cfg);
  REQUIRE(moved.size() == traj.q.size());
  for (std::size_t s = 0; s < moved.size(); ++s) CHECK(moved[s] == traj.q[s]);

  const Points far{Vec3(1e3, 0, 0)};
  const auto still = transport_points(far, traj, u, grid, cfg);
  CHECK((still.back()[0] - far[0]).norm() < 1e-12);
}

TEST_CASE("SSD energy at zero momentum") {
  const Points q0{Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0)};
  const TimeGrid grid(5);
  const MomentumField u(grid.steps(), q0.size());
  const KernelConfig cfg(1.0);
  CHECK(total_energy(u, q0, grid, cfg, SsdTerm{q0, {0, 1, 2}}, 2.0).total == 0.0);

  const Vec3 d(0.1, -0.2, 0.3);
  Points targets = q0;
  targets[0] += d;
  targets[2] += d;
  const auto e = total_energy(u, q0, grid, cfg, SsdTerm{targets, {0, 2}}, 2.0);
  CHECK(rel_diff(e.total, 2.0 * 2.0 * d.squaredNorm()) < 1e-14);
  const auto g = gradient(u, q0, grid, cfg, NoAttachment{}, 1.0);
  CHECK(g.flat().norm() == 0.0);
}

TEST_CASE("non-finite momenta raise a divergence error") {
  const Points q0{Vec3(0, 0, 0), Vec3(1, 0, 0)};
  const TimeGrid grid(4);
  MomentumField u(grid.steps(), q0.size());
  u.at(2)[1] = Vec3(std::numeric_limits<double>::infinity(), 0, 0);
  CHECK_THROWS_AS(forward_euler(q0, u, grid, KernelConfig(1.0)), DivergenceError);
}

TEST_CASE("mismatched momentum dimensions are rejected") {
  const Points q0{Vec3(0, 0, 0), Vec3(1, 0, 0)};
  CHECK_THROWS_AS(forward_euler(q0, MomentumField(4, 3), TimeGrid(4), KernelConfig(1.0)), StructureError);
  CHECK_THROWS_AS(forward_euler(q0, MomentumField(5, 2), TimeGrid(4), KernelConfig(1.0)), StructureError);
}
