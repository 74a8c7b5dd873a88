#include <cmath>

#include <Eigen/Eigenvalues>

#include "doctest.h"
#include "helpers.hpp"
#include "mflow/kernel.hpp"

using namespace mflow;
using mflow::test::rel_diff;
using mflow::test::Rng;

TEST_CASE("Gaussian profile values") {
  const KernelConfig cfg(2.5);
  CHECK(eta(0.0, cfg) == 1.0);
  CHECK(std::abs(eta(2.5, cfg) - 0.6065306597126334) < 1e-15);
  CHECK(eta(25.0, cfg) <= 2e-22);
  CHECK_THROWS(KernelConfig(0.0));
  CHECK_THROWS(KernelConfig(-1.0));
}

TEST_CASE("velocity of single and paired landmarks") {
  const KernelConfig cfg(1.5);
  const Points q{Vec3(1, 2, 3)};
  const Points u{Vec3(0.3, -0.2, 0.7)};
  CHECK((velocity_at(q[0], q, u, cfg) - u[0]).norm() == 0.0);
  const Vec3 x = q[0] + Vec3(0, 1.5, 0);
  CHECK((velocity_at(x, q, u, cfg) - std::exp(-0.5) * u[0]).norm() < 1e-15);

  const Points q2{Vec3(0, 0, 0), Vec3(0, 0, 0)};
  const Points u2{Vec3(1, 2, 3), Vec3(-1, -2, -3)};
  for (const Vec3& p : {Vec3(0, 0, 0), Vec3(0.4, -1, 2), Vec3(5, 5, 5)})
    CHECK(velocity_at(p, q2, u2, cfg).norm() == 0.0);
}

TEST_CASE("kinetic norm closed forms") {
  const KernelConfig cfg(1.0);
  CHECK(kinetic_norm_sq(Points{Vec3(0, 0, 0)}, Points{Vec3(3, 4, 0)}, cfg) == 25.0);

  const double d = 0.8;
  const Vec3 u(0.5, -1.0, 2.0);
  const Points q{Vec3(0, 0, 0), Vec3(d, 0, 0)};
  const double expected = 2.0 * u.squaredNorm() * (1.0 + eta(d, cfg));
  CHECK(rel_diff(kinetic_norm_sq(q, Points{u, u}, cfg), expected) < 1e-14);

  CHECK(kinetic_norm_sq(q, Points{Vec3::Zero(), Vec3::Zero()}, cfg) == 0.0);
}

TEST_CASE("Gram matrix is positive semidefinite on random configurations") {
  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const int k = 2 + trial % 49;
    Points q(k);
    for (auto& p : q) p = rng.vec(3.0);
    const KernelConfig cfg(rng.uniform(0.3, 4.0));
    const Eigen::MatrixXd g = gram_matrix(q, cfg);
    CHECK((g - g.transpose()).norm() == 0.0);
    const double lo = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(g, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
    CHECK(lo >= -1e-10 * g.diagonal().maxCoeff());
  }
}

TEST_CASE("kinetic norm is invariant under permutation and rigid motion") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const int k = 5 + trial;
    Points q(k), u(k);
    for (auto& p : q) p = rng.vec(2.0);
    for (auto& v : u) v = rng.vec(1.0);
    const KernelConfig cfg(rng.uniform(0.5, 2.0));
    const double base = kinetic_norm_sq(q, u, cfg);

    Points qp(q.rbegin(), q.rend()), up(u.rbegin(), u.rend());
    std::rotate(qp.begin(), qp.begin() + 3, qp.end());
    std::rotate(up.begin(), up.begin() + 3, up.end());
    CHECK(rel_diff(kinetic_norm_sq(qp, up, cfg), base) < 1e-10);

    const Eigen::Matrix3d rot =
        Eigen::AngleAxisd(rng.uniform(0, 6.28), rng.vec(1.0).normalized()).toRotationMatrix();
    const Vec3 shift = rng.vec(10.0);
    Points qr(k), ur(k);
    for (int i = 0; i < k; ++i) {
      qr[i] = rot * q[i] + shift;
      ur[i] = rot * u[i];
    }
    CHECK(rel_diff(kinetic_norm_sq(qr, ur, cfg), base) < 1e-10);
  }
}

TEST_CASE("momentum field layout and flat view") {
  MomentumField u(3, 4);
  CHECK(u.flat().size() == 36);
  u.at(1)[2] = Vec3(1, 2, 3);
  CHECK(u.flat()[(1 * 4 + 2) * 3 + 1] == 2.0);
  MomentumField v = u;
  CHECK(v == u);
  v.at(0)[0].x() = 1e-300;
  CHECK_FALSE(v == u);
}
