#include <cmath>
#include <limits>

#include "doctest.h"
#include "helpers.hpp"
#include "mflow/optimizer.hpp"

using namespace mflow;
using mflow::test::Rng;

TEST_CASE("L-BFGS solves a convex quadratic") {
  Rng rng(21);
  for (int n : {2, 7, 20}) {
    Eigen::MatrixXd m(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) m(i, j) = rng.uniform(-1, 1);
    const Eigen::MatrixXd a = m * m.transpose() + Eigen::MatrixXd::Identity(n, n);
    Eigen::VectorXd b(n);
    for (int i = 0; i < n; ++i) b[i] = rng.uniform(-2, 2);
    const Eigen::VectorXd exact = a.ldlt().solve(b);

    LbfgsOptions opts;
    opts.energy_change_tolerance = 1e-16;
    auto f = [&](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
      g = a * x - b;
      return 0.5 * x.dot(a * x) - b.dot(x);
    };
    const auto r = lbfgs_minimize(f, Eigen::VectorXd::Zero(n), opts);
    CHECK((a * r.x - b).norm() <= 1e-6 * b.norm());
    CHECK((r.x - exact).norm() <= 1e-5 * exact.norm());
  }
}

TEST_CASE("L-BFGS returns a stationary start after one iteration") {
  auto f = [](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    g = x;
    return 0.5 * x.squaredNorm();
  };
  const auto r = lbfgs_minimize(f, Eigen::VectorXd::Zero(3), LbfgsOptions{});
  CHECK(r.iterations == 1);
  CHECK(r.status == LbfgsStatus::Stationary);
  CHECK(r.x.norm() == 0.0);
}

TEST_CASE("L-BFGS minimizes Rosenbrock from (-1.2, 1)") {
  auto f = [](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    const double a = 1.0 - x[0], b = x[1] - x[0] * x[0];
    g.resize(2);
    g[0] = -2.0 * a - 400.0 * x[0] * b;
    g[1] = 200.0 * b;
    return a * a + 100.0 * b * b;
  };
  LbfgsOptions opts;
  opts.max_iterations = 200;
  opts.energy_change_tolerance = 1e-300;
  Eigen::VectorXd x0(2);
  x0 << -1.2, 1.0;
  double best = std::numeric_limits<double>::infinity();
  int reached = -1;
  const auto r = lbfgs_minimize(f, x0, opts, [&](int it, const Eigen::VectorXd&, double e) {
    best = std::min(best, e);
    if (reached < 0 && e < 1e-10) reached = it;
  });
  CHECK(best < 1e-10);
  CHECK(reached > 0);
  CHECK(reached <= 200);
  CHECK((r.x - Eigen::Vector2d(1, 1)).norm() < 1e-4);
}

TEST_CASE("L-BFGS rejects a non-finite start and non-finite trial points") {
  auto bad = [](const Eigen::VectorXd&, Eigen::VectorXd& g) {
    g = Eigen::VectorXd::Zero(1);
    return std::numeric_limits<double>::quiet_NaN();
  };
  CHECK_THROWS_AS(lbfgs_minimize(bad, Eigen::VectorXd::Zero(1), LbfgsOptions{}), StructureError);

  // Infinite energy beyond x = 0.5 forces backtracking.
  auto wall = [](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    g = Eigen::VectorXd::Constant(1, x[0] - 2.0);
    return x[0] > 0.5 ? std::numeric_limits<double>::infinity() : 0.5 * (x[0] - 2.0) * (x[0] - 2.0);
  };
  const auto r = lbfgs_minimize(wall, Eigen::VectorXd::Zero(1), LbfgsOptions{});
  CHECK(r.x[0] <= 0.5);
  CHECK(std::isfinite(r.energy));
}

TEST_CASE("L-BFGS options are validated") {
  LbfgsOptions o;
  o.memory = 0;
  CHECK_THROWS_AS(o.validate(), StructureError);
  o = LbfgsOptions{};
  o.armijo_c1 = 1.0;
  CHECK_THROWS_AS(o.validate(), StructureError);
}

TEST_CASE("affine fit of identical pairs is the identity") {
  const Points p{Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0, 0, 1), Vec3(1, 1, 1)};
  const auto m = affine_fit(p, p);
  CHECK((m.A - Eigen::Matrix3d::Identity()).norm() < 1e-12);
  CHECK(m.b.norm() < 1e-12);
}

TEST_CASE("affine fit recovers a known transform") {
  Rng rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    Eigen::Matrix3d a;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) a(i, j) = rng.uniform(-2, 2);
    const Vec3 b = rng.vec(5.0);
    Points src(5 + trial), dst;
    for (auto& p : src) {
      p = rng.vec(3.0);
      dst.push_back(a * p + b);
    }
    const auto m = affine_fit(src, dst);
    CHECK((m.A - a).norm() < 1e-9);
    CHECK((m.b - b).norm() < 1e-9);
    const auto mapped = affine_init(src, src, dst);
    for (std::size_t i = 0; i < src.size(); ++i) CHECK((mapped[i] - dst[i]).norm() < 1e-9);
  }
}

TEST_CASE("affine fit rejects coplanar or too few landmarks") {
  const Points coplanar{Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(1, 1, 0)};
  CHECK_THROWS_AS(affine_fit(coplanar, coplanar), DegenerateGeometryError);
  const Points three{Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0)};
  CHECK_THROWS_AS(affine_fit(three, three), StructureError);
}

TEST_CASE("fit schedule validation") {
  FitSchedule s;
  CHECK_NOTHROW(s.validate());
  s.mu0 = 0.0;
  CHECK_THROWS_AS(s.validate(), StructureError);
  s = FitSchedule{};
  s.al_iterations = 0;
  CHECK_THROWS_AS(s.validate(), StructureError);
}
