#include "mflow/kernel.hpp"

#include <cmath>

#include <fmt/format.h>

namespace mflow {

KernelConfig::KernelConfig(double sigma) : sigma_(sigma), inv_sigma_sq_(0.0) {
  if (!(sigma > 0.0) || !std::isfinite(sigma))
    throw StructureError(fmt::format("kernel sigma must be finite and positive, got {}", sigma));
  inv_sigma_sq_ = 1.0 / (sigma * sigma);
}

MomentumField::MomentumField(int steps, std::size_t landmarks)
    : steps_(steps), landmarks_(landmarks), data_(static_cast<std::size_t>(steps) * landmarks, Vec3::Zero()) {
  if (steps < 1) throw StructureError("momentum field needs at least one timestep");
}

std::size_t MomentumField::offset(int s) const {
  if (s < 0 || s >= steps_) throw StructureError(fmt::format("momentum timestep {} out of range", s));
  return static_cast<std::size_t>(s) * landmarks_;
}

Eigen::Map<Eigen::VectorXd> MomentumField::flat() {
  return {data_.empty() ? nullptr : data_[0].data(), static_cast<Eigen::Index>(3 * data_.size())};
}

Eigen::Map<const Eigen::VectorXd> MomentumField::flat() const {
  return {data_.empty() ? nullptr : data_[0].data(), static_cast<Eigen::Index>(3 * data_.size())};
}

bool MomentumField::operator==(const MomentumField& other) const {
  return steps_ == other.steps_ && landmarks_ == other.landmarks_ && data_ == other.data_;
}

double eta(double z, const KernelConfig& cfg) { return eta_sq(z * z, cfg); }

Vec3 velocity_at(const Vec3& x, std::span<const Vec3> q, std::span<const Vec3> u, const KernelConfig& cfg) {
  Vec3 v = Vec3::Zero();
  for (std::size_t j = 0; j < q.size(); ++j) v += eta_sq((x - q[j]).squaredNorm(), cfg) * u[j];
  return v;
}

Eigen::MatrixXd gram_matrix(std::span<const Vec3> q, const KernelConfig& cfg) {
  const auto k = static_cast<Eigen::Index>(q.size());
  Eigen::MatrixXd g(k, k);
  // Each entry depends only on its pair, so the fill order does not affect values.
#pragma omp parallel for schedule(static)
  for (Eigen::Index i = 0; i < k; ++i) {
    g(i, i) = 1.0;
    for (Eigen::Index j = i + 1; j < k; ++j) {
      const double e = eta_sq((q[i] - q[j]).squaredNorm(), cfg);
      g(i, j) = e;
      g(j, i) = e;
    }
  }
  return g;
}

void apply_gram(const Eigen::MatrixXd& gram, std::span<const Vec3> u, std::span<Vec3> out) {
  const auto k = gram.rows();
#pragma omp parallel for schedule(static)
  for (Eigen::Index i = 0; i < k; ++i) {
    // Column-major storage: column i equals row i by symmetry.
    const double* col = gram.col(i).data();
    double x = 0.0, y = 0.0, z = 0.0;
    for (Eigen::Index j = 0; j < k; ++j) {
      x += col[j] * u[j].x();
      y += col[j] * u[j].y();
      z += col[j] * u[j].z();
    }
    out[i] = Vec3(x, y, z);
  }
}

double kinetic_norm_sq(std::span<const Vec3> q, std::span<const Vec3> u, const KernelConfig& cfg) {
  double total = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < q.size(); ++j)
      row += eta_sq((q[i] - q[j]).squaredNorm(), cfg) * u[i].dot(u[j]);
    total += row;
  }
  return total;
}

}  // namespace mflow
