#pragma once

#include <span>
#include <vector>

#include <Eigen/Core>

#include "mflow/core.hpp"

namespace mflow {

struct KernelConfig {
  explicit KernelConfig(double sigma = 1.0);

  double sigma() const noexcept { return sigma_; }
  double inv_sigma_sq() const noexcept { return inv_sigma_sq_; }

private:
  double sigma_;
  double inv_sigma_sq_;
};

/// Per-timestep, per-landmark momenta u_i(t_s), s = 0..T-1.
class MomentumField {
public:
  MomentumField() = default;
  MomentumField(int steps, std::size_t landmarks);

  int steps() const noexcept { return steps_; }
  std::size_t landmarks() const noexcept { return landmarks_; }

  std::span<Vec3> at(int s) { return std::span<Vec3>(data_).subspan(offset(s), landmarks_); }
  std::span<const Vec3> at(int s) const { return std::span<const Vec3>(data_).subspan(offset(s), landmarks_); }

  /// Flattened view for the optimizer: [s][i][xyz].
  Eigen::Map<Eigen::VectorXd> flat();
  Eigen::Map<const Eigen::VectorXd> flat() const;

  bool operator==(const MomentumField& other) const;

private:
  std::size_t offset(int s) const;

  int steps_ = 0;
  std::size_t landmarks_ = 0;
  Points data_;
};

/// Gaussian radial profile exp(-0.5 z^2 / sigma^2).
double eta(double z, const KernelConfig& cfg);

/// exp(-0.5 d2 / sigma^2) from a squared distance.
inline double eta_sq(double d2, const KernelConfig& cfg) { return std::exp(-0.5 * d2 * cfg.inv_sigma_sq()); }

Vec3 velocity_at(const Vec3& x, std::span<const Vec3> q, std::span<const Vec3> u, const KernelConfig& cfg);

/// Kernel Gram matrix G_ij = eta(|q_i - q_j|).
Eigen::MatrixXd gram_matrix(std::span<const Vec3> q, const KernelConfig& cfg);

/// out_i = sum_j G_ij u_j, summing j in ascending order for every row.
void apply_gram(const Eigen::MatrixXd& gram, std::span<const Vec3> u, std::span<Vec3> out);

double kinetic_norm_sq(std::span<const Vec3> q, std::span<const Vec3> u, const KernelConfig& cfg);

}  // namespace mflow
