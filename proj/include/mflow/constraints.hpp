#pragma once

#include <span>
#include <vector>

#include "mflow/core.hpp"

namespace mflow {

enum class ConstraintKind { Orthogonality, EqualLength };

/// One scalar medial constraint C_l(q).
///   Orthogonality: (q_b - q_m) . (W^gamma q) at spoke j of tuple i.
///   EqualLength:   |q_b(j) - q_m|^2 - |q_b(0) - q_m|^2 for j >= 1.
struct Constraint {
  int tuple = -1;
  ConstraintKind kind = ConstraintKind::Orthogonality;
  int spoke = 0;
  int gamma = 1;  // 1 or 2; orthogonality only
  int boundary = -1;   // landmark of spoke j
  int medial = -1;
  int reference = -1;  // landmark of spoke 0 (equal length only)
};

class ConstraintSet {
public:
  ConstraintSet() = default;
  ConstraintSet(const MedialTemplate& tpl, TangentOperators ops);

  std::size_t size() const noexcept { return constraints_.size(); }
  const std::vector<Constraint>& constraints() const noexcept { return constraints_; }
  const TangentOperators& tangents() const noexcept { return ops_; }

  /// All C_l(q), in the order of constraints().
  std::vector<double> evaluate(std::span<const Vec3> q) const;

  /// grad += sum_l weights[l] * dC_l/dq
  void accumulate_gradient(std::span<const Vec3> q, std::span<const double> weights,
                           std::span<Vec3> grad) const;

private:
  TangentOperators ops_;
  std::vector<Constraint> constraints_;
};

/// Expected constraint count: sum over tuples with n > 1 of 2n + (n - 1).
std::size_t expected_constraint_count(const MedialTemplate& tpl);

std::vector<double> evaluate_constraints(std::span<const Vec3> q, const MedialTemplate& tpl,
                                         const TangentOperators& ops);

inline constexpr double kDefaultMuScale = 10.0;

/// Augmented Lagrangian state. Multipliers live on the constraint samples
/// s = 1..T; lambda(s, l) with s in [1, T].
class ALState {
public:
  ALState() = default;
  ALState(std::size_t constraint_count, int steps, double mu, double mu_scale = kDefaultMuScale);

  double mu() const noexcept { return mu_; }
  double mu_scale() const noexcept { return mu_scale_; }
  int iteration() const noexcept { return iteration_; }
  int steps() const noexcept { return steps_; }
  std::size_t constraint_count() const noexcept { return count_; }

  double lambda(int s, std::size_t l) const { return lambda_[index(s, l)]; }
  double& lambda(int s, std::size_t l) { return lambda_[index(s, l)]; }
  std::span<const double> lambda_row(int s) const {
    if (s < 1 || s > steps_) throw StructureError("multiplier timestep out of range");
    return std::span<const double>(lambda_).subspan(static_cast<std::size_t>(s - 1) * count_, count_);
  }
  const std::vector<double>& lambda_values() const noexcept { return lambda_; }

  void set_mu(double mu);
  void set_iteration(int m) noexcept { iteration_ = m; }

private:
  std::size_t index(int s, std::size_t l) const;

  std::vector<double> lambda_;
  std::size_t count_ = 0;
  int steps_ = 0;
  double mu_ = 1.0;
  double mu_scale_ = kDefaultMuScale;
  int iteration_ = 1;
};

/// Integrand sum_l (mu/2) C_l^2 - lambda_l(t_s) C_l at constraint sample s.
double penalty_and_multiplier_terms(std::span<const double> c, const ALState& al, int s);

/// lambda <- lambda - mu C ; mu <- mu * mu_scale. c_per_step[s-1] holds C(q^s).
ALState update_multipliers(const ALState& al, const std::vector<std::vector<double>>& c_per_step);

struct DeviationReport {
  std::vector<std::vector<double>> per_spoke_deg;  // indexed like tpl.tuples; empty for n == 1
  double max_deg = 0.0;
};

DeviationReport spoke_normal_deviation(std::span<const Vec3> q, const MedialTemplate& tpl,
                                       const TangentOperators& ops);

struct MismatchReport {
  std::vector<double> per_tuple;  // 0 for n == 1 tuples
  double max_rel = 0.0;
};

MismatchReport spoke_spoke_mismatch(std::span<const Vec3> q, const MedialTemplate& tpl);

/// min over all boundary landmarks of |q_m - q_b| minus the tuple's first
/// spoke length; diagnostic for the inscribed-ball condition.
std::vector<double> inscribed_slack(std::span<const Vec3> q, const MedialTemplate& tpl);

}  // namespace mflow
