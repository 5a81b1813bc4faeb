#pragma once

#include <array>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "tgh/gaussian.hpp"
#include "tgh/hierarchy.hpp"

namespace tgh {

using ShArray = std::array<double, kShCoeffs>;

struct AppearanceGate {
  double g_th = 1e-6;     // gradient-norm threshold for zero-residual Gaussians
  double lambda_h = 0.15;  // view-dependent fraction at which g_th becomes infinite
  bool frozen = false;     // never reverts once set
};

double sh_norm(const ShArray& h);

/// Elementwise exact zero. A norm test would underflow for tiny residuals.
bool is_zero(const ShArray& h);
inline bool is_diffuse(const Gaussian4D& g) { return is_zero(g.sh_residual); }

/// Passes g_h when h is nonzero or its norm reaches g_th; zero otherwise.
ShArray gate_gradients(const ShArray& h, const ShArray& g_h, const AppearanceGate& gate);

/// Fraction of Gaussians with a nonzero residual; 0 for an empty population.
double view_dependent_fraction(std::span<const Gaussian4D> population);

/// Freezes the gate (g_th = inf) once the fraction reaches lambda_h.
AppearanceGate update_ratio_cutoff(double view_dependent_fraction, AppearanceGate gate);
AppearanceGate update_ratio_cutoff(std::span<const Gaussian4D> population, AppearanceGate gate);

struct AppearanceGroups {
  std::vector<GaussianId> diffuse;         // ascending
  std::vector<GaussianId> view_dependent;  // ascending
};

AppearanceGroups group_by_appearance(std::span<const GaussianId> ids, std::span<const Gaussian4D> gaussians);
AppearanceGroups group_by_appearance(const Hierarchy& h);

/// Gate plus an incrementally maintained view-dependent count, so the ratio
/// cutoff is enforced inside a step instead of only at checkpoints.
class AppearanceController {
 public:
  explicit AppearanceController(AppearanceGate gate = {}) : gate_(gate) {}

  const AppearanceGate& gate() const { return gate_; }
  std::size_t view_dependent() const { return view_dependent_; }
  std::size_t population() const { return population_; }

  /// Resynchronizes counts with the population (after densification or pruning)
  /// and applies the ratio cutoff.
  void recount(std::size_t view_dependent, std::size_t population);

  /// Gates the residual gradients of one step in place. Zero-residual candidates
  /// that pass g_th are admitted by decreasing gradient norm until the
  /// view-dependent count reaches ceil(lambda_h * population), at which point the
  /// gate freezes and the rest are zeroed. Returns the number admitted.
  std::size_t apply(std::span<const Gaussian4D> gaussians, std::span<GaussianGradient> gradients);

 private:
  AppearanceGate gate_;
  std::size_t view_dependent_ = 0;
  std::size_t population_ = 0;
};

}  // namespace tgh
