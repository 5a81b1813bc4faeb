#include "tgh/appearance.hpp"

#include <algorithm>
#include <cmath>

namespace tgh {

double sh_norm(const ShArray& h) {
  double s = 0.0;
  for (double v : h) s += v * v;
  return std::sqrt(s);
}

bool is_zero(const ShArray& h) {
  for (double v : h)
    if (v != 0.0) return false;
  return true;
}

ShArray gate_gradients(const ShArray& h, const ShArray& g_h, const AppearanceGate& gate) {
  if (!is_zero(h) || sh_norm(g_h) >= gate.g_th) return g_h;
  return ShArray{};
}

double view_dependent_fraction(std::span<const Gaussian4D> population) {
  if (population.empty()) return 0.0;
  std::size_t vd = 0;
  for (const auto& g : population) vd += is_diffuse(g) ? 0 : 1;
  return static_cast<double>(vd) / static_cast<double>(population.size());
}

AppearanceGate update_ratio_cutoff(double fraction, AppearanceGate gate) {
  if (!gate.frozen && fraction >= gate.lambda_h) {
    gate.g_th = std::numeric_limits<double>::infinity();
    gate.frozen = true;
  }
  return gate;
}

AppearanceGate update_ratio_cutoff(std::span<const Gaussian4D> population, AppearanceGate gate) {
  if (population.empty()) return gate;
  return update_ratio_cutoff(view_dependent_fraction(population), gate);
}

AppearanceGroups group_by_appearance(std::span<const GaussianId> ids, std::span<const Gaussian4D> gaussians) {
  std::vector<std::size_t> order(ids.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return ids[a] < ids[b]; });
  AppearanceGroups groups;
  for (std::size_t i : order) (is_diffuse(gaussians[i]) ? groups.diffuse : groups.view_dependent).push_back(ids[i]);
  return groups;
}

AppearanceGroups group_by_appearance(const Hierarchy& h) {
  const std::vector<GaussianId> ids = h.ids();
  std::vector<Gaussian4D> gs;
  gs.reserve(ids.size());
  for (GaussianId id : ids) gs.push_back(h.get(id));
  return group_by_appearance(ids, gs);
}

void AppearanceController::recount(std::size_t view_dependent, std::size_t population) {
  view_dependent_ = view_dependent;
  population_ = population;
  if (population_ > 0)
    gate_ = update_ratio_cutoff(static_cast<double>(view_dependent_) / static_cast<double>(population_), gate_);
}

std::size_t AppearanceController::apply(std::span<const Gaussian4D> gaussians, std::span<GaussianGradient> gradients) {
  struct Candidate {
    double norm;
    std::size_t index;
  };
  std::vector<Candidate> candidates;
  for (std::size_t i = 0; i < gaussians.size(); ++i) {
    if (!is_diffuse(gaussians[i])) continue;
    const double n = sh_norm(gradients[i].sh_residual);
    if (n != 0.0 && n >= gate_.g_th)
      candidates.push_back({n, i});
    else
      gradients[i].sh_residual.fill(0.0);
  }
  if (candidates.empty()) return 0;

  std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    return a.norm != b.norm ? a.norm > b.norm : a.index < b.index;
  });
  const auto quota_total = static_cast<std::size_t>(std::ceil(gate_.lambda_h * static_cast<double>(population_)));
  const std::size_t quota = quota_total > view_dependent_ ? quota_total - view_dependent_ : 0;
  const std::size_t admitted = std::min(quota, candidates.size());
  for (std::size_t k = admitted; k < candidates.size(); ++k) gradients[candidates[k].index].sh_residual.fill(0.0);
  view_dependent_ += admitted;
  if (population_ > 0 && view_dependent_ >= quota_total)
    gate_ = update_ratio_cutoff(static_cast<double>(view_dependent_) / static_cast<double>(population_), gate_);
  return admitted;
}

}  // namespace tgh
