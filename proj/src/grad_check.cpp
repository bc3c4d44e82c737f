#include "rationale/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "rationale/errors.hpp"

namespace rationale::model {

GradCheckResult grad_check(const std::function<double()>& loss, std::span<const ParamSlot> slots,
                           double epsilon, std::size_t per_slot, std::uint64_t seed) {
  if (!(epsilon > 0.0)) throw InvalidInput("grad_check epsilon must be positive");
  if (!std::isfinite(loss())) throw NumericError("grad_check: loss is not finite at the base point");
  std::mt19937_64 rng(seed);
  GradCheckResult res;
  for (const auto& slot : slots) {
    if (slot.value.size() != slot.analytic.size())
      throw InvalidInput("grad_check: value and gradient sizes differ for " + slot.name);
    std::vector<std::size_t> idx(slot.value.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (per_slot != 0 && idx.size() > per_slot) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(per_slot);
    }
    for (std::size_t i : idx) {
      double& x = slot.value[i];
      const double saved = x;
      x = saved + epsilon;
      const double up = loss();
      x = saved - epsilon;
      const double down = loss();
      x = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) throw NumericError("grad_check: non-finite loss");
      const double numeric = (up - down) / (2.0 * epsilon);
      const double analytic = slot.analytic[i];
      const double diff = std::abs(analytic - numeric);
      const double err =
          std::abs(analytic) < 1e-6 ? diff : diff / std::max(std::abs(analytic), std::abs(numeric));
      ++res.checked;
      if (err > res.max_error) {
        res.max_error = err;
        res.worst = slot.name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return res;
}

std::vector<ParamSlot> param_slots(Model& model, const Gradients& grads) {
  std::vector<std::span<const double>> analytic;
  for_each_tensor(grads, [&](ParamGroup, const std::string&, const auto& t) {
    analytic.emplace_back(t.data(), static_cast<std::size_t>(t.size()));
  });
  std::vector<ParamSlot> slots;
  std::size_t i = 0;
  for_each_tensor(model, [&](ParamGroup, const std::string& name, auto& t) {
    slots.push_back({name, std::span<double>(t.data(), static_cast<std::size_t>(t.size())), analytic.at(i++)});
  });
  return slots;
}

}  // namespace rationale::model
