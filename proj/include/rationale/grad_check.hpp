#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "rationale/backprop.hpp"
#include "rationale/model.hpp"

namespace rationale::model {

// A parameter tensor viewed flat, with its analytic gradient alongside.
struct ParamSlot {
  std::string name;
  std::span<double> value;
  std::span<const double> analytic;
};

struct GradCheckResult {
  double max_error = 0.0;
  std::size_t checked = 0;
  std::string worst;  // "tensor[index]" of the largest error
};

// Central differences (f(x+eps) - f(x-eps)) / 2eps on up to `per_slot`
// seeded-sampled entries of each slot (all entries when per_slot == 0).
// The error is relative, or absolute when |analytic| < 1e-6. Every
// perturbed value is restored. Throws NumericError on a non-finite loss.
GradCheckResult grad_check(const std::function<double()>& loss, std::span<const ParamSlot> slots,
                           double epsilon, std::size_t per_slot = 0, std::uint64_t seed = 0);

// Pairs every model tensor with the matching gradient tensor.
std::vector<ParamSlot> param_slots(Model& model, const Gradients& grads);

}  // namespace rationale::model
