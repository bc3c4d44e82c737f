#pragma once

#include <span>
#include <vector>

#include "rationale/backprop.hpp"
#include "rationale/corpus.hpp"
#include "rationale/losses.hpp"
#include "rationale/model.hpp"

// Batch objective and gradient kernels. Documents are independent except
// through the contrastive term, so the per-document forward and backward
// passes run data-parallel; the serial path is the reference the parallel
// one is tested against. Reductions always run in document order, so both
// paths give bitwise-identical results for any thread count.
namespace rationale::kernels {

enum class Execution { Serial, Parallel };

struct Objective {
  losses::LossWeights weights;
  losses::StageRole role = losses::StageRole::Joint;
  double temperature = losses::kDefaultContrastiveTemperature;
};

struct BatchItem {
  const corpus::Document* doc = nullptr;
  const model::RationaleMasks* masks = nullptr;  // overrides the generator when set
};

// Reusable per-document buffers.
struct Workspace {
  std::vector<model::DocTrace> traces;
  std::vector<model::DocGradients> grads;
  std::vector<model::Upstream> upstream;
  std::vector<losses::LossBreakdown> terms;
};

// Loss of one batch under `objective`.
losses::LossBreakdown batch_loss(const model::Model& model, std::span<const BatchItem> batch,
                                 const Objective& objective, Execution exec, Workspace& ws);

// Loss and gradients of one batch; `grads` is overwritten for groups in
// `scope` and zeroed elsewhere.
losses::LossBreakdown batch_gradients(const model::Model& model, std::span<const BatchItem> batch,
                                      const Objective& objective, const model::GradientScope& scope,
                                      Execution exec, Workspace& ws, model::Gradients& grads);

std::vector<model::ModelOutput> forward_all(const model::Model& model, std::span<const corpus::Document> docs,
                                            Execution exec);

std::vector<BatchItem> items_of(std::span<const corpus::Document> docs);

}  // namespace rationale::kernels
