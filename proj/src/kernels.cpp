#include "rationale/kernels.hpp"

#include <cmath>

#include "rationale/errors.hpp"

namespace rationale::kernels {

using losses::LossBreakdown;
using losses::StageRole;

namespace {

template <class Fn>
void for_each_doc(std::size_t n, Execution exec, Fn&& fn) {
  if (exec == Execution::Parallel) {
    const auto count = static_cast<long long>(n);
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < count; ++i) fn(static_cast<std::size_t>(i));
  } else {
    for (std::size_t i = 0; i < n; ++i) fn(i);
  }
}

void check_objective(const Objective& obj) {
  if (obj.role == StageRole::ContraOnly && obj.weights.contra == 0.0)
    throw ConfigError("contra_only stage requires a positive contrastive weight");
}

bool uses_ce(const Objective& obj) { return obj.role != StageRole::ContraOnly && obj.weights.ce > 0.0; }

int label_of(const BatchItem& item) {
  if (!item.doc->overall_label) throw ConfigError("cross entropy requested on an unlabeled document");
  return *item.doc->overall_label;
}

// Per-document loss terms and their upstream gradients for everything but
// the contrastive term.
void local_terms(const model::ModelOutput& out, const BatchItem& item, const Objective& obj, double n,
                 bool with_grad, LossBreakdown& terms, model::Upstream& up) {
  const auto& w = obj.weights;
  terms = {};
  if (with_grad) {
    up.overall_logit = 0.0;
    up.masks = Eigen::MatrixXd::Zero(out.masks.weights.rows(), out.masks.weights.cols());
  }
  if (uses_ce(obj)) {
    const int y = label_of(item);
    terms.ce = w.ce * losses::cross_entropy(out.overall_logit, y) / n;
    if (with_grad) up.overall_logit = w.ce * losses::cross_entropy_grad(out.overall_logit, y) / n;
  }
  if (out.masks.has_null_row && w.length > 0.0) {
    terms.length = w.length * losses::length_regularizer(out.masks, w.target_selected_fraction) / n;
    if (with_grad) losses::length_regularizer_grad(out.masks, w.target_selected_fraction, w.length / n, up.masks);
  }
  if (w.continuity > 0.0) {
    terms.continuity = w.continuity * losses::continuity_regularizer(out.masks) / n;
    if (with_grad) losses::continuity_regularizer_grad(out.masks, w.continuity / n, up.masks);
  }
}

LossBreakdown run(const model::Model& model, std::span<const BatchItem> batch, const Objective& obj,
                  const model::GradientScope* scope, Execution exec, Workspace& ws, model::Gradients* grads) {
  check_objective(obj);
  const std::size_t n = batch.size();
  LossBreakdown total;
  if (n == 0) {
    if (grads) grads->set_zero();
    return total;
  }
  const bool with_grad = grads != nullptr;
  // Checked up front: nothing may throw inside the parallel region.
  if (uses_ce(obj))
    for (const auto& item : batch) label_of(item);
  if (ws.traces.size() < n) ws.traces.resize(n);
  if (ws.upstream.size() < n) ws.upstream.resize(n);
  if (ws.terms.size() < n) ws.terms.resize(n);
  if (with_grad && ws.grads.size() < n) {
    const std::size_t old = ws.grads.size();
    ws.grads.resize(n);
    for (std::size_t i = old; i < n; ++i) ws.grads[i] = model::zeros_like_doc(model);
  }
  // Workspace gradients may come from a model of another shape.
  if (with_grad)
    for (std::size_t i = 0; i < n; ++i)
      if (ws.grads[i].generator.heads() != model.generator.heads() ||
          ws.grads[i].predictor.aspects() != model.aspects() ||
          ws.grads[i].generator.rnn.hidden() != model.hidden())
        ws.grads[i] = model::zeros_like_doc(model);

  const double dn = double(n);
  for_each_doc(n, exec, [&](std::size_t i) {
    model::forward_trace(model, *batch[i].doc, ws.traces[i], batch[i].masks);
    local_terms(ws.traces[i].output, batch[i], obj, dn, with_grad, ws.terms[i], ws.upstream[i]);
  });

  for (std::size_t i = 0; i < n; ++i) total += ws.terms[i];

  const int K = model.aspects();
  if (obj.weights.contra > 0.0 && n * static_cast<std::size_t>(K) >= 2) {
    std::vector<const Eigen::MatrixXd*> per_doc(n);
    for (std::size_t i = 0; i < n; ++i) per_doc[i] = &ws.traces[i].output.embeddings;
    const auto cb = losses::make_contrastive_batch(per_doc, obj.temperature);
    const double scale = obj.weights.contra / double(cb.labels.size());
    if (with_grad) {
      auto res = losses::contrastive_loss_with_gradient(cb);
      total.contra = scale * res.loss;
      for (std::size_t i = 0; i < n; ++i)
        ws.upstream[i].embeddings = scale * res.gradient.middleCols(static_cast<Eigen::Index>(i) * K, K);
    } else {
      total.contra = scale * losses::contrastive_loss(cb);
    }
  } else if (with_grad) {
    for (std::size_t i = 0; i < n; ++i) ws.upstream[i].embeddings.resize(0, 0);
  }
  total.total = total.ce + total.contra + total.length + total.continuity;
  if (!std::isfinite(total.total)) throw NumericError("non-finite batch loss");
  if (!with_grad) return total;

  for_each_doc(n, exec, [&](std::size_t i) {
    model::backward_trace(model, *batch[i].doc, ws.traces[i], ws.upstream[i], *scope, ws.grads[i]);
  });
  grads->set_zero();
  for (std::size_t i = 0; i < n; ++i) grads->add(ws.grads[i], *batch[i].doc, *scope);
  return total;
}

}  // namespace

LossBreakdown batch_loss(const model::Model& model, std::span<const BatchItem> batch, const Objective& objective,
                         Execution exec, Workspace& ws) {
  return run(model, batch, objective, nullptr, exec, ws, nullptr);
}

LossBreakdown batch_gradients(const model::Model& model, std::span<const BatchItem> batch,
                              const Objective& objective, const model::GradientScope& scope, Execution exec,
                              Workspace& ws, model::Gradients& grads) {
  return run(model, batch, objective, &scope, exec, ws, &grads);
}

std::vector<model::ModelOutput> forward_all(const model::Model& model, std::span<const corpus::Document> docs,
                                            Execution exec) {
  std::vector<model::ModelOutput> out(docs.size());
  for_each_doc(docs.size(), exec, [&](std::size_t i) { out[i] = model::forward(model, docs[i]); });
  return out;
}

std::vector<BatchItem> items_of(std::span<const corpus::Document> docs) {
  std::vector<BatchItem> items;
  items.reserve(docs.size());
  for (const auto& d : docs) items.push_back({&d, nullptr});
  return items;
}

}  // namespace rationale::kernels
