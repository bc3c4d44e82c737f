#include "rationale/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "rationale/errors.hpp"

namespace rationale::losses {

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double cross_entropy(double logit, int label) {
  // softplus(z) - y z, with softplus(z) = max(z, 0) + log1p(exp(-|z|)).
  const double softplus = std::max(logit, 0.0) + std::log1p(std::exp(-std::abs(logit)));
  return softplus - (label ? logit : 0.0);
}

double cross_entropy_grad(double logit, int label) { return sigmoid(logit) - (label ? 1.0 : 0.0); }

namespace {

void check_batch(const ContrastiveBatch& b) {
  if (b.embeddings.cols() < 2) throw InvalidInput("contrastive loss needs at least two samples");
  if (static_cast<std::size_t>(b.embeddings.cols()) != b.labels.size())
    throw InvalidInput("contrastive batch: embedding and label counts differ");
  if (!(b.temperature > 0.0)) throw InvalidInput("contrastive temperature must be positive");
}

std::vector<int> positive_counts(const std::vector<int>& labels) {
  std::vector<int> counts(labels.size(), 0);
  for (std::size_t i = 0; i < labels.size(); ++i)
    for (std::size_t j = 0; j < labels.size(); ++j)
      if (i != j && labels[i] == labels[j]) ++counts[i];
  return counts;
}

}  // namespace

ContrastiveResult contrastive_loss_with_gradient(const ContrastiveBatch& batch) {
  check_batch(batch);
  const auto& Z = batch.embeddings;
  const Eigen::Index n = Z.cols();
  const Eigen::MatrixXd sim = (Z.transpose() * Z) / batch.temperature;
  const std::vector<int> positives = positive_counts(batch.labels);

  ContrastiveResult res;
  Eigen::MatrixXd d_sim = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int p = positives[static_cast<std::size_t>(i)];
    if (p == 0) continue;
    ++res.anchors;
    // Log-sum-exp over l != i, shifted by the row maximum.
    double m = -std::numeric_limits<double>::infinity();
    for (Eigen::Index l = 0; l < n; ++l)
      if (l != i) m = std::max(m, sim(i, l));
    double denom = 0.0;
    double positive_sum = 0.0;
    for (Eigen::Index l = 0; l < n; ++l) {
      if (l == i) continue;
      const double e = std::exp(sim(i, l) - m);
      d_sim(i, l) = e;
      denom += e;
      if (batch.labels[l] == batch.labels[i]) positive_sum += sim(i, l);
    }
    const double log_denom = m + std::log(denom);
    res.loss += log_denom - positive_sum / p;
    for (Eigen::Index l = 0; l < n; ++l) {
      if (l == i) continue;
      d_sim(i, l) /= denom;
      if (batch.labels[l] == batch.labels[i]) d_sim(i, l) -= 1.0 / p;
    }
  }
  res.gradient = Z * (d_sim + d_sim.transpose()) / batch.temperature;
  return res;
}

double contrastive_loss(const ContrastiveBatch& batch) { return contrastive_loss_with_gradient(batch).loss; }

ContrastiveBatch make_contrastive_batch(std::span<const Eigen::MatrixXd* const> per_doc, double temperature) {
  ContrastiveBatch b;
  b.temperature = temperature;
  if (per_doc.empty()) return b;
  const Eigen::Index dim = per_doc[0]->rows();
  const Eigen::Index K = per_doc[0]->cols();
  b.embeddings.resize(dim, K * static_cast<Eigen::Index>(per_doc.size()));
  for (std::size_t i = 0; i < per_doc.size(); ++i) {
    b.embeddings.middleCols(static_cast<Eigen::Index>(i) * K, K) = *per_doc[i];
    for (Eigen::Index k = 0; k < K; ++k) b.labels.push_back(static_cast<int>(k));
  }
  return b;
}

double length_regularizer(const model::RationaleMasks& masks, double target) {
  if (!masks.has_null_row) throw InvalidInput("length regularizer needs Short-mode masks");
  const double selected = 1.0 - masks.weights.row(masks.weights.rows() - 1).mean();
  return (selected - target) * (selected - target);
}

void length_regularizer_grad(const model::RationaleMasks& masks, double target, double scale,
                             Eigen::MatrixXd& grad) {
  if (!masks.has_null_row) throw InvalidInput("length regularizer needs Short-mode masks");
  const Eigen::Index null_row = masks.weights.rows() - 1;
  const double L = double(masks.weights.cols());
  const double selected = 1.0 - masks.weights.row(null_row).mean();
  grad.row(null_row).array() += scale * 2.0 * (selected - target) * (-1.0 / L);
}

double continuity_regularizer(const model::RationaleMasks& masks) {
  const Eigen::Index L = masks.weights.cols();
  const Eigen::Index K = masks.aspects();
  if (L < 2) return 0.0;
  const auto rows = masks.weights.topRows(K);
  const double sum = (rows.leftCols(L - 1) - rows.rightCols(L - 1)).squaredNorm();
  return sum / double(K * (L - 1));
}

void continuity_regularizer_grad(const model::RationaleMasks& masks, double scale, Eigen::MatrixXd& grad) {
  const Eigen::Index L = masks.weights.cols();
  const Eigen::Index K = masks.aspects();
  if (L < 2) return;
  const auto rows = masks.weights.topRows(K);
  const Eigen::MatrixXd diff = rows.leftCols(L - 1) - rows.rightCols(L - 1);
  const double c = scale * 2.0 / double(K * (L - 1));
  grad.topLeftCorner(K, L - 1) += c * diff;
  grad.block(0, 1, K, L - 1) -= c * diff;
}

void validate(const LossWeights& w) {
  for (double v : {w.ce, w.contra, w.length, w.continuity})
    if (!(std::isfinite(v) && v >= 0.0)) throw ConfigError("loss weights must be finite and nonnegative");
  if (!(w.target_selected_fraction > 0.0 && w.target_selected_fraction <= 1.0))
    throw ConfigError("target_selected_fraction must lie in (0, 1]");
}

std::string_view to_string(StageRole role) {
  switch (role) {
    case StageRole::Joint: return "joint";
    case StageRole::ContraOnly: return "contra_only";
    case StageRole::PredictorOnly: return "predictor_only";
  }
  return "?";
}

LossBreakdown& LossBreakdown::operator+=(const LossBreakdown& o) {
  ce += o.ce;
  contra += o.contra;
  length += o.length;
  continuity += o.continuity;
  total += o.total;
  return *this;
}

LossBreakdown LossBreakdown::scaled(double s) const {
  return {ce * s, contra * s, length * s, continuity * s, total * s};
}

LossBreakdown total_loss(std::span<const model::ModelOutput> outputs,
                         std::span<const std::optional<int>> labels,
                         const LossWeights& w,
                         StageRole role,
                         double temperature) {
  validate(w);
  if (role == StageRole::ContraOnly && w.contra == 0.0)
    throw ConfigError("contra_only stage requires a positive contrastive weight");
  LossBreakdown out;
  if (outputs.empty()) return out;
  const double n = double(outputs.size());
  const bool use_ce = role != StageRole::ContraOnly && w.ce > 0.0;
  if (use_ce && labels.size() != outputs.size()) throw InvalidInput("labels and outputs differ in count");

  for (std::size_t i = 0; i < outputs.size(); ++i) {
    const auto& o = outputs[i];
    if (use_ce) {
      if (!labels[i]) throw ConfigError("cross entropy requested on an unlabeled document");
      out.ce += w.ce * cross_entropy(o.overall_logit, *labels[i]) / n;
    }
    if (o.masks.has_null_row && w.length > 0.0)
      out.length += w.length * length_regularizer(o.masks, w.target_selected_fraction) / n;
    if (w.continuity > 0.0) out.continuity += w.continuity * continuity_regularizer(o.masks) / n;
  }
  if (w.contra > 0.0 && outputs.size() * static_cast<std::size_t>(outputs[0].embeddings.cols()) >= 2) {
    std::vector<const Eigen::MatrixXd*> per_doc;
    for (const auto& o : outputs) per_doc.push_back(&o.embeddings);
    auto batch = make_contrastive_batch(per_doc, temperature);
    out.contra = w.contra * contrastive_loss(batch) / double(batch.labels.size());
  }
  out.total = out.ce + out.contra + out.length + out.continuity;
  return out;
}

}  // namespace rationale::losses
