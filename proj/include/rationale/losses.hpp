#pragma once

#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "rationale/model.hpp"

namespace rationale::losses {

inline constexpr double kDefaultContrastiveTemperature = 0.07;

// -[y log sigmoid(z) + (1-y) log(1 - sigmoid(z))], stable for large |z|.
double cross_entropy(double logit, int label);
// d cross_entropy / d logit = sigmoid(z) - y.
double cross_entropy_grad(double logit, int label);
double sigmoid(double x);

// Samples are the columns of `embeddings`; labels are aspect indices.
struct ContrastiveBatch {
  Eigen::MatrixXd embeddings;  // dim x n
  std::vector<int> labels;     // n
  double temperature = kDefaultContrastiveTemperature;
};

// Supervised contrastive loss with aspect indices as labels:
//
//   L = - sum_i 1/|P(i)| sum_{j in P(i)} log( exp(z_i.z_j/tau) / sum_{l != i} exp(z_i.z_l/tau) )
//
// where P(i) are the other samples sharing i's label. Anchors with empty
// P(i) contribute nothing. The result is the plain sum over anchors.
double contrastive_loss(const ContrastiveBatch& batch);

struct ContrastiveResult {
  double loss = 0.0;
  Eigen::MatrixXd gradient;  // dim x n, d loss / d embeddings
  int anchors = 0;           // anchors with at least one positive
};
ContrastiveResult contrastive_loss_with_gradient(const ContrastiveBatch& batch);

// Builds the batch from per-document embedding matrices (2h x K each); the
// sample for aspect k of document i is column i*K + k with label k.
ContrastiveBatch make_contrastive_batch(std::span<const Eigen::MatrixXd* const> per_doc, double temperature);

// (selected_fraction - target)^2 with selected_fraction = 1 - mean null-row
// mass. Requires Short-mode masks.
double length_regularizer(const model::RationaleMasks& masks, double target);
// Adds d/d masks into `grad` (rows x L).
void length_regularizer_grad(const model::RationaleMasks& masks, double target, double scale,
                             Eigen::MatrixXd& grad);

// Mean over aspect rows and adjacent pairs of (M[k,t] - M[k,t+1])^2.
double continuity_regularizer(const model::RationaleMasks& masks);
void continuity_regularizer_grad(const model::RationaleMasks& masks, double scale, Eigen::MatrixXd& grad);

struct LossWeights {
  double ce = 1.0;
  double contra = 1.0;
  double length = 1.0;
  double continuity = 0.1;
  double target_selected_fraction = 0.5;

  bool operator==(const LossWeights&) const = default;
};

void validate(const LossWeights& w);

enum class StageRole { Joint, ContraOnly, PredictorOnly };

std::string_view to_string(StageRole role);

struct LossBreakdown {
  double ce = 0.0;          // weighted mean cross entropy
  double contra = 0.0;      // weighted contrastive loss per anchor sample
  double length = 0.0;      // weighted mean length regularizer
  double continuity = 0.0;  // weighted mean continuity regularizer
  double total = 0.0;

  LossBreakdown& operator+=(const LossBreakdown& o);
  LossBreakdown scaled(double s) const;
};

// Batch objective of one stage role:
//   joint / predictor_only: w_ce CE + w_contra Contra + regularizers
//   contra_only:            w_contra Contra + regularizers (labels unused)
// CE and the regularizers are batch means; Contra is contrastive_loss over the
// K*N batch samples divided by K*N. The length term applies to Short masks
// only. Throws ConfigError for contra_only with w_contra = 0.
LossBreakdown total_loss(std::span<const model::ModelOutput> outputs,
                         std::span<const std::optional<int>> labels,
                         const LossWeights& weights,
                         StageRole role,
                         double temperature = kDefaultContrastiveTemperature);

}  // namespace rationale::losses
