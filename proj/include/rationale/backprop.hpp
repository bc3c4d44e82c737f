#pragma once

#include <Eigen/Dense>

#include "rationale/corpus.hpp"
#include "rationale/model.hpp"

// Forward caches and reverse-mode gradients for one document.
namespace rationale::model {

// Which parameter groups need gradients. Back-propagation into the
// generator is skipped when neither the generator nor the embedding needs it.
struct GradientScope {
  bool embedding = true;
  bool generator = true;
  bool encoder = true;
  bool heads = true;
};

struct DocTrace {
  Eigen::MatrixXd inputs;  // d x L
  // Generator
  Eigen::MatrixXd gen_proj_fwd, gen_proj_bwd;      // h x L
  Eigen::MatrixXd gen_states_fwd, gen_states_bwd;  // h x L
  Eigen::MatrixXd gen_hidden;                      // 2h x L
  bool masks_external = false;
  RationaleMasks masks;
  // Predictor
  Eigen::MatrixXd gates;                           // K x L, aspect rows of the masks
  Eigen::MatrixXd enc_proj_fwd, enc_proj_bwd;      // h x L
  Eigen::MatrixXd enc_states_fwd, enc_states_bwd;  // h x L*K
  ModelOutput output;
};

// Gradients of some scalar objective with respect to the forward outputs.
struct Upstream {
  double overall_logit = 0.0;
  Eigen::MatrixXd embeddings;  // 2h x K, may be empty
  Eigen::MatrixXd masks;       // rows x L, may be empty
};

// Same shapes as the model. Embedding gradients are kept per position
// (d x L) and scattered into rows by the caller.
struct DocGradients {
  GeneratorParams generator;
  PredictorParams predictor;
  Eigen::MatrixXd inputs;
};

// Dense gradient accumulator with the model's shapes.
struct Gradients {
  Eigen::MatrixXd embedding;
  GeneratorParams generator;
  PredictorParams predictor;

  static Gradients zeros_like(const Model& model);
  void set_zero();
  // Adds the groups of one document's gradients that lie inside `scope`,
  // scattering input gradients into embedding rows by token id.
  void add(const DocGradients& doc_grads, const corpus::Document& doc, const GradientScope& scope);
};

DocGradients zeros_like_doc(const Model& model);

void forward_trace(const Model& model, const corpus::Document& doc, DocTrace& trace,
                   const RationaleMasks* external_masks = nullptr);

// Writes the groups inside `scope`; the others are left untouched.
void backward_trace(const Model& model, const corpus::Document& doc, const DocTrace& trace,
                    const Upstream& upstream, const GradientScope& scope, DocGradients& grads);

}  // namespace rationale::model
