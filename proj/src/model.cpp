#include "rationale/model.hpp"

#include <cmath>
#include <random>

#include "rationale/backprop.hpp"
#include "rationale/errors.hpp"
#include "rationale/rnn.hpp"

namespace rationale::model {

namespace {

constexpr double kInitRange = 0.1;
constexpr double kNormEpsilonSq = 1e-16;

Eigen::MatrixXd uniform_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-kInitRange, kInitRange);
  Eigen::MatrixXd m(rows, cols);
  // Column-major fill order is part of the seeded contract.
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = dist(rng);
  return m;
}

RnnDirection make_direction(int input, int hidden, std::mt19937_64& rng) {
  RnnDirection d;
  d.w_in = uniform_matrix(hidden, input, rng);
  d.w_rec = uniform_matrix(hidden, hidden, rng);
  d.bias = Eigen::VectorXd::Zero(hidden);
  return d;
}

RnnDirection zeros_like(const RnnDirection& p) {
  return {Eigen::MatrixXd::Zero(p.w_in.rows(), p.w_in.cols()),
          Eigen::MatrixXd::Zero(p.w_rec.rows(), p.w_rec.cols()), Eigen::VectorXd::Zero(p.bias.size())};
}

void add_into(RnnDirection& acc, const RnnDirection& g) {
  acc.w_in += g.w_in;
  acc.w_rec += g.w_rec;
  acc.bias += g.bias;
}

void zero(RnnDirection& d) {
  d.w_in.setZero();
  d.w_rec.setZero();
  d.bias.setZero();
}

GeneratorParams zeros_like(const GeneratorParams& g) {
  GeneratorParams z;
  z.rnn = {zeros_like(g.rnn.fwd), zeros_like(g.rnn.bwd)};
  z.head_w = Eigen::MatrixXd::Zero(g.head_w.rows(), g.head_w.cols());
  z.head_b = Eigen::VectorXd::Zero(g.head_b.size());
  z.mode = g.mode;
  return z;
}

PredictorParams zeros_like(const PredictorParams& p) {
  PredictorParams z;
  z.encoder = {zeros_like(p.encoder.fwd), zeros_like(p.encoder.bwd)};
  z.head_w = Eigen::MatrixXd::Zero(p.head_w.rows(), p.head_w.cols());
  z.head_b = Eigen::VectorXd::Zero(p.head_b.size());
  z.agg_w = Eigen::VectorXd::Zero(p.agg_w.size());
  z.agg_b = Eigen::VectorXd::Zero(1);
  return z;
}

// Exponential normalization of each column of scores / temperature.
Eigen::MatrixXd column_softmax(const Eigen::MatrixXd& scores, double temperature) {
  Eigen::MatrixXd out(scores.rows(), scores.cols());
  for (Eigen::Index t = 0; t < scores.cols(); ++t) {
    Eigen::VectorXd s = scores.col(t) / temperature;
    const double m = s.maxCoeff();
    Eigen::VectorXd e = (s.array() - m).exp().matrix();
    out.col(t) = e / e.sum();
  }
  return out;
}

Eigen::VectorXd normalize_backward(const Eigen::VectorXd& r, const Eigen::VectorXd& dz) {
  const double n2 = r.squaredNorm() + kNormEpsilonSq;
  const double n = std::sqrt(n2);
  return dz / n - r * (r.dot(dz) / (n2 * n));
}

}  // namespace

std::string_view to_string(Mode mode) { return mode == Mode::Long ? "long" : "short"; }

Mode parse_mode(std::string_view text) {
  if (text == "long" || text == "Long") return Mode::Long;
  if (text == "short" || text == "Short") return Mode::Short;
  throw InvalidInput("unknown mode '" + std::string(text) + "'");
}

std::string_view to_string(ParamGroup group) {
  switch (group) {
    case ParamGroup::Embedding: return "embedding";
    case ParamGroup::Generator: return "generator";
    case ParamGroup::Encoder: return "encoder";
    case ParamGroup::Heads: return "heads";
  }
  return "?";
}

BiRnn make_birnn(int input, int hidden, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  BiRnn b;
  b.fwd = make_direction(input, hidden, rng);
  b.bwd = make_direction(input, hidden, rng);
  return b;
}

GeneratorParams make_generator(int input, int hidden, int aspects, Mode mode, std::uint64_t seed) {
  if (input < 1 || hidden < 1 || aspects < 1) throw InvalidInput("generator dimensions must be positive");
  std::mt19937_64 rng(seed);
  GeneratorParams g;
  g.rnn.fwd = make_direction(input, hidden, rng);
  g.rnn.bwd = make_direction(input, hidden, rng);
  const int heads = aspects + (mode == Mode::Short ? 1 : 0);
  g.head_w = uniform_matrix(heads, 2 * hidden, rng);
  g.head_b = Eigen::VectorXd::Zero(heads);
  g.mode = mode;
  return g;
}

PredictorParams make_predictor(int input, int hidden, int aspects, std::uint64_t seed) {
  if (input < 1 || hidden < 1 || aspects < 1) throw InvalidInput("predictor dimensions must be positive");
  std::mt19937_64 rng(seed);
  PredictorParams p;
  p.encoder.fwd = make_direction(input, hidden, rng);
  p.encoder.bwd = make_direction(input, hidden, rng);
  p.head_w = uniform_matrix(aspects, 2 * hidden, rng);
  p.head_b = Eigen::VectorXd::Zero(aspects);
  p.agg_w = uniform_matrix(aspects, 1, rng).col(0);
  p.agg_b = Eigen::VectorXd::Zero(1);
  return p;
}

Model make_model(Eigen::MatrixXd embedding, int aspects, int hidden, Mode mode, std::uint64_t seed,
                 double mask_temperature) {
  if (!(mask_temperature > 0.0)) throw InvalidInput("mask temperature must be positive");
  if (!embedding.allFinite()) throw InvalidInput("embedding table has non-finite values");
  Model m;
  const int d = static_cast<int>(embedding.cols());
  m.embedding = std::move(embedding);
  std::seed_seq seq{seed, std::uint64_t{0x67656e}};
  std::mt19937_64 split(seq);
  const std::uint64_t gen_seed = split();
  const std::uint64_t pred_seed = split();
  m.generator = make_generator(d, hidden, aspects, mode, gen_seed);
  m.predictor = make_predictor(d, hidden, aspects, pred_seed);
  m.mask_temperature = mask_temperature;
  return m;
}

GeneratorParams reinitialize_generator(const GeneratorParams& gen, std::uint64_t seed,
                                       std::optional<Mode> mode) {
  const Mode m = mode.value_or(gen.mode);
  const int aspects = gen.heads() - (gen.mode == Mode::Short ? 1 : 0);
  return make_generator(gen.rnn.input(), gen.rnn.hidden(), aspects, m, seed);
}

GeneratorParams drop_null_head(const GeneratorParams& gen) {
  if (gen.mode == Mode::Long) return gen;
  GeneratorParams g = gen;
  const Eigen::Index k = gen.heads() - 1;
  g.head_w = gen.head_w.topRows(k);
  g.head_b = gen.head_b.head(k);
  g.mode = Mode::Long;
  return g;
}

Eigen::VectorXd normalize(const Eigen::VectorXd& r) {
  return r / std::sqrt(r.squaredNorm() + kNormEpsilonSq);
}

RationaleMasks generate_masks(const Model& model, const corpus::Document& doc) {
  DocTrace trace;
  forward_trace(model, doc, trace);
  return trace.output.masks;
}

Eigen::VectorXd encode_aspect(const Model& model, const corpus::Document& doc,
                              const Eigen::VectorXd& mask_row) {
  const Eigen::Index L = static_cast<Eigen::Index>(doc.length());
  if (mask_row.size() != L) throw InvalidInput("mask row length differs from document length");
  Eigen::MatrixXd inputs(model.embed_dim(), L);
  for (Eigen::Index t = 0; t < L; ++t) inputs.col(t) = model.embedding.row(doc.tokens[t]).transpose();
  const auto& enc = model.predictor.encoder;
  const Eigen::MatrixXd gates = mask_row.transpose();
  Eigen::MatrixXd sf, sb;
  rnn::forward(enc.fwd, enc.fwd.w_in * inputs, gates, false, sf);
  rnn::forward(enc.bwd, enc.bwd.w_in * inputs, gates, true, sb);
  Eigen::VectorXd r(2 * enc.hidden());
  r.head(enc.hidden()) = sf.rowwise().sum() / double(L);
  r.tail(enc.hidden()) = sb.rowwise().sum() / double(L);
  return r;
}

ModelOutput forward(const Model& model, const corpus::Document& doc) {
  DocTrace trace;
  forward_trace(model, doc, trace);
  return std::move(trace.output);
}

ModelOutput forward_with_masks(const Model& model, const corpus::Document& doc,
                               const RationaleMasks& masks) {
  DocTrace trace;
  forward_trace(model, doc, trace, &masks);
  return std::move(trace.output);
}

// ---------------------------------------------------------------------------

Gradients Gradients::zeros_like(const Model& model) {
  Gradients g;
  g.embedding = Eigen::MatrixXd::Zero(model.embedding.rows(), model.embedding.cols());
  g.generator = model::zeros_like(model.generator);
  g.predictor = model::zeros_like(model.predictor);
  return g;
}

void Gradients::set_zero() {
  embedding.setZero();
  zero(generator.rnn.fwd);
  zero(generator.rnn.bwd);
  generator.head_w.setZero();
  generator.head_b.setZero();
  zero(predictor.encoder.fwd);
  zero(predictor.encoder.bwd);
  predictor.head_w.setZero();
  predictor.head_b.setZero();
  predictor.agg_w.setZero();
  predictor.agg_b.setZero();
}

void Gradients::add(const DocGradients& g, const corpus::Document& doc, const GradientScope& scope) {
  if (scope.embedding)
    for (std::size_t t = 0; t < doc.length(); ++t)
      embedding.row(doc.tokens[t]) += g.inputs.col(static_cast<Eigen::Index>(t)).transpose();
  if (scope.generator) {
    add_into(generator.rnn.fwd, g.generator.rnn.fwd);
    add_into(generator.rnn.bwd, g.generator.rnn.bwd);
    generator.head_w += g.generator.head_w;
    generator.head_b += g.generator.head_b;
  }
  if (scope.encoder) {
    add_into(predictor.encoder.fwd, g.predictor.encoder.fwd);
    add_into(predictor.encoder.bwd, g.predictor.encoder.bwd);
  }
  if (scope.heads) {
    predictor.head_w += g.predictor.head_w;
    predictor.head_b += g.predictor.head_b;
    predictor.agg_w += g.predictor.agg_w;
    predictor.agg_b += g.predictor.agg_b;
  }
}

DocGradients zeros_like_doc(const Model& model) {
  DocGradients g;
  g.generator = model::zeros_like(model.generator);
  g.predictor = model::zeros_like(model.predictor);
  return g;
}

void forward_trace(const Model& model, const corpus::Document& doc, DocTrace& tr,
                   const RationaleMasks* external_masks) {
  const Eigen::Index L = static_cast<Eigen::Index>(doc.length());
  if (L == 0) throw InvalidInput("document has no tokens");
  const int K = model.aspects();
  const int h = model.hidden();

  tr.inputs.resize(model.embed_dim(), L);
  for (Eigen::Index t = 0; t < L; ++t) tr.inputs.col(t) = model.embedding.row(doc.tokens[t]).transpose();

  tr.masks_external = external_masks != nullptr;
  if (external_masks) {
    if (external_masks->length() != L || external_masks->aspects() != K)
      throw InvalidInput("external masks do not match document and model");
    tr.masks = *external_masks;
  } else {
    const auto& gen = model.generator;
    const Eigen::MatrixXd ones = Eigen::MatrixXd::Ones(1, L);
    tr.gen_proj_fwd.noalias() = gen.rnn.fwd.w_in * tr.inputs;
    tr.gen_proj_bwd.noalias() = gen.rnn.bwd.w_in * tr.inputs;
    rnn::forward(gen.rnn.fwd, tr.gen_proj_fwd, ones, false, tr.gen_states_fwd);
    rnn::forward(gen.rnn.bwd, tr.gen_proj_bwd, ones, true, tr.gen_states_bwd);
    tr.gen_hidden.resize(2 * h, L);
    tr.gen_hidden.topRows(h) = tr.gen_states_fwd;
    tr.gen_hidden.bottomRows(h) = tr.gen_states_bwd;
    Eigen::MatrixXd scores = gen.head_w * tr.gen_hidden;
    scores.colwise() += gen.head_b;
    tr.masks.weights = column_softmax(scores, model.mask_temperature);
    tr.masks.has_null_row = gen.mode == Mode::Short;
  }

  const auto& pred = model.predictor;
  tr.gates = tr.masks.weights.topRows(K);
  tr.enc_proj_fwd.noalias() = pred.encoder.fwd.w_in * tr.inputs;
  tr.enc_proj_bwd.noalias() = pred.encoder.bwd.w_in * tr.inputs;
  rnn::forward(pred.encoder.fwd, tr.enc_proj_fwd, tr.gates, false, tr.enc_states_fwd);
  rnn::forward(pred.encoder.bwd, tr.enc_proj_bwd, tr.gates, true, tr.enc_states_bwd);

  auto& out = tr.output;
  out.masks = tr.masks;
  out.representations = Eigen::MatrixXd::Zero(2 * h, K);
  for (Eigen::Index t = 0; t < L; ++t) {
    out.representations.topRows(h) += tr.enc_states_fwd.middleCols(t * K, K);
    out.representations.bottomRows(h) += tr.enc_states_bwd.middleCols(t * K, K);
  }
  out.representations /= double(L);
  out.aspect_logits.resize(K);
  out.embeddings.resize(2 * h, K);
  for (int k = 0; k < K; ++k) {
    out.aspect_logits(k) = pred.head_w.row(k).dot(out.representations.col(k)) + pred.head_b(k);
    out.embeddings.col(k) = normalize(out.representations.col(k));
  }
  out.overall_logit = pred.agg_w.dot(out.aspect_logits) + pred.agg_b(0);
}

void backward_trace(const Model& model, const corpus::Document& doc, const DocTrace& tr,
                    const Upstream& up, const GradientScope& scope, DocGradients& g) {
  const Eigen::Index L = static_cast<Eigen::Index>(doc.length());
  const int K = model.aspects();
  const int h = model.hidden();
  const auto& pred = model.predictor;
  const auto& out = tr.output;

  const bool need_mask_grad = !tr.masks_external && (scope.generator || scope.embedding);
  const bool need_encoder_pass = scope.encoder || scope.embedding || need_mask_grad;

  const double g_overall = up.overall_logit;
  if (scope.heads) {
    g.predictor.agg_w = g_overall * out.aspect_logits;
    g.predictor.agg_b(0) = g_overall;
  }
  const Eigen::VectorXd g_logits = g_overall * pred.agg_w;
  if (scope.heads) {
    for (int k = 0; k < K; ++k) g.predictor.head_w.row(k) = g_logits(k) * out.representations.col(k).transpose();
    g.predictor.head_b = g_logits;
  }
  if (!need_encoder_pass) return;

  Eigen::MatrixXd d_reps(2 * h, K);
  for (int k = 0; k < K; ++k) {
    d_reps.col(k) = g_logits(k) * pred.head_w.row(k).transpose();
    if (up.embeddings.size() != 0)
      d_reps.col(k) += normalize_backward(out.representations.col(k), up.embeddings.col(k));
  }
  Eigen::MatrixXd d_states_fwd(h, L * K), d_states_bwd(h, L * K);
  const Eigen::MatrixXd pooled_fwd = d_reps.topRows(h) / double(L);
  const Eigen::MatrixXd pooled_bwd = d_reps.bottomRows(h) / double(L);
  for (Eigen::Index t = 0; t < L; ++t) {
    d_states_fwd.middleCols(t * K, K) = pooled_fwd;
    d_states_bwd.middleCols(t * K, K) = pooled_bwd;
  }

  if (scope.encoder) {
    zero(g.predictor.encoder.fwd);
    zero(g.predictor.encoder.bwd);
  }
  rnn::Backward enc_f, enc_b;
  rnn::backward(pred.encoder.fwd, tr.enc_proj_fwd, tr.gates, tr.enc_states_fwd, d_states_fwd, false,
                scope.encoder ? &g.predictor.encoder.fwd : nullptr, need_mask_grad, enc_f);
  rnn::backward(pred.encoder.bwd, tr.enc_proj_bwd, tr.gates, tr.enc_states_bwd, d_states_bwd, true,
                scope.encoder ? &g.predictor.encoder.bwd : nullptr, need_mask_grad, enc_b);
  if (scope.encoder) {
    g.predictor.encoder.fwd.w_in.noalias() = enc_f.d_projected * tr.inputs.transpose();
    g.predictor.encoder.bwd.w_in.noalias() = enc_b.d_projected * tr.inputs.transpose();
  }
  if (scope.embedding) {
    g.inputs.noalias() = pred.encoder.fwd.w_in.transpose() * enc_f.d_projected;
    g.inputs.noalias() += pred.encoder.bwd.w_in.transpose() * enc_b.d_projected;
  }
  if (!need_mask_grad) return;

  const auto& gen = model.generator;
  const auto& M = tr.masks.weights;
  Eigen::MatrixXd d_masks = Eigen::MatrixXd::Zero(M.rows(), L);
  d_masks.topRows(K) = enc_f.d_gates + enc_b.d_gates;
  if (up.masks.size() != 0) d_masks += up.masks;

  Eigen::MatrixXd d_scores(M.rows(), L);
  for (Eigen::Index t = 0; t < L; ++t) {
    const double inner = M.col(t).dot(d_masks.col(t));
    d_scores.col(t) = (M.col(t).array() * (d_masks.col(t).array() - inner)).matrix() / model.mask_temperature;
  }
  if (scope.generator) {
    g.generator.head_w.noalias() = d_scores * tr.gen_hidden.transpose();
    g.generator.head_b = d_scores.rowwise().sum();
    zero(g.generator.rnn.fwd);
    zero(g.generator.rnn.bwd);
  }
  const Eigen::MatrixXd d_hidden = gen.head_w.transpose() * d_scores;
  const Eigen::MatrixXd ones = Eigen::MatrixXd::Ones(1, L);
  rnn::Backward gen_f, gen_b;
  rnn::backward(gen.rnn.fwd, tr.gen_proj_fwd, ones, tr.gen_states_fwd, d_hidden.topRows(h), false,
                scope.generator ? &g.generator.rnn.fwd : nullptr, false, gen_f);
  rnn::backward(gen.rnn.bwd, tr.gen_proj_bwd, ones, tr.gen_states_bwd, d_hidden.bottomRows(h), true,
                scope.generator ? &g.generator.rnn.bwd : nullptr, false, gen_b);
  if (scope.generator) {
    g.generator.rnn.fwd.w_in.noalias() = gen_f.d_projected * tr.inputs.transpose();
    g.generator.rnn.bwd.w_in.noalias() = gen_b.d_projected * tr.inputs.transpose();
  }
  if (scope.embedding) {
    g.inputs.noalias() += gen.rnn.fwd.w_in.transpose() * gen_f.d_projected;
    g.inputs.noalias() += gen.rnn.bwd.w_in.transpose() * gen_b.d_projected;
  }
}

}  // namespace rationale::model
