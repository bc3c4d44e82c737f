#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include <Eigen/Dense>

#include "rationale/corpus.hpp"

namespace rationale::model {

// Long: every token belongs to one of the K rationales. Short: an extra
// null row lets tokens stay unselected.
enum class Mode { Long, Short };

std::string_view to_string(Mode mode);
Mode parse_mode(std::string_view text);

struct RnnDirection {
  Eigen::MatrixXd w_in;   // hidden x input
  Eigen::MatrixXd w_rec;  // hidden x hidden
  Eigen::VectorXd bias;   // hidden
};

struct BiRnn {
  RnnDirection fwd;
  RnnDirection bwd;

  int hidden() const { return static_cast<int>(fwd.w_rec.rows()); }
  int input() const { return static_cast<int>(fwd.w_in.cols()); }
};

struct GeneratorParams {
  BiRnn rnn;
  Eigen::MatrixXd head_w;  // heads x 2*hidden
  Eigen::VectorXd head_b;  // heads
  Mode mode = Mode::Long;

  int heads() const { return static_cast<int>(head_w.rows()); }
};

struct PredictorParams {
  BiRnn encoder;
  Eigen::MatrixXd head_w;  // K x 2*hidden, one binary classifier per aspect
  Eigen::VectorXd head_b;  // K
  Eigen::VectorXd agg_w;   // K, linear aggregation of aspect logits
  Eigen::VectorXd agg_b;   // 1

  int aspects() const { return static_cast<int>(head_w.rows()); }
};

struct Model {
  Eigen::MatrixXd embedding;  // vocab x dim, shared by generator and predictor
  GeneratorParams generator;
  PredictorParams predictor;
  double mask_temperature = 1.0;

  int aspects() const { return predictor.aspects(); }
  int hidden() const { return predictor.encoder.hidden(); }
  int embed_dim() const { return static_cast<int>(embedding.cols()); }
  Mode mode() const { return generator.mode; }
};

// Parameter groups, used for freezing and optimizer bookkeeping.
enum class ParamGroup { Embedding, Generator, Encoder, Heads };

std::string_view to_string(ParamGroup group);

template <class Dir, class F>
void for_each_direction_tensor(Dir& d, const std::string& prefix, ParamGroup g, F& f) {
  f(g, prefix + ".w_in", d.w_in);
  f(g, prefix + ".w_rec", d.w_rec);
  f(g, prefix + ".bias", d.bias);
}

// Visits every parameter tensor as f(group, name, tensor) in a fixed order.
// Works for Model and for const Model.
template <class M, class F>
void for_each_tensor(M& m, F&& f) {
  f(ParamGroup::Embedding, std::string("embedding"), m.embedding);
  for_each_direction_tensor(m.generator.rnn.fwd, "generator.rnn.fwd", ParamGroup::Generator, f);
  for_each_direction_tensor(m.generator.rnn.bwd, "generator.rnn.bwd", ParamGroup::Generator, f);
  f(ParamGroup::Generator, std::string("generator.head_w"), m.generator.head_w);
  f(ParamGroup::Generator, std::string("generator.head_b"), m.generator.head_b);
  for_each_direction_tensor(m.predictor.encoder.fwd, "predictor.encoder.fwd", ParamGroup::Encoder, f);
  for_each_direction_tensor(m.predictor.encoder.bwd, "predictor.encoder.bwd", ParamGroup::Encoder, f);
  f(ParamGroup::Heads, std::string("predictor.head_w"), m.predictor.head_w);
  f(ParamGroup::Heads, std::string("predictor.head_b"), m.predictor.head_b);
  f(ParamGroup::Heads, std::string("predictor.agg_w"), m.predictor.agg_w);
  f(ParamGroup::Heads, std::string("predictor.agg_b"), m.predictor.agg_b);
}

// Recurrent and head weights ~ uniform(-0.1, 0.1), biases zero.
BiRnn make_birnn(int input, int hidden, std::uint64_t seed);
GeneratorParams make_generator(int input, int hidden, int aspects, Mode mode, std::uint64_t seed);
PredictorParams make_predictor(int input, int hidden, int aspects, std::uint64_t seed);
Model make_model(Eigen::MatrixXd embedding, int aspects, int hidden, Mode mode, std::uint64_t seed,
                 double mask_temperature = 1.0);

// Fresh generator weights from the construction distribution. The mode (and
// so the head count) is kept unless overridden.
GeneratorParams reinitialize_generator(const GeneratorParams& gen, std::uint64_t seed,
                                       std::optional<Mode> mode = std::nullopt);

// Turns a Short generator into a Long one by dropping its null head.
GeneratorParams drop_null_head(const GeneratorParams& gen);

struct RationaleMasks {
  Eigen::MatrixXd weights;  // rows x L; the null row, when present, is last
  bool has_null_row = false;

  int aspects() const { return static_cast<int>(weights.rows()) - (has_null_row ? 1 : 0); }
  int length() const { return static_cast<int>(weights.cols()); }
  Mode mode() const { return has_null_row ? Mode::Short : Mode::Long; }
};

struct ModelOutput {
  RationaleMasks masks;
  Eigen::MatrixXd representations;  // 2h x K, pooled encoder output per rationale
  Eigen::MatrixXd embeddings;       // 2h x K, unit columns
  Eigen::VectorXd aspect_logits;    // K
  double overall_logit = 0.0;
};

RationaleMasks generate_masks(const Model& model, const corpus::Document& doc);

// Pooled encoder output for the document with embeddings scaled by mask_row.
Eigen::VectorXd encode_aspect(const Model& model, const corpus::Document& doc,
                              const Eigen::VectorXd& mask_row);

ModelOutput forward(const Model& model, const corpus::Document& doc);

// Runs the predictor on externally supplied masks (generator bypassed).
ModelOutput forward_with_masks(const Model& model, const corpus::Document& doc,
                               const RationaleMasks& masks);

// Normalization used for the contrastive representations; exact unit norm
// except for vanishing inputs.
Eigen::VectorXd normalize(const Eigen::VectorXd& r);

}  // namespace rationale::model
