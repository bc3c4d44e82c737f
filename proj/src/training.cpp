#include "rationale/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "rationale/errors.hpp"

namespace rationale::training {

using kernels::BatchItem;
using losses::LossBreakdown;
using losses::StageRole;
using model::GradientScope;
using model::Mode;
using model::ParamGroup;

namespace {

// Offsets mixed into the run seed so re-initialization and shuffling draw
// from streams independent of model construction.
constexpr std::uint64_t kReinitStream = 0x7265696e6974ULL;
constexpr std::uint64_t kShuffleStream = 0x73687566ULL;

bool in_scope(ParamGroup g, const GradientScope& s) {
  switch (g) {
    case ParamGroup::Embedding: return s.embedding;
    case ParamGroup::Generator: return s.generator;
    case ParamGroup::Encoder: return s.encoder;
    case ParamGroup::Heads: return s.heads;
  }
  return false;
}

bool all_finite(const model::Gradients& g, const GradientScope& scope) {
  bool ok = true;
  model::for_each_tensor(g, [&](ParamGroup group, const std::string&, const auto& t) {
    if (ok && in_scope(group, scope) && !t.allFinite()) ok = false;
  });
  return ok;
}

std::string method_tag(Method m) { return std::string(to_string(m)); }

Checkpoint make_checkpoint(const model::Model& m, const StageResult& r, int stage, Method method,
                           std::string tag) {
  Checkpoint c;
  c.model = m;
  c.valid_loss = r.best_valid;
  c.epoch = r.best_epoch;
  c.stage = stage;
  c.stage_tag = std::move(tag);
  c.method = method_tag(method);
  c.label_trained = method != Method::Contra;
  return c;
}

void append(std::vector<EpochMetrics>& dst, const std::vector<EpochMetrics>& src) {
  dst.insert(dst.end(), src.begin(), src.end());
}

RunResult three_stage_from(model::Model m, const TrainConfig& cfg, const TrainData& data, Observer* obs) {
  RunResult out;
  StageState s1{1, false, false, StageRole::Joint, Mode::Long, cfg.train_embeddings};
  auto r1 = run_stage(m, cfg, s1, cfg.epochs[0], data, obs);
  append(out.history, r1.history);

  m.generator = model::reinitialize_generator(m.generator, cfg.seed ^ kReinitStream, cfg.mode);
  StageState s2{2, false, true, StageRole::ContraOnly, cfg.mode, false};
  auto r2 = run_stage(m, cfg, s2, cfg.epochs[1], data, obs);
  append(out.history, r2.history);

  StageState s3{3, true, false, StageRole::PredictorOnly, cfg.mode, false};
  auto r3 = run_stage(m, cfg, s3, cfg.epochs[2], data, obs);
  append(out.history, r3.history);

  out.best = make_checkpoint(m, r3, 3, Method::ThreeStage, "3stage/stage3");
  return out;
}

}  // namespace

std::string_view to_string(Method method) {
  switch (method) {
    case Method::Vanilla: return "vanilla";
    case Method::Contra: return "contra";
    case Method::ThreeStage: return "3stage";
  }
  return "?";
}

Method parse_method(std::string_view text) {
  if (text == "vanilla" || text == "Vanilla") return Method::Vanilla;
  if (text == "contra" || text == "Contra") return Method::Contra;
  if (text == "3stage" || text == "3Stage" || text == "three_stage") return Method::ThreeStage;
  throw ConfigError("unknown method '" + std::string(text) + "'");
}

void validate(const TrainConfig& c) {
  if (!(c.learning_rate >= 0.0) || !std::isfinite(c.learning_rate))
    throw ConfigError("learning_rate must be finite and nonnegative");
  if (c.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (c.aspects < 1) throw ConfigError("aspects must be >= 1");
  if (c.hidden < 1) throw ConfigError("hidden must be >= 1");
  if (!(c.mask_temperature > 0.0)) throw ConfigError("mask_temperature must be positive");
  if (!(c.contrastive_temperature > 0.0)) throw ConfigError("contrastive_temperature must be positive");
  if (!(c.beta1 >= 0.0 && c.beta1 < 1.0 && c.beta2 >= 0.0 && c.beta2 < 1.0 && c.adam_epsilon > 0.0))
    throw ConfigError("Adam hyperparameters out of range");
  losses::validate(c.weights);
  const int active = c.method == Method::ThreeStage ? 3 : 1;
  for (int s = 0; s < active; ++s)
    if (c.epochs[static_cast<std::size_t>(s)] < 1) throw ConfigError("every active stage needs >= 1 epoch");
  if ((c.method == Method::Contra || c.method == Method::ThreeStage) && c.weights.contra == 0.0)
    throw ConfigError("method " + method_tag(c.method) + " needs a positive contrastive weight");
  if (c.method != Method::Contra && c.weights.ce == 0.0)
    throw ConfigError("method " + method_tag(c.method) + " needs a positive cross-entropy weight");
}

GradientScope StageState::trainable() const {
  GradientScope s;
  s.embedding = embedding_trainable;
  s.generator = !generator_frozen;
  s.encoder = !predictor_frozen;
  s.heads = !predictor_frozen && role != StageRole::ContraOnly;
  return s;
}

Adam::Adam(const model::Model& model, double lr, double beta1, double beta2, double epsilon)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(epsilon) {
  model::for_each_tensor(model, [&](ParamGroup, const std::string&, const auto& t) {
    moments_.push_back({Eigen::MatrixXd::Zero(t.rows(), t.cols()), Eigen::MatrixXd::Zero(t.rows(), t.cols()), 0});
  });
}

void Adam::reset() {
  for (auto& m : moments_) {
    m.m.setZero();
    m.v.setZero();
    m.t = 0;
  }
}

void Adam::step(model::Model& model, const model::Gradients& grads, const GradientScope& trainable) {
  std::vector<const double*> gdata;
  model::for_each_tensor(grads, [&](ParamGroup, const std::string&, const auto& t) { gdata.push_back(t.data()); });
  std::size_t i = 0;
  model::for_each_tensor(model, [&](ParamGroup group, const std::string&, auto& t) {
    const std::size_t idx = i++;
    if (!in_scope(group, trainable)) return;
    auto& mom = moments_.at(idx);
    const Eigen::Index n = t.size();
    Eigen::Map<const Eigen::ArrayXd> g(gdata[idx], n);
    Eigen::Map<Eigen::ArrayXd> m(mom.m.data(), n), v(mom.v.data(), n), x(t.data(), n);
    ++mom.t;
    m = beta1_ * m + (1.0 - beta1_) * g;
    v = beta2_ * v + (1.0 - beta2_) * g.square();
    const double c1 = 1.0 - std::pow(beta1_, double(mom.t));
    const double c2 = 1.0 - std::pow(beta2_, double(mom.t));
    x -= lr_ * (m / c1) / ((v / c2).sqrt() + eps_);
  });
}

TrainData make_train_data(std::span<const corpus::Document> train, std::span<const corpus::Document> valid) {
  return {kernels::items_of(train), kernels::items_of(valid)};
}

kernels::Objective objective_for(const TrainConfig& config, const StageState& state) {
  kernels::Objective obj;
  obj.weights = config.weights;
  if (config.method == Method::Vanilla) obj.weights.contra = 0.0;
  obj.role = state.role;
  obj.temperature = config.contrastive_temperature;
  return obj;
}

LossBreakdown train_epoch(model::Model& model, Adam& adam, std::span<const BatchItem> data,
                          const TrainConfig& config, const StageState& state, int epoch, kernels::Workspace& ws,
                          Observer* observer) {
  if (data.empty()) throw InvalidInput("train_epoch: no training data");
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::seed_seq seq{config.seed, kShuffleStream, static_cast<std::uint64_t>(state.stage),
                    static_cast<std::uint64_t>(epoch)};
  std::mt19937_64 rng(seq);
  std::shuffle(order.begin(), order.end(), rng);

  const auto obj = objective_for(config, state);
  const auto scope = state.trainable();
  auto grads = model::Gradients::zeros_like(model);
  std::vector<BatchItem> batch;
  LossBreakdown total;
  const std::size_t bs = static_cast<std::size_t>(config.batch_size);
  std::size_t batch_index = 0;
  for (std::size_t start = 0; start < order.size(); start += bs, ++batch_index) {
    batch.clear();
    for (std::size_t j = start; j < std::min(order.size(), start + bs); ++j) batch.push_back(data[order[j]]);
    LossBreakdown loss;
    try {
      loss = kernels::batch_gradients(model, batch, obj, scope, config.execution, ws, grads);
    } catch (const NumericError& e) {
      throw NumericError("stage " + std::to_string(state.stage) + " epoch " + std::to_string(epoch) + " batch " +
                         std::to_string(batch_index) + ": " + e.what());
    }
    if (!all_finite(grads, scope))
      throw NumericError("stage " + std::to_string(state.stage) + " epoch " + std::to_string(epoch) + " batch " +
                         std::to_string(batch_index) + ": non-finite gradient");
    adam.step(model, grads, scope);
    if (observer) observer->on_step({state.stage, epoch, batch_index, loss});
    total += loss.scaled(double(batch.size()));
  }
  return total.scaled(1.0 / double(data.size()));
}

LossBreakdown evaluate_loss(const model::Model& model, std::span<const BatchItem> data, const TrainConfig& config,
                            const StageState& state, kernels::Workspace& ws) {
  const auto obj = objective_for(config, state);
  LossBreakdown total;
  if (data.empty()) return total;
  const std::size_t bs = static_cast<std::size_t>(config.batch_size);
  for (std::size_t start = 0; start < data.size(); start += bs) {
    const auto batch = data.subspan(start, std::min(bs, data.size() - start));
    total += kernels::batch_loss(model, batch, obj, config.execution, ws).scaled(double(batch.size()));
  }
  return total.scaled(1.0 / double(data.size()));
}

StageResult run_stage(model::Model& model, const TrainConfig& config, const StageState& state, int epochs,
                      const TrainData& data, Observer* observer) {
  if (model.mode() != state.mode) throw InvalidInput("model mode does not match the stage mode");
  if (data.valid.empty()) throw InvalidInput("run_stage: validation data is required for checkpoint selection");
  Adam adam(model, config.learning_rate, config.beta1, config.beta2, config.adam_epsilon);
  kernels::Workspace ws;
  StageResult res;
  model::Model best = model;
  res.best_valid = std::numeric_limits<double>::infinity();
  for (int epoch = 1; epoch <= epochs; ++epoch) {
    EpochMetrics em;
    em.stage = state.stage;
    em.epoch = epoch;
    em.train = train_epoch(model, adam, data.train, config, state, epoch, ws, observer);
    em.valid = evaluate_loss(model, data.valid, config, state, ws);
    if (!std::isfinite(em.valid.total))
      throw NumericError("stage " + std::to_string(state.stage) + " epoch " + std::to_string(epoch) +
                         ": non-finite validation loss");
    if (em.valid.total < res.best_valid) {
      res.best_valid = em.valid.total;
      res.best_epoch = epoch;
      best = model;
    }
    res.history.push_back(em);
    if (observer) observer->on_epoch(em, model);
  }
  model = std::move(best);
  return res;
}

model::Model initial_model(const TrainConfig& config, const Eigen::MatrixXd& embedding, Mode mode) {
  return model::make_model(embedding, config.aspects, config.hidden, mode, config.seed, config.mask_temperature);
}

RunResult continue_vanilla(model::Model m, const TrainConfig& config, const TrainData& data, Observer* obs) {
  StageState s{1, false, false, StageRole::Joint, config.mode, config.train_embeddings};
  auto r = run_stage(m, config, s, config.epochs[0], data, obs);
  RunResult out;
  out.history = r.history;
  out.best = make_checkpoint(m, r, 1, Method::Vanilla, "vanilla");
  return out;
}

RunResult run_vanilla(const TrainConfig& config, const Eigen::MatrixXd& embedding, const TrainData& data,
                      Observer* observer) {
  TrainConfig c = config;
  c.method = Method::Vanilla;
  validate(c);
  return continue_vanilla(initial_model(c, embedding, c.mode), c, data, observer);
}

RunResult run_contra(const TrainConfig& config, const Eigen::MatrixXd& embedding, const TrainData& data,
                     Observer* observer) {
  TrainConfig c = config;
  c.method = Method::Contra;
  validate(c);
  model::Model m = initial_model(c, embedding, c.mode);
  StageState s{1, false, false, StageRole::ContraOnly, c.mode, c.train_embeddings};
  auto r = run_stage(m, c, s, c.epochs[0], data, observer);
  RunResult out;
  out.history = r.history;
  out.best = make_checkpoint(m, r, 1, Method::Contra, "contra");
  return out;
}

RunResult continue_3stage(model::Model start, const TrainConfig& config, const TrainData& data, Observer* obs) {
  TrainConfig c = config;
  c.method = Method::ThreeStage;
  validate(c);
  // Stage 1 always runs in Long mode.
  start.generator = model::drop_null_head(start.generator);
  return three_stage_from(std::move(start), c, data, obs);
}

RunResult run_3stage(const TrainConfig& config, const Eigen::MatrixXd& embedding, const TrainData& data,
                     Observer* observer) {
  TrainConfig c = config;
  c.method = Method::ThreeStage;
  validate(c);
  return three_stage_from(initial_model(c, embedding, Mode::Long), c, data, observer);
}

RunResult run(const TrainConfig& config, const Eigen::MatrixXd& embedding, const TrainData& data,
              Observer* observer) {
  switch (config.method) {
    case Method::Vanilla: return run_vanilla(config, embedding, data, observer);
    case Method::Contra: return run_contra(config, embedding, data, observer);
    case Method::ThreeStage: return run_3stage(config, embedding, data, observer);
  }
  throw ConfigError("unknown method");
}

}  // namespace rationale::training
