#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "rationale/backprop.hpp"
#include "rationale/checkpoint.hpp"
#include "rationale/kernels.hpp"
#include "rationale/losses.hpp"
#include "rationale/model.hpp"

namespace rationale::training {

enum class Method { Vanilla, Contra, ThreeStage };

std::string_view to_string(Method method);
Method parse_method(std::string_view text);

struct TrainConfig {
  Method method = Method::ThreeStage;
  model::Mode mode = model::Mode::Long;
  std::array<int, 3> epochs{20, 20, 20};  // single-stage methods use epochs[0]
  double learning_rate = 1e-4;
  int batch_size = 250;
  std::uint64_t seed = 1;
  losses::LossWeights weights;
  int aspects = 5;
  int hidden = 100;
  double mask_temperature = 1.0;
  double contrastive_temperature = losses::kDefaultContrastiveTemperature;
  // Shared embedding table trainable while nothing is frozen.
  bool train_embeddings = true;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  kernels::Execution execution = kernels::Execution::Parallel;

  bool operator==(const TrainConfig&) const = default;
};

// Throws ConfigError.
void validate(const TrainConfig& config);

struct StageState {
  int stage = 1;
  bool generator_frozen = false;
  bool predictor_frozen = false;
  losses::StageRole role = losses::StageRole::Joint;
  model::Mode mode = model::Mode::Long;
  bool embedding_trainable = true;

  // Trainable groups; the aspect classifiers and aggregation never train in
  // a contra_only stage.
  model::GradientScope trainable() const;
};

// Adam with per-tensor moments and step counts. Tensors outside the
// trainable scope, and their moments, are never touched.
class Adam {
 public:
  Adam(const model::Model& model, double lr, double beta1, double beta2, double epsilon);
  void step(model::Model& model, const model::Gradients& grads, const model::GradientScope& trainable);
  void reset();

 private:
  struct Moments {
    Eigen::MatrixXd m, v;
    long long t = 0;
  };
  std::vector<Moments> moments_;
  double lr_, beta1_, beta2_, eps_;
};

struct EpochMetrics {
  int stage = 1;
  int epoch = 0;
  losses::LossBreakdown train;
  losses::LossBreakdown valid;
};

struct StepRecord {
  int stage = 1;
  int epoch = 0;
  std::size_t batch = 0;
  losses::LossBreakdown loss;
};

class Observer {
 public:
  virtual ~Observer() = default;
  virtual void on_step(const StepRecord&) {}
  // `current` is the model as trained through this epoch.
  virtual void on_epoch(const EpochMetrics&, const model::Model& /*current*/) {}
};

struct TrainData {
  std::vector<kernels::BatchItem> train;
  std::vector<kernels::BatchItem> valid;
};

TrainData make_train_data(std::span<const corpus::Document> train, std::span<const corpus::Document> valid);

kernels::Objective objective_for(const TrainConfig& config, const StageState& state);

// One seeded-shuffled pass over `data`. Throws NumericError naming the batch
// index on a non-finite loss or gradient.
losses::LossBreakdown train_epoch(model::Model& model, Adam& adam, std::span<const kernels::BatchItem> data,
                                  const TrainConfig& config, const StageState& state, int epoch,
                                  kernels::Workspace& ws, Observer* observer = nullptr);

// Size-weighted mean of batch losses over `data` in order.
losses::LossBreakdown evaluate_loss(const model::Model& model, std::span<const kernels::BatchItem> data,
                                    const TrainConfig& config, const StageState& state, kernels::Workspace& ws);

struct StageResult {
  double best_valid = 0.0;
  int best_epoch = 0;
  std::vector<EpochMetrics> history;
};

// Trains `epochs` epochs with fresh optimizer moments and leaves `model` at
// the epoch with minimum validation loss.
StageResult run_stage(model::Model& model, const TrainConfig& config, const StageState& state, int epochs,
                      const TrainData& data, Observer* observer = nullptr);

struct RunResult {
  Checkpoint best;
  std::vector<EpochMetrics> history;
};

model::Model initial_model(const TrainConfig& config, const Eigen::MatrixXd& embedding, model::Mode mode);

RunResult run_vanilla(const TrainConfig& config, const Eigen::MatrixXd& embedding, const TrainData& data,
                      Observer* observer = nullptr);
RunResult run_contra(const TrainConfig& config, const Eigen::MatrixXd& embedding, const TrainData& data,
                     Observer* observer = nullptr);
RunResult run_3stage(const TrainConfig& config, const Eigen::MatrixXd& embedding, const TrainData& data,
                     Observer* observer = nullptr);
RunResult run(const TrainConfig& config, const Eigen::MatrixXd& embedding, const TrainData& data,
              Observer* observer = nullptr);

// The same schedules started from an existing model instead of a fresh one.
RunResult continue_vanilla(model::Model start, const TrainConfig& config, const TrainData& data,
                           Observer* observer = nullptr);
RunResult continue_3stage(model::Model start, const TrainConfig& config, const TrainData& data,
                          Observer* observer = nullptr);

}  // namespace rationale::training
