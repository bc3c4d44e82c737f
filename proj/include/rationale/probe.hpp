#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "rationale/corpus.hpp"
#include "rationale/losses.hpp"
#include "rationale/model.hpp"
#include "rationale/synthetic.hpp"
#include "rationale/training.hpp"

// Interlock probe: a two-aspect corpus where the aspect-0 block predicts the
// overall label with fidelity p_strong and a decoy group with fidelity
// p_weak. The generator is pre-trained to select the decoys and the
// predictor to read them; training methods are then compared on whether
// they move the selection to the stronger signal.
namespace rationale::probe {

struct ProbeSpec {
  double p_strong = 0.95;
  double p_weak = 0.75;
  int documents = 1000;
  int document_length = 20;
  int tokens_per_aspect = 3;  // also the decoy count
  int signal_words = 4;
  int spurious_words = 4;
  int noise_words = 40;
  int embedding_dim = 16;
  double decoy_scale = 1.5;  // polarity magnitude of decoy words; aspect words use 0.5
  int hidden = 32;
  int mask_pretrain_epochs = 30;
  int trap_epochs = 10;
  std::array<int, 3> stage_epochs{4, 4, 4};  // 3Stage continuation; Vanilla runs their sum
  double learning_rate = 1e-2;
  int batch_size = 50;
  double mask_temperature = 0.1;
  double contrastive_temperature = losses::kDefaultContrastiveTemperature;
  losses::LossWeights weights{1.0, 1.0, 1.0, 0.1, 0.3};
  double escape_threshold = 0.5;
  std::vector<double> sensitivity_thresholds{0.3, 0.5, 0.7};
  int landscape_steps = 11;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19, 20};

  bool degenerate() const { return p_strong == p_weak; }
  bool operator==(const ProbeSpec&) const = default;
};

// Throws ConfigError. p_strong == p_weak is accepted and marks the probe
// degenerate.
void validate(const ProbeSpec& spec);

void to_json(nlohmann::json& j, const ProbeSpec& spec);
void from_json(const nlohmann::json& j, ProbeSpec& spec);

corpus::SyntheticSpec corpus_spec(const ProbeSpec& spec, std::uint64_t seed);

// Row 0 decoys, row 1 the aspect-1 block, everything else on the null row.
model::RationaleMasks decoy_masks(const corpus::Document& doc, std::span<const corpus::TokenRole> roles);
// Row 0 the aspect-0 block, row 1 the aspect-1 block, the rest null.
model::RationaleMasks oracle_masks(const corpus::Document& doc, std::span<const corpus::TokenRole> roles);

// Fraction of tokens of the given kind hardened to a non-null row.
double selection_rate(const model::Model& model, std::span<const corpus::Document> docs,
                      std::span<const corpus::TokenRole> roles, corpus::TokenKind kind, int aspect = -1);
double strong_selection_rate(const model::Model& model, std::span<const corpus::Document> docs,
                             std::span<const corpus::TokenRole> roles);
double decoy_selection_rate(const model::Model& model, std::span<const corpus::Document> docs,
                            std::span<const corpus::TokenRole> roles);

// Mean overall-label cross entropy; `masks`, when given, replaces the generator.
double mean_ce(const model::Model& model, std::span<const corpus::Document> docs,
               std::span<const model::RationaleMasks> masks = {});

struct Trap {
  corpus::SyntheticCorpus corpus;
  model::Model model;
  double decoy_rate = 0.0;
  double valid_ce = 0.0;
};

Trap build_trap(const ProbeSpec& spec, std::uint64_t seed);

// Trains only the predictor, with CE, on fixed masks.
void train_predictor_on(model::Model& model, const ProbeSpec& spec, std::uint64_t seed,
                        std::span<const corpus::Document> train, std::span<const model::RationaleMasks> train_masks,
                        std::span<const corpus::Document> valid, std::span<const model::RationaleMasks> valid_masks,
                        int epochs);

struct LandscapePoint {
  double alpha = 0.0;
  double ce = 0.0;
};

// Frozen-predictor CE as each document's masks move linearly from the
// generator's selection (alpha = 0) to the same selection with the aspect-0
// and decoy columns exchanged (alpha = 1). Throws InvalidInput for steps < 3.
std::vector<LandscapePoint> landscape_scan(const model::Model& model, std::span<const corpus::Document> docs,
                                           std::span<const corpus::TokenRole> roles, int steps);

struct TrialResult {
  std::string method;
  std::uint64_t seed = 0;
  bool degenerate = false;
  bool escaped = false;
  double strong_rate = 0.0;
  double decoy_rate = 0.0;
  double valid_ce = 0.0;
  double trapped_strong_rate = 0.0;
  double trapped_ce = 0.0;
  std::vector<double> rate_history;  // validation strong-selection rate after each epoch

  nlohmann::json to_json() const;
};

// Continues training the trapped model with `method` (Vanilla or 3Stage).
TrialResult run_probe(const ProbeSpec& spec, const Trap& trap, training::Method method, std::uint64_t seed);

struct MethodSummary {
  std::string method;
  std::size_t trials = 0;
  double escape_rate = 0.0;
  double mean_final_ce = 0.0;
  double mean_strong_rate = 0.0;
  std::vector<double> escape_rate_at;  // one per sensitivity threshold
};

struct ProbeReport {
  ProbeSpec spec;
  std::vector<TrialResult> trials;
  std::vector<std::vector<LandscapePoint>> landscapes;  // one per seed
  std::vector<MethodSummary> methods;                   // vanilla, 3stage
  double escape_gap = 0.0;                              // 3stage minus vanilla
  double signature_fraction = 0.0;                      // seeds with CE(alpha=1) > CE(alpha=0)

  nlohmann::json summary_json() const;
  std::string summary_table() const;
};

ProbeReport run_experiment(const ProbeSpec& spec);

}  // namespace rationale::probe
