#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "rationale/corpus.hpp"
#include "rationale/kernels.hpp"
#include "rationale/model.hpp"

namespace rationale::eval {

using TokenSet = std::vector<int>;  // sorted token indices

// sets[k] holds the tokens assigned to rationale k.
struct HardSelection {
  std::vector<TokenSet> sets;
};

// Argmax per token, ties toward the lowest row; tokens whose argmax is the
// null row are left unassigned.
HardSelection harden_masks(const model::RationaleMasks& masks);

// Both sets sorted. Empty vs empty scores 1, exactly one empty scores 0.
double token_f1(const TokenSet& selected, const TokenSet& gold);

struct PermutationResult {
  std::vector<double> per_aspect_f1;  // indexed by gold aspect
  std::vector<int> permutation;       // permutation[r] = gold aspect assigned to rationale r
  double average() const;
};

// Exhaustive search over rationale-to-aspect assignments maximizing the mean
// of document-averaged per-aspect F1. Ties go to the lexicographically
// smallest permutation. Refuses more than kMaxExhaustiveAspects aspects.
inline constexpr int kMaxExhaustiveAspects = 8;
PermutationResult best_permutation_f1(std::span<const HardSelection> selections,
                                      std::span<const std::vector<TokenSet>> golds);

// Per-aspect F1 from counts pooled over all documents, under `permutation`.
std::vector<double> micro_f1(std::span<const HardSelection> selections,
                             std::span<const std::vector<TokenSet>> golds, std::span<const int> permutation);

// Mean over documents of (sum_k |set_k|) / K.
double average_length(std::span<const HardSelection> selections);

// Fraction of labeled documents whose prediction (sigmoid >= 0.5 is class 1)
// matches the label; nullopt when no document is labeled.
std::optional<double> accuracy(std::span<const model::ModelOutput> outputs,
                               std::span<const corpus::Document> docs);

struct EvalReport {
  std::string method;
  std::string mode;
  std::optional<double> accuracy;  // nullopt: not applicable
  std::vector<double> per_aspect_f1;
  double avg_f1 = 0.0;
  std::vector<double> micro_per_aspect_f1;
  double micro_avg_f1 = 0.0;
  double avg_length_test = 0.0;
  double avg_length_annotated = 0.0;
  std::vector<int> permutation;
  std::size_t test_documents = 0;
  std::size_t annotated_documents = 0;

  nlohmann::json to_json() const;
  // Columns: Avg. Len. (test / annotated), Acc., Avg F1, then one per aspect.
  std::string to_table() const;
};

// Column headers for per-aspect F1; the beer-review names for K = 5.
std::vector<std::string> aspect_names(int aspects);

// Accuracy on `test` (skipped when the model never saw labels), F1 on
// `annotated`. Throws InvalidInput when the annotation aspect count differs
// from the model's.
EvalReport evaluate(const model::Model& model, bool label_trained, const std::string& method,
                    std::span<const corpus::Document> test, std::span<const corpus::Document> annotated,
                    kernels::Execution exec = kernels::Execution::Parallel);

}  // namespace rationale::eval
