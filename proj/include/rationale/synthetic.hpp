#pragma once

#include <cstdint>
#include <vector>

#include <json.hpp>

#include "rationale/corpus.hpp"

namespace rationale::corpus {

// Parameters of the synthetic multi-aspect corpus. Each document holds one
// contiguous block of aspect words per aspect, scattered spurious words that
// track the overall label, and filler noise words.
struct SyntheticSpec {
  int aspects = 5;
  int signal_words = 8;     // per aspect and polarity
  int spurious_words = 8;   // per polarity
  int noise_words = 200;
  double p_strong = 0.9;    // aspect-word polarity agrees with its latent aspect label
  double p_weak = 0.7;      // spurious-word polarity agrees with the overall label
  int tokens_per_aspect = 3;
  int spurious_tokens = 3;
  int document_length = 30;
  int documents = 2000;     // labeled pool, split into train/valid/test
  int annotated = 200;
  double train_fraction = 0.8;
  double valid_fraction = 0.1;
  // When set, polarity is drawn once per document and group instead of
  // once per token.
  bool document_level_polarity = false;
  // Geometry of the companion embedding table.
  int embedding_dim = 16;
  double cluster_scale = 1.0;
  double polarity_scale = 0.5;
  double spurious_scale = 0.5;  // polarity magnitude of spurious words
  double jitter = 0.1;
  double noise_scale = 0.7;
  std::uint64_t seed = 1;

  int noise_tokens() const { return document_length - aspects * tokens_per_aspect - spurious_tokens; }
  bool operator==(const SyntheticSpec&) const = default;
};

// Throws InvalidInput on an inconsistent spec.
void validate(const SyntheticSpec& spec);

enum class TokenKind { Special, Aspect, Spurious, Noise };

struct TokenRole {
  TokenKind kind = TokenKind::Special;
  int aspect = -1;    // Aspect words only
  int polarity = -1;  // 1 positive, 0 negative; -1 for noise and specials
};

struct SyntheticCorpus {
  Vocabulary vocab;
  EmbeddingTable embeddings;
  std::vector<TokenRole> roles;  // indexed by token id
  std::vector<Document> train, valid, test, annotated;
};

// Deterministic in `spec.seed`. Every document carries its gold aspect
// blocks in `annotations`; the labeled pool is generated label-balanced.
SyntheticCorpus generate_synthetic(const SyntheticSpec& spec);

void to_json(nlohmann::json& j, const SyntheticSpec& spec);
// Unknown keys are rejected with ConfigError.
void from_json(const nlohmann::json& j, SyntheticSpec& spec);

}  // namespace rationale::corpus
