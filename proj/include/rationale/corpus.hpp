#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace rationale::corpus {

using TokenId = std::int32_t;

// A tokenized review. `annotations` is either empty (no gold spans) or holds
// one sorted, duplicate-free index list per aspect.
struct Document {
  std::vector<TokenId> tokens;
  std::vector<std::string> raw_tokens;
  std::optional<int> overall_label;
  std::vector<double> aspect_ratings;
  std::vector<std::vector<int>> annotations;

  std::size_t length() const { return tokens.size(); }
  bool has_label() const { return overall_label.has_value(); }
  bool has_annotations() const { return !annotations.empty(); }

  bool operator==(const Document&) const = default;
};

// Throws DataError when a document violates its invariants.
void validate(const Document& doc);

class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kUnknown = 1;

  Vocabulary();

  // Restores a vocabulary from its id-ordered word list (specials included).
  static Vocabulary from_words(std::vector<std::string> words);

  TokenId add(std::string_view word);
  TokenId lookup(std::string_view word) const;
  bool contains(std::string_view word) const;
  const std::string& word(TokenId id) const { return words_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return words_.size(); }
  const std::vector<std::string>& words() const { return words_; }

 private:
  std::unordered_map<std::string, TokenId> ids_;
  std::vector<std::string> words_;
};

struct EmbeddingTable {
  Eigen::MatrixXd weights;  // vocab_size x dim

  int dim() const { return static_cast<int>(weights.cols()); }
  std::size_t rows() const { return static_cast<std::size_t>(weights.rows()); }
};

// Tail binarization of a [0,1] rating: <= 0.4 negative, >= 0.6 positive,
// anything in between has no label.
std::optional<int> binarize_rating(double rating);

std::vector<std::string> split_tokens(std::string_view text);

// Every whitespace-separated word in the `text` field of a review file.
Vocabulary build_vocabulary(std::span<const std::filesystem::path> review_files);

// Review records: {"text": "...", "ratings": [...]} with the overall rating
// last. Records without "ratings" load as unlabeled documents; records whose
// overall rating falls between the tails are dropped.
std::vector<Document> load_reviews(const std::filesystem::path& path, const Vocabulary& vocab);

// Review records plus "aspects": one token-index list per aspect.
std::vector<Document> load_annotations(const std::filesystem::path& path,
                                       const Vocabulary& vocab,
                                       std::size_t aspect_count = 5);

void save_reviews(const std::filesystem::path& path, std::span<const Document> docs);
void save_annotations(const std::filesystem::path& path, std::span<const Document> docs);

// `word v1 ... vd` per line. Words missing from the file get rows drawn from
// uniform(-0.05, 0.05) seeded by `seed`; the padding row is zero.
EmbeddingTable load_embeddings(const std::filesystem::path& path,
                               const Vocabulary& vocab,
                               int dim,
                               std::uint64_t seed);

void save_embeddings(const std::filesystem::path& path,
                     const Vocabulary& vocab,
                     const EmbeddingTable& table);

}  // namespace rationale::corpus
