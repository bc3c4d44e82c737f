#include "rationale/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "rationale/errors.hpp"

namespace rationale::corpus {

using nlohmann::json;

namespace {

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return in;
}

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

std::string where(const std::filesystem::path& path, std::size_t line) {
  return path.string() + ":" + std::to_string(line) + ": ";
}

std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string text;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) text += ' ';
    text += tokens[i];
  }
  return text;
}

// Parses the fields shared by review and annotation records. Returns nullopt
// when `drop_mid_ratings` is set and the overall rating has no binary label.
std::optional<Document> parse_record(const json& record,
                                     const Vocabulary& vocab,
                                     const std::filesystem::path& path,
                                     std::size_t line,
                                     bool drop_mid_ratings) {
  if (!record.is_object()) throw DataError(where(path, line) + "record is not an object");
  auto text = record.find("text");
  if (text == record.end() || !text->is_string())
    throw DataError(where(path, line) + "missing string field 'text'");

  Document doc;
  doc.raw_tokens = split_tokens(text->get<std::string>());
  if (doc.raw_tokens.empty()) throw DataError(where(path, line) + "empty text");
  doc.tokens.reserve(doc.raw_tokens.size());
  for (const auto& w : doc.raw_tokens) doc.tokens.push_back(vocab.lookup(w));

  if (auto ratings = record.find("ratings"); ratings != record.end()) {
    if (!ratings->is_array() || ratings->empty())
      throw DataError(where(path, line) + "'ratings' must be a non-empty array");
    for (const auto& r : *ratings) {
      if (!r.is_number()) throw DataError(where(path, line) + "non-numeric rating");
      doc.aspect_ratings.push_back(r.get<double>());
    }
    try {
      doc.overall_label = binarize_rating(doc.aspect_ratings.back());
    } catch (const InvalidInput& e) {
      throw DataError(where(path, line) + e.what());
    }
    if (!doc.overall_label && drop_mid_ratings) return std::nullopt;
  }
  return doc;
}

template <class Fn>
void for_each_record(const std::filesystem::path& path, Fn&& fn) {
  auto in = open_input(path);
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    json record;
    try {
      record = json::parse(text);
    } catch (const json::parse_error& e) {
      throw DataError(where(path, line) + "parse error: " + e.what());
    }
    fn(record, line);
  }
}

json record_of(const Document& doc) {
  json record;
  record["text"] = join_tokens(doc.raw_tokens);
  if (!doc.aspect_ratings.empty()) record["ratings"] = doc.aspect_ratings;
  return record;
}

}  // namespace

void validate(const Document& doc) {
  if (doc.tokens.empty()) throw DataError("document has no tokens");
  if (doc.raw_tokens.size() != doc.tokens.size())
    throw DataError("document token and raw-token counts differ");
  if (doc.overall_label && *doc.overall_label != 0 && *doc.overall_label != 1)
    throw DataError("overall label must be 0 or 1");
  for (TokenId id : doc.tokens)
    if (id == Vocabulary::kPad) throw DataError("padding id inside document");
  for (const auto& span : doc.annotations)
    for (int idx : span)
      if (idx < 0 || static_cast<std::size_t>(idx) >= doc.length())
        throw DataError("annotation index " + std::to_string(idx) + " outside document of length " +
                        std::to_string(doc.length()));
}

Vocabulary::Vocabulary() {
  add("<pad>");
  add("<unk>");
}

Vocabulary Vocabulary::from_words(std::vector<std::string> words) {
  if (words.size() < 2 || words[0] != "<pad>" || words[1] != "<unk>")
    throw DataError("vocabulary must start with <pad> and <unk>");
  Vocabulary v;
  for (std::size_t i = 2; i < words.size(); ++i) {
    if (v.contains(words[i])) throw DataError("duplicate vocabulary word '" + words[i] + "'");
    v.add(words[i]);
  }
  return v;
}

TokenId Vocabulary::add(std::string_view word) {
  if (auto it = ids_.find(std::string(word)); it != ids_.end()) return it->second;
  auto id = static_cast<TokenId>(words_.size());
  words_.emplace_back(word);
  ids_.emplace(words_.back(), id);
  return id;
}

TokenId Vocabulary::lookup(std::string_view word) const {
  auto it = ids_.find(std::string(word));
  if (it == ids_.end() || it->second == kPad) return kUnknown;
  return it->second;
}

bool Vocabulary::contains(std::string_view word) const {
  return ids_.count(std::string(word)) != 0;
}

std::optional<int> binarize_rating(double rating) {
  if (!(rating >= 0.0 && rating <= 1.0))
    throw InvalidInput("rating " + std::to_string(rating) + " outside [0, 1]");
  // Ratings are given on a 0.1 grid; compare with a small slack so 0.4 and
  // 0.6 written as decimals land on their intended side.
  constexpr double kSlack = 1e-9;
  if (rating <= 0.4 + kSlack) return 0;
  if (rating >= 0.6 - kSlack) return 1;
  return std::nullopt;
}

std::vector<std::string> split_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

Vocabulary build_vocabulary(std::span<const std::filesystem::path> review_files) {
  Vocabulary vocab;
  for (const auto& path : review_files) {
    for_each_record(path, [&](const json& record, std::size_t line) {
      auto text = record.find("text");
      if (text == record.end() || !text->is_string())
        throw DataError(where(path, line) + "missing string field 'text'");
      for (const auto& w : split_tokens(text->get<std::string>())) vocab.add(w);
    });
  }
  return vocab;
}

std::vector<Document> load_reviews(const std::filesystem::path& path, const Vocabulary& vocab) {
  std::vector<Document> docs;
  for_each_record(path, [&](const json& record, std::size_t line) {
    if (auto doc = parse_record(record, vocab, path, line, true)) docs.push_back(std::move(*doc));
  });
  return docs;
}

std::vector<Document> load_annotations(const std::filesystem::path& path,
                                       const Vocabulary& vocab,
                                       std::size_t aspect_count) {
  std::vector<Document> docs;
  for_each_record(path, [&](const json& record, std::size_t line) {
    // Gold spans are kept even when the overall rating sits between the tails.
    auto doc = parse_record(record, vocab, path, line, false);
    auto aspects = record.find("aspects");
    if (aspects == record.end() || !aspects->is_array())
      throw DataError(where(path, line) + "missing array field 'aspects'");
    if (aspects->size() != aspect_count)
      throw DataError(where(path, line) + "expected " + std::to_string(aspect_count) +
                      " aspect lists, found " + std::to_string(aspects->size()));
    for (const auto& span : *aspects) {
      if (!span.is_array()) throw DataError(where(path, line) + "aspect entry is not a list");
      std::vector<int> indices;
      for (const auto& idx : span) {
        if (!idx.is_number_integer()) throw DataError(where(path, line) + "non-integer index");
        auto v = idx.get<long long>();
        if (v < 0 || static_cast<std::size_t>(v) >= doc->length())
          throw DataError(where(path, line) + "annotation index " + std::to_string(v) +
                          " outside text of length " + std::to_string(doc->length()));
        indices.push_back(static_cast<int>(v));
      }
      std::sort(indices.begin(), indices.end());
      indices.erase(std::unique(indices.begin(), indices.end()), indices.end());
      doc->annotations.push_back(std::move(indices));
    }
    docs.push_back(std::move(*doc));
  });
  return docs;
}

void save_reviews(const std::filesystem::path& path, std::span<const Document> docs) {
  auto out = open_output(path);
  for (const auto& doc : docs) out << record_of(doc).dump() << '\n';
}

void save_annotations(const std::filesystem::path& path, std::span<const Document> docs) {
  auto out = open_output(path);
  for (const auto& doc : docs) {
    if (!doc.has_annotations()) throw DataError("document without annotations in annotation file");
    auto record = record_of(doc);
    record["aspects"] = doc.annotations;
    out << record.dump() << '\n';
  }
}

EmbeddingTable load_embeddings(const std::filesystem::path& path,
                               const Vocabulary& vocab,
                               int dim,
                               std::uint64_t seed) {
  if (dim <= 0) throw InvalidInput("embedding dimension must be positive");
  EmbeddingTable table;
  table.weights.resize(static_cast<Eigen::Index>(vocab.size()), dim);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> init(-0.05, 0.05);
  for (Eigen::Index r = 0; r < table.weights.rows(); ++r)
    for (Eigen::Index c = 0; c < dim; ++c) table.weights(r, c) = init(rng);
  table.weights.row(Vocabulary::kPad).setZero();

  auto in = open_input(path);
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    auto fields = split_tokens(text);
    if (fields.empty()) continue;
    if (fields.size() != static_cast<std::size_t>(dim) + 1)
      throw DataError(where(path, line) + "expected " + std::to_string(dim + 1) + " fields, found " +
                      std::to_string(fields.size()));
    if (!vocab.contains(fields[0])) continue;
    TokenId id = vocab.lookup(fields[0]);
    if (id == Vocabulary::kPad) continue;
    for (int c = 0; c < dim; ++c) {
      const auto& f = fields[static_cast<std::size_t>(c) + 1];
      double v = 0.0;
      try {
        std::size_t used = 0;
        v = std::stod(f, &used);
        if (used != f.size()) throw std::invalid_argument(f);
      } catch (const std::exception&) {
        throw DataError(where(path, line) + "bad number '" + f + "'");
      }
      if (!std::isfinite(v)) throw DataError(where(path, line) + "non-finite value");
      table.weights(id, c) = v;
    }
  }
  return table;
}

void save_embeddings(const std::filesystem::path& path,
                     const Vocabulary& vocab,
                     const EmbeddingTable& table) {
  if (table.rows() != vocab.size()) throw InvalidInput("embedding rows do not match vocabulary");
  auto out = open_output(path);
  char buf[40];
  for (std::size_t id = 2; id < vocab.size(); ++id) {
    out << vocab.word(static_cast<TokenId>(id));
    for (int c = 0; c < table.dim(); ++c) {
      std::snprintf(buf, sizeof buf, " %.17g", table.weights(static_cast<Eigen::Index>(id), c));
      out << buf;
    }
    out << '\n';
  }
}

}  // namespace rationale::corpus
