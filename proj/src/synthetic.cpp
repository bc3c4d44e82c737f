#include "rationale/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <string>

#include "rationale/detail/json_fields.hpp"
#include "rationale/errors.hpp"

namespace rationale::corpus {

namespace {

// Stream separation so the embedding geometry does not shift when corpus
// sizes change.
constexpr std::uint64_t kEmbeddingStream = 0x9e3779b97f4a7c15ULL;

struct Inventory {
  Vocabulary vocab;
  std::vector<TokenRole> roles;
  // aspect_words[k][polarity] and spurious_words[polarity] hold token ids.
  std::vector<std::array<std::vector<TokenId>, 2>> aspect_words;
  std::array<std::vector<TokenId>, 2> spurious_words;
  std::vector<TokenId> noise_words;
};

Inventory build_inventory(const SyntheticSpec& spec) {
  Inventory inv;
  inv.roles.resize(2);
  auto add = [&](const std::string& word, TokenRole role) {
    TokenId id = inv.vocab.add(word);
    inv.roles.push_back(role);
    return id;
  };
  static constexpr const char* kPolarityName[2] = {"neg", "pos"};
  inv.aspect_words.resize(static_cast<std::size_t>(spec.aspects));
  for (int k = 0; k < spec.aspects; ++k)
    for (int pol = 1; pol >= 0; --pol)
      for (int j = 0; j < spec.signal_words; ++j)
        inv.aspect_words[k][pol].push_back(
            add("a" + std::to_string(k) + "_" + kPolarityName[pol] + std::to_string(j),
                {TokenKind::Aspect, k, pol}));
  for (int pol = 1; pol >= 0; --pol)
    for (int j = 0; j < spec.spurious_words; ++j)
      inv.spurious_words[pol].push_back(
          add(std::string("sp_") + kPolarityName[pol] + std::to_string(j), {TokenKind::Spurious, -1, pol}));
  for (int j = 0; j < spec.noise_words; ++j)
    inv.noise_words.push_back(add("w" + std::to_string(j), {TokenKind::Noise, -1, -1}));
  return inv;
}

Eigen::VectorXd random_unit(std::mt19937_64& rng, int dim) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd v(dim);
  for (int i = 0; i < dim; ++i) v(i) = normal(rng);
  return v / v.norm();
}

EmbeddingTable synthesize_embeddings(const SyntheticSpec& spec, const Inventory& inv) {
  std::mt19937_64 rng(spec.seed ^ kEmbeddingStream);
  std::normal_distribution<double> normal(0.0, 1.0);
  const int d = spec.embedding_dim;
  std::vector<Eigen::VectorXd> centers, aspect_polarity;
  for (int k = 0; k < spec.aspects; ++k) {
    centers.push_back(random_unit(rng, d));
    aspect_polarity.push_back(random_unit(rng, d));
  }
  Eigen::VectorXd spurious_polarity = random_unit(rng, d);
  // Mutually orthogonal directions whenever the dimension allows it.
  const int directions = 2 * spec.aspects + 1;
  if (directions <= d) {
    Eigen::MatrixXd g(d, directions);
    for (int k = 0; k < spec.aspects; ++k) {
      g.col(2 * k) = centers[k];
      g.col(2 * k + 1) = aspect_polarity[k];
    }
    g.col(directions - 1) = spurious_polarity;
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(d, directions);
    for (int k = 0; k < spec.aspects; ++k) {
      centers[k] = q.col(2 * k);
      aspect_polarity[k] = q.col(2 * k + 1);
    }
    spurious_polarity = q.col(directions - 1);
  }

  EmbeddingTable table;
  table.weights = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(inv.vocab.size()), d);
  auto jitter = [&] {
    Eigen::VectorXd v(d);
    for (int i = 0; i < d; ++i) v(i) = spec.jitter * normal(rng);
    return v;
  };
  for (std::size_t id = 2; id < inv.roles.size(); ++id) {
    const TokenRole& role = inv.roles[id];
    const double sign = role.polarity == 1 ? 1.0 : -1.0;
    Eigen::VectorXd v;
    switch (role.kind) {
      case TokenKind::Aspect:
        v = spec.cluster_scale * centers[role.aspect] +
            sign * spec.polarity_scale * aspect_polarity[role.aspect] + jitter();
        break;
      case TokenKind::Spurious:
        v = sign * spec.spurious_scale * spurious_polarity + jitter();
        break;
      case TokenKind::Noise:
        v.resize(d);
        for (int i = 0; i < d; ++i) v(i) = spec.noise_scale * normal(rng) / std::sqrt(double(d));
        break;
      case TokenKind::Special:
        v = Eigen::VectorXd::Zero(d);
        break;
    }
    table.weights.row(static_cast<Eigen::Index>(id)) = v.transpose();
  }
  return table;
}

class DocumentSampler {
 public:
  DocumentSampler(const SyntheticSpec& spec, const Inventory& inv, std::mt19937_64& rng)
      : spec_(spec), inv_(inv), rng_(rng) {}

  Document sample() {
    const int K = spec_.aspects;
    std::vector<int> latent(static_cast<std::size_t>(K));
    int positives = 0;
    for (auto& l : latent) {
      l = coin(0.5);
      positives += l;
    }
    int label;
    if (2 * positives > K) label = 1;
    else if (2 * positives < K) label = 0;
    else label = latent[0];

    // A unit is either an aspect block (aspect >= 0) or a single word.
    struct Unit {
      int aspect;
      std::vector<TokenId> words;
    };
    std::vector<Unit> units;
    for (int k = 0; k < K; ++k) {
      Unit block{k, {}};
      int doc_polarity = agree(latent[k], spec_.p_strong);
      for (int t = 0; t < spec_.tokens_per_aspect; ++t) {
        int pol = spec_.document_level_polarity ? doc_polarity : agree(latent[k], spec_.p_strong);
        block.words.push_back(pick(inv_.aspect_words[k][pol]));
      }
      units.push_back(std::move(block));
    }
    int spurious_polarity = agree(label, spec_.p_weak);
    for (int t = 0; t < spec_.spurious_tokens; ++t) {
      int pol = spec_.document_level_polarity ? spurious_polarity : agree(label, spec_.p_weak);
      units.push_back({-1, {pick(inv_.spurious_words[pol])}});
    }
    for (int t = 0; t < spec_.noise_tokens(); ++t) units.push_back({-1, {pick(inv_.noise_words)}});
    std::shuffle(units.begin(), units.end(), rng_);

    Document doc;
    doc.overall_label = label;
    doc.annotations.resize(static_cast<std::size_t>(K));
    for (const auto& unit : units) {
      for (TokenId id : unit.words) {
        if (unit.aspect >= 0) doc.annotations[unit.aspect].push_back(static_cast<int>(doc.tokens.size()));
        doc.tokens.push_back(id);
        doc.raw_tokens.push_back(inv_.vocab.word(id));
      }
    }
    for (int l : latent) doc.aspect_ratings.push_back(l ? 0.8 : 0.2);
    doc.aspect_ratings.push_back(label ? 0.8 : 0.2);
    return doc;
  }

 private:
  int coin(double p) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng_) < p ? 1 : 0; }
  int agree(int value, double fidelity) { return coin(fidelity) ? value : 1 - value; }
  TokenId pick(const std::vector<TokenId>& words) {
    return words[std::uniform_int_distribution<std::size_t>(0, words.size() - 1)(rng_)];
  }

  const SyntheticSpec& spec_;
  const Inventory& inv_;
  std::mt19937_64& rng_;
};

// Alternates target labels and resamples until each document matches, so
// the pool is balanced exactly.
std::vector<Document> sample_balanced(DocumentSampler& sampler, int count) {
  std::vector<Document> docs;
  docs.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const int target = i % 2;
    Document doc;
    do {
      doc = sampler.sample();
    } while (*doc.overall_label != target);
    docs.push_back(std::move(doc));
  }
  return docs;
}

}  // namespace

void validate(const SyntheticSpec& spec) {
  auto fail = [](const std::string& msg) { throw InvalidInput("synthetic spec: " + msg); };
  if (spec.aspects < 2) fail("aspects must be >= 2");
  if (!(spec.p_strong > spec.p_weak)) fail("p_strong must exceed p_weak");
  if (!(spec.p_weak > 0.5)) fail("p_weak must exceed 0.5");
  if (!(spec.p_strong <= 1.0)) fail("p_strong must be <= 1");
  if (spec.signal_words < 1 || spec.spurious_words < 1) fail("word inventories must be non-empty");
  if (spec.tokens_per_aspect < 1) fail("tokens_per_aspect must be >= 1");
  if (spec.spurious_tokens < 0) fail("spurious_tokens must be >= 0");
  if (spec.noise_tokens() < 0) fail("document_length too small for aspect and spurious tokens");
  if (spec.noise_tokens() > 0 && spec.noise_words < 1) fail("noise tokens requested with empty noise vocabulary");
  if (spec.documents < 3 || spec.annotated < 0) fail("corpus sizes out of range");
  if (!(spec.train_fraction > 0.0 && spec.valid_fraction > 0.0 &&
        spec.train_fraction + spec.valid_fraction < 1.0))
    fail("split fractions must be positive and leave room for a test split");
  if (spec.embedding_dim < 1) fail("embedding_dim must be >= 1");
  if (spec.cluster_scale < 0 || spec.polarity_scale < 0 || spec.spurious_scale < 0 || spec.jitter < 0 || spec.noise_scale < 0)
    fail("embedding scales must be nonnegative");
}

SyntheticCorpus generate_synthetic(const SyntheticSpec& spec) {
  validate(spec);
  Inventory inv = build_inventory(spec);

  SyntheticCorpus out;
  out.embeddings = synthesize_embeddings(spec, inv);

  std::mt19937_64 rng(spec.seed);
  DocumentSampler sampler(spec, inv, rng);
  std::vector<Document> pool = sample_balanced(sampler, spec.documents);
  std::shuffle(pool.begin(), pool.end(), rng);
  out.annotated = sample_balanced(sampler, spec.annotated);

  const auto n = pool.size();
  const auto n_train = static_cast<std::size_t>(std::llround(spec.train_fraction * double(n)));
  const auto n_valid = static_cast<std::size_t>(std::llround(spec.valid_fraction * double(n)));
  auto it = pool.begin();
  out.train.assign(std::make_move_iterator(it), std::make_move_iterator(it + n_train));
  it += static_cast<std::ptrdiff_t>(n_train);
  out.valid.assign(std::make_move_iterator(it), std::make_move_iterator(it + n_valid));
  it += static_cast<std::ptrdiff_t>(n_valid);
  out.test.assign(std::make_move_iterator(it), std::make_move_iterator(pool.end()));

  out.vocab = std::move(inv.vocab);
  out.roles = std::move(inv.roles);
  return out;
}

void to_json(nlohmann::json& j, const SyntheticSpec& s) {
  j = nlohmann::json{{"aspects", s.aspects},
                     {"signal_words", s.signal_words},
                     {"spurious_words", s.spurious_words},
                     {"noise_words", s.noise_words},
                     {"p_strong", s.p_strong},
                     {"p_weak", s.p_weak},
                     {"tokens_per_aspect", s.tokens_per_aspect},
                     {"spurious_tokens", s.spurious_tokens},
                     {"document_length", s.document_length},
                     {"documents", s.documents},
                     {"annotated", s.annotated},
                     {"train_fraction", s.train_fraction},
                     {"valid_fraction", s.valid_fraction},
                     {"document_level_polarity", s.document_level_polarity},
                     {"embedding_dim", s.embedding_dim},
                     {"cluster_scale", s.cluster_scale},
                     {"polarity_scale", s.polarity_scale},
                     {"spurious_scale", s.spurious_scale},
                     {"jitter", s.jitter},
                     {"noise_scale", s.noise_scale},
                     {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, SyntheticSpec& s) {
  detail::FieldReader r(j, "synthetic");
  r.read("aspects", s.aspects);
  r.read("signal_words", s.signal_words);
  r.read("spurious_words", s.spurious_words);
  r.read("noise_words", s.noise_words);
  r.read("p_strong", s.p_strong);
  r.read("p_weak", s.p_weak);
  r.read("tokens_per_aspect", s.tokens_per_aspect);
  r.read("spurious_tokens", s.spurious_tokens);
  r.read("document_length", s.document_length);
  r.read("documents", s.documents);
  r.read("annotated", s.annotated);
  r.read("train_fraction", s.train_fraction);
  r.read("valid_fraction", s.valid_fraction);
  r.read("document_level_polarity", s.document_level_polarity);
  r.read("embedding_dim", s.embedding_dim);
  r.read("cluster_scale", s.cluster_scale);
  r.read("polarity_scale", s.polarity_scale);
  r.read("spurious_scale", s.spurious_scale);
  r.read("jitter", s.jitter);
  r.read("noise_scale", s.noise_scale);
  r.read("seed", s.seed);
  r.finish();
}

}  // namespace rationale::corpus
