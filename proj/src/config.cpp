#include "rationale/config.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <random>

#include "rationale/detail/json_fields.hpp"
#include "rationale/errors.hpp"

namespace rationale::config {

using nlohmann::json;

namespace {

std::string execution_name(kernels::Execution e) { return e == kernels::Execution::Serial ? "serial" : "parallel"; }

kernels::Execution parse_execution(const std::string& s) {
  if (s == "serial") return kernels::Execution::Serial;
  if (s == "parallel") return kernels::Execution::Parallel;
  throw ConfigError("unknown execution '" + s + "'");
}

json weights_json(const losses::LossWeights& w) {
  return {{"ce", w.ce},
          {"contra", w.contra},
          {"length", w.length},
          {"continuity", w.continuity},
          {"target_selected_fraction", w.target_selected_fraction}};
}

void read_weights(const json& j, losses::LossWeights& w) {
  detail::FieldReader r(j, "train.weights");
  r.read("ce", w.ce);
  r.read("contra", w.contra);
  r.read("length", w.length);
  r.read("continuity", w.continuity);
  r.read("target_selected_fraction", w.target_selected_fraction);
  r.finish();
}

json train_json(const training::TrainConfig& c) {
  return {{"method", std::string(training::to_string(c.method))},
          {"mode", std::string(model::to_string(c.mode))},
          {"epochs", c.epochs},
          {"learning_rate", c.learning_rate},
          {"batch_size", c.batch_size},
          {"seed", c.seed},
          {"weights", weights_json(c.weights)},
          {"aspects", c.aspects},
          {"hidden", c.hidden},
          {"mask_temperature", c.mask_temperature},
          {"contrastive_temperature", c.contrastive_temperature},
          {"train_embeddings", c.train_embeddings},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"adam_epsilon", c.adam_epsilon},
          {"execution", execution_name(c.execution)}};
}

void read_train(const json& j, training::TrainConfig& c) {
  detail::FieldReader r(j, "train");
  std::string s;
  if (r.read("method", s)) c.method = training::parse_method(s);
  if (r.read("mode", s)) {
    try {
      c.mode = model::parse_mode(s);
    } catch (const InvalidInput& e) {
      throw ConfigError(std::string("train.mode: ") + e.what());
    }
  }
  r.read("epochs", c.epochs);
  r.read("learning_rate", c.learning_rate);
  r.read("batch_size", c.batch_size);
  r.read("seed", c.seed);
  if (r.has("weights")) read_weights(r.at("weights"), c.weights);
  r.read("aspects", c.aspects);
  r.read("hidden", c.hidden);
  r.read("mask_temperature", c.mask_temperature);
  r.read("contrastive_temperature", c.contrastive_temperature);
  r.read("train_embeddings", c.train_embeddings);
  r.read("beta1", c.beta1);
  r.read("beta2", c.beta2);
  r.read("adam_epsilon", c.adam_epsilon);
  if (r.read("execution", s)) c.execution = parse_execution(s);
  r.finish();
}

Eigen::MatrixXd random_embedding(std::size_t rows, int dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> init(-0.05, 0.05);
  Eigen::MatrixXd w(static_cast<Eigen::Index>(rows), dim);
  for (Eigen::Index r = 0; r < w.rows(); ++r)
    for (Eigen::Index c = 0; c < dim; ++c) w(r, c) = init(rng);
  w.row(corpus::Vocabulary::kPad).setZero();
  return w;
}

// Re-encodes documents against another vocabulary through their raw words.
void remap(std::vector<corpus::Document>& docs, const corpus::Vocabulary& vocab) {
  for (auto& d : docs)
    for (std::size_t t = 0; t < d.tokens.size(); ++t) d.tokens[t] = vocab.lookup(d.raw_tokens[t]);
}

}  // namespace

RunConfig parse_config(const json& j) {
  RunConfig c;
  detail::FieldReader r(j, "config");
  r.read("output_dir", c.output_dir);
  if (r.has("data")) {
    DataPaths d;
    detail::FieldReader dr(r.at("data"), "data");
    dr.read("train", d.train);
    dr.read("valid", d.valid);
    dr.read("test", d.test);
    dr.read("annotated", d.annotated);
    dr.read("embeddings", d.embeddings);
    dr.read("embedding_dim", d.embedding_dim);
    dr.finish();
    c.data = d;
  }
  if (r.has("synthetic")) c.synthetic = r.at("synthetic").get<corpus::SyntheticSpec>();
  if (r.has("train")) read_train(r.at("train"), c.train);
  if (r.has("eval")) {
    detail::FieldReader er(r.at("eval"), "eval");
    er.read("checkpoint", c.eval.checkpoint);
    er.finish();
  }
  if (r.has("probe")) c.probe = r.at("probe").get<probe::ProbeSpec>();
  r.finish();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_config(j);
}

json to_json(const RunConfig& c) {
  json j;
  j["output_dir"] = c.output_dir;
  if (c.data)
    j["data"] = {{"train", c.data->train},
                 {"valid", c.data->valid},
                 {"test", c.data->test},
                 {"annotated", c.data->annotated},
                 {"embeddings", c.data->embeddings},
                 {"embedding_dim", c.data->embedding_dim}};
  if (c.synthetic) j["synthetic"] = *c.synthetic;
  j["train"] = train_json(c.train);
  j["eval"] = {{"checkpoint", c.eval.checkpoint}};
  if (c.probe) j["probe"] = *c.probe;
  return j;
}

void validate_for(const RunConfig& c, Command command) {
  if (command == Command::Probe) {
    if (!c.probe) throw ConfigError("probe command needs a 'probe' section");
    probe::validate(*c.probe);
    return;
  }
  if (c.data.has_value() == c.synthetic.has_value())
    throw ConfigError("exactly one of 'data' and 'synthetic' must be present");
  if (c.synthetic) {
    try {
      corpus::validate(*c.synthetic);
    } catch (const InvalidInput& e) {
      throw ConfigError(e.what());
    }
    if (command != Command::Synth && c.synthetic->aspects != c.train.aspects)
      throw ConfigError("train.aspects differs from synthetic.aspects");
  }
  if (command == Command::Synth) {
    if (!c.synthetic) throw ConfigError("synth command needs a 'synthetic' section");
    return;
  }
  if (c.data) {
    if (c.data->embedding_dim < 1) throw ConfigError("data.embedding_dim must be >= 1");
    if (command == Command::Train && (c.data->train.empty() || c.data->valid.empty()))
      throw ConfigError("training needs data.train and data.valid");
    if (command == Command::Eval && c.data->annotated.empty() && c.data->test.empty())
      throw ConfigError("evaluation needs data.test or data.annotated");
  }
  if (command == Command::Train) training::validate(c.train);
}

std::string config_hash(const RunConfig& c) {
  json j = to_json(c);
  j.erase("output_dir");
  const std::string text = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, h);
  return buf;
}

void override_seed(RunConfig& c, std::uint64_t seed) {
  c.train.seed = seed;
  if (c.synthetic) c.synthetic->seed = seed;
  if (c.probe) c.probe->seeds = {seed};
}

Dataset load_dataset(const RunConfig& c) {
  Dataset ds;
  if (c.synthetic) {
    auto corpus = corpus::generate_synthetic(*c.synthetic);
    ds.vocab = std::move(corpus.vocab);
    ds.embedding = std::move(corpus.embeddings.weights);
    ds.train = std::move(corpus.train);
    ds.valid = std::move(corpus.valid);
    ds.test = std::move(corpus.test);
    ds.annotated = std::move(corpus.annotated);
    return ds;
  }
  if (!c.data) throw ConfigError("no data source configured");
  const auto& d = *c.data;
  const std::vector<std::filesystem::path> vocab_files{d.train};
  ds.vocab = corpus::build_vocabulary(vocab_files);
  ds.embedding = d.embeddings.empty() ? random_embedding(ds.vocab.size(), d.embedding_dim, c.train.seed)
                                      : corpus::load_embeddings(d.embeddings, ds.vocab, d.embedding_dim,
                                                                c.train.seed).weights;
  ds.train = corpus::load_reviews(d.train, ds.vocab);
  ds.valid = corpus::load_reviews(d.valid, ds.vocab);
  if (!d.test.empty()) ds.test = corpus::load_reviews(d.test, ds.vocab);
  if (!d.annotated.empty())
    ds.annotated = corpus::load_annotations(d.annotated, ds.vocab, static_cast<std::size_t>(c.train.aspects));
  return ds;
}

Dataset load_eval_dataset(const RunConfig& c, const corpus::Vocabulary& vocab, int aspects) {
  Dataset ds;
  ds.vocab = vocab;
  if (c.synthetic) {
    auto corpus = corpus::generate_synthetic(*c.synthetic);
    if (c.synthetic->aspects != aspects)
      throw DataError("synthetic corpus has " + std::to_string(c.synthetic->aspects) +
                      " aspects, the checkpoint has " + std::to_string(aspects));
    ds.test = std::move(corpus.test);
    ds.annotated = std::move(corpus.annotated);
    remap(ds.test, vocab);
    remap(ds.annotated, vocab);
    return ds;
  }
  if (!c.data) throw ConfigError("no data source configured");
  if (!c.data->test.empty()) ds.test = corpus::load_reviews(c.data->test, vocab);
  if (!c.data->annotated.empty())
    ds.annotated = corpus::load_annotations(c.data->annotated, vocab, static_cast<std::size_t>(aspects));
  return ds;
}

}  // namespace rationale::config
