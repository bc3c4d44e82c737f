#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rationale/corpus.hpp"
#include "rationale/probe.hpp"
#include "rationale/synthetic.hpp"
#include "rationale/training.hpp"

namespace rationale::config {

struct DataPaths {
  std::string train, valid, test, annotated;
  std::string embeddings;  // empty: random uniform(-0.05, 0.05) rows
  int embedding_dim = 200;

  bool operator==(const DataPaths&) const = default;
};

struct EvalOptions {
  std::string checkpoint;  // empty: <output_dir>/checkpoint.bin

  bool operator==(const EvalOptions&) const = default;
};

struct RunConfig {
  std::string output_dir = "out";
  std::optional<DataPaths> data;
  std::optional<corpus::SyntheticSpec> synthetic;
  training::TrainConfig train;
  EvalOptions eval;
  std::optional<probe::ProbeSpec> probe;

  bool operator==(const RunConfig&) const = default;
};

enum class Command { Synth, Train, Eval, Probe };

// Unknown keys anywhere are a ConfigError.
RunConfig parse_config(const nlohmann::json& j);
RunConfig load_config(const std::filesystem::path& path);
nlohmann::json to_json(const RunConfig& config);

// Throws ConfigError when `config` cannot drive `command`.
void validate_for(const RunConfig& config, Command command);

// FNV-1a over the canonical (key-sorted) serialization without output_dir;
// stable under key reordering in the input file.
std::string config_hash(const RunConfig& config);

// --seed: replaces the training and synthetic seeds, and the probe seed list.
void override_seed(RunConfig& config, std::uint64_t seed);

struct Dataset {
  corpus::Vocabulary vocab;
  Eigen::MatrixXd embedding;
  std::vector<corpus::Document> train, valid, test, annotated;
};

// Generates the synthetic corpus or reads the data files. File vocabularies
// come from the training file.
Dataset load_dataset(const RunConfig& config);

// Reads test and annotation data for a trained model with vocabulary `vocab`.
Dataset load_eval_dataset(const RunConfig& config, const corpus::Vocabulary& vocab, int aspects);

}  // namespace rationale::config
