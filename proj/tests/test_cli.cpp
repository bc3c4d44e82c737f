#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "rationale/corpus.hpp"
#include "rationale/synthetic.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// Runs the CLI from `cwd` and returns its exit status.
int cli(const fs::path& cwd, const std::string& args) {
  const std::string cmd = "cd '" + cwd.string() + "' && '" RATIONALE_CLI_PATH "' " + args + " >> cli.log 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path fresh(const std::string& name) {
  const fs::path d = fs::path(RATIONALE_TEST_TMP) / "cli" / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

void write_json(const fs::path& p, const json& j) { std::ofstream(p, std::ios::binary) << j.dump(2); }

json small_synthetic(std::uint64_t seed = 3) {
  return {{"aspects", 3}, {"documents", 300}, {"annotated", 30}, {"noise_words", 40}, {"seed", seed}};
}

json small_train(const std::string& method, const std::string& mode = "short") {
  return {{"method", method},     {"mode", mode},   {"epochs", {2, 2, 2}}, {"learning_rate", 0.01},
          {"batch_size", 40},     {"aspects", 3},   {"hidden", 6},         {"mask_temperature", 0.1},
          {"seed", 2}};
}

json file_data(const std::string& dir, const std::string& train, const std::string& valid) {
  return {{"train", dir + "/" + train},
          {"valid", dir + "/" + valid},
          {"test", dir + "/test.jsonl"},
          {"annotated", dir + "/annotated.jsonl"},
          {"embeddings", dir + "/embeddings.txt"},
          {"embedding_dim", 16}};
}

std::size_t lines(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string s; std::getline(in, s);) n += !s.empty();
  return n;
}

void strip_labels(const fs::path& in, const fs::path& out) {
  std::ifstream src(in);
  std::ofstream dst(out, std::ios::binary);
  for (std::string s; std::getline(src, s);) {
    if (s.empty()) continue;
    auto j = json::parse(s);
    j.erase("ratings");
    dst << j.dump() << "\n";
  }
}

}  // namespace

TEST(Cli, SynthIsDeterministicAndSelfDescribing) {
  const auto d = fresh("synth");
  json cfg{{"output_dir", "a"}, {"synthetic", small_synthetic()}};
  cfg["synthetic"]["documents"] = 2000;
  write_json(d / "c.json", cfg);
  ASSERT_EQ(cli(d, "synth --config c.json"), 0);
  ASSERT_EQ(cli(d, "synth --config c.json --out b"), 0);
  for (const char* f : {"train.jsonl", "valid.jsonl", "test.jsonl", "annotated.jsonl", "embeddings.txt", "manifest.json"})
    EXPECT_EQ(slurp(d / "a" / f), slurp(d / "b" / f)) << f;

  const auto manifest = json::parse(slurp(d / "a" / "manifest.json"));
  auto expect = rationale::corpus::SyntheticSpec{};
  expect.aspects = 3;
  expect.documents = 2000;
  expect.annotated = 30;
  expect.noise_words = 40;
  expect.seed = 3;
  EXPECT_EQ(manifest.at("synthetic").get<rationale::corpus::SyntheticSpec>(), expect);

  const auto vocab = rationale::corpus::build_vocabulary(std::vector<fs::path>{d / "a" / "train.jsonl"});
  std::size_t pos = 0, total = 0;
  for (const char* f : {"train.jsonl", "valid.jsonl", "test.jsonl"})
    for (const auto& doc : rationale::corpus::load_reviews(d / "a" / f, vocab)) {
      pos += static_cast<std::size_t>(*doc.overall_label);
      ++total;
    }
  EXPECT_EQ(total, 2000u);
  EXPECT_NEAR(double(pos) / double(total), 0.5, 0.05);
}

TEST(Cli, RefusesNonEmptyOutputWithoutForce) {
  const auto d = fresh("force");
  write_json(d / "c.json", {{"output_dir", "out"}, {"synthetic", small_synthetic()}});
  ASSERT_EQ(cli(d, "synth --config c.json"), 0);
  EXPECT_EQ(cli(d, "synth --config c.json"), 2);
  EXPECT_EQ(cli(d, "synth --config c.json --force"), 0);
  EXPECT_EQ(cli(d, "synth --config missing.json"), 2);
  EXPECT_EQ(cli(d, "synth --config c.json --bogus"), 2);
  EXPECT_EQ(cli(d, ""), 2);
  write_json(d / "typo.json", {{"output_dir", "t"}, {"synthetic", small_synthetic()}, {"extra", 1}});
  EXPECT_EQ(cli(d, "synth --config typo.json"), 2);
}

TEST(Cli, TrainAndEvalAreReproducible) {
  const auto d = fresh("train");
  json cfg{{"output_dir", "run"}, {"synthetic", small_synthetic()}, {"train", small_train("3stage")}};
  write_json(d / "c.json", cfg);
  ASSERT_EQ(cli(d, "train --config c.json"), 0);
  EXPECT_EQ(lines(d / "run" / "metrics.jsonl"), 6u);
  EXPECT_EQ(cli(d, "train --config c.json"), 2);
  const auto metrics = slurp(d / "run" / "metrics.jsonl"), ckpt = slurp(d / "run" / "checkpoint.bin");
  ASSERT_EQ(cli(d, "train --config c.json --force"), 0);
  EXPECT_EQ(slurp(d / "run" / "metrics.jsonl"), metrics);
  EXPECT_EQ(slurp(d / "run" / "checkpoint.bin"), ckpt);

  ASSERT_EQ(cli(d, "eval --config c.json"), 0);
  const auto report = slurp(d / "run" / "report.json"), table = slurp(d / "run" / "report.txt");
  ASSERT_EQ(cli(d, "eval --config c.json --force"), 0);
  EXPECT_EQ(slurp(d / "run" / "report.json"), report);
  EXPECT_EQ(slurp(d / "run" / "report.txt"), table);
  const auto j = json::parse(report);
  EXPECT_TRUE(j.at("accuracy").is_number());
  EXPECT_EQ(j.at("permutation").size(), 3u);

  const auto resolved = json::parse(slurp(d / "run" / "resolved_config.json"));
  write_json(d / "resolved.json", resolved);
  ASSERT_EQ(cli(d, "train --config resolved.json --out again"), 0);
  EXPECT_EQ(slurp(d / "again" / "metrics.jsonl"), metrics);

  ASSERT_EQ(cli(d, "train --config c.json --seed 9 --out seeded"), 0);
  EXPECT_NE(slurp(d / "seeded" / "metrics.jsonl"), metrics);
}

TEST(Cli, LongModeCoversEveryToken) {
  const auto d = fresh("long");
  write_json(d / "c.json", {{"output_dir", "run"}, {"synthetic", small_synthetic()}, {"train", small_train("vanilla", "long")}});
  ASSERT_EQ(cli(d, "train --config c.json"), 0);
  EXPECT_EQ(lines(d / "run" / "metrics.jsonl"), 2u);
  ASSERT_EQ(cli(d, "eval --config c.json"), 0);
  const auto j = json::parse(slurp(d / "run" / "report.json"));
  EXPECT_DOUBLE_EQ(j.at("avg_length_test").get<double>() * 3, 30.0);
  EXPECT_DOUBLE_EQ(j.at("avg_length_annotated").get<double>() * 3, 30.0);
}

TEST(Cli, LabelFreeTraining) {
  const auto d = fresh("labels");
  write_json(d / "s.json", {{"output_dir", "corpus"}, {"synthetic", small_synthetic()}});
  ASSERT_EQ(cli(d, "synth --config s.json"), 0);
  strip_labels(d / "corpus" / "train.jsonl", d / "corpus" / "train_bare.jsonl");
  strip_labels(d / "corpus" / "valid.jsonl", d / "corpus" / "valid_bare.jsonl");

  write_json(d / "v.json",
             {{"output_dir", "v"}, {"data", file_data("corpus", "train_bare.jsonl", "valid_bare.jsonl")},
              {"train", small_train("vanilla")}});
  EXPECT_EQ(cli(d, "train --config v.json"), 2);
  EXPECT_FALSE(fs::exists(d / "v" / "checkpoint.bin"));

  write_json(d / "c.json",
             {{"output_dir", "c"}, {"data", file_data("corpus", "train_bare.jsonl", "valid_bare.jsonl")},
              {"train", small_train("contra")}});
  ASSERT_EQ(cli(d, "train --config c.json"), 0);
  ASSERT_EQ(cli(d, "eval --config c.json"), 0);
  const auto j = json::parse(slurp(d / "c" / "report.json"));
  EXPECT_TRUE(j.at("accuracy").is_null());
  const auto table = slurp(d / "c" / "report.txt");
  EXPECT_NE(table.find(" - "), std::string::npos) << table;

  // Annotations with a different aspect count than the checkpoint.
  write_json(d / "s5.json", {{"output_dir", "corpus5"}, {"synthetic", {{"aspects", 5}, {"documents", 100}, {"annotated", 10}}}});
  ASSERT_EQ(cli(d, "synth --config s5.json"), 0);
  auto mismatch = json{{"output_dir", "c"}, {"data", file_data("corpus", "train_bare.jsonl", "valid_bare.jsonl")},
                       {"train", small_train("contra")}};
  mismatch["data"]["annotated"] = "corpus5/annotated.jsonl";
  write_json(d / "m.json", mismatch);
  EXPECT_EQ(cli(d, "eval --config m.json --force"), 3);
}

TEST(Cli, ProbeRerunIsIdentical) {
  const auto d = fresh("probe");
  json probe{{"documents", 300}, {"mask_pretrain_epochs", 5}, {"trap_epochs", 3}, {"stage_epochs", {1, 1, 1}},
             {"seeds", {1, 2}}};
  write_json(d / "p.json", {{"output_dir", "out"}, {"probe", probe}});
  ASSERT_EQ(cli(d, "probe --config p.json"), 0);
  const auto summary = slurp(d / "out" / "summary.json");
  EXPECT_EQ(lines(d / "out" / "trials.jsonl"), 4u);
  EXPECT_TRUE(fs::exists(d / "out" / "landscape_seed2.txt"));
  const auto j = json::parse(summary);
  ASSERT_EQ(j.at("methods").size(), 2u);
  EXPECT_EQ(j.at("methods")[0].at("method"), "vanilla");
  EXPECT_EQ(j.at("methods")[1].at("method"), "3stage");
  EXPECT_TRUE(j.at("escape_gap").is_number());
  EXPECT_NE(slurp(d / "out" / "summary.txt").find("escape gap (3stage - vanilla): "), std::string::npos);
  ASSERT_EQ(cli(d, "probe --config p.json --force"), 0);
  EXPECT_EQ(slurp(d / "out" / "summary.json"), summary);
  EXPECT_EQ(cli(d, "probe --config p.json"), 2);

  probe["p_weak"] = 0.3;
  write_json(d / "bad.json", {{"output_dir", "bad"}, {"probe", probe}});
  EXPECT_EQ(cli(d, "probe --config bad.json"), 2);
}
