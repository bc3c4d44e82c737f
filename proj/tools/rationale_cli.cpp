#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "rationale/checkpoint.hpp"
#include "rationale/config.hpp"
#include "rationale/corpus.hpp"
#include "rationale/errors.hpp"
#include "rationale/evaluation.hpp"
#include "rationale/probe.hpp"
#include "rationale/synthetic.hpp"
#include "rationale/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace rationale;

namespace {

struct Options {
  std::string config;
  std::string out;
  bool force = false;
  std::optional<std::uint64_t> seed;
};

config::RunConfig resolve(const Options& o, config::Command cmd) {
  auto cfg = config::load_config(o.config);
  if (o.seed) config::override_seed(cfg, *o.seed);
  if (!o.out.empty()) cfg.output_dir = o.out;
  config::validate_for(cfg, cmd);
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("failed writing " + path.string());
}

void prepare_dir(const fs::path& dir, bool require_empty, bool force, std::initializer_list<const char*> outputs) {
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw ConfigError(dir.string() + " exists and is not a directory");
    if (!force) {
      if (require_empty && !fs::is_empty(dir))
        throw ConfigError("output directory " + dir.string() + " is not empty; pass --force to overwrite");
      for (const char* name : outputs)
        if (fs::exists(dir / name))
          throw ConfigError((dir / name).string() + " exists; pass --force to overwrite");
    }
  }
  fs::create_directories(dir);
}

json losses_json(const losses::LossBreakdown& l) {
  return {{"ce", l.ce}, {"contra", l.contra}, {"length", l.length}, {"continuity", l.continuity},
          {"total", l.total}};
}

class LogObserver : public training::Observer {
 public:
  LogObserver(const fs::path& metrics, const fs::path& steps)
      : metrics_(metrics, std::ios::binary | std::ios::trunc), steps_(steps, std::ios::binary | std::ios::trunc) {
    if (!metrics_ || !steps_) throw DataError("cannot open training logs");
  }
  void on_step(const training::StepRecord& r) override {
    steps_ << json{{"stage", r.stage}, {"epoch", r.epoch}, {"batch", r.batch}, {"loss", losses_json(r.loss)}}.dump()
           << "\n";
  }
  void on_epoch(const training::EpochMetrics& m, const model::Model&) override {
    metrics_ << json{{"stage", m.stage},
                     {"epoch", m.epoch},
                     {"train", losses_json(m.train)},
                     {"valid", losses_json(m.valid)},
                     {"valid_loss", m.valid.total}}
                    .dump()
             << "\n";
    std::printf("stage %d epoch %d  train %.6f  valid %.6f\n", m.stage, m.epoch, m.train.total, m.valid.total);
    std::fflush(stdout);
  }

 private:
  std::ofstream metrics_, steps_;
};

int cmd_synth(const Options& o) {
  const auto cfg = resolve(o, config::Command::Synth);
  const fs::path dir = cfg.output_dir;
  prepare_dir(dir, true, o.force, {});
  const auto corpus = corpus::generate_synthetic(*cfg.synthetic);
  corpus::save_reviews(dir / "train.jsonl", corpus.train);
  corpus::save_reviews(dir / "valid.jsonl", corpus.valid);
  corpus::save_reviews(dir / "test.jsonl", corpus.test);
  corpus::save_annotations(dir / "annotated.jsonl", corpus.annotated);
  corpus::save_embeddings(dir / "embeddings.txt", corpus.vocab, corpus.embeddings);
  json manifest{{"synthetic", *cfg.synthetic},
                {"seed", cfg.synthetic->seed},
                {"config_hash", config::config_hash(cfg)},
                {"counts",
                 {{"train", corpus.train.size()},
                  {"valid", corpus.valid.size()},
                  {"test", corpus.test.size()},
                  {"annotated", corpus.annotated.size()}}},
                {"files", {"train.jsonl", "valid.jsonl", "test.jsonl", "annotated.jsonl", "embeddings.txt"}}};
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
  std::printf("wrote synthetic corpus to %s (%zu train, %zu valid, %zu test, %zu annotated)\n", dir.c_str(),
              corpus.train.size(), corpus.valid.size(), corpus.test.size(), corpus.annotated.size());
  return 0;
}

int cmd_train(const Options& o) {
  const auto cfg = resolve(o, config::Command::Train);
  auto ds = config::load_dataset(cfg);
  if (cfg.train.method != training::Method::Contra) {
    for (const auto* split : {&ds.train, &ds.valid})
      for (const auto& d : *split)
        if (!d.has_label())
          throw ConfigError("method " + std::string(training::to_string(cfg.train.method)) +
                            " needs labels, but the data has unlabeled documents");
  }
  const fs::path dir = cfg.output_dir;
  prepare_dir(dir, false, o.force, {"checkpoint.bin", "metrics.jsonl", "steps.jsonl", "resolved_config.json"});
  write_text(dir / "resolved_config.json", config::to_json(cfg).dump(2) + "\n");

  const auto data = training::make_train_data(ds.train, ds.valid);
  training::RunResult result;
  {
    LogObserver log(dir / "metrics.jsonl", dir / "steps.jsonl");
    result = training::run(cfg.train, ds.embedding, data, &log);
  }
  result.best.config_hash = config::config_hash(cfg);
  result.best.vocabulary = ds.vocab.words();
  save_checkpoint(dir / "checkpoint.bin", result.best);
  std::printf("saved %s (stage %d epoch %d, validation loss %.6f)\n", (dir / "checkpoint.bin").c_str(),
              result.best.stage, result.best.epoch, result.best.valid_loss);
  return 0;
}

int cmd_eval(const Options& o) {
  const auto cfg = resolve(o, config::Command::Eval);
  const fs::path dir = cfg.output_dir;
  const fs::path ckpt_path = cfg.eval.checkpoint.empty() ? dir / "checkpoint.bin" : fs::path(cfg.eval.checkpoint);
  const auto ckpt = load_checkpoint(ckpt_path);
  const auto vocab = corpus::Vocabulary::from_words(ckpt.vocabulary);
  const auto ds = config::load_eval_dataset(cfg, vocab, ckpt.model.aspects());
  if (ds.annotated.empty()) throw DataError("evaluation needs annotated documents for F1");
  eval::EvalReport report;
  try {
    report = eval::evaluate(ckpt.model, ckpt.label_trained, ckpt.method, ds.test, ds.annotated,
                            cfg.train.execution);
  } catch (const InvalidInput& e) {
    throw DataError(e.what());
  }
  prepare_dir(dir, false, o.force, {"report.json", "report.txt"});
  json j = report.to_json();
  j["checkpoint"] = {{"stage", ckpt.stage}, {"epoch", ckpt.epoch}, {"stage_tag", ckpt.stage_tag},
                     {"valid_loss", ckpt.valid_loss}, {"config_hash", ckpt.config_hash}};
  write_text(dir / "report.json", j.dump(2) + "\n");
  const std::string table = report.to_table();
  write_text(dir / "report.txt", table);
  std::fputs(table.c_str(), stdout);
  return 0;
}

int cmd_probe(const Options& o) {
  const auto cfg = resolve(o, config::Command::Probe);
  const fs::path dir = cfg.output_dir;
  prepare_dir(dir, false, o.force, {"summary.json", "summary.txt", "trials.jsonl"});
  const auto rep = probe::run_experiment(*cfg.probe);
  write_text(dir / "summary.json", rep.summary_json().dump(2) + "\n");
  write_text(dir / "summary.txt", rep.summary_table());
  std::string trials;
  for (const auto& t : rep.trials) trials += t.to_json().dump() + "\n";
  write_text(dir / "trials.jsonl", trials);
  for (std::size_t i = 0; i < rep.landscapes.size(); ++i) {
    std::string curve = "# alpha ce\n";
    for (const auto& p : rep.landscapes[i]) {
      char line[64];
      std::snprintf(line, sizeof line, "%.6f %.17g\n", p.alpha, p.ce);
      curve += line;
    }
    write_text(dir / ("landscape_seed" + std::to_string(cfg.probe->seeds[i]) + ".txt"), curve);
  }
  std::fputs(rep.summary_table().c_str(), stdout);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-aspect selective rationalization"};
  app.require_subcommand(1);
  Options opts;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opts.config, "JSON run configuration")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", opts.out, "output directory (overrides output_dir)");
    sub->add_flag("--force", opts.force, "overwrite existing outputs");
    sub->add_option("--seed", opts.seed, "seed override");
  };
  auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
  auto* train = app.add_subcommand("train", "train a model");
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  auto* probe = app.add_subcommand("probe", "run the interlock probe");
  for (auto* s : {synth, train, eval, probe}) add_common(s);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*synth) return cmd_synth(opts);
    if (*train) return cmd_train(opts);
    if (*eval) return cmd_eval(opts);
    if (*probe) return cmd_probe(opts);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return 4;
  } catch (const InvalidInput& e) {
    std::fprintf(stderr, "invalid input: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
