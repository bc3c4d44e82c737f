// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero when any selected criterion fails. Arguments select criteria by
// number; none runs all of them.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "rationale/config.hpp"
#include "rationale/evaluation.hpp"
#include "rationale/losses.hpp"
#include "rationale/probe.hpp"
#include "rationale/training.hpp"
#include "support.hpp"

using namespace rationale;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// 1. Vectorized contrastive loss against the literal loop.
Outcome contrastive_oracle() {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> nd(1, 8), kd(1, 4), hd(1, 8);
  const double taus[] = {0.07, 0.5, 1.0};
  double worst = 0.0;
  for (int b = 0; b < 1000; ++b) {
    int n = nd(rng), k = kd(rng);
    while (n * k < 2) n = nd(rng), k = kd(rng);  // one sample has no positives
    const int h = hd(rng);
    losses::ContrastiveBatch batch;
    batch.embeddings = testkit::random_unit_columns(2 * h, n * k, rng);
    for (int i = 0; i < n; ++i)
      for (int a = 0; a < k; ++a) batch.labels.push_back(a);
    batch.temperature = taus[b % 3];
    const double got = losses::contrastive_loss(batch);
    const double want = testkit::contrastive_oracle(batch.embeddings, batch.labels, batch.temperature);
    worst = std::max(worst, std::abs(got - want));
  }
  return {worst < 1e-10, fmt("1000 batches, max |vectorized - oracle| = %.3g (tolerance 1e-10)", worst)};
}

// 2. Two classes of two identical unit vectors at temperature 1.
Outcome hand_case() {
  losses::ContrastiveBatch b;
  b.embeddings.resize(2, 4);
  b.embeddings << 1, 1, 0, 0, 0, 0, 1, 1;
  b.labels = {0, 0, 1, 1};
  b.temperature = 1.0;
  const double e = std::exp(1.0);
  const double closed = 4.0 * std::log((e + 2.0) / e);
  const double got = losses::contrastive_loss(b);
  const double oracle = testkit::contrastive_oracle(b.embeddings, b.labels, 1.0);
  const double err = std::max(std::abs(got - closed), std::abs(oracle - closed));
  return {err < 1e-9, fmt("loss %.12f, 4 ln((e+2)/e) = %.12f, oracle %.12f, error %.3g (tolerance 1e-9)", got,
                          closed, oracle, err)};
}

// 3. Central differences at eps = 1e-3 over every parameter entry.
Outcome gradient_fidelity() {
  const double eps = 1e-3, tol = 1e-4;
  const losses::LossWeights all{1.0, 1.0, 1.0, 0.5, 0.4};
  const std::pair<const char*, losses::LossWeights> terms[] = {{"ce", {1, 0, 0, 0, 0.4}},
                                                               {"contrastive", {0, 1, 0, 0, 0.4}},
                                                               {"length", {0, 0, 1, 0, 0.4}},
                                                               {"continuity", {0, 0, 0, 1, 0.4}}};
  std::map<std::string, std::pair<double, int>> per_term;  // worst error, failing instances
  double worst = 0.0;
  int failing = 0;
  double fine = 0.0;  // informational: same instances at eps / 10
  std::string worst_at;
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    const double tau = seed % 2 ? 0.5 : losses::kDefaultContrastiveTemperature;
    auto g = testkit::random_grad_instance(seed, losses::StageRole::Joint, tau);
    g.objective.weights = all;
    const auto r = testkit::check_instance(g, eps, 0, seed);
    if (r.max_error >= tol) ++failing;
    fine = std::max(fine, testkit::check_instance(g, eps / 10, 0, seed).max_error);
    if (r.max_error > worst) {
      worst = r.max_error;
      worst_at = fmt("instance %d %s", int(seed), r.worst.c_str());
    }
    for (const auto& [name, w] : terms) {
      auto gt = testkit::random_grad_instance(seed, losses::StageRole::Joint, tau);
      gt.objective.weights = w;
      const auto rt = testkit::check_instance(gt, eps, 0, seed);
      auto& slot = per_term[name];
      slot.first = std::max(slot.first, rt.max_error);
      slot.second += rt.max_error >= tol;
    }
  }
  std::string detail = fmt("50 instances, joint objective max relative error %.3g at %s, %d/50 above 1e-4; per term:",
                           worst, worst_at.c_str(), failing);
  for (const auto& [name, w] : terms)
    detail += fmt(" %s %.3g (%d fail)", name, per_term[name].first, per_term[name].second);
  detail += fmt("; joint at eps 1e-4: %.3g", fine);
  return {failing == 0, detail};
}

// 4. Predictor untouched through stage 2, generator through stage 3.
Outcome freeze_exactness() {
  struct Recorder : training::Observer {
    std::map<std::pair<int, int>, model::Model> at;
    std::vector<training::EpochMetrics> epochs;
    void on_epoch(const training::EpochMetrics& m, const model::Model& cur) override {
      at.emplace(std::make_pair(m.stage, m.epoch), cur);
      epochs.push_back(m);
    }
    int best(int stage) const {
      double v = std::numeric_limits<double>::infinity();
      int e = 0;
      for (const auto& m : epochs)
        if (m.stage == stage && m.valid.total < v) {
          v = m.valid.total;
          e = m.epoch;
        }
      return e;
    }
  };
  int checks = 0, violations = 0;
  for (auto mode : {model::Mode::Long, model::Mode::Short}) {
    const auto c = corpus::generate_synthetic(testkit::tiny_spec(3, 21));
    auto cfg = testkit::tiny_config(training::Method::ThreeStage, mode, 3);
    cfg.epochs = {3, 3, 3};
    Recorder rec;
    const auto run = training::run_3stage(cfg, c.embeddings.weights, training::make_train_data(c.train, c.valid), &rec);
    const auto& s1 = rec.at.at({1, rec.best(1)});
    const auto& s2 = rec.at.at({2, rec.best(2)});
    for (int e = 1; e <= 3; ++e) {
      for (auto g : {model::ParamGroup::Encoder, model::ParamGroup::Heads}) {
        ++checks;
        violations += !testkit::group_equal(rec.at.at({2, e}), s1, g);
      }
      ++checks;
      violations += !testkit::group_equal(rec.at.at({3, e}), s2, model::ParamGroup::Generator);
    }
    ++checks;
    violations += !testkit::group_equal(run.best.model, s2, model::ParamGroup::Generator);
  }
  return {violations == 0, fmt("%d bitwise comparisons across Long and Short runs, %d differ", checks, violations)};
}

// 5. Permutation search against exhaustive enumeration, K = 5.
Outcome permutation_mapping() {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> len(5, 40), ndocs(1, 12);
  std::uniform_real_distribution<double> density(0.05, 0.6);
  int mismatches = 0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<eval::HardSelection> sel;
    std::vector<std::vector<eval::TokenSet>> gold;
    const int docs = ndocs(rng);
    for (int d = 0; d < docs; ++d) {
      const int l = len(rng);
      eval::HardSelection h;
      std::vector<eval::TokenSet> g;
      for (int a = 0; a < 5; ++a) {
        h.sets.push_back(testkit::random_set(l, density(rng), rng));
        g.push_back(testkit::random_set(l, density(rng), rng));
      }
      sel.push_back(std::move(h));
      gold.push_back(std::move(g));
    }
    const auto got = eval::best_permutation_f1(sel, gold);
    const auto want = testkit::brute_force_permutation(sel, gold);
    mismatches += got.permutation != want.permutation || got.per_aspect_f1 != want.per_aspect;
  }
  return {mismatches == 0, fmt("100 instances, %d differ from the 120-assignment enumeration", mismatches)};
}

const probe::ProbeReport& probe_report() {
  static const probe::ProbeReport rep = probe::run_experiment(probe::ProbeSpec{});
  return rep;
}

// 6. Frozen trapped predictor scores the strong selection worse.
Outcome interlock_signature() {
  const auto& rep = probe_report();
  int hits = 0;
  for (const auto& curve : rep.landscapes) hits += curve.back().ce > curve.front().ce;
  const double frac = double(hits) / double(rep.landscapes.size());
  return {frac >= 0.9 && rep.landscapes.size() == 20,
          fmt("CE(strong) > CE(decoy) in %d/%zu seeds (%.2f, need >= 0.90)", hits, rep.landscapes.size(), frac)};
}

// 7. 3Stage escapes the trap more often than Vanilla.
Outcome escape_gap() {
  const auto& rep = probe_report();
  const auto& v = rep.methods.at(0);
  const auto& t = rep.methods.at(1);
  return {rep.escape_gap >= 0.3 && v.trials >= 20,
          fmt("escape rate %s %.2f, %s %.2f over %zu seeds, gap %+.2f (need >= +0.30)", t.method.c_str(),
              t.escape_rate, v.method.c_str(), v.escape_rate, v.trials, rep.escape_gap)};
}

double table_f1(const std::string& name, std::uint64_t seed) {
  auto cfg = config::load_config(fs::path(RATIONALE_SOURCE_DIR) / "configs" / (name + ".json"));
  config::override_seed(cfg, seed);
  config::validate_for(cfg, config::Command::Train);
  const auto ds = config::load_dataset(cfg);
  const auto run = training::run(cfg.train, ds.embedding, training::make_train_data(ds.train, ds.valid));
  const auto rep = eval::evaluate(run.best.model, run.best.label_trained, run.best.method, ds.test, ds.annotated);
  return 100.0 * rep.avg_f1;
}

// 8. Short mode, K = 5, 5000 training documents, five seeds per method.
Outcome table_direction() {
  std::map<std::string, std::vector<double>> f1;
  for (const char* name : {"vanilla", "contra", "3stage"})
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      f1[name].push_back(table_f1(name, seed));
      std::fprintf(stderr, "  %s seed %d avg F1 %.1f\n", name, int(seed), f1[name].back());
    }
  auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / double(v.size());
  };
  const double v = mean(f1["vanilla"]), c = mean(f1["contra"]), t = mean(f1["3stage"]);
  const bool stage_gap = t - v >= 5.0;
  const bool contra_close = c >= v - 10.0;
  return {stage_gap && contra_close,
          fmt("mean avg F1 vanilla %.1f, contra %.1f, 3stage %.1f; 3stage - vanilla %+.1f (need >= +5), "
              "contra - vanilla %+.1f (need >= -10)",
              v, c, t, t - v, c - v)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

int cli(const fs::path& cwd, const std::string& args) {
  const std::string cmd = "cd '" + cwd.string() + "' && '" RATIONALE_CLI_PATH "' " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// 9. Every command twice with identical config and seed.
Outcome determinism() {
  struct Command {
    std::string args, out;
    std::vector<std::string> files;
  };
  const fs::path dir = fs::path(RATIONALE_TEST_TMP) / "acceptance";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string configs = std::string(RATIONALE_SOURCE_DIR) + "/configs/";
  // eval reads the checkpoint that train leaves in the same directory.
  const std::vector<Command> commands{
      {"synth --config " + configs + "synth.json", "corpus",
       {"train.jsonl", "valid.jsonl", "test.jsonl", "annotated.jsonl", "embeddings.txt", "manifest.json"}},
      {"train --config " + configs + "3stage.json", "model",
       {"metrics.jsonl", "steps.jsonl", "checkpoint.bin", "resolved_config.json"}},
      {"eval --config " + configs + "3stage.json", "model", {"report.json", "report.txt"}},
      {"probe --config " + configs + "probe.json", "probe",
       {"summary.json", "summary.txt", "trials.jsonl", "landscape_seed1.txt"}}};
  int compared = 0, differ = 0, failed = 0;
  // Identical arguments from two working directories.
  for (const char* run : {"a", "b"}) {
    fs::create_directories(dir / run);
    for (const auto& c : commands) failed += cli(dir / run, c.args + " --seed 1 --force --out " + c.out) != 0;
  }
  for (const auto& c : commands)
    for (const auto& f : c.files) {
      const auto a = dir / "a" / c.out / f, b = dir / "b" / c.out / f;
      ++compared;
      differ += !fs::exists(a) || slurp(a) != slurp(b);
    }
  return {failed == 0 && differ == 0,
          fmt("synth, train, eval and probe each run twice with seed 1: %d command failures, %d of %d output files "
              "differ",
              failed, differ, compared)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"contrastive oracle equivalence", contrastive_oracle},
      {"contrastive hand case", hand_case},
      {"gradient fidelity", gradient_fidelity},
      {"freeze exactness", freeze_exactness},
      {"permutation mapping", permutation_mapping},
      {"interlock signature", interlock_signature},
      {"escape gap", escape_gap},
      {"directional table analogue", table_direction},
      {"determinism", determinism}};
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  bool all_pass = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = int(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("criterion %d %s  %s: %s [%.1f s]\n", id, o.pass ? "PASS" : "FAIL", criteria[i].first,
                o.detail.c_str(), secs);
    std::fflush(stdout);
    all_pass = all_pass && o.pass;
  }
  return all_pass ? 0 : 1;
}
