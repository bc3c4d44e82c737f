#include <gtest/gtest.h>

#include <cmath>

#include "rationale/errors.hpp"
#include "rationale/probe.hpp"
#include "support.hpp"

using namespace rationale;
using probe::ProbeSpec;

namespace {

double bernoulli_ce(double p) { return -(p * std::log(p) + (1 - p) * std::log(1 - p)); }

// One trap shared by the tests below; building it dominates their runtime.
const probe::Trap& shared_trap() {
  static const probe::Trap trap = probe::build_trap(ProbeSpec{}, 3);
  return trap;
}

}  // namespace

TEST(Probe, SpecValidation) {
  ProbeSpec s;
  EXPECT_NO_THROW(probe::validate(s));
  s.p_weak = 0.5;
  EXPECT_THROW(probe::validate(s), ConfigError);
  s = ProbeSpec{};
  s.p_strong = 0.7;
  EXPECT_THROW(probe::validate(s), ConfigError);
  s = ProbeSpec{};
  s.landscape_steps = 2;
  EXPECT_THROW(probe::validate(s), ConfigError);
  s = ProbeSpec{};
  s.seeds.clear();
  EXPECT_THROW(probe::validate(s), ConfigError);
  s = ProbeSpec{};
  s.p_strong = s.p_weak = 0.8;
  EXPECT_NO_THROW(probe::validate(s));
  EXPECT_TRUE(s.degenerate());
}

TEST(Probe, SpecJsonRoundTrip) {
  ProbeSpec s;
  s.p_strong = 0.9;
  s.seeds = {4, 8};
  s.stage_epochs = {1, 2, 3};
  nlohmann::json j = s;
  EXPECT_EQ(j.get<ProbeSpec>(), s);
  j["surprise"] = true;
  EXPECT_THROW(j.get<ProbeSpec>(), ConfigError);
}

TEST(Probe, DegenerateProbeIsReported) {
  ProbeSpec s;
  s.p_strong = s.p_weak = 0.8;
  s.seeds = {1, 2};
  EXPECT_THROW(probe::build_trap(s, 1), InvalidInput);
  const auto rep = probe::run_experiment(s);
  ASSERT_EQ(rep.trials.size(), 4u);
  for (const auto& t : rep.trials) EXPECT_TRUE(t.degenerate);
  EXPECT_EQ(rep.summary_json().at("degenerate"), true);
  EXPECT_NE(rep.summary_table().find("degenerate"), std::string::npos);
}

TEST(Probe, CorpusHasFidelities) {
  const auto& c = shared_trap().corpus;
  std::size_t strong = 0, strong_n = 0, decoy = 0, decoy_n = 0;
  for (const auto* split : {&c.train, &c.valid}) {
    for (const auto& d : *split) {
      for (auto id : d.tokens) {
        const auto& r = c.roles[static_cast<std::size_t>(id)];
        if (r.kind == corpus::TokenKind::Aspect && r.aspect == 0) {
          strong += r.polarity == *d.overall_label;
          ++strong_n;
        } else if (r.kind == corpus::TokenKind::Spurious) {
          decoy += r.polarity == *d.overall_label;
          ++decoy_n;
        }
      }
    }
  }
  EXPECT_NEAR(double(strong) / double(strong_n), 0.95, 0.02);
  EXPECT_NEAR(double(decoy) / double(decoy_n), 0.75, 0.03);
}

TEST(Probe, TrapSelectsDecoys) {
  const auto& trap = shared_trap();
  EXPECT_GT(trap.decoy_rate, 0.9);
  EXPECT_LT(probe::strong_selection_rate(trap.model, trap.corpus.valid, trap.corpus.roles), 0.1);
  const double oracle = bernoulli_ce(0.75);
  EXPECT_NEAR(trap.valid_ce, oracle, 0.15 * oracle);
}

TEST(Probe, LandscapeShape) {
  const auto& trap = shared_trap();
  EXPECT_THROW(probe::landscape_scan(trap.model, trap.corpus.valid, trap.corpus.roles, 2), InvalidInput);
  const auto curve = probe::landscape_scan(trap.model, trap.corpus.valid, trap.corpus.roles, 5);
  ASSERT_EQ(curve.size(), 5u);
  for (int i = 0; i < 5; ++i) EXPECT_DOUBLE_EQ(curve[static_cast<std::size_t>(i)].alpha, i / 4.0);
  EXPECT_EQ(curve.front().ce, probe::mean_ce(trap.model, trap.corpus.valid));
  EXPECT_EQ(curve.front().ce, trap.valid_ce);
  EXPECT_GT(curve.back().ce, curve.front().ce);
}

TEST(Probe, SignatureBelongsToPredictor) {
  const auto& trap = shared_trap();
  const auto& c = trap.corpus;
  auto m = trap.model;
  std::vector<model::RationaleMasks> tm, vm;
  for (const auto& d : c.train) tm.push_back(probe::oracle_masks(d, c.roles));
  for (const auto& d : c.valid) vm.push_back(probe::oracle_masks(d, c.roles));
  probe::train_predictor_on(m, ProbeSpec{}, 3, c.train, tm, c.valid, vm, ProbeSpec{}.trap_epochs);
  EXPECT_LT(probe::mean_ce(m, c.valid, vm), trap.valid_ce);
  const auto curve = probe::landscape_scan(m, c.valid, c.roles, 3);
  EXPECT_LT(curve.back().ce, curve.front().ce);
}

TEST(Probe, ZeroLearningRateNeverEscapes) {
  ProbeSpec s;
  s.learning_rate = 0.0;
  for (auto method : {training::Method::Vanilla, training::Method::ThreeStage}) {
    const auto r = probe::run_probe(s, shared_trap(), method, 3);
    EXPECT_FALSE(r.escaped);
    if (method == training::Method::Vanilla) EXPECT_EQ(r.strong_rate, r.trapped_strong_rate);
  }
}

TEST(Probe, TrialsAreDeterministic) {
  const auto a = probe::run_probe(ProbeSpec{}, shared_trap(), training::Method::ThreeStage, 3);
  const auto b = probe::run_probe(ProbeSpec{}, shared_trap(), training::Method::ThreeStage, 3);
  EXPECT_EQ(a.to_json().dump(), b.to_json().dump());
  EXPECT_EQ(a.rate_history.size(), 12u);
  EXPECT_EQ(a.escaped, a.strong_rate > 0.5);
  EXPECT_THROW(probe::run_probe(ProbeSpec{}, shared_trap(), training::Method::Contra, 3), InvalidInput);
}
