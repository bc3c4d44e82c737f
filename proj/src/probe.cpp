#include "rationale/probe.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <algorithm>

#include "rationale/backprop.hpp"
#include "rationale/detail/json_fields.hpp"
#include "rationale/errors.hpp"
#include "rationale/evaluation.hpp"

namespace rationale::probe {

using corpus::Document;
using corpus::TokenKind;
using corpus::TokenRole;
using model::RationaleMasks;

namespace {

constexpr int kAspects = 2;

training::TrainConfig train_config(const ProbeSpec& spec, std::uint64_t seed, training::Method method) {
  training::TrainConfig c;
  c.method = method;
  c.mode = model::Mode::Short;
  c.epochs = spec.stage_epochs;
  if (method == training::Method::Vanilla)
    c.epochs = {spec.stage_epochs[0] + spec.stage_epochs[1] + spec.stage_epochs[2], 0, 0};
  c.learning_rate = spec.learning_rate;
  c.batch_size = spec.batch_size;
  c.seed = seed;
  c.weights = spec.weights;
  c.aspects = kAspects;
  c.hidden = spec.hidden;
  c.mask_temperature = spec.mask_temperature;
  c.contrastive_temperature = spec.contrastive_temperature;
  c.train_embeddings = false;
  return c;
}

const TokenRole& role_of(const Document& doc, std::size_t t, std::span<const TokenRole> roles) {
  return roles[static_cast<std::size_t>(doc.tokens[t])];
}

RationaleMasks one_hot_masks(const Document& doc, std::span<const TokenRole> roles, bool strong) {
  RationaleMasks m;
  m.has_null_row = true;
  const auto L = static_cast<Eigen::Index>(doc.length());
  m.weights = Eigen::MatrixXd::Zero(kAspects + 1, L);
  for (Eigen::Index t = 0; t < L; ++t) {
    const auto& r = role_of(doc, static_cast<std::size_t>(t), roles);
    Eigen::Index row = kAspects;
    if (r.kind == TokenKind::Aspect && r.aspect == 1) row = 1;
    else if (strong && r.kind == TokenKind::Aspect && r.aspect == 0) row = 0;
    else if (!strong && r.kind == TokenKind::Spurious) row = 0;
    m.weights(row, t) = 1.0;
  }
  return m;
}

bool matches(const TokenRole& r, TokenKind kind, int aspect) {
  return r.kind == kind && (aspect < 0 || r.aspect == aspect);
}

// Supervised pre-training of the generator towards fixed one-hot targets:
// mean over tokens of -log M[target, t].
void pretrain_generator(model::Model& m, std::span<const Document> docs, std::span<const RationaleMasks> targets,
                        const ProbeSpec& spec, std::uint64_t seed) {
  const model::GradientScope scope{false, true, false, false};
  training::Adam adam(m, spec.learning_rate, 0.9, 0.999, 1e-8);
  auto grads = model::Gradients::zeros_like(m);
  std::vector<std::size_t> order(docs.size());
  const std::size_t bs = static_cast<std::size_t>(spec.batch_size);
  std::vector<model::DocTrace> traces(bs);
  std::vector<model::DocGradients> doc_grads(bs, model::zeros_like_doc(m));
  for (int epoch = 1; epoch <= spec.mask_pretrain_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::seed_seq seq{seed, std::uint64_t{0x7072}, static_cast<std::uint64_t>(epoch)};
    std::mt19937_64 rng(seq);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t n = std::min(bs, order.size() - start);
      const long long nn = static_cast<long long>(n);
#pragma omp parallel for schedule(static)
      for (long long i = 0; i < nn; ++i) {
        const auto iu = static_cast<std::size_t>(i);
        const std::size_t d = order[start + iu];
        model::forward_trace(m, docs[d], traces[iu]);
        const auto& M = traces[iu].masks.weights;
        const auto& T = targets[d].weights;
        model::Upstream up;
        up.masks = -(T.array() / M.array().max(1e-300)).matrix() / double(M.cols() * static_cast<Eigen::Index>(n));
        model::backward_trace(m, docs[d], traces[iu], up, scope, doc_grads[iu]);
      }
      grads.set_zero();
      for (std::size_t i = 0; i < n; ++i) grads.add(doc_grads[i], docs[order[start + i]], scope);
      adam.step(m, grads, scope);
    }
  }
}

class RateObserver : public training::Observer {
 public:
  RateObserver(std::span<const Document> docs, std::span<const TokenRole> roles) : docs_(docs), roles_(roles) {}
  void on_epoch(const training::EpochMetrics&, const model::Model& current) override {
    history.push_back(strong_selection_rate(current, docs_, roles_));
  }
  std::vector<double> history;

 private:
  std::span<const Document> docs_;
  std::span<const TokenRole> roles_;
};

std::string fmt(const char* f, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, x);
  return buf;
}

}  // namespace

void validate(const ProbeSpec& s) {
  auto fail = [](const std::string& msg) { throw ConfigError("probe: " + msg); };
  if (!(s.p_weak > 0.5)) fail("p_weak must exceed 0.5");
  if (!(s.p_strong >= s.p_weak && s.p_strong <= 1.0)) fail("p_strong must lie in [p_weak, 1]");
  if (s.documents < 10) fail("documents must be >= 10");
  if (s.tokens_per_aspect < 1) fail("tokens_per_aspect must be >= 1");
  if (s.document_length < 3 * s.tokens_per_aspect) fail("document_length too small");
  if (s.mask_pretrain_epochs < 1 || s.trap_epochs < 1) fail("trap schedule needs >= 1 epoch per phase");
  for (int e : s.stage_epochs)
    if (e < 1) fail("stage_epochs entries must be >= 1");
  if (!(s.learning_rate >= 0.0)) fail("learning_rate must be nonnegative");
  if (!(s.decoy_scale >= 0.0)) fail("decoy_scale must be nonnegative");
  if (s.batch_size < 1 || s.hidden < 1 || s.embedding_dim < 1) fail("sizes must be positive");
  if (!(s.escape_threshold > 0.0 && s.escape_threshold < 1.0)) fail("escape_threshold must lie in (0, 1)");
  if (s.landscape_steps < 3) fail("landscape_steps must be >= 3");
  if (s.seeds.empty()) fail("at least one seed is required");
  losses::validate(s.weights);
}

void to_json(nlohmann::json& j, const ProbeSpec& s) {
  j = nlohmann::json{{"p_strong", s.p_strong},
                     {"p_weak", s.p_weak},
                     {"documents", s.documents},
                     {"document_length", s.document_length},
                     {"tokens_per_aspect", s.tokens_per_aspect},
                     {"signal_words", s.signal_words},
                     {"spurious_words", s.spurious_words},
                     {"noise_words", s.noise_words},
                     {"embedding_dim", s.embedding_dim},
                     {"decoy_scale", s.decoy_scale},
                     {"hidden", s.hidden},
                     {"mask_pretrain_epochs", s.mask_pretrain_epochs},
                     {"trap_epochs", s.trap_epochs},
                     {"stage_epochs", s.stage_epochs},
                     {"learning_rate", s.learning_rate},
                     {"batch_size", s.batch_size},
                     {"mask_temperature", s.mask_temperature},
                     {"contrastive_temperature", s.contrastive_temperature},
                     {"weights",
                      {{"ce", s.weights.ce},
                       {"contra", s.weights.contra},
                       {"length", s.weights.length},
                       {"continuity", s.weights.continuity},
                       {"target_selected_fraction", s.weights.target_selected_fraction}}},
                     {"escape_threshold", s.escape_threshold},
                     {"sensitivity_thresholds", s.sensitivity_thresholds},
                     {"landscape_steps", s.landscape_steps},
                     {"seeds", s.seeds}};
}

void from_json(const nlohmann::json& j, ProbeSpec& s) {
  detail::FieldReader r(j, "probe");
  r.read("p_strong", s.p_strong);
  r.read("p_weak", s.p_weak);
  r.read("documents", s.documents);
  r.read("document_length", s.document_length);
  r.read("tokens_per_aspect", s.tokens_per_aspect);
  r.read("signal_words", s.signal_words);
  r.read("spurious_words", s.spurious_words);
  r.read("noise_words", s.noise_words);
  r.read("embedding_dim", s.embedding_dim);
  r.read("decoy_scale", s.decoy_scale);
  r.read("hidden", s.hidden);
  r.read("mask_pretrain_epochs", s.mask_pretrain_epochs);
  r.read("trap_epochs", s.trap_epochs);
  r.read("stage_epochs", s.stage_epochs);
  r.read("learning_rate", s.learning_rate);
  r.read("batch_size", s.batch_size);
  r.read("mask_temperature", s.mask_temperature);
  r.read("contrastive_temperature", s.contrastive_temperature);
  if (r.has("weights")) {
    detail::FieldReader w(r.at("weights"), "probe.weights");
    w.read("ce", s.weights.ce);
    w.read("contra", s.weights.contra);
    w.read("length", s.weights.length);
    w.read("continuity", s.weights.continuity);
    w.read("target_selected_fraction", s.weights.target_selected_fraction);
    w.finish();
  }
  r.read("escape_threshold", s.escape_threshold);
  r.read("sensitivity_thresholds", s.sensitivity_thresholds);
  r.read("landscape_steps", s.landscape_steps);
  r.read("seeds", s.seeds);
  r.finish();
}

corpus::SyntheticSpec corpus_spec(const ProbeSpec& spec, std::uint64_t seed) {
  corpus::SyntheticSpec s;
  s.aspects = kAspects;
  s.signal_words = spec.signal_words;
  s.spurious_words = spec.spurious_words;
  s.noise_words = spec.noise_words;
  s.p_strong = spec.p_strong;
  s.p_weak = spec.p_weak;
  s.tokens_per_aspect = spec.tokens_per_aspect;
  s.spurious_tokens = spec.tokens_per_aspect;
  s.document_length = spec.document_length;
  s.documents = spec.documents;
  s.annotated = 0;
  s.document_level_polarity = true;
  s.embedding_dim = spec.embedding_dim;
  s.spurious_scale = spec.decoy_scale;
  s.seed = seed;
  return s;
}

RationaleMasks decoy_masks(const Document& doc, std::span<const TokenRole> roles) {
  return one_hot_masks(doc, roles, false);
}

RationaleMasks oracle_masks(const Document& doc, std::span<const TokenRole> roles) {
  return one_hot_masks(doc, roles, true);
}

double selection_rate(const model::Model& m, std::span<const Document> docs, std::span<const TokenRole> roles,
                      TokenKind kind, int aspect) {
  const auto outs = kernels::forward_all(m, docs, kernels::Execution::Parallel);
  std::size_t total = 0, selected = 0;
  for (std::size_t d = 0; d < docs.size(); ++d) {
    const auto sel = eval::harden_masks(outs[d].masks);
    std::vector<char> chosen(docs[d].length(), 0);
    for (const auto& set : sel.sets)
      for (int t : set) chosen[static_cast<std::size_t>(t)] = 1;
    for (std::size_t t = 0; t < docs[d].length(); ++t) {
      if (!matches(role_of(docs[d], t, roles), kind, aspect)) continue;
      ++total;
      selected += static_cast<std::size_t>(chosen[t]);
    }
  }
  return total == 0 ? 0.0 : double(selected) / double(total);
}

double strong_selection_rate(const model::Model& m, std::span<const Document> docs,
                             std::span<const TokenRole> roles) {
  return selection_rate(m, docs, roles, TokenKind::Aspect, 0);
}

double decoy_selection_rate(const model::Model& m, std::span<const Document> docs,
                            std::span<const TokenRole> roles) {
  return selection_rate(m, docs, roles, TokenKind::Spurious);
}

double mean_ce(const model::Model& m, std::span<const Document> docs, std::span<const RationaleMasks> masks) {
  if (docs.empty()) throw InvalidInput("mean_ce: no documents");
  if (!masks.empty() && masks.size() != docs.size()) throw InvalidInput("mean_ce: mask count differs");
  std::vector<double> ce(docs.size(), 0.0);
  const long long n = static_cast<long long>(docs.size());
  for (const auto& d : docs)
    if (!d.overall_label) throw InvalidInput("mean_ce: unlabeled document");
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < n; ++i) {
    const auto iu = static_cast<std::size_t>(i);
    const auto out = masks.empty() ? model::forward(m, docs[iu]) : model::forward_with_masks(m, docs[iu], masks[iu]);
    ce[iu] = losses::cross_entropy(out.overall_logit, *docs[iu].overall_label);
  }
  double s = 0.0;
  for (double v : ce) s += v;
  return s / double(docs.size());
}

void train_predictor_on(model::Model& m, const ProbeSpec& spec, std::uint64_t seed, std::span<const Document> train,
                        std::span<const RationaleMasks> train_masks, std::span<const Document> valid,
                        std::span<const RationaleMasks> valid_masks, int epochs) {
  auto cfg = train_config(spec, seed, training::Method::Vanilla);
  training::TrainData data;
  auto items = [](std::span<const Document> docs, std::span<const RationaleMasks> masks) {
    std::vector<kernels::BatchItem> out;
    for (std::size_t i = 0; i < docs.size(); ++i)
      out.push_back({&docs[i], masks.empty() ? nullptr : &masks[i]});
    return out;
  };
  data.train = items(train, train_masks);
  data.valid = items(valid, valid_masks);
  training::StageState s{1, true, false, losses::StageRole::PredictorOnly, m.mode(), false};
  training::run_stage(m, cfg, s, epochs, data);
}

Trap build_trap(const ProbeSpec& spec, std::uint64_t seed) {
  validate(spec);
  if (spec.degenerate()) throw InvalidInput("build_trap: p_strong == p_weak leaves no gap to trap");
  Trap trap;
  trap.corpus = corpus::generate_synthetic(corpus_spec(spec, seed));
  const auto& c = trap.corpus;
  trap.model = model::make_model(c.embeddings.weights, kAspects, spec.hidden, model::Mode::Short, seed,
                                 spec.mask_temperature);

  std::vector<RationaleMasks> targets;
  for (const auto& d : c.train) targets.push_back(decoy_masks(d, c.roles));
  pretrain_generator(trap.model, c.train, targets, spec, seed);
  train_predictor_on(trap.model, spec, seed, c.train, {}, c.valid, {}, spec.trap_epochs);

  trap.decoy_rate = decoy_selection_rate(trap.model, c.valid, c.roles);
  trap.valid_ce = mean_ce(trap.model, c.valid);
  return trap;
}

std::vector<LandscapePoint> landscape_scan(const model::Model& m, std::span<const Document> docs,
                                           std::span<const TokenRole> roles, int steps) {
  if (steps < 3) throw InvalidInput("landscape_scan: steps must be >= 3");
  std::vector<RationaleMasks> base, swapped;
  for (const auto& d : docs) {
    RationaleMasks mk = model::generate_masks(m, d);
    std::vector<Eigen::Index> strong, decoy;
    for (std::size_t t = 0; t < d.length(); ++t) {
      const auto& r = role_of(d, t, roles);
      if (matches(r, TokenKind::Aspect, 0)) strong.push_back(static_cast<Eigen::Index>(t));
      if (r.kind == TokenKind::Spurious) decoy.push_back(static_cast<Eigen::Index>(t));
    }
    RationaleMasks sw = mk;
    for (std::size_t i = 0; i < std::min(strong.size(), decoy.size()); ++i) {
      sw.weights.col(strong[i]) = mk.weights.col(decoy[i]);
      sw.weights.col(decoy[i]) = mk.weights.col(strong[i]);
    }
    base.push_back(std::move(mk));
    swapped.push_back(std::move(sw));
  }
  std::vector<LandscapePoint> curve;
  std::vector<RationaleMasks> mixed = base;
  for (int s = 0; s < steps; ++s) {
    const double alpha = double(s) / double(steps - 1);
    for (std::size_t i = 0; i < base.size(); ++i)
      mixed[i].weights = (1.0 - alpha) * base[i].weights + alpha * swapped[i].weights;
    curve.push_back({alpha, mean_ce(m, docs, mixed)});
  }
  return curve;
}

nlohmann::json TrialResult::to_json() const {
  return {{"method", method},
          {"seed", seed},
          {"degenerate", degenerate},
          {"escaped", escaped},
          {"strong_rate", strong_rate},
          {"decoy_rate", decoy_rate},
          {"valid_ce", valid_ce},
          {"trapped_strong_rate", trapped_strong_rate},
          {"trapped_ce", trapped_ce},
          {"rate_history", rate_history}};
}

TrialResult run_probe(const ProbeSpec& spec, const Trap& trap, training::Method method, std::uint64_t seed) {
  if (method == training::Method::Contra) throw InvalidInput("run_probe: method must be vanilla or 3stage");
  const auto& c = trap.corpus;
  TrialResult r;
  r.method = std::string(training::to_string(method));
  r.seed = seed;
  r.trapped_strong_rate = strong_selection_rate(trap.model, c.test, c.roles);
  r.trapped_ce = trap.valid_ce;

  const auto cfg = train_config(spec, seed, method);
  const auto data = training::make_train_data(c.train, c.valid);
  RateObserver obs(c.valid, c.roles);
  const auto run = method == training::Method::Vanilla ? training::continue_vanilla(trap.model, cfg, data, &obs)
                                                       : training::continue_3stage(trap.model, cfg, data, &obs);
  r.rate_history = std::move(obs.history);
  r.strong_rate = strong_selection_rate(run.best.model, c.test, c.roles);
  r.decoy_rate = decoy_selection_rate(run.best.model, c.test, c.roles);
  r.valid_ce = mean_ce(run.best.model, c.valid);
  r.escaped = r.strong_rate > spec.escape_threshold;
  return r;
}

nlohmann::json ProbeReport::summary_json() const {
  nlohmann::json j;
  j["spec"] = spec;
  j["degenerate"] = spec.degenerate();
  j["trials"] = trials.size();
  nlohmann::json ms = nlohmann::json::array();
  for (const auto& m : methods) {
    nlohmann::json at = nlohmann::json::object();
    for (std::size_t i = 0; i < spec.sensitivity_thresholds.size() && i < m.escape_rate_at.size(); ++i)
      at[fmt("%g", spec.sensitivity_thresholds[i])] = m.escape_rate_at[i];
    ms.push_back({{"method", m.method},
                  {"trials", m.trials},
                  {"escape_rate", m.escape_rate},
                  {"mean_final_ce", m.mean_final_ce},
                  {"mean_strong_rate", m.mean_strong_rate},
                  {"escape_rate_at_threshold", at}});
  }
  j["methods"] = ms;
  j["escape_gap"] = escape_gap;
  j["signature_fraction"] = signature_fraction;
  return j;
}

std::string ProbeReport::summary_table() const {
  std::string out;
  if (spec.degenerate())
    return "degenerate probe: p_strong == p_weak, so trap and optimum coincide and escape is undefined\n";
  out += "method   trials  escape_rate  mean_final_ce  mean_strong_rate";
  for (double t : spec.sensitivity_thresholds) out += "  escape@" + fmt("%.2f", t);
  out += "\n";
  for (const auto& m : methods) {
    char line[160];
    std::snprintf(line, sizeof line, "%-7s  %6zu  %11.3f  %13.4f  %16.3f", m.method.c_str(), m.trials,
                  m.escape_rate, m.mean_final_ce, m.mean_strong_rate);
    out += line;
    for (double e : m.escape_rate_at) out += fmt("  %12.3f", e);
    out += "\n";
  }
  out += "escape gap (3stage - vanilla): " + fmt("%+.3f", escape_gap) + "\n";
  out += "interlock signature CE(alpha=1) > CE(alpha=0): " + fmt("%.3f", signature_fraction) + " of seeds\n";
  return out;
}

ProbeReport run_experiment(const ProbeSpec& spec) {
  validate(spec);
  ProbeReport rep;
  rep.spec = spec;
  const std::array<training::Method, 2> methods{training::Method::Vanilla, training::Method::ThreeStage};
  if (spec.degenerate()) {
    for (auto method : methods)
      for (auto seed : spec.seeds) {
        TrialResult t;
        t.method = std::string(training::to_string(method));
        t.seed = seed;
        t.degenerate = true;
        rep.trials.push_back(t);
      }
    for (auto method : methods) {
      MethodSummary s;
      s.method = std::string(training::to_string(method));
      s.trials = spec.seeds.size();
      rep.methods.push_back(s);
    }
    return rep;
  }
  std::size_t signature = 0;
  std::vector<TrialResult> by_method[2];
  for (auto seed : spec.seeds) {
    const Trap trap = build_trap(spec, seed);
    auto curve = landscape_scan(trap.model, trap.corpus.valid, trap.corpus.roles, spec.landscape_steps);
    if (curve.back().ce > curve.front().ce) ++signature;
    rep.landscapes.push_back(std::move(curve));
    for (std::size_t m = 0; m < methods.size(); ++m) by_method[m].push_back(run_probe(spec, trap, methods[m], seed));
  }
  for (std::size_t m = 0; m < methods.size(); ++m) {
    MethodSummary s;
    s.method = std::string(training::to_string(methods[m]));
    s.trials = by_method[m].size();
    s.escape_rate_at.assign(spec.sensitivity_thresholds.size(), 0.0);
    for (const auto& t : by_method[m]) {
      s.escape_rate += t.escaped ? 1.0 : 0.0;
      s.mean_final_ce += t.valid_ce;
      s.mean_strong_rate += t.strong_rate;
      for (std::size_t i = 0; i < spec.sensitivity_thresholds.size(); ++i)
        s.escape_rate_at[i] += t.strong_rate > spec.sensitivity_thresholds[i] ? 1.0 : 0.0;
    }
    const double n = double(s.trials);
    s.escape_rate /= n;
    s.mean_final_ce /= n;
    s.mean_strong_rate /= n;
    for (double& e : s.escape_rate_at) e /= n;
    rep.methods.push_back(s);
    rep.trials.insert(rep.trials.end(), by_method[m].begin(), by_method[m].end());
  }
  rep.escape_gap = rep.methods[1].escape_rate - rep.methods[0].escape_rate;
  rep.signature_fraction = double(signature) / double(spec.seeds.size());
  return rep;
}

}  // namespace rationale::probe
