#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rationale/evaluation.hpp"
#include "rationale/grad_check.hpp"
#include "rationale/kernels.hpp"
#include "rationale/model.hpp"
#include "rationale/synthetic.hpp"
#include "rationale/training.hpp"

// Independent reference implementations and small fixtures shared by the
// unit tests and the acceptance binary.
namespace rationale::testkit {

// Literal double loop over anchors i, positives j and denominator terms l.
inline double contrastive_oracle(const Eigen::MatrixXd& z, const std::vector<int>& y, double tau) {
  const int n = static_cast<int>(y.size());
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    int positives = 0;
    for (int j = 0; j < n; ++j)
      if (j != i && y[j] == y[i]) ++positives;
    if (positives == 0) continue;
    double denom = 0.0;
    for (int l = 0; l < n; ++l)
      if (l != i) denom += std::exp(z.col(i).dot(z.col(l)) / tau);
    double inner = 0.0;
    for (int j = 0; j < n; ++j) {
      if (j == i || y[j] != y[i]) continue;
      inner += std::log(std::exp(z.col(i).dot(z.col(j)) / tau) / denom);
    }
    total += inner / positives;
  }
  return -total;
}

inline Eigen::MatrixXd random_unit_columns(int dim, int n, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::MatrixXd z(dim, n);
  for (int c = 0; c < n; ++c) {
    for (int r = 0; r < dim; ++r) z(r, c) = g(rng);
    z.col(c).normalize();
  }
  return z;
}

// F1 from std::set counts.
inline double f1_oracle(const std::vector<int>& sel, const std::vector<int>& gold) {
  const std::set<int> s(sel.begin(), sel.end()), g(gold.begin(), gold.end());
  if (s.empty() && g.empty()) return 1.0;
  if (s.empty() || g.empty()) return 0.0;
  int hit = 0;
  for (int t : s) hit += g.count(t) ? 1 : 0;
  if (hit == 0) return 0.0;
  const double p = static_cast<double>(hit) / static_cast<double>(s.size());
  const double r = static_cast<double>(hit) / static_cast<double>(g.size());
  return 2.0 * p * r / (p + r);
}

struct BruteForce {
  double best = -1.0;
  std::vector<int> permutation;  // permutation[r] = gold aspect
  std::vector<double> per_aspect;
};

// Recursive enumeration of every assignment; a later assignment replaces the
// incumbent only when strictly better, and assignments are visited in
// lexicographic order.
inline BruteForce brute_force_permutation(const std::vector<eval::HardSelection>& sel,
                                          const std::vector<std::vector<eval::TokenSet>>& gold) {
  const int k = static_cast<int>(gold.front().size());
  const double docs = static_cast<double>(sel.size());
  BruteForce out;
  std::vector<int> perm;
  std::vector<bool> used(static_cast<std::size_t>(k), false);
  std::function<void()> rec = [&] {
    if (static_cast<int>(perm.size()) == k) {
      std::vector<double> f(static_cast<std::size_t>(k), 0.0);
      for (int r = 0; r < k; ++r) {
        const auto g = static_cast<std::size_t>(perm[static_cast<std::size_t>(r)]);
        double sum = 0.0;
        for (std::size_t d = 0; d < sel.size(); ++d) sum += f1_oracle(sel[d].sets[static_cast<std::size_t>(r)], gold[d][g]);
        f[g] = sum / docs;
      }
      double mean = 0.0;
      for (double v : f) mean += v;
      mean /= k;
      if (mean > out.best) {
        out.best = mean;
        out.permutation = perm;
        out.per_aspect = f;
      }
      return;
    }
    for (int a = 0; a < k; ++a) {
      if (used[static_cast<std::size_t>(a)]) continue;
      used[static_cast<std::size_t>(a)] = true;
      perm.push_back(a);
      rec();
      perm.pop_back();
      used[static_cast<std::size_t>(a)] = false;
    }
  };
  rec();
  return out;
}

inline eval::TokenSet random_set(int length, double p, std::mt19937_64& rng) {
  std::bernoulli_distribution b(p);
  eval::TokenSet s;
  for (int t = 0; t < length; ++t)
    if (b(rng)) s.push_back(t);
  return s;
}

// A small corpus and matching config that train in well under a second.
inline corpus::SyntheticSpec tiny_spec(int aspects = 2, std::uint64_t seed = 7) {
  corpus::SyntheticSpec s;
  s.aspects = aspects;
  s.signal_words = 3;
  s.spurious_words = 3;
  s.noise_words = 20;
  s.tokens_per_aspect = 2;
  s.spurious_tokens = 1;
  s.document_length = 2 * aspects + 4;
  s.documents = 100;
  s.annotated = 20;
  s.embedding_dim = 6;
  s.seed = seed;
  return s;
}

inline training::TrainConfig tiny_config(training::Method method, model::Mode mode, int aspects = 2) {
  training::TrainConfig c;
  c.method = method;
  c.mode = mode;
  c.epochs = {2, 2, 2};
  c.learning_rate = 1e-2;
  c.batch_size = 16;
  c.aspects = aspects;
  c.hidden = 4;
  c.seed = 3;
  return c;
}

template <class A, class B>
bool bitwise_equal(const A& a, const B& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  for (Eigen::Index c = 0; c < a.cols(); ++c)
    for (Eigen::Index r = 0; r < a.rows(); ++r) {
      const double x = a(r, c), y = b(r, c);
      if (std::memcmp(&x, &y, sizeof x) != 0) return false;
    }
  return true;
}

// Whether every tensor in `group` is bitwise equal between two models.
inline bool group_equal(const model::Model& a, const model::Model& b, model::ParamGroup group) {
  std::vector<std::vector<double>> ta, tb;
  auto collect = [&](std::vector<std::vector<double>>& out) {
    return [&out, group](model::ParamGroup g, const std::string&, const auto& t) {
      if (g != group) return;
      out.emplace_back(t.data(), t.data() + t.size());
    };
  };
  model::for_each_tensor(a, collect(ta));
  model::for_each_tensor(b, collect(tb));
  if (ta.size() != tb.size()) return false;
  for (std::size_t i = 0; i < ta.size(); ++i)
    if (ta[i].size() != tb[i].size() || std::memcmp(ta[i].data(), tb[i].data(), ta[i].size() * sizeof(double)) != 0)
      return false;
  return true;
}

inline bool models_equal(const model::Model& a, const model::Model& b) {
  for (auto g : {model::ParamGroup::Embedding, model::ParamGroup::Generator, model::ParamGroup::Encoder,
                 model::ParamGroup::Heads})
    if (!group_equal(a, b, g)) return false;
  return a.mode() == b.mode() && a.mask_temperature == b.mask_temperature;
}

// A random small model, batch and objective for finite-difference checks.
struct GradInstance {
  model::Model model;
  std::vector<corpus::Document> docs;
  kernels::Objective objective;
};

inline GradInstance random_grad_instance(std::uint64_t seed, losses::StageRole role, double contrastive_tau) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> kd(1, 3), hd(2, 16), ld(1, 12), nd(2, 4), dd(2, 5);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  const int k = kd(rng), h = hd(rng), d = dd(rng), vocab = 12;
  const model::Mode mode = rng() % 2 ? model::Mode::Short : model::Mode::Long;
  Eigen::MatrixXd emb(vocab, d);
  for (Eigen::Index i = 0; i < emb.size(); ++i) emb.data()[i] = u(rng);
  GradInstance g;
  g.model = model::make_model(emb, k, h, mode, seed, 1.0);
  // Redraw everything, biases included, on the construction scale.
  std::uniform_real_distribution<double> w(-0.1, 0.1);
  model::for_each_tensor(g.model, [&](model::ParamGroup grp, const std::string&, auto& t) {
    if (grp == model::ParamGroup::Embedding) return;
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = w(rng);
  });
  const int n = nd(rng);
  std::uniform_int_distribution<int> tok(2, vocab - 1);
  for (int i = 0; i < n; ++i) {
    corpus::Document doc;
    const int len = ld(rng);
    for (int t = 0; t < len; ++t) {
      doc.tokens.push_back(tok(rng));
      doc.raw_tokens.push_back("w");
    }
    doc.overall_label = static_cast<int>(rng() % 2);
    g.docs.push_back(doc);
  }
  g.objective.role = role;
  g.objective.temperature = contrastive_tau;
  g.objective.weights = {1.0, 1.0, 1.0, 0.5, 0.4};
  return g;
}

// Full-model central differences against batch_gradients.
inline model::GradCheckResult check_instance(GradInstance& g, double epsilon, std::size_t per_slot,
                                             std::uint64_t seed) {
  const auto items = kernels::items_of(g.docs);
  kernels::Workspace ws;
  auto grads = model::Gradients::zeros_like(g.model);
  kernels::batch_gradients(g.model, items, g.objective, model::GradientScope{}, kernels::Execution::Serial, ws, grads);
  auto loss = [&] {
    kernels::Workspace w;
    return kernels::batch_loss(g.model, items, g.objective, kernels::Execution::Serial, w).total;
  };
  const auto slots = model::param_slots(g.model, grads);
  return model::grad_check(loss, slots, epsilon, per_slot, seed);
}

}  // namespace rationale::testkit
